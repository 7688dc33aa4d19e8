//! Offline metrics: classification accuracy and loss, confusion matrices,
//! embedding-space k-NN, silhouette scores, PCA exports and the comparison
//! table across architectures and objectives.

mod table;

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

pub use table::{compare_table, CellSummary, CompareTable};

use crate::cluster::{pca_fit, pca_project};
use crate::data::{Label3, Label5, SensorWindow};
use crate::error::{Error, Result};
use crate::losses::cross_entropy;
use crate::nn::{Mode, NetworkModel, NUM_CLASSES};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Counts indexed `[predicted][true]`, classes in C1, C2, C3 order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix3 {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix3 {
    pub fn from_predictions(predicted: &[usize], truth: &[usize]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::dim(
                "confusion predictions vs labels",
                truth.len(),
                predicted.len(),
            ));
        }
        let mut m = Self::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            if p >= NUM_CLASSES || t >= NUM_CLASSES {
                return Err(Error::Contract(format!(
                    "class index out of range: predicted {p}, true {t}"
                )));
            }
            m.counts[p][t] += 1;
        }
        Ok(m)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }

    /// Number of samples whose true class is `class`.
    pub fn true_count(&self, class: usize) -> u64 {
        (0..NUM_CLASSES).map(|p| self.counts[p][class]).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("predicted\\true,C1,C2,C3\n");
        for (p, row) in self.counts.iter().enumerate() {
            s.push_str(&format!("C{},{},{},{}\n", p + 1, row[0], row[1], row[2]));
        }
        s
    }
}

impl fmt::Display for ConfusionMatrix3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rows: predicted, columns: true")?;
        writeln!(f, "{:>6}{:>8}{:>8}{:>8}", "", "C1", "C2", "C3")?;
        for (p, row) in self.counts.iter().enumerate() {
            writeln!(
                f,
                "{:>6}{:>8}{:>8}{:>8}",
                format!("C{}", p + 1),
                row[0],
                row[1],
                row[2]
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Mean cross-entropy of the predicted distribution.
    pub loss: f64,
    pub confusion: ConfusionMatrix3,
    pub predictions: Vec<usize>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Embeddings of every input as rows of one `[n, dim]` tensor (inference mode).
pub fn embed_all<T: Scalar>(model: &NetworkModel<T>, inputs: &[Tensor<T>]) -> Result<Tensor<T>> {
    let dim = model.output_dim();
    let mut data = Vec::with_capacity(inputs.len() * dim);
    for x in inputs {
        data.extend_from_slice(model.forward(x, Mode::Infer)?.data());
    }
    Tensor::new(vec![inputs.len(), dim], data)
}

/// Classifies precomputed embeddings (rows of `embeddings`).
pub fn evaluate_embeddings<T: Scalar>(
    classifier: &NetworkModel<T>,
    embeddings: &Tensor<T>,
    labels: &[usize],
) -> Result<Evaluation> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::Contract("evaluation needs a nonempty set".into()));
    }
    if embeddings.rank() != 2 || embeddings.shape()[0] != n {
        return Err(Error::dim(
            "evaluation embedding rows",
            n,
            embeddings.shape().first().copied().unwrap_or(0),
        ));
    }
    let dim = embeddings.shape()[1];
    let mut predictions = Vec::with_capacity(n);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let x = Tensor::new(vec![dim], embeddings.row(i).to_vec())?;
        let probs = classifier.forward(&x, Mode::Infer)?;
        let (l, _) = cross_entropy(probs.data(), y)?;
        loss += l.to_f64_lossy();
        predictions.push(argmax(probs.data()));
    }
    let confusion = ConfusionMatrix3::from_predictions(&predictions, labels)?;
    Ok(Evaluation {
        accuracy: confusion.accuracy(),
        loss: loss / n as f64,
        confusion,
        predictions,
    })
}

/// Runs the embedding network and classifier over `inputs`.
pub fn evaluate<T: Scalar>(
    embedding: &NetworkModel<T>,
    classifier: &NetworkModel<T>,
    inputs: &[Tensor<T>],
    labels: &[usize],
) -> Result<Evaluation> {
    if inputs.len() != labels.len() {
        return Err(Error::dim(
            "evaluation inputs vs labels",
            labels.len(),
            inputs.len(),
        ));
    }
    evaluate_embeddings(classifier, &embed_all(embedding, inputs)?, labels)
}

/// Majority vote among the `k` nearest training embeddings (Euclidean).
/// Vote ties go to the tied class whose nearest member is closest.
pub fn knn_predict<T: Scalar>(
    train: &Tensor<T>,
    train_labels: &[usize],
    query: &[T],
    k: usize,
) -> Result<usize> {
    let n = train_labels.len();
    if k == 0 || n == 0 {
        return Err(Error::Contract(
            "k-NN needs k >= 1 and a nonempty reference set".into(),
        ));
    }
    if train.shape()[0] != n || train.shape()[1] != query.len() {
        return Err(Error::dim(
            "k-NN reference dimension",
            query.len(),
            train.shape()[1],
        ));
    }
    let mut d: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let s: T = train
                .row(i)
                .iter()
                .zip(query)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            (s.to_f64_lossy(), i)
        })
        .collect();
    d.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let mut votes = [0usize; NUM_CLASSES];
    let mut first = [usize::MAX; NUM_CLASSES];
    for (rank, &(_, i)) in d.iter().take(k).enumerate() {
        let c = train_labels[i];
        votes[c] += 1;
        first[c] = first[c].min(rank);
    }
    let top = *votes.iter().max().expect("three classes");
    Ok((0..NUM_CLASSES)
        .filter(|&c| votes[c] == top)
        .min_by_key(|&c| first[c])
        .expect("some class has the top vote"))
}

pub fn knn_accuracy<T: Scalar>(
    train: &Tensor<T>,
    train_labels: &[usize],
    test: &Tensor<T>,
    test_labels: &[usize],
    k: usize,
) -> Result<f64> {
    if test_labels.is_empty() {
        return Err(Error::Contract(
            "k-NN evaluation needs a nonempty test set".into(),
        ));
    }
    let mut hits = 0;
    for (i, &y) in test_labels.iter().enumerate() {
        if knn_predict(train, train_labels, test.row(i), k)? == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / test_labels.len() as f64)
}

/// Mean silhouette coefficient of `points` under `labels` (Euclidean).
/// Points in singleton clusters score 0. Needs at least two labels present.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let n = points.len();
    if n != labels.len() {
        return Err(Error::dim("silhouette labels", n, labels.len()));
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let sizes: Vec<usize> = (0..k)
        .map(|c| labels.iter().filter(|&&l| l == c).count())
        .collect();
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::Contract(
            "silhouette needs at least two clusters".into(),
        ));
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if i != j {
                let d: f64 = points[i]
                    .iter()
                    .zip(&points[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                sums[labels[j]] += d;
            }
        }
        let own = labels[i];
        if sizes[own] < 2 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedWindow {
    pub window_id: String,
    pub coords: Vec<f64>,
    pub label3: Label3,
    pub label5: Label5,
}

/// Embeds `windows` (already normalized) and projects the embeddings onto
/// their top `components` principal directions.
pub fn export_embeddings<T: Scalar>(
    model: &NetworkModel<T>,
    windows: &[SensorWindow],
    components: usize,
) -> Result<Vec<ProjectedWindow>> {
    let inputs: Vec<Tensor<T>> = windows.iter().map(SensorWindow::to_tensor).collect();
    let emb = embed_all(model, &inputs)?.cast::<f64>();
    let pca = pca_fit(&emb, components)?;
    windows
        .iter()
        .enumerate()
        .map(|(i, w)| {
            Ok(ProjectedWindow {
                window_id: w.id.clone(),
                coords: pca_project(&pca, emb.row(i))?,
                label3: w.label3,
                label5: w.label5,
            })
        })
        .collect()
}

/// Silhouette of a projection under its three-way labels.
pub fn projection_silhouette(rows: &[ProjectedWindow]) -> Result<f64> {
    let pts: Vec<Vec<f64>> = rows.iter().map(|r| r.coords.clone()).collect();
    let labels: Vec<usize> = rows.iter().map(|r| r.label3.index()).collect();
    silhouette(&pts, &labels)
}

/// CSV with columns `window_id,pc1..pcM,label3,label5`.
pub fn write_projection<W: Write>(rows: &[ProjectedWindow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let m = rows.first().map_or(0, |r| r.coords.len());
    let mut header = vec!["window_id".to_string()];
    header.extend((1..=m).map(|i| format!("pc{i}")));
    header.extend(["label3".to_string(), "label5".to_string()]);
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.window_id.clone()];
        rec.extend(r.coords.iter().map(|v| v.to_string()));
        rec.push(r.label3.as_str().to_string());
        rec.push(r.label5.as_str().to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
