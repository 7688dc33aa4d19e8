use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{build_windows, Label5, Record, SensorWindow};
use crate::error::{Error, Result};

/// Record indices on each side of the split, ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SensorWindow>,
    pub test: Vec<SensorWindow>,
    pub train_records: Vec<String>,
    pub test_records: Vec<String>,
    pub seed: u64,
}

/// Seeded record-level 80/20 split, stratified by the five-way label.
///
/// The test side gets `round(0.2 N)` records in total; per-class quotas are
/// `0.2 n_c` rounded down, with the remainder handed out by largest
/// fractional part (ties to the lower label).
pub fn split_records(labels: &[Label5], seed: u64) -> Result<RecordSplit> {
    let n = labels.len();
    if n < 5 {
        return Err(Error::Contract(format!(
            "splitting needs at least 5 records, got {n}"
        )));
    }
    let mut groups: Vec<(Label5, Vec<usize>)> = Label5::ALL
        .iter()
        .map(|&l| (l, (0..n).filter(|&i| labels[i] == l).collect::<Vec<_>>()))
        .filter(|(_, g)| !g.is_empty())
        .collect();
    if let Some((l, _)) = groups.iter().find(|(_, g)| g.len() < 2) {
        return Err(Error::Stratification(format!(
            "label {l} has a single record"
        )));
    }
    // Quotas in tenths: 0.2 n_c = 2 n_c / 10.
    let total = (2 * n + 5) / 10;
    let mut quota: Vec<usize> = groups.iter().map(|(_, g)| 2 * g.len() / 10).collect();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by_key(|&k| std::cmp::Reverse((2 * groups[k].1.len()) % 10));
    let mut left = total - quota.iter().sum::<usize>();
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if quota[k] < groups[k].1.len() - 1 {
            quota[k] += 1;
            left -= 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for ((_, g), q) in groups.iter_mut().zip(quota) {
        g.shuffle(&mut rng);
        test.extend_from_slice(&g[..q]);
        train.extend_from_slice(&g[q..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(RecordSplit { train, test })
}

/// Splits records, then cuts each side into windows at `stride`.
pub fn split_dataset(records: &[Record], stride: usize, seed: u64) -> Result<DatasetSplit> {
    let labels: Vec<Label5> = records.iter().map(|r| r.label5).collect();
    let s = split_records(&labels, seed)?;
    let side = |idx: &[usize]| -> Result<(Vec<SensorWindow>, Vec<String>)> {
        let mut w = Vec::new();
        for &i in idx {
            w.extend(build_windows(&records[i], stride)?);
        }
        Ok((w, idx.iter().map(|&i| records[i].id.clone()).collect()))
    };
    let (train, train_records) = side(&s.train)?;
    let (test, test_records) = side(&s.test)?;
    Ok(DatasetSplit {
        train,
        test,
        train_records,
        test_records,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(per_class: usize) -> Vec<Label5> {
        Label5::ALL
            .iter()
            .flat_map(|&l| std::iter::repeat(l).take(per_class))
            .collect()
    }

    #[test]
    fn two_per_class() {
        let s = split_records(&labels(2), 3).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
        assert_eq!(s, split_records(&labels(2), 3).unwrap());
    }

    #[test]
    fn full_dataset_size() {
        let mut l = Vec::new();
        for (k, &c) in [858usize, 322, 321, 323, 322].iter().enumerate() {
            l.extend(std::iter::repeat(Label5::ALL[k]).take(c));
        }
        assert_eq!(l.len(), 2146);
        let s = split_records(&l, 0).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (1717, 429));
    }

    #[test]
    fn singleton_class_rejected() {
        let mut l = labels(2);
        l.push(Label5::ALL[0]);
        l.retain(|&x| x != Label5::IncidentalL6);
        l.push(Label5::IncidentalL6);
        assert!(matches!(
            split_records(&l, 0),
            Err(Error::Stratification(_))
        ));
        assert!(matches!(
            split_records(&labels(2)[..4], 0),
            Err(Error::Contract(_))
        ));
    }
}
