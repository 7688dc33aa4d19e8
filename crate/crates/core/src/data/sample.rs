use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Index pairs into a window list with their targets (true = same class).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairBatch {
    pub pairs: Vec<(usize, usize)>,
    pub similar: Vec<bool>,
    /// Some similar pair had to reuse a sample because its class had one member.
    pub with_replacement: bool,
}

/// `classes × per_class` window indices, grouped by class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PkBatch {
    pub indices: Vec<usize>,
    pub classes: Vec<usize>,
    /// Some class had fewer than `per_class` members and was sampled with replacement.
    pub with_replacement: bool,
}

fn by_class(labels: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes
        .into_iter()
        .map(|c| (c, (0..labels.len()).filter(|&i| labels[i] == c).collect()))
        .collect()
}

/// `n` pairs, `ceil(n/2)` similar and `floor(n/2)` dissimilar, in shuffled order.
pub fn sample_pairs(labels: &[usize], n: usize, seed: u64) -> Result<PairBatch> {
    let groups = by_class(labels);
    if groups.len() < 2 {
        return Err(Error::Contract(
            "pair sampling needs at least two classes".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_similar = n - n / 2;
    let mut with_replacement = false;
    let mut out: Vec<((usize, usize), bool)> = Vec::with_capacity(n);
    for _ in 0..n_similar {
        let (_, g) = &groups[rng.gen_range(0..groups.len())];
        if g.len() < 2 {
            with_replacement = true;
            out.push(((g[0], g[0]), true));
        } else {
            let ij = sample(&mut rng, g.len(), 2);
            out.push(((g[ij.index(0)], g[ij.index(1)]), true));
        }
    }
    for _ in n_similar..n {
        let cs = sample(&mut rng, groups.len(), 2);
        let (ga, gb) = (&groups[cs.index(0)].1, &groups[cs.index(1)].1);
        out.push((
            (
                ga[rng.gen_range(0..ga.len())],
                gb[rng.gen_range(0..gb.len())],
            ),
            false,
        ));
    }
    out.shuffle(&mut rng);
    Ok(PairBatch {
        pairs: out.iter().map(|p| p.0).collect(),
        similar: out.iter().map(|p| p.1).collect(),
        with_replacement,
    })
}

/// `p` classes (all of them when exactly `p` exist) with `per_class` windows
/// each, drawn without replacement where the class is large enough.
pub fn sample_pk_batch(labels: &[usize], p: usize, per_class: usize, seed: u64) -> Result<PkBatch> {
    if per_class < 2 {
        return Err(Error::Contract(format!(
            "triplet batches need at least 2 samples per class, got {per_class}"
        )));
    }
    let groups = by_class(labels);
    if p == 0 || groups.len() < p {
        return Err(Error::Contract(format!(
            "requested {p} classes, {} available",
            groups.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = sample(&mut rng, groups.len(), p).into_vec();
    chosen.sort_unstable();
    let mut indices = Vec::with_capacity(p * per_class);
    let mut with_replacement = false;
    for &k in &chosen {
        let g = &groups[k].1;
        if g.len() >= per_class {
            indices.extend(
                sample(&mut rng, g.len(), per_class)
                    .into_iter()
                    .map(|i| g[i]),
            );
        } else {
            with_replacement = true;
            indices.extend((0..per_class).map(|_| g[rng.gen_range(0..g.len())]));
        }
    }
    Ok(PkBatch {
        indices,
        classes: chosen.iter().map(|&k| groups[k].0).collect(),
        with_replacement,
    })
}
