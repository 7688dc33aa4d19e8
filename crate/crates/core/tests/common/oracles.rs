//! Independent reference implementations shared by the per-module suites
//! and the acceptance run.

use cdml_core::cluster::{ClassClusters, ClusterId, ClusterModel};
use cdml_core::data::Label3;
use cdml_core::losses::TripletIndices;
use cdml_core::stream::{DetectedEvent, EventScore, Segment};
use cdml_core::Tensor64 as T64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> T64 {
    T64::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

pub fn dot(a: &T64, b: &T64) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

pub fn naive_conv1d(x: &T64, w: &T64, b: &T64, stride: usize) -> T64 {
    let (c_in, len) = (x.shape()[0], x.shape()[1]);
    let (c_out, k) = (w.shape()[0], w.shape()[2]);
    let l_out = (len - k) / stride + 1;
    let mut y = T64::zeros(&[c_out, l_out]);
    for o in 0..c_out {
        for t in 0..l_out {
            let mut s = b.data()[o];
            for c in 0..c_in {
                for kk in 0..k {
                    s += w.data()[(o * c_in + c) * k + kk] * x.data()[c * len + t * stride + kk];
                }
            }
            y.data_mut()[o * l_out + t] = s;
        }
    }
    y
}

pub fn naive_conv2d(x: &T64, w: &T64, b: &T64, stride: usize) -> T64 {
    let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let ho = (h - kh) / stride + 1;
    let wo = (wd - kw) / stride + 1;
    let mut y = T64::zeros(&[c_out, ho, wo]);
    for o in 0..c_out {
        for i in 0..ho {
            for j in 0..wo {
                let mut s = b.data()[o];
                for c in 0..c_in {
                    for u in 0..kh {
                        for v in 0..kw {
                            let wi = ((o * c_in + c) * kh + u) * kw + v;
                            let xi = (c * h + i * stride + u) * wd + j * stride + v;
                            s += w.data()[wi] * x.data()[xi];
                        }
                    }
                }
                y.data_mut()[(o * ho + i) * wo + j] = s;
            }
        }
    }
    y
}

pub fn naive_maxpool(x: &T64, p: usize) -> T64 {
    match x.rank() {
        2 => {
            let (c, l) = (x.shape()[0], x.shape()[1]);
            let lo = l / p;
            T64::from_fn(&[c, lo], |i| {
                let (ch, t) = (i / lo, i % lo);
                (0..p)
                    .map(|k| x.data()[ch * l + t * p + k])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
        }
        _ => {
            let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let (ho, wo) = (h / p, w / p);
            T64::from_fn(&[c, ho, wo], |idx| {
                let (ch, r) = (idx / (ho * wo), idx % (ho * wo));
                let (i, j) = (r / wo, r % wo);
                let mut m = f64::NEG_INFINITY;
                for u in 0..p {
                    for v in 0..p {
                        m = m.max(x.data()[(ch * h + i * p + u) * w + j * p + v]);
                    }
                }
                m
            })
        }
    }
}

pub fn batch(rng: &mut ChaCha8Rng, n: usize, d: usize, classes: usize) -> (T64, Vec<usize>) {
    let e = T64::from_fn(&[n, d], |_| rng.gen_range(-1.0..1.0));
    let labels = (0..n)
        .map(|i| {
            if i < classes {
                i
            } else {
                rng.gen_range(0..classes)
            }
        })
        .collect();
    (e, labels)
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Brute-force miner: enumerate every valid triplet, then apply the
/// selection rules by sorting candidate keys.
pub fn brute_force_miner(e: &T64, labels: &[usize], margin: f64) -> Vec<TripletIndices> {
    let n = labels.len();
    let mut out = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if a == p || labels[a] != labels[p] {
                continue;
            }
            let dap = dist(e.row(a), e.row(p));
            let mut semi: Vec<(f64, usize)> = Vec::new();
            let mut viol: Vec<(f64, usize)> = Vec::new();
            for neg in 0..n {
                if labels[neg] == labels[a] {
                    continue;
                }
                let dan = dist(e.row(a), e.row(neg));
                if dap < dan && dan < dap + margin {
                    semi.push((dan, neg));
                }
                if dan <= dap {
                    viol.push((-dan, neg));
                }
            }
            semi.sort_by(|x, y| x.partial_cmp(y).unwrap());
            viol.sort_by(|x, y| x.partial_cmp(y).unwrap());
            if let Some(&(_, neg)) = semi.first().or(viol.first()) {
                out.push(TripletIndices {
                    anchor: a,
                    positive: p,
                    negative: neg,
                });
            }
        }
    }
    out
}

pub fn random_clusters(
    rng: &mut ChaCha8Rng,
    classes: usize,
    k: usize,
    d: usize,
) -> ClusterModel<f64> {
    ClusterModel {
        classes: (0..classes)
            .map(|c| ClassClusters {
                class: c,
                centroids: (0..k)
                    .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect(),
            })
            .collect(),
        assignments: vec![],
        variance: 1.0,
    }
}

/// `{−ln(exp(−‖r−μ(r)‖²/(2σ²) − α) / Σ_{c≠C(r)} Σ_k exp(−‖r−μ_k^c‖²/(2σ²)))}_+`, averaged.
pub fn magnet_transcription(
    e: &T64,
    labels: &[usize],
    own: &[ClusterId],
    m: &ClusterModel<f64>,
    alpha: f64,
    var: f64,
) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for i in 0..n {
        let r = e.row(i);
        let mu = m.centroid(own[i]).unwrap();
        let num = (-dist(r, mu).powi(2) / (2.0 * var) - alpha).exp();
        let mut den = 0.0;
        for cc in &m.classes {
            if cc.class == labels[i] {
                continue;
            }
            for c in &cc.centroids {
                den += (-dist(r, c).powi(2) / (2.0 * var)).exp();
            }
        }
        total += (-(num / den).ln()).max(0.0);
    }
    total / n as f64
}

/// Debounce transcribed directly from its rule, with look-back windows
/// instead of counters.
pub fn debounce_oracle(classes: &[Label3], hold: usize) -> Vec<(Label3, usize, usize)> {
    let mut out = Vec::new();
    let mut open: Option<(usize, Label3)> = None;
    let majority = |a: usize, b: usize| {
        let c2 = classes[a..b]
            .iter()
            .filter(|&&c| c == Label3::Intentional)
            .count();
        let c3 = classes[a..b]
            .iter()
            .filter(|&&c| c == Label3::Collision)
            .count();
        if c2 > c3 {
            Label3::Intentional
        } else {
            Label3::Collision
        }
    };
    for i in 0..classes.len() {
        if i + 1 < hold {
            continue;
        }
        let tail = &classes[i + 1 - hold..=i];
        match open {
            None => {
                if tail[0].is_contact() && tail.iter().all(|&c| c == tail[0]) {
                    open = Some((i, tail[0]));
                }
            }
            Some((o, cur)) => {
                if i + 1 - hold <= o {
                    continue;
                }
                if tail.iter().all(|c| !c.is_contact()) {
                    out.push((majority(o, i + 1 - hold), o, i + 1 - hold));
                    open = None;
                } else if tail[0].is_contact()
                    && tail[0] != cur
                    && tail.iter().all(|&c| c == tail[0])
                {
                    out.push((majority(o, i + 1 - hold), o, i + 1 - hold));
                    open = Some((i + 1 - hold, tail[0]));
                }
            }
        }
    }
    if let Some((o, _)) = open {
        out.push((majority(o, classes.len()), o, classes.len()));
    }
    out
}

/// Scoring by per-frame labels rather than interval overlap.
pub fn score_oracle(
    events: &[DetectedEvent],
    segs: &[Segment],
    first: usize,
    end: usize,
) -> EventScore {
    // Predicted label per frame, tagged with the event it came from.
    let mut pred: Vec<Option<(Label3, Option<usize>)>> = vec![None; end];
    for f in first..end {
        pred[f] = Some((Label3::NonContact, None));
    }
    for (k, e) in events.iter().enumerate() {
        for f in e.start..e.end.min(end) {
            pred[f] = Some((e.class3, Some(k)));
        }
    }
    let class_at = |f: usize| pred[f].map(|p| p.0);
    let mut truth: Vec<Option<Label3>> = vec![None; end];
    for g in segs {
        for f in g.start..g.end {
            truth[f] = Some(g.class3);
        }
    }
    let mut s = EventScore::default();
    for g in segs {
        let k = g.class3.index();
        s.failures[k].total += 1;
        if !(g.start..g.end).any(|f| class_at(f) == Some(g.class3)) {
            s.failures[k].count += 1;
        }
        if g.class3.is_contact() {
            s.contact_failures.total += 1;
            if !(g.start..g.end).any(|f| class_at(f).is_some_and(Label3::is_contact)) {
                s.contact_failures.count += 1;
            }
        }
    }
    // Maximal runs of equal tags are the predicted spans.
    let mut f = 0;
    while f < end {
        let Some(tag) = pred[f] else {
            f += 1;
            continue;
        };
        let mut g = f;
        while g < end && pred[g] == Some(tag) {
            g += 1;
        }
        let c = tag.0;
        s.false_alarms[c.index()].total += 1;
        if !(f..g).any(|x| truth[x] == Some(c)) {
            s.false_alarms[c.index()].count += 1;
        }
        f = g;
    }
    s
}
