//! Measurement tools: proxy A-distance, accuracy/confidence versus shift,
//! and discrepancy between consecutive intermediate domains.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{rotate, split_indices, LabeledSet, RotationSpec};
use crate::error::{invalid, Error, Result};
use crate::model::{train_source, Classifier, TrainConfig};
use crate::par;
use crate::seeds::derive_seed;
use crate::selection::{score_targets, IntermediateDomain};

/// Hidden width of the domain classifier behind the proxy A-distance.
pub const PROBE_HIDDEN: usize = 16;
const MIN_SET: usize = 4;

/// Training setup of the fixed `[d, 16, 2]` domain classifier.
pub fn probe_config(seed: u64) -> TrainConfig {
    TrainConfig {
        eta0: 0.1,
        iterations: 300,
        batch_labeled: 64,
        seed,
        ..TrainConfig::default()
    }
}

fn lexicographic(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Ordering {
    a.nrows().cmp(&b.nrows()).then_with(|| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// `clamp(2 (1 - 2 err), 0, 2)` where `err` is the holdout error of a small
/// MLP trained to tell `set_a` from `set_b`.
///
/// The larger set is subsampled to the size of the smaller, each set is split
/// in half for training and holdout, and inputs are standardized with the
/// training statistics. The pair is put in a canonical order first, so the
/// value does not depend on argument order.
pub fn proxy_a_distance(set_a: ArrayView2<'_, f64>, set_b: ArrayView2<'_, f64>, cfg: &TrainConfig) -> Result<f64> {
    if set_a.nrows() < MIN_SET || set_b.nrows() < MIN_SET {
        return Err(invalid!(
            "proxy A-distance needs at least {MIN_SET} samples per set, got {} and {}",
            set_a.nrows(),
            set_b.nrows()
        ));
    }
    if set_a.ncols() != set_b.ncols() {
        return Err(invalid!("sets have different dimensions"));
    }
    let (first, second) = if lexicographic(set_a, set_b) == Ordering::Greater {
        (set_b, set_a)
    } else {
        (set_a, set_b)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = first.nrows().min(second.nrows());
    let mut pick = |n: usize| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        idx.truncate(m);
        idx
    };
    let ia = pick(first.nrows());
    let ib = pick(second.nrows());
    let half = m / 2;
    let d = first.ncols();

    let stack = |rows_a: &[usize], rows_b: &[usize]| -> (Array2<f64>, Vec<usize>) {
        let a = first.select(Axis(0), rows_a);
        let b = second.select(Axis(0), rows_b);
        let x = ndarray::concatenate(Axis(0), &[a.view(), b.view()]).expect("same width");
        let y = std::iter::repeat_n(0, rows_a.len())
            .chain(std::iter::repeat_n(1, rows_b.len()))
            .collect();
        (x, y)
    };
    let (mut train_x, train_y) = stack(&ia[..half], &ib[..half]);
    let (mut hold_x, hold_y) = stack(&ia[half..], &ib[half..]);

    let mean = train_x.mean_axis(Axis(0)).expect("non-empty");
    let std = train_x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    for x in [&mut train_x, &mut hold_x] {
        *x -= &mean;
        *x /= &std;
    }

    let train = LabeledSet::new(train_x, train_y, 2)?;
    let probe = Classifier::new(&[d, PROBE_HIDDEN, 2], cfg.seed)?;
    let probe = train_source(probe, &train, cfg)?;
    let error = 1.0 - probe.accuracy(hold_x.view(), &hold_y)?;
    Ok((2.0 * (1.0 - 2.0 * error)).clamp(0.0, 2.0))
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties. Returns 0 when
/// either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    let rx = ranks(x);
    let ry = ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Settings for [`shift_study`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftStudyConfig {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    /// Fraction of the base set used as the source domain.
    pub source_fraction: f64,
    /// Fraction of the source kept out of training for the holdout accuracy.
    pub holdout_fraction: f64,
    /// Lower edge of bucket 0, in degrees.
    pub bucket_start: f64,
    pub seed: u64,
}

impl Default for ShiftStudyConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            train: TrainConfig {
                eta0: 0.05,
                iterations: 300,
                ..TrainConfig::default()
            },
            source_fraction: 0.5,
            holdout_fraction: 0.2,
            bucket_start: 0.0,
            seed: 0,
        }
    }
}

/// Per-bucket measurements against a fixed source model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftCurve {
    pub r: Vec<usize>,
    pub angle_lo: Vec<f64>,
    pub angle_hi: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub mean_max_prob: Vec<f64>,
    pub a_distance: Vec<f64>,
    pub source_holdout_accuracy: f64,
}

impl ShiftCurve {
    /// `r,accuracy,mean_maxprob,a_dis` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("r,accuracy,mean_maxprob,a_dis\n");
        for i in 0..self.r.len() {
            out.push_str(&format!(
                "{},{:?},{:?},{:?}\n",
                self.r[i], self.accuracy[i], self.mean_max_prob[i], self.a_distance[i]
            ));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Splits `base` into source and target halves, trains a source model on the
/// rotated source, then for every bucket `r` rotates the target by angles in
/// `[start + r w, start + (r + 1) w]` and records accuracy, mean maximum
/// probability and proxy A-distance to the rotated source (input space).
pub fn shift_study(
    base: &LabeledSet,
    source_spec: &RotationSpec,
    bucket_width: f64,
    num_buckets: usize,
    cfg: &ShiftStudyConfig,
) -> Result<ShiftCurve> {
    if num_buckets == 0 || !(bucket_width >= 0.0) {
        return Err(invalid!("need at least one bucket and a non-negative width"));
    }
    let (src_idx, tgt_idx) = split_indices(base.len(), cfg.source_fraction, derive_seed(cfg.seed, "shift-split", 0))?;
    let source = rotate(&base.subset(&src_idx)?, source_spec)?;
    let target = base.subset(&tgt_idx)?;
    let (train_idx, hold_idx) = split_indices(
        source.len(),
        1.0 - cfg.holdout_fraction,
        derive_seed(cfg.seed, "shift-holdout", 0),
    )?;
    let source_train = source.subset(&train_idx)?;
    let source_hold = source.subset(&hold_idx)?;

    let mut dims = vec![base.dim()];
    dims.extend(&cfg.hidden);
    dims.push(base.num_classes());
    let model = Classifier::new(&dims, derive_seed(cfg.seed, "shift-init", 0))?;
    let train_cfg = TrainConfig {
        seed: derive_seed(cfg.seed, "shift-train", 0),
        ..cfg.train.clone()
    };
    let model = train_source(model, &source_train, &train_cfg)?;
    let source_holdout_accuracy = model.accuracy(source_hold.features(), source_hold.labels())?;

    let rows = par::map_range(num_buckets, |r| -> Result<(f64, f64, f64, f64, f64)> {
        let lo = cfg.bucket_start + r as f64 * bucket_width;
        let hi = lo + bucket_width;
        let spec = RotationSpec::new(lo, hi, derive_seed(cfg.seed, "shift-bucket", r as u64))?;
        let bucket = rotate(&target, &spec)?;
        let probs = model.predict_proba(bucket.features())?;
        let accuracy = model.accuracy(bucket.features(), bucket.labels())?;
        let scores = score_targets(probs.view())?;
        let mean_max = scores.scores().iter().sum::<f64>() / scores.len() as f64;
        let probe = probe_config(derive_seed(cfg.seed, "shift-probe", r as u64));
        let a_dis = proxy_a_distance(source.features(), bucket.features(), &probe)?;
        Ok((lo, hi, accuracy, mean_max, a_dis))
    });
    let mut curve = ShiftCurve {
        r: (0..num_buckets).collect(),
        angle_lo: Vec::new(),
        angle_hi: Vec::new(),
        accuracy: Vec::new(),
        mean_max_prob: Vec::new(),
        a_distance: Vec::new(),
        source_holdout_accuracy,
    };
    for row in rows {
        let (lo, hi, acc, mm, ad) = row?;
        curve.angle_lo.push(lo);
        curve.angle_hi.push(hi);
        curve.accuracy.push(acc);
        curve.mean_max_prob.push(mm);
        curve.a_distance.push(ad);
    }
    Ok(curve)
}

/// Rows of the materialized intermediate domain, in the model's feature space.
fn domain_features(
    source_features: ArrayView2<'_, f64>,
    target_features: ArrayView2<'_, f64>,
    domain: &IntermediateDomain,
) -> Array2<f64> {
    let s = source_features.select(Axis(0), &domain.source_indices());
    let t = target_features.select(Axis(0), &domain.target_indices());
    ndarray::concatenate(Axis(0), &[s.view(), t.view()]).expect("same width")
}

/// Proxy A-distance between two materialized domains in `model`'s feature space.
pub fn step_discrepancy(
    model: &Classifier,
    previous: &IntermediateDomain,
    current: &IntermediateDomain,
    source: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    seed: u64,
) -> Result<f64> {
    let fs = model.features(source)?;
    let ft = model.features(target)?;
    let prev = domain_features(fs.view(), ft.view(), previous);
    let cur = domain_features(fs.view(), ft.view(), current);
    proxy_a_distance(prev.view(), cur.view(), &probe_config(seed))
}

/// Probe seed of step `m` (1-based).
pub fn step_seed(seed: u64, m: usize) -> u64 {
    derive_seed(seed, "consecutive", m as u64)
}

/// Proxy A-distance between `M_{m-1}` and `M_m` for `m = 1..=M`, measured in
/// the feature space of the stage-`m` model.
///
/// `models[m - 1]` is the model trained on `domains[m]`; `domains[0]` is the
/// all-source stage.
pub fn consecutive_discrepancy(
    models: &[Classifier],
    domains: &[IntermediateDomain],
    source: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    seed: u64,
) -> Result<Vec<f64>> {
    if domains.len() != models.len() + 1 {
        return Err(invalid!("{} domains for {} stage models", domains.len(), models.len()));
    }
    par::map_range(models.len(), |i| {
        step_discrepancy(
            &models[i],
            &domains[i],
            &domains[i + 1],
            source,
            target,
            step_seed(seed, i + 1),
        )
    })
    .into_iter()
    .collect()
}

/// Proxy A-distance between the full source and target sets under each model.
pub fn direct_discrepancy(
    models: &[Classifier],
    source: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    seed: u64,
) -> Result<Vec<f64>> {
    par::map_range(models.len(), |i| {
        let fs = models[i].features(source)?;
        let ft = models[i].features(target)?;
        proxy_a_distance(
            fs.view(),
            ft.view(),
            &probe_config(derive_seed(seed, "direct", i as u64)),
        )
    })
    .into_iter()
    .collect()
}

/// `m,a_dis` rows, `m` starting at 1.
pub fn write_consecutive_csv(values: &[f64], path: &Path) -> Result<()> {
    let mut out = String::from("m,a_dis\n");
    for (i, v) in values.iter().enumerate() {
        out.push_str(&format!("{},{v:?}\n", i + 1));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Mean of a slice; NaN when empty.
pub fn mean(values: &[f64]) -> f64 {
    Array1::from(values.to_vec()).mean().unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_blobs, make_two_moons};

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), 0.0);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn same_distribution_is_close() {
        let a = make_two_moons(400, 0.1, 1).unwrap();
        let b = make_two_moons(400, 0.1, 2).unwrap();
        let v = proxy_a_distance(a.features(), b.features(), &probe_config(0)).unwrap();
        assert!(v <= 0.3, "{v}");
    }

    #[test]
    fn separated_gaussians_are_far() {
        let a = make_blobs(&[vec![0.0, 0.0]], 200, 1.0, 1).unwrap();
        let b = make_blobs(&[vec![20.0, 0.0]], 200, 1.0, 2).unwrap();
        let v = proxy_a_distance(a.features(), b.features(), &probe_config(0)).unwrap();
        assert!(v >= 1.8, "{v}");
    }

    #[test]
    fn symmetric_and_guarded() {
        let a = make_two_moons(60, 0.1, 1).unwrap();
        let b = make_blobs(&[vec![0.5, 0.0]], 60, 0.5, 2).unwrap();
        let ab = proxy_a_distance(a.features(), b.features(), &probe_config(3)).unwrap();
        let ba = proxy_a_distance(b.features(), a.features(), &probe_config(3)).unwrap();
        assert_eq!(ab, ba);
        let tiny = make_two_moons(3, 0.1, 1).unwrap();
        assert!(proxy_a_distance(tiny.features(), a.features(), &probe_config(0)).is_err());
    }
}
