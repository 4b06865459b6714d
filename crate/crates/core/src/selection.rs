//! Confidence scoring and top-k construction of intermediate domains.
//!
//! Target samples are ranked by their maximum predicted probability; source
//! samples by the probability a target-prototype classifier assigns to their
//! true class. Stage `m` of `M` keeps `round(m n_t / M)` targets and
//! `round((M - m) n_s / M)` sources.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledSet, UnlabeledSet};
use crate::error::{invalid, Error, Result};
use crate::model::{pseudo_labels, Classifier};
use crate::par;

/// Distance kernel turning squared distances into class probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// Weights `exp(-d^2)`: a softmax over negative squared distances.
    #[default]
    SoftmaxNegSq,
    /// Weights `exp(1 / (1 + d^2))`.
    StudentExp,
}

impl Kernel {
    fn log_weight(self, sq_dist: f64) -> f64 {
        match self {
            Kernel::SoftmaxNegSq => -sq_dist,
            Kernel::StudentExp => 1.0 / (1.0 + sq_dist),
        }
    }

    /// Normalized kernel weights over the entries where `mask` is true
    /// (masked-out entries get 0). Computed with a max shift.
    pub fn probabilities(self, sq_dists: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
        let on = |k: usize| mask.is_none_or(|m| m[k]);
        let logs: Vec<f64> = sq_dists.iter().map(|&d| self.log_weight(d)).collect();
        let max = (0..logs.len())
            .filter(|&k| on(k))
            .map(|k| logs[k])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut out: Vec<f64> = (0..logs.len())
            .map(|k| if on(k) { (logs[k] - max).exp() } else { 0.0 })
            .collect();
        let sum: f64 = out.iter().sum();
        if sum > 0.0 {
            out.iter_mut().for_each(|v| *v /= sum);
        }
        out
    }
}

pub(crate) fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    MaxProbability,
    TargetPrototype,
    Random,
}

impl fmt::Display for Scorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Scorer::MaxProbability => "max_probability",
            Scorer::TargetPrototype => "target_prototype",
            Scorer::Random => "random",
        };
        f.write_str(name)
    }
}

/// Per-sample selection scores in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    scores: Vec<f64>,
    provenance: Scorer,
}

impl ScoreTable {
    pub fn new(scores: Vec<f64>, provenance: Scorer) -> Result<Self> {
        if let Some((i, s)) = scores
            .iter()
            .enumerate()
            .find(|(_, s)| !s.is_finite() || !(0.0..=1.0).contains(*s))
        {
            return Err(Error::Numeric(format!("score {s} of sample {i} is not in [0, 1]")));
        }
        Ok(Self { scores, provenance })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn provenance(&self) -> Scorer {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// `index,score` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("index,score\n");
        for (i, s) in self.scores.iter().enumerate() {
            out.push_str(&format!("{i},{s:?}\n"));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// `index,active` rows for a 0/1 indicator.
pub fn write_indicator_csv(indicator: &[bool], path: &Path) -> Result<()> {
    let mut out = String::from("index,active\n");
    for (i, &a) in indicator.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", u8::from(a)));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Maximum of each probability row.
pub fn score_targets(probs: ArrayView2<'_, f64>) -> Result<ScoreTable> {
    let mut scores = Vec::with_capacity(probs.nrows());
    for (i, row) in probs.rows().into_iter().enumerate() {
        if let Some(v) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("sample {i} has non-finite probability {v}")));
        }
        scores.push(row.fold(f64::NEG_INFINITY, |m, &v| m.max(v)).clamp(0.0, 1.0));
    }
    ScoreTable::new(scores, Scorer::MaxProbability)
}

/// Scores targets by the plain model's confidence.
pub fn score_targets_with(model: &Classifier, target: &UnlabeledSet) -> Result<ScoreTable> {
    score_targets(model.predict_proba(target.features())?.view())
}

/// Positions of the `k` highest scores (ties to the lower index).
pub fn top_k_indices(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > scores.len() {
        return Err(invalid!("cannot select {k} of {} samples", scores.len()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

/// Indicator with exactly `k` ones on the top-ranked samples.
pub fn select_top(scores: &ScoreTable, k: usize) -> Result<Vec<bool>> {
    let mut out = vec![false; scores.len()];
    for i in top_k_indices(&scores.scores, k)? {
        out[i] = true;
    }
    Ok(out)
}

/// Indicator with `k` ones at uniformly random positions.
pub fn random_indicator(n: usize, k: usize, seed: u64) -> Result<Vec<bool>> {
    if k > n {
        return Err(invalid!("cannot select {k} of {n} samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, k) {
        out[i] = true;
    }
    Ok(out)
}

/// Class means in feature space of the target samples, grouped by pseudo label.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    centers: Array2<f64>,
    counts: Vec<usize>,
}

impl Prototypes {
    /// Prototypes from precomputed features and labels. Empty classes keep a
    /// zero center and a zero count.
    pub fn from_features(features: ArrayView2<'_, f64>, labels: &[usize], num_classes: usize) -> Result<Self> {
        if labels.len() != features.nrows() {
            return Err(invalid!("{} labels for {} rows", labels.len(), features.nrows()));
        }
        let mut centers = Array2::zeros((num_classes, features.ncols()));
        let mut counts = vec![0usize; num_classes];
        for (row, &y) in features.rows().into_iter().zip(labels) {
            if y >= num_classes {
                return Err(invalid!("label {y} out of range for {num_classes} classes"));
            }
            let mut c = centers.row_mut(y);
            c += &row;
            counts[y] += 1;
        }
        for (mut c, &n) in centers.rows_mut().into_iter().zip(&counts) {
            if n > 0 {
                c /= n as f64;
            }
        }
        Ok(Self { centers, counts })
    }

    pub fn centers(&self) -> ArrayView2<'_, f64> {
        self.centers.view()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn is_empty_class(&self, k: usize) -> bool {
        self.counts[k] == 0
    }

    /// Probability of class `label` for a feature vector, over non-empty
    /// prototypes only; 0 when the class itself has no prototype.
    pub fn class_probability(&self, feature: ArrayView1<'_, f64>, label: usize, kernel: Kernel) -> Result<f64> {
        let mask: Vec<bool> = self.counts.iter().map(|&c| c > 0).collect();
        if !mask.iter().any(|&m| m) {
            return Err(Error::State("every prototype is empty".into()));
        }
        if !mask[label] {
            return Ok(0.0);
        }
        let d2: Vec<f64> = self
            .centers
            .rows()
            .into_iter()
            .map(|c| squared_distance(feature, c))
            .collect();
        Ok(kernel.probabilities(&d2, Some(&mask))[label])
    }
}

/// Prototypes of the target set under `model`'s own pseudo labels.
pub fn compute_prototypes(model: &Classifier, target: &UnlabeledSet) -> Result<Prototypes> {
    let (probs, features) = model.predict_with_features(target.features())?;
    let labels = pseudo_labels(probs.view());
    Prototypes::from_features(features.view(), &labels, model.num_classes())
}

/// Source scores from precomputed source features.
pub fn score_source_features(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    protos: &Prototypes,
    kernel: Kernel,
) -> Result<ScoreTable> {
    if !protos.counts.iter().any(|&c| c > 0) {
        return Err(Error::State("every prototype is empty".into()));
    }
    let scores = par::map_range(features.nrows(), |i| {
        protos.class_probability(features.row(i), labels[i], kernel)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    ScoreTable::new(scores, Scorer::TargetPrototype)
}

/// Probability the target-prototype classifier gives each source sample's own label.
pub fn score_sources(
    model: &Classifier,
    protos: &Prototypes,
    source: &LabeledSet,
    kernel: Kernel,
) -> Result<ScoreTable> {
    let features = model.features(source.features())?;
    score_source_features(features.view(), source.labels(), protos, kernel)
}

/// `round(num / den)` with halves rounded up, in exact integer arithmetic.
pub fn round_ratio(num: usize, den: usize) -> usize {
    (2 * num + den) / (2 * den)
}

/// Active targets at stage `m` of `M`.
pub fn target_count(stage: usize, stages: usize, n_target: usize) -> usize {
    round_ratio(stage * n_target, stages)
}

/// Active sources at stage `m` of `M`.
pub fn source_count(stage: usize, stages: usize, n_source: usize) -> usize {
    round_ratio((stages - stage) * n_source, stages)
}

/// The samples making up one intermediate domain.
#[derive(Debug, Clone, PartialEq)]
pub struct IntermediateDomain {
    pub stage: usize,
    pub source_active: Vec<bool>,
    pub target_active: Vec<bool>,
    /// `Some(label)` exactly for active targets.
    pub target_pseudo_labels: Vec<Option<usize>>,
}

impl IntermediateDomain {
    /// Stage 0: every source sample, no targets.
    pub fn source_only(n_source: usize, n_target: usize) -> Self {
        Self {
            stage: 0,
            source_active: vec![true; n_source],
            target_active: vec![false; n_target],
            target_pseudo_labels: vec![None; n_target],
        }
    }

    pub fn from_indicators(
        stage: usize,
        source_active: Vec<bool>,
        target_active: Vec<bool>,
        pseudo: &[usize],
    ) -> Result<Self> {
        if pseudo.len() != target_active.len() {
            return Err(invalid!(
                "{} pseudo labels for {} targets",
                pseudo.len(),
                target_active.len()
            ));
        }
        let target_pseudo_labels = target_active
            .iter()
            .zip(pseudo)
            .map(|(&a, &y)| a.then_some(y))
            .collect();
        Ok(Self {
            stage,
            source_active,
            target_active,
            target_pseudo_labels,
        })
    }

    pub fn active_sources(&self) -> usize {
        self.source_active.iter().filter(|&&a| a).count()
    }

    pub fn active_targets(&self) -> usize {
        self.target_active.iter().filter(|&&a| a).count()
    }

    pub fn source_indices(&self) -> Vec<usize> {
        (0..self.source_active.len())
            .filter(|&i| self.source_active[i])
            .collect()
    }

    pub fn target_indices(&self) -> Vec<usize> {
        (0..self.target_active.len())
            .filter(|&i| self.target_active[i])
            .collect()
    }

    /// `pool,index,active,label` rows; label is the true source label or the
    /// pseudo label, `-1` for inactive targets.
    pub fn write_csv(&self, path: &Path, source_labels: &[usize]) -> Result<()> {
        let mut out = String::from("pool,index,active,label\n");
        for (i, &a) in self.source_active.iter().enumerate() {
            out.push_str(&format!("source,{i},{},{}\n", u8::from(a), source_labels[i]));
        }
        for (i, (&a, y)) in self.target_active.iter().zip(&self.target_pseudo_labels).enumerate() {
            let label = y.map_or(-1, |y| y as i64);
            out.push_str(&format!("target,{i},{},{label}\n", u8::from(a)));
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, stage: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some("pool,index,active,label") {
            return Err(Error::Format(format!("{}: bad header", path.display())));
        }
        let mut source_active = Vec::new();
        let mut target_active = Vec::new();
        let mut target_pseudo_labels = Vec::new();
        for (n, line) in lines.enumerate() {
            let bad = || Error::Format(format!("{}: line {}: malformed row", path.display(), n + 2));
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 4 {
                return Err(bad());
            }
            let active = match cells[2] {
                "0" => false,
                "1" => true,
                _ => return Err(bad()),
            };
            let label: i64 = cells[3].parse().map_err(|_| bad())?;
            match cells[0] {
                "source" => source_active.push(active),
                "target" => {
                    target_active.push(active);
                    target_pseudo_labels.push((label >= 0).then_some(label as usize));
                }
                _ => return Err(bad()),
            }
        }
        Ok(Self {
            stage,
            source_active,
            target_active,
            target_pseudo_labels,
        })
    }
}

/// Stage `m` of `M` from ranked scores: top `round(m n_t / M)` targets and
/// top `round((M - m) n_s / M)` sources.
pub fn build_intermediate(
    stage: usize,
    stages: usize,
    target_scores: &ScoreTable,
    source_scores: &ScoreTable,
    pseudo_labels: &[usize],
) -> Result<IntermediateDomain> {
    if stage < 1 || stage > stages {
        return Err(invalid!("stage {stage} outside 1..={stages}"));
    }
    let n_t = target_scores.len();
    let n_s = source_scores.len();
    let target_active = select_top(target_scores, target_count(stage, stages, n_t))?;
    let source_active = select_top(source_scores, source_count(stage, stages, n_s))?;
    IntermediateDomain::from_indicators(stage, source_active, target_active, pseudo_labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn table(s: &[f64]) -> ScoreTable {
        ScoreTable::new(s.to_vec(), Scorer::MaxProbability).unwrap()
    }

    #[test]
    fn target_scores_are_max_probabilities() {
        let uniform = Array2::from_elem((3, 4), 0.25);
        assert!(score_targets(uniform.view())
            .unwrap()
            .scores()
            .iter()
            .all(|&s| s == 0.25));
        let onehot = array![[0.0, 1.0], [1.0, 0.0]];
        assert_eq!(score_targets(onehot.view()).unwrap().scores(), &[1.0, 1.0]);
        assert_eq!(score_targets(array![[0.8, 0.2]].view()).unwrap().scores(), &[0.8]);
        let err = score_targets(array![[0.5, 0.5], [f64::NAN, 0.1]].view()).unwrap_err();
        assert!(err.to_string().contains("sample 1"));
    }

    #[test]
    fn select_top_examples() {
        assert_eq!(
            select_top(&table(&[0.9, 0.5, 0.7, 0.3]), 2).unwrap(),
            vec![true, false, true, false]
        );
        assert_eq!(select_top(&table(&[0.9, 0.5, 0.7]), 3).unwrap(), vec![true; 3]);
        assert_eq!(
            select_top(&table(&[0.5, 0.5, 0.5]), 2).unwrap(),
            vec![true, true, false]
        );
        assert!(select_top(&table(&[0.5]), 2).is_err());
    }

    #[test]
    fn random_indicator_examples() {
        assert_eq!(random_indicator(5, 0, 1).unwrap(), vec![false; 5]);
        assert_eq!(random_indicator(5, 5, 1).unwrap(), vec![true; 5]);
        assert_eq!(random_indicator(20, 7, 4).unwrap(), random_indicator(20, 7, 4).unwrap());
        assert_eq!(random_indicator(20, 7, 4).unwrap().iter().filter(|&&a| a).count(), 7);
    }

    #[test]
    fn prototype_means() {
        let f = array![[0.0, 2.0], [2.0, 0.0], [5.0, 5.0]];
        let p = Prototypes::from_features(f.view(), &[0, 0, 2], 3).unwrap();
        assert_eq!(p.centers().row(0), array![1.0, 1.0]);
        assert_eq!(p.counts(), &[2, 0, 1]);
        assert!(p.is_empty_class(1));
        assert_eq!(p.centers().row(2), array![5.0, 5.0]);
    }

    #[test]
    fn source_score_closed_form() {
        // Prototype 0 at distance 1, prototype 1 at distance 2.
        let protos = Prototypes::from_features(array![[1.0, 0.0], [0.0, 2.0]].view(), &[0, 1], 2).unwrap();
        let s = score_source_features(array![[0.0, 0.0]].view(), &[0], &protos, Kernel::SoftmaxNegSq).unwrap();
        let oracle = (-1.0f64).exp() / ((-1.0f64).exp() + (-4.0f64).exp());
        assert!((s.scores()[0] - oracle).abs() < 1e-12);
        assert!((oracle - 0.9526).abs() < 1e-4);

        let even = score_source_features(
            array![[0.5, 1.0]].view(),
            &[1],
            &Prototypes::from_features(array![[0.0, 1.0], [1.0, 1.0]].view(), &[0, 1], 2).unwrap(),
            Kernel::SoftmaxNegSq,
        )
        .unwrap();
        assert!((even.scores()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_prototypes() {
        let protos = Prototypes::from_features(array![[1.0, 0.0]].view(), &[0], 2).unwrap();
        let s = score_source_features(
            array![[1.0, 0.0], [1.0, 0.0]].view(),
            &[0, 1],
            &protos,
            Kernel::SoftmaxNegSq,
        )
        .unwrap();
        assert_eq!(s.scores(), &[1.0, 0.0]);
        let none = Prototypes::from_features(Array2::zeros((0, 2)).view(), &[], 2).unwrap();
        assert!(matches!(
            score_source_features(array![[1.0, 0.0]].view(), &[0], &none, Kernel::SoftmaxNegSq),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn counts_and_endpoints() {
        assert_eq!(round_ratio(7, 2), 4);
        assert_eq!(round_ratio(5, 2), 3);
        let t = table(&[0.1; 10]);
        let s = table(&[0.2; 10]);
        let d = build_intermediate(1, 2, &t, &s, &[0; 10]).unwrap();
        assert_eq!((d.active_targets(), d.active_sources()), (5, 5));
        let last = build_intermediate(2, 2, &t, &s, &[1; 10]).unwrap();
        assert_eq!((last.active_targets(), last.active_sources()), (10, 0));
        assert!(last.target_pseudo_labels.iter().all(|y| *y == Some(1)));
        assert!(build_intermediate(0, 2, &t, &s, &[0; 10]).is_err());
    }

    #[test]
    fn domain_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("domain.csv");
        let d = IntermediateDomain::from_indicators(3, vec![true, false], vec![false, true, true], &[0, 1, 0]).unwrap();
        d.write_csv(&path, &[1, 0]).unwrap();
        assert_eq!(IntermediateDomain::read_csv(&path, 3).unwrap(), d);
    }
}
