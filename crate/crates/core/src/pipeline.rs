//! The gradual self-training loop.
//!
//! `f_0` is trained on the labeled source. For stage `m = 1..=M` the previous
//! model (optionally enhanced by the implicit ensemble) scores and
//! pseudo-labels the targets, the target-prototype classifier scores the
//! sources, the stage-`m` intermediate domain is selected, and `f_m` is
//! warm-started from `f_{m-1}` on it. Only the plain `f_M` is used for
//! evaluation.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{write_csv, write_unlabeled_csv, LabeledSet, SsdaSplit, UnlabeledSet};
use crate::diagnostics::{step_discrepancy, step_seed};
use crate::ensemble::{ImplicitEnsemble, Solver};
use crate::error::{invalid, Error, Result};
use crate::model::{pseudo_labels, train_source, train_stage, Classifier, TrainConfig, WeightedBatchSpec};
use crate::par;
use crate::seeds::derive_seed;
use crate::selection::{
    random_indicator, score_source_features, score_targets, select_top, source_count, target_count, IntermediateDomain,
    Kernel, Prototypes,
};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// How a domain side is selected at each stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Confidence-ranked top-k.
    #[default]
    Ours,
    /// The same number of samples, drawn uniformly.
    Random,
    /// Every sample, at every stage.
    All,
}

impl SelectionMode {
    /// Table symbol: check mark, `R`, or cross.
    pub fn symbol(self) -> &'static str {
        match self {
            SelectionMode::Ours => "ours",
            SelectionMode::Random => "R",
            SelectionMode::All => "x",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Mode {
    #[default]
    Da,
    Ssda {
        labels_per_class: usize,
    },
}

fn default_stages() -> usize {
    20
}
fn default_hidden() -> Vec<usize> {
    vec![32]
}
fn default_true() -> bool {
    true
}
fn default_lambda() -> f64 {
    1.0
}

pub fn default_source_train() -> TrainConfig {
    TrainConfig {
        eta0: 0.05,
        iterations: 1000,
        batch_labeled: 32,
        ..TrainConfig::default()
    }
}

pub fn default_adapt_train() -> TrainConfig {
    TrainConfig {
        eta0: 0.02,
        iterations: 1000,
        batch_labeled: 32,
        unlabeled_ratio: 3,
        augment_sigma: 0.1,
        ..TrainConfig::default()
    }
}

/// Everything that controls one adaptation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Number of intermediate domains `M`.
    #[serde(default = "default_stages")]
    pub stages: usize,
    #[serde(default)]
    pub mode: Mode,
    /// Hidden widths; the last one is the feature dimension.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Training of `f_0`.
    #[serde(default = "default_source_train")]
    pub source_train: TrainConfig,
    /// Adaptation training; `iterations` is the total over all stages.
    #[serde(default = "default_adapt_train")]
    pub adapt_train: TrainConfig,
    #[serde(default)]
    pub selection_target: SelectionMode,
    #[serde(default)]
    pub selection_source: SelectionMode,
    /// Use the enhanced indicator to rank targets.
    #[serde(default = "default_true")]
    pub selection_enhanced: bool,
    /// Use the enhanced indicator to pseudo-label targets.
    #[serde(default = "default_true")]
    pub labeling_enhanced: bool,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub kernel: Kernel,
    #[serde(default)]
    pub solver: Solver,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
    /// Measure the proxy A-distance between consecutive domains per stage.
    #[serde(default)]
    pub track_consecutive_a_distance: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            stages: default_stages(),
            mode: Mode::Da,
            hidden: default_hidden(),
            source_train: default_source_train(),
            adapt_train: default_adapt_train(),
            selection_target: SelectionMode::Ours,
            selection_source: SelectionMode::Ours,
            selection_enhanced: true,
            labeling_enhanced: true,
            lambda: default_lambda(),
            kernel: Kernel::default(),
            solver: Solver::default(),
            seed: 0,
            checkpoint_dir: None,
            track_consecutive_a_distance: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages < 1 {
            return Err(invalid!("stages (M) must be at least 1"));
        }
        if self.hidden.contains(&0) {
            return Err(invalid!("hidden widths must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid!("lambda must be finite and non-negative"));
        }
        if let Mode::Ssda { labels_per_class: 0 } = self.mode {
            return Err(invalid!("SSDA needs labels_per_class >= 1; use DA mode instead"));
        }
        self.source_train.validate()?;
        self.adapt_train.validate()
    }

    /// Iterations of one stage: the total adaptation budget split over `M`.
    pub fn stage_iterations(&self) -> usize {
        ((self.adapt_train.iterations as f64 / self.stages as f64).round() as usize).max(1)
    }

    pub fn layer_dims(&self, input: usize, classes: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(&self.hidden);
        dims.push(classes);
        dims
    }

    fn uses_ensemble(&self) -> bool {
        self.selection_enhanced || self.labeling_enhanced
    }

    /// Hash of every setting that influences results.
    pub fn fingerprint(&self) -> String {
        let mut canonical = self.clone();
        canonical.checkpoint_dir = None;
        sha256_hex(serde_json::to_string(&canonical).expect("config serializes").as_bytes())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of feature bytes and labels.
pub fn data_fingerprint(parts: &[(ArrayView2<'_, f64>, Option<&[usize]>)]) -> String {
    let mut h = Sha256::new();
    for (x, y) in parts {
        h.update((x.nrows() as u64).to_le_bytes());
        h.update((x.ncols() as u64).to_le_bytes());
        for v in x.iter() {
            h.update(v.to_le_bytes());
        }
        if let Some(y) = y {
            for &l in *y {
                h.update((l as u64).to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

/// Metrics for one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub active_source: usize,
    pub active_target: usize,
    /// Labeled target samples (SSDA only; always active).
    pub labeled_target: usize,
    /// Accuracy of `f_m` on the unlabeled target pool.
    pub target_accuracy: Option<f64>,
    /// Accuracy of the frozen pseudo labels on the active targets.
    pub pseudo_label_accuracy: Option<f64>,
    /// Share of targets whose pseudo label matches the previous stage's.
    pub pseudo_label_agreement: Option<f64>,
    pub consecutive_a_distance: Option<f64>,
    /// Targets whose propagation row was all zero.
    pub propagation_fallbacks: usize,
    pub wall_time_secs: f64,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub config: RunConfig,
    pub source_only_accuracy: Option<f64>,
    pub final_accuracy: Option<f64>,
    pub completed_stages: usize,
    pub stages: Vec<StageReport>,
}

impl RunReport {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub final_model: Classifier,
    pub stage_reports: Vec<StageReport>,
    pub config_echo: RunConfig,
    pub source_only_accuracy: Option<f64>,
    pub final_accuracy: Option<f64>,
    /// `f_0 ..= f_M`.
    pub stage_models: Vec<Classifier>,
    /// `M_0 ..= M_M` (stage 0 is the all-source domain).
    pub domains: Vec<IntermediateDomain>,
}

impl RunResult {
    pub fn report(&self) -> RunReport {
        RunReport {
            format_version: REPORT_FORMAT_VERSION,
            config: portable(&self.config_echo),
            source_only_accuracy: self.source_only_accuracy,
            final_accuracy: self.final_accuracy,
            completed_stages: self.stage_reports.len(),
            stages: self.stage_reports.clone(),
        }
    }
}

/// Run-time options that do not affect results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Continue after this completed stage, read from the checkpoint directory.
    pub resume_from: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StageMeta {
    stage: usize,
    config_hash: String,
    data_hash: String,
    model_hash: String,
    /// Pseudo labels of every target produced for this stage.
    pseudo_labels: Vec<usize>,
}

pub fn stage_dir(root: &Path, stage: usize) -> PathBuf {
    root.join(format!("stage_{stage}"))
}

struct Checkpointer<'a> {
    root: &'a Path,
    config_hash: String,
    data_hash: String,
}

impl Checkpointer<'_> {
    fn write_stage(
        &self,
        stage: usize,
        model: &Classifier,
        domain: &IntermediateDomain,
        source_labels: &[usize],
        pseudo: &[usize],
    ) -> Result<()> {
        let dir = stage_dir(self.root, stage);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let json = model.to_json();
        fs::write(dir.join("model.json"), &json).map_err(|e| Error::io(dir.join("model.json"), e))?;
        domain.write_csv(&dir.join("domain.csv"), source_labels)?;
        let meta = StageMeta {
            stage,
            config_hash: self.config_hash.clone(),
            data_hash: self.data_hash.clone(),
            model_hash: sha256_hex(json.as_bytes()),
            pseudo_labels: pseudo.to_vec(),
        };
        let path = dir.join("meta.json");
        fs::write(&path, serde_json::to_string(&meta).expect("meta serializes")).map_err(|e| Error::io(&path, e))
    }

    fn load_stage(&self, stage: usize, n_target: usize) -> Result<(Classifier, IntermediateDomain, Vec<usize>)> {
        let dir = stage_dir(self.root, stage);
        let path = dir.join("meta.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: StageMeta =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if meta.config_hash != self.config_hash {
            return Err(Error::State(format!(
                "stage {stage} was produced with a different configuration"
            )));
        }
        if meta.data_hash != self.data_hash {
            return Err(Error::State(format!("stage {stage} was produced from different data")));
        }
        let model_path = dir.join("model.json");
        let json = fs::read_to_string(&model_path).map_err(|e| Error::io(&model_path, e))?;
        if sha256_hex(json.as_bytes()) != meta.model_hash {
            return Err(Error::State(format!(
                "stage {stage} model checkpoint does not match its recorded hash"
            )));
        }
        let model = Classifier::from_json(&json)?;
        let domain = IntermediateDomain::read_csv(&dir.join("domain.csv"), stage)?;
        if domain.target_active.len() != n_target {
            return Err(Error::State(format!("stage {stage} domain has the wrong target count")));
        }
        Ok((model, domain, meta.pseudo_labels))
    }

    fn report_path(&self) -> PathBuf {
        self.root.join("report.json")
    }
}

/// Labeled pool (source rows first, then any labeled target rows) and the
/// unlabeled target pool.
struct Problem<'a> {
    labeled: LabeledSet,
    n_source: usize,
    target: &'a UnlabeledSet,
    eval: Option<&'a [usize]>,
}

fn accuracy_of(model: &Classifier, target: &UnlabeledSet, eval: Option<&[usize]>) -> Result<Option<f64>> {
    eval.map(|y| model.accuracy(target.features(), y)).transpose()
}

/// Gradual self-training from labeled `source` to unlabeled `target`.
/// `eval_labels` are used for reporting only.
pub fn run_da(
    source: &LabeledSet,
    target: &UnlabeledSet,
    cfg: &RunConfig,
    eval_labels: Option<&[usize]>,
) -> Result<RunResult> {
    run_da_with(source, target, cfg, eval_labels, &RunOptions::default())
}

pub fn run_da_with(
    source: &LabeledSet,
    target: &UnlabeledSet,
    cfg: &RunConfig,
    eval_labels: Option<&[usize]>,
    opts: &RunOptions,
) -> Result<RunResult> {
    cfg.validate()?;
    if !matches!(cfg.mode, Mode::Da) {
        return Err(invalid!("run_da called with an SSDA configuration"));
    }
    check_inputs(source, target, eval_labels)?;
    let problem = Problem {
        labeled: source.clone(),
        n_source: source.len(),
        target,
        eval: eval_labels,
    };
    run_problem(&problem, cfg, opts)
}

fn check_inputs(source: &LabeledSet, target: &UnlabeledSet, eval: Option<&[usize]>) -> Result<()> {
    if source.dim() != target.dim() {
        return Err(invalid!(
            "source has {} features, target has {}",
            source.dim(),
            target.dim()
        ));
    }
    if let Some(y) = eval {
        if y.len() != target.len() {
            return Err(invalid!("{} evaluation labels for {} targets", y.len(), target.len()));
        }
    }
    Ok(())
}

/// Semi-supervised variant: the labeled target samples join the source as a
/// given intermediate domain, stay active with their true labels at every
/// stage, and are excluded from target selection.
pub fn run_ssda(
    source: &LabeledSet,
    split: &SsdaSplit,
    cfg: &RunConfig,
    eval_labels: Option<&[usize]>,
) -> Result<RunResult> {
    run_ssda_with(source, split, cfg, eval_labels, &RunOptions::default())
}

pub fn run_ssda_with(
    source: &LabeledSet,
    split: &SsdaSplit,
    cfg: &RunConfig,
    eval_labels: Option<&[usize]>,
    opts: &RunOptions,
) -> Result<RunResult> {
    cfg.validate()?;
    if split.labels_per_class == 0 || split.labeled_target.is_empty() {
        return Err(invalid!(
            "SSDA needs at least one labeled target sample per class; use run_da"
        ));
    }
    let labeled = source.concat(&split.labeled_target)?;
    let Some(target) = split.unlabeled_target.as_ref() else {
        // Nothing left to adapt to: supervised training on source plus labeled target.
        let init = Classifier::new(
            &cfg.layer_dims(source.dim(), source.num_classes()),
            derive_seed(cfg.seed, "init", 0),
        )?;
        let f0 = train_source(init, &labeled, &seeded(&cfg.source_train, cfg.seed, "source", 0))?;
        return Ok(RunResult {
            final_model: f0.clone(),
            stage_reports: Vec::new(),
            config_echo: cfg.clone(),
            source_only_accuracy: None,
            final_accuracy: None,
            stage_models: vec![f0],
            domains: vec![IntermediateDomain::source_only(source.len(), 0)],
        });
    };
    check_inputs(source, target, eval_labels)?;
    let problem = Problem {
        labeled,
        n_source: source.len(),
        target,
        eval: eval_labels,
    };
    run_problem(&problem, cfg, opts)
}

fn seeded(cfg: &TrainConfig, seed: u64, tag: &str, stage: usize) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(seed, tag, stage as u64),
        ..cfg.clone()
    }
}

fn run_problem(problem: &Problem<'_>, cfg: &RunConfig, opts: &RunOptions) -> Result<RunResult> {
    let labeled = &problem.labeled;
    let target = problem.target;
    let n_s = problem.n_source;
    let n_t = target.len();
    let k = labeled.num_classes();
    let stages = cfg.stages;

    let checkpointer = cfg.checkpoint_dir.as_deref().map(|root| Checkpointer {
        root,
        config_hash: cfg.fingerprint(),
        data_hash: data_fingerprint(&[(labeled.features(), Some(labeled.labels())), (target.features(), None)]),
    });
    if opts.resume_from.is_some() && checkpointer.is_none() {
        return Err(invalid!("resuming requires a checkpoint directory"));
    }

    let mut stage_models = Vec::with_capacity(stages + 1);
    let mut domains = Vec::with_capacity(stages + 1);
    let mut reports: Vec<StageReport> = Vec::with_capacity(stages);
    let mut previous_pseudo: Option<Vec<usize>> = None;
    let first_stage;

    match (opts.resume_from, &checkpointer) {
        (Some(done), Some(ck)) => {
            if done > stages {
                return Err(invalid!("cannot resume after stage {done} of {stages}"));
            }
            for m in 0..=done {
                let (model, domain, pseudo) = ck.load_stage(m, n_t)?;
                stage_models.push(model);
                domains.push(domain);
                if m == done && m > 0 {
                    previous_pseudo = Some(pseudo);
                }
            }
            let prior = RunReport::read(&ck.report_path())?;
            if prior.stages.len() < done {
                return Err(Error::State(format!(
                    "report.json records only {} stages",
                    prior.stages.len()
                )));
            }
            reports.extend(prior.stages.into_iter().take(done));
            first_stage = done + 1;
        }
        _ => {
            let init = Classifier::new(&cfg.layer_dims(labeled.dim(), k), derive_seed(cfg.seed, "init", 0))?;
            let f0 = train_source(init, labeled, &seeded(&cfg.source_train, cfg.seed, "source", 0)).map_err(|e| {
                Error::Stage {
                    stage: 0,
                    source: Box::new(e),
                }
            })?;
            let d0 = IntermediateDomain::source_only(n_s, n_t);
            if let Some(ck) = &checkpointer {
                fs::create_dir_all(ck.root).map_err(|e| Error::io(ck.root, e))?;
                write_csv(
                    &labeled.subset(&(0..n_s).collect::<Vec<_>>())?,
                    &ck.root.join("source.csv"),
                )?;
                write_unlabeled_csv(target, &ck.root.join("target.csv"))?;
                if labeled.len() > n_s {
                    write_csv(
                        &labeled.subset(&(n_s..labeled.len()).collect::<Vec<_>>())?,
                        &ck.root.join("labeled_target.csv"),
                    )?;
                }
                ck.write_stage(0, &f0, &d0, &labeled.labels()[..n_s], &[])?;
            }
            stage_models.push(f0);
            domains.push(d0);
            first_stage = 1;
        }
    }
    let source_only_accuracy = accuracy_of(&stage_models[0], target, problem.eval)?;

    for m in first_stage..=stages {
        let started = Instant::now();
        let prev = stage_models.last().expect("f_0 exists");
        let outcome = build_stage(problem, cfg, prev, m).map_err(|e| Error::Stage {
            stage: m,
            source: Box::new(e),
        })?;
        let spec = batch_spec(&outcome.domain, labeled, n_s);
        let stage_cfg = TrainConfig {
            iterations: cfg.stage_iterations(),
            ..seeded(&cfg.adapt_train, cfg.seed, "stage", m)
        };
        let model = train_stage(prev.clone(), labeled, target, &spec, &stage_cfg).map_err(|e| Error::Stage {
            stage: m,
            source: Box::new(e),
        })?;

        let consecutive_a_distance = if cfg.track_consecutive_a_distance {
            let source = labeled.features().slice_move(ndarray::s![..n_s, ..]);
            Some(step_discrepancy(
                &model,
                domains.last().expect("M_0 exists"),
                &outcome.domain,
                source,
                target.features(),
                step_seed(cfg.seed, m),
            )?)
        } else {
            None
        };
        let pseudo_label_accuracy = problem.eval.and_then(|y| {
            let active = outcome.domain.target_indices();
            (!active.is_empty())
                .then(|| active.iter().filter(|&&i| outcome.pseudo[i] == y[i]).count() as f64 / active.len() as f64)
        });
        let pseudo_label_agreement = previous_pseudo
            .as_ref()
            .map(|p| p.iter().zip(&outcome.pseudo).filter(|(a, b)| a == b).count() as f64 / n_t as f64);
        let report = StageReport {
            stage: m,
            active_source: outcome.domain.active_sources(),
            active_target: outcome.domain.active_targets(),
            labeled_target: labeled.len() - n_s,
            target_accuracy: accuracy_of(&model, target, problem.eval)?,
            pseudo_label_accuracy,
            pseudo_label_agreement,
            consecutive_a_distance,
            propagation_fallbacks: outcome.fallbacks,
            wall_time_secs: started.elapsed().as_secs_f64(),
        };

        if let Some(ck) = &checkpointer {
            ck.write_stage(m, &model, &outcome.domain, &labeled.labels()[..n_s], &outcome.pseudo)?;
        }
        reports.push(report);
        previous_pseudo = Some(outcome.pseudo);
        stage_models.push(model);
        domains.push(outcome.domain);

        if let Some(ck) = &checkpointer {
            partial_report(cfg, source_only_accuracy, &reports).write(&ck.report_path())?;
        }
    }

    let final_model = stage_models.last().expect("at least f_0").clone();
    let final_accuracy = accuracy_of(&final_model, target, problem.eval)?;
    let result = RunResult {
        final_model,
        stage_reports: reports,
        config_echo: cfg.clone(),
        source_only_accuracy,
        final_accuracy,
        stage_models,
        domains,
    };
    if let Some(ck) = &checkpointer {
        result.report().write(&ck.report_path())?;
    }
    Ok(result)
}

/// The config without its output location, so reports of identical runs match.
fn portable(cfg: &RunConfig) -> RunConfig {
    RunConfig {
        checkpoint_dir: None,
        ..cfg.clone()
    }
}

fn partial_report(cfg: &RunConfig, source_only_accuracy: Option<f64>, reports: &[StageReport]) -> RunReport {
    RunReport {
        format_version: REPORT_FORMAT_VERSION,
        config: portable(cfg),
        source_only_accuracy,
        final_accuracy: reports.last().and_then(|r| r.target_accuracy),
        completed_stages: reports.len(),
        stages: reports.to_vec(),
    }
}

struct StageOutcome {
    domain: IntermediateDomain,
    /// Frozen pseudo labels of every target for this stage.
    pseudo: Vec<usize>,
    fallbacks: usize,
}

fn argmax_rows(p: ArrayView2<'_, f64>) -> Vec<usize> {
    pseudo_labels(p)
}

/// Scores, pseudo-labels and selects the stage-`m` intermediate domain using `prev = f_{m-1}`.
fn build_stage(problem: &Problem<'_>, cfg: &RunConfig, prev: &Classifier, m: usize) -> Result<StageOutcome> {
    let labeled = &problem.labeled;
    let target = problem.target;
    let n_s = problem.n_source;
    let n_t = target.len();

    let (target_probs, target_features) = prev.predict_with_features(target.features())?;
    let labeled_features = prev.features(labeled.features())?;
    let plain_labels = argmax_rows(target_probs.view());

    let mut fallbacks = 0;
    let enhanced: Option<Array2<f64>> = if cfg.uses_ensemble() {
        let mut ensemble = ImplicitEnsemble::fit(
            labeled_features.view(),
            labeled.labels(),
            target_features.view(),
            labeled.num_classes(),
            cfg.lambda,
            cfg.kernel,
            cfg.solver,
        )?;
        let out = ensemble.enhance(target_probs.view(), target_features.view());
        fallbacks = ensemble.uniform_fallbacks;
        Some(out)
    } else {
        None
    };
    let selection_probs = match (&enhanced, cfg.selection_enhanced) {
        (Some(e), true) => e.view(),
        _ => target_probs.view(),
    };
    let labeling_probs = match (&enhanced, cfg.labeling_enhanced) {
        (Some(e), true) => e.view(),
        _ => target_probs.view(),
    };
    let pseudo = argmax_rows(labeling_probs);

    let k_t = target_count(m, cfg.stages, n_t);
    let target_active = match cfg.selection_target {
        SelectionMode::Ours => select_top(&score_targets(selection_probs)?, k_t)?,
        SelectionMode::Random => random_indicator(n_t, k_t, derive_seed(cfg.seed, "random-target", m as u64))?,
        SelectionMode::All => vec![true; n_t],
    };

    let k_s = source_count(m, cfg.stages, n_s);
    let source_active = match cfg.selection_source {
        SelectionMode::Ours => {
            let protos = Prototypes::from_features(target_features.view(), &plain_labels, labeled.num_classes())?;
            let source_features = labeled_features.slice(ndarray::s![..n_s, ..]);
            let scores = score_source_features(source_features, &labeled.labels()[..n_s], &protos, cfg.kernel)?;
            select_top(&scores, k_s)?
        }
        SelectionMode::Random => random_indicator(n_s, k_s, derive_seed(cfg.seed, "random-source", m as u64))?,
        SelectionMode::All => vec![true; n_s],
    };

    let domain = IntermediateDomain::from_indicators(m, source_active, target_active, &pseudo)?;
    Ok(StageOutcome {
        domain,
        pseudo,
        fallbacks,
    })
}

/// Active sources and labeled targets with their labels, active targets with
/// their frozen pseudo labels.
fn batch_spec(domain: &IntermediateDomain, labeled: &LabeledSet, n_source: usize) -> WeightedBatchSpec {
    let mut spec = WeightedBatchSpec::default();
    for i in domain.source_indices() {
        spec.labeled.push((i, labeled.labels()[i]));
    }
    for i in n_source..labeled.len() {
        spec.labeled.push((i, labeled.labels()[i]));
    }
    for i in domain.target_indices() {
        spec.pseudo
            .push((i, domain.target_pseudo_labels[i].expect("active targets carry labels")));
    }
    spec
}

/// One Table-1 style configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationArm {
    pub selection_target: SelectionMode,
    pub selection_source: SelectionMode,
    pub selection_enhanced: bool,
    pub labeling_enhanced: bool,
}

impl AblationArm {
    pub const FULL: AblationArm = AblationArm {
        selection_target: SelectionMode::Ours,
        selection_source: SelectionMode::Ours,
        selection_enhanced: true,
        labeling_enhanced: true,
    };

    pub fn name(&self) -> String {
        format!(
            "t-{}_s-{}_se-{}_le-{}",
            self.selection_target.symbol(),
            self.selection_source.symbol(),
            u8::from(self.selection_enhanced),
            u8::from(self.labeling_enhanced)
        )
        .replace("ours", "v")
    }

    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        RunConfig {
            selection_target: self.selection_target,
            selection_source: self.selection_source,
            selection_enhanced: self.selection_enhanced,
            labeling_enhanced: self.labeling_enhanced,
            ..base.clone()
        }
    }
}

/// The seven rows of the ablation table, full configuration first.
pub fn table1_arms() -> Vec<AblationArm> {
    use SelectionMode::*;
    let arm = |t, s, se, le| AblationArm {
        selection_target: t,
        selection_source: s,
        selection_enhanced: se,
        labeling_enhanced: le,
    };
    vec![
        arm(Ours, Ours, true, true),
        arm(All, Ours, true, true),
        arm(Random, Ours, true, true),
        arm(Ours, All, true, true),
        arm(Ours, Random, true, true),
        arm(Ours, Ours, false, false),
        arm(Ours, Ours, true, false),
    ]
}

/// One row of the ablation CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: AblationArm,
    pub seed: u64,
    pub accuracy: Option<f64>,
}

/// Runs every arm for every seed on shared data. With a checkpoint directory
/// in `base`, each run writes to `<dir>/<arm>/seed_<s>`, and runs whose
/// `report.json` is already complete are read back instead of re-run.
pub fn run_ablation_grid(
    source: &LabeledSet,
    target: &UnlabeledSet,
    eval_labels: Option<&[usize]>,
    base: &RunConfig,
    arms: &[AblationArm],
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    base.validate()?;
    let jobs: Vec<(AblationArm, u64)> = arms.iter().flat_map(|a| seeds.iter().map(move |&s| (*a, s))).collect();
    par::map_slice(&jobs, |&(arm, seed)| -> Result<AblationRow> {
        let mut cfg = arm.apply(base);
        cfg.seed = seed;
        if let Some(root) = &base.checkpoint_dir {
            let dir = root.join(arm.name()).join(format!("seed_{seed}"));
            let report_path = dir.join("report.json");
            if let Ok(done) = RunReport::read(&report_path) {
                let mut expected = cfg.clone();
                expected.checkpoint_dir = None;
                let mut recorded = done.config.clone();
                recorded.checkpoint_dir = None;
                if done.completed_stages == cfg.stages && recorded == expected {
                    return Ok(AblationRow {
                        arm,
                        seed,
                        accuracy: done.final_accuracy,
                    });
                }
            }
            cfg.checkpoint_dir = Some(dir);
        }
        let result = run_da(source, target, &cfg, eval_labels)?;
        Ok(AblationRow {
            arm,
            seed,
            accuracy: result.final_accuracy,
        })
    })
    .into_iter()
    .collect()
}

/// `sel_t,sel_s,sel_enh,lab_enh,seed,accuracy` rows.
pub fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> Result<()> {
    let mut out = String::from("sel_t,sel_s,sel_enh,lab_enh,seed,accuracy\n");
    for r in rows {
        let acc = r.accuracy.map_or(String::new(), |a| format!("{a:?}"));
        out.push_str(&format!(
            "{},{},{},{},{},{acc}\n",
            r.arm.selection_target.symbol(),
            r.arm.selection_source.symbol(),
            u8::from(r.arm.selection_enhanced),
            u8::from(r.arm.labeling_enhanced),
            r.seed
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
