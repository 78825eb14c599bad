//! Two-stage training driver.
//!
//! Stage I optimizes the contrastive objective over the projection heads.
//! Stage II trains the classifier head together with the object head on
//! softmax cross-entropy. Each optimizer step accumulates gradients over
//! micro-batches; the micro-batches are evaluated in parallel but always
//! reduced in the same order, so thread count never changes the result.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AlignmentDataset, Split, DEFAULT_SEED};
use crate::diagnostics::{metrics_report, DiagError, MetricsReport, ReportConfig};
use crate::losses::{build_classification, build_stage1, LossError, LossReport, Objective};
use crate::mining::{mine, sample_simple, HardNegativeSet, MiningError, MiningReference, NegativeKind};
use crate::model::{adam_step, AdamConfig, ClassifierHead, ModelError, ModelSpec, OptimizerState, ProjectionModel, RawBatch};
use crate::numerics::{Matrix, Tape};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("hard negatives missing for {count} train samples (first: {first})")]
    MiningIncomplete { count: usize, first: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Diagnostics(#[from] DiagError),
    #[error(transparent)]
    Mining(#[from] MiningError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1Config {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub tau: f64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self { batch_size: 64, epochs: 1, lr: 2e-4, warmup_steps: 60, tau: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2Config {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub warmup_steps: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self { batch_size: 128, epochs: 1, lr: 2e-4, warmup_steps: 60 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Contrastive stage, then classification stage.
    #[default]
    TwoStage,
    /// Both losses summed from the first step, using the stage-one schedule.
    OneStage,
    /// Classification stage only.
    Stage2Only,
    /// Classifier trained on frozen, untrained projections.
    FinetuneOnly,
}

impl std::str::FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| format!("unknown mode {s:?}; expected two-stage, one-stage, stage2-only or finetune-only"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub k_hard_negatives: usize,
    /// Rows per gradient evaluation; gradients are summed up to the batch size.
    pub micro_batch: usize,
    pub mode: TrainMode,
    pub objective: Objective,
    /// Weight of the classification loss in one-stage mode.
    pub one_stage_weight: f64,
    pub seed: u64,
    pub eval: ReportConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            k_hard_negatives: crate::mining::DEFAULT_K,
            micro_batch: 16,
            mode: TrainMode::TwoStage,
            objective: Objective::Triple,
            one_stage_weight: 1.0,
            seed: DEFAULT_SEED,
            eval: ReportConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.stage1.batch_size == 0 || self.stage2.batch_size == 0 || self.micro_batch == 0 {
            return bad("batch sizes must be at least 1");
        }
        for lr in [self.stage1.lr, self.stage2.lr] {
            if !(lr.is_finite() && lr > 0.0) {
                return bad("learning rates must be positive");
            }
        }
        if !(self.stage1.tau.is_finite() && self.stage1.tau > 0.0) {
            return bad("tau must be positive");
        }
        if !(self.one_stage_weight.is_finite() && self.one_stage_weight >= 0.0) {
            return bad("one_stage_weight must be non-negative");
        }
        if self.k_hard_negatives == 0 {
            return bad("k_hard_negatives must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Stage1,
    Stage2,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based, counted across stages.
    pub step: u64,
    pub stage: StageKind,
    pub lr: f64,
    pub losses: LossReport,
    pub classification: f64,
    pub total: f64,
}

/// FNV-1a digests of parameter groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamChecksums {
    pub object_head: u64,
    pub text_heads: u64,
    pub classifier: u64,
}

fn fnv(mats: &[&Matrix]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for m in mats {
        for v in m.as_slice() {
            for byte in v.to_bits().to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    h
}

pub fn param_checksums(model: &ProjectionModel, classifier: &ClassifierHead) -> ParamChecksums {
    let params = model.parameters();
    let split = model.object_param_range().end;
    ParamChecksums {
        object_head: fnv(&params[..split]),
        text_heads: fnv(&params[split..]),
        classifier: fnv(&classifier.parameters()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: StageKind,
    pub steps: u64,
    pub wall_seconds: f64,
    pub before: ParamChecksums,
    pub after: ParamChecksums,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub seed: u64,
    pub history: Vec<StepRecord>,
    pub stages: Vec<StageSummary>,
    pub initial_metrics: MetricsReport,
    pub final_metrics: MetricsReport,
    /// Test accuracy of the classifier head on projected objects.
    pub classifier_accuracy: f64,
    pub classifier: ClassifierHead,
}

impl RunRecord {
    /// `step<TAB>stage<TAB>lr<TAB>..losses..` rows.
    pub fn history_tsv(&self) -> String {
        let mut out = String::from("step\tstage\tlr\ttotal\tstage1_total\tclassification\tl_oa\tl_ao\tl_ac\tl_ca\tl_ccc\tl_oc\tl_co\n");
        for r in &self.history {
            let l = &r.losses;
            let stage = match r.stage {
                StageKind::Stage1 => "stage1",
                StageKind::Stage2 => "stage2",
                StageKind::Joint => "joint",
            };
            let _ = writeln!(
                out,
                "{}\t{stage}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.step, r.lr, r.total, l.stage1_total, r.classification, l.l_oa, l.l_ao, l.l_ac, l.l_ca, l.l_ccc, l.l_oc, l.l_co
            );
        }
        out
    }
}

/// What one optimizer step differentiates and updates.
#[derive(Clone, Copy)]
struct StepPlan {
    contrastive: bool,
    /// Weight of the classification loss, if present.
    classification: Option<f64>,
    update_text: bool,
    update_object: bool,
}

struct MicroResult {
    losses: LossReport,
    classification: f64,
    total: f64,
    model_grads: Vec<Matrix>,
    cls_grads: Vec<Matrix>,
}

struct Trainer<'a> {
    ds: &'a AlignmentDataset,
    hn: Option<&'a HardNegativeSet>,
    cfg: &'a TrainConfig,
}

impl Trainer<'_> {
    fn raw_batch(&self, ids: &[usize], with_views: bool) -> RawBatch {
        let ds = self.ds;
        let labels = ds.labels(ids);
        let objects = ds.object_matrix(ids);
        if !with_views {
            let empty = Matrix::zeros(0, ds.dim_text());
            return RawBatch {
                objects,
                attributes: empty.clone(),
                categories: empty,
                neg_owner: Vec::new(),
                neg_attributes: None,
                neg_categories: None,
            };
        }
        let mut neg_owner = Vec::new();
        let mut neg_samples = Vec::new();
        let mut neg_cats = Vec::new();
        let hn = self.hn.expect("checked before training");
        for (row, &id) in ids.iter().enumerate() {
            for e in hn.get(id).unwrap_or(&[]) {
                neg_owner.push(row);
                neg_samples.push(e.sample);
                neg_cats.push(e.category);
            }
        }
        let (neg_attributes, neg_categories) = if neg_owner.is_empty() {
            (None, None)
        } else {
            (Some(ds.attribute_matrix(&neg_samples)), Some(ds.category_matrix(&neg_cats)))
        };
        RawBatch {
            objects,
            attributes: ds.attribute_matrix(ids),
            categories: ds.category_matrix(&labels),
            neg_owner,
            neg_attributes,
            neg_categories,
        }
    }

    fn micro(&self, model: &ProjectionModel, classifier: &ClassifierHead, ids: &[usize], plan: StepPlan) -> Result<MicroResult, TrainError> {
        let raw = self.raw_batch(ids, plan.contrastive);
        let mut tape = Tape::new();
        let p = model.record_params(&mut tape);
        let w = tape.leaf(classifier.weight.clone());
        let b = tape.leaf(classifier.bias.clone());
        let mut losses = LossReport::default();
        let mut total = None;
        let mut objects = None;
        if plan.contrastive {
            let views = model.forward_tape(&mut tape, &p, &raw, self.cfg.stage1.tau)?;
            let nodes = build_stage1(&mut tape, &views, self.cfg.objective, None)?;
            losses = nodes.report(&tape);
            total = nodes.total;
            objects = Some(views.objects);
        }
        let mut classification = 0.0;
        if let Some(weight) = plan.classification {
            let feats = match objects {
                Some(o) => o,
                None => {
                    let x = tape.leaf(raw.objects.clone());
                    model.project_objects_tape(&mut tape, &p, x)?
                }
            };
            let cls = build_classification(&mut tape, feats, w, b, &self.ds.labels(ids))?;
            classification = tape.scalar(cls);
            let scaled = tape.scale(cls, weight).map_err(LossError::from)?;
            total = Some(match total {
                Some(t) => tape.add(t, scaled).map_err(LossError::from)?,
                None => scaled,
            });
        }
        let total = total.expect("plan has at least one loss");
        let grads = tape.backward(total).map_err(LossError::from)?;
        Ok(MicroResult {
            losses,
            classification,
            total: tape.scalar(total),
            model_grads: p.all.iter().map(|&id| grads.get(&tape, id)).collect(),
            cls_grads: vec![grads.get(&tape, w), grads.get(&tape, b)],
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn run_stage(
        &self,
        model: &mut ProjectionModel,
        classifier: &mut ClassifierHead,
        stage: StageKind,
        plan: StepPlan,
        (batch_size, epochs, adam): (usize, usize, AdamConfig),
        rng: &mut ChaCha8Rng,
        history: &mut Vec<StepRecord>,
    ) -> Result<StageSummary, TrainError> {
        let start = Instant::now();
        let before = param_checksums(model, classifier);
        let object_end = model.object_param_range().end;
        let n_model = model.parameters().len();
        let selected: Vec<usize> = (0..n_model)
            .filter(|&i| if i < object_end { plan.update_object } else { plan.update_text })
            .collect();
        let mut state = OptimizerState::new(adam, selected.iter().map(|&i| model.parameters()[i]).chain(classifier.parameters()));
        let mut ids = self.ds.split_ids(Split::Train);
        let mut steps = 0;
        for _ in 0..epochs {
            ids.shuffle(rng);
            for batch in ids.chunks(batch_size) {
                let micro: Vec<&[usize]> = batch.chunks(self.cfg.micro_batch).collect();
                let results: Vec<MicroResult> = micro
                    .par_iter()
                    .map(|mb| self.micro(model, classifier, mb, plan))
                    .collect::<Result<_, _>>()?;
                let mut it = results.into_iter();
                let mut acc = it.next().expect("non-empty batch");
                for r in it {
                    acc.losses.accumulate(&r.losses);
                    acc.classification += r.classification;
                    acc.total += r.total;
                    for (a, g) in acc.model_grads.iter_mut().zip(&r.model_grads) {
                        a.add_assign(g);
                    }
                    for (a, g) in acc.cls_grads.iter_mut().zip(&r.cls_grads) {
                        a.add_assign(g);
                    }
                }
                let grads: Vec<Matrix> = selected
                    .iter()
                    .map(|&i| acc.model_grads[i].clone())
                    .chain(acc.cls_grads)
                    .collect();
                let mut all = model.parameters_mut();
                let mut params: Vec<&mut Matrix> = Vec::with_capacity(grads.len());
                for (i, p) in all.drain(..).enumerate() {
                    if selected.binary_search(&i).is_ok() {
                        params.push(p);
                    }
                }
                params.extend(classifier.parameters_mut());
                let lr = adam_step(&mut state, &mut params, &grads)?;
                steps += 1;
                history.push(StepRecord {
                    step: history.len() as u64 + 1,
                    stage,
                    lr,
                    losses: acc.losses,
                    classification: acc.classification,
                    total: acc.total,
                });
            }
        }
        Ok(StageSummary {
            stage,
            steps,
            wall_seconds: start.elapsed().as_secs_f64(),
            before,
            after: param_checksums(model, classifier),
        })
    }
}

fn classifier_accuracy(ds: &AlignmentDataset, model: &ProjectionModel, classifier: &ClassifierHead) -> Result<f64, TrainError> {
    let ids = ds.split_ids(Split::Test);
    if ids.is_empty() {
        return Ok(0.0);
    }
    let logits = classifier.logits(&model.project_objects(&ds.object_matrix(&ids))?)?;
    let labels = ds.labels(&ids);
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let row = logits.row(i);
            let best = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            best == y
        })
        .count();
    Ok(correct as f64 / ids.len() as f64)
}

/// Trains `model` in place and returns the run record.
///
/// `hn` is required whenever a contrastive stage runs and must cover every
/// train sample.
pub fn train(
    ds: &AlignmentDataset,
    hn: Option<&HardNegativeSet>,
    model: &mut ProjectionModel,
    cfg: &TrainConfig,
) -> Result<RunRecord, TrainError> {
    cfg.validate()?;
    if model.dim_object() != ds.dim_object() || model.dim_text() != ds.dim_text() {
        return Err(TrainError::Config(format!(
            "model dims ({}, {}) do not match dataset dims ({}, {})",
            model.dim_object(),
            model.dim_text(),
            ds.dim_object(),
            ds.dim_text()
        )));
    }
    let train_ids = ds.split_ids(Split::Train);
    if train_ids.is_empty() {
        return Err(TrainError::Config("train split is empty".into()));
    }
    let contrastive = matches!(cfg.mode, TrainMode::TwoStage | TrainMode::OneStage);
    if contrastive && cfg.stage1.epochs > 0 {
        let missing = hn.map_or_else(|| train_ids.clone(), |h| h.missing(&train_ids));
        if let Some(&first) = missing.first() {
            return Err(TrainError::MiningIncomplete { count: missing.len(), first });
        }
    }

    let mut classifier = ClassifierHead::new(ds.num_categories(), model.dim_shared(), cfg.seed ^ 0x5eed_c1a5)?;
    let initial_metrics = metrics_report(ds, model, &cfg.eval)?;
    let trainer = Trainer { ds, hn, cfg };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::new();
    let mut stages = Vec::new();
    let s1 = cfg.stage1;
    let s2 = cfg.stage2;
    let adam1 = AdamConfig { lr: s1.lr, warmup_steps: s1.warmup_steps, ..Default::default() };
    let adam2 = AdamConfig { lr: s2.lr, warmup_steps: s2.warmup_steps, ..Default::default() };
    let stage2_plan = StepPlan { contrastive: false, classification: Some(1.0), update_text: false, update_object: true };
    match cfg.mode {
        TrainMode::TwoStage => {
            let plan = StepPlan { contrastive: true, classification: None, update_text: true, update_object: true };
            stages.push(trainer.run_stage(model, &mut classifier, StageKind::Stage1, plan, (s1.batch_size, s1.epochs, adam1), &mut rng, &mut history)?);
            stages.push(trainer.run_stage(model, &mut classifier, StageKind::Stage2, stage2_plan, (s2.batch_size, s2.epochs, adam2), &mut rng, &mut history)?);
        }
        TrainMode::OneStage => {
            let plan = StepPlan {
                contrastive: true,
                classification: Some(cfg.one_stage_weight),
                update_text: true,
                update_object: true,
            };
            stages.push(trainer.run_stage(model, &mut classifier, StageKind::Joint, plan, (s1.batch_size, s1.epochs, adam1), &mut rng, &mut history)?);
        }
        TrainMode::Stage2Only => {
            stages.push(trainer.run_stage(model, &mut classifier, StageKind::Stage2, stage2_plan, (s2.batch_size, s2.epochs, adam2), &mut rng, &mut history)?);
        }
        TrainMode::FinetuneOnly => {
            let plan = StepPlan { update_object: false, ..stage2_plan };
            stages.push(trainer.run_stage(model, &mut classifier, StageKind::Stage2, plan, (s2.batch_size, s2.epochs, adam2), &mut rng, &mut history)?);
        }
    }
    let final_metrics = metrics_report(ds, model, &cfg.eval)?;
    Ok(RunRecord {
        config: cfg.clone(),
        seed: cfg.seed,
        history,
        stages,
        initial_metrics,
        final_metrics,
        classifier_accuracy: classifier_accuracy(ds, model, &classifier)?,
        classifier,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    /// Baseline: two-stage, triple objective, mined hard negatives.
    HardNegatives,
    SimpleNegatives,
    ObjectCategory,
    OneStage,
    Stage2Only,
}

impl Arm {
    pub const ALL: [Arm; 5] = [Arm::HardNegatives, Arm::SimpleNegatives, Arm::ObjectCategory, Arm::OneStage, Arm::Stage2Only];
}

/// Everything that distinguishes one arm's runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub negatives: NegativeKind,
    pub train: TrainConfig,
}

impl ArmSpec {
    pub fn for_arm(arm: Arm, base: &TrainConfig) -> Self {
        let mut train = base.clone();
        train.mode = TrainMode::TwoStage;
        train.objective = Objective::Triple;
        let mut negatives = NegativeKind::Hard;
        match arm {
            Arm::HardNegatives => {}
            Arm::SimpleNegatives => negatives = NegativeKind::Simple,
            Arm::ObjectCategory => train.objective = Objective::ObjectCategory,
            Arm::OneStage => train.mode = TrainMode::OneStage,
            Arm::Stage2Only => train.mode = TrainMode::Stage2Only,
        }
        Self { negatives, train }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub base: TrainConfig,
    pub model: ModelSpec,
    pub seeds: Vec<u64>,
    pub arms: Vec<Arm>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            base: TrainConfig::default(),
            model: ModelSpec::default(),
            seeds: (0..5).map(|i| DEFAULT_SEED + i).collect(),
            arms: Arm::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRun {
    pub seed: u64,
    pub mc_accuracy: f64,
    pub alignment_quality: f64,
    pub initial_alignment_quality: f64,
    pub classifier_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    /// `path: baseline -> arm` for every setting that differs from the baseline arm.
    pub config_diff: Vec<String>,
    pub mc_accuracy: MeanStd,
    pub alignment_quality: MeanStd,
    pub classifier_accuracy: MeanStd,
    pub runs: Vec<ArmRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub arms: Vec<ArmSummary>,
}

impl AblationReport {
    pub fn arm(&self, arm: Arm) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.arm == arm)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("arm\tmc_mean\tmc_std\talign_mean\talign_std\tcls_mean\tcls_std\tconfig_diff\n");
        for a in &self.arms {
            let name = serde_json::to_value(a.arm).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            let _ = writeln!(
                out,
                "{name}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}",
                a.mc_accuracy.mean,
                a.mc_accuracy.std,
                a.alignment_quality.mean,
                a.alignment_quality.std,
                a.classifier_accuracy.mean,
                a.classifier_accuracy.std,
                a.config_diff.join("; ")
            );
        }
        out
    }
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut BTreeMap<String, String>) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, x) in map {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&p, x, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

/// Settings that differ between two arm specs, excluding the seed.
pub fn config_diff(base: &ArmSpec, other: &ArmSpec) -> Vec<String> {
    let (mut a, mut b) = (BTreeMap::new(), BTreeMap::new());
    flatten("", &serde_json::to_value(base).expect("serializable"), &mut a);
    flatten("", &serde_json::to_value(other).expect("serializable"), &mut b);
    a.iter()
        .filter(|(k, v)| k.as_str() != "train.seed" && b.get(*k) != Some(v))
        .map(|(k, v)| format!("{k}: {v} -> {}", b.get(k).map_or("-", String::as_str)))
        .collect()
}

fn run_arm(ds: &AlignmentDataset, cfg: &AblationConfig, spec: &ArmSpec, seed: u64) -> Result<ArmRun, TrainError> {
    let mut train_cfg = spec.train.clone();
    train_cfg.seed = seed;
    train_cfg.eval.probe = None;
    let mut model = ProjectionModel::new(&ModelSpec { dim_object: ds.dim_object(), dim_text: ds.dim_text(), ..cfg.model.clone() }, seed)?;
    let needs_negatives = matches!(train_cfg.mode, TrainMode::TwoStage | TrainMode::OneStage);
    let hn = if !needs_negatives {
        None
    } else {
        Some(match spec.negatives {
            NegativeKind::Hard => mine(ds, train_cfg.k_hard_negatives, MiningReference::ObjectEmbedding)?,
            NegativeKind::Simple => sample_simple(ds, train_cfg.k_hard_negatives, seed)?,
        })
    };
    let record = train(ds, hn.as_ref(), &mut model, &train_cfg)?;
    Ok(ArmRun {
        seed,
        mc_accuracy: record.final_metrics.mc_accuracy,
        alignment_quality: record.final_metrics.alignment_quality,
        initial_alignment_quality: record.initial_metrics.alignment_quality,
        classifier_accuracy: record.classifier_accuracy,
    })
}

/// Runs every arm over every seed. Arms and seeds run concurrently; each
/// run owns its model.
pub fn ablation_suite(ds: &AlignmentDataset, cfg: &AblationConfig) -> Result<AblationReport, TrainError> {
    if cfg.seeds.is_empty() || cfg.arms.is_empty() {
        return Err(TrainError::Config("ablation needs at least one seed and one arm".into()));
    }
    let baseline = ArmSpec::for_arm(Arm::HardNegatives, &cfg.base);
    let jobs: Vec<(Arm, ArmSpec, u64)> = cfg
        .arms
        .iter()
        .flat_map(|&arm| cfg.seeds.iter().map(move |&s| (arm, ArmSpec::for_arm(arm, &cfg.base), s)))
        .collect();
    let runs: Vec<ArmRun> = jobs
        .par_iter()
        .map(|(_, spec, seed)| run_arm(ds, cfg, spec, *seed))
        .collect::<Result<_, _>>()?;
    let per_arm = cfg.seeds.len();
    let arms = cfg
        .arms
        .iter()
        .zip(runs.chunks(per_arm))
        .map(|(&arm, runs)| {
            let pick = |f: fn(&ArmRun) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
            ArmSummary {
                arm,
                config_diff: config_diff(&baseline, &ArmSpec::for_arm(arm, &cfg.base)),
                mc_accuracy: pick(|r| r.mc_accuracy),
                alignment_quality: pick(|r| r.alignment_quality),
                classifier_accuracy: pick(|r| r.classifier_accuracy),
                runs: runs.to_vec(),
            }
        })
        .collect();
    Ok(AblationReport { seeds: cfg.seeds.clone(), arms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SynthConfig};

    fn small() -> (AlignmentDataset, HardNegativeSet) {
        let ds = generate_synthetic(&SynthConfig { num_classes: 4, samples_per_class: 10, dim_object: 6, dim_text: 5, ..Default::default() }).unwrap();
        let hn = mine(&ds, 2, MiningReference::ObjectEmbedding).unwrap();
        (ds, hn)
    }

    fn spec() -> ModelSpec {
        ModelSpec { dim_object: 6, dim_text: 5, dim_shared: 8, ..Default::default() }
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            stage1: Stage1Config { batch_size: 8, epochs: 2, lr: 1e-2, warmup_steps: 2, tau: 0.5 },
            stage2: Stage2Config { batch_size: 16, epochs: 2, lr: 1e-2, warmup_steps: 2 },
            micro_batch: 4,
            eval: ReportConfig { probe: None, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_is_untrained_baseline() {
        let (ds, hn) = small();
        let mut model = ProjectionModel::new(&spec(), 1).unwrap();
        let before = model.clone();
        let cfg = TrainConfig {
            stage1: Stage1Config { epochs: 0, ..Default::default() },
            stage2: Stage2Config { epochs: 0, ..Default::default() },
            ..quick()
        };
        let rec = train(&ds, Some(&hn), &mut model, &cfg).unwrap();
        assert!(rec.history.is_empty());
        assert_eq!(rec.initial_metrics, rec.final_metrics);
        assert_eq!(model, before);
    }

    #[test]
    fn parameter_flow_isolation() {
        let (ds, hn) = small();
        let mut model = ProjectionModel::new(&spec(), 1).unwrap();
        let rec = train(&ds, Some(&hn), &mut model, &quick()).unwrap();
        let [s1, s2] = &rec.stages[..] else { panic!("two stages") };
        assert_eq!(s1.before.classifier, s1.after.classifier);
        assert_ne!(s1.before.object_head, s1.after.object_head);
        assert_ne!(s1.before.text_heads, s1.after.text_heads);
        assert_eq!(s2.before.text_heads, s2.after.text_heads);
        assert_ne!(s2.before.classifier, s2.after.classifier);
        let steps: Vec<u64> = rec.history.iter().map(|r| r.step).collect();
        assert_eq!(steps, (1..=steps.len() as u64).collect::<Vec<_>>());
        // 30 train rows in batches of 8 keep the partial batch: 4 per epoch
        assert_eq!(s1.steps, 8);
    }

    #[test]
    fn finetune_only_freezes_projections() {
        let (ds, hn) = small();
        let mut model = ProjectionModel::new(&spec(), 1).unwrap();
        let before = model.clone();
        let cfg = TrainConfig { mode: TrainMode::FinetuneOnly, ..quick() };
        let rec = train(&ds, Some(&hn), &mut model, &cfg).unwrap();
        assert_eq!(model, before);
        assert_eq!(rec.initial_metrics, rec.final_metrics);
        assert!(rec.history.iter().all(|r| r.stage == StageKind::Stage2));
    }

    #[test]
    fn deterministic_history() {
        let (ds, hn) = small();
        let run = || {
            let mut model = ProjectionModel::new(&spec(), 3).unwrap();
            train(&ds, Some(&hn), &mut model, &TrainConfig { mode: TrainMode::OneStage, ..quick() }).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.history, b.history);
        assert_eq!(a.final_metrics, b.final_metrics);
    }

    #[test]
    fn mining_incomplete_and_config_errors() {
        let (ds, _) = small();
        let mut model = ProjectionModel::new(&spec(), 1).unwrap();
        assert!(matches!(train(&ds, None, &mut model, &quick()), Err(TrainError::MiningIncomplete { count: 32, .. })));
        // classification-only modes do not need negatives
        train(&ds, None, &mut model, &TrainConfig { mode: TrainMode::Stage2Only, ..quick() }).unwrap();
        let bad = TrainConfig { micro_batch: 0, ..quick() };
        assert!(matches!(train(&ds, None, &mut model, &bad), Err(TrainError::Config(_))));
        let mut wrong = ProjectionModel::new(&ModelSpec { dim_object: 7, ..spec() }, 1).unwrap();
        assert!(matches!(train(&ds, None, &mut wrong, &quick()), Err(TrainError::Config(_))));
    }

    #[test]
    fn arm_diffs_are_minimal() {
        let base = TrainConfig::default();
        let hard = ArmSpec::for_arm(Arm::HardNegatives, &base);
        assert_eq!(config_diff(&hard, &ArmSpec::for_arm(Arm::SimpleNegatives, &base)), vec!["negatives: \"hard\" -> \"simple\"".to_string()]);
        assert_eq!(config_diff(&hard, &ArmSpec::for_arm(Arm::OneStage, &base)), vec!["train.mode: \"two-stage\" -> \"one-stage\"".to_string()]);
        assert!(config_diff(&hard, &hard).is_empty());
    }

    #[test]
    fn ablation_report_has_every_arm() {
        let (ds, _) = small();
        let cfg = AblationConfig { base: quick(), model: spec(), seeds: vec![1, 2], arms: Arm::ALL.to_vec() };
        let report = ablation_suite(&ds, &cfg).unwrap();
        assert_eq!(report.arms.len(), 5);
        for a in &report.arms {
            assert_eq!(a.runs.len(), 2);
            assert!((0.0..=1.0).contains(&a.mc_accuracy.mean));
        }
        assert!(report.arm(Arm::ObjectCategory).unwrap().config_diff[0].contains("object_category"));
        assert_eq!(report.to_tsv().lines().count(), 6);
    }

    #[test]
    fn mode_parses() {
        assert_eq!("one-stage".parse::<TrainMode>().unwrap(), TrainMode::OneStage);
        assert!("bogus".parse::<TrainMode>().is_err());
    }
}
