use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use attralign::dataset::{self, AlignmentDataset, Split};
use attralign::diagnostics::{
    alignment_quality_raw, discriminability, export_projection, linear_probe, metrics_report, ExportMethod,
    ProbeConfig,
};
use attralign::mining::{self, HardNegativeSet, MiningReference, NegativeKind};
use attralign::model::{load_checkpoint, save_checkpoint, Checkpoint, ModelSpec, ProjectionModel};
use attralign::numerics::Matrix;
use attralign::training::{self, AblationConfig, TrainConfig, TrainMode};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{AblationSection, FileConfig, MiningSection};
use crate::manifest::{manifest_beside, ManifestBuilder, MANIFEST_NAME};
use crate::{
    AblateArgs, DiagArgs, EvalArgs, ExportArgs, GenSynthArgs, InspectArgs, MethodArg, MineArgs, ProbeArgs, Space,
    SplitArg, TrainArgs, TrainFlags, UsageError,
};

pub struct Ctx {
    pub file: FileConfig,
    pub argv: Vec<String>,
    pub threads: Option<usize>,
}

impl Ctx {
    pub fn manifest(&self, command: &str) -> ManifestBuilder {
        ManifestBuilder::new(command, &self.argv, self.threads)
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn load_dataset(dir: &Path) -> Result<AlignmentDataset> {
    dataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn gen_synth(ctx: &Ctx, a: GenSynthArgs) -> Result<()> {
    let mut cfg = ctx.file.synth.clone().unwrap_or_default();
    set(&mut cfg.num_classes, a.classes);
    set(&mut cfg.samples_per_class, a.per_class);
    set(&mut cfg.dim_object, a.dim_object);
    set(&mut cfg.dim_text, a.dim_text);
    set(&mut cfg.inter_class_spread, a.spread);
    set(&mut cfg.intra_class_sigma, a.sigma);
    set(&mut cfg.modality_gap_offset, a.gap);
    set(&mut cfg.attribute_noise_sigma, a.attribute_noise);
    set(&mut cfg.seed, a.seed);
    let ds = dataset::generate_synthetic(&cfg)?;
    dataset::save(&ds, &a.out)?;

    let mut m = ctx.manifest("gen-synth");
    m.config(FileConfig { synth: Some(cfg.clone()), ..Default::default() }).seed(cfg.seed);
    m.output(&a.out)?;
    m.finish(&a.out.join(MANIFEST_NAME))?;
    println!(
        "wrote {} samples ({} classes, d_obj {}, d_txt {}) to {}",
        ds.len(),
        ds.num_categories(),
        ds.dim_object(),
        ds.dim_text(),
        a.out.display()
    );
    Ok(())
}

pub fn inspect(_ctx: &Ctx, a: InspectArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let c = ds.num_categories();
    let mut train = vec![0usize; c];
    let mut test = vec![0usize; c];
    for s in ds.samples() {
        match s.split {
            Split::Train => train[s.category] += 1,
            Split::Test => test[s.category] += 1,
        }
    }
    if a.json {
        let v = serde_json::json!({
            "super_category": ds.table().super_category(),
            "samples": ds.len(),
            "categories": c,
            "dim_object": ds.dim_object(),
            "dim_text": ds.dim_text(),
            "pooling": ds.pooling(),
            "train_per_class": train,
            "test_per_class": test,
        });
        println!("{}", serde_json::to_string_pretty(&v)?);
        return Ok(());
    }
    let mut out = String::new();
    let _ = writeln!(out, "super-category  {}", ds.table().super_category());
    let _ = writeln!(out, "samples         {} (train {}, test {})", ds.len(), train.iter().sum::<usize>(), test.iter().sum::<usize>());
    let _ = writeln!(out, "categories      {c}");
    let _ = writeln!(out, "dims            object {}, text {}", ds.dim_object(), ds.dim_text());
    let _ = writeln!(out, "id\tname\ttrain\ttest");
    for cat in ds.table().iter() {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", cat.id, cat.name, train[cat.id], test[cat.id]);
    }
    print!("{out}");
    Ok(())
}

fn negatives(ds: &AlignmentDataset, section: &MiningSection) -> Result<HardNegativeSet> {
    Ok(match section.kind {
        NegativeKind::Hard => mining::mine(ds, section.k, MiningReference::ObjectEmbedding)?,
        NegativeKind::Simple => mining::sample_simple(ds, section.k, section.seed)?,
    })
}

fn warn_if_clamped(set: &HardNegativeSet) {
    if set.is_clamped() {
        eprintln!(
            "warning: k={} clamped to {} per anchor (not enough other categories)",
            set.k,
            set.effective_k()
        );
    }
}

pub fn mine(ctx: &Ctx, a: MineArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let mut section = ctx.file.mining.clone().unwrap_or_default();
    set(&mut section.k, a.k);
    set(&mut section.kind, a.kind);
    set(&mut section.seed, a.seed);
    if section.k == 0 {
        return Err(UsageError("--k must be at least 1".into()).into());
    }
    let set = negatives(&ds, &section)?;
    warn_if_clamped(&set);
    let out = a.out.unwrap_or_else(|| a.dataset.join("negatives.json"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    set.save(&out)?;

    let mut m = ctx.manifest("mine");
    m.config(FileConfig { mining: Some(section.clone()), ..Default::default() }).seed(section.seed);
    m.input_dataset(&a.dataset)?.output(&out)?;
    m.finish(&manifest_beside(&out))?;
    println!("wrote negatives for {} anchors (k={}) to {}", set.len(), set.effective_k(), out.display());
    Ok(())
}

fn apply_train_flags(cfg: &mut TrainConfig, spec: &mut ModelSpec, f: &TrainFlags) {
    set(&mut cfg.mode, f.mode);
    set(&mut cfg.objective, f.objective);
    set(&mut cfg.k_hard_negatives, f.k);
    set(&mut cfg.micro_batch, f.micro_batch);
    set(&mut cfg.stage1.batch_size, f.batch_size);
    set(&mut cfg.stage1.epochs, f.epochs);
    set(&mut cfg.stage1.lr, f.lr);
    set(&mut cfg.stage1.warmup_steps, f.warmup);
    set(&mut cfg.stage1.tau, f.tau);
    set(&mut cfg.stage2.batch_size, f.stage2_batch_size);
    set(&mut cfg.stage2.epochs, f.stage2_epochs);
    set(&mut cfg.stage2.lr, f.stage2_lr);
    set(&mut cfg.stage2.warmup_steps, f.stage2_warmup);
    set(&mut cfg.one_stage_weight, f.one_stage_weight);
    set(&mut cfg.eval.choices, f.choices);
    if f.no_probe {
        cfg.eval.probe = None;
    }
    set(&mut spec.dim_shared, f.dim_shared);
    if f.hidden.is_some() {
        spec.hidden = f.hidden;
    }
    set(&mut spec.layers, f.layers);
    if f.untied {
        spec.tie_text_heads = false;
    }
}

fn needs_negatives(cfg: &TrainConfig) -> bool {
    matches!(cfg.mode, TrainMode::TwoStage | TrainMode::OneStage) && cfg.stage1.epochs > 0
}

pub fn train(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let mut cfg = ctx.file.train.clone().unwrap_or_default();
    let mut spec = ctx.file.model.clone().unwrap_or_default();
    apply_train_flags(&mut cfg, &mut spec, &a.flags);
    set(&mut cfg.seed, a.seed);
    spec.dim_object = ds.dim_object();
    spec.dim_text = ds.dim_text();
    cfg.validate()?;

    let mut m = ctx.manifest("train");
    m.input_dataset(&a.dataset)?;
    let hn = match (&a.negatives, needs_negatives(&cfg)) {
        (Some(p), _) => {
            m.input_file(p)?;
            Some(HardNegativeSet::load(p)?)
        }
        (None, true) => {
            let set = mining::mine(&ds, cfg.k_hard_negatives, MiningReference::ObjectEmbedding)?;
            warn_if_clamped(&set);
            Some(set)
        }
        (None, false) => None,
    };

    let mut model = ProjectionModel::new(&spec, cfg.seed)?;
    let start = Instant::now();
    let mut record = training::train(&ds, hn.as_ref(), &mut model, &cfg)?;
    m.timing("train_total", start.elapsed().as_secs_f64());
    for s in &mut record.stages {
        m.timing(&format!("{:?}", s.stage).to_lowercase(), s.wall_seconds);
        s.wall_seconds = 0.0;
    }

    let out = a.out.unwrap_or_else(|| a.dataset.join("train"));
    fs::create_dir_all(&out)?;
    let steps = record.history.last().map_or(0, |h| h.step);
    save_checkpoint(
        &Checkpoint { model, classifier: Some(record.classifier.clone()), step: steps, seed: cfg.seed },
        &out.join("checkpoint"),
    )?;
    write(&out.join("history.tsv"), &record.history_tsv())?;
    write(&out.join("run.json"), &(serde_json::to_string_pretty(&record)? + "\n"))?;
    write(&out.join("metrics.json"), &(record.final_metrics.to_json() + "\n"))?;
    write(&out.join("metrics.tsv"), &record.final_metrics.to_tsv())?;

    m.config(FileConfig { train: Some(cfg.clone()), model: Some(spec), ..Default::default() }).seed(cfg.seed);
    m.output(&out)?;
    m.finish(&out.join(MANIFEST_NAME))?;
    let (i, f) = (&record.initial_metrics, &record.final_metrics);
    println!("steps            {steps}");
    println!("alignment        {:.4} -> {:.4}", i.alignment_quality, f.alignment_quality);
    println!("mc accuracy      {:.4} -> {:.4} ({} choices)", i.mc_accuracy, f.mc_accuracy, f.mc_choices);
    println!("classifier acc   {:.4}", record.classifier_accuracy);
    println!("output           {}", out.display());
    Ok(())
}

pub fn ablate(ctx: &Ctx, a: AblateArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let mut base = ctx.file.train.clone().unwrap_or_default();
    let mut spec = ctx.file.model.clone().unwrap_or_default();
    apply_train_flags(&mut base, &mut spec, &a.flags);
    spec.dim_object = ds.dim_object();
    spec.dim_text = ds.dim_text();
    base.validate()?;
    let mut section: AblationSection = ctx.file.ablation.clone().unwrap_or_default();
    set(&mut section.seeds, a.seeds);
    set(&mut section.arms, a.arms);
    let cfg = AblationConfig { base: base.clone(), model: spec.clone(), seeds: section.seeds.clone(), arms: section.arms.clone() };

    let start = Instant::now();
    let report = training::ablation_suite(&ds, &cfg)?;
    let out = a.out.unwrap_or_else(|| a.dataset.join("ablation"));
    fs::create_dir_all(&out)?;
    write(&out.join("ablation.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    write(&out.join("ablation.tsv"), &report.to_tsv())?;

    let mut m = ctx.manifest("ablate");
    m.input_dataset(&a.dataset)?;
    m.config(FileConfig { train: Some(base), model: Some(spec), ablation: Some(section), ..Default::default() });
    m.timing("ablation_total", start.elapsed().as_secs_f64());
    m.output(&out)?;
    m.finish(&out.join(MANIFEST_NAME))?;
    print!("{}", report.to_tsv());
    Ok(())
}

fn model_or_raw(ds: &AlignmentDataset, checkpoint: Option<&PathBuf>) -> Result<Option<ProjectionModel>> {
    match checkpoint {
        Some(p) => {
            let ck = load_checkpoint(p).with_context(|| format!("loading checkpoint {}", p.display()))?;
            if ck.model.dim_object() != ds.dim_object() || ck.model.dim_text() != ds.dim_text() {
                bail!(
                    "checkpoint expects dims ({}, {}), dataset has ({}, {})",
                    ck.model.dim_object(),
                    ck.model.dim_text(),
                    ds.dim_object(),
                    ds.dim_text()
                );
            }
            Ok(Some(ck.model))
        }
        None => Ok(None),
    }
}

fn write_json_or_print(out: Option<&PathBuf>, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => write(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn probe(ctx: &Ctx, a: ProbeArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let model = model_or_raw(&ds, a.checkpoint.as_ref())?;
    let mut cfg = ProbeConfig::default();
    set(&mut cfg.epochs, a.epochs);
    set(&mut cfg.lr, a.lr);
    let seed = a.seed.unwrap_or(dataset::DEFAULT_SEED);

    let train_ids = ds.split_ids(Split::Train);
    let test_ids = ds.split_ids(Split::Test);
    let mut train_labels = ds.labels(&train_ids);
    let test_labels = ds.labels(&test_ids);
    if a.shuffle_labels {
        train_labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let (train_raw, test_raw) = (ds.object_matrix(&train_ids), ds.object_matrix(&test_ids));
    let mut result = serde_json::Map::new();
    result.insert("raw_object".into(), linear_probe(&train_raw, &train_labels, &test_raw, &test_labels, cfg)?.into());
    if let Some(model) = &model {
        let tr = model.project_objects(&train_raw)?;
        let te = model.project_objects(&test_raw)?;
        result.insert("projected_object".into(), linear_probe(&tr, &train_labels, &te, &test_labels, cfg)?.into());
    }
    let value = serde_json::json!({
        "probe": cfg,
        "shuffled_labels": a.shuffle_labels,
        "chance": 1.0 / ds.num_categories() as f64,
        "accuracy": result,
    });
    write_json_or_print(a.out.as_ref(), &value)?;
    if let Some(out) = &a.out {
        let mut m = ctx.manifest("probe");
        m.input_dataset(&a.dataset)?.seed(seed);
        if let Some(c) = &a.checkpoint {
            m.input_file(&c.join("params.f64"))?;
        }
        m.output(out)?;
        m.finish(&manifest_beside(out))?;
    }
    Ok(())
}

fn test_views(ds: &AlignmentDataset, model: Option<&ProjectionModel>) -> Result<(Matrix, Vec<usize>, Matrix)> {
    let ids = ds.split_ids(Split::Test);
    let labels = ds.labels(&ids);
    let objects = ds.object_matrix(&ids);
    let categories = ds.table().embedding_matrix();
    match model {
        Some(m) => Ok((m.project_objects(&objects)?, labels, m.project_categories(&categories)?)),
        None => {
            if ds.dim_object() != ds.dim_text() {
                return Err(UsageError(format!(
                    "raw object ({}) and text ({}) dims differ; pass --checkpoint",
                    ds.dim_object(),
                    ds.dim_text()
                ))
                .into());
            }
            Ok((objects, labels, categories))
        }
    }
}

pub fn diag(ctx: &Ctx, a: DiagArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let model = model_or_raw(&ds, a.checkpoint.as_ref())?;
    let (objects, labels, categories) = test_views(&ds, model.as_ref())?;
    let d = discriminability(&objects, &labels)?;
    let value = serde_json::json!({
        "space": if model.is_some() { "projected" } else { "raw" },
        "alignment_quality": alignment_quality_raw(&objects, &labels, &categories)?,
        "inter_class_distance": d.inter_class_distance,
        "intra_class_variance": d.intra_class_variance,
    });
    write_json_or_print(a.out.as_ref(), &value)?;
    if let Some(out) = &a.out {
        let mut m = ctx.manifest("diag");
        m.input_dataset(&a.dataset)?;
        if let Some(c) = &a.checkpoint {
            m.input_file(&c.join("params.f64"))?;
        }
        m.output(out)?;
        m.finish(&manifest_beside(out))?;
    }
    Ok(())
}

pub fn eval(ctx: &Ctx, a: EvalArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let model = model_or_raw(&ds, Some(&a.checkpoint))?.expect("checkpoint given");
    let mut cfg = ctx.file.train.as_ref().map(|t| t.eval).unwrap_or_default();
    set(&mut cfg.choices, a.choices);
    set(&mut cfg.seed, a.seed);
    cfg.probe = a.probe.then(ProbeConfig::default);
    let report = metrics_report(&ds, &model, &cfg)?;
    match &a.out {
        Some(out) => {
            fs::create_dir_all(out)?;
            write(&out.join("metrics.json"), &(report.to_json() + "\n"))?;
            write(&out.join("metrics.tsv"), &report.to_tsv())?;
            write(&out.join("confusion.txt"), &report.confusion_grid())?;
            let mut m = ctx.manifest("eval");
            m.input_dataset(&a.dataset)?.input_file(&a.checkpoint.join("params.f64"))?.seed(cfg.seed);
            m.config(FileConfig {
                train: Some(TrainConfig { eval: cfg, ..Default::default() }),
                ..Default::default()
            });
            m.output(out)?;
            m.finish(&out.join(MANIFEST_NAME))?;
            println!("mc accuracy {:.4} ({} choices); wrote {}", report.mc_accuracy, report.mc_choices, out.display());
        }
        None => {
            print!("{}", report.to_tsv());
            println!("confusion (rows = true class)");
            print!("{}", report.confusion_grid());
        }
    }
    Ok(())
}

pub fn export(ctx: &Ctx, a: ExportArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let model = model_or_raw(&ds, a.checkpoint.as_ref())?;
    let ids: Vec<usize> = match a.split {
        SplitArg::Train => ds.split_ids(Split::Train),
        SplitArg::Test => ds.split_ids(Split::Test),
        SplitArg::All => (0..ds.len()).collect(),
    };
    let (emb, labels) = match a.space {
        Space::Object => {
            let x = ds.object_matrix(&ids);
            (match &model { Some(m) => m.project_objects(&x)?, None => x }, ds.labels(&ids))
        }
        Space::Attribute => {
            let x = ds.attribute_matrix(&ids);
            (match &model { Some(m) => m.project_attributes(&x)?, None => x }, ds.labels(&ids))
        }
        Space::Category => {
            let x = ds.table().embedding_matrix();
            (match &model { Some(m) => m.project_categories(&x)?, None => x }, (0..ds.num_categories()).collect())
        }
    };
    let method = match a.method {
        MethodArg::Pca2d => ExportMethod::Pca2d,
        MethodArg::Raw => ExportMethod::Raw,
    };
    let proj = export_projection(&emb, &labels, method)?;
    if proj.degenerate_fallback {
        eprintln!("warning: covariance is degenerate; exported raw coordinates instead of PCA");
    }
    write(&a.out, &proj.to_tsv())?;
    let mut m = ctx.manifest("export");
    m.input_dataset(&a.dataset)?;
    if let Some(c) = &a.checkpoint {
        m.input_file(&c.join("params.f64"))?;
    }
    m.output(&a.out)?;
    m.finish(&manifest_beside(&a.out))?;
    println!("wrote {} points to {}", labels.len(), a.out.display());
    Ok(())
}
