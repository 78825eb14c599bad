use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use attralign_attribgen::{
    self as ag, AttributeSet, ChatRequest, Endpoint, EndpointConfig, HttpTransport, PipelineOptions, Prompts,
    RecordingTransport, ReplayTransport, ResponseCache, SampleAttributes, SampleRef, Transcript, Transport,
    TransportError,
};
use rayon::prelude::*;

use crate::commands::Ctx;
use crate::config::FileConfig;
use crate::manifest::manifest_beside;
use crate::{AttribgenCommand, EndpointFlags, UsageError};

struct Shared<T>(Arc<T>);

impl<T: Transport> Transport for Shared<T> {
    fn complete(&self, r: &ChatRequest) -> Result<String, TransportError> {
        self.0.complete(r)
    }
}

/// Both endpoints plus whatever must be flushed once the command is done.
struct Endpoints {
    llm: Endpoint,
    vqa: Endpoint,
    recorder: Option<(Arc<RecordingTransport<HttpTransport>>, Arc<RecordingTransport<HttpTransport>>)>,
    llm_cfg: EndpointConfig,
    vqa_cfg: EndpointConfig,
}

fn resolve(base: Option<&EndpointConfig>, url: &Option<String>, model: &Option<String>, f: &EndpointFlags) -> Result<EndpointConfig> {
    let mut cfg = match (base, url, model) {
        (Some(b), _, _) => b.clone(),
        (None, Some(u), Some(m)) => EndpointConfig::new(u.clone(), m.clone()),
        (None, _, _) => {
            return Err(UsageError("endpoint needs --base-url and --model (or an `llm` section in --config)".into()).into())
        }
    };
    if let Some(u) = url {
        cfg.base_url = u.clone();
    }
    if let Some(m) = model {
        cfg.model = m.clone();
    }
    if f.auth_env.is_some() {
        cfg.auth_env = f.auth_env.clone();
    }
    if let Some(t) = f.timeout {
        cfg.timeout_secs = t;
    }
    if let Some(r) = f.max_retries {
        cfg.max_retries = r;
    }
    if let Some(b) = f.backoff_ms {
        cfg.backoff_base_ms = b;
    }
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(cfg)
}

fn endpoints(file: &FileConfig, f: &EndpointFlags) -> Result<Endpoints> {
    let llm_cfg = resolve(file.llm.as_ref(), &f.base_url, &f.model, f)?;
    let vqa_base = file.vqa.as_ref().unwrap_or(&llm_cfg);
    let vqa_cfg = resolve(Some(vqa_base), &f.vqa_base_url, &f.vqa_model, f)?;

    let mut recorder = None;
    let (lt, vt): (Box<dyn Transport>, Box<dyn Transport>) = if let Some(p) = &f.replay {
        let text = fs::read_to_string(p).with_context(|| format!("reading transcript {}", p.display()))?;
        let t: Transcript = serde_json::from_str(&text).with_context(|| format!("parsing transcript {}", p.display()))?;
        (Box::new(ReplayTransport::new(t.clone())), Box::new(ReplayTransport::new(t)))
    } else if f.record.is_some() {
        let l = Arc::new(RecordingTransport::new(HttpTransport::new(llm_cfg.clone())));
        let v = Arc::new(RecordingTransport::new(HttpTransport::new(vqa_cfg.clone())));
        recorder = Some((l.clone(), v.clone()));
        (Box::new(Shared(l)), Box::new(Shared(v)))
    } else {
        (Box::new(HttpTransport::new(llm_cfg.clone())), Box::new(HttpTransport::new(vqa_cfg.clone())))
    };
    let mut llm = Endpoint::new(llm_cfg.clone(), lt)?;
    let mut vqa = Endpoint::new(vqa_cfg.clone(), vt)?;
    if let Some(dir) = &f.cache {
        llm = llm.with_cache(ResponseCache::open(dir)?);
        vqa = vqa.with_cache(ResponseCache::open(dir)?);
    }
    Ok(Endpoints { llm, vqa, recorder, llm_cfg, vqa_cfg })
}

impl Endpoints {
    fn flush(&self, f: &EndpointFlags) -> Result<()> {
        if let (Some(path), Some((l, v))) = (&f.record, &self.recorder) {
            let mut t = l.transcript();
            t.responses.extend(v.transcript().responses);
            fs::write(path, serde_json::to_string_pretty(&t)? + "\n")
                .with_context(|| format!("writing transcript {}", path.display()))?;
        }
        if let (Some(a), Some(b)) = (self.llm.cache(), self.vqa.cache()) {
            eprintln!("cache: {} hits, {} misses", a.hits() + b.hits(), a.misses() + b.misses());
        }
        Ok(())
    }

    fn file_config(&self, pipeline: Option<PipelineOptions>) -> FileConfig {
        FileConfig { llm: Some(self.llm_cfg.clone()), vqa: Some(self.vqa_cfg.clone()), pipeline, ..Default::default() }
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let r = BufReader::new(fs::File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn read_attributes(path: &Path) -> Result<AttributeSet> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let set: AttributeSet = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if set.names.first().map(String::as_str) != Some(ag::GENERAL_ATTRIBUTE) {
        anyhow::bail!("{}: first attribute must be {:?}", path.display(), ag::GENERAL_ATTRIBUTE);
    }
    Ok(set)
}

fn read_names(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect())
}

fn pipeline_options(ctx: &Ctx, super_category: Option<String>, class_unit: Option<String>, f: &EndpointFlags) -> Result<PipelineOptions> {
    let mut opts = ctx.file.pipeline.clone().unwrap_or_else(|| PipelineOptions::new("", ""));
    if let Some(s) = super_category {
        opts.super_category = s;
    }
    if let Some(c) = class_unit {
        opts.class_unit = c;
    }
    if let Some(n) = f.max_in_flight {
        opts.max_in_flight = n;
    }
    if opts.super_category.trim().is_empty() || opts.class_unit.trim().is_empty() {
        return Err(UsageError("--super and --class-unit are required".into()).into());
    }
    if opts.max_in_flight == 0 {
        return Err(UsageError("--max-in-flight must be at least 1".into()).into());
    }
    Ok(opts)
}

fn in_pool<T: Send>(max_in_flight: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(max_in_flight.max(1)).build()?;
    Ok(pool.install(job))
}

pub fn run(ctx: &Ctx, cmd: AttribgenCommand) -> Result<()> {
    match cmd {
        AttribgenCommand::Discover { super_category, class_unit, endpoint, out } => {
            let opts = pipeline_options(ctx, super_category, class_unit, &endpoint)?;
            let eps = endpoints(&ctx.file, &endpoint)?;
            let attrs = ag::discover(&eps.llm, &Prompts::default(), &opts.super_category, &opts.class_unit)?;
            fs::write(&out, serde_json::to_string_pretty(&attrs)? + "\n")?;
            eps.flush(&endpoint)?;
            let mut m = ctx.manifest("attribgen discover");
            m.config(eps.file_config(Some(opts))).output(&out)?;
            m.finish(&manifest_beside(&out))?;
            println!("{} attributes written to {}", attrs.names.len(), out.display());
        }
        AttribgenCommand::Extract { attributes, samples, resume, endpoint, out } => {
            let attrs = read_attributes(&attributes)?;
            let refs: Vec<SampleRef> = read_jsonl(&samples)?;
            let previous: Vec<SampleAttributes> = match &resume {
                Some(p) => ag::read_triples(p)?,
                None => Vec::new(),
            };
            let eps = endpoints(&ctx.file, &endpoint)?;
            let prompts = Prompts::default();
            let results: Vec<Result<SampleAttributes, ag::AttribError>> =
                in_pool(endpoint.max_in_flight.unwrap_or(4), || {
                    refs.par_iter()
                        .map(|s| {
                            let prev = previous.iter().find(|p| p.sample_id == s.id);
                            ag::extract(&eps.vqa, &prompts, s, &attrs, prev)
                        })
                        .collect()
                })?;
            let extracted: Vec<SampleAttributes> = results.into_iter().collect::<Result<_, _>>()?;
            ag::write_triples(&out, &extracted)?;
            eps.flush(&endpoint)?;
            let failed: usize = extracted.iter().map(|s| s.failed_keys().len()).sum();
            let mut m = ctx.manifest("attribgen extract");
            m.config(eps.file_config(None)).input_file(&attributes)?.input_file(&samples)?.output(&out)?;
            m.finish(&manifest_beside(&out))?;
            println!("extracted {} samples ({failed} failed keys) to {}", extracted.len(), out.display());
            if failed > 0 {
                eprintln!("warning: {failed} attribute values failed; rerun with --resume {} to retry them", out.display());
            }
        }
        AttribgenCommand::Summarize { attributes, extracted, scrub_names, endpoint, out } => {
            let attrs = read_attributes(&attributes)?;
            let samples = ag::read_triples(&extracted)?;
            let names = scrub_names.as_deref().map(read_names).transpose()?;
            let eps = endpoints(&ctx.file, &endpoint)?;
            let prompts = Prompts::default();
            let mut done = Vec::with_capacity(samples.len());
            let mut incomplete = 0;
            for s in &samples {
                match ag::summarize(&eps.llm, &prompts, s, &attrs) {
                    Ok(mut d) => {
                        if let (Some(n), Some(text)) = (&names, &d.summary) {
                            d.summary = Some(ag::scrub_class_names(text, n, &format!("this {}", attrs.super_category)));
                        }
                        done.push(d);
                    }
                    Err(e @ (ag::AttribError::MissingKeys(_) | ag::AttribError::Transport { .. })) => {
                        eprintln!("warning: sample {}: {e}", s.sample_id);
                        incomplete += 1;
                        done.push(s.clone());
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            ag::write_triples(&out, &done)?;
            eps.flush(&endpoint)?;
            let mut m = ctx.manifest("attribgen summarize");
            m.config(eps.file_config(None)).input_file(&attributes)?.input_file(&extracted)?.output(&out)?;
            m.finish(&manifest_beside(&out))?;
            println!("summarized {} of {} samples to {}", done.len() - incomplete, done.len(), out.display());
        }
        AttribgenCommand::Run { super_category, class_unit, samples, scrub_names, endpoint, out } => {
            let mut opts = pipeline_options(ctx, super_category, class_unit, &endpoint)?;
            if let Some(p) = &scrub_names {
                opts.scrub_names = Some(read_names(p)?);
            }
            let refs: Vec<SampleRef> = read_jsonl(&samples)?;
            let eps = endpoints(&ctx.file, &endpoint)?;
            let result = ag::run_pipeline(&eps.llm, &eps.vqa, &Prompts::default(), &refs, &opts)?;
            ag::write_triples(&out, &result.samples)?;
            let attrs_path = out.with_extension("attributes.json");
            fs::write(&attrs_path, serde_json::to_string_pretty(&result.attributes)? + "\n")?;
            eps.flush(&endpoint)?;
            for (id, reason) in &result.incomplete {
                eprintln!("warning: sample {id}: {reason}");
            }
            let mut m = ctx.manifest("attribgen run");
            m.config(eps.file_config(Some(opts))).input_file(&samples)?.output(&out)?.output(&attrs_path)?;
            m.finish(&manifest_beside(&out))?;
            println!(
                "{} attributes, {} samples ({} incomplete) written to {}",
                result.attributes.names.len(),
                result.samples.len(),
                result.incomplete.len(),
                out.display()
            );
        }
    }
    Ok(())
}
