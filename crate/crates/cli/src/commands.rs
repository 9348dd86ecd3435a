//! One function per subcommand.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use cmkt::dataset::{
    load_raw_dataset, save_cache, split_dataset, synthetic_nozzle_mask, write_raw_dataset, DatasetSplit, Modality, PairedSample,
    PreprocessParams, SyntheticConfig,
};
use cmkt::diagnostics::Kde;
use cmkt::evaluation::{
    config_hash, evaluate_model, evaluate_on, median_runtime, noise_sweep, noise_table_csv, summaries_csv, summarize_topk, MetricsReport,
    NoiseCell, RunReport,
};
use cmkt::training::{
    hyperparameter_search, select_top_k_and_retrain, train_method, MethodPlan, RandomSampler, Sampler, SnapshotOptions,
    TpeSampler, TrainOverrides, TrainedModel, TrialOutcome,
};
use cmkt::xai::{explain_samples, frequency_histogram, intersection_stats, read_mask, write_explanations};
use cmkt::CmktError;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{load_data, resolve_plan, DataConfig, LoadedData, RunConfig};
use crate::fetch::{fetch, Transport};
use crate::manifest::{RunDir, RunManifest};
use crate::{
    DataArgs, EvaluateArgs, ExplainArgs, FetchArgs, NoiseSweepArgs, PlanArgs, PreprocessArgs, ReportArgs, SearchArgs, SynthArgs, TrainArgs,
    TrainFlags,
};

fn load_config(arg: Option<&str>) -> Result<RunConfig> {
    arg.map(RunConfig::load).transpose().map(Option::unwrap_or_default)
}

fn overrides(base: &TrainOverrides, f: &TrainFlags) -> TrainOverrides {
    base.merged(&TrainOverrides {
        learning_rate: f.learning_rate,
        weight_decay: f.weight_decay,
        epochs: f.epochs,
        batch_size: f.batch_size,
        seed: f.seed,
        margin: f.margin,
        tradeoff: f.tradeoff,
        snapshot_every: f.snapshot_every,
        ..Default::default()
    })
}

fn data_config(cfg: &DataConfig, a: &DataArgs) -> DataConfig {
    if let Some(p) = &a.data {
        return DataConfig { cache: Some(p.clone()), synthetic: None };
    }
    if let Some(n) = a.synthetic {
        let base = cfg.synthetic.clone().unwrap_or_default();
        let syn = SyntheticConfig {
            n_samples: n,
            seed: a.data_seed.unwrap_or(base.seed),
            visual_nuisance_strength: a.nuisance.unwrap_or(base.visual_nuisance_strength),
            ..base
        };
        return DataConfig { cache: None, synthetic: Some(syn) };
    }
    cfg.clone()
}

fn plan_from(a: &PlanArgs, cfg: &RunConfig) -> Result<MethodPlan> {
    let method = a.method.or(cfg.method).ok_or_else(|| anyhow!("--method is required (or `method` in --config)"))?;
    let direction = a.direction.or(cfg.direction).unwrap_or_default();
    let scale = a.scale.or(cfg.scale).unwrap_or_default();
    let presets = if a.presets.is_empty() { &cfg.presets } else { &a.presets };
    resolve_plan(method, direction, scale, presets, &overrides(&cfg.train, &a.train))
}

fn part<'a>(split: &'a DatasetSplit, name: &str) -> Result<&'a [PairedSample]> {
    split
        .parts()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| s)
        .ok_or_else(|| anyhow!("unknown split `{name}` (train, validation, test)"))
}

/// `p/model` when `p` is a train run directory, else `p`.
fn model_dir(p: &Path) -> PathBuf {
    let nested = p.join("model");
    if nested.join("model.json").exists() {
        nested
    } else {
        p.to_path_buf()
    }
}

fn model_identity(dir: &Path) -> Result<String> {
    let manifest = dir.join("model.json");
    let text = fs::read_to_string(&manifest).map_err(|_| CmktError::MissingArtifact {
        path: manifest.clone(),
        hint: "run `cmkt train` and pass its run directory or model/ subdirectory".into(),
    })?;
    let canon = dir.canonicalize().unwrap_or_else(|_| dir.to_path_buf());
    Ok(config_hash(&json!({ "path": canon, "manifest": text }))?)
}

fn parent_seed(model_dir: &Path) -> u64 {
    model_dir.parent().and_then(|p| RunManifest::read(p).ok()).map(|m| m.seed).unwrap_or(0)
}

pub fn cmd_fetch(root: &Path, a: FetchArgs, transport: &dyn Transport) -> Result<()> {
    let dest = a.dest.unwrap_or_else(|| root.join("dataset"));
    let out = fetch(transport, &a.record_url, &dest, a.force)?;
    if out.skipped {
        log::info!("fetch: nothing to do");
    }
    println!("{}", out.dataset_dir.display());
    Ok(())
}

pub fn cmd_synth(root: &Path, a: SynthArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        n_samples: a.n,
        seed: a.seed,
        shared_signal_strength: a.signal,
        visual_nuisance_strength: a.nuisance,
        visual_noise_std: a.visual_noise,
        audio_noise_std: a.audio_noise,
        class_ratio: a.class_ratio,
    };
    cfg.validate()?;
    let hash = config_hash(&cfg)?;
    let mut rd = RunDir::create(root, Some(&a.out), "synth", &hash, &hash, a.seed)?;
    let samples = cmkt::dataset::generate_synthetic(&cfg)?;
    write_raw_dataset(&rd.path, &samples)?;
    for name in ["frames", "audio", "labels.csv"] {
        rd.output(name);
    }
    rd.write_json("synthetic.json", &cfg)?;
    rd.finish()?;
    Ok(())
}

pub fn cmd_preprocess(root: &Path, a: PreprocessArgs) -> Result<()> {
    let params = PreprocessParams { split_seed: a.split_seed, ..Default::default() };
    let canon = a.raw.canonicalize().map_err(|_| CmktError::MissingArtifact {
        path: a.raw.clone(),
        hint: "raw dataset directory not found; create it with `cmkt fetch` or `cmkt synth`".into(),
    })?;
    let samples = load_raw_dataset(&a.raw)?;
    let n = samples.len();
    let split = split_dataset(samples, params.split_ratio, params.split_seed)?;
    let hash = config_hash(&json!({ "raw": canon, "params": params }))?;
    let mut rd = RunDir::create(root, a.out.as_deref(), "preprocess", &hash, "", params.split_seed)?;
    let cache = rd.output("cache");
    let manifest = save_cache(&cache, &split, &params)?;
    let data_hash = manifest.data_hash();
    rd.write_json("preprocess.json", &json!({ "samples": n, "sizes": split.sizes(), "data_hash": data_hash }))?;
    rd.set_data_hash(&data_hash);
    rd.finish()?;
    Ok(())
}

pub fn cmd_train(root: &Path, a: TrainArgs) -> Result<()> {
    let cfg = load_config(a.plan.config.as_deref())?;
    let plan = plan_from(&a.plan, &cfg)?;
    let LoadedData { split, data_hash } = load_data(&data_config(&cfg.data, &a.data))?;
    let hash = config_hash(&json!({ "plan": plan, "data": data_hash, "export_encodings": a.export_encodings }))?;
    let mut rd = RunDir::create(root, a.out.as_deref(), "train", &hash, &data_hash, plan.primary_cfg().seed)?;
    rd.write_json("plan.json", &plan)?;

    let opts = SnapshotOptions { export_dir: a.export_encodings.then(|| rd.output("encodings")), ..Default::default() };
    let outcome = train_method(&plan, &split, &opts)?;
    outcome.model.save(&rd.output("model"))?;
    rd.write_json("history.json", &outcome.histories)?;
    if !outcome.snapshots.is_empty() {
        rd.write_json("snapshots.json", &outcome.snapshots)?;
    }
    let metrics = evaluate_model(&outcome.model, &split, outcome.training_runtime_s)?;
    log::info!("train: test accuracy {:.4} on {}", metrics.accuracy, metrics.modality);
    rd.write_json("metrics.json", &metrics)?;
    rd.write_json("report.json", &RunReport::new(&plan, &data_hash, metrics)?)?;
    rd.finish()?;
    Ok(())
}

/// One retrained top-k model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrainedRecord {
    pub rank: usize,
    pub trial_id: usize,
    pub seed: u64,
    pub report: RunReport,
}

pub fn cmd_search(root: &Path, a: SearchArgs) -> Result<()> {
    let cfg = load_config(a.plan.config.as_deref())?;
    let base = plan_from(&a.plan, &cfg)?;
    let LoadedData { split, data_hash } = load_data(&data_config(&cfg.data, &a.data))?;
    let trials = a.trials.or(cfg.search.trials).unwrap_or(20);
    let sampler_name = a.sampler.clone().or(cfg.search.sampler.clone()).unwrap_or_else(|| "tpe".into());
    let top_k = a.top_k.or(cfg.search.top_k).unwrap_or(0);
    let space = cfg.search.space.clone().unwrap_or_default();
    let seed = base.primary_cfg().seed;
    let mut sampler: Box<dyn Sampler> = match sampler_name.as_str() {
        "tpe" => Box::new(TpeSampler::new(seed)),
        "random" => Box::new(RandomSampler::new(seed)),
        other => bail!("unknown sampler `{other}` (tpe, random)"),
    };
    if top_k > trials {
        bail!("--top-k {top_k} exceeds --trials {trials}");
    }
    let hash = config_hash(&json!({
        "plan": base, "data": data_hash, "trials": trials, "sampler": sampler_name, "space": space,
        "top_k": top_k, "keep_checkpoints": a.keep_checkpoints,
    }))?;
    let mut rd = RunDir::create(root, a.out.as_deref(), "search", &hash, &data_hash, seed)?;
    rd.write_json("plan.json", &base)?;
    rd.write_json("space.json", &space)?;
    let ledger = rd.output("ledger.csv");
    if ledger.exists() {
        fs::remove_file(&ledger)?;
    }
    if a.keep_checkpoints {
        rd.output("trials");
    }
    let run_path = rd.path.clone();
    let records = hyperparameter_search(&space, trials, sampler.as_mut(), Some(&ledger), |id, h| {
        let plan = base.with_hyperparams(h)?;
        let out = train_method(&plan, &split, &SnapshotOptions::default())?;
        let val = evaluate_on(&out.model, &split.validation)?;
        let checkpoint = if a.keep_checkpoints {
            let rel = format!("trials/{id}");
            out.model.save(&run_path.join(&rel))?;
            Some(rel)
        } else {
            None
        };
        Ok(TrialOutcome { val_accuracy: val.accuracy, checkpoint })
    })?;

    if top_k > 0 {
        let mut rank = 0;
        let retrained = select_top_k_and_retrain(&records, top_k, seed, |t, s| -> cmkt::Result<RetrainedRecord> {
            let mut plan = base.with_hyperparams(&t.params)?;
            plan.override_all(&TrainOverrides { seed: Some(s), ..Default::default() })?;
            let out = train_method(&plan, &split, &SnapshotOptions::default())?;
            let metrics = evaluate_model(&out.model, &split, out.training_runtime_s)?;
            let mut report = RunReport::new(&plan, &data_hash, metrics)?;
            report.notes.push(format!("retrained from trial {}", t.trial_id));
            if a.keep_checkpoints {
                out.model.save(&run_path.join(format!("retrained/{rank}")))?;
            }
            rank += 1;
            Ok(RetrainedRecord { rank: rank - 1, trial_id: t.trial_id, seed: s, report })
        })?;
        if a.keep_checkpoints {
            rd.output("retrained");
        }
        let mut text = String::new();
        for r in &retrained {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        rd.write_text("retrained.jsonl", &text)?;
    }
    rd.finish()?;
    Ok(())
}

pub fn cmd_evaluate(root: &Path, a: EvaluateArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let dir = model_dir(&a.model);
    let identity = model_identity(&dir)?;
    let model = TrainedModel::load(&dir)?;
    let LoadedData { split, data_hash } = load_data(&data_config(&cfg.data, &a.data))?;
    let samples = part(&split, &a.split)?;
    let hash = config_hash(&json!({ "model": identity, "data": data_hash, "split": a.split, "reps": a.reps }))?;
    let mut rd = RunDir::create(root, a.out.as_deref(), "evaluate", &hash, &data_hash, parent_seed(&dir))?;
    let mut metrics = evaluate_on(&model, samples)?;
    metrics.prediction_runtime_s = median_runtime(&model, samples, a.reps.max(1))?;
    if let Some(train) = dir.parent().map(|p| p.join("metrics.json")).filter(|p| p.exists()) {
        let prev: MetricsReport = serde_json::from_str(&fs::read_to_string(&train)?)?;
        metrics.training_runtime_s = prev.training_runtime_s;
    }
    log::info!("evaluate: {} accuracy {:.4}", a.split, metrics.accuracy);
    rd.write_json("metrics.json", &metrics)?;
    rd.finish()?;
    Ok(())
}

pub fn cmd_explain(root: &Path, a: ExplainArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let dir = model_dir(&a.model);
    let identity = model_identity(&dir)?;
    let model = TrainedModel::load(&dir)?;
    let modality = match a.modality {
        Some(m) => m,
        None => match model.input_modalities().as_slice() {
            [m] => *m,
            _ => bail!("{} takes both modalities; explanations need a single-image model", model.method()),
        },
    };
    let mut audit = cfg.audit.unwrap_or_default();
    if let Some(n) = a.perturbations {
        audit.lime.n_perturb = n;
    }
    if let Some(g) = a.grid {
        audit.grid = (g, g);
    }
    if let Some(k) = a.top_k {
        audit.top_k = k;
    }
    if let Some(s) = a.seed {
        audit.lime.seed = s;
    }
    let (mask, mask_source) = match (&a.mask, a.synthetic_mask) {
        (Some(p), _) => (Some(read_mask(p)?), Some(p.display().to_string())),
        (None, true) => (Some(synthetic_nozzle_mask()), Some("synthetic".to_string())),
        (None, false) => (None, None),
    };
    let LoadedData { split, data_hash } = load_data(&data_config(&cfg.data, &a.data))?;
    let samples = part(&split, &a.split)?;
    let samples = &samples[..a.samples.min(samples.len())];
    let hash = config_hash(&json!({
        "model": identity, "data": data_hash, "split": a.split, "samples": samples.len(),
        "modality": modality, "audit": audit, "mask": mask.as_ref().map(cmkt::xai::mask_rle),
    }))?;
    let mut rd = RunDir::create(root, a.out.as_deref(), "explain", &hash, &data_hash, audit.lime.seed)?;
    let predict = model.image_predictor(modality)?;
    let explained = explain_samples(&predict, samples, modality, &audit)?;
    write_explanations(&rd.output("explanations.jsonl"), &explained)?;
    rd.write_json("audit.json", &json!({ "modality": modality, "split": a.split, "config": audit }))?;

    if let Some(mask) = &mask {
        let stats = intersection_stats(&explained, mask)?;
        let density = stats.density.as_ref().map(|k: &Kde| json!({ "bandwidth": k.bandwidth(), "grid": k.grid(100, 3.0) }));
        log::info!("explain: mean intersection {:.2} px over {} samples", stats.mean, stats.counts.len());
        rd.write_json(
            "intersection.json",
            &json!({ "mask": mask_source, "counts": stats.counts, "mean": stats.mean, "density": density }),
        )?;
    }
    if modality == Modality::Audio {
        let hist = frequency_histogram(explained.iter().map(|e| (&e.mask, e.label)));
        rd.write_json("frequency_histogram.json", &hist)?;
    }
    rd.finish()?;
    Ok(())
}

/// Noise cell as read back from JSON, where an infinite SNR is `null`.
#[derive(Deserialize)]
struct StoredCell {
    method: String,
    axis: String,
    level: Option<f64>,
    seed: u64,
    accuracy: f64,
}

impl From<StoredCell> for NoiseCell {
    fn from(c: StoredCell) -> Self {
        NoiseCell { method: c.method, axis: c.axis, level: c.level.unwrap_or(f64::INFINITY), seed: c.seed, accuracy: c.accuracy }
    }
}

fn read_cells(path: &Path) -> Result<Vec<NoiseCell>> {
    let stored: Vec<StoredCell> = serde_json::from_str(&fs::read_to_string(path)?).with_context(|| format!("parsing {}", path.display()))?;
    Ok(stored.into_iter().map(NoiseCell::from).collect())
}

pub fn cmd_noise_sweep(root: &Path, a: NoiseSweepArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let methods = if !a.methods.is_empty() {
        a.methods.clone()
    } else if !cfg.methods.is_empty() {
        cfg.methods.clone()
    } else {
        cfg.method.into_iter().collect()
    };
    if methods.is_empty() {
        bail!("no methods: pass --method (repeatable) or set `methods` in --config");
    }
    if methods.len() > 1 && !cfg.presets.is_empty() {
        bail!("explicit presets apply to a single method; the sweep lists {}", methods.len());
    }
    let direction = a.direction.or(cfg.direction).unwrap_or_default();
    let scale = a.scale.or(cfg.scale).unwrap_or_default();
    let ov = overrides(&cfg.train, &a.train);
    let plans = methods.iter().map(|&m| resolve_plan(m, direction, scale, &cfg.presets, &ov)).collect::<Result<Vec<_>>>()?;
    let mut sweep = cfg.noise.clone().unwrap_or_default();
    if let Some(s) = &a.sigmas {
        sweep.visual_sigmas = s.clone();
    }
    if let Some(s) = &a.snrs {
        sweep.audio_snrs = s.clone();
    }
    if let Some(s) = &a.seeds {
        sweep.seeds = s.clone();
    }
    let LoadedData { split, data_hash } = load_data(&data_config(&cfg.data, &a.data))?;
    let hash = config_hash(&json!({ "plans": plans, "data": data_hash, "sweep": sweep }))?;
    let seed = sweep.seeds.first().copied().unwrap_or(0);
    let mut rd = RunDir::create(root, a.out.as_deref(), "noise-sweep", &hash, &data_hash, seed)?;
    let cells = noise_sweep(&plans, &split, &sweep)?;
    rd.write_json("cells.json", &cells)?;
    rd.write_text("noise_table.csv", &noise_table_csv(&cells))?;
    rd.finish()?;
    Ok(())
}

fn read_retrained(path: &Path) -> Result<Vec<RetrainedRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).with_context(|| format!("parsing {}", path.display())))
        .collect()
}

pub fn cmd_report(root: &Path, a: ReportArgs) -> Result<()> {
    let mut groups: BTreeMap<(String, String), Vec<MetricsReport>> = BTreeMap::new();
    let mut cells = Vec::new();
    let mut inputs = Vec::new();
    for dir in &a.runs {
        let manifest = RunManifest::read(dir).map_err(|_| CmktError::MissingArtifact {
            path: dir.join(crate::manifest::MANIFEST),
            hint: "pass run directories written by `cmkt search`, `cmkt train` or `cmkt noise-sweep`".into(),
        })?;
        let mut found = false;
        let retrained = dir.join("retrained.jsonl");
        if retrained.exists() {
            let mut recs = read_retrained(&retrained)?;
            recs.sort_by_key(|r| r.rank);
            if let Some(k) = a.top_k {
                if recs.len() < k {
                    bail!("{} has {} retrained models, --top-k {k} needs that many", dir.display(), recs.len());
                }
                recs.truncate(k);
            }
            for r in recs {
                let m = r.report.metrics;
                groups.entry((m.method.clone(), m.modality.clone())).or_default().push(m);
            }
            found = true;
        } else if dir.join("report.json").exists() {
            let m = RunReport::read(&dir.join("report.json"))?.metrics;
            groups.entry((m.method.clone(), m.modality.clone())).or_default().push(m);
            found = true;
        }
        if dir.join("cells.json").exists() {
            cells.extend(read_cells(&dir.join("cells.json"))?);
            found = true;
        }
        if !found {
            bail!(CmktError::MissingArtifact {
                path: dir.clone(),
                hint: "no retrained.jsonl, report.json or cells.json; run `cmkt search --top-k`, `cmkt train` or `cmkt noise-sweep` first".into(),
            });
        }
        inputs.push(manifest.config_hash);
    }
    let hash = config_hash(&json!({ "inputs": inputs, "top_k": a.top_k }))?;
    let data_hash = config_hash(&inputs)?;
    let mut rd = RunDir::create(root, a.out.as_deref(), "report", &hash, &data_hash, 0)?;
    if !groups.is_empty() {
        let summaries = groups.values().map(|g| summarize_topk(g)).collect::<cmkt::Result<Vec<_>>>()?;
        rd.write_json("summary.json", &summaries)?;
        rd.write_text("summary.csv", &summaries_csv(&summaries))?;
    }
    if !cells.is_empty() {
        rd.write_json("cells.json", &cells)?;
        rd.write_text("noise_table.csv", &noise_table_csv(&cells))?;
    }
    rd.finish()?;
    std::io::stdout().flush()?;
    Ok(())
}
