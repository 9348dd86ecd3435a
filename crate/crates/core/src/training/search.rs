//! Hyperparameter search: the search space, pluggable samplers behind a
//! suggest/observe interface, the trial ledger and top-k selection.

use std::fs::OpenOptions;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CmktError, Result};
use crate::models::{layer, ArchitectureSpec, LayerSpec};

/// Closed ranges for every searched hyperparameter; integer ranges are
/// inclusive, the two rates are sampled log-uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub learning_rate: (f64, f64),
    pub weight_decay: (f64, f64),
    pub conv_layers: (usize, usize),
    pub filters: (usize, usize),
    pub kernel: (usize, usize),
    pub dense_layers: (usize, usize),
    pub neurons: (usize, usize),
    pub dropout: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            learning_rate: (1e-6, 1e-3),
            weight_decay: (1e-7, 1e-3),
            conv_layers: (3, 5),
            filters: (16, 48),
            kernel: (2, 4),
            dense_layers: (1, 3),
            neurons: (32, 360),
            dropout: (0.01, 0.1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DimKind {
    LogUniform,
    Uniform,
    Int,
}

/// One search dimension in sampler coordinates (`ln` for log-uniform).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dim {
    pub kind: DimKind,
    pub lo: f64,
    pub hi: f64,
}

impl Dim {
    pub fn new(kind: DimKind, lo: f64, hi: f64) -> Self {
        match kind {
            DimKind::LogUniform => Dim { kind, lo: lo.ln(), hi: hi.ln() },
            DimKind::Int => Dim { kind, lo: lo - 0.5, hi: hi + 0.5 - 1e-9 },
            DimKind::Uniform => Dim { kind, lo, hi },
        }
    }

    /// Internal coordinate to the user-facing value.
    pub fn decode(&self, u: f64) -> f64 {
        let u = u.clamp(self.lo, self.hi);
        match self.kind {
            DimKind::LogUniform => u.exp(),
            DimKind::Int => u.round(),
            DimKind::Uniform => u,
        }
    }

    pub fn encode(&self, v: f64) -> f64 {
        match self.kind {
            DimKind::LogUniform => v.ln(),
            _ => v,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let f = |name: &str, (lo, hi): (f64, f64), positive: bool| {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() || (positive && lo <= 0.0) {
                Err(CmktError::Config(format!("search range {name} = [{lo}, {hi}] is empty or invalid")))
            } else {
                Ok(())
            }
        };
        let i = |name: &str, (lo, hi): (usize, usize)| {
            if lo > hi || lo == 0 {
                Err(CmktError::Config(format!("search range {name} = [{lo}, {hi}] is empty or invalid")))
            } else {
                Ok(())
            }
        };
        f("learning_rate", self.learning_rate, true)?;
        f("weight_decay", self.weight_decay, true)?;
        f("dropout", self.dropout, false)?;
        if self.dropout.0 < 0.0 || self.dropout.1 >= 1.0 {
            return Err(CmktError::Config("dropout range must lie in [0, 1)".into()));
        }
        i("conv_layers", self.conv_layers)?;
        i("filters", self.filters)?;
        i("kernel", self.kernel)?;
        i("dense_layers", self.dense_layers)?;
        i("neurons", self.neurons)
    }

    /// Dimensions in [`HyperParams::to_vec`] order.
    pub fn dims(&self) -> Vec<Dim> {
        let int = |(lo, hi): (usize, usize)| Dim::new(DimKind::Int, lo as f64, hi as f64);
        vec![
            Dim::new(DimKind::LogUniform, self.learning_rate.0, self.learning_rate.1),
            Dim::new(DimKind::LogUniform, self.weight_decay.0, self.weight_decay.1),
            int(self.conv_layers),
            int(self.filters),
            int(self.kernel),
            int(self.dense_layers),
            int(self.neurons),
            Dim::new(DimKind::Uniform, self.dropout.0, self.dropout.1),
        ]
    }

    pub fn contains(&self, h: &HyperParams) -> bool {
        let inf = |v: f64, (lo, hi): (f64, f64)| v >= lo * (1.0 - 1e-12) && v <= hi * (1.0 + 1e-12);
        let ini = |v: usize, (lo, hi): (usize, usize)| v >= lo && v <= hi;
        inf(h.learning_rate, self.learning_rate)
            && inf(h.weight_decay, self.weight_decay)
            && ini(h.conv_layers, self.conv_layers)
            && ini(h.filters, self.filters)
            && ini(h.kernel, self.kernel)
            && ini(h.dense_layers, self.dense_layers)
            && ini(h.neurons, self.neurons)
            && h.dropout >= self.dropout.0
            && h.dropout <= self.dropout.1
    }
}

/// One sampled configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub conv_layers: usize,
    pub filters: usize,
    pub kernel: usize,
    pub dense_layers: usize,
    pub neurons: usize,
    pub dropout: f64,
}

impl HyperParams {
    pub fn from_vec(v: &[f64]) -> Self {
        HyperParams {
            learning_rate: v[0],
            weight_decay: v[1],
            conv_layers: v[2] as usize,
            filters: v[3] as usize,
            kernel: v[4] as usize,
            dense_layers: v[5] as usize,
            neurons: v[6] as usize,
            dropout: v[7],
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.learning_rate,
            self.weight_decay,
            self.conv_layers as f64,
            self.filters as f64,
            self.kernel as f64,
            self.dense_layers as f64,
            self.neurons as f64,
            self.dropout,
        ]
    }

    /// Conv encoder on `[channels, side, side]`: each block is a `same`
    /// convolution, ReLU and 2x2 max-pool; ends in a flatten tagged
    /// `embedding`. Pooling stops once the side would drop below 2.
    pub fn encoder_spec(&self, channels: usize, side: usize) -> ArchitectureSpec {
        let mut layers: Vec<LayerSpec> = Vec::new();
        let mut s = side;
        for _ in 0..self.conv_layers {
            layers.push(layer::conv_same(self.filters, self.kernel));
            layers.push(layer::relu());
            if s >= 4 {
                layers.push(layer::maxpool(2));
                s /= 2;
            }
        }
        layers.push(layer::tagged(layer::flatten(), "embedding"));
        ArchitectureSpec::new(vec![channels, side, side], layers)
    }

    /// `dense_layers` hidden blocks (dense, ReLU, dropout) then one sigmoid unit.
    pub fn classifier_spec(&self, input_dim: usize) -> ArchitectureSpec {
        let mut layers = Vec::new();
        for _ in 0..self.dense_layers {
            layers.push(layer::dense(self.neurons));
            layers.push(layer::relu());
            layers.push(layer::dropout(self.dropout));
        }
        layers.push(layer::dense(1));
        layers.push(layer::act("sigmoid"));
        ArchitectureSpec::new(vec![input_dim], layers)
    }
}

/// Suggest/observe strategy over internal coordinates.
pub trait Sampler {
    fn suggest(&mut self, dims: &[Dim]) -> Vec<f64>;
    /// `point` in internal coordinates; larger `score` is better.
    fn observe(&mut self, point: Vec<f64>, score: f64);
    fn name(&self) -> &'static str;
}

fn uniform_point(rng: &mut ChaCha8Rng, dims: &[Dim]) -> Vec<f64> {
    dims.iter().map(|d| rng.random_range(d.lo..=d.hi)).collect()
}

/// Independent uniform draws in internal coordinates.
#[derive(Debug, Clone)]
pub struct RandomSampler {
    rng: ChaCha8Rng,
}

impl RandomSampler {
    pub fn new(seed: u64) -> Self {
        RandomSampler { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Sampler for RandomSampler {
    fn suggest(&mut self, dims: &[Dim]) -> Vec<f64> {
        uniform_point(&mut self.rng, dims)
    }

    fn observe(&mut self, _point: Vec<f64>, _score: f64) {}

    fn name(&self) -> &'static str {
        "random"
    }
}

/// Tree-structured Parzen estimator with independent per-dimension
/// densities. The first `n_startup` suggestions are uniform; afterwards
/// the best `gamma` fraction of observations defines the "good" density
/// `l`, the rest `g`, and the candidate maximizing `l / g` among
/// `n_candidates` draws from `l` is suggested.
#[derive(Debug, Clone)]
pub struct TpeSampler {
    rng: ChaCha8Rng,
    pub n_startup: usize,
    pub gamma: f64,
    pub n_candidates: usize,
    history: Vec<(Vec<f64>, f64)>,
}

impl TpeSampler {
    pub fn new(seed: u64) -> Self {
        TpeSampler { rng: ChaCha8Rng::seed_from_u64(seed), n_startup: 10, gamma: 0.25, n_candidates: 24, history: Vec::new() }
    }
}

/// 1-D Parzen mixture: one Gaussian per observation plus a uniform prior
/// over the range, equally weighted.
struct Parzen {
    centers: Vec<f64>,
    sigma: f64,
    lo: f64,
    hi: f64,
}

impl Parzen {
    fn new(centers: Vec<f64>, lo: f64, hi: f64) -> Self {
        let n = centers.len().max(1) as f64;
        let sigma = ((hi - lo) * n.powf(-0.2) / 2.0).max((hi - lo) * 1e-3);
        Parzen { centers, sigma, lo, hi }
    }

    fn density(&self, x: f64) -> f64 {
        let k = self.centers.len() as f64 + 1.0;
        let prior = 1.0 / (self.hi - self.lo).max(f64::MIN_POSITIVE);
        let norm = 1.0 / (self.sigma * (2.0 * std::f64::consts::PI).sqrt());
        let g: f64 = self.centers.iter().map(|c| norm * (-0.5 * ((x - c) / self.sigma).powi(2)).exp()).sum();
        (g + prior) / k
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let pick = rng.random_range(0..=self.centers.len());
        if pick == self.centers.len() {
            return rng.random_range(self.lo..=self.hi);
        }
        let n = Normal::new(self.centers[pick], self.sigma).expect("positive sigma");
        n.sample(rng).clamp(self.lo, self.hi)
    }
}

impl Sampler for TpeSampler {
    fn suggest(&mut self, dims: &[Dim]) -> Vec<f64> {
        if self.history.len() < self.n_startup {
            return uniform_point(&mut self.rng, dims);
        }
        let mut order: Vec<usize> = (0..self.history.len()).collect();
        order.sort_by(|&a, &b| self.history[b].1.total_cmp(&self.history[a].1).then(a.cmp(&b)));
        let n_good = ((self.gamma * order.len() as f64).ceil() as usize).clamp(1, order.len() - 1);
        let (good, bad) = order.split_at(n_good);
        dims.iter()
            .enumerate()
            .map(|(j, d)| {
                let l = Parzen::new(good.iter().map(|&i| self.history[i].0[j]).collect(), d.lo, d.hi);
                let g = Parzen::new(bad.iter().map(|&i| self.history[i].0[j]).collect(), d.lo, d.hi);
                (0..self.n_candidates)
                    .map(|_| l.sample(&mut self.rng))
                    .map(|x| (x, l.density(x) / g.density(x)))
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(x, _)| x)
                    .expect("at least one candidate")
            })
            .collect()
    }

    fn observe(&mut self, point: Vec<f64>, score: f64) {
        self.history.push((point, if score.is_finite() { score } else { f64::NEG_INFINITY }));
    }

    fn name(&self) -> &'static str {
        "tpe"
    }
}

/// What one trial's objective reports back.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub val_accuracy: f64,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub params: HyperParams,
    pub val_accuracy: f64,
    pub training_runtime_s: f64,
    pub checkpoint: Option<String>,
    /// Failure message when the trial was scored 0.
    pub error: Option<String>,
}

/// Flat ledger row; one per trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LedgerRow {
    trial_id: usize,
    learning_rate: f64,
    weight_decay: f64,
    conv_layers: usize,
    filters: usize,
    kernel: usize,
    dense_layers: usize,
    neurons: usize,
    dropout: f64,
    val_accuracy: f64,
    training_runtime_s: f64,
    checkpoint: String,
    error: String,
}

impl From<&TrialRecord> for LedgerRow {
    fn from(t: &TrialRecord) -> Self {
        let p = &t.params;
        LedgerRow {
            trial_id: t.trial_id,
            learning_rate: p.learning_rate,
            weight_decay: p.weight_decay,
            conv_layers: p.conv_layers,
            filters: p.filters,
            kernel: p.kernel,
            dense_layers: p.dense_layers,
            neurons: p.neurons,
            dropout: p.dropout,
            val_accuracy: t.val_accuracy,
            training_runtime_s: t.training_runtime_s,
            checkpoint: t.checkpoint.clone().unwrap_or_default(),
            error: t.error.clone().unwrap_or_default(),
        }
    }
}

impl From<LedgerRow> for TrialRecord {
    fn from(r: LedgerRow) -> Self {
        let opt = |s: String| if s.is_empty() { None } else { Some(s) };
        TrialRecord {
            trial_id: r.trial_id,
            params: HyperParams {
                learning_rate: r.learning_rate,
                weight_decay: r.weight_decay,
                conv_layers: r.conv_layers,
                filters: r.filters,
                kernel: r.kernel,
                dense_layers: r.dense_layers,
                neurons: r.neurons,
                dropout: r.dropout,
            },
            val_accuracy: r.val_accuracy,
            training_runtime_s: r.training_runtime_s,
            checkpoint: opt(r.checkpoint),
            error: opt(r.error),
        }
    }
}

/// Appends one record to a CSV ledger, writing the header for a new file.
pub fn append_trial(path: &Path, record: &TrialRecord) -> Result<()> {
    let fresh = !path.exists() || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| CmktError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(LedgerRow::from(record))?;
    w.flush().map_err(|e| CmktError::io(path, e))
}

pub fn read_ledger(path: &Path) -> Result<Vec<TrialRecord>> {
    if !path.exists() {
        return Err(CmktError::MissingArtifact { path: path.into(), hint: "run `cmkt search` first".into() });
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<LedgerRow>().map(|row| Ok(row?.into())).collect()
}

/// Sequential suggest, train, evaluate loop. Objective errors and
/// non-finite scores are recorded as score 0 and the search continues.
/// With `ledger`, every trial is appended as soon as it finishes.
pub fn hyperparameter_search(
    space: &SearchSpace,
    n_trials: usize,
    sampler: &mut dyn Sampler,
    ledger: Option<&Path>,
    mut objective: impl FnMut(usize, &HyperParams) -> Result<TrialOutcome>,
) -> Result<Vec<TrialRecord>> {
    space.validate()?;
    let dims = space.dims();
    let mut out = Vec::with_capacity(n_trials);
    for trial_id in 0..n_trials {
        let u = sampler.suggest(&dims);
        let values: Vec<f64> = u.iter().zip(&dims).map(|(x, d)| d.decode(*x)).collect();
        let params = HyperParams::from_vec(&values);
        let start = Instant::now();
        let result = objective(trial_id, &params);
        let training_runtime_s = start.elapsed().as_secs_f64();
        let (val_accuracy, checkpoint, error) = match result {
            Ok(o) if o.val_accuracy.is_finite() => (o.val_accuracy.clamp(0.0, 1.0), o.checkpoint, None),
            Ok(o) => (0.0, o.checkpoint, Some(format!("non-finite score {}", o.val_accuracy))),
            Err(e) => {
                log::warn!("trial {trial_id} failed: {e}");
                (0.0, None, Some(e.to_string()))
            }
        };
        // observe the point actually evaluated
        let evaluated: Vec<f64> = values.iter().zip(&dims).map(|(v, d)| d.encode(*v)).collect();
        sampler.observe(evaluated, val_accuracy);
        let rec = TrialRecord { trial_id, params, val_accuracy, training_runtime_s, checkpoint, error };
        log::info!("trial {trial_id}: val acc {:.4} ({:.1}s)", rec.val_accuracy, rec.training_runtime_s);
        if let Some(p) = ledger {
            append_trial(p, &rec)?;
        }
        out.push(rec);
    }
    Ok(out)
}

/// The `k` best trials by validation accuracy, ties broken by lower id.
pub fn select_top_k(trials: &[TrialRecord], k: usize) -> Result<Vec<&TrialRecord>> {
    if trials.len() < k {
        return Err(CmktError::InvalidArgument(format!("top-{k} selection needs at least {k} trials, have {}", trials.len())));
    }
    let mut v: Vec<&TrialRecord> = trials.iter().collect();
    v.sort_by(|a, b| b.val_accuracy.total_cmp(&a.val_accuracy).then(a.trial_id.cmp(&b.trial_id)));
    v.truncate(k);
    Ok(v)
}

/// Retrains each of the top `k` trials through `retrain`, which receives a
/// fresh seed per model.
pub fn select_top_k_and_retrain<T>(
    trials: &[TrialRecord],
    k: usize,
    seed: u64,
    mut retrain: impl FnMut(&TrialRecord, u64) -> Result<T>,
) -> Result<Vec<T>> {
    select_top_k(trials, k)?
        .into_iter()
        .enumerate()
        .map(|(rank, t)| retrain(t, crate::util::mix_seed(seed, 1_000_000 + rank as u64)))
        .collect()
}
