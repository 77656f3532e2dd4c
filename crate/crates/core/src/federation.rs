//! Server/client round loop of federated fine-tuning with the noisy
//! projection (GNP) correction.
//!
//! Each round `t = 1..=T`:
//!
//! 1. sample `m = ceil(c·K)` clients uniformly without replacement;
//! 2. every sampled client runs `E × steps_per_epoch` minibatch SGD steps
//!    from the broadcast global model and returns its trainable tensors;
//! 3. the server averages them weighted by shard size;
//! 4. on rounds divisible by `indicator_period` the classifier indicators
//!    are measured on the aggregate and `gamma` is refreshed;
//! 5. with GNP enabled, the robust vector `θ_r` (the part of the aggregate
//!    orthogonal to the previous global model) is replaced by Gaussian noise
//!    of equal norm, scaled by `gamma`: `θ̃ = θ − γ(θ_r − θ_n)`;
//! 6. the new global model is evaluated on the ID and shifted test sets.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::datagen::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::indicators::{snapshot, IndicatorSnapshot, ValueModel};
use crate::model::{MlpClassifier, ModelDims, ParamReport, PeftMask, Sample};
use crate::tensorlab::{
    axpy, gaussian_like, mix_seed, project, project_per_tensor, scale_to_norm, Matrix, ParamSet,
    SeededRng,
};

const STREAM_SAMPLING: u64 = 0x5a3c;
const STREAM_CLIENT: u64 = 0xc11e;
const STREAM_NOISE: u64 = 0x2015e;

/// Whether projections use one coefficient for the whole trainable vector
/// or one per tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProjectionScope {
    #[default]
    Global,
    PerTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedConfig {
    pub clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub eta: f64,
    pub sample_rate: f64,
    pub alpha: f64,
    pub tau: f64,
    pub gamma_max: f64,
    /// Rounds between indicator snapshots; 0 disables them.
    pub indicator_period: usize,
    pub mask: PeftMask,
    pub noise_enabled: bool,
    pub gnp_enabled: bool,
    pub projection_scope: ProjectionScope,
    pub steps_per_epoch: usize,
    /// Minibatch size; 0 means the whole shard.
    pub batch_size: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            clients: 10,
            rounds: 50,
            local_epochs: 1,
            eta: 0.05,
            sample_rate: 0.5,
            alpha: 1.0,
            tau: 20.0,
            gamma_max: 1.0,
            indicator_period: 10,
            mask: PeftMask::Full,
            noise_enabled: true,
            gnp_enabled: false,
            projection_scope: ProjectionScope::Global,
            steps_per_epoch: 1,
            batch_size: 32,
            hidden: 64,
            seed: 0,
        }
    }
}

impl FedConfig {
    /// `ceil(c · K)`, with a small tolerance so `0.3 · 10` gives 3.
    pub fn clients_per_round(&self) -> usize {
        let m = libm::ceil(self.sample_rate * self.clients as f64 - 1e-9) as usize;
        m.min(self.clients)
    }

    pub fn value_model(&self) -> ValueModel {
        ValueModel {
            tau: self.tau,
            gamma_max: self.gamma_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        if self.clients == 0 {
            return fail("K must be >= 1".into());
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return fail(format!("sampling rate c must be in (0, 1], got {}", self.sample_rate));
        }
        if self.rounds == 0 {
            return fail("T must be >= 1".into());
        }
        if self.local_epochs == 0 || self.steps_per_epoch == 0 {
            return fail("E and steps_per_epoch must be >= 1".into());
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return fail(format!("learning rate must be positive, got {}", self.eta));
        }
        if !(self.alpha > 0.0) {
            return fail(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return fail(format!("tau must be nonnegative, got {}", self.tau));
        }
        if !(self.gamma_max >= 0.0) || !self.gamma_max.is_finite() {
            return fail(format!("gamma_max must be nonnegative, got {}", self.gamma_max));
        }
        if self.hidden == 0 {
            return fail("hidden width must be >= 1".into());
        }
        Ok(())
    }
}

/// Generator for the minibatches of one client in one round.
pub fn client_rng(seed: u64, round: usize, client: usize) -> SeededRng {
    SeededRng::derive(seed, STREAM_CLIENT, &[round as u64, client as u64])
}

/// `batch_size` distinct indices from `0..n` (all of them when
/// `batch_size` is 0 or at least `n`).
pub fn sample_minibatch(rng: &mut SeededRng, n: usize, batch_size: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if batch_size == 0 || batch_size >= n {
        return idx;
    }
    for i in 0..batch_size {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(batch_size);
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientResult {
    pub params: ParamSet,
    /// Mean minibatch loss over the local steps.
    pub loss: f64,
}

/// Local SGD from the received global model. Returns only trainable tensors.
pub fn client_update(
    global: &MlpClassifier,
    shard: &Dataset,
    cfg: &FedConfig,
    rng: &mut SeededRng,
) -> Result<ClientResult> {
    if shard.is_empty() {
        return Err(Error::Empty("client shard"));
    }
    let mut model = global.clone();
    let steps = cfg.local_epochs * cfg.steps_per_epoch;
    let mut loss_sum = 0.0;
    for _ in 0..steps {
        let idx = sample_minibatch(rng, shard.len(), cfg.batch_size);
        let batch = Sample::batch(shard, &idx);
        let (loss, grads) = model.loss_and_grad(&batch)?;
        loss_sum += loss;
        model = model.sgd_step(&grads, cfg.eta)?;
    }
    Ok(ClientResult {
        params: model.trainable_params(),
        loss: loss_sum / steps as f64,
    })
}

/// Shard-size weighted mean.
pub fn aggregate(locals: &[ParamSet], sizes: &[usize]) -> Result<ParamSet> {
    if locals.is_empty() {
        return Err(Error::Empty("client updates"));
    }
    if locals.len() != sizes.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} updates but {} sizes",
            locals.len(),
            sizes.len()
        )));
    }
    if sizes.iter().any(|s| *s == 0) {
        return Err(Error::InvalidConfig("client sizes must be positive".into()));
    }
    let total: usize = sizes.iter().sum();
    let total = total as f64;
    let mut acc = locals[0].scaled(sizes[0] as f64 / total);
    for (p, s) in locals.iter().zip(sizes).skip(1) {
        acc = axpy(&acc, *s as f64 / total, p)?;
    }
    Ok(acc)
}

/// `θ_new − P_{θ_prev}(θ_new)`.
pub fn robust_vector(
    prev_global: &ParamSet,
    new: &ParamSet,
    scope: ProjectionScope,
) -> Result<ParamSet> {
    let projected = match scope {
        ProjectionScope::Global => project(prev_global, new)?,
        ProjectionScope::PerTensor => project_per_tensor(prev_global, new)?,
    };
    new.sub(&projected)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnpOutcome {
    pub params: ParamSet,
    pub noise_norm: f64,
}

/// `θ_new − γ(θ_r − θ_n)` with `θ_n` Gaussian noise rescaled to `‖θ_r‖`
/// (zero when noise is disabled).
pub fn gnp_update(
    new: &ParamSet,
    robust: &ParamSet,
    gamma: f64,
    rng: &mut SeededRng,
    noise_enabled: bool,
) -> Result<GnpOutcome> {
    if !(gamma >= 0.0) {
        return Err(Error::InvalidConfig(format!("gamma must be nonnegative, got {gamma}")));
    }
    new.ensure_compatible(robust)?;
    let robust_norm = robust.norm();
    let noise = if noise_enabled && robust_norm > 0.0 {
        scale_to_norm(&gaussian_like(robust, rng), robust_norm)?
    } else {
        robust.zeros_like()
    };
    let correction = robust.sub(&noise)?;
    Ok(GnpOutcome {
        params: axpy(new, -gamma, &correction)?,
        noise_norm: noise.norm(),
    })
}

/// Training data, evaluation sets and client assignment for one run.
#[derive(Debug, Clone)]
pub struct FederatedData {
    pub train: Dataset,
    pub id_test: Dataset,
    pub ood_tests: Vec<Dataset>,
    pub partition: Partition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub clients: Vec<usize>,
    /// Shard-size weighted mean of the client training losses.
    pub loss: f64,
    pub robust_norm: f64,
    pub noise_norm: f64,
    pub gamma: f64,
    pub clamped: bool,
    pub id_accuracy: f64,
    pub ood_accuracies: Vec<f64>,
    pub snapshot: Option<IndicatorSnapshot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub records: Vec<RoundRecord>,
    pub initial_model: MlpClassifier,
    pub final_model: MlpClassifier,
    pub param_report: ParamReport,
}

impl RunLog {
    pub fn snapshots(&self) -> impl Iterator<Item = &IndicatorSnapshot> {
        self.records.iter().filter_map(|r| r.snapshot.as_ref())
    }

    pub fn last(&self) -> &RoundRecord {
        self.records.last().expect("runs have at least one round")
    }
}

/// Clients for round `t`, ascending.
pub fn sample_clients(cfg: &FedConfig, round: usize) -> Vec<usize> {
    let mut rng = SeededRng::derive(cfg.seed, STREAM_SAMPLING, &[round as u64]);
    let mut ids = sample_minibatch(&mut rng, cfg.clients, cfg.clients_per_round());
    ids.sort_unstable();
    ids
}

pub fn noise_rng(seed: u64, round: usize) -> SeededRng {
    SeededRng::derive(seed, STREAM_NOISE, &[round as u64])
}

/// Model initialization seed used by [`run`].
pub fn init_seed(seed: u64) -> u64 {
    mix_seed(seed, &[0x1417])
}

/// Runs from the freshly initialized model `init(init_seed(cfg.seed))`.
pub fn run(cfg: &FedConfig, data: &FederatedData) -> Result<RunLog> {
    let dims = ModelDims {
        input: data.train.dim(),
        hidden: cfg.hidden,
        classes: data.train.classes(),
    };
    let initial = MlpClassifier::init(init_seed(cfg.seed), dims, cfg.mask)?;
    run_from(cfg, data, initial)
}

/// Runs from an explicit starting model (`θ_0`), e.g. a pre-trained one.
pub fn run_from(cfg: &FedConfig, data: &FederatedData, initial: MlpClassifier) -> Result<RunLog> {
    cfg.validate()?;
    if data.partition.num_clients() != cfg.clients {
        return Err(Error::InvalidConfig(format!(
            "partition has {} clients, config expects {}",
            data.partition.num_clients(),
            cfg.clients
        )));
    }
    data.partition.validate(data.train.len())?;
    let shards = data.partition.shards(&data.train)?;
    let dims = initial.dims();
    if dims.input != data.train.dim() || dims.classes != data.train.classes() {
        return Err(Error::DimensionMismatch {
            expected: dims.input,
            got: data.train.dim(),
        });
    }
    if initial.mask() != cfg.mask {
        return Err(Error::InvalidConfig(format!(
            "initial model uses mask {}, config expects {}",
            initial.mask(),
            cfg.mask
        )));
    }
    let value_model = cfg.value_model();

    let mut global = initial.clone();
    let mut gamma = 1.0f64.min(cfg.gamma_max);
    let mut clamped = gamma != 1.0;
    let mut reference_classifier: Matrix = initial.classifier().clone();
    let mut records = Vec::with_capacity(cfg.rounds);

    for t in 1..=cfg.rounds {
        let wrap = |e: Error| Error::Round {
            round: t,
            source: Box::new(e),
        };
        let clients = sample_clients(cfg, t);
        let mut locals = Vec::with_capacity(clients.len());
        let mut sizes = Vec::with_capacity(clients.len());
        let mut loss = 0.0;
        for &k in &clients {
            let mut rng = client_rng(cfg.seed, t, k);
            let res = client_update(&global, &shards[k], cfg, &mut rng).map_err(wrap)?;
            loss += res.loss * shards[k].len() as f64;
            sizes.push(shards[k].len());
            locals.push(res.params);
        }
        loss /= sizes.iter().sum::<usize>() as f64;

        let prev = global.trainable_params();
        let aggregated = aggregate(&locals, &sizes).map_err(wrap)?;
        let candidate = global.with_trainable(&aggregated).map_err(wrap)?;

        let mut snap = None;
        if cfg.indicator_period > 0 && t % cfg.indicator_period == 0 {
            let s = snapshot(&reference_classifier, candidate.classifier(), &value_model, t)
                .map_err(wrap)?;
            reference_classifier = candidate.classifier().clone();
            gamma = s.gamma.value;
            clamped = s.gamma.clamped;
            snap = Some(s);
        }

        let robust = robust_vector(&prev, &aggregated, cfg.projection_scope).map_err(wrap)?;
        let robust_norm = robust.norm();
        let (next, noise_norm) = if cfg.gnp_enabled {
            let mut rng = noise_rng(cfg.seed, t);
            let out = gnp_update(&aggregated, &robust, gamma, &mut rng, cfg.noise_enabled)
                .map_err(wrap)?;
            (global.with_trainable(&out.params).map_err(wrap)?, out.noise_norm)
        } else {
            (candidate, 0.0)
        };
        global = next;

        let id_accuracy = global.accuracy(&data.id_test).map_err(wrap)?;
        let ood_accuracies = data
            .ood_tests
            .iter()
            .map(|d| global.accuracy(d))
            .collect::<Result<Vec<_>>>()
            .map_err(wrap)?;

        records.push(RoundRecord {
            round: t,
            clients,
            loss,
            robust_norm,
            noise_norm,
            gamma: if cfg.gnp_enabled { gamma } else { 0.0 },
            clamped: cfg.gnp_enabled && clamped,
            id_accuracy,
            ood_accuracies,
            snapshot: snap,
        });
    }

    Ok(RunLog {
        records,
        param_report: initial.param_report(),
        initial_model: initial,
        final_model: global,
    })
}
