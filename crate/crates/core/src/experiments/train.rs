//! Toy training on generated pairs with the surrogate objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape};
use crate::checkpoint::{self, Checkpoint, LearnedWeightState};
use crate::data::Degradation;
use crate::error::{Error, Result};
use crate::experiments::{derive_seed, streams};
use crate::losses::{surrogate, CannyParams, LossReport, LossWeights, WeightSource, DEFAULT_BINS};
use crate::nn::{Denoiser, NetworkSpec};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::{softplus, Scalar};
use crate::sde::{self, ScheduleParams};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub iters: usize,
    pub batch: usize,
    pub image_size: usize,
    /// Number of distinct training pairs drawn from.
    pub pool_size: usize,
    /// Moving-average window for the loss-reduction summary.
    pub window: usize,
    pub optimizer: AdamConfig,
    pub network: NetworkSpec,
    pub schedule: ScheduleParams,
    pub loss_weights: LossWeights,
    pub canny: CannyParams,
    pub bins: usize,
    pub degradation: Degradation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iters: 200,
            batch: 4,
            image_size: 16,
            pool_size: 64,
            window: 20,
            optimizer: AdamConfig::default(),
            network: NetworkSpec::default(),
            schedule: ScheduleParams::default(),
            loss_weights: LossWeights::default(),
            canny: CannyParams::default(),
            bins: DEFAULT_BINS,
            degradation: Degradation::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        const OP: &str = "train_config";
        if self.batch == 0 || self.pool_size == 0 || self.window == 0 || self.bins == 0 {
            return Err(Error::arg(
                OP,
                "batch, pool_size, window and bins must be positive",
            ));
        }
        if self.image_size == 0
            || !self
                .image_size
                .is_multiple_of(self.network.spatial_multiple())
        {
            return Err(Error::arg(
                OP,
                format!(
                    "image_size must be a positive multiple of {}",
                    self.network.spatial_multiple()
                ),
            ));
        }
        self.optimizer.validate()?;
        self.network.validate()?;
        self.schedule.build()?;
        self.loss_weights.validate()?;
        self.canny.validate()?;
        Ok(())
    }

    /// Pairs `(degraded, reference)` the run trains on.
    pub fn training_pool<T: Scalar>(&self) -> Result<Vec<(Tensor<T>, Tensor<T>)>> {
        self.pairs(streams::POOL, self.pool_size)
    }

    /// Pairs never seen during training.
    pub fn holdout<T: Scalar>(&self, count: usize) -> Result<Vec<(Tensor<T>, Tensor<T>)>> {
        self.pairs(streams::HOLDOUT, count)
    }

    fn pairs<T: Scalar>(&self, stream: u64, count: usize) -> Result<Vec<(Tensor<T>, Tensor<T>)>> {
        (0..count as u64)
            .map(|k| {
                let p = self
                    .degradation
                    .generate(self.image_size, derive_seed(self.seed, stream, k))?;
                Ok((p.degraded, p.reference))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationLog {
    /// 1-based.
    pub iteration: u64,
    pub steps: Vec<usize>,
    /// Surrogate edge/hist terms; `combined` is the optimized objective.
    pub loss: LossReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub window: usize,
    pub initial_moving_average: f64,
    pub final_moving_average: f64,
    /// `1 − final/initial`.
    pub reduction: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<IterationLog>,
    pub summary: Option<TrainSummary>,
}

pub fn summarize(history: &[IterationLog], window: usize) -> Option<TrainSummary> {
    if history.is_empty() {
        return None;
    }
    let w = window.min(history.len());
    let mean = |logs: &[IterationLog]| {
        logs.iter().map(|l| l.loss.combined).sum::<f64>() / logs.len() as f64
    };
    let initial = mean(&history[..w]);
    let last = mean(&history[history.len() - w..]);
    Some(TrainSummary {
        window: w,
        initial_moving_average: initial,
        final_moving_average: last,
        reduction: 1.0 - last / initial,
    })
}

struct LearnedWeights<T> {
    store: ParamStore<T>,
    opt: Adam,
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Trains a fresh network (or continues `resume`) until `cfg.iters` total
/// iterations. Iteration `k` draws its batch, steps and noise from a stream
/// derived from `(seed, k)`, so a resumed run matches an uninterrupted one.
pub fn train_toy<T: Scalar>(
    cfg: &TrainConfig,
    resume: Option<&Checkpoint>,
    mut on_iter: impl FnMut(&IterationLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let schedule = cfg.schedule.build()?;
    let (mut net, mut opt, start, mut learned) = match resume {
        Some(ck) => {
            if ck.network != cfg.network || ck.schedule != cfg.schedule || ck.seed != cfg.seed {
                return Err(Error::arg(
                    "train_toy",
                    "resume checkpoint was made with a different network, schedule or seed",
                ));
            }
            if ck.loss_weights.learned != cfg.loss_weights.learned {
                return Err(Error::arg(
                    "train_toy",
                    "resume checkpoint disagrees on learned loss weights",
                ));
            }
            let net: Denoiser<T> = ck.denoiser()?;
            let opt = Adam::with_state(cfg.optimizer, net.params(), ck.adam.clone())?;
            let learned = match &ck.learned_weights {
                Some(state) => {
                    let mut store = ParamStore::new();
                    for (k, r) in state.rho.iter().enumerate() {
                        store.add(
                            format!("loss.rho{k}"),
                            Tensor::full(Shape::scalar(), T::lit(*r)),
                        )?;
                    }
                    let opt = Adam::with_state(cfg.optimizer, &store, state.adam.clone())?;
                    Some(LearnedWeights { store, opt })
                }
                None => None,
            };
            (net, opt, ck.iteration, learned)
        }
        None => {
            let net = Denoiser::<T>::new(cfg.network, derive_seed(cfg.seed, streams::INIT, 0))?;
            let opt = Adam::new(cfg.optimizer, net.params())?;
            let learned = if cfg.loss_weights.learned {
                let mut store = ParamStore::new();
                for (k, l) in cfg.loss_weights.as_array().iter().enumerate() {
                    store.add(
                        format!("loss.rho{k}"),
                        Tensor::full(Shape::scalar(), T::lit(inverse_softplus(*l))),
                    )?;
                }
                let opt = Adam::new(cfg.optimizer, &store)?;
                Some(LearnedWeights { store, opt })
            } else {
                None
            };
            (net, opt, 0, learned)
        }
    };
    if start > cfg.iters as u64 {
        return Err(Error::arg(
            "train_toy",
            "checkpoint is already past the requested iterations",
        ));
    }

    let pool = cfg.training_pool::<T>()?;
    let mut history = Vec::with_capacity(cfg.iters - start as usize);
    for it in start..cfg.iters as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, streams::ITERATION, it));
        let mut ys = Vec::with_capacity(cfg.batch);
        let mut degs = Vec::with_capacity(cfg.batch);
        let mut refs = Vec::with_capacity(cfg.batch);
        let mut steps = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let (deg, reference) = &pool[rng.random_range(0..pool.len())];
            let t = rng.random_range(1..=schedule.steps());
            let (y, _) = sde::forward_sample_with(&schedule, reference, deg, t, &mut rng)?;
            ys.push(y);
            degs.push(deg.clone());
            refs.push(reference.clone());
            steps.push(t);
        }

        let mut tape = Tape::new();
        let y = tape.constant(Tensor::stack(&ys)?);
        let d = tape.constant(Tensor::stack(&degs)?);
        let gt = tape.constant(Tensor::stack(&refs)?);
        let clean = net.forward(&mut tape, y, d, &steps)?;
        let terms = surrogate::surrogate_terms(&mut tape, clean, gt, &cfg.canny, cfg.bins)?;

        let (weights, rho_vars) = match &learned {
            Some(lw) => {
                let rho: Vec<_> = lw
                    .store
                    .iter()
                    .map(|(_, _, t)| tape.variable(t.clone()))
                    .collect();
                let lambdas = [
                    tape.softplus(rho[0])?,
                    tape.softplus(rho[1])?,
                    tape.softplus(rho[2])?,
                ];
                let vals: Vec<f64> = lw
                    .store
                    .iter()
                    .map(|(_, _, t)| softplus(t.data()[0].to_f64_lossy()))
                    .collect();
                let w = LossWeights {
                    lambda1: vals[0],
                    lambda2: vals[1],
                    lambda3: vals[2],
                    learned: true,
                };
                (w, Some((rho, WeightSource::Vars(lambdas))))
            }
            None => (cfg.loss_weights, None),
        };
        let source = rho_vars
            .as_ref()
            .map_or(WeightSource::Fixed(weights), |(_, s)| *s);
        let total = surrogate::weighted_sum(&mut tape, &terms, source)?;
        let value = |v| -> Result<f64> { Ok(tape.value(v).item()?.to_f64_lossy()) };
        let report = LossReport::new(
            value(terms.pixel)?,
            value(terms.edge)?,
            value(terms.hist)?,
            weights,
        );

        let grads = tape.backward(total)?;
        grads.accumulate_into(net.params_mut())?;
        opt.step(net.params_mut())?;
        if let (Some(lw), Some((rho, _))) = (learned.as_mut(), rho_vars) {
            let ids: Vec<_> = lw.store.ids().collect();
            for (id, v) in ids.into_iter().zip(rho) {
                if let Some(g) = grads.wrt(v) {
                    lw.store.get_mut(id).accumulate_grad(g)?;
                }
            }
            lw.opt.step(&mut lw.store)?;
        }

        let log = IterationLog {
            iteration: it + 1,
            steps,
            loss: report,
        };
        on_iter(&log);
        history.push(log);
    }

    let learned_weights = learned.as_ref().map(|lw| LearnedWeightState {
        rho: std::array::from_fn(|k| {
            lw.store.iter().nth(k).expect("three weights").2.data()[0].to_f64_lossy()
        }),
        adam: lw.opt.state().clone(),
    });
    let checkpoint = Checkpoint {
        format: checkpoint::FORMAT.to_string(),
        version: checkpoint::VERSION,
        network: cfg.network,
        schedule: cfg.schedule,
        iteration: cfg.iters as u64,
        seed: cfg.seed,
        optimizer: cfg.optimizer,
        adam: opt.state().clone(),
        loss_weights: cfg.loss_weights,
        learned_weights,
        tensors: checkpoint::store_to_tensors(net.params()),
    };
    let summary = summarize(&history, cfg.window);
    Ok(TrainOutcome {
        checkpoint,
        history,
        summary,
    })
}
