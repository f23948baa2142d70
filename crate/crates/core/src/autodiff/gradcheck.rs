//! Central finite-difference verification of tape gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::params::ParamStore;
use crate::autodiff::tape::{Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Seed for the random output projection and element subsampling.
    pub seed: u64,
    /// Upper bound on probed elements per tensor; `None` probes all.
    pub max_probes: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0,
            max_probes: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst error per explicit input, then per parameter.
    pub per_tensor: Vec<f64>,
    pub probes: usize,
    /// Probes left out because the `±h` stencil straddled a kink.
    pub kinks: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Relative error of one entry. The floor is a fixed fraction of the largest
/// numeric gradient magnitude over every checked tensor, so entries that are
/// negligible next to the rest of the gradient are judged on absolute error.
fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

const FLOOR_FRACTION: f64 = 1e-3;
/// One-sided slopes that differ by more than this fraction of the entry's own
/// magnitude mean the stencil crossed a kink; smooth curvature gives `~|f''|·h`.
const KINK_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy)]
struct Probe {
    analytic: f64,
    numeric: f64,
    /// `|forward slope − backward slope|`.
    jump: f64,
    /// The jump failed to halve with the step, so it is not plain curvature.
    nonsmooth: bool,
}

/// Checks `f` with respect to its explicit inputs.
pub fn grad_check<T, F>(
    f: F,
    inputs: &[Tensor<T>],
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let store = ParamStore::new();
    grad_check_with_params(|tape, _, vars| f(tape, vars), &store, inputs, opts)
}

/// Checks `f` with respect to its explicit inputs and every tensor in `store`.
///
/// Non-scalar outputs are reduced with a fixed random projection `Σ r ⊙ f(x)`.
pub fn grad_check_with_params<T, F>(
    f: F,
    store: &ParamStore<T>,
    inputs: &[Tensor<T>],
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &ParamStore<T>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&mut tape, store, &vars)?;
    let out_shape = tape.shape(out);
    let projection = if out_shape.numel() == 1 {
        Tensor::ones(out_shape)
    } else {
        Tensor::randn(out_shape, 1.0, &mut rng)
    };
    let r = tape.constant(projection.clone());
    let weighted = tape.mul(out, r)?;
    let loss = tape.sum(weighted)?;
    let grads = tape.backward(loss)?;

    let objective = |store: &ParamStore<T>, inputs: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, store, &vars)?;
        Ok(tape
            .value(out)
            .data()
            .iter()
            .zip(projection.data())
            .map(|(a, b)| a.to_f64_lossy() * b.to_f64_lossy())
            .sum())
    };

    let pick = |len: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        match opts.max_probes {
            Some(m) if m < len => rand::seq::index::sample(rng, len, m).into_vec(),
            _ => (0..len).collect(),
        }
    };

    let base = objective(store, inputs)?;
    let h = opts.step;
    let jump = |plus: f64, minus: f64, h: f64| ((plus - base) - (base - minus)).abs() / h;
    // `eval(δ)` returns the objective with the probed entry shifted by `±δ`.
    let probe = |analytic: f64, eval: &mut dyn FnMut(f64) -> Result<(f64, f64)>| -> Result<Probe> {
        let (plus, minus) = eval(h)?;
        let numeric = (plus - minus) / (2.0 * h);
        let j = jump(plus, minus, h);
        let mut nonsmooth = false;
        if j > KINK_FRACTION * analytic.abs().max(numeric.abs()) {
            // Curvature makes the jump proportional to the step. A kink at
            // distance δ < h can mimic that for one halving, never for two.
            let mut prev = j;
            for d in [h / 2.0, h / 4.0] {
                let (p2, m2) = eval(d)?;
                let next = jump(p2, m2, d);
                nonsmooth |= (prev - 2.0 * next).abs() > 0.25 * prev;
                prev = next;
            }
        }
        Ok(Probe {
            analytic,
            numeric,
            jump: j,
            nonsmooth,
        })
    };
    let mut groups: Vec<Vec<Probe>> = Vec::new();

    // Explicit inputs.
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let idx = pick(inputs[k].numel(), &mut rng);
        let mut pairs = Vec::with_capacity(idx.len());
        for &i in &idx {
            let orig = work[k].data()[i];
            let mut eval = |d: f64| -> Result<(f64, f64)> {
                work[k].data_mut()[i] = orig + T::lit(d);
                let plus = objective(store, &work)?;
                work[k].data_mut()[i] = orig - T::lit(d);
                let minus = objective(store, &work)?;
                work[k].data_mut()[i] = orig;
                Ok((plus, minus))
            };
            pairs.push(probe(analytic.data()[i].to_f64_lossy(), &mut eval)?);
        }
        groups.push(pairs);
    }

    // Parameters.
    let mut pstore = store.clone();
    for id in store.ids() {
        let analytic = grads
            .param(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
        let idx = pick(store.get(id).numel(), &mut rng);
        let mut pairs = Vec::with_capacity(idx.len());
        for &i in &idx {
            let orig = pstore.get(id).data()[i];
            let mut eval = |d: f64| -> Result<(f64, f64)> {
                pstore.get_mut(id).data_mut()[i] = orig + T::lit(d);
                let plus = objective(&pstore, inputs)?;
                pstore.get_mut(id).data_mut()[i] = orig - T::lit(d);
                let minus = objective(&pstore, inputs)?;
                pstore.get_mut(id).data_mut()[i] = orig;
                Ok((plus, minus))
            };
            pairs.push(probe(analytic.data()[i].to_f64_lossy(), &mut eval)?);
        }
        groups.push(pairs);
    }

    let scale = groups
        .iter()
        .flatten()
        .map(|p| p.numeric.abs())
        .fold(0.0, f64::max);
    let floor = (scale * FLOOR_FRACTION).max(1e-12);
    let kink = |p: &Probe| {
        p.nonsmooth && p.jump > KINK_FRACTION * p.analytic.abs().max(p.numeric.abs()).max(floor)
    };
    let per_tensor: Vec<f64> = groups
        .iter()
        .map(|g| {
            g.iter()
                .filter(|p| !kink(p))
                .map(|p| rel_error(p.analytic, p.numeric, floor))
                .fold(0.0, f64::max)
        })
        .collect();
    let probes = groups.iter().map(Vec::len).sum();
    let kinks = groups.iter().flatten().filter(|p| kink(p)).count();
    let max_rel_error = per_tensor.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        per_tensor,
        probes,
        kinks,
        tolerance: opts.tolerance,
        passed: max_rel_error < opts.tolerance,
    })
}
