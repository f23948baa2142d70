//! Receptive-field ladder plus finite-difference checks of every
//! differentiable op and of a whole C2F block.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{
    grad_check, grad_check_with_params, GradCheckOptions, GradCheckReport, ParamStore, Tape, Var,
};
use crate::error::Result;
use crate::experiments::derive_seed;
use crate::losses::{surrogate, CannyParams};
use crate::nn::block::{c2f_block, BlockSpec, C2fWeights};
use crate::nn::{expected_ladder, receptive_field_ladder, LadderReport, COARSE_DILATIONS};
use crate::ops::{Conv2dParams, Padding, PoolKind, UnaryKind};
use crate::tensor::{Shape, Tensor};

pub const PRIMITIVE_TOLERANCE: f64 = 1e-4;
pub const BLOCK_TOLERANCE: f64 = 1e-3;
/// Inputs closer than this to a kink of a piecewise op are moved off it.
const KINK_MARGIN: f64 = 1e-3;
/// A case fails if more than this share of its probes straddled kinks.
const MAX_KINK_SHARE: f64 = 0.05;

fn case_result(name: &str, trials: usize, reports: &[GradCheckReport], tolerance: f64) -> GradCase {
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let probes = reports.iter().map(|r| r.probes).sum();
    let kinks = reports.iter().map(|r| r.kinks).sum();
    GradCase {
        name: name.to_string(),
        trials,
        probes,
        kinks,
        max_rel_error: worst,
        tolerance,
        passed: worst < tolerance && (kinks as f64) <= MAX_KINK_SHARE * probes as f64,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCase {
    pub name: String,
    pub trials: usize,
    pub probes: usize,
    /// Probes set aside because the stencil crossed a kink.
    pub kinks: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

type Case = fn(&mut ChaCha8Rng, GradCheckOptions) -> Result<GradCheckReport>;

fn randn(rng: &mut ChaCha8Rng, s: Shape) -> Tensor<f64> {
    Tensor::randn(s, 1.0, rng)
}

fn small_shape(rng: &mut ChaCha8Rng, channels_even: bool) -> Shape {
    let mut c: usize = rng.random_range(1..=4);
    if channels_even {
        c = 2 * c.div_ceil(2);
    }
    Shape::new(
        rng.random_range(1..=2),
        c,
        rng.random_range(3..=6),
        rng.random_range(3..=6),
    )
}

fn off_kink(x: f64, kink: f64) -> f64 {
    if (x - kink).abs() < KINK_MARGIN {
        if x >= kink {
            kink + 2.0 * KINK_MARGIN
        } else {
            kink - 2.0 * KINK_MARGIN
        }
    } else {
        x
    }
}

fn unary_case(
    kind: UnaryKind,
    positive: bool,
) -> impl Fn(&mut ChaCha8Rng, GradCheckOptions) -> Result<GradCheckReport> {
    move |rng, opts| {
        let s = small_shape(rng, false);
        let mut x = randn(rng, s);
        if positive {
            x = x.map(|v| v.abs() + 0.1);
        }
        x = x.map(|v| off_kink(v, 0.0));
        grad_check(|t, v| t.unary(kind, v[0]), &[x], opts)
    }
}

fn conv_case(rng: &mut ChaCha8Rng, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let groups = rng.random_range(1..=2);
    let dilation = rng.random_range(1..=2);
    let stride = rng.random_range(1..=2);
    let cin = groups * rng.random_range(1..=2);
    let cout = groups * rng.random_range(1..=2);
    let k = if rng.random_bool(0.5) { 3 } else { 1 };
    let s = Shape::new(
        rng.random_range(1..=2),
        cin,
        rng.random_range(4..=7),
        rng.random_range(4..=7),
    );
    let x = randn(rng, s);
    let w = randn(rng, Shape::new(cout, cin / groups, k, k));
    let b = randn(rng, Shape::new(1, cout, 1, 1));
    let padding = if stride == 1 {
        Padding::Same
    } else {
        Padding::Explicit(dilation, dilation)
    };
    let p = Conv2dParams {
        stride,
        dilation,
        groups,
        padding,
    };
    grad_check(|t, v| t.conv2d(v[0], v[1], Some(v[2]), p), &[x, w, b], opts)
}

fn depthwise_case(rng: &mut ChaCha8Rng, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let s = small_shape(rng, false);
    let x = randn(rng, s);
    let w = randn(rng, Shape::new(2 * s.c, 1, 3, 3));
    let b = randn(rng, Shape::new(1, 2 * s.c, 1, 1));
    grad_check(
        |t, v| t.depthwise_conv2d(v[0], v[1], Some(v[2])),
        &[x, w, b],
        opts,
    )
}

fn broadcast_operand(rng: &mut ChaCha8Rng, s: Shape) -> Tensor<f64> {
    let n = if rng.random_bool(0.5) { 1 } else { s.n };
    let shape = match rng.random_range(0..3) {
        0 => Shape::new(n, s.c, s.h, s.w),
        1 => Shape::new(n, s.c, 1, 1),
        _ => Shape::new(n, 1, s.h, s.w),
    };
    randn(rng, shape)
}

fn binary_case(
    op: fn(&mut Tape<f64>, Var, Var) -> Result<Var>,
) -> impl Fn(&mut ChaCha8Rng, GradCheckOptions) -> Result<GradCheckReport> {
    move |rng, opts| {
        let s = small_shape(rng, false);
        let a = randn(rng, s);
        let b = broadcast_operand(rng, s);
        grad_check(|t, v| op(t, v[0], v[1]), &[a, b], opts)
    }
}

fn layer_norm_case(rng: &mut ChaCha8Rng, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let s = small_shape(rng, false);
    let x = randn(rng, s);
    let g = randn(rng, Shape::new(1, s.c, 1, 1));
    let b = randn(rng, Shape::new(1, s.c, 1, 1));
    grad_check(
        |t, v| t.layer_norm(v[0], Some(v[1]), Some(v[2]), 1e-6),
        &[x, g, b],
        opts,
    )
}

fn pool_case(
    kind: PoolKind,
) -> impl Fn(&mut ChaCha8Rng, GradCheckOptions) -> Result<GradCheckReport> {
    move |rng, opts| {
        let x = {
            let s = small_shape(rng, false);
            randn(rng, s)
        };
        grad_check(|t, v| t.pool(kind, v[0]), &[x], opts)
    }
}

fn simple_gate_case(rng: &mut ChaCha8Rng, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let x = {
        let s = small_shape(rng, true);
        randn(rng, s)
    };
    grad_check(|t, v| t.simple_gate(v[0]), &[x], opts)
}

fn sca_case(rng: &mut ChaCha8Rng, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let s = small_shape(rng, false);
    let x = randn(rng, s);
    let w = randn(rng, Shape::new(s.c, s.c, 1, 1));
    let b = randn(rng, Shape::new(1, s.c, 1, 1));
    grad_check(|t, v| t.sca(v[0], v[1], Some(v[2])), &[x, w, b], opts)
}

fn concat_case(rng: &mut ChaCha8Rng, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let s = small_shape(rng, false);
    let a = randn(rng, s);
    let extra = rng.random_range(1..=3);
    let b = randn(rng, Shape::new(s.n, extra, s.h, s.w));
    grad_check(|t, v| t.concat(&[v[0], v[1]]), &[a, b], opts)
}

fn up_case(rng: &mut ChaCha8Rng, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let x = {
        let s = small_shape(rng, false);
        randn(rng, s)
    };
    grad_check(|t, v| t.interp2x_up(v[0]), &[x], opts)
}

fn down_case(rng: &mut ChaCha8Rng, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let s = small_shape(rng, false);
    let x = randn(rng, Shape::new(s.n, s.c, 2 * s.h, 2 * s.w));
    grad_check(|t, v| t.interp2x_down(v[0]), &[x], opts)
}

fn sum_case(rng: &mut ChaCha8Rng, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let x = {
        let s = small_shape(rng, false);
        randn(rng, s)
    };
    grad_check(|t, v| t.sum(v[0]), &[x], opts)
}

fn mean_case(rng: &mut ChaCha8Rng, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let x = {
        let s = small_shape(rng, false);
        randn(rng, s)
    };
    grad_check(|t, v| t.mean(v[0]), &[x], opts)
}

/// Uniform values in `[0.02, 0.98]` kept away from soft-histogram bin centres.
fn histogram_input(rng: &mut ChaCha8Rng, s: Shape, bins: usize) -> Tensor<f64> {
    Tensor::<f64>::rand_uniform(s, 0.02, 0.98, rng).map(|v: f64| {
        let k = bins as f64;
        let centre = ((v * k - 0.5).round() + 0.5) / k;
        off_kink(v * k, centre * k) / k
    })
}

fn soft_histogram_case(rng: &mut ChaCha8Rng, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let bins = rng.random_range(4..=16);
    let s = small_shape(rng, false);
    let x = histogram_input(rng, s, bins);
    grad_check(|t, v| t.soft_histogram(v[0], bins), &[x], opts)
}

fn edge_surrogate_case(rng: &mut ChaCha8Rng, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let c = if rng.random_bool(0.5) { 3 } else { 1 };
    let s = Shape::new(1, c, rng.random_range(6..=9), rng.random_range(6..=9));
    let a = Tensor::<f64>::rand_uniform(s, 0.0, 1.0, rng);
    let b = Tensor::<f64>::rand_uniform(s, 0.0, 1.0, rng);
    let params = CannyParams::default();
    grad_check(
        |t, v| {
            let gt = t.constant(b.clone());
            Ok(surrogate::surrogate_terms(t, v[0], gt, &params, 8)?.edge)
        },
        std::slice::from_ref(&a),
        opts,
    )
}

fn hist_surrogate_case(rng: &mut ChaCha8Rng, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let bins = 8;
    let s = Shape::new(rng.random_range(1..=2), 3, 5, 5);
    let a = histogram_input(rng, s, bins);
    let b = histogram_input(rng, s, bins);
    // Soft histograms of a and b must differ in every bin for |·| to be smooth;
    // random inputs make exact ties vanishingly unlikely.
    grad_check(
        |t, v| {
            let gt = t.constant(b.clone());
            let ha = t.soft_histogram(v[0], bins)?;
            let hb = t.soft_histogram(gt, bins)?;
            let d = t.sub(ha, hb)?;
            let d = t.abs(d)?;
            t.sum(d)
        },
        &[a],
        opts,
    )
}

type BoxedCase = Box<dyn Fn(&mut ChaCha8Rng, GradCheckOptions) -> Result<GradCheckReport>>;

fn cases() -> Vec<(&'static str, BoxedCase)> {
    fn b<F>(f: F) -> BoxedCase
    where
        F: Fn(&mut ChaCha8Rng, GradCheckOptions) -> Result<GradCheckReport> + 'static,
    {
        Box::new(f)
    }
    vec![
        ("conv2d", b(conv_case as Case)),
        ("depthwise_conv2d", b(depthwise_case as Case)),
        ("add", b(binary_case(|t, a, b| t.add(a, b)))),
        ("sub", b(binary_case(|t, a, b| t.sub(a, b)))),
        ("mul", b(binary_case(|t, a, b| t.mul(a, b)))),
        ("sigmoid", b(unary_case(UnaryKind::Sigmoid, false))),
        ("relu", b(unary_case(UnaryKind::Relu, false))),
        ("abs", b(unary_case(UnaryKind::Abs, false))),
        ("square", b(unary_case(UnaryKind::Square, false))),
        ("softplus", b(unary_case(UnaryKind::Softplus, false))),
        ("sqrt_eps", b(unary_case(UnaryKind::SqrtEps(1e-6), true))),
        (
            "affine",
            b(unary_case(UnaryKind::Affine(-1.5, 0.25), false)),
        ),
        ("layer_norm", b(layer_norm_case as Case)),
        ("spatial_avg_pool", b(pool_case(PoolKind::SpatialAvg))),
        ("spatial_max_pool", b(pool_case(PoolKind::SpatialMax))),
        ("channel_avg_pool", b(pool_case(PoolKind::ChannelAvg))),
        ("simple_gate", b(simple_gate_case as Case)),
        ("sca", b(sca_case as Case)),
        ("concat", b(concat_case as Case)),
        ("interp2x_up", b(up_case as Case)),
        ("interp2x_down", b(down_case as Case)),
        ("sum", b(sum_case as Case)),
        ("mean", b(mean_case as Case)),
        ("soft_histogram", b(soft_histogram_case as Case)),
        ("edge_surrogate", b(edge_surrogate_case as Case)),
        ("hist_surrogate", b(hist_surrogate_case as Case)),
    ]
}

/// One randomized block: random weights and input, all parameters probed
/// (subsampled to `probes` entries per tensor).
pub fn block_grad_check(seed: u64, probes: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let spec = BlockSpec::new(4);
    let w = C2fWeights::init(&mut store, "block", spec, &mut rng)?;
    // Non-trivial residual branch so the output projection is exercised.
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).ends_with("project.weight") {
            let shape = store.get(id).shape();
            store.set(id, Tensor::randn(shape, 0.5, &mut rng))?;
        }
    }
    let x = Tensor::randn(Shape::new(1, 4, 8, 8), 1.0, &mut rng);
    grad_check_with_params(
        |t, s, v| c2f_block(t, s, &w, v[0]),
        &store,
        &[x],
        GradCheckOptions {
            tolerance: BLOCK_TOLERANCE,
            seed,
            max_probes: Some(probes),
            ..Default::default()
        },
    )
}

/// Runs `trials` randomized checks per primitive plus `block_trials` block checks.
pub fn gradient_suite(seed: u64, trials: usize, block_trials: usize) -> Result<Vec<GradCase>> {
    let mut out = Vec::new();
    for (k, (name, case)) in cases().into_iter().enumerate() {
        let reports = (0..trials)
            .map(|trial| {
                let s = derive_seed(seed, 100 + k as u64, trial as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let opts = GradCheckOptions {
                    tolerance: PRIMITIVE_TOLERANCE,
                    seed: s,
                    ..Default::default()
                };
                case(&mut rng, opts)
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(case_result(name, trials, &reports, PRIMITIVE_TOLERANCE));
    }
    if block_trials > 0 {
        let reports = (0..block_trials)
            .map(|trial| block_grad_check(derive_seed(seed, 99, trial as u64), 6))
            .collect::<Result<Vec<_>>>()?;
        out.push(case_result(
            "c2f_block",
            block_trials,
            &reports,
            BLOCK_TOLERANCE,
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub ladder: LadderReport,
    pub expected: [usize; 4],
    pub ladder_passed: bool,
    pub gradients: Vec<GradCase>,
    pub gradients_passed: bool,
    pub passed: bool,
}

/// Checks the claimed `3, 7, 15, 31` ladder for the given dilations and runs
/// the gradient suite.
pub fn probe_suite(
    dilations: [usize; 3],
    channels: usize,
    seed: u64,
    trials: usize,
    block_trials: usize,
) -> Result<ProbeReport> {
    let ladder = receptive_field_ladder::<f64>(channels, dilations, seed)?;
    let expected = expected_ladder(COARSE_DILATIONS);
    let ladder_passed = ladder.measured == expected;
    let gradients = gradient_suite(seed, trials, block_trials)?;
    let gradients_passed = gradients.iter().all(|g| g.passed);
    Ok(ProbeReport {
        ladder,
        expected,
        ladder_passed,
        gradients,
        gradients_passed,
        passed: ladder_passed && gradients_passed,
    })
}
