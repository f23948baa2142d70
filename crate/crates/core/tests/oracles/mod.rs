//! Straight-line reference implementations shared by the test targets.

#![allow(dead_code, clippy::needless_range_loop)]

use c2fdiff::data::synthetic_scene;
use c2fdiff::losses::canny::{CannyParams, LUMA};
use c2fdiff::{Shape, Tensor64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Reference detector on a row-major luminance plane.
///
/// Conventions: replicated borders, Gaussian σ with radius ⌈3σ⌉, Sobel
/// magnitude divided by 4, four-way direction quantization, neighbours compared
/// with a 1e-9 tie allowance, outermost ring suppressed, 8-connected hysteresis.
pub fn reference(h: usize, w: usize, img: &[f64], p: &CannyParams) -> Vec<bool> {
    let r = (3.0 * p.sigma).ceil() as usize;
    // 2-D kernel as an outer product, applied on a replicate-padded copy.
    let g: Vec<f64> = (0..=2 * r)
        .map(|i| {
            let d = i as f64 - r as f64;
            (-d * d / (2.0 * p.sigma * p.sigma)).exp()
        })
        .collect();
    let gs: f64 = g.iter().sum();
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let padded: Vec<f64> = (0..ph * pw)
        .map(|i| {
            let y = (i / pw).saturating_sub(r).min(h - 1);
            let x = (i % pw).saturating_sub(r).min(w - 1);
            img[y * w + x]
        })
        .collect();
    let mut blurred = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..=2 * r {
                for kx in 0..=2 * r {
                    acc += g[ky] * g[kx] * padded[(y + ky) * pw + x + kx];
                }
            }
            blurred[y * w + x] = acc / (gs * gs);
        }
    }
    let at = |y: isize, x: isize| {
        blurred[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize]
    };
    const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            for a in 0..3 {
                for b in 0..3 {
                    let v = at(y as isize + a as isize - 1, x as isize + b as isize - 1);
                    gx[y * w + x] += KX[a][b] * v;
                    gy[y * w + x] += KX[b][a] * v;
                }
            }
        }
    }
    let mag: Vec<f64> = (0..h * w)
        .map(|i| (gx[i] * gx[i] + gy[i] * gy[i]).sqrt() / 4.0)
        .collect();

    let t1 = (22.5f64).to_radians().tan();
    let t2 = (67.5f64).to_radians().tan();
    let mut thin = vec![0.0; h * w];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let i = y * w + x;
            // Fold to the upper half plane, then bucket by slope.
            let (mut a, mut b) = (gx[i], gy[i]);
            if b < 0.0 || (b == 0.0 && a < 0.0) {
                a = -a;
                b = -b;
            }
            let (dy, dx): (isize, isize) = if b < t1 * a.abs() {
                (0, 1)
            } else if b >= t2 * a.abs() {
                (1, 0)
            } else if a > 0.0 {
                (1, 1)
            } else {
                (1, -1)
            };
            let n1 = mag[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
            let n2 = mag[(y as isize - dy) as usize * w + (x as isize - dx) as usize];
            if mag[i] + 1e-9 >= n1 && mag[i] + 1e-9 >= n2 {
                thin[i] = mag[i];
            }
        }
    }

    let mut edge = vec![false; h * w];
    let mut stack: Vec<usize> = (0..h * w).filter(|&i| thin[i] >= p.t_high).collect();
    for &i in &stack {
        edge[i] = true;
    }
    while let Some(i) = stack.pop() {
        let (y, x) = (i / w, i % w);
        for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
            for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                let j = ny * w + nx;
                if !edge[j] && thin[j] >= p.t_low {
                    edge[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    edge
}

pub fn gray(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Tensor64 {
    Tensor64::from_fn(Shape::new(1, 1, h, w), |_, _, y, x| f(y, x))
}

pub fn corpus() -> Vec<(String, Tensor64)> {
    let mut out: Vec<(String, Tensor64)> = vec![
        ("constant".into(), gray(16, 16, |_, _| 0.4)),
        (
            "vertical step".into(),
            gray(20, 24, |_, x| if x < 11 { 0.1 } else { 0.9 }),
        ),
        (
            "horizontal step".into(),
            gray(24, 20, |y, _| if y < 13 { 0.8 } else { 0.2 }),
        ),
        (
            "diagonal step".into(),
            gray(24, 24, |y, x| if x > y { 1.0 } else { 0.0 }),
        ),
        (
            "anti-diagonal".into(),
            gray(22, 22, |y, x| if x + y > 21 { 0.7 } else { 0.1 }),
        ),
        (
            "white square".into(),
            gray(16, 16, |y, x| {
                ((4..12).contains(&y) && (4..12).contains(&x)) as u8 as f64
            }),
        ),
        (
            "offset square".into(),
            gray(28, 32, |y, x| {
                ((3..19).contains(&y) && (9..27).contains(&x)) as u8 as f64 * 0.6
            }),
        ),
        (
            "disc".into(),
            gray(32, 32, |y, x| {
                let (dy, dx) = (y as f64 - 15.5, x as f64 - 15.5);
                if dy * dy + dx * dx < 81.0 {
                    0.9
                } else {
                    0.2
                }
            }),
        ),
        (
            "ring".into(),
            gray(30, 30, |y, x| {
                let d = ((y as f64 - 14.0).powi(2) + (x as f64 - 15.0).powi(2)).sqrt();
                if (6.0..11.0).contains(&d) {
                    1.0
                } else {
                    0.0
                }
            }),
        ),
        (
            "checker".into(),
            gray(32, 32, |y, x| ((y / 8 + x / 8) % 2) as f64),
        ),
        (
            "stripes".into(),
            gray(24, 32, |_, x| ((x / 5) % 2) as f64 * 0.8),
        ),
        ("ramp".into(), gray(20, 20, |_, x| x as f64 / 19.0)),
        (
            "steep ramp".into(),
            gray(20, 20, |y, x| {
                ((x as f64 - 10.0) * 0.3).clamp(0.0, 1.0) * (y as f64 / 19.0)
            }),
        ),
        (
            "cross".into(),
            gray(25, 25, |y, x| {
                ((10..15).contains(&y) || (10..15).contains(&x)) as u8 as f64
            }),
        ),
        (
            "faint step".into(),
            gray(20, 20, |_, x| if x < 10 { 0.45 } else { 0.55 }),
        ),
        (
            "triangle".into(),
            gray(26, 26, |y, x| (x <= y && y < 22 && x > 3) as u8 as f64),
        ),
    ];
    for seed in 0..4u64 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        out.push((
            format!("noise {seed}"),
            Tensor64::rand_uniform(Shape::new(1, 1, 24, 24), 0.0, 1.0, &mut r),
        ));
    }
    for seed in 0..4u64 {
        out.push((format!("scene {seed}"), synthetic_scene(32, 32, seed)));
    }
    out
}

pub fn luminance_of(img: &Tensor64) -> Vec<f64> {
    let s = img.shape();
    (0..s.plane())
        .map(|i| {
            if s.c == 1 {
                img.data()[i]
            } else {
                (0..3)
                    .map(|c| LUMA[c] * img.data()[c * s.plane() + i])
                    .sum()
            }
        })
        .collect()
}

/// Mean over valid 11×11 windows of the SSIM index, each window weighted by a
/// 2-D Gaussian (σ = 1.5) and its moments taken two-pass.
pub fn ssim_oracle(a: &[f64], b: &[f64], h: usize, w: usize, peak: f64) -> f64 {
    let mut g = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let d2 = (i as f64 - 5.0).powi(2) + (j as f64 - 5.0).powi(2);
            *v = (-d2 / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let mut acc = 0.0;
    let mut windows = 0usize;
    for y in 0..=h - 11 {
        for x in 0..=w - 11 {
            let px = |img: &[f64], i: usize, j: usize| img[(y + i) * w + x + j];
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    ma += g[i][j] / total * px(a, i, j);
                    mb += g[i][j] / total * px(b, i, j);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = g[i][j] / total;
                    let (da, db) = (px(a, i, j) - ma, px(b, i, j) - mb);
                    va += wt * da * da;
                    vb += wt * db * db;
                    cov += wt * da * db;
                }
            }
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            windows += 1;
        }
    }
    acc / windows as f64
}

pub fn luma(img: &Tensor64, n: usize) -> Vec<f64> {
    let s = img.shape();
    let item = &img.data()[n * s.item()..(n + 1) * s.item()];
    (0..s.plane())
        .map(|i| (0..3).map(|c| LUMA[c] * item[c * s.plane() + i]).sum())
        .collect()
}
