#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mtssl::baselines::build_gramian;
use mtssl::ssl::{eval_offline_objective, Rule, SslNeuron, SslParams};
use mtssl::tiling::{increments, saddle_objective, TilingActivity, TilingParams, TilingState};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: &mut ChaCha8Rng, shape: (usize, usize), lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| r.random_range(lo..hi))
}

pub fn vector(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| r.random_range(lo..hi))
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}

pub struct Point {
    pub params: TilingParams,
    pub state: TilingState,
    pub act: TilingActivity,
    pub x: Array1<f64>,
}

pub fn random_point(r: &mut ChaCha8Rng, m: usize, n: usize) -> Point {
    let params = TilingParams::new(m, n, r.random_range(0.0..2.0));
    let state = TilingState {
        w: uniform(r, (m, n), -1.0, 1.0),
        b: vector(r, m, 0.0, 1.0),
        t: 0,
    };
    let act = TilingActivity {
        h: vector(r, m, 0.0, 1.0),
        u: vector(r, m, 0.0, 1.0),
        v: uniform(r, (m, m), 0.0, 1.0),
    };
    Point {
        params,
        state,
        act,
        x: vector(r, n, -1.0, 1.0),
    }
}

/// Worst relative error between the fast increments and central differences
/// of the saddle objective (`Δh = -½∂L/∂h`, `Δu = ½∂L/∂u`, `ΔV = ½∂L/∂V`).
pub fn gradient_check(seed: u64, points: usize) -> f64 {
    let mut r = rng(seed);
    let eps = 1e-6;
    let (m, n) = (4, 3);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let p = random_point(&mut r, m, n);
        let objective =
            |act: &TilingActivity| saddle_objective(&p.state, act, p.x.view(), &p.params).unwrap();
        let (dh, du, dv) = increments(&p.state, &p.act, p.x.view(), &p.params).unwrap();
        let central = |bump: &dyn Fn(&mut TilingActivity, f64)| {
            let (mut a, mut b) = (p.act.clone(), p.act.clone());
            bump(&mut a, eps);
            bump(&mut b, -eps);
            (objective(&a) - objective(&b)) / (2.0 * eps)
        };
        let fd_h: Vec<f64> = (0..m)
            .map(|i| -0.5 * central(&|a, e| a.h[i] += e))
            .collect();
        let fd_u: Vec<f64> = (0..m).map(|i| 0.5 * central(&|a, e| a.u[i] += e)).collect();
        let fd_v: Vec<f64> = (0..m * m)
            .map(|k| 0.5 * central(&|a, e| a.v[[k / m, k % m]] += e))
            .collect();
        worst = worst
            .max(rel_err(&dh.to_vec(), &fd_h))
            .max(rel_err(&du.to_vec(), &fd_u))
            .max(rel_err(&dv.iter().copied().collect::<Vec<_>>(), &fd_v));
    }
    worst
}

/// Worst `|Σ(w_i - w_j)²S_ij - 2wᵀLw|` over random gramians.
pub fn edge_sum_check(seed: u64, trials: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let h = uniform(&mut r, (6, 20), 0.0, 1.0);
        let g = build_gramian(h.view()).unwrap();
        let w = vector(&mut r, 6, -3.0, 3.0);
        worst = worst.max((g.edge_sum(w.view()) - 2.0 * g.quadratic_form(w.view())).abs());
    }
    worst
}

/// Worst gap between the neuron's `w` and the mean of `y_s h_s` over a
/// random stream, checked after every step.
pub fn running_mean_check(seed: u64, steps: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for rule in [Rule::Clipped, Rule::Tanh] {
        let mut neuron = SslNeuron::new(SslParams { mu: 50.0, rule }, 6);
        let mut sum = Array1::<f64>::zeros(6);
        for t in 1..=steps {
            let h = vector(&mut r, 6, 0.0, 1.0);
            let z = [0i8, 0, 0, 0, 1, -1][r.random_range(0..6)];
            let y = neuron.step(h.view(), z).unwrap();
            sum.scaled_add(y, &h);
            let mean = &sum / t as f64;
            for (a, b) in neuron.state.w.iter().zip(&mean) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

pub struct FixedPointCase {
    /// Offline objective at the online outputs.
    pub online: f64,
    /// Minimum over the lattice `{-1, -0.9, ..., 1}³`.
    pub grid: f64,
    /// How far the true minimum can sit below the lattice minimum.
    pub resolution: f64,
}

impl FixedPointCase {
    pub fn ok(&self) -> bool {
        self.online <= self.grid + 1e-3 && self.grid - self.online <= self.resolution
    }
}

/// Streams `T = 3` samples with `m = 2` channels through the neuron for many
/// epochs and compares the last epoch's outputs with a brute-force minimizer
/// of the offline objective. `μ` keeps `(μ/T)HᵀH` below the identity, so the
/// objective is convex and its minimizer is the projected fixed point.
pub fn fixed_point_cases(seed: u64, instances: usize) -> Vec<FixedPointCase> {
    let mut r = rng(seed);
    let lattice: Vec<f64> = (0..=20).map(|k| -1.0 + 0.1 * k as f64).collect();
    let sqrt3 = 3f64.sqrt();
    (0..instances)
        .map(|_| {
            let h = uniform(&mut r, (2, 3), 0.0, 1.0);
            let z = Array1::from(vec![1.0, 0.0, -1.0]);
            let k = h.t().dot(&h);
            let top = (0..200).fold(Array1::from_elem(3, 1.0), |v, _| {
                let n = k.dot(&v);
                let s = n.dot(&n).sqrt();
                n / s
            });
            let lam = top.dot(&k.dot(&top));
            let mu = r.random_range(0.3..0.9) * 3.0 / lam;
            let params = SslParams {
                mu,
                rule: Rule::Clipped,
            };

            let mut neuron = SslNeuron::new(params, 2);
            let mut y = [0.0; 3];
            for _ in 0..20_000 {
                for (t, yt) in y.iter_mut().enumerate() {
                    *yt = neuron.step(h.column(t), z[t] as i8).unwrap();
                }
            }
            let eval = |y: Vec<f64>| {
                eval_offline_objective(h.view(), z.view(), Array1::from(y).view(), &params).unwrap()
            };
            let online = eval(y.to_vec());
            let mut grid = f64::INFINITY;
            for &a in &lattice {
                for &b in &lattice {
                    for &c in &lattice {
                        grid = grid.min(eval(vec![a, b, c]));
                    }
                }
            }
            // gradient norm bound on the box, times the distance to the nearest lattice point
            let lipschitz = 2.0 * (2.0 * sqrt3 + 2.0 * mu / 3.0 * lam * sqrt3);
            FixedPointCase {
                online,
                grid,
                resolution: lipschitz * 0.05 * sqrt3,
            }
        })
        .collect()
}
