//! Manifold-tiling layer.
//!
//! Each input `x` is encoded by running projected gradient
//! descent-ascent-descent on the per-sample saddle problem
//!
//! ```text
//! L(h, u, V) = -2 hᵀWx + 2√α hᵀb - ‖u‖² + 2 uᵀVh - ‖V‖²_F
//! ```
//!
//! minimized over `h ≥ 0` and maximized over `u ≥ 0` and `V ≥ 0`. The
//! maximization over `(u, V)` equals `‖u‖²(‖h‖² - 1)`, so `u` acts as a
//! factorized multiplier for the constraint `‖h‖ ≤ 1`. After the fast
//! variables settle, the feedforward weights `W` learn Hebbian-style and the
//! bias `b` tracks the mean activity.

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

/// Learning-rate schedule for the slow weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaSchedule {
    /// Fixed rate.
    Constant(f64),
    /// `1 / (t + 1)`, a running mean over every sample seen.
    InverseTime,
}

impl EtaSchedule {
    pub fn at(&self, t: u64) -> f64 {
        match *self {
            EtaSchedule::Constant(eta) => eta,
            EtaSchedule::InverseTime => 1.0 / (t as f64 + 1.0),
        }
    }
}

/// How the fast variables are initialized for the next sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarmStart {
    /// Keep `(u, V)` from the previous sample, reset `h` to zero.
    Carry,
    /// Start every sample from the cold activity.
    Reset,
}

/// Starting point of the slow weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TilingInit {
    /// i.i.d. uniform `W` on `[0, init_scale]`, `b = 0`.
    Uniform,
    /// Each row of `W` is `init_scale` times a distinct random input, with
    /// `b` set so the channel fires on the cap `xᵢ·x > α`.
    Samples,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TilingParams {
    /// Number of output channels.
    pub m: usize,
    /// Input dimension.
    pub n: usize,
    /// Similarity threshold.
    pub alpha: f64,
    pub gamma_h: f64,
    pub gamma_u: f64,
    pub gamma_v: f64,
    pub eta: EtaSchedule,
    pub max_fast_iters: usize,
    /// Stop when the max-norm change of `h` and of `u` in one fast step falls
    /// below this.
    pub fast_tol: f64,
    pub warm_start: WarmStart,
    /// Euclidean norm of the uniform inhibitory activity used at a cold start.
    /// `u = 0` is absorbing under the fast dynamics, so this must be positive
    /// for the norm constraint to ever engage.
    pub u_init: f64,
    /// Feedforward weights start i.i.d. uniform on `[0, init_scale]`.
    pub init_scale: f64,
}

impl TilingParams {
    pub fn new(m: usize, n: usize, alpha: f64) -> Self {
        TilingParams {
            m,
            n,
            alpha,
            gamma_h: 0.3,
            gamma_u: 0.03,
            gamma_v: 1.0,
            eta: EtaSchedule::Constant(0.01),
            max_fast_iters: 500,
            fast_tol: 1e-5,
            warm_start: WarmStart::Reset,
            u_init: 1.0,
            init_scale: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::param("tiling.m", "must be at least 1"));
        }
        if self.n == 0 {
            return Err(Error::param("tiling.n", "must be at least 1"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::param(
                "tiling.alpha",
                format!("must be finite and >= 0, got {}", self.alpha),
            ));
        }
        for (name, g) in [
            ("tiling.gamma_h", self.gamma_h),
            ("tiling.gamma_u", self.gamma_u),
            ("tiling.gamma_v", self.gamma_v),
        ] {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::param(
                    name,
                    format!("step size must be finite and > 0, got {g}"),
                ));
            }
        }
        if let EtaSchedule::Constant(eta) = self.eta {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(Error::param(
                    "tiling.eta",
                    format!("must lie in (0, 1], got {eta}"),
                ));
            }
        }
        if self.max_fast_iters == 0 {
            return Err(Error::param("tiling.max_fast_iters", "must be at least 1"));
        }
        if self.fast_tol.is_nan() || self.fast_tol < 0.0 {
            return Err(Error::param(
                "tiling.fast_tol",
                format!("must be >= 0, got {}", self.fast_tol),
            ));
        }
        if !(self.u_init >= 0.0 && self.u_init.is_finite()) {
            return Err(Error::param(
                "tiling.u_init",
                format!("must be finite and >= 0, got {}", self.u_init),
            ));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::param(
                "tiling.init_scale",
                format!("must be finite and >= 0, got {}", self.init_scale),
            ));
        }
        Ok(())
    }
}

/// Slow weights of the layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TilingState {
    /// Feedforward weights, `m × n`.
    pub w: Array2<f64>,
    /// Homeostatic bias, length `m`, nonnegative.
    pub b: Array1<f64>,
    /// Number of slow updates applied.
    pub t: u64,
}

/// Fast variables for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TilingActivity {
    /// Excitatory activity, length `m`.
    pub h: Array1<f64>,
    /// Inhibitory activity, length `m`.
    pub u: Array1<f64>,
    /// Excitatory-to-inhibitory weights, `m × m`.
    pub v: Array2<f64>,
}

impl TilingActivity {
    pub fn zeros(m: usize) -> Self {
        TilingActivity {
            h: Array1::zeros(m),
            u: Array1::zeros(m),
            v: Array2::zeros((m, m)),
        }
    }

    /// `h = 0`, `V = 0` and a uniform `u` of norm `params.u_init`.
    pub fn cold(params: &TilingParams) -> Self {
        let mut act = TilingActivity::zeros(params.m);
        act.u.fill(params.u_init / (params.m as f64).sqrt());
        act
    }

    fn warm_from(prev: &TilingActivity, params: &TilingParams) -> Self {
        match params.warm_start {
            WarmStart::Reset => TilingActivity::cold(params),
            WarmStart::Carry => TilingActivity {
                h: Array1::zeros(params.m),
                u: prev.u.clone(),
                v: prev.v.clone(),
            },
        }
    }

    fn check(&self, m: usize) -> Result<()> {
        if self.h.len() != m || self.u.len() != m || self.v.dim() != (m, m) {
            return Err(Error::Shape(format!(
                "activity has h {}, u {}, V {:?}; expected {m} channels",
                self.h.len(),
                self.u.len(),
                self.v.dim()
            )));
        }
        Ok(())
    }

    /// One projected descent-ascent-descent step, all blocks read from the
    /// pre-step values. Returns the larger max-norm change of `h` and `u`.
    fn step_in_place(&mut self, drive: ArrayView1<f64>, params: &TilingParams) -> f64 {
        let vtu = self.v.t().dot(&self.u);
        let vh = self.v.dot(&self.h);

        let gv = params.gamma_v;
        Zip::from(&mut self.v)
            .and_broadcast(&self.u.view().insert_axis(Axis(1)))
            .and_broadcast(&self.h.view().insert_axis(Axis(0)))
            .for_each(|v, &u, &h| *v = (*v + gv * (u * h - *v)).max(0.0));

        let (gh, gu) = (params.gamma_h, params.gamma_u);
        let mut change = 0.0f64;
        Zip::from(&mut self.h)
            .and(&mut self.u)
            .and(drive)
            .and(&vtu)
            .and(&vh)
            .for_each(|h, u, &d, &vtu, &vh| {
                let h_next = (*h + gh * (d - vtu)).max(0.0);
                let u_next = (*u + gu * (vh - *u)).max(0.0);
                change = change.max((h_next - *h).abs()).max((u_next - *u).abs());
                *h = h_next;
                *u = u_next;
            });
        change
    }
}

impl TilingActivity {
    /// Same iteration as repeated [`step_in_place`](Self::step_in_place) for
    /// `γ_V = 1`. Then every step replaces `V` by `u hᵀ` of the previous
    /// iterate, already nonnegative, so `V` is kept as two factors and each
    /// step costs O(m) instead of O(m²).
    fn settle_rank_one(&mut self, drive: ArrayView1<f64>, params: &TilingParams) -> (usize, bool) {
        let (gh, gu) = (params.gamma_h, params.gamma_u);
        let mut vtu = self.v.t().dot(&self.u);
        let mut vh = self.v.dot(&self.h);
        let mut pu = self.u.clone();
        let mut ph = self.h.clone();
        let mut iterations = 0;
        let mut converged = false;
        while iterations < params.max_fast_iters {
            pu.assign(&self.u);
            ph.assign(&self.h);
            let mut change = 0.0f64;
            Zip::from(&mut self.h)
                .and(&mut self.u)
                .and(drive)
                .and(&vtu)
                .and(&vh)
                .for_each(|h, u, &d, &vtu, &vh| {
                    let h_next = (*h + gh * (d - vtu)).max(0.0);
                    let u_next = (*u + gu * (vh - *u)).max(0.0);
                    change = change.max((h_next - *h).abs()).max((u_next - *u).abs());
                    *h = h_next;
                    *u = u_next;
                });
            let uu = pu.dot(&self.u);
            let hh = ph.dot(&self.h);
            Zip::from(&mut vtu).and(&ph).for_each(|v, &p| *v = p * uu);
            Zip::from(&mut vh).and(&pu).for_each(|v, &p| *v = p * hh);
            iterations += 1;
            if change < params.fast_tol {
                converged = true;
                break;
            }
        }
        Zip::from(&mut self.v)
            .and_broadcast(&pu.view().insert_axis(Axis(1)))
            .and_broadcast(&ph.view().insert_axis(Axis(0)))
            .for_each(|v, &u, &h| *v = u * h);
        (iterations, converged)
    }
}

/// Result of running the fast dynamics on one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub activity: TilingActivity,
    pub iterations: usize,
    /// `false` when `max_fast_iters` ran out before the tolerance was met.
    pub converged: bool,
}

impl Inference {
    pub fn h(&self) -> &Array1<f64> {
        &self.activity.h
    }
}

pub fn init_tiling(params: &TilingParams, seed: u64) -> Result<TilingState> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(0.0, params.init_scale)
        .map_err(|e| Error::param("tiling.init_scale", e.to_string()))?;
    let w = Array2::from_shape_fn((params.m, params.n), |_| dist.sample(&mut rng));
    Ok(TilingState {
        w,
        b: Array1::zeros(params.m),
        t: 0,
    })
}

/// Seeds channel `i` on input `inputs[kᵢ]` for `m` distinct random `kᵢ`.
pub fn init_from_samples(
    params: &TilingParams,
    inputs: &[Array1<f64>],
    seed: u64,
) -> Result<TilingState> {
    params.validate()?;
    if inputs.len() < params.m {
        return Err(Error::Config(format!(
            "sample initialization needs at least {} inputs, got {}",
            params.m,
            inputs.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, inputs.len(), params.m);
    let mut w = Array2::zeros((params.m, params.n));
    for (i, k) in picks.iter().enumerate() {
        let x = &inputs[k];
        if x.len() != params.n {
            return Err(Error::Shape(format!(
                "input has length {}, expected {}",
                x.len(),
                params.n
            )));
        }
        w.row_mut(i).assign(&(x * params.init_scale));
    }
    Ok(TilingState {
        w,
        b: Array1::from_elem(params.m, params.alpha.sqrt() * params.init_scale),
        t: 0,
    })
}

fn check_state(state: &TilingState, params: &TilingParams) -> Result<()> {
    if state.w.dim() != (params.m, params.n) || state.b.len() != params.m {
        return Err(Error::Shape(format!(
            "state has W {:?}, b {}; params expect ({}, {})",
            state.w.dim(),
            state.b.len(),
            params.m,
            params.n
        )));
    }
    Ok(())
}

/// Feedforward drive `Wx - √α b`, constant while the fast variables settle.
pub fn drive(
    state: &TilingState,
    x: ArrayView1<f64>,
    params: &TilingParams,
) -> Result<Array1<f64>> {
    check_state(state, params)?;
    if x.len() != params.n {
        return Err(Error::Shape(format!(
            "input has length {}, expected {}",
            x.len(),
            params.n
        )));
    }
    let sqrt_alpha = params.alpha.sqrt();
    let mut d = state.w.dot(&x);
    d.scaled_add(-sqrt_alpha, &state.b);
    Ok(d)
}

/// Unprojected update directions `(Δh, Δu, ΔV)` at `act`:
/// `Wx - Vᵀu - √α b`, `-u + Vh` and `u hᵀ - V`.
pub fn increments(
    state: &TilingState,
    act: &TilingActivity,
    x: ArrayView1<f64>,
    params: &TilingParams,
) -> Result<(Array1<f64>, Array1<f64>, Array2<f64>)> {
    act.check(params.m)?;
    let mut dh = drive(state, x, params)?;
    dh -= &act.v.t().dot(&act.u);
    let du = act.v.dot(&act.h) - &act.u;
    let uh = act
        .u
        .view()
        .insert_axis(Axis(1))
        .dot(&act.h.view().insert_axis(Axis(0)));
    let dv = uh - &act.v;
    Ok((dh, du, dv))
}

/// The per-sample saddle objective whose partial gradients the fast
/// dynamics follow: `Δh = -½∂L/∂h`, `Δu = ½∂L/∂u`, `ΔV = ½∂L/∂V`.
pub fn saddle_objective(
    state: &TilingState,
    act: &TilingActivity,
    x: ArrayView1<f64>,
    params: &TilingParams,
) -> Result<f64> {
    act.check(params.m)?;
    let d = drive(state, x, params)?;
    let vh = act.v.dot(&act.h);
    Ok(
        -2.0 * act.h.dot(&d) - act.u.dot(&act.u) + 2.0 * act.u.dot(&vh)
            - act.v.iter().map(|v| v * v).sum::<f64>(),
    )
}

/// One fast step from `act`; `act` itself is left untouched.
pub fn fast_step(
    state: &TilingState,
    act: &TilingActivity,
    x: ArrayView1<f64>,
    params: &TilingParams,
) -> Result<TilingActivity> {
    act.check(params.m)?;
    let d = drive(state, x, params)?;
    let mut next = act.clone();
    next.step_in_place(d.view(), params);
    Ok(next)
}

/// Iterate fast steps until `h` and `u` stop moving (or the iteration cap is
/// hit).
///
/// With `warm = None` the iteration starts from [`TilingActivity::cold`];
/// otherwise from `warm` as dictated by `params.warm_start`.
pub fn infer(
    state: &TilingState,
    x: ArrayView1<f64>,
    params: &TilingParams,
    warm: Option<&TilingActivity>,
) -> Result<Inference> {
    let d = drive(state, x, params)?;
    let mut act = match warm {
        Some(prev) => {
            prev.check(params.m)?;
            TilingActivity::warm_from(prev, params)
        }
        None => TilingActivity::cold(params),
    };
    let (iterations, converged) = if params.gamma_v == 1.0 {
        act.settle_rank_one(d.view(), params)
    } else {
        let mut iterations = 0;
        let mut converged = false;
        while iterations < params.max_fast_iters {
            let change = act.step_in_place(d.view(), params);
            iterations += 1;
            if change < params.fast_tol {
                converged = true;
                break;
            }
        }
        (iterations, converged)
    };
    Ok(Inference {
        activity: act,
        iterations,
        converged,
    })
}

impl TilingState {
    /// `W ← (1-η)W + η h xᵀ`, `b ← (1-η)b + η√α h`, `t ← t + 1`.
    pub fn apply_slow_update(
        &mut self,
        h: ArrayView1<f64>,
        x: ArrayView1<f64>,
        params: &TilingParams,
    ) -> Result<()> {
        check_state(self, params)?;
        if h.len() != params.m || x.len() != params.n {
            return Err(Error::Shape(format!(
                "slow update got h {} and x {}, expected {} and {}",
                h.len(),
                x.len(),
                params.m,
                params.n
            )));
        }
        let eta = params.eta.at(self.t);
        let keep = 1.0 - eta;
        let sqrt_alpha = params.alpha.sqrt();
        Zip::from(&mut self.w)
            .and_broadcast(&h.insert_axis(Axis(1)))
            .and_broadcast(&x.insert_axis(Axis(0)))
            .for_each(|w, &h, &x| *w = keep * *w + eta * (h * x));
        Zip::from(&mut self.b)
            .and(&h)
            .for_each(|b, &h| *b = keep * *b + eta * (sqrt_alpha * h));
        self.t += 1;
        Ok(())
    }
}

pub fn slow_update(
    state: &TilingState,
    h: ArrayView1<f64>,
    x: ArrayView1<f64>,
    params: &TilingParams,
) -> Result<TilingState> {
    let mut next = state.clone();
    next.apply_slow_update(h, x, params)?;
    Ok(next)
}

/// Channel responses to each probe, one row per probe. Every probe starts
/// from a cold activity, so rows do not depend on probe order.
pub fn receptive_field_probe(
    state: &TilingState,
    probes: &[Array1<f64>],
    params: &TilingParams,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((probes.len(), params.m));
    for (mut row, p) in out.rows_mut().into_iter().zip(probes) {
        row.assign(infer(state, p.view(), params, None)?.h());
    }
    Ok(out)
}

/// Running counters over the fast dynamics of a stream.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FastStats {
    pub samples: u64,
    pub nonconverged: u64,
    pub iterations: u64,
    /// Samples whose settled `h` exceeded unit norm by more than 1e-3.
    pub norm_violations: u64,
}

/// A tiling layer bound to one stream: parameters, slow state and the fast
/// activity carried between samples.
#[derive(Debug, Clone)]
pub struct TilingLayer {
    pub params: TilingParams,
    pub state: TilingState,
    pub stats: FastStats,
    last: Option<TilingActivity>,
}

impl TilingLayer {
    pub fn new(params: TilingParams, seed: u64) -> Result<Self> {
        let state = init_tiling(&params, seed)?;
        Ok(TilingLayer {
            params,
            state,
            stats: FastStats::default(),
            last: None,
        })
    }

    pub fn from_state(params: TilingParams, state: TilingState) -> Result<Self> {
        params.validate()?;
        check_state(&state, &params)?;
        Ok(TilingLayer {
            params,
            state,
            stats: FastStats::default(),
            last: None,
        })
    }

    /// Encode `x` with the current weights, warm-starting from the previous
    /// sample of this stream.
    pub fn encode(&mut self, x: ArrayView1<f64>) -> Result<Inference> {
        let inf = infer(&self.state, x, &self.params, self.last.as_ref())?;
        self.stats.samples += 1;
        self.stats.iterations += inf.iterations as u64;
        if !inf.converged {
            self.stats.nonconverged += 1;
        }
        if inf.h().dot(inf.h()) > (1.0 + 1e-3f64).powi(2) {
            self.stats.norm_violations += 1;
        }
        self.last = Some(inf.activity.clone());
        Ok(inf)
    }

    /// Encode and, if `learn`, apply the slow update with the settled `h`.
    pub fn step(&mut self, x: ArrayView1<f64>, learn: bool) -> Result<Inference> {
        let inf = self.encode(x)?;
        if learn {
            self.state
                .apply_slow_update(inf.h().view(), x, &self.params)?;
        }
        Ok(inf)
    }
}
