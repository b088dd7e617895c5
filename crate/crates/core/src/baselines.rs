//! Comparison methods: a fully supervised online logistic regression and an
//! offline linear SVM whose weights are smoothed by a graph Laplacian over
//! tiling channels.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::ssl::check_label;

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^s)` without overflow.
fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegState {
    pub w: Array1<f64>,
    pub b: f64,
    pub lr: f64,
}

impl LogRegState {
    pub fn new(m: usize, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::param(
                "logreg.lr",
                format!("must be finite and > 0, got {lr}"),
            ));
        }
        Ok(LogRegState {
            w: Array1::zeros(m),
            b: 0.0,
            lr,
        })
    }

    /// `P(z = +1 | h)`.
    pub fn probability(&self, h: ArrayView1<f64>) -> f64 {
        sigmoid(self.w.dot(&h) + self.b)
    }

    /// Predict, then take one SGD step if the sample is labeled. Returns the
    /// probability computed before the update.
    pub fn step(&mut self, h: ArrayView1<f64>, z: i8) -> Result<f64> {
        check_label(z)?;
        if h.len() != self.w.len() {
            return Err(Error::Shape(format!(
                "h has length {}, expected {}",
                h.len(),
                self.w.len()
            )));
        }
        let p = self.probability(h);
        if z != 0 {
            let (gw, gb) = logistic_gradient(self.w.view(), self.b, h, z);
            self.w.scaled_add(-self.lr, &gw);
            self.b -= self.lr * gb;
        }
        Ok(p)
    }
}

pub fn logreg_step(state: &LogRegState, h: ArrayView1<f64>, z: i8) -> Result<(f64, LogRegState)> {
    let mut next = state.clone();
    let p = next.step(h, z)?;
    Ok((p, next))
}

/// Signed output for a probability: `2p - 1`, so that its sign is the
/// predicted class and `p = ½` maps to the abstaining output 0.
pub fn signed_output(p: f64) -> f64 {
    2.0 * p - 1.0
}

/// `ln(1 + exp(-z(wᵀh + b)))`.
pub fn logistic_loss(w: ArrayView1<f64>, b: f64, h: ArrayView1<f64>, z: i8) -> f64 {
    softplus(-(z as f64) * (w.dot(&h) + b))
}

/// Gradient of [`logistic_loss`] with respect to `(w, b)`.
pub fn logistic_gradient(
    w: ArrayView1<f64>,
    b: f64,
    h: ArrayView1<f64>,
    z: i8,
) -> (Array1<f64>, f64) {
    let z = z as f64;
    let coef = -z * sigmoid(-z * (w.dot(&h) + b));
    (&h * coef, coef)
}

/// Channel adjacency and its unnormalized Laplacian `L = diag(S·1) - S`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianGraph {
    pub s: Array2<f64>,
    pub l: Array2<f64>,
}

impl LaplacianGraph {
    /// Build from a symmetric nonnegative adjacency matrix.
    pub fn from_adjacency(s: Array2<f64>) -> Result<Self> {
        let (r, c) = s.dim();
        if r != c {
            return Err(Error::Shape(format!(
                "adjacency must be square, got {r}×{c}"
            )));
        }
        for i in 0..r {
            for j in 0..c {
                if s[[i, j]] < 0.0 || !s[[i, j]].is_finite() {
                    return Err(Error::param(
                        "adjacency",
                        format!("entry ({i},{j}) = {} is negative", s[[i, j]]),
                    ));
                }
                if s[[i, j]] != s[[j, i]] {
                    return Err(Error::param(
                        "adjacency",
                        format!("not symmetric at ({i},{j})"),
                    ));
                }
            }
        }
        let degree = s.sum_axis(Axis(1));
        let mut l = -&s;
        for (i, d) in degree.iter().enumerate() {
            l[[i, i]] += d;
        }
        Ok(LaplacianGraph { s, l })
    }

    pub fn quadratic_form(&self, w: ArrayView1<f64>) -> f64 {
        w.dot(&self.l.dot(&w))
    }

    /// `Σ_ij (w_i - w_j)² S_ij`, which equals `2 wᵀLw`.
    pub fn edge_sum(&self, w: ArrayView1<f64>) -> f64 {
        let mut total = 0.0;
        for ((i, j), &s) in self.s.indexed_iter() {
            let d = w[i] - w[j];
            total += d * d * s;
        }
        total
    }
}

/// `S = (1/T)·H·Hᵀ` with the diagonal zeroed, for `H` of shape `m × T`.
pub fn build_gramian(h: ArrayView2<f64>) -> Result<LaplacianGraph> {
    let t = h.ncols();
    if t == 0 {
        return Err(Error::Empty("Gramian needs at least one column"));
    }
    let mut s = h.dot(&h.t()) / t as f64;
    // symmetrize exactly; the product can differ in the last bit
    let m = s.nrows();
    for i in 0..m {
        s[[i, i]] = 0.0;
        for j in i + 1..m {
            let avg = 0.5 * (s[[i, j]] + s[[j, i]]);
            s[[i, j]] = avg;
            s[[j, i]] = avg;
        }
    }
    LaplacianGraph::from_adjacency(s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    /// L2 coefficient.
    pub lambda: f64,
    /// Laplacian coefficient.
    pub mu: f64,
    pub iterations: usize,
    /// Base step `c`; iteration `k` moves by `c / (G·√k)`, where `G` bounds
    /// the gradient scale of the hinge term plus the curvature of the
    /// quadratic terms.
    pub step: f64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            lambda: 1e-2,
            mu: 10.0,
            iterations: 5000,
            step: 1.0,
        }
    }
}

impl SvmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::param(
                "svm.lambda",
                format!("must be finite and >= 0, got {}", self.lambda),
            ));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::param(
                "svm.mu",
                format!("must be finite and >= 0, got {}", self.mu),
            ));
        }
        if self.iterations == 0 {
            return Err(Error::param("svm.iterations", "must be at least 1"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::param(
                "svm.step",
                format!("must be finite and > 0, got {}", self.step),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub w: Array1<f64>,
    pub b: f64,
    pub objective: f64,
    /// `(iteration, best objective so far)` at regular checkpoints.
    pub trace: Vec<(usize, f64)>,
}

impl SvmModel {
    pub fn decision(&self, h: ArrayView1<f64>) -> f64 {
        self.w.dot(&h) + self.b
    }
}

fn check_svm_inputs(
    h: ArrayView2<f64>,
    z: &[i8],
    graph: &LaplacianGraph,
    w_len: usize,
) -> Result<()> {
    let m = graph.l.nrows();
    if h.nrows() != m || w_len != m {
        return Err(Error::Shape(format!(
            "H has {} rows and w has length {w_len}, graph has {m} channels",
            h.nrows()
        )));
    }
    if h.ncols() != z.len() {
        return Err(Error::Shape(format!(
            "H has {} columns but {} labels",
            h.ncols(),
            z.len()
        )));
    }
    if let Some(&bad) = z.iter().find(|&&z| z != 1 && z != -1) {
        return Err(Error::InvalidLabel(bad as i64));
    }
    Ok(())
}

/// `Σ_t [1 - z_t(wᵀh_t + b)]₊ + λ‖w‖² + μ wᵀLw` over the labeled columns of `H`.
pub fn svm_objective(
    w: ArrayView1<f64>,
    b: f64,
    h: ArrayView2<f64>,
    z: &[i8],
    graph: &LaplacianGraph,
    params: &SvmParams,
) -> Result<f64> {
    check_svm_inputs(h, z, graph, w.len())?;
    let scores = h.t().dot(&w);
    let hinge: f64 = scores
        .iter()
        .zip(z)
        .map(|(s, &z)| (1.0 - z as f64 * (s + b)).max(0.0))
        .sum();
    Ok(hinge + params.lambda * w.dot(&w) + params.mu * graph.quadratic_form(w))
}

/// Deterministic subgradient descent with iterate averaging. Returns the
/// best point found among the raw and averaged iterates.
pub fn svm_train(
    h: ArrayView2<f64>,
    z: &[i8],
    graph: &LaplacianGraph,
    params: &SvmParams,
) -> Result<SvmModel> {
    params.validate()?;
    let m = graph.l.nrows();
    check_svm_inputs(h, z, graph, m)?;
    if !(z.contains(&1) && z.contains(&-1)) {
        return Err(Error::SingleClass);
    }
    let max_norm = h
        .columns()
        .into_iter()
        .map(|c| c.dot(&c).sqrt())
        .fold(0.0, f64::max);
    let l_norm = graph
        .l
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let scale =
        (z.len() as f64 * max_norm.max(1.0) + 2.0 * params.lambda + 2.0 * params.mu * l_norm)
            .max(1.0);
    let zf: Array1<f64> = z.iter().map(|&z| z as f64).collect();

    let mut w = Array1::<f64>::zeros(m);
    let mut b = 0.0;
    let mut w_avg = w.clone();
    let mut b_avg = b;
    let mut best = (
        w.clone(),
        b,
        svm_objective(w.view(), b, h, z, graph, params)?,
    );
    let mut trace = vec![(0, best.2)];
    let checkpoint = (params.iterations / 100).max(1);

    for k in 1..=params.iterations {
        let scores = h.t().dot(&w);
        let lw = graph.l.dot(&w);
        let mut hinge = 0.0;
        // coefficient of each column in the hinge subgradient
        let mut active = Array1::<f64>::zeros(z.len());
        for (t, (&s, &zt)) in scores.iter().zip(&zf).enumerate() {
            let margin = zt * (s + b);
            if margin < 1.0 {
                hinge += 1.0 - margin;
                active[t] = zt;
            }
        }
        let objective = hinge + params.lambda * w.dot(&w) + params.mu * w.dot(&lw);
        if objective < best.2 {
            best = (w.clone(), b, objective);
        }

        let mut gw = h.dot(&active);
        gw *= -1.0;
        gw.scaled_add(2.0 * params.lambda, &w);
        gw.scaled_add(2.0 * params.mu, &lw);
        let gb = -active.sum();

        let step = params.step / (scale * (k as f64).sqrt());
        w.scaled_add(-step, &gw);
        b -= step * gb;

        let kf = k as f64;
        w_avg.zip_mut_with(&w, |a, &x| *a += (x - *a) / kf);
        b_avg += (b - b_avg) / kf;

        if k % checkpoint == 0 || k == params.iterations {
            let avg_obj = svm_objective(w_avg.view(), b_avg, h, z, graph, params)?;
            if avg_obj < best.2 {
                best = (w_avg.clone(), b_avg, avg_obj);
            }
            trace.push((k, best.2));
        }
    }
    let (w, b, objective) = best;
    Ok(SvmModel {
        w,
        b,
        objective,
        trace,
    })
}
