//! Semi-supervised output neuron.
//!
//! The neuron sees the tiling code `h` and a label channel `z` that is
//! silent (`0`) for most samples. Its activation is `μ·wᵀh + z`: the label
//! enters through a fixed unit-weight synapse, and the weights `w` are the
//! running mean of `y·h`, a plain Hebbian rule. Label information therefore
//! spreads to channels that are co-active with labeled samples.

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    /// `y = clip(μ·wᵀh + z, -1, 1)`
    Clipped,
    /// `y = tanh(μ·wᵀh + z)`
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SslParams {
    pub mu: f64,
    pub rule: Rule,
}

impl SslParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::param(
                "ssl.mu",
                format!("must be finite and >= 0, got {}", self.mu),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SslState {
    pub w: Array1<f64>,
    /// Samples seen since the start of the stream, labeled or not.
    pub t: u64,
}

impl SslState {
    /// No prior information: `w = 0`.
    pub fn new(m: usize) -> Self {
        SslState {
            w: Array1::zeros(m),
            t: 0,
        }
    }

    /// `w ← t/(t+1)·w + 1/(t+1)·y·h`, `t ← t + 1`.
    pub fn update(&mut self, y: f64, h: ArrayView1<f64>) {
        let t = self.t as f64;
        let keep = t / (t + 1.0);
        let add = y / (t + 1.0);
        self.w.zip_mut_with(&h, |w, &h| *w = keep * *w + add * h);
        self.t += 1;
    }
}

/// The neuron's input for one sample.
#[derive(Debug, Clone, Copy)]
pub struct LabeledInput<'a> {
    pub h: ArrayView1<'a, f64>,
    z: i8,
}

impl<'a> LabeledInput<'a> {
    pub fn new(h: ArrayView1<'a, f64>, z: i8) -> Result<Self> {
        check_label(z)?;
        Ok(LabeledInput { h, z })
    }

    /// Label channel value, one of -1, 0, +1.
    pub fn z(&self) -> i8 {
        self.z
    }
}

pub(crate) fn check_label(z: i8) -> Result<()> {
    if (-1..=1).contains(&z) {
        Ok(())
    } else {
        Err(Error::InvalidLabel(z as i64))
    }
}

fn activation(state: &SslState, input: &LabeledInput, mu: f64) -> f64 {
    mu * state.w.dot(&input.h) + input.z as f64
}

pub fn predict_clipped(state: &SslState, input: &LabeledInput, params: &SslParams) -> f64 {
    activation(state, input, params.mu).clamp(-1.0, 1.0)
}

pub fn predict_tanh(state: &SslState, input: &LabeledInput, params: &SslParams) -> f64 {
    activation(state, input, params.mu).tanh()
}

/// Output under `params.rule`.
pub fn predict(state: &SslState, input: &LabeledInput, params: &SslParams) -> f64 {
    match params.rule {
        Rule::Clipped => predict_clipped(state, input, params),
        Rule::Tanh => predict_tanh(state, input, params),
    }
}

pub fn update_w(state: &SslState, y: f64, h: ArrayView1<f64>) -> SslState {
    let mut next = state.clone();
    next.update(y, h);
    next
}

/// `‖y - z‖² - (μ/T)·Tr(HᵀH y yᵀ)` for `H` of shape `m × T`.
///
/// Only used to check the online rule against its batch objective.
pub fn eval_offline_objective(
    h: ArrayView2<f64>,
    z: ArrayView1<f64>,
    y: ArrayView1<f64>,
    params: &SslParams,
) -> Result<f64> {
    let t = h.ncols();
    if z.len() != t || y.len() != t {
        return Err(Error::Shape(format!(
            "H has {t} columns but z has {} and y has {}",
            z.len(),
            y.len()
        )));
    }
    if t == 0 {
        return Err(Error::Empty("offline objective needs T >= 1"));
    }
    let fit: f64 = y.iter().zip(z).map(|(y, z)| (y - z) * (y - z)).sum();
    // Tr(HᵀH y yᵀ) = ‖H y‖²
    let hy = h.dot(&y);
    Ok(fit - params.mu / t as f64 * hy.dot(&hy))
}

/// A neuron with its parameters, stepping through a stream.
#[derive(Debug, Clone)]
pub struct SslNeuron {
    pub params: SslParams,
    pub state: SslState,
}

impl SslNeuron {
    pub fn new(params: SslParams, m: usize) -> Self {
        SslNeuron {
            params,
            state: SslState::new(m),
        }
    }

    /// Predict, then learn from the emitted output. Returns `y`.
    pub fn step(&mut self, h: ArrayView1<f64>, z: i8) -> Result<f64> {
        let input = LabeledInput::new(h, z)?;
        let y = predict(&self.state, &input, &self.params);
        self.state.update(y, h);
        Ok(y)
    }
}
