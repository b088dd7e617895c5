//! Experiment driver.
//!
//! A repeat draws its stream, runs the tiling layer over it once and then
//! replays the resulting codes through every classifier. The tiling layer
//! never sees labels or classifier outputs, so this is the same computation
//! as interleaving the layers sample by sample, and every classifier in a
//! repeat sees exactly the same codes.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::baselines::{build_gramian, signed_output, svm_train, LogRegState};
use crate::config::ExperimentConfig;
use crate::datasets::{generate, mask_labels, DatasetKind, Sample};
use crate::error::{Error, Result};
use crate::metrics::{
    error_rate, imbalance_fraction, mean_std, overlap_matrix, shared_channels, stream_error,
    transition_period, Prediction, RunLog, StepRecord, Transition,
};
use crate::seeds::{rng_for, seed_for, Purpose};
use crate::snapshot::ModelSnapshot;
use crate::ssl::{LabeledInput, Rule, SslNeuron, SslParams, SslState};
use crate::tiling::{infer, init_from_samples, FastStats, TilingInit, TilingLayer, TilingState};

/// Relative threshold for a channel to count as active on a class.
pub const SHARED_CHANNEL_THRESHOLD: f64 = 0.05;

/// Streams for one repeat.
#[derive(Debug, Clone)]
pub struct RepeatData {
    /// Training stream with labels masked per the policy.
    pub stream: Vec<Sample>,
    /// Held-out samples, all unlabeled. Empty when `test.size = 0`.
    pub test: Vec<Sample>,
}

pub fn repeat_data(cfg: &ExperimentConfig, repeat: usize) -> Result<RepeatData> {
    let r = repeat as u64;
    let raw = generate(&cfg.dataset(seed_for(cfg.seed, r, Purpose::Dataset)))?;
    let stream = mask_labels(
        &raw,
        &cfg.label_policy(),
        seed_for(cfg.seed, r, Purpose::Labels),
    )?;
    let test = if cfg.test_size > 0 {
        generate(&cfg.test_dataset(seed_for(cfg.seed, r, Purpose::TestSet)))?
            .into_iter()
            .map(|s| Sample { z: 0, ..s })
            .collect()
    } else {
        Vec::new()
    };
    Ok(RepeatData { stream, test })
}

/// Tiling codes of one stream.
#[derive(Debug, Clone)]
pub struct TilingPass {
    /// Code of each stream sample, computed before that sample's slow update.
    pub codes: Vec<Array1<f64>>,
    pub converged: Vec<bool>,
    /// Fast-dynamics counters over the stream, excluding pretraining.
    pub stats: FastStats,
    /// `(k, state after k stream samples)` for every multiple `k` of
    /// `eval_every`.
    pub checkpoints: Vec<(usize, TilingState)>,
    pub final_state: TilingState,
}

pub fn tiling_pass(cfg: &ExperimentConfig, stream: &[Sample], repeat: usize) -> Result<TilingPass> {
    if stream.is_empty() {
        return Err(Error::Empty("stream"));
    }
    let r = repeat as u64;
    let inputs: Vec<Array1<f64>> = stream.iter().map(|s| cfg.lift.encode(s.x.view())).collect();
    let params = cfg.tiling_params();
    let init_seed = seed_for(cfg.seed, r, Purpose::TilingInit);
    let mut layer = match cfg.init {
        TilingInit::Uniform => TilingLayer::new(params, init_seed)?,
        TilingInit::Samples => {
            let state = init_from_samples(&params, &inputs, init_seed)?;
            TilingLayer::from_state(params, state)?
        }
    };

    let mut rng = rng_for(cfg.seed, r, Purpose::Pretrain);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    for _ in 0..cfg.pretrain {
        order.shuffle(&mut rng);
        for &i in &order {
            layer.step(inputs[i].view(), true)?;
        }
    }
    layer.stats = FastStats::default();

    let mut codes = Vec::with_capacity(inputs.len());
    let mut converged = Vec::with_capacity(inputs.len());
    let mut checkpoints = Vec::new();
    for (t, x) in inputs.iter().enumerate() {
        let inf = layer.step(x.view(), cfg.learn)?;
        converged.push(inf.converged);
        codes.push(inf.activity.h);
        if (t + 1) % cfg.eval_every == 0 {
            checkpoints.push((t + 1, layer.state.clone()));
        }
    }
    Ok(TilingPass {
        codes,
        converged,
        stats: layer.stats,
        checkpoints,
        final_state: layer.state,
    })
}

/// Output-neuron trajectory over a code stream.
#[derive(Debug, Clone)]
pub struct SslTrace {
    pub y: Vec<f64>,
    /// `(k, state after k samples)` at multiples of `every`.
    pub checkpoints: Vec<(usize, SslState)>,
    pub final_state: SslState,
}

pub fn run_ssl(
    codes: &[Array1<f64>],
    stream: &[Sample],
    params: SslParams,
    every: usize,
) -> Result<SslTrace> {
    let m = codes.first().map_or(0, |h| h.len());
    let mut neuron = SslNeuron::new(params, m);
    let mut y = Vec::with_capacity(codes.len());
    let mut checkpoints = Vec::new();
    for (t, (h, s)) in codes.iter().zip(stream).enumerate() {
        y.push(neuron.step(h.view(), s.z)?);
        if (t + 1) % every == 0 {
            checkpoints.push((t + 1, neuron.state.clone()));
        }
    }
    Ok(SslTrace {
        y,
        checkpoints,
        final_state: neuron.state,
    })
}

/// Signed outputs `2p - 1` of the online logistic baseline.
pub fn run_logreg(
    codes: &[Array1<f64>],
    stream: &[Sample],
    lr: f64,
) -> Result<(Vec<f64>, LogRegState)> {
    let m = codes.first().map_or(0, |h| h.len());
    let mut state = LogRegState::new(m, lr)?;
    let mut out = Vec::with_capacity(codes.len());
    for (h, s) in codes.iter().zip(stream) {
        out.push(signed_output(state.step(h.view(), s.z)?));
    }
    Ok((out, state))
}

/// Unlabeled-step error of a whole output sequence.
pub fn sequence_error(y: &[f64], stream: &[Sample]) -> Result<f64> {
    let (wrong, scored) =
        y.iter()
            .zip(stream)
            .filter(|(_, s)| s.z == 0)
            .fold((0usize, 0usize), |(w, n), (&y, s)| {
                (
                    w + usize::from(!Prediction::from_output(y).is_correct(s.z_true)),
                    n + 1,
                )
            });
    if scored == 0 {
        return Err(Error::EmptyWindow {
            start: 0,
            end: stream.len(),
        });
    }
    Ok(wrong as f64 / scored as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub repeat: usize,
    pub stream_error: f64,
    pub transition_start: Option<usize>,
    pub transition_end: Option<usize>,
    pub post_transition_error: Option<f64>,
    pub logreg_stream_error: f64,
    /// Sign agreement with the other output rule over post-transition steps.
    pub rule_agreement: Option<f64>,
    pub shared_channels: usize,
    pub nonconverged: u64,
    pub mean_fast_iters: f64,
    pub norm_violations: u64,
}

/// One repeat of the online experiment.
#[derive(Debug, Clone)]
pub struct OnlineRun {
    pub log: RunLog,
    pub summary: RunSummary,
    pub transition: Option<Transition>,
    /// Outputs of a neuron using the other rule on the same codes.
    pub alt_rule_y: Vec<f64>,
    pub logreg_y: Vec<f64>,
    pub model: ModelSnapshot,
    pub data: RepeatData,
    pub tiling: TilingPass,
    pub ssl: SslTrace,
}

pub fn run_online(cfg: &ExperimentConfig, repeat: usize) -> Result<OnlineRun> {
    cfg.validate()?;
    let data = repeat_data(cfg, repeat)?;
    let pass = tiling_pass(cfg, &data.stream, repeat)?;
    online_from_pass(cfg, repeat, data, pass)
}

fn online_from_pass(
    cfg: &ExperimentConfig,
    repeat: usize,
    data: RepeatData,
    pass: TilingPass,
) -> Result<OnlineRun> {
    let stream = &data.stream;
    let ssl = run_ssl(&pass.codes, stream, cfg.ssl, cfg.eval_every)?;
    let alt = SslParams {
        rule: match cfg.ssl.rule {
            Rule::Clipped => Rule::Tanh,
            Rule::Tanh => Rule::Clipped,
        },
        ..cfg.ssl
    };
    let alt_rule_y = run_ssl(&pass.codes, stream, alt, cfg.eval_every)?.y;
    let (logreg_y, _) = run_logreg(&pass.codes, stream, cfg.logreg_lr)?;

    let mut log = RunLog::new(cfg.hash(), cfg.seed);
    // weight snapshots need the state after each step; replay cheaply
    let m = cfg.m;
    let mut w_state = SslState::new(m);
    for (t, (s, (&y, h))) in stream.iter().zip(ssl.y.iter().zip(&pass.codes)).enumerate() {
        log.push(StepRecord {
            index: s.index,
            z_true: s.z_true,
            z: s.z,
            y,
            converged: pass.converged[t],
        })?;
        w_state.update(y, h.view());
        if t % cfg.weights_every == 0 {
            log.push_weights(s.index, w_state.w.view())?;
        }
    }

    let records = log.records();
    let end = records.last().map_or(0, |r| r.index + 1);
    let transition = transition_period(records);
    let post_transition_error =
        transition.and_then(|t| stream_error(records, t.settled_at, end).ok());
    let rule_agreement = transition.and_then(|t| {
        let pairs: Vec<bool> = stream
            .iter()
            .zip(ssl.y.iter().zip(&alt_rule_y))
            .filter(|(s, _)| s.z == 0 && s.index >= t.settled_at)
            .map(|(_, (&a, &b))| Prediction::from_output(a) == Prediction::from_output(b))
            .collect();
        (!pairs.is_empty())
            .then(|| pairs.iter().filter(|&&a| a).count() as f64 / pairs.len() as f64)
    });
    let codes = Array2::from_shape_fn((pass.codes.len(), m), |(i, j)| pass.codes[i][j]);
    let classes: Vec<i8> = stream.iter().map(|s| s.z_true).collect();
    let summary = RunSummary {
        repeat,
        stream_error: sequence_error(&ssl.y, stream)?,
        transition_start: transition.map(|t| t.first_label),
        transition_end: transition.map(|t| t.settled_at),
        post_transition_error,
        logreg_stream_error: sequence_error(&logreg_y, stream)?,
        rule_agreement,
        shared_channels: shared_channels(codes.view(), &classes, SHARED_CHANNEL_THRESHOLD)?,
        nonconverged: pass.stats.nonconverged,
        mean_fast_iters: pass.stats.iterations as f64 / pass.stats.samples.max(1) as f64,
        norm_violations: pass.stats.norm_violations,
    };
    let model = ModelSnapshot {
        lift: cfg.lift.clone(),
        tiling_params: cfg.tiling_params(),
        tiling: pass.final_state.clone(),
        ssl_params: cfg.ssl,
        ssl: ssl.final_state.clone(),
    };
    Ok(OnlineRun {
        log,
        summary,
        transition,
        alt_rule_y,
        logreg_y,
        model,
        data,
        tiling: pass,
        ssl,
    })
}

/// Run every repeat, in parallel, returned in repeat order.
pub fn run_online_repeats(cfg: &ExperimentConfig) -> Result<Vec<OnlineRun>> {
    cfg.validate()?;
    (0..cfg.repeats)
        .into_par_iter()
        .map(|r| run_online(cfg, r))
        .collect()
}

/// Codes of raw inputs under a fixed tiling state, each from a cold start.
pub fn features(
    cfg: &ExperimentConfig,
    state: &TilingState,
    samples: &[Sample],
) -> Result<Vec<Array1<f64>>> {
    let params = cfg.tiling_params();
    samples
        .par_iter()
        .map(|s| {
            Ok(
                infer(state, cfg.lift.encode(s.x.view()).view(), &params, None)?
                    .activity
                    .h,
            )
        })
        .collect()
}

fn neuron_outputs(state: &SslState, params: &SslParams, codes: &[Array1<f64>]) -> Result<Vec<f64>> {
    codes
        .iter()
        .map(|h| {
            Ok(crate::ssl::predict(
                state,
                &LabeledInput::new(h.view(), 0)?,
                params,
            ))
        })
        .collect()
}

fn columns(codes: &[Array1<f64>]) -> Array2<f64> {
    let m = codes.first().map_or(0, |h| h.len());
    Array2::from_shape_fn((m, codes.len()), |(i, t)| codes[t][i])
}

/// Train the Laplacian SVM on the first `k` codes of a stream: the graph
/// uses all of them, the hinge term only the labeled ones. `None` when the
/// labels seen so far cover a single class.
pub fn offline_svm(
    cfg: &ExperimentConfig,
    codes: &[Array1<f64>],
    stream: &[Sample],
) -> Result<Option<crate::baselines::SvmModel>> {
    let graph = build_gramian(columns(codes).view())?;
    let labeled: Vec<usize> = (0..codes.len()).filter(|&t| stream[t].z != 0).collect();
    let z: Vec<i8> = labeled.iter().map(|&t| stream[t].z).collect();
    let h_l = columns(
        &labeled
            .iter()
            .map(|&t| codes[t].clone())
            .collect::<Vec<_>>(),
    );
    let h_l = if labeled.is_empty() {
        Array2::zeros((codes.first().map_or(0, |h| h.len()), 0))
    } else {
        h_l
    };
    match svm_train(h_l.view(), &z, &graph, &cfg.svm) {
        Ok(model) => Ok(Some(model)),
        Err(Error::SingleClass) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub repeat: usize,
    pub step: usize,
    pub online_test_error: f64,
    /// Missing when the labels seen so far cover one class.
    pub offline_test_error: Option<f64>,
}

/// Test error of the online network and of the offline Laplacian SVM at
/// every `eval_every` steps of one repeat.
pub fn run_online_vs_offline(cfg: &ExperimentConfig, repeat: usize) -> Result<Vec<ComparisonRow>> {
    cfg.validate()?;
    if cfg.test_size == 0 {
        return Err(Error::Config(
            "the online/offline comparison needs `test.size` > 0".into(),
        ));
    }
    if cfg.eval_every > cfg.size {
        return Err(Error::param(
            "experiment.eval_every",
            format!("{} exceeds the stream length {}", cfg.eval_every, cfg.size),
        ));
    }
    let data = repeat_data(cfg, repeat)?;
    let pass = tiling_pass(cfg, &data.stream, repeat)?;
    let ssl = run_ssl(&pass.codes, &data.stream, cfg.ssl, cfg.eval_every)?;
    let mut rows = Vec::new();
    let mut cached: Option<(TilingState, Vec<Array1<f64>>)> = None;
    for ((k, tiling), (k2, neuron)) in pass.checkpoints.iter().zip(&ssl.checkpoints) {
        debug_assert_eq!(k, k2);
        if cached.as_ref().is_none_or(|(s, _)| s != tiling) {
            cached = Some((tiling.clone(), features(cfg, tiling, &data.test)?));
        }
        let test_codes = &cached.as_ref().expect("just filled").1;
        let online = error_rate(&neuron_outputs(neuron, &cfg.ssl, test_codes)?, &data.test)?;
        let offline = match offline_svm(cfg, &pass.codes[..*k], &data.stream[..*k])? {
            Some(model) => {
                let out: Vec<f64> = test_codes
                    .iter()
                    .map(|h| model.decision(h.view()))
                    .collect();
                Some(error_rate(&out, &data.test)?)
            }
            None => None,
        };
        rows.push(ComparisonRow {
            repeat,
            step: *k,
            online_test_error: online,
            offline_test_error: offline,
        });
    }
    Ok(rows)
}

pub fn run_comparison_repeats(cfg: &ExperimentConfig) -> Result<Vec<ComparisonRow>> {
    cfg.validate()?;
    let per: Vec<Vec<ComparisonRow>> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| run_online_vs_offline(cfg, r))
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// `(step, mean online, mean offline over repeats with a value)`.
pub fn comparison_means(rows: &[ComparisonRow]) -> Vec<(usize, f64, Option<f64>)> {
    let mut by_step: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let e = by_step.entry(r.step).or_default();
        e.0.push(r.online_test_error);
        if let Some(v) = r.offline_test_error {
            e.1.push(v);
        }
    }
    by_step
        .into_iter()
        .map(|(step, (on, off))| {
            let off = (!off.is_empty()).then(|| mean_std(&off).0);
            (step, mean_std(&on).0, off)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceRow {
    pub repeat: usize,
    pub network: f64,
    pub laplacian_svm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub network: usize,
    pub laplacian_svm: usize,
}

/// Histogram edges over `[0.5, 1.0]`; the last bin is closed.
pub const HISTOGRAM_EDGES: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

pub fn histogram(rows: &[ImbalanceRow]) -> Vec<HistogramRow> {
    let bin = |v: f64| {
        (0..HISTOGRAM_EDGES.len() - 1)
            .find(|&i| v < HISTOGRAM_EDGES[i + 1])
            .unwrap_or(HISTOGRAM_EDGES.len() - 2)
    };
    let mut out: Vec<HistogramRow> = HISTOGRAM_EDGES
        .windows(2)
        .map(|e| HistogramRow {
            bin_lo: e[0],
            bin_hi: e[1],
            network: 0,
            laplacian_svm: 0,
        })
        .collect();
    for r in rows {
        out[bin(r.network)].network += 1;
        out[bin(r.laplacian_svm)].laplacian_svm += 1;
    }
    out
}

/// Steps per window of the weight-drift comparison.
pub const DRIFT_WINDOW: usize = 25;
/// Probe points per axis of the weight-drift comparison.
pub const DRIFT_PROBES: usize = 11;

/// Change of the neuron's response `μ·wᵀh(x)` on a fixed probe grid, summed
/// over one window of unlabeled steps after the last label.
#[derive(Debug, Clone)]
pub struct DriftWindow {
    /// First step of the window, a multiple of [`DRIFT_WINDOW`].
    pub start: usize,
    pub observed: Array1<f64>,
    /// The same sum with every `Δw` replaced by its expectation under the
    /// stream overlap matrix.
    pub predicted: Array1<f64>,
}

/// Per-repeat output of the imbalance experiment.
#[derive(Debug, Clone)]
pub struct SquareRun {
    pub row: ImbalanceRow,
    pub drift: Vec<DriftWindow>,
}

fn drift_probes() -> Vec<Sample> {
    let k = DRIFT_PROBES;
    (0..k * k)
        .map(|i| {
            let (a, b) = (
                (i / k) as f64 / (k - 1) as f64,
                (i % k) as f64 / (k - 1) as f64,
            );
            Sample {
                x: Array1::from(vec![a, b]),
                z_true: crate::datasets::square_class(a, b),
                z: 0,
                index: i,
            }
        })
        .collect()
}

/// Majority-class share of the final network and of the Laplacian SVM on
/// the unlabeled stream samples of one repeat.
pub fn run_square_once(cfg: &ExperimentConfig, repeat: usize) -> Result<SquareRun> {
    let data = repeat_data(cfg, repeat)?;
    let pass = tiling_pass(cfg, &data.stream, repeat)?;
    let ssl = run_ssl(&pass.codes, &data.stream, cfg.ssl, cfg.eval_every)?;
    let final_codes = if cfg.learn {
        features(cfg, &pass.final_state, &data.stream)?
    } else {
        pass.codes.clone()
    };
    let unlabeled: Vec<usize> = (0..data.stream.len())
        .filter(|&t| data.stream[t].z == 0)
        .collect();

    let net_out = neuron_outputs(&ssl.final_state, &cfg.ssl, &final_codes)?;
    let net: Vec<Prediction> = unlabeled
        .iter()
        .map(|&t| Prediction::from_output(net_out[t]))
        .collect();

    let svm = offline_svm(cfg, &final_codes, &data.stream)?.ok_or(Error::SingleClass)?;
    let svm_pred: Vec<Prediction> = unlabeled
        .iter()
        .map(|&t| Prediction::from_output(svm.decision(final_codes[t].view())))
        .collect();

    // drift of w along the stream against its expectation under the stream
    // overlap matrix, seen through the response on the probe grid
    let overlap = overlap_matrix(&pass.codes)?;
    let probes = columns(&features(cfg, &pass.final_state, &drift_probes())?).reversed_axes();
    let last_label = data.stream.iter().rposition(|s| s.z != 0).unwrap_or(0);
    let mut windows: BTreeMap<usize, (Array1<f64>, Array1<f64>)> = BTreeMap::new();
    let mut state = SslState::new(cfg.m);
    for (t, (h, &y)) in pass.codes.iter().zip(&ssl.y).enumerate() {
        let before = state.w.clone();
        state.update(y, h.view());
        if t > last_label && data.stream[t].z == 0 {
            let eta = 1.0 / (t as f64 + 1.0);
            let predicted =
                crate::metrics::expected_w_drift(overlap.view(), before.view(), cfg.ssl.mu, eta)?;
            let observed = &state.w - &before;
            let e = windows
                .entry(t / DRIFT_WINDOW * DRIFT_WINDOW)
                .or_insert_with(|| (Array1::zeros(cfg.m), Array1::zeros(cfg.m)));
            e.0 += &observed;
            e.1 += &predicted;
        }
    }
    let drift = windows
        .into_iter()
        .map(|(start, (o, p))| DriftWindow {
            start,
            observed: probes.dot(&o) * cfg.ssl.mu,
            predicted: probes.dot(&p) * cfg.ssl.mu,
        })
        .collect();
    Ok(SquareRun {
        row: ImbalanceRow {
            repeat,
            network: imbalance_fraction(&net)?,
            laplacian_svm: imbalance_fraction(&svm_pred)?,
        },
        drift,
    })
}

/// Pearson correlation between the repeat-averaged observed and predicted
/// probe responses of the drift windows starting in `[from, to)`.
pub fn drift_correlation(runs: &[SquareRun], from: usize, to: usize) -> Option<f64> {
    let mut sums: BTreeMap<usize, (Array1<f64>, Array1<f64>)> = BTreeMap::new();
    for w in runs
        .iter()
        .flat_map(|r| &r.drift)
        .filter(|w| (from..to).contains(&w.start))
    {
        let e = sums.entry(w.start).or_insert_with(|| {
            (
                Array1::zeros(w.observed.len()),
                Array1::zeros(w.observed.len()),
            )
        });
        e.0 += &w.observed;
        e.1 += &w.predicted;
    }
    let xs: Vec<f64> = sums.values().flat_map(|(o, _)| o.iter().copied()).collect();
    let ys: Vec<f64> = sums.values().flat_map(|(_, p)| p.iter().copied()).collect();
    pearson(&xs, &ys)
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let (mx, _) = mean_std(x);
    let (my, _) = mean_std(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

pub fn run_square_imbalance(cfg: &ExperimentConfig) -> Result<Vec<SquareRun>> {
    cfg.validate()?;
    if cfg.kind != DatasetKind::UnitSquare {
        return Err(Error::Config(
            "the imbalance experiment needs `dataset.kind = unit_square`".into(),
        ));
    }
    (0..cfg.repeats)
        .into_par_iter()
        .map(|r| run_square_once(cfg, r))
        .collect()
}

/// One evaluated lattice point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    /// `(key, value)` in axis order.
    pub params: Vec<(String, String)>,
    pub ssl_stream_error: f64,
    pub logreg_stream_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridMetric {
    Ssl,
    Logreg,
}

impl GridCell {
    pub fn metric(&self, which: GridMetric) -> f64 {
        match which {
            GridMetric::Ssl => self.ssl_stream_error,
            GridMetric::Logreg => self.logreg_stream_error,
        }
    }
}

fn lattice(axes: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    let mut cells: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, values) in axes {
        let mut seen = Vec::new();
        for v in values {
            if !seen.contains(v) {
                seen.push(v.clone());
            }
        }
        cells = cells
            .into_iter()
            .flat_map(|cell| {
                seen.iter().map(move |v| {
                    let mut c = cell.clone();
                    c.push((key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    cells
}

/// Keys that do not influence the tiling pass.
fn classifier_key(key: &str) -> bool {
    key.starts_with("ssl.")
        || key.starts_with("logreg.")
        || key.starts_with("svm.")
        || key.starts_with("labels.")
}

/// Mean stream errors of the output neuron and the logistic baseline for
/// every point of `axes`, averaged over `cfg.repeats`. Duplicate values
/// within an axis are evaluated once. Cells that differ only in classifier
/// or label settings share their tiling passes.
pub fn grid_search(
    cfg: &ExperimentConfig,
    axes: &[(String, Vec<String>)],
) -> Result<Vec<GridCell>> {
    cfg.validate()?;
    if axes.is_empty() || axes.iter().any(|(_, v)| v.is_empty()) {
        return Err(Error::Empty("grid lattice"));
    }
    let cells = lattice(axes);
    let configs: Vec<ExperimentConfig> = cells
        .iter()
        .map(|c| cfg.with_overrides(c))
        .collect::<Result<_>>()?;

    // group by tiling-relevant settings
    let mut groups: BTreeMap<Vec<(String, String)>, Vec<usize>> = BTreeMap::new();
    for (i, cell) in cells.iter().enumerate() {
        let key = cell
            .iter()
            .filter(|(k, _)| !classifier_key(k))
            .cloned()
            .collect();
        groups.entry(key).or_default().push(i);
    }

    let mut results: HashMap<usize, Vec<(f64, f64)>> = HashMap::new();
    for members in groups.values() {
        let lead = &configs[members[0]];
        let per_repeat: Vec<Vec<(usize, f64, f64)>> = (0..cfg.repeats)
            .into_par_iter()
            .map(|r| {
                let raw = generate(&lead.dataset(seed_for(lead.seed, r as u64, Purpose::Dataset)))?;
                let pass = tiling_pass(lead, &raw, r)?;
                members
                    .iter()
                    .map(|&i| {
                        let c = &configs[i];
                        let stream = mask_labels(
                            &raw,
                            &c.label_policy(),
                            seed_for(c.seed, r as u64, Purpose::Labels),
                        )?;
                        let ssl = run_ssl(&pass.codes, &stream, c.ssl, c.eval_every)?;
                        let (lr, _) = run_logreg(&pass.codes, &stream, c.logreg_lr)?;
                        Ok((
                            i,
                            sequence_error(&ssl.y, &stream)?,
                            sequence_error(&lr, &stream)?,
                        ))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        for rep in per_repeat {
            for (i, a, b) in rep {
                results.entry(i).or_default().push((a, b));
            }
        }
    }

    Ok(cells
        .into_iter()
        .enumerate()
        .map(|(i, params)| {
            let v = &results[&i];
            let a: Vec<f64> = v.iter().map(|p| p.0).collect();
            let b: Vec<f64> = v.iter().map(|p| p.1).collect();
            GridCell {
                params,
                ssl_stream_error: mean_std(&a).0,
                logreg_stream_error: mean_std(&b).0,
            }
        })
        .collect())
}

fn param_order(a: &[(String, String)], b: &[(String, String)]) -> std::cmp::Ordering {
    for ((_, x), (_, y)) in a.iter().zip(b) {
        let ord = match (x.parse::<f64>(), y.parse::<f64>()) {
            (Ok(p), Ok(q)) => p.total_cmp(&q),
            _ => x.cmp(y),
        };
        if ord.is_ne() {
            return ord;
        }
    }
    a.len().cmp(&b.len())
}

/// Lowest error under `which`; ties go to the lexicographically smallest
/// parameter tuple (numeric values compared as numbers).
pub fn best_cell<'a>(
    cells: impl IntoIterator<Item = &'a GridCell>,
    which: GridMetric,
) -> Option<&'a GridCell> {
    cells.into_iter().min_by(|a, b| {
        a.metric(which)
            .total_cmp(&b.metric(which))
            .then_with(|| param_order(&a.params, &b.params))
    })
}

pub fn write_grid_csv<W: Write>(out: W, cells: &[GridCell]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let keys: Vec<String> = cells
        .first()
        .map(|c| c.params.iter().map(|(k, _)| k.clone()).collect())
        .unwrap_or_default();
    let mut header = keys.clone();
    header.extend([
        "ssl_stream_error".to_string(),
        "logreg_stream_error".to_string(),
    ]);
    w.write_record(&header)?;
    for c in cells {
        let mut rec: Vec<String> = c.params.iter().map(|(_, v)| v.clone()).collect();
        rec.push(c.ssl_stream_error.to_string());
        rec.push(c.logreg_stream_error.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_grid_csv<R: Read>(input: R) -> Result<Vec<GridCell>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let k = header.len();
    if k < 2 || header[k - 2] != "ssl_stream_error" || header[k - 1] != "logreg_stream_error" {
        return Err(Error::Config(format!(
            "grid header: got {}",
            header.join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|e| Error::Config(format!("grid value `{}`: {e}", &rec[i])))
        };
        out.push(GridCell {
            params: header[..k - 2]
                .iter()
                .cloned()
                .zip(rec.iter().take(k - 2).map(String::from))
                .collect(),
            ssl_stream_error: num(k - 2)?,
            logreg_stream_error: num(k - 1)?,
        });
    }
    Ok(out)
}

pub fn write_rows<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(input: R) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Channel responses over a probe set: a regular grid over the data's
/// bounding box for 2-D inputs, the stream points themselves otherwise.
/// Rows are `(probe coordinates, responses)`.
pub fn probe(cfg: &ExperimentConfig, resolution: usize) -> Result<(Vec<Array1<f64>>, Array2<f64>)> {
    cfg.validate()?;
    if resolution < 2 {
        return Err(Error::param("resolution", "must be at least 2"));
    }
    let data = repeat_data(cfg, 0)?;
    let pass = tiling_pass(cfg, &data.stream, 0)?;
    let points: Vec<Array1<f64>> = if cfg.kind.dim() == 2 {
        let lo = |d: usize| {
            data.stream
                .iter()
                .map(|s| s.x[d])
                .fold(f64::INFINITY, f64::min)
        };
        let hi = |d: usize| {
            data.stream
                .iter()
                .map(|s| s.x[d])
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let (x0, x1, y0, y1) = (lo(0), hi(0), lo(1), hi(1));
        let step = |a: f64, b: f64, i: usize| a + (b - a) * i as f64 / (resolution - 1) as f64;
        (0..resolution)
            .flat_map(|j| {
                (0..resolution).map(move |i| Array1::from(vec![step(x0, x1, i), step(y0, y1, j)]))
            })
            .collect()
    } else {
        data.stream.iter().map(|s| s.x.clone()).collect()
    };
    let encoded: Vec<Array1<f64>> = points.iter().map(|p| cfg.lift.encode(p.view())).collect();
    let responses =
        crate::tiling::receptive_field_probe(&pass.final_state, &encoded, &cfg.tiling_params())?;
    Ok((points, responses))
}

pub fn write_probe_csv<W: Write>(
    out: W,
    points: &[Array1<f64>],
    responses: &Array2<f64>,
) -> Result<()> {
    let d = points.first().map_or(0, |p| p.len());
    let m = responses.ncols();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    header.extend((0..m).map(|i| format!("h{i}")));
    w.write_record(&header)?;
    for (p, row) in points.iter().zip(responses.rows()) {
        let rec: Vec<String> = p.iter().chain(row.iter()).map(|v| v.to_string()).collect();
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_probe_csv`].
pub fn read_probe_csv<R: Read>(input: R) -> Result<(Vec<Array1<f64>>, Array2<f64>)> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let d = header.iter().take_while(|h| h.starts_with('x')).count();
    let m = header.len() - d;
    let mut points = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| Error::Config(format!("probe value `{v}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        points.push(Array1::from(row[..d].to_vec()));
        values.extend_from_slice(&row[d..]);
    }
    let n = points.len();
    let responses =
        Array2::from_shape_vec((n, m), values).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((points, responses))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::Config(format!("cannot create {}: {e}", path.display())))
}

/// `manifest.json`: config echo, seed, versions and summary numbers.
pub fn write_manifest(
    out_dir: &Path,
    cfg: &ExperimentConfig,
    command: &str,
    summary: serde_json::Value,
) -> Result<()> {
    let manifest = json!({
        "command": command,
        "config": cfg.to_text(),
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "repeats": cfg.repeats,
        "version": env!("CARGO_PKG_VERSION"),
        "summary": summary,
    });
    let mut f = create(&out_dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    writeln!(f)?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

/// `gen`: write the training stream (and test set) of repeat 0.
pub fn export_dataset(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    cfg.validate()?;
    ensure_dir(out_dir)?;
    let data = repeat_data(cfg, 0)?;
    crate::datasets::write_csv(create(&out_dir.join("dataset.csv"))?, &data.stream)?;
    if !data.test.is_empty() {
        crate::datasets::write_csv(create(&out_dir.join("test.csv"))?, &data.test)?;
    }
    write_manifest(
        out_dir,
        cfg,
        "gen",
        json!({ "samples": data.stream.len(), "test_samples": data.test.len() }),
    )
}

fn opt(v: Option<f64>) -> serde_json::Value {
    v.map_or(serde_json::Value::Null, |v| json!(v))
}

/// `run`: per-repeat run logs, weight trajectories and model snapshots plus
/// a summary table.
pub fn export_online(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<RunSummary>> {
    let runs = run_online_repeats(cfg)?;
    ensure_dir(out_dir)?;
    for run in &runs {
        let dir = out_dir.join(format!("repeat_{:03}", run.summary.repeat));
        ensure_dir(&dir)?;
        run.log
            .write_records_csv(create(&dir.join("runlog.csv"))?)?;
        run.log
            .write_weights_csv(create(&dir.join("weights.csv"))?)?;
        run.model.write_to(create(&dir.join("model.txt"))?)?;
    }
    let summaries: Vec<RunSummary> = runs.into_iter().map(|r| r.summary).collect();
    write_rows(create(&out_dir.join("summary.csv"))?, &summaries)?;
    let post: Vec<f64> = summaries
        .iter()
        .filter_map(|s| s.post_transition_error)
        .collect();
    let stream: Vec<f64> = summaries.iter().map(|s| s.stream_error).collect();
    let logreg: Vec<f64> = summaries.iter().map(|s| s.logreg_stream_error).collect();
    write_manifest(
        out_dir,
        cfg,
        "run",
        json!({
            "stream_error_mean": mean_std(&stream).0,
            "stream_error_std": mean_std(&stream).1,
            "logreg_stream_error_mean": mean_std(&logreg).0,
            "post_transition_error_mean": opt((!post.is_empty()).then(|| mean_std(&post).0)),
            "repeats_settled": post.len(),
        }),
    )?;
    Ok(summaries)
}

/// `compare-offline`: `comparison.csv`.
pub fn export_comparison(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<ComparisonRow>> {
    let rows = run_comparison_repeats(cfg)?;
    ensure_dir(out_dir)?;
    write_rows(create(&out_dir.join("comparison.csv"))?, &rows)?;
    let means: Vec<serde_json::Value> = comparison_means(&rows)
        .into_iter()
        .map(|(step, on, off)| json!({ "step": step, "online": on, "offline": opt(off) }))
        .collect();
    write_manifest(
        out_dir,
        cfg,
        "compare-offline",
        json!({ "mean_test_error": means }),
    )?;
    Ok(rows)
}

/// `square`: `imbalance.csv` and `histogram.csv`.
pub fn export_square(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<ImbalanceRow>> {
    let runs = run_square_imbalance(cfg)?;
    ensure_dir(out_dir)?;
    let rows: Vec<ImbalanceRow> = runs.iter().map(|r| r.row.clone()).collect();
    write_rows(create(&out_dir.join("imbalance.csv"))?, &rows)?;
    write_rows(create(&out_dir.join("histogram.csv"))?, &histogram(&rows))?;
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    };
    write_manifest(
        out_dir,
        cfg,
        "square",
        json!({
            "network_median": median(rows.iter().map(|r| r.network).collect()),
            "laplacian_svm_median": median(rows.iter().map(|r| r.laplacian_svm).collect()),
            "drift_correlation": opt(drift_correlation(&runs, 0, cfg.stream_len())),
        }),
    )?;
    Ok(rows)
}

/// `grid`: `grid.csv` and the best cell per method.
pub fn export_grid(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<GridCell>> {
    let cells = grid_search(cfg, &cfg.grid)?;
    ensure_dir(out_dir)?;
    write_grid_csv(create(&out_dir.join("grid.csv"))?, &cells)?;
    let describe = |c: Option<&GridCell>, which| {
        c.map_or(serde_json::Value::Null, |c| {
            json!({
                "params": c.params.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>(),
                "error": c.metric(which),
            })
        })
    };
    write_manifest(
        out_dir,
        cfg,
        "grid",
        json!({
            "best_ssl": describe(best_cell(&cells, GridMetric::Ssl), GridMetric::Ssl),
            "best_logreg": describe(best_cell(&cells, GridMetric::Logreg), GridMetric::Logreg),
        }),
    )?;
    Ok(cells)
}

/// `probe`: `probe.csv`.
pub fn export_probe(cfg: &ExperimentConfig, out_dir: &Path, resolution: usize) -> Result<()> {
    let (points, responses) = probe(cfg, resolution)?;
    ensure_dir(out_dir)?;
    write_probe_csv(create(&out_dir.join("probe.csv"))?, &points, &responses)?;
    write_manifest(
        out_dir,
        cfg,
        "probe",
        json!({ "probes": points.len(), "channels": responses.ncols() }),
    )
}
