//! Evaluation quantities and the per-run log.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::datasets::Sample;
use crate::error::{Error, Result};
use crate::snapshot::ModelSnapshot;

/// One logged stream step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub index: usize,
    pub z_true: i8,
    pub z: i8,
    pub y: f64,
    /// Whether the tiling fast dynamics converged on this sample.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSnapshot {
    pub step: usize,
    pub w: Array1<f64>,
}

/// Output trajectory of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    records: Vec<StepRecord>,
    weights: Vec<WeightSnapshot>,
    pub config_hash: String,
    pub seed: u64,
}

impl RunLog {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        RunLog {
            records: Vec::new(),
            weights: Vec::new(),
            config_hash: config_hash.into(),
            seed,
        }
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn weights(&self) -> &[WeightSnapshot] {
        &self.weights
    }

    /// Indices must be strictly increasing.
    pub fn push(&mut self, rec: StepRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.index <= last.index {
                return Err(Error::Config(format!(
                    "run log step {} does not follow step {}",
                    rec.index, last.index
                )));
            }
        }
        self.records.push(rec);
        Ok(())
    }

    /// Snapshots may only be taken at already-recorded steps.
    pub fn push_weights(&mut self, step: usize, w: ArrayView1<f64>) -> Result<()> {
        if self
            .records
            .binary_search_by_key(&step, |r| r.index)
            .is_err()
        {
            return Err(Error::Config(format!(
                "weight snapshot at unrecorded step {step}"
            )));
        }
        if let Some(last) = self.weights.last() {
            if step <= last.step {
                return Err(Error::Config(format!(
                    "weight snapshot {step} does not follow {}",
                    last.step
                )));
            }
        }
        self.weights.push(WeightSnapshot {
            step,
            w: w.to_owned(),
        });
        Ok(())
    }

    /// `step,z_true,z,y,converged`
    pub fn write_records_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "z_true", "z", "y", "converged"])?;
        for r in &self.records {
            w.write_record([
                r.index.to_string(),
                r.z_true.to_string(),
                r.z.to_string(),
                r.y.to_string(),
                u8::from(r.converged).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `step,w0,...,w{m-1}`
    pub fn write_weights_csv<W: Write>(&self, out: W) -> Result<()> {
        let m = self.weights.first().map_or(0, |s| s.w.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string()];
        header.extend((0..m).map(|i| format!("w{i}")));
        w.write_record(&header)?;
        for s in &self.weights {
            let mut rec = vec![s.step.to_string()];
            rec.extend(s.w.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Rebuild a log from the two CSVs. Metadata is not stored in them.
    pub fn read_csv<R1: Read, R2: Read>(records: R1, weights: R2) -> Result<Self> {
        let mut log = RunLog::default();
        let mut r = csv::Reader::from_reader(records);
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        if header != ["step", "z_true", "z", "y", "converged"] {
            return Err(Error::Config(format!(
                "run log header: got {}",
                header.join(",")
            )));
        }
        for rec in r.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<&str> { Ok(&rec[i]) };
            let converged = match parse(4)? {
                "1" => true,
                "0" => false,
                v => return Err(Error::Config(format!("run log converged flag `{v}`"))),
            };
            log.push(StepRecord {
                index: parse(0)?
                    .parse()
                    .map_err(|e| Error::Config(format!("run log step: {e}")))?,
                z_true: parse(1)?
                    .parse()
                    .map_err(|e| Error::Config(format!("run log z_true: {e}")))?,
                z: parse(2)?
                    .parse()
                    .map_err(|e| Error::Config(format!("run log z: {e}")))?,
                y: parse(3)?
                    .parse()
                    .map_err(|e| Error::Config(format!("run log y: {e}")))?,
                converged,
            })?;
        }
        let mut r = csv::Reader::from_reader(weights);
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        if header.first().map(String::as_str) != Some("step")
            || header[1..]
                .iter()
                .enumerate()
                .any(|(i, c)| *c != format!("w{i}"))
        {
            return Err(Error::Config(format!(
                "weights header: got {}",
                header.join(",")
            )));
        }
        for rec in r.records() {
            let rec = rec?;
            let step: usize = rec[0]
                .parse()
                .map_err(|e| Error::Config(format!("weights step: {e}")))?;
            let w = rec
                .iter()
                .skip(1)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| Error::Config(format!("weight `{v}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            log.push_weights(step, Array1::from(w).view())?;
        }
        Ok(log)
    }
}

/// Decision read from a signed output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prediction {
    Positive,
    Negative,
    /// Output exactly zero. Scored as an error.
    Abstain,
}

impl Prediction {
    pub fn from_output(y: f64) -> Self {
        if y > 0.0 {
            Prediction::Positive
        } else if y < 0.0 {
            Prediction::Negative
        } else {
            Prediction::Abstain
        }
    }

    pub fn is_correct(self, z_true: i8) -> bool {
        matches!(
            (self, z_true),
            (Prediction::Positive, 1) | (Prediction::Negative, -1)
        )
    }
}

/// Error over records with `start <= index < end` whose label was not
/// revealed.
pub fn stream_error(records: &[StepRecord], start: usize, end: usize) -> Result<f64> {
    let mut scored = 0usize;
    let mut wrong = 0usize;
    for r in records
        .iter()
        .filter(|r| r.index >= start && r.index < end && r.z == 0)
    {
        scored += 1;
        if !Prediction::from_output(r.y).is_correct(r.z_true) {
            wrong += 1;
        }
    }
    if scored == 0 {
        return Err(Error::EmptyWindow { start, end });
    }
    Ok(wrong as f64 / scored as f64)
}

/// Misclassification rate of `outputs` against the samples' true classes.
pub fn error_rate(outputs: &[f64], samples: &[Sample]) -> Result<f64> {
    if outputs.len() != samples.len() {
        return Err(Error::Shape(format!(
            "{} outputs for {} samples",
            outputs.len(),
            samples.len()
        )));
    }
    if samples.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let wrong = outputs
        .iter()
        .zip(samples)
        .filter(|(&y, s)| !Prediction::from_output(y).is_correct(s.z_true))
        .count();
    Ok(wrong as f64 / samples.len() as f64)
}

/// Classify every test sample with the label channel silent and return the
/// error rate. Samples are independent (cold start each), so the result does
/// not depend on their order.
pub fn test_error(model: &ModelSnapshot, test: &[Sample]) -> Result<f64> {
    let outputs: Vec<f64> = test
        .par_iter()
        .map(|s| model.output(s.x.view()))
        .collect::<Result<_>>()?;
    error_rate(&outputs, test)
}

/// Share of the majority class among predictions, abstentions split evenly.
pub fn imbalance_fraction(predictions: &[Prediction]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    let mut pos = 0.0;
    let mut neg = 0.0;
    for p in predictions {
        match p {
            Prediction::Positive => pos += 1.0,
            Prediction::Negative => neg += 1.0,
            Prediction::Abstain => {
                pos += 0.5;
                neg += 0.5;
            }
        }
    }
    Ok(f64::max(pos, neg) / predictions.len() as f64)
}

/// `E[h hᵀ]` over the given activities.
pub fn overlap_matrix(activities: &[Array1<f64>]) -> Result<Array2<f64>> {
    let m = activities.first().ok_or(Error::Empty("activities"))?.len();
    let mut s = Array2::<f64>::zeros((m, m));
    for h in activities {
        if h.len() != m {
            return Err(Error::Shape(format!(
                "activity of length {}, expected {m}",
                h.len()
            )));
        }
        let col = h.view().insert_axis(Axis(1));
        let row = h.view().insert_axis(Axis(0));
        s += &col.dot(&row);
    }
    s /= activities.len() as f64;
    Ok(s)
}

/// `η(μ S w - w)`: mean change of the output weights per unlabeled step
/// while the output is unsaturated.
pub fn expected_w_drift(
    overlap: ArrayView2<f64>,
    w: ArrayView1<f64>,
    mu: f64,
    eta: f64,
) -> Result<Array1<f64>> {
    if overlap.dim() != (w.len(), w.len()) {
        return Err(Error::Shape(format!(
            "overlap {:?} does not match w of length {}",
            overlap.dim(),
            w.len()
        )));
    }
    Ok((overlap.dot(&w) * mu - w) * eta)
}

/// Length of the window used to decide that predictions have settled.
pub const TRANSITION_WINDOW: usize = 100;
/// Trailing-window error below which predictions count as settled.
pub const TRANSITION_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    /// Step of the first revealed label.
    pub first_label: usize,
    /// First step after which every trailing window stays below threshold.
    pub settled_at: usize,
}

impl Transition {
    pub fn length(&self) -> usize {
        self.settled_at.saturating_sub(self.first_label)
    }
}

/// Locate the end of the transition period.
///
/// `None` when no label was ever revealed, or when the final trailing window
/// is still above threshold.
pub fn transition_period(records: &[StepRecord]) -> Option<Transition> {
    let first_label = records.iter().find(|r| r.z != 0)?.index;
    // scorable flags in stream order
    let flags: Vec<(usize, Option<bool>)> = records
        .iter()
        .map(|r| {
            (
                r.index,
                (r.z == 0).then(|| !Prediction::from_output(r.y).is_correct(r.z_true)),
            )
        })
        .collect();
    if flags.len() < TRANSITION_WINDOW {
        return None;
    }
    let mut settled_at = first_label;
    let mut scored = 0usize;
    let mut wrong = 0usize;
    for (i, &(index, flag)) in flags.iter().enumerate() {
        if let Some(f) = flag {
            scored += 1;
            wrong += usize::from(f);
        }
        if i >= TRANSITION_WINDOW {
            if let Some(f) = flags[i - TRANSITION_WINDOW].1 {
                scored -= 1;
                wrong -= usize::from(f);
            }
        }
        if i + 1 >= TRANSITION_WINDOW {
            let err = if scored == 0 {
                0.0
            } else {
                wrong as f64 / scored as f64
            };
            if err >= TRANSITION_THRESHOLD {
                settled_at = index + 1;
            }
        }
    }
    let last = records.last()?.index;
    if settled_at > last {
        return None;
    }
    Some(Transition {
        first_label,
        settled_at: settled_at.max(first_label),
    })
}

/// Number of channels whose mean response on both classes exceeds
/// `rel_threshold` times the channel's largest response. Rows of
/// `activities` are samples.
pub fn shared_channels(
    activities: ArrayView2<f64>,
    classes: &[i8],
    rel_threshold: f64,
) -> Result<usize> {
    if activities.nrows() != classes.len() {
        return Err(Error::Shape(format!(
            "{} activity rows for {} classes",
            activities.nrows(),
            classes.len()
        )));
    }
    let mut count = 0;
    for col in activities.columns() {
        let peak = col.iter().cloned().fold(0.0, f64::max);
        if peak <= 0.0 {
            continue;
        }
        let mean_of = |class: i8| {
            let (sum, n) = col
                .iter()
                .zip(classes)
                .filter(|(_, &c)| c == class)
                .fold((0.0, 0usize), |(s, n), (&h, _)| (s + h, n + 1));
            if n == 0 {
                0.0
            } else {
                sum / n as f64
            }
        };
        if mean_of(1) > rel_threshold * peak && mean_of(-1) > rel_threshold * peak {
            count += 1;
        }
    }
    Ok(count)
}

/// Sample mean and (population) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
