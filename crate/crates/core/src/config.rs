//! Experiment configuration.
//!
//! Configs are flat text files of `section.key = value` lines; `#` starts a
//! comment. Every key has a default, so a file only lists what it changes.
//! Lines of the form `grid.<key> = v1, v2, ...` declare a search lattice
//! over `<key>` instead of setting it.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::baselines::SvmParams;
use crate::datasets::{DatasetKind, DatasetSpec, LabelPolicy};
use crate::embed::SphereLift;
use crate::error::{Error, Result};
use crate::ssl::{Rule, SslParams};
use crate::tiling::{EtaSchedule, TilingInit, TilingParams, WarmStart};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    FirstOfEachClass,
    Fixed,
    Fraction,
    Count,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub repeats: usize,
    pub seed: u64,
    /// Test-set evaluation interval for the online/offline comparison.
    pub eval_every: usize,
    /// Output-weight snapshot interval in the run log.
    pub weights_every: usize,

    pub kind: DatasetKind,
    pub size: usize,
    pub noise: f64,
    pub granularity: f64,
    pub corners: [usize; 2],
    /// Held-out samples drawn from the same distribution; 0 for none.
    pub test_size: usize,

    pub label_kind: LabelKind,
    pub label_points: Vec<usize>,
    pub label_fraction: f64,
    pub label_count: usize,

    pub lift: SphereLift,

    pub m: usize,
    pub alpha: f64,
    pub gamma_h: f64,
    pub gamma_u: f64,
    pub gamma_v: f64,
    pub eta: EtaSchedule,
    pub max_fast_iters: usize,
    pub fast_tol: f64,
    pub warm_start: WarmStart,
    pub u_init: f64,
    pub init_scale: f64,
    pub init: TilingInit,
    /// Unsupervised passes over the shuffled stream before it is replayed.
    pub pretrain: usize,
    /// Whether the tiling weights keep learning during the replayed stream.
    pub learn: bool,

    pub ssl: SslParams,
    pub logreg_lr: f64,
    pub svm: SvmParams,

    /// `(key, values)` search axes, in declaration order.
    pub grid: Vec<(String, Vec<String>)>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TilingParams::new(40, 3, 0.5);
        ExperimentConfig {
            name: "experiment".into(),
            repeats: 1,
            seed: 0,
            eval_every: 500,
            weights_every: 100,
            kind: DatasetKind::TwoMoons,
            size: 2000,
            noise: 0.05,
            granularity: 0.5,
            corners: [10, 20],
            test_size: 0,
            label_kind: LabelKind::Fraction,
            label_points: Vec::new(),
            label_fraction: 0.05,
            label_count: 0,
            lift: SphereLift::default(),
            m: t.m,
            alpha: t.alpha,
            gamma_h: t.gamma_h,
            gamma_u: t.gamma_u,
            gamma_v: t.gamma_v,
            eta: t.eta,
            max_fast_iters: t.max_fast_iters,
            fast_tol: t.fast_tol,
            warm_start: t.warm_start,
            u_init: t.u_init,
            init_scale: t.init_scale,
            init: TilingInit::Uniform,
            pretrain: 0,
            learn: true,
            ssl: SslParams {
                mu: 1000.0,
                rule: Rule::Clipped,
            },
            logreg_lr: 0.1,
            svm: SvmParams::default(),
            grid: Vec::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{v}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse(key, s.trim())).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "`{key}`: expected true or false, got `{v}`"
        ))),
    }
}

fn join<T: ToString>(values: &[T]) -> String {
    values
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                ))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Set one key. Does not validate the whole config.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        if let Some(axis) = key.strip_prefix("grid.") {
            // reject unknown keys up front
            let mut probe = self.clone();
            let values: Vec<String> = v
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            for value in &values {
                probe.set(axis, value)?;
            }
            self.grid.retain(|(k, _)| k != axis);
            self.grid.push((axis.to_string(), values));
            return Ok(());
        }
        match key {
            "experiment.name" => self.name = v.to_string(),
            "experiment.repeats" => self.repeats = parse(key, v)?,
            "experiment.seed" => self.seed = parse(key, v)?,
            "experiment.eval_every" => self.eval_every = parse(key, v)?,
            "experiment.weights_every" => self.weights_every = parse(key, v)?,

            "dataset.kind" => {
                let kind: DatasetKind = v.parse()?;
                if kind != self.kind {
                    self.noise = DatasetSpec::new(kind, 1, 0).noise;
                }
                self.kind = kind;
            }
            "dataset.size" => self.size = parse(key, v)?,
            "dataset.noise" => self.noise = parse(key, v)?,
            "dataset.granularity" => self.granularity = parse(key, v)?,
            "dataset.corners" => {
                let c: Vec<usize> = parse_list(key, v)?;
                self.corners = c
                    .try_into()
                    .map_err(|_| Error::Config(format!("`{key}`: expected two positions")))?;
            }
            "test.size" => self.test_size = parse(key, v)?,

            "labels.policy" => {
                self.label_kind = match v {
                    "first_of_each_class" => LabelKind::FirstOfEachClass,
                    "fixed" => LabelKind::Fixed,
                    "fraction" => LabelKind::Fraction,
                    "count" => LabelKind::Count,
                    _ => {
                        return Err(Error::Config(format!(
                    "`{key}`: expected first_of_each_class, fixed, fraction or count, got `{v}`"
                )))
                    }
                }
            }
            "labels.points" => self.label_points = parse_list(key, v)?,
            "labels.fraction" => self.label_fraction = parse(key, v)?,
            "labels.count" => self.label_count = parse(key, v)?,

            "input.lift" => self.lift.lift = parse(key, v)?,
            "input.gain" => self.lift.gain = parse(key, v)?,
            "input.center" => {
                self.lift.center = if v == "none" {
                    None
                } else {
                    Some(parse_list(key, v)?)
                };
            }

            "tiling.m" => self.m = parse(key, v)?,
            "tiling.alpha" => self.alpha = parse(key, v)?,
            "tiling.gamma_h" => self.gamma_h = parse(key, v)?,
            "tiling.gamma_u" => self.gamma_u = parse(key, v)?,
            "tiling.gamma_v" => self.gamma_v = parse(key, v)?,
            "tiling.eta" => {
                self.eta = if v == "inverse_time" {
                    EtaSchedule::InverseTime
                } else {
                    EtaSchedule::Constant(parse(key, v)?)
                }
            }
            "tiling.max_fast_iters" => self.max_fast_iters = parse(key, v)?,
            "tiling.fast_tol" => self.fast_tol = parse(key, v)?,
            "tiling.warm_start" => {
                self.warm_start = match v {
                    "carry" => WarmStart::Carry,
                    "reset" => WarmStart::Reset,
                    _ => {
                        return Err(Error::Config(format!(
                            "`{key}`: expected carry or reset, got `{v}`"
                        )))
                    }
                }
            }
            "tiling.u_init" => self.u_init = parse(key, v)?,
            "tiling.init_scale" => self.init_scale = parse(key, v)?,
            "tiling.init" => {
                self.init = match v {
                    "uniform" => TilingInit::Uniform,
                    "samples" => TilingInit::Samples,
                    _ => {
                        return Err(Error::Config(format!(
                            "`{key}`: expected uniform or samples, got `{v}`"
                        )))
                    }
                }
            }
            "tiling.pretrain" => self.pretrain = parse(key, v)?,
            "tiling.learn" => self.learn = parse_bool(key, v)?,

            "ssl.mu" => self.ssl.mu = parse(key, v)?,
            "ssl.rule" => {
                self.ssl.rule = match v {
                    "clipped" => Rule::Clipped,
                    "tanh" => Rule::Tanh,
                    _ => {
                        return Err(Error::Config(format!(
                            "`{key}`: expected clipped or tanh, got `{v}`"
                        )))
                    }
                }
            }
            "logreg.lr" => self.logreg_lr = parse(key, v)?,
            "svm.lambda" => self.svm.lambda = parse(key, v)?,
            "svm.mu" => self.svm.mu = parse(key, v)?,
            "svm.iterations" => self.svm.iterations = parse(key, v)?,
            "svm.step" => self.svm.step = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Apply `key=value` overrides, then validate.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = self.clone();
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::param("experiment.repeats", "must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::param("experiment.eval_every", "must be at least 1"));
        }
        if self.weights_every == 0 {
            return Err(Error::param(
                "experiment.weights_every",
                "must be at least 1",
            ));
        }
        self.dataset(0).validate()?;
        if self.test_size > 0 {
            self.test_dataset(0).validate()?;
        }
        match self.label_kind {
            LabelKind::Fraction if !(0.0..=1.0).contains(&self.label_fraction) => {
                return Err(Error::FractionOutOfRange(self.label_fraction));
            }
            LabelKind::Count if self.label_count > self.stream_len() => {
                return Err(Error::IndexOutOfBounds {
                    index: self.label_count,
                    len: self.stream_len(),
                });
            }
            LabelKind::Fixed => {
                if let Some(&bad) = self.label_points.iter().find(|&&p| p >= self.stream_len()) {
                    return Err(Error::IndexOutOfBounds {
                        index: bad,
                        len: self.stream_len(),
                    });
                }
            }
            LabelKind::FirstOfEachClass
                if self.label_points.len() != 2 && !self.label_points.is_empty() =>
            {
                return Err(Error::Config(
                    "`labels.points` needs two start positions for first_of_each_class".into(),
                ));
            }
            _ => {}
        }
        self.lift.validate()?;
        if let Some(c) = &self.lift.center {
            if c.len() != self.kind.dim() {
                return Err(Error::Config(format!(
                    "`input.center` has {} entries but {} inputs are {}-dimensional",
                    c.len(),
                    self.kind.name(),
                    self.kind.dim()
                )));
            }
        }
        self.tiling_params().validate()?;
        self.ssl.validate()?;
        if !(self.logreg_lr > 0.0 && self.logreg_lr.is_finite()) {
            return Err(Error::param(
                "logreg.lr",
                format!("must be finite and > 0, got {}", self.logreg_lr),
            ));
        }
        self.svm.validate()?;
        Ok(())
    }

    /// Number of samples in the training stream.
    pub fn stream_len(&self) -> usize {
        match self.kind {
            DatasetKind::UnitSquare => self.size + 2,
            _ => self.size,
        }
    }

    pub fn dataset(&self, seed: u64) -> DatasetSpec {
        DatasetSpec {
            kind: self.kind,
            size: self.size,
            noise: self.noise,
            granularity: self.granularity,
            seed,
            corner_positions: self.corners,
        }
    }

    pub fn test_dataset(&self, seed: u64) -> DatasetSpec {
        DatasetSpec {
            size: self.test_size.max(1),
            ..self.dataset(seed)
        }
    }

    pub fn label_policy(&self) -> LabelPolicy {
        match self.label_kind {
            LabelKind::FirstOfEachClass => {
                let from = match self.label_points.as_slice() {
                    [a, b] => [*a, *b],
                    _ => self.corners,
                };
                LabelPolicy::FirstOfEachClass(from)
            }
            LabelKind::Fixed => LabelPolicy::FixedPoints(self.label_points.clone()),
            LabelKind::Fraction => LabelPolicy::RandomFraction(self.label_fraction),
            LabelKind::Count => LabelPolicy::RandomCount(self.label_count),
        }
    }

    pub fn tiling_params(&self) -> TilingParams {
        TilingParams {
            m: self.m,
            n: self.lift.output_dim(self.kind.dim()),
            alpha: self.alpha,
            gamma_h: self.gamma_h,
            gamma_u: self.gamma_u,
            gamma_v: self.gamma_v,
            eta: self.eta,
            max_fast_iters: self.max_fast_iters,
            fast_tol: self.fast_tol,
            warm_start: self.warm_start,
            u_init: self.u_init,
            init_scale: self.init_scale,
        }
    }

    /// Every setting as `key = value` lines in a fixed order. Parsing the
    /// result gives back an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("experiment.name", self.name.clone());
        put("experiment.repeats", self.repeats.to_string());
        put("experiment.seed", self.seed.to_string());
        put("experiment.eval_every", self.eval_every.to_string());
        put("experiment.weights_every", self.weights_every.to_string());
        put("dataset.kind", self.kind.name().to_string());
        put("dataset.size", self.size.to_string());
        put("dataset.noise", self.noise.to_string());
        put("dataset.granularity", self.granularity.to_string());
        put("dataset.corners", join(&self.corners));
        put("test.size", self.test_size.to_string());
        let policy = match self.label_kind {
            LabelKind::FirstOfEachClass => "first_of_each_class",
            LabelKind::Fixed => "fixed",
            LabelKind::Fraction => "fraction",
            LabelKind::Count => "count",
        };
        put("labels.policy", policy.to_string());
        put("labels.points", join(&self.label_points));
        put("labels.fraction", self.label_fraction.to_string());
        put("labels.count", self.label_count.to_string());
        put("input.lift", self.lift.lift.to_string());
        put("input.gain", self.lift.gain.to_string());
        put(
            "input.center",
            self.lift.center.as_deref().map_or("none".to_string(), join),
        );
        put("tiling.m", self.m.to_string());
        put("tiling.alpha", self.alpha.to_string());
        put("tiling.gamma_h", self.gamma_h.to_string());
        put("tiling.gamma_u", self.gamma_u.to_string());
        put("tiling.gamma_v", self.gamma_v.to_string());
        put(
            "tiling.eta",
            match self.eta {
                EtaSchedule::Constant(e) => e.to_string(),
                EtaSchedule::InverseTime => "inverse_time".to_string(),
            },
        );
        put("tiling.max_fast_iters", self.max_fast_iters.to_string());
        put("tiling.fast_tol", self.fast_tol.to_string());
        put(
            "tiling.warm_start",
            match self.warm_start {
                WarmStart::Carry => "carry",
                WarmStart::Reset => "reset",
            }
            .to_string(),
        );
        put("tiling.u_init", self.u_init.to_string());
        put("tiling.init_scale", self.init_scale.to_string());
        put(
            "tiling.init",
            match self.init {
                TilingInit::Uniform => "uniform",
                TilingInit::Samples => "samples",
            }
            .to_string(),
        );
        put("tiling.pretrain", self.pretrain.to_string());
        put("tiling.learn", self.learn.to_string());
        put("ssl.mu", self.ssl.mu.to_string());
        put(
            "ssl.rule",
            match self.ssl.rule {
                Rule::Clipped => "clipped",
                Rule::Tanh => "tanh",
            }
            .to_string(),
        );
        put("logreg.lr", self.logreg_lr.to_string());
        put("svm.lambda", self.svm.lambda.to_string());
        put("svm.mu", self.svm.mu.to_string());
        put("svm.iterations", self.svm.iterations.to_string());
        put("svm.step", self.svm.step.to_string());
        for (k, values) in &self.grid {
            put(&format!("grid.{k}"), values.join(","));
        }
        s
    }

    /// SHA-256 of [`to_text`](Self::to_text), hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
