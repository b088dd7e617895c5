//! Versioned text snapshots of a trained network.
//!
//! One `key value...` pair per line after the `MTSSL1` magic line. Floats
//! are written with 17 significant digits so reading a snapshot back gives
//! bit-identical weights.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};

use crate::embed::SphereLift;
use crate::error::{Error, Result};
use crate::ssl::{LabeledInput, Rule, SslParams, SslState};
use crate::tiling::{infer, EtaSchedule, TilingParams, TilingState, WarmStart};

pub const MAGIC: &str = "MTSSL1";

/// Everything needed to classify a raw input: the input encoding, the
/// tiling layer and the output neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    pub lift: SphereLift,
    pub tiling_params: TilingParams,
    pub tiling: TilingState,
    pub ssl_params: SslParams,
    pub ssl: SslState,
}

impl ModelSnapshot {
    /// Tiling code of a raw input, computed from a cold start.
    pub fn features(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let encoded = self.lift.encode(x);
        Ok(
            infer(&self.tiling, encoded.view(), &self.tiling_params, None)?
                .activity
                .h,
        )
    }

    /// Output neuron response to a raw input with the label channel silent.
    pub fn output(&self, x: ArrayView1<f64>) -> Result<f64> {
        let h = self.features(x)?;
        let input = LabeledInput::new(h.view(), 0)?;
        Ok(crate::ssl::predict(&self.ssl, &input, &self.ssl_params))
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut out = BufWriter::new(out);
        let p = &self.tiling_params;
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "input.lift {}", fmt(self.lift.lift))?;
        writeln!(out, "input.gain {}", fmt(self.lift.gain))?;
        match &self.lift.center {
            Some(c) => writeln!(out, "input.center {}", join(c.iter()))?,
            None => writeln!(out, "input.center none")?,
        }
        writeln!(out, "tiling.m {}", p.m)?;
        writeln!(out, "tiling.n {}", p.n)?;
        writeln!(out, "tiling.alpha {}", fmt(p.alpha))?;
        writeln!(out, "tiling.gamma_h {}", fmt(p.gamma_h))?;
        writeln!(out, "tiling.gamma_u {}", fmt(p.gamma_u))?;
        writeln!(out, "tiling.gamma_v {}", fmt(p.gamma_v))?;
        match p.eta {
            EtaSchedule::Constant(eta) => writeln!(out, "tiling.eta {}", fmt(eta))?,
            EtaSchedule::InverseTime => writeln!(out, "tiling.eta inverse_time")?,
        }
        writeln!(out, "tiling.max_fast_iters {}", p.max_fast_iters)?;
        writeln!(out, "tiling.fast_tol {}", fmt(p.fast_tol))?;
        let warm = match p.warm_start {
            WarmStart::Carry => "carry",
            WarmStart::Reset => "reset",
        };
        writeln!(out, "tiling.warm_start {warm}")?;
        writeln!(out, "tiling.u_init {}", fmt(p.u_init))?;
        writeln!(out, "tiling.init_scale {}", fmt(p.init_scale))?;
        writeln!(out, "tiling.t {}", self.tiling.t)?;
        writeln!(out, "tiling.b {}", join(self.tiling.b.iter()))?;
        for row in self.tiling.w.rows() {
            writeln!(out, "tiling.W {}", join(row.iter()))?;
        }
        writeln!(out, "ssl.mu {}", fmt(self.ssl_params.mu))?;
        let rule = match self.ssl_params.rule {
            Rule::Clipped => "clipped",
            Rule::Tanh => "tanh",
        };
        writeln!(out, "ssl.rule {rule}")?;
        writeln!(out, "ssl.t {}", self.ssl.t)?;
        writeln!(out, "ssl.w {}", join(self.ssl.w.iter()))?;
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut lines = BufReader::new(input).lines();
        match lines.next() {
            Some(Ok(l)) if l.trim_end() == MAGIC => {}
            Some(Ok(l)) => {
                return Err(Error::Snapshot(format!(
                    "expected magic `{MAGIC}`, found `{l}`"
                )))
            }
            Some(Err(e)) => return Err(e.into()),
            None => return Err(Error::Snapshot("empty file".into())),
        }
        let mut fields: Vec<(String, String)> = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once(' ').unwrap_or((line.as_str(), ""));
            fields.push((k.to_string(), v.trim().to_string()));
        }
        let get = |key: &str| -> Result<&str> {
            fields
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Snapshot(format!("missing `{key}`")))
        };
        let num = |key: &str| -> Result<f64> { parse_f64(key, get(key)?) };
        let int = |key: &str| -> Result<u64> {
            get(key)?
                .parse()
                .map_err(|e| Error::Snapshot(format!("`{key}`: {e}")))
        };

        let center = match get("input.center")? {
            "none" => None,
            v => Some(parse_vec("input.center", v)?),
        };
        let lift = SphereLift {
            lift: num("input.lift")?,
            gain: num("input.gain")?,
            center,
        };
        let m = int("tiling.m")? as usize;
        let n = int("tiling.n")? as usize;
        let eta = match get("tiling.eta")? {
            "inverse_time" => EtaSchedule::InverseTime,
            v => EtaSchedule::Constant(parse_f64("tiling.eta", v)?),
        };
        let warm_start = match get("tiling.warm_start")? {
            "carry" => WarmStart::Carry,
            "reset" => WarmStart::Reset,
            v => {
                return Err(Error::Snapshot(format!(
                    "`tiling.warm_start`: unknown value `{v}`"
                )))
            }
        };
        let tiling_params = TilingParams {
            m,
            n,
            alpha: num("tiling.alpha")?,
            gamma_h: num("tiling.gamma_h")?,
            gamma_u: num("tiling.gamma_u")?,
            gamma_v: num("tiling.gamma_v")?,
            eta,
            max_fast_iters: int("tiling.max_fast_iters")? as usize,
            fast_tol: num("tiling.fast_tol")?,
            warm_start,
            u_init: num("tiling.u_init")?,
            init_scale: num("tiling.init_scale")?,
        };
        tiling_params.validate()?;

        let rows: Vec<Vec<f64>> = fields
            .iter()
            .filter(|(k, _)| k == "tiling.W")
            .map(|(_, v)| parse_vec("tiling.W", v))
            .collect::<Result<_>>()?;
        if rows.len() != m || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Snapshot(format!(
                "`tiling.W` must have {m} rows of {n} values"
            )));
        }
        let w = Array2::from_shape_vec((m, n), rows.concat())
            .map_err(|e| Error::Snapshot(e.to_string()))?;
        let b = Array1::from(parse_vec("tiling.b", get("tiling.b")?)?);
        if b.len() != m {
            return Err(Error::Snapshot(format!(
                "`tiling.b` has {} values, expected {m}",
                b.len()
            )));
        }
        let tiling = TilingState {
            w,
            b,
            t: int("tiling.t")?,
        };

        let rule = match get("ssl.rule")? {
            "clipped" => Rule::Clipped,
            "tanh" => Rule::Tanh,
            v => return Err(Error::Snapshot(format!("`ssl.rule`: unknown value `{v}`"))),
        };
        let ssl_params = SslParams {
            mu: num("ssl.mu")?,
            rule,
        };
        ssl_params.validate()?;
        let ssl_w = Array1::from(parse_vec("ssl.w", get("ssl.w")?)?);
        if ssl_w.len() != m {
            return Err(Error::Snapshot(format!(
                "`ssl.w` has {} values, expected {m}",
                ssl_w.len()
            )));
        }
        let ssl = SslState {
            w: ssl_w,
            t: int("ssl.t")?,
        };
        Ok(ModelSnapshot {
            lift,
            tiling_params,
            tiling,
            ssl_params,
            ssl,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn join<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    values.map(|&v| fmt(v)).collect::<Vec<_>>().join(" ")
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|e| Error::Snapshot(format!("`{key}`: cannot parse `{v}`: {e}")))
}

fn parse_vec(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split_whitespace().map(|s| parse_f64(key, s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiling::init_tiling;

    fn sample() -> ModelSnapshot {
        let mut params = TilingParams::new(3, 3, 0.9);
        params.eta = EtaSchedule::InverseTime;
        let mut tiling = init_tiling(&params, 5).unwrap();
        tiling.b = Array1::from(vec![0.1, 1.0 / 3.0, std::f64::consts::PI]);
        tiling.t = 17;
        ModelSnapshot {
            lift: SphereLift {
                center: Some(vec![0.5, 0.25]),
                ..SphereLift::default()
            },
            tiling_params: params,
            tiling,
            ssl_params: SslParams {
                mu: 1000.0,
                rule: Rule::Tanh,
            },
            ssl: SslState {
                w: Array1::from(vec![-1e-300, 0.0, 2.0f64.sqrt()]),
                t: 4,
            },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let snap = sample();
        let mut buf = Vec::new();
        snap.write_to(&mut buf).unwrap();
        let back = ModelSnapshot::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, snap);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn bad_magic_and_truncation_rejected() {
        assert!(ModelSnapshot::read_from("MTSSL0\n".as_bytes()).is_err());
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let truncated: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        assert!(ModelSnapshot::read_from(truncated.as_bytes()).is_err());
    }
}
