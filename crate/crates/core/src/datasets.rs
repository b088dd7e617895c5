//! Seeded synthetic streams and label masking.

use std::f64::consts::PI;
use std::io::{Read, Write};

use ndarray::Array1;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ssl::check_label;

/// One stream element.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Array1<f64>,
    /// Ground-truth class, -1 or +1.
    pub z_true: i8,
    /// Label channel: `z_true` when revealed, 0 when masked.
    pub z: i8,
    /// Position in the stream.
    pub index: usize,
}

impl Sample {
    pub fn is_labeled(&self) -> bool {
        self.z != 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    TwoMoons,
    SwissChessboard,
    UnitSquare,
}

impl DatasetKind {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetKind::TwoMoons => "two_moons",
            DatasetKind::SwissChessboard => "swiss_chessboard",
            DatasetKind::UnitSquare => "unit_square",
        }
    }

    /// Raw coordinate dimension.
    pub fn dim(&self) -> usize {
        match self {
            DatasetKind::SwissChessboard => 3,
            _ => 2,
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_moons" => Ok(DatasetKind::TwoMoons),
            "swiss_chessboard" => Ok(DatasetKind::SwissChessboard),
            "unit_square" => Ok(DatasetKind::UnitSquare),
            other => Err(Error::Config(format!(
                "unknown dataset kind `{other}` (expected two_moons, swiss_chessboard or unit_square)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Number of generated points. The unit square adds two labeled corner
    /// points on top of these.
    pub size: usize,
    /// Standard deviation of isotropic Gaussian noise, in output units.
    pub noise: f64,
    /// Chessboard square side in normalized arc-length units.
    pub granularity: f64,
    pub seed: u64,
    /// Stream positions of the two labeled corner points (unit square only).
    pub corner_positions: [usize; 2],
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, size: usize, seed: u64) -> Self {
        DatasetSpec {
            kind,
            size,
            noise: if kind == DatasetKind::TwoMoons {
                0.05
            } else {
                0.0
            },
            granularity: 0.5,
            seed,
            corner_positions: [10, 20],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::param("dataset.size", "must be at least 1"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::param(
                "dataset.noise",
                format!("must be finite and >= 0, got {}", self.noise),
            ));
        }
        if self.kind == DatasetKind::SwissChessboard
            && !(self.granularity > 0.0 && self.granularity.is_finite())
        {
            return Err(Error::param(
                "dataset.granularity",
                format!("must be finite and > 0, got {}", self.granularity),
            ));
        }
        if self.kind == DatasetKind::UnitSquare {
            let [a, b] = self.corner_positions;
            if a == b {
                return Err(Error::param(
                    "dataset.corner_positions",
                    "positions must differ",
                ));
            }
            let len = self.size + 2;
            for p in [a, b] {
                if p >= len {
                    return Err(Error::IndexOutOfBounds { index: p, len });
                }
            }
        }
        Ok(())
    }
}

pub fn generate(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    match spec.kind {
        DatasetKind::TwoMoons => gen_two_moons(spec),
        DatasetKind::SwissChessboard => gen_swiss_chessboard(spec),
        DatasetKind::UnitSquare => gen_unit_square(spec),
    }
}

fn noise_dist(noise: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, noise).map_err(|e| Error::param("dataset.noise", e.to_string()))
}

/// Offset subtracted from raw two-moons coordinates; centers the pair.
pub const TWO_MOONS_CENTER: [f64; 2] = [0.5, 0.25];

/// Noise-free two-moons point before centering. Class +1 lies on the upper
/// unit half circle, class -1 on the lower arc shifted to interleave.
pub fn two_moons_point(theta: f64, class: i8) -> [f64; 2] {
    if class > 0 {
        [theta.cos(), theta.sin()]
    } else {
        [1.0 - theta.cos(), 0.5 - theta.sin()]
    }
}

fn balanced_classes(rng: &mut ChaCha8Rng, n: usize) -> Vec<i8> {
    let mut classes: Vec<i8> = (0..n)
        .map(|i| if i < n.div_ceil(2) { 1 } else { -1 })
        .collect();
    classes.shuffle(rng);
    classes
}

pub fn gen_two_moons(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = noise_dist(spec.noise)?;
    let classes = balanced_classes(&mut rng, spec.size);
    Ok(classes
        .into_iter()
        .enumerate()
        .map(|(index, class)| {
            let theta = rng.random_range(0.0..=PI);
            let [a, b] = two_moons_point(theta, class);
            let x = Array1::from(vec![
                a - TWO_MOONS_CENTER[0] + noise.sample(&mut rng),
                b - TWO_MOONS_CENTER[1] + noise.sample(&mut rng),
            ]);
            Sample {
                x,
                z_true: class,
                z: 0,
                index,
            }
        })
        .collect())
}

/// Height of the unrolled sheet, before scaling.
pub const SWISS_HEIGHT: f64 = 21.0;
/// Raw Swiss-roll coordinates are divided by this (the outer radius).
pub const SWISS_SCALE: f64 = 4.5 * PI;

const PHI_START: f64 = 1.5 * PI;
const PHI_END: f64 = 4.5 * PI;

fn spiral_arc(phi: f64) -> f64 {
    0.5 * (phi * (1.0 + phi * phi).sqrt() + phi.asinh())
}

/// Roll angle for the intrinsic coordinate `s ∈ [0, 1]`.
pub fn roll_angle(s: f64) -> f64 {
    PHI_START * (1.0 + 2.0 * s)
}

/// Arc length along the roll from `s = 0`, normalized to `[0, 1]`.
pub fn normalized_arc_length(s: f64) -> f64 {
    let start = spiral_arc(PHI_START);
    ((spiral_arc(roll_angle(s)) - start) / (spiral_arc(PHI_END) - start)).clamp(0.0, 1.0)
}

/// +1 on squares with even index parity, -1 otherwise.
pub fn chessboard_label(s_arc: f64, v_arc: f64, granularity: f64) -> i8 {
    let parity = (s_arc / granularity).floor() as i64 + (v_arc / granularity).floor() as i64;
    if parity.rem_euclid(2) == 0 {
        1
    } else {
        -1
    }
}

/// Scaled 3-D embedding of intrinsic coordinates `(s, v)`.
pub fn swiss_roll_point(s: f64, v: f64) -> [f64; 3] {
    let phi = roll_angle(s);
    [
        phi * phi.cos() / SWISS_SCALE,
        (v - 0.5) * SWISS_HEIGHT / SWISS_SCALE,
        phi * phi.sin() / SWISS_SCALE,
    ]
}

pub fn gen_swiss_chessboard(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = noise_dist(spec.noise)?;
    Ok((0..spec.size)
        .map(|index| {
            let s: f64 = rng.random();
            let v: f64 = rng.random();
            let p = swiss_roll_point(s, v);
            let x = Array1::from_iter(p.iter().map(|c| c + noise.sample(&mut rng)));
            let z_true = chessboard_label(normalized_arc_length(s), v, spec.granularity);
            Sample {
                x,
                z_true,
                z: 0,
                index,
            }
        })
        .collect())
}

/// Labeled corner points of the square and their classes.
pub const SQUARE_CORNERS: [([f64; 2], i8); 2] = [([0.05, 0.05], 1), ([0.95, 0.95], -1)];

/// Class of a square point, split by the anti-diagonal `x + y = 1`.
pub fn square_class(x: f64, y: f64) -> i8 {
    if x + y < 1.0 {
        1
    } else {
        -1
    }
}

pub fn gen_unit_square(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut points: Vec<([f64; 2], i8, i8)> = (0..spec.size)
        .map(|_| {
            let p = [rng.random::<f64>(), rng.random::<f64>()];
            (p, square_class(p[0], p[1]), 0)
        })
        .collect();
    let mut inserts: Vec<(usize, usize)> =
        spec.corner_positions.iter().copied().zip(0..2).collect();
    inserts.sort_unstable();
    for (pos, corner) in inserts {
        let (p, class) = SQUARE_CORNERS[corner];
        points.insert(pos, (p, class, class));
    }
    Ok(points
        .into_iter()
        .enumerate()
        .map(|(index, (p, z_true, z))| Sample {
            x: Array1::from(p.to_vec()),
            z_true,
            z,
            index,
        })
        .collect())
}

/// Which stream positions reveal their label.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelPolicy {
    /// Exactly these positions.
    FixedPoints(Vec<usize>),
    /// `round(p·T)` positions drawn without replacement.
    RandomFraction(f64),
    /// `n` positions drawn without replacement.
    RandomCount(usize),
    /// One label per class: the first +1 sample at or after `from[0]` and
    /// the first -1 sample at or after `from[1]`.
    FirstOfEachClass([usize; 2]),
}

/// Reveal `z = z_true` at the selected positions and silence every other
/// sample. Never changes `z_true`.
pub fn mask_labels(samples: &[Sample], policy: &LabelPolicy, seed: u64) -> Result<Vec<Sample>> {
    let len = samples.len();
    let selected: Vec<usize> = match policy {
        LabelPolicy::FixedPoints(idx) => {
            if let Some(&bad) = idx.iter().find(|&&i| i >= len) {
                return Err(Error::IndexOutOfBounds { index: bad, len });
            }
            idx.clone()
        }
        LabelPolicy::RandomFraction(p) => {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::FractionOutOfRange(*p));
            }
            let count = (p * len as f64).round() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            index::sample(&mut rng, len, count.min(len)).into_vec()
        }
        LabelPolicy::RandomCount(n) => {
            if *n > len {
                return Err(Error::IndexOutOfBounds { index: *n, len });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            index::sample(&mut rng, len, *n).into_vec()
        }
        LabelPolicy::FirstOfEachClass(from) => {
            let mut picked = Vec::with_capacity(2);
            for (&start, class) in from.iter().zip([1i8, -1]) {
                if start >= len {
                    return Err(Error::IndexOutOfBounds { index: start, len });
                }
                let pos = samples[start..]
                    .iter()
                    .position(|s| s.z_true == class)
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "no sample of class {class} at or after position {start}"
                        ))
                    })?;
                picked.push(start + pos);
            }
            picked
        }
    };
    let mut out: Vec<Sample> = samples
        .iter()
        .map(|s| Sample { z: 0, ..s.clone() })
        .collect();
    for i in selected {
        out[i].z = out[i].z_true;
    }
    Ok(out)
}

/// Write `index,x0,...,x{n-1},z_true,z`.
pub fn write_csv<W: Write>(writer: W, samples: &[Sample]) -> Result<()> {
    let n = samples.first().map_or(0, |s| s.x.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["index".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend(["z_true".to_string(), "z".to_string()]);
    w.write_record(&header)?;
    for s in samples {
        if s.x.len() != n {
            return Err(Error::Shape(format!(
                "sample {} has dimension {}, expected {n}",
                s.index,
                s.x.len()
            )));
        }
        let mut rec = vec![s.index.to_string()];
        rec.extend(s.x.iter().map(|v| v.to_string()));
        rec.push(s.z_true.to_string());
        rec.push(s.z.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a stream written by [`write_csv`] or produced elsewhere in the same
/// layout.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<Sample>> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    let k = cols.len();
    let ok = k >= 3
        && cols[0] == "index"
        && cols[k - 2] == "z_true"
        && cols[k - 1] == "z"
        && cols[1..k - 2]
            .iter()
            .enumerate()
            .all(|(i, c)| *c == format!("x{i}"));
    if !ok {
        return Err(Error::Config(format!(
            "dataset CSV header must be index,x0..x(n-1),z_true,z; got {}",
            cols.join(",")
        )));
    }
    let bad = |line: usize, msg: String| Error::Config(format!("dataset CSV line {line}: {msg}"));
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let index: usize = rec[0]
            .parse()
            .map_err(|e| bad(line, format!("index: {e}")))?;
        let x = rec
            .iter()
            .skip(1)
            .take(k - 3)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| bad(line, format!("coordinate `{v}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let z_true: i8 = rec[k - 2]
            .parse()
            .map_err(|e| bad(line, format!("z_true: {e}")))?;
        let z: i8 = rec[k - 1]
            .parse()
            .map_err(|e| bad(line, format!("z: {e}")))?;
        check_label(z)?;
        if z_true != 1 && z_true != -1 {
            return Err(bad(line, format!("z_true must be -1 or +1, got {z_true}")));
        }
        if z != 0 && z != z_true {
            return Err(bad(
                line,
                format!("revealed label {z} disagrees with z_true {z_true}"),
            ));
        }
        out.push(Sample {
            x: Array1::from(x),
            z_true,
            z,
            index,
        });
    }
    Ok(out)
}
