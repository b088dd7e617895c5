//! Input encoding in front of the tiling layer.
//!
//! The tiling layer compares inputs through inner products against the
//! threshold `α`. Raw 2-D or 3-D coordinates make that comparison depend on
//! distance from the origin, so inputs are first lifted onto a sphere:
//! `x ↦ gain · (x - c, lift) / ‖(x - c, lift)‖`. Nearby points then have inner
//! products close to `gain²`, falling off smoothly with distance.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SphereLift {
    /// Constant appended as an extra coordinate before normalizing.
    pub lift: f64,
    /// Radius of the sphere the encoded inputs live on.
    pub gain: f64,
    /// Subtracted from raw inputs first; `None` leaves them in place.
    pub center: Option<Vec<f64>>,
}

impl Default for SphereLift {
    fn default() -> Self {
        SphereLift {
            lift: 2.0,
            gain: 30.0,
            center: None,
        }
    }
}

impl SphereLift {
    pub fn validate(&self) -> Result<()> {
        if !(self.lift > 0.0 && self.lift.is_finite()) {
            return Err(Error::param(
                "input.lift",
                format!("must be finite and > 0, got {}", self.lift),
            ));
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(Error::param(
                "input.gain",
                format!("must be finite and > 0, got {}", self.gain),
            ));
        }
        if let Some(c) = &self.center {
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::param("input.center", "entries must be finite"));
            }
        }
        Ok(())
    }

    /// Dimension of the encoded vector for a raw input of dimension `d`.
    pub fn output_dim(&self, d: usize) -> usize {
        d + 1
    }

    /// Panics if a center is set and its length differs from `x`.
    pub fn encode(&self, x: ArrayView1<f64>) -> Array1<f64> {
        if let Some(c) = &self.center {
            assert_eq!(
                c.len(),
                x.len(),
                "center dimension must match input dimension"
            );
        }
        let mut out = Array1::zeros(x.len() + 1);
        out.slice_mut(ndarray::s![..x.len()]).assign(&x);
        if let Some(c) = &self.center {
            for (o, c) in out.iter_mut().zip(c) {
                *o -= c;
            }
        }
        out[x.len()] = self.lift;
        let norm = out.dot(&out).sqrt();
        out *= self.gain / norm;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn encoded_inputs_lie_on_the_sphere() {
        let e = SphereLift {
            lift: 2.0,
            gain: 3.0,
            center: None,
        };
        for x in [array![0.0, 0.0], array![1.0, -0.5], array![-4.0, 9.0]] {
            let z = e.encode(x.view());
            assert_eq!(z.len(), 3);
            assert!((z.dot(&z).sqrt() - 3.0).abs() < 1e-12);
        }
        assert_eq!(e.encode(array![0.0, 0.0].view()), array![0.0, 0.0, 3.0]);
    }

    #[test]
    fn center_is_subtracted() {
        let e = SphereLift {
            center: Some(vec![0.5, 0.5]),
            ..SphereLift::default()
        };
        let z = e.encode(array![0.5, 0.5].view());
        assert_eq!(z, array![0.0, 0.0, 30.0]);
    }

    #[test]
    fn similarity_decreases_with_distance() {
        let e = SphereLift::default();
        let o = e.encode(array![0.1, 0.2].view());
        let near = e.encode(array![0.15, 0.2].view());
        let far = e.encode(array![0.6, 0.2].view());
        assert!(o.dot(&near) > o.dot(&far));
    }
}
