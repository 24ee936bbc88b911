//! The three-lobe cosine-power intensity model and its error measures.
//!
//! Intensity at polar angle `phi` is `i_max * sum_k a_k * cos(phi - b_k)^c_k`.
//! Two physical restrictions apply to every lobe:
//!
//! * a lobe whose combined angle `phi - b_k` lies beyond 90 degrees emits
//!   nothing (the LED has no back-side emission);
//! * a negative combined angle is mirrored to its absolute value, which
//!   leaves the cosine unchanged but flips the sign of any sine factor that
//!   appears in a derivative.
//!
//! Angles are stored in degrees and converted to radians only at the trig
//! calls.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::photometry::IntensitySamples;

/// Number of cosine-power lobes in the model.
pub const LOBES: usize = 3;

/// Number of free coefficients (`a`, `b`, `c` per lobe).
pub const DIM: usize = 3 * LOBES;

/// Canonical search box for the amplitudes.
pub const A_RANGE: (f64, f64) = (0.0, 1.0);
/// Canonical search box for the angular offsets, in degrees.
pub const B_RANGE: (f64, f64) = (-90.0, 90.0);
/// Canonical search box for the exponents.
pub const C_RANGE: (f64, f64) = (0.0, 100.0);

/// Width of each coefficient's canonical range, in vector order
/// `(a1, a2, a3, b1, b2, b3, c1, c2, c3)`.
pub const RANGE_WIDTHS: [f64; DIM] = [1.0, 1.0, 1.0, 180.0, 180.0, 180.0, 100.0, 100.0, 100.0];

/// Model coefficients: amplitudes `a`, offsets `b` (degrees), exponents `c`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelParams {
    pub a: [f64; LOBES],
    pub b: [f64; LOBES],
    pub c: [f64; LOBES],
}

impl ModelParams {
    pub fn new(a: [f64; LOBES], b: [f64; LOBES], c: [f64; LOBES]) -> Self {
        Self { a, b, c }
    }

    /// Flattens to `(a1, a2, a3, b1, b2, b3, c1, c2, c3)`.
    pub fn to_vector(&self) -> [f64; DIM] {
        let mut v = [0.0; DIM];
        v[..3].copy_from_slice(&self.a);
        v[3..6].copy_from_slice(&self.b);
        v[6..].copy_from_slice(&self.c);
        v
    }

    pub fn from_vector(v: &[f64; DIM]) -> Self {
        Self {
            a: [v[0], v[1], v[2]],
            b: [v[3], v[4], v[5]],
            c: [v[6], v[7], v[8]],
        }
    }

    /// Lobe `k` as an `(a, b, c)` triple.
    pub fn lobe(&self, k: usize) -> (f64, f64, f64) {
        (self.a[k], self.b[k], self.c[k])
    }

    /// Reorders the lobes: lobe `k` of the result is lobe `order[k]` of `self`.
    pub fn permuted(&self, order: [usize; LOBES]) -> Self {
        Self {
            a: order.map(|k| self.a[k]),
            b: order.map(|k| self.b[k]),
            c: order.map(|k| self.c[k]),
        }
    }

    /// Projects every coefficient into its canonical range.
    pub fn clamped_to_ranges(&self) -> Self {
        Self {
            a: self.a.map(|v| v.clamp(A_RANGE.0, A_RANGE.1)),
            b: self.b.map(|v| v.clamp(B_RANGE.0, B_RANGE.1)),
            c: self.c.map(|v| v.clamp(C_RANGE.0, C_RANGE.1)),
        }
    }

    pub fn in_canonical_ranges(&self) -> bool {
        let inside = |v: f64, (lo, hi): (f64, f64)| (lo..=hi).contains(&v);
        self.a.iter().all(|&v| inside(v, A_RANGE))
            && self.b.iter().all(|&v| inside(v, B_RANGE))
            && self.c.iter().all(|&v| inside(v, C_RANGE))
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// Reduced angle of one lobe at one polar angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TermAngle {
    /// The combined angle points into the upper hemisphere; the lobe
    /// and all of its derivatives contribute zero.
    Clamped,
    /// `theta` in `[0, 90]` degrees; `sign` is `-1.0` when the combined
    /// angle was mirrored.
    Active { theta: f64, sign: f64 },
}

/// Reduces `phi - b_k` to a lobe angle, applying the clamp and mirror rules.
///
/// A combined angle below -90 degrees mirrors past the horizon and is
/// clamped as well. Inside the canonical ranges it cannot occur; only
/// Newton iterates that leave the search box reach it.
pub fn term_angle(phi: f64, b_k: f64) -> TermAngle {
    let raw = phi - b_k;
    if raw > 90.0 || raw < -90.0 || raw.is_nan() {
        TermAngle::Clamped
    } else if raw < 0.0 {
        TermAngle::Active {
            theta: -raw,
            sign: -1.0,
        }
    } else {
        TermAngle::Active { theta: raw, sign: 1.0 }
    }
}

/// Cosine of a lobe angle given in degrees, exact at 90.
#[inline]
pub(crate) fn cos_deg(theta: f64) -> f64 {
    if theta == 90.0 {
        0.0
    } else {
        theta.to_radians().cos()
    }
}

/// `cos(theta)^c` for an active lobe; `0^0` evaluates to 1.
#[inline]
fn lobe_shape(theta: f64, c: f64) -> f64 {
    cos_deg(theta).powf(c)
}

/// Model intensity at `phi` for the given coefficients and peak scale.
pub fn eval_intensity(p: &ModelParams, phi: f64, i_max: f64) -> f64 {
    let mut sum = 0.0;
    for k in 0..LOBES {
        if let TermAngle::Active { theta, .. } = term_angle(phi, p.b[k]) {
            sum += p.a[k] * lobe_shape(theta, p.c[k]);
        }
    }
    i_max * sum
}

/// Fit quality of one parameter set against one sample set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    /// Root mean square error, candela.
    pub rms: f64,
    /// RMS relative to the mean measured intensity, percent.
    pub rmsp: f64,
    /// Mean squared error, candela squared.
    pub e: f64,
}

impl ObjectiveValue {
    pub fn from_e(e: f64, samples: &IntensitySamples) -> Result<Self, ModelError> {
        let rms = e.max(0.0).sqrt();
        Ok(Self {
            rms,
            rmsp: rms_to_rmsp(rms, samples)?,
            e,
        })
    }
}

/// Mean squared residual between model and measurement.
pub fn eval_e(p: &ModelParams, s: &IntensitySamples) -> f64 {
    let i_max = s.i_max();
    let sum: f64 = s
        .iter()
        .map(|(phi, measured)| {
            let g = eval_intensity(p, phi, i_max) - measured;
            g * g
        })
        .sum();
    sum / s.len() as f64
}

/// Root mean square residual, candela.
pub fn rms(p: &ModelParams, s: &IntensitySamples) -> f64 {
    eval_e(p, s).sqrt()
}

/// Relative RMS error in percent of the mean measured intensity.
pub fn rmsp(p: &ModelParams, s: &IntensitySamples) -> Result<f64, ModelError> {
    rms_to_rmsp(rms(p, s), s)
}

pub fn rms_to_rmsp(rms: f64, s: &IntensitySamples) -> Result<f64, ModelError> {
    let total = s.total_candela();
    if total <= 0.0 {
        return Err(ModelError::DarkInstance);
    }
    Ok(100.0 * s.len() as f64 * rms / total)
}

pub fn objective(p: &ModelParams, s: &IntensitySamples) -> Result<ObjectiveValue, ModelError> {
    ObjectiveValue::from_e(eval_e(p, s), s)
}
