//! Analytic gradient and Hessian of the mean squared error
//! `E = (1/N) sum_i G_i^2`, where `G_i` is the model residual at sample `i`.
//!
//! Every per-sample factor is cached once per parameter point:
//!
//! * `F` factors are the first partials of the model value,
//!   `dG/da_k`, `dG/db_k`, `dG/dc_k`;
//! * `S` factors are the nonzero second partials of the model value, which
//!   couple only coefficients of the same lobe.
//!
//! The gradient is `(2/N) sum G F` and the Hessian is
//! `(2/N) sum (F_r F_s + G S_rs)`. Offsets `b` are in degrees, so every
//! derivative with respect to `b` carries a factor of `pi/180`.
//!
//! On the measure-zero set where a lobe angle is exactly 90 degrees the
//! cosine is zero and `ln(cos)` diverges; there every derivative factor of
//! that lobe except `dG/da` is defined as zero.

use crate::model::{cos_deg, term_angle, ModelParams, TermAngle, DIM, LOBES};
use crate::photometry::IntensitySamples;

const DEG: f64 = std::f64::consts::PI / 180.0;

/// Index of `a_k`, `b_k`, `c_k` in the flattened coefficient vector.
#[inline]
pub const fn a_idx(k: usize) -> usize {
    k
}
#[inline]
pub const fn b_idx(k: usize) -> usize {
    LOBES + k
}
#[inline]
pub const fn c_idx(k: usize) -> usize {
    2 * LOBES + k
}

/// Cached trig factors and second partials of one lobe at one sample.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LobeTerms {
    pub clamped: bool,
    pub cos: f64,
    /// `sin(phi - b)`, i.e. the sine of the lobe angle with the mirror sign.
    pub sin: f64,
    pub ln_cos: f64,
    /// `cos^c`, `cos^(c-1)`, `cos^(c-2)`.
    pub pow_c: f64,
    pub pow_c1: f64,
    pub pow_c2: f64,
    /// `d2G/(da db)`.
    pub s_ab: f64,
    /// `d2G/(da dc)`.
    pub s_ac: f64,
    /// `d2G/db2`.
    pub s_bb: f64,
    /// `d2G/(db dc)`.
    pub s_bc: f64,
    /// `d2G/dc2`.
    pub s_cc: f64,
}

/// Per-sample cache: residual, first partials, lobe factors.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SampleTerms {
    /// Model minus measurement.
    pub g: f64,
    /// First partials of the model value, ordered like the coefficient vector.
    pub f: [f64; DIM],
    pub lobes: [LobeTerms; LOBES],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermCache {
    pub samples: Vec<SampleTerms>,
}

/// Gradient of `E`, ordered `(a1, a2, a3, b1, b2, b3, c1, c2, c3)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientVector(pub [f64; DIM]);

/// Hessian of `E`, same ordering as [`GradientVector`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessianMatrix(pub [[f64; DIM]; DIM]);

impl GradientVector {
    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl HessianMatrix {
    pub fn identity() -> Self {
        let mut m = [[0.0; DIM]; DIM];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self(m)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self) -> bool {
        (0..DIM).all(|r| (0..r).all(|s| self.0[r][s] == self.0[s][r]))
    }
}

fn lobe_terms(phi: f64, i_max: f64, a: f64, b: f64, c: f64) -> LobeTerms {
    let TermAngle::Active { theta, sign } = term_angle(phi, b) else {
        return LobeTerms {
            clamped: true,
            ..LobeTerms::default()
        };
    };
    let cos = cos_deg(theta);
    let pow_c = cos.powf(c);
    if cos == 0.0 {
        // Only the value itself survives (0^0 = 1 for c = 0).
        return LobeTerms {
            pow_c,
            ..LobeTerms::default()
        };
    }
    let sin = sign * theta.to_radians().sin();
    let ln_cos = cos.ln();
    let pow_c1 = pow_c / cos;
    let pow_c2 = pow_c1 / cos;
    LobeTerms {
        clamped: false,
        cos,
        sin,
        ln_cos,
        pow_c,
        pow_c1,
        pow_c2,
        s_ab: i_max * c * pow_c1 * sin * DEG,
        s_ac: i_max * pow_c * ln_cos,
        s_bb: i_max * a * c * pow_c2 * (c * sin * sin - 1.0) * DEG * DEG,
        s_bc: i_max * a * pow_c1 * sin * (1.0 + c * ln_cos) * DEG,
        s_cc: i_max * a * pow_c * ln_cos * ln_cos,
    }
}

/// Computes residuals and every first and second partial factor.
pub fn build_cache(p: &ModelParams, s: &IntensitySamples) -> TermCache {
    let i_max = s.i_max();
    let samples = s
        .iter()
        .map(|(phi, measured)| {
            let mut terms = SampleTerms::default();
            let mut model = 0.0;
            for k in 0..LOBES {
                let (a, b, c) = p.lobe(k);
                let lobe = lobe_terms(phi, i_max, a, b, c);
                if !lobe.clamped {
                    model += a * lobe.pow_c;
                    terms.f[a_idx(k)] = i_max * lobe.pow_c;
                    terms.f[b_idx(k)] = i_max * a * c * lobe.pow_c1 * lobe.sin * DEG;
                    terms.f[c_idx(k)] = i_max * a * lobe.pow_c * lobe.ln_cos;
                }
                terms.lobes[k] = lobe;
            }
            terms.g = i_max * model - measured;
            terms
        })
        .collect();
    TermCache { samples }
}

impl TermCache {
    /// Mean squared residual.
    pub fn e(&self) -> f64 {
        self.samples.iter().map(|t| t.g * t.g).sum::<f64>() / self.samples.len() as f64
    }

    pub fn gradient(&self) -> GradientVector {
        let scale = 2.0 / self.samples.len() as f64;
        let mut r = [0.0; DIM];
        for t in &self.samples {
            for (rj, fj) in r.iter_mut().zip(&t.f) {
                *rj += t.g * fj;
            }
        }
        GradientVector(r.map(|v| v * scale))
    }

    /// The `F_r F_s` part of the Hessian alone, which is positive
    /// semidefinite everywhere.
    pub fn gauss_newton(&self) -> HessianMatrix {
        self.second_order(false)
    }

    pub fn hessian(&self) -> HessianMatrix {
        self.second_order(true)
    }

    fn second_order(&self, with_residual_terms: bool) -> HessianMatrix {
        let scale = 2.0 / self.samples.len() as f64;
        let mut h = [[0.0; DIM]; DIM];
        for t in &self.samples {
            for r in 0..DIM {
                for s in 0..=r {
                    h[r][s] += t.f[r] * t.f[s];
                }
            }
            if !with_residual_terms {
                continue;
            }
            for (k, lobe) in t.lobes.iter().enumerate() {
                if lobe.clamped {
                    continue;
                }
                // Lower triangle: b_k > a_k, c_k > b_k.
                h[b_idx(k)][a_idx(k)] += t.g * lobe.s_ab;
                h[c_idx(k)][a_idx(k)] += t.g * lobe.s_ac;
                h[b_idx(k)][b_idx(k)] += t.g * lobe.s_bb;
                h[c_idx(k)][b_idx(k)] += t.g * lobe.s_bc;
                h[c_idx(k)][c_idx(k)] += t.g * lobe.s_cc;
            }
        }
        for r in 0..DIM {
            for s in 0..=r {
                h[r][s] *= scale;
                h[s][r] = h[r][s];
            }
        }
        HessianMatrix(h)
    }
}

pub fn gradient(p: &ModelParams, s: &IntensitySamples) -> GradientVector {
    build_cache(p, s).gradient()
}

pub fn hessian(p: &ModelParams, s: &IntensitySamples) -> HessianMatrix {
    build_cache(p, s).hessian()
}
