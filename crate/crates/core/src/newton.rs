//! Damped Newton iteration on the mean squared error.
//!
//! Each iteration solves `J d = R` (Hessian times step equals gradient) and
//! moves to `x - alpha d`, halving `alpha` from 1 until the error decreases.
//! Steps longer than `max_step` in range-scaled units start the halving from
//! the capped length instead, falling back to the full step if that fails.
//!
//! With [`Curvature::Exact`], `J` is the full Hessian whenever it is
//! positive definite. Otherwise the step is the Gauss-Newton step, solved as
//! a linear least-squares problem by QR on the Jacobian rather than through
//! the normal equations, which square its conditioning. If the Jacobian is
//! rank deficient the normal equations get a growing diagonal shift, so
//! every step is a descent direction.

use serde::{Deserialize, Serialize};

use crate::derivatives::{build_cache, GradientVector, HessianMatrix, TermCache};
use crate::error::{ModelError, SolveError};
use crate::model::{
    eval_e, term_angle, ModelParams, ObjectiveValue, TermAngle, B_RANGE, C_RANGE, DIM, LOBES, RANGE_WIDTHS,
};
use crate::photometry::IntensitySamples;

/// Offset applied to a lobe sitting exactly on the horizon, degrees.
const HORIZON_NUDGE: f64 = 1e-9;

/// Solves the 9x9 system `j * d = r` by Gaussian elimination with partial
/// pivoting.
pub fn solve_linear_9(j: &HessianMatrix, r: &GradientVector) -> Result<[f64; DIM], SolveError> {
    let mut m = j.0;
    let mut rhs = r.0;
    if m.iter().flatten().chain(rhs.iter()).any(|v| !v.is_finite()) {
        return Err(SolveError::NonFinite);
    }
    let norm = j.max_abs();
    let threshold = 1e-14 * norm;

    for col in 0..DIM {
        let (pivot_row, pivot) = (col..DIM)
            .map(|row| (row, m[row][col].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot <= threshold || pivot == 0.0 {
            return Err(SolveError::Singular { column: col, pivot });
        }
        m.swap(col, pivot_row);
        rhs.swap(col, pivot_row);
        for row in col + 1..DIM {
            let factor = m[row][col] / m[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..DIM {
                m[row][k] -= factor * m[col][k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }

    let mut d = [0.0; DIM];
    for row in (0..DIM).rev() {
        let tail: f64 = (row + 1..DIM).map(|k| m[row][k] * d[k]).sum();
        d[row] = (rhs[row] - tail) / m[row][row];
    }
    Ok(d)
}

/// Cholesky test for positive definiteness.
pub fn is_positive_definite(m: &HessianMatrix) -> bool {
    let mut l = [[0.0; DIM]; DIM];
    for i in 0..DIM {
        for k in 0..=i {
            let dot: f64 = (0..k).map(|j| l[i][j] * l[k][j]).sum();
            if i == k {
                let v = m.0[i][i] - dot;
                if !(v > 0.0) {
                    return false;
                }
                l[i][i] = v.sqrt();
            } else {
                l[i][k] = (m.0[i][k] - dot) / l[k][k];
            }
        }
    }
    true
}

/// Gauss-Newton step from a Householder QR of the column-scaled Jacobian,
/// avoiding the squared conditioning of the normal equations.
fn least_squares_step(cache: &TermCache) -> Option<[f64; DIM]> {
    let n = cache.samples.len();
    let mut a: Vec<[f64; DIM]> = cache.samples.iter().map(|t| t.f).collect();
    let mut b: Vec<f64> = cache.samples.iter().map(|t| t.g).collect();
    let scale: [f64; DIM] = std::array::from_fn(|j| {
        let s = a.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt();
        if s > 0.0 {
            s
        } else {
            1.0
        }
    });
    for r in a.iter_mut() {
        for j in 0..DIM {
            r[j] /= scale[j];
        }
    }
    let mut diag = [0.0; DIM];
    for k in 0..DIM {
        let norm = (k..n).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        // Columns are unit length, so this is a relative rank test.
        if !(norm > 1e-13) {
            return None;
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        a[k][k] -= alpha;
        let vnorm2: f64 = (k..n).map(|i| a[i][k] * a[i][k]).sum();
        for j in k + 1..DIM {
            let dot: f64 = (k..n).map(|i| a[i][k] * a[i][j]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..n {
                a[i][j] -= f * a[i][k];
            }
        }
        let dot: f64 = (k..n).map(|i| a[i][k] * b[i]).sum();
        let f = 2.0 * dot / vnorm2;
        for i in k..n {
            b[i] -= f * a[i][k];
        }
        diag[k] = alpha;
    }
    let mut d = [0.0; DIM];
    for k in (0..DIM).rev() {
        let tail: f64 = (k + 1..DIM).map(|j| a[k][j] * d[j]).sum();
        d[k] = (b[k] - tail) / diag[k];
    }
    for j in 0..DIM {
        d[j] /= scale[j];
    }
    d.iter().all(|v| v.is_finite()).then_some(d)
}

/// Curvature matrix a step was solved against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepKind {
    Hessian,
    GaussNewton,
    ShiftedGaussNewton,
}

/// Which curvature the step is solved against first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Curvature {
    /// Full Hessian when positive definite, else Gauss-Newton.
    #[default]
    Exact,
    /// Gauss-Newton only.
    GaussNewton,
}

/// Solves for the step `d`, choosing the curvature matrix as described in
/// the module docs.
pub fn descent_step(cache: &TermCache, curvature: Curvature) -> Result<([f64; DIM], StepKind), SolveError> {
    let r = cache.gradient();
    let h = cache.hessian();
    if curvature == Curvature::Exact && is_positive_definite(&h) {
        if let Ok(d) = solve_linear_9(&h, &r) {
            return Ok((d, StepKind::Hessian));
        }
    }
    if let Some(d) = least_squares_step(cache) {
        return Ok((d, StepKind::GaussNewton));
    }
    let gn = cache.gauss_newton();
    let max_diag = (0..DIM).map(|j| gn.0[j][j]).fold(0.0, f64::max);
    if !(max_diag > 0.0) || !max_diag.is_finite() {
        return solve_linear_9(&h, &r).map(|d| (d, StepKind::Hessian));
    }
    let floor = 1e-12 * max_diag;
    let mut shift = 1e-10;
    let mut last_err = SolveError::NonFinite;
    while shift <= 1e6 {
        let mut m = gn;
        for j in 0..DIM {
            m.0[j][j] += shift * gn.0[j][j].max(floor);
        }
        if is_positive_definite(&m) {
            match solve_linear_9(&m, &r) {
                Ok(d) => return Ok((d, StepKind::ShiftedGaussNewton)),
                Err(e) => last_err = e,
            }
        }
        shift *= 100.0;
    }
    Err(last_err)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the range-scaled step norm.
    pub delta_tolerance: f64,
    pub max_damping_halvings: usize,
    pub curvature: Curvature,
    /// Longest scaled step tried; longer Newton steps are shortened along
    /// the same direction before backtracking starts.
    pub max_step: f64,
    /// Also converged once an accepted step lowers the error by less than
    /// this fraction of it. Zero disables the test.
    pub e_tolerance: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            delta_tolerance: 1e-10,
            max_damping_halvings: 20,
            curvature: Curvature::Exact,
            max_step: 0.5,
            e_tolerance: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    MaxIterations,
    SingularSystem,
    DampingExhausted,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max_iterations",
            Termination::SingularSystem => "singular_system",
            Termination::DampingExhausted => "damping_exhausted",
        }
    }
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    pub objective: ObjectiveValue,
    /// Accepted Newton steps.
    pub iterations: usize,
    pub termination: Termination,
    /// Range-scaled norm of each full Newton step computed, in order.
    pub step_norms: Vec<f64>,
    /// Accepted steps that did not use the plain Hessian.
    pub modified_steps: usize,
}

impl FitResult {
    pub fn rms(&self) -> f64 {
        self.objective.rms
    }
    pub fn rmsp(&self) -> f64 {
        self.objective.rmsp
    }
    pub fn e(&self) -> f64 {
        self.objective.e
    }
}

/// Norm of a step with each component divided by its canonical range width.
pub fn scaled_norm(d: &[f64; DIM]) -> f64 {
    d.iter()
        .zip(RANGE_WIDTHS)
        .map(|(v, w)| (v / w) * (v / w))
        .sum::<f64>()
        .sqrt()
}

/// Moves any offset that puts a lobe exactly on the horizon for some sample
/// a hair into the clamped side, where the error is differentiable.
fn off_horizon(p: &ModelParams, s: &IntensitySamples) -> ModelParams {
    let mut out = *p;
    for k in 0..LOBES {
        for &phi in s.phi() {
            let raw = phi - out.b[k];
            if raw == 90.0 {
                out.b[k] -= HORIZON_NUDGE;
                break;
            } else if raw == -90.0 {
                out.b[k] += HORIZON_NUDGE;
                break;
            }
        }
    }
    out
}

/// Resets every lobe that is clamped at all sample angles to zero
/// amplitude with in-range offset and exponent. Such lobes contribute
/// nothing, so the error is unchanged, but iterates can carry them to
/// arbitrarily large coordinates.
fn retire_dead_lobes(p: &ModelParams, s: &IntensitySamples) -> ModelParams {
    let mut out = *p;
    for k in 0..LOBES {
        if s.phi().iter().all(|&phi| term_angle(phi, p.b[k]) == TermAngle::Clamped) {
            out.a[k] = 0.0;
            out.b[k] = p.b[k].clamp(B_RANGE.0, B_RANGE.1);
            out.c[k] = p.c[k].clamp(C_RANGE.0, C_RANGE.1);
        }
    }
    out
}

/// Runs damped Newton from `p0` and returns the best point visited.
pub fn newton_optimize(p0: &ModelParams, s: &IntensitySamples, opts: &NewtonOptions) -> Result<FitResult, ModelError> {
    let e0 = eval_e(p0, s);
    let mut best = (*p0, e0);
    let mut x = off_horizon(p0, s);
    let mut e = if x == *p0 { e0 } else { eval_e(&x, s) };
    if e < best.1 {
        best = (x, e);
    }

    let mut iterations = 0;
    let mut step_norms = Vec::new();
    let mut modified_steps = 0;
    let mut termination = Termination::MaxIterations;

    while iterations < opts.max_iterations {
        let cache = build_cache(&x, s);
        let (d, kind) = match descent_step(&cache, opts.curvature) {
            Ok(step) => step,
            Err(_) => {
                termination = Termination::SingularSystem;
                break;
            }
        };
        let norm = scaled_norm(&d);
        step_norms.push(norm);
        if norm < opts.delta_tolerance {
            termination = Termination::Converged;
            break;
        }

        let xv = x.to_vector();
        let try_from = |mut alpha: f64| {
            for _ in 0..=opts.max_damping_halvings {
                let mut trial = [0.0; DIM];
                for j in 0..DIM {
                    trial[j] = xv[j] - alpha * d[j];
                }
                let candidate = off_horizon(&ModelParams::from_vector(&trial), s);
                let e_new = eval_e(&candidate, s);
                if e_new < e {
                    return Some((candidate, e_new));
                }
                alpha *= 0.5;
            }
            None
        };
        // A capped step can be dominated by a direction the error ignores;
        // the uncapped sequence is the fallback.
        let accepted = if norm > opts.max_step {
            try_from(opts.max_step / norm).or_else(|| try_from(1.0))
        } else {
            try_from(1.0)
        };
        let Some((next, e_next)) = accepted else {
            termination = Termination::DampingExhausted;
            break;
        };
        let stalled = e - e_next <= opts.e_tolerance * e;
        x = next;
        e = e_next;
        iterations += 1;
        if kind != StepKind::Hessian {
            modified_steps += 1;
        }
        if e < best.1 {
            best = (x, e);
        }
        if stalled {
            termination = Termination::Converged;
            break;
        }
    }

    Ok(FitResult {
        params: if best.0 == *p0 {
            best.0
        } else {
            retire_dead_lobes(&best.0, s)
        },
        objective: ObjectiveValue::from_e(best.1, s)?,
        iterations,
        termination,
        step_norms,
        modified_steps,
    })
}
