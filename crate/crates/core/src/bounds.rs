//! Closed-form comparison processes that sandwich each solution path.
//!
//! Dropping the mutualistic term, or replacing `b/(K + partner)` by its
//! largest value `b/K`, turns each equation into a stochastic logistic
//! equation with explicit solution
//!
//! ```text
//! upper(t) = e^{E(t)} / (1/x0 + ∫_0^t e^{E(s)} ε(s) ds)
//! lower(t) = e^{E(t)} / (1/x0 + ∫_0^t e^{E(s)} (ε(s) + b(s)/K(s)) ds)
//! E(t)     = ∫_0^t (r - β) ds + M(t) + Q(t)
//! ```
//!
//! and, driven by the same noise, `lower <= x <= upper` holds pathwise.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeffs::Species;
use crate::levy::log_jump_size;
use crate::sim::{ModelSpec, NoiseRecord, PathRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundsError {
    #[error("path has {path} grid points but bounds have {bounds}")]
    GridMismatch { path: usize, bounds: usize },
    #[error("path and bounds disagree on grid time {index}")]
    TimeMismatch { index: usize },
}

/// Upper and lower comparison processes per species on the path grid:
/// `upper[0]`, `lower[0]` bound `x`; `upper[1]`, `lower[1]` bound `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundTrajectories {
    pub times: Vec<f64>,
    pub upper: [Vec<f64>; 2],
    pub lower: [Vec<f64>; 2],
    /// Log-growth exponent `E_i(t)` shared by both bounds.
    pub exponent: [Vec<f64>; 2],
}

impl BoundTrajectories {
    pub fn upper(&self, species: Species) -> &[f64] {
        &self.upper[species.index()]
    }

    pub fn lower(&self, species: Species) -> &[f64] {
        &self.lower[species.index()]
    }
}

#[inline]
fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Comparison processes for `model` driven by the noise of `path`.
pub fn bound_processes(model: &ModelSpec, path: &PathRecord) -> BoundTrajectories {
    bounds_from_noise(model, &path.noise)
}

/// Comparison processes for `model` driven by `noise`.
///
/// Denominator integrals use the trapezoid rule on the jump-adapted grid.
/// At a jump time the integrand takes its pre-jump value for the cell that
/// ends there and its post-jump value for the cell that starts there. The
/// integrals are accumulated in log space so long horizons cannot overflow.
pub fn bounds_from_noise(model: &ModelSpec, noise: &NoiseRecord) -> BoundTrajectories {
    let times = noise.times();
    let n = times.len();
    let grid = noise.grid();
    let empty = || [Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut out = BoundTrajectories {
        times: times.to_vec(),
        upper: empty(),
        lower: empty(),
        exponent: empty(),
    };
    for sp in Species::BOTH {
        let s = sp.index();
        let x0 = model.initial(sp);
        let base = -x0.ln();
        let (mut crowding, mut extra) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut e = 0.0;
        out.exponent[s].push(0.0);
        out.upper[s].push(x0);
        out.lower[s].push(x0);
        let dw = noise.dw(sp);
        let mut left = model.rates(sp, times[0]);
        for i in 0..n - 1 {
            let h = times[i + 1] - times[i];
            let right = model.rates(sp, times[i + 1]);
            let e_pre = e + left.log_growth() * h + left.volatility * dw[i];
            let log_half_h = (0.5 * h).ln();
            crowding = log_add_exp(
                crowding,
                log_half_h + log_add_exp(e + left.crowding.ln(), e_pre + right.crowding.ln()),
            );
            let mutual = |r: &crate::sim::Rates| (r.interaction / r.saturation).ln();
            extra = log_add_exp(
                extra,
                log_half_h + log_add_exp(e + mutual(&left), e_pre + mutual(&right)),
            );
            e = e_pre;
            if let Some(k) = grid.jump_at(i + 1) {
                e += log_jump_size(model.marks(), sp, times[i + 1], k);
            }
            let upper_den = log_add_exp(base, crowding);
            // lower denominator = upper denominator + extra term, so lower <= upper exactly
            let lower_den = log_add_exp(upper_den, extra);
            out.exponent[s].push(e);
            out.upper[s].push((e - upper_den).exp());
            out.lower[s].push((e - lower_den).exp());
            left = right;
        }
    }
    out
}

/// Violations of `lower <= state <= upper` over the grid points of one or
/// more paths.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SandwichReport {
    pub total_points: usize,
    /// Points with `state < lower (1 - rel_tol)`, per species.
    pub below_lower: [usize; 2],
    /// Points with `state > upper (1 + rel_tol)`, per species.
    pub above_upper: [usize; 2],
    /// Points where any of the four inequalities fails.
    pub violating_points: usize,
    /// Points where `lower > upper`; must always be zero.
    pub ordering_violations: usize,
    /// Largest relative excursion outside the sandwich (negative when every
    /// point is strictly inside).
    pub worst_relative_violation: f64,
}

impl SandwichReport {
    pub fn violation_fraction(&self) -> f64 {
        if self.total_points == 0 {
            0.0
        } else {
            self.violating_points as f64 / self.total_points as f64
        }
    }

    pub fn merge(&mut self, other: &SandwichReport) {
        if self.total_points == 0 {
            *self = *other;
            return;
        }
        if other.total_points == 0 {
            return;
        }
        self.total_points += other.total_points;
        for s in 0..2 {
            self.below_lower[s] += other.below_lower[s];
            self.above_upper[s] += other.above_upper[s];
        }
        self.violating_points += other.violating_points;
        self.ordering_violations += other.ordering_violations;
        self.worst_relative_violation = self.worst_relative_violation.max(other.worst_relative_violation);
    }
}

/// Counts grid points where the path leaves its comparison bounds by more
/// than `rel_tol` (relative), and checks `lower <= upper` with no tolerance.
pub fn verify_sandwich(
    path: &PathRecord,
    bounds: &BoundTrajectories,
    rel_tol: f64,
) -> Result<SandwichReport, BoundsError> {
    let times = path.times();
    if times.len() != bounds.times.len() {
        return Err(BoundsError::GridMismatch {
            path: times.len(),
            bounds: bounds.times.len(),
        });
    }
    if let Some(index) = times.iter().zip(&bounds.times).position(|(a, b)| a != b) {
        return Err(BoundsError::TimeMismatch { index });
    }
    let mut report = SandwichReport {
        total_points: times.len(),
        worst_relative_violation: f64::NEG_INFINITY,
        ..Default::default()
    };
    for i in 0..times.len() {
        let mut violated = false;
        for s in 0..2 {
            let (v, lo, hi) = (path.state[s][i], bounds.lower[s][i], bounds.upper[s][i]);
            if lo > hi {
                report.ordering_violations += 1;
            }
            if v < lo * (1.0 - rel_tol) {
                report.below_lower[s] += 1;
                violated = true;
            }
            if v > hi * (1.0 + rel_tol) {
                report.above_upper[s] += 1;
                violated = true;
            }
            let excursion = ((lo - v) / lo).max((v - hi) / hi);
            report.worst_relative_violation = report.worst_relative_violation.max(excursion);
        }
        if violated {
            report.violating_points += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::MarkTable;
    use crate::levy::PathStreams;
    use crate::sim::fixtures::*;
    use crate::sim::{simulate_path, simulate_path_with_noise, SpeciesParams};

    #[test]
    fn bounds_start_at_initial_state() {
        let m = persistent();
        let p = simulate_path(&m, 1e-3, 2.0, &PathStreams::new(1, 1)).unwrap();
        let b = bound_processes(&m, &p);
        for s in 0..2 {
            assert_eq!(b.upper[s][0], 1.0);
            assert_eq!(b.lower[s][0], 1.0);
            assert!(b.upper[s].iter().zip(&b.lower[s]).all(|(u, l)| l <= u && *l > 0.0));
        }
    }

    #[test]
    fn logistic_upper_bound_is_constant_at_carrying_capacity() {
        // r = eps = 1, x0 = 1: upper(t) = e^t / (1 + (e^t - 1)) = 1
        let m = symmetric(1.0, 1.0, 1.0, 1.0, 0.0, MarkTable::empty(), 1.0);
        let p = simulate_path(&m, 1e-3, 10.0, &PathStreams::new(0, 0)).unwrap();
        let b = bound_processes(&m, &p);
        let worst = b.upper[0].iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn logistic_bounds_match_closed_form() {
        // oracle: x(t) = x0 e^{rt} / (1 + x0 c (e^{rt} - 1) / r) with c = eps or eps + b/K
        let m = symmetric(0.7, 0.6, 2.0, 0.4, 0.0, MarkTable::empty(), 0.1);
        let p = simulate_path(&m, 1e-3, 15.0, &PathStreams::new(0, 0)).unwrap();
        let b = bound_processes(&m, &p);
        let logistic = |c: f64, t: f64| {
            let g = (0.7 * t).exp();
            0.1 * g / (1.0 + 0.1 * c * (g - 1.0) / 0.7)
        };
        for (i, &t) in b.times.iter().enumerate() {
            assert!((b.upper[0][i] - logistic(0.4, t)).abs() < 1e-6);
            assert!((b.lower[0][i] - logistic(0.4 + 0.3, t)).abs() < 1e-6);
        }
    }

    #[test]
    fn decoupled_model_sits_on_its_bounds() {
        let p0 = SpeciesParams::constant(0.5, 0.0, 2.0, 0.5, 0.2).unwrap();
        let m = crate::sim::ModelSpec::new(p0.clone(), p0, one_mark(1.0, 0.1), 0.3, 2.0).unwrap();
        let dt = 1e-3;
        let p = simulate_path(&m, dt, 20.0, &PathStreams::new(5, 0)).unwrap();
        let b = bound_processes(&m, &p);
        assert_eq!(b.upper, b.lower);
        let worst = p
            .x()
            .iter()
            .zip(&b.upper[0])
            .map(|(x, u)| (x / u - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(worst < 10.0 * dt, "{worst}");
        let report = verify_sandwich(&p, &b, 10.0 * dt).unwrap();
        assert_eq!(report.violating_points, 0);
    }

    #[test]
    fn infinite_tolerance_never_flags() {
        let m = persistent();
        let p = simulate_path(&m, 1e-2, 5.0, &PathStreams::new(2, 0)).unwrap();
        let b = bound_processes(&m, &p);
        let r = verify_sandwich(&p, &b, f64::INFINITY).unwrap();
        assert_eq!(r.violating_points, 0);
        assert_eq!(r.total_points, p.times().len());
    }

    #[test]
    fn persistent_paths_stay_inside_the_sandwich() {
        let m = persistent();
        let dt = 1e-3;
        let mut total = SandwichReport::default();
        for path in 0..10 {
            let p = simulate_path(&m, dt, 20.0, &PathStreams::new(17, path)).unwrap();
            let b = bound_processes(&m, &p);
            total.merge(&verify_sandwich(&p, &b, 10.0 * dt).unwrap());
        }
        assert_eq!(total.ordering_violations, 0);
        assert!(total.violation_fraction() <= 1e-3, "{total:?}");
    }

    #[test]
    fn larger_crowding_lowers_the_upper_bound() {
        let low = persistent();
        let mut px = SpeciesParams::constant(0.5, 1.0, 2.0, 0.8, 0.2).unwrap();
        px.crowding = crate::coeffs::Coefficient::sinusoid(0.9, 0.1, 3.0, 0.0).unwrap();
        let py = low.params(Species::Y).clone();
        let high = crate::sim::ModelSpec::new(px, py, low.marks().clone(), 1.0, 1.0).unwrap();
        let p = simulate_path(&low, 1e-3, 10.0, &PathStreams::new(3, 0)).unwrap();
        let a = bounds_from_noise(&low, &p.noise);
        let b = bounds_from_noise(&high, &p.noise);
        assert!(a.upper[0]
            .iter()
            .zip(&b.upper[0])
            .all(|(lo_eps, hi_eps)| hi_eps <= lo_eps));
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let m = persistent();
        let p = simulate_path(&m, 1e-2, 2.0, &PathStreams::new(0, 0)).unwrap();
        let q = simulate_path(&m, 2e-2, 2.0, &PathStreams::new(0, 0)).unwrap();
        let b = bound_processes(&m, &q);
        assert!(matches!(
            verify_sandwich(&p, &b, 0.01),
            Err(BoundsError::GridMismatch { .. })
        ));
        let same_len = simulate_path_with_noise(&m, q.noise.clone()).unwrap();
        assert!(verify_sandwich(&same_len, &b, 0.01).is_ok());
    }
}
