//! Time-varying model coefficients, their inf/sup envelopes, and the
//! jump-adjusted noise penalty `beta`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of grid intervals used when an envelope has to be found by scanning.
pub const ENVELOPE_GRID: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{what} must be finite")]
    NonFinite { what: &'static str },
    #[error("sinusoid amplitude must be nonnegative, got {0}")]
    NegativeAmplitude(f64),
    #[error("table needs at least one knot")]
    EmptyTable,
    #[error("table has {knots} knots but {values} values")]
    TableLength { knots: usize, values: usize },
    #[error("table knots must be strictly increasing")]
    UnsortedKnots,
    #[error("{name} must be positive for all t >= 0 (infimum is {inf})")]
    NotPositive { name: String, inf: f64 },
    #[error("{name} must be nonnegative for all t >= 0 (infimum is {inf})")]
    Negative { name: String, inf: f64 },
    #[error("jump factor must exceed -1 ({name} has infimum {inf})")]
    JumpFactor { name: String, inf: f64 },
    #[error("mark weight must be positive and finite, got {0}")]
    MarkWeight(f64),
    #[error("initial {name} must be positive and finite, got {value}")]
    InitialState { name: &'static str, value: f64 },
}

/// One of the two interacting species.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Species {
    X,
    Y,
}

impl Species {
    pub const BOTH: [Species; 2] = [Species::X, Species::Y];

    pub fn index(self) -> usize {
        match self {
            Species::X => 0,
            Species::Y => 1,
        }
    }

    pub fn other(self) -> Species {
        match self {
            Species::X => Species::Y,
            Species::Y => Species::X,
        }
    }

    /// 1-based label used in file formats and reports.
    pub fn number(self) -> usize {
        self.index() + 1
    }
}

/// Closed interval `[inf, sup]` containing every value a function takes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub inf: f64,
    pub sup: f64,
}

impl Envelope {
    pub fn point(v: f64) -> Self {
        Envelope { inf: v, sup: v }
    }

    fn include(&mut self, v: f64) {
        self.inf = self.inf.min(v);
        self.sup = self.sup.max(v);
    }

    fn empty() -> Self {
        Envelope {
            inf: f64::INFINITY,
            sup: f64::NEG_INFINITY,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.inf <= v && v <= self.sup
    }
}

/// Functional form of a [`Coefficient`].
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Constant(f64),
    /// `mean + amplitude * sin(angular_frequency * t + phase)`.
    Sinusoid {
        mean: f64,
        amplitude: f64,
        angular_frequency: f64,
        phase: f64,
    },
    /// Piecewise-linear through `(knots[i], values[i])`, held constant
    /// outside the knot range.
    Table {
        knots: Vec<f64>,
        values: Vec<f64>,
    },
}

/// A bounded continuous function of time.
///
/// Construction only checks the structure (finite numbers, sorted knots).
/// Sign requirements depend on the role the coefficient plays and are
/// checked with [`Coefficient::require`].
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficient(Shape);

/// Lower-bound requirement attached to a coefficient's role in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Floor {
    Positive,
    NonNegative,
    /// Jump factors: `1 + gamma > 0`.
    AboveMinusOne,
}

fn finite(v: f64, what: &'static str) -> Result<f64, ModelError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ModelError::NonFinite { what })
    }
}

impl Coefficient {
    pub fn constant(value: f64) -> Result<Self, ModelError> {
        Ok(Coefficient(Shape::Constant(finite(value, "constant value")?)))
    }

    pub fn sinusoid(mean: f64, amplitude: f64, angular_frequency: f64, phase: f64) -> Result<Self, ModelError> {
        finite(mean, "sinusoid mean")?;
        finite(amplitude, "sinusoid amplitude")?;
        finite(angular_frequency, "sinusoid angular frequency")?;
        finite(phase, "sinusoid phase")?;
        if amplitude < 0.0 {
            return Err(ModelError::NegativeAmplitude(amplitude));
        }
        Ok(Coefficient(Shape::Sinusoid {
            mean,
            amplitude,
            angular_frequency,
            phase,
        }))
    }

    pub fn table(knots: Vec<f64>, values: Vec<f64>) -> Result<Self, ModelError> {
        if knots.is_empty() {
            return Err(ModelError::EmptyTable);
        }
        if knots.len() != values.len() {
            return Err(ModelError::TableLength {
                knots: knots.len(),
                values: values.len(),
            });
        }
        for &k in &knots {
            finite(k, "table knot")?;
        }
        for &v in &values {
            finite(v, "table value")?;
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::UnsortedKnots);
        }
        Ok(Coefficient(Shape::Table { knots, values }))
    }

    pub fn shape(&self) -> &Shape {
        &self.0
    }

    pub fn is_constant(&self) -> bool {
        match &self.0 {
            Shape::Constant(_) => true,
            Shape::Sinusoid {
                amplitude,
                angular_frequency,
                ..
            } => *amplitude == 0.0 || *angular_frequency == 0.0,
            Shape::Table { values, .. } => values.windows(2).all(|w| w[0] == w[1]),
        }
    }

    /// Checks the role-dependent lower bound over all `t >= 0`.
    pub fn require(&self, floor: Floor, name: &str) -> Result<(), ModelError> {
        let inf = self.envelope(f64::INFINITY).inf;
        let ok = match floor {
            Floor::Positive => inf > 0.0,
            Floor::NonNegative => inf >= 0.0,
            Floor::AboveMinusOne => inf > -1.0,
        };
        if ok {
            return Ok(());
        }
        let name = name.to_string();
        Err(match floor {
            Floor::Positive => ModelError::NotPositive { name, inf },
            Floor::NonNegative => ModelError::Negative { name, inf },
            Floor::AboveMinusOne => ModelError::JumpFactor { name, inf },
        })
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        match &self.0 {
            Shape::Constant(v) => *v,
            Shape::Sinusoid {
                mean,
                amplitude,
                angular_frequency,
                phase,
            } => mean + amplitude * (angular_frequency * t + phase).sin(),
            Shape::Table { knots, values } => {
                let i = knots.partition_point(|&k| k <= t);
                if i == 0 {
                    values[0]
                } else if i == knots.len() {
                    values[i - 1]
                } else {
                    let (k0, k1) = (knots[i - 1], knots[i]);
                    let w = (t - k0) / (k1 - k0);
                    values[i - 1] + w * (values[i] - values[i - 1])
                }
            }
        }
    }

    /// Exact inf/sup over `[0, horizon]`; pass `f64::INFINITY` for `[0, ∞)`.
    pub fn envelope(&self, horizon: f64) -> Envelope {
        match &self.0 {
            Shape::Constant(v) => Envelope::point(*v),
            Shape::Sinusoid {
                mean,
                amplitude,
                angular_frequency,
                ..
            } => {
                if self.is_constant() {
                    return Envelope::point(self.eval(0.0));
                }
                if horizon * angular_frequency.abs() >= TAU {
                    return Envelope {
                        inf: mean - amplitude,
                        sup: mean + amplitude,
                    };
                }
                let mut env = Envelope::empty();
                env.include(self.eval(0.0));
                env.include(self.eval(horizon));
                for t in self.breakpoints(horizon) {
                    env.include(self.eval(t));
                }
                env
            }
            Shape::Table { knots, values } => {
                let mut env = Envelope::empty();
                env.include(self.eval(0.0));
                if horizon.is_finite() {
                    env.include(self.eval(horizon));
                }
                for (&k, &v) in knots.iter().zip(values) {
                    if k >= 0.0 && k <= horizon {
                        env.include(v);
                    }
                }
                env
            }
        }
    }

    /// Times in `[0, horizon]` where the coefficient can attain an extreme
    /// value: table knots and sinusoid crest/trough times.
    pub fn breakpoints(&self, horizon: f64) -> Vec<f64> {
        match &self.0 {
            Shape::Constant(_) => Vec::new(),
            Shape::Table { knots, .. } => knots.iter().copied().filter(|&k| k >= 0.0 && k <= horizon).collect(),
            Shape::Sinusoid {
                angular_frequency,
                phase,
                ..
            } => {
                let w = *angular_frequency;
                if w == 0.0 || !horizon.is_finite() {
                    return Vec::new();
                }
                // crests and troughs sit at w t + phase = pi/2 + k pi
                let (a, b) = {
                    let end = w * horizon + phase;
                    (phase.min(end), phase.max(end))
                };
                let k_lo = ((a - FRAC_PI_2) / PI).ceil() as i64;
                let k_hi = ((b - FRAC_PI_2) / PI).floor() as i64;
                (k_lo..=k_hi)
                    .map(|k| (FRAC_PI_2 + k as f64 * PI - phase) / w)
                    .filter(|&t| (0.0..=horizon).contains(&t))
                    .collect()
            }
        }
    }

    /// Length of time after which the coefficient has shown its full range.
    pub fn characteristic_span(&self) -> f64 {
        match &self.0 {
            Shape::Constant(_) => 0.0,
            Shape::Sinusoid { angular_frequency, .. } => {
                if self.is_constant() {
                    0.0
                } else {
                    TAU / angular_frequency.abs()
                }
            }
            Shape::Table { knots, .. } => knots.last().copied().unwrap_or(0.0).max(0.0),
        }
    }
}

/// One atom of the (finite) jump measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Mark {
    weight: f64,
    gamma: [Coefficient; 2],
}

impl Mark {
    pub fn new(weight: f64, gamma_x: Coefficient, gamma_y: Coefficient) -> Result<Self, ModelError> {
        if !(weight.is_finite() && weight > 0.0) {
            return Err(ModelError::MarkWeight(weight));
        }
        gamma_x.require(Floor::AboveMinusOne, "gamma1")?;
        gamma_y.require(Floor::AboveMinusOne, "gamma2")?;
        Ok(Mark {
            weight,
            gamma: [gamma_x, gamma_y],
        })
    }

    /// Intensity of this mark, `mu({k})`.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Relative jump size `gamma_i(t, k)` applied to `species`.
    pub fn gamma(&self, species: Species) -> &Coefficient {
        &self.gamma[species.index()]
    }
}

/// Finite jump measure: a list of atoms with positive weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MarkTable {
    marks: Vec<Mark>,
    total_mass: f64,
}

impl MarkTable {
    pub fn new(marks: Vec<Mark>) -> Self {
        let total_mass = marks.iter().map(|m| m.weight).sum();
        MarkTable { marks, total_mass }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn marks(&self) -> &[Mark] {
        &self.marks
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    /// `mu(Y)`: the jump arrival rate.
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn gammas(&self, species: Species) -> impl Iterator<Item = &Coefficient> {
        self.marks.iter().map(move |m| m.gamma(species))
    }

    /// Upper bound for `Σ_k mu_k ln²(1 + gamma_k(t))` over `[0, horizon]`:
    /// the rate of the quadratic variation of the compensated log-jump martingale.
    pub fn log_jump_variance_rate(&self, species: Species, horizon: f64) -> f64 {
        self.marks
            .iter()
            .map(|m| {
                let env = m.gamma(species).envelope(horizon);
                let lo = env.inf.ln_1p();
                let hi = env.sup.ln_1p();
                m.weight * (lo * lo).max(hi * hi)
            })
            .sum()
    }

    /// Bound on `Σ_k mu_k max(|ln(1+gamma)|, ln²(1+gamma))`; finite for every
    /// valid table since each gamma stays bounded away from -1.
    pub fn log_jump_bound(&self, species: Species) -> f64 {
        self.marks
            .iter()
            .map(|m| {
                let env = m.gamma(species).envelope(f64::INFINITY);
                [env.inf.ln_1p(), env.sup.ln_1p()]
                    .into_iter()
                    .map(|l| m.weight * l.abs().max(l * l))
                    .fold(0.0, f64::max)
            })
            .sum()
    }
}

/// `gamma - ln(1 + gamma)`, nonnegative for `gamma > -1`.
#[inline]
pub fn jump_penalty(gamma: f64) -> f64 {
    gamma - gamma.ln_1p()
}

/// Effective noise penalty on the growth rate of `species` at time `t`:
/// `0.5 alpha(t)² + Σ_k mu_k [gamma_k(t) - ln(1 + gamma_k(t))]`.
pub fn beta(marks: &MarkTable, alpha: &Coefficient, species: Species, t: f64) -> f64 {
    let a = alpha.eval(t);
    let jumps: f64 = marks
        .marks()
        .iter()
        .map(|m| m.weight() * jump_penalty(m.gamma(species).eval(t)))
        .sum();
    0.5 * a * a + jumps
}

/// Sample times for scanning a function built from `coeffs` over
/// `[0, horizon]`: a uniform grid plus every coefficient breakpoint.
/// Returns `[0]` when all coefficients are constant. An infinite horizon is
/// replaced by the longest characteristic span among the coefficients.
pub fn scan_times<'a>(coeffs: impl IntoIterator<Item = &'a Coefficient>, horizon: f64) -> Vec<f64> {
    let coeffs: Vec<&Coefficient> = coeffs.into_iter().collect();
    if coeffs.iter().all(|c| c.is_constant()) {
        return vec![0.0];
    }
    let span = if horizon.is_finite() {
        horizon
    } else {
        coeffs.iter().map(|c| c.characteristic_span()).fold(0.0, f64::max)
    };
    let mut times: Vec<f64> = (0..=ENVELOPE_GRID)
        .map(|i| span * i as f64 / ENVELOPE_GRID as f64)
        .collect();
    for c in &coeffs {
        times.extend(c.breakpoints(span));
    }
    times
}

/// Envelope of `beta` over `[0, horizon]`. Exact when every ingredient is
/// constant; otherwise a scan over [`ENVELOPE_GRID`] intervals plus all
/// coefficient breakpoints, which can underestimate the sup by
/// `O(period / ENVELOPE_GRID)`.
pub fn beta_envelope(marks: &MarkTable, alpha: &Coefficient, species: Species, horizon: f64) -> Envelope {
    let coeffs = std::iter::once(alpha).chain(marks.gammas(species));
    let mut env = Envelope::empty();
    for t in scan_times(coeffs, horizon) {
        env.include(beta(marks, alpha, species, t));
    }
    env
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::assert_close;
    use proptest::prelude::*;

    mod approx_eq {
        macro_rules! assert_close {
            ($a:expr, $b:expr, $tol:expr) => {{
                let (a, b): (f64, f64) = ($a, $b);
                assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
            }};
        }
        pub(crate) use assert_close;
    }

    fn c(v: f64) -> Coefficient {
        Coefficient::constant(v).unwrap()
    }

    fn one_mark(weight: f64, gamma: f64) -> MarkTable {
        MarkTable::new(vec![Mark::new(weight, c(gamma), c(gamma)).unwrap()])
    }

    #[test]
    fn eval_examples() {
        assert_eq!(c(0.5).eval(7.3), 0.5);
        let s = Coefficient::sinusoid(1.0, 0.3, TAU, 0.0).unwrap();
        assert_close!(s.eval(0.25), 1.3, 1e-15);
        let t = Coefficient::table(vec![0.0, 1.0], vec![0.2, 0.4]).unwrap();
        assert_close!(t.eval(0.5), 0.3, 1e-15);
        assert_eq!(t.eval(5.0), 0.4);
    }

    #[test]
    fn envelope_examples() {
        assert_eq!(c(0.5).envelope(10.0), Envelope::point(0.5));
        let s = Coefficient::sinusoid(1.0, 0.3, TAU, 0.0).unwrap();
        let e = s.envelope(1.0);
        assert_close!(e.inf, 0.7, 1e-15);
        assert_close!(e.sup, 1.3, 1e-15);
        let t = Coefficient::table(vec![0.0, 1.0, 2.0], vec![0.2, 0.4, 0.3]).unwrap();
        assert_eq!(t.envelope(5.0), Envelope { inf: 0.2, sup: 0.4 });
    }

    #[test]
    fn sinusoid_envelope_on_partial_period() {
        let s = Coefficient::sinusoid(1.0, 0.3, TAU, 0.0).unwrap();
        // [0, 0.1]: increasing from 1.0 to 1 + 0.3 sin(0.2 pi)
        let e = s.envelope(0.1);
        assert_close!(e.inf, 1.0, 1e-15);
        assert_close!(e.sup, 1.0 + 0.3 * (0.2 * PI).sin(), 1e-15);
        // [0, 0.5] passes the crest at 0.25
        let e = s.envelope(0.5);
        assert_close!(e.sup, 1.3, 1e-15);
        assert_close!(e.inf, 1.0, 1e-12);
        // negative frequency is the mirror image
        let m = Coefficient::sinusoid(1.0, 0.3, -TAU, 0.0).unwrap();
        assert_close!(m.envelope(0.5).inf, 0.7, 1e-15);
    }

    #[test]
    fn table_envelope_respects_horizon() {
        let t = Coefficient::table(vec![0.0, 1.0, 2.0], vec![0.2, 0.4, 0.3]).unwrap();
        let e = t.envelope(0.5);
        assert_close!(e.inf, 0.2, 1e-15);
        assert_close!(e.sup, 0.3, 1e-15);
    }

    #[test]
    fn table_construction_errors() {
        assert_eq!(Coefficient::table(vec![], vec![]), Err(ModelError::EmptyTable));
        assert_eq!(
            Coefficient::table(vec![0.0, 1.0], vec![1.0]),
            Err(ModelError::TableLength { knots: 2, values: 1 })
        );
        assert_eq!(
            Coefficient::table(vec![1.0, 1.0], vec![1.0, 2.0]),
            Err(ModelError::UnsortedKnots)
        );
        assert!(Coefficient::constant(f64::NAN).is_err());
        assert!(Coefficient::sinusoid(1.0, -0.1, 1.0, 0.0).is_err());
    }

    #[test]
    fn floors() {
        let s = Coefficient::sinusoid(0.2, 0.3, 1.0, 0.0).unwrap();
        assert!(matches!(
            s.require(Floor::Positive, "r1"),
            Err(ModelError::NotPositive { .. })
        ));
        assert!(c(0.0).require(Floor::NonNegative, "alpha1").is_ok());
        assert!(c(0.0).require(Floor::Positive, "b1").is_err());
        let err = Mark::new(1.0, c(-1.5), c(0.0)).unwrap_err();
        assert!(err.to_string().contains("jump factor must exceed -1"));
        assert!(Mark::new(0.0, c(0.1), c(0.1)).is_err());
    }

    // Scalar oracle for gamma - ln(1+gamma) via the alternating series
    // sum_{n>=2} (-1)^n gamma^n / n, independent of ln_1p.
    fn penalty_series(g: f64) -> f64 {
        let mut sum = 0.0;
        let mut p = g * g;
        for n in 2..400 {
            let term = p / n as f64;
            sum += if n % 2 == 0 { term } else { -term };
            p *= g;
        }
        sum
    }

    #[test]
    fn penalty_oracle_matches_frozen_values() {
        assert_close!(penalty_series(0.1), 4.689_820_195_675_14e-3, 1e-17);
        assert_close!(penalty_series(-0.5), 0.193_147_180_559_945_3, 1e-15);
    }

    #[test]
    fn beta_examples() {
        assert_close!(beta(&MarkTable::empty(), &c(0.2), Species::X, 0.0), 0.02, 1e-16);
        assert_close!(
            beta(&one_mark(1.0, 0.1), &c(0.0), Species::X, 0.0),
            4.689_820_195_675_14e-3,
            1e-16
        );
        assert_close!(
            beta(&one_mark(2.0, -0.5), &c(0.2), Species::Y, 3.0),
            0.406_294_361_119_890_6,
            1e-15
        );
    }

    #[test]
    fn beta_envelope_examples() {
        let e = beta_envelope(&MarkTable::empty(), &c(0.2), Species::X, 10.0);
        assert_close!(e.inf, 0.02, 1e-16);
        assert_close!(e.sup, 0.02, 1e-16);
        let alpha = Coefficient::sinusoid(0.2, 0.1, TAU, 0.0).unwrap();
        let e = beta_envelope(&MarkTable::empty(), &alpha, Species::X, 1.0);
        assert_close!(e.inf, 0.005, 1e-15);
        assert_close!(e.sup, 0.045, 1e-15);
        let e = beta_envelope(&one_mark(1.0, 0.1), &c(0.0), Species::X, 1.0);
        assert_close!(e.inf, 4.689_820_195_675_14e-3, 1e-16);
        assert_close!(e.sup, 4.689_820_195_675_14e-3, 1e-16);
        // infinite horizon falls back to one full period
        let e = beta_envelope(&MarkTable::empty(), &alpha, Species::X, f64::INFINITY);
        assert_close!(e.sup, 0.045, 1e-15);
    }

    #[test]
    fn beta_monotone_in_jump_size() {
        let alpha = c(0.1);
        let mut prev = 0.0;
        for i in 0..200 {
            let g = i as f64 * 0.01;
            let b = beta(&one_mark(1.0, g), &alpha, Species::X, 0.0);
            assert!(b >= prev);
            prev = b;
        }
        let mut prev = 0.0;
        for i in 0..99 {
            let g = -(i as f64) * 0.01;
            let b = beta(&one_mark(1.0, g), &alpha, Species::X, 0.0);
            assert!(b >= prev);
            prev = b;
        }
    }

    #[test]
    fn log_jump_rates() {
        let m = one_mark(2.0, -0.5);
        assert_close!(
            m.log_jump_variance_rate(Species::X, 1.0),
            2.0 * 0.5f64.ln().powi(2),
            1e-15
        );
        assert!(m.log_jump_bound(Species::Y).is_finite());
    }

    fn coefficient_strategy() -> impl Strategy<Value = Coefficient> {
        prop_oneof![
            (0.01f64..5.0).prop_map(c),
            (0.5f64..3.0, 0.0f64..0.49, -10.0f64..10.0, -4.0f64..4.0).prop_map(|(m, a, w, p)| Coefficient::sinusoid(
                m,
                a * m,
                w,
                p
            )
            .unwrap()),
            proptest::collection::vec((0.01f64..2.0, 0.01f64..3.0), 1..8).prop_map(|pts| {
                let mut t = 0.0;
                let (mut knots, mut values) = (vec![], vec![]);
                for (dt, v) in pts {
                    t += dt;
                    knots.push(t);
                    values.push(v);
                }
                Coefficient::table(knots, values).unwrap()
            }),
        ]
    }

    proptest! {
        #[test]
        fn eval_within_envelope(coef in coefficient_strategy(), horizon in 0.1f64..20.0, frac in 0.0f64..=1.0) {
            let env = coef.envelope(horizon);
            let v = coef.eval(frac * horizon);
            prop_assert!(env.inf <= v + 1e-12 && v <= env.sup + 1e-12, "{v} outside {env:?}");
            let global = coef.envelope(f64::INFINITY);
            prop_assert!(global.inf <= env.inf + 1e-12 && env.sup <= global.sup + 1e-12);
        }

        #[test]
        fn beta_dominates_diffusion_part(a in 0.0f64..2.0, g in -0.99f64..3.0, w in 0.01f64..5.0, t in 0.0f64..10.0) {
            let marks = one_mark(w, g);
            let b = beta(&marks, &c(a), Species::X, t);
            prop_assert!(b >= 0.5 * a * a);
            if g == 0.0 {
                prop_assert_eq!(b, 0.5 * a * a);
            }
        }
    }
}
