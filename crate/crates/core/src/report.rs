//! Evaluation of a scenario's enabled checks into a [`RunReport`].

use serde::Serialize;

use crate::analysis::{
    classify_regime, convergence_study, empirical_moment, martingale_envelope, martingale_rates, mean, median,
    permanence_probe, persistence_bounds, AnalysisError, EnsembleSummary, RegimeClass, RegimeVerdict, SIGMA_MULTIPLIER,
};
use crate::bounds::SandwichReport;
use crate::coeffs::{beta_envelope, Envelope, Species};
use crate::scenario::Scenario;
use crate::sim::{run_ensemble_with, EnsembleConfig, ModelSpec, PathVisitor, SimError};

/// Largest tolerated fraction of sandwich-violating grid points.
pub const SANDWICH_MAX_FRACTION: f64 = 1e-3;
/// Fraction of paths that must satisfy per-path claims.
pub const PATH_FRACTION: f64 = 0.95;
/// Terminal state below which a path counts as extinct.
pub const EXTINCTION_LEVEL: f64 = 1e-3;
/// Time averages must reach this multiple of the persistence lower bound.
pub const PERSISTENCE_FACTOR: f64 = 0.95;
/// Accepted ratio band for successive RMS differences (strong order one half).
pub const CONVERGENCE_RATIO: (f64, f64) = (1.2, 1.7);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    NotApplicable,
}

/// One measured quantity of a check and the bound it is held to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Measurement {
    pub quantity: String,
    /// 1 or 2 for per-species quantities.
    pub species: Option<usize>,
    pub value: f64,
    /// `"<="`, `">="` or `"in"`.
    pub relation: &'static str,
    pub bound: f64,
    /// Upper end of the band when `relation` is `"in"`.
    pub bound_high: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub passed: bool,
}

impl Measurement {
    fn at_most(quantity: impl Into<String>, species: Option<Species>, value: f64, bound: f64) -> Self {
        Measurement {
            quantity: quantity.into(),
            species: species.map(Species::number),
            value,
            relation: "<=",
            bound,
            bound_high: None,
            ci: None,
            passed: value <= bound,
        }
    }

    fn at_least(quantity: impl Into<String>, species: Option<Species>, value: f64, bound: f64) -> Self {
        Measurement {
            relation: ">=",
            passed: value >= bound,
            ..Measurement::at_most(quantity, species, value, bound)
        }
    }

    fn within(quantity: impl Into<String>, value: f64, low: f64, high: f64) -> Self {
        Measurement {
            relation: "in",
            bound_high: Some(high),
            passed: low <= value && value <= high,
            ..Measurement::at_most(quantity, None, value, low)
        }
    }

    fn with_ci(mut self, ci: (f64, f64)) -> Self {
        self.ci = Some(ci);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub verdict: Verdict,
    pub note: Option<String>,
    pub measurements: Vec<Measurement>,
}

impl CheckResult {
    fn from_measurements(name: &'static str, measurements: Vec<Measurement>) -> Self {
        let verdict = if measurements.is_empty() {
            Verdict::NotApplicable
        } else if measurements.iter().all(|m| m.passed) {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        CheckResult {
            name,
            verdict,
            note: None,
            measurements,
        }
    }

    fn not_applicable(name: &'static str, note: impl Into<String>) -> Self {
        CheckResult {
            name,
            verdict: Verdict::NotApplicable,
            note: Some(note.into()),
            measurements: Vec::new(),
        }
    }

    fn noted(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeciesEnvelopes {
    pub r: Envelope,
    pub b: Envelope,
    #[serde(rename = "K")]
    pub k: Envelope,
    pub eps: Envelope,
    pub alpha: Envelope,
    pub beta: Envelope,
    /// Per mark.
    pub gamma: Vec<Envelope>,
}

/// Coefficient ranges over `[0, horizon]`.
pub fn resolved_envelopes(model: &ModelSpec, horizon: f64) -> [SpeciesEnvelopes; 2] {
    Species::BOTH.map(|s| {
        let p = model.params(s);
        SpeciesEnvelopes {
            r: p.growth.envelope(horizon),
            b: p.interaction.envelope(horizon),
            k: p.saturation.envelope(horizon),
            eps: p.crowding.envelope(horizon),
            alpha: p.volatility.envelope(horizon),
            beta: beta_envelope(model.marks(), &p.volatility, s, horizon),
            gamma: model.marks().gammas(s).map(|g| g.envelope(horizon)).collect(),
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleInfo {
    pub n_paths: usize,
    pub failed_paths: usize,
    pub sandwich: Option<SandwichReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: toml::Table,
    pub envelopes: [SpeciesEnvelopes; 2],
    pub regime: RegimeVerdict,
    pub ensemble: Option<EnsembleInfo>,
    pub checks: Vec<CheckResult>,
    /// Per-path CSV files, relative to the output directory.
    pub path_files: Vec<String>,
}

impl RunReport {
    /// `true` unless some check failed.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.verdict != Verdict::Fail)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Standard deviation rate of `ln x(t)` fluctuations: `sup α² + sup Σ μ ln²(1+γ)`.
fn log_noise_rate(model: &ModelSpec, species: Species, horizon: f64) -> f64 {
    let (a, q) = martingale_rates(model, species, horizon);
    a + q
}

fn sandwich_check(e: &EnsembleSummary) -> CheckResult {
    let Some(r) = &e.sandwich else {
        return CheckResult::not_applicable("sandwich", "no sandwich statistics");
    };
    CheckResult::from_measurements(
        "sandwich",
        vec![
            Measurement::at_most(
                "violation_fraction",
                None,
                r.violation_fraction(),
                SANDWICH_MAX_FRACTION,
            ),
            Measurement::at_most("ordering_violations", None, r.ordering_violations as f64, 0.0),
        ],
    )
}

fn regime_check(model: &ModelSpec, e: &EnsembleSummary) -> CheckResult {
    let t = e.horizon;
    let mut out = Vec::new();
    for s in Species::BOTH {
        let regime = e.regime.species[s.index()];
        let slack = SIGMA_MULTIPLIER * log_noise_rate(model, s, t).sqrt() / t.sqrt();
        let slope = median(&e.log_slopes(s));
        match regime.class {
            RegimeClass::Persistent => out.push(Measurement::at_most(
                "abs_median_log_slope",
                Some(s),
                slope.abs(),
                slack,
            )),
            RegimeClass::Extinct => out.push(Measurement::at_most(
                "median_log_slope",
                Some(s),
                slope,
                regime.threshold_high + slack,
            )),
            RegimeClass::Indeterminate => {}
        }
    }
    let check = CheckResult::from_measurements("regime", out);
    if check.verdict == Verdict::NotApplicable {
        check.noted("both species fall between the thresholds")
    } else {
        check
    }
}

fn extinction_check(model: &ModelSpec, e: &EnsembleSummary) -> CheckResult {
    let t = e.horizon;
    let mut out = Vec::new();
    for s in Species::BOTH {
        let regime = e.regime.species[s.index()];
        if regime.class != RegimeClass::Extinct {
            continue;
        }
        let terminal = e.terminal(s);
        let below = terminal.iter().filter(|&&v| v < EXTINCTION_LEVEL).count() as f64 / terminal.len() as f64;
        out.push(Measurement::at_least(
            "fraction_below_1e-3",
            Some(s),
            below,
            PATH_FRACTION,
        ));
        let slack = SIGMA_MULTIPLIER * log_noise_rate(model, s, t).sqrt() / t.sqrt();
        out.push(Measurement::at_most(
            "median_log_slope",
            Some(s),
            median(&e.log_slopes(s)),
            regime.threshold_high + slack,
        ));
    }
    if out.is_empty() {
        return CheckResult::not_applicable("extinction", "no species is classified extinct");
    }
    CheckResult::from_measurements("extinction", out)
}

fn persistence_check(model: &ModelSpec, e: &EnsembleSummary) -> CheckResult {
    let mut out = Vec::new();
    for s in Species::BOTH {
        let b = persistence_bounds(model, s, e.horizon);
        if !b.applicable {
            continue;
        }
        let averages = e.terminal_average(s);
        let n = averages.len() as f64;
        let floor = PERSISTENCE_FACTOR * b.weakest_lower();
        let above = averages.iter().filter(|&&a| a >= floor).count() as f64 / n;
        out.push(Measurement::at_least(
            "fraction_time_average_above_lower",
            Some(s),
            above,
            PATH_FRACTION,
        ));
        if b.upper_applicable {
            let ceiling = b.upper / PERSISTENCE_FACTOR;
            let below = averages.iter().filter(|&&a| a <= ceiling).count() as f64 / n;
            out.push(Measurement::at_least(
                "fraction_time_average_below_upper",
                Some(s),
                below,
                PATH_FRACTION,
            ));
        }
    }
    if out.is_empty() {
        return CheckResult::not_applicable("persistence", "no species is classified persistent");
    }
    CheckResult::from_measurements("persistence", out)
}

fn moments_check(e: &EnsembleSummary) -> Result<CheckResult, AnalysisError> {
    let mut out = Vec::new();
    for &q in &e.moment_orders {
        let curve = empirical_moment(e, q)?;
        for s in Species::BOTH {
            let i = s.index();
            let se = curve.slope_standard_error[i];
            let slope = curve.trailing_slope[i];
            out.push(
                Measurement::at_most(format!("trailing_slope_q{q}"), Some(s), slope, SIGMA_MULTIPLIER * se)
                    .with_ci((slope - SIGMA_MULTIPLIER * se, slope + SIGMA_MULTIPLIER * se)),
            );
        }
    }
    Ok(CheckResult::from_measurements("moments", out))
}

fn permanence_check(e: &EnsembleSummary, epsilon: f64) -> Result<CheckResult, AnalysisError> {
    let probe = match permanence_probe(e, epsilon) {
        Ok(p) => p,
        Err(AnalysisError::NotPermanent(case)) => {
            return Ok(CheckResult::not_applicable(
                "permanence",
                format!("regime case {case:?} is not permanent"),
            ))
        }
        Err(other) => return Err(other),
    };
    let mut out = Vec::new();
    for s in Species::BOTH {
        let l = probe.species[s.index()];
        out.push(
            Measurement::at_least("lower_level_ci_low", Some(s), l.lower_ci.0, f64::MIN_POSITIVE).with_ci(l.lower_ci),
        );
        out.push(Measurement::at_least("coverage", Some(s), l.coverage, 1.0 - epsilon));
        out.push(Measurement {
            relation: "info",
            passed: true,
            ..Measurement::at_most("upper_level", Some(s), l.upper, f64::INFINITY)
        });
    }
    Ok(CheckResult::from_measurements("permanence", out))
}

fn martingale_check(model: &ModelSpec, e: &EnsembleSummary) -> CheckResult {
    let n = e.completed_paths();
    let mut out = Vec::new();
    for s in Species::BOTH {
        let i = s.index();
        let (a, q) = martingale_rates(model, s, e.horizon);
        let m: Vec<f64> = e.paths.iter().map(|p| p.martingale.diffusion[i]).collect();
        let j: Vec<f64> = e.paths.iter().map(|p| p.martingale.jump[i]).collect();
        out.push(Measurement::at_most(
            "abs_mean_M_over_T",
            Some(s),
            mean(&m).abs(),
            martingale_envelope(a, e.horizon, n),
        ));
        out.push(Measurement::at_most(
            "abs_mean_Q_over_T",
            Some(s),
            mean(&j).abs(),
            martingale_envelope(q, e.horizon, n),
        ));
    }
    CheckResult::from_measurements("martingale", out)
}

fn convergence_check(scenario: &Scenario, levels: u32) -> Result<CheckResult, SimError> {
    let r = &scenario.run;
    let study = convergence_study(&scenario.model, r.dt, levels, r.horizon, r.n_paths, r.base_seed)?;
    let (lo, hi) = CONVERGENCE_RATIO;
    let out = study
        .ratios
        .iter()
        .enumerate()
        .map(|(k, &ratio)| Measurement::within(format!("rms_ratio_dt{}", study.dts[k + 1]), ratio, lo, hi))
        .collect();
    let note = format!(
        "rms differences {:?} over {} paths ({} excluded for positivity loss); log scheme {:?}",
        study.rms_differences, study.paths_used, study.paths_excluded, study.log_scheme_rms_differences
    );
    Ok(CheckResult::from_measurements("convergence", out).noted(note))
}

/// Ensemble settings implied by a scenario's checks.
pub fn ensemble_config(scenario: &Scenario) -> EnsembleConfig {
    let r = &scenario.run;
    let mut cfg = EnsembleConfig::new(r.dt, r.horizon, r.n_paths, r.base_seed);
    cfg.moment_orders = scenario.checks.moments.clone();
    if scenario.checks.sandwich {
        cfg.sandwich_tol = Some(scenario.checks.sandwich_tolerance(r.dt));
    }
    cfg
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

/// Runs every enabled check. `visitor` sees each ensemble path as it
/// completes; `path_files` is copied into the report.
pub fn verify_scenario(
    scenario: &Scenario,
    visitor: &PathVisitor<'_>,
    path_files: Vec<String>,
) -> Result<RunReport, VerifyError> {
    let model = &scenario.model;
    let horizon = scenario.run.horizon;
    let c = &scenario.checks;
    let mut checks = Vec::new();
    let mut ensemble_info = None;
    if c.needs_ensemble() {
        let e = run_ensemble_with(model, &ensemble_config(scenario), visitor)?;
        if c.sandwich {
            checks.push(sandwich_check(&e));
        }
        if c.regime {
            checks.push(regime_check(model, &e));
        }
        if c.persistence {
            checks.push(persistence_check(model, &e));
        }
        if c.extinction {
            checks.push(extinction_check(model, &e));
        }
        if c.martingale {
            checks.push(martingale_check(model, &e));
        }
        if !c.moments.is_empty() {
            checks.push(moments_check(&e)?);
        }
        if let Some(eps) = c.permanence_epsilon {
            checks.push(permanence_check(&e, eps)?);
        }
        ensemble_info = Some(EnsembleInfo {
            n_paths: e.n_paths,
            failed_paths: e.failed_paths,
            sandwich: e.sandwich,
        });
    }
    if let Some(levels) = c.convergence_levels {
        checks.push(convergence_check(scenario, levels)?);
    }
    Ok(RunReport {
        scenario: scenario.to_table(),
        envelopes: resolved_envelopes(model, horizon),
        regime: classify_regime(model, horizon),
        ensemble: ensemble_info,
        checks,
        path_files,
    })
}
