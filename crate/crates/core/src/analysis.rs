//! Finite-horizon evaluation of the model's asymptotic claims: regime
//! classification from coefficient envelopes, persistence-in-mean bounds,
//! and Monte Carlo diagnostics over ensembles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::SandwichReport;
use crate::coeffs::{beta_envelope, Envelope, Species};
use crate::levy::PathStreams;
use crate::sim::{simulate_direct_with_noise, simulate_path_with_noise, ModelSpec, NoiseRecord, PathRecord, SimError};

/// Normal quantile used for "3 sigma" envelopes throughout.
pub const SIGMA_MULTIPLIER: f64 = 3.0;
/// Two-sided 99% normal quantile.
pub const Z_99: f64 = 2.575_829_303_548_901;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("moment order {0} was not recorded by the ensemble")]
    MissingMomentOrder(f64),
    #[error("permanence probe needs both species persistent (case {0:?})")]
    NotPermanent(JointCase),
    #[error("probability level must lie in (0, 1), got {0}")]
    InvalidProbability(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegimeClass {
    Persistent,
    Extinct,
    Indeterminate,
}

/// Joint outcome: `A` both extinct, `B` only `y` extinct, `C` only `x`
/// extinct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JointCase {
    A,
    B,
    C,
    BothPersistent,
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeciesRegime {
    pub growth: Envelope,
    pub beta: Envelope,
    /// `inf r - sup beta`; positive means persistent in mean.
    pub threshold_low: f64,
    /// `sup r - inf beta`; negative means extinct.
    pub threshold_high: f64,
    pub class: RegimeClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeVerdict {
    pub species: [SpeciesRegime; 2],
    pub case: JointCase,
}

impl RegimeVerdict {
    pub fn class(&self, species: Species) -> RegimeClass {
        self.species[species.index()].class
    }
}

/// Threshold classification of each species over `[0, horizon]`.
pub fn classify_regime(model: &ModelSpec, horizon: f64) -> RegimeVerdict {
    let species = Species::BOTH.map(|s| {
        let p = model.params(s);
        let growth = p.growth.envelope(horizon);
        let beta = beta_envelope(model.marks(), &p.volatility, s, horizon);
        let threshold_low = growth.inf - beta.sup;
        let threshold_high = growth.sup - beta.inf;
        let class = if threshold_low > 0.0 {
            RegimeClass::Persistent
        } else if threshold_high < 0.0 {
            RegimeClass::Extinct
        } else {
            RegimeClass::Indeterminate
        };
        SpeciesRegime {
            growth,
            beta,
            threshold_low,
            threshold_high,
            class,
        }
    });
    use RegimeClass::*;
    let case = match (species[0].class, species[1].class) {
        (Extinct, Extinct) => JointCase::A,
        (Persistent, Extinct) => JointCase::B,
        (Extinct, Persistent) => JointCase::C,
        (Persistent, Persistent) => JointCase::BothPersistent,
        _ => JointCase::Indeterminate,
    };
    RegimeVerdict { species, case }
}

/// Bounds on the long-run time average `(1/t) ∫ x ds` of one species.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersistenceBounds {
    /// `(inf r - sup β) / (sup b + sup ε · inf K)`.
    pub lower: f64,
    /// `inf K (inf r - sup β) / (sup ε · inf K + sup b)`; differs from
    /// `lower` by the factor `inf K`.
    pub lower_scaled: f64,
    /// `sup K (sup r - inf β) / (sup K · inf ε + inf b)`; only claimed when
    /// the partner species goes extinct.
    pub upper: f64,
    /// The species is persistent, so the lower bounds apply.
    pub applicable: bool,
    /// The partner is extinct as well, so the upper bound applies too.
    pub upper_applicable: bool,
}

impl PersistenceBounds {
    /// The smaller of the two lower-bound variants.
    pub fn weakest_lower(&self) -> f64 {
        self.lower.min(self.lower_scaled)
    }
}

pub fn persistence_bounds(model: &ModelSpec, species: Species, horizon: f64) -> PersistenceBounds {
    let verdict = classify_regime(model, horizon);
    let regime = verdict.species[species.index()];
    let p = model.params(species);
    let k = p.saturation.envelope(horizon);
    let b = p.interaction.envelope(horizon);
    let eps = p.crowding.envelope(horizon);
    let low_margin = regime.threshold_low;
    let high_margin = regime.threshold_high;
    let applicable = regime.class == RegimeClass::Persistent;
    PersistenceBounds {
        lower: low_margin / (b.sup + eps.sup * k.inf),
        lower_scaled: k.inf * low_margin / (eps.sup * k.inf + b.sup),
        upper: k.sup * high_margin / (k.sup * eps.inf + b.inf),
        applicable,
        upper_applicable: applicable && verdict.class(species.other()) == RegimeClass::Extinct,
    }
}

/// Running time average `(1/t) ∫_0^t state ds` on the path grid (trapezoid
/// rule); the entry at `t = 0` is the initial state.
pub fn time_average(path: &PathRecord, species: Species) -> Vec<f64> {
    let times = path.times();
    let v = path.values(species);
    let mut out = Vec::with_capacity(v.len());
    out.push(v[0]);
    let mut integral = 0.0;
    for i in 1..v.len() {
        integral += 0.5 * (v[i - 1] + v[i]) * (times[i] - times[i - 1]);
        out.push(integral / times[i]);
    }
    out
}

/// `ln(state(T)) / T`.
pub fn lyapunov_log_slope(path: &PathRecord, species: Species) -> f64 {
    path.log_state[species.index()].last().copied().unwrap_or(0.0) / path.horizon()
}

/// Endpoint ratios `M_i(T)/T` and `Q_i(T)/T`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MartingaleRatios {
    pub diffusion: [f64; 2],
    pub jump: [f64; 2],
}

pub fn martingale_diagnostics(path: &PathRecord) -> MartingaleRatios {
    let t = path.horizon();
    let end = |v: &Vec<f64>| v.last().copied().unwrap_or(0.0) / t;
    MartingaleRatios {
        diffusion: [end(&path.diffusion[0]), end(&path.diffusion[1])],
        jump: [end(&path.jump[0]), end(&path.jump[1])],
    }
}

/// `3 sqrt(rate) / sqrt(T N)`: the envelope for an ensemble mean of
/// `M(T)/T` (rate `sup α²`) or `Q(T)/T` (rate `sup Σ μ ln²(1+γ)`).
pub fn martingale_envelope(rate: f64, horizon: f64, n_paths: usize) -> f64 {
    SIGMA_MULTIPLIER * rate.sqrt() / (horizon * n_paths as f64).sqrt()
}

/// Quadratic-variation rates `(sup α², sup Σ μ ln²(1+γ))` for one species.
pub fn martingale_rates(model: &ModelSpec, species: Species, horizon: f64) -> (f64, f64) {
    let alpha = model.params(species).volatility.envelope(horizon);
    let a = alpha.sup.max(-alpha.inf);
    (a * a, model.marks().log_jump_variance_rate(species, horizon))
}

/// Mean and 5/50/95% quantiles of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointStats {
    pub mean: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

impl PointStats {
    pub fn of(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        PointStats {
            mean: mean(values),
            q05: quantile_sorted(&sorted, 0.05),
            q50: quantile_sorted(&sorted, 0.5),
            q95: quantile_sorted(&sorted, 0.95),
        }
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard error of the mean.
pub fn standard_error(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Linear-interpolation quantile of an ascending sample.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, 0.5)
}

/// Ordinary least-squares slope of `values` against `times`.
pub fn least_squares_slope(times: &[f64], values: &[f64]) -> f64 {
    let n = times.len().min(values.len());
    if n < 2 {
        return 0.0;
    }
    let tm = mean(&times[..n]);
    let vm = mean(&values[..n]);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        num += (times[i] - tm) * (values[i] - vm);
        den += (times[i] - tm).powi(2);
    }
    num / den
}

/// Compact per-path record kept by the ensemble runner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    /// State at the ensemble's sample times.
    pub samples: [Vec<f64>; 2],
    /// Running time average at the sample times.
    pub averages: [Vec<f64>; 2],
    pub log_slope: [f64; 2],
    pub martingale: MartingaleRatios,
    /// Per moment order: least-squares slope of `state^q` over the trailing window.
    pub moment_slopes: Vec<[f64; 2]>,
    pub sandwich: Option<SandwichReport>,
    pub jumps: usize,
}

/// Ensemble statistics on a common set of sample times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n_paths: usize,
    pub failed_paths: usize,
    pub horizon: f64,
    pub dt: f64,
    pub regime: RegimeVerdict,
    pub sample_times: Vec<f64>,
    /// Index of the first sample time of the trailing moment window.
    pub moment_window_start: usize,
    /// Index of the first sample time of the terminal (permanence) window.
    pub terminal_window_start: usize,
    pub state: [Vec<PointStats>; 2],
    pub time_average: [Vec<PointStats>; 2],
    pub moment_orders: Vec<f64>,
    /// `moments[j][s][t]`: Monte Carlo estimate of `E[state_s^q_j]` at sample `t`.
    pub moments: Vec<[Vec<f64>; 2]>,
    /// Per completed path.
    pub paths: Vec<PathSummary>,
    pub sandwich: Option<SandwichReport>,
}

impl EnsembleSummary {
    /// Aggregates per-path summaries given in path order.
    pub fn from_paths(
        model: &ModelSpec,
        horizon: f64,
        dt: f64,
        sample_times: Vec<f64>,
        moment_orders: Vec<f64>,
        windows: (usize, usize),
        failed_paths: usize,
        paths: Vec<PathSummary>,
    ) -> Self {
        let n_samples = sample_times.len();
        let column = |f: &dyn Fn(&PathSummary) -> f64| -> Vec<f64> { paths.iter().map(f).collect() };
        let stats = |pick: &dyn Fn(&PathSummary, usize) -> f64| -> Vec<PointStats> {
            (0..n_samples)
                .map(|t| PointStats::of(&column(&|p| pick(p, t))))
                .collect()
        };
        let state = [0, 1].map(|s| stats(&|p, t| p.samples[s][t]));
        let time_average = [0, 1].map(|s| stats(&|p, t| p.averages[s][t]));
        let moments = moment_orders
            .iter()
            .map(|&q| {
                [0, 1].map(|s| {
                    (0..n_samples)
                        .map(|t| mean(&column(&|p| p.samples[s][t].powf(q))))
                        .collect()
                })
            })
            .collect();
        let mut sandwich: Option<SandwichReport> = None;
        for p in &paths {
            if let Some(r) = &p.sandwich {
                sandwich.get_or_insert_with(SandwichReport::default).merge(r);
            }
        }
        EnsembleSummary {
            n_paths: paths.len() + failed_paths,
            failed_paths,
            horizon,
            dt,
            regime: classify_regime(model, horizon),
            sample_times,
            moment_window_start: windows.0,
            terminal_window_start: windows.1,
            state,
            time_average,
            moment_orders,
            moments,
            paths,
            sandwich,
        }
    }

    pub fn completed_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn terminal(&self, species: Species) -> Vec<f64> {
        let s = species.index();
        self.paths.iter().map(|p| *p.samples[s].last().unwrap()).collect()
    }

    pub fn terminal_average(&self, species: Species) -> Vec<f64> {
        let s = species.index();
        self.paths.iter().map(|p| *p.averages[s].last().unwrap()).collect()
    }

    pub fn log_slopes(&self, species: Species) -> Vec<f64> {
        self.paths.iter().map(|p| p.log_slope[species.index()]).collect()
    }

    /// States of all paths at every sample time in the terminal window.
    pub fn terminal_window(&self, species: Species) -> Vec<f64> {
        let s = species.index();
        self.paths
            .iter()
            .flat_map(|p| p.samples[s][self.terminal_window_start..].iter().copied())
            .collect()
    }
}

/// Monte Carlo `E[state^q]` curves and the no-upward-trend verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCurve {
    pub order: f64,
    pub times: Vec<f64>,
    pub values: [Vec<f64>; 2],
    /// Slope of the least-squares line through the trailing window of the curve.
    pub trailing_slope: [f64; 2],
    /// Standard error of that slope across independent paths.
    pub slope_standard_error: [f64; 2],
    /// No significant upward trend: `slope <= 3 SE`.
    pub bounded: [bool; 2],
}

/// The moment curve for order `q`, which must be one of the orders the
/// ensemble recorded. The trailing slope is the mean of per-path slopes,
/// which equals the slope fitted to the mean curve; its standard error comes
/// from the spread across independent paths.
pub fn empirical_moment(ensemble: &EnsembleSummary, q: f64) -> Result<MomentCurve, AnalysisError> {
    let j = ensemble
        .moment_orders
        .iter()
        .position(|&o| o == q)
        .ok_or(AnalysisError::MissingMomentOrder(q))?;
    let slopes = [0, 1].map(|s| ensemble.paths.iter().map(|p| p.moment_slopes[j][s]).collect::<Vec<_>>());
    let trailing_slope = [0, 1].map(|s| mean(&slopes[s]));
    let slope_standard_error = [0, 1].map(|s| standard_error(&slopes[s]));
    Ok(MomentCurve {
        order: q,
        times: ensemble.sample_times.clone(),
        values: ensemble.moments[j].clone(),
        trailing_slope,
        slope_standard_error,
        bounded: [0, 1].map(|s| trailing_slope[s] <= SIGMA_MULTIPLIER * slope_standard_error[s]),
    })
}

/// Empirical permanence levels of one species.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermanenceLevels {
    /// Lower level: the `ε/2` quantile of the pooled terminal-window states.
    pub lower: f64,
    /// Upper level: the `1 - ε/2` quantile.
    pub upper: f64,
    /// 99% confidence interval of the lower level, treating paths as the
    /// independent units.
    pub lower_ci: (f64, f64),
    /// Fraction of pooled states inside `[lower, upper]`.
    pub coverage: f64,
    pub success: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermanenceProbe {
    pub epsilon: f64,
    pub species: [PermanenceLevels; 2],
}

fn order_statistic(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let idx = ((p.clamp(0.0, 1.0) * n as f64).floor() as usize).min(n - 1);
    sorted[idx]
}

pub fn permanence_probe(ensemble: &EnsembleSummary, epsilon: f64) -> Result<PermanenceProbe, AnalysisError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(AnalysisError::InvalidProbability(epsilon));
    }
    if ensemble.regime.case != JointCase::BothPersistent {
        return Err(AnalysisError::NotPermanent(ensemble.regime.case));
    }
    let units = ensemble.completed_paths().max(1) as f64;
    let species = Species::BOTH.map(|s| {
        let mut pooled = ensemble.terminal_window(s);
        pooled.sort_by(f64::total_cmp);
        let n = pooled.len();
        let p_lo = epsilon / 2.0;
        let lower = order_statistic(&pooled, p_lo);
        let upper_idx = ((1.0 - p_lo) * n as f64).ceil() as usize;
        let upper = pooled[upper_idx.clamp(1, n) - 1];
        let half_width = Z_99 * (p_lo * (1.0 - p_lo) / units).sqrt();
        let lower_ci = (
            order_statistic(&pooled, p_lo - half_width),
            order_statistic(&pooled, p_lo + half_width),
        );
        let inside = pooled.iter().filter(|&&v| lower <= v && v <= upper).count();
        let coverage = inside as f64 / n as f64;
        PermanenceLevels {
            lower,
            upper,
            lower_ci,
            coverage,
            success: coverage >= 1.0 - epsilon && lower_ci.0 > 0.0,
        }
    });
    Ok(PermanenceProbe { epsilon, species })
}

/// Successive-level endpoint differences under shared noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    /// Step sizes, coarsest first; each is half the previous one.
    pub dts: Vec<f64>,
    /// RMS over paths of the endpoint difference `|(x, y)_k - (x, y)_{k+1}|`
    /// for the direct-coordinate scheme.
    pub rms_differences: Vec<f64>,
    /// `rms_differences[k] / rms_differences[k + 1]`; about `sqrt 2` for strong
    /// order one half.
    pub ratios: Vec<f64>,
    /// The same differences for the log-coordinate scheme.
    pub log_scheme_rms_differences: Vec<f64>,
    pub paths_used: usize,
    /// Paths dropped because the direct scheme lost positivity at some level.
    pub paths_excluded: usize,
}

/// Runs both schemes at `levels` step sizes `finest_dt * 2^k`, all driven by
/// one noise record per path sampled at the finest step.
pub fn convergence_study(
    model: &ModelSpec,
    finest_dt: f64,
    levels: u32,
    horizon: f64,
    n_paths: usize,
    base_seed: u64,
) -> Result<ConvergenceStudy, SimError> {
    if levels < 2 {
        return Err(SimError::InvalidFactor);
    }
    if n_paths == 0 {
        return Err(SimError::NoPaths);
    }
    let factors: Vec<u32> = (0..levels).rev().map(|k| 1u32 << k).collect();
    let endpoints = |p: &PathRecord| [p.terminal(Species::X), p.terminal(Species::Y)];
    type Ends = Vec<[f64; 2]>;
    let per_path: Vec<Result<Option<(Ends, Ends)>, SimError>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let fine = NoiseRecord::sample(
                model.marks(),
                finest_dt,
                horizon,
                &PathStreams::new(base_seed, i as u64),
            )?;
            let mut direct = Vec::with_capacity(factors.len());
            let mut log = Vec::with_capacity(factors.len());
            for &f in &factors {
                let noise = fine.coarsen(f)?;
                let d = simulate_direct_with_noise(model, noise.clone());
                if d.positivity_violation.is_some() {
                    return Ok(None);
                }
                direct.push(endpoints(&d));
                log.push(endpoints(&simulate_path_with_noise(model, noise)?));
            }
            Ok(Some((direct, log)))
        })
        .collect();
    let mut used = Vec::with_capacity(n_paths);
    for r in per_path {
        if let Some(ends) = r? {
            used.push(ends);
        }
    }
    if used.is_empty() {
        return Err(SimError::NoPaths);
    }
    let rms = |pick: &dyn Fn(&(Ends, Ends)) -> &Ends, k: usize| {
        let sq: f64 = used
            .iter()
            .map(|e| {
                let (a, b) = (pick(e)[k], pick(e)[k + 1]);
                (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
            })
            .sum();
        (sq / used.len() as f64).sqrt()
    };
    let steps = factors.len() - 1;
    let rms_differences: Vec<f64> = (0..steps).map(|k| rms(&|e| &e.0, k)).collect();
    let log_scheme_rms_differences = (0..steps).map(|k| rms(&|e| &e.1, k)).collect();
    Ok(ConvergenceStudy {
        dts: factors.iter().map(|&f| finest_dt * f as f64).collect(),
        ratios: rms_differences.windows(2).map(|w| w[0] / w[1]).collect(),
        rms_differences,
        log_scheme_rms_differences,
        paths_used: used.len(),
        paths_excluded: n_paths - used.len(),
    })
}
