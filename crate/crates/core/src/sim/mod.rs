//! Model specification and path integrators.
//!
//! The canonical integrator works on `u = ln x`, `v = ln y`, where positivity
//! holds by construction. [`simulate_direct`] integrates `x`, `y` themselves
//! and exists as a cross-check that consumes the same [`NoiseRecord`].

mod ensemble;
mod equilibrium;
mod grid;
mod path;

pub use ensemble::{run_ensemble, run_ensemble_with, EnsembleConfig, PathVisitor};
pub use equilibrium::{boundary_equilibria, deterministic_equilibrium};
pub use grid::{build_grid, NoiseRecord, TimeGrid};
pub use path::{
    simulate_direct, simulate_direct_with_noise, simulate_path, simulate_path_with_noise, NoiseUsage, PathRecord,
};

use thiserror::Error;

use crate::coeffs::{Coefficient, Floor, MarkTable, ModelError, Species};
use crate::levy::compensator_rates;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
    #[error("coarsening factor must be at least 1")]
    InvalidFactor,
    #[error("log-state of species {species} left [-700, 700] at t = {time} (value {value}); path aborted")]
    Overflow { time: f64, species: usize, value: f64 },
    #[error("equilibrium needs a noise-free model (alpha = 0, no jump marks)")]
    NotNoiseFree,
    #[error("equilibrium needs constant coefficients")]
    NotAutonomous,
    #[error("equilibrium iteration did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("{failed} of {total} paths aborted (more than 1%); first failure: {first}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: Box<SimError>,
    },
    #[error("ensemble needs at least one path")]
    NoPaths,
    #[error("path output failed: {0}")]
    Visitor(String),
}

/// Coefficients of one species' equation.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesParams {
    /// Intrinsic growth rate `r`.
    pub growth: Coefficient,
    /// Mutualistic limitation `b`, acting as `b x / (K + partner)`.
    pub interaction: Coefficient,
    /// Saturation constant `K` in the limitation denominator.
    pub saturation: Coefficient,
    /// Intraspecific crowding `ε`.
    pub crowding: Coefficient,
    /// White-noise intensity `α`; may vanish.
    pub volatility: Coefficient,
}

impl SpeciesParams {
    /// All-constant parameter set `(r, b, K, ε, α)`.
    pub fn constant(
        growth: f64,
        interaction: f64,
        saturation: f64,
        crowding: f64,
        volatility: f64,
    ) -> Result<Self, ModelError> {
        Ok(SpeciesParams {
            growth: Coefficient::constant(growth)?,
            interaction: Coefficient::constant(interaction)?,
            saturation: Coefficient::constant(saturation)?,
            crowding: Coefficient::constant(crowding)?,
            volatility: Coefficient::constant(volatility)?,
        })
    }

    fn validate(&self, species: Species) -> Result<(), ModelError> {
        let n = species.number();
        self.growth.require(Floor::Positive, &format!("r{n}"))?;
        // b = 0 decouples the species; allowed as a degenerate case
        self.interaction.require(Floor::NonNegative, &format!("b{n}"))?;
        self.saturation.require(Floor::Positive, &format!("K{n}"))?;
        self.crowding.require(Floor::Positive, &format!("eps{n}"))?;
        self.volatility.require(Floor::NonNegative, &format!("alpha{n}"))?;
        Ok(())
    }

    fn coefficients(&self) -> [&Coefficient; 5] {
        [
            &self.growth,
            &self.interaction,
            &self.saturation,
            &self.crowding,
            &self.volatility,
        ]
    }
}

/// Full parameter set of the two-species jump system plus its initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    species: [SpeciesParams; 2],
    marks: MarkTable,
    initial: [f64; 2],
}

impl ModelSpec {
    pub fn new(x: SpeciesParams, y: SpeciesParams, marks: MarkTable, x0: f64, y0: f64) -> Result<Self, ModelError> {
        x.validate(Species::X)?;
        y.validate(Species::Y)?;
        for (name, value) in [("x0", x0), ("y0", y0)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::InitialState { name, value });
            }
        }
        Ok(ModelSpec {
            species: [x, y],
            marks,
            initial: [x0, y0],
        })
    }

    pub fn params(&self, species: Species) -> &SpeciesParams {
        &self.species[species.index()]
    }

    pub fn marks(&self) -> &MarkTable {
        &self.marks
    }

    pub fn initial(&self, species: Species) -> f64 {
        self.initial[species.index()]
    }

    pub fn with_initial(&self, x0: f64, y0: f64) -> Result<Self, ModelError> {
        ModelSpec::new(
            self.species[0].clone(),
            self.species[1].clone(),
            self.marks.clone(),
            x0,
            y0,
        )
    }

    /// No white noise and no jumps: the path is the deterministic solution.
    pub fn is_noise_free(&self) -> bool {
        self.marks.is_empty()
            && self
                .species
                .iter()
                .all(|p| p.volatility.is_constant() && p.volatility.eval(0.0) == 0.0)
    }

    pub fn is_autonomous(&self) -> bool {
        self.species
            .iter()
            .flat_map(|p| p.coefficients())
            .chain(Species::BOTH.iter().flat_map(|&s| self.marks.gammas(s)))
            .all(Coefficient::is_constant)
    }

    /// Coefficient values of `species`' equation at time `t`.
    #[inline]
    pub(crate) fn rates(&self, species: Species, t: f64) -> Rates {
        let p = self.params(species);
        let (gamma_mass, log_mass) = compensator_rates(&self.marks, species, t);
        Rates {
            growth: p.growth.eval(t),
            interaction: p.interaction.eval(t),
            saturation: p.saturation.eval(t),
            crowding: p.crowding.eval(t),
            volatility: p.volatility.eval(t),
            gamma_mass,
            log_mass,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Rates {
    pub growth: f64,
    pub interaction: f64,
    pub saturation: f64,
    pub crowding: f64,
    pub volatility: f64,
    pub gamma_mass: f64,
    pub log_mass: f64,
}

impl Rates {
    /// Drift of the log-state without density dependence:
    /// `r - beta - Σ mu ln(1+gamma) = r - alpha²/2 - Σ mu gamma`.
    #[inline]
    pub fn log_growth(&self) -> f64 {
        self.growth - 0.5 * self.volatility * self.volatility - self.gamma_mass
    }

    /// Per-capita density limitation `b own / (K + partner) + ε own`.
    #[inline]
    pub fn limitation(&self, own: f64, partner: f64) -> f64 {
        self.interaction * own / (self.saturation + partner) + self.crowding * own
    }
}
