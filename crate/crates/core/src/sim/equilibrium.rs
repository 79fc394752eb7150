use super::{ModelSpec, SimError};
use crate::coeffs::Species;

const MAX_ITERATIONS: usize = 200;
const RESIDUAL_TOL: f64 = 1e-12;

struct Constants {
    r: [f64; 2],
    b: [f64; 2],
    k: [f64; 2],
    eps: [f64; 2],
}

fn constants(model: &ModelSpec) -> Result<Constants, SimError> {
    if !model.is_noise_free() {
        return Err(SimError::NotNoiseFree);
    }
    if !model.is_autonomous() {
        return Err(SimError::NotAutonomous);
    }
    let p = Species::BOTH.map(|s| model.params(s));
    Ok(Constants {
        r: p.map(|p| p.growth.eval(0.0)),
        b: p.map(|p| p.interaction.eval(0.0)),
        k: p.map(|p| p.saturation.eval(0.0)),
        eps: p.map(|p| p.crowding.eval(0.0)),
    })
}

/// The three boundary equilibria `(0,0)`, `(r1/(ε1+b1/K1), 0)` and
/// `(0, r2/(ε2+b2/K2))` of the noise-free constant-coefficient model.
pub fn boundary_equilibria(model: &ModelSpec) -> Result<[(f64, f64); 3], SimError> {
    let c = constants(model)?;
    let single = |i: usize| c.r[i] / (c.eps[i] + c.b[i] / c.k[i]);
    Ok([(0.0, 0.0), (single(0), 0.0), (0.0, single(1))])
}

/// The unique positive interior equilibrium of the noise-free
/// constant-coefficient model, by damped Newton iteration started from the
/// single-species equilibria.
pub fn deterministic_equilibrium(model: &ModelSpec) -> Result<(f64, f64), SimError> {
    let c = constants(model)?;
    let residual = |x: f64, y: f64| {
        [
            c.r[0] - c.b[0] * x / (c.k[0] + y) - c.eps[0] * x,
            c.r[1] - c.b[1] * y / (c.k[1] + x) - c.eps[1] * y,
        ]
    };
    let norm = |f: [f64; 2]| f[0].abs().max(f[1].abs());
    let [_, (x_start, _), (_, y_start)] = boundary_equilibria(model)?;
    let (mut x, mut y) = (x_start, y_start);
    let mut f = residual(x, y);
    for _ in 0..MAX_ITERATIONS {
        if norm(f) < RESIDUAL_TOL {
            return Ok((x, y));
        }
        let j11 = -c.b[0] / (c.k[0] + y) - c.eps[0];
        let j12 = c.b[0] * x / (c.k[0] + y).powi(2);
        let j21 = c.b[1] * y / (c.k[1] + x).powi(2);
        let j22 = -c.b[1] / (c.k[1] + x) - c.eps[1];
        let det = j11 * j22 - j12 * j21;
        let dx = (f[0] * j22 - f[1] * j12) / det;
        let dy = (f[1] * j11 - f[0] * j21) / det;
        let mut step = 1.0;
        loop {
            let (nx, ny) = (x - step * dx, y - step * dy);
            if nx > 0.0 && ny > 0.0 {
                let nf = residual(nx, ny);
                if norm(nf) < norm(f) || step < 1e-12 {
                    x = nx;
                    y = ny;
                    f = nf;
                    break;
                }
            }
            step *= 0.5;
            if step < 1e-16 {
                return Err(SimError::NoConvergence(MAX_ITERATIONS));
            }
        }
    }
    if norm(f) < RESIDUAL_TOL {
        Ok((x, y))
    } else {
        Err(SimError::NoConvergence(MAX_ITERATIONS))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::MarkTable;
    use crate::sim::fixtures::*;
    use crate::sim::SpeciesParams;

    #[test]
    fn symmetric_equilibrium_is_golden_ratio_conjugate() {
        // 1 - x/(1+x) - x = 0  <=>  1 - x - x² = 0
        let m = symmetric(1.0, 1.0, 1.0, 1.0, 0.0, MarkTable::empty(), 1.0);
        let (x, y) = deterministic_equilibrium(&m).unwrap();
        let root = (5f64.sqrt() - 1.0) / 2.0;
        assert!((x - root).abs() < 1e-12 && (y - root).abs() < 1e-12);
    }

    #[test]
    fn decoupled_species_are_logistic() {
        let x = SpeciesParams::constant(0.8, 0.0, 1.0, 0.4, 0.0).unwrap();
        let y = SpeciesParams::constant(0.3, 0.0, 1.0, 0.6, 0.0).unwrap();
        let m = crate::sim::ModelSpec::new(x, y, MarkTable::empty(), 1.0, 1.0).unwrap();
        let (xs, ys) = deterministic_equilibrium(&m).unwrap();
        assert!((xs - 2.0).abs() < 1e-12 && (ys - 0.5).abs() < 1e-12);
    }

    #[test]
    fn boundary_points() {
        let m = symmetric(0.5, 1.0, 2.0, 0.5, 0.0, MarkTable::empty(), 1.0);
        let [e1, e2, e3] = boundary_equilibria(&m).unwrap();
        assert_eq!(e1, (0.0, 0.0));
        assert!((e2.0 - 0.5).abs() < 1e-15 && e2.1 == 0.0);
        assert_eq!(e3.1, e2.0);
    }

    #[test]
    fn asymmetric_equilibrium_solves_both_equations() {
        let x = SpeciesParams::constant(2.0, 3.0, 0.5, 0.2, 0.0).unwrap();
        let y = SpeciesParams::constant(0.4, 0.7, 4.0, 1.5, 0.0).unwrap();
        let m = crate::sim::ModelSpec::new(x, y, MarkTable::empty(), 1.0, 1.0).unwrap();
        let (xs, ys) = deterministic_equilibrium(&m).unwrap();
        assert!((2.0 - 3.0 * xs / (0.5 + ys) - 0.2 * xs).abs() < 1e-12);
        assert!((0.4 - 0.7 * ys / (4.0 + xs) - 1.5 * ys).abs() < 1e-12);
        let [_, e2, _] = boundary_equilibria(&m).unwrap();
        assert!(xs > e2.0);
    }

    #[test]
    fn noisy_models_are_rejected() {
        assert_eq!(deterministic_equilibrium(&persistent()), Err(SimError::NotNoiseFree));
        let p = SpeciesParams {
            growth: crate::coeffs::Coefficient::sinusoid(1.0, 0.5, 1.0, 0.0).unwrap(),
            ..SpeciesParams::constant(1.0, 1.0, 1.0, 1.0, 0.0).unwrap()
        };
        let m = crate::sim::ModelSpec::new(p.clone(), p, MarkTable::empty(), 1.0, 1.0).unwrap();
        assert_eq!(deterministic_equilibrium(&m), Err(SimError::NotAutonomous));
    }
}
