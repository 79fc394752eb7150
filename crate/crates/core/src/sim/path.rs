use super::{ModelSpec, NoiseRecord, SimError};
use crate::coeffs::Species;
use crate::levy::{log_jump_size, PathStreams};

/// Largest admissible `|ln x|` before a path is aborted.
pub const LOG_STATE_LIMIT: f64 = 700.0;

/// How much of a [`NoiseRecord`] an integrator consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NoiseUsage {
    pub brownian_increments: usize,
    pub jumps_applied: usize,
}

/// One simulated trajectory on the jump-adapted grid.
///
/// Per species `i` it stores the state, its logarithm, the diffusion
/// martingale `M_i(t) = ∫ α_i dW_i` and the compensated log-jump martingale
/// `Q_i(t) = ∫∫ ln(1+γ_i) Ñ(ds,du)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub state: [Vec<f64>; 2],
    pub log_state: [Vec<f64>; 2],
    pub diffusion: [Vec<f64>; 2],
    pub jump: [Vec<f64>; 2],
    pub noise: NoiseRecord,
    pub usage: NoiseUsage,
    /// Time at which the direct scheme produced a nonpositive state. The
    /// arrays stop at the last valid point. Always `None` for the log scheme.
    pub positivity_violation: Option<f64>,
}

impl PathRecord {
    fn with_capacity(noise: NoiseRecord) -> Self {
        let n = noise.grid.len();
        let v = || [Vec::with_capacity(n), Vec::with_capacity(n)];
        PathRecord {
            state: v(),
            log_state: v(),
            diffusion: v(),
            jump: v(),
            noise,
            usage: NoiseUsage::default(),
            positivity_violation: None,
        }
    }

    fn push(&mut self, s: usize, state: f64, log_state: f64, diffusion: f64, jump: f64) {
        self.state[s].push(state);
        self.log_state[s].push(log_state);
        self.diffusion[s].push(diffusion);
        self.jump[s].push(jump);
    }

    /// Grid times covered by the record (shorter than the noise grid only
    /// after a positivity violation).
    pub fn times(&self) -> &[f64] {
        &self.noise.times()[..self.state[0].len()]
    }

    pub fn x(&self) -> &[f64] {
        &self.state[0]
    }

    pub fn y(&self) -> &[f64] {
        &self.state[1]
    }

    pub fn values(&self, species: Species) -> &[f64] {
        &self.state[species.index()]
    }

    pub fn horizon(&self) -> f64 {
        *self.times().last().expect("records hold the initial point")
    }

    pub fn terminal(&self, species: Species) -> f64 {
        *self.values(species).last().expect("records hold the initial point")
    }
}

/// Log-coordinate Euler scheme on a fresh noise sample.
pub fn simulate_path(model: &ModelSpec, dt: f64, horizon: f64, streams: &PathStreams) -> Result<PathRecord, SimError> {
    let noise = NoiseRecord::sample(model.marks(), dt, horizon, streams)?;
    simulate_path_with_noise(model, noise)
}

/// Log-coordinate Euler scheme driven by a given noise record.
///
/// On each cell `[t_n, t_{n+1})` of width `h`, with coefficients frozen at `t_n`,
///
/// ```text
/// u += (r1 - α1²/2 - Σ μ γ1 - b1 e^u/(K1 + e^v) - ε1 e^u) h + α1 ΔW1
/// ```
///
/// (and symmetrically for `v`), followed by `u += ln(1 + γ1(t_{n+1}))` if a
/// jump sits at `t_{n+1}`.
pub fn simulate_path_with_noise(model: &ModelSpec, noise: NoiseRecord) -> Result<PathRecord, SimError> {
    let mut rec = PathRecord::with_capacity(noise);
    let marks = model.marks();
    let mut log_state = Species::BOTH.map(|s| model.initial(s).ln());
    let mut state = Species::BOTH.map(|s| model.initial(s));
    let mut diffusion = [0.0; 2];
    let mut jump = [0.0; 2];
    for s in 0..2 {
        rec.push(s, state[s], log_state[s], 0.0, 0.0);
    }
    let grid = &rec.noise.grid;
    let times = grid.times();
    let n = times.len();
    let mut usage = NoiseUsage::default();
    for i in 0..n - 1 {
        let t = times[i];
        let h = times[i + 1] - t;
        let mut next = log_state;
        for sp in Species::BOTH {
            let s = sp.index();
            let r = model.rates(sp, t);
            let dw = rec.noise.dw[s][i];
            let drift = r.log_growth() - r.limitation(state[s], state[1 - s]);
            next[s] += drift * h + r.volatility * dw;
            diffusion[s] += r.volatility * dw;
            jump[s] -= r.log_mass * h;
            usage.brownian_increments += 1;
        }
        if let Some(k) = grid.jump_at(i + 1) {
            for sp in Species::BOTH {
                let s = sp.index();
                let size = log_jump_size(marks, sp, times[i + 1], k);
                next[s] += size;
                jump[s] += size;
            }
            usage.jumps_applied += 1;
        }
        for s in 0..2 {
            if !(next[s].abs() <= LOG_STATE_LIMIT) {
                return Err(SimError::Overflow {
                    time: times[i + 1],
                    species: s + 1,
                    value: next[s],
                });
            }
            log_state[s] = next[s];
            state[s] = next[s].exp();
            rec.state[s].push(state[s]);
            rec.log_state[s].push(log_state[s]);
            rec.diffusion[s].push(diffusion[s]);
            rec.jump[s].push(jump[s]);
        }
    }
    rec.usage = usage;
    Ok(rec)
}

/// Direct Euler–Maruyama on `x`, `y` with multiplicative jump factors,
/// on a fresh noise sample.
pub fn simulate_direct(
    model: &ModelSpec,
    dt: f64,
    horizon: f64,
    streams: &PathStreams,
) -> Result<PathRecord, SimError> {
    let noise = NoiseRecord::sample(model.marks(), dt, horizon, streams)?;
    Ok(simulate_direct_with_noise(model, noise))
}

/// Direct Euler–Maruyama driven by a given noise record:
///
/// ```text
/// x += x [(r1 - Σ μ γ1 - b1 x/(K1 + y) - ε1 x) h + α1 ΔW1],  then x *= 1 + γ1 at jumps.
/// ```
///
/// A nonpositive or non-finite state stops the integration and is reported
/// in [`PathRecord::positivity_violation`].
pub fn simulate_direct_with_noise(model: &ModelSpec, noise: NoiseRecord) -> PathRecord {
    let mut rec = PathRecord::with_capacity(noise);
    let marks = model.marks();
    let mut state = Species::BOTH.map(|s| model.initial(s));
    let mut diffusion = [0.0; 2];
    let mut jump = [0.0; 2];
    for s in 0..2 {
        rec.push(s, state[s], state[s].ln(), 0.0, 0.0);
    }
    let n = rec.noise.grid.len();
    let mut usage = NoiseUsage::default();
    for i in 0..n - 1 {
        let t = rec.noise.grid.times()[i];
        let t_next = rec.noise.grid.times()[i + 1];
        let h = t_next - t;
        let mut next = state;
        for sp in Species::BOTH {
            let s = sp.index();
            let r = model.rates(sp, t);
            let dw = rec.noise.dw[s][i];
            let per_capita = (r.growth - r.gamma_mass - r.limitation(state[s], state[1 - s])) * h + r.volatility * dw;
            next[s] += state[s] * per_capita;
            diffusion[s] += r.volatility * dw;
            jump[s] -= r.log_mass * h;
            usage.brownian_increments += 1;
        }
        if let Some(k) = rec.noise.grid.jump_at(i + 1) {
            for sp in Species::BOTH {
                let s = sp.index();
                let gamma = marks.marks()[k].gamma(sp).eval(t_next);
                next[s] *= 1.0 + gamma;
                jump[s] += gamma.ln_1p();
            }
            usage.jumps_applied += 1;
        }
        if next.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            rec.positivity_violation = Some(t_next);
            break;
        }
        state = next;
        for s in 0..2 {
            rec.push(s, state[s], state[s].ln(), diffusion[s], jump[s]);
        }
    }
    rec.usage = usage;
    rec
}
