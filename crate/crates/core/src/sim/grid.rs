use rand_distr::{Distribution, StandardNormal};

use super::SimError;
use crate::coeffs::{MarkTable, Species};
use crate::levy::{sample_jumps, Channel, JumpStream, PathStreams};

const NONE: u32 = u32::MAX;

/// Jump-adapted time grid: the uniform lattice `{0, dt, 2dt, ...}` merged
/// with every jump time, ending exactly at the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    lattice: Vec<u32>,
    marks: Vec<u32>,
    dt: f64,
}

impl TimeGrid {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("grid is never empty")
    }

    /// Mark index of the jump at grid point `i`, if any.
    #[inline]
    pub fn jump_at(&self, i: usize) -> Option<usize> {
        (self.marks[i] != NONE).then_some(self.marks[i] as usize)
    }

    /// Position of grid point `i` on the uniform lattice, if it lies on it.
    #[inline]
    pub fn lattice_index(&self, i: usize) -> Option<u32> {
        (self.lattice[i] != NONE).then_some(self.lattice[i])
    }

    /// Widest cell of the grid.
    pub fn max_step(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

/// Number of whole lattice steps in `[0, horizon]`, and whether the horizon
/// lands on the lattice (up to round-off).
fn lattice_steps(dt: f64, horizon: f64) -> (u32, bool) {
    let ratio = horizon / dt;
    let rounded = ratio.round();
    if (ratio - rounded).abs() <= 1e-9 * ratio.max(1.0) {
        (rounded as u32, true)
    } else {
        (ratio.floor() as u32, false)
    }
}

/// Sorted union of `{0, dt, 2dt, ..., horizon}` and all jump times, with
/// coincident points merged.
pub fn build_grid(dt: f64, horizon: f64, jumps: &JumpStream) -> Result<TimeGrid, SimError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(SimError::InvalidStep(dt));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(SimError::InvalidHorizon(horizon));
    }
    if horizon / dt >= (NONE - 1) as f64 {
        return Err(SimError::InvalidStep(dt));
    }
    let (steps, on_lattice) = lattice_steps(dt, horizon);
    let capacity = steps as usize + 2 + jumps.len();
    let mut grid = TimeGrid {
        times: Vec::with_capacity(capacity),
        lattice: Vec::with_capacity(capacity),
        marks: Vec::with_capacity(capacity),
        dt,
    };
    let mut push = |t: f64, lattice: u32, mark: u32| {
        if let Some(&last) = grid.times.last() {
            if t == last {
                let i = grid.times.len() - 1;
                if lattice != NONE {
                    grid.lattice[i] = lattice;
                }
                if mark != NONE {
                    grid.marks[i] = mark;
                }
                return;
            }
        }
        grid.times.push(t);
        grid.lattice.push(lattice);
        grid.marks.push(mark);
    };
    let lattice_time = |i: u32| {
        if on_lattice && i == steps {
            horizon
        } else {
            i as f64 * dt
        }
    };
    let mut events = jumps
        .events
        .iter()
        .filter(|e| e.time > 0.0 && e.time <= horizon)
        .peekable();
    for i in 0..=steps {
        let t = lattice_time(i);
        while let Some(e) = events.next_if(|e| e.time < t) {
            push(e.time, NONE, e.mark as u32);
        }
        push(t, i, NONE);
    }
    for e in events {
        push(e.time, NONE, e.mark as u32);
    }
    if !on_lattice {
        push(horizon, NONE, NONE);
    }
    Ok(grid)
}

/// The randomness driving one path: Brownian increments per grid cell and
/// the jump stream, with every jump time on the grid.
///
/// Both integrators and the comparison bounds read the same record, which
/// is what makes pathwise comparisons meaningful.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRecord {
    pub(crate) grid: TimeGrid,
    pub(crate) dw: [Vec<f64>; 2],
    pub(crate) jumps: JumpStream,
}

impl NoiseRecord {
    pub fn sample(marks: &MarkTable, dt: f64, horizon: f64, streams: &PathStreams) -> Result<Self, SimError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(SimError::InvalidHorizon(horizon));
        }
        let jumps = sample_jumps(
            marks,
            horizon,
            &streams.stream(Channel::JumpTimes),
            &streams.stream(Channel::JumpMarks),
        );
        let grid = build_grid(dt, horizon, &jumps)?;
        let dw = Species::BOTH.map(|s| {
            let mut rng = streams.brownian(s).rng();
            grid.times
                .windows(2)
                .map(|w| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * (w[1] - w[0]).sqrt()
                })
                .collect()
        });
        Ok(NoiseRecord { grid, dw, jumps })
    }

    /// Builds a record from explicit increments; `dw1`, `dw2` must have one
    /// entry per grid cell.
    pub fn from_parts(grid: TimeGrid, dw1: Vec<f64>, dw2: Vec<f64>, jumps: JumpStream) -> Self {
        assert_eq!(dw1.len() + 1, grid.len(), "one increment per cell");
        assert_eq!(dw2.len() + 1, grid.len(), "one increment per cell");
        NoiseRecord {
            grid,
            dw: [dw1, dw2],
            jumps,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.grid.times
    }

    pub fn dw(&self, species: Species) -> &[f64] {
        &self.dw[species.index()]
    }

    pub fn jumps(&self) -> &JumpStream {
        &self.jumps
    }

    /// The same Brownian path and jumps on the grid with step `factor * dt`:
    /// increments of merged cells are summed.
    pub fn coarsen(&self, factor: u32) -> Result<NoiseRecord, SimError> {
        if factor == 0 {
            return Err(SimError::InvalidFactor);
        }
        let g = &self.grid;
        let last = g.len() - 1;
        let mut out = TimeGrid {
            times: vec![g.times[0]],
            lattice: vec![0],
            marks: vec![g.marks[0]],
            dt: g.dt * factor as f64,
        };
        let mut dw = [Vec::new(), Vec::new()];
        let mut acc = [0.0, 0.0];
        for i in 1..=last {
            acc[0] += self.dw[0][i - 1];
            acc[1] += self.dw[1][i - 1];
            let on_coarse = g.lattice_index(i).is_some_and(|l| l % factor == 0);
            if on_coarse || g.jump_at(i).is_some() || i == last {
                out.times.push(g.times[i]);
                out.lattice.push(
                    g.lattice_index(i)
                        .filter(|l| l % factor == 0)
                        .map_or(NONE, |l| l / factor),
                );
                out.marks.push(g.marks[i]);
                dw[0].push(std::mem::take(&mut acc[0]));
                dw[1].push(std::mem::take(&mut acc[1]));
            }
        }
        Ok(NoiseRecord {
            grid: out,
            dw,
            jumps: self.jumps.clone(),
        })
    }
}
