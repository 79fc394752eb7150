//! Reproducible random streams, compound-Poisson jump sampling, and the
//! jump transforms that enter the log-coordinate dynamics.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use serde::{Deserialize, Serialize};

use crate::coeffs::{MarkTable, Species};

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Address of an independent random stream.
///
/// The seed selects a ChaCha key and the stream id selects one of its 2^64
/// nonces, so every `(seed, stream_id)` pair reproduces the same draws no
/// matter which thread consumes it or in which order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut state = self.seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Independent noise sources consumed by one path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Brownian1 = 0,
    Brownian2 = 1,
    JumpTimes = 2,
    JumpMarks = 3,
}

/// All random streams belonging to path `path` of an ensemble seeded by `base_seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PathStreams {
    pub base_seed: u64,
    pub path: u64,
}

impl PathStreams {
    pub fn new(base_seed: u64, path: u64) -> Self {
        assert!(path < 1 << 62, "path index out of range");
        PathStreams { base_seed, path }
    }

    pub fn stream(&self, channel: Channel) -> RngStream {
        RngStream::new(self.base_seed, (self.path << 2) | channel as u64)
    }

    pub fn brownian(&self, species: Species) -> RngStream {
        match species {
            Species::X => self.stream(Channel::Brownian1),
            Species::Y => self.stream(Channel::Brownian2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub mark: usize,
}

/// Jump arrivals of a compound-Poisson process on `(0, horizon]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JumpStream {
    pub events: Vec<JumpEvent>,
    pub horizon: f64,
    pub total_rate: f64,
}

impl JumpStream {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Samples jump arrivals with exponential inter-arrival times at rate
/// `mu(Y)` and independent marks drawn with probability `mu_k / mu(Y)`.
/// Arrival times come from `times`, mark labels from `labels`.
pub fn sample_jumps(marks: &MarkTable, horizon: f64, times: &RngStream, labels: &RngStream) -> JumpStream {
    let rate = marks.total_mass();
    let mut stream = JumpStream {
        events: Vec::new(),
        horizon,
        total_rate: rate,
    };
    if marks.is_empty() || !(rate > 0.0) || !(horizon > 0.0) {
        return stream;
    }
    let gaps = Exp::new(rate).expect("jump rate is positive and finite");
    let picker = WeightedIndex::new(marks.marks().iter().map(|m| m.weight())).expect("mark weights are positive");
    let mut time_rng = times.rng();
    let mut label_rng = labels.rng();
    let mut t = 0.0f64;
    loop {
        let next = t + gaps.sample(&mut time_rng);
        // strictly increasing even if a gap underflows below one ulp
        let next = next.max(t.next_up());
        if next > horizon {
            break;
        }
        t = next;
        let mark = if marks.len() == 1 {
            0
        } else {
            picker.sample(&mut label_rng)
        };
        stream.events.push(JumpEvent { time: t, mark });
    }
    stream
}

/// `ln(1 + gamma_{species, mark}(t))`: the jump of the log-state.
#[inline]
pub fn log_jump_size(marks: &MarkTable, species: Species, t: f64, mark_index: usize) -> f64 {
    marks.marks()[mark_index].gamma(species).eval(t).ln_1p()
}

/// `(Σ_k mu_k gamma_k(t), Σ_k mu_k ln(1 + gamma_k(t)))`: the `dt`-compensators
/// of the relative jumps and of the log-jumps.
pub fn compensator_rates(marks: &MarkTable, species: Species, t: f64) -> (f64, f64) {
    marks.marks().iter().fold((0.0, 0.0), |(g, l), m| {
        let gamma = m.gamma(species).eval(t);
        (g + m.weight() * gamma, l + m.weight() * gamma.ln_1p())
    })
}

/// `sup_{t in [0, horizon]} Σ_k mu_k |gamma_k(t)|^q`, the moment constant
/// required for bounded `q`-th moments.
pub fn jump_q_moment(marks: &MarkTable, species: Species, q: f64, horizon: f64) -> f64 {
    let times = crate::coeffs::scan_times(marks.gammas(species), horizon);
    let total = |t: f64| -> f64 {
        marks
            .marks()
            .iter()
            .map(|m| m.weight() * m.gamma(species).eval(t).abs().powf(q))
            .sum()
    };
    times.into_iter().map(total).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{Coefficient, Mark};

    fn c(v: f64) -> Coefficient {
        Coefficient::constant(v).unwrap()
    }

    fn table(entries: &[(f64, f64)]) -> MarkTable {
        MarkTable::new(
            entries
                .iter()
                .map(|&(w, g)| Mark::new(w, c(g), c(g)).unwrap())
                .collect(),
        )
    }

    const LN_1_1: f64 = 0.095_310_179_804_324_86;
    const LN_0_5: f64 = -std::f64::consts::LN_2;

    #[test]
    fn empty_marks_give_empty_stream() {
        let s = sample_jumps(&MarkTable::empty(), 10.0, &RngStream::new(1, 2), &RngStream::new(1, 3));
        assert!(s.is_empty());
        assert_eq!(s.total_rate, 0.0);
    }

    #[test]
    fn streams_are_reproducible_and_sorted() {
        let marks = table(&[(1.0, 0.1), (2.0, -0.5)]);
        let ps = PathStreams::new(42, 7);
        let a = sample_jumps(
            &marks,
            50.0,
            &ps.stream(Channel::JumpTimes),
            &ps.stream(Channel::JumpMarks),
        );
        let b = sample_jumps(
            &marks,
            50.0,
            &ps.stream(Channel::JumpTimes),
            &ps.stream(Channel::JumpMarks),
        );
        assert_eq!(a, b);
        assert!(!a.is_empty());
        assert!(a.events.windows(2).all(|w| w[0].time < w[1].time));
        assert!(a.events.iter().all(|e| e.time > 0.0 && e.time <= 50.0 && e.mark < 2));
        let other = PathStreams::new(42, 8);
        let c = sample_jumps(
            &marks,
            50.0,
            &other.stream(Channel::JumpTimes),
            &other.stream(Channel::JumpMarks),
        );
        assert_ne!(a, c);
    }

    #[test]
    fn distinct_channels_draw_distinct_values() {
        use rand::Rng;
        let ps = PathStreams::new(0, 0);
        let draws: Vec<u64> = [
            Channel::Brownian1,
            Channel::Brownian2,
            Channel::JumpTimes,
            Channel::JumpMarks,
        ]
        .into_iter()
        .map(|ch| ps.stream(ch).rng().random())
        .collect();
        for i in 0..draws.len() {
            for j in i + 1..draws.len() {
                assert_ne!(draws[i], draws[j]);
            }
        }
    }

    #[test]
    fn poisson_count_statistics() {
        // mu(Y) = 2 split over two marks, horizon 10: counts ~ Poisson(20)
        let marks = table(&[(0.5, 0.1), (1.5, -0.2)]);
        let n = 10_000u64;
        let mut counts = Vec::with_capacity(n as usize);
        let mut mark0 = 0usize;
        let mut total = 0usize;
        for path in 0..n {
            let ps = PathStreams::new(2024, path);
            let s = sample_jumps(
                &marks,
                10.0,
                &ps.stream(Channel::JumpTimes),
                &ps.stream(Channel::JumpMarks),
            );
            counts.push(s.len() as f64);
            mark0 += s.events.iter().filter(|e| e.mark == 0).count();
            total += s.len();
        }
        let mean = counts.iter().sum::<f64>() / n as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // 3 sigma for the mean of 10^4 Poisson(20) counts: 3 sqrt(20/10^4)
        assert!((19.87..=20.13).contains(&mean), "mean {mean}");
        // sample variance of Poisson(20): sd ≈ sqrt((mu + 2 mu²)/n) ≈ 0.29
        assert!(
            (var - 20.0).abs() < 3.0 * ((20.0 + 2.0 * 400.0) / n as f64).sqrt(),
            "var {var}"
        );
        // mark frequencies: p0 = 0.25
        let p = mark0 as f64 / total as f64;
        assert!((p - 0.25).abs() < 3.0 * (0.25 * 0.75 / total as f64).sqrt(), "p {p}");
    }

    #[test]
    fn compensated_log_jumps_have_zero_mean() {
        let marks = table(&[(1.0, 0.1), (2.0, -0.5)]);
        let horizon = 10.0;
        let n = 4000u64;
        let (_, log_mass) = compensator_rates(&marks, Species::X, 0.0);
        let q: Vec<f64> = (0..n)
            .map(|path| {
                let ps = PathStreams::new(99, path);
                let s = sample_jumps(
                    &marks,
                    horizon,
                    &ps.stream(Channel::JumpTimes),
                    &ps.stream(Channel::JumpMarks),
                );
                s.events
                    .iter()
                    .map(|e| log_jump_size(&marks, Species::X, e.time, e.mark))
                    .sum::<f64>()
                    - log_mass * horizon
            })
            .collect();
        let mean = q.iter().sum::<f64>() / n as f64;
        let var = q.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 3.0 * (var / n as f64).sqrt(), "mean {mean}");
        // compensated-Poisson variance: horizon * Σ mu ln²(1+gamma)
        let expected_var = horizon * (LN_1_1 * LN_1_1 + 2.0 * LN_0_5 * LN_0_5);
        assert!((var / expected_var - 1.0).abs() < 0.1, "var {var} vs {expected_var}");
    }

    #[test]
    fn log_jump_size_examples() {
        let marks = table(&[(1.0, 0.0), (1.0, 0.1), (1.0, -0.5)]);
        assert_eq!(log_jump_size(&marks, Species::X, 0.0, 0), 0.0);
        assert!((log_jump_size(&marks, Species::X, 0.0, 1) - LN_1_1).abs() < 1e-16);
        assert!((log_jump_size(&marks, Species::Y, 0.0, 2) - LN_0_5).abs() < 1e-16);
    }

    #[test]
    fn compensator_examples() {
        assert_eq!(compensator_rates(&MarkTable::empty(), Species::X, 0.0), (0.0, 0.0));
        let (g, l) = compensator_rates(&table(&[(1.0, 0.1)]), Species::X, 0.0);
        assert!((g - 0.1).abs() < 1e-16 && (l - LN_1_1).abs() < 1e-16);
        let (g, l) = compensator_rates(&table(&[(1.0, 0.1), (2.0, -0.5)]), Species::Y, 0.0);
        assert!((g + 0.9).abs() < 1e-15);
        assert!((l - (-1.290_984_181_315_565_8)).abs() < 1e-15);
    }

    #[test]
    fn q_moment_examples() {
        assert_eq!(jump_q_moment(&MarkTable::empty(), Species::X, 2.0, 10.0), 0.0);
        assert!((jump_q_moment(&table(&[(1.0, 0.1)]), Species::X, 2.0, 10.0) - 0.01).abs() < 1e-16);
        let m = table(&[(1.0, 0.1), (2.0, -0.5)]);
        assert!((jump_q_moment(&m, Species::X, 1.0, 10.0) - 1.1).abs() < 1e-15);
    }

    #[test]
    fn q_moment_of_time_varying_gamma() {
        let g = Coefficient::sinusoid(0.1, 0.05, std::f64::consts::TAU, 0.0).unwrap();
        let m = MarkTable::new(vec![Mark::new(2.0, g.clone(), g).unwrap()]);
        let v = jump_q_moment(&m, Species::X, 2.0, 1.0);
        assert!((v - 2.0 * 0.15f64.powi(2)).abs() < 1e-12, "{v}");
    }
}
