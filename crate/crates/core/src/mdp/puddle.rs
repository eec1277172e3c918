use rand_distr::{Distribution, Normal};

use super::{check_gamma, ActionId, Mdp, StateVec};
use crate::error::{invalid, Result};
use crate::rng::RngStream;

/// Continuous navigation on the unit square.
///
/// Actions: 0 stay, 1 east, 2 west, 3 north, 4 south, each moving `step` before
/// Gaussian noise; positions are clipped to the square. The reward of `(s, a)`
/// is evaluated at the noiseless successor: `r_max·(1 − dist/√2)`, reduced by
/// `puddle_penalty` inside the puddle disc, clipped to `[0, r_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PuddleNav {
    pub noise_sd: f64,
    pub gamma: f64,
    pub step: f64,
    pub goal: [f64; 2],
    pub puddle_center: [f64; 2],
    pub puddle_radius: f64,
    pub puddle_penalty: f64,
    pub r_max: f64,
}

pub fn puddle_nav_mdp(noise_sd: f64, gamma: f64) -> Result<PuddleNav> {
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(invalid(format!("noise_sd must be finite and non-negative, got {noise_sd}")));
    }
    check_gamma(gamma)?;
    Ok(PuddleNav {
        noise_sd,
        gamma,
        step: 0.1,
        goal: [0.85, 0.85],
        puddle_center: [0.5, 0.5],
        puddle_radius: 0.15,
        puddle_penalty: 0.5,
        r_max: 1.0,
    })
}

const DIRECTIONS: [[f64; 2]; 5] = [[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];

impl PuddleNav {
    /// Noiseless successor of `s` under `a`.
    pub fn displaced(&self, s: &StateVec, a: ActionId) -> [f64; 2] {
        let d = DIRECTIONS[a.0];
        let c = s.coords();
        [
            (c[0] + self.step * d[0]).clamp(0.0, 1.0),
            (c[1] + self.step * d[1]).clamp(0.0, 1.0),
        ]
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl Mdp for PuddleNav {
    fn dimension(&self) -> usize {
        2
    }

    fn action_count(&self) -> usize {
        DIRECTIONS.len()
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn r_max(&self) -> f64 {
        self.r_max
    }

    fn reward(&self, s: &StateVec, a: ActionId) -> f64 {
        let p = self.displaced(s, a);
        let mut r = 1.0 - dist(p, self.goal) / std::f64::consts::SQRT_2;
        if dist(p, self.puddle_center) < self.puddle_radius {
            r -= self.puddle_penalty;
        }
        (r * self.r_max).clamp(0.0, self.r_max)
    }

    fn sample_next(&self, s: &StateVec, a: ActionId, rng: &mut RngStream) -> StateVec {
        let mean = self.displaced(s, a);
        if self.noise_sd == 0.0 {
            return StateVec(mean.to_vec());
        }
        let noise = Normal::new(0.0, self.noise_sd).expect("validated noise_sd");
        StateVec(mean.iter().map(|m| (m + noise.sample(rng)).clamp(0.0, 1.0)).collect())
    }

    fn describe(&self) -> String {
        format!("puddle(noise_sd={}, gamma={})", self.noise_sd, self.gamma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn stay_at_goal_pays_r_max() {
        let m = puddle_nav_mdp(0.0, 0.9).unwrap();
        let s = StateVec(m.goal.to_vec());
        assert_eq!(m.reward(&s, ActionId(0)), m.r_max);
    }

    #[test]
    fn deterministic_step_displacement() {
        let m = puddle_nav_mdp(0.0, 0.9).unwrap();
        let s = StateVec(vec![0.3, 0.3]);
        let mut rng = stream(0, &[]);
        let next = m.sample_next(&s, ActionId(1), &mut rng);
        assert!((next.0[0] - 0.4).abs() < 1e-15 && next.0[1] == 0.3);
        let next = m.sample_next(&s, ActionId(3), &mut rng);
        assert!((next.0[1] - 0.4).abs() < 1e-15 && next.0[0] == 0.3);
    }

    #[test]
    fn noisy_mean_matches_displacement() {
        let m = puddle_nav_mdp(0.05, 0.9).unwrap();
        let s = StateVec(vec![0.4, 0.6]);
        let mut rng = stream(17, &[]);
        let n = 10_000;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let x = m.sample_next(&s, ActionId(2), &mut rng);
            for i in 0..2 {
                sum[i] += x.0[i];
                sq[i] += x.0[i] * x.0[i];
            }
        }
        let expect = [0.3, 0.6];
        for i in 0..2 {
            let mean = sum[i] / n as f64;
            let var = sq[i] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            assert!((mean - expect[i]).abs() <= 3.0 * se, "coord {i}: {mean} vs {}", expect[i]);
        }
    }

    #[test]
    fn rewards_stay_in_range() {
        let m = puddle_nav_mdp(0.1, 0.95).unwrap();
        let mut rng = stream(2, &[]);
        for _ in 0..5_000 {
            let s = StateVec(vec![rng.random(), rng.random()]);
            for a in 0..5 {
                let r = m.reward(&s, ActionId(a));
                assert!((0.0..=m.r_max).contains(&r));
                let next = m.sample_next(&s, ActionId(a), &mut rng);
                assert!(next.0.iter().all(|x| (0.0..=1.0).contains(x)));
            }
        }
    }

    #[test]
    fn rejects_negative_noise() {
        assert!(puddle_nav_mdp(-0.1, 0.9).is_err());
        assert!(puddle_nav_mdp(0.1, 1.2).is_err());
    }
}
