//! Stochastic strategy selection over fitness scores.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor added to every roulette-wheel weight so that the worst candidate stays selectable.
pub const ROULETTE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("no candidate strategies to select from")]
    NoCandidates,
    #[error("invalid selection policy: {0}")]
    InvalidPolicy(String),
    #[error("fitness values must be finite")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionKind {
    Boltzmann,
    RouletteWheel,
    UniformRandom,
    EpsilonGreedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    pub kind: SelectionKind,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_temperature() -> f64 {
    1.0
}

fn default_epsilon() -> f64 {
    0.1
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy::boltzmann(1.0)
    }
}

impl SelectionPolicy {
    pub fn boltzmann(temperature: f64) -> Self {
        SelectionPolicy {
            kind: SelectionKind::Boltzmann,
            temperature,
            epsilon: default_epsilon(),
        }
    }

    pub fn of_kind(kind: SelectionKind) -> Self {
        SelectionPolicy {
            kind,
            ..Default::default()
        }
    }

    pub fn epsilon_greedy(epsilon: f64) -> Self {
        SelectionPolicy {
            kind: SelectionKind::EpsilonGreedy,
            temperature: default_temperature(),
            epsilon,
        }
    }

    pub fn validate(&self) -> Result<(), SelectionError> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(SelectionError::InvalidPolicy(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(SelectionError::InvalidPolicy(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Selection probability of each candidate under `policy`.
pub fn selection_distribution(
    fitnesses: &[f64],
    policy: &SelectionPolicy,
) -> Result<Vec<f64>, SelectionError> {
    policy.validate()?;
    if fitnesses.is_empty() {
        return Err(SelectionError::NoCandidates);
    }
    if fitnesses.iter().any(|f| !f.is_finite()) {
        return Err(SelectionError::NonFinite);
    }
    let n = fitnesses.len();
    let max = fitnesses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = fitnesses.iter().copied().fold(f64::INFINITY, f64::min);
    let probs = match policy.kind {
        SelectionKind::Boltzmann => {
            let weights: Vec<f64> = fitnesses
                .iter()
                .map(|f| ((f - max) / policy.temperature).exp())
                .collect();
            normalize(weights)
        }
        SelectionKind::RouletteWheel => {
            normalize(fitnesses.iter().map(|f| (f - min).max(0.0) + ROULETTE_FLOOR).collect())
        }
        SelectionKind::UniformRandom => vec![1.0 / n as f64; n],
        SelectionKind::EpsilonGreedy => {
            // Ties for the best fitness share the greedy mass.
            let best = fitnesses.iter().filter(|&&f| f == max).count() as f64;
            let explore = policy.epsilon / n as f64;
            fitnesses
                .iter()
                .map(|&f| {
                    if f == max {
                        (1.0 - policy.epsilon) / best + explore
                    } else {
                        explore
                    }
                })
                .collect()
        }
    };
    Ok(probs)
}

fn normalize(weights: Vec<f64>) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Inverse-CDF draw of an index from a probability vector.
pub fn draw_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize, SelectionError> {
    if probs.is_empty() {
        return Err(SelectionError::NoCandidates);
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    // Rounding left `acc` slightly below one; fall back to the last non-zero entry.
    Ok(probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1))
}

/// Draws one of `candidates` given their fitness values.
pub fn select<'a, T, R: Rng + ?Sized>(
    candidates: &'a [T],
    fitnesses: &[f64],
    policy: &SelectionPolicy,
    rng: &mut R,
) -> Result<&'a T, SelectionError> {
    if candidates.is_empty() {
        return Err(SelectionError::NoCandidates);
    }
    assert_eq!(candidates.len(), fitnesses.len(), "one fitness per candidate");
    let probs = selection_distribution(fitnesses, policy)?;
    let idx = draw_index(&probs, rng)?;
    tracing::trace!(?policy.kind, idx, p = probs[idx], "selection draw");
    Ok(&candidates[idx])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn boltzmann_two_point() {
        let e = std::f64::consts::E;
        let p = selection_distribution(&[1.0, 0.0], &SelectionPolicy::boltzmann(1.0)).unwrap();
        assert!(close(&p, &[e / (1.0 + e), 1.0 / (1.0 + e)], 1e-12));
        assert!((p[0] - 0.731_059).abs() < 1e-6);
    }

    #[test]
    fn symmetric_inputs_are_uniform() {
        for t in [0.1, 1.0, 5.0] {
            let p = selection_distribution(&[0.4, 0.4, 0.4], &SelectionPolicy::boltzmann(t)).unwrap();
            assert!(close(&p, &[1.0 / 3.0; 3], 1e-12));
        }
    }

    #[test]
    fn epsilon_greedy_mixture() {
        let p = selection_distribution(&[2.0, 1.0], &SelectionPolicy::epsilon_greedy(0.1)).unwrap();
        assert!(close(&p, &[0.95, 0.05], 1e-12));
    }

    #[test]
    fn roulette_min_shift_and_floor() {
        let p = selection_distribution(
            &[-1.0, 0.0, 1.0],
            &SelectionPolicy::of_kind(SelectionKind::RouletteWheel),
        )
        .unwrap();
        assert!(p[0] > 0.0 && p[0] < 1e-5);
        assert!((p[2] / p[1] - (2.0 + ROULETTE_FLOOR) / (1.0 + ROULETTE_FLOOR)).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(
            selection_distribution(&[], &SelectionPolicy::default()),
            Err(SelectionError::NoCandidates)
        );
        assert!(selection_distribution(&[1.0], &SelectionPolicy::boltzmann(0.0)).is_err());
        assert!(selection_distribution(&[1.0], &SelectionPolicy::epsilon_greedy(1.5)).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let empty: [u8; 0] = [];
        assert_eq!(
            select(&empty, &[], &SelectionPolicy::default(), &mut rng).unwrap_err(),
            SelectionError::NoCandidates
        );
    }

    #[test]
    fn single_candidate_always_chosen() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            assert_eq!(*select(&["only"], &[-3.0], &SelectionPolicy::default(), &mut rng).unwrap(), "only");
        }
    }

    #[test]
    fn lower_temperature_sharpens() {
        let cold = selection_distribution(&[1.0, 0.0], &SelectionPolicy::boltzmann(0.1)).unwrap();
        let hot = selection_distribution(&[1.0, 0.0], &SelectionPolicy::boltzmann(3.0)).unwrap();
        assert!(cold[0] > hot[0]);
    }

    #[test]
    fn seeded_draws_reproduce() {
        let items: Vec<u32> = (0..10).collect();
        let fit: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| *select(&items, &fit, &SelectionPolicy::default(), &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
    }
}
