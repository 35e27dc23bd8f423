use log::warn;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{log_sum_exp, ModelParams};

/// Losses at or below zero are raised to this floor before taking logarithms.
pub const LOSS_FLOOR: f64 = 1e-12;

/// Shared global model and the adaptive loss power.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub extractor: ModelParams,
    pub classifier: ModelParams,
    pub q: f64,
    /// Population std of the selected clients' losses in the previous round.
    pub prev_loss_std: Option<f64>,
    /// Completed rounds.
    pub round: usize,
}

/// Number of clients sampled per round, `ceil(fraction · M)` clamped to `[1, M]`.
pub fn selection_size(n_clients: usize, fraction: f64) -> usize {
    ((fraction * n_clients as f64).ceil() as usize).clamp(1, n_clients)
}

/// Uniform sample without replacement, returned in ascending client order.
pub fn select_clients<R: Rng + ?Sized>(n_clients: usize, fraction: f64, rng: &mut R) -> Vec<usize> {
    let k = selection_size(n_clients, fraction);
    let mut picked = index::sample(rng, n_clients, k).into_vec();
    picked.sort_unstable();
    picked
}

/// One step of the loss-power schedule:
/// `q' = q + η_q · (σ_new − σ_prev) / ((σ_new + σ_prev) / 2)`, floored at zero.
pub fn adapt_q(q: f64, prev_std: f64, new_std: f64, eta_q: f64) -> f64 {
    let mean = (new_std + prev_std) / 2.0;
    if mean == 0.0 {
        return q;
    }
    let next = q + eta_q * (new_std - prev_std) / mean;
    if next < 0.0 {
        warn!("loss power would drop to {next}; flooring at 0");
        0.0
    } else {
        next
    }
}

/// `λ_m = L_m^q / Σ_i L_i^q`, evaluated as `exp(q ln L_m − logsumexp_i(q ln L_i))`.
/// `q = 0` yields exactly `1/n`.
pub fn aggregation_weights(losses: &[f64], q: f64) -> Result<Vec<f64>> {
    if losses.is_empty() {
        return Err(Error::Usage("aggregation over zero clients".into()));
    }
    if let Some(bad) = losses.iter().find(|l| l.is_nan() || l.is_infinite()) {
        return Err(Error::Numerical(format!("non-finite client loss {bad}")));
    }
    let n = losses.len();
    if q == 0.0 {
        return Ok(vec![1.0 / n as f64; n]);
    }
    let logs: Vec<f64> = losses
        .iter()
        .map(|&l| {
            if l <= 0.0 {
                warn!("client loss {l} is not positive; clamping to {LOSS_FLOOR}");
                q * LOSS_FLOOR.ln()
            } else {
                q * l.ln()
            }
        })
        .collect();
    let norm = log_sum_exp(&logs);
    Ok(logs.iter().map(|v| (v - norm).exp()).collect())
}

/// λ-weighted combination of the clients' extractor and classifier copies,
/// reduced in the order given.
pub fn aggregate(
    extractors: &[&ModelParams],
    classifiers: &[&ModelParams],
    weights: &[f64],
) -> Result<(ModelParams, ModelParams)> {
    Ok((
        ModelParams::convex_combination(extractors, weights)?,
        ModelParams::convex_combination(classifiers, weights)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn q_schedule_hand_values() {
        assert_eq!(adapt_q(10.0, 1.0, 3.0, 0.5), 10.5);
        assert_eq!(adapt_q(10.0, 3.0, 1.0, 0.5), 9.5);
        assert_eq!(adapt_q(10.0, 2.0, 2.0, 0.5), 10.0);
        assert_eq!(adapt_q(10.0, 0.0, 0.0, 0.5), 10.0);
        assert_eq!(adapt_q(0.5, 3.0, 1.0, 1.0), 0.0);
    }

    #[test]
    fn weights_hand_values() {
        let w = aggregation_weights(&[1.0, 2.0], 1.0).unwrap();
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-15 && (w[1] - 2.0 / 3.0).abs() < 1e-15);
        let w = aggregation_weights(&[1.0, 2.0], 10.0).unwrap();
        assert!((w[0] - 1.0 / 1025.0).abs() < 1e-12);
        assert!((w[1] - 1024.0 / 1025.0).abs() < 1e-12);
        assert_eq!(aggregation_weights(&[0.3, 7.0, 2.0], 0.0).unwrap(), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn nonpositive_losses_are_floored() {
        let w = aggregation_weights(&[0.0, 1.0], 1.0).unwrap();
        assert!(w[0] > 0.0 && w[0] < 1e-11);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(aggregation_weights(&[f64::NAN, 1.0], 1.0).is_err());
    }

    #[test]
    fn selection_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_clients(7, 1.0, &mut rng), (0..7).collect::<Vec<_>>());
        let s = select_clients(10, 0.3, &mut rng);
        assert_eq!(s.len(), 3);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        let run = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| select_clients(10, 0.5, &mut r)).collect::<Vec<_>>()
        };
        assert_eq!(run(4), run(4));
        assert_eq!(selection_size(10, 0.01), 1);
    }

    proptest! {
        #[test]
        fn weights_form_scale_invariant_distribution(
            losses in prop::collection::vec(0.01f64..20.0, 1..12),
            q in 0.0f64..50.0,
            scale in 0.01f64..100.0,
        ) {
            let w = aggregation_weights(&losses, q).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            let scaled: Vec<f64> = losses.iter().map(|l| l * scale).collect();
            let ws = aggregation_weights(&scaled, q).unwrap();
            for (a, b) in w.iter().zip(&ws) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn q_moves_with_dispersion(q in 0.0f64..30.0, a in 0.001f64..5.0, b in 0.001f64..5.0, eta in 0.01f64..2.0) {
            let next = adapt_q(q, a, b, eta);
            if b > a { prop_assert!(next > q); }
            if b < a { prop_assert!(next < q || next == 0.0); }
            if a == b { prop_assert_eq!(next, q); }
        }
    }
}
