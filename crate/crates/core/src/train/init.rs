use rand::Rng;

use crate::error::Result;
use crate::net::Mlp;

/// Scale factor for hidden rows: `0.7 * n1^(1/n0)`.
pub fn nguyen_widrow_beta(n0: usize, n1: usize) -> f64 {
    0.7 * (n1 as f64).powf(1.0 / n0 as f64)
}

/// Nguyen-Widrow initialization. Hidden rows are drawn uniform in [-0.5, 0.5] and
/// rescaled to Euclidean norm beta; hidden biases are uniform in [-beta, beta]; the
/// output layer is uniform in [-0.5, 0.5].
pub fn nguyen_widrow_init<R: Rng + ?Sized>(n0: usize, n1: usize, rng: &mut R) -> Result<Mlp> {
    let beta = nguyen_widrow_beta(n0, n1);
    let mut w1 = Vec::with_capacity(n1 * n0);
    for _ in 0..n1 {
        let row = loop {
            let row: Vec<f64> = (0..n0).map(|_| rng.gen_range(-0.5..=0.5)).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break row.into_iter().map(|v| v * beta / norm).collect::<Vec<_>>();
            }
        };
        w1.extend(row);
    }
    let b1: Vec<f64> = (0..n1).map(|_| rng.gen_range(-beta..=beta)).collect();
    let w2: Vec<f64> = (0..n1).map(|_| rng.gen_range(-0.5..=0.5)).collect();
    let b = rng.gen_range(-0.5..=0.5);
    Mlp::from_parts(n0, n1, &w1, &b1, &w2, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ParamId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn beta_for_fifteen_inputs_and_25_hidden() {
        // 25^(1/15) = exp(ln 25 / 15) = 1.2393558...
        let direct = 0.7 * (25f64.ln() / 15.0).exp();
        assert!((nguyen_widrow_beta(15, 25) - direct).abs() < 1e-15);
        assert!((direct - 0.867_549_054_070_5).abs() < 1e-12);
    }

    #[test]
    fn rows_have_norm_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = nguyen_widrow_init(15, 25, &mut rng).unwrap();
        let beta = nguyen_widrow_beta(15, 25);
        for i in 0..25 {
            let norm: f64 = (0..15)
                .map(|h| {
                    m.param(ParamId::HiddenWeight {
                        neuron: i,
                        input: h,
                    })
                    .powi(2)
                })
                .sum::<f64>()
                .sqrt();
            assert!((norm - beta).abs() < 1e-9);
            assert!(m.param(ParamId::HiddenBias { neuron: i }).abs() <= beta);
            assert!(m.param(ParamId::OutputWeight { neuron: i }).abs() <= 0.5);
        }
    }

    #[test]
    fn single_hidden_unit_beta() {
        for n0 in 1..6 {
            assert_eq!(nguyen_widrow_beta(n0, 1), 0.7);
        }
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = nguyen_widrow_init(4, 3, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = nguyen_widrow_init(4, 3, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
    }
}
