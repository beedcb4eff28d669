use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::rng::SeedStream;

pub const DEFAULT_ALPHA: f64 = 0.2;

/// Mixing ratio λ ~ Beta(α, α).
pub fn sample_lambda(alpha: f64, stream: &mut SeedStream) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::invalid(e.to_string()))?;
    let lambda: f64 = beta.sample(stream.rng());
    Ok(lambda.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_positive_alpha() {
        let mut s = SeedStream::new(0);
        assert!(sample_lambda(0.0, &mut s).is_err());
        assert!(sample_lambda(-0.5, &mut s).is_err());
        assert!(sample_lambda(f64::NAN, &mut s).is_err());
    }

    #[test]
    fn draws_stay_in_unit_interval() {
        let mut s = SeedStream::new(1);
        for alpha in [0.05, 0.2, 1.0, 4.0] {
            for _ in 0..10_000 {
                let l = sample_lambda(alpha, &mut s).unwrap();
                assert!((0.0..=1.0).contains(&l));
            }
        }
    }

    #[test]
    fn deterministic() {
        let a: Vec<f64> = {
            let mut s = SeedStream::new(9);
            (0..50)
                .map(|_| sample_lambda(0.2, &mut s).unwrap())
                .collect()
        };
        let mut s = SeedStream::new(9);
        let b: Vec<f64> = (0..50)
            .map(|_| sample_lambda(0.2, &mut s).unwrap())
            .collect();
        assert_eq!(a, b);
    }
}
