use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};

/// Draws one vector from `Dir(beta · alpha)`.
///
/// Each coordinate is a `Gamma(beta · alpha_i, 1)` draw and the vector is
/// normalized by the sum. Draws are taken in log space
/// (`Gamma(a) = Gamma(a + 1) · U^(1/a)`) so that tiny concentrations, which
/// routinely underflow a direct gamma draw to zero, still normalize cleanly.
pub fn sample_output_vector<R: Rng + ?Sized>(
    alpha: &[f64],
    beta: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if alpha.is_empty() {
        return Err(Error::invalid("empty concentration vector"));
    }
    let conc: Vec<f64> = alpha.iter().map(|a| a * beta).collect();
    if let Some(c) = conc.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
        return Err(Error::invalid(format!(
            "concentration {c} must be positive and finite"
        )));
    }
    if conc.len() == 1 {
        return Ok(vec![1.0]);
    }
    let logs: Vec<f64> = conc
        .iter()
        .map(|&a| {
            if a < 1.0 {
                let g = Gamma::new(a + 1.0, 1.0)
                    .expect("positive shape")
                    .sample(rng);
                let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                g.ln() + u.ln() / a
            } else {
                Gamma::new(a, 1.0).expect("positive shape").sample(rng).ln()
            }
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut v: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= sum);
    Ok(v)
}
