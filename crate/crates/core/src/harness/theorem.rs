use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::random_connected_graph;
use crate::error::{Error, Result};
use crate::graph_ops::{build_renormalized_affinity, check_energy_loss, degree_root_vector};
use crate::linalg::DenseVector;

/// Relative tolerance for energy preservation along the degree-root vector.
pub const EQUALITY_TOL: f64 = 1e-12;

/// Outcome of [`verify_theorem`].
#[derive(Debug, Clone, PartialEq)]
pub struct TheoremReport {
    pub trials: usize,
    /// Random signals whose energy grew under `ReLU ∘ Â`.
    pub violations: usize,
    /// Largest `out/in` ratio seen on random signals.
    pub max_ratio: f64,
    /// Largest `|out − in| / in` along the degree-root vector.
    pub equality_residual: f64,
    /// Probes orthogonal to the degree-root vector that lost energy strictly.
    pub strict_losses: usize,
    /// Relative losses `1 − out/in` of those probes, sorted ascending.
    pub strict_margins: Vec<f64>,
}

impl TheoremReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.equality_residual <= EQUALITY_TOL && self.strict_losses == self.trials
    }

    pub fn margin_quantile(&self, q: f64) -> f64 {
        if self.strict_margins.is_empty() {
            return f64::NAN;
        }
        let k = ((self.strict_margins.len() - 1) as f64 * q).round() as usize;
        self.strict_margins[k]
    }
}

fn gaussian(n: usize, rng: &mut impl Rng) -> DenseVector {
    DenseVector::new((0..n).map(|_| rng.sample(StandardNormal)).collect())
}

/// Checks `‖ReLU(Â x)‖² ≤ ‖x‖²` on random connected graphs with
/// `2..=max_nodes` nodes. Each trial probes one Gaussian signal, the
/// degree-root vector and a Gaussian signal projected orthogonal to it.
pub fn verify_theorem(trials: usize, max_nodes: usize, seed: u64) -> Result<TheoremReport> {
    if trials == 0 {
        return Err(Error::InvalidConfig("verify-theorem needs at least one trial".into()));
    }
    if max_nodes < 2 {
        return Err(Error::InvalidConfig("verify-theorem needs max_nodes >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = TheoremReport {
        trials,
        violations: 0,
        max_ratio: 0.0,
        equality_residual: 0.0,
        strict_losses: 0,
        strict_margins: Vec::with_capacity(trials),
    };
    for _ in 0..trials {
        let n = rng.random_range(2..=max_nodes);
        let density = rng.random_range(0.0..0.5);
        let g = random_connected_graph(n, density, &mut rng)?;
        let op = build_renormalized_affinity(&g);

        let x = gaussian(n, &mut rng);
        let c = check_energy_loss(&op, &x)?;
        if !c.holds {
            report.violations += 1;
        }
        report.max_ratio = report.max_ratio.max(c.energy_out / c.energy_in);

        let v = degree_root_vector(&g);
        let c = check_energy_loss(&op, &v)?;
        report.equality_residual = report
            .equality_residual
            .max((c.energy_out - c.energy_in).abs() / c.energy_in);

        let y = gaussian(n, &mut rng);
        let coef = y.dot(&v) / v.dot(&v);
        let probe = DenseVector::new(
            y.as_slice()
                .iter()
                .zip(v.as_slice())
                .map(|(a, b)| a - coef * b)
                .collect(),
        );
        let c = check_energy_loss(&op, &probe)?;
        if c.energy_out < c.energy_in {
            report.strict_losses += 1;
            report.strict_margins.push(1.0 - c.energy_out / c.energy_in);
        }
    }
    report.strict_margins.sort_by(f64::total_cmp);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_passes() {
        let r = verify_theorem(200, 20, 1).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.max_ratio <= 1.0 + 1e-12);
        assert!(r.margin_quantile(0.0) > 0.0);
        assert_eq!(r, verify_theorem(200, 20, 1).unwrap());
    }

    #[test]
    fn rejects_degenerate_arguments() {
        assert!(verify_theorem(0, 10, 0).is_err());
        assert!(verify_theorem(10, 1, 0).is_err());
    }
}
