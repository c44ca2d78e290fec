use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::diagnostics::RunRecord;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::InitScheme;

use super::{run_many, TrainConfig};

/// Sampling ranges and stopping rule of [`random_search`]. Learning rate and
/// weight decay are sampled log-uniformly, everything else uniformly. A range
/// with equal ends always yields that value.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub lr: (f64, f64),
    pub weight_decay: (f64, f64),
    /// `(min, max, step)`.
    pub width: (usize, usize, usize),
    /// Open interval.
    pub dropout: (f64, f64),
    pub resolution: (f64, f64),
    pub init_const: (f64, f64),
    pub weight_norm: (f64, f64),
    pub energy_norm: (f64, f64),
    /// Consecutive non-improving candidates before stopping.
    pub stall_limit: usize,
    /// Hard cap on evaluated candidates.
    pub max_candidates: usize,
    /// Wall-clock limit checked between candidates. Makes the result depend
    /// on machine speed.
    pub budget: Option<Duration>,
    pub quick_runs: usize,
    pub final_runs: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            lr: (1e-6, 1e-1),
            weight_decay: (1e-5, 1e-1),
            width: (100, 5000, 100),
            dropout: (0.0, 1.0),
            resolution: (-1.0, 5.0),
            init_const: (0.1, 5.0),
            weight_norm: (1.0, 15.0),
            energy_norm: (25.0, 2500.0),
            stall_limit: 64,
            max_candidates: 1000,
            budget: None,
            quick_runs: 3,
            final_runs: 20,
        }
    }
}

impl SearchSpace {
    /// The default ranges with widths cut to `8..=64` for CPU-sized runs.
    pub fn desk() -> Self {
        Self {
            width: (8, 64, 8),
            ..Self::default()
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::InvalidConfig(format!("unknown search space {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("bad search range for {what}")));
        let ordered = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
        for (name, r) in [("lr", self.lr), ("weight-decay", self.weight_decay)] {
            if !ordered(r) || r.0 <= 0.0 {
                return bad(name);
            }
        }
        for (name, r) in [
            ("resolution", self.resolution),
            ("init-const", self.init_const),
            ("weight-norm", self.weight_norm),
            ("energy-norm", self.energy_norm),
        ] {
            if !ordered(r) {
                return bad(name);
            }
        }
        if self.init_const.0 <= 0.0 || self.weight_norm.0 <= 0.0 || self.energy_norm.0 <= 0.0 {
            return bad("positive constants");
        }
        let (lo, hi, step) = self.width;
        if lo == 0 || step == 0 || lo > hi {
            return bad("width");
        }
        let (d0, d1) = self.dropout;
        if !ordered(self.dropout) || d0 < 0.0 || d1 > 1.0 || (d0 == d1 && d0 == 1.0) {
            return bad("dropout");
        }
        if self.stall_limit == 0 || self.max_candidates == 0 || self.quick_runs == 0 || self.final_runs == 0 {
            return bad("counts");
        }
        Ok(())
    }

    /// Draws one candidate from `template`. Patch constants are sampled only
    /// for patches the template enables; the init constant only for normal
    /// initialization.
    pub fn sample(&self, template: &TrainConfig, rng: &mut impl Rng) -> TrainConfig {
        let mut c = template.clone();
        c.adam.lr = log_uniform(self.lr, rng);
        c.adam.weight_decay = log_uniform(self.weight_decay, rng);
        let (lo, hi, step) = self.width;
        c.width = lo + step * rng.random_range(0..=(hi - lo) / step);
        c.patch.dropout = open_uniform(self.dropout, rng);
        if template.patch.resolution.is_some() {
            c.patch.resolution = Some(uniform(self.resolution, rng));
        }
        if template.patch.init_scheme == InitScheme::Normal {
            c.patch.init_const = uniform(self.init_const, rng);
        }
        if template.patch.weight_norm.is_some() {
            c.patch.weight_norm = Some(uniform(self.weight_norm, rng));
        }
        if template.patch.energy_norm.is_some() {
            c.patch.energy_norm = Some(uniform(self.energy_norm, rng));
        }
        c
    }
}

fn uniform((lo, hi): (f64, f64), rng: &mut impl Rng) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn open_uniform((lo, hi): (f64, f64), rng: &mut impl Rng) -> f64 {
    if lo == hi {
        return lo;
    }
    loop {
        let v = rng.random_range(lo..hi);
        if v > lo {
            return v;
        }
    }
}

fn log_uniform((lo, hi): (f64, f64), rng: &mut impl Rng) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo.ln()..hi.ln()).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub index: usize,
    pub config: TrainConfig,
    /// Mean validation accuracy of the quick runs; failed runs score 0.
    pub score: f64,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: TrainConfig,
    pub best_score: f64,
    pub candidates: Vec<Candidate>,
    /// The best configuration rerun `final_runs` times.
    pub final_records: Vec<RunRecord>,
}

fn score(records: &[RunRecord]) -> (f64, usize) {
    let mut failed = 0;
    let total: f64 = records
        .iter()
        .map(|r| match (&r.failure, &r.summary) {
            (None, Some(s)) => s.metrics.val_acc,
            _ => {
                failed += 1;
                0.0
            }
        })
        .sum();
    (total / records.len() as f64, failed)
}

/// Seeded random search. Every candidate is scored by `quick_runs` runs with
/// seeds `template.seed + k`. The search stops after `stall_limit`
/// consecutive candidates without a strictly better score, after
/// `max_candidates`, or when the budget runs out.
pub fn random_search(
    data: &Dataset,
    space: &SearchSpace,
    template: &TrainConfig,
    seed: u64,
    exec: Execution,
) -> Result<SearchResult> {
    space.validate()?;
    template.validate()?;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates: Vec<Candidate> = Vec::new();
    let mut best: Option<usize> = None;
    let mut stalled = 0;
    while candidates.len() < space.max_candidates && stalled < space.stall_limit {
        if space.budget.is_some_and(|b| started.elapsed() >= b) {
            log::info!("search budget exhausted after {} candidates", candidates.len());
            break;
        }
        let mut cfg = space.sample(template, &mut rng);
        cfg.runs = space.quick_runs;
        let index = candidates.len();
        let records = run_many(&cfg, data, &format!("cand{index}-"), exec)?;
        let (s, n_failed) = score(&records);
        log::info!("candidate {index}: score {s:.4} ({n_failed} failed)");
        if best.is_none_or(|b| s > candidates[b].score) {
            best = Some(index);
            stalled = 0;
        } else {
            stalled += 1;
        }
        candidates.push(Candidate {
            index,
            config: cfg,
            score: s,
            n_failed,
        });
    }
    let best = best.expect("at least one candidate");
    let mut best_cfg = candidates[best].config.clone();
    best_cfg.runs = space.final_runs;
    let final_records = run_many(&best_cfg, data, "final-", exec)?;
    Ok(SearchResult {
        best: best_cfg,
        best_score: candidates[best].score,
        candidates,
        final_records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_stay_in_range() {
        let space = SearchSpace::default();
        let mut template = TrainConfig::default();
        template.patch.resolution = Some(1.0);
        template.patch.energy_norm = Some(800.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let c = space.sample(&template, &mut rng);
            assert!((1e-6..1e-1).contains(&c.adam.lr));
            assert!((1e-5..1e-1).contains(&c.adam.weight_decay));
            assert!(c.width % 100 == 0 && (100..=5000).contains(&c.width));
            assert!(c.patch.dropout > 0.0 && c.patch.dropout < 1.0);
            assert!((-1.0..5.0).contains(&c.patch.resolution.unwrap()));
            assert!((25.0..2500.0).contains(&c.patch.energy_norm.unwrap()));
            assert_eq!(c.patch.weight_norm, None);
            assert_eq!(c.patch.init_const, 1.0);
            c.validate().unwrap();
        }
    }

    #[test]
    fn log_uniform_is_uniform_in_log_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 20_000;
        let below = (0..n)
            .filter(|_| log_uniform((1e-6, 1e-1), &mut rng) < 10f64.powf(-3.5))
            .count();
        let frac = below as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn same_seed_same_candidates() {
        let space = SearchSpace::desk();
        let t = TrainConfig::default();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..10).map(|_| space.sample(&t, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(4), draw(4));
        assert_ne!(draw(4), draw(5));
    }

    #[test]
    fn invalid_spaces_are_rejected() {
        let s = SearchSpace { lr: (0.0, 1.0), ..SearchSpace::default() };
        assert!(s.validate().is_err());
        let s = SearchSpace { width: (100, 50, 10), ..SearchSpace::default() };
        assert!(s.validate().is_err());
        assert!(SearchSpace::by_name("bayes").is_err());
    }
}
