//! Success probabilities of voting-based search versus RANSAC under a
//! Poisson outlier model, in closed form and by simulation.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoremParams {
    pub p_in: f64,
    pub kappa: usize,
    /// RANSAC iterations `J`.
    pub iterations: usize,
    /// Inliers among the seeds, `|C̃_in|`.
    pub seed_inliers: usize,
    /// Poisson rate factor `α`.
    pub alpha: f64,
    /// Total correspondences, for simulation.
    pub n_total: usize,
}

impl TheoremParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_in > 0.0 && self.p_in < 1.0) {
            return Err(Error::InvalidInput(format!("p_in must lie in (0, 1), got {}", self.p_in)));
        }
        if self.kappa == 0 {
            return Err(Error::InvalidInput("kappa must be at least 1".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidInput(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        Ok(())
    }

    fn inlier_count(&self) -> usize {
        (self.p_in * self.n_total as f64).floor() as usize
    }
}

/// `U = −(1/κ)·ln[1 − (1 − p_in^κ)^{J/|C̃_in|}]`.
pub fn bound_u(p: &TheoremParams) -> Result<f64> {
    p.validate()?;
    if p.iterations == 0 || p.seed_inliers == 0 {
        return Err(Error::InvalidInput("bound needs J ≥ 1 and at least one seed inlier".into()));
    }
    let k = p.kappa as f64;
    let a = p.iterations as f64 / p.seed_inliers as f64 * (-p.p_in.powf(k)).ln_1p();
    let arg = -a.exp_m1();
    if !(arg > 0.0 && arg < 1.0) {
        return Err(Error::Degenerate(format!("log argument {arg} outside (0, 1)")));
    }
    Ok(-arg.ln() / k)
}

/// `1 − (1 − p_in^κ)^J`.
pub fn ransac_success_upper(p: &TheoremParams) -> f64 {
    if p.iterations == 0 {
        return 0.0;
    }
    -(p.iterations as f64 * (-p.p_in.powf(p.kappa as f64)).ln_1p()).exp_m1()
}

/// `1 − (1 − e^{−ακ})^{|C̃_in|}`.
pub fn ours_success_lower(p: &TheoremParams) -> f64 {
    if p.seed_inliers == 0 {
        return 0.0;
    }
    -(p.seed_inliers as f64 * (-(-p.alpha * p.kappa as f64).exp()).ln_1p()).exp_m1()
}

/// Probability that a uniform `κ`-subset of `N` items with `⌊p_in·N⌋`
/// inliers is all inliers.
pub fn all_inlier_probability(p: &TheoremParams) -> f64 {
    let (n, m) = (p.n_total, p.inlier_count());
    (0..p.kappa).map(|i| m.saturating_sub(i) as f64 / n.saturating_sub(i).max(1) as f64).product()
}

/// `1 − (1 − C(|C_in|, κ)/C(N, κ))^J`: RANSAC success with sampling without replacement.
pub fn ransac_success_exact(p: &TheoremParams) -> f64 {
    let q = all_inlier_probability(p);
    if q >= 1.0 {
        return if p.iterations == 0 { 0.0 } else { 1.0 };
    }
    -(p.iterations as f64 * (-q).ln_1p()).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloResult {
    pub empirical_ours: f64,
    pub empirical_ransac: f64,
    /// `√(p(1−p)/trials)` at the analytic probabilities.
    pub se_ours: f64,
    pub se_ransac: f64,
    pub analytic_ours: f64,
    pub analytic_ransac: f64,
    pub exact_ransac: f64,
}

fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Simulates both processes. Trial `i` uses ChaCha8 streams `2i` (voting)
/// and `2i+1` (RANSAC) of `seed`, so results do not depend on scheduling.
pub fn monte_carlo_theorem1(p: &TheoremParams, trials: usize, seed: u64) -> Result<MonteCarloResult> {
    p.validate()?;
    if trials == 0 {
        return Err(Error::InvalidInput("at least one trial is required".into()));
    }
    let inliers = p.inlier_count();
    if inliers < p.kappa || p.n_total < p.kappa {
        return Err(Error::InvalidInput(format!(
            "need ⌊p_in·N⌋ ≥ κ, got {inliers} inliers for κ = {}",
            p.kappa
        )));
    }
    let rate = p.alpha * p.kappa as f64;
    let poisson = if rate > 0.0 {
        Some(Poisson::new(rate).map_err(|e| Error::InvalidInput(e.to_string()))?)
    } else {
        None
    };

    let ours = |i: u64| -> bool {
        let Some(dist) = &poisson else { return p.seed_inliers > 0 };
        let mut rng = trial_rng(seed, 2 * i);
        (0..p.seed_inliers).any(|_| dist.sample(&mut rng) == 0.0)
    };
    // sequential draws without replacement, stopping at the first outlier
    let ransac = |i: u64| -> bool {
        let mut rng = trial_rng(seed, 2 * i + 1);
        (0..p.iterations).any(|_| {
            (0..p.kappa).all(|d| {
                let remaining = (p.n_total - d) as f64;
                rng.random::<f64>() * remaining < (inliers - d) as f64
            })
        })
    };
    let (hits_ours, hits_ransac) = (0..trials as u64)
        .into_par_iter()
        .map(|i| (usize::from(ours(i)), usize::from(ransac(i))))
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));

    let analytic_ours = ours_success_lower(p);
    let exact_ransac = ransac_success_exact(p);
    let se = |q: f64| (q * (1.0 - q) / trials as f64).sqrt();
    Ok(MonteCarloResult {
        empirical_ours: hits_ours as f64 / trials as f64,
        empirical_ransac: hits_ransac as f64 / trials as f64,
        se_ours: se(analytic_ours),
        se_ransac: se(exact_ransac),
        analytic_ours,
        analytic_ransac: ransac_success_upper(p),
        exact_ransac,
    })
}

/// Cartesian grid of parameters; `α` is set to `alpha_factor · U` per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoremGrid {
    pub p_in: Vec<f64>,
    pub kappa: Vec<usize>,
    pub iterations: Vec<usize>,
    pub seed_inliers: Vec<usize>,
    pub alpha_factor: f64,
    pub n_total: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for TheoremGrid {
    fn default() -> Self {
        Self {
            p_in: vec![0.05, 0.1, 0.2, 0.5],
            kappa: vec![2, 4, 8],
            iterations: vec![10, 100],
            seed_inliers: vec![5, 50],
            alpha_factor: 0.99,
            n_total: 1000,
            trials: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub params: TheoremParams,
    pub bound: f64,
    pub result: MonteCarloResult,
}

impl TheoremGrid {
    pub fn cells(&self) -> Vec<TheoremParams> {
        let mut out = Vec::new();
        for &p_in in &self.p_in {
            for &kappa in &self.kappa {
                for &iterations in &self.iterations {
                    for &seed_inliers in &self.seed_inliers {
                        out.push(TheoremParams {
                            p_in,
                            kappa,
                            iterations,
                            seed_inliers,
                            alpha: 0.0,
                            n_total: self.n_total,
                        });
                    }
                }
            }
        }
        out
    }

    /// Evaluates every cell; cell `c` simulates with seed `seed + c`.
    pub fn run(&self) -> Result<Vec<GridCell>> {
        if !(self.alpha_factor >= 0.0 && self.alpha_factor.is_finite()) {
            return Err(Error::Config(format!("alpha factor must be non-negative, got {}", self.alpha_factor)));
        }
        self.cells()
            .into_iter()
            .enumerate()
            .map(|(c, mut params)| {
                let bound = bound_u(&params)?;
                params.alpha = self.alpha_factor * bound;
                let result = monte_carlo_theorem1(&params, self.trials, self.seed.wrapping_add(c as u64))?;
                Ok(GridCell { params, bound, result })
            })
            .collect()
    }
}

pub fn grid_csv(cells: &[GridCell]) -> String {
    let mut out = String::from(
        "p_in,kappa,J,seed_inliers,alpha,U,analytic_ours,analytic_ransac,empirical_ours,empirical_ransac,se_ours,se_ransac,exact_ransac\n",
    );
    for c in cells {
        let (p, r) = (&c.params, &c.result);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.p_in,
            p.kappa,
            p.iterations,
            p.seed_inliers,
            p.alpha,
            c.bound,
            r.analytic_ours,
            r.analytic_ransac,
            r.empirical_ours,
            r.empirical_ransac,
            r.se_ours,
            r.se_ransac,
            r.exact_ransac
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn params(p_in: f64, kappa: usize, iterations: usize, seed_inliers: usize, alpha: f64) -> TheoremParams {
        TheoremParams {
            p_in,
            kappa,
            iterations,
            seed_inliers,
            alpha,
            n_total: 1000,
        }
    }

    #[test]
    fn closed_form_examples() {
        let u = bound_u(&params(0.5, 2, 4, 2, 0.0)).unwrap();
        assert_abs_diff_eq!(u, -0.5 * 0.4375f64.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(u, 0.4133, epsilon = 1e-4);
        assert!(bound_u(&params(0.0, 2, 4, 2, 0.0)).is_err());
        assert!(bound_u(&params(1.0, 2, 4, 2, 0.0)).is_err());

        assert_abs_diff_eq!(ransac_success_upper(&params(0.5, 2, 1, 1, 0.0)), 0.25, epsilon = 1e-15);
        assert_eq!(ransac_success_upper(&params(0.5, 2, 0, 1, 0.0)), 0.0);
        assert_abs_diff_eq!(ransac_success_upper(&params(0.3, 1, 7, 1, 0.0)), 1.0 - 0.7f64.powi(7), epsilon = 1e-14);

        assert_eq!(ours_success_lower(&params(0.5, 2, 4, 3, 0.0)), 1.0);
        assert_abs_diff_eq!(ours_success_lower(&params(0.5, 2, 4, 2, 0.2)), 1.0 - (1.0 - (-0.4f64).exp()).powi(2), epsilon = 1e-14);
        assert_abs_diff_eq!(ours_success_lower(&params(0.5, 2, 4, 2, 0.2)), 0.8913, epsilon = 1e-4);
        assert_eq!(ours_success_lower(&params(0.5, 2, 4, 0, 0.2)), 0.0);
    }

    #[test]
    fn bounds_meet_at_alpha_equal_u() {
        for p in [0.05, 0.2, 0.5] {
            for k in [2, 4, 8] {
                let mut t = params(p, k, 100, 50, 0.0);
                t.alpha = bound_u(&t).unwrap();
                let (a, b) = (ours_success_lower(&t), ransac_success_upper(&t));
                assert!((a - b).abs() <= 1e-9 * b.max(1e-300), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn bound_vanishes_as_ransac_iterations_grow() {
        let us: Vec<f64> = [1, 10, 100, 1000].iter().map(|&j| bound_u(&params(0.3, 2, j, 5, 0.0)).unwrap()).collect();
        assert!(us.windows(2).all(|w| w[1] < w[0]), "{us:?}");
        assert!(*us.last().unwrap() < 1e-6);
    }

    #[test]
    fn exact_ransac_uses_the_hypergeometric_ratio() {
        let t = params(0.1, 2, 3, 1, 0.0);
        let q = (100.0 * 99.0) / (1000.0 * 999.0);
        assert_abs_diff_eq!(ransac_success_exact(&t), 1.0 - (1.0f64 - q).powi(3), epsilon = 1e-15);
    }

    #[test]
    fn zero_alpha_always_succeeds() {
        let r = monte_carlo_theorem1(&params(0.2, 4, 10, 5, 0.0), 1000, 1).unwrap();
        assert_eq!(r.empirical_ours, 1.0);
    }

    #[test]
    fn simulation_matches_closed_forms() {
        let t = params(0.3, 3, 20, 5, 0.4);
        let r = monte_carlo_theorem1(&t, 100_000, 7).unwrap();
        assert!((r.empirical_ours - r.analytic_ours).abs() < 3.0 * r.se_ours, "{r:?}");
        assert!((r.empirical_ransac - r.exact_ransac).abs() < 3.0 * r.se_ransac, "{r:?}");
        assert_eq!(r, monte_carlo_theorem1(&t, 100_000, 7).unwrap());
        assert!(monte_carlo_theorem1(&t, 0, 7).is_err());
        assert!(monte_carlo_theorem1(&TheoremParams { n_total: 5, ..t }, 10, 7).is_err());
    }

    #[test]
    fn grid_csv_layout() {
        let grid = TheoremGrid {
            p_in: vec![0.5],
            kappa: vec![2],
            iterations: vec![10],
            seed_inliers: vec![5, 50],
            trials: 100,
            ..TheoremGrid::default()
        };
        let csv = grid_csv(&grid.run().unwrap());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("p_in,kappa,J,seed_inliers,alpha,U,"));
        assert!(lines.iter().all(|l| l.split(',').count() == 13));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn ours_dominates_below_the_bound(p in 0.02f64..0.98, k in 1usize..10, j in 1usize..500, c in 1usize..100, f in 0.0f64..1.0) {
            let mut t = params(p, k, j, c, 0.0);
            if let Ok(u) = bound_u(&t) {
                t.alpha = f * u;
                let (a, b) = (ours_success_lower(&t), ransac_success_upper(&t));
                prop_assert!(a >= b - 1e-12 * b.max(1e-300), "{} < {}", a, b);
            }
        }

        #[test]
        fn bound_monotonicity(p in 0.02f64..0.9, dp in 0.001f64..0.08, k in 1usize..8, j in 1usize..200, c in 1usize..60) {
            let base = params(p, k, j, c, 0.0);
            let hi_p = params(p + dp, k, j, c, 0.0);
            let more_j = params(p, k, j + 1, c, 0.0);
            let more_seeds = params(p, k, j, c + 1, 0.0);
            if let (Ok(a), Ok(b), Ok(m), Ok(s)) = (bound_u(&base), bound_u(&hi_p), bound_u(&more_j), bound_u(&more_seeds)) {
                prop_assert!(b <= a, "U rose with p_in: {} -> {}", a, b);
                prop_assert!(m <= a, "U rose with J: {} -> {}", a, m);
                prop_assert!(s >= a, "U fell with seed inliers: {} -> {}", a, s);
            }
        }
    }
}
