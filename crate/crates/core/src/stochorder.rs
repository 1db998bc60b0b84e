//! Concave stochastic order: an exact tester for finite laws, an empirical
//! tester with normal confidence bands, the convolution coupling identity, and
//! the angle-function characterisation of majorization.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::envlat::{ConfigEnumeration, EnvSpec};
use crate::error::{Error, Result};
use crate::increments::{convolve, is_majorized, is_symmetric_unimodal, IncrementDist};
use crate::polymer_dt::{joint_partition_distribution, FiniteDist, TransferPlan};
use crate::stats::substream;

/// Verdict on `X <=_cv Y`, i.e. `E f(X) <= E f(Y)` for every concave `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcaveOrderReport {
    pub verdict: bool,
    /// `E X - E Y`.
    pub mean_gap: f64,
    /// Test points: the union of both supports.
    pub points: Vec<f64>,
    /// `E min(X, a) - E min(Y, a)` at each test point.
    pub point_gaps: Vec<f64>,
    /// Largest of `|mean_gap|` and the point gaps; the verdict holds iff this is `<= tol`.
    pub worst_violation: f64,
}

struct AngleTable {
    values: Vec<f64>,
    /// `prefix_mass[k] = P(X < values[k])`, `prefix_mean[k] = E[X; X < values[k]]`.
    prefix_mass: Vec<f64>,
    prefix_mean: Vec<f64>,
}

impl AngleTable {
    fn new(d: &FiniteDist) -> Self {
        let mut values = Vec::with_capacity(d.atoms().len());
        let mut prefix_mass = vec![0.0];
        let mut prefix_mean = vec![0.0];
        for &(v, p) in d.atoms() {
            values.push(v);
            prefix_mass.push(prefix_mass.last().unwrap() + p);
            prefix_mean.push(prefix_mean.last().unwrap() + p * v);
        }
        Self { values, prefix_mass, prefix_mean }
    }

    /// `E min(X, a) = E[X; X < a] + a P(X >= a)`.
    fn angle(&self, a: f64) -> f64 {
        let k = self.values.partition_point(|&v| v < a);
        self.prefix_mean[k] + a * (1.0 - self.prefix_mass[k])
    }
}

/// Exact test of `X <=_cv Y` for finitely supported laws: equal means and
/// `E min(X, a) <= E min(Y, a)` at every atom `a` of either law. Angle
/// functions and affine functions generate the concave cone on a finite set,
/// so these finitely many inequalities are equivalent to the order.
pub fn concave_order_exact(x: &FiniteDist, y: &FiniteDist, tol: f64) -> ConcaveOrderReport {
    let tx = AngleTable::new(x);
    let ty = AngleTable::new(y);
    let mut points: Vec<f64> = tx.values.iter().chain(&ty.values).copied().collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let point_gaps: Vec<f64> = points.iter().map(|&a| tx.angle(a) - ty.angle(a)).collect();
    let mean_gap = x.mean() - y.mean();
    let worst_violation = point_gaps.iter().copied().fold(mean_gap.abs(), f64::max);
    ConcaveOrderReport { verdict: worst_violation <= tol, mean_gap, points, point_gaps, worst_violation }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalOptions {
    /// Width of the normal band in standard errors.
    pub z: f64,
    /// Treat `xs[k]` and `ys[k]` as drawn together.
    pub paired: bool,
    /// Widen `z` for the number of simultaneous tests.
    pub bonferroni: bool,
}

impl Default for EmpiricalOptions {
    fn default() -> Self {
        Self { z: 3.0, paired: false, bonferroni: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalGap {
    pub a: f64,
    pub gap: f64,
    pub se: f64,
    /// `gap - z * se`; positive means a violation at the stated confidence.
    pub lower: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalOrderReport {
    /// "consistent with order" or "violation".
    pub verdict: String,
    pub consistent: bool,
    pub rows: Vec<EmpiricalGap>,
    pub mean_gap: f64,
    pub mean_gap_se: f64,
    pub z_used: f64,
    pub grid_size: usize,
    pub n_x: usize,
    pub n_y: usize,
    /// Set when either sample has fewer than 30 draws.
    pub small_sample_warning: bool,
}

fn mean_se(xs: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = xs.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Statistical surrogate of `X <=_cv Y` from samples: per grid point the gap
/// `E min(X, a) - E min(Y, a)` with a normal band, plus a two-sided test of
/// equal means.
pub fn concave_order_empirical(
    xs: &[f64],
    ys: &[f64],
    grid: &[f64],
    opts: EmpiricalOptions,
) -> Result<EmpiricalOrderReport> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::InvalidParameter("empty sample".into()));
    }
    if opts.paired && xs.len() != ys.len() {
        return Err(Error::LengthMismatch { left: xs.len(), right: ys.len() });
    }
    let z = if opts.bonferroni {
        let normal = Normal::standard();
        let alpha = 2.0 * (1.0 - normal.cdf(opts.z));
        normal.inverse_cdf(1.0 - alpha / (2.0 * (grid.len() + 1) as f64))
    } else {
        opts.z
    };
    let gap_of = |f: &dyn Fn(f64) -> f64| -> (f64, f64) {
        if opts.paired {
            mean_se(xs.iter().zip(ys).map(|(&x, &y)| f(x) - f(y)), xs.len())
        } else {
            let (mx, sx) = mean_se(xs.iter().map(|&x| f(x)), xs.len());
            let (my, sy) = mean_se(ys.iter().map(|&y| f(y)), ys.len());
            (mx - my, (sx * sx + sy * sy).sqrt())
        }
    };
    let rows: Vec<EmpiricalGap> = grid
        .iter()
        .map(|&a| {
            let (gap, se) = gap_of(&|v: f64| v.min(a));
            EmpiricalGap { a, gap, se, lower: gap - z * se }
        })
        .collect();
    let (mean_gap, mean_gap_se) = gap_of(&|v| v);
    let consistent = rows.iter().all(|r| r.lower <= 0.0) && mean_gap.abs() <= z * mean_gap_se;
    Ok(EmpiricalOrderReport {
        verdict: if consistent { "consistent with order" } else { "violation" }.to_string(),
        consistent,
        rows,
        mean_gap,
        mean_gap_se,
        z_used: z,
        grid_size: grid.len(),
        n_x: xs.len(),
        n_y: ys.len(),
        small_sample_warning: xs.len() < 30 || ys.len() < 30,
    })
}

/// `k` pooled-sample quantiles, a convenient grid for [`concave_order_empirical`].
pub fn quantile_grid(xs: &[f64], ys: &[f64], k: usize) -> Vec<f64> {
    let mut pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
    pooled.sort_by(f64::total_cmp);
    if pooled.is_empty() {
        return Vec::new();
    }
    let mut grid: Vec<f64> =
        (1..=k).map(|j| pooled[((j as f64 / (k + 1) as f64) * (pooled.len() - 1) as f64).round() as usize]).collect();
    grid.dedup();
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    /// `max_omega |sum_y Q(y) Z^{p1}(theta^y omega) - Z^{p1*q}(omega)|`.
    pub max_defect: f64,
    pub verdict: bool,
    pub n_environments: u64,
    pub n_shift_paths: usize,
}

/// Checks `sum_y Q(y) Z^{p1}_t(theta^y omega) = Z^{p1*q}_t(omega)` for every
/// environment on the reachable window of `p1 * q`, where `Q` is the law of the
/// `q`-walk.
pub fn coupling_identity_check(
    spec: &EnvSpec,
    p1: &IncrementDist,
    q: &IncrementDist,
    t: usize,
    cap: u64,
    tol: f64,
) -> Result<CouplingReport> {
    let pq = convolve(p1, q)?;
    let window = pq.reachable_window(t);
    let target = TransferPlan::new(&pq, t, &window, None)?;
    let shifted = q
        .paths(t)
        .into_iter()
        .map(|(y, prob)| Ok((TransferPlan::new(p1, t, &window, Some(&y))?, prob)))
        .collect::<Result<Vec<_>>>()?;
    let en = ConfigEnumeration::new(spec, window.n_cells(), cap)?;
    let mut max_defect: f64 = 0.0;
    en.for_each(|values, _| {
        let lhs: f64 = shifted.iter().map(|(plan, prob)| prob * plan.evaluate(values)).sum();
        max_defect = max_defect.max((lhs - target.evaluate(values)).abs());
    });
    Ok(CouplingReport {
        max_defect,
        verdict: max_defect <= tol,
        n_environments: en.n_configurations(),
        n_shift_paths: shifted.len(),
    })
}

/// Decides `c <=_M d` through `sum f(c_i) >= sum f(d_i)` for the angle functions
/// `f = min(., a)`, `a` ranging over the entries of both vectors, together with
/// `f = +-identity` (equal totals).
pub fn majorization_concave_sum_check(c: &[f64], d: &[f64], tol: f64) -> Result<bool> {
    if c.len() != d.len() {
        return Err(Error::LengthMismatch { left: c.len(), right: d.len() });
    }
    if (c.iter().sum::<f64>() - d.iter().sum::<f64>()).abs() > tol {
        return Ok(false);
    }
    Ok(c.iter().chain(d).all(|&a| {
        let sc: f64 = c.iter().map(|x| x.min(a)).sum();
        let sd: f64 = d.iter().map(|x| x.min(a)).sum();
        sc >= sd - tol
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjectureScanOptions {
    /// Steps are supported on `{-k..k}`.
    pub k: i64,
    pub horizon: usize,
    pub spec: EnvSpec,
    pub n_random_pairs: usize,
    /// Exponents for the `e^{-|i|^alpha}` family; every ordered pair is scanned.
    pub alphas: Vec<f64>,
    pub cap: u64,
    pub tol: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjectureRow {
    pub label: String,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub majorized: bool,
    /// Whether `Z^q <=_cv Z^p` holds exactly.
    pub concave_order: bool,
    pub worst_violation: f64,
    pub agree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjectureScan {
    pub label: String,
    pub rows: Vec<ConjectureRow>,
    pub disagreements: usize,
}

fn random_symmetric_unimodal<R: Rng + ?Sized>(k: i64, rng: &mut R) -> Result<IncrementDist> {
    let mut w: Vec<f64> = (0..=k).map(|_| rng.random::<f64>() + 1e-3).collect();
    w.sort_by(|a, b| b.total_cmp(a));
    let z = w[0] + 2.0 * w[1..].iter().sum::<f64>();
    let atoms: Vec<(i64, f64)> = (-k..=k).map(|i| (i, w[i.unsigned_abs() as usize] / z)).collect();
    IncrementDist::from_1d(&atoms)
}

fn probs_on(p: &IncrementDist, k: i64) -> Vec<f64> {
    (-k..=k).map(|i| p.prob_of(&[i])).collect()
}

/// Exploratory: compares `p <=_M q` with the exact order `Z^q <=_cv Z^p` for
/// symmetric unimodal step laws. Disagreements are reported, nothing is asserted.
pub fn conjecture_scan(opts: &ConjectureScanOptions) -> Result<ConjectureScan> {
    let mut pairs: Vec<(String, IncrementDist, IncrementDist)> = Vec::new();
    let mut rng = substream(opts.seed, 0);
    for j in 0..opts.n_random_pairs {
        let p = random_symmetric_unimodal(opts.k, &mut rng)?;
        let q = random_symmetric_unimodal(opts.k, &mut rng)?;
        pairs.push((format!("random-{j}"), p, q));
    }
    for &a in &opts.alphas {
        for &b in &opts.alphas {
            if a != b {
                pairs.push((
                    format!("heavy-tail alpha {a} vs {b}"),
                    crate::increments::heavy_tail_increments(a, opts.k)?,
                    crate::increments::heavy_tail_increments(b, opts.k)?,
                ));
            }
        }
    }
    let mut rows = Vec::with_capacity(pairs.len());
    for (label, p, q) in pairs {
        debug_assert!(is_symmetric_unimodal(&p) && is_symmetric_unimodal(&q));
        let (pv, qv) = (probs_on(&p, opts.k), probs_on(&q, opts.k));
        let majorized = is_majorized(&pv, &qv, opts.tol).verdict;
        let joint = joint_partition_distribution(&opts.spec, &q, &p, opts.horizon, opts.cap)?;
        let report = concave_order_exact(&joint.marginal(0)?, &joint.marginal(1)?, opts.tol);
        rows.push(ConjectureRow {
            label,
            p: pv,
            q: qv,
            majorized,
            concave_order: report.verdict,
            worst_violation: report.worst_violation,
            agree: majorized == report.verdict,
        });
    }
    let disagreements = rows.iter().filter(|r| !r.agree).count();
    Ok(ConjectureScan { label: "exploratory: no acceptance claim".into(), rows, disagreements })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envlat::DEFAULT_ENUM_CAP;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Exp};

    fn fd(atoms: &[(f64, f64)]) -> FiniteDist {
        FiniteDist::new(atoms.to_vec()).unwrap()
    }

    #[test]
    fn identical_laws_are_ordered_both_ways() {
        let x = fd(&[(0.0, 0.2), (1.0, 0.5), (3.0, 0.3)]);
        assert!(concave_order_exact(&x, &x, 0.0).verdict);
    }

    #[test]
    fn spread_is_below_its_mean() {
        let x = fd(&[(0.0, 0.5), (2.0, 0.5)]);
        let y = FiniteDist::dirac(1.0).unwrap();
        let r = concave_order_exact(&x, &y, 1e-12);
        assert!(r.verdict);
        // a = 1: E min(X,1) = 0.5 against 1
        let k = r.points.iter().position(|&a| a == 1.0).unwrap();
        assert!((r.point_gaps[k] + 0.5).abs() < 1e-15);
        assert!(!concave_order_exact(&y, &x, 1e-12).verdict);
    }

    #[test]
    fn unequal_means_fail() {
        let x = FiniteDist::dirac(1.0).unwrap();
        let y = FiniteDist::dirac(2.0).unwrap();
        let r = concave_order_exact(&x, &y, 1e-12);
        assert!(!r.verdict);
        assert_eq!(r.mean_gap, -1.0);
    }

    #[test]
    fn angle_table_matches_direct_expectation() {
        let x = fd(&[(0.0, 0.1), (0.5, 0.2), (1.5, 0.3), (4.0, 0.4)]);
        let t = AngleTable::new(&x);
        for a in [0.0, 0.25, 0.5, 1.0, 1.5, 3.0, 4.0, 10.0] {
            assert!((t.angle(a) - x.angle(a)).abs() < 1e-15);
        }
    }

    #[test]
    fn empirical_identical_samples() {
        let xs: Vec<f64> = (0..100).map(|k| k as f64 / 10.0).collect();
        let grid = quantile_grid(&xs, &xs, 9);
        let r = concave_order_empirical(&xs, &xs, &grid, EmpiricalOptions::default()).unwrap();
        assert!(r.consistent && r.rows.iter().all(|g| g.gap == 0.0));
        assert!(!r.small_sample_warning);
        let r = concave_order_empirical(&xs[..10], &xs[..10], &grid, EmpiricalOptions::default()).unwrap();
        assert!(r.small_sample_warning);
    }

    #[test]
    fn empirical_detects_spread() {
        // X in {0, 2} vs the constant 1: X <=_cv Y holds, the reverse fails
        let mut rng = substream(3, 0);
        let xs: Vec<f64> = (0..5000).map(|_| if rand::Rng::random::<bool>(&mut rng) { 2.0 } else { 0.0 }).collect();
        let ys = vec![1.0; 5000];
        let grid = [0.5, 1.0, 1.5];
        let opts = EmpiricalOptions::default();
        assert!(concave_order_empirical(&xs, &ys, &grid, opts).unwrap().consistent);
        assert!(!concave_order_empirical(&ys, &xs, &grid, opts).unwrap().consistent);
        let b = EmpiricalOptions { bonferroni: true, ..opts };
        assert!(concave_order_empirical(&xs, &ys, &grid, b).unwrap().z_used > 3.0);
    }

    #[test]
    fn empirical_paired_requires_equal_lengths() {
        let opts = EmpiricalOptions { paired: true, ..Default::default() };
        assert!(concave_order_empirical(&[1.0, 2.0], &[1.0], &[1.0], opts).is_err());
        let exp = Exp::new(1.0).unwrap();
        let mut rng = substream(4, 0);
        let xs: Vec<f64> = (0..1000).map(|_| exp.sample(&mut rng)).collect();
        let r = concave_order_empirical(&xs, &xs, &[0.5, 1.0], opts).unwrap();
        assert!(r.rows.iter().all(|g| g.se == 0.0 && g.gap == 0.0));
    }

    #[test]
    fn coupling_identity_examples() {
        let spec = EnvSpec::bernoulli_obstacles(0.4).unwrap();
        let srw = IncrementDist::from_1d(&[(-1, 0.5), (1, 0.5)]).unwrap();
        let r = coupling_identity_check(&spec, &srw, &IncrementDist::dirac(1), 3, DEFAULT_ENUM_CAP, 0.0).unwrap();
        assert!(r.verdict);
        assert_eq!(r.max_defect, 0.0);
        let r = coupling_identity_check(&spec, &IncrementDist::dirac(1), &srw, 2, DEFAULT_ENUM_CAP, 1e-12).unwrap();
        assert!(r.verdict);
        assert_eq!(r.n_shift_paths, 4);
        let b = IncrementDist::binomial(1, 0.3).unwrap();
        let spec3 = EnvSpec::new(vec![(-1.0, 0.2), (0.0, 0.5), (1.0, 0.3)]).unwrap();
        let r = coupling_identity_check(&spec3, &b, &b, 2, DEFAULT_ENUM_CAP, 1e-12).unwrap();
        assert!(r.verdict, "defect {}", r.max_defect);
    }

    #[test]
    fn coupling_cap_is_reported() {
        let spec = EnvSpec::bernoulli_obstacles(0.4).unwrap();
        let p = IncrementDist::uniform_1d(-1, 1).unwrap();
        assert!(matches!(coupling_identity_check(&spec, &p, &p, 3, 1000, 1e-12), Err(Error::InstanceTooLarge { .. })));
    }

    #[test]
    fn convolution_gives_concave_order() {
        let spec = EnvSpec::new(vec![(-1.0, 0.3), (0.5, 0.7)]).unwrap();
        let p1 = IncrementDist::from_1d(&[(0, 0.6), (1, 0.4)]).unwrap();
        let q = IncrementDist::from_1d(&[(-1, 0.5), (1, 0.5)]).unwrap();
        let p2 = convolve(&p1, &q).unwrap();
        let j = joint_partition_distribution(&spec, &p1, &p2, 2, DEFAULT_ENUM_CAP).unwrap();
        let (z1, z2) = (j.marginal(0).unwrap(), j.marginal(1).unwrap());
        assert!(concave_order_exact(&z1, &z2, 1e-10).verdict);
        assert!(!concave_order_exact(&z2, &z1, 1e-10).verdict);
    }

    #[test]
    fn concave_sum_examples() {
        assert!(majorization_concave_sum_check(&[0.5, 0.5], &[1.0, 0.0], 1e-12).unwrap());
        assert!(!majorization_concave_sum_check(&[1.0, 0.0], &[0.5, 0.5], 1e-12).unwrap());
        assert!(majorization_concave_sum_check(&[0.2, 0.3, 0.5], &[0.5, 0.2, 0.3], 1e-12).unwrap());
        assert!(majorization_concave_sum_check(&[1.0], &[1.0, 0.0], 1e-12).is_err());
    }

    #[test]
    fn conjecture_scan_runs_and_labels() {
        let opts = ConjectureScanOptions {
            k: 1,
            horizon: 2,
            spec: EnvSpec::bernoulli_obstacles(0.5).unwrap(),
            n_random_pairs: 5,
            alphas: vec![0.5, 2.0],
            cap: DEFAULT_ENUM_CAP,
            tol: 1e-10,
            seed: 1,
        };
        let scan = conjecture_scan(&opts).unwrap();
        assert_eq!(scan.rows.len(), 7);
        assert_eq!(scan.label, "exploratory: no acceptance claim");
    }

    fn prob_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, n).prop_map(|w| {
            let z: f64 = w.iter().sum::<f64>() + 1e-9;
            w.iter().map(|x| x / z).collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn concave_sums_agree_with_partial_sums(c in prob_vec(4), d in prob_vec(4)) {
            // renormalise d to c's exact total
            let sc: f64 = c.iter().sum();
            let sd: f64 = d.iter().sum();
            let d: Vec<f64> = d.iter().map(|x| x * sc / sd).collect();
            let a = majorization_concave_sum_check(&c, &d, 1e-12).unwrap();
            let b = is_majorized(&c, &d, 1e-12).verdict;
            prop_assert_eq!(a, b);
        }

        #[test]
        fn exact_order_antisymmetry(a in prob_vec(3), b in prob_vec(3)) {
            let vals = [0.0, 1.0, 2.5];
            let mk = |w: &Vec<f64>| {
                let z: f64 = w.iter().sum();
                FiniteDist::new(vals.iter().zip(w).map(|(&v, &p)| (v, p / z)).collect()).unwrap()
            };
            let (x, y) = (mk(&a), mk(&b));
            if concave_order_exact(&x, &y, 1e-12).verdict && concave_order_exact(&y, &x, 1e-12).verdict {
                for v in vals {
                    let px: f64 = x.atoms().iter().filter(|t| t.0 == v).map(|t| t.1).sum();
                    let py: f64 = y.atoms().iter().filter(|t| t.0 == v).map(|t| t.1).sum();
                    prop_assert!((px - py).abs() < 1e-9);
                }
            }
        }
    }
}
