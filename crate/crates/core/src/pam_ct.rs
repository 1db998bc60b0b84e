//! Continuous-time partition functions among space-time marks: certified
//! intervals by uniformization, path Monte Carlo, the Anderson equation solved
//! directly, and finite-horizon Lyapunov estimators.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::envlat::{origin, sample_mark_set_with, MarkLaw, MarkSet, Site};
use crate::error::{Error, Result};
use crate::increments::BoxLattice;
use crate::stats::{par_replicas, poisson_cutoff, poisson_tail, MCEstimate};

/// Largest box (in sites) the exact solvers will allocate.
pub const MAX_BOX_SITES: usize = 4_000_000;

const ODE_TAIL_EPS: f64 = 1e-15;

/// Certified enclosure `lo <= Z <= hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub lo: f64,
    pub hi: f64,
    pub box_radius: i64,
    /// Largest series cutoff used on any inter-mark interval.
    pub cutoff: u64,
    pub eps: f64,
}

impl IntervalEstimate {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

fn check_common(kappa: f64, t: f64) -> Result<()> {
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidParameter(format!("jump rate {kappa} must be >= 0")));
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("horizon {t} must be positive")));
    }
    Ok(())
}

/// Product of `1 + r` over marks with `r > 0`: no path can collect more.
fn bonus_factor<'a>(marks: impl Iterator<Item = &'a crate::envlat::Mark>) -> f64 {
    marks.filter(|m| m.r > 0.0).map(|m| 1.0 + m.r).product()
}

/// `Z^kappa_t = E_0[prod over marks (s, i, r) with X_s = i of (1 + r)]` for the
/// rate-`kappa` simple random walk, enclosed in `[lo, hi]` with `hi - lo < eps`.
///
/// The walk's mass is evolved from `delta_0` on the box `{-R..R}^d`, absorbed
/// on exit, with uniformized transition operators between consecutive mark
/// times; at each mark the mass at its site is multiplied by `1 + r`. `lo` is
/// the absorbed mass; `hi` adds the exit probability and the discarded series
/// mass, both weighted by the largest achievable bonus.
pub fn ct_partition_exact(marks: &MarkSet, kappa: f64, t: f64, eps: f64) -> Result<IntervalEstimate> {
    check_common(kappa, t)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps = {eps} must be positive")));
    }
    let dim = marks.dim();
    let active: Vec<_> = marks.marks().iter().filter(|m| m.time <= t).collect();
    if kappa == 0.0 {
        let o = origin(dim);
        let z: f64 = active.iter().filter(|m| m.site == o).map(|m| 1.0 + m.r).product();
        return Ok(IntervalEstimate { lo: z, hi: z, box_radius: 0, cutoff: 0, eps });
    }
    let bonus = bonus_factor(active.iter().copied());
    let mean = kappa * t;
    let mut radius: i64 = 1;
    while bonus * poisson_tail(mean, radius as u64 + 1) >= eps / 2.0 {
        radius += 1;
    }
    let tail_eps = eps / (2.0 * bonus * (active.len() + 1) as f64);
    let side = (2 * radius + 1) as f64;
    if side.powi(dim as i32) > MAX_BOX_SITES as f64 {
        let cutoff = poisson_cutoff(mean, tail_eps);
        return Err(Error::ResourceLimit(format!(
            "eps = {eps} needs box radius R = {radius} and series cutoff N = {cutoff} in dimension {dim}"
        )));
    }
    let lattice = BoxLattice::new(dim, radius);
    let mut v = vec![0.0; lattice.len()];
    v[lattice.index(&origin(dim)).expect("origin in box")] = 1.0;
    let mut s = 0.0;
    let mut dropped = 0.0;
    let mut cutoff = 0;
    let mut advance = |v: &mut Vec<f64>, dt: f64| {
        if dt > 0.0 {
            dropped += lattice.evolve(v, kappa * dt, tail_eps);
            cutoff = cutoff.max(poisson_cutoff(kappa * dt, tail_eps));
        }
    };
    for m in &active {
        advance(&mut v, m.time - s);
        if let Some(i) = lattice.index(&m.site) {
            v[i] *= 1.0 + m.r;
        }
        s = m.time;
    }
    advance(&mut v, t - s);
    let lo: f64 = v.iter().sum();
    let bound = bonus * (poisson_tail(mean, radius as u64 + 1) + dropped);
    Ok(IntervalEstimate { lo, hi: lo + bound, box_radius: radius, cutoff, eps })
}

/// Mark lists per site, sorted by time.
pub struct MarkIndex {
    by_site: HashMap<Site, Vec<(f64, f64)>>,
}

impl MarkIndex {
    pub fn new(marks: &MarkSet) -> Self {
        Self { by_site: marks.by_site() }
    }

    /// Product of `1 + r` over marks at `site` with time in `[from, to)`.
    pub fn factor(&self, site: &[i64], from: f64, to: f64) -> f64 {
        match self.by_site.get(site) {
            None => 1.0,
            Some(list) => {
                let a = list.partition_point(|m| m.0 < from);
                let b = list.partition_point(|m| m.0 < to);
                list[a..b].iter().map(|m| 1.0 + m.1).product()
            }
        }
    }

    /// First mark at `site` in `[from, to)` with `r = -1`.
    pub fn first_disaster(&self, site: &[i64], from: f64, to: f64) -> Option<f64> {
        let list = self.by_site.get(site)?;
        let a = list.partition_point(|m| m.0 < from);
        list[a..].iter().take_while(|m| m.0 < to).find(|m| m.1 == -1.0).map(|m| m.0)
    }
}

/// Moves `x` to a uniformly chosen nearest neighbour.
pub(crate) fn random_neighbour<R: Rng + ?Sized>(x: &mut [i64], rng: &mut R) {
    let d = x.len();
    let k = rng.random_range(0..2 * d);
    x[k / 2] += if k % 2 == 0 { -1 } else { 1 };
}

/// Weight collected by one rate-`kappa` walk path up to time `t`.
pub fn sample_path_weight<R: Rng + ?Sized>(index: &MarkIndex, dim: usize, kappa: f64, t: f64, rng: &mut R) -> f64 {
    let mut x = origin(dim);
    let mut s = 0.0;
    let mut w = 1.0;
    let hold = (kappa > 0.0).then(|| Exp::new(kappa).expect("positive rate"));
    loop {
        let end = match &hold {
            Some(e) => (s + e.sample(rng)).min(t),
            None => t,
        };
        w *= index.factor(&x, s, end);
        if w == 0.0 || end >= t {
            return w;
        }
        random_neighbour(&mut x, rng);
        s = end;
    }
}

/// Monte Carlo estimate of `Z^kappa_t` in a fixed mark set from `n` paths.
pub fn ct_partition_mc(marks: &MarkSet, kappa: f64, t: f64, n: usize, seed: u64) -> Result<MCEstimate> {
    check_common(kappa, t)?;
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let index = MarkIndex::new(marks);
    let dim = marks.dim();
    let xs = par_replicas(n, seed, |rng, _| sample_path_weight(&index, dim, kappa, t, rng));
    Ok(MCEstimate::from_samples(&xs))
}

/// Averages one path weight per freshly sampled environment on `{-R..R}^d`,
/// estimating the annealed mean `E[Z^kappa_t]`.
pub fn annealed_partition_mc(
    law: &MarkLaw,
    dim: usize,
    kappa: f64,
    t: f64,
    env_radius: i64,
    n: usize,
    seed: u64,
) -> Result<MCEstimate> {
    check_common(kappa, t)?;
    let xs = par_replicas(n, seed, |rng, _| {
        let marks = sample_mark_set_with(law, dim, t, env_radius, rng).expect("validated mark law");
        sample_path_weight(&MarkIndex::new(&marks), dim, kappa, t, rng)
    });
    Ok(MCEstimate::from_samples(&xs))
}

/// Solution of the Anderson equation `du = kappa Delta u dt + u(t-) omega(dt)`
/// with `u(0, .) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeSolution {
    pub box_radius: i64,
    pub dim: usize,
    /// Values on the box, first coordinate varying fastest.
    pub u: Vec<f64>,
    pub value_at_origin: f64,
    /// Bound on `|u_box(t, 0) - u(t, 0)|`.
    pub error_bound: f64,
}

impl OdeSolution {
    pub fn value_at(&self, site: &[i64]) -> Option<f64> {
        BoxLattice::new(self.dim, self.box_radius).index(site).map(|i| self.u[i])
    }
}

/// Integrates the Anderson equation on `{-R..R}^d`. Outside the box no marks
/// act, so there `u` is kept at its initial value 1: writing `u = 1 + v`, the
/// perturbation `v` solves the same linear equation absorbed at the boundary.
/// Between marks the flow is applied as uniformized exponentials over chunks of
/// length at most `step`; at a mark `u(s, i) = (1 + r) u(s-, i)`.
pub fn pam_ode_solve(marks: &MarkSet, kappa: f64, t: f64, box_radius: i64, step: f64) -> Result<OdeSolution> {
    check_common(kappa, t)?;
    if !(step > 0.0) {
        return Err(Error::InvalidParameter(format!("step {step} must be positive")));
    }
    if box_radius < 1 {
        return Err(Error::InvalidParameter(format!("box radius {box_radius} must be >= 1")));
    }
    let dim = marks.dim();
    if let Some(m) = marks.marks().iter().find(|m| m.site.iter().any(|c| c.abs() > box_radius)) {
        return Err(Error::WindowTooSmall(format!("mark at {:?} lies outside the box of radius {box_radius}", m.site)));
    }
    if ((2 * box_radius + 1) as f64).powi(dim as i32) > MAX_BOX_SITES as f64 {
        return Err(Error::ResourceLimit(format!("box radius {box_radius} in dimension {dim}")));
    }
    let lattice = BoxLattice::new(dim, box_radius);
    let mut v = vec![0.0; lattice.len()];
    let active: Vec<_> = marks.marks().iter().filter(|m| m.time <= t).collect();
    let mut dropped = 0.0;
    let mut flow = |v: &mut Vec<f64>, mut dt: f64| {
        while dt > 0.0 {
            let h = dt.min(step);
            dropped += lattice.evolve(v, kappa * h, ODE_TAIL_EPS);
            dt -= h;
        }
    };
    let mut s = 0.0;
    for m in &active {
        flow(&mut v, m.time - s);
        let i = lattice.index(&m.site).expect("checked above");
        v[i] = (1.0 + m.r) * (1.0 + v[i]) - 1.0;
        s = m.time;
    }
    flow(&mut v, t - s);
    let u: Vec<f64> = v.iter().map(|x| 1.0 + x).collect();
    let value_at_origin = u[lattice.index(&origin(dim)).expect("origin in box")];
    let bonus = bonus_factor(active.iter().copied());
    let error_bound = bonus * (poisson_tail(kappa * t, box_radius as u64 + 1) + dropped);
    Ok(OdeSolution { box_radius, dim, u, value_at_origin, error_bound })
}

/// Sampling geometry shared by the Lyapunov estimators. Fixing `env_radius`
/// and the seed pairs environments across jump rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtEnvOptions {
    pub dim: usize,
    pub env_radius: i64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub estimate: f64,
    pub se: f64,
    pub n_env: usize,
    pub zero_fraction: f64,
    /// Largest certified interval width met.
    pub max_width: f64,
}

/// Exact intervals of `Z^kappa_t` over `n_env` sampled environments (replica
/// `k` uses substream `k` of `seed`).
pub fn sample_partition_intervals(
    law: &MarkLaw,
    kappa: f64,
    t: f64,
    n_env: usize,
    seed: u64,
    opts: CtEnvOptions,
) -> Result<Vec<IntervalEstimate>> {
    check_common(kappa, t)?;
    par_replicas(n_env, seed, |rng, _| {
        let marks = sample_mark_set_with(law, opts.dim, t, opts.env_radius, rng)?;
        ct_partition_exact(&marks, kappa, t, opts.eps)
    })
    .into_iter()
    .collect()
}

/// Finite-`t` quenched estimate: mean of `(1/t) log Z` over environments with
/// `Z > 0` (interval midpoints). Biased at finite `t`.
pub fn lyapunov_quenched_estimate(
    law: &MarkLaw,
    kappa: f64,
    t: f64,
    n_env: usize,
    seed: u64,
    opts: CtEnvOptions,
) -> Result<LyapunovEstimate> {
    let iv = sample_partition_intervals(law, kappa, t, n_env, seed, opts)?;
    quenched_from_intervals(&iv, t)
}

pub(crate) fn quenched_from_intervals(iv: &[IntervalEstimate], t: f64) -> Result<LyapunovEstimate> {
    let logs: Vec<f64> = iv.iter().filter(|i| i.hi > 0.0).map(|i| i.midpoint().ln() / t).collect();
    if logs.is_empty() {
        return Err(Error::Degenerate("every sampled environment has Z = 0".into()));
    }
    let est = MCEstimate::from_samples(&logs);
    Ok(LyapunovEstimate {
        estimate: est.mean,
        se: est.se,
        n_env: iv.len(),
        zero_fraction: 1.0 - logs.len() as f64 / iv.len() as f64,
        max_width: iv.iter().map(|i| i.width()).fold(0.0, f64::max),
    })
}

/// `(1/(r t)) log mean(Z^r)` with a delta-method standard error.
pub fn lyapunov_annealed_estimate(
    law: &MarkLaw,
    kappa: f64,
    r: f64,
    t: f64,
    n_env: usize,
    seed: u64,
    opts: CtEnvOptions,
) -> Result<LyapunovEstimate> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("moment order {r} must be positive")));
    }
    let iv = sample_partition_intervals(law, kappa, t, n_env, seed, opts)?;
    annealed_from_intervals(&iv, r, t)
}

pub(crate) fn annealed_from_intervals(iv: &[IntervalEstimate], r: f64, t: f64) -> Result<LyapunovEstimate> {
    let xs: Vec<f64> = iv.iter().map(|i| i.midpoint().powf(r)).collect();
    let m = MCEstimate::from_samples(&xs);
    if !(m.mean > 0.0) {
        return Err(Error::Degenerate("every sampled environment has Z = 0".into()));
    }
    Ok(LyapunovEstimate {
        estimate: m.mean.ln() / (r * t),
        se: m.se / (m.mean * r * t),
        n_env: iv.len(),
        zero_fraction: iv.iter().filter(|i| i.hi == 0.0).count() as f64 / iv.len() as f64,
        max_width: iv.iter().map(|i| i.width()).fold(0.0, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envlat::{sample_mark_set, Mark};
    use crate::increments::{ct_srw_kernel, CTWalkParams};
    use crate::stats::substream;

    fn disaster(time: f64, site: i64) -> Mark {
        Mark { time, site: vec![site], r: -1.0 }
    }

    fn opts() -> CtEnvOptions {
        CtEnvOptions { dim: 1, env_radius: 20, eps: 1e-6 }
    }

    #[test]
    fn kappa_zero_closed_form() {
        let m = MarkSet::new(
            1,
            2.0,
            3,
            vec![
                Mark { time: 0.5, site: vec![0], r: 0.5 },
                Mark { time: 0.7, site: vec![1], r: -1.0 },
                Mark { time: 1.5, site: vec![0], r: -0.5 },
            ],
        )
        .unwrap();
        let z = ct_partition_exact(&m, 0.0, 2.0, 1e-9).unwrap();
        assert_eq!((z.lo, z.hi), (0.75, 0.75));
        let d = MarkSet::new(1, 1.0, 1, vec![disaster(0.3, 0)]).unwrap();
        assert_eq!(ct_partition_exact(&d, 0.0, 1.0, 1e-9).unwrap().hi, 0.0);
    }

    #[test]
    fn empty_marks_enclose_one() {
        let m = MarkSet::empty(1, 1.0);
        let z = ct_partition_exact(&m, 2.0, 1.0, 1e-6).unwrap();
        assert!(z.lo <= 1.0 && 1.0 <= z.hi + 1e-15);
        assert!(z.width() < 1e-6);
    }

    #[test]
    fn single_disaster_matches_kernel() {
        let s = 0.6;
        let m = MarkSet::new(1, 1.0, 2, vec![disaster(s, 0)]).unwrap();
        let z = ct_partition_exact(&m, 1.0, 1.0, 1e-9).unwrap();
        let k = ct_srw_kernel(CTWalkParams::new(1.0, 1).unwrap(), s, 12, 1e-12).unwrap();
        let want = 1.0 - k.p(&[0], &[0]).unwrap();
        assert!(z.lo - 1e-15 <= want + k.error_bound && want - k.error_bound <= z.hi + 1e-15);
        assert!(z.width() < 1e-9);
    }

    #[test]
    fn exact_rejects_bad_eps_and_reports_resources() {
        let m = MarkSet::empty(3, 1.0);
        assert!(ct_partition_exact(&m, 1.0, 1.0, 0.0).is_err());
        let err = ct_partition_exact(&m, 500.0, 1.0, 1e-9).unwrap_err();
        assert!(err.is_resource());
        assert!(err.to_string().contains("R = "));
    }

    #[test]
    fn mc_is_exact_at_kappa_zero() {
        let law = MarkLaw::new(1.0, vec![(-0.5, 0.5), (1.0, 0.5)]).unwrap();
        let m = sample_mark_set(&law, 1, 1.0, 2, 3).unwrap();
        let z = ct_partition_exact(&m, 0.0, 1.0, 1e-9).unwrap();
        let e = ct_partition_mc(&m, 0.0, 1.0, 50, 1).unwrap();
        assert_eq!(e.mean, z.lo);
        assert_eq!(e.se, 0.0);
    }

    #[test]
    fn mc_inside_exact_interval() {
        let law = MarkLaw::new(1.0, vec![(-1.0, 0.5), (0.5, 0.5)]).unwrap();
        for seed in 0..4 {
            let m = sample_mark_set(&law, 1, 1.0, 6, seed).unwrap();
            let z = ct_partition_exact(&m, 1.0, 1.0, 1e-6).unwrap();
            let e = ct_partition_mc(&m, 1.0, 1.0, 20_000, seed + 100).unwrap();
            assert!(e.mean >= z.lo - 4.0 * e.se && e.mean <= z.hi + 4.0 * e.se);
        }
    }

    #[test]
    fn annealed_mean_is_exp_minus_t() {
        let law = MarkLaw::disasters(1.0).unwrap();
        let e = annealed_partition_mc(&law, 1, 1.0, 1.0, 15, 20_000, 5).unwrap();
        assert!(e.z_score((-1.0f64).exp()) < 4.0);
    }

    #[test]
    fn ode_examples() {
        let m = MarkSet::empty(1, 1.0);
        let sol = pam_ode_solve(&m, 1.0, 1.0, 5, 0.1).unwrap();
        assert!(sol.u.iter().all(|x| (x - 1.0).abs() < 1e-12));
        let d = MarkSet::new(1, 1.0, 2, vec![disaster(0.2, 1), disaster(0.9, -2)]).unwrap();
        let sol = pam_ode_solve(&d, 0.0, 1.0, 3, 0.1).unwrap();
        for i in -3..=3 {
            let want = if i == 1 || i == -2 { 0.0 } else { 1.0 };
            assert_eq!(sol.value_at(&[i]).unwrap(), want);
        }
        assert!(matches!(pam_ode_solve(&d, 1.0, 1.0, 1, 0.1), Err(Error::WindowTooSmall(_))));
    }

    #[test]
    fn feynman_kac_time_reversal() {
        let law = MarkLaw::new(1.5, vec![(-1.0, 0.4), (-0.5, 0.3), (0.8, 0.3)]).unwrap();
        for seed in 0..5 {
            let m = sample_mark_set(&law, 1, 1.0, 5, seed).unwrap();
            let sol = pam_ode_solve(&m, 1.0, 1.0, 16, 0.25).unwrap();
            let z = ct_partition_exact(&m.reversed(), 1.0, 1.0, 1e-9).unwrap();
            assert!((sol.value_at_origin - z.midpoint()).abs() <= 1e-6, "{} vs {:?}", sol.value_at_origin, z);
        }
    }

    #[test]
    fn box_and_eps_monotonicity() {
        let law = MarkLaw::disasters(1.0).unwrap();
        let m = sample_mark_set(&law, 1, 1.0, 6, 2).unwrap();
        let coarse = ct_partition_exact(&m, 2.0, 1.0, 1e-3).unwrap();
        let fine = ct_partition_exact(&m, 2.0, 1.0, 1e-8).unwrap();
        assert!(fine.box_radius >= coarse.box_radius);
        assert!(fine.lo >= coarse.lo - 1e-15);
        assert!(fine.width() <= coarse.width());
    }

    #[test]
    fn kappa_continuity() {
        let law = MarkLaw::disasters(1.0).unwrap();
        let m = sample_mark_set(&law, 1, 1.0, 6, 7).unwrap();
        let a = ct_partition_exact(&m, 1.0, 1.0, 1e-9).unwrap();
        let b = ct_partition_exact(&m, 1.001, 1.0, 1e-9).unwrap();
        assert!((a.midpoint() - b.midpoint()).abs() < 1e-2);
    }

    #[test]
    fn lyapunov_neutral_marks() {
        let law = MarkLaw::new(1.0, vec![(0.0, 1.0)]).unwrap();
        let q = lyapunov_quenched_estimate(&law, 1.0, 2.0, 20, 1, opts()).unwrap();
        assert!(q.estimate.abs() < 1e-6);
    }

    #[test]
    fn lyapunov_kappa_zero_survival() {
        let law = MarkLaw::disasters(1.0).unwrap();
        let n = 4000;
        let q = lyapunov_quenched_estimate(&law, 0.0, 1.0, n, 3, opts()).unwrap();
        let surv = (-1.0f64).exp();
        let se = (surv * (1.0 - surv) / n as f64).sqrt();
        assert!(((1.0 - q.zero_fraction) - surv).abs() < 4.0 * se);
        assert_eq!(q.estimate, 0.0);
    }

    #[test]
    fn annealed_first_moment_is_rate_independent() {
        let law = MarkLaw::disasters(1.0).unwrap();
        let t = 1.0;
        for kappa in [0.5, 2.0] {
            let a = lyapunov_annealed_estimate(&law, kappa, 1.0, t, 3000, 9, opts()).unwrap();
            assert!((a.estimate + 1.0).abs() < 4.0 * a.se, "{a:?}");
        }
    }

    #[test]
    fn random_neighbour_moves_one_step() {
        let mut rng = substream(0, 0);
        for _ in 0..100 {
            let mut x = vec![0, 0, 0];
            random_neighbour(&mut x, &mut rng);
            assert_eq!(x.iter().map(|c| c.abs()).sum::<i64>(), 1);
        }
    }
}
