//! Discrete-time polymer partition functions on `Z^d` by transfer-matrix
//! dynamic programming, exact laws under enumeration, and the free-energy,
//! martingale-moment and static-environment functionals built on them.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::envlat::{
    add_paths, origin, sample_lattice_field_with, shift_lattice, ConfigEnumeration, EnvSpec, LatticeField, Path, Site,
    Window,
};
use crate::error::{Error, Result};
use crate::increments::IncrementDist;
use crate::stats::{par_replicas, MCEstimate};

const MASS_TOL: f64 = 1e-12;

/// Precomputed reachable sets and per-slice transitions of a walk against a
/// fixed window, so that many environments on that window can be evaluated
/// without any hashing.
///
/// With a shift path `y`, site `j` at time `s` reads the cell `(s, j + y_s)`,
/// which evaluates the partition function of `theta^y omega`.
#[derive(Debug, Clone)]
pub struct TransferPlan {
    horizon: usize,
    reach: Vec<Vec<Site>>,
    /// For slice `s` (0-based here, time `s+1`): per target state, its cell and
    /// incoming `(source state, probability)` pairs.
    slices: Vec<Vec<(usize, Vec<(usize, f64)>)>>,
}

impl TransferPlan {
    pub fn new(p: &IncrementDist, t: usize, window: &Window, shift: Option<&[Site]>) -> Result<Self> {
        if p.dim() != window.dim() {
            return Err(Error::DimensionMismatch { left: p.dim(), right: window.dim() });
        }
        if t > window.horizon() {
            return Err(Error::WindowTooSmall(format!("horizon {t} exceeds the window's {} slices", window.horizon())));
        }
        if let Some(y) = shift {
            if y.len() < t + 1 {
                return Err(Error::LengthMismatch { left: y.len(), right: t + 1 });
            }
        }
        let mut reach = vec![vec![origin(p.dim())]];
        let mut slices = Vec::with_capacity(t);
        for s in 1..=t {
            let prev = &reach[s - 1];
            let mut targets: HashMap<Site, Vec<(usize, f64)>> = HashMap::new();
            for (k, i) in prev.iter().enumerate() {
                for (d, prob) in p.iter() {
                    let j: Site = i.iter().zip(d).map(|(a, b)| a + b).collect();
                    targets.entry(j).or_default().push((k, prob));
                }
            }
            let mut sites: Vec<Site> = targets.keys().cloned().collect();
            sites.sort();
            let mut slice = Vec::with_capacity(sites.len());
            for j in &sites {
                let lookup: Site = match shift {
                    Some(y) => j.iter().zip(&y[s]).map(|(a, b)| a + b).collect(),
                    None => j.clone(),
                };
                let cell = window.cell(s, &lookup).ok_or_else(|| {
                    Error::WindowTooSmall(format!("reachable cell ({s}, {lookup:?}) is outside the window"))
                })?;
                slice.push((cell, targets.remove(j).expect("key present")));
            }
            slices.push(slice);
            reach.push(sites);
        }
        Ok(Self { horizon: t, reach, slices })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Reachable sites at time `s` (`s = 0` is the origin).
    pub fn reach(&self, s: usize) -> &[Site] {
        &self.reach[s]
    }

    /// `Z_t` for the flat cell values of a field on the plan's window.
    pub fn evaluate(&self, values: &[f64]) -> f64 {
        let mut u = vec![1.0];
        let mut next = Vec::new();
        for slice in &self.slices {
            next.clear();
            next.extend(slice.iter().map(|(cell, inc)| {
                let factor = 1.0 + values[*cell];
                if factor == 0.0 {
                    0.0
                } else {
                    factor * inc.iter().map(|&(k, q)| u[k] * q).sum::<f64>()
                }
            }));
            std::mem::swap(&mut u, &mut next);
        }
        u.iter().sum()
    }

    /// The unnormalised endpoint mass `u_s` for every `s = 0..=t`.
    pub fn profiles(&self, values: &[f64]) -> Vec<MassProfile> {
        let mut out = vec![MassProfile { time: 0, sites: self.reach[0].clone(), mass: vec![1.0] }];
        for (s, slice) in self.slices.iter().enumerate() {
            let u = &out[s].mass;
            let mass = slice
                .iter()
                .map(|(cell, inc)| {
                    let factor = 1.0 + values[*cell];
                    if factor == 0.0 {
                        0.0
                    } else {
                        factor * inc.iter().map(|&(k, q)| u[k] * q).sum::<f64>()
                    }
                })
                .collect();
            out.push(MassProfile { time: s + 1, sites: self.reach[s + 1].clone(), mass });
        }
        out
    }
}

/// Unnormalised endpoint mass of the polymer at time `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassProfile {
    pub time: usize,
    pub sites: Vec<Site>,
    pub mass: Vec<f64>,
}

impl MassProfile {
    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionResult {
    pub value: f64,
    pub horizon: usize,
    pub walk: IncrementDist,
    pub window_cells: usize,
}

/// `Z_t = E^p[prod_{s=1..t} (1 + omega(s, X_s))]`, hard obstacles giving
/// multiplicative zeros.
pub fn partition_function(field: &LatticeField, p: &IncrementDist, t: usize) -> Result<PartitionResult> {
    let plan = TransferPlan::new(p, t, field.window(), None)?;
    Ok(PartitionResult {
        value: plan.evaluate(field.values()),
        horizon: t,
        walk: p.clone(),
        window_cells: field.window().n_cells(),
    })
}

pub fn mass_profiles(field: &LatticeField, p: &IncrementDist, t: usize) -> Result<Vec<MassProfile>> {
    Ok(TransferPlan::new(p, t, field.window(), None)?.profiles(field.values()))
}

/// Weight `prod_{s=1..t} (1 + omega(s, x_s))` of a single path.
pub fn path_weight(field: &LatticeField, x: &[Site], t: usize) -> Result<f64> {
    if x.len() < t + 1 {
        return Err(Error::LengthMismatch { left: x.len(), right: t + 1 });
    }
    let mut w = 1.0;
    for (s, site) in x.iter().enumerate().take(t + 1).skip(1) {
        let v = field
            .get(s, site)
            .ok_or_else(|| Error::WindowTooSmall(format!("path cell ({s}, {site:?}) is outside the window")))?;
        w *= 1.0 + v;
    }
    Ok(w)
}

/// Whether `F_t(omega, x + y) = F_t(theta^y omega, x)` within `tol`.
pub fn consistency_check(field: &LatticeField, x: &[Site], y: &[Site], t: usize, tol: f64) -> Result<bool> {
    let lhs = path_weight(field, &add_paths(x, y), t)?;
    let rhs = path_weight(&shift_lattice(field, y)?, x, t)?;
    Ok((lhs - rhs).abs() <= tol)
}

/// Finitely supported law on `[0, inf)`, atoms sorted by value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDist {
    atoms: Vec<(f64, f64)>,
}

impl FiniteDist {
    /// Atoms with identical values are merged.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        let mut merged: HashMap<u64, f64> = HashMap::new();
        let mut total = 0.0;
        for (v, p) in atoms {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidDistribution(format!("value {v} is not a finite non-negative number")));
            }
            if !(p >= 0.0) {
                return Err(Error::InvalidDistribution(format!("negative probability {p}")));
            }
            total += p;
            // +0.0 and -0.0 share an atom
            *merged.entry((v + 0.0).to_bits()).or_default() += p;
        }
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDistribution(format!("probabilities sum to {total}")));
        }
        let mut atoms: Vec<(f64, f64)> = merged.into_iter().map(|(b, p)| (f64::from_bits(b), p)).collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { atoms })
    }

    pub fn dirac(v: f64) -> Result<Self> {
        Self::new(vec![(v, 1.0)])
    }

    /// Empirical law of a sample, each draw weighted `1/n`.
    pub fn empirical(xs: &[f64]) -> Result<Self> {
        let w = 1.0 / xs.len() as f64;
        Self::new(xs.iter().map(|&x| (x, w)).collect())
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.atoms.iter().map(|&(v, p)| p * f(v)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.expect(|v| v)
    }

    /// `E[min(X, a)]`.
    pub fn angle(&self, a: f64) -> f64 {
        self.expect(|v| v.min(a))
    }
}

/// Exact joint law of two functionals of the same environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDist {
    pub atoms: Vec<((f64, f64), f64)>,
}

impl JointDist {
    pub fn marginal(&self, k: usize) -> Result<FiniteDist> {
        FiniteDist::new(self.atoms.iter().map(|&((a, b), p)| (if k == 0 { a } else { b }, p)).collect())
    }

    pub fn expect(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.atoms.iter().map(|&((a, b), p)| p * f(a, b)).sum()
    }
}

/// Exact law of `(Z^{p1}_t, Z^{p2}_t)` driven by the same environment, by
/// enumerating every configuration on the union of both reachable windows.
pub fn joint_partition_distribution(
    spec: &EnvSpec,
    p1: &IncrementDist,
    p2: &IncrementDist,
    t: usize,
    cap: u64,
) -> Result<JointDist> {
    let window = p1.reachable_window(t).union(&p2.reachable_window(t))?;
    let plan1 = TransferPlan::new(p1, t, &window, None)?;
    let plan2 = TransferPlan::new(p2, t, &window, None)?;
    let en = ConfigEnumeration::new(spec, window.n_cells(), cap)?;
    let mut merged: HashMap<(u64, u64), f64> = HashMap::new();
    en.for_each(|values, prob| {
        let key = ((plan1.evaluate(values) + 0.0).to_bits(), (plan2.evaluate(values) + 0.0).to_bits());
        *merged.entry(key).or_default() += prob;
    });
    let mut atoms: Vec<((f64, f64), f64)> =
        merged.into_iter().map(|((a, b), p)| ((f64::from_bits(a), f64::from_bits(b)), p)).collect();
    atoms.sort_by(|x, y| x.0 .0.total_cmp(&y.0 .0).then(x.0 .1.total_cmp(&y.0 .1)));
    Ok(JointDist { atoms })
}

/// `n` draws of `(Z^{p1}_t, Z^{p2}_t)`, both walks reading the same sampled
/// environment in each draw.
pub fn sample_partition_pairs(
    spec: &EnvSpec,
    p1: &IncrementDist,
    p2: &IncrementDist,
    t: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let window = Arc::new(p1.reachable_window(t).union(&p2.reachable_window(t))?);
    let plan1 = TransferPlan::new(p1, t, &window, None)?;
    let plan2 = TransferPlan::new(p2, t, &window, None)?;
    Ok(par_replicas(n, seed, |rng, _| {
        let field = sample_lattice_field_with(spec, window.clone(), rng).expect("window has no empty slice");
        (plan1.evaluate(field.values()), plan2.evaluate(field.values()))
    }))
}

/// Exact law of `Z^p_t`.
pub fn partition_distribution(spec: &EnvSpec, p: &IncrementDist, t: usize, cap: u64) -> Result<FiniteDist> {
    joint_partition_distribution(spec, p, p, t, cap)?.marginal(0)
}

/// `E[Z_t] = R^t`, the same for every walk.
pub fn annealed_mean(spec: &EnvSpec, t: usize) -> f64 {
    spec.mean_factor().powi(t as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyEstimate {
    /// Mean of `(1/t) log Z_t` over environments with `Z_t > 0`.
    pub estimate: f64,
    pub se: f64,
    pub n_env: usize,
    pub n_survived: usize,
    pub survival_fraction: f64,
}

/// Finite-`t` estimate of the quenched free energy. It is biased at finite
/// `t`; hard-obstacle environments with `Z_t = 0` are counted in the survival
/// fraction and excluded from the average.
pub fn free_energy_estimate(
    spec: &EnvSpec,
    p: &IncrementDist,
    t: usize,
    n_env: usize,
    seed: u64,
) -> Result<FreeEnergyEstimate> {
    if t == 0 || n_env == 0 {
        return Err(Error::InvalidParameter("free energy needs t >= 1 and n_env >= 1".into()));
    }
    let window = Arc::new(p.reachable_window(t));
    let plan = TransferPlan::new(p, t, &window, None)?;
    let zs = par_replicas(n_env, seed, |rng, _| {
        let field = sample_lattice_field_with(spec, window.clone(), rng).expect("window has no empty slice");
        plan.evaluate(field.values())
    });
    free_energy_from_samples(&zs, t)
}

pub(crate) fn free_energy_from_samples(zs: &[f64], t: usize) -> Result<FreeEnergyEstimate> {
    let logs: Vec<f64> = zs.iter().filter(|z| **z > 0.0).map(|z| z.ln() / t as f64).collect();
    if logs.is_empty() {
        return Err(Error::Degenerate("free energy is -inf at this horizon: every sample has Z = 0".into()));
    }
    let est = MCEstimate::from_samples(&logs);
    Ok(FreeEnergyEstimate {
        estimate: est.mean,
        se: est.se,
        n_env: zs.len(),
        n_survived: logs.len(),
        survival_fraction: logs.len() as f64 / zs.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MomentMode {
    Exact { cap: u64 },
    MonteCarlo { n: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentResult {
    pub value: f64,
    /// Zero in exact mode.
    pub se: f64,
    /// Configurations enumerated or samples drawn.
    pub n: u64,
}

/// `E[W_t^r]` with `W_t = Z_t / R^t`.
pub fn martingale_fractional_moment(
    spec: &EnvSpec,
    p: &IncrementDist,
    t: usize,
    r: f64,
    mode: MomentMode,
) -> Result<MomentResult> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::InvalidParameter(format!("moment order {r} must lie in (0, 1]")));
    }
    let norm = annealed_mean(spec, t);
    if norm == 0.0 {
        return Err(Error::Degenerate("E[1 + omega] = 0, the martingale is undefined".into()));
    }
    let window = Arc::new(p.reachable_window(t));
    let plan = TransferPlan::new(p, t, &window, None)?;
    match mode {
        MomentMode::Exact { cap } => {
            let en = ConfigEnumeration::new(spec, window.n_cells(), cap)?;
            let mut acc = 0.0;
            en.for_each(|values, prob| acc += prob * (plan.evaluate(values) / norm).powf(r));
            Ok(MomentResult { value: acc, se: 0.0, n: en.n_configurations() })
        }
        MomentMode::MonteCarlo { n, seed } => {
            let xs = par_replicas(n, seed, |rng, _| {
                let field = sample_lattice_field_with(spec, window.clone(), rng).expect("window has no empty slice");
                (plan.evaluate(field.values()) / norm).powf(r)
            });
            let est = MCEstimate::from_samples(&xs);
            Ok(MomentResult { value: est.mean, se: est.se, n: n as u64 })
        }
    }
}

/// Test functions reported by [`static_env_experiment`].
pub const STATIC_FUNCTIONALS: [(&str, &str); 4] =
    [("sqrt", "concave"), ("min1", "concave"), ("square", "convex"), ("excess1", "convex")];

fn static_functional(name: &str, z: f64) -> f64 {
    match name {
        "sqrt" => z.sqrt(),
        "min1" => z.min(1.0),
        "square" => z * z,
        _ => (z - 1.0).max(0.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticEnvRow {
    pub walk: String,
    pub functional: String,
    pub shape: String,
    pub estimate: f64,
    pub se: f64,
    pub n: usize,
}

/// Exploratory: estimates `E[f(Z_t)]` for concave and convex `f` when the
/// environment is frozen in time, `omega(s, i) = xi(i)`. All walks see the
/// same `xi` within a replica. No ordering is asserted.
pub fn static_env_experiment(
    xi: &EnvSpec,
    walks: &[(String, IncrementDist)],
    t: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<StaticEnvRow>> {
    let dim = walks.first().map(|w| w.1.dim()).ok_or_else(|| Error::InvalidParameter("no walks given".into()))?;
    let mut window = walks[0].1.reachable_window(t);
    for (_, p) in &walks[1..] {
        window = window.union(&p.reachable_window(t))?;
    }
    let mut sites: Vec<Site> = (1..=t).flat_map(|s| window.sites(s).to_vec()).collect();
    sites.sort();
    sites.dedup();
    let site_index: HashMap<Site, usize> = sites.iter().cloned().enumerate().map(|(k, s)| (s, k)).collect();
    let window = Window::new(dim, vec![sites.clone(); t])?;
    let cell_site: Vec<usize> = (0..window.n_cells()).map(|c| site_index[window.cell_coords(c).1]).collect();
    let plans = walks.iter().map(|(_, p)| TransferPlan::new(p, t, &window, None)).collect::<Result<Vec<_>>>()?;
    let zs: Vec<Vec<f64>> = par_replicas(n, seed, |rng, _| {
        let xi_values: Vec<f64> = sites.iter().map(|_| xi.sample(rng)).collect();
        let values: Vec<f64> = cell_site.iter().map(|&k| xi_values[k]).collect();
        plans.iter().map(|plan| plan.evaluate(&values)).collect()
    });
    let mut rows = Vec::new();
    for (w, (label, _)) in walks.iter().enumerate() {
        for (name, shape) in STATIC_FUNCTIONALS {
            let xs: Vec<f64> = zs.iter().map(|z| static_functional(name, z[w])).collect();
            let est = MCEstimate::from_samples(&xs);
            rows.push(StaticEnvRow {
                walk: label.clone(),
                functional: name.to_string(),
                shape: shape.to_string(),
                estimate: est.mean,
                se: est.se,
                n,
            });
        }
    }
    Ok(rows)
}

/// Every path of `p` up to `t`, for brute-force cross-checks.
pub fn enumerate_paths(p: &IncrementDist, t: usize) -> Vec<(Path, f64)> {
    p.paths(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envlat::{enumerate_lattice_fields, sample_lattice_field, DEFAULT_ENUM_CAP};
    use proptest::prelude::*;

    fn srw() -> IncrementDist {
        IncrementDist::from_1d(&[(-1, 0.5), (1, 0.5)]).unwrap()
    }

    fn brute_force(field: &LatticeField, p: &IncrementDist, t: usize) -> f64 {
        p.paths(t).iter().map(|(x, prob)| prob * path_weight(field, x, t).unwrap()).sum()
    }

    #[test]
    fn zero_field_gives_one() {
        for p in [srw(), IncrementDist::uniform_1d(-1, 1).unwrap(), IncrementDist::dirac(1)] {
            let w = Arc::new(p.reachable_window(4));
            let f = LatticeField::constant(w, 0.0).unwrap();
            assert_eq!(partition_function(&f, &p, 4).unwrap().value, 1.0);
        }
    }

    #[test]
    fn single_obstacle_halves() {
        let p = srw();
        let w = Arc::new(p.reachable_window(1));
        let mut f = LatticeField::constant(w, 0.0).unwrap();
        f.set(1, &[1], -1.0).unwrap();
        assert_eq!(partition_function(&f, &p, 1).unwrap().value, 0.5);
    }

    #[test]
    fn obstacle_ring_selects_one_step() {
        // obstacles on {-K..K} \ {r} at time 1 leave only paths through r
        let k = 2;
        let p = IncrementDist::from_1d(&[(-2, 0.1), (-1, 0.2), (0, 0.3), (1, 0.25), (2, 0.15)]).unwrap();
        for r in -k..=k {
            for t in 1..=3 {
                let w = Arc::new(p.reachable_window(t));
                let mut f = LatticeField::constant(w, 0.0).unwrap();
                for i in -k..=k {
                    if i != r {
                        f.set(1, &[i], -1.0).unwrap();
                    }
                }
                let z = partition_function(&f, &p, t).unwrap().value;
                assert!((z - p.prob_of(&[r])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn undersized_window_is_rejected() {
        let p = srw();
        let w = Arc::new(Window::boxed(1, 3, 1).unwrap());
        let f = LatticeField::constant(w, 0.0).unwrap();
        assert!(matches!(partition_function(&f, &p, 3), Err(Error::WindowTooSmall(_))));
        assert!(matches!(partition_function(&f, &p, 4), Err(Error::WindowTooSmall(_))));
    }

    #[test]
    fn dp_matches_brute_force_on_every_field() {
        let spec = EnvSpec::new(vec![(-1.0, 0.25), (0.5, 0.75)]).unwrap();
        let p = IncrementDist::from_1d(&[(-1, 0.3), (1, 0.7)]).unwrap();
        let t = 3;
        let window = Arc::new(p.reachable_window(t));
        for (field, _) in enumerate_lattice_fields(&spec, window, DEFAULT_ENUM_CAP).unwrap() {
            let dp = partition_function(&field, &p, t).unwrap().value;
            assert!((dp - brute_force(&field, &p, t)).abs() < 1e-10);
        }
    }

    #[test]
    fn dp_matches_brute_force_in_two_dimensions() {
        let spec = EnvSpec::new(vec![(-0.5, 0.5), (1.0, 0.5)]).unwrap();
        let p = IncrementDist::simple_random_walk(2);
        let window = Arc::new(p.reachable_window(4));
        for seed in 0..5 {
            let f = sample_lattice_field(&spec, window.clone(), seed).unwrap();
            let dp = partition_function(&f, &p, 4).unwrap().value;
            assert!((dp - brute_force(&f, &p, 4)).abs() < 1e-10);
        }
    }

    #[test]
    fn profiles_sum_to_partition_function() {
        let spec = EnvSpec::new(vec![(-0.5, 0.5), (1.0, 0.5)]).unwrap();
        let p = IncrementDist::uniform_1d(-1, 1).unwrap();
        let w = Arc::new(p.reachable_window(3));
        let f = sample_lattice_field(&spec, w, 9).unwrap();
        let prof = mass_profiles(&f, &p, 3).unwrap();
        assert_eq!(prof.len(), 4);
        assert_eq!(prof[0].total(), 1.0);
        assert!((prof[3].total() - partition_function(&f, &p, 3).unwrap().value).abs() < 1e-15);
        assert!(prof.iter().all(|m| m.mass.iter().all(|x| *x >= 0.0)));
    }

    #[test]
    fn consistency_examples() {
        let spec = EnvSpec::new(vec![(-1.0, 0.2), (0.0, 0.3), (2.0, 0.5)]).unwrap();
        let w = Arc::new(Window::boxed(1, 4, 8).unwrap());
        let f = sample_lattice_field(&spec, w, 3).unwrap();
        let x: Path = vec![vec![0], vec![1], vec![3], vec![2], vec![2]];
        let zero: Path = vec![vec![0]; 5];
        assert!(consistency_check(&f, &x, &zero, 4, 0.0).unwrap());
        let y: Path = vec![vec![0], vec![-2], vec![-1], vec![0], vec![2]];
        assert!(consistency_check(&f, &x, &y, 4, 1e-12).unwrap());
    }

    #[test]
    fn obstacle_on_summed_path_zeroes_both_sides() {
        let w = Arc::new(Window::boxed(1, 2, 4).unwrap());
        let mut f = LatticeField::constant(w, 0.5).unwrap();
        f.set(2, &[1], -1.0).unwrap();
        let x: Path = vec![vec![0], vec![1], vec![2]];
        let y: Path = vec![vec![0], vec![0], vec![-1]];
        assert_eq!(path_weight(&f, &add_paths(&x, &y), 2).unwrap(), 0.0);
        assert_eq!(path_weight(&shift_lattice(&f, &y).unwrap(), &x, 2).unwrap(), 0.0);
    }

    #[test]
    fn joint_law_diagonal_and_means() {
        let spec = EnvSpec::new(vec![(-1.0, 0.2), (0.0, 0.3), (1.0, 0.5)]).unwrap();
        let p = IncrementDist::uniform_1d(0, 1).unwrap();
        let j = joint_partition_distribution(&spec, &p, &p, 2, DEFAULT_ENUM_CAP).unwrap();
        assert!(j.atoms.iter().all(|((a, b), _)| a == b));
        let q = IncrementDist::from_1d(&[(-1, 0.4), (1, 0.6)]).unwrap();
        let j = joint_partition_distribution(&spec, &p, &q, 2, DEFAULT_ENUM_CAP).unwrap();
        let r2 = annealed_mean(&spec, 2);
        assert!((j.marginal(0).unwrap().mean() - r2).abs() < 1e-10);
        assert!((j.marginal(1).unwrap().mean() - r2).abs() < 1e-10);
    }

    #[test]
    fn bernoulli_single_cell_law() {
        let q = 0.3;
        let spec = EnvSpec::bernoulli_obstacles(q).unwrap();
        let d = partition_distribution(&spec, &IncrementDist::dirac(1), 1, 10).unwrap();
        assert_eq!(d.atoms().len(), 2);
        assert_eq!(d.atoms()[0].0, 0.0);
        assert!((d.atoms()[0].1 - q).abs() < 1e-15);
        assert!((d.atoms()[1].1 - (1.0 - q)).abs() < 1e-15);
    }

    #[test]
    fn annealed_mean_examples() {
        assert_eq!(annealed_mean(&EnvSpec::constant(0.0).unwrap(), 5), 1.0);
        let q = 0.35;
        let spec = EnvSpec::bernoulli_obstacles(q).unwrap();
        let want = (1.0 - q).powi(3);
        assert!((annealed_mean(&spec, 3) - want).abs() < 1e-15);
        let d = partition_distribution(&spec, &srw(), 3, DEFAULT_ENUM_CAP).unwrap();
        assert!((d.mean() - want).abs() < 1e-10);
    }

    #[test]
    fn free_energy_constant_field() {
        let c = 0.7;
        let spec = EnvSpec::constant(c).unwrap();
        let fe = free_energy_estimate(&spec, &srw(), 6, 20, 1).unwrap();
        assert!((fe.estimate - (1.0f64 + c).ln()).abs() < 1e-14);
        assert_eq!(fe.se, 0.0);
        assert_eq!(fe.survival_fraction, 1.0);
    }

    #[test]
    fn free_energy_reports_survival_fraction() {
        let spec = EnvSpec::new(vec![(-1.0, 0.5), (1.0, 0.5)]).unwrap();
        let t = 3;
        let n = 40_000;
        let fe = free_energy_estimate(&spec, &IncrementDist::dirac(1), t, n, 11).unwrap();
        let target = 0.5f64.powi(t as i32);
        let se = (target * (1.0 - target) / n as f64).sqrt();
        assert!((fe.survival_fraction - target).abs() < 4.0 * se);
        assert!((fe.estimate - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn free_energy_degenerate_error() {
        let spec = EnvSpec::constant(-1.0).unwrap();
        assert!(matches!(free_energy_estimate(&spec, &srw(), 2, 5, 0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn martingale_moments() {
        let spec = EnvSpec::constant(0.0).unwrap();
        let m = martingale_fractional_moment(&spec, &srw(), 3, 0.5, MomentMode::Exact { cap: 100 }).unwrap();
        assert_eq!(m.value, 1.0);
        let spec = EnvSpec::new(vec![(-1.0, 0.3), (0.5, 0.7)]).unwrap();
        let m1 =
            martingale_fractional_moment(&spec, &srw(), 3, 1.0, MomentMode::Exact { cap: DEFAULT_ENUM_CAP }).unwrap();
        assert!((m1.value - 1.0).abs() < 1e-10);
        let half =
            martingale_fractional_moment(&spec, &srw(), 3, 0.5, MomentMode::Exact { cap: DEFAULT_ENUM_CAP }).unwrap();
        let mc =
            martingale_fractional_moment(&spec, &srw(), 3, 0.5, MomentMode::MonteCarlo { n: 20_000, seed: 2 }).unwrap();
        assert!((mc.value - half.value).abs() < 4.0 * mc.se);
        assert!(martingale_fractional_moment(&spec, &srw(), 3, 1.5, MomentMode::Exact { cap: 10 }).is_err());
    }

    #[test]
    fn fractional_moment_increases_with_more_randomness() {
        let spec = EnvSpec::new(vec![(-1.0, 0.3), (0.5, 0.7)]).unwrap();
        let p1 = IncrementDist::dirac(1);
        let p2 = crate::increments::convolve(&p1, &srw()).unwrap();
        let cap = DEFAULT_ENUM_CAP;
        let a = martingale_fractional_moment(&spec, &p1, 2, 0.5, MomentMode::Exact { cap }).unwrap();
        let b = martingale_fractional_moment(&spec, &p2, 2, 0.5, MomentMode::Exact { cap }).unwrap();
        assert!(a.value <= b.value + 1e-10);
    }

    #[test]
    fn static_env_examples() {
        let walks = vec![("lazy".to_string(), IncrementDist::dirac(1)), ("srw".to_string(), srw())];
        let rows = static_env_experiment(&EnvSpec::constant(0.0).unwrap(), &walks, 3, 10, 0).unwrap();
        for r in &rows {
            let want = if r.functional == "excess1" { 0.0 } else { 1.0 };
            assert_eq!(r.estimate, want);
        }
        let (a, b, q) = (0.5f64, -0.5f64, 0.3);
        let xi = EnvSpec::new(vec![(a, q), (b, 1.0 - q)]).unwrap();
        let rows = static_env_experiment(&xi, &walks[..1], 4, 50_000, 5).unwrap();
        let sq = rows.iter().find(|r| r.functional == "square").unwrap();
        let want = q * (1.0 + a).powi(8) + (1.0 - q) * (1.0 + b).powi(8);
        assert!((sq.estimate - want).abs() < 4.0 * sq.se);
    }

    #[test]
    fn static_env_one_slice_concave_order() {
        // at t = 1 the static and time-i.i.d. models coincide
        let xi = EnvSpec::new(vec![(-1.0, 0.4), (1.0, 0.6)]).unwrap();
        let walks = vec![("delta".to_string(), IncrementDist::dirac(1)), ("srw".to_string(), srw())];
        let rows = static_env_experiment(&xi, &walks, 1, 20_000, 8).unwrap();
        let get = |w: &str, f: &str| rows.iter().find(|r| r.walk == w && r.functional == f).unwrap().clone();
        let (d, s) = (get("delta", "sqrt"), get("srw", "sqrt"));
        assert!(d.estimate <= s.estimate + 3.0 * (d.se.powi(2) + s.se.powi(2)).sqrt());
    }

    fn small_field() -> impl Strategy<Value = (Vec<f64>, Vec<i64>, Vec<i64>)> {
        (
            proptest::collection::vec(prop_oneof![Just(-1.0), Just(0.0), 0.0f64..2.0], 4 * 11),
            proptest::collection::vec(-2i64..=2, 4),
            proptest::collection::vec(-2i64..=2, 4),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn consistency_randomized((vals, xs, ys) in small_field()) {
            let w = Arc::new(Window::boxed(1, 4, 5).unwrap());
            let mut f = LatticeField::constant(w, 0.0).unwrap();
            for s in 1..=4 {
                for i in -5..=5 {
                    f.set(s, &[i], vals[(s - 1) * 11 + (i + 5) as usize]).unwrap();
                }
            }
            // positions with |x_s|, |y_s| <= 2 stay inside both windows
            let x: Path = std::iter::once(vec![0]).chain(xs.iter().map(|&a| vec![a])).collect();
            let y: Path = std::iter::once(vec![0]).chain(ys.iter().map(|&a| vec![a])).collect();
            prop_assert!(consistency_check(&f, &x, &y, 4, 1e-12).unwrap());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn removing_an_obstacle_never_decreases_z(seed in 0u64..10_000, cell in 0usize..9) {
            let spec = EnvSpec::new(vec![(-1.0, 0.4), (0.3, 0.6)]).unwrap();
            let p = IncrementDist::uniform_1d(-1, 1).unwrap();
            let w = Arc::new(p.reachable_window(2));
            let f = sample_lattice_field(&spec, w.clone(), seed).unwrap();
            let cell = cell % w.n_cells();
            let (s, site) = w.cell_coords(cell);
            let site = site.clone();
            if f.get(s, &site) == Some(-1.0) {
                let mut g = f.clone();
                g.set(s, &site, 0.0).unwrap();
                let a = partition_function(&f, &p, 2).unwrap().value;
                let b = partition_function(&g, &p, 2).unwrap().value;
                prop_assert!(b >= a);
            }
        }

        #[test]
        fn mean_invariance_across_walks(a in 0.05f64..1.0, b in 0.05f64..1.0, c in 0.05f64..1.0) {
            let spec = EnvSpec::new(vec![(-1.0, 0.3), (0.0, 0.3), (1.5, 0.4)]).unwrap();
            let z = a + b + c;
            let p1 = IncrementDist::from_1d(&[(-1, a / z), (0, b / z), (1, c / z)]).unwrap();
            let p2 = IncrementDist::from_1d(&[(0, 0.5), (2, 0.5)]).unwrap();
            let j = joint_partition_distribution(&spec, &p1, &p2, 2, DEFAULT_ENUM_CAP).unwrap();
            let m1 = j.marginal(0).unwrap().mean();
            let m2 = j.marginal(1).unwrap().mean();
            prop_assert!((m1 - m2).abs() <= 1e-10);
            prop_assert!((m1 - annealed_mean(&spec, 2)).abs() <= 1e-10);
        }
    }
}
