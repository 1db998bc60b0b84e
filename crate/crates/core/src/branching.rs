//! Branching random walks in random environments.
//!
//! Discrete time: every particle of generation `s - 1` takes a `p`-step and is
//! then replaced by a number of children drawn from `eta(s, arrival site)`, so
//! the expected population at generation `t` is the polymer partition function
//! of `omega = E[children] - 1` with weights at slices `1..=t`.
//!
//! Continuous time: particles jump at rate `kappa` to a uniform neighbour and
//! split in two at rate `lambda`; a mark `(s, i, r)` kills each particle at `i`
//! independently with probability `-r` (all of them for a disaster `r = -1`).

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::envlat::{
    add_sites, origin, sample_mark_set_with, sample_offspring_field, MarkLaw, MarkSet, OffspringField, OffspringSpec,
    Site,
};
use crate::error::{Error, Result};
use crate::increments::IncrementDist;
use crate::pam_ct::{ct_partition_exact, lyapunov_quenched_estimate, random_neighbour, CtEnvOptions, LyapunovEstimate};
use crate::polymer_dt::{free_energy_estimate, partition_function, FreeEnergyEstimate};
use crate::stats::{derive_seed, par_replicas, poisson_cutoff, substream, MCEstimate};

pub const DEFAULT_POPULATION_CAP: u64 = 1_000_000;

/// Generation `s` of a discrete-time run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BRWStateDT {
    pub generation: usize,
    pub counts: BTreeMap<Site, u64>,
    /// The run stopped early because the population exceeded the cap.
    pub capped: bool,
}

impl BRWStateDT {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_extinct(&self) -> bool {
        self.total() == 0
    }
}

pub fn simulate_brw_dt(eta: &OffspringField, p: &IncrementDist, t: usize, seed: u64) -> Result<BRWStateDT> {
    simulate_brw_dt_with(eta, p, t, DEFAULT_POPULATION_CAP, &mut substream(seed, 0))
}

/// Runs up to generation `t`, stopping at extinction or when the population
/// exceeds `cap`.
pub fn simulate_brw_dt_with<R: Rng + ?Sized>(
    eta: &OffspringField,
    p: &IncrementDist,
    t: usize,
    cap: u64,
    rng: &mut R,
) -> Result<BRWStateDT> {
    if eta.window().dim() != p.dim() {
        return Err(Error::DimensionMismatch { left: eta.window().dim(), right: p.dim() });
    }
    if t > eta.window().horizon() {
        return Err(Error::WindowTooSmall(format!("offspring field has horizon {} < {t}", eta.window().horizon())));
    }
    let mut state = BRWStateDT { generation: 0, counts: BTreeMap::from([(origin(p.dim()), 1)]), capped: false };
    for s in 1..=t {
        let mut next: BTreeMap<Site, u64> = BTreeMap::new();
        let mut total = 0u64;
        for (site, &count) in &state.counts {
            for _ in 0..count {
                let j = add_sites(site, p.sample_step(rng));
                let law = eta
                    .law_at(s, &j)
                    .ok_or_else(|| Error::WindowTooSmall(format!("no offspring law at ({s}, {j:?})")))?;
                let k = law.sample(rng) as u64;
                if k > 0 {
                    *next.entry(j).or_default() += k;
                    total += k;
                }
            }
            if total > cap {
                break;
            }
        }
        state.generation = s;
        state.counts = next;
        if total > cap {
            state.capped = true;
            break;
        }
        if total == 0 {
            break;
        }
    }
    Ok(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManyToOneReport {
    /// `E[total count]` from the partition function (times `e^{lambda t}` in
    /// continuous time); an interval midpoint in continuous time.
    pub exact: f64,
    /// Half-width of the exact side (0 in discrete time).
    pub exact_radius: f64,
    pub mc: MCEstimate,
    pub n_capped: usize,
    pub tolerance: f64,
    pub deviation: f64,
    pub pass: bool,
}

impl ManyToOneReport {
    fn new(exact: f64, exact_radius: f64, counts: &[Option<f64>], z: f64) -> Self {
        let kept: Vec<f64> = counts.iter().flatten().copied().collect();
        let n_capped = counts.len() - kept.len();
        let mc = MCEstimate::from_samples(&kept);
        let deviation = (mc.mean - exact).abs();
        let tolerance = z * mc.se + exact_radius;
        let pass = n_capped == 0 && (deviation <= tolerance || deviation <= 1e-12 * exact.abs().max(1.0));
        Self { exact, exact_radius, mc, n_capped, tolerance, deviation, pass }
    }
}

/// Samples one offspring field on the reachable window, then compares the mean
/// population of `n` runs in it with the partition function of `omega(eta)`.
/// Capped runs are excluded from the mean and fail the verdict.
pub fn many_to_one_check_dt(
    spec: &OffspringSpec,
    p: &IncrementDist,
    t: usize,
    n: usize,
    seed: u64,
) -> Result<ManyToOneReport> {
    if t == 0 || n == 0 {
        return Err(Error::InvalidParameter("many-to-one needs t >= 1 and n >= 1".into()));
    }
    let window = Arc::new(p.reachable_window(t));
    let eta = sample_offspring_field(spec, window, &mut substream(derive_seed(seed, 1), 0))?;
    let z = partition_function(&eta.omega()?, p, t)?.value;
    let runs: Vec<Option<f64>> = par_replicas(n, derive_seed(seed, 2), |rng, _| {
        let st = simulate_brw_dt_with(&eta, p, t, DEFAULT_POPULATION_CAP, rng).expect("field covers reachable sites");
        (!st.capped).then(|| st.total() as f64)
    });
    Ok(ManyToOneReport::new(z, 0.0, &runs, 3.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalReport {
    pub horizon: usize,
    pub n: usize,
    pub frequency: f64,
    pub se: f64,
    /// `curve[s - 1]` = fraction of runs alive at generation `s`.
    pub curve: Vec<f64>,
    /// Runs that hit the population cap; they are counted as alive.
    pub n_capped: usize,
    pub free_energy: Option<FreeEnergyEstimate>,
    /// `None` when the free energy is within 3 SE of 0 or unavailable.
    pub sign_agreement: Option<bool>,
    pub label: String,
}

pub const FINITE_HORIZON_LABEL: &str = "finite-horizon evidence, not a proof of the asymptotic statement";

fn survival_curve(extinct_at: &[Option<usize>], horizon: usize) -> Vec<f64> {
    let n = extinct_at.len() as f64;
    (1..=horizon).map(|s| extinct_at.iter().filter(|e| e.is_none_or(|g| g > s)).count() as f64 / n).collect()
}

/// Alive-at-`T` frequency over `n` independent (environment, branching)
/// samples, with a free-energy estimate from `n_free_energy` environments.
/// Replica `k` uses substream `k` of `seed` for both its field and its run.
pub fn survival_experiment_dt(
    spec: &OffspringSpec,
    p: &IncrementDist,
    horizon: usize,
    n: usize,
    n_free_energy: usize,
    pop_cap: u64,
    seed: u64,
) -> Result<SurvivalReport> {
    if horizon == 0 || n == 0 {
        return Err(Error::InvalidParameter("survival experiment needs T >= 1 and n >= 1".into()));
    }
    let window = Arc::new(p.reachable_window(horizon));
    let runs: Vec<(Option<usize>, bool)> = par_replicas(n, seed, |rng, _| {
        let eta = sample_offspring_field(spec, window.clone(), rng).expect("valid spec");
        let st = simulate_brw_dt_with(&eta, p, horizon, pop_cap, rng).expect("field covers reachable sites");
        let extinct = (!st.capped && st.is_extinct()).then_some(st.generation);
        (extinct, st.capped)
    });
    let extinct_at: Vec<Option<usize>> = runs.iter().map(|r| r.0).collect();
    let curve = survival_curve(&extinct_at, horizon);
    let frequency = *curve.last().expect("horizon >= 1");
    let free_energy = if n_free_energy > 0 {
        free_energy_estimate(&spec.env_spec()?, p, horizon, n_free_energy, derive_seed(seed, 3)).ok()
    } else {
        None
    };
    let sign_agreement = free_energy.as_ref().and_then(|fe| {
        if fe.estimate - 3.0 * fe.se > 0.0 {
            Some(frequency > 0.0)
        } else if fe.estimate + 3.0 * fe.se < 0.0 {
            let mid = curve[(horizon - 1) / 2];
            Some(frequency < mid || frequency == 0.0)
        } else {
            None
        }
    });
    Ok(SurvivalReport {
        horizon,
        n,
        frequency,
        se: (frequency * (1.0 - frequency) / n as f64).sqrt(),
        curve,
        n_capped: runs.iter().filter(|r| r.1).count(),
        free_energy,
        sign_agreement,
        label: FINITE_HORIZON_LABEL.into(),
    })
}

/// Jump rate, branching rate and horizon of the continuous-time model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CTBranchParams {
    pub kappa: f64,
    pub lambda: f64,
    pub horizon: f64,
}

impl CTBranchParams {
    pub fn new(kappa: f64, lambda: f64, horizon: f64) -> Result<Self> {
        if !(kappa >= 0.0 && lambda >= 0.0) || !kappa.is_finite() || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("rates kappa = {kappa}, lambda = {lambda} must be >= 0")));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidParameter(format!("horizon {horizon} must be positive")));
        }
        Ok(Self { kappa, lambda, horizon })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CtEvent {
    Jump { time: f64, particle: u64, from: Site, to: Site },
    Branch { time: f64, parent: u64, children: [u64; 2], site: Site },
    Killed { time: f64, particle: u64, site: Site },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtRun {
    pub final_counts: BTreeMap<Site, u64>,
    pub total: u64,
    pub capped: bool,
    /// Time at which the run stopped (horizon, extinction or cap).
    pub stopped_at: f64,
    pub extinction_time: Option<f64>,
    pub events: Option<Vec<CtEvent>>,
}

fn check_killing_marks(marks: &MarkSet) -> Result<()> {
    match marks.marks().iter().find(|m| m.r > 0.0) {
        Some(m) => Err(Error::InvalidParameter(format!("mark value {} > 0 has no branching meaning", m.r))),
        None => Ok(()),
    }
}

struct Particle {
    id: u64,
    site: Site,
}

pub fn simulate_brw_ct(marks: &MarkSet, params: CTBranchParams, seed: u64) -> Result<CtRun> {
    simulate_brw_ct_with(marks, params, DEFAULT_POPULATION_CAP, true, &mut substream(seed, 0))
}

/// Event-driven simulation. Between marks the next particle event comes after
/// an `Exp(N (kappa + lambda))` time; a mark interrupts the clock, which is
/// valid by memorylessness.
pub fn simulate_brw_ct_with<R: Rng + ?Sized>(
    marks: &MarkSet,
    params: CTBranchParams,
    cap: u64,
    record: bool,
    rng: &mut R,
) -> Result<CtRun> {
    check_killing_marks(marks)?;
    let CTBranchParams { kappa, lambda, horizon } = params;
    let dim = marks.dim();
    let mut particles = vec![Particle { id: 0, site: origin(dim) }];
    let mut occupancy: BTreeMap<Site, u64> = BTreeMap::from([(origin(dim), 1)]);
    let mut next_id = 1u64;
    let mut events = record.then(Vec::new);
    let marks: Vec<_> = marks.marks().iter().filter(|m| m.time <= horizon).collect();
    let mut mi = 0;
    let mut now = 0.0;
    let per_particle = kappa + lambda;
    let mut capped = false;
    let mut extinction_time = None;
    loop {
        let n = particles.len();
        if n == 0 {
            extinction_time = Some(now);
            break;
        }
        if n as u64 > cap {
            capped = true;
            break;
        }
        let next_mark = marks.get(mi).map_or(f64::INFINITY, |m| m.time);
        let clock = if per_particle > 0.0 {
            now + Exp::new(n as f64 * per_particle).expect("positive rate").sample(rng)
        } else {
            f64::INFINITY
        };
        if next_mark.min(clock) > horizon {
            now = horizon;
            break;
        }
        if next_mark <= clock {
            let m = marks[mi];
            mi += 1;
            now = m.time;
            if occupancy.get(&m.site).copied().unwrap_or(0) == 0 {
                continue;
            }
            let survive = 1.0 + m.r;
            let mut k = 0;
            while k < particles.len() {
                if particles[k].site == m.site && (survive == 0.0 || rng.random::<f64>() >= survive) {
                    let dead = particles.swap_remove(k);
                    *occupancy.get_mut(&dead.site).expect("occupied") -= 1;
                    if let Some(ev) = events.as_mut() {
                        ev.push(CtEvent::Killed { time: now, particle: dead.id, site: dead.site });
                    }
                } else {
                    k += 1;
                }
            }
            continue;
        }
        now = clock;
        let k = rng.random_range(0..n);
        if rng.random::<f64>() * per_particle < kappa {
            let from = particles[k].site.clone();
            random_neighbour(&mut particles[k].site, rng);
            *occupancy.get_mut(&from).expect("occupied") -= 1;
            *occupancy.entry(particles[k].site.clone()).or_default() += 1;
            if let Some(ev) = events.as_mut() {
                ev.push(CtEvent::Jump { time: now, particle: particles[k].id, from, to: particles[k].site.clone() });
            }
        } else {
            let parent = particles[k].id;
            let site = particles[k].site.clone();
            let children = [next_id, next_id + 1];
            next_id += 2;
            particles[k].id = children[0];
            particles.push(Particle { id: children[1], site: site.clone() });
            *occupancy.get_mut(&site).expect("occupied") += 1;
            if let Some(ev) = events.as_mut() {
                ev.push(CtEvent::Branch { time: now, parent, children, site });
            }
        }
    }
    occupancy.retain(|_, c| *c > 0);
    Ok(CtRun {
        total: particles.len() as u64,
        final_counts: occupancy,
        capped,
        stopped_at: now,
        extinction_time,
        events,
    })
}

/// Mean population of `n` runs in fixed marks against `e^{lambda t}` times the
/// certified interval of `Z^kappa_t`; passes when the gap is within
/// `3 SE + e^{lambda t} eps`.
pub fn many_to_one_check_ct(
    marks: &MarkSet,
    params: CTBranchParams,
    n: usize,
    eps: f64,
    seed: u64,
) -> Result<ManyToOneReport> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let iv = ct_partition_exact(marks, params.kappa, params.horizon, eps)?;
    let growth = (params.lambda * params.horizon).exp();
    check_killing_marks(marks)?;
    let runs: Vec<Option<f64>> = par_replicas(n, seed, |rng, _| {
        let run = simulate_brw_ct_with(marks, params, DEFAULT_POPULATION_CAP, false, rng).expect("validated marks");
        (!run.capped).then_some(run.total as f64)
    });
    Ok(ManyToOneReport::new(growth * iv.midpoint(), growth * (iv.width() / 2.0 + eps), &runs, 3.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub kappa: f64,
    pub lambda: f64,
    pub frequency: f64,
    pub se: f64,
    pub n: usize,
    /// Runs that hit the population cap; counted as alive.
    pub n_capped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaMonotonicity {
    pub lambda: f64,
    pub kappa_lo: f64,
    pub kappa_hi: f64,
    /// `frequency(kappa_hi) - frequency(kappa_lo)`.
    pub difference: f64,
    pub sigma: f64,
    /// `difference >= -3 sigma`.
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTable {
    pub horizon: f64,
    pub cells: Vec<PhaseCell>,
    pub lambda0: Vec<(f64, LyapunovEstimate)>,
    pub monotonicity: Vec<KappaMonotonicity>,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseOptions {
    pub env: CtEnvOptions,
    pub pop_cap: u64,
    /// Environments for each quenched exponent estimate; 0 skips them.
    pub n_lambda0: usize,
}

/// Survival frequency at `T` on the `(kappa, lambda)` grid. Replica `k` sees
/// the same environment in every cell, so cells are paired.
pub fn survival_experiment_ct(
    law: &MarkLaw,
    kappas: &[f64],
    lambdas: &[f64],
    horizon: f64,
    n: usize,
    seed: u64,
    opts: PhaseOptions,
) -> Result<PhaseTable> {
    if kappas.is_empty() || lambdas.is_empty() || n == 0 {
        return Err(Error::InvalidParameter("survival grid needs kappas, lambdas and n >= 1".into()));
    }
    for &k in kappas {
        for &l in lambdas {
            CTBranchParams::new(k, l, horizon)?;
        }
    }
    let env_seed = derive_seed(seed, 1);
    let run_seed = derive_seed(seed, 2);
    // alive[k][cell]
    let alive: Vec<Vec<(bool, bool)>> = par_replicas(n, env_seed, |rng, k| {
        let marks = sample_mark_set_with(law, opts.env.dim, horizon, opts.env.env_radius, rng).expect("validated law");
        let mut out = Vec::with_capacity(kappas.len() * lambdas.len());
        for &kappa in kappas {
            for &lambda in lambdas {
                let params = CTBranchParams { kappa, lambda, horizon };
                let mut r: ChaCha8Rng = substream(run_seed, k as u64);
                let run = simulate_brw_ct_with(&marks, params, opts.pop_cap, false, &mut r).expect("validated marks");
                out.push((run.capped || run.total > 0, run.capped));
            }
        }
        out
    });
    let mut cells = Vec::new();
    for (a, &kappa) in kappas.iter().enumerate() {
        for (b, &lambda) in lambdas.iter().enumerate() {
            let c = a * lambdas.len() + b;
            let frequency = alive.iter().filter(|r| r[c].0).count() as f64 / n as f64;
            cells.push(PhaseCell {
                kappa,
                lambda,
                frequency,
                se: (frequency * (1.0 - frequency) / n as f64).sqrt(),
                n,
                n_capped: alive.iter().filter(|r| r[c].1).count(),
            });
        }
    }
    let mut monotonicity = Vec::new();
    let mut order: Vec<usize> = (0..kappas.len()).collect();
    order.sort_by(|&i, &j| kappas[i].total_cmp(&kappas[j]));
    for (b, &lambda) in lambdas.iter().enumerate() {
        for w in order.windows(2) {
            let (lo, hi) = (w[0] * lambdas.len() + b, w[1] * lambdas.len() + b);
            let difference = cells[hi].frequency - cells[lo].frequency;
            // paired differences: SE of the per-replica indicator difference
            let diffs: Vec<f64> = alive.iter().map(|r| r[hi].0 as u8 as f64 - r[lo].0 as u8 as f64).collect();
            let sigma = MCEstimate::from_samples(&diffs).se;
            monotonicity.push(KappaMonotonicity {
                lambda,
                kappa_lo: kappas[w[0]],
                kappa_hi: kappas[w[1]],
                difference,
                sigma,
                consistent: difference >= -3.0 * sigma,
            });
        }
    }
    let mut lambda0 = Vec::new();
    if opts.n_lambda0 > 0 {
        for &kappa in kappas {
            if let Ok(est) =
                lyapunov_quenched_estimate(law, kappa, horizon, opts.n_lambda0, derive_seed(seed, 3), opts.env)
            {
                lambda0.push((kappa, est));
            }
        }
    }
    Ok(PhaseTable { horizon, cells, lambda0, monotonicity, label: FINITE_HORIZON_LABEL.into() })
}

/// Bounds on the probability that a population confined to one site is alive
/// at `T`: Yule growth at rate `lambda` per particle, marks at `rate`, each
/// mark thinning the population binomially with survival `1 + r`. States above
/// `n_max` are lumped; `lo` counts them dead and `hi` alive.
pub fn single_site_survival_oracle(law: &MarkLaw, lambda: f64, horizon: f64, n_max: usize) -> Result<(f64, f64)> {
    if law.rho.iter().any(|a| a.0 > 0.0) {
        return Err(Error::InvalidParameter("oracle covers marks with r <= 0 only".into()));
    }
    if !(lambda >= 0.0) || !(horizon > 0.0) || n_max == 0 {
        return Err(Error::InvalidParameter("oracle needs lambda >= 0, T > 0, n_max >= 1".into()));
    }
    // states 0..=n_max, overflow at n_max + 1 (absorbing)
    let over = n_max + 1;
    let uni = lambda * n_max as f64 + law.rate;
    let thin: Vec<Vec<f64>> = (0..=n_max)
        .map(|k| {
            let mut row = vec![0.0; k + 1];
            for &(r, w) in &law.rho {
                let s = 1.0 + r;
                for (j, v) in row.iter_mut().enumerate() {
                    *v += w * binomial_pmf(k, j, s);
                }
            }
            row
        })
        .collect();
    let step = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; over + 1];
        out[over] = v[over];
        for k in 0..=n_max {
            if v[k] == 0.0 {
                continue;
            }
            let birth = lambda * k as f64 / uni;
            let mark = law.rate / uni;
            out[if k == n_max { over } else { k + 1 }] += v[k] * birth;
            for (j, p) in thin[k].iter().enumerate() {
                out[j] += v[k] * mark * p;
            }
            out[k] += v[k] * (1.0 - birth - mark);
        }
        out
    };
    let mean = uni * horizon;
    let cutoff = poisson_cutoff(mean, 1e-14);
    let mut v = vec![0.0; over + 1];
    v[1] = 1.0;
    let mut dist = vec![0.0; over + 1];
    let mut weight = (-mean).exp();
    let mut log_weight = -mean;
    for j in 0..=cutoff {
        if j > 0 {
            log_weight += mean.ln() - (j as f64).ln();
            weight = log_weight.exp();
        }
        for (d, x) in dist.iter_mut().zip(&v) {
            *d += weight * x;
        }
        v = step(&v);
    }
    let alive: f64 = dist[1..=n_max].iter().sum();
    let dropped = 1.0 - dist.iter().sum::<f64>();
    Ok((alive, alive + dist[over] + dropped.max(0.0)))
}

fn binomial_pmf(n: usize, k: usize, p: f64) -> f64 {
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let ln_choose = statrs::function::factorial::ln_binomial(n as u64, k as u64);
    (ln_choose + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envlat::{sample_mark_set, Mark, OffspringLaw};
    use proptest::prelude::*;

    fn field(p: &IncrementDist, t: usize, law: OffspringLaw) -> OffspringField {
        OffspringField::uniform(Arc::new(p.reachable_window(t)), law)
    }

    #[test]
    fn dt_trivial_offspring() {
        let p = IncrementDist::simple_random_walk(1);
        let one = simulate_brw_dt(&field(&p, 6, OffspringLaw::dirac(1)), &p, 6, 3).unwrap();
        assert_eq!(one.total(), 1);
        assert_eq!(one.generation, 6);
        let none = simulate_brw_dt(&field(&p, 6, OffspringLaw::dirac(0)), &p, 6, 3).unwrap();
        assert!(none.is_extinct());
        assert_eq!(none.generation, 1);
        let lazy = IncrementDist::dirac(1);
        let dbl = simulate_brw_dt(&field(&lazy, 5, OffspringLaw::dirac(2)), &lazy, 5, 3).unwrap();
        assert_eq!(dbl.counts, BTreeMap::from([(vec![0], 32)]));
    }

    #[test]
    fn dt_cap_flags() {
        let lazy = IncrementDist::dirac(1);
        let eta = field(&lazy, 30, OffspringLaw::dirac(2));
        let st = simulate_brw_dt_with(&eta, &lazy, 30, 1000, &mut substream(0, 0)).unwrap();
        assert!(st.capped);
        assert_eq!(st.generation, 10);
    }

    #[test]
    fn dt_window_too_small() {
        let p = IncrementDist::simple_random_walk(1);
        let eta = field(&IncrementDist::dirac(1), 3, OffspringLaw::dirac(1));
        assert!(matches!(simulate_brw_dt(&eta, &p, 3, 0), Err(Error::WindowTooSmall(_))));
    }

    #[test]
    fn many_to_one_dt_trivial_and_lazy() {
        let p = IncrementDist::simple_random_walk(1);
        let r = many_to_one_check_dt(&OffspringSpec::single(OffspringLaw::dirac(1)), &p, 4, 100, 1).unwrap();
        assert_eq!((r.exact, r.mc.mean, r.mc.se), (1.0, 1.0, 0.0));
        assert!(r.pass);
        let law = OffspringLaw::new(vec![0.2, 0.3, 0.5]).unwrap();
        let m = law.mean();
        let r = many_to_one_check_dt(&OffspringSpec::single(law), &IncrementDist::dirac(1), 4, 20_000, 2).unwrap();
        assert!((r.exact - m.powi(4)).abs() < 1e-12);
        assert!(r.deviation <= 4.0 * r.mc.se, "{r:?}");
    }

    #[test]
    fn many_to_one_dt_mixed_field() {
        let spec = OffspringSpec::new(vec![
            (OffspringLaw::new(vec![0.5, 0.0, 0.5]).unwrap(), 0.5),
            (OffspringLaw::new(vec![0.3, 0.7]).unwrap(), 0.5),
        ])
        .unwrap();
        let p = IncrementDist::from_1d(&[(-1, 0.5), (1, 0.5)]).unwrap();
        let r = many_to_one_check_dt(&spec, &p, 4, 20_000, 5).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn survival_dt_doubling() {
        let spec = OffspringSpec::single(OffspringLaw::dirac(2));
        let r = survival_experiment_dt(&spec, &IncrementDist::simple_random_walk(1), 8, 20, 5, 1_000_000, 0).unwrap();
        assert_eq!(r.frequency, 1.0);
        let fe = r.free_energy.unwrap();
        assert!((fe.estimate - 2f64.ln()).abs() < 1e-12);
        assert_eq!(r.sign_agreement, Some(true));
    }

    #[test]
    fn survival_dt_subcritical_decays() {
        let spec = OffspringSpec::single(OffspringLaw::new(vec![0.5, 0.2, 0.3]).unwrap());
        let r =
            survival_experiment_dt(&spec, &IncrementDist::simple_random_walk(1), 12, 2000, 0, 1_000_000, 4).unwrap();
        assert!(r.curve.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.curve[11] < r.curve[3]);
    }

    #[test]
    fn ct_trivial_runs() {
        let m = MarkSet::empty(1, 2.0);
        let run = simulate_brw_ct(&m, CTBranchParams::new(1.0, 0.0, 2.0).unwrap(), 1).unwrap();
        assert_eq!(run.total, 1);
        let d = MarkSet::new(1, 2.0, 0, vec![Mark { time: 0.7, site: vec![0], r: -1.0 }]).unwrap();
        let run = simulate_brw_ct(&d, CTBranchParams::new(0.0, 0.0, 2.0).unwrap(), 1).unwrap();
        assert_eq!(run.extinction_time, Some(0.7));
        let bad = MarkSet::new(1, 2.0, 0, vec![Mark { time: 0.7, site: vec![0], r: 0.5 }]).unwrap();
        assert!(simulate_brw_ct(&bad, CTBranchParams::new(0.0, 0.0, 2.0).unwrap(), 1).is_err());
    }

    #[test]
    fn ct_yule_mean() {
        let m = MarkSet::empty(1, 1.0);
        let params = CTBranchParams::new(0.0, 1.0, 1.0).unwrap();
        let r = many_to_one_check_ct(&m, params, 20_000, 1e-9, 3).unwrap();
        assert!((r.exact - 1f64.exp()).abs() < 1e-8);
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn ct_many_to_one_random_disasters() {
        let law = MarkLaw::disasters(1.0).unwrap();
        let m = sample_mark_set(&law, 1, 1.0, 8, 11).unwrap();
        let r = many_to_one_check_ct(&m, CTBranchParams::new(1.0, 0.5, 1.0).unwrap(), 20_000, 1e-6, 12).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn ct_lineage_log_is_consistent() {
        let law = MarkLaw::new(2.0, vec![(-1.0, 0.5), (-0.5, 0.5)]).unwrap();
        let m = sample_mark_set(&law, 1, 2.0, 4, 1).unwrap();
        let run = simulate_brw_ct(&m, CTBranchParams::new(1.0, 1.5, 2.0).unwrap(), 9).unwrap();
        let mut alive = std::collections::BTreeSet::from([0u64]);
        let mut last = 0.0;
        for ev in run.events.as_ref().unwrap() {
            let time = match ev {
                CtEvent::Jump { time, particle, .. } => {
                    assert!(alive.contains(particle));
                    *time
                }
                CtEvent::Branch { time, parent, children, .. } => {
                    assert!(alive.remove(parent));
                    assert!(alive.insert(children[0]) && alive.insert(children[1]));
                    *time
                }
                CtEvent::Killed { time, particle, .. } => {
                    assert!(alive.remove(particle));
                    *time
                }
            };
            assert!(time >= last);
            last = time;
        }
        assert_eq!(alive.len() as u64, run.total);
    }

    #[test]
    fn oracle_pure_disasters_and_pure_yule() {
        let law = MarkLaw::disasters(1.0).unwrap();
        let (lo, hi) = single_site_survival_oracle(&law, 1.0, 2.0, 200).unwrap();
        assert!(lo <= (-2.0f64).exp() + 1e-12 && (-2.0f64).exp() <= hi + 1e-12);
        assert!(hi - lo < 1e-9);
    }

    #[test]
    fn ct_kappa_zero_matches_oracle() {
        let law = MarkLaw::new(1.0, vec![(-1.0, 0.3), (-0.5, 0.7)]).unwrap();
        let (lo, hi) = single_site_survival_oracle(&law, 0.8, 2.0, 400).unwrap();
        let opts =
            PhaseOptions { env: CtEnvOptions { dim: 1, env_radius: 0, eps: 1e-6 }, pop_cap: 100_000, n_lambda0: 0 };
        let t = survival_experiment_ct(&law, &[0.0], &[0.8], 2.0, 4000, 6, opts).unwrap();
        let c = &t.cells[0];
        let sigma = (lo * (1.0 - lo) / c.n as f64).sqrt();
        assert!(c.frequency >= lo - 4.0 * sigma && c.frequency <= hi + 4.0 * sigma, "{c:?} vs [{lo}, {hi}]");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn many_to_one_exact_without_branching(seed in 0u64..1000) {
            // single-particle degeneration: offspring is 0 or 1, lazy walk
            let spec = OffspringSpec::new(vec![
                (OffspringLaw::dirac(1), 0.7),
                (OffspringLaw::dirac(0), 0.3),
            ]).unwrap();
            let lazy = IncrementDist::dirac(1);
            let window = Arc::new(lazy.reachable_window(3));
            let eta = sample_offspring_field(&spec, window, &mut substream(seed, 0)).unwrap();
            let z = partition_function(&eta.omega().unwrap(), &lazy, 3).unwrap().value;
            let st = simulate_brw_dt(&eta, &lazy, 3, seed).unwrap();
            prop_assert!((st.total() as f64 - z).abs() <= 1e-12);
        }

        #[test]
        fn ct_counts_nonnegative_and_survival_monotone(seed in 0u64..1000) {
            let law = MarkLaw::disasters(1.0).unwrap();
            let m = sample_mark_set(&law, 1, 3.0, 5, seed).unwrap();
            let run = simulate_brw_ct(&m, CTBranchParams::new(1.0, 0.7, 3.0).unwrap(), seed).unwrap();
            prop_assert_eq!(run.final_counts.values().sum::<u64>(), run.total);
            prop_assert!(run.final_counts.values().all(|&c| c > 0));
        }
    }
}
