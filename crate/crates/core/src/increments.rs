//! Step distributions of walks: convolution, majorization with certificates,
//! symmetric-unimodal checks, named families, and the continuous-time simple
//! random walk kernel computed by uniformization.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envlat::{add_sites, origin, Site, Window};
use crate::error::{Error, Result};
use crate::stats::{poisson_cutoff, poisson_pmf, poisson_tail};

const MASS_TOL: f64 = 1e-12;

/// Finite-support step law on `Z^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IncrementDistRepr", into = "IncrementDistRepr")]
pub struct IncrementDist {
    dim: usize,
    support: Vec<Site>,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct IncrementDistRepr {
    dim: usize,
    atoms: Vec<(Site, f64)>,
}

impl TryFrom<IncrementDistRepr> for IncrementDist {
    type Error = Error;
    fn try_from(r: IncrementDistRepr) -> Result<Self> {
        IncrementDist::new(r.dim, r.atoms)
    }
}

impl From<IncrementDist> for IncrementDistRepr {
    fn from(p: IncrementDist) -> Self {
        IncrementDistRepr { dim: p.dim, atoms: p.support.into_iter().zip(p.probs).collect() }
    }
}

impl IncrementDist {
    /// Zero-probability atoms are dropped; the rest are sorted by site.
    pub fn new(dim: usize, atoms: Vec<(Site, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut total = 0.0;
        for (site, p) in atoms {
            if site.len() != dim {
                return Err(Error::DimensionMismatch { left: dim, right: site.len() });
            }
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::InvalidDistribution(format!("negative step probability {p}")));
            }
            total += p;
            if map.insert(site.clone(), p).is_some() {
                return Err(Error::InvalidDistribution(format!("duplicate support site {site:?}")));
            }
        }
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDistribution(format!("step probabilities sum to {total}")));
        }
        map.retain(|_, p| *p > 0.0);
        let (support, probs) = map.into_iter().unzip();
        Ok(Self { dim, support, probs })
    }

    pub fn from_1d(atoms: &[(i64, f64)]) -> Result<Self> {
        Self::new(1, atoms.iter().map(|&(i, p)| (vec![i], p)).collect())
    }

    pub fn dirac(dim: usize) -> Self {
        Self { dim, support: vec![origin(dim)], probs: vec![1.0] }
    }

    pub fn dirac_at(site: Site) -> Self {
        Self { dim: site.len(), support: vec![site], probs: vec![1.0] }
    }

    /// Uniform on `{lo..=hi}` in one dimension.
    pub fn uniform_1d(lo: i64, hi: i64) -> Result<Self> {
        if hi < lo {
            return Err(Error::InvalidParameter(format!("empty range {lo}..={hi}")));
        }
        let p = 1.0 / (hi - lo + 1) as f64;
        Self::from_1d(&(lo..=hi).map(|i| (i, p)).collect::<Vec<_>>())
    }

    /// `Bin(n, p)` increments on `{0..=n}`.
    pub fn binomial(n: u32, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("binomial p = {p}")));
        }
        let mut atoms = Vec::with_capacity(n as usize + 1);
        let mut coef = 1.0;
        for k in 0..=n {
            if k > 0 {
                coef *= (n - k + 1) as f64 / k as f64;
            }
            atoms.push((k as i64, coef * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)));
        }
        // renormalise rounding so the mass check is exact to 1e-12
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        atoms.iter_mut().for_each(|a| a.1 /= total);
        Self::from_1d(&atoms)
    }

    /// Nearest-neighbour steps `+-e_k`, each with probability `1/(2d)`.
    pub fn simple_random_walk(dim: usize) -> Self {
        let mut atoms = Vec::with_capacity(2 * dim);
        for k in 0..dim {
            for sign in [-1, 1] {
                let mut s = origin(dim);
                s[k] = sign;
                atoms.push((s, 1.0 / (2 * dim) as f64));
            }
        }
        Self::new(dim, atoms).expect("valid by construction")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self) -> &[Site] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Site, f64)> {
        self.support.iter().zip(self.probs.iter().copied())
    }

    pub fn prob_of(&self, site: &[i64]) -> f64 {
        match self.support.binary_search_by(|s| s.as_slice().cmp(site)) {
            Ok(k) => self.probs[k],
            Err(_) => 0.0,
        }
    }

    pub fn sample_step<R: Rng + ?Sized>(&self, rng: &mut R) -> &Site {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (s, p) in self.iter() {
            acc += p;
            if u < acc {
                return s;
            }
        }
        self.support.last().expect("non-empty support")
    }

    /// Sites reachable at times `1..=t` from the origin.
    pub fn reachable_window(&self, t: usize) -> Window {
        let mut slices = Vec::with_capacity(t);
        let mut current = vec![origin(self.dim)];
        for _ in 0..t {
            let mut next: Vec<Site> =
                current.iter().flat_map(|i| self.support.iter().map(move |d| add_sites(i, d))).collect();
            next.sort();
            next.dedup();
            slices.push(next.clone());
            current = next;
        }
        Window::new(self.dim, slices).expect("dimension checked at construction")
    }

    /// Every path of length `t` from the origin with its probability.
    pub fn paths(&self, t: usize) -> Vec<(Vec<Site>, f64)> {
        let mut out = vec![(vec![origin(self.dim)], 1.0)];
        for _ in 0..t {
            let mut next = Vec::with_capacity(out.len() * self.support.len());
            for (path, p) in &out {
                let last = path.last().expect("non-empty path");
                for (d, q) in self.iter() {
                    let mut np = path.clone();
                    np.push(add_sites(last, d));
                    next.push((np, p * q));
                }
            }
            out = next;
        }
        out
    }
}

/// `(p * q)(k) = sum_j p(j) q(k - j)`.
pub fn convolve(p: &IncrementDist, q: &IncrementDist) -> Result<IncrementDist> {
    if p.dim != q.dim {
        return Err(Error::DimensionMismatch { left: p.dim, right: q.dim });
    }
    let mut map: BTreeMap<Site, f64> = BTreeMap::new();
    for (a, pa) in p.iter() {
        for (b, qb) in q.iter() {
            *map.entry(add_sites(a, b)).or_default() += pa * qb;
        }
    }
    IncrementDist::new(p.dim, map.into_iter().collect())
}

/// Outcome of a majorization test `p <=_M q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorizationCertificate {
    pub verdict: bool,
    /// `sum_{i<=k} q_(i) - sum_{i<=k} p_(i)` with both vectors sorted in
    /// decreasing order, for `k = 1..=n`.
    pub gaps: Vec<f64>,
    /// First `k` (0-based) whose gap is below `-tol`.
    pub failing_index: Option<usize>,
    pub mass_mismatch: bool,
}

fn sorted_desc(v: &[f64], len: usize) -> Vec<f64> {
    let mut out = v.to_vec();
    out.resize(len, 0.0);
    out.sort_by(|a, b| b.total_cmp(a));
    out
}

/// Decides `p <=_M q` ("q is more concentrated") for non-negative vectors,
/// padding the shorter one with zeros.
pub fn is_majorized(p: &[f64], q: &[f64], tol: f64) -> MajorizationCertificate {
    let n = p.len().max(q.len());
    let ps = sorted_desc(p, n);
    let qs = sorted_desc(q, n);
    let mut gaps = Vec::with_capacity(n);
    let (mut sp, mut sq) = (0.0, 0.0);
    let mut failing_index = None;
    for k in 0..n {
        sp += ps[k];
        sq += qs[k];
        let g = sq - sp;
        if g < -tol && failing_index.is_none() {
            failing_index = Some(k);
        }
        gaps.push(g);
    }
    let mass_mismatch = (sp - sq).abs() > tol;
    MajorizationCertificate { verdict: failing_index.is_none() && !mass_mismatch, gaps, failing_index, mass_mismatch }
}

/// [`is_majorized`] for step laws, over the union of their supports.
pub fn is_majorized_dist(p: &IncrementDist, q: &IncrementDist, tol: f64) -> Result<MajorizationCertificate> {
    if p.dim != q.dim {
        return Err(Error::DimensionMismatch { left: p.dim, right: q.dim });
    }
    let mut sites: Vec<&Site> = p.support.iter().chain(q.support.iter()).collect();
    sites.sort();
    sites.dedup();
    let pv: Vec<f64> = sites.iter().map(|s| p.prob_of(s)).collect();
    let qv: Vec<f64> = sites.iter().map(|s| q.prob_of(s)).collect();
    Ok(is_majorized(&pv, &qv, tol))
}

/// Symmetric about 0 and non-increasing on `i >= 0` (one dimension only;
/// returns `false` for `d != 1`).
pub fn is_symmetric_unimodal(p: &IncrementDist) -> bool {
    const TOL: f64 = 1e-12;
    if p.dim != 1 {
        return false;
    }
    let reach = p.support.iter().map(|s| s[0].abs()).max().unwrap_or(0);
    let mut prev = f64::INFINITY;
    for i in 0..=reach {
        let a = p.prob_of(&[i]);
        if (a - p.prob_of(&[-i])).abs() > TOL || a > prev + TOL {
            return false;
        }
        prev = a;
    }
    true
}

/// `p(i) = C e^{-|i|^alpha}` on `{-cutoff..cutoff}`.
pub fn heavy_tail_increments(alpha: f64, cutoff: i64) -> Result<IncrementDist> {
    if !(alpha > 0.0) || cutoff < 1 {
        return Err(Error::InvalidParameter(format!("alpha = {alpha}, cutoff = {cutoff}")));
    }
    let w: Vec<(i64, f64)> = (-cutoff..=cutoff).map(|i| (i, (-(i.unsigned_abs() as f64).powf(alpha)).exp())).collect();
    let z: f64 = w.iter().map(|a| a.1).sum();
    IncrementDist::from_1d(&w.into_iter().map(|(i, x)| (i, x / z)).collect::<Vec<_>>())
}

/// Step law on the children `1..=K` of a tree node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TreeIncrementDist {
    probs: Vec<f64>,
}

impl TreeIncrementDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidParameter("tree arity must be at least 2".into()));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidDistribution(format!("negative child probability in {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDistribution(format!("child probabilities sum to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(arity: usize) -> Result<Self> {
        Self::new(vec![1.0 / arity as f64; arity])
    }

    pub fn arity(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability of child `a` (1-based).
    pub fn prob(&self, a: usize) -> f64 {
        self.probs[a - 1]
    }
}

impl TryFrom<Vec<f64>> for TreeIncrementDist {
    type Error = Error;
    fn try_from(p: Vec<f64>) -> Result<Self> {
        Self::new(p)
    }
}

impl From<TreeIncrementDist> for Vec<f64> {
    fn from(p: TreeIncrementDist) -> Self {
        p.probs
    }
}

/// Continuous-time simple random walk: jumps at rate `kappa` to a uniformly
/// chosen nearest neighbour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CTWalkParams {
    pub kappa: f64,
    pub dim: usize,
}

impl CTWalkParams {
    pub fn new(kappa: f64, dim: usize) -> Result<Self> {
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidParameter(format!("jump rate {kappa} must be >= 0")));
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        Ok(Self { kappa, dim })
    }
}

/// The box `{-R..R}^d` with its nearest-neighbour structure; mass stepping
/// out of the box is absorbed (dropped).
#[derive(Debug, Clone)]
pub struct BoxLattice {
    dim: usize,
    radius: i64,
    neighbours: Vec<Vec<usize>>,
}

impl BoxLattice {
    pub fn new(dim: usize, radius: i64) -> Self {
        let side = (2 * radius + 1) as usize;
        let n = side.pow(dim as u32);
        let mut neighbours = Vec::with_capacity(n);
        for idx in 0..n {
            let mut list = Vec::with_capacity(2 * dim);
            let mut stride = 1;
            for _ in 0..dim {
                let c = (idx / stride) % side;
                if c > 0 {
                    list.push(idx - stride);
                }
                if c + 1 < side {
                    list.push(idx + stride);
                }
                stride *= side;
            }
            neighbours.push(list);
        }
        Self { dim, radius, neighbours }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> i64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.neighbours.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbours.is_empty()
    }

    /// Index of `site`, with the first coordinate varying fastest.
    pub fn index(&self, site: &[i64]) -> Option<usize> {
        let side = 2 * self.radius + 1;
        let mut idx = 0i64;
        let mut stride = 1i64;
        for &c in site {
            if c.abs() > self.radius {
                return None;
            }
            idx += (c + self.radius) * stride;
            stride *= side;
        }
        Some(idx as usize)
    }

    pub fn site(&self, mut idx: usize) -> Site {
        let side = (2 * self.radius + 1) as usize;
        (0..self.dim)
            .map(|_| {
                let c = idx % side;
                idx /= side;
                c as i64 - self.radius
            })
            .collect()
    }

    /// One step of the simple random walk stencil; symmetric, so it serves
    /// for both forward (mass) and backward (function) evolution.
    pub fn step(&self, v: &[f64], out: &mut [f64]) {
        let w = 1.0 / (2 * self.dim) as f64;
        for (o, nb) in out.iter_mut().zip(&self.neighbours) {
            *o = w * nb.iter().map(|&j| v[j]).sum::<f64>();
        }
    }

    /// Applies `e^{-m} sum_{n<=N} m^n/n! S^n` with `m = kappa * dt` and `N`
    /// the smallest cutoff whose Poisson tail is below `tail_eps`; returns the
    /// tail probability actually discarded.
    pub fn evolve(&self, v: &mut Vec<f64>, mean: f64, tail_eps: f64) -> f64 {
        if mean == 0.0 {
            return 0.0;
        }
        let cutoff = poisson_cutoff(mean, tail_eps);
        let mut acc: Vec<f64> = v.iter().map(|x| x * poisson_pmf(mean, 0)).collect();
        let mut cur = v.clone();
        let mut next = vec![0.0; v.len()];
        for n in 1..=cutoff {
            self.step(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
            let w = poisson_pmf(mean, n);
            for (a, c) in acc.iter_mut().zip(&cur) {
                *a += w * c;
            }
        }
        *v = acc;
        poisson_tail(mean, cutoff + 1)
    }
}

/// Transition kernel of the rate-`kappa` walk on a box, absorbed at exit.
#[derive(Debug, Clone)]
pub struct SrwKernel {
    pub lattice: BoxLattice,
    /// Row-major; row `i` is the law at time `t` started from site `i`.
    pub matrix: Vec<f64>,
    pub cutoff: u64,
    /// Bound on `|p_t(0, j) - p^box_t(0, j)|` summed over `j`, for the origin row.
    pub error_bound: f64,
    series_tail: f64,
    mean_jumps: f64,
}

impl SrwKernel {
    pub fn p(&self, from: &[i64], to: &[i64]) -> Option<f64> {
        let n = self.lattice.len();
        Some(self.matrix[self.lattice.index(from)? * n + self.lattice.index(to)?])
    }

    pub fn row(&self, from: &[i64]) -> Option<&[f64]> {
        let n = self.lattice.len();
        let i = self.lattice.index(from)?;
        Some(&self.matrix[i * n..(i + 1) * n])
    }

    /// Error bound for the row started at `from`: leaving the box needs at
    /// least `R + 1 - |from|_inf` jumps.
    pub fn row_error_bound(&self, from: &[i64]) -> f64 {
        let inf = from.iter().map(|c| c.abs()).max().unwrap_or(0);
        let needed = (self.lattice.radius() - inf).max(0) as u64;
        self.series_tail + poisson_tail(self.mean_jumps, needed)
    }
}

/// Uniformized transition probabilities of the rate-`kappa` simple random
/// walk on `{-R..R}^d`, absorbed on exit.
pub fn ct_srw_kernel(params: CTWalkParams, t: f64, radius: i64, eps: f64) -> Result<SrwKernel> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps = {eps} must be positive")));
    }
    if radius < 1 {
        return Err(Error::InvalidParameter(format!("radius = {radius} must be >= 1")));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("time {t} must be >= 0")));
    }
    let lattice = BoxLattice::new(params.dim, radius);
    let n = lattice.len();
    if n * n > 50_000_000 {
        return Err(Error::ResourceLimit(format!("kernel matrix with {n} sites per side")));
    }
    let mean = params.kappa * t;
    let cutoff = if mean == 0.0 { 0 } else { poisson_cutoff(mean, eps / 2.0) };
    let mut matrix = vec![0.0; n * n];
    let mut series_tail = 0.0;
    for i in 0..n {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        series_tail = lattice.evolve(&mut v, mean, eps / 2.0);
        matrix[i * n..(i + 1) * n].copy_from_slice(&v);
    }
    let error_bound = series_tail + poisson_tail(mean, radius as u64);
    Ok(SrwKernel { lattice, matrix, cutoff, error_bound, series_tail, mean_jumps: mean })
}
