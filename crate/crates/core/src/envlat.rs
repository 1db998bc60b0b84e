//! Environment models: i.i.d. lattice fields, continuous-time mark sets,
//! tree environments and offspring fields, together with their samplers,
//! exhaustive enumerators and shift actions.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::substream;

/// A point of `Z^d`.
pub type Site = Vec<i64>;

/// A lattice path; entry `s` is the position at time `s`, entry 0 the start.
pub type Path = Vec<Site>;

/// Default bound on the number of configurations an enumerator may emit.
pub const DEFAULT_ENUM_CAP: u64 = 10_000_000;

const MASS_TOL: f64 = 1e-12;

pub fn origin(dim: usize) -> Site {
    vec![0; dim]
}

pub fn add_sites(a: &[i64], b: &[i64]) -> Site {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub_sites(a: &[i64], b: &[i64]) -> Site {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Coordinate-wise sum of two paths of equal length.
pub fn add_paths(x: &[Site], y: &[Site]) -> Path {
    x.iter().zip(y).map(|(a, b)| add_sites(a, b)).collect()
}

fn check_atoms(atoms: &[(f64, f64)], what: &str) -> Result<()> {
    if atoms.is_empty() {
        return Err(Error::InvalidDistribution(format!("{what}: no atoms")));
    }
    let mut total = 0.0;
    for &(value, prob) in atoms {
        if !value.is_finite() || value < -1.0 {
            return Err(Error::InvalidDistribution(format!("{what}: value {value} is not in [-1, inf)")));
        }
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::InvalidDistribution(format!("{what}: probability {prob} outside [0, 1]")));
        }
        total += prob;
    }
    if (total - 1.0).abs() > MASS_TOL {
        return Err(Error::InvalidDistribution(format!("{what}: probabilities sum to {total}")));
    }
    Ok(())
}

fn sample_atom<R: Rng + ?Sized>(probs: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, p) in probs.enumerate() {
        acc += p;
        if p > 0.0 {
            last = k;
        }
        if u < acc {
            return k;
        }
    }
    last
}

/// Single-site law of an i.i.d. environment value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct EnvSpec {
    atoms: Vec<(f64, f64)>,
    mean_factor: f64,
}

impl EnvSpec {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        check_atoms(&atoms, "environment law")?;
        let mean_factor = atoms.iter().map(|&(v, p)| p * (1.0 + v)).sum();
        Ok(Self { atoms, mean_factor })
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::new(vec![(value, 1.0)])
    }

    /// Hard obstacle (`-1`) with probability `q`, neutral otherwise.
    pub fn bernoulli_obstacles(q: f64) -> Result<Self> {
        Self::new(vec![(-1.0, q), (0.0, 1.0 - q)])
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    /// `R = E[1 + omega]`.
    pub fn mean_factor(&self) -> f64 {
        self.mean_factor
    }

    pub fn has_hard_obstacles(&self) -> bool {
        self.atoms.iter().any(|&(v, p)| v == -1.0 && p > 0.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.atoms[sample_atom(self.atoms.iter().map(|a| a.1), rng)].0
    }
}

impl TryFrom<Vec<(f64, f64)>> for EnvSpec {
    type Error = Error;
    fn try_from(atoms: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(atoms)
    }
}

impl From<EnvSpec> for Vec<(f64, f64)> {
    fn from(spec: EnvSpec) -> Self {
        spec.atoms
    }
}

/// Per-slice finite site sets `W_1, ..., W_t`, flattened into cell indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    dim: usize,
    slices: Vec<Vec<Site>>,
    offsets: Vec<usize>,
    index: Vec<HashMap<Site, usize>>,
}

impl Window {
    /// Sites in each slice are sorted and de-duplicated.
    pub fn new(dim: usize, slices: Vec<Vec<Site>>) -> Result<Self> {
        let mut sorted = Vec::with_capacity(slices.len());
        for mut slice in slices {
            if let Some(bad) = slice.iter().find(|s| s.len() != dim) {
                return Err(Error::DimensionMismatch { left: dim, right: bad.len() });
            }
            slice.sort();
            slice.dedup();
            sorted.push(slice);
        }
        let mut offsets = Vec::with_capacity(sorted.len() + 1);
        let mut index = Vec::with_capacity(sorted.len());
        let mut acc = 0;
        for slice in &sorted {
            offsets.push(acc);
            index.push(slice.iter().cloned().enumerate().map(|(k, s)| (s, k)).collect());
            acc += slice.len();
        }
        offsets.push(acc);
        Ok(Self { dim, slices: sorted, offsets, index })
    }

    /// Every slice is the box `{-radius..radius}^dim`.
    pub fn boxed(dim: usize, horizon: usize, radius: i64) -> Result<Self> {
        let slice = box_sites(dim, radius);
        Self::new(dim, vec![slice; horizon])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> usize {
        self.slices.len()
    }

    pub fn n_cells(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    /// Sites of slice `s` (1-based time).
    pub fn sites(&self, s: usize) -> &[Site] {
        &self.slices[s - 1]
    }

    /// Flat cell index of `(s, site)`.
    pub fn cell(&self, s: usize, site: &[i64]) -> Option<usize> {
        if s == 0 || s > self.slices.len() {
            return None;
        }
        self.index[s - 1].get(site).map(|k| self.offsets[s - 1] + k)
    }

    /// Inverse of [`Window::cell`].
    pub fn cell_coords(&self, cell: usize) -> (usize, &Site) {
        let s = self.offsets.partition_point(|&o| o <= cell);
        (s, &self.slices[s - 1][cell - self.offsets[s - 1]])
    }

    pub fn contains(&self, s: usize, site: &[i64]) -> bool {
        self.cell(s, site).is_some()
    }

    /// Slice-wise union; horizons may differ.
    pub fn union(&self, other: &Window) -> Result<Window> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { left: self.dim, right: other.dim });
        }
        let t = self.horizon().max(other.horizon());
        let slices = (1..=t)
            .map(|s| {
                let mut v = Vec::new();
                if s <= self.horizon() {
                    v.extend(self.sites(s).iter().cloned());
                }
                if s <= other.horizon() {
                    v.extend(other.sites(s).iter().cloned());
                }
                v
            })
            .collect();
        Window::new(self.dim, slices)
    }

    /// Slice `s` translated by `-shift[s]`.
    pub fn translated(&self, shift: &[Site]) -> Result<Window> {
        let slices =
            (1..=self.horizon()).map(|s| self.sites(s).iter().map(|i| sub_sites(i, &shift[s])).collect()).collect();
        Window::new(self.dim, slices)
    }
}

/// All sites of `{-radius..radius}^dim` in lexicographic order.
pub fn box_sites(dim: usize, radius: i64) -> Vec<Site> {
    let mut out = vec![Vec::new()];
    for _ in 0..dim {
        let mut next = Vec::with_capacity(out.len() * (2 * radius as usize + 1));
        for prefix in &out {
            for c in -radius..=radius {
                let mut s = prefix.clone();
                s.push(c);
                next.push(s);
            }
        }
        out = next;
    }
    out
}

/// A realised environment `omega(s, i)` on a finite space-time window.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeField {
    window: Arc<Window>,
    values: Vec<f64>,
    default_value: f64,
}

impl LatticeField {
    pub fn new(window: Arc<Window>, values: Vec<f64>) -> Result<Self> {
        if values.len() != window.n_cells() {
            return Err(Error::LengthMismatch { left: values.len(), right: window.n_cells() });
        }
        if let Some(v) = values.iter().find(|v| !(**v >= -1.0)) {
            return Err(Error::InvalidParameter(format!("field value {v} is below -1")));
        }
        Ok(Self { window, values, default_value: 0.0 })
    }

    pub fn from_fn(window: Arc<Window>, mut f: impl FnMut(usize, &[i64]) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(window.n_cells());
        for s in 1..=window.horizon() {
            for site in window.sites(s) {
                values.push(f(s, site));
            }
        }
        Self::new(window, values)
    }

    pub fn constant(window: Arc<Window>, value: f64) -> Result<Self> {
        let n = window.n_cells();
        Self::new(window, vec![value; n])
    }

    pub fn with_default(mut self, default_value: f64) -> Self {
        self.default_value = default_value;
        self
    }

    pub fn window(&self) -> &Arc<Window> {
        &self.window
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon(&self) -> usize {
        self.window.horizon()
    }

    pub fn default_value(&self) -> f64 {
        self.default_value
    }

    pub fn get(&self, s: usize, site: &[i64]) -> Option<f64> {
        self.window.cell(s, site).map(|c| self.values[c])
    }

    pub fn get_or_default(&self, s: usize, site: &[i64]) -> f64 {
        self.get(s, site).unwrap_or(self.default_value)
    }

    pub fn set(&mut self, s: usize, site: &[i64], value: f64) -> Result<()> {
        if !(value >= -1.0) {
            return Err(Error::InvalidParameter(format!("field value {value} is below -1")));
        }
        let cell = self
            .window
            .cell(s, site)
            .ok_or_else(|| Error::WindowTooSmall(format!("cell ({s}, {site:?}) is outside the window")))?;
        self.values[cell] = value;
        Ok(())
    }
}

/// Draws an i.i.d. field from `spec` on every cell of `window`.
pub fn sample_lattice_field(spec: &EnvSpec, window: Arc<Window>, seed: u64) -> Result<LatticeField> {
    let mut rng = substream(seed, 0);
    sample_lattice_field_with(spec, window, &mut rng)
}

pub fn sample_lattice_field_with<R: Rng + ?Sized>(
    spec: &EnvSpec,
    window: Arc<Window>,
    rng: &mut R,
) -> Result<LatticeField> {
    if (1..=window.horizon()).any(|s| window.sites(s).is_empty()) {
        return Err(Error::InvalidParameter("window has an empty time slice".into()));
    }
    let values = (0..window.n_cells()).map(|_| spec.sample(rng)).collect();
    LatticeField::new(window, values)
}

/// Odometer over all `m^C` assignments of `m` atoms to `C` cells.
///
/// Configurations are emitted in lexicographic order of atom indices with the
/// last cell varying fastest.
#[derive(Debug, Clone)]
pub struct ConfigEnumeration {
    atoms: Vec<(f64, f64)>,
    n_cells: usize,
}

impl ConfigEnumeration {
    pub fn new(spec: &EnvSpec, n_cells: usize, cap: u64) -> Result<Self> {
        let count = (spec.atoms().len() as f64).powi(n_cells as i32);
        if count > cap as f64 {
            return Err(Error::InstanceTooLarge { configurations: count, cap });
        }
        Ok(Self { atoms: spec.atoms().to_vec(), n_cells })
    }

    pub fn n_configurations(&self) -> u64 {
        (self.atoms.len() as u64).pow(self.n_cells as u32)
    }

    /// Calls `f(values, prob)` once per configuration.
    pub fn for_each(&self, mut f: impl FnMut(&[f64], f64)) {
        let m = self.atoms.len();
        let c = self.n_cells;
        let mut digits = vec![0usize; c];
        let mut values = vec![self.atoms[0].0; c];
        // prefix[k] = product of probabilities of cells 0..k
        let mut prefix = vec![1.0; c + 1];
        for k in 0..c {
            prefix[k + 1] = prefix[k] * self.atoms[0].1;
        }
        loop {
            f(&values, prefix[c]);
            let mut k = c;
            loop {
                if k == 0 {
                    return;
                }
                k -= 1;
                digits[k] += 1;
                if digits[k] < m {
                    break;
                }
                digits[k] = 0;
            }
            for j in k..c {
                let (v, p) = self.atoms[digits[j]];
                values[j] = v;
                prefix[j + 1] = prefix[j] * p;
            }
        }
    }
}

/// Every field on `window` with its probability under the i.i.d. law `spec`.
pub fn enumerate_lattice_fields(spec: &EnvSpec, window: Arc<Window>, cap: u64) -> Result<Vec<(LatticeField, f64)>> {
    let en = ConfigEnumeration::new(spec, window.n_cells(), cap)?;
    let mut out = Vec::with_capacity(en.n_configurations() as usize);
    en.for_each(|values, prob| {
        out.push((LatticeField { window: window.clone(), values: values.to_vec(), default_value: 0.0 }, prob))
    });
    Ok(out)
}

/// `(theta^x omega)(s, i) = omega(s, i + x_s)` on the translated window
/// `W_s - x_s`, so every lookup stays inside the original window.
pub fn shift_lattice(field: &LatticeField, path: &[Site]) -> Result<LatticeField> {
    check_path(field, path)?;
    let window = Arc::new(field.window.translated(path)?);
    shift_lattice_onto(field, path, window)
}

/// Same shift evaluated on a caller-chosen output window; a lookup that falls
/// outside the source window is an error.
pub fn shift_lattice_onto(field: &LatticeField, path: &[Site], window: Arc<Window>) -> Result<LatticeField> {
    check_path(field, path)?;
    if window.horizon() > field.horizon() {
        return Err(Error::WindowTooSmall("output window is longer than the field".into()));
    }
    let mut values = Vec::with_capacity(window.n_cells());
    for s in 1..=window.horizon() {
        for i in window.sites(s) {
            let j = add_sites(i, &path[s]);
            let v = field
                .get(s, &j)
                .ok_or_else(|| Error::WindowTooSmall(format!("shifted lookup ({s}, {j:?}) is outside the window")))?;
            values.push(v);
        }
    }
    Ok(LatticeField { window, values, default_value: field.default_value })
}

fn check_path(field: &LatticeField, path: &[Site]) -> Result<()> {
    if path.len() < field.horizon() + 1 {
        return Err(Error::LengthMismatch { left: path.len(), right: field.horizon() + 1 });
    }
    if let Some(bad) = path.iter().find(|p| p.len() != field.window.dim()) {
        return Err(Error::DimensionMismatch { left: field.window.dim(), right: bad.len() });
    }
    Ok(())
}

/// Law of a space-time Poisson mark process: marks arrive at each site at
/// `rate`, each carrying an independent value `r ~ rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkLaw {
    pub rate: f64,
    pub rho: Vec<(f64, f64)>,
}

impl MarkLaw {
    pub fn new(rate: f64, rho: Vec<(f64, f64)>) -> Result<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::InvalidParameter(format!("mark rate {rate} must be positive")));
        }
        check_atoms(&rho, "mark law")?;
        Ok(Self { rate, rho })
    }

    /// Unit-rate disasters, `rho = delta_{-1}`.
    pub fn disasters(rate: f64) -> Result<Self> {
        Self::new(rate, vec![(-1.0, 1.0)])
    }

    /// `int (1 + r) rho(dr)`.
    pub fn mean_factor(&self) -> f64 {
        self.rho.iter().map(|&(r, p)| p * (1.0 + r)).sum()
    }

    pub fn disaster_prob(&self) -> f64 {
        self.rho.iter().filter(|a| a.0 == -1.0).map(|a| a.1).sum()
    }

    pub fn max_factor(&self) -> f64 {
        self.rho.iter().filter(|a| a.1 > 0.0).map(|a| 1.0 + a.0).fold(0.0, f64::max)
    }

    pub fn sample_mark<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.rho[sample_atom(self.rho.iter().map(|a| a.1), rng)].0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mark {
    pub time: f64,
    pub site: Site,
    pub r: f64,
}

/// A finite set of space-time marks inside `[0, horizon] x {-R..R}^d`,
/// sorted by time with pairwise distinct times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkSet {
    dim: usize,
    horizon: f64,
    box_radius: i64,
    marks: Vec<Mark>,
}

impl MarkSet {
    pub fn new(dim: usize, horizon: f64, box_radius: i64, mut marks: Vec<Mark>) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidParameter(format!("horizon {horizon} must be positive")));
        }
        for m in &marks {
            if m.site.len() != dim {
                return Err(Error::DimensionMismatch { left: dim, right: m.site.len() });
            }
            if !(0.0..=horizon).contains(&m.time) {
                return Err(Error::InvalidParameter(format!("mark time {} outside [0, {horizon}]", m.time)));
            }
            if !(m.r >= -1.0) || !m.r.is_finite() {
                return Err(Error::InvalidParameter(format!("mark value {} below -1", m.r)));
            }
            if m.site.iter().any(|c| c.abs() > box_radius) {
                return Err(Error::InvalidParameter(format!("mark site {:?} outside the box", m.site)));
            }
        }
        marks.sort_by(|a, b| a.time.total_cmp(&b.time));
        if marks.windows(2).any(|w| w[0].time == w[1].time) {
            return Err(Error::InvalidParameter("mark times must be pairwise distinct".into()));
        }
        Ok(Self { dim, horizon, box_radius, marks })
    }

    pub fn empty(dim: usize, horizon: f64) -> Self {
        Self { dim, horizon, box_radius: 0, marks: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn box_radius(&self) -> i64 {
        self.box_radius
    }

    pub fn marks(&self) -> &[Mark] {
        &self.marks
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    /// Time reversal `s -> horizon - s`.
    pub fn reversed(&self) -> MarkSet {
        let mut marks: Vec<Mark> =
            self.marks.iter().map(|m| Mark { time: self.horizon - m.time, site: m.site.clone(), r: m.r }).collect();
        marks.reverse();
        MarkSet { marks, ..self.clone() }
    }

    /// Marks grouped by site, each list sorted by time.
    pub fn by_site(&self) -> HashMap<Site, Vec<(f64, f64)>> {
        let mut out: HashMap<Site, Vec<(f64, f64)>> = HashMap::new();
        for m in &self.marks {
            out.entry(m.site.clone()).or_default().push((m.time, m.r));
        }
        out
    }
}

/// Samples a Poisson mark process on `[0, horizon] x {-R..R}^dim`.
pub fn sample_mark_set(law: &MarkLaw, dim: usize, horizon: f64, box_radius: i64, seed: u64) -> Result<MarkSet> {
    let mut rng = substream(seed, 0);
    sample_mark_set_with(law, dim, horizon, box_radius, &mut rng)
}

pub fn sample_mark_set_with<R: Rng + ?Sized>(
    law: &MarkLaw,
    dim: usize,
    horizon: f64,
    box_radius: i64,
    rng: &mut R,
) -> Result<MarkSet> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter(format!("horizon {horizon} must be positive")));
    }
    let mean = law.rate * horizon;
    let count = Poisson::new(mean).map_err(|e| Error::InvalidParameter(format!("poisson mean {mean}: {e}")))?;
    let mut marks = Vec::new();
    for site in box_sites(dim, box_radius) {
        let n = count.sample(rng) as usize;
        for _ in 0..n {
            let time = rng.random::<f64>() * horizon;
            marks.push(Mark { time, site: site.clone(), r: law.sample_mark(rng) });
        }
    }
    MarkSet::new(dim, horizon, box_radius, marks)
}

/// A tree node as the sequence of child indices (each in `1..=K`) from the root.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Node(pub Vec<usize>);

impl Node {
    pub fn root() -> Self {
        Node(Vec::new())
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn child(&self, a: usize) -> Node {
        let mut v = self.0.clone();
        v.push(a);
        Node(v)
    }

    /// True if `self` lies strictly below `ancestor`.
    pub fn is_strict_descendant_of(&self, ancestor: &Node) -> bool {
        self.0.len() > ancestor.0.len() && self.0.starts_with(&ancestor.0)
    }

    /// Lexicographic rank among nodes of the same depth (0-based).
    pub fn level_index(&self, arity: usize) -> usize {
        self.0.iter().fold(0, |acc, &a| acc * arity + (a - 1))
    }

    pub fn from_level_index(arity: usize, depth: usize, mut idx: usize) -> Node {
        let mut v = vec![0; depth];
        for slot in v.iter_mut().rev() {
            *slot = idx % arity + 1;
            idx /= arity;
        }
        Node(v)
    }
}

/// Environment on the nodes of depth `1..=depth` of the `K`-ary tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnv {
    arity: usize,
    depth: usize,
    levels: Vec<Vec<f64>>,
}

impl TreeEnv {
    /// `values` lists level 1, then level 2, ..., each level in lexicographic order.
    pub fn from_flat(arity: usize, depth: usize, values: &[f64]) -> Result<Self> {
        if arity < 2 {
            return Err(Error::InvalidParameter(format!("arity {arity} must be at least 2")));
        }
        if depth < 1 {
            return Err(Error::InvalidParameter("tree depth must be at least 1".into()));
        }
        let n = Self::n_cells(arity, depth);
        if values.len() != n {
            return Err(Error::LengthMismatch { left: values.len(), right: n });
        }
        if let Some(v) = values.iter().find(|v| !(**v >= -1.0)) {
            return Err(Error::InvalidParameter(format!("tree value {v} is below -1")));
        }
        let mut levels = Vec::with_capacity(depth);
        let mut off = 0;
        let mut width = arity;
        for _ in 0..depth {
            levels.push(values[off..off + width].to_vec());
            off += width;
            width *= arity;
        }
        Ok(Self { arity, depth, levels })
    }

    pub fn constant(arity: usize, depth: usize, value: f64) -> Result<Self> {
        Self::from_flat(arity, depth, &vec![value; Self::n_cells(arity, depth)])
    }

    /// Number of nodes of depth `1..=depth`.
    pub fn n_cells(arity: usize, depth: usize) -> usize {
        (1..=depth).map(|d| arity.pow(d as u32)).sum()
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Values of the nodes at `depth` (1-based) in lexicographic order.
    pub fn level(&self, depth: usize) -> &[f64] {
        &self.levels[depth - 1]
    }

    pub fn get(&self, node: &Node) -> Option<f64> {
        let d = node.depth();
        if d == 0 || d > self.depth || node.0.iter().any(|&a| a == 0 || a > self.arity) {
            return None;
        }
        Some(self.levels[d - 1][node.level_index(self.arity)])
    }

    pub fn set(&mut self, node: &Node, value: f64) -> Result<()> {
        if !(value >= -1.0) {
            return Err(Error::InvalidParameter(format!("tree value {value} is below -1")));
        }
        let d = node.depth();
        if d == 0 || d > self.depth || node.0.iter().any(|&a| a == 0 || a > self.arity) {
            return Err(Error::InvalidParameter(format!("node {:?} is not in the tree", node.0)));
        }
        self.levels[d - 1][node.level_index(self.arity)] = value;
        Ok(())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.levels.concat()
    }
}

pub fn sample_tree_env<R: Rng + ?Sized>(spec: &EnvSpec, arity: usize, depth: usize, rng: &mut R) -> Result<TreeEnv> {
    let n = TreeEnv::n_cells(arity, depth);
    let values: Vec<f64> = (0..n).map(|_| spec.sample(rng)).collect();
    TreeEnv::from_flat(arity, depth, &values)
}

/// Enumerates every tree environment under the i.i.d. law `spec`.
pub fn tree_env_enumeration(spec: &EnvSpec, arity: usize, depth: usize, cap: u64) -> Result<ConfigEnumeration> {
    ConfigEnumeration::new(spec, TreeEnv::n_cells(arity, depth), cap)
}

/// Checks that `perm` (1-based images, `perm[a-1] = pi(a)`) is a permutation.
pub fn validate_permutation(perm: &[usize]) -> Result<()> {
    let k = perm.len();
    let mut seen = vec![false; k];
    for &p in perm {
        if p == 0 || p > k || seen[p - 1] {
            return Err(Error::InvalidPermutation(perm.to_vec()));
        }
        seen[p - 1] = true;
    }
    Ok(())
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (a, &p) in perm.iter().enumerate() {
        inv[p - 1] = a + 1;
    }
    inv
}

/// `(f o g)(a) = f(g(a))`.
pub fn compose_permutations(f: &[usize], g: &[usize]) -> Vec<usize> {
    g.iter().map(|&b| f[b - 1]).collect()
}

/// All permutations of `1..=k` in lexicographic order.
pub fn all_permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for a in 0..used.len() {
            if !used[a] {
                used[a] = true;
                prefix.push(a + 1);
                rec(prefix, used, out);
                prefix.pop();
                used[a] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; k], &mut out);
    out
}

/// Environment seen through the elementary shift at `v` with permutation
/// `perm`: the output at `w` is `env(theta(w))`, where `theta` maps
/// `(v, a, v')` to `(v, pi(a), v')` and fixes every other node.
pub fn apply_elementary_shift(env: &TreeEnv, v: &Node, perm: &[usize]) -> Result<TreeEnv> {
    let k = env.arity;
    if perm.len() != k {
        return Err(Error::InvalidPermutation(perm.to_vec()));
    }
    validate_permutation(perm)?;
    let dv = v.depth();
    if dv >= env.depth || v.0.iter().any(|&a| a == 0 || a > k) {
        return Err(Error::InvalidParameter(format!("shift node {:?} must be a node of depth < {}", v.0, env.depth)));
    }
    let mut out = env.clone();
    for d in dv + 1..=env.depth {
        let width = k.pow(d as u32);
        for idx in 0..width {
            let w = Node::from_level_index(k, d, idx);
            if !w.0.starts_with(&v.0) {
                continue;
            }
            let mut image = w.0.clone();
            image[dv] = perm[w.0[dv] - 1];
            let src = Node(image).level_index(k);
            out.levels[d - 1][idx] = env.levels[d - 1][src];
        }
    }
    Ok(out)
}

/// Law of the number of children, `probs[k] = P(k children)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct OffspringLaw {
    probs: Vec<f64>,
}

impl OffspringLaw {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidDistribution(format!("offspring law {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDistribution(format!("offspring law sums to {total}")));
        }
        Ok(Self { probs })
    }

    /// Exactly `k` children.
    pub fn dirac(k: usize) -> Self {
        let mut probs = vec![0.0; k + 1];
        probs[k] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_atom(self.probs.iter().copied(), rng)
    }
}

impl TryFrom<Vec<f64>> for OffspringLaw {
    type Error = Error;
    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<OffspringLaw> for Vec<f64> {
    fn from(law: OffspringLaw) -> Self {
        law.probs
    }
}

/// Law of the random offspring distribution `eta(s, i)`: a finite mixture of
/// offspring laws. The induced environment is `omega = mean - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(OffspringLaw, f64)>", into = "Vec<(OffspringLaw, f64)>")]
pub struct OffspringSpec {
    atoms: Vec<(OffspringLaw, f64)>,
}

impl OffspringSpec {
    pub fn new(atoms: Vec<(OffspringLaw, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidDistribution("offspring spec has no atoms".into()));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > MASS_TOL || atoms.iter().any(|a| !(0.0..=1.0).contains(&a.1)) {
            return Err(Error::InvalidDistribution(format!("offspring spec weights sum to {total}")));
        }
        Ok(Self { atoms })
    }

    pub fn single(law: OffspringLaw) -> Self {
        Self { atoms: vec![(law, 1.0)] }
    }

    pub fn atoms(&self) -> &[(OffspringLaw, f64)] {
        &self.atoms
    }

    /// Law of `omega = (mean number of children) - 1`.
    pub fn env_spec(&self) -> Result<EnvSpec> {
        EnvSpec::new(self.atoms.iter().map(|(l, p)| (l.mean() - 1.0, *p)).collect())
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_atom(self.atoms.iter().map(|a| a.1), rng)
    }
}

impl TryFrom<Vec<(OffspringLaw, f64)>> for OffspringSpec {
    type Error = Error;
    fn try_from(atoms: Vec<(OffspringLaw, f64)>) -> Result<Self> {
        Self::new(atoms)
    }
}

impl From<OffspringSpec> for Vec<(OffspringLaw, f64)> {
    fn from(spec: OffspringSpec) -> Self {
        spec.atoms
    }
}

/// A realised offspring field `eta` on a window.
#[derive(Debug, Clone)]
pub struct OffspringField {
    window: Arc<Window>,
    spec: OffspringSpec,
    law_index: Vec<usize>,
}

impl OffspringField {
    pub fn new(window: Arc<Window>, spec: OffspringSpec, law_index: Vec<usize>) -> Result<Self> {
        if law_index.len() != window.n_cells() {
            return Err(Error::LengthMismatch { left: law_index.len(), right: window.n_cells() });
        }
        if law_index.iter().any(|&k| k >= spec.atoms.len()) {
            return Err(Error::InvalidParameter("offspring law index out of range".into()));
        }
        Ok(Self { window, spec, law_index })
    }

    /// The same law at every cell.
    pub fn uniform(window: Arc<Window>, law: OffspringLaw) -> Self {
        let n = window.n_cells();
        Self { window, spec: OffspringSpec::single(law), law_index: vec![0; n] }
    }

    pub fn window(&self) -> &Arc<Window> {
        &self.window
    }

    pub fn law_at_cell(&self, cell: usize) -> &OffspringLaw {
        &self.spec.atoms[self.law_index[cell]].0
    }

    pub fn law_at(&self, s: usize, site: &[i64]) -> Option<&OffspringLaw> {
        self.window.cell(s, site).map(|c| self.law_at_cell(c))
    }

    /// The induced environment `omega(s, i) = E[children] - 1`.
    pub fn omega(&self) -> Result<LatticeField> {
        let values = self.law_index.iter().map(|&k| self.spec.atoms[k].0.mean() - 1.0).collect();
        LatticeField::new(self.window.clone(), values)
    }
}

pub fn sample_offspring_field<R: Rng + ?Sized>(
    spec: &OffspringSpec,
    window: Arc<Window>,
    rng: &mut R,
) -> Result<OffspringField> {
    let idx = (0..window.n_cells()).map(|_| spec.sample_index(rng)).collect();
    OffspringField::new(window, spec.clone(), idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_window(t: usize, radius: i64) -> Arc<Window> {
        Arc::new(Window::boxed(1, t, radius).unwrap())
    }

    #[test]
    fn spec_validation() {
        assert!(EnvSpec::new(vec![(0.0, 0.5), (1.0, 0.4)]).is_err());
        assert!(EnvSpec::new(vec![(-1.5, 1.0)]).is_err());
        let s = EnvSpec::new(vec![(-1.0, 0.25), (1.0, 0.75)]).unwrap();
        assert!((s.mean_factor() - 1.5).abs() < 1e-15);
        assert!(s.has_hard_obstacles());
    }

    #[test]
    fn single_atom_field_is_constant() {
        let f = sample_lattice_field(&EnvSpec::constant(0.0).unwrap(), line_window(3, 3), 1).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bernoulli_support_and_determinism() {
        let spec = EnvSpec::bernoulli_obstacles(0.3).unwrap();
        let a = sample_lattice_field(&spec, line_window(4, 4), 9).unwrap();
        let b = sample_lattice_field(&spec, line_window(4, 4), 9).unwrap();
        assert!(a.values().iter().all(|&v| v == -1.0 || v == 0.0));
        assert_eq!(a, b);
    }

    #[test]
    fn enumeration_counts_and_mass() {
        let spec = EnvSpec::bernoulli_obstacles(0.3).unwrap();
        let w = Arc::new(Window::new(1, vec![vec![vec![0]]]).unwrap());
        let all = enumerate_lattice_fields(&spec, w, DEFAULT_ENUM_CAP).unwrap();
        assert_eq!(all.len(), 2);
        assert!((all[0].1 - 0.3).abs() < 1e-15 && (all[1].1 - 0.7).abs() < 1e-15);

        let spec3 = EnvSpec::new(vec![(-1.0, 0.2), (0.0, 0.5), (2.0, 0.3)]).unwrap();
        let en = ConfigEnumeration::new(&spec3, 6, DEFAULT_ENUM_CAP).unwrap();
        let mut count = 0u64;
        let mut mass = 0.0;
        en.for_each(|_, p| {
            count += 1;
            mass += p;
        });
        assert_eq!(count, 3u64.pow(6));
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn enumeration_cap_is_an_error() {
        let spec = EnvSpec::bernoulli_obstacles(0.5).unwrap();
        let err = ConfigEnumeration::new(&spec, 30, 1_000).unwrap_err();
        assert!(matches!(err, Error::InstanceTooLarge { .. }));
    }

    #[test]
    fn shift_definition() {
        let w = line_window(1, 3);
        let mut f = LatticeField::constant(w, 0.0).unwrap();
        f.set(1, &[2], 1.5).unwrap();
        let x = vec![vec![0], vec![2]];
        let g = shift_lattice(&f, &x).unwrap();
        assert_eq!(g.get(1, &[0]), Some(1.5));
        assert_eq!(g.get(1, &[-2]), Some(0.0));
        let zero = vec![vec![0], vec![0]];
        assert_eq!(shift_lattice(&f, &zero).unwrap(), f);
    }

    #[test]
    fn shift_composes_on_overlap() {
        let spec = EnvSpec::new(vec![(-1.0, 0.2), (0.0, 0.3), (0.5, 0.5)]).unwrap();
        let f = sample_lattice_field(&spec, line_window(3, 6), 4).unwrap();
        let x: Path = vec![vec![0], vec![1], vec![0], vec![2]];
        let y: Path = vec![vec![0], vec![-1], vec![1], vec![1]];
        let xy = add_paths(&x, &y);
        // theta^y(theta^x omega)(s, i) = omega(s, i + x_s + y_s)
        let twice = shift_lattice(&shift_lattice(&f, &x).unwrap(), &y).unwrap();
        let once = shift_lattice(&f, &xy).unwrap();
        for s in 1..=3 {
            for i in twice.window().sites(s) {
                assert_eq!(twice.get(s, i), once.get(s, i));
            }
        }
    }

    #[test]
    fn shift_outside_window_errors() {
        let f = LatticeField::constant(line_window(1, 1), 0.0).unwrap();
        let x = vec![vec![0], vec![1]];
        let err = shift_lattice_onto(&f, &x, line_window(1, 1)).unwrap_err();
        assert!(matches!(err, Error::WindowTooSmall(_)));
    }

    #[test]
    fn shift_invariance_in_law() {
        // exact law of (omega(1,0), omega(1,1)) equals that of the shifted pair
        let spec = EnvSpec::new(vec![(-1.0, 0.2), (0.0, 0.3), (0.5, 0.5)]).unwrap();
        let w = line_window(1, 2);
        let x = vec![vec![0], vec![1]];
        let mut direct: HashMap<(u64, u64), f64> = HashMap::new();
        let mut shifted: HashMap<(u64, u64), f64> = HashMap::new();
        for (f, p) in enumerate_lattice_fields(&spec, w, DEFAULT_ENUM_CAP).unwrap() {
            let key = |g: &LatticeField| (g.get(1, &[0]).unwrap().to_bits(), g.get(1, &[1]).unwrap().to_bits());
            *direct.entry(key(&f)).or_default() += p;
            *shifted.entry(key(&shift_lattice(&f, &x).unwrap())).or_default() += p;
        }
        assert_eq!(direct.len(), shifted.len());
        for (k, p) in &direct {
            assert!((p - shifted[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn mark_set_rejects_ties() {
        let m = |t| Mark { time: t, site: vec![0], r: -1.0 };
        assert!(MarkSet::new(1, 1.0, 0, vec![m(0.5), m(0.5)]).is_err());
        let ok = MarkSet::new(1, 1.0, 0, vec![m(0.7), m(0.2)]).unwrap();
        assert_eq!(ok.marks()[0].time, 0.2);
        let rev = ok.reversed();
        assert!((rev.marks()[0].time - 0.3).abs() < 1e-15);
    }

    #[test]
    fn tiny_rate_marks_are_rare() {
        let law = MarkLaw::disasters(1e-9).unwrap();
        let total: usize = (0..1000).map(|s| sample_mark_set(&law, 1, 1.0, 0, s).unwrap().len()).sum();
        assert_eq!(total, 0);
    }

    #[test]
    fn empty_probability_is_exp_minus_one() {
        let law = MarkLaw::disasters(1.0).unwrap();
        let n = 100_000;
        let empty = (0..n).filter(|&s| sample_mark_set(&law, 1, 1.0, 0, s as u64).unwrap().is_empty()).count();
        let p = (-1.0f64).exp();
        let freq = empty as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() < 3.0 * se, "freq {freq}");
    }

    #[test]
    fn disaster_law_gives_minus_one_marks() {
        let law = MarkLaw::disasters(2.0).unwrap();
        let ms = sample_mark_set(&law, 2, 1.0, 2, 5).unwrap();
        assert!(!ms.is_empty());
        assert!(ms.marks().iter().all(|m| m.r == -1.0));
    }

    #[test]
    fn node_index_round_trip() {
        for d in 1..4 {
            for idx in 0..3usize.pow(d as u32) {
                let n = Node::from_level_index(3, d, idx);
                assert_eq!(n.level_index(3), idx);
            }
        }
    }

    #[test]
    fn elementary_shift_cycles_children() {
        let env = TreeEnv::from_flat(3, 1, &[0.1, 0.2, 0.3]).unwrap();
        let out = apply_elementary_shift(&env, &Node::root(), &[2, 3, 1]).unwrap();
        assert_eq!(out.level(1), &[0.2, 0.3, 0.1]);
        assert_eq!(apply_elementary_shift(&env, &Node::root(), &[1, 2, 3]).unwrap(), env);
    }

    #[test]
    fn elementary_shift_inverse_restores() {
        let spec = EnvSpec::new(vec![(-1.0, 0.3), (0.0, 0.3), (1.0, 0.4)]).unwrap();
        let env = sample_tree_env(&spec, 3, 3, &mut substream(2, 0)).unwrap();
        let v = Node(vec![2]);
        let pi = vec![3, 1, 2];
        let there = apply_elementary_shift(&env, &v, &pi).unwrap();
        let back = apply_elementary_shift(&there, &v, &inverse_permutation(&pi)).unwrap();
        assert_eq!(back, env);
        // off the subtree of v nothing moves; per level the multiset is kept
        assert_eq!(there.get(&Node(vec![1, 3])), env.get(&Node(vec![1, 3])));
        for d in 1..=3 {
            let mut a = env.level(d).to_vec();
            let mut b = there.level(d).to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn elementary_shift_rejects_bad_input() {
        let env = TreeEnv::constant(2, 2, 0.0).unwrap();
        assert!(matches!(apply_elementary_shift(&env, &Node::root(), &[1, 1]), Err(Error::InvalidPermutation(_))));
        assert!(apply_elementary_shift(&env, &Node(vec![1, 1]), &[1, 2]).is_err());
    }

    #[test]
    fn offspring_spec_induces_omega() {
        let spec = OffspringSpec::new(vec![
            (OffspringLaw::new(vec![0.5, 0.0, 0.5]).unwrap(), 0.5),
            (OffspringLaw::dirac(0), 0.5),
        ])
        .unwrap();
        let env = spec.env_spec().unwrap();
        assert_eq!(env.atoms(), &[(0.0, 0.5), (-1.0, 0.5)]);
        assert!(OffspringLaw::new(vec![0.5, 0.4]).is_err());
    }

    #[test]
    fn permutations_enumerated() {
        let all = all_permutations(3);
        assert_eq!(all.len(), 6);
        assert_eq!(all[0], vec![1, 2, 3]);
        for p in &all {
            let inv = inverse_permutation(p);
            assert_eq!(compose_permutations(p, &inv), vec![1, 2, 3]);
        }
    }
}
