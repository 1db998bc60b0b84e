//! Directed polymers on the K-ary tree: partition functions for homogeneous
//! and node-dependent walks, both directions of the majorization criterion,
//! and the interpolation ladder between two step laws as executable checks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::envlat::{
    all_permutations, apply_elementary_shift, inverse_permutation, tree_env_enumeration, EnvSpec, Node, TreeEnv,
};
use crate::error::{Error, Result};
use crate::increments::{is_majorized, TreeIncrementDist};
use crate::polymer_dt::FiniteDist;
use crate::stochorder::{concave_order_exact, ConcaveOrderReport};

/// Largest arity for which permutation sums (`K!` terms) are evaluated.
pub const MAX_PERMUTATION_ARITY: usize = 5;

/// Walk on the tree whose step law may depend on the current node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InhomogWalk {
    arity: usize,
    default: TreeIncrementDist,
    overrides: BTreeMap<Node, TreeIncrementDist>,
}

impl InhomogWalk {
    pub fn homogeneous(p: TreeIncrementDist) -> Self {
        Self { arity: p.arity(), default: p, overrides: BTreeMap::new() }
    }

    pub fn with_override(mut self, node: Node, law: TreeIncrementDist) -> Result<Self> {
        if law.arity() != self.arity {
            return Err(Error::DimensionMismatch { left: self.arity, right: law.arity() });
        }
        if node.0.iter().any(|&a| a == 0 || a > self.arity) {
            return Err(Error::InvalidParameter(format!("node {:?} is not in the tree", node.0)));
        }
        self.overrides.insert(node, law);
        Ok(self)
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn law(&self, node: &Node) -> &TreeIncrementDist {
        self.overrides.get(node).unwrap_or(&self.default)
    }

    /// `table[d][idx]` is the step law at the node of depth `d` with level index `idx`.
    fn table(&self, t: usize) -> Vec<Vec<&[f64]>> {
        (0..t)
            .map(|d| {
                (0..self.arity.pow(d as u32))
                    .map(|idx| self.law(&Node::from_level_index(self.arity, d, idx)).probs())
                    .collect()
            })
            .collect()
    }
}

/// Nodes `v_1, ..., v_N` of depth `< t` with non-increasing depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeOrder {
    arity: usize,
    horizon: usize,
    nodes: Vec<Node>,
}

impl NodeOrder {
    /// Deepest first, ties broken lexicographically.
    pub fn canonical(arity: usize, horizon: usize) -> Self {
        let mut nodes = Vec::new();
        for d in (0..horizon).rev() {
            for idx in 0..arity.pow(d as u32) {
                nodes.push(Node::from_level_index(arity, d, idx));
            }
        }
        Self { arity, horizon, nodes }
    }

    /// A caller-supplied order; it must list every node of depth `< horizon`
    /// exactly once with non-increasing depth.
    pub fn new(arity: usize, horizon: usize, nodes: Vec<Node>) -> Result<Self> {
        let canonical = Self::canonical(arity, horizon);
        let mut sorted = nodes.clone();
        sorted.sort();
        let mut expected = canonical.nodes.clone();
        expected.sort();
        if sorted != expected {
            return Err(Error::InvalidParameter("node order must list each node of depth < t exactly once".into()));
        }
        if nodes.windows(2).any(|w| w[0].depth() < w[1].depth()) {
            return Err(Error::InvalidParameter("node order must have non-increasing depth".into()));
        }
        Ok(Self { arity, horizon, nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Walk `r_i`: law `p` at `v_1..v_i`, law `q` everywhere else.
    pub fn ladder_walk(&self, p: &TreeIncrementDist, q: &TreeIncrementDist, i: usize) -> Result<InhomogWalk> {
        let mut w = InhomogWalk::homogeneous(q.clone());
        for v in &self.nodes[..i] {
            w = w.with_override(v.clone(), p.clone())?;
        }
        Ok(w)
    }
}

/// Masses at every depth `0..=t`: the mass of a node is the probability of
/// reaching it times the weights `1 + omega` collected on the way.
fn level_masses(
    levels: &[&[f64]],
    table: &[Vec<&[f64]>],
    arity: usize,
    start: Option<(usize, usize)>,
) -> Vec<Vec<f64>> {
    let t = table.len();
    let (d0, idx0) = start.unwrap_or((0, 0));
    let mut out = Vec::with_capacity(t + 1);
    for d in 0..=t {
        let width = arity.pow(d as u32);
        if d < d0 {
            out.push(vec![0.0; width]);
            continue;
        }
        if d == d0 {
            let mut m = vec![0.0; width];
            m[idx0] = 1.0;
            out.push(m);
            continue;
        }
        let prev = &out[d - 1];
        let vals = levels[d - 1];
        let mut m = vec![0.0; width];
        for (idx, &mass) in prev.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let law = table[d - 1][idx];
            for a in 0..arity {
                let c = idx * arity + a;
                let w = 1.0 + vals[c];
                if w != 0.0 {
                    m[c] = mass * law[a] * w;
                }
            }
        }
        out.push(m);
    }
    out
}

fn env_levels(env: &TreeEnv, t: usize) -> Vec<&[f64]> {
    (1..=t).map(|d| env.level(d)).collect()
}

fn check_env(env: &TreeEnv, arity: usize, t: usize) -> Result<()> {
    if env.arity() != arity {
        return Err(Error::DimensionMismatch { left: env.arity(), right: arity });
    }
    if env.depth() < t {
        return Err(Error::InvalidParameter(format!("environment depth {} is below the horizon {t}", env.depth())));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreePartitionResult {
    pub value: f64,
    pub horizon: usize,
    pub arity: usize,
}

/// `Z_t = sum over nodes v of depth t of P(X_t = v) prod_{u <= v} (1 + omega(u))`,
/// computed in one root-to-leaves pass.
pub fn tree_partition_function(env: &TreeEnv, walk: &InhomogWalk, t: usize) -> Result<TreePartitionResult> {
    check_env(env, walk.arity, t)?;
    let table = walk.table(t);
    let masses = level_masses(&env_levels(env, t), &table, walk.arity, None);
    Ok(TreePartitionResult { value: masses[t].iter().sum(), horizon: t, arity: walk.arity })
}

/// Depth-1 pattern of the necessity argument: hard obstacles at every child
/// of the root except `r`, neutral values elsewhere.
pub fn necessity_env(r: usize, arity: usize, depth: usize) -> Result<TreeEnv> {
    if r == 0 || r > arity {
        return Err(Error::InvalidParameter(format!("open child {r} outside 1..={arity}")));
    }
    let mut env = TreeEnv::constant(arity, depth, 0.0)?;
    for a in (1..=arity).filter(|&a| a != r) {
        env.set(&Node(vec![a]), -1.0)?;
    }
    Ok(env)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NecessityReport {
    /// Whether `Z^q <=_cv Z^p` holds under the uniform mixture of obstacle patterns.
    pub verdict: bool,
    /// Independent verdict from sorted partial sums.
    pub majorized: bool,
    pub worst_violation: f64,
    pub order: ConcaveOrderReport,
}

/// Under the uniform mixture over `r` of [`necessity_env`], `Z^p = p(r)` and
/// `Z^q = q(r)`; the concave order between them holds iff `p <=_M q`.
pub fn necessity_check(p: &TreeIncrementDist, q: &TreeIncrementDist, tol: f64) -> Result<NecessityReport> {
    let k = p.arity();
    if q.arity() != k {
        return Err(Error::DimensionMismatch { left: k, right: q.arity() });
    }
    let wp = InhomogWalk::homogeneous(p.clone());
    let wq = InhomogWalk::homogeneous(q.clone());
    let mut zp = Vec::with_capacity(k);
    let mut zq = Vec::with_capacity(k);
    for r in 1..=k {
        let env = necessity_env(r, k, 1)?;
        zp.push((tree_partition_function(&env, &wp, 1)?.value, 1.0 / k as f64));
        zq.push((tree_partition_function(&env, &wq, 1)?.value, 1.0 / k as f64));
    }
    let order = concave_order_exact(&FiniteDist::new(zq)?, &FiniteDist::new(zp)?, tol);
    Ok(NecessityReport {
        verdict: order.verdict,
        majorized: is_majorized(p.probs(), q.probs(), tol).verdict,
        worst_violation: order.worst_violation,
        order,
    })
}

fn check_pair(p: &TreeIncrementDist, q: &TreeIncrementDist) -> Result<usize> {
    if p.arity() != q.arity() {
        return Err(Error::DimensionMismatch { left: p.arity(), right: q.arity() });
    }
    Ok(p.arity())
}

/// Enumerates every i.i.d. tree environment and tests `Z^q <=_cv Z^p` exactly.
/// Requires `p <=_M q`.
pub fn tree_theorem_sufficiency_check(
    p: &TreeIncrementDist,
    q: &TreeIncrementDist,
    spec: &EnvSpec,
    t: usize,
    cap: u64,
    tol: f64,
) -> Result<ConcaveOrderReport> {
    let k = check_pair(p, q)?;
    let cert = is_majorized(p.probs(), q.probs(), 1e-12);
    if !cert.verdict {
        return Err(Error::Precondition(format!("p = {:?} is not majorized by q = {:?}", p.probs(), q.probs())));
    }
    let walks = [InhomogWalk::homogeneous(q.clone()), InhomogWalk::homogeneous(p.clone())];
    let laws = enumerate_walk_laws(spec, k, t, cap, &walks)?;
    Ok(concave_order_exact(&laws[0], &laws[1], tol))
}

/// Exact laws of the partition functions of several walks driven by the same
/// enumerated i.i.d. environment.
fn enumerate_walk_laws(spec: &EnvSpec, k: usize, t: usize, cap: u64, walks: &[InhomogWalk]) -> Result<Vec<FiniteDist>> {
    let en = tree_env_enumeration(spec, k, t, cap)?;
    let tables: Vec<_> = walks.iter().map(|w| w.table(t)).collect();
    let mut atoms: Vec<Vec<(f64, f64)>> = vec![Vec::with_capacity(en.n_configurations() as usize); walks.len()];
    let offsets: Vec<usize> = (0..=t).map(|d| TreeEnv::n_cells(k, d)).collect();
    en.for_each(|values, prob| {
        let levels: Vec<&[f64]> = (0..t).map(|d| &values[offsets[d]..offsets[d + 1]]).collect();
        for (j, table) in tables.iter().enumerate() {
            let m = level_masses(&levels, table, k, None);
            atoms[j].push((m[t].iter().sum(), prob));
        }
    });
    atoms.into_iter().map(FiniteDist::new).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationReport {
    pub step: usize,
    pub pivot: Node,
    /// Contribution of paths avoiding the pivot.
    pub a: f64,
    /// Probability-weighted product of weights from the root to the pivot.
    pub b: f64,
    /// `W_hat(a)` for each child `a` of the pivot.
    pub w_hat: Vec<f64>,
    pub w_i: f64,
    pub w_next: f64,
    pub decomposition_defect: f64,
    pub decomposition_ok: bool,
    pub shifted_defect: f64,
    pub shifted_ok: bool,
    pub closure_defect: f64,
    pub closure_ok: bool,
    pub concave_defect: f64,
    pub concave_ok: bool,
    pub passed: bool,
}

/// `W_hat(a) = (1 + omega(v, a)) * E[prod of weights strictly below (v, a)]`
/// under `walk`, for every child of `v`.
fn w_hat(env: &TreeEnv, table: &[Vec<&[f64]>], v: &Node, t: usize) -> Vec<f64> {
    let k = env.arity();
    let levels = env_levels(env, t);
    (1..=k)
        .map(|a| {
            let child = v.child(a);
            let d = child.depth();
            let m = level_masses(&levels, table, k, Some((d, child.level_index(k))));
            (1.0 + levels[d - 1][child.level_index(k)]) * m[t].iter().sum::<f64>()
        })
        .collect()
}

/// Decomposes `W_i` around the pivot `v_{i+1}` and checks: (a) the
/// decomposition against direct partition functions, (b) the shift identity
/// for every permutation, (c) the column-permutation closure of
/// `M(a, pi) = W_hat(a, omega^pi)`, (d) the averaged angle-function inequality.
///
/// `omega^pi` is the environment transported by the elementary shift
/// `theta^pi` at the pivot, `omega^pi(theta^pi(w)) = omega(w)`; with it
/// `W_hat(a, omega^pi) = W_hat(pi^{-1}(a), omega)`.
pub fn tree_interpolation_check(
    p: &TreeIncrementDist,
    q: &TreeIncrementDist,
    env: &TreeEnv,
    t: usize,
    i: usize,
    tol: f64,
) -> Result<InterpolationReport> {
    let order = NodeOrder::canonical(p.arity(), t);
    tree_interpolation_check_with_order(p, q, env, &order, i, tol)
}

pub fn tree_interpolation_check_with_order(
    p: &TreeIncrementDist,
    q: &TreeIncrementDist,
    env: &TreeEnv,
    order: &NodeOrder,
    i: usize,
    tol: f64,
) -> Result<InterpolationReport> {
    let k = check_pair(p, q)?;
    let t = order.horizon;
    if k > MAX_PERMUTATION_ARITY {
        return Err(Error::ResourceLimit(format!(
            "arity {k} needs {k}! permutations; at most {MAX_PERMUTATION_ARITY} is supported"
        )));
    }
    if order.arity != k {
        return Err(Error::DimensionMismatch { left: order.arity, right: k });
    }
    check_env(env, k, t)?;
    if i >= order.len() {
        return Err(Error::InvalidParameter(format!("step {i} outside 0..{}", order.len())));
    }
    let v = order.nodes[i].clone();
    let walk_i = order.ladder_walk(p, q, i)?;
    let walk_next = order.ladder_walk(p, q, i + 1)?;
    let table = walk_i.table(t);
    let levels = env_levels(env, t);
    let masses = level_masses(&levels, &table, k, None);

    // b: mass arriving at v; A: leaves outside the subtree of v
    let dv = v.depth();
    let b = masses[dv][v.level_index(k)];
    let a_val: f64 = masses[t]
        .iter()
        .enumerate()
        .filter(|(idx, _)| !Node::from_level_index(k, t, *idx).0.starts_with(&v.0))
        .map(|(_, m)| m)
        .sum();
    let hat = w_hat(env, &table, &v, t);
    let dot =
        |law: &TreeIncrementDist, w: &[f64]| -> f64 { w.iter().enumerate().map(|(a, x)| law.probs()[a] * x).sum() };

    let w_i = tree_partition_function(env, &walk_i, t)?.value;
    let w_next = tree_partition_function(env, &walk_next, t)?.value;
    let decomposition_defect =
        (w_i - (a_val + b * dot(q, &hat))).abs().max((w_next - (a_val + b * dot(p, &hat))).abs());

    // M(a, pi) = W_hat(a, omega^pi)
    let perms = all_permutations(k);
    let mut shifted_defect: f64 = 0.0;
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(perms.len());
    let mut c_direct = Vec::with_capacity(perms.len());
    let mut d_direct = Vec::with_capacity(perms.len());
    for pi in &perms {
        let moved = apply_elementary_shift(env, &v, &inverse_permutation(pi))?;
        let col = w_hat(&moved, &table, &v, t);
        let inv = inverse_permutation(pi);
        for a in 0..k {
            shifted_defect = shifted_defect.max((col[a] - hat[inv[a] - 1]).abs());
        }
        c_direct.push(tree_partition_function(&moved, &walk_next, t)?.value);
        d_direct.push(tree_partition_function(&moved, &walk_i, t)?.value);
        columns.push(col);
    }

    // permuting column pi by sigma yields column sigma^{-1} o pi
    let index_of: BTreeMap<&Vec<usize>, usize> = perms.iter().enumerate().map(|(j, pi)| (pi, j)).collect();
    let mut closure_defect: f64 = 0.0;
    for (j, pi) in perms.iter().enumerate() {
        for sigma in &perms {
            let target = crate::envlat::compose_permutations(&inverse_permutation(sigma), pi);
            let col = &columns[index_of[&target]];
            for a in 0..k {
                closure_defect = closure_defect.max((columns[j][sigma[a] - 1] - col[a]).abs());
            }
        }
    }

    // C(pi) = W_{i+1}(omega^pi) = A + b c(pi), D(pi) = W_i(omega^pi) = A + b d(pi)
    let c: Vec<f64> = columns.iter().map(|col| a_val + b * dot(p, col)).collect();
    let d: Vec<f64> = columns.iter().map(|col| a_val + b * dot(q, col)).collect();
    let mut concave_defect =
        c.iter().zip(&c_direct).chain(d.iter().zip(&d_direct)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    concave_defect = concave_defect.max((c.iter().sum::<f64>() - d.iter().sum::<f64>()).abs());
    for &level in c.iter().chain(&d) {
        let sc: f64 = c.iter().map(|x| x.min(level)).sum();
        let sd: f64 = d.iter().map(|x| x.min(level)).sum();
        concave_defect = concave_defect.max(sd - sc);
    }

    let decomposition_ok = decomposition_defect <= tol;
    let shifted_ok = shifted_defect <= tol;
    let closure_ok = closure_defect <= tol;
    let concave_ok = concave_defect <= tol;
    Ok(InterpolationReport {
        step: i,
        pivot: v,
        a: a_val,
        b,
        w_hat: hat,
        w_i,
        w_next,
        decomposition_defect,
        decomposition_ok,
        shifted_defect,
        shifted_ok,
        closure_defect,
        closure_ok,
        concave_defect,
        concave_ok,
        passed: decomposition_ok && shifted_ok && closure_ok && concave_ok,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderStep {
    pub step: usize,
    pub pivot: Node,
    pub verdict: bool,
    pub worst_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderReport {
    pub steps: Vec<LadderStep>,
    /// `W_0 = Z^q` and `W_N = Z^p` environment by environment.
    pub endpoints_ok: bool,
    pub verdict: bool,
}

/// Exact check of `W_i <=_cv W_{i+1}` for every rung of the ladder from `q` to `p`.
pub fn tree_ladder_order_check(
    p: &TreeIncrementDist,
    q: &TreeIncrementDist,
    spec: &EnvSpec,
    t: usize,
    cap: u64,
    tol: f64,
) -> Result<LadderReport> {
    let k = check_pair(p, q)?;
    let order = NodeOrder::canonical(k, t);
    let mut walks: Vec<InhomogWalk> = (0..=order.len()).map(|i| order.ladder_walk(p, q, i)).collect::<Result<_>>()?;
    walks.push(InhomogWalk::homogeneous(q.clone()));
    walks.push(InhomogWalk::homogeneous(p.clone()));
    let n = order.len();
    let en = tree_env_enumeration(spec, k, t, cap)?;
    let tables: Vec<_> = walks.iter().map(|w| w.table(t)).collect();
    let offsets: Vec<usize> = (0..=t).map(|d| TreeEnv::n_cells(k, d)).collect();
    let mut atoms: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n + 1];
    let mut endpoints_ok = true;
    en.for_each(|values, prob| {
        let levels: Vec<&[f64]> = (0..t).map(|d| &values[offsets[d]..offsets[d + 1]]).collect();
        let z: Vec<f64> = tables.iter().map(|tb| level_masses(&levels, tb, k, None)[t].iter().sum()).collect();
        endpoints_ok &= (z[0] - z[n + 1]).abs() <= tol && (z[n] - z[n + 2]).abs() <= tol;
        for (i, slot) in atoms.iter_mut().enumerate() {
            slot.push((z[i], prob));
        }
    });
    let laws: Vec<FiniteDist> = atoms.into_iter().map(FiniteDist::new).collect::<Result<_>>()?;
    let steps: Vec<LadderStep> = (0..n)
        .map(|i| {
            let r = concave_order_exact(&laws[i], &laws[i + 1], tol);
            LadderStep {
                step: i,
                pivot: order.nodes[i].clone(),
                verdict: r.verdict,
                worst_violation: r.worst_violation,
            }
        })
        .collect();
    let verdict = endpoints_ok && steps.iter().all(|s| s.verdict);
    Ok(LadderReport { steps, endpoints_ok, verdict })
}
