//! Experiment runner behind the `polyorder` binary: a JSON config in, a JSON
//! result record plus one CSV file per table out.
//!
//! Every verdict is a list of [`Check`]s of the form `lhs <= rhs + slack`, with
//! the three numbers emitted, so any verdict can be recomputed from the record.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::branching::{
    many_to_one_check_ct, many_to_one_check_dt, simulate_brw_ct_with, simulate_brw_dt_with, survival_experiment_ct,
    survival_experiment_dt, CTBranchParams, CtEvent, ManyToOneReport, PhaseOptions, FINITE_HORIZON_LABEL,
};
use crate::envlat::{
    sample_lattice_field, sample_mark_set, sample_offspring_field, sample_tree_env, EnvSpec, Mark, MarkLaw, MarkSet,
    OffspringSpec, DEFAULT_ENUM_CAP,
};
use crate::error::{Error, Result};
use crate::increments::{convolve, is_majorized, IncrementDist, TreeIncrementDist};
use crate::pam_ct::{
    annealed_from_intervals, ct_partition_exact, ct_partition_mc, pam_ode_solve, quenched_from_intervals,
    sample_partition_intervals, CtEnvOptions,
};
use crate::polymer_dt::{
    annealed_mean, free_energy_estimate, joint_partition_distribution, martingale_fractional_moment, mass_profiles,
    partition_function, sample_partition_pairs, static_env_experiment, MomentMode,
};
use crate::stats::{derive_seed, substream};
use crate::stochorder::{
    concave_order_empirical, concave_order_exact, conjecture_scan, coupling_identity_check,
    majorization_concave_sum_check, quantile_grid, ConjectureScanOptions, EmpiricalOptions,
};
use crate::treepoly::{
    necessity_check, tree_interpolation_check, tree_ladder_order_check, tree_theorem_sufficiency_check, NodeOrder,
};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_VERDICT_FAIL: i32 = 2;
pub const EXIT_RESOURCE: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

pub const EXPLORATORY_LABEL: &str = "exploratory: no acceptance claim";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub summary: &'static str,
    pub label: Option<&'static str>,
}

const fn entry(name: &'static str, summary: &'static str) -> CatalogEntry {
    CatalogEntry { name, summary, label: None }
}

const CATALOG: [CatalogEntry; 19] = [
    entry("order-exact", "exact concave order of Z^{p1} and Z^{p1*q} by joint enumeration"),
    entry("order-empirical", "sampled concave-order test of Z^{p1} against Z^{p1*q}"),
    entry("coupling-check", "coupling identity over every environment of a small window"),
    entry("majorization", "majorization certificate with the concave-sum cross-check"),
    entry("tree-theorem", "tree theorem: sufficiency if p <=_M q, otherwise the necessity counterexample"),
    entry("tree-interpolation", "interpolation ladder sub-checks on sampled tree environments"),
    entry("polymer-dp", "one sampled environment: partition function and mass profiles"),
    entry("free-energy", "finite-t quenched free energy per walk"),
    entry("martingale-moment", "E[W^r] for p1 and p1*q with the monotonicity check"),
    entry("pam-exact", "certified interval for the continuous-time partition function"),
    entry("pam-mc", "path Monte Carlo against the certified interval"),
    entry("pam-ode-crosscheck", "Anderson equation solution against the time-reversed partition function"),
    entry("lyapunov", "annealed and quenched exponent estimates across jump rates"),
    entry("brw-dt", "one discrete-time branching random walk run"),
    entry("brw-ct", "one continuous-time branching random walk run with its event log"),
    entry("many-to-one", "mean population against the partition function"),
    entry("survival-phase", "paired survival frequencies (finite-horizon evidence)"),
    CatalogEntry {
        name: "static-env",
        summary: "time-constant environments: concave and convex functionals per walk",
        label: Some(EXPLORATORY_LABEL),
    },
    CatalogEntry {
        name: "conjecture-scan",
        summary: "majorization against exact concave order for symmetric unimodal laws",
        label: Some(EXPLORATORY_LABEL),
    },
];

pub fn list_experiments() -> &'static [CatalogEntry] {
    &CATALOG
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_resource() {
        return EXIT_RESOURCE;
    }
    match err {
        Error::Io(_) | Error::Degenerate(_) => EXIT_OTHER,
        _ => EXIT_CONFIG,
    }
}

/// `pass` iff `lhs <= rhs + slack`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
}

impl Check {
    pub fn le(name: impl Into<String>, lhs: f64, rhs: f64, slack: f64) -> Self {
        Self { name: name.into(), lhs, rhs, slack, pass: lhs <= rhs + slack }
    }

    /// A boolean condition, encoded as `0 <= 0` or `1 <= 0`.
    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self::le(name, if ok { 0.0 } else { 1.0 }, 0.0, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
        w.write_record(&self.columns).map_err(csv_error)?;
        for row in &self.rows {
            w.write_record(row.iter().map(cell)).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn site_str(site: &[i64]) -> String {
    site.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Outcome {
    pub outputs: Value,
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub pass: bool,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub version: String,
    pub timestamp: String,
    pub wall_time_s: f64,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRecord {
    pub tool: String,
    pub subcommand: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub label: Option<String>,
    pub verdict: Option<Verdict>,
    pub outputs: Value,
    pub tables: Vec<Table>,
    pub provenance: Provenance,
}

impl ResultRecord {
    pub fn exit_code(&self) -> i32 {
        match &self.verdict {
            Some(v) if !v.pass => EXIT_VERDICT_FAIL,
            _ => EXIT_PASS,
        }
    }
}

/// Top-level shape of every config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub subcommand: String,
    #[serde(default)]
    pub seed: Option<u64>,
    pub params: Value,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArgs {
    pub subcommand: String,
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

/// Runs one experiment and writes its record; returns the process exit code.
pub fn execute(args: &RunArgs) -> i32 {
    match run(args) {
        Ok(record) => {
            if let Some(v) = &record.verdict {
                for c in v.checks.iter().filter(|c| !c.pass) {
                    eprintln!("check failed: {} ({} > {} + {})", c.name, c.lhs, c.rhs, c.slack);
                }
            }
            record.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(args: &RunArgs) -> Result<ResultRecord> {
    let cfg = ConfigFile::load(&args.config)?;
    if cfg.subcommand != args.subcommand {
        return Err(Error::Config(format!("config is for '{}', not '{}'", cfg.subcommand, args.subcommand)));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::ResourceLimit(format!("thread pool: {e}")))?;
    let record = pool.install(|| run_config(&cfg, args.seed))?;
    let record =
        ResultRecord { provenance: Provenance { threads: pool.current_num_threads(), ..record.provenance }, ..record };
    write_record(&record, &args.out)?;
    Ok(record)
}

/// Runs a parsed config in the current thread pool without touching the disk.
pub fn run_config(cfg: &ConfigFile, seed_override: Option<u64>) -> Result<ResultRecord> {
    let seed = seed_override.or(cfg.seed);
    let start = Instant::now();
    let outcome = run_experiment(&cfg.subcommand, &cfg.params, seed)?;
    let verdict = (!outcome.checks.is_empty())
        .then(|| Verdict { pass: outcome.checks.iter().all(|c| c.pass), checks: outcome.checks.clone() });
    Ok(ResultRecord {
        tool: "polyorder".into(),
        subcommand: cfg.subcommand.clone(),
        seed,
        config: serde_json::to_value(cfg)?,
        label: outcome.label,
        verdict,
        outputs: outcome.outputs,
        tables: outcome.tables,
        provenance: Provenance {
            version: env!("CARGO_PKG_VERSION").into(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            wall_time_s: start.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
        },
    })
}

/// `dir/stem.json` gets its tables as `dir/stem.<table>.csv`.
pub fn table_path(out: &Path, table: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "result".into());
    out.with_file_name(format!("{stem}.{table}.csv"))
}

pub fn write_record(record: &ResultRecord, out: &Path) -> Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, serde_json::to_string_pretty(record)? + "\n")?;
    for t in &record.tables {
        t.write_csv(&table_path(out, &t.name))?;
    }
    Ok(())
}

pub fn run_experiment(name: &str, params: &Value, seed: Option<u64>) -> Result<Outcome> {
    match name {
        "order-exact" => order_exact(parse(params)?),
        "order-empirical" => order_empirical(parse(params)?, need_seed(seed)?),
        "coupling-check" => coupling(parse(params)?),
        "majorization" => majorization(parse(params)?),
        "tree-theorem" => tree_theorem(parse(params)?),
        "tree-interpolation" => tree_interpolation(parse(params)?, need_seed(seed)?),
        "polymer-dp" => polymer_dp(parse(params)?, need_seed(seed)?),
        "free-energy" => free_energy(parse(params)?, need_seed(seed)?),
        "martingale-moment" => martingale_moment(parse(params)?, seed),
        "pam-exact" => pam_exact(parse(params)?, seed),
        "pam-mc" => pam_mc(parse(params)?, need_seed(seed)?),
        "pam-ode-crosscheck" => pam_ode(parse(params)?, seed),
        "lyapunov" => lyapunov(parse(params)?, need_seed(seed)?),
        "brw-dt" => brw_dt(parse(params)?, need_seed(seed)?),
        "brw-ct" => brw_ct(parse(params)?, need_seed(seed)?),
        "many-to-one" => many_to_one(parse(params)?, need_seed(seed)?),
        "survival-phase" => survival_phase(parse(params)?, need_seed(seed)?),
        "static-env" => static_env(parse(params)?, need_seed(seed)?),
        "conjecture-scan" => conjecture(parse(params)?, need_seed(seed)?),
        other => Err(Error::Config(format!("unknown subcommand '{other}'"))),
    }
}

fn parse<T: DeserializeOwned>(v: &Value) -> Result<T> {
    serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("params: {e}")))
}

fn need_seed(seed: Option<u64>) -> Result<u64> {
    seed.ok_or_else(|| Error::Config("this experiment is stochastic: give a seed in the config or via --seed".into()))
}

fn default_cap() -> u64 {
    DEFAULT_ENUM_CAP
}

fn default_tol() -> f64 {
    1e-10
}

fn default_one() -> usize {
    1
}

fn default_dim() -> usize {
    1
}

fn default_pop_cap() -> u64 {
    crate::branching::DEFAULT_POPULATION_CAP
}

fn checked_law(law: &MarkLaw) -> Result<MarkLaw> {
    MarkLaw::new(law.rate, law.rho.clone())
}

fn combined_se(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedWalk {
    name: String,
    p: IncrementDist,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum MarksCfg {
    Explicit { dim: usize, horizon: f64, box_radius: i64, marks: Vec<Mark> },
    Sampled { law: MarkLaw, dim: usize, horizon: f64, box_radius: i64 },
}

impl MarksCfg {
    fn build(&self, seed: Option<u64>) -> Result<MarkSet> {
        match self {
            MarksCfg::Explicit { dim, horizon, box_radius, marks } => {
                MarkSet::new(*dim, *horizon, *box_radius, marks.clone())
            }
            MarksCfg::Sampled { law, dim, horizon, box_radius } => {
                sample_mark_set(&checked_law(law)?, *dim, *horizon, *box_radius, derive_seed(need_seed(seed)?, 1))
            }
        }
    }
}

fn marks_table(marks: &MarkSet) -> Table {
    let mut t = Table::new("marks", &["time", "site", "r"]);
    for m in marks.marks() {
        t.push(vec![json!(m.time), json!(site_str(&m.site)), json!(m.r)]);
    }
    t
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OrderExactCfg {
    env: EnvSpec,
    p1: IncrementDist,
    q: IncrementDist,
    t: usize,
    #[serde(default = "default_cap")]
    cap: u64,
    #[serde(default = "default_tol")]
    tol: f64,
}

fn order_exact(c: OrderExactCfg) -> Result<Outcome> {
    let p2 = convolve(&c.p1, &c.q)?;
    let joint = joint_partition_distribution(&c.env, &c.p1, &p2, c.t, c.cap)?;
    let (z1, z2) = (joint.marginal(0)?, joint.marginal(1)?);
    let rep = concave_order_exact(&z1, &z2, c.tol);
    let annealed = annealed_mean(&c.env, c.t);
    let mut table = Table::new("angles", &["a", "angle_z_p1", "angle_z_p2", "gap"]);
    for (&a, &g) in rep.points.iter().zip(&rep.point_gaps) {
        table.push(vec![json!(a), json!(z1.angle(a)), json!(z2.angle(a)), json!(g)]);
    }
    let mut checks = vec![
        Check::le("Z^p1 <=_cv Z^(p1*q): worst angle/mean violation", rep.worst_violation, 0.0, c.tol),
        Check::le("|E Z^p1 - R^t|", (z1.mean() - annealed).abs(), 0.0, c.tol),
        Check::le("|E Z^p1 - E Z^(p1*q)|", (z1.mean() - z2.mean()).abs(), 0.0, c.tol),
    ];
    let mut sqrt_moments = Value::Null;
    if annealed > 0.0 {
        let m1 = z1.expect(|z| (z / annealed).sqrt());
        let m2 = z2.expect(|z| (z / annealed).sqrt());
        checks.push(Check::le("E (W^p1)^(1/2) <= E (W^(p1*q))^(1/2)", m1, m2, c.tol));
        sqrt_moments = json!({"p1": m1, "p1_conv_q": m2});
    }
    Ok(Outcome {
        outputs: json!({
            "p1_conv_q": p2,
            "annealed_mean": annealed,
            "mean_z_p1": z1.mean(),
            "mean_z_p1_conv_q": z2.mean(),
            "atoms_z_p1": z1.atoms().len(),
            "atoms_z_p1_conv_q": z2.atoms().len(),
            "mean_gap": rep.mean_gap,
            "worst_violation": rep.worst_violation,
            "sqrt_moments": sqrt_moments,
        }),
        tables: vec![table],
        checks,
        label: None,
    })
}

fn default_grid() -> usize {
    20
}

fn default_z() -> f64 {
    3.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OrderEmpiricalCfg {
    env: EnvSpec,
    p1: IncrementDist,
    q: IncrementDist,
    t: usize,
    n: usize,
    #[serde(default = "default_grid")]
    grid_size: usize,
    #[serde(default = "default_z")]
    z: f64,
    #[serde(default = "default_true")]
    paired: bool,
    #[serde(default)]
    bonferroni: bool,
}

fn order_empirical(c: OrderEmpiricalCfg, seed: u64) -> Result<Outcome> {
    let p2 = convolve(&c.p1, &c.q)?;
    let pairs = sample_partition_pairs(&c.env, &c.p1, &p2, c.t, c.n, seed)?;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = if c.paired {
        pairs.iter().map(|p| p.1).collect()
    } else {
        sample_partition_pairs(&c.env, &c.p1, &p2, c.t, c.n, derive_seed(seed, 1))?.iter().map(|p| p.1).collect()
    };
    let grid = quantile_grid(&xs, &ys, c.grid_size);
    let opts = EmpiricalOptions { z: c.z, paired: c.paired, bonferroni: c.bonferroni };
    let rep = concave_order_empirical(&xs, &ys, &grid, opts)?;
    let mut table = Table::new("gaps", &["a", "gap", "se", "lower"]);
    for r in &rep.rows {
        table.push(vec![json!(r.a), json!(r.gap), json!(r.se), json!(r.lower)]);
    }
    let max_lower = rep.rows.iter().map(|r| r.lower).fold(f64::NEG_INFINITY, f64::max);
    let checks = vec![
        Check::le("max_a (gap - z se)", max_lower, 0.0, 0.0),
        Check::le("|mean gap|", rep.mean_gap.abs(), rep.z_used * rep.mean_gap_se, 0.0),
    ];
    Ok(Outcome {
        outputs: json!({
            "verdict": rep.verdict,
            "mean_gap": rep.mean_gap,
            "mean_gap_se": rep.mean_gap_se,
            "z_used": rep.z_used,
            "n_x": rep.n_x,
            "n_y": rep.n_y,
            "small_sample_warning": rep.small_sample_warning,
        }),
        tables: vec![table],
        checks,
        label: None,
    })
}

fn default_tol_tight() -> f64 {
    1e-12
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CouplingCfg {
    env: EnvSpec,
    p1: IncrementDist,
    q: IncrementDist,
    t: usize,
    #[serde(default = "default_cap")]
    cap: u64,
    #[serde(default = "default_tol_tight")]
    tol: f64,
}

fn coupling(c: CouplingCfg) -> Result<Outcome> {
    let rep = coupling_identity_check(&c.env, &c.p1, &c.q, c.t, c.cap, c.tol)?;
    Ok(Outcome {
        checks: vec![Check::le("max defect of the coupling identity", rep.max_defect, 0.0, c.tol)],
        outputs: serde_json::to_value(&rep)?,
        ..Outcome::default()
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MajorizationCfg {
    p: Vec<f64>,
    q: Vec<f64>,
    #[serde(default = "default_tol_tight")]
    tol: f64,
    #[serde(default)]
    expect: Option<bool>,
}

fn majorization(c: MajorizationCfg) -> Result<Outcome> {
    let cert = is_majorized(&c.p, &c.q, c.tol);
    let n = c.p.len().max(c.q.len());
    let mut pp = c.p.clone();
    let mut qq = c.q.clone();
    pp.resize(n, 0.0);
    qq.resize(n, 0.0);
    let concave = majorization_concave_sum_check(&pp, &qq, c.tol)?;
    let mut table = Table::new("partial_sums", &["k", "gap"]);
    for (k, g) in cert.gaps.iter().enumerate() {
        table.push(vec![json!(k + 1), json!(g)]);
    }
    let mut checks = vec![Check::holds("partial-sum and concave-sum criteria agree", cert.verdict == concave)];
    if let Some(e) = c.expect {
        checks.push(Check::holds("majorization matches the expected answer", cert.verdict == e));
    }
    Ok(Outcome {
        outputs: json!({"majorized": cert.verdict, "certificate": cert, "concave_sum_criterion": concave}),
        tables: vec![table],
        checks,
        label: None,
    })
}

fn default_violation() -> f64 {
    1e-6
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeTheoremCfg {
    p: TreeIncrementDist,
    q: TreeIncrementDist,
    env: EnvSpec,
    t: usize,
    #[serde(default = "default_cap")]
    cap: u64,
    #[serde(default = "default_tol")]
    tol: f64,
    #[serde(default = "default_violation")]
    violation_threshold: f64,
}

fn tree_theorem(c: TreeTheoremCfg) -> Result<Outcome> {
    let cert = is_majorized(c.p.probs(), c.q.probs(), 1e-12);
    if cert.verdict {
        let rep = tree_theorem_sufficiency_check(&c.p, &c.q, &c.env, c.t, c.cap, c.tol)?;
        let mut table = Table::new("angles", &["a", "gap"]);
        for (&a, &g) in rep.points.iter().zip(&rep.point_gaps) {
            table.push(vec![json!(a), json!(g)]);
        }
        Ok(Outcome {
            outputs: json!({"direction": "sufficiency", "majorized": true, "mean_gap": rep.mean_gap, "worst_violation": rep.worst_violation}),
            tables: vec![table],
            checks: vec![Check::le("Z^q <=_cv Z^p: worst violation", rep.worst_violation, 0.0, c.tol)],
            label: None,
        })
    } else {
        let rep = necessity_check(&c.p, &c.q, c.tol)?;
        Ok(Outcome {
            outputs: json!({"direction": "necessity", "majorized": false, "worst_violation": rep.worst_violation, "order_holds": rep.verdict}),
            checks: vec![Check::le(
                "violation threshold <= violation of Z^q <=_cv Z^p in the one-open-child mixture",
                c.violation_threshold,
                rep.worst_violation,
                0.0,
            )],
            ..Outcome::default()
        })
    }
}

fn default_n_env() -> usize {
    3
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeInterpolationCfg {
    p: TreeIncrementDist,
    q: TreeIncrementDist,
    env: EnvSpec,
    t: usize,
    #[serde(default = "default_n_env")]
    n_env: usize,
    #[serde(default = "default_tol_tight")]
    tol: f64,
    #[serde(default = "default_cap")]
    cap: u64,
    #[serde(default = "default_true")]
    ladder: bool,
}

fn tree_interpolation(c: TreeInterpolationCfg, seed: u64) -> Result<Outcome> {
    let k = c.p.arity();
    let order = NodeOrder::canonical(k, c.t);
    let mut table = Table::new(
        "steps",
        &[
            "env",
            "step",
            "pivot",
            "a",
            "b",
            "w_i",
            "w_next",
            "decomposition_defect",
            "shifted_defect",
            "closure_defect",
            "concave_defect",
            "passed",
        ],
    );
    let mut worst = [0.0f64; 4];
    for e in 0..c.n_env {
        let env = sample_tree_env(&c.env, k, c.t, &mut substream(seed, e as u64))?;
        for i in 0..order.len() {
            let r = tree_interpolation_check(&c.p, &c.q, &env, c.t, i, c.tol)?;
            let defects = [r.decomposition_defect, r.shifted_defect, r.closure_defect, r.concave_defect];
            for (w, d) in worst.iter_mut().zip(defects) {
                *w = w.max(d);
            }
            table.push(vec![
                json!(e),
                json!(r.step),
                json!(r.pivot.0.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(".")),
                json!(r.a),
                json!(r.b),
                json!(r.w_i),
                json!(r.w_next),
                json!(r.decomposition_defect),
                json!(r.shifted_defect),
                json!(r.closure_defect),
                json!(r.concave_defect),
                json!(r.passed),
            ]);
        }
    }
    let names = ["decomposition", "shift identity", "column closure", "averaged angle inequality"];
    let mut checks: Vec<Check> =
        names.iter().zip(worst).map(|(n, w)| Check::le(format!("max {n} defect"), w, 0.0, c.tol)).collect();
    let mut outputs = json!({"pivots": order.len(), "environments": c.n_env, "worst_defects": worst});
    if c.ladder {
        let lad = tree_ladder_order_check(&c.p, &c.q, &c.env, c.t, c.cap, 1e-10)?;
        let w = lad.steps.iter().map(|s| s.worst_violation).fold(0.0, f64::max);
        checks.push(Check::le("ladder W_i <=_cv W_(i+1): worst violation", w, 0.0, 1e-10));
        checks.push(Check::holds("ladder endpoints equal Z^q and Z^p", lad.endpoints_ok));
        outputs["ladder"] = serde_json::to_value(&lad)?;
    }
    Ok(Outcome { outputs, tables: vec![table], checks, label: None })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolymerDpCfg {
    env: EnvSpec,
    p: IncrementDist,
    t: usize,
}

fn polymer_dp(c: PolymerDpCfg, seed: u64) -> Result<Outcome> {
    let window = Arc::new(c.p.reachable_window(c.t));
    let field = sample_lattice_field(&c.env, window, seed)?;
    let z = partition_function(&field, &c.p, c.t)?;
    let mut table = Table::new("profiles", &["time", "site", "mass"]);
    for prof in mass_profiles(&field, &c.p, c.t)? {
        for (site, m) in prof.sites.iter().zip(&prof.mass) {
            table.push(vec![json!(prof.time), json!(site_str(site)), json!(m)]);
        }
    }
    Ok(Outcome {
        outputs: json!({"partition_function": z.value, "window_cells": z.window_cells, "annealed_mean": annealed_mean(&c.env, c.t)}),
        tables: vec![table],
        ..Outcome::default()
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FreeEnergyCfg {
    env: EnvSpec,
    walks: Vec<NamedWalk>,
    t: usize,
    n_env: usize,
}

fn free_energy(c: FreeEnergyCfg, seed: u64) -> Result<Outcome> {
    let mut table = Table::new("free_energy", &["walk", "estimate", "se", "n_env", "n_survived", "survival_fraction"]);
    for w in &c.walks {
        let fe = free_energy_estimate(&c.env, &w.p, c.t, c.n_env, seed)?;
        table.push(vec![
            json!(w.name),
            json!(fe.estimate),
            json!(fe.se),
            json!(fe.n_env),
            json!(fe.n_survived),
            json!(fe.survival_fraction),
        ]);
    }
    Ok(Outcome {
        outputs: json!({"horizon": c.t, "annealed_log_mean": c.env.mean_factor().ln()}),
        tables: vec![table],
        ..Outcome::default()
    })
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ModeCfg {
    Exact {
        #[serde(default = "default_cap")]
        cap: u64,
    },
    MonteCarlo {
        n: usize,
    },
}

fn default_half() -> f64 {
    0.5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MomentCfg {
    env: EnvSpec,
    p1: IncrementDist,
    q: IncrementDist,
    t: usize,
    #[serde(default = "default_half")]
    r: f64,
    mode: ModeCfg,
    #[serde(default = "default_tol")]
    tol: f64,
}

fn martingale_moment(c: MomentCfg, seed: Option<u64>) -> Result<Outcome> {
    let p2 = convolve(&c.p1, &c.q)?;
    let (mode, exact) = match c.mode {
        ModeCfg::Exact { cap } => (MomentMode::Exact { cap }, true),
        ModeCfg::MonteCarlo { n } => (MomentMode::MonteCarlo { n, seed: need_seed(seed)? }, false),
    };
    let m1 = martingale_fractional_moment(&c.env, &c.p1, c.t, c.r, mode)?;
    let m2 = martingale_fractional_moment(&c.env, &p2, c.t, c.r, mode)?;
    let slack = if exact { c.tol } else { 3.0 * combined_se(m1.se, m2.se) };
    Ok(Outcome {
        outputs: json!({"r": c.r, "p1": m1, "p1_conv_q": m2, "mode": if exact { "exact" } else { "monte_carlo" }}),
        checks: vec![Check::le("E (W^p1)^r <= E (W^(p1*q))^r", m1.value, m2.value, slack)],
        ..Outcome::default()
    })
}

fn default_eps() -> f64 {
    1e-6
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PamExactCfg {
    marks: MarksCfg,
    kappa: f64,
    t: f64,
    #[serde(default = "default_eps")]
    eps: f64,
}

fn pam_exact(c: PamExactCfg, seed: Option<u64>) -> Result<Outcome> {
    let marks = c.marks.build(seed)?;
    let iv = ct_partition_exact(&marks, c.kappa, c.t, c.eps)?;
    Ok(Outcome {
        outputs: json!({"interval": iv, "midpoint": iv.midpoint(), "n_marks": marks.len()}),
        tables: vec![marks_table(&marks)],
        ..Outcome::default()
    })
}

fn default_eps_mc() -> f64 {
    1e-4
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PamMcCfg {
    marks: MarksCfg,
    kappa: f64,
    t: f64,
    n: usize,
    #[serde(default = "default_eps_mc")]
    eps: f64,
}

fn pam_mc(c: PamMcCfg, seed: u64) -> Result<Outcome> {
    let marks = c.marks.build(Some(seed))?;
    let iv = ct_partition_exact(&marks, c.kappa, c.t, c.eps)?;
    let mc = ct_partition_mc(&marks, c.kappa, c.t, c.n, derive_seed(seed, 2))?;
    Ok(Outcome {
        outputs: json!({"interval": iv, "mc": mc}),
        tables: vec![marks_table(&marks)],
        checks: vec![
            Check::le("lo <= MC mean + 3 SE", iv.lo, mc.mean, 3.0 * mc.se),
            Check::le("MC mean <= hi + 3 SE", mc.mean, iv.hi, 3.0 * mc.se),
        ],
        label: None,
    })
}

fn default_step() -> f64 {
    0.1
}

fn default_ode_eps() -> f64 {
    1e-9
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PamOdeCfg {
    marks: MarksCfg,
    kappa: f64,
    t: f64,
    box_radius: i64,
    #[serde(default = "default_step")]
    step: f64,
    #[serde(default = "default_ode_eps")]
    eps: f64,
    #[serde(default = "default_eps")]
    tol: f64,
}

/// Marks up to `t` with times mapped to `t - s`.
pub fn reversed_at(marks: &MarkSet, t: f64) -> Result<MarkSet> {
    let rev = marks
        .marks()
        .iter()
        .filter(|m| m.time <= t)
        .map(|m| Mark { time: t - m.time, site: m.site.clone(), r: m.r })
        .collect();
    MarkSet::new(marks.dim(), t, marks.box_radius(), rev)
}

fn pam_ode(c: PamOdeCfg, seed: Option<u64>) -> Result<Outcome> {
    let marks = c.marks.build(seed)?;
    let sol = pam_ode_solve(&marks, c.kappa, c.t, c.box_radius, c.step)?;
    let iv = ct_partition_exact(&reversed_at(&marks, c.t)?, c.kappa, c.t, c.eps)?;
    let lattice = crate::increments::BoxLattice::new(marks.dim(), c.box_radius);
    let mut table = Table::new("u", &["site", "u"]);
    for (i, u) in sol.u.iter().enumerate() {
        table.push(vec![json!(site_str(&lattice.site(i))), json!(u)]);
    }
    Ok(Outcome {
        outputs: json!({"u_origin": sol.value_at_origin, "ode_error_bound": sol.error_bound, "reversed_interval": iv}),
        tables: vec![table, marks_table(&marks)],
        checks: vec![Check::le(
            "|u(t,0) - Z_t(reversed marks)|",
            (sol.value_at_origin - iv.midpoint()).abs(),
            0.0,
            c.tol,
        )],
        label: None,
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LyapunovCfg {
    law: MarkLaw,
    #[serde(default = "default_dim")]
    dim: usize,
    kappas: Vec<f64>,
    rs: Vec<f64>,
    t: f64,
    n_env: usize,
    env_radius: i64,
    #[serde(default = "default_eps")]
    eps: f64,
    #[serde(default = "default_true")]
    quenched: bool,
}

fn lyapunov(c: LyapunovCfg, seed: u64) -> Result<Outcome> {
    let law = checked_law(&c.law)?;
    let opts = CtEnvOptions { dim: c.dim, env_radius: c.env_radius, eps: c.eps };
    let mut kappas = c.kappas.clone();
    kappas.sort_by(f64::total_cmp);
    let mut table = Table::new("exponents", &["kappa", "r", "kind", "estimate", "se", "zero_fraction", "max_width"]);
    let mut annealed = Vec::new();
    for &kappa in &kappas {
        let iv = sample_partition_intervals(&law, kappa, c.t, c.n_env, seed, opts)?;
        let mut row = Vec::new();
        for &r in &c.rs {
            let est = annealed_from_intervals(&iv, r, c.t)?;
            table.push(vec![
                json!(kappa),
                json!(r),
                json!("annealed"),
                json!(est.estimate),
                json!(est.se),
                json!(est.zero_fraction),
                json!(est.max_width),
            ]);
            row.push(est);
        }
        if c.quenched {
            match quenched_from_intervals(&iv, c.t) {
                Ok(q) => table.push(vec![
                    json!(kappa),
                    Value::Null,
                    json!("quenched"),
                    json!(q.estimate),
                    json!(q.se),
                    json!(q.zero_fraction),
                    json!(q.max_width),
                ]),
                Err(Error::Degenerate(_)) => table.push(vec![
                    json!(kappa),
                    Value::Null,
                    json!("quenched"),
                    Value::Null,
                    Value::Null,
                    json!(1.0),
                    Value::Null,
                ]),
                Err(e) => return Err(e),
            }
        }
        annealed.push(row);
    }
    let mut checks = Vec::new();
    for w in 0..kappas.len().saturating_sub(1) {
        for (j, &r) in c.rs.iter().enumerate() {
            let (lo, hi) = (&annealed[w][j], &annealed[w + 1][j]);
            let s = 3.0 * combined_se(lo.se, hi.se);
            let (k0, k1) = (kappas[w], kappas[w + 1]);
            checks.push(if r < 1.0 {
                Check::le(format!("r={r}: est(kappa={k0}) <= est(kappa={k1})"), lo.estimate, hi.estimate, s)
            } else if r > 1.0 {
                Check::le(format!("r={r}: est(kappa={k1}) <= est(kappa={k0})"), hi.estimate, lo.estimate, s)
            } else {
                Check::le(
                    format!("r=1: |est(kappa={k0}) - est(kappa={k1})|"),
                    (lo.estimate - hi.estimate).abs(),
                    0.0,
                    s,
                )
            });
        }
    }
    Ok(Outcome {
        outputs: json!({"horizon": c.t, "n_env": c.n_env, "label": "finite-t estimates"}),
        tables: vec![table],
        checks,
        label: None,
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BrwDtCfg {
    offspring: OffspringSpec,
    p: IncrementDist,
    t: usize,
    #[serde(default = "default_pop_cap")]
    pop_cap: u64,
}

fn brw_dt(c: BrwDtCfg, seed: u64) -> Result<Outcome> {
    let spec = c.offspring.clone();
    let window = Arc::new(c.p.reachable_window(c.t));
    let eta = sample_offspring_field(&spec, window, &mut substream(derive_seed(seed, 1), 0))?;
    let expected = partition_function(&eta.omega()?, &c.p, c.t)?.value;
    let st = simulate_brw_dt_with(&eta, &c.p, c.t, c.pop_cap, &mut substream(derive_seed(seed, 2), 0))?;
    let mut table = Table::new("counts", &["site", "count"]);
    for (site, n) in &st.counts {
        table.push(vec![json!(site_str(site)), json!(n)]);
    }
    Ok(Outcome {
        outputs: json!({"generation": st.generation, "total": st.total(), "capped": st.capped, "expected_total": expected}),
        tables: vec![table],
        ..Outcome::default()
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BrwCtCfg {
    marks: MarksCfg,
    kappa: f64,
    lambda: f64,
    t: f64,
    #[serde(default = "default_pop_cap")]
    pop_cap: u64,
    #[serde(default = "default_true")]
    record_events: bool,
}

fn brw_ct(c: BrwCtCfg, seed: u64) -> Result<Outcome> {
    let marks = c.marks.build(Some(seed))?;
    let params = CTBranchParams::new(c.kappa, c.lambda, c.t)?;
    let run =
        simulate_brw_ct_with(&marks, params, c.pop_cap, c.record_events, &mut substream(derive_seed(seed, 2), 0))?;
    let mut counts = Table::new("counts", &["site", "count"]);
    for (site, n) in &run.final_counts {
        counts.push(vec![json!(site_str(site)), json!(n)]);
    }
    let mut tables = vec![counts];
    if let Some(events) = &run.events {
        let mut t = Table::new("events", &["time", "kind", "particle", "child_1", "child_2", "from", "to"]);
        for ev in events {
            t.push(match ev {
                CtEvent::Jump { time, particle, from, to } => vec![
                    json!(time),
                    json!("jump"),
                    json!(particle),
                    Value::Null,
                    Value::Null,
                    json!(site_str(from)),
                    json!(site_str(to)),
                ],
                CtEvent::Branch { time, parent, children, site } => vec![
                    json!(time),
                    json!("branch"),
                    json!(parent),
                    json!(children[0]),
                    json!(children[1]),
                    json!(site_str(site)),
                    json!(site_str(site)),
                ],
                CtEvent::Killed { time, particle, site } => vec![
                    json!(time),
                    json!("killed"),
                    json!(particle),
                    Value::Null,
                    Value::Null,
                    json!(site_str(site)),
                    Value::Null,
                ],
            });
        }
        tables.push(t);
    }
    tables.push(marks_table(&marks));
    Ok(Outcome {
        outputs: json!({
            "total": run.total,
            "capped": run.capped,
            "stopped_at": run.stopped_at,
            "extinction_time": run.extinction_time,
            "growth_factor": (c.lambda * c.t).exp(),
        }),
        tables,
        ..Outcome::default()
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DtManyToOneCfg {
    offspring: OffspringSpec,
    p: IncrementDist,
    t: usize,
    n: usize,
    #[serde(default = "default_one")]
    n_fields: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CtManyToOneCfg {
    law: MarkLaw,
    #[serde(default = "default_dim")]
    dim: usize,
    box_radius: i64,
    kappa: f64,
    lambda: f64,
    t: f64,
    n: usize,
    #[serde(default = "default_eps")]
    eps: f64,
    #[serde(default = "default_one")]
    n_instances: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManyToOneCfg {
    #[serde(default)]
    discrete: Option<DtManyToOneCfg>,
    #[serde(default)]
    continuous: Option<CtManyToOneCfg>,
}

fn m2o_row(table: &mut Table, checks: &mut Vec<Check>, model: &str, k: usize, r: &ManyToOneReport) {
    table.push(vec![
        json!(model),
        json!(k),
        json!(r.exact),
        json!(r.exact_radius),
        json!(r.mc.mean),
        json!(r.mc.se),
        json!(r.mc.n),
        json!(r.n_capped),
        json!(r.pass),
    ]);
    let slack = r.tolerance.max(1e-12 * r.exact.abs().max(1.0));
    checks.push(Check::le(format!("{model} instance {k}: |MC mean - exact|"), r.deviation, 0.0, slack));
    checks.push(Check::le(format!("{model} instance {k}: capped runs"), r.n_capped as f64, 0.0, 0.0));
}

fn many_to_one(c: ManyToOneCfg, seed: u64) -> Result<Outcome> {
    if c.discrete.is_none() && c.continuous.is_none() {
        return Err(Error::Config("many-to-one needs a 'discrete' or 'continuous' block".into()));
    }
    let mut table = Table::new(
        "many_to_one",
        &["model", "instance", "exact", "exact_radius", "mc_mean", "mc_se", "n", "n_capped", "pass"],
    );
    let mut checks = Vec::new();
    if let Some(d) = &c.discrete {
        let spec = d.offspring.clone();
        for k in 0..d.n_fields {
            let r = many_to_one_check_dt(&spec, &d.p, d.t, d.n, derive_seed(seed, 100 + k as u64))?;
            m2o_row(&mut table, &mut checks, "discrete", k, &r);
        }
    }
    if let Some(ct) = &c.continuous {
        let law = checked_law(&ct.law)?;
        let params = CTBranchParams::new(ct.kappa, ct.lambda, ct.t)?;
        for k in 0..ct.n_instances {
            let marks = sample_mark_set(&law, ct.dim, ct.t, ct.box_radius, derive_seed(seed, 200 + k as u64))?;
            let r = many_to_one_check_ct(&marks, params, ct.n, ct.eps, derive_seed(seed, 300 + k as u64))?;
            m2o_row(&mut table, &mut checks, "continuous", k, &r);
        }
    }
    Ok(Outcome { outputs: json!({"instances": table.rows.len()}), tables: vec![table], checks, label: None })
}

fn default_n_fe() -> usize {
    200
}

fn default_dt_cap() -> u64 {
    10_000
}

fn default_ct_cap() -> u64 {
    1_000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DtSurvivalCfg {
    offspring: OffspringSpec,
    less_random: IncrementDist,
    extra: IncrementDist,
    horizon: usize,
    n: usize,
    #[serde(default = "default_n_fe")]
    n_free_energy: usize,
    #[serde(default = "default_dt_cap")]
    pop_cap: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CtSurvivalCfg {
    law: MarkLaw,
    #[serde(default = "default_dim")]
    dim: usize,
    env_radius: i64,
    kappas: Vec<f64>,
    lambdas: Vec<f64>,
    horizon: f64,
    n: usize,
    #[serde(default = "default_ct_cap")]
    pop_cap: u64,
    #[serde(default)]
    n_lambda0: usize,
    #[serde(default = "default_eps")]
    eps: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurvivalCfg {
    #[serde(default)]
    discrete: Option<DtSurvivalCfg>,
    #[serde(default)]
    continuous: Option<CtSurvivalCfg>,
}

fn survival_phase(c: SurvivalCfg, seed: u64) -> Result<Outcome> {
    if c.discrete.is_none() && c.continuous.is_none() {
        return Err(Error::Config("survival-phase needs a 'discrete' or 'continuous' block".into()));
    }
    let mut tables = Vec::new();
    let mut checks = Vec::new();
    let mut outputs = json!({});
    if let Some(d) = &c.discrete {
        let spec = d.offspring.clone();
        let more = convolve(&d.less_random, &d.extra)?;
        let s = derive_seed(seed, 1);
        let r_less = survival_experiment_dt(&spec, &d.less_random, d.horizon, d.n, d.n_free_energy, d.pop_cap, s)?;
        let r_more = survival_experiment_dt(&spec, &more, d.horizon, d.n, d.n_free_energy, d.pop_cap, s)?;
        let mut t = Table::new(
            "survival_dt",
            &["walk", "frequency", "se", "n", "n_capped", "free_energy", "free_energy_se", "sign_agreement"],
        );
        for (name, r) in [("less_random", &r_less), ("more_random", &r_more)] {
            let fe = r.free_energy.as_ref();
            t.push(vec![
                json!(name),
                json!(r.frequency),
                json!(r.se),
                json!(r.n),
                json!(r.n_capped),
                json!(fe.map(|f| f.estimate)),
                json!(fe.map(|f| f.se)),
                json!(r.sign_agreement),
            ]);
        }
        let mut curve = Table::new("survival_curve_dt", &["generation", "less_random", "more_random"]);
        for (g, (a, b)) in r_less.curve.iter().zip(&r_more.curve).enumerate() {
            curve.push(vec![json!(g + 1), json!(a), json!(b)]);
        }
        checks.push(Check::le(
            "discrete: freq(less random) <= freq(more random) + 3 sigma",
            r_less.frequency,
            r_more.frequency,
            3.0 * combined_se(r_less.se, r_more.se),
        ));
        outputs["discrete_more_random_walk"] = serde_json::to_value(&more)?;
        tables.push(t);
        tables.push(curve);
    }
    if let Some(ct) = &c.continuous {
        let law = checked_law(&ct.law)?;
        let opts = PhaseOptions {
            env: CtEnvOptions { dim: ct.dim, env_radius: ct.env_radius, eps: ct.eps },
            pop_cap: ct.pop_cap,
            n_lambda0: ct.n_lambda0,
        };
        let tab = survival_experiment_ct(&law, &ct.kappas, &ct.lambdas, ct.horizon, ct.n, derive_seed(seed, 2), opts)?;
        let mut t = Table::new("survival_ct", &["kappa", "lambda", "frequency", "se", "n", "n_capped"]);
        for cell in &tab.cells {
            t.push(vec![
                json!(cell.kappa),
                json!(cell.lambda),
                json!(cell.frequency),
                json!(cell.se),
                json!(cell.n),
                json!(cell.n_capped),
            ]);
        }
        for m in &tab.monotonicity {
            checks.push(Check::le(
                format!(
                    "continuous lambda={}: freq(kappa={}) <= freq(kappa={}) + 3 sigma",
                    m.lambda, m.kappa_lo, m.kappa_hi
                ),
                -m.difference,
                0.0,
                3.0 * m.sigma,
            ));
        }
        outputs["continuous_lambda0"] = serde_json::to_value(&tab.lambda0)?;
        outputs["continuous_monotonicity"] = serde_json::to_value(&tab.monotonicity)?;
        tables.push(t);
    }
    Ok(Outcome { outputs, tables, checks, label: Some(FINITE_HORIZON_LABEL.into()) })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StaticEnvCfg {
    xi: EnvSpec,
    walks: Vec<NamedWalk>,
    t: usize,
    n: usize,
}

fn static_env(c: StaticEnvCfg, seed: u64) -> Result<Outcome> {
    let walks: Vec<(String, IncrementDist)> = c.walks.into_iter().map(|w| (w.name, w.p)).collect();
    let rows = static_env_experiment(&c.xi, &walks, c.t, c.n, seed)?;
    let mut t = Table::new("static_env", &["walk", "functional", "shape", "estimate", "se", "n"]);
    for r in &rows {
        t.push(vec![json!(r.walk), json!(r.functional), json!(r.shape), json!(r.estimate), json!(r.se), json!(r.n)]);
    }
    Ok(Outcome {
        outputs: json!({"rows": rows.len()}),
        tables: vec![t],
        checks: vec![],
        label: Some(EXPLORATORY_LABEL.into()),
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConjectureCfg {
    k: i64,
    horizon: usize,
    env: EnvSpec,
    n_random_pairs: usize,
    alphas: Vec<f64>,
    #[serde(default = "default_cap")]
    cap: u64,
    #[serde(default = "default_tol")]
    tol: f64,
}

fn conjecture(c: ConjectureCfg, seed: u64) -> Result<Outcome> {
    let scan = conjecture_scan(&ConjectureScanOptions {
        k: c.k,
        horizon: c.horizon,
        spec: c.env,
        n_random_pairs: c.n_random_pairs,
        alphas: c.alphas,
        cap: c.cap,
        tol: c.tol,
        seed,
    })?;
    let mut t = Table::new("scan", &["pair", "p", "q", "majorized", "concave_order", "worst_violation", "agree"]);
    for r in &scan.rows {
        t.push(vec![
            json!(r.label),
            json!(serde_json::to_string(&r.p)?),
            json!(serde_json::to_string(&r.q)?),
            json!(r.majorized),
            json!(r.concave_order),
            json!(r.worst_violation),
            json!(r.agree),
        ]);
    }
    Ok(Outcome {
        outputs: json!({"pairs": scan.rows.len(), "disagreements": scan.disagreements}),
        tables: vec![t],
        checks: vec![],
        label: Some(scan.label),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(sub: &str, seed: Option<u64>, params: Value) -> ConfigFile {
        ConfigFile { subcommand: sub.into(), seed, params }
    }

    #[test]
    fn catalog_labels() {
        let cat = list_experiments();
        assert_eq!(cat.len(), 19);
        let scan = cat.iter().find(|e| e.name == "conjecture-scan").unwrap();
        assert_eq!(scan.label, Some(EXPLORATORY_LABEL));
        assert!(cat.iter().filter(|e| e.label.is_some()).count() == 2);
    }

    #[test]
    fn coupling_with_dirac_q_passes_with_zero_defect() {
        let c = cfg(
            "coupling-check",
            None,
            json!({
                "env": [[-0.5, 0.5], [1.0, 0.5]],
                "p1": {"dim": 1, "atoms": [[[-1], 0.5], [[1], 0.5]]},
                "q": {"dim": 1, "atoms": [[[0], 1.0]]},
                "t": 2
            }),
        );
        let rec = run_config(&c, None).unwrap();
        let v = rec.verdict.unwrap();
        assert!(v.pass);
        assert_eq!(v.checks[0].lhs, 0.0);
    }

    #[test]
    fn unknown_fields_are_config_errors() {
        let c = cfg("majorization", None, json!({"p": [1.0], "q": [1.0], "bogus": 1}));
        let err = run_config(&c, None).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_CONFIG);
        let c = cfg("polymer-dp", None, json!({"env": [[0.0, 1.0]], "p": {"dim": 1, "atoms": [[[0], 1.0]]}, "t": 1}));
        assert_eq!(exit_code(&run_config(&c, None).unwrap_err()), EXIT_CONFIG);
    }

    #[test]
    fn resource_errors_map_to_three() {
        let c = cfg(
            "order-exact",
            None,
            json!({
                "env": [[-0.5, 0.5], [1.0, 0.5]],
                "p1": {"dim": 1, "atoms": [[[-1], 0.5], [[1], 0.5]]},
                "q": {"dim": 1, "atoms": [[[-1], 0.5], [[1], 0.5]]},
                "t": 6,
                "cap": 1000
            }),
        );
        assert_eq!(exit_code(&run_config(&c, None).unwrap_err()), EXIT_RESOURCE);
    }

    #[test]
    fn deterministic_modulo_provenance() {
        let c = cfg(
            "pam-mc",
            Some(7),
            json!({
                "marks": {"kind": "sampled", "law": {"rate": 1.0, "rho": [[-1.0, 1.0]]}, "dim": 1, "horizon": 1.0, "box_radius": 4},
                "kappa": 1.0, "t": 1.0, "n": 2000
            }),
        );
        let a = run_config(&c, None).unwrap();
        let b =
            rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| run_config(&c, None)).unwrap();
        assert_eq!(serde_json::to_string(&a.outputs).unwrap(), serde_json::to_string(&b.outputs).unwrap());
        assert_eq!(a.tables, b.tables);
    }

    #[test]
    fn table_path_naming() {
        assert_eq!(table_path(Path::new("out/run.json"), "angles"), PathBuf::from("out/run.angles.csv"));
    }
}
