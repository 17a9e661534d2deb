//! Command-line harness: configuration, orchestration and artifact output.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::cell::{whom_estimate, CellDiscretization, MinimizeOptions};
use crate::error::Error;
use crate::exec::Exec;
use crate::film::{gamma_experiment, FilmMeshSpec, FilmOptions};
use crate::homtable::{
    save_table, tabulate_slice, CacheDefaults, DiagonalQuadratic, EffectiveDensity, HomogenizedDensity, SliceSpec, WHomCache,
};
use crate::material::{check_hypotheses, LawFamily, LawSpec, MaterialLaw};
use crate::membrane::{reduce_loads, solve_membrane, LoadSpec, MembraneMesh, MembraneOptions, MembraneState, Rect, ReducedLoad};
use crate::tensor::Mat3x2;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "memhom", version, about = "Homogenized membrane energies of heterogeneous thin films")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Check the structural hypotheses of the configured law.
    Check,
    /// Estimate W_hom at one point by cell doubling.
    Whom,
    /// Tabulate W_hom on a 2D slice.
    Table,
    /// Solve the membrane problem.
    Membrane,
    /// Compare film minima with the membrane limit.
    Gamma,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config entry by dotted path, e.g. `whom.T_max=8`.
    #[arg(long = "set", value_name = "K=V", global = true)]
    pub sets: Vec<String>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Base seed for multistart initializations.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub grad_tol: f64,
    pub max_iters: usize,
    pub memory: usize,
    pub multistart: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let d = MinimizeOptions::default();
        OptimizerConfig { grad_tol: d.grad_tol, max_iters: d.max_iters, memory: d.memory, multistart: d.multistart }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    pub samples: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig { samples: 1000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WhomConfig {
    pub x_alpha: [f64; 2],
    pub xi_bar: [f64; 6],
    #[serde(rename = "T_max")]
    pub t_max: usize,
    pub rtol: f64,
}

impl Default for WhomConfig {
    fn default() -> Self {
        WhomConfig { x_alpha: [0.5, 0.5], xi_bar: Mat3x2::PLANAR.to_flat(), t_max: 4, rtol: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    #[serde(default = "centre")]
    pub x_alpha: [f64; 2],
    pub slice: SliceSpec,
    #[serde(rename = "T_max", default = "default_table_t")]
    pub t_max: usize,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
}

fn centre() -> [f64; 2] {
    [0.5, 0.5]
}

fn default_table_t() -> usize {
    2
}

fn default_rtol() -> f64 {
    1e-3
}

/// Where the membrane solver gets `W_hom` from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensitySource {
    /// Cell solves through the memo cache.
    #[default]
    Homogenized,
    /// Closed form, available for the homogeneous and sharp laminate quadratic laws.
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MembraneConfig {
    pub omega: Rect,
    pub nx: usize,
    pub ny: usize,
    pub loads: LoadSpec,
    pub quadrature_n: usize,
    pub density: DensitySource,
    #[serde(rename = "T_max")]
    pub t_max: usize,
    pub rtol: f64,
    pub solver: MembraneOptions,
}

impl Default for MembraneConfig {
    fn default() -> Self {
        MembraneConfig {
            omega: Rect::default(),
            nx: 8,
            ny: 8,
            loads: LoadSpec::default(),
            quadrature_n: 4,
            density: DensitySource::default(),
            t_max: 2,
            rtol: 1e-3,
            solver: MembraneOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GammaConfig {
    pub eps: Vec<f64>,
    pub film: FilmMeshSpec,
    pub solver: FilmOptions,
}

impl Default for GammaConfig {
    fn default() -> Self {
        GammaConfig { eps: vec![0.5, 0.25, 0.125], film: FilmMeshSpec::default(), solver: FilmOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub law: LawSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub cell: CellDiscretization,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub whom: WhomConfig,
    #[serde(default)]
    pub table: Option<TableConfig>,
    #[serde(default)]
    pub membrane: MembraneConfig,
    #[serde(default)]
    pub gamma: GammaConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    /// Cell minimization options seeded from the config seed.
    pub fn minimize_options(&self) -> MinimizeOptions {
        let o = &self.optimizer;
        MinimizeOptions {
            grad_tol: o.grad_tol,
            max_iters: o.max_iters,
            memory: o.memory,
            multistart: o.multistart,
            seed: self.seed,
            exec: Exec::Parallel,
        }
    }

    /// Hex SHA-256 of the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut value {
            map.remove("out");
        }
        let text = value.to_string();
        Sha256::digest(text.as_bytes()).iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// Failure classes, mapped to exit codes 2 and 1.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 1,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn numerical(e: Error) -> CliError {
    match e {
        Error::Io(_) => CliError::Config(e.to_string()),
        other => CliError::Numerical(other.to_string()),
    }
}

/// Sets `root.a.b.c = value`, creating intermediate objects.
fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad --set key {path:?}")));
    }
    for (k, part) in parts.iter().enumerate() {
        let obj = match cur {
            Value::Object(map) => map,
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| CliError::Config(format!("{path}: {part:?} is not an array index")))?;
                let len = items.len();
                let slot =
                    items.get_mut(idx).ok_or_else(|| CliError::Config(format!("{path}: index {idx} out of range {len}")))?;
                if k + 1 == parts.len() {
                    *slot = value;
                    return Ok(());
                }
                cur = slot;
                continue;
            }
            other => {
                *other = Value::Object(Default::default());
                match other {
                    Value::Object(map) => map,
                    _ => unreachable!(),
                }
            }
        };
        if k + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Object(Default::default()));
    }
    Ok(())
}

/// Reads the config file, applies `--set` overrides and flag overrides,
/// and validates the result.
pub fn load_config(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut root = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: line {} column {}: {e}", path.display(), e.line(), e.column())))?
        }
        None => Value::Object(Default::default()),
    };
    for set in &args.sets {
        let (key, raw) = set.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects K=V, got {set:?}")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut root, key, value)?;
    }
    let mut config: RunConfig = serde_json::from_value(root).map_err(config_err)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(w) = args.workers {
        config.workers = Some(w);
    }
    if let Some(out) = &args.out {
        config.out = out.clone();
    }
    if config.workers == Some(0) {
        return Err(CliError::Config("workers must be at least 1".into()));
    }
    MaterialLaw::from_spec(&config.law).map_err(config_err)?;
    config.minimize_options().validate().map_err(config_err)?;
    Ok(config)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct Meta<'a> {
    tool_version: &'static str,
    config_hash: String,
    seed: u64,
    workers: Option<usize>,
    command: &'a str,
}

struct Context {
    config: RunConfig,
    hash: String,
}

impl Context {
    fn meta<'a>(&self, command: &'a str) -> Meta<'a> {
        Meta {
            tool_version: TOOL_VERSION,
            config_hash: self.hash.clone(),
            seed: self.config.seed,
            workers: self.config.workers,
            command,
        }
    }

    fn csv_header(&self) -> String {
        format!("# tool_version={}\n# config_hash={}\n# seed={}\n", TOOL_VERSION, self.hash, self.config.seed)
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.config.out).map_err(|e| CliError::Config(format!("{}: {e}", self.config.out.display())))?;
        let path = self.config.out.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(config_err)?;
        text.push('\n');
        self.write(name, &text)
    }

    fn law(&self) -> MaterialLaw {
        MaterialLaw::from_spec(&self.config.law).expect("validated at load")
    }
}

fn cmd_check(ctx: &Context) -> Result<(), CliError> {
    let law = ctx.law();
    let report = check_hypotheses(&law, ctx.config.check.samples, ctx.config.seed).map_err(config_err)?;
    ctx.write_json("check_report.json", &serde_json::json!({ "meta": ctx.meta("check"), "report": report }))?;
    for o in &report.outcomes {
        println!("{}: {} ({} checked, {} skipped)", o.name, if o.passed { "pass" } else { "FAIL" }, o.checked, o.skipped);
    }
    if report.all_passed() {
        Ok(())
    } else {
        Err(CliError::Numerical("hypothesis check failed".into()))
    }
}

fn cmd_whom(ctx: &Context) -> Result<(), CliError> {
    let law = ctx.law();
    let w = &ctx.config.whom;
    if !w.t_max.is_power_of_two() || !(w.rtol > 0.0) {
        return Err(CliError::Config("whom needs T_max a power of two and rtol > 0".into()));
    }
    let xi = Mat3x2::from_flat(w.xi_bar);
    let est = whom_estimate(&law, w.x_alpha, &xi, &ctx.config.cell, w.t_max, w.rtol, &ctx.config.minimize_options())
        .map_err(numerical)?;
    let mut csv = ctx.csv_header();
    csv.push_str("T,value,iterations,grad_norm,converged\n");
    for p in &est.trace {
        let _ = writeln!(csv, "{},{:?},{},{:?},{}", p.t, p.value, p.iterations, p.grad_norm, p.converged);
    }
    ctx.write("whom_trace.csv", &csv)?;
    ctx.write_json(
        "whom.json",
        &serde_json::json!({
            "meta": ctx.meta("whom"),
            "x_alpha": w.x_alpha,
            "xi_bar": w.xi_bar,
            "estimate": est,
        }),
    )?;
    println!("W_hom = {}", est.value);
    if est.converged_in_t {
        Ok(())
    } else {
        Err(CliError::Numerical("T-doubling did not reach rtol".into()))
    }
}

fn cache_for(ctx: &Context, law: &MaterialLaw, t_max: usize, rtol: f64) -> Result<WHomCache, CliError> {
    if !t_max.is_power_of_two() || !(rtol > 0.0) {
        return Err(CliError::Config("T_max must be a power of two and rtol positive".into()));
    }
    ctx.config.cell.grid(t_max).map_err(numerical)?;
    let defaults = CacheDefaults { disc: ctx.config.cell, t_max, rtol, opts: ctx.config.minimize_options() };
    Ok(WHomCache::new(law, defaults))
}

fn cmd_table(ctx: &Context) -> Result<(), CliError> {
    let law = ctx.law();
    let t = ctx.config.table.as_ref().ok_or_else(|| CliError::Config("table block missing".into()))?;
    let cache = cache_for(ctx, &law, t.t_max, t.rtol)?;
    let mut table = tabulate_slice(&law, &cache, t.x_alpha, &t.slice).map_err(|e| match e {
        Error::InvalidInput(m) => CliError::Config(m),
        other => numerical(other),
    })?;
    table.metadata.config_hash = Some(ctx.hash.clone());
    let path = ctx.config.out.join("table.json");
    std::fs::create_dir_all(&ctx.config.out).map_err(config_err)?;
    save_table(&table, &path).map_err(numerical)?;
    println!("{} values, {} failures", table.values.iter().flatten().filter(|v| v.is_some()).count(), table.failures.len());
    if table.failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("{} table nodes failed", table.failures.len())))
    }
}

/// The closed-form effective density of a law, where one is known.
pub fn closed_form_density(law: &MaterialLaw) -> Option<DiagonalQuadratic> {
    match law.family() {
        LawFamily::HomogeneousQuadratic => Some(DiagonalQuadratic::norm_squared()),
        LawFamily::LaminateQuadratic { a1, a2, theta, mollify } if *mollify == 0.0 => {
            Some(DiagonalQuadratic::laminate(*a1, *a2, *theta))
        }
        _ => None,
    }
}

fn solve_configured_membrane(ctx: &Context, law: &MaterialLaw, loads: &ReducedLoad) -> Result<MembraneState, CliError> {
    let m = &ctx.config.membrane;
    let mesh = MembraneMesh::new(m.omega, m.nx, m.ny).map_err(config_err)?;
    let opts = MembraneOptions { exec: Exec::Parallel, ..m.solver };
    let run = |d: &dyn EffectiveDensity| solve_membrane(d, &mesh, loads, &opts).map_err(numerical);
    match m.density {
        DensitySource::ClosedForm => {
            let d = closed_form_density(law)
                .ok_or_else(|| CliError::Config("no closed-form effective density for this law".into()))?;
            run(&d)
        }
        DensitySource::Homogenized => {
            let cache = cache_for(ctx, law, m.t_max, m.rtol)?;
            let d = HomogenizedDensity { law, cache: &cache };
            let state = run(&d)?;
            log::info!("membrane used {} cell estimates", cache.solves());
            Ok(state)
        }
    }
}

fn membrane_loads(ctx: &Context, body_scale: f64) -> Result<ReducedLoad, CliError> {
    let m = &ctx.config.membrane;
    Ok(reduce_loads(&m.loads, m.quadrature_n).map_err(config_err)?.with_body_scale(body_scale))
}

fn cmd_membrane(ctx: &Context) -> Result<(), CliError> {
    let law = ctx.law();
    let loads = membrane_loads(ctx, 1.0)?;
    let state = solve_configured_membrane(ctx, &law, &loads)?;
    let mut csv = ctx.csv_header();
    csv.push_str(&state.v3_csv());
    ctx.write("membrane_v3.csv", &csv)?;
    ctx.write_json("membrane.json", &serde_json::json!({ "meta": ctx.meta("membrane"), "state": state }))?;
    println!("membrane total = {} (energy {}, load work {})", state.total, state.energy, state.load_work);
    if state.converged {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("membrane solver stopped with {:?}", state.status)))
    }
}

fn cmd_gamma(ctx: &Context) -> Result<(), CliError> {
    let law = ctx.law();
    let g = &ctx.config.gamma;
    // the film's body-load work converges to twice the reduced body load
    let loads = membrane_loads(ctx, 2.0)?;
    let membrane = solve_configured_membrane(ctx, &law, &loads)?;
    let opts = FilmOptions { exec: Exec::Parallel, ..g.solver };
    let report = gamma_experiment(&law, &g.eps, &g.film, &ctx.config.membrane.loads, &membrane, &opts).map_err(|e| match e {
        Error::InvalidInput(m) => CliError::Config(m),
        other => numerical(other),
    })?;
    let mut csv = ctx.csv_header();
    let _ = writeln!(csv, "# membrane_total={}", report.membrane_total);
    csv.push_str(&report.csv_rows());
    ctx.write("gamma.csv", &csv)?;
    ctx.write_json(
        "gamma.json",
        &serde_json::json!({
            "meta": ctx.meta("gamma"),
            "membrane": { "total": membrane.total, "energy": membrane.energy, "load_work": membrane.load_work, "converged": membrane.converged },
            "report": report,
        }),
    )?;
    for r in &report.rows {
        println!("eps={} total={} gap={}", r.eps, r.min_total, r.gap_to_membrane);
    }
    let failed = report.rows.iter().filter(|r| r.failure.is_some() || !r.converged).count();
    if failed == 0 && membrane.converged {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("{failed} film runs failed or did not converge")))
    }
}

fn dispatch(command: Command, ctx: &Context) -> Result<(), CliError> {
    match command {
        Command::Check => cmd_check(ctx),
        Command::Whom => cmd_whom(ctx),
        Command::Table => cmd_table(ctx),
        Command::Membrane => cmd_membrane(ctx),
        Command::Gamma => cmd_gamma(ctx),
    }
}

/// Runs one subcommand and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let result = load_config(&cli.common).and_then(|config| {
        let ctx = Context { hash: config.hash(), config };
        with_workers(ctx.config.workers, || dispatch(cli.command, &ctx))
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("memhom: {e}");
            e.exit_code()
        }
    }
}

#[cfg(feature = "parallel")]
fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T, CliError> + Send) -> Result<T, CliError> {
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(config_err)?.install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_workers<T: Send>(_workers: Option<usize>, f: impl FnOnce() -> Result<T, CliError> + Send) -> Result<T, CliError> {
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(sets: &[&str]) -> CommonArgs {
        CommonArgs { sets: sets.iter().map(|s| s.to_string()).collect(), ..Default::default() }
    }

    #[test]
    fn set_overrides_build_config() {
        let c =
            load_config(&args(&["law.family=homogeneous_quadratic", "whom.T_max=8", "whom.xi_bar=[2.5,0,0,1,0,0]", "seed=7"]))
                .unwrap();
        assert_eq!(c.whom.t_max, 8);
        assert_eq!(c.whom.xi_bar[0], 2.5);
        assert_eq!(c.seed, 7);
        assert_eq!(c.out, PathBuf::from("out"));
    }

    #[test]
    fn unknown_keys_and_bad_laws_are_config_errors() {
        for bad in [
            vec!["law.family=homogeneous_quadratic", "whom.bogus=1"],
            vec!["law.family=homogeneous_quadratic", "colour=1"],
            vec!["law.family=laminate_quadratic", "law.a1=-1", "law.a2=1", "law.theta=0.5"],
            vec!["whom.T_max=2"],
            vec!["law.family=homogeneous_quadratic", "optimizer.multistart=0"],
        ] {
            let e = load_config(&args(&bad)).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{bad:?}: {e}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = load_config(&args(&["law.family=homogeneous_quadratic"])).unwrap();
        let b = load_config(&args(&["law.family=homogeneous_quadratic", "seed=1"])).unwrap();
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let moved = RunConfig { out: PathBuf::from("elsewhere"), ..a.clone() };
        assert_eq!(a.hash(), moved.hash());
    }

    #[test]
    fn flags_override_config() {
        let mut a = args(&["law.family=homogeneous_quadratic", "seed=3"]);
        a.seed = Some(9);
        a.workers = Some(2);
        let c = load_config(&a).unwrap();
        assert_eq!((c.seed, c.workers), (9, Some(2)));
        a.workers = Some(0);
        assert_eq!(load_config(&a).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn closed_forms() {
        assert!(closed_form_density(&MaterialLaw::homogeneous_quadratic()).is_some());
        assert!(closed_form_density(&MaterialLaw::laminate(1.0, 4.0, 0.5).unwrap()).is_some());
        assert!(closed_form_density(&MaterialLaw::double_well(1.0).unwrap()).is_none());
    }
}
