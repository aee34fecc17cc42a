use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use otcert::cost::{builtin_cost, CostModel};
use otcert::io::{
    read_density_csv, read_measure_csv, read_pairs_csv, read_plan, write_duals, write_json,
    write_measure_csv, write_pairs_csv, write_plan, write_rows,
};
use otcert::jacobian::{default_neighbors, estimate_map, jacobian_residual, Density, DensityModel};
use otcert::measure::{support, SupportSample, DEFAULT_MASS_FLOOR};
use otcert::monotonicity::{check_cyclical, check_pairwise_with, Coverage, MonotonicityReport};
use otcert::nondegeneracy::{
    classify_point, grid_points, twist_scan, Direction, DEGENERACY_THRESHOLD,
};
use otcert::rectifier::{
    rectify, CertificateVerdict, RadiusPolicy, RectifyOptions, RectifyOutcome,
};
use otcert::reproduce::{
    build_example31_plans, build_example32_surface, reproduce_example31, reproduce_example32,
};
use otcert::solver::solve_exact;
use otcert::Error;
use serde_json::Value;

const EXIT_VERIFICATION: u8 = 1;
const EXIT_INPUT: u8 = 2;

/// Exact discrete optimal transport with structural certificates.
#[derive(Parser, Debug)]
#[command(name = "otcert", version, args_override_self = true)]
struct Cli {
    /// JSON object of flag values; explicit flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Seed for every sampling step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the Kantorovich problem between two measures.
    Solve(SolveArgs),
    /// Check b-monotonicity of a plan support or a pair set.
    CheckMonotone(MonotoneArgs),
    /// Certify the support as a Lipschitz graph over the diagonal.
    Rectify(RectifyArgs),
    /// Classify mixed Hessians on a grid and scan for twist failures.
    AnalyzeCost(AnalyzeArgs),
    /// Check the change-of-variables equation of a transport map.
    Jacobian(JacobianArgs),
    /// Rerun the cylinder (3.1) or polar (3.2) example.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    cost: String,
    /// Plan JSON.
    #[arg(long)]
    out: PathBuf,
    /// Dual potentials JSON.
    #[arg(long)]
    dual: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[group(id = "input", required = true, multiple = false, args = ["plan", "pairs"])]
struct SupportInput {
    #[arg(long)]
    plan: Option<PathBuf>,
    /// CSV with columns x1..xn,y1..yn and an optional mass column.
    #[arg(long)]
    pairs: Option<PathBuf>,
}

impl SupportInput {
    fn load(&self) -> anyhow::Result<SupportSample<f64>> {
        match (&self.plan, &self.pairs) {
            (Some(plan), _) => Ok(support(&read_plan::<f64>(plan)?, DEFAULT_MASS_FLOOR)?),
            (_, Some(pairs)) => Ok(read_pairs_csv::<f64>(pairs)?),
            _ => unreachable!("clap enforces one input"),
        }
    }
}

#[derive(Args, Debug)]
struct MonotoneArgs {
    #[command(flatten)]
    input: SupportInput,
    #[arg(long)]
    cost: String,
    /// Longest reassignment cycle; 2 is the pairwise check.
    #[arg(long, default_value_t = 2)]
    cycles: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Report JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RectifyArgs {
    #[command(flatten)]
    input: SupportInput,
    #[arg(long)]
    cost: String,
    /// Base pair as x1,..,xn,y1,..,yn.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    base: Option<Vec<f64>>,
    /// `halving`, `halving:INITIAL:FLOOR` (fractions of the box diameter) or a fixed radius.
    #[arg(long, default_value = "halving")]
    radius: String,
    #[arg(long, default_value_t = 0.5)]
    eps_target: f64,
    /// Points used to estimate epsilon.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Inflate the epsilon estimate before bounding.
    #[arg(long)]
    conservative: bool,
    /// Certificate JSON.
    #[arg(long)]
    out: PathBuf,
    /// u,v,ratio CSV; defaults to the certificate path with a `.uv.csv` suffix.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    cost: String,
    /// Dimension for costs defined in any dimension.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Points per axis, `N` or `N1xN2x...`, for both grids.
    #[arg(long, default_value = "8")]
    grid: String,
    #[arg(long, default_value = "x-to-y")]
    direction: String,
    /// Fixed point of the twist scan; defaults to the centre of its box.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    fixed: Option<Vec<f64>>,
    /// Scanned box as lo:hi per axis, comma separated; defaults to the working box.
    #[arg(long, value_name = "LO:HI,...", allow_hyphen_values = true)]
    scan_box: Option<String>,
    /// Points per axis of the twist scan; defaults to --grid.
    #[arg(long)]
    scan_grid: Option<String>,
    #[arg(long, default_value_t = 1e-8)]
    collision_tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    separation: f64,
    /// Twist report JSON.
    #[arg(long)]
    out: PathBuf,
    /// Classification CSV; defaults to the report path with a `.hessian.csv` suffix.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct JacobianArgs {
    #[arg(long)]
    plan: PathBuf,
    /// Source density: uniform:lo:hi, gaussian:mean:std, or a CSV file.
    #[arg(long, allow_hyphen_values = true)]
    f_plus: String,
    /// Target density, same forms as --f-plus.
    #[arg(long, allow_hyphen_values = true)]
    f_minus: String,
    /// Neighbours in each affine fit; defaults to 2n + 2.
    #[arg(long)]
    neighbors: Option<usize>,
    /// Split-mass threshold; defaults to four mean nearest-neighbour spacings.
    #[arg(long)]
    grid_scale: Option<f64>,
    /// Fail when the largest residual exceeds this.
    #[arg(long)]
    max_residual: Option<f64>,
    /// Report JSON.
    #[arg(long)]
    out: PathBuf,
    /// Per-sample CSV; defaults to the report path with a `.samples.csv` suffix.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    #[arg(long, value_parser = ["3.1", "3.2"])]
    example: String,
    /// Grid size m for 3.1 (even), number of surface samples for 3.2.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

/// A failed check, as opposed to bad input.
#[derive(Debug)]
struct VerificationFailure(String);

impl std::fmt::Display for VerificationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for VerificationFailure {}

fn fail(msg: impl Into<String>) -> anyhow::Error {
    VerificationFailure(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<VerificationFailure>().is_some() {
        return EXIT_VERIFICATION;
    }
    match err.downcast_ref::<Error>() {
        Some(
            Error::SolverFailure(_)
            | Error::CertificationFailure { .. }
            | Error::Consistency(_)
            | Error::NoCertificate(_),
        ) => EXIT_VERIFICATION,
        _ => EXIT_INPUT,
    }
}

fn main() -> ExitCode {
    let argv: Vec<OsString> = std::env::args_os().collect();
    let argv = match with_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_INPUT);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

const SUBCOMMANDS: [&str; 6] = [
    "solve",
    "check-monotone",
    "rectify",
    "analyze-cost",
    "jacobian",
    "reproduce",
];

/// Splices flags from `--config FILE` in right after the subcommand and
/// moves the user's own flags behind them, so the user's flags win.
fn with_config(argv: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let strs: Vec<Option<&str>> = argv.iter().map(|a| a.to_str()).collect();
    let mut config = None;
    for (k, a) in strs.iter().enumerate() {
        match a {
            Some("--config") => config = strs.get(k + 1).copied().flatten(),
            Some(s) if s.starts_with("--config=") => config = Some(&s["--config=".len()..]),
            _ => {}
        }
    }
    let Some(config) = config else {
        return Ok(argv);
    };
    let Some(sub) = strs
        .iter()
        .position(|a| a.is_some_and(|s| SUBCOMMANDS.contains(&s)))
    else {
        return Ok(argv);
    };
    let text =
        std::fs::read_to_string(config).with_context(|| format!("reading config {config}"))?;
    let value: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing config {config}"))?;
    let Value::Object(map) = value else {
        bail!("config {config} must hold a JSON object");
    };
    let mut spliced = Vec::new();
    for (key, v) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        match v {
            Value::Bool(true) => spliced.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                let parts: Vec<String> = items
                    .iter()
                    .map(scalar_text)
                    .collect::<anyhow::Result<_>>()?;
                spliced.push(format!("{flag}={}", parts.join(",")));
            }
            other => spliced.push(format!("{flag}={}", scalar_text(&other)?)),
        }
    }
    let mut out = vec![argv[0].clone(), argv[sub].clone()];
    out.extend(spliced.into_iter().map(OsString::from));
    out.extend(argv[1..sub].iter().cloned());
    out.extend(argv[sub + 1..].iter().cloned());
    Ok(out)
}

fn scalar_text(v: &Value) -> anyhow::Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        other => bail!("unsupported config value {other}"),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!(Error::InvalidInput("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match cli.command {
        Command::Solve(a) => solve(a),
        Command::CheckMonotone(a) => check_monotone(a, cli.seed),
        Command::Rectify(a) => rectify_cmd(a, cli.seed),
        Command::AnalyzeCost(a) => analyze_cost(a),
        Command::Jacobian(a) => jacobian(a),
        Command::Reproduce(a) => reproduce(a, cli.seed),
    }
}

fn cost_for(name: &str, dim: usize) -> anyhow::Result<CostModel<f64>> {
    Ok(builtin_cost::<f64>(name, dim)?)
}

/// `path` with `suffix` replacing its extension.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

/// Path of `target` relative to the directory of `from` when it lies below it.
fn relative_to(from: &Path, target: &Path) -> String {
    let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    let target = abs(target);
    let dir = abs(from)
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    match target.strip_prefix(&dir) {
        Ok(rel) => rel.to_string_lossy().into_owned(),
        Err(_) => target.to_string_lossy().into_owned(),
    }
}

fn solve(a: SolveArgs) -> anyhow::Result<()> {
    let source = read_measure_csv::<f64>(&a.source)?;
    let target = read_measure_csv::<f64>(&a.target)?;
    let model = cost_for(&a.cost, source.dim())?;
    let (source, target) = (std::sync::Arc::new(source), std::sync::Arc::new(target));
    let sol = solve_exact(&source, &target, &model)?;
    write_plan(
        &a.out,
        &sol.plan,
        &relative_to(&a.out, &a.source),
        &relative_to(&a.out, &a.target),
    )?;
    if let Some(dual) = &a.dual {
        write_duals(dual, &sol.duals)?;
    }
    println!(
        "cost {}: {} x {} atoms",
        model.label(),
        source.len(),
        target.len()
    );
    println!("optimal value {:.12e}", sol.objective);
    println!("plan entries {} (pivots {})", sol.plan.len(), sol.pivots);
    println!("wrote {}", a.out.display());
    Ok(())
}

fn print_monotonicity(report: &MonotonicityReport<f64>, support: &SupportSample<f64>) {
    let sampled = if report.sampled { " (sampled)" } else { "" };
    println!("checked {} configurations{sampled}", report.checked);
    println!(
        "violations {}, max defect {:.6e}",
        report.violation_count, report.max_defect
    );
    for v in report.violations.iter().take(10) {
        let pairs: Vec<String> = v
            .indices
            .iter()
            .map(|&k| format!("{k} {:?}->{:?}", support.pairs[k].0, support.pairs[k].1))
            .collect();
        println!("  defect {:.6e}: {}", v.defect, pairs.join(", "));
    }
    if report.violations.len() > 10 {
        println!("  ... {} more", report.violation_count - 10);
    }
}

fn check_monotone(a: MonotoneArgs, seed: u64) -> anyhow::Result<()> {
    let support = a.input.load()?;
    let model = cost_for(&a.cost, support.dim())?;
    let report = if a.cycles <= 2 {
        if a.cycles < 2 {
            bail!(Error::InvalidInput("--cycles must be at least 2".into()));
        }
        check_pairwise_with(
            &support,
            &model,
            a.tol,
            Coverage::Auto {
                samples: 1_000_000,
                seed,
            },
        )?
    } else {
        check_cyclical(&support, &model, a.cycles, a.tol)?
    };
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    print_monotonicity(&report, &support);
    if !report.passed() {
        return Err(fail(format!(
            "support is not {}-cyclically monotone",
            a.cycles
        )));
    }
    println!("monotone: pass");
    Ok(())
}

fn parse_radius(spec: &str) -> anyhow::Result<RadiusPolicy<f64>> {
    let bad = || anyhow!(Error::InvalidInput(format!("bad radius policy `{spec}`")));
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        ["halving"] => Ok(RadiusPolicy::default()),
        ["halving", initial, floor] => Ok(RadiusPolicy::Halving {
            initial: initial.parse().map_err(|_| bad())?,
            floor: floor.parse().map_err(|_| bad())?,
        }),
        [r] => {
            let r: f64 = r.parse().map_err(|_| bad())?;
            if !(r > 0.0) {
                return Err(bad());
            }
            Ok(RadiusPolicy::Fixed(r))
        }
        _ => Err(bad()),
    }
}

fn rectify_cmd(a: RectifyArgs, seed: u64) -> anyhow::Result<()> {
    let support = a.input.load()?;
    let n = support.dim();
    let model = cost_for(&a.cost, n)?;
    let base = match a.base {
        Some(b) if b.len() == 2 * n => Some((b[..n].to_vec(), b[n..].to_vec())),
        Some(b) => bail!(Error::InvalidInput(format!(
            "--base needs {} numbers, got {}",
            2 * n,
            b.len()
        ))),
        None => None,
    };
    let options = RectifyOptions {
        base,
        radius: parse_radius(&a.radius)?,
        eps_target: a.eps_target,
        samples: a.samples,
        seed,
        conservative: a.conservative,
        ..RectifyOptions::default()
    };
    let outcome = rectify(&support, &model, &options)?;
    write_json(&a.out, &outcome)?;
    let cert = match outcome {
        RectifyOutcome::NotMonotone(report) => {
            print_monotonicity(&report, &support);
            return Err(fail("support is not monotone; no certificate attempted"));
        }
        RectifyOutcome::Certificate(c) => c,
    };
    let csv = a.csv.unwrap_or_else(|| sibling(&a.out, ".uv.csv"));
    let header: Vec<String> = (1..=n)
        .map(|k| format!("u{k}"))
        .chain((1..=n).map(|k| format!("v{k}")))
        .chain(["ratio".to_string()])
        .collect();
    let rows: Vec<Vec<f64>> = cert
        .points
        .iter()
        .map(|p| p.u.iter().chain(&p.v).copied().chain([p.ratio]).collect())
        .collect();
    write_rows(&csv, &header, &rows)?;
    if let Some((x, y)) = &cert.base_point {
        println!("base point x={x:?} y={y:?}");
    }
    if let Some(r) = cert.neighborhood_radius {
        println!("radius {r:.6e}");
    }
    println!(
        "epsilon {:.6e}, lipschitz bound {:.6e}",
        cert.epsilon, cert.lipschitz_bound
    );
    println!(
        "pairs checked {}, max ratio {:.6e}",
        cert.pairs_checked, cert.max_ratio
    );
    println!("wrote {} and {}", a.out.display(), csv.display());
    match cert.verdict {
        CertificateVerdict::Certified => {
            println!("verdict: certified (empirical)");
            Ok(())
        }
        v => Err(fail(format!(
            "verdict {v:?}: {}",
            cert.reason.as_deref().unwrap_or("no reason recorded")
        ))),
    }
}

fn parse_counts(spec: &str, dim: usize) -> anyhow::Result<Vec<usize>> {
    let bad = || anyhow!(Error::InvalidInput(format!("bad grid spec `{spec}`")));
    let parts: Vec<usize> = spec
        .split('x')
        .map(|s| s.trim().parse::<usize>().map_err(|_| bad()))
        .collect::<anyhow::Result<_>>()?;
    let counts = match parts.len() {
        1 => vec![parts[0]; dim],
        l if l == dim => parts,
        _ => return Err(bad()),
    };
    if counts.contains(&0) {
        return Err(bad());
    }
    Ok(counts)
}

fn parse_box(spec: &str, dim: usize) -> anyhow::Result<(Vec<f64>, Vec<f64>)> {
    let bad = || anyhow!(Error::InvalidInput(format!("bad box `{spec}`")));
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for axis in spec.split(',') {
        let (lo, hi) = axis.split_once(':').ok_or_else(bad)?;
        let (lo, hi): (f64, f64) = (
            lo.trim().parse().map_err(|_| bad())?,
            hi.trim().parse().map_err(|_| bad())?,
        );
        if !(lo < hi) {
            return Err(bad());
        }
        lower.push(lo);
        upper.push(hi);
    }
    if lower.len() != dim {
        return Err(bad());
    }
    Ok((lower, upper))
}

fn analyze_cost(a: AnalyzeArgs) -> anyhow::Result<()> {
    let model = cost_for(&a.cost, a.dim)?;
    let n = model.dim();
    let direction: Direction = a.direction.parse()?;
    let counts = parse_counts(&a.grid, n)?;
    let (dx, dy) = (model.domain_x(), model.domain_y());
    let xs = grid_points(&dx.lower, &dx.upper, &counts)?;
    let ys = grid_points(&dy.lower, &dy.upper, &counts)?;

    let mut rows = Vec::with_capacity(xs.len() * ys.len());
    let mut degenerate = 0usize;
    for x in &xs {
        for y in &ys {
            let c = classify_point(&model, x, y, DEGENERACY_THRESHOLD)?;
            degenerate += c.degenerate as usize;
            rows.push(
                x.iter()
                    .chain(y)
                    .copied()
                    .chain([
                        c.determinant,
                        c.sigma_min,
                        c.sigma_max,
                        c.degenerate as u8 as f64,
                    ])
                    .collect(),
            );
        }
    }
    let header: Vec<String> = (1..=n)
        .map(|k| format!("x{k}"))
        .chain((1..=n).map(|k| format!("y{k}")))
        .chain(["determinant", "sigma_min", "sigma_max", "degenerate"].map(String::from))
        .collect();
    let csv = a
        .csv
        .clone()
        .unwrap_or_else(|| sibling(&a.out, ".hessian.csv"));
    write_rows(&csv, &header, &rows)?;

    let (fixed_box, scan_box) = match direction {
        Direction::XToY => (dx, dy),
        Direction::YToX => (dy, dx),
    };
    let fixed = match a.fixed {
        Some(f) if f.len() == n => f,
        Some(f) => bail!(Error::InvalidInput(format!(
            "--fixed needs {n} numbers, got {}",
            f.len()
        ))),
        None => fixed_box.center(),
    };
    let (lo, hi) = match &a.scan_box {
        Some(spec) => parse_box(spec, n)?,
        None => (scan_box.lower.clone(), scan_box.upper.clone()),
    };
    let scan_counts = match &a.scan_grid {
        Some(spec) => parse_counts(spec, n)?,
        None => counts,
    };
    let samples = grid_points(&lo, &hi, &scan_counts)?;
    let twist = twist_scan(
        &model,
        direction,
        &fixed,
        &samples,
        a.collision_tol,
        a.separation,
    )?;
    write_json(&a.out, &twist)?;

    println!("cost {} in dimension {n}", model.label());
    println!(
        "hessian: {} of {} grid pairs degenerate",
        degenerate,
        rows.len()
    );
    println!(
        "twist {direction} at {:?}: {} collisions among {} samples ({} on sample)",
        fixed,
        twist.collisions.len(),
        twist.samples,
        if twist.injective_on_sample {
            "injective"
        } else {
            "not injective"
        }
    );
    println!("wrote {} and {}", a.out.display(), csv.display());
    Ok(())
}

fn load_density(spec: &str, dim: usize) -> anyhow::Result<DensityModel<f64>> {
    if Path::new(spec).is_file() {
        return Ok(DensityModel::Grid(read_density_csv::<f64>(spec)?));
    }
    Ok(DensityModel::parse(spec, dim)?)
}

/// Mean distance from each point to its nearest neighbour.
fn mean_spacing(points: &[Vec<f64>]) -> f64 {
    if points.len() < 2 {
        return 1.0;
    }
    let d = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt()
    };
    let total: f64 = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| d(p, q))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / points.len() as f64
}

fn jacobian(a: JacobianArgs) -> anyhow::Result<()> {
    let plan = read_plan::<f64>(&a.plan)?;
    let n = plan.source().dim();
    let f_plus = load_density(&a.f_plus, n)?;
    let f_minus = load_density(&a.f_minus, n)?;
    let k = a.neighbors.unwrap_or_else(|| default_neighbors(n));
    let grid_scale = a
        .grid_scale
        .unwrap_or_else(|| 4.0 * mean_spacing(plan.source().points()));
    let map = estimate_map(&plan, grid_scale);
    let report = jacobian_residual(
        &map,
        &f_plus as &dyn Density<f64>,
        &f_minus as &dyn Density<f64>,
        k,
    )?;
    write_json(&a.out, &report)?;

    let header: Vec<String> = (1..=n)
        .map(|i| format!("x{i}"))
        .chain((1..=n).map(|i| format!("tx{i}")))
        .chain(["mass", "split_mass", "det_estimate", "residual"].map(String::from))
        .collect();
    let rows: Vec<Vec<f64>> = report
        .samples
        .iter()
        .map(|s| {
            s.x.iter()
                .chain(&s.tx)
                .copied()
                .chain([
                    s.mass,
                    s.split_mass as u8 as f64,
                    s.det_estimate.unwrap_or(f64::NAN),
                    s.residual.unwrap_or(f64::NAN),
                ])
                .collect()
        })
        .collect();
    let csv = a.csv.unwrap_or_else(|| sibling(&a.out, ".samples.csv"));
    write_rows(&csv, &header, &rows)?;

    println!(
        "map points {}, split-mass flagged {}, skipped {}",
        report.samples.len(),
        report.flagged,
        report.skipped
    );
    println!("grid scale {grid_scale:.6e}, neighbours {k}");
    println!(
        "residual: mean {:.6e}, max {:.6e} over {} samples",
        report.mean_residual, report.max_residual, report.evaluated
    );
    println!("wrote {} and {}", a.out.display(), csv.display());
    if let Some(limit) = a.max_residual {
        if report.max_residual > limit {
            return Err(fail(format!(
                "max residual {:.6e} exceeds {limit:e}",
                report.max_residual
            )));
        }
    }
    Ok(())
}

fn reproduce(a: ReproduceArgs, seed: u64) -> anyhow::Result<()> {
    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))?;
    let dir = &a.out_dir;
    let passed = if a.example == "3.1" {
        let m = a.grid.unwrap_or(16);
        let plans = build_example31_plans::<f64>(m)?;
        write_measure_csv(dir.join("source.csv"), plans.gamma.source())?;
        write_measure_csv(dir.join("target.csv"), plans.gamma.target())?;
        write_plan(
            dir.join("gamma.json"),
            &plans.gamma,
            "source.csv",
            "target.csv",
        )?;
        write_plan(
            dir.join("gamma_bar.json"),
            &plans.gamma_bar,
            "source.csv",
            "target.csv",
        )?;
        let options = RectifyOptions {
            seed,
            ..RectifyOptions::default()
        };
        let report = reproduce_example31::<f64>(m, &options)?;
        write_json(dir.join("certificate.json"), &report.certificate)?;
        write_json(dir.join("summary.json"), &report)?;
        println!("example 3.1 on a {m}x{m} grid");
        println!(
            "gamma {} entries, gamma_bar {} entries, plans differ: {}",
            report.gamma_entries, report.gamma_bar_entries, report.plans_differ
        );
        println!("marginal gap {:.3e} (equal marginals)", report.marginal_gap);
        println!(
            "costs: gamma {:.3e}, gamma_bar {:.3e}, mixture {:.3e}, solver {:.3e} (equal costs)",
            report.cost_gamma, report.cost_gamma_bar, report.cost_mixture, report.solver_cost
        );
        println!(
            "lower bound c >= 0: worst residual {:.3e} on support, min {:.3e}",
            report.lower_bound_gamma.max_residual, report.lower_bound_gamma.min_residual
        );
        println!(
            "monotone: {} (max defect {:.3e})",
            report.monotone, report.max_monotonicity_defect
        );
        println!(
            "certificate: {:?}, epsilon {:.3e}, max ratio {:.3e} <= {:.3e}",
            report.certificate.verdict,
            report.certificate.epsilon,
            report.certificate.max_ratio,
            report.certificate.lipschitz_bound
        );
        println!("twist x-to-y collisions: {}", report.twist_collisions);
        report.passed
    } else {
        let samples = a.grid.unwrap_or(200);
        let surface = build_example32_surface::<f64>(samples)?;
        write_pairs_csv(dir.join("surface.csv"), &surface)?;
        let report = reproduce_example32::<f64>(samples)?;
        write_json(dir.join("summary.json"), &report)?;
        println!("example 3.2 with {} pairs", report.pairs);
        println!("max |c| on the surface {:.3e}", report.max_abs_cost);
        println!(
            "monotone: {} (max defect {:.3e})",
            report.monotone, report.max_monotonicity_defect
        );
        println!(
            "pairs sharing an x with another pair: {}",
            report.shared_x_pairs
        );
        println!(
            "determinant error {:.3e}, degenerate points {}",
            report.max_determinant_error, report.degenerate_points
        );
        println!("twist y-to-x collisions: {}", report.twist_collisions);
        report.passed
    };
    println!("wrote {}", dir.join("summary.json").display());
    if !passed {
        return Err(fail(format!(
            "example {} checks failed; see summary.json",
            a.example
        )));
    }
    println!("all checks passed");
    Ok(())
}
