//! Pipeline driver behind the `lwspiral` binary.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use lambda_omega::finite_q::{self, FiniteQOptions, InnerBc, RPolicy, SweepRow};
use lambda_omega::fit;
use lambda_omega::grid::{build_grid, Stretch};
use lambda_omega::model::{validate_hypotheses, ModelFunctions, ModelSpec};
use lambda_omega::series_engine::{run_series, SeriesOptions, SeriesSolution};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const EXIT_OK: i32 = 0;
pub const EXIT_HYPOTHESIS: i32 = 2;
pub const EXIT_THEOREM: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;
pub const EXIT_TOO_FEW_POINTS: i32 = 5;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_CANT_CREATE: i32 = 73;

const HYPOTHESIS_SAMPLES: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Accepted for completeness; every run is deterministic.
    #[serde(default = "yes")]
    pub deterministic: bool,
    pub model: ModelSpec,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub series: SeriesConfig,
    #[serde(default)]
    pub finiteq: FiniteQConfig,
    #[serde(default)]
    pub fit: FitConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("lwspiral-out")
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub eps: f64,
    #[serde(rename = "R")]
    pub r_max: f64,
    #[serde(rename = "N")]
    pub n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            r_max: 4000.0,
            n: 22_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeriesConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub omega_tol: f64,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        Self { k: 3, omega_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiniteQConfig {
    pub q_list: Vec<f64>,
    #[serde(rename = "R_policy")]
    pub r_policy: RPolicy,
    pub bc_tol: f64,
    pub inner_bc: InnerBc,
}

impl Default for FiniteQConfig {
    fn default() -> Self {
        Self {
            q_list: vec![0.5, 0.45, 0.4, 0.35, 0.3, 0.25, 0.2],
            r_policy: RPolicy::default(),
            bc_tol: 1e-8,
            inner_bc: InnerBc::Stub,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Weight points by the inverse squared uncertainty of `log(q v∞)`.
    pub weighted: bool,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Ginzburg-Landau with `n = 1` and default blocks.
    pub fn ginzburg_landau() -> Self {
        Self {
            output_dir: default_output_dir(),
            deterministic: true,
            model: ModelSpec {
                name: "ginzburg-landau".into(),
                lambda_poly: vec![1.0, 0.0, -1.0],
                omega_poly: vec![0.0, 0.0, -1.0],
                n: 1,
            },
            grid: GridConfig::default(),
            series: SeriesConfig::default(),
            finiteq: FiniteQConfig::default(),
            fit: FitConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError(m));
        if !self.deterministic {
            return bad("deterministic = false is not supported".into());
        }
        if self.model.lambda_poly.is_empty() || self.model.omega_poly.is_empty() {
            return bad("model polynomials need at least one coefficient".into());
        }
        if self.model.lambda_poly.iter().chain(&self.model.omega_poly).any(|c| !c.is_finite()) {
            return bad("model coefficients must be finite".into());
        }
        let g = &self.grid;
        if !(g.eps > 0.0 && g.eps < 1.0) {
            return bad(format!("grid.eps must lie in (0, 1), got {}", g.eps));
        }
        if !(g.r_max >= 1.0 && g.r_max.is_finite()) {
            return bad(format!("grid.R must be at least 1, got {}", g.r_max));
        }
        if g.n < 200 {
            return bad(format!("grid.N must be at least 200, got {}", g.n));
        }
        if self.series.k > 12 {
            return bad(format!("series.K must be at most 12, got {}", self.series.k));
        }
        if !(self.series.omega_tol > 0.0) {
            return bad("series.omega_tol must be positive".into());
        }
        let f = &self.finiteq;
        if let Some(q) = f.q_list.iter().find(|q| !(**q > 0.0 && **q <= 0.6)) {
            return bad(format!("finiteq.q_list entries must lie in (0, 0.6], got {q}"));
        }
        if !(f.bc_tol > 0.0) {
            return bad("finiteq.bc_tol must be positive".into());
        }
        match f.r_policy {
            RPolicy::Fixed { r } if !(r >= 1.0) => return bad(format!("R_policy.r must be at least 1, got {r}")),
            RPolicy::Adaptive { kappa, r_cap } if !(kappa > 0.0 && r_cap >= 100.0) => {
                return bad("R_policy needs kappa > 0 and r_cap >= 100".into())
            }
            _ => {}
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML form, excluding `output_dir`.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let text = toml::to_string(&canonical).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "lwspiral", version, about = "Spiral waves of lambda-omega systems: series, finite-q solves and the v_inf fit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the model hypotheses.
    Validate(Common),
    /// Leading order and the small-q hierarchy.
    Series(Common),
    /// Continuation sweep in q and the exponential fit of v_inf.
    SweepFit(Common),
    /// A single finite-q solve.
    SolveOne {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        q: f64,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; built-in Ginzburg-Landau (n = 1) if omitted.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long = "R")]
    pub r_max: Option<f64>,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long = "N")]
    pub n: Option<usize>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Common {
    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::ginzburg_landau(),
        };
        if let Some(r) = self.r_max {
            cfg.grid.r_max = r;
        }
        if let Some(k) = self.k {
            cfg.series.k = k;
        }
        if let Some(n) = self.n {
            cfg.grid.n = n;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let (common, q) = match &cli.command {
        Command::Validate(c) | Command::Series(c) | Command::SweepFit(c) => (c, None),
        Command::SolveOne { common, q } => (common, Some(*q)),
    };
    let cfg = match common.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: invalid configuration: {e}");
            return EXIT_USAGE;
        }
    };
    match &cli.command {
        Command::Validate(_) => cmd_validate(&cfg),
        Command::Series(_) => cmd_series(&cfg),
        Command::SweepFit(_) => cmd_sweep_fit(&cfg),
        Command::SolveOne { .. } => cmd_solve_one(&cfg, q.expect("solve-one carries q")),
    }
}

struct Output {
    dir: PathBuf,
    comment: String,
}

impl Output {
    fn prepare(cfg: &RunConfig) -> Result<Self, i32> {
        let dir = cfg.output_dir.clone();
        let probe = dir.join(".lwspiral-write-test");
        let ok = fs::create_dir_all(&dir).is_ok() && File::create(&probe).is_ok();
        let _ = fs::remove_file(&probe);
        if !ok {
            eprintln!("error: output directory {} is not writable", dir.display());
            return Err(EXIT_CANT_CREATE);
        }
        Ok(Self {
            dir,
            comment: format!("config_sha256={}", cfg.hash()),
        })
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, i32> {
        File::create(self.dir.join(name)).map(BufWriter::new).map_err(|e| {
            eprintln!("error: cannot create {name}: {e}");
            EXIT_CANT_CREATE
        })
    }

    fn write_with(
        &self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>, &str) -> lambda_omega::Result<()>,
    ) -> Result<(), i32> {
        let mut w = self.create(name)?;
        f(&mut w, &self.comment)
            .and_then(|_| w.flush().map_err(Into::into))
            .map_err(|e| {
                eprintln!("error: writing {name}: {e}");
                EXIT_CANT_CREATE
            })
    }

    /// Writes `diagnostics.txt` and returns the solver-failure code.
    fn solver_failure(&self, stage: &str, err: &dyn std::fmt::Debug, msg: &str) -> i32 {
        eprintln!("error: {stage} failed: {msg}");
        let text = format!("# {}\nstage: {stage}\nerror: {msg}\ndetail: {err:?}\n", self.comment);
        let _ = fs::write(self.dir.join("diagnostics.txt"), text);
        EXIT_SOLVER
    }
}

fn gate(cfg: &RunConfig) -> Result<ModelFunctions, i32> {
    let model = cfg.model.build();
    let report = validate_hypotheses(&model, HYPOTHESIS_SAMPLES);
    if report.all_pass() {
        Ok(model)
    } else {
        for f in report.failures() {
            eprintln!("hypothesis failed: {f}");
        }
        Err(EXIT_HYPOTHESIS)
    }
}

pub fn cmd_validate(cfg: &RunConfig) -> i32 {
    let model = cfg.model.build();
    let report = validate_hypotheses(&model, HYPOTHESIS_SAMPLES);
    println!("model {} (n = {}), d = {}", report.model, model.n(), report.d);
    for c in &report.checks {
        println!("  {:<28} {}  margin {:.3e}", c.name, if c.pass { "pass" } else { "FAIL" }, c.margin);
    }
    if report.all_pass() {
        EXIT_OK
    } else {
        EXIT_HYPOTHESIS
    }
}

fn series_for(cfg: &RunConfig, model: &ModelFunctions, k_max: usize) -> lambda_omega::Result<SeriesSolution> {
    let grid = Arc::new(build_grid(cfg.grid.eps, cfg.grid.r_max, cfg.grid.n, Stretch::default())?);
    run_series(
        model,
        &grid,
        &SeriesOptions {
            k_max,
            omega_tol: cfg.series.omega_tol,
            ..SeriesOptions::default()
        },
    )
}

pub fn cmd_series(cfg: &RunConfig) -> i32 {
    let model = match gate(cfg) {
        Ok(m) => m,
        Err(code) => return code,
    };
    let out = match Output::prepare(cfg) {
        Ok(o) => o,
        Err(code) => return code,
    };
    let sol = match series_for(cfg, &model, cfg.series.k) {
        Ok(s) => s,
        Err(e) => return out.solver_failure("series", &e, &e.to_string()),
    };
    let written = (|| -> Result<(), i32> {
        out.write_with("leading_order.csv", |w, c| sol.leading.write_csv(w, Some(c)))?;
        for k in 1..sol.orders.len() {
            out.write_with(&format!("series_order_{k}.csv"), |w, c| sol.orders[k].write_csv(w, Some(c)))?;
        }
        out.write_with("series_summary.csv", |w, c| write_series_summary(&sol, w, c))
    })();
    if let Err(code) = written {
        return code;
    }
    for (k, om) in sol.omega.iter().enumerate() {
        println!("Omega_{k} = {om:.6e}");
    }
    let violations = sol.theorem_violations();
    if violations.is_empty() {
        EXIT_OK
    } else {
        for (k, om, tol) in violations {
            eprintln!("Omega_{k} = {om:.3e} exceeds {tol:.3e}");
        }
        EXIT_THEOREM
    }
}

fn write_series_summary<W: Write>(sol: &SeriesSolution, mut w: W, comment: &str) -> lambda_omega::Result<()> {
    writeln!(w, "# {comment}")?;
    writeln!(
        w,
        "k,Omega,c_norm,omega_bound,omega_fit_rms,f_tail_l,f_tail_j,v_tail_l,v_tail_j,linear_iterations"
    )?;
    let s = sol.summary();
    let opt = |x: Option<f64>| x.map_or_else(|| "nan".to_string(), |v| format!("{v:.6e}"));
    let optj = |x: Option<u32>| x.map_or_else(|| "nan".to_string(), |v| v.to_string());
    for o in &s.orders {
        let bound = (o.k > 0).then(|| sol.omega_tol * o.c_norm.max(1.0));
        writeln!(
            w,
            "{},{:.16e},{:.6e},{},{},{},{},{},{},{}",
            o.k,
            o.omega,
            o.c_norm,
            opt(bound),
            opt(o.omega_fit_residual),
            opt(o.f_tail.0),
            optj(o.f_tail.1),
            opt(o.v_tail.0),
            optj(o.v_tail.1),
            o.linear_iterations
        )?;
    }
    Ok(())
}

fn finite_q_options(cfg: &RunConfig) -> FiniteQOptions {
    FiniteQOptions {
        eps: cfg.grid.eps,
        bc_tol: cfg.finiteq.bc_tol,
        inner_bc: cfg.finiteq.inner_bc,
        ..FiniteQOptions::default()
    }
}

pub fn cmd_sweep_fit(cfg: &RunConfig) -> i32 {
    let model = match gate(cfg) {
        Ok(m) => m,
        Err(code) => return code,
    };
    let out = match Output::prepare(cfg) {
        Ok(o) => o,
        Err(code) => return code,
    };
    let mut q_list = cfg.finiteq.q_list.clone();
    q_list.sort_by(|a, b| b.total_cmp(a));
    q_list.dedup();
    if q_list.len() < 4 {
        eprintln!("error: the fit needs at least 4 values of q, got {}", q_list.len());
        return EXIT_TOO_FEW_POINTS;
    }
    let series = match series_for(cfg, &model, cfg.series.k.min(1)) {
        Ok(s) => s,
        Err(e) => return out.solver_failure("series warm start", &e, &e.to_string()),
    };
    let opts = finite_q_options(cfg);
    let sweep = match finite_q::continuation_sweep(&model, &q_list, cfg.finiteq.r_policy, &series, &opts) {
        Ok(s) => s,
        Err(e) => return out.solver_failure("sweep", &e, &e.to_string()),
    };
    let mut rows = Vec::new();
    let mut weights = Vec::new();
    for entry in &sweep {
        match &entry.result {
            Ok(sol) => {
                for w in &sol.warnings {
                    eprintln!("q = {}: {w}", sol.q);
                }
                rows.push(SweepRow::from(sol));
                let rel = sol.v_inf.uncertainty / sol.v_inf.value;
                weights.push(if rel > 0.0 && rel.is_finite() { 1.0 / (rel * rel) } else { 1.0 });
            }
            Err(e) => eprintln!("q = {}: solve failed at R = {}: {e}", entry.q, entry.r_max),
        }
    }
    if let Err(code) = out.write_with("sweep.csv", |w, c| finite_q::write_sweep_csv(&rows, w, Some(c))) {
        return code;
    }
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.q, r.v_inf)).collect();
    if points.len() < 4 {
        eprintln!("error: only {} of {} solves converged; the fit needs 4", points.len(), q_list.len());
        return EXIT_TOO_FEW_POINTS;
    }
    let fitted = if cfg.fit.weighted {
        fit::fit_exponential_weighted(&points, &weights)
    } else {
        fit::fit_exponential(&points)
    };
    let result = match fitted {
        Ok(f) => f,
        Err(e) => return out.solver_failure("fit", &e, &e.to_string()),
    };
    let written = (|| -> Result<(), i32> {
        out.write_with("fit_report.csv", |w, c| fit::write_report(&result, w, Some(c)))?;
        out.write_with("figure1.dat", |w, c| fit::write_figure_data(&points, w, Some(c)))?;
        let mut svg = out.create("figure1.svg")?;
        fit::write_svg(&points, &result, &mut svg)
            .and_then(|_| svg.flush().map_err(Into::into))
            .map_err(|_| EXIT_CANT_CREATE)
    })();
    if let Err(code) = written {
        return code;
    }
    println!(
        "B = {:.10} (95% CI [{:.6}, {:.6}]), A = {:.6}, {} points",
        result.b, result.ci95_b.0, result.ci95_b.1, result.a, result.points
    );
    println!("B - pi/2 = {:+.3e}", result.b - std::f64::consts::FRAC_PI_2);
    EXIT_OK
}

pub fn cmd_solve_one(cfg: &RunConfig, q: f64) -> i32 {
    let model = match gate(cfg) {
        Ok(m) => m,
        Err(code) => return code,
    };
    if !(q > 0.0 && q <= 0.6) {
        eprintln!("error: --q must lie in (0, 0.6], got {q}");
        return EXIT_USAGE;
    }
    let out = match Output::prepare(cfg) {
        Ok(o) => o,
        Err(code) => return code,
    };
    let series = match series_for(cfg, &model, cfg.series.k.min(1)) {
        Ok(s) => s,
        Err(e) => return out.solver_failure("series warm start", &e, &e.to_string()),
    };
    let opts = finite_q_options(cfg);
    let sol = match finite_q::solve_with_policy(&model, q, cfg.finiteq.r_policy, &series, &opts) {
        Ok(s) => s,
        Err(e) => return out.solver_failure("finite-q solve", &e, &e.to_string()),
    };
    for w in &sol.warnings {
        eprintln!("warning: {w}");
    }
    let name = format!("profile_q{q}.csv");
    if let Err(code) = out.write_with(&name, |w, c| sol.write_csv(w, Some(c))) {
        return code;
    }
    println!(
        "q = {q}: R = {}, v_inf = {:.10e} (+- {:.2e}), Omega = {:.12e}, f_inf = {:.10e}, newton iterations = {}",
        sol.mesh.r_max(),
        sol.v_inf.value,
        sol.v_inf.uncertainty,
        sol.omega,
        sol.f_inf,
        sol.newton_iters
    );
    EXIT_OK
}
