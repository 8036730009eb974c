//! Command-line entry point: config resolution, report emission and exit
//! codes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_value::Value;
use sha2::{Digest, Sha256};

use crate::bubbles::{expansion_j, functional_j, Bubble, Expansion, ExpansionConfig, JReport, QuadratureConfig};
use crate::criterion::{evaluate, summary_table, CriterionConfig};
use crate::error::{Error, Result};
use crate::flow::{batch, integrate, random_initial, FlowContext, FlowOptions, InitSampler, Sample};
use crate::geometry::{HemispherePoint, Vec5};
use crate::greenfn::{self, verify_kernel, GreenConvention, KernelReport};
use crate::kfield::{check_condition_c, find_critical_points, parse_k, KExpression, SearchConfig};
use crate::validate;

/// Exit code of a criterion run that certifies nothing.
pub const EXIT_INCONCLUSIVE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "halfsphere", version, about = "Prescribed scalar curvature on the upper 4-hemisphere")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Closed-form expression for K in x1..x5.
    #[arg(long, global = true)]
    pub k: Option<String>,
    /// JSON config file; explicit flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for reports.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub convention: Option<ConventionArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ConventionArg {
    SphericalImage,
    FlatModel,
}

impl From<ConventionArg> for GreenConvention {
    fn from(c: ConventionArg) -> Self {
        match c {
            ConventionArg::SphericalImage => GreenConvention::SphericalImage,
            ConventionArg::FlatModel => GreenConvention::FlatModel,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Locate and classify the critical points of K.
    CriticalPoints,
    /// Check the non-degeneracy condition at the critical points.
    CheckConditionC,
    /// Evaluate both existence criteria.
    Criterion,
    /// Kernel values and identity residuals.
    Green,
    /// Compare the energy of a bubble configuration by quadrature and by expansion.
    Expand,
    /// Integrate the reduced descent flow.
    Flow,
    /// Run the invariant suite.
    Validate {
        /// Run only these checks (1 to 9).
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::CriticalPoints => "critical-points",
            Command::CheckConditionC => "check-condition-c",
            Command::Criterion => "criterion",
            Command::Green => "green",
            Command::Expand => "expand",
            Command::Flow => "flow",
            Command::Validate { .. } => "validate",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreenBlock {
    /// Point pairs `(x, y)` at which G and H are evaluated.
    pub pairs: Vec<[Vec5; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpandBlock {
    pub bubbles: Vec<Bubble>,
    /// Values of λ applied to every bubble for the convergence sweep.
    pub sweep: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowBlock {
    /// Initial configuration of a single trajectory.
    pub bubbles: Vec<Bubble>,
    pub options: FlowOptions,
    /// Seeded batch of initial configurations; anchors default to the
    /// flagged points.
    pub batch: Option<InitSampler>,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub k: Option<String>,
    pub convention: Option<GreenConvention>,
    pub seed: Option<u64>,
    pub search: SearchConfig,
    pub criterion: CriterionConfig,
    pub expansion: ExpansionConfig,
    pub quadrature: QuadratureConfig,
    pub green: GreenBlock,
    pub expand: ExpandBlock,
    pub flow: FlowBlock,
}

impl RunConfig {
    /// Reads the config file, applies the flags and propagates the global
    /// convention and seed into the module blocks.
    pub fn resolve(cli: &Cli) -> Result<Self> {
        let mut cfg = match &cli.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str::<RunConfig>(&text).map_err(|e| Error::Config(e.to_string()))?
            }
            None => RunConfig::default(),
        };
        if let Some(k) = &cli.k {
            cfg.k = Some(k.clone());
        }
        if let Some(c) = cli.convention {
            cfg.convention = Some(c.into());
        }
        if let Some(s) = cli.seed {
            cfg.seed = Some(s);
        }
        if let Some(c) = cfg.convention {
            cfg.search.convention = c;
            cfg.criterion.convention = c;
            cfg.expansion.convention = c;
        }
        if let Some(s) = cfg.seed {
            cfg.search.seed = s;
            if let Some(b) = &mut cfg.flow.batch {
                b.seed = s;
            }
        }
        ensure_finite(&cfg, "config")?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> Result<String> {
        let text = serde_json::to_string(self)?;
        Ok(hex::encode(Sha256::digest(text.as_bytes())))
    }

    fn parsed_k(&self) -> Result<KExpression> {
        match &self.k {
            Some(src) => parse_k(src),
            None => Err(Error::Config("missing --k (or \"k\" in the config file)".into())),
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    config: &'a RunConfig,
    config_hash: String,
    result: &'a T,
}

/// Fails on any NaN or infinite float in `v`, naming its path.
pub fn ensure_finite<T: Serialize>(v: &T, root: &str) -> Result<()> {
    let value = serde_value::to_value(v).map_err(|e| Error::Invalid(e.to_string()))?;
    walk(&value, root)
}

fn walk(v: &Value, path: &str) -> Result<()> {
    match v {
        Value::F64(x) if !x.is_finite() => Err(Error::NonFinite(path.to_string())),
        Value::F32(x) if !x.is_finite() => Err(Error::NonFinite(path.to_string())),
        Value::Option(Some(b)) | Value::Newtype(b) => walk(b, path),
        Value::Seq(items) => items.iter().enumerate().try_for_each(|(i, x)| walk(x, &format!("{path}[{i}]"))),
        Value::Map(m) => m.iter().try_for_each(|(k, x)| {
            let key = match k {
                Value::String(s) => s.clone(),
                other => format!("{other:?}"),
            };
            walk(x, &format!("{path}.{key}"))
        }),
        _ => Ok(()),
    }
}

fn write_report<T: Serialize>(out: &Path, file: &str, command: &str, cfg: &RunConfig, result: &T) -> Result<PathBuf> {
    ensure_finite(result, "result")?;
    let env = Envelope { command, version: env!("CARGO_PKG_VERSION"), config: cfg, config_hash: cfg.hash()?, result };
    fs::create_dir_all(out)?;
    let path = out.join(file);
    let mut text = serde_json::to_string_pretty(&env)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

#[derive(Serialize)]
struct ConditionCResult {
    points: usize,
    report: crate::kfield::ConditionCReport,
}

#[derive(Serialize)]
struct PairValue {
    x: Vec5,
    y: Vec5,
    convention: GreenConvention,
    green: f64,
    regular: f64,
}

#[derive(Serialize)]
struct GreenResult {
    kernels: Vec<KernelReport>,
    pairs: Vec<PairValue>,
}

#[derive(Serialize)]
struct ErrorBudget {
    /// Truncation of the corrected bubble.
    truncation: f64,
    /// Relative change between the last two quadrature levels, times `J`.
    quadrature: f64,
    difference: f64,
}

#[derive(Serialize)]
struct ExpandResult {
    #[serde(rename = "J_quad")]
    j_quad: f64,
    #[serde(rename = "J_exp")]
    j_exp: f64,
    parts: Expansion,
    quadrature: JReport,
    error_budget: ErrorBudget,
}

#[derive(Serialize)]
struct ValidateResult {
    pass: bool,
    checks: Vec<validate::Check>,
}

enum Status {
    Done,
    Inconclusive,
    Failed,
}

fn conventions(cfg: &RunConfig) -> Vec<GreenConvention> {
    match cfg.convention {
        Some(c) => vec![c],
        None => vec![GreenConvention::SphericalImage, GreenConvention::FlatModel],
    }
}

fn expand_pair(k: &KExpression, bubbles: &[Bubble], cfg: &RunConfig) -> Result<ExpandResult> {
    let parts = expansion_j(k, bubbles, &cfg.expansion)?;
    let quadrature = functional_j(k, bubbles, &cfg.quadrature, cfg.expansion.convention)?;
    Ok(ExpandResult {
        j_quad: quadrature.j,
        j_exp: parts.value,
        error_budget: ErrorBudget {
            truncation: parts.truncation_budget,
            quadrature: quadrature.error_estimate * quadrature.j.abs(),
            difference: (quadrature.j - parts.value).abs(),
        },
        parts,
        quadrature,
    })
}

fn write_trajectory(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let p = samples.first().map_or(0, |s| s.bubbles.len());
    let mut header = vec!["time".to_string()];
    for i in 0..p {
        header.push(format!("alpha_{i}"));
        for c in 1..=5 {
            header.push(format!("a{c}_{i}"));
        }
        header.push(format!("lambda_{i}"));
    }
    header.push("eps_norm".into());
    header.push("energy".into());
    w.write_record(&header)?;
    for s in samples {
        let mut row = vec![format!("{:e}", s.time)];
        for b in &s.bubbles {
            row.push(format!("{:e}", b.alpha));
            row.extend(b.a.coords().iter().map(|c| format!("{c:e}")));
            row.push(format!("{:e}", b.lambda));
        }
        row.push(format!("{:e}", s.eps_norm));
        row.push(format!("{:e}", s.energy));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn execute(cli: &Cli, cfg: &RunConfig) -> Result<Status> {
    let name = cli.command.name();
    let out = &cli.out;
    let mut stdout = std::io::stdout();
    match &cli.command {
        Command::CriticalPoints => {
            let k = cfg.parsed_k()?;
            let s = find_critical_points(&k, &cfg.search)?;
            let path = write_report(out, "critical_points.json", name, cfg, &s)?;
            writeln!(stdout, "{} critical points -> {}", s.points.len(), path.display())?;
        }
        Command::CheckConditionC => {
            let k = cfg.parsed_k()?;
            let s = find_critical_points(&k, &cfg.search)?;
            let report = check_condition_c(&s.points, cfg.search.cond_tol);
            let satisfied = report.satisfied;
            let path = write_report(out, "condition_c.json", name, cfg, &ConditionCResult { points: s.points.len(), report })?;
            writeln!(stdout, "condition (C) satisfied: {satisfied} -> {}", path.display())?;
        }
        Command::Criterion => {
            let k = cfg.parsed_k()?;
            let s = find_critical_points(&k, &cfg.search)?;
            let report = evaluate(&s.points, &cfg.criterion)?;
            let path = write_report(out, "criterion.json", name, cfg, &report)?;
            write!(stdout, "{}", summary_table(&report))?;
            writeln!(stdout, "report -> {}", path.display())?;
            if report.inconclusive() {
                return Ok(Status::Inconclusive);
            }
        }
        Command::Green => {
            let convs = conventions(cfg);
            let kernels = convs.iter().map(|&c| verify_kernel(c)).collect::<Result<Vec<_>>>()?;
            let mut pairs = Vec::new();
            for [x, y] in &cfg.green.pairs {
                let (px, py) = (HemispherePoint::new(*x)?, HemispherePoint::new(*y)?);
                for &c in &convs {
                    pairs.push(PairValue {
                        x: *x,
                        y: *y,
                        convention: c,
                        green: greenfn::green(&px, &py, c)?,
                        regular: greenfn::regular_part(&py, &px, c)?,
                    });
                }
            }
            let path = write_report(out, "green.json", name, cfg, &GreenResult { kernels, pairs })?;
            writeln!(stdout, "kernel report -> {}", path.display())?;
        }
        Command::Expand => {
            let k = cfg.parsed_k()?;
            let bubbles = &cfg.expand.bubbles;
            if bubbles.is_empty() {
                return Err(Error::Config("expand needs expand.bubbles in the config".into()));
            }
            let r = expand_pair(&k, bubbles, cfg)?;
            writeln!(stdout, "J_quad = {:.12}  J_exp = {:.12}  |diff| = {:.3e}", r.j_quad, r.j_exp, r.error_budget.difference)?;
            let path = write_report(out, "expand.json", name, cfg, &r)?;
            if !cfg.expand.sweep.is_empty() {
                let csv_path = out.join("expand_sweep.csv");
                let mut w = csv::Writer::from_path(&csv_path)?;
                w.write_record(["lambda", "j_quad", "j_exp", "abs_diff", "quad_error", "truncation"])?;
                for &lambda in &cfg.expand.sweep {
                    let scaled: Vec<Bubble> = bubbles.iter().map(|b| Bubble { lambda, ..*b }).collect();
                    let s = expand_pair(&k, &scaled, cfg)?;
                    w.write_record([
                        format!("{lambda:e}"),
                        format!("{:e}", s.j_quad),
                        format!("{:e}", s.j_exp),
                        format!("{:e}", s.error_budget.difference),
                        format!("{:e}", s.error_budget.quadrature),
                        format!("{:e}", s.error_budget.truncation),
                    ])?;
                }
                w.flush()?;
                writeln!(stdout, "sweep -> {}", csv_path.display())?;
            }
            writeln!(stdout, "report -> {}", path.display())?;
        }
        Command::Flow => {
            let k = cfg.parsed_k()?;
            let ctx = FlowContext::new(&k, &cfg.search, cfg.expansion.convention)?;
            let opts = &cfg.flow.options;
            fs::create_dir_all(out)?;
            match (&cfg.flow.batch, cfg.flow.bubbles.is_empty()) {
                (Some(sampler), true) => {
                    let mut sampler = sampler.clone();
                    if sampler.anchors.is_empty() {
                        sampler.anchors = ctx.flagged.iter().map(|f| *f.location.coords()).collect();
                    }
                    let init = random_initial(&sampler, &cfg.expansion)?;
                    let outcomes = batch(&k, &ctx, &init, &cfg.expansion, opts).into_iter().collect::<Result<Vec<_>>>()?;
                    let path = write_report(out, "flow_batch.json", name, cfg, &outcomes)?;
                    writeln!(stdout, "{} trajectories -> {}", outcomes.len(), path.display())?;
                }
                (None, false) => {
                    let (outcome, samples) = integrate(&k, &ctx, &cfg.flow.bubbles, &cfg.expansion, opts)?;
                    ensure_finite(&samples, "trajectory")?;
                    let csv_path = out.join("flow_trajectory.csv");
                    write_trajectory(&csv_path, &samples)?;
                    let path = write_report(out, "flow.json", name, cfg, &outcome)?;
                    writeln!(stdout, "{} after {} steps -> {}", outcome.classification, outcome.steps, path.display())?;
                }
                _ => return Err(Error::Config("flow needs exactly one of flow.bubbles and flow.batch".into())),
            }
        }
        Command::Validate { only } => {
            let ids: Vec<usize> = if only.is_empty() { (1..=validate::COUNT).collect() } else { only.clone() };
            let checks: Vec<_> = ids.into_iter().map(validate::run).collect();
            let pass = checks.iter().all(|c| c.pass);
            write!(stdout, "{}", validate::table(&checks))?;
            let path = write_report(out, "validate.json", name, cfg, &ValidateResult { pass, checks })?;
            writeln!(stdout, "report -> {}", path.display())?;
            if !pass {
                return Ok(Status::Failed);
            }
        }
    }
    Ok(Status::Done)
}

/// Runs the command line `args` (program name first) and returns the exit
/// code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = RunConfig::resolve(&cli).and_then(|cfg| execute(&cli, &cfg));
    match result {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::Inconclusive) => ExitCode::from(EXIT_INCONCLUSIVE),
        Ok(Status::Failed) => ExitCode::from(1),
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            eprintln!("usage: halfsphere <COMMAND> --k <EXPR> [--config FILE] [--out DIR]; see --help");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
