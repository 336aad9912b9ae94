mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use ehi_sbm::experiments::{
    check_figure_markers, figure_jratio_data, verify_bernoulli_even, verify_diagram_prop, verify_integral_lemma,
    verify_intermediate_jump, verify_levy_system, verify_preferred_side, write_figure_csv, HalfSpace,
    PreferredSideScenario, RGridPolicy, VerificationResult, INTEGRAL_LEMMA_GRID, MIN_GRID_RESOLUTION,
};
use ehi_sbm::kernel::{BoxRegion, KernelEvaluator};
use ehi_sbm::measure::SubordinatorSpec;
use ehi_sbm::recipe::{catalog, check_recipe, compute_rn, CatalogEntry, RecipeOptions};
use ehi_sbm::sim::{catalog_truncation, estimate_escape_probability, McConfig, Region, Truncation};

use output::Outputs;

const OUT_ENV: &str = "EHI_SBM_OUT";
const DEFAULT_OUT: &str = "ehi-sbm-out";
const EXIT_ERROR: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Parser, Serialize)]
#[command(name = "ehi-sbm", version, about = "Kernels, recipes and Monte Carlo checks for subordinated Brownian motion")]
struct Cli {
    /// Output directory (default: $EHI_SBM_OUT, else ./ehi-sbm-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Cap on worker threads for Monte Carlo runs.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Check a JSON spec and export it in normalized form.
    Validate { spec: PathBuf },
    /// Evaluate the jump kernel j(r).
    Kernel {
        #[command(flatten)]
        source: SpecSource,
        /// Comma-separated radii, or `log:lo:hi:count` / `lin:lo:hi:count`.
        #[arg(long)]
        r: String,
        #[arg(long, default_value_t = 1)]
        d: u32,
    },
    /// Tabulate the recipe quantities for a catalog example.
    Recipe {
        #[arg(long)]
        example: String,
        /// Index or inclusive range `a..b`.
        #[arg(long, default_value = "1..3")]
        n: String,
        #[arg(long)]
        d: Option<u32>,
        #[arg(long, default_value_t = 0.5)]
        c: f64,
        #[arg(long, default_value_t = 10.0)]
        threshold: f64,
    },
    /// Estimate the escape probability from B(0, αR_n) into B(0, 10R_n).
    Escape {
        #[arg(long)]
        example: String,
        #[arg(long)]
        n: u32,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        d: Option<u32>,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Run one verification.
    Verify {
        #[command(subcommand)]
        lemma: Lemma,
    },
    /// Write the kernel-ratio figure data as CSV.
    Figure {
        #[arg(long)]
        example: String,
        #[arg(long, default_value_t = 0.5)]
        c: f64,
        #[arg(long, default_value_t = 4)]
        last_band: u32,
        #[arg(long, default_value_t = 64)]
        per_band: usize,
    },
}

#[derive(Args, Serialize, Clone)]
struct SpecSource {
    /// JSON spec file.
    #[arg(long, conflicts_with = "example")]
    spec: Option<PathBuf>,
    /// Catalog example name.
    #[arg(long)]
    example: Option<String>,
}

#[derive(Args, Serialize, Clone)]
struct McArgs {
    #[arg(long, default_value_t = 100_000)]
    paths: u64,
    /// Generated and printed when omitted.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    stream_offset: u64,
    /// Censoring horizon; automatic when omitted.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long, default_value_t = 0.99)]
    confidence: f64,
}

#[derive(Args, Serialize, Clone)]
struct Truncate {
    /// Keep components with index at most this.
    #[arg(long)]
    max_index: Option<u64>,
    /// Index used to scale the automatic truncation of catalog examples.
    #[arg(long)]
    n: Option<u32>,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Lemma {
    /// P(even number of successes) for independent Bernoulli trials.
    Bernoulli {
        #[arg(long, value_delimiter = ',', required = true)]
        weights: Vec<f64>,
    },
    /// Gaussian exponential integral against quadrature.
    IntegralLemma {
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Exit distribution against the Lévy-system integral, in one dimension.
    LevySystem {
        #[command(flatten)]
        source: SpecSource,
        #[command(flatten)]
        truncate: Truncate,
        #[arg(long, value_delimiter = ',', default_value = "-1,1")]
        domain: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,3")]
        target: Vec<f64>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        x: f64,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Exit into a far set against escape from a small ball, in one dimension.
    IntermediateJump {
        #[arg(long)]
        example: String,
        #[arg(long, default_value_t = 1)]
        n: u32,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Staying in a half-space is at least as likely as leaving it.
    PreferredSide {
        #[command(flatten)]
        source: SpecSource,
        #[command(flatten)]
        truncate: Truncate,
        #[arg(long, default_value_t = 0.5)]
        start: f64,
        #[arg(long, default_value_t = 1.0)]
        time: f64,
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
        #[arg(long, default_value_t = 4.0)]
        pair_scale: f64,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Planar exit bound through the kernel ratio and escape probability.
    Diagram {
        #[arg(long)]
        example: String,
        #[arg(long, default_value_t = 1)]
        n: u32,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0.5)]
        c: f64,
        #[arg(long, default_value_t = MIN_GRID_RESOLUTION)]
        grid: usize,
        #[command(flatten)]
        mc: McArgs,
    },
}

impl Lemma {
    fn name(&self) -> &'static str {
        match self {
            Lemma::Bernoulli { .. } => "bernoulli",
            Lemma::IntegralLemma { .. } => "integral-lemma",
            Lemma::LevySystem { .. } => "levy-system",
            Lemma::IntermediateJump { .. } => "intermediate-jump",
            Lemma::PreferredSide { .. } => "preferred-side",
            Lemma::Diagram { .. } => "diagram",
        }
    }
}

impl Command {
    fn name(&self) -> String {
        match self {
            Command::Validate { .. } => "validate".into(),
            Command::Kernel { .. } => "kernel".into(),
            Command::Recipe { .. } => "recipe".into(),
            Command::Escape { .. } => "escape".into(),
            Command::Verify { lemma } => format!("verify-{}", lemma.name()),
            Command::Figure { .. } => "figure".into(),
        }
    }

    fn mc(&self) -> Option<&McArgs> {
        match self {
            Command::Escape { mc, .. } => Some(mc),
            Command::Verify { lemma } => match lemma {
                Lemma::LevySystem { mc, .. }
                | Lemma::IntermediateJump { mc, .. }
                | Lemma::PreferredSide { mc, .. }
                | Lemma::Diagram { mc, .. } => Some(mc),
                _ => None,
            },
            _ => None,
        }
    }
}

/// What a finished command reports back.
struct Report {
    summary: Value,
    passed: bool,
}

impl Report {
    fn ok(summary: Value) -> Self {
        Self { summary, passed: true }
    }
}

struct Run<'a> {
    outputs: &'a mut Outputs,
    workers: Option<usize>,
    seed: Option<u64>,
}

impl Run<'_> {
    fn mc_config(&self, mc: &McArgs) -> McConfig {
        McConfig {
            stream_offset: mc.stream_offset,
            workers: self.workers,
            horizon: mc.horizon,
            confidence: mc.confidence,
            ..McConfig::new(mc.paths, self.seed.expect("seed resolved for Monte Carlo commands"))
        }
    }

    fn verification(&mut self, r: VerificationResult) -> Result<Report> {
        let file = format!("verify-{}.json", r.name);
        self.outputs.write_json(&file, &r)?;
        let failed: Vec<&str> = r.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        Ok(Report {
            summary: json!({
                "name": r.name,
                "pass": r.pass,
                "lhs": r.lhs,
                "rhs": r.rhs,
                "failed_checks": failed,
            }),
            passed: r.pass,
        })
    }
}

fn example_entry(name: &str, d: Option<u32>) -> Result<CatalogEntry> {
    let entry = catalog(name)?;
    Ok(match d {
        Some(d) => entry.with_dimension(d)?,
        None => entry,
    })
}

fn read_spec(path: &PathBuf) -> Result<SubordinatorSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec: SubordinatorSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    spec.ensure_valid()?;
    Ok(spec)
}

/// Resolves a spec and its path-simulation truncation.
fn resolve_spec(source: &SpecSource, truncate: Option<&Truncate>) -> Result<(SubordinatorSpec, Truncation)> {
    let max_index = truncate.and_then(|t| t.max_index);
    match (&source.spec, &source.example) {
        (Some(path), None) => {
            let spec = read_spec(path)?;
            let t = max_index.map_or(Truncation::None, |m| Truncation::MaxIndex { max_index: m });
            Ok((spec, t))
        }
        (None, Some(name)) => {
            let entry = catalog(name)?;
            let t = match max_index {
                Some(m) => Truncation::MaxIndex { max_index: m },
                None => {
                    let n = truncate.and_then(|t| t.n).unwrap_or(entry.input.first_n);
                    catalog_truncation(&entry, n)?
                }
            };
            Ok((entry.input.spec, t))
        }
        _ => bail!("give exactly one of --spec or --example"),
    }
}

fn parse_range(s: &str) -> Result<std::ops::RangeInclusive<u32>> {
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (a.trim().parse()?, b.trim().trim_start_matches('=').parse()?),
        None => {
            let n = s.trim().parse()?;
            (n, n)
        }
    };
    if a > b {
        bail!("empty index range {s}");
    }
    Ok(a..=b)
}

fn parse_radii(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 4 && (parts[0] == "log" || parts[0] == "lin") {
        let lo: f64 = parts[1].parse()?;
        let hi: f64 = parts[2].parse()?;
        let count: usize = parts[3].parse()?;
        if count < 2 || !(lo > 0.0 && hi > lo) {
            bail!("grid needs 0 < lo < hi and at least two points");
        }
        let t = |i: usize| i as f64 / (count - 1) as f64;
        return Ok(if parts[0] == "log" {
            (0..count).map(|i| (lo.ln() + (hi.ln() - lo.ln()) * t(i)).exp()).collect()
        } else {
            (0..count).map(|i| lo + (hi - lo) * t(i)).collect()
        });
    }
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| anyhow!("bad radius `{p}`: {e}")))
        .collect()
}

fn interval(v: &[f64], what: &str) -> Result<BoxRegion> {
    match v {
        [lo, hi] => Ok(BoxRegion::interval(*lo, *hi)?),
        _ => bail!("--{what} takes two numbers lo,hi"),
    }
}

#[derive(Serialize)]
struct KernelRow {
    r: f64,
    ln_j: f64,
    j: Option<f64>,
    ln_tail_bound: f64,
    terms: u64,
}

fn execute(cmd: &Command, run: &mut Run) -> Result<Report> {
    match cmd {
        Command::Validate { spec } => {
            let spec = read_spec(spec)?;
            run.outputs.write_json("spec.json", &spec)?;
            Ok(Report::ok(json!({ "valid": true, "spec": spec })))
        }
        Command::Kernel { source, r, d } => {
            let (spec, _) = resolve_spec(source, None)?;
            let kernel = KernelEvaluator::new(*d, spec)?;
            let mut rows = Vec::new();
            for r in parse_radii(r)? {
                let v = kernel.ln_j_detailed(r)?;
                let j = v.ln_value.exp();
                rows.push(KernelRow {
                    r,
                    ln_j: v.ln_value,
                    j: (j > 0.0 && j.is_finite()).then_some(j),
                    ln_tail_bound: v.ln_tail_bound,
                    terms: v.terms,
                });
            }
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in &rows {
                w.serialize(row)?;
            }
            run.outputs.write_bytes("kernel.csv", &w.into_inner()?)?;
            let preview: Vec<Value> = rows.iter().take(10).map(|r| json!({ "r": r.r, "ln_j": r.ln_j, "j": r.j })).collect();
            Ok(Report::ok(json!({ "rows": rows.len(), "head": preview })))
        }
        Command::Recipe { example, n, d, c, threshold } => {
            let entry = example_entry(example, *d)?;
            let opts = RecipeOptions {
                c: *c,
                threshold: *threshold,
                with_kernel: true,
            };
            let report = check_recipe(&entry.input, parse_range(n)?, &opts)?;
            run.outputs.write_bytes("recipe.csv", report.to_csv_string()?.as_bytes())?;
            run.outputs.write_json("recipe.json", &report)?;
            Ok(Report::ok(json!({
                "example": entry.name,
                "rows": report.rows.len(),
                "summary": report.summary,
            })))
        }
        Command::Escape { example, n, alpha, d, mc } => {
            let entry = example_entry(example, *d)?;
            let cfg = run.mc_config(mc);
            let est = estimate_escape_probability(&entry, *n, *alpha, &cfg)?;
            let payload = json!({
                "example": entry.name,
                "n": n,
                "alpha": alpha,
                "d": entry.input.d,
                "r_n": compute_rn(&entry.input, *n)?,
                "estimate": est,
            });
            run.outputs.write_json("escape.json", &payload)?;
            Ok(Report::ok(json!({
                "mean": est.estimate.mean,
                "stderr": est.estimate.stderr,
                "flagged": est.flagged,
            })))
        }
        Command::Figure { example, c, last_band, per_band } => {
            let entry = catalog(example)?;
            let policy = RGridPolicy {
                last_band: *last_band,
                per_band: *per_band,
            };
            let rows = figure_jratio_data(&entry, policy, *c)?;
            let mut buf = Vec::new();
            write_figure_csv(&rows, &mut buf)?;
            run.outputs.write_bytes(&format!("figure-{}.csv", entry.name), &buf)?;
            let markers = check_figure_markers(&entry, &rows);
            run.outputs.write_json(&format!("figure-{}-markers.json", entry.name), &markers)?;
            Ok(Report::ok(json!({
                "example": entry.name,
                "rows": rows.len(),
                "markers_pass": markers.pass,
            })))
        }
        Command::Verify { lemma } => verify(lemma, run),
    }
}

fn verify(lemma: &Lemma, run: &mut Run) -> Result<Report> {
    let r = match lemma {
        Lemma::Bernoulli { weights } => verify_bernoulli_even(weights)?,
        Lemma::IntegralLemma { grid } => verify_integral_lemma(grid.as_deref().unwrap_or(&INTEGRAL_LEMMA_GRID))?,
        Lemma::LevySystem { source, truncate, domain, target, x, mc } => {
            let (spec, t) = resolve_spec(source, Some(truncate))?;
            let domain = interval(domain, "domain")?;
            let target = interval(target, "target")?;
            verify_levy_system(&spec, &domain, &target, &[*x], t, &run.mc_config(mc))?
        }
        Lemma::IntermediateJump { example, n, alpha, mc } => {
            let entry = catalog(example)?;
            let r = compute_rn(&entry.input, *n)?;
            let e1 = Region::Box(BoxRegion::interval(-alpha * r, alpha * r)?);
            let e2 = Region::Box(BoxRegion::interval(2.0 * r, 5.0 * r)?);
            let t = catalog_truncation(&entry, *n)?;
            verify_intermediate_jump(&entry.input.spec, &e1, &e2, &[0.0], alpha * r, 10.0 * r, t, &run.mc_config(mc))?
        }
        Lemma::PreferredSide { source, truncate, start, time, pairs, pair_scale, mc } => {
            let (spec, t) = resolve_spec(source, Some(truncate))?;
            let scenario = PreferredSideScenario {
                half_space: HalfSpace::new(vec![1.0], 0.0)?,
                start: vec![*start],
                time: *time,
                pairs: *pairs,
                pair_scale: *pair_scale,
            };
            verify_preferred_side(&spec, &scenario, t, &run.mc_config(mc))?
        }
        Lemma::Diagram { example, n, alpha, c, grid, mc } => {
            let entry = catalog(example)?;
            verify_diagram_prop(&entry, *n, *alpha, *c, *grid, &run.mc_config(mc))?
        }
    };
    run.verification(r)
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    use ehi_sbm::Error as E;
    if let Some(e) = e.downcast_ref::<E>() {
        return match e {
            E::InvalidSpec(_) => "invalid-spec",
            E::InvalidInterval(_) => "invalid-interval",
            E::UnboundedMass(_) => "unbounded-mass",
            E::DivergentMoment(_) => "divergent-moment",
            E::Domain(_) => "domain",
            E::PrecisionUnattainable(_) => "precision-unattainable",
            E::DynamicRange(_) => "dynamic-range",
            E::SingularRegion(_) => "singular-region",
            E::RecipeInapplicable { .. } => "recipe-inapplicable",
            E::NoLargeJumps(_) => "no-large-jumps",
            E::UnknownExample(_) => "unknown-example",
            E::DriftPathsUnsupported => "drift-paths-unsupported",
            E::TruncationRequired(_) => "truncation-required",
            E::Unsupported(_) => "unsupported",
            E::InvalidScenario(_) => "invalid-scenario",
            E::Io(_) => "io",
            E::Quadrature(_) => "quadrature",
        };
    }
    if e.downcast_ref::<std::io::Error>().is_some() {
        return "io";
    }
    if e.downcast_ref::<serde_json::Error>().is_some() {
        return "parse";
    }
    "error"
}

fn emit_error(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
}

fn unix_seconds() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn fresh_seed() -> u64 {
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos());
    (nanos as u64) ^ ((std::process::id() as u64) << 32)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            emit_error("usage", e.to_string().trim());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let out = cli
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let seed = cli.command.mc().map(|mc| {
        mc.seed.unwrap_or_else(|| {
            let s = fresh_seed();
            eprintln!("seed: {s}");
            s
        })
    });

    let started = unix_seconds();
    let clock = Instant::now();
    let mut outputs = Outputs::new(&out);
    let mut run = Run {
        outputs: &mut outputs,
        workers: cli.workers,
        seed,
    };
    let result = execute(&cli.command, &mut run).and_then(|report| {
        let files: Vec<String> = outputs
            .written()
            .iter()
            .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
            .collect();
        let command = cli.command.name();
        let manifest = json!({
            "command": command,
            "parameters": &cli,
            "seed": seed,
            "versions": {
                "ehi-sbm": ehi_sbm::VERSION,
                "ehi-sbm-cli": env!("CARGO_PKG_VERSION"),
            },
            "timings": {
                "started_unix": started,
                "elapsed_seconds": clock.elapsed().as_secs_f64(),
            },
            "outputs": files,
            "pass": report.passed,
        });
        outputs.write_json(&format!("manifest-{command}.json"), &manifest)?;
        Ok(report)
    });

    match result {
        Ok(report) => {
            let mut summary = report.summary;
            summary["outputs"] = json!(outputs.written());
            if let Some(s) = seed {
                summary["seed"] = json!(s);
            }
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CHECK_FAILED)
            }
        }
        Err(e) => {
            outputs.discard();
            emit_error(error_kind(&e), &format!("{e:#}"));
            ExitCode::from(EXIT_ERROR)
        }
    }
}
