mod io;

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tailadrf::dgp::{generate, DgpName, DgpSpec};
use tailadrf::dml::{crossfit_nuisances, LossKind, DEFAULT_FOLDS};
use tailadrf::harness::{
    fit_core, run_estimator, run_panel, run_tail_pipeline, summarize, treatment_grid, write_cells_csv, write_sample_csv,
    EstimatorKind, EstimatorOutput, FitConfig, PanelConfig,
};
use tailadrf::tail::{build_tail_report, ThresholdConfig};

use crate::io::{cell, mapping_for, read_residuals, read_sample, sink, summary_path};

#[derive(Parser, Debug)]
#[command(name = "tailadrf", version, about = "Robust dose-response curves with tail-conditional functionals")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON config: a panel config for `panel`, a column mapping for `fit` and `ingest`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic sample as CSV `x0..x4,t,y`.
    Simulate {
        #[arg(long)]
        dgp: String,
        #[arg(long, default_value_t = 0.1)]
        p: f64,
        #[arg(long, default_value_t = 1000)]
        n: usize,
    },
    /// Fit the dose-response curve, optionally with tail functionals or a baseline.
    Fit(FitArgs),
    /// Global threshold fit on a residual column `r`, as flat JSON.
    Tail(TailArgs),
    /// Run a simulation panel from `--config`.
    Panel {
        /// Bootstrap replicates for the summary comparisons.
        #[arg(long, default_value_t = 2000)]
        bootstrap_b: usize,
    },
    /// Map columns of an arbitrary CSV onto `x0..,t,y`.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        treatment: Option<String>,
        #[arg(long)]
        outcome: Option<String>,
        #[arg(long, value_delimiter = ',')]
        covariates: Vec<String>,
        #[arg(long)]
        log1p: bool,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Loss {
    L2,
    Huber,
    Welsch,
}

impl From<Loss> for LossKind {
    fn from(l: Loss) -> Self {
        match l {
            Loss::L2 => LossKind::StandardL2,
            Loss::Huber => LossKind::Huber,
            Loss::Welsch => LossKind::Welsch,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Baseline {
    Qr,
    Rpwm,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Sample CSV; columns `t`, `y` and covariates unless `--config` maps them.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Loss::Welsch)]
    loss: Loss,
    #[arg(long, default_value_t = 25)]
    grid_points: usize,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    folds: usize,
    /// Emit return level, shortfall, recovered mean and tail effect per grid point.
    #[arg(long)]
    tail_functionals: bool,
    #[arg(long, value_delimiter = ',', default_value = "0.01")]
    alpha: Vec<f64>,
    #[arg(long, value_enum, conflicts_with = "tail_functionals")]
    baseline: Option<Baseline>,
    /// Stabilized generalized-propensity weights in the tail stage.
    #[arg(long)]
    gps: bool,
}

#[derive(Args, Debug)]
struct TailArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    min_exc: Option<usize>,
    #[arg(long)]
    ks_min: Option<f64>,
    #[arg(long)]
    bootstrap_b: Option<usize>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Simulate { dgp, p, n } => {
            if cli.config.is_some() {
                log::warn!("--config is ignored by simulate");
            }
            let name: DgpName = dgp.parse()?;
            let sample = generate(&DgpSpec::new(name, *p, *n, cli.seed))?;
            write_sample_csv(&sample, sink(out)?)?;
        }
        Command::Fit(args) => fit(args, cli.seed, cli.config.as_deref(), out)?,
        Command::Tail(args) => {
            if cli.config.is_some() {
                log::warn!("--config is ignored by tail");
            }
            tail(args, cli.seed, out)?
        }
        Command::Panel { bootstrap_b } => {
            let Some(path) = cli.config.as_deref() else {
                bail!("panel needs --config");
            };
            panel(path, *bootstrap_b, cli.seed, out)?
        }
        Command::Ingest { input, treatment, outcome, covariates, log1p } => {
            let mut mapping = match (&cli.config, treatment, outcome) {
                (Some(_), _, _) => mapping_for(input, cli.config.as_deref())?,
                (None, Some(t), Some(y)) => tailadrf::harness::ColumnMapping {
                    treatment: t.clone(),
                    outcome: y.clone(),
                    covariates: Vec::new(),
                },
                _ => bail!("ingest needs --treatment and --outcome, or --config"),
            };
            if !covariates.is_empty() {
                mapping.covariates = covariates.clone();
            }
            let got = read_sample(input, &mapping, *log1p)?;
            log::info!("ingested {} rows", got.sample.len());
            write_sample_csv(&got.sample, sink(out)?)?;
        }
    }
    Ok(())
}

fn fit(args: &FitArgs, seed: u64, config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let mapping = mapping_for(&args.input, config)?;
    let sample = read_sample(&args.input, &mapping, false)?.sample;
    let grid = treatment_grid(&sample.t, args.grid_points, args.gps)?;
    let cfg = FitConfig { k_folds: args.folds, gps: args.gps, ..FitConfig::with_seed(seed) };
    if args.alpha.iter().any(|a| !(*a > 0.0 && *a < 0.5)) {
        bail!("--alpha values must lie in (0, 0.5)");
    }
    let mut w = csv::Writer::from_writer(sink(out)?);
    if let Some(b) = args.baseline {
        let kind = match b {
            Baseline::Qr => EstimatorKind::Qr,
            Baseline::Rpwm => EstimatorKind::Rpwm,
        };
        let output = run_estimator(&sample, kind, &grid, &args.alpha, &cfg)?;
        write_baseline(&mut w, &output, &args.alpha)?;
    } else if args.tail_functionals {
        let nuisance = crossfit_nuisances(&sample, cfg.k_folds, cfg.seed)?;
        let p = run_tail_pipeline(&sample, &nuisance, &grid, args.loss.into(), &args.alpha, &cfg)?;
        if p.functionals.iter().any(|f| f.refused) {
            log::warn!("the global tail fit refused; tail functionals are blank");
        }
        let several = args.alpha.len() > 1;
        w.write_record(header(several))?;
        for f in &p.functionals {
            for k in 0..f.grid.len() {
                let mut row = Vec::with_capacity(9);
                if several {
                    row.push(f.alpha.to_string());
                }
                row.extend([
                    f.grid[k].to_string(),
                    f.theta_w[k].to_string(),
                    cell(f.ey_recovered[k]),
                    cell(f.q_alpha[k]),
                    f.q_mode[k].map_or_else(String::new, |m| m.as_str().to_string()),
                    cell(f.s_alpha[k]),
                    cell(f.cte[k]),
                    f.refused.to_string(),
                ]);
                w.write_record(&row)?;
            }
        }
    } else {
        let nuisance = crossfit_nuisances(&sample, cfg.k_folds, cfg.seed)?;
        let core = fit_core(&sample, &nuisance, &grid, args.loss.into())?;
        w.write_record(["t", "theta_hat"])?;
        for (t, th) in core.curve.grid.iter().zip(&core.curve.theta) {
            w.write_record([t.to_string(), th.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn header(with_alpha: bool) -> Vec<&'static str> {
    let mut h = Vec::with_capacity(9);
    if with_alpha {
        h.push("alpha");
    }
    h.extend(["t", "theta_w", "ey_recovered", "q_alpha", "mode", "s_alpha", "cte", "refused"]);
    h
}

/// Baselines share the functional schema; columns they do not estimate stay empty.
fn write_baseline<W: Write>(w: &mut csv::Writer<W>, output: &EstimatorOutput, alphas: &[f64]) -> Result<()> {
    let several = alphas.len() > 1;
    w.write_record(header(several))?;
    for (j, (&a, q)) in alphas.iter().zip(&output.q).enumerate() {
        for k in 0..output.grid.len() {
            let s = if j == 0 { output.s.as_ref().and_then(|s| s[k]) } else { None };
            let mut row = Vec::with_capacity(9);
            if several {
                row.push(a.to_string());
            }
            row.extend([
                output.grid[k].to_string(),
                output.core[k].to_string(),
                String::new(),
                cell(q[k]),
                String::new(),
                cell(s),
                String::new(),
                output.refused.to_string(),
            ]);
            w.write_record(&row)?;
        }
    }
    Ok(())
}

fn tail(args: &TailArgs, seed: u64, out: Option<&Path>) -> Result<()> {
    let r = read_residuals(&args.input)?;
    let d = ThresholdConfig::with_seed(seed);
    let cfg = ThresholdConfig {
        grid_size: args.grid_size.unwrap_or(d.grid_size),
        n_min_exc: args.min_exc.unwrap_or(d.n_min_exc),
        p_ks_min: args.ks_min.unwrap_or(d.p_ks_min),
        bootstrap_b: args.bootstrap_b.unwrap_or(d.bootstrap_b),
        ..d
    };
    let report = build_tail_report(&r, &cfg)?;
    let mut w = sink(out)?;
    serde_json::to_writer_pretty(&mut w, &report.to_json())?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn panel(config: &Path, reps: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let cfg = PanelConfig::from_json_file(config).with_context(|| format!("loading {}", config.display()))?;
    let cells = run_panel(&cfg)?;
    let target = out.map(Path::to_path_buf).or_else(|| cfg.output_path.clone());
    let mut w = sink(target.as_deref())?;
    write_cells_csv(&cells, &cfg.alphas, &mut w)?;
    w.flush()?;
    let summary = serde_json::Value::Object(summarize(&cells, &cfg.alphas, reps, seed));
    match target {
        Some(p) => {
            let sp = summary_path(&p);
            std::fs::write(&sp, serde_json::to_string_pretty(&summary)? + "\n")
                .with_context(|| format!("writing {}", sp.display()))?;
        }
        None => eprintln!("{}", serde_json::to_string_pretty(&summary)?),
    }
    let errors = cells.iter().filter(|c| c.error.is_some()).count();
    if errors > 0 {
        log::warn!("{errors} cells failed; see the error counts in the summary");
    }
    Ok(())
}
