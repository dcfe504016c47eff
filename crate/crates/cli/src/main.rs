use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use amr_core::bench::{export_results, run_monte_carlo, SuiteEstimator};
use amr_core::config::{load_estimator_config, load_experiment_config};
use amr_core::dataset::{load_observations, ColumnSchema, ObservationSet};
use amr_core::diagnostics::{
    imbalance_profile, propensity_histogram, summarize_weights, write_imbalance_csv, write_weight_summaries_csv,
    ImbalanceConvention, DEFAULT_BINS,
};
use amr_core::estimators::{
    amr_from_nuisances, att_atc_from_nuisances, estimate_aipw, estimate_ipw, mr_from_nuisances, suite_from_nuisances,
    CrossFitNuisances, EstimateReport, EstimatorConfig, Method, TreatedMode,
};
use amr_core::synth::{generate_synthetic, Mu0Form, SimulationConfig};

mod report;

#[derive(Parser)]
#[command(
    name = "amr",
    version,
    about = "Treatment effect estimation with adaptive moment-regression weights"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct InputArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "y")]
    y_col: String,
    #[arg(long, default_value = "a")]
    a_col: String,
    /// Comma list of names or prefix globs such as "x*".
    #[arg(long, default_value = "x*")]
    x_cols: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl InputArgs {
    fn load(&self) -> Result<(ObservationSet, EstimatorConfig)> {
        let schema = ColumnSchema::new(&self.y_col, &self.a_col, &self.x_cols)?;
        let data =
            load_observations(&self.input, &schema).with_context(|| format!("reading {}", self.input.display()))?;
        let mut cfg = match &self.config {
            Some(p) => load_estimator_config(p)?,
            None => EstimatorConfig::default(),
        };
        if let Some(k) = self.folds {
            cfg.folds = k;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok((data, cfg))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimateMethod {
    Ipw,
    Aipw,
    Mr,
    Amr,
    Att,
    Atc,
    Suite,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mu0Arg {
    Nonlinear,
    Linear,
    Zero,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the average treatment effect from a CSV file.
    Estimate {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum, default_value = "amr")]
        method: EstimateMethod,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a synthetic dataset.
    Simulate {
        #[arg(long, default_value_t = 400)]
        n: usize,
        #[arg(long = "p-i", default_value_t = 5)]
        p_i: usize,
        #[arg(long, default_value_t = 5.0)]
        effect: f64,
        #[arg(long, value_enum, default_value = "nonlinear")]
        mu0: Mu0Arg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write imbalance, weight and propensity diagnostics.
    Diagnose {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out_prefix: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
    },
    /// Run a Monte Carlo sweep. Exits with status 2 if any cell is flagged.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn estimate(data: &ObservationSet, cfg: &EstimatorConfig, method: EstimateMethod) -> Result<Vec<EstimateReport>> {
    let cf = CrossFitNuisances::fit(data, cfg)?;
    let fp = cfg.fingerprint();
    let held = cf.held_out();
    Ok(match method {
        EstimateMethod::Ipw => {
            let mut r = estimate_ipw(data, held.pi())?;
            r.folds = cf.folds();
            r.fingerprint = fp;
            vec![r]
        }
        EstimateMethod::Aipw => {
            let mut r = estimate_aipw(data, &held)?;
            r.folds = cf.folds();
            r.fingerprint = fp;
            vec![r]
        }
        EstimateMethod::Mr => vec![mr_from_nuisances(data, &cf, &cfg.weights, fp)?],
        EstimateMethod::Amr => vec![amr_from_nuisances(data, &cf, &cfg.weights, fp)?],
        EstimateMethod::Att => vec![att_atc_from_nuisances(data, &cf, &cfg.weights, TreatedMode::Att, fp)?],
        EstimateMethod::Atc => vec![att_atc_from_nuisances(data, &cf, &cfg.weights, TreatedMode::Atc, fp)?],
        EstimateMethod::Suite => suite_from_nuisances(data, &cf, &cfg.weights, fp)?,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn diagnose(data: &ObservationSet, cfg: &EstimatorConfig, prefix: &Path, bins: usize) -> Result<Vec<PathBuf>> {
    let cf = CrossFitNuisances::fit(data, cfg)?;
    let reports = suite_from_nuisances(data, &cf, &cfg.weights, cfg.fingerprint())?;
    let mut profiles = Vec::new();
    let mut summaries = Vec::new();
    for r in &reports {
        let label = match r.method {
            Method::Ipw => "h",
            Method::Mr => "w",
            Method::Amr => "w_star",
            _ => continue,
        };
        let w = r.weights.as_ref().context("report without weights")?;
        profiles.push(imbalance_profile(data.x(), w, ImbalanceConvention::default(), label)?);
        summaries.push((label.to_string(), summarize_weights(w)?));
    }
    let hist = propensity_histogram(cf.held_out().pi(), bins)?;
    let name = |suffix: &str| {
        let mut s = prefix.as_os_str().to_os_string();
        s.push(suffix);
        PathBuf::from(s)
    };
    let paths = vec![name("imbalance.csv"), name("weights.csv"), name("propensity_hist.csv")];
    write_imbalance_csv(create(&paths[0])?, data.covariate_names(), &profiles)?;
    write_weight_summaries_csv(create(&paths[1])?, &summaries)?;
    hist.write_csv(create(&paths[2])?)?;
    Ok(paths)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Estimate {
            input,
            method,
            alpha,
            out,
        } => {
            if !(alpha > 0.0 && alpha < 1.0) {
                bail!("alpha must lie in (0, 1)");
            }
            let (data, cfg) = input.load()?;
            let reports = estimate(&data, &cfg, method)?;
            report::write_reports(create(&out)?, &reports, alpha)?;
            for r in &reports {
                println!("{}\t{}", r.method, r.theta_hat);
            }
        }
        Command::Simulate {
            n,
            p_i,
            effect,
            mu0,
            seed,
            out,
        } => {
            let cfg = SimulationConfig {
                n,
                p_i,
                effect,
                mu0: match mu0 {
                    Mu0Arg::Nonlinear => Mu0Form::Nonlinear,
                    Mu0Arg::Linear => Mu0Form::Linear,
                    Mu0Arg::Zero => Mu0Form::Zero,
                },
                seed,
                ..SimulationConfig::default()
            };
            let sample = generate_synthetic(&cfg)?;
            sample.data.save_csv(&out)?;
            println!("theta\t{}", sample.theta);
        }
        Command::Diagnose {
            input,
            out_prefix,
            bins,
        } => {
            let (data, cfg) = input.load()?;
            for p in diagnose(&data, &cfg, &out_prefix, bins)? {
                println!("{}", p.display());
            }
        }
        Command::Bench { config, out, workers } => {
            let mut cfg = load_experiment_config(&config)?;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            cfg.validate()?;
            let run = run_monte_carlo(
                &cfg,
                &SuiteEstimator {
                    experiment: cfg.clone(),
                },
            )?;
            export_results(&run.table, &out)?;
            let flagged = run.table.flagged();
            for r in &flagged {
                log::warn!("flagged cell n={} p_i={} {}: {:?}", r.n, r.p_i, r.method, r.flags);
            }
            if !flagged.is_empty() {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
