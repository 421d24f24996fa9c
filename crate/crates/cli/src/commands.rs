//! Batch subcommands. Each writes its artifacts under `--out` and prints a
//! short table to stdout.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use dashlab::auction::BidGrid;
use dashlab::benchmarks::{score_table, write_score_csv, DEFAULT_BIN_WIDTH};
use dashlab::dashboard::{default_payload, Variant};
use dashlab::experiment::{
    audit_records, read_jsonl, simulate, summarize, write_jsonl, write_summary_csv, ExperimentConfig,
    IncentiveScheme, StimulusContext, SummaryOptions, TrialRecord, DEFAULT_RESAMPLES,
};
use dashlab::inference::quantal::{FitBounds, FitObjective};
use dashlab::inference::{compare_models_with, write_mse_csv, write_results_csv, BidDataset, ModelKind};
use dashlab::{Error, Result};

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Preset name (exp1, exp2) or path to a TOML configuration.
    #[arg(long, global = true, default_value = "exp1")]
    pub config: String,
    /// Output directory (default `out`; for `serve`, the session data
    /// directory, default `$DASHLAB_DATA_DIR` or `data`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

impl Common {
    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }

    pub fn context(&self) -> Result<(ExperimentConfig, StimulusContext)> {
        let config = self.experiment()?;
        let ctx = StimulusContext::new(config.stimuli.load()?)?;
        Ok((config, ctx))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let dir = self.out_dir();
        fs::create_dir_all(&dir)?;
        Ok(BufWriter::new(File::create(dir.join(name))?))
    }
}

fn write_json<T: serde::Serialize>(common: &Common, name: &str, value: &T) -> Result<PathBuf> {
    let mut w = common.create(name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(common.out_dir().join(name))
}

/// Trial log given by `--log`, or a fresh simulation of the configuration.
fn load_or_simulate(common: &Common, log: Option<&Path>) -> Result<(StimulusContext, Vec<TrialRecord>)> {
    let (config, ctx) = common.context()?;
    let records = match log {
        Some(path) => read_jsonl(BufReader::new(File::open(path)?))?,
        None => simulate(&ctx, &config.sessions(ctx.stimuli())?)?,
    };
    if records.is_empty() {
        return Err(Error::Domain("trial log is empty".into()));
    }
    Ok((ctx, records))
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Participants per condition; overrides the configuration.
    #[arg(long)]
    pub n: Option<usize>,
}

pub fn simulate_cmd(common: &Common, args: &SimulateArgs) -> Result<()> {
    let (mut config, ctx) = common.context()?;
    if let Some(n) = args.n {
        config.n_per_condition = n;
        config.validate()?;
    }
    let sessions = config.sessions(ctx.stimuli())?;
    let records = simulate(&ctx, &sessions)?;
    let mut w = common.create("trials.jsonl")?;
    write_jsonl(&mut w, &records)?;
    w.flush()?;
    let audit = audit_records(&ctx, &records, true)?;
    write_json(common, "audit.json", &audit)?;
    println!(
        "{} trials, {} participants, {} audit violations -> {}",
        records.len(),
        sessions.len(),
        audit.violations.len(),
        common.out_dir().join("trials.jsonl").display()
    );
    if !audit.is_clean() {
        return Err(Error::Validation(format!("audit failed: {}", audit.violations.join("; "))));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ObjectiveArg {
    Likelihood,
    SquaredError,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Trial log (JSONL); simulated from the configuration when absent.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Models whose per-participant estimates are written (br, qr, qr_crra).
    /// The MSE table always compares all three.
    #[arg(long = "model", value_parser = parse_model)]
    pub models: Vec<ModelKind>,
    /// Keep trials excluded for negative expected utility.
    #[arg(long)]
    pub keep_excluded: bool,
    /// Objective of the risk-neutral quantal fit.
    #[arg(long, value_enum, default_value = "likelihood")]
    pub objective: ObjectiveArg,
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn infer_cmd(common: &Common, args: &InferArgs) -> Result<()> {
    let (ctx, records) = load_or_simulate(common, args.log.as_deref())?;
    let dataset = BidDataset::from_records(ctx.stimuli().rules.clone(), &records, args.keep_excluded)?;
    let objective = match args.objective {
        ObjectiveArg::Likelihood => FitObjective::Likelihood,
        ObjectiveArg::SquaredError => FitObjective::ProbabilitySquaredError,
    };
    let cmp = compare_models_with(&dataset, &ModelKind::ALL, &FitBounds::default(), objective)?;
    let selected: Vec<_> = if args.models.is_empty() {
        cmp.results.clone()
    } else {
        cmp.results.iter().filter(|r| args.models.contains(&r.model)).cloned().collect()
    };
    write_results_csv(common.create("inference.csv")?, &selected)?;
    write_mse_csv(common.create("mse.csv")?, &cmp.rows)?;
    println!("{:<8} {:>6} {:>12} {:>8} {:>8}", "model", "n", "mse", "flagged", "r_hat");
    for row in &cmp.rows {
        let r_hat = row.r_hat.map(|r| format!("{r:.3}")).unwrap_or_else(|| "-".into());
        println!("{:<8} {:>6} {:>12.3} {:>8} {:>8}", row.model.as_str(), row.n, row.mse, row.n_flagged, r_hat);
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Width of the bid bins of the calibrated agent, in AC.
    #[arg(long, default_value_t = DEFAULT_BIN_WIDTH)]
    pub bin_width: f64,
}

pub fn benchmark_cmd(common: &Common, args: &BenchmarkArgs) -> Result<()> {
    let (ctx, records) = load_or_simulate(common, args.log.as_deref())?;
    let grid = BidGrid::fine();
    let rows = score_table(&ctx.stimuli().rules, &records, &grid, args.bin_width)?;
    write_score_csv(common.create("scores.csv")?, &rows)?;
    let incentive = IncentiveScheme::new(ctx.prior(), ctx.cost(), &grid)?;
    write_json(common, "incentive.json", &incentive)?;
    println!("{:<40} {:<11} {:>10} {:>10}", "condition", "agent", "raw", "normalized");
    for r in &rows {
        println!("{:<40} {:<11} {:>10.4} {:>10.4}", r.condition, r.agent.as_str(), r.score.raw, r.score.normalized);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Allocation,
    Curves,
    Heatmap,
    TrueCostCurve,
    All,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub variant: VariantArg,
    /// Stimulus id; every stimulus when absent.
    #[arg(long)]
    pub rule: Option<usize>,
}

pub fn export_dashboard_cmd(common: &Common, args: &ExportArgs) -> Result<()> {
    let (_, ctx) = common.context()?;
    let variants = match args.variant {
        VariantArg::Allocation => vec![Variant::Allocation],
        VariantArg::Curves => vec![Variant::Curves],
        VariantArg::Heatmap => vec![Variant::Heatmap],
        VariantArg::TrueCostCurve => vec![Variant::TrueCostCurve],
        VariantArg::All => vec![Variant::Allocation, Variant::Curves, Variant::Heatmap, Variant::TrueCostCurve],
    };
    let ids: Vec<usize> = match args.rule {
        Some(id) => {
            ctx.rule(id)?;
            vec![id]
        }
        None => (0..ctx.stimuli().len()).collect(),
    };
    let mut written = 0;
    for v in variants {
        for &id in &ids {
            let payload = default_payload(v, id, ctx.rule(id)?)?;
            write_json(common, &format!("{}_rule{id}.json", v.as_str()), &payload)?;
            written += 1;
        }
    }
    println!("{written} payloads -> {}", common.out_dir().display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
    pub resamples: usize,
}

pub fn report_cmd(common: &Common, args: &ReportArgs) -> Result<()> {
    let (ctx, records) = load_or_simulate(common, args.log.as_deref())?;
    let incentive = IncentiveScheme::new(ctx.prior(), ctx.cost(), &BidGrid::fine())?;
    let opts = SummaryOptions {
        resamples: args.resamples,
        seed: common.seed.unwrap_or(0),
        incentive_fee: Some(incentive.fee),
    };
    let rows = summarize(&records, &opts)?;
    write_summary_csv(common.create("summary.csv")?, &rows)?;
    write_json(common, "summary.json", &rows)?;
    let audit = audit_records(&ctx, &records, false)?;
    write_json(common, "audit.json", &audit)?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
    println!("{:<40} {:>6} {:>7} {:>17} {:>7} {:>7}", "condition", "n", "ratio", "95% CI", "under", "excl");
    for r in &rows {
        println!(
            "{:<40} {:>6} {:>7} {:>17} {:>7} {:>7.3}",
            r.condition,
            r.n_trials,
            fmt(r.mean_ratio),
            format!("[{}, {}]", fmt(r.ci_low), fmt(r.ci_high)),
            fmt(r.undershading_rate),
            r.exclusion_rate
        );
    }
    if !audit.is_clean() {
        eprintln!("warning: {} audit violations, see audit.json", audit.violations.len());
    }
    Ok(())
}
