//! `lobpredict`: ingest ITCH data, generate synthetic markets, export labels,
//! and run the rolling per-day evaluation.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lobpredict_core::book::write_snapshots_csv;
use lobpredict_core::metrics::{aggregate_daily, render_comparison, render_table};
use lobpredict_core::runner::{
    compare_variants, export_labels, load_days, read_day_outcomes, run_range, snapshots_from_itch,
    write_snapshot_dir, DataSource, DayOutcome, InputChecksum, Manifest,
};
use lobpredict_core::{ExperimentConfig, Variant};

#[derive(Parser)]
#[command(
    name = "lobpredict",
    version,
    about = "Mid-price movement prediction from limit order books"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=3` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path, &self.overrides)?,
            None => ExperimentConfig::from_toml("", &self.overrides)?,
        };
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Replay one day of ITCH 5.0 for a symbol into a snapshot CSV.
    Ingest {
        /// Binary ITCH file (length-prefixed messages).
        input: PathBuf,
        #[arg(short, long)]
        symbol: String,
        /// Output CSV; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Write the configured synthetic days as snapshot CSVs.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory for `YYYY-MM-DD.csv` files.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Export labeled-sample archives for every day with scaler history.
    Label {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Score every eligible day and write reports to `output_dir`.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the protocol once per input variant on the same data.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated variants, e.g. `prices_only,level1`.
        #[arg(short, long, value_delimiter = ',', required = true)]
        variants: Vec<Variant>,
    },
    /// Re-render the aggregate table of one or more finished runs.
    Report {
        /// Run output directories; several produce a side-by-side table.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Print the aggregate as JSON instead (single directory only).
        #[arg(long)]
        json: bool,
    },
    /// Print the effective config after overrides.
    Config {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Ingest {
            input,
            symbol,
            output,
        } => ingest(&input, &symbol, output.as_deref()),
        Command::Synth { config, output } => synth(&config.load()?, &output),
        Command::Label { config, output } => label(&config.load()?, &output),
        Command::Run { config } => {
            let cfg = config.load()?;
            let r = run_range(&cfg)?;
            print!("{}", r.table);
            eprintln!(
                "{} days evaluated, {} failed; outputs in {}",
                r.outcomes.len() - r.failures(),
                r.failures(),
                cfg.output_dir.display()
            );
            Ok(())
        }
        Command::Compare { config, variants } => {
            let cfg = config.load()?;
            let cmp = compare_variants(&cfg, &variants)?;
            print!("{}", cmp.table);
            eprintln!("outputs in {}", cfg.output_dir.display());
            Ok(())
        }
        Command::Report { dirs, json } => report(&dirs, json),
        Command::Config { config } => {
            print!("{}", config.load()?.to_toml());
            Ok(())
        }
    }
}

fn ingest(input: &Path, symbol: &str, output: Option<&Path>) -> Result<()> {
    let bytes = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let snaps = snapshots_from_itch(&bytes, symbol, &input.display().to_string())?;
    match output {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_snapshots_csv(BufWriter::new(file), &snaps)?;
            eprintln!("{} snapshots written to {}", snaps.len(), path.display());
        }
        None => write_snapshots_csv(io::stdout().lock(), &snaps)?,
    }
    Ok(())
}

fn write_manifest(dir: &Path, cfg: &ExperimentConfig, inputs: &[InputChecksum]) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&Manifest::new(cfg, inputs, &[]))?;
    text.push('\n');
    let path = dir.join("manifest.json");
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth(cfg: &ExperimentConfig, output: &Path) -> Result<()> {
    if !matches!(cfg.data, DataSource::Synth { .. }) {
        bail!("config data source is not synthetic");
    }
    let data = load_days(cfg)?;
    let written = write_snapshot_dir(output, &data.days)?;
    write_manifest(output, cfg, &data.inputs)?;
    eprintln!("{} days written to {}", written.len(), output.display());
    Ok(())
}

fn label(cfg: &ExperimentConfig, output: &Path) -> Result<()> {
    let data = load_days(cfg)?;
    let written = export_labels(cfg, &data.days, output)?;
    write_manifest(output, cfg, &data.inputs)?;
    eprintln!("{} archives written to {}", written.len(), output.display());
    Ok(())
}

fn report(dirs: &[PathBuf], json: bool) -> Result<()> {
    if json && dirs.len() != 1 {
        bail!("--json takes exactly one directory");
    }
    let mut columns = Vec::new();
    let mut failed = Vec::new();
    for dir in dirs {
        let outcomes = read_day_outcomes(dir)?;
        let reports: Vec<_> = outcomes
            .iter()
            .filter_map(|o| o.record().map(|r| r.report.clone()))
            .collect();
        for o in &outcomes {
            if let DayOutcome::Failed { date, error } = o {
                failed.push(format!("FAILED {} {date}: {error}", dir.display()));
            }
        }
        if reports.is_empty() {
            bail!("{}: no evaluated days", dir.display());
        }
        let agg = aggregate_daily(&reports)?;
        let name = dir
            .file_name()
            .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        columns.push((name, agg));
    }
    let mut out = io::stdout().lock();
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(&columns[0].1)?)?;
    } else if columns.len() == 1 {
        write!(out, "{}", render_table(&columns[0].1))?;
    } else {
        write!(out, "{}", render_comparison(&columns))?;
    }
    for f in failed {
        writeln!(out, "{f}")?;
    }
    Ok(())
}
