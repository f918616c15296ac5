use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use stratified_hardy::{run, Command, ExperimentConfig, Report};

#[derive(Parser)]
#[command(
    name = "stratified-hardy",
    version,
    about = "Hardy-type inequalities on half-spaces of stratified groups"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Overrides the batch seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Pointwise identities on H^1..H^3.
    Identities,
    /// Hardy quotients against ((p-1)/p)^p.
    Hardy,
    /// Margins of the general inequality for each beta.
    GeneralHardy,
    /// Remainder slack for p >= 2.
    Remainder,
    /// Hardy quotients along the near-extremal family.
    Sharpness,
    /// Hardy-Sobolev ratios.
    Sobolev,
    /// Randomized check of the elementary vector inequality.
    BftFuzz,
    /// Weighted inequality with nu along t.
    LuanYoung,
}

#[derive(ValueEnum, Clone, Copy)]
enum Format {
    Csv,
    Json,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Identities => Command::Identities,
            Cmd::Hardy => Command::Hardy,
            Cmd::GeneralHardy => Command::GeneralHardy,
            Cmd::Remainder => Command::Remainder,
            Cmd::Sharpness => Command::Sharpness,
            Cmd::Sobolev => Command::Sobolev,
            Cmd::BftFuzz => Command::BftFuzz,
            Cmd::LuanYoung => Command::LuanYoung,
        }
    }
}

fn write_report(report: &Report, format: Format, out: Option<&PathBuf>) -> io::Result<()> {
    let mut sink: Box<dyn Write> = match out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    match format {
        Format::Csv => report.write_csv(&mut sink).map_err(io::Error::other)?,
        Format::Json => report.write_json(&mut sink)?,
    }
    sink.flush()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => match ExperimentConfig::from_file(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(3);
            }
        },
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    let report = match run(cli.command.into(), &cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Err(e) = write_report(&report, cli.format, cli.out.as_ref()) {
        eprintln!("error: cannot write report: {e}");
        return ExitCode::from(3);
    }
    if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        for r in report.rows.iter().filter(|r| !r.passed) {
            eprintln!(
                "contract violated: {} p={:?} value={} bound={} trial={}",
                r.csv.inequality_id, r.csv.p, r.csv.quotient_or_margin, r.csv.bound, r.trial
            );
        }
        ExitCode::from(2)
    }
}
