use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use qkdsim_core::correction::{derive_corrected_bases, BasisMode};
use qkdsim_core::harness::{
    daily_cycle, default_config_text, derive_seed, emit_reports, prepare_state, run_pipeline, visibility,
    RunConfig, SessionReport,
};
use qkdsim_core::protocol::{evaluate, qber};
use qkdsim_core::qstate::{bell_psi_plus, concurrence, fidelity_with_pure, purity, DensityMatrix};
use qkdsim_core::timetag::{count_coincidences, find_delay, generate_streams, optimize_window, Party, TimestampStream};
use qkdsim_core::tomography::{reconstruct, simulate_tomography, TomographyRecord};
use qkdsim_core::{Error, Result};

#[derive(Parser)]
#[command(name = "qkdsim", version, about = "BBM92 link simulator with tomography-based basis correction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single session and write reports.
    Run(RunArgs),
    /// Run one session per slot over 24 hours and write reports.
    Daily(RunArgs),
    /// Simulate or reconstruct a tomography record.
    Tomo(TomoArgs),
    /// Derive corrected measurement bases from a density-matrix file.
    Correct {
        /// Density matrix text file (four rows of four complex entries).
        rho: PathBuf,
    },
    /// Count coincidences between two timestamp files.
    Coinc(CoincArgs),
    /// Simulate one acquisition and write Alice's and Bob's timestamp files.
    Streams(StreamArgs),
    /// Print or write the documented default configuration.
    GenConfig {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Scenario preset for single-session commands.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hour of day for single-session commands.
    #[arg(long)]
    hour: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    samples: Option<usize>,
    /// Seconds per sample.
    #[arg(long)]
    seconds: Option<f64>,
    /// Comma-separated basis modes (conventional, corrected).
    #[arg(long)]
    modes: Option<String>,
    /// Output directory (overrides the configuration and QKDSIM_OUT_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    optimize_window: bool,
}

#[derive(Args)]
struct TomoArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Reconstruct this record instead of simulating one.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Write the simulated record here.
    #[arg(long)]
    record_out: Option<PathBuf>,
    /// Write the reconstructed density matrix here.
    #[arg(long)]
    rho_out: Option<PathBuf>,
}

#[derive(Args)]
struct CoincArgs {
    #[arg(long)]
    alice: PathBuf,
    #[arg(long)]
    bob: PathBuf,
    /// Coincidence window in ps.
    #[arg(long, default_value_t = 1_000)]
    window: u64,
    /// Cross-correlation bin in ps.
    #[arg(long, default_value_t = 100)]
    bin: u64,
    /// Delay search half-range in ps.
    #[arg(long, default_value_t = 2_000_000)]
    range: u64,
    /// Use this delay instead of searching for it.
    #[arg(long, allow_hyphen_values = true)]
    delay: Option<i64>,
    /// Choose the window from a grid by keyrate subject to the QBER limit.
    #[arg(long)]
    optimize: bool,
    #[arg(long, default_value_t = 11.0)]
    qber_limit: f64,
    /// Basis mode label for the result row.
    #[arg(long, default_value = "corrected")]
    mode: String,
}

#[derive(Args)]
struct StreamArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = 1.0)]
    seconds: f64,
    #[arg(long, default_value = "corrected")]
    mode: String,
    /// Directory for alice/bob files.
    #[arg(long)]
    out: PathBuf,
    /// Write CSV instead of binary.
    #[arg(long)]
    csv: bool,
}

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    }
    .with_env_output_dir();
    if let Some(p) = &common.preset {
        cfg.scenario = p.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(h) = common.hour {
        cfg.hour = h;
    }
    Ok(cfg)
}

fn run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = load_config(&args.common)?;
    if let Some(n) = args.samples {
        cfg.samples_per_session = n;
    }
    if let Some(t) = args.seconds {
        cfg.acquisition_seconds = t;
    }
    if let Some(m) = &args.modes {
        cfg.basis_modes = m.split(',').map(|s| BasisMode::from_str(s.trim())).collect::<Result<_>>()?;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    cfg.optimize_window |= args.optimize_window;
    cfg.validate()?;
    Ok(cfg)
}

fn print_sessions(reports: &[SessionReport]) {
    println!(
        "{:<6} {:<18} {:<13} {:>12} {:>10} {:>9} {:>8}",
        "slot", "scenario", "mode", "keyrate_hz", "std", "qber_pct", "std"
    );
    for r in reports {
        for m in &r.modes {
            println!(
                "{:<6} {:<18} {:<13} {:>12.1} {:>10.1} {:>9.3} {:>8.3}",
                r.label, r.scenario, m.mode, m.keyrate.mean, m.keyrate.std, m.qber.mean, m.qber.std
            );
        }
    }
}

fn write_reports(reports: &[SessionReport], dir: &Path) -> Result<()> {
    for p in emit_reports(reports, dir)? {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn print_state(label: &str, rho: &DensityMatrix) {
    println!(
        "{label}: fidelity(Psi+) = {:.6}, concurrence = {:.6}, purity = {:.6}",
        fidelity_with_pure(rho, &bell_psi_plus()),
        concurrence(rho),
        purity(rho)
    );
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = run_config(&args)?;
            let report = run_pipeline(&cfg)?;
            let reports = [report];
            print_sessions(&reports);
            write_reports(&reports, &cfg.output_dir)
        }
        Command::Daily(args) => {
            let cfg = run_config(&args)?;
            let reports = daily_cycle(&cfg)?;
            print_sessions(&reports);
            write_reports(&reports, &cfg.output_dir)
        }
        Command::Tomo(args) => {
            let record = match &args.input {
                Some(p) => TomographyRecord::from_text(&read_text(p)?)?,
                None => {
                    let cfg = load_config(&args.common)?;
                    cfg.validate()?;
                    let s = cfg.resolve_scenario(&cfg.scenario)?;
                    let prepared = prepare_state(&cfg, &s, cfg.hour, cfg.seed, false)?;
                    print_state("delivered", &prepared.delivered);
                    let rate = s.source.pair_rate
                        * s.channel.alice_transmission
                        * s.channel.bob_transmission
                        * s.detector.efficiency.powi(2);
                    simulate_tomography(
                        &prepared.delivered,
                        rate,
                        cfg.tomography_seconds_per_projection,
                        derive_seed(cfg.seed, &[0]),
                    )?
                }
            };
            if let Some(p) = &args.record_out {
                write_text(p, &record.to_text())?;
            }
            let recon = reconstruct(&record)?;
            print_state("reconstructed", &recon.state);
            println!("max residual = {:.6}", recon.max_residual);
            if recon.residual_warning {
                eprintln!("warning: tomography residual is large; the counts fit no single state well");
            }
            print!("{}", recon.state.to_text());
            if let Some(p) = &args.rho_out {
                write_text(p, &recon.state.to_text())?;
            }
            Ok(())
        }
        Command::Correct { rho } => {
            let rho = DensityMatrix::from_text(&read_text(&rho)?)?;
            let set = derive_corrected_bases(&rho)?;
            if set.low_concurrence_warning {
                eprintln!("warning: concurrence {:.3} is below 0.7", set.concurrence);
            }
            print!("{}", set.report());
            Ok(())
        }
        Command::Coinc(args) => {
            let a = TimestampStream::load(Party::Alice, &args.alice)?;
            let b = TimestampStream::load(Party::Bob, &args.bob)?;
            let mode = BasisMode::from_str(&args.mode)?;
            let delay = match args.delay {
                Some(d) => d,
                None => find_delay(&a, &b, args.range, args.bin)?,
            };
            let table = if args.optimize {
                let grid = RunConfig::default().window_grid_ps;
                let choice = optimize_window(&a, &b, delay, args.qber_limit, &grid)?;
                if !choice.met {
                    eprintln!("warning: no window met the QBER limit; using the minimum-QBER window");
                }
                choice.table
            } else {
                count_coincidences(&a, &b, delay, args.window)
            };
            print!("{}", table.to_text());
            let result = evaluate(&table, mode, "coinc", args.qber_limit);
            println!("{}", qkdsim_core::protocol::CSV_HEADER);
            println!("{}", result.csv_row());
            if let Ok(v) = visibility(&table) {
                println!("visibility H/V = {:.2} %, D/A = {:.2} %", v.hv, v.da);
            }
            qber(&table).map(|_| ())
        }
        Command::Streams(args) => {
            let cfg = load_config(&args.common)?;
            cfg.validate()?;
            let mode = BasisMode::from_str(&args.mode)?;
            let s = cfg.resolve_scenario(&cfg.scenario)?;
            let prepared = prepare_state(&cfg, &s, cfg.hour, cfg.seed, mode == BasisMode::Corrected)?;
            let m = prepared.measurement(mode)?;
            let (a, b) = generate_streams(&prepared.delivered, &m, &s, args.seconds, derive_seed(cfg.seed, &[3]))?;
            std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
            let ext = if args.csv { "csv" } else { "ttag" };
            for (name, stream) in [("alice", &a), ("bob", &b)] {
                let path = args.out.join(format!("{name}.{ext}"));
                stream.save(&path)?;
                eprintln!("wrote {} ({} events)", path.display(), stream.len());
            }
            Ok(())
        }
        Command::GenConfig { out } => {
            let text = default_config_text();
            match out {
                Some(p) => write_text(&p, &text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
