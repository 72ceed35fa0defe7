use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use ddsw_core::dd_lqr::build_sdp;
use ddsw_core::run::{
    bounds_command, experiment_window, lqr_check_command, run_scenario, write_trace_csv, write_trace_json,
};
use ddsw_core::scenario::{builtin_names, builtin_source, load_scenario, ScenarioConfig};
use ddsw_core::Error;

const EXIT_SCHEMA: u8 = 3;
const EXIT_DIMENSION: u8 = 4;
const EXIT_WINDOW: u8 = 5;
const EXIT_UNCONTROLLABLE: u8 = 6;
const EXIT_SIMULATION: u8 = 7;
const EXIT_INVARIANT: u8 = 8;
const EXIT_PARAMETER: u8 = 9;
const EXIT_LQR: u8 = 10;
const EXIT_IO: u8 = 11;

#[derive(Parser, Debug)]
#[command(name = "ddsw", version, about = "Online data-driven stabilization of switched linear systems")]
struct Cli {
    /// Replaces the scenario seed.
    #[arg(long, global = true, env = "DDSW_SEED")]
    seed: Option<u64>,

    /// Directory for traces and reports. Without it, reports go to stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Trace file format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Scenario edit as dotted.key=value, repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Runs the closed loop for one or more scenarios in parallel.
    Simulate {
        /// Builtin names or scenario file paths.
        #[arg(required = true)]
        scenarios: Vec<String>,
    },
    /// Prints the stability constants of a scenario's modes.
    Bounds { scenario: String },
    /// Compares the data-driven gain with the Riccati gain on one mode.
    LqrCheck {
        scenario: String,
        /// Also write the semidefinite program in the plain-text dump format.
        #[arg(long, value_name = "FILE")]
        dump_sdp: Option<PathBuf>,
    },
    /// Lists the bundled scenarios.
    ListBuiltin {
        /// Print the scenario source instead of the name.
        #[arg(long)]
        show: Option<String>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Schema(_) => EXIT_SCHEMA,
        Error::DimensionMismatch { .. } | Error::SequenceTooShort { .. } => EXIT_DIMENSION,
        Error::WindowTooShort { .. } => EXIT_WINDOW,
        Error::Uncontrollable { .. } => EXIT_UNCONTROLLABLE,
        Error::Parameter(_) => EXIT_PARAMETER,
        Error::Io(_) => EXIT_IO,
        Error::RankDeficient { .. }
        | Error::ExcitationFailure { .. }
        | Error::Unstable { .. }
        | Error::RiccatiDivergence { .. }
        | Error::Construction(_)
        | Error::SolverFailure { .. } => EXIT_SIMULATION,
    }
}

fn fail(context: &str, e: &Error) -> u8 {
    eprintln!("error: {context}: {e}");
    exit_code(e)
}

fn load(cli: &Cli, spec: &str) -> Result<ScenarioConfig, Error> {
    let mut ov = cli.overrides.clone();
    if let Some(s) = cli.seed {
        ov.push(format!("seed={s}"));
    }
    load_scenario(spec, &ov)
}

fn emit_json<T: serde::Serialize>(value: &T, path: Option<&Path>) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.into()))?;
    match path {
        Some(p) => fs::write(p, text + "\n")?,
        None => {
            if let Err(e) = writeln!(io::stdout().lock(), "{text}") {
                // a closed pipe (e.g. `| head`) is not an error
                if e.kind() != io::ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
    }
    Ok(())
}

/// File stem for a scenario; disambiguated by position when names repeat.
fn stems(cfgs: &[ScenarioConfig]) -> Vec<String> {
    cfgs.iter()
        .enumerate()
        .map(|(i, c)| {
            let dup = cfgs.iter().filter(|o| o.name == c.name).count() > 1;
            if dup {
                format!("{}-{i}", c.name)
            } else {
                c.name.clone()
            }
        })
        .collect()
}

struct Paths {
    trace: Option<PathBuf>,
    report: Option<PathBuf>,
}

fn output_paths(cli: &Cli, cfg: &ScenarioConfig, stem: &str) -> Paths {
    match &cli.output {
        Some(dir) => {
            let ext = match cli.format {
                Format::Csv => "csv",
                Format::Json => "json",
            };
            Paths {
                trace: Some(dir.join(format!("{stem}.trace.{ext}"))),
                report: Some(dir.join(format!("{stem}.report.json"))),
            }
        }
        None => Paths {
            trace: cfg.output.trace.as_ref().map(PathBuf::from),
            report: cfg.output.report.as_ref().map(PathBuf::from),
        },
    }
}

fn simulate_one(cli: &Cli, cfg: &ScenarioConfig, stem: &str) -> u8 {
    let out = match run_scenario(cfg) {
        Ok(o) => o,
        Err(e) => return fail(&cfg.name, &e),
    };
    let paths = output_paths(cli, cfg, stem);
    let mut report = out.report.clone();
    report.trace_path = paths.trace.as_ref().map(|p| p.display().to_string());

    // partial traces are written even when the loop stopped early
    if let Some(p) = &paths.trace {
        let res = File::create(p).and_then(|f| {
            let mut w = BufWriter::new(f);
            match cli.format {
                Format::Csv => write_trace_csv(&mut w, &out.trace, cfg.state_dim(), cfg.input_dim())?,
                Format::Json => write_trace_json(&mut w, &out.trace)?,
            }
            w.flush()
        });
        if let Err(e) = res {
            return fail(&cfg.name, &Error::Io(e));
        }
    }
    if let Err(e) = emit_json(&report, paths.report.as_deref()) {
        return fail(&cfg.name, &e);
    }
    if let Some(e) = &out.error {
        eprintln!("error: {}: {e}", cfg.name);
        return EXIT_SIMULATION;
    }
    if !report.ok {
        let s = &report.summary;
        let inv = &report.invariants;
        eprintln!(
            "error: {}: invariant violations (non-optimal solves {}, PE {}, rank {}, gain bound {}, growth bound {}{})",
            cfg.name,
            s.non_optimal_solves,
            s.pe_violations,
            s.rank_violations,
            inv.gain_violations.len(),
            inv.growth_violations.len(),
            inv.bounds_error.as_ref().map(|b| format!(", bounds: {b}")).unwrap_or_default(),
        );
        return EXIT_INVARIANT;
    }
    0
}

fn simulate(cli: &Cli, specs: &[String]) -> u8 {
    let mut cfgs = Vec::with_capacity(specs.len());
    for s in specs {
        match load(cli, s) {
            Ok(c) => cfgs.push(c),
            Err(e) => return fail(s, &e),
        }
    }
    if let Some(dir) = &cli.output {
        if let Err(e) = fs::create_dir_all(dir) {
            return fail(&dir.display().to_string(), &Error::Io(e));
        }
    }
    let names = stems(&cfgs);
    let codes: Vec<u8> = cfgs
        .par_iter()
        .zip(names.par_iter())
        .map(|(c, stem)| simulate_one(cli, c, stem))
        .collect();
    codes.into_iter().find(|&c| c != 0).unwrap_or(0)
}

fn report_path(cli: &Cli, cfg: &ScenarioConfig, suffix: &str) -> Result<Option<PathBuf>, Error> {
    match &cli.output {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Ok(Some(dir.join(format!("{}.{suffix}.json", cfg.name))))
        }
        None => Ok(None),
    }
}

fn bounds(cli: &Cli, spec: &str) -> u8 {
    let res = load(cli, spec).and_then(|cfg| {
        let rep = bounds_command(&cfg)?;
        let path = report_path(cli, &cfg, "bounds")?;
        emit_json(&rep, path.as_deref())
    });
    match res {
        Ok(()) => 0,
        Err(e) => fail(spec, &e),
    }
}

fn dump_sdp(cfg: &ScenarioConfig, path: &Path) -> Result<(), Error> {
    let window = experiment_window(cfg)?;
    let (problem, _) = build_sdp(&window, &cfg.solver);
    let mut w = BufWriter::new(File::create(path)?);
    problem.dump(&mut w)?;
    w.flush()?;
    Ok(())
}

fn lqr_check(cli: &Cli, spec: &str, dump: Option<&Path>) -> u8 {
    let res = load(cli, spec).and_then(|cfg| {
        let rep = lqr_check_command(&cfg)?;
        if let Some(p) = dump {
            dump_sdp(&cfg, p)?;
        }
        let path = report_path(cli, &cfg, "lqr-check")?;
        emit_json(&rep, path.as_deref())?;
        Ok(rep)
    });
    match res {
        Ok(rep) if rep.pass => 0,
        Ok(rep) => {
            eprintln!(
                "error: {spec}: gain error {:e}, cost error {:e} exceed {:e} (solver {})",
                rep.gain_error,
                rep.cost_error,
                rep.tolerance,
                rep.solver_status.as_str()
            );
            EXIT_LQR
        }
        Err(e) => fail(spec, &e),
    }
}

fn list_builtin(show: Option<&str>) -> u8 {
    match show {
        Some(name) => match builtin_source(name) {
            Some(src) => {
                let _ = write!(io::stdout().lock(), "{src}");
                0
            }
            None => fail(name, &Error::Parameter(format!("no builtin scenario named {name:?}"))),
        },
        None => {
            let mut lock = io::stdout().lock();
            for n in builtin_names() {
                let _ = writeln!(lock, "{n}");
            }
            0
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Simulate { scenarios } => simulate(&cli, scenarios),
        Command::Bounds { scenario } => bounds(&cli, scenario),
        Command::LqrCheck { scenario, dump_sdp } => lqr_check(&cli, scenario, dump_sdp.as_deref()),
        Command::ListBuiltin { show } => list_builtin(show.as_deref()),
    };
    ExitCode::from(code)
}
