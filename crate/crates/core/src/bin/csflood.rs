use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::Parser;
use csflood::experiment::{parse_spec, run_experiment, write_summary_csv};
use csflood::{generate_signatures, run_session_traced, Error};

/// Run a compressed-sensing flooding experiment described by a TOML spec and
/// write one summary CSV row per grid cell.
#[derive(Debug, Parser)]
#[command(name = "csflood", version)]
struct Args {
    /// Experiment spec (TOML).
    spec: PathBuf,
    /// Summary CSV path. Falls back to the spec's `output`, then stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Override `sessions_per_cell`.
    #[arg(long)]
    sessions: Option<usize>,
    /// Omit the leading `# generated` comment line.
    #[arg(long)]
    no_header_timestamp: bool,
    /// Worker threads (default: one per core).
    #[arg(long)]
    parallelism: Option<usize>,
    /// Also write the signature matrix of the first grid cell as text.
    #[arg(long, value_name = "PATH")]
    export_matrix: Option<PathBuf>,
    /// Also write the protocol event log of session 0 of the first cell.
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Numeric(_) => Failure::Runtime(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

fn io_err(path: &std::path::Path, e: io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn create(path: &std::path::Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn run(args: Args) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.spec)
        .map_err(|e| Failure::Config(format!("{}: {e}", args.spec.display())))?;
    let mut spec = parse_spec(&text)?;
    if let Some(s) = args.sessions {
        spec.sessions_per_cell = s;
        spec.validate()?;
    }
    if args.parallelism == Some(0) {
        return Err(Failure::Config("--parallelism must be >= 1".into()));
    }

    let first = spec.cells()[0];
    if let Some(path) = &args.export_matrix {
        let cfg = spec.session_config(0, &first, 0)?;
        let a = generate_signatures(cfg.sensing)?;
        let mut w = create(path)?;
        w.write_all(a.to_text().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| io_err(path, e))?;
    }
    if let Some(path) = &args.trace {
        let cfg = spec.session_config(0, &first, 0)?;
        let a = generate_signatures(cfg.sensing)?;
        let result = run_session_traced(&cfg, &a)?;
        result.write_trace_csv(create(path)?)?;
    }

    // Open the destination first so a bad path fails before the sweep runs.
    let out: Box<dyn Write> = match args.output.or(spec.output.clone()) {
        Some(path) => Box::new(create(&path)?),
        None => Box::new(io::stdout().lock()),
    };
    let rows = run_experiment(&spec, args.parallelism)?;
    let stamp = (!args.no_header_timestamp).then(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs())
    });
    write_summary_csv(&rows, out, stamp)?;
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("csflood: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("csflood: {msg}");
            ExitCode::from(2)
        }
    }
}
