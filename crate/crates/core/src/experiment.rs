//! Parameter sweeps: TOML experiment specs, the parallel session runner and
//! the summary CSV.
//!
//! A spec names a grid of session parameters. Every grid axis accepts a
//! scalar, a list, or an inclusive range table:
//!
//! ```toml
//! seed = 7
//! sessions_per_cell = 300
//!
//! [grid]
//! n = 25
//! m = 30
//! l = 5
//! k = { from = 2, to = 10 }
//! lambda = [0.4, 0.5, 0.6]
//! ```
//!
//! Cells are enumerated with `n` outermost, then `m, l, k, lambda, t_out,
//! snr_db, tau`. The session seed of session `s` in cell `c` is
//! `session_seed(seed, c, s)`.

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::metrics::{summarize, ExperimentSummary, OverheadModel};
use crate::network::{run_session, ChannelModel, SessionConfig, SessionResult};
use crate::seed::{session_seed, signature_seed};
use crate::sensing::{generate_signatures, SensingParams, SignatureMatrix};
use crate::solver::{IstaConfig, StepSize};

/// Column order of the summary CSV.
pub const CSV_COLUMNS: [&str; 14] = [
    "n",
    "m",
    "l_ttl",
    "k",
    "lambda",
    "t_out",
    "snr_db",
    "mean_error",
    "std_error",
    "bytes_prop",
    "bytes_cdma",
    "bytes_conv_min",
    "bytes_conv_max",
    "packets_total_mean",
];

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum Axis<T> {
    One(T),
    Many(Vec<T>),
    Range { from: T, to: T, step: Option<T> },
}

impl Axis<usize> {
    fn expand(&self, field: &str) -> Result<Vec<usize>> {
        match self {
            Axis::One(v) => Ok(vec![*v]),
            Axis::Many(v) => Ok(v.clone()),
            Axis::Range { from, to, step } => {
                let step = step.unwrap_or(1);
                if step == 0 {
                    return Err(Error::spec(field, "range step must be positive"));
                }
                Ok((*from..=*to).step_by(step).collect())
            }
        }
    }
}

impl Axis<f64> {
    fn expand(&self, field: &str) -> Result<Vec<f64>> {
        match self {
            Axis::One(v) => Ok(vec![*v]),
            Axis::Many(v) => Ok(v.clone()),
            Axis::Range { from, to, step } => {
                let step = step.unwrap_or(1.0);
                if !(step > 0.0) || !from.is_finite() || !to.is_finite() {
                    return Err(Error::spec(field, "range needs finite bounds and a positive step"));
                }
                if to < from {
                    return Ok(vec![]);
                }
                // Index-based so 0.4..=0.9 step 0.1 keeps its last point.
                let count = ((to - from) / step + 1e-9).floor() as usize;
                Ok((0..=count).map(|i| from + step * i as f64).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    n: Axis<usize>,
    m: Axis<usize>,
    l: Axis<usize>,
    k: Axis<usize>,
    lambda: Option<Axis<f64>>,
    t_out: Option<Axis<usize>>,
    snr_db: Option<Axis<f64>>,
    tau: Option<Axis<f64>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    max_iters: Option<usize>,
    tol: Option<f64>,
    step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawProtocol {
    forward_probability: Option<f64>,
    redraw_signatures: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    seed: Option<u64>,
    sessions_per_cell: Option<usize>,
    output: Option<PathBuf>,
    grid: RawGrid,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    protocol: RawProtocol,
}

/// One point of the parameter grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub k: usize,
    pub lambda: f64,
    pub t_out: usize,
    pub snr_db: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub n: Vec<usize>,
    pub m: Vec<usize>,
    pub l: Vec<usize>,
    pub k: Vec<usize>,
    pub lambda: Vec<f64>,
    pub t_out: Vec<usize>,
    pub snr_db: Vec<f64>,
    pub tau: Vec<f64>,
    pub sessions_per_cell: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub max_iters: usize,
    pub tol: f64,
    pub step: StepSize,
    pub forward_probability: f64,
    /// Draw a fresh signature matrix for every session instead of one per
    /// `(N, L, M)` shared by the whole experiment.
    pub redraw_signatures: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let ista = IstaConfig::default();
        ExperimentSpec {
            n: vec![25],
            m: vec![30],
            l: vec![5],
            k: vec![2],
            lambda: vec![ista.lambda],
            t_out: vec![30],
            snr_db: vec![10.0],
            tau: vec![0.5],
            sessions_per_cell: 300,
            seed: 0,
            output: None,
            max_iters: ista.max_iters,
            tol: ista.tol,
            step: ista.step,
            forward_probability: 1.0,
            redraw_signatures: false,
        }
    }
}

fn axis_usize(a: &Axis<usize>, field: &str) -> Result<Vec<usize>> {
    a.expand(field)
}

fn axis_f64(a: &Option<Axis<f64>>, field: &str, default: f64) -> Result<Vec<f64>> {
    a.as_ref().map_or(Ok(vec![default]), |a| a.expand(field))
}

/// Parses and validates a TOML experiment spec.
pub fn parse_spec(text: &str) -> Result<ExperimentSpec> {
    let raw: RawSpec = toml::from_str(text).map_err(|e| {
        let field = e
            .span()
            .and_then(|s| text.get(..s.start))
            .and_then(|before| before.lines().last())
            .and_then(|line| line.split('=').next())
            .map(|k| k.trim().trim_start_matches('[').trim_end_matches(']').to_string())
            .filter(|k| !k.is_empty())
            .unwrap_or_else(|| "document".to_string());
        Error::spec(field, e.message().to_string())
    })?;
    let d = ExperimentSpec::default();
    let g = &raw.grid;
    let spec = ExperimentSpec {
        n: axis_usize(&g.n, "grid.n")?,
        m: axis_usize(&g.m, "grid.m")?,
        l: axis_usize(&g.l, "grid.l")?,
        k: axis_usize(&g.k, "grid.k")?,
        lambda: axis_f64(&g.lambda, "grid.lambda", d.lambda[0])?,
        t_out: match &g.t_out {
            None => d.t_out.clone(),
            Some(a) => axis_usize(a, "grid.t_out")?,
        },
        snr_db: axis_f64(&g.snr_db, "grid.snr_db", d.snr_db[0])?,
        tau: axis_f64(&g.tau, "grid.tau", d.tau[0])?,
        sessions_per_cell: raw.sessions_per_cell.unwrap_or(d.sessions_per_cell),
        seed: raw.seed.unwrap_or(d.seed),
        output: raw.output,
        max_iters: raw.solver.max_iters.unwrap_or(d.max_iters),
        tol: raw.solver.tol.unwrap_or(d.tol),
        step: raw.solver.step.map_or(StepSize::Auto, StepSize::Fixed),
        forward_probability: raw
            .protocol
            .forward_probability
            .unwrap_or(d.forward_probability),
        redraw_signatures: raw.protocol.redraw_signatures.unwrap_or(false),
    };
    spec.validate()?;
    Ok(spec)
}

impl ExperimentSpec {
    pub fn cells(&self) -> Vec<GridCell> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &m in &self.m {
                for &l in &self.l {
                    for &k in &self.k {
                        for &lambda in &self.lambda {
                            for &t_out in &self.t_out {
                                for &snr_db in &self.snr_db {
                                    for &tau in &self.tau {
                                        out.push(GridCell {
                                            n,
                                            m,
                                            l,
                                            k,
                                            lambda,
                                            t_out,
                                            snr_db,
                                            tau,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Session configuration of a cell, seeded for `session`.
    pub fn session_config(&self, cell_index: usize, cell: &GridCell, session: usize) -> Result<SessionConfig> {
        let sensing = SensingParams::new(cell.n, cell.l, cell.m, self.signature_seed_for(cell_index, session))?;
        let mut cfg = SessionConfig::new(
            sensing,
            cell.k,
            cell.t_out,
            session_seed(self.seed, cell_index as u64, session as u64),
        );
        cfg.channel = ChannelModel::new(cell.snr_db);
        cfg.ista = IstaConfig {
            lambda: cell.lambda,
            max_iters: self.max_iters,
            tol: self.tol,
            step: self.step,
        };
        cfg.tau = cell.tau;
        cfg.forward_probability = self.forward_probability;
        Ok(cfg)
    }

    fn signature_seed_for(&self, cell_index: usize, session: usize) -> u64 {
        if self.redraw_signatures {
            signature_seed(session_seed(self.seed, cell_index as u64, session as u64))
        } else {
            signature_seed(self.seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, empty) in [
            ("grid.n", self.n.is_empty()),
            ("grid.m", self.m.is_empty()),
            ("grid.l", self.l.is_empty()),
            ("grid.k", self.k.is_empty()),
            ("grid.lambda", self.lambda.is_empty()),
            ("grid.t_out", self.t_out.is_empty()),
            ("grid.snr_db", self.snr_db.is_empty()),
            ("grid.tau", self.tau.is_empty()),
        ] {
            if empty {
                return Err(Error::spec(field, "grid axis is empty"));
            }
        }
        if self.sessions_per_cell < 1 {
            return Err(Error::spec("sessions_per_cell", "must be >= 1"));
        }
        let check = |field: &str, ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::spec(field, msg))
            }
        };
        for &k in &self.k {
            check("grid.k", k >= 1, "number of sources must be >= 1")?;
        }
        for &n in &self.n {
            for &k in &self.k {
                check("grid.k", k < n, &format!("K = {k} needs more than {k} nodes, N = {n}"))?;
            }
        }
        for &l in &self.l {
            check("grid.l", l >= 1, "TTL must be >= 1")?;
        }
        for &t in &self.t_out {
            check("grid.t_out", t >= 1, "session length must be >= 1")?;
        }
        for &v in &self.lambda {
            check("grid.lambda", v.is_finite() && v >= 0.0, "must be finite and >= 0")?;
        }
        for &v in &self.tau {
            check("grid.tau", v.is_finite() && v >= 0.0, "must be finite and >= 0")?;
        }
        for &v in &self.snr_db {
            check("grid.snr_db", !v.is_nan(), "must be a number")?;
        }
        check("solver.max_iters", self.max_iters >= 1, "must be >= 1")?;
        check("solver.tol", self.tol.is_finite() && self.tol >= 0.0, "must be finite and >= 0")?;
        if let StepSize::Fixed(s) = self.step {
            check("solver.step", s.is_finite() && s > 0.0, "must be positive")?;
        }
        check(
            "protocol.forward_probability",
            self.forward_probability > 0.0 && self.forward_probability <= 1.0,
            "must lie in (0, 1]",
        )?;
        for (i, cell) in self.cells().iter().enumerate() {
            let cfg = self.session_config(i, cell, 0).map_err(|e| {
                Error::spec("grid", format!("cell {i} ({cell:?}) is invalid: {e}"))
            })?;
            cfg.validate()
                .map_err(|e| Error::spec("grid", format!("cell {i} ({cell:?}) is invalid: {e}")))?;
        }
        Ok(())
    }
}

/// Summary row of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: GridCell,
    pub summary: ExperimentSummary,
}

impl CellResult {
    pub fn csv_record(&self) -> Vec<String> {
        let c = &self.cell;
        let s = &self.summary;
        vec![
            c.n.to_string(),
            c.m.to_string(),
            c.l.to_string(),
            c.k.to_string(),
            c.lambda.to_string(),
            c.t_out.to_string(),
            c.snr_db.to_string(),
            s.mean_error.to_string(),
            s.error_std.to_string(),
            s.mean_bytes_proposed.to_string(),
            s.mean_bytes_cdma.to_string(),
            s.bytes_conv_min.to_string(),
            s.bytes_conv_max.to_string(),
            s.mean_packets.to_string(),
        ]
    }
}

/// Runs every session of every cell and summarises each cell. `parallelism`
/// caps the worker count; `None` uses rayon's default.
pub fn run_experiment(spec: &ExperimentSpec, parallelism: Option<usize>) -> Result<Vec<CellResult>> {
    spec.validate()?;
    let cells = spec.cells();
    if cells.is_empty() {
        return Err(Error::spec("grid", "grid has no cells"));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(p) = parallelism {
        if p == 0 {
            return Err(Error::param("parallelism must be >= 1"));
        }
        builder = builder.num_threads(p);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::param(format!("cannot build worker pool: {e}")))?;

    let mut matrices: HashMap<(usize, usize, usize), Arc<SignatureMatrix>> = HashMap::new();
    if !spec.redraw_signatures {
        for c in &cells {
            if let std::collections::hash_map::Entry::Vacant(e) = matrices.entry((c.n, c.l, c.m)) {
                let params = SensingParams::new(c.n, c.l, c.m, signature_seed(spec.seed))?;
                e.insert(Arc::new(generate_signatures(params)?));
            }
        }
    }

    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.sessions_per_cell).map(move |s| (c, s)))
        .collect();
    let results: Vec<SessionResult> = pool.install(|| {
        jobs.par_iter()
            .map(|&(ci, s)| {
                let cell = &cells[ci];
                let cfg = spec.session_config(ci, cell, s)?;
                let a = match matrices.get(&(cell.n, cell.l, cell.m)) {
                    Some(a) => Arc::clone(a),
                    None => Arc::new(generate_signatures(cfg.sensing)?),
                };
                run_session(&cfg, &a)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let model = OverheadModel::default();
    cells
        .iter()
        .enumerate()
        .zip(results.chunks(spec.sessions_per_cell))
        .map(|((ci, cell), chunk)| {
            let cfg = spec.session_config(ci, cell, 0)?;
            Ok(CellResult {
                cell: *cell,
                summary: summarize(chunk, &cfg, &model)?,
            })
        })
        .collect()
}

/// Writes the summary CSV. With `timestamp` set, a leading `#` comment line
/// records the generation time in seconds since the Unix epoch.
pub fn write_summary_csv<W: Write>(rows: &[CellResult], mut out: W, timestamp: Option<u64>) -> Result<()> {
    if let Some(t) = timestamp {
        writeln!(out, "# generated {t}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.write_record(r.csv_record())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SOURCES_SWEEP: &str = r#"
[grid]
n = 25
m = 30
l = 5
k = { from = 2, to = 10 }
"#;

    #[test]
    fn minimal_doc_gets_defaults() {
        let s = parse_spec(SOURCES_SWEEP).unwrap();
        assert_eq!(s.k, (2..=10).collect::<Vec<_>>());
        assert_eq!(s.lambda, vec![0.5]);
        assert_eq!(s.snr_db, vec![10.0]);
        assert_eq!(s.tau, vec![0.5]);
        assert_eq!(s.sessions_per_cell, 300);
        assert_eq!(s.cells().len(), 9);
    }

    #[test]
    fn zero_sources_rejected() {
        let err = parse_spec("[grid]\nn = 25\nm = 30\nl = 5\nk = 0\n").unwrap_err();
        assert!(matches!(err, Error::Spec { ref field, .. } if field == "grid.k"), "{err}");
    }

    #[test]
    fn lambda_sweep_grid() {
        let s = parse_spec(
            "[grid]\nn = 49\nm = 40\nl = 7\nk = [6, 8, 10]\nlambda = { from = 0.4, to = 0.9, step = 0.1 }\n",
        )
        .unwrap();
        assert_eq!(s.lambda.len(), 6);
        assert!((s.lambda[5] - 0.9).abs() < 1e-12);
        assert_eq!(s.cells().len(), 18);
    }

    #[test]
    fn empty_axis_rejected() {
        let err = parse_spec("[grid]\nn = 25\nm = 30\nl = 5\nk = []\n").unwrap_err();
        assert!(matches!(err, Error::Spec { ref field, .. } if field == "grid.k"));
        let mut spec = ExperimentSpec::default();
        spec.n.clear();
        assert!(run_experiment(&spec, Some(1)).is_err());
    }

    #[test]
    fn malformed_doc_names_field() {
        let err = parse_spec("[grid]\nn = 25\nm = \"thirty\"\nl = 5\nk = 2\n").unwrap_err();
        match err {
            Error::Spec { field, .. } => assert_eq!(field, "m"),
            e => panic!("{e}"),
        }
        assert!(parse_spec("[grid]\nn = 25\nm = 30\nl = 5\nk = 2\nbogus = 1\n").is_err());
        assert!(parse_spec("[grid]\nn = 24\nm = 30\nl = 5\nk = 2\n").is_err());
    }

    #[test]
    fn rows_follow_cell_order_and_are_reproducible() {
        let mut spec = parse_spec(
            "seed = 3\nsessions_per_cell = 3\n[grid]\nn = 25\nm = 30\nl = 5\nk = [1, 2]\nt_out = 12\n",
        )
        .unwrap();
        spec.max_iters = 200;
        let a = run_experiment(&spec, Some(1)).unwrap();
        let b = run_experiment(&spec, Some(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert_eq!((a[0].cell.k, a[1].cell.k), (1, 2));
        let mut out = Vec::new();
        write_summary_csv(&a, &mut out, None).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(text.lines().count(), 3);
        let mut stamped = Vec::new();
        write_summary_csv(&a, &mut stamped, Some(42)).unwrap();
        assert!(String::from_utf8(stamped).unwrap().starts_with("# generated 42\n"));
    }
}
