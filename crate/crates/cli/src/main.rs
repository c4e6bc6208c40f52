//! `gapmode`: band structures, gap edges and line-defect modes from a JSON
//! geometry description.

mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use gapmode_core::analysis::{self, AnalysisSettings, DefectSetup};
use gapmode_core::bands::{self, BulkOperator, Gap, GapEdge, PlaneWaveBasis};
use gapmode_core::birman_schwinger;
use gapmode_core::medium::{self, DefectSpec, DielectricMap, MediumSpec, Shape};
use gapmode_core::Error;

use output::{Report, Table};

#[derive(Parser)]
#[command(name = "gapmode", version, about = "Gap edges and line-defect modes of 2D photonic crystals (TE)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Band values on a uniform zone grid (CSV: kx, ky, s, lambda).
    Bands(BandsArgs),
    /// Zone-wide spectral gaps of the background (JSON).
    Gaps(BandsArgs),
    /// Gap edges on the fiber k_x = kx0 (JSON).
    Edge(EdgeArgs),
    /// Weak-perturbation conditions for the configured defect (JSON).
    CheckCondition(FiberArgs),
    /// Resolvent-based search for a gap mode below the upper edge (JSON).
    DefectMode(DefectModeArgs),
    /// Crossing and midgap kappa as the defect amplitude varies (CSV).
    Sweep(SweepArgs),
    /// Direct eigensolve of the perturbed supercell (JSON).
    Oracle(FiberArgs),
    /// Crossing versus supercell height and plane-wave order (CSV).
    Converge(ConvergeArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Plane-wave half order G (overrides the config).
    #[arg(long)]
    order: Option<usize>,
}

#[derive(Args)]
struct BandsArgs {
    #[command(flatten)]
    common: Common,
    /// Zone grid as AxB.
    #[arg(long, default_value = "16x16", value_parser = parse_grid)]
    grid: (usize, usize),
    #[arg(long, default_value_t = 8)]
    bands: usize,
}

#[derive(Args)]
struct EdgeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, allow_hyphen_values = true)]
    kx0: f64,
    #[arg(long)]
    bands: Option<usize>,
}

#[derive(Args)]
struct FiberArgs {
    #[command(flatten)]
    common: Common,
    /// Fiber k_x (overrides the config).
    #[arg(long, allow_hyphen_values = true)]
    kx0: Option<f64>,
    /// Supercell height in cells (overrides the config).
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    tol_cross: Option<f64>,
}

#[derive(Args)]
struct DefectModeArgs {
    #[command(flatten)]
    fiber: FiberArgs,
    /// Also test the perturbation estimates on random vectors.
    #[arg(long)]
    verify_bounds: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    fiber: FiberArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    amplitudes: Vec<f64>,
}

#[derive(Args)]
struct ConvergeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, allow_hyphen_values = true)]
    kx0: Option<f64>,
    #[arg(long)]
    tol_cross: Option<f64>,
    /// Supercell heights for the first axis.
    #[arg(long, value_delimiter = ',', default_value = "11,15,19")]
    cells: Vec<usize>,
    /// Plane-wave half orders for the second axis.
    #[arg(long, value_delimiter = ',', default_value = "4,6,8")]
    orders: Vec<usize>,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected AxB, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

/// Geometry plus optional numerical settings, as read from `--config`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    lattice_resolution: usize,
    #[serde(default)]
    background: Vec<Shape>,
    #[serde(default)]
    defect: DefectSpec,
    #[serde(default)]
    analysis: AnalysisSettings,
}

impl RunConfig {
    fn medium(&self) -> MediumSpec {
        MediumSpec {
            lattice_resolution: self.lattice_resolution,
            background: self.background.clone(),
            defect: self.defect.clone(),
        }
    }
}

enum Failure {
    Config(String),
    Math(Error),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config_error() {
            Failure::Config(format!("{}: {e}", e.name()))
        } else {
            Failure::Math(e)
        }
    }
}

type Outcome<T> = Result<T, Failure>;

struct Loaded {
    config: RunConfig,
    hash: String,
    map: DielectricMap,
}

fn load(path: &Path) -> Outcome<Loaded> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    // serde_json's message already carries the line and column
    let config: RunConfig =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let map = config.medium().build()?;
    Ok(Loaded {
        hash: output::sha256_hex(text.as_bytes()),
        config,
        map,
    })
}

/// Command-line values that take precedence over the config.
#[derive(Default)]
struct Overrides {
    order: Option<usize>,
    kx0: Option<f64>,
    cells: Option<usize>,
    tol_cross: Option<f64>,
}

impl FiberArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            order: self.common.order,
            kx0: self.kx0,
            cells: self.cells,
            tol_cross: self.tol_cross,
        }
    }
}

fn settings(loaded: &Loaded, o: Overrides) -> Outcome<AnalysisSettings> {
    let mut s = loaded.config.analysis.clone();
    s.half_order = o.order.unwrap_or(s.half_order);
    s.kx0 = o.kx0.unwrap_or(s.kx0);
    s.n_cells = o.cells.or(s.n_cells);
    s.crossing.tol_cross = o.tol_cross.unwrap_or(s.crossing.tol_cross);
    s.validate()?;
    Ok(s)
}

fn order_only(common: &Common) -> Overrides {
    Overrides {
        order: common.order,
        ..Overrides::default()
    }
}

fn zone_bands(map: &DielectricMap, s: &AnalysisSettings, grid: (usize, usize), n: usize) -> Outcome<bands::BandStructure> {
    let op = BulkOperator::new(map, PlaneWaveBasis::new(s.half_order))?;
    Ok(bands::compute_bands_with(&op, &bands::brillouin_grid(grid.0, grid.1), n)?)
}

fn run_bands(args: &BandsArgs) -> Outcome<()> {
    let loaded = load(&args.common.config)?;
    let s = settings(&loaded, order_only(&args.common))?;
    let bs = zone_bands(&loaded.map, &s, args.grid, args.bands)?;
    let mut table = Table::new(&["kx", "ky", "s", "lambda"]);
    for (k, values) in bs.k_grid.iter().zip(&bs.bands) {
        for (i, &v) in values.iter().enumerate() {
            table.row(vec![output::float(k.kx), output::float(k.ky), (i + 1).to_string(), output::float(v)]);
        }
    }
    table.write(args.common.out.as_deref())
}

#[derive(Serialize)]
struct GapList {
    grid: [usize; 2],
    n_bands: usize,
    gaps: Vec<Gap>,
}

fn run_gaps(args: &BandsArgs) -> Outcome<()> {
    let loaded = load(&args.common.config)?;
    let s = settings(&loaded, order_only(&args.common))?;
    let bs = zone_bands(&loaded.map, &s, args.grid, args.bands)?;
    let body = GapList {
        grid: [args.grid.0, args.grid.1],
        n_bands: args.bands,
        gaps: bands::find_gaps(&bs),
    };
    Report::new("gaps", &loaded.hash, &s, body).write(args.common.out.as_deref())
}

fn run_edge(args: &EdgeArgs) -> Outcome<()> {
    let loaded = load(&args.common.config)?;
    let mut s = settings(
        &loaded,
        Overrides {
            kx0: Some(args.kx0),
            ..order_only(&args.common)
        },
    )?;
    s.zone_bands = args.bands.unwrap_or(s.zone_bands);
    let report = analysis::locate_edge(&loaded.map, &s)?;
    Report::new("edge", &loaded.hash, &s, report).write(args.common.out.as_deref())
}

#[derive(Serialize)]
struct ConditionBody {
    gap: Gap,
    edge: GapEdge,
    assumptions: medium::AssumptionReport,
    norms: medium::NormBundle,
    condition: birman_schwinger::ConditionReport,
}

fn run_check_condition(args: &FiberArgs) -> Outcome<()> {
    let loaded = load(&args.common.config)?;
    let s = settings(&loaded, args.overrides())?;
    let edge = analysis::locate_edge(&loaded.map, &s)?.edge;
    let norms = medium::compute_norms(&loaded.map);
    let body = ConditionBody {
        gap: edge.zone_gap,
        edge,
        assumptions: medium::validate_assumptions(&loaded.map),
        norms,
        condition: birman_schwinger::check_condition(&norms, &edge),
    };
    Report::new("check-condition", &loaded.hash, &s, body).write(args.common.out.as_deref())
}

fn run_defect_mode(args: &DefectModeArgs) -> Outcome<()> {
    let fiber = &args.fiber;
    let loaded = load(&fiber.common.config)?;
    let s = settings(&loaded, fiber.overrides())?;
    let report = analysis::defect_mode(&loaded.map, &s, args.verify_bounds)?;
    Report::new("defect-mode", &loaded.hash, &s, report).write(fiber.common.out.as_deref())
}

fn run_sweep(args: &SweepArgs) -> Outcome<()> {
    let fiber = &args.fiber;
    let loaded = load(&fiber.common.config)?;
    let s = settings(&loaded, fiber.overrides())?;
    // the background, and with it the edge, does not depend on the amplitude
    let edge = analysis::locate_edge(&loaded.map, &s)?.edge;
    let mid = 2.0 / (edge.lambda0 + edge.lambda1 + 2.0);
    let spec = loaded.config.medium();
    let mut table = Table::new(&["t", "crossing_lambda", "kappa_at_midgap"]);
    for &t in &args.amplitudes {
        let map = spec.with_amplitude(t).build()?;
        let setup = DefectSetup::new(&map, &s, edge)?;
        let coupling = setup.coupling()?;
        let subspace = setup.subspace(&coupling, s.tau)?;
        let eval = setup.evaluator(&subspace);
        let curve = birman_schwinger::find_crossing(&eval, &edge, &s.crossing)?;
        let kappa = eval.kappa(mid)?;
        table.row(vec![output::float(t), output::opt_float(curve.crossing_lambda), output::float(kappa)]);
    }
    table.write(fiber.common.out.as_deref())
}

fn run_oracle(args: &FiberArgs) -> Outcome<()> {
    let loaded = load(&args.common.config)?;
    let s = settings(&loaded, args.overrides())?;
    let report = analysis::run_oracle(&loaded.map, &s)?;
    Report::new("oracle", &loaded.hash, &s, report).write(args.common.out.as_deref())
}

fn run_converge(args: &ConvergeArgs) -> Outcome<()> {
    let loaded = load(&args.common.config)?;
    let o = Overrides {
        kx0: args.kx0,
        tol_cross: args.tol_cross,
        ..order_only(&args.common)
    };
    let s = settings(&loaded, o)?;
    let rows = analysis::convergence_study(&loaded.config.medium(), &s, &args.cells, &args.orders, true)?;
    let mut table = Table::new(&[
        "axis",
        "n_cells",
        "half_order",
        "resolution",
        "lambda0",
        "lambda1",
        "crossing_lambda",
        "oracle_lambda",
        "cauchy",
        "gap_cauchy",
    ]);
    for r in rows {
        table.row(vec![
            r.axis.to_string(),
            r.n_cells.to_string(),
            r.half_order.to_string(),
            r.resolution.to_string(),
            output::float(r.lambda0),
            output::float(r.lambda1),
            output::opt_float(r.crossing_lambda),
            output::opt_float(r.oracle_lambda),
            output::opt_float(r.cauchy),
            output::opt_float(r.gap_cauchy),
        ]);
    }
    table.write(args.common.out.as_deref())
}

fn limit_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("GAPMODE_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| format!("GAPMODE_THREADS must be a positive integer, got {v:?}"))?;
    if n == 0 {
        return Err("GAPMODE_THREADS must be a positive integer, got 0".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = limit_threads() {
        eprintln!("config error: {msg}");
        return ExitCode::from(2);
    }
    let result = match &cli.command {
        Command::Bands(a) => run_bands(a),
        Command::Gaps(a) => run_gaps(a),
        Command::Edge(a) => run_edge(a),
        Command::CheckCondition(a) => run_check_condition(a),
        Command::DefectMode(a) => run_defect_mode(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Oracle(a) => run_oracle(a),
        Command::Converge(a) => run_converge(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Math(e)) => {
            eprintln!("error: {}: {e}", e.name());
            ExitCode::from(1)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
