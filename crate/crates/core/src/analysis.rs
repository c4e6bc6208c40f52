//! End-to-end runs: gap location, defect-mode search with its diagnostics,
//! the direct supercell check, and discretization sweeps.

use faer::MatRef;
use serde::{Deserialize, Serialize};

use crate::bands::{self, BulkOperator, Gap, GapEdge, PlaneWaveBasis};
use crate::birman_schwinger::{
    self, BoundReport, ConditionReport, CrossingOptions, DefectCoupling, DefectSubspace, EdgeInteraction,
    KappaCurve, KappaEvaluator,
};
use crate::error::{Error, Result};
use crate::greens::{self, BlochDecomposition};
use crate::linalg::CMat;
use crate::medium::{self, AssumptionReport, DielectricMap, MediumSpec, NormBundle};
use crate::oracle::{self, OracleResult};
use crate::strip::{self, FormMatrices, StripSpace};

/// Numerical knobs of a run. Relative tolerances are scaled by the gap width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    pub kx0: f64,
    /// Supercell height in cells; defaults to `2 R + 9`.
    pub n_cells: Option<usize>,
    pub half_order: usize,
    /// Band directly above the gap under study; defaults to the widest gap.
    pub upper_band: Option<usize>,
    /// Bands computed on the zone grid when searching for gaps.
    pub zone_bands: usize,
    pub zone_grid: usize,
    pub edge_grid: usize,
    pub tol_edge_rel: f64,
    pub tol_res_rel: f64,
    pub tol_ess_rel: f64,
    pub tau: f64,
    pub crossing: CrossingOptions,
    pub bound_vectors: usize,
    pub seed: u64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            kx0: 0.0,
            n_cells: None,
            half_order: 5,
            upper_band: None,
            zone_bands: 8,
            zone_grid: 16,
            edge_grid: 128,
            tol_edge_rel: 1e-6,
            tol_res_rel: 1e-8,
            tol_ess_rel: 1e-6,
            tau: 1e-10,
            crossing: CrossingOptions::default(),
            bound_vectors: 100,
            seed: 20240531,
        }
    }
}

impl AnalysisSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tol_edge_rel", self.tol_edge_rel),
            ("tol_res_rel", self.tol_res_rel),
            ("tol_ess_rel", self.tol_ess_rel),
            ("tau", self.tau),
            ("tol_cross", self.crossing.tol_cross),
            ("eta_min_rel", self.crossing.eta_min_rel),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.kx0.abs() <= std::f64::consts::PI) {
            return Err(Error::InvalidConfig(format!("kx0 must lie in [-pi, pi], got {}", self.kx0)));
        }
        if self.crossing.n_samples < 2 {
            return Err(Error::InvalidConfig("at least two kappa samples are needed".into()));
        }
        Ok(())
    }

    pub fn cells_for(&self, map: &DielectricMap) -> usize {
        self.n_cells.unwrap_or(2 * map.defect_rows() + 9)
    }
}

/// Zone-wide gaps of the background and the edge data on the chosen fiber.
#[derive(Clone, Debug, Serialize)]
pub struct GapReport {
    pub gaps: Vec<Gap>,
    pub edge: GapEdge,
}

pub fn zone_gaps(map: &DielectricMap, settings: &AnalysisSettings) -> Result<Vec<Gap>> {
    let op = BulkOperator::new(map, PlaneWaveBasis::new(settings.half_order))?;
    let n_bands = settings
        .zone_bands
        .max(settings.upper_band.unwrap_or(0))
        .min(op.basis().dimension());
    let grid = bands::brillouin_grid(settings.zone_grid, settings.zone_grid);
    Ok(bands::find_gaps(&bands::compute_bands_with(&op, &grid, n_bands)?))
}

pub fn select_gap(gaps: &[Gap], upper_band: Option<usize>) -> Result<Gap> {
    match upper_band {
        Some(m) => gaps.iter().find(|g| g.upper_band == m).copied().ok_or(Error::NoSuchGap(m)),
        None => gaps
            .iter()
            .copied()
            .max_by(|a, b| a.width().total_cmp(&b.width()))
            .ok_or(Error::NoSuchGap(0)),
    }
}

pub fn locate_edge(map: &DielectricMap, settings: &AnalysisSettings) -> Result<GapReport> {
    settings.validate()?;
    let gaps = zone_gaps(map, settings)?;
    let gap = select_gap(&gaps, settings.upper_band)?;
    let op = BulkOperator::new(map, PlaneWaveBasis::new(settings.half_order))?;
    let edge = bands::locate_gap_edge(&op, &gap, settings.kx0, settings.edge_grid, settings.tol_edge_rel)?;
    Ok(GapReport { gaps, edge })
}

/// Everything assembled on the supercell for one medium and fiber.
pub struct DefectSetup {
    pub space: StripSpace,
    pub forms: FormMatrices,
    pub decomp: BlochDecomposition,
    pub spanning: CMat,
    pub edge: GapEdge,
    pub norms: NormBundle,
    pub assumptions: AssumptionReport,
    pub tol_res: f64,
}

impl DefectSetup {
    pub fn new(map: &DielectricMap, settings: &AnalysisSettings, edge: GapEdge) -> Result<Self> {
        settings.validate()?;
        let (space, forms) = strip::build_strip(map, settings.kx0, settings.cells_for(map), settings.half_order)?;
        let decomp = greens::diagonalize_background(&space, &forms)?;
        let (w, weights) = strip::defect_factor(&space, map);
        // the weights are folded into the spanning set; only its span matters
        let spanning = faer::Mat::from_fn(w.nrows(), w.ncols(), |i, j| w[(i, j)] * weights[j].sqrt());
        Ok(Self {
            space,
            forms,
            decomp,
            spanning,
            edge,
            norms: medium::compute_norms(map),
            assumptions: medium::validate_assumptions(map),
            tol_res: settings.tol_res_rel * edge.width(),
        })
    }

    pub fn coupling(&self) -> Result<DefectCoupling<'_>> {
        DefectCoupling::new(&self.forms)
    }

    pub fn subspace(&self, coupling: &DefectCoupling<'_>, tau: f64) -> Result<DefectSubspace> {
        birman_schwinger::build_defect_subspace(coupling, self.spanning_ref(), tau)
    }

    fn spanning_ref(&self) -> MatRef<'_, faer::c64> {
        self.spanning.as_ref()
    }

    pub fn evaluator(&self, subspace: &DefectSubspace) -> KappaEvaluator {
        KappaEvaluator::new(subspace, &self.decomp, self.tol_res)
    }

    /// Lower bound for `kappa(mu)` with the stated constant and with the
    /// contrast constant.
    pub fn kappa_lower_bounds(&self, mu: f64) -> (f64, f64) {
        let denom = 1.0 - mu * (self.edge.lambda1 + 1.0);
        (
            self.norms.g1_norm_bound * self.norms.inv_diff_sup / denom,
            self.norms.ratio_sup * self.norms.weighted_diff_sup / denom,
        )
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CurveLaws {
    /// Largest drop `kappa(mu_i) - kappa(mu_{i+1})` between samples.
    pub max_decrease: f64,
    pub monotone: bool,
    /// Samples where the stated lower bound fails.
    pub lower_bound_violations: usize,
    /// Samples where the contrast lower bound fails.
    pub contrast_bound_violations: usize,
}

pub const TOL_MONO: f64 = 1e-9;

pub fn curve_laws(setup: &DefectSetup, curve: &KappaCurve) -> CurveLaws {
    let max_decrease = curve
        .kappa_values
        .windows(2)
        .map(|w| w[0] - w[1])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut stated = 0;
    let mut contrast = 0;
    for (&mu, &k) in curve.mu_samples.iter().zip(&curve.kappa_values) {
        let (a, b) = setup.kappa_lower_bounds(mu);
        if k < a {
            stated += 1;
        }
        if k < b {
            contrast += 1;
        }
    }
    CurveLaws {
        max_decrease,
        monotone: max_decrease <= TOL_MONO,
        lower_bound_violations: stated,
        contrast_bound_violations: contrast,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Residuals {
    pub reconstruction: Option<f64>,
    pub gram_k_hermitian: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DefectModeReport {
    pub gap: Gap,
    pub edge: GapEdge,
    pub assumptions: AssumptionReport,
    pub norms: NormBundle,
    pub condition: ConditionReport,
    pub n_cells: usize,
    pub half_order: usize,
    pub dof_count: usize,
    pub subspace_rank: usize,
    pub kappa_curve: KappaCurve,
    pub curve_laws: CurveLaws,
    pub crossing_lambda: Option<f64>,
    pub edge_interaction: EdgeInteraction,
    pub bounds: Option<BoundReport>,
    pub residuals: Residuals,
}

/// Search for a gap mode on an already located edge.
pub fn defect_mode_on_edge(
    map: &DielectricMap,
    settings: &AnalysisSettings,
    edge: GapEdge,
    with_bounds: bool,
) -> Result<DefectModeReport> {
    let setup = DefectSetup::new(map, settings, edge)?;
    let coupling = setup.coupling()?;
    let subspace = setup.subspace(&coupling, settings.tau)?;
    let eval = setup.evaluator(&subspace);
    let curve = birman_schwinger::find_crossing(&eval, &edge, &settings.crossing)?;
    let reconstruction = match curve.crossing_mu {
        Some(mu) => Some(birman_schwinger::reconstruct_mode(&coupling, &subspace, &setup.decomp, &eval, mu, setup.tol_res)?.0),
        None => None,
    };
    let edge_interaction = birman_schwinger::verify_edge_interaction(&subspace, &setup.decomp, &setup.space, &edge)?;
    let bounds = with_bounds.then(|| birman_schwinger::verify_perturbation_bounds(&coupling, &setup.norms, settings.bound_vectors, settings.seed));
    Ok(DefectModeReport {
        gap: edge.zone_gap,
        edge,
        assumptions: setup.assumptions.clone(),
        norms: setup.norms,
        condition: birman_schwinger::check_condition(&setup.norms, &edge),
        n_cells: setup.space.n_cells,
        half_order: setup.space.half_order,
        dof_count: setup.space.dof_count(),
        subspace_rank: subspace.rank,
        curve_laws: curve_laws(&setup, &curve),
        crossing_lambda: curve.crossing_lambda,
        kappa_curve: curve,
        edge_interaction,
        bounds,
        residuals: Residuals {
            reconstruction,
            gram_k_hermitian: crate::linalg::hermitian_residual(subspace.gram_k.as_ref()),
        },
    })
}

pub fn defect_mode(map: &DielectricMap, settings: &AnalysisSettings, with_bounds: bool) -> Result<DefectModeReport> {
    let gaps = locate_edge(map, settings)?;
    defect_mode_on_edge(map, settings, gaps.edge, with_bounds)
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub edge: GapEdge,
    pub n_cells: usize,
    pub half_order: usize,
    pub result: OracleResult,
}

pub fn oracle_on_edge(map: &DielectricMap, settings: &AnalysisSettings, edge: GapEdge) -> Result<OracleReport> {
    settings.validate()?;
    let (space, forms) = strip::build_strip(map, settings.kx0, settings.cells_for(map), settings.half_order)?;
    let mut result = oracle::supercell_eigensolve(&space, &forms, &edge, usize::MAX)?;
    result.tol_ess = settings.tol_ess_rel * edge.width();
    Ok(OracleReport {
        edge,
        n_cells: space.n_cells,
        half_order: space.half_order,
        result,
    })
}

pub fn run_oracle(map: &DielectricMap, settings: &AnalysisSettings) -> Result<OracleReport> {
    let gaps = locate_edge(map, settings)?;
    oracle_on_edge(map, settings, gaps.edge)
}

/// One row of the convergence table.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceRow {
    pub axis: &'static str,
    pub n_cells: usize,
    pub half_order: usize,
    pub resolution: usize,
    pub lambda0: f64,
    pub lambda1: f64,
    pub crossing_lambda: Option<f64>,
    pub oracle_lambda: Option<f64>,
    /// `|crossing - previous crossing|` along the axis.
    pub cauchy: Option<f64>,
    pub gap_cauchy: Option<f64>,
}

/// Grid resolution used on the order axis: the smallest multiple of 16
/// that resolves the largest order.
pub fn order_axis_resolution(base: usize, orders: &[usize]) -> usize {
    let need = 4 * orders.iter().copied().max().unwrap_or(0) + 2;
    base.max(need.div_ceil(16) * 16)
}

/// Sweep the supercell height at fixed order, then the order at fixed
/// height, recording the crossing, the lowest oracle gap eigenvalue and
/// successive differences.
pub fn convergence_study(
    spec: &MediumSpec,
    settings: &AnalysisSettings,
    cell_counts: &[usize],
    orders: &[usize],
    with_oracle: bool,
) -> Result<Vec<ConvergenceRow>> {
    if cell_counts.len() < 3 || orders.len() < 3 {
        return Err(Error::InvalidConfig("each axis needs at least three values".into()));
    }
    let mut rows = Vec::new();
    let base_map = spec.build()?;
    let base_edge = locate_edge(&base_map, settings)?.edge;
    let base_cells = settings.cells_for(&base_map);
    let run = |map: &DielectricMap, s: &AnalysisSettings, edge: GapEdge| -> Result<(Option<f64>, Option<f64>)> {
        let report = defect_mode_on_edge(map, s, edge, false)?;
        let oracle = if with_oracle {
            oracle_on_edge(map, s, edge)?.result.gap_eigenvalues.first().copied()
        } else {
            None
        };
        Ok((report.crossing_lambda, oracle))
    };
    for &nc in cell_counts {
        let s = AnalysisSettings {
            n_cells: Some(nc),
            ..settings.clone()
        };
        let (crossing, oracle) = run(&base_map, &s, base_edge)?;
        rows.push(ConvergenceRow {
            axis: "cells",
            n_cells: nc,
            half_order: settings.half_order,
            resolution: base_map.resolution(),
            lambda0: base_edge.lambda0,
            lambda1: base_edge.lambda1,
            crossing_lambda: crossing,
            oracle_lambda: oracle,
            cauchy: None,
            gap_cauchy: None,
        });
    }
    let n = order_axis_resolution(spec.lattice_resolution, orders);
    let map = spec.with_resolution(n).build()?;
    for &g in orders {
        let s = AnalysisSettings {
            half_order: g,
            n_cells: Some(settings.n_cells.unwrap_or(base_cells)),
            ..settings.clone()
        };
        let edge = locate_edge(&map, &s)?.edge;
        let (crossing, oracle) = run(&map, &s, edge)?;
        rows.push(ConvergenceRow {
            axis: "order",
            n_cells: s.n_cells.unwrap(),
            half_order: g,
            resolution: n,
            lambda0: edge.lambda0,
            lambda1: edge.lambda1,
            crossing_lambda: crossing,
            oracle_lambda: oracle,
            cauchy: None,
            gap_cauchy: None,
        });
    }
    for i in 1..rows.len() {
        if rows[i].axis == rows[i - 1].axis {
            rows[i].cauchy = match (rows[i].crossing_lambda, rows[i - 1].crossing_lambda) {
                (Some(a), Some(b)) => Some((a - b).abs()),
                _ => None,
            };
            rows[i].gap_cauchy = Some(
                (rows[i].lambda0 - rows[i - 1].lambda0)
                    .abs()
                    .max((rows[i].lambda1 - rows[i - 1].lambda1).abs()),
            );
        }
    }
    Ok(rows)
}

/// Whether the successive differences along each axis shrink.
pub fn cauchy_decreasing(rows: &[ConvergenceRow], axis: &str) -> bool {
    let diffs: Vec<Option<f64>> = rows.iter().filter(|r| r.axis == axis).skip(1).map(|r| r.cauchy).collect();
    diffs.iter().all(|d| d.is_some()) && diffs.windows(2).all(|w| w[1].unwrap() < w[0].unwrap())
}
