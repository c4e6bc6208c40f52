use std::f64::consts::PI;

use faer::{c64, Col};

use gapmode_core::analysis::{self, AnalysisSettings};
use gapmode_core::bands::{BulkOperator, GapEdge, PlaneWaveBasis, Quasimomentum};
use gapmode_core::greens;
use gapmode_core::linalg;
use gapmode_core::medium::{build_map, DefectSpec, DielectricMap, Shape};
use gapmode_core::oracle;
use gapmode_core::strip::{self, StripSpace};

fn rect(eps: Option<f64>, delta: Option<f64>) -> Shape {
    Shape::Rect {
        eps,
        delta,
        center: [0.5, 0.5],
        size: [0.5, 0.5],
    }
}

fn rod(t: f64) -> DielectricMap {
    build_map(
        &[rect(Some(9.0), None)],
        &DefectSpec {
            rows: 1,
            shapes: vec![rect(None, Some(t))],
        },
        32,
    )
    .unwrap()
}

fn settings(n_cells: usize) -> AnalysisSettings {
    AnalysisSettings {
        n_cells: Some(n_cells),
        ..AnalysisSettings::default()
    }
}

fn edge() -> GapEdge {
    analysis::locate_edge(&rod(1.0), &settings(7)).unwrap().edge
}

#[test]
fn unperturbed_supercell_has_no_gap_states() {
    let map = rod(0.0);
    let (space, forms) = strip::build_strip(&map, 0.0, 7, 5).unwrap();
    let result = oracle::supercell_eigensolve(&space, &forms, &edge(), usize::MAX).unwrap();
    assert!(result.gap_eigenvalues.is_empty());
    for (a, b) in result.perturbed_spectrum.iter().zip(&result.folded_bulk_spectrum) {
        assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
    }

    // the folded spectrum is the union of the bulk bands at the node momenta
    let op = BulkOperator::new(&map, PlaneWaveBasis::new(5)).unwrap();
    let n = PlaneWaveBasis::new(5).dimension();
    let mut union: Vec<f64> = (0..7)
        .flat_map(|j| op.eigen(Quasimomentum::new(0.0, space.k_y_nodes[j]), n).unwrap().0)
        .collect();
    union.sort_by(f64::total_cmp);
    assert_eq!(union.len(), result.folded_bulk_spectrum.len());
    for (a, b) in union.iter().zip(&result.folded_bulk_spectrum) {
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn gap_state_matches_the_resolvent_crossing() {
    let e = edge();
    let map = rod(3.0);
    let report = analysis::oracle_on_edge(&map, &settings(7), e).unwrap();
    let mode = analysis::defect_mode_on_edge(&map, &settings(7), e, false).unwrap();
    let crossing = mode.crossing_lambda.unwrap();
    let gap = &report.result.gap_eigenvalues;
    assert!(!gap.is_empty());
    let nearest = gap.iter().fold(f64::INFINITY, |d, &l| d.min((l - crossing).abs()));
    assert!(nearest < 1e-3, "{gap:?} vs {crossing}");
    // the lowest shifted eigenvalue crosses at the deepest mode; the rest are counted above it
    assert!((gap[0] - crossing).abs() < 1e-3, "{gap:?} vs {crossing}");
    assert_eq!(mode.kappa_curve.modes_above, Some(gap.len() - 1));
    assert!(report.result.bulk_distance.iter().all(|&d| d > report.result.tol_ess));
}

#[test]
fn perturbed_spectrum_interlaces_the_folded_one() {
    let map = rod(2.0);
    let (space, forms) = strip::build_strip(&map, 0.3, 7, 5).unwrap();
    let result = oracle::supercell_eigensolve(&space, &forms, &edge(), usize::MAX).unwrap();
    let ev = linalg::hermitian_eigenvalues(forms.defect.as_ref()).unwrap();
    let top = ev.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let rank = ev.iter().filter(|&&v| v > 1e-10 * top).count();
    let tol = 1e-9 * result.folded_bulk_spectrum.last().unwrap();
    assert!(oracle::interlaces(&result.perturbed_spectrum, &result.folded_bulk_spectrum, rank, tol));
    assert!(!oracle::interlaces(&result.perturbed_spectrum, &result.folded_bulk_spectrum, 0, tol));
    assert!(!oracle::interlaces(&result.perturbed_spectrum[1..], &result.folded_bulk_spectrum, rank, tol));
}

/// Coefficients of the periodic profile `exp(-|y - yc|)` on a strip of
/// length `l`, restricted to the `m_x = 0` column.
fn exponential_profile(space: &StripSpace) -> Col<c64> {
    let l = space.n_cells as f64;
    let yc = space.center_row() as f64 + 0.5;
    Col::from_fn(space.dof_count(), |i| {
        let (mx, my) = space.mode(i);
        if mx != 0 {
            return c64::new(0.0, 0.0);
        }
        let w = 2.0 * PI * my as f64 / l;
        let sign = if my % 2 == 0 { 1.0 } else { -1.0 };
        let amp = 2.0 * (1.0 - sign * (-l / 2.0).exp()) / (1.0 + w * w) / l;
        c64::new((w * yc).cos(), -(w * yc).sin()) * amp
    })
}

#[test]
fn decay_fit_recovers_an_exponential_profile() {
    let space = StripSpace::new(0.0, 11, 5, 32, 1).unwrap();
    let u = exponential_profile(&space);
    let masses = oracle::row_masses(&space, &u);
    assert_eq!(masses.len(), 11);
    let c = space.center_row();
    for d in 1..4 {
        assert!(masses[c + d] < masses[c + d - 1]);
        assert!((masses[c + d] - masses[c - d]).abs() <= 1e-9 * masses[c]);
    }
    let fit = oracle::decay_rate(&space, &u);
    assert!((fit.gamma - 1.0).abs() < 0.05, "{}", fit.gamma);
    assert!(!fit.poor_fit);

    // a bulk Bloch wave spreads evenly over the rows
    let map = rod(0.0);
    let (space, forms) = strip::build_strip(&map, 0.0, 11, 5).unwrap();
    let decomp = greens::diagonalize_background(&space, &forms).unwrap();
    let bloch = oracle::embed_node_vector(&space, 4, decomp.blocks[4].vectors.col(3));
    let fit = oracle::decay_rate(&space, &bloch);
    assert!(fit.gamma.abs() < 0.05, "{}", fit.gamma);
    let total: f64 = fit.row_masses.iter().sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn deeper_modes_are_more_localized() {
    let e = analysis::locate_edge(&rod(1.0), &settings(11)).unwrap().edge;
    let gamma = |t: f64| {
        let r = analysis::oracle_on_edge(&rod(t), &settings(11), e).unwrap().result;
        (r.gap_eigenvalues[0], r.decay[0].gamma)
    };
    let (l3, g3) = gamma(3.0);
    let (l8, g8) = gamma(1.0);
    assert!(l8 > l3);
    assert!(g8 > 0.0 && g3 > g8, "{g3} {g8}");
}
