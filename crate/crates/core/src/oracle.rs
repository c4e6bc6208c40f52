//! Direct eigensolve of the perturbed supercell problem, used to check the
//! resolvent-based mode search, plus localization measurements.

use faer::c64;
use serde::Serialize;

use crate::bands::GapEdge;
use crate::error::{Error, Result};
use crate::linalg::{self, CVec};
use crate::strip::{FormMatrices, StripSpace};

/// Gap eigenvalues of the perturbed pencil with their localization data.
#[derive(Clone, Debug, Serialize)]
pub struct OracleResult {
    pub gap_eigenvalues: Vec<f64>,
    #[serde(skip)]
    pub eigenvectors: Vec<CVec>,
    pub decay: Vec<DecayFit>,
    /// Distance of each gap eigenvalue to the unperturbed spectrum.
    pub bulk_distance: Vec<f64>,
    pub tol_ess: f64,
    #[serde(skip)]
    pub folded_bulk_spectrum: Vec<f64>,
    #[serde(skip)]
    pub perturbed_spectrum: Vec<f64>,
}

pub fn supercell_eigensolve(space: &StripSpace, forms: &FormMatrices, edge: &GapEdge, n_seek: usize) -> Result<OracleResult> {
    let fail = || Error::EigensolverFailure {
        kx: space.kx0,
        ky: f64::NAN,
    };
    let (perturbed, vectors) = linalg::hermitian_eigen(forms.stiffness1.as_ref()).ok_or_else(fail)?;
    let folded = linalg::hermitian_eigenvalues(forms.stiffness0.as_ref()).ok_or_else(fail)?;
    let tol_ess = 1e-6 * edge.width();
    let (lo, hi) = (edge.lambda0 + tol_ess, edge.lambda1 - tol_ess);
    let mut gap_eigenvalues = Vec::new();
    let mut eigenvectors = Vec::new();
    let mut decay = Vec::new();
    let mut bulk_distance = Vec::new();
    for (i, &lam) in perturbed.iter().enumerate() {
        if lam > lo && lam < hi && gap_eigenvalues.len() < n_seek {
            let v = vectors.col(i).to_owned();
            decay.push(decay_rate(space, &v));
            bulk_distance.push(folded.iter().fold(f64::INFINITY, |d, &b| d.min((b - lam).abs())));
            gap_eigenvalues.push(lam);
            eigenvectors.push(v);
        }
    }
    Ok(OracleResult {
        gap_eigenvalues,
        eigenvectors,
        decay,
        bulk_distance,
        tol_ess,
        folded_bulk_spectrum: folded,
        perturbed_spectrum: perturbed,
    })
}

/// Whether `perturbed` (ascending) is a downward shift of `unperturbed`
/// (ascending) by a perturbation of rank at most `rank`:
/// `u[i - rank] <= p[i] <= u[i]` up to `tol`.
pub fn interlaces(perturbed: &[f64], unperturbed: &[f64], rank: usize, tol: f64) -> bool {
    perturbed.len() == unperturbed.len()
        && perturbed.iter().enumerate().all(|(i, &p)| {
            p <= unperturbed[i] + tol && (i < rank || p >= unperturbed[i - rank] - tol)
        })
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    pub gamma: f64,
    pub r_squared: f64,
    pub poor_fit: bool,
    pub row_masses: Vec<f64>,
}

/// L² mass of `u` in each unit-cell row of the supercell, computed exactly
/// from the plane-wave coefficients.
pub fn row_masses(space: &StripSpace, u: &CVec) -> Vec<f64> {
    let p = space.y_order as i64;
    let nc = space.n_cells;
    let ny = (2 * p + 1) as usize;
    let nx = 2 * space.half_order + 1;
    // autocorrelation in m_y, summed over m_x
    let mut corr = vec![c64::new(0.0, 0.0); 2 * ny - 1];
    for ix in 0..nx {
        let row = &(0..ny).map(|k| u[ix * ny + k]).collect::<Vec<_>>();
        for a in 0..ny {
            if row[a] == c64::new(0.0, 0.0) {
                continue;
            }
            for b in 0..ny {
                corr[a + ny - 1 - b] += row[a] * row[b].conj();
            }
        }
    }
    let phi = 2.0 * std::f64::consts::PI / nc as f64;
    (0..nc)
        .map(|r| {
            let mut acc = c64::new(0.0, 0.0);
            for (k, &c) in corr.iter().enumerate() {
                let d = k as i64 - (ny as i64 - 1);
                let integral = if d == 0 {
                    c64::new(1.0, 0.0)
                } else {
                    let th = phi * d as f64;
                    let e1 = c64::new((th * (r as f64 + 1.0)).cos(), (th * (r as f64 + 1.0)).sin());
                    let e0 = c64::new((th * r as f64).cos(), (th * r as f64).sin());
                    (e1 - e0) / c64::new(0.0, th)
                };
                acc += c * integral;
            }
            acc.re / nc as f64
        })
        .collect()
}

/// Fit `log m_r = a - 2 gamma |r - center|` over rows outside the defect,
/// leaving out the two rows farthest from the center.
pub fn fit_decay(masses: &[f64], center: usize, defect_rows: usize) -> DecayFit {
    let far = masses.len() / 2;
    let (xs, ys): (Vec<f64>, Vec<f64>) = masses
        .iter()
        .enumerate()
        .filter_map(|(r, &m)| {
            let d = r.abs_diff(center);
            (d >= defect_rows.max(1) && d < far).then(|| (d as f64, m.max(f64::MIN_POSITIVE).ln()))
        })
        .unzip();
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return DecayFit {
            gamma: f64::NAN,
            r_squared: 0.0,
            poor_fit: true,
            row_masses: masses.to_vec(),
        };
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
    // a flat profile is fitted exactly by a zero slope
    let r_squared = if syy <= 1e-20 * n { 1.0 } else { 1.0 - ss_res / syy };
    DecayFit {
        gamma: -slope / 2.0,
        r_squared,
        poor_fit: r_squared < 0.9,
        row_masses: masses.to_vec(),
    }
}

pub fn decay_rate(space: &StripSpace, u: &CVec) -> DecayFit {
    fit_decay(&row_masses(space, u), space.center_row(), space.defect_rows)
}

/// Embed the cell-basis vector of node `node` into the supercell basis.
pub fn embed_node_vector(space: &StripSpace, node: usize, cell: faer::ColRef<'_, c64>) -> CVec {
    let mut out = faer::Col::zeros(space.dof_count());
    for (i, &idx) in space.node_members(node).iter().enumerate() {
        out[idx] = cell[i];
    }
    out
}
