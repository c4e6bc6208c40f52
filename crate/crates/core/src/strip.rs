//! Born–von Kármán supercell of `N_c` unit cells stacked in `y`, with a
//! `k_x0`-quasiperiodic plane-wave basis.
//!
//! Basis functions are `exp(i (k_x0 + 2 pi m_x) x) exp(2 pi i m_y y / N_c)`
//! on `(0,1) x (0,N_c)`, normalized over the supercell, so the L² Gram
//! matrix is the identity. Mode `m_y` belongs to the Floquet node
//! `j = m_y mod N_c` (taken in `-(N_c-1)/2 ..= (N_c-1)/2`) and carries cell
//! index `(m_y - j)/N_c` there.

use faer::{c64, Col, Mat, MatRef};
use serde::Serialize;
use std::f64::consts::PI;

use crate::bands::PlaneWaveBasis;
use crate::error::{Error, Result};
use crate::fourier::Spectrum2;
use crate::linalg::{CMat, CVec, HermitianSolver};
use crate::medium::DielectricMap;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Clone, Debug, Serialize)]
pub struct StripSpace {
    pub kx0: f64,
    pub n_cells: usize,
    pub half_order: usize,
    pub resolution: usize,
    pub defect_rows: usize,
    /// Largest `|m_y|` in the supercell basis.
    pub y_order: usize,
    /// Floquet momenta `2 pi j / N_c`, `j` ascending from `-(N_c-1)/2`.
    pub k_y_nodes: Vec<f64>,
    #[serde(skip)]
    modes: Vec<(i64, i64)>,
    #[serde(skip)]
    node_members: Vec<Vec<usize>>,
}

impl StripSpace {
    pub fn new(kx0: f64, n_cells: usize, half_order: usize, resolution: usize, defect_rows: usize) -> Result<Self> {
        let required = 2 * defect_rows + 5;
        if n_cells % 2 == 0 || n_cells < required {
            return Err(Error::TooNarrowSupercell {
                n_cells,
                rows: defect_rows,
                required,
            });
        }
        let basis = PlaneWaveBasis::new(half_order);
        if resolution < basis.required_resolution() {
            return Err(Error::ResolutionMismatch {
                resolution,
                half_order,
                required: basis.required_resolution(),
            });
        }
        if !(kx0.abs() <= PI * (1.0 + 1e-12)) {
            return Err(Error::QuasimomentumOutOfRange { kx: kx0, ky: 0.0 });
        }
        let g = half_order as i64;
        let nc = n_cells as i64;
        let h = (nc - 1) / 2;
        let p = g * nc + h;
        let mut modes = Vec::with_capacity(((2 * g + 1) * (2 * p + 1)) as usize);
        for mx in -g..=g {
            for my in -p..=p {
                modes.push((mx, my));
            }
        }
        // per node, members ordered exactly like the cell basis
        let mut node_members = vec![Vec::with_capacity(basis.dimension()); n_cells];
        for mx in -g..=g {
            for mc in -g..=g {
                for (jn, members) in node_members.iter_mut().enumerate() {
                    let j = jn as i64 - h;
                    let my = j + nc * mc;
                    let idx = (mx + g) * (2 * p + 1) + (my + p);
                    members.push(idx as usize);
                }
            }
        }
        // members were pushed in (mx, mc) order for every node; that is the
        // cell basis order since mc is the fast index
        Ok(Self {
            kx0,
            n_cells,
            half_order,
            resolution,
            defect_rows,
            y_order: p as usize,
            k_y_nodes: (-h..=h).map(|j| TWO_PI * j as f64 / nc as f64).collect(),
            modes,
            node_members,
        })
    }

    pub fn dof_count(&self) -> usize {
        self.modes.len()
    }

    pub fn mode(&self, i: usize) -> (i64, i64) {
        self.modes[i]
    }

    /// Physical wave vector of basis function `i`.
    pub fn wave_vector(&self, i: usize) -> (f64, f64) {
        let (mx, my) = self.modes[i];
        (self.kx0 + TWO_PI * mx as f64, TWO_PI * my as f64 / self.n_cells as f64)
    }

    /// Strip indices belonging to node `j`, in cell-basis order.
    pub fn node_members(&self, j: usize) -> &[usize] {
        &self.node_members[j]
    }

    pub fn n_nodes(&self) -> usize {
        self.n_cells
    }

    /// Index of the node closest to `ky` (periodically).
    pub fn nearest_node(&self, ky: f64) -> usize {
        let dist = |a: f64| {
            let d = (a - ky).rem_euclid(TWO_PI);
            d.min(TWO_PI - d)
        };
        (0..self.n_cells)
            .min_by(|&a, &b| dist(self.k_y_nodes[a]).total_cmp(&dist(self.k_y_nodes[b])))
            .unwrap()
    }

    /// Center row of the supercell, hosting the defect.
    pub fn center_row(&self) -> usize {
        self.n_cells / 2
    }
}

/// Form matrices in the supercell basis. The mass matrix is the identity.
#[derive(Clone, Debug)]
pub struct FormMatrices {
    pub stiffness0: CMat,
    pub stiffness1: CMat,
    /// `stiffness0 - stiffness1`, assembled directly from the coefficient
    /// difference so that it vanishes exactly off the defect.
    pub defect: CMat,
}

impl FormMatrices {
    pub fn dim(&self) -> usize {
        self.stiffness0.nrows()
    }

    pub fn mass(&self) -> CMat {
        Mat::identity(self.dim(), self.dim())
    }

    pub fn b0(&self) -> CMat {
        shifted_identity(self.stiffness0.as_ref())
    }

    pub fn b1(&self) -> CMat {
        shifted_identity(self.stiffness1.as_ref())
    }
}

fn shifted_identity(a: MatRef<'_, c64>) -> CMat {
    let mut b = a.to_owned();
    for i in 0..b.nrows() {
        b[(i, i)] += 1.0;
    }
    b
}

fn assemble_stiffness(space: &StripSpace, coeff: impl Fn(i64, i64) -> c64) -> CMat {
    let dim = space.dof_count();
    let kv: Vec<(f64, f64)> = (0..dim).map(|i| space.wave_vector(i)).collect();
    let mut s = Mat::zeros(dim, dim);
    for j in 0..dim {
        let (nx, ny) = space.modes[j];
        for i in 0..=j {
            let (mx, my) = space.modes[i];
            let c = coeff(mx - nx, my - ny);
            if c == c64::new(0.0, 0.0) {
                continue;
            }
            let v = c * (kv[i].0 * kv[j].0 + kv[i].1 * kv[j].1);
            if i == j {
                s[(i, i)] = c64::new(v.re, 0.0);
            } else {
                s[(i, j)] = v;
                s[(j, i)] = v.conj();
            }
        }
    }
    s
}

/// Assemble the background and perturbed forms on the supercell.
pub fn build_strip(map: &DielectricMap, kx0: f64, n_cells: usize, half_order: usize) -> Result<(StripSpace, FormMatrices)> {
    let space = StripSpace::new(kx0, n_cells, half_order, map.resolution(), map.defect_rows())?;
    let n = map.resolution();
    let nc = n_cells as i64;
    // the background repeats every cell, so only every N_c-th y frequency survives
    let g2 = 2 * half_order;
    let inv0: Vec<f64> = map.background().iter().map(|e| 1.0 / e).collect();
    let cell = Spectrum2::compute(&inv0, n, n, g2, g2);
    let stiffness0 = assemble_stiffness(&space, |p, q| {
        if q % nc == 0 {
            cell.get(p, q / nc)
        } else {
            c64::new(0.0, 0.0)
        }
    });
    let e0 = map.supercell_samples(n_cells, false);
    let e1 = map.supercell_samples(n_cells, true);
    let diff: Vec<f64> = e0.iter().zip(&e1).map(|(a, b)| 1.0 / a - 1.0 / b).collect();
    let spec = Spectrum2::compute(&diff, n, n * n_cells, g2, 2 * space.y_order);
    let defect = assemble_stiffness(&space, |p, q| spec.get(p, q));
    let stiffness1 = &stiffness0 - &defect;
    let forms = FormMatrices {
        stiffness0,
        stiffness1,
        defect,
    };
    HermitianSolver::new(forms.b0().as_ref(), "b0")?;
    HermitianSolver::new(forms.b1().as_ref(), "b1")?;
    Ok((space, forms))
}

/// Cell-basis coefficients of `f` at node `j`.
pub fn floquet_transform(space: &StripSpace, f: &CVec, j: usize) -> Result<CVec> {
    if j >= space.n_nodes() {
        return Err(Error::IndexOutOfRange {
            index: j,
            limit: space.n_nodes(),
        });
    }
    if f.nrows() != space.dof_count() {
        return Err(Error::DimensionMismatch {
            expected: space.dof_count(),
            got: f.nrows(),
        });
    }
    let m = space.node_members(j);
    Ok(Col::from_fn(m.len(), |i| f[m[i]]))
}

/// Reassemble strip coefficients from one cell vector per node.
pub fn inverse_floquet(space: &StripSpace, parts: &[CVec]) -> Result<CVec> {
    if parts.len() != space.n_nodes() {
        return Err(Error::DimensionMismatch {
            expected: space.n_nodes(),
            got: parts.len(),
        });
    }
    let mut out = Col::zeros(space.dof_count());
    for (j, part) in parts.iter().enumerate() {
        let m = space.node_members(j);
        if part.nrows() != m.len() {
            return Err(Error::DimensionMismatch {
                expected: m.len(),
                got: part.nrows(),
            });
        }
        for (i, &idx) in m.iter().enumerate() {
            out[idx] = part[i];
        }
    }
    Ok(out)
}

/// Pairing of functionals through the inverse background form.
pub struct DualPairing {
    b0: HermitianSolver,
}

impl DualPairing {
    pub fn new(forms: &FormMatrices) -> Result<Self> {
        Ok(Self {
            b0: HermitianSolver::new(forms.b0().as_ref(), "b0")?,
        })
    }

    /// `b0^{-1} v`.
    pub fn riesz(&self, v: &CVec) -> CVec {
        self.b0.solve(v.as_ref())
    }

    pub fn riesz_mat(&self, v: MatRef<'_, c64>) -> CMat {
        self.b0.solve_mat(v)
    }

    pub fn inner(&self, u: &CVec, v: &CVec) -> c64 {
        crate::linalg::dot(u.as_ref(), self.riesz(v).as_ref())
    }

    pub fn norm(&self, u: &CVec) -> f64 {
        self.inner(u, u).re.max(0.0).sqrt()
    }
}

/// `<u, v>` in the dual of the energy space: `u^H mass b0^{-1} mass v`.
pub fn h_minus1_inner(forms: &FormMatrices, u: &CVec, v: &CVec) -> Result<c64> {
    Ok(DualPairing::new(forms)?.inner(u, v))
}

/// Columns `w` with `defect = sum_c d_c w w^H` over perturbed samples `c`,
/// two per sample (one per gradient component). Returns the columns and
/// the matching weights `d_c = 1/eps0 - 1/eps1`.
pub fn defect_factor(space: &StripSpace, map: &DielectricMap) -> (CMat, Vec<f64>) {
    let n = space.resolution;
    let ny = n * space.n_cells;
    let center = space.center_row() as i32;
    let mut cells = Vec::new();
    for offset in map.perturbed_offsets() {
        let row = (center + offset) as usize;
        for (i, (&e0, &e1)) in map.background().iter().zip(map.row_values(offset)).enumerate() {
            let d = 1.0 / e0 - 1.0 / e1;
            if d > 0.0 {
                let ix = i / n;
                let iy = row * n + i % n;
                cells.push((ix, iy, d));
            }
        }
    }
    let dim = space.dof_count();
    let norm = 1.0 / ((n * ny) as f64).sqrt();
    let mut w = Mat::zeros(dim, 2 * cells.len());
    let mut weights = Vec::with_capacity(2 * cells.len());
    for (c, &(ix, iy, d)) in cells.iter().enumerate() {
        let x = (ix as f64 + 0.5) / n as f64;
        let y = (iy as f64 + 0.5) / n as f64;
        for i in 0..dim {
            let (mx, my) = space.mode(i);
            let (kx, ky) = space.wave_vector(i);
            let ph = -TWO_PI * (mx as f64 * x + my as f64 * y / space.n_cells as f64);
            let e = c64::new(ph.cos(), ph.sin()) * norm;
            w[(i, 2 * c)] = e * kx;
            w[(i, 2 * c + 1)] = e * ky;
        }
        weights.push(d);
        weights.push(d);
    }
    (w, weights)
}
