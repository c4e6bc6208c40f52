//! Background Green's operator and shifted resolvent via the exact Bloch
//! decomposition of the supercell forms, plus the perturbed solution
//! operator via a direct solve.

use faer::{c64, Col, Mat, MatRef};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec, HermitianSolver};
use crate::strip::{FormMatrices, StripSpace};

/// Full eigendecomposition of one Floquet block of `b0`.
#[derive(Clone, Debug)]
pub struct NodeBlock {
    pub k_y: f64,
    /// Strip indices of the block, in cell-basis order.
    pub members: Vec<usize>,
    /// Band values `lambda_s(k_x0, k_y)`, ascending.
    pub eigenvalues: Vec<f64>,
    /// Mass-orthonormal eigenvectors, one column per band.
    pub vectors: CMat,
}

#[derive(Clone, Debug)]
pub struct BlochDecomposition {
    pub blocks: Vec<NodeBlock>,
    dim: usize,
}

impl BlochDecomposition {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// All band values in block order (node by node, ascending inside).
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.eigenvalues.iter().copied()).collect()
    }

    /// Bloch coefficients `Psi^H f` of the columns of `f`, rows ordered as
    /// in [`Self::eigenvalues`].
    pub fn coefficients(&self, f: MatRef<'_, c64>) -> CMat {
        let mut out = Mat::zeros(self.dim, f.ncols());
        let mut row = 0;
        for b in &self.blocks {
            let sub = Mat::from_fn(b.members.len(), f.ncols(), |i, j| f[(b.members[i], j)]);
            let c = b.vectors.adjoint() * &sub;
            for i in 0..c.nrows() {
                for j in 0..c.ncols() {
                    out[(row + i, j)] = c[(i, j)];
                }
            }
            row += c.nrows();
        }
        out
    }

    /// Apply `sum_s psi_s w(lambda_s) psi_s^H` blockwise.
    fn apply_weighted(&self, f: &CVec, weight: impl Fn(f64) -> c64) -> CVec {
        let mut out = Col::zeros(self.dim);
        for b in &self.blocks {
            let sub = Col::from_fn(b.members.len(), |i| f[b.members[i]]);
            let mut c = b.vectors.adjoint() * &sub;
            for (s, &lam) in b.eigenvalues.iter().enumerate() {
                c[s] *= weight(lam);
            }
            let u = &b.vectors * &c;
            for (i, &idx) in b.members.iter().enumerate() {
                out[idx] = u[i];
            }
        }
        out
    }

    /// Smallest `|1/mu - 1 - lambda_s|` over all blocks.
    pub fn spectral_distance(&self, mu: f64) -> f64 {
        let lam = 1.0 / mu - 1.0;
        self.blocks
            .iter()
            .flat_map(|b| b.eigenvalues.iter())
            .fold(f64::INFINITY, |d, &l| d.min((l - lam).abs()))
    }

    /// Reject `mu` whose image `1/mu - 1` sits within `tol_res` of a band value.
    pub fn check_mu(&self, mu: f64, tol_res: f64) -> Result<()> {
        let distance = self.spectral_distance(mu);
        if !(mu >= 0.0) || distance < tol_res {
            return Err(Error::MuOnSpectrum { mu, distance });
        }
        Ok(())
    }
}

/// Diagonalize each Floquet block of `b0` (the mass is the identity).
pub fn diagonalize_background(space: &StripSpace, forms: &FormMatrices) -> Result<BlochDecomposition> {
    let s0 = &forms.stiffness0;
    let blocks = (0..space.n_nodes())
        .into_par_iter()
        .map(|j| {
            let members = space.node_members(j).to_vec();
            let n = members.len();
            let block = Mat::from_fn(n, n, |a, b| s0[(members[a], members[b])]);
            let k_y = space.k_y_nodes[j];
            let (eigenvalues, vectors) = linalg::hermitian_eigen(block.as_ref()).ok_or(Error::EigensolverFailure {
                kx: space.kx0,
                ky: k_y,
            })?;
            Ok(NodeBlock {
                k_y,
                members,
                eigenvalues,
                vectors,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BlochDecomposition {
        blocks,
        dim: space.dof_count(),
    })
}

/// `u` with `b0 u = mass f`, through the spectral sum.
pub fn apply_g0(decomp: &BlochDecomposition, f: &CVec) -> CVec {
    decomp.apply_weighted(f, |lam| c64::new(1.0 / (lam + 1.0), 0.0))
}

/// `(I - mu (L0 + 1))^{-1} f` through the spectral sum.
pub fn apply_shifted_resolvent(decomp: &BlochDecomposition, mu: f64, f: &CVec, tol_res: f64) -> Result<CVec> {
    decomp.check_mu(mu, tol_res)?;
    Ok(decomp.apply_weighted(f, |lam| c64::new(1.0 / (1.0 - mu * (lam + 1.0)), 0.0)))
}

/// Factorized perturbed form; solves `b1 u = mass f`.
pub struct G1Solver {
    b1: HermitianSolver,
}

impl G1Solver {
    pub fn new(forms: &FormMatrices) -> Result<Self> {
        let b1 = HermitianSolver::new(forms.b1().as_ref(), "b1").map_err(|e| Error::SolveFailure(e.to_string()))?;
        Ok(Self { b1 })
    }

    pub fn apply(&self, f: &CVec) -> CVec {
        self.b1.solve(f.as_ref())
    }

    pub fn apply_mat(&self, f: MatRef<'_, c64>) -> CMat {
        self.b1.solve_mat(f)
    }
}

pub fn apply_g1(forms: &FormMatrices, f: &CVec) -> Result<CVec> {
    Ok(G1Solver::new(forms)?.apply(f))
}
