//! The perturbation operator `K = G0^{-1} G1 - I`, its range, the
//! shifted-resolvent operator restricted to that range, and the tracking of
//! its lowest Rayleigh quotient across the gap.

use faer::{c64, Col, Mat, MatRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bands::GapEdge;
use crate::error::{Error, Result};
use crate::greens::{BlochDecomposition, G1Solver};
use crate::linalg::{self, CMat, CVec};
use crate::medium::NormBundle;
use crate::strip::{DualPairing, FormMatrices};

/// `K` together with the factorizations it needs.
pub struct DefectCoupling<'a> {
    forms: &'a FormMatrices,
    g1: G1Solver,
    pairing: DualPairing,
}

impl<'a> DefectCoupling<'a> {
    pub fn new(forms: &'a FormMatrices) -> Result<Self> {
        Ok(Self {
            forms,
            g1: G1Solver::new(forms)?,
            pairing: DualPairing::new(forms)?,
        })
    }

    pub fn forms(&self) -> &FormMatrices {
        self.forms
    }

    pub fn pairing(&self) -> &DualPairing {
        &self.pairing
    }

    pub fn g1(&self) -> &G1Solver {
        &self.g1
    }

    /// `K u = (stiffness0 - stiffness1) G1 u`.
    pub fn apply(&self, u: &CVec) -> CVec {
        &self.forms.defect * self.g1.apply(u)
    }

    pub fn apply_mat(&self, u: MatRef<'_, c64>) -> CMat {
        &self.forms.defect * self.g1.apply_mat(u)
    }

    /// `<u, v>` in the dual of the energy space.
    pub fn dual_inner(&self, u: &CVec, v: &CVec) -> c64 {
        self.pairing.inner(u, v)
    }

    pub fn dual_norm(&self, u: &CVec) -> f64 {
        self.pairing.norm(u)
    }
}

pub fn apply_k(forms: &FormMatrices, u: &CVec) -> Result<CVec> {
    Ok(DefectCoupling::new(forms)?.apply(u))
}

/// Basis of the numerical range of `K`, normalized so that the
/// `K`-weighted Gram matrix is (close to) the identity.
#[derive(Clone, Debug)]
pub struct DefectSubspace {
    pub basis: CMat,
    /// `K` applied to each basis vector.
    pub k_basis: CMat,
    /// `gram_k[i, j] = <K b_j, b_i>` in the dual pairing.
    pub gram_k: CMat,
    pub rank: usize,
}

fn hermitian_part(a: MatRef<'_, c64>) -> CMat {
    linalg::symmetrized(a)
}

fn scale_columns(a: &CMat, keep: &[(usize, f64)], v: MatRef<'_, c64>) -> CMat {
    // returns a * v[:, keep] / sqrt(value)
    let sel = Mat::from_fn(v.nrows(), keep.len(), |i, j| v[(i, keep[j].0)] / keep[j].1.sqrt());
    a * &sel
}

fn retained(values: &[f64], tau: f64) -> Vec<(usize, f64)> {
    let top = values.iter().copied().fold(0.0f64, f64::max);
    if !(top > 0.0) {
        return Vec::new();
    }
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > tau * top)
        .map(|(i, &v)| (i, v))
        .collect()
}

/// Push a spanning set through `K`, orthonormalize in the dual pairing and
/// drop directions whose `K`-Gram eigenvalue falls below `tau` times the
/// largest one.
pub fn build_defect_subspace(coupling: &DefectCoupling<'_>, spanning: MatRef<'_, c64>, tau: f64) -> Result<DefectSubspace> {
    if spanning.ncols() == 0 {
        return Err(Error::EmptySubspace);
    }
    let v = coupling.apply_mat(spanning);
    let q = hermitian_part((v.adjoint() * coupling.pairing.riesz_mat(v.as_ref())).as_ref());
    let (qv, qy) = linalg::hermitian_eigen(q.as_ref()).ok_or(Error::EigensolverFailure {
        kx: f64::NAN,
        ky: f64::NAN,
    })?;
    let keep = retained(&qv, tau);
    if keep.is_empty() {
        return Err(Error::EmptySubspace);
    }
    let ortho = scale_columns(&v, &keep, qy.as_ref());

    let k_ortho = coupling.apply_mat(ortho.as_ref());
    let gram = hermitian_part((coupling.pairing.riesz_mat(ortho.as_ref()).adjoint() * &k_ortho).as_ref());
    let (sv, sz) = linalg::hermitian_eigen(gram.as_ref()).ok_or(Error::EigensolverFailure {
        kx: f64::NAN,
        ky: f64::NAN,
    })?;
    let keep = retained(&sv, tau);
    if keep.is_empty() {
        return Err(Error::EmptySubspace);
    }
    let basis = scale_columns(&ortho, &keep, sz.as_ref());
    let k_basis = scale_columns(&k_ortho, &keep, sz.as_ref());
    let gram_k = coupling.pairing.riesz_mat(basis.as_ref()).adjoint() * &k_basis;
    Ok(DefectSubspace {
        rank: basis.ncols(),
        basis,
        k_basis,
        gram_k,
    })
}

/// Precomputed data for evaluating the restricted resolvent operator at
/// many shifts: Bloch coefficients of `K b_i` and the band values.
pub struct KappaEvaluator {
    decomp_eigenvalues: Vec<f64>,
    coeffs: CMat,
    gram: CMat,
    tol_res: f64,
}

/// Eigen-decomposition of the restricted operator at one shift.
#[derive(Clone, Debug)]
pub struct ShiftSpectrum {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl KappaEvaluator {
    pub fn new(subspace: &DefectSubspace, decomp: &BlochDecomposition, tol_res: f64) -> Self {
        Self {
            decomp_eigenvalues: decomp.eigenvalues(),
            coeffs: decomp.coefficients(subspace.k_basis.as_ref()),
            gram: hermitian_part(subspace.gram_k.as_ref()),
            tol_res,
        }
    }

    fn spectral_distance(&self, mu: f64) -> f64 {
        let lam = 1.0 / mu - 1.0;
        self.decomp_eigenvalues.iter().fold(f64::INFINITY, |d, &l| d.min((l - lam).abs()))
    }

    /// `(N, M)`: the resolvent-weighted Gram and the `K`-Gram.
    pub fn assemble_a_mu(&self, mu: f64) -> Result<(CMat, CMat)> {
        let distance = self.spectral_distance(mu);
        if !(mu > 0.0) || distance < self.tol_res {
            return Err(Error::MuOnSpectrum { mu, distance });
        }
        let c = &self.coeffs;
        let weighted = Mat::from_fn(c.nrows(), c.ncols(), |s, j| {
            let l1 = self.decomp_eigenvalues[s] + 1.0;
            c[(s, j)] * (1.0 / (l1 * (1.0 - mu * l1)))
        });
        let n = c.adjoint() * &weighted;
        Ok((n, self.gram.clone()))
    }

    pub fn spectrum(&self, mu: f64) -> Result<ShiftSpectrum> {
        let (n, m) = self.assemble_a_mu(mu)?;
        let (values, vectors) = linalg::generalized_hermitian_eigen(hermitian_part(n.as_ref()).as_ref(), m.as_ref())?;
        Ok(ShiftSpectrum { values, vectors })
    }

    /// Lowest eigenvalue of `N x = kappa M x`.
    pub fn kappa(&self, mu: f64) -> Result<f64> {
        Ok(self.spectrum(mu)?.values[0])
    }
}

pub fn kappa(subspace: &DefectSubspace, decomp: &BlochDecomposition, mu: f64, tol_res: f64) -> Result<f64> {
    KappaEvaluator::new(subspace, decomp, tol_res).kappa(mu)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossingOptions {
    pub n_samples: usize,
    /// Smallest distance from the upper gap edge, relative to the window.
    pub eta_min_rel: f64,
    pub tol_cross: f64,
}

impl Default for CrossingOptions {
    fn default() -> Self {
        Self {
            n_samples: 32,
            eta_min_rel: 1e-8,
            tol_cross: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct KappaCurve {
    pub mu_samples: Vec<f64>,
    pub kappa_values: Vec<f64>,
    /// Number of restricted-operator eigenvalues below `-1` per sample, which
    /// counts the gap modes below `1/mu - 1`.
    pub below_counts: Vec<usize>,
    pub crossing_mu: Option<f64>,
    pub crossing_lambda: Option<f64>,
    /// `kappa` at the reported crossing (within `tol_cross` of `-1`).
    pub crossing_kappa: Option<f64>,
    /// Gap modes between the reported (deepest) one and the upper edge, read
    /// off the count at the sample closest to the edge.
    pub modes_above: Option<usize>,
}

/// Log-spaced shifts accumulating at the upper gap edge.
pub fn mu_grid(edge: &GapEdge, opts: &CrossingOptions) -> Vec<f64> {
    let (lo, hi) = edge.mu_window();
    let width = hi - lo;
    let e_min = opts.eta_min_rel * width;
    let e_max = width * (1.0 - 1e-6);
    let n = opts.n_samples.max(2);
    (0..n)
        .map(|i| lo + e_min * (e_max / e_min).powf(i as f64 / (n - 1) as f64))
        .collect()
}

pub fn find_crossing(eval: &KappaEvaluator, edge: &GapEdge, opts: &CrossingOptions) -> Result<KappaCurve> {
    use rayon::prelude::*;
    let mus = mu_grid(edge, opts);
    let spectra: Vec<ShiftSpectrum> = mus.par_iter().map(|&mu| eval.spectrum(mu)).collect::<Result<_>>()?;
    let kappa_values: Vec<f64> = spectra.iter().map(|s| s.values[0]).collect();
    let below_counts: Vec<usize> = spectra.iter().map(|s| s.values.iter().filter(|&&v| v < -1.0).count()).collect();

    let mut curve = KappaCurve {
        mu_samples: mus.clone(),
        kappa_values,
        below_counts,
        crossing_mu: None,
        crossing_lambda: None,
        crossing_kappa: None,
        modes_above: None,
    };
    let first_above = curve.kappa_values.iter().position(|&k| k >= -1.0);
    let Some(i) = first_above else { return Ok(curve) };
    if i == 0 {
        return Ok(curve);
    }
    let (mut a, mut b) = (mus[i - 1], mus[i]);
    let mut best = (b, curve.kappa_values[i]);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let k = eval.kappa(m)?;
        if (k + 1.0).abs() < (best.1 + 1.0).abs() {
            best = (m, k);
        }
        if (k + 1.0).abs() < opts.tol_cross {
            break;
        }
        if k < -1.0 {
            a = m;
        } else {
            b = m;
        }
    }
    let (mu_star, k_star) = best;
    curve.crossing_mu = Some(mu_star);
    curve.crossing_lambda = Some(1.0 / mu_star - 1.0);
    curve.crossing_kappa = Some(k_star);
    curve.modes_above = Some(curve.below_counts[0].saturating_sub(1));
    Ok(curve)
}

/// Rebuild the mode `u = -(I - mu G0^{-1})^{-1} K v` from the lowest
/// eigenvector at `mu` and return `||G1 u - mu u|| / (mu ||u||)` together
/// with `u`.
pub fn reconstruct_mode(
    coupling: &DefectCoupling<'_>,
    subspace: &DefectSubspace,
    decomp: &BlochDecomposition,
    eval: &KappaEvaluator,
    mu: f64,
    tol_res: f64,
) -> Result<(f64, CVec)> {
    let spec = eval.spectrum(mu)?;
    let x = spec.vectors.col(0);
    let kv: CVec = &subspace.k_basis * x;
    let r = crate::greens::apply_shifted_resolvent(decomp, mu, &kv, tol_res)?;
    let u: CVec = Col::from_fn(r.nrows(), |i| -r[i]);
    let g1u = coupling.g1.apply(&u);
    let resid = Col::from_fn(u.nrows(), |i| g1u[i] - u[i] * mu);
    Ok((resid.norm_l2() / (mu * u.norm_l2()), u))
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub lhs_ratio: f64,
    pub lhs_operator: f64,
    pub rhs: f64,
    pub margin_ratio: f64,
    pub margin_operator: f64,
    pub ratio_satisfied: bool,
    pub operator_satisfied: bool,
    /// Whether the perturbation is nontrivial, so the existence result applies.
    pub applicable: bool,
    pub note: String,
}

pub fn check_condition(norms: &NormBundle, edge: &GapEdge) -> ConditionReport {
    let lhs_ratio = norms.ratio_sup * norms.inv_diff_sup;
    let lhs_operator = norms.g1_norm_bound * norms.inv_diff_sup;
    let rhs = (edge.lambda1 - edge.lambda0) / (edge.lambda0 + 1.0);
    let applicable = norms.inv_diff_sup > 0.0;
    let ratio_satisfied = lhs_ratio < rhs;
    let operator_satisfied = lhs_operator < rhs;
    let note = if !applicable {
        "perturbation vanishes; the conditions hold vacuously but no mode is predicted".to_string()
    } else if ratio_satisfied {
        "weak-perturbation condition holds: a mode below the upper gap edge is guaranteed".to_string()
    } else if operator_satisfied {
        "only the sharper operator-norm condition holds".to_string()
    } else {
        "sufficient conditions fail; a crossing may still exist".to_string()
    };
    ConditionReport {
        lhs_ratio,
        lhs_operator,
        rhs,
        margin_ratio: rhs - lhs_ratio,
        margin_operator: rhs - lhs_operator,
        ratio_satisfied,
        operator_satisfied,
        applicable,
        note,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundCheck {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub holds: bool,
    pub skipped: bool,
    pub note: String,
    #[serde(skip)]
    witness: Vec<f64>,
}

impl BoundCheck {
    fn new(name: &str, measured: f64, bound: f64, witness: Vec<f64>) -> Self {
        Self {
            name: name.to_string(),
            measured,
            bound,
            holds: measured <= bound * (1.0 + 1e-12) + 1e-300,
            skipped: false,
            note: String::new(),
            witness,
        }
    }

    fn skipped(name: &str, note: &str) -> Self {
        Self {
            name: name.to_string(),
            measured: f64::NAN,
            bound: f64::NAN,
            holds: true,
            skipped: true,
            note: note.to_string(),
            witness: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    /// Estimates with the constants of the existence argument.
    pub stated: Vec<BoundCheck>,
    /// The same estimates with the contrast `max |1 - eps0/eps1|` in place
    /// of `max |1/eps1 - 1/eps0|`, which is what the energy-norm estimate
    /// actually delivers.
    pub contrast: Vec<BoundCheck>,
    pub k_norm: f64,
    pub g1_norm: f64,
    pub n_vectors: usize,
}

impl BoundReport {
    pub fn all_hold(&self) -> bool {
        self.stated.iter().all(|c| c.holds)
    }

    pub fn violations(&self) -> usize {
        self.stated.iter().filter(|c| !c.holds).count()
    }

    pub fn first_violation(&self) -> Option<Error> {
        self.stated.iter().find(|c| !c.holds).map(|c| Error::BoundViolation {
            which: match c.name.as_str() {
                "k_ratio" => "k_ratio",
                "k_norm" => "k_norm",
                "k_form" => "k_form",
                _ => "g1_norm",
            },
            measured: c.measured,
            bound: c.bound,
            witness: c.witness.clone(),
        })
    }
}

fn random_vectors(dim: usize, count: usize, seed: u64) -> CMat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mat::from_fn(dim, count, |_, _| c64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

fn flatten(v: &CVec) -> Vec<f64> {
    (0..v.nrows()).flat_map(|i| [v[i].re, v[i].im]).collect()
}

/// Largest `||K u|| / ||u||` in the dual norm by power iteration.
pub fn k_norm_estimate(coupling: &DefectCoupling<'_>, steps: usize, seed: u64) -> f64 {
    let dim = coupling.forms.dim();
    let mut u: CVec = random_vectors(dim, 1, seed).col(0).to_owned();
    let mut est = 0.0;
    for _ in 0..steps {
        let nu = coupling.dual_norm(&u);
        if nu == 0.0 {
            return 0.0;
        }
        let ku = coupling.apply(&u);
        let nk = coupling.dual_norm(&ku);
        est = nk / nu;
        if nk == 0.0 {
            return 0.0;
        }
        u = Col::from_fn(dim, |i| ku[i] / nk);
    }
    est
}

/// Norm of `G1` from the dual space to the energy space, by power
/// iteration on `b1^{-1} b0` in the `b0` inner product.
pub fn g1_norm_estimate(coupling: &DefectCoupling<'_>, steps: usize, seed: u64) -> f64 {
    let forms = coupling.forms;
    let dim = forms.dim();
    let b0 = forms.b0();
    let energy = |g: &CVec| linalg::dot(g.as_ref(), (&b0 * g).as_ref()).re.max(0.0).sqrt();
    let mut g: CVec = random_vectors(dim, 1, seed).col(0).to_owned();
    let mut est = 0.0;
    for _ in 0..steps {
        let ng = energy(&g);
        let x = coupling.g1.apply(&(&b0 * &g));
        let nx = energy(&x);
        est = nx / ng;
        g = Col::from_fn(dim, |i| x[i] / nx);
    }
    est
}

/// Check the four perturbation estimates on `n_vectors` random vectors.
pub fn verify_perturbation_bounds(coupling: &DefectCoupling<'_>, norms: &NormBundle, n_vectors: usize, seed: u64) -> BoundReport {
    let dim = coupling.forms.dim();
    let delta = norms.inv_diff_sup;
    let stated_k = norms.g1_norm_bound * delta;
    let contrast_k = norms.ratio_sup * norms.weighted_diff_sup;

    let k_norm = k_norm_estimate(coupling, 30, seed ^ 0x5eed);
    let g1_norm = g1_norm_estimate(coupling, 30, seed ^ 0xbeef);

    let us = random_vectors(dim, n_vectors, seed);
    let kus = coupling.apply_mat(us.as_ref());
    let r_us = coupling.pairing.riesz_mat(us.as_ref());
    let r_kus = coupling.pairing.riesz_mat(kus.as_ref());
    let mut worst_ratio = (0.0f64, 0usize);
    let mut worst_form = (0.0f64, 0usize);
    for j in 0..n_vectors {
        let nu2 = linalg::dot(us.col(j), r_us.col(j)).re;
        let nku2 = linalg::dot(kus.col(j), r_kus.col(j)).re.max(0.0);
        let k_form = linalg::dot(kus.col(j), r_us.col(j)).re;
        let ratio = (nku2 / nu2).sqrt();
        if ratio > worst_ratio.0 {
            worst_ratio = (ratio, j);
        }
        if k_form > 0.0 && k_norm > 0.0 {
            let r = nku2 / (k_norm * k_form);
            if r > worst_form.0 {
                worst_form = (r, j);
            }
        }
    }
    let witness = |j: usize| flatten(&us.col(j).to_owned());

    let mut stated = vec![
        BoundCheck::new("k_ratio", worst_ratio.0, stated_k, witness(worst_ratio.1)),
        BoundCheck::new("k_norm", k_norm, stated_k, Vec::new()),
        BoundCheck::new("k_form", worst_form.0, 1.0, witness(worst_form.1)),
    ];
    let mut contrast = vec![
        BoundCheck::new("k_ratio", worst_ratio.0, contrast_k, Vec::new()),
        BoundCheck::new("k_norm", k_norm, contrast_k, Vec::new()),
    ];
    if delta * crate::medium::G0_NORM < 1.0 {
        stated.push(BoundCheck::new(
            "g1_norm",
            g1_norm,
            crate::medium::G0_NORM / (1.0 - delta * crate::medium::G0_NORM),
            Vec::new(),
        ));
    } else {
        stated.push(BoundCheck::skipped("g1_norm", "precondition fails: delta * ||G0|| >= 1"));
    }
    contrast.push(BoundCheck::new("g1_norm", g1_norm, norms.ratio_sup, Vec::new()));
    BoundReport {
        stated,
        contrast,
        k_norm,
        g1_norm,
        n_vectors,
    }
}

/// Coupling of the edge Bloch wave to the defect range.
#[derive(Clone, Debug, Serialize)]
pub struct EdgeInteraction {
    pub node: usize,
    pub node_k_y: f64,
    /// Distance from the node to the edge minimizer.
    pub offset: f64,
    pub coupling: f64,
    pub tol_couple: f64,
    /// False when the coupling is below `tol_couple` (the edge wave does not
    /// see the defect at this resolution).
    pub resolved: bool,
}

pub const TOL_COUPLE: f64 = 1e-12;

pub fn verify_edge_interaction(
    subspace: &DefectSubspace,
    decomp: &BlochDecomposition,
    space: &crate::strip::StripSpace,
    edge: &GapEdge,
) -> Result<EdgeInteraction> {
    let node = space.nearest_node(edge.k0.ky);
    let block = &decomp.blocks[node];
    let s = edge.edge_band - 1;
    if s >= block.vectors.ncols() {
        return Err(Error::IndexOutOfRange {
            index: edge.edge_band,
            limit: block.vectors.ncols(),
        });
    }
    let mut coupling = 0.0f64;
    for j in 0..subspace.k_basis.ncols() {
        let mut acc = c64::new(0.0, 0.0);
        for (i, &idx) in block.members.iter().enumerate() {
            acc += block.vectors[(i, s)].conj() * subspace.k_basis[(idx, j)];
        }
        coupling = coupling.max(acc.norm());
    }
    let d = (block.k_y - edge.k0.ky).rem_euclid(2.0 * std::f64::consts::PI);
    Ok(EdgeInteraction {
        node,
        node_k_y: block.k_y,
        offset: d.min(2.0 * std::f64::consts::PI - d),
        coupling,
        tol_couple: TOL_COUPLE,
        resolved: coupling > TOL_COUPLE,
    })
}
