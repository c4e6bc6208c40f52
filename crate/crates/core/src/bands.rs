//! Plane-wave band structure of the doubly periodic cell operator, gap
//! detection over the Brillouin zone, and gap-edge analysis on a fiber.

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fourier::Spectrum2;
use crate::linalg::{self, CMat};
use crate::medium::DielectricMap;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quasimomentum {
    pub kx: f64,
    pub ky: f64,
}

impl Quasimomentum {
    pub fn new(kx: f64, ky: f64) -> Self {
        Self { kx, ky }
    }

    fn check(&self) -> Result<()> {
        let lim = PI * (1.0 + 1e-12);
        if self.kx.abs() > lim || self.ky.abs() > lim || !self.kx.is_finite() || !self.ky.is_finite() {
            return Err(Error::QuasimomentumOutOfRange {
                kx: self.kx,
                ky: self.ky,
            });
        }
        Ok(())
    }
}

/// Uniform `a x b` grid over `[-pi, pi)^2`, `kx` slow.
pub fn brillouin_grid(a: usize, b: usize) -> Vec<Quasimomentum> {
    let mut out = Vec::with_capacity(a * b);
    for i in 0..a {
        for j in 0..b {
            out.push(Quasimomentum::new(
                -PI + TWO_PI * i as f64 / a as f64,
                -PI + TWO_PI * j as f64 / b as f64,
            ));
        }
    }
    out
}

/// Plane waves `exp(2 pi i m.x)` with `|m_x|, |m_y| <= G`, enumerated
/// row-major over `(m_x, m_y)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaneWaveBasis {
    pub half_order: usize,
}

impl PlaneWaveBasis {
    pub fn new(half_order: usize) -> Self {
        Self { half_order }
    }

    pub fn side(&self) -> usize {
        2 * self.half_order + 1
    }

    pub fn dimension(&self) -> usize {
        self.side() * self.side()
    }

    pub fn index(&self, mx: i64, my: i64) -> usize {
        let g = self.half_order as i64;
        ((mx + g) * (2 * g + 1) + (my + g)) as usize
    }

    pub fn mode(&self, index: usize) -> (i64, i64) {
        let g = self.half_order as i64;
        let s = self.side();
        ((index / s) as i64 - g, (index % s) as i64 - g)
    }

    /// Smallest grid resolution that represents every coefficient difference.
    pub fn required_resolution(&self) -> usize {
        4 * self.half_order + 2
    }
}

/// Cell operator with the Fourier coefficients of `1/eps0` cached, ready to
/// be assembled at any quasimomentum.
#[derive(Clone, Debug)]
pub struct BulkOperator {
    basis: PlaneWaveBasis,
    eta: Spectrum2,
}

impl BulkOperator {
    pub fn new(map: &DielectricMap, basis: PlaneWaveBasis) -> Result<Self> {
        let n = map.resolution();
        if n < basis.required_resolution() {
            return Err(Error::ResolutionMismatch {
                resolution: n,
                half_order: basis.half_order,
                required: basis.required_resolution(),
            });
        }
        let inv: Vec<f64> = map.background().iter().map(|e| 1.0 / e).collect();
        let g2 = 2 * basis.half_order;
        Ok(Self {
            basis,
            eta: Spectrum2::compute(&inv, n, n, g2, g2),
        })
    }

    pub fn basis(&self) -> PlaneWaveBasis {
        self.basis
    }

    /// `H[m, n] = (k + 2 pi m).(k + 2 pi n) eta(m - n)`, exactly Hermitian.
    pub fn matrix(&self, k: Quasimomentum) -> Result<CMat> {
        k.check()?;
        let dim = self.basis.dimension();
        let shifted: Vec<(f64, f64, i64, i64)> = (0..dim)
            .map(|i| {
                let (mx, my) = self.basis.mode(i);
                (k.kx + TWO_PI * mx as f64, k.ky + TWO_PI * my as f64, mx, my)
            })
            .collect();
        let mut h = Mat::zeros(dim, dim);
        for j in 0..dim {
            let (bx, by, nx, ny) = shifted[j];
            for i in 0..=j {
                let (ax, ay, mx, my) = shifted[i];
                let v = self.eta.get(mx - nx, my - ny) * (ax * bx + ay * by);
                if i == j {
                    h[(i, i)] = faer::c64::new(v.re, 0.0);
                } else {
                    h[(i, j)] = v;
                    h[(j, i)] = v.conj();
                }
            }
        }
        Ok(h)
    }

    /// Ascending eigenpairs at `k`, truncated to the lowest `n_bands`.
    pub fn eigen(&self, k: Quasimomentum, n_bands: usize) -> Result<(Vec<f64>, CMat)> {
        let h = self.matrix(k)?;
        let (mut vals, vecs) = linalg::hermitian_eigen(h.as_ref()).ok_or(Error::EigensolverFailure {
            kx: k.kx,
            ky: k.ky,
        })?;
        vals.truncate(n_bands);
        Ok((vals, vecs.subcols(0, n_bands).to_owned()))
    }
}

pub fn assemble_bulk_operator(map: &DielectricMap, k: Quasimomentum, basis: PlaneWaveBasis) -> Result<CMat> {
    BulkOperator::new(map, basis)?.matrix(k)
}

/// Band values and Bloch vectors on a list of quasimomenta.
#[derive(Clone, Debug)]
pub struct BandStructure {
    pub k_grid: Vec<Quasimomentum>,
    /// `bands[i][s]` is the `(s+1)`-th band at `k_grid[i]`.
    pub bands: Vec<Vec<f64>>,
    /// Unit-norm plane-wave coefficients, one column per band.
    pub bloch_vectors: Vec<CMat>,
}

impl BandStructure {
    pub fn n_bands(&self) -> usize {
        self.bands.first().map_or(0, |b| b.len())
    }

    /// Values of band `s` (1-based) across the grid.
    pub fn band(&self, s: usize) -> impl Iterator<Item = f64> + '_ {
        self.bands.iter().map(move |b| b[s - 1])
    }
}

pub fn compute_bands(
    map: &DielectricMap,
    k_grid: &[Quasimomentum],
    n_bands: usize,
    basis: PlaneWaveBasis,
) -> Result<BandStructure> {
    let op = BulkOperator::new(map, basis)?;
    compute_bands_with(&op, k_grid, n_bands)
}

pub fn compute_bands_with(op: &BulkOperator, k_grid: &[Quasimomentum], n_bands: usize) -> Result<BandStructure> {
    let dim = op.basis().dimension();
    if n_bands == 0 || n_bands > dim {
        return Err(Error::InvalidConfig(format!(
            "band count {n_bands} must lie in 1..={dim}"
        )));
    }
    let results: Vec<(Vec<f64>, CMat)> = k_grid
        .par_iter()
        .map(|&k| op.eigen(k, n_bands))
        .collect::<Result<_>>()?;
    let (bands, bloch_vectors) = results.into_iter().unzip();
    Ok(BandStructure {
        k_grid: k_grid.to_vec(),
        bands,
        bloch_vectors,
    })
}

/// An interval free of spectrum between consecutive bands.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub lower: f64,
    pub upper: f64,
    /// 1-based index of the band below the gap.
    pub lower_band: usize,
    /// 1-based index of the band above the gap.
    pub upper_band: usize,
}

impl Gap {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Relative separation below which touching bands are not called a gap.
const GAP_REL_TOL: f64 = 1e-8;

pub fn find_gaps(bands: &BandStructure) -> Vec<Gap> {
    let s_max = bands.n_bands();
    let mut out = Vec::new();
    for s in 1..s_max {
        let lower = bands.band(s).fold(f64::NEG_INFINITY, f64::max);
        let upper = bands.band(s + 1).fold(f64::INFINITY, f64::min);
        if upper - lower > GAP_REL_TOL * upper.abs().max(1.0) {
            out.push(Gap {
                lower,
                upper,
                lower_band: s,
                upper_band: s + 1,
            });
        }
    }
    out
}

/// Gap data on the fiber `k_x = k_x0` together with the quadratic bound of
/// the edge band near its minimizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapEdge {
    /// Top of band `M-1` along the fiber.
    pub lambda0: f64,
    /// Bottom of band `M` along the fiber.
    pub lambda1: f64,
    pub edge_band: usize,
    pub k0: Quasimomentum,
    pub alpha: f64,
    pub simple_edge: bool,
    /// The zone-wide gap this fiber analysis started from.
    pub zone_gap: Gap,
}

impl GapEdge {
    pub fn width(&self) -> f64 {
        self.lambda1 - self.lambda0
    }

    /// `mu = 1/(lambda+1)` image of the gap, ascending.
    pub fn mu_window(&self) -> (f64, f64) {
        (1.0 / (self.lambda1 + 1.0), 1.0 / (self.lambda0 + 1.0))
    }
}

/// Vertex of the parabola through three equally spaced samples, as an
/// offset in units of the spacing.
fn parabola_vertex(fm: f64, f0: f64, fp: f64) -> f64 {
    let curv = fm - 2.0 * f0 + fp;
    if curv.abs() < f64::MIN_POSITIVE {
        0.0
    } else {
        (0.5 * (fm - fp) / curv).clamp(-1.0, 1.0)
    }
}

fn wrap_pi(k: f64) -> f64 {
    let w = (k + PI).rem_euclid(TWO_PI) - PI;
    if w <= -PI { w + TWO_PI } else { w }
}

/// Least-squares curvature `c` of `a + b x + c x^2`.
fn quadratic_fit(xs: &[f64], ys: &[f64]) -> f64 {
    // normal equations on the monomials 1, x, x^2
    let mut s = [0.0f64; 5];
    let mut t = [0.0f64; 3];
    for (&x, &y) in xs.iter().zip(ys) {
        let mut p = 1.0;
        for (k, sk) in s.iter_mut().enumerate() {
            *sk += p;
            if k < 3 {
                t[k] += p * y;
            }
            p *= x;
        }
    }
    let a = [[s[0], s[1], s[2]], [s[1], s[2], s[3]], [s[2], s[3], s[4]]];
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let mut a2 = a;
    for r in 0..3 {
        a2[r][2] = t[r];
    }
    det(a2) / det(a)
}

/// Scan bands `M-1` and `M` along `k_x = k_x0` on a periodic grid of
/// `fine_grid` points in `k_y`, locate the minimizer of band `M`, fit the
/// quadratic bound and test that the minimum is attained once.
pub fn locate_gap_edge(
    op: &BulkOperator,
    gap: &Gap,
    kx0: f64,
    fine_grid: usize,
    tol_edge_rel: f64,
) -> Result<GapEdge> {
    if fine_grid < 16 || fine_grid % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "edge scan grid must be even and at least 16, got {fine_grid}"
        )));
    }
    let m = gap.upper_band;
    let h = TWO_PI / fine_grid as f64;
    let kys: Vec<f64> = (0..fine_grid).map(|i| -PI + h * i as f64).collect();
    let grid: Vec<Quasimomentum> = kys.iter().map(|&ky| Quasimomentum::new(kx0, ky)).collect();
    let values: Vec<Vec<f64>> = grid
        .par_iter()
        .map(|&k| op.eigen(k, m).map(|(v, _)| v))
        .collect::<Result<_>>()?;
    let upper: Vec<f64> = values.iter().map(|v| v[m - 1]).collect();
    let lower: Vec<f64> = values.iter().map(|v| v[m - 2]).collect();
    let at = |i: isize| -> usize { i.rem_euclid(fine_grid as isize) as usize };
    let band_at = |ky: f64, s: usize| -> Result<f64> { Ok(op.eigen(Quasimomentum::new(kx0, ky), s)?.0[s - 1]) };

    // top of the lower band
    let i_max = (0..fine_grid).fold(0, |b, i| if lower[i] > lower[b] { i } else { b });
    let off = parabola_vertex(lower[at(i_max as isize - 1)], lower[i_max], lower[at(i_max as isize + 1)]);
    let lambda0 = lower[i_max].max(band_at(wrap_pi(kys[i_max] + off * h), m - 1)?);

    // bottom of the edge band
    let i_min = (0..fine_grid).fold(0, |b, i| if upper[i] < upper[b] { i } else { b });
    let off = parabola_vertex(upper[at(i_min as isize - 1)], upper[i_min], upper[at(i_min as isize + 1)]);
    let ky0 = wrap_pi(kys[i_min] + off * h);
    let refined = band_at(ky0, m)?;
    let (ky0, lambda1) = if refined <= upper[i_min] {
        (ky0, refined)
    } else {
        (kys[i_min], upper[i_min])
    };
    if lambda1 <= lambda0 {
        return Err(Error::NoSuchGap(m));
    }

    // a second local minimum at the same height breaks simplicity
    let tol_edge = tol_edge_rel * (lambda1 - lambda0);
    for i in 0..fine_grid {
        if i == i_min {
            continue;
        }
        let (prev, next) = (upper[at(i as isize - 1)], upper[at(i as isize + 1)]);
        let is_local_min = upper[i] <= prev && upper[i] < next;
        let adjacent = at(i as isize - 1) == i_min || at(i as isize + 1) == i_min;
        if is_local_min && !adjacent && upper[i] <= upper[i_min] + tol_edge {
            return Err(Error::DegenerateEdge {
                kx0,
                first: ky0,
                second: kys[i],
            });
        }
    }

    // quadratic bound from a +-5 point neighbourhood
    let (xs, ys): (Vec<f64>, Vec<f64>) = (-5isize..=5)
        .map(|d| (kys[i_min] + d as f64 * h - ky0, upper[at(i_min as isize + d)]))
        .unzip();
    let curvature = quadratic_fit(&xs, &ys);
    let mut alpha = 1.1 * curvature.max(0.0);
    for (&x, &y) in xs.iter().zip(&ys) {
        if x.abs() > 1e-12 && y > lambda1 + alpha * x * x {
            alpha = 1.1 * (y - lambda1) / (x * x);
        }
    }

    Ok(GapEdge {
        lambda0,
        lambda1,
        edge_band: m,
        k0: Quasimomentum::new(kx0, ky0),
        alpha,
        simple_edge: true,
        zone_gap: *gap,
    })
}
