//! Direct cell-centered discrete Fourier coefficients of sampled fields.
//!
//! Only a small window of frequencies is ever needed, so a separable direct
//! sum with exact twiddle tables beats a full FFT and keeps the Hermitian
//! symmetry `F(-p,-q) = conj F(p,q)` of real inputs to the last bit.

use faer::c64;
use std::f64::consts::PI;

/// `exp(-i pi j / n)` for `j` in `0..2n`.
fn twiddles(n: usize) -> Vec<c64> {
    let mut t = vec![c64::new(0.0, 0.0); 2 * n];
    for j in 0..=n {
        let a = -PI * j as f64 / n as f64;
        t[j] = c64::new(a.cos(), a.sin());
    }
    t[0] = c64::new(1.0, 0.0);
    t[n] = c64::new(-1.0, 0.0);
    // mirror so that opposite frequencies are exact conjugates
    for j in n + 1..2 * n {
        t[j] = t[2 * n - j].conj();
    }
    t
}

/// Coefficients of a real field sampled at cell centers of an `nx x ny`
/// grid (`x` slow), for frequencies `|p| <= px`, `|q| <= qy`:
///
/// `F(p, q) = (1 / (nx ny)) sum f[ix, iy] exp(-i pi (p (2 ix + 1) / nx + q (2 iy + 1) / ny))`.
#[derive(Clone, Debug)]
pub struct Spectrum2 {
    px: usize,
    qy: usize,
    data: Vec<c64>,
}

impl Spectrum2 {
    pub fn compute(samples: &[f64], nx: usize, ny: usize, px: usize, qy: usize) -> Self {
        assert_eq!(samples.len(), nx * ny);
        let tx = twiddles(nx);
        let ty = twiddles(ny);
        let nq = 2 * qy + 1;
        let np = 2 * px + 1;
        // partial[ix][q]
        let mut partial = vec![c64::new(0.0, 0.0); nx * nq];
        for ix in 0..nx {
            let row = &samples[ix * ny..(ix + 1) * ny];
            if row.iter().all(|&v| v == 0.0) {
                continue;
            }
            for (qi, out) in partial[ix * nq..(ix + 1) * nq].iter_mut().enumerate() {
                let q = qi as i64 - qy as i64;
                let mut acc = c64::new(0.0, 0.0);
                for (iy, &v) in row.iter().enumerate() {
                    if v != 0.0 {
                        let j = (q * (2 * iy as i64 + 1)).rem_euclid(2 * ny as i64) as usize;
                        acc += ty[j] * v;
                    }
                }
                *out = acc;
            }
        }
        let scale = 1.0 / (nx * ny) as f64;
        let mut data = vec![c64::new(0.0, 0.0); np * nq];
        for pi in 0..np {
            let p = pi as i64 - px as i64;
            for ix in 0..nx {
                let j = (p * (2 * ix as i64 + 1)).rem_euclid(2 * nx as i64) as usize;
                let w = tx[j] * scale;
                let src = &partial[ix * nq..(ix + 1) * nq];
                let dst = &mut data[pi * nq..(pi + 1) * nq];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        Self { px, qy, data }
    }

    #[inline]
    pub fn get(&self, p: i64, q: i64) -> c64 {
        debug_assert!(p.unsigned_abs() as usize <= self.px && q.unsigned_abs() as usize <= self.qy);
        let nq = 2 * self.qy + 1;
        self.data[(p + self.px as i64) as usize * nq + (q + self.qy as i64) as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_has_only_a_mean() {
        let s = Spectrum2::compute(&vec![3.0; 8 * 12], 8, 12, 3, 5);
        for p in -3..=3 {
            for q in -5..=5 {
                let want = if p == 0 && q == 0 { 3.0 } else { 0.0 };
                assert!((s.get(p, q) - c64::new(want, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn matches_naive_sum_and_is_conjugate_symmetric() {
        let (nx, ny) = (6, 10);
        let f: Vec<f64> = (0..nx * ny).map(|i| ((i * 37 % 11) as f64).sin() + 2.0).collect();
        let s = Spectrum2::compute(&f, nx, ny, 2, 4);
        for p in -2i64..=2 {
            for q in -4i64..=4 {
                let mut acc = c64::new(0.0, 0.0);
                for ix in 0..nx {
                    for iy in 0..ny {
                        let x = (ix as f64 + 0.5) / nx as f64;
                        let y = (iy as f64 + 0.5) / ny as f64;
                        let a = -2.0 * PI * (p as f64 * x + q as f64 * y);
                        acc += c64::new(a.cos(), a.sin()) * f[ix * ny + iy];
                    }
                }
                acc /= (nx * ny) as f64;
                assert!((s.get(p, q) - acc).norm() < 1e-13);
                assert_eq!(s.get(-p, -q), s.get(p, q).conj());
            }
        }
    }
}
