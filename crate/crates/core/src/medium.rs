//! Piecewise-constant permittivity on the unit cell, with an optional line
//! defect that raises the permittivity in a band of cell rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A geometric primitive painted onto the unit cell `[0,1)^2`.
///
/// Membership is decided by the cell center, using the periodic minimum
/// image so shapes may straddle the cell boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Shape {
    Fill {
        #[serde(default)]
        eps: Option<f64>,
        #[serde(default)]
        delta: Option<f64>,
    },
    Rect {
        #[serde(default)]
        eps: Option<f64>,
        #[serde(default)]
        delta: Option<f64>,
        center: [f64; 2],
        size: [f64; 2],
    },
    Disc {
        #[serde(default)]
        eps: Option<f64>,
        #[serde(default)]
        delta: Option<f64>,
        center: [f64; 2],
        radius: f64,
    },
}

/// What a shape does to the cells it covers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Paint {
    Set(f64),
    Add(f64),
}

fn wrap(d: f64) -> f64 {
    d - d.round()
}

impl Shape {
    fn paint(&self) -> Result<Paint> {
        let (eps, delta) = match self {
            Shape::Fill { eps, delta } => (eps, delta),
            Shape::Rect { eps, delta, .. } => (eps, delta),
            Shape::Disc { eps, delta, .. } => (eps, delta),
        };
        match (eps, delta) {
            (Some(e), None) => Ok(Paint::Set(*e)),
            (None, Some(d)) => Ok(Paint::Add(*d)),
            _ => Err(Error::InvalidConfig(
                "each shape needs exactly one of \"eps\" or \"delta\"".into(),
            )),
        }
    }

    /// Whether the point `(x, y)` of the unit cell lies strictly inside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Shape::Fill { .. } => true,
            Shape::Rect { center, size, .. } => {
                let dx = wrap(x - center[0]).abs();
                let dy = wrap(y - center[1]).abs();
                dx < 0.5 * size[0] && dy < 0.5 * size[1]
            }
            Shape::Disc { center, radius, .. } => {
                let dx = wrap(x - center[0]);
                let dy = wrap(y - center[1]);
                dx * dx + dy * dy < radius * radius
            }
        }
    }

    /// Replace an additive increment by `t`; absolute shapes are unchanged.
    pub fn with_amplitude(&self, t: f64) -> Shape {
        let mut s = self.clone();
        match &mut s {
            Shape::Fill { delta, .. } | Shape::Rect { delta, .. } | Shape::Disc { delta, .. } => {
                if delta.is_some() {
                    *delta = Some(t);
                }
            }
        }
        s
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectSpec {
    /// Half-width in cell rows: rows `r` with `|r| < rows` are perturbed.
    pub rows: usize,
    #[serde(default)]
    pub shapes: Vec<Shape>,
}

/// Geometry description as read from a JSON config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumSpec {
    pub lattice_resolution: usize,
    #[serde(default)]
    pub background: Vec<Shape>,
    #[serde(default)]
    pub defect: DefectSpec,
}

impl MediumSpec {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Same geometry with every additive defect increment set to `t`.
    pub fn with_amplitude(&self, t: f64) -> MediumSpec {
        let mut s = self.clone();
        s.defect.shapes = s.defect.shapes.iter().map(|sh| sh.with_amplitude(t)).collect();
        s
    }

    pub fn with_resolution(&self, n: usize) -> MediumSpec {
        MediumSpec {
            lattice_resolution: n,
            ..self.clone()
        }
    }

    pub fn build(&self) -> Result<DielectricMap> {
        build_map(&self.background, &self.defect, self.lattice_resolution)
    }
}

/// Cell-centered permittivity samples of the background and of the
/// perturbed medium.
///
/// Arrays are `N x N`, stored with `x` as the slow index: sample `(ix, iy)`
/// sits at `((ix + 1/2)/N, (iy + 1/2)/N)` and lives at `ix * N + iy`.
#[derive(Clone, Debug, PartialEq)]
pub struct DielectricMap {
    resolution: usize,
    cell_values: Vec<f64>,
    defect_rows: usize,
    /// One `N x N` array per perturbed row, offsets `-(R-1)..=(R-1)`.
    defect_values: Vec<Vec<f64>>,
    lower_bound: f64,
}

fn rasterize(shapes: &[Shape], n: usize, base: &[f64]) -> Result<Vec<f64>> {
    let mut out = base.to_vec();
    for shape in shapes {
        let paint = shape.paint()?;
        for ix in 0..n {
            let x = (ix as f64 + 0.5) / n as f64;
            for iy in 0..n {
                let y = (iy as f64 + 0.5) / n as f64;
                if shape.contains(x, y) {
                    let v = &mut out[ix * n + iy];
                    *v = match paint {
                        Paint::Set(e) => e,
                        Paint::Add(d) => *v + d,
                    };
                }
            }
        }
    }
    Ok(out)
}

fn check_positive(values: &[f64], context: &str) -> Result<()> {
    match values.iter().find(|v| !(**v > 0.0)) {
        Some(v) => Err(Error::NonPositiveEpsilon {
            value: *v,
            context: context.to_string(),
        }),
        None => Ok(()),
    }
}

/// Rasterize background and defect geometry on an `N x N` grid.
///
/// The background starts from vacuum (`eps = 1`). Defect shapes are painted
/// over a copy of the background in each perturbed row.
pub fn build_map(background: &[Shape], defect: &DefectSpec, resolution: usize) -> Result<DielectricMap> {
    if resolution < 4 {
        return Err(Error::InvalidConfig(format!(
            "lattice_resolution must be at least 4, got {resolution}"
        )));
    }
    let n = resolution;
    let vacuum = vec![1.0; n * n];
    let cell_values = rasterize(background, n, &vacuum)?;
    check_positive(&cell_values, "background")?;

    let n_rows = if defect.rows == 0 { 0 } else { 2 * defect.rows - 1 };
    let perturbed = rasterize(&defect.shapes, n, &cell_values)?;
    check_positive(&perturbed, "defect")?;
    let mut defect_values = Vec::with_capacity(n_rows);
    for k in 0..n_rows {
        let row = k as i32 - (defect.rows as i32 - 1);
        for (i, (&b, &p)) in cell_values.iter().zip(&perturbed).enumerate() {
            if p < b {
                return Err(Error::DefectSignViolation {
                    row,
                    ix: i / n,
                    iy: i % n,
                    background: b,
                    perturbed: p,
                });
            }
        }
        defect_values.push(perturbed.clone());
    }

    let lower_bound = cell_values
        .iter()
        .chain(defect_values.iter().flatten())
        .fold(f64::INFINITY, |a, &b| a.min(b));
    Ok(DielectricMap {
        resolution: n,
        cell_values,
        defect_rows: defect.rows,
        defect_values,
        lower_bound,
    })
}

impl DielectricMap {
    /// Homogeneous medium without defect.
    pub fn uniform(eps: f64, resolution: usize) -> Result<Self> {
        build_map(
            &[Shape::Fill {
                eps: Some(eps),
                delta: None,
            }],
            &DefectSpec::default(),
            resolution,
        )
    }

    /// Assemble a map from explicit samples (used by tests and tools that
    /// generate media procedurally).
    pub fn from_samples(resolution: usize, background: Vec<f64>, defect_rows: usize, defect_values: Vec<Vec<f64>>) -> Result<Self> {
        let n = resolution;
        let n_rows = if defect_rows == 0 { 0 } else { 2 * defect_rows - 1 };
        if background.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: background.len(),
            });
        }
        if defect_values.len() != n_rows {
            return Err(Error::DimensionMismatch {
                expected: n_rows,
                got: defect_values.len(),
            });
        }
        check_positive(&background, "background")?;
        for (k, row) in defect_values.iter().enumerate() {
            if row.len() != n * n {
                return Err(Error::DimensionMismatch {
                    expected: n * n,
                    got: row.len(),
                });
            }
            check_positive(row, "defect")?;
            for (i, (&b, &p)) in background.iter().zip(row).enumerate() {
                if p < b {
                    return Err(Error::DefectSignViolation {
                        row: k as i32 - (defect_rows as i32 - 1),
                        ix: i / n,
                        iy: i % n,
                        background: b,
                        perturbed: p,
                    });
                }
            }
        }
        let lower_bound = background
            .iter()
            .chain(defect_values.iter().flatten())
            .fold(f64::INFINITY, |a, &b| a.min(b));
        Ok(Self {
            resolution: n,
            cell_values: background,
            defect_rows,
            defect_values,
            lower_bound,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn background(&self) -> &[f64] {
        &self.cell_values
    }

    pub fn defect_rows(&self) -> usize {
        self.defect_rows
    }

    /// Row offsets (relative to the defect center) that carry a perturbation.
    pub fn perturbed_offsets(&self) -> impl Iterator<Item = i32> + '_ {
        let r = self.defect_rows as i32;
        (0..self.defect_values.len()).map(move |k| k as i32 - (r - 1))
    }

    /// Perturbed samples of the row at `offset` cells from the defect center.
    /// Rows outside the defect return the background.
    pub fn row_values(&self, offset: i32) -> &[f64] {
        let r = self.defect_rows as i32;
        if offset.abs() < r {
            &self.defect_values[(offset + r - 1) as usize]
        } else {
            &self.cell_values
        }
    }

    /// The positive lower bound of all stored values.
    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    /// Background samples over a supercell of `n_cells` rows stacked in `y`,
    /// as an `N x (N * n_cells)` array (`x` slow). Row `(n_cells - 1)/2` is
    /// the defect center.
    pub fn supercell_samples(&self, n_cells: usize, perturbed: bool) -> Vec<f64> {
        let n = self.resolution;
        let ny = n * n_cells;
        let center = (n_cells / 2) as i32;
        let mut out = vec![0.0; n * ny];
        for r in 0..n_cells {
            let vals = if perturbed {
                self.row_values(r as i32 - center)
            } else {
                &self.cell_values
            };
            for ix in 0..n {
                let dst = &mut out[ix * ny + r * n..ix * ny + (r + 1) * n];
                dst.copy_from_slice(&vals[ix * n..(ix + 1) * n]);
            }
        }
        out
    }
}

/// Outcome of checking the standing assumptions on a map.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub positivity: bool,
    pub min_eps: f64,
    pub nonnegative_perturbation: bool,
    pub nontrivial_perturbation: bool,
    /// First strictly perturbed sample as `(row offset, ix, iy)`.
    pub witness: Option<(i32, usize, usize)>,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        self.positivity && self.nonnegative_perturbation && self.nontrivial_perturbation
    }
}

pub fn validate_assumptions(map: &DielectricMap) -> AssumptionReport {
    let n = map.resolution;
    let mut witness = None;
    let mut nonneg = true;
    'rows: for offset in map.perturbed_offsets() {
        for (i, (&b, &p)) in map.cell_values.iter().zip(map.row_values(offset)).enumerate() {
            if p < b {
                nonneg = false;
            }
            if p > b && witness.is_none() {
                witness = Some((offset, i / n, i % n));
                if !nonneg {
                    break 'rows;
                }
            }
        }
    }
    AssumptionReport {
        positivity: map.lower_bound > 0.0,
        min_eps: map.lower_bound,
        nonnegative_perturbation: nonneg,
        nontrivial_perturbation: witness.is_some(),
        witness,
    }
}

/// Sup-norms of the perturbation measured over sample cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormBundle {
    /// `max eps1 / eps0`.
    pub ratio_sup: f64,
    /// `max |1/eps1 - 1/eps0|`.
    pub inv_diff_sup: f64,
    /// Bound on the perturbed solution operator in the background energy norms.
    pub g1_norm_bound: f64,
    /// `max |1 - eps0/eps1|`, the contrast of the coefficient difference
    /// relative to the background coefficient.
    pub weighted_diff_sup: f64,
}

/// The background solution operator has unit norm between the energy space
/// and its dual when both carry the background form.
pub const G0_NORM: f64 = 1.0;

pub fn compute_norms(map: &DielectricMap) -> NormBundle {
    let mut ratio: f64 = 1.0;
    let mut inv_diff: f64 = 0.0;
    let mut weighted: f64 = 0.0;
    for offset in map.perturbed_offsets() {
        for (&e0, &e1) in map.cell_values.iter().zip(map.row_values(offset)) {
            ratio = ratio.max(e1 / e0);
            inv_diff = inv_diff.max((1.0 / e0 - 1.0 / e1).abs());
            weighted = weighted.max((1.0 - e0 / e1).abs());
        }
    }
    let product = inv_diff * G0_NORM;
    let g1_norm_bound = if product < 1.0 {
        ratio.min(G0_NORM / (1.0 - product))
    } else {
        ratio
    };
    NormBundle {
        ratio_sup: ratio,
        inv_diff_sup: inv_diff,
        g1_norm_bound,
        weighted_diff_sup: weighted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rod(eps: f64) -> Shape {
        Shape::Rect {
            eps: Some(eps),
            delta: None,
            center: [0.5, 0.5],
            size: [0.5, 0.5],
        }
    }

    #[test]
    fn uniform_map_has_no_defect() {
        let m = DielectricMap::uniform(1.0, 16).unwrap();
        assert!(m.background().iter().all(|&v| v == 1.0));
        assert_eq!(m.defect_rows(), 0);
        let rep = validate_assumptions(&m);
        assert!(rep.positivity && rep.nonnegative_perturbation);
        assert!(!rep.nontrivial_perturbation);
    }

    #[test]
    fn square_rod_rasterizes_to_a_block() {
        let m = build_map(&[rod(9.0)], &DefectSpec::default(), 32).unwrap();
        let count = m.background().iter().filter(|&&v| v == 9.0).count();
        assert_eq!(count, 256);
        for ix in 0..32 {
            for iy in 0..32 {
                let inside = (8..24).contains(&ix) && (8..24).contains(&iy);
                assert_eq!(m.background()[ix * 32 + iy] == 9.0, inside);
            }
        }
    }

    #[test]
    fn defect_overlay_adds_on_rod_cells_only() {
        let defect = DefectSpec {
            rows: 1,
            shapes: vec![Shape::Rect {
                eps: None,
                delta: Some(0.5),
                center: [0.5, 0.5],
                size: [0.5, 0.5],
            }],
        };
        let m = build_map(&[rod(9.0)], &defect, 32).unwrap();
        let diff: Vec<f64> = m.row_values(0).iter().zip(m.background()).map(|(a, b)| a - b).collect();
        assert_eq!(diff.iter().filter(|&&d| d == 0.5).count(), 256);
        assert_eq!(diff.iter().filter(|&&d| d == 0.0).count(), 1024 - 256);
        assert_eq!(m.row_values(1), m.background());
        let rep = validate_assumptions(&m);
        assert!(rep.all_hold());
        assert_eq!(rep.witness, Some((0, 8, 8)));
    }

    #[test]
    fn single_cell_perturbation_is_the_witness() {
        let n = 8;
        let bg = vec![1.0; n * n];
        let mut row = bg.clone();
        row[3 * n + 5] = 1.5;
        let m = DielectricMap::from_samples(n, bg, 1, vec![row]).unwrap();
        let rep = validate_assumptions(&m);
        assert!(rep.all_hold());
        assert_eq!(rep.witness, Some((0, 3, 5)));
    }

    #[test]
    fn lowering_eps_is_rejected() {
        let defect = DefectSpec {
            rows: 1,
            shapes: vec![rod(8.0)],
        };
        let err = build_map(&[rod(9.0)], &defect, 16).unwrap_err();
        assert_eq!(err.name(), "DefectSignViolation");
    }

    #[test]
    fn nonpositive_eps_is_rejected() {
        let err = build_map(&[rod(0.0)], &DefectSpec::default(), 16).unwrap_err();
        assert_eq!(err.name(), "NonPositiveEpsilon");
        let defect = DefectSpec {
            rows: 1,
            shapes: vec![Shape::Fill {
                eps: None,
                delta: Some(-2.0),
            }],
        };
        assert_eq!(build_map(&[], &defect, 16).unwrap_err().name(), "NonPositiveEpsilon");
    }

    #[test]
    fn norms_of_a_doubled_defect() {
        let defect = DefectSpec {
            rows: 1,
            shapes: vec![Shape::Fill {
                eps: Some(2.0),
                delta: None,
            }],
        };
        let m = build_map(&[], &defect, 8).unwrap();
        let nb = compute_norms(&m);
        assert_eq!(nb.ratio_sup, 2.0);
        assert_eq!(nb.inv_diff_sup, 0.5);
        assert_eq!(nb.g1_norm_bound, 2.0);
        assert_eq!(nb.weighted_diff_sup, 0.5);
    }

    #[test]
    fn trivial_overlay_gives_zero_norms() {
        let defect = DefectSpec {
            rows: 2,
            shapes: vec![],
        };
        let m = build_map(&[rod(9.0)], &defect, 16).unwrap();
        let nb = compute_norms(&m);
        assert_eq!(nb.inv_diff_sup, 0.0);
        assert_eq!(nb.ratio_sup, 1.0);
        assert!(!validate_assumptions(&m).nontrivial_perturbation);
    }

    #[test]
    fn disc_membership_uses_minimum_image() {
        let disc = Shape::Disc {
            eps: Some(4.0),
            delta: None,
            center: [0.0, 0.0],
            radius: 0.2,
        };
        assert!(disc.contains(0.95, 0.05));
        assert!(!disc.contains(0.5, 0.5));
    }

    #[test]
    fn config_parses_and_amplitude_rewrites_delta() {
        let text = r#"{"lattice_resolution": 16,
            "background": [{"kind": "rect", "eps": 9.0, "center": [0.5, 0.5], "size": [0.5, 0.5]}],
            "defect": {"rows": 1, "shapes": [{"kind": "rect", "delta": 0.2, "center": [0.5, 0.5], "size": [0.5, 0.5]}]}}"#;
        let spec = MediumSpec::from_json(text).unwrap();
        let m = spec.with_amplitude(3.0).build().unwrap();
        assert_eq!(compute_norms(&m).ratio_sup, 12.0 / 9.0);
    }

    #[test]
    fn supercell_stacks_rows_around_the_center() {
        let n = 4;
        let bg = vec![1.0; n * n];
        let row = vec![2.0; n * n];
        let m = DielectricMap::from_samples(n, bg, 1, vec![row]).unwrap();
        let s = m.supercell_samples(5, true);
        let ny = n * 5;
        for ix in 0..n {
            for y in 0..ny {
                let expect = if y / n == 2 { 2.0 } else { 1.0 };
                assert_eq!(s[ix * ny + y], expect);
            }
        }
        assert!(m.supercell_samples(5, false).iter().all(|&v| v == 1.0));
    }
}
