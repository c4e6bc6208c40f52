use std::f64::consts::PI;

use faer::{c64, Col, Mat};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gapmode_core::bands::{BulkOperator, PlaneWaveBasis, Quasimomentum};
use gapmode_core::greens::{self, G1Solver};
use gapmode_core::linalg::{self, CVec, HermitianSolver};
use gapmode_core::medium::{self, build_map, DefectSpec, DielectricMap, Shape};
use gapmode_core::strip::{self, DualPairing};

fn rod_with_defect(n: usize, t: f64) -> DielectricMap {
    let rect = |eps: Option<f64>, delta: Option<f64>| Shape::Rect {
        eps,
        delta,
        center: [0.5, 0.5],
        size: [0.5, 0.5],
    };
    build_map(
        &[rect(Some(9.0), None)],
        &DefectSpec {
            rows: 1,
            shapes: vec![rect(None, Some(t))],
        },
        n,
    )
    .unwrap()
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> CVec {
    Col::from_fn(n, |_| c64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

#[test]
fn free_supercell_of_three_cells() {
    let map = DielectricMap::uniform(1.0, 6).unwrap();
    let space = strip::StripSpace::new(0.4, 3, 1, 6, 0);
    // three cells are too narrow for any defect height
    assert_eq!(space.unwrap_err().name(), "TooNarrowSupercell");
    let (space, forms) = strip::build_strip(&map, 0.4, 7, 1).unwrap();
    for i in 0..space.dof_count() {
        let (mx, my) = space.mode(i);
        let kx = 0.4 + 2.0 * PI * mx as f64;
        let ky = 2.0 * PI * my as f64 / 7.0;
        assert!((forms.stiffness0[(i, i)].re - (kx * kx + ky * ky)).abs() < 1e-11);
    }
}

#[test]
fn perturbed_form_is_below_the_background_form() {
    let map = rod_with_defect(16, 2.0);
    let (_, forms) = strip::build_strip(&map, 0.0, 7, 3).unwrap();
    let gap = &forms.b0() - &forms.b1();
    let ev = linalg::hermitian_eigenvalues(gap.as_ref()).unwrap();
    let scale = linalg::max_abs(forms.b0().as_ref());
    assert!(ev[0] >= -1e-12 * scale);
    assert!(*ev.last().unwrap() > 0.0);
}

#[test]
fn background_form_is_block_diagonal_over_nodes() {
    let map = rod_with_defect(16, 1.0);
    let (space, forms) = strip::build_strip(&map, 0.2, 7, 3).unwrap();
    let mut node = vec![0usize; space.dof_count()];
    for j in 0..space.n_nodes() {
        for &i in space.node_members(j) {
            node[i] = j;
        }
    }
    for i in 0..space.dof_count() {
        for k in 0..space.dof_count() {
            if node[i] != node[k] {
                assert_eq!(forms.stiffness0[(i, k)], c64::new(0.0, 0.0));
            }
        }
    }
}

#[test]
fn node_blocks_reproduce_bulk_bands() {
    let map = rod_with_defect(16, 1.0);
    let (space, forms) = strip::build_strip(&map, 0.3, 7, 3).unwrap();
    let decomp = greens::diagonalize_background(&space, &forms).unwrap();
    let op = BulkOperator::new(&map, PlaneWaveBasis::new(3)).unwrap();
    let n = PlaneWaveBasis::new(3).dimension();
    for block in &decomp.blocks {
        let (bulk, _) = op.eigen(Quasimomentum::new(0.3, block.k_y), n).unwrap();
        for (a, b) in block.eigenvalues.iter().zip(&bulk) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
        // spectral reconstruction of the shifted block
        let members = &block.members;
        let b0 = forms.b0();
        let orig = Mat::from_fn(members.len(), members.len(), |i, k| b0[(members[i], members[k])]);
        let diag = Mat::from_fn(members.len(), members.len(), |i, k| {
            if i == k {
                c64::new(block.eigenvalues[i] + 1.0, 0.0)
            } else {
                c64::new(0.0, 0.0)
            }
        });
        let rebuilt = &block.vectors * &diag * block.vectors.adjoint();
        assert!(linalg::max_abs((&rebuilt - &orig).as_ref()) <= 1e-9 * linalg::max_abs(b0.as_ref()));
    }
}

#[test]
fn single_mode_lands_on_one_node() {
    let space = strip::StripSpace::new(0.0, 7, 2, 10, 1).unwrap();
    for i in [0, 17, space.dof_count() - 1] {
        let f = Col::from_fn(space.dof_count(), |k| c64::new((k == i) as u8 as f64, 0.0));
        let (_, my) = space.mode(i);
        let owner = ((my + 3).rem_euclid(7)) as usize;
        for j in 0..7 {
            let part = strip::floquet_transform(&space, &f, j).unwrap();
            assert_eq!(part.norm_l2() > 0.0, j == owner);
        }
    }
}

#[test]
fn dual_pairing_examples() {
    let map = DielectricMap::uniform(1.0, 6).unwrap();
    let (space, forms) = strip::build_strip(&map, 0.0, 7, 1).unwrap();
    let unit = |m: (i64, i64), a: f64| Col::from_fn(space.dof_count(), |i| c64::new(if space.mode(i) == m { a } else { 0.0 }, 0.0));
    let u = unit((0, 0), 2.0);
    assert!((strip::h_minus1_inner(&forms, &u, &u).unwrap() - c64::new(4.0, 0.0)).norm() < 1e-12);
    let v = unit((1, -2), 1.0);
    assert_eq!(strip::h_minus1_inner(&forms, &u, &v).unwrap().norm(), 0.0);

    let rod = rod_with_defect(16, 1.0);
    let (space, forms) = strip::build_strip(&rod, 0.0, 7, 3).unwrap();
    let pairing = DualPairing::new(&forms).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let u = random_vector(&mut rng, space.dof_count());
        assert!(pairing.inner(&u, &u).re <= u.squared_norm_l2() * (1.0 + 1e-12));
    }
}

#[test]
fn green_operator_acts_on_bloch_waves() {
    let map = rod_with_defect(16, 1.0);
    let (space, forms) = strip::build_strip(&map, 0.0, 7, 3).unwrap();
    let decomp = greens::diagonalize_background(&space, &forms).unwrap();
    let block = &decomp.blocks[2];
    for s in [0, 4] {
        let psi = gapmode_core::oracle::embed_node_vector(&space, 2, block.vectors.col(s));
        let lam = block.eigenvalues[s];
        let u = greens::apply_g0(&decomp, &psi);
        let want = Col::from_fn(psi.nrows(), |i| psi[i] / (lam + 1.0));
        assert!((&u - &want).norm_l2() < 1e-12);
        let mu = 0.9 / (lam + 2.0);
        let r = greens::apply_shifted_resolvent(&decomp, mu, &psi, 1e-9).unwrap();
        let want = Col::from_fn(psi.nrows(), |i| psi[i] / (1.0 - mu * (lam + 1.0)));
        assert!((&r - &want).norm_l2() < 1e-10 * want.norm_l2());
    }
}

#[test]
fn green_operator_and_resolvent_invert_their_forms() {
    let map = rod_with_defect(16, 1.0);
    let (space, forms) = strip::build_strip(&map, 0.0, 7, 3).unwrap();
    let decomp = greens::diagonalize_background(&space, &forms).unwrap();
    let b0 = forms.b0();
    let direct = HermitianSolver::new(b0.as_ref(), "b0").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let lams = decomp.eigenvalues();
    let mid = {
        let mut l = lams.clone();
        l.sort_by(f64::total_cmp);
        let i = (20..l.len()).find(|&i| l[i + 1] - l[i] > 1e-3).unwrap();
        0.5 * (l[i] + l[i + 1])
    };
    let mu = 1.0 / (mid + 1.0);
    for _ in 0..10 {
        let f = random_vector(&mut rng, space.dof_count());
        let u = greens::apply_g0(&decomp, &f);
        assert!((&b0 * &u - &f).norm_l2() <= 1e-10 * f.norm_l2());
        assert!((&u - direct.solve(f.as_ref())).norm_l2() <= 1e-10 * u.norm_l2());

        let r = greens::apply_shifted_resolvent(&decomp, mu, &f, 1e-9).unwrap();
        let br = &b0 * &r;
        let back = Col::from_fn(r.nrows(), |i| r[i] - br[i] * mu);
        assert!((&back - &f).norm_l2() <= 1e-9 * f.norm_l2());
    }
    let on_band = 1.0 / (lams[3] + 1.0);
    let err = greens::apply_shifted_resolvent(&decomp, on_band, &random_vector(&mut rng, space.dof_count()), 1e-9).unwrap_err();
    assert_eq!(err.name(), "MuOnSpectrum");
}

#[test]
fn perturbed_solution_operator() {
    let trivial = rod_with_defect(16, 0.0);
    let (space, forms) = strip::build_strip(&trivial, 0.0, 7, 3).unwrap();
    let decomp = greens::diagonalize_background(&space, &forms).unwrap();
    let g1 = G1Solver::new(&forms).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = random_vector(&mut rng, space.dof_count());
    assert!((g1.apply(&f) - greens::apply_g0(&decomp, &f)).norm_l2() <= 1e-12 * f.norm_l2());

    let map = rod_with_defect(16, 3.0);
    let (space, forms) = strip::build_strip(&map, 0.0, 7, 3).unwrap();
    let g1 = G1Solver::new(&forms).unwrap();
    let pairing = DualPairing::new(&forms).unwrap();
    let ratio = medium::compute_norms(&map).ratio_sup;
    let b0 = forms.b0();
    for _ in 0..10 {
        let f = random_vector(&mut rng, space.dof_count());
        let u = g1.apply(&f);
        let energy = linalg::dot(u.as_ref(), (&b0 * &u).as_ref()).re.sqrt();
        assert!(energy <= ratio * pairing.norm(&f) * (1.0 + 1e-12));
        let real = Col::from_fn(space.dof_count(), |i| c64::new(f[i].re, 0.0));
        let u = g1.apply(&real);
        assert!(linalg::dot(real.as_ref(), u.as_ref()).re >= -1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn floquet_regrouping_is_unitary(seed in any::<u64>(), kx in -PI..PI) {
        let space = strip::StripSpace::new(kx, 9, 2, 10, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_vector(&mut rng, space.dof_count());
        let parts: Vec<CVec> = (0..9).map(|j| strip::floquet_transform(&space, &f, j).unwrap()).collect();
        let total: f64 = parts.iter().map(|p| p.squared_norm_l2()).sum();
        prop_assert!((total - f.squared_norm_l2()).abs() <= 1e-12 * f.squared_norm_l2());
        let back = strip::inverse_floquet(&space, &parts).unwrap();
        prop_assert!((&back - &f).norm_l2() <= 1e-14 * f.norm_l2());
    }
}
