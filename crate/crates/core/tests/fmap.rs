use garmalign_core::fmap::{apply_fmap, fmap_from_embeddings, fmap_from_p2p, linear_icp_refine, p2p_nearest, FunctionalMap, PointMap};
use garmalign_core::mesh::primitives::grid;
use garmalign_core::spectral::{mesh_eigenbasis, EigenOptions, SpectralBasis};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(n: usize, k: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0))
}

/// Product of Givens rotations with random angles up to `max_angle` on
/// every coordinate plane.
fn random_rotation(k: usize, max_angle: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = DMatrix::<f64>::identity(k, k);
    for a in 0..k {
        for b in a + 1..k {
            let t: f64 = rng.random_range(-max_angle..max_angle);
            let mut g = DMatrix::<f64>::identity(k, k);
            g[(a, a)] = t.cos();
            g[(b, b)] = t.cos();
            g[(a, b)] = -t.sin();
            g[(b, a)] = t.sin();
            q = q * g;
        }
    }
    q
}

fn naive_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), b.ncols());
    for i in 0..a.nrows() {
        for j in 0..b.ncols() {
            let mut s = 0.0;
            for l in 0..a.ncols() {
                s += a[(i, l)] * b[(l, j)];
            }
            out[(i, j)] = s;
        }
    }
    out
}

fn grid_basis(k: usize) -> SpectralBasis {
    mesh_eigenbasis(&grid(14, 12, 0.1), k, &EigenOptions::default()).unwrap()
}

#[test]
fn identical_point_sets_map_to_themselves() {
    let p = random(50, 3, 1);
    assert_eq!(p2p_nearest(&p, &p).unwrap().target, (0..50).collect::<Vec<_>>());
}

#[test]
fn nearest_matches_brute_force_argmin() {
    let s = random(100, 3, 2);
    let t = random(100, 3, 3);
    let got = p2p_nearest(&s, &t).unwrap();
    for i in 0..100 {
        let mut best = (0, f64::INFINITY);
        for j in 0..100 {
            let d = (s.row(i) - t.row(j)).norm_squared();
            if d < best.1 {
                best = (j, d);
            }
        }
        assert_eq!(got.target[i], best.0);
    }
    assert!(p2p_nearest(&s, &DMatrix::zeros(0, 3)).is_err());
}

#[test]
fn identity_correspondence_gives_identity_map() {
    let basis = grid_basis(10);
    let a0 = fmap_from_p2p(&basis, &basis, &PointMap::identity(basis.n_vertices())).unwrap();
    let eye = DMatrix::<f64>::identity(10, 10);
    assert!((&a0.c - &eye).amax() < 1e-8);
    assert!(a0.residual < 1e-8);
}

#[test]
fn sign_flipped_basis_gives_signed_diagonal() {
    let basis = grid_basis(8);
    let mut flipped = basis.clone();
    flipped.phi.column_mut(1).neg_mut();
    let a0 = fmap_from_p2p(&basis, &flipped, &PointMap::identity(basis.n_vertices())).unwrap();
    let mut want = DMatrix::<f64>::identity(8, 8);
    want[(1, 1)] = -1.0;
    assert!((&a0.c - &want).amax() < 1e-8);
}

#[test]
fn gather_invariance_under_target_permutation() {
    let phi_m = random(40, 5, 4);
    let phi_n = random(30, 5, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p2p = PointMap::new((0..40).map(|_| rng.random_range(0..30)).collect());
    let base = fmap_from_embeddings(&phi_m, &phi_n, &p2p).unwrap();
    // π: new row r holds old row perm[r]; j(i) follows the moved row
    let perm: Vec<usize> = (0..30).map(|r| (r * 7 + 3) % 30).collect();
    let mut inverse = vec![0; 30];
    for (r, &old) in perm.iter().enumerate() {
        inverse[old] = r;
    }
    let permuted = DMatrix::from_fn(30, 5, |r, c| phi_n[(perm[r], c)]);
    let moved = PointMap::new(p2p.target.iter().map(|&j| inverse[j]).collect());
    let other = fmap_from_embeddings(&phi_m, &permuted, &moved).unwrap();
    assert!((&base.c - &other.c).amax() < 1e-12);
}

#[test]
fn apply_identity_zero_and_naive_product() {
    let phi = random(25, 6, 7);
    assert_eq!(apply_fmap(&phi, &FunctionalMap::identity(6)).unwrap(), phi);
    let zero = apply_fmap(&phi, &FunctionalMap::new(DMatrix::zeros(6, 6))).unwrap();
    assert!(zero.iter().all(|&x| x == 0.0));
    let c = random(6, 6, 8);
    let got = apply_fmap(&phi, &FunctionalMap::new(c.clone())).unwrap();
    assert!((got - naive_product(&phi, &c)).amax() < 1e-12);
    assert!(apply_fmap(&phi, &FunctionalMap::identity(5)).is_err());
}

#[test]
fn icp_on_aligned_embeddings_is_identity() {
    let emb = random(80, 4, 9);
    let r = linear_icp_refine(&emb, &emb, 1, None).unwrap();
    assert!((&r.map.c - DMatrix::<f64>::identity(4, 4)).amax() < 1e-10);
    assert_eq!(r.p2p.target, (0..80).collect::<Vec<_>>());
}

#[test]
fn icp_recovers_a_random_rotation() {
    // orthogonal ICP is local: the rotation must keep most nearest neighbors right
    let k = 4;
    let emb_m = random(300, k, 10);
    let rot = random_rotation(k, 0.3, 11);
    let emb_n = &emb_m * &rot;
    let r = linear_icp_refine(&emb_m, &emb_n, 5, None).unwrap();
    let inv = rot.transpose();
    assert!((&r.map.c - &inv).norm() < 1e-6, "ICP map off by {}", (&r.map.c - &inv).norm());
}

#[test]
fn icp_error_never_increases() {
    for trial in 0..20u64 {
        let emb_m = random(60, 5, 100 + trial);
        let emb_n = &emb_m * random_rotation(5, 1.0, 200 + trial) + random(60, 5, 300 + trial) * 0.05;
        let r = linear_icp_refine(&emb_m, &emb_n, 8, None).unwrap();
        for w in r.errors.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "trial {trial}: {:?}", r.errors);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn apply_composes(seed in 0u64..10_000) {
        let phi = random(12, 4, seed);
        let c1 = random(4, 4, seed + 1);
        let c2 = random(4, 4, seed + 2);
        let two_step = apply_fmap(&apply_fmap(&phi, &FunctionalMap::new(c1.clone())).unwrap(), &FunctionalMap::new(c2.clone())).unwrap();
        let one_step = apply_fmap(&phi, &FunctionalMap::new(&c1 * &c2)).unwrap();
        prop_assert!((two_step - one_step).amax() < 1e-10);
    }

    #[test]
    fn point_map_is_total_and_in_range(seed in 0u64..10_000, n in 1usize..40, m in 1usize..40) {
        let s = random(n, 3, seed);
        let t = random(m, 3, seed + 1);
        let p = p2p_nearest(&s, &t).unwrap();
        prop_assert_eq!(p.len(), n);
        prop_assert!(p.target.iter().all(|&j| j < m));
    }
}
