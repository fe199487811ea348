use garmalign_core::bench::{
    chamfer_metric, correspondence_error, make_cloth_pair, moment_box_diagonal, normal_cosine, write_pair, PairSpec, RigidMotion, Sampling, Warp,
    PAIR_FILES,
};
use garmalign_core::diffnet::chamfer;
use garmalign_core::fmap::PointMap;
use garmalign_core::mesh::primitives::{grid, icosphere};
use garmalign_core::mesh::TriMesh;
use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_plane(z: f64) -> TriMesh {
    let g = grid(11, 11, 0.1);
    g.with_vertices(g.vertices().iter().map(|v| Vector3::new(v.x, v.y, z)).collect()).unwrap()
}

fn flipped(mesh: &TriMesh) -> TriMesh {
    let faces = mesh.faces().iter().map(|&[a, b, c]| [a, c, b]).collect();
    TriMesh::new(mesh.vertices().to_vec(), faces, None).unwrap()
}

fn moved(mesh: &TriMesh, rot: &Rotation3<f64>, t: Vector3<f64>) -> TriMesh {
    mesh.with_vertices(mesh.vertices().iter().map(|v| rot * v + t).collect()).unwrap()
}

#[test]
fn chamfer_of_a_mesh_with_itself_is_zero() {
    let m = icosphere(2, 1.0);
    assert!(chamfer_metric(&m, &m, Sampling::Area { count: 100_000, seed: 3 }).unwrap() < 1e-12);
}

#[test]
fn parallel_planes_at_unit_offset() {
    // every query is far from the other sheet, so the tree search degrades to brute force
    let cd = chamfer_metric(&unit_plane(0.0), &unit_plane(1.0), Sampling::Area { count: 20_000, seed: 3 }).unwrap();
    assert!((cd - 2.0).abs() < 1e-3, "{cd}");
}

#[test]
fn vertex_sampling_matches_point_chamfer() {
    let a = icosphere(2, 1.0);
    let b = moved(&icosphere(2, 1.1), &Rotation3::from_euler_angles(0.1, 0.2, 0.3), Vector3::new(0.05, 0.0, 0.0));
    let metric = chamfer_metric(&a, &b, Sampling::Vertices).unwrap();
    let direct = chamfer(&a.vertex_matrix(), &b.vertex_matrix()).unwrap().value;
    assert_eq!(metric, direct);
}

#[test]
fn chamfer_is_exactly_symmetric() {
    let a = unit_plane(0.0);
    let b = icosphere(2, 0.7);
    for s in [Sampling::Vertices, Sampling::Area { count: 5000, seed: 9 }] {
        assert_eq!(chamfer_metric(&a, &b, s).unwrap(), chamfer_metric(&b, &a, s).unwrap());
    }
}

#[test]
fn normal_cosine_identity_flip_and_rotation() {
    let s = icosphere(3, 1.0);
    assert!((normal_cosine(&s, &s, 20_000, 1).unwrap().value - 1.0).abs() < 1e-6);
    assert!((normal_cosine(&s, &flipped(&s), 20_000, 1).unwrap().value + 1.0).abs() < 1e-6);
    let r = moved(&s, &Rotation3::from_euler_angles(0.3, -0.7, 1.1), Vector3::zeros());
    assert!(normal_cosine(&s, &r, 20_000, 1).unwrap().value > 0.999);
}

#[test]
fn metrics_are_invariant_under_a_shared_rigid_motion() {
    let pair = make_cloth_pair(&PairSpec {
        rows: 10,
        cols: 10,
        warps: vec![Warp::Bend { angle: 1.0 }],
        ..Default::default()
    })
    .unwrap();
    let rot = Rotation3::from_euler_angles(1.0, 0.5, -0.3);
    let t = Vector3::new(2.0, -1.0, 0.5);
    let (a, b) = (&pair.source, &pair.target);
    let (ma, mb) = (moved(a, &rot, t), moved(b, &rot, t));
    let s = Sampling::Area { count: 20_000, seed: 4 };
    assert!((chamfer_metric(a, b, s).unwrap() - chamfer_metric(&ma, &mb, s).unwrap()).abs() < 1e-9);
    assert!((normal_cosine(a, b, 20_000, 4).unwrap().value - normal_cosine(&ma, &mb, 20_000, 4).unwrap().value).abs() < 1e-9);
    let shifted = PointMap::new((0..100).map(|i| (i + 1) % 100).collect());
    let e1 = correspondence_error(&shifted, &pair.truth, b).unwrap();
    let e2 = correspondence_error(&shifted, &pair.truth, &mb).unwrap();
    assert!((e1.mean - e2.mean).abs() < 1e-9);
}

#[test]
fn moment_box_of_a_rectangle_is_its_bounding_box() {
    let g = grid(7, 13, 0.1);
    assert!((moment_box_diagonal(&g) - g.bbox_diagonal()).abs() < 1e-12);
    let turned = moved(&g, &Rotation3::from_euler_angles(0.3, 0.9, -0.4), Vector3::new(1.0, 2.0, 3.0));
    assert!((moment_box_diagonal(&turned) - g.bbox_diagonal()).abs() < 1e-12);
}

#[test]
fn perfect_prediction_has_zero_error() {
    let m = grid(5, 5, 0.25);
    let e = correspondence_error(&PointMap::identity(25), &PointMap::identity(25), &m).unwrap();
    assert_eq!((e.mean, e.median, e.p95), (0.0, 0.0, 0.0));
}

#[test]
fn one_ring_shift_costs_one_spacing() {
    let (rows, cols, h) = (12, 12, 0.1);
    let m = grid(rows, cols, h);
    let d = moment_box_diagonal(&m);
    // every vertex mapped to its right neighbor, the last column to its left
    let shifted: Vec<usize> = (0..rows * cols).map(|i| if i % cols + 1 < cols { i + 1 } else { i - 1 }).collect();
    let e = correspondence_error(&PointMap::new(shifted), &PointMap::identity(rows * cols), &m).unwrap();
    assert!((e.mean - h / d).abs() < 1e-12);
    assert!((e.median - h / d).abs() < 1e-12);
}

#[test]
fn random_map_matches_monte_carlo_expectation() {
    let m = grid(10, 10, 1.0 / 9.0);
    let v = m.vertices();
    let d = moment_box_diagonal(&m);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let trials = 10_000;
    let samples: Vec<f64> = (0..trials)
        .map(|_| (v[rng.random_range(0..100)] - v[rng.random_range(0..100)]).norm() / d)
        .collect();
    let mu = samples.iter().sum::<f64>() / trials as f64;
    let var = samples.iter().map(|s| (s - mu).powi(2)).sum::<f64>() / (trials - 1) as f64;
    let predicted = PointMap::new((0..100).map(|_| rng.random_range(0..100)).collect());
    let e = correspondence_error(&predicted, &PointMap::identity(100), &m).unwrap();
    // the mean of 100 draws has standard deviation σ/10
    let sigma = (var / 100.0).sqrt();
    assert!((e.mean - mu).abs() < 3.0 * sigma, "mean {} vs expectation {mu} ± {sigma}", e.mean);
}

#[test]
fn mismatched_maps_are_rejected() {
    let m = grid(3, 3, 1.0);
    assert!(correspondence_error(&PointMap::identity(4), &PointMap::identity(9), &m).is_err());
}

#[test]
fn written_pair_has_every_file() {
    let pair = make_cloth_pair(&PairSpec {
        rows: 6,
        cols: 5,
        warps: vec![Warp::Stretch { factor: 1.3 }],
        rigid: RigidMotion::Random,
        colors: true,
        ..Default::default()
    })
    .unwrap();
    assert_eq!(pair.source.faces(), pair.target.faces());
    let dir = tempfile::tempdir().unwrap();
    write_pair(&pair, dir.path()).unwrap();
    for f in PAIR_FILES {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let truth = PointMap::load(dir.path().join("truth.txt")).unwrap();
    assert_eq!(truth, PointMap::identity(30));
}
