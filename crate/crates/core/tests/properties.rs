use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

use primrnn::encoder::{DepthImage, DEPTH_SIZE};
use primrnn::energy::{energy_positive, EnergyConfig, EnergyProblem};
use primrnn::geom::{mirror_primitive, rotation_matrix, voxel_occupancy, Axis, Plane, Primitive, Solid, TriangleMesh};
use primrnn::io::depth::{decode_pgm, encode_pgm, format_grid, parse_grid};
use primrnn::io::{read_prims, read_sequences, read_weights, write_prims, write_sequences, write_weights, PrimsFile, PrimsMetadata, SequenceRecord};
use primrnn::metrics::{face_label_accuracy, iou_grids};
use primrnn::parser::PrimitiveSet;
use primrnn::seqgen::{detokenize, mdn_loss, mixture_from_raw, tokenize, MixtureParams, ModelConfig, ModelWeights, Stats};

fn vec3(lo: f64, hi: f64) -> impl Strategy<Value = Vector3<f64>> {
    (lo..hi, lo..hi, lo..hi).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn primitive() -> impl Strategy<Value = Primitive> {
    (vec3(0.2, 2.0), vec3(-1.0, 1.0), vec3(-PI, PI)).prop_map(|(s, t, r)| Primitive::new(s, t, r))
}

fn axis() -> impl Strategy<Value = Axis> {
    (0usize..3).prop_map(Axis::from_index)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rotations_are_proper(theta in vec3(-10.0, 10.0)) {
        let r = rotation_matrix(&theta);
        prop_assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mirroring_twice_is_identity(p in primitive(), a in axis(), offset in -1.0..1.0) {
        let plane = Plane::new(a, offset);
        let back = mirror_primitive(&mirror_primitive(&p, &plane), &plane);
        let corners = back.corners();
        for c in p.corners() {
            let d = corners.iter().map(|b| (b - c).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(d < 1e-9);
        }
    }

    #[test]
    fn occupancy_matches_inverse_transform(p in primitive(), res in 4usize..12) {
        let g = voxel_occupancy(Solid::Primitives(&[p]), res).unwrap();
        let r = rotation_matrix(&p.rotation);
        for i in 0..g.spec.len() {
            let c = g.spec.center(i);
            let local = r.transpose() * (c - p.translation);
            let inside = (0..3).all(|a| local[a].abs() <= 0.5 * p.scale[a] + 1e-12);
            if (0..3).all(|a| ((local[a].abs() - 0.5 * p.scale[a]).abs()) > 1e-9) {
                prop_assert_eq!(g.cells[i], inside);
            }
        }
    }

    #[test]
    fn positive_energy_is_rigid_invariant(p in primitive(), pts in prop::collection::vec(vec3(-2.0, 2.0), 5..40),
                                          rot in vec3(-PI, PI), shift in vec3(-5.0, 5.0)) {
        let cfg = EnergyConfig::default().with_sigma(0.7);
        let r = rotation_matrix(&rot);
        let moved_pts: Vec<_> = pts.iter().map(|q| r * q + shift).collect();
        let rp = r * rotation_matrix(&p.rotation);
        let euler = nalgebra::Rotation3::from_matrix_unchecked(rp).euler_angles();
        let moved = Primitive::new(p.scale, r * p.translation + shift, Vector3::new(euler.0, euler.1, euler.2));
        let a = energy_positive(&p, &pts, &cfg).unwrap();
        let b = energy_positive(&moved, &moved_pts, &cfg).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn weighted_energy_is_linear_in_alpha(p in primitive(), q in prop::collection::vec(vec3(-2.0, 2.0), 5..30),
                                          qn in prop::collection::vec(vec3(-3.0, 3.0), 5..30)) {
        let at = |alpha: f64| {
            let cfg = EnergyConfig { alpha_min: alpha, alpha_max: alpha, ..EnergyConfig::default() };
            EnergyProblem::new(&q, &qn, &cfg).unwrap()
        };
        let e0 = at(0.0).energy(&p);
        let en = at(1.0).negative(&p);
        for alpha in [0.3, 2.0, 7.5] {
            let e = at(alpha).energy(&p);
            prop_assert!((e - (e0 - alpha * en)).abs() <= 1e-9 * e.abs().max(1.0));
        }
    }

    #[test]
    fn mixtures_are_always_valid(raw in prop::collection::vec(-1e3..1e3f64, 31)) {
        prop_assert!(mixture_from_raw(&raw, 5).validate().is_ok());
    }

    #[test]
    fn moving_a_mean_toward_the_target_lowers_the_loss(mu in vec3(-1.5, 1.5), target in vec3(-1.5, 1.5), rho in -0.5..0.5f64) {
        prop_assume!(((mu.x - target.x).powi(2) + (mu.y - target.y).powi(2)).sqrt() > 1e-3);
        let loss = |m: [f64; 2]| {
            let p = MixtureParams { pi: vec![1.0], mu: vec![m], sigma: vec![[1.0, 1.3]], rho: vec![rho], e: 0.3 };
            mdn_loss(&[p], &[([target.x, target.y], false)]).unwrap()
        };
        let start = [mu.x, mu.y];
        let toward = [mu.x + 0.5 * (target.x - mu.x), mu.y + 0.5 * (target.y - mu.y)];
        let exact = [target.x, target.y];
        prop_assert!(loss(toward) < loss(start));
        prop_assert!(loss(exact) < loss(toward));
    }

    #[test]
    fn iou_is_symmetric(a in prop::collection::vec(any::<bool>(), 27), b in prop::collection::vec(any::<bool>(), 27)) {
        let spec = primrnn::geom::GridSpec::new(primrnn::geom::Aabb::new(Vector3::zeros(), Vector3::repeat(1.0)), 3).unwrap();
        let ga = primrnn::geom::VoxelGrid { spec, cells: a.clone() };
        let gb = primrnn::geom::VoxelGrid { spec, cells: b.clone() };
        let x = iou_grids(&ga, &gb).unwrap();
        prop_assert_eq!(x, iou_grids(&gb, &ga).unwrap());
        prop_assert!((0.0..=1.0).contains(&x));
        if a.iter().any(|&c| c) || b.iter().any(|&c| c) {
            prop_assert_eq!(x == 1.0, a == b);
        }
    }

    #[test]
    fn grid_depth_round_trips_exactly(v in prop::collection::vec(0.0..=1.0f64, DEPTH_SIZE * DEPTH_SIZE)) {
        let img = DepthImage::new(v).unwrap();
        prop_assert_eq!(parse_grid(&format_grid(&img), "g".as_ref()).unwrap(), img.clone());
        let q = decode_pgm(&encode_pgm(&img), "g.pgm".as_ref()).unwrap();
        prop_assert!(img.values().iter().zip(q.values()).all(|(a, b)| (a - b).abs() <= 0.5 / 65535.0 + 1e-15));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn files_round_trip(prims in prop::collection::vec(primitive(), 1..6), seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let set = PrimitiveSet::new(prims);
        let file = PrimsFile::from_set(&set, PrimsMetadata { seed: Some(seed), ..Default::default() });
        let p = dir.path().join("a.prims.json");
        write_prims(&p, &file).unwrap();
        prop_assert_eq!(read_prims(&p).unwrap(), file);

        let stats = Stats { s_mean: 0.9, s_std: 0.4, t_mean: 0.0, t_std: 0.5 };
        let tokens = tokenize(&set, &stats).unwrap().tokens;
        let recs = vec![SequenceRecord { name: "a".into(), tokens, views: vec![], symmetry_plane: None }];
        let p = dir.path().join("s.jsonl");
        write_sequences(&p, &recs).unwrap();
        prop_assert_eq!(read_sequences(&p).unwrap(), recs);

        let w = ModelWeights::init(ModelConfig::tiny(), seed).unwrap();
        let p = dir.path().join("w.json");
        write_weights(&p, &w).unwrap();
        prop_assert_eq!(read_weights(&p).unwrap(), w);
    }

    #[test]
    fn tokens_decode_to_the_same_solids(prims in prop::collection::vec(primitive(), 1..6)) {
        let set = PrimitiveSet::new(prims);
        let stats = Stats { s_mean: 0.9, s_std: 0.4, t_mean: 0.1, t_std: 0.5 };
        let back = detokenize(&tokenize(&set, &stats).unwrap(), &stats, None);
        prop_assert_eq!(back.len(), set.len());
        let grid = |s: &PrimitiveSet| voxel_occupancy(Solid::Primitives(&s.primitives), 12).unwrap();
        let (a, b) = (grid(&set), grid(&back));
        let differ = a.cells.iter().zip(&b.cells).filter(|(x, y)| x != y).count();
        prop_assert!(differ <= a.cells.len() / 100, "{} cells differ", differ);
    }

    #[test]
    fn segmentation_ignores_label_ids(perm in Just([0u32, 1, 2]).prop_shuffle(), seed in 0u64..1000) {
        let parts = [
            Primitive::axis_aligned(Vector3::new(1.0, 1.0, 0.2), Vector3::new(0.0, 0.0, 0.7)),
            Primitive::axis_aligned(Vector3::new(0.2, 1.0, 0.5), Vector3::new(-0.4, 0.0, 0.25)),
            Primitive::axis_aligned(Vector3::new(0.2, 1.0, 0.5), Vector3::new(0.4, 0.0, 0.25)),
        ];
        let meshes: Vec<_> = parts.iter().map(TriangleMesh::from_primitive).collect();
        let gt = TriangleMesh::merge(&meshes, true);
        let base = face_label_accuracy(&parts, &[0, 1, 2], &gt, seed).unwrap();
        let permuted = face_label_accuracy(&parts, &perm, &gt, seed).unwrap();
        prop_assert_eq!(base, permuted);
        prop_assert_eq!(base, 1.0);
    }
}
