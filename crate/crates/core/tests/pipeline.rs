//! Cross-module flows: generate → perturb → smooth → modify → save/load.

use lapsmooth::generate::{ball_tet, disk_tri, perturbed, square_slivers, square_tri};
use lapsmooth::io::{load_mesh, read_off, save_mesh, write_off};
use lapsmooth::quality::{mesh_quality, quality_report};
use lapsmooth::smooth::{attach_boundary_geometry, smooth, BoundaryShape, Method, SmoothConfig};
use lapsmooth::topo::{edge_collapse, edge_swap, remove_bad_elements};
use lapsmooth::{Mesh, QualityFn, QualityKind, Vec3};
use proptest::prelude::*;

fn inverted(m: &Mesh) -> usize {
    quality_report(m, QualityKind::MeanRatio).unwrap().invalid_count
}

#[test]
fn smoothed_meshes_survive_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = perturbed(&ball_tet(3).unwrap(), 0.3, 8).unwrap();
    smooth(&mut m, &SmoothConfig::quality(QualityKind::Q3).max_iters(300)).unwrap();
    for name in ["ball.mesh", "ball.node"] {
        let path = dir.path().join(name);
        save_mesh(&m, &path).unwrap();
        let back = load_mesh(&path).unwrap();
        assert_eq!(back.coords(), m.coords());
        assert_eq!(back.elements(), m.elements());
        assert_eq!(back.fixed(), m.fixed());
    }
}

#[test]
fn every_ascent_objective_improves_a_tangled_ball() {
    let start = perturbed(&ball_tet(3).unwrap(), 0.5, 2).unwrap();
    let before = quality_report(&start, QualityKind::MeanRatio).unwrap().average;
    for kind in [
        QualityKind::Q3,
        QualityKind::Lambda1,
        QualityKind::Lambda2,
        QualityKind::Lambda3,
        QualityKind::Lambda4,
        QualityKind::MeanRatio,
        QualityKind::SqrtMeanRatio,
    ] {
        let mut m = start.clone();
        let f = QualityFn::new(kind);
        let q0 = mesh_quality(&m, &f).unwrap();
        let r = smooth(&mut m, &SmoothConfig::quality(kind).max_iters(500)).unwrap();
        assert!(r.final_quality >= q0, "{kind:?}");
        let after = quality_report(&m, QualityKind::MeanRatio).unwrap();
        assert!(after.average > before, "{kind:?}: {} <= {before}", after.average);
        assert_eq!(after.invalid_count, 0, "{kind:?}");
    }
}

#[test]
fn projected_disk_smoothing_keeps_the_boundary_on_the_circle() {
    let mut m = perturbed(&disk_tri(5).unwrap(), 0.4, 3).unwrap();
    let geoms = attach_boundary_geometry(&mut m, BoundaryShape::Circle).unwrap();
    let cfg = SmoothConfig::quality(QualityKind::Q2).max_iters(400).with_projection(geoms);
    smooth(&mut m, &cfg).unwrap();
    let boundary = m.classify_boundary().unwrap();
    for (v, p) in m.coords().iter().enumerate() {
        if boundary[v] {
            assert!((p.norm() - 1.0).abs() < 1e-12);
        }
    }
    assert_eq!(inverted(&m), 0);
}

#[test]
fn laplacian_then_local_edits_stay_valid() {
    let mut m = perturbed(&square_tri(6).unwrap(), 0.3, 4).unwrap();
    smooth(&mut m, &SmoothConfig::new(Method::Laplace)).unwrap();
    let n0 = m.num_elements();
    // Collapse one interior edge, then try swapping every remaining edge.
    let (a, b) = m
        .edges()
        .into_iter()
        .find(|&(a, b)| !m.fixed()[a] && !m.fixed()[b])
        .unwrap();
    edge_collapse(&mut m, a, b).unwrap();
    assert_eq!(m.num_elements(), n0 - 2);
    m.validate().unwrap();
    for (a, b) in m.edges() {
        let _ = edge_swap(&mut m, a, b);
        m.validate().unwrap();
        assert_eq!(inverted(&m), 0);
    }
}

#[test]
fn removal_loop_output_round_trips() {
    let mut m = square_slivers(9, 3, 4).unwrap();
    let log = remove_bad_elements(&mut m, 0.6, &SmoothConfig::quality(QualityKind::Q2)).unwrap();
    assert!(log.success);
    let back = read_off(&write_off(&m)).unwrap();
    let q = quality_report(&back, QualityKind::Iq2).unwrap();
    assert!(q.min >= 0.6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn off_round_trip_is_exact(seed in any::<u64>(), sigma in 0.0f64..0.4, n in 2usize..6) {
        let m = perturbed(&square_tri(n).unwrap(), sigma, seed).unwrap();
        let back = read_off(&write_off(&m)).unwrap();
        prop_assert_eq!(back.coords(), m.coords());
        prop_assert_eq!(back.elements(), m.elements());
        prop_assert_eq!(back.fixed(), m.fixed());
    }

    #[test]
    fn mesh_mean_ratio_is_similarity_invariant(
        seed in any::<u64>(),
        s in 0.1f64..10.0,
        dx in -5.0f64..5.0,
        dy in -5.0f64..5.0,
    ) {
        let m = perturbed(&square_tri(4).unwrap(), 0.3, seed).unwrap();
        let mut t = m.clone();
        for p in t.coords_mut() {
            *p = *p * s + Vec3::new(dx, dy, 0.0);
        }
        let a = quality_report(&m, QualityKind::MeanRatio).unwrap();
        let b = quality_report(&t, QualityKind::MeanRatio).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        // q2 is homogeneous of degree 2.
        let f = QualityFn::new(QualityKind::Q2);
        let (qa, qb) = (mesh_quality(&m, &f).unwrap(), mesh_quality(&t, &f).unwrap());
        prop_assert!((qb - s * s * qa).abs() <= 1e-10 * (s * s * qa.abs()).max(1e-12));
    }
}
