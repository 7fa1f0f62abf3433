//! Descriptor properties: eigen oracle agreement, bounds, and the
//! translation/rotation/scale behavior.

mod common;

use proptest::prelude::*;
use rand::Rng;

use icgeom::geomfeat::{
    covariance_matrix, eigenvalues_sym3, geometric_features, per_point_features, EigenTriple,
};
use icgeom::pointcloud::PointCloud;

#[test]
fn closed_form_matches_jacobi_on_symmetric_matrices() {
    let mut r = common::rng(31);
    for _ in 0..1000 {
        let m = common::random_sym_mat(&mut r);
        let e = eigenvalues_sym3(&m);
        let oracle = common::jacobi_eigenvalues(&m);
        for (a, b) in [e.l1, e.l2, e.l3].iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b} for {m:?}");
        }
    }
}

#[test]
fn characteristic_polynomial_residual_is_small() {
    let mut r = common::rng(77);
    for _ in 0..200 {
        let m = common::random_psd_mat(&mut r);
        let e = eigenvalues_sym3(&m);
        let scale = m.max_abs().max(1e-12);
        for lambda in [e.l1, e.l2, e.l3] {
            // det(m - lambda I)
            let shifted = icgeom::geomfeat::SymMat3 {
                xx: m.xx - lambda,
                yy: m.yy - lambda,
                zz: m.zz - lambda,
                ..m
            };
            assert!(
                shifted.determinant().abs() < 1e-8 * scale.powi(3).max(1.0),
                "residual {} at lambda {lambda}",
                shifted.determinant()
            );
        }
        assert!((e.l1 + e.l2 + e.l3 - m.trace()).abs() < 1e-9 * scale.max(1.0));
    }
}

#[test]
fn covariance_matches_outer_product_oracle() {
    let cloud = common::random_cloud(50, 123);
    let cov = covariance_matrix(&cloud.points).unwrap();
    let oracle = common::covariance_outer_product(&cloud.points);
    let got = cov.to_rows();
    for i in 0..3 {
        for j in 0..3 {
            assert!((got[i][j] - oracle[i][j]).abs() < 1e-10);
        }
    }
}

#[test]
fn per_point_features_translation_invariant() {
    let cloud = common::random_cloud(96, 41);
    let base = per_point_features(&cloud, 12).unwrap();
    let moved = per_point_features(&cloud.translated([13.0, -7.5, 2.25]), 12).unwrap();
    for (a, b) in base.iter().zip(&moved) {
        for (x, y) in a.to_array().iter().zip(b.to_array()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }
}

#[test]
fn per_point_features_rotation_invariant() {
    let cloud = common::random_cloud(96, 42);
    let base = per_point_features(&cloud, 12).unwrap();
    let mut r = common::rng(43);
    let rot = common::random_rotation(&mut r);
    let rotated = PointCloud::new(
        cloud
            .points
            .iter()
            .map(|p| common::apply_rotation(&rot, *p))
            .collect(),
    );
    let out = per_point_features(&rotated, 12).unwrap();
    for (a, b) in base.iter().zip(&out) {
        for (x, y) in a.to_array().iter().zip(b.to_array()) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }
}

#[test]
fn per_point_features_scale_covariant() {
    let cloud = common::random_cloud(96, 44);
    let s = 2.5;
    let base = per_point_features(&cloud, 12).unwrap();
    let scaled = per_point_features(&cloud.scaled(s), 12).unwrap();
    for (a, b) in base.iter().zip(&scaled) {
        assert!((a.linearity - b.linearity).abs() < 1e-9);
        assert!((a.planarity - b.planarity).abs() < 1e-9);
        assert!((a.sphericity - b.sphericity).abs() < 1e-9);
        assert!((a.anisotropy - b.anisotropy).abs() < 1e-9);
        assert!((a.curvature - b.curvature).abs() < 1e-9);
        // Σ and O carry squared units
        assert!((a.eigen_sum * s * s - b.eigen_sum).abs() < 1e-9 * (1.0 + b.eigen_sum));
        assert!((a.omnivariance * s * s - b.omnivariance).abs() < 1e-9 * (1.0 + b.omnivariance));
    }
}

#[test]
fn per_point_features_permutation_equivariant() {
    let cloud = common::random_cloud(64, 45);
    let base = per_point_features(&cloud, 8).unwrap();
    let mut perm: Vec<usize> = (0..64).collect();
    {
        use rand::seq::SliceRandom;
        let mut r = common::rng(46);
        perm.shuffle(&mut r);
    }
    let permuted = per_point_features(&cloud.permuted(&perm), 8).unwrap();
    for (i, &src) in perm.iter().enumerate() {
        assert_eq!(permuted[i].to_array(), base[src].to_array());
    }
}

fn random_sorted_triple(r: &mut impl Rng) -> EigenTriple {
    let mut v = [
        r.gen_range(0.0f64..4.0),
        r.gen_range(0.0f64..4.0),
        r.gen_range(0.0f64..4.0),
    ];
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    EigenTriple {
        l1: v[0],
        l2: v[1],
        l3: v[2],
    }
}

#[test]
fn feature_bounds_hold_on_random_triples() {
    let mut r = common::rng(48);
    for _ in 0..1000 {
        let e = random_sorted_triple(&mut r);
        let f = geometric_features(&e);
        assert!((0.0..=1.0).contains(&f.linearity));
        assert!((0.0..=1.0).contains(&f.planarity));
        assert!((0.0..=1.0).contains(&f.sphericity));
        assert!((0.0..=1.0).contains(&f.anisotropy));
        assert!((0.0..=1.0 / 3.0).contains(&f.curvature));
        assert!(f.eigen_sum >= 0.0);
        assert!(f.omnivariance >= 0.0);
    }
}

proptest! {
    #[test]
    fn omnivariance_cubed_is_eigen_product(
        a in 1e-6f64..10.0,
        b in 1e-6f64..10.0,
        c in 1e-6f64..10.0,
    ) {
        let mut v = [a, b, c];
        v.sort_by(|x, y| y.partial_cmp(x).unwrap());
        let e = EigenTriple { l1: v[0], l2: v[1], l3: v[2] };
        let f = geometric_features(&e);
        let product = v[0] * v[1] * v[2];
        let cubed = f.omnivariance.powi(3);
        prop_assert!((cubed - product).abs() <= 1e-9 * product.max(1.0));
    }

    // Identities that follow from the definitions (A = (λ1-λ3)/λ1 and
    // C = λ3/Σ), checked by multiplying back.
    #[test]
    fn anisotropy_and_curvature_identities(
        a in 1e-6f64..10.0,
        b in 1e-6f64..10.0,
        c in 1e-6f64..10.0,
    ) {
        let mut v = [a, b, c];
        v.sort_by(|x, y| y.partial_cmp(x).unwrap());
        let e = EigenTriple { l1: v[0], l2: v[1], l3: v[2] };
        let f = geometric_features(&e);
        prop_assert!((f.anisotropy * e.l1 - (e.l1 - e.l3)).abs() < 1e-12 * e.l1.max(1.0));
        prop_assert!((f.curvature * f.eigen_sum - e.l3).abs() < 1e-12 * f.eigen_sum.max(1.0));
    }
}
