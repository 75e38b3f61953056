use std::cmp::Ordering;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use super::{ConvexPolyhedron, Mat3, Vec3};
use crate::tolerances::EIGEN_TIE_EPS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrincipalAxes {
    /// Columns are the long, intermediate and short axes; a proper rotation.
    pub rotation: Mat3,
    /// Vertex-covariance eigenvalues matching the columns of `rotation`.
    pub variances: Vec3,
    /// Half extents `(L, I, S)` of the vertices along the axes, descending.
    pub semi_lengths: Vec3,
    /// ZXZ Euler angles of `rotation`.
    pub euler: Vec3,
    /// Vertex covariance tensor the axes were taken from.
    pub covariance: Mat3,
}

/// Eigen-decomposition of the vertex covariance, with axes ordered by
/// descending vertex extent.
///
/// Signs: L and I are flipped so their largest-magnitude component is
/// positive, S is `L x I` so the frame is right-handed. Tied extents
/// (spheres, cubes) are ordered lexicographically by eigenvector rather than
/// reported as an error.
pub fn principal_axes(poly: &ConvexPolyhedron) -> PrincipalAxes {
    let verts = poly.vertices();
    let mean = verts.iter().sum::<Vec3>() / verts.len() as f64;
    let mut cov = Mat3::zeros();
    for v in verts {
        let d = v - mean;
        cov += d * d.transpose();
    }
    cov /= verts.len() as f64;

    let eig = SymmetricEigen::new(cov);
    let mut axes: Vec<(f64, f64, Vec3)> = (0..3)
        .map(|k| {
            let v = canonical_sign(eig.eigenvectors.column(k).into_owned());
            let (lo, hi) = verts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                let t = v.dot(p);
                (lo.min(t), hi.max(t))
            });
            (0.5 * (hi - lo), eig.eigenvalues[k], v)
        })
        .collect();
    let extent_scale = axes.iter().map(|a| a.0).fold(f64::MIN_POSITIVE, f64::max);
    let before = |a: &(f64, f64, Vec3), b: &(f64, f64, Vec3)| -> bool {
        if (a.0 - b.0).abs() <= EIGEN_TIE_EPS * extent_scale {
            lexicographic(&a.2, &b.2) == Ordering::Less
        } else {
            a.0 > b.0
        }
    };
    // Three elements: a fixed insertion sort keeps the tie rule well defined.
    for i in 1..3 {
        let mut j = i;
        while j > 0 && before(&axes[j], &axes[j - 1]) {
            axes.swap(j, j - 1);
            j -= 1;
        }
    }
    let long = axes[0].2;
    let mid = axes[1].2;
    let short = long.cross(&mid).normalize();
    let rotation = Mat3::from_columns(&[long, mid, short]);
    let short_extent = {
        let (lo, hi) = verts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let t = short.dot(p);
            (lo.min(t), hi.max(t))
        });
        0.5 * (hi - lo)
    };
    PrincipalAxes {
        rotation,
        variances: Vec3::new(axes[0].1, axes[1].1, axes[2].1),
        semi_lengths: Vec3::new(axes[0].0, axes[1].0, short_extent),
        euler: euler_zxz(&rotation),
        covariance: cov,
    }
}

/// Flip so the largest-magnitude component is positive.
fn canonical_sign(v: Vec3) -> Vec3 {
    let k = v.iamax();
    if v[k] < 0.0 {
        -v
    } else {
        v
    }
}

fn lexicographic(a: &Vec3, b: &Vec3) -> Ordering {
    // Descending, so (1,0,0) precedes (0,1,0).
    b.x.total_cmp(&a.x)
        .then(b.y.total_cmp(&a.y))
        .then(b.z.total_cmp(&a.z))
}

/// ZXZ Euler angles `(alpha, beta, gamma)` with `R = Rz(alpha) Rx(beta) Rz(gamma)`.
/// `beta` is in `[0, pi]`; when `beta` is 0 or pi, `gamma` is set to 0.
pub fn euler_zxz(r: &Mat3) -> Vec3 {
    let cb = r[(2, 2)].clamp(-1.0, 1.0);
    let beta = cb.acos();
    let sb = beta.sin();
    if sb.abs() < 1e-12 {
        let alpha = r[(1, 0)].atan2(r[(0, 0)]);
        Vec3::new(alpha, beta, 0.0)
    } else {
        let alpha = r[(0, 2)].atan2(-r[(1, 2)]);
        let gamma = r[(2, 0)].atan2(r[(2, 1)]);
        Vec3::new(alpha, beta, gamma)
    }
}

pub fn rotation_from_euler_zxz(alpha: f64, beta: f64, gamma: f64) -> Mat3 {
    let rz = |t: f64| {
        let (s, c) = t.sin_cos();
        Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    };
    let (s, c) = beta.sin_cos();
    let rx = Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c);
    rz(alpha) * rx * rz(gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::convex_hull;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn boxed() -> ConvexPolyhedron {
        ConvexPolyhedron::cuboid(Vec3::new(-2.0, -1.0, -0.5), Vec3::new(2.0, 1.0, 0.5))
    }

    #[test]
    fn axis_aligned_box() {
        let a = principal_axes(&boxed());
        assert!((a.semi_lengths - Vec3::new(2.0, 1.0, 0.5)).norm() < 1e-12);
        assert!(a.euler.norm() < 1e-12, "{:?}", a.euler);
    }

    #[test]
    fn rotated_box_keeps_lengths() {
        let r = rotation_from_euler_zxz(std::f64::consts::FRAC_PI_2, 0.0, 0.0);
        let a = principal_axes(&boxed().transformed(&r, &Vec3::zeros()));
        assert!((a.semi_lengths - Vec3::new(2.0, 1.0, 0.5)).norm() < 1e-12);
    }

    #[test]
    fn euler_round_trip() {
        for &(a, b, g) in &[(0.3, 1.1, -2.0), (-2.5, 2.9, 0.4), (1.0, 0.0, 0.0)] {
            let r = rotation_from_euler_zxz(a, b, g);
            let e = euler_zxz(&r);
            let r2 = rotation_from_euler_zxz(e.x, e.y, e.z);
            assert!((r - r2).norm() < 1e-12);
        }
    }

    #[test]
    fn cube_tie_is_deterministic() {
        let a = principal_axes(&ConvexPolyhedron::unit_cube());
        let b = principal_axes(&ConvexPolyhedron::unit_cube());
        assert_eq!(a, b);
        assert!((a.rotation.determinant() - 1.0).abs() < 1e-12);
    }

    fn hull(seed: u64) -> ConvexPolyhedron {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec3> = (0..20)
            .map(|_| Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)))
            .collect();
        convex_hull(&pts).unwrap()
    }

    proptest! {
        #[test]
        fn ordering_and_reconstruction(seed in 0u64..5000) {
            let a = principal_axes(&hull(seed));
            prop_assert!(a.semi_lengths.x >= a.semi_lengths.y && a.semi_lengths.y >= a.semi_lengths.z);
            let rebuilt = a.rotation * Mat3::from_diagonal(&a.variances) * a.rotation.transpose();
            prop_assert!((rebuilt - a.covariance).amax() < 1e-9);
            prop_assert!((a.rotation.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn rotation_invariant_lengths(seed in 0u64..5000, al in -3.0f64..3.0, be in 0.0f64..3.0, ga in -3.0f64..3.0) {
            let p = hull(seed);
            let r = rotation_from_euler_zxz(al, be, ga);
            let a = principal_axes(&p);
            let b = principal_axes(&p.transformed(&r, &Vec3::new(0.5, 0.1, -0.2)));
            prop_assert!((a.semi_lengths - b.semi_lengths).amax() < 1e-9);
        }
    }
}
