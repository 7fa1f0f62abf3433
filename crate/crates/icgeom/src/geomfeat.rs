//! Covariance eigenvalue shape descriptors.
//!
//! For each point the covariance matrix of its local neighborhood is
//! eigendecomposed (closed form, 3x3 symmetric) and seven scalars are
//! derived from the sorted eigenvalues λ1 ≥ λ2 ≥ λ3 ≥ 0:
//!
//! ```text
//! L = (λ1 - λ2) / λ1        linearity
//! P = (λ2 - λ3) / λ1        planarity
//! S = λ3 / λ1               sphericity
//! A = (λ1 - λ3) / λ1        anisotropy
//! Σ = λ1 + λ2 + λ3          eigenvalue sum
//! C = λ3 / (λ1 + λ2 + λ3)   curvature
//! O = (λ1 λ2 λ3)^(1/3)      omnivariance
//! ```
//!
//! L, P, S, A and C are dimensionless and invariant under translation,
//! rotation and uniform scaling of the cloud; Σ and O carry squared
//! coordinate units and scale with s².
//!
//! The covariance divisor is the population count M: five of the seven
//! quantities depend only on eigenvalue ratios, so the choice of divisor
//! only rescales Σ and O.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::graph::{ball_query, knn_graph_points};
use crate::pointcloud::PointCloud;

/// Eigenvalues below this are treated as zero when they appear as a
/// denominator.
pub const DEGENERATE_EPS: f64 = 1e-12;

/// Covariance eigenvalues this far below zero are attributed to floating
/// point and clamped to 0; anything lower is kept as a genuinely negative
/// eigenvalue.
pub const PSD_CLAMP: f64 = -1e-9;

/// Symmetric 3x3 matrix stored as its six unique entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymMat3 {
    pub xx: f64,
    pub xy: f64,
    pub xz: f64,
    pub yy: f64,
    pub yz: f64,
    pub zz: f64,
}

impl SymMat3 {
    pub fn zero() -> Self {
        SymMat3 {
            xx: 0.0,
            xy: 0.0,
            xz: 0.0,
            yy: 0.0,
            yz: 0.0,
            zz: 0.0,
        }
    }

    pub fn diagonal(a: f64, b: f64, c: f64) -> Self {
        SymMat3 {
            xx: a,
            xy: 0.0,
            xz: 0.0,
            yy: b,
            yz: 0.0,
            zz: c,
        }
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy + self.zz
    }

    pub fn determinant(&self) -> f64 {
        self.xx * (self.yy * self.zz - self.yz * self.yz)
            - self.xy * (self.xy * self.zz - self.yz * self.xz)
            + self.xz * (self.xy * self.yz - self.yy * self.xz)
    }

    /// Largest absolute entry, used for scale normalization.
    pub fn max_abs(&self) -> f64 {
        [self.xx, self.xy, self.xz, self.yy, self.yz, self.zz]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Dense 3x3 form.
    pub fn to_rows(&self) -> [[f64; 3]; 3] {
        [
            [self.xx, self.xy, self.xz],
            [self.xy, self.yy, self.yz],
            [self.xz, self.yz, self.zz],
        ]
    }
}

/// Eigenvalues sorted descending.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenTriple {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

/// The seven-value descriptor [L, P, S, A, Σ, C, O].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeomFeatureVector {
    pub linearity: f64,
    pub planarity: f64,
    pub sphericity: f64,
    pub anisotropy: f64,
    pub eigen_sum: f64,
    pub curvature: f64,
    pub omnivariance: f64,
}

impl GeomFeatureVector {
    pub const DIM: usize = 7;

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.linearity,
            self.planarity,
            self.sphericity,
            self.anisotropy,
            self.eigen_sum,
            self.curvature,
            self.omnivariance,
        ]
    }

    pub fn zero() -> Self {
        Self::default()
    }
}

/// Population covariance (divide by M) of mean-centered points.
pub fn covariance_matrix(points: &[[f64; 3]]) -> Result<SymMat3> {
    let m = points.len();
    if m == 0 {
        return Err(Error::EmptyInput);
    }
    let inv = 1.0 / m as f64;
    let mut mean = [0.0f64; 3];
    for p in points {
        for d in 0..3 {
            mean[d] += p[d];
        }
    }
    for d in 0..3 {
        mean[d] *= inv;
    }
    let mut cov = SymMat3::zero();
    for p in points {
        let x = p[0] - mean[0];
        let y = p[1] - mean[1];
        let z = p[2] - mean[2];
        cov.xx += x * x;
        cov.xy += x * y;
        cov.xz += x * z;
        cov.yy += y * y;
        cov.yz += y * z;
        cov.zz += z * z;
    }
    cov.xx *= inv;
    cov.xy *= inv;
    cov.xz *= inv;
    cov.yy *= inv;
    cov.yz *= inv;
    cov.zz *= inv;
    Ok(cov)
}

/// Closed-form eigenvalues of a symmetric 3x3 matrix, sorted descending.
///
/// Uses the trigonometric solution of the characteristic polynomial on a
/// scale-normalized copy of the matrix. Eigenvalues in `(PSD_CLAMP, 0)` are
/// clamped to zero.
pub fn eigenvalues_sym3(m: &SymMat3) -> EigenTriple {
    let scale = m.max_abs();
    if scale == 0.0 {
        return EigenTriple {
            l1: 0.0,
            l2: 0.0,
            l3: 0.0,
        };
    }
    let inv = 1.0 / scale;
    let a = SymMat3 {
        xx: m.xx * inv,
        xy: m.xy * inv,
        xz: m.xz * inv,
        yy: m.yy * inv,
        yz: m.yz * inv,
        zz: m.zz * inv,
    };

    let p1 = a.xy * a.xy + a.xz * a.xz + a.yz * a.yz;
    let q = a.trace() / 3.0;
    let (mut l1, mut l2, mut l3);
    if p1 == 0.0 {
        // Already diagonal.
        l1 = a.xx;
        l2 = a.yy;
        l3 = a.zz;
    } else {
        let p2 = (a.xx - q) * (a.xx - q)
            + (a.yy - q) * (a.yy - q)
            + (a.zz - q) * (a.zz - q)
            + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let b = SymMat3 {
            xx: (a.xx - q) / p,
            xy: a.xy / p,
            xz: a.xz / p,
            yy: (a.yy - q) / p,
            yz: a.yz / p,
            zz: (a.zz - q) / p,
        };
        let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        l1 = q + 2.0 * p * phi.cos();
        l3 = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
        l2 = 3.0 * q - l1 - l3;
    }

    // Restore scale and enforce ordering against rounding.
    l1 *= scale;
    l2 *= scale;
    l3 *= scale;
    let mut v = [l1, l2, l3];
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for e in &mut v {
        if *e < 0.0 && *e > PSD_CLAMP {
            *e = 0.0;
        }
    }
    EigenTriple {
        l1: v[0],
        l2: v[1],
        l3: v[2],
    }
}

/// Evaluates the seven descriptors. A degenerate spectrum (λ1 below
/// `DEGENERATE_EPS`) yields the all-zero vector.
pub fn geometric_features(e: &EigenTriple) -> GeomFeatureVector {
    let (l1, l2, l3) = (e.l1, e.l2, e.l3);
    if l1 < DEGENERATE_EPS {
        return GeomFeatureVector::zero();
    }
    let sum = l1 + l2 + l3;
    let curvature = if sum < DEGENERATE_EPS { 0.0 } else { l3 / sum };
    GeomFeatureVector {
        linearity: (l1 - l2) / l1,
        planarity: (l2 - l3) / l1,
        sphericity: l3 / l1,
        anisotropy: (l1 - l3) / l1,
        eigen_sum: sum,
        curvature,
        omnivariance: (l1 * l2 * l3).cbrt(),
    }
}

/// Neighborhood rule for per-point descriptors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Neighborhood {
    /// The point's `k` nearest neighbors, self included.
    Knn(usize),
    /// All points within `radius`, nearest first, at most `max_count`.
    Ball { radius: f64, max_count: usize },
}

/// Per-point descriptor table using k-NN neighborhoods (self included).
pub fn per_point_features(cloud: &PointCloud, k_geom: usize) -> Result<Vec<GeomFeatureVector>> {
    per_point_features_with(cloud, Neighborhood::Knn(k_geom))
}

/// Per-point descriptor table with an explicit neighborhood rule.
pub fn per_point_features_with(
    cloud: &PointCloud,
    neighborhood: Neighborhood,
) -> Result<Vec<GeomFeatureVector>> {
    match neighborhood {
        Neighborhood::Knn(k) => {
            let graph = knn_graph_points(&cloud.points, k)?;
            let mut out = Vec::with_capacity(cloud.len());
            let mut scratch = Vec::with_capacity(k);
            for i in 0..cloud.len() {
                scratch.clear();
                scratch.extend(graph.row(i).iter().map(|&j| cloud.points[j as usize]));
                out.push(features_of_neighborhood(&scratch)?);
            }
            Ok(out)
        }
        Neighborhood::Ball { radius, max_count } => {
            let mut out = Vec::with_capacity(cloud.len());
            for p in &cloud.points {
                let idx = ball_query(&cloud.points, *p, radius, max_count);
                let pts: Vec<[f64; 3]> = idx.into_iter().map(|j| cloud.points[j]).collect();
                out.push(features_of_neighborhood(&pts)?);
            }
            Ok(out)
        }
    }
}

fn features_of_neighborhood(points: &[[f64; 3]]) -> Result<GeomFeatureVector> {
    let cov = covariance_matrix(points)?;
    Ok(geometric_features(&eigenvalues_sym3(&cov)))
}
