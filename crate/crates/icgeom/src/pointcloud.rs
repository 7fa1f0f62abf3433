//! Mesh and point-cloud representations, file I/O, and resampling.
//!
//! Every object entering the classifier is forced to an exact point budget
//! (default 1024): meshes with fewer vertices gain points sampled uniformly
//! on their triangles, clouds with more points are shuffled and truncated.
//! The initial point set of a mesh is its vertex list.

use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Triangulated surface: a vertex list and a list of vertex-index triples.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    /// Builds a mesh, rejecting any triangle that references a missing vertex.
    pub fn new(vertices: Vec<[f64; 3]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let count = vertices.len();
        for tri in &triangles {
            for &idx in tri {
                if idx >= count {
                    return Err(Error::IndexOutOfRange {
                        index: idx as i64,
                        count,
                    });
                }
            }
        }
        Ok(TriangleMesh {
            vertices,
            triangles,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Area of triangle `t` (half the cross-product norm).
    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (va, vb, vc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        let u = sub(vb, va);
        let v = sub(vc, va);
        let cx = u[1] * v[2] - u[2] * v[1];
        let cy = u[2] * v[0] - u[0] * v[2];
        let cz = u[0] * v[1] - u[1] * v[0];
        0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
    }

    /// The mesh vertices as an unlabeled cloud (the initial point set for
    /// resampling).
    pub fn vertex_cloud(&self) -> PointCloud {
        PointCloud {
            points: self.vertices.clone(),
            label: None,
        }
    }
}

/// A set of 3D points with an optional class label.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub label: Option<usize>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        PointCloud {
            points,
            label: None,
        }
    }

    pub fn with_label(points: Vec<[f64; 3]>, label: usize) -> Self {
        PointCloud {
            points,
            label: Some(label),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for p in &self.points {
            for d in 0..3 {
                c[d] += p[d];
            }
        }
        let n = self.points.len().max(1) as f64;
        [c[0] / n, c[1] / n, c[2] / n]
    }

    /// A copy shifted by a constant offset.
    pub fn translated(&self, offset: [f64; 3]) -> Self {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]])
                .collect(),
            label: self.label,
        }
    }

    /// A copy scaled uniformly about the origin.
    pub fn scaled(&self, s: f64) -> Self {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| [p[0] * s, p[1] * s, p[2] * s])
                .collect(),
            label: self.label,
        }
    }

    /// A copy with rows reordered so row `i` of the output is row `perm[i]`
    /// of the input.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        PointCloud {
            points: perm.iter().map(|&i| self.points[i]).collect(),
            label: self.label,
        }
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

// ---------------------------------------------------------------------------
// OBJ input
// ---------------------------------------------------------------------------

/// Loads an ASCII OBJ file (subset: `v` and `f` records).
///
/// Faces with more than three corners are fan-triangulated. Indices are
/// 1-based; negative (relative) indices are rejected. Normals, texture
/// coordinates and material statements are ignored.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

/// Parses OBJ text; `origin` is only used in error messages.
pub fn parse_obj(text: &str, origin: impl AsRef<Path>) -> Result<TriangleMesh> {
    let origin = origin.as_ref();
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = lineno + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coords = [0.0; 3];
                for c in &mut coords {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| Error::parse(origin, lineno, "vertex needs 3 coordinates"))?;
                    *c = tok.parse::<f64>().map_err(|_| {
                        Error::parse(origin, lineno, format!("bad coordinate {tok:?}"))
                    })?;
                }
                vertices.push(coords);
            }
            Some("f") => {
                let mut corners: Vec<usize> = Vec::new();
                for tok in tokens {
                    // "i", "i/t", "i/t/n" and "i//n" all start with the
                    // vertex index.
                    let head = tok.split('/').next().unwrap_or("");
                    let idx = head.parse::<i64>().map_err(|_| {
                        Error::parse(origin, lineno, format!("bad face index {tok:?}"))
                    })?;
                    if idx <= 0 {
                        return Err(Error::parse(
                            origin,
                            lineno,
                            format!("negative or zero face index {idx}"),
                        ));
                    }
                    let idx = (idx - 1) as usize;
                    if idx >= vertices.len() {
                        return Err(Error::IndexOutOfRange {
                            index: idx as i64 + 1,
                            count: vertices.len(),
                        });
                    }
                    corners.push(idx);
                }
                if corners.len() < 3 {
                    return Err(Error::parse(origin, lineno, "face needs at least 3 corners"));
                }
                for i in 1..corners.len() - 1 {
                    triangles.push([corners[0], corners[i], corners[i + 1]]);
                }
            }
            // vn, vt, usemtl, mtllib, o, g, s, l ...
            _ => {}
        }
    }

    TriangleMesh::new(vertices, triangles)
}

// ---------------------------------------------------------------------------
// XYZ input/output
// ---------------------------------------------------------------------------

/// Loads an ASCII XYZ cloud: one `x y z` triple per line, with an optional
/// leading `# label <int>` header.
pub fn load_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xyz(&text, path)
}

/// Parses XYZ text; `origin` is only used in error messages.
pub fn parse_xyz(text: &str, origin: impl AsRef<Path>) -> Result<PointCloud> {
    let origin = origin.as_ref();
    let mut points = Vec::new();
    let mut label = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = lineno + 1;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let mut tokens = rest.split_whitespace();
            if tokens.next() == Some("label") {
                let tok = tokens
                    .next()
                    .ok_or_else(|| Error::parse(origin, lineno, "label header without value"))?;
                let id = tok
                    .parse::<usize>()
                    .map_err(|_| Error::parse(origin, lineno, format!("bad label {tok:?}")))?;
                label = Some(id);
            }
            continue;
        }
        let mut coords = [0.0; 3];
        let mut tokens = line.split_whitespace();
        for c in &mut coords {
            let tok = tokens
                .next()
                .ok_or_else(|| Error::parse(origin, lineno, "point needs 3 coordinates"))?;
            *c = tok
                .parse::<f64>()
                .map_err(|_| Error::parse(origin, lineno, format!("bad coordinate {tok:?}")))?;
        }
        if tokens.next().is_some() {
            return Err(Error::parse(origin, lineno, "trailing tokens after x y z"));
        }
        if !coords.iter().all(|c| c.is_finite()) {
            return Err(Error::parse(origin, lineno, "non-finite coordinate"));
        }
        points.push(coords);
    }

    Ok(PointCloud { points, label })
}

/// Serializes a cloud to XYZ text (label header first when present).
pub fn xyz_to_string(cloud: &PointCloud) -> String {
    let mut out = String::new();
    if let Some(label) = cloud.label {
        out.push_str(&format!("# label {label}\n"));
    }
    for p in &cloud.points {
        out.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
    }
    out
}

pub fn save_xyz(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, xyz_to_string(cloud)).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Adds points on the mesh surface until the cloud reaches `budget`.
///
/// Each triangle receives `floor((budget - n) / t)` points placed by uniform
/// barycentric sampling; the remainder `(budget - n) mod t` is distributed as
/// one extra point on each of the largest-area triangles (ties broken by
/// triangle index).
pub fn upsample_on_triangles(
    mesh: &TriangleMesh,
    current: &PointCloud,
    budget: usize,
    seed: u64,
) -> Result<PointCloud> {
    let t = mesh.triangle_count();
    if t == 0 {
        return Err(Error::EmptyMesh);
    }
    let n = current.len();
    if n >= budget {
        return Err(Error::UpsampleNotNeeded {
            current: n,
            budget,
        });
    }

    let missing = budget - n;
    let quota = missing / t;
    let remainder = missing % t;

    // Triangles ranked by area, largest first, index as tiebreak.
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| {
        mesh.triangle_area(b)
            .partial_cmp(&mesh.triangle_area(a))
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut extra = vec![0usize; t];
    for &ti in order.iter().take(remainder) {
        extra[ti] = 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new(0.0f64, 1.0);
    let mut points = current.points.clone();
    points.reserve(missing);
    for ti in 0..t {
        let [ia, ib, ic] = mesh.triangles[ti];
        let (va, vb, vc) = (mesh.vertices[ia], mesh.vertices[ib], mesh.vertices[ic]);
        for _ in 0..quota + extra[ti] {
            let mut u = unit.sample(&mut rng);
            let mut v = unit.sample(&mut rng);
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            let w = 1.0 - u - v;
            points.push([
                w * va[0] + u * vb[0] + v * vc[0],
                w * va[1] + u * vb[1] + v * vc[1],
                w * va[2] + u * vb[2] + v * vc[2],
            ]);
        }
    }

    debug_assert_eq!(points.len(), budget);
    Ok(PointCloud {
        points,
        label: current.label,
    })
}

/// Shuffles the cloud with a seeded generator and keeps the first `budget`
/// points.
pub fn downsample_shuffle(cloud: &PointCloud, budget: usize, seed: u64) -> Result<PointCloud> {
    if cloud.len() < budget {
        return Err(Error::NotEnoughPoints {
            current: cloud.len(),
            budget,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = cloud.points.clone();
    points.shuffle(&mut rng);
    points.truncate(budget);
    Ok(PointCloud {
        points,
        label: cloud.label,
    })
}

/// Centers the cloud on its centroid and scales it so the farthest point
/// sits on the unit sphere. A cloud of coincident points maps to all zeros.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> PointCloud {
    if cloud.is_empty() {
        return cloud.clone();
    }
    let c = cloud.centroid();
    let mut centered: Vec<[f64; 3]> = cloud
        .points
        .iter()
        .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect();
    let max_norm = centered
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .fold(0.0f64, f64::max);
    if max_norm > 0.0 {
        for p in &mut centered {
            for d in 0..3 {
                p[d] /= max_norm;
            }
        }
    } else {
        for p in &mut centered {
            *p = [0.0; 3];
        }
    }
    PointCloud {
        points: centered,
        label: cloud.label,
    }
}

/// Full resampling pipeline: the mesh vertices are the initial point set;
/// upsample or downsample as needed so the result has exactly `budget`
/// points.
pub fn resample_to_budget(mesh: &TriangleMesh, budget: usize, seed: u64) -> Result<PointCloud> {
    let cloud = mesh.vertex_cloud();
    match cloud.len().cmp(&budget) {
        std::cmp::Ordering::Less => upsample_on_triangles(mesh, &cloud, budget, seed),
        std::cmp::Ordering::Greater => downsample_shuffle(&cloud, budget, seed),
        std::cmp::Ordering::Equal => Ok(cloud),
    }
}
