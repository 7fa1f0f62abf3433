//! Shared test oracles. Everything here is deliberately independent of the
//! implementation paths it checks: brute-force scans, naive triple loops,
//! iterative Jacobi rotations, pair counting.

#![allow(dead_code)]

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use icgeom::geomfeat::{GeomFeatureVector, SymMat3};
use icgeom::net::{model_forward, Model};
use icgeom::pointcloud::{PointCloud, TriangleMesh};
use icgeom::train::{backward, cross_entropy_loss, Gradients};

// ---------------------------------------------------------------------------
// Random inputs
// ---------------------------------------------------------------------------

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut r = rng(seed);
    let dist = Uniform::new(-1.0f64, 1.0);
    PointCloud::new(
        (0..n)
            .map(|_| [dist.sample(&mut r), dist.sample(&mut r), dist.sample(&mut r)])
            .collect(),
    )
}

pub fn random_sym_mat(r: &mut ChaCha8Rng) -> SymMat3 {
    let dist = Uniform::new(-2.0f64, 2.0);
    SymMat3 {
        xx: dist.sample(r),
        xy: dist.sample(r),
        xz: dist.sample(r),
        yy: dist.sample(r),
        yz: dist.sample(r),
        zz: dist.sample(r),
    }
}

/// PSD matrix built as a covariance of random points.
pub fn random_psd_mat(r: &mut ChaCha8Rng) -> SymMat3 {
    let n = r.gen_range(3..30);
    let dist = Uniform::new(-1.5f64, 1.5);
    let pts: Vec<[f64; 3]> = (0..n)
        .map(|_| [dist.sample(r), dist.sample(r), dist.sample(r)])
        .collect();
    icgeom::geomfeat::covariance_matrix(&pts).unwrap()
}

/// A random rotation matrix (Gram-Schmidt on random vectors).
pub fn random_rotation(r: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    loop {
        let dist = Uniform::new(-1.0f64, 1.0);
        let a = [dist.sample(r), dist.sample(r), dist.sample(r)];
        let b = [dist.sample(r), dist.sample(r), dist.sample(r)];
        let na = norm(a);
        if na < 1e-3 {
            continue;
        }
        let u = scale(a, 1.0 / na);
        let proj = dot(b, u);
        let v_raw = [b[0] - proj * u[0], b[1] - proj * u[1], b[2] - proj * u[2]];
        let nv = norm(v_raw);
        if nv < 1e-3 {
            continue;
        }
        let v = scale(v_raw, 1.0 / nv);
        let w = cross(u, v);
        return [u, v, w];
    }
}

pub fn apply_rotation(rot: &[[f64; 3]; 3], p: [f64; 3]) -> [f64; 3] {
    // rows of `rot` are the new basis vectors
    [dot(rot[0], p), dot(rot[1], p), dot(rot[2], p)]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

// ---------------------------------------------------------------------------
// Eigenvalue oracle: cyclic Jacobi rotations
// ---------------------------------------------------------------------------

/// Iterative Jacobi eigenvalues of a symmetric 3x3 matrix, descending.
pub fn jacobi_eigenvalues(m: &SymMat3) -> [f64; 3] {
    let mut a = m.to_rows();
    let scale = m.max_abs().max(1e-300);
    for _ in 0..64 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        if off < 1e-15 * scale {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            jacobi_rotate(&mut a, p, q);
        }
    }
    let mut eig = [a[0][0], a[1][1], a[2][2]];
    eig.sort_by(|x, y| y.partial_cmp(x).unwrap());
    eig
}

fn jacobi_rotate(a: &mut [[f64; 3]; 3], p: usize, q: usize) {
    let apq = a[p][q];
    if apq == 0.0 {
        return;
    }
    let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
    let t = if theta >= 0.0 {
        1.0 / (theta + (1.0 + theta * theta).sqrt())
    } else {
        1.0 / (theta - (1.0 + theta * theta).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    let tau = s / (1.0 + c);
    let (app, aqq) = (a[p][p], a[q][q]);
    a[p][p] = app - t * apq;
    a[q][q] = aqq + t * apq;
    a[p][q] = 0.0;
    a[q][p] = 0.0;
    for r in 0..3 {
        if r != p && r != q {
            let (arp, arq) = (a[r][p], a[r][q]);
            a[r][p] = arp - s * (arq + tau * arp);
            a[p][r] = a[r][p];
            a[r][q] = arq + s * (arp - tau * arq);
            a[q][r] = a[r][q];
        }
    }
}

/// Covariance by explicit outer products, for cross-checking.
pub fn covariance_outer_product(points: &[[f64; 3]]) -> [[f64; 3]; 3] {
    let n = points.len() as f64;
    let mut mean = [0.0f64; 3];
    for p in points {
        for d in 0..3 {
            mean[d] += p[d] / n;
        }
    }
    let mut cov = [[0.0f64; 3]; 3];
    for p in points {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += d[i] * d[j] / n;
            }
        }
    }
    cov
}

// ---------------------------------------------------------------------------
// k-NN oracle: exhaustive scan
// ---------------------------------------------------------------------------

/// Brute-force k-NN rows with the library's semantics: self first, then
/// the k-1 nearest others ordered by (squared distance, index).
pub fn brute_knn(features: &[f64], dim: usize, k: usize) -> Vec<Vec<u32>> {
    let n = features.len() / dim;
    (0..n)
        .map(|i| {
            let xi = &features[i * dim..(i + 1) * dim];
            let mut others: Vec<(f64, u32)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let xj = &features[j * dim..(j + 1) * dim];
                    let d2: f64 = xi
                        .iter()
                        .zip(xj)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d2, j as u32)
                })
                .collect();
            others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let mut row = vec![i as u32];
            row.extend(others.into_iter().take(k - 1).map(|(_, j)| j));
            row
        })
        .collect()
}

// ---------------------------------------------------------------------------
// EdgeConv oracle: naive triple loop
// ---------------------------------------------------------------------------

/// Direct evaluation of max_j ReLU(θ1 (x_j - x_i) + θ2 x_i) with one loop
/// per point, channel and neighbor and no projection reuse.
pub fn naive_edgeconv(
    theta_diff: &[f32],
    theta_center: &[f32],
    features: &[f64],
    din: usize,
    dout: usize,
    rows: &[Vec<u32>],
) -> Vec<f64> {
    let n = rows.len();
    let mut out = vec![0.0f64; n * dout];
    for i in 0..n {
        let xi = &features[i * din..(i + 1) * din];
        for m in 0..dout {
            let t1 = &theta_diff[m * din..(m + 1) * din];
            let t2 = &theta_center[m * din..(m + 1) * din];
            let mut best = f64::NEG_INFINITY;
            for &j in &rows[i] {
                let xj = &features[j as usize * din..(j as usize + 1) * din];
                let mut s = 0.0f64;
                for d in 0..din {
                    s += t1[d] as f64 * (xj[d] - xi[d]) + t2[d] as f64 * xi[d];
                }
                best = best.max(s.max(0.0));
            }
            out[i * dout + m] = best;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// AUC oracle: pair counting
// ---------------------------------------------------------------------------

/// Fraction of correctly ordered (positive, negative) pairs, ties counting
/// one half.
pub fn pair_count_auc(scores: &[f64], is_positive: &[bool]) -> f64 {
    let mut concordant = 0.0f64;
    let mut total = 0.0f64;
    for (i, &pi) in is_positive.iter().enumerate() {
        if !pi {
            continue;
        }
        for (j, &pj) in is_positive.iter().enumerate() {
            if pj {
                continue;
            }
            total += 1.0;
            if scores[i] > scores[j] {
                concordant += 1.0;
            } else if scores[i] == scores[j] {
                concordant += 0.5;
            }
        }
    }
    concordant / total
}

// ---------------------------------------------------------------------------
// Mesh helpers and the barycentric on-surface check
// ---------------------------------------------------------------------------

/// Synthetic mesh with exactly `n` vertices and `t` triangles of nonzero
/// area (vertex positions random, triangle corners random distinct
/// indices).
pub fn synthetic_mesh(n: usize, t: usize, seed: u64) -> TriangleMesh {
    assert!(n >= 3);
    let mut r = rng(seed);
    let dist = Uniform::new(-1.0f64, 1.0);
    let vertices: Vec<[f64; 3]> = (0..n)
        .map(|_| [dist.sample(&mut r), dist.sample(&mut r), dist.sample(&mut r)])
        .collect();
    let mut triangles = Vec::with_capacity(t);
    while triangles.len() < t {
        let a = r.gen_range(0..n);
        let b = r.gen_range(0..n);
        let c = r.gen_range(0..n);
        if a == b || b == c || a == c {
            continue;
        }
        let e1 = [
            vertices[b][0] - vertices[a][0],
            vertices[b][1] - vertices[a][1],
            vertices[b][2] - vertices[a][2],
        ];
        let e2 = [
            vertices[c][0] - vertices[a][0],
            vertices[c][1] - vertices[a][1],
            vertices[c][2] - vertices[a][2],
        ];
        let area2 = norm(cross(e1, e2));
        if area2 > 2e-6 {
            triangles.push([a, b, c]);
        }
    }
    TriangleMesh::new(vertices, triangles).unwrap()
}

/// True when `p` lies on triangle `t` of the mesh: barycentric coordinates
/// within [-1e-6, 1 + 1e-6] and distance to the triangle plane below 1e-6.
pub fn on_triangle(mesh: &TriangleMesh, t: usize, p: [f64; 3]) -> bool {
    let [ia, ib, ic] = mesh.triangles[t];
    let a = mesh.vertices[ia];
    let e1 = [
        mesh.vertices[ib][0] - a[0],
        mesh.vertices[ib][1] - a[1],
        mesh.vertices[ib][2] - a[2],
    ];
    let e2 = [
        mesh.vertices[ic][0] - a[0],
        mesh.vertices[ic][1] - a[1],
        mesh.vertices[ic][2] - a[2],
    ];
    let d = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let (e11, e12, e22) = (dot(e1, e1), dot(e1, e2), dot(e2, e2));
    let det = e11 * e22 - e12 * e12;
    if det.abs() < 1e-18 {
        return false;
    }
    let (d1, d2) = (dot(d, e1), dot(d, e2));
    let u = (e22 * d1 - e12 * d2) / det;
    let v = (e11 * d2 - e12 * d1) / det;
    let w = 1.0 - u - v;
    let tol = 1e-6;
    if !(-tol..=1.0 + tol).contains(&u)
        || !(-tol..=1.0 + tol).contains(&v)
        || !(-tol..=1.0 + tol).contains(&w)
    {
        return false;
    }
    let residual = [
        d[0] - u * e1[0] - v * e2[0],
        d[1] - u * e1[1] - v * e2[1],
        d[2] - u * e1[2] - v * e2[2],
    ];
    norm(residual) < 1e-6
}

/// True when `p` lies on some triangle of the mesh.
pub fn on_some_triangle(mesh: &TriangleMesh, p: [f64; 3]) -> bool {
    (0..mesh.triangle_count()).any(|t| on_triangle(mesh, t, p))
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Discrete decision pattern of a forward pass: max winners, pool winners
/// and ReLU signs. These determine the loss path completely (a graph edge
/// that never wins a max does not enter the loss), and finite differencing
/// is only meaningful for a parameter whose perturbations leave the
/// pattern unchanged.
#[derive(PartialEq, Eq, Clone)]
pub struct Signature(Vec<u8>);

pub fn loss_and_signature(
    model: &Model,
    cloud: &PointCloud,
    g: &[GeomFeatureVector],
    label: usize,
) -> (f64, Signature) {
    let (logits, trace) = model_forward(model, cloud, g).unwrap();
    let loss = cross_entropy_loss(&logits, label).unwrap();
    let mut sig: Vec<u8> = Vec::new();
    for argmax in &trace.edge_argmax {
        for &j in argmax {
            sig.extend_from_slice(&j.to_le_bytes());
        }
    }
    for preact in &trace.edge_preact {
        sig.extend(preact.iter().map(|s| u8::from(*s > 0.0)));
    }
    for &i in &trace.pool_argmax {
        sig.extend_from_slice(&i.to_le_bytes());
    }
    for pre in &trace.embed_pre {
        sig.extend(pre.iter().map(|v| u8::from(*v > 0.0)));
    }
    for pre in &trace.head_pre {
        sig.extend(pre.iter().map(|v| u8::from(*v > 0.0)));
    }
    (loss, Signature(sig))
}

pub struct FdOutcome {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
}

/// Central finite differences (ε = 1e-3, 64-bit evaluation) against the
/// analytic gradient of one sample. An entry whose ±ε perturbation flips a
/// max winner or ReLU sign sits near a non-differentiable boundary; those
/// entries are retried with ε = 1e-5, and skipped only if they flip even
/// at the small step.
pub fn finite_difference_check(
    model: &mut Model,
    cloud: &PointCloud,
    g: &[GeomFeatureVector],
    label: usize,
    tolerance: f64,
) -> FdOutcome {
    let (_, trace) = model_forward(model, cloud, g).unwrap();
    let grads = backward(model, &trace, label).unwrap();
    let (_, base_sig) = loss_and_signature(model, cloud, g, label);

    let tensor_count = model.tensors().len();
    let mut checked = 0;
    let mut skipped = 0;
    let mut max_rel_err = 0.0f64;

    for ti in 0..tensor_count {
        let len = model.tensors()[ti].data.len();
        let grad_tensors = grads.tensors();
        assert_eq!(grad_tensors[ti].0, model.tensors()[ti].name);
        for ei in 0..len {
            let orig = model.tensors()[ti].data[ei];
            let mut result = None;
            for eps in [1e-3f64, 1e-5] {
                let plus = (orig as f64 + eps) as f32;
                let minus = (orig as f64 - eps) as f32;

                model.tensors_mut()[ti].1[ei] = plus;
                let (loss_plus, sig_plus) = loss_and_signature(model, cloud, g, label);
                model.tensors_mut()[ti].1[ei] = minus;
                let (loss_minus, sig_minus) = loss_and_signature(model, cloud, g, label);
                model.tensors_mut()[ti].1[ei] = orig;

                if sig_plus == base_sig && sig_minus == base_sig {
                    let delta = plus as f64 - minus as f64;
                    result = Some((loss_plus - loss_minus) / delta);
                    break;
                }
            }
            let Some(fd) = result else {
                skipped += 1;
                continue;
            };
            let analytic = grads.tensors()[ti].1[ei];
            let abs_err = (fd - analytic).abs();
            if abs_err > 1e-8 {
                let rel = abs_err / fd.abs().max(analytic.abs());
                assert!(
                    rel < tolerance,
                    "tensor {} entry {ei}: analytic {analytic}, fd {fd}, rel {rel}",
                    grad_tensors[ti].0
                );
                max_rel_err = max_rel_err.max(rel);
            }
            checked += 1;
        }
    }

    FdOutcome {
        checked,
        skipped,
        max_rel_err,
    }
}

/// Analytic gradients of one (cloud, label) sample.
pub fn sample_gradients(
    model: &Model,
    cloud: &PointCloud,
    g: &[GeomFeatureVector],
    label: usize,
) -> Gradients {
    let (_, trace) = model_forward(model, cloud, g).unwrap();
    backward(model, &trace, label).unwrap()
}
