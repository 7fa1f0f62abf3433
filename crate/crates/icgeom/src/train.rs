//! Loss, hand-derived gradients, SGD with momentum, synthetic data and the
//! training loop.
//!
//! Gradients are exact subgradients of the softmax cross-entropy loss with
//! respect to every model tensor. At each max aggregation the gradient
//! flows only to the recorded winning neighbor; at each ReLU it is zero
//! wherever the pre-activation is not positive. Graph construction is
//! treated as non-differentiable: neighbor indices are constants of the
//! forward pass.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geomfeat::{per_point_features, GeomFeatureVector};
use crate::net::{ForwardTrace, Model, ModelConfig};
use crate::pointcloud::{normalize_unit_sphere, PointCloud};

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest entry; the first maximum wins, so ties resolve to
/// the smaller index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate().skip(1) {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

/// `-log softmax(logits)[label]`, computed with max subtraction.
pub fn cross_entropy_loss(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::ClassOutOfRange {
            id: label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[label])
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

/// Gradient (or velocity) storage for one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradient (or velocity) storage for one edge-convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGrad {
    pub theta_diff: Vec<f64>,
    pub theta_center: Vec<f64>,
}

/// One f64 array per model tensor, shape-matched to the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embed: Vec<DenseGrad>,
    pub edge: Vec<EdgeGrad>,
    pub head: Vec<DenseGrad>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Gradients {
            embed: model
                .embed
                .iter()
                .map(|l| DenseGrad {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            edge: model
                .edge
                .iter()
                .map(|l| EdgeGrad {
                    theta_diff: vec![0.0; l.theta_diff.len()],
                    theta_center: vec![0.0; l.theta_center.len()],
                })
                .collect(),
            head: model
                .head
                .iter()
                .map(|l| DenseGrad {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// Tensors in the model's canonical order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut v: Vec<(String, &[f64])> = Vec::new();
        for (i, g) in self.embed.iter().enumerate() {
            v.push((format!("embed.{i}.weight"), &g.weight));
            v.push((format!("embed.{i}.bias"), &g.bias));
        }
        for (i, g) in self.edge.iter().enumerate() {
            v.push((format!("edge.{i}.theta_diff"), &g.theta_diff));
            v.push((format!("edge.{i}.theta_center"), &g.theta_center));
        }
        for (i, g) in self.head.iter().enumerate() {
            v.push((format!("head.{i}.weight"), &g.weight));
            v.push((format!("head.{i}.bias"), &g.bias));
        }
        v
    }

    fn for_each_slice_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        for g in &mut self.embed {
            f(&mut g.weight);
            f(&mut g.bias);
        }
        for g in &mut self.edge {
            f(&mut g.theta_diff);
            f(&mut g.theta_center);
        }
        for g in &mut self.head {
            f(&mut g.weight);
            f(&mut g.bias);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.for_each_slice_mut(|slice| {
            for v in slice {
                *v *= s;
            }
        });
    }

    /// Elementwise accumulate; shapes must match.
    pub fn add(&mut self, other: &Gradients) -> Result<()> {
        let theirs = other.tensors();
        let mut idx = 0;
        let mut status = Ok(());
        self.for_each_slice_mut(|slice| {
            if status.is_err() {
                return;
            }
            let (_, src) = &theirs[idx];
            if src.len() != slice.len() {
                status = Err(Error::ShapeMismatch {
                    what: "gradient tensor",
                    expected: slice.len(),
                    actual: src.len(),
                });
                return;
            }
            for (d, s) in slice.iter_mut().zip(src.iter()) {
                *d += s;
            }
            idx += 1;
        });
        status
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

/// Exact gradient of the cross-entropy loss with respect to every model
/// tensor, rebuilt from the forward trace.
pub fn backward(model: &Model, trace: &ForwardTrace, label: usize) -> Result<Gradients> {
    let n = trace.n;
    let classes = model.config.classes;
    if label >= classes {
        return Err(Error::ClassOutOfRange {
            id: label,
            classes,
        });
    }
    if trace.edge_inputs.len() != model.edge.len()
        || trace.head_pre.len() != model.head.len()
        || trace.embed_pre.len() != model.embed.len()
        || trace.logits.len() != classes
    {
        return Err(Error::ShapeMismatch {
            what: "forward trace",
            expected: model.edge.len(),
            actual: trace.edge_inputs.len(),
        });
    }

    let mut grads = Gradients::zeros_like(model);

    // Loss -> logits.
    let mut dz = softmax(&trace.logits);
    dz[label] -= 1.0;

    // Head, last layer to first. Input of layer l is the pooled vector for
    // l = 0 and relu(head_pre[l-1]) otherwise.
    for l in (0..model.head.len()).rev() {
        let layer = &model.head[l];
        let input: Vec<f64> = if l == 0 {
            trace.pooled.clone()
        } else {
            trace.head_pre[l - 1].iter().map(|v| v.max(0.0)).collect()
        };
        if input.len() != layer.in_dim || dz.len() != layer.out_dim {
            return Err(Error::ShapeMismatch {
                what: "head trace",
                expected: layer.in_dim,
                actual: input.len(),
            });
        }
        let g = &mut grads.head[l];
        let mut dinput = vec![0.0f64; layer.in_dim];
        for m in 0..layer.out_dim {
            let gm = dz[m];
            g.bias[m] += gm;
            let wrow = &layer.weight[m * layer.in_dim..(m + 1) * layer.in_dim];
            let grow = &mut g.weight[m * layer.in_dim..(m + 1) * layer.in_dim];
            for i in 0..layer.in_dim {
                grow[i] += gm * input[i];
                dinput[i] += gm * wrow[i] as f64;
            }
        }
        if l > 0 {
            dz = dinput
                .iter()
                .zip(&trace.head_pre[l - 1])
                .map(|(d, pre)| if *pre > 0.0 { *d } else { 0.0 })
                .collect();
        } else {
            dz = dinput;
        }
    }
    let dpooled = dz;

    // Pool -> last edge layer output: gradient goes to the winning point of
    // each channel.
    let dlast = model.edge.last().unwrap().out_dim;
    let mut dout = vec![0.0f64; n * dlast];
    for m in 0..dlast {
        dout[trace.pool_argmax[m] as usize * dlast + m] += dpooled[m];
    }

    // Edge layers in reverse. For winner j of (i, m):
    //   s = θ1 (x_j - x_i) + θ2 x_i
    //   dθ1 += g (x_j - x_i),  dθ2 += g x_i
    //   dx_j += g θ1,          dx_i += g (θ2 - θ1)
    // with g gated to zero unless s > 0.
    for l in (0..model.edge.len()).rev() {
        let layer = &model.edge[l];
        let din = layer.in_dim;
        let dout_dim = layer.out_dim;
        let x = &trace.edge_inputs[l];
        if x.len() != n * din || dout.len() != n * dout_dim {
            return Err(Error::ShapeMismatch {
                what: "edge trace",
                expected: n * din,
                actual: x.len(),
            });
        }
        let argmax = &trace.edge_argmax[l];
        let preact = &trace.edge_preact[l];
        let g = &mut grads.edge[l];
        let mut dx = vec![0.0f64; n * din];
        for i in 0..n {
            let xi = &x[i * din..(i + 1) * din];
            for m in 0..dout_dim {
                let gv = dout[i * dout_dim + m];
                if gv == 0.0 {
                    continue;
                }
                let s = preact[i * dout_dim + m];
                if s <= 0.0 {
                    continue;
                }
                let j = argmax[i * dout_dim + m] as usize;
                let xj = &x[j * din..(j + 1) * din];
                let t_diff = &layer.theta_diff[m * din..(m + 1) * din];
                let t_center = &layer.theta_center[m * din..(m + 1) * din];
                let gd = &mut g.theta_diff[m * din..(m + 1) * din];
                let gc = &mut g.theta_center[m * din..(m + 1) * din];
                for d in 0..din {
                    gd[d] += gv * (xj[d] - xi[d]);
                    gc[d] += gv * xi[d];
                }
                if i == j {
                    // self-loop: s = θ2 x_i, the difference path cancels
                    let di = &mut dx[i * din..(i + 1) * din];
                    for d in 0..din {
                        di[d] += gv * t_center[d] as f64;
                    }
                } else {
                    let dj = &mut dx[j * din..(j + 1) * din];
                    for d in 0..din {
                        dj[d] += gv * t_diff[d] as f64;
                    }
                    let di = &mut dx[i * din..(i + 1) * din];
                    for d in 0..din {
                        di[d] += gv * (t_center[d] as f64 - t_diff[d] as f64);
                    }
                }
            }
        }
        dout = dx;
    }

    // Split the embedded gradient: the trailing 3 coordinate entries have no
    // parameters upstream.
    let d_embed = model.config.d_embed();
    let width0 = d_embed + 3;
    let mut dmlp: Vec<f64> = vec![0.0; n * d_embed];
    for i in 0..n {
        dmlp[i * d_embed..(i + 1) * d_embed]
            .copy_from_slice(&dout[i * width0..i * width0 + d_embed]);
    }

    // Embedding MLP, last layer to first, accumulated over points.
    let mut dcur = dmlp;
    for l in (0..model.embed.len()).rev() {
        let layer = &model.embed[l];
        let din = layer.in_dim;
        let dout_dim = layer.out_dim;
        let g = &mut grads.embed[l];
        let mut dprev = vec![0.0f64; n * din];
        for i in 0..n {
            let dz = &dcur[i * dout_dim..(i + 1) * dout_dim];
            let input: Vec<f64> = if l == 0 {
                trace.g_table[i].to_vec()
            } else {
                trace.embed_pre[l - 1][i * din..(i + 1) * din]
                    .iter()
                    .map(|v| v.max(0.0))
                    .collect()
            };
            let dprev_i = &mut dprev[i * din..(i + 1) * din];
            for m in 0..dout_dim {
                let gm = dz[m];
                if gm == 0.0 {
                    continue;
                }
                g.bias[m] += gm;
                let wrow = &layer.weight[m * din..(m + 1) * din];
                let grow = &mut g.weight[m * din..(m + 1) * din];
                for d in 0..din {
                    grow[d] += gm * input[d];
                    dprev_i[d] += gm * wrow[d] as f64;
                }
            }
        }
        if l > 0 {
            // gate through the previous layer's ReLU
            let pre = &trace.embed_pre[l - 1];
            for (d, p) in dprev.iter_mut().zip(pre.iter()) {
                if *p <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        dcur = dprev;
    }

    Ok(grads)
}

// ---------------------------------------------------------------------------
// SGD
// ---------------------------------------------------------------------------

/// Momentum buffers, shape-matched to the model.
#[derive(Debug, Clone)]
pub struct SgdState {
    pub velocity: Gradients,
}

impl SgdState {
    pub fn zeros_like(model: &Model) -> Self {
        SgdState {
            velocity: Gradients::zeros_like(model),
        }
    }
}

fn sgd_update(w: &mut [f32], g: &[f64], v: &mut [f64], lr: f64, momentum: f64) -> Result<()> {
    if w.len() != g.len() || w.len() != v.len() {
        return Err(Error::ShapeMismatch {
            what: "sgd tensor",
            expected: w.len(),
            actual: g.len(),
        });
    }
    for ((wi, gi), vi) in w.iter_mut().zip(g).zip(v) {
        *vi = momentum * *vi + gi;
        *wi = (*wi as f64 - lr * *vi) as f32;
    }
    Ok(())
}

/// `v <- momentum v + g; w <- w - lr v` for every tensor.
pub fn sgd_step(
    model: &mut Model,
    grads: &Gradients,
    lr: f64,
    momentum: f64,
    state: &mut SgdState,
) -> Result<()> {
    if grads.embed.len() != model.embed.len()
        || grads.edge.len() != model.edge.len()
        || grads.head.len() != model.head.len()
    {
        return Err(Error::ShapeMismatch {
            what: "gradient layer count",
            expected: model.edge.len(),
            actual: grads.edge.len(),
        });
    }
    for (layer, (g, v)) in model
        .embed
        .iter_mut()
        .zip(grads.embed.iter().zip(&mut state.velocity.embed))
    {
        sgd_update(&mut layer.weight, &g.weight, &mut v.weight, lr, momentum)?;
        sgd_update(&mut layer.bias, &g.bias, &mut v.bias, lr, momentum)?;
    }
    for (layer, (g, v)) in model
        .edge
        .iter_mut()
        .zip(grads.edge.iter().zip(&mut state.velocity.edge))
    {
        sgd_update(
            &mut layer.theta_diff,
            &g.theta_diff,
            &mut v.theta_diff,
            lr,
            momentum,
        )?;
        sgd_update(
            &mut layer.theta_center,
            &g.theta_center,
            &mut v.theta_center,
            lr,
            momentum,
        )?;
    }
    for (layer, (g, v)) in model
        .head
        .iter_mut()
        .zip(grads.head.iter().zip(&mut state.velocity.head))
    {
        sgd_update(&mut layer.weight, &g.weight, &mut v.weight, lr, momentum)?;
        sgd_update(&mut layer.bias, &g.bias, &mut v.bias, lr, momentum)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Shape families for the desk-scale corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ShapeFamily {
    Cylinder,
    Plate,
    Ring,
    Sphere,
    Strut,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 5] = [
        ShapeFamily::Cylinder,
        ShapeFamily::Plate,
        ShapeFamily::Ring,
        ShapeFamily::Sphere,
        ShapeFamily::Strut,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ShapeFamily::Cylinder => "cylinder",
            ShapeFamily::Plate => "plate",
            ShapeFamily::Ring => "ring",
            ShapeFamily::Sphere => "sphere",
            ShapeFamily::Strut => "strut",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|f| f.name() == name)
            .copied()
            .ok_or_else(|| Error::UnknownFamily(name.to_string()))
    }
}

/// Standard normal via Box-Muller.
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform direction on the unit sphere.
fn unit_dir(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    [r * theta.cos(), r * theta.sin(), z]
}

fn sample_family(family: ShapeFamily, points: usize, noise: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let mut pts: Vec<[f64; 3]> = Vec::with_capacity(points);
    match family {
        ShapeFamily::Strut => {
            for _ in 0..points {
                let t: f64 = rng.gen_range(-1.0..=1.0);
                pts.push([t, 0.0, 0.0]);
            }
        }
        ShapeFamily::Plate => {
            for _ in 0..points {
                let u: f64 = rng.gen_range(-1.0..=1.0);
                let v: f64 = rng.gen_range(-1.0..=1.0);
                pts.push([u, v, 0.0]);
            }
        }
        ShapeFamily::Sphere => {
            // Antipodal pairs keep the sample centroid exactly at the
            // sphere center (for even point counts).
            for _ in 0..points / 2 {
                let d = unit_dir(rng);
                pts.push(d);
                pts.push([-d[0], -d[1], -d[2]]);
            }
            if points % 2 == 1 {
                pts.push(unit_dir(rng));
            }
        }
        ShapeFamily::Cylinder => {
            for _ in 0..points {
                let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let z: f64 = rng.gen_range(-1.0..=1.0);
                pts.push([theta.cos(), theta.sin(), z]);
            }
        }
        ShapeFamily::Ring => {
            let (major, minor) = (1.0, 0.3);
            for _ in 0..points {
                let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let radial = major + minor * phi.cos();
                pts.push([radial * theta.cos(), radial * theta.sin(), minor * phi.sin()]);
            }
        }
    }
    if noise > 0.0 {
        for p in &mut pts {
            for c in p.iter_mut() {
                *c += noise * gauss(rng);
            }
        }
    }
    pts
}

/// Deterministic labeled corpus: `per_class` clouds of exactly `points`
/// points per family, Gaussian perturbation `noise`. Labels follow
/// sorted-family-name order.
pub fn make_synthetic_dataset(
    families: &[ShapeFamily],
    per_class: usize,
    points: usize,
    noise: f64,
    seed: u64,
) -> Result<Vec<PointCloud>> {
    if families.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted: Vec<ShapeFamily> = families.to_vec();
    sorted.sort_by_key(|f| f.name());
    sorted.dedup();

    let mut root = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(sorted.len() * per_class);
    for (label, family) in sorted.iter().enumerate() {
        for _ in 0..per_class {
            let cloud_seed: u64 = root.gen();
            let mut rng = ChaCha8Rng::seed_from_u64(cloud_seed);
            let pts = sample_family(*family, points, noise, &mut rng);
            out.push(PointCloud::with_label(pts, label));
        }
    }
    Ok(out)
}

/// Parses a synthetic-corpus spec string `fam1,fam2,...:per_class[:noise]`,
/// e.g. `plate,sphere,strut:50:0.02`.
pub fn parse_synthetic_spec(spec: &str) -> Result<(Vec<ShapeFamily>, usize, f64)> {
    let mut parts = spec.split(':');
    let family_part = parts.next().unwrap_or("");
    let families: Vec<ShapeFamily> = family_part
        .split(',')
        .filter(|s| !s.is_empty())
        .map(ShapeFamily::parse)
        .collect::<Result<_>>()?;
    if families.is_empty() {
        return Err(Error::UnknownFamily(String::new()));
    }
    let per_class = parts
        .next()
        .unwrap_or("50")
        .parse::<usize>()
        .map_err(|_| Error::Dataset(format!("bad per-class count in spec {spec:?}")))?;
    let noise = parts
        .next()
        .unwrap_or("0.02")
        .parse::<f64>()
        .map_err(|_| Error::Dataset(format!("bad noise level in spec {spec:?}")))?;
    Ok((families, per_class, noise))
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Architecture preset for training runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    /// Small stack suited to CPU-only desk-scale runs.
    Compact,
    /// The reference audit architecture.
    Full,
}

impl Arch {
    pub fn model_config(&self, k: usize, classes: usize) -> ModelConfig {
        let mut cfg = match self {
            Arch::Compact => ModelConfig::compact(classes),
            Arch::Full => ModelConfig::full(classes),
        };
        cfg.k = k;
        cfg
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "compact" => Ok(Arch::Compact),
            "full" => Ok(Arch::Full),
            other => Err(Error::Dataset(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub k: usize,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub points: usize,
    pub normalize: bool,
    pub val_fraction: f64,
    pub arch: Arch,
    /// Stop once held-out accuracy reaches this value.
    pub stop_at_val_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 20,
            lr: 0.01,
            momentum: 0.9,
            epochs: 30,
            batch_size: 8,
            seed: 7,
            points: 1024,
            normalize: true,
            val_fraction: 0.2,
            arch: Arch::Compact,
            stop_at_val_accuracy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

/// A cloud with its precomputed descriptor table.
struct Prepared {
    cloud: PointCloud,
    g: Vec<GeomFeatureVector>,
    label: usize,
}

fn prepare(dataset: &[PointCloud], config: &TrainConfig) -> Result<Vec<Prepared>> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput);
    }
    for cloud in dataset {
        if cloud.len() != config.points {
            return Err(Error::InconsistentCloudSize {
                expected: config.points,
                actual: cloud.len(),
            });
        }
        if cloud.label.is_none() {
            return Err(Error::MissingLabel);
        }
    }
    dataset
        .par_iter()
        .map(|cloud| {
            let label = cloud.label.unwrap();
            let cloud = if config.normalize {
                normalize_unit_sphere(cloud)
            } else {
                cloud.clone()
            };
            let g = per_point_features(&cloud, config.k)?;
            Ok(Prepared { cloud, g, label })
        })
        .collect()
}

/// Seeded stratified split. A single global shuffle fixes a sample order;
/// each class contributes its first `val_fraction` samples (in that order)
/// to the validation set. Both returned lists preserve the global shuffled
/// order, so the split does not depend on how class ids are numbered.
fn stratified_split(
    labels: &[usize],
    classes: usize,
    val_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(rng);
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    let targets: Vec<usize> = counts
        .iter()
        .map(|c| (*c as f64 * val_fraction).floor() as usize)
        .collect();
    let mut taken = vec![0usize; classes];
    let mut is_val = vec![false; labels.len()];
    for &i in &order {
        let c = labels[i];
        if taken[c] < targets[c] {
            taken[c] += 1;
            is_val[i] = true;
        }
    }
    let train = order.iter().copied().filter(|&i| !is_val[i]).collect();
    let val = order.iter().copied().filter(|&i| is_val[i]).collect();
    (train, val)
}

/// Full SGD training run from a fresh seeded model. Deterministic for a
/// fixed seed: mini-batch order is seeded, per-sample gradients are
/// computed in parallel but reduced in batch order.
pub fn train(config: &TrainConfig, dataset: &[PointCloud]) -> Result<(Model, Vec<EpochMetrics>)> {
    let classes = dataset
        .iter()
        .filter_map(|c| c.label)
        .max()
        .unwrap_or(0)
        + 1;
    let model = Model::init(config.arch.model_config(config.k, classes), config.seed)?;
    train_from(config, dataset, model)
}

/// Training loop starting from an existing model (warm start, or a model
/// whose initialization the caller has adjusted).
pub fn train_from(
    config: &TrainConfig,
    dataset: &[PointCloud],
    mut model: Model,
) -> Result<(Model, Vec<EpochMetrics>)> {
    let prepared = prepare(dataset, config)?;
    let labels: Vec<usize> = prepared.iter().map(|p| p.label).collect();
    let classes = model.config.classes;
    for &l in &labels {
        if l >= classes {
            return Err(Error::ClassOutOfRange { id: l, classes });
        }
    }
    let mut state = SgdState::zeros_like(&model);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut train_idx, val_idx) =
        stratified_split(&labels, classes, config.val_fraction, &mut rng);

    let mut metrics = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in train_idx.chunks(config.batch_size) {
            let results: Vec<Result<(f64, Gradients)>> = batch
                .par_iter()
                .map(|&i| {
                    let p = &prepared[i];
                    let (logits, trace) = crate::net::model_forward(&model, &p.cloud, &p.g)?;
                    let loss = cross_entropy_loss(&logits, p.label)?;
                    let grads = backward(&model, &trace, p.label)?;
                    Ok((loss, grads))
                })
                .collect();
            let mut batch_grads = Gradients::zeros_like(&model);
            for r in results {
                let (loss, grads) = r?;
                loss_sum += loss;
                batch_grads.add(&grads)?;
            }
            batch_grads.scale(1.0 / batch.len() as f64);
            sgd_step(&mut model, &batch_grads, config.lr, config.momentum, &mut state)?;
        }
        let train_loss = loss_sum / train_idx.len().max(1) as f64;

        let correct: usize = val_idx
            .par_iter()
            .map(|&i| {
                let p = &prepared[i];
                let (logits, _) = crate::net::model_forward(&model, &p.cloud, &p.g)?;
                Ok(usize::from(argmax(&logits) == p.label))
            })
            .collect::<Result<Vec<usize>>>()?
            .into_iter()
            .sum();
        let val_accuracy = if val_idx.is_empty() {
            0.0
        } else {
            correct as f64 / val_idx.len() as f64
        };

        metrics.push(EpochMetrics {
            epoch,
            train_loss,
            val_accuracy,
        });
        if let Some(target) = config.stop_at_val_accuracy {
            if val_accuracy >= target {
                break;
            }
        }
    }

    Ok((model, metrics))
}

/// Mean cross-entropy of a model over prepared clouds; used by tests and
/// examples to check descent.
pub fn mean_loss(model: &Model, dataset: &[PointCloud], config: &TrainConfig) -> Result<f64> {
    let prepared = prepare(dataset, config)?;
    let total: f64 = prepared
        .par_iter()
        .map(|p| {
            let (logits, _) = crate::net::model_forward(model, &p.cloud, &p.g)?;
            cross_entropy_loss(&logits, p.label)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .sum();
    Ok(total / prepared.len() as f64)
}
