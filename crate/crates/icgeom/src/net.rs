//! The classifier network: geometric-embedding MLP, edge-convolution stack
//! with dynamic graph recomputation, global max pooling and a dense head.
//!
//! Per point the network input is `[mlp(G_v), x, y, z]` — the embedded
//! seven-value shape descriptor concatenated with the raw coordinates.
//! Each edge-convolution layer rebuilds the k-NN graph in its *input*
//! feature space (dynamic updating) and computes, per point `i` and output
//! channel `m`,
//!
//! ```text
//! out[i][m] = max over neighbors j of ReLU(θ1_m · (x_j - x_i) + θ2_m · x_i)
//! ```
//!
//! with the self-loop j = i always present. The difference path θ1 cancels
//! translations of the layer input; the center path θ2 does not, which is
//! why the network as a whole is only partially translation invariant
//! unless the input cloud is normalized first.
//!
//! Parameters are stored as f32 (the checkpoint dtype) while all arithmetic
//! runs in f64, so a save/load round trip reproduces logits bit for bit.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geomfeat::GeomFeatureVector;
use crate::graph::{knn_graph, KnnGraph};
use crate::pointcloud::PointCloud;

/// Dense layer, weights row-major `out x in`, with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        LinearLayer {
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let dist = Uniform::new(-bound, bound);
        LinearLayer {
            weight: (0..in_dim * out_dim)
                .map(|_| dist.sample(rng) as f32)
                .collect(),
            bias: (0..out_dim).map(|_| dist.sample(rng) as f32).collect(),
            in_dim,
            out_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// `y = W x + b` for a single vector.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.in_dim);
        (0..self.out_dim)
            .map(|m| {
                let row = &self.weight[m * self.in_dim..(m + 1) * self.in_dim];
                let mut acc = self.bias[m] as f64;
                for (w, v) in row.iter().zip(x) {
                    acc += *w as f64 * v;
                }
                acc
            })
            .collect()
    }

    /// Batched forward over `n` row-major vectors.
    fn forward_batch(&self, xs: &[f64], n: usize) -> Vec<f64> {
        assert_eq!(xs.len(), n * self.in_dim);
        let mut out = vec![0.0; n * self.out_dim];
        out.par_chunks_mut(self.out_dim)
            .zip(xs.par_chunks(self.in_dim))
            .for_each(|(yrow, xrow)| {
                for m in 0..self.out_dim {
                    let wrow = &self.weight[m * self.in_dim..(m + 1) * self.in_dim];
                    let mut acc = self.bias[m] as f64;
                    for (w, v) in wrow.iter().zip(xrow) {
                        acc += *w as f64 * v;
                    }
                    yrow[m] = acc;
                }
            });
        out
    }
}

/// Edge-convolution layer: a difference-path matrix θ1 and a center-path
/// matrix θ2, both `out x in`, no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeConvLayer {
    pub theta_diff: Vec<f32>,
    pub theta_center: Vec<f32>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl EdgeConvLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        EdgeConvLayer {
            theta_diff: vec![0.0; in_dim * out_dim],
            theta_center: vec![0.0; in_dim * out_dim],
            in_dim,
            out_dim,
        }
    }

    fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let dist = Uniform::new(-bound, bound);
        EdgeConvLayer {
            theta_diff: (0..in_dim * out_dim)
                .map(|_| dist.sample(rng) as f32)
                .collect(),
            theta_center: (0..in_dim * out_dim)
                .map(|_| dist.sample(rng) as f32)
                .collect(),
            in_dim,
            out_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        self.theta_diff.len() + self.theta_center.len()
    }
}

/// Architecture description. `embed_widths` is the full chain starting at 7
/// (the descriptor width); `edge_widths` lists the output width of each
/// edge-convolution layer (the first layer's input is `3 + d_embed`);
/// `head_widths` lists the hidden widths of the classifier head, which maps
/// the pooled vector to `classes` logits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub k: usize,
    pub embed_widths: Vec<usize>,
    pub edge_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
    pub classes: usize,
}

impl ModelConfig {
    pub fn new(
        k: usize,
        embed_widths: Vec<usize>,
        edge_widths: Vec<usize>,
        head_widths: Vec<usize>,
        classes: usize,
    ) -> Result<Self> {
        let cfg = ModelConfig {
            k,
            embed_widths,
            edge_widths,
            head_widths,
            classes,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::ShapeMismatch {
                what: "neighbor count k",
                expected: 1,
                actual: 0,
            });
        }
        if self.embed_widths.len() < 2 || self.embed_widths[0] != GeomFeatureVector::DIM {
            return Err(Error::ShapeMismatch {
                what: "embed input width",
                expected: GeomFeatureVector::DIM,
                actual: self.embed_widths.first().copied().unwrap_or(0),
            });
        }
        if self.edge_widths.is_empty() {
            return Err(Error::ShapeMismatch {
                what: "edge-conv layer count",
                expected: 1,
                actual: 0,
            });
        }
        if self.classes == 0 {
            return Err(Error::ShapeMismatch {
                what: "class count",
                expected: 1,
                actual: 0,
            });
        }
        Ok(())
    }

    /// Width of the embedded descriptor (before the coordinates are
    /// appended).
    pub fn d_embed(&self) -> usize {
        *self.embed_widths.last().unwrap()
    }

    /// Input width of edge-convolution layer `l`.
    pub fn edge_input_width(&self, l: usize) -> usize {
        if l == 0 {
            3 + self.d_embed()
        } else {
            self.edge_widths[l - 1]
        }
    }

    /// Width of the pooled global descriptor.
    pub fn pooled_width(&self) -> usize {
        *self.edge_widths.last().unwrap()
    }

    /// The reference architecture used for the parameter audit.
    pub fn full(classes: usize) -> Self {
        ModelConfig {
            k: 20,
            embed_widths: vec![7, 32, 64],
            edge_widths: vec![64, 64, 128, 256, 1024],
            head_widths: vec![512, 256],
            classes,
        }
    }

    /// A small architecture for desk-scale training runs.
    pub fn compact(classes: usize) -> Self {
        ModelConfig {
            k: 20,
            embed_widths: vec![7, 16, 32],
            edge_widths: vec![32, 64],
            head_widths: vec![64, 32],
            classes,
        }
    }
}

impl Default for ModelConfig {
    /// The audit architecture at the benchmark's 67 classes.
    fn default() -> Self {
        ModelConfig::full(67)
    }
}

/// Borrowed view of one parameter tensor.
pub struct TensorView<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a [f32],
}

/// The full model: embedding MLP, edge-convolution stack, classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub embed: Vec<LinearLayer>,
    pub edge: Vec<EdgeConvLayer>,
    pub head: Vec<LinearLayer>,
    pub config: ModelConfig,
}

impl Model {
    /// Seeded random initialization, uniform in ±1/sqrt(fan_in) per layer.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut embed = Vec::new();
        for w in config.embed_widths.windows(2) {
            embed.push(LinearLayer::init(w[0], w[1], &mut rng));
        }
        let mut edge = Vec::new();
        for (l, &out) in config.edge_widths.iter().enumerate() {
            edge.push(EdgeConvLayer::init(config.edge_input_width(l), out, &mut rng));
        }
        let mut head = Vec::new();
        let mut prev = config.pooled_width();
        for &w in config.head_widths.iter().chain(std::iter::once(&config.classes)) {
            head.push(LinearLayer::init(prev, w, &mut rng));
            prev = w;
        }
        Ok(Model {
            embed,
            edge,
            head,
            config,
        })
    }

    /// All-zero parameters (useful as a degenerate reference).
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let mut model = Model::init(config, 0)?;
        for (_, data) in model.tensors_mut() {
            data.fill(0.0);
        }
        Ok(model)
    }

    /// Parameter tensors in their canonical (checkpoint) order.
    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut v = Vec::new();
        for (i, l) in self.embed.iter().enumerate() {
            v.push(TensorView {
                name: format!("embed.{i}.weight"),
                dims: vec![l.out_dim, l.in_dim],
                data: &l.weight,
            });
            v.push(TensorView {
                name: format!("embed.{i}.bias"),
                dims: vec![l.out_dim],
                data: &l.bias,
            });
        }
        for (i, l) in self.edge.iter().enumerate() {
            v.push(TensorView {
                name: format!("edge.{i}.theta_diff"),
                dims: vec![l.out_dim, l.in_dim],
                data: &l.theta_diff,
            });
            v.push(TensorView {
                name: format!("edge.{i}.theta_center"),
                dims: vec![l.out_dim, l.in_dim],
                data: &l.theta_center,
            });
        }
        for (i, l) in self.head.iter().enumerate() {
            v.push(TensorView {
                name: format!("head.{i}.weight"),
                dims: vec![l.out_dim, l.in_dim],
                data: &l.weight,
            });
            v.push(TensorView {
                name: format!("head.{i}.bias"),
                dims: vec![l.out_dim],
                data: &l.bias,
            });
        }
        v
    }

    /// Mutable slices over every parameter tensor, canonical order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f32])> {
        let mut v: Vec<(String, &mut [f32])> = Vec::new();
        for (i, l) in self.embed.iter_mut().enumerate() {
            v.push((format!("embed.{i}.weight"), &mut l.weight));
            v.push((format!("embed.{i}.bias"), &mut l.bias));
        }
        for (i, l) in self.edge.iter_mut().enumerate() {
            v.push((format!("edge.{i}.theta_diff"), &mut l.theta_diff));
            v.push((format!("edge.{i}.theta_center"), &mut l.theta_center));
        }
        for (i, l) in self.head.iter_mut().enumerate() {
            v.push((format!("head.{i}.weight"), &mut l.weight));
            v.push((format!("head.{i}.bias"), &mut l.bias));
        }
        v
    }

    pub fn param_count(&self) -> usize {
        param_count(self)
    }
}

/// Total scalar count across all weights and biases.
pub fn param_count(model: &Model) -> usize {
    model.embed.iter().map(LinearLayer::param_count).sum::<usize>()
        + model.edge.iter().map(EdgeConvLayer::param_count).sum::<usize>()
        + model.head.iter().map(LinearLayer::param_count).sum::<usize>()
}

/// Runs the embedding MLP on one descriptor and appends the coordinates:
/// returns `[mlp(g), x, y, z]`.
pub fn embed_point(model: &Model, coords: [f64; 3], g: &GeomFeatureVector) -> Result<Vec<f64>> {
    let first = model.embed.first().ok_or(Error::ShapeMismatch {
        what: "embed layer count",
        expected: 1,
        actual: 0,
    })?;
    if first.in_dim != GeomFeatureVector::DIM {
        return Err(Error::ShapeMismatch {
            what: "embed input width",
            expected: GeomFeatureVector::DIM,
            actual: first.in_dim,
        });
    }
    let mut x: Vec<f64> = g.to_array().to_vec();
    let last = model.embed.len() - 1;
    for (l, layer) in model.embed.iter().enumerate() {
        let mut pre = layer.forward(&x);
        if l < last {
            for v in &mut pre {
                *v = v.max(0.0);
            }
        }
        x = pre;
    }
    x.extend_from_slice(&coords);
    Ok(x)
}

/// One edge convolution: per point and channel, the maximum over graph
/// neighbors of `ReLU(θ1 · (x_j - x_i) + θ2 · x_i)`. Output is `n x out`,
/// elementwise non-negative.
pub fn edgeconv_forward(
    layer: &EdgeConvLayer,
    features: &[f64],
    graph: &KnnGraph,
) -> Result<Vec<f64>> {
    let (out, _, _) = edgeconv_with_trace(layer, features, graph)?;
    Ok(out)
}

/// Edge convolution that also reports, per `(point, channel)`, the winning
/// neighbor and its pre-activation value (needed for exact gradients).
pub fn edgeconv_with_trace(
    layer: &EdgeConvLayer,
    features: &[f64],
    graph: &KnnGraph,
) -> Result<(Vec<f64>, Vec<u32>, Vec<f64>)> {
    let n = graph.len();
    let din = layer.in_dim;
    let dout = layer.out_dim;
    if features.len() != n * din {
        return Err(Error::ShapeMismatch {
            what: "edge-conv input",
            expected: n * din,
            actual: features.len(),
        });
    }

    // θ1 · (x_j - x_i) = θ1 x_j - θ1 x_i, so two projections per point are
    // enough instead of one per edge.
    let proj_diff = project(&layer.theta_diff, features, n, din, dout);
    let proj_center = project(&layer.theta_center, features, n, din, dout);

    let mut out = vec![0.0f64; n * dout];
    let mut argmax = vec![0u32; n * dout];
    let mut preact = vec![0.0f64; n * dout];

    out.par_chunks_mut(dout)
        .zip(argmax.par_chunks_mut(dout))
        .zip(preact.par_chunks_mut(dout))
        .enumerate()
        .for_each(|(i, ((orow, arow), prow))| {
            let di = &proj_diff[i * dout..(i + 1) * dout];
            let ci = &proj_center[i * dout..(i + 1) * dout];
            let mut best = vec![-1.0f64; dout];
            for &j in graph.row(i) {
                let dj = &proj_diff[j as usize * dout..(j as usize + 1) * dout];
                for m in 0..dout {
                    let s = dj[m] - di[m] + ci[m];
                    let v = if s > 0.0 { s } else { 0.0 };
                    // strict > keeps the first winning neighbor on ties
                    if v > best[m] {
                        best[m] = v;
                        arow[m] = j;
                        prow[m] = s;
                    }
                }
            }
            orow.copy_from_slice(&best);
        });

    Ok((out, argmax, preact))
}

/// `theta (out x in)` applied to every row of `xs (n x in)`.
fn project(theta: &[f32], xs: &[f64], n: usize, din: usize, dout: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; n * dout];
    out.par_chunks_mut(dout)
        .zip(xs.par_chunks(din))
        .for_each(|(yrow, xrow)| {
            for m in 0..dout {
                let trow = &theta[m * din..(m + 1) * din];
                let mut acc = 0.0f64;
                for (w, v) in trow.iter().zip(xrow) {
                    acc += *w as f64 * v;
                }
                yrow[m] = acc;
            }
        });
    out
}

/// Everything the backward pass needs: per-layer inputs, the graph used by
/// each edge layer, max-aggregation winners and pre-activations.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub n: usize,
    pub coords: Vec<[f64; 3]>,
    pub g_table: Vec<[f64; 7]>,
    /// Pre-activations of each embedding layer, `n x out`, in layer order.
    pub embed_pre: Vec<Vec<f64>>,
    /// Input of each edge layer, `n x in`, in layer order. Entry 0 is the
    /// embedded point table `[mlp(g), coords]`.
    pub edge_inputs: Vec<Vec<f64>>,
    /// Graph recomputed in the input feature space of each edge layer.
    pub graphs: Vec<KnnGraph>,
    /// Winning neighbor per `(point, channel)` for each edge layer.
    pub edge_argmax: Vec<Vec<u32>>,
    /// Pre-activation at the winner for each edge layer.
    pub edge_preact: Vec<Vec<f64>>,
    /// Global max-pooled feature vector and the point that attained each
    /// channel's maximum.
    pub pooled: Vec<f64>,
    pub pool_argmax: Vec<u32>,
    /// Pre-activations of each head layer; the last entry is the logits.
    pub head_pre: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

/// Full forward pass. The k-NN graph is rebuilt in the current feature
/// space before every edge layer; after the last layer the point dimension
/// is collapsed by a global per-channel max, and the head MLP maps the
/// pooled vector to class logits.
pub fn model_forward(
    model: &Model,
    cloud: &PointCloud,
    g_table: &[GeomFeatureVector],
) -> Result<(Vec<f64>, ForwardTrace)> {
    let n = cloud.len();
    let k = model.config.k;
    if n < k {
        return Err(Error::KTooLarge { k, n });
    }
    if g_table.len() != n {
        return Err(Error::ShapeMismatch {
            what: "descriptor table",
            expected: n,
            actual: g_table.len(),
        });
    }

    // Embedding MLP over all points, pre-activations retained.
    let mut embed_pre: Vec<Vec<f64>> = Vec::with_capacity(model.embed.len());
    let mut x: Vec<f64> = Vec::with_capacity(n * 7);
    for g in g_table {
        x.extend_from_slice(&g.to_array());
    }
    let last = model.embed.len() - 1;
    for (l, layer) in model.embed.iter().enumerate() {
        let pre = layer.forward_batch(&x, n);
        if l < last {
            x = pre.iter().map(|v| v.max(0.0)).collect();
        } else {
            x = pre.clone();
        }
        embed_pre.push(pre);
    }

    // Append raw coordinates.
    let d_embed = model.config.d_embed();
    let width0 = d_embed + 3;
    let mut current = vec![0.0f64; n * width0];
    for i in 0..n {
        current[i * width0..i * width0 + d_embed]
            .copy_from_slice(&x[i * d_embed..(i + 1) * d_embed]);
        current[i * width0 + d_embed..(i + 1) * width0].copy_from_slice(&cloud.points[i]);
    }

    let mut edge_inputs = Vec::with_capacity(model.edge.len());
    let mut graphs = Vec::with_capacity(model.edge.len());
    let mut edge_argmax = Vec::with_capacity(model.edge.len());
    let mut edge_preact = Vec::with_capacity(model.edge.len());

    for layer in &model.edge {
        let graph = knn_graph(&current, layer.in_dim, k)?;
        let (out, argmax, preact) = edgeconv_with_trace(layer, &current, &graph)?;
        edge_inputs.push(std::mem::replace(&mut current, out));
        graphs.push(graph);
        edge_argmax.push(argmax);
        edge_preact.push(preact);
    }

    // Global max pool over points.
    let dlast = model.edge.last().unwrap().out_dim;
    let mut pooled = vec![f64::NEG_INFINITY; dlast];
    let mut pool_argmax = vec![0u32; dlast];
    for i in 0..n {
        let row = &current[i * dlast..(i + 1) * dlast];
        for m in 0..dlast {
            if row[m] > pooled[m] {
                pooled[m] = row[m];
                pool_argmax[m] = i as u32;
            }
        }
    }

    // Classifier head.
    let mut head_pre: Vec<Vec<f64>> = Vec::with_capacity(model.head.len());
    let mut h = pooled.clone();
    let hlast = model.head.len() - 1;
    for (l, layer) in model.head.iter().enumerate() {
        let pre = layer.forward(&h);
        if l < hlast {
            h = pre.iter().map(|v| v.max(0.0)).collect();
        } else {
            h = pre.clone();
        }
        head_pre.push(pre);
    }
    let logits = h;

    let trace = ForwardTrace {
        n,
        coords: cloud.points.clone(),
        g_table: g_table.iter().map(|g| g.to_array()).collect(),
        embed_pre,
        edge_inputs,
        graphs,
        edge_argmax,
        edge_preact,
        pooled,
        pool_argmax,
        head_pre,
        logits: logits.clone(),
    };
    Ok((logits, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geomfeat::per_point_features;

    fn tiny_config(classes: usize) -> ModelConfig {
        ModelConfig::new(4, vec![7, 8, 8], vec![8, 8], vec![8], classes).unwrap()
    }

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Uniform::new(-1.0f64, 1.0);
        PointCloud::new(
            (0..n)
                .map(|_| [dist.sample(&mut rng), dist.sample(&mut rng), dist.sample(&mut rng)])
                .collect(),
        )
    }

    #[test]
    fn embed_zero_model_keeps_coordinates() {
        let model = Model::zeros(tiny_config(3)).unwrap();
        let g = GeomFeatureVector {
            linearity: 0.3,
            ..GeomFeatureVector::zero()
        };
        let out = embed_point(&model, [1.0, 2.0, 3.0], &g).unwrap();
        assert_eq!(out.len(), 8 + 3);
        assert!(out[..8].iter().all(|v| *v == 0.0));
        assert_eq!(&out[8..], &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn embed_identity_single_layer_passes_descriptor_through() {
        let config = ModelConfig::new(4, vec![7, 7], vec![8], vec![], 3).unwrap();
        let mut model = Model::zeros(config).unwrap();
        for i in 0..7 {
            model.embed[0].weight[i * 7 + i] = 1.0;
        }
        let g = GeomFeatureVector {
            linearity: 0.1,
            planarity: 0.2,
            sphericity: 0.3,
            anisotropy: 0.4,
            eigen_sum: 0.5,
            curvature: 0.6,
            omnivariance: 0.7,
        };
        let out = embed_point(&model, [9.0, 8.0, 7.0], &g).unwrap();
        assert_eq!(
            out,
            vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 9.0, 8.0, 7.0]
        );
    }

    #[test]
    fn edgeconv_zero_diff_path_ignores_graph() {
        // θ1 = 0 collapses every edge value to ReLU(θ2 x_i).
        let mut layer = EdgeConvLayer::zeros(3, 2);
        layer.theta_center = vec![1.0, 0.0, 0.0, 0.0, -1.0, 0.0];
        let pts = vec![[1.0, 2.0, 0.0], [4.0, -3.0, 0.0], [0.5, 0.5, 0.0]];
        let graph = crate::graph::knn_graph_points(&pts, 2).unwrap();
        let features: Vec<f64> = pts.iter().flatten().copied().collect();
        let out = edgeconv_forward(&layer, &features, &graph).unwrap();
        assert_eq!(out, vec![1.0, 0.0, 4.0, 3.0, 0.5, 0.0]);
    }

    #[test]
    fn edgeconv_hand_evaluated_single_channel() {
        let mut layer = EdgeConvLayer::zeros(3, 1);
        layer.theta_diff = vec![1.0, 0.0, 0.0];
        // Point 0 at the origin with neighbors at (1,0,0) and (-2,0,0):
        // edge values ReLU(1), ReLU(-2), ReLU(0) -> max 1.
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-2.0, 0.0, 0.0]];
        let graph = crate::graph::knn_graph_points(&pts, 3).unwrap();
        let features: Vec<f64> = pts.iter().flatten().copied().collect();
        let out = edgeconv_forward(&layer, &features, &graph).unwrap();
        assert_eq!(out[0], 1.0);
    }

    #[test]
    fn edgeconv_output_nonnegative() {
        let model = Model::init(tiny_config(3), 5).unwrap();
        let cloud = random_cloud(32, 6);
        let g = per_point_features(&cloud, 4).unwrap();
        let (_, trace) = model_forward(&model, &cloud, &g).unwrap();
        // Inputs to layer 1 are the outputs of layer 0.
        assert!(trace.edge_inputs[1].iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn edgeconv_shape_mismatch_rejected() {
        let layer = EdgeConvLayer::zeros(3, 2);
        let pts = vec![[0.0; 3]; 4];
        let graph = crate::graph::knn_graph_points(&pts, 2).unwrap();
        let bad = vec![0.0; 5];
        assert!(matches!(
            edgeconv_forward(&layer, &bad, &graph).unwrap_err(),
            Error::ShapeMismatch { .. }
        ));
    }

    #[test]
    fn forward_zero_model_gives_zero_logits() {
        let model = Model::zeros(tiny_config(3)).unwrap();
        let cloud = random_cloud(16, 1);
        let g = per_point_features(&cloud, 4).unwrap();
        let (logits, _) = model_forward(&model, &cloud, &g).unwrap();
        assert_eq!(logits, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let model = Model::init(tiny_config(3), 9).unwrap();
        let cloud = random_cloud(24, 2);
        let g = per_point_features(&cloud, 4).unwrap();
        let (a, _) = model_forward(&model, &cloud, &g).unwrap();
        let (b, _) = model_forward(&model, &cloud, &g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_permutation_invariant() {
        let model = Model::init(tiny_config(3), 3).unwrap();
        let cloud = random_cloud(32, 4);
        let g = per_point_features(&cloud, 4).unwrap();
        let (base, _) = model_forward(&model, &cloud, &g).unwrap();

        let mut perm: Vec<usize> = (0..32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        let permuted = cloud.permuted(&perm);
        let g_perm: Vec<GeomFeatureVector> = perm.iter().map(|&i| g[i]).collect();
        let (out, _) = model_forward(&model, &permuted, &g_perm).unwrap();
        for (a, b) in base.iter().zip(&out) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_rejects_small_cloud() {
        let model = Model::init(tiny_config(3), 3).unwrap();
        let cloud = random_cloud(3, 4);
        let g = vec![GeomFeatureVector::zero(); 3];
        assert!(matches!(
            model_forward(&model, &cloud, &g).unwrap_err(),
            Error::KTooLarge { .. }
        ));
    }

    #[test]
    fn dynamic_graph_single_layer_matches_knn_of_embedding() {
        let config = ModelConfig::new(4, vec![7, 8, 8], vec![8], vec![8], 3).unwrap();
        let model = Model::init(config, 21).unwrap();
        let cloud = random_cloud(20, 8);
        let g = per_point_features(&cloud, 4).unwrap();
        let (_, trace) = model_forward(&model, &cloud, &g).unwrap();
        let expected = knn_graph(&trace.edge_inputs[0], 11, 4).unwrap();
        assert_eq!(trace.graphs[0], expected);
    }

    #[test]
    fn param_count_units() {
        let linear = LinearLayer::zeros(3, 4);
        assert_eq!(linear.param_count(), 16);
        let edge = EdgeConvLayer::zeros(6, 64);
        assert_eq!(edge.param_count(), 768);
    }

    #[test]
    fn default_architecture_lands_in_audit_range() {
        let model = Model::init(ModelConfig::default(), 0).unwrap();
        let count = param_count(&model);
        assert!((1_000_000..=2_500_000).contains(&count), "{count}");
    }
}
