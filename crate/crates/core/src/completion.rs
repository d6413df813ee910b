//! Point-proxy transformer completion network: edge-convolution feature
//! extraction, proxy construction, geometry-aware encoder, adaptive query
//! generation, geometry-aware decoder, and a grid-folding head that emits
//! the dense cloud.
//!
//! Geometry awareness is a learned distance-decay bias on attention logits:
//! `logit -= relu(lambda) * distance`, one lambda per attention block.
//! Transformer blocks are pre-norm residual (`x + sublayer(norm(x))`), so
//! zeroing a sublayer's weights makes it an exact passthrough. Encoder
//! bias distances come from the (constant) input coordinates; decoder
//! biases differentiate through the predicted coarse coordinates.

use crate::fusion::{FusionConfig, FusionModule};
use crate::geom::{self, knn_lists, GeomError, Point3, PointCloud};
use crate::render::ViewSet;
use crate::tensor::nn::{Linear, LayerNorm, Mlp, MultiHeadAttention, ParamSet};
use crate::tensor::{
    add, chamfer_l1_loss, concat_cols, gather_rows, matmul, max_pool_rows, relu, scale_by, sub,
    Tensor,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::rc::Rc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CompletionError {
    #[error("cloud of {size} points is too small (need more than {min})")]
    CloudTooSmall { size: usize, min: usize },
    #[error("input cloud must lie in the unit-box frame; coordinate magnitude {0} found")]
    NotNormalized(f64),
    #[error("input cloud contains non-finite coordinates")]
    NonFinite,
    #[error("model was built with fusion enabled and requires views")]
    MissingViews,
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Architecture hyperparameters. Defaults are the toy-scale dimensions used
/// throughout: 128 proxies, 64 queries, 4x4 folding grid (1024 dense
/// points), embedding width 64.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub proxy_count: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub query_count: usize,
    pub folding_grid: usize,
    pub knn_k: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            proxy_count: 128,
            embed_dim: 64,
            heads: 4,
            encoder_layers: 3,
            decoder_layers: 3,
            query_count: 64,
            folding_grid: 4,
            knn_k: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), CompletionError> {
        if self.embed_dim % self.heads != 0 {
            return Err(CompletionError::BadConfig(format!(
                "embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        for (name, v) in [
            ("proxy_count", self.proxy_count),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("query_count", self.query_count),
            ("folding_grid", self.folding_grid),
            ("knn_k", self.knn_k),
        ] {
            if v == 0 {
                return Err(CompletionError::BadConfig(format!("{name} must be at least 1")));
            }
        }
        if self.proxy_count <= self.knn_k {
            return Err(CompletionError::BadConfig(format!(
                "proxy_count {} must exceed knn_k {}",
                self.proxy_count, self.knn_k
            )));
        }
        Ok(())
    }

    /// Dense output size M * g^2.
    pub fn dense_count(&self) -> usize {
        self.query_count * self.folding_grid * self.folding_grid
    }
}

/// Downsampled points paired with their learned features.
pub struct PointProxies {
    pub coords: Vec<Point3>,
    /// N x embed_dim.
    pub features: Tensor,
}

/// Decoder queries: embeddings plus predicted coarse coordinates.
pub struct QuerySet {
    /// M x embed_dim.
    pub embeddings: Tensor,
    /// M x 3.
    pub coarse: Tensor,
}

/// Forward output: coarse skeleton and dense folded cloud, both as graph
/// tensors so losses stay differentiable.
#[derive(Debug)]
pub struct CompletionOutput {
    pub coarse: Tensor,
    pub dense: Tensor,
}

pub fn cloud_to_tensor(cloud: &PointCloud) -> Tensor {
    let mut data = Vec::with_capacity(cloud.len() * 3);
    for p in &cloud.points {
        data.extend_from_slice(&[p.x, p.y, p.z]);
    }
    Tensor::constant(cloud.len(), 3, data)
}

pub fn tensor_to_cloud(t: &Tensor) -> PointCloud {
    assert_eq!(t.cols(), 3, "point tensor must be Nx3");
    let v = t.values();
    PointCloud::new(v.chunks(3).map(|c| Point3::new(c[0], c[1], c[2])).collect())
}

/// Euclidean distance matrix between two coordinate lists as a constant.
pub fn dist_matrix(a: &[Point3], b: &[Point3]) -> Tensor {
    let mut data = Vec::with_capacity(a.len() * b.len());
    for p in a {
        for q in b {
            data.push(p.dist(q));
        }
    }
    Tensor::constant(a.len(), b.len(), data)
}

struct EncoderLayer {
    ln_attn: LayerNorm,
    ln_ff: LayerNorm,
    attn: MultiHeadAttention,
    ff: Mlp,
    lambda: Tensor,
}

impl EncoderLayer {
    fn new(params: &mut ParamSet, name: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        let ln_attn = LayerNorm::new(params, &format!("{name}.ln_attn"), dim);
        let ln_ff = LayerNorm::new(params, &format!("{name}.ln_ff"), dim);
        let attn = MultiHeadAttention::new(params, &format!("{name}.attn"), dim, heads, rng);
        let ff = Mlp::new(params, &format!("{name}.ff"), &[dim, 2 * dim, dim], rng);
        let lambda = params.register(&format!("{name}.lambda"), Tensor::leaf(1, 1, vec![1.0]));
        EncoderLayer { ln_attn, ln_ff, attn, ff, lambda }
    }

    fn forward(&self, x: &Tensor, neg_dist: &Tensor) -> Tensor {
        let bias = scale_by(neg_dist, &relu(&self.lambda));
        let normed = self.ln_attn.forward(x);
        let x = add(x, &self.attn.forward(&normed, &normed, &normed, Some(&bias)));
        add(&x, &self.ff.forward(&self.ln_ff.forward(&x)))
    }
}

struct DecoderLayer {
    ln_self: LayerNorm,
    ln_cross: LayerNorm,
    ln_ff: LayerNorm,
    self_attn: MultiHeadAttention,
    cross_attn: MultiHeadAttention,
    ff: Mlp,
    lambda_self: Tensor,
    lambda_cross: Tensor,
}

impl DecoderLayer {
    fn new(params: &mut ParamSet, name: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        let ln_self = LayerNorm::new(params, &format!("{name}.ln_self"), dim);
        let ln_cross = LayerNorm::new(params, &format!("{name}.ln_cross"), dim);
        let ln_ff = LayerNorm::new(params, &format!("{name}.ln_ff"), dim);
        let self_attn = MultiHeadAttention::new(params, &format!("{name}.self_attn"), dim, heads, rng);
        let cross_attn = MultiHeadAttention::new(params, &format!("{name}.cross_attn"), dim, heads, rng);
        let ff = Mlp::new(params, &format!("{name}.ff"), &[dim, 2 * dim, dim], rng);
        let lambda_self = params.register(&format!("{name}.lambda_self"), Tensor::leaf(1, 1, vec![1.0]));
        let lambda_cross = params.register(&format!("{name}.lambda_cross"), Tensor::leaf(1, 1, vec![1.0]));
        DecoderLayer { ln_self, ln_cross, ln_ff, self_attn, cross_attn, ff, lambda_self, lambda_cross }
    }

    fn cross_sublayer(&self, x: &Tensor, memory: &Tensor, neg_dist_cross: &Tensor) -> Tensor {
        let bias = scale_by(neg_dist_cross, &relu(&self.lambda_cross));
        self.cross_attn.forward(&self.ln_cross.forward(x), memory, memory, Some(&bias))
    }

    fn forward(&self, x: &Tensor, memory: &Tensor, neg_dist_self: &Tensor, neg_dist_cross: &Tensor) -> Tensor {
        let bias_self = scale_by(neg_dist_self, &relu(&self.lambda_self));
        let normed = self.ln_self.forward(x);
        let x = add(x, &self.self_attn.forward(&normed, &normed, &normed, Some(&bias_self)));
        let x = add(&x, &self.cross_sublayer(&x, memory, neg_dist_cross));
        add(&x, &self.ff.forward(&self.ln_ff.forward(&x)))
    }
}

pub struct CompletionModel {
    pub cfg: ModelConfig,
    pub params: ParamSet,
    stage1: Mlp,
    stage2: Mlp,
    phi: Mlp,
    encoder: Vec<EncoderLayer>,
    lin_v: Linear,
    mix: Tensor,
    coord_proj: Linear,
    q_mlp: Mlp,
    decoder: Vec<DecoderLayer>,
    fold: Mlp,
    grid: Vec<(f64, f64)>,
    pub fusion: Option<FusionModule>,
}

impl CompletionModel {
    /// Builds a model with seeded initialization. Fusion parameters, when
    /// requested, are constructed after all completion parameters, so a
    /// point-only model shares bit-identical completion weights with a
    /// fusion model built from the same seed.
    pub fn new(cfg: ModelConfig, fusion: Option<FusionConfig>, seed: u64) -> Result<Self, CompletionError> {
        cfg.validate()?;
        if let Some(f) = &fusion {
            f.validate().map_err(|e| CompletionError::BadConfig(e))?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let d = cfg.embed_dim;

        let stage1 = Mlp::new(&mut params, "extract.s1", &[6, d, d], &mut rng);
        let stage2 = Mlp::new(&mut params, "extract.s2", &[2 * d, d, d], &mut rng);
        let phi = Mlp::new(&mut params, "proxy.phi", &[3, d, d], &mut rng);
        let encoder = (0..cfg.encoder_layers)
            .map(|i| EncoderLayer::new(&mut params, &format!("enc{i}"), d, cfg.heads, &mut rng))
            .collect();
        let lin_v = Linear::new(&mut params, "queries.lin_v", d, d, &mut rng);
        let mix = crate::tensor::nn::init_weight(
            &mut params,
            "queries.mix",
            cfg.query_count,
            cfg.proxy_count,
            cfg.proxy_count,
            &mut rng,
        );
        let coord_proj = Linear::new(&mut params, "queries.coord_proj", d, 3, &mut rng);
        let q_mlp = Mlp::new(&mut params, "queries.q_mlp", &[3 + d, d, d], &mut rng);
        let decoder = (0..cfg.decoder_layers)
            .map(|i| DecoderLayer::new(&mut params, &format!("dec{i}"), d, cfg.heads, &mut rng))
            .collect();
        let fold = Mlp::new(&mut params, "fold.mlp", &[d + 2, d, 3], &mut rng);

        let g = cfg.folding_grid;
        let grid: Vec<(f64, f64)> = (0..g * g)
            .map(|e| {
                let gi = e / g;
                let gj = e % g;
                let t = |i: usize| {
                    if g == 1 {
                        0.0
                    } else {
                        -0.05 + 0.1 * i as f64 / (g - 1) as f64
                    }
                };
                (t(gi), t(gj))
            })
            .collect();

        let fusion = fusion.map(|fc| FusionModule::new(&mut params, fc, d, cfg.heads, &mut rng));

        Ok(CompletionModel {
            cfg,
            params,
            stage1,
            stage2,
            phi,
            encoder,
            lin_v,
            mix,
            coord_proj,
            q_mlp,
            decoder,
            fold,
            grid,
            fusion,
        })
    }

    /// Two-stage edge convolution over the kNN graph; the second stage
    /// rebuilds the graph in feature space. Output rows align with input
    /// points.
    pub fn extract_point_features(&self, cloud: &PointCloud) -> Result<Tensor, CompletionError> {
        let n = cloud.len();
        let k = self.cfg.knn_k;
        if n <= k {
            return Err(CompletionError::CloudTooSmall { size: n, min: k });
        }
        let coords = cloud_to_tensor(cloud);
        let nbr = geom::knn(cloud, k)?;
        let f1 = self.edge_conv(&self.stage1, &coords, &nbr.lists, k);
        // feature-space graph for stage two
        let f1_vals = f1.values();
        let dcols = f1.cols();
        let lists2 = knn_lists(
            |i, j| {
                let (a, b) = (&f1_vals[i * dcols..(i + 1) * dcols], &f1_vals[j * dcols..(j + 1) * dcols]);
                a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
            },
            n,
            k,
        );
        Ok(self.edge_conv(&self.stage2, &f1, &lists2, k))
    }

    fn edge_conv(&self, mlp: &Mlp, features: &Tensor, lists: &[Vec<usize>], k: usize) -> Tensor {
        let n = features.rows();
        let mut idx_self = Vec::with_capacity(n * k);
        let mut idx_nbr = Vec::with_capacity(n * k);
        for (i, nbrs) in lists.iter().enumerate() {
            for &j in nbrs {
                idx_self.push(i);
                idx_nbr.push(j);
            }
        }
        let center = gather_rows(features, Rc::new(idx_self));
        let neighbor = gather_rows(features, Rc::new(idx_nbr));
        let edge = concat_cols(&[&center, &sub(&neighbor, &center)]);
        crate::tensor::group_max_rows(&mlp.forward(&edge), k)
    }

    /// Proxy features F = F' + phi(coords).
    pub fn make_point_proxies(&self, features: Tensor, coords: Vec<Point3>) -> PointProxies {
        assert_eq!(
            features.rows(),
            coords.len(),
            "proxy rows {} != coordinate count {}",
            features.rows(),
            coords.len()
        );
        let coord_t = Tensor::constant(coords.len(), 3, coords.iter().flat_map(|p| [p.x, p.y, p.z]).collect());
        let enhanced = add(&features, &self.phi.forward(&coord_t));
        PointProxies { coords, features: enhanced }
    }

    /// Geometry-aware encoder stack.
    pub fn encode(&self, proxies: &PointProxies) -> Tensor {
        let neg_dist = crate::tensor::scale(&dist_matrix(&proxies.coords, &proxies.coords), -1.0);
        let mut x = proxies.features.clone();
        for layer in &self.encoder {
            x = layer.forward(&x, &neg_dist);
        }
        x
    }

    /// Adaptive query generation: coarse coordinates from a learned row
    /// mixing, embeddings from the coarse coordinates joined with the
    /// pooled global feature.
    pub fn generate_queries(&self, v: &Tensor) -> QuerySet {
        let lv = self.lin_v.forward(v);
        let mixed = matmul(&self.mix, &lv);
        let coarse = self.coord_proj.forward(&mixed);
        let pooled = max_pool_rows(&lv);
        let m = self.cfg.query_count;
        let pooled_rows = gather_rows(&pooled, Rc::new(vec![0; m]));
        let embeddings = self.q_mlp.forward(&concat_cols(&[&coarse, &pooled_rows]));
        QuerySet { embeddings, coarse }
    }

    /// Decoder stack over the queries with cross-attention into V. The
    /// distance biases differentiate through the coarse coordinates.
    pub fn decode(&self, queries: &QuerySet, v: &Tensor, proxy_coords: &[Point3]) -> Tensor {
        let proxy_t = Tensor::constant(
            proxy_coords.len(),
            3,
            proxy_coords.iter().flat_map(|p| [p.x, p.y, p.z]).collect(),
        );
        let neg_dist_self =
            crate::tensor::scale(&crate::tensor::pairwise_dist(&queries.coarse, &queries.coarse), -1.0);
        let neg_dist_cross =
            crate::tensor::scale(&crate::tensor::pairwise_dist(&queries.coarse, &proxy_t), -1.0);
        let mut x = queries.embeddings.clone();
        for layer in &self.decoder {
            x = layer.forward(&x, v, &neg_dist_self, &neg_dist_cross);
        }
        x
    }

    /// Cross-attention sublayer of one decoder layer, exposed for
    /// rank-structure tests.
    pub fn decoder_cross_output(&self, layer_idx: usize, x: &Tensor, memory: &Tensor, neg_dist_cross: &Tensor) -> Tensor {
        self.decoder[layer_idx].cross_sublayer(x, memory, neg_dist_cross)
    }

    /// Folds the canonical 2D grid around each coarse point: each query
    /// emits g^2 points at C_m + offset(qfeat, grid cell).
    pub fn folding_head(&self, qfeat: &Tensor, coarse: &Tensor) -> Tensor {
        let m = qfeat.rows();
        let g2 = self.grid.len();
        let mut idx = Vec::with_capacity(m * g2);
        let mut grid_data = Vec::with_capacity(m * g2 * 2);
        for q in 0..m {
            for &(u, v) in &self.grid {
                idx.push(q);
                grid_data.push(u);
                grid_data.push(v);
            }
        }
        let idx = Rc::new(idx);
        let feats = gather_rows(qfeat, idx.clone());
        let grid_t = Tensor::constant(m * g2, 2, grid_data);
        let offsets = self.fold.forward(&concat_cols(&[&feats, &grid_t]));
        add(&offsets, &gather_rows(coarse, idx))
    }

    /// Full forward chain. The input must be finite and inside the unit
    /// box; it is FPS-resampled to `proxy_count` when larger and then
    /// canonically ordered (lexicographic), which makes the output
    /// independent of input point order.
    pub fn complete(&self, partial: &PointCloud, views: Option<&ViewSet>) -> Result<CompletionOutput, CompletionError> {
        if !partial.all_finite() {
            return Err(CompletionError::NonFinite);
        }
        let max_coord = partial
            .points
            .iter()
            .map(|p| p.x.abs().max(p.y.abs()).max(p.z.abs()))
            .fold(0.0f64, f64::max);
        if max_coord > 0.5 + 1e-6 {
            return Err(CompletionError::NotNormalized(max_coord));
        }
        let n = self.cfg.proxy_count;
        if partial.len() < n {
            return Err(CompletionError::CloudTooSmall { size: partial.len(), min: n });
        }
        let sampled = if partial.len() == n {
            partial.clone()
        } else {
            geom::fps_downsample(partial, n, 0)?
        };
        let mut pts = sampled.points;
        pts.sort_by(|a, b| {
            (a.x, a.y, a.z).partial_cmp(&(b.x, b.y, b.z)).expect("finite coordinates")
        });
        let sampled = PointCloud::new(pts);

        let features = self.extract_point_features(&sampled)?;
        let proxies = self.make_point_proxies(features, sampled.points.clone());
        let mut v = self.encode(&proxies);
        if let Some(fusion) = &self.fusion {
            let views = views.ok_or(CompletionError::MissingViews)?;
            let tokens = fusion.encode_images(views);
            v = fusion.fuse(&v, &tokens);
        }
        let queries = self.generate_queries(&v);
        let qfeat = self.decode(&queries, &v, &proxies.coords);
        let dense = self.folding_head(&qfeat, &queries.coarse);
        Ok(CompletionOutput { coarse: queries.coarse, dense })
    }
}

/// Dual-level Chamfer-L1 training loss: CD(dense, gt) plus CD(coarse,
/// FPS(gt, M)). Both terms differentiate through the prediction.
pub fn completion_loss(
    coarse: &Tensor,
    dense: &Tensor,
    gt: &PointCloud,
) -> Result<Tensor, CompletionError> {
    if gt.is_empty() {
        return Err(CompletionError::Geom(GeomError::EmptyCloud));
    }
    let m = coarse.rows();
    let gt_coarse = if gt.len() > m { geom::fps_downsample(gt, m, 0)? } else { gt.clone() };
    let gt_t = cloud_to_tensor(gt);
    let gt_coarse_t = cloud_to_tensor(&gt_coarse);
    Ok(add(&chamfer_l1_loss(dense, &gt_t), &chamfer_l1_loss(coarse, &gt_coarse_t)))
}
