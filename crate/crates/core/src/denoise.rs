//! Score-based point-cloud denoising: densely connected edge-convolution
//! features, a local score network over anchor-relative offsets, the
//! score-matching objective, and gradient-ascent refinement
//! `x <- x + alpha_t * score(x)`.
//!
//! The feature extractor consumes neighbor coordinate differences only, so
//! features are translation-invariant to machine precision. Inference
//! treats the trained network as a static field: features and anchor
//! positions come from the input cloud and stay fixed across iterations.
//! An analytic sphere score field serves as the verification oracle.

use crate::geom::{self, knn_lists, GeomError, Point3, PointCloud};
use crate::tensor::nn::{Mlp, ParamSet};
use crate::tensor::{concat_cols, gather_rows, mean_all, mul, scale, sub, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::rc::Rc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DenoiseError {
    #[error("cloud of {size} points is too small for a {k}-neighbor graph")]
    CloudTooSmall { size: usize, k: usize },
    #[error("invalid schedule: {0}")]
    BadSchedule(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Gradient-ascent schedule: `iterations` steps with step size
/// `alpha * decay^t` at step t (1-based).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct StepSchedule {
    pub iterations: usize,
    pub alpha: f64,
    pub decay: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule { iterations: 30, alpha: 0.2, decay: 0.95 }
    }
}

impl StepSchedule {
    pub fn validate(&self) -> Result<(), DenoiseError> {
        if self.iterations == 0 {
            return Err(DenoiseError::BadSchedule("iterations must be at least 1".into()));
        }
        if self.alpha <= 0.0 || self.decay <= 0.0 {
            return Err(DenoiseError::BadSchedule(format!(
                "step sizes must stay positive, got alpha {} decay {}",
                self.alpha, self.decay
            )));
        }
        Ok(())
    }

    /// Step size at 1-based iteration t.
    pub fn step_size(&self, t: usize) -> f64 {
        self.alpha * self.decay.powi(t as i32)
    }
}

/// Neighborhood used for score-matching samples and the inference
/// ensemble, plus the noise level for synthesizing training pairs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct NeighborhoodSpec {
    pub k_score: usize,
    pub sigma: f64,
}

impl Default for NeighborhoodSpec {
    fn default() -> Self {
        NeighborhoodSpec { k_score: 8, sigma: 0.02 }
    }
}

/// Per-point geometric features of a noisy cloud, row-aligned with it.
pub struct DenoiseFeatures {
    /// N x feat_dim.
    pub h: Tensor,
}

/// Architecture of the score network.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    /// kNN graph size inside the feature extractor.
    pub graph_k: usize,
    /// Width of each edge-convolution stage; features are the two stages
    /// concatenated (2x this).
    pub stage_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig { graph_k: 8, stage_dim: 32 }
    }
}

impl DenoiserConfig {
    pub fn feat_dim(&self) -> usize {
        2 * self.stage_dim
    }
}

/// Score network: feature extractor plus local score head.
pub struct ScoreNet {
    pub cfg: DenoiserConfig,
    pub params: ParamSet,
    stage1: Mlp,
    stage2: Mlp,
    head: Mlp,
}

impl ScoreNet {
    pub fn new(cfg: DenoiserConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let d = cfg.stage_dim;
        let stage1 = Mlp::new(&mut params, "dn.s1", &[3, d, d], &mut rng);
        let stage2 = Mlp::new(&mut params, "dn.s2", &[2 * d, d, d], &mut rng);
        let head = Mlp::new(&mut params, "dn.head", &[3 + cfg.feat_dim(), d, d, 3], &mut rng);
        ScoreNet { cfg, params, stage1, stage2, head }
    }

    /// Densely connected edge convolutions: stage one pools an MLP of
    /// neighbor differences, stage two rebuilds the graph in feature space;
    /// the output concatenates both stages.
    pub fn extract_denoise_features(&self, noisy: &PointCloud) -> Result<DenoiseFeatures, DenoiseError> {
        let n = noisy.len();
        let k = self.cfg.graph_k;
        if n <= k {
            return Err(DenoiseError::CloudTooSmall { size: n, k });
        }
        let nbr = geom::knn(noisy, k)?;
        let coords = crate::completion::cloud_to_tensor(noisy);
        let (mut idx_self, mut idx_nbr) = (Vec::with_capacity(n * k), Vec::with_capacity(n * k));
        for (i, list) in nbr.lists.iter().enumerate() {
            for &j in list {
                idx_self.push(i);
                idx_nbr.push(j);
            }
        }
        let idx_self = Rc::new(idx_self);
        let idx_nbr = Rc::new(idx_nbr);
        // stage one sees coordinate differences only
        let diffs = sub(&gather_rows(&coords, idx_nbr.clone()), &gather_rows(&coords, idx_self.clone()));
        let f1 = crate::tensor::group_max_rows(&self.stage1.forward(&diffs), k);

        // stage two: graph in feature space, concatenative skip
        let f1_vals = f1.values();
        let d = f1.cols();
        let lists2 = knn_lists(
            |i, j| {
                let (a, b) = (&f1_vals[i * d..(i + 1) * d], &f1_vals[j * d..(j + 1) * d]);
                a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
            },
            n,
            k,
        );
        let (mut is2, mut in2) = (Vec::with_capacity(n * k), Vec::with_capacity(n * k));
        for (i, list) in lists2.iter().enumerate() {
            for &j in list {
                is2.push(i);
                in2.push(j);
            }
        }
        let center = gather_rows(&f1, Rc::new(is2));
        let neighbor = gather_rows(&f1, Rc::new(in2));
        let e2 = concat_cols(&[&center, &sub(&neighbor, &center)]);
        let f2 = crate::tensor::group_max_rows(&self.stage2.forward(&e2), k);
        Ok(DenoiseFeatures { h: concat_cols(&[&f1, &f2]) })
    }

    /// Local score S_i(x) = head(concat(x - x_i, h_i)) through the graph.
    pub fn local_score(
        &self,
        x: &Point3,
        anchor_index: usize,
        features: &DenoiseFeatures,
        noisy: &PointCloud,
    ) -> Tensor {
        let anchor = noisy.points[anchor_index];
        let offset = Tensor::constant(1, 3, vec![x.x - anchor.x, x.y - anchor.y, x.z - anchor.z]);
        let h_i = gather_rows(&features.h, Rc::new(vec![anchor_index]));
        self.head.forward(&concat_cols(&[&offset, &h_i]))
    }

    /// Raw-slice version of [`ScoreNet::local_score`] for inference loops.
    pub fn local_score_raw(&self, x: &Point3, anchor: &Point3, h_row: &[f64]) -> [f64; 3] {
        let mut input = Vec::with_capacity(3 + h_row.len());
        input.extend_from_slice(&[x.x - anchor.x, x.y - anchor.y, x.z - anchor.z]);
        input.extend_from_slice(h_row);
        let out = self.head.eval_row(&input);
        [out[0], out[1], out[2]]
    }

    /// Score-matching objective, Eq of the per-anchor expectations: for each
    /// anchor the samples are its `k_score` nearest noisy neighbors plus the
    /// anchor itself, targets are vectors to the nearest clean point.
    pub fn denoise_loss(
        &self,
        noisy: &PointCloud,
        clean: &PointCloud,
        spec: &NeighborhoodSpec,
    ) -> Result<Tensor, DenoiseError> {
        if clean.is_empty() {
            return Err(DenoiseError::Geom(GeomError::EmptyCloud));
        }
        let n = noisy.len();
        let k = spec.k_score;
        if n <= k {
            return Err(DenoiseError::CloudTooSmall { size: n, k });
        }
        let features = self.extract_denoise_features(noisy)?;
        let nbr = geom::knn(noisy, k)?;

        // batch rows: anchor i with samples {i} + neighbors(i)
        let samples_per_anchor = k + 1;
        let mut offsets = Vec::with_capacity(n * samples_per_anchor * 3);
        let mut anchor_idx = Vec::with_capacity(n * samples_per_anchor);
        let mut targets = Vec::with_capacity(n * samples_per_anchor * 3);
        for i in 0..n {
            let anchor = noisy.points[i];
            let mut sample_ids = Vec::with_capacity(samples_per_anchor);
            sample_ids.push(i);
            sample_ids.extend_from_slice(&nbr.lists[i]);
            for &s in &sample_ids {
                let x = noisy.points[s];
                offsets.extend_from_slice(&[x.x - anchor.x, x.y - anchor.y, x.z - anchor.z]);
                anchor_idx.push(i);
                let gt = ground_truth_score(&x, clean)?;
                targets.extend_from_slice(&[gt.x, gt.y, gt.z]);
            }
        }
        let rows = n * samples_per_anchor;
        let offsets = Tensor::constant(rows, 3, offsets);
        let h_rows = gather_rows(&features.h, Rc::new(anchor_idx));
        let predicted = self.head.forward(&concat_cols(&[&offsets, &h_rows]));
        let diff = sub(&predicted, &Tensor::constant(rows, 3, targets));
        // mean over rows of the squared norm = 3 * mean over all entries
        Ok(scale(&mean_all(&mul(&diff, &diff)), 3.0))
    }

    /// Builds the static inference field: anchors and features frozen from
    /// the input cloud.
    pub fn field<'a>(
        &'a self,
        noisy: &PointCloud,
        spec: &NeighborhoodSpec,
    ) -> Result<LearnedScoreField<'a>, DenoiseError> {
        let features = self.extract_denoise_features(noisy)?;
        Ok(LearnedScoreField {
            net: self,
            anchors: noisy.points.clone(),
            h: features.h.values(),
            feat_dim: features.h.cols(),
            k_score: spec.k_score.min(noisy.len()),
        })
    }
}

/// Ground-truth score: vector from x to its nearest clean point
/// (lowest-index ties).
pub fn ground_truth_score(x: &Point3, clean: &PointCloud) -> Result<Point3, DenoiseError> {
    let j = geom::nearest_index(x, clean)?;
    Ok(clean.points[j].sub(x))
}

/// A queryable score field.
pub trait ScoreField {
    fn score(&self, x: &Point3) -> Point3;
}

/// Analytic oracle for a sphere surface: score(x) = (r - |x-c|) * unit(x-c),
/// zero at the center where the direction is undefined.
pub struct SphereOracle {
    pub center: Point3,
    pub radius: f64,
}

impl ScoreField for SphereOracle {
    fn score(&self, x: &Point3) -> Point3 {
        let d = x.sub(&self.center);
        let dist = d.norm();
        if dist == 0.0 {
            return Point3::ZERO;
        }
        d.scale((self.radius - dist) / dist)
    }
}

/// Trained network wrapped as a static score field: the ensemble score at x
/// averages the local scores of the `k_score` anchors nearest to x.
pub struct LearnedScoreField<'a> {
    net: &'a ScoreNet,
    anchors: Vec<Point3>,
    h: Vec<f64>,
    feat_dim: usize,
    k_score: usize,
}

impl LearnedScoreField<'_> {
    fn nearest_anchors(&self, x: &Point3) -> Vec<usize> {
        let mut ranked: Vec<(f64, usize)> =
            self.anchors.iter().enumerate().map(|(j, a)| (x.dist2(a), j)).collect();
        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        ranked.truncate(self.k_score);
        ranked.into_iter().map(|(_, j)| j).collect()
    }
}

impl ScoreField for LearnedScoreField<'_> {
    fn score(&self, x: &Point3) -> Point3 {
        let picks = self.nearest_anchors(x);
        let mut acc = [0.0f64; 3];
        for &j in &picks {
            let row = &self.h[j * self.feat_dim..(j + 1) * self.feat_dim];
            let s = self.net.local_score_raw(x, &self.anchors[j], row);
            acc[0] += s[0];
            acc[1] += s[1];
            acc[2] += s[2];
        }
        let inv = 1.0 / picks.len() as f64;
        Point3::new(acc[0] * inv, acc[1] * inv, acc[2] * inv)
    }
}

/// Ensemble score at x: mean local score over the `k_score` anchors
/// nearest to x. Graph-free convenience over the learned field.
pub fn ensemble_score(
    net: &ScoreNet,
    x: &Point3,
    noisy: &PointCloud,
    features: &DenoiseFeatures,
    k_score: usize,
) -> Point3 {
    let h = features.h.values();
    let feat_dim = features.h.cols();
    let field = LearnedScoreField {
        net,
        anchors: noisy.points.clone(),
        h,
        feat_dim,
        k_score: k_score.min(noisy.len()),
    };
    field.score(x)
}

/// Gradient-ascent refinement: x_i^(t) = x_i^(t-1) + alpha_t * score.
pub fn denoise(
    noisy: &PointCloud,
    schedule: &StepSchedule,
    field: &dyn ScoreField,
) -> Result<PointCloud, DenoiseError> {
    schedule.validate()?;
    let mut pts = noisy.points.clone();
    for t in 1..=schedule.iterations {
        let alpha = schedule.step_size(t);
        let updates: Vec<Point3> = pts.iter().map(|p| field.score(p)).collect();
        for (p, s) in pts.iter_mut().zip(updates.iter()) {
            *p = p.add(&s.scale(alpha));
        }
    }
    Ok(PointCloud { points: pts, norm: noisy.norm })
}
