//! Cross-modal fusion: the three grayscale views are embedded into tokens
//! by a jointly-trained patch embedder, and injected into the encoder
//! output by residual cross-attention
//! `F_fused = MultiHeadAttn(V, MLP(F_img), MLP(F_img)) + V`.
//! The key and value paths share one token MLP, and the patch embedding
//! carries no bias so all-zero images produce tokens that are exactly the
//! positional plus view embeddings.

use crate::render::ViewSet;
use crate::tensor::nn::{init_weight, Linear, Mlp, MultiHeadAttention, ParamSet};
use crate::tensor::{add, add_row, concat_rows, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Patch-embedder hyperparameters. The defaults follow the production
/// geometry (16px patches at 256x256 -> 768 tokens); the toy preset used by
/// the pipeline is 8px patches at 64x64 (192 tokens).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub patch: usize,
    pub img_dim: usize,
    pub image_resolution: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { patch: 16, img_dim: 32, image_resolution: 256 }
    }
}

impl FusionConfig {
    /// The toy preset: 64x64 views split into 8px patches.
    pub fn toy() -> Self {
        FusionConfig { patch: 8, img_dim: 32, image_resolution: 64 }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.patch == 0 || self.img_dim == 0 || self.image_resolution == 0 {
            return Err("fusion dims must be at least 1".to_string());
        }
        if self.image_resolution % self.patch != 0 {
            return Err(format!(
                "image resolution {} not divisible by patch size {}",
                self.image_resolution, self.patch
            ));
        }
        Ok(())
    }

    pub fn patches_per_view(&self) -> usize {
        let side = self.image_resolution / self.patch;
        side * side
    }

    /// Total token count: 3 views x patches per view.
    pub fn token_count(&self) -> usize {
        3 * self.patches_per_view()
    }
}

/// Image token matrix, 3 * patches_per_view rows by img_dim columns, view
/// blocks in +X, +Y, +Z order.
pub struct ImageTokens {
    pub tokens: Tensor,
}

pub struct FusionModule {
    pub cfg: FusionConfig,
    patch_embed: Linear,
    view_embed: Tensor,
    pos_embed: Tensor,
    token_mlp: Mlp,
    attn: MultiHeadAttention,
}

impl FusionModule {
    pub fn new(
        params: &mut ParamSet,
        cfg: FusionConfig,
        embed_dim: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let p2 = cfg.patch * cfg.patch;
        let patch_embed = Linear::new_no_bias(params, "fusion.patch_embed", p2, cfg.img_dim, rng);
        let view_embed = init_weight(params, "fusion.view_embed", 3, cfg.img_dim, cfg.img_dim, rng);
        let pos_embed = init_weight(
            params,
            "fusion.pos_embed",
            cfg.patches_per_view(),
            cfg.img_dim,
            cfg.img_dim,
            rng,
        );
        let token_mlp = Mlp::new(params, "fusion.token_mlp", &[cfg.img_dim, embed_dim, embed_dim], rng);
        let attn = MultiHeadAttention::new(params, "fusion.attn", embed_dim, heads, rng);
        FusionModule { cfg, patch_embed, view_embed, pos_embed, token_mlp, attn }
    }

    /// Splits each view into non-overlapping patches (row-major patch
    /// order, row-major pixels within a patch), embeds each patch linearly,
    /// and adds the learned positional and per-view embeddings.
    pub fn encode_images(&self, views: &ViewSet) -> ImageTokens {
        let p = self.cfg.patch;
        let res = self.cfg.image_resolution;
        for view in &views.views {
            assert_eq!(
                (view.width, view.height),
                (res, res),
                "view size {}x{} does not match configured resolution {}",
                view.width,
                view.height,
                res
            );
        }
        let side = res / p;
        let per_view = side * side;
        let mut blocks = Vec::with_capacity(3);
        for (vi, view) in views.views.iter().enumerate() {
            let mut patch_data = Vec::with_capacity(per_view * p * p);
            for pr in 0..side {
                for pc in 0..side {
                    for r in 0..p {
                        let row = pr * p + r;
                        let base = row * res + pc * p;
                        patch_data.extend_from_slice(&view.pixels[base..base + p]);
                    }
                }
            }
            let patches = Tensor::constant(per_view, p * p, patch_data);
            let embedded = self.patch_embed.forward(&patches);
            let with_pos = add(&embedded, &self.pos_embed);
            let view_row = crate::tensor::gather_rows(&self.view_embed, std::rc::Rc::new(vec![vi]));
            blocks.push(add_row(&with_pos, &view_row));
        }
        let refs: Vec<&Tensor> = blocks.iter().collect();
        ImageTokens { tokens: concat_rows(&refs) }
    }

    /// Residual cross-attention injection; the shared token MLP feeds both
    /// the key and the value path.
    pub fn fuse(&self, v: &Tensor, tokens: &ImageTokens) -> Tensor {
        let kv = self.token_mlp.forward(&tokens.tokens);
        add(&self.attn.forward(v, &kv, &kv, None), v)
    }
}
