use pointfill::completion::{completion_loss, tensor_to_cloud, CompletionModel, ModelConfig};
use pointfill::metrics::{chamfer, ChamferNorm};
use pointfill::synth::{generate_shape, ShapeFamily, ShapeSpec};
use pointfill::tensor::adam::{Adam, AdamConfig};
use pointfill::tensor::backward;

fn main() {
    let clean = generate_shape(&ShapeSpec { family: ShapeFamily::Sphere { radius: 1.0 }, count: 400, seed: 12 }).unwrap();
    let partial = pointfill::synth::ablate_fraction(&clean, pointfill::synth::AblationMode::SphereCut, 0.25, 3).unwrap();
    for lr in [2e-3, 5e-3, 1e-2] {
        let cfg = ModelConfig { proxy_count: 64, embed_dim: 32, heads: 4, encoder_layers: 2, decoder_layers: 2, query_count: 32, folding_grid: 4, knn_k: 8 };
        let model = CompletionModel::new(cfg, None, 99).unwrap();
        let mut adam = Adam::new(AdamConfig { lr, ..AdamConfig::default() });
        let dense_cd = |m: &CompletionModel| -> f64 {
            let out = m.complete(&partial, None).unwrap();
            chamfer(&tensor_to_cloud(&out.dense), &clean, ChamferNorm::L1).unwrap()
        };
        print!("lr={lr}: init {:.4}", dense_cd(&model));
        for step in 1..=1600 {
            model.params.zero_grads();
            let out = model.complete(&partial, None).unwrap();
            let loss = completion_loss(&out.coarse, &out.dense, &clean).unwrap();
            backward(&loss).unwrap();
            adam.step(&model.params).unwrap();
            if step % 400 == 0 { print!(" s{step}={:.4}", dense_cd(&model)); }
        }
        // split the residual: coarse fit vs dense fit
        let out = model.complete(&partial, None).unwrap();
        let coarse_cloud = tensor_to_cloud(&out.coarse);
        let gt_fps = pointfill::geom::fps_downsample(&clean, 32, 0).unwrap();
        let cd_coarse = chamfer(&coarse_cloud, &gt_fps, ChamferNorm::L1).unwrap();
        println!("  [coarse CD {:.4}]", cd_coarse);
    }
}
