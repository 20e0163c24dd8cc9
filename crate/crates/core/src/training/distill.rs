use std::ops::Range;

use crate::error::Result;
use crate::models::{stack_rows, GeneratorArch, GeneratorModel};
use crate::rng::{derive_indexed, derive_seed, Rng};
use crate::synthdata::{render, BiasFeature, SceneParams, CENTER_RANGE, MIN_HUE_GAP, SIZE_RANGE};
use crate::tensor::{Graph, Tensor};
use crate::training::optim::param_nodes;
use crate::training::{LossKind, OptimizerKind, TrainConfig};

/// Latent dimensions driving each scene field.
pub const LATENT_BLOCK: usize = 3;

/// Scale making `sigmoid(k s)` of a standard normal `s` close to uniform.
const LOGISTIC_SCALE: f64 = 1.702;

const FIELD_ORDER: [BiasFeature; 5] = [
    BiasFeature::BackgroundHue,
    BiasFeature::ObjectHue,
    BiasFeature::CenterX,
    BiasFeature::CenterY,
    BiasFeature::Size,
];

/// Latent coordinates that control `feature` in a distilled generator.
pub fn latent_block(feature: BiasFeature) -> Range<usize> {
    let k = FIELD_ORDER.iter().position(|&f| f == feature).expect("every feature has a block");
    k * LATENT_BLOCK..(k + 1) * LATENT_BLOCK
}

fn block_unit(z: &[f64], feature: BiasFeature) -> f64 {
    let s: f64 = z[latent_block(feature)].iter().sum::<f64>() / (LATENT_BLOCK as f64).sqrt();
    1.0 / (1.0 + (-LOGISTIC_SCALE * s).exp())
}

/// Maps a latent vector to the scene it should render. The object hue block
/// sets the offset from the background hue so the hue gap always holds.
pub fn scene_from_latent(z: &[f64], class_id: usize) -> SceneParams {
    let lerp = |(lo, hi): (f64, f64), u: f64| lo + (hi - lo) * u;
    let background_hue = block_unit(z, BiasFeature::BackgroundHue).rem_euclid(1.0);
    let offset = MIN_HUE_GAP + (1.0 - 2.0 * MIN_HUE_GAP) * block_unit(z, BiasFeature::ObjectHue);
    SceneParams {
        class_id,
        background_hue,
        object_hue: (background_hue + offset).rem_euclid(1.0),
        cx: lerp(CENTER_RANGE, block_unit(z, BiasFeature::CenterX)),
        cy: lerp(CENTER_RANGE, block_unit(z, BiasFeature::CenterY)),
        size: lerp(SIZE_RANGE, block_unit(z, BiasFeature::Size)),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillConfig {
    pub arch: GeneratorArch,
    pub train: TrainConfig,
    /// Fresh `(z, y)` pairs drawn per epoch.
    pub samples_per_epoch: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            arch: GeneratorArch::default(),
            train: TrainConfig {
                learning_rate: 0.002,
                epochs: 40,
                loss: LossKind::MeanSquared,
                optimizer: OptimizerKind::Adam,
                ..TrainConfig::default()
            },
            samples_per_epoch: 2048,
        }
    }
}

fn sample_batch(rng: &mut Rng, arch: &GeneratorArch, m: usize) -> Result<(Tensor, Vec<usize>, Tensor)> {
    let mut zs = Vec::with_capacity(m * arch.latent_dim);
    let mut labels = Vec::with_capacity(m);
    let mut targets = Vec::with_capacity(m);
    for _ in 0..m {
        let z: Vec<f64> = (0..arch.latent_dim).map(|_| rng.normal()).collect();
        let y = rng.below(arch.classes);
        targets.push(render(&scene_from_latent(&z, y))?);
        zs.extend(z);
        labels.push(y);
    }
    Ok((Tensor::new(vec![m, arch.latent_dim], zs)?, labels, stack_rows(&targets)?))
}

/// Trains the default-architecture generator to reproduce the renderer.
pub fn train_generator_distilled(cfg: &TrainConfig) -> Result<GeneratorModel> {
    train_generator_distilled_with(&DistillConfig {
        train: *cfg,
        ..DistillConfig::default()
    })
}

/// Regresses `g(z, y)` onto `render(scene_from_latent(z, y))` under
/// mean-squared error, drawing fresh pairs for every minibatch.
pub fn train_generator_distilled_with(cfg: &DistillConfig) -> Result<GeneratorModel> {
    cfg.train.validate()?;
    cfg.arch.validate()?;
    if cfg.arch.latent_dim < FIELD_ORDER.len() * LATENT_BLOCK {
        return Err(crate::Error::InvalidConfig(format!(
            "distillation needs a latent of at least {} dimensions",
            FIELD_ORDER.len() * LATENT_BLOCK
        )));
    }
    let seed = derive_seed(cfg.train.seed, "distill");
    let mut g = GeneratorModel::new(cfg.arch.clone(), &mut Rng::derive(seed, "init"))?;
    let mut opt = cfg.train.optimizer_for(g.layers());
    let batch = cfg.train.batch_size;
    let steps = cfg.samples_per_epoch.div_ceil(batch);
    for epoch in 0..cfg.train.epochs {
        let mut rng = Rng::new(derive_indexed(seed, "epoch", epoch as u64));
        for _ in 0..steps {
            let (z, labels, target) = sample_batch(&mut rng, &cfg.arch, batch)?;
            let mut graph = Graph::new();
            let zn = graph.constant(z);
            let nodes = g.build(&mut graph, zn, &labels, &[], true)?;
            let t = graph.constant(target);
            let diff = graph.sub(nodes.image, t)?;
            let sq = graph.mul(diff, diff)?;
            let loss = graph.mean(sq)?;
            let grads = graph.backward(loss, &param_nodes(&nodes.params))?;
            opt.step(g.layers_mut(), &grads)?;
        }
    }
    Ok(g)
}

/// Per-pixel-channel MSE between the generator and the renderer on `n`
/// fresh pairs.
pub fn distillation_mse(g: &GeneratorModel, n: usize, seed: u64) -> Result<f64> {
    let mut rng = Rng::derive(seed, "distill-eval");
    let (z, labels, target) = sample_batch(&mut rng, g.arch(), n)?;
    let mut graph = Graph::new();
    let zn = graph.constant(z);
    let nodes = g.build(&mut graph, zn, &labels, &[], false)?;
    let out = graph.value(nodes.image)?;
    let sse: f64 = out.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sse / out.len() as f64)
}
