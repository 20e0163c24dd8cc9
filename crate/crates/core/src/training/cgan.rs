use crate::error::{Error, Result};
use crate::models::{
    ClassifierModel, DiscriminatorArch, DiscriminatorModel, GeneratorArch, GeneratorModel,
};
use crate::rng::{derive_indexed, derive_seed, Rng};
use crate::synthdata::LabeledDataset;
use crate::tensor::{Graph, NodeId, Tensor};
use crate::training::classifier::{dataset_matrix, gather_rows, train_classifier};
use crate::training::optim::{param_nodes, Optimizer};
use crate::training::{OptimizerKind, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct CganConfig {
    pub generator: GeneratorArch,
    pub discriminator: DiscriminatorArch,
    pub train: TrainConfig,
    /// Weight of the label log-likelihood term in the generator loss.
    pub aux_weight: f64,
    /// Training of the auxiliary classifier that scores that term.
    pub aux_classifier: TrainConfig,
    /// Discriminator-only minibatches before alternating updates start.
    pub warmup_steps: usize,
}

impl Default for CganConfig {
    fn default() -> Self {
        CganConfig {
            generator: GeneratorArch::default(),
            discriminator: DiscriminatorArch::default(),
            train: TrainConfig {
                learning_rate: 2e-4,
                epochs: 20,
                optimizer: OptimizerKind::Adam,
                ..TrainConfig::default()
            },
            aux_weight: 1.0,
            aux_classifier: TrainConfig {
                epochs: 10,
                ..TrainConfig::default()
            },
            warmup_steps: 0,
        }
    }
}

/// Mean per-epoch losses of the alternating phase.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CganHistory {
    pub generator_loss: Vec<f64>,
    pub discriminator_loss: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct CganRun {
    pub generator: GeneratorModel,
    pub discriminator: DiscriminatorModel,
    pub history: CganHistory,
}

fn latent_batch(rng: &mut Rng, m: usize, dim: usize) -> Result<Tensor> {
    Tensor::new(vec![m, dim], (0..m * dim).map(|_| rng.normal()).collect())
}

fn fake_images(g: &GeneratorModel, z: Tensor, labels: &[usize]) -> Result<Tensor> {
    let mut graph = Graph::new();
    let zn = graph.constant(z);
    let nodes = g.build(&mut graph, zn, labels, &[], false)?;
    Ok(graph.value(nodes.image)?.clone())
}

fn mean_softplus(g: &mut Graph, x: NodeId, sign: f64) -> Result<NodeId> {
    let s = g.scale(x, sign)?;
    let sp = g.softplus(s)?;
    g.mean(sp)
}

/// One discriminator update on `real` against `fake`; returns the loss.
fn discriminator_step(
    d: &mut DiscriminatorModel,
    opt: &mut Optimizer,
    real: &Tensor,
    fake: &Tensor,
    labels: &[usize],
) -> Result<f64> {
    let mut graph = Graph::new();
    let bn = graph.constant(stack_pair(real, fake)?);
    let mut both_labels = labels.to_vec();
    both_labels.extend_from_slice(labels);
    let (score, bound) = d.build(&mut graph, bn, &both_labels, true)?;
    let m = labels.len();
    let sign = Tensor::new(
        vec![2 * m, 1],
        (0..2 * m).map(|i| if i < m { -1.0 } else { 1.0 }).collect(),
    )?;
    let sn = graph.constant(sign);
    let signed = graph.mul(score, sn)?;
    let sp = graph.softplus(signed)?;
    let mean = graph.mean(sp)?;
    // Mean over 2m rows equals half the sum of the two per-set means.
    let loss = graph.scale(mean, 2.0)?;
    let value = graph.value(loss)?.item();
    if !value.is_finite() {
        return Err(Error::NonFinite("discriminator loss"));
    }
    let grads = graph.backward(loss, &param_nodes(&bound))?;
    opt.step(d.layers_mut(), &grads)?;
    Ok(value)
}

fn stack_pair(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::new(vec![a.rows() + b.rows(), a.cols()], data)
}

fn check_data(data: &LabeledDataset, classes: usize) -> Result<(Tensor, Vec<usize>)> {
    let (x, labels) = dataset_matrix(data)?;
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::IndexOutOfRange {
            op: "cgan label",
            index: l,
            len: classes,
        });
    }
    Ok((x, labels))
}

/// Discriminator-only training against a fixed generator for `steps`
/// minibatches.
pub fn warm_up_discriminator(
    d: &mut DiscriminatorModel,
    g: &GeneratorModel,
    data: &LabeledDataset,
    steps: usize,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let (x, labels) = check_data(data, d.arch().classes.min(g.classes()))?;
    let mut opt = cfg.optimizer_for(d.layers());
    let seed = derive_seed(cfg.seed, "warmup");
    let mut rng = Rng::derive(seed, "latent");
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut losses = Vec::with_capacity(steps);
    let mut pass = 0u64;
    let mut chunks: Vec<Vec<usize>> = Vec::new();
    for _ in 0..steps {
        if chunks.is_empty() {
            Rng::new(derive_indexed(seed, "pass", pass)).shuffle(&mut order);
            pass += 1;
            chunks = order.chunks(cfg.batch_size).rev().map(<[usize]>::to_vec).collect();
        }
        let chunk = chunks.pop().expect("nonempty");
        let real = gather_rows(&x, &chunk)?;
        let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        let fake = fake_images(g, latent_batch(&mut rng, chunk.len(), g.latent_dim())?, &batch_labels)?;
        losses.push(discriminator_step(d, &mut opt, &real, &fake, &batch_labels)?);
    }
    Ok(losses)
}

/// Real-vs-generated accuracy of `d` over `data` and as many generated
/// images with the same labels. Positive scores mean "real".
pub fn discriminator_accuracy(
    d: &DiscriminatorModel,
    g: &GeneratorModel,
    data: &LabeledDataset,
    seed: u64,
) -> Result<f64> {
    let (x, labels) = check_data(data, d.arch().classes.min(g.classes()))?;
    let mut rng = Rng::derive(seed, "disc-eval");
    let fake = fake_images(g, latent_batch(&mut rng, labels.len(), g.latent_dim())?, &labels)?;
    let score = |images: Tensor| -> Result<Vec<f64>> {
        let mut graph = Graph::new();
        let n = graph.constant(images);
        let (s, _) = d.build(&mut graph, n, &labels, false)?;
        Ok(graph.value(s)?.data().to_vec())
    };
    let correct = score(x)?.iter().filter(|&&s| s > 0.0).count()
        + score(fake)?.iter().filter(|&&s| s < 0.0).count();
    Ok(correct as f64 / (2 * labels.len()) as f64)
}

/// Alternating conditional GAN training with the non-saturating generator
/// loss plus `aux_weight` times the cross-entropy of an auxiliary classifier
/// (trained on `data` first) on the generated images.
pub fn train_generator_cgan(data: &LabeledDataset, cfg: &CganConfig) -> Result<CganRun> {
    cfg.train.validate()?;
    cfg.generator.validate()?;
    if cfg.generator.classes != cfg.discriminator.classes {
        return Err(Error::InvalidConfig(
            "generator and discriminator class counts differ".into(),
        ));
    }
    if cfg.generator.image_shape != cfg.discriminator.image_shape {
        return Err(Error::InvalidConfig(
            "generator and discriminator image shapes differ".into(),
        ));
    }
    let classes = cfg.generator.classes;
    let (x, labels) = check_data(data, classes)?;
    let seed = derive_seed(cfg.train.seed, "cgan");
    let mut g = GeneratorModel::new(cfg.generator.clone(), &mut Rng::derive(seed, "generator"))?;
    let mut d = DiscriminatorModel::new(cfg.discriminator.clone(), &mut Rng::derive(seed, "discriminator"))?;
    let aux: Option<ClassifierModel> = if cfg.aux_weight > 0.0 {
        Some(train_classifier(data, &cfg.aux_classifier)?)
    } else {
        None
    };
    if let Some(a) = &aux {
        if a.classes() != classes {
            return Err(Error::InvalidConfig(format!(
                "dataset implies {} classes, generator has {classes}",
                a.classes()
            )));
        }
    }
    if cfg.warmup_steps > 0 {
        warm_up_discriminator(&mut d, &g, data, cfg.warmup_steps, &cfg.train)?;
    }
    let mut g_opt = cfg.train.optimizer_for(g.layers());
    let mut d_opt = cfg.train.optimizer_for(d.layers());
    let mut history = CganHistory::default();
    let mut order: Vec<usize> = (0..labels.len()).collect();
    for epoch in 0..cfg.train.epochs {
        let mut rng = Rng::new(derive_indexed(seed, "epoch", epoch as u64));
        rng.shuffle(&mut order);
        let (mut g_sum, mut d_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.train.batch_size) {
            let real = gather_rows(&x, chunk)?;
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let m = chunk.len();
            let fake = fake_images(&g, latent_batch(&mut rng, m, g.latent_dim())?, &batch_labels)?;
            d_sum += discriminator_step(&mut d, &mut d_opt, &real, &fake, &batch_labels)?;

            let mut graph = Graph::new();
            let zn = graph.constant(latent_batch(&mut rng, m, g.latent_dim())?);
            let nodes = g.build(&mut graph, zn, &batch_labels, &[], true)?;
            let (score, _) = d.build(&mut graph, nodes.image, &batch_labels, false)?;
            let mut loss = mean_softplus(&mut graph, score, -1.0)?;
            if let Some(a) = &aux {
                let (logits, _) = a.build_logits(&mut graph, nodes.image, false)?;
                let ce = graph.softmax_cross_entropy(logits, &batch_labels)?;
                let weighted = graph.scale(ce, cfg.aux_weight)?;
                loss = graph.add(loss, weighted)?;
            }
            let value = graph.value(loss)?.item();
            if !value.is_finite() {
                return Err(Error::NonFinite("generator loss"));
            }
            let grads = graph.backward(loss, &param_nodes(&nodes.params))?;
            g_opt.step(g.layers_mut(), &grads)?;
            g_sum += value;
            batches += 1;
        }
        history.generator_loss.push(g_sum / batches as f64);
        history.discriminator_loss.push(d_sum / batches as f64);
    }
    Ok(CganRun {
        generator: g,
        discriminator: d,
        history,
    })
}
