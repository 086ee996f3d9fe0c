use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    argmax, batch_scores, bind, ModelCheckpoint, ModelConfig, ModelKind, TrainingMeta, VideoClassifier, VideoModel,
};
use crate::autodiff::Graph;
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig, Sgd};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd { momentum: f32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub optimizer: OptimizerKind,
    pub weight_decay: f32,
    pub seed: u64,
}

impl TrainConfig {
    /// Adam for the 3D net, SGD with momentum 0.2 for the ConvLSTM.
    pub fn default_for(kind: ModelKind) -> TrainConfig {
        match kind {
            ModelKind::Conv3d => TrainConfig {
                epochs: 12,
                batch_size: 16,
                lr: 3e-3,
                optimizer: OptimizerKind::Adam,
                weight_decay: 0.0,
                seed: 7,
            },
            ModelKind::Convlstm => TrainConfig {
                epochs: 12,
                batch_size: 16,
                lr: 0.05,
                optimizer: OptimizerKind::Sgd { momentum: 0.2 },
                weight_decay: 0.0,
                seed: 7,
            },
        }
    }
}

enum Stepper {
    Adam(Adam),
    Sgd(Sgd),
}

/// Fraction of `samples` whose argmax prediction equals the label.
pub fn evaluate_accuracy(model: &dyn VideoClassifier, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("accuracy of an empty split"));
    }
    let mut correct = 0;
    for chunk in samples.chunks(32) {
        let clips: Vec<Tensor> = chunk.iter().map(|s| s.clip.clone()).collect();
        for (scores, s) in batch_scores(model, &clips)?.iter().zip(chunk) {
            correct += (argmax(scores) == s.label) as usize;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Mini-batch training with softmax cross-entropy, seeded end to end.
pub fn train(config: &ModelConfig, dataset: &Dataset, hp: &TrainConfig) -> Result<ModelCheckpoint> {
    if dataset.num_classes() < 2 || dataset.train.is_empty() || dataset.val.is_empty() {
        return Err(Error::invalid("training needs >= 2 classes and non-empty train/val splits"));
    }
    let train_ids: std::collections::HashSet<&str> = dataset.train.iter().map(|s| s.id.as_str()).collect();
    if dataset.val.iter().any(|s| train_ids.contains(s.id.as_str())) {
        return Err(Error::invalid("train and val splits overlap"));
    }
    if hp.batch_size == 0 || !hp.lr.is_finite() || hp.lr < 0.0 {
        return Err(Error::invalid("batch size must be >= 1 and the learning rate finite and >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut model = VideoModel::init(config, &mut rng)?;
    if model.num_classes() != dataset.num_classes() {
        return Err(Error::invalid(format!(
            "model has {} classes, dataset {}",
            model.num_classes(),
            dataset.num_classes()
        )));
    }
    let names = model.trainable_names();
    let sizes: Vec<usize> = names.iter().map(|n| model.params()[n].len()).collect();
    let mut stepper = match hp.optimizer {
        OptimizerKind::Adam => Stepper::Adam(Adam::new(AdamConfig::with_lr(hp.lr), &sizes)),
        OptimizerKind::Sgd { momentum } => Stepper::Sgd(Sgd::new(hp.lr, momentum, hp.weight_decay, &sizes)),
    };
    let momentum = match &model {
        VideoModel::Convlstm(m) => m.config.bn_momentum,
        VideoModel::Conv3d(_) => 0.0,
    };

    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut epoch_loss = Vec::with_capacity(hp.epochs);
    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut total = 0f64;
        for (b, idx) in order.chunks(hp.batch_size).enumerate() {
            let clips: Vec<Tensor> = idx.iter().map(|&i| dataset.train[i].clip.clone()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| dataset.train[i].label).collect();
            let mut g = Graph::new();
            let x = g.constant(Tensor::stack(&clips)?)?;
            let bound = bind(&mut g, model.params(), |n| names.iter().any(|t| t == n))?;
            let diverged = |e: Error| match e {
                Error::NonFinite { .. } => Error::Diverged { epoch, batch: b, loss: f32::NAN },
                e => e,
            };
            let (out, stats) = model.forward_bound(&mut g, x, &bound, Some(&mut rng)).map_err(diverged)?;
            let loss = g.softmax_cross_entropy(out.logits, &labels).map_err(diverged)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss: value });
            }
            total += value as f64 * idx.len() as f64;
            let grads = g.backward(loss)?;
            if let Stepper::Adam(a) = &mut stepper {
                a.begin_step();
            }
            let params = model.params_mut();
            for (slot, name) in names.iter().enumerate() {
                let grad = grads.get(bound[name]).ok_or_else(|| Error::invalid(format!("no gradient for {name}")))?;
                let tensor = params.get_mut(name).unwrap();
                let mut data = tensor.to_vec();
                match &mut stepper {
                    Stepper::Adam(a) => a.update(slot, &mut data, grad.data()),
                    Stepper::Sgd(s) => s.update(slot, &mut data, grad.data()),
                }
                if data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Diverged { epoch, batch: b, loss: value });
                }
                *tensor = Tensor::new(tensor.shape().to_vec(), data)?;
            }
            for (prefix, s) in stats {
                blend(params.get_mut(&format!("{prefix}.running_mean")).unwrap(), &s.mean, momentum);
                blend(params.get_mut(&format!("{prefix}.running_var")).unwrap(), &s.var, momentum);
            }
        }
        epoch_loss.push(total / dataset.train.len() as f64);
    }
    let val_accuracy = evaluate_accuracy(&model, &dataset.val)?;
    let meta = TrainingMeta {
        epochs: hp.epochs,
        seed: hp.seed,
        val_accuracy,
        epoch_loss,
        train: hp.clone(),
        classes: dataset.classes.iter().map(|c| c.name().to_string()).collect(),
    };
    Ok(ModelCheckpoint { model, meta })
}

/// `running = momentum * running + (1 - momentum) * batch`
fn blend(running: &mut Tensor, batch: &[f32], momentum: f32) {
    let data: Vec<f32> = running.data().iter().zip(batch).map(|(&r, &b)| momentum * r + (1.0 - momentum) * b).collect();
    *running = Tensor::from_parts(running.shape().to_vec(), data);
}
