//! Reference classifiers: sequential fine-tuning and joint training of one
//! softmax MLP on the same features.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{LabeledSet, TaskStream};
use crate::error::{Error, Result};
use crate::eval::{evaluate_scorer, EvalReport, Scorer};
use crate::learner::RunSeed;
use crate::losses::HyperParams;
use crate::numcore::{Activation, AdamConfig, AdamState, AffineLayer, Mlp, Tensor};

const BASELINE_STREAM: u64 = 1;

/// MLP with the encoder's hidden widths and one logit per known class.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxClassifier {
    net: Mlp,
    classes: Vec<u32>,
}

impl SoftmaxClassifier {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        classes: &[u32],
        rng: &mut R,
    ) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Config("classifier needs at least one class".into()));
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(classes.len());
        Ok(Self {
            net: Mlp::new(&dims, Activation::Identity, rng)?,
            classes: classes.to_vec(),
        })
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    /// Appends freshly initialized output rows for labels not seen before.
    pub fn add_classes<R: Rng + ?Sized>(&mut self, labels: &[u32], rng: &mut R) -> Result<()> {
        let new: Vec<u32> = labels
            .iter()
            .copied()
            .filter(|l| !self.classes.contains(l))
            .collect();
        if new.is_empty() {
            return Ok(());
        }
        let layers = self.net.layers().to_vec();
        let head = layers.last().expect("non-empty network");
        let fresh = AffineLayer::glorot(head.in_dim(), new.len(), rng);
        let mut weights = head.weights().to_vec();
        weights.extend_from_slice(fresh.weights());
        let mut bias = head.bias().to_vec();
        bias.extend_from_slice(fresh.bias());
        let grown =
            AffineLayer::from_parts(head.in_dim(), head.out_dim() + new.len(), weights, bias)?;
        let mut layers = layers;
        *layers.last_mut().expect("non-empty network") = grown;
        self.net = Mlp::from_layers(layers, self.net.activations().to_vec())?;
        self.classes.extend(new);
        Ok(())
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.net.forward(x)
    }

    /// Cross-entropy training on `set` for `hp.epochs` passes with a fresh optimizer.
    pub fn fit<R: Rng + ?Sized>(
        &mut self,
        set: &LabeledSet,
        hp: &HyperParams,
        rng: &mut R,
    ) -> Result<()> {
        let index: HashMap<u32, usize> = self
            .classes
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, i))
            .collect();
        let targets = set
            .labels()
            .iter()
            .map(|l| {
                index
                    .get(l)
                    .copied()
                    .ok_or_else(|| Error::Contract(format!("label {l} has no output unit")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut adam = AdamState::new(AdamConfig {
            learning_rate: hp.learning_rate,
            beta1: hp.beta1,
            beta2: hp.beta2,
            epsilon: hp.epsilon,
            weight_decay: hp.weight_decay,
        });
        let mut order: Vec<usize> = (0..set.len()).collect();
        for _ in 0..hp.epochs {
            order.shuffle(rng);
            for batch in order.chunks(hp.batch_size) {
                let x = set.features().select_rows(batch);
                let trace = self.net.forward_trace(&x)?;
                let mut grad = trace.output().clone();
                let k = grad.cols();
                let scale = 1.0 / batch.len() as f64;
                for (r, &i) in batch.iter().enumerate() {
                    let row = grad.row_mut(r);
                    softmax_in_place(row);
                    row[targets[i]] -= 1.0;
                    row.iter_mut().for_each(|g| *g *= scale);
                    debug_assert_eq!(row.len(), k);
                }
                self.net.zero_grad();
                self.net.backward(&trace, &grad)?;
                adam.step(&mut self.net.param_slots("classifier"))?;
            }
        }
        self.net.zero_grad();
        Ok(())
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    row.iter_mut().for_each(|v| *v /= z);
}

impl Scorer for SoftmaxClassifier {
    fn labels(&self) -> Vec<u32> {
        self.classes.clone()
    }

    /// Negated logits, so the argmin is the most probable class.
    fn score_matrix(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.logits(x)?.map(|v| -v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Finetune,
    Joint,
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Baseline::Finetune => "finetune",
            Baseline::Joint => "joint",
        })
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "finetune" => Ok(Baseline::Finetune),
            "joint" => Ok(Baseline::Joint),
            other => Err(Error::Config(format!(
                "unknown baseline {other:?}; expected finetune or joint"
            ))),
        }
    }
}

pub fn run_baseline(
    kind: Baseline,
    stream: &TaskStream,
    hp: &HyperParams,
    seed: u64,
) -> Result<EvalReport> {
    match kind {
        Baseline::Finetune => finetune_run(stream, hp, seed),
        Baseline::Joint => joint_run(stream, hp, seed),
    }
}

fn check_stream(stream: &TaskStream, hp: &HyperParams) -> Result<()> {
    if stream.num_tasks() == 0 || stream.train.iter().all(|t| t.is_empty()) {
        return Err(Error::Config("task stream is empty".into()));
    }
    hp.validate()
}

/// Trains one classifier task after task with cross-entropy only, growing the
/// output layer as classes arrive. Records the accuracy after every task.
pub fn finetune_run(stream: &TaskStream, hp: &HyperParams, seed: u64) -> Result<EvalReport> {
    check_stream(stream, hp)?;
    let mut rng = RunSeed(seed).aux_rng(BASELINE_STREAM);
    let mut clf: Option<SoftmaxClassifier> = None;
    let mut stages = Vec::with_capacity(stream.num_tasks());
    for task in &stream.train {
        let c = match clf.as_mut() {
            Some(c) => {
                c.add_classes(&task.label_set, &mut rng)?;
                c
            }
            None => clf.insert(SoftmaxClassifier::new(
                stream.dim(),
                &hp.hidden_widths,
                &task.label_set,
                &mut rng,
            )?),
        };
        c.fit(&task.samples, hp, &mut rng)?;
        stages.push(evaluate_scorer(&*c, stream, task.task_id)?.average_accuracy);
    }
    let clf = clf.expect("at least one task");
    let mut report = evaluate_scorer(&clf, stream, stream.num_tasks())?;
    report.per_stage_accuracy = stages;
    Ok(report)
}

/// Trains one classifier on the union of every task's training data.
pub fn joint_run(stream: &TaskStream, hp: &HyperParams, seed: u64) -> Result<EvalReport> {
    check_stream(stream, hp)?;
    let mut rng = RunSeed(seed).aux_rng(BASELINE_STREAM);
    let all = stream.all_train()?;
    let labels = stream.labels_upto(stream.num_tasks());
    let mut clf = SoftmaxClassifier::new(stream.dim(), &hp.hidden_widths, &labels, &mut rng)?;
    clf.fit(&all, hp, &mut rng)?;
    evaluate_scorer(&clf, stream, stream.num_tasks())
}
