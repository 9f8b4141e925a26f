//! Incremental orchestration: one VAE per new class, trained against the frozen pool.
//!
//! For a new class `i` in task `t` the batch objective is
//!
//! ```text
//! L = intra(pos) + lambda1 * cc(pos, old pool) + lambda2 * inter(neg) + KL(pos)
//! neg = {task samples with label != i} U {decoder(z) of classes from tasks < t}
//! ```
//!
//! and prediction is the argmin of the per-class anomaly scores.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::losses::{self, HyperParams, LossBreakdown};
use crate::numcore::{AdamConfig, AdamState, Tensor};
use crate::vae::{kl_per_row, ClassVae, VaeTrace};

/// Rows scored per forward pass during evaluation.
pub(crate) const SCORE_CHUNK: usize = 512;

/// Total-loss level treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e9;

/// Root of all randomness in one run; every class gets its own independent stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeed(pub u64);

impl RunSeed {
    /// Stream for class `label`; unaffected by the order in which classes are trained.
    pub fn class_rng(self, label: u32) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(u64::from(label) + 1);
        rng
    }

    /// Stream reserved for run-level purposes such as baseline shuffling.
    pub fn aux_rng(self, purpose: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(u64::MAX - purpose);
        rng
    }
}

/// A frozen class VAE together with the task that introduced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledVae {
    pub vae: ClassVae,
    /// 1-based task index.
    pub task: usize,
}

/// Negative samples for one class: real same-task negatives plus pseudo samples.
#[derive(Debug, Clone)]
pub struct NegativeSet {
    pub real_negatives: Tensor,
    /// `(source class, generated batch)` for every class of a strictly earlier task.
    pub pseudo_negatives: Vec<(u32, Tensor)>,
}

impl NegativeSet {
    pub fn pseudo_count(&self) -> usize {
        self.pseudo_negatives.iter().map(|(_, t)| t.rows()).sum()
    }

    pub fn len(&self) -> usize {
        self.real_negatives.rows() + self.pseudo_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All negatives stacked into one matrix, real first.
    pub fn stacked(&self) -> Result<Tensor> {
        let mut acc = self.real_negatives.clone();
        for (_, batch) in &self.pseudo_negatives {
            acc = acc.concat_rows(batch)?;
        }
        Ok(acc)
    }
}

/// Mean loss terms over the batches of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean: LossBreakdown,
    pub pseudo_negatives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassLog {
    pub label: u32,
    pub positives: usize,
    pub real_negatives: usize,
    pub predecessors: usize,
    pub epochs: Vec<EpochLog>,
}

/// The whole incremental model.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    hp: HyperParams,
    vaes: Vec<PooledVae>,
    tasks_seen: usize,
    input_dim: Option<usize>,
}

impl LearnerState {
    pub fn new(hp: HyperParams) -> Result<Self> {
        hp.validate()?;
        Ok(Self {
            hp,
            vaes: Vec::new(),
            tasks_seen: 0,
            input_dim: None,
        })
    }

    /// Rebuilds a state from stored parts, checking the pool invariants.
    pub fn from_parts(hp: HyperParams, vaes: Vec<PooledVae>, tasks_seen: usize) -> Result<Self> {
        hp.validate()?;
        let mut seen = std::collections::BTreeSet::new();
        let mut last_task = 0;
        for p in &vaes {
            if !p.vae.is_frozen() {
                return Err(Error::State(format!(
                    "class {} is not frozen",
                    p.vae.label()
                )));
            }
            if !seen.insert(p.vae.label()) {
                return Err(Error::State(format!("duplicate class {}", p.vae.label())));
            }
            if p.task < last_task || p.task == 0 || p.task > tasks_seen {
                return Err(Error::State(format!(
                    "class {} has task index {} out of order",
                    p.vae.label(),
                    p.task
                )));
            }
            last_task = p.task;
        }
        let input_dim = vaes.first().map(|p| p.vae.input_dim());
        if vaes.iter().any(|p| Some(p.vae.input_dim()) != input_dim) {
            return Err(Error::State(
                "pooled VAEs disagree on input dimension".into(),
            ));
        }
        Ok(Self {
            hp,
            vaes,
            tasks_seen,
            input_dim,
        })
    }

    pub fn hyper_params(&self) -> &HyperParams {
        &self.hp
    }

    pub fn vaes(&self) -> &[PooledVae] {
        &self.vaes
    }

    pub fn tasks_seen(&self) -> usize {
        self.tasks_seen
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.input_dim
    }

    /// Class labels in global training order.
    pub fn class_order(&self) -> Vec<u32> {
        self.vaes.iter().map(|p| p.vae.label()).collect()
    }

    pub fn vae(&self, label: u32) -> Option<&ClassVae> {
        self.vaes
            .iter()
            .map(|p| &p.vae)
            .find(|v| v.label() == label)
    }

    /// The pool as it stood after task `upto` (VAEs are never modified after freezing).
    pub fn view_upto(&self, upto: usize) -> PoolView<'_> {
        let n = self.vaes.iter().take_while(|p| p.task <= upto).count();
        PoolView {
            vaes: &self.vaes[..n],
        }
    }

    pub fn view(&self) -> PoolView<'_> {
        PoolView { vaes: &self.vaes }
    }

    /// Pseudo negatives for a class of task `task_id`: `pseudo_per_old_class` fresh
    /// decoder samples from every class introduced by a strictly earlier task.
    pub fn pseudo_negatives<R: Rng + ?Sized>(
        &self,
        task_id: usize,
        rng: &mut R,
    ) -> Result<Vec<(u32, Tensor)>> {
        let count = self.hp.pseudo_per_old_class;
        self.vaes
            .iter()
            .filter(|p| p.task < task_id)
            .map(|p| Ok((p.vae.label(), p.vae.generate_pseudo(count, rng)?)))
            .collect()
    }

    /// Negative set for `label` within `task`.
    pub fn assemble_negatives<R: Rng + ?Sized>(
        &self,
        task: &TaskDataset,
        label: u32,
        rng: &mut R,
    ) -> Result<NegativeSet> {
        Ok(NegativeSet {
            real_negatives: real_negatives(task, label),
            pseudo_negatives: self.pseudo_negatives(task.task_id, rng)?,
        })
    }

    fn validate_task(&self, task: &TaskDataset) -> Result<()> {
        if task.is_empty() || task.label_set.is_empty() {
            return Err(Error::Data(format!("task {} has no samples", task.task_id)));
        }
        if let Some(dim) = self.input_dim {
            if task.samples.dim() != dim {
                return Err(Error::dims("learn_task", &[dim], &[task.samples.dim()]));
            }
        }
        for &label in &task.label_set {
            if self.vae(label).is_some() {
                return Err(Error::TaskStream(format!(
                    "class {label} of task {} was already learned",
                    task.task_id
                )));
            }
            if !task.samples.labels().contains(&label) {
                return Err(Error::Data(format!(
                    "class {label} of task {} has no samples",
                    task.task_id
                )));
            }
        }
        if let Some(stray) = task
            .samples
            .labels()
            .iter()
            .find(|l| !task.label_set.contains(l))
        {
            return Err(Error::Data(format!(
                "sample labeled {stray} is outside the label set of task {}",
                task.task_id
            )));
        }
        Ok(())
    }

    /// Learns one task: trains and freezes a VAE per class, in ascending label order.
    ///
    /// The state is only modified if every class trains successfully.
    pub fn learn_task(&mut self, task: &TaskDataset, seed: RunSeed) -> Result<Vec<ClassLog>> {
        self.validate_task(task)?;
        let task_id = self.tasks_seen + 1;
        let task = TaskDataset {
            task_id,
            ..task.clone()
        };
        let mut labels = task.label_set.clone();
        labels.sort_unstable();

        let mut staged = self.clone();
        staged.input_dim = Some(task.samples.dim());
        let mut logs = Vec::with_capacity(labels.len());
        for label in labels {
            let mut rng = seed.class_rng(label);
            let positives = task.samples.features_of(label);
            let negatives = real_negatives(&task, label);
            let (vae, log) =
                staged.train_class_vae(label, task_id, &positives, &negatives, &mut rng)?;
            staged.vaes.push(PooledVae { vae, task: task_id });
            logs.push(log);
        }
        staged.tasks_seen = task_id;
        *self = staged;
        Ok(logs)
    }

    /// Trains a fresh VAE for `label` against the current pool and returns it frozen.
    ///
    /// Predecessor scores for the classifier-contrastive term are computed once,
    /// in eval-mean mode, since frozen VAEs cannot change.
    pub fn train_class_vae<R: Rng + ?Sized>(
        &self,
        label: u32,
        task_id: usize,
        positives: &Tensor,
        real_negatives: &Tensor,
        rng: &mut R,
    ) -> Result<(ClassVae, ClassLog)> {
        let hp = &self.hp;
        let n_pos = positives.rows();
        if n_pos == 0 {
            return Err(Error::Data(format!(
                "class {label} has no positive samples"
            )));
        }
        let dim = positives.cols();
        let mut vae = ClassVae::new(
            label,
            dim,
            &hp.hidden_widths,
            hp.latent_dim,
            hp.decoder_output,
            rng,
        )?;
        let mut adam = AdamState::new(AdamConfig {
            learning_rate: hp.learning_rate,
            beta1: hp.beta1,
            beta2: hp.beta2,
            epsilon: hp.epsilon,
            weight_decay: hp.weight_decay,
        });

        let old_scores = self.view().score_matrix(positives)?;
        let n_batches = n_pos.div_ceil(hp.batch_size);
        let mut log = ClassLog {
            label,
            positives: n_pos,
            real_negatives: real_negatives.rows(),
            predecessors: self.vaes.len(),
            epochs: Vec::with_capacity(hp.epochs),
        };
        let mut last_finite: Option<LossBreakdown> = None;
        let mut step = 0usize;

        for epoch in 0..hp.epochs {
            let pseudo = self.pseudo_negatives(task_id, rng)?;
            let pseudo_count: usize = pseudo.iter().map(|(_, t)| t.rows()).sum();
            let mut negatives = real_negatives.clone();
            for (_, batch) in &pseudo {
                negatives = negatives.concat_rows(batch)?;
            }
            let n_neg = if negatives.numel() == 0 {
                0
            } else {
                negatives.rows()
            };

            let mut pos_order: Vec<usize> = (0..n_pos).collect();
            pos_order.shuffle(rng);
            let mut neg_order: Vec<usize> = (0..n_neg).collect();
            neg_order.shuffle(rng);

            let mut sum = LossBreakdown::default();
            for b in 0..n_batches {
                let pos_idx = &pos_order[b * hp.batch_size..((b + 1) * hp.batch_size).min(n_pos)];
                // Spread the negatives evenly so one epoch visits each exactly once.
                let neg_idx = &neg_order[b * n_neg / n_batches..(b + 1) * n_neg / n_batches];
                let bp = pos_idx.len();

                let mut x = positives.select_rows(pos_idx);
                if !neg_idx.is_empty() {
                    x = x.concat_rows(&negatives.select_rows(neg_idx))?;
                }
                let old = old_scores.select_rows(pos_idx);

                let trace = vae.forward_train(&x, rng)?;
                let breakdown = match batch_objective(&mut vae, &trace, bp, &old, hp) {
                    Ok(l) if l.total.is_finite() && l.total <= DIVERGENCE_LIMIT => Some(l),
                    Ok(_) | Err(Error::NonFinite(_)) => None,
                    Err(e) => return Err(e),
                };
                let Some(breakdown) = breakdown else {
                    return Err(Error::Divergence {
                        epoch,
                        step,
                        last_finite: last_finite.map(Box::new),
                    });
                };
                last_finite = Some(breakdown);
                accumulate(&mut sum, &breakdown);

                let step_result = adam.step(&mut vae.param_slots()?);
                if let Err(Error::NonFinite(_)) = step_result {
                    return Err(Error::Divergence {
                        epoch,
                        step,
                        last_finite: last_finite.map(Box::new),
                    });
                }
                step_result?;
                step += 1;
            }
            let k = n_batches as f64;
            log.epochs.push(EpochLog {
                epoch,
                mean: LossBreakdown {
                    intra: sum.intra / k,
                    cc: sum.cc / k,
                    inter: sum.inter / k,
                    kl: sum.kl / k,
                    total: sum.total / k,
                },
                pseudo_negatives: pseudo_count,
            });
        }
        vae.zero_grad();
        vae.freeze();
        Ok((vae, log))
    }

    /// Scores of `x` under every pooled VAE, `(rows, pool size)`, in training order.
    pub fn score_matrix(&self, x: &Tensor) -> Result<Tensor> {
        self.view().score_matrix(x)
    }

    /// Predicted label and the per-class scores for one feature vector.
    pub fn predict(&self, x: &[f64]) -> Result<(u32, Vec<f64>)> {
        let t = Tensor::matrix(1, x.len(), x.to_vec())?;
        let scores = self.score_matrix(&t)?;
        let labels = self.class_order();
        let k = argmin(scores.row(0)).ok_or_else(empty_pool)?;
        Ok((labels[k], scores.row(0).to_vec()))
    }

    /// Predicted labels for each row of `x`.
    pub fn predict_batch(&self, x: &Tensor) -> Result<Vec<u32>> {
        self.view().predict_batch(x)
    }
}

/// Loss of one training batch whose first `n_pos` rows are positives, with the
/// gradient of the total written into `vae`'s (zeroed) gradient buffers.
/// `old_scores` holds predecessor scores of the positives, one column per predecessor.
pub fn batch_objective(
    vae: &mut ClassVae,
    trace: &VaeTrace,
    n_pos: usize,
    old_scores: &Tensor,
    hp: &HyperParams,
) -> Result<LossBreakdown> {
    let rows = trace.scores.len();
    if n_pos == 0 || n_pos > rows {
        return Err(Error::Contract(format!(
            "{n_pos} positives in a batch of {rows}"
        )));
    }
    let (s_pos, s_neg) = trace.scores.split_at(n_pos);
    let pos: Vec<usize> = (0..n_pos).collect();
    let kl_rows = kl_per_row(
        &trace.draw.mean.select_rows(&pos),
        &trace.draw.log_variance.select_rows(&pos),
    );
    let kl = kl_rows.iter().sum::<f64>() / n_pos as f64;
    let breakdown = losses::total_loss(
        losses::intra_loss(s_pos, hp.r_intra)?,
        losses::cc_loss(s_pos, old_scores)?,
        losses::inter_loss(s_neg, hp.r_inter),
        kl,
        hp,
    )?;

    let intra_g = losses::intra_grad(s_pos, hp.r_intra);
    let cc_g = losses::cc_grad(s_pos, old_scores)?;
    let inter_g = losses::inter_grad(s_neg, hp.r_inter);
    let mut score_grad = Vec::with_capacity(rows);
    score_grad.extend(intra_g.iter().zip(&cc_g).map(|(a, c)| a + hp.lambda1 * c));
    score_grad.extend(inter_g.iter().map(|g| hp.lambda2 * g));
    let mut kl_weight = vec![1.0 / n_pos as f64; n_pos];
    kl_weight.resize(rows, 0.0);

    vae.zero_grad();
    vae.backward(trace, &score_grad, &kl_weight)?;
    Ok(breakdown)
}

fn empty_pool() -> Error {
    Error::State("prediction requested from an empty pool".into())
}

fn accumulate(sum: &mut LossBreakdown, l: &LossBreakdown) {
    sum.intra += l.intra;
    sum.cc += l.cc;
    sum.inter += l.inter;
    sum.kl += l.kl;
    sum.total += l.total;
}

/// Task samples whose label differs from `label`.
pub fn real_negatives(task: &TaskDataset, label: u32) -> Tensor {
    let idx: Vec<usize> = (0..task.samples.len())
        .filter(|&i| task.samples.labels()[i] != label)
        .collect();
    task.samples.features().select_rows(&idx)
}

/// Index of the smallest value; the earliest index wins ties.
pub fn argmin(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, &s) in scores.iter().enumerate() {
        match best {
            Some((_, b)) if s >= b => {}
            _ => best = Some((k, s)),
        }
    }
    best.map(|(k, _)| k)
}

/// A borrowed prefix of the pool, usable as a classifier.
#[derive(Debug, Clone, Copy)]
pub struct PoolView<'a> {
    vaes: &'a [PooledVae],
}

impl<'a> PoolView<'a> {
    pub fn vaes(&self) -> &'a [PooledVae] {
        self.vaes
    }

    pub fn labels(&self) -> Vec<u32> {
        self.vaes.iter().map(|p| p.vae.label()).collect()
    }

    pub fn score_matrix(&self, x: &Tensor) -> Result<Tensor> {
        let n = if x.numel() == 0 { 0 } else { x.rows() };
        let k = self.vaes.len();
        let mut out = vec![0.0; n * k];
        let mut start = 0;
        while start < n {
            let end = (start + SCORE_CHUNK).min(n);
            let chunk = x.select_rows(&(start..end).collect::<Vec<_>>());
            for (j, p) in self.vaes.iter().enumerate() {
                for (r, s) in p.vae.eval_scores(&chunk)?.into_iter().enumerate() {
                    out[(start + r) * k + j] = s;
                }
            }
            start = end;
        }
        Tensor::matrix(n, k, out)
    }

    pub fn predict_batch(&self, x: &Tensor) -> Result<Vec<u32>> {
        if self.vaes.is_empty() {
            return Err(empty_pool());
        }
        let scores = self.score_matrix(x)?;
        let labels = self.labels();
        Ok((0..scores.rows())
            .map(|r| labels[argmin(scores.row(r)).expect("non-empty pool")])
            .collect())
    }
}
