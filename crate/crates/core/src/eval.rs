//! Accuracy reports, the misclassification taxonomy, multi-seed aggregation,
//! ablation variants and hyperparameter sweeps.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::data::{LabeledSet, TaskStream};
use crate::error::{Error, Result};
use crate::learner::{argmin, LearnerState, PoolView, RunSeed};
use crate::losses::HyperParams;
use crate::numcore::Tensor;

/// Anything that assigns one score per known class, lower meaning more likely.
pub trait Scorer {
    /// Class labels in column order; ties go to the earliest column.
    fn labels(&self) -> Vec<u32>;
    fn score_matrix(&self, x: &Tensor) -> Result<Tensor>;
}

impl Scorer for PoolView<'_> {
    fn labels(&self) -> Vec<u32> {
        PoolView::labels(self)
    }

    fn score_matrix(&self, x: &Tensor) -> Result<Tensor> {
        PoolView::score_matrix(self, x)
    }
}

impl Scorer for LearnerState {
    fn labels(&self) -> Vec<u32> {
        self.class_order()
    }

    fn score_matrix(&self, x: &Tensor) -> Result<Tensor> {
        LearnerState::score_matrix(self, x)
    }
}

/// Class probabilities from scores where lower is better: `softmax(-scores)`.
pub fn negated_softmax(scores: &[f64]) -> Vec<f64> {
    let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let exp: Vec<f64> = scores.iter().map(|&s| (best - s).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissKind {
    /// The true class's own scorer gave it less than uniform probability.
    LowDiscriminability,
    /// The true class was plausible but another class scored lower.
    LowComparability,
}

/// Kind of error for one sample, or `None` if the argmin is the true column.
pub fn miss_kind(scores: &[f64], true_col: usize) -> Option<MissKind> {
    if argmin(scores) == Some(true_col) {
        return None;
    }
    let p = negated_softmax(scores)[true_col];
    if p < 1.0 / scores.len() as f64 {
        Some(MissKind::LowDiscriminability)
    } else {
        Some(MissKind::LowComparability)
    }
}

/// Counts `(low discriminability, low comparability)` over the errors on `set`.
pub fn classify_misses<S: Scorer + ?Sized>(scorer: &S, set: &LabeledSet) -> Result<(usize, usize)> {
    let labels = scorer.labels();
    let cols = columns_of(&labels, set.labels())?;
    let scores = scorer.score_matrix(set.features())?;
    let mut counts = (0, 0);
    for (r, &c) in cols.iter().enumerate() {
        match miss_kind(scores.row(r), c) {
            Some(MissKind::LowDiscriminability) => counts.0 += 1,
            Some(MissKind::LowComparability) => counts.1 += 1,
            None => {}
        }
    }
    Ok(counts)
}

fn columns_of(labels: &[u32], truth: &[u32]) -> Result<Vec<usize>> {
    let index: HashMap<u32, usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    truth
        .iter()
        .map(|l| {
            index
                .get(l)
                .copied()
                .ok_or_else(|| Error::State(format!("class {l} has no scorer in the model")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Number of tasks whose test data was evaluated.
    pub upto_task: usize,
    /// `correct / total` over the union of those test sets.
    pub average_accuracy: f64,
    pub per_task_accuracy: BTreeMap<usize, f64>,
    /// Average accuracy after each learned task, when the model history is available.
    pub per_stage_accuracy: Vec<f64>,
    pub misclass_low_discriminability: usize,
    pub misclass_low_comparability: usize,
    pub correct: usize,
    pub total: usize,
    /// Fraction of predictions that fall in the label set of task `upto_task`.
    pub last_task_prediction_fraction: f64,
}

impl EvalReport {
    pub fn errors(&self) -> usize {
        self.total - self.correct
    }

    /// `(metric, value)` pairs in a fixed order for delimited output.
    pub fn metrics(&self) -> Vec<(String, f64)> {
        let mut m = vec![
            ("average_accuracy".to_string(), self.average_accuracy),
            ("correct".to_string(), self.correct as f64),
            ("total".to_string(), self.total as f64),
            (
                "misclass_low_discriminability".to_string(),
                self.misclass_low_discriminability as f64,
            ),
            (
                "misclass_low_comparability".to_string(),
                self.misclass_low_comparability as f64,
            ),
            (
                "last_task_prediction_fraction".to_string(),
                self.last_task_prediction_fraction,
            ),
        ];
        for (t, a) in &self.per_task_accuracy {
            m.push((format!("task_{t}_accuracy"), *a));
        }
        for (t, a) in self.per_stage_accuracy.iter().enumerate() {
            m.push((format!("stage_{}_accuracy", t + 1), *a));
        }
        m
    }
}

/// Maps every label of the stream to its 1-based task.
fn task_of_label(stream: &TaskStream) -> HashMap<u32, usize> {
    stream
        .train
        .iter()
        .flat_map(|t| t.label_set.iter().map(move |&l| (l, t.task_id)))
        .collect()
}

fn check_upto(stream: &TaskStream, upto: usize) -> Result<()> {
    if upto == 0 || upto > stream.num_tasks() {
        return Err(Error::Config(format!(
            "cannot evaluate up to task {upto} of a {}-task stream",
            stream.num_tasks()
        )));
    }
    Ok(())
}

/// Builds the final-stage report from a score matrix over `stream.test_upto(upto)`.
fn report_from_scores(
    scores: &Tensor,
    col_labels: &[u32],
    test: &LabeledSet,
    stream: &TaskStream,
    upto: usize,
) -> Result<EvalReport> {
    let cols = columns_of(col_labels, test.labels())?;
    let task_of = task_of_label(stream);
    let last: Vec<u32> = stream.train[upto - 1].label_set.clone();
    let mut per_task: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let (mut correct, mut disc, mut comp, mut in_last) = (0, 0, 0, 0);
    for (r, (&c, label)) in cols.iter().zip(test.labels()).enumerate() {
        let row = scores.row(r);
        let predicted = col_labels[argmin(row).expect("non-empty score row")];
        if last.contains(&predicted) {
            in_last += 1;
        }
        let entry = per_task.entry(task_of[label]).or_default();
        entry.1 += 1;
        match miss_kind(row, c) {
            None => {
                correct += 1;
                entry.0 += 1;
            }
            Some(MissKind::LowDiscriminability) => disc += 1,
            Some(MissKind::LowComparability) => comp += 1,
        }
    }
    let total = test.len();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(EvalReport {
        upto_task: upto,
        average_accuracy: ratio(correct, total),
        per_task_accuracy: per_task
            .into_iter()
            .map(|(t, (c, n))| (t, ratio(c, n)))
            .collect(),
        per_stage_accuracy: Vec::new(),
        misclass_low_discriminability: disc,
        misclass_low_comparability: comp,
        correct,
        total,
        last_task_prediction_fraction: ratio(in_last, total),
    })
}

/// Evaluates any scorer on the test data of tasks `1..=upto`. The per-stage
/// trajectory is left empty because a generic scorer carries no history.
pub fn evaluate_scorer<S: Scorer + ?Sized>(
    scorer: &S,
    stream: &TaskStream,
    upto: usize,
) -> Result<EvalReport> {
    check_upto(stream, upto)?;
    let test = stream.test_upto(upto)?;
    let labels = scorer.labels();
    columns_of(&labels, test.labels())?;
    let scores = scorer.score_matrix(test.features())?;
    report_from_scores(&scores, &labels, &test, stream, upto)
}

/// Evaluates the pool on tasks `1..=upto`. Because earlier VAEs are frozen, the
/// accuracy after stage `t` is recovered by restricting the final score matrix
/// to classes and test samples of tasks `1..=t`.
pub fn evaluate(state: &LearnerState, stream: &TaskStream, upto: usize) -> Result<EvalReport> {
    if upto > state.tasks_seen() {
        return Err(Error::State(format!(
            "model has learned {} tasks, cannot evaluate up to task {upto}",
            state.tasks_seen()
        )));
    }
    check_upto(stream, upto)?;
    let view = state.view_upto(upto);
    let labels = view.labels();
    let test = stream.test_upto(upto)?;
    columns_of(&labels, test.labels())?;
    let scores = view.score_matrix(test.features())?;
    let mut report = report_from_scores(&scores, &labels, &test, stream, upto)?;

    let col_task: Vec<usize> = view.vaes().iter().map(|p| p.task).collect();
    let task_of = task_of_label(stream);
    for t in 1..=upto {
        let (mut correct, mut total) = (0, 0);
        for (r, label) in test.labels().iter().enumerate() {
            if task_of[label] > t {
                continue;
            }
            let row: Vec<f64> = scores
                .row(r)
                .iter()
                .zip(&col_task)
                .filter(|(_, &ct)| ct <= t)
                .map(|(&s, _)| s)
                .collect();
            let k = argmin(&row)
                .ok_or_else(|| Error::State(format!("no classes learned by task {t}")))?;
            let predicted = labels[col_task
                .iter()
                .enumerate()
                .filter(|(_, &ct)| ct <= t)
                .nth(k)
                .expect("column")
                .0];
            total += 1;
            if predicted == *label {
                correct += 1;
            }
        }
        report.per_stage_accuracy.push(if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        });
    }
    Ok(report)
}

/// Fraction of samples whose own-class score is within `r_intra` while every
/// other class scores at least `r_inter`.
pub fn margin_fraction<S: Scorer + ?Sized>(
    scorer: &S,
    set: &LabeledSet,
    r_intra: f64,
    r_inter: f64,
) -> Result<f64> {
    if set.is_empty() {
        return Ok(0.0);
    }
    let cols = columns_of(&scorer.labels(), set.labels())?;
    let scores = scorer.score_matrix(set.features())?;
    let hits = cols
        .iter()
        .enumerate()
        .filter(|&(r, &c)| {
            let row = scores.row(r);
            row[c] <= r_intra && row.iter().enumerate().all(|(j, &s)| j == c || s >= r_inter)
        })
        .count();
    Ok(hits as f64 / set.len() as f64)
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Reports of one configuration across a seed list.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    pub seeds: Vec<u64>,
    pub reports: Vec<EvalReport>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_per_stage: Vec<f64>,
}

impl SeedSummary {
    pub fn new(seeds: Vec<u64>, reports: Vec<EvalReport>) -> Result<Self> {
        if seeds.len() != reports.len() {
            return Err(Error::Contract(format!(
                "{} seeds but {} reports",
                seeds.len(),
                reports.len()
            )));
        }
        let acc: Vec<f64> = reports.iter().map(|r| r.average_accuracy).collect();
        let (mean_accuracy, std_accuracy) = mean_std(&acc);
        let stages = reports
            .iter()
            .map(|r| r.per_stage_accuracy.len())
            .min()
            .unwrap_or(0);
        let mean_per_stage = (0..stages)
            .map(|s| {
                mean_std(
                    &reports
                        .iter()
                        .map(|r| r.per_stage_accuracy[s])
                        .collect::<Vec<_>>(),
                )
                .0
            })
            .collect();
        Ok(Self {
            seeds,
            reports,
            mean_accuracy,
            std_accuracy,
            mean_per_stage,
        })
    }
}

/// Trains on every task of the stream, calling `after_task` once per task.
pub fn run_incremental(
    stream: &TaskStream,
    hp: &HyperParams,
    seed: u64,
    mut after_task: impl FnMut(&LearnerState) -> Result<()>,
) -> Result<(LearnerState, EvalReport)> {
    if stream.num_tasks() == 0 {
        return Err(Error::Config("task stream is empty".into()));
    }
    let mut state = LearnerState::new(hp.clone())?;
    for task in &stream.train {
        state.learn_task(task, RunSeed(seed))?;
        after_task(&state)?;
    }
    let report = evaluate(&state, stream, stream.num_tasks())?;
    Ok((state, report))
}

pub fn run_seeds(stream: &TaskStream, hp: &HyperParams, seeds: &[u64]) -> Result<SeedSummary> {
    hp.validate()?;
    let reports = seeds
        .iter()
        .map(|&s| run_incremental(stream, hp, s, |_| Ok(())).map(|(_, r)| r))
        .collect::<Result<Vec<_>>>()?;
    SeedSummary::new(seeds.to_vec(), reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// No classifier-contrastive term.
    Var1,
    /// No inter-class term.
    Var2,
    /// No pseudo negatives.
    Var3,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Var1, Variant::Var2, Variant::Var3, Variant::Full];

    pub fn apply(self, hp: &HyperParams) -> HyperParams {
        let mut hp = hp.clone();
        match self {
            Variant::Var1 => hp.lambda1 = 0.0,
            Variant::Var2 => hp.lambda2 = 0.0,
            Variant::Var3 => hp.pseudo_per_old_class = 0,
            Variant::Full => {}
        }
        hp
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Var1 => "var1",
            Variant::Var2 => "var2",
            Variant::Var3 => "var3",
            Variant::Full => "full",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "var1" => Ok(Variant::Var1),
            "var2" => Ok(Variant::Var2),
            "var3" => Ok(Variant::Var3),
            "full" => Ok(Variant::Full),
            other => Err(Error::Config(format!(
                "unknown variant {other:?}; expected var1, var2, var3 or full"
            ))),
        }
    }
}

pub fn run_ablation(
    variant: Variant,
    stream: &TaskStream,
    hp: &HyperParams,
    seeds: &[u64],
) -> Result<SeedSummary> {
    run_seeds(stream, &variant.apply(hp), seeds)
}

/// One row per stage, one column per variant (mean over seeds).
pub fn ablation_table(results: &[(Variant, SeedSummary)]) -> Table {
    let mut header = vec!["task".to_string()];
    header.extend(results.iter().map(|(v, _)| v.to_string()));
    let stages = results
        .iter()
        .map(|(_, s)| s.mean_per_stage.len())
        .max()
        .unwrap_or(0);
    let rows = (0..stages)
        .map(|t| {
            let mut row = vec![(t + 1).to_string()];
            row.extend(results.iter().map(|(_, s)| {
                s.mean_per_stage
                    .get(t)
                    .map_or(String::new(), |a| fmt_acc(*a))
            }));
            row
        })
        .collect();
    Table { header, rows }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    RIntra,
    RInter,
}

/// `r_inter` held fixed while sweeping `r_intra`, above the largest default grid value.
pub const R_INTRA_SWEEP_R_INTER: f64 = 200.0;

impl SweepParam {
    pub fn default_grid(self) -> &'static [f64] {
        match self {
            SweepParam::RIntra => &[0.0, 0.1, 1.0, 10.0, 100.0],
            SweepParam::RInter => &[50.0, 100.0, 200.0, 500.0, 1000.0],
        }
    }

    pub fn apply(self, hp: &HyperParams, value: f64) -> HyperParams {
        let mut hp = hp.clone();
        match self {
            SweepParam::RIntra => hp.r_intra = value,
            SweepParam::RInter => hp.r_inter = value,
        }
        hp
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::RIntra => "r_intra",
            SweepParam::RInter => "r_inter",
        })
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").to_ascii_lowercase().as_str() {
            "r_intra" => Ok(SweepParam::RIntra),
            "r_inter" => Ok(SweepParam::RInter),
            other => Err(Error::Config(format!(
                "unknown sweep parameter {other:?}; expected r_intra or r_inter"
            ))),
        }
    }
}

/// Hyperparameters of every grid point, or a configuration error naming the first bad value.
pub fn sweep_configs(
    base: &HyperParams,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<(f64, HyperParams)>> {
    if values.is_empty() {
        return Err(Error::Config(format!("empty {param} grid")));
    }
    values
        .iter()
        .map(|&v| {
            let hp = param.apply(base, v);
            hp.validate()
                .map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("{param} = {v}: {m}")),
                    other => other,
                })
                .map(|_| (v, hp))
        })
        .collect()
}

/// One full multi-seed run per value. Every value is validated before any training.
pub fn run_sweep(
    stream: &TaskStream,
    base: &HyperParams,
    param: SweepParam,
    values: &[f64],
    seeds: &[u64],
) -> Result<Vec<(f64, SeedSummary)>> {
    sweep_configs(base, param, values)?
        .into_iter()
        .map(|(v, hp)| run_seeds(stream, &hp, seeds).map(|s| (v, s)))
        .collect()
}

pub fn sweep_table(param: SweepParam, rows: &[(f64, SeedSummary)]) -> Table {
    Table {
        header: vec![
            param.to_string(),
            "mean_accuracy".into(),
            "std_accuracy".into(),
        ],
        rows: rows
            .iter()
            .map(|(v, s)| {
                vec![
                    v.to_string(),
                    fmt_acc(s.mean_accuracy),
                    fmt_acc(s.std_accuracy),
                ]
            })
            .collect(),
    }
}

/// Per-seed rows plus mean and std.
pub fn seed_table(summary: &SeedSummary) -> Table {
    let stages = summary.mean_per_stage.len();
    let mut header = vec!["seed".to_string(), "average_accuracy".to_string()];
    header.extend((1..=stages).map(|t| format!("after_task_{t}")));
    header.push("low_discriminability".into());
    header.push("low_comparability".into());
    let mut rows: Vec<Vec<String>> = summary
        .seeds
        .iter()
        .zip(&summary.reports)
        .map(|(s, r)| {
            let mut row = vec![s.to_string(), fmt_acc(r.average_accuracy)];
            row.extend(
                r.per_stage_accuracy
                    .iter()
                    .take(stages)
                    .map(|a| fmt_acc(*a)),
            );
            row.push(r.misclass_low_discriminability.to_string());
            row.push(r.misclass_low_comparability.to_string());
            row
        })
        .collect();
    let mut mean = vec!["mean".to_string(), fmt_acc(summary.mean_accuracy)];
    mean.extend(summary.mean_per_stage.iter().map(|a| fmt_acc(*a)));
    rows.push(mean);
    rows.push(vec!["std".to_string(), fmt_acc(summary.std_accuracy)]);
    Table { header, rows }
}

fn fmt_acc(a: f64) -> String {
    format!("{a:.4}")
}

/// A rectangular table of strings rendered as aligned text or delimited rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    /// Long-format `metric,value` rows for one report.
    pub fn from_report(report: &EvalReport) -> Self {
        Table {
            header: vec!["metric".into(), "value".into()],
            rows: report
                .metrics()
                .into_iter()
                .map(|(m, v)| vec![m, v.to_string()])
                .collect(),
        }
    }

    pub fn to_delimited(&self, sep: char) -> String {
        let mut out = String::new();
        for row in std::iter::once(&self.header).chain(&self.rows) {
            let cells: Vec<String> = row.iter().map(|c| quote(c, sep)).collect();
            out.push_str(&cells.join(&sep.to_string()));
            out.push('\n');
        }
        out
    }
}

fn quote(cell: &str, sep: char) -> String {
    if cell.contains(sep) || cell.contains('"') || cell.contains('\n') {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ncols = std::iter::once(&self.header)
            .chain(&self.rows)
            .map(Vec::len)
            .max()
            .unwrap_or(0);
        let mut widths = vec![0; ncols];
        for row in std::iter::once(&self.header).chain(&self.rows) {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let line = |f: &mut fmt::Formatter<'_>, row: &[String]| -> fmt::Result {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, &w))| {
                    if i == 0 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect();
            writeln!(f, "{}", cells.join("  ").trim_end())
        };
        line(f, &self.header)?;
        let total: usize = widths.iter().sum::<usize>() + 2 * ncols.saturating_sub(1);
        writeln!(f, "{}", "-".repeat(total))?;
        for row in &self.rows {
            line(f, row)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split_tasks, LabeledSet};

    /// Scores looked up by the first feature, which holds a row index.
    struct Fixed {
        labels: Vec<u32>,
        rows: Vec<Vec<f64>>,
    }

    impl Scorer for Fixed {
        fn labels(&self) -> Vec<u32> {
            self.labels.clone()
        }

        fn score_matrix(&self, x: &Tensor) -> Result<Tensor> {
            let k = self.labels.len();
            let mut v = Vec::new();
            for r in 0..x.rows() {
                v.extend_from_slice(&self.rows[x.row(r)[0] as usize]);
            }
            Tensor::matrix(x.rows(), k, v)
        }
    }

    fn indexed(labels: &[u32]) -> LabeledSet {
        let n = labels.len();
        LabeledSet::new(
            Tensor::matrix(n, 1, (0..n).map(|i| i as f64).collect()).unwrap(),
            labels.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn softmax_uses_negated_scores() {
        let p = negated_softmax(&[0.0, 1000.0]);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] < 1e-300);
        let p = negated_softmax(&[2.0, 2.0, 2.0, 2.0]);
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn ten_class_miss_kinds() {
        // True class 0 probability e^-a / (e^-a + 9).
        let with_own = |own: f64| {
            let mut s = vec![0.0; 10];
            s[0] = own;
            s[1] = -0.5;
            s
        };
        let low = with_own(3.0);
        let p = negated_softmax(&low)[0];
        assert!(p < 0.1, "{p}");
        assert_eq!(miss_kind(&low, 0), Some(MissKind::LowDiscriminability));

        let mut plausible = vec![3.0; 10];
        plausible[0] = 0.0;
        plausible[1] = -0.1;
        let p = negated_softmax(&plausible)[0];
        assert!(p >= 0.1, "{p}");
        assert_eq!(miss_kind(&plausible, 0), Some(MissKind::LowComparability));

        assert_eq!(miss_kind(&[0.0, 1.0], 0), None);
    }

    #[test]
    fn three_sample_taxonomy_split() {
        let scorer = Fixed {
            labels: vec![0, 1, 2],
            rows: vec![
                vec![0.1, 5.0, 5.0],
                vec![9.0, 8.9, 0.0],
                vec![1.0, 0.9, 9.0],
            ],
        };
        let set = indexed(&[0, 1, 0]);
        // Row 1: p(true) ~ 1.4e-4 < 1/3. Row 2: argmin is class 1 but p(true) ~ 0.475.
        assert_eq!(classify_misses(&scorer, &set).unwrap(), (1, 1));
    }

    #[test]
    fn hand_traced_four_sample_accuracy() {
        let train = indexed(&[0, 1, 2, 3]);
        let stream = split_tasks(&train, &train, 2, 0.0, 0).unwrap();
        let scorer = Fixed {
            labels: vec![0, 1, 2, 3],
            rows: vec![
                vec![0.0, 1.0, 1.0, 1.0],
                vec![1.0, 1.0, 1.0, 1.0],
                vec![1.0, 1.0, 0.0, 1.0],
                vec![1.0, 1.0, 0.0, 1.0],
            ],
        };
        let r = evaluate_scorer(&scorer, &stream, 2).unwrap();
        assert_eq!((r.correct, r.total), (2, 4));
        assert_eq!(r.average_accuracy, 0.5);
        assert_eq!(r.per_task_accuracy[&1], 0.5);
        assert_eq!(r.per_task_accuracy[&2], 0.5);
        assert_eq!(
            r.misclass_low_discriminability + r.misclass_low_comparability,
            2
        );
        assert_eq!(r.last_task_prediction_fraction, 0.5);

        let r1 = evaluate_scorer(&scorer, &stream, 1);
        // Test data of task 1 only, scored against all four classes.
        assert_eq!(r1.unwrap().total, 2);
    }

    #[test]
    fn constant_scorer_falls_back_to_first_class() {
        let set = indexed(&[0, 1, 2, 3]);
        let stream = split_tasks(&set, &set, 4, 0.0, 0).unwrap();
        let scorer = Fixed {
            labels: vec![0, 1, 2, 3],
            rows: vec![vec![2.0; 4]; 4],
        };
        let r = evaluate_scorer(&scorer, &stream, 1).unwrap();
        assert_eq!(r.average_accuracy, 0.25);
    }

    #[test]
    fn missing_class_is_a_state_error() {
        let set = indexed(&[0, 1]);
        let stream = split_tasks(&set, &set, 2, 0.0, 0).unwrap();
        let scorer = Fixed {
            labels: vec![0],
            rows: vec![vec![0.0]; 2],
        };
        assert!(matches!(
            evaluate_scorer(&scorer, &stream, 1),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn mean_std_sample_formula() {
        assert_eq!(mean_std(&[]), (0.0, 0.0));
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn sweep_rejects_bad_pairs_before_training() {
        let set = indexed(&[0, 1]);
        let stream = split_tasks(&set, &set, 2, 0.0, 0).unwrap();
        let base = HyperParams::default();
        let err = run_sweep(&stream, &base, SweepParam::RIntra, &[1.0, 50.0], &[0]).unwrap_err();
        assert!(matches!(err, Error::Config(m) if m.contains("r_intra = 50")));
    }

    #[test]
    fn variants_toggle_one_knob() {
        let hp = HyperParams::default();
        assert_eq!(Variant::Var1.apply(&hp).lambda1, 0.0);
        assert_eq!(Variant::Var2.apply(&hp).lambda2, 0.0);
        assert_eq!(Variant::Var3.apply(&hp).pseudo_per_old_class, 0);
        assert_eq!(Variant::Full.apply(&hp), hp);
        assert_eq!("VAR2".parse::<Variant>().unwrap(), Variant::Var2);
        assert!("var4".parse::<Variant>().is_err());
    }

    #[test]
    fn delimited_output_quotes_separators() {
        let t = Table {
            header: vec!["a".into(), "b".into()],
            rows: vec![vec!["1,5".into(), "x".into()]],
        };
        assert_eq!(t.to_delimited(','), "a,b\n\"1,5\",x\n");
        assert!(t.to_string().contains("1,5"));
    }
}
