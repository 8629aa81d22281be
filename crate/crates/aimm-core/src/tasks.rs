//! The five downstream tasks: specs, losses, and evaluation metrics.

use crate::error::{Error, Result};
use crate::tensor::tape::{sgcs_row, NodeId, Tape};
use crate::tensor::Real;
use serde::{Deserialize, Serialize};

/// Which modality feeds a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    Channel,
    Environment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskId {
    Positioning,
    LosNlos,
    Precoding,
    BeamSelection,
    PathLoss,
}

impl TaskId {
    pub const ALL: [TaskId; 5] = [
        TaskId::Positioning,
        TaskId::LosNlos,
        TaskId::Precoding,
        TaskId::BeamSelection,
        TaskId::PathLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskId::Positioning => "positioning",
            TaskId::LosNlos => "los_nlos",
            TaskId::Precoding => "precoding",
            TaskId::BeamSelection => "beam_selection",
            TaskId::PathLoss => "path_loss",
        }
    }

    /// Fixed instruction keyword (at most two vocabulary tokens).
    pub fn keyword(self) -> &'static str {
        match self {
            TaskId::Positioning => "position",
            TaskId::LosNlos => "LOS status",
            TaskId::Precoding => "precoding",
            TaskId::BeamSelection => "beam selection",
            TaskId::PathLoss => "path loss",
        }
    }

    /// Input modality routing: channel tasks read CSI, environment tasks
    /// read the scene encoding.
    pub fn modality(self) -> Modality {
        match self {
            TaskId::Positioning | TaskId::LosNlos | TaskId::Precoding => Modality::Channel,
            TaskId::BeamSelection | TaskId::PathLoss => Modality::Environment,
        }
    }

    /// Head output width.
    pub fn out_dim(self, n_t: usize) -> usize {
        match self {
            TaskId::Positioning => 2,
            TaskId::LosNlos => 2,
            TaskId::Precoding => 2 * n_t,
            TaskId::BeamSelection => n_t,
            TaskId::PathLoss => 1,
        }
    }

    pub fn metric_kind(self) -> &'static str {
        match self {
            TaskId::Positioning => "cdf90_m",
            TaskId::LosNlos => "accuracy",
            TaskId::Precoding => "sgcs",
            TaskId::BeamSelection => "top1",
            TaskId::PathLoss => "rmse_db",
        }
    }

    /// Higher metric values are better (false for error metrics).
    pub fn higher_is_better(self) -> bool {
        !matches!(self, TaskId::Positioning | TaskId::PathLoss)
    }

    pub fn from_name(name: &str) -> Result<TaskId> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown task {name:?}")))
    }
}

/// Per-batch training targets for one task.
#[derive(Debug, Clone)]
pub enum TaskTargets<F> {
    /// Normalized UE coordinates, 2 per sample.
    Positioning(Vec<F>),
    /// Class 1 = LOS.
    LosNlos(Vec<i64>),
    /// Interleaved (re, im) precoder labels, 2*n_t per sample.
    Precoding(Vec<F>),
    /// Beam class ids.
    BeamSelection(Vec<i64>),
    /// Standardized path-loss values, 1 per sample.
    PathLoss(Vec<F>),
}

pub const FOCAL_GAMMA: f64 = 2.0;

/// Attach the task loss to `pred` on the tape.
pub fn task_loss<F: Real>(
    tape: &mut Tape<F>,
    task: TaskId,
    pred: NodeId,
    targets: &TaskTargets<F>,
) -> Result<NodeId> {
    match (task, targets) {
        (TaskId::Positioning, TaskTargets::Positioning(t)) => tape.mse_loss(pred, t.clone()),
        (TaskId::LosNlos, TaskTargets::LosNlos(t)) => tape.cross_entropy(pred, t.clone()),
        (TaskId::Precoding, TaskTargets::Precoding(t)) => tape.sgcs_loss(pred, t.clone()),
        (TaskId::BeamSelection, TaskTargets::BeamSelection(t)) => {
            tape.focal_loss(pred, t.clone(), F::from_f64(FOCAL_GAMMA))
        }
        (TaskId::PathLoss, TaskTargets::PathLoss(t)) => tape.mse_loss(pred, t.clone()),
        _ => Err(Error::Config(format!("targets do not match task {}", task.name()))),
    }
}

// ── metrics ─────────────────────────────────────────────────────────────

/// One evaluation result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: String,
    pub task: String,
    pub metric: String,
    pub value: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl MetricReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.config, self.task, self.metric, self.value, self.n_samples, self.seed
        )
    }
}

pub const CSV_HEADER: &str = "config,task,metric,value,n_samples,seed";

/// CDF90: sort errors ascending and take index ceil(0.9 N) - 1.
pub fn cdf90(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Evaluation("cdf90 of empty error list".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = (0.9 * sorted.len() as f64).ceil() as usize - 1;
    Ok(sorted[idx])
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn top1_accuracy(logits: &[Vec<f32>], labels: &[usize]) -> Result<f64> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(Error::Evaluation("top1 over empty or mismatched sets".into()));
    }
    let mut correct = 0usize;
    for (row, &label) in logits.iter().zip(labels) {
        let mut best = 0usize;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        correct += (best == label) as usize;
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// Mean SGCS between predicted and label precoders (interleaved reals).
pub fn mean_sgcs(preds: &[Vec<f32>], labels: &[Vec<f32>]) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::Evaluation("sgcs over empty or mismatched sets".into()));
    }
    let mut total = 0.0f64;
    for (p, w) in preds.iter().zip(labels) {
        let p64: Vec<f64> = p.iter().map(|&v| v as f64).collect();
        let w64: Vec<f64> = w.iter().map(|&v| v as f64).collect();
        total += sgcs_row(&p64, &w64);
    }
    Ok(total / preds.len() as f64)
}

pub fn rmse(errors_sq: &[f64]) -> Result<f64> {
    if errors_sq.is_empty() {
        return Err(Error::Evaluation("rmse of empty error list".into()));
    }
    Ok((errors_sq.iter().sum::<f64>() / errors_sq.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn modality_routing_matches_task_table() {
        assert_eq!(TaskId::Positioning.modality(), Modality::Channel);
        assert_eq!(TaskId::LosNlos.modality(), Modality::Channel);
        assert_eq!(TaskId::Precoding.modality(), Modality::Channel);
        assert_eq!(TaskId::BeamSelection.modality(), Modality::Environment);
        assert_eq!(TaskId::PathLoss.modality(), Modality::Environment);
    }

    #[test]
    fn out_dims_match_task_table() {
        let n_t = 16;
        assert_eq!(TaskId::Positioning.out_dim(n_t), 2);
        assert_eq!(TaskId::LosNlos.out_dim(n_t), 2);
        assert_eq!(TaskId::Precoding.out_dim(n_t), 32);
        assert_eq!(TaskId::BeamSelection.out_dim(n_t), 16);
        assert_eq!(TaskId::PathLoss.out_dim(n_t), 1);
    }

    #[test]
    fn cdf90_order_statistic_definition() {
        let errors: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        assert_eq!(cdf90(&errors).unwrap(), 9.0);
        // monotone: adding a larger error never decreases it
        let mut more = errors.clone();
        more.push(50.0);
        assert!(cdf90(&more).unwrap() >= 9.0);
        assert!(cdf90(&[]).is_err());
    }

    #[test]
    fn top1_ties_break_to_lowest_index() {
        let logits = vec![vec![0.5f32, 0.5, 0.1]];
        assert_eq!(top1_accuracy(&logits, &[0]).unwrap(), 1.0);
        assert_eq!(top1_accuracy(&logits, &[1]).unwrap(), 0.0);
    }

    #[test]
    fn positioning_loss_hand_case() {
        // prediction off by (0.1, 0) normalized -> mse 0.005
        let mut tape = Tape::new();
        let pred = tape.constant(Tensor::new(vec![1, 2], vec![0.4f64, 0.7]).unwrap());
        let l = task_loss(
            &mut tape,
            TaskId::Positioning,
            pred,
            &TaskTargets::Positioning(vec![0.3, 0.7]),
        )
        .unwrap();
        assert!((tape.value(l).data()[0] - 0.005).abs() < 1e-12);
    }

    #[test]
    fn sgcs_metric_and_loss_agree_at_perfect_prediction() {
        let label = vec![0.6f32, 0.0, 0.0, 0.8];
        let m = mean_sgcs(&[label.clone()], &[label.clone()]).unwrap();
        assert!((m - 1.0).abs() < 1e-9);
        let mut tape = Tape::new();
        let pred = tape.constant(
            Tensor::new(vec![1, 4], label.iter().map(|&v| v as f64).collect()).unwrap(),
        );
        let l = task_loss(
            &mut tape,
            TaskId::Precoding,
            pred,
            &TaskTargets::Precoding(label.iter().map(|&v| v as f64).collect()),
        )
        .unwrap();
        assert!(tape.value(l).data()[0].abs() < 1e-9);
    }

    #[test]
    fn focal_never_exceeds_cross_entropy() {
        let mut rng = crate::rng::SplitMix64::new(8);
        for _ in 0..50 {
            let logits: Vec<f64> = (0..4).map(|_| rng.next_normal() * 3.0).collect();
            let target = rng.below(4) as i64;
            let mut t1 = Tape::new();
            let x1 = t1.constant(Tensor::new(vec![1, 4], logits.clone()).unwrap());
            let ce = t1.cross_entropy(x1, vec![target]).unwrap();
            let mut t2 = Tape::new();
            let x2 = t2.constant(Tensor::new(vec![1, 4], logits.clone()).unwrap());
            let fo = t2.focal_loss(x2, vec![target], 2.0).unwrap();
            assert!(
                t2.value(fo).data()[0] <= t1.value(ce).data()[0] + 1e-12,
                "focal above ce"
            );
        }
    }
}
