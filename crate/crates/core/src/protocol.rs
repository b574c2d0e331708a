//! Sequential-task training driver: train, measure connectivity, prune,
//! freeze, and compute the performance/forgetting metrics.

use crate::connectivity::{connectivity_report, ConnectivityMode, ConnectivityReport};
use crate::error::{Error, Result};
use crate::masking::{
    freeze_survivors, layer_fractions, magnitude_prune, select_layers, MaskSet, PruneConfig,
};
use crate::nn::{backward, forward, loss_ce, sgd_step, Network};
use crate::tensor::Tensor;
use crate::theory::{self, NetworkOracle};
use crate::data::TaskDataset;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub finetune_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Epoch-level loss-improvement threshold; training stops early once the
    /// improvement drops below it.
    pub convergence_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            finetune_epochs: 5,
            lr: 0.05,
            batch_size: 32,
            convergence_eps: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.convergence_eps > 0.0) {
            return Err(Error::Config(format!(
                "convergence_eps must be positive, got {}",
                self.convergence_eps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvergenceStatus {
    /// Stopped because the epoch-loss improvement fell below the threshold.
    Converged { epoch: usize },
    /// Ran out of the epoch budget.
    MaxEpochs,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub epoch_losses: Vec<f64>,
    pub status: ConvergenceStatus,
    /// Loss improvement observed in the final epoch, when two epochs ran.
    pub final_improvement: Option<f64>,
}

/// Trains the free weights on the task's train split for up to `epochs`
/// epochs. Batches run in fixed dataset order, so outcomes are a pure
/// function of the inputs.
pub fn train_with_epochs(
    net: &mut Network,
    masks: &MaskSet,
    task: &TaskDataset,
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    masks.check_compatible(&net.layer_shapes())?;
    let n = task.n_train();
    if n == 0 {
        return Err(Error::InsufficientData("task has an empty train split".into()));
    }
    let inputs = &task.train_inputs;
    let labels = &task.train_labels;
    let mut epoch_losses = Vec::with_capacity(epochs);
    let mut status = ConvergenceStatus::MaxEpochs;
    let mut final_improvement = None;
    for epoch in 0..epochs {
        let mut total = 0.0;
        let mut start = 0;
        while start < n {
            let end = (start + cfg.batch_size).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let batch = inputs.select_rows(&idx);
            let batch_labels = &labels[start..end];
            let (logits, trace) = forward(net, &batch)?;
            let (loss, logit_grad) = loss_ce(&logits, batch_labels)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss {loss} in epoch {epoch} at batch starting {start}"
                )));
            }
            total += loss * (end - start) as f64;
            let grads = backward(net, &trace, &logit_grad)?;
            sgd_step(net, &grads, cfg.lr, masks)?;
            start = end;
        }
        let epoch_loss = total / n as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Training(format!("non-finite epoch loss at epoch {epoch}")));
        }
        if let Some(&prev) = epoch_losses.last() {
            let improvement = prev - epoch_loss;
            final_improvement = Some(improvement);
            epoch_losses.push(epoch_loss);
            if improvement < cfg.convergence_eps {
                status = ConvergenceStatus::Converged { epoch };
                break;
            }
        } else {
            epoch_losses.push(epoch_loss);
        }
    }
    Ok(TrainOutcome {
        epoch_losses,
        status,
        final_improvement,
    })
}

/// Trains on the task for the configured epoch budget.
pub fn train_task(
    net: &mut Network,
    masks: &MaskSet,
    task: &TaskDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_epochs(net, masks, task, cfg, cfg.epochs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Evaluate the live network as-is.
    CurrentWeights,
    /// Zero every weight not owned by the task's own or an earlier freeze
    /// (subnetwork recall; immune to later training by construction).
    TaskMask,
}

/// Owner id under which task `task_id`'s survivors are frozen.
pub fn owner_of_task(task_id: usize) -> u32 {
    task_id as u32 + 1
}

/// Mean loss and accuracy on the task's eval split.
pub fn eval_task(
    net: &Network,
    masks: &MaskSet,
    task: &TaskDataset,
    mode: EvalMode,
) -> Result<(f64, f64)> {
    match mode {
        EvalMode::CurrentWeights => eval_on(net, &task.eval_inputs, &task.eval_labels),
        EvalMode::TaskMask => {
            masks.check_compatible(&net.layer_shapes())?;
            let cutoff = owner_of_task(task.task_id);
            let mut masked = net.clone();
            for l in 0..masked.num_layers() {
                let layer_mask = masks.layer(l);
                let w = masked.layer_mut(l).weights.data_mut();
                for (i, slot) in w.iter_mut().enumerate() {
                    let owner = layer_mask.frozen_owner(i);
                    if owner == 0 || owner > cutoff {
                        *slot = 0.0;
                    }
                }
            }
            eval_on(&masked, &task.eval_inputs, &task.eval_labels)
        }
    }
}

/// Mean cross-entropy and argmax accuracy on an explicit batch.
pub fn eval_on(net: &Network, inputs: &Tensor, labels: &[usize]) -> Result<(f64, f64)> {
    let (logits, _) = forward(net, inputs)?;
    let (loss, _) = loss_ce(&logits, labels)?;
    let mut correct = 0usize;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best == y {
            correct += 1;
        }
    }
    Ok((loss, correct as f64 / labels.len() as f64))
}

/// Per-example cross-entropy losses on a batch.
pub fn per_sample_losses(net: &Network, inputs: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    let (logits, _) = forward(net, inputs)?;
    let c = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Input(format!("label {bad} out of range for {c} classes")));
    }
    Ok(labels
        .iter()
        .enumerate()
        .map(|(r, &y)| {
            let row = logits.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .collect())
}

/// Loss increase on earlier tasks after each subsequent task:
/// `O_t = loss[t][t+1] - loss[t][t]`.
pub fn forgetting(loss_matrix: &[Vec<f64>]) -> Vec<f64> {
    let t = loss_matrix.len();
    if t < 2 {
        return Vec::new();
    }
    (0..t - 1)
        .map(|task| loss_matrix[task][task + 1] - loss_matrix[task][task])
        .collect()
}

/// Class-label weighting for the forgetting metrics. Weights are always
/// at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelEncoding {
    /// Class `c` weighs `c + 1`.
    IndexPlusOne,
    /// Every class weighs 1.
    Unweighted,
}

impl LabelEncoding {
    pub fn weight(&self, class: usize) -> f64 {
        match self {
            LabelEncoding::IndexPlusOne => (class + 1) as f64,
            LabelEncoding::Unweighted => 1.0,
        }
    }

    pub fn weights(&self, labels: &[usize]) -> Vec<f64> {
        labels.iter().map(|&y| self.weight(y)).collect()
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "index_plus_one" => Ok(Self::IndexPlusOne),
            "unweighted" => Ok(Self::Unweighted),
            other => Err(Error::Config(format!(
                "unknown encoding '{other}' (expected index_plus_one|unweighted)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::IndexPlusOne => "index_plus_one",
            Self::Unweighted => "unweighted",
        }
    }
}

/// Label-weighted mean absolute per-sample loss change between the two
/// checkpoints, on the task's eval split.
pub fn expected_forgetting(
    net_t: &Network,
    net_t1: &Network,
    task: &TaskDataset,
    encoding: LabelEncoding,
) -> Result<f64> {
    let a = per_sample_losses(net_t, &task.eval_inputs, &task.eval_labels)?;
    let b = per_sample_losses(net_t1, &task.eval_inputs, &task.eval_labels)?;
    let mut acc = 0.0;
    for ((la, lb), &y) in a.iter().zip(&b).zip(&task.eval_labels) {
        acc += encoding.weight(y) * (lb - la).abs();
    }
    Ok(acc / a.len() as f64)
}

#[derive(Debug, Clone)]
pub struct FrozenLayerOutcome {
    /// Label-weighted mean per-sample loss difference (full minus frozen).
    pub d: f64,
    /// Plain eval-loss difference (full minus frozen).
    pub training_deviation: f64,
    pub full_eval_loss: f64,
    pub frozen_eval_loss: f64,
}

/// Trains twin networks from the same init, one unconstrained and one with
/// layer `layer` frozen at its initial values, and reports how much freezing
/// cost. `layer = None` freezes nothing (control arm).
pub fn frozen_layer_experiment(
    net_init: &Network,
    task: &TaskDataset,
    layer: Option<usize>,
    cfg: &TrainConfig,
    encoding: LabelEncoding,
) -> Result<FrozenLayerOutcome> {
    let mut full = net_init.clone();
    let full_masks = MaskSet::for_network(&full);
    train_task(&mut full, &full_masks, task, cfg)?;

    let mut frozen = net_init.clone();
    let frozen_masks = match layer {
        Some(l) => MaskSet::with_frozen_layer(&frozen, l)?,
        None => MaskSet::for_network(&frozen),
    };
    train_task(&mut frozen, &frozen_masks, task, cfg)?;

    let lf = per_sample_losses(&full, &task.eval_inputs, &task.eval_labels)?;
    let lg = per_sample_losses(&frozen, &task.eval_inputs, &task.eval_labels)?;
    let n = lf.len() as f64;
    let full_eval_loss = lf.iter().sum::<f64>() / n;
    let frozen_eval_loss = lg.iter().sum::<f64>() / n;
    let mut d = 0.0;
    for ((a, b), &y) in lf.iter().zip(&lg).zip(&task.eval_labels) {
        d += encoding.weight(y) * (a - b);
    }
    Ok(FrozenLayerOutcome {
        d: d / n,
        training_deviation: full_eval_loss - frozen_eval_loss,
        full_eval_loss,
        frozen_eval_loss,
    })
}

/// Knobs of the sequence driver that are not part of the train or prune
/// configs.
#[derive(Debug, Clone)]
pub struct SequenceOptions {
    /// Cap on the held-out probe batch used for connectivity and curvature.
    pub probe_batch: usize,
    pub mode: ConnectivityMode,
    pub encoding: LabelEncoding,
    pub eta_threshold: Option<f64>,
    /// Skip pruning of the final classifier layer.
    pub exempt_final_layer: bool,
    pub lambda_iters: usize,
    pub lambda_tol: f64,
}

impl Default for SequenceOptions {
    fn default() -> Self {
        Self {
            probe_batch: 512,
            mode: ConnectivityMode::PerClass,
            encoding: LabelEncoding::IndexPlusOne,
            eta_threshold: None,
            exempt_final_layer: false,
            lambda_iters: 200,
            lambda_tol: 1e-6,
        }
    }
}

/// Post-task snapshot: the network and masks right after the task's
/// survivors were frozen.
#[derive(Debug, Clone)]
pub struct TaskCheckpoint {
    pub task_id: usize,
    pub network: Network,
    pub masks: MaskSet,
    pub status: ConvergenceStatus,
    pub final_improvement: Option<f64>,
}

/// Everything a sequential run produces.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub num_tasks: usize,
    /// `loss_matrix[t][s]`: task-`t` eval loss after the full task-`s`
    /// pipeline (train, prune, finetune, freeze). `NaN` where `s < t`.
    pub loss_matrix: Vec<Vec<f64>>,
    pub acc_matrix: Vec<Vec<f64>>,
    /// `O_t` per task, `len = num_tasks - 1`.
    pub forgetting: Vec<f64>,
    /// Label-weighted `EO_t` per task, `len = num_tasks - 1`.
    pub expected_forgetting: Vec<f64>,
    pub deltas_per_task: Vec<ConnectivityReport>,
    /// Curvature at each post-task checkpoint, `len = num_tasks - 1`.
    pub lambda_max_per_task: Vec<f64>,
    /// Checkpoint-to-checkpoint parameter distance, `len = num_tasks - 1`.
    pub c_per_task: Vec<f64>,
    /// Expected-forgetting bound per task, `len = num_tasks - 1`; `NaN` when
    /// the curvature estimate is not positive.
    pub bound_values: Vec<f64>,
    /// End-of-run accuracy per task under its own subnetwork mask
    /// (weights of its own and earlier freezes only).
    pub masked_accuracy: Vec<f64>,
    pub checkpoints: Vec<TaskCheckpoint>,
    pub convergence_eps: f64,
    /// Set when the sequence aborted mid-run; earlier tasks remain recorded.
    pub failure: Option<String>,
}

impl RunRecord {
    /// Mean end-of-run accuracy over all tasks, each evaluated with its own
    /// subnetwork mask (the recall rule the freeze protocol is built around).
    pub fn average_accuracy(&self) -> f64 {
        let vals: Vec<f64> = self
            .masked_accuracy
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Runs the full sequential protocol over the tasks.
///
/// Per task: train free weights, record losses on all seen tasks, measure
/// connectivity on a held-out probe batch, pick layers per policy, prune by
/// magnitude, fine-tune the survivors, freeze them, re-record post-freeze
/// losses, checkpoint. All metrics (forgetting, expected forgetting,
/// curvature, bounds) are computed at the end from the checkpoints.
pub fn run_sequence(
    mut net: Network,
    tasks: &[TaskDataset],
    prune_cfg: &PruneConfig,
    train_cfg: &TrainConfig,
    opts: &SequenceOptions,
) -> Result<RunRecord> {
    if tasks.is_empty() {
        return Err(Error::Input("need at least one task".into()));
    }
    prune_cfg.validate()?;
    train_cfg.validate()?;
    if opts.probe_batch < 2 {
        return Err(Error::Config("probe_batch must be >= 2".into()));
    }
    for task in tasks {
        if task.input_dim != net.input_dim() {
            return Err(Error::Dimension(format!(
                "task {} has input_dim {}, network expects {}",
                task.task_id,
                task.input_dim,
                net.input_dim()
            )));
        }
        if task.num_classes > net.output_dim() {
            return Err(Error::Dimension(format!(
                "task {} has {} classes, network emits {}",
                task.task_id,
                task.num_classes,
                net.output_dim()
            )));
        }
    }

    let t_count = tasks.len();
    let num_layers = net.num_layers();
    let mut masks = MaskSet::for_network(&net);
    let nan_row = vec![f64::NAN; t_count];
    let mut loss_matrix = vec![nan_row.clone(); t_count];
    let mut acc_matrix = vec![nan_row; t_count];
    let mut deltas_per_task = Vec::with_capacity(t_count);
    let mut checkpoints: Vec<TaskCheckpoint> = Vec::with_capacity(t_count);
    let mut failure = None;

    'tasks: for (t, task) in tasks.iter().enumerate() {
        let outcome = match train_task(&mut net, &masks, task, train_cfg) {
            Ok(o) => o,
            Err(e) => {
                failure = Some(format!("task {t} training failed: {e}"));
                break 'tasks;
            }
        };
        // post-train losses on everything seen so far
        for (s, seen) in tasks.iter().enumerate().take(t + 1) {
            let (loss, acc) = eval_task(&net, &masks, seen, EvalMode::CurrentWeights)?;
            loss_matrix[s][t] = loss;
            acc_matrix[s][t] = acc;
        }

        // connectivity prior to pruning, on the held-out probe
        let probe_rows: Vec<usize> = (0..task.n_eval().min(opts.probe_batch)).collect();
        let probe_inputs = task.eval_inputs.select_rows(&probe_rows);
        let probe_labels: Vec<usize> = probe_rows.iter().map(|&i| task.eval_labels[i]).collect();
        let report = if num_layers >= 2 {
            let (_, trace) = forward(&net, &probe_inputs)?;
            connectivity_report(
                &trace.post,
                &probe_labels,
                task.num_classes,
                t,
                opts.mode,
                opts.eta_threshold,
            )?
        } else {
            ConnectivityReport {
                task_id: t,
                pairs: Vec::new(),
                eta_threshold: opts.eta_threshold,
            }
        };

        let selected = select_layers(&report, prune_cfg.policy, prune_cfg.n)?;
        let fractions = layer_fractions(prune_cfg, &selected, num_layers);
        for l in 0..num_layers {
            if opts.exempt_final_layer && l + 1 == num_layers {
                continue;
            }
            magnitude_prune(&mut net.layer_mut(l).weights, &mut masks, l, fractions[l])?;
        }
        deltas_per_task.push(report);

        if train_cfg.finetune_epochs > 0 {
            if let Err(e) = train_with_epochs(&mut net, &masks, task, train_cfg, train_cfg.finetune_epochs)
            {
                failure = Some(format!("task {t} finetune failed: {e}"));
                break 'tasks;
            }
        }
        freeze_survivors(&mut masks, owner_of_task(t))?;

        // re-record the post-freeze state; this is the column that persists
        for (s, seen) in tasks.iter().enumerate().take(t + 1) {
            let (loss, acc) = eval_task(&net, &masks, seen, EvalMode::CurrentWeights)?;
            loss_matrix[s][t] = loss;
            acc_matrix[s][t] = acc;
        }
        checkpoints.push(TaskCheckpoint {
            task_id: t,
            network: net.clone(),
            masks: masks.clone(),
            status: outcome.status,
            final_improvement: outcome.final_improvement,
        });
    }

    // end-of-run metrics from the checkpoints
    let completed = checkpoints.len();
    let mut masked_accuracy = Vec::with_capacity(completed);
    if let Some(last) = checkpoints.last() {
        for task in tasks.iter().take(completed) {
            let (_, acc) = eval_task(&last.network, &last.masks, task, EvalMode::TaskMask)?;
            masked_accuracy.push(acc);
        }
    }
    let forgetting_vals = forgetting(&loss_matrix[..completed.max(1)]);
    let metric_count = completed.saturating_sub(1);
    let mut expected = Vec::with_capacity(metric_count);
    let mut lambdas = Vec::with_capacity(metric_count);
    let mut cs = Vec::with_capacity(metric_count);
    let mut bounds = Vec::with_capacity(metric_count);
    for t in 0..metric_count {
        let task = &tasks[t];
        expected.push(expected_forgetting(
            &checkpoints[t].network,
            &checkpoints[t + 1].network,
            task,
            opts.encoding,
        )?);
        let wa = checkpoints[t].network.flatten();
        let wb = checkpoints[t + 1].network.flatten();
        let c: f64 = wa
            .iter()
            .zip(&wb)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        cs.push(c);
        let probe_rows: Vec<usize> = (0..task.n_eval().min(opts.probe_batch)).collect();
        let oracle = NetworkOracle::new(
            checkpoints[t].network.clone(),
            task.eval_inputs.select_rows(&probe_rows),
            probe_rows.iter().map(|&i| task.eval_labels[i]).collect(),
        )?;
        let est = theory::lambda_max(
            &oracle,
            &wa,
            opts.lambda_iters,
            opts.lambda_tol,
            train_cfg.seed.wrapping_add(t as u64),
        )?;
        lambdas.push(est.lambda_max);
        if est.lambda_max > 0.0 {
            let weights = opts.encoding.weights(&task.eval_labels);
            bounds.push(theory::expected_forgetting_bound(
                est.lambda_max,
                c,
                train_cfg.convergence_eps,
                &weights,
            )?);
        } else {
            log::warn!("task {t}: curvature estimate {} not positive, bound undefined", est.lambda_max);
            bounds.push(f64::NAN);
        }
    }

    Ok(RunRecord {
        num_tasks: t_count,
        loss_matrix,
        acc_matrix,
        forgetting: forgetting_vals,
        expected_forgetting: expected,
        deltas_per_task,
        lambda_max_per_task: lambdas,
        c_per_task: cs,
        bound_values: bounds,
        masked_accuracy,
        checkpoints,
        convergence_eps: train_cfg.convergence_eps,
        failure,
    })
}
