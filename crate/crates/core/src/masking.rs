//! Per-task freeze masks, magnitude pruning over free weights, and the
//! connectivity-guided per-layer pruning-fraction policy.
//!
//! Mask semantics per weight: `frozen_owner == 0` means free, `t > 0` means
//! permanently owned by task `t`. `pruned_now` marks weights zeroed during the
//! current task; they become free capacity again once the task's survivors
//! are frozen.

use std::collections::BTreeSet;

use crate::connectivity::ConnectivityReport;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct LayerMask {
    rows: usize,
    cols: usize,
    frozen_owner: Vec<u32>,
    pruned_now: Vec<bool>,
}

impl LayerMask {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            frozen_owner: vec![0; rows * cols],
            pruned_now: vec![false; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.frozen_owner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frozen_owner.is_empty()
    }

    pub fn frozen_owner(&self, idx: usize) -> u32 {
        self.frozen_owner[idx]
    }

    pub fn pruned_now(&self, idx: usize) -> bool {
        self.pruned_now[idx]
    }

    fn free_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.frozen_owner[i] == 0 && !self.pruned_now[i])
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct MaskSet {
    layers: Vec<LayerMask>,
    last_frozen_task: u32,
}

impl MaskSet {
    /// An all-free mask set matching the network's weight shapes.
    pub fn for_network(net: &Network) -> Self {
        Self::from_shapes(&net.layer_shapes())
    }

    pub fn from_shapes(shapes: &[(usize, usize)]) -> Self {
        Self {
            layers: shapes.iter().map(|&(r, c)| LayerMask::new(r, c)).collect(),
            last_frozen_task: 0,
        }
    }

    /// An all-free mask set except layer `l`, which is entirely frozen
    /// (owner 1). Used by the frozen-layer probe.
    pub fn with_frozen_layer(net: &Network, l: usize) -> Result<Self> {
        let mut masks = Self::for_network(net);
        if l >= masks.layers.len() {
            return Err(Error::Input(format!(
                "layer {l} out of range for {} layers",
                masks.layers.len()
            )));
        }
        for owner in &mut masks.layers[l].frozen_owner {
            *owner = 1;
        }
        masks.last_frozen_task = 1;
        Ok(masks)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, l: usize) -> &LayerMask {
        &self.layers[l]
    }

    pub fn last_frozen_task(&self) -> u32 {
        self.last_frozen_task
    }

    pub fn check_compatible(&self, shapes: &[(usize, usize)]) -> Result<()> {
        if shapes.len() != self.layers.len() {
            return Err(Error::Dimension(format!(
                "mask set has {} layers, network has {}",
                self.layers.len(),
                shapes.len()
            )));
        }
        for (l, (mask, &(r, c))) in self.layers.iter().zip(shapes).enumerate() {
            if mask.rows != r || mask.cols != c {
                return Err(Error::Dimension(format!(
                    "mask layer {l} is {}x{}, weights are {r}x{c}",
                    mask.rows, mask.cols
                )));
            }
        }
        Ok(())
    }

    pub fn is_trainable(&self, layer: usize, idx: usize) -> bool {
        let m = &self.layers[layer];
        m.frozen_owner[idx] == 0 && !m.pruned_now[idx]
    }

    /// Freezes every weight under the given owner; test/setup helper.
    pub fn freeze_all(&mut self, owner: u32) -> Result<()> {
        if owner == 0 {
            return Err(Error::Input("owner 0 means free".into()));
        }
        for layer in &mut self.layers {
            for o in &mut layer.frozen_owner {
                if *o == 0 {
                    *o = owner;
                }
            }
        }
        self.last_frozen_task = self.last_frozen_task.max(owner);
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn set_frozen_owner_for_test(&mut self, layer: usize, idx: usize, owner: u32) {
        self.layers[layer].frozen_owner[idx] = owner;
    }

    /// Fraction of layer weights frozen by tasks `1..=task_id`.
    pub fn sparsity(&self, layer: usize, task_id: u32) -> f64 {
        let m = &self.layers[layer];
        let frozen = m
            .frozen_owner
            .iter()
            .filter(|&&o| o != 0 && o <= task_id)
            .count();
        frozen as f64 / m.len() as f64
    }

    /// Counts per layer: (frozen by any task so far, free, pruned_now).
    pub fn layer_counts(&self, layer: usize) -> (usize, usize, usize) {
        let m = &self.layers[layer];
        let frozen = m.frozen_owner.iter().filter(|&&o| o != 0).count();
        let pruned = m.pruned_now.iter().filter(|&&p| p).count();
        (frozen, m.len() - frozen - pruned, pruned)
    }
}

/// Which layers receive the reduced pruning fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrunePolicy {
    /// The `n` most connected layers.
    Top,
    /// The `n` least connected layers.
    Bottom,
    /// Every layer that has a connectivity score.
    All,
    /// No layer; plain uniform pruning.
    None,
}

impl PrunePolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "top" => Ok(Self::Top),
            "bottom" => Ok(Self::Bottom),
            "all" => Ok(Self::All),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!(
                "unknown policy '{other}' (expected top|bottom|all|none)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Top => "top",
            Self::Bottom => "bottom",
            Self::All => "all",
            Self::None => "none",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PruneConfig {
    /// Baseline fraction of free weights pruned per layer.
    pub base_fraction: f64,
    /// Number of layers selected for reduced pruning.
    pub n: usize,
    /// Pruning reduction for selected layers, in percentage points.
    pub k: f64,
    pub policy: PrunePolicy,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            base_fraction: 0.8,
            n: 0,
            k: 0.0,
            policy: PrunePolicy::None,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.base_fraction) {
            return Err(Error::Config(format!(
                "base_fraction {} outside [0,1]",
                self.base_fraction
            )));
        }
        if !self.k.is_finite() || self.k < 0.0 {
            return Err(Error::Config(format!("k must be a nonnegative percentage, got {}", self.k)));
        }
        Ok(())
    }
}

/// Picks the layers whose pruning is reduced, from the report's per-layer
/// connectivity scores. Ties break toward the lower layer index.
pub fn select_layers(
    report: &ConnectivityReport,
    policy: PrunePolicy,
    n: usize,
) -> Result<BTreeSet<usize>> {
    let scored: Vec<(usize, f64)> = report
        .pairs
        .iter()
        .map(|p| (p.lower_layer, p.delta))
        .collect();
    match policy {
        PrunePolicy::None => Ok(BTreeSet::new()),
        PrunePolicy::All => Ok(scored.iter().map(|&(l, _)| l).collect()),
        PrunePolicy::Top | PrunePolicy::Bottom => {
            if n > scored.len() {
                return Err(Error::Config(format!(
                    "n={n} exceeds the {} layers with connectivity scores",
                    scored.len()
                )));
            }
            let mut order = scored;
            match policy {
                PrunePolicy::Top => {
                    order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)))
                }
                _ => order.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0))),
            }
            Ok(order.into_iter().take(n).map(|(l, _)| l).collect())
        }
    }
}

/// Per-layer pruning fractions: `base - k/100` on selected layers, `base`
/// elsewhere, clamped to `[0,1]`.
pub fn layer_fractions(cfg: &PruneConfig, selected: &BTreeSet<usize>, num_layers: usize) -> Vec<f64> {
    (0..num_layers)
        .map(|l| {
            let raw = if selected.contains(&l) {
                cfg.base_fraction - cfg.k / 100.0
            } else {
                cfg.base_fraction
            };
            let clamped = raw.clamp(0.0, 1.0);
            if clamped != raw {
                log::warn!("layer {l}: pruning fraction {raw} clamped to {clamped}");
            }
            clamped
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneStatus {
    Pruned { num_pruned: usize },
    /// The layer had no free weights; nothing was marked.
    NoFreeWeights,
}

/// Magnitude pruning over the free weights of one layer.
///
/// Marks `floor(fraction * num_free)` free entries of smallest `|w|` as
/// `pruned_now` and zeroes them. Ties break by flat index. Frozen weights are
/// untouched.
pub fn magnitude_prune(
    weights: &mut Tensor,
    masks: &mut MaskSet,
    layer: usize,
    fraction: f64,
) -> Result<PruneStatus> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("prune fraction {fraction} outside [0,1]")));
    }
    let mask = &masks.layers[layer];
    if weights.len() != mask.len() {
        return Err(Error::Dimension(format!(
            "weights have {} entries, mask layer {layer} has {}",
            weights.len(),
            mask.len()
        )));
    }
    let free = mask.free_indices();
    if free.is_empty() {
        log::warn!("layer {layer}: no free weights to prune");
        return Ok(PruneStatus::NoFreeWeights);
    }
    let target = (fraction * free.len() as f64).floor() as usize;
    let mut by_magnitude = free;
    let w = weights.data();
    by_magnitude.sort_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs()).then(a.cmp(&b)));
    let mask = &mut masks.layers[layer];
    let w = weights.data_mut();
    for &i in by_magnitude.iter().take(target) {
        mask.pruned_now[i] = true;
        w[i] = 0.0;
    }
    Ok(PruneStatus::Pruned { num_pruned: target })
}

/// Freezes every free, not-pruned weight under `task_id` and resets
/// `pruned_now`, returning pruned capacity to the free pool.
pub fn freeze_survivors(masks: &mut MaskSet, task_id: u32) -> Result<()> {
    if task_id == 0 {
        return Err(Error::Input("task_id 0 is reserved for free weights".into()));
    }
    if task_id <= masks.last_frozen_task {
        return Err(Error::State(format!(
            "task {task_id} already frozen (last frozen: {})",
            masks.last_frozen_task
        )));
    }
    for layer in &mut masks.layers {
        for i in 0..layer.len() {
            if layer.frozen_owner[i] == 0 {
                if layer.pruned_now[i] {
                    layer.pruned_now[i] = false;
                } else {
                    layer.frozen_owner[i] = task_id;
                }
            }
        }
    }
    masks.last_frozen_task = task_id;
    Ok(())
}
