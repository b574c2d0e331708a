//! Task-conditioned connectivity between adjacent layers.
//!
//! For standardized filter columns `a` (layer `l`) and `b` (layer `l+1`) the
//! pairwise score is the absolute prior-weighted per-class correlation
//! `|sum_y pi(y) * mean_{i in class y}(a_i * b_i)|`, and a layer pair's
//! `delta` is the mean of that score over all filter pairs. Scores live in
//! `[0,1]`; `delta` ranks layers for the pruning policy.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Post-activation values of one layer on a probe batch, with labels.
#[derive(Debug, Clone)]
pub struct ActivationSample {
    pub layer_index: usize,
    /// `num_examples x num_filters`.
    pub values: Tensor,
    pub labels: Vec<usize>,
}

impl ActivationSample {
    pub fn new(layer_index: usize, values: Tensor, labels: Vec<usize>) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(Error::Dimension("activations must be 2-D".into()));
        }
        if values.rows() != labels.len() {
            return Err(Error::Input(format!(
                "{} activation rows vs {} labels",
                values.rows(),
                labels.len()
            )));
        }
        Ok(Self {
            layer_index,
            values,
            labels,
        })
    }

    pub fn num_filters(&self) -> usize {
        self.values.cols()
    }
}

/// Output of [`standardize`]: same layout as the input sample, plus a flag per
/// filter marking zero-variance (degenerate) columns.
#[derive(Debug, Clone)]
pub struct StandardizedActivations {
    pub layer_index: usize,
    pub values: Tensor,
    pub labels: Vec<usize>,
    pub degenerate: Vec<bool>,
}

impl StandardizedActivations {
    pub fn num_filters(&self) -> usize {
        self.values.cols()
    }

    pub fn filter_column(&self, i: usize) -> Vec<f64> {
        self.values.col(i)
    }
}

/// Connectivity of one adjacent layer pair, keyed by the lower layer.
#[derive(Debug, Clone)]
pub struct LayerPairConnectivity {
    pub lower_layer: usize,
    /// Mean of `pair_matrix`; in `[0,1]`.
    pub delta: f64,
    /// `M_l x M_{l+1}` of absolute correlations.
    pub pair_matrix: Tensor,
}

/// Per-task connectivity over all adjacent layer pairs.
#[derive(Debug, Clone)]
pub struct ConnectivityReport {
    pub task_id: usize,
    pub pairs: Vec<LayerPairConnectivity>,
    /// Reporting threshold only; never gates behavior.
    pub eta_threshold: Option<f64>,
}

impl ConnectivityReport {
    pub fn deltas(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.delta).collect()
    }

    pub fn mean_delta(&self) -> f64 {
        if self.pairs.is_empty() {
            return f64::NAN;
        }
        self.pairs.iter().map(|p| p.delta).sum::<f64>() / self.pairs.len() as f64
    }
}

/// Empirical class frequencies over `0..num_classes`.
pub fn empirical_priors(labels: &[usize], num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; num_classes];
    for &y in labels {
        counts[y] += 1;
    }
    let n = labels.len() as f64;
    counts.iter().map(|&c| c as f64 / n).collect()
}

fn class_groups(labels: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        groups[y].push(i);
    }
    groups
        .into_iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .collect()
}

/// Standardizes each filter column to empirical mean 0 and population
/// variance 1, per class when `per_class` is set.
///
/// Zero-variance groups map to zeros and flag the filter as degenerate, so a
/// dead unit contributes no correlation anywhere. Any nonempty conditioning
/// group with fewer than 2 examples is an error.
pub fn standardize(acts: &ActivationSample, per_class: bool) -> Result<StandardizedActivations> {
    let n = acts.values.rows();
    let m = acts.values.cols();
    let groups: Vec<(usize, Vec<usize>)> = if per_class {
        class_groups(&acts.labels)
    } else {
        vec![(0, (0..n).collect())]
    };
    for (y, g) in &groups {
        if g.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "conditioning group for class {y} has {} example(s), need at least 2",
                g.len()
            )));
        }
    }
    let mut out = acts.values.clone();
    let mut degenerate = vec![false; m];
    for filter in 0..m {
        for (_, idx) in &groups {
            let count = idx.len() as f64;
            let mut mean = 0.0;
            for &r in idx {
                mean += acts.values.at2(r, filter);
            }
            mean /= count;
            let mut var = 0.0;
            for &r in idx {
                let d = acts.values.at2(r, filter) - mean;
                var += d * d;
            }
            var /= count;
            if var == 0.0 {
                degenerate[filter] = true;
                for &r in idx {
                    out.set2(r, filter, 0.0);
                }
            } else {
                let sd = var.sqrt();
                for &r in idx {
                    out.set2(r, filter, (acts.values.at2(r, filter) - mean) / sd);
                }
            }
        }
    }
    Ok(StandardizedActivations {
        layer_index: acts.layer_index,
        values: out,
        labels: acts.labels.clone(),
        degenerate,
    })
}

/// Absolute prior-weighted per-class correlation of two standardized columns,
/// clipped into `[0,1]`.
pub fn pearson_abs(a: &[f64], b: &[f64], labels: &[usize], priors: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() != labels.len() {
        return Err(Error::Input(format!(
            "column/label lengths differ: {} vs {} vs {}",
            a.len(),
            b.len(),
            labels.len()
        )));
    }
    let prior_sum: f64 = priors.iter().sum();
    if (prior_sum - 1.0).abs() > 1e-6 {
        return Err(Error::Input(format!("priors sum to {prior_sum}, expected 1")));
    }
    let mut rho = 0.0;
    for (y, idx) in class_groups(labels) {
        let pi = *priors.get(y).ok_or_else(|| {
            Error::Input(format!("label {y} has no prior (priors cover {})", priors.len()))
        })?;
        let mut acc = 0.0;
        for &r in &idx {
            acc += a[r] * b[r];
        }
        rho += pi * acc / idx.len() as f64;
    }
    Ok(rho.abs().min(1.0))
}

/// Mean absolute correlation over all filter pairs of two standardized layers.
///
/// Returns the mean and the `M_l x M_{l+1}` pair matrix; the mean is computed
/// as the flat sum over the matrix divided by the pair count.
pub fn layer_connectivity(
    lower: &StandardizedActivations,
    upper: &StandardizedActivations,
    priors: &[f64],
) -> Result<(f64, Tensor)> {
    if lower.values.rows() != upper.values.rows() || lower.labels != upper.labels {
        return Err(Error::Input(
            "lower and upper activations must come from the same example set".into(),
        ));
    }
    let ml = lower.num_filters();
    let mu = upper.num_filters();
    let mut pair = Tensor::zeros(vec![ml, mu]);
    let lower_cols: Vec<Vec<f64>> = (0..ml).map(|i| lower.filter_column(i)).collect();
    let upper_cols: Vec<Vec<f64>> = (0..mu).map(|j| upper.filter_column(j)).collect();
    let mut total = 0.0;
    for i in 0..ml {
        for j in 0..mu {
            let rho = pearson_abs(&lower_cols[i], &upper_cols[j], &lower.labels, priors)?;
            pair.set2(i, j, rho);
            total += rho;
        }
    }
    Ok((total / (ml * mu) as f64, pair))
}

/// Layer indices in order of decreasing delta; ties break toward the lower
/// layer index.
pub fn rank_layers(report: &ConnectivityReport) -> Vec<usize> {
    let mut order: Vec<(usize, f64)> = report
        .pairs
        .iter()
        .map(|p| (p.lower_layer, p.delta))
        .collect();
    order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    order.into_iter().map(|(l, _)| l).collect()
}

/// Threshold test for reporting: connectivity at or above `eta`.
pub fn is_sensitive(delta: f64, eta: f64) -> Result<bool> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Config(format!("eta {eta} outside [0,1]")));
    }
    Ok(delta >= eta)
}

/// How activations are conditioned when measuring connectivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectivityMode {
    /// Standardize and correlate within each class, prior-weighted (default).
    PerClass,
    /// Ignore labels; one pooled group.
    Pooled,
}

/// Builds the full per-task report from per-layer activations on a probe
/// batch. `acts[l]` is layer `l`'s post-activation tensor on the same rows.
pub fn connectivity_report(
    acts: &[Tensor],
    labels: &[usize],
    num_classes: usize,
    task_id: usize,
    mode: ConnectivityMode,
    eta_threshold: Option<f64>,
) -> Result<ConnectivityReport> {
    if acts.len() < 2 {
        return Err(Error::Input(format!(
            "need at least 2 layers of activations, got {}",
            acts.len()
        )));
    }
    let (cond_labels, priors, per_class): (Vec<usize>, Vec<f64>, bool) = match mode {
        ConnectivityMode::PerClass => (
            labels.to_vec(),
            empirical_priors(labels, num_classes),
            true,
        ),
        ConnectivityMode::Pooled => (vec![0; labels.len()], vec![1.0], false),
    };
    let standardized: Vec<StandardizedActivations> = acts
        .iter()
        .enumerate()
        .map(|(l, t)| {
            standardize(
                &ActivationSample::new(l, t.clone(), cond_labels.clone())?,
                per_class,
            )
        })
        .collect::<Result<_>>()?;
    let mut pairs = Vec::with_capacity(acts.len() - 1);
    for l in 0..acts.len() - 1 {
        let (delta, pair_matrix) =
            layer_connectivity(&standardized[l], &standardized[l + 1], &priors)?;
        pairs.push(LayerPairConnectivity {
            lower_layer: l,
            delta,
            pair_matrix,
        });
    }
    Ok(ConnectivityReport {
        task_id,
        pairs,
        eta_threshold,
    })
}
