//! Numerical verification machinery: finite-difference gradients,
//! Hessian-vector products, extreme-eigenvalue estimation, Taylor residuals,
//! the Frobenius pruning bound, and the expected-forgetting bound.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{backward, forward, loss_ce, Network};
use crate::protocol::RunRecord;
use crate::tensor::Tensor;

/// A deterministic loss landscape over a flat parameter vector.
pub trait LossOracle {
    fn dim(&self) -> usize;
    fn loss(&self, params: &[f64]) -> f64;
    /// Analytic gradient at `params`; the default falls back to central
    /// differences, so implementors should override it.
    fn grad(&self, params: &[f64]) -> Vec<f64> {
        numerical_grad(self, params, 1e-5)
    }
}

/// `loss(w) = 0.5 * w' diag(d) w + g' w`; eigenvalues of the Hessian are `d`.
pub struct QuadraticOracle {
    pub hessian_diag: Vec<f64>,
    pub linear: Vec<f64>,
}

impl QuadraticOracle {
    pub fn diagonal(hessian_diag: Vec<f64>) -> Self {
        let n = hessian_diag.len();
        Self {
            hessian_diag,
            linear: vec![0.0; n],
        }
    }
}

impl LossOracle for QuadraticOracle {
    fn dim(&self) -> usize {
        self.hessian_diag.len()
    }

    fn loss(&self, params: &[f64]) -> f64 {
        params
            .iter()
            .zip(&self.hessian_diag)
            .zip(&self.linear)
            .map(|((&w, &d), &g)| 0.5 * d * w * w + g * w)
            .sum()
    }

    fn grad(&self, params: &[f64]) -> Vec<f64> {
        params
            .iter()
            .zip(&self.hessian_diag)
            .zip(&self.linear)
            .map(|((&w, &d), &g)| d * w + g)
            .collect()
    }
}

/// Cross-entropy loss of a fixed topology on a fixed batch, as a function of
/// the flat parameter vector (layout of [`Network::flatten`]).
pub struct NetworkOracle {
    template: Network,
    inputs: Tensor,
    labels: Vec<usize>,
}

impl NetworkOracle {
    pub fn new(template: Network, inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::Input(format!(
                "{} rows vs {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        Ok(Self {
            template,
            inputs,
            labels,
        })
    }

    fn instantiate(&self, params: &[f64]) -> Network {
        let mut net = self.template.clone();
        net.unflatten_from(params).expect("oracle dim checked");
        net
    }
}

impl LossOracle for NetworkOracle {
    fn dim(&self) -> usize {
        self.template.num_params()
    }

    fn loss(&self, params: &[f64]) -> f64 {
        let net = self.instantiate(params);
        let (logits, _) = forward(&net, &self.inputs).expect("shapes fixed at construction");
        loss_ce(&logits, &self.labels).expect("labels fixed at construction").0
    }

    fn grad(&self, params: &[f64]) -> Vec<f64> {
        let net = self.instantiate(params);
        let (logits, trace) = forward(&net, &self.inputs).expect("shapes fixed at construction");
        let (_, logit_grad) = loss_ce(&logits, &self.labels).expect("labels fixed");
        let grads = backward(&net, &trace, &logit_grad).expect("trace from same net");
        let mut flat = Vec::with_capacity(self.dim());
        for g in &grads.weights {
            flat.extend_from_slice(g.data());
        }
        if let Some(biases) = &grads.biases {
            for b in biases {
                flat.extend_from_slice(b);
            }
        }
        flat
    }
}

/// Central-difference gradient: `(loss(w + h e_i) - loss(w - h e_i)) / 2h`.
pub fn numerical_grad<O: LossOracle + ?Sized>(oracle: &O, params: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0, "step must be positive");
    let mut work = params.to_vec();
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + h;
        let plus = oracle.loss(&work);
        work[i] = orig - h;
        let minus = oracle.loss(&work);
        work[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Hessian-vector product by central differences of the oracle gradient, with
/// the step auto-scaled to `h0 / ||v||`.
pub fn hvp<O: LossOracle + ?Sized>(oracle: &O, params: &[f64], v: &[f64], h0: f64) -> Result<Vec<f64>> {
    if v.len() != params.len() {
        return Err(Error::Dimension(format!(
            "direction has {} entries, parameters {}",
            v.len(),
            params.len()
        )));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Input("hvp direction must have positive norm".into()));
    }
    let h = h0 / norm;
    let plus: Vec<f64> = params.iter().zip(v).map(|(&w, &d)| w + h * d).collect();
    let minus: Vec<f64> = params.iter().zip(v).map(|(&w, &d)| w - h * d).collect();
    let gp = oracle.grad(&plus);
    let gm = oracle.grad(&minus);
    Ok(gp
        .iter()
        .zip(&gm)
        .map(|(&a, &b)| (a - b) / (2.0 * h))
        .collect())
}

/// Dominant-eigenvalue estimate with convergence diagnostics.
#[derive(Debug, Clone)]
pub struct SpectrumEstimate {
    pub lambda_max: f64,
    pub iterations_used: usize,
    /// `||H v - lambda v||` at the returned eigenvector.
    pub residual: f64,
    pub converged: bool,
}

/// Maximum Hessian eigenvalue by shifted power iteration on `hvp`.
///
/// Iterates on `H + cI` with the safeguard shift `c = ||H v0|| / ||v0||` so
/// negative spectra do not trap the iteration. If a pass settles on a
/// negative eigenvalue, the shift is enlarged past its magnitude and a fresh
/// pass (with its own `iters` budget) runs; `iterations_used` reports the
/// total. On non-convergence the best estimate is returned with
/// `converged = false`.
pub fn lambda_max<O: LossOracle + ?Sized>(
    oracle: &O,
    params: &[f64],
    iters: usize,
    tol: f64,
    seed: u64,
) -> Result<SpectrumEstimate> {
    if iters == 0 {
        return Err(Error::Config("need at least one iteration".into()));
    }
    let n = params.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    normalize(&mut v);

    let hv0 = hvp(oracle, params, &v, 1e-4)?;
    let mut shift = norm(&hv0).max(1e-12);
    let mut total_used = 0usize;
    let mut estimate = rayleigh(oracle, params, &v)?;
    let mut residual = f64::INFINITY;

    for _pass in 0..3 {
        let mut used = 0usize;
        while used < iters {
            used += 1;
            let hv = hvp(oracle, params, &v, 1e-4)?;
            // w = (H + shift I) v
            let mut w: Vec<f64> = hv.iter().zip(&v).map(|(&h, &x)| h + shift * x).collect();
            let wn = norm(&w);
            if wn == 0.0 {
                // v is in the kernel of the shifted operator; restart
                v = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                normalize(&mut v);
                continue;
            }
            for x in &mut w {
                *x /= wn;
            }
            v = w;
            let hv = hvp(oracle, params, &v, 1e-4)?;
            estimate = dot(&v, &hv);
            residual = hv
                .iter()
                .zip(&v)
                .map(|(&h, &x)| (h - estimate * x).powi(2))
                .sum::<f64>()
                .sqrt();
            if residual <= tol * estimate.abs().max(1.0) {
                break;
            }
        }
        total_used += used;
        if estimate >= 0.0 {
            break;
        }
        // Settled on a dominant negative eigenvalue; push it below the
        // positive end of the spectrum and go again.
        shift += estimate.abs() * 1.5 + 1e-9;
        residual = f64::INFINITY;
        // restart from a fresh direction so the old eigenvector does not pin
        // the iteration
        v = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        normalize(&mut v);
    }
    let converged = residual <= tol * estimate.abs().max(1.0);
    if !converged {
        log::warn!("power iteration: residual {residual} after {total_used} iterations");
    }
    Ok(SpectrumEstimate {
        lambda_max: estimate,
        iterations_used: total_used,
        residual,
        converged,
    })
}

fn rayleigh<O: LossOracle + ?Sized>(oracle: &O, params: &[f64], v: &[f64]) -> Result<f64> {
    let hv = hvp(oracle, params, v, 1e-4)?;
    Ok(dot(v, &hv) / dot(v, v))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: &mut [f64]) {
    let n = norm(a).max(1e-300);
    for x in a.iter_mut() {
        *x /= n;
    }
}

/// Second-order Taylor remainder of the loss at `w` expanded around `w_star`,
/// with the quadratic term evaluated through [`hvp`].
pub fn taylor_residual<O: LossOracle + ?Sized>(oracle: &O, w_star: &[f64], w: &[f64], h0: f64) -> Result<f64> {
    if w.len() != w_star.len() {
        return Err(Error::Dimension("parameter vectors differ in length".into()));
    }
    let delta: Vec<f64> = w.iter().zip(w_star).map(|(&a, &b)| a - b).collect();
    let l0 = oracle.loss(w_star);
    let l1 = oracle.loss(w);
    if delta.iter().all(|&d| d == 0.0) {
        return Ok((l1 - l0).abs());
    }
    let g = oracle.grad(w_star);
    let hd = hvp(oracle, w_star, &delta, h0)?;
    let linear = dot(&g, &delta);
    let quad = 0.5 * dot(&delta, &hd);
    Ok((l1 - l0 - linear - quad).abs())
}

/// Loss-change bound for a one-layer weight perturbation:
/// `(||W_l - W~_l||_F / ||W_l||_F) * prod_j ||W_j||_F`, against the actual
/// `|loss(pruned) - loss(original)|` on a fixed batch.
pub fn frobenius_prune_bound(
    net: &Network,
    pruned: &Network,
    layer: usize,
    inputs: &Tensor,
    labels: &[usize],
) -> Result<(f64, f64)> {
    if net.num_layers() != pruned.num_layers() {
        return Err(Error::Input("networks have different depths".into()));
    }
    if layer >= net.num_layers() {
        return Err(Error::Input(format!("layer {layer} out of range")));
    }
    for l in 0..net.num_layers() {
        if l != layer && net.layer(l).weights.data() != pruned.layer(l).weights.data() {
            return Err(Error::Input(format!(
                "networks differ outside layer {layer} (layer {l})"
            )));
        }
    }
    let w = &net.layer(layer).weights;
    let wt = &pruned.layer(layer).weights;
    if w.shape() != wt.shape() {
        return Err(Error::Input("pruned layer changed shape".into()));
    }
    let mut diff = 0.0;
    for (a, b) in w.data().iter().zip(wt.data()) {
        diff += (a - b) * (a - b);
    }
    let diff = diff.sqrt();
    let denom = w.frobenius_norm();
    let product: f64 = (0..net.num_layers())
        .map(|l| net.layer(l).weights.frobenius_norm())
        .product();
    let bound = if denom == 0.0 {
        0.0
    } else {
        diff / denom * product
    };
    let (logits_a, _) = forward(net, inputs)?;
    let (logits_b, _) = forward(pruned, inputs)?;
    let (la, _) = loss_ce(&logits_a, labels)?;
    let (lb, _) = loss_ce(&logits_b, labels)?;
    Ok((bound, (lb - la).abs()))
}

/// Expected-forgetting bound `0.5 * mean(y) * lambda * (C + C_eps/lambda)^2`
/// with `C_eps = max(eps, 2 sqrt(eps))`.
pub fn expected_forgetting_bound(
    lambda_max: f64,
    c: f64,
    eps: f64,
    label_weights: &[f64],
) -> Result<f64> {
    if !(lambda_max > 0.0) {
        return Err(Error::Input(format!("lambda_max must be positive, got {lambda_max}")));
    }
    if !(eps > 0.0) {
        return Err(Error::Input(format!("eps must be positive, got {eps}")));
    }
    if label_weights.is_empty() {
        return Err(Error::Input("need at least one label weight".into()));
    }
    let mean_y = label_weights.iter().sum::<f64>() / label_weights.len() as f64;
    let c_eps = eps.max(2.0 * eps.sqrt());
    let reach = c + c_eps / lambda_max;
    Ok(0.5 * mean_y * lambda_max * reach * reach)
}

pub fn c_epsilon(eps: f64) -> f64 {
    eps.max(2.0 * eps.sqrt())
}

/// Correlation between per-task mean connectivity and measured forgetting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorrOutcome {
    Defined { pearson: f64, spearman: f64 },
    /// One of the series has zero variance.
    Undefined,
}

pub fn connectivity_forgetting_corr(record: &RunRecord) -> Result<CorrOutcome> {
    let t = record.deltas_per_task.len();
    if t < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 tasks, record has {t}"
        )));
    }
    // forgetting exists for tasks 0..t-1
    let forgetting = &record.forgetting;
    let deltas: Vec<f64> = record
        .deltas_per_task
        .iter()
        .take(forgetting.len())
        .map(|r| r.mean_delta())
        .collect();
    correlations(&deltas, forgetting)
}

/// Pearson and Spearman correlation of two equal-length series.
pub fn correlations(xs: &[f64], ys: &[f64]) -> Result<CorrOutcome> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Input(format!(
            "need two equal series of length >= 2, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let p = match pearson(xs, ys) {
        Some(v) => v,
        None => return Ok(CorrOutcome::Undefined),
    };
    let rx = ranks(xs);
    let ry = ranks(ys);
    let s = match pearson(&rx, &ry) {
        Some(v) => v,
        None => return Ok(CorrOutcome::Undefined),
    };
    Ok(CorrOutcome::Defined {
        pearson: p,
        spearman: s,
    })
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        dx += (x - mx) * (x - mx);
        dy += (y - my) * (y - my);
    }
    if dx == 0.0 || dy == 0.0 {
        return None;
    }
    Some(num / (dx * dy).sqrt())
}

/// Average ranks (ties share the mean rank), 1-based.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec};

    #[test]
    fn numerical_grad_of_half_norm_squared_is_identity() {
        let oracle = QuadraticOracle::diagonal(vec![1.0; 5]);
        let w = [0.3, -1.2, 0.0, 2.5, -0.7];
        let g = numerical_grad(&oracle, &w, 1e-5);
        for (a, b) in g.iter().zip(&w) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn numerical_grad_of_constant_loss_is_zero() {
        struct Flat;
        impl LossOracle for Flat {
            fn dim(&self) -> usize {
                3
            }
            fn loss(&self, _: &[f64]) -> f64 {
                4.2
            }
        }
        let g = numerical_grad(&Flat, &[1.0, 2.0, 3.0], 1e-4);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_numerical_grad_on_tiny_net() {
        let net = Network::init(
            &[
                LayerSpec { in_dim: 3, out_dim: 4, activation: Activation::Tanh },
                LayerSpec { in_dim: 4, out_dim: 2, activation: Activation::SoftmaxOutput },
            ],
            21,
            false,
        )
        .unwrap();
        let inputs = Tensor::new(vec![3, 3], vec![0.2, -0.5, 0.8, 1.1, 0.4, -0.9, -0.3, 0.6, 0.1])
            .unwrap();
        let labels = vec![0, 1, 0];
        let oracle = NetworkOracle::new(net.clone(), inputs, labels).unwrap();
        let w = net.flatten();
        let analytic = oracle.grad(&w);
        let numeric = numerical_grad(&oracle, &w, 1e-5);
        for (a, b) in analytic.iter().zip(&numeric) {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
            assert!(rel < 1e-6, "analytic {a} vs numeric {b}");
        }
    }

    #[test]
    fn hvp_on_diagonal_quadratic_picks_out_row() {
        let oracle = QuadraticOracle::diagonal(vec![1.0, 2.0, 3.0]);
        let w = [0.5, -0.5, 1.0];
        let hv = hvp(&oracle, &w, &[0.0, 1.0, 0.0], 1e-4).unwrap();
        assert!((hv[0]).abs() < 1e-6);
        assert!((hv[1] - 2.0).abs() < 1e-6);
        assert!((hv[2]).abs() < 1e-6);
    }

    #[test]
    fn hvp_rejects_zero_direction() {
        let oracle = QuadraticOracle::diagonal(vec![1.0, 1.0]);
        assert!(matches!(
            hvp(&oracle, &[0.0, 0.0], &[0.0, 0.0], 1e-4),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn hvp_is_linear_in_direction() {
        let oracle = QuadraticOracle::diagonal(vec![2.0, -1.0, 0.5]);
        let w = [0.1, 0.2, 0.3];
        let v = [0.4, -0.6, 1.0];
        let v2: Vec<f64> = v.iter().map(|&x| 2.0 * x).collect();
        let a = hvp(&oracle, &w, &v, 1e-4).unwrap();
        let b = hvp(&oracle, &w, &v2, 1e-4).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn hvp_is_symmetric_on_tiny_net() {
        let net = Network::init(
            &[
                LayerSpec { in_dim: 2, out_dim: 3, activation: Activation::Tanh },
                LayerSpec { in_dim: 3, out_dim: 2, activation: Activation::SoftmaxOutput },
            ],
            5,
            false,
        )
        .unwrap();
        let inputs = Tensor::new(vec![2, 2], vec![0.3, -0.8, 1.2, 0.5]).unwrap();
        let oracle = NetworkOracle::new(net.clone(), inputs, vec![1, 0]).unwrap();
        let w = net.flatten();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let u: Vec<f64> = (0..w.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..w.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let hu = hvp(&oracle, &w, &u, 1e-4).unwrap();
            let hv = hvp(&oracle, &w, &v, 1e-4).unwrap();
            let vhu = dot(&v, &hu);
            let uhv = dot(&u, &hv);
            let rel = (vhu - uhv).abs() / vhu.abs().max(uhv.abs()).max(1e-8);
            assert!(rel < 1e-5, "v'Hu {vhu} vs u'Hv {uhv}");
        }
    }

    #[test]
    fn lambda_max_finds_dominant_positive_eigenvalue() {
        let oracle = QuadraticOracle::diagonal(vec![1.0, 2.0, 5.0]);
        let est = lambda_max(&oracle, &[0.0; 3], 200, 1e-9, 3).unwrap();
        assert!(est.converged);
        assert!((est.lambda_max - 5.0).abs() < 1e-3, "got {}", est.lambda_max);
    }

    #[test]
    fn lambda_max_handles_negative_dominant_magnitude() {
        // |-8| dominates but the maximum eigenvalue is 4
        let oracle = QuadraticOracle::diagonal(vec![-8.0, 0.5, 4.0]);
        let est = lambda_max(&oracle, &[0.0; 3], 400, 1e-9, 3).unwrap();
        assert!((est.lambda_max - 4.0).abs() < 1e-3, "got {}", est.lambda_max);
    }

    #[test]
    fn lambda_max_identity_hessian_is_immediate() {
        let oracle = QuadraticOracle::diagonal(vec![1.0; 6]);
        let est = lambda_max(&oracle, &[0.0; 6], 5, 1e-10, 1).unwrap();
        assert!(est.converged);
        assert!((est.lambda_max - 1.0).abs() < 1e-8);
        assert!(est.iterations_used <= 2);
    }

    #[test]
    fn lambda_max_dominates_random_rayleigh_quotients() {
        let diag = vec![0.3, -2.0, 1.7, 4.5, 0.9];
        let oracle = QuadraticOracle::diagonal(diag.clone());
        let est = lambda_max(&oracle, &[0.0; 5], 300, 1e-9, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let mut v: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            normalize(&mut v);
            let q: f64 = v.iter().zip(&diag).map(|(&x, &d)| d * x * x).sum();
            assert!(q <= est.lambda_max + 1e-3);
        }
    }

    #[test]
    fn taylor_residual_is_tiny_on_quadratics() {
        let oracle = QuadraticOracle {
            hessian_diag: vec![1.5, -0.7, 3.0],
            linear: vec![0.2, -0.1, 0.4],
        };
        let w_star = [0.3, 0.6, -0.2];
        let w = [1.3, -0.4, 0.8];
        let r = taylor_residual(&oracle, &w_star, &w, 1e-4).unwrap();
        assert!(r < 1e-8, "residual {r}");
    }

    #[test]
    fn taylor_residual_at_expansion_point_is_zero() {
        let oracle = QuadraticOracle::diagonal(vec![2.0, 2.0]);
        let w = [0.4, -0.9];
        assert_eq!(taylor_residual(&oracle, &w, &w, 1e-4).unwrap(), 0.0);
    }

    #[test]
    fn taylor_residual_decays_third_order_on_smooth_net() {
        let net = Network::init(
            &[
                LayerSpec { in_dim: 3, out_dim: 5, activation: Activation::Tanh },
                LayerSpec { in_dim: 5, out_dim: 3, activation: Activation::SoftmaxOutput },
            ],
            13,
            false,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let inputs: Vec<f64> = (0..5 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..5).map(|i| i % 3).collect();
        let oracle =
            NetworkOracle::new(net.clone(), Tensor::new(vec![5, 3], inputs).unwrap(), labels)
                .unwrap();
        let w_star = net.flatten();
        let mut dir: Vec<f64> = (0..w_star.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        normalize(&mut dir);
        let mut prev_ratio = f64::INFINITY;
        for alpha in [1e-1, 5e-2, 2.5e-2] {
            let w: Vec<f64> = w_star.iter().zip(&dir).map(|(&a, &d)| a + alpha * d).collect();
            let r = taylor_residual(&oracle, &w_star, &w, 1e-4).unwrap();
            let ratio = r / (alpha * alpha);
            assert!(ratio <= prev_ratio + 1e-12, "ratio grew: {prev_ratio} -> {ratio}");
            prev_ratio = ratio;
        }
    }

    fn two_layer_net(seed: u64) -> Network {
        Network::init(
            &[
                LayerSpec { in_dim: 4, out_dim: 5, activation: Activation::Relu },
                LayerSpec { in_dim: 5, out_dim: 3, activation: Activation::SoftmaxOutput },
            ],
            seed,
            false,
        )
        .unwrap()
    }

    #[test]
    fn frobenius_bound_zero_for_identical_nets() {
        let net = two_layer_net(1);
        let inputs = Tensor::new(vec![2, 4], vec![0.5; 8]).unwrap();
        let (bound, actual) =
            frobenius_prune_bound(&net, &net, 0, &inputs, &[0, 1]).unwrap();
        assert_eq!(bound, 0.0);
        assert_eq!(actual, 0.0);
    }

    #[test]
    fn frobenius_bound_holds_for_single_weight_prune() {
        let net = two_layer_net(2);
        let mut pruned = net.clone();
        pruned.layer_mut(0).weights.data_mut()[3] = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs: Vec<f64> = (0..6 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..6).map(|i| i % 3).collect();
        let (bound, actual) = frobenius_prune_bound(
            &net,
            &pruned,
            0,
            &Tensor::new(vec![6, 4], inputs).unwrap(),
            &labels,
        )
        .unwrap();
        assert!(actual <= bound, "actual {actual} > bound {bound}");
    }

    #[test]
    fn frobenius_bound_saturates_for_zeroed_layer() {
        let net = two_layer_net(4);
        let mut pruned = net.clone();
        for v in pruned.layer_mut(1).weights.data_mut() {
            *v = 0.0;
        }
        let inputs = Tensor::new(vec![1, 4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let (bound, _) = frobenius_prune_bound(&net, &pruned, 1, &inputs, &[0]).unwrap();
        let product: f64 = (0..2).map(|l| net.layer(l).weights.frobenius_norm()).product();
        assert!((bound - product).abs() < 1e-12);
    }

    #[test]
    fn frobenius_bound_rejects_other_layer_changes() {
        let net = two_layer_net(5);
        let mut other = net.clone();
        other.layer_mut(1).weights.data_mut()[0] += 0.5;
        let inputs = Tensor::new(vec![1, 4], vec![0.0; 4]).unwrap();
        assert!(matches!(
            frobenius_prune_bound(&net, &other, 0, &inputs, &[0]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn forgetting_bound_formula_cases() {
        // eps = 1 -> C_eps = max{1, 2} = 2
        assert_eq!(c_epsilon(1.0), 2.0);
        // lambda = 1, C = 0, eps = 0.25 -> C_eps = 1, bound = 0.5 * 1 * 1 * 1 = 0.5
        let b = expected_forgetting_bound(1.0, 0.0, 0.25, &[1.0]).unwrap();
        assert!((b - 0.5).abs() < 1e-15);
        assert!(matches!(
            expected_forgetting_bound(0.0, 1.0, 0.1, &[1.0]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn correlations_detect_perfect_antimonotone() {
        let xs = [0.9, 0.5, 0.2, 0.7];
        let ys = [0.1, 0.6, 0.9, 0.3];
        match correlations(&xs, &ys).unwrap() {
            CorrOutcome::Defined { spearman, .. } => assert!((spearman + 1.0).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn correlations_undefined_for_constant_series() {
        let xs = [0.5, 0.5, 0.5];
        let ys = [0.1, 0.2, 0.3];
        assert_eq!(correlations(&xs, &ys).unwrap(), CorrOutcome::Undefined);
    }

    #[test]
    fn ranks_average_ties() {
        let r = ranks(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(r, vec![3.5, 1.0, 3.5, 2.0]);
    }
}
