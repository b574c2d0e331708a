//! Subcommand implementations. Each returns `Ok(())` on success; `main` maps
//! errors to a nonzero exit status.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use connflow::connectivity::ConnectivityReport;
use connflow::error::{Error, Result};
use connflow::protocol::{
    eval_on, frozen_layer_experiment, run_sequence, LabelEncoding, RunRecord,
};
use connflow::report::{
    self, load_checkpoint, write_record_artifacts, write_summary_csv, write_theory_csv,
    write_trials_csv, CsvMeta, TheoryRow,
};
use connflow::theory::{
    self, c_epsilon, expected_forgetting_bound, frobenius_prune_bound, lambda_max,
    taylor_residual, CorrOutcome, NetworkOracle,
};
use connflow::Tensor;
use rand_like::SplitMix;

use crate::config::{build_tasks, ExperimentConfig, DATA_DIR_ENV};

/// Minimal deterministic index picker for the spot checks (frobenius weight
/// and taylor direction); keeps the CLI free of RNG state plumbed from core.
mod rand_like {
    pub struct SplitMix(pub u64);

    impl SplitMix {
        pub fn next(&mut self) -> u64 {
            self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = self.0;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^ (z >> 31)
        }

        pub fn pick(&mut self, n: usize) -> usize {
            (self.next() % n as u64) as usize
        }

        pub fn unit(&mut self) -> f64 {
            (self.next() >> 11) as f64 / (1u64 << 53) as f64
        }
    }
}

pub struct RunOverrides {
    pub out: Option<PathBuf>,
    pub trials: Option<usize>,
    pub seed_offset: Option<u64>,
}

fn data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

fn load_config_with_overrides(config_path: &Path, ov: &RunOverrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    if let Some(out) = &ov.out {
        cfg.run.out = out.clone();
    }
    if let Some(trials) = ov.trials {
        cfg.run.trials = trials;
    }
    if let Some(offset) = ov.seed_offset {
        cfg.run.seed_offset = offset;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn first_last_deltas(record: &RunRecord) -> (Vec<f64>, Vec<f64>) {
    let first = record
        .deltas_per_task
        .iter()
        .filter_map(|r| r.pairs.first().map(|p| p.delta))
        .collect();
    let last = record
        .deltas_per_task
        .iter()
        .filter_map(|r| r.pairs.last().map(|p| p.delta))
        .collect();
    (first, last)
}

fn nondecreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] + 1e-12 >= w[0])
}

fn nonincreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0] + 1e-12)
}

/// Runs the configured experiment for every trial seed and writes the full
/// artifact set under the output directory.
pub fn cmd_run(config_path: &Path, overrides: &RunOverrides) -> Result<()> {
    let cfg = load_config_with_overrides(config_path, overrides)?;
    let hash = cfg.config_hash();
    let out = cfg.run.out.clone();
    fs::create_dir_all(&out)?;
    fs::write(out.join("run_config.txt"), cfg.canonical())?;

    let (tasks, manifest) = build_tasks(&cfg, data_dir().as_deref())?;
    fs::write(out.join("manifest.txt"), manifest.render())?;

    let prune_cfg = cfg.to_prune_config()?;
    let opts = cfg.to_sequence_options()?;
    let mut trial_rows: Vec<(usize, u64, f64)> = Vec::new();
    let mut trend_first = Vec::new();
    let mut trend_last = Vec::new();
    for trial in 0..cfg.run.trials {
        let seed = cfg.trial_seed(trial);
        let net = cfg.build_network(&tasks, seed)?;
        let train_cfg = cfg.to_train_config(seed);
        let record = run_sequence(net, &tasks, &prune_cfg, &train_cfg, &opts)?;
        let trial_dir = out.join(format!("trial_{trial}"));
        let meta = CsvMeta {
            config_hash: hash,
            seed,
        };
        write_record_artifacts(&trial_dir, &record, &meta, cfg.connectivity.long_form)?;
        if let Some(reason) = &record.failure {
            fs::write(trial_dir.join("failure.txt"), reason)?;
            return Err(Error::Training(format!(
                "trial {trial} aborted: {reason} (partial artifacts in {})",
                trial_dir.display()
            )));
        }
        let avg = record.average_accuracy();
        println!(
            "trial {trial} (seed {seed}): avg accuracy {avg:.4} over {} tasks",
            record.num_tasks
        );
        if let Ok(CorrOutcome::Defined { pearson, spearman }) =
            theory::connectivity_forgetting_corr(&record)
        {
            println!("  connectivity-vs-forgetting: pearson {pearson:.3}, spearman {spearman:.3}");
        }
        let (first, last) = first_last_deltas(&record);
        trend_first.push(nondecreasing(&first));
        trend_last.push(nonincreasing(&last));
        trial_rows.push((trial, seed, avg));
    }

    let run_meta = CsvMeta {
        config_hash: hash,
        seed: cfg.run.seed,
    };
    let accs: Vec<f64> = trial_rows.iter().map(|r| r.2).collect();
    write_summary_csv(
        &out.join("summary.csv"),
        &cfg.prune.policy,
        cfg.prune.n,
        cfg.prune.k,
        &accs,
        &run_meta,
    )?;
    write_trials_csv(&out.join("trials.csv"), &trial_rows, &run_meta)?;
    write_trend_report(&out.join("trend_report.csv"), &trend_first, &trend_last, &run_meta)?;
    let first_ok = trend_first.iter().filter(|&&b| b).count();
    let last_ok = trend_last.iter().filter(|&&b| b).count();
    let trials = cfg.run.trials;
    println!(
        "connectivity trend: first layer {} ({first_ok}/{trials}), last layer {} ({last_ok}/{trials})",
        trend_status(first_ok, trials),
        trend_status(last_ok, trials),
    );
    println!("artifacts in {}", out.display());
    Ok(())
}

fn trend_status(ok: usize, trials: usize) -> &'static str {
    if 3 * ok >= 2 * trials {
        "PASS"
    } else {
        "WARN"
    }
}

fn write_trend_report(path: &Path, first: &[bool], last: &[bool], meta: &CsvMeta) -> Result<()> {
    let mut out = format!("# config_hash={:016x} seed={}\n", meta.config_hash, meta.seed);
    out.push_str("trial,first_layer_nondecreasing,last_layer_nonincreasing\n");
    for (i, (f, l)) in first.iter().zip(last).enumerate() {
        let _ = writeln!(out, "{i},{f},{l}");
    }
    let trials = first.len();
    let first_ok = first.iter().filter(|&&b| b).count();
    let last_ok = last.iter().filter(|&&b| b).count();
    let _ = writeln!(
        out,
        "# first_layer status={} pass_count={first_ok}/{trials}",
        trend_status(first_ok, trials)
    );
    let _ = writeln!(
        out,
        "# last_layer status={} pass_count={last_ok}/{trials}",
        trend_status(last_ok, trials)
    );
    fs::write(path, out)?;
    Ok(())
}

/// Trial directories under a run root, or the directory itself when it
/// already holds checkpoints.
fn trial_dirs(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    if dir.join("checkpoint_task0.cfw").is_file() || dir.join("connectivity_task0.csv").is_file() {
        let trial = dir
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("trial_"))
            .and_then(|n| n.parse().ok())
            .unwrap_or(0);
        return Ok(vec![(trial, dir.to_path_buf())]);
    }
    let mut found = Vec::new();
    if dir.is_dir() {
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if let Some(idx) = name.strip_prefix("trial_") {
                if let Ok(idx) = idx.parse::<usize>() {
                    found.push((idx, entry.path()));
                }
            }
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no run artifacts under {}", dir.display()),
        )));
    }
    Ok(found)
}

/// The run root holding `run_config.txt` for a run or trial directory.
fn run_root(dir: &Path) -> Result<PathBuf> {
    if dir.join("run_config.txt").is_file() {
        return Ok(dir.to_path_buf());
    }
    if let Some(parent) = dir.parent() {
        if parent.join("run_config.txt").is_file() {
            return Ok(parent.to_path_buf());
        }
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("run_config.txt not found at or above {}", dir.display()),
    )))
}

/// Aggregates the per-task connectivity CSVs of each trial into a long-form
/// file and a layer-by-task table. Delta fields are copied verbatim.
pub fn cmd_connectivity(run_dir: &Path) -> Result<()> {
    let root = run_root(run_dir)?;
    let cfg = ExperimentConfig::parse(&fs::read_to_string(root.join("run_config.txt"))?)?;
    let hash = cfg.config_hash();
    for (trial, dir) in trial_dirs(run_dir)? {
        let mut rows: Vec<(String, String, String)> = Vec::new();
        let mut task = 0usize;
        loop {
            let path = dir.join(format!("connectivity_task{task}.csv"));
            if !path.is_file() {
                break;
            }
            rows.extend(report::read_connectivity_rows(&path)?);
            task += 1;
        }
        if task == 0 {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no connectivity CSVs in {}", dir.display()),
            )));
        }
        let meta_line = format!("# config_hash={hash:016x} seed={}\n", cfg.trial_seed(trial));
        let mut long = meta_line.clone();
        long.push_str("task,layer,delta\n");
        for (t, l, d) in &rows {
            let _ = writeln!(long, "{t},{l},{d}");
        }
        fs::write(dir.join("connectivity_long.csv"), long)?;

        // wide table: rows = layer, cols = task
        let layers: usize = rows
            .iter()
            .map(|r| r.1.parse::<usize>().unwrap_or(0) + 1)
            .max()
            .unwrap_or(0);
        let mut table = meta_line;
        table.push_str("layer");
        for t in 0..task {
            let _ = write!(table, ",task_{t}");
        }
        table.push('\n');
        for layer in 0..layers {
            let _ = write!(table, "{layer}");
            for t in 0..task {
                let cell = rows
                    .iter()
                    .find(|(rt, rl, _)| rt == &t.to_string() && rl == &layer.to_string())
                    .map(|(_, _, d)| d.clone())
                    .unwrap_or_else(|| "NaN".to_string());
                let _ = write!(table, ",{cell}");
            }
            table.push('\n');
        }
        fs::write(dir.join("connectivity_table.csv"), table)?;
        println!(
            "trial {trial}: {} rows over {task} tasks -> {}",
            rows.len(),
            dir.join("connectivity_long.csv").display()
        );
    }
    Ok(())
}

/// Re-derives the curvature/bound report from the persisted checkpoints:
/// per task, the dominant Hessian eigenvalue, the checkpoint distance, the
/// measured expected forgetting odds against its bound, plus Frobenius
/// prune-bound and Taylor-residual spot checks.
pub fn cmd_theory(run_dir: &Path) -> Result<()> {
    let root = run_root(run_dir)?;
    let cfg = ExperimentConfig::parse(&fs::read_to_string(root.join("run_config.txt"))?)?;
    let hash = cfg.config_hash();
    let (tasks, manifest) = build_tasks(&cfg, data_dir().as_deref())?;
    let recorded = fs::read_to_string(root.join("manifest.txt"))?;
    if recorded != manifest.render() {
        return Err(Error::State(format!(
            "dataset manifest drifted; rebuild does not match {} (check {DATA_DIR_ENV})",
            root.join("manifest.txt").display()
        )));
    }
    let encoding = LabelEncoding::parse(&cfg.metrics.encoding)?;
    let mut all_satisfied = true;

    for (trial, dir) in trial_dirs(run_dir)? {
        let trial_seed = cfg.trial_seed(trial);
        let mut nets = Vec::new();
        loop {
            let path = dir.join(format!("checkpoint_task{}.cfw", nets.len()));
            if !path.is_file() {
                break;
            }
            nets.push(load_checkpoint(&path)?);
        }
        if nets.is_empty() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no checkpoints in {}", dir.display()),
            )));
        }
        let meta = CsvMeta {
            config_hash: hash,
            seed: trial_seed,
        };

        let probe = |t: usize| -> (Tensor, Vec<usize>) {
            let task = &tasks[t];
            let rows: Vec<usize> = (0..task.n_eval().min(cfg.connectivity.probe_batch)).collect();
            (
                task.eval_inputs.select_rows(&rows),
                rows.iter().map(|&i| task.eval_labels[i]).collect(),
            )
        };

        let mut rows = Vec::new();
        for t in 0..nets.len().saturating_sub(1) {
            let (probe_inputs, probe_labels) = probe(t);
            let oracle = NetworkOracle::new(nets[t].clone(), probe_inputs, probe_labels)?;
            let params = nets[t].flatten();
            let est = lambda_max(
                &oracle,
                &params,
                cfg.metrics.lambda_iters,
                cfg.metrics.lambda_tol,
                trial_seed.wrapping_add(t as u64),
            )?;
            let eo = connflow::protocol::expected_forgetting(&nets[t], &nets[t + 1], &tasks[t], encoding)?;
            let next = nets[t + 1].flatten();
            let c = params
                .iter()
                .zip(&next)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let eps = cfg.train.convergence_eps;
            let (bound, satisfied) = if est.lambda_max > 0.0 {
                let weights = encoding.weights(&tasks[t].eval_labels);
                let bound = expected_forgetting_bound(est.lambda_max, c, eps, &weights)?;
                (bound, eo <= bound)
            } else {
                (f64::NAN, false)
            };
            all_satisfied &= satisfied;
            rows.push(TheoryRow {
                task: t,
                lambda_max: est.lambda_max,
                c,
                c_eps: c_epsilon(eps),
                eo_measured: eo,
                eo_bound: bound,
                bound_satisfied: satisfied,
            });
        }
        write_theory_csv(&dir.join("theory_report.csv"), &rows, &meta)?;

        // Frobenius prune-bound spot check: zero one seeded nonzero weight.
        let mut frob = format!("# config_hash={hash:016x} seed={trial_seed}\n");
        frob.push_str("task,layer,flat_index,bound,actual,satisfied\n");
        let mut picker = SplitMix(trial_seed ^ 0xf0f0_f0f0);
        for (t, net) in nets.iter().enumerate() {
            let layer = picker.pick(net.num_layers());
            let weights = net.layer(layer).weights.data();
            let nonzero: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] != 0.0).collect();
            if nonzero.is_empty() {
                continue;
            }
            let idx = nonzero[picker.pick(nonzero.len())];
            let mut pruned = net.clone();
            pruned.layer_mut(layer).weights.data_mut()[idx] = 0.0;
            let (probe_inputs, probe_labels) = probe(t);
            let (bound, actual) =
                frobenius_prune_bound(net, &pruned, layer, &probe_inputs, &probe_labels)?;
            let _ = writeln!(frob, "{t},{layer},{idx},{bound},{actual},{}", actual <= bound);
        }
        fs::write(dir.join("frobenius_check.csv"), frob)?;

        // Taylor remainder decay around each checkpoint.
        let mut taylor = format!("# config_hash={hash:016x} seed={trial_seed}\n");
        taylor.push_str("task,alpha,residual,residual_over_alpha_sq\n");
        for (t, net) in nets.iter().enumerate() {
            let (probe_inputs, probe_labels) = probe(t);
            let oracle = NetworkOracle::new(net.clone(), probe_inputs, probe_labels)?;
            let w_star = net.flatten();
            let mut dir_vec: Vec<f64> = (0..w_star.len())
                .map(|_| picker.unit() * 2.0 - 1.0)
                .collect();
            let norm = dir_vec.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in &mut dir_vec {
                *v /= norm;
            }
            for alpha in [1e-1, 5e-2, 2.5e-2] {
                let w: Vec<f64> = w_star
                    .iter()
                    .zip(&dir_vec)
                    .map(|(&a, &d)| a + alpha * d)
                    .collect();
                let r = taylor_residual(&oracle, &w_star, &w, 1e-4)?;
                let _ = writeln!(taylor, "{t},{alpha},{r},{}", r / (alpha * alpha));
            }
        }
        fs::write(dir.join("taylor_check.csv"), taylor)?;
        println!(
            "trial {trial}: {} bound rows, all satisfied: {}",
            rows.len(),
            rows.iter().all(|r| r.bound_satisfied)
        );
    }
    if !all_satisfied {
        log::warn!("some expected-forgetting bounds were not satisfied; see theory_report.csv");
    }
    Ok(())
}

/// Freezes each layer in turn, trains twins from the same init on the first
/// task, and relates the per-layer cost to the measured connectivity.
pub fn cmd_frozen_sweep(config_path: &Path, overrides: &RunOverrides) -> Result<()> {
    let cfg = load_config_with_overrides(config_path, overrides)?;
    let hash = cfg.config_hash();
    let out = cfg.run.out.clone();
    fs::create_dir_all(&out)?;
    fs::write(out.join("run_config.txt"), cfg.canonical())?;
    let (tasks, manifest) = build_tasks(&cfg, data_dir().as_deref())?;
    fs::write(out.join("manifest.txt"), manifest.render())?;
    let task = &tasks[0];
    let seed = cfg.trial_seed(0);
    let net_init = cfg.build_network(&tasks, seed)?;
    let train_cfg = cfg.to_train_config(seed);
    let encoding = LabelEncoding::parse(&cfg.metrics.encoding)?;
    let opts = cfg.to_sequence_options()?;

    // deltas from the unconstrained twin
    let mut reference = net_init.clone();
    let masks = connflow::masking::MaskSet::for_network(&reference);
    connflow::protocol::train_task(&mut reference, &masks, task, &train_cfg)?;
    let probe_rows: Vec<usize> = (0..task.n_eval().min(opts.probe_batch)).collect();
    let probe_inputs = task.eval_inputs.select_rows(&probe_rows);
    let probe_labels: Vec<usize> = probe_rows.iter().map(|&i| task.eval_labels[i]).collect();
    let report: ConnectivityReport = {
        let (_, trace) = connflow::nn::forward(&reference, &probe_inputs)?;
        connflow::connectivity::connectivity_report(
            &trace.post,
            &probe_labels,
            task.num_classes,
            0,
            opts.mode,
            opts.eta_threshold,
        )?
    };
    let (_, ref_acc) = eval_on(&reference, &task.eval_inputs, &task.eval_labels)?;
    println!("reference network eval accuracy: {ref_acc:.4}");

    let num_layers = net_init.num_layers();
    let mut rows = Vec::new();
    for layer in 0..num_layers {
        let outcome = frozen_layer_experiment(&net_init, task, Some(layer), &train_cfg, encoding)?;
        let delta = report
            .pairs
            .iter()
            .find(|p| p.lower_layer == layer)
            .map(|p| p.delta)
            .unwrap_or(f64::NAN);
        println!(
            "layer {layer}: delta {delta:.4}, d {:.4}, training deviation {:.4}",
            outcome.d, outcome.training_deviation
        );
        rows.push((layer, delta, outcome.d, outcome.training_deviation));
    }

    let paired: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(_, delta, _, _)| delta.is_finite())
        .map(|&(_, delta, d, _)| (delta, d.abs()))
        .collect();
    let corr = if paired.len() >= 2 {
        let xs: Vec<f64> = paired.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = paired.iter().map(|p| p.1).collect();
        theory::correlations(&xs, &ys)?
    } else {
        CorrOutcome::Undefined
    };

    let mut csv = format!("# config_hash={hash:016x} seed={seed}\n");
    csv.push_str("layer,delta,d,training_deviation\n");
    for (layer, delta, d, dev) in &rows {
        let delta = if delta.is_nan() { "NaN".to_string() } else { delta.to_string() };
        let _ = writeln!(csv, "{layer},{delta},{d},{dev}");
    }
    match corr {
        CorrOutcome::Defined { pearson, spearman } => {
            let _ = writeln!(csv, "# rank_correlation spearman={spearman} pearson={pearson}");
            println!("delta vs |d| rank correlation: spearman {spearman:.3}, pearson {pearson:.3}");
        }
        CorrOutcome::Undefined => {
            let _ = writeln!(csv, "# rank_correlation undefined");
            println!("delta vs |d| rank correlation: undefined");
        }
    }
    fs::write(out.join("frozen_sweep.csv"), csv)?;
    println!("artifacts in {}", out.display());
    Ok(())
}
