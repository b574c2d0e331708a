//! Artifact emission: CSV reports with reproducibility headers, mask audit
//! dumps, and the flat binary checkpoint format.
//!
//! Checkpoint layout (all integers little-endian):
//! `"CFW1"` magic, `u32` layer count, then per layer `u32 out_dim`,
//! `u32 in_dim`, `u8 activation`, `u8 has_bias`; then per layer the row-major
//! `f64` weights (and biases when flagged); then a `u64` FNV-1a checksum of
//! every byte after the magic.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::connectivity::ConnectivityReport;
use crate::error::{Error, Result};
use crate::masking::MaskSet;
use crate::nn::{Activation, LayerSpec, Network};
use crate::protocol::RunRecord;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CFW1";

/// FNV-1a 64-bit hash; used for config hashes and checkpoint checksums.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Reproducibility header written as the first line of every CSV.
#[derive(Debug, Clone, Copy)]
pub struct CsvMeta {
    pub config_hash: u64,
    pub seed: u64,
}

impl CsvMeta {
    fn comment(&self) -> String {
        format!("# config_hash={:016x} seed={}\n", self.config_hash, self.seed)
    }
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v}")
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

/// `loss_matrix.csv` / `acc_matrix.csv`: rows are the evaluated task, columns
/// the task after whose pipeline the evaluation ran.
pub fn write_matrix_csv(path: &Path, matrix: &[Vec<f64>], meta: &CsvMeta) -> Result<()> {
    let cols = matrix.first().map_or(0, |r| r.len());
    let mut out = meta.comment();
    out.push_str("task");
    for s in 0..cols {
        let _ = write!(out, ",after_{s}");
    }
    out.push('\n');
    for (t, row) in matrix.iter().enumerate() {
        let _ = write!(out, "{t}");
        for v in row {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        out.push('\n');
    }
    write_file(path, &out)
}

/// `forgetting.csv`: per task, plain and label-weighted forgetting.
pub fn write_forgetting_csv(
    path: &Path,
    forgetting: &[f64],
    expected: &[f64],
    meta: &CsvMeta,
) -> Result<()> {
    let mut out = meta.comment();
    out.push_str("task,forgetting,expected_forgetting\n");
    for (t, o) in forgetting.iter().enumerate() {
        let eo = expected.get(t).copied().unwrap_or(f64::NAN);
        let _ = writeln!(out, "{t},{},{}", fmt_f64(*o), fmt_f64(eo));
    }
    write_file(path, &out)
}

/// `connectivity_task<t>.csv`: one row per adjacent layer pair.
pub fn write_connectivity_csv(path: &Path, report: &ConnectivityReport, meta: &CsvMeta) -> Result<()> {
    let mut out = meta.comment();
    out.push_str("task_id,layer,delta\n");
    for pair in &report.pairs {
        let _ = writeln!(out, "{},{},{}", report.task_id, pair.lower_layer, fmt_f64(pair.delta));
    }
    write_file(path, &out)
}

/// Optional long-form pair dump: `task_id,layer,i,j,rho`.
pub fn write_connectivity_pairs_csv(
    path: &Path,
    report: &ConnectivityReport,
    meta: &CsvMeta,
) -> Result<()> {
    let mut out = meta.comment();
    out.push_str("task_id,layer,i,j,rho\n");
    for pair in &report.pairs {
        let m = &pair.pair_matrix;
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                let _ = writeln!(
                    out,
                    "{},{},{i},{j},{}",
                    report.task_id,
                    pair.lower_layer,
                    fmt_f64(m.at2(i, j))
                );
            }
        }
    }
    write_file(path, &out)
}

/// `masks_task<t>.csv` audit dump: `layer,row,col,frozen_owner`.
pub fn write_masks_csv(path: &Path, masks: &MaskSet, meta: &CsvMeta) -> Result<()> {
    let mut out = meta.comment();
    out.push_str("layer,row,col,frozen_owner\n");
    for l in 0..masks.num_layers() {
        let layer = masks.layer(l);
        for r in 0..layer.rows() {
            for c in 0..layer.cols() {
                let _ = writeln!(out, "{l},{r},{c},{}", layer.frozen_owner(r * layer.cols() + c));
            }
        }
    }
    write_file(path, &out)
}

/// `theory_report.csv` row.
#[derive(Debug, Clone)]
pub struct TheoryRow {
    pub task: usize,
    pub lambda_max: f64,
    pub c: f64,
    pub c_eps: f64,
    pub eo_measured: f64,
    pub eo_bound: f64,
    pub bound_satisfied: bool,
}

pub fn write_theory_csv(path: &Path, rows: &[TheoryRow], meta: &CsvMeta) -> Result<()> {
    let mut out = meta.comment();
    out.push_str("task,lambda_max,C,C_eps,eo_measured,eo_bound,bound_satisfied\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.task,
            fmt_f64(r.lambda_max),
            fmt_f64(r.c),
            fmt_f64(r.c_eps),
            fmt_f64(r.eo_measured),
            fmt_f64(r.eo_bound),
            r.bound_satisfied
        );
    }
    write_file(path, &out)
}

/// Summary over trials: mean and standard deviation of average accuracy.
pub fn write_summary_csv(
    path: &Path,
    policy: &str,
    n: usize,
    k: f64,
    per_trial_avg_acc: &[f64],
    meta: &CsvMeta,
) -> Result<()> {
    let trials = per_trial_avg_acc.len();
    let mean = per_trial_avg_acc.iter().sum::<f64>() / trials as f64;
    let var = per_trial_avg_acc
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / trials as f64;
    let mut out = meta.comment();
    out.push_str("policy,n,k,trials,mean_avg_accuracy,std_avg_accuracy\n");
    let _ = writeln!(
        out,
        "{policy},{n},{},{trials},{},{}",
        fmt_f64(k),
        fmt_f64(mean),
        fmt_f64(var.sqrt())
    );
    write_file(path, &out)
}

/// Per-trial average accuracies, one row per trial.
pub fn write_trials_csv(path: &Path, rows: &[(usize, u64, f64)], meta: &CsvMeta) -> Result<()> {
    let mut out = meta.comment();
    out.push_str("trial,seed,avg_accuracy\n");
    for (trial, seed, acc) in rows {
        let _ = writeln!(out, "{trial},{seed},{}", fmt_f64(*acc));
    }
    write_file(path, &out)
}

/// Serializes all per-trial artifacts of one run record into `dir`.
pub fn write_record_artifacts(dir: &Path, record: &RunRecord, meta: &CsvMeta, long_form: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix_csv(&dir.join("loss_matrix.csv"), &record.loss_matrix, meta)?;
    write_matrix_csv(&dir.join("acc_matrix.csv"), &record.acc_matrix, meta)?;
    write_forgetting_csv(
        &dir.join("forgetting.csv"),
        &record.forgetting,
        &record.expected_forgetting,
        meta,
    )?;
    {
        let mut out = meta.comment();
        out.push_str("task,masked_accuracy\n");
        for (t, acc) in record.masked_accuracy.iter().enumerate() {
            let _ = writeln!(out, "{t},{}", fmt_f64(*acc));
        }
        write_file(&dir.join("masked_accuracy.csv"), &out)?;
    }
    for report in &record.deltas_per_task {
        write_connectivity_csv(
            &dir.join(format!("connectivity_task{}.csv", report.task_id)),
            report,
            meta,
        )?;
        if long_form {
            write_connectivity_pairs_csv(
                &dir.join(format!("connectivity_pairs_task{}.csv", report.task_id)),
                report,
                meta,
            )?;
        }
    }
    for ckpt in &record.checkpoints {
        save_checkpoint(
            &dir.join(format!("checkpoint_task{}.cfw", ckpt.task_id)),
            &ckpt.network,
        )?;
        write_masks_csv(
            &dir.join(format!("masks_task{}.csv", ckpt.task_id)),
            &ckpt.masks,
            meta,
        )?;
    }
    Ok(())
}

fn activation_code(act: Activation) -> u8 {
    match act {
        Activation::Relu => 0,
        Activation::Tanh => 1,
        Activation::Identity => 2,
        Activation::SoftmaxOutput => 3,
    }
}

fn activation_from_code(code: u8) -> Result<Activation> {
    Ok(match code {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        2 => Activation::Identity,
        3 => Activation::SoftmaxOutput,
        other => {
            return Err(Error::Format {
                offset: 0,
                message: format!("unknown activation code {other}"),
            })
        }
    })
}

/// Writes the network to the flat checkpoint format.
pub fn save_checkpoint(path: &Path, net: &Network) -> Result<()> {
    let mut payload: Vec<u8> = Vec::new();
    payload
        .write_u32::<LittleEndian>(net.num_layers() as u32)
        .unwrap();
    for layer in net.layers() {
        payload.write_u32::<LittleEndian>(layer.spec.out_dim as u32).unwrap();
        payload.write_u32::<LittleEndian>(layer.spec.in_dim as u32).unwrap();
        payload.push(activation_code(layer.spec.activation));
        payload.push(layer.bias.is_some() as u8);
    }
    for layer in net.layers() {
        for &v in layer.weights.data() {
            payload.write_f64::<LittleEndian>(v).unwrap();
        }
        if let Some(bias) = &layer.bias {
            for &v in bias {
                payload.write_f64::<LittleEndian>(v).unwrap();
            }
        }
    }
    let checksum = fnv1a64(&payload);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut file = fs::File::create(path)?;
    file.write_all(CHECKPOINT_MAGIC)?;
    file.write_all(&payload)?;
    file.write_all(&checksum.to_le_bytes())?;
    Ok(())
}

/// Reads a checkpoint back into a network, verifying layout and checksum.
pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad checkpoint magic".into(),
        });
    }
    if bytes.len() < 12 {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: "checkpoint truncated before checksum".into(),
        });
    }
    let payload = &bytes[4..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    let computed = fnv1a64(payload);
    if stored != computed {
        return Err(Error::Checksum(format!(
            "stored {stored:016x} != computed {computed:016x}"
        )));
    }
    let mut cur = std::io::Cursor::new(payload);
    let num_layers = cur.read_u32::<LittleEndian>().map_err(|_| Error::Format {
        offset: 4,
        message: "truncated layer count".into(),
    })? as usize;
    let mut headers = Vec::with_capacity(num_layers);
    for l in 0..num_layers {
        let out_dim = cur.read_u32::<LittleEndian>().map_err(|_| truncated(l, &cur))? as usize;
        let in_dim = cur.read_u32::<LittleEndian>().map_err(|_| truncated(l, &cur))? as usize;
        let mut pair = [0u8; 2];
        cur.read_exact(&mut pair).map_err(|_| truncated(l, &cur))?;
        headers.push((out_dim, in_dim, activation_from_code(pair[0])?, pair[1] != 0));
    }
    let mut weights = Vec::with_capacity(num_layers);
    let mut biases: Vec<Option<Vec<f64>>> = Vec::with_capacity(num_layers);
    for &(out_dim, in_dim, act, has_bias) in &headers {
        let mut data = vec![0.0; out_dim * in_dim];
        for slot in &mut data {
            *slot = cur.read_f64::<LittleEndian>().map_err(|_| truncated(0, &cur))?;
        }
        weights.push((Tensor::new(vec![out_dim, in_dim], data)?, act));
        if has_bias {
            let mut b = vec![0.0; out_dim];
            for slot in &mut b {
                *slot = cur.read_f64::<LittleEndian>().map_err(|_| truncated(0, &cur))?;
            }
            biases.push(Some(b));
        } else {
            biases.push(None);
        }
    }
    if cur.position() as usize != payload.len() {
        return Err(Error::Format {
            offset: cur.position() + 4,
            message: "trailing bytes in checkpoint".into(),
        });
    }
    let mut net = Network::from_weights(weights)?;
    if biases.iter().any(|b| b.is_some()) {
        // rebuild with biases attached
        let specs: Vec<LayerSpec> = net.layers().iter().map(|l| l.spec).collect();
        let mut rebuilt = Network::init(&specs, 0, true)?;
        for l in 0..specs.len() {
            rebuilt.layer_mut(l).weights = net.layer(l).weights.clone();
            if let Some(b) = &biases[l] {
                *rebuilt.layer_mut(l).bias.as_mut().unwrap() = b.clone();
            }
        }
        net = rebuilt;
    }
    Ok(net)
}

fn truncated(layer: usize, cur: &std::io::Cursor<&[u8]>) -> Error {
    Error::Format {
        offset: cur.position() + 4,
        message: format!("checkpoint truncated (around layer {layer})"),
    }
}

/// Reads the body rows of a connectivity CSV back, keeping the delta field
/// verbatim so downstream aggregation stays byte-exact.
pub fn read_connectivity_rows(path: &Path) -> Result<Vec<(String, String, String)>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with("task_id") || line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let task = fields.next().unwrap_or_default().to_string();
        let layer = fields.next().unwrap_or_default().to_string();
        let delta = fields.next().unwrap_or_default().to_string();
        if fields.next().is_some() {
            return Err(Error::Format {
                offset: 0,
                message: format!("unexpected extra fields in {line:?}"),
            });
        }
        rows.push((task, layer, delta));
    }
    Ok(rows)
}
