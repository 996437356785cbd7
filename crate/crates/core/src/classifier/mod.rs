//! Payload-byte classification of biflows with SNI occlusion.

pub mod cnn;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cnn::{Cnn, Layout, Workspace, INPUT_LEN};

use crate::dissect::{ByteRange, FlowDissection};
use crate::flow::{Biflow, UNKNOWN_APP};

pub const CHECKPOINT_FORMAT: &str = "gentraffic-cnn";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "APP")]
    App,
    #[serde(rename = "APP_CONTENT")]
    AppContent,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::App => "APP",
            Task::AppContent => "APP_CONTENT",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "app" => Ok(Task::App),
            "app_content" | "appcontent" => Ok(Task::AppContent),
            _ => Err(format!("unknown task {s:?} (expected app or app_content)")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ClassifierError {
    #[error("need at least two classes, found {0}")]
    TooFewClasses(usize),
    #[error("class {class:?} has {count} sample(s); stratified splitting needs at least 2")]
    ClassTooSmall { class: String, count: usize },
    #[error("empty test set")]
    EmptyTestSet,
    #[error("checkpoint has {checkpoint} classes but the data has {data}")]
    ClassCountMismatch { checkpoint: usize, data: usize },
    #[error("checkpoint class names differ from the data's")]
    ClassNameMismatch,
    #[error("unpaired reports: {0}")]
    Unpaired(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleVector {
    /// Payload bytes / 255, zero-padded to [`INPUT_LEN`].
    pub bytes: Vec<f32>,
    pub label: usize,
    /// Clipped to the input window; `None` when absent or entirely outside.
    pub sni_range: Option<ByteRange>,
    pub flow_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub task: Task,
    pub classes: Vec<String>,
    pub samples: Vec<SampleVector>,
    pub excluded_no_payload: u64,
    pub excluded_unlabeled: u64,
}

/// Clips a range to `[0, len)`; empty results become `None`.
pub fn clip_range(r: ByteRange, len: usize) -> Option<ByteRange> {
    let end = r.end().min(len);
    (r.offset < end).then(|| ByteRange {
        offset: r.offset,
        len: end - r.offset,
    })
}

/// First `n` payload bytes of the flow, both directions, capture order.
pub fn payload_prefix(flow: &Biflow, n: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(n);
    for p in &flow.packets {
        let take = p.packet.payload.len().min(n - out.len());
        out.extend_from_slice(&p.packet.payload[..take]);
        if out.len() == n {
            break;
        }
    }
    out
}

pub fn encode_bytes(prefix: &[u8]) -> Vec<f32> {
    let mut v = vec![0.0f32; INPUT_LEN];
    for (o, &b) in v.iter_mut().zip(prefix) {
        *o = b as f32 / 255.0;
    }
    v
}

pub fn class_name(task: Task, flow: &Biflow) -> Option<String> {
    let label = flow.label.as_ref()?;
    if label.app == UNKNOWN_APP {
        return None;
    }
    Some(match task {
        Task::App => label.app.clone(),
        Task::AppContent => format!("{}/{}", label.app, label.content),
    })
}

/// One sample per labeled biflow with payload. `dissections` may be empty
/// (no SNI ranges) or parallel to `flows`. Class ids follow sorted names.
pub fn build_samples(flows: &[Biflow], dissections: &[FlowDissection], task: Task) -> SampleSet {
    let names: BTreeSet<String> = flows.iter().filter_map(|f| class_name(task, f)).collect();
    let classes: Vec<String> = names.into_iter().collect();
    let mut set = SampleSet {
        task,
        classes,
        samples: Vec::new(),
        excluded_no_payload: 0,
        excluded_unlabeled: 0,
    };
    for (i, flow) in flows.iter().enumerate() {
        let Some(name) = class_name(task, flow) else {
            set.excluded_unlabeled += 1;
            continue;
        };
        let prefix = payload_prefix(flow, INPUT_LEN);
        if prefix.is_empty() {
            set.excluded_no_payload += 1;
            continue;
        }
        let sni_range = dissections
            .get(i)
            .and_then(|d| d.tls.as_ref())
            .and_then(|t| t.sni_range)
            .and_then(|r| clip_range(r, INPUT_LEN));
        set.samples.push(SampleVector {
            bytes: encode_bytes(&prefix),
            label: set.classes.binary_search(&name).expect("name collected above"),
            sni_range,
            flow_id: flow.id.clone(),
        });
    }
    set
}

/// Zeroes the part of `range` that falls inside `bytes`.
pub fn mask_range(bytes: &mut [f32], range: ByteRange) {
    if let Some(r) = clip_range(range, bytes.len()) {
        bytes[r.offset..r.end()].fill(0.0);
    }
}

/// Per class: shuffle, then put round(frac * n) samples (at least one and
/// at most n - 1) in the training part. Returns sorted index lists.
pub fn stratified_split(labels: &[usize], classes: usize, train_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..classes {
        let mut idx: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l == c).map(|(i, _)| i).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        if n == 0 {
            continue;
        }
        let k = ((train_frac * n as f64).round() as usize).clamp(1.min(n), n.saturating_sub(1).max(1));
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub train_frac: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    pub dropout: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            train_frac: 0.8,
            epochs: 30,
            batch: 64,
            lr: 1e-3,
            dropout: 0.2,
        }
    }
}

fn check_classes(set: &SampleSet) -> Result<(), ClassifierError> {
    let mut counts = vec![0usize; set.classes.len()];
    for s in &set.samples {
        counts[s.label] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(ClassifierError::TooFewClasses(present));
    }
    if let Some((i, &count)) = counts.iter().enumerate().find(|(_, &c)| c < 2) {
        return Err(ClassifierError::ClassTooSmall {
            class: set.classes[i].clone(),
            count,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean training loss per epoch (dropout active).
    pub epoch_loss: Vec<f64>,
}

/// Trains on the given samples. Weight init, data order and dropout masks
/// each draw from their own stream of a generator seeded with `cfg.seed`.
pub fn train(samples: &[&SampleVector], classes: usize, cfg: &TrainConfig) -> (Cnn<f32>, TrainLog) {
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order_rng = init_rng.clone();
    order_rng.set_stream(1);
    let mut drop_rng = init_rng.clone();
    drop_rng.set_stream(2);

    let mut net: Cnn<f32> = Cnn::init(classes, &mut init_rng);
    let mut adam = cnn::Adam::new(net.params.len(), cfg.lr);
    let mut grad = vec![0.0f32; net.params.len()];
    let mut ws = Workspace::new(classes);
    let mut mask = vec![1.0f32; cnn::HIDDEN];
    let keep = 1.0 - cfg.dropout;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = TrainLog { epoch_loss: Vec::new() };

    for _ in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0f64;
        for batch in order.chunks(cfg.batch.max(1)) {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f32;
            for &i in batch {
                let s = samples[i];
                let m = if cfg.dropout > 0.0 {
                    for v in mask.iter_mut() {
                        *v = if drop_rng.gen::<f32>() < keep { 1.0 / keep } else { 0.0 };
                    }
                    Some(&mask[..])
                } else {
                    None
                };
                net.forward(&s.bytes, m, &mut ws);
                total += Cnn::loss(&ws, s.label) as f64;
                net.backward(&s.bytes, s.label, m, scale, &mut ws, &mut grad);
            }
            adam.step(&mut net.params, &grad);
        }
        log.epoch_loss.push(total / samples.len().max(1) as f64);
    }
    (net, log)
}

/// Mean cross-entropy in inference mode.
pub fn mean_loss(net: &Cnn<f32>, samples: &[&SampleVector]) -> f64 {
    let sum: f64 = samples
        .par_iter()
        .map_init(
            || Workspace::new(net.classes()),
            |ws, s| {
                net.forward(&s.bytes, None, ws);
                Cnn::loss(ws, s.label) as f64
            },
        )
        .sum();
    sum / samples.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub seed: u64,
    pub occluded: bool,
    pub classes: Vec<String>,
    pub test_samples: u64,
    /// Samples evaluated unmasked because they had no SNI range.
    pub unmasked_no_sni: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Row-normalized; rows are true classes.
    pub confusion: Vec<Vec<f64>>,
    pub counts: Vec<Vec<u64>>,
}

/// Predicted class per sample, masking SNI ranges when `occlude` is set.
pub fn predict(net: &Cnn<f32>, samples: &[&SampleVector], occlude: bool) -> Vec<usize> {
    samples
        .par_iter()
        .map_init(
            || (Workspace::new(net.classes()), vec![0.0f32; INPUT_LEN]),
            |(ws, buf), s| {
                buf.copy_from_slice(&s.bytes);
                if occlude {
                    if let Some(r) = s.sni_range {
                        mask_range(buf, r);
                    }
                }
                net.forward(buf, None, ws);
                let mut best = 0;
                for c in 1..ws.logits.len() {
                    if ws.logits[c] > ws.logits[best] {
                        best = c;
                    }
                }
                best
            },
        )
        .collect()
}

/// Scores predictions; macro F1 averages over classes with test support.
pub fn score(task: Task, seed: u64, classes: &[String], truth: &[usize], pred: &[usize], occluded: bool) -> EvalReport {
    let c = classes.len();
    let mut counts = vec![vec![0u64; c]; c];
    for (&t, &p) in truth.iter().zip(pred) {
        counts[t][p] += 1;
    }
    let mut per_class = Vec::with_capacity(c);
    let mut f1_sum = 0.0;
    let mut f1_n = 0;
    for k in 0..c {
        let tp = counts[k][k] as f64;
        let support: u64 = counts[k].iter().sum();
        let predicted: u64 = (0..c).map(|r| counts[r][k]).sum();
        let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let recall = if support > 0 { tp / support as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        if support > 0 {
            f1_sum += f1;
            f1_n += 1;
        }
        per_class.push(ClassMetrics {
            class: classes[k].clone(),
            support,
            precision,
            recall,
            f1,
        });
    }
    let confusion = counts
        .iter()
        .map(|row| {
            let n: u64 = row.iter().sum();
            row.iter().map(|&v| if n > 0 { v as f64 / n as f64 } else { 0.0 }).collect()
        })
        .collect();
    let correct: u64 = (0..c).map(|k| counts[k][k]).sum();
    EvalReport {
        task,
        seed,
        occluded,
        classes: classes.to_vec(),
        test_samples: truth.len() as u64,
        unmasked_no_sni: 0,
        accuracy: if truth.is_empty() { 0.0 } else { correct as f64 / truth.len() as f64 },
        macro_f1: if f1_n > 0 { f1_sum / f1_n as f64 } else { 0.0 },
        per_class,
        confusion,
        counts,
    }
}

pub fn evaluate(net: &Cnn<f32>, samples: &[&SampleVector], classes: &[String], task: Task, seed: u64, occlude: bool) -> Result<EvalReport, ClassifierError> {
    if samples.is_empty() {
        return Err(ClassifierError::EmptyTestSet);
    }
    if net.classes() != classes.len() {
        return Err(ClassifierError::ClassCountMismatch {
            checkpoint: net.classes(),
            data: classes.len(),
        });
    }
    let pred = predict(net, samples, occlude);
    let truth: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let mut report = score(task, seed, classes, &truth, &pred, occlude);
    if occlude {
        report.unmasked_no_sni = samples.iter().filter(|s| s.sni_range.is_none()).count() as u64;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionSummary {
    pub task: Task,
    pub occluded: bool,
    pub seeds: Vec<u64>,
    pub macro_f1_mean: f64,
    /// Sample standard deviation over repetitions.
    pub macro_f1_std: f64,
    pub accuracy_mean: f64,
    /// Element-wise mean of the row-normalized confusion matrices.
    pub mean_confusion: Vec<Vec<f64>>,
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

pub fn summarize(reports: &[EvalReport]) -> Option<RepetitionSummary> {
    let first = reports.first()?;
    let f1: Vec<f64> = reports.iter().map(|r| r.macro_f1).collect();
    let acc: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
    let (macro_f1_mean, macro_f1_std) = mean_std(&f1);
    let c = first.classes.len();
    let mut mean_confusion = vec![vec![0.0; c]; c];
    for r in reports {
        for (row, src) in mean_confusion.iter_mut().zip(&r.confusion) {
            for (m, v) in row.iter_mut().zip(src) {
                *m += v / reports.len() as f64;
            }
        }
    }
    Some(RepetitionSummary {
        task: first.task,
        occluded: first.occluded,
        seeds: reports.iter().map(|r| r.seed).collect(),
        macro_f1_mean,
        macro_f1_std,
        accuracy_mean: mean_std(&acc).0,
        mean_confusion,
    })
}

/// Output of one seed of the repetition harness.
#[derive(Debug, Clone)]
pub struct Repetition {
    pub seed: u64,
    pub network: Cnn<f32>,
    pub log: TrainLog,
    pub test_idx: Vec<usize>,
    pub plain: EvalReport,
    pub masked: EvalReport,
}

/// For each seed: stratified split, train, evaluate unmasked and occluded
/// on the same test part.
pub fn run_repetitions(set: &SampleSet, cfg: &TrainConfig, seeds: &[u64]) -> Result<Vec<Repetition>, ClassifierError> {
    check_classes(set)?;
    let labels: Vec<usize> = set.samples.iter().map(|s| s.label).collect();
    let mut out = Vec::new();
    for &seed in seeds {
        let (train_idx, test_idx) = stratified_split(&labels, set.classes.len(), cfg.train_frac, seed);
        let train_s: Vec<&SampleVector> = train_idx.iter().map(|&i| &set.samples[i]).collect();
        let test_s: Vec<&SampleVector> = test_idx.iter().map(|&i| &set.samples[i]).collect();
        let run_cfg = TrainConfig { seed, ..*cfg };
        let (network, log) = train(&train_s, set.classes.len(), &run_cfg);
        let plain = evaluate(&network, &test_s, &set.classes, set.task, seed, false)?;
        let masked = evaluate(&network, &test_s, &set.classes, set.task, seed, true)?;
        out.push(Repetition {
            seed,
            network,
            log,
            test_idx,
            plain,
            masked,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDelta {
    pub class: String,
    /// Mean over seeds of masked minus unmasked recall.
    pub recall_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionDelta {
    pub task: Task,
    pub seeds: Vec<u64>,
    /// Masked minus unmasked macro F1, per seed.
    pub macro_f1_delta_per_seed: Vec<f64>,
    pub macro_f1_delta_mean: f64,
    pub per_class: Vec<ClassDelta>,
    /// Mean masked minus mean unmasked confusion.
    pub confusion_shift: Vec<Vec<f64>>,
}

/// Pairs unmasked and masked reports by seed.
pub fn occlusion_delta(plain: &[EvalReport], masked: &[EvalReport]) -> Result<OcclusionDelta, ClassifierError> {
    if plain.is_empty() || plain.len() != masked.len() {
        return Err(ClassifierError::Unpaired(format!(
            "{} unmasked vs {} masked reports",
            plain.len(),
            masked.len()
        )));
    }
    let mut m_sorted: Vec<&EvalReport> = masked.iter().collect();
    let mut p_sorted: Vec<&EvalReport> = plain.iter().collect();
    p_sorted.sort_by_key(|r| r.seed);
    m_sorted.sort_by_key(|r| r.seed);
    for (p, m) in p_sorted.iter().zip(&m_sorted) {
        if p.seed != m.seed {
            return Err(ClassifierError::Unpaired(format!("seed {} has no masked counterpart", p.seed)));
        }
        if p.classes != m.classes || p.task != m.task {
            return Err(ClassifierError::Unpaired(format!("seed {} differs in task or classes", p.seed)));
        }
        if p.occluded || !m.occluded {
            return Err(ClassifierError::Unpaired(format!("seed {} has the wrong occlusion flags", p.seed)));
        }
    }
    let n = p_sorted.len() as f64;
    let classes = &p_sorted[0].classes;
    let deltas: Vec<f64> = p_sorted.iter().zip(&m_sorted).map(|(p, m)| m.macro_f1 - p.macro_f1).collect();
    let per_class = (0..classes.len())
        .map(|k| ClassDelta {
            class: classes[k].clone(),
            recall_delta: p_sorted
                .iter()
                .zip(&m_sorted)
                .map(|(p, m)| m.per_class[k].recall - p.per_class[k].recall)
                .sum::<f64>()
                / n,
        })
        .collect();
    let c = classes.len();
    let mut shift = vec![vec![0.0; c]; c];
    for (p, m) in p_sorted.iter().zip(&m_sorted) {
        for i in 0..c {
            for j in 0..c {
                shift[i][j] += (m.confusion[i][j] - p.confusion[i][j]) / n;
            }
        }
    }
    Ok(OcclusionDelta {
        task: p_sorted[0].task,
        seeds: p_sorted.iter().map(|r| r.seed).collect(),
        macro_f1_delta_mean: deltas.iter().sum::<f64>() / n,
        macro_f1_delta_per_seed: deltas,
        per_class,
        confusion_shift: shift,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub task: Task,
    pub classes: Vec<String>,
    pub seed: u64,
    pub config: TrainConfig,
    pub tensors: Vec<TensorShape>,
    pub params: Vec<f32>,
}

impl Checkpoint {
    pub fn new(net: &Cnn<f32>, task: Task, classes: &[String], seed: u64, config: TrainConfig) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            task,
            classes: classes.to_vec(),
            seed,
            config,
            tensors: net
                .layout
                .tensors()
                .into_iter()
                .map(|(n, s, _)| TensorShape {
                    name: n.into(),
                    shape: s,
                })
                .collect(),
            params: net.params.clone(),
        }
    }

    pub fn network(&self) -> Result<Cnn<f32>, ClassifierError> {
        let bad = |m: String| ClassifierError::BadCheckpoint(m);
        if self.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {}", self.version)));
        }
        let layout = Layout::new(self.classes.len());
        let expected: Vec<TensorShape> = layout
            .tensors()
            .into_iter()
            .map(|(n, s, _)| TensorShape {
                name: n.into(),
                shape: s,
            })
            .collect();
        if expected != self.tensors {
            return Err(bad("tensor shapes do not match the architecture".into()));
        }
        if self.params.len() != layout.len {
            return Err(bad(format!("{} parameters, expected {}", self.params.len(), layout.len)));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(bad("non-finite parameter".into()));
        }
        Ok(Cnn {
            layout,
            params: self.params.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self).map_err(std::io::Error::other)
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let text = std::fs::read(path).map_err(|e| ClassifierError::BadCheckpoint(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&text).map_err(|e| ClassifierError::BadCheckpoint(format!("{}: {e}", path.display())))
    }
}
