//! One function per CLI subcommand. Each takes the resolved configuration
//! and paths, writes its reports into the output directory and returns
//! the run outcome.

use std::collections::BTreeMap;
use std::fs;
use std::net::{IpAddr, Ipv4Addr};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{discover_captures, load_captures, slug, svg, LoadedCapture, Run, RunError};
use crate::capture::{write_capture, write_raw_frames, CaptureTrace, IpProto, LinkType, PacketRecord};
use crate::classifier::{
    self, build_samples, occlusion_delta, run_repetitions, stratified_split, Checkpoint, ClassifierError, EvalReport,
    SampleSet, SampleVector,
};
use crate::dissect::{dissect_all, protocol_mix, sni_share_table, tls_version_mix, FlowDissection};
use crate::fixtures;
use crate::flow::{Biflow, Direction, FlowLabel};
use crate::markov::{self, MarkovModel, PlBinning};
use crate::metrics::{self, Delta, RateMetric, RateSeries};
use crate::series::{aggregate, extract_flow_vector, SeriesMetric};

use super::Config;
use super::Outcome;

fn pool(jobs: usize) -> Result<rayon::ThreadPool, RunError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| RunError::stage("setup", e))
}

fn load(run: &mut Run, inputs: &[PathBuf]) -> Result<Vec<LoadedCapture>, RunError> {
    let paths = discover_captures(inputs)?;
    load_captures(run, &paths)
}

fn all_flows(caps: &[LoadedCapture]) -> Vec<Biflow> {
    caps.iter().flat_map(|c| c.flows.iter().cloned()).collect()
}

fn by_group<'a>(flows: impl IntoIterator<Item = &'a Biflow>) -> BTreeMap<FlowLabel, Vec<&'a Biflow>> {
    let mut out: BTreeMap<FlowLabel, Vec<&Biflow>> = BTreeMap::new();
    for f in flows {
        out.entry(metrics::group_of(f)).or_default().push(f);
    }
    out
}

fn group_name(g: &FlowLabel) -> String {
    format!("{}/{}", g.app, g.content)
}

/// Volume summary, windowed rates, per-index series and directional
/// profiles per (app, content) group.
pub fn characterize(cfg: &Config, inputs: &[PathBuf], out: &Path) -> Result<Outcome, RunError> {
    let mut run = Run::new(out, "characterize", cfg)?;
    let delta = Delta::from_secs(cfg.delta).ok_or_else(|| RunError::Usage(format!("invalid delta {}", cfg.delta)))?;
    let caps = load(&mut run, inputs)?;
    let flows = all_flows(&caps);

    let summary = run.time("summary", || metrics::summarize(&flows));
    run.write_csv("table1_summary.csv", &summary)?;
    run.write_json("table1_summary.json", &summary)?;
    for s in &summary {
        run.note(format!(
            "{}/{}: {} biflows, {} packets ({:.1}% down), {} payload bytes ({:.1}% down)",
            s.app, s.content, s.biflows, s.packets_total, s.packets_down_pct, s.volume_bytes, s.volume_down_pct
        ));
    }

    let mut rate_rows = Vec::new();
    let mut profile_rows = Vec::new();
    let mut per_group: BTreeMap<FlowLabel, Vec<RateSeries>> = BTreeMap::new();
    let t = std::time::Instant::now();
    for cap in &caps {
        for (g, fl) in by_group(&cap.flows) {
            let series = metrics::rate_series_for(&fl, delta);
            run.count("rates.empty_windows_excluded", series.empty_excluded);
            for w in &series.windows {
                rate_rows.push(RateRow {
                    app: g.app.clone(),
                    content: g.content.to_string(),
                    capture: cap.path.clone(),
                    window: w.index,
                    up_bytes: w.up_bytes,
                    down_bytes: w.down_bytes,
                    up_pkts: w.up_pkts,
                    down_pkts: w.down_pkts,
                });
            }
            let profile = metrics::directional_profile(fl.iter().flat_map(|f| f.packets.iter()), delta);
            for p in profile {
                profile_rows.push(
                    ProfileRow {
                        app: g.app.clone(),
                        content: g.content.to_string(),
                        capture: cap.path.clone(),
                        window: p.index,
                        up_bytes: p.up_bytes,
                        down_bytes: p.down_bytes,
                    },
                );
            }
            per_group.entry(g).or_default().push(series);
        }
    }
    run.timings.push(super::StageTiming {
        stage: "rates".into(),
        millis: t.elapsed().as_secs_f64() * 1e3,
    });
    run.write_csv("fig2_rates.csv", &rate_rows)?;
    run.write_csv("fig7_profiles.csv", &profile_rows)?;

    let mut stats_rows = Vec::new();
    for (g, series) in &per_group {
        let refs: Vec<&RateSeries> = series.iter().collect();
        for m in RateMetric::ALL {
            if let Some(s) = metrics::rate_distribution(&refs, m) {
                stats_rows.push(RateStatsRow {
                    app: g.app.clone(),
                    content: g.content.to_string(),
                    metric: m.as_str(),
                    windows: s.windows,
                    min: s.min,
                    q1: s.q1,
                    median: s.median,
                    q3: s.q3,
                    max: s.max,
                    mean: s.mean,
                });
            }
        }
    }
    run.write_csv("rate_stats.csv", &stats_rows)?;

    let mut series_rows = Vec::new();
    let mut pl_lines = Vec::new();
    let mut clamped = 0u64;
    for (g, fl) in by_group(&flows) {
        let vectors: Vec<_> = fl.iter().map(|f| extract_flow_vector(f, cfg.series.length)).collect();
        clamped += vectors.iter().map(|v| v.clamped_iat as u64).sum::<u64>();
        for m in SeriesMetric::ALL {
            match aggregate(&vectors, m) {
                Ok(a) => {
                    for (i, (&mean, &support)) in a.mean_at_index.iter().zip(&a.support_at_index).enumerate() {
                        series_rows.push(
                            SeriesRow {
                                app: g.app.clone(),
                                content: g.content.to_string(),
                                metric: m.as_str(),
                                index: i + 1,
                                mean,
                                support,
                            },
                        );
                    }
                    if m == SeriesMetric::Pl {
                        pl_lines.push((group_name(&g), a.mean_at_index));
                    }
                }
                Err(_) => {
                    if m == SeriesMetric::Pl {
                        run.warn(format!("{}: no biflow with payload; series skipped", group_name(&g)));
                    }
                }
            }
        }
    }
    run.count("series.clamped_iat", clamped);
    run.write_csv("fig3_series.csv", &series_rows)?;
    if cfg.svg {
        run.write_bytes("fig3_pl.svg", svg::line_chart(&pl_lines, "mean PL by packet index").as_bytes())?;
    }
    run.finish()
}

#[derive(Serialize)]
struct RateRow {
    app: String,
    content: String,
    capture: String,
    window: u64,
    up_bytes: u64,
    down_bytes: u64,
    up_pkts: u64,
    down_pkts: u64,
}

#[derive(Serialize)]
struct ProfileRow {
    app: String,
    content: String,
    capture: String,
    window: u64,
    up_bytes: u64,
    down_bytes: u64,
}

#[derive(Serialize)]
struct SeriesRow {
    app: String,
    content: String,
    metric: &'static str,
    index: usize,
    mean: f64,
    support: u64,
}

#[derive(Serialize)]
struct RateStatsRow {
    app: String,
    content: String,
    metric: &'static str,
    windows: u64,
    min: f64,
    q1: f64,
    median: f64,
    q3: f64,
    max: f64,
    mean: f64,
}

/// Model file written per group by `markov fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupModel {
    pub app: String,
    pub content: String,
    pub model: MarkovModel,
}

impl GroupModel {
    /// Reads either a group model file or a bare model.
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read(path).map_err(|e| RunError::Usage(format!("{}: {e}", path.display())))?;
        if let Ok(g) = serde_json::from_slice::<GroupModel>(&text) {
            return Ok(g);
        }
        serde_json::from_slice::<MarkovModel>(&text)
            .map(|model| GroupModel {
                app: String::new(),
                content: String::new(),
                model,
            })
            .map_err(|e| RunError::Usage(format!("{}: not a model file: {e}", path.display())))
    }
}

#[derive(Serialize)]
struct MatrixRow {
    app: String,
    content: String,
    row: usize,
    col: usize,
    from_state: String,
    to_state: String,
    quadrant: u8,
    probability: f64,
}

#[derive(Serialize)]
struct ModelSummary {
    app: String,
    content: String,
    file: String,
    k: usize,
    flows: u64,
    transitions: u64,
    zero_rows: usize,
    quadrant_mass: [f64; 4],
}

fn quadrant(r: usize, c: usize, k: usize) -> u8 {
    match (r < k, c < k) {
        (true, false) => 1,
        (true, true) => 2,
        (false, true) => 3,
        (false, false) => 4,
    }
}

/// Fits one PL/direction chain per group.
pub fn markov_fit(cfg: &Config, inputs: &[PathBuf], out: &Path, binning_from: Option<&Path>) -> Result<Outcome, RunError> {
    let mut run = Run::new(out, "markov fit", cfg)?;
    run.seeds.push(cfg.seed);
    let caps = load(&mut run, inputs)?;
    let flows = all_flows(&caps);
    let groups = by_group(&flows);

    let fixed: Option<PlBinning> = match binning_from {
        Some(p) => Some(GroupModel::load(p)?.model.binning),
        None if cfg.markov.shared_bins => {
            let pls = markov::payload_lengths(&flows);
            Some(
                run.time("binning", || markov::fit_binning(&pls, cfg.markov.bins, cfg.seed))
                    .map_err(|e| RunError::stage("binning", e))?,
            )
        }
        None => None,
    };

    let mut matrix_rows = Vec::new();
    let mut summaries = Vec::new();
    for (g, fl) in groups {
        let owned: Vec<Biflow> = fl.into_iter().cloned().collect();
        let binning = match &fixed {
            Some(b) => b.clone(),
            None => {
                let pls = markov::payload_lengths(&owned);
                match markov::fit_binning(&pls, cfg.markov.bins, cfg.seed) {
                    Ok(b) => b,
                    Err(e) => {
                        run.warn(format!("{}: {e}; group skipped", group_name(&g)));
                        continue;
                    }
                }
            }
        };
        let mut model = match markov::fit_model(&owned, &binning) {
            Ok(m) => m,
            Err(e) => {
                run.warn(format!("{}: {e}; group skipped", group_name(&g)));
                continue;
            }
        };
        model.seed = Some(cfg.seed);
        model.provenance = run.inputs.clone();
        if !model.zero_rows.is_empty() {
            run.count("markov.zero_rows", model.zero_rows.len() as u64);
        }
        let m = markov::render_matrix(&model);
        let k = m.k;
        for (r, row) in m.cells.iter().enumerate() {
            for (c, &p) in row.iter().enumerate() {
                matrix_rows.push(MatrixRow {
                    app: g.app.clone(),
                    content: g.content.to_string(),
                    row: r,
                    col: c,
                    from_state: m.row_states[r].clone(),
                    to_state: m.col_states[c].clone(),
                    quadrant: quadrant(r, c, k),
                    probability: p,
                });
            }
        }
        let file = format!("markov_{}_{}.json", slug(&g.app), g.content);
        let q = [m.quadrant_mass(1), m.quadrant_mass(2), m.quadrant_mass(3), m.quadrant_mass(4)];
        run.note(format!(
            "{}: k={k}, {} flows, {} transitions, quadrant mass {:.2}/{:.2}/{:.2}/{:.2}",
            group_name(&g),
            model.flows,
            model.transitions,
            q[0],
            q[1],
            q[2],
            q[3]
        ));
        summaries.push(ModelSummary {
            app: g.app.clone(),
            content: g.content.to_string(),
            file: file.clone(),
            k,
            flows: model.flows,
            transitions: model.transitions,
            zero_rows: model.zero_rows.len(),
            quadrant_mass: q,
        });
        if cfg.svg {
            let name = format!("fig4_{}_{}.svg", slug(&g.app), g.content);
            run.write_bytes(&name, svg::heatmap(&m.cells, &group_name(&g)).as_bytes())?;
        }
        run.write_json(
            &file,
            &GroupModel {
                app: g.app.clone(),
                content: g.content.to_string(),
                model,
            },
        )?;
    }
    if summaries.is_empty() {
        return Err(RunError::stage("markov", "no group could be modeled"));
    }
    run.write_csv("fig4_matrix.csv", &matrix_rows)?;
    run.write_json("markov_summary.json", &summaries)?;
    run.finish()
}

#[derive(Serialize)]
struct GeneratedRow {
    index: usize,
    ts_us: u64,
    pl: u32,
    dir: i8,
}

pub const SYNTHETIC_BASE_TS_US: u64 = 1_700_000_000_000_000;

/// Samples a packet sequence from a fitted model and writes it as a pcap
/// of one TCP biflow.
pub fn markov_generate(cfg: &Config, model_path: &Path, out: &Path) -> Result<Outcome, RunError> {
    let mut run = Run::new(out, "markov generate", cfg)?;
    run.seeds.push(cfg.seed);
    let g = GroupModel::load(model_path)?;
    if let Ok(sha256) = super::sha256_file(model_path) {
        run.inputs.push(crate::markov::InputDigest {
            path: model_path.display().to_string(),
            sha256,
        });
    }
    let seq = run
        .time("generate", || markov::generate(&g.model, cfg.generate.length, cfg.seed))
        .map_err(|e| RunError::stage("generate", e))?;
    if seq.fallbacks > 0 {
        run.warn(format!("{} restart(s) from the initial distribution at dead-end states", seq.fallbacks));
    }
    run.count("generate.fallbacks", seq.fallbacks);
    run.count("generate.packets", seq.packets.len() as u64);

    let client = (IpAddr::V4(Ipv4Addr::new(10, 0, 0, 1)), 40000);
    let server = (IpAddr::V4(Ipv4Addr::new(10, 0, 0, 2)), 443);
    let mut rows = Vec::with_capacity(seq.packets.len());
    let mut packets = Vec::with_capacity(seq.packets.len());
    for (i, &(pl, dir)) in seq.packets.iter().enumerate() {
        let ts = SYNTHETIC_BASE_TS_US + i as u64 * cfg.generate.iat_us;
        let (src, dst) = match dir {
            Direction::Upstream => (client, server),
            Direction::Downstream => (server, client),
        };
        packets.push(PacketRecord::new(ts, IpProto::Tcp, src, dst, vec![0u8; pl as usize]));
        rows.push(GeneratedRow {
            index: i,
            ts_us: ts,
            pl,
            dir: dir.sign(),
        });
    }
    let trace = CaptureTrace::from_packets(packets, "synthetic.pcap");
    let path = run.output_path("synthetic.pcap");
    write_capture(&trace, &path).map_err(|e| RunError::stage("generate", e))?;
    run.write_csv("generated.csv", &rows)?;
    run.note(format!("{} packets generated from {}", seq.packets.len(), model_path.display()));
    run.finish()
}

#[derive(Serialize)]
struct DissectionRow {
    flow_id: String,
    app: String,
    content: String,
    label: &'static str,
    sni: String,
    version: String,
    via_quic: bool,
    sni_offset: Option<usize>,
    sni_len: Option<usize>,
    reasons: String,
    error: String,
}

fn dissect_flows(run: &mut Run, flows: &[Biflow]) -> Result<Vec<FlowDissection>, RunError> {
    let p = pool(run.config.jobs)?;
    let d = run.time("dissect", || p.install(|| dissect_all(flows)));
    for x in &d {
        for r in &x.reasons {
            run.count(format!("dissect.{}", r.code()), 1);
        }
    }
    Ok(d)
}

/// Protocol labels, SNI shares and negotiated TLS versions.
pub fn dissect(cfg: &Config, inputs: &[PathBuf], out: &Path) -> Result<Outcome, RunError> {
    let mut run = Run::new(out, "dissect", cfg)?;
    let caps = load(&mut run, inputs)?;
    let flows = all_flows(&caps);
    let ds = dissect_flows(&mut run, &flows)?;

    let mix = protocol_mix(&flows, &ds);
    run.write_csv("fig5_protocols.csv", &mix)?;
    for m in mix.iter().filter(|m| m.biflows > 0) {
        run.note(format!("{}/{} {}: {} biflows ({:.1}%)", m.app, m.content, m.label.as_str(), m.biflows, m.biflow_pct));
    }
    run.write_csv("table2_sni.csv", &sni_share_table(&flows, &ds, Some(cfg.dissect.min_sni_pct)))?;
    run.write_csv("sni_shares_all.csv", &sni_share_table(&flows, &ds, None))?;
    run.write_csv("tls_versions.csv", &tls_version_mix(&flows, &ds))?;

    let rows: Vec<DissectionRow> = flows
        .iter()
        .zip(&ds)
        .map(|(f, d)| {
            let g = metrics::group_of(f);
            let tls = d.tls.as_ref();
            DissectionRow {
                flow_id: d.flow_id.clone(),
                app: g.app,
                content: g.content.to_string(),
                label: d.label.as_str(),
                sni: tls.and_then(|t| t.sni.clone()).unwrap_or_default(),
                version: tls.map(|t| t.negotiated_version.as_str().to_string()).unwrap_or_default(),
                via_quic: tls.is_some_and(|t| t.via_quic),
                sni_offset: tls.and_then(|t| t.sni_range).map(|r| r.offset),
                sni_len: tls.and_then(|t| t.sni_range).map(|r| r.len),
                reasons: d.reasons.iter().map(|r| r.code()).collect::<Vec<_>>().join(";"),
                error: d.error.clone().unwrap_or_default(),
            }
        })
        .collect();
    run.write_csv("dissections.csv", &rows)?;
    run.finish()
}

fn sample_set(run: &mut Run, inputs: &[PathBuf]) -> Result<SampleSet, RunError> {
    let caps = load(run, inputs)?;
    let flows = all_flows(&caps);
    let ds = dissect_flows(run, &flows)?;
    let task = run.config.classify.task;
    let set = run.time("samples", || build_samples(&flows, &ds, task));
    run.count("classify.samples", set.samples.len() as u64);
    run.count("classify.excluded_no_payload", set.excluded_no_payload);
    run.count("classify.excluded_unlabeled", set.excluded_unlabeled);
    if set.excluded_unlabeled > 0 {
        run.warn(format!("{} unlabeled biflow(s) left out of classification", set.excluded_unlabeled));
    }
    Ok(set)
}

fn classifier_err(e: ClassifierError) -> RunError {
    match e {
        ClassifierError::TooFewClasses(_)
        | ClassifierError::ClassTooSmall { .. }
        | ClassifierError::ClassCountMismatch { .. }
        | ClassifierError::ClassNameMismatch
        | ClassifierError::BadCheckpoint(_)
        | ClassifierError::EmptyTestSet => RunError::Usage(e.to_string()),
        ClassifierError::Unpaired(_) => RunError::stage("classify", e),
    }
}

#[derive(Serialize)]
struct ConfusionRow {
    occluded: bool,
    true_class: String,
    predicted_class: String,
    mean_rate: f64,
}

#[derive(Serialize)]
struct PerClassRow {
    seed: u64,
    occluded: bool,
    class: String,
    support: u64,
    precision: f64,
    recall: f64,
    f1: f64,
}

#[derive(Serialize)]
struct LossRow {
    seed: u64,
    epoch: usize,
    loss: f64,
}

fn confusion_rows(rows: &mut Vec<ConfusionRow>, classes: &[String], occluded: bool, m: &[Vec<f64>]) {
    for (i, row) in m.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            rows.push(ConfusionRow {
                occluded,
                true_class: classes[i].clone(),
                predicted_class: classes[j].clone(),
                mean_rate: v,
            });
        }
    }
}

fn per_class_rows(reports: &[EvalReport]) -> Vec<PerClassRow> {
    reports
        .iter()
        .flat_map(|r| {
            r.per_class.iter().map(move |c| PerClassRow {
                seed: r.seed,
                occluded: r.occluded,
                class: c.class.clone(),
                support: c.support,
                precision: c.precision,
                recall: c.recall,
                f1: c.f1,
            })
        })
        .collect()
}

fn eval_table(plain: &classifier::RepetitionSummary, masked: &classifier::RepetitionSummary) -> String {
    format!(
        "task {}\nseeds {:?}\n{:<10} {:>10} {:>10} {:>10}\n{:<10} {:>10.4} {:>10.4} {:>10.4}\n{:<10} {:>10.4} {:>10.4} {:>10.4}\n",
        plain.task,
        plain.seeds,
        "",
        "macro_f1",
        "std",
        "accuracy",
        "plain",
        plain.macro_f1_mean,
        plain.macro_f1_std,
        plain.accuracy_mean,
        "occluded",
        masked.macro_f1_mean,
        masked.macro_f1_std,
        masked.accuracy_mean
    )
}

#[derive(Serialize)]
struct EvalSummary {
    plain: classifier::RepetitionSummary,
    masked: classifier::RepetitionSummary,
    delta: classifier::OcclusionDelta,
}

/// Trains one network per seed, evaluates each with and without the SNI
/// occluded, and writes checkpoints and reports.
pub fn classify_train(cfg: &Config, inputs: &[PathBuf], out: &Path) -> Result<Outcome, RunError> {
    let mut run = Run::new(out, "classify train", cfg)?;
    let seeds = cfg.classify.seeds(cfg.seed);
    run.seeds = seeds.clone();
    let set = sample_set(&mut run, inputs)?;
    let tc = cfg.classify.train_config(cfg.seed);
    let p = pool(cfg.jobs)?;
    let reps = run
        .time("train", || p.install(|| run_repetitions(&set, &tc, &seeds)))
        .map_err(classifier_err)?;

    let mut losses = Vec::new();
    for r in &reps {
        let ck = Checkpoint::new(&r.network, set.task, &set.classes, r.seed, tc.clone_with_seed(r.seed));
        let path = run.output_path(&format!("ckpt_seed{}.json", r.seed));
        ck.save(&path).map_err(|e| RunError::stage("output", format!("{}: {e}", path.display())))?;
        for (i, &l) in r.log.epoch_loss.iter().enumerate() {
            losses.push(LossRow {
                seed: r.seed,
                epoch: i + 1,
                loss: l,
            });
        }
    }
    let plain: Vec<EvalReport> = reps.iter().map(|r| r.plain.clone()).collect();
    let masked: Vec<EvalReport> = reps.iter().map(|r| r.masked.clone()).collect();
    let ps = classifier::summarize(&plain).expect("at least one repetition");
    let ms = classifier::summarize(&masked).expect("at least one repetition");
    let delta = occlusion_delta(&plain, &masked).map_err(classifier_err)?;

    let mut conf = Vec::new();
    confusion_rows(&mut conf, &set.classes, false, &ps.mean_confusion);
    confusion_rows(&mut conf, &set.classes, true, &ms.mean_confusion);
    let mut pc = per_class_rows(&plain);
    pc.extend(per_class_rows(&masked));

    run.write_json("eval_plain.json", &plain)?;
    run.write_json("eval_masked.json", &masked)?;
    run.write_csv("fig6_confusion.csv", &conf)?;
    run.write_csv("per_class.csv", &pc)?;
    run.write_csv("training_loss.csv", &losses)?;
    let table = eval_table(&ps, &ms);
    run.write_bytes("eval_table.txt", table.as_bytes())?;
    run.note(format!(
        "{} classes, {} samples; macro F1 {:.4} ± {:.4}, occluded {:.4} ± {:.4}",
        set.classes.len(),
        set.samples.len(),
        ps.macro_f1_mean,
        ps.macro_f1_std,
        ms.macro_f1_mean,
        ms.macro_f1_std
    ));
    run.write_json(
        "eval_summary.json",
        &EvalSummary {
            plain: ps,
            masked: ms,
            delta,
        },
    )?;
    run.finish()
}

trait WithSeed {
    fn clone_with_seed(&self, seed: u64) -> Self;
}

impl WithSeed for classifier::TrainConfig {
    fn clone_with_seed(&self, seed: u64) -> Self {
        classifier::TrainConfig { seed, ..*self }
    }
}

/// Evaluates a saved checkpoint, optionally with the SNI occluded. Unless
/// `all` is set, only the test part of the checkpoint's own split is used.
pub fn classify_eval(
    cfg: &Config,
    checkpoint: &Path,
    inputs: &[PathBuf],
    out: &Path,
    occlude: bool,
    all: bool,
) -> Result<Outcome, RunError> {
    let name = if occlude { "classify occlude" } else { "classify eval" };
    let mut run = Run::new(out, name, cfg)?;
    let ck = Checkpoint::load(checkpoint).map_err(classifier_err)?;
    let net = ck.network().map_err(classifier_err)?;
    if let Ok(sha256) = super::sha256_file(checkpoint) {
        run.inputs.push(crate::markov::InputDigest {
            path: checkpoint.display().to_string(),
            sha256,
        });
    }
    run.seeds.push(ck.seed);
    run.config.classify.task = ck.task;
    let set = sample_set(&mut run, inputs)?;
    if set.classes.len() != ck.classes.len() {
        return Err(classifier_err(ClassifierError::ClassCountMismatch {
            checkpoint: ck.classes.len(),
            data: set.classes.len(),
        }));
    }
    if set.classes != ck.classes {
        return Err(classifier_err(ClassifierError::ClassNameMismatch));
    }
    let idx: Vec<usize> = if all {
        (0..set.samples.len()).collect()
    } else {
        let labels: Vec<usize> = set.samples.iter().map(|s| s.label).collect();
        stratified_split(&labels, set.classes.len(), ck.config.train_frac, ck.seed).1
    };
    let test: Vec<&SampleVector> = idx.iter().map(|&i| &set.samples[i]).collect();
    let report = run
        .time("evaluate", || classifier::evaluate(&net, &test, &set.classes, ck.task, ck.seed, occlude))
        .map_err(classifier_err)?;
    if occlude && report.unmasked_no_sni > 0 {
        run.warn(format!("{} test sample(s) had no SNI in the input window", report.unmasked_no_sni));
    }
    let mut conf = Vec::new();
    confusion_rows(&mut conf, &set.classes, occlude, &report.confusion);
    run.write_csv("confusion.csv", &conf)?;
    run.write_csv("per_class.csv", &per_class_rows(std::slice::from_ref(&report)))?;
    run.note(format!(
        "{} test samples{}: accuracy {:.4}, macro F1 {:.4}",
        report.test_samples,
        if occlude { " (SNI occluded)" } else { "" },
        report.accuracy,
        report.macro_f1
    ));
    run.write_json("eval.json", &report)?;
    run.finish()
}

/// Writes the synthetic fixture captures used by the tests and examples.
pub fn fixtures_make(cfg: &Config, out: &Path, flows_per_class: usize) -> Result<Outcome, RunError> {
    let mut run = Run::new(out, "fixtures make", cfg)?;
    run.seeds.push(cfg.seed);
    let err = |e| RunError::stage("fixtures", e);
    let traces = [
        ("three_packet.pcap", fixtures::three_packet_trace()),
        ("tls_handshake.pcap", fixtures::tls_handshake_trace("chat.example.com")),
        ("quic_vector.pcap", fixtures::quic_vector_trace()),
        ("plain_udp.pcap", fixtures::plain_udp_trace(cfg.seed)),
    ];
    for (name, trace) in &traces {
        let path = run.output_path(name);
        write_capture(trace, &path).map_err(err)?;
    }
    let path = run.output_path("arp_only.pcap");
    write_raw_frames(&path, LinkType::Ethernet, 65535, &fixtures::arp_frames()).map_err(err)?;

    let dir = out.join("dataset");
    fs::create_dir_all(&dir).map_err(|e| RunError::stage("output", format!("{}: {e}", dir.display())))?;
    let caps = run.time("dataset", || fixtures::classification_dataset(flows_per_class, cfg.seed));
    for c in &caps {
        let path = run.output_path(&format!("dataset/{}.pcap", c.stem));
        write_capture(&c.trace, &path).map_err(err)?;
        let labels = toml::to_string(&c.labels).map_err(|e| RunError::stage("fixtures", e))?;
        run.write_bytes(&format!("dataset/{}.labels.toml", c.stem), labels.as_bytes())?;
    }
    run.note(format!("{} fixture captures, {} dataset captures", traces.len() + 1, caps.len()));
    run.finish()
}
