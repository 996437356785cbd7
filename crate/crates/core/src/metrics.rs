//! Per-group trace summaries and Δ-windowed byte/packet rates.
//!
//! Windows are half-open, `[t0 + (i-1)Δ, t0 + iΔ)` for `i = 1..=n` with
//! `n = max(1, ⌈D/Δ⌉)`; the last window is closed on the right so the
//! final packet of a trace whose span is an exact multiple of Δ is kept.

use std::collections::BTreeMap;
use std::num::NonZeroU64;

use serde::{Deserialize, Serialize};

use crate::flow::{Biflow, Direction, FlowLabel, FlowPacket};

/// Window length, strictly positive, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delta(NonZeroU64);

impl Delta {
    pub const ONE_SECOND: Delta = Delta(NonZeroU64::new(1_000_000).unwrap());

    pub fn from_micros(us: u64) -> Option<Self> {
        NonZeroU64::new(us).map(Delta)
    }

    /// Rounds to the nearest microsecond; `None` unless the result is positive.
    pub fn from_secs(s: f64) -> Option<Self> {
        if !s.is_finite() || s <= 0.0 {
            return None;
        }
        Self::from_micros((s * 1e6).round() as u64)
    }

    pub fn micros(self) -> u64 {
        self.0.get()
    }

    pub fn secs(self) -> f64 {
        self.0.get() as f64 / 1e6
    }
}

impl Default for Delta {
    fn default() -> Self {
        Delta::ONE_SECOND
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub app: String,
    pub content: String,
    pub biflows: u64,
    pub packets_total: u64,
    pub packets_down_pct: f64,
    /// Transport payload bytes.
    pub volume_bytes: u64,
    pub volume_down_pct: f64,
    /// On-wire frame bytes, reported alongside the payload volume.
    pub wire_bytes: u64,
    pub wire_down_pct: f64,
}

pub(crate) fn pct(part: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * part as f64 / total as f64
    }
}

/// Group key of a biflow; unlabeled flows fall in the `UNK`/`none` group.
pub fn group_of(flow: &Biflow) -> FlowLabel {
    flow.label.clone().unwrap_or_else(FlowLabel::unknown)
}

/// One summary row per (app, content) group, ordered by group.
pub fn summarize(biflows: &[Biflow]) -> Vec<TraceSummary> {
    #[derive(Default)]
    struct Acc {
        flows: u64,
        pkts: [u64; 2],
        bytes: [u64; 2],
        wire: [u64; 2],
    }
    let mut groups: BTreeMap<FlowLabel, Acc> = BTreeMap::new();
    for flow in biflows {
        let acc = groups.entry(group_of(flow)).or_default();
        acc.flows += 1;
        for p in &flow.packets {
            let d = (p.dir == Direction::Downstream) as usize;
            acc.pkts[d] += 1;
            acc.bytes[d] += p.packet.payload_len as u64;
            acc.wire[d] += p.packet.wire_len as u64;
        }
    }
    groups
        .into_iter()
        .map(|(g, a)| {
            let packets_total = a.pkts[0] + a.pkts[1];
            let volume_bytes = a.bytes[0] + a.bytes[1];
            let wire_bytes = a.wire[0] + a.wire[1];
            TraceSummary {
                app: g.app,
                content: g.content.to_string(),
                biflows: a.flows,
                packets_total,
                packets_down_pct: pct(a.pkts[1], packets_total),
                volume_bytes,
                volume_down_pct: pct(a.bytes[1], volume_bytes),
                wire_bytes,
                wire_down_pct: pct(a.wire[1], wire_bytes),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateWindow {
    /// 1-based window index.
    pub index: u64,
    pub up_bytes: u64,
    pub down_bytes: u64,
    pub up_pkts: u64,
    pub down_pkts: u64,
}

impl RateWindow {
    pub fn is_empty(&self) -> bool {
        self.up_bytes == 0 && self.down_bytes == 0 && self.up_pkts == 0 && self.down_pkts == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSeries {
    pub delta_us: u64,
    pub t0_us: u64,
    pub window_count: u64,
    /// Windows with at least one packet, in index order.
    pub windows: Vec<RateWindow>,
    pub empty_excluded: u64,
}

fn full_timeline<'a, I>(packets: I, delta: Delta) -> (u64, Vec<RateWindow>)
where
    I: IntoIterator<Item = &'a FlowPacket>,
{
    let packets: Vec<&FlowPacket> = packets.into_iter().collect();
    let Some(t0) = packets.iter().map(|p| p.packet.ts_us).min() else {
        return (0, Vec::new());
    };
    let t_end = packets.iter().map(|p| p.packet.ts_us).max().unwrap();
    let d = delta.micros();
    let span = t_end - t0;
    let n = span.div_ceil(d).max(1);
    let mut windows: Vec<RateWindow> = (1..=n)
        .map(|index| RateWindow {
            index,
            ..Default::default()
        })
        .collect();
    for p in packets {
        let slot = (((p.packet.ts_us - t0) / d) as usize).min(n as usize - 1);
        let w = &mut windows[slot];
        let len = p.packet.payload_len as u64;
        match p.dir {
            Direction::Upstream => {
                w.up_bytes += len;
                w.up_pkts += 1;
            }
            Direction::Downstream => {
                w.down_bytes += len;
                w.down_pkts += 1;
            }
        }
    }
    (t0, windows)
}

/// Windowed rates over the given packets; all-zero windows are dropped
/// and counted in `empty_excluded`.
pub fn rate_series<'a, I>(packets: I, delta: Delta) -> RateSeries
where
    I: IntoIterator<Item = &'a FlowPacket>,
{
    let (t0_us, all) = full_timeline(packets, delta);
    let window_count = all.len() as u64;
    let windows: Vec<RateWindow> = all.into_iter().filter(|w| !w.is_empty()).collect();
    RateSeries {
        delta_us: delta.micros(),
        t0_us,
        window_count,
        empty_excluded: window_count - windows.len() as u64,
        windows,
    }
}

/// Rates of every packet in `biflows` on one shared timeline.
pub fn rate_series_for(biflows: &[&Biflow], delta: Delta) -> RateSeries {
    rate_series(biflows.iter().flat_map(|f| f.packets.iter()), delta)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileSample {
    pub index: u64,
    pub up_bytes: u64,
    pub down_bytes: u64,
}

/// Per-direction byte counts for every window of the span, silent windows
/// included.
pub fn directional_profile<'a, I>(packets: I, delta: Delta) -> Vec<ProfileSample>
where
    I: IntoIterator<Item = &'a FlowPacket>,
{
    full_timeline(packets, delta)
        .1
        .into_iter()
        .map(|w| ProfileSample {
            index: w.index,
            up_bytes: w.up_bytes,
            down_bytes: w.down_bytes,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMetric {
    DownBytes,
    UpBytes,
    DownPkts,
    UpPkts,
}

impl RateMetric {
    pub const ALL: [RateMetric; 4] = [
        RateMetric::DownBytes,
        RateMetric::UpBytes,
        RateMetric::DownPkts,
        RateMetric::UpPkts,
    ];

    pub fn of(self, w: &RateWindow) -> u64 {
        match self {
            RateMetric::DownBytes => w.down_bytes,
            RateMetric::UpBytes => w.up_bytes,
            RateMetric::DownPkts => w.down_pkts,
            RateMetric::UpPkts => w.up_pkts,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RateMetric::DownBytes => "down_bytes",
            RateMetric::UpBytes => "up_bytes",
            RateMetric::DownPkts => "down_pkts",
            RateMetric::UpPkts => "up_pkts",
        }
    }
}

/// Boxplot statistics of one rate metric over retained windows, in units
/// per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateStats {
    pub metric: RateMetric,
    pub windows: u64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

/// Distribution statistics pooled over the retained windows of several
/// series sharing one Δ (e.g. all capture sessions of a group).
pub fn rate_distribution(series: &[&RateSeries], metric: RateMetric) -> Option<RateStats> {
    let mut values: Vec<f64> = series
        .iter()
        .flat_map(|s| {
            let per_sec = 1e6 / s.delta_us as f64;
            s.windows.iter().map(move |w| metric.of(w) as f64 * per_sec)
        })
        .collect();
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(RateStats {
        metric,
        windows: values.len() as u64,
        min: values[0],
        q1: quantile(&values, 0.25),
        median: quantile(&values, 0.5),
        q3: quantile(&values, 0.75),
        max: *values.last().unwrap(),
        mean: values.iter().sum::<f64>() / values.len() as f64,
    })
}
