//! C ABI over the gentraffic library.
//!
//! Objects are opaque handles created by `gt_*_open`/`gt_*_fit` style
//! calls and released with the matching `gt_*_free`. Every fallible call
//! returns a [`GtStatus`]; on failure [`gt_last_error`] gives a message
//! for the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use gentraffic::capture::{read_capture, CaptureTrace};
use gentraffic::classifier::{encode_bytes, Checkpoint};
use gentraffic::classifier::cnn::{Cnn, INPUT_LEN};
use gentraffic::dissect::{dissect_biflow, FlowDissection, ProtocolLabel, TlsVersion};
use gentraffic::flow::{apply_labels, assemble_biflows, load_label_map, Biflow, Direction, Transport};
use gentraffic::markov::{self, MarkovModel};
use gentraffic::metrics::{rate_distribution, rate_series_for, Delta, RateMetric};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    OutOfRange = 5,
    BufferTooSmall = 6,
    NoData = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtProtocol {
    TcpTls = 0,
    TcpUnk = 1,
    UdpQuicTls = 2,
    UdpUnk = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtTlsVersion {
    None = 0,
    Tls12 = 1,
    Tls13 = 2,
    Other = 3,
    Unknown = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtRateMetric {
    DownBytes = 0,
    UpBytes = 1,
    DownPkts = 2,
    UpPkts = 3,
}

/// Per-biflow counters.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GtFlowInfo {
    /// 6 for TCP, 17 for UDP.
    pub ip_proto: u8,
    pub packets: u64,
    pub up_packets: u64,
    pub down_packets: u64,
    pub up_bytes: u64,
    pub down_bytes: u64,
    pub first_ts_us: u64,
    pub last_ts_us: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GtDissection {
    pub protocol: GtProtocol,
    pub version: GtTlsVersion,
    pub via_quic: bool,
    pub has_sni: bool,
    /// Offset and length of the server_name extension in the flow's
    /// payload stream; zero when absent.
    pub sni_offset: usize,
    pub sni_len: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GtRateStats {
    pub windows: u64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

pub struct GtTrace {
    trace: CaptureTrace,
}

pub struct GtFlows {
    flows: Vec<Biflow>,
    dissections: Vec<Option<FlowDissection>>,
}

pub struct GtModel {
    model: MarkovModel,
}

pub struct GtClassifier {
    classes: Vec<CString>,
    net: Cnn<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(GtStatus, String);

impl Fail {
    fn new(status: GtStatus, msg: impl std::fmt::Display) -> Self {
        Fail(status, msg.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            GtStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            GtStatus::Panic
        }
    }
}

unsafe fn arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail::new(GtStatus::NullArgument, format!("{name} is null")))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail::new(GtStatus::NullArgument, format!("{name} is null")))
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::new(GtStatus::NullArgument, format!("{name} is null")));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::new(GtStatus::InvalidArgument, format!("{name} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Copies `s` plus a terminating NUL into `buf`. `needed` always receives
/// the required size including the NUL.
unsafe fn copy_str(s: &[u8], buf: *mut c_char, cap: usize, needed: *mut usize) -> Result<(), Fail> {
    if let Some(n) = needed.as_mut() {
        *n = s.len() + 1;
    }
    if buf.is_null() || cap < s.len() + 1 {
        return Err(Fail::new(GtStatus::BufferTooSmall, format!("need {} bytes", s.len() + 1)));
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf as *mut u8, s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next call on the same thread.
#[no_mangle]
pub extern "C" fn gt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// # Safety
/// `path` must be a NUL-terminated string and `trace_out` writable.
#[no_mangle]
pub unsafe extern "C" fn gt_trace_open(path: *const c_char, trace_out: *mut *mut GtTrace) -> GtStatus {
    guard(|| {
        let out = out(trace_out, "trace_out")?;
        *out = ptr::null_mut();
        let path = path_arg(path, "path")?;
        let trace = read_capture(&path).map_err(|e| {
            let status = match e {
                gentraffic::capture::CaptureError::Read { .. } => GtStatus::Io,
                _ => GtStatus::Parse,
            };
            Fail::new(status, e)
        })?;
        *out = Box::into_raw(Box::new(GtTrace { trace }));
        Ok(())
    })
}

/// # Safety
/// `trace` must come from [`gt_trace_open`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn gt_trace_free(trace: *mut GtTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gt_trace_packet_count(trace: *const GtTrace, count_out: *mut usize) -> GtStatus {
    guard(|| {
        *out(count_out, "count_out")? = arg(trace, "trace")?.trace.packets.len();
        Ok(())
    })
}

/// Groups the trace's packets into biflows.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gt_flows_assemble(trace: *const GtTrace, flows_out: *mut *mut GtFlows) -> GtStatus {
    guard(|| {
        let out = out(flows_out, "flows_out")?;
        *out = ptr::null_mut();
        let flows = assemble_biflows(&arg(trace, "trace")?.trace);
        let n = flows.len();
        *out = Box::into_raw(Box::new(GtFlows {
            flows,
            dissections: vec![None; n],
        }));
        Ok(())
    })
}

/// # Safety
/// `flows` must come from [`gt_flows_assemble`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn gt_flows_free(flows: *mut GtFlows) {
    if !flows.is_null() {
        drop(Box::from_raw(flows));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gt_flows_count(flows: *const GtFlows, count_out: *mut usize) -> GtStatus {
    guard(|| {
        *out(count_out, "count_out")? = arg(flows, "flows")?.flows.len();
        Ok(())
    })
}

/// Labels biflows from a TOML label file.
///
/// # Safety
/// Pointers must be valid; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gt_flows_apply_labels(flows: *mut GtFlows, path: *const c_char) -> GtStatus {
    guard(|| {
        let flows = out(flows, "flows")?;
        let path = path_arg(path, "path")?;
        let map = load_label_map(&path).map_err(|e| Fail::new(GtStatus::Parse, e))?;
        apply_labels(&mut flows.flows, &map);
        Ok(())
    })
}

fn flow_at(flows: &GtFlows, index: usize) -> Result<&Biflow, Fail> {
    flows
        .flows
        .get(index)
        .ok_or_else(|| Fail::new(GtStatus::OutOfRange, format!("flow {index} of {}", flows.flows.len())))
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gt_flow_info(flows: *const GtFlows, index: usize, info_out: *mut GtFlowInfo) -> GtStatus {
    guard(|| {
        let f = flow_at(arg(flows, "flows")?, index)?;
        let mut info = GtFlowInfo {
            ip_proto: match f.transport() {
                Transport::Tcp => 6,
                Transport::Udp => 17,
            },
            packets: f.packets.len() as u64,
            first_ts_us: f.first_ts_us,
            last_ts_us: f.last_ts_us,
            ..Default::default()
        };
        for p in &f.packets {
            let pl = p.packet.payload_len as u64;
            match p.dir {
                Direction::Upstream => {
                    info.up_packets += 1;
                    info.up_bytes += pl;
                }
                Direction::Downstream => {
                    info.down_packets += 1;
                    info.down_bytes += pl;
                }
            }
        }
        *out(info_out, "info_out")? = info;
        Ok(())
    })
}

/// Copies the flow's app label into `buf`; `needed` receives the size
/// including the terminating NUL.
///
/// # Safety
/// `buf` must hold `cap` bytes; other pointers valid or NULL where noted.
#[no_mangle]
pub unsafe extern "C" fn gt_flow_app(
    flows: *const GtFlows,
    index: usize,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> GtStatus {
    guard(|| {
        let f = flow_at(arg(flows, "flows")?, index)?;
        let app = gentraffic::metrics::group_of(f).app;
        copy_str(app.as_bytes(), buf, cap, needed)
    })
}

fn dissection(flows: &mut GtFlows, index: usize) -> Result<&FlowDissection, Fail> {
    flow_at(flows, index)?;
    if flows.dissections[index].is_none() {
        flows.dissections[index] = Some(dissect_biflow(&flows.flows[index]));
    }
    Ok(flows.dissections[index].as_ref().expect("just filled"))
}

/// Protocol label and TLS metadata of one biflow.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gt_flow_dissect(flows: *mut GtFlows, index: usize, out_info: *mut GtDissection) -> GtStatus {
    guard(|| {
        let d = dissection(out(flows, "flows")?, index)?;
        let tls = d.tls.as_ref();
        let range = tls.and_then(|t| t.sni_range);
        let info = GtDissection {
            protocol: match d.label {
                ProtocolLabel::TcpTls => GtProtocol::TcpTls,
                ProtocolLabel::TcpUnk => GtProtocol::TcpUnk,
                ProtocolLabel::UdpQuicTls => GtProtocol::UdpQuicTls,
                ProtocolLabel::UdpUnk => GtProtocol::UdpUnk,
            },
            version: match tls.map(|t| t.negotiated_version) {
                None => GtTlsVersion::None,
                Some(TlsVersion::Tls12) => GtTlsVersion::Tls12,
                Some(TlsVersion::Tls13) => GtTlsVersion::Tls13,
                Some(TlsVersion::Other) => GtTlsVersion::Other,
                Some(TlsVersion::Unknown) => GtTlsVersion::Unknown,
            },
            via_quic: tls.is_some_and(|t| t.via_quic),
            has_sni: tls.is_some_and(|t| t.sni.is_some()),
            sni_offset: range.map_or(0, |r| r.offset),
            sni_len: range.map_or(0, |r| r.len),
        };
        *out(out_info, "out_info")? = info;
        Ok(())
    })
}

/// Copies the biflow's SNI into `buf`. Fails with `NoData` when the flow
/// has none.
///
/// # Safety
/// `buf` must hold `cap` bytes; other pointers valid or NULL where noted.
#[no_mangle]
pub unsafe extern "C" fn gt_flow_sni(
    flows: *mut GtFlows,
    index: usize,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> GtStatus {
    guard(|| {
        let d = dissection(out(flows, "flows")?, index)?;
        match d.tls.as_ref().and_then(|t| t.sni.as_deref()) {
            Some(sni) => copy_str(sni.as_bytes(), buf, cap, needed),
            None => Err(Fail::new(GtStatus::NoData, "no SNI")),
        }
    })
}

/// Windowed-rate statistics over all biflows, in units per second.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gt_flows_rate_stats(
    flows: *const GtFlows,
    delta_s: f64,
    metric: GtRateMetric,
    stats_out: *mut GtRateStats,
) -> GtStatus {
    guard(|| {
        let flows = arg(flows, "flows")?;
        let delta = Delta::from_secs(delta_s)
            .ok_or_else(|| Fail::new(GtStatus::InvalidArgument, format!("delta must be positive, got {delta_s}")))?;
        let refs: Vec<&Biflow> = flows.flows.iter().collect();
        let series = rate_series_for(&refs, delta);
        let m = match metric {
            GtRateMetric::DownBytes => RateMetric::DownBytes,
            GtRateMetric::UpBytes => RateMetric::UpBytes,
            GtRateMetric::DownPkts => RateMetric::DownPkts,
            GtRateMetric::UpPkts => RateMetric::UpPkts,
        };
        let s = rate_distribution(&[&series], m).ok_or_else(|| Fail::new(GtStatus::NoData, "no non-empty windows"))?;
        *out(stats_out, "stats_out")? = GtRateStats {
            windows: s.windows,
            min: s.min,
            q1: s.q1,
            median: s.median,
            q3: s.q3,
            max: s.max,
            mean: s.mean,
        };
        Ok(())
    })
}

/// Fits a Markov chain with `k` payload-length bins over all biflows.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gt_markov_fit(flows: *const GtFlows, k: usize, seed: u64, model_out: *mut *mut GtModel) -> GtStatus {
    guard(|| {
        let out = out(model_out, "model_out")?;
        *out = ptr::null_mut();
        let flows = arg(flows, "flows")?;
        let pls = markov::payload_lengths(&flows.flows);
        let binning = markov::fit_binning(&pls, k, seed).map_err(|e| Fail::new(GtStatus::InvalidArgument, e))?;
        let mut model = markov::fit_model(&flows.flows, &binning).map_err(|e| Fail::new(GtStatus::InvalidArgument, e))?;
        model.seed = Some(seed);
        *out = Box::into_raw(Box::new(GtModel { model }));
        Ok(())
    })
}

/// Loads a model file written by `gentraffic markov fit`.
///
/// # Safety
/// `path` NUL-terminated; `model_out` writable.
#[no_mangle]
pub unsafe extern "C" fn gt_markov_load(path: *const c_char, model_out: *mut *mut GtModel) -> GtStatus {
    guard(|| {
        let out = out(model_out, "model_out")?;
        *out = ptr::null_mut();
        let path = path_arg(path, "path")?;
        let g = gentraffic::report::commands::GroupModel::load(&path).map_err(|e| Fail::new(GtStatus::Parse, e))?;
        *out = Box::into_raw(Box::new(GtModel { model: g.model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from a `gt_markov_*` constructor or be NULL.
#[no_mangle]
pub unsafe extern "C" fn gt_markov_free(model: *mut GtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of payload-length bins; the chain has twice as many states.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gt_markov_bins(model: *const GtModel, k_out: *mut usize) -> GtStatus {
    guard(|| {
        *out(k_out, "k_out")? = arg(model, "model")?.model.k();
        Ok(())
    })
}

/// Transition probability between state indices.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gt_markov_transition(model: *const GtModel, from: usize, to: usize, p_out: *mut f64) -> GtStatus {
    guard(|| {
        let m = &arg(model, "model")?.model;
        let n = m.state_count();
        if from >= n || to >= n {
            return Err(Fail::new(GtStatus::OutOfRange, format!("state index out of range (states: {n})")));
        }
        *out(p_out, "p_out")? = m.transition[from][to];
        Ok(())
    })
}

/// Samples `len` packets into `pl` and `dir` (-1 up, +1 down), which
/// must each hold `len` elements.
///
/// # Safety
/// `pl` and `dir` must point to `len` writable elements.
#[no_mangle]
pub unsafe extern "C" fn gt_markov_generate(
    model: *const GtModel,
    len: usize,
    seed: u64,
    pl: *mut u32,
    dir: *mut i8,
) -> GtStatus {
    guard(|| {
        let m = &arg(model, "model")?.model;
        if len == 0 {
            return Ok(());
        }
        if pl.is_null() || dir.is_null() {
            return Err(Fail::new(GtStatus::NullArgument, "pl or dir is null"));
        }
        let seq = markov::generate(m, len, seed).map_err(|e| Fail::new(GtStatus::InvalidArgument, e))?;
        let pl = std::slice::from_raw_parts_mut(pl, len);
        let dir = std::slice::from_raw_parts_mut(dir, len);
        for (i, (p, d)) in seq.packets.iter().enumerate() {
            pl[i] = *p;
            dir[i] = d.sign();
        }
        Ok(())
    })
}

/// Loads a classifier checkpoint.
///
/// # Safety
/// `path` NUL-terminated; `out_clf` writable.
#[no_mangle]
pub unsafe extern "C" fn gt_classifier_load(path: *const c_char, out_clf: *mut *mut GtClassifier) -> GtStatus {
    guard(|| {
        let out = out(out_clf, "out_clf")?;
        *out = ptr::null_mut();
        let path = path_arg(path, "path")?;
        let ck = Checkpoint::load(&path).map_err(|e| Fail::new(GtStatus::Parse, e))?;
        let net = ck.network().map_err(|e| Fail::new(GtStatus::Parse, e))?;
        let classes = ck
            .classes
            .iter()
            .map(|c| CString::new(c.as_str()).map_err(|_| Fail::new(GtStatus::Parse, "class name contains NUL")))
            .collect::<Result<_, _>>()?;
        *out = Box::into_raw(Box::new(GtClassifier { classes, net }));
        Ok(())
    })
}

/// # Safety
/// `clf` must come from [`gt_classifier_load`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn gt_classifier_free(clf: *mut GtClassifier) {
    if !clf.is_null() {
        drop(Box::from_raw(clf));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gt_classifier_class_count(clf: *const GtClassifier, count_out: *mut usize) -> GtStatus {
    guard(|| {
        *out(count_out, "count_out")? = arg(clf, "clf")?.classes.len();
        Ok(())
    })
}

/// Class name owned by the classifier; valid until it is freed.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gt_classifier_class_name(
    clf: *const GtClassifier,
    index: usize,
    name_out: *mut *const c_char,
) -> GtStatus {
    guard(|| {
        let c = arg(clf, "clf")?;
        let name = c
            .classes
            .get(index)
            .ok_or_else(|| Fail::new(GtStatus::OutOfRange, format!("class {index} of {}", c.classes.len())))?;
        *out(name_out, "name_out")? = name.as_ptr();
        Ok(())
    })
}

/// Classifies a payload prefix; bytes past the input window are ignored
/// and shorter inputs are zero-padded.
///
/// # Safety
/// `bytes` must point to `len` readable bytes (may be NULL when `len` is 0).
#[no_mangle]
pub unsafe extern "C" fn gt_classifier_predict(
    clf: *const GtClassifier,
    bytes: *const u8,
    len: usize,
    class_out: *mut usize,
) -> GtStatus {
    guard(|| {
        let c = arg(clf, "clf")?;
        let data: &[u8] = if len == 0 {
            &[]
        } else if bytes.is_null() {
            return Err(Fail::new(GtStatus::NullArgument, "bytes is null"));
        } else {
            std::slice::from_raw_parts(bytes, len.min(INPUT_LEN))
        };
        let logits = c.net.logits(&encode_bytes(data));
        let best = logits
            .iter()
            .enumerate()
            .fold((0, f32::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
            .0;
        *out(class_out, "class_out")? = best;
        Ok(())
    })
}
