//! Protocol labeling, TLS handshake metadata and SNI traffic shares.

pub mod quic;
pub mod tls;

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::flow::{Biflow, Direction, FlowLabel, Transport};
use crate::metrics::{group_of, pct};

pub use quic::QuicError;
pub use tls::{ByteRange, OffsetMap, TlsError, TlsVersion};

/// How many leading payload bytes per direction are kept for handshake
/// parsing.
pub const HANDSHAKE_WINDOW: usize = 1 << 16;
/// How many packets per direction are tried as QUIC Initials.
pub const MAX_INITIAL_PACKETS: usize = 16;
/// Default SNI table cut-off, in percent of a group's biflows.
pub const DEFAULT_MIN_BIFLOW_PCT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProtocolLabel {
    #[serde(rename = "TCP:TLS")]
    TcpTls,
    #[serde(rename = "TCP:UNK")]
    TcpUnk,
    #[serde(rename = "UDP:QUIC_TLS")]
    UdpQuicTls,
    #[serde(rename = "UDP:UNK")]
    UdpUnk,
}

impl ProtocolLabel {
    pub const ALL: [ProtocolLabel; 4] = [
        ProtocolLabel::TcpTls,
        ProtocolLabel::TcpUnk,
        ProtocolLabel::UdpQuicTls,
        ProtocolLabel::UdpUnk,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolLabel::TcpTls => "TCP:TLS",
            ProtocolLabel::TcpUnk => "TCP:UNK",
            ProtocolLabel::UdpQuicTls => "UDP:QUIC_TLS",
            ProtocolLabel::UdpUnk => "UDP:UNK",
        }
    }

    pub fn is_tls(self) -> bool {
        matches!(self, ProtocolLabel::TcpTls | ProtocolLabel::UdpQuicTls)
    }

    fn unknown(t: Transport) -> Self {
        match t {
            Transport::Tcp => ProtocolLabel::TcpUnk,
            Transport::Udp => ProtocolLabel::UdpUnk,
        }
    }
}

impl fmt::Display for ProtocolLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Why a flow was demoted to UNK, or what went wrong while reading its
/// metadata. The string codes are stable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReasonCode {
    #[serde(rename = "flow.no_payload")]
    NoPayload,
    #[serde(rename = "tcp.not_tls_record")]
    NotTlsRecord,
    #[serde(rename = "tls.client_hello_malformed")]
    ClientHelloMalformed,
    #[serde(rename = "tls.no_server_hello")]
    NoServerHello,
    #[serde(rename = "tls.server_hello_malformed")]
    ServerHelloMalformed,
    #[serde(rename = "quic.not_long_header")]
    QuicNotLongHeader,
    #[serde(rename = "quic.unsupported_version")]
    QuicUnsupportedVersion,
    #[serde(rename = "quic.not_initial")]
    QuicNotInitial,
    #[serde(rename = "quic.malformed_header")]
    QuicMalformedHeader,
    #[serde(rename = "quic.auth_failed")]
    QuicAuthFailed,
    #[serde(rename = "quic.malformed_frame")]
    QuicMalformedFrame,
    #[serde(rename = "quic.missing_crypto")]
    QuicMissingCrypto,
    #[serde(rename = "quic.client_hello_malformed")]
    QuicClientHelloMalformed,
}

impl ReasonCode {
    pub const ALL: [ReasonCode; 13] = [
        ReasonCode::NoPayload,
        ReasonCode::NotTlsRecord,
        ReasonCode::ClientHelloMalformed,
        ReasonCode::NoServerHello,
        ReasonCode::ServerHelloMalformed,
        ReasonCode::QuicNotLongHeader,
        ReasonCode::QuicUnsupportedVersion,
        ReasonCode::QuicNotInitial,
        ReasonCode::QuicMalformedHeader,
        ReasonCode::QuicAuthFailed,
        ReasonCode::QuicMalformedFrame,
        ReasonCode::QuicMissingCrypto,
        ReasonCode::QuicClientHelloMalformed,
    ];

    pub fn code(self) -> &'static str {
        match self {
            ReasonCode::NoPayload => "flow.no_payload",
            ReasonCode::NotTlsRecord => "tcp.not_tls_record",
            ReasonCode::ClientHelloMalformed => "tls.client_hello_malformed",
            ReasonCode::NoServerHello => "tls.no_server_hello",
            ReasonCode::ServerHelloMalformed => "tls.server_hello_malformed",
            ReasonCode::QuicNotLongHeader => "quic.not_long_header",
            ReasonCode::QuicUnsupportedVersion => "quic.unsupported_version",
            ReasonCode::QuicNotInitial => "quic.not_initial",
            ReasonCode::QuicMalformedHeader => "quic.malformed_header",
            ReasonCode::QuicAuthFailed => "quic.auth_failed",
            ReasonCode::QuicMalformedFrame => "quic.malformed_frame",
            ReasonCode::QuicMissingCrypto => "quic.missing_crypto",
            ReasonCode::QuicClientHelloMalformed => "quic.client_hello_malformed",
        }
    }

    /// Whether the reason changed the flow's label (as opposed to leaving
    /// the negotiated version unknown).
    pub fn demotes(self) -> bool {
        !matches!(self, ReasonCode::NoServerHello | ReasonCode::ServerHelloMalformed)
    }
}

impl From<QuicError> for ReasonCode {
    fn from(e: QuicError) -> Self {
        match e {
            QuicError::NotLongHeader => ReasonCode::QuicNotLongHeader,
            QuicError::UnsupportedVersion(_) => ReasonCode::QuicUnsupportedVersion,
            QuicError::NotInitial => ReasonCode::QuicNotInitial,
            QuicError::MalformedHeader => ReasonCode::QuicMalformedHeader,
            QuicError::AuthenticationFailed => ReasonCode::QuicAuthFailed,
            QuicError::MalformedFrame(_) => ReasonCode::QuicMalformedFrame,
            QuicError::MissingCrypto => ReasonCode::QuicMissingCrypto,
        }
    }
}

impl fmt::Display for ReasonCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlsMetadata {
    pub sni: Option<String>,
    pub negotiated_version: TlsVersion,
    pub via_quic: bool,
    /// server_name extension bytes in the flow's both-direction payload
    /// stream.
    pub sni_range: Option<ByteRange>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowDissection {
    pub flow_id: String,
    pub label: ProtocolLabel,
    pub tls: Option<TlsMetadata>,
    pub reasons: Vec<ReasonCode>,
    /// Parser message for the first failure, with its offset.
    pub error: Option<String>,
}

impl FlowDissection {
    fn unk(flow: &Biflow, reason: ReasonCode, error: Option<String>) -> Self {
        FlowDissection {
            flow_id: flow.id.clone(),
            label: ProtocolLabel::unknown(flow.transport()),
            tls: None,
            reasons: vec![reason],
            error,
        }
    }
}

/// Packet payloads in capture order with their offset in the flow's
/// both-direction payload stream.
fn stream_positions(flow: &Biflow) -> Vec<(usize, Direction, &[u8])> {
    let mut at = 0;
    flow.packets
        .iter()
        .filter(|p| !p.packet.payload.is_empty())
        .map(|p| {
            let start = at;
            at += p.packet.payload.len();
            (start, p.dir, &p.packet.payload[..])
        })
        .collect()
}

/// One direction's payload bytes joined in capture order, capped at
/// [`HANDSHAKE_WINDOW`], with a map back to both-direction offsets.
fn directional_stream(positions: &[(usize, Direction, &[u8])], dir: Direction) -> (Vec<u8>, OffsetMap) {
    let mut bytes = Vec::new();
    let mut map = OffsetMap::default();
    for &(start, d, payload) in positions {
        if d != dir {
            continue;
        }
        let take = payload.len().min(HANDSHAKE_WINDOW - bytes.len());
        bytes.extend_from_slice(&payload[..take]);
        map.push(start, take);
        if bytes.len() == HANDSHAKE_WINDOW {
            break;
        }
    }
    (bytes, map)
}

fn server_hello_version(
    result: Result<tls::ServerHelloInfo, TlsError>,
    have_bytes: bool,
    reasons: &mut Vec<ReasonCode>,
    error: &mut Option<String>,
) -> TlsVersion {
    match result {
        Ok(s) => s.negotiated,
        Err(e) => {
            reasons.push(if have_bytes {
                ReasonCode::ServerHelloMalformed
            } else {
                ReasonCode::NoServerHello
            });
            if have_bytes && error.is_none() {
                *error = Some(format!("ServerHello: {e}"));
            }
            TlsVersion::Unknown
        }
    }
}

fn dissect_tcp(flow: &Biflow, positions: &[(usize, Direction, &[u8])]) -> FlowDissection {
    let first = positions[0].2;
    if !tls::looks_like_tls_record(first) {
        return FlowDissection::unk(flow, ReasonCode::NotTlsRecord, None);
    }
    let (up, up_map) = directional_stream(positions, Direction::Upstream);
    let hello = match tls::parse_client_hello(&up) {
        Ok(h) => h,
        Err(e) => {
            let e = TlsError {
                offset: up_map.map(e.offset).unwrap_or(e.offset),
                kind: e.kind,
            };
            return FlowDissection::unk(flow, ReasonCode::ClientHelloMalformed, Some(format!("ClientHello: {e}")));
        }
    };
    let sni_range = hello.sni_range.and_then(|r| up_map.map_range(r));
    let (down, _) = directional_stream(positions, Direction::Downstream);
    let mut reasons = Vec::new();
    let mut error = None;
    let version = server_hello_version(tls::parse_server_hello(&down), !down.is_empty(), &mut reasons, &mut error);
    FlowDissection {
        flow_id: flow.id.clone(),
        label: ProtocolLabel::TcpTls,
        tls: Some(TlsMetadata {
            sni: hello.sni,
            negotiated_version: version,
            via_quic: false,
            sni_range,
        }),
        reasons,
        error,
    }
}

/// Decrypts the Initial packets of one direction and joins their CRYPTO
/// data; the map points into the both-direction payload stream.
fn initial_crypto(
    positions: &[(usize, Direction, &[u8])],
    dir: Direction,
    keys: &quic::InitialKeys,
    complete: impl Fn(&[u8]) -> bool,
) -> Result<(Vec<u8>, OffsetMap), QuicError> {
    let mut decrypted = Vec::new();
    let mut first_err = None;
    for &(start, _, payload) in positions.iter().filter(|p| p.1 == dir).take(MAX_INITIAL_PACKETS) {
        let d = match quic::decrypt_initial(payload, keys) {
            Ok(d) => d,
            Err(e) => {
                first_err.get_or_insert(e);
                continue;
            }
        };
        let chunks = quic::crypto_chunks(&d.plaintext)?;
        decrypted.push((start + d.payload_offset, d.plaintext, chunks));
        let parts: Vec<_> = decrypted
            .iter()
            .map(|(base, plain, chunks)| {
                let base = *base;
                (&plain[..], chunks.clone(), move |i: usize| Some(base + i))
            })
            .collect();
        let (data, map) = quic::reassemble_crypto(&parts);
        if complete(&data) {
            return Ok((data, map));
        }
    }
    if decrypted.is_empty() {
        return Err(first_err.unwrap_or(QuicError::MissingCrypto));
    }
    let parts: Vec<_> = decrypted
        .iter()
        .map(|(base, plain, chunks)| {
            let base = *base;
            (&plain[..], chunks.clone(), move |i: usize| Some(base + i))
        })
        .collect();
    let (data, map) = quic::reassemble_crypto(&parts);
    if data.is_empty() {
        return Err(QuicError::MissingCrypto);
    }
    Ok((data, map))
}

fn handshake_complete(data: &[u8]) -> bool {
    data.len() >= 4 && data.len() >= 4 + u32::from_be_bytes([0, data[1], data[2], data[3]]) as usize
}

fn dissect_udp(flow: &Biflow, positions: &[(usize, Direction, &[u8])]) -> FlowDissection {
    let header = match quic::parse_initial_header(positions[0].2) {
        Ok(h) => h,
        Err(e) => return FlowDissection::unk(flow, e.into(), Some(e.to_string())),
    };
    let client_keys = quic::initial_keys(&header.dcid, quic::Side::Client);
    let (hello_bytes, hello_map) =
        match initial_crypto(positions, Direction::Upstream, &client_keys, handshake_complete) {
            Ok(x) => x,
            Err(e) => return FlowDissection::unk(flow, e.into(), Some(e.to_string())),
        };
    let hello = match tls::parse_client_hello_message(&hello_bytes, &hello_map) {
        Ok(h) => h,
        Err(e) => {
            return FlowDissection::unk(
                flow,
                ReasonCode::QuicClientHelloMalformed,
                Some(format!("ClientHello: {e}")),
            )
        }
    };
    let mut reasons = Vec::new();
    let mut error = None;
    let server_keys = quic::initial_keys(&header.dcid, quic::Side::Server);
    let has_down = positions.iter().any(|p| p.1 == Direction::Downstream);
    let server = initial_crypto(positions, Direction::Downstream, &server_keys, handshake_complete)
        .map_err(|e| TlsError {
            offset: 0,
            kind: match e {
                QuicError::MalformedFrame(_) => tls::TlsErrorKind::BadLength,
                _ => tls::TlsErrorKind::Truncated,
            },
        })
        .and_then(|(bytes, map)| tls::parse_server_hello_message(&bytes, &map));
    let version = server_hello_version(server, has_down, &mut reasons, &mut error);
    FlowDissection {
        flow_id: flow.id.clone(),
        label: ProtocolLabel::UdpQuicTls,
        tls: Some(TlsMetadata {
            sni: hello.sni,
            negotiated_version: version,
            via_quic: true,
            sni_range: hello.sni_range,
        }),
        reasons,
        error,
    }
}

/// Labels one biflow with its highest recognized protocol and reads TLS
/// metadata from the handshake.
pub fn dissect_biflow(flow: &Biflow) -> FlowDissection {
    let positions = stream_positions(flow);
    if positions.is_empty() {
        return FlowDissection::unk(flow, ReasonCode::NoPayload, None);
    }
    match flow.transport() {
        Transport::Tcp => dissect_tcp(flow, &positions),
        Transport::Udp => dissect_udp(flow, &positions),
    }
}

pub fn label_protocol(flow: &Biflow) -> ProtocolLabel {
    dissect_biflow(flow).label
}

/// Dissects every biflow; results are in input order.
pub fn dissect_all(flows: &[Biflow]) -> Vec<FlowDissection> {
    flows.par_iter().map(dissect_biflow).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolShare {
    pub app: String,
    pub content: String,
    pub label: ProtocolLabel,
    pub biflows: u64,
    pub biflow_pct: f64,
}

/// Share of biflows per protocol label within each group; every label is
/// listed, including zero rows.
pub fn protocol_mix(flows: &[Biflow], dissections: &[FlowDissection]) -> Vec<ProtocolShare> {
    let mut groups: BTreeMap<FlowLabel, BTreeMap<ProtocolLabel, u64>> = BTreeMap::new();
    for (f, d) in flows.iter().zip(dissections) {
        *groups.entry(group_of(f)).or_default().entry(d.label).or_default() += 1;
    }
    let mut out = Vec::new();
    for (g, counts) in groups {
        let total: u64 = counts.values().sum();
        for label in ProtocolLabel::ALL {
            let n = counts.get(&label).copied().unwrap_or(0);
            out.push(ProtocolShare {
                app: g.app.clone(),
                content: g.content.to_string(),
                label,
                biflows: n,
                biflow_pct: pct(n, total),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionShare {
    pub app: String,
    pub content: String,
    pub version: TlsVersion,
    pub biflows: u64,
    /// Percent of the group's TLS and QUIC-TLS biflows.
    pub biflow_pct: f64,
}

pub fn tls_version_mix(flows: &[Biflow], dissections: &[FlowDissection]) -> Vec<VersionShare> {
    let mut groups: BTreeMap<FlowLabel, BTreeMap<TlsVersion, u64>> = BTreeMap::new();
    for (f, d) in flows.iter().zip(dissections) {
        if let Some(t) = &d.tls {
            *groups.entry(group_of(f)).or_default().entry(t.negotiated_version).or_default() += 1;
        }
    }
    let mut out = Vec::new();
    for (g, counts) in groups {
        let total: u64 = counts.values().sum();
        for (version, n) in counts {
            out.push(VersionShare {
                app: g.app.clone(),
                content: g.content.to_string(),
                version,
                biflows: n,
                biflow_pct: pct(n, total),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SniShareRow {
    pub app: String,
    pub content: String,
    /// `None` collects flows without a parsed SNI.
    pub sni: Option<String>,
    pub biflows: u64,
    pub packets: u64,
    pub bytes: u64,
    pub biflow_pct: f64,
    pub packet_pct: f64,
    pub volume_pct: f64,
    /// At least one biflow with this SNI carried it over QUIC.
    pub via_quic: bool,
}

/// Per-group SNI shares. Percentages are over every biflow of the group.
/// With `min_biflow_pct` set, rows at or below the threshold and the
/// no-SNI row are dropped.
pub fn sni_share_table(flows: &[Biflow], dissections: &[FlowDissection], min_biflow_pct: Option<f64>) -> Vec<SniShareRow> {
    #[derive(Default)]
    struct Acc {
        flows: u64,
        packets: u64,
        bytes: u64,
        via_quic: bool,
    }
    let mut groups: BTreeMap<FlowLabel, BTreeMap<Option<String>, Acc>> = BTreeMap::new();
    for (f, d) in flows.iter().zip(dissections) {
        let sni = d.tls.as_ref().and_then(|t| t.sni.clone());
        let acc = groups.entry(group_of(f)).or_default().entry(sni).or_default();
        acc.flows += 1;
        acc.packets += f.packet_count() as u64;
        acc.bytes += f.payload_bytes();
        acc.via_quic |= d.tls.as_ref().is_some_and(|t| t.via_quic && t.sni.is_some());
    }
    let mut out = Vec::new();
    for (g, rows) in groups {
        let (tf, tp, tb) = rows
            .values()
            .fold((0, 0, 0), |(f, p, b), a| (f + a.flows, p + a.packets, b + a.bytes));
        let mut group_rows: Vec<SniShareRow> = rows
            .into_iter()
            .map(|(sni, a)| SniShareRow {
                app: g.app.clone(),
                content: g.content.to_string(),
                sni,
                biflows: a.flows,
                packets: a.packets,
                bytes: a.bytes,
                biflow_pct: pct(a.flows, tf),
                packet_pct: pct(a.packets, tp),
                volume_pct: pct(a.bytes, tb),
                via_quic: a.via_quic,
            })
            .filter(|r| match min_biflow_pct {
                Some(min) => r.sni.is_some() && r.biflow_pct > min,
                None => true,
            })
            .collect();
        group_rows.sort_by(|a, b| b.biflows.cmp(&a.biflows).then_with(|| a.sni.cmp(&b.sni)));
        out.extend(group_rows);
    }
    out
}
