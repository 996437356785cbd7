//! Capture ingestion: classic pcap (read/write), pcapng (read), and
//! link/network/transport decoding into [`PacketRecord`]s.
//!
//! Timestamps are normalized to microseconds whatever the file precision.
//! Frames that cannot be decoded down to a TCP or UDP payload are counted
//! per [`SkipReason`] and skipped; they never abort a read.

mod decode;
mod encode;
mod pcap;
mod pcapng;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use decode::LinkType;

/// Transport protocol carried by a packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum IpProto {
    Tcp,
    Udp,
    Other,
}

impl IpProto {
    pub fn is_transport(self) -> bool {
        matches!(self, IpProto::Tcp | IpProto::Udp)
    }
}

impl fmt::Display for IpProto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IpProto::Tcp => "TCP",
            IpProto::Udp => "UDP",
            IpProto::Other => "OTHER",
        })
    }
}

/// One captured packet reduced to what the analyses need.
///
/// `payload_len` counts the transport payload bytes present in the capture.
/// When the frame was cut by the snap length, `truncated` is set and the
/// stored payload is whatever survived.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketRecord {
    pub ts_us: u64,
    pub src_addr: IpAddr,
    pub dst_addr: IpAddr,
    pub ip_proto: IpProto,
    pub src_port: u16,
    pub dst_port: u16,
    pub payload_len: u32,
    pub payload: Bytes,
    pub truncated: bool,
    pub wire_len: u32,
}

impl PacketRecord {
    /// Untruncated TCP/UDP record whose wire length is derived from the
    /// frame the writer would synthesize for it.
    pub fn new(
        ts_us: u64,
        ip_proto: IpProto,
        src: (IpAddr, u16),
        dst: (IpAddr, u16),
        payload: impl Into<Bytes>,
    ) -> Self {
        let payload: Bytes = payload.into();
        let mut rec = PacketRecord {
            ts_us,
            src_addr: src.0,
            dst_addr: dst.0,
            ip_proto,
            src_port: src.1,
            dst_port: dst.1,
            payload_len: payload.len() as u32,
            payload,
            truncated: false,
            wire_len: 0,
        };
        rec.wire_len = encode::frame_len(&rec) as u32;
        rec
    }

    pub fn src(&self) -> (IpAddr, u16) {
        (self.src_addr, self.src_port)
    }

    pub fn dst(&self) -> (IpAddr, u16) {
        (self.dst_addr, self.dst_port)
    }
}

/// Why a frame did not produce a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    UnsupportedLinkType,
    NotIp,
    NonFirstFragment,
    OtherTransport,
    Malformed,
    TruncatedRecord,
}

impl SkipReason {
    pub fn code(self) -> &'static str {
        match self {
            SkipReason::UnsupportedLinkType => "capture.unsupported_link_type",
            SkipReason::NotIp => "capture.not_ip",
            SkipReason::NonFirstFragment => "capture.non_first_fragment",
            SkipReason::OtherTransport => "capture.other_transport",
            SkipReason::Malformed => "capture.malformed_frame",
            SkipReason::TruncatedRecord => "capture.truncated_record",
        }
    }
}

/// Frame accounting for one read. `decoded + skipped() == total_frames`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureStats {
    pub total_frames: u64,
    pub decoded: u64,
    pub skipped: BTreeMap<SkipReason, u64>,
    pub truncated_packets: u64,
}

impl CaptureStats {
    pub fn skipped(&self) -> u64 {
        self.skipped.values().sum()
    }

    fn skip(&mut self, reason: SkipReason) {
        *self.skipped.entry(reason).or_default() += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptureFormat {
    Pcap,
    Pcapng,
}

/// Packets of one capture file, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureTrace {
    pub packets: Vec<PacketRecord>,
    pub t0_us: u64,
    pub duration_us: u64,
    pub source_path: String,
    pub format: CaptureFormat,
    pub stats: CaptureStats,
}

impl CaptureTrace {
    /// Builds a trace from records; `t0_us` and `duration_us` come from the
    /// first and last record in order, floored at zero.
    pub fn from_packets(packets: Vec<PacketRecord>, source_path: impl Into<String>) -> Self {
        let (t0_us, duration_us) = match (packets.first(), packets.last()) {
            (Some(first), Some(last)) => {
                (first.ts_us, last.ts_us.saturating_sub(first.ts_us))
            }
            _ => (0, 0),
        };
        let n = packets.len() as u64;
        CaptureTrace {
            packets,
            t0_us,
            duration_us,
            source_path: source_path.into(),
            format: CaptureFormat::Pcap,
            stats: CaptureStats {
                total_frames: n,
                decoded: n,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: unrecognized capture magic 0x{magic:08x}")]
    UnrecognizedMagic { path: PathBuf, magic: u32 },
    #[error("{path}: truncated file header")]
    TruncatedHeader { path: PathBuf },
    #[error("{path}: zero decodable packets ({frames} frames read)")]
    NoDecodablePackets { path: PathBuf, frames: u64 },
    #[error("record {index} is not writable: {reason}")]
    InvalidRecord { index: usize, reason: &'static str },
}

/// Reads a classic pcap or pcapng file.
pub fn read_capture(path: impl AsRef<Path>) -> Result<CaptureTrace, CaptureError> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|source| CaptureError::Read {
        path: path.to_owned(),
        source,
    })?;
    if data.len() < 4 {
        return Err(CaptureError::TruncatedHeader {
            path: path.to_owned(),
        });
    }
    let magic = u32::from_le_bytes([data[0], data[1], data[2], data[3]]);
    let mut stats = CaptureStats::default();
    let mut packets = Vec::new();
    let format = if pcap::Magic::detect(&data).is_some() {
        pcap::read(&data, path, &mut packets, &mut stats)?;
        CaptureFormat::Pcap
    } else if magic == pcapng::SHB_TYPE {
        pcapng::read(&data, path, &mut packets, &mut stats)?;
        CaptureFormat::Pcapng
    } else {
        return Err(CaptureError::UnrecognizedMagic {
            path: path.to_owned(),
            magic: u32::from_be_bytes([data[0], data[1], data[2], data[3]]),
        });
    };
    if packets.is_empty() {
        return Err(CaptureError::NoDecodablePackets {
            path: path.to_owned(),
            frames: stats.total_frames,
        });
    }
    let mut trace = CaptureTrace::from_packets(packets, path.display().to_string());
    trace.stats = stats;
    trace.format = format;
    Ok(trace)
}

/// Writes a little-endian, microsecond classic pcap with Ethernet framing.
pub fn write_capture(trace: &CaptureTrace, path: impl AsRef<Path>) -> Result<(), CaptureError> {
    let path = path.as_ref();
    for (index, rec) in trace.packets.iter().enumerate() {
        encode::check_writable(rec).map_err(|reason| CaptureError::InvalidRecord { index, reason })?;
    }
    let wrap = |source| CaptureError::Write {
        path: path.to_owned(),
        source,
    };
    let file = fs::File::create(path).map_err(wrap)?;
    let mut out = BufWriter::new(file);
    pcap::write(&trace.packets, &mut out).map_err(wrap)?;
    out.flush().map_err(wrap)
}

/// In-memory variant of [`write_capture`].
pub fn encode_pcap(packets: &[PacketRecord]) -> Result<Vec<u8>, CaptureError> {
    for (index, rec) in packets.iter().enumerate() {
        encode::check_writable(rec).map_err(|reason| CaptureError::InvalidRecord { index, reason })?;
    }
    let mut out = Vec::new();
    pcap::write(packets, &mut out).expect("writing to a Vec cannot fail");
    Ok(out)
}

/// Writes raw link-layer frames into a classic pcap; used to produce
/// fixtures with content the record writer cannot express (ARP, fragments).
pub fn write_raw_frames(
    path: impl AsRef<Path>,
    link: LinkType,
    snaplen: u32,
    frames: &[(u64, Vec<u8>, u32)],
) -> Result<(), CaptureError> {
    let path = path.as_ref();
    let wrap = |source| CaptureError::Write {
        path: path.to_owned(),
        source,
    };
    let file = fs::File::create(path).map_err(wrap)?;
    let mut out = BufWriter::new(file);
    pcap::write_raw(frames, link, snaplen, &mut out).map_err(wrap)?;
    out.flush().map_err(wrap)
}

pub use encode::build_frame;
