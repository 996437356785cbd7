//! Bidirectional flow assembly.
//!
//! A biflow holds every packet sharing one canonical 5-tuple for the whole
//! trace; there is no idle timeout, so a reused port pair within a capture
//! lands in the same biflow. The client is the sender of the first packet
//! unless [`ClientRule::PrivateAddress`] is selected.

mod labels;

use std::collections::HashMap;
use std::fmt;
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use crate::capture::{CaptureTrace, IpProto, PacketRecord};

pub use labels::{
    apply_labels, load_label_map, parse_label_map, ContentKind, FlowLabel, LabelEntry, LabelError,
    LabelMap, CaptureMeta, UNKNOWN_APP,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Endpoint {
    pub addr: IpAddr,
    pub port: u16,
}

impl Endpoint {
    pub fn new(addr: IpAddr, port: u16) -> Self {
        Endpoint { addr, port }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.addr {
            IpAddr::V4(a) => write!(f, "{a}:{}", self.port),
            IpAddr::V6(a) => write!(f, "[{a}]:{}", self.port),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Transport {
    Tcp,
    Udp,
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transport::Tcp => "TCP",
            Transport::Udp => "UDP",
        })
    }
}

/// Direction-independent 5-tuple: the smaller endpoint is always `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub proto: Transport,
    pub a: Endpoint,
    pub b: Endpoint,
}

impl FlowKey {
    pub fn new(proto: Transport, x: Endpoint, y: Endpoint) -> Self {
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        FlowKey { proto, a, b }
    }

    /// Key of a TCP/UDP record; `None` for other transports.
    pub fn of(rec: &PacketRecord) -> Option<Self> {
        let proto = match rec.ip_proto {
            IpProto::Tcp => Transport::Tcp,
            IpProto::Udp => Transport::Udp,
            IpProto::Other => return None,
        };
        Some(FlowKey::new(
            proto,
            Endpoint::new(rec.src_addr, rec.src_port),
            Endpoint::new(rec.dst_addr, rec.dst_port),
        ))
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} <-> {}", self.proto, self.a, self.b)
    }
}

/// Packet direction relative to the client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    /// Client to server, encoded as -1.
    Upstream,
    /// Server to client, encoded as +1.
    Downstream,
}

impl Direction {
    pub fn sign(self) -> i8 {
        match self {
            Direction::Upstream => -1,
            Direction::Downstream => 1,
        }
    }

    pub fn from_sign(sign: i8) -> Option<Self> {
        match sign {
            -1 => Some(Direction::Upstream),
            1 => Some(Direction::Downstream),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowPacket {
    pub packet: PacketRecord,
    pub dir: Direction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Biflow {
    pub key: FlowKey,
    pub client: Endpoint,
    pub packets: Vec<FlowPacket>,
    pub label: Option<FlowLabel>,
    pub first_ts_us: u64,
    pub last_ts_us: u64,
    /// `<capture path>#<ordinal>`, stable for a given trace.
    pub id: String,
}

impl Biflow {
    pub fn server(&self) -> Endpoint {
        if self.client == self.key.a {
            self.key.b
        } else {
            self.key.a
        }
    }

    pub fn transport(&self) -> Transport {
        self.key.proto
    }

    pub fn packet_count(&self) -> usize {
        self.packets.len()
    }

    pub fn payload_bytes(&self) -> u64 {
        self.packets.iter().map(|p| p.packet.payload_len as u64).sum()
    }

    /// Payload bytes of nonzero-PL packets in capture order, both directions.
    pub fn payload_stream(&self) -> impl Iterator<Item = &FlowPacket> {
        self.packets.iter().filter(|p| p.packet.payload_len > 0)
    }
}

/// How the client endpoint of a biflow is chosen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClientRule {
    /// The sender of the first observed packet.
    #[default]
    FirstPacket,
    /// If exactly one endpoint has a private/local address it is the
    /// client; otherwise falls back to the first packet's sender.
    PrivateAddress,
}

fn is_private(addr: IpAddr) -> bool {
    match addr {
        IpAddr::V4(a) => a.is_private() || a.is_loopback() || a.is_link_local() || a.octets()[0] == 100 && (a.octets()[1] & 0xc0) == 64,
        IpAddr::V6(a) => {
            a.is_loopback() || (a.segments()[0] & 0xfe00) == 0xfc00 || (a.segments()[0] & 0xffc0) == 0xfe80
        }
    }
}

/// Groups the TCP/UDP packets of `trace` into biflows sorted by first
/// timestamp (ties keep first-appearance order).
pub fn assemble_biflows(trace: &CaptureTrace) -> Vec<Biflow> {
    assemble_biflows_with(trace, ClientRule::FirstPacket)
}

pub fn assemble_biflows_with(trace: &CaptureTrace, rule: ClientRule) -> Vec<Biflow> {
    let mut index: HashMap<FlowKey, usize> = HashMap::new();
    let mut flows: Vec<Biflow> = Vec::new();
    for rec in &trace.packets {
        let Some(key) = FlowKey::of(rec) else { continue };
        let slot = *index.entry(key).or_insert_with(|| {
            let src = Endpoint::new(rec.src_addr, rec.src_port);
            let dst = Endpoint::new(rec.dst_addr, rec.dst_port);
            let client = match rule {
                ClientRule::PrivateAddress if is_private(dst.addr) && !is_private(src.addr) => dst,
                _ => src,
            };
            flows.push(Biflow {
                key,
                client,
                packets: Vec::new(),
                label: None,
                first_ts_us: rec.ts_us,
                last_ts_us: rec.ts_us,
                id: String::new(),
            });
            flows.len() - 1
        });
        let flow = &mut flows[slot];
        let dir = if Endpoint::new(rec.src_addr, rec.src_port) == flow.client {
            Direction::Upstream
        } else {
            Direction::Downstream
        };
        flow.first_ts_us = flow.first_ts_us.min(rec.ts_us);
        flow.last_ts_us = flow.last_ts_us.max(rec.ts_us);
        flow.packets.push(FlowPacket {
            packet: rec.clone(),
            dir,
        });
    }
    for (i, f) in flows.iter_mut().enumerate() {
        f.id = format!("{}#{i}", trace.source_path);
    }
    // stable: equal first timestamps keep appearance order
    flows.sort_by_key(|f| f.first_ts_us);
    flows
}
