//! Synthetic captures and handshakes for tests, examples and the
//! `fixtures make` subcommand.

pub mod quic_vector;

use std::net::{IpAddr, Ipv4Addr};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::capture::{CaptureTrace, IpProto, PacketRecord};
use crate::dissect::quic;
use crate::dissect::tls::ByteRange;
use crate::flow::{CaptureMeta, ContentKind, LabelEntry, LabelMap};

pub type Addr = (IpAddr, u16);

fn v4(a: u8, b: u8, c: u8, d: u8) -> IpAddr {
    IpAddr::V4(Ipv4Addr::new(a, b, c, d))
}

fn u16be(v: usize) -> [u8; 2] {
    (v as u16).to_be_bytes()
}

fn ext(out: &mut Vec<u8>, ty: u16, body: &[u8]) {
    out.extend_from_slice(&ty.to_be_bytes());
    out.extend_from_slice(&u16be(body.len()));
    out.extend_from_slice(body);
}

fn handshake(ty: u8, body: &[u8]) -> Vec<u8> {
    let mut m = vec![ty];
    m.extend_from_slice(&(body.len() as u32).to_be_bytes()[1..]);
    m.extend_from_slice(body);
    m
}

/// A ClientHello handshake message (no record header) and the range of
/// its server_name extension within the message.
pub fn client_hello(rng: &mut impl Rng, sni: Option<&str>) -> (Vec<u8>, Option<ByteRange>) {
    let mut body = vec![0x03, 0x03];
    body.extend((0..32).map(|_| rng.gen::<u8>()));
    body.push(32);
    body.extend((0..32).map(|_| rng.gen::<u8>()));
    let ciphers = [0x13, 0x01, 0x13, 0x02, 0x13, 0x03, 0xc0, 0x2b, 0xc0, 0x2f];
    body.extend_from_slice(&u16be(ciphers.len()));
    body.extend_from_slice(&ciphers);
    body.extend_from_slice(&[1, 0]);

    let mut exts = Vec::new();
    let mut sni_at = None;
    if let Some(host) = sni {
        let mut entry = vec![0];
        entry.extend_from_slice(&u16be(host.len()));
        entry.extend_from_slice(host.as_bytes());
        let mut list = u16be(entry.len()).to_vec();
        list.extend_from_slice(&entry);
        sni_at = Some((exts.len(), 4 + list.len()));
        ext(&mut exts, 0, &list);
    }
    ext(&mut exts, 10, &[0, 4, 0, 0x1d, 0, 0x17]);
    ext(&mut exts, 13, &[0, 6, 4, 3, 8, 4, 4, 1]);
    ext(&mut exts, 43, &[4, 3, 4, 3, 3]);
    ext(&mut exts, 45, &[1, 1]);
    let mut share = vec![0, 36, 0, 0x1d, 0, 32];
    share.extend((0..32).map(|_| rng.gen::<u8>()));
    ext(&mut exts, 51, &share);

    let ext_base = 4 + body.len() + 2;
    body.extend_from_slice(&u16be(exts.len()));
    body.extend_from_slice(&exts);
    let range = sni_at.map(|(o, len)| ByteRange {
        offset: ext_base + o,
        len,
    });
    (handshake(1, &body), range)
}

/// A ServerHello; `selected` adds a supported_versions extension.
pub fn server_hello(rng: &mut impl Rng, legacy_version: u16, selected: Option<u16>) -> Vec<u8> {
    let mut body = legacy_version.to_be_bytes().to_vec();
    body.extend((0..32).map(|_| rng.gen::<u8>()));
    body.push(32);
    body.extend((0..32).map(|_| rng.gen::<u8>()));
    body.extend_from_slice(&[0x13, 0x01, 0]);
    let mut exts = Vec::new();
    if let Some(v) = selected {
        ext(&mut exts, 43, &v.to_be_bytes());
    }
    let mut share = vec![0, 0x1d, 0, 32];
    share.extend((0..32).map(|_| rng.gen::<u8>()));
    ext(&mut exts, 51, &share);
    body.extend_from_slice(&u16be(exts.len()));
    body.extend_from_slice(&exts);
    handshake(2, &body)
}

/// Wraps `msg` in records of `content_type`, cutting fragments at the given
/// message offsets.
pub fn records(content_type: u8, version: u16, msg: &[u8], cuts: &[usize]) -> Vec<u8> {
    let mut bounds = vec![0];
    bounds.extend(cuts.iter().copied().filter(|&c| c > 0 && c < msg.len()));
    bounds.push(msg.len());
    bounds.sort_unstable();
    bounds.dedup();
    let mut out = Vec::new();
    for w in bounds.windows(2) {
        out.push(content_type);
        out.extend_from_slice(&version.to_be_bytes());
        out.extend_from_slice(&u16be(w[1] - w[0]));
        out.extend_from_slice(&msg[w[0]..w[1]]);
    }
    out
}

/// Negotiated-version choice for a fixture server.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServerVersion {
    Tls12,
    Tls13,
}

impl ServerVersion {
    fn hello(self, rng: &mut impl Rng) -> Vec<u8> {
        match self {
            ServerVersion::Tls12 => server_hello(rng, 0x0303, None),
            ServerVersion::Tls13 => server_hello(rng, 0x0303, Some(0x0304)),
        }
    }
}

/// Options for a synthetic TLS-over-TCP biflow.
#[derive(Debug, Clone)]
pub struct TlsFlowSpec<'a> {
    pub client: Addr,
    pub server: Addr,
    pub start_us: u64,
    pub sni: Option<&'a str>,
    pub version: ServerVersion,
    /// Send the ClientHello in two TCP segments, cut inside the SNI.
    pub split_segments: bool,
    /// Application-data records after the handshake.
    pub app_records: usize,
}

/// Handshake then application data; the SYN exchange carries no payload.
pub fn tls_flow(rng: &mut impl Rng, spec: &TlsFlowSpec<'_>) -> Vec<PacketRecord> {
    let (c, s) = (spec.client, spec.server);
    let mut t = spec.start_us;
    let mut step = |rng: &mut dyn rand::RngCore| {
        t += rng.gen_range(200..20_000);
        t
    };
    let mut out = vec![PacketRecord::new(step(rng), IpProto::Tcp, c, s, Vec::new())];
    out.push(PacketRecord::new(step(rng), IpProto::Tcp, s, c, Vec::new()));
    out.push(PacketRecord::new(step(rng), IpProto::Tcp, c, s, Vec::new()));
    let (hello, range) = client_hello(rng, spec.sni);
    let wire = records(22, 0x0301, &hello, &[]);
    if spec.split_segments {
        let cut = range.map(|r| 5 + r.offset + r.len / 2).unwrap_or(wire.len() / 2);
        out.push(PacketRecord::new(step(rng), IpProto::Tcp, c, s, wire[..cut].to_vec()));
        out.push(PacketRecord::new(step(rng), IpProto::Tcp, c, s, wire[cut..].to_vec()));
    } else {
        out.push(PacketRecord::new(step(rng), IpProto::Tcp, c, s, wire));
    }
    let sh = records(22, 0x0303, &spec.version.hello(rng), &[]);
    out.push(PacketRecord::new(step(rng), IpProto::Tcp, s, c, sh));
    for i in 0..spec.app_records {
        let (a, b, len) = if i % 3 == 0 {
            (c, s, rng.gen_range(40..600))
        } else {
            (s, c, rng.gen_range(100..1400))
        };
        let body: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        out.push(PacketRecord::new(step(rng), IpProto::Tcp, a, b, records(23, 0x0303, &body, &[])));
    }
    out
}

/// QUIC biflow: a client Initial carrying a ClientHello, a server Initial
/// carrying a ServerHello, then short-header datagrams.
pub fn quic_flow(rng: &mut impl Rng, client: Addr, server: Addr, start_us: u64, sni: Option<&str>, version: ServerVersion) -> Vec<PacketRecord> {
    let dcid: [u8; 8] = rng.gen();
    let scid: [u8; 8] = rng.gen();
    let (hello, _) = client_hello(rng, sni);
    let plain = quic::crypto_frame_plaintext(&hello, 1162);
    let ckeys = quic::initial_keys(&dcid, quic::Side::Client);
    let skeys = quic::initial_keys(&dcid, quic::Side::Server);
    let mut t = start_us;
    let mut out = vec![PacketRecord::new(t, IpProto::Udp, client, server, quic::protect_initial(&dcid, &scid, 0, &plain, &ckeys))];
    let sh = quic::crypto_frame_plaintext(&version.hello(rng), 0);
    t += rng.gen_range(5_000..60_000);
    out.push(PacketRecord::new(t, IpProto::Udp, server, client, quic::protect_initial(&scid, &dcid, 0, &sh, &skeys)));
    for i in 0..6 {
        t += rng.gen_range(200..20_000);
        let len = rng.gen_range(30..1200);
        let mut body: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        body[0] = 0x40 | (body[0] & 0x3f);
        let (a, b) = if i % 2 == 0 { (client, server) } else { (server, client) };
        out.push(PacketRecord::new(t, IpProto::Udp, a, b, body));
    }
    out
}

fn phone() -> IpAddr {
    v4(192, 168, 1, 20)
}

/// Three packets: 100 B up at 0.2 s, 500 B down at 0.7 s, 200 B down at
/// 2.5 s, in one TCP biflow.
pub fn three_packet_trace() -> CaptureTrace {
    let base = 1_700_000_000_000_000;
    let c = (phone(), 40_000);
    let s = (v4(93, 184, 216, 34), 443);
    CaptureTrace::from_packets(
        vec![
            PacketRecord::new(base + 200_000, IpProto::Tcp, c, s, vec![0x17; 100]),
            PacketRecord::new(base + 700_000, IpProto::Tcp, s, c, vec![0x17; 500]),
            PacketRecord::new(base + 2_500_000, IpProto::Tcp, s, c, vec![0x17; 200]),
        ],
        "three_packet.pcap",
    )
}

/// The published client Initial as one UDP datagram to port 443.
pub fn quic_vector_trace() -> CaptureTrace {
    CaptureTrace::from_packets(
        vec![PacketRecord::new(
            1_700_000_000_000_000,
            IpProto::Udp,
            (phone(), 51_000),
            (v4(142, 250, 180, 3), 443),
            quic_vector::protected_packet(),
        )],
        "quic_vector.pcap",
    )
}

/// One TLS 1.3 biflow whose ClientHello is split across two segments.
pub fn tls_handshake_trace(sni: &str) -> CaptureTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let packets = tls_flow(
        &mut rng,
        &TlsFlowSpec {
            client: (phone(), 40_100),
            server: (v4(104, 18, 32, 47), 443),
            start_us: 1_700_000_000_000_000,
            sni: Some(sni),
            version: ServerVersion::Tls13,
            split_segments: true,
            app_records: 6,
        },
    );
    CaptureTrace::from_packets(packets, "tls_handshake.pcap")
}

/// UDP flows with payloads that carry no long-header bit.
pub fn plain_udp_trace(seed: u64) -> CaptureTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut packets = Vec::new();
    let mut t = 1_700_000_000_000_000u64;
    for flow in 0..8u16 {
        let c = (phone(), 30_000 + flow);
        let s = (v4(8, 8, 4, 4), 53);
        for i in 0..rng.gen_range(2..6) {
            t += rng.gen_range(100..50_000);
            let len = rng.gen_range(20..300);
            let mut body: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            body[0] &= 0x7f;
            let (a, b) = if i % 2 == 0 { (c, s) } else { (s, c) };
            packets.push(PacketRecord::new(t, IpProto::Udp, a, b, body));
        }
    }
    CaptureTrace::from_packets(packets, "plain_udp.pcap")
}

/// Ethernet frames carrying ARP requests only.
pub fn arp_frames() -> Vec<(u64, Vec<u8>, u32)> {
    (0..4u8)
        .map(|i| {
            let mut f = vec![0xff; 6];
            f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01, 0x08, 0x06]);
            f.extend_from_slice(&[0, 1, 0x08, 0, 6, 4, 0, 1]);
            f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01, 192, 168, 1, 20]);
            f.extend_from_slice(&[0, 0, 0, 0, 0, 0, 192, 168, 1, 100 + i]);
            let len = f.len() as u32;
            (1_700_000_000_000_000 + i as u64 * 1_000_000, f, len)
        })
        .collect()
}

pub const DATASET_APPS: [&str; 3] = ["com.openai.chatgpt", "com.google.android.apps.bard", "com.microsoft.copilot"];
pub const DATASET_CONTENTS: [ContentKind; 2] = [ContentKind::Text, ContentKind::Multimodal];
pub const DATASET_SNI_LEN: usize = 24;

/// One synthetic capture: its trace plus the sidecar label map.
#[derive(Debug, Clone)]
pub struct LabeledCapture {
    pub stem: String,
    pub trace: CaptureTrace,
    pub labels: LabelMap,
}

/// Class-specific hostname; every class gets the same length. The label
/// spells a per-class codeword in '0' and 'z', the two most distant
/// hostname characters.
pub fn class_hostname(class: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1 + class as u64);
    let label: String = (0..DATASET_SNI_LEN - 8).map(|_| if rng.gen_bool(0.5) { 'z' } else { '0' }).collect();
    format!("{label}.example")
}

/// Six classes (three apps by two content kinds), one capture per class.
/// Every flow is a TLS-over-TCP biflow whose only class-dependent bytes
/// are the SNI hostname; all other handshake fields are random.
pub fn classification_dataset(flows_per_class: usize, seed: u64) -> Vec<LabeledCapture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (ai, app) in DATASET_APPS.iter().enumerate() {
        for (ci, content) in DATASET_CONTENTS.iter().enumerate() {
            let class = ai * DATASET_CONTENTS.len() + ci;
            let host = class_hostname(class);
            let mut packets = Vec::new();
            let mut entries = Vec::new();
            let mut t = 1_700_000_000_000_000u64;
            for f in 0..flows_per_class {
                let server = (v4(10, 10 + class as u8, (f / 250) as u8, (f % 250) as u8 + 1), 443);
                entries.push(LabelEntry {
                    addr: server.0,
                    port: server.1,
                    app: app.to_string(),
                });
                let spec = TlsFlowSpec {
                    client: (phone(), 20_000 + f as u16),
                    server,
                    start_us: t,
                    sni: Some(&host),
                    version: ServerVersion::Tls13,
                    split_segments: false,
                    app_records: 4,
                };
                packets.extend(tls_flow(&mut rng, &spec));
                t += 500_000;
            }
            packets.sort_by_key(|p| p.ts_us);
            let stem = format!("{}_{}", app.rsplit('.').next().unwrap_or(app), content.as_str());
            out.push(LabeledCapture {
                trace: CaptureTrace::from_packets(packets, format!("{stem}.pcap")),
                labels: LabelMap {
                    capture: CaptureMeta {
                        app: app.to_string(),
                        content: *content,
                    },
                    entries,
                },
                stem,
            });
        }
    }
    out
}
