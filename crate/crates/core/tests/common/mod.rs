//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use gentraffic::capture::{IpProto, PacketRecord};
use rand::Rng;

pub fn random_addr(rng: &mut impl Rng, v6: bool) -> IpAddr {
    if v6 {
        IpAddr::V6(Ipv6Addr::from(rng.gen::<u128>()))
    } else {
        IpAddr::V4(Ipv4Addr::from(rng.gen::<u32>()))
    }
}

/// Independent TCP/UDP records with random addresses, ports, timestamps
/// and payloads up to 1460 bytes.
pub fn random_records(rng: &mut impl Rng, n: usize) -> Vec<PacketRecord> {
    let mut ts = 1_600_000_000_000_000u64;
    (0..n)
        .map(|_| {
            ts += rng.gen_range(0..2_000_000);
            let v6 = rng.gen_bool(0.3);
            let proto = if rng.gen_bool(0.5) { IpProto::Tcp } else { IpProto::Udp };
            let len = if rng.gen_bool(0.1) { 0 } else { rng.gen_range(1..=1460) };
            let payload: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            // occasional backwards step keeps file order distinct from time order
            let t = if rng.gen_bool(0.02) { ts.saturating_sub(5_000) } else { ts };
            PacketRecord::new(
                t,
                proto,
                (random_addr(rng, v6), rng.gen()),
                (random_addr(rng, v6), rng.gen()),
                payload,
            )
        })
        .collect()
}

/// Packets among a handful of hosts and ports so 5-tuples repeat in both
/// directions.
pub fn multi_flow_records(rng: &mut impl Rng, n: usize) -> Vec<PacketRecord> {
    let hosts: Vec<IpAddr> = (1..=4).map(|i| IpAddr::V4(Ipv4Addr::new(10, 0, 0, i))).collect();
    let ports = [443u16, 8080, 50000, 50001];
    let mut ts = 1_700_000_000_000_000u64;
    (0..n)
        .map(|_| {
            ts += rng.gen_range(1..300_000);
            let a = hosts[rng.gen_range(0..hosts.len())];
            let mut b = hosts[rng.gen_range(0..hosts.len())];
            while b == a {
                b = hosts[rng.gen_range(0..hosts.len())];
            }
            let pa = ports[rng.gen_range(0..ports.len())];
            let pb = ports[rng.gen_range(0..ports.len())];
            let proto = if rng.gen_bool(0.7) { IpProto::Tcp } else { IpProto::Udp };
            let len = rng.gen_range(0..1400);
            PacketRecord::new(ts, proto, (a, pa), (b, pb), vec![0xab; len])
        })
        .collect()
}

/// Brute-force grouping: one entry per unordered endpoint pair and
/// transport, in order of first appearance. Each entry holds the client
/// (first sender) and the packet indices with direction signs.
pub struct OracleFlow {
    pub proto: IpProto,
    pub ends: [(IpAddr, u16); 2],
    pub client: (IpAddr, u16),
    pub packets: Vec<(usize, i8)>,
}

pub fn oracle_group(records: &[PacketRecord]) -> Vec<OracleFlow> {
    let mut flows: Vec<OracleFlow> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let src = (r.src_addr, r.src_port);
        let dst = (r.dst_addr, r.dst_port);
        let found = flows.iter_mut().find(|f| {
            f.proto == r.ip_proto && ((f.ends[0] == src && f.ends[1] == dst) || (f.ends[0] == dst && f.ends[1] == src))
        });
        match found {
            Some(f) => {
                let sign = if src == f.client { -1 } else { 1 };
                f.packets.push((i, sign));
            }
            None => flows.push(OracleFlow {
                proto: r.ip_proto,
                ends: [src, dst],
                client: src,
                packets: vec![(i, -1)],
            }),
        }
    }
    flows
}

/// One-pass window assignment: (1-based index -> [up_bytes, down_bytes,
/// up_pkts, down_pkts]) plus the total window count.
pub fn oracle_windows(packets: &[(u64, u32, i8)], delta_us: u64) -> (u64, HashMap<u64, [u64; 4]>) {
    let mut out = HashMap::new();
    if packets.is_empty() {
        return (0, out);
    }
    let t0 = packets.iter().map(|p| p.0).min().unwrap();
    let t1 = packets.iter().map(|p| p.0).max().unwrap();
    let span = t1 - t0;
    let mut n = span / delta_us;
    if span % delta_us != 0 || n == 0 {
        n += 1;
    }
    for &(ts, len, dir) in packets {
        let mut idx = (ts - t0) / delta_us + 1;
        if idx > n {
            idx = n;
        }
        let e = out.entry(idx).or_insert([0u64; 4]);
        if dir < 0 {
            e[0] += len as u64;
            e[2] += 1;
        } else {
            e[1] += len as u64;
            e[3] += 1;
        }
    }
    (n, out)
}

fn be16(v: usize) -> [u8; 2] {
    [(v >> 8) as u8, v as u8]
}

/// A ClientHello assembled byte by byte, independent of the library's
/// fixture builders. Returns the handshake message and the offset of the
/// server_name extension within it and its total length.
pub fn hand_client_hello(host: &str, grease_first: bool) -> (Vec<u8>, usize, usize) {
    let mut exts: Vec<u8> = Vec::new();
    if grease_first {
        exts.extend_from_slice(&[0x0a, 0x0a, 0x00, 0x00]);
    }
    let sni_at = exts.len();
    let name = host.as_bytes();
    exts.extend_from_slice(&[0x00, 0x00]);
    exts.extend_from_slice(&be16(name.len() + 5));
    exts.extend_from_slice(&be16(name.len() + 3));
    exts.push(0x00);
    exts.extend_from_slice(&be16(name.len()));
    exts.extend_from_slice(name);
    let sni_len = exts.len() - sni_at;
    // supported_versions offering 1.3 and 1.2
    exts.extend_from_slice(&[0x00, 0x2b, 0x00, 0x05, 0x04, 0x03, 0x04, 0x03, 0x03]);
    // ec_point_formats
    exts.extend_from_slice(&[0x00, 0x0b, 0x00, 0x02, 0x01, 0x00]);

    let mut body: Vec<u8> = vec![0x03, 0x03];
    body.extend_from_slice(&[0x11; 32]);
    body.push(0);
    body.extend_from_slice(&[0x00, 0x04, 0x13, 0x01, 0x13, 0x02]);
    body.extend_from_slice(&[0x01, 0x00]);
    body.extend_from_slice(&be16(exts.len()));
    let ext_start = 4 + body.len();
    body.extend_from_slice(&exts);

    let mut msg = vec![0x01, 0x00];
    msg.extend_from_slice(&be16(body.len()));
    msg.extend_from_slice(&body);
    (msg, ext_start + sni_at, sni_len)
}

/// A ServerHello assembled byte by byte.
pub fn hand_server_hello(legacy: u16, supported_version: Option<u16>) -> Vec<u8> {
    let mut exts = Vec::new();
    if let Some(v) = supported_version {
        exts.extend_from_slice(&[0x00, 0x2b, 0x00, 0x02]);
        exts.extend_from_slice(&v.to_be_bytes());
    }
    let mut body = legacy.to_be_bytes().to_vec();
    body.extend_from_slice(&[0x22; 32]);
    body.push(0);
    body.extend_from_slice(&[0x13, 0x01, 0x00]);
    body.extend_from_slice(&be16(exts.len()));
    body.extend_from_slice(&exts);
    let mut msg = vec![0x02, 0x00];
    msg.extend_from_slice(&be16(body.len()));
    msg.extend_from_slice(&body);
    msg
}

/// Wraps a handshake message in TLS records split at `cuts` (message
/// offsets); returns the stream and, per message byte, its stream offset.
pub fn hand_records(msg: &[u8], cuts: &[usize]) -> (Vec<u8>, Vec<usize>) {
    let mut out = Vec::new();
    let mut pos = Vec::with_capacity(msg.len());
    let mut start = 0;
    let mut bounds: Vec<usize> = cuts.iter().copied().filter(|&c| c > 0 && c < msg.len()).collect();
    bounds.push(msg.len());
    for end in bounds {
        out.extend_from_slice(&[0x16, 0x03, 0x01]);
        out.extend_from_slice(&be16(end - start));
        for b in &msg[start..end] {
            pos.push(out.len());
            out.push(*b);
        }
        start = end;
    }
    (out, pos)
}

/// Row-stochastic matrix over `n` states with a few zero entries.
pub fn known_matrix(rng: &mut impl Rng, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut row: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen::<f64>() }).collect();
            if row.iter().all(|&p| p == 0.0) {
                row[0] = 1.0;
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= s);
            row
        })
        .collect()
}

/// Payload lengths drawn from a fixed mixture of uniform bumps.
pub fn pl_mixture(rng: &mut impl Rng, n: usize) -> Vec<u32> {
    let bumps = [(40u32, 20u32), (120, 30), (517, 5), (900, 200), (1350, 60), (1460, 1)];
    (0..n)
        .map(|_| {
            let (c, w) = bumps[rng.gen_range(0..bumps.len())];
            rng.gen_range(c - w.min(c - 1)..=c + w)
        })
        .collect()
}
