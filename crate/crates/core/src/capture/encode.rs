use std::net::IpAddr;

use super::{IpProto, PacketRecord};

const ETH_HEADER: usize = 14;
const SRC_MAC: [u8; 6] = [0x02, 0, 0, 0, 0, 0x01];
const DST_MAC: [u8; 6] = [0x02, 0, 0, 0, 0, 0x02];

fn ip_header_len(rec: &PacketRecord) -> usize {
    match rec.src_addr {
        IpAddr::V4(_) => 20,
        IpAddr::V6(_) => 40,
    }
}

fn transport_header_len(rec: &PacketRecord) -> usize {
    match rec.ip_proto {
        IpProto::Tcp => 20,
        _ => 8,
    }
}

/// Length of the Ethernet frame synthesized for an untruncated record.
pub(crate) fn frame_len(rec: &PacketRecord) -> usize {
    ETH_HEADER + ip_header_len(rec) + transport_header_len(rec) + rec.payload.len()
}

pub(crate) fn check_writable(rec: &PacketRecord) -> Result<(), &'static str> {
    if !rec.ip_proto.is_transport() {
        return Err("only TCP and UDP records can be written");
    }
    if rec.src_addr.is_ipv4() != rec.dst_addr.is_ipv4() {
        return Err("source and destination address families differ");
    }
    if rec.payload.len() != rec.payload_len as usize {
        return Err("payload_len does not match stored payload");
    }
    if frame_len(rec) - ETH_HEADER > u16::MAX as usize + 40 {
        return Err("payload too large for one IP packet");
    }
    Ok(())
}

fn checksum_add(mut sum: u32, data: &[u8]) -> u32 {
    let mut chunks = data.chunks_exact(2);
    for c in &mut chunks {
        sum += u16::from_be_bytes([c[0], c[1]]) as u32;
    }
    if let [last] = chunks.remainder() {
        sum += (*last as u32) << 8;
    }
    sum
}

fn checksum_fold(mut sum: u32) -> u16 {
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Builds the Ethernet frame for `rec` and returns it with the original
/// (on-wire) length to put in the capture record header.
pub fn build_frame(rec: &PacketRecord) -> (Vec<u8>, u32) {
    let full = frame_len(rec);
    let orig_len = if rec.truncated {
        (rec.wire_len as usize).max(full + 1)
    } else {
        (rec.wire_len as usize).max(full)
    };
    // declared lengths describe the packet as it was on the wire
    let ip_total = (orig_len - ETH_HEADER).min(u16::MAX as usize + 40);
    let l4_len = ip_total - ip_header_len(rec);

    let mut transport = Vec::with_capacity(transport_header_len(rec) + rec.payload.len());
    transport.extend_from_slice(&rec.src_port.to_be_bytes());
    transport.extend_from_slice(&rec.dst_port.to_be_bytes());
    match rec.ip_proto {
        IpProto::Tcp => {
            transport.extend_from_slice(&[0; 8]); // seq, ack
            let flags = if rec.payload.is_empty() { 0x10 } else { 0x18 };
            transport.extend_from_slice(&[0x50, flags, 0xff, 0xff, 0, 0, 0, 0]);
        }
        _ => {
            transport.extend_from_slice(&(l4_len.min(u16::MAX as usize) as u16).to_be_bytes());
            transport.extend_from_slice(&[0, 0]);
        }
    }
    transport.extend_from_slice(&rec.payload);

    let proto_num = if rec.ip_proto == IpProto::Tcp { 6u8 } else { 17 };
    let mut frame = Vec::with_capacity(orig_len);
    frame.extend_from_slice(&DST_MAC);
    frame.extend_from_slice(&SRC_MAC);
    let pseudo = match (rec.src_addr, rec.dst_addr) {
        (IpAddr::V4(s), IpAddr::V4(d)) => {
            frame.extend_from_slice(&0x0800u16.to_be_bytes());
            let mut ip = [0u8; 20];
            ip[0] = 0x45;
            ip[2..4].copy_from_slice(&(ip_total as u16).to_be_bytes());
            ip[6] = 0x40; // DF
            ip[8] = 64;
            ip[9] = proto_num;
            ip[12..16].copy_from_slice(&s.octets());
            ip[16..20].copy_from_slice(&d.octets());
            let c = checksum_fold(checksum_add(0, &ip));
            ip[10..12].copy_from_slice(&c.to_be_bytes());
            frame.extend_from_slice(&ip);
            let mut p = checksum_add(0, &s.octets());
            p = checksum_add(p, &d.octets());
            p + proto_num as u32 + l4_len as u32
        }
        (IpAddr::V6(s), IpAddr::V6(d)) => {
            frame.extend_from_slice(&0x86ddu16.to_be_bytes());
            frame.extend_from_slice(&[0x60, 0, 0, 0]);
            frame.extend_from_slice(&(l4_len.min(u16::MAX as usize) as u16).to_be_bytes());
            frame.extend_from_slice(&[proto_num, 64]);
            frame.extend_from_slice(&s.octets());
            frame.extend_from_slice(&d.octets());
            let mut p = checksum_add(0, &s.octets());
            p = checksum_add(p, &d.octets());
            p + proto_num as u32 + l4_len as u32
        }
        _ => unreachable!("checked by check_writable"),
    };
    if !rec.truncated {
        let mut c = checksum_fold(checksum_add(pseudo, &transport));
        if rec.ip_proto == IpProto::Udp && c == 0 {
            c = 0xffff;
        }
        let at = if rec.ip_proto == IpProto::Tcp { 16 } else { 6 };
        transport[at..at + 2].copy_from_slice(&c.to_be_bytes());
    }
    frame.extend_from_slice(&transport);
    if !rec.truncated && frame.len() < orig_len {
        // trailer padding keeps the recorded wire length intact
        frame.resize(orig_len, 0);
    }
    (frame, orig_len as u32)
}
