use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use bytes::Bytes;

use super::{IpProto, PacketRecord, SkipReason};

/// Link-layer header types understood by the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkType {
    Ethernet,
    RawIp,
    Ipv4,
    Ipv6,
    LinuxSll,
    LinuxSll2,
    Other(u32),
}

impl LinkType {
    pub fn from_code(code: u32) -> Self {
        match code {
            1 => LinkType::Ethernet,
            12 | 14 | 101 => LinkType::RawIp,
            228 => LinkType::Ipv4,
            229 => LinkType::Ipv6,
            113 => LinkType::LinuxSll,
            276 => LinkType::LinuxSll2,
            other => LinkType::Other(other),
        }
    }

    pub fn code(self) -> u32 {
        match self {
            LinkType::Ethernet => 1,
            LinkType::RawIp => 101,
            LinkType::Ipv4 => 228,
            LinkType::Ipv6 => 229,
            LinkType::LinuxSll => 113,
            LinkType::LinuxSll2 => 276,
            LinkType::Other(c) => c,
        }
    }
}

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_IPV6: u16 = 0x86dd;
const ETHERTYPE_VLAN: [u16; 3] = [0x8100, 0x88a8, 0x9100];

fn be16(b: &[u8], at: usize) -> Option<u16> {
    Some(u16::from_be_bytes([*b.get(at)?, *b.get(at + 1)?]))
}

/// Decodes one captured frame. `orig_len` is the on-wire length reported by
/// the capture record; a shorter `frame` means the snap length cut it.
pub(crate) fn decode_frame(
    link: LinkType,
    frame: &[u8],
    orig_len: u32,
    ts_us: u64,
) -> Result<PacketRecord, SkipReason> {
    let ip = match link {
        LinkType::Ethernet => {
            let mut ethertype = be16(frame, 12).ok_or(SkipReason::Malformed)?;
            let mut off = 14;
            while ETHERTYPE_VLAN.contains(&ethertype) {
                ethertype = be16(frame, off + 2).ok_or(SkipReason::Malformed)?;
                off += 4;
            }
            match ethertype {
                ETHERTYPE_IPV4 | ETHERTYPE_IPV6 => &frame[off..],
                _ => return Err(SkipReason::NotIp),
            }
        }
        LinkType::LinuxSll => {
            let proto = be16(frame, 14).ok_or(SkipReason::Malformed)?;
            match proto {
                ETHERTYPE_IPV4 | ETHERTYPE_IPV6 => &frame[16..],
                _ => return Err(SkipReason::NotIp),
            }
        }
        LinkType::LinuxSll2 => {
            let proto = be16(frame, 0).ok_or(SkipReason::Malformed)?;
            if frame.len() < 20 {
                return Err(SkipReason::Malformed);
            }
            match proto {
                ETHERTYPE_IPV4 | ETHERTYPE_IPV6 => &frame[20..],
                _ => return Err(SkipReason::NotIp),
            }
        }
        LinkType::RawIp | LinkType::Ipv4 | LinkType::Ipv6 => frame,
        LinkType::Other(_) => return Err(SkipReason::UnsupportedLinkType),
    };

    let truncated = (frame.len() as u64) < orig_len as u64;
    let (src, dst, proto, transport) = match ip.first().map(|b| b >> 4) {
        Some(4) => decode_ipv4(ip)?,
        Some(6) => decode_ipv6(ip)?,
        Some(_) => return Err(SkipReason::NotIp),
        None => return Err(SkipReason::Malformed),
    };

    let (ip_proto, src_port, dst_port, payload) = match proto {
        6 => {
            if transport.len() < 20 {
                return Err(SkipReason::Malformed);
            }
            let data_off = ((transport[12] >> 4) as usize) * 4;
            if data_off < 20 || data_off > transport.len() {
                return Err(SkipReason::Malformed);
            }
            (
                IpProto::Tcp,
                be16(transport, 0).unwrap(),
                be16(transport, 2).unwrap(),
                &transport[data_off..],
            )
        }
        17 => {
            if transport.len() < 8 {
                return Err(SkipReason::Malformed);
            }
            let udp_len = be16(transport, 4).unwrap() as usize;
            // udp_len == 0 shows up for jumbograms and some offloaded captures
            let end = if udp_len >= 8 {
                udp_len.min(transport.len())
            } else {
                transport.len()
            };
            (
                IpProto::Udp,
                be16(transport, 0).unwrap(),
                be16(transport, 2).unwrap(),
                &transport[8..end],
            )
        }
        _ => return Err(SkipReason::OtherTransport),
    };

    Ok(PacketRecord {
        ts_us,
        src_addr: src,
        dst_addr: dst,
        ip_proto,
        src_port,
        dst_port,
        payload_len: payload.len() as u32,
        payload: Bytes::copy_from_slice(payload),
        truncated,
        wire_len: orig_len.max(frame.len() as u32),
    })
}

type IpParts<'a> = (IpAddr, IpAddr, u8, &'a [u8]);

fn decode_ipv4(ip: &[u8]) -> Result<IpParts<'_>, SkipReason> {
    if ip.len() < 20 {
        return Err(SkipReason::Malformed);
    }
    let ihl = ((ip[0] & 0x0f) as usize) * 4;
    if ihl < 20 || ihl > ip.len() {
        return Err(SkipReason::Malformed);
    }
    let total_len = be16(ip, 2).unwrap() as usize;
    let frag = be16(ip, 6).unwrap();
    if frag & 0x1fff != 0 {
        return Err(SkipReason::NonFirstFragment);
    }
    // total_len == 0 is what segmentation offload leaves behind
    let end = if total_len >= ihl {
        total_len.min(ip.len())
    } else if total_len == 0 {
        ip.len()
    } else {
        return Err(SkipReason::Malformed);
    };
    let src = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);
    Ok((src.into(), dst.into(), ip[9], &ip[ihl..end]))
}

fn decode_ipv6(ip: &[u8]) -> Result<IpParts<'_>, SkipReason> {
    if ip.len() < 40 {
        return Err(SkipReason::Malformed);
    }
    let payload_len = be16(ip, 4).unwrap() as usize;
    let mut next = ip[6];
    let src: [u8; 16] = ip[8..24].try_into().unwrap();
    let dst: [u8; 16] = ip[24..40].try_into().unwrap();
    let end = if payload_len == 0 {
        ip.len()
    } else {
        (40 + payload_len).min(ip.len())
    };
    let mut off = 40;
    loop {
        match next {
            // hop-by-hop, routing, destination options
            0 | 43 | 60 => {
                let hdr_len = (*ip.get(off + 1).ok_or(SkipReason::Malformed)? as usize + 1) * 8;
                next = ip[off];
                off += hdr_len;
            }
            44 => {
                let frag = be16(ip, off + 2).ok_or(SkipReason::Malformed)?;
                if frag >> 3 != 0 {
                    return Err(SkipReason::NonFirstFragment);
                }
                next = ip[off];
                off += 8;
            }
            51 => {
                let hdr_len = (*ip.get(off + 1).ok_or(SkipReason::Malformed)? as usize + 2) * 4;
                next = ip[off];
                off += hdr_len;
            }
            _ => break,
        }
        if off > end {
            return Err(SkipReason::Malformed);
        }
    }
    Ok((
        Ipv6Addr::from(src).into(),
        Ipv6Addr::from(dst).into(),
        next,
        &ip[off..end],
    ))
}
