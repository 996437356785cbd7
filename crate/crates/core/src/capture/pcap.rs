use std::io::{self, Write};
use std::path::Path;

use super::decode::{decode_frame, LinkType};
use super::{encode, CaptureError, CaptureStats, PacketRecord, SkipReason};

const GLOBAL_HEADER: usize = 24;
const RECORD_HEADER: usize = 16;
pub(crate) const MAGIC_US: u32 = 0xa1b2_c3d4;
pub(crate) const MAGIC_NS: u32 = 0xa1b2_3c4d;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Magic {
    pub big_endian: bool,
    pub nanos: bool,
}

impl Magic {
    pub fn detect(data: &[u8]) -> Option<Magic> {
        let raw: [u8; 4] = data.get(..4)?.try_into().ok()?;
        for big_endian in [false, true] {
            let m = if big_endian {
                u32::from_be_bytes(raw)
            } else {
                u32::from_le_bytes(raw)
            };
            match m {
                MAGIC_US => return Some(Magic { big_endian, nanos: false }),
                MAGIC_NS => return Some(Magic { big_endian, nanos: true }),
                _ => {}
            }
        }
        None
    }

    fn u32_at(&self, data: &[u8], at: usize) -> u32 {
        let raw: [u8; 4] = data[at..at + 4].try_into().unwrap();
        if self.big_endian {
            u32::from_be_bytes(raw)
        } else {
            u32::from_le_bytes(raw)
        }
    }
}

pub(crate) fn read(
    data: &[u8],
    path: &Path,
    packets: &mut Vec<PacketRecord>,
    stats: &mut CaptureStats,
) -> Result<(), CaptureError> {
    let magic = Magic::detect(data).expect("caller checked the magic");
    if data.len() < GLOBAL_HEADER {
        return Err(CaptureError::TruncatedHeader {
            path: path.to_owned(),
        });
    }
    // the FCS-present bits share the link-type word in some writers
    let link = LinkType::from_code(magic.u32_at(data, 20) & 0x0fff_ffff);
    let mut off = GLOBAL_HEADER;
    while off < data.len() {
        stats.total_frames += 1;
        if data.len() - off < RECORD_HEADER {
            stats.skip(SkipReason::TruncatedRecord);
            break;
        }
        let sec = magic.u32_at(data, off) as u64;
        let frac = magic.u32_at(data, off + 4) as u64;
        let incl_len = magic.u32_at(data, off + 8) as usize;
        let orig_len = magic.u32_at(data, off + 12);
        off += RECORD_HEADER;
        if data.len() - off < incl_len {
            stats.skip(SkipReason::TruncatedRecord);
            break;
        }
        let frame = &data[off..off + incl_len];
        off += incl_len;
        let ts_us = sec * 1_000_000 + if magic.nanos { frac / 1_000 } else { frac };
        match decode_frame(link, frame, orig_len, ts_us) {
            Ok(rec) => {
                stats.decoded += 1;
                if rec.truncated {
                    stats.truncated_packets += 1;
                }
                packets.push(rec);
            }
            Err(reason) => stats.skip(reason),
        }
    }
    Ok(())
}

fn global_header(link: LinkType, snaplen: u32) -> [u8; GLOBAL_HEADER] {
    let mut h = [0u8; GLOBAL_HEADER];
    h[0..4].copy_from_slice(&MAGIC_US.to_le_bytes());
    h[4..6].copy_from_slice(&2u16.to_le_bytes());
    h[6..8].copy_from_slice(&4u16.to_le_bytes());
    h[16..20].copy_from_slice(&snaplen.to_le_bytes());
    h[20..24].copy_from_slice(&link.code().to_le_bytes());
    h
}

fn record(out: &mut impl Write, ts_us: u64, frame: &[u8], orig_len: u32) -> io::Result<()> {
    let mut h = [0u8; RECORD_HEADER];
    h[0..4].copy_from_slice(&((ts_us / 1_000_000) as u32).to_le_bytes());
    h[4..8].copy_from_slice(&((ts_us % 1_000_000) as u32).to_le_bytes());
    h[8..12].copy_from_slice(&(frame.len() as u32).to_le_bytes());
    h[12..16].copy_from_slice(&orig_len.to_le_bytes());
    out.write_all(&h)?;
    out.write_all(frame)
}

pub(crate) fn write(packets: &[PacketRecord], out: &mut impl Write) -> io::Result<()> {
    out.write_all(&global_header(LinkType::Ethernet, 262_144))?;
    for rec in packets {
        let (frame, orig_len) = encode::build_frame(rec);
        record(out, rec.ts_us, &frame, orig_len)?;
    }
    Ok(())
}

pub(crate) fn write_raw(
    frames: &[(u64, Vec<u8>, u32)],
    link: LinkType,
    snaplen: u32,
    out: &mut impl Write,
) -> io::Result<()> {
    out.write_all(&global_header(link, snaplen))?;
    for (ts_us, frame, orig_len) in frames {
        record(out, *ts_us, frame, *orig_len)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn be_capture_ns() -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&MAGIC_NS.to_be_bytes());
        v.extend_from_slice(&2u16.to_be_bytes());
        v.extend_from_slice(&4u16.to_be_bytes());
        v.extend_from_slice(&[0; 8]);
        v.extend_from_slice(&65535u32.to_be_bytes());
        v.extend_from_slice(&101u32.to_be_bytes());
        // raw IPv4/UDP with 1-byte payload
        let ip = [
            0x45, 0, 0, 29, 0, 0, 0, 0, 64, 17, 0, 0, 10, 0, 0, 1, 10, 0, 0, 2, 0, 1, 0, 2, 0, 9,
            0, 0, 0xaa,
        ];
        v.extend_from_slice(&3u32.to_be_bytes());
        v.extend_from_slice(&1_234_567_999u32.to_be_bytes());
        v.extend_from_slice(&(ip.len() as u32).to_be_bytes());
        v.extend_from_slice(&(ip.len() as u32).to_be_bytes());
        v.extend_from_slice(&ip);
        v
    }

    #[test]
    fn big_endian_nanosecond_file() {
        let data = be_capture_ns();
        let mut pk = Vec::new();
        let mut st = CaptureStats::default();
        read(&data, Path::new("x"), &mut pk, &mut st).unwrap();
        assert_eq!(pk.len(), 1);
        // nanoseconds floor-divided into microseconds
        assert_eq!(pk[0].ts_us, 3 * 1_000_000 + 1_234_567);
        assert_eq!(&pk[0].payload[..], &[0xaa]);
    }

    #[test]
    fn truncated_trailing_record_counted() {
        let mut data = be_capture_ns();
        data.truncate(data.len() - 3);
        let mut pk = Vec::new();
        let mut st = CaptureStats::default();
        read(&data, Path::new("x"), &mut pk, &mut st).unwrap();
        assert!(pk.is_empty());
        assert_eq!(st.total_frames, 1);
        assert_eq!(st.skipped.get(&SkipReason::TruncatedRecord), Some(&1));
    }
}
