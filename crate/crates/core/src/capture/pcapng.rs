//! Best-effort pcapng reader: SHB, IDB, EPB, SPB and the obsolete PB.
//! Every other block type is stepped over.

use std::path::Path;

use super::decode::{decode_frame, LinkType};
use super::{CaptureError, CaptureStats, PacketRecord, SkipReason};

pub(crate) const SHB_TYPE: u32 = 0x0a0d_0d0a;
const BYTE_ORDER_MAGIC: u32 = 0x1a2b_3c4d;
const IDB_TYPE: u32 = 1;
const PB_TYPE: u32 = 2;
const SPB_TYPE: u32 = 3;
const EPB_TYPE: u32 = 6;
const OPT_IF_TSRESOL: u16 = 9;

#[derive(Debug, Clone, Copy)]
enum TsResolution {
    Decimal(u8),
    Binary(u8),
}

impl TsResolution {
    fn to_us(self, ticks: u64) -> u64 {
        match self {
            TsResolution::Decimal(v) if v >= 6 => ticks / 10u64.pow((v - 6) as u32),
            TsResolution::Decimal(v) => ticks.saturating_mul(10u64.pow((6 - v) as u32)),
            TsResolution::Binary(v) => ((ticks as u128 * 1_000_000) >> v) as u64,
        }
    }
}

struct Interface {
    link: LinkType,
    snaplen: u32,
    resolution: TsResolution,
}

struct Cursor {
    big_endian: bool,
}

impl Cursor {
    fn u16_at(&self, d: &[u8], at: usize) -> Option<u16> {
        let raw: [u8; 2] = d.get(at..at + 2)?.try_into().ok()?;
        Some(if self.big_endian {
            u16::from_be_bytes(raw)
        } else {
            u16::from_le_bytes(raw)
        })
    }

    fn u32_at(&self, d: &[u8], at: usize) -> Option<u32> {
        let raw: [u8; 4] = d.get(at..at + 4)?.try_into().ok()?;
        Some(if self.big_endian {
            u32::from_be_bytes(raw)
        } else {
            u32::from_le_bytes(raw)
        })
    }
}

fn parse_idb(c: &Cursor, body: &[u8]) -> Option<Interface> {
    let link = LinkType::from_code(c.u16_at(body, 0)? as u32);
    let snaplen = c.u32_at(body, 4)?;
    let mut resolution = TsResolution::Decimal(6);
    let mut off = 8;
    while off + 4 <= body.len() {
        let code = c.u16_at(body, off)?;
        let len = c.u16_at(body, off + 2)? as usize;
        if code == 0 {
            break;
        }
        if code == OPT_IF_TSRESOL && len >= 1 {
            let v = *body.get(off + 4)?;
            resolution = if v & 0x80 != 0 {
                TsResolution::Binary(v & 0x7f)
            } else {
                TsResolution::Decimal(v)
            };
        }
        off += 4 + len.div_ceil(4) * 4;
    }
    Some(Interface {
        link,
        snaplen,
        resolution,
    })
}

pub(crate) fn read(
    data: &[u8],
    path: &Path,
    packets: &mut Vec<PacketRecord>,
    stats: &mut CaptureStats,
) -> Result<(), CaptureError> {
    let mut off = 0;
    let mut cursor = Cursor { big_endian: false };
    let mut interfaces: Vec<Interface> = Vec::new();
    let truncated_header = || CaptureError::TruncatedHeader {
        path: path.to_owned(),
    };

    while off + 12 <= data.len() {
        let block_type = u32::from_le_bytes(data[off..off + 4].try_into().unwrap());
        if block_type == SHB_TYPE {
            let bom = data.get(off + 8..off + 12).ok_or_else(truncated_header)?;
            cursor.big_endian = match u32::from_le_bytes(bom.try_into().unwrap()) {
                BYTE_ORDER_MAGIC => false,
                m if m.swap_bytes() == BYTE_ORDER_MAGIC => true,
                _ => return Err(truncated_header()),
            };
            interfaces.clear();
        }
        let block_type = cursor.u32_at(data, off).unwrap();
        let total_len = cursor.u32_at(data, off + 4).unwrap() as usize;
        if total_len < 12 || off + total_len > data.len() {
            if matches!(block_type, EPB_TYPE | SPB_TYPE | PB_TYPE) {
                stats.total_frames += 1;
                stats.skip(SkipReason::TruncatedRecord);
            }
            break;
        }
        let body = &data[off + 8..off + total_len - 4];
        off += total_len;

        match block_type {
            IDB_TYPE => {
                if let Some(iface) = parse_idb(&cursor, body) {
                    interfaces.push(iface);
                }
            }
            EPB_TYPE | PB_TYPE | SPB_TYPE => {
                stats.total_frames += 1;
                let parsed = match block_type {
                    EPB_TYPE | PB_TYPE => (|| {
                        // PB keeps the same offsets with a 16-bit interface id
                        let iface = if block_type == EPB_TYPE {
                            cursor.u32_at(body, 0)? as usize
                        } else {
                            cursor.u16_at(body, 0)? as usize
                        };
                        let ts = ((cursor.u32_at(body, 4)? as u64) << 32) | cursor.u32_at(body, 8)? as u64;
                        let cap = cursor.u32_at(body, 12)? as usize;
                        let orig = cursor.u32_at(body, 16)?;
                        let frame = body.get(20..20 + cap)?;
                        Some((iface, Some(ts), frame, orig))
                    })(),
                    _ => (|| {
                        let orig = cursor.u32_at(body, 0)?;
                        let snap = interfaces.first().map(|i| i.snaplen).unwrap_or(0);
                        let mut cap = (orig as usize).min(body.len() - 4);
                        if snap > 0 {
                            cap = cap.min(snap as usize);
                        }
                        Some((0usize, None, &body[4..4 + cap], orig))
                    })(),
                };
                let Some((iface, ts, frame, orig)) = parsed else {
                    stats.skip(SkipReason::Malformed);
                    continue;
                };
                let Some(iface) = interfaces.get(iface) else {
                    stats.skip(SkipReason::Malformed);
                    continue;
                };
                // simple packet blocks carry no timestamp
                let ts_us = ts.map(|t| iface.resolution.to_us(t)).unwrap_or(0);
                match decode_frame(iface.link, frame, orig, ts_us) {
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
            _ => {}
        }
    }
    Ok(())
}
