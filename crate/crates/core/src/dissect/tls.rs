//! ClientHello / ServerHello parsing over a concatenated byte stream.
//!
//! Handshake fragments are pulled out of consecutive handshake records and
//! joined before parsing; an [`OffsetMap`] keeps track of where every
//! handshake byte sat in the original stream so the SNI extension can be
//! located in stream coordinates.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CONTENT_HANDSHAKE: u8 = 22;
pub const HANDSHAKE_CLIENT_HELLO: u8 = 1;
pub const HANDSHAKE_SERVER_HELLO: u8 = 2;
pub const EXT_SERVER_NAME: u16 = 0;
pub const EXT_SUPPORTED_VERSIONS: u16 = 43;
const MAX_RECORD_LEN: usize = 16_384 + 2_048;

/// Half-open byte range `[offset, offset + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteRange {
    pub offset: usize,
    pub len: usize,
}

impl ByteRange {
    pub fn end(&self) -> usize {
        self.offset + self.len
    }
}

/// Piecewise map from a logical (reassembled) offset to a stream offset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OffsetMap {
    /// `(logical_start, target_start, len)`, sorted by `logical_start`.
    segments: Vec<(usize, usize, usize)>,
}

impl OffsetMap {
    pub fn identity(len: usize) -> Self {
        OffsetMap {
            segments: vec![(0, 0, len)],
        }
    }

    /// Appends `len` logical bytes stored at `target_start`.
    pub fn push(&mut self, target_start: usize, len: usize) {
        if len == 0 {
            return;
        }
        let logical = self.logical_len();
        if let Some(last) = self.segments.last_mut() {
            if last.1 + last.2 == target_start {
                last.2 += len;
                return;
            }
        }
        self.segments.push((logical, target_start, len));
    }

    pub fn logical_len(&self) -> usize {
        self.segments.last().map(|s| s.0 + s.2).unwrap_or(0)
    }

    pub fn map(&self, logical: usize) -> Option<usize> {
        let i = self.segments.partition_point(|s| s.0 + s.2 <= logical);
        let (ls, ts, len) = *self.segments.get(i)?;
        (logical >= ls && logical < ls + len).then(|| ts + (logical - ls))
    }

    /// Smallest target range covering every byte of the logical range.
    pub fn map_range(&self, r: ByteRange) -> Option<ByteRange> {
        if r.len == 0 {
            return None;
        }
        let first = self.map(r.offset)?;
        let last = self.map(r.end() - 1)?;
        Some(ByteRange {
            offset: first.min(last),
            len: first.max(last) - first.min(last) + 1,
        })
    }

    /// Chains `self` (logical → intermediate) with `outer` (intermediate →
    /// final) for a single range.
    pub fn map_range_through(&self, r: ByteRange, outer: &OffsetMap) -> Option<ByteRange> {
        let first = outer.map(self.map(r.offset)?)?;
        let last = outer.map(self.map(r.end() - 1)?)?;
        Some(ByteRange {
            offset: first,
            len: last.checked_sub(first)? + 1,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TlsErrorKind {
    NotHandshakeRecord,
    BadRecordHeader,
    UnexpectedMessage,
    Truncated,
    BadLength,
    BadServerName,
}

impl fmt::Display for TlsErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TlsErrorKind::NotHandshakeRecord => "not a handshake record",
            TlsErrorKind::BadRecordHeader => "bad record header",
            TlsErrorKind::UnexpectedMessage => "unexpected handshake message type",
            TlsErrorKind::Truncated => "message truncated",
            TlsErrorKind::BadLength => "inconsistent length field",
            TlsErrorKind::BadServerName => "server_name is not a valid hostname",
        })
    }
}

/// Parse failure; `offset` is in the coordinates of the parsed input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{kind} at byte {offset}")]
pub struct TlsError {
    pub offset: usize,
    pub kind: TlsErrorKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TlsVersion {
    #[serde(rename = "TLS1_2")]
    Tls12,
    #[serde(rename = "TLS1_3")]
    Tls13,
    #[serde(rename = "OTHER")]
    Other,
    #[serde(rename = "UNKNOWN")]
    Unknown,
}

impl TlsVersion {
    pub fn from_wire(v: u16) -> Self {
        match v {
            0x0304 => TlsVersion::Tls13,
            0x0303 => TlsVersion::Tls12,
            _ => TlsVersion::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TlsVersion::Tls12 => "TLS1_2",
            TlsVersion::Tls13 => "TLS1_3",
            TlsVersion::Other => "OTHER",
            TlsVersion::Unknown => "UNKNOWN",
        }
    }
}

/// Record-header heuristic: handshake content type, a 0x0301–0x0303
/// record version and a plausible length.
pub fn looks_like_tls_record(b: &[u8]) -> bool {
    if b.len() < 5 || b[0] != CONTENT_HANDSHAKE || b[1] != 0x03 || !(1..=3).contains(&b[2]) {
        return false;
    }
    let len = u16::from_be_bytes([b[3], b[4]]) as usize;
    (1..=MAX_RECORD_LEN).contains(&len)
}

/// Concatenates the payloads of the leading run of handshake records.
/// A final record cut short by the end of the stream contributes the
/// bytes that are present.
pub fn reassemble_handshake(stream: &[u8]) -> Result<(Vec<u8>, OffsetMap), TlsError> {
    let mut out = Vec::new();
    let mut map = OffsetMap::default();
    let mut off = 0;
    while off < stream.len() {
        if stream[off] != CONTENT_HANDSHAKE {
            if off == 0 {
                return Err(TlsError {
                    offset: 0,
                    kind: TlsErrorKind::NotHandshakeRecord,
                });
            }
            break;
        }
        if stream.len() - off < 5 {
            break;
        }
        let hdr = &stream[off..off + 5];
        if hdr[1] != 0x03 || hdr[2] > 0x04 {
            return Err(TlsError {
                offset: off + 1,
                kind: TlsErrorKind::BadRecordHeader,
            });
        }
        let len = u16::from_be_bytes([hdr[3], hdr[4]]) as usize;
        if len == 0 || len > MAX_RECORD_LEN {
            return Err(TlsError {
                offset: off + 3,
                kind: TlsErrorKind::BadLength,
            });
        }
        let body_start = off + 5;
        let body_end = (body_start + len).min(stream.len());
        out.extend_from_slice(&stream[body_start..body_end]);
        map.push(body_start, body_end - body_start);
        off = body_start + len;
    }
    Ok((out, map))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    map: &'a OffsetMap,
}

impl<'a> Reader<'a> {
    fn err(&self, at: usize, kind: TlsErrorKind) -> TlsError {
        let offset = self.map.map(at).unwrap_or_else(|| {
            // past the end: report one past the last mapped byte
            self.map
                .map(self.map.logical_len().saturating_sub(1))
                .map(|o| o + 1)
                .unwrap_or(at)
        });
        TlsError { offset, kind }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], TlsError> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(self.buf.len(), TlsErrorKind::Truncated));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, TlsError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, TlsError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u24(&mut self) -> Result<usize, TlsError> {
        let b = self.take(3)?;
        Ok(((b[0] as usize) << 16) | ((b[1] as usize) << 8) | b[2] as usize)
    }

    /// Reads a length-prefixed vector whose bytes must lie before `limit`.
    fn vec(&mut self, prefix: usize, limit: usize) -> Result<(usize, &'a [u8]), TlsError> {
        let at = self.pos;
        let len = match prefix {
            1 => self.u8()? as usize,
            _ => self.u16()? as usize,
        };
        if self.pos + len > limit {
            return Err(self.err(at, TlsErrorKind::BadLength));
        }
        let start = self.pos;
        Ok((start, self.take(len)?))
    }
}

/// Extensions block: `(type, start of the extension header, body)`.
fn read_extensions<'a>(r: &mut Reader<'a>, end: usize) -> Result<Vec<(u16, usize, &'a [u8])>, TlsError> {
    let mut out = Vec::new();
    if r.pos == end {
        return Ok(out);
    }
    let (start, block) = r.vec(2, end)?;
    let block_end = start + block.len();
    r.pos = start;
    while r.pos < block_end {
        let ext_start = r.pos;
        if block_end - r.pos < 4 {
            return Err(r.err(r.pos, TlsErrorKind::BadLength));
        }
        let ty = r.u16()?;
        let (_, body) = r.vec(2, block_end)?;
        out.push((ty, ext_start, body));
    }
    if block_end != end {
        return Err(r.err(block_end, TlsErrorKind::BadLength));
    }
    Ok(out)
}

/// Handshake header; returns the message body end.
fn handshake_header(r: &mut Reader<'_>, expected: u8) -> Result<usize, TlsError> {
    let ty = r.u8()?;
    if ty != expected {
        return Err(r.err(r.pos - 1, TlsErrorKind::UnexpectedMessage));
    }
    let len = r.u24()?;
    let end = r.pos + len;
    if end > r.buf.len() {
        return Err(r.err(r.buf.len(), TlsErrorKind::Truncated));
    }
    Ok(end)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientHelloInfo {
    /// Lowercased host name of the first `host_name` entry.
    pub sni: Option<String>,
    /// The whole server_name extension (type, length, body).
    pub sni_range: Option<ByteRange>,
    pub legacy_version: u16,
    pub offered_versions: Vec<u16>,
}

/// Parses a ClientHello handshake message (no record layer). Offsets in
/// the result and in errors go through `map`.
pub fn parse_client_hello_message(msg: &[u8], map: &OffsetMap) -> Result<ClientHelloInfo, TlsError> {
    let mut r = Reader { buf: msg, pos: 0, map };
    let end = handshake_header(&mut r, HANDSHAKE_CLIENT_HELLO)?;
    let legacy_version = r.u16()?;
    r.take(32)?;
    let (_, session_id) = r.vec(1, end)?;
    if session_id.len() > 32 {
        return Err(r.err(r.pos - session_id.len() - 1, TlsErrorKind::BadLength));
    }
    let (ciphers_at, ciphers) = r.vec(2, end)?;
    if ciphers.is_empty() || ciphers.len() % 2 != 0 {
        return Err(r.err(ciphers_at - 2, TlsErrorKind::BadLength));
    }
    r.vec(1, end)?;
    let mut info = ClientHelloInfo {
        sni: None,
        sni_range: None,
        legacy_version,
        offered_versions: Vec::new(),
    };
    for (ty, ext_start, body) in read_extensions(&mut r, end)? {
        match ty {
            EXT_SERVER_NAME if info.sni.is_none() => {
                let body_at = ext_start + 4;
                let mut sr = Reader { buf: &msg[..body_at + body.len()], pos: body_at, map };
                let limit = body_at + body.len();
                if body.is_empty() {
                    continue;
                }
                let (list_at, list) = sr.vec(2, limit)?;
                let mut lr = Reader { buf: &msg[..list_at + list.len()], pos: list_at, map };
                while lr.pos < list_at + list.len() {
                    let name_type = lr.u8()?;
                    let (name_at, name) = lr.vec(2, list_at + list.len())?;
                    if name_type == 0 {
                        let host = std::str::from_utf8(name)
                            .ok()
                            .filter(|h| !h.is_empty() && h.is_ascii())
                            .ok_or_else(|| lr.err(name_at, TlsErrorKind::BadServerName))?;
                        info.sni = Some(host.to_ascii_lowercase());
                        info.sni_range = map.map_range(ByteRange {
                            offset: ext_start,
                            len: 4 + body.len(),
                        });
                        break;
                    }
                }
            }
            EXT_SUPPORTED_VERSIONS => {
                if let Some((&n, rest)) = body.split_first() {
                    info.offered_versions = rest
                        .chunks_exact(2)
                        .take(n as usize / 2)
                        .map(|c| u16::from_be_bytes([c[0], c[1]]))
                        .collect();
                }
            }
            _ => {}
        }
    }
    Ok(info)
}

/// Parses a ClientHello that starts at a TLS record header.
pub fn parse_client_hello(stream: &[u8]) -> Result<ClientHelloInfo, TlsError> {
    let (msg, map) = reassemble_handshake(stream)?;
    parse_client_hello_message(&msg, &map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerHelloInfo {
    pub legacy_version: u16,
    pub selected_version: Option<u16>,
    pub negotiated: TlsVersion,
}

/// Parses a ServerHello handshake message; supported_versions wins over
/// the legacy version field.
pub fn parse_server_hello_message(msg: &[u8], map: &OffsetMap) -> Result<ServerHelloInfo, TlsError> {
    let mut r = Reader { buf: msg, pos: 0, map };
    let end = handshake_header(&mut r, HANDSHAKE_SERVER_HELLO)?;
    let legacy_version = r.u16()?;
    r.take(32)?;
    let (_, session_id) = r.vec(1, end)?;
    if session_id.len() > 32 {
        return Err(r.err(r.pos - session_id.len() - 1, TlsErrorKind::BadLength));
    }
    r.take(3)?; // cipher suite + compression method
    if r.pos > end {
        return Err(r.err(end, TlsErrorKind::BadLength));
    }
    let mut selected_version = None;
    for (ty, ext_start, body) in read_extensions(&mut r, end)? {
        if ty == EXT_SUPPORTED_VERSIONS {
            if body.len() != 2 {
                return Err(r.err(ext_start + 2, TlsErrorKind::BadLength));
            }
            selected_version = Some(u16::from_be_bytes([body[0], body[1]]));
        }
    }
    let negotiated = TlsVersion::from_wire(selected_version.unwrap_or(legacy_version));
    let negotiated = match (selected_version, negotiated) {
        // legacy_version alone never signals 1.3
        (None, TlsVersion::Tls13) => TlsVersion::Other,
        (_, v) => v,
    };
    Ok(ServerHelloInfo {
        legacy_version,
        selected_version,
        negotiated,
    })
}

/// Parses a ServerHello that starts at a TLS record header.
pub fn parse_server_hello(stream: &[u8]) -> Result<ServerHelloInfo, TlsError> {
    let (msg, map) = reassemble_handshake(stream)?;
    parse_server_hello_message(&msg, &map)
}

/// Negotiated version, `Unknown` on any parse failure.
pub fn negotiated_version(stream: &[u8]) -> TlsVersion {
    parse_server_hello(stream)
        .map(|s| s.negotiated)
        .unwrap_or(TlsVersion::Unknown)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offset_map_merges_and_maps() {
        let mut m = OffsetMap::default();
        m.push(5, 10);
        m.push(15, 5);
        m.push(25, 4);
        assert_eq!(m.segments.len(), 2);
        assert_eq!(m.map(0), Some(5));
        assert_eq!(m.map(14), Some(19));
        assert_eq!(m.map(15), Some(25));
        assert_eq!(m.map(19), None);
        assert_eq!(
            m.map_range(ByteRange { offset: 12, len: 5 }),
            Some(ByteRange { offset: 17, len: 10 })
        );
    }

    #[test]
    fn record_heuristic() {
        assert!(looks_like_tls_record(&[22, 3, 1, 0, 200]));
        assert!(!looks_like_tls_record(&[23, 3, 3, 0, 200]));
        assert!(!looks_like_tls_record(&[22, 3, 4, 0, 200]));
        assert!(!looks_like_tls_record(&[22, 3, 3, 0, 0]));
        assert!(!looks_like_tls_record(&[22, 3, 3, 0xff, 0xff]));
        assert!(!looks_like_tls_record(&[22, 3]));
    }

    #[test]
    fn non_handshake_stream_rejected() {
        let e = parse_client_hello(&[23, 3, 3, 0, 1, 0]).unwrap_err();
        assert_eq!(e.kind, TlsErrorKind::NotHandshakeRecord);
    }
}
