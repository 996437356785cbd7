//! QUIC version 1 Initial packet protection removal and CRYPTO frame
//! reassembly.

use aes::cipher::{generic_array::GenericArray, BlockEncrypt, KeyInit};
use aes::Aes128;
use aes_gcm::aead::{Aead, Payload};
use aes_gcm::{Aes128Gcm, Nonce};
use hkdf::Hkdf;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use super::tls::OffsetMap;

pub const QUIC_V1: u32 = 0x0000_0001;
pub const INITIAL_SALT_V1: [u8; 20] = [
    0x38, 0x76, 0x2c, 0xf7, 0xf5, 0x59, 0x34, 0xb3, 0x4d, 0x17, 0x9a, 0xe6, 0xa4, 0xc8, 0x0c, 0xad, 0xcc, 0xbb, 0x7f,
    0x0a,
];
const TAG_LEN: usize = 16;
const SAMPLE_LEN: usize = 16;
const MAX_CID_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Error, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuicError {
    #[error("not a long-header packet")]
    NotLongHeader,
    #[error("unsupported QUIC version {0:#010x}")]
    UnsupportedVersion(u32),
    #[error("long-header packet is not an Initial")]
    NotInitial,
    #[error("malformed long header")]
    MalformedHeader,
    #[error("payload authentication failed")]
    AuthenticationFailed,
    #[error("malformed frame at plaintext offset {0}")]
    MalformedFrame(usize),
    #[error("no CRYPTO frame")]
    MissingCrypto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Client,
    Server,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InitialKeys {
    pub key: [u8; 16],
    pub iv: [u8; 12],
    pub hp: [u8; 16],
}

fn expand_label(hk: &Hkdf<Sha256>, label: &str, out: &mut [u8]) {
    let full = format!("tls13 {label}");
    let mut info = Vec::with_capacity(4 + full.len());
    info.extend_from_slice(&(out.len() as u16).to_be_bytes());
    info.push(full.len() as u8);
    info.extend_from_slice(full.as_bytes());
    info.push(0);
    hk.expand(&info, out).expect("output length is small");
}

pub fn initial_keys(dcid: &[u8], side: Side) -> InitialKeys {
    let (_, initial) = Hkdf::<Sha256>::extract(Some(&INITIAL_SALT_V1), dcid);
    let mut secret = [0u8; 32];
    let label = match side {
        Side::Client => "client in",
        Side::Server => "server in",
    };
    expand_label(&initial, label, &mut secret);
    let hk = Hkdf::<Sha256>::from_prk(&secret).expect("prk length");
    let mut keys = InitialKeys {
        key: [0; 16],
        iv: [0; 12],
        hp: [0; 16],
    };
    expand_label(&hk, "quic key", &mut keys.key);
    expand_label(&hk, "quic iv", &mut keys.iv);
    expand_label(&hk, "quic hp", &mut keys.hp);
    keys
}

/// First five bytes of AES-ECB(hp, sample).
pub fn header_protection_mask(hp: &[u8; 16], sample: &[u8]) -> [u8; 5] {
    let cipher = Aes128::new(GenericArray::from_slice(hp));
    let mut block = GenericArray::clone_from_slice(&sample[..SAMPLE_LEN]);
    cipher.encrypt_block(&mut block);
    let mut mask = [0u8; 5];
    mask.copy_from_slice(&block[..5]);
    mask
}

/// QUIC variable-length integer; returns the value and encoded size.
pub fn read_varint(b: &[u8]) -> Option<(u64, usize)> {
    let first = *b.first()?;
    let len = 1usize << (first >> 6);
    if b.len() < len {
        return None;
    }
    let mut v = (first & 0x3f) as u64;
    for &x in &b[1..len] {
        v = (v << 8) | x as u64;
    }
    Some((v, len))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LongHeader {
    pub version: u32,
    pub dcid: Vec<u8>,
    pub scid: Vec<u8>,
    pub token: Vec<u8>,
    /// Value of the Length field: packet number plus protected payload.
    pub length: usize,
    pub pn_offset: usize,
}

impl LongHeader {
    pub fn packet_end(&self) -> usize {
        self.pn_offset + self.length
    }
}

/// Parses the unprotected part of a v1 Initial header.
pub fn parse_initial_header(pkt: &[u8]) -> Result<LongHeader, QuicError> {
    let first = *pkt.first().ok_or(QuicError::NotLongHeader)?;
    if first & 0x80 == 0 {
        return Err(QuicError::NotLongHeader);
    }
    if pkt.len() < 5 {
        return Err(QuicError::MalformedHeader);
    }
    let version = u32::from_be_bytes([pkt[1], pkt[2], pkt[3], pkt[4]]);
    if version != QUIC_V1 {
        return Err(QuicError::UnsupportedVersion(version));
    }
    if (first >> 4) & 0x03 != 0 {
        return Err(QuicError::NotInitial);
    }
    let mut pos = 5;
    let cid = |pos: &mut usize| -> Result<Vec<u8>, QuicError> {
        let len = *pkt.get(*pos).ok_or(QuicError::MalformedHeader)? as usize;
        if len > MAX_CID_LEN || pkt.len() < *pos + 1 + len {
            return Err(QuicError::MalformedHeader);
        }
        let v = pkt[*pos + 1..*pos + 1 + len].to_vec();
        *pos += 1 + len;
        Ok(v)
    };
    let dcid = cid(&mut pos)?;
    let scid = cid(&mut pos)?;
    let (token_len, n) = read_varint(&pkt[pos..]).ok_or(QuicError::MalformedHeader)?;
    pos += n;
    let token_len = usize::try_from(token_len).map_err(|_| QuicError::MalformedHeader)?;
    if pkt.len() < pos + token_len {
        return Err(QuicError::MalformedHeader);
    }
    let token = pkt[pos..pos + token_len].to_vec();
    pos += token_len;
    let (length, n) = read_varint(&pkt[pos..]).ok_or(QuicError::MalformedHeader)?;
    pos += n;
    let length = usize::try_from(length).map_err(|_| QuicError::MalformedHeader)?;
    if pkt.len() < pos + length || length < 4 + SAMPLE_LEN || length < 1 + TAG_LEN {
        return Err(QuicError::MalformedHeader);
    }
    Ok(LongHeader {
        version,
        dcid,
        scid,
        token,
        length,
        pn_offset: pos,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecryptedInitial {
    pub header: LongHeader,
    pub packet_number: u64,
    /// Unprotected header bytes (the AEAD associated data).
    pub header_bytes: Vec<u8>,
    pub plaintext: Vec<u8>,
    /// Offset of the first ciphertext byte within the packet.
    pub payload_offset: usize,
}

/// Removes header protection and decrypts one Initial packet. Bytes after
/// the Length-delimited packet (coalesced packets) are ignored.
pub fn decrypt_initial(pkt: &[u8], keys: &InitialKeys) -> Result<DecryptedInitial, QuicError> {
    let header = parse_initial_header(pkt)?;
    let pn_offset = header.pn_offset;
    let sample = &pkt[pn_offset + 4..pn_offset + 4 + SAMPLE_LEN];
    let mask = header_protection_mask(&keys.hp, sample);
    let first = pkt[0] ^ (mask[0] & 0x0f);
    let pn_len = (first & 0x03) as usize + 1;
    let mut header_bytes = pkt[..pn_offset + pn_len].to_vec();
    header_bytes[0] = first;
    let mut packet_number = 0u64;
    for i in 0..pn_len {
        header_bytes[pn_offset + i] ^= mask[1 + i];
        packet_number = (packet_number << 8) | header_bytes[pn_offset + i] as u64;
    }
    let mut nonce = keys.iv;
    for (n, p) in nonce[4..].iter_mut().zip(packet_number.to_be_bytes()) {
        *n ^= p;
    }
    let payload_offset = pn_offset + pn_len;
    let ciphertext = &pkt[payload_offset..header.packet_end()];
    let aead = Aes128Gcm::new(GenericArray::from_slice(&keys.key));
    let plaintext = aead
        .decrypt(
            Nonce::from_slice(&nonce),
            Payload {
                msg: ciphertext,
                aad: &header_bytes,
            },
        )
        .map_err(|_| QuicError::AuthenticationFailed)?;
    Ok(DecryptedInitial {
        header,
        packet_number,
        header_bytes,
        plaintext,
        payload_offset,
    })
}

/// Builds a protected Initial packet: the inverse of [`decrypt_initial`].
pub fn protect_initial(
    dcid: &[u8],
    scid: &[u8],
    packet_number: u32,
    plaintext: &[u8],
    keys: &InitialKeys,
) -> Vec<u8> {
    const PN_LEN: usize = 4;
    let mut pkt = vec![0xc0 | (PN_LEN as u8 - 1)];
    pkt.extend_from_slice(&QUIC_V1.to_be_bytes());
    pkt.push(dcid.len() as u8);
    pkt.extend_from_slice(dcid);
    pkt.push(scid.len() as u8);
    pkt.extend_from_slice(scid);
    pkt.push(0); // token length
    let length = PN_LEN + plaintext.len() + TAG_LEN;
    assert!(length < 1 << 14, "Initial payload too long");
    pkt.extend_from_slice(&(0x4000 | length as u16).to_be_bytes());
    let pn_offset = pkt.len();
    pkt.extend_from_slice(&packet_number.to_be_bytes());
    let mut nonce = keys.iv;
    for (n, p) in nonce[4..].iter_mut().zip((packet_number as u64).to_be_bytes()) {
        *n ^= p;
    }
    let aead = Aes128Gcm::new(GenericArray::from_slice(&keys.key));
    let sealed = aead
        .encrypt(
            Nonce::from_slice(&nonce),
            Payload {
                msg: plaintext,
                aad: &pkt,
            },
        )
        .expect("in-memory encryption");
    pkt.extend_from_slice(&sealed);
    let mask = header_protection_mask(&keys.hp, &pkt[pn_offset + 4..pn_offset + 4 + SAMPLE_LEN]);
    pkt[0] ^= mask[0] & 0x0f;
    for i in 0..PN_LEN {
        pkt[pn_offset + i] ^= mask[1 + i];
    }
    pkt
}

/// Plaintext holding one CRYPTO frame at offset 0, padded to `min_len`.
pub fn crypto_frame_plaintext(data: &[u8], min_len: usize) -> Vec<u8> {
    let mut p = vec![0x06, 0x00];
    p.extend_from_slice(&(0x4000 | data.len() as u16).to_be_bytes());
    p.extend_from_slice(data);
    if p.len() < min_len {
        p.resize(min_len, 0);
    }
    p
}

/// Decrypts a client Initial with keys derived from its own DCID.
pub fn decrypt_client_initial(pkt: &[u8]) -> Result<DecryptedInitial, QuicError> {
    let header = parse_initial_header(pkt)?;
    decrypt_initial(pkt, &initial_keys(&header.dcid, Side::Client))
}

/// CRYPTO frame payload located in a decrypted packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CryptoChunk {
    /// Offset in the CRYPTO stream.
    pub stream_offset: u64,
    /// Start of the data in the plaintext.
    pub start: usize,
    pub len: usize,
}

/// Walks the frames allowed in Initial packets, collecting CRYPTO data.
pub fn crypto_chunks(plaintext: &[u8]) -> Result<Vec<CryptoChunk>, QuicError> {
    let mut out = Vec::new();
    let mut pos = 0;
    let varint = |pos: &mut usize| -> Result<u64, QuicError> {
        let (v, n) = read_varint(&plaintext[*pos..]).ok_or(QuicError::MalformedFrame(*pos))?;
        *pos += n;
        Ok(v)
    };
    while pos < plaintext.len() {
        let at = pos;
        let ty = varint(&mut pos)?;
        match ty {
            0x00 | 0x01 => {}
            0x02 | 0x03 => {
                varint(&mut pos)?;
                varint(&mut pos)?;
                let ranges = varint(&mut pos)?;
                varint(&mut pos)?;
                for _ in 0..ranges {
                    varint(&mut pos)?;
                    varint(&mut pos)?;
                }
                if ty == 0x03 {
                    for _ in 0..3 {
                        varint(&mut pos)?;
                    }
                }
            }
            0x06 => {
                let stream_offset = varint(&mut pos)?;
                let len = varint(&mut pos)? as usize;
                if plaintext.len() - pos < len {
                    return Err(QuicError::MalformedFrame(at));
                }
                out.push(CryptoChunk {
                    stream_offset,
                    start: pos,
                    len,
                });
                pos += len;
            }
            0x1c => {
                varint(&mut pos)?;
                varint(&mut pos)?;
                let reason = varint(&mut pos)? as usize;
                if plaintext.len() - pos < reason {
                    return Err(QuicError::MalformedFrame(at));
                }
                pos += reason;
            }
            _ => return Err(QuicError::MalformedFrame(at)),
        }
    }
    Ok(out)
}

/// Joins CRYPTO data from one or more packets in stream-offset order,
/// stopping at the first gap. Each `(plaintext, chunks, origin)` contributes
/// its chunks; `origin(i)` maps plaintext index `i` to the caller's
/// coordinates and is recorded in the returned map.
pub fn reassemble_crypto<F>(parts: &[(&[u8], Vec<CryptoChunk>, F)]) -> (Vec<u8>, OffsetMap)
where
    F: Fn(usize) -> Option<usize>,
{
    let mut pieces: Vec<(usize, CryptoChunk)> = parts
        .iter()
        .enumerate()
        .flat_map(|(p, (_, chunks, _))| chunks.iter().map(move |&c| (p, c)))
        .collect();
    pieces.sort_by_key(|&(p, c)| (c.stream_offset, p));
    let mut data = Vec::new();
    let mut map = OffsetMap::default();
    for (p, c) in pieces {
        let have = data.len() as u64;
        if c.stream_offset > have {
            break;
        }
        let skip = (have - c.stream_offset) as usize;
        if skip >= c.len {
            continue;
        }
        let (plain, _, origin) = &parts[p];
        for i in c.start + skip..c.start + c.len {
            data.push(plain[i]);
            // unmappable bytes land far outside any real stream
            map.push(origin(i).unwrap_or(usize::MAX / 2), 1);
        }
    }
    (data, map)
}
