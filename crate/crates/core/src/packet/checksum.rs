//! Internet checksum (RFC 1071) and the TCP/UDP pseudo-header variants.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChecksumError {
    #[error("IPv4 header length {0} is odd or shorter than 20 bytes")]
    BadLength(usize),
}

/// Ones-complement sum of 16-bit big-endian words, without the final fold.
/// An odd trailing byte is padded with a zero low byte.
pub fn sum_words(data: &[u8], initial: u32) -> u32 {
    let mut acc = initial as u64;
    let mut chunks = data.chunks_exact(2);
    for word in &mut chunks {
        acc += u16::from_be_bytes([word[0], word[1]]) as u64;
    }
    if let [last] = chunks.remainder() {
        acc += (*last as u64) << 8;
    }
    while acc >> 32 != 0 {
        acc = (acc & 0xffff_ffff) + (acc >> 32);
    }
    acc as u32
}

/// Folds a 32-bit accumulator into 16 bits with end-around carry.
pub fn fold(mut acc: u32) -> u16 {
    while acc > 0xffff {
        acc = (acc & 0xffff) + (acc >> 16);
    }
    acc as u16
}

/// Checksum of `data`: the complement of its folded ones-complement sum.
pub fn internet_checksum(data: &[u8]) -> u16 {
    !fold(sum_words(data, 0))
}

/// IPv4 header checksum with the checksum field (bytes 10..12) treated as zero.
pub fn ipv4_header_checksum(header: &[u8]) -> Result<u16, ChecksumError> {
    if header.len() < 20 || header.len() % 2 != 0 {
        return Err(ChecksumError::BadLength(header.len()));
    }
    let acc = sum_words(&header[..10], 0);
    let acc = sum_words(&header[12..], acc);
    Ok(!fold(acc))
}

/// True when the stored IPv4 header checksum matches a recomputation.
pub fn verify_ipv4_header(header: &[u8]) -> bool {
    match ipv4_header_checksum(header) {
        Ok(sum) => sum == u16::from_be_bytes([header[10], header[11]]),
        Err(_) => false,
    }
}

/// The network-layer facts a transport checksum depends on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PseudoHeader {
    V4 { src: [u8; 4], dst: [u8; 4], protocol: u8 },
    V6 { src: [u8; 16], dst: [u8; 16], next_header: u8 },
}

impl PseudoHeader {
    pub fn protocol(&self) -> u8 {
        match *self {
            PseudoHeader::V4 { protocol, .. } => protocol,
            PseudoHeader::V6 { next_header, .. } => next_header,
        }
    }

    fn sum(&self, segment_len: usize) -> u32 {
        match self {
            PseudoHeader::V4 { src, dst, protocol } => {
                let acc = sum_words(src, 0);
                let acc = sum_words(dst, acc);
                let acc = sum_words(&[0, *protocol], acc);
                sum_words(&(segment_len as u16).to_be_bytes(), acc)
            }
            PseudoHeader::V6 { src, dst, next_header } => {
                let acc = sum_words(src, 0);
                let acc = sum_words(dst, acc);
                let acc = sum_words(&(segment_len as u32).to_be_bytes(), acc);
                sum_words(&[0, 0, 0, *next_header], acc)
            }
        }
    }
}

/// TCP/UDP checksum over the pseudo-header and `segment`. The segment's own
/// checksum bytes must already be zero. A UDP result of zero is returned as
/// 0xffff, since zero on the wire means "no checksum".
pub fn transport_checksum(pseudo: &PseudoHeader, segment: &[u8]) -> u16 {
    let acc = sum_words(segment, pseudo.sum(segment.len()));
    let sum = !fold(acc);
    if sum == 0 && pseudo.protocol() == 17 {
        0xffff
    } else {
        sum
    }
}

/// Verifies a segment whose checksum field is filled in.
pub fn verify_transport(pseudo: &PseudoHeader, segment: &[u8]) -> bool {
    fold(sum_words(segment, pseudo.sum(segment.len()))) == 0xffff
}
