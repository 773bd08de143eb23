//! The 30-byte session row: for each of five selected packets, IP Total
//! Length (2 bytes), TTL (1 byte) and inter-arrival time (3 bytes), all
//! big-endian.

use thiserror::Error;

use crate::sessionizer::{SelectedPackets, PACKETS_PER_ROW};

pub const ROW_BYTES: usize = 30;
pub const BYTES_PER_PACKET: usize = 6;
pub const NUM_FEATURES: usize = PACKETS_PER_ROW * 3;
/// Largest inter-arrival time representable in 3 bytes, in microseconds.
pub const IAT_MAX_US: u32 = 0x00ff_ffff;

const _: () = assert!(PACKETS_PER_ROW * BYTES_PER_PACKET == ROW_BYTES);

#[derive(Debug, Error, PartialEq)]
pub enum RowError {
    #[error("a serialized row is {ROW_BYTES} bytes, got {0}")]
    WrongLength(usize),
    #[error("feature {index} = {value} is outside its field range")]
    OutOfRange { index: usize, value: f64 },
}

/// Microsecond gap, saturating at 2^24 - 1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InterArrival(u32);

impl InterArrival {
    pub const MAX: InterArrival = InterArrival(IAT_MAX_US);

    pub fn saturating(us: u64) -> Self {
        InterArrival(us.min(u64::from(IAT_MAX_US)) as u32)
    }

    pub fn new(us: u32) -> Option<Self> {
        (us <= IAT_MAX_US).then_some(InterArrival(us))
    }

    pub fn micros(self) -> u32 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct PacketFeatures {
    pub total_length: u16,
    pub ttl: u8,
    pub iat: InterArrival,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct NetMatrixRow {
    pub packets: [PacketFeatures; PACKETS_PER_ROW],
}

/// Packet-major `[len_1, ttl_1, iat_1, ..., len_5, ttl_5, iat_5]`.
pub type FeatureVector = [f64; NUM_FEATURES];

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "len1", "ttl1", "iat1", "len2", "ttl2", "iat2", "len3", "ttl3", "iat3", "len4", "ttl4", "iat4", "len5", "ttl5",
    "iat5",
];

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: FeatureVector,
    pub label: String,
}

/// Inter-arrival times are measured between consecutive selected packets;
/// the first one is zero.
pub fn build_row(selected: &SelectedPackets<'_>) -> NetMatrixRow {
    let pkts = selected.packets();
    let mut row = NetMatrixRow::default();
    for (i, p) in pkts.iter().enumerate() {
        let iat = if i == 0 { 0 } else { p.ts_us.saturating_sub(pkts[i - 1].ts_us) };
        row.packets[i] = PacketFeatures { total_length: p.ip_total_length, ttl: p.ttl, iat: InterArrival::saturating(iat) };
    }
    row
}

pub fn serialize_row(row: &NetMatrixRow) -> [u8; ROW_BYTES] {
    let mut out = [0u8; ROW_BYTES];
    for (chunk, p) in out.chunks_exact_mut(BYTES_PER_PACKET).zip(&row.packets) {
        chunk[..2].copy_from_slice(&p.total_length.to_be_bytes());
        chunk[2] = p.ttl;
        chunk[3..].copy_from_slice(&p.iat.0.to_be_bytes()[1..]);
    }
    out
}

pub fn deserialize_row(bytes: &[u8]) -> Result<NetMatrixRow, RowError> {
    if bytes.len() != ROW_BYTES {
        return Err(RowError::WrongLength(bytes.len()));
    }
    let mut row = NetMatrixRow::default();
    for (chunk, p) in bytes.chunks_exact(BYTES_PER_PACKET).zip(&mut row.packets) {
        p.total_length = u16::from_be_bytes([chunk[0], chunk[1]]);
        p.ttl = chunk[2];
        p.iat = InterArrival(u32::from_be_bytes([0, chunk[3], chunk[4], chunk[5]]));
    }
    Ok(row)
}

pub fn to_features(row: &NetMatrixRow) -> FeatureVector {
    let mut v = [0.0; NUM_FEATURES];
    for (i, p) in row.packets.iter().enumerate() {
        v[3 * i] = f64::from(p.total_length);
        v[3 * i + 1] = f64::from(p.ttl);
        v[3 * i + 2] = f64::from(p.iat.0);
    }
    v
}

pub fn from_features(v: &FeatureVector) -> Result<NetMatrixRow, RowError> {
    let field = |index: usize, max: u32| -> Result<u32, RowError> {
        let value = v[index];
        if value.fract() != 0.0 || !(0.0..=f64::from(max)).contains(&value) {
            return Err(RowError::OutOfRange { index, value });
        }
        Ok(value as u32)
    };
    let mut row = NetMatrixRow::default();
    for (i, p) in row.packets.iter_mut().enumerate() {
        p.total_length = field(3 * i, u32::from(u16::MAX))? as u16;
        p.ttl = field(3 * i + 1, u32::from(u8::MAX))? as u8;
        p.iat = InterArrival(field(3 * i + 2, IAT_MAX_US)?);
    }
    Ok(row)
}
