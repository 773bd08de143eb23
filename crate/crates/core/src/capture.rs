//! Classic libpcap reading and writing, restricted to Ethernet/IPv4/TCP.
//!
//! A capture file is a 24-byte global header followed by records, each a
//! 16-byte record header plus the captured frame bytes. Frames that are not
//! IPv4/TCP, or whose headers are inconsistent, are counted and skipped;
//! only a broken global header is fatal.

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::path::Path;

use thiserror::Error;

pub const GLOBAL_HEADER_LEN: usize = 24;
pub const RECORD_HEADER_LEN: usize = 16;
pub const LINKTYPE_ETHERNET: u32 = 1;

const MAGIC_USEC: u32 = 0xa1b2_c3d4;
const MAGIC_NSEC: u32 = 0xa1b2_3c4d;
const MAGIC_PCAPNG: u32 = 0x0a0d_0d0a;

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_VLAN: u16 = 0x8100;
const ETH_HEADER_LEN: usize = 14;
const VLAN_TAG_LEN: usize = 4;
const IPPROTO_TCP: u8 = 6;

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("capture file not found: {0}")]
    FileNotFound(String),
    #[error("i/o error reading capture: {0}")]
    Io(#[from] std::io::Error),
    #[error("file is shorter than the 24-byte pcap global header ({0} bytes)")]
    TruncatedHeader(usize),
    #[error("unrecognized pcap magic number {magic:#010x}{}", if *.magic == MAGIC_PCAPNG { " (pcapng is not supported; convert to classic pcap)" } else { "" })]
    BadMagic { magic: u32 },
    #[error("unsupported link type {0} (only Ethernet, link type 1, is accepted)")]
    UnsupportedLinkType(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Big,
    Little,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimestampUnit {
    Microsecond,
    Nanosecond,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PcapHeader {
    pub byte_order: ByteOrder,
    pub timestamp_unit: TimestampUnit,
    pub link_type: u32,
    pub snaplen: u32,
}

impl PcapHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self, CaptureError> {
        if bytes.len() < GLOBAL_HEADER_LEN {
            return Err(CaptureError::TruncatedHeader(bytes.len()));
        }
        let raw = [bytes[0], bytes[1], bytes[2], bytes[3]];
        let (byte_order, timestamp_unit) = match (u32::from_be_bytes(raw), u32::from_le_bytes(raw)) {
            (MAGIC_USEC, _) => (ByteOrder::Big, TimestampUnit::Microsecond),
            (MAGIC_NSEC, _) => (ByteOrder::Big, TimestampUnit::Nanosecond),
            (_, MAGIC_USEC) => (ByteOrder::Little, TimestampUnit::Microsecond),
            (_, MAGIC_NSEC) => (ByteOrder::Little, TimestampUnit::Nanosecond),
            (be, _) => return Err(CaptureError::BadMagic { magic: be }),
        };
        let snaplen = read_u32(&bytes[16..20], byte_order);
        let link_type = read_u32(&bytes[20..24], byte_order);
        if link_type != LINKTYPE_ETHERNET {
            return Err(CaptureError::UnsupportedLinkType(link_type));
        }
        Ok(PcapHeader { byte_order, timestamp_unit, link_type, snaplen })
    }
}

fn read_u32(b: &[u8], order: ByteOrder) -> u32 {
    let raw = [b[0], b[1], b[2], b[3]];
    match order {
        ByteOrder::Big => u32::from_be_bytes(raw),
        ByteOrder::Little => u32::from_le_bytes(raw),
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32, order: ByteOrder) {
    match order {
        ByteOrder::Big => out.extend_from_slice(&v.to_be_bytes()),
        ByteOrder::Little => out.extend_from_slice(&v.to_le_bytes()),
    }
}

fn put_u16(out: &mut Vec<u8>, v: u16, order: ByteOrder) {
    match order {
        ByteOrder::Big => out.extend_from_slice(&v.to_be_bytes()),
        ByteOrder::Little => out.extend_from_slice(&v.to_le_bytes()),
    }
}

/// One decoded IPv4/TCP packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketRecord {
    pub ts_us: u64,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
    pub ip_total_length: u16,
    pub ttl: u8,
    pub tcp_flags: u8,
    pub payload: Vec<u8>,
}

/// Why a frame was not turned into a [`PacketRecord`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SkipReason {
    NotIpv4,
    NestedVlan,
    NotTcp,
    Fragment,
    Truncated,
    Malformed,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SkipReason::NotIpv4 => "not_ipv4",
            SkipReason::NestedVlan => "nested_vlan",
            SkipReason::NotTcp => "not_tcp",
            SkipReason::Fragment => "fragment",
            SkipReason::Truncated => "truncated",
            SkipReason::Malformed => "malformed",
        };
        f.write_str(s)
    }
}

/// Result of parsing one capture: decoded packets in file order plus skip counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Capture {
    pub records: Vec<PacketRecord>,
    pub skipped: BTreeMap<SkipReason, u64>,
}

impl Capture {
    pub fn skipped_total(&self) -> u64 {
        self.skipped.values().sum()
    }

    pub fn frames_seen(&self) -> u64 {
        self.records.len() as u64 + self.skipped_total()
    }
}

pub fn read_capture(path: impl AsRef<Path>) -> Result<Capture, CaptureError> {
    let path = path.as_ref();
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CaptureError::FileNotFound(path.display().to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    parse_capture(&bytes)
}

/// Parses an in-memory capture. Never panics on arbitrary input.
pub fn parse_capture(bytes: &[u8]) -> Result<Capture, CaptureError> {
    let header = PcapHeader::parse(bytes)?;
    let mut capture = Capture::default();
    let mut rest = &bytes[GLOBAL_HEADER_LEN..];
    while !rest.is_empty() {
        if rest.len() < RECORD_HEADER_LEN {
            *capture.skipped.entry(SkipReason::Truncated).or_default() += 1;
            break;
        }
        let ts_sec = read_u32(&rest[0..4], header.byte_order) as u64;
        let ts_sub = read_u32(&rest[4..8], header.byte_order) as u64;
        let incl_len = read_u32(&rest[8..12], header.byte_order) as usize;
        let body = &rest[RECORD_HEADER_LEN..];
        if incl_len > body.len() {
            *capture.skipped.entry(SkipReason::Truncated).or_default() += 1;
            break;
        }
        let sub_us = match header.timestamp_unit {
            TimestampUnit::Microsecond => ts_sub,
            TimestampUnit::Nanosecond => ts_sub / 1000,
        };
        let ts_us = ts_sec.saturating_mul(1_000_000).saturating_add(sub_us);
        match decode_ethernet_ipv4_tcp(&body[..incl_len], ts_us) {
            Ok(rec) => capture.records.push(rec),
            Err(reason) => *capture.skipped.entry(reason).or_default() += 1,
        }
        rest = &body[incl_len..];
    }
    Ok(capture)
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

/// Decodes one Ethernet frame. Total Length and TTL are taken verbatim from
/// the IPv4 header; the payload is bounded by Total Length so Ethernet
/// trailer padding is ignored.
pub fn decode_ethernet_ipv4_tcp(frame: &[u8], ts_us: u64) -> Result<PacketRecord, SkipReason> {
    if frame.len() < ETH_HEADER_LEN {
        return Err(SkipReason::Truncated);
    }
    let mut ethertype = be16(frame, 12);
    let mut l3 = ETH_HEADER_LEN;
    if ethertype == ETHERTYPE_VLAN {
        if frame.len() < ETH_HEADER_LEN + VLAN_TAG_LEN {
            return Err(SkipReason::Truncated);
        }
        ethertype = be16(frame, 16);
        l3 += VLAN_TAG_LEN;
        if ethertype == ETHERTYPE_VLAN || ethertype == 0x88a8 {
            return Err(SkipReason::NestedVlan);
        }
    }
    if ethertype != ETHERTYPE_IPV4 {
        return Err(SkipReason::NotIpv4);
    }
    let ip = &frame[l3..];
    if ip.len() < 20 {
        return Err(SkipReason::Truncated);
    }
    if ip[0] >> 4 != 4 {
        return Err(SkipReason::NotIpv4);
    }
    let ihl = usize::from(ip[0] & 0x0f) * 4;
    if ihl < 20 {
        return Err(SkipReason::Malformed);
    }
    let total_length = be16(ip, 2);
    let total = usize::from(total_length);
    if total < ihl {
        return Err(SkipReason::Malformed);
    }
    if total > ip.len() {
        return Err(SkipReason::Truncated);
    }
    let protocol = ip[9];
    if protocol != IPPROTO_TCP {
        return Err(SkipReason::NotTcp);
    }
    let frag = be16(ip, 6);
    // MF flag or nonzero offset
    if frag & 0x3fff != 0 {
        return Err(SkipReason::Fragment);
    }
    let ttl = ip[8];
    let src_ip = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst_ip = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);

    let tcp = &ip[ihl..total];
    if tcp.len() < 20 {
        return Err(SkipReason::Malformed);
    }
    let data_offset = usize::from(tcp[12] >> 4) * 4;
    if data_offset < 20 || data_offset > tcp.len() {
        return Err(SkipReason::Malformed);
    }
    Ok(PacketRecord {
        ts_us,
        src_ip,
        dst_ip,
        src_port: be16(tcp, 0),
        dst_port: be16(tcp, 2),
        protocol,
        ip_total_length: total_length,
        ttl,
        tcp_flags: tcp[13],
        payload: tcp[data_offset..].to_vec(),
    })
}

/// Header fields that a [`PacketRecord`] does not carry. They only matter
/// when producing frames; the decoder ignores all of them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FrameExtras {
    pub ip_id: u16,
    pub seq: u32,
    pub ack: u32,
    pub window: u16,
    /// TSval/TSecr, written into a timestamp option when the record leaves
    /// room for one in its TCP header.
    pub tcp_timestamps: (u32, u32),
    /// Replaces the computed IPv4 header checksum.
    pub ip_checksum: Option<u16>,
    pub tcp_checksum: u16,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("ip_total_length {total} cannot hold a 20-byte IP header, a TCP header and {payload} payload bytes")]
    LengthMismatch { total: u16, payload: usize },
    #[error("implied TCP header length {0} is not a multiple of 4 in 20..=60")]
    BadTcpHeaderLength(usize),
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = header.chunks(2).map(|c| u32::from(u16::from_be_bytes([c[0], c[1]]))).sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Builds an Ethernet/IPv4/TCP frame for `record`. The TCP header length is
/// implied by `ip_total_length - 20 - payload.len()`; option space is filled
/// with a timestamp option when it fits and NOPs otherwise.
pub fn encode_frame(record: &PacketRecord, extras: &FrameExtras) -> Result<Vec<u8>, EncodeError> {
    let total = usize::from(record.ip_total_length);
    let tcp_len = total
        .checked_sub(20 + record.payload.len())
        .ok_or(EncodeError::LengthMismatch { total: record.ip_total_length, payload: record.payload.len() })?;
    if !(20..=60).contains(&tcp_len) || tcp_len % 4 != 0 {
        return Err(EncodeError::BadTcpHeaderLength(tcp_len));
    }

    let mut f = Vec::with_capacity(ETH_HEADER_LEN + total);
    f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02]);
    f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01]);
    f.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());

    let ip_start = f.len();
    f.push(0x45);
    f.push(0);
    f.extend_from_slice(&record.ip_total_length.to_be_bytes());
    f.extend_from_slice(&extras.ip_id.to_be_bytes());
    f.extend_from_slice(&0x4000u16.to_be_bytes()); // DF
    f.push(record.ttl);
    f.push(record.protocol);
    f.extend_from_slice(&[0, 0]);
    f.extend_from_slice(&record.src_ip.octets());
    f.extend_from_slice(&record.dst_ip.octets());
    let csum = extras.ip_checksum.unwrap_or_else(|| ipv4_checksum(&f[ip_start..ip_start + 20]));
    f[ip_start + 10..ip_start + 12].copy_from_slice(&csum.to_be_bytes());

    f.extend_from_slice(&record.src_port.to_be_bytes());
    f.extend_from_slice(&record.dst_port.to_be_bytes());
    f.extend_from_slice(&extras.seq.to_be_bytes());
    f.extend_from_slice(&extras.ack.to_be_bytes());
    f.push(((tcp_len / 4) as u8) << 4);
    f.push(record.tcp_flags);
    f.extend_from_slice(&extras.window.to_be_bytes());
    f.extend_from_slice(&extras.tcp_checksum.to_be_bytes());
    f.extend_from_slice(&[0, 0]);
    let mut options = tcp_len - 20;
    if options >= 12 {
        f.extend_from_slice(&[1, 1, 8, 10]);
        f.extend_from_slice(&extras.tcp_timestamps.0.to_be_bytes());
        f.extend_from_slice(&extras.tcp_timestamps.1.to_be_bytes());
        options -= 12;
    }
    f.extend(std::iter::repeat_n(1u8, options));
    f.extend_from_slice(&record.payload);
    Ok(f)
}

/// Serializes frames into a classic pcap byte stream.
#[derive(Debug, Clone)]
pub struct PcapWriter {
    byte_order: ByteOrder,
    timestamp_unit: TimestampUnit,
    buf: Vec<u8>,
}

impl PcapWriter {
    pub fn new(byte_order: ByteOrder, timestamp_unit: TimestampUnit) -> Self {
        let mut buf = Vec::new();
        let magic = match timestamp_unit {
            TimestampUnit::Microsecond => MAGIC_USEC,
            TimestampUnit::Nanosecond => MAGIC_NSEC,
        };
        put_u32(&mut buf, magic, byte_order);
        put_u16(&mut buf, 2, byte_order);
        put_u16(&mut buf, 4, byte_order);
        put_u32(&mut buf, 0, byte_order);
        put_u32(&mut buf, 0, byte_order);
        put_u32(&mut buf, 65535, byte_order);
        put_u32(&mut buf, LINKTYPE_ETHERNET, byte_order);
        PcapWriter { byte_order, timestamp_unit, buf }
    }

    /// Appends a frame. `sub_us_ns` adds sub-microsecond nanoseconds in
    /// nanosecond captures and is ignored otherwise.
    pub fn push_frame(&mut self, ts_us: u64, sub_us_ns: u32, frame: &[u8]) {
        let sec = (ts_us / 1_000_000) as u32;
        let us = (ts_us % 1_000_000) as u32;
        let sub = match self.timestamp_unit {
            TimestampUnit::Microsecond => us,
            TimestampUnit::Nanosecond => us * 1000 + sub_us_ns.min(999),
        };
        let order = self.byte_order;
        put_u32(&mut self.buf, sec, order);
        put_u32(&mut self.buf, sub, order);
        put_u32(&mut self.buf, frame.len() as u32, order);
        put_u32(&mut self.buf, frame.len() as u32, order);
        self.buf.extend_from_slice(frame);
    }

    pub fn push_record(&mut self, record: &PacketRecord, extras: &FrameExtras) -> Result<(), EncodeError> {
        let frame = encode_frame(record, extras)?;
        self.push_frame(record.ts_us, 0, &frame);
        Ok(())
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

/// Convenience: a little-endian microsecond capture of `records`.
pub fn write_capture(records: &[PacketRecord]) -> Result<Vec<u8>, EncodeError> {
    let mut w = PcapWriter::new(ByteOrder::Little, TimestampUnit::Microsecond);
    for r in records {
        w.push_record(r, &FrameExtras::default())?;
    }
    Ok(w.into_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    // Frames below are typed out byte-by-byte from the Ethernet II, IPv4
    // and TCP header layouts rather than produced by `encode_frame`.
    fn hand_frame_tcp_1500() -> Vec<u8> {
        let mut f = vec![
            0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 0x08, 0x00, // ethernet
            0x45, 0x00, 0x05, 0xdc, // v4 ihl5, tos, total length 1500
            0x12, 0x34, 0x40, 0x00, // id, DF
            64, 6, 0xbe, 0xef, // ttl, tcp, checksum (not validated)
            192, 168, 1, 10, // src
            10, 0, 0, 2, // dst
            0x01, 0xbb, 0xc7, 0x38, // 443 -> 51000
            0, 0, 0, 1, 0, 0, 0, 2, // seq, ack
            0x50, 0x18, 0xff, 0xff, 0, 0, 0, 0, // doff 5, PSH|ACK
        ];
        f.extend(std::iter::repeat_n(0xaa, 1500 - 40));
        f
    }

    fn pcap_le(frames: &[&[u8]]) -> Vec<u8> {
        let mut b = vec![0xd4, 0xc3, 0xb2, 0xa1, 2, 0, 4, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0xff, 0xff, 0, 0, 1, 0, 0, 0];
        for (i, fr) in frames.iter().enumerate() {
            b.extend_from_slice(&(i as u32).to_le_bytes());
            b.extend_from_slice(&7u32.to_le_bytes());
            b.extend_from_slice(&(fr.len() as u32).to_le_bytes());
            b.extend_from_slice(&(fr.len() as u32).to_le_bytes());
            b.extend_from_slice(fr);
        }
        b
    }

    #[test]
    fn empty_capture_has_no_records() {
        let cap = parse_capture(&pcap_le(&[])).unwrap();
        assert!(cap.records.is_empty());
        assert_eq!(cap.skipped_total(), 0);
    }

    #[test]
    fn hand_crafted_tcp_packet() {
        let frame = hand_frame_tcp_1500();
        let cap = parse_capture(&pcap_le(&[&frame])).unwrap();
        assert_eq!(cap.records.len(), 1);
        let r = &cap.records[0];
        assert_eq!(r.ip_total_length, 1500);
        assert_eq!(r.ttl, 64);
        assert_eq!((r.src_port, r.dst_port), (443, 51000));
        assert_eq!(r.src_ip, Ipv4Addr::new(192, 168, 1, 10));
        assert_eq!(r.tcp_flags, 0x18);
        assert_eq!(r.payload.len(), 1460);
        assert_eq!(r.ts_us, 7);
    }

    #[test]
    fn udp_is_skipped() {
        let tcp = hand_frame_tcp_1500();
        let mut udp = hand_frame_tcp_1500();
        udp[14 + 9] = 17;
        let cap = parse_capture(&pcap_le(&[&udp, &tcp])).unwrap();
        assert_eq!(cap.records.len(), 1);
        assert_eq!(cap.skipped.get(&SkipReason::NotTcp), Some(&1));
        assert_eq!(cap.skipped_total(), 1);
    }

    #[test]
    fn ipv6_ethertype_is_not_ipv4() {
        let mut f = hand_frame_tcp_1500();
        f[12] = 0x86;
        f[13] = 0xdd;
        assert_eq!(decode_ethernet_ipv4_tcp(&f, 0), Err(SkipReason::NotIpv4));
    }

    #[test]
    fn minimal_syn_has_empty_payload() {
        let f = vec![
            0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 0x08, 0x00, //
            0x45, 0, 0, 40, 0, 0, 0x40, 0, 128, 6, 0, 0, 10, 0, 0, 1, 10, 0, 0, 2, //
            0xc7, 0x38, 0x01, 0xbb, 0, 0, 0, 0, 0, 0, 0, 0, 0x50, 0x02, 0x72, 0x10, 0, 0, 0, 0,
        ];
        let r = decode_ethernet_ipv4_tcp(&f, 5).unwrap();
        assert!(r.payload.is_empty());
        assert_eq!(r.tcp_flags, 0x02);
        assert_eq!(r.ip_total_length, 40);
        assert_eq!(r.ttl, 128);
    }

    #[test]
    fn total_length_beyond_frame_is_truncated() {
        let mut f = hand_frame_tcp_1500();
        f.truncate(100);
        f[16] = (4000u16 >> 8) as u8;
        f[17] = (4000u16 & 0xff) as u8;
        assert_eq!(decode_ethernet_ipv4_tcp(&f, 0), Err(SkipReason::Truncated));
    }

    #[test]
    fn ethernet_padding_is_not_payload() {
        let mut f = vec![
            0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 0x08, 0x00, //
            0x45, 0, 0, 40, 0, 0, 0x40, 0, 64, 6, 0, 0, 10, 0, 0, 1, 10, 0, 0, 2, //
            0xc7, 0x38, 0x01, 0xbb, 0, 0, 0, 0, 0, 0, 0, 0, 0x50, 0x10, 0x72, 0x10, 0, 0, 0, 0,
        ];
        f.extend_from_slice(&[0; 6]);
        assert!(decode_ethernet_ipv4_tcp(&f, 0).unwrap().payload.is_empty());
    }

    #[test]
    fn single_vlan_unwrapped_nested_skipped() {
        let plain = hand_frame_tcp_1500();
        let mut vlan = plain[..12].to_vec();
        vlan.extend_from_slice(&[0x81, 0x00, 0x00, 0x05]);
        vlan.extend_from_slice(&plain[12..]);
        let r = decode_ethernet_ipv4_tcp(&vlan, 0).unwrap();
        assert_eq!(r.ip_total_length, 1500);

        let mut qinq = plain[..12].to_vec();
        qinq.extend_from_slice(&[0x81, 0x00, 0x00, 0x05, 0x81, 0x00, 0x00, 0x06]);
        qinq.extend_from_slice(&plain[12..]);
        assert_eq!(decode_ethernet_ipv4_tcp(&qinq, 0), Err(SkipReason::NestedVlan));
    }

    #[test]
    fn fragments_are_skipped() {
        let mut f = hand_frame_tcp_1500();
        f[14 + 6] = 0x20; // MF
        assert_eq!(decode_ethernet_ipv4_tcp(&f, 0), Err(SkipReason::Fragment));
    }

    #[test]
    fn bad_data_offset_is_malformed() {
        let mut f = hand_frame_tcp_1500();
        f[14 + 20 + 12] = 0x40;
        assert_eq!(decode_ethernet_ipv4_tcp(&f, 0), Err(SkipReason::Malformed));
    }

    #[test]
    fn header_errors() {
        assert!(matches!(parse_capture(&[0xd4, 0xc3]), Err(CaptureError::TruncatedHeader(2))));
        let mut b = pcap_le(&[]);
        b[0..4].copy_from_slice(&[0x0a, 0x0d, 0x0d, 0x0a]);
        let err = parse_capture(&b).unwrap_err();
        assert!(matches!(err, CaptureError::BadMagic { magic: 0x0a0d0d0a }));
        assert!(err.to_string().contains("pcapng"));
        let mut b = pcap_le(&[]);
        b[20] = 101;
        assert!(matches!(parse_capture(&b), Err(CaptureError::UnsupportedLinkType(101))));
        assert!(matches!(read_capture("/nonexistent/x.pcap"), Err(CaptureError::FileNotFound(_))));
    }

    #[test]
    fn truncated_trailing_record_is_counted() {
        let frame = hand_frame_tcp_1500();
        let mut b = pcap_le(&[&frame, &frame]);
        b.truncate(b.len() - 10);
        let cap = parse_capture(&b).unwrap();
        assert_eq!(cap.records.len(), 1);
        assert_eq!(cap.skipped.get(&SkipReason::Truncated), Some(&1));
    }

    #[test]
    fn encoder_matches_hand_layout() {
        let frame = hand_frame_tcp_1500();
        let rec = decode_ethernet_ipv4_tcp(&frame, 0).unwrap();
        let extras = FrameExtras { ip_id: 0x1234, seq: 1, ack: 2, window: 0xffff, ip_checksum: Some(0xbeef), ..Default::default() };
        let mut built = encode_frame(&rec, &extras).unwrap();
        // MAC addresses differ; everything from the ethertype on is identical.
        assert_eq!(&built[12..], &frame[12..]);
        built[0] = 0;
        let computed = encode_frame(&rec, &FrameExtras::default()).unwrap();
        let ip = &computed[14..34];
        assert_eq!(ipv4_checksum(ip), 0, "checksum over a valid header folds to zero");
    }

    #[test]
    fn nanosecond_timestamps_truncate_to_micros() {
        let frame = hand_frame_tcp_1500();
        let mut w = PcapWriter::new(ByteOrder::Big, TimestampUnit::Nanosecond);
        w.push_frame(3_000_123, 999, &frame);
        let cap = parse_capture(&w.into_bytes()).unwrap();
        assert_eq!(cap.records[0].ts_us, 3_000_123);
    }
}
