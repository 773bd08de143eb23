//! Bidirectional session grouping and selection of the packets that carry
//! encrypted application data.

use std::collections::HashMap;
use std::net::Ipv4Addr;

use crate::capture::PacketRecord;

/// TLS ContentType for application_data records.
pub const TLS_APPLICATION_DATA: u8 = 0x17;
/// Upper bound on a TLSCiphertext length field (2^14 + 256).
pub const TLS_MAX_CIPHERTEXT_LEN: u16 = 16_640;
pub const PACKETS_PER_ROW: usize = 5;

pub type Endpoint = (Ipv4Addr, u16);

/// Direction-independent connection key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub endpoint_lo: Endpoint,
    pub endpoint_hi: Endpoint,
    pub protocol: u8,
}

impl FlowKey {
    pub fn new(a: Endpoint, b: Endpoint, protocol: u8) -> Self {
        let (endpoint_lo, endpoint_hi) = if a <= b { (a, b) } else { (b, a) };
        FlowKey { endpoint_lo, endpoint_hi, protocol }
    }

    pub fn of(packet: &PacketRecord) -> Self {
        FlowKey::new((packet.src_ip, packet.src_port), (packet.dst_ip, packet.dst_port), packet.protocol)
    }

    pub fn canonical(self) -> Self {
        FlowKey::new(self.endpoint_lo, self.endpoint_hi, self.protocol)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub key: FlowKey,
    pub packets: Vec<PacketRecord>,
    pub label: Option<String>,
}

/// Groups packets by canonical flow key. Sessions come out ordered by their
/// first packet's timestamp, packets within a session by timestamp with
/// ties kept in input order.
pub fn sessionize(packets: impl IntoIterator<Item = PacketRecord>) -> Vec<Session> {
    let mut index: HashMap<FlowKey, usize> = HashMap::new();
    let mut sessions: Vec<Session> = Vec::new();
    for p in packets {
        let key = FlowKey::of(&p);
        let slot = *index.entry(key).or_insert_with(|| {
            sessions.push(Session { key, packets: Vec::new(), label: None });
            sessions.len() - 1
        });
        sessions[slot].packets.push(p);
    }
    for s in &mut sessions {
        s.packets.sort_by_key(|p| p.ts_us);
    }
    // stable: equal first timestamps keep first-appearance order
    sessions.sort_by_key(|s| s.packets[0].ts_us);
    sessions
}

/// True iff the segment payload starts a TLS 1.2-framed application_data
/// record. Only the 5-byte record header is examined.
pub fn is_encrypted_payload(packet: &PacketRecord) -> bool {
    match packet.payload.get(..5) {
        Some(&[ct, 0x03, 0x03, hi, lo]) => {
            let len = u16::from_be_bytes([hi, lo]);
            ct == TLS_APPLICATION_DATA && (1..=TLS_MAX_CIPHERTEXT_LEN).contains(&len)
        }
        _ => false,
    }
}

/// Exactly five encrypted-payload packets, in arrival order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectedPackets<'a>([&'a PacketRecord; PACKETS_PER_ROW]);

impl<'a> SelectedPackets<'a> {
    pub fn packets(&self) -> &[&'a PacketRecord; PACKETS_PER_ROW] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Insufficient {
    pub found: usize,
}

/// Picks the first five encrypted-payload packets, skipping anything else
/// in between.
pub fn select_netmatrix_packets(session: &Session) -> Result<SelectedPackets<'_>, Insufficient> {
    let mut picked: [Option<&PacketRecord>; PACKETS_PER_ROW] = [None; PACKETS_PER_ROW];
    let mut n = 0;
    for p in session.packets.iter().filter(|p| is_encrypted_payload(p)) {
        picked[n] = Some(p);
        n += 1;
        if n == PACKETS_PER_ROW {
            return Ok(SelectedPackets(picked.map(|p| p.expect("filled"))));
        }
    }
    Err(Insufficient { found: n })
}

/// Positions (within `session.packets`) of the selected packets.
pub fn selected_indices(session: &Session) -> Option<[usize; PACKETS_PER_ROW]> {
    let mut out = [0; PACKETS_PER_ROW];
    let mut n = 0;
    for (i, p) in session.packets.iter().enumerate() {
        if is_encrypted_payload(p) {
            out[n] = i;
            n += 1;
            if n == PACKETS_PER_ROW {
                return Some(out);
            }
        }
    }
    None
}
