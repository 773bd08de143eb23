//! Seeded synthetic TLS-over-TCP captures with class-conditional packet
//! lengths and timing.
//!
//! Every session gets a unique client address, optional handshake records,
//! then application-data records whose IP total lengths and gaps are drawn
//! from truncated Gaussians. Record bodies are random bytes.

use std::net::Ipv4Addr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::{ByteOrder, FrameExtras, PacketRecord, PcapWriter, TimestampUnit};
use crate::dataset::ManifestEntry;
use crate::sessionizer::TLS_APPLICATION_DATA;

pub const MIN_TOTAL_LENGTH: f64 = 60.0;
pub const MAX_TOTAL_LENGTH: f64 = 1500.0;
const IP_HEADER: usize = 20;
/// 20-byte TCP header plus a 12-byte timestamp option block.
const TCP_HEADER: usize = 32;
const SERVER_PORT: u16 = 443;
const CAPTURE_EPOCH_US: u64 = 1_700_000_000_000_000;
const SESSION_SPACING_US: u64 = 20_000;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub name: String,
    pub length_mean: f64,
    pub length_stddev: f64,
    pub ttl: u32,
    pub iat_mean_us: f64,
    pub iat_stddev_us: f64,
    pub packets_per_session: usize,
    #[serde(default)]
    pub handshake_packets: usize,
}

/// JSON document accepted by `lim synth --profiles`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSet {
    pub profiles: Vec<ClassProfile>,
}

impl ClassProfile {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidProfile(format!("{}: {m}", self.name)));
        if self.name.trim().is_empty() {
            return Err(SynthError::InvalidProfile("profile name is empty".into()));
        }
        if !self.length_mean.is_finite() || !(self.length_stddev.is_finite() && self.length_stddev >= 0.0) {
            return bad("length_mean must be finite and length_stddev finite and >= 0".into());
        }
        if !self.iat_mean_us.is_finite() || !(self.iat_stddev_us.is_finite() && self.iat_stddev_us >= 0.0) {
            return bad("iat_mean_us must be finite and iat_stddev_us finite and >= 0".into());
        }
        if self.ttl > 255 {
            return bad(format!("ttl {} does not fit in one byte", self.ttl));
        }
        if self.packets_per_session < 5 {
            return bad(format!("packets_per_session {} is below 5", self.packets_per_session));
        }
        Ok(())
    }
}

/// Knobs beyond the profile set, mainly for invariance testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthOptions {
    pub byte_order: ByteOrder,
    pub timestamp_unit: TimestampUnit,
    /// Overrides the stream used for encrypted record bodies.
    pub body_seed: Option<u64>,
    /// Overrides the stream used for IP-ID, sequence/ack numbers, TCP
    /// timestamps and checksums; when set, IP checksums are random too.
    pub header_seed: Option<u64>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            byte_order: ByteOrder::Little,
            timestamp_unit: TimestampUnit::Microsecond,
            body_seed: None,
            header_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthCapture {
    pub pcap: Vec<u8>,
    pub manifest: Vec<ManifestEntry>,
    /// Packets in capture order, as the decoder will see them.
    pub records: Vec<PacketRecord>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Resamples until the draw lands in `[lo, hi]`; clamps after 64 misses.
fn truncated_normal(rng: &mut impl Rng, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    if sd == 0.0 {
        return mean.clamp(lo, hi);
    }
    let d = Normal::new(mean, sd).expect("validated stddev");
    for _ in 0..64 {
        let v = d.sample(rng);
        if (lo..=hi).contains(&v) {
            return v;
        }
    }
    mean.clamp(lo, hi)
}

struct Packet {
    record: PacketRecord,
    from_client: bool,
}

struct SessionPlan<'a> {
    profile: &'a ClassProfile,
    client: (Ipv4Addr, u16),
    server: (Ipv4Addr, u16),
    start_us: u64,
}

fn tls_payload(content_type: u8, version: [u8; 2], payload_len: usize, body_rng: &mut impl RngCore) -> Vec<u8> {
    let mut p = vec![0u8; payload_len];
    p[0] = content_type;
    p[1..3].copy_from_slice(&version);
    p[3..5].copy_from_slice(&((payload_len - 5) as u16).to_be_bytes());
    body_rng.fill_bytes(&mut p[5..]);
    p
}

fn plan_packets(plan: &SessionPlan<'_>, rng: &mut ChaCha8Rng, body_rng: &mut ChaCha8Rng) -> Vec<Packet> {
    let prof = plan.profile;
    let ttl = prof.ttl as u8;
    let make = |ts: u64, from_client: bool, payload: Vec<u8>, flags: u8| {
        let (src, dst) = if from_client { (plan.client, plan.server) } else { (plan.server, plan.client) };
        Packet {
            record: PacketRecord {
                ts_us: ts,
                src_ip: src.0,
                dst_ip: dst.0,
                src_port: src.1,
                dst_port: dst.1,
                protocol: 6,
                ip_total_length: (IP_HEADER + TCP_HEADER + payload.len()) as u16,
                ttl,
                tcp_flags: flags,
                payload,
            },
            from_client,
        }
    };

    let mut out = Vec::new();
    let mut ts = plan.start_us;
    for i in 0..prof.handshake_packets {
        let len = rng.gen_range(100..=600);
        let version = if i == 0 { [0x03, 0x01] } else { [0x03, 0x03] };
        let payload = tls_payload(0x16, version, len, body_rng);
        out.push(make(ts, i % 2 == 0, payload, 0x18));
        ts += rng.gen_range(500..=2000);
    }

    let gaps: Vec<u64> = (0..prof.packets_per_session)
        .map(|_| truncated_normal(rng, prof.iat_mean_us, prof.iat_stddev_us, 1.0, f64::MAX).round() as u64)
        .collect();
    for (i, gap) in gaps.iter().enumerate() {
        if i > 0 || prof.handshake_packets > 0 {
            ts += gap.max(&1);
        }
        let total = truncated_normal(rng, prof.length_mean, prof.length_stddev, MIN_TOTAL_LENGTH, MAX_TOTAL_LENGTH)
            .round() as usize;
        let from_client = rng.gen_bool(0.5);
        let payload = tls_payload(TLS_APPLICATION_DATA, [0x03, 0x03], total - IP_HEADER - TCP_HEADER, body_rng);
        out.push(make(ts, from_client, payload, 0x18));
        // pure ACK from the peer part-way to the next record
        let next_gap = gaps.get(i + 1).copied().unwrap_or(200);
        if next_gap >= 2 && rng.gen_bool(0.3) {
            out.push(make(ts + next_gap / 2, !from_client, Vec::new(), 0x10));
        }
    }
    out
}

/// Builds a capture with `sessions_per_class` sessions for each profile.
/// Sessions of different classes are interleaved in time.
pub fn generate_capture(
    profiles: &[ClassProfile],
    sessions_per_class: usize,
    seed: u64,
) -> Result<SynthCapture, SynthError> {
    generate_capture_with(profiles, sessions_per_class, seed, &SynthOptions::default())
}

pub fn generate_capture_with(
    profiles: &[ClassProfile],
    sessions_per_class: usize,
    seed: u64,
    options: &SynthOptions,
) -> Result<SynthCapture, SynthError> {
    if profiles.is_empty() {
        return Err(SynthError::InvalidProfile("no profiles given".into()));
    }
    if sessions_per_class == 0 {
        return Err(SynthError::InvalidProfile("sessions_per_class must be at least 1".into()));
    }
    for (i, p) in profiles.iter().enumerate() {
        p.validate()?;
        if profiles[..i].iter().any(|q| q.name == p.name) {
            return Err(SynthError::InvalidProfile(format!("duplicate profile name {:?}", p.name)));
        }
    }
    let total_sessions = profiles.len() * sessions_per_class;
    if total_sessions >= (1 << 24) {
        return Err(SynthError::InvalidProfile("too many sessions for the 10.0.0.0/8 client pool".into()));
    }

    let mut rng = stream(seed, 0);
    let mut body_rng = stream(options.body_seed.unwrap_or(seed), 1);
    let mut header_rng = stream(options.header_seed.unwrap_or(seed), 2);

    let mut packets: Vec<Packet> = Vec::new();
    let mut session_of: Vec<usize> = Vec::new();
    let mut manifest = Vec::with_capacity(total_sessions);
    for idx in 0..total_sessions {
        let profile = &profiles[idx % profiles.len()];
        let client_ip = Ipv4Addr::from(u32::from(Ipv4Addr::new(10, 0, 0, 0)) + idx as u32 + 1);
        let client = (client_ip, rng.gen_range(32768..=60999));
        let server = (Ipv4Addr::new(198, 51, 100, rng.gen_range(1..=254)), SERVER_PORT);
        let start_us = CAPTURE_EPOCH_US + idx as u64 * SESSION_SPACING_US + rng.gen_range(0..SESSION_SPACING_US);
        let plan = SessionPlan { profile, client, server, start_us };
        for p in plan_packets(&plan, &mut rng, &mut body_rng) {
            packets.push(p);
            session_of.push(idx);
        }
        manifest.push(ManifestEntry {
            src_ip: client.0,
            src_port: client.1,
            dst_ip: server.0,
            dst_port: server.1,
            label: profile.name.clone(),
        });
    }

    let mut order: Vec<usize> = (0..packets.len()).collect();
    order.sort_by_key(|&i| packets[i].record.ts_us);

    // per-session, per-direction sequence state
    let mut isn: Vec<[u32; 2]> = (0..total_sessions).map(|_| [header_rng.gen(), header_rng.gen()]).collect();
    let ts_base: u32 = header_rng.gen();
    let randomize_checksums = options.header_seed.is_some();
    let mut writer = PcapWriter::new(options.byte_order, options.timestamp_unit);
    let mut records = Vec::with_capacity(packets.len());
    for i in order {
        let p = &packets[i];
        let s = session_of[i];
        let (tx, rx) = if p.from_client { (0, 1) } else { (1, 0) };
        let extras = FrameExtras {
            ip_id: header_rng.gen(),
            seq: isn[s][tx],
            ack: isn[s][rx],
            window: 502,
            tcp_timestamps: (ts_base.wrapping_add((p.record.ts_us / 1000) as u32), header_rng.gen()),
            ip_checksum: randomize_checksums.then(|| header_rng.gen()),
            tcp_checksum: header_rng.gen(),
        };
        isn[s][tx] = isn[s][tx].wrapping_add(p.record.payload.len() as u32);
        let frame = crate::capture::encode_frame(&p.record, &extras).expect("synth packets are well-formed");
        let sub_ns = header_rng.gen_range(0..1000);
        writer.push_frame(p.record.ts_us, sub_ns, &frame);
        records.push(p.record.clone());
    }

    Ok(SynthCapture { pcap: writer.into_bytes(), manifest, records })
}

/// Ten classes spaced 80 bytes apart in mean length and 2 ms apart in mean
/// inter-arrival time, all sharing one TTL.
pub fn graded_profiles(classes: usize) -> Vec<ClassProfile> {
    (0..classes)
        .map(|c| ClassProfile {
            name: format!("class{c:02}"),
            length_mean: 200.0 + 80.0 * c as f64,
            length_stddev: 40.0,
            ttl: 64,
            iat_mean_us: 3_000.0 + 2_000.0 * c as f64,
            iat_stddev_us: 1_000.0,
            packets_per_session: 8,
            handshake_packets: 2,
        })
        .collect()
}
