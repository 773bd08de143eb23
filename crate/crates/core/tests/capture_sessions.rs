use std::net::Ipv4Addr;

use lim_core::capture::{parse_capture, ByteOrder, CaptureError, PacketRecord, TimestampUnit};
use lim_core::sessionizer::{is_encrypted_payload, select_netmatrix_packets, selected_indices, sessionize, FlowKey};
use lim_core::synth::{generate_capture_with, graded_profiles, SynthOptions};
use proptest::prelude::*;

fn synth_with(order: ByteOrder, unit: TimestampUnit) -> (Vec<u8>, Vec<PacketRecord>) {
    let opts = SynthOptions { byte_order: order, timestamp_unit: unit, ..Default::default() };
    let cap = generate_capture_with(&graded_profiles(3), 5, 11, &opts).unwrap();
    (cap.pcap, cap.records)
}

#[test]
fn synth_records_survive_pcap_round_trip() {
    for order in [ByteOrder::Little, ByteOrder::Big] {
        for unit in [TimestampUnit::Microsecond, TimestampUnit::Nanosecond] {
            let (pcap, records) = synth_with(order, unit);
            let parsed = parse_capture(&pcap).unwrap();
            assert_eq!(parsed.skipped_total(), 0);
            assert_eq!(parsed.records, records, "{order:?} {unit:?}");
        }
    }
}

#[test]
fn byte_order_does_not_change_records() {
    let (le, _) = synth_with(ByteOrder::Little, TimestampUnit::Microsecond);
    let (be, _) = synth_with(ByteOrder::Big, TimestampUnit::Microsecond);
    assert_ne!(le, be);
    assert_eq!(parse_capture(&le).unwrap().records, parse_capture(&be).unwrap().records);
}

fn check_no_panic(bytes: &[u8]) {
    match parse_capture(bytes) {
        Ok(cap) => {
            for r in &cap.records {
                assert!(usize::from(r.ip_total_length) >= 40 + r.payload.len());
            }
        }
        Err(
            CaptureError::TruncatedHeader(_)
            | CaptureError::BadMagic { .. }
            | CaptureError::UnsupportedLinkType(_),
        ) => {}
        Err(e) => panic!("unexpected error kind on in-memory input: {e}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
        check_no_panic(&bytes);
    }

    #[test]
    fn mutated_captures_never_panic(flips in proptest::collection::vec((any::<usize>(), any::<u8>()), 1..16), cut in any::<usize>()) {
        let (mut pcap, _) = synth_with(ByteOrder::Little, TimestampUnit::Microsecond);
        let n = pcap.len();
        for (pos, val) in flips {
            // keep the global header mostly intact so records get exercised
            pcap[24 + pos % (n - 24)] = val;
        }
        pcap.truncate(24 + cut % (n - 23));
        check_no_panic(&pcap);
    }
}

fn arb_packet() -> impl Strategy<Value = PacketRecord> {
    (0u64..1000, 0u8..3, 0u8..3, 0u16..3, 0u16..3, proptest::collection::vec(any::<u8>(), 0..8)).prop_map(
        |(ts, a, b, pa, pb, payload)| PacketRecord {
            ts_us: ts,
            src_ip: Ipv4Addr::new(10, 0, 0, a),
            dst_ip: Ipv4Addr::new(10, 0, 0, b),
            src_port: 443 + pa,
            dst_port: 443 + pb,
            protocol: 6,
            ip_total_length: 40 + payload.len() as u16,
            ttl: 64,
            tcp_flags: 0x10,
            payload,
        },
    )
}

fn app(ts: u64, len: u16) -> PacketRecord {
    let mut payload = vec![0x17, 0x03, 0x03];
    payload.extend_from_slice(&len.to_be_bytes());
    payload.extend(std::iter::repeat_n(0xee, len as usize));
    PacketRecord {
        ts_us: ts,
        src_ip: Ipv4Addr::new(192, 0, 2, 1),
        dst_ip: Ipv4Addr::new(192, 0, 2, 2),
        src_port: 443,
        dst_port: 50000,
        protocol: 6,
        ip_total_length: 40 + 5 + len,
        ttl: 50,
        tcp_flags: 0x18,
        payload,
    }
}

fn ack(ts: u64) -> PacketRecord {
    PacketRecord { payload: vec![], ip_total_length: 40, tcp_flags: 0x10, ..app(ts, 1) }
}

proptest! {
    #[test]
    fn sessions_partition_packets(pkts in proptest::collection::vec(arb_packet(), 0..60)) {
        let sessions = sessionize(pkts.clone());
        prop_assert_eq!(sessions.iter().map(|s| s.packets.len()).sum::<usize>(), pkts.len());
        for s in &sessions {
            prop_assert!(s.packets.windows(2).all(|w| w[0].ts_us <= w[1].ts_us));
            prop_assert!(s.packets.iter().all(|p| FlowKey::of(p) == s.key));
        }
        let firsts: Vec<u64> = sessions.iter().map(|s| s.packets[0].ts_us).collect();
        prop_assert!(firsts.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn flow_key_is_canonical(a in any::<(u32, u16)>(), b in any::<(u32, u16)>()) {
        let ea = (Ipv4Addr::from(a.0), a.1);
        let eb = (Ipv4Addr::from(b.0), b.1);
        let k = FlowKey::new(ea, eb, 6);
        prop_assert_eq!(k, FlowKey::new(eb, ea, 6));
        prop_assert_eq!(k.canonical(), k);
        prop_assert!(k.endpoint_lo <= k.endpoint_hi);
    }

    #[test]
    fn selection_ignores_acks_and_trailing_noise(
        gaps in proptest::collection::vec(1u64..5000, 5),
        acks_between in proptest::collection::vec(0usize..3, 4),
        trailing in proptest::collection::vec((0u64..100_000, any::<bool>()), 0..6),
    ) {
        let mut ts = 0;
        let mut base = Vec::new();
        for (i, g) in gaps.iter().enumerate() {
            ts += g;
            base.push(app(ts, 100 + i as u16));
        }
        let reference = {
            let s = sessionize(base.clone()).remove(0);
            let sel = select_netmatrix_packets(&s).unwrap();
            sel.packets().map(|p| p.clone())
        };
        let mut noisy = base.clone();
        for (i, &n) in acks_between.iter().enumerate() {
            for j in 0..n {
                // strictly between selected packet i and i+1
                let lo = base[i].ts_us;
                let hi = base[i + 1].ts_us;
                noisy.push(ack(lo + (hi - lo) * (j as u64 + 1) / (n as u64 + 2)));
            }
        }
        let last = base[4].ts_us;
        for (off, as_app) in trailing {
            noisy.push(if as_app { app(last + 1 + off, 7) } else { ack(last + 1 + off) });
        }
        let s = sessionize(noisy).remove(0);
        let sel = select_netmatrix_packets(&s).unwrap();
        let got = sel.packets().map(|p| p.clone());
        prop_assert_eq!(got, reference);
        prop_assert!(sel.packets().iter().all(|p| is_encrypted_payload(p)));
    }
}

#[test]
fn selection_indices_follow_first_five_rule() {
    let s = sessionize(vec![app(1, 10), ack(2), app(3, 11), app(4, 12), app(5, 13), ack(6), app(7, 14), app(8, 15)]).remove(0);
    assert_eq!(selected_indices(&s), Some([0, 2, 3, 4, 6]));
}
