//! Property tests for the structural invariants that want fuzzing
//! rather than fixed vectors.

use proptest::prelude::*;
use secfab_core::auth::PresharedKey;
use secfab_core::detect::{train, AlertKind, DetectorConfig, DetectorEngine, ProcessPayload, TraceEvent};
use secfab_core::linksec::{install_stream, RxAssociation, RxOutcome, TxAssociation};
use secfab_core::respond::{AuditLog, ChainCheck};
use secfab_core::time::SimTime;
use secfab_core::wire::{Decoder, Encoder};
use std::collections::BTreeSet;

fn cyclic_trace(n: u64) -> Vec<TraceEvent> {
    let cycle = ["A", "B", "C"];
    (0..n)
        .map(|i| TraceEvent {
            t: SimTime::from_ms(i * 100),
            src: "plc".into(),
            dst: "hmi".into(),
            msg_type: cycle[(i % 3) as usize].into(),
            size: 16,
            seq: i,
            delivered: true,
            retransmissions: 0,
            rssi_dbm: None,
            process: ProcessPayload::None,
        })
        .collect()
}

fn psk(seed: u8) -> PresharedKey {
    PresharedKey {
        key: [seed; 32],
        label: "prop".into(),
        bound_session: 1,
        valid_until: SimTime::from_secs(100_000),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// unprotect(protect(x)) == x for any payload up to the MTU, both
    /// encryption modes.
    #[test]
    fn frame_roundtrip_identity(payload in proptest::collection::vec(any::<u8>(), 0..=1500), encrypt: bool) {
        let p = psk(3);
        let mut tx = TxAssociation::install(7, &p, "prop", SimTime::ZERO).unwrap();
        let mut rx = RxAssociation::install(7, &p, "prop", SimTime::ZERO).unwrap();
        let frame = tx.protect(&payload, encrypt).unwrap();
        prop_assert_eq!(rx.unprotect(&frame).unwrap(), payload.clone());
        // and the wire encoding is lossless
        let decoded = secfab_core::linksec::SecureFrame::from_bytes(&frame.to_bytes()).unwrap();
        prop_assert_eq!(decoded, frame);
    }

    /// For any interleaving and per-copy loss pattern, each stream
    /// sequence number is delivered upward at most once.
    #[test]
    fn exactly_once_delivery_under_any_interleaving(
        pattern in proptest::collection::vec((any::<bool>(), any::<bool>(), 0..3u8), 1..200)
    ) {
        let p = psk(9);
        let (mut tx, mut rx) = install_stream("prop", &p, 1, 2, SimTime::ZERO).unwrap();
        let mut delivered = BTreeSet::new();
        let mut backlog: Vec<(usize, secfab_core::linksec::SecureFrame)> = Vec::new();

        for (lose_a, lose_b, reorder) in pattern {
            let [fa, fb] = tx.replicate_send(b"payload", true).unwrap();
            if !lose_a {
                backlog.push((0, fa));
            }
            if !lose_b {
                backlog.push((1, fb));
            }
            // drain a shuffled prefix of the backlog
            for _ in 0..=reorder {
                if backlog.is_empty() {
                    break;
                }
                let idx = (reorder as usize) % backlog.len();
                let (pipe, frame) = backlog.remove(idx);
                if let Ok(RxOutcome::Delivered { seq, .. }) = rx.receive(pipe, &frame) {
                    prop_assert!(delivered.insert(seq), "seq {} delivered twice", seq);
                }
            }
        }
        for (pipe, frame) in backlog {
            if let Ok(RxOutcome::Delivered { seq, .. }) = rx.receive(pipe, &frame) {
                prop_assert!(delivered.insert(seq), "seq {} delivered twice", seq);
            }
        }
    }

    /// Canonical encoding round-trips arbitrary field sequences.
    #[test]
    fn wire_roundtrip(
        n in any::<u64>(),
        s in ".{0,80}",
        opt in proptest::option::of(".{0,40}"),
        bytes in proptest::collection::vec(any::<u8>(), 0..200)
    ) {
        let mut e = Encoder::new();
        e.u64(n).str(&s).opt_str(opt.as_deref()).bytes(&bytes);
        let buf = e.finish();
        let mut d = Decoder::new(&buf);
        prop_assert_eq!(d.u64().unwrap(), n);
        prop_assert_eq!(d.str().unwrap(), s);
        prop_assert_eq!(d.opt_str().unwrap(), opt);
        prop_assert_eq!(d.bytes().unwrap(), bytes);
        d.finish().unwrap();
    }

    /// Recording up to gap-tolerance consecutive deliveries as drops in
    /// a clean cyclic trace never triggers the sequence detector.
    #[test]
    fn gap_tolerant_drops_stay_quiet(start in 10..380usize, gap_len in 1..=2usize) {
        let cfg = DetectorConfig::default();
        let trace = cyclic_trace(400);
        let model = train(&trace, &cfg);
        let mut engine = DetectorEngine::new(model, cfg);
        for (i, ev) in trace.iter().enumerate() {
            let mut ev = ev.clone();
            if i >= start && i < start + gap_len {
                ev.delivered = false; // recorded drop
            }
            let alerts = engine.score_event(&ev);
            prop_assert!(
                alerts.iter().all(|a| a.detector != AlertKind::Sequence),
                "drop gap of {} at {} alerted: {:?}", gap_len, start, alerts
            );
        }
    }

    /// Any single-entry description mutation or interior deletion is
    /// caught at exactly the first affected position.
    #[test]
    fn audit_chain_catches_any_single_tamper(len in 2..60usize, pos_seed in any::<u64>(), delete: bool) {
        let mut log = AuditLog::new();
        for i in 0..len {
            log.append("actor", &format!("entry {i}"), SimTime::from_ms(i as u64));
        }
        let pos = if delete {
            (pos_seed as usize) % (len - 1) // interior deletions only
        } else {
            (pos_seed as usize) % len
        };
        let mut entries = log.entries().to_vec();
        if delete {
            entries.remove(pos);
        } else {
            entries[pos].description.push('!');
        }
        let mut text = String::new();
        for e in &entries {
            text.push_str(&serde_json::to_string(e).unwrap());
            text.push('\n');
        }
        let tampered = AuditLog::from_jsonl(&text).unwrap();
        prop_assert_eq!(tampered.verify_chain(), ChainCheck::BrokenAt(pos as u64));
    }
}
