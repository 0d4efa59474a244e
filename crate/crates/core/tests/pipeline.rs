mod common;

use common::*;
use coopbeacon::crypto::{hash_h_prime, Key, SignatureScheme, SimulatedSignatures};
use coopbeacon::messages::{encode_beacon, signing_bytes, VehicleStatus};
use coopbeacon::receiver::{AnchorError, DropReason, Scheme, ValidationKind, Verdict};
use coopbeacon::sender::{AdversaryState, AdversaryStrategy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SIG: Verdict = Verdict::Accepted(ValidationKind::SignatureVerified);
const COOP: Verdict = Verdict::Accepted(ValidationKind::CooperativelyValidated);
const TESLA: Verdict = Verdict::Accepted(ValidationKind::TeslaValidated);

/// Caches `s`'s pseudonym at the receiver by signature-verifying its beacon
/// of `slot`.
fn cache(h: &mut Harness, s: &mut coopbeacon::sender::SenderState, slot: u32) -> u32 {
    let m = beacon(s, slot);
    let t = m.beacon.timestamp;
    let id = h.deliver(m);
    h.rx.set_t_next(t);
    assert_eq!(h.verify_next(t + 1), Some(id));
    assert_eq!(h.outcome(id).unwrap().verdict, SIG);
    id
}

#[test]
fn cached_pc_fresh_key_goes_to_head() {
    let mut h = Harness::new(Scheme::Cooperative);
    let mut s = sender(0, 1, 1);
    cache(&mut h, &mut s, 7);
    assert_eq!(h.rx.cached_entry(s.active_pc().id).unwrap().last_auth_slot, 6);
    let other = sender(0, 2, 2);
    let mut other = other;
    let o = h.deliver(beacon(&mut other, 7));
    let id = h.deliver(beacon(&mut s, 8));
    assert_eq!(h.rx.queue1_ids(), vec![id, o]);
    let e = h.rx.cached_entry(s.active_pc().id).unwrap();
    assert_eq!((e.last_auth_slot, e.pending), (7, Some(id)));
}

#[test]
fn duplicate_disclosed_key_is_dropped() {
    let mut h = Harness::new(Scheme::Cooperative);
    let mut s = sender(0, 1, 3);
    cache(&mut h, &mut s, 3);
    let first = beacon(&mut s, 4);
    let mut copy = first.clone();
    copy.beacon.status.x += 1.0;
    let a = h.deliver(first);
    let b = h.deliver(copy);
    assert!(h.outcome(a).is_none());
    assert_eq!(h.outcome(b).unwrap().verdict, Verdict::Dropped(DropReason::DuplicateKey));
    assert_eq!(h.rx.queue1_ids(), vec![a]);
}

#[test]
fn stale_and_wrong_keys_are_dropped() {
    let mut h = Harness::new(Scheme::Cooperative);
    let mut s = sender(0, 1, 4);
    let mut s2 = sender(0, 2, 5);
    cache(&mut h, &mut s, 10);
    // Replayed older beacon.
    let old = beacon(&mut s, 5);
    let t = old.beacon.timestamp;
    let id = h.deliver_at(old, t + 1);
    assert_eq!(h.outcome(id).unwrap().verdict, Verdict::Dropped(DropReason::StaleKey));
    // Key from another chain under this pseudonym.
    let mut forged = beacon(&mut s, 12);
    forged.beacon.disclosed_key = s2.chain().key_at(11).unwrap();
    let id = h.deliver(forged);
    assert_eq!(h.outcome(id).unwrap().verdict, Verdict::Dropped(DropReason::BadKey));
    // A beacon arriving after its slot ended.
    let late = beacon(&mut s, 13);
    let end = s.chain().slot_start(14);
    let id = h.deliver_at(late, end);
    assert_eq!(h.outcome(id).unwrap().verdict, Verdict::Dropped(DropReason::Untimely));
    let _ = beacon(&mut s2, 1);
}

#[test]
fn previous_beacon_is_tesla_validated_on_next_key() {
    let mut h = Harness::new(Scheme::Cooperative);
    let mut s = sender(0, 1, 6);
    cache(&mut h, &mut s, 2);
    let m3 = h.deliver(beacon(&mut s, 3));
    assert!(h.outcome(m3).is_none());
    // Slot 4 lost; slot 5 discloses K_4, which hashes to K_3.
    let m5 = h.deliver(beacon(&mut s, 5));
    let o = h.outcome(m3).unwrap();
    assert_eq!(o.verdict, TESLA);
    assert_eq!(o.at, tx_time(&s, 5) + 1);
    assert_eq!(o.waited(), tx_time(&s, 5) - tx_time(&s, 3));
    assert_eq!(h.rx.queue1_ids(), vec![m5]);
    assert_eq!(h.rx.cached_entry(s.active_pc().id).unwrap().pending, Some(m5));
}

#[test]
fn queue2_selection_picks_latest_timestamp_directly() {
    let mut h = Harness::new(Scheme::Cooperative);
    let mut w = sender(0, 2, 10);
    let mut v = sender(3, 1, 11);
    let ws: Vec<_> = [10, 11, 12].iter().map(|&i| beacon(&mut w, i)).collect();
    let ids: Vec<_> = ws.iter().cloned().map(|m| h.deliver(m)).collect();
    for m in &ws {
        v.record_verified(coopbeacon::messages::beacon_hash(m), m.beacon.timestamp, ValidationKind::SignatureVerified);
    }
    // Two slots later, so w's beacons are no longer fresh.
    let vm = beacon(&mut v, 14);
    let t = vm.beacon.timestamp;
    let vid = h.deliver(vm);
    h.rx.set_t_next(t + 1);
    assert_eq!(h.verify_next(t + 2), Some(vid));
    assert_eq!(h.rx.queue2_ids(), vec![ids[2], ids[1], ids[0]]);
    assert_eq!(h.rx.queue1_len(), 0);
    let picked = h.verify_next(t + 20_000).unwrap();
    assert_eq!(picked, ids[2]);
    // The older two are TESLA-validated once w's pseudonym is cached.
    assert_eq!(h.outcome(ids[0]).unwrap().verdict, TESLA);
    assert_eq!(h.outcome(ids[1]).unwrap().verdict, TESLA);
    assert!(h.rx.queue2_ids().is_empty());
}

#[test]
fn fresh_prefix_selection_is_uniform() {
    let trials = 10_000;
    let mut counts = [0usize; 3];
    let mut h = Harness::new(Scheme::BaselineTesla);
    let mut senders: Vec<_> = (0..5).map(|i| sender(0, i, 100 + u64::from(i))).collect();
    // Two stale beacons (slot 5) then three fresh ones (slot 9).
    let stale: Vec<_> = senders[..2].iter_mut().map(|s| beacon(s, 5)).collect();
    let fresh: Vec<_> = senders[2..].iter_mut().map(|s| beacon(s, 9)).collect();
    let at = 1_000_000;
    let mut ids = Vec::new();
    for m in stale.into_iter().chain(fresh) {
        let t = m.beacon.timestamp;
        ids.push(h.deliver_at(m, t + 1));
    }
    let _ = at;
    let t_next = senders[2].chain().slot_start(10);
    for trial in 0..trials {
        let mut rx = receiver(Scheme::BaselineTesla, trial);
        for &id in &ids {
            let t = h.store.get(id).timestamp();
            rx.on_receive(&h.store, id, t + 1);
        }
        rx.set_t_next(t_next);
        let (picked, _) = rx.select_next(&h.store, t_next - 1).unwrap();
        let pos = ids.iter().position(|&i| i == picked).unwrap();
        assert!(pos >= 2, "stale element picked while fresh ones exist");
        counts[pos - 2] += 1;
    }
    let p = 1.0 / 3.0;
    let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - trials as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
    }
}

#[test]
fn no_fresh_elements_takes_head() {
    let mut h = Harness::new(Scheme::Cooperative);
    let mut a = sender(0, 1, 12);
    let mut b = sender(0, 2, 13);
    let ia = h.deliver(beacon(&mut a, 3));
    let ib = h.deliver(beacon(&mut b, 3));
    h.rx.set_t_next(tx_time(&a, 3) + 10 * SLOT);
    let (picked, _) = h.rx.select_next(&h.store, tx_time(&a, 4)).unwrap();
    let head = if tx_time(&b, 3) > tx_time(&a, 3) { ib } else { ib.max(ia) };
    assert_eq!(picked, head);
}

#[test]
fn new_pc_extracts_older_beacons_and_keeps_latest() {
    let mut h = Harness::new(Scheme::Cooperative);
    let mut w = sender(0, 2, 14);
    let m1 = beacon(&mut w, 20);
    let m2 = beacon(&mut w, 21);
    let m3 = beacon(&mut w, 22);
    let e = beacon(&mut w, 19);
    // E (slot 19) is verified while 20..22 sit in queue 1: 20 and 21 are
    // validated via the key disclosed in 22, which is kept.
    let ie = h.deliver_at(e.clone(), tx_time(&w, 19) + 1);
    h.rx.set_t_next(0);
    let job = h.rx.start_next(&h.store, tx_time(&w, 19) + 2).unwrap();
    assert_eq!(job.msg, ie);
    assert_eq!(job.cost, 2 * T_VRFC);
    let i1 = h.deliver(m1);
    let i2 = h.deliver(m2);
    let i3 = h.deliver(m3);
    h.rx.finish_job(&h.store, tx_time(&w, 22) + 5);
    h.collect();
    assert_eq!(h.outcome(ie).unwrap().verdict, SIG);
    assert_eq!(h.outcome(i1).unwrap().verdict, TESLA);
    assert_eq!(h.outcome(i2).unwrap().verdict, TESLA);
    assert!(h.outcome(i3).is_none());
    assert_eq!(h.rx.queue1_ids(), vec![i3]);
    let entry = h.rx.cached_entry(w.active_pc().id).unwrap();
    assert_eq!((entry.last_auth_slot, entry.pending), (21, Some(i3)));
}

#[test]
fn new_pc_with_only_older_queued_beacons_validates_all() {
    let mut h = Harness::new(Scheme::Cooperative);
    let mut w = sender(0, 2, 15);
    let olds: Vec<_> = [10, 11].iter().map(|&i| beacon(&mut w, i)).collect();
    let ids: Vec<_> = olds.into_iter().map(|m| h.deliver(m)).collect();
    let latest = h.deliver(beacon(&mut w, 12));
    h.rx.set_t_next(tx_time(&w, 12) + 1);
    // Only the slot-12 beacon is fresh.
    assert_eq!(h.verify_next(tx_time(&w, 12) + 2), Some(latest));
    for id in ids {
        assert_eq!(h.outcome(id).unwrap().verdict, TESLA);
    }
    assert_eq!(h.rx.queue1_len(), 0);
}

#[test]
fn piggyback_handling() {
    let mut h = Harness::new(Scheme::Cooperative);
    let mut v = sender(4, 1, 16);
    let mut c = sender(0, 2, 17);
    let mut n = sender(0, 3, 18);
    cache(&mut h, &mut c, 5);
    let cm = beacon(&mut c, 6);
    let nm = beacon(&mut n, 6);
    let ic = h.deliver(cm.clone());
    let inn = h.deliver(nm.clone());
    for m in [&cm, &nm] {
        v.record_verified(coopbeacon::messages::beacon_hash(m), m.beacon.timestamp, ValidationKind::SignatureVerified);
    }
    let vm = beacon(&mut v, 8);
    let t = vm.beacon.timestamp;
    let vid = h.deliver(vm);
    h.rx.set_t_next(t + 1);
    assert_eq!(h.verify_next(t + 2), Some(vid));
    let coop = h.outcome(ic).unwrap();
    assert_eq!(coop.verdict, COOP);
    assert_eq!(coop.justified_by, Some(vid));
    assert!(h.outcome(inn).is_none());
    assert_eq!(h.rx.queue2_ids(), vec![inn]);
}

#[test]
fn invalid_signature_is_dropped_without_caching() {
    let mut h = Harness::new(Scheme::Cooperative);
    let cfg = sender_cfg(4);
    let mut adv = AdversaryState::new(cfg, ChaCha8Rng::seed_from_u64(19));
    let m = adv.adversary_build(1_000_000, AdversaryStrategy::FreshFakePc, VehicleStatus::default());
    let pc = m.beacon.pc.id;
    let id = h.deliver(m);
    h.rx.set_t_next(1_050_000);
    assert_eq!(h.verify_next(1_000_010), Some(id));
    assert_eq!(h.outcome(id).unwrap().verdict, Verdict::Dropped(DropReason::BadSignature));
    assert!(!h.rx.is_cached(pc));
    assert_eq!(h.rx.cached_count(), 0);
}

#[test]
fn tesla_validation_paths() {
    let mut h = Harness::new(Scheme::Cooperative);
    let mut s = sender(4, 1, 20);
    let mut c = sender(0, 2, 21);
    let mut n = sender(0, 3, 22);
    cache(&mut h, &mut s, 5);
    cache(&mut h, &mut c, 5);
    let cm = beacon(&mut c, 6);
    let nm = beacon(&mut n, 6);
    for m in [&cm, &nm] {
        s.record_verified(coopbeacon::messages::beacon_hash(m), m.beacon.timestamp, ValidationKind::SignatureVerified);
    }
    let ic = h.deliver(cm);
    let inn = h.deliver(nm);
    let sm = beacon(&mut s, 6);
    let ts = sm.beacon.timestamp;
    let is = h.deliver_at(sm, tx_time(&n, 6).max(tx_time(&c, 6)).max(ts) + 1);
    let key = s.chain().key_at(6).unwrap();
    h.rx.tesla_validate(&h.store, is, ts + 1, &hash_h_prime(&key), ts + 50);
    h.collect();
    assert_eq!(h.outcome(is).unwrap().verdict, TESLA);
    // Cached-pseudonym match is left alone, non-cached one is promoted.
    assert!(h.outcome(ic).is_none());
    assert!(h.rx.queue1_ids().contains(&ic));
    assert_eq!(h.rx.queue2_ids(), vec![inn]);

    // Tampered status: MAC mismatch.
    let mut tampered = beacon(&mut s, 7);
    tampered.beacon.status.speed = 99.0;
    let tt = tampered.beacon.timestamp;
    let it = h.store.insert(tampered);
    h.rx.tesla_validate(&h.store, it, tt + 1, &hash_h_prime(&s.chain().key_at(7).unwrap()), tt + 2);
    h.collect();
    assert_eq!(h.outcome(it).unwrap().verdict, Verdict::Dropped(DropReason::BadMac));
}

#[test]
fn chain_anchor_updates_are_monotone() {
    let mut h = Harness::new(Scheme::Cooperative);
    let mut s = sender(0, 1, 23);
    let pc = s.active_pc().id;
    assert_eq!(h.rx.update_chain_anchor(pc, Key::default(), 1), Err(AnchorError::NotCached(pc)));
    cache(&mut h, &mut s, 7);
    let e = h.rx.cached_entry(pc).unwrap();
    assert_eq!((e.last_auth_key, e.last_auth_slot), (s.chain().key_at(6).unwrap(), 6));
    let k8 = s.chain().key_at(8).unwrap();
    h.rx.update_chain_anchor(pc, k8, 8).unwrap();
    assert_eq!(h.rx.cached_entry(pc).unwrap().last_auth_slot, 8);
    let k5 = s.chain().key_at(5).unwrap();
    assert_eq!(h.rx.update_chain_anchor(pc, k5, 8), Err(AnchorError::Regression { current: 8, new: 8 }));
    assert_eq!(h.rx.update_chain_anchor(pc, k5, 5), Err(AnchorError::Regression { current: 8, new: 5 }));
    assert_eq!(h.rx.cached_entry(pc).unwrap().last_auth_key, k8);
}

#[test]
fn replayed_valid_pc_is_dropped_at_key_check() {
    let mut h = Harness::new(Scheme::Cooperative);
    let mut s = sender(0, 1, 24);
    cache(&mut h, &mut s, 9);
    let mut adv = AdversaryState::new(sender_cfg(0), ChaCha8Rng::seed_from_u64(25));
    adv.overhear(*s.active_pc(), s.chain().key_at(3).unwrap());
    let t = tx_time(&s, 10) + 7;
    let m = adv.adversary_build(t, AdversaryStrategy::ReplayValidPc, VehicleStatus::default());
    let id = h.deliver(m);
    assert!(matches!(h.outcome(id).unwrap().verdict, Verdict::Dropped(DropReason::BadKey | DropReason::StaleKey)));
}

#[test]
fn sig_only_baseline_is_fifo_and_never_tesla() {
    let mut h = Harness::new(Scheme::BaselineSigOnly);
    let mut s = sender(0, 1, 26);
    let ids: Vec<_> = (3..8).map(|i| beacon(&mut s, i)).map(|m| h.deliver(m)).collect();
    h.rx.set_t_next(tx_time(&s, 8));
    let mut now = tx_time(&s, 8);
    for (n, &id) in ids.iter().enumerate() {
        let job = h.rx.start_next(&h.store, now).unwrap();
        assert_eq!(job.msg, id);
        assert_eq!(job.cost, if n == 0 { 2 * T_VRFC } else { T_VRFC });
        now += job.cost;
        h.rx.finish_job(&h.store, now);
        h.collect();
    }
    assert!(h.log.iter().all(|o| o.verdict == SIG));
}

#[test]
fn honest_beacon_loops_back_through_own_pipeline() {
    let mut h = Harness::new(Scheme::Cooperative);
    let mut s = sender(4, 1, 27);
    let m = beacon(&mut s, 1);
    assert!(SimulatedSignatures.verify(m.beacon.pc.id, &m.beacon.pc.public_key, &m.beacon.signature, &signing_bytes(&m.beacon)));
    assert_eq!(coopbeacon::crypto::mac(&s.chain().mac_key_at(1).unwrap(), &encode_beacon(&m.beacon)), m.mac);
    let t = m.beacon.timestamp;
    let id = h.deliver(m);
    h.rx.set_t_next(t + SLOT);
    h.verify_next(t + 1);
    assert_eq!(h.outcome(id).unwrap().verdict, SIG);
    let later: Vec<_> = (2..6).map(|i| h.deliver(beacon(&mut s, i))).collect();
    for id in &later[..3] {
        assert_eq!(h.outcome(*id).unwrap().verdict, TESLA);
    }
}

#[test]
fn expired_pseudonym_dropped_at_selection() {
    let mut h = Harness::new(Scheme::Cooperative);
    let mut s = sender(0, 1, 28);
    let m = beacon(&mut s, 2999);
    let id = h.deliver(m);
    let valid_to = s.active_pc().valid_to;
    assert!(h.rx.select_next(&h.store, valid_to).is_none());
    h.collect();
    assert_eq!(h.outcome(id).unwrap().verdict, Verdict::Dropped(DropReason::Expired));
}

#[test]
fn altered_certificate_under_cached_id_is_dropped() {
    let mut h = Harness::new(Scheme::Cooperative);
    let mut s = sender(0, 1, 21);
    // Queued before the pseudonym is verified, then extracted.
    let mut early = beacon(&mut s, 3);
    early.beacon.pc.valid_from -= 1_000 * SLOT;
    let e = h.deliver(early);
    cache(&mut h, &mut s, 4);
    assert_eq!(h.outcome(e).unwrap().verdict, Verdict::Dropped(DropReason::CertMismatch));
    // Received after: a far earlier start would otherwise cost a hash walk
    // across the whole shifted lifetime.
    let mut late = beacon(&mut s, 6);
    late.beacon.pc.valid_from -= 1_000_000 * SLOT;
    let id = h.deliver(late);
    assert_eq!(h.outcome(id).unwrap().verdict, Verdict::Dropped(DropReason::CertMismatch));
    assert!(h.rx.queue1_ids().is_empty());
}
