use std::sync::Arc;

use pqofh_core::ike::message::{ExchangeType, Message, Payload, INTERMEDIATE_EXCHANGE_SUPPORTED};
use pqofh_core::ike::state::build_sa_init_request;
use pqofh_core::ike::{
    count_exchanges, expected_handshake_bytes, run_handshake, IkeError, Initiator, PeerConfig,
    Phase, Proposal, Responder,
};
use pqofh_core::kem::KemRegistry;
use pqofh_core::{Encr, Integ};

fn reg() -> Arc<KemRegistry> {
    Arc::new(KemRegistry::builtin())
}

fn cfg(addke: &[&str]) -> PeerConfig {
    PeerConfig::new(vec![Proposal::new(Encr::Aes128, Integ::Sha256, 14, addke)], b"secret")
}

#[test]
fn baseline_handshake_agrees() {
    let out = run_handshake(reg(), cfg(&[]), cfg(&[]), &[1; 32]).unwrap();
    assert_eq!(out.initiator_schedule(), out.responder_schedule());
    assert_eq!(count_exchanges(out.transcript(), ExchangeType::Intermediate), 0);
    let ids: Vec<u32> = out.transcript().iter().map(|l| l.message_id).collect();
    assert_eq!(ids, [0, 0, 1, 1]);
}

#[test]
fn two_kem_chain_has_two_intermediate_pairs() {
    let out = run_handshake(
        reg(),
        cfg(&["toy-lwe", "mock-bike"]),
        cfg(&["toy-lwe", "mock-bike"]),
        &[2; 32],
    )
    .unwrap();
    assert_eq!(out.initiator_schedule(), out.responder_schedule());
    assert_eq!(
        out.initiator.state().chain_key(),
        out.responder.state().chain_key()
    );
    assert_eq!(count_exchanges(out.transcript(), ExchangeType::Intermediate), 4);
    let ids: Vec<u32> = out.transcript().iter().map(|l| l.message_id).collect();
    assert_eq!(ids, [0, 0, 1, 1, 2, 2, 3, 3]);
    let ladder: Vec<String> = out.transcript().iter().map(|l| l.to_string()).collect();
    assert!(ladder[0].starts_with("I->R 0 SA_INIT SA,KE,NONCE,NOTIFY "));
    assert!(ladder[2].starts_with("I->R 1 INTERMEDIATE KEM_PK "));
    assert!(ladder[3].starts_with("R->I 1 INTERMEDIATE KEM_CT "));
    assert!(ladder[7].starts_with("R->I 3 AUTH AUTH "));
}

#[test]
fn handshake_bytes_match_formula() {
    let r = reg();
    for addke in [vec![], vec!["toy-lwe"], vec!["toy-lwe", "mock-frodo"]] {
        let c = cfg(&addke);
        let out = run_handshake(r.clone(), c.clone(), c.clone(), &[3; 32]).unwrap();
        let want = expected_handshake_bytes(&c.proposals, out.chosen(), &r).unwrap();
        assert_eq!(out.handshake_bytes, want, "{addke:?}");
        assert_eq!(out.initiator.state().handshake_bytes(), want);
        assert_eq!(out.responder.state().handshake_bytes(), want);
    }
}

#[test]
fn kem_chain_adds_exactly_kem_sizes_and_framing() {
    let r = reg();
    let base = run_handshake(r.clone(), cfg(&[]), cfg(&[]), &[4; 32]).unwrap();
    let hyb = run_handshake(
        r.clone(),
        cfg(&["toy-lwe", "mock-frodo"]),
        cfg(&["toy-lwe", "mock-frodo"]),
        &[4; 32],
    )
    .unwrap();
    let toy = r.get("toy-lwe").unwrap().params();
    let frodo = r.get("mock-frodo").unwrap().params();
    let kem = toy.public_key_len + toy.ciphertext_len + frodo.public_key_len + frodo.ciphertext_len;
    // per round: two messages of header + payload header + transform id;
    // SA_INIT: two addke entries per proposal copy plus one notify each way
    let framing = 2 * 2 * (10 + 5 + 2) + 2 * 2 * 2 + 2 * (5 + 2);
    assert_eq!(hyb.handshake_bytes - base.handshake_bytes, kem + framing);
}

#[test]
fn notify_only_with_addke() {
    let (m, _, _) = build_sa_init_request(&cfg(&["toy-lwe"]), &[0; 32]).unwrap();
    assert!(m.has_notify(INTERMEDIATE_EXCHANGE_SUPPORTED));
    let (m, _, _) = build_sa_init_request(&cfg(&[]), &[0; 32]).unwrap();
    assert!(!m.has_notify(INTERMEDIATE_EXCHANGE_SUPPORTED));
}

#[test]
fn proposal_order_preserved_on_wire() {
    let r = reg();
    let c = PeerConfig::new(
        vec![
            Proposal::new(Encr::Aes256, Integ::Sha512, 14, &["mock-hqc"]),
            Proposal::new(Encr::Aes128, Integ::Sha256, 14, &[]),
        ],
        b"k",
    );
    let (m, _, _) = build_sa_init_request(&c, &[0; 32]).unwrap();
    let back = Message::decode(&m.encode(&r).unwrap(), &r).unwrap();
    assert_eq!(back.proposals().unwrap(), c.proposals.as_slice());
}

#[test]
fn downgrade_rejected_and_nothing_established() {
    let r = reg();
    let mut ini = Initiator::new(cfg(&[]), r.clone(), [5; 32]).unwrap();
    let mut res = Responder::new(cfg(&["toy-lwe"]), r.clone(), [6; 32]).unwrap();
    let req = ini.start().unwrap();
    assert_eq!(res.handle(&req), Err(IkeError::NoProposalChosen));
    assert_eq!(res.state().phase(), Phase::Failed);
    assert!(res.state().schedule().is_none());
}

#[test]
fn psk_mismatch_fails_auth() {
    let r = reg();
    let mut other = cfg(&["toy-lwe"]);
    other.psk = b"different".to_vec();
    let err = run_handshake(r, cfg(&["toy-lwe"]), other, &[7; 32]).err().unwrap();
    assert_eq!(err, IkeError::AuthFailure);
}

#[test]
fn tampered_sa_init_fails_auth() {
    // flip one byte of the nonce as seen by the responder only
    let r = reg();
    let mut ini = Initiator::new(cfg(&[]), r.clone(), [8; 32]).unwrap();
    let mut res = Responder::new(cfg(&[]), r.clone(), [9; 32]).unwrap();
    let mut req = ini.start().unwrap();
    for p in &mut req.payloads {
        if let Payload::Nonce(n) = p {
            n[0] ^= 1;
        }
    }
    let resp = res.handle(&req).unwrap();
    let auth = ini.handle(&resp).unwrap().unwrap();
    assert_eq!(res.handle(&auth), Err(IkeError::AuthFailure));
    assert!(res.state().schedule().is_none());
}

#[test]
fn replayed_round_response_is_stale() {
    let r = reg();
    let c = cfg(&["toy-lwe", "mock-bike"]);
    let mut ini = Initiator::new(c.clone(), r.clone(), [10; 32]).unwrap();
    let mut res = Responder::new(c, r.clone(), [11; 32]).unwrap();
    let m0 = ini.start().unwrap();
    let r0 = res.handle(&m0).unwrap();
    let m1 = ini.handle(&r0).unwrap().unwrap();
    let r1 = res.handle(&m1).unwrap();
    let m2 = ini.handle(&r1).unwrap().unwrap();
    assert_eq!(m2.message_id, 2);
    assert!(matches!(
        ini.handle(&r1),
        Err(IkeError::StaleMessageId { expected: 2, got: 1 })
    ));
    // stale input is dropped, the handshake carries on
    let r2 = res.handle(&m2).unwrap();
    let m3 = ini.handle(&r2).unwrap().unwrap();
    let r3 = res.handle(&m3).unwrap();
    assert!(ini.handle(&r3).unwrap().is_none());
    assert!(ini.state().is_established());
    assert!(matches!(res.handle(&m1), Err(IkeError::StaleMessageId { .. })));
}

#[test]
fn out_of_order_exchange_rejected() {
    let r = reg();
    let c = cfg(&["toy-lwe"]);
    let mut ini = Initiator::new(c.clone(), r.clone(), [12; 32]).unwrap();
    let mut res = Responder::new(c, r.clone(), [13; 32]).unwrap();
    let m0 = ini.start().unwrap();
    res.handle(&m0).unwrap();
    let premature = Message::new(ExchangeType::Auth, false, true, 1).with(Payload::Auth(vec![0; 32]));
    assert!(matches!(
        res.handle(&premature),
        Err(IkeError::UnexpectedExchange { .. })
    ));
}

#[test]
fn corrupted_kem_public_key_is_kem_failure() {
    let r = reg();
    let c = cfg(&["toy-lwe"]);
    let mut ini = Initiator::new(c.clone(), r.clone(), [14; 32]).unwrap();
    let mut res = Responder::new(c, r.clone(), [15; 32]).unwrap();
    let r0 = res.handle(&ini.start().unwrap()).unwrap();
    let mut m1 = ini.handle(&r0).unwrap().unwrap();
    if let Payload::KemPublicKey { data, .. } = &mut m1.payloads[0] {
        data.pop();
    }
    assert!(matches!(res.handle(&m1), Err(IkeError::KemFailure(_))));
}

#[test]
fn deterministic_under_seed() {
    let a = run_handshake(reg(), cfg(&["toy-lwe"]), cfg(&["toy-lwe"]), &[16; 32]).unwrap();
    let b = run_handshake(reg(), cfg(&["toy-lwe"]), cfg(&["toy-lwe"]), &[16; 32]).unwrap();
    let c = run_handshake(reg(), cfg(&["toy-lwe"]), cfg(&["toy-lwe"]), &[17; 32]).unwrap();
    assert_eq!(a.initiator_schedule(), b.initiator_schedule());
    assert_ne!(a.initiator_schedule(), c.initiator_schedule());
}

#[test]
fn retained_bytes_grow_with_kem_sizes() {
    let r = reg();
    let mut last = 0;
    for kem in ["mock-kyber", "mock-bike", "mock-hqc", "mock-frodo"] {
        let out = run_handshake(r.clone(), cfg(&[kem]), cfg(&[kem]), &[18; 32]).unwrap();
        let total = out.initiator.state().retained_bytes() + out.responder.state().retained_bytes();
        assert!(total > last, "{kem}");
        last = total;
    }
}
