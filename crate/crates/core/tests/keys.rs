use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pqofh_core::ike::{combine_keys, final_key};
use pqofh_core::kem::SharedSecret;
use pqofh_core::Integ;

fn random_secret(rng: &mut ChaCha8Rng, len: usize) -> SharedSecret {
    SharedSecret::new((0..len).map(|_| rng.gen()).collect())
}

#[test]
fn single_byte_flip_in_round_secret_changes_chain_key() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut changed = 0;
    for trial in 0..1000 {
        let prf = Integ::ALL[trial % 3];
        let k: Vec<u8> = (0..prf.output_len()).map(|_| rng.gen()).collect();
        let ni: [u8; 32] = rng.gen();
        let nr: [u8; 32] = rng.gen();
        let secret = random_secret(&mut rng, 32);
        let mut flipped = secret.as_bytes().to_vec();
        let pos = rng.gen_range(0..flipped.len());
        flipped[pos] ^= rng.gen_range(1..=255u8);
        let a = combine_keys(prf, &k, &secret, &ni, &nr);
        let b = combine_keys(prf, &k, &SharedSecret::new(flipped), &ni, &nr);
        if a != b {
            changed += 1;
        }
    }
    assert_eq!(changed, 1000);
}

#[test]
fn replacing_any_round_secret_changes_final_key() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..300 {
        let prf = Integ::ALL[trial % 3];
        let ni: [u8; 32] = rng.gen();
        let nr: [u8; 32] = rng.gen();
        let dh = random_secret(&mut rng, 256);
        let rounds: Vec<SharedSecret> = (0..1 + trial % 4).map(|_| random_secret(&mut rng, 32)).collect();
        let base = final_key(prf, &ni, &nr, &dh, &rounds);
        let other_dh = random_secret(&mut rng, 256);
        assert_ne!(final_key(prf, &ni, &nr, &other_dh, &rounds), base);
        for i in 0..rounds.len() {
            let mut swapped = rounds.clone();
            swapped[i] = random_secret(&mut rng, 32);
            assert_ne!(final_key(prf, &ni, &nr, &dh, &swapped), base);
        }
    }
}

#[test]
fn round_order_matters() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let dh = random_secret(&mut rng, 256);
    let a = random_secret(&mut rng, 32);
    let b = random_secret(&mut rng, 32);
    let n = [0u8; 32];
    assert_ne!(
        final_key(Integ::Sha256, &n, &n, &dh, &[a.clone(), b.clone()]),
        final_key(Integ::Sha256, &n, &n, &dh, &[b, a])
    );
}
