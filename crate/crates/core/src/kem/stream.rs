//! SHA-256 counter-mode byte stream used for every deterministic expansion
//! in the KEM layer.

use sha2::{Digest, Sha256};

/// Block `i` of the stream is `SHA-256(domain ‖ be32(i))`, `i = 0, 1, ...`.
#[derive(Clone)]
pub struct HashStream {
    domain: Vec<u8>,
    counter: u32,
    block: [u8; 32],
    pos: usize,
}

impl HashStream {
    pub fn new(domain: &[u8]) -> Self {
        Self {
            domain: domain.to_vec(),
            counter: 0,
            block: [0; 32],
            pos: 32,
        }
    }

    /// Stream over `seed ‖ label`, the usual way callers domain-separate.
    pub fn labelled(seed: &[u8], label: &[u8]) -> Self {
        let mut domain = Vec::with_capacity(seed.len() + label.len());
        domain.extend_from_slice(seed);
        domain.extend_from_slice(label);
        Self::new(&domain)
    }

    fn refill(&mut self) {
        let mut h = Sha256::new();
        h.update(&self.domain);
        h.update(self.counter.to_be_bytes());
        self.block = h.finalize().into();
        self.counter = self.counter.wrapping_add(1);
        self.pos = 0;
    }

    pub fn next_byte(&mut self) -> u8 {
        if self.pos == 32 {
            self.refill();
        }
        let b = self.block[self.pos];
        self.pos += 1;
        b
    }

    pub fn fill(&mut self, out: &mut [u8]) {
        let mut written = 0;
        while written < out.len() {
            if self.pos == 32 {
                self.refill();
            }
            let take = (32 - self.pos).min(out.len() - written);
            out[written..written + take].copy_from_slice(&self.block[self.pos..self.pos + take]);
            self.pos += take;
            written += take;
        }
    }

    pub fn take_vec(&mut self, len: usize) -> Vec<u8> {
        let mut v = vec![0; len];
        self.fill(&mut v);
        v
    }

    pub fn take_array<const N: usize>(&mut self) -> [u8; N] {
        let mut a = [0; N];
        self.fill(&mut a);
        a
    }

    /// Little-endian 16-bit word.
    pub fn next_u16(&mut self) -> u16 {
        let lo = self.next_byte();
        let hi = self.next_byte();
        u16::from_le_bytes([lo, hi])
    }

    /// Uniform integer in `[-bound, bound]` by byte rejection sampling.
    pub fn next_centered(&mut self, bound: u32) -> i32 {
        let range = 2 * bound + 1;
        assert!(range <= 256, "noise bound too large for byte sampling");
        let limit = 256 - 256 % range;
        loop {
            let b = u32::from(self.next_byte());
            if b < limit {
                return (b % range) as i32 - bound as i32;
            }
        }
    }
}

/// SHA-256 of the concatenated parts.
pub fn sha256(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

/// Fresh 32-byte seed derived from `seed` for the given purpose.
pub fn derive_seed(seed: &[u8], label: &[u8]) -> [u8; 32] {
    sha256(&[seed, label])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_matches_bytewise_reads() {
        let mut a = HashStream::new(b"x");
        let mut b = HashStream::new(b"x");
        let bulk = a.take_vec(100);
        let single: Vec<u8> = (0..100).map(|_| b.next_byte()).collect();
        assert_eq!(bulk, single);
        assert_eq!(&bulk[..32], &sha256(&[b"x", &0u32.to_be_bytes()]));
    }

    #[test]
    fn centered_samples_stay_in_range_and_hit_every_value() {
        let mut s = HashStream::new(b"noise");
        let mut seen = [false; 5];
        for _ in 0..2000 {
            let v = s.next_centered(2);
            assert!((-2..=2).contains(&v));
            seen[(v + 2) as usize] = true;
        }
        assert!(seen.iter().all(|&x| x));
    }
}
