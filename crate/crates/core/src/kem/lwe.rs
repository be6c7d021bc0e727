//! Toy plain-LWE KEM with matrix-shaped secrets.
//!
//! ```text
//! keygen:  A = expand(seed_a)            n×n
//!          B = A·S + E                   n×w      pk = seed_a ‖ B
//! encaps:  C1 = S'·A + E'                u×n
//!          C2 = S'·B + E'' + Enc(K)      u×w      ct = C1 ‖ C2
//! decaps:  M  = C2 − C1·S = Enc(K) + S'·E − E'·S + E''
//! ```
//!
//! Every noise coefficient lies in `[-eta, eta]`, so each entry of the
//! residual error is bounded by `2·n·eta² + eta`. Parameters are only
//! accepted when that bound is below `q/4`, which makes decapsulation
//! failures impossible rather than merely unlikely.
//!
//! Matrices are packed as 2-byte little-endian words, row-major.

use super::stream::{derive_seed, sha256, HashStream};
use super::{KemError, KemParams, KeyPair, SharedSecret};

/// Dimensions and modulus of a toy LWE instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyLweParams {
    /// Lattice dimension.
    pub n: usize,
    /// Modulus, a power of two no larger than 2^16.
    pub q: u32,
    /// Noise coefficients are uniform on `[-eta, eta]`.
    pub eta: u32,
    /// Rows of the encapsulation secret.
    pub u: usize,
    /// Columns of the key-generation secret.
    pub w: usize,
}

impl ToyLweParams {
    pub const DEFAULT: ToyLweParams = ToyLweParams {
        n: 128,
        q: 8192,
        eta: 2,
        u: 8,
        w: 16,
    };

    /// Validates the decode bound, the modulus shape and that at least 128
    /// message bits are carried per encapsulation.
    pub fn new(n: usize, q: u32, eta: u32, u: usize, w: usize) -> Result<Self, KemError> {
        let p = Self { n, q, eta, u, w };
        if n == 0 || u == 0 || w == 0 {
            return Err(KemError::InvalidParams("dimensions must be nonzero".into()));
        }
        if !q.is_power_of_two() || !(4..=65536).contains(&q) {
            return Err(KemError::InvalidParams(format!(
                "q = {q} must be a power of two in [4, 65536]"
            )));
        }
        if 2 * eta + 1 > 256 {
            return Err(KemError::InvalidParams(format!("eta = {eta} too large")));
        }
        if p.error_bound() >= u64::from(q / 4) {
            return Err(KemError::InvalidParams(format!(
                "worst-case error {} is not below q/4 = {}",
                p.error_bound(),
                q / 4
            )));
        }
        if u * w < 128 {
            return Err(KemError::InvalidParams(format!(
                "u·w = {} carries fewer than 128 bits",
                u * w
            )));
        }
        Ok(p)
    }

    /// Largest possible magnitude of a decoded symbol's error term.
    pub fn error_bound(&self) -> u64 {
        let eta = u64::from(self.eta);
        2 * self.n as u64 * eta * eta + eta
    }

    pub fn message_bits(&self) -> usize {
        self.u * self.w
    }

    pub fn public_key_len(&self) -> usize {
        16 + 2 * self.n * self.w
    }

    pub fn ciphertext_len(&self) -> usize {
        2 * self.u * self.n + 2 * self.u * self.w
    }

    pub fn secret_key_len(&self) -> usize {
        2 * self.n * self.w + self.public_key_len()
    }
}

/// Dense matrix over `Z_q` for power-of-two `q`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<u16>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    /// Build from signed entries, reducing each modulo `q`.
    pub fn from_signed(rows: usize, cols: usize, entries: &[i64], q: u32) -> Self {
        assert_eq!(entries.len(), rows * cols);
        let data = entries
            .iter()
            .map(|&v| v.rem_euclid(i64::from(q)) as u16)
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> u16 {
        self.data[r * self.cols + c]
    }

    pub fn entries(&self) -> &[u16] {
        &self.data
    }

    pub fn mul(&self, rhs: &Matrix, q: u32) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "dimension mismatch");
        let mask = q - 1;
        let mut acc = vec![0u32; self.rows * rhs.cols];
        for i in 0..self.rows {
            let out = &mut acc[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = u32::from(self.data[i * self.cols + k]);
                if a == 0 {
                    continue;
                }
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out.iter_mut().zip(row) {
                    *o = o.wrapping_add(a.wrapping_mul(u32::from(b)));
                }
            }
        }
        Matrix {
            rows: self.rows,
            cols: rhs.cols,
            data: acc.into_iter().map(|v| (v & mask) as u16).collect(),
        }
    }

    fn zip_with(&self, rhs: &Matrix, q: u32, f: impl Fn(u32, u32) -> u32) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "dimension mismatch");
        let mask = q - 1;
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| (f(u32::from(a), u32::from(b)) & mask) as u16)
                .collect(),
        }
    }

    pub fn add(&self, rhs: &Matrix, q: u32) -> Matrix {
        self.zip_with(rhs, q, u32::wrapping_add)
    }

    pub fn sub(&self, rhs: &Matrix, q: u32) -> Matrix {
        self.zip_with(rhs, q, u32::wrapping_sub)
    }

    pub fn pack(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// Inverse of [`Matrix::pack`]; bits at or above `log2(q)` are discarded.
    pub fn unpack(bytes: &[u8], rows: usize, cols: usize, q: u32) -> Matrix {
        assert_eq!(bytes.len(), 2 * rows * cols);
        let mask = (q - 1) as u16;
        Matrix {
            rows,
            cols,
            data: bytes
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]) & mask)
                .collect(),
        }
    }
}

/// Deterministic public matrix: entries are successive little-endian 16-bit
/// words of the `SHA-256(seed ‖ be32(counter))` stream, masked to `log2(q)`
/// bits, in row-major order.
pub fn expand_matrix(seed: &[u8; 16], n: usize, q: u32) -> Matrix {
    assert!(q.is_power_of_two() && q <= 65536);
    let mask = (q - 1) as u16;
    let mut stream = HashStream::new(seed);
    let data = (0..n * n).map(|_| stream.next_u16() & mask).collect();
    Matrix {
        rows: n,
        cols: n,
        data,
    }
}

pub fn sample_noise(stream: &mut HashStream, rows: usize, cols: usize, eta: u32, q: u32) -> Matrix {
    let entries: Vec<i64> = (0..rows * cols)
        .map(|_| i64::from(stream.next_centered(eta)))
        .collect();
    Matrix::from_signed(rows, cols, &entries, q)
}

pub fn encode_bit(bit: u8, q: u32) -> u16 {
    (u32::from(bit & 1) * (q / 2)) as u16
}

/// 0 iff the symbol lies in `(-q/4, q/4]` modulo `q`.
pub fn decode_symbol(symbol: u16, q: u32) -> u8 {
    let v = u32::from(symbol) & (q - 1);
    if v <= q / 4 || v > 3 * q / 4 {
        0
    } else {
        1
    }
}

/// `B = A·S + E`.
pub fn public_matrix(a: &Matrix, s: &Matrix, e: &Matrix, q: u32) -> Matrix {
    a.mul(s, q).add(e, q)
}

/// `(C1, C2) = (S'·A + E', S'·B + E'' + Enc(bits))`; `bits` is row-major
/// over the `u×w` message grid.
pub fn encrypt_parts(
    a: &Matrix,
    b: &Matrix,
    s1: &Matrix,
    e1: &Matrix,
    e2: &Matrix,
    bits: &[u8],
    q: u32,
) -> (Matrix, Matrix) {
    let rows = s1.rows();
    let cols = b.cols();
    assert_eq!(bits.len(), rows * cols);
    let encoded = Matrix {
        rows,
        cols,
        data: bits.iter().map(|&bit| encode_bit(bit, q)).collect(),
    };
    let c1 = s1.mul(a, q).add(e1, q);
    let c2 = s1.mul(b, q).add(e2, q).add(&encoded, q);
    (c1, c2)
}

/// Message bits recovered from `C2 − C1·S`.
pub fn decrypt_parts(c1: &Matrix, c2: &Matrix, s: &Matrix, q: u32) -> Vec<u8> {
    c2.sub(&c1.mul(s, q), q)
        .entries()
        .iter()
        .map(|&m| decode_symbol(m, q))
        .collect()
}

fn bits_from_bytes(bytes: &[u8], count: usize) -> Vec<u8> {
    (0..count).map(|i| (bytes[i / 8] >> (i % 8)) & 1).collect()
}

fn bytes_from_bits(bits: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        out[i / 8] |= (b & 1) << (i % 8);
    }
    out
}

/// Whether noise matrices are sampled or forced to zero. `Zero` exists so
/// tests can check that decoding collapses to exact rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Noise {
    #[default]
    Sampled,
    Zero,
}

#[derive(Debug, Clone)]
pub struct ToyLwe {
    params: ToyLweParams,
    noise: Noise,
}

impl ToyLwe {
    pub fn new(params: ToyLweParams) -> Self {
        Self {
            params,
            noise: Noise::Sampled,
        }
    }

    pub fn with_noise(mut self, noise: Noise) -> Self {
        self.noise = noise;
        self
    }

    pub fn params(&self) -> &ToyLweParams {
        &self.params
    }

    pub fn kem_params(&self) -> KemParams {
        KemParams {
            public_key_len: self.params.public_key_len(),
            ciphertext_len: self.params.ciphertext_len(),
            shared_secret_len: 32,
            encaps_cost_us: 0,
        }
    }

    fn noise(&self, stream: &mut HashStream, rows: usize, cols: usize) -> Matrix {
        match self.noise {
            Noise::Sampled => sample_noise(stream, rows, cols, self.params.eta, self.params.q),
            Noise::Zero => Matrix::zeros(rows, cols),
        }
    }

    pub fn keygen(&self, seed: &[u8; 32]) -> KeyPair {
        let ToyLweParams { n, q, eta, w, .. } = self.params;
        let seed_a: [u8; 16] = derive_seed(seed, b"toy-lwe/A")[..16].try_into().unwrap();
        let a = expand_matrix(&seed_a, n, q);
        let mut stream = HashStream::labelled(seed, b"toy-lwe/keygen");
        let s = sample_noise(&mut stream, n, w, eta, q);
        let e = self.noise(&mut stream, n, w);
        let b = public_matrix(&a, &s, &e, q);

        let mut public_key = Vec::with_capacity(self.params.public_key_len());
        public_key.extend_from_slice(&seed_a);
        public_key.extend_from_slice(&b.pack());
        let mut secret_key = s.pack();
        secret_key.extend_from_slice(&public_key);
        KeyPair {
            public_key,
            secret_key,
        }
    }

    pub fn encapsulate(
        &self,
        pk: &[u8],
        seed: &[u8; 32],
    ) -> Result<(Vec<u8>, SharedSecret), KemError> {
        let ToyLweParams { n, q, eta, u, w } = self.params;
        if pk.len() != self.params.public_key_len() {
            return Err(KemError::MalformedPublicKey {
                expected: self.params.public_key_len(),
                actual: pk.len(),
            });
        }
        let seed_a: [u8; 16] = pk[..16].try_into().unwrap();
        let a = expand_matrix(&seed_a, n, q);
        let b = Matrix::unpack(&pk[16..], n, w, q);

        let mut stream = HashStream::labelled(seed, b"toy-lwe/encaps");
        let key = stream.take_vec(self.params.message_bits().div_ceil(8));
        let bits = bits_from_bytes(&key, self.params.message_bits());
        let s1 = sample_noise(&mut stream, u, n, eta, q);
        let e1 = self.noise(&mut stream, u, n);
        let e2 = self.noise(&mut stream, u, w);
        let (c1, c2) = encrypt_parts(&a, &b, &s1, &e1, &e2, &bits, q);

        let mut ct = c1.pack();
        ct.extend_from_slice(&c2.pack());
        let ss = bind_secret(&key, pk, &ct);
        Ok((ct, ss))
    }

    pub fn decapsulate(&self, sk: &[u8], ct: &[u8]) -> Result<SharedSecret, KemError> {
        let ToyLweParams { n, q, u, w, .. } = self.params;
        if sk.len() != self.params.secret_key_len() {
            return Err(KemError::MalformedSecretKey {
                expected: self.params.secret_key_len(),
                actual: sk.len(),
            });
        }
        if ct.len() != self.params.ciphertext_len() {
            return Err(KemError::MalformedCiphertext {
                expected: self.params.ciphertext_len(),
                actual: ct.len(),
            });
        }
        let (s_bytes, pk) = sk.split_at(2 * n * w);
        let s = Matrix::unpack(s_bytes, n, w, q);
        let (c1_bytes, c2_bytes) = ct.split_at(2 * u * n);
        let c1 = Matrix::unpack(c1_bytes, u, n, q);
        let c2 = Matrix::unpack(c2_bytes, u, w, q);
        let bits = decrypt_parts(&c1, &c2, &s, q);
        Ok(bind_secret(&bytes_from_bits(&bits), pk, ct))
    }

    /// Message bits an encapsulation under `seed` carries; lets tests compare
    /// raw decryption against the encapsulated message.
    pub fn message_bits_for_seed(&self, seed: &[u8; 32]) -> Vec<u8> {
        let mut stream = HashStream::labelled(seed, b"toy-lwe/encaps");
        let key = stream.take_vec(self.params.message_bits().div_ceil(8));
        bits_from_bytes(&key, self.params.message_bits())
    }

    /// Raw message bits recovered from a ciphertext, before hashing.
    pub fn decrypt_bits(&self, sk: &[u8], ct: &[u8]) -> Vec<u8> {
        let ToyLweParams { n, q, u, w, .. } = self.params;
        let s = Matrix::unpack(&sk[..2 * n * w], n, w, q);
        let c1 = Matrix::unpack(&ct[..2 * u * n], u, n, q);
        let c2 = Matrix::unpack(&ct[2 * u * n..], u, w, q);
        decrypt_parts(&c1, &c2, &s, q)
    }
}

/// `SHA-256(K ‖ SHA-256(pk) ‖ SHA-256(ct))`.
fn bind_secret(key: &[u8], pk: &[u8], ct: &[u8]) -> SharedSecret {
    SharedSecret::new(sha256(&[key, &sha256(&[pk]), &sha256(&[ct])]).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_params_satisfy_bound() {
        let p = ToyLweParams::DEFAULT;
        assert_eq!(ToyLweParams::new(128, 8192, 2, 8, 16).unwrap(), p);
        assert_eq!(p.error_bound(), 1026);
        assert!(p.error_bound() < 2048);
        assert_eq!(p.public_key_len(), 4112);
        assert_eq!(p.ciphertext_len(), 2304);
    }

    #[test]
    fn invalid_params_rejected() {
        // q not a power of two
        assert!(ToyLweParams::new(128, 8000, 2, 8, 16).is_err());
        // 2·128·9 + 3 = 2307 ≥ 2048
        assert!(ToyLweParams::new(128, 8192, 3, 8, 16).is_err());
        // 8·8 = 64 bits
        assert!(ToyLweParams::new(128, 8192, 2, 8, 8).is_err());
    }

    #[test]
    fn encode_decode_tolerates_errors_below_quarter() {
        let q = 8192u32;
        for bit in 0..2u8 {
            for e in -(q as i64 / 4 - 1)..(q as i64 / 4) {
                let sym = (i64::from(encode_bit(bit, q)) + e).rem_euclid(i64::from(q)) as u16;
                assert_eq!(decode_symbol(sym, q), bit, "bit {bit} err {e}");
            }
        }
        // boundary: q/4 itself decodes to 0, just past it to 1
        assert_eq!(decode_symbol(2048, q), 0);
        assert_eq!(decode_symbol(2049, q), 1);
        assert_eq!(decode_symbol(6144, q), 1);
        assert_eq!(decode_symbol(6145, q), 0);
    }

    #[test]
    fn pack_roundtrip_masks_high_bits() {
        let m = Matrix::from_signed(2, 2, &[-1, 0, 5, 8191], 8192);
        assert_eq!(m.entries(), &[8191, 0, 5, 8191]);
        let mut packed = m.pack();
        assert_eq!(packed.len(), 8);
        assert_eq!(Matrix::unpack(&packed, 2, 2, 8192), m);
        packed[1] |= 0xE0;
        assert_eq!(Matrix::unpack(&packed, 2, 2, 8192), m);
    }

    #[test]
    fn zero_noise_decrypts_exact_encoding() {
        let kem = ToyLwe::new(ToyLweParams::DEFAULT).with_noise(Noise::Zero);
        let kp = kem.keygen(&[7; 32]);
        let seed = [9; 32];
        let (ct, ss) = kem.encapsulate(&kp.public_key, &seed).unwrap();
        let p = ToyLweParams::DEFAULT;
        let s = Matrix::unpack(&kp.secret_key[..2 * p.n * p.w], p.n, p.w, p.q);
        let c1 = Matrix::unpack(&ct[..2 * p.u * p.n], p.u, p.n, p.q);
        let c2 = Matrix::unpack(&ct[2 * p.u * p.n..], p.u, p.w, p.q);
        let m = c2.sub(&c1.mul(&s, p.q), p.q);
        let expected = kem.message_bits_for_seed(&seed);
        for (sym, bit) in m.entries().iter().zip(&expected) {
            assert_eq!(*sym, encode_bit(*bit, p.q));
        }
        assert_eq!(kem.decapsulate(&kp.secret_key, &ct).unwrap(), ss);
    }

    #[test]
    fn wire_lengths_checked() {
        let kem = ToyLwe::new(ToyLweParams::DEFAULT);
        let kp = kem.keygen(&[1; 32]);
        assert!(matches!(
            kem.encapsulate(&kp.public_key[1..], &[0; 32]),
            Err(KemError::MalformedPublicKey { expected: 4112, actual: 4111 })
        ));
        assert!(matches!(
            kem.decapsulate(&kp.secret_key, &[0; 10]),
            Err(KemError::MalformedCiphertext { expected: 2304, actual: 10 })
        ));
    }
}
