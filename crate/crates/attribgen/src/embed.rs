//! Deterministic hashing embedder for tests and demos. Character trigrams
//! of the lowercased, padded text are hashed into signed buckets.

use attralign::numerics::Vector;

use crate::AttribError;

pub const TOY_DIM: usize = 64;
pub const TOY_SEED: u64 = 7;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed.wrapping_mul(FNV_PRIME);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

pub fn embed_toy(text: &str) -> Result<Vector, AttribError> {
    embed_toy_with(text, TOY_DIM, TOY_SEED)
}

pub fn embed_toy_with(text: &str, dim: usize, seed: u64) -> Result<Vector, AttribError> {
    let trimmed = text.trim();
    if trimmed.is_empty() || dim == 0 {
        return Err(AttribError::EmptyText);
    }
    let chars: Vec<char> = format!("  {}  ", trimmed.to_lowercase()).chars().collect();
    let mut acc = vec![0.0; dim];
    let mut buf = String::new();
    for w in chars.windows(3) {
        buf.clear();
        buf.extend(w);
        let h = fnv1a(seed, buf.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        acc[(h % dim as u64) as usize] += sign;
    }
    let v = Vector::new(acc).expect("finite counts");
    // a sign-cancelling collision can zero every bucket; fall back to a seed bucket
    v.normalized().or_else(|_| {
        let mut e = vec![0.0; dim];
        e[(fnv1a(seed, trimmed.as_bytes()) % dim as u64) as usize] = 1.0;
        Ok(Vector::new(e).expect("finite"))
    })
}
