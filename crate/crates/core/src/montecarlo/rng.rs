use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random streams derived from one base seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamPurpose {
    Design = 1,
    Noise = 2,
    TrueParameter = 3,
    Clt = 4,
}

/// ChaCha8 keyed by `(base_seed, m, purpose)` on stream `index`.
pub fn stream_rng(base_seed: u64, m: usize, purpose: StreamPurpose, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&base_seed.to_le_bytes());
    key[8..16].copy_from_slice(&(m as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(purpose as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
