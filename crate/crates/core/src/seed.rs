//! Deterministic seed derivation.
//!
//! Every random stream in the pipeline is keyed by a tuple of integers so
//! results do not depend on iteration or scheduling order.

/// Dataset split a pair belongs to. The split occupies the top two bits of
/// every derived pair seed, which keeps the seed spaces disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn id(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    /// Recovers the split from a pair seed.
    pub fn of_seed(seed: u64) -> Option<Split> {
        match seed >> 62 {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a sequence of integers into one 64-bit seed.
pub fn derive(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5eed_5eed_5eed_5eed, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Seed of one expression-dataset pair.
pub fn pair_seed(global: u64, split: Split, expression: u64, pair: u64) -> u64 {
    (split.id() << 62) | (derive(&[global, split.id(), expression, pair]) >> 2)
}
