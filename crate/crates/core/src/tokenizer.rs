//! Byte-level tokenizer over a fixed 384-entry vocabulary.
//!
//! Layout: ids 0..=255 are raw bytes, then `PAD`, `UNK`, `EOS`, and 125
//! sentinel mask tokens occupying 259..=383.

use crate::error::{Error, Result};

pub type TokenId = u16;

pub const VOCAB_SIZE: usize = 384;
pub const PAD: TokenId = 256;
pub const UNK: TokenId = 257;
pub const EOS: TokenId = 258;
pub const FIRST_SENTINEL: TokenId = 259;
pub const NUM_SENTINELS: usize = 125;

/// Describes the compiled-in vocabulary; serialized into checkpoint manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Vocabulary {
    pub size: usize,
    pub pad: TokenId,
    pub unk: TokenId,
    pub eos: TokenId,
    pub first_sentinel: TokenId,
    pub num_sentinels: usize,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self {
            size: VOCAB_SIZE,
            pad: PAD,
            unk: UNK,
            eos: EOS,
            first_sentinel: FIRST_SENTINEL,
            num_sentinels: NUM_SENTINELS,
        }
    }
}

pub fn encode(s: &[u8]) -> Vec<TokenId> {
    s.iter().map(|&b| TokenId::from(b)).collect()
}

/// Inverse of [`encode`]. PAD and EOS are dropped, sentinels render as
/// `<M{i}>` and UNK as `?`.
pub fn decode(tokens: &[TokenId]) -> Vec<u8> {
    let mut out = Vec::with_capacity(tokens.len());
    for &t in tokens {
        match t {
            0..=255 => out.push(t as u8),
            PAD | EOS => {}
            UNK => out.push(b'?'),
            t => match sentinel_index(t) {
                Some(i) => out.extend_from_slice(format!("<M{i}>").as_bytes()),
                None => out.push(b'?'),
            },
        }
    }
    out
}

pub fn sentinel(i: usize) -> Result<TokenId> {
    if i >= NUM_SENTINELS {
        return Err(Error::SentinelExhausted(i));
    }
    Ok(FIRST_SENTINEL + i as TokenId)
}

pub fn sentinel_index(t: TokenId) -> Option<usize> {
    let t = t as usize;
    let first = FIRST_SENTINEL as usize;
    (first..first + NUM_SENTINELS)
        .contains(&t)
        .then(|| t - first)
}

pub fn is_byte(t: TokenId) -> bool {
    t < 256
}

pub fn is_special(t: TokenId) -> bool {
    t >= 256
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_examples() {
        assert_eq!(encode(b"ACGT"), vec![65, 67, 71, 84]);
        assert!(encode(b"").is_empty());
        assert_eq!(encode(b"AA"), vec![65, 65]);
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode(&[65, 67, 71, 84]), b"ACGT");
        assert_eq!(decode(&[65, PAD, PAD]), b"A");
        assert_eq!(decode(&[259, 65]), b"<M0>A");
        assert_eq!(decode(&[UNK, EOS]), b"?");
    }

    #[test]
    fn sentinel_ids() {
        assert_eq!(sentinel(0).unwrap(), 259);
        assert_eq!(sentinel(124).unwrap(), 383);
        assert!(matches!(sentinel(125), Err(Error::SentinelExhausted(125))));
        assert_eq!(sentinel_index(383), Some(124));
        assert_eq!(sentinel_index(EOS), None);
    }

    #[test]
    fn layout_is_consistent() {
        let v = Vocabulary::default();
        assert_eq!(v.first_sentinel as usize + v.num_sentinels, v.size);
        assert_eq!(v.size, 384);
    }

    proptest! {
        #[test]
        fn encode_is_position_local(mut s in prop::collection::vec(any::<u8>(), 1..64), i in 0usize..64, b in any::<u8>()) {
            let i = i % s.len();
            let before = encode(&s);
            s[i] = b;
            let after = encode(&s);
            prop_assert_eq!(before.len(), after.len());
            for j in 0..s.len() {
                if j != i {
                    prop_assert_eq!(before[j], after[j]);
                }
            }
        }
    }
}
