//! Hashed unigram + bigram features over lowercased tokens.

/// Sparse feature vector: strictly increasing bucket indices with values.
pub type FeatureVector = Vec<(u32, f64)>;

/// Maximal runs of alphanumeric characters, lowercased.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// 64-bit FNV-1a; stable across platforms and releases.
fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

pub fn unigram_bucket(token: &str, n_buckets: u32) -> u32 {
    (fnv1a(&[b"1:", token.as_bytes()]) % u64::from(n_buckets)) as u32
}

pub fn bigram_bucket(first: &str, second: &str, n_buckets: u32) -> u32 {
    (fnv1a(&[b"2:", first.as_bytes(), b" ", second.as_bytes()]) % u64::from(n_buckets)) as u32
}

/// Counts of hashed 1- and 2-grams, scaled to unit L2 norm.
pub fn featurize(text: &str, n_buckets: u32) -> FeatureVector {
    let tokens = tokenize(text);
    let mut buckets: Vec<u32> = tokens.iter().map(|t| unigram_bucket(t, n_buckets)).collect();
    buckets.extend(tokens.windows(2).map(|w| bigram_bucket(&w[0], &w[1], n_buckets)));
    buckets.sort_unstable();
    let mut out: FeatureVector = Vec::new();
    for b in buckets {
        match out.last_mut() {
            Some((idx, count)) if *idx == b => *count += 1.0,
            _ => out.push((b, 1.0)),
        }
    }
    let norm = out.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, v) in &mut out {
            *v /= norm;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenization() {
        assert_eq!(tokenize("[SIA intensity=0.80]\nOh, GREAT!"), ["sia", "intensity", "0", "80", "oh", "great"]);
        assert!(tokenize("  ...  ").is_empty());
    }

    #[test]
    fn features_are_normalized_and_sorted() {
        let f = featurize("a b a b a", 1 << 18);
        assert!(f.windows(2).all(|w| w[0].0 < w[1].0));
        let norm: f64 = f.iter().map(|(_, v)| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(featurize("", 16).is_empty());
    }

    #[test]
    fn counts_before_normalization() {
        // tokens: x x -> unigram x twice, bigram "x x" once
        let f = featurize("x x", 1 << 18);
        assert_eq!(f.len(), 2);
        let ux = unigram_bucket("x", 1 << 18);
        let v = f.iter().find(|(i, _)| *i == ux).unwrap().1;
        assert!((v - 2.0 / 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn hashing_is_stable() {
        // frozen values guard against accidental changes to the hash
        assert_eq!(fnv1a(&[b""]), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(&[b"a"]), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(unigram_bucket("sarcasm", 1 << 18), unigram_bucket("sarcasm", 1 << 18));
        assert_ne!(unigram_bucket("ab", 1 << 18), bigram_bucket("a", "b", 1 << 18));
    }
}
