//! Rating-stratified, seeded sampling of raw reviews.
//!
//! A [`SamplingScheme`] assigns an integer weight to each star rating, written
//! as `R` followed by five digits (`R12421` oversamples 2- and 4-star reviews by
//! two and 3-star reviews by four). Each review is selected with probability
//! proportional to the weight of its rating.
//!
//! The default draw is weighted sampling without replacement using
//! exponential keys: every review gets `key = u^(1/w)` and the `n` largest keys
//! win. The uniform `u` is derived from `(seed, review id)`, so the selected set
//! does not depend on pool order. When a stratum runs out, the remaining draws
//! fall to the other nonzero strata.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Restaurant,
    Laptop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Yelp,
    Amazon,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Yelp => "yelp",
            Source::Amazon => "amazon",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawReview {
    pub id: String,
    pub text: String,
    pub stars: u8,
    pub domain: Domain,
    pub source: Source,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SampleError {
    #[error("invalid sampling scheme {0:?}: expected 'R' followed by five digits")]
    BadSchemeName(String),
    #[error("sampling scheme has all-zero weights")]
    AllZeroWeights,
    #[error("review {id}: stars {stars} outside 1..=5")]
    BadStars { id: String, stars: u8 },
    #[error("review {0}: empty text")]
    EmptyText(String),
    #[error("duplicate review id {0}")]
    DuplicateId(String),
}

/// Per-star weights, index 0 is 1 star.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SamplingScheme {
    weights: [u8; 5],
}

impl SamplingScheme {
    pub fn new(weights: [u8; 5]) -> Result<Self, SampleError> {
        if weights.iter().all(|&w| w == 0) {
            return Err(SampleError::AllZeroWeights);
        }
        if weights.iter().any(|&w| w > 9) {
            return Err(SampleError::BadSchemeName(format!("{weights:?}")));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> [u8; 5] {
        self.weights
    }

    /// Weight for a 1..=5 star rating; out-of-range ratings weigh zero.
    pub fn weight(&self, stars: u8) -> u8 {
        match stars {
            1..=5 => self.weights[usize::from(stars - 1)],
            _ => 0,
        }
    }

    pub fn name(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for SamplingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("R")?;
        for w in self.weights {
            write!(f, "{w}")?;
        }
        Ok(())
    }
}

impl FromStr for SamplingScheme {
    type Err = SampleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SampleError::BadSchemeName(s.to_string());
        let digits = s.strip_prefix('R').ok_or_else(bad)?;
        if digits.len() != 5 || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let mut weights = [0u8; 5];
        for (w, b) in weights.iter_mut().zip(digits.bytes()) {
            *w = b - b'0';
        }
        Self::new(weights)
    }
}

impl Serialize for SamplingScheme {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SamplingScheme {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub reviews: Vec<RawReview>,
    /// Non-fatal conditions: empty pools, dropped duplicate texts, short pools.
    pub warnings: Vec<String>,
}

/// Checks pool invariants: ratings in range, non-blank text, unique ids.
pub fn validate_pool(pool: &[RawReview]) -> Result<(), SampleError> {
    let mut ids = HashSet::with_capacity(pool.len());
    for r in pool {
        if !(1..=5).contains(&r.stars) {
            return Err(SampleError::BadStars {
                id: r.id.clone(),
                stars: r.stars,
            });
        }
        if r.text.trim().is_empty() {
            return Err(SampleError::EmptyText(r.id.clone()));
        }
        if !ids.insert(r.id.as_str()) {
            return Err(SampleError::DuplicateId(r.id.clone()));
        }
    }
    Ok(())
}

/// Keeps the first review for every exact text.
fn dedup_by_text<'a>(pool: &'a [RawReview], warnings: &mut Vec<String>) -> Vec<&'a RawReview> {
    let mut seen = HashSet::with_capacity(pool.len());
    let kept: Vec<_> = pool
        .iter()
        .filter(|r| seen.insert(Sha256::digest(r.text.as_bytes())))
        .collect();
    let dropped = pool.len() - kept.len();
    if dropped > 0 {
        warnings.push(format!("dropped {dropped} reviews with duplicate text"));
    }
    kept
}

/// Uniform in (0, 1) derived from the seed and the review id.
fn keyed_uniform(seed: u64, id: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let digest = h.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    let bits = u64::from_le_bytes(word) >> 11;
    (bits as f64 + 0.5) / (1u64 << 53) as f64
}

/// Weighted sampling without replacement. Returns `min(n, eligible)` reviews,
/// ordered by decreasing priority key.
pub fn stratified_sample(
    pool: &[RawReview],
    scheme: &SamplingScheme,
    n: usize,
    seed: u64,
) -> Result<SampleOutcome, SampleError> {
    validate_pool(pool)?;
    let mut warnings = Vec::new();
    if pool.is_empty() {
        if n > 0 {
            warnings.push(format!("empty pool, requested {n} reviews"));
        }
        return Ok(SampleOutcome {
            reviews: Vec::new(),
            warnings,
        });
    }
    let candidates = dedup_by_text(pool, &mut warnings);

    // ln(u)/w orders items exactly as u^(1/w) and avoids underflow.
    let mut keyed: Vec<(f64, &RawReview)> = candidates
        .into_iter()
        .filter_map(|r| {
            let w = scheme.weight(r.stars);
            (w > 0).then(|| (keyed_uniform(seed, &r.id).ln() / f64::from(w), r))
        })
        .collect();
    if keyed.len() < n {
        warnings.push(format!(
            "requested {n} reviews but only {} are eligible under {scheme}",
            keyed.len()
        ));
    }
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.id.cmp(&b.1.id)));
    keyed.truncate(n);
    Ok(SampleOutcome {
        reviews: keyed.into_iter().map(|(_, r)| r.clone()).collect(),
        warnings,
    })
}

/// Draws exactly `n` reviews (when any are eligible), picking a star stratum
/// with probability proportional to `weight * stratum size` and then the next
/// review from that stratum's shuffled deck. A deck is reshuffled only when it
/// is exhausted, so reviews repeat only after their whole stratum has been used.
pub fn stratified_sample_with_refill(
    pool: &[RawReview],
    scheme: &SamplingScheme,
    n: usize,
    seed: u64,
) -> Result<SampleOutcome, SampleError> {
    validate_pool(pool)?;
    let mut warnings = Vec::new();
    let candidates = dedup_by_text(pool, &mut warnings);

    let mut strata: Vec<Vec<&RawReview>> = vec![Vec::new(); 5];
    for r in candidates {
        if scheme.weight(r.stars) > 0 {
            strata[usize::from(r.stars - 1)].push(r);
        }
    }
    let masses: Vec<u64> = strata
        .iter()
        .enumerate()
        .map(|(i, s)| u64::from(scheme.weights[i]) * s.len() as u64)
        .collect();
    if masses.iter().all(|&m| m == 0) {
        if n > 0 {
            warnings.push(format!("no eligible reviews under {scheme}"));
        }
        return Ok(SampleOutcome {
            reviews: Vec::new(),
            warnings,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picker = WeightedIndex::new(&masses).expect("at least one positive mass");
    let mut decks: Vec<Vec<&RawReview>> = strata.iter().map(|_| Vec::new()).collect();
    let mut dealt = [false; 5];
    let mut refilled = false;
    let mut reviews = Vec::with_capacity(n);
    for _ in 0..n {
        let s = picker.sample(&mut rng);
        if decks[s].is_empty() {
            refilled |= dealt[s];
            dealt[s] = true;
            let mut deck = strata[s].clone();
            deck.shuffle(&mut rng);
            decks[s] = deck;
        }
        let r = decks[s].pop().expect("deck refilled");
        reviews.push(r.clone());
    }
    if refilled {
        warnings.push("strata exhausted and refilled; output contains repeats".to_string());
    }
    Ok(SampleOutcome { reviews, warnings })
}

/// Seeded choice of `k` distinct items, e.g. in-context demonstrations drawn
/// from a training split. Order follows the draw.
pub fn choose_demos<T: Clone>(items: &[T], k: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, items.len(), k.min(items.len()))
        .into_iter()
        .map(|i| items[i].clone())
        .collect()
}

/// Count of reviews per star rating, index 0 is 1 star.
pub fn star_histogram(reviews: &[RawReview]) -> [usize; 5] {
    let mut h = [0usize; 5];
    for r in reviews {
        if (1..=5).contains(&r.stars) {
            h[usize::from(r.stars - 1)] += 1;
        }
    }
    h
}

/// Index reviews by id.
pub fn index_by_id(reviews: &[RawReview]) -> HashMap<&str, &RawReview> {
    reviews.iter().map(|r| (r.id.as_str(), r)).collect()
}
