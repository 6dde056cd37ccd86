//! Uniform discretization of a continuous target range into `K` bins.
//!
//! Targets are assigned to the bin whose center is nearest; class
//! distributions are decoded back to a score by the expectation over bin
//! centers.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Maximum deviation of a probability vector's sum from 1.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BinError {
    #[error("invalid range: min {min} must be below max {max}")]
    InvalidRange { min: f64, max: f64 },
    #[error("invalid bin count {0}: need at least 2")]
    InvalidK(usize),
    #[error("non-finite target {value} at position {position}")]
    NonFiniteTarget { value: f64, position: usize },
    #[error("expected {expected} probabilities, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("negative probability {value} at index {index}")]
    NegativeProbability { value: f64, index: usize },
    #[error("probabilities sum to {0}, not 1")]
    SumOutOfTolerance(f64),
}

/// A uniform binning of `[min_value, max_value]` into `k` bins.
///
/// Centers sit at `min + w * (i + 0.5)`, so every center is interior and the
/// nearest-center round trip is off by at most `w / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinSpec {
    min_value: f64,
    max_value: f64,
    k: usize,
    centers: Vec<f64>,
}

impl BinSpec {
    pub fn new(min_value: f64, max_value: f64, k: usize) -> Result<Self, BinError> {
        build_bins(min_value, max_value, k)
    }

    pub fn min_value(&self) -> f64 {
        self.min_value
    }

    pub fn max_value(&self) -> f64 {
        self.max_value
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn width(&self) -> f64 {
        (self.max_value - self.min_value) / self.k as f64
    }

    pub fn one_hot(&self, index: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.k];
        p[index] = 1.0;
        p
    }

    pub fn encode(&self, target: f64) -> Result<usize, BinError> {
        encode_value(self, target)
    }

    pub fn decode(&self, probs: &[f64]) -> Result<f64, BinError> {
        decode_distribution(self, probs)
    }
}

pub fn build_bins(min_value: f64, max_value: f64, k: usize) -> Result<BinSpec, BinError> {
    if !(min_value.is_finite() && max_value.is_finite()) || min_value >= max_value {
        return Err(BinError::InvalidRange {
            min: min_value,
            max: max_value,
        });
    }
    if k < 2 {
        return Err(BinError::InvalidK(k));
    }
    let w = (max_value - min_value) / k as f64;
    let centers = (0..k).map(|i| min_value + w * (i as f64 + 0.5)).collect();
    Ok(BinSpec {
        min_value,
        max_value,
        k,
        centers,
    })
}

/// Index of the nearest bin center. Out-of-range targets clamp to the end
/// bins; a target exactly between two centers goes to the lower one.
pub fn encode_value(spec: &BinSpec, target: f64) -> Result<usize, BinError> {
    encode_at(spec, target, 0)
}

fn encode_at(spec: &BinSpec, target: f64, position: usize) -> Result<usize, BinError> {
    if !target.is_finite() {
        return Err(BinError::NonFiniteTarget {
            value: target,
            position,
        });
    }
    // Position in units of bin width, measured from the first center.
    let scaled = (target - spec.centers[0]) / spec.width();
    if scaled <= 0.0 {
        return Ok(0);
    }
    let last = spec.k - 1;
    if scaled >= last as f64 {
        return Ok(last);
    }
    let lower = scaled.floor() as usize;
    let upper = lower + 1;
    // Decide on actual distances so ties and round-off follow the argmin rule.
    let d_lower = (target - spec.centers[lower]).abs();
    let d_upper = (spec.centers[upper] - target).abs();
    Ok(if d_upper < d_lower { upper } else { lower })
}

pub fn decode_distribution(spec: &BinSpec, probs: &[f64]) -> Result<f64, BinError> {
    if probs.len() != spec.k {
        return Err(BinError::LengthMismatch {
            expected: spec.k,
            got: probs.len(),
        });
    }
    let mut sum = 0.0;
    for (index, &p) in probs.iter().enumerate() {
        if p < 0.0 || !p.is_finite() {
            return Err(BinError::NegativeProbability { value: p, index });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(BinError::SumOutOfTolerance(sum));
    }
    let value: f64 = probs.iter().zip(&spec.centers).map(|(p, b)| p * b).sum();
    // Round-off can nudge a one-hot decode past the outer centers.
    Ok(value.clamp(spec.centers[0], spec.centers[spec.k - 1]))
}

pub fn quantize_targets(spec: &BinSpec, targets: &[f64]) -> Result<Vec<usize>, BinError> {
    targets
        .iter()
        .enumerate()
        .map(|(i, &t)| encode_at(spec, t, i))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct BinSpecRepr {
    min: f64,
    max: f64,
    k: usize,
}

impl Serialize for BinSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        BinSpecRepr {
            min: self.min_value,
            max: self.max_value,
            k: self.k,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BinSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = BinSpecRepr::deserialize(deserializer)?;
        build_bins(repr.min, repr.max, repr.k).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec5() -> BinSpec {
        build_bins(1.0, 10.0, 5).unwrap()
    }

    fn brute_force_nearest(centers: &[f64], t: f64) -> usize {
        let mut best = 0;
        for i in 1..centers.len() {
            if (t - centers[i]).abs() < (t - centers[best]).abs() {
                best = i;
            }
        }
        best
    }

    #[test]
    fn ava_range_with_51_bins() {
        let s = build_bins(1.0, 10.0, 51).unwrap();
        assert_eq!(s.centers().len(), 51);
        assert!((s.width() - 9.0 / 51.0).abs() < 1e-15);
    }

    #[test]
    fn two_bins_on_unit_interval() {
        let s = build_bins(0.0, 1.0, 2).unwrap();
        assert_eq!(s.centers(), &[0.25, 0.75]);
    }

    #[test]
    fn five_bin_centers() {
        let expected = [1.9, 3.7, 5.5, 7.3, 9.1];
        for (c, e) in spec5().centers().iter().zip(expected) {
            assert!((c - e).abs() < 1e-12, "{c} vs {e}");
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(matches!(build_bins(2.0, 2.0, 5), Err(BinError::InvalidRange { .. })));
        assert!(matches!(build_bins(3.0, 1.0, 5), Err(BinError::InvalidRange { .. })));
        assert_eq!(build_bins(0.0, 1.0, 1), Err(BinError::InvalidK(1)));
    }

    #[test]
    fn encode_examples() {
        let s = spec5();
        assert_eq!(encode_value(&s, 5.3).unwrap(), 2);
        assert_eq!(encode_value(&s, 1.9).unwrap(), 0);
        assert_eq!(encode_value(&s, 12.0).unwrap(), 4);
        assert_eq!(encode_value(&s, -3.0).unwrap(), 0);
        assert!(matches!(
            encode_value(&s, f64::NAN),
            Err(BinError::NonFiniteTarget { .. })
        ));
    }

    #[test]
    fn tie_goes_to_lower_bin() {
        let s = build_bins(0.0, 1.0, 2).unwrap();
        assert_eq!(encode_value(&s, 0.5).unwrap(), 0);
        let s = build_bins(0.0, 4.0, 4).unwrap();
        assert_eq!(encode_value(&s, 2.0).unwrap(), 1);
    }

    #[test]
    fn decode_examples() {
        let s = spec5();
        assert!((decode_distribution(&s, &s.one_hot(2)).unwrap() - 5.5).abs() < 1e-12);
        assert!((decode_distribution(&s, &[0.2; 5]).unwrap() - 5.5).abs() < 1e-12);
        let d = decode_distribution(&s, &[0.5, 0.5, 0.0, 0.0, 0.0]).unwrap();
        assert!((d - 2.8).abs() < 1e-12);
    }

    #[test]
    fn decode_errors() {
        let s = spec5();
        assert_eq!(
            decode_distribution(&s, &[0.5, 0.5]),
            Err(BinError::LengthMismatch { expected: 5, got: 2 })
        );
        assert!(matches!(
            decode_distribution(&s, &[1.2, -0.2, 0.0, 0.0, 0.0]),
            Err(BinError::NegativeProbability { index: 1, .. })
        ));
        assert!(matches!(
            decode_distribution(&s, &[0.5, 0.4, 0.0, 0.0, 0.0]),
            Err(BinError::SumOutOfTolerance(_))
        ));
        // Within tolerance is accepted.
        assert!(decode_distribution(&s, &[0.2 + 5e-7, 0.2, 0.2, 0.2, 0.2]).is_ok());
    }

    #[test]
    fn quantize_examples() {
        let s = spec5();
        assert_eq!(quantize_targets(&s, &[1.9, 9.1]).unwrap(), vec![0, 4]);
        assert!(quantize_targets(&s, &[]).unwrap().is_empty());
        assert_eq!(
            quantize_targets(&s, &[1.0, f64::INFINITY]),
            Err(BinError::NonFiniteTarget {
                value: f64::INFINITY,
                position: 1
            })
        );
    }

    #[test]
    fn quantize_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let s = build_bins(1.0, 10.0, 51).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let targets: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..11.0)).collect();
        let got = quantize_targets(&s, &targets).unwrap();
        for (t, g) in targets.iter().zip(got) {
            assert_eq!(g, brute_force_nearest(s.centers(), *t));
        }
    }

    #[test]
    fn serializes_without_centers() {
        let s = spec5();
        let text = toml::to_string(&s).unwrap();
        assert!(!text.contains("centers"));
        let back: BinSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert!(toml::from_str::<BinSpec>("min = 1.0\nmax = 0.0\nk = 3").is_err());
    }

    fn distribution(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, k).prop_filter_map("zero mass", |raw| {
            let total: f64 = raw.iter().sum();
            (total > 1e-3).then(|| raw.iter().map(|x| x / total).collect())
        })
    }

    proptest! {
        #[test]
        fn round_trip_within_half_width(k in 2usize..120, t in 0.0f64..1.0) {
            let s = build_bins(-3.0, 7.0, k).unwrap();
            let target = -3.0 + 10.0 * t;
            let i = encode_value(&s, target).unwrap();
            let back = decode_distribution(&s, &s.one_hot(i)).unwrap();
            prop_assert!((back - target).abs() <= s.width() / 2.0 + 1e-12);
        }

        #[test]
        fn encode_is_monotone(k in 2usize..60, a in -2.0f64..12.0, b in -2.0f64..12.0) {
            let s = build_bins(1.0, 10.0, k).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(encode_value(&s, lo).unwrap() <= encode_value(&s, hi).unwrap());
        }

        #[test]
        fn decode_is_affine(p in distribution(7), q in distribution(7), alpha in 0.0f64..1.0) {
            let s = build_bins(1.0, 10.0, 7).unwrap();
            let mix: Vec<f64> = p.iter().zip(&q).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
            let lhs = decode_distribution(&s, &mix).unwrap();
            let rhs = alpha * decode_distribution(&s, &p).unwrap()
                + (1.0 - alpha) * decode_distribution(&s, &q).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }

        #[test]
        fn refinement_tightens_error(k in 2usize..40, m in 2usize..5, t in 0.0f64..1.0) {
            let coarse = build_bins(0.0, 1.0, k).unwrap();
            let fine = build_bins(0.0, 1.0, k * m).unwrap();
            let err = |s: &BinSpec| {
                let i = encode_value(s, t).unwrap();
                (s.centers()[i] - t).abs()
            };
            prop_assert!(err(&fine) <= fine.width() / 2.0 + 1e-12);
            prop_assert!(fine.width() / 2.0 < coarse.width() / 2.0);
        }
    }
}
