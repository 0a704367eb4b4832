//! Seed streams and the three row-sampling regimes: bootstrap, subsampling and
//! disjoint population blocks.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finaliser; a bijective 64-bit mixer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive combination of two words.
#[inline]
pub fn mix(a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(a) ^ b.wrapping_mul(GOLDEN).rotate_left(23))
}

/// Uniform draw in (0, 1) determined entirely by `key`.
#[inline]
pub fn hash_uniform(key: u64) -> f64 {
    ((splitmix64(key) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw determined entirely by `key` (Box-Muller).
#[inline]
pub fn hash_normal(key: u64) -> f64 {
    let u1 = hash_uniform(key);
    let u2 = hash_uniform(key ^ 0xD1B5_4A32_D192_ED03);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A master seed plus a stream id. Child streams are derived by mixing tags
/// into the stream id, so a learner's draws depend only on its position in the
/// derivation tree and never on scheduling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master: u64,
    pub stream: u64,
}

impl SeedSpec {
    pub fn new(master: u64) -> Self {
        SeedSpec { master, stream: 0 }
    }

    pub fn child(self, tag: u64) -> Self {
        SeedSpec {
            master: self.master,
            stream: mix(self.stream, tag),
        }
    }

    /// Child stream keyed by a label, for readability at call sites.
    pub fn named(self, label: &str) -> Self {
        let tag = label.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x100_0000_01B3)
        });
        self.child(tag)
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.stream);
        rng
    }

    /// A single word summarising the stream, for keyed hashing.
    pub fn key(self) -> u64 {
        mix(self.master, self.stream)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleKind {
    Bootstrap,
    Subsample,
    Population,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResamplePlan {
    pub kind: ResampleKind,
    /// Subsample fraction; ignored by the other kinds.
    pub rate: f64,
    /// Ensemble size B.
    pub members: usize,
}

impl ResamplePlan {
    pub fn subsample(rate: f64, members: usize) -> Self {
        ResamplePlan {
            kind: ResampleKind::Subsample,
            rate,
            members,
        }
    }

    pub fn bootstrap(members: usize) -> Self {
        ResamplePlan {
            kind: ResampleKind::Bootstrap,
            rate: 1.0,
            members,
        }
    }

    pub fn population(members: usize) -> Self {
        ResamplePlan {
            kind: ResampleKind::Population,
            rate: 1.0,
            members,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.members == 0 {
            return Err(Error::InvalidParam("ensemble size must be positive".into()));
        }
        if self.kind == ResampleKind::Subsample && !(self.rate > 0.0 && self.rate <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "subsample rate must lie in (0, 1], got {}",
                self.rate
            )));
        }
        Ok(())
    }
}

/// Number of rows a subsample of `n` at `rate` holds: ⌈rate·n⌉, at least one.
pub fn subsample_size(n: usize, rate: f64) -> usize {
    ((rate * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

/// Row indices for ensemble member `member` (0-based) drawn from `source_rows`.
///
/// Subsample indices come back sorted; bootstrap indices keep draw order;
/// population returns the member's contiguous block of `source_rows / B` rows.
pub fn draw_indices(
    plan: &ResamplePlan,
    member: usize,
    source_rows: usize,
    seed: SeedSpec,
) -> Result<Vec<usize>> {
    plan.validate()?;
    if member >= plan.members {
        return Err(Error::InvalidParam(format!(
            "member {member} out of range for B={}",
            plan.members
        )));
    }
    if source_rows == 0 {
        return Err(Error::InvalidData(
            "cannot resample an empty dataset".into(),
        ));
    }
    match plan.kind {
        ResampleKind::Bootstrap => {
            let mut rng = seed.rng();
            Ok((0..source_rows)
                .map(|_| rng.random_range(0..source_rows))
                .collect())
        }
        ResampleKind::Subsample => {
            let m = subsample_size(source_rows, plan.rate);
            if m == source_rows {
                return Ok((0..source_rows).collect());
            }
            let mut rows = index::sample(&mut seed.rng(), source_rows, m).into_vec();
            rows.sort_unstable();
            Ok(rows)
        }
        ResampleKind::Population => {
            if !source_rows.is_multiple_of(plan.members) {
                return Err(Error::InvalidData(format!(
                    "population sampling needs B·N rows; {source_rows} is not a multiple of B={}",
                    plan.members
                )));
            }
            let n = source_rows / plan.members;
            Ok((member * n..(member + 1) * n).collect())
        }
    }
}

/// Number of features eligible under `mtry`: round-half-up of mtry·K, at least one.
pub fn feature_count(k: usize, mtry: f64) -> usize {
    ((mtry * k as f64 + 0.5 + 1e-9).floor() as usize).clamp(1, k.max(1))
}

/// Uniformly chosen feature subset of size [`feature_count`], sorted.
/// Consumes no randomness when every feature is kept.
pub fn choose_features<R: Rng + ?Sized>(k: usize, mtry: f64, rng: &mut R) -> Vec<usize> {
    let m = feature_count(k, mtry);
    if m >= k {
        return (0..k).collect();
    }
    let mut chosen = index::sample(rng, k, m).into_vec();
    chosen.sort_unstable();
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn subsample_two_thirds_of_nine() {
        let rows = draw_indices(
            &ResamplePlan::subsample(2.0 / 3.0, 5),
            0,
            9,
            SeedSpec::new(3),
        )
        .unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn population_blocks() {
        let plan = ResamplePlan::population(3);
        let blocks: Vec<Vec<usize>> = (0..3)
            .map(|b| draw_indices(&plan, b, 12, SeedSpec::new(0)).unwrap())
            .collect();
        assert_eq!(blocks[0], vec![0, 1, 2, 3]);
        assert_eq!(blocks[1], vec![4, 5, 6, 7]);
        assert_eq!(blocks[2], vec![8, 9, 10, 11]);
        assert!(draw_indices(&plan, 0, 13, SeedSpec::new(0)).is_err());
    }

    #[test]
    fn bootstrap_distinct_count_matches_closed_form() {
        // E[#distinct] for N=5 draws with replacement from 5 is 5(1 - (4/5)^5).
        let expected = 5.0 * (1.0 - 0.8f64.powi(5));
        let plan = ResamplePlan::bootstrap(1);
        let trials = 100_000;
        let root = SeedSpec::new(2024);
        let mut total = 0usize;
        for t in 0..trials {
            let mut rows = draw_indices(&plan, 0, 5, root.child(t)).unwrap();
            assert_eq!(rows.len(), 5);
            rows.sort_unstable();
            rows.dedup();
            total += rows.len();
        }
        let mean = total as f64 / trials as f64;
        assert!((mean - expected).abs() < 0.01, "mean {mean} vs {expected}");
    }

    #[test]
    fn feature_counts() {
        let mut rng = SeedSpec::new(1).rng();
        assert_eq!(choose_features(10, 0.9, &mut rng).len(), 9);
        assert_eq!(
            choose_features(7, 1.0, &mut rng),
            (0..7).collect::<Vec<_>>()
        );
        assert_eq!(choose_features(3, 0.1, &mut rng).len(), 1);
        assert_eq!(feature_count(10, 1.0 / 3.0), 3);
        assert_eq!(feature_count(10, 0.5), 5);
        assert_eq!(feature_count(5, 0.5), 3);
    }

    #[test]
    fn full_mtry_consumes_no_randomness() {
        let mut a = SeedSpec::new(9).rng();
        let b = SeedSpec::new(9).rng();
        choose_features(4, 1.0, &mut a);
        assert_eq!(a, b);
    }

    #[test]
    fn streams_are_distinct() {
        let s = SeedSpec::new(5);
        let a: u64 = s.child(0).rng().random();
        let b: u64 = s.child(1).rng().random();
        let c: u64 = SeedSpec::new(6).child(0).rng().random();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, s.child(0).rng().random::<u64>());
    }

    #[test]
    fn hash_normal_moments() {
        let n = 200_000u64;
        let draws: Vec<f64> = (0..n).map(|i| hash_normal(mix(77, i))).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.02);
    }

    proptest! {
        #[test]
        fn population_blocks_partition(b in 1usize..8, n in 1usize..20) {
            let plan = ResamplePlan::population(b);
            let mut all = Vec::new();
            for m in 0..b {
                let block = draw_indices(&plan, m, b * n, SeedSpec::new(0)).unwrap();
                prop_assert_eq!(block.len(), n);
                all.extend(block);
            }
            all.sort_unstable();
            all.dedup();
            prop_assert_eq!(all.len(), b * n);
        }

        #[test]
        fn subsample_sorted_unique(n in 1usize..300, rate in 0.01f64..1.0, seed: u64) {
            let rows = draw_indices(&ResamplePlan::subsample(rate, 1), 0, n, SeedSpec::new(seed)).unwrap();
            prop_assert_eq!(rows.len(), subsample_size(n, rate));
            prop_assert!(rows.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(rows.iter().all(|&r| r < n));
        }

        #[test]
        fn draws_are_reproducible(n in 1usize..100, seed: u64, stream: u64) {
            let s = SeedSpec { master: seed, stream };
            let plan = ResamplePlan::bootstrap(1);
            prop_assert_eq!(
                draw_indices(&plan, 0, n, s).unwrap(),
                draw_indices(&plan, 0, n, s).unwrap()
            );
        }
    }
}
