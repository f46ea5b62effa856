use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EconError, Micros};

const PPB: u128 = 1_000_000_000;

/// Shares of an install fee: contributors, maintainers, infrastructure, treasury.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeeSplit {
    pub contributors: f64,
    pub maintainers: f64,
    pub infrastructure: f64,
    pub treasury: f64,
}

impl Default for FeeSplit {
    fn default() -> Self {
        FeeSplit { contributors: 0.70, maintainers: 0.15, infrastructure: 0.10, treasury: 0.05 }
    }
}

impl FeeSplit {
    fn ratios(&self) -> [f64; 4] {
        [self.contributors, self.maintainers, self.infrastructure, self.treasury]
    }

    pub fn validate(&self) -> Result<(), EconError> {
        let r = self.ratios();
        let sum: f64 = r.iter().sum();
        if r.iter().any(|x| !x.is_finite() || *x < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(EconError::InvalidSplit(sum));
        }
        Ok(())
    }

    // Parts per billion, adjusted so they sum to exactly one billion.
    fn ppb(&self) -> [u128; 4] {
        let mut p = self.ratios().map(|x| (x * PPB as f64).round() as u128);
        let total: u128 = p.iter().sum();
        let big = (0..4).max_by_key(|&i| (p[i], std::cmp::Reverse(i))).unwrap();
        if total > PPB {
            p[big] -= total - PPB;
        } else {
            p[big] += PPB - total;
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitAmounts {
    pub contributors: Micros,
    pub maintainers: Micros,
    pub infrastructure: Micros,
    pub treasury: Micros,
}

impl SplitAmounts {
    pub fn total(&self) -> Micros {
        self.contributors + self.maintainers + self.infrastructure + self.treasury
    }
}

/// Each part is floored, then leftover micro-dollars go one at a time to the
/// non-zero parts in the order contributors, maintainers, infrastructure,
/// treasury. The parts always sum to `fee`.
pub fn split_fee(fee: Micros, split: &FeeSplit) -> Result<SplitAmounts, EconError> {
    split.validate()?;
    let ppb = split.ppb();
    let f = fee.0 as u128;
    let mut parts = ppb.map(|p| f * p / PPB);
    let mut rem = f - parts.iter().sum::<u128>();
    let nonzero: Vec<usize> = (0..4).filter(|&i| ppb[i] > 0).collect();
    let mut k = 0;
    while rem > 0 {
        parts[nonzero[k % nonzero.len()]] += 1;
        rem -= 1;
        k += 1;
    }
    Ok(SplitAmounts {
        contributors: Micros(parts[0] as u64),
        maintainers: Micros(parts[1] as u64),
        infrastructure: Micros(parts[2] as u64),
        treasury: Micros(parts[3] as u64),
    })
}

/// Pro-rata by score. Non-positive scores are ignored. The rounding remainder
/// goes to the highest-scoring contributor (lowest id on ties), so payouts
/// sum exactly to `amount`.
pub fn distribute_contributor_share(
    amount: Micros,
    scores: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, Micros>, EconError> {
    let live: Vec<(&String, f64)> =
        scores.iter().filter(|(_, s)| s.is_finite() && **s > 0.0).map(|(k, s)| (k, *s)).collect();
    if live.is_empty() {
        return Err(EconError::NoAttributions);
    }
    let total: f64 = live.iter().map(|(_, s)| s).sum();
    let a = amount.0 as f64;
    let mut out: BTreeMap<String, Micros> = BTreeMap::new();
    let mut paid: u64 = 0;
    for (id, s) in &live {
        let x = a * (s / total);
        let r = x.round();
        // snap float noise so that scaling every score by a constant never
        // moves a payout across an integer boundary
        let v = if (x - r).abs() <= 1e-9 * x.max(1.0) { r } else { x.floor() };
        let v = (v.max(0.0) as u64).min(amount.0);
        paid += v;
        out.insert((*id).clone(), Micros(v));
    }
    let top = live
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(id, _)| (*id).clone())
        .unwrap();
    if paid <= amount.0 {
        out.get_mut(&top).unwrap().0 += amount.0 - paid;
    } else {
        // only reachable through snapping; take the excess back from the largest payouts
        let mut excess = paid - amount.0;
        let mut order: Vec<String> = out.keys().cloned().collect();
        order.sort_by(|x, y| out[y].cmp(&out[x]).then_with(|| x.cmp(y)));
        for id in order {
            let e = out.get_mut(&id).unwrap();
            let take = excess.min(e.0);
            e.0 -= take;
            excess -= take;
            if excess == 0 {
                break;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scores(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn default_split_of_two_cents() {
        let s = split_fee(Micros(20_000), &FeeSplit::default()).unwrap();
        assert_eq!(
            [s.contributors, s.maintainers, s.infrastructure, s.treasury],
            [Micros(14_000), Micros(3_000), Micros(2_000), Micros(1_000)]
        );
    }

    #[test]
    fn one_micro_goes_to_contributors() {
        let s = split_fee(Micros(1), &FeeSplit::default()).unwrap();
        assert_eq!(s.contributors, Micros(1));
        assert_eq!(s.total(), Micros(1));
    }

    #[test]
    fn zero_ratio_parts_get_nothing() {
        let split = FeeSplit { contributors: 0.5, maintainers: 0.0, infrastructure: 0.5, treasury: 0.0 };
        let s = split_fee(Micros(7), &split).unwrap();
        assert_eq!(s.maintainers, Micros(0));
        assert_eq!(s.treasury, Micros(0));
        assert_eq!(s.total(), Micros(7));
    }

    #[test]
    fn bad_split_rejected() {
        let split = FeeSplit { contributors: 0.8, ..FeeSplit::default() };
        assert!(split_fee(Micros(1), &split).is_err());
    }

    #[test]
    fn distribute_examples() {
        let even = distribute_contributor_share(Micros(100), &scores(&[("a", 1.0), ("b", 1.0), ("c", 1.0)])).unwrap();
        assert_eq!(even.values().map(|m| m.0).collect::<Vec<_>>(), vec![34, 33, 33]);
        let skew = distribute_contributor_share(Micros(4_000), &scores(&[("a", 3.0), ("b", 1.0)])).unwrap();
        assert_eq!(skew["a"], Micros(3_000));
        assert_eq!(skew["b"], Micros(1_000));
        assert_eq!(
            distribute_contributor_share(Micros(10), &BTreeMap::new()),
            Err(EconError::NoAttributions)
        );
        assert!(distribute_contributor_share(Micros(10), &scores(&[("a", 0.0)])).is_err());
    }

    fn arb_split() -> impl Strategy<Value = FeeSplit> {
        (0u32..1000, 0u32..1000, 0u32..1000, 0u32..1000)
            .prop_filter("non-empty", |(a, b, c, d)| a + b + c + d > 0)
            .prop_map(|(a, b, c, d)| {
                let t = (a + b + c + d) as f64;
                FeeSplit {
                    contributors: a as f64 / t,
                    maintainers: b as f64 / t,
                    infrastructure: c as f64 / t,
                    treasury: d as f64 / t,
                }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn split_conserves(fee in 0u64..u64::MAX / 2, split in arb_split()) {
            let s = split_fee(Micros(fee), &split).unwrap();
            prop_assert_eq!(s.total(), Micros(fee));
        }

        #[test]
        fn default_contributor_share_within_one(fee in 0u64..1_000_000_000_000) {
            let s = split_fee(Micros(fee), &FeeSplit::default()).unwrap();
            let exact = fee as u128 * 7 / 10;
            prop_assert!((s.contributors.0 as i128 - exact as i128).abs() <= 1);
        }
    }

    proptest! {
        #[test]
        fn distribute_conserves_and_is_scale_invariant(
            amount in 0u64..100_000_000,
            raw in prop::collection::vec(0.01f64..100.0, 1..8),
            k in 0.001f64..1000.0,
        ) {
            let a: BTreeMap<String, f64> = raw.iter().enumerate().map(|(i, s)| (format!("c{i}"), *s)).collect();
            let b: BTreeMap<String, f64> = a.iter().map(|(id, s)| (id.clone(), s * k)).collect();
            let pa = distribute_contributor_share(Micros(amount), &a).unwrap();
            let pb = distribute_contributor_share(Micros(amount), &b).unwrap();
            prop_assert_eq!(pa.values().copied().sum::<Micros>(), Micros(amount));
            prop_assert_eq!(pa, pb);
        }
    }
}
