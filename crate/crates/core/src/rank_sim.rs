//! Extrapolated rank-biased overlap (RBO_EXT) between two rankings.
//!
//! For prefixes of depth `d`, let `X_d` be the overlap of the two prefixes.
//! With `s` and `l` the shorter and longer list lengths,
//!
//! ```text
//! RBO_EXT = (1-p)/p * [ sum_{d=1..l} X_d/d * p^d
//!                       + sum_{d=s+1..l} X_s*(d-s)/(s*d) * p^d ]
//!           + [ (X_l - X_s)/l + X_s/s ] * p^l
//! ```
//!
//! which for equal lengths `k` reduces to
//! `X_k/k * p^k + (1-p)/p * sum_{d=1..k} X_d/d * p^d`.
//! Only ranks are used; scores are ignored.

use std::collections::HashSet;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::RankedList;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RboParams {
    /// Persistence, strictly between 0 and 1.
    pub p: f64,
    /// Both lists are cut to this many items before comparison.
    pub eval_depth: usize,
}

impl Default for RboParams {
    fn default() -> Self {
        RboParams {
            p: 0.9,
            eval_depth: 100,
        }
    }
}

impl RboParams {
    pub fn new(p: f64, eval_depth: usize) -> Result<Self> {
        let params = RboParams { p, eval_depth };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "RBO persistence must be in (0,1), got {}",
                self.p
            )));
        }
        if self.eval_depth == 0 {
            return Err(Error::InvalidParameter(
                "RBO eval depth must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

fn check_distinct<T: Eq + Hash>(list: &[T]) -> Result<()> {
    let mut seen = HashSet::with_capacity(list.len());
    if list.iter().all(|x| seen.insert(x)) {
        Ok(())
    } else {
        Err(Error::InvalidInput(
            "ranked list contains a duplicate id".into(),
        ))
    }
}

/// RBO_EXT of two id sequences. Two empty lists (or one empty list) give 0.
pub fn rbo_ext<T: Eq + Hash>(a: &[T], b: &[T], params: &RboParams) -> Result<f64> {
    params.validate()?;
    check_distinct(a)?;
    check_distinct(b)?;
    let a = &a[..a.len().min(params.eval_depth)];
    let b = &b[..b.len().min(params.eval_depth)];
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let (s, l) = (short.len(), long.len());
    if s == 0 {
        return Ok(0.0);
    }
    let p = params.p;

    let mut seen_short: HashSet<&T> = HashSet::with_capacity(s);
    let mut seen_long: HashSet<&T> = HashSet::with_capacity(l);
    let mut overlap = 0usize;
    let mut overlap_at_s = 0usize;
    let mut sum = 0.0;
    let mut p_d = 1.0;
    for d in 1..=l {
        p_d *= p;
        let x = &long[d - 1];
        if d <= s {
            let y = &short[d - 1];
            if x == y {
                overlap += 1;
            } else {
                overlap += usize::from(seen_short.contains(x));
                overlap += usize::from(seen_long.contains(y));
            }
            seen_short.insert(y);
            seen_long.insert(x);
            if d == s {
                overlap_at_s = overlap;
            }
        } else if seen_short.contains(x) {
            overlap += 1;
        }
        let df = d as f64;
        sum += overlap as f64 / df * p_d;
        if d > s {
            sum += overlap_at_s as f64 * (d - s) as f64 / (s as f64 * df) * p_d;
        }
    }
    let (sf, lf) = (s as f64, l as f64);
    let tail = ((overlap - overlap_at_s) as f64 / lf + overlap_at_s as f64 / sf) * p_d;
    let value = (1.0 - p) / p * sum + tail;
    Ok(value.clamp(0.0, 1.0))
}

/// RBO_EXT over the doc id orderings of two ranked lists.
pub fn rbo_lists(a: &RankedList, b: &RankedList, params: &RboParams) -> Result<f64> {
    let a: Vec<&str> = a.doc_ids().collect();
    let b: Vec<&str> = b.doc_ids().collect();
    rbo_ext(&a, &b, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(p: f64) -> RboParams {
        RboParams::new(p, 100).unwrap()
    }

    /// Direct transcription of the equal-length formula, prefix sets rebuilt
    /// at every depth.
    fn oracle_equal_len(a: &[u32], b: &[u32], p: f64) -> f64 {
        let k = a.len();
        let overlap = |d: usize| {
            let pa: HashSet<_> = a[..d].iter().collect();
            b[..d].iter().filter(|x| pa.contains(x)).count() as f64
        };
        let mut sum = 0.0;
        for d in 1..=k {
            sum += overlap(d) / d as f64 * p.powi(d as i32);
        }
        overlap(k) / k as f64 * p.powi(k as i32) + (1.0 - p) / p * sum
    }

    #[test]
    fn identical_lists_give_one() {
        for &pp in &[0.1, 0.5, 0.9, 0.99] {
            let v = rbo_ext(&["a", "b", "c", "d"], &["a", "b", "c", "d"], &p(pp)).unwrap();
            assert!((v - 1.0).abs() < 1e-12, "p={pp} v={v}");
        }
    }

    #[test]
    fn disjoint_lists_give_zero() {
        assert_eq!(
            rbo_ext(&["a", "b"], &["c", "d", "e"], &p(0.9)).unwrap(),
            0.0
        );
    }

    #[test]
    fn swapped_pair() {
        let v = rbo_ext(&["x", "y"], &["y", "x"], &p(0.9)).unwrap();
        assert!((v - 0.9).abs() < 1e-9, "{v}");
    }

    #[test]
    fn empty_lists() {
        let e: [&str; 0] = [];
        assert_eq!(rbo_ext(&e, &e, &p(0.9)).unwrap(), 0.0);
        assert_eq!(rbo_ext(&e, &["a"], &p(0.9)).unwrap(), 0.0);
    }

    #[test]
    fn duplicates_and_bad_params_rejected() {
        assert!(rbo_ext(&["a", "a"], &["a"], &p(0.9)).is_err());
        assert!(RboParams::new(1.0, 10).is_err());
        assert!(RboParams::new(0.0, 10).is_err());
        assert!(RboParams::new(0.5, 0).is_err());
    }

    #[test]
    fn uneven_prefix_of_longer_list() {
        // Short list is a prefix of the long one: agreement so far is perfect,
        // extrapolation keeps it at 1.
        let v = rbo_ext(&["a", "b"], &["a", "b", "c", "d"], &p(0.8)).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn uneven_hand_value() {
        // S=[a], L=[b,a], p=0.5: X_1=0, X_2=1, X_s=0.
        // sum = 0*0.5 + 1/2*0.25 = 0.125 ; second sum = 0
        // (1-p)/p*sum = 0.125 ; tail = ((1-0)/2 + 0)*0.25 = 0.125 -> 0.25
        let v = rbo_ext(&["a"], &["b", "a"], &p(0.5)).unwrap();
        assert!((v - 0.25).abs() < 1e-15, "{v}");
    }

    #[test]
    fn eval_depth_truncates() {
        let params = RboParams::new(0.9, 2).unwrap();
        let v = rbo_ext(&["a", "b", "c"], &["a", "b", "z"], &params).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    fn perm_pair() -> impl Strategy<Value = (Vec<u32>, Vec<u32>)> {
        (1usize..25, 1usize..25).prop_flat_map(|(la, lb)| {
            (
                Just((0..40u32).collect::<Vec<_>>()).prop_shuffle(),
                Just((0..40u32).collect::<Vec<_>>()).prop_shuffle(),
            )
                .prop_map(move |(a, b)| (a[..la].to_vec(), b[..lb].to_vec()))
        })
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded((a, b) in perm_pair(), pp in 0.05f64..0.99) {
            let params = p(pp);
            let ab = rbo_ext(&a, &b, &params).unwrap();
            let ba = rbo_ext(&b, &a, &params).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn equal_length_matches_formula((a, b) in perm_pair(), pp in 0.05f64..0.99) {
            let k = a.len().min(b.len());
            let (a, b) = (&a[..k], &b[..k]);
            let v = rbo_ext(a, b, &p(pp)).unwrap();
            prop_assert!((v - oracle_equal_len(a, b, pp)).abs() < 1e-9);
        }

        #[test]
        fn common_head_never_decreases((a, b) in perm_pair(), pp in 0.05f64..0.99) {
            let params = p(pp);
            let before = rbo_ext(&a, &b, &params).unwrap();
            let mut a2 = vec![1000];
            a2.extend(&a);
            let mut b2 = vec![1000];
            b2.extend(&b);
            let after = rbo_ext(&a2, &b2, &params).unwrap();
            prop_assert!(after >= before - 1e-12, "before={} after={}", before, after);
        }
    }
}
