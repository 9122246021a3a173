//! N-leg matches with alternating starts.

use statrs::distribution::{Binomial, Discrete, DiscreteCDF};

use serde::{Deserialize, Serialize};

use super::ZsgError;

/// Probability that A wins a best-of-`legs` match when A starts the first leg.
///
/// With `legs = 2K + 1`, A starts K+1 legs (won ~ Bin(K+1, p_a)) and B
/// starts K (A wins ~ Bin(K, p_b)). A needs K+1 legs in total; since the leg
/// count is odd, playing all legs out does not change the winner.
pub fn match_win_prob(p_a: f64, p_b: f64, legs: u32) -> Result<f64, ZsgError> {
    for p in [p_a, p_b] {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(ZsgError::Probability(p));
        }
    }
    if legs % 2 == 0 {
        return Err(ZsgError::EvenLegs(legs));
    }
    if legs == 1 {
        return Ok(p_a);
    }
    let k = (legs / 2) as u64;
    let va = Binomial::new(p_a, k + 1).expect("valid binomial");
    let vb = Binomial::new(p_b, k).expect("valid binomial");
    let mut total = 0.0;
    for j in 1..=k + 1 {
        let need = k + 1 - j;
        // P(vb >= need)
        let tail = if need == 0 { 1.0 } else { 1.0 - vb.cdf(need - 1) };
        total += tail * va.pmf(j);
    }
    Ok(total.clamp(0.0, 1.0))
}

/// One row of a match table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchRow {
    pub legs: u32,
    /// A's match-win probability when A throws first in leg 1.
    pub a_first: f64,
    /// B's match-win probability when B throws first in leg 1.
    pub b_first: f64,
    pub gap: f64,
}

/// Match-win probabilities from leg values `p_a` (A starts) and `p_b` (B starts),
/// both from A's side.
pub fn match_table(p_a: f64, p_b: f64, legs: &[u32]) -> Result<Vec<MatchRow>, ZsgError> {
    legs.iter()
        .map(|&n| {
            let a_first = match_win_prob(p_a, p_b, n)?;
            let b_first = match_win_prob(1.0 - p_b, 1.0 - p_a, n)?;
            Ok(MatchRow {
                legs: n,
                a_first,
                b_first,
                gap: a_first - b_first,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn trivial_cases() {
        assert_eq!(match_win_prob(0.37, 0.2, 1).unwrap(), 0.37);
        assert!((match_win_prob(1.0, 1.0, 7).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(match_win_prob(0.5, 0.5, 2), Err(ZsgError::EvenLegs(2)));
        assert!(match_win_prob(1.2, 0.5, 3).is_err());
    }

    #[test]
    fn three_legs_by_hand() {
        // A starts legs 1 and 3, B starts leg 2.
        let (p, q) = (0.6, 0.5);
        let by_hand = p * q + p * (1.0 - q) * p + (1.0 - p) * q * p;
        assert!((match_win_prob(p, q, 3).unwrap() - by_hand).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn monotone(p in 0.0f64..1.0, q in 0.0f64..1.0, dp in 0.0f64..0.2, k in 0u32..10) {
            let n = 2 * k + 1;
            let base = match_win_prob(p, q, n).unwrap();
            let up = match_win_prob((p + dp).min(1.0), q, n).unwrap();
            let more_q = match_win_prob(p, (q + dp).min(1.0), n).unwrap();
            prop_assert!(up >= base - 1e-12);
            // q is A's leg-win probability when B starts, so it helps A too.
            prop_assert!(more_q >= base - 1e-12);
        }
    }
}
