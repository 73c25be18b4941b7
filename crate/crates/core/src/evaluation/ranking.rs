//! Ranking metrics for link prediction.

use crate::error::{Error, Result};

fn check(labels: &[bool], scores: &[f64]) -> Result<()> {
    if labels.len() != scores.len() {
        return Err(Error::Argument(format!(
            "{} labels for {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Argument("NaN score".into()));
    }
    Ok(())
}

/// Mean over positives of the precision at each positive's rank, ranking by
/// descending score with ties kept in input order.
pub fn average_precision(labels: &[bool], scores: &[f64]) -> Result<f64> {
    check(labels, scores)?;
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::Argument("average precision needs a positive label".into()));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let (mut hits, mut sum) = (0usize, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from mid-ranks.
pub fn auroc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    check(labels, scores)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Argument("AUROC needs both positive and negative labels".into()));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps mid-ranks integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u128;
        for &k in &order[i..=j] {
            if labels[k] {
                twice_rank_sum += twice_mid;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    // U = R − P(P+1)/2, doubled.
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ap_oracle(labels: &[bool], scores: &[f64]) -> f64 {
        let n = labels.len();
        let mut precisions = Vec::new();
        for i in 0..n {
            if !labels[i] {
                continue;
            }
            // Rank of i: items strictly above, or tied and earlier.
            let above: Vec<usize> = (0..n)
                .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
                .collect();
            let hits = above.iter().filter(|&&j| labels[j]).count() + 1;
            precisions.push(hits as f64 / (above.len() + 1) as f64);
        }
        precisions.iter().sum::<f64>() / precisions.len() as f64
    }

    fn auc_oracle(labels: &[bool], scores: &[f64]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..labels.len() {
            for j in 0..labels.len() {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn hand_cases() {
        let l = [true, false, true, false];
        let s = [0.9, 0.8, 0.7, 0.6];
        assert!((average_precision(&l, &s).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(auroc(&l, &s).unwrap(), 0.75);
        assert_eq!(average_precision(&[false, true], &[0.9, 0.1]).unwrap(), 0.5);
        assert_eq!(average_precision(&[true, true, false], &[3.0, 2.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[true, false, true], &[3.0, 1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[true, false, true, false], &[1.0; 4]).unwrap(), 0.5);
        assert!(average_precision(&[false, false], &[1.0, 2.0]).is_err());
        assert!(auroc(&[true, true], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn match_exhaustive_oracles(
            items in prop::collection::vec((any::<bool>(), 0u8..6), 2..=20),
        ) {
            let labels: Vec<bool> = items.iter().map(|x| x.0).collect();
            let scores: Vec<f64> = items.iter().map(|x| x.1 as f64 * 0.25).collect();
            if labels.iter().any(|&l| l) {
                let got = average_precision(&labels, &scores).unwrap();
                prop_assert!((got - ap_oracle(&labels, &scores)).abs() < 1e-12);
            }
            if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
                let got = auroc(&labels, &scores).unwrap();
                prop_assert!((got - auc_oracle(&labels, &scores)).abs() < 1e-12);
            }
        }
    }
}
