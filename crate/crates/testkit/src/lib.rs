//! Synthetic scan generation and independent brute-force oracles backing
//! the property and acceptance suites. Nothing here shares algorithmic code
//! with the implementations it checks.

pub mod oracle;
pub mod synth;

/// Area under the ROC curve for anomaly scores: probability that a random
/// anomalous sample outscores a random normal one (ties count half).
pub fn auc(anomalous: &[f64], normal: &[f64]) -> f64 {
    assert!(
        !anomalous.is_empty() && !normal.is_empty(),
        "auc needs both classes"
    );
    let mut wins = 0.0f64;
    for &a in anomalous {
        for &n in normal {
            if a > n {
                wins += 1.0;
            } else if a == n {
                wins += 0.5;
            }
        }
    }
    wins / (anomalous.len() as f64 * normal.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_of_perfect_separation_is_one() {
        assert_eq!(auc(&[0.9, 0.8], &[0.1, 0.2]), 1.0);
        assert_eq!(auc(&[0.1], &[0.9]), 0.0);
        assert_eq!(auc(&[0.5], &[0.5]), 0.5);
    }
}
