//! Threshold-free detection metrics over labeled anomaly scores.
//!
//! Conventions, fixed once for every metric: scores are oriented "higher =
//! more anomalous"; a sample is rejected (called anomalous) when its score
//! is `>=` the threshold; AUROC resolves ties by midranks; EER linearly
//! interpolates between adjacent thresholds.

use crate::{CoreError, Result};

/// Default normal-rejection level for the fixed-operating-point metric.
pub const DEFAULT_BPCER_LEVEL: f64 = 0.05;

/// Anomaly scores split by ground-truth label.
#[derive(Debug, Clone)]
pub struct LabeledScores {
    normal: Vec<f64>,
    anomaly: Vec<f64>,
}

impl LabeledScores {
    pub fn new(normal: Vec<f64>, anomaly: Vec<f64>) -> Result<LabeledScores> {
        if normal.is_empty() || anomaly.is_empty() {
            return Err(CoreError::SingleClass);
        }
        if normal
            .iter()
            .chain(anomaly.iter())
            .any(|v| !v.is_finite())
        {
            return Err(CoreError::Data("non-finite anomaly score".into()));
        }
        Ok(LabeledScores { normal, anomaly })
    }

    /// Builds from `(score, is_anomaly)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, bool)>) -> Result<LabeledScores> {
        let mut normal = Vec::new();
        let mut anomaly = Vec::new();
        for (score, is_anomaly) in pairs {
            if is_anomaly {
                anomaly.push(score);
            } else {
                normal.push(score);
            }
        }
        LabeledScores::new(normal, anomaly)
    }

    pub fn normal(&self) -> &[f64] {
        &self.normal
    }

    pub fn anomaly(&self) -> &[f64] {
        &self.anomaly
    }

    pub fn len(&self) -> usize {
        self.normal.len() + self.anomaly.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Candidate thresholds: every distinct score, plus one virtual
    /// threshold above the maximum where nothing is rejected.
    fn thresholds(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.normal.iter().chain(self.anomaly.iter()).cloned().collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        let top = t[t.len() - 1];
        t.push(top + top.abs().max(1.0));
        t
    }

    /// Fraction of normals rejected at `t` (score >= t).
    fn bpcer(&self, t: f64) -> f64 {
        let rej = self.normal.iter().filter(|&&v| v >= t).count();
        rej as f64 / self.normal.len() as f64
    }

    /// Fraction of anomalies accepted at `t` (score < t).
    fn apcer(&self, t: f64) -> f64 {
        let acc = self.anomaly.iter().filter(|&&v| v < t).count();
        acc as f64 / self.anomaly.len() as f64
    }
}

/// Probability that a random anomaly outscores a random normal, ties
/// counted half, computed with midranks.
pub fn auroc(scores: &LabeledScores) -> f64 {
    let n_n = scores.normal.len();
    let n_a = scores.anomaly.len();
    let mut pool: Vec<(f64, bool)> = scores
        .normal
        .iter()
        .map(|&v| (v, false))
        .chain(scores.anomaly.iter().map(|&v| (v, true)))
        .collect();
    pool.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum_anomaly = 0.0;
    let mut i = 0;
    while i < pool.len() {
        let mut j = i;
        while j < pool.len() && pool[j].0 == pool[i].0 {
            j += 1;
        }
        // 1-based ranks i+1 ..= j share the midrank.
        let midrank = (i + 1 + j) as f64 / 2.0;
        for item in &pool[i..j] {
            if item.1 {
                rank_sum_anomaly += midrank;
            }
        }
        i = j;
    }
    (rank_sum_anomaly - (n_a * (n_a + 1)) as f64 / 2.0) / (n_a as f64 * n_n as f64)
}

/// Rate at which the normal-rejection and anomaly-acceptance curves cross,
/// linearly interpolated between adjacent candidate thresholds.
pub fn eer(scores: &LabeledScores) -> f64 {
    let thresholds = scores.thresholds();
    let curve: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| (scores.bpcer(t), scores.apcer(t)))
        .collect();
    // BPCER falls from 1 to 0, APCER rises from 0 to 1 as t sweeps up, so
    // the difference changes sign exactly once.
    for w in curve.windows(2) {
        let (b0, a0) = w[0];
        let (b1, a1) = w[1];
        let d0 = b0 - a0;
        let d1 = b1 - a1;
        if d0 >= 0.0 && d1 <= 0.0 {
            if d0 == d1 {
                return b0;
            }
            let s = d0 / (d0 - d1);
            return b0 + s * (b1 - b0);
        }
    }
    // Unreachable: the sweep starts at (1, 0) and ends at (0, 1).
    0.5
}

/// Anomaly-acceptance rate at the lowest threshold rejecting at most
/// `bpcer_level` of the normals.
pub fn apcer_at_bpcer(scores: &LabeledScores, bpcer_level: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&bpcer_level) {
        return Err(CoreError::Config(format!(
            "normal-rejection level must be in [0, 1], got {bpcer_level}"
        )));
    }
    let t = scores
        .thresholds()
        .into_iter()
        .find(|&t| scores.bpcer(t) <= bpcer_level)
        .expect("virtual top threshold rejects nothing");
    Ok(scores.apcer(t))
}

/// ROC curve points `(threshold, fpr, tpr)`, from the all-accept corner to
/// the all-reject corner, for CSV export and plotting.
pub fn roc_points(scores: &LabeledScores) -> Vec<(f64, f64, f64)> {
    let mut thresholds = scores.thresholds();
    thresholds.reverse();
    let n_n = scores.normal.len() as f64;
    let n_a = scores.anomaly.len() as f64;
    thresholds
        .into_iter()
        .map(|t| {
            let fpr = scores.normal.iter().filter(|&&v| v >= t).count() as f64 / n_n;
            let tpr = scores.anomaly.iter().filter(|&&v| v >= t).count() as f64 / n_a;
            (t, fpr, tpr)
        })
        .collect()
}

/// ROC points as a `threshold,fpr,tpr` CSV document.
pub fn roc_csv(scores: &LabeledScores) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for (t, fpr, tpr) in roc_points(scores) {
        out.push_str(&format!("{t},{fpr},{tpr}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pairwise_auroc(scores: &LabeledScores) -> f64 {
        let mut wins = 0.0;
        for &a in scores.anomaly() {
            for &n in scores.normal() {
                if a > n {
                    wins += 1.0;
                } else if a == n {
                    wins += 0.5;
                }
            }
        }
        wins / (scores.anomaly().len() * scores.normal().len()) as f64
    }

    /// Independent crossing search: scan every adjacent pair of candidate
    /// thresholds (including midpoints) for the interpolated crossing.
    fn sweep_eer(scores: &LabeledScores) -> f64 {
        let mut pool: Vec<f64> = scores
            .normal()
            .iter()
            .chain(scores.anomaly().iter())
            .cloned()
            .collect();
        pool.sort_by(f64::total_cmp);
        pool.dedup();
        let mut candidates = Vec::new();
        for w in pool.windows(2) {
            candidates.push(w[0]);
            candidates.push(0.5 * (w[0] + w[1]));
        }
        candidates.push(pool[pool.len() - 1]);
        candidates.push(pool[pool.len() - 1] + 1.0);
        let curve: Vec<(f64, f64)> = candidates
            .iter()
            .map(|&t| (scores.bpcer(t), scores.apcer(t)))
            .collect();
        for w in curve.windows(2) {
            let d0 = w[0].0 - w[0].1;
            let d1 = w[1].0 - w[1].1;
            if d0 >= 0.0 && d1 <= 0.0 {
                if d0 == d1 {
                    return w[0].0;
                }
                let s = d0 / (d0 - d1);
                return w[0].0 + s * (w[1].0 - w[0].0);
            }
        }
        0.5
    }

    fn sweep_apcer(scores: &LabeledScores, level: f64) -> f64 {
        let mut pool: Vec<f64> = scores
            .normal()
            .iter()
            .chain(scores.anomaly().iter())
            .cloned()
            .collect();
        pool.sort_by(f64::total_cmp);
        pool.push(pool[pool.len() - 1] + 1.0);
        for &t in &pool {
            if scores.bpcer(t) <= level {
                return scores.apcer(t);
            }
        }
        unreachable!()
    }

    #[test]
    fn perfect_separation_metrics() {
        let s = LabeledScores::new(vec![0.1, 0.2, 0.3], vec![0.9, 1.0, 1.1]).unwrap();
        assert_eq!(auroc(&s), 1.0);
        assert_eq!(eer(&s), 0.0);
        assert_eq!(apcer_at_bpcer(&s, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn identical_scores_are_chance_level() {
        let s = LabeledScores::new(vec![0.5; 4], vec![0.5; 6]).unwrap();
        assert_eq!(auroc(&s), 0.5);
        assert!((eer(&s) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn total_confusion_apcer_is_one() {
        let s = LabeledScores::new(vec![1.0; 20], vec![0.0; 20]).unwrap();
        assert_eq!(apcer_at_bpcer(&s, 0.05).unwrap(), 1.0);
    }

    #[test]
    fn hand_case_matches_pairwise_counting() {
        let s = LabeledScores::new(
            vec![0.1, 0.4, 0.4, 0.7],
            vec![0.3, 0.4, 0.8, 0.9],
        )
        .unwrap();
        assert_eq!(auroc(&s), pairwise_auroc(&s));
    }

    #[test]
    fn one_inversion_eer_hand_value() {
        // Normals {1, 2, 3}, anomalies {2.5, 4}: at t just past 2.5 one
        // normal of three is still rejected and no anomaly accepted; the
        // interpolated crossing sits at 1/3 on both curves.
        let s = LabeledScores::new(vec![1.0, 2.0, 3.0], vec![2.5, 4.0]).unwrap();
        let got = eer(&s);
        assert!((got - 1.0 / 3.0).abs() < 1e-12, "eer {got}");
        assert!((sweep_eer(&s) - got).abs() < 1e-12);
    }

    #[test]
    fn flipping_labels_complements_auroc() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let normal: Vec<f64> = (0..13).map(|_| rng.gen_range(0..8) as f64).collect();
            let anomaly: Vec<f64> = (0..9).map(|_| rng.gen_range(0..8) as f64).collect();
            let s = LabeledScores::new(normal.clone(), anomaly.clone()).unwrap();
            let flipped = LabeledScores::new(anomaly, normal).unwrap();
            assert_eq!(auroc(&s) + auroc(&flipped), 1.0);
        }
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(
            LabeledScores::new(vec![], vec![1.0]).unwrap_err(),
            CoreError::SingleClass
        ));
        assert!(matches!(
            LabeledScores::new(vec![1.0], vec![]).unwrap_err(),
            CoreError::SingleClass
        ));
    }

    #[test]
    fn roc_spans_both_corners() {
        let s = LabeledScores::new(vec![0.2, 0.5], vec![0.4, 0.8]).unwrap();
        let pts = roc_points(&s);
        assert_eq!(pts[0].1, 0.0);
        assert_eq!(pts[0].2, 0.0);
        let last = pts[pts.len() - 1];
        assert_eq!(last.1, 1.0);
        assert_eq!(last.2, 1.0);
        let csv = roc_csv(&s);
        assert!(csv.starts_with("threshold,fpr,tpr\n"));
        assert_eq!(csv.lines().count(), pts.len() + 1);
    }

    proptest! {
        #[test]
        fn auroc_matches_pairwise_oracle(
            normal in proptest::collection::vec(0i32..20, 1..30),
            anomaly in proptest::collection::vec(0i32..20, 1..30),
        ) {
            let s = LabeledScores::new(
                normal.iter().map(|&v| v as f64 / 3.0).collect(),
                anomaly.iter().map(|&v| v as f64 / 3.0).collect(),
            ).unwrap();
            prop_assert_eq!(auroc(&s), pairwise_auroc(&s));
        }

        #[test]
        fn eer_and_apcer_match_sweep_oracles(
            normal in proptest::collection::vec(0i32..15, 1..25),
            anomaly in proptest::collection::vec(0i32..15, 1..25),
            level in 0.0f64..=1.0,
        ) {
            let s = LabeledScores::new(
                normal.iter().map(|&v| v as f64).collect(),
                anomaly.iter().map(|&v| v as f64).collect(),
            ).unwrap();
            prop_assert!((eer(&s) - sweep_eer(&s)).abs() < 1e-9);
            prop_assert!(
                (apcer_at_bpcer(&s, level).unwrap() - sweep_apcer(&s, level)).abs() < 1e-12
            );
        }

        #[test]
        fn metrics_invariant_under_increasing_transform(
            normal in proptest::collection::vec(0i32..15, 1..20),
            anomaly in proptest::collection::vec(0i32..15, 1..20),
            scale in 0.1f64..5.0,
            shift in -10.0f64..10.0,
        ) {
            let s = LabeledScores::new(
                normal.iter().map(|&v| v as f64).collect(),
                anomaly.iter().map(|&v| v as f64).collect(),
            ).unwrap();
            let m = LabeledScores::new(
                normal.iter().map(|&v| v as f64 * scale + shift).collect(),
                anomaly.iter().map(|&v| v as f64 * scale + shift).collect(),
            ).unwrap();
            prop_assert_eq!(auroc(&s), auroc(&m));
            prop_assert!((eer(&s) - eer(&m)).abs() < 1e-12);
            prop_assert!(
                (apcer_at_bpcer(&s, 0.05).unwrap() - apcer_at_bpcer(&m, 0.05).unwrap()).abs()
                    < 1e-12
            );
        }

        // Note the plausible-looking stronger claim "eer <= 1/2 whenever
        // auroc >= 1/2" is FALSE under threshold interpolation, even with
        // all-distinct scores: normals {952, 189, 896, 707, 282} against
        // anomalies {517, 619, 947} give auroc 8/15 but eer 3/5. The sound
        // statement is that the crossing is the optimal balanced operating
        // point: no candidate threshold beats it on the worse of the two
        // error rates.
        #[test]
        fn eer_never_exceeds_best_balanced_threshold(
            normal in proptest::collection::vec(0i32..10, 1..20),
            anomaly in proptest::collection::vec(0i32..10, 1..20),
        ) {
            let s = LabeledScores::new(
                normal.iter().map(|&v| v as f64).collect(),
                anomaly.iter().map(|&v| v as f64).collect(),
            ).unwrap();
            let e = eer(&s);
            prop_assert!((0.0..=1.0).contains(&e));
            for t in s.thresholds() {
                prop_assert!(e <= s.bpcer(t).max(s.apcer(t)) + 1e-9);
            }
        }
    }
}
