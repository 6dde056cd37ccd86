//! Spearman / Pearson correlation with average-rank tie handling, plus
//! grouped (per-challenge) reports.

use std::collections::BTreeMap;
use std::io::Write;

use thiserror::Error;

/// Default minimum group size for per-group statistics.
pub const DEFAULT_MIN_GROUP_SIZE: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("correlation undefined: constant input")]
    ConstantInput,
    #[error("min_group_size must be at least 2, got {0}")]
    InvalidMinGroupSize(usize),
    #[error("csv output failed: {0}")]
    Csv(String),
}

/// 1-based ranks; tied values share the mean of the positions they occupy.
pub fn fractional_ranks(values: &[f64]) -> Result<Vec<f64>, MetricError> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Positions start+1 ..= end, averaged.
        let rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    Ok(ranks)
}

pub fn plcc(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(MetricError::TooFewSamples(n));
    }
    if let Some(i) = x.iter().zip(y).position(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    let mean_x = x.iter().sum::<f64>() / n as f64;
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::ConstantInput);
    }
    // sqrt of the product keeps identical inputs at exactly 1.
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    plcc(&fractional_ranks(x)?, &fractional_ranks(y)?)
}

/// Why a group got no correlation entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupFlag {
    ConstantTargets,
    ConstantPredictions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub n: usize,
    /// `None` when the group is flagged.
    pub srcc: Option<f64>,
    pub plcc: Option<f64>,
    pub mean_pred: f64,
    pub mean_true: f64,
    pub flag: Option<GroupFlag>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub srcc: f64,
    pub plcc: f64,
    pub n: usize,
    pub mean_pred: f64,
    pub mean_true: f64,
    pub min_group_size: usize,
    pub per_group: BTreeMap<String, GroupStats>,
}

pub fn grouped_metrics<G: AsRef<str>>(
    preds: &[f64],
    targets: &[f64],
    groups: &[G],
    min_group_size: usize,
) -> Result<MetricReport, MetricError> {
    if preds.len() != targets.len() {
        return Err(MetricError::LengthMismatch(preds.len(), targets.len()));
    }
    if preds.len() != groups.len() {
        return Err(MetricError::LengthMismatch(preds.len(), groups.len()));
    }
    if min_group_size < 2 {
        return Err(MetricError::InvalidMinGroupSize(min_group_size));
    }
    let srcc_all = srcc(preds, targets)?;
    let plcc_all = plcc(preds, targets)?;

    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        members.entry(g.as_ref()).or_default().push(i);
    }
    let mut per_group = BTreeMap::new();
    for (group, idx) in members {
        if idx.len() < min_group_size {
            continue;
        }
        let p: Vec<f64> = idx.iter().map(|&i| preds[i]).collect();
        let t: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
        let n = idx.len();
        let mean_pred = p.iter().sum::<f64>() / n as f64;
        let mean_true = t.iter().sum::<f64>() / n as f64;
        let flag = if is_constant(&t) {
            Some(GroupFlag::ConstantTargets)
        } else if is_constant(&p) {
            Some(GroupFlag::ConstantPredictions)
        } else {
            None
        };
        let (s, r) = match flag {
            Some(_) => (None, None),
            None => (Some(srcc(&p, &t)?), Some(plcc(&p, &t)?)),
        };
        per_group.insert(
            group.to_string(),
            GroupStats {
                n,
                srcc: s,
                plcc: r,
                mean_pred,
                mean_true,
                flag,
            },
        );
    }
    Ok(MetricReport {
        srcc: srcc_all,
        plcc: plcc_all,
        n: preds.len(),
        mean_pred: preds.iter().sum::<f64>() / preds.len() as f64,
        mean_true: targets.iter().sum::<f64>() / targets.len() as f64,
        min_group_size,
        per_group,
    })
}

fn is_constant(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] == w[1])
}

impl MetricReport {
    /// Groups that received a correlation entry.
    pub fn scored_groups(&self) -> impl Iterator<Item = (&String, &GroupStats)> {
        self.per_group.iter().filter(|(_, g)| g.flag.is_none())
    }

    pub fn mean_group_srcc(&self) -> Option<f64> {
        let values: Vec<f64> = self.scored_groups().filter_map(|(_, g)| g.srcc).collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }

    /// Mean absolute error between per-group mean prediction and mean target.
    pub fn group_mean_abs_error(&self) -> Option<f64> {
        let n = self.per_group.len();
        (n > 0).then(|| {
            self.per_group
                .values()
                .map(|g| (g.mean_pred - g.mean_true).abs())
                .sum::<f64>()
                / n as f64
        })
    }

    /// One overall row followed by one row per group, ordered by group id.
    /// Flagged groups leave the correlation cells empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MetricError> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| MetricError::Csv(e.to_string());
        w.write_record(["group", "n", "srcc", "plcc", "mean_pred", "mean_true"])
            .map_err(csv_err)?;
        w.write_record([
            "overall".to_string(),
            self.n.to_string(),
            fmt_f64(self.srcc),
            fmt_f64(self.plcc),
            fmt_f64(self.mean_pred),
            fmt_f64(self.mean_true),
        ])
        .map_err(csv_err)?;
        for (group, g) in &self.per_group {
            w.write_record([
                group.clone(),
                g.n.to_string(),
                g.srcc.map(fmt_f64).unwrap_or_default(),
                g.plcc.map(fmt_f64).unwrap_or_default(),
                fmt_f64(g.mean_pred),
                fmt_f64(g.mean_true),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| MetricError::Csv(e.to_string()))
    }
}

/// Fixed-precision formatting for CSV cells.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Rank by counting: rank = 1 + #smaller + (#equal - 1) / 2.
    fn oracle_ranks(values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .map(|v| {
                let smaller = values.iter().filter(|w| *w < v).count() as f64;
                let equal = values.iter().filter(|w| *w == v).count() as f64;
                1.0 + smaller + (equal - 1.0) / 2.0
            })
            .collect()
    }

    fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    #[test]
    fn rank_examples() {
        assert_eq!(fractional_ranks(&[10.0, 20.0, 30.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(fractional_ranks(&[5.0, 5.0, 7.0]).unwrap(), vec![1.5, 1.5, 3.0]);
        assert_eq!(fractional_ranks(&[1.0, f64::NAN]), Err(MetricError::NonFinite(1)));
    }

    #[test]
    fn ranks_with_duplicates_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..50).map(|_| rng.random_range(0..12) as f64).collect();
        let ranks = fractional_ranks(&values).unwrap();
        assert_eq!(ranks, oracle_ranks(&values));
        let total: f64 = ranks.iter().sum();
        assert_eq!(total, 50.0 * 51.0 / 2.0);
    }

    #[test]
    fn plcc_examples() {
        assert!((plcc(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((plcc(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(plcc(&[1.0, 2.0], &[1.0]), Err(MetricError::LengthMismatch(2, 1)));
        assert_eq!(
            plcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(MetricError::ConstantInput)
        );
        assert_eq!(plcc(&[1.0], &[1.0]), Err(MetricError::TooFewSamples(1)));
    }

    #[test]
    fn plcc_matches_textbook_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.random::<f64>()).collect();
        assert!((plcc(&x, &y).unwrap() - oracle_pearson(&x, &y)).abs() < 1e-12);
    }

    #[test]
    fn srcc_examples() {
        let s = srcc(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 3.0, 2.0, 5.0, 4.0]).unwrap();
        assert!((s - 0.8).abs() < 1e-15);
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v.powi(3) - 4.0).collect();
        assert_eq!(srcc(&x, &y).unwrap(), 1.0);
    }

    #[test]
    fn srcc_with_ties_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let x: Vec<f64> = (0..40).map(|_| rng.random_range(0..5) as f64).collect();
            let y: Vec<f64> = (0..40).map(|_| rng.random_range(0..7) as f64).collect();
            let expected = oracle_pearson(&oracle_ranks(&x), &oracle_ranks(&y));
            assert!((srcc(&x, &y).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn grouped_perfect_orderings() {
        let preds = [1.0, 2.0, 3.0, 10.0, 11.0, 12.0];
        let targets = [0.1, 0.2, 0.3, 5.0, 6.0, 7.0];
        let groups = ["a", "a", "a", "b", "b", "b"];
        let r = grouped_metrics(&preds, &targets, &groups, 2).unwrap();
        assert_eq!(r.srcc, 1.0);
        for g in r.per_group.values() {
            assert_eq!(g.srcc, Some(1.0));
        }
    }

    #[test]
    fn min_group_size_drops_small_groups() {
        let mut preds = Vec::new();
        let mut groups = Vec::new();
        for (g, size) in [("big", 30), ("small", 29)] {
            for i in 0..size {
                preds.push(i as f64 + if g == "big" { 0.0 } else { 0.5 });
                groups.push(g);
            }
        }
        let targets: Vec<f64> = preds.iter().map(|p| p * 2.0).collect();
        let r = grouped_metrics(&preds, &targets, &groups, 30).unwrap();
        assert!(r.per_group.contains_key("big"));
        assert!(!r.per_group.contains_key("small"));
        assert_eq!(r.n, 59);
    }

    #[test]
    fn group_means_match_hand_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 200;
        let groups: Vec<String> = (0..n).map(|i| format!("g{}", i % 5)).collect();
        let preds: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let r = grouped_metrics(&preds, &targets, &groups, 2).unwrap();
        assert_eq!(r.per_group.len(), 5);
        for g in 0..5 {
            let name = format!("g{g}");
            let (mut sp, mut st, mut c) = (0.0, 0.0, 0);
            for i in 0..n {
                if groups[i] == name {
                    sp += preds[i];
                    st += targets[i];
                    c += 1;
                }
            }
            let stats = &r.per_group[&name];
            assert_eq!(stats.n, c);
            assert!((stats.mean_pred - sp / c as f64).abs() < 1e-12);
            assert!((stats.mean_true - st / c as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_group_is_flagged() {
        let preds = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let targets = [2.0, 2.0, 2.0, 1.0, 3.0, 5.0];
        let groups = ["flat", "flat", "flat", "ok", "ok", "ok"];
        let r = grouped_metrics(&preds, &targets, &groups, 3).unwrap();
        let flat = &r.per_group["flat"];
        assert_eq!(flat.flag, Some(GroupFlag::ConstantTargets));
        assert_eq!(flat.srcc, None);
        assert_eq!(r.scored_groups().count(), 1);
        assert_eq!(r.mean_group_srcc(), Some(1.0));
    }

    #[test]
    fn grouped_errors() {
        assert_eq!(
            grouped_metrics(&[1.0, 2.0], &[1.0, 2.0], &["a"], 2),
            Err(MetricError::LengthMismatch(2, 1))
        );
        assert_eq!(
            grouped_metrics(&[1.0, 2.0], &[1.0, 2.0], &["a", "a"], 1),
            Err(MetricError::InvalidMinGroupSize(1))
        );
    }

    #[test]
    fn csv_layout() {
        let r = grouped_metrics(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0], &["x", "x", "x"], 2).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "group,n,srcc,plcc,mean_pred,mean_true");
        assert!(lines[1].starts_with("overall,3,0.500000,0.500000"));
        assert_eq!(lines[2], "x,3,0.500000,0.500000,2.000000,2.000000");
    }

    fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..60).prop_flat_map(|n| {
            (
                prop::collection::vec(-50.0f64..50.0, n),
                prop::collection::vec(-50.0f64..50.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn srcc_invariant_under_monotone_maps((x, y) in vec_pair()) {
            prop_assume!(plcc(&x, &y).is_ok());
            let base = srcc(&x, &y).unwrap();
            let cube: Vec<f64> = x.iter().map(|v| v * v * v).collect();
            let affine: Vec<f64> = y.iter().map(|v| 3.0 * v + 7.0).collect();
            let expo: Vec<f64> = x.iter().map(|v| (v / 10.0).exp()).collect();
            prop_assert!((srcc(&cube, &y).unwrap() - base).abs() < 1e-12);
            prop_assert!((srcc(&x, &affine).unwrap() - base).abs() < 1e-12);
            prop_assert!((srcc(&expo, &y).unwrap() - base).abs() < 1e-12);
        }

        #[test]
        fn plcc_affine_behaviour((x, y) in vec_pair(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            prop_assume!(plcc(&x, &y).is_ok());
            let base = plcc(&x, &y).unwrap();
            let pos: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let neg: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((plcc(&pos, &y).unwrap() - base).abs() < 1e-9);
            prop_assert!((plcc(&neg, &y).unwrap() + base).abs() < 1e-9);
        }

        #[test]
        fn both_metrics_symmetric((x, y) in vec_pair()) {
            prop_assume!(plcc(&x, &y).is_ok());
            prop_assert!((plcc(&x, &y).unwrap() - plcc(&y, &x).unwrap()).abs() < 1e-12);
            prop_assert!((srcc(&x, &y).unwrap() - srcc(&y, &x).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn tie_free_closed_form(perm in Just((0..30).collect::<Vec<usize>>()).prop_shuffle()) {
            let n = perm.len() as f64;
            let x: Vec<f64> = (0..perm.len()).map(|i| i as f64).collect();
            let y: Vec<f64> = perm.iter().map(|&p| p as f64).collect();
            let d2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
            let closed = 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
            prop_assert!((srcc(&x, &y).unwrap() - closed).abs() < 1e-9);
        }
    }
}
