use std::collections::BTreeMap;

use super::{Result, StoreError};

/// Linear-interpolation quantile over `sorted` (ascending), with the
/// `h = (n - 1) * p` convention.
pub fn linear_quantile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Removes ids whose value falls strictly between the `lo` and `hi`
/// quantiles; keeps `v <= Q(lo)` and `v >= Q(hi)`. Input order is preserved.
pub fn filter_quantile_band(values: &[(String, f64)], lo: f64, hi: f64) -> Result<Vec<String>> {
    if values.is_empty() {
        return Err(StoreError::EmptyInput);
    }
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
        return Err(StoreError::BadBand { lo, hi });
    }
    let mut sorted: Vec<f64> = values.iter().map(|(_, v)| *v).collect();
    sorted.sort_by(f64::total_cmp);
    let q_lo = linear_quantile(&sorted, lo);
    let q_hi = linear_quantile(&sorted, hi);
    Ok(values
        .iter()
        .filter(|(_, v)| *v <= q_lo || *v >= q_hi)
        .map(|(id, _)| id.clone())
        .collect())
}

/// Band filter over values tagged with a task name. With `per_task` the
/// quantiles are computed inside each task, otherwise over the pooled set.
pub fn filter_quantile_band_by_task(
    values: &[(String, String, f64)],
    lo: f64,
    hi: f64,
    per_task: bool,
) -> Result<Vec<String>> {
    if !per_task {
        let pooled: Vec<(String, f64)> = values.iter().map(|(id, _, v)| (id.clone(), *v)).collect();
        return filter_quantile_band(&pooled, lo, hi);
    }
    let mut by_task: BTreeMap<&str, Vec<(String, f64)>> = BTreeMap::new();
    for (id, task, v) in values {
        by_task.entry(task).or_default().push((id.clone(), *v));
    }
    let mut keep = std::collections::HashSet::new();
    for group in by_task.values() {
        keep.extend(filter_quantile_band(group, lo, hi)?);
    }
    if values.is_empty() {
        return Err(StoreError::EmptyInput);
    }
    Ok(values
        .iter()
        .filter(|(id, _, _)| keep.contains(id))
        .map(|(id, _, _)| id.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(vals: &[f64]) -> Vec<(String, f64)> {
        vals.iter().enumerate().map(|(i, v)| (i.to_string(), *v)).collect()
    }

    // Reference quantile: sort, then interpolate by explicit rank arithmetic.
    fn reference_quantile(vals: &[f64], p: f64) -> f64 {
        let mut v = vals.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rank = p * (v.len() as f64 - 1.0);
        let below = rank.floor();
        let frac = rank - below;
        let i = below as usize;
        if i + 1 >= v.len() {
            v[i]
        } else {
            v[i] * (1.0 - frac) + v[i + 1] * frac
        }
    }

    #[test]
    fn twenty_points_default_band() {
        let vals: Vec<f64> = (0..20).map(f64::from).collect();
        assert!((reference_quantile(&vals, 0.55) - 10.45).abs() < 1e-12);
        assert!((reference_quantile(&vals, 0.80) - 15.2).abs() < 1e-12);
        let kept = filter_quantile_band(&ids(&vals), 0.55, 0.80).unwrap();
        let expected: Vec<String> = (0..=10).chain(16..20).map(|i| i.to_string()).collect();
        assert_eq!(kept, expected);
    }

    #[test]
    fn full_band_keeps_extremes() {
        let vals = [3.0, 1.0, 2.0, 5.0, 1.0];
        let kept = filter_quantile_band(&ids(&vals), 0.0, 1.0).unwrap();
        assert_eq!(kept, vec!["1", "3", "4"]);
    }

    #[test]
    fn identical_values_all_kept() {
        let vals = [0.7; 6];
        assert_eq!(filter_quantile_band(&ids(&vals), 0.55, 0.8).unwrap().len(), 6);
    }

    #[test]
    fn errors() {
        assert!(matches!(filter_quantile_band(&[], 0.1, 0.2), Err(StoreError::EmptyInput)));
        assert!(matches!(
            filter_quantile_band(&ids(&[1.0]), 0.8, 0.55),
            Err(StoreError::BadBand { .. })
        ));
    }

    #[test]
    fn per_task_vs_pooled() {
        let mut vals = Vec::new();
        for i in 0..20 {
            vals.push((format!("a{i}"), "a".to_string(), i as f64));
            vals.push((format!("b{i}"), "b".to_string(), 100.0 + i as f64));
        }
        let pooled = filter_quantile_band_by_task(&vals, 0.55, 0.8, false).unwrap();
        let per = filter_quantile_band_by_task(&vals, 0.55, 0.8, true).unwrap();
        assert_eq!(per.len(), 30);
        assert_ne!(pooled, per);
        assert!(pooled.contains(&"a0".to_string()));
    }

    proptest! {
        #[test]
        fn quantile_matches_reference(vals in proptest::collection::vec(-50.0f64..50.0, 1..40), p in 0.0f64..=1.0) {
            let mut s = vals.clone();
            s.sort_by(f64::total_cmp);
            prop_assert!((linear_quantile(&s, p) - reference_quantile(&vals, p)).abs() < 1e-9);
        }

        #[test]
        fn never_drops_extremes(vals in proptest::collection::vec(-50.0f64..50.0, 1..40), lo in 0.0f64..0.5, width in 0.01f64..0.5) {
            let hi = (lo + width).min(1.0);
            let kept = filter_quantile_band(&ids(&vals), lo, hi).unwrap();
            let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for (i, v) in vals.iter().enumerate() {
                if *v == min || *v == max {
                    prop_assert!(kept.contains(&i.to_string()));
                }
            }
        }

        #[test]
        fn wider_band_removes_superset(vals in proptest::collection::vec(-50.0f64..50.0, 1..40),
                                       lo in 0.1f64..0.5, hi in 0.5f64..0.9, shrink in 0.0f64..0.1, grow in 0.0f64..0.1) {
            prop_assume!(lo < hi);
            let narrow = filter_quantile_band(&ids(&vals), lo, hi).unwrap();
            let wide = filter_quantile_band(&ids(&vals), lo - shrink, hi + grow).unwrap();
            // kept-by-wide is a subset of kept-by-narrow
            for id in &wide {
                prop_assert!(narrow.contains(id));
            }
        }
    }
}
