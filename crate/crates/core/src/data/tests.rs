use proptest::prelude::*;

use super::*;

fn date(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, DATE_FORMAT).unwrap()
}

fn tiny(labels: &[u8], values: &[f64], dates: &[&str]) -> RawDataset {
    let d = values.len() / labels.len();
    RawDataset {
        feature_names: (0..d).map(|j| format!("f{j}")).collect(),
        dates: dates.iter().map(|s| date(s)).collect(),
        labels: labels.to_vec(),
        features: values.to_vec(),
        source_rows: (0..labels.len()).collect(),
    }
}

fn with_counts(pos: usize, neg: usize) -> RawDataset {
    let labels: Vec<u8> = std::iter::repeat_n(1, pos).chain(std::iter::repeat_n(0, neg)).collect();
    let values: Vec<f64> = (0..labels.len()).map(|i| i as f64).collect();
    let dates = vec!["2020-01-01"; labels.len()];
    tiny(&labels, &values, &dates)
}

/// Rank-sum AUC with midranks for ties.
fn mann_whitney(scores: &[f64], labels: &[u8]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        for k in i..=j {
            ranks[idx[k]] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    let np = labels.iter().filter(|&&y| y == 1).count() as f64;
    let nn = labels.len() as f64 - np;
    let rsum: f64 = ranks.iter().zip(labels).filter(|(_, &y)| y == 1).map(|(r, _)| r).sum();
    (rsum - np * (np + 1.0) / 2.0) / (np * nn)
}

/// Projects onto the class-mean difference of the first half, scores the
/// second half.
fn probe_auc(ds: &RawDataset) -> f64 {
    let (d, half) = (ds.dim(), ds.len() / 2);
    let mut diff = vec![0.0; d];
    let (p, n) = ds.select(&(0..half).collect::<Vec<_>>()).class_counts();
    for r in 0..half {
        let w = if ds.labels[r] == 1 { 1.0 / p as f64 } else { -1.0 / n as f64 };
        for (a, v) in diff.iter_mut().zip(ds.row(r)) {
            *a += w * v;
        }
    }
    let scores: Vec<f64> = (half..ds.len()).map(|r| ds.row(r).iter().zip(&diff).map(|(a, b)| a * b).sum()).collect();
    mann_whitney(&scores, &ds.labels[half..])
}

#[test]
fn boundary_day_goes_to_validation() {
    let ds = tiny(&[1, 0], &[1.0, 2.0], &["2021-12-31", "2022-01-01"]);
    let s = temporal_split(&ds, default_cutoff());
    assert_eq!(s.train.dates, [date("2021-12-31")]);
    assert_eq!(s.validation.dates, [date("2022-01-01")]);
    assert!(s.warnings.is_empty());
}

#[test]
fn empty_side_warns() {
    let ds = tiny(&[1, 0], &[1.0, 2.0], &["2020-01-01", "2021-01-01"]);
    let s = temporal_split(&ds, default_cutoff());
    assert!(s.validation.is_empty());
    assert_eq!(s.warnings.len(), 1);
    assert!(s.warnings[0].contains("validation"));
    assert!(prepare(&ds, default_cutoff(), 1).is_err());
}

#[test]
fn undersampling_to_minority() {
    let (b, rec) = balance_undersample(&with_counts(10, 30), 7).unwrap();
    assert_eq!(b.class_counts(), (10, 10));
    assert_eq!(rec, BalanceRecord { positives_in: 10, negatives_in: 30, kept_per_class: 10, dropped: 20 });
    // All positives are kept.
    let mut kept: Vec<usize> = b.source_rows.iter().copied().filter(|&r| r < 10).collect();
    kept.sort();
    assert_eq!(kept, (0..10).collect::<Vec<_>>());
}

#[test]
fn balanced_input_keeps_multiset() {
    let ds = with_counts(5, 5);
    let (b, _) = balance_undersample(&ds, 3).unwrap();
    let mut rows = b.source_rows.clone();
    rows.sort();
    assert_eq!(rows, ds.source_rows);
}

#[test]
fn balancing_is_deterministic() {
    let ds = with_counts(17, 40);
    let a = balance_undersample(&ds, 99).unwrap().0;
    let b = balance_undersample(&ds, 99).unwrap().0;
    assert_eq!(a, b);
    assert_ne!(a.source_rows, balance_undersample(&ds, 100).unwrap().0.source_rows);
}

#[test]
fn single_class_is_contract_error() {
    assert!(matches!(balance_undersample(&with_counts(4, 0), 0), Err(Error::Contract(_))));
}

#[test]
fn z_score_hand_examples() {
    let train = tiny(&[1, 0, 1], &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0], &["2020-01-01"; 3]);
    let val = tiny(&[0], &[2.0, 7.0], &["2022-01-01"]);
    let (t, v) = standardize(&train, &val).unwrap();
    assert_eq!(t.features, [-1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    assert_eq!(v.features, [0.0, 2.0]);
    assert_eq!(t.stats.std, [1.0, 1.0]);
}

#[test]
fn stats_depend_on_train_rows_only() {
    let ds = synth_generate(60, 60, 5, 4, 2.0);
    let s = temporal_split(&ds, default_cutoff());
    let (a, _) = standardize(&s.train, &s.validation).unwrap();
    let mut other_val = s.validation.clone();
    other_val.features.iter_mut().for_each(|v| *v = *v * 10.0 + 3.0);
    let (b, _) = standardize(&s.train, &other_val).unwrap();
    assert_eq!(a.stats, b.stats);
    assert_eq!(a.stats, Standardizer::fit(&s.train).unwrap());
}

#[test]
fn prepared_pipeline_properties() {
    let ds = synth_generate(300, 500, 7, 42, 1.0);
    let p = prepare(&ds, default_cutoff(), 42).unwrap();
    for s in [&p.train, &p.validation] {
        let (pos, neg) = s.class_counts();
        assert_eq!(pos, neg);
    }
    assert!(p.train.dates.iter().all(|&d| d < default_cutoff()));
    assert!(p.validation.dates.iter().all(|&d| d >= default_cutoff()));
    let n = p.train.len() as f64;
    for j in 0..7 {
        let col: Vec<f64> = (0..p.train.len()).map(|r| p.train.row(r)[j]).collect();
        let mean = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 1e-6 && (sd - 1.0).abs() < 1e-6);
    }
    let again = prepare(&ds, default_cutoff(), 42).unwrap();
    assert_eq!(again.train, p.train);
    assert_eq!(again.validation, p.validation);
    let m = p.manifest();
    assert_eq!(m.cutoff, "2022-01-01");
    let json = serde_json::to_string(&m).unwrap();
    assert_eq!(serde_json::from_str::<SplitManifest>(&json).unwrap(), m);
}

#[test]
fn separation_controls_linear_separability() {
    let auc6 = probe_auc(&synth_generate(2000, 2000, 276, 42, 6.0));
    assert!(auc6 > 0.99, "{auc6}");
    let auc0 = probe_auc(&synth_generate(2000, 2000, 276, 42, 0.0));
    assert!((auc0 - 0.5).abs() < 0.03, "{auc0}");
}

#[test]
fn windows_stack_consecutive_days() {
    let days: Vec<f64> = (0..10).map(f64::from).collect(); // 5 days x 2
    let w = assemble_windows(&days, 2, 3).unwrap();
    assert_eq!(w, [0., 1., 2., 3., 4., 5., 2., 3., 4., 5., 6., 7., 4., 5., 6., 7., 8., 9.]);
    assert!(assemble_windows(&days, 2, 6).unwrap().is_empty());
    assert!(assemble_windows(&days, 3, 2).is_err());
}

proptest! {
    #[test]
    fn split_is_a_partition(offsets in proptest::collection::vec(0i64..2000, 1..60)) {
        let base = date("2019-06-01");
        let dates: Vec<NaiveDate> = offsets.iter().map(|&o| base + chrono::Days::new(o as u64)).collect();
        let ds = RawDataset {
            feature_names: vec!["a".into()],
            labels: offsets.iter().map(|&o| (o % 2) as u8).collect(),
            features: offsets.iter().map(|&o| o as f64).collect(),
            source_rows: (0..offsets.len()).collect(),
            dates,
        };
        let s = temporal_split(&ds, default_cutoff());
        prop_assert_eq!(s.train.len() + s.validation.len(), ds.len());
        let mut rows: Vec<usize> = s.train.source_rows.iter().chain(&s.validation.source_rows).copied().collect();
        rows.sort();
        prop_assert_eq!(rows, ds.source_rows);
    }

    #[test]
    fn balanced_counts_equal(pos in 1usize..40, neg in 1usize..40, seed in any::<u64>()) {
        let (b, rec) = balance_undersample(&with_counts(pos, neg), seed).unwrap();
        prop_assert_eq!(b.class_counts(), (pos.min(neg), pos.min(neg)));
        prop_assert_eq!(rec.dropped + 2 * rec.kept_per_class, pos + neg);
    }
}
