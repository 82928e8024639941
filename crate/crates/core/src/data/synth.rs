use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::RawDataset;

const GROUPS: [&str; 6] = ["vegetation", "moisture", "temp", "precip", "wind", "topo"];

/// Column names in six contiguous groups, e.g. `vegetation_00 .. topo_45`
/// for 276 features.
pub fn feature_names(d: usize) -> Vec<String> {
    let per = d.div_ceil(GROUPS.len()).max(1);
    (0..d).map(|j| format!("{}_{:02}", GROUPS[(j / per).min(5)], j % per)).collect()
}

pub fn synth_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid date")
}

pub fn synth_end() -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 12, 31).expect("valid date")
}

/// Two unit-variance Gaussian clusters whose means sit at `-separation/2`
/// and `+separation/2` along a random unit direction. Labels are shuffled,
/// then rows are dated in order across 2019-01-01..2022-12-31, so roughly a
/// quarter of the rows fall on or after 2022-01-01.
pub fn synth_generate(n_pos: usize, n_neg: usize, d: usize, seed: u64, separation: f64) -> RawDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    dir.iter_mut().for_each(|v| *v /= norm);

    let mut labels: Vec<u8> = std::iter::repeat_n(1, n_pos).chain(std::iter::repeat_n(0, n_neg)).collect();
    labels.shuffle(&mut rng);

    let n = labels.len();
    let span = (synth_end() - synth_start()).num_days() as usize + 1;
    let mut ds = RawDataset::empty(feature_names(d));
    ds.features.reserve(n * d);
    for (i, &y) in labels.iter().enumerate() {
        let shift = if y == 1 { separation / 2.0 } else { -separation / 2.0 };
        for &u in &dir {
            let z: f64 = StandardNormal.sample(&mut rng);
            ds.features.push(z + shift * u);
        }
        let day = (i * span) / n.max(1);
        ds.dates.push(synth_start() + Days::new(day as u64));
        ds.labels.push(y);
        ds.source_rows.push(i);
    }
    ds
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::io::write_csv_to;

    #[test]
    fn names_follow_groups() {
        let names = feature_names(276);
        assert_eq!(names[0], "vegetation_00");
        assert_eq!(names[45], "vegetation_45");
        assert_eq!(names[46], "moisture_00");
        assert_eq!(names[275], "topo_45");
    }

    #[test]
    fn counts_dates_and_split_coverage() {
        let ds = synth_generate(30, 50, 6, 1, 1.0);
        assert_eq!(ds.len(), 80);
        assert_eq!(ds.labels.iter().filter(|&&y| y == 1).count(), 30);
        assert!(ds.dates.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(ds.dates[0], synth_start());
        assert!(*ds.dates.last().unwrap() <= synth_end());
        let cutoff = NaiveDate::from_ymd_opt(2022, 1, 1).unwrap();
        let late = ds.dates.iter().filter(|&&d| d >= cutoff).count();
        assert!((15..=25).contains(&late), "{late}");
    }

    #[test]
    fn class_means_sit_separation_apart() {
        let d = 5;
        let ds = synth_generate(4000, 4000, d, 2, 6.0);
        let mut mean = [vec![0.0; d], vec![0.0; d]];
        for r in 0..ds.len() {
            for (m, v) in mean[ds.labels[r] as usize].iter_mut().zip(ds.row(r)) {
                *m += v / 4000.0;
            }
        }
        let gap: f64 = mean[1].iter().zip(&mean[0]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!((gap - 6.0).abs() < 0.15, "{gap}");
    }

    #[test]
    fn same_seed_same_bytes() {
        let bytes = |seed| {
            let mut b = Vec::new();
            write_csv_to(&synth_generate(20, 20, 4, seed, 3.0), &mut b).unwrap();
            b
        };
        assert_eq!(bytes(42), bytes(42));
        assert_ne!(bytes(42), bytes(43));
    }
}
