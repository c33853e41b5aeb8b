use serde::{Deserialize, Serialize};

use super::generate::{ImpressionRecord, ItemProfile};
use crate::error::{Error, Result};

pub const STAT_WINDOW_DAYS: usize = 7;
pub const N_STATS: usize = 3;

/// Item statistics as of the start of a day.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatFeatures {
    pub online_duration_days: usize,
    pub exposures_7d: u64,
    pub clicks_7d: u64,
}

impl StatFeatures {
    pub fn raw(&self) -> [f64; N_STATS] {
        [
            self.online_duration_days as f64,
            self.exposures_7d as f64,
            self.clicks_7d as f64,
        ]
    }
}

/// Counts the item's exposures and clicks over the days
/// `[as_of - 7, as_of)`, excluding `as_of` itself.
pub fn compute_stat_features(
    impressions: &[ImpressionRecord],
    item: &ItemProfile,
    as_of_day: usize,
    days: usize,
) -> StatFeatures {
    let lo = as_of_day.saturating_sub(STAT_WINDOW_DAYS);
    let (mut exposures, mut clicks) = (0, 0);
    for r in impressions {
        let d = r.day();
        if r.target_item_id == item.item_id && d >= lo && d < as_of_day {
            exposures += 1;
            clicks += u64::from(r.click);
        }
    }
    StatFeatures {
        online_duration_days: item.age_on(as_of_day, days).unwrap_or(0),
        exposures_7d: exposures,
        clicks_7d: clicks,
    }
}

/// Per-item, per-day counts with prefix sums for O(1) window queries.
#[derive(Clone, Debug)]
pub struct StatIndex {
    days: usize,
    ages: Vec<usize>,
    /// `prefix[item][d]` = (exposures, clicks) on days `< d`.
    prefix: Vec<Vec<(u64, u64)>>,
}

impl StatIndex {
    pub fn build(items: &[ItemProfile], impressions: &[ImpressionRecord], days: usize) -> Self {
        let mut daily = vec![vec![(0u64, 0u64); days]; items.len()];
        for r in impressions {
            let d = r.day().min(days - 1);
            let slot = &mut daily[r.target_item_id][d];
            slot.0 += 1;
            slot.1 += u64::from(r.click);
        }
        let prefix = daily
            .into_iter()
            .map(|row| {
                let mut acc = (0, 0);
                let mut p = Vec::with_capacity(days + 1);
                p.push(acc);
                for (e, c) in row {
                    acc = (acc.0 + e, acc.1 + c);
                    p.push(acc);
                }
                p
            })
            .collect();
        Self {
            days,
            ages: items.iter().map(|it| it.age).collect(),
            prefix,
        }
    }

    pub fn features(&self, item: usize, as_of_day: usize) -> StatFeatures {
        let hi = as_of_day.min(self.days);
        let lo = as_of_day.saturating_sub(STAT_WINDOW_DAYS).min(hi);
        let p = &self.prefix[item];
        StatFeatures {
            online_duration_days: (self.ages[item] + as_of_day).saturating_sub(self.days - 1),
            exposures_7d: p[hi].0 - p[lo].0,
            clicks_7d: p[hi].1 - p[lo].1,
        }
    }
}

/// `log1p` followed by a z-score fitted on training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatNormalizer {
    pub mean: [f64; N_STATS],
    pub std: [f64; N_STATS],
}

impl StatNormalizer {
    pub fn fit(rows: &[StatFeatures]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Invalid("cannot fit stat normalizer on no rows".into()));
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; N_STATS];
        let mut std = [0.0; N_STATS];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.raw()) {
                *m += v.ln_1p() / n;
            }
        }
        for r in rows {
            for ((s, m), v) in std.iter_mut().zip(&mean).zip(r.raw()) {
                *s += (v.ln_1p() - m).powi(2) / n;
            }
        }
        for s in &mut std {
            *s = s.sqrt().max(1e-6);
        }
        Ok(Self { mean, std })
    }

    pub fn identity() -> Self {
        Self {
            mean: [0.0; N_STATS],
            std: [1.0; N_STATS],
        }
    }

    pub fn apply(&self, f: &StatFeatures) -> [f64; N_STATS] {
        let raw = f.raw();
        std::array::from_fn(|k| (raw[k].ln_1p() - self.mean[k]) / self.std[k])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Maturity {
    New,
    Mid,
    Popular,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MaturityBuckets {
    pub new: Vec<usize>,
    pub mid: Vec<usize>,
    pub popular: Vec<usize>,
}

pub fn maturity_of(age: usize, new_threshold: usize, popular_threshold: usize) -> Maturity {
    if age < new_threshold {
        Maturity::New
    } else if age > popular_threshold {
        Maturity::Popular
    } else {
        Maturity::Mid
    }
}

/// New: online fewer than `new_threshold` days. Popular: more than
/// `popular_threshold` days. Everything else is mid.
pub fn split_by_maturity(items: &[ItemProfile], new_threshold: usize, popular_threshold: usize) -> Result<MaturityBuckets> {
    if new_threshold == 0 || new_threshold >= popular_threshold {
        return Err(Error::Invalid(format!(
            "maturity thresholds must satisfy 0 < new ({new_threshold}) < popular ({popular_threshold})"
        )));
    }
    let mut b = MaturityBuckets::default();
    for it in items {
        match maturity_of(it.age, new_threshold, popular_threshold) {
            Maturity::New => b.new.push(it.item_id),
            Maturity::Mid => b.mid.push(it.item_id),
            Maturity::Popular => b.popular.push(it.item_id),
        }
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthcorpus::generate::SECONDS_PER_DAY;

    fn item(id: usize, age: usize) -> ItemProfile {
        ItemProfile {
            item_id: id,
            content: vec![0.0],
            age,
            popularity: 0.5,
        }
    }

    fn rec(item: usize, day: u64, click: bool) -> ImpressionRecord {
        ImpressionRecord {
            user_id: 0,
            target_item_id: item,
            history: vec![],
            click,
            pay: false,
            timestamp: day * SECONDS_PER_DAY + 5,
        }
    }

    #[test]
    fn empty_window_has_zero_counts() {
        let f = compute_stat_features(&[rec(1, 0, true)], &item(0, 30), 5, 10);
        assert_eq!((f.exposures_7d, f.clicks_7d), (0, 0));
        assert_eq!(f.online_duration_days, 26);
    }

    #[test]
    fn five_event_log_matches_manual_tally() {
        // Window for as_of = 9 is days 2..=8.
        let log = [
            rec(0, 1, true),  // outside window
            rec(0, 2, true),  // in
            rec(0, 5, false), // in
            rec(1, 6, true),  // other item
            rec(0, 8, true),  // in
        ];
        let f = compute_stat_features(&log, &item(0, 100), 9, 10);
        assert_eq!((f.exposures_7d, f.clicks_7d), (3, 2));
        let idx = StatIndex::build(&[item(0, 100), item(1, 3)], &log, 10);
        assert_eq!(idx.features(0, 9), f);
        assert_eq!(idx.features(1, 9).clicks_7d, 1);
    }

    #[test]
    fn buckets_follow_thresholds() {
        let items = [item(0, 5), item(1, 350), item(2, 20), item(3, 300), item(4, 19)];
        let b = split_by_maturity(&items, 20, 300).unwrap();
        assert_eq!(b.new, vec![0, 4]);
        assert_eq!(b.popular, vec![1]);
        assert_eq!(b.mid, vec![2, 3]);
        assert_eq!(b.new.len() + b.mid.len() + b.popular.len(), items.len());
        assert!(split_by_maturity(&items, 300, 20).is_err());
    }

    #[test]
    fn normalizer_centers_log_counts() {
        let rows = [
            StatFeatures { online_duration_days: 0, exposures_7d: 0, clicks_7d: 0 },
            StatFeatures { online_duration_days: 99, exposures_7d: 9, clicks_7d: 3 },
        ];
        let n = StatNormalizer::fit(&rows).unwrap();
        let a = n.apply(&rows[0]);
        let b = n.apply(&rows[1]);
        for k in 0..N_STATS {
            assert!((a[k] + b[k]).abs() < 1e-12);
            assert!((b[k] - 1.0).abs() < 1e-9);
        }
    }
}
