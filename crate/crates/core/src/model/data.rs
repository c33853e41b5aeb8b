use crate::error::{Error, Result};
use crate::synthcorpus::{CorpusData, StatFeatures, StatIndex, StatNormalizer, N_STATS};

/// One impression in model-ready form. Item ids are corpus ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub user: usize,
    pub item: usize,
    pub history: Vec<usize>,
    pub raw_stats: StatFeatures,
    /// Normalized statistics.
    pub stats: [f64; N_STATS],
    pub click: bool,
    pub pay: bool,
    pub day: usize,
}

/// Time-split examples: every day but the last trains, the last day tests.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub normalizer: StatNormalizer,
    pub index: StatIndex,
    pub n_items: usize,
    pub n_users: usize,
    pub test_day: usize,
    /// Online age of each item on the test day.
    pub item_ages: Vec<usize>,
}

impl Dataset {
    pub fn build(data: &CorpusData, l_max: usize) -> Result<Self> {
        let days = data.config.days;
        let test_day = days - 1;
        let index = StatIndex::build(&data.items, &data.impressions, days);
        let n_users = data.impressions.iter().map(|r| r.user_id + 1).max().unwrap_or(0).max(data.config.n_users);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for r in &data.impressions {
            if r.history.len() > l_max {
                return Err(Error::Invalid(format!(
                    "history of length {} exceeds l_max {l_max}",
                    r.history.len()
                )));
            }
            let day = r.day();
            let raw = index.features(r.target_item_id, day);
            let ex = Example {
                user: r.user_id,
                item: r.target_item_id,
                history: r.history.clone(),
                raw_stats: raw,
                stats: [0.0; N_STATS],
                click: r.click,
                pay: r.pay,
                day,
            };
            if day >= test_day {
                test.push(ex);
            } else {
                train.push(ex);
            }
        }
        if train.is_empty() || test.is_empty() {
            return Err(Error::Invalid("time split left an empty train or test set".into()));
        }
        let rows: Vec<StatFeatures> = train.iter().map(|e| e.raw_stats).collect();
        let normalizer = StatNormalizer::fit(&rows)?;
        for e in train.iter_mut().chain(test.iter_mut()) {
            e.stats = normalizer.apply(&e.raw_stats);
        }
        let item_ages = data.items.iter().map(|it| index.features(it.item_id, test_day).online_duration_days).collect();
        Ok(Self {
            train,
            test,
            normalizer,
            index,
            n_items: data.items.len(),
            n_users,
            test_day,
            item_ages,
        })
    }

    /// Normalized statistics of every item as of the test day.
    pub fn item_stats_on_test_day(&self) -> Vec<[f64; N_STATS]> {
        (0..self.n_items)
            .map(|i| self.normalizer.apply(&self.index.features(i, self.test_day)))
            .collect()
    }
}
