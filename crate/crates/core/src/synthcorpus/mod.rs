mod generate;
mod io;
mod probe;
mod stats;

pub use generate::{
    generate_corpus, Corpus, CorpusConfig, ImpressionRecord, ItemProfile, ItemTruth, UserProfile, SECONDS_PER_DAY,
};
pub use io::{
    impressions_csv, items_csv, load_corpus, save_corpus, stats_csv, CorpusData, CORPUS_MANIFEST, IMPRESSIONS_FILE,
    ITEMS_FILE, STATS_FILE,
};
pub use probe::{cold_ctr_affinity_correlation, content_probe_auc, fit_logistic_1d, pearson};
pub use stats::{
    compute_stat_features, maturity_of, split_by_maturity, Maturity, MaturityBuckets, StatFeatures, StatIndex,
    StatNormalizer, N_STATS, STAT_WINDOW_DAYS,
};
