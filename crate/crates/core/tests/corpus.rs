use gatesid_core::synthcorpus::{
    cold_ctr_affinity_correlation, compute_stat_features, content_probe_auc, generate_corpus, impressions_csv,
    items_csv, load_corpus, save_corpus, split_by_maturity, CorpusConfig, StatIndex,
};
use proptest::prelude::*;

fn small() -> CorpusConfig {
    CorpusConfig {
        n_items: 300,
        n_users: 60,
        n_impressions: 6000,
        ..CorpusConfig::default()
    }
}

#[test]
fn same_seed_gives_identical_files() {
    let a = generate_corpus(&small(), 7).unwrap();
    let b = generate_corpus(&small(), 7).unwrap();
    assert_eq!(items_csv(&a.items), items_csv(&b.items));
    assert_eq!(impressions_csv(&a.impressions), impressions_csv(&b.impressions));
    let c = generate_corpus(&small(), 8).unwrap();
    assert_ne!(impressions_csv(&a.impressions), impressions_csv(&c.impressions));

    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    save_corpus(da.path(), &a, 7).unwrap();
    save_corpus(db.path(), &b, 7).unwrap();
    for f in ["items.csv", "impressions.csv", "stats.csv", "corpus.json"] {
        let x = std::fs::read(da.path().join(f)).unwrap();
        let y = std::fs::read(db.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
    let back = load_corpus(da.path()).unwrap();
    assert_eq!(back.impressions, a.impressions);
}

#[test]
fn infeasible_configs_are_rejected() {
    for bad in [
        CorpusConfig { n_items: 0, ..small() },
        CorpusConfig { days: 1, ..small() },
        CorpusConfig { label_noise: 1.5, ..small() },
    ] {
        assert!(generate_corpus(&bad, 1).is_err());
    }
}

#[test]
fn maturity_thresholds_from_the_table_caption() {
    let c = generate_corpus(&small(), 3).unwrap();
    let mut items = c.items.clone();
    items[0].age = 5;
    items[1].age = 350;
    let b = split_by_maturity(&items, 20, 300).unwrap();
    assert!(b.new.contains(&0));
    assert!(b.popular.contains(&1));
    assert_eq!(b.new.len() + b.mid.len() + b.popular.len(), items.len());
    assert!(split_by_maturity(&items, 300, 20).is_err());
}

/// Golden-seed checks of the planted trade-off at the default configuration.
#[test]
fn default_corpus_plants_the_semantic_collaborative_tradeoff() {
    let c = generate_corpus(&CorpusConfig::default(), 7).unwrap();
    assert_eq!(c.items.len(), 2000);
    assert_eq!(c.users.len(), 500);
    let cold = content_probe_auc(&c, |a| a < 20).unwrap();
    let popular = content_probe_auc(&c, |a| a > 300).unwrap();
    let r = cold_ctr_affinity_correlation(&c, 20, 10).unwrap();
    assert!(cold >= 0.65, "cold probe AUC {cold}");
    assert!(popular <= 0.6, "popular probe AUC {popular}");
    assert!(r >= 0.3, "cold CTR/affinity r {r}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn records_respect_label_and_history_rules(seed in any::<u64>()) {
        let cfg = small();
        let c = generate_corpus(&cfg, seed).unwrap();
        prop_assert_eq!(c.items.len(), cfg.n_items);
        prop_assert_eq!(c.impressions.len(), cfg.n_impressions);
        for r in &c.impressions {
            prop_assert!(!r.pay || r.click);
            prop_assert!(r.history.len() <= cfg.l_max);
            prop_assert!(!r.history.contains(&r.target_item_id));
            prop_assert!(r.user_id < cfg.n_users && r.target_item_id < cfg.n_items);
            prop_assert!(r.day() < cfg.days);
        }
        for w in c.impressions.windows(2) {
            prop_assert!(w[0].timestamp <= w[1].timestamp);
        }
    }

    #[test]
    fn stat_index_matches_direct_recount(seed in any::<u64>()) {
        let cfg = small();
        let c = generate_corpus(&cfg, seed).unwrap();
        let index = StatIndex::build(&c.items, &c.impressions, cfg.days);
        for item in c.items.iter().step_by(17) {
            for day in 0..cfg.days {
                let direct = compute_stat_features(&c.impressions, item, day, cfg.days);
                prop_assert_eq!(index.features(item.item_id, day), direct);
                prop_assert!(direct.clicks_7d <= direct.exposures_7d);
            }
        }
    }
}
