//! Fixtures shared by the benchmarks.

use gatesid_core::diffkernel::Tensor;
use gatesid_core::model::{Dataset, GateSid, LossConfig, ModelConfig, Variant};
use gatesid_core::rqvae::{assign_sids, train_rqvae, RqVae, RqVaeConfig, SidTable};
use gatesid_core::synthcorpus::{generate_corpus, CorpusConfig, CorpusData};
use gatesid_core::Result;

pub struct Fixture {
    pub content: Tensor,
    pub rq: RqVae,
    pub data: Dataset,
    pub sids: SidTable,
    pub model: GateSid,
}

/// A reduced corpus with a freshly initialized full model.
pub fn fixture(seed: u64) -> Result<Fixture> {
    let config = CorpusConfig {
        n_items: 500,
        n_users: 100,
        n_impressions: 20_000,
        ..CorpusConfig::default()
    };
    let corpus = generate_corpus(&config, seed)?;
    let data = CorpusData::from(&corpus);
    let rows: Vec<Vec<f64>> = data.items.iter().map(|i| i.content.clone()).collect();
    let content = Tensor::from_rows(&rows)?;
    let rq = RqVaeConfig {
        epochs: 2,
        ..RqVaeConfig::default()
    };
    let (rq, _) = train_rqvae(&content, &rq, seed)?;
    let sids = assign_sids(&content, &rq)?;
    let data = Dataset::build(&data, config.l_max)?;
    let model_config = ModelConfig {
        n_items: data.n_items,
        n_users: data.n_users,
        l_max: config.l_max,
        ..ModelConfig::default()
    };
    let model = GateSid::new(Variant::Full, &model_config, LossConfig::default(), &sids, seed)?;
    Ok(Fixture {
        content,
        rq,
        data,
        sids,
        model,
    })
}
