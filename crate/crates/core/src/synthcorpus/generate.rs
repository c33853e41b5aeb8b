//! Synthetic items, users and impression logs with a planted lifecycle.
//!
//! Every item belongs to a content cluster (visible through its content
//! vector) and, independently, to a behavioural community (visible only
//! through who interacts with it). The click logit of user `u` on item `i`
//! at online age `a` is
//!
//! ```text
//! base + s(a) * k_sem * aff_content(u, i)
//!      + (1 - s(a)) * (k_col * aff_community(u, i) + k_quality * quality_i)
//! ```
//!
//! with `s(a) = exp(-a / semantic_half_life)`. Young items are therefore
//! predictable from content, mature ones from collaborative structure.

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const SECONDS_PER_DAY: u64 = 86_400;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_items: usize,
    pub n_users: usize,
    pub n_impressions: usize,
    /// Length of the logged window; the last day is held out for testing.
    pub days: usize,
    pub content_dim: usize,
    pub content_clusters: usize,
    pub content_noise: f64,
    pub communities: usize,
    pub community_dim: usize,
    pub liked_clusters_per_user: usize,
    pub liked_communities_per_user: usize,
    /// Fraction of items younger than `new_age_max` days at the last day.
    pub cold_fraction: f64,
    pub new_age_max: usize,
    pub max_age: usize,
    pub l_max: usize,
    /// Probability that a click label is flipped.
    pub label_noise: f64,
    pub semantic_half_life: f64,
    /// Lower bound on the content weight `s(a)` at any age.
    pub semantic_floor: f64,
    /// Added to every item's popularity when drawing exposures.
    pub exposure_floor: f64,
    pub base_logit: f64,
    pub semantic_strength: f64,
    pub community_strength: f64,
    pub quality_strength: f64,
    pub pay_base_logit: f64,
    pub pay_strength: f64,
    /// Simulated impressions per user before day 0, used only to seed histories.
    pub burn_in_per_user: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_items: 2000,
            n_users: 500,
            n_impressions: 200_000,
            days: 10,
            content_dim: 64,
            content_clusters: 16,
            content_noise: 0.35,
            communities: 8,
            community_dim: 32,
            liked_clusters_per_user: 2,
            liked_communities_per_user: 2,
            cold_fraction: 0.3,
            new_age_max: 20,
            max_age: 500,
            l_max: 20,
            label_noise: 0.02,
            semantic_half_life: 60.0,
            semantic_floor: 0.3,
            exposure_floor: 1.0,
            base_logit: -3.5,
            semantic_strength: 8.0,
            community_strength: 8.0,
            quality_strength: 1.0,
            pay_base_logit: -1.0,
            pay_strength: 3.0,
            burn_in_per_user: 60,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("corpus config: {m}")));
        if self.n_items == 0 || self.n_users == 0 || self.n_impressions == 0 {
            return bad("n_items, n_users and n_impressions must be positive");
        }
        if self.days < 2 {
            return bad("days must be at least 2 (train + test)");
        }
        if self.content_dim == 0 || self.content_clusters == 0 || self.communities == 0 || self.community_dim == 0 {
            return bad("dimensions and cluster counts must be positive");
        }
        if !(1..=self.content_clusters).contains(&self.liked_clusters_per_user)
            || !(1..=self.communities).contains(&self.liked_communities_per_user)
        {
            return bad("liked counts must be between 1 and the number of clusters or communities");
        }
        if !(0.0..=1.0).contains(&self.cold_fraction) || !(0.0..=0.5).contains(&self.label_noise) {
            return bad("cold_fraction must be in [0,1] and label_noise in [0,0.5]");
        }
        if self.new_age_max == 0 || self.new_age_max > self.max_age {
            return bad("need 0 < new_age_max <= max_age");
        }
        if self.l_max == 0 || self.semantic_half_life <= 0.0 {
            return bad("l_max and semantic_half_life must be positive");
        }
        if !(0.0..1.0).contains(&self.semantic_floor) || !(self.exposure_floor > 0.0) {
            return bad("semantic_floor must be in [0,1) and exposure_floor positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ItemProfile {
    pub item_id: usize,
    pub content: Vec<f64>,
    /// Days online as of the last logged day.
    pub age: usize,
    pub popularity: f64,
}

impl ItemProfile {
    /// Days online on `day`, or `None` before launch.
    pub fn age_on(&self, day: usize, days: usize) -> Option<usize> {
        (self.age + day).checked_sub(days - 1)
    }
}

/// Generator-side facts that no model sees directly.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemTruth {
    pub content_cluster: usize,
    pub community: usize,
    pub quality: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserProfile {
    pub user_id: usize,
    pub content_preference: Vec<f64>,
    pub community_preference: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImpressionRecord {
    pub user_id: usize,
    pub target_item_id: usize,
    /// Previously clicked items, most recent last, never containing the target.
    pub history: Vec<usize>,
    pub click: bool,
    pub pay: bool,
    pub timestamp: u64,
}

impl ImpressionRecord {
    pub fn day(&self) -> usize {
        (self.timestamp / SECONDS_PER_DAY) as usize
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub items: Vec<ItemProfile>,
    pub truth: Vec<ItemTruth>,
    pub users: Vec<UserProfile>,
    pub impressions: Vec<ImpressionRecord>,
    /// Ground-truth content affinity of each impression's user and item.
    pub content_affinity: Vec<f64>,
    /// Generator click probability before label noise.
    pub click_probability: Vec<f64>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn gaussian_rows(rng: &mut rng::Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

fn mean_of(rows: &[&Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Cumulative exposure weights of the items online on one day.
struct DayPool {
    items: Vec<usize>,
    cumulative: Vec<f64>,
}

impl DayPool {
    fn new(weights: impl Iterator<Item = (usize, f64)>) -> Self {
        let mut items = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        for (i, w) in weights {
            acc += w;
            items.push(i);
            cumulative.push(acc);
        }
        Self { items, cumulative }
    }

    fn draw(&self, rng: &mut rng::Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty pool");
        let x = rng.random::<f64>() * total;
        let pos = self.cumulative.partition_point(|&c| c <= x);
        self.items[pos.min(self.items.len() - 1)]
    }
}

struct Simulator<'a> {
    config: &'a CorpusConfig,
    items: &'a [ItemProfile],
    truth: &'a [ItemTruth],
    users: &'a [UserProfile],
    community_vecs: &'a [Vec<f64>],
}

impl Simulator<'_> {
    fn content_affinity(&self, user: usize, item: usize) -> f64 {
        cosine(&self.users[user].content_preference, &self.items[item].content)
    }

    /// Returns (click, pay, content affinity, click probability) for one
    /// exposure at online age `age`.
    fn outcome(&self, rng: &mut rng::Rng, user: usize, item: usize, age: usize) -> (bool, bool, f64, f64) {
        let c = self.config;
        let s = (-(age as f64) / c.semantic_half_life).exp().max(c.semantic_floor);
        let aff_sem = self.content_affinity(user, item);
        let t = &self.truth[item];
        let aff_col = cosine(
            &self.users[user].community_preference,
            &self.community_vecs[t.community],
        );
        let driver = s * c.semantic_strength * aff_sem
            + (1.0 - s) * (c.community_strength * aff_col + c.quality_strength * t.quality);
        let p_click = sigmoid(c.base_logit + driver);
        let mut click = rng.random::<f64>() < p_click;
        if rng.random::<f64>() < c.label_noise {
            click = !click;
        }
        let pay_logit = c.pay_base_logit + c.pay_strength * (s * aff_sem + (1.0 - s) * aff_col);
        let pay = click && rng.random::<f64>() < sigmoid(pay_logit);
        (click, pay, aff_sem, p_click)
    }
}

fn push_history(history: &mut Vec<usize>, item: usize, l_max: usize) {
    history.retain(|&h| h != item);
    history.push(item);
    if history.len() > l_max {
        history.remove(0);
    }
}

pub fn generate_corpus(config: &CorpusConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let c = config;
    let mut rng = rng::stream(seed, "synthcorpus");

    let centroids = gaussian_rows(&mut rng, c.content_clusters, c.content_dim);
    let community_vecs = gaussian_rows(&mut rng, c.communities, c.community_dim);
    let noise = Normal::new(0.0, c.content_noise).map_err(|e| Error::Invalid(e.to_string()))?;
    let quality_dist = Normal::new(0.0, 0.5).expect("valid");

    let mut items = Vec::with_capacity(c.n_items);
    let mut truth = Vec::with_capacity(c.n_items);
    for item_id in 0..c.n_items {
        let cluster = rng.random_range(0..c.content_clusters);
        let community = rng.random_range(0..c.communities);
        let content = centroids[cluster].iter().map(|m| m + noise.sample(&mut rng)).collect();
        let age = if rng.random::<f64>() < c.cold_fraction {
            rng.random_range(0..c.new_age_max)
        } else {
            rng.random_range(c.new_age_max..=c.max_age)
        };
        let maturity = 1.0 - (-((age + 1) as f64) / 60.0).exp();
        let popularity = (maturity * rng.random_range(0.5..1.0)).clamp(0.0, 1.0);
        items.push(ItemProfile {
            item_id,
            content,
            age,
            popularity,
        });
        truth.push(ItemTruth {
            content_cluster: cluster,
            community,
            quality: quality_dist.sample(&mut rng),
        });
    }

    let users: Vec<UserProfile> = (0..c.n_users)
        .map(|user_id| {
            let liked_c = sample(&mut rng, c.content_clusters, c.liked_clusters_per_user);
            let liked_m = sample(&mut rng, c.communities, c.liked_communities_per_user);
            let cp: Vec<&Vec<f64>> = liked_c.iter().map(|k| &centroids[k]).collect();
            let mp: Vec<&Vec<f64>> = liked_m.iter().map(|k| &community_vecs[k]).collect();
            UserProfile {
                user_id,
                content_preference: mean_of(&cp),
                community_preference: mean_of(&mp),
            }
        })
        .collect();

    let sim = Simulator {
        config: c,
        items: &items,
        truth: &truth,
        users: &users,
        community_vecs: &community_vecs,
    };
    let weight = |it: &ItemProfile| c.exposure_floor + it.popularity;

    // Burn-in: items already online before day 0 seed every user's history.
    let mut histories: Vec<Vec<usize>> = vec![Vec::new(); c.n_users];
    let pre_pool = DayPool::new(
        items
            .iter()
            .filter(|it| it.age_on(0, c.days).is_some_and(|a| a > 0))
            .map(|it| (it.item_id, weight(it))),
    );
    if !pre_pool.items.is_empty() {
        for _ in 0..c.burn_in_per_user {
            for user in 0..c.n_users {
                let item = pre_pool.draw(&mut rng);
                let age = items[item].age_on(0, c.days).unwrap_or(0);
                let (click, _, _, _) = sim.outcome(&mut rng, user, item, age);
                if click {
                    push_history(&mut histories[user], item, c.l_max);
                }
            }
        }
    }

    let mut impressions = Vec::with_capacity(c.n_impressions);
    let mut content_affinity = Vec::with_capacity(c.n_impressions);
    let mut click_probability = Vec::with_capacity(c.n_impressions);
    for day in 0..c.days {
        let pool = DayPool::new(
            items
                .iter()
                .filter(|it| it.age_on(day, c.days).is_some())
                .map(|it| (it.item_id, weight(it))),
        );
        if pool.items.is_empty() {
            continue;
        }
        let count = c.n_impressions / c.days + usize::from(day < c.n_impressions % c.days);
        let mut offsets: Vec<u64> = (0..count).map(|_| rng.random_range(0..SECONDS_PER_DAY)).collect();
        offsets.sort_unstable();
        for off in offsets {
            let user = rng.random_range(0..c.n_users);
            let item = pool.draw(&mut rng);
            let age = items[item].age_on(day, c.days).expect("pool holds online items");
            let (click, pay, aff, p) = sim.outcome(&mut rng, user, item, age);
            let history: Vec<usize> = histories[user].iter().copied().filter(|&h| h != item).collect();
            impressions.push(ImpressionRecord {
                user_id: user,
                target_item_id: item,
                history,
                click,
                pay,
                timestamp: day as u64 * SECONDS_PER_DAY + off,
            });
            content_affinity.push(aff);
            click_probability.push(p);
            if click {
                push_history(&mut histories[user], item, c.l_max);
            }
        }
    }

    Ok(Corpus {
        config: c.clone(),
        items,
        truth,
        users,
        impressions,
        content_affinity,
        click_probability,
    })
}
