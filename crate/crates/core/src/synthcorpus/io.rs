use std::fmt::Write as _;
use std::path::Path;

use super::generate::{Corpus, CorpusConfig, ImpressionRecord, ItemProfile};
use super::stats::StatIndex;
use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_required_string, write_atomic};

pub const ITEMS_FILE: &str = "items.csv";
pub const IMPRESSIONS_FILE: &str = "impressions.csv";
pub const STATS_FILE: &str = "stats.csv";
pub const CORPUS_MANIFEST: &str = "corpus.json";

/// What a model may see of a corpus: item content, ages and the logs.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusData {
    pub config: CorpusConfig,
    pub items: Vec<ItemProfile>,
    pub impressions: Vec<ImpressionRecord>,
}

impl From<&Corpus> for CorpusData {
    fn from(c: &Corpus) -> Self {
        Self {
            config: c.config.clone(),
            items: c.items.clone(),
            impressions: c.impressions.clone(),
        }
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Manifest {
    seed: u64,
    config: CorpusConfig,
}

pub fn items_csv(items: &[ItemProfile]) -> String {
    let dim = items.first().map_or(0, |it| it.content.len());
    let mut out = String::from("item_id,age");
    for j in 1..=dim {
        let _ = write!(out, ",v{j}");
    }
    out.push('\n');
    for it in items {
        let _ = write!(out, "{},{}", it.item_id, it.age);
        for v in &it.content {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

pub fn impressions_csv(impressions: &[ImpressionRecord]) -> String {
    let mut out = String::from("user_id,item_id,history,click,pay,ts\n");
    for r in impressions {
        let hist: Vec<String> = r.history.iter().map(usize::to_string).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.user_id,
            r.target_item_id,
            hist.join("|"),
            u8::from(r.click),
            u8::from(r.pay),
            r.timestamp
        );
    }
    out
}

/// One row per item and day: statistics as of the start of that day.
pub fn stats_csv(items: &[ItemProfile], index: &StatIndex, days: usize) -> String {
    let mut out = String::from("item_id,day,online_duration_days,exposures_7d,clicks_7d\n");
    for it in items {
        for day in 0..days {
            let f = index.features(it.item_id, day);
            let _ = writeln!(
                out,
                "{},{day},{},{},{}",
                it.item_id, f.online_duration_days, f.exposures_7d, f.clicks_7d
            );
        }
    }
    out
}

pub fn save_corpus(dir: &Path, corpus: &Corpus, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let c = &corpus.config;
    let index = StatIndex::build(&corpus.items, &corpus.impressions, c.days);
    write_atomic(&dir.join(ITEMS_FILE), items_csv(&corpus.items).as_bytes())?;
    write_atomic(&dir.join(IMPRESSIONS_FILE), impressions_csv(&corpus.impressions).as_bytes())?;
    write_atomic(&dir.join(STATS_FILE), stats_csv(&corpus.items, &index, c.days).as_bytes())?;
    let manifest = Manifest {
        seed,
        config: c.clone(),
    };
    write_atomic(
        &dir.join(CORPUS_MANIFEST),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    Ok(())
}

fn parse<T: std::str::FromStr>(path: &Path, line: usize, field: &str) -> Result<T> {
    field.parse().map_err(|_| Error::Format {
        path: path.to_path_buf(),
        reason: format!("line {line}: cannot parse {field:?}"),
    })
}

pub fn load_corpus(dir: &Path) -> Result<CorpusData> {
    let manifest_path = dir.join(CORPUS_MANIFEST);
    let manifest: Manifest = serde_json::from_str(&read_required_string(&manifest_path)?)?;

    let items_path = dir.join(ITEMS_FILE);
    let mut items = Vec::new();
    for (n, line) in read_required_string(&items_path)?.lines().enumerate().skip(1) {
        let mut fields = line.split(',');
        let item_id = parse(&items_path, n + 1, fields.next().unwrap_or(""))?;
        let age = parse(&items_path, n + 1, fields.next().unwrap_or(""))?;
        let content = fields
            .map(|f| parse::<f64>(&items_path, n + 1, f))
            .collect::<Result<Vec<_>>>()?;
        items.push(ItemProfile {
            item_id,
            content,
            age,
            popularity: 0.0,
        });
    }

    let imp_path = dir.join(IMPRESSIONS_FILE);
    let mut impressions = Vec::new();
    for (n, line) in read_required_string(&imp_path)?.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::Format {
                path: imp_path,
                reason: format!("line {}: expected 6 fields", n + 1),
            });
        }
        let history = if f[2].is_empty() {
            Vec::new()
        } else {
            f[2].split('|')
                .map(|h| parse(&imp_path, n + 1, h))
                .collect::<Result<Vec<_>>>()?
        };
        impressions.push(ImpressionRecord {
            user_id: parse(&imp_path, n + 1, f[0])?,
            target_item_id: parse(&imp_path, n + 1, f[1])?,
            history,
            click: parse::<u8>(&imp_path, n + 1, f[3])? == 1,
            pay: parse::<u8>(&imp_path, n + 1, f[4])? == 1,
            timestamp: parse(&imp_path, n + 1, f[5])?,
        });
    }
    let data = CorpusData {
        config: manifest.config,
        items,
        impressions,
    };
    validate_data(&data, &imp_path)?;
    Ok(data)
}

fn validate_data(data: &CorpusData, path: &Path) -> Result<()> {
    let n = data.items.len();
    for (i, it) in data.items.iter().enumerate() {
        if it.item_id != i {
            return Err(Error::Format {
                path: path.with_file_name(ITEMS_FILE),
                reason: format!("item ids must be dense and ordered; row {i} has id {}", it.item_id),
            });
        }
    }
    for r in &data.impressions {
        if r.target_item_id >= n || r.history.iter().any(|&h| h >= n) {
            return Err(Error::IndexOutOfRange {
                what: "impression item id",
                index: r.target_item_id.max(r.history.iter().copied().max().unwrap_or(0)),
                size: n,
            });
        }
        if r.pay && !r.click {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: "pay without click".into(),
            });
        }
    }
    Ok(())
}
