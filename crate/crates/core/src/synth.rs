//! Synthetic price panels with planted lead-lag structure, plus the matching
//! relationship files.
//!
//! Leaders follow independent Gaussian returns. Each follower's return on day
//! `t` is `β · r_leader(t−1) + N(0, σ)`, so a follower's next move is
//! predictable only from its leader's latest day.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{write_prices, PriceRow, RawSeries};
use crate::error::{Error, Result};
use crate::graphs::{IndustryRecord, ShareholdingEdge, TopicRecord};

pub const BASE_PRICE: f64 = 100.0;
pub const SHAREHOLDING_RATIO: f64 = 0.1;
/// Log-volume moves linearly with the day's return. Close is not a model
/// input, so this is how a day's move shows up in bounded features.
pub const VOLUME_SENSITIVITY: f64 = 25.0;

/// Output file names inside a fixture directory.
pub const PRICES_FILE: &str = "prices.csv";
pub const SHAREHOLDING_FILE: &str = "shareholding.csv";
pub const INDUSTRY_FILE: &str = "industry.csv";
pub const TOPICALITY_FILE: &str = "topicality.csv";
pub const FOLLOWERS_FILE: &str = "followers.txt";
pub const MANIFEST_FILE: &str = "synth_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_stocks: usize,
    pub n_days: usize,
    pub n_industries: usize,
    pub leaders_per_industry: usize,
    /// β, the share of the leader's previous return passed to a follower.
    pub lead_strength: f64,
    /// Follower noise σ.
    pub noise_sigma: f64,
    /// Standard deviation of leader returns.
    pub leader_sigma: f64,
    /// Topics per industry.
    pub topic_count: usize,
    /// Scramble shareholding and topic files so that only the industry graph
    /// reflects the planted structure.
    pub decoy_graphs: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_stocks: 20,
            n_days: 1000,
            n_industries: 4,
            leaders_per_industry: 1,
            lead_strength: 0.8,
            noise_sigma: 0.01,
            leader_sigma: 0.02,
            topic_count: 4,
            decoy_graphs: false,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(msg));
        if self.n_industries == 0 || self.leaders_per_industry == 0 {
            return bad("need at least one industry and one leader per industry".into());
        }
        if self.n_stocks < 2 * self.n_industries {
            return bad(format!(
                "{} stocks cannot fill {} industries (need at least two each)",
                self.n_stocks, self.n_industries
            ));
        }
        let smallest = self.n_stocks / self.n_industries;
        if self.leaders_per_industry >= smallest {
            return bad(format!(
                "{} leaders per industry leaves no followers in an industry of {smallest}",
                self.leaders_per_industry
            ));
        }
        if !(0.0..=1.0).contains(&self.lead_strength) {
            return bad(format!("lead strength {} outside [0,1]", self.lead_strength));
        }
        for (name, s) in [("noise_sigma", self.noise_sigma), ("leader_sigma", self.leader_sigma)] {
            if !(0.0..=0.1).contains(&s) {
                return bad(format!("{name} = {s} outside [0, 0.1]"));
            }
        }
        if self.n_days < 2 {
            return bad("need at least two days".into());
        }
        if self.topic_count == 0 {
            return bad("topic_count must be positive".into());
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Invalid(format!("bad value `{v}` for `{key}`")))
        }
        match key {
            "n_stocks" => self.n_stocks = num(key, value)?,
            "n_days" => self.n_days = num(key, value)?,
            "n_industries" => self.n_industries = num(key, value)?,
            "leaders_per_industry" => self.leaders_per_industry = num(key, value)?,
            "lead_strength" | "beta" => self.lead_strength = num(key, value)?,
            "noise_sigma" | "sigma" => self.noise_sigma = num(key, value)?,
            "leader_sigma" => self.leader_sigma = num(key, value)?,
            "topic_count" => self.topic_count = num(key, value)?,
            "decoy_graphs" => self.decoy_graphs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Err(Error::Invalid(format!("unknown synth key `{key}`"))),
        }
        Ok(())
    }
}

/// A generated market held in memory.
#[derive(Debug, Clone)]
pub struct SynthMarket {
    pub config: SynthConfig,
    pub ids: Vec<String>,
    pub industry_of: Vec<usize>,
    /// `None` for leaders, the leader's index for followers.
    pub leader_of: Vec<Option<usize>>,
    pub calendar: Vec<NaiveDate>,
    /// `returns[t][i]`; day 0 has return 0.
    pub returns: Vec<Vec<f64>>,
    pub series: Vec<RawSeries>,
    pub capitals: Vec<f64>,
    pub shareholding: Vec<ShareholdingEdge>,
    pub industry: Vec<IndustryRecord>,
    pub topics: Vec<TopicRecord>,
}

impl SynthMarket {
    pub fn followers(&self) -> Vec<usize> {
        (0..self.ids.len()).filter(|&i| self.leader_of[i].is_some()).collect()
    }

    pub fn leaders(&self) -> Vec<usize> {
        (0..self.ids.len()).filter(|&i| self.leader_of[i].is_none()).collect()
    }

    pub fn closes(&self, stock: usize) -> Vec<f64> {
        self.series[stock].rows.iter().map(|r| r.close).collect()
    }
}

fn business_days(n: usize) -> Vec<NaiveDate> {
    let mut d = NaiveDate::from_ymd_opt(2015, 1, 5).expect("valid date");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

/// Builds the market in memory. All randomness comes from one seeded stream.
pub fn generate_market(config: &SynthConfig) -> Result<SynthMarket> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_stocks;
    let t_len = config.n_days;
    let ids: Vec<String> = (0..n).map(|i| format!("S{i:03}")).collect();

    let industry_of: Vec<usize> = (0..n).map(|i| i % config.n_industries).collect();
    let members: Vec<Vec<usize>> =
        (0..config.n_industries).map(|k| (0..n).filter(|&i| industry_of[i] == k).collect()).collect();
    let mut leader_of = vec![None; n];
    for m in &members {
        let (leaders, followers) = m.split_at(config.leaders_per_industry);
        for (j, &f) in followers.iter().enumerate() {
            leader_of[f] = Some(leaders[j % leaders.len()]);
        }
    }

    let leader_noise = Normal::new(0.0, config.leader_sigma).map_err(|e| Error::Invalid(e.to_string()))?;
    let follower_noise = Normal::new(0.0, config.noise_sigma).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut returns = vec![vec![0.0; n]; t_len];
    for t in 1..t_len {
        for i in 0..n {
            if leader_of[i].is_none() {
                returns[t][i] = leader_noise.sample(&mut rng);
            }
        }
        for i in 0..n {
            if let Some(l) = leader_of[i] {
                let r = config.lead_strength * returns[t - 1][l] + follower_noise.sample(&mut rng);
                returns[t][i] = r.clamp(-0.5, 0.5);
            }
        }
    }

    let calendar = business_days(t_len);
    let wick = Normal::<f64>::new(0.0, 0.002).expect("valid sigma");
    let volume_noise = Normal::<f64>::new(0.0, 0.1).expect("valid sigma");
    let mut series = Vec::with_capacity(n);
    for i in 0..n {
        let mut close = BASE_PRICE;
        let mut rows = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let open = close;
            close *= 1.0 + returns[t][i];
            let high = open.max(close) * (1.0 + f64::abs(wick.sample(&mut rng)));
            let low = open.min(close) * (1.0 - f64::abs(wick.sample(&mut rng)));
            let volume = (1e6 * (VOLUME_SENSITIVITY * returns[t][i] + volume_noise.sample(&mut rng)).exp()).round();
            rows.push(PriceRow { date: calendar[t], open, high, low, volume, close });
        }
        series.push(RawSeries { stock_id: ids[i].clone(), rows });
    }

    let capitals: Vec<f64> = (0..n)
        .map(|i| {
            let scale = if leader_of[i].is_none() { rng.random_range(1.2..1.5) } else { rng.random_range(0.8..1.0) };
            (scale * 1e8_f64).round()
        })
        .collect();
    let industry = (0..n)
        .map(|i| IndustryRecord {
            stock_id: ids[i].clone(),
            industry: format!("IND{}", industry_of[i]),
            registered_capital: capitals[i],
        })
        .collect();

    let (shareholding, topics) = if config.decoy_graphs {
        decoy_relations(config, &ids, &industry_of, &leader_of, &mut rng)
    } else {
        planted_relations(config, &ids, &members, &leader_of)
    };

    Ok(SynthMarket {
        config: config.clone(),
        ids,
        industry_of,
        leader_of,
        calendar,
        returns,
        series,
        capitals,
        shareholding,
        industry,
        topics,
    })
}

/// Leaders hold a stake in each of their followers; leaders carry every topic
/// of their industry and each follower carries one.
fn planted_relations(
    config: &SynthConfig,
    ids: &[String],
    members: &[Vec<usize>],
    leader_of: &[Option<usize>],
) -> (Vec<ShareholdingEdge>, Vec<TopicRecord>) {
    let shareholding = leader_of
        .iter()
        .enumerate()
        .filter_map(|(f, l)| {
            l.map(|l| ShareholdingEdge {
                holder_id: ids[l].clone(),
                held_id: ids[f].clone(),
                ratio: SHAREHOLDING_RATIO,
            })
        })
        .collect();
    let mut topics = Vec::new();
    for (k, m) in members.iter().enumerate() {
        let topic = |j: usize| format!("T{k}_{j}");
        let mut next = 0;
        for &i in m {
            if leader_of[i].is_none() {
                topics
                    .extend((0..config.topic_count).map(|j| TopicRecord { stock_id: ids[i].clone(), topic: topic(j) }));
            } else {
                topics.push(TopicRecord { stock_id: ids[i].clone(), topic: topic(next % config.topic_count) });
                next += 1;
            }
        }
    }
    (shareholding, topics)
}

/// Shareholding links between random stocks of different industries that are
/// not a leader/follower pair, and topics drawn uniformly from a shared pool.
fn decoy_relations(
    config: &SynthConfig,
    ids: &[String],
    industry_of: &[usize],
    leader_of: &[Option<usize>],
    rng: &mut ChaCha8Rng,
) -> (Vec<ShareholdingEdge>, Vec<TopicRecord>) {
    let n = ids.len();
    let planted = |a: usize, b: usize| leader_of[a] == Some(b) || leader_of[b] == Some(a);
    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| industry_of[i] != industry_of[j] && !planted(i, j))
        .collect();
    pairs.shuffle(rng);
    let n_edges = leader_of.iter().filter(|l| l.is_some()).count();
    let mut chosen: Vec<(usize, usize)> = pairs.into_iter().take(n_edges).collect();
    chosen.sort_unstable();
    let shareholding = chosen
        .into_iter()
        .map(|(i, j)| ShareholdingEdge {
            holder_id: ids[i].clone(),
            held_id: ids[j].clone(),
            ratio: SHAREHOLDING_RATIO,
        })
        .collect();

    let pool = config.n_industries * config.topic_count;
    let mut topics = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        loop {
            let t = rng.random_range(0..pool);
            // a topic pool shared with the planted partner would leak structure
            let clash = (0..n).any(|j| {
                planted(i, j) && topics.iter().any(|r: &TopicRecord| r.stock_id == ids[j] && r.topic == format!("P{t}"))
            });
            if !clash {
                topics.push(TopicRecord { stock_id: id.clone(), topic: format!("P{t}") });
                break;
            }
        }
    }
    (shareholding, topics)
}

/// Accuracy of "follower up iff β · leader's previous return > 0" over every
/// follower-day with a previous day.
pub fn oracle_accuracy(market: &SynthMarket) -> f64 {
    oracle_accuracy_range(market, 1, market.calendar.len())
}

/// Same rule restricted to target days in `[from, to)`.
pub fn oracle_accuracy_range(market: &SynthMarket, from: usize, to: usize) -> f64 {
    let beta = market.config.lead_strength;
    let from = from.max(1);
    let mut hits = 0usize;
    let mut total = 0usize;
    for f in market.followers() {
        let l = market.leader_of[f].expect("follower");
        let closes = market.closes(f);
        let leader = market.closes(l);
        for t in from..to.min(closes.len()) {
            if t < 2 {
                // the leader has no previous move before day 1
                let up = closes[t] > closes[t - 1];
                hits += usize::from(!up);
                total += 1;
                continue;
            }
            let predicted = beta * (leader[t - 1] / leader[t - 2] - 1.0) > 0.0;
            let up = closes[t] > closes[t - 1];
            hits += usize::from(predicted == up);
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthManifest {
    pub config: SynthConfig,
    pub seed: u64,
    pub oracle_accuracy: f64,
    pub leaders: BTreeMap<String, Vec<String>>,
    pub files: Vec<String>,
}

/// Paths written by [`generate`].
#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub dir: PathBuf,
    pub prices: PathBuf,
    pub shareholding: PathBuf,
    pub industry: PathBuf,
    pub topicality: PathBuf,
    pub followers: PathBuf,
    pub manifest: PathBuf,
}

impl FixturePaths {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref().to_path_buf();
        Self {
            prices: dir.join(PRICES_FILE),
            shareholding: dir.join(SHAREHOLDING_FILE),
            industry: dir.join(INDUSTRY_FILE),
            topicality: dir.join(TOPICALITY_FILE),
            followers: dir.join(FOLLOWERS_FILE),
            manifest: dir.join(MANIFEST_FILE),
            dir,
        }
    }
}

fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    for r in records {
        w.serialize(r).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Generates the market and writes the four input files, the follower list
/// and a manifest into `dir`.
pub fn generate(config: &SynthConfig, dir: impl AsRef<Path>) -> Result<(SynthMarket, FixturePaths)> {
    let market = generate_market(config)?;
    let paths = FixturePaths::in_dir(dir);
    fs::create_dir_all(&paths.dir).map_err(|e| Error::io(&paths.dir, e))?;
    write_prices(&paths.prices, &market.series)?;
    write_records(&paths.shareholding, &market.shareholding)?;
    write_records(&paths.industry, &market.industry)?;
    write_records(&paths.topicality, &market.topics)?;
    let followers: String = market.followers().iter().map(|&i| format!("{}\n", market.ids[i])).collect();
    fs::write(&paths.followers, followers).map_err(|e| Error::io(&paths.followers, e))?;

    let mut leaders: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for f in market.followers() {
        let l = market.leader_of[f].expect("follower");
        leaders.entry(market.ids[l].clone()).or_default().push(market.ids[f].clone());
    }
    let manifest = SynthManifest {
        config: config.clone(),
        seed: config.seed,
        oracle_accuracy: oracle_accuracy(&market),
        leaders,
        files: [PRICES_FILE, SHAREHOLDING_FILE, INDUSTRY_FILE, TOPICALITY_FILE, FOLLOWERS_FILE]
            .map(String::from)
            .to_vec(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Invalid(e.to_string()))?;
    fs::write(&paths.manifest, json + "\n").map_err(|e| Error::io(&paths.manifest, e))?;
    Ok((market, paths))
}
