//! Seeded synthetic transaction networks with community structure and
//! planted cross-community anomalies.
//!
//! Each customer belongs to one community and keeps a short list of
//! preferred counterparts inside it. Most transfers go to those counterparts,
//! with amount, hour-of-day and channel drawn from community-specific
//! distributions. Profiles are aggregates over a warm-up window that precedes
//! the emitted transactions, plus a noisy community signal and a per-customer
//! random signature.

use std::collections::HashSet;
use std::f64::consts::TAU;
use std::io::Write;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{CustomerProfile, Party, RawTransaction};

pub const DAY: i64 = 86_400;

/// Profile columns derived from warm-up transactions.
pub const AGGREGATE_DIM: usize = 18;
/// Transaction columns carrying behavior; the rest are noise.
pub const TXN_SIGNAL_DIM: usize = 10;
const CHANNELS: usize = 4;
/// Spacing of community log-amount levels.
const AMOUNT_STEP: f64 = 0.25;
/// Standard deviation, in hours, around a community's preferred hour.
const HOUR_SPREAD: f64 = 3.0;
/// Gamma shape of community channel weights; larger is more uniform.
const CHANNEL_SHAPE: f64 = 1.0;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_customers: usize,
    pub n_communities: usize,
    /// Mean emitted transactions initiated per customer.
    pub transactions_per_customer: f64,
    pub d_c: usize,
    pub d_t: usize,
    pub anomaly_rate: f64,
    pub external_rate: f64,
    /// Length of the emitted period in seconds.
    pub time_span: i64,
    /// Length of the warm-up period in seconds; its transactions only feed profiles.
    pub warmup_span: i64,
    /// Trailing part of the emitted period held out as test data, in seconds.
    pub test_span: i64,
    /// Preferred counterparts per customer.
    pub partners: usize,
    /// Probability that an in-community transfer goes to a preferred counterpart.
    pub partner_affinity: f64,
    /// Standard deviation of the noise on the community block of profiles.
    pub profile_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_customers: 5000,
            n_communities: 8,
            transactions_per_customer: 6.0,
            d_c: 66,
            d_t: 12,
            anomaly_rate: 0.02,
            external_rate: 0.1,
            time_span: 90 * DAY,
            warmup_span: 30 * DAY,
            test_span: 30 * DAY,
            partners: 3,
            partner_affinity: 0.85,
            profile_noise: 6.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let fail = |m: String| Err(DatagenError::Config(m));
        if self.n_customers < 2 || self.n_communities == 0 {
            return fail("need at least two customers and one community".into());
        }
        if self.n_communities > self.n_customers {
            return fail(format!(
                "{} communities cannot be filled by {} customers",
                self.n_communities, self.n_customers
            ));
        }
        for (name, r) in [
            ("anomaly_rate", self.anomaly_rate),
            ("external_rate", self.external_rate),
            ("partner_affinity", self.partner_affinity),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return fail(format!("{name} must lie in [0, 1], got {r}"));
            }
        }
        if self.anomaly_rate + self.external_rate > 1.0 {
            return fail("anomaly_rate + external_rate exceeds 1".into());
        }
        if self.anomaly_rate > 0.0 && self.n_communities < 2 {
            return fail("anomalies need at least two communities".into());
        }
        if !(self.transactions_per_customer > 0.0) || !self.transactions_per_customer.is_finite() {
            return fail("transactions_per_customer must be positive".into());
        }
        if self.time_span <= 0 || self.warmup_span < 0 || !(0..=self.time_span).contains(&self.test_span) {
            return fail("spans must satisfy 0 <= test_span <= time_span, time_span > 0, warmup_span >= 0".into());
        }
        if self.d_t < TXN_SIGNAL_DIM {
            return fail(format!("d_t must be at least {TXN_SIGNAL_DIM}"));
        }
        if self.d_c < AGGREGATE_DIM + 2 {
            return fail(format!("d_c must be at least {}", AGGREGATE_DIM + 2));
        }
        if self.partners == 0 {
            return fail("partners must be positive".into());
        }
        if !(self.profile_noise >= 0.0) {
            return fail("profile_noise must be non-negative".into());
        }
        Ok(())
    }

    /// Start of the emitted period.
    pub fn start(&self) -> i64 {
        self.warmup_span
    }

    /// First timestamp of the held-out test window.
    pub fn boundary(&self) -> i64 {
        self.warmup_span + self.time_span - self.test_span
    }

    pub fn end(&self) -> i64 {
        self.warmup_span + self.time_span
    }

    pub fn from_toml(text: &str) -> Result<Self, DatagenError> {
        let c: Self = toml::from_str(text).map_err(|e| DatagenError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CustomerLabel {
    pub customer_id: String,
    pub community: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TxnLabel {
    pub txn_id: String,
    pub anomaly: bool,
    pub source_community: Option<usize>,
    pub dest_community: Option<usize>,
}

/// Ground truth kept apart from the training-facing files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    pub customers: Vec<CustomerLabel>,
    pub transactions: Vec<TxnLabel>,
}

impl Labels {
    pub fn anomalous_ids(&self) -> HashSet<&str> {
        self.transactions
            .iter()
            .filter(|t| t.anomaly)
            .map(|t| t.txn_id.as_str())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub profiles: Vec<CustomerProfile>,
    /// Emitted transactions in timestamp order.
    pub transactions: Vec<RawTransaction>,
    pub labels: Labels,
}

impl SyntheticDataset {
    /// Writes `profiles.jsonl`, `transactions.jsonl`, `train.jsonl`,
    /// `test.jsonl` and `labels.json` into `dir`.
    pub fn write_dir(&self, dir: &std::path::Path, boundary: i64) -> Result<Vec<std::path::PathBuf>, DatagenError> {
        std::fs::create_dir_all(dir)?;
        let (train, test) = holdout_split(&self.transactions, boundary);
        let mut paths = Vec::new();
        let mut write = |name: &str, f: &dyn Fn(&mut dyn Write) -> Result<(), DatagenError>| -> Result<(), DatagenError> {
            let path = dir.join(name);
            let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
            f(&mut w)?;
            w.flush()?;
            paths.push(path);
            Ok(())
        };
        write("profiles.jsonl", &|w| jsonl(w, &self.profiles))?;
        write("transactions.jsonl", &|w| jsonl(w, &self.transactions))?;
        write("train.jsonl", &|w| jsonl(w, &train))?;
        write("test.jsonl", &|w| jsonl(w, &test))?;
        write("labels.json", &|w| {
            serde_json::to_writer(&mut *w, &self.labels)?;
            writeln!(w)?;
            Ok(())
        })?;
        Ok(paths)
    }
}

fn jsonl<T: Serialize>(w: &mut dyn Write, records: &[T]) -> Result<(), DatagenError> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Splits at `boundary`: earlier timestamps train, the rest test.
pub fn holdout_split(txns: &[RawTransaction], boundary: i64) -> (Vec<RawTransaction>, Vec<RawTransaction>) {
    txns.iter().cloned().partition(|t| t.timestamp < boundary)
}

struct Community {
    centroid: Vec<f64>,
    log_amount: f64,
    hour: f64,
    channels: [f64; CHANNELS],
    round_rate: f64,
    members: Vec<usize>,
}

struct Customer {
    community: usize,
    log_amount: f64,
    partners: Vec<usize>,
}

struct Draft {
    source: Option<usize>,
    dest: Option<usize>,
    timestamp: i64,
    features: Vec<f64>,
    anomaly: bool,
}

fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    Normal::new(0.0, sd).expect("finite sd").sample(rng)
}

fn pick_weighted(rng: &mut ChaCha8Rng, cumulative: &[f64]) -> usize {
    let total = cumulative[cumulative.len() - 1];
    let u = rng.random::<f64>() * total;
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

fn cumsum(w: &[f64]) -> Vec<f64> {
    w.iter()
        .scan(0.0, |s, &x| {
            *s += x;
            Some(*s)
        })
        .collect()
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticDataset, DatagenError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_customers;
    let k = config.n_communities;
    let free = config.d_c - AGGREGATE_DIM;
    let community_dim = (free / 3).max(1);
    let signature_dim = free - community_dim;

    // community-level behavior; amount levels are spread and shuffled
    let mut levels: Vec<f64> = (0..k).map(|i| 3.0 + AMOUNT_STEP * i as f64).collect();
    let mut communities: Vec<Community> = Vec::with_capacity(k);
    {
        use rand::seq::SliceRandom;
        levels.shuffle(&mut rng);
    }
    let gamma = Gamma::new(CHANNEL_SHAPE, 1.0).expect("valid gamma");
    for level in levels {
        let centroid = (0..community_dim).map(|_| normal(&mut rng, 1.0)).collect();
        let mut channels = [0.0; CHANNELS];
        for c in channels.iter_mut() {
            *c = gamma.sample(&mut rng);
        }
        communities.push(Community {
            centroid,
            log_amount: level,
            hour: rng.random::<f64>() * 24.0,
            channels,
            round_rate: rng.random::<f64>() * 0.4,
            members: Vec::new(),
        });
    }

    // each community gets at least one member, the rest uniformly
    let mut assignment: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
    {
        use rand::seq::SliceRandom;
        assignment.shuffle(&mut rng);
    }
    for (c, &m) in assignment.iter().enumerate() {
        communities[m].members.push(c);
    }

    let activity_dist = LogNormal::new(0.0, 0.5).expect("valid lognormal");
    let popularity_dist = LogNormal::new(0.0, 1.0).expect("valid lognormal");
    let activity: Vec<f64> = (0..n).map(|_| activity_dist.sample(&mut rng)).collect();
    let popularity: Vec<f64> = (0..n).map(|_| popularity_dist.sample(&mut rng)).collect();
    let member_cumulative: Vec<Vec<f64>> = communities
        .iter()
        .map(|cm| cumsum(&cm.members.iter().map(|&c| popularity[c]).collect::<Vec<_>>()))
        .collect();

    let mut customers = Vec::with_capacity(n);
    for c in 0..n {
        let m = assignment[c];
        let cm = &communities[m];
        let mut partners = Vec::with_capacity(config.partners);
        if cm.members.len() > 1 {
            let want = config.partners.min(cm.members.len() - 1);
            let mut attempts = 0;
            while partners.len() < want && attempts < 50 * want {
                attempts += 1;
                let p = cm.members[pick_weighted(&mut rng, &member_cumulative[m])];
                if p != c && !partners.contains(&p) {
                    partners.push(p);
                }
            }
        }
        customers.push(Customer {
            community: m,
            log_amount: cm.log_amount + normal(&mut rng, 0.3),
            partners,
        });
    }

    let emitted = (n as f64 * config.transactions_per_customer).round() as usize;
    let warmup = (emitted as f64 * config.warmup_span as f64 / config.time_span as f64).round() as usize;
    let activity_cumulative = cumsum(&activity);
    let draw = |rng: &mut ChaCha8Rng, start: i64, span: i64| -> Draft {
        let c = pick_weighted(rng, &activity_cumulative);
        let me = &customers[c];
        let cm = &communities[me.community];
        let u: f64 = rng.random();
        let (source, dest, anomaly) = if u < config.anomaly_rate {
            let other = loop {
                let o = rng.random_range(0..n);
                if customers[o].community != me.community {
                    break o;
                }
            };
            (Some(c), Some(other), true)
        } else if u < config.anomaly_rate + config.external_rate {
            if rng.random::<bool>() {
                (Some(c), None, false)
            } else {
                (None, Some(c), false)
            }
        } else {
            let use_partner = !me.partners.is_empty() && rng.random::<f64>() < config.partner_affinity;
            let other = if use_partner {
                // earlier partners are preferred
                let w: Vec<f64> = (0..me.partners.len()).map(|i| 1.0 / (i + 1) as f64).collect();
                me.partners[pick_weighted(rng, &cumsum(&w))]
            } else if cm.members.len() > 1 {
                loop {
                    let o = *cm.members.choose(rng).expect("non-empty community");
                    if o != c {
                        break o;
                    }
                }
            } else {
                loop {
                    let o = rng.random_range(0..n);
                    if o != c {
                        break o;
                    }
                }
            };
            (Some(c), Some(other), false)
        };

        let day = rng.random_range(0..(span / DAY).max(1));
        let (hour, log_amount, channel) = if anomaly {
            (
                rng.random::<f64>() * 24.0,
                me.log_amount + 3.0 + normal(rng, 0.5),
                rng.random_range(0..CHANNELS),
            )
        } else {
            (
                (cm.hour + normal(rng, HOUR_SPREAD)).rem_euclid(24.0),
                me.log_amount + normal(rng, 0.8),
                pick_weighted(rng, &cumsum(&cm.channels)),
            )
        };
        let seconds = (hour * 3600.0) as i64;
        let timestamp = start + (day * DAY + seconds).min(span - 1);
        let mut amount = log_amount.exp();
        let round = !anomaly && rng.random::<f64>() < cm.round_rate;
        if round {
            amount = (amount / 10.0).round().max(1.0) * 10.0;
        }
        let weekday = ((timestamp / DAY) % 7) as f64;
        let mut features = vec![0.0; config.d_t];
        features[0] = amount.ln();
        features[1] = (TAU * hour / 24.0).sin();
        features[2] = (TAU * hour / 24.0).cos();
        features[3] = (TAU * weekday / 7.0).sin();
        features[4] = (TAU * weekday / 7.0).cos();
        features[5 + channel] = 1.0;
        features[9] = round as u8 as f64;
        for f in features.iter_mut().skip(TXN_SIGNAL_DIM) {
            *f = normal(rng, 1.0);
        }
        Draft {
            source,
            dest,
            timestamp,
            features,
            anomaly,
        }
    };
    let warm: Vec<Draft> = (0..warmup).map(|_| draw(&mut rng, 0, config.warmup_span.max(1))).collect();
    let mut main: Vec<Draft> = (0..emitted)
        .map(|_| draw(&mut rng, config.start(), config.time_span))
        .collect();
    // stable sort keeps generation order among equal timestamps
    main.sort_by_key(|d| d.timestamp);

    let aggregates = warmup_aggregates(n, &warm);
    let profiles: Vec<CustomerProfile> = (0..n)
        .map(|c| {
            let cm = &communities[customers[c].community];
            let mut f = Vec::with_capacity(config.d_c);
            f.extend_from_slice(&aggregates[c]);
            f.extend(cm.centroid.iter().map(|&x| x + normal(&mut rng, config.profile_noise)));
            f.extend((0..signature_dim).map(|_| normal(&mut rng, 1.0)));
            CustomerProfile {
                customer_id: customer_id(c),
                features: f,
            }
        })
        .collect();

    let party = |c: Option<usize>| c.map_or(Party::External, |c| Party::customer(customer_id(c)));
    let width = emitted.to_string().len().max(6);
    let mut transactions = Vec::with_capacity(emitted);
    let mut txn_labels = Vec::with_capacity(emitted);
    for (i, d) in main.into_iter().enumerate() {
        let txn_id = format!("t{i:0width$}");
        txn_labels.push(TxnLabel {
            txn_id: txn_id.clone(),
            anomaly: d.anomaly,
            source_community: d.source.map(|c| customers[c].community),
            dest_community: d.dest.map(|c| customers[c].community),
        });
        transactions.push(RawTransaction {
            txn_id,
            source: party(d.source),
            dest: party(d.dest),
            timestamp: d.timestamp,
            features: d.features,
        });
    }
    Ok(SyntheticDataset {
        profiles,
        transactions,
        labels: Labels {
            customers: (0..n)
                .map(|c| CustomerLabel {
                    customer_id: customer_id(c),
                    community: customers[c].community,
                })
                .collect(),
            transactions: txn_labels,
        },
    })
}

fn customer_id(c: usize) -> String {
    format!("c{c:05}")
}

/// Per-customer behavior summaries over the warm-up transactions.
fn warmup_aggregates(n: usize, warm: &[Draft]) -> Vec<[f64; AGGREGATE_DIM]> {
    #[derive(Default, Clone)]
    struct Acc {
        out: Vec<f64>,
        inc: Vec<f64>,
        ext_out: usize,
        ext_in: usize,
        hour: [f64; 2],
        weekday: [f64; 2],
        channels: [f64; CHANNELS],
        round: f64,
        counterparts: HashSet<usize>,
        touched: usize,
    }
    let mut acc = vec![Acc::default(); n];
    for d in warm {
        for (me, other, outgoing) in [(d.source, d.dest, true), (d.dest, d.source, false)] {
            let Some(c) = me else { continue };
            let a = &mut acc[c];
            a.touched += 1;
            if outgoing {
                a.out.push(d.features[0]);
                a.ext_out += other.is_none() as usize;
                for ch in 0..CHANNELS {
                    a.channels[ch] += d.features[5 + ch];
                }
            } else {
                a.inc.push(d.features[0]);
                a.ext_in += other.is_none() as usize;
            }
            a.hour[0] += d.features[1];
            a.hour[1] += d.features[2];
            a.weekday[0] += d.features[3];
            a.weekday[1] += d.features[4];
            a.round += d.features[9];
            if let Some(o) = other {
                a.counterparts.insert(o);
            }
        }
    }
    let moments = |v: &[f64]| -> (f64, f64) {
        if v.is_empty() {
            return (0.0, 0.0);
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
        (m, var.sqrt())
    };
    let ratio = |a: f64, b: usize| if b == 0 { 0.0 } else { a / b as f64 };
    acc.iter()
        .map(|a| {
            let (mo, so) = moments(&a.out);
            let (mi, si) = moments(&a.inc);
            let mut f = [0.0; AGGREGATE_DIM];
            f[0] = (1.0 + a.out.len() as f64).ln();
            f[1] = (1.0 + a.inc.len() as f64).ln();
            f[2] = mo;
            f[3] = so;
            f[4] = mi;
            f[5] = si;
            f[6] = ratio(a.ext_out as f64, a.out.len());
            f[7] = ratio(a.ext_in as f64, a.inc.len());
            f[8] = ratio(a.hour[0], a.touched);
            f[9] = ratio(a.hour[1], a.touched);
            for ch in 0..CHANNELS {
                f[10 + ch] = ratio(a.channels[ch], a.out.len());
            }
            f[14] = (1.0 + a.counterparts.len() as f64).ln();
            f[15] = ratio(a.weekday[0], a.touched);
            f[16] = ratio(a.weekday[1], a.touched);
            f[17] = ratio(a.round, a.touched);
            f
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;

    fn small(seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            n_customers: 1000,
            n_communities: 4,
            seed,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn count_matches_rate() {
        let c = small(1);
        let d = generate(&c).unwrap();
        let expected = c.n_customers as f64 * c.transactions_per_customer;
        assert!((d.transactions.len() as f64 - expected).abs() <= 0.05 * expected);
        assert_eq!(d.profiles.len(), 1000);
        assert!(d.profiles.iter().all(|p| p.features.len() == 66 && p.features.iter().all(|x| x.is_finite())));
        assert!(d.transactions.iter().all(|t| t.features.len() == 12 && t.features.iter().all(|x| x.is_finite())));
        assert!(d.transactions.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        assert!(d.transactions.iter().all(|t| (c.start()..c.end()).contains(&t.timestamp)));
        build_graph(&d.transactions, &d.profiles).unwrap().check_invariants().unwrap();
    }

    #[test]
    fn anomalies_are_cross_community() {
        let d = generate(&small(2)).unwrap();
        let flagged: Vec<&TxnLabel> = d.labels.transactions.iter().filter(|t| t.anomaly).collect();
        assert!(!flagged.is_empty());
        for t in &flagged {
            assert!(t.source_community.is_some() && t.dest_community.is_some());
            assert_ne!(t.source_community, t.dest_community);
        }
        // ordinary internal transfers stay inside the community
        let internal: Vec<&TxnLabel> = d
            .labels
            .transactions
            .iter()
            .filter(|t| !t.anomaly && t.source_community.is_some() && t.dest_community.is_some())
            .collect();
        assert!(internal.iter().all(|t| t.source_community == t.dest_community));
    }

    #[test]
    fn zero_anomaly_rate_flags_nothing() {
        let c = SyntheticConfig {
            anomaly_rate: 0.0,
            ..small(3)
        };
        assert!(generate(&c).unwrap().labels.transactions.iter().all(|t| !t.anomaly));
    }

    #[test]
    fn same_seed_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let c = SyntheticConfig {
            n_customers: 200,
            ..small(4)
        };
        let a = generate(&c).unwrap();
        let b = generate(&c).unwrap();
        assert_eq!(a, b);
        let pa = a.write_dir(&dir.path().join("a"), c.boundary()).unwrap();
        let pb = b.write_dir(&dir.path().join("b"), c.boundary()).unwrap();
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        let other = generate(&SyntheticConfig { seed: 5, ..c }).unwrap();
        assert_ne!(a.transactions, other.transactions);
    }

    #[test]
    fn training_files_carry_no_labels() {
        let dir = tempfile::tempdir().unwrap();
        let c = SyntheticConfig {
            n_customers: 50,
            ..small(6)
        };
        generate(&c).unwrap().write_dir(dir.path(), c.boundary()).unwrap();
        for f in ["profiles.jsonl", "transactions.jsonl", "train.jsonl", "test.jsonl"] {
            let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
            assert!(!text.contains("anomaly") && !text.contains("community"), "{f}");
        }
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        let bad = [
            SyntheticConfig {
                n_communities: 20,
                n_customers: 10,
                ..SyntheticConfig::default()
            },
            SyntheticConfig {
                anomaly_rate: 1.5,
                ..SyntheticConfig::default()
            },
            SyntheticConfig {
                d_t: 4,
                ..SyntheticConfig::default()
            },
            SyntheticConfig {
                test_span: 200 * DAY,
                ..SyntheticConfig::default()
            },
        ];
        for c in bad {
            assert!(matches!(generate(&c), Err(DatagenError::Config(_))));
        }
    }

    #[test]
    fn holdout_split_partitions_at_the_boundary() {
        let c = small(7);
        let d = generate(&c).unwrap();
        let (train, test) = holdout_split(&d.transactions, c.boundary());
        assert_eq!(train.len() + test.len(), d.transactions.len());
        assert!(test.iter().all(|t| t.timestamp >= c.boundary()));
        assert!(train.iter().all(|t| t.timestamp < c.boundary()));
        let (all, none) = holdout_split(&d.transactions, c.end());
        assert_eq!(all.len(), d.transactions.len());
        assert!(none.is_empty());
    }

    #[test]
    fn toml_config() {
        let c = SyntheticConfig::from_toml("n_customers = 500\nseed = 9\n").unwrap();
        assert_eq!(c.n_customers, 500);
        assert_eq!(c.d_c, 66);
        assert!(SyntheticConfig::from_toml("bogus = 1\n").is_err());
    }
}
