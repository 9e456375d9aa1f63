//! Exploratory statistics over probe events.
//!
//! Every aggregation is a fold into a tally that can be merged with other
//! tallies, so a stream can be split across workers and recombined. Rankings
//! are ordered by count descending, ties by ascending key, which makes every
//! output independent of input order.

use std::collections::{BTreeMap, HashMap};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::ingest::{CountryCode, GeoDb, ProbeEvent};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Default top-prober threshold, SYN packets per day.
pub const DEFAULT_PROBER_THRESHOLD: f64 = 150.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry<K> {
    pub key: K,
    pub count: u64,
    pub share: f64,
}

/// Keys ordered by count descending then key ascending; shares are relative
/// to the total over *all* keys, not just the retained ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking<K> {
    pub entries: Vec<RankEntry<K>>,
    pub total: u64,
}

pub type PortRanking = Ranking<u16>;
pub type CountryRanking = Ranking<CountryCode>;

impl<K: Ord + Copy> Ranking<K> {
    pub fn from_counts<I: IntoIterator<Item = (K, u64)>>(counts: I) -> Self {
        let mut pairs: Vec<(K, u64)> = counts.into_iter().filter(|&(_, c)| c > 0).collect();
        pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let total: u64 = pairs.iter().map(|p| p.1).sum();
        let entries = pairs
            .into_iter()
            .map(|(key, count)| RankEntry {
                key,
                count,
                share: count as f64 / total as f64,
            })
            .collect();
        Ranking { entries, total }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// The `k` highest-ranked entries (shares unchanged).
    pub fn top(&self, k: usize) -> &[RankEntry<K>] {
        &self.entries[..k.min(self.entries.len())]
    }

    pub fn keys(&self) -> impl Iterator<Item = K> + '_ {
        self.entries.iter().map(|e| e.key)
    }
}

/// Dense per-port SYN counter.
#[derive(Debug, Clone)]
pub struct PortTally {
    counts: Box<[u64]>,
}

impl Default for PortTally {
    fn default() -> Self {
        PortTally {
            counts: vec![0u64; 1 << 16].into_boxed_slice(),
        }
    }
}

impl PortTally {
    pub fn add(&mut self, port: u16) {
        self.counts[port as usize] += 1;
    }

    pub fn merge(&mut self, other: &PortTally) {
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            *a += *b;
        }
    }

    pub fn count(&self, port: u16) -> u64 {
        self.counts[port as usize]
    }

    pub fn ranking(&self) -> PortRanking {
        Ranking::from_counts(self.counts.iter().enumerate().map(|(p, &c)| (p as u16, c)))
    }
}

pub fn traffic_by_port<'a, I>(events: I) -> PortRanking
where
    I: IntoIterator<Item = &'a ProbeEvent>,
{
    let mut tally = PortTally::default();
    for e in events {
        tally.add(e.dst_port);
    }
    tally.ranking()
}

/// Cumulative traffic share of the top-n keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurve {
    /// `(n, cumulative_share)` for n = 1, 2, ...
    pub points: Vec<(usize, f64)>,
}

impl CoverageCurve {
    /// Smallest n whose cumulative share reaches `threshold`.
    pub fn n_for(&self, threshold: f64) -> Option<usize> {
        self.points.iter().find(|&&(_, s)| s >= threshold).map(|&(n, _)| n)
    }

    pub fn value_at(&self, n: usize) -> Option<f64> {
        self.points.get(n.checked_sub(1)?).map(|p| p.1)
    }
}

/// Thresholds reported alongside every coverage curve.
pub const COVERAGE_THRESHOLDS: [f64; 2] = [0.8, 0.9];

/// Running share of the top-n ports. Shares come from exact integer prefix
/// sums, so the last point is exactly 1.
pub fn cumulative_coverage<K>(ranking: &Ranking<K>) -> CoverageCurve {
    let mut running = 0u64;
    let points = ranking
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            running += e.count;
            (i + 1, running as f64 / ranking.total as f64)
        })
        .collect();
    CoverageCurve { points }
}

/// How the per-day rate of a prober is normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateSpan {
    /// First to last event of the whole capture.
    #[default]
    Capture,
    /// First to last event of the prober itself.
    Active,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProberProfile {
    pub src_ip: Ipv4Addr,
    pub total_syn: u64,
    pub active_span_days: f64,
    pub mean_daily_rate: f64,
    pub port_counts: BTreeMap<u16, u64>,
}

#[derive(Debug, Clone, Default)]
struct ProberAcc {
    total: u64,
    first: f64,
    last: f64,
    ports: HashMap<u16, u64>,
}

/// Per-source accumulator behind [`top_probers`].
#[derive(Debug, Clone, Default)]
pub struct ProberTally {
    sources: HashMap<Ipv4Addr, ProberAcc>,
    first: Option<f64>,
    last: Option<f64>,
}

impl ProberTally {
    pub fn add(&mut self, e: &ProbeEvent) {
        let acc = self.sources.entry(e.src_ip).or_insert_with(|| ProberAcc {
            first: e.timestamp,
            last: e.timestamp,
            ..Default::default()
        });
        acc.total += 1;
        acc.first = acc.first.min(e.timestamp);
        acc.last = acc.last.max(e.timestamp);
        *acc.ports.entry(e.dst_port).or_insert(0) += 1;
        self.first = Some(self.first.map_or(e.timestamp, |f| f.min(e.timestamp)));
        self.last = Some(self.last.map_or(e.timestamp, |l| l.max(e.timestamp)));
    }

    pub fn merge(&mut self, other: ProberTally) {
        for (ip, o) in other.sources {
            match self.sources.get_mut(&ip) {
                Some(acc) => {
                    acc.total += o.total;
                    acc.first = acc.first.min(o.first);
                    acc.last = acc.last.max(o.last);
                    for (port, c) in o.ports {
                        *acc.ports.entry(port).or_insert(0) += c;
                    }
                }
                None => {
                    self.sources.insert(ip, o);
                }
            }
        }
        self.first = min_opt(self.first, other.first);
        self.last = max_opt(self.last, other.last);
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    /// Span between the first and last event of the capture, in days.
    pub fn capture_span_days(&self) -> f64 {
        match (self.first, self.last) {
            (Some(f), Some(l)) => span_days(f, l),
            _ => 0.0,
        }
    }

    /// Profiles with a mean daily rate strictly above `threshold`, sorted by
    /// total SYN count descending (ties by ascending address).
    pub fn top_probers(&self, threshold: f64, span: RateSpan) -> Vec<ProberProfile> {
        let capture = rate_denominator(self.capture_span_days());
        let mut out: Vec<ProberProfile> = self
            .sources
            .iter()
            .filter_map(|(&ip, acc)| {
                let active = span_days(acc.first, acc.last);
                let denom = match span {
                    RateSpan::Capture => capture,
                    RateSpan::Active => rate_denominator(active),
                };
                let rate = acc.total as f64 / denom;
                (rate > threshold).then(|| ProberProfile {
                    src_ip: ip,
                    total_syn: acc.total,
                    active_span_days: active,
                    mean_daily_rate: rate,
                    port_counts: acc.ports.iter().map(|(&p, &c)| (p, c)).collect(),
                })
            })
            .collect();
        out.sort_by(|a, b| b.total_syn.cmp(&a.total_syn).then(a.src_ip.cmp(&b.src_ip)));
        out
    }
}

fn min_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

fn max_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

fn span_days(first: f64, last: f64) -> f64 {
    (last - first) / SECONDS_PER_DAY
}

/// A zero-length span (a single instant) is treated as one day.
fn rate_denominator(days: f64) -> f64 {
    if days > 0.0 {
        days
    } else {
        1.0
    }
}

/// Sources averaging more than `threshold` SYN packets per day.
pub fn top_probers<'a, I>(events: I, threshold: f64, span: RateSpan) -> Vec<ProberProfile>
where
    I: IntoIterator<Item = &'a ProbeEvent>,
{
    assert!(threshold > 0.0, "prober threshold must be positive");
    let mut tally = ProberTally::default();
    for e in events {
        tally.add(e);
    }
    tally.top_probers(threshold, span)
}

/// Port ranking over the union of the probers' traffic; shares are relative
/// to the probers' combined total.
pub fn port_profile_of(probers: &[ProberProfile]) -> PortRanking {
    let mut merged: BTreeMap<u16, u64> = BTreeMap::new();
    for p in probers {
        for (&port, &c) in &p.port_counts {
            *merged.entry(port).or_insert(0) += c;
        }
    }
    Ranking::from_counts(merged)
}

#[derive(Debug, Clone, Default)]
pub struct CountryTally {
    counts: HashMap<CountryCode, u64>,
}

impl CountryTally {
    pub fn add(&mut self, db: &GeoDb, ip: Ipv4Addr) {
        *self.counts.entry(db.country_or_unknown(ip)).or_insert(0) += 1;
    }

    pub fn merge(&mut self, other: CountryTally) {
        for (k, v) in other.counts {
            *self.counts.entry(k).or_insert(0) += v;
        }
    }

    pub fn ranking(&self) -> CountryRanking {
        Ranking::from_counts(self.counts.iter().map(|(&k, &v)| (k, v)))
    }
}

/// Traffic per source country; misses are grouped under `"??"`.
pub fn traffic_by_country<'a, I>(events: I, db: &GeoDb) -> CountryRanking
where
    I: IntoIterator<Item = &'a ProbeEvent>,
{
    let mut tally = CountryTally::default();
    for e in events {
        tally.add(db, e.src_ip);
    }
    tally.ranking()
}

/// Everything the `stats` stage computes, in one mergeable pass.
#[derive(Debug, Clone, Default)]
pub struct StatsTally {
    pub ports: PortTally,
    pub probers: ProberTally,
    pub countries: Option<CountryTally>,
    pub events: u64,
}

impl StatsTally {
    pub fn new(with_countries: bool) -> Self {
        StatsTally {
            countries: with_countries.then(CountryTally::default),
            ..Default::default()
        }
    }

    pub fn add(&mut self, e: &ProbeEvent, db: Option<&GeoDb>) {
        self.events += 1;
        self.ports.add(e.dst_port);
        self.probers.add(e);
        if let (Some(c), Some(db)) = (self.countries.as_mut(), db) {
            c.add(db, e.src_ip);
        }
    }

    pub fn merge(&mut self, other: StatsTally) {
        self.events += other.events;
        self.ports.merge(&other.ports);
        self.probers.merge(other.probers);
        match (self.countries.as_mut(), other.countries) {
            (Some(a), Some(b)) => a.merge(b),
            (None, Some(b)) => self.countries = Some(b),
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::GeoRange;
    use proptest::prelude::*;

    fn ev(ts: f64, ip: [u8; 4], port: u16) -> ProbeEvent {
        ProbeEvent {
            timestamp: ts,
            src_ip: Ipv4Addr::from(ip),
            dst_port: port,
        }
    }

    #[test]
    fn ranking_of_small_sample() {
        let events: Vec<_> = [23, 23, 23, 80].iter().map(|&p| ev(1.0, [1, 1, 1, 1], p)).collect();
        let r = traffic_by_port(&events);
        assert_eq!(r.entries.len(), 2);
        assert_eq!((r.entries[0].key, r.entries[0].count, r.entries[0].share), (23, 3, 0.75));
        assert_eq!((r.entries[1].key, r.entries[1].count, r.entries[1].share), (80, 1, 0.25));
        assert!(traffic_by_port(&[]).is_empty());
    }

    #[test]
    fn coverage_of_small_ranking() {
        let events: Vec<_> = [23, 23, 23, 80].iter().map(|&p| ev(1.0, [1, 1, 1, 1], p)).collect();
        let c = cumulative_coverage(&traffic_by_port(&events));
        assert_eq!(c.points, vec![(1, 0.75), (2, 1.0)]);
        let uniform: Vec<_> = (0..10u16).map(|p| ev(1.0, [1, 1, 1, 1], 1000 + p)).collect();
        let c = cumulative_coverage(&traffic_by_port(&uniform));
        assert_eq!(c.n_for(0.8), Some(8));
        assert_eq!(c.n_for(0.9), Some(9));
        assert_eq!(cumulative_coverage(&PortRanking::from_counts(Vec::new())).points, vec![]);
    }

    #[test]
    fn prober_threshold_membership() {
        // Ten days; A sends 200/day, B 100/day, both spread over the whole capture.
        let mut events = Vec::new();
        for i in 0..2000 {
            events.push(ev(1e6 + i as f64 * 432.0, [10, 0, 0, 1], 22));
        }
        for i in 0..1000 {
            events.push(ev(1e6 + i as f64 * 864.0, [10, 0, 0, 2], 23));
        }
        events.push(ev(1e6 + 10.0 * SECONDS_PER_DAY, [10, 0, 0, 3], 80));
        let top = top_probers(&events, 150.0, RateSpan::Capture);
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].src_ip, Ipv4Addr::new(10, 0, 0, 1));
        assert!((top[0].mean_daily_rate - 200.0).abs() < 1e-9);
        // With the active span, the single-event source C gets one-day normalisation.
        let active = top_probers(&events, 150.0, RateSpan::Active);
        assert_eq!(active.len(), 1);
    }

    #[test]
    fn port_profile_of_probers() {
        let p = |ip: [u8; 4], ports: &[(u16, u64)]| ProberProfile {
            src_ip: ip.into(),
            total_syn: ports.iter().map(|x| x.1).sum(),
            active_span_days: 1.0,
            mean_daily_rate: 1.0,
            port_counts: ports.iter().copied().collect(),
        };
        let r = port_profile_of(&[p([1, 1, 1, 1], &[(22, 10)]), p([2, 2, 2, 2], &[(22, 10)])]);
        assert_eq!(r.entries, vec![RankEntry { key: 22, count: 20, share: 1.0 }]);
        let r = port_profile_of(&[p([1, 1, 1, 1], &[(23, 5)]), p([2, 2, 2, 2], &[(22, 5)])]);
        assert_eq!(r.keys().collect::<Vec<_>>(), vec![22, 23]);
        assert_eq!(r.entries[0].share, 0.5);
    }

    #[test]
    fn countries_with_unknowns() {
        let db = GeoDb::from_ranges(vec![GeoRange {
            start: u32::from(Ipv4Addr::new(10, 0, 0, 0)),
            end: u32::from(Ipv4Addr::new(10, 0, 0, 255)),
            country: "MA".parse().unwrap(),
        }])
        .unwrap();
        let all_in = vec![ev(1.0, [10, 0, 0, 1], 1), ev(1.0, [10, 0, 0, 2], 1)];
        let r = traffic_by_country(&all_in, &db);
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.entries[0].share, 1.0);
        let mixed = vec![ev(1.0, [10, 0, 0, 1], 1), ev(1.0, [11, 0, 0, 2], 1)];
        let r = traffic_by_country(&mixed, &db);
        assert_eq!(r.entries[0].key, CountryCode::UNKNOWN);
        assert_eq!(r.entries[1].key.as_str(), "MA");
    }

    fn arb_events() -> impl Strategy<Value = Vec<ProbeEvent>> {
        proptest::collection::vec((1.0f64..1e6, 0u8..6, 0u16..40), 0..300).prop_map(|v| {
            v.into_iter().map(|(t, ip, p)| ev(t, [10, 0, 0, ip], p)).collect()
        })
    }

    proptest! {
        #[test]
        fn rankings_ignore_order_and_merge(events in arb_events(), seed in any::<u64>(), cut in 0usize..300) {
            let whole = traffic_by_port(&events);
            let total: f64 = whole.entries.iter().map(|e| e.share).sum();
            if !events.is_empty() {
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
            for e in &whole.entries {
                prop_assert!((0.0..=1.0).contains(&e.share));
            }

            let mut shuffled = events.clone();
            let mut s = seed | 1;
            for i in (1..shuffled.len()).rev() {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                shuffled.swap(i, (s % (i as u64 + 1)) as usize);
            }
            prop_assert_eq!(&traffic_by_port(&shuffled), &whole);
            prop_assert_eq!(
                top_probers(&shuffled, 0.5, RateSpan::Capture),
                top_probers(&events, 0.5, RateSpan::Capture)
            );

            let cut = cut.min(events.len());
            let (a, b) = events.split_at(cut);
            let mut left = StatsTally::new(false);
            let mut right = StatsTally::new(false);
            a.iter().for_each(|e| left.add(e, None));
            b.iter().for_each(|e| right.add(e, None));
            left.merge(right);
            prop_assert_eq!(left.ports.ranking(), whole);
            prop_assert_eq!(
                left.probers.top_probers(0.5, RateSpan::Capture),
                top_probers(&events, 0.5, RateSpan::Capture)
            );
        }
    }
}
