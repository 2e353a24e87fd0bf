//! Keyword to numeric-value mapping driven by association-rule confidence.
//!
//! Page keyword sets are treated as transactions. The `k` keywords with the
//! highest support become centroids, each anchoring a numeric band
//! (`base + spacing * rank`). Every other keyword joins the centroid it is most
//! confidently associated with and is placed inside that band at a distance that
//! shrinks as the confidence grows, alternating sides of the centroid value.
//!
//! The resulting values are injective, so the regression can tell keywords apart
//! while related keywords stay numerically close.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logs::ImpressionEvent;

/// Two values closer than this are considered the same slot.
const COLLISION_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceStats {
    pub category: String,
    pub transaction_count: u64,
    pub support: BTreeMap<String, u64>,
    /// Keyed by the lexicographically ordered pair.
    pub pair_count: BTreeMap<(String, String), u64>,
}

fn pair_key<'a>(a: &'a str, b: &'a str) -> (&'a str, &'a str) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl CooccurrenceStats {
    pub fn support_of(&self, keyword: &str) -> u64 {
        self.support.get(keyword).copied().unwrap_or(0)
    }

    pub fn pair(&self, a: &str, b: &str) -> u64 {
        if a == b {
            return self.support_of(a);
        }
        let (x, y) = pair_key(a, b);
        self.pair_count
            .get(&(x.to_string(), y.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn vocabulary_size(&self) -> usize {
        self.support.len()
    }
}

pub fn count_cooccurrences(
    transactions: &[BTreeSet<String>],
    category: &str,
) -> Result<CooccurrenceStats> {
    if transactions.is_empty() {
        return Err(Error::Domain(format!(
            "no keyword transactions for category `{category}`"
        )));
    }
    let mut support: BTreeMap<String, u64> = BTreeMap::new();
    let mut pair_count: BTreeMap<(String, String), u64> = BTreeMap::new();
    for (i, t) in transactions.iter().enumerate() {
        if t.is_empty() {
            return Err(Error::Domain(format!("transaction {i} has no keywords")));
        }
        let items: Vec<&String> = t.iter().collect();
        for (a_idx, a) in items.iter().enumerate() {
            *support.entry((*a).clone()).or_default() += 1;
            // BTreeSet iteration is sorted, so (a, b) is already the ordered key
            for b in &items[a_idx + 1..] {
                *pair_count.entry(((*a).clone(), (*b).clone())).or_default() += 1;
            }
        }
    }
    Ok(CooccurrenceStats {
        category: category.to_string(),
        transaction_count: transactions.len() as u64,
        support,
        pair_count,
    })
}

/// Page keyword sets of all events in `category`, in log order.
pub fn transactions_from_events(events: &[ImpressionEvent], category: &str) -> Vec<BTreeSet<String>> {
    events
        .iter()
        .filter(|e| e.context.category == category && !e.context.page_keywords.is_empty())
        .map(|e| e.context.page_keywords.clone())
        .collect()
}

/// Confidence of the rule `from -> to`: pair support over antecedent support.
pub fn confidence(stats: &CooccurrenceStats, from: &str, to: &str) -> Result<f64> {
    let from_support = stats.support_of(from);
    if from_support == 0 {
        return Err(Error::UnknownKeyword(from.to_string()));
    }
    if from == to {
        return Ok(1.0);
    }
    if stats.support_of(to) == 0 {
        return Err(Error::UnknownKeyword(to.to_string()));
    }
    Ok(stats.pair(from, to) as f64 / from_support as f64)
}

/// The `k` highest-support keywords, descending; ties go to the lexicographically smaller.
pub fn select_centroids(stats: &CooccurrenceStats, k: usize) -> Result<Vec<String>> {
    if k == 0 {
        return Err(Error::Domain("centroid count must be positive".into()));
    }
    if k > stats.vocabulary_size() {
        return Err(Error::Domain(format!(
            "{k} centroids requested but only {} distinct keywords",
            stats.vocabulary_size()
        )));
    }
    let mut ranked: Vec<(&String, u64)> = stats.support.iter().map(|(k, v)| (k, *v)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(ranked.into_iter().take(k).map(|(k, _)| k.clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub cluster_of: BTreeMap<String, String>,
    /// Keywords with zero confidence towards every centroid, parked in the first cluster.
    pub unaffiliated: Vec<String>,
}

pub fn assign_clusters(stats: &CooccurrenceStats, centroids: &[String]) -> Result<ClusterAssignment> {
    if centroids.is_empty() {
        return Err(Error::Domain("no centroids".into()));
    }
    for c in centroids {
        if stats.support_of(c) == 0 {
            return Err(Error::UnknownKeyword(c.clone()));
        }
    }
    let mut cluster_of = BTreeMap::new();
    let mut unaffiliated = Vec::new();
    for keyword in stats.support.keys() {
        if centroids.contains(keyword) {
            cluster_of.insert(keyword.clone(), keyword.clone());
            continue;
        }
        let mut best = (&centroids[0], confidence(stats, keyword, &centroids[0])?);
        for c in &centroids[1..] {
            let conf = confidence(stats, keyword, c)?;
            // strict: earlier centroid keeps ties
            if conf > best.1 {
                best = (c, conf);
            }
        }
        if best.1 == 0.0 {
            unaffiliated.push(keyword.clone());
        }
        cluster_of.insert(keyword.clone(), best.0.clone());
    }
    Ok(ClusterAssignment {
        cluster_of,
        unaffiliated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapParams {
    pub k: usize,
    pub base: f64,
    pub spacing: f64,
    pub spread: f64,
    pub min_offset: f64,
}

impl MapParams {
    pub fn with_k(k: usize) -> Self {
        MapParams {
            k,
            base: 50.0,
            spacing: 10.0,
            spread: 5.0,
            min_offset: 0.1,
        }
    }

    pub fn base_value(&self, rank: usize) -> f64 {
        self.base + self.spacing * rank as f64
    }

    /// Distance from the centroid before any collision nudge.
    pub fn offset(&self, confidence: f64) -> f64 {
        (self.spread * (1.0 - confidence)).max(self.min_offset)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordMap {
    pub category: String,
    pub centroids: Vec<String>,
    pub values: BTreeMap<String, f64>,
    pub cluster_of: BTreeMap<String, String>,
    /// Occurrence counts used to rank keywords on a multi-keyword page.
    #[serde(default)]
    pub support: BTreeMap<String, u64>,
    pub params: MapParams,
    /// Members moved off their nominal value to keep values distinct.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub nudged: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unaffiliated: Vec<String>,
}

pub fn build_keyword_map(stats: &CooccurrenceStats, k: usize) -> Result<KeywordMap> {
    build_keyword_map_with(stats, MapParams::with_k(k))
}

pub fn build_keyword_map_with(stats: &CooccurrenceStats, params: MapParams) -> Result<KeywordMap> {
    let centroids = select_centroids(stats, params.k)?;
    let assignment = assign_clusters(stats, &centroids)?;

    let mut values: BTreeMap<String, f64> = BTreeMap::new();
    let mut taken: Vec<f64> = Vec::with_capacity(stats.vocabulary_size());
    for (rank, c) in centroids.iter().enumerate() {
        let v = params.base_value(rank);
        values.insert(c.clone(), v);
        taken.push(v);
    }

    let mut nudged = BTreeSet::new();
    for (rank, c) in centroids.iter().enumerate() {
        let base = params.base_value(rank);
        let mut members: Vec<(&String, f64)> = assignment
            .cluster_of
            .iter()
            .filter(|(kw, owner)| *owner == c && *kw != c)
            .map(|(kw, _)| Ok((kw, confidence(stats, kw, c)?)))
            .collect::<Result<_>>()?;
        members.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        for (i, (kw, conf)) in members.into_iter().enumerate() {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let mut v = base + sign * params.offset(conf);
            let mut steps = 0u32;
            while taken.iter().any(|t| (t - v).abs() < COLLISION_EPS) {
                steps += 1;
                v = base + sign * (params.offset(conf) + params.min_offset * f64::from(steps));
            }
            if steps > 0 {
                nudged.insert(kw.clone());
            }
            taken.push(v);
            values.insert(kw.clone(), v);
        }
    }

    Ok(KeywordMap {
        category: stats.category.clone(),
        centroids,
        values,
        cluster_of: assignment.cluster_of,
        support: stats.support.clone(),
        params,
        nudged,
        unaffiliated: assignment.unaffiliated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolveMode {
    Strict,
    Fallback,
}

/// Reduces a page's keywords to one value: the mapped keyword with the highest support.
pub fn resolve_page_value(
    map: &KeywordMap,
    page_keywords: &BTreeSet<String>,
    mode: ResolveMode,
) -> Result<f64> {
    if page_keywords.is_empty() {
        return Err(Error::Domain("page has no keywords".into()));
    }
    let mut best: Option<(u64, f64)> = None;
    for kw in page_keywords {
        if let Some(&v) = map.values.get(kw) {
            let s = map.support.get(kw).copied().unwrap_or(0);
            if best.is_none_or(|(bs, _)| s > bs) {
                best = Some((s, v));
            }
        }
    }
    match (best, mode) {
        (Some((_, v)), _) => Ok(v),
        (None, ResolveMode::Fallback) => map
            .centroids
            .first()
            .and_then(|c| map.values.get(c))
            .copied()
            .ok_or_else(|| Error::Domain("keyword map has no centroids".into())),
        (None, ResolveMode::Strict) => Err(Error::Mapping {
            unknown: page_keywords.iter().cloned().collect(),
        }),
    }
}

impl KeywordMap {
    pub fn value(&self, keyword: &str) -> Option<f64> {
        self.values.get(keyword).copied()
    }

    pub fn base_of(&self, centroid: &str) -> Option<f64> {
        self.centroids
            .iter()
            .position(|c| c == centroid)
            .map(|r| self.params.base_value(r))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save<W: Write>(&self, mut writer: W) -> Result<()> {
        writer.write_all(self.to_json()?.as_bytes())?;
        writer.write_all(b"\n")?;
        Ok(())
    }

    pub fn load<R: Read>(reader: R) -> Result<Self> {
        let map: KeywordMap = serde_json::from_reader(reader)?;
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        if self.centroids.is_empty() {
            return Err(Error::Validation("keyword map has no centroids".into()));
        }
        for c in &self.centroids {
            if !self.values.contains_key(c) {
                return Err(Error::Validation(format!("centroid `{c}` has no value")));
            }
        }
        let mut vals: Vec<f64> = self.values.values().copied().collect();
        vals.sort_by(f64::total_cmp);
        if vals.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation("keyword values are not distinct".into()));
        }
        Ok(())
    }

    /// Stable identifier derived from the serialized map.
    pub fn reference(&self) -> String {
        let json = serde_json::to_string(self).unwrap_or_default();
        format!("{}-k{}-{:016x}", self.category, self.params.k, fnv1a(json.as_bytes()))
    }

    pub fn cluster_sizes(&self) -> Vec<(String, usize)> {
        self.centroids
            .iter()
            .map(|c| (c.clone(), self.cluster_of.values().filter(|o| *o == c).count()))
            .collect()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3)
    })
}
