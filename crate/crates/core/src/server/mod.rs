//! Contextual ad selection and the serving snapshot.
//!
//! Selection first narrows the catalog to a candidate pool (size, category,
//! country targeting, at least one shared keyword). Bid mode then prefers the
//! highest keyword overlap and breaks ties by bid; CTR mode ranks the pool by
//! the model's predicted click-through rate.

pub mod http;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs::File;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use arc_swap::ArcSwap;
use serde::{Deserialize, Serialize};

use crate::catalog::{parse_ad_catalog, AdCreative, RequestContext};
use crate::error::{Error, Result};
use crate::features::encode_size;
use crate::keywords::{resolve_page_value, KeywordMap, ResolveMode};
use crate::logs::{EventLogWriter, ImpressionEvent};
use crate::regression::{load_model, predict, RegressionModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServeMode {
    Bid,
    Ctr,
}

impl std::str::FromStr for ServeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bid" => Ok(ServeMode::Bid),
            "ctr" => Ok(ServeMode::Ctr),
            other => Err(Error::Validation(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate<'a> {
    pub ad: &'a AdCreative,
    pub overlap: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool<'a> {
    pub request: &'a RequestContext,
    pub candidates: Vec<Candidate<'a>>,
}

impl CandidatePool<'_> {
    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }
}

pub fn keyword_overlap(ad: &AdCreative, request: &RequestContext) -> usize {
    let (small, large) = if ad.keywords.len() <= request.page_keywords.len() {
        (&ad.keywords, &request.page_keywords)
    } else {
        (&request.page_keywords, &ad.keywords)
    };
    small.iter().filter(|k| large.contains(*k)).count()
}

fn eligible(ad: &AdCreative, request: &RequestContext) -> Option<usize> {
    if ad.size != request.size || ad.category != request.category {
        return None;
    }
    if !ad.locations.is_empty() && !ad.locations.contains(&request.location.country) {
        return None;
    }
    match keyword_overlap(ad, request) {
        0 => None,
        n => Some(n),
    }
}

pub fn build_pool<'a>(catalog: &'a [AdCreative], request: &'a RequestContext) -> CandidatePool<'a> {
    let candidates = catalog
        .iter()
        .filter_map(|ad| eligible(ad, request).map(|overlap| Candidate { ad, overlap }))
        .collect();
    CandidatePool {
        request,
        candidates,
    }
}

/// Orders (overlap, bid, ad_id) so that the greatest candidate wins.
fn bid_rank(a: &Candidate<'_>, b: &Candidate<'_>) -> Ordering {
    a.overlap
        .cmp(&b.overlap)
        .then_with(|| a.ad.bid.total_cmp(&b.ad.bid))
        .then_with(|| b.ad.ad_id.cmp(&a.ad.ad_id))
}

/// Highest keyword overlap, then highest bid, then smallest `ad_id`.
pub fn select_by_bid<'a>(pool: &CandidatePool<'a>) -> Result<&'a AdCreative> {
    pool.candidates
        .iter()
        .max_by(|a, b| bid_rank(a, b))
        .map(|c| c.ad)
        .ok_or(Error::NoFill)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtrChoice<'a> {
    pub ad: &'a AdCreative,
    pub predicted_ctr: f64,
    /// Candidates that could not be scored, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Feature vector the model sees for `ad` shown on `request`'s page.
pub fn candidate_features(
    ad: &AdCreative,
    request: &RequestContext,
    model: &RegressionModel,
    page_value: f64,
) -> Result<[f64; 4]> {
    let size = encode_size(&ad.size, &model.schema.size_registry)?;
    Ok([
        f64::from(request.placement.code()),
        f64::from(size),
        ad.bid,
        page_value,
    ])
}

/// Highest predicted CTR, then highest bid, then smallest `ad_id`.
pub fn select_by_ctr<'a>(
    pool: &CandidatePool<'a>,
    model: &RegressionModel,
    map: &KeywordMap,
) -> Result<CtrChoice<'a>> {
    if pool.is_empty() {
        return Err(Error::NoFill);
    }
    let page_value = resolve_page_value(map, &pool.request.page_keywords, ResolveMode::Fallback)?;
    let mut best: Option<(&'a AdCreative, f64)> = None;
    let mut skipped = Vec::new();
    for c in &pool.candidates {
        let score = candidate_features(c.ad, pool.request, model, page_value)
            .and_then(|x| predict(model, &x));
        let score = match score {
            Ok(s) => s,
            Err(e) => {
                skipped.push((c.ad.ad_id.clone(), e.to_string()));
                continue;
            }
        };
        let better = match best {
            None => true,
            Some((ad, s)) => score
                .total_cmp(&s)
                .then_with(|| c.ad.bid.total_cmp(&ad.bid))
                .then_with(|| ad.ad_id.cmp(&c.ad.ad_id))
                == Ordering::Greater,
        };
        if better {
            best = Some((c.ad, score));
        }
    }
    match best {
        Some((ad, predicted_ctr)) => Ok(CtrChoice {
            ad,
            predicted_ctr,
            skipped,
        }),
        None => Err(Error::Validation(format!(
            "no candidate could be scored: {}",
            skipped
                .iter()
                .map(|(id, why)| format!("{id}: {why}"))
                .collect::<Vec<_>>()
                .join("; ")
        ))),
    }
}

/// Catalog, model and keyword map, indexed for lookup and never mutated.
#[derive(Debug)]
pub struct ServingState {
    catalog: Vec<AdCreative>,
    model: RegressionModel,
    map: KeywordMap,
    by_slot: HashMap<(String, String), Vec<usize>>,
    by_id: HashMap<String, usize>,
}

impl ServingState {
    pub fn new(catalog: Vec<AdCreative>, model: RegressionModel, map: KeywordMap) -> Self {
        let mut by_slot: HashMap<(String, String), Vec<usize>> = HashMap::new();
        let mut by_id = HashMap::with_capacity(catalog.len());
        for (i, ad) in catalog.iter().enumerate() {
            by_slot
                .entry((ad.size.clone(), ad.category.clone()))
                .or_default()
                .push(i);
            by_id.insert(ad.ad_id.clone(), i);
        }
        ServingState {
            catalog,
            model,
            map,
            by_slot,
            by_id,
        }
    }

    pub fn catalog(&self) -> &[AdCreative] {
        &self.catalog
    }

    pub fn model(&self) -> &RegressionModel {
        &self.model
    }

    pub fn keyword_map(&self) -> &KeywordMap {
        &self.map
    }

    pub fn ad(&self, ad_id: &str) -> Option<&AdCreative> {
        self.by_id.get(ad_id).map(|&i| &self.catalog[i])
    }

    /// Same pool as [`build_pool`] over the whole catalog, via the (size, category) index.
    pub fn pool<'a>(&'a self, request: &'a RequestContext) -> CandidatePool<'a> {
        let candidates = self
            .by_slot
            .get(&(request.size.clone(), request.category.clone()))
            .map(|idx| {
                idx.iter()
                    .filter_map(|&i| {
                        let ad = &self.catalog[i];
                        eligible(ad, request).map(|overlap| Candidate { ad, overlap })
                    })
                    .collect()
            })
            .unwrap_or_default();
        CandidatePool {
            request,
            candidates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdResponse {
    pub ad_id: String,
    pub campaign_id: String,
    pub landing_page: String,
    pub size: String,
    /// Bid in bid mode, predicted CTR in ctr mode.
    pub score: f64,
    pub mode: ServeMode,
    pub latency_micros: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ServeOutcome {
    Filled(AdResponse),
    NoFill { latency_micros: u64 },
}

impl ServeOutcome {
    pub fn latency_micros(&self) -> u64 {
        match self {
            ServeOutcome::Filled(r) => r.latency_micros,
            ServeOutcome::NoFill { latency_micros } => *latency_micros,
        }
    }

    pub fn response(&self) -> Option<&AdResponse> {
        match self {
            ServeOutcome::Filled(r) => Some(r),
            ServeOutcome::NoFill { .. } => None,
        }
    }
}

pub fn serve(request: &RequestContext, mode: ServeMode, state: &ServingState) -> Result<ServeOutcome> {
    let start = Instant::now();
    let pool = state.pool(request);
    let picked = match mode {
        ServeMode::Bid => select_by_bid(&pool).map(|ad| (ad, ad.bid)),
        ServeMode::Ctr => select_by_ctr(&pool, &state.model, &state.map).map(|c| (c.ad, c.predicted_ctr)),
    };
    let latency_micros = start.elapsed().as_micros() as u64;
    match picked {
        Ok((ad, score)) => Ok(ServeOutcome::Filled(AdResponse {
            ad_id: ad.ad_id.clone(),
            campaign_id: ad.campaign_id.clone(),
            landing_page: ad.landing_page.clone(),
            size: ad.size.clone(),
            score,
            mode,
            latency_micros,
        })),
        Err(Error::NoFill) => Ok(ServeOutcome::NoFill { latency_micros }),
        Err(e) => Err(e),
    }
}

/// Atomically swappable serving state. Readers keep whichever snapshot they loaded.
pub struct Snapshot {
    inner: ArcSwap<ServingState>,
}

impl Snapshot {
    pub fn new(state: ServingState) -> Self {
        Snapshot {
            inner: ArcSwap::from_pointee(state),
        }
    }

    pub fn load(&self) -> Arc<ServingState> {
        self.inner.load_full()
    }

    pub fn replace(&self, state: ServingState) {
        self.inner.store(Arc::new(state));
    }
}

/// File locations the serving state is (re)loaded from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServingPaths {
    pub ads: PathBuf,
    pub model: PathBuf,
    pub map: PathBuf,
}

impl ServingPaths {
    pub fn load(&self) -> Result<ServingState> {
        let model = load_model(File::open(&self.model)?)?;
        let map = KeywordMap::load(File::open(&self.map)?)?;
        // keyword values are only meaningful under the map the model was trained with
        if let Some(expected) = &model.keyword_map_ref {
            let actual = map.reference();
            if *expected != actual {
                return Err(Error::Validation(format!(
                    "model was trained with keyword map {expected}, got {actual}"
                )));
            }
        }
        let catalog = parse_ad_catalog(File::open(&self.ads)?, &model.schema.size_registry)?;
        Ok(ServingState::new(catalog, model, map))
    }
}

fn now_millis() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(1)
        .max(1)
}

/// Appends an impression (or click) for a known ad to the event log.
pub fn record_event(
    state: &ServingState,
    log: &EventLogWriter,
    ad_id: &str,
    request: &RequestContext,
    clicked: bool,
) -> Result<ImpressionEvent> {
    let ad = state
        .ad(ad_id)
        .ok_or_else(|| Error::Validation(format!("unknown ad `{ad_id}`")))?;
    let event = ImpressionEvent {
        timestamp: now_millis(),
        ad_id: ad.ad_id.clone(),
        context: request.clone(),
        served_bid: Some(ad.bid),
        clicked,
    };
    log.append(&event)?;
    Ok(event)
}
