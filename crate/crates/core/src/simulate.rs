//! Seeded synthetic traffic with a known click model.
//!
//! Pages are drawn from three sports clusters, a keyword map is built from the
//! page keywords, and each impression clicks with probability `θ*·x` where `x`
//! is the usual (placement, size, bid, keyword value) vector. Fitting a model
//! to the output should recover `θ*`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::{keyword_set, AdCreative, Location, Placement, RequestContext};
use crate::error::{Error, Result};
use crate::features::SizeRegistry;
use crate::keywords::{build_keyword_map, count_cooccurrences, resolve_page_value, KeywordMap, ResolveMode};
use crate::logs::{ImpressionEvent, TrainingRow};
use crate::regression::hypothesis;
use crate::server::build_pool;

/// Planted coefficients: intercept, placement, size, bid, keyword value.
pub const PLANTED_THETA: [f64; 5] = [-0.05, 0.03, 0.005, 0.002, 0.001];

const CLUSTERS: [(&str, f64, &[&str]); 3] = [
    (
        "football",
        0.40,
        &["soccer", "premier league", "epl", "la liga", "ronaldo", "messi"],
    ),
    ("cricket", 0.32, &["afridi", "test match", "wicket", "odi", "ashes"]),
    ("tennis", 0.28, &["nadal", "federer", "wimbledon", "grand slam"]),
];
const BIDS: [f64; 9] = [5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0];
const COUNTRIES: [&str; 3] = ["PK", "GB", "US"];
const START_MS: i64 = 1_700_000_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub events: usize,
    pub category: String,
    pub k: usize,
    pub pages: usize,
    pub ads_per_slot: usize,
    pub theta: [f64; 5],
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 7,
            events: 10_000,
            category: "sports".into(),
            k: 3,
            pages: 500,
            ads_per_slot: 4,
            theta: PLANTED_THETA,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub events: Vec<ImpressionEvent>,
    pub catalog: Vec<AdCreative>,
    /// `None` when no events were requested.
    pub map: Option<KeywordMap>,
    /// Feature vector and true click probability for each event.
    pub truth: Vec<([f64; 4], f64)>,
}

impl Simulation {
    /// One row per impression with the click outcome (0 or 1) as target.
    pub fn event_rows(&self) -> Vec<TrainingRow> {
        self.truth
            .iter()
            .zip(&self.events)
            .map(|((x, _), e)| TrainingRow {
                placement_code: x[0] as u8,
                size_code: x[1] as u32,
                bid: x[2],
                keyword_value: x[3],
                ctr: if e.clicked { 1.0 } else { 0.0 },
            })
            .collect()
    }
}

fn sample_page(rng: &mut ChaCha8Rng) -> BTreeSet<String> {
    let roll: f64 = rng.gen();
    let mut acc = 0.0;
    let mut cluster = &CLUSTERS[CLUSTERS.len() - 1];
    for c in &CLUSTERS {
        acc += c.1;
        if roll < acc {
            cluster = c;
            break;
        }
    }
    let (head, _, members) = cluster;
    let mut words: Vec<&str> = Vec::new();
    if rng.gen_bool(0.9) {
        words.push(head);
    }
    let extra = rng.gen_range(1..=3);
    words.extend(members.choose_multiple(rng, extra).copied());
    keyword_set(words)
}

fn build_catalog(rng: &mut ChaCha8Rng, category: &str, registry: &SizeRegistry, per_slot: usize) -> Vec<AdCreative> {
    let mut ads = Vec::new();
    for (head, _, members) in &CLUSTERS {
        for size in registry.labels() {
            for j in 0..per_slot {
                let mut words = vec![*head];
                let extra = rng.gen_range(1..=2);
                words.extend(members.choose_multiple(rng, extra).copied());
                let mut locations = BTreeSet::new();
                if rng.gen_bool(0.2) {
                    locations.insert(COUNTRIES.choose(rng).unwrap().to_string());
                }
                let n = ads.len();
                ads.push(AdCreative {
                    ad_id: format!("sim-{n:05}"),
                    campaign_id: format!("camp-{head}-{j}"),
                    category: category.to_string(),
                    size: size.clone(),
                    bid: *BIDS.choose(rng).unwrap(),
                    landing_page: format!("https://ads.example.com/{head}/{n}"),
                    keywords: keyword_set(words),
                    locations,
                });
            }
        }
    }
    ads
}

pub fn simulate(config: &SimConfig) -> Result<Simulation> {
    if config.pages == 0 && config.events > 0 {
        return Err(Error::Domain("simulation needs at least one page".into()));
    }
    let registry = SizeRegistry::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let catalog = build_catalog(&mut rng, &config.category, &registry, config.ads_per_slot);
    if config.events == 0 {
        return Ok(Simulation {
            events: Vec::new(),
            catalog,
            map: None,
            truth: Vec::new(),
        });
    }

    let pages: Vec<BTreeSet<String>> = (0..config.pages).map(|_| sample_page(&mut rng)).collect();
    let stats = count_cooccurrences(&pages, &config.category)?;
    let map = build_keyword_map(&stats, config.k)?;

    let mut events = Vec::with_capacity(config.events);
    let mut truth = Vec::with_capacity(config.events);
    for i in 0..config.events {
        let page = pages.choose(&mut rng).unwrap();
        let placement = if rng.gen_bool(0.5) {
            Placement::AboveFold
        } else {
            Placement::BelowFold
        };
        let size = registry.labels().choose(&mut rng).unwrap().clone();
        let mut request = RequestContext::new(placement, size.clone(), config.category.clone(), page.iter());
        request.location = Location {
            country: COUNTRIES.choose(&mut rng).unwrap().to_string(),
            ..Location::default()
        };
        let pool = build_pool(&catalog, &request);
        let ad = match pool.candidates.choose(&mut rng) {
            Some(c) => c.ad,
            None => {
                let same_size: Vec<&AdCreative> = catalog.iter().filter(|a| a.size == size).collect();
                same_size.choose(&mut rng).copied().ok_or(Error::NoFill)?
            }
        };
        let x = [
            f64::from(placement.code()),
            f64::from(registry.code(&ad.size).unwrap_or(0)),
            ad.bid,
            resolve_page_value(&map, &request.page_keywords, ResolveMode::Fallback)?,
        ];
        let p = hypothesis(&config.theta, &[1.0, x[0], x[1], x[2], x[3]]).clamp(0.0, 1.0);
        let clicked = rng.gen::<f64>() < p;
        let (ad_id, bid) = (ad.ad_id.clone(), ad.bid);
        events.push(ImpressionEvent {
            timestamp: START_MS + i as i64 * 1000,
            ad_id,
            context: request,
            served_bid: Some(bid),
            clicked,
        });
        truth.push((x, p));
    }
    Ok(Simulation {
        events,
        catalog,
        map: Some(map),
        truth,
    })
}
