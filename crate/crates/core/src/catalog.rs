//! Advertiser, publisher and viewer entities plus the ad catalog format.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SizeRegistry;

/// Where the ad slot sits on the publisher page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    AboveFold,
    BelowFold,
}

impl Placement {
    pub fn code(self) -> u8 {
        match self {
            Placement::AboveFold => 1,
            Placement::BelowFold => 0,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Placement::AboveFold),
            0 => Some(Placement::BelowFold),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Placement::AboveFold => "above_fold",
            Placement::BelowFold => "below_fold",
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "above_fold" | "1" => Ok(Placement::AboveFold),
            "below_fold" | "0" => Ok(Placement::BelowFold),
            other => Err(Error::Encoding {
                what: "placement",
                label: other.to_string(),
            }),
        }
    }
}

/// Lowercases and trims a keyword token. No stemming.
pub fn normalize_keyword(token: &str) -> String {
    token.trim().to_lowercase()
}

/// Normalizes a token list into a set, dropping empty tokens.
pub fn keyword_set<I, S>(tokens: I) -> BTreeSet<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    tokens
        .into_iter()
        .map(|t| normalize_keyword(t.as_ref()))
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdCreative {
    pub ad_id: String,
    pub campaign_id: String,
    pub category: String,
    pub size: String,
    /// Floor price in currency units.
    pub bid: f64,
    pub landing_page: String,
    pub keywords: BTreeSet<String>,
    /// Targeted countries; empty means untargeted.
    #[serde(default)]
    pub locations: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Location {
    #[serde(default)]
    pub area: String,
    #[serde(default)]
    pub city: String,
    #[serde(default)]
    pub country: String,
}

/// Everything known about one ad request: publisher slot, page content, viewer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestContext {
    pub placement: Placement,
    pub size: String,
    pub category: String,
    pub page_keywords: BTreeSet<String>,
    #[serde(default)]
    pub location: Location,
    #[serde(default)]
    pub ip: String,
    #[serde(default)]
    pub browser: String,
    #[serde(default)]
    pub cookies: String,
}

impl RequestContext {
    pub fn new(
        placement: Placement,
        size: impl Into<String>,
        category: impl Into<String>,
        page_keywords: impl IntoIterator<Item = impl AsRef<str>>,
    ) -> Self {
        RequestContext {
            placement,
            size: size.into(),
            category: category.into(),
            page_keywords: keyword_set(page_keywords),
            location: Location::default(),
            ip: String::new(),
            browser: String::new(),
            cookies: String::new(),
        }
    }

    pub fn with_country(mut self, country: impl Into<String>) -> Self {
        self.location.country = country.into();
        self
    }
}

/// Raw record of one ad parsed from a catalog file, before validation.
#[derive(Deserialize)]
struct RawAd {
    ad_id: String,
    campaign_id: String,
    category: String,
    size: String,
    bid: f64,
    landing_page: String,
    keywords: Vec<String>,
    #[serde(default)]
    locations: Vec<String>,
}

/// Parses a JSON ad catalog, validating every record against `registry`.
///
/// Record indices in error messages are 0-based positions in the array.
pub fn parse_ad_catalog<R: Read>(reader: R, registry: &SizeRegistry) -> Result<Vec<AdCreative>> {
    let mut text = String::new();
    let mut reader = reader;
    reader.read_to_string(&mut text)?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let raw: Vec<RawAd> = serde_json::from_str(&text)
        .map_err(|e| Error::parse(e.line(), "catalog", e.to_string()))?;

    let mut seen = HashSet::new();
    let mut ads = Vec::with_capacity(raw.len());
    for (i, r) in raw.into_iter().enumerate() {
        let ad = AdCreative {
            ad_id: r.ad_id.trim().to_string(),
            campaign_id: r.campaign_id,
            category: r.category.trim().to_string(),
            size: r.size.trim().to_string(),
            bid: r.bid,
            landing_page: r.landing_page,
            keywords: keyword_set(&r.keywords),
            locations: r
                .locations
                .iter()
                .map(|l| l.trim().to_string())
                .filter(|l| !l.is_empty())
                .collect(),
        };
        validate_ad(&ad, registry).map_err(|e| match e {
            Error::Validation(msg) => Error::Validation(format!("record {i}: {msg}")),
            other => other,
        })?;
        if !seen.insert(ad.ad_id.clone()) {
            return Err(Error::DuplicateAd(ad.ad_id));
        }
        ads.push(ad);
    }
    Ok(ads)
}

pub fn validate_ad(ad: &AdCreative, registry: &SizeRegistry) -> Result<()> {
    if ad.ad_id.is_empty() {
        return Err(Error::Validation("ad_id is empty".into()));
    }
    if !(ad.bid.is_finite() && ad.bid > 0.0) {
        return Err(Error::Validation(format!(
            "ad `{}` has non-positive bid {}",
            ad.ad_id, ad.bid
        )));
    }
    if ad.keywords.is_empty() {
        return Err(Error::Validation(format!("ad `{}` has no keywords", ad.ad_id)));
    }
    if !registry.contains(&ad.size) {
        return Err(Error::Validation(format!(
            "ad `{}` has unregistered size `{}`",
            ad.ad_id, ad.size
        )));
    }
    Ok(())
}

pub fn write_ad_catalog<W: Write>(ads: &[AdCreative], writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, ads)?;
    Ok(())
}
