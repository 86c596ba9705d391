//! Risk scoring and recommendation selection.
//!
//! Each predicted deficit beyond its threshold contributes `w * |d|`. Rules
//! add risks for skipped meals, BMI outside its healthy range and two
//! interactions. Items under `theta` are dropped, the rest sorted by risk
//! (ties by source precedence), and the top `top_n` kept. A composite score
//! above `r_high` marks the set high priority.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{DeficitPair, FeatureVector};

pub const FALLBACK_MESSAGE: &str = "Your lifestyle parameters are close to ideal. Keep it up!";
pub const HIGH_PRIORITY_TAG: &str = "[HIGH PRIORITY]";
pub const DEFAULT_CATALOG: &str = include_str!("../data/messages.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Meal,
    Bmi,
    SleepBreakfast,
    DistanceMeal,
}

/// Where a risk came from. Declaration order is the tie-break precedence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Sleep,
    Distance,
    Bmi,
    Meal,
    SleepBreakfast,
    DistanceMeal,
}

impl Source {
    pub fn catalog_key(self) -> &'static str {
        match self {
            Source::Sleep => "sleep",
            Source::Distance => "distance",
            Source::Bmi => "bmi",
            Source::Meal => "meal",
            Source::SleepBreakfast => "sleep_breakfast",
            Source::DistanceMeal => "distance_meal",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::SleepBreakfast | Source::DistanceMeal => write!(f, "interaction:{}", self.catalog_key()),
            _ => f.write_str(self.catalog_key()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Below,
    Above,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionMessages {
    pub below: Option<String>,
    pub above: Option<String>,
}

/// Messages keyed by `(source, direction)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageCatalog {
    entries: BTreeMap<String, DirectionMessages>,
}

impl MessageCatalog {
    pub fn parse(text: &str) -> Result<Self> {
        let entries: BTreeMap<String, DirectionMessages> =
            toml::from_str(text).map_err(|e| Error::ConfigParse(format!("message catalog: {e}")))?;
        let known = [
            Source::Sleep,
            Source::Distance,
            Source::Bmi,
            Source::Meal,
            Source::SleepBreakfast,
            Source::DistanceMeal,
        ];
        for key in entries.keys() {
            if !known.iter().any(|s| s.catalog_key() == key) {
                return Err(Error::config(format!("catalog.{key}"), "unknown message source"));
            }
        }
        let catalog = Self { entries };
        let required = [
            (Source::Sleep, Direction::Below),
            (Source::Sleep, Direction::Above),
            (Source::Distance, Direction::Below),
            (Source::Distance, Direction::Above),
            (Source::Bmi, Direction::Below),
            (Source::Bmi, Direction::Above),
            (Source::Meal, Direction::Below),
            (Source::SleepBreakfast, Direction::Below),
            (Source::DistanceMeal, Direction::Below),
        ];
        for (s, d) in required {
            match catalog.get(s, d) {
                Some(m) if !m.trim().is_empty() => {}
                _ => {
                    return Err(Error::config(
                        format!("catalog.{}.{}", s.catalog_key(), dir_key(d)),
                        "missing or empty message",
                    ))
                }
            }
        }
        Ok(catalog)
    }

    pub fn get(&self, source: Source, direction: Direction) -> Option<&str> {
        let e = self.entries.get(source.catalog_key())?;
        match direction {
            Direction::Below => e.below.as_deref(),
            Direction::Above => e.above.as_deref(),
        }
    }

    fn message(&self, source: Source, direction: Direction) -> String {
        self.get(source, direction)
            .expect("validated at parse time")
            .to_string()
    }
}

impl Default for MessageCatalog {
    fn default() -> Self {
        Self::parse(DEFAULT_CATALOG).expect("bundled catalog is valid")
    }
}

fn dir_key(d: Direction) -> &'static str {
    match d {
        Direction::Below => "below",
        Direction::Above => "above",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecommenderConfig {
    pub w_sleep: f64,
    pub w_distance: f64,
    pub w_bmi: f64,
    pub w_meal: f64,
    /// Minimum |deficit| (hours) before sleep produces a risk.
    pub tau_sleep: f64,
    /// Minimum |deficit| (km) before distance produces a risk.
    pub tau_distance: f64,
    pub theta: f64,
    pub r_high: f64,
    pub top_n: usize,
    pub bmi_range: [f64; 2],
    pub bmi_risk_cap: f64,
    /// Interaction risks are `interaction_factor * w` of the primary parameter.
    pub interaction_factor: f64,
    pub rules: Vec<Rule>,
    /// Optional path to a message catalog replacing the bundled one.
    pub catalog: Option<String>,
}

impl Default for RecommenderConfig {
    fn default() -> Self {
        Self {
            w_sleep: 1.0,
            w_distance: 0.8,
            w_bmi: 1.0,
            w_meal: 1.0,
            tau_sleep: 0.5,
            tau_distance: 0.5,
            theta: 0.5,
            r_high: 3.0,
            top_n: 2,
            bmi_range: [18.5, 24.9],
            bmi_risk_cap: 3.0,
            interaction_factor: 0.5,
            rules: vec![Rule::Meal, Rule::Bmi, Rule::SleepBreakfast, Rule::DistanceMeal],
            catalog: None,
        }
    }
}

impl RecommenderConfig {
    pub fn validate(&self) -> Result<()> {
        let key = |k: &str| format!("recommender.{k}");
        for (k, v) in [
            ("w_sleep", self.w_sleep),
            ("w_distance", self.w_distance),
            ("w_bmi", self.w_bmi),
            ("w_meal", self.w_meal),
            ("tau_sleep", self.tau_sleep),
            ("tau_distance", self.tau_distance),
            ("theta", self.theta),
            ("r_high", self.r_high),
            ("bmi_risk_cap", self.bmi_risk_cap),
            ("interaction_factor", self.interaction_factor),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(key(k), "must be finite and >= 0"));
            }
        }
        if self.top_n == 0 {
            return Err(Error::config(key("top_n"), "must be >= 1"));
        }
        let [lo, hi] = self.bmi_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::config(key("bmi_range"), "need finite min < max"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskItem {
    pub source: Source,
    pub direction: Direction,
    pub risk: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationSet {
    /// Selected items by descending risk; empty when the fallback applies.
    pub items: Vec<RiskItem>,
    pub messages: Vec<String>,
    pub high_priority: bool,
    pub composite: f64,
}

impl RecommendationSet {
    pub fn is_fallback(&self) -> bool {
        self.items.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        if self.high_priority {
            out.push_str(HIGH_PRIORITY_TAG);
            out.push('\n');
        }
        for m in &self.messages {
            out.push_str(m);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Recommender {
    cfg: RecommenderConfig,
    catalog: MessageCatalog,
}

impl Recommender {
    pub fn new(cfg: RecommenderConfig, catalog: MessageCatalog) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, catalog })
    }

    pub fn config(&self) -> &RecommenderConfig {
        &self.cfg
    }

    fn item(&self, source: Source, direction: Direction, risk: f64) -> RiskItem {
        RiskItem {
            source,
            direction,
            risk,
            message: self.catalog.message(source, direction),
        }
    }

    pub fn param_risks(&self, d: &DeficitPair) -> Vec<RiskItem> {
        let c = &self.cfg;
        let mut out = Vec::new();
        for (source, value, w, tau) in [
            (Source::Sleep, d.sleep, c.w_sleep, c.tau_sleep),
            (Source::Distance, d.distance, c.w_distance, c.tau_distance),
        ] {
            if value.abs() > tau {
                let dir = if value > 0.0 {
                    Direction::Below
                } else {
                    Direction::Above
                };
                out.push(self.item(source, dir, w * value.abs()));
            }
        }
        out
    }

    pub fn rule_risks(&self, f: &FeatureVector, d: &DeficitPair) -> Vec<RiskItem> {
        let c = &self.cfg;
        let enabled = |r: Rule| c.rules.contains(&r);
        let mut out = Vec::new();
        if enabled(Rule::Meal) {
            let risk = c.w_meal * (1.0 - f.breakfast) + c.w_meal * (2.0 - f.meal) / 2.0;
            if risk > 0.0 {
                out.push(self.item(Source::Meal, Direction::Below, risk));
            }
        }
        if enabled(Rule::Bmi) {
            let [lo, hi] = c.bmi_range;
            let off = if f.bmi < lo {
                Some((lo - f.bmi, Direction::Below))
            } else if f.bmi > hi {
                Some((f.bmi - hi, Direction::Above))
            } else {
                None
            };
            if let Some((gap, dir)) = off {
                out.push(self.item(Source::Bmi, dir, c.w_bmi * gap.min(c.bmi_risk_cap)));
            }
        }
        if enabled(Rule::SleepBreakfast) && d.sleep > c.tau_sleep && f.breakfast < 0.5 {
            out.push(self.item(
                Source::SleepBreakfast,
                Direction::Below,
                c.interaction_factor * c.w_sleep,
            ));
        }
        if enabled(Rule::DistanceMeal) && d.distance > c.tau_distance && f.meal < 2.0 {
            out.push(self.item(
                Source::DistanceMeal,
                Direction::Below,
                c.interaction_factor * c.w_distance,
            ));
        }
        out
    }

    pub fn select(&self, items: &[RiskItem], composite: f64) -> RecommendationSet {
        let mut kept: Vec<RiskItem> = items.iter().filter(|i| i.risk >= self.cfg.theta).cloned().collect();
        kept.sort_by(|a, b| {
            b.risk
                .partial_cmp(&a.risk)
                .unwrap_or(Ordering::Equal)
                .then(a.source.cmp(&b.source))
        });
        kept.truncate(self.cfg.top_n);
        if kept.is_empty() {
            return RecommendationSet {
                items: Vec::new(),
                messages: vec![FALLBACK_MESSAGE.to_string()],
                high_priority: false,
                composite,
            };
        }
        RecommendationSet {
            messages: kept.iter().map(|i| i.message.clone()).collect(),
            items: kept,
            high_priority: composite > self.cfg.r_high,
            composite,
        }
    }

    /// Full pipeline for one user-day.
    pub fn recommend(&self, features: &FeatureVector, deficits: &DeficitPair) -> RecommendationSet {
        let mut items = self.param_risks(deficits);
        items.extend(self.rule_risks(features, deficits));
        self.select(&items, composite(&items))
    }
}

/// Sum of every risk, taken before threshold filtering.
pub fn composite(items: &[RiskItem]) -> f64 {
    // Folding from +0.0: `Sum for f64` starts at -0.0, which would print as
    // "-0.00" for an empty set.
    items.iter().fold(0.0, |acc, i| acc + i.risk)
}
