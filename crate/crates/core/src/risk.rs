//! Image-level risk, segment aggregation, and risk categories.
//!
//! An image's risk is the clamped weighted sum of its Level-1 answer
//! coefficients, normalized by the total weight:
//!
//! ```text
//! R_img = max(0, Σ w_i·x_i) / Σ w_i      x_i ∈ {1, −1/|Q|, 0}
//! ```
//!
//! A segment carries the maximum risk of the images matched to it.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{BinaryAnswer, HazardCategory, QuerySession, QuestionCatalog};

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("question count must be at least 1")]
    ZeroQuestionCount,
    #[error("risk value {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("segment `{0}` has no observations")]
    NoObservations(String),
    #[error("weight for {category} must be in (0, 1], got {weight}")]
    InvalidWeight { category: String, weight: f64 },
    #[error("unknown hazard category `{0}` in weight overrides")]
    UnknownCategory(String),
    #[error("thresholds must be strictly increasing inside (0, 1), got {0:?}")]
    InvalidThresholds([f64; 3]),
    #[error("weight overrides are not valid JSON: {0}")]
    Parse(String),
}

/// Severity tiers for hazard weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Critical,
    High,
    Low,
}

impl Tier {
    pub fn weight(self) -> f64 {
        match self {
            Tier::Critical => 1.0,
            Tier::High => 0.6,
            Tier::Low => 0.3,
        }
    }

    pub fn of(category: HazardCategory) -> Tier {
        use HazardCategory::*;
        match category {
            Construction | Surface | NonSidewalk => Tier::Critical,
            Crossings | Stairs | Obstacles => Tier::High,
            Crowding | Vehicles => Tier::Low,
        }
    }
}

/// Per-category weights. Defaults come from the tier table; individual
/// weights may be overridden for regional calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightConfig {
    weights: [f64; 8],
    tiers: [Tier; 8],
}

impl Default for WeightConfig {
    fn default() -> Self {
        let tiers = HazardCategory::ALL.map(Tier::of);
        Self {
            weights: tiers.map(Tier::weight),
            tiers,
        }
    }
}

fn slot(category: HazardCategory) -> usize {
    HazardCategory::ALL
        .iter()
        .position(|&c| c == category)
        .expect("category is in ALL")
}

impl WeightConfig {
    pub fn weight(&self, category: HazardCategory) -> f64 {
        self.weights[slot(category)]
    }

    pub fn tier(&self, category: HazardCategory) -> Tier {
        self.tiers[slot(category)]
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn with_weight(mut self, category: HazardCategory, weight: f64) -> Result<Self, RiskError> {
        if !(weight > 0.0 && weight <= 1.0) {
            return Err(RiskError::InvalidWeight {
                category: category.to_string(),
                weight,
            });
        }
        self.weights[slot(category)] = weight;
        Ok(self)
    }

    /// Applies a `{category: weight}` override document on top of the defaults.
    pub fn from_override_json(source: &str) -> Result<Self, RiskError> {
        let raw: BTreeMap<String, f64> = serde_json::from_str(source).map_err(|e| RiskError::Parse(e.to_string()))?;
        raw.into_iter().try_fold(Self::default(), |config, (name, weight)| {
            let category = name
                .parse::<HazardCategory>()
                .map_err(|_| RiskError::UnknownCategory(name.clone()))?;
            config.with_weight(category, weight)
        })
    }
}

/// `x_i` for one answer.
pub fn answer_coefficient(answer: BinaryAnswer, q_count: usize) -> Result<f64, RiskError> {
    if q_count == 0 {
        return Err(RiskError::ZeroQuestionCount);
    }
    Ok(match answer {
        BinaryAnswer::Yes => 1.0,
        BinaryAnswer::No => -1.0 / q_count as f64,
        BinaryAnswer::Unanswered => 0.0,
    })
}

/// The Level-1 answers of one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CategoryAnswers([BinaryAnswer; 8]);

impl CategoryAnswers {
    pub fn new(answers: [BinaryAnswer; 8]) -> Self {
        Self(answers)
    }

    pub fn uniform(answer: BinaryAnswer) -> Self {
        Self([answer; 8])
    }

    /// Reads each category's Level-1 answer; absent answers are Unanswered.
    pub fn from_session(session: &QuerySession, catalog: &QuestionCatalog) -> Self {
        Self(HazardCategory::ALL.map(|c| {
            session
                .answer(&catalog.level_one(c).id)
                .unwrap_or(BinaryAnswer::Unanswered)
        }))
    }

    pub fn get(&self, category: HazardCategory) -> BinaryAnswer {
        self.0[slot(category)]
    }

    pub fn set(&mut self, category: HazardCategory, answer: BinaryAnswer) {
        self.0[slot(category)] = answer;
    }

    pub fn with(mut self, category: HazardCategory, answer: BinaryAnswer) -> Self {
        self.set(category, answer);
        self
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> impl Iterator<Item = (HazardCategory, BinaryAnswer)> + '_ {
        HazardCategory::ALL.into_iter().zip(self.0.iter().copied())
    }
}

/// A risk value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RiskScore(f64);

impl RiskScore {
    pub const ZERO: RiskScore = RiskScore(0.0);

    pub fn new(value: f64) -> Result<Self, RiskError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(RiskError::OutOfRange(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn category(self) -> RiskCategory {
        Thresholds::default().classify(self)
    }
}

impl TryFrom<f64> for RiskScore {
    type Error = RiskError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        RiskScore::new(value)
    }
}

impl From<RiskScore> for f64 {
    fn from(r: RiskScore) -> f64 {
        r.0
    }
}

impl fmt::Display for RiskScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}", self.0)
    }
}

/// `Σ w_i·x_i` before clamping.
pub fn weighted_sum(answers: &CategoryAnswers, weights: &WeightConfig) -> f64 {
    let q_count = answers.len();
    answers
        .iter()
        .map(|(c, a)| weights.weight(c) * answer_coefficient(a, q_count).expect("eight level-1 questions"))
        .sum()
}

pub fn image_risk(answers: &CategoryAnswers, weights: &WeightConfig) -> RiskScore {
    let value = weighted_sum(answers, weights).max(0.0) / weights.total();
    RiskScore(value.min(1.0))
}

/// Worst-case risk of one street segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRisk {
    pub segment_id: String,
    pub value: RiskScore,
    pub contributing_images: Vec<String>,
}

pub fn segment_risk(segment_id: &str, image_risks: &[(String, RiskScore)]) -> Result<SegmentRisk, RiskError> {
    let value = image_risks
        .iter()
        .map(|(_, r)| *r)
        .reduce(|a, b| if b.0 > a.0 { b } else { a })
        .ok_or_else(|| RiskError::NoObservations(segment_id.to_string()))?;
    Ok(SegmentRisk {
        segment_id: segment_id.to_string(),
        value,
        contributing_images: image_risks.iter().map(|(id, _)| id.clone()).collect(),
    })
}

/// Discrete risk classes, ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskCategory {
    Unobserved,
    Safe,
    Caution,
    Danger,
    HighRisk,
}

impl RiskCategory {
    pub const OBSERVED: [RiskCategory; 4] = [
        RiskCategory::Safe,
        RiskCategory::Caution,
        RiskCategory::Danger,
        RiskCategory::HighRisk,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RiskCategory::Safe => "safe",
            RiskCategory::Caution => "caution",
            RiskCategory::Danger => "danger",
            RiskCategory::HighRisk => "high_risk",
            RiskCategory::Unobserved => "unobserved",
        }
    }

    pub fn color(self) -> &'static str {
        match self {
            RiskCategory::Safe => "#2ecc71",
            RiskCategory::Caution => "#f1c40f",
            RiskCategory::Danger => "#e67e22",
            RiskCategory::HighRisk => "#e74c3c",
            RiskCategory::Unobserved => "#9e9e9e",
        }
    }
}

impl fmt::Display for RiskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Category boundaries: Safe `≤ safe_max`, Caution below `danger_min`,
/// Danger below `high_risk_min`, HighRisk from there up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub safe_max: f64,
    pub danger_min: f64,
    pub high_risk_min: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            safe_max: 0.15,
            danger_min: 0.4,
            high_risk_min: 0.7,
        }
    }
}

impl Thresholds {
    pub fn new(safe_max: f64, danger_min: f64, high_risk_min: f64) -> Result<Self, RiskError> {
        let values = [safe_max, danger_min, high_risk_min];
        let ordered = 0.0 < safe_max && safe_max < danger_min && danger_min < high_risk_min && high_risk_min < 1.0;
        if !ordered {
            return Err(RiskError::InvalidThresholds(values));
        }
        Ok(Self {
            safe_max,
            danger_min,
            high_risk_min,
        })
    }

    pub fn classify(&self, r: RiskScore) -> RiskCategory {
        let r = r.0;
        if r <= self.safe_max {
            RiskCategory::Safe
        } else if r < self.danger_min {
            RiskCategory::Caution
        } else if r < self.high_risk_min {
            RiskCategory::Danger
        } else {
            RiskCategory::HighRisk
        }
    }
}

/// Classifies a raw value with the default thresholds.
pub fn classify(r: f64) -> Result<RiskCategory, RiskError> {
    RiskScore::new(r).map(RiskScore::category)
}
