//! Scoring answer backends against human ground truth.
//!
//! Level-1 questions are always compared. A Level-2/3 question is compared
//! only when the ground truth answered it, so follow-ups unlocked by a false
//! positive never count against the backend.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::catalog::{BinaryAnswer, HazardCategory, QuerySession, QuestionCatalog, SessionError};
use crate::risk::{image_risk, CategoryAnswers, WeightConfig};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("catalog mismatch: `{left}` vs `{right}`")]
    CatalogMismatch { left: String, right: String },
    #[error("prediction for unknown image `{0}`")]
    UnknownPrediction(String),
    #[error("no prediction session for image `{0}`")]
    MissingPrediction(String),
    #[error("duplicate ground-truth image `{0}`")]
    DuplicateImage(String),
    #[error("risk lists differ in length: {gt} vs {pred}")]
    LengthMismatch { gt: usize, pred: usize },
    #[error("risk lists are empty")]
    EmptyInput,
    #[error("ground truth for `{image_id}` is inconsistent: {source}")]
    InconsistentTruth { image_id: String, source: SessionError },
    #[error("ground truth is not valid JSON: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthImage {
    pub image_id: String,
    pub city: String,
    pub continent: String,
    pub sequence_id: String,
    #[serde(default)]
    pub answers: BTreeMap<String, BinaryAnswer>,
}

/// Human annotations plus per-image metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSet {
    pub catalog_version: String,
    pub images: Vec<GroundTruthImage>,
}

impl GroundTruthSet {
    pub fn from_json(source: &str) -> Result<Self, EvalError> {
        serde_json::from_str(source).map_err(|e| EvalError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ground truth serializes")
    }

    pub fn session(&self, image: &GroundTruthImage) -> QuerySession {
        QuerySession {
            image_id: image.image_id.clone(),
            catalog_version: self.catalog_version.clone(),
            answers: image.answers.clone(),
        }
    }

    pub fn sessions(&self) -> Vec<QuerySession> {
        self.images.iter().map(|i| self.session(i)).collect()
    }

    pub fn validate(&self, catalog: &QuestionCatalog) -> Result<(), EvalError> {
        if self.catalog_version != catalog.version() {
            return Err(EvalError::CatalogMismatch {
                left: self.catalog_version.clone(),
                right: catalog.version().to_string(),
            });
        }
        let mut seen = HashSet::new();
        for image in &self.images {
            if !seen.insert(image.image_id.as_str()) {
                return Err(EvalError::DuplicateImage(image.image_id.clone()));
            }
            self.session(image)
                .validate(catalog)
                .map_err(|source| EvalError::InconsistentTruth {
                    image_id: image.image_id.clone(),
                    source,
                })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedPair {
    pub question_id: String,
    pub truth: BinaryAnswer,
    pub predicted: BinaryAnswer,
}

/// Pairs compared for one image, in catalog order.
pub fn align_pairs(
    truth: &QuerySession,
    predicted: &QuerySession,
    catalog: &QuestionCatalog,
) -> Result<Vec<AlignedPair>, EvalError> {
    for s in [truth, predicted] {
        if s.catalog_version != catalog.version() {
            return Err(EvalError::CatalogMismatch {
                left: s.catalog_version.clone(),
                right: catalog.version().to_string(),
            });
        }
    }
    Ok(catalog
        .questions()
        .iter()
        .filter(|q| q.level == 1 || truth.answer(&q.id).is_some_and(BinaryAnswer::is_answered))
        .map(|q| AlignedPair {
            question_id: q.id.clone(),
            truth: truth.answer(&q.id).unwrap_or_default(),
            predicted: predicted.answer(&q.id).unwrap_or_default(),
        })
        .collect())
}

/// How an Unanswered prediction is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnansweredPolicy {
    /// A skipped question is a "No" prediction.
    #[default]
    Negative,
    /// Skipped questions are left out of the counts.
    Exclude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn record(&mut self, truth: BinaryAnswer, predicted: BinaryAnswer, policy: UnansweredPolicy) {
        let predicted_yes = match predicted {
            BinaryAnswer::Yes => true,
            BinaryAnswer::No => false,
            BinaryAnswer::Unanswered => match policy {
                UnansweredPolicy::Negative => false,
                UnansweredPolicy::Exclude => return,
            },
        };
        match (truth, predicted_yes) {
            (BinaryAnswer::Yes, true) => self.tp += 1,
            (BinaryAnswer::Yes, false) => self.fn_ += 1,
            (BinaryAnswer::No, true) => self.fp += 1,
            (BinaryAnswer::No, false) => self.tn += 1,
            (BinaryAnswer::Unanswered, _) => {}
        }
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

pub fn confusion(pairs: &[AlignedPair]) -> ConfusionCounts {
    confusion_with(pairs, UnansweredPolicy::default())
}

pub fn confusion_with(pairs: &[AlignedPair], policy: UnansweredPolicy) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for p in pairs {
        c.record(p.truth, p.predicted, policy);
    }
    c
}

fn round4<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64((x * 1e4).round() / 1e4),
        None => s.serialize_none(),
    }
}

fn round4_plain<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64((v * 1e4).round() / 1e4)
}

/// `None` marks a metric whose denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSet {
    #[serde(serialize_with = "round4")]
    pub accuracy: Option<f64>,
    #[serde(serialize_with = "round4")]
    pub precision: Option<f64>,
    #[serde(serialize_with = "round4")]
    pub recall: Option<f64>,
    #[serde(serialize_with = "round4")]
    pub specificity: Option<f64>,
    #[serde(serialize_with = "round4")]
    pub f1: Option<f64>,
}

impl MetricSet {
    pub fn values(&self) -> [Option<f64>; 5] {
        [self.accuracy, self.precision, self.recall, self.specificity, self.f1]
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: &ConfusionCounts) -> MetricSet {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    MetricSet {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision,
        recall,
        specificity: ratio(c.tn, c.tn + c.fp),
        f1,
    }
}

/// Mean absolute difference of aligned risk values.
pub fn mae_risk(gt: &[f64], pred: &[f64]) -> Result<f64, EvalError> {
    if gt.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            gt: gt.len(),
            pred: pred.len(),
        });
    }
    if gt.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let sum: f64 = gt.iter().zip(pred).map(|(g, p)| (g - p).abs()).sum();
    Ok(sum / gt.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricBlock {
    pub counts: ConfusionCounts,
    pub metrics: MetricSet,
}

impl MetricBlock {
    fn from_counts(counts: ConfusionCounts) -> Self {
        Self {
            counts,
            metrics: metrics(&counts),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegionBlock {
    pub n_images: usize,
    pub counts: ConfusionCounts,
    pub metrics: MetricSet,
    #[serde(serialize_with = "round4_plain")]
    pub mae_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub catalog_version: String,
    pub unanswered_policy: UnansweredPolicy,
    pub n_images: usize,
    pub n_questions_evaluated: u64,
    pub overall: MetricBlock,
    #[serde(serialize_with = "round4_plain")]
    pub mae_risk: f64,
    pub per_category: BTreeMap<HazardCategory, MetricBlock>,
    pub per_continent: BTreeMap<String, RegionBlock>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    pub unanswered: UnansweredPolicy,
}

struct ImageOutcome {
    continent: String,
    counts: ConfusionCounts,
    per_category: BTreeMap<HazardCategory, ConfusionCounts>,
    gt_risk: f64,
    pred_risk: f64,
}

pub fn build_report(
    gt: &GroundTruthSet,
    preds: &BTreeMap<String, QuerySession>,
    catalog: &QuestionCatalog,
    weights: &WeightConfig,
    options: EvalOptions,
) -> Result<EvalReport, EvalError> {
    if gt.images.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }
    gt.validate(catalog)?;
    let known: HashSet<&str> = gt.images.iter().map(|i| i.image_id.as_str()).collect();
    if let Some(stray) = preds.keys().find(|id| !known.contains(id.as_str())) {
        return Err(EvalError::UnknownPrediction(stray.clone()));
    }

    let outcomes = gt
        .images
        .iter()
        .map(|image| {
            let truth = gt.session(image);
            let pred = preds
                .get(&image.image_id)
                .ok_or_else(|| EvalError::MissingPrediction(image.image_id.clone()))?;
            let pairs = align_pairs(&truth, pred, catalog)?;
            let mut per_category = BTreeMap::new();
            for category in HazardCategory::ALL {
                let root = &catalog.level_one(category).id;
                let level_one: Vec<_> = pairs.iter().filter(|p| &p.question_id == root).cloned().collect();
                per_category.insert(category, confusion_with(&level_one, options.unanswered));
            }
            Ok(ImageOutcome {
                continent: image.continent.clone(),
                counts: confusion_with(&pairs, options.unanswered),
                per_category,
                gt_risk: image_risk(&CategoryAnswers::from_session(&truth, catalog), weights).value(),
                pred_risk: image_risk(&CategoryAnswers::from_session(pred, catalog), weights).value(),
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;

    let overall = outcomes
        .iter()
        .fold(ConfusionCounts::default(), |acc, o| acc + o.counts);
    let mut per_category: BTreeMap<HazardCategory, ConfusionCounts> = BTreeMap::new();
    for o in &outcomes {
        for (c, counts) in &o.per_category {
            *per_category.entry(*c).or_default() += *counts;
        }
    }

    let mut regions: BTreeMap<String, Vec<&ImageOutcome>> = BTreeMap::new();
    for o in &outcomes {
        regions.entry(o.continent.clone()).or_default().push(o);
    }
    let per_continent = regions
        .into_iter()
        .map(|(name, group)| {
            let counts = group.iter().fold(ConfusionCounts::default(), |acc, o| acc + o.counts);
            let gt: Vec<f64> = group.iter().map(|o| o.gt_risk).collect();
            let pred: Vec<f64> = group.iter().map(|o| o.pred_risk).collect();
            let block = RegionBlock {
                n_images: group.len(),
                counts,
                metrics: metrics(&counts),
                mae_risk: mae_risk(&gt, &pred)?,
            };
            Ok((name, block))
        })
        .collect::<Result<BTreeMap<_, _>, EvalError>>()?;

    let gt_risks: Vec<f64> = outcomes.iter().map(|o| o.gt_risk).collect();
    let pred_risks: Vec<f64> = outcomes.iter().map(|o| o.pred_risk).collect();

    Ok(EvalReport {
        catalog_version: catalog.version().to_string(),
        unanswered_policy: options.unanswered,
        n_images: outcomes.len(),
        n_questions_evaluated: overall.total(),
        overall: MetricBlock::from_counts(overall),
        mae_risk: mae_risk(&gt_risks, &pred_risks)?,
        per_category: per_category
            .into_iter()
            .map(|(c, counts)| (c, MetricBlock::from_counts(counts)))
            .collect(),
        per_continent,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
}

fn metric_row(out: &mut String, name: &str, m: &MetricSet, mae: Option<f64>) {
    let _ = write!(
        out,
        "{name:<14}{:>7}{:>7}{:>7}{:>7}{:>7}",
        cell(m.accuracy),
        cell(m.f1),
        cell(m.precision),
        cell(m.recall),
        cell(m.specificity)
    );
    if let Some(mae) = mae {
        let _ = write!(out, "{:>8}", format!("{mae:.2}"));
    }
    out.push('\n');
}

/// Plain-text rendering: overall, by continent, by hazard category.
pub fn render_tables(report: &EvalReport) -> String {
    let mut out = String::new();
    let header = |out: &mut String, first: &str, mae: bool| {
        let _ = write!(
            out,
            "{first:<14}{:>7}{:>7}{:>7}{:>7}{:>7}",
            "Acc.", "F1", "Prec.", "Rec.", "Spec."
        );
        if mae {
            let _ = write!(out, "{:>8}", "MAE_R");
        }
        out.push('\n');
    };

    let _ = writeln!(
        out,
        "Overall ({} images, {} questions evaluated)",
        report.n_images, report.n_questions_evaluated
    );
    header(&mut out, "", true);
    metric_row(&mut out, "all", &report.overall.metrics, Some(report.mae_risk));

    out.push_str("\nBy continent\n");
    header(&mut out, "Region", true);
    for (name, block) in &report.per_continent {
        metric_row(&mut out, name, &block.metrics, Some(block.mae_risk));
    }

    out.push_str("\nBy hazard category (Level-1)\n");
    header(&mut out, "Hazard", false);
    for (category, block) in &report.per_category {
        metric_row(&mut out, category.label(), &block.metrics, None);
    }
    out
}
