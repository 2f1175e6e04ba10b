use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::EmbeddingStore;
use super::{match_to_segment, GeoError, GpsPoint, Keyframe, StreetGraph};
use crate::catalog::{BinaryAnswer, QuerySession, QuestionCatalog};
use crate::risk::{
    image_risk, segment_risk, CategoryAnswers, RiskCategory, RiskScore, SegmentRisk, Thresholds, WeightConfig,
};

pub const DEFAULT_MATCH_RADIUS_M: f64 = 25.0;

#[derive(Debug, Clone, PartialEq)]
pub struct MapConfig {
    pub weights: WeightConfig,
    pub thresholds: Thresholds,
    pub max_radius: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            weights: WeightConfig::default(),
            thresholds: Thresholds::default(),
            max_radius: DEFAULT_MATCH_RADIUS_M,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub question_id: String,
    pub answer: BinaryAnswer,
}

/// A georeferenced observation in the event layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventNode {
    pub image_id: String,
    pub sequence_id: String,
    pub timestamp: f64,
    pub position: GpsPoint,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segment_id: Option<String>,
    pub labels: Vec<Label>,
    pub risk: RiskScore,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappedSegment {
    pub segment_id: String,
    pub endpoints: [GpsPoint; 2],
    pub risk: Option<SegmentRisk>,
    pub category: RiskCategory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub sequence_id: String,
    pub points: Vec<GpsPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    pub image_id: String,
    pub position: GpsPoint,
    pub risk: Option<RiskScore>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RiskEventMap {
    /// Every graph segment, sorted by id.
    pub segments: Vec<MappedSegment>,
    /// One time-ordered track per sequence, sorted by sequence id.
    pub trajectories: Vec<Trajectory>,
    /// Keyframe capture locations in trajectory order.
    pub markers: Vec<Marker>,
    pub events: Vec<EventNode>,
    pub unobserved: Vec<String>,
    /// Keyframes with an observation that matched no segment.
    pub unmatched: Vec<String>,
}

impl RiskEventMap {
    pub fn segment(&self, id: &str) -> Option<&MappedSegment> {
        self.segments.iter().find(|s| s.segment_id == id)
    }

    pub fn category_counts(&self) -> BTreeMap<RiskCategory, usize> {
        let mut counts: BTreeMap<RiskCategory, usize> = RiskCategory::OBSERVED
            .into_iter()
            .chain([RiskCategory::Unobserved])
            .map(|c| (c, 0))
            .collect();
        for s in &self.segments {
            *counts.entry(s.category).or_default() += 1;
        }
        counts
    }

    /// Points each event at its image's embedding, when the store has one.
    pub fn attach_embeddings(&mut self, store: &EmbeddingStore) {
        for event in &mut self.events {
            event.embedding_ref = store.contains(&event.image_id).then(|| event.image_id.clone());
        }
    }
}

struct Observation {
    image_id: String,
    risk: RiskScore,
    labels: Vec<Label>,
}

fn ordered_keyframes(keyframes: &[Keyframe]) -> Result<Vec<&Keyframe>, GeoError> {
    let mut seen = HashSet::new();
    for k in keyframes {
        if !seen.insert(k.image_id.as_str()) {
            return Err(GeoError::DuplicateImage(k.image_id.clone()));
        }
    }
    let mut ordered: Vec<&Keyframe> = keyframes.iter().collect();
    ordered.sort_by(|a, b| {
        a.sequence_id
            .cmp(&b.sequence_id)
            .then_with(|| a.timestamp.total_cmp(&b.timestamp))
    });
    Ok(ordered)
}

fn assemble(
    keyframes: &[Keyframe],
    observations: Vec<Observation>,
    graph: &StreetGraph,
    config: &MapConfig,
) -> Result<RiskEventMap, GeoError> {
    let ordered = ordered_keyframes(keyframes)?;
    let known: HashSet<&str> = ordered.iter().map(|k| k.image_id.as_str()).collect();
    let mut by_image: HashMap<String, Observation> = HashMap::new();
    for obs in observations {
        if !known.contains(obs.image_id.as_str()) {
            return Err(GeoError::UnknownImage(obs.image_id));
        }
        if by_image.contains_key(&obs.image_id) {
            return Err(GeoError::DuplicateImage(obs.image_id));
        }
        by_image.insert(obs.image_id.clone(), obs);
    }

    let mut map = RiskEventMap::default();
    let mut contributions: BTreeMap<String, Vec<(String, RiskScore)>> = BTreeMap::new();
    let mut tracks: BTreeMap<String, Vec<GpsPoint>> = BTreeMap::new();

    for k in &ordered {
        tracks.entry(k.sequence_id.clone()).or_default().push(k.position);
        let obs = by_image.remove(&k.image_id);
        map.markers.push(Marker {
            image_id: k.image_id.clone(),
            position: k.position,
            risk: obs.as_ref().map(|o| o.risk),
        });
        let Some(obs) = obs else { continue };
        let segment_id = match_to_segment(k.position, graph, config.max_radius).map(str::to_string);
        match &segment_id {
            Some(id) => contributions
                .entry(id.clone())
                .or_default()
                .push((obs.image_id.clone(), obs.risk)),
            None => map.unmatched.push(obs.image_id.clone()),
        }
        map.events.push(EventNode {
            image_id: obs.image_id,
            sequence_id: k.sequence_id.clone(),
            timestamp: k.timestamp,
            position: k.position,
            segment_id,
            labels: obs.labels,
            risk: obs.risk,
            embedding_ref: None,
        });
    }

    map.trajectories = tracks
        .into_iter()
        .map(|(sequence_id, points)| Trajectory { sequence_id, points })
        .collect();

    let mut segments: Vec<_> = graph.segments.iter().collect();
    segments.sort_by(|a, b| a.segment_id.cmp(&b.segment_id));
    for s in segments {
        let mapped = match contributions.get(&s.segment_id) {
            Some(images) => {
                let risk = segment_risk(&s.segment_id, images).expect("non-empty contributions");
                MappedSegment {
                    segment_id: s.segment_id.clone(),
                    endpoints: s.endpoints,
                    category: config.thresholds.classify(risk.value),
                    risk: Some(risk),
                }
            }
            None => {
                map.unobserved.push(s.segment_id.clone());
                MappedSegment {
                    segment_id: s.segment_id.clone(),
                    endpoints: s.endpoints,
                    risk: None,
                    category: RiskCategory::Unobserved,
                }
            }
        };
        map.segments.push(mapped);
    }
    Ok(map)
}

/// Scores every session, matches its keyframe to the nearest segment, and
/// keeps the worst image risk per segment. Keyframes without a session or
/// without a nearby segment still appear on the trajectory.
pub fn build_event_map(
    keyframes: &[Keyframe],
    sessions: &[QuerySession],
    catalog: &QuestionCatalog,
    graph: &StreetGraph,
    config: &MapConfig,
) -> Result<RiskEventMap, GeoError> {
    let observations = sessions
        .iter()
        .map(|s| {
            s.validate(catalog)?;
            Ok(Observation {
                image_id: s.image_id.clone(),
                risk: image_risk(&CategoryAnswers::from_session(s, catalog), &config.weights),
                labels: s
                    .answered_labels(catalog)
                    .into_iter()
                    .map(|(question_id, answer)| Label { question_id, answer })
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>, GeoError>>()?;
    assemble(keyframes, observations, graph, config)
}

/// Same as [`build_event_map`] from precomputed image risks; events carry
/// no labels.
pub fn build_event_map_from_risks(
    keyframes: &[Keyframe],
    risks: &BTreeMap<String, RiskScore>,
    graph: &StreetGraph,
    config: &MapConfig,
) -> Result<RiskEventMap, GeoError> {
    let observations = risks
        .iter()
        .map(|(image_id, &risk)| Observation {
            image_id: image_id.clone(),
            risk,
            labels: Vec::new(),
        })
        .collect();
    assemble(keyframes, observations, graph, config)
}
