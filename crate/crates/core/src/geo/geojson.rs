//! GeoJSON rendering of a [`RiskEventMap`].
//!
//! Output layout: one LineString per street segment (sorted by id), one
//! LineString per trajectory, then one Point per keyframe. Property keys are
//! emitted in a fixed order so identical maps render to identical bytes.

use serde::{Deserialize, Serialize};

use super::{GeoError, GpsPoint, RiskEventMap};
use crate::risk::RiskCategory;

pub const TRAJECTORY_COLOR: &str = "#1f6feb";
pub const TRAJECTORY_DASH: &str = "4 4";

#[derive(Serialize)]
struct FeatureCollection<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    features: Vec<Feature<'a>>,
}

#[derive(Serialize)]
struct Feature<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    geometry: Geometry,
    properties: Properties<'a>,
}

#[derive(Serialize)]
#[serde(tag = "type", content = "coordinates")]
enum Geometry {
    LineString(Vec<[f64; 2]>),
    Point([f64; 2]),
}

#[derive(Serialize)]
#[serde(untagged)]
enum Properties<'a> {
    Segment {
        segment_id: &'a str,
        #[serde(skip_serializing_if = "Option::is_none")]
        risk: Option<f64>,
        category: RiskCategory,
        stroke: &'static str,
    },
    Trajectory {
        role: &'static str,
        sequence_id: &'a str,
        stroke: &'static str,
        dash: &'static str,
    },
    Keyframe {
        role: &'static str,
        image_id: &'a str,
        #[serde(skip_serializing_if = "Option::is_none")]
        risk: Option<f64>,
    },
}

fn position(p: GpsPoint) -> [f64; 2] {
    [p.lon, p.lat]
}

fn feature(geometry: Geometry, properties: Properties<'_>) -> Feature<'_> {
    Feature {
        kind: "Feature",
        geometry,
        properties,
    }
}

pub fn render_geojson(map: &RiskEventMap) -> String {
    let mut features = Vec::with_capacity(map.segments.len() + map.trajectories.len() + map.markers.len());

    for s in &map.segments {
        features.push(feature(
            Geometry::LineString(s.endpoints.iter().copied().map(position).collect()),
            Properties::Segment {
                segment_id: &s.segment_id,
                risk: s.risk.as_ref().map(|r| r.value.value()),
                category: s.category,
                stroke: s.category.color(),
            },
        ));
    }

    for t in map.trajectories.iter().filter(|t| !t.points.is_empty()) {
        let mut coords: Vec<[f64; 2]> = t.points.iter().copied().map(position).collect();
        // A LineString needs two positions; a lone keyframe repeats itself.
        if coords.len() == 1 {
            coords.push(coords[0]);
        }
        features.push(feature(
            Geometry::LineString(coords),
            Properties::Trajectory {
                role: "trajectory",
                sequence_id: &t.sequence_id,
                stroke: TRAJECTORY_COLOR,
                dash: TRAJECTORY_DASH,
            },
        ));
    }

    for m in &map.markers {
        features.push(feature(
            Geometry::Point(position(m.position)),
            Properties::Keyframe {
                role: "keyframe",
                image_id: &m.image_id,
                risk: m.risk.map(|r| r.value()),
            },
        ));
    }

    let collection = FeatureCollection {
        kind: "FeatureCollection",
        features,
    };
    let mut out = serde_json::to_string_pretty(&collection).expect("feature collection serializes");
    out.push('\n');
    out
}

/// Segment properties read back from rendered GeoJSON.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RenderedSegment {
    pub segment_id: String,
    #[serde(default)]
    pub risk: Option<f64>,
    pub category: RiskCategory,
    pub stroke: String,
}

/// Extracts the street-segment features from a rendered map.
pub fn parse_segment_features(text: &str) -> Result<Vec<RenderedSegment>, GeoError> {
    let doc: serde_json::Value = serde_json::from_str(text).map_err(|e| GeoError::GeoJson(e.to_string()))?;
    if doc.get("type").and_then(|t| t.as_str()) != Some("FeatureCollection") {
        return Err(GeoError::GeoJson("not a FeatureCollection".into()));
    }
    let features = doc
        .get("features")
        .and_then(|f| f.as_array())
        .ok_or_else(|| GeoError::GeoJson("missing features".into()))?;
    features
        .iter()
        .filter_map(|f| f.get("properties"))
        .filter(|p| p.get("segment_id").is_some())
        .map(|p| serde_json::from_value(p.clone()).map_err(|e| GeoError::GeoJson(e.to_string())))
        .collect()
}
