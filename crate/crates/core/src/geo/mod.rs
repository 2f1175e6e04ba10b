//! Street graph, map matching, embedding store, and the risk event map.

mod distance;
mod embedding;
mod event_map;
mod geojson;
mod osm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use distance::{great_circle_distance, match_to_segment, point_segment_distance, EARTH_RADIUS_M};
pub use embedding::{EmbeddingEntry, EmbeddingStore};
pub use event_map::{
    build_event_map, build_event_map_from_risks, EventNode, Label, MapConfig, MappedSegment, Marker, RiskEventMap,
    Trajectory, DEFAULT_MATCH_RADIUS_M,
};
pub use geojson::{parse_segment_features, render_geojson, RenderedSegment, TRAJECTORY_COLOR, TRAJECTORY_DASH};
pub use osm::{parse_osm, StreetGraph, StreetSegment, WALKABLE_HIGHWAYS};

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("latitude {lat} / longitude {lon} out of range")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("malformed OSM XML: {0}")]
    Xml(String),
    #[error("way {way} references undefined node {node}")]
    UndefinedNode { way: i64, node: i64 },
    #[error("duplicate image id `{0}`")]
    DuplicateImage(String),
    #[error("observation for `{0}` has no matching keyframe")]
    UnknownImage(String),
    #[error("radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("embedding for model `{model_id}` has length {got}, expected {expected}")]
    DimensionMismatch {
        model_id: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid GeoJSON: {0}")]
    GeoJson(String),
    #[error("embedding store I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Session(#[from] crate::catalog::SessionError),
}

/// WGS-84 position in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GpsPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon) {
            Ok(Self { lat, lon })
        } else {
            Err(GeoError::InvalidCoordinate { lat, lon })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub image_id: String,
    pub position: GpsPoint,
    pub timestamp: f64,
    pub sequence_id: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinates_are_range_checked() {
        assert!(GpsPoint::new(41.39, 2.17).is_ok());
        assert!(GpsPoint::new(-90.0, 180.0).is_ok());
        assert!(GpsPoint::new(90.1, 0.0).is_err());
        assert!(GpsPoint::new(0.0, -180.5).is_err());
        assert!(GpsPoint::new(f64::NAN, 0.0).is_err());
    }
}
