use std::collections::{BTreeMap, HashMap};

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};

use super::{GeoError, GpsPoint};

/// `highway=*` values that produce segments.
pub const WALKABLE_HIGHWAYS: [&str; 12] = [
    "footway",
    "path",
    "pedestrian",
    "residential",
    "living_street",
    "primary",
    "secondary",
    "tertiary",
    "unclassified",
    "service",
    "steps",
    "crossing",
];

/// One node-pair edge of an OSM way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreetSegment {
    /// `"{way_id}:{pair_index}"`
    pub segment_id: String,
    pub way_id: i64,
    pub nodes: [i64; 2],
    pub endpoints: [GpsPoint; 2],
}

impl StreetSegment {
    pub fn id_for(way_id: i64, pair_index: usize) -> String {
        format!("{way_id}:{pair_index}")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreetGraph {
    pub nodes: BTreeMap<i64, GpsPoint>,
    pub segments: Vec<StreetSegment>,
}

impl StreetGraph {
    pub fn segment(&self, id: &str) -> Option<&StreetSegment> {
        self.segments.iter().find(|s| s.segment_id == id)
    }
}

#[derive(Default)]
struct PendingWay {
    id: i64,
    refs: Vec<i64>,
    highway: Option<String>,
}

fn attrs(e: &BytesStart<'_>) -> Result<HashMap<String, String>, GeoError> {
    e.attributes()
        .map(|a| {
            let a = a.map_err(|err| GeoError::Xml(err.to_string()))?;
            let key = String::from_utf8_lossy(a.key.as_ref()).into_owned();
            let value = a
                .unescape_value()
                .map_err(|err| GeoError::Xml(err.to_string()))?
                .into_owned();
            Ok((key, value))
        })
        .collect()
}

fn required<T: std::str::FromStr>(map: &HashMap<String, String>, key: &str, element: &str) -> Result<T, GeoError> {
    map.get(key)
        .ok_or_else(|| GeoError::Xml(format!("<{element}> without `{key}`")))?
        .parse()
        .map_err(|_| GeoError::Xml(format!("<{element}> has invalid `{key}`")))
}

/// Parses an OSM XML extract. Every way tagged with a walkable highway value
/// yields one segment per consecutive node pair; pairs whose endpoints
/// coincide are skipped.
pub fn parse_osm(document: &str) -> Result<StreetGraph, GeoError> {
    let mut reader = Reader::from_str(document);
    reader.config_mut().trim_text(true);

    let mut nodes = BTreeMap::new();
    let mut ways: Vec<PendingWay> = Vec::new();
    let mut current: Option<PendingWay> = None;
    let mut depth = 0usize;
    let mut saw_root = false;

    loop {
        let event = reader
            .read_event()
            .map_err(|e| GeoError::Xml(format!("at byte {}: {e}", reader.buffer_position())))?;
        let (element, is_empty) = match &event {
            Event::Start(e) => (Some(e), false),
            Event::Empty(e) => (Some(e), true),
            Event::End(e) => {
                depth = depth.saturating_sub(1);
                if e.name().as_ref() == b"way" {
                    ways.extend(current.take());
                }
                continue;
            }
            Event::Eof => break,
            _ => continue,
        };
        let Some(e) = element else { continue };

        if depth == 0 {
            if e.name().as_ref() != b"osm" {
                return Err(GeoError::Xml(format!(
                    "root element is <{}>, expected <osm>",
                    String::from_utf8_lossy(e.name().as_ref())
                )));
            }
            saw_root = true;
        }
        if !is_empty {
            depth += 1;
        }

        match e.name().as_ref() {
            b"node" => {
                let a = attrs(e)?;
                let id: i64 = required(&a, "id", "node")?;
                let point = GpsPoint::new(required(&a, "lat", "node")?, required(&a, "lon", "node")?)?;
                nodes.insert(id, point);
            }
            b"way" => {
                let a = attrs(e)?;
                let way = PendingWay {
                    id: required(&a, "id", "way")?,
                    ..Default::default()
                };
                if is_empty {
                    ways.push(way);
                } else {
                    current = Some(way);
                }
            }
            b"nd" => {
                if let Some(way) = current.as_mut() {
                    let a = attrs(e)?;
                    way.refs.push(required(&a, "ref", "nd")?);
                }
            }
            b"tag" => {
                if let Some(way) = current.as_mut() {
                    let a = attrs(e)?;
                    if a.get("k").map(String::as_str) == Some("highway") {
                        way.highway = a.get("v").cloned();
                    }
                }
            }
            _ => {}
        }
    }

    if !saw_root {
        return Err(GeoError::Xml("document has no <osm> element".into()));
    }
    if depth != 0 {
        return Err(GeoError::Xml("unexpected end of document".into()));
    }

    let mut segments = Vec::new();
    for way in &ways {
        for &node in &way.refs {
            if !nodes.contains_key(&node) {
                return Err(GeoError::UndefinedNode { way: way.id, node });
            }
        }
        let walkable = way.highway.as_deref().is_some_and(|h| WALKABLE_HIGHWAYS.contains(&h));
        if !walkable {
            continue;
        }
        for (index, pair) in way.refs.windows(2).enumerate() {
            let (a, b) = (nodes[&pair[0]], nodes[&pair[1]]);
            if a == b {
                continue;
            }
            segments.push(StreetSegment {
                segment_id: StreetSegment::id_for(way.id, index),
                way_id: way.id,
                nodes: [pair[0], pair[1]],
                endpoints: [a, b],
            });
        }
    }

    Ok(StreetGraph { nodes, segments })
}
