// Map matching and the GeoJSON risk event map.
//
// One keyframe with risk 0.66 lands on the first of two street segments;
// the other segment stays gray.

use std::collections::BTreeMap;
use std::error::Error;

use riskmap::geo::{
    build_event_map_from_risks, match_to_segment, parse_osm, render_geojson, GpsPoint, Keyframe, MapConfig,
};
use riskmap::RiskScore;

const OSM: &str = r#"<osm version="0.6">
  <node id="1" lat="41.39" lon="2.17"/>
  <node id="2" lat="41.39" lon="2.171"/>
  <node id="3" lat="41.391" lon="2.171"/>
  <way id="10"><nd ref="1"/><nd ref="2"/><tag k="highway" v="footway"/></way>
  <way id="11"><nd ref="2"/><nd ref="3"/><tag k="highway" v="footway"/></way>
  <way id="12"><nd ref="1"/><nd ref="3"/><tag k="highway" v="motorway"/></way>
</osm>"#;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let graph = parse_osm(OSM)?;
    println!(
        "walkable segments: {:?}",
        graph.segments.iter().map(|s| &s.segment_id).collect::<Vec<_>>()
    );

    let position = GpsPoint::new(41.39001, 2.1705)?;
    let config = MapConfig::default();
    println!(
        "keyframe matches {:?} within {} m",
        match_to_segment(position, &graph, config.max_radius),
        config.max_radius
    );

    let keyframes = [Keyframe {
        image_id: "k1".into(),
        position,
        timestamp: 0.0,
        sequence_id: "s1".into(),
    }];
    let risks = BTreeMap::from([("k1".to_string(), RiskScore::new(0.66)?)]);
    let map = build_event_map_from_risks(&keyframes, &risks, &graph, &config)?;
    for s in &map.segments {
        println!("{} {:<10} {}", s.segment_id, s.category.as_str(), s.category.color());
    }
    println!("\n{}", render_geojson(&map));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
