use super::{GpsPoint, StreetGraph, StreetSegment};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

fn wrap_degrees(delta: f64) -> f64 {
    if delta > 180.0 {
        delta - 360.0
    } else if delta < -180.0 {
        delta + 360.0
    } else {
        delta
    }
}

/// Distance in meters from `p` to segment `s`, measured on an
/// equirectangular plane centred on the segment midpoint.
pub fn point_segment_distance(p: GpsPoint, s: &StreetSegment) -> f64 {
    let [a, b] = s.endpoints;
    let lat_mid = (a.lat + b.lat) / 2.0;
    let lon_mid = a.lon + wrap_degrees(b.lon - a.lon) / 2.0;
    let cos_mid = lat_mid.to_radians().cos();
    let project = |q: GpsPoint| {
        (
            wrap_degrees(q.lon - lon_mid).to_radians() * cos_mid * EARTH_RADIUS_M,
            (q.lat - lat_mid).to_radians() * EARTH_RADIUS_M,
        )
    };
    let (px, py) = project(p);
    let (ax, ay) = project(a);
    let (bx, by) = project(b);

    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Haversine distance in meters.
pub fn great_circle_distance(a: GpsPoint, b: GpsPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = wrap_degrees(b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Nearest segment within `max_radius` meters. Equal distances resolve to the
/// lexicographically smallest segment id.
pub fn match_to_segment(p: GpsPoint, graph: &StreetGraph, max_radius: f64) -> Option<&str> {
    graph
        .segments
        .iter()
        .map(|s| (point_segment_distance(p, s), s.segment_id.as_str()))
        .filter(|(d, _)| *d <= max_radius)
        .min_by(|(da, ia), (db, ib)| da.total_cmp(db).then_with(|| ia.cmp(ib)))
        .map(|(_, id)| id)
}
