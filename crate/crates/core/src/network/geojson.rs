//! GeoJSON network loading and export.
//!
//! LineStrings become edges (vertices merged at millimetre precision), `kind: "station"` and
//! `kind: "boundary"` points become stations and entry points, and one `kind: "bounds"` polygon
//! gives the district outline. Points that do not coincide with a line vertex are attached to
//! the nearest vertex by a straight connector edge.

use std::collections::BTreeMap;
use std::path::Path as FsPath;

use serde_json::{json, Value};

use super::{NetworkBuilder, NetworkError, NodeId, Point, StationId, StreetNetwork};

type Result<T> = std::result::Result<T, NetworkError>;

fn bad(msg: impl Into<String>) -> NetworkError {
    NetworkError::GeoJson(msg.into())
}

fn key(p: Point) -> (i64, i64) {
    ((p.x * 1e3).round() as i64, (p.y * 1e3).round() as i64)
}

struct Loader {
    builder: NetworkBuilder,
    index: BTreeMap<(i64, i64), NodeId>,
}

impl Loader {
    fn vertex(&mut self, p: Point) -> NodeId {
        if let Some(&id) = self.index.get(&key(p)) {
            return id;
        }
        let id = self.builder.add_node(p);
        self.index.insert(key(p), id);
        id
    }

    /// Existing vertex at `p`, or a new vertex joined to the nearest one.
    fn attach(&mut self, p: Point) -> Result<NodeId> {
        if let Some(&id) = self.index.get(&key(p)) {
            return Ok(id);
        }
        let (nearest, _) = self
            .builder
            .nearest_node(p)
            .ok_or_else(|| bad("point feature found but the network has no LineStrings"))?;
        let id = self.vertex(p);
        self.builder.add_edge(id, nearest);
        Ok(id)
    }
}

fn point(v: &Value) -> Result<Point> {
    let arr = v
        .as_array()
        .ok_or_else(|| bad("coordinate is not an array"))?;
    if arr.len() < 2 {
        return Err(bad("coordinate needs two components"));
    }
    let x = arr[0]
        .as_f64()
        .ok_or_else(|| bad("non-numeric coordinate"))?;
    let y = arr[1]
        .as_f64()
        .ok_or_else(|| bad("non-numeric coordinate"))?;
    Ok(Point::new(x, y))
}

fn points(v: &Value) -> Result<Vec<Point>> {
    v.as_array()
        .ok_or_else(|| bad("coordinates are not an array"))?
        .iter()
        .map(point)
        .collect()
}

fn looks_like_lonlat(doc: &Value, all: &[Point]) -> bool {
    if let Some(name) = doc.pointer("/crs/properties/name").and_then(Value::as_str) {
        if name.contains("CRS84") || name.contains("4326") {
            return true;
        }
    }
    if all.is_empty() {
        return false;
    }
    let in_range = all.iter().all(|p| p.x.abs() <= 180.0 && p.y.abs() <= 90.0);
    let (mut min, mut max) = (all[0], all[0]);
    for p in all {
        min = Point::new(min.x.min(p.x), min.y.min(p.y));
        max = Point::new(max.x.max(p.x), max.y.max(p.y));
    }
    // A district measured in meters spans hundreds of units; one measured in degrees spans < 1.
    in_range && (max.x - min.x) < 1.0 && (max.y - min.y) < 1.0
}

pub fn parse_geojson(text: &str) -> Result<StreetNetwork> {
    let doc: Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(bad("top-level object must be a FeatureCollection"));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing features array"))?;

    let mut lines = Vec::new();
    let mut stations = Vec::new();
    let mut boundary = Vec::new();
    let mut bounds = None;
    let mut all = Vec::new();
    for (i, f) in features.iter().enumerate() {
        let geom = f
            .get("geometry")
            .ok_or_else(|| bad(format!("feature {i} has no geometry")))?;
        let props = f.get("properties").cloned().unwrap_or(Value::Null);
        let kind = props.get("kind").and_then(Value::as_str);
        let coords = geom
            .get("coordinates")
            .ok_or_else(|| bad(format!("feature {i} has no coordinates")))?;
        match geom.get("type").and_then(Value::as_str) {
            Some("LineString") => {
                let pts = points(coords)?;
                if pts.len() < 2 {
                    return Err(bad(format!("feature {i}: LineString needs two vertices")));
                }
                all.extend_from_slice(&pts);
                let length = props.get("length_m").and_then(Value::as_f64);
                lines.push((pts, length));
            }
            Some("Point") => {
                let p = point(coords)?;
                all.push(p);
                match kind {
                    Some("station") => {
                        let id =
                            props
                                .get("station_id")
                                .and_then(Value::as_u64)
                                .ok_or_else(|| {
                                    bad(format!("feature {i}: station without station_id"))
                                })?;
                        let capacity = props
                            .get("capacity")
                            .and_then(Value::as_u64)
                            .ok_or_else(|| bad(format!("feature {i}: station without capacity")))?;
                        stations.push((p, StationId(id as u32), capacity as u32));
                    }
                    Some("boundary") => boundary.push(p),
                    other => return Err(bad(format!("feature {i}: unknown point kind {other:?}"))),
                }
            }
            Some("Polygon") => {
                if kind != Some("bounds") {
                    return Err(bad(format!(
                        "feature {i}: polygon must have kind \"bounds\""
                    )));
                }
                if bounds.is_some() {
                    return Err(bad("more than one bounds polygon"));
                }
                let ring = coords
                    .as_array()
                    .and_then(|rings| rings.first())
                    .ok_or_else(|| bad(format!("feature {i}: polygon without rings")))?;
                let mut ring = points(ring)?;
                if ring.len() > 1 && ring.first() == ring.last() {
                    ring.pop();
                }
                all.extend_from_slice(&ring);
                bounds = Some(ring);
            }
            other => return Err(bad(format!("feature {i}: unsupported geometry {other:?}"))),
        }
    }
    if looks_like_lonlat(&doc, &all) {
        return Err(NetworkError::LonLatCoordinates);
    }
    let bounds = bounds.ok_or_else(|| bad("missing bounds polygon"))?;

    let mut loader = Loader {
        builder: NetworkBuilder::new(),
        index: BTreeMap::new(),
    };
    for (pts, length) in lines {
        let ids: Vec<NodeId> = pts.iter().map(|&p| loader.vertex(p)).collect();
        let geometric: Vec<f64> = pts.windows(2).map(|w| w[0].distance(w[1])).collect();
        let total: f64 = geometric.iter().sum();
        for (k, w) in ids.windows(2).enumerate() {
            match length {
                // Overrides are spread over the segments proportionally to their geometry.
                Some(l) if total > 0.0 => {
                    loader
                        .builder
                        .add_edge_with_length(w[0], w[1], l * geometric[k] / total);
                }
                _ => {
                    loader.builder.add_edge(w[0], w[1]);
                }
            }
        }
    }
    for (p, id, capacity) in stations {
        let node = loader.attach(p)?;
        loader.builder.add_station(id, node, capacity);
    }
    for p in boundary {
        let node = loader.attach(p)?;
        loader.builder.add_boundary(node);
    }
    loader.builder.bounds(bounds);
    loader.builder.build()
}

pub fn load_geojson(path: &FsPath) -> Result<StreetNetwork> {
    let text = std::fs::read_to_string(path).map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_geojson(&text)
}

/// Inverse of [`parse_geojson`] for networks whose stations and boundary points sit on vertices.
pub fn to_geojson(net: &StreetNetwork) -> Value {
    let mut features = Vec::new();
    for e in net.edges() {
        let (a, b) = (net.position(e.a), net.position(e.b));
        let mut props = serde_json::Map::new();
        if (e.length - a.distance(b)).abs() > 1e-9 {
            props.insert("length_m".into(), json!(e.length));
        }
        features.push(json!({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": [[a.x, a.y], [b.x, b.y]]},
            "properties": props,
        }));
    }
    for s in net.stations() {
        let p = net.position(s.node);
        features.push(json!({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [p.x, p.y]},
            "properties": {"kind": "station", "station_id": s.id.0, "capacity": s.capacity},
        }));
    }
    for &b in net.boundary_points() {
        let p = net.position(b);
        features.push(json!({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [p.x, p.y]},
            "properties": {"kind": "boundary"},
        }));
    }
    let mut ring: Vec<[f64; 2]> = net.bounds().iter().map(|p| [p.x, p.y]).collect();
    ring.push(ring[0]);
    features.push(json!({
        "type": "Feature",
        "geometry": {"type": "Polygon", "coordinates": [ring]},
        "properties": {"kind": "bounds"},
    }));
    json!({"type": "FeatureCollection", "features": features})
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{
      "type": "FeatureCollection",
      "features": [
        {"type": "Feature", "geometry": {"type": "LineString", "coordinates": [[0,0],[100,0],[200,0]]}, "properties": {}},
        {"type": "Feature", "geometry": {"type": "LineString", "coordinates": [[100,0],[100,100]]}, "properties": {"length_m": 150}},
        {"type": "Feature", "geometry": {"type": "Point", "coordinates": [200,0]}, "properties": {"kind": "station", "station_id": 7, "capacity": 12}},
        {"type": "Feature", "geometry": {"type": "Point", "coordinates": [100,130]}, "properties": {"kind": "station", "station_id": 3, "capacity": 20}},
        {"type": "Feature", "geometry": {"type": "Point", "coordinates": [0,0]}, "properties": {"kind": "boundary"}},
        {"type": "Feature", "geometry": {"type": "Polygon", "coordinates": [[[0,-50],[250,-50],[250,150],[0,150],[0,-50]]]}, "properties": {"kind": "bounds"}}
      ]
    }"#;

    #[test]
    fn parses_features() {
        let net = parse_geojson(SMALL).unwrap();
        // 4 line vertices + 1 attached station vertex
        assert_eq!(net.nodes().len(), 5);
        assert_eq!(net.station_ids(), vec![StationId(3), StationId(7)]);
        assert_eq!(net.boundary_points().len(), 1);
        let s3 = net.stations()[0];
        let s7 = net.stations()[1];
        assert_eq!(s3.capacity, 20);
        // 100 along the first line, 150 by override, 30 on the connector
        assert!((net.distance(s3.node, s7.node) - 280.0).abs() < 1e-9);
        assert!((net.diameter() - (250f64.hypot(200.0))).abs() < 1e-9);
    }

    #[test]
    fn rejects_lonlat() {
        let text = SMALL
            .replace(
                "[0,0],[100,0],[200,0]",
                "[2.35,48.85],[2.351,48.85],[2.352,48.85]",
            )
            .replace("[100,0],[100,100]", "[2.351,48.85],[2.351,48.851]")
            .replace("[200,0]", "[2.352,48.85]")
            .replace("[100,130]", "[2.351,48.852]")
            .replace("[0,0]", "[2.35,48.85]")
            .replace(
                "[[0,-50],[250,-50],[250,150],[0,150],[0,-50]]",
                "[[2.34,48.84],[2.36,48.84],[2.36,48.86],[2.34,48.86],[2.34,48.84]]",
            );
        assert!(matches!(
            parse_geojson(&text),
            Err(NetworkError::LonLatCoordinates)
        ));
    }

    #[test]
    fn export_round_trips() {
        let mut b = super::super::grid_builder(4, 4, 300.0);
        b.add_station(StationId(1), NodeId(5), 10)
            .add_station(StationId(2), NodeId(10), 15)
            .add_boundary(NodeId(0));
        let net = b.build().unwrap();
        let text = to_geojson(&net).to_string();
        let back = parse_geojson(&text).unwrap();
        // node numbering follows first appearance in the file, so compare by position
        assert_eq!(back.nodes().len(), net.nodes().len());
        for (a, b) in back.stations().iter().zip(net.stations()) {
            assert_eq!((a.id, a.capacity), (b.id, b.capacity));
            assert_eq!(back.position(a.node), net.position(b.node));
        }
        assert_eq!(
            back.position(back.boundary_points()[0]),
            net.position(net.boundary_points()[0])
        );
        assert_eq!(
            back.station_distance_matrix(),
            net.station_distance_matrix()
        );
    }
}
