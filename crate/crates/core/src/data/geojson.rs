//! GeoJSON LineString I/O for truth and prediction polylines.
//!
//! Coordinates are in pixel units, x rightward and y downward; normalization
//! against the image size happens in the callers.

use std::path::Path;

use serde_json::{json, Value};

use crate::error::{Error, Result};

/// A LineString geometry as a JSON value.
pub fn linestring_geometry(coords: &[[f64; 2]]) -> Value {
    json!({
        "type": "LineString",
        "coordinates": coords.iter().map(|c| json!([c[0], c[1]])).collect::<Vec<_>>(),
    })
}

/// Wraps a LineString in a Feature carrying the given properties.
pub fn linestring_feature(coords: &[[f64; 2]], properties: Value) -> Value {
    json!({
        "type": "Feature",
        "properties": properties,
        "geometry": linestring_geometry(coords),
    })
}

/// Writes a single LineString as a GeoJSON Feature.
pub fn write_linestring(path: &Path, coords: &[[f64; 2]]) -> Result<()> {
    let feature = linestring_feature(coords, json!({}));
    std::fs::write(path, serde_json::to_string_pretty(&feature)? + "\n")?;
    Ok(())
}

/// Writes a FeatureCollection.
pub fn write_feature_collection(path: &Path, features: Vec<Value>) -> Result<()> {
    let fc = json!({ "type": "FeatureCollection", "features": features });
    std::fs::write(path, serde_json::to_string_pretty(&fc)? + "\n")?;
    Ok(())
}

/// Reads one LineString from a GeoJSON file. Accepts a bare geometry, a
/// Feature, or a FeatureCollection containing exactly one LineString.
pub fn read_linestring(path: &Path) -> Result<Vec<[f64; 2]>> {
    let raw = std::fs::read_to_string(path)?;
    let value: Value = serde_json::from_str(&raw)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let geom = find_linestring(&value).ok_or_else(|| {
        Error::parse(
            path.display().to_string(),
            "no LineString geometry found".to_string(),
        )
    })?;
    let coords = geom
        .get("coordinates")
        .and_then(Value::as_array)
        .ok_or_else(|| {
            Error::parse(
                path.display().to_string(),
                "LineString has no coordinate array".to_string(),
            )
        })?;
    let mut out = Vec::with_capacity(coords.len());
    for c in coords {
        let pair = c.as_array().filter(|a| a.len() >= 2).ok_or_else(|| {
            Error::parse(
                path.display().to_string(),
                format!("malformed coordinate {c}"),
            )
        })?;
        let x = pair[0].as_f64();
        let y = pair[1].as_f64();
        match (x, y) {
            (Some(x), Some(y)) => out.push([x, y]),
            _ => {
                return Err(Error::parse(
                    path.display().to_string(),
                    format!("non-numeric coordinate {c}"),
                ))
            }
        }
    }
    if out.len() < 2 {
        return Err(Error::parse(
            path.display().to_string(),
            format!("LineString needs at least 2 points, found {}", out.len()),
        ));
    }
    Ok(out)
}

fn find_linestring(value: &Value) -> Option<&Value> {
    match value.get("type").and_then(Value::as_str) {
        Some("LineString") => Some(value),
        Some("Feature") => value.get("geometry").and_then(find_linestring),
        Some("FeatureCollection") => {
            let features = value.get("features")?.as_array()?;
            let mut found = None;
            for f in features {
                if let Some(g) = find_linestring(f) {
                    if found.is_some() {
                        return None;
                    }
                    found = Some(g);
                }
            }
            found
        }
        _ => None,
    }
}
