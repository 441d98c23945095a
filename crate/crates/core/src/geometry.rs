//! Polylines in normalized image coordinates and the contour operations the
//! snake iteration is built from.
//!
//! Coordinates are (x, y) with x rightward and y downward, both in [0,1].
//! Polylines are open: the endpoints are never implicitly joined.

use crate::error::{Error, Result};
use crate::tensor::NdArray;

/// An ordered open sequence of at least two vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    vertices: Vec<[f64; 2]>,
}

impl Polyline {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(Error::invalid(format!(
                "polyline needs at least 2 vertices, got {}",
                vertices.len()
            )));
        }
        Ok(Polyline { vertices })
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    /// The vertices as a [V,2] array.
    pub fn to_array(&self) -> NdArray {
        let mut data = Vec::with_capacity(self.vertices.len() * 2);
        for v in &self.vertices {
            data.extend_from_slice(v);
        }
        NdArray::from_vec(&[self.vertices.len(), 2], data).expect("length matches by construction")
    }

    /// Reads a [V,2] array back into a polyline.
    pub fn from_array(a: &NdArray) -> Result<Self> {
        if a.rank() != 2 || a.shape()[1] != 2 {
            return Err(Error::shape(format!(
                "expected a [V,2] array, got {:?}",
                a.shape()
            )));
        }
        let verts = a
            .data()
            .chunks_exact(2)
            .map(|c| [c[0], c[1]])
            .collect::<Vec<_>>();
        Polyline::new(verts)
    }

    /// Sum of segment lengths.
    pub fn arc_length(&self) -> f64 {
        self.vertices
            .windows(2)
            .map(|w| dist(w[0], w[1]))
            .sum()
    }

    pub fn reversed(&self) -> Polyline {
        let mut v = self.vertices.clone();
        v.reverse();
        Polyline { vertices: v }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Polyline {
        Polyline {
            vertices: self.vertices.iter().map(|p| [p[0] + dx, p[1] + dy]).collect(),
        }
    }

    /// Maps normalized [0,1] coordinates onto the pixel grid of an HxW image,
    /// where the corners land on pixel centers (0,0) and (W-1,H-1).
    pub fn to_pixel_coords(&self, h: usize, w: usize) -> Polyline {
        let sx = (w.saturating_sub(1)) as f64;
        let sy = (h.saturating_sub(1)) as f64;
        Polyline {
            vertices: self.vertices.iter().map(|p| [p[0] * sx, p[1] * sy]).collect(),
        }
    }

    /// Reverses vertex order if needed so the polyline runs top to bottom
    /// (first vertex has the smaller y).
    pub fn oriented_top_to_bottom(&self) -> Polyline {
        let first = self.vertices.first().expect("non-empty")[1];
        let last = self.vertices.last().expect("non-empty")[1];
        if first > last {
            self.reversed()
        } else {
            self.clone()
        }
    }
}

/// Per-vertex displacement vectors, aligned with a polyline of equal length.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetField {
    pub offsets: Vec<[f64; 2]>,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Redistributes a polyline to `v` vertices equally spaced by arc length.
/// The first and last output vertices coincide with the input endpoints.
pub fn resample(line: &Polyline, v: usize) -> Result<Polyline> {
    if v < 2 {
        return Err(Error::invalid(format!("resample target {v} < 2 vertices")));
    }
    let verts = line.vertices();
    // Cumulative arc length at each input vertex.
    let mut cum = Vec::with_capacity(verts.len());
    cum.push(0.0);
    for w in verts.windows(2) {
        let last = *cum.last().unwrap();
        cum.push(last + dist(w[0], w[1]));
    }
    let total = *cum.last().unwrap();
    if total <= 0.0 {
        return Err(Error::invalid("cannot resample a zero-length polyline"));
    }

    let mut out = Vec::with_capacity(v);
    out.push(verts[0]);
    let mut seg = 0; // index of the segment containing the current target length
    for k in 1..v - 1 {
        let target = total * k as f64 / (v - 1) as f64;
        while seg + 2 < verts.len() && cum[seg + 1] < target {
            seg += 1;
        }
        let seg_len = cum[seg + 1] - cum[seg];
        let t = if seg_len > 0.0 {
            (target - cum[seg]) / seg_len
        } else {
            0.0
        };
        let a = verts[seg];
        let b = verts[seg + 1];
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    out.push(verts[verts.len() - 1]);
    Polyline::new(out)
}

/// The starting contour: a vertical line at x = 0.5 spanning the image top to
/// bottom with `v` equally spaced vertices.
pub fn init_contour(v: usize) -> Result<Polyline> {
    if v < 2 {
        return Err(Error::invalid(format!("initial contour needs V ≥ 2, got {v}")));
    }
    let verts = (0..v)
        .map(|i| [0.5, i as f64 / (v - 1) as f64])
        .collect();
    Polyline::new(verts)
}

/// Adds an offset to each vertex, then clamps both coordinates to [0,1].
pub fn apply_offsets(line: &Polyline, offsets: &OffsetField) -> Result<Polyline> {
    if offsets.offsets.len() != line.len() {
        return Err(Error::shape(format!(
            "offset field length {} does not match polyline length {}",
            offsets.offsets.len(),
            line.len()
        )));
    }
    let verts = line
        .vertices()
        .iter()
        .zip(&offsets.offsets)
        .map(|(p, d)| {
            [
                (p[0] + d[0]).clamp(0.0, 1.0),
                (p[1] + d[1]).clamp(0.0, 1.0),
            ]
        })
        .collect();
    Polyline::new(verts)
}
