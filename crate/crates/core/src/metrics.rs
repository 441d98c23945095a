//! Evaluation: the Polis polyline distance and Pearson correlation, plus the
//! per-scene evaluation report and its CSV form.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::Polyline;

/// Distance from a point to a segment, clamping the projection to the
/// segment's endpoints.
fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let cx = a[0] + t * ab[0] - p[0];
    let cy = a[1] + t * ab[1] - p[1];
    (cx * cx + cy * cy).sqrt()
}

/// Minimum distance from a point to any segment of a polyline.
pub fn point_polyline_distance(p: [f64; 2], line: &Polyline) -> f64 {
    line.vertices()
        .windows(2)
        .map(|w| point_segment_distance(p, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}

/// The Polis distance: the average distance of each vertex to the respective
/// other polyline, summed over both directions:
/// p(v,w) = (1/I) sum_i d(v_i, w) + (1/J) sum_j d(w_j, v).
/// `halved` applies the 1/2 factor of the original metric definition.
pub fn polis(v: &Polyline, w: &Polyline, halved: bool) -> f64 {
    let sum_v: f64 = v
        .vertices()
        .iter()
        .map(|&p| point_polyline_distance(p, w))
        .sum();
    let sum_w: f64 = w
        .vertices()
        .iter()
        .map(|&p| point_polyline_distance(p, v))
        .sum();
    let total = sum_v / v.len() as f64 + sum_w / w.len() as f64;
    if halved {
        total / 2.0
    } else {
        total
    }
}

/// Standard sample Pearson correlation. Errors when either argument has zero
/// variance, where the coefficient is undefined.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::invalid(format!(
            "pearson needs equal lengths, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::invalid("pearson needs at least 2 samples"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid(
            "pearson undefined: an argument has zero variance",
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// One evaluated scene.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub scene_id: String,
    pub polis_norm: f64,
    pub polis_px: f64,
    /// MC-dropout uncertainty score; absent for plain evaluation.
    pub uncertainty: Option<f64>,
}

/// Per-scene rows plus aggregate statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_polis_px: f64,
    pub sd_polis_px: f64,
    /// Pearson r between uncertainty and polis error, when uncertainties are
    /// present and the correlation is defined.
    pub pearson_r: Option<f64>,
}

impl EvalReport {
    /// Builds a report from rows, sorting by scene id and computing
    /// aggregates.
    pub fn from_rows(mut rows: Vec<EvalRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("evaluation produced no rows"));
        }
        rows.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
        let n = rows.len() as f64;
        let mean = rows.iter().map(|r| r.polis_px).sum::<f64>() / n;
        let var = rows
            .iter()
            .map(|r| (r.polis_px - mean) * (r.polis_px - mean))
            .sum::<f64>()
            / n;
        let uncertainties: Vec<f64> = rows.iter().filter_map(|r| r.uncertainty).collect();
        let pearson_r = if uncertainties.len() == rows.len() && rows.len() >= 2 {
            let errors: Vec<f64> = rows.iter().map(|r| r.polis_px).collect();
            pearson(&uncertainties, &errors).ok()
        } else {
            None
        };
        Ok(EvalReport {
            rows,
            mean_polis_px: mean,
            sd_polis_px: var.sqrt(),
            pearson_r,
        })
    }

    /// CSV rendering: one row per scene, aggregates in a trailing comment
    /// block.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scene_id,polis_norm,polis_px,uncertainty\n");
        for r in &self.rows {
            let unc = match r.uncertainty {
                Some(u) => format!("{u}"),
                None => String::new(),
            };
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.scene_id, r.polis_norm, r.polis_px, unc
            );
        }
        let _ = writeln!(out, "# mean_polis_px,{}", self.mean_polis_px);
        let _ = writeln!(out, "# sd_polis_px,{}", self.sd_polis_px);
        match self.pearson_r {
            Some(r) => {
                let _ = writeln!(out, "# pearson_r,{r}");
            }
            None => {
                let _ = writeln!(out, "# pearson_r,undefined");
            }
        }
        out
    }
}
