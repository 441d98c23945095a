//! SVG overlay rendering: the scene raster embedded as a PNG data URI with
//! polyline layers on top (truth in red, final prediction in solid blue,
//! intermediate iterations as dashed blue).

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use std::fmt::Write as _;

use cobra_core::geometry::Polyline;
use cobra_core::tensor::NdArray;
use cobra_core::{Error, Result};

fn png_data_uri(image: &NdArray) -> Result<String> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let pixels: Vec<u8> = image
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let gray = image::GrayImage::from_raw(w as u32, h as u32, pixels)
        .ok_or_else(|| Error::invalid("image buffer size mismatch"))?;
    let mut png = std::io::Cursor::new(Vec::new());
    gray.write_to(&mut png, image::ImageFormat::Png)
        .map_err(|e| Error::invalid(format!("PNG encoding failed: {e}")))?;
    Ok(format!(
        "data:image/png;base64,{}",
        BASE64.encode(png.into_inner())
    ))
}

fn points_attr(line: &Polyline) -> String {
    let mut s = String::new();
    for v in line.vertices() {
        let _ = write!(s, "{:.3},{:.3} ", v[0], v[1]);
    }
    s.pop();
    s
}

/// Builds the overlay document. `contours` holds every iteration's contour
/// in pixel coordinates, last = final prediction; `truth` is optional.
pub fn overlay_svg(
    image: &NdArray,
    contours: &[Polyline],
    truth: Option<&Polyline>,
) -> Result<String> {
    if image.rank() != 2 {
        return Err(Error::shape(format!(
            "overlay wants an [H,W] image, got {:?}",
            image.shape()
        )));
    }
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let uri = png_data_uri(image)?;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\" width=\"{}\" height=\"{}\">",
        w * 4,
        h * 4
    );
    let _ = writeln!(
        svg,
        "  <image href=\"{uri}\" x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" image-rendering=\"pixelated\"/>"
    );
    if let Some((last, rest)) = contours.split_last() {
        for line in rest {
            let _ = writeln!(
                svg,
                "  <polyline points=\"{}\" fill=\"none\" stroke=\"#2060ff\" stroke-width=\"0.6\" stroke-dasharray=\"2 1.5\" opacity=\"0.8\"/>",
                points_attr(line)
            );
        }
        let _ = writeln!(
            svg,
            "  <polyline points=\"{}\" fill=\"none\" stroke=\"#2060ff\" stroke-width=\"0.9\"/>",
            points_attr(last)
        );
    }
    if let Some(t) = truth {
        let _ = writeln!(
            svg,
            "  <polyline points=\"{}\" fill=\"none\" stroke=\"#e02020\" stroke-width=\"0.9\" opacity=\"0.9\"/>",
            points_attr(t)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_contains_layers() {
        let img = NdArray::from_fn(&[4, 4], |i| i as f64 / 15.0);
        let a = Polyline::new(vec![[0.0, 0.0], [3.0, 3.0]]).unwrap();
        let b = Polyline::new(vec![[0.0, 3.0], [3.0, 0.0]]).unwrap();
        let svg = overlay_svg(&img, &[a.clone(), b.clone()], Some(&a)).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("data:image/png;base64,"));
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert_eq!(svg.matches("stroke-dasharray").count(), 1);
        assert!(svg.contains("#e02020"));
    }

    #[test]
    fn truthless_overlay_has_no_red_layer() {
        let img = NdArray::zeros(&[4, 4]);
        let a = Polyline::new(vec![[0.0, 0.0], [3.0, 3.0]]).unwrap();
        let svg = overlay_svg(&img, &[a], None).unwrap();
        assert!(!svg.contains("#e02020"));
        assert_eq!(svg.matches("<polyline").count(), 1);
    }
}
