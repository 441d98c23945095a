//! Synthetic scene generation, dataset persistence, and splits.
//!
//! A scene is a square grayscale image split by a jagged top-to-bottom
//! boundary: the left region is bright, the right dark.
//! The boundary is a 1-D midpoint-displacement curve x(y), so it is a
//! function of y — one crossing per row, matching the open-polyline model.

mod geojson;
mod pgm;

pub use geojson::{
    linestring_feature, linestring_geometry, read_linestring, write_feature_collection,
    write_linestring,
};
pub use pgm::{read_pgm, write_pgm};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Polyline;
use crate::par::maybe_par_map;
use crate::tensor::NdArray;

/// A grayscale image with its ground-truth boundary polyline.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// [H,W] grid of values in [0,1].
    pub image: NdArray,
    /// Normalized coordinates; endpoints lie on the top and bottom borders.
    pub truth: Polyline,
    pub id: String,
}

impl Scene {
    /// The image as a single-channel [1,H,W] model input.
    pub fn model_input(&self) -> NdArray {
        let mut shape = vec![1];
        shape.extend_from_slice(self.image.shape());
        NdArray::from_vec(&shape, self.image.data().to_vec()).expect("same element count")
    }

    pub fn size(&self) -> usize {
        self.image.shape()[0]
    }
}

/// Parameters of the synthetic scene generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Image side length; square images only.
    pub size: usize,
    pub count: usize,
    pub seed: u64,
    /// Midpoint-displacement decay per subdivision level, in (0,1).
    pub roughness: f64,
    /// Mean intensity gap between the two regions.
    pub contrast: f64,
    /// Standard deviation of the additive Gaussian pixel noise; the
    /// low-frequency texture amplitude is tied to the same value.
    pub noise_sd: f64,
    /// Multiplicative unit-mean Gamma speckle.
    pub speckle: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            size: 128,
            count: 500,
            seed: 0,
            roughness: 0.55,
            contrast: 0.4,
            noise_sd: 0.08,
            speckle: false,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 2 {
            return Err(Error::invalid(format!("image size {} too small", self.size)));
        }
        if self.count < 1 {
            return Err(Error::invalid("scene count must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.roughness) {
            return Err(Error::invalid(format!(
                "roughness must lie in [0,1), got {}",
                self.roughness
            )));
        }
        if self.noise_sd < 0.0 {
            return Err(Error::invalid("noise_sd must be non-negative"));
        }
        Ok(())
    }
}

/// First-level amplitude of the midpoint displacement, in normalized x units.
const DISPLACEMENT_BASE: f64 = 0.15;
/// Shape parameter of the unit-mean Gamma speckle (higher = milder).
const SPECKLE_LOOKS: f64 = 4.0;

/// Recursive 1-D midpoint displacement over `xs[lo..=hi]`.
fn midpoint_displace(
    xs: &mut [f64],
    lo: usize,
    hi: usize,
    level: u32,
    roughness: f64,
    rng: &mut ChaCha8Rng,
) {
    if hi - lo < 2 {
        return;
    }
    let mid = (lo + hi) / 2;
    let amp = DISPLACEMENT_BASE * roughness.powi(level as i32);
    let u: f64 = rng.random::<f64>() * 2.0 - 1.0;
    xs[mid] = 0.5 * (xs[lo] + xs[hi]) + u * amp;
    midpoint_displace(xs, lo, mid, level + 1, roughness, rng);
    midpoint_displace(xs, mid, hi, level + 1, roughness, rng);
}

/// Generates one scene. The boundary is sampled at every image row; truth
/// vertex k sits at y = k/(H-1) with y=0 and y=1 exactly at the borders.
pub fn generate_scene(cfg: &GenConfig, rng: &mut ChaCha8Rng, id: String) -> Result<Scene> {
    cfg.validate()?;
    let n = cfg.size;

    // Boundary curve x(y) around a random base offset, endpoints at the base.
    let base = 0.3 + 0.4 * rng.random::<f64>();
    let mut xs = vec![base; n];
    midpoint_displace(&mut xs, 0, n - 1, 1, cfg.roughness, rng);
    for x in &mut xs {
        *x = x.clamp(0.0, 1.0);
    }

    // Low-frequency texture parameters, then per-pixel noise, in fixed order.
    let fr = 1.0 + (rng.random::<f64>() * 3.0).floor();
    let fc = 1.0 + (rng.random::<f64>() * 3.0).floor();
    let phase_r = rng.random::<f64>() * std::f64::consts::TAU;
    let phase_c = rng.random::<f64>() * std::f64::consts::TAU;

    let bright = 0.5 + cfg.contrast / 2.0;
    let dark = 0.5 - cfg.contrast / 2.0;
    let normal = if cfg.noise_sd > 0.0 {
        Some(Normal::new(0.0, cfg.noise_sd).expect("validated sd"))
    } else {
        None
    };

    let mut image = NdArray::zeros(&[n, n]);
    for (r, &x) in xs.iter().enumerate() {
        let boundary_px = x * (n - 1) as f64;
        for c in 0..n {
            let mean = if (c as f64) < boundary_px { bright } else { dark };
            let texture = cfg.noise_sd
                * (std::f64::consts::TAU * (fr * r as f64 / n as f64) + phase_r).sin()
                * (std::f64::consts::TAU * (fc * c as f64 / n as f64) + phase_c).sin();
            let noise = match &normal {
                Some(d) => d.sample(rng),
                None => 0.0,
            };
            image.data_mut()[r * n + c] = (mean + texture + noise).clamp(0.0, 1.0);
        }
    }
    if cfg.speckle {
        let gamma = Gamma::new(SPECKLE_LOOKS, 1.0 / SPECKLE_LOOKS).expect("fixed parameters");
        for v in image.data_mut() {
            *v = (*v * gamma.sample(rng)).clamp(0.0, 1.0);
        }
    }

    let truth = Polyline::new(
        xs.iter()
            .enumerate()
            .map(|(r, &x)| [x, r as f64 / (n - 1) as f64])
            .collect(),
    )?;
    Ok(Scene { image, truth, id })
}

/// Scene id for index `i` within a generated dataset.
pub fn scene_id(i: usize) -> String {
    format!("scene_{i:04}")
}

/// Generates `cfg.count` scenes in parallel, each from a seed derived as
/// `cfg.seed + index`, so results do not depend on thread count.
pub fn generate_dataset(cfg: &GenConfig) -> Result<Vec<Scene>> {
    cfg.validate()?;
    let scenes = maybe_par_map(cfg.count, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
        generate_scene(cfg, &mut rng, scene_id(i))
    });
    scenes.into_iter().collect()
}

#[derive(Serialize, Deserialize)]
struct Index {
    ids: Vec<String>,
    gen: GenConfig,
}

/// Writes a scene's image and truth into the dataset layout
/// (`images/{id}.pgm`, `truth/{id}.geojson`).
pub fn write_scene(scene: &Scene, dir: &Path) -> Result<()> {
    let (h, w) = (scene.image.shape()[0], scene.image.shape()[1]);
    write_pgm(&dir.join("images").join(format!("{}.pgm", scene.id)), &scene.image)?;
    let px: Vec<[f64; 2]> = scene
        .truth
        .vertices()
        .iter()
        .map(|v| [v[0] * (w - 1) as f64, v[1] * (h - 1) as f64])
        .collect();
    write_linestring(
        &dir.join("truth").join(format!("{}.geojson", scene.id)),
        &px,
    )?;
    Ok(())
}

/// Reads one scene back from the dataset layout.
pub fn read_scene(dir: &Path, id: &str) -> Result<Scene> {
    let image = read_pgm(&dir.join("images").join(format!("{id}.pgm")))?;
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let px = read_linestring(&dir.join("truth").join(format!("{id}.geojson")))?;
    let truth = Polyline::new(
        px.iter()
            .map(|p| [p[0] / (w - 1) as f64, p[1] / (h - 1) as f64])
            .collect(),
    )?;
    Ok(Scene {
        image,
        truth,
        id: id.to_string(),
    })
}

/// Writes a full dataset directory: images, truths, and `index.json`.
pub fn write_dataset(scenes: &[Scene], cfg: &GenConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("truth"))?;
    for s in scenes {
        write_scene(s, dir)?;
    }
    let index = Index {
        ids: scenes.iter().map(|s| s.id.clone()).collect(),
        gen: cfg.clone(),
    };
    std::fs::write(
        dir.join("index.json"),
        serde_json::to_string_pretty(&index)? + "\n",
    )?;
    Ok(())
}

/// Reads every scene listed in a dataset's `index.json`, in index order.
pub fn read_dataset(dir: &Path) -> Result<(Vec<Scene>, GenConfig)> {
    let raw = std::fs::read_to_string(dir.join("index.json"))
        .map_err(|e| Error::parse(dir.display().to_string(), format!("missing index.json: {e}")))?;
    let index: Index = serde_json::from_str(&raw)
        .map_err(|e| Error::parse("index.json".to_string(), e.to_string()))?;
    let scenes = maybe_par_map(index.ids.len(), |i| read_scene(dir, &index.ids[i]));
    Ok((scenes.into_iter().collect::<Result<Vec<_>>>()?, index.gen))
}

/// Deterministic shuffled partition of `0..count` into train/val/test index
/// sets. Fractions must sum to 1; every part must be non-empty.
pub fn make_split(
    count: usize,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let (a, b, c) = fractions;
    if (a + b + c - 1.0).abs() > 1e-9 || a < 0.0 || b < 0.0 || c < 0.0 {
        return Err(Error::invalid(format!(
            "split fractions must be non-negative and sum to 1, got ({a}, {b}, {c})"
        )));
    }
    let mut ids: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates, fixed draw order.
    for i in (1..ids.len()).rev() {
        let j = rng.random_range(0..=i);
        ids.swap(i, j);
    }
    let n_train = (count as f64 * a).floor() as usize;
    let n_val = (count as f64 * b).floor() as usize;
    let train = ids[..n_train].to_vec();
    let val = ids[n_train..n_train + n_val].to_vec();
    let test = ids[n_train + n_val..].to_vec();
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(Error::invalid(format!(
            "split of {count} scenes left an empty part (sizes {}, {}, {})",
            train.len(),
            val.len(),
            test.len()
        )));
    }
    Ok((train, val, test))
}
