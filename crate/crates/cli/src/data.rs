//! Synthetic toy datasets and PGM/PPM directory loading.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use pcdm_core::hvp::HierarchySpec;
use pcdm_core::io::read_image;
use pcdm_core::{ImageU8, Rng};

/// Per-pixel noise of the generated images, in 8-bit levels.
const PIXEL_NOISE: f64 = 8.0;

#[derive(Clone, Debug, PartialEq)]
pub enum Generator {
    /// Each image is one of `components` fixed smooth patterns plus pixel noise.
    GaussianMixture { components: usize },
    /// Checkerboards with random cell size, phase and two intensities.
    Checkerboard,
    /// Every `.pgm`/`.ppm` file of a directory, in file-name order.
    FromDirectory(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub generator: Generator,
    pub count: usize,
    /// Draws individual images.
    pub seed: u64,
    /// Fixes structure shared by every split, such as the mixture means.
    pub structure_seed: u64,
}

impl DatasetSpec {
    /// Images shaped for `spec`. Directory images of another shape are an error.
    pub fn generate(&self, spec: &HierarchySpec) -> Result<Vec<ImageU8>> {
        let mut rng = Rng::new(self.seed);
        let images = match &self.generator {
            Generator::GaussianMixture { components } => {
                if *components == 0 {
                    bail!("a mixture needs at least one component");
                }
                let means = mixture_means(spec, *components, self.structure_seed);
                (0..self.count)
                    .map(|_| {
                        let mean = &means[rng.below(means.len())];
                        let pixels = mean.iter().map(|m| noisy_pixel(*m, &mut rng)).collect();
                        image(spec, pixels)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            Generator::Checkerboard => (0..self.count).map(|_| checkerboard(spec, &mut rng)).collect::<Result<_>>()?,
            Generator::FromDirectory(dir) => load_directory(dir, self.count, spec)?,
        };
        Ok(images)
    }
}

fn noisy_pixel(mean: f64, rng: &mut Rng) -> u8 {
    (mean + PIXEL_NOISE * rng.normal()).round().clamp(0.0, 255.0) as u8
}

/// Interleaved HWC pixels to an image of the hierarchy's shape.
fn image(spec: &HierarchySpec, pixels: Vec<u8>) -> Result<ImageU8> {
    Ok(ImageU8::new(spec.height, spec.width, spec.channels, pixels)?)
}

/// Smooth patterns: a sum of two random plane waves per channel, in `[40, 215]`.
fn mixture_means(spec: &HierarchySpec, components: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = Rng::new(seed);
    let (h, w, c) = (spec.height, spec.width, spec.channels);
    (0..components)
        .map(|_| {
            let waves: Vec<[f64; 4]> = (0..2 * c)
                .map(|_| {
                    let angle = std::f64::consts::TAU * rng.uniform();
                    let freq = 0.5 + 1.5 * rng.uniform();
                    let phase = std::f64::consts::TAU * rng.uniform();
                    [angle.cos() * freq, angle.sin() * freq, phase, 0.5 + 0.5 * rng.uniform()]
                })
                .collect();
            let mut mean = Vec::with_capacity(h * w * c);
            for i in 0..h {
                for j in 0..w {
                    for ch in 0..c {
                        let (u, v) = (i as f64 / h as f64, j as f64 / w as f64);
                        let s: f64 = waves[2 * ch..2 * ch + 2]
                            .iter()
                            .map(|[fx, fy, ph, amp]| amp * (std::f64::consts::TAU * (fx * u + fy * v) + ph).sin())
                            .sum();
                        mean.push(127.5 + 87.5 * (s / 2.0));
                    }
                }
            }
            mean
        })
        .collect()
}

fn checkerboard(spec: &HierarchySpec, rng: &mut Rng) -> Result<ImageU8> {
    let side = spec.height.min(spec.width);
    let sizes: Vec<usize> = (0..).map(|k| 1usize << k).take_while(|&s| 2 * s <= side).collect();
    let cell = sizes[rng.below(sizes.len())];
    let (di, dj) = (rng.below(2 * cell), rng.below(2 * cell));
    let lo: Vec<f64> = (0..spec.channels).map(|_| 20.0 + 80.0 * rng.uniform()).collect();
    let hi: Vec<f64> = (0..spec.channels).map(|_| 150.0 + 85.0 * rng.uniform()).collect();
    let mut pixels = Vec::with_capacity(spec.image_dim());
    for i in 0..spec.height {
        for j in 0..spec.width {
            let dark = ((i + di) / cell + (j + dj) / cell) % 2 == 0;
            for ch in 0..spec.channels {
                pixels.push(noisy_pixel(if dark { lo[ch] } else { hi[ch] }, rng));
            }
        }
    }
    image(spec, pixels)
}

fn load_directory(dir: &PathBuf, count: usize, spec: &HierarchySpec) -> Result<Vec<ImageU8>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .with_context(|| format!("listing {}", dir.display()))?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "pgm" || e == "ppm"));
    paths.sort();
    if paths.len() < count {
        bail!("{} holds {} images, {count} requested", dir.display(), paths.len());
    }
    paths
        .iter()
        .take(count)
        .map(|p| {
            let img = read_image(p).with_context(|| format!("reading {}", p.display()))?;
            if [img.channels(), img.height(), img.width()] != [spec.channels, spec.height, spec.width] {
                bail!(
                    "{} is {}x{}x{}, the model expects {}x{}x{}",
                    p.display(),
                    img.channels(),
                    img.height(),
                    img.width(),
                    spec.channels,
                    spec.height,
                    spec.width
                );
            }
            Ok(img)
        })
        .collect()
}

/// Pure noise: every pixel uniform over `0..=255`.
pub fn uniform_noise(spec: &HierarchySpec, count: usize, rng: &mut Rng) -> Result<Vec<ImageU8>> {
    (0..count).map(|_| image(spec, (0..spec.image_dim()).map(|_| rng.below(256) as u8).collect())).collect()
}

/// Constant images, one uniformly drawn value per channel.
pub fn constant_images(spec: &HierarchySpec, count: usize, rng: &mut Rng) -> Result<Vec<ImageU8>> {
    (0..count)
        .map(|_| {
            let values: Vec<u8> = (0..spec.channels).map(|_| rng.below(256) as u8).collect();
            image(spec, (0..spec.image_dim()).map(|i| values[i % spec.channels]).collect())
        })
        .collect()
}
