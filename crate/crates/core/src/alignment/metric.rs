//! Domain distance: nearest-center L2 distance between histogram descriptors
//! of an image and cluster centers fitted on a reference corpus.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alignment::color::luma;
use crate::alignment::frequency::{frequency_feature, histogram_descriptor, BinEdges, HistogramDescriptor, Matrix};
use crate::alignment::kmeans::{kmeans, nearest};
use crate::data::write_atomic;
use crate::scalar::Real;
use crate::{Error, Result};

pub const METRIC_FORMAT: &str = "preseg-metric";
pub const METRIC_VERSION: u32 = 1;

/// Anything that scores how far a gray raster sits from the target domain.
pub trait DomainScorer<T>: Sync {
    fn score(&self, gray: &Matrix<T>) -> T;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricModel<T> {
    pub format: String,
    pub version: u32,
    pub edges: BinEdges<T>,
    pub centers: Vec<Vec<T>>,
    /// SHA-256 over the fitted descriptors, hex.
    pub fingerprint: String,
    /// `(width, height)` of the center crop applied to corpus images.
    pub crop: (usize, usize),
    pub objective: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricParams {
    pub bins: usize,
    pub clusters: usize,
    pub seed: u64,
    pub max_iter: usize,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            bins: 16,
            clusters: 64,
            seed: 7,
            max_iter: 100,
        }
    }
}

/// Center crop to `(width, height)`; `None` if the image is smaller.
pub fn center_crop<T: Real>(img: &Matrix<T>, width: usize, height: usize) -> Option<Matrix<T>> {
    if img.cols < width || img.rows < height {
        return None;
    }
    let (r0, c0) = ((img.rows - height) / 2, (img.cols - width) / 2);
    let mut data = Vec::with_capacity(width * height);
    for r in r0..r0 + height {
        data.extend_from_slice(&img.data[r * img.cols + c0..r * img.cols + c0 + width]);
    }
    Some(Matrix {
        rows: height,
        cols: width,
        data,
    })
}

pub fn gray_from_rgb8<T: Real>(img: &image::RgbImage) -> Matrix<T> {
    Matrix {
        rows: img.height() as usize,
        cols: img.width() as usize,
        data: img
            .pixels()
            .map(|p| luma(p.0.map(|c| T::c(c as f64 / 255.0))))
            .collect(),
    }
}

pub fn descriptor_of<T: Real>(gray: &Matrix<T>, edges: &BinEdges<T>) -> Result<HistogramDescriptor<T>> {
    Ok(histogram_descriptor(&frequency_feature(gray)?, edges))
}

fn fingerprint<T: Real>(descriptors: &[Vec<T>]) -> String {
    let mut h = Sha256::new();
    for d in descriptors {
        for v in d {
            h.update(v.to_f64_lossy().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Fits centers on descriptors of the center-cropped corpus; images smaller
/// than the crop are discarded.
pub fn fit_metric_model<T: Real>(corpus: &[Matrix<T>], crop: (usize, usize), params: &MetricParams) -> Result<MetricModel<T>> {
    let edges = BinEdges::log_spaced(params.bins)?;
    let descriptors: Vec<Vec<T>> = corpus
        .iter()
        .filter_map(|img| center_crop(img, crop.0, crop.1))
        .map(|img| descriptor_of(&img, &edges).map(|d| d.0))
        .collect::<Result<_>>()?;
    if descriptors.len() < params.clusters {
        return Err(Error::Fit(format!(
            "{} usable corpus images for {} clusters",
            descriptors.len(),
            params.clusters
        )));
    }
    let km = kmeans(&descriptors, params.clusters, params.max_iter, params.seed)?;
    Ok(MetricModel {
        format: METRIC_FORMAT.into(),
        version: METRIC_VERSION,
        edges,
        fingerprint: fingerprint(&descriptors),
        centers: km.centers,
        crop,
        objective: km.objective,
    })
}

/// Reads every PNG/JPEG-like file `image` can decode, in name order.
pub fn load_corpus_dir<T: Real>(dir: &Path) -> Result<Vec<Matrix<T>>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        match image::open(&p) {
            Ok(img) => out.push(gray_from_rgb8(&img.to_rgb8())),
            Err(e) => log::warn!("skipping {}: {e}", p.display()),
        }
    }
    Ok(out)
}

impl<T: Real> MetricModel<T> {
    pub fn descriptor(&self, gray: &Matrix<T>) -> Result<HistogramDescriptor<T>> {
        let cropped = center_crop(gray, self.crop.0, self.crop.1);
        descriptor_of(cropped.as_ref().unwrap_or(gray), &self.edges)
    }

    pub fn distance_to_centers(&self, d: &HistogramDescriptor<T>) -> T {
        nearest(&d.0, &self.centers).1.sqrt()
    }

    pub fn domain_distance(&self, gray: &Matrix<T>) -> Result<T> {
        Ok(self.distance_to_centers(&self.descriptor(gray)?))
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != METRIC_FORMAT || self.version != METRIC_VERSION {
            return Err(Error::MalformedFile(format!(
                "unsupported metric model {} v{}",
                self.format, self.version
            )));
        }
        let dim = self.edges.bin_count();
        if self.centers.is_empty() || self.centers.iter().any(|c| c.len() != dim || c.iter().any(|v| !v.is_finite())) {
            return Err(Error::MalformedFile("metric centers malformed".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_vec_pretty(self).map_err(|e| Error::MalformedFile(e.to_string()))?;
        write_atomic(path, &text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_slice(&bytes).map_err(|e| Error::MalformedFile(format!("{}: {e}", path.display())))?;
        BinEdges::new(model.edges.edges().to_vec())?;
        model.validate()?;
        Ok(model)
    }
}

impl<T: Real> DomainScorer<T> for MetricModel<T> {
    fn score(&self, gray: &Matrix<T>) -> T {
        self.domain_distance(gray).unwrap_or(T::infinity())
    }
}

/// Dead-leaves texture: overlapping discs with power-law radii and random
/// gray levels, a common stand-in for natural image statistics.
pub fn dead_leaves<T: Real>(width: usize, height: usize, seed: u64) -> Matrix<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![T::c(rng.random::<f64>()); width * height];
    let (rmin, rmax) = (2.0f64, width.max(height) as f64 / 3.0);
    let discs = 60 + (width * height) / 400;
    for _ in 0..discs {
        let u: f64 = rng.random();
        // Radius density ∝ r⁻³ on [rmin, rmax].
        let r = 1.0 / (1.0 / (rmin * rmin) - u * (1.0 / (rmin * rmin) - 1.0 / (rmax * rmax))).sqrt();
        let cx = rng.random::<f64>() * width as f64;
        let cy = rng.random::<f64>() * height as f64;
        let g = T::c(rng.random::<f64>());
        let (r0, r1) = ((cy - r).max(0.0) as usize, ((cy + r).ceil() as usize).min(height));
        let (c0, c1) = ((cx - r).max(0.0) as usize, ((cx + r).ceil() as usize).min(width));
        for row in r0..r1 {
            for col in c0..c1 {
                let (dx, dy) = (col as f64 + 0.5 - cx, row as f64 + 0.5 - cy);
                if dx * dx + dy * dy <= r * r {
                    data[row * width + col] = g;
                }
            }
        }
    }
    Matrix {
        rows: height,
        cols: width,
        data,
    }
}

pub fn synthetic_corpus<T: Real>(count: usize, width: usize, height: usize, seed: u64) -> Vec<Matrix<T>> {
    (0..count)
        .map(|i| dead_leaves(width, height, seed.wrapping_mul(1_000_003).wrapping_add(i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(n: usize, period: usize, offset: usize) -> Matrix<f64> {
        let data = (0..n * n)
            .map(|i| (((i / n + offset) / period + (i % n) / period) % 2) as f64)
            .collect();
        Matrix::new(n, n, data).unwrap()
    }

    fn params(k: usize) -> MetricParams {
        MetricParams {
            clusters: k,
            ..MetricParams::default()
        }
    }

    #[test]
    fn checkerboards_and_flats_separate() {
        let mut corpus = Vec::new();
        for i in 0..6 {
            corpus.push(checkerboard(32, 2, i));
            corpus.push(Matrix::filled(32, 32, 0.1 + 0.1 * i as f64));
        }
        let model = fit_metric_model(&corpus, (32, 32), &params(2)).unwrap();
        let label = |m: &Matrix<f64>| nearest(&model.descriptor(m).unwrap().0, &model.centers).0;
        let checker = label(&corpus[0]);
        let flat = label(&corpus[1]);
        assert_ne!(checker, flat);
        for (i, img) in corpus.iter().enumerate() {
            assert_eq!(label(img), if i % 2 == 0 { checker } else { flat });
        }
    }

    #[test]
    fn single_center_is_descriptor_mean() {
        let corpus = synthetic_corpus::<f64>(5, 24, 16, 3);
        let model = fit_metric_model(&corpus, (24, 16), &params(1)).unwrap();
        let edges = BinEdges::log_spaced(16).unwrap();
        let mut mean = vec![0.0; 16];
        for img in &corpus {
            for (m, v) in mean.iter_mut().zip(descriptor_of(img, &edges).unwrap().0) {
                *m += v / 5.0;
            }
        }
        for (a, b) in model.centers[0].iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_is_deterministic_and_fingerprinted() {
        let corpus = synthetic_corpus::<f64>(12, 32, 32, 1);
        let a = fit_metric_model(&corpus, (32, 32), &params(3)).unwrap();
        let b = fit_metric_model(&corpus, (32, 32), &params(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fingerprint.len(), 64);
        for w in a.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn small_images_are_discarded() {
        let corpus = vec![Matrix::filled(8, 8, 0.5f64), Matrix::filled(40, 40, 0.5)];
        assert!(matches!(
            fit_metric_model(&corpus, (32, 32), &params(2)),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn distance_is_zero_at_a_center_and_label_free() {
        let corpus = synthetic_corpus::<f64>(8, 32, 32, 9);
        let mut model = fit_metric_model(&corpus, (32, 32), &params(8)).unwrap();
        // With as many centers as images, each image sits on a center.
        let d = model.domain_distance(&corpus[3]).unwrap();
        assert!(d < 1e-12);
        let probe = dead_leaves::<f64>(32, 32, 999);
        let before = model.domain_distance(&probe).unwrap();
        model.centers.reverse();
        assert_eq!(before, model.domain_distance(&probe).unwrap());
    }

    #[test]
    fn natural_texture_beats_sparse_dots() {
        let corpus = synthetic_corpus::<f64>(40, 64, 48, 4);
        let model = fit_metric_model(&corpus, (64, 48), &params(8)).unwrap();
        let held_out = dead_leaves::<f64>(64, 48, 123_456);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut dots = Matrix::filled(48, 64, 0.0);
        for _ in 0..150 {
            let i = rng.random_range(0..dots.data.len());
            dots.data[i] = rng.random_range(0.2..1.0);
        }
        let a = model.domain_distance(&held_out).unwrap();
        let b = model.domain_distance(&dots).unwrap();
        assert!(a < b, "{a} vs {b}");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let model = fit_metric_model(&synthetic_corpus::<f64>(4, 16, 16, 2), (16, 16), &params(2)).unwrap();
        model.save(&path).unwrap();
        assert_eq!(MetricModel::load(&path).unwrap(), model);
        std::fs::write(&path, b"{\"format\":\"x\"}").unwrap();
        assert!(MetricModel::<f64>::load(&path).is_err());
    }
}
