//! Video library model: SVC layer sizes, Mandelbrot-Zipf file popularity and
//! the users' quality-level preference.
//!
//! Files are indexed from 0 in descending popularity order. Layer 0 is the
//! base layer; layers 1.. are enhancement layers. A request for file `f` at
//! quality level `q` (1..=L) asks for layers `0..q` of that file.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{require_at_least, require_positive, Error, Result};

pub const BITS_PER_MBIT: f64 = 1e6;

/// Mandelbrot-Zipf request probabilities for `file_count` files.
///
/// Entry `f` (0-based) is `(f + 1 + plateau)^-alpha`, normalized. A zero
/// plateau gives the plain Zipf law.
pub fn mz_pmf(file_count: usize, alpha: f64, plateau: f64) -> Result<Vec<f64>> {
    if file_count == 0 {
        return Err(Error::invalid("file_count", "must be >= 1"));
    }
    require_at_least("popularity.alpha", alpha, 0.0)?;
    require_at_least("popularity.plateau", plateau, 0.0)?;
    let weights: Vec<f64> = (1..=file_count)
        .map(|rank| (rank as f64 + plateau).powf(-alpha))
        .collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopularityModel {
    pub alpha: f64,
    pub plateau: f64,
}

impl Default for PopularityModel {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            plateau: 5.0,
        }
    }
}

impl PopularityModel {
    pub fn new(alpha: f64, plateau: f64) -> Result<Self> {
        require_at_least("popularity.alpha", alpha, 0.0)?;
        require_at_least("popularity.plateau", plateau, 0.0)?;
        Ok(Self { alpha, plateau })
    }

    pub fn pmf(&self, file_count: usize) -> Result<Vec<f64>> {
        mz_pmf(file_count, self.alpha, self.plateau)
    }
}

/// Probability mass over quality levels `1..=L`; entry `q - 1` is the
/// probability that a user asks for exactly layers `0..q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityPreference {
    pmf: Vec<f64>,
}

impl QualityPreference {
    pub fn from_pmf(pmf: Vec<f64>) -> Result<Self> {
        if pmf.is_empty() {
            return Err(Error::invalid(
                "preference",
                "needs at least one quality level",
            ));
        }
        for (i, &p) in pmf.iter().enumerate() {
            require_at_least(&format!("preference[{i}]"), p, 0.0)?;
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(
                "preference",
                format!("must sum to 1 within 1e-12, sums to {total}"),
            ));
        }
        Ok(Self { pmf })
    }

    /// Truncated geometric law: weight of level `q` is `rho^(q-1)`.
    /// `rho < 1` favours low qualities, `rho > 1` high ones, `rho = 1` is uniform.
    pub fn truncated_geometric(levels: usize, rho: f64) -> Result<Self> {
        if levels == 0 {
            return Err(Error::invalid("layers_per_file", "must be >= 1"));
        }
        require_positive("preference.rho", rho)?;
        let weights: Vec<f64> = (0..levels).map(|k| rho.powi(k as i32)).collect();
        let total: f64 = weights.iter().sum();
        if !total.is_finite() {
            return Err(Error::invalid(
                "preference.rho",
                "overflows for this many levels",
            ));
        }
        Ok(Self {
            pmf: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    /// Every user asks for exactly `quality` levels.
    pub fn point_mass(levels: usize, quality: usize) -> Result<Self> {
        if quality == 0 || quality > levels {
            return Err(Error::IndexOutOfRange {
                what: "quality",
                index: quality,
                len: levels + 1,
            });
        }
        let mut pmf = vec![0.0; levels];
        pmf[quality - 1] = 1.0;
        Ok(Self { pmf })
    }

    pub fn levels(&self) -> usize {
        self.pmf.len()
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    /// `Pr(quality >= layer + 1)`, i.e. the probability that 0-based `layer`
    /// is part of a request.
    pub fn layer_inclusion(&self, layer: usize) -> f64 {
        self.pmf.iter().skip(layer).sum()
    }

    pub fn mean_quality(&self) -> f64 {
        self.pmf
            .iter()
            .enumerate()
            .map(|(k, p)| (k + 1) as f64 * p)
            .sum()
    }
}

/// Library block of the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryConfig {
    #[serde(default = "default_file_count")]
    pub file_count: usize,
    #[serde(default = "default_layers")]
    pub layers_per_file: usize,
    #[serde(default = "default_base_size")]
    pub base_size_mbit: f64,
    #[serde(default = "default_overhead")]
    pub svc_overhead: f64,
    #[serde(default)]
    pub popularity: PopularityConfig,
    #[serde(default)]
    pub preference: PreferenceConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopularityConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_plateau")]
    pub plateau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceConfig {
    #[serde(default = "default_rho")]
    pub rho: f64,
}

fn default_file_count() -> usize {
    50
}
fn default_layers() -> usize {
    8
}
fn default_base_size() -> f64 {
    50.0
}
fn default_overhead() -> f64 {
    0.1
}
fn default_alpha() -> f64 {
    PopularityModel::default().alpha
}
fn default_plateau() -> f64 {
    PopularityModel::default().plateau
}
fn default_rho() -> f64 {
    2.0
}

impl Default for PopularityConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            plateau: default_plateau(),
        }
    }
}

impl Default for PreferenceConfig {
    fn default() -> Self {
        Self { rho: default_rho() }
    }
}

impl Default for LibraryConfig {
    fn default() -> Self {
        Self {
            file_count: default_file_count(),
            layers_per_file: default_layers(),
            base_size_mbit: default_base_size(),
            svc_overhead: default_overhead(),
            popularity: PopularityConfig::default(),
            preference: PreferenceConfig::default(),
        }
    }
}

/// An SVC video catalogue with its request model.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoLibrary {
    files: usize,
    layers: usize,
    /// Row-major `files x layers`, bits.
    layer_sizes: Vec<f64>,
    /// Size of one file encoded without SVC, bits.
    plain_file_size: f64,
    popularity: PopularityModel,
    preference: QualityPreference,
    file_probs: Vec<f64>,
}

impl VideoLibrary {
    /// `layer_sizes` is row-major `files x layers` in bits.
    pub fn new(
        files: usize,
        layers: usize,
        layer_sizes: Vec<f64>,
        plain_file_size: f64,
        popularity: PopularityModel,
        preference: QualityPreference,
    ) -> Result<Self> {
        if files == 0 {
            return Err(Error::invalid("library.file_count", "must be >= 1"));
        }
        if layers == 0 {
            return Err(Error::invalid("library.layers_per_file", "must be >= 1"));
        }
        if layer_sizes.len() != files * layers {
            return Err(Error::DimensionMismatch {
                expected: format!("{files}x{layers} layer sizes"),
                actual: format!("{} entries", layer_sizes.len()),
            });
        }
        for (i, &s) in layer_sizes.iter().enumerate() {
            require_positive(&format!("layer_sizes[{i}]"), s)?;
        }
        require_positive("library.base_size_mbit", plain_file_size)?;
        if preference.levels() != layers {
            return Err(Error::DimensionMismatch {
                expected: format!("{layers} quality levels"),
                actual: format!("{}", preference.levels()),
            });
        }
        let file_probs = popularity.pmf(files)?;
        Ok(Self {
            files,
            layers,
            layer_sizes,
            plain_file_size,
            popularity,
            preference,
            file_probs,
        })
    }

    /// Library with every file of `files` split into `layers` equal layers.
    pub fn uniform(
        files: usize,
        layers: usize,
        layer_size_bits: f64,
        plain_file_size: f64,
        popularity: PopularityModel,
        preference: QualityPreference,
    ) -> Result<Self> {
        Self::new(
            files,
            layers,
            vec![layer_size_bits; files * layers],
            plain_file_size,
            popularity,
            preference,
        )
    }

    pub fn file_count(&self) -> usize {
        self.files
    }

    pub fn layers_per_file(&self) -> usize {
        self.layers
    }

    pub fn len(&self) -> usize {
        self.files * self.layers
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn layer_sizes(&self) -> &[f64] {
        &self.layer_sizes
    }

    pub fn layer_size(&self, file: usize, layer: usize) -> Result<f64> {
        self.check_indices(file, layer)?;
        Ok(self.layer_sizes[file * self.layers + layer])
    }

    pub fn plain_file_size(&self) -> f64 {
        self.plain_file_size
    }

    pub fn popularity(&self) -> PopularityModel {
        self.popularity
    }

    pub fn preference(&self) -> &QualityPreference {
        &self.preference
    }

    pub fn file_probs(&self) -> &[f64] {
        &self.file_probs
    }

    fn check_indices(&self, file: usize, layer: usize) -> Result<()> {
        if file >= self.files {
            return Err(Error::IndexOutOfRange {
                what: "file",
                index: file,
                len: self.files,
            });
        }
        if layer >= self.layers {
            return Err(Error::IndexOutOfRange {
                what: "layer",
                index: layer,
                len: self.layers,
            });
        }
        Ok(())
    }

    /// Probability that a request includes `layer` of `file`:
    /// `P_f * Pr(quality > layer)`.
    pub fn layer_request_prob(&self, file: usize, layer: usize) -> Result<f64> {
        self.check_indices(file, layer)?;
        Ok(self.file_probs[file] * self.preference.layer_inclusion(layer))
    }

    /// Row-major `files x layers` matrix of [`Self::layer_request_prob`].
    pub fn request_probs(&self) -> Vec<f64> {
        let inclusion: Vec<f64> = (0..self.layers)
            .map(|l| self.preference.layer_inclusion(l))
            .collect();
        self.file_probs
            .iter()
            .flat_map(|&pf| inclusion.iter().map(move |&inc| pf * inc))
            .collect()
    }

    /// Super layer made of layers `0..quality` of `file`.
    pub fn super_layer(&self, file: usize, quality: usize) -> Result<SuperLayer> {
        if quality == 0 || quality > self.layers {
            return Err(Error::IndexOutOfRange {
                what: "quality",
                index: quality,
                len: self.layers + 1,
            });
        }
        self.check_indices(file, 0)?;
        let row = &self.layer_sizes[file * self.layers..file * self.layers + quality];
        Ok(SuperLayer {
            file,
            quality,
            size: row.iter().sum(),
        })
    }

    /// Hex SHA-256 over the library's dimensions, sizes and request model.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.files as u64).to_le_bytes());
        hasher.update((self.layers as u64).to_le_bytes());
        for s in &self.layer_sizes {
            hasher.update(s.to_le_bytes());
        }
        hasher.update(self.plain_file_size.to_le_bytes());
        hasher.update(self.popularity.alpha.to_le_bytes());
        hasher.update(self.popularity.plateau.to_le_bytes());
        for p in self.preference.pmf() {
            hasher.update(p.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuperLayer {
    pub file: usize,
    pub quality: usize,
    /// Bits.
    pub size: f64,
}

/// Builds the library described by a config block: each SVC file is
/// `base * (1 + overhead)` bits split evenly over its layers.
pub fn build_library(config: &LibraryConfig) -> Result<VideoLibrary> {
    if config.file_count == 0 {
        return Err(Error::invalid("library.file_count", "must be >= 1"));
    }
    if config.layers_per_file == 0 {
        return Err(Error::invalid("library.layers_per_file", "must be >= 1"));
    }
    require_positive("library.base_size_mbit", config.base_size_mbit)?;
    require_at_least("library.svc_overhead", config.svc_overhead, 0.0)?;
    let popularity = PopularityModel::new(config.popularity.alpha, config.popularity.plateau)?;
    let preference =
        QualityPreference::truncated_geometric(config.layers_per_file, config.preference.rho)?;
    let plain = config.base_size_mbit * BITS_PER_MBIT;
    let svc_total = plain * (1.0 + config.svc_overhead);
    let layer = svc_total / config.layers_per_file as f64;
    VideoLibrary::uniform(
        config.file_count,
        config.layers_per_file,
        layer,
        plain,
        popularity,
        preference,
    )
}
