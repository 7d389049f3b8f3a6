//! Cache placement decisions for the two caching tiers (D2D helpers and
//! SBSs): probabilistic, binary (most-popular-first) and fractional.
//!
//! Every node of a tier shares one placement matrix.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::content::VideoLibrary;
use crate::error::{require_at_least, require_probability, Error, Result};

/// Relative slack allowed when comparing occupancy against capacity.
pub const FEASIBILITY_RTOL: f64 = 1e-9;

/// Dense `files x layers` matrix stored row-major. Serializes as a list of
/// rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMatrix {
    files: usize,
    layers: usize,
    values: Vec<f64>,
}

impl LayerMatrix {
    pub fn zeros(files: usize, layers: usize) -> Self {
        Self::filled(files, layers, 0.0)
    }

    pub fn filled(files: usize, layers: usize, value: f64) -> Self {
        Self {
            files,
            layers,
            values: vec![value; files * layers],
        }
    }

    pub fn from_vec(files: usize, layers: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != files * layers {
            return Err(Error::DimensionMismatch {
                expected: format!("{files}x{layers}"),
                actual: format!("{} entries", values.len()),
            });
        }
        Ok(Self {
            files,
            layers,
            values,
        })
    }

    pub fn files(&self) -> usize {
        self.files
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, file: usize, layer: usize) -> f64 {
        self.values[file * self.layers + layer]
    }

    pub fn set(&mut self, file: usize, layer: usize, value: f64) {
        self.values[file * self.layers + layer] = value;
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.layers.max(1))
    }

    pub(crate) fn check_shape(&self, library: &VideoLibrary) -> Result<()> {
        if self.files != library.file_count() || self.layers != library.layers_per_file() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", library.file_count(), library.layers_per_file()),
                actual: format!("{}x{}", self.files, self.layers),
            });
        }
        Ok(())
    }

    /// `Σ size · value` in bits.
    pub fn occupancy(&self, sizes: &[f64]) -> f64 {
        self.values.iter().zip(sizes).map(|(v, s)| v * s).sum()
    }
}

impl Serialize for LayerMatrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.rows())
    }
}

impl<'de> Deserialize<'de> for LayerMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(deserializer)?;
        let files = rows.len();
        let layers = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != layers) {
            return Err(serde::de::Error::custom("ragged placement matrix"));
        }
        Ok(Self {
            files,
            layers,
            values: rows.into_iter().flatten().collect(),
        })
    }
}

/// Per-node cache sizes of the two caching tiers, bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capacities {
    pub d2d_bits: f64,
    pub sbs_bits: f64,
}

impl Capacities {
    pub fn validate(&self) -> Result<()> {
        require_at_least("cache.d2d_mbit", self.d2d_bits, 0.0)?;
        require_at_least("cache.sbs_mbit", self.sbs_bits, 0.0)
    }
}

/// Probability that a node of each tier stores each layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomPlacement {
    pub d2d: LayerMatrix,
    pub sbs: LayerMatrix,
}

impl RandomPlacement {
    pub fn new(d2d: LayerMatrix, sbs: LayerMatrix) -> Result<Self> {
        if (d2d.files, d2d.layers) != (sbs.files, sbs.layers) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", d2d.files, d2d.layers),
                actual: format!("{}x{}", sbs.files, sbs.layers),
            });
        }
        for (tier, m) in [("d2d", &d2d), ("sbs", &sbs)] {
            for (i, &p) in m.values.iter().enumerate() {
                require_probability(&format!("placement.{tier}[{i}]"), p)?;
            }
        }
        Ok(Self { d2d, sbs })
    }

    pub fn zeros(library: &VideoLibrary) -> Self {
        let z = LayerMatrix::zeros(library.file_count(), library.layers_per_file());
        Self {
            d2d: z.clone(),
            sbs: z,
        }
    }

    /// Same probability on every layer, chosen to exactly fill each tier's
    /// capacity in expectation (clipped to 1).
    pub fn uniform_saturating(library: &VideoLibrary, capacities: &Capacities) -> Self {
        let total: f64 = library.layer_sizes().iter().sum();
        let fill = |c: f64| {
            LayerMatrix::filled(
                library.file_count(),
                library.layers_per_file(),
                (c / total).clamp(0.0, 1.0),
            )
        };
        Self {
            d2d: fill(capacities.d2d_bits),
            sbs: fill(capacities.sbs_bits),
        }
    }

    pub fn check_shape(&self, library: &VideoLibrary) -> Result<()> {
        self.d2d.check_shape(library)?;
        self.sbs.check_shape(library)
    }

    /// Checks both tiers against their capacities.
    pub fn check_capacities(
        &self,
        library: &VideoLibrary,
        capacities: &Capacities,
    ) -> Result<(Feasibility, Feasibility)> {
        Ok((
            check_feasibility(&self.d2d, library, capacities.d2d_bits)?,
            check_feasibility(&self.sbs, library, capacities.sbs_bits)?,
        ))
    }
}

/// Set of cached layers of one tier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryPlacement {
    files: usize,
    layers: usize,
    cached: Vec<bool>,
}

impl BinaryPlacement {
    pub fn empty(files: usize, layers: usize) -> Self {
        Self {
            files,
            layers,
            cached: vec![false; files * layers],
        }
    }

    pub fn is_cached(&self, file: usize, layer: usize) -> bool {
        self.cached[file * self.layers + layer]
    }

    pub fn cached_count(&self) -> usize {
        self.cached.iter().filter(|&&c| c).count()
    }

    /// Cached `(file, layer)` pairs in row-major order.
    pub fn cached_layers(&self) -> Vec<(usize, usize)> {
        self.cached
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(|(i, _)| (i / self.layers, i % self.layers))
            .collect()
    }

    pub fn to_probabilities(&self) -> LayerMatrix {
        LayerMatrix {
            files: self.files,
            layers: self.layers,
            values: self
                .cached
                .iter()
                .map(|&c| f64::from(u8::from(c)))
                .collect(),
        }
    }

    pub fn occupancy(&self, sizes: &[f64]) -> f64 {
        self.cached
            .iter()
            .zip(sizes)
            .filter(|(c, _)| **c)
            .map(|(_, s)| s)
            .sum()
    }
}

/// Fraction of each layer stored on every node of a tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionalPlacement {
    pub d2d: LayerMatrix,
    pub sbs: LayerMatrix,
}

impl FractionalPlacement {
    pub fn new(d2d: LayerMatrix, sbs: LayerMatrix) -> Result<Self> {
        // Same domain as probabilities.
        let RandomPlacement { d2d, sbs } = RandomPlacement::new(d2d, sbs)?;
        Ok(Self { d2d, sbs })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    /// `capacity - occupancy`, bits.
    pub slack: f64,
}

/// Expected-occupancy feasibility of a probability or fraction matrix.
pub fn check_feasibility(
    matrix: &LayerMatrix,
    library: &VideoLibrary,
    capacity_bits: f64,
) -> Result<Feasibility> {
    matrix.check_shape(library)?;
    let in_box = matrix.values.iter().all(|p| (0.0..=1.0).contains(p));
    let slack = capacity_bits - matrix.occupancy(library.layer_sizes());
    Ok(Feasibility {
        feasible: in_box && slack >= -FEASIBILITY_RTOL * capacity_bits.max(1.0),
        slack,
    })
}

/// Hard knapsack feasibility of a binary placement.
pub fn check_binary_feasibility(
    placement: &BinaryPlacement,
    library: &VideoLibrary,
    capacity_bits: f64,
) -> Result<Feasibility> {
    if placement.files != library.file_count() || placement.layers != library.layers_per_file() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", library.file_count(), library.layers_per_file()),
            actual: format!("{}x{}", placement.files, placement.layers),
        });
    }
    let slack = capacity_bits - placement.occupancy(library.layer_sizes());
    Ok(Feasibility {
        feasible: slack >= 0.0,
        slack,
    })
}

/// Layers in descending request probability; ties go to the lower file
/// index, then the lower layer index.
fn popularity_order(library: &VideoLibrary) -> Vec<usize> {
    let probs = library.request_probs();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    // Row-major index order is exactly (file, layer) order, so a stable sort
    // on probability alone applies the tie rule.
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    order
}

/// Most-popular-layer placement: fills the cache greedily in descending
/// layer request probability and stops at the first layer that does not fit.
pub fn mplp_place(library: &VideoLibrary, capacity_bits: f64) -> BinaryPlacement {
    let mut placement = BinaryPlacement::empty(library.file_count(), library.layers_per_file());
    let sizes = library.layer_sizes();
    let mut used = 0.0;
    for idx in popularity_order(library) {
        if used + sizes[idx] > capacity_bits {
            break;
        }
        used += sizes[idx];
        placement.cached[idx] = true;
    }
    placement
}

/// Most-popular-content placement of whole non-SVC files; returns one flag
/// per file.
pub fn mpcp_no_svc_place(library: &VideoLibrary, capacity_bits: f64) -> Vec<bool> {
    let probs = library.file_probs();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let mut cached = vec![false; probs.len()];
    let mut used = 0.0;
    for f in order {
        if used + library.plain_file_size() > capacity_bits {
            break;
        }
        used += library.plain_file_size();
        cached[f] = true;
    }
    cached
}

/// Independent Bernoulli draw of every layer for one node.
pub fn sample_cache_contents<R: Rng + ?Sized>(
    placement: &LayerMatrix,
    rng: &mut R,
) -> BinaryPlacement {
    BinaryPlacement {
        files: placement.files,
        layers: placement.layers,
        cached: placement
            .values
            .iter()
            .map(|&p| rng.random::<f64>() < p)
            .collect(),
    }
}

/// Like [`sample_cache_contents`], then drops the lowest-probability cached
/// layers until the node's hard capacity holds.
pub fn sample_cache_contents_truncated<R: Rng + ?Sized>(
    placement: &LayerMatrix,
    sizes: &[f64],
    capacity_bits: f64,
    rng: &mut R,
) -> BinaryPlacement {
    let mut contents = sample_cache_contents(placement, rng);
    let mut used = contents.occupancy(sizes);
    if used <= capacity_bits {
        return contents;
    }
    let mut cached: Vec<usize> = (0..contents.cached.len())
        .filter(|&i| contents.cached[i])
        .collect();
    // lowest probability first; among equals drop the later (less popular) index
    cached.sort_by(|&a, &b| {
        placement.values[a]
            .total_cmp(&placement.values[b])
            .then(b.cmp(&a))
    });
    for idx in cached {
        if used <= capacity_bits {
            break;
        }
        contents.cached[idx] = false;
        used -= sizes[idx];
    }
    contents
}

/// Placement file written by `optimize` and read by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementFile {
    pub library_fingerprint: String,
    pub files: usize,
    pub layers: usize,
    pub placement: RandomPlacement,
    /// Resolved experiment config and seed the placement came from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl PlacementFile {
    pub fn new(library: &VideoLibrary, placement: RandomPlacement) -> Self {
        Self {
            library_fingerprint: library.fingerprint(),
            files: library.file_count(),
            layers: library.layers_per_file(),
            placement,
            provenance: None,
        }
    }

    /// Validates the stored matrices against `library`.
    pub fn into_placement(self, library: &VideoLibrary) -> Result<RandomPlacement> {
        let expected = library.fingerprint();
        if self.library_fingerprint != expected {
            return Err(Error::FingerprintMismatch {
                placement: self.library_fingerprint,
                config: expected,
            });
        }
        let RandomPlacement { d2d, sbs } = self.placement;
        let placement = RandomPlacement::new(d2d, sbs)?;
        placement.check_shape(library)?;
        Ok(placement)
    }
}
