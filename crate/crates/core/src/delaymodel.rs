//! Analytic expected transmission delay under random caching.
//!
//! A requested layer is fetched from the nearest D2D helper within `r_d`
//! that caches it, else from the nearest caching SBS within `r_s`, else from
//! the MBS, which first pulls it over the backhaul. With tier coverage
//! coefficients `a_t = λ_t π r_t²` the hit probabilities are
//! `h_t = 1 - exp(-a_t p_t)` and the per-layer delay is
//!
//! ```text
//! D = h_d s/R_d + (1-h_d) h_s s/R_s + (1-h_d)(1-h_s) (s/R_m + s/R_bh)
//! ```
//!
//! A request's delay is the sum over its layers.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::content::VideoLibrary;
use crate::error::{require_at_least, require_positive, Error, Result};
use crate::policy::{
    mpcp_no_svc_place, mplp_place, BinaryPlacement, Capacities, FractionalPlacement, LayerMatrix,
    RandomPlacement,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayParams {
    /// Mean downlink rates, bit/s.
    pub rate_d2d: f64,
    pub rate_sbs: f64,
    pub rate_mbs: f64,
    pub rate_backhaul: f64,
    /// Per m².
    pub density_d2d: f64,
    pub radius_d2d: f64,
    pub density_sbs: f64,
    pub radius_sbs: f64,
}

impl DelayParams {
    pub fn validate(&self) -> Result<()> {
        require_positive("delay.rate_d2d", self.rate_d2d)?;
        require_positive("delay.rate_sbs", self.rate_sbs)?;
        require_positive("delay.rate_mbs", self.rate_mbs)?;
        require_positive("delay.backhaul_rate", self.rate_backhaul)?;
        require_at_least("delay.density_d2d", self.density_d2d, 0.0)?;
        require_at_least("delay.density_sbs", self.density_sbs, 0.0)?;
        require_positive("delay.radius_d2d", self.radius_d2d)?;
        require_positive("delay.radius_sbs", self.radius_sbs)
    }

    /// `λ π r²` of the D2D tier.
    pub fn coverage_d2d(&self) -> f64 {
        self.density_d2d * PI * self.radius_d2d * self.radius_d2d
    }

    pub fn coverage_sbs(&self) -> f64 {
        self.density_sbs * PI * self.radius_sbs * self.radius_sbs
    }

    /// Seconds per bit over the MBS downlink plus backhaul.
    pub fn miss_cost(&self) -> f64 {
        1.0 / self.rate_mbs + 1.0 / self.rate_backhaul
    }

    fn costs(&self) -> TierCosts {
        TierCosts {
            d2d: 1.0 / self.rate_d2d,
            sbs: 1.0 / self.rate_sbs,
            miss: self.miss_cost(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct TierCosts {
    d2d: f64,
    sbs: f64,
    miss: f64,
}

impl TierCosts {
    /// Per-bit cascade cost for given hit probabilities.
    fn cascade(&self, h_d: f64, h_s: f64) -> f64 {
        h_d * self.d2d + (1.0 - h_d) * (h_s * self.sbs + (1.0 - h_s) * self.miss)
    }
}

/// Precomputed objective over flattened probability matrices. Entry `i` of
/// each slice is `(file, layer) = (i / L, i % L)`.
#[derive(Debug, Clone)]
pub struct DelayModel {
    /// `layer_request_prob · size`, bits.
    weights: Vec<f64>,
    a_d: f64,
    a_s: f64,
    costs: TierCosts,
}

impl DelayModel {
    pub fn new(library: &VideoLibrary, params: &DelayParams) -> Result<Self> {
        params.validate()?;
        let weights = library
            .request_probs()
            .iter()
            .zip(library.layer_sizes())
            .map(|(p, s)| p * s)
            .collect();
        Ok(Self {
            weights,
            a_d: params.coverage_d2d(),
            a_s: params.coverage_sbs(),
            costs: params.costs(),
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Expected delay in seconds. Accepts any finite input, including points
    /// outside `[0, 1]`, so it can serve finite-difference checks.
    pub fn objective(&self, p_d2d: &[f64], p_sbs: &[f64]) -> f64 {
        let TierCosts { d2d, sbs, miss } = self.costs;
        self.weights
            .iter()
            .zip(p_d2d.iter().zip(p_sbs))
            .map(|(w, (pd, ps))| {
                let e_d = (-self.a_d * pd).exp();
                let e_s = (-self.a_s * ps).exp();
                w * (d2d + e_d * (sbs - d2d) + e_d * e_s * (miss - sbs))
            })
            .sum()
    }

    /// Writes `∂D/∂p` for both tiers into `grad_d2d` / `grad_sbs`.
    pub fn gradient_into(
        &self,
        p_d2d: &[f64],
        p_sbs: &[f64],
        grad_d2d: &mut [f64],
        grad_sbs: &mut [f64],
    ) {
        let TierCosts { d2d, sbs, miss } = self.costs;
        for i in 0..self.weights.len() {
            let w = self.weights[i];
            let e_d = (-self.a_d * p_d2d[i]).exp();
            let e_s = (-self.a_s * p_sbs[i]).exp();
            let tail = e_s * (miss - sbs);
            grad_d2d[i] = -w * self.a_d * e_d * ((sbs - d2d) + tail);
            grad_sbs[i] = -w * self.a_s * e_d * tail;
        }
    }

    pub fn gradient(&self, p_d2d: &[f64], p_sbs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut gd = vec![0.0; self.len()];
        let mut gs = vec![0.0; self.len()];
        self.gradient_into(p_d2d, p_sbs, &mut gd, &mut gs);
        (gd, gs)
    }
}

fn check_placement(placement: &RandomPlacement, library: &VideoLibrary) -> Result<()> {
    placement.check_shape(library)?;
    for (tier, m) in [("d2d", &placement.d2d), ("sbs", &placement.sbs)] {
        if let Some(p) = m.as_slice().iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Infeasible(format!(
                "{tier} probability {p} outside [0, 1]"
            )));
        }
    }
    Ok(())
}

pub fn expected_layer_delay(
    library: &VideoLibrary,
    file: usize,
    layer: usize,
    placement: &RandomPlacement,
    params: &DelayParams,
) -> Result<f64> {
    params.validate()?;
    check_placement(placement, library)?;
    let s = library.layer_size(file, layer)?;
    let h_d = -(-params.coverage_d2d() * placement.d2d.get(file, layer)).exp_m1();
    let h_s = -(-params.coverage_sbs() * placement.sbs.get(file, layer)).exp_m1();
    Ok(s * params.costs().cascade(h_d, h_s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerDelay {
    pub file: usize,
    pub layer: usize,
    pub request_prob: f64,
    pub h_d: f64,
    pub h_s: f64,
    /// Expected delay of the layer when requested, s.
    pub delay: f64,
    /// `request_prob · delay`, s.
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    /// Expected delay per request, s.
    pub total: f64,
    pub breakdown: Vec<LayerDelay>,
}

impl ObjectiveValue {
    /// CSV with columns `file,layer,request_prob,h_d,h_s,delay_contribution`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "file",
            "layer",
            "request_prob",
            "h_d",
            "h_s",
            "delay_contribution",
        ])?;
        for row in &self.breakdown {
            w.write_record([
                row.file.to_string(),
                row.layer.to_string(),
                row.request_prob.to_string(),
                row.h_d.to_string(),
                row.h_s.to_string(),
                row.contribution.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn expected_total_delay(
    placement: &RandomPlacement,
    library: &VideoLibrary,
    params: &DelayParams,
) -> Result<ObjectiveValue> {
    params.validate()?;
    check_placement(placement, library)?;
    let costs = params.costs();
    let (a_d, a_s) = (params.coverage_d2d(), params.coverage_sbs());
    let probs = library.request_probs();
    let layers = library.layers_per_file();
    let breakdown: Vec<LayerDelay> = probs
        .iter()
        .enumerate()
        .map(|(i, &request_prob)| {
            let (file, layer) = (i / layers, i % layers);
            let h_d = -(-a_d * placement.d2d.as_slice()[i]).exp_m1();
            let h_s = -(-a_s * placement.sbs.as_slice()[i]).exp_m1();
            let delay = library.layer_sizes()[i] * costs.cascade(h_d, h_s);
            LayerDelay {
                file,
                layer,
                request_prob,
                h_d,
                h_s,
                delay,
                contribution: request_prob * delay,
            }
        })
        .collect();
    Ok(ObjectiveValue {
        total: breakdown.iter().map(|r| r.contribution).sum(),
        breakdown,
    })
}

/// Per-tier `∂D/∂p` matrices.
pub fn delay_gradient(
    placement: &RandomPlacement,
    library: &VideoLibrary,
    params: &DelayParams,
) -> Result<(LayerMatrix, LayerMatrix)> {
    check_placement(placement, library)?;
    let model = DelayModel::new(library, params)?;
    let (gd, gs) = model.gradient(placement.d2d.as_slice(), placement.sbs.as_slice());
    let (f, l) = (library.file_count(), library.layers_per_file());
    Ok((
        LayerMatrix::from_vec(f, l, gd)?,
        LayerMatrix::from_vec(f, l, gs)?,
    ))
}

/// Reference policies the optimized placement is compared against.
#[derive(Debug, Clone, PartialEq)]
pub enum Baseline {
    /// Nothing cached; every layer crosses the backhaul.
    NoCache,
    /// Most-popular-layer binary placement per tier.
    MplpSvc,
    /// Most-popular whole non-SVC files; users always download the full file.
    MpcpNoSvc,
    /// Arbitrary binary placements evaluated as 0/1 probabilities.
    BinaryAsRandom {
        d2d: BinaryPlacement,
        sbs: BinaryPlacement,
    },
}

impl Baseline {
    pub fn name(&self) -> &'static str {
        match self {
            Baseline::NoCache => "no-cache",
            Baseline::MplpSvc => "mplp-svc",
            Baseline::MpcpNoSvc => "mpcp-no-svc",
            Baseline::BinaryAsRandom { .. } => "binary",
        }
    }
}

/// Random placement equivalent of the MPLP baseline.
pub fn mplp_placement(library: &VideoLibrary, capacities: &Capacities) -> RandomPlacement {
    RandomPlacement {
        d2d: mplp_place(library, capacities.d2d_bits).to_probabilities(),
        sbs: mplp_place(library, capacities.sbs_bits).to_probabilities(),
    }
}

/// Whole-file delay when every user downloads the full non-SVC file.
pub fn no_svc_delay(
    library: &VideoLibrary,
    params: &DelayParams,
    d2d_files: &[bool],
    sbs_files: &[bool],
) -> Result<f64> {
    params.validate()?;
    if d2d_files.len() != library.file_count() || sbs_files.len() != library.file_count() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} file flags", library.file_count()),
            actual: format!("{} / {}", d2d_files.len(), sbs_files.len()),
        });
    }
    let costs = params.costs();
    let h_full_d = -(-params.coverage_d2d()).exp_m1();
    let h_full_s = -(-params.coverage_sbs()).exp_m1();
    let s = library.plain_file_size();
    Ok(library
        .file_probs()
        .iter()
        .enumerate()
        .map(|(f, pf)| {
            let h_d = if d2d_files[f] { h_full_d } else { 0.0 };
            let h_s = if sbs_files[f] { h_full_s } else { 0.0 };
            pf * s * costs.cascade(h_d, h_s)
        })
        .sum())
}

pub fn baseline_delay(
    baseline: &Baseline,
    library: &VideoLibrary,
    params: &DelayParams,
    capacities: &Capacities,
) -> Result<f64> {
    match baseline {
        Baseline::NoCache => {
            params.validate()?;
            let miss = params.miss_cost();
            Ok(library
                .request_probs()
                .iter()
                .zip(library.layer_sizes())
                .map(|(p, s)| p * s * miss)
                .sum())
        }
        Baseline::MplpSvc => {
            expected_total_delay(&mplp_placement(library, capacities), library, params)
                .map(|v| v.total)
        }
        Baseline::MpcpNoSvc => no_svc_delay(
            library,
            params,
            &mpcp_no_svc_place(library, capacities.d2d_bits),
            &mpcp_no_svc_place(library, capacities.sbs_bits),
        ),
        Baseline::BinaryAsRandom { d2d, sbs } => {
            let placement = RandomPlacement::new(d2d.to_probabilities(), sbs.to_probabilities())?;
            expected_total_delay(&placement, library, params).map(|v| v.total)
        }
    }
}

/// Delay under fractional caching: every node of a tier stores the leading
/// `x_t` fraction of each layer. A bit is served by the first tier that
/// stores it and has a node in range, otherwise via MBS and backhaul.
pub fn fractional_delay(
    fractions: &FractionalPlacement,
    library: &VideoLibrary,
    params: &DelayParams,
) -> Result<f64> {
    params.validate()?;
    fractions.d2d.check_shape(library)?;
    fractions.sbs.check_shape(library)?;
    let costs = params.costs();
    let node_d = -(-params.coverage_d2d()).exp_m1();
    let node_s = -(-params.coverage_sbs()).exp_m1();
    let probs = library.request_probs();
    let mut total = 0.0;
    for (i, (&pr, &s)) in probs.iter().zip(library.layer_sizes()).enumerate() {
        let x_d = fractions.d2d.as_slice()[i];
        let x_s = fractions.sbs.as_slice()[i];
        // Integrate the per-bit cascade over [0, 1] piecewise at x_d, x_s.
        let mut cuts = [0.0, x_d.min(x_s), x_d.max(x_s), 1.0];
        cuts.sort_by(f64::total_cmp);
        let mut per_bit = 0.0;
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if hi <= lo {
                continue;
            }
            let mid = 0.5 * (lo + hi);
            let h_d = if mid < x_d { node_d } else { 0.0 };
            let h_s = if mid < x_s { node_s } else { 0.0 };
            per_bit += (hi - lo) * costs.cascade(h_d, h_s);
        }
        total += pr * s * per_bit;
    }
    Ok(total)
}
