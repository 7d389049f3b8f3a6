//! Trial-level simulation of the caching system.
//!
//! Each trial places a typical user at the origin, draws a request
//! `(file, quality)`, samples the three tier PPPs, draws the cache contents
//! of every edge node in serving range and the Rayleigh fading of every
//! node, then serves the request through the D2D → SBS → MBS cascade.
//! Trial `i` uses stream `i` of a ChaCha8 generator seeded with the run
//! seed, so estimates are reproducible and independent of thread count.

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::content::{VideoLibrary, BITS_PER_MBIT};
use crate::delaymodel::{
    baseline_delay, expected_total_delay, mplp_placement, Baseline, DelayParams,
};
use crate::error::{Error, Result};
use crate::geometry::{
    sample_fading, sample_ppp, Network, NetworkRealization, Point, TierConfig, TierKind, TierRates,
};
use crate::optimizer::{optimize_default, OptimizerConfig};
use crate::policy::{
    mpcp_no_svc_place, sample_cache_contents_truncated, Capacities, RandomPlacement,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryMode {
    /// Layers delivered one after another; delays add.
    Sequential,
    /// Layers delivered concurrently on orthogonal resources; the slowest
    /// layer decides.
    ParallelIlt,
    /// Layers `1..q` delivered as one super layer.
    Slt,
}

impl DeliveryMode {
    pub const ALL: [DeliveryMode; 3] = [
        DeliveryMode::Sequential,
        DeliveryMode::ParallelIlt,
        DeliveryMode::Slt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DeliveryMode::Sequential => "sequential",
            DeliveryMode::ParallelIlt => "parallel_ilt",
            DeliveryMode::Slt => "slt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// How link rates are obtained inside a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModel {
    /// `W log2(1 + SINR)` from the sampled geometry and fading.
    Sinr,
    /// The scenario's mean tier rates, identical to the analytic model.
    Fixed,
}

/// Whether per-node capacity holds only in expectation or is enforced on
/// every sampled node by dropping its lowest-probability layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityMode {
    Expected,
    Truncate,
}

/// Caching policy as seen by the simulator.
#[derive(Debug, Clone, PartialEq)]
pub enum CachePolicy {
    /// Per-layer caching probabilities of SVC layers.
    Layered(RandomPlacement),
    /// Per-file caching probabilities of whole non-SVC files. Users always
    /// download the whole file regardless of their quality preference.
    WholeFile { d2d: Vec<f64>, sbs: Vec<f64> },
}

/// Everything a trial needs besides the policy.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub library: VideoLibrary,
    pub network: Network,
    pub capacities: Capacities,
    /// Mean tier rates used by the analytic model and by [`RateModel::Fixed`].
    pub rates: TierRates,
    /// bit/s.
    pub backhaul_rate: f64,
    pub rate_model: RateModel,
    pub capacity_mode: CapacityMode,
}

impl Scenario {
    pub fn delay_params(&self) -> DelayParams {
        DelayParams {
            rate_d2d: self.rates.d2d,
            rate_sbs: self.rates.sbs,
            rate_mbs: self.rates.mbs,
            rate_backhaul: self.backhaul_rate,
            density_d2d: self.network.d2d.density,
            radius_d2d: self.network.d2d.radius.unwrap_or(0.0),
            density_sbs: self.network.sbs.density,
            radius_sbs: self.network.sbs.radius.unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub file: usize,
    /// Number of requested layers, `1..=L`.
    pub quality: usize,
}

/// Edge nodes within serving range of the user, nearest first, with the
/// cached flags of every unit of the requested file (one flag per layer for
/// layered policies, one flag for whole-file policies).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialContents {
    pub d2d: Vec<(usize, Vec<bool>)>,
    pub sbs: Vec<(usize, Vec<bool>)>,
}

/// Fading power gain of every node of the realization.
#[derive(Debug, Clone, PartialEq)]
pub struct Fading {
    pub d2d: Vec<f64>,
    pub sbs: Vec<f64>,
    pub mbs: Vec<f64>,
}

impl Fading {
    pub fn sample<R: Rng + ?Sized>(realization: &NetworkRealization, rng: &mut R) -> Self {
        let mut draw = |pts: &[Point]| pts.iter().map(|_| sample_fading(rng)).collect();
        Self {
            d2d: draw(&realization.d2d),
            sbs: draw(&realization.sbs),
            mbs: draw(&realization.mbs),
        }
    }

    /// Unit gain on every link.
    pub fn unit(realization: &NetworkRealization) -> Self {
        Self {
            d2d: vec![1.0; realization.d2d.len()],
            sbs: vec![1.0; realization.sbs.len()],
            mbs: vec![1.0; realization.mbs.len()],
        }
    }

    fn gains(&self, kind: TierKind) -> &[f64] {
        match kind {
            TierKind::D2d => &self.d2d,
            TierKind::Sbs => &self.sbs,
            TierKind::Mbs => &self.mbs,
        }
    }
}

fn distance(p: &Point) -> f64 {
    p[0].hypot(p[1])
}

/// Indices of nodes within `radius`, nearest first.
fn in_range(points: &[Point], radius: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len())
        .filter(|&i| distance(&points[i]) <= radius)
        .collect();
    idx.sort_by(|&a, &b| distance(&points[a]).total_cmp(&distance(&points[b])));
    idx
}

/// Draws the cache contents of every in-range edge node for the units of
/// `request.file`. Layers of a node are independent Bernoulli draws, so only
/// the requested file's row is sampled unless hard capacity is enforced.
pub fn sample_trial_contents<R: Rng + ?Sized>(
    scenario: &Scenario,
    policy: &CachePolicy,
    realization: &NetworkRealization,
    request: Request,
    rng: &mut R,
) -> TrialContents {
    let mut tier_contents = |kind: TierKind| -> Vec<(usize, Vec<bool>)> {
        let tier = scenario.network.tier(kind);
        let radius = tier.radius.unwrap_or(0.0);
        in_range(realization.points(kind), radius)
            .into_iter()
            .map(|node| {
                let flags = match policy {
                    CachePolicy::Layered(p) => {
                        let (matrix, cap) = match kind {
                            TierKind::D2d => (&p.d2d, scenario.capacities.d2d_bits),
                            _ => (&p.sbs, scenario.capacities.sbs_bits),
                        };
                        match scenario.capacity_mode {
                            CapacityMode::Expected => (0..matrix.layers())
                                .map(|l| rng.random::<f64>() < matrix.get(request.file, l))
                                .collect(),
                            CapacityMode::Truncate => {
                                let node = sample_cache_contents_truncated(
                                    matrix,
                                    scenario.library.layer_sizes(),
                                    cap,
                                    rng,
                                );
                                (0..matrix.layers())
                                    .map(|l| node.is_cached(request.file, l))
                                    .collect()
                            }
                        }
                    }
                    CachePolicy::WholeFile { d2d, sbs } => {
                        let p = match kind {
                            TierKind::D2d => d2d[request.file],
                            _ => sbs[request.file],
                        };
                        vec![rng.random::<f64>() < p]
                    }
                };
                (node, flags)
            })
            .collect()
    };
    let d2d = tier_contents(TierKind::D2d);
    let sbs = tier_contents(TierKind::Sbs);
    TrialContents { d2d, sbs }
}

/// A delivery unit: its size and which content flags must all be set for a
/// node to hold it.
struct Unit {
    size: f64,
    flags: std::ops::Range<usize>,
}

fn request_units(
    scenario: &Scenario,
    policy: &CachePolicy,
    request: Request,
    mode: DeliveryMode,
) -> Vec<Unit> {
    let lib = &scenario.library;
    match policy {
        CachePolicy::WholeFile { .. } => vec![Unit {
            size: lib.plain_file_size(),
            flags: 0..1,
        }],
        CachePolicy::Layered(_) => {
            let row = &lib.layer_sizes()
                [request.file * lib.layers_per_file()..(request.file + 1) * lib.layers_per_file()];
            match mode {
                DeliveryMode::Slt => vec![Unit {
                    size: row[..request.quality].iter().sum(),
                    flags: 0..request.quality,
                }],
                _ => (0..request.quality)
                    .map(|l| Unit {
                        size: row[l],
                        flags: l..l + 1,
                    })
                    .collect(),
            }
        }
    }
}

/// Rate of the link from `node` of `kind`, bit/s.
fn link_rate(
    scenario: &Scenario,
    realization: &NetworkRealization,
    fading: &Fading,
    kind: TierKind,
    node: Option<usize>,
) -> f64 {
    if scenario.rate_model == RateModel::Fixed {
        return scenario.rates.get(kind);
    }
    let tier: &TierConfig = scenario.network.tier(kind);
    let points = realization.points(kind);
    let gains = fading.gains(kind);
    let Some(node) = node else {
        // No node in the window: serve from its edge without interference.
        return tier.bandwidth_hz
            * tier.spectral_efficiency(tier.mean_rx_power(tier.window_radius) / tier.noise_w);
    };
    let mut serving = 0.0;
    let mut interference = 0.0;
    for (i, (p, g)) in points.iter().zip(gains).enumerate() {
        let rx = tier.mean_rx_power(distance(p)) * g;
        if i == node {
            serving = rx;
        } else {
            interference += rx;
        }
    }
    tier.bandwidth_hz * tier.spectral_efficiency(serving / (interference + tier.noise_w))
}

/// Delay of one request in one sampled trial, seconds.
///
/// Each unit goes to the nearest in-range D2D node holding it, else the
/// nearest in-range SBS holding it, else the nearest MBS, which adds the
/// backhaul transfer.
pub fn run_trial(
    scenario: &Scenario,
    policy: &CachePolicy,
    realization: &NetworkRealization,
    fading: &Fading,
    contents: &TrialContents,
    request: Request,
    mode: DeliveryMode,
) -> Result<f64> {
    let lib = &scenario.library;
    if request.file >= lib.file_count() {
        return Err(Error::IndexOutOfRange {
            what: "file",
            index: request.file,
            len: lib.file_count(),
        });
    }
    if request.quality == 0 || request.quality > lib.layers_per_file() {
        return Err(Error::IndexOutOfRange {
            what: "quality",
            index: request.quality,
            len: lib.layers_per_file() + 1,
        });
    }
    let holds = |flags: &[bool], unit: &Unit| flags[unit.flags.clone()].iter().all(|&f| f);
    let nearest_mbs = (0..realization.mbs.len())
        .min_by(|&a, &b| distance(&realization.mbs[a]).total_cmp(&distance(&realization.mbs[b])));

    let mut total = 0.0;
    let mut slowest = 0.0f64;
    for unit in request_units(scenario, policy, request, mode) {
        let delay = if let Some((node, _)) = contents.d2d.iter().find(|(_, f)| holds(f, &unit)) {
            unit.size / link_rate(scenario, realization, fading, TierKind::D2d, Some(*node))
        } else if let Some((node, _)) = contents.sbs.iter().find(|(_, f)| holds(f, &unit)) {
            unit.size / link_rate(scenario, realization, fading, TierKind::Sbs, Some(*node))
        } else {
            unit.size / link_rate(scenario, realization, fading, TierKind::Mbs, nearest_mbs)
                + unit.size / scenario.backhaul_rate
        };
        total += delay;
        slowest = slowest.max(delay);
    }
    Ok(match mode {
        DeliveryMode::ParallelIlt => slowest,
        _ => total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub n_trials: usize,
    pub seed: u64,
    pub mode: DeliveryMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayEstimate {
    /// Seconds.
    pub mean: f64,
    pub std_error: f64,
    /// `1.96 · std_error`.
    pub ci95_half_width: f64,
    pub n_trials: usize,
    /// Set when a single trial makes the standard error meaningless.
    pub degenerate: bool,
}

impl DelayEstimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        let mean = neumaier_sum(values.iter().copied()) / n as f64;
        let std_error = if n > 1 {
            let ss = neumaier_sum(values.iter().map(|v| (v - mean) * (v - mean)));
            (ss / (n - 1) as f64 / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std_error,
            ci95_half_width: 1.96 * std_error,
            n_trials: n,
            degenerate: n <= 1,
        }
    }

    pub fn ci(&self) -> (f64, f64) {
        (
            self.mean - self.ci95_half_width,
            self.mean + self.ci95_half_width,
        )
    }
}

/// Compensated summation; with a fixed input order the result is bitwise
/// reproducible.
fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Generator of trial `trial` under run seed `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

pub(crate) struct RequestSampler {
    files: WeightedIndex<f64>,
    quality: WeightedIndex<f64>,
}

impl RequestSampler {
    pub(crate) fn new(library: &VideoLibrary) -> Result<Self> {
        let err =
            |e: rand::distr::weighted::Error| Error::invalid("request distribution", e.to_string());
        Ok(Self {
            files: WeightedIndex::new(library.file_probs()).map_err(err)?,
            quality: WeightedIndex::new(library.preference().pmf()).map_err(err)?,
        })
    }

    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Request {
        Request {
            file: self.files.sample(rng),
            quality: self.quality.sample(rng) + 1,
        }
    }
}

fn check_policy(scenario: &Scenario, policy: &CachePolicy) -> Result<()> {
    let lib = &scenario.library;
    match policy {
        CachePolicy::Layered(p) => p.check_shape(lib),
        CachePolicy::WholeFile { d2d, sbs } => {
            if d2d.len() != lib.file_count() || sbs.len() != lib.file_count() {
                return Err(Error::DimensionMismatch {
                    expected: format!("{} file probabilities", lib.file_count()),
                    actual: format!("{} / {}", d2d.len(), sbs.len()),
                });
            }
            Ok(())
        }
    }
}

/// Mean request delay over `config.n_trials` independent trials.
pub fn estimate_delay(
    scenario: &Scenario,
    policy: &CachePolicy,
    config: &TrialConfig,
) -> Result<DelayEstimate> {
    if config.n_trials == 0 {
        return Err(Error::invalid("trials.n_trials", "must be >= 1"));
    }
    scenario.network.validate()?;
    scenario.network.check_sampleable()?;
    check_policy(scenario, policy)?;
    let sampler = RequestSampler::new(&scenario.library)?;
    let delays: Vec<f64> = (0..config.n_trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(config.seed, trial);
            let request = sampler.sample(&mut rng);
            let realization = NetworkRealization::sample(&scenario.network, &mut rng);
            let contents = sample_trial_contents(scenario, policy, &realization, request, &mut rng);
            let fading = match scenario.rate_model {
                RateModel::Sinr => Fading::sample(&realization, &mut rng),
                RateModel::Fixed => Fading::unit(&realization),
            };
            run_trial(
                scenario,
                policy,
                &realization,
                &fading,
                &contents,
                request,
                config.mode,
            )
        })
        .collect::<Result<_>>()?;
    Ok(DelayEstimate::from_samples(&delays))
}

/// Fraction of trials in which a `p`-thinned PPP of intensity `density` has
/// a point within `radius`, with its standard error.
pub fn estimate_hit_frequency(
    density: f64,
    p: f64,
    radius: f64,
    n_trials: usize,
    seed: u64,
) -> (f64, f64) {
    let hits: usize = (0..n_trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, trial);
            let pts = sample_ppp(density, radius, &mut rng);
            usize::from(
                pts.iter()
                    .fold(false, |hit, _| rng.random::<f64>() < p || hit),
            )
        })
        .sum();
    let freq = hits as f64 / n_trials as f64;
    (freq, (freq * (1.0 - freq) / n_trials as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    NoCache,
    MpcpNoSvc,
    MplpSvc,
    RandomSvc,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::NoCache,
        PolicyKind::MpcpNoSvc,
        PolicyKind::MplpSvc,
        PolicyKind::RandomSvc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::NoCache => "no-cache",
            PolicyKind::MpcpNoSvc => "mpcp-no-svc",
            PolicyKind::MplpSvc => "mplp-svc",
            PolicyKind::RandomSvc => "random-svc",
        }
    }
}

/// Builds the placement of a policy for a scenario. `RandomSvc` runs the
/// optimizer unless `placement` supplies one.
pub fn policy_for(
    scenario: &Scenario,
    kind: PolicyKind,
    optimizer: &OptimizerConfig,
    placement: Option<&RandomPlacement>,
) -> Result<CachePolicy> {
    let lib = &scenario.library;
    Ok(match kind {
        PolicyKind::NoCache => CachePolicy::Layered(RandomPlacement::zeros(lib)),
        PolicyKind::MplpSvc => CachePolicy::Layered(mplp_placement(lib, &scenario.capacities)),
        PolicyKind::MpcpNoSvc => {
            let flags = |c: f64| {
                mpcp_no_svc_place(lib, c)
                    .into_iter()
                    .map(|b| f64::from(u8::from(b)))
                    .collect()
            };
            CachePolicy::WholeFile {
                d2d: flags(scenario.capacities.d2d_bits),
                sbs: flags(scenario.capacities.sbs_bits),
            }
        }
        PolicyKind::RandomSvc => match placement {
            Some(p) => CachePolicy::Layered(p.clone()),
            None => {
                let (p, _) = optimize_default(
                    lib,
                    &scenario.delay_params(),
                    &scenario.capacities,
                    optimizer,
                )?;
                CachePolicy::Layered(p)
            }
        },
    })
}

/// Analytic expected delay of a policy (sum over a request's layers).
pub fn analytic_delay(scenario: &Scenario, policy: &CachePolicy) -> Result<f64> {
    let params = scenario.delay_params();
    let lib = &scenario.library;
    match policy {
        CachePolicy::Layered(p) => expected_total_delay(p, lib, &params).map(|v| v.total),
        CachePolicy::WholeFile { d2d, sbs } => {
            if d2d.iter().chain(sbs).any(|&p| p != 0.0 && p != 1.0) {
                return Err(Error::invalid(
                    "policy",
                    "analytic whole-file delay needs 0/1 file placements",
                ));
            }
            crate::delaymodel::no_svc_delay(
                lib,
                &params,
                &d2d.iter().map(|&p| p == 1.0).collect::<Vec<_>>(),
                &sbs.iter().map(|&p| p == 1.0).collect::<Vec<_>>(),
            )
        }
    }
}

/// Analytic delay of a baseline, straight from the delay model.
pub fn analytic_baseline(scenario: &Scenario, baseline: &Baseline) -> Result<f64> {
    baseline_delay(
        baseline,
        &scenario.library,
        &scenario.delay_params(),
        &scenario.capacities,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    BackhaulRate,
    SbsCacheSize,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::BackhaulRate => "backhaul_rate",
            SweepAxis::SbsCacheSize => "sbs_cache_size",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [SweepAxis::BackhaulRate, SweepAxis::SbsCacheSize]
            .into_iter()
            .find(|a| a.name() == s)
    }

    /// Scenario with the axis set to `value` (Mbit/s or Mbit).
    pub fn apply(self, scenario: &Scenario, value: f64) -> Result<Scenario> {
        let mut s = scenario.clone();
        match self {
            SweepAxis::BackhaulRate => {
                crate::error::require_positive("sweep.backhaul_rate_mbps", value)?;
                s.backhaul_rate = value * BITS_PER_MBIT;
            }
            SweepAxis::SbsCacheSize => {
                crate::error::require_at_least("sweep.sbs_cache_mbit", value, 0.0)?;
                s.capacities.sbs_bits = value * BITS_PER_MBIT;
            }
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub axis_value: f64,
    pub policy: PolicyKind,
    pub mode: DeliveryMode,
    /// Analytic (sum-over-layers) delay; only reported for sequential rows.
    pub analytic_delay_s: Option<f64>,
    pub mc: DelayEstimate,
    pub seed: u64,
}

/// Grid and evaluation settings of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    /// Mbit/s for the backhaul axis, Mbit for the cache axis.
    pub grid: Vec<f64>,
    pub policies: Vec<PolicyKind>,
    pub modes: Vec<DeliveryMode>,
    pub n_trials: usize,
    pub seed: u64,
}

/// Evaluates every policy under every mode at each grid point, re-optimizing
/// the random placement per point. Every point and policy reuses the same
/// trial seed. Rows are sorted by axis value, policy, mode.
pub fn sweep(
    scenario: &Scenario,
    spec: &SweepSpec,
    optimizer: &OptimizerConfig,
) -> Result<Vec<SweepRow>> {
    let SweepSpec {
        axis,
        ref grid,
        ref policies,
        ref modes,
        n_trials,
        seed,
    } = *spec;
    if grid.is_empty() {
        return Err(Error::invalid(
            format!("sweep.{}", axis.name()),
            "grid is empty",
        ));
    }
    let mut rows = Vec::new();
    for &value in grid.iter() {
        let point = axis.apply(scenario, value)?;
        for &kind in policies.iter() {
            let policy = policy_for(&point, kind, optimizer, None)?;
            let analytic = analytic_delay(&point, &policy)?;
            for &mode in modes.iter() {
                let mc = estimate_delay(
                    &point,
                    &policy,
                    &TrialConfig {
                        n_trials,
                        seed,
                        mode,
                    },
                )?;
                rows.push(SweepRow {
                    axis,
                    axis_value: value,
                    policy: kind,
                    mode,
                    analytic_delay_s: (mode == DeliveryMode::Sequential).then_some(analytic),
                    mc,
                    seed,
                });
            }
        }
    }
    rows.sort_by(|a, b| {
        a.axis_value
            .total_cmp(&b.axis_value)
            .then(a.policy.cmp(&b.policy))
            .then(a.mode.cmp(&b.mode))
    });
    Ok(rows)
}

/// Writes sweep rows with the columns
/// `axis_name,axis_value,policy,mode,analytic_delay_s,mc_delay_s,mc_stderr_s,n_trials,seed`.
pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "axis_name",
        "axis_value",
        "policy",
        "mode",
        "analytic_delay_s",
        "mc_delay_s",
        "mc_stderr_s",
        "n_trials",
        "seed",
    ])?;
    for r in rows {
        w.write_record([
            r.axis.name().to_string(),
            r.axis_value.to_string(),
            r.policy.name().to_string(),
            r.mode.name().to_string(),
            r.analytic_delay_s
                .map(|v| v.to_string())
                .unwrap_or_default(),
            r.mc.mean.to_string(),
            r.mc.std_error.to_string(),
            r.mc.n_trials.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::content::{PopularityModel, QualityPreference};
    use crate::delaymodel::tests::params;
    use crate::geometry::hit_probability;
    use crate::geometry::tests::tier;

    pub(crate) fn network() -> Network {
        let mut mbs = tier(TierKind::Mbs, 1e-5, None);
        mbs.window_radius = 1000.0;
        Network {
            d2d: tier(TierKind::D2d, 1e-3, Some(10.0)),
            sbs: tier(TierKind::Sbs, 2e-4, Some(30.0)),
            mbs,
        }
    }

    pub(crate) fn scenario(preference: QualityPreference, rate_model: RateModel) -> Scenario {
        let layers = preference.levels();
        let p = params(10e6);
        Scenario {
            library: VideoLibrary::uniform(
                6,
                layers,
                4e6,
                10e6,
                PopularityModel::default(),
                preference,
            )
            .unwrap(),
            network: network(),
            capacities: Capacities {
                d2d_bits: 8e6,
                sbs_bits: 20e6,
            },
            rates: TierRates {
                d2d: p.rate_d2d,
                sbs: p.rate_sbs,
                mbs: p.rate_mbs,
            },
            backhaul_rate: p.rate_backhaul,
            rate_model,
            capacity_mode: CapacityMode::Expected,
        }
    }

    fn geometric(levels: usize) -> QualityPreference {
        QualityPreference::truncated_geometric(levels, 0.7).unwrap()
    }

    fn trials(n_trials: usize, seed: u64, mode: DeliveryMode) -> TrialConfig {
        TrialConfig {
            n_trials,
            seed,
            mode,
        }
    }

    #[test]
    fn single_link_matches_closed_form() {
        let s = scenario(geometric(3), RateModel::Sinr);
        let realization = NetworkRealization {
            seed: None,
            d2d: vec![[3.0, 4.0]],
            sbs: vec![],
            mbs: vec![[400.0, 0.0]],
        };
        let fading = Fading::unit(&realization);
        let contents = TrialContents {
            d2d: vec![(0, vec![true; 3])],
            sbs: vec![],
        };
        let policy = CachePolicy::Layered(RandomPlacement::zeros(&s.library));
        let request = Request {
            file: 2,
            quality: 2,
        };
        let got = run_trial(
            &s,
            &policy,
            &realization,
            &fading,
            &contents,
            request,
            DeliveryMode::Sequential,
        )
        .unwrap();
        let snr = 5f64.powi(-4) / 1e-13;
        let rate = 1e7 * (1.0 + snr).log2();
        approx::assert_relative_eq!(got, 2.0 * 4e6 / rate, max_relative = 1e-12);
    }

    #[test]
    fn all_miss_pays_mbs_and_backhaul_per_layer() {
        let s = scenario(geometric(3), RateModel::Fixed);
        let policy = CachePolicy::Layered(RandomPlacement::zeros(&s.library));
        let mut rng = trial_rng(5, 0);
        let sampler = RequestSampler::new(&s.library).unwrap();
        for _ in 0..50 {
            let request = sampler.sample(&mut rng);
            let realization = NetworkRealization::sample(&s.network, &mut rng);
            let contents = sample_trial_contents(&s, &policy, &realization, request, &mut rng);
            let fading = Fading::unit(&realization);
            let got = run_trial(
                &s,
                &policy,
                &realization,
                &fading,
                &contents,
                request,
                DeliveryMode::Sequential,
            )
            .unwrap();
            let per_layer = 4e6 / s.rates.mbs + 4e6 / s.backhaul_rate;
            approx::assert_relative_eq!(
                got,
                request.quality as f64 * per_layer,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn run_trial_rejects_bad_request() {
        let s = scenario(geometric(3), RateModel::Fixed);
        let policy = CachePolicy::Layered(RandomPlacement::zeros(&s.library));
        let r = NetworkRealization::from_seed(&s.network, 1);
        let f = Fading::unit(&r);
        let c = TrialContents::default();
        for request in [
            Request {
                file: 6,
                quality: 1,
            },
            Request {
                file: 0,
                quality: 0,
            },
            Request {
                file: 0,
                quality: 4,
            },
        ] {
            assert!(run_trial(&s, &policy, &r, &f, &c, request, DeliveryMode::Slt).is_err());
        }
    }

    #[test]
    fn parallel_never_slower_than_sequential() {
        let s = scenario(geometric(4), RateModel::Sinr);
        let policy = CachePolicy::Layered(RandomPlacement::uniform_saturating(
            &s.library,
            &s.capacities,
        ));
        let sampler = RequestSampler::new(&s.library).unwrap();
        for trial in 0..300 {
            let mut rng = trial_rng(11, trial);
            let request = sampler.sample(&mut rng);
            let realization = NetworkRealization::sample(&s.network, &mut rng);
            let contents = sample_trial_contents(&s, &policy, &realization, request, &mut rng);
            let fading = Fading::sample(&realization, &mut rng);
            let run = |mode| {
                run_trial(&s, &policy, &realization, &fading, &contents, request, mode).unwrap()
            };
            assert!(run(DeliveryMode::ParallelIlt) <= run(DeliveryMode::Sequential));
        }
    }

    #[test]
    fn slt_equals_sequential_for_single_layer_requests() {
        let s = scenario(
            QualityPreference::point_mass(3, 1).unwrap(),
            RateModel::Sinr,
        );
        let policy = CachePolicy::Layered(RandomPlacement::uniform_saturating(
            &s.library,
            &s.capacities,
        ));
        let seq = estimate_delay(&s, &policy, &trials(2000, 3, DeliveryMode::Sequential)).unwrap();
        let slt = estimate_delay(&s, &policy, &trials(2000, 3, DeliveryMode::Slt)).unwrap();
        assert_eq!(seq, slt);
    }

    #[test]
    fn estimates_are_reproducible_across_thread_counts() {
        let s = scenario(geometric(3), RateModel::Sinr);
        let policy = CachePolicy::Layered(RandomPlacement::uniform_saturating(
            &s.library,
            &s.capacities,
        ));
        let cfg = trials(3000, 42, DeliveryMode::ParallelIlt);
        let run_with = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_delay(&s, &policy, &cfg).unwrap())
        };
        let a = run_with(1);
        assert_eq!(a, run_with(4));
        assert_eq!(a, estimate_delay(&s, &policy, &cfg).unwrap());
        assert_ne!(
            a,
            estimate_delay(&s, &policy, &trials(3000, 43, cfg.mode)).unwrap()
        );
    }

    #[test]
    fn standard_error_shrinks_as_inverse_sqrt() {
        let s = scenario(geometric(3), RateModel::Fixed);
        let policy = CachePolicy::Layered(RandomPlacement::uniform_saturating(
            &s.library,
            &s.capacities,
        ));
        let small =
            estimate_delay(&s, &policy, &trials(4000, 8, DeliveryMode::Sequential)).unwrap();
        let large =
            estimate_delay(&s, &policy, &trials(16_000, 8, DeliveryMode::Sequential)).unwrap();
        let ratio = small.std_error / large.std_error;
        assert!((ratio - 2.0).abs() < 0.2, "ratio {ratio}");
        approx::assert_relative_eq!(small.ci95_half_width, 1.96 * small.std_error);
        assert!(!small.degenerate);
    }

    #[test]
    fn single_trial_is_degenerate() {
        let s = scenario(geometric(3), RateModel::Fixed);
        let policy = CachePolicy::Layered(RandomPlacement::zeros(&s.library));
        let est = estimate_delay(&s, &policy, &trials(1, 0, DeliveryMode::Sequential)).unwrap();
        assert!(est.degenerate);
        assert_eq!(est.std_error, 0.0);
        assert!(estimate_delay(&s, &policy, &trials(0, 0, DeliveryMode::Sequential)).is_err());
    }

    #[test]
    fn hit_frequency_matches_closed_form() {
        for (density, p, radius) in [(1e-3, 0.4, 10.0), (2e-4, 0.9, 30.0), (1e-3, 0.0, 10.0)] {
            let (freq, se) = estimate_hit_frequency(density, p, radius, 40_000, 17);
            let exact = hit_probability(density, p, radius).unwrap();
            assert!(
                (freq - exact).abs() <= 3.0 * se.max(1e-12),
                "{freq} vs {exact} (se {se})"
            );
        }
    }

    #[test]
    fn fixed_rate_estimate_agrees_with_analytic_delay() {
        let s = scenario(geometric(3), RateModel::Fixed);
        let placement = RandomPlacement::uniform_saturating(&s.library, &s.capacities);
        let policy = CachePolicy::Layered(placement);
        let analytic = analytic_delay(&s, &policy).unwrap();
        let est =
            estimate_delay(&s, &policy, &trials(40_000, 21, DeliveryMode::Sequential)).unwrap();
        assert!(
            (est.mean - analytic).abs() <= 3.0 * est.std_error,
            "{} ± {} vs {analytic}",
            est.mean,
            est.std_error
        );
    }

    #[test]
    fn whole_file_estimate_agrees_with_no_svc_delay() {
        let s = scenario(geometric(3), RateModel::Fixed);
        let policy =
            policy_for(&s, PolicyKind::MpcpNoSvc, &OptimizerConfig::default(), None).unwrap();
        let analytic = analytic_delay(&s, &policy).unwrap();
        approx::assert_relative_eq!(
            analytic,
            analytic_baseline(&s, &Baseline::MpcpNoSvc).unwrap(),
            max_relative = 1e-12
        );
        let est =
            estimate_delay(&s, &policy, &trials(40_000, 4, DeliveryMode::Sequential)).unwrap();
        assert!((est.mean - analytic).abs() <= 3.0 * est.std_error);
    }

    #[test]
    fn truncation_only_removes_hits() {
        let mut s = scenario(geometric(3), RateModel::Fixed);
        s.capacity_mode = CapacityMode::Truncate;
        let policy = CachePolicy::Layered(RandomPlacement::uniform_saturating(
            &s.library,
            &s.capacities,
        ));
        let truncated =
            estimate_delay(&s, &policy, &trials(5000, 2, DeliveryMode::Sequential)).unwrap();
        s.capacity_mode = CapacityMode::Expected;
        let loose =
            estimate_delay(&s, &policy, &trials(5000, 2, DeliveryMode::Sequential)).unwrap();
        // dropping layers can only remove hits
        assert!(truncated.mean >= loose.mean - 4.0 * loose.std_error);
    }

    #[test]
    fn sweep_rows_sorted_and_csv_shaped() {
        let s = scenario(geometric(2), RateModel::Fixed);
        let spec = SweepSpec {
            axis: SweepAxis::BackhaulRate,
            grid: vec![40.0, 5.0],
            policies: PolicyKind::ALL.to_vec(),
            modes: DeliveryMode::ALL.to_vec(),
            n_trials: 200,
            seed: 1,
        };
        let rows = sweep(&s, &spec, &OptimizerConfig::default()).unwrap();
        assert_eq!(rows.len(), 2 * 4 * 3);
        assert_eq!(rows[0].axis_value, 5.0);
        for r in &rows {
            assert_eq!(
                r.analytic_delay_s.is_some(),
                r.mode == DeliveryMode::Sequential
            );
        }
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "axis_name,axis_value,policy,mode,analytic_delay_s,mc_delay_s,mc_stderr_s,n_trials,seed"
        );
        assert_eq!(text.lines().count(), 25);
    }
}
