//! JSON experiment configuration. Unknown fields are rejected, units are
//! carried in field names and every default is written back out by
//! [`ExperimentConfig::resolved`] so outputs record the exact inputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::content::{build_library, LibraryConfig, VideoLibrary, BITS_PER_MBIT};
use crate::error::{require_at_least, require_positive, Error, Result};
use crate::geometry::{Network, TierConfig, TierKind, TierRates};
use crate::montecarlo::{
    CapacityMode, DeliveryMode, PolicyKind, RateModel, Scenario, SweepAxis, SweepSpec,
};
use crate::optimizer::OptimizerConfig;
use crate::policy::Capacities;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub schema_version: String,
    #[serde(default)]
    pub library: LibraryConfig,
    #[serde(default)]
    pub tiers: TiersConfig,
    #[serde(default)]
    pub radio: RadioConfig,
    #[serde(default)]
    pub cache: CacheConfig,
    #[serde(default)]
    pub delay: DelayConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub trials: TrialsConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn schema_version() -> String {
    SCHEMA_VERSION.to_string()
}

/// Per-tier node parameters. Absent fields take the tier's default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierBlock {
    pub density_per_m2: Option<f64>,
    /// Serving radius; ignored for the MBS tier.
    pub radius_m: Option<f64>,
    pub power_w: Option<f64>,
    pub window_radius_m: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TiersConfig {
    #[serde(default)]
    pub d2d: TierBlock,
    #[serde(default)]
    pub sbs: TierBlock,
    #[serde(default)]
    pub mbs: TierBlock,
}

impl TiersConfig {
    fn defaults(kind: TierKind) -> TierBlock {
        let (density, radius, power, window) = match kind {
            TierKind::D2d => (1e-3, Some(10.0), 0.1, 150.0),
            TierKind::Sbs => (2e-4, Some(30.0), 1.0, 150.0),
            TierKind::Mbs => (2e-5, None, 10.0, 1000.0),
        };
        TierBlock {
            density_per_m2: Some(density),
            radius_m: radius,
            power_w: Some(power),
            window_radius_m: Some(window),
        }
    }

    fn block(&self, kind: TierKind) -> &TierBlock {
        match kind {
            TierKind::D2d => &self.d2d,
            TierKind::Sbs => &self.sbs,
            TierKind::Mbs => &self.mbs,
        }
    }

    fn resolved(&self) -> Self {
        let fill = |kind: TierKind| {
            let b = self.block(kind);
            let d = Self::defaults(kind);
            TierBlock {
                density_per_m2: b.density_per_m2.or(d.density_per_m2),
                radius_m: if kind == TierKind::Mbs {
                    None
                } else {
                    b.radius_m.or(d.radius_m)
                },
                power_w: b.power_w.or(d.power_w),
                window_radius_m: b.window_radius_m.or(d.window_radius_m),
            }
        };
        Self {
            d2d: fill(TierKind::D2d),
            sbs: fill(TierKind::Sbs),
            mbs: fill(TierKind::Mbs),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioConfig {
    #[serde(default = "radio::pathloss_exponent")]
    pub pathloss_exponent: f64,
    #[serde(default = "radio::bandwidth_hz")]
    pub bandwidth_hz: f64,
    #[serde(default = "radio::noise_w")]
    pub noise_w: f64,
    #[serde(default = "radio::min_distance_m")]
    pub min_distance_m: f64,
    /// Floor on per-link spectral efficiency, bit/s/Hz.
    #[serde(default = "radio::min_spectral_efficiency")]
    pub min_spectral_efficiency: f64,
}

mod radio {
    pub fn pathloss_exponent() -> f64 {
        4.0
    }
    pub fn bandwidth_hz() -> f64 {
        1e7
    }
    pub fn noise_w() -> f64 {
        1e-13
    }
    pub fn min_distance_m() -> f64 {
        0.5
    }
    pub fn min_spectral_efficiency() -> f64 {
        0.1
    }
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            pathloss_exponent: radio::pathloss_exponent(),
            bandwidth_hz: radio::bandwidth_hz(),
            noise_w: radio::noise_w(),
            min_distance_m: radio::min_distance_m(),
            min_spectral_efficiency: radio::min_spectral_efficiency(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheConfig {
    #[serde(default = "cache::d2d_mbit")]
    pub d2d_mbit: f64,
    #[serde(default = "cache::sbs_mbit")]
    pub sbs_mbit: f64,
}

mod cache {
    pub fn d2d_mbit() -> f64 {
        200.0
    }
    pub fn sbs_mbit() -> f64 {
        500.0
    }
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            d2d_mbit: cache::d2d_mbit(),
            sbs_mbit: cache::sbs_mbit(),
        }
    }
}

/// Fixed tier rates that replace the estimated ones, Mbit/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateOverride {
    pub d2d: f64,
    pub sbs: f64,
    pub mbs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayConfig {
    #[serde(default = "delay::backhaul_rate_mbps")]
    pub backhaul_rate_mbps: f64,
    /// Link samples per tier for the mean-rate estimate.
    #[serde(default = "delay::rate_samples")]
    pub rate_samples: usize,
    #[serde(default = "delay::rate_seed")]
    pub rate_seed: u64,
    #[serde(default)]
    pub rate_override_mbps: Option<RateOverride>,
}

mod delay {
    pub fn backhaul_rate_mbps() -> f64 {
        20.0
    }
    pub fn rate_samples() -> usize {
        20_000
    }
    pub fn rate_seed() -> u64 {
        7
    }
}

impl Default for DelayConfig {
    fn default() -> Self {
        Self {
            backhaul_rate_mbps: delay::backhaul_rate_mbps(),
            rate_samples: delay::rate_samples(),
            rate_seed: delay::rate_seed(),
            rate_override_mbps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialsConfig {
    #[serde(default = "trials::n_trials")]
    pub n_trials: usize,
    #[serde(default = "trials::seed")]
    pub seed: u64,
    #[serde(default = "trials::modes")]
    pub modes: Vec<DeliveryMode>,
    #[serde(default = "trials::rate_model")]
    pub rate_model: RateModel,
    #[serde(default = "trials::capacity_mode")]
    pub capacity_mode: CapacityMode,
}

mod trials {
    use super::*;

    pub fn n_trials() -> usize {
        10_000
    }
    pub fn seed() -> u64 {
        1
    }
    pub fn modes() -> Vec<DeliveryMode> {
        DeliveryMode::ALL.to_vec()
    }
    pub fn rate_model() -> RateModel {
        RateModel::Sinr
    }
    pub fn capacity_mode() -> CapacityMode {
        CapacityMode::Expected
    }
}

impl Default for TrialsConfig {
    fn default() -> Self {
        Self {
            n_trials: trials::n_trials(),
            seed: trials::seed(),
            modes: trials::modes(),
            rate_model: trials::rate_model(),
            capacity_mode: trials::capacity_mode(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "sweep::backhaul_rate_mbps")]
    pub backhaul_rate_mbps: Vec<f64>,
    #[serde(default = "sweep::sbs_cache_mbit")]
    pub sbs_cache_mbit: Vec<f64>,
    #[serde(default = "sweep::policies")]
    pub policies: Vec<PolicyKind>,
}

mod sweep {
    use super::*;

    pub fn backhaul_rate_mbps() -> Vec<f64> {
        vec![5.0, 10.0, 20.0, 40.0, 80.0]
    }
    pub fn sbs_cache_mbit() -> Vec<f64> {
        vec![100.0, 250.0, 500.0, 750.0, 1000.0]
    }
    pub fn policies() -> Vec<PolicyKind> {
        PolicyKind::ALL.to_vec()
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            backhaul_rate_mbps: sweep::backhaul_rate_mbps(),
            sbs_cache_mbit: sweep::sbs_cache_mbit(),
            policies: sweep::policies(),
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: schema_version(),
            library: LibraryConfig::default(),
            tiers: TiersConfig::default(),
            radio: RadioConfig::default(),
            cache: CacheConfig::default(),
            delay: DelayConfig::default(),
            optimizer: OptimizerConfig::default(),
            trials: TrialsConfig::default(),
            sweep: SweepConfig::default(),
        }
        .resolved()
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self =
            serde_json::from_str(text).map_err(|e| Error::invalid("config", e.to_string()))?;
        let config = config.resolved();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid("config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Copy with every optional tier field filled in.
    pub fn resolved(&self) -> Self {
        Self {
            tiers: self.tiers.resolved(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(
                "schema_version",
                format!(
                    "expected \"{SCHEMA_VERSION}\", got \"{}\"",
                    self.schema_version
                ),
            ));
        }
        build_library(&self.library)?;
        self.network()?.validate()?;
        require_at_least("cache.d2d_mbit", self.cache.d2d_mbit, 0.0)?;
        require_at_least("cache.sbs_mbit", self.cache.sbs_mbit, 0.0)?;
        require_positive("delay.backhaul_rate_mbps", self.delay.backhaul_rate_mbps)?;
        if self.delay.rate_samples == 0 {
            return Err(Error::invalid("delay.rate_samples", "must be >= 1"));
        }
        if let Some(o) = self.delay.rate_override_mbps {
            require_positive("delay.rate_override_mbps.d2d", o.d2d)?;
            require_positive("delay.rate_override_mbps.sbs", o.sbs)?;
            require_positive("delay.rate_override_mbps.mbs", o.mbs)?;
        }
        self.optimizer.validate()?;
        if self.trials.n_trials == 0 {
            return Err(Error::invalid("trials.n_trials", "must be >= 1"));
        }
        if self.trials.modes.is_empty() {
            return Err(Error::invalid("trials.modes", "must not be empty"));
        }
        for (i, &v) in self.sweep.backhaul_rate_mbps.iter().enumerate() {
            require_positive(&format!("sweep.backhaul_rate_mbps[{i}]"), v)?;
        }
        for (i, &v) in self.sweep.sbs_cache_mbit.iter().enumerate() {
            require_at_least(&format!("sweep.sbs_cache_mbit[{i}]"), v, 0.0)?;
        }
        if self.sweep.policies.is_empty() {
            return Err(Error::invalid("sweep.policies", "must not be empty"));
        }
        Ok(())
    }

    pub fn library(&self) -> Result<VideoLibrary> {
        build_library(&self.library)
    }

    pub fn network(&self) -> Result<Network> {
        let tiers = self.tiers.resolved();
        let r = &self.radio;
        let tier = |kind: TierKind| -> Result<TierConfig> {
            let b = tiers.block(kind);
            let missing =
                |field: &str| Error::invalid(format!("tiers.{}.{field}", kind.name()), "missing");
            Ok(TierConfig {
                kind,
                density: b.density_per_m2.ok_or_else(|| missing("density_per_m2"))?,
                radius: b.radius_m,
                power_w: b.power_w.ok_or_else(|| missing("power_w"))?,
                pathloss_exponent: r.pathloss_exponent,
                bandwidth_hz: r.bandwidth_hz,
                noise_w: r.noise_w,
                window_radius: b
                    .window_radius_m
                    .ok_or_else(|| missing("window_radius_m"))?,
                min_distance: r.min_distance_m,
                min_spectral_efficiency: r.min_spectral_efficiency,
            })
        };
        Ok(Network {
            d2d: tier(TierKind::D2d)?,
            sbs: tier(TierKind::Sbs)?,
            mbs: tier(TierKind::Mbs)?,
        })
    }

    pub fn capacities(&self) -> Capacities {
        Capacities {
            d2d_bits: self.cache.d2d_mbit * BITS_PER_MBIT,
            sbs_bits: self.cache.sbs_mbit * BITS_PER_MBIT,
        }
    }

    /// Mean tier rates: the override when present, else the estimate.
    pub fn tier_rates(&self) -> Result<TierRates> {
        match self.delay.rate_override_mbps {
            Some(o) => Ok(TierRates {
                d2d: o.d2d * BITS_PER_MBIT,
                sbs: o.sbs * BITS_PER_MBIT,
                mbs: o.mbs * BITS_PER_MBIT,
            }),
            None => TierRates::estimate(
                &self.network()?,
                self.delay.rate_samples,
                self.delay.rate_seed,
            )
            .map(|(rates, _)| rates),
        }
    }

    pub fn scenario(&self) -> Result<Scenario> {
        Ok(Scenario {
            library: self.library()?,
            network: self.network()?,
            capacities: self.capacities(),
            rates: self.tier_rates()?,
            backhaul_rate: self.delay.backhaul_rate_mbps * BITS_PER_MBIT,
            rate_model: self.trials.rate_model,
            capacity_mode: self.trials.capacity_mode,
        })
    }

    pub fn sweep_spec(&self, axis: SweepAxis) -> SweepSpec {
        SweepSpec {
            axis,
            grid: match axis {
                SweepAxis::BackhaulRate => self.sweep.backhaul_rate_mbps.clone(),
                SweepAxis::SbsCacheSize => self.sweep.sbs_cache_mbit.clone(),
            },
            policies: self.sweep.policies.clone(),
            modes: self.trials.modes.clone(),
            n_trials: self.trials.n_trials,
            seed: self.trials.seed,
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Compact single-line form used in output headers.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
