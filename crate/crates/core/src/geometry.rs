//! Three-tier Poisson network geometry and the radio link model.
//!
//! Nodes of each tier form a homogeneous PPP on a disk window centred on the
//! typical user at the origin. Links see `d^-alpha` pathloss, Rayleigh
//! fading (exponential power gain) and co-channel interference from the
//! other nodes of the same tier. Tiers use orthogonal spectrum.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{require_at_least, require_positive, require_probability, Error, Result};

pub type Point = [f64; 2];

/// Largest mean node count of a sampling window.
pub const MAX_EXPECTED_POINTS: f64 = 1e7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TierKind {
    D2d,
    Sbs,
    Mbs,
}

impl TierKind {
    pub fn name(self) -> &'static str {
        match self {
            TierKind::D2d => "d2d",
            TierKind::Sbs => "sbs",
            TierKind::Mbs => "mbs",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierConfig {
    pub kind: TierKind,
    /// Nodes per m².
    pub density: f64,
    /// Serving radius in m; `None` for the MBS tier, which serves from the
    /// nearest node at any distance.
    pub radius: Option<f64>,
    pub power_w: f64,
    pub pathloss_exponent: f64,
    pub bandwidth_hz: f64,
    pub noise_w: f64,
    /// Radius of the sampling window; interference beyond it is dropped.
    pub window_radius: f64,
    /// Serving distances are clamped to at least this value.
    pub min_distance: f64,
    /// Lowest spectral efficiency a link can run at, bit/s/Hz.
    pub min_spectral_efficiency: f64,
}

impl TierConfig {
    pub fn validate(&self) -> Result<()> {
        let name = self.kind.name();
        require_positive(&format!("tiers.{name}.density_per_m2"), self.density)?;
        match (self.kind, self.radius) {
            (TierKind::Mbs, _) => {}
            (_, Some(r)) => require_positive(&format!("tiers.{name}.radius_m"), r)?,
            (_, None) => {
                return Err(Error::invalid(
                    format!("tiers.{name}.radius_m"),
                    "edge tiers need a serving radius",
                ))
            }
        }
        require_positive(&format!("tiers.{name}.power_w"), self.power_w)?;
        if !(self.pathloss_exponent.is_finite() && self.pathloss_exponent > 2.0) {
            return Err(Error::invalid(
                "radio.pathloss_exponent",
                format!("must be > 2, got {}", self.pathloss_exponent),
            ));
        }
        require_positive("radio.bandwidth_hz", self.bandwidth_hz)?;
        require_positive("radio.noise_w", self.noise_w)?;
        require_positive(&format!("tiers.{name}.window_radius_m"), self.window_radius)?;
        if let Some(r) = self.radius {
            if r > self.window_radius {
                return Err(Error::invalid(
                    format!("tiers.{name}.window_radius_m"),
                    "must cover the serving radius",
                ));
            }
        }
        require_positive("radio.min_distance_m", self.min_distance)?;
        require_at_least(
            "radio.min_spectral_efficiency",
            self.min_spectral_efficiency,
            0.0,
        )?;
        Ok(())
    }

    /// Mean power received from a node at distance `d` before fading.
    pub fn mean_rx_power(&self, d: f64) -> f64 {
        self.power_w * self.clamped_gain(d)
    }

    fn clamped_gain(&self, d: f64) -> f64 {
        d.max(self.min_distance).powf(-self.pathloss_exponent)
    }

    pub fn spectral_efficiency(&self, sinr: f64) -> f64 {
        (1.0 + sinr).log2().max(self.min_spectral_efficiency)
    }
}

/// The three tiers of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub d2d: TierConfig,
    pub sbs: TierConfig,
    pub mbs: TierConfig,
}

impl Network {
    pub fn validate(&self) -> Result<()> {
        for (tier, kind) in [
            (&self.d2d, TierKind::D2d),
            (&self.sbs, TierKind::Sbs),
            (&self.mbs, TierKind::Mbs),
        ] {
            if tier.kind != kind {
                return Err(Error::invalid(
                    format!("tiers.{}", kind.name()),
                    format!("holds a {} tier", tier.kind.name()),
                ));
            }
            tier.validate()?;
        }
        if !(self.d2d.density > self.sbs.density && self.sbs.density > self.mbs.density) {
            return Err(Error::invalid(
                "tiers",
                "densities must satisfy d2d > sbs > mbs",
            ));
        }
        Ok(())
    }

    /// Rejects windows whose expected point count is too large to sample.
    pub fn check_sampleable(&self) -> Result<()> {
        for tier in [&self.d2d, &self.sbs, &self.mbs] {
            let mean = tier.density * PI * tier.window_radius * tier.window_radius;
            if !(mean.is_finite() && mean <= MAX_EXPECTED_POINTS) {
                return Err(Error::invalid(
                    format!("tiers.{}.window_radius_m", tier.kind.name()),
                    format!("window holds {mean:e} nodes on average; at most {MAX_EXPECTED_POINTS:e} can be sampled"),
                ));
            }
        }
        Ok(())
    }

    pub fn tier(&self, kind: TierKind) -> &TierConfig {
        match kind {
            TierKind::D2d => &self.d2d,
            TierKind::Sbs => &self.sbs,
            TierKind::Mbs => &self.mbs,
        }
    }
}

/// One sampled topology around the typical user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRealization {
    pub seed: Option<u64>,
    pub d2d: Vec<Point>,
    pub sbs: Vec<Point>,
    pub mbs: Vec<Point>,
}

impl NetworkRealization {
    pub fn sample<R: Rng + ?Sized>(network: &Network, rng: &mut R) -> Self {
        Self {
            seed: None,
            d2d: sample_ppp(network.d2d.density, network.d2d.window_radius, rng),
            sbs: sample_ppp(network.sbs.density, network.sbs.window_radius, rng),
            mbs: sample_ppp(network.mbs.density, network.mbs.window_radius, rng),
        }
    }

    pub fn from_seed(network: &Network, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            seed: Some(seed),
            ..Self::sample(network, &mut rng)
        }
    }

    pub fn points(&self, kind: TierKind) -> &[Point] {
        match kind {
            TierKind::D2d => &self.d2d,
            TierKind::Sbs => &self.sbs,
            TierKind::Mbs => &self.mbs,
        }
    }
}

/// Homogeneous PPP of intensity `density` on the disk of radius
/// `window_radius` centred at the origin.
pub fn sample_ppp<R: Rng + ?Sized>(density: f64, window_radius: f64, rng: &mut R) -> Vec<Point> {
    let mean = density * PI * window_radius * window_radius;
    if mean.is_nan() || mean <= 0.0 {
        return Vec::new();
    }
    let count = Poisson::new(mean)
        .expect("finite positive Poisson mean")
        .sample(rng) as usize;
    (0..count)
        .map(|_| {
            let r = window_radius * rng.random::<f64>().sqrt();
            let theta = 2.0 * PI * rng.random::<f64>();
            [r * theta.cos(), r * theta.sin()]
        })
        .collect()
}

pub fn pathloss_gain(d: f64, exponent: f64) -> Result<f64> {
    if !d.is_finite() || d <= 0.0 {
        return Err(Error::invalid("distance", format!("must be > 0, got {d}")));
    }
    Ok(d.powf(-exponent))
}

/// Rayleigh power gain `|h|²` with `h ~ CN(0, 1)`, i.e. Exp(1).
pub fn sample_fading<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Exp1.sample(rng)
}

pub fn sinr(serving: f64, interferers: &[f64], noise: f64) -> f64 {
    serving / (interferers.iter().sum::<f64>() + noise)
}

/// Probability that a `p`-thinned PPP of intensity `density` has a point
/// within `radius` of the origin.
pub fn hit_probability(density: f64, p: f64, radius: f64) -> Result<f64> {
    require_probability("caching probability", p)?;
    require_at_least("density", density, 0.0)?;
    require_positive("radius", radius)?;
    Ok(-(-density * p * PI * radius * radius).exp_m1())
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std_error,
            samples: n,
        }
    }
}

/// Mean power contributions of one link: the serving node and every
/// interferer, before fading.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGeometry {
    pub serving: f64,
    pub interferers: Vec<f64>,
}

/// Draws independent fading for the serving and interfering links and
/// returns the spectral efficiency of the faded link.
pub fn faded_spectral_efficiency<R: Rng + ?Sized>(
    tier: &TierConfig,
    link: &LinkGeometry,
    rng: &mut R,
) -> f64 {
    let serving = link.serving * sample_fading(rng);
    let interference: f64 = link
        .interferers
        .iter()
        .map(|p| p * sample_fading(rng))
        .sum();
    tier.spectral_efficiency(serving / (interference + tier.noise_w))
}

/// Samples the serving geometry of `tier`: the nearest node within the
/// serving radius (or the nearest node at all for the MBS tier), with every
/// other node of the window interfering. Realizations without an eligible
/// node are redrawn, so the result is conditioned on coverage.
pub fn sample_link_geometry<R: Rng + ?Sized>(tier: &TierConfig, rng: &mut R) -> LinkGeometry {
    // Void probability of the MBS window is negligible at sane configs, but a
    // bounded retry keeps a pathological config from spinning forever.
    for _ in 0..10_000 {
        let points = sample_ppp(tier.density, tier.window_radius, rng);
        let mut dists: Vec<f64> = points.iter().map(|p| p[0].hypot(p[1])).collect();
        let Some((idx, &d)) = dists.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)) else {
            continue;
        };
        if tier.radius.is_some_and(|r| d > r) {
            continue;
        }
        dists.swap_remove(idx);
        return LinkGeometry {
            serving: tier.mean_rx_power(d),
            interferers: dists.iter().map(|&x| tier.mean_rx_power(x)).collect(),
        };
    }
    // Nothing ever landed in range: serve from the edge of the window.
    let d = tier.radius.unwrap_or(tier.window_radius);
    LinkGeometry {
        serving: tier.mean_rx_power(d),
        interferers: Vec::new(),
    }
}

/// Monte Carlo estimate of `E[log2(1 + SINR)]` (floored at the tier's
/// minimum spectral efficiency) in bit/s/Hz.
pub fn mean_spectral_efficiency<R: Rng + ?Sized>(
    tier: &TierConfig,
    rng: &mut R,
    n_samples: usize,
) -> Result<Estimate> {
    tier.validate()?;
    if n_samples == 0 {
        return Err(Error::invalid("n_samples", "must be >= 1"));
    }
    let values: Vec<f64> = (0..n_samples)
        .map(|_| {
            let link = sample_link_geometry(tier, rng);
            faded_spectral_efficiency(tier, &link, rng)
        })
        .collect();
    Ok(Estimate::from_samples(&values))
}

/// Spectral efficiency of a fixed link geometry averaged over fading.
pub fn fixed_link_spectral_efficiency<R: Rng + ?Sized>(
    tier: &TierConfig,
    link: &LinkGeometry,
    rng: &mut R,
    n_samples: usize,
) -> Estimate {
    let values: Vec<f64> = (0..n_samples.max(1))
        .map(|_| faded_spectral_efficiency(tier, link, rng))
        .collect();
    Estimate::from_samples(&values)
}

/// Mean downlink rate of each tier, bit/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierRates {
    pub d2d: f64,
    pub sbs: f64,
    pub mbs: f64,
}

impl TierRates {
    pub fn get(&self, kind: TierKind) -> f64 {
        match kind {
            TierKind::D2d => self.d2d,
            TierKind::Sbs => self.sbs,
            TierKind::Mbs => self.mbs,
        }
    }

    /// `bandwidth · E[spectral efficiency]` per tier, each tier on its own
    /// stream of a generator seeded with `seed`.
    pub fn estimate(
        network: &Network,
        n_samples: usize,
        seed: u64,
    ) -> Result<(Self, [Estimate; 3])> {
        network.validate()?;
        network.check_sampleable()?;
        let mut estimates = [Estimate {
            mean: 0.0,
            std_error: 0.0,
            samples: 0,
        }; 3];
        for (stream, kind) in [TierKind::D2d, TierKind::Sbs, TierKind::Mbs]
            .into_iter()
            .enumerate()
        {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream as u64);
            estimates[stream] = mean_spectral_efficiency(network.tier(kind), &mut rng, n_samples)?;
        }
        let rate = |i: usize, kind: TierKind| estimates[i].mean * network.tier(kind).bandwidth_hz;
        Ok((
            Self {
                d2d: rate(0, TierKind::D2d),
                sbs: rate(1, TierKind::Sbs),
                mbs: rate(2, TierKind::Mbs),
            },
            estimates,
        ))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn tier(kind: TierKind, density: f64, radius: Option<f64>) -> TierConfig {
        TierConfig {
            kind,
            density,
            radius,
            power_w: 1.0,
            pathloss_exponent: 4.0,
            bandwidth_hz: 1e7,
            noise_w: 1e-13,
            window_radius: 150.0,
            min_distance: 0.5,
            min_spectral_efficiency: 0.0,
        }
    }

    #[test]
    fn empty_process_at_zero_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert!(sample_ppp(0.0, 100.0, &mut rng).is_empty());
        }
    }

    #[test]
    fn ppp_count_mean_and_dispersion() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let counts: Vec<f64> = (0..10_000)
            .map(|_| sample_ppp(0.01, 100.0, &mut rng).len() as f64)
            .collect();
        let est = Estimate::from_samples(&counts);
        let expected = 0.01 * PI * 1e4;
        assert!((est.mean / expected - 1.0).abs() < 0.02, "{}", est.mean);
        let var = counts.iter().map(|c| (c - est.mean).powi(2)).sum::<f64>() / 9999.0;
        // Var of the sample variance of a Poisson(m) count is about 2m²/n.
        let tol = 4.0 * (2.0 * expected * expected / 10_000.0).sqrt();
        assert!((var - expected).abs() < tol, "var {var} vs {expected}");
    }

    #[test]
    fn ppp_points_inside_window_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = sample_ppp(0.005, 50.0, &mut rng);
        assert!(pts.iter().all(|p| p[0].hypot(p[1]) <= 50.0));
        let a = sample_ppp(0.005, 50.0, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_ppp(0.005, 50.0, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn pathloss_values() {
        assert_eq!(pathloss_gain(1.0, 4.0).unwrap(), 1.0);
        assert_eq!(pathloss_gain(2.0, 4.0).unwrap(), 0.0625);
        assert!((pathloss_gain(10.0, 4.0).unwrap() - 1e-4).abs() < 1e-18);
        assert!(pathloss_gain(0.0, 4.0).is_err());
        assert!(pathloss_gain(-1.0, 4.0).is_err());
    }

    #[test]
    fn fading_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut above = 0usize;
        for _ in 0..n {
            let g = sample_fading(&mut rng);
            sum += g;
            above += usize::from(g > 1.0);
        }
        assert!((sum / n as f64 - 1.0).abs() < 0.005);
        assert!((above as f64 / n as f64 - (-1.0f64).exp()).abs() < 0.005);

        let a: Vec<f64> = {
            let mut r = ChaCha8Rng::seed_from_u64(5);
            (0..10).map(|_| sample_fading(&mut r)).collect()
        };
        let b: Vec<f64> = {
            let mut r = ChaCha8Rng::seed_from_u64(5);
            (0..10).map(|_| sample_fading(&mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn sinr_values() {
        assert_eq!(sinr(2e-13, &[], 2e-13), 1.0);
        assert!((sinr(1.0, &[1.0], 1e-300) - 1.0).abs() < 1e-15);
        assert!((sinr(4e-4, &[1e-4, 1e-4], 2e-4) - 1.0).abs() < 1e-12);
        for c in [1e-6, 0.3, 7.0, 1e9] {
            let base = sinr(3.0, &[0.5, 1.5], 0.25);
            let scaled = sinr(3.0 * c, &[0.5 * c, 1.5 * c], 0.25 * c);
            assert!((base - scaled).abs() <= 1e-12 * base);
        }
    }

    #[test]
    fn hit_probability_values() {
        assert_eq!(hit_probability(1e-3, 0.0, 10.0).unwrap(), 0.0);
        let lambda = 1.0 / (PI * 100.0);
        let h = hit_probability(lambda, 1.0, 10.0).unwrap();
        assert!((h - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!(hit_probability(1e-3, 1.2, 10.0).is_err());
        assert!(hit_probability(1e-3, -0.1, 10.0).is_err());
        // strictly increasing in each argument
        let base = hit_probability(0.01, 0.4, 5.0).unwrap();
        assert!(hit_probability(0.02, 0.4, 5.0).unwrap() > base);
        assert!(hit_probability(0.01, 0.5, 5.0).unwrap() > base);
        assert!(hit_probability(0.01, 0.4, 6.0).unwrap() > base);
    }

    #[test]
    fn hit_probability_matches_thinned_ppp_frequency() {
        let (lambda, p, r) = (0.02, 0.5, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| {
                sample_ppp(lambda, r, &mut rng)
                    .iter()
                    .any(|_| rng.random::<f64>() < p)
            })
            .count();
        let freq = hits as f64 / n as f64;
        assert!((freq - hit_probability(lambda, p, r).unwrap()).abs() < 0.01);
    }

    /// `E[log2(1 + snr·h)]` for `h ~ Exp(1)`, by quadrature on the
    /// substitution `h = -ln u`.
    fn rayleigh_capacity_quadrature(snr: f64) -> f64 {
        let n = 2_000_000;
        (0..n)
            .map(|i| {
                let u = (i as f64 + 0.5) / n as f64;
                (1.0 + snr * -u.ln()).log2()
            })
            .sum::<f64>()
            / n as f64
    }

    #[test]
    fn high_snr_single_link() {
        let t = tier(TierKind::D2d, 1e-3, Some(10.0));
        let link = LinkGeometry {
            serving: 1e6 * t.noise_w,
            interferers: vec![],
        };
        let oracle = rayleigh_capacity_quadrature(1e6);
        // log2(1e6) - gamma*log2(e): fading costs about 0.83 bit at high SNR.
        assert!((oracle - 19.099).abs() < 0.01, "{oracle}");
        let est =
            fixed_link_spectral_efficiency(&t, &link, &mut ChaCha8Rng::seed_from_u64(7), 200_000);
        assert!((est.mean - oracle).abs() < 0.1, "{} vs {oracle}", est.mean);
    }

    #[test]
    fn noise_dominated_link_goes_to_zero() {
        let mut t = tier(TierKind::Sbs, 2e-4, Some(30.0));
        t.noise_w = 1e30;
        let est = mean_spectral_efficiency(&t, &mut ChaCha8Rng::seed_from_u64(8), 1000).unwrap();
        assert!(est.mean < 1e-20);
    }

    #[test]
    fn std_error_shrinks_with_samples() {
        let t = tier(TierKind::Sbs, 2e-4, Some(30.0));
        let a = mean_spectral_efficiency(&t, &mut ChaCha8Rng::seed_from_u64(10), 20_000).unwrap();
        let b = mean_spectral_efficiency(&t, &mut ChaCha8Rng::seed_from_u64(11), 40_000).unwrap();
        let ratio = b.std_error / a.std_error;
        assert!(
            (ratio / std::f64::consts::FRAC_1_SQRT_2 - 1.0).abs() < 0.2,
            "{ratio}"
        );
    }

    #[test]
    fn denser_tier_has_lower_spectral_efficiency() {
        let sparse = tier(TierKind::Sbs, 1e-4, Some(30.0));
        let dense = TierConfig {
            density: 1e-3,
            ..sparse.clone()
        };
        let a =
            mean_spectral_efficiency(&sparse, &mut ChaCha8Rng::seed_from_u64(12), 20_000).unwrap();
        let b =
            mean_spectral_efficiency(&dense, &mut ChaCha8Rng::seed_from_u64(13), 20_000).unwrap();
        let sigma = a.std_error.hypot(b.std_error);
        assert!(b.mean <= a.mean + 3.0 * sigma, "{} vs {}", b.mean, a.mean);
    }

    #[test]
    fn tier_validation() {
        let mut t = tier(TierKind::D2d, 1e-3, Some(10.0));
        assert!(t.validate().is_ok());
        t.pathloss_exponent = 2.0;
        assert!(t.validate().is_err());
        let t = tier(TierKind::D2d, 1e-3, None);
        assert!(t.validate().is_err());
        let t = tier(TierKind::Sbs, 0.0, Some(10.0));
        assert!(t.validate().is_err());
        let net = Network {
            d2d: tier(TierKind::D2d, 1e-4, Some(10.0)),
            sbs: tier(TierKind::Sbs, 2e-4, Some(30.0)),
            mbs: tier(TierKind::Mbs, 2e-5, None),
        };
        assert!(net.validate().is_err());
    }

    #[test]
    fn realization_is_reproducible() {
        let net = Network {
            d2d: tier(TierKind::D2d, 1e-3, Some(10.0)),
            sbs: tier(TierKind::Sbs, 2e-4, Some(30.0)),
            mbs: tier(TierKind::Mbs, 2e-5, None),
        };
        let a = NetworkRealization::from_seed(&net, 42);
        let b = NetworkRealization::from_seed(&net, 42);
        assert_eq!(a, b);
        let json = serde_json::to_string(&a).unwrap();
        let back: NetworkRealization = serde_json::from_str(&json).unwrap();
        assert_eq!(a, back);
    }
}
