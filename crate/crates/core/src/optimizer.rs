//! Gradient projection over the per-tier capacity polytope
//! `{p : 0 <= p <= 1, Σ size·p <= C}`.

use std::hint::black_box;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::content::{PopularityModel, QualityPreference, VideoLibrary};
use crate::delaymodel::{DelayModel, DelayParams};
use crate::error::{require_at_least, require_positive, Error, Result};
use crate::policy::{check_feasibility, Capacities, LayerMatrix, RandomPlacement};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "defaults::max_iterations")]
    pub max_iterations: usize,
    /// Stop once the relative objective decrease of a step falls below this.
    #[serde(default = "defaults::tolerance")]
    pub tolerance: f64,
    /// First trial step, measured as the largest coordinate move it causes.
    #[serde(default = "defaults::initial_step")]
    pub initial_step: f64,
    #[serde(default = "defaults::shrink")]
    pub shrink: f64,
    #[serde(default = "defaults::sufficient_decrease")]
    pub sufficient_decrease: f64,
    #[serde(default = "defaults::projection_tolerance_bits")]
    pub projection_tolerance_bits: f64,
    #[serde(default = "defaults::max_backtracks")]
    pub max_backtracks: usize,
}

mod defaults {
    pub fn max_iterations() -> usize {
        500
    }
    pub fn tolerance() -> f64 {
        1e-8
    }
    pub fn initial_step() -> f64 {
        1.0
    }
    pub fn shrink() -> f64 {
        0.5
    }
    pub fn sufficient_decrease() -> f64 {
        1e-4
    }
    pub fn projection_tolerance_bits() -> f64 {
        1e-3
    }
    pub fn max_backtracks() -> usize {
        60
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: defaults::max_iterations(),
            tolerance: defaults::tolerance(),
            initial_step: defaults::initial_step(),
            shrink: defaults::shrink(),
            sufficient_decrease: defaults::sufficient_decrease(),
            projection_tolerance_bits: defaults::projection_tolerance_bits(),
            max_backtracks: defaults::max_backtracks(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        require_positive("optimizer.tolerance", self.tolerance)?;
        require_positive("optimizer.initial_step", self.initial_step)?;
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::invalid("optimizer.shrink", "must lie in (0, 1)"));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return Err(Error::invalid(
                "optimizer.sufficient_decrease",
                "must lie in (0, 1)",
            ));
        }
        require_at_least(
            "optimizer.projection_tolerance_bits",
            self.projection_tolerance_bits,
            0.0,
        )?;
        if self.max_backtracks == 0 {
            return Err(Error::invalid("optimizer.max_backtracks", "must be >= 1"));
        }
        Ok(())
    }
}

fn occupancy_at(v: &[f64], sizes: &[f64], mu: f64) -> f64 {
    v.iter()
        .zip(sizes)
        .map(|(x, s)| s * (x - mu * s).clamp(0.0, 1.0))
        .sum()
}

/// Euclidean projection of `v` onto `{p : 0 <= p <= 1, Σ sizes·p <= capacity}`.
///
/// When clipping to the box is already feasible that is the answer.
/// Otherwise the projection is `clip(v - μ·sizes)` for the multiplier `μ > 0`
/// at which the capacity binds; `μ` is found by bisection until occupancy is
/// within `tolerance_bits` below capacity.
pub fn project_capacity(
    v: &[f64],
    sizes: &[f64],
    capacity: f64,
    tolerance_bits: f64,
) -> Result<Vec<f64>> {
    if v.len() != sizes.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} entries", sizes.len()),
            actual: format!("{}", v.len()),
        });
    }
    if let Some(x) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::invalid(
            "projection input",
            format!("non-finite entry {x}"),
        ));
    }
    require_at_least("capacity", capacity, 0.0)?;
    if let Some(s) = sizes.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::invalid(
            "sizes",
            format!("must be positive, got {s}"),
        ));
    }

    let clipped: Vec<f64> = v.iter().map(|x| x.clamp(0.0, 1.0)).collect();
    let occupancy: f64 = clipped.iter().zip(sizes).map(|(p, s)| p * s).sum();
    if occupancy <= capacity {
        return Ok(clipped);
    }

    // At mu = hi every coordinate clips to zero.
    let mut lo = 0.0;
    let mut hi = v
        .iter()
        .zip(sizes)
        .map(|(x, s)| x / s)
        .fold(0.0f64, f64::max);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if occupancy_at(v, sizes, mid) > capacity {
            lo = mid;
        } else {
            hi = mid;
            if capacity - occupancy_at(v, sizes, hi) <= tolerance_bits {
                break;
            }
        }
    }
    Ok(v.iter()
        .zip(sizes)
        .map(|(x, s)| (x - hi * s).clamp(0.0, 1.0))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Expected delay after this iteration, s.
    pub objective: f64,
    /// Accepted step length (0 for the initial point).
    pub step: f64,
    /// Euclidean norm of the gradient at the start of the iteration.
    pub grad_norm: f64,
    pub slack_d2d_bits: f64,
    pub slack_sbs_bits: f64,
    /// Seconds since the optimizer started.
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

impl OptimizationTrace {
    pub fn final_objective(&self) -> Option<f64> {
        self.records.last().map(|r| r.objective)
    }

    /// Iterations performed, excluding the initial point.
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    /// Columns `iteration,objective_s,step,grad_norm,slack_d2d_bits,slack_sbs_bits`.
    /// Wall times are left out so reruns produce identical files.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "iteration",
            "objective_s",
            "step",
            "grad_norm",
            "slack_d2d_bits",
            "slack_sbs_bits",
        ])?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                r.objective.to_string(),
                r.step.to_string(),
                r.grad_norm.to_string(),
                r.slack_d2d_bits.to_string(),
                r.slack_sbs_bits.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn occupancy(p: &[f64], sizes: &[f64]) -> f64 {
    dot(p, sizes)
}

/// Iterate and gradient of the last accepted step: `(p_d, p_s, g_d, g_s)`.
type Previous = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

/// Minimizes expected delay over random placements by projected gradient
/// descent with Armijo backtracking along the projection arc.
///
/// The first trial step of each iteration is the Barzilai-Borwein step
/// `sᵀs / sᵀy` from the previous move, or `initial_step / ‖∇D‖∞` when none
/// is available. Returns the last accepted iterate, which is also the best.
pub fn gradient_projection(
    library: &VideoLibrary,
    params: &DelayParams,
    capacities: &Capacities,
    config: &OptimizerConfig,
    init: &RandomPlacement,
) -> Result<(RandomPlacement, OptimizationTrace)> {
    config.validate()?;
    capacities.validate()?;
    init.check_shape(library)?;
    let (fd, fs) = init.check_capacities(library, capacities)?;
    if !fd.feasible || !fs.feasible {
        return Err(Error::Infeasible(format!(
            "initial placement exceeds capacity (slack d2d {} bits, sbs {} bits)",
            fd.slack, fs.slack
        )));
    }

    let model = DelayModel::new(library, params)?;
    let sizes = library.layer_sizes();
    let n = model.len();
    let start = Instant::now();

    let mut x_d = init.d2d.as_slice().to_vec();
    let mut x_s = init.sbs.as_slice().to_vec();
    let mut f = model.objective(&x_d, &x_s);
    let mut g_d = vec![0.0; n];
    let mut g_s = vec![0.0; n];
    model.gradient_into(&x_d, &x_s, &mut g_d, &mut g_s);

    let slack = |pd: &[f64], ps: &[f64]| {
        (
            capacities.d2d_bits - occupancy(pd, sizes),
            capacities.sbs_bits - occupancy(ps, sizes),
        )
    };
    let grad_norm = |gd: &[f64], gs: &[f64]| (dot(gd, gd) + dot(gs, gs)).sqrt();

    let mut trace = OptimizationTrace::default();
    let (sd, ss) = slack(&x_d, &x_s);
    trace.records.push(IterationRecord {
        iteration: 0,
        objective: f,
        step: 0.0,
        grad_norm: grad_norm(&g_d, &g_s),
        slack_d2d_bits: sd,
        slack_sbs_bits: ss,
        wall_time: 0.0,
    });

    let mut previous: Option<Previous> = None;
    for iteration in 1..=config.max_iterations {
        let gnorm = grad_norm(&g_d, &g_s);
        if !gnorm.is_finite() || !f.is_finite() {
            return Err(Error::OptimizerAbort {
                iteration,
                reason: format!("non-finite gradient or objective (|g| = {gnorm}, D = {f})"),
                trace: Box::new(trace),
            });
        }
        let g_inf = g_d.iter().chain(&g_s).fold(0.0f64, |m, g| m.max(g.abs()));
        if g_inf == 0.0 {
            trace.converged = true;
            break;
        }

        let mut step = config.initial_step / g_inf;
        if let Some((px_d, px_s, pg_d, pg_s)) = &previous {
            let mut ss = 0.0;
            let mut sy = 0.0;
            for i in 0..n {
                let (sd, ssb) = (x_d[i] - px_d[i], x_s[i] - px_s[i]);
                ss += sd * sd + ssb * ssb;
                sy += sd * (g_d[i] - pg_d[i]) + ssb * (g_s[i] - pg_s[i]);
            }
            if sy > 0.0 && ss > 0.0 {
                step = ss / sy;
            }
        }

        let mut accepted = None;
        for _ in 0..config.max_backtracks {
            let trial_d: Vec<f64> = x_d.iter().zip(&g_d).map(|(x, g)| x - step * g).collect();
            let trial_s: Vec<f64> = x_s.iter().zip(&g_s).map(|(x, g)| x - step * g).collect();
            let new_d = project_capacity(
                &trial_d,
                sizes,
                capacities.d2d_bits,
                config.projection_tolerance_bits,
            )?;
            let new_s = project_capacity(
                &trial_s,
                sizes,
                capacities.sbs_bits,
                config.projection_tolerance_bits,
            )?;
            let mut decrease = 0.0;
            for i in 0..n {
                decrease += g_d[i] * (new_d[i] - x_d[i]) + g_s[i] * (new_s[i] - x_s[i]);
            }
            if decrease >= 0.0 {
                // The projected move is not a descent direction: stationary.
                break;
            }
            let f_new = model.objective(&new_d, &new_s);
            if f_new <= f + config.sufficient_decrease * decrease {
                accepted = Some((new_d, new_s, f_new));
                break;
            }
            step *= config.shrink;
        }

        let Some((new_d, new_s, f_new)) = accepted else {
            trace.converged = true;
            break;
        };
        let relative = (f - f_new) / f.abs().max(f64::MIN_POSITIVE);

        let mut new_gd = vec![0.0; n];
        let mut new_gs = vec![0.0; n];
        model.gradient_into(&new_d, &new_s, &mut new_gd, &mut new_gs);
        let old_d = std::mem::replace(&mut x_d, new_d);
        let old_s = std::mem::replace(&mut x_s, new_s);
        let old_gd = std::mem::replace(&mut g_d, new_gd);
        let old_gs = std::mem::replace(&mut g_s, new_gs);
        previous = Some((old_d, old_s, old_gd, old_gs));
        f = f_new;

        let (sd, ss) = slack(&x_d, &x_s);
        trace.records.push(IterationRecord {
            iteration,
            objective: f,
            step,
            grad_norm: gnorm,
            slack_d2d_bits: sd,
            slack_sbs_bits: ss,
            wall_time: start.elapsed().as_secs_f64(),
        });
        if relative < config.tolerance {
            trace.converged = true;
            break;
        }
    }

    let (files, layers) = (library.file_count(), library.layers_per_file());
    let placement = RandomPlacement::new(
        LayerMatrix::from_vec(files, layers, x_d)?,
        LayerMatrix::from_vec(files, layers, x_s)?,
    )?;
    debug_assert!(
        check_feasibility(&placement.d2d, library, capacities.d2d_bits)
            .map(|f| f.feasible)
            .unwrap_or(false)
    );
    Ok((placement, trace))
}

/// Runs [`gradient_projection`] from the uniform capacity-saturating point.
pub fn optimize_default(
    library: &VideoLibrary,
    params: &DelayParams,
    capacities: &Capacities,
    config: &OptimizerConfig,
) -> Result<(RandomPlacement, OptimizationTrace)> {
    let init = RandomPlacement::uniform_saturating(library, capacities);
    gradient_projection(library, params, capacities, config, &init)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostSample {
    pub files: usize,
    pub layers: usize,
    /// Seconds per gradient evaluation (best of several batches).
    pub seconds: f64,
}

/// Times one gradient evaluation, the dominant per-iteration cost, for every
/// `(F, L)` combination.
pub fn complexity_probe(
    file_values: &[usize],
    layer_values: &[usize],
    params: &DelayParams,
) -> Result<Vec<CostSample>> {
    let mut out = Vec::new();
    for &files in file_values {
        for &layers in layer_values {
            let library = VideoLibrary::uniform(
                files,
                layers,
                1e6,
                1e6 * layers as f64,
                PopularityModel::default(),
                QualityPreference::truncated_geometric(layers, 1.0)?,
            )?;
            let model = DelayModel::new(&library, params)?;
            let n = model.len();
            let p_d: Vec<f64> = (0..n).map(|i| (i % 7) as f64 / 7.0).collect();
            let p_s: Vec<f64> = (0..n).map(|i| (i % 5) as f64 / 5.0).collect();
            let mut g_d = vec![0.0; n];
            let mut g_s = vec![0.0; n];
            let reps = (2_000_000 / n).max(1);
            let mut best = f64::INFINITY;
            for _ in 0..5 {
                let t = Instant::now();
                for _ in 0..reps {
                    model.gradient_into(black_box(&p_d), black_box(&p_s), &mut g_d, &mut g_s);
                    black_box(&g_d);
                }
                best = best.min(t.elapsed().as_secs_f64() / reps as f64);
            }
            out.push(CostSample {
                files,
                layers,
                seconds: best,
            });
        }
    }
    Ok(out)
}

/// Least-squares slope of `ln(seconds)` against `ln(F·L)`.
pub fn loglog_slope(samples: &[CostSample]) -> f64 {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .map(|s| (((s.files * s.layers) as f64).ln(), s.seconds.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
