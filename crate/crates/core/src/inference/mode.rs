//! Posterior-mode search and Laplace summaries.
//!
//! Damped Newton–Raphson in logit space with the outer-product Hessian,
//! a small ridge, and step halving. Several starts; the best result wins.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use super::exec::{map_indexed, Execution};
use super::model::{BetaShape, ReducedModel};
use super::InferenceError;
use crate::diagram::NodeId;

pub const MAX_RIDGE_ESCALATIONS: u32 = 6;
const MAX_HALVINGS: u32 = 60;
/// Consecutive sub-threshold improvements that end a run. Near the mode the
/// outer-product step converges linearly, so single tiny improvements are
/// normal and do not count as convergence.
const STALL_PATIENCE: u32 = 50;
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeOptions {
    /// Max-norm of the logit-space gradient that counts as converged.
    pub tolerance: f64,
    /// Improvements below this count towards a stall.
    pub improvement_tolerance: f64,
    pub max_iter: u32,
    pub starts: u32,
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
}

impl Default for ModeOptions {
    fn default() -> Self {
        ModeOptions {
            tolerance: 1e-6,
            improvement_tolerance: 1e-10,
            max_iter: 500,
            starts: 3,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SummaryMethod {
    Exact,
    Laplace,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSummary {
    pub node: NodeId,
    pub name: String,
    pub mode: f64,
    pub z_mode: f64,
    pub se_z: f64,
    pub lower: f64,
    pub upper: f64,
    pub method: SummaryMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_posterior: Option<BetaShape>,
    /// Central 95% interval of the exact posterior.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_interval: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceSummaries {
    pub summaries: Vec<ParamSummary>,
    /// Logit-space covariance, row-major.
    pub covariance: Vec<f64>,
    pub ridge: f64,
    pub singular: bool,
    /// Eigenvalue ratio of the unridged Hessian; `None` when it is singular.
    pub condition: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartRun {
    pub start: Vec<f64>,
    pub z: Vec<f64>,
    pub log_posterior: f64,
    pub gradient_max_norm: f64,
    pub iterations: u32,
    pub converged: bool,
    /// Log-posterior after each accepted step, starting point first.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeResult {
    pub free: Vec<NodeId>,
    pub mode: Vec<f64>,
    pub z: Vec<f64>,
    pub log_posterior_at_mode: f64,
    pub iterations: u32,
    pub converged: bool,
    pub gradient_max_norm: f64,
    pub hessian_condition: Option<f64>,
    pub singular_hessian: bool,
    pub best_start: usize,
    pub runs: Vec<StartRun>,
    pub summaries: Vec<ParamSummary>,
    pub m: usize,
    pub n: usize,
}

impl ModeResult {
    pub fn value(&self, node: NodeId) -> Option<f64> {
        self.free.iter().position(|n| *n == node).map(|i| self.mode[i])
    }

    pub fn summary(&self, node: NodeId) -> Option<&ParamSummary> {
        self.summaries.iter().find(|s| s.node == node)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn logit(x: f64) -> f64 {
    (x / (1.0 - x)).ln()
}

fn max_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

struct Ridged {
    factor: Option<nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>>,
    ridge: f64,
    escalations: u32,
}

/// Cholesky of `h + λI`, starting from `1e-8 * trace / m` and escalating
/// tenfold on failure.
fn ridged_cholesky(h: &DMatrix<f64>) -> Ridged {
    let m = h.nrows();
    let trace = h.trace();
    let mut ridge = if trace > 0.0 && trace.is_finite() { 1e-8 * trace / m as f64 } else { 1e-8 };
    for escalations in 0..=MAX_RIDGE_ESCALATIONS {
        let mut a = h.clone();
        for i in 0..m {
            a[(i, i)] += ridge;
        }
        if let Some(factor) = a.cholesky() {
            return Ridged { factor: Some(factor), ridge, escalations };
        }
        ridge *= 10.0;
    }
    Ridged { factor: None, ridge, escalations: MAX_RIDGE_ESCALATIONS + 1 }
}

fn lp_at(model: &ReducedModel, z: &[f64]) -> f64 {
    let phi: Vec<f64> = z.iter().map(|&x| sigmoid(x)).collect();
    model.log_posterior(&phi).unwrap_or(f64::NEG_INFINITY)
}

fn run_from(model: &ReducedModel, start: &[f64], opts: &ModeOptions) -> Result<StartRun, InferenceError> {
    let m = model.m();
    let mut z: Vec<f64> = start.iter().map(|&x| logit(x)).collect();
    let phi: Vec<f64> = z.iter().map(|&x| sigmoid(x)).collect();
    let (mut f, mut g, mut h) = model.bhhh(&phi)?;
    let mut trace = vec![f];
    let mut iterations = 0;
    let mut small = 0;
    loop {
        if max_norm(&g) < opts.tolerance || iterations >= opts.max_iter {
            break;
        }
        let hm = DMatrix::from_row_slice(m, m, &h);
        let gv = DVector::from_column_slice(&g);
        let delta = match ridged_cholesky(&hm).factor {
            Some(c) => c.solve(&gv),
            None => {
                let scale = (hm.trace() / m as f64).max(1.0);
                gv / scale
            }
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = z.iter().zip(delta.iter()).map(|(zi, di)| zi + t * di).collect();
            let fc = lp_at(model, &cand);
            if fc >= f {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, fc)) = accepted else { break };
        iterations += 1;
        let improvement = fc - f;
        z = cand;
        let phi: Vec<f64> = z.iter().map(|&x| sigmoid(x)).collect();
        (f, g, h) = model.bhhh(&phi)?;
        trace.push(f);
        if improvement < opts.improvement_tolerance {
            small += 1;
            if small >= STALL_PATIENCE {
                break;
            }
        } else {
            small = 0;
        }
    }
    let gradient_max_norm = max_norm(&g);
    Ok(StartRun {
        start: start.to_vec(),
        z,
        log_posterior: f,
        gradient_max_norm,
        iterations,
        converged: gradient_max_norm < opts.tolerance,
        trace,
    })
}

/// Starting points: prior means, all one-half, then seeded uniform draws.
pub fn starting_points(model: &ReducedModel, opts: &ModeOptions) -> Vec<Vec<f64>> {
    let m = model.m();
    (0..opts.starts.max(1) as u64)
        .map(|k| match k {
            0 => model.prior_means(),
            1 => vec![0.5; m],
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(k));
                (0..m).map(|_| rng.random_range(0.05..0.95)).collect()
            }
        })
        .collect()
}

pub fn posterior_mode(model: &ReducedModel, opts: &ModeOptions) -> Result<ModeResult, InferenceError> {
    let starts = starting_points(model, opts);
    let runs = map_indexed(opts.execution, starts.len(), |k| run_from(model, &starts[k], opts));
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let best = (0..runs.len())
        .max_by(|&i, &j| {
            let (a, b) = (&runs[i], &runs[j]);
            a.converged
                .cmp(&b.converged)
                .then(a.log_posterior.total_cmp(&b.log_posterior))
                // earlier start wins ties
                .then(j.cmp(&i))
        })
        .expect("at least one start");
    let run = &runs[best];
    let mode: Vec<f64> = run.z.iter().map(|&x| sigmoid(x)).collect();
    let laplace = laplace_summaries(model, &mode)?;
    Ok(ModeResult {
        free: model.free().iter().map(|p| p.node).collect(),
        z: run.z.clone(),
        log_posterior_at_mode: run.log_posterior,
        iterations: run.iterations,
        converged: run.converged,
        gradient_max_norm: run.gradient_max_norm,
        hessian_condition: laplace.condition,
        singular_hessian: laplace.singular,
        best_start: best,
        summaries: laplace.summaries,
        m: model.m(),
        n: model.n(),
        mode,
        runs,
    })
}

/// Fits many models, fanned out across the pool; starts within each model
/// run sequentially.
pub fn posterior_modes(
    models: &[ReducedModel],
    opts: &ModeOptions,
) -> Vec<Result<ModeResult, InferenceError>> {
    let inner = ModeOptions { execution: Execution::Sequential, ..*opts };
    map_indexed(opts.execution, models.len(), |i| posterior_mode(&models[i], &inner))
}

pub fn laplace_summaries(model: &ReducedModel, mode: &[f64]) -> Result<LaplaceSummaries, InferenceError> {
    let m = model.m();
    let (_, _, h) = model.bhhh(mode)?;
    let hm = DMatrix::from_row_slice(m, m, &h);
    let eig = SymmetricEigen::new(hm.clone()).eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    let condition = (lo > 0.0 && lo.is_finite()).then(|| hi / lo);

    let ridged = ridged_cholesky(&hm);
    let singular = ridged.escalations > 0 || ridged.factor.is_none() || condition.is_none();
    let cov = match &ridged.factor {
        Some(c) => c.inverse(),
        None => {
            let mut a = hm.clone();
            for i in 0..m {
                a[(i, i)] += ridged.ridge;
            }
            a.pseudo_inverse(1e-300).map_err(|e| InferenceError::Numerical(e.to_string()))?
        }
    };

    let summaries = model
        .free()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let z = logit(mode[i]);
            let se = cov[(i, i)].max(0.0).sqrt();
            let exact = model.conjugate(i);
            let exact_interval = exact.and_then(|s| {
                let d = Beta::new(s.a, s.b).ok()?;
                Some((d.inverse_cdf(0.025), d.inverse_cdf(0.975)))
            });
            ParamSummary {
                node: p.node,
                name: p.name.clone(),
                mode: mode[i],
                z_mode: z,
                se_z: se,
                lower: sigmoid(z - Z95 * se),
                upper: sigmoid(z + Z95 * se),
                method: if exact.is_some() { SummaryMethod::Exact } else { SummaryMethod::Laplace },
                exact_posterior: exact,
                exact_interval,
            }
        })
        .collect();

    Ok(LaplaceSummaries {
        summaries,
        covariance: cov.transpose().as_slice().to_vec(),
        ridge: ridged.ridge,
        singular,
        condition,
    })
}
