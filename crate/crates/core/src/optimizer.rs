//! Joint shape/trajectory search with CMA-ES over a normalized box.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::params::ParamEntry;
use crate::scene::{trajectory_parameters, Trajectory};
use crate::seed::rng_for;
use crate::toolspec::{shape_parameters, ToolSpec};

pub const DEFAULT_LAMBDA: usize = 20;
pub const DEFAULT_ITERATIONS: usize = 50;
pub const DEFAULT_SIGMA0: f64 = 0.3;
pub const MAX_CONDITION: f64 = 1e14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("vector has {got} entries, templates need {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("population size must be at least 4, got {0}")]
    PopulationTooSmall(usize),
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error("dimension must be at least 1")]
    EmptyDimension,
    #[error("expected {expected} evaluations, got {got}")]
    WrongPopulationSize { expected: usize, got: usize },
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
}

/// Normalized parameter values with their raw bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub descriptors: Vec<ParamEntry>,
}

/// Which parameter groups enter the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSelection {
    pub shape: bool,
    pub trajectory: bool,
}

impl Default for ParamSelection {
    fn default() -> Self {
        ParamSelection {
            shape: true,
            trajectory: true,
        }
    }
}

fn normalize(e: &ParamEntry) -> f64 {
    let span = e.upper - e.lower;
    if span > 0.0 {
        (e.value - e.lower) / span
    } else {
        0.0
    }
}

/// Shape parameters then Move parameters, each mapped to [0, 1].
pub fn pack(spec: &ToolSpec, traj: &Trajectory) -> ParamVector {
    pack_selected(spec, traj, ParamSelection::default())
}

pub fn pack_selected(spec: &ToolSpec, traj: &Trajectory, sel: ParamSelection) -> ParamVector {
    let mut descriptors = Vec::new();
    if sel.shape {
        descriptors.extend(shape_parameters(spec));
    }
    if sel.trajectory {
        descriptors.extend(trajectory_parameters(traj));
    }
    ParamVector {
        values: descriptors.iter().map(normalize).collect(),
        descriptors,
    }
}

/// Write denormalized values back into copies of the templates.
pub fn unpack(
    values: &[f64],
    descriptors: &[ParamEntry],
    template_spec: &ToolSpec,
    template_traj: &Trajectory,
) -> Result<(ToolSpec, Trajectory), OptimizerError> {
    if values.len() != descriptors.len() {
        return Err(OptimizerError::LengthMismatch {
            expected: descriptors.len(),
            got: values.len(),
        });
    }
    let mut spec = template_spec.clone();
    let mut traj = template_traj.clone();
    for (u, e) in values.iter().zip(descriptors) {
        let u = u.clamp(0.0, 1.0);
        // Exact endpoints so round trips reproduce the template values.
        let v = if u == 0.0 {
            e.lower
        } else if u == 1.0 {
            e.upper
        } else if u == normalize(e) {
            e.value
        } else {
            e.lower + u * (e.upper - e.lower)
        };
        if e.is_shape() {
            spec.set(e.path, v);
        } else {
            traj.set(e.path, v);
        }
    }
    Ok((spec, traj))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaesConfig {
    pub lambda: usize,
    pub iterations: usize,
    pub sigma0: f64,
    pub seed: u64,
}

impl Default for CmaesConfig {
    fn default() -> Self {
        CmaesConfig {
            lambda: DEFAULT_LAMBDA,
            iterations: DEFAULT_ITERATIONS,
            sigma0: DEFAULT_SIGMA0,
            seed: 0,
        }
    }
}

impl CmaesConfig {
    pub fn check(&self) -> Result<(), OptimizerError> {
        if self.lambda < 4 {
            return Err(OptimizerError::PopulationTooSmall(self.lambda));
        }
        if self.iterations < 1 {
            return Err(OptimizerError::NoIterations);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEvaluation {
    pub vector: Vec<f64>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaesState {
    pub dim: usize,
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    chi_n: f64,
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub cov: DMatrix<f64>,
    pub p_sigma: DVector<f64>,
    pub p_c: DVector<f64>,
    /// Eigenvectors of `cov` (columns) and square roots of its eigenvalues.
    basis: DMatrix<f64>,
    scales: DVector<f64>,
    pub generation: usize,
}

pub fn cmaes_init(d: usize, config: &CmaesConfig, x0: &[f64]) -> Result<CmaesState, OptimizerError> {
    config.check()?;
    if d == 0 {
        return Err(OptimizerError::EmptyDimension);
    }
    if x0.len() != d {
        return Err(OptimizerError::LengthMismatch {
            expected: d,
            got: x0.len(),
        });
    }
    let lambda = config.lambda;
    let mu = lambda / 2;
    let raw: Vec<f64> = (1..=mu)
        .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
        .collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    let n = d as f64;
    let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
    let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
    let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
    let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
    let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));
    Ok(CmaesState {
        dim: d,
        lambda,
        mu,
        weights,
        mu_eff,
        c_sigma,
        d_sigma,
        c_c,
        c_1,
        c_mu,
        chi_n: n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n)),
        mean: DVector::from_column_slice(x0),
        sigma: config.sigma0,
        cov: DMatrix::identity(d, d),
        p_sigma: DVector::zeros(d),
        p_c: DVector::zeros(d),
        basis: DMatrix::identity(d, d),
        scales: DVector::from_element(d, 1.0),
        generation: 0,
    })
}

impl CmaesState {
    /// λ candidates `mean + sigma * C^{1/2} z`, clipped into [0, 1]^d.
    pub fn ask<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        (0..self.lambda)
            .map(|_| {
                let z = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                let y = &self.basis * z.component_mul(&self.scales);
                let x = &self.mean + y * self.sigma;
                x.iter().map(|v| v.clamp(0.0, 1.0)).collect()
            })
            .collect()
    }

    /// Rank-based update for maximization. Candidates with equal scores share
    /// the average of their rank weights; a generation with no ranking
    /// information at all leaves the mean and step size in place.
    pub fn tell(&mut self, evals: &[CandidateEvaluation]) -> Result<(), OptimizerError> {
        if evals.len() != self.lambda {
            return Err(OptimizerError::WrongPopulationSize {
                expected: self.lambda,
                got: evals.len(),
            });
        }
        if let Some(e) = evals.iter().find(|e| !e.score.is_finite()) {
            return Err(OptimizerError::NonFiniteScore(e.score));
        }
        for e in evals {
            if e.vector.len() != self.dim {
                return Err(OptimizerError::LengthMismatch {
                    expected: self.dim,
                    got: e.vector.len(),
                });
            }
        }
        let mut order: Vec<usize> = (0..self.lambda).collect();
        order.sort_by(|&a, &b| evals[b].score.partial_cmp(&evals[a].score).unwrap());
        let mut rank_w = vec![0.0; self.lambda];
        rank_w[..self.mu].copy_from_slice(&self.weights);
        let mut w = vec![0.0; self.lambda];
        let mut i = 0;
        while i < self.lambda {
            let mut j = i + 1;
            while j < self.lambda && evals[order[j]].score == evals[order[i]].score {
                j += 1;
            }
            let avg = rank_w[i..j].iter().sum::<f64>() / (j - i) as f64;
            for k in i..j {
                w[order[k]] = avg;
            }
            i = j;
        }
        let all_tied = evals.iter().all(|e| e.score == evals[0].score);

        let ys: Vec<DVector<f64>> = evals
            .iter()
            .map(|e| (DVector::from_column_slice(&e.vector) - &self.mean) / self.sigma)
            .collect();
        if all_tied {
            // No ranking information: keep the mean, paths and step size so a
            // plateau does not collapse the search; only the rank-mu term
            // (equal weights here) updates the covariance.
            self.generation += 1;
            let mut rank_mu = DMatrix::zeros(self.dim, self.dim);
            for (y, wk) in ys.iter().zip(&w) {
                rank_mu += (y * y.transpose()) * *wk;
            }
            self.cov = &self.cov * (1.0 - self.c_mu) + rank_mu * self.c_mu;
            self.cov = (&self.cov + self.cov.transpose()) * 0.5;
            self.decompose();
            return Ok(());
        }
        let mut y_w = DVector::zeros(self.dim);
        for (y, wk) in ys.iter().zip(&w) {
            y_w += y * *wk;
        }
        self.mean += &y_w * self.sigma;

        let inv_sqrt = &self.basis
            * DMatrix::from_diagonal(&self.scales.map(|s| 1.0 / s))
            * self.basis.transpose();
        let cs = self.c_sigma;
        self.p_sigma = &self.p_sigma * (1.0 - cs) + (inv_sqrt * &y_w) * (cs * (2.0 - cs) * self.mu_eff).sqrt();
        self.generation += 1;
        let ps_norm = self.p_sigma.norm();
        let decay = 1.0 - (1.0 - cs).powi(2 * self.generation as i32);
        let h_sigma = if ps_norm / decay.sqrt() < (1.4 + 2.0 / (self.dim as f64 + 1.0)) * self.chi_n {
            1.0
        } else {
            0.0
        };
        let cc = self.c_c;
        self.p_c = &self.p_c * (1.0 - cc) + &y_w * (h_sigma * (cc * (2.0 - cc) * self.mu_eff).sqrt());

        let mut rank_mu = DMatrix::zeros(self.dim, self.dim);
        for (y, wk) in ys.iter().zip(&w) {
            if *wk > 0.0 {
                rank_mu += (y * y.transpose()) * *wk;
            }
        }
        let old_keep = 1.0 - self.c_1 - self.c_mu + (1.0 - h_sigma) * self.c_1 * cc * (2.0 - cc);
        self.cov = &self.cov * old_keep + (&self.p_c * self.p_c.transpose()) * self.c_1 + rank_mu * self.c_mu;
        self.cov = (&self.cov + self.cov.transpose()) * 0.5;

        self.sigma *= ((cs / self.d_sigma) * (ps_norm / self.chi_n - 1.0)).exp();
        self.decompose();
        Ok(())
    }

    /// Eigen-decompose the covariance with an eigenvalue floor that caps the
    /// condition number.
    fn decompose(&mut self) {
        let eig = SymmetricEigen::new(self.cov.clone());
        let max = eig.eigenvalues.max().max(f64::MIN_POSITIVE);
        let floor = max / MAX_CONDITION;
        let vals = eig.eigenvalues.map(|v| v.max(floor));
        if vals != eig.eigenvalues {
            self.cov = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
            self.cov = (&self.cov + self.cov.transpose()) * 0.5;
        }
        self.basis = eig.eigenvectors;
        self.scales = vals.map(f64::sqrt);
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.scales.iter().map(|s| s * s).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Best score seen so far, including this generation.
    pub best_score: f64,
    pub mean_score: f64,
    pub sigma: f64,
}

pub fn history_csv(history: &[GenerationRecord]) -> String {
    let mut out = String::from("generation,best_score,mean_score,sigma\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{}", r.generation, r.best_score, r.mean_score, r.sigma);
    }
    out
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub spec: ToolSpec,
    pub trajectory: Trajectory,
    pub best_score: f64,
    pub best_vector: Vec<f64>,
    pub history: Vec<GenerationRecord>,
    pub evaluations: usize,
}

/// Run `config.iterations` generations of λ candidates each. Every candidate
/// is unpacked into a spec and trajectory and scored by `evaluator`, which
/// must map failures to a finite score. Evaluation runs in parallel; results
/// are gathered in candidate order.
pub fn optimize<F>(
    spec: &ToolSpec,
    traj: &Trajectory,
    evaluator: F,
    config: &CmaesConfig,
    selection: ParamSelection,
) -> Result<OptimizeResult, OptimizerError>
where
    F: Fn(&ToolSpec, &Trajectory) -> f64 + Sync,
{
    config.check()?;
    let packed = pack_selected(spec, traj, selection);
    if packed.values.is_empty() {
        return Err(OptimizerError::EmptyDimension);
    }
    let mut state = cmaes_init(packed.values.len(), config, &packed.values)?;
    let mut rng = rng_for(config.seed, "cmaes");
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut history = Vec::with_capacity(config.iterations);
    let mut evaluations = 0;
    for g in 0..config.iterations {
        let cands = state.ask(&mut rng);
        let scores: Vec<f64> = cands
            .par_iter()
            .map(|x| match unpack(x, &packed.descriptors, spec, traj) {
                Ok((s, t)) => {
                    let v = evaluator(&s, &t);
                    if v.is_finite() {
                        v
                    } else {
                        log::warn!("candidate produced non-finite score {v}; using 0");
                        0.0
                    }
                }
                Err(_) => 0.0,
            })
            .collect();
        evaluations += cands.len();
        for (x, s) in cands.iter().zip(&scores) {
            if best.as_ref().is_none_or(|(b, _)| s > b) {
                best = Some((*s, x.clone()));
            }
        }
        let evals: Vec<CandidateEvaluation> = cands
            .into_iter()
            .zip(&scores)
            .map(|(vector, &score)| CandidateEvaluation { vector, score })
            .collect();
        state.tell(&evals)?;
        history.push(GenerationRecord {
            generation: g + 1,
            best_score: best.as_ref().map(|b| b.0).unwrap_or(f64::NEG_INFINITY),
            mean_score: scores.iter().sum::<f64>() / scores.len() as f64,
            sigma: state.sigma,
        });
    }
    let (best_score, best_vector) = best.expect("at least one generation");
    let (spec, trajectory) = unpack(&best_vector, &packed.descriptors, spec, traj)?;
    Ok(OptimizeResult {
        spec,
        trajectory,
        best_score,
        best_vector,
        history,
        evaluations,
    })
}

/// Minimize-style helper used by benchmarks: runs ask/tell on `f` (to be
/// maximized) for up to `generations` and returns the best score per
/// generation.
pub fn run_benchmark<F>(
    f: F,
    x0: &[f64],
    config: &CmaesConfig,
    generations: usize,
) -> Result<Vec<f64>, OptimizerError>
where
    F: Fn(&[f64]) -> f64,
{
    let mut state = cmaes_init(x0.len(), config, x0)?;
    let mut rng = rng_for(config.seed, "cmaes");
    let mut best = f64::NEG_INFINITY;
    let mut out = Vec::with_capacity(generations);
    for _ in 0..generations {
        let cands = state.ask(&mut rng);
        let evals: Vec<CandidateEvaluation> = cands
            .into_iter()
            .map(|v| {
                let score = f(&v);
                CandidateEvaluation { vector: v, score }
            })
            .collect();
        for e in &evals {
            best = best.max(e.score);
        }
        state.tell(&evals)?;
        out.push(best);
    }
    Ok(out)
}
