//! Outer iteration of the preconditioned methods and the training loop.
//!
//! Every preconditioned iteration has three phases:
//!
//! 1. one global forward/backward pass builds the block cache, then every
//!    subdomain runs CAdam against it and the local steps are lifted into a
//!    global proposal `s`;
//! 2. `s` is tested against the non-monotone window; if it fails, the
//!    correction schedule is tried; the radius follows the ratio of `s`;
//! 3. a smoothing trust-region step along the steepest-descent direction is
//!    taken from the resulting point with a fresh gradient.
//!
//! The `tr` and `ntr` baselines run phase 3 only.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::globalization::{
    assess, correction_loop, ntr_step, radius_update, Assessment, CorrectionOutcome, DecisionLog,
    GlobalizationError, NtrConstants, NtrDirection, NtrState, Phase, Ratios,
};
use crate::harness::{Dataset, RunRecord};
use crate::local_solver::{cadam_solve, AdamParams, CAdamState, LocalSolverError};
use crate::model::{Architecture, Batch, BlockCache, ModelError};
use crate::partition::{inf_norm, ParamPartition, PartitionError};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Globalization(#[from] GlobalizationError),
    #[error("non-finite objective {loss} at iteration {k}")]
    NonFiniteLoss { k: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Monotone trust region, smoothing steps only.
    Tr,
    /// Non-monotone trust region, smoothing steps only.
    Ntr,
    /// Preconditioned, monotone window.
    Apts,
    /// Preconditioned, proposal always taken.
    AptsAlwaysAccept,
    /// Preconditioned, non-monotone window.
    Napts,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Tr,
        Method::Ntr,
        Method::Apts,
        Method::AptsAlwaysAccept,
        Method::Napts,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Tr => "tr",
            Method::Ntr => "ntr",
            Method::Apts => "apts",
            Method::AptsAlwaysAccept => "apts_a",
            Method::Napts => "napts",
        }
    }

    pub fn is_preconditioned(self) -> bool {
        matches!(self, Method::Apts | Method::AptsAlwaysAccept | Method::Napts)
    }

    /// Monotone methods run with a window holding only the current decision.
    pub fn is_monotone(self) -> bool {
        matches!(self, Method::Tr | Method::Apts | Method::AptsAlwaysAccept)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = DriverError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tr" => Ok(Method::Tr),
            "ntr" => Ok(Method::Ntr),
            "apts" => Ok(Method::Apts),
            "apts-a" | "apts_a" => Ok(Method::AptsAlwaysAccept),
            "napts" => Ok(Method::Napts),
            _ => Err(DriverError::Config(format!(
                "unknown method {s:?}; expected tr, ntr, apts, apts-a or napts"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodConfig {
    pub method: Method,
    /// CAdam iterations per subdomain (`ℓ`).
    pub inner_iters: usize,
    /// `constants.memory` is the window length ν; monotone methods override it with 0.
    pub constants: NtrConstants,
    pub adam: AdamParams,
    pub adam_persist_moments: bool,
    pub reeval_reference: bool,
    pub ntr_direction: NtrDirection,
    /// Run subdomain solves on the rayon pool instead of one after another.
    pub parallel_subdomains: bool,
    pub seed: u64,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            method: Method::Napts,
            inner_iters: 3,
            constants: NtrConstants::default(),
            adam: AdamParams::default(),
            adam_persist_moments: false,
            reeval_reference: false,
            ntr_direction: NtrDirection::Normalized,
            parallel_subdomains: true,
            seed: 0,
        }
    }
}

impl MethodConfig {
    pub fn for_method(method: Method) -> Self {
        Self {
            method,
            ..Default::default()
        }
    }

    pub fn effective_constants(&self) -> NtrConstants {
        let mut c = self.constants;
        if self.method.is_monotone() {
            c.memory = 0;
        }
        c
    }
}

/// What happened to the additive proposal in phases 1 and 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalReport {
    pub trial_norm: f64,
    pub local_norms: Vec<f64>,
    /// Subdomains whose solve failed and contributed a zero step.
    pub failed_subdomains: Vec<usize>,
    pub assessment: Assessment,
    /// Whether `s` itself was taken.
    pub taken: bool,
    pub correction: Option<CorrectionOutcome>,
    pub delta_half: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingReport {
    pub accepted: bool,
    pub step_norm: f64,
    pub ratios: Option<Ratios>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub loss: f64,
    pub delta: f64,
    pub delta_next: f64,
    pub proposal: Option<ProposalReport>,
    /// `None` when phase 3 hit a stationary point.
    pub smoothing: Option<SmoothingReport>,
    pub rejections: u32,
    pub rho_c: f64,
    pub rho_h: f64,
    pub accepted: bool,
    pub timings: [f64; 3],
}

/// Optimizer state carried between outer iterations.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: MethodConfig,
    arch: Arc<Architecture>,
    partition: ParamPartition,
    ntr: NtrState,
    moments: Vec<CAdamState>,
    decisions: Vec<DecisionLog>,
    record_timings: bool,
}

impl Optimizer {
    pub fn new(config: MethodConfig, arch: Arc<Architecture>) -> Result<Self, DriverError> {
        if config.inner_iters == 0 {
            return Err(DriverError::Config("inner iterations must be at least 1".into()));
        }
        let ntr = NtrState::new(config.effective_constants())?
            .with_reference_reevaluation(config.reeval_reference);
        let partition = arch.partition();
        let moments = (0..partition.num_subdomains())
            .map(|d| CAdamState::new(partition.local_len(d).unwrap_or(0), config.adam))
            .collect();
        Ok(Self {
            config,
            arch,
            partition,
            ntr,
            moments,
            decisions: Vec::new(),
            record_timings: true,
        })
    }

    /// Report zero instead of wall-clock seconds, for byte-reproducible output.
    pub fn with_timings(mut self, on: bool) -> Self {
        self.record_timings = on;
        self
    }

    pub fn config(&self) -> &MethodConfig {
        &self.config
    }

    pub fn delta(&self) -> f64 {
        self.ntr.delta()
    }

    pub fn ntr_state(&self) -> &NtrState {
        &self.ntr
    }

    pub fn decisions(&self) -> &[DecisionLog] {
        &self.decisions
    }

    pub fn partition(&self) -> &ParamPartition {
        &self.partition
    }

    fn elapsed(&self, t: Instant) -> f64 {
        if self.record_timings {
            t.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }

    /// One outer iteration of the configured method from `theta` on `batch`.
    /// `k` is only used in error messages.
    pub fn step(&mut self, k: usize, theta: &[f64], batch: &Batch) -> Result<(Vec<f64>, IterationReport), DriverError> {
        if self.config.method.is_preconditioned() {
            self.napts_iteration(k, theta, batch)
        } else {
            self.baseline_iteration(k, theta, batch)
        }
    }

    fn objective<'a>(&'a self, batch: &'a Batch) -> impl FnMut(&[f64]) -> f64 + 'a {
        move |x: &[f64]| self.arch.loss(x, batch).unwrap_or(f64::NAN)
    }

    /// Phase 1: CAdam on every subdomain against the shared cache.
    fn local_steps(&mut self, cache: &BlockCache, theta: &[f64], delta: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let ell = self.config.inner_iters;
        let adam = self.config.adam;
        let persist = self.config.adam_persist_moments;
        let partition = &self.partition;
        let mut states: Vec<CAdamState> = if persist {
            std::mem::take(&mut self.moments)
        } else {
            (0..partition.num_subdomains())
                .map(|d| CAdamState::new(partition.local_len(d).unwrap_or(0), adam))
                .collect()
        };
        let solve = |(d, state): (usize, &mut CAdamState)| -> Result<Vec<f64>, LocalSolverError> {
            let theta_d = partition
                .restrict(theta, d)
                .map_err(|e| LocalSolverError::Model(ModelError::BlockSplit(e.to_string())))?;
            cadam_solve(cache, d, &theta_d, ell, delta, state).map(|s| s.step)
        };
        let results: Vec<_> = if self.config.parallel_subdomains {
            states.par_iter_mut().enumerate().map(solve).collect()
        } else {
            states.iter_mut().enumerate().map(solve).collect()
        };
        if persist {
            self.moments = states;
        }
        let mut failed = Vec::new();
        let steps = results
            .into_iter()
            .enumerate()
            .map(|(d, r)| {
                r.unwrap_or_else(|_| {
                    failed.push(d);
                    vec![0.0; partition.local_len(d).unwrap_or(0)]
                })
            })
            .collect();
        (steps, failed)
    }

    /// Phases 1–3 of one preconditioned outer iteration.
    pub fn napts_iteration(
        &mut self,
        k: usize,
        theta: &[f64],
        batch: &Batch,
    ) -> Result<(Vec<f64>, IterationReport), DriverError> {
        let delta = self.ntr.delta();
        let eta1 = self.ntr.constants().eta1;

        // Phase 1
        let t1 = Instant::now();
        let eval = self.arch.evaluate_with_cache(theta, batch)?;
        let (f_k, grad) = (eval.loss, eval.grad.clone());
        if !f_k.is_finite() {
            return Err(DriverError::NonFiniteLoss { k, loss: f_k });
        }
        let (local, failed_subdomains) = self.local_steps(&eval.cache, theta, delta);
        let s = self.partition.lift_sum(&local)?;
        let local_norms = local.iter().map(|v| inf_norm(v)).collect();
        let t_phase1 = self.elapsed(t1);

        // Phase 2
        let t2 = Instant::now();
        let window = self.ntr.window(f_k);
        let (a, f_ref, correction, taken_step, taken) = {
            let mut f = self.objective(batch);
            let f_ref = self.ntr.reference_value(&window, &mut f);
            let a = assess(theta, &s, &grad, f_k, f_ref, window.sigma_h, eta1, &mut f);
            if a.accepted || self.config.method == Method::AptsAlwaysAccept {
                (a, f_ref, None, s.clone(), true)
            } else {
                let c = correction_loop(theta, &s, &grad, delta, f_k, f_ref, window.sigma_h, eta1, &mut f);
                let step = c.step.clone();
                (a, f_ref, Some(c), step, false)
            }
        };
        let taken_assessment = match &correction {
            None => a,
            Some(c) => c.assessment.unwrap_or(Assessment {
                pred: 0.0,
                f_trial: f_k,
                ratios: None,
                accepted: false,
            }),
        };
        let mut rejections = correction.as_ref().map_or(0, |c| c.rejections);
        let delta_half = radius_update(delta, a.rho(), self.ntr.constants());
        self.ntr.set_delta(delta_half);
        let success = taken_assessment.accepted;
        self.ntr.record(f_k, taken_assessment.pred, success, Some(theta));
        self.decisions.push(DecisionLog::new(
            Phase::Proposal,
            &window,
            f_k,
            f_ref,
            &taken_assessment,
            success,
        ));
        let theta_half: Vec<f64> = theta.iter().zip(&taken_step).map(|(t, x)| t + x).collect();
        let t_phase2 = self.elapsed(t2);

        // Phase 3
        let t3 = Instant::now();
        let (theta_next, smoothing) = self.smoothing_step(k, &theta_half, batch)?;
        if smoothing.as_ref().is_some_and(|s| !s.accepted) {
            rejections += 1;
        }
        let t_phase3 = self.elapsed(t3);

        let report = IterationReport {
            loss: f_k,
            delta,
            delta_next: self.ntr.delta(),
            rho_c: a.ratios.map_or(f64::NAN, |r| r.rho_c),
            rho_h: a.ratios.map_or(f64::NAN, |r| r.rho_h),
            accepted: taken,
            proposal: Some(ProposalReport {
                trial_norm: inf_norm(&s),
                local_norms,
                failed_subdomains,
                assessment: a,
                taken,
                correction,
                delta_half,
            }),
            smoothing,
            rejections,
            timings: [t_phase1, t_phase2, t_phase3],
        };
        Ok((theta_next, report))
    }

    fn smoothing_step(
        &mut self,
        k: usize,
        theta: &[f64],
        batch: &Batch,
    ) -> Result<(Vec<f64>, Option<SmoothingReport>), DriverError> {
        let eval = self.arch.evaluate_with_cache(theta, batch)?;
        if !eval.loss.is_finite() {
            return Err(DriverError::NonFiniteLoss { k, loss: eval.loss });
        }
        let direction = self.config.ntr_direction;
        let arch = Arc::clone(&self.arch);
        let mut f = |x: &[f64]| arch.loss(x, batch).unwrap_or(f64::NAN);
        let Some(out) = ntr_step(theta, eval.loss, &eval.grad, &mut self.ntr, direction, &mut f) else {
            return Ok((theta.to_vec(), None));
        };
        let report = SmoothingReport {
            accepted: out.accepted,
            step_norm: out.step_norm,
            ratios: out.log.rho_c.is_finite().then_some(Ratios {
                rho_c: out.log.rho_c,
                rho_h: out.log.rho_h,
                rho: out.log.rho_c.max(out.log.rho_h),
            }),
        };
        self.decisions.push(out.log);
        Ok((out.theta, Some(report)))
    }

    /// Plain (non-)monotone trust-region iteration for the `tr`/`ntr` baselines.
    pub fn baseline_iteration(
        &mut self,
        k: usize,
        theta: &[f64],
        batch: &Batch,
    ) -> Result<(Vec<f64>, IterationReport), DriverError> {
        let delta = self.ntr.delta();
        let t3 = Instant::now();
        let loss = self.arch.loss(theta, batch)?;
        if !loss.is_finite() {
            return Err(DriverError::NonFiniteLoss { k, loss });
        }
        let (theta_next, smoothing) = self.smoothing_step(k, theta, batch)?;
        let t_phase3 = self.elapsed(t3);
        let (rho_c, rho_h, accepted) = match &smoothing {
            Some(s) => (
                s.ratios.map_or(f64::NAN, |r| r.rho_c),
                s.ratios.map_or(f64::NAN, |r| r.rho_h),
                s.accepted,
            ),
            None => (f64::NAN, f64::NAN, false),
        };
        let rejections = u32::from(smoothing.as_ref().is_some_and(|s| !s.accepted));
        Ok((
            theta_next,
            IterationReport {
                loss,
                delta,
                delta_next: self.ntr.delta(),
                proposal: None,
                smoothing,
                rejections,
                rho_c,
                rho_h,
                accepted,
                timings: [0.0, 0.0, t_phase3],
            },
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingOptions {
    pub epochs: usize,
    pub batch_size: usize,
    /// One batch per epoch holding the whole training set, in fixed order.
    pub full_batch: bool,
    pub record_timings: bool,
    /// Stop once the objective exceeds this value.
    pub divergence_threshold: f64,
    /// Stop after this many outer iterations, if set.
    pub max_iterations: Option<usize>,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 100,
            full_batch: false,
            record_timings: true,
            divergence_threshold: 1e10,
            max_iterations: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    Diverged { k: usize, loss: f64 },
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub records: Vec<RunRecord>,
    pub reports: Vec<IterationReport>,
    pub decisions: Vec<DecisionLog>,
    pub theta: Vec<f64>,
    pub status: RunStatus,
}

impl TrainingRun {
    pub fn total_rejections(&self) -> u64 {
        self.records.iter().map(|r| u64::from(r.rejections)).sum()
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.last().map(|r| r.val_acc)
    }
}

/// Epoch × batch loop around the configured method.
pub fn run_training(
    config: &MethodConfig,
    arch: Arc<Architecture>,
    theta0: Vec<f64>,
    data: &Dataset,
    options: &TrainingOptions,
) -> Result<TrainingRun, DriverError> {
    if options.batch_size == 0 && !options.full_batch {
        return Err(DriverError::Config("batch size must be positive".into()));
    }
    let mut opt = Optimizer::new(config.clone(), Arc::clone(&arch))?.with_timings(options.record_timings);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ba7c);
    let mut theta = theta0;
    let mut records = Vec::new();
    let mut reports = Vec::new();
    let mut status = RunStatus::Completed;
    let mut k = 0;
    let mut order: Vec<usize> = (0..data.train_len()).collect();

    'epochs: for epoch in 0..options.epochs {
        let batches: Vec<Vec<usize>> = if options.full_batch {
            vec![order.clone()]
        } else {
            order.shuffle(&mut rng);
            order.chunks(options.batch_size).map(<[usize]>::to_vec).collect()
        };
        for (b, rows) in batches.iter().enumerate() {
            if options.max_iterations.is_some_and(|m| k >= m) {
                break 'epochs;
            }
            let batch = data.batch(k as u64, rows);
            let (next, report) = match opt.step(k, &theta, &batch) {
                Ok(r) => r,
                Err(DriverError::NonFiniteLoss { k, loss }) => {
                    status = RunStatus::Diverged { k, loss };
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            if report.loss > options.divergence_threshold {
                status = RunStatus::Diverged { k, loss: report.loss };
                break 'epochs;
            }
            theta = next;
            let val_acc = arch.accuracy(&theta, &data.val_inputs, &data.val_labels)?;
            records.push(RunRecord {
                k,
                epoch,
                batch: b,
                loss: report.loss,
                val_acc,
                delta: report.delta,
                rho_c: report.rho_c,
                rho_h: report.rho_h,
                accepted: report.accepted,
                rejections: report.rejections,
                t_phase1: report.timings[0],
                t_phase2: report.timings[1],
                t_phase3: report.timings[2],
            });
            reports.push(report);
            k += 1;
        }
    }
    Ok(TrainingRun {
        records,
        reports,
        decisions: opt.decisions,
        theta,
        status,
    })
}
