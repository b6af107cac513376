//! Non-monotone trust-region globalization with a first-order model.
//!
//! A single [`NtrState`] keeps the log of every acceptance decision. From it
//! the window of recent successful decisions, the reference index (the
//! window member with the largest recorded objective) and the history term
//! (summed predicted decrease of window successes from the reference on) are
//! derived. Trial steps are judged by `ρ = max(ρ_c, ρ_h)`.

use std::collections::VecDeque;

use thiserror::Error;

use crate::partition::inf_norm;

/// Predicted decreases at or below this value make a step unusable.
pub const PRED_EPSILON: f64 = 1e-14;

/// `(α, β)` pairs tried in order when the additive proposal is rejected.
pub const CORRECTION_SCHEDULE: [(f64, f64); 5] = [
    (0.8, 0.5),
    (0.6, 0.25),
    (0.4, 0.125),
    (0.2, 0.0625),
    (0.0, 0.03125),
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlobalizationError {
    #[error("invalid trust-region constants: {0}")]
    Constants(String),
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum RatioError {
    #[error("non-finite quantity in agreement ratio")]
    NonFinite,
    #[error("predicted decrease {0} is not positive")]
    NonDescent(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NtrConstants {
    pub eta1: f64,
    pub eta2: f64,
    pub gamma_dec: f64,
    pub gamma_inc: f64,
    pub delta0: f64,
    /// Window length ν; 0 restricts the window to the current decision.
    pub memory: usize,
    pub delta_min: f64,
    pub delta_max: f64,
}

impl Default for NtrConstants {
    fn default() -> Self {
        Self {
            eta1: 0.1,
            eta2: 0.75,
            gamma_dec: 0.5,
            gamma_inc: 2.0,
            delta0: 0.1,
            memory: 100,
            delta_min: 1e-6,
            delta_max: 1.0,
        }
    }
}

impl NtrConstants {
    pub fn validate(&self) -> Result<(), GlobalizationError> {
        let bad = |msg: &str| Err(GlobalizationError::Constants(msg.to_string()));
        if !(self.eta1 > 0.0 && self.eta1 <= self.eta2 && self.eta2 < 1.0) {
            return bad("need 0 < eta1 <= eta2 < 1");
        }
        if !(self.gamma_dec > 0.0 && self.gamma_dec < 1.0) {
            return bad("need 0 < gamma_dec < 1");
        }
        if !(self.gamma_inc > 1.0 && self.gamma_inc.is_finite()) {
            return bad("need gamma_inc > 1");
        }
        if !(self.delta_min > 0.0 && self.delta_min <= self.delta0 && self.delta0 <= self.delta_max) {
            return bad("need 0 < delta_min <= delta0 <= delta_max");
        }
        Ok(())
    }
}

/// One logged acceptance decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    /// Objective at the point the decision started from.
    pub f: f64,
    /// Model decrease of the step actually taken.
    pub pred: f64,
    pub success: bool,
}

/// Window, reference index and history term for decision `index`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub index: usize,
    /// Successful decisions in `[index - ν, index)` followed by `index` itself.
    pub members: Vec<usize>,
    pub reference: usize,
    /// Recorded objective at the reference (the current value when `reference == index`).
    pub f_ref: f64,
    pub sigma_h: f64,
}

#[derive(Debug, Clone)]
struct WindowSlot {
    index: usize,
    f: f64,
    pred: f64,
    iterate: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct NtrState {
    constants: NtrConstants,
    delta: f64,
    history: Vec<HistoryEntry>,
    successes: VecDeque<WindowSlot>,
    reevaluate_reference: bool,
}

impl NtrState {
    pub fn new(constants: NtrConstants) -> Result<Self, GlobalizationError> {
        constants.validate()?;
        Ok(Self {
            constants,
            delta: constants.delta0,
            history: Vec::new(),
            successes: VecDeque::new(),
            reevaluate_reference: false,
        })
    }

    /// Re-evaluate the reference iterate on the current batch instead of
    /// using its recorded objective. Keeps copies of window iterates.
    pub fn with_reference_reevaluation(mut self, on: bool) -> Self {
        self.reevaluate_reference = on;
        self
    }

    pub fn reevaluates_reference(&self) -> bool {
        self.reevaluate_reference
    }

    pub fn constants(&self) -> &NtrConstants {
        &self.constants
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn set_delta(&mut self, delta: f64) {
        self.delta = delta.clamp(self.constants.delta_min, self.constants.delta_max);
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    /// Index the next recorded decision will receive.
    pub fn next_index(&self) -> usize {
        self.history.len()
    }

    /// Window quantities for the next decision, whose starting objective is `f_current`.
    pub fn window(&self, f_current: f64) -> Window {
        let k = self.next_index();
        let lower = k.saturating_sub(self.constants.memory);
        let live: Vec<&WindowSlot> = self.successes.iter().filter(|s| s.index >= lower).collect();

        let mut reference = k;
        let mut f_ref = f_current;
        // Scan newest first so ties keep the most recent index.
        for slot in live.iter().rev() {
            if slot.f > f_ref {
                reference = slot.index;
                f_ref = slot.f;
            }
        }
        let sigma_h = live
            .iter()
            .filter(|s| s.index >= reference)
            .map(|s| s.pred)
            .sum();
        let mut members: Vec<usize> = live.iter().map(|s| s.index).collect();
        members.push(k);
        Window {
            index: k,
            members,
            reference,
            f_ref,
            sigma_h,
        }
    }

    fn reference_iterate(&self, reference: usize) -> Option<&[f64]> {
        self.successes
            .iter()
            .find(|s| s.index == reference)
            .and_then(|s| s.iterate.as_deref())
    }

    /// Objective used for `f(θ^{r(k)})`: the recorded value, or a fresh
    /// evaluation of the stored iterate when re-evaluation is enabled.
    pub fn reference_value<F>(&self, window: &Window, evaluate: &mut F) -> f64
    where
        F: FnMut(&[f64]) -> f64,
    {
        if self.reevaluate_reference && window.reference != window.index {
            if let Some(theta) = self.reference_iterate(window.reference) {
                return evaluate(theta);
            }
        }
        window.f_ref
    }

    /// Appends a decision. Successful decisions need a positive `pred` to keep
    /// the history term non-negative; others are logged but never enter a window.
    pub fn record(&mut self, f: f64, pred: f64, success: bool, start: Option<&[f64]>) -> usize {
        let index = self.history.len();
        let success = success && pred > PRED_EPSILON;
        self.history.push(HistoryEntry { f, pred, success });
        if success {
            let iterate = if self.reevaluate_reference {
                start.map(<[f64]>::to_vec)
            } else {
                None
            };
            self.successes.push_back(WindowSlot {
                index,
                f,
                pred,
                iterate,
            });
        }
        let lower = (index + 1).saturating_sub(self.constants.memory);
        while self.successes.front().is_some_and(|s| s.index < lower) {
            self.successes.pop_front();
        }
        index
    }
}

/// `m(0) − m(s) = −∇fᵀ s` for the first-order model.
pub fn model_decrease(grad: &[f64], s: &[f64]) -> f64 {
    -grad.iter().zip(s).map(|(g, x)| g * x).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratios {
    pub rho_c: f64,
    pub rho_h: f64,
    pub rho: f64,
}

/// Current and historical agreement ratios and their maximum.
pub fn agreement_ratios(
    f_k: f64,
    f_trial: f64,
    f_ref: f64,
    pred: f64,
    sigma_h: f64,
) -> Result<Ratios, RatioError> {
    if ![f_k, f_trial, f_ref, pred, sigma_h].iter().all(|v| v.is_finite()) {
        return Err(RatioError::NonFinite);
    }
    if pred <= PRED_EPSILON {
        return Err(RatioError::NonDescent(pred));
    }
    let rho_c = (f_k - f_trial) / pred;
    let rho_h = (f_ref - f_trial) / (sigma_h + pred);
    Ok(Ratios {
        rho_c,
        rho_h,
        rho: rho_c.max(rho_h),
    })
}

/// Radius policy; an undefined ratio (`NaN`) counts as a failure.
pub fn radius_update(delta: f64, rho: f64, c: &NtrConstants) -> f64 {
    let next = if rho >= c.eta2 {
        c.gamma_inc * delta
    } else if rho >= c.eta1 {
        delta
    } else {
        c.gamma_dec * delta
    };
    next.clamp(c.delta_min, c.delta_max)
}

/// Outcome of testing one trial step against the window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assessment {
    pub pred: f64,
    pub f_trial: f64,
    pub ratios: Option<Ratios>,
    pub accepted: bool,
}

impl Assessment {
    /// Combined ratio, `NaN` when undefined.
    pub fn rho(&self) -> f64 {
        self.ratios.map_or(f64::NAN, |r| r.rho)
    }
}

/// Evaluates `f(θ + s)` and tests `ρ > η₁`.
#[allow(clippy::too_many_arguments)]
pub fn assess<F>(
    theta: &[f64],
    s: &[f64],
    grad: &[f64],
    f_k: f64,
    f_ref: f64,
    sigma_h: f64,
    eta1: f64,
    evaluate: &mut F,
) -> Assessment
where
    F: FnMut(&[f64]) -> f64,
{
    let pred = model_decrease(grad, s);
    let trial: Vec<f64> = theta.iter().zip(s).map(|(t, x)| t + x).collect();
    let f_trial = evaluate(&trial);
    let ratios = agreement_ratios(f_k, f_trial, f_ref, pred, sigma_h).ok();
    Assessment {
        pred,
        f_trial,
        ratios,
        accepted: ratios.is_some_and(|r| r.rho > eta1),
    }
}

/// `β[(1−α)(−Δ g/‖g‖∞) + α s]`.
pub fn correction_candidate(s: &[f64], grad: &[f64], delta: f64, alpha: f64, beta: f64) -> Vec<f64> {
    let g_inf = inf_norm(grad);
    s.iter()
        .zip(grad)
        .map(|(si, gi)| beta * ((1.0 - alpha) * (-delta * gi / g_inf) + alpha * si))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateLog {
    pub alpha: f64,
    pub beta: f64,
    pub norm: f64,
    pub assessment: Assessment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionOutcome {
    pub step: Vec<f64>,
    /// Failed acceptance tests, including the proposal that triggered the loop.
    pub rejections: u32,
    /// Assessment of the returned step; `None` at a stationary point.
    pub assessment: Option<Assessment>,
    pub candidates: Vec<CandidateLog>,
}

impl CorrectionOutcome {
    pub fn accepted(&self) -> bool {
        self.assessment.is_some_and(|a| a.accepted)
    }
}

/// Tries the correction schedule after the proposal `s` failed. Returns the
/// first candidate with `ρ > η₁`, or the last candidate if none passes.
#[allow(clippy::too_many_arguments)]
pub fn correction_loop<F>(
    theta: &[f64],
    s: &[f64],
    grad: &[f64],
    delta: f64,
    f_k: f64,
    f_ref: f64,
    sigma_h: f64,
    eta1: f64,
    evaluate: &mut F,
) -> CorrectionOutcome
where
    F: FnMut(&[f64]) -> f64,
{
    let g_inf = inf_norm(grad);
    if g_inf == 0.0 || !g_inf.is_finite() {
        return CorrectionOutcome {
            step: vec![0.0; theta.len()],
            rejections: 1,
            assessment: None,
            candidates: Vec::new(),
        };
    }
    let mut rejections = 1;
    let mut candidates = Vec::with_capacity(CORRECTION_SCHEDULE.len());
    let mut last = Vec::new();
    for (alpha, beta) in CORRECTION_SCHEDULE {
        let c = correction_candidate(s, grad, delta, alpha, beta);
        let a = assess(theta, &c, grad, f_k, f_ref, sigma_h, eta1, evaluate);
        candidates.push(CandidateLog {
            alpha,
            beta,
            norm: inf_norm(&c),
            assessment: a,
        });
        if a.accepted {
            return CorrectionOutcome {
                step: c,
                rejections,
                assessment: Some(a),
                candidates,
            };
        }
        rejections += 1;
        last = c;
    }
    let assessment = candidates.last().map(|c| c.assessment);
    CorrectionOutcome {
        step: last,
        rejections,
        assessment,
        candidates,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NtrDirection {
    /// `−Δ g / ‖g‖∞`.
    #[default]
    Normalized,
    /// `−Δ sign(g)`, the minimizer of the linear model over the ∞-ball.
    Sign,
}

pub fn steepest_step(grad: &[f64], delta: f64, direction: NtrDirection) -> Vec<f64> {
    match direction {
        NtrDirection::Normalized => {
            let g_inf = inf_norm(grad);
            grad.iter().map(|g| -delta * g / g_inf).collect()
        }
        NtrDirection::Sign => grad
            .iter()
            .map(|&g| if g == 0.0 { 0.0 } else { -delta * g.signum() })
            .collect(),
    }
}

/// Which acceptance stage logged a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Test of the additive proposal (and its corrections).
    Proposal,
    /// Standalone smoothing step along the steepest-descent direction.
    Smoothing,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Proposal => "proposal",
            Phase::Smoothing => "smoothing",
        }
    }
}

/// Everything needed to replay one decision of the window logic.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionLog {
    pub index: usize,
    pub phase: Phase,
    pub f: f64,
    pub f_trial: f64,
    pub f_ref: f64,
    pub pred: f64,
    pub success: bool,
    pub members: Vec<usize>,
    pub reference: usize,
    pub sigma_h: f64,
    pub rho_c: f64,
    pub rho_h: f64,
}

impl DecisionLog {
    pub fn new(phase: Phase, window: &Window, f: f64, f_ref: f64, a: &Assessment, success: bool) -> Self {
        Self {
            index: window.index,
            phase,
            f,
            f_trial: a.f_trial,
            f_ref,
            pred: a.pred,
            success,
            members: window.members.clone(),
            reference: window.reference,
            sigma_h: window.sigma_h,
            rho_c: a.ratios.map_or(f64::NAN, |r| r.rho_c),
            rho_h: a.ratios.map_or(f64::NAN, |r| r.rho_h),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NtrOutcome {
    pub theta: Vec<f64>,
    pub delta_before: f64,
    pub delta_after: f64,
    pub step_norm: f64,
    pub accepted: bool,
    pub log: DecisionLog,
}

/// One non-monotone trust-region iteration along the steepest-descent
/// direction from `theta`, with objective `f_k` and gradient `grad` there.
/// Returns `None`, leaving the state untouched, at a stationary point.
pub fn ntr_step<F>(
    theta: &[f64],
    f_k: f64,
    grad: &[f64],
    state: &mut NtrState,
    direction: NtrDirection,
    evaluate: &mut F,
) -> Option<NtrOutcome>
where
    F: FnMut(&[f64]) -> f64,
{
    let g_inf = inf_norm(grad);
    if g_inf == 0.0 || !g_inf.is_finite() {
        return None;
    }
    let delta = state.delta();
    let s = steepest_step(grad, delta, direction);
    let window = state.window(f_k);
    let f_ref = state.reference_value(&window, evaluate);
    let eta1 = state.constants().eta1;
    let a = assess(theta, &s, grad, f_k, f_ref, window.sigma_h, eta1, evaluate);
    let delta_after = radius_update(delta, a.rho(), state.constants());
    state.set_delta(delta_after);
    state.record(f_k, a.pred, a.accepted, Some(theta));
    let theta_next = if a.accepted {
        theta.iter().zip(&s).map(|(t, x)| t + x).collect()
    } else {
        theta.to_vec()
    };
    Some(NtrOutcome {
        theta: theta_next,
        delta_before: delta,
        delta_after: state.delta(),
        step_norm: inf_norm(&s),
        accepted: a.accepted,
        log: DecisionLog::new(Phase::Smoothing, &window, f_k, f_ref, &a, a.accepted),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consts(memory: usize) -> NtrConstants {
        NtrConstants {
            memory,
            ..Default::default()
        }
    }

    #[test]
    fn model_decrease_examples() {
        assert_eq!(model_decrease(&[1.0, -2.0], &[-1.0, 2.0]), 5.0);
        assert_eq!(model_decrease(&[1.0, 1.0], &[1.0, -1.0]), 0.0);
        assert_eq!(model_decrease(&[1.0, -2.0], &[0.5, 0.5]), 0.5);
    }

    #[test]
    fn ratio_examples() {
        let r = agreement_ratios(1.0, 0.9, 1.2, 0.2, 0.3).unwrap();
        assert!((r.rho_c - 0.5).abs() < 1e-12);
        assert!((r.rho_h - 0.6).abs() < 1e-12);
        assert_eq!(r.rho, r.rho_h);

        let r = agreement_ratios(1.0, 0.9, 1.0, 0.2, 0.0).unwrap();
        assert_eq!(r.rho_c, r.rho_h);

        let r = agreement_ratios(1.0, 1.05, 1.5, 0.2, 0.4).unwrap();
        assert!(r.rho_c < 0.0);
        assert!((r.rho_h - 0.75).abs() < 1e-12);
        assert!(r.rho > 0.1);
    }

    #[test]
    fn ratio_errors() {
        assert_eq!(
            agreement_ratios(f64::NAN, 0.9, 1.0, 0.2, 0.0),
            Err(RatioError::NonFinite)
        );
        assert_eq!(
            agreement_ratios(1.0, f64::INFINITY, 1.0, 0.2, 0.0),
            Err(RatioError::NonFinite)
        );
        assert!(matches!(
            agreement_ratios(1.0, 0.9, 1.0, 1e-15, 0.0),
            Err(RatioError::NonDescent(_))
        ));
        assert!(matches!(
            agreement_ratios(1.0, 0.9, 1.0, -0.3, 0.0),
            Err(RatioError::NonDescent(_))
        ));
    }

    #[test]
    fn radius_policy_branches() {
        let c = NtrConstants::default();
        assert_eq!(radius_update(0.1, c.eta2, &c), 0.2);
        assert_eq!(radius_update(0.1, 0.5, &c), 0.1);
        assert_eq!(radius_update(0.1, c.eta1, &c), 0.1);
        assert_eq!(radius_update(0.1, 0.0, &c), 0.05);
        assert_eq!(radius_update(c.delta_min, -3.0, &c), c.delta_min);
        assert_eq!(radius_update(c.delta_max, 0.9, &c), c.delta_max);
        assert_eq!(radius_update(0.1, f64::NAN, &c), 0.05);
    }

    #[test]
    fn empty_window_references_current() {
        let st = NtrState::new(consts(10)).unwrap();
        let w = st.window(3.0);
        assert_eq!(w.members, vec![0]);
        assert_eq!(w.reference, 0);
        assert_eq!(w.sigma_h, 0.0);
        assert_eq!(w.f_ref, 3.0);
    }

    #[test]
    fn window_picks_largest_recorded_objective() {
        let mut st = NtrState::new(consts(10)).unwrap();
        for j in 0..7 {
            let (f, pred, ok) = match j {
                4 => (1.2, 0.05, true),
                6 => (0.9, 0.07, true),
                _ => (5.0, 0.1, false),
            };
            st.record(f, pred, ok, None);
        }
        let w = st.window(0.8);
        assert_eq!(w.index, 7);
        assert_eq!(w.members, vec![4, 6, 7]);
        assert_eq!(w.reference, 4);
        assert_eq!(w.f_ref, 1.2);
        assert!((w.sigma_h - 0.12).abs() < 1e-15);
    }

    #[test]
    fn window_drops_old_successes() {
        let mut st = NtrState::new(consts(2)).unwrap();
        st.record(9.0, 0.1, true, None);
        st.record(1.0, 0.1, false, None);
        st.record(1.0, 0.1, false, None);
        let w = st.window(0.5);
        assert_eq!(w.members, vec![3]);
        assert_eq!(w.reference, 3);
    }

    #[test]
    fn ties_prefer_most_recent() {
        let mut st = NtrState::new(consts(10)).unwrap();
        st.record(2.0, 0.3, true, None);
        st.record(2.0, 0.1, true, None);
        let w = st.window(1.0);
        assert_eq!(w.reference, 1);
        assert!((w.sigma_h - 0.1).abs() < 1e-15);
        // Current value ties with the window maximum: current index wins.
        let w = st.window(2.0);
        assert_eq!(w.reference, 2);
        assert_eq!(w.sigma_h, 0.0);
    }

    #[test]
    fn zero_memory_window_is_current_only() {
        let mut st = NtrState::new(consts(0)).unwrap();
        st.record(10.0, 1.0, true, None);
        let w = st.window(1.0);
        assert_eq!(w.members, vec![1]);
        assert_eq!(w.reference, 1);
    }

    #[test]
    fn failed_or_non_descent_records_never_enter_window() {
        let mut st = NtrState::new(consts(10)).unwrap();
        st.record(10.0, 0.0, true, None);
        st.record(10.0, 1.0, false, None);
        assert!(!st.history()[0].success);
        assert_eq!(st.window(1.0).members, vec![2]);
    }

    #[test]
    fn collapsed_candidate_is_scaled_steepest_descent() {
        let g = [2.0, -4.0, 1.0];
        let s = [0.3, 0.3, -0.3];
        let c = correction_candidate(&s, &g, 0.64, 0.0, 1.0 / 32.0);
        let expect: Vec<f64> = g.iter().map(|x| -(0.64 / 32.0) * x / 4.0).collect();
        for (a, b) in c.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-16);
        }
    }

    #[test]
    fn first_candidate_accepted_counts_one_rejection() {
        // f(θ) = ½‖θ‖², proposal orthogonal to the gradient.
        let theta = [1.0, -2.0];
        let grad = [1.0, -2.0];
        let s = [0.1, 0.05];
        let mut f = |x: &[f64]| 0.5 * x.iter().map(|v| v * v).sum::<f64>();
        let f_k = f(&theta);
        let out = correction_loop(&theta, &s, &grad, 0.1, f_k, f_k, 0.0, 0.1, &mut f);
        assert!(out.accepted());
        assert_eq!(out.rejections, 1);
        assert_eq!(out.candidates.len(), 1);
    }

    #[test]
    fn all_candidates_failing_returns_last() {
        let theta = [0.0];
        let grad = [1.0];
        let s = [0.5];
        // Objective jumps up away from θ whatever the step.
        let mut f = |x: &[f64]| if x[0] == 0.0 { 0.0 } else { 1.0 };
        let out = correction_loop(&theta, &s, &grad, 0.5, 0.0, 0.0, 0.0, 0.1, &mut f);
        assert!(!out.accepted());
        assert_eq!(out.rejections, 6);
        assert_eq!(out.candidates.len(), 5);
        assert_eq!(out.step, vec![-0.5 / 32.0]);
    }

    #[test]
    fn stationary_correction_is_zero_step() {
        let mut f = |_: &[f64]| 1.0;
        let out = correction_loop(&[1.0, 1.0], &[0.1, 0.1], &[0.0, 0.0], 0.5, 1.0, 1.0, 0.0, 0.1, &mut f);
        assert_eq!(out.step, vec![0.0, 0.0]);
        assert_eq!(out.rejections, 1);
        assert!(out.assessment.is_none());
    }

    #[test]
    fn ntr_step_on_quadratic_bowl_descends() {
        let mut f = |x: &[f64]| 0.5 * x.iter().map(|v| v * v).sum::<f64>();
        let theta = vec![3.0, -1.0, 2.0];
        let mut st = NtrState::new(consts(5)).unwrap();
        let f0 = f(&theta);
        let out = ntr_step(&theta, f0, &theta.clone(), &mut st, NtrDirection::Normalized, &mut f).unwrap();
        assert!(out.accepted);
        assert!(f(&out.theta) < f0);
        assert!((out.step_norm - 0.1).abs() < 1e-15);
        assert_eq!(st.history().len(), 1);
    }

    #[test]
    fn ntr_step_at_stationary_point_is_noop() {
        let mut f = |_: &[f64]| 0.0;
        let mut st = NtrState::new(consts(5)).unwrap();
        assert!(ntr_step(&[1.0], 0.0, &[0.0], &mut st, NtrDirection::Normalized, &mut f).is_none());
        assert_eq!(st.delta(), 0.1);
        assert!(st.history().is_empty());
    }

    #[test]
    fn sign_direction_fills_the_box() {
        let s = steepest_step(&[0.5, -3.0, 0.0], 0.2, NtrDirection::Sign);
        assert_eq!(s, vec![-0.2, 0.2, 0.0]);
    }

    #[test]
    fn reference_reevaluation_uses_stored_iterate() {
        let c = consts(10);
        let mut st = NtrState::new(c).unwrap().with_reference_reevaluation(true);
        st.record(5.0, 0.5, true, Some(&[2.0]));
        let w = st.window(1.0);
        assert_eq!(w.reference, 0);
        let mut f = |x: &[f64]| x[0] * 10.0;
        assert_eq!(st.reference_value(&w, &mut f), 20.0);

        let mut plain = NtrState::new(c).unwrap();
        plain.record(5.0, 0.5, true, Some(&[2.0]));
        let w = plain.window(1.0);
        assert_eq!(plain.reference_value(&w, &mut f), 5.0);
    }

    #[test]
    fn constants_are_validated() {
        assert!(NtrConstants::default().validate().is_ok());
        let bad = NtrConstants {
            eta1: 0.8,
            eta2: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = NtrConstants {
            gamma_inc: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = NtrConstants {
            delta0: 2.0,
            ..Default::default()
        };
        assert!(NtrState::new(bad).is_err());
    }
}
