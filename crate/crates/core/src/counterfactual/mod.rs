//! Parametric postprandial trajectories under candidate interventions,
//! outcome scoring, ranking and counterfactual overlays on observed CGM.
//!
//! The response to a meal is a Gaussian bump over a fasting baseline:
//!
//! ```text
//! Δ(t) = α_c·carbs_g·exp(−(t − t_p)² / (2w²)) · [t ≥ start ? exp(−β·activity_min) : 1]
//! glucose(t) = G₀ + Δ(t) + ε(t),  ε ~ N(0, σ²)
//! ```
//!
//! on a 5-minute grid from 0 to the scenario duration.

mod calibrate;
mod export;

use chrono::NaiveDateTime;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::CgmSeries;
use crate::rng::sub_rng;
use crate::twin::{validate_action, Action, CausalGraph, FeasibleRanges, Violation};

pub use calibrate::{
    calibrate, reference_targets, Calibration, CalibrationOptions, CalibrationTarget, SearchRange,
};
pub use export::{
    outcomes_to_csv, outcomes_to_json, parse_trajectories_csv, trajectories_to_csv,
    LabelledTrajectory, OUTCOME_CSV_HEADER,
};

/// Spacing of every simulated trajectory, in minutes.
pub const GRID_STEP_MIN: f64 = 5.0;
/// Glucose above which the utility's peak penalty applies.
pub const PEAK_PENALTY_THRESHOLD: f64 = 180.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CounterfactualError {
    #[error("invalid response parameters: {0}")]
    InvalidParams(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("infeasible action: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InfeasibleAction(Vec<Violation>),
    #[error("invalid utility weights: {0}")]
    InvalidWeights(String),
    #[error("anchor {anchor} lies outside the window")]
    AnchorOutsideWindow { anchor: NaiveDateTime },
    #[error("overlay window must be on a 5-minute grid")]
    WindowNotOnGrid,
    #[error("at least one scenario is required")]
    NoScenarios,
    #[error("calibration failed: best residual {best_residual}")]
    CalibrationFailed {
        best_residual: f64,
        params: Box<ResponseParams>,
    },
    #[error("calibration needs targets: {0}")]
    InvalidTargets(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

pub type Result<T> = std::result::Result<T, CounterfactualError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseParams {
    /// G₀, mg/dL.
    pub baseline_glucose: f64,
    /// α_c, mg/dL per gram.
    pub carb_gain: f64,
    /// t_p, minutes.
    pub time_to_peak: f64,
    /// w, minutes.
    pub width: f64,
    /// β, fraction per activity minute.
    pub activity_attenuation: f64,
    /// σ, mg/dL.
    pub noise_sigma: f64,
    pub tir_low: f64,
    pub tir_high: f64,
}

impl Default for ResponseParams {
    fn default() -> Self {
        Self {
            baseline_glucose: 127.0,
            carb_gain: 52.0 / 60.0,
            time_to_peak: 45.0,
            width: 15.0,
            activity_attenuation: 0.0245,
            noise_sigma: 0.0,
            tir_low: 70.0,
            tir_high: 180.0,
        }
    }
}

impl ResponseParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CounterfactualError::InvalidParams(m.to_string()));
        if !(60.0..=200.0).contains(&self.baseline_glucose) {
            return bad("baseline_glucose must be in [60, 200]");
        }
        if !(self.carb_gain >= 0.0 && self.carb_gain.is_finite()) {
            return bad("carb_gain must be non-negative");
        }
        if !(self.time_to_peak > 0.0 && self.time_to_peak <= 120.0) {
            return bad("time_to_peak must be in (0, 120]");
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return bad("width must be positive");
        }
        if !(0.0..1.0).contains(&self.activity_attenuation) {
            return bad("activity_attenuation must be in [0, 1)");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative");
        }
        if !(self.tir_low < self.tir_high) {
            return bad("tir_low must be below tir_high");
        }
        Ok(())
    }

    pub fn noise_free(&self) -> Self {
        Self {
            noise_sigma: 0.0,
            ..*self
        }
    }
}

/// Response shape before scaling by `α_c·carbs_g`.
fn shape(p: &ResponseParams, a: &Action, t: f64) -> f64 {
    let z = (t - p.time_to_peak) / p.width;
    let bump = (-0.5 * z * z).exp();
    if a.activity_min > 0.0 && t >= a.activity_start_min {
        bump * (-p.activity_attenuation * a.activity_min).exp()
    } else {
        bump
    }
}

/// Glucose excursion above baseline at `t` minutes after the meal; zero
/// before the meal.
pub fn response_delta(p: &ResponseParams, a: &Action, t: f64) -> f64 {
    if t < 0.0 {
        return 0.0;
    }
    p.carb_gain * a.carbs_g * shape(p, a, t)
}

fn default_duration() -> f64 {
    120.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionScenario {
    pub label: String,
    #[serde(flatten)]
    pub action: Action,
    #[serde(default = "default_duration")]
    pub duration_min: f64,
    #[serde(default)]
    pub seed: u64,
}

impl InterventionScenario {
    pub fn new(label: impl Into<String>, action: Action) -> Self {
        Self {
            label: label.into(),
            action,
            duration_min: default_duration(),
            seed: 0,
        }
    }

    /// The reference scenarios bundled with the crate.
    pub fn reference_set() -> Vec<Self> {
        serde_json::from_str(crate::REFERENCE_SCENARIOS_JSON).expect("bundled scenarios parse")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Minutes.
    pub t_grid: Vec<f64>,
    /// mg/dL.
    pub glucose: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_grid.is_empty()
    }
}

/// `0, 5, …, duration` (the last point included when it falls on the grid).
pub fn time_grid(duration_min: f64) -> Vec<f64> {
    let n = (duration_min / GRID_STEP_MIN + 1e-9).floor() as usize;
    (0..=n).map(|k| k as f64 * GRID_STEP_MIN).collect()
}

/// Simulates under the default causal graph and feasible ranges.
pub fn simulate_scenario(p: &ResponseParams, s: &InterventionScenario) -> Result<Trajectory> {
    simulate_scenario_with(p, s, &CausalGraph::default(), &FeasibleRanges::default())
}

pub fn simulate_scenario_with(
    p: &ResponseParams,
    s: &InterventionScenario,
    graph: &CausalGraph,
    ranges: &FeasibleRanges,
) -> Result<Trajectory> {
    p.validate()?;
    if !(s.duration_min > 0.0 && s.duration_min.is_finite()) {
        return Err(CounterfactualError::InvalidScenario(format!(
            "{}: duration_min must be positive",
            s.label
        )));
    }
    validate_action(graph, &s.action, ranges).map_err(CounterfactualError::InfeasibleAction)?;
    let t_grid = time_grid(s.duration_min);
    let mut rng = sub_rng(s.seed, 0);
    let glucose = t_grid
        .iter()
        .map(|&t| {
            let g = p.baseline_glucose + response_delta(p, &s.action, t);
            if p.noise_sigma > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                g + p.noise_sigma * z
            } else {
                g
            }
        })
        .collect();
    Ok(Trajectory { t_grid, glucose })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityWeights {
    pub w_tir: f64,
    /// Per mg/dL of peak above 180.
    pub w_peak: f64,
    /// Per minute below the range.
    pub w_hypo: f64,
}

impl Default for UtilityWeights {
    fn default() -> Self {
        Self {
            w_tir: 1.0,
            w_peak: 0.5,
            w_hypo: 2.0,
        }
    }
}

impl UtilityWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_tir, self.w_peak, self.w_hypo];
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(CounterfactualError::InvalidWeights("weights must be non-negative".into()));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(CounterfactualError::InvalidWeights("weights must not all be zero".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            w_tir: self.w_tir * c,
            w_peak: self.w_peak * c,
            w_hypo: self.w_hypo * c,
        }
    }

    pub fn utility(&self, peak: f64, tir_pct: f64, hypo_min: f64) -> f64 {
        self.w_tir * tir_pct
            - self.w_peak * (peak - PEAK_PENALTY_THRESHOLD).max(0.0)
            - self.w_hypo * hypo_min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub label: String,
    pub peak_glucose: f64,
    pub time_in_range_pct: f64,
    pub hypo_minutes: f64,
    pub utility: f64,
}

/// Peak, share of grid points inside `[tir_low, tir_high]`, minutes below
/// `tir_low` (5 per point) and the weighted utility.
pub fn compute_outcome(
    traj: &Trajectory,
    p: &ResponseParams,
    weights: &UtilityWeights,
    label: &str,
) -> ScenarioOutcome {
    let n = traj.glucose.len().max(1) as f64;
    let peak = traj.glucose.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let in_range = traj
        .glucose
        .iter()
        .filter(|&&g| p.tir_low <= g && g <= p.tir_high)
        .count() as f64;
    let below = traj.glucose.iter().filter(|&&g| g < p.tir_low).count() as f64;
    let tir = 100.0 * in_range / n;
    let hypo = GRID_STEP_MIN * below;
    ScenarioOutcome {
        label: label.to_string(),
        peak_glucose: peak,
        time_in_range_pct: tir,
        hypo_minutes: hypo,
        utility: weights.utility(peak, tir, hypo),
    }
}

/// Descending utility; ties go to higher TIR, then lower peak, then label.
pub fn rank_interventions(outcomes: &[ScenarioOutcome]) -> Vec<ScenarioOutcome> {
    let mut v = outcomes.to_vec();
    v.sort_by(|a, b| {
        b.utility
            .total_cmp(&a.utility)
            .then(b.time_in_range_pct.total_cmp(&a.time_in_range_pct))
            .then(a.peak_glucose.total_cmp(&b.peak_glucose))
            .then_with(|| a.label.cmp(&b.label))
    });
    v
}

/// Simulates, scores and ranks a batch of scenarios.
pub fn evaluate_scenarios(
    p: &ResponseParams,
    scenarios: &[InterventionScenario],
    weights: &UtilityWeights,
) -> Result<(Vec<LabelledTrajectory>, Vec<ScenarioOutcome>)> {
    weights.validate()?;
    let mut trajectories = Vec::with_capacity(scenarios.len());
    let mut outcomes = Vec::with_capacity(scenarios.len());
    for s in scenarios {
        let t = simulate_scenario(p, s)?;
        outcomes.push(compute_outcome(&t, p, weights, &s.label));
        trajectories.push(LabelledTrajectory {
            label: s.label.clone(),
            trajectory: t,
        });
    }
    Ok((trajectories, rank_interventions(&outcomes)))
}

/// Applies each scenario's excursion relative to the first scenario (the
/// baseline) to the observed window around `anchor`:
/// `observed(t) + Δ_s(t − anchor) − Δ_baseline(t − anchor)`. The grid is
/// minutes relative to the anchor; missing observations are skipped.
pub fn overlay_counterfactual(
    window: &CgmSeries,
    anchor: NaiveDateTime,
    p: &ResponseParams,
    scenarios: &[InterventionScenario],
) -> Result<Vec<LabelledTrajectory>> {
    p.validate()?;
    let Some(baseline) = scenarios.first() else {
        return Err(CounterfactualError::NoScenarios);
    };
    if window.grid_interval_min != Some(GRID_STEP_MIN as u32) {
        return Err(CounterfactualError::WindowNotOnGrid);
    }
    let (Some(first), Some(last)) = (window.records.first(), window.records.last()) else {
        return Err(CounterfactualError::AnchorOutsideWindow { anchor });
    };
    if anchor < first.timestamp || anchor > last.timestamp {
        return Err(CounterfactualError::AnchorOutsideWindow { anchor });
    }
    let observed: Vec<(f64, f64)> = window
        .records
        .iter()
        .filter_map(|r| {
            r.glucose
                .map(|g| ((r.timestamp - anchor).num_seconds() as f64 / 60.0, g))
        })
        .collect();
    Ok(scenarios
        .iter()
        .map(|s| {
            let glucose = observed
                .iter()
                .map(|&(t, g)| {
                    if s.action == baseline.action {
                        g
                    } else {
                        g + response_delta(p, &s.action, t) - response_delta(p, &baseline.action, t)
                    }
                })
                .collect();
            LabelledTrajectory {
                label: s.label.clone(),
                trajectory: Trajectory {
                    t_grid: observed.iter().map(|o| o.0).collect(),
                    glucose,
                },
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{CgmRecord, CgmSeries};
    use proptest::prelude::*;

    fn flat(v: f64) -> Trajectory {
        Trajectory {
            t_grid: time_grid(120.0),
            glucose: vec![v; 25],
        }
    }

    fn walk() -> Action {
        Action {
            carbs_g: 60.0,
            activity_min: 15.0,
            activity_start_min: 15.0,
            insulin_units: 0.0,
        }
    }

    #[test]
    fn zero_meal_has_no_response() {
        let p = ResponseParams::default();
        for t in time_grid(120.0) {
            assert_eq!(response_delta(&p, &Action::NONE, t), 0.0);
        }
    }

    #[test]
    fn peak_of_bump() {
        let p = ResponseParams::default();
        let d = response_delta(&p, &Action::meal(60.0), p.time_to_peak);
        assert_eq!(d, p.carb_gain * 60.0);
    }

    #[test]
    fn doubling_carbs_doubles_delta() {
        let p = ResponseParams::default();
        for t in time_grid(120.0) {
            let one = response_delta(&p, &Action::meal(30.0), t);
            let two = response_delta(&p, &Action::meal(60.0), t);
            assert!((two - 2.0 * one).abs() <= 1e-12 * two.max(1.0));
        }
    }

    #[test]
    fn grid_has_25_points() {
        let g = time_grid(120.0);
        assert_eq!(g.len(), 25);
        assert_eq!(g[24], 120.0);
    }

    #[test]
    fn constant_trajectories() {
        let p = ResponseParams::default();
        let w = UtilityWeights::default();
        let o = compute_outcome(&flat(100.0), &p, &w, "x");
        assert_eq!((o.time_in_range_pct, o.hypo_minutes, o.peak_glucose), (100.0, 0.0, 100.0));
        let o = compute_outcome(&flat(200.0), &p, &w, "x");
        assert_eq!(o.time_in_range_pct, 0.0);
        let o = compute_outcome(&flat(60.0), &p, &w, "x");
        assert_eq!(o.hypo_minutes, 125.0);
    }

    fn outcome(label: &str, peak: f64, tir: f64) -> ScenarioOutcome {
        let w = UtilityWeights::default();
        ScenarioOutcome {
            label: label.into(),
            peak_glucose: peak,
            time_in_range_pct: tir,
            hypo_minutes: 0.0,
            utility: w.utility(peak, tir, 0.0),
        }
    }

    #[test]
    fn reference_triple_ranking() {
        // Utility from the reference peaks and TIR values.
        let base = outcome("baseline", 179.0, 58.0);
        let reduced = outcome("reduced", 153.0, 72.0);
        let walking = outcome("walking", 163.0, 68.0);
        assert_eq!((base.utility, reduced.utility, walking.utility), (58.0, 72.0, 68.0));
        let ranked = rank_interventions(&[base, reduced, walking]);
        let labels: Vec<&str> = ranked.iter().map(|o| o.label.as_str()).collect();
        assert_eq!(labels, ["reduced", "walking", "baseline"]);
    }

    #[test]
    fn ranking_ties() {
        let one = outcome("b", 150.0, 60.0);
        assert_eq!(rank_interventions(std::slice::from_ref(&one)), vec![one.clone()]);
        let twin = outcome("a", 150.0, 60.0);
        let ranked = rank_interventions(&[one, twin]);
        assert_eq!(ranked[0].label, "a");
        // equal utility: higher TIR wins, then lower peak
        let mut x = outcome("x", 150.0, 60.0);
        let mut y = outcome("y", 150.0, 70.0);
        y.utility = x.utility;
        assert_eq!(rank_interventions(&[x.clone(), y.clone()])[0].label, "y");
        x.time_in_range_pct = 70.0;
        x.peak_glucose = 140.0;
        assert_eq!(rank_interventions(&[y, x])[0].label, "x");
    }

    #[test]
    fn weights_validation() {
        assert!(UtilityWeights { w_tir: 0.0, w_peak: 0.0, w_hypo: 0.0 }.validate().is_err());
        assert!(UtilityWeights { w_tir: -1.0, ..Default::default() }.validate().is_err());
        assert!(UtilityWeights::default().validate().is_ok());
    }

    #[test]
    fn infeasible_action_is_reported() {
        let s = InterventionScenario::new("big", Action::meal(500.0));
        match simulate_scenario(&ResponseParams::default(), &s) {
            Err(CounterfactualError::InfeasibleAction(v)) => assert_eq!(v[0].bound, Some(200.0)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let p = ResponseParams {
            noise_sigma: 5.0,
            ..Default::default()
        };
        let mut s = InterventionScenario::new("n", Action::meal(60.0));
        s.seed = 11;
        let a = simulate_scenario(&p, &s).unwrap();
        assert_eq!(a, simulate_scenario(&p, &s).unwrap());
        s.seed = 12;
        assert_ne!(a, simulate_scenario(&p, &s).unwrap());
        assert!(a.glucose.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn reference_scenarios_parse() {
        let s = InterventionScenario::reference_set();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].action.carbs_g, 60.0);
        assert_eq!(s[1].action.carbs_g, 30.0);
        assert_eq!(s[2].action, walk());
        assert!(s.iter().all(|s| s.duration_min == 120.0));
    }

    fn window(values: &[f64]) -> (CgmSeries, NaiveDateTime) {
        let t0 = crate::twin::sequence_epoch();
        let records = values
            .iter()
            .enumerate()
            .map(|(k, &g)| CgmRecord {
                timestamp: t0 + chrono::Duration::minutes(5 * k as i64),
                glucose: Some(g),
                imputed: false,
            })
            .collect();
        let mut s = CgmSeries::new("p", records);
        s.grid_interval_min = Some(5);
        (s, t0 + chrono::Duration::minutes(30))
    }

    fn overlay_scenarios() -> Vec<InterventionScenario> {
        vec![
            InterventionScenario::new("baseline", Action::meal(60.0)),
            InterventionScenario::new("reduced", Action::meal(30.0)),
            InterventionScenario::new("walk", walk()),
        ]
    }

    #[test]
    fn baseline_overlay_is_observed() {
        let obs: Vec<f64> = (0..80).map(|k| 120.0 + 30.0 * (k as f64 / 9.0).sin()).collect();
        let (w, anchor) = window(&obs);
        let out = overlay_counterfactual(&w, anchor, &ResponseParams::default(), &overlay_scenarios())
            .unwrap();
        assert_eq!(out[0].trajectory.glucose, obs);
        assert_eq!(out[0].trajectory.t_grid[0], -30.0);
    }

    #[test]
    fn reduced_overlay_below_observed_and_converges() {
        let p = ResponseParams::default();
        let obs: Vec<f64> = (0..80).map(|k| 110.0 + (k % 7) as f64).collect();
        let (w, anchor) = window(&obs);
        let out = overlay_counterfactual(&w, anchor, &p, &overlay_scenarios()).unwrap();
        let reduced = &out[1].trajectory;
        for (i, (&t, &g)) in reduced.t_grid.iter().zip(&reduced.glucose).enumerate() {
            assert!(g <= obs[i] + 1e-12);
            // Gaussian tail: beyond t_p + 4w the excursions differ by < 0.5
            if t >= p.time_to_peak + 4.0 * p.width {
                for o in &out {
                    assert!((o.trajectory.glucose[i] - obs[i]).abs() < 0.5, "t={t}");
                }
            }
        }
    }

    #[test]
    fn overlay_anchor_outside() {
        let (w, _) = window(&[100.0; 10]);
        let late = crate::twin::sequence_epoch() + chrono::Duration::hours(5);
        assert!(matches!(
            overlay_counterfactual(&w, late, &ResponseParams::default(), &overlay_scenarios()),
            Err(CounterfactualError::AnchorOutsideWindow { .. })
        ));
    }

    proptest! {
        #[test]
        fn carb_monotonicity(c1 in 0.0f64..200.0, c2 in 0.0f64..200.0, act in 0.0f64..60.0) {
            let (lo, hi) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
            let p = ResponseParams { tir_high: 140.0, ..Default::default() };
            let w = UtilityWeights::default();
            let mk = |c| InterventionScenario::new("s", Action { carbs_g: c, activity_min: act, activity_start_min: 15.0, insulin_units: 0.0 });
            let a = compute_outcome(&simulate_scenario(&p, &mk(lo)).unwrap(), &p, &w, "a");
            let b = compute_outcome(&simulate_scenario(&p, &mk(hi)).unwrap(), &p, &w, "b");
            prop_assert!(a.peak_glucose <= b.peak_glucose);
            prop_assert!(a.time_in_range_pct >= b.time_in_range_pct);
        }

        #[test]
        fn activity_monotonicity(a1 in 0.0f64..60.0, a2 in 0.0f64..60.0, start in 0.0f64..120.0) {
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            let p = ResponseParams::default();
            let mk = |a| InterventionScenario::new("s", Action { carbs_g: 60.0, activity_min: a, activity_start_min: start, insulin_units: 0.0 });
            let peak = |s: &InterventionScenario| simulate_scenario(&p, s).unwrap().glucose.into_iter().fold(f64::MIN, f64::max);
            prop_assert!(peak(&mk(hi)) <= peak(&mk(lo)));
        }

        #[test]
        fn ranking_invariant_under_weight_scaling(
            pts in prop::collection::vec((100.0f64..250.0, 0.0f64..100.0, 0.0f64..60.0), 1..8),
            c in 0.01f64..100.0,
        ) {
            let w = UtilityWeights::default();
            let mk = |w: &UtilityWeights| -> Vec<String> {
                let outs: Vec<ScenarioOutcome> = pts.iter().enumerate().map(|(i, &(peak, tir, hypo))| ScenarioOutcome {
                    label: format!("s{i}"),
                    peak_glucose: peak,
                    time_in_range_pct: tir,
                    hypo_minutes: hypo,
                    utility: w.utility(peak, tir, hypo),
                }).collect();
                rank_interventions(&outs).into_iter().map(|o| o.label).collect()
            };
            // Dyadic scales keep utilities exactly proportional.
            let c = 2f64.powi(c.log2().round() as i32);
            prop_assert_eq!(mk(&w), mk(&w.scaled(c)));
        }

        #[test]
        fn tir_matches_per_point_count(
            g in prop::collection::vec(40.0f64..300.0, 1..60),
            low in 50.0f64..90.0,
            high in 120.0f64..200.0,
        ) {
            let p = ResponseParams { tir_low: low, tir_high: high, ..Default::default() };
            let traj = Trajectory { t_grid: (0..g.len()).map(|k| 5.0 * k as f64).collect(), glucose: g.clone() };
            let o = compute_outcome(&traj, &p, &UtilityWeights::default(), "x");
            let mut count = 0;
            for v in &g {
                if *v >= low && *v <= high {
                    count += 1;
                }
            }
            prop_assert_eq!(o.time_in_range_pct, 100.0 * count as f64 / g.len() as f64);
            prop_assert!(o.peak_glucose >= g.iter().copied().fold(f64::MAX, f64::min));
        }
    }
}
