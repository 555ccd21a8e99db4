//! Latent patient state, the action-conditioned predictor and the declared
//! causal graph that constrains interventions.
//!
//! The state keeps a rolling window of the last `W` observations plus
//! exponentially weighted per-feature moments:
//!
//! ```text
//! mean ← (1−α)·mean + α·x
//! var  ← (1−α)·(var + α·(x − mean_prev)²)
//! ```
//!
//! [`featurize`] lays a state and an action out as
//! `[ew_mean ‖ √ew_var ‖ last observation ‖ carbs_g ‖ activity_min ‖
//! activity_start_min ‖ insulin_units]`, optionally followed by the
//! prediction horizon in minutes. Any model trained on that layout can be
//! wrapped in a [`TwinModel`].

use std::collections::VecDeque;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::AugmentedSequence;
use crate::ingest::TabularDataset;
use crate::matrix::Matrix;
use crate::models::{ModelError, TrainedModel};

pub const STATE_FORMAT_VERSION: u32 = 1;
pub const TWIN_MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TwinError {
    #[error("observation contains non-finite values")]
    NonFinite,
    #[error("observation at {got} is not after last update {last}")]
    OutOfOrder {
        last: NaiveDateTime,
        got: NaiveDateTime,
    },
    #[error("expected {expected} observation features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid state config: {0}")]
    InvalidConfig(String),
    #[error("causal graph: {0}")]
    Graph(String),
    #[error("model layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("document: {0}")]
    Serialization(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, TwinError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub timestamp: NaiveDateTime,
    pub values: Vec<f64>,
}

impl Observation {
    pub fn new(timestamp: NaiveDateTime, values: Vec<f64>) -> Self {
        Self { timestamp, values }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateConfig {
    pub alpha: f64,
    pub window: usize,
}

impl Default for StateConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            window: 12,
        }
    }
}

impl StateConfig {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(TwinError::InvalidConfig("alpha must be in (0, 1]".into()));
        }
        if self.window == 0 {
            return Err(TwinError::InvalidConfig("window must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientState {
    pub format_version: u32,
    pub patient_id: String,
    pub config: StateConfig,
    pub window: VecDeque<Observation>,
    pub ew_mean: Vec<f64>,
    pub ew_var: Vec<f64>,
    pub last_updated: NaiveDateTime,
}

impl PatientState {
    pub fn dim(&self) -> usize {
        self.ew_mean.len()
    }

    pub fn latest(&self) -> &Observation {
        self.window.back().expect("state window is never empty")
    }

    /// `[ew_mean ‖ √ew_var ‖ last observation]`, length `3d`.
    pub fn summary(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * self.dim());
        v.extend_from_slice(&self.ew_mean);
        v.extend(self.ew_var.iter().map(|s| s.sqrt()));
        v.extend_from_slice(&self.latest().values);
        v
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("state serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let state: Self =
            serde_json::from_str(s).map_err(|e| TwinError::Serialization(e.to_string()))?;
        if state.format_version != STATE_FORMAT_VERSION {
            return Err(TwinError::Serialization(format!(
                "unsupported state version {}",
                state.format_version
            )));
        }
        Ok(state)
    }
}

pub fn init_state(patient_id: &str, x0: Observation, cfg: StateConfig) -> Result<PatientState> {
    cfg.validate()?;
    if !x0.values.iter().all(|v| v.is_finite()) {
        return Err(TwinError::NonFinite);
    }
    Ok(PatientState {
        format_version: STATE_FORMAT_VERSION,
        patient_id: patient_id.to_string(),
        config: cfg,
        ew_mean: x0.values.clone(),
        ew_var: vec![0.0; x0.values.len()],
        last_updated: x0.timestamp,
        window: VecDeque::from([x0]),
    })
}

pub fn update_state(z: &PatientState, x: Observation) -> Result<PatientState> {
    if x.values.len() != z.dim() {
        return Err(TwinError::DimensionMismatch {
            expected: z.dim(),
            got: x.values.len(),
        });
    }
    if !x.values.iter().all(|v| v.is_finite()) {
        return Err(TwinError::NonFinite);
    }
    if x.timestamp <= z.last_updated {
        return Err(TwinError::OutOfOrder {
            last: z.last_updated,
            got: x.timestamp,
        });
    }
    let a = z.config.alpha;
    let mut next = z.clone();
    for ((m, v), &xi) in next.ew_mean.iter_mut().zip(next.ew_var.iter_mut()).zip(&x.values) {
        let diff = xi - *m;
        *v = ((1.0 - a) * (*v + a * diff * diff)).max(0.0);
        *m = (1.0 - a) * *m + a * xi;
    }
    next.last_updated = x.timestamp;
    next.window.push_back(x);
    while next.window.len() > z.config.window {
        next.window.pop_front();
    }
    Ok(next)
}

/// Folds `observations` into `z` in order.
pub fn fold_state(
    z: &PatientState,
    observations: impl IntoIterator<Item = Observation>,
) -> Result<PatientState> {
    observations
        .into_iter()
        .try_fold(z.clone(), |s, x| update_state(&s, x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub carbs_g: f64,
    pub activity_min: f64,
    pub activity_start_min: f64,
    #[serde(default)]
    pub insulin_units: f64,
}

impl Action {
    pub const NONE: Action = Action {
        carbs_g: 0.0,
        activity_min: 0.0,
        activity_start_min: 0.0,
        insulin_units: 0.0,
    };

    pub fn meal(carbs_g: f64) -> Self {
        Self {
            carbs_g,
            ..Self::NONE
        }
    }

    fn components(&self) -> [(ActionField, f64); 4] {
        [
            (ActionField::CarbsG, self.carbs_g),
            (ActionField::ActivityMin, self.activity_min),
            (ActionField::ActivityStartMin, self.activity_start_min),
            (ActionField::InsulinUnits, self.insulin_units),
        ]
    }
}

/// Number of action slots appended by [`featurize`].
pub const ACTION_SLOTS: usize = 4;

pub fn featurize(z: &PatientState, a: &Action) -> Vec<f64> {
    let mut v = z.summary();
    v.extend_from_slice(&[a.carbs_g, a.activity_min, a.activity_start_min, a.insulin_units]);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Nutrition,
    Activity,
    Insulin,
    Timing,
    Glucose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionField {
    CarbsG,
    ActivityMin,
    ActivityStartMin,
    InsulinUnits,
}

impl ActionField {
    pub fn variable(self) -> Variable {
        match self {
            Self::CarbsG => Variable::Nutrition,
            Self::ActivityMin => Variable::Activity,
            Self::ActivityStartMin => Variable::Timing,
            Self::InsulinUnits => Variable::Insulin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: Variable,
    pub to: Variable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CausalGraph {
    nodes: Vec<Variable>,
    edges: Vec<Edge>,
}

#[derive(Deserialize)]
struct RawGraph {
    nodes: Vec<Variable>,
    edges: Vec<Edge>,
}

impl<'de> Deserialize<'de> for CausalGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawGraph::deserialize(d)?;
        CausalGraph::new(raw.nodes, raw.edges).map_err(serde::de::Error::custom)
    }
}

impl Default for CausalGraph {
    fn default() -> Self {
        use Variable::*;
        let edges = [Nutrition, Activity, Insulin, Timing]
            .into_iter()
            .map(|from| Edge { from, to: Glucose })
            .collect();
        Self::new(vec![Nutrition, Activity, Insulin, Timing, Glucose], edges)
            .expect("default graph is valid")
    }
}

impl CausalGraph {
    /// Checks that edges join declared nodes, glucose is a sink and the
    /// graph is acyclic.
    pub fn new(nodes: Vec<Variable>, edges: Vec<Edge>) -> Result<Self> {
        for e in &edges {
            if !nodes.contains(&e.from) || !nodes.contains(&e.to) {
                return Err(TwinError::Graph(format!(
                    "edge {:?} -> {:?} uses an undeclared node",
                    e.from, e.to
                )));
            }
            if e.from == Variable::Glucose {
                return Err(TwinError::Graph("glucose must not have outgoing edges".into()));
            }
        }
        // Kahn's algorithm
        let mut indegree: Vec<usize> = nodes
            .iter()
            .map(|n| edges.iter().filter(|e| e.to == *n).count())
            .collect();
        let mut ready: Vec<usize> = (0..nodes.len()).filter(|&i| indegree[i] == 0).collect();
        let mut seen = 0;
        while let Some(i) = ready.pop() {
            seen += 1;
            for e in edges.iter().filter(|e| e.from == nodes[i]) {
                let j = nodes.iter().position(|n| *n == e.to).expect("checked above");
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    ready.push(j);
                }
            }
        }
        if seen != nodes.len() {
            return Err(TwinError::Graph("graph has a cycle".into()));
        }
        Ok(Self { nodes, edges })
    }

    pub fn nodes(&self) -> &[Variable] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn with_edge(&self, from: Variable, to: Variable) -> Result<Self> {
        let mut edges = self.edges.clone();
        edges.push(Edge { from, to });
        Self::new(self.nodes.clone(), edges)
    }

    pub fn affects_glucose(&self, v: Variable) -> bool {
        self.edges
            .iter()
            .any(|e| e.from == v && e.to == Variable::Glucose)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| TwinError::Graph(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibleRanges {
    pub carbs_g: [f64; 2],
    pub activity_min: [f64; 2],
    pub activity_start_min: [f64; 2],
    pub insulin_units: [f64; 2],
}

impl Default for FeasibleRanges {
    fn default() -> Self {
        Self {
            carbs_g: [0.0, 200.0],
            activity_min: [0.0, 60.0],
            activity_start_min: [0.0, 120.0],
            insulin_units: [0.0, 20.0],
        }
    }
}

impl FeasibleRanges {
    pub fn range(&self, field: ActionField) -> [f64; 2] {
        match field {
            ActionField::CarbsG => self.carbs_g,
            ActionField::ActivityMin => self.activity_min,
            ActionField::ActivityStartMin => self.activity_start_min,
            ActionField::InsulinUnits => self.insulin_units,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    BelowMinimum,
    AboveMaximum,
    NotFinite,
    NoCausalEdge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub variable: ActionField,
    pub value: f64,
    pub kind: ViolationKind,
    /// The violated range bound, when the violation is a range violation.
    pub bound: Option<f64>,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = serde_json::to_value(self.variable)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        match (self.kind, self.bound) {
            (ViolationKind::BelowMinimum, Some(b)) => write!(f, "{name}={} is below {b}", self.value),
            (ViolationKind::AboveMaximum, Some(b)) => write!(f, "{name}={} is above {b}", self.value),
            (ViolationKind::NotFinite, _) => write!(f, "{name} is not finite"),
            _ => write!(f, "{name}={} has no causal edge into glucose", self.value),
        }
    }
}

/// Every nonzero component must map to a variable with an edge into
/// glucose, and every component must sit inside its feasible range.
pub fn validate_action(
    g: &CausalGraph,
    a: &Action,
    ranges: &FeasibleRanges,
) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    for (field, value) in a.components() {
        if !value.is_finite() {
            out.push(Violation {
                variable: field,
                value,
                kind: ViolationKind::NotFinite,
                bound: None,
            });
            continue;
        }
        if value != 0.0 && !g.affects_glucose(field.variable()) {
            out.push(Violation {
                variable: field,
                value,
                kind: ViolationKind::NoCausalEdge,
                bound: None,
            });
        }
        let [lo, hi] = ranges.range(field);
        if value < lo {
            out.push(Violation {
                variable: field,
                value,
                kind: ViolationKind::BelowMinimum,
                bound: Some(lo),
            });
        } else if value > hi {
            out.push(Violation {
                variable: field,
                value,
                kind: ViolationKind::AboveMaximum,
                bound: Some(hi),
            });
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Shape of the inputs a [`TwinModel`] expects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub observation_dim: usize,
    pub with_horizon: bool,
}

impl FeatureLayout {
    pub fn width(&self) -> usize {
        3 * self.observation_dim + ACTION_SLOTS + usize::from(self.with_horizon)
    }
}

/// A trained model bound to the featurize layout it was fit on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinModel {
    pub format_version: u32,
    pub layout: FeatureLayout,
    pub model: TrainedModel,
}

impl TwinModel {
    pub fn new(layout: FeatureLayout, model: TrainedModel) -> Result<Self> {
        if model.n_features() != layout.width() {
            return Err(TwinError::LayoutMismatch(format!(
                "model takes {} features but the layout has {}",
                model.n_features(),
                layout.width()
            )));
        }
        Ok(Self {
            format_version: TWIN_MODEL_FORMAT_VERSION,
            layout,
            model,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("twin model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s).map_err(|e| TwinError::Serialization(e.to_string()))?;
        if m.format_version != TWIN_MODEL_FORMAT_VERSION {
            return Err(TwinError::Serialization(format!(
                "unsupported twin model version {}",
                m.format_version
            )));
        }
        Self::new(m.layout, m.model)
    }
}

pub fn predict_outcome(
    z: &PatientState,
    a: &Action,
    horizon_min: Option<f64>,
    m: &TwinModel,
) -> Result<f64> {
    if z.dim() != m.layout.observation_dim {
        return Err(TwinError::LayoutMismatch(format!(
            "state has {} features, model expects {}",
            z.dim(),
            m.layout.observation_dim
        )));
    }
    let mut x = featurize(z, a);
    match (m.layout.with_horizon, horizon_min) {
        (true, Some(h)) => x.push(h),
        (false, None) => {}
        (true, None) => {
            return Err(TwinError::LayoutMismatch("model requires a horizon".into()));
        }
        (false, Some(_)) => {
            return Err(TwinError::LayoutMismatch("model was trained without a horizon".into()));
        }
    }
    Ok(m.model.predict_row(&x)?)
}

/// Base timestamp used when sequences carry only relative offsets.
pub fn sequence_epoch() -> NaiveDateTime {
    chrono::NaiveDate::from_ymd_opt(2000, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid epoch")
}

/// One row per step: the state folded through steps `0..=k`, featurized
/// with the sequence's intervention (timing as activity start), target the
/// step outcome. With `with_horizon` the step offset is appended.
pub fn twin_training_set(
    sequences: &[AugmentedSequence],
    cfg: StateConfig,
    with_horizon: bool,
) -> Result<(TabularDataset, FeatureLayout)> {
    let d = sequences
        .first()
        .and_then(|s| s.steps.first())
        .map_or(0, |s| s.features.len());
    let layout = FeatureLayout {
        observation_dim: d,
        with_horizon,
    };
    let mut x = Matrix::empty(layout.width());
    let mut y = Vec::new();
    let epoch = sequence_epoch();
    for seq in sequences {
        let mut state: Option<PatientState> = None;
        for step in &seq.steps {
            let obs = Observation::new(
                epoch + Duration::seconds((step.t_offset * 60.0).round() as i64),
                step.features.clone(),
            );
            let next = match &state {
                None => init_state(&format!("row{}", seq.source_row), obs, cfg)?,
                Some(s) => update_state(s, obs)?,
            };
            let action = Action {
                carbs_g: step.carbs_g,
                activity_min: step.activity_min,
                activity_start_min: step.timing_min,
                insulin_units: 0.0,
            };
            let mut row = featurize(&next, &action);
            if with_horizon {
                row.push(step.t_offset);
            }
            x.push_row(&row);
            y.push(step.outcome);
            state = Some(next);
        }
    }
    let names = (0..layout.width()).map(|j| format!("x{j}")).collect();
    Ok((TabularDataset::new(names, x, y), layout))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{augment, AugmentConfig};
    use crate::ingest::load_tabular;
    use crate::models::{train_linear, LinearParams, ModelConfig, Parameters, Task};
    use proptest::prelude::*;

    fn at(min: i64) -> NaiveDateTime {
        sequence_epoch() + Duration::minutes(min)
    }

    fn obs(min: i64, v: &[f64]) -> Observation {
        Observation::new(at(min), v.to_vec())
    }

    #[test]
    fn init_has_zero_variance() {
        let s = init_state("p", obs(0, &[1.0, 2.0, 3.0]), StateConfig::default()).unwrap();
        assert_eq!(s.ew_var, vec![0.0; 3]);
        assert_eq!(s.summary().len(), 9);
        let t = init_state("p", obs(0, &[1.0, 2.0, 3.0]), StateConfig::default()).unwrap();
        assert_eq!(s, t);
    }

    #[test]
    fn init_rejects_nan() {
        assert_eq!(
            init_state("p", obs(0, &[f64::NAN]), StateConfig::default()),
            Err(TwinError::NonFinite)
        );
    }

    #[test]
    fn one_update_by_hand() {
        let s = init_state("p", obs(0, &[10.0]), StateConfig::default()).unwrap();
        let s = update_state(&s, obs(5, &[20.0])).unwrap();
        assert_eq!(s.ew_mean[0], 0.7 * 10.0 + 0.3 * 20.0);
        assert!((s.ew_var[0] - 0.7 * (0.3 * 100.0)).abs() < 1e-12);
    }

    #[test]
    fn constant_stream_is_fixed_point() {
        let mut s = init_state("p", obs(0, &[5.0, -1.0]), StateConfig::default()).unwrap();
        for k in 1..30 {
            s = update_state(&s, obs(5 * k, &[5.0, -1.0])).unwrap();
        }
        assert_eq!(s.ew_mean, vec![5.0, -1.0]);
        assert_eq!(s.ew_var, vec![0.0, 0.0]);
    }

    #[test]
    fn out_of_order_rejected() {
        let s = init_state("p", obs(10, &[1.0]), StateConfig::default()).unwrap();
        assert!(matches!(update_state(&s, obs(10, &[1.0])), Err(TwinError::OutOfOrder { .. })));
        assert!(matches!(update_state(&s, obs(5, &[1.0])), Err(TwinError::OutOfOrder { .. })));
    }

    #[test]
    fn batched_fold_equals_sequential() {
        let xs: Vec<Observation> = (1..20).map(|k| obs(k * 5, &[(k as f64).sin()])).collect();
        let s0 = init_state("p", obs(0, &[0.0]), StateConfig::default()).unwrap();
        let one = fold_state(&s0, xs.clone()).unwrap();
        let half = fold_state(&s0, xs[..7].to_vec()).unwrap();
        let two = fold_state(&half, xs[7..].to_vec()).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn window_evicts_oldest() {
        let mut s = init_state("p", obs(0, &[0.0]), StateConfig::default()).unwrap();
        for k in 1..20 {
            s = update_state(&s, obs(k * 5, &[k as f64])).unwrap();
            assert_eq!(s.window.len(), (k as usize + 1).min(12));
        }
        assert_eq!(s.window.front().unwrap().values[0], 8.0);
        assert_eq!(s.latest().values[0], 19.0);
    }

    #[test]
    fn featurize_layout() {
        let s = init_state("p", obs(0, &[1.0, 2.0]), StateConfig::default()).unwrap();
        let v = featurize(&s, &Action::NONE);
        assert_eq!(v.len(), 3 * 2 + 4);
        assert_eq!(&v[6..], &[0.0; 4]);
        let a = featurize(&s, &Action::meal(60.0));
        let b = featurize(&s, &Action::meal(30.0));
        let differing: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
        assert_eq!(differing, vec![6]);
    }

    #[test]
    fn state_json_round_trip() {
        let s = init_state("p7", obs(0, &[1.0, 2.0]), StateConfig::default()).unwrap();
        let s = update_state(&s, obs(5, &[3.0, 1.0])).unwrap();
        assert_eq!(PatientState::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn default_graph_shape() {
        let g = CausalGraph::default();
        assert_eq!(g.nodes().len(), 5);
        assert_eq!(g.edges().len(), 4);
        assert!(g.edges().iter().all(|e| e.to == Variable::Glucose));
        assert!(matches!(
            g.with_edge(Variable::Glucose, Variable::Nutrition),
            Err(TwinError::Graph(_))
        ));
        let g2 = CausalGraph::from_json(&g.to_json()).unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn cycles_rejected() {
        let g = CausalGraph::default()
            .with_edge(Variable::Nutrition, Variable::Timing)
            .unwrap();
        assert!(matches!(
            g.with_edge(Variable::Timing, Variable::Nutrition),
            Err(TwinError::Graph(_))
        ));
        let json = r#"{"nodes":["nutrition","activity","glucose"],
            "edges":[{"from":"nutrition","to":"activity"},{"from":"activity","to":"nutrition"}]}"#;
        assert!(CausalGraph::from_json(json).is_err());
    }

    #[test]
    fn validate_reference_walk() {
        let a = Action {
            carbs_g: 60.0,
            activity_min: 15.0,
            activity_start_min: 15.0,
            insulin_units: 0.0,
        };
        assert!(validate_action(&CausalGraph::default(), &a, &FeasibleRanges::default()).is_ok());
    }

    #[test]
    fn validate_range_violations() {
        let g = CausalGraph::default();
        let r = FeasibleRanges::default();
        let v = validate_action(&g, &Action::meal(-5.0), &r).unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::BelowMinimum);
        let v = validate_action(&g, &Action::meal(500.0), &r).unwrap_err();
        assert_eq!(v[0].bound, Some(200.0));
        assert_eq!(v[0].variable, ActionField::CarbsG);
        assert_eq!(v[0].to_string(), "carbs_g=500 is above 200");
    }

    #[test]
    fn validate_requires_causal_edge() {
        let g = CausalGraph::new(
            vec![Variable::Nutrition, Variable::Activity, Variable::Glucose],
            vec![Edge {
                from: Variable::Nutrition,
                to: Variable::Glucose,
            }],
        )
        .unwrap();
        let a = Action {
            activity_min: 10.0,
            ..Action::meal(40.0)
        };
        let v = validate_action(&g, &a, &FeasibleRanges::default()).unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::NoCausalEdge);
        assert_eq!(v[0].variable, ActionField::ActivityMin);
    }

    fn zero_linear(width: usize, intercept: f64) -> TrainedModel {
        TrainedModel::new(
            Task::Regression,
            width,
            ModelConfig::Linear,
            Parameters::Linear(LinearParams {
                coefficients: vec![0.0; width],
                intercept,
            }),
            String::new(),
        )
    }

    #[test]
    fn zero_model_returns_intercept() {
        let layout = FeatureLayout {
            observation_dim: 2,
            with_horizon: false,
        };
        let m = TwinModel::new(layout, zero_linear(10, 4.5)).unwrap();
        let s = init_state("p", obs(0, &[1.0, 2.0]), StateConfig::default()).unwrap();
        for carbs in [0.0, 30.0, 90.0] {
            assert_eq!(predict_outcome(&s, &Action::meal(carbs), None, &m).unwrap(), 4.5);
        }
    }

    #[test]
    fn layout_mismatch_detected() {
        let layout = FeatureLayout {
            observation_dim: 2,
            with_horizon: true,
        };
        assert!(matches!(
            TwinModel::new(layout, zero_linear(10, 0.0)),
            Err(TwinError::LayoutMismatch(_))
        ));
        let m = TwinModel::new(layout, zero_linear(11, 0.0)).unwrap();
        let s = init_state("p", obs(0, &[1.0, 2.0]), StateConfig::default()).unwrap();
        assert!(predict_outcome(&s, &Action::NONE, None, &m).is_err());
        assert!(predict_outcome(&s, &Action::NONE, Some(30.0), &m).is_ok());
        let s3 = init_state("p", obs(0, &[1.0, 2.0, 3.0]), StateConfig::default()).unwrap();
        assert!(predict_outcome(&s3, &Action::NONE, Some(30.0), &m).is_err());
    }

    #[test]
    fn learned_carb_effect_has_generator_sign() {
        let ds = load_tabular(crate::BENCHMARK_CSV.as_bytes()).unwrap();
        let cfg = AugmentConfig {
            noise_sigma: 0.0,
            ..Default::default()
        };
        let seqs = augment(&ds, &cfg).unwrap();
        let (train, layout) = twin_training_set(&seqs, StateConfig::default(), false).unwrap();
        let model = train_linear(&train.features, &train.target).unwrap();
        let twin = TwinModel::new(layout, model).unwrap();
        let s = init_state("p", obs(0, ds.features.row(0)), StateConfig::default()).unwrap();
        let lo = predict_outcome(&s, &Action::meal(30.0), None, &twin).unwrap();
        let hi = predict_outcome(&s, &Action::meal(60.0), None, &twin).unwrap();
        assert!(hi > lo);
        let Parameters::Linear(p) = twin.model.parameters() else {
            unreachable!()
        };
        assert!(p.coefficients[3 * 10] > 0.0);
        let round = TwinModel::from_json(&twin.to_json()).unwrap();
        assert_eq!(predict_outcome(&s, &Action::meal(60.0), None, &round).unwrap(), hi);
    }

    #[test]
    fn action_enters_only_through_featurize() {
        let ds = load_tabular(crate::BENCHMARK_CSV.as_bytes()).unwrap();
        let seqs = augment(&ds.subset(&(0..60).collect::<Vec<_>>()), &AugmentConfig::default()).unwrap();
        let (train, layout) = twin_training_set(&seqs, StateConfig::default(), false).unwrap();
        let twin = TwinModel::new(layout, train_linear(&train.features, &train.target).unwrap()).unwrap();
        let s = init_state("p", obs(0, ds.features.row(3)), StateConfig::default()).unwrap();
        let mut x = featurize(&s, &Action::meal(70.0));
        let n = x.len();
        x[n - 4..].iter_mut().for_each(|v| *v = 0.0);
        assert_eq!(
            twin.model.predict_row(&x).unwrap(),
            predict_outcome(&s, &Action::NONE, None, &twin).unwrap()
        );
    }

    proptest! {
        #[test]
        fn variance_never_negative(
            stream in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 1..60),
            alpha in 0.01f64..1.0,
        ) {
            let cfg = StateConfig { alpha, window: 12 };
            let mut s = init_state("p", obs(0, &stream[0]), cfg).unwrap();
            for (k, x) in stream.iter().enumerate().skip(1) {
                s = update_state(&s, obs(k as i64, x)).unwrap();
                prop_assert!(s.ew_var.iter().all(|v| *v >= 0.0));
                prop_assert!(s.window.len() <= 12);
            }
            if stream.len() >= 12 {
                prop_assert_eq!(s.window.len(), 12);
            }
        }
    }
}
