//! Fits response parameters to target (peak, TIR) pairs.
//!
//! For each shape `(t_p, w, β)` on a grid the unscaled excursions are
//! computed once. For each baseline `G₀` the carb gain `α_c` follows in
//! closed form from least squares on the peaks, and the upper band edge is
//! chosen by scanning the breakpoints of the TIR step function. The best
//! grid points are then refined by a compass search over
//! `(G₀, t_p, w, β)`. The fitted band always contains the baseline, with
//! `tir_high ≥ G₀ + band_margin`.

use serde::{Deserialize, Serialize};

use super::{
    shape, time_grid, CounterfactualError, InterventionScenario, ResponseParams, Result,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    pub scenario: InterventionScenario,
    pub target_peak: f64,
    pub target_tir: f64,
}

/// The bundled reference targets.
pub fn reference_targets() -> Vec<CalibrationTarget> {
    serde_json::from_str(crate::REFERENCE_TARGETS_JSON).expect("bundled targets parse")
}

/// Inclusive grid `min, min+step, …, max`; a single point when
/// `min == max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchRange {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl SearchRange {
    pub fn fixed(v: f64) -> Self {
        Self {
            min: v,
            max: v,
            step: 0.0,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.max <= self.min || self.step <= 0.0 {
            return vec![self.min];
        }
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|k| self.min + k as f64 * self.step).collect()
    }

    fn is_fixed(&self) -> bool {
        self.max <= self.min || self.step <= 0.0
    }

    fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max.max(self.min))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub baseline_glucose: SearchRange,
    pub time_to_peak: SearchRange,
    pub width: SearchRange,
    /// Searched only when some target scenario includes activity.
    pub activity_attenuation: SearchRange,
    pub max_carb_gain: f64,
    /// Candidate lower band edges; only those at or below `G₀` are used.
    pub tir_low: Vec<f64>,
    pub max_tir_high: f64,
    pub band_margin: f64,
    /// Number of best grid points refined by the compass search.
    pub refine_starts: usize,
    /// Residual above which calibration fails. `None` means
    /// `n_targets · (2² + 5²)`.
    pub max_residual: Option<f64>,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            baseline_glucose: SearchRange {
                min: 70.0,
                max: 200.0,
                step: 1.0,
            },
            time_to_peak: SearchRange {
                min: 5.0,
                max: 120.0,
                step: 2.5,
            },
            width: SearchRange {
                min: 2.0,
                max: 30.0,
                step: 1.0,
            },
            activity_attenuation: SearchRange {
                min: 0.0,
                max: 0.2,
                step: 0.005,
            },
            max_carb_gain: 5.0,
            tir_low: vec![70.0],
            max_tir_high: 250.0,
            band_margin: 5.0,
            refine_starts: 8,
            max_residual: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub params: ResponseParams,
    pub residual: f64,
    /// Noise-free (peak, TIR) per target under `params`.
    pub fitted: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Shape {
    time_to_peak: f64,
    width: f64,
    attenuation: f64,
}

struct Problem<'a> {
    targets: &'a [CalibrationTarget],
    grids: Vec<Vec<f64>>,
    opts: &'a CalibrationOptions,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    residual: f64,
    params: ResponseParams,
}

impl Problem<'_> {
    fn params_for(&self, g0: f64, s: Shape) -> ResponseParams {
        ResponseParams {
            baseline_glucose: g0,
            carb_gain: 0.0,
            time_to_peak: s.time_to_peak,
            width: s.width,
            activity_attenuation: s.attenuation,
            noise_sigma: 0.0,
            tir_low: 70.0,
            tir_high: 180.0,
        }
    }

    /// Unscaled excursions `carbs_g·shape(t)` per target.
    fn excursions(&self, s: Shape) -> Vec<Vec<f64>> {
        let p = self.params_for(100.0, s);
        self.targets
            .iter()
            .zip(&self.grids)
            .map(|(t, grid)| {
                let a = &t.scenario.action;
                grid.iter().map(|&x| a.carbs_g * shape(&p, a, x)).collect()
            })
            .collect()
    }

    /// Best band and residual for one `(G₀, shape)`, or `None` when the
    /// peak term alone is already at least `bound`.
    fn evaluate(&self, g0: f64, s: Shape, exc: &[Vec<f64>], bound: f64) -> Option<Candidate> {
        let k: Vec<f64> = exc
            .iter()
            .map(|e| e.iter().copied().fold(0.0, f64::max))
            .collect();
        let kk: f64 = k.iter().map(|v| v * v).sum();
        let alpha = if kk > 0.0 {
            let num: f64 = k
                .iter()
                .zip(self.targets)
                .map(|(ki, t)| ki * (t.target_peak - g0))
                .sum();
            (num / kk).clamp(0.0, self.opts.max_carb_gain)
        } else {
            0.0
        };
        let peak_res: f64 = k
            .iter()
            .zip(self.targets)
            .map(|(ki, t)| (g0 + alpha * ki - t.target_peak).powi(2))
            .sum();
        if peak_res >= bound {
            return None;
        }

        let values: Vec<Vec<f64>> = exc
            .iter()
            .map(|e| {
                let mut v: Vec<f64> = e.iter().map(|x| g0 + alpha * x).collect();
                v.sort_by(f64::total_cmp);
                v
            })
            .collect();
        let lo_edge = g0 + self.opts.band_margin;
        let hi_edge = self.opts.max_tir_high;
        if lo_edge > hi_edge {
            return None;
        }
        let mut breaks: Vec<f64> = values
            .iter()
            .flatten()
            .copied()
            .filter(|&v| v >= lo_edge && v <= hi_edge)
            .collect();
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let mut highs = vec![lo_edge];
        for (i, &b) in breaks.iter().enumerate() {
            let next = breaks.get(i + 1).copied().unwrap_or(hi_edge);
            highs.push(if next > b { 0.5 * (b + next) } else { b });
        }

        let mut best: Option<Candidate> = None;
        for &low in self.opts.tir_low.iter().filter(|&&l| l <= g0) {
            for &high in &highs {
                let tir_res: f64 = values
                    .iter()
                    .zip(self.targets)
                    .map(|(v, t)| {
                        let inside = v.partition_point(|&g| g <= high) - v.partition_point(|&g| g < low);
                        let tir = 100.0 * inside as f64 / v.len() as f64;
                        (tir - t.target_tir).powi(2)
                    })
                    .sum();
                let total = peak_res + tir_res;
                if best.is_none_or(|b| total < b.residual) {
                    best = Some(Candidate {
                        residual: total,
                        params: ResponseParams {
                            carb_gain: alpha,
                            tir_low: low,
                            tir_high: high,
                            ..self.params_for(g0, s)
                        },
                    });
                }
            }
        }
        best
    }

    fn objective(&self, g0: f64, s: Shape) -> Option<Candidate> {
        let exc = self.excursions(s);
        self.evaluate(g0, s, &exc, f64::INFINITY)
    }
}

fn insert_top(top: &mut Vec<Candidate>, c: Candidate, k: usize) {
    let pos = top.partition_point(|t| t.residual <= c.residual);
    if pos < k {
        top.insert(pos, c);
        top.truncate(k);
    }
}

/// Grid search plus compass refinement minimising
/// `Σ (peak − target_peak)² + (TIR − target_TIR)²` on noise-free runs.
pub fn calibrate(targets: &[CalibrationTarget], opts: &CalibrationOptions) -> Result<Calibration> {
    if targets.is_empty() {
        return Err(CounterfactualError::InvalidTargets("no targets given".into()));
    }
    for t in targets {
        if !(t.target_peak.is_finite() && (0.0..=100.0).contains(&t.target_tir)) {
            return Err(CounterfactualError::InvalidTargets(format!(
                "{}: peak must be finite and TIR within [0, 100]",
                t.scenario.label
            )));
        }
        if !(t.scenario.duration_min > 0.0) {
            return Err(CounterfactualError::InvalidTargets(format!(
                "{}: duration must be positive",
                t.scenario.label
            )));
        }
    }
    let problem = Problem {
        targets,
        grids: targets
            .iter()
            .map(|t| time_grid(t.scenario.duration_min))
            .collect(),
        opts,
    };
    let has_activity = targets.iter().any(|t| t.scenario.action.activity_min > 0.0);
    let beta_range = if has_activity {
        opts.activity_attenuation
    } else {
        SearchRange::fixed(0.0)
    };

    let k = opts.refine_starts.max(1);
    let mut top: Vec<Candidate> = Vec::with_capacity(k + 1);
    let g0_values = opts.baseline_glucose.values();
    for tp in opts.time_to_peak.values() {
        for w in opts.width.values() {
            for beta in beta_range.values() {
                let s = Shape {
                    time_to_peak: tp,
                    width: w,
                    attenuation: beta,
                };
                let exc = problem.excursions(s);
                for &g0 in &g0_values {
                    let bound = if top.len() < k {
                        f64::INFINITY
                    } else {
                        top[k - 1].residual
                    };
                    if let Some(c) = problem.evaluate(g0, s, &exc, bound) {
                        insert_top(&mut top, c, k);
                    }
                }
            }
        }
    }

    let ranges = [
        opts.baseline_glucose,
        opts.time_to_peak,
        opts.width,
        beta_range,
    ];
    let mut best = *top.first().ok_or_else(|| {
        CounterfactualError::InvalidTargets("no admissible band for any grid point".into())
    })?;
    for start in &top {
        let refined = refine(&problem, *start, &ranges);
        if refined.residual < best.residual {
            best = refined;
        }
    }

    let threshold = opts
        .max_residual
        .unwrap_or(targets.len() as f64 * (2.0f64.powi(2) + 5.0f64.powi(2)));
    if best.residual > threshold {
        return Err(CounterfactualError::CalibrationFailed {
            best_residual: best.residual,
            params: Box::new(best.params),
        });
    }
    let fitted = fitted_outcomes(&best.params, targets);
    Ok(Calibration {
        params: best.params,
        residual: best.residual,
        fitted,
    })
}

fn unpack(p: &ResponseParams) -> [f64; 4] {
    [
        p.baseline_glucose,
        p.time_to_peak,
        p.width,
        p.activity_attenuation,
    ]
}

fn refine(problem: &Problem, start: Candidate, ranges: &[SearchRange; 4]) -> Candidate {
    let mut best = start;
    let mut step: Vec<f64> = ranges
        .iter()
        .map(|r| if r.is_fixed() { 0.0 } else { r.step })
        .collect();
    let floor: Vec<f64> = step.iter().map(|s| s * 1e-3).collect();
    for _ in 0..2000 {
        if step.iter().zip(&floor).all(|(s, f)| *s <= *f) {
            break;
        }
        let mut improved = false;
        for d in 0..4 {
            if step[d] <= floor[d] {
                continue;
            }
            for dir in [1.0, -1.0] {
                let mut x = unpack(&best.params);
                x[d] = ranges[d].clamp(x[d] + dir * step[d]);
                if x[2] <= 0.0 || x[1] <= 0.0 {
                    continue;
                }
                let s = Shape {
                    time_to_peak: x[1],
                    width: x[2],
                    attenuation: x[3],
                };
                if let Some(c) = problem.objective(x[0], s) {
                    if c.residual < best.residual {
                        best = c;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
    }
    best
}

/// Noise-free (peak, TIR) of each target scenario under `p`.
pub(crate) fn fitted_outcomes(p: &ResponseParams, targets: &[CalibrationTarget]) -> Vec<(f64, f64)> {
    targets
        .iter()
        .map(|t| {
            let grid = time_grid(t.scenario.duration_min);
            let g: Vec<f64> = grid
                .iter()
                .map(|&x| p.baseline_glucose + super::response_delta(p, &t.scenario.action, x))
                .collect();
            let peak = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let inside = g.iter().filter(|&&v| p.tir_low <= v && v <= p.tir_high).count();
            (peak, 100.0 * inside as f64 / g.len() as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counterfactual::{compute_outcome, simulate_scenario, UtilityWeights};
    use crate::twin::Action;

    #[test]
    fn search_range_values() {
        let r = SearchRange {
            min: 1.0,
            max: 2.0,
            step: 0.25,
        };
        assert_eq!(r.values(), vec![1.0, 1.25, 1.5, 1.75, 2.0]);
        assert_eq!(SearchRange::fixed(3.0).values(), vec![3.0]);
    }

    #[test]
    fn reference_targets_parse() {
        let t = reference_targets();
        assert_eq!(t.len(), 3);
        assert_eq!(
            t.iter().map(|t| (t.target_peak, t.target_tir)).collect::<Vec<_>>(),
            vec![(179.0, 58.0), (153.0, 72.0), (163.0, 68.0)]
        );
    }

    #[test]
    fn single_target_fixed_point() {
        let truth = ResponseParams {
            baseline_glucose: 110.0,
            carb_gain: 1.1,
            time_to_peak: 50.0,
            width: 18.0,
            activity_attenuation: 0.0,
            noise_sigma: 0.0,
            tir_low: 70.0,
            tir_high: 150.0,
        };
        let s = InterventionScenario::new("meal", Action::meal(45.0));
        let traj = simulate_scenario(&truth, &s).unwrap();
        let o = compute_outcome(&traj, &truth, &UtilityWeights::default(), "meal");
        let target = CalibrationTarget {
            scenario: s,
            target_peak: o.peak_glucose,
            target_tir: o.time_in_range_pct,
        };
        let cal = calibrate(&[target], &CalibrationOptions::default()).unwrap();
        assert!(cal.residual < 1e-9, "residual {}", cal.residual);
    }

    #[test]
    fn contradictory_target_fails() {
        let target = CalibrationTarget {
            scenario: InterventionScenario::new("meal", Action::meal(60.0)),
            target_peak: 150.0,
            target_tir: 0.0,
        };
        let opts = CalibrationOptions {
            baseline_glucose: SearchRange::fixed(127.0),
            ..Default::default()
        };
        match calibrate(&[target], &opts) {
            Err(CounterfactualError::CalibrationFailed { best_residual, .. }) => {
                assert!(best_residual > 29.0)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_targets_rejected() {
        assert!(matches!(
            calibrate(&[], &CalibrationOptions::default()),
            Err(CounterfactualError::InvalidTargets(_))
        ));
    }
}
