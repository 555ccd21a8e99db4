use serde::{Deserialize, Serialize};

use super::{CounterfactualError, Result, ScenarioOutcome, Trajectory};

pub const OUTCOME_CSV_HEADER: &str = "label,peak_mg_dl,tir_pct,hypo_min,utility";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelledTrajectory {
    pub label: String,
    pub trajectory: Trajectory,
}

/// Wide format `t_min,<label1>,<label2>,…`; rows follow the first
/// trajectory's grid. Shorter trajectories leave trailing cells empty.
pub fn trajectories_to_csv(trajectories: &[LabelledTrajectory]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t_min".to_string()];
    header.extend(trajectories.iter().map(|t| t.label.clone()));
    w.write_record(&header).expect("in-memory write");
    let grid = trajectories
        .first()
        .map(|t| t.trajectory.t_grid.clone())
        .unwrap_or_default();
    for (k, t) in grid.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(trajectories.iter().map(|tr| {
            tr.trajectory
                .glucose
                .get(k)
                .map(f64::to_string)
                .unwrap_or_default()
        }));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
}

pub fn parse_trajectories_csv(text: &str) -> Result<Vec<LabelledTrajectory>> {
    let parse_err = |line: u64, message: String| CounterfactualError::Parse { line, message };
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.is_empty() || &header[0] != "t_min" {
        return Err(parse_err(1, "first column must be t_min".into()));
    }
    let mut out: Vec<LabelledTrajectory> = header
        .iter()
        .skip(1)
        .map(|label| LabelledTrajectory {
            label: label.to_string(),
            trajectory: Trajectory {
                t_grid: Vec::new(),
                glucose: Vec::new(),
            },
        })
        .collect();
    for (k, rec) in r.records().enumerate() {
        let line = k as u64 + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("not a number: {s:?}")))
        };
        let t = num(&rec[0])?;
        for (j, tr) in out.iter_mut().enumerate() {
            let cell = &rec[j + 1];
            if cell.trim().is_empty() {
                continue;
            }
            tr.trajectory.t_grid.push(t);
            tr.trajectory.glucose.push(num(cell)?);
        }
    }
    Ok(out)
}

pub fn outcomes_to_csv(outcomes: &[ScenarioOutcome]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(OUTCOME_CSV_HEADER.split(',')).expect("in-memory write");
    for o in outcomes {
        w.write_record([
            o.label.clone(),
            o.peak_glucose.to_string(),
            o.time_in_range_pct.to_string(),
            o.hypo_minutes.to_string(),
            o.utility.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
}

pub fn outcomes_to_json(outcomes: &[ScenarioOutcome]) -> String {
    serde_json::to_string_pretty(outcomes).expect("outcomes serialize")
}
