//! Expands static benchmark rows into short, intervention-annotated
//! sequences.
//!
//! Every source row becomes one sequence of `sequence_length` steps spaced
//! `step_minutes` apart. A single intervention context (carbohydrates,
//! activity minutes, timing offset) is drawn uniformly per sequence. Each
//! step perturbs the source features with zero-mean Gaussian noise scaled by
//! the per-feature standard deviation, and its outcome is
//!
//! ```text
//! target + carb_coefficient·(carbs_g − carb_midpoint)
//!        + activity_coefficient·activity_min + noise
//! ```
//!
//! The sequence length, step, ranges, noise law and coefficients are
//! configuration, not physiology.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::TabularDataset;
use crate::matrix::Matrix;
use crate::rng::sub_rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("source dataset is empty")]
    EmptyDataset,
    #[error("invalid augment config: {0}")]
    InvalidConfig(String),
    #[error("sequence for source row {source_row} has {got} steps, expected {expected}")]
    HeterogeneousSteps {
        source_row: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

pub type Result<T> = std::result::Result<T, AugmentError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub sequence_length: usize,
    pub step_minutes: f64,
    /// Grams, inclusive.
    pub carb_range: [f64; 2],
    /// Minutes, inclusive; the lower bound must be 0 or more.
    pub activity_range: [f64; 2],
    /// Minutes of offset, inclusive.
    pub timing_range: [f64; 2],
    /// Noise sd as a fraction of each column's standard deviation.
    pub noise_sigma: f64,
    /// Outcome units per carbohydrate gram above the range midpoint.
    pub carb_coefficient: f64,
    /// Outcome units per activity minute.
    pub activity_coefficient: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            sequence_length: 6,
            step_minutes: 20.0,
            carb_range: [20.0, 90.0],
            activity_range: [0.0, 30.0],
            timing_range: [0.0, 60.0],
            noise_sigma: 0.05,
            carb_coefficient: 0.8,
            activity_coefficient: -1.2,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AugmentError::InvalidConfig(m.to_string()));
        if self.sequence_length < 2 {
            return bad("sequence_length must be at least 2");
        }
        if !(self.step_minutes > 0.0) {
            return bad("step_minutes must be positive");
        }
        for (name, [lo, hi]) in [
            ("carb_range", self.carb_range),
            ("activity_range", self.activity_range),
            ("timing_range", self.timing_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= 0.0) {
                return bad(&format!("{name} must satisfy 0 <= low <= high"));
            }
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative");
        }
        Ok(())
    }

    pub fn carb_midpoint(&self) -> f64 {
        0.5 * (self.carb_range[0] + self.carb_range[1])
    }

    /// Deterministic outcome shift for one intervention context.
    pub fn drift(&self, carbs_g: f64, activity_min: f64) -> f64 {
        self.carb_coefficient * (carbs_g - self.carb_midpoint())
            + self.activity_coefficient * activity_min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentStep {
    pub t_offset: f64,
    pub features: Vec<f64>,
    pub carbs_g: f64,
    pub activity_min: f64,
    pub timing_min: f64,
    pub outcome: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedSequence {
    pub source_row: usize,
    pub steps: Vec<AugmentStep>,
}

fn uniform(rng: &mut crate::rng::Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
}

/// One sequence per source row, each drawn from its own sub-seed of
/// `cfg.seed`, so the output does not depend on scheduling.
pub fn augment(ds: &TabularDataset, cfg: &AugmentConfig) -> Result<Vec<AugmentedSequence>> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(AugmentError::EmptyDataset);
    }
    let feature_sd: Vec<f64> = ds
        .feature_std()
        .into_iter()
        .map(|s| s * cfg.noise_sigma)
        .collect();
    let target_sd = population_std(&ds.target) * cfg.noise_sigma;

    Ok((0..ds.n_rows())
        .into_par_iter()
        .map(|row| {
            let mut rng = sub_rng(cfg.seed, row as u64);
            let carbs_g = uniform(&mut rng, cfg.carb_range);
            let activity_min = uniform(&mut rng, cfg.activity_range);
            let timing_min = uniform(&mut rng, cfg.timing_range);
            let base = ds.features.row(row);
            let level = ds.target[row] + cfg.drift(carbs_g, activity_min);
            let steps = (0..cfg.sequence_length)
                .map(|k| {
                    let features = base
                        .iter()
                        .zip(&feature_sd)
                        .map(|(v, sd)| {
                            let z: f64 = rng.sample(StandardNormal);
                            v + sd * z
                        })
                        .collect();
                    let z: f64 = rng.sample(StandardNormal);
                    AugmentStep {
                        t_offset: k as f64 * cfg.step_minutes,
                        features,
                        carbs_g,
                        activity_min,
                        timing_min,
                        outcome: level + target_sd * z,
                    }
                })
                .collect();
            AugmentedSequence {
                source_row: row,
                steps,
            }
        })
        .collect())
}

/// Names of the four intervention columns appended by [`flatten`].
pub const CONTEXT_COLUMNS: [&str; 4] = ["t_offset", "carbs_g", "activity_min", "timing_min"];

/// A flattened augmentation: one dataset row per step.
#[derive(Debug, Clone, PartialEq)]
pub struct Flattened {
    pub dataset: TabularDataset,
    /// Source row of each dataset row.
    pub source_rows: Vec<usize>,
}

fn feature_names(d: usize) -> Vec<String> {
    (0..d)
        .map(|j| format!("f{j}"))
        .chain(CONTEXT_COLUMNS.iter().map(|c| c.to_string()))
        .collect()
}

/// Rows are `f0..f{d-1} ‖ t_offset ‖ carbs_g ‖ activity_min ‖ timing_min`
/// with the step outcome as target. An empty input yields an empty dataset
/// of benchmark width.
pub fn flatten(sequences: &[AugmentedSequence]) -> Result<Flattened> {
    let Some(first) = sequences.first() else {
        let d = crate::ingest::BENCHMARK_FEATURES.len();
        return Ok(Flattened {
            dataset: TabularDataset::new(feature_names(d), Matrix::empty(d + 4), Vec::new()),
            source_rows: Vec::new(),
        });
    };
    let len = first.steps.len();
    let d = first.steps.first().map_or(0, |s| s.features.len());
    let mut x = Matrix::empty(d + 4);
    let mut y = Vec::with_capacity(sequences.len() * len);
    let mut source_rows = Vec::with_capacity(y.capacity());
    let mut row = Vec::with_capacity(d + 4);
    for seq in sequences {
        if seq.steps.len() != len {
            return Err(AugmentError::HeterogeneousSteps {
                source_row: seq.source_row,
                expected: len,
                got: seq.steps.len(),
            });
        }
        for s in &seq.steps {
            if s.features.len() != d {
                return Err(AugmentError::InvalidConfig(format!(
                    "source row {} has {} features, expected {d}",
                    seq.source_row,
                    s.features.len()
                )));
            }
            row.clear();
            row.extend_from_slice(&s.features);
            row.extend_from_slice(&[s.t_offset, s.carbs_g, s.activity_min, s.timing_min]);
            x.push_row(&row);
            y.push(s.outcome);
            source_rows.push(seq.source_row);
        }
    }
    Ok(Flattened {
        dataset: TabularDataset::new(feature_names(d), x, y),
        source_rows,
    })
}

/// Long-format CSV: `source_row,t_offset,f0..f{d-1},carbs_g,activity_min,timing_min,outcome`.
pub fn export_augmented_csv(sequences: &[AugmentedSequence]) -> String {
    let d = sequences
        .first()
        .and_then(|s| s.steps.first())
        .map_or(crate::ingest::BENCHMARK_FEATURES.len(), |s| s.features.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["source_row".to_string(), "t_offset".to_string()];
    header.extend((0..d).map(|j| format!("f{j}")));
    header.extend(["carbs_g", "activity_min", "timing_min", "outcome"].map(String::from));
    w.write_record(&header).expect("in-memory write");
    for seq in sequences {
        for s in &seq.steps {
            let mut rec = vec![seq.source_row.to_string(), s.t_offset.to_string()];
            rec.extend(s.features.iter().map(f64::to_string));
            rec.extend([s.carbs_g, s.activity_min, s.timing_min, s.outcome].map(|v| v.to_string()));
            w.write_record(&rec).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
}

/// Inverse of [`export_augmented_csv`]; consecutive rows with the same
/// `source_row` form one sequence.
pub fn parse_augmented_csv(text: &str) -> Result<Vec<AugmentedSequence>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r
        .headers()
        .map_err(|e| AugmentError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let n = header.len();
    if n < 6 || &header[0] != "source_row" || &header[1] != "t_offset" || &header[n - 1] != "outcome" {
        return Err(AugmentError::Parse {
            line: 1,
            message: "unexpected header".into(),
        });
    }
    let d = n - 6;
    let mut out: Vec<AugmentedSequence> = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let line = k as u64 + 2;
        let rec = rec.map_err(|e| AugmentError::Parse {
            line,
            message: e.to_string(),
        })?;
        let num = |i: usize| -> Result<f64> {
            rec[i].trim().parse::<f64>().map_err(|_| AugmentError::Parse {
                line,
                message: format!("column {} is not a number: {:?}", &header[i], &rec[i]),
            })
        };
        let source_row: usize = rec[0].trim().parse().map_err(|_| AugmentError::Parse {
            line,
            message: format!("bad source_row {:?}", &rec[0]),
        })?;
        let step = AugmentStep {
            t_offset: num(1)?,
            features: (2..2 + d).map(num).collect::<Result<_>>()?,
            carbs_g: num(2 + d)?,
            activity_min: num(3 + d)?,
            timing_min: num(4 + d)?,
            outcome: num(5 + d)?,
        };
        match out.last_mut() {
            Some(seq) if seq.source_row == source_row => seq.steps.push(step),
            _ => out.push(AugmentedSequence {
                source_row,
                steps: vec![step],
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::load_tabular;
    use crate::BENCHMARK_CSV;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn benchmark() -> TabularDataset {
        load_tabular(BENCHMARK_CSV.as_bytes()).unwrap()
    }

    fn tiny() -> TabularDataset {
        TabularDataset::new(
            vec!["a".into(), "b".into()],
            Matrix::from_rows(&[[1.0, 2.0], [3.0, 5.0], [0.0, -1.0]]),
            vec![100.0, 150.0, 200.0],
        )
    }

    #[test]
    fn degenerate_ranges_are_exact() {
        let ds = tiny();
        let cfg = AugmentConfig {
            noise_sigma: 0.0,
            carb_range: [60.0, 60.0],
            activity_range: [0.0, 0.0],
            ..Default::default()
        };
        let seqs = augment(&ds, &cfg).unwrap();
        for seq in &seqs {
            for s in &seq.steps {
                assert_eq!(s.features, ds.features.row(seq.source_row));
                assert_eq!(s.outcome, ds.target[seq.source_row] + cfg.drift(60.0, 0.0));
                assert_eq!(s.carbs_g, 60.0);
            }
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let ds = tiny();
        let cfg = AugmentConfig::default();
        assert_eq!(augment(&ds, &cfg).unwrap(), augment(&ds, &cfg).unwrap());
        let other = AugmentConfig { seed: 1, ..cfg.clone() };
        assert_ne!(augment(&ds, &cfg).unwrap(), augment(&ds, &other).unwrap());
    }

    #[test]
    fn benchmark_shape_and_carb_coefficient() {
        let ds = benchmark();
        let cfg = AugmentConfig::default();
        let seqs = augment(&ds, &cfg).unwrap();
        assert_eq!(seqs.len(), 442);
        assert!(seqs.iter().all(|s| s.steps.len() == 6));

        // Oracle: least squares of (outcome − source target) on
        // [1, carbs_g, activity_min] across all generated steps.
        let rows: Vec<&AugmentStep> = seqs.iter().flat_map(|s| &s.steps).collect();
        let shift: Vec<f64> = seqs
            .iter()
            .flat_map(|s| s.steps.iter().map(|st| st.outcome - ds.target[s.source_row]))
            .collect();
        let design = DMatrix::from_fn(rows.len(), 3, |i, j| match j {
            0 => 1.0,
            1 => rows[i].carbs_g,
            _ => rows[i].activity_min,
        });
        let beta = design
            .svd(true, true)
            .solve(&DVector::from_vec(shift), 1e-12)
            .unwrap();
        assert!((beta[1] - 0.8).abs() <= 0.05 * 0.8, "carb slope {}", beta[1]);
        assert!((beta[2] + 1.2).abs() <= 0.05 * 1.2, "activity slope {}", beta[2]);
    }

    #[test]
    fn offsets_are_evenly_spaced_and_context_constant() {
        let seqs = augment(&tiny(), &AugmentConfig::default()).unwrap();
        for seq in &seqs {
            for w in seq.steps.windows(2) {
                assert_eq!(w[1].t_offset - w[0].t_offset, 20.0);
                assert_eq!(w[0].carbs_g, w[1].carbs_g);
                assert_eq!(w[0].activity_min, w[1].activity_min);
                assert_eq!(w[0].timing_min, w[1].timing_min);
            }
        }
    }

    #[test]
    fn noise_channels_are_centred() {
        let ds = benchmark();
        let cfg = AugmentConfig {
            sequence_length: 25,
            seed: 8,
            ..Default::default()
        };
        let seqs = augment(&ds, &cfg).unwrap();
        let sd = ds.feature_std();
        let n = (seqs.len() * 25) as f64;
        assert!(n >= 1e4);
        for (j, sd_j) in sd.iter().enumerate() {
            let sigma = cfg.noise_sigma * sd_j;
            let x = &ds.features;
            let mean = seqs
                .iter()
                .flat_map(|s| s.steps.iter().map(move |st| st.features[j] - x.get(s.source_row, j)))
                .sum::<f64>()
                / n;
            assert!(mean.abs() <= 3.0 * sigma / n.sqrt(), "feature {j} mean {mean}");
        }
    }

    #[test]
    fn flatten_shape() {
        let seqs = augment(&tiny(), &AugmentConfig { sequence_length: 3, ..Default::default() })
            .unwrap();
        let f = flatten(&seqs[..2]).unwrap();
        assert_eq!(f.dataset.n_rows(), 6);
        assert_eq!(f.dataset.n_features(), 6);
        let bench = augment(&benchmark(), &AugmentConfig { sequence_length: 3, ..Default::default() })
            .unwrap();
        let f = flatten(&bench[..2]).unwrap();
        assert_eq!((f.dataset.n_rows(), f.dataset.n_features()), (6, 14));
    }

    #[test]
    fn flatten_empty() {
        let f = flatten(&[]).unwrap();
        assert!(f.dataset.is_empty());
        assert_eq!(f.dataset.n_features(), 14);
    }

    #[test]
    fn flatten_groups_back_to_sequences() {
        let seqs = augment(&benchmark(), &AugmentConfig::default()).unwrap();
        let f = flatten(&seqs).unwrap();
        let mut groups = std::collections::BTreeSet::new();
        groups.extend(f.source_rows.iter().copied());
        assert_eq!(groups.len(), seqs.len());
    }

    #[test]
    fn flatten_rejects_ragged() {
        let mut seqs = augment(&tiny(), &AugmentConfig::default()).unwrap();
        seqs[1].steps.pop();
        assert!(matches!(
            flatten(&seqs),
            Err(AugmentError::HeterogeneousSteps { source_row: 1, expected: 6, got: 5 })
        ));
    }

    #[test]
    fn csv_and_json_round_trip() {
        let seqs = augment(&tiny(), &AugmentConfig::default()).unwrap();
        let csv = export_augmented_csv(&seqs);
        assert!(csv.starts_with("source_row,t_offset,f0,f1,carbs_g,activity_min,timing_min,outcome\n"));
        assert_eq!(parse_augmented_csv(&csv).unwrap(), seqs);
        let json = serde_json::to_string(&seqs).unwrap();
        assert_eq!(serde_json::from_str::<Vec<AugmentedSequence>>(&json).unwrap(), seqs);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = AugmentConfig { sequence_length: 1, ..Default::default() };
        assert!(matches!(augment(&tiny(), &cfg), Err(AugmentError::InvalidConfig(_))));
        let cfg = AugmentConfig { carb_range: [90.0, 20.0], ..Default::default() };
        assert!(matches!(augment(&tiny(), &cfg), Err(AugmentError::InvalidConfig(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn draws_respect_ranges(
            seed in any::<u64>(),
            c0 in 0.0f64..100.0, cw in 0.0f64..100.0,
            a in 0.0f64..60.0, t in 0.0f64..90.0,
        ) {
            let cfg = AugmentConfig {
                carb_range: [c0, c0 + cw],
                activity_range: [0.0, a],
                timing_range: [0.0, t],
                seed,
                ..Default::default()
            };
            for seq in augment(&tiny(), &cfg).unwrap() {
                for s in &seq.steps {
                    prop_assert!((c0..=c0 + cw).contains(&s.carbs_g));
                    prop_assert!((0.0..=a).contains(&s.activity_min));
                    prop_assert!((0.0..=t).contains(&s.timing_min));
                }
            }
        }

        #[test]
        fn noise_free_output_is_function_of_draws(seed in any::<u64>()) {
            let ds = tiny();
            let cfg = AugmentConfig { noise_sigma: 0.0, seed, ..Default::default() };
            for seq in augment(&ds, &cfg).unwrap() {
                for s in &seq.steps {
                    prop_assert_eq!(&s.features[..], ds.features.row(seq.source_row));
                    prop_assert_eq!(s.outcome, ds.target[seq.source_row] + cfg.drift(s.carbs_g, s.activity_min));
                }
            }
        }
    }
}
