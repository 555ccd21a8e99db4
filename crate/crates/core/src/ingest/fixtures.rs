//! Deterministic synthetic CGM corpus in the patient XML fixture schema.
//!
//! Each file carries one patient at a 5-minute cadence with occasional
//! sensor dropouts. The underlying signal is a circadian swing plus three
//! meal excursions a day plus AR(1) noise; pooled values are then mapped
//! affinely (and clamped to the sensor range, rounded to whole mg/dL) so
//! the corpus hits a requested mean and standard deviation.

use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{write_cgm_xml, CgmRecord, CgmSeries};
use crate::rng::sub_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusConfig {
    pub files: usize,
    pub total_records: usize,
    pub target_mean: f64,
    pub target_std: f64,
    pub interval_min: u32,
    pub seed: u64,
}

impl Default for SyntheticCorpusConfig {
    /// Matches the scale of the public-access OhioT1DM release: 24 files,
    /// 166,533 readings, mean 159.58 mg/dL, sd 60.67 mg/dL.
    fn default() -> Self {
        Self {
            files: 24,
            total_records: 166_533,
            target_mean: 159.58,
            target_std: 60.67,
            interval_min: 5,
            seed: 2018,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFile {
    pub file_name: String,
    pub series: CgmSeries,
}

const SENSOR_LOW: f64 = 40.0;
const SENSOR_HIGH: f64 = 400.0;

fn file_counts(total: usize, files: usize) -> Vec<usize> {
    let base = total / files;
    let extra = total % files;
    (0..files).map(|i| base + usize::from(i < extra)).collect()
}

fn raw_signal(index: usize, n: usize, cfg: &SyntheticCorpusConfig) -> (Vec<NaiveDateTime>, Vec<f64>) {
    let mut rng = sub_rng(cfg.seed, index as u64);
    let epoch = NaiveDate::from_ymd_opt(2018, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid epoch");
    let start = epoch + Duration::days(60 * index as i64) + Duration::minutes(rng.random_range(0..60));
    let step = Duration::minutes(i64::from(cfg.interval_min));
    let ar = Normal::new(0.0, 6.0).expect("valid normal");
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let level: f64 = rng.random_range(120.0..170.0);
    let meals: [(f64, f64); 3] = [
        (rng.random_range(6.5..9.0), rng.random_range(40.0..110.0)),
        (rng.random_range(11.5..14.0), rng.random_range(40.0..110.0)),
        (rng.random_range(17.5..20.5), rng.random_range(40.0..110.0)),
    ];

    let mut times = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut t = start;
    let mut noise = 0.0f64;
    for _ in 0..n {
        if rng.random_bool(0.002) {
            t += step * rng.random_range(2..12);
        }
        let hour = (t - epoch).num_minutes() as f64 / 60.0 % 24.0;
        let mut g = level + 25.0 * (std::f64::consts::TAU * hour / 24.0 + phase).sin();
        for &(meal_hour, amplitude) in &meals {
            let since = hour - meal_hour;
            if (0.0..5.0).contains(&since) {
                g += amplitude * (-(since - 1.0).powi(2) / (2.0 * 0.6f64.powi(2))).exp();
            }
        }
        noise = 0.95 * noise + ar.sample(&mut rng);
        g += noise;
        times.push(t);
        values.push(g);
        t += step;
    }
    (times, values)
}

fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn finish(v: f64) -> f64 {
    v.clamp(SENSOR_LOW, SENSOR_HIGH).round()
}

/// Generates the corpus. Output depends only on `cfg`.
pub fn generate_corpus(cfg: &SyntheticCorpusConfig) -> Vec<SyntheticFile> {
    assert!(cfg.files > 0, "corpus needs at least one file");
    let counts = file_counts(cfg.total_records, cfg.files);
    let raw: Vec<(Vec<NaiveDateTime>, Vec<f64>)> = counts
        .iter()
        .enumerate()
        .map(|(i, &n)| raw_signal(i, n, cfg))
        .collect();

    // Standardise the pooled signal, add a mild right skew, then solve for
    // the affine map whose clamped, rounded image has the target moments.
    let pooled: Vec<f64> = raw.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    let (m0, s0) = moments(&pooled);
    let skewed: Vec<f64> = pooled
        .iter()
        .map(|v| ((v - m0) / s0.max(1e-12) * 0.35).exp())
        .collect();
    let (m1, s1) = moments(&skewed);
    let z: Vec<f64> = skewed.iter().map(|v| (v - m1) / s1.max(1e-12)).collect();

    let (mut offset, mut scale) = (cfg.target_mean, cfg.target_std);
    let mut mapped = Vec::new();
    for _ in 0..50 {
        mapped = z.iter().map(|v| finish(offset + scale * v)).collect();
        let (m, s) = moments(&mapped);
        if (m - cfg.target_mean).abs() < 1e-3 && (s - cfg.target_std).abs() < 1e-3 {
            break;
        }
        offset += cfg.target_mean - m;
        if s > 0.0 {
            scale *= cfg.target_std / s;
        }
    }

    let mut it = mapped.into_iter();
    raw.into_iter()
        .enumerate()
        .map(|(i, (times, _))| {
            let patient = i % 12 + 1;
            let partition = if i < 12 { "training" } else { "testing" };
            let records = times
                .into_iter()
                .map(|t| CgmRecord::observed(t, it.next().expect("value per timestamp")))
                .collect();
            SyntheticFile {
                file_name: format!("p{patient:02}-{partition}.xml"),
                series: CgmSeries::new(format!("p{patient:02}"), records),
            }
        })
        .collect()
}

/// Writes each file as XML under `dir`, returning the paths in corpus order.
pub fn write_corpus(dir: &Path, files: &[SyntheticFile]) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    files
        .iter()
        .map(|f| {
            let path = dir.join(&f.file_name);
            std::fs::write(&path, write_cgm_xml(std::slice::from_ref(&f.series)))?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_cgm_xml, summarize};

    fn small() -> SyntheticCorpusConfig {
        SyntheticCorpusConfig {
            files: 3,
            total_records: 5000,
            target_mean: 150.0,
            target_std: 50.0,
            interval_min: 5,
            seed: 1,
        }
    }

    #[test]
    fn counts_split_exactly() {
        assert_eq!(file_counts(166_533, 24).iter().sum::<usize>(), 166_533);
        assert_eq!(file_counts(10, 3), vec![4, 3, 3]);
    }

    #[test]
    fn hits_target_moments() {
        let files = generate_corpus(&small());
        let series: Vec<_> = files.into_iter().map(|f| f.series).collect();
        let s = summarize(&series).unwrap();
        assert_eq!(s.record_count, 5000);
        assert!((s.mean_glucose - 150.0).abs() < 0.05, "{}", s.mean_glucose);
        assert!((s.std_glucose - 50.0).abs() < 0.05, "{}", s.std_glucose);
        assert_eq!(s.modal_interval_min, Some(5));
    }

    #[test]
    fn deterministic_and_parseable() {
        let a = generate_corpus(&small());
        let b = generate_corpus(&small());
        assert_eq!(a, b);
        let xml = write_cgm_xml(std::slice::from_ref(&a[0].series));
        let p = parse_cgm_xml(xml.as_bytes()).unwrap();
        assert_eq!(p.rejected, 0);
        assert_eq!(p.series[0], a[0].series);
    }
}
