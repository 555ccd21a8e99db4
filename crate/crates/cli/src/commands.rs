use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDateTime;
use glucotwin_core::augment::{augment, export_augmented_csv, AugmentConfig};
use glucotwin_core::counterfactual::{
    calibrate, evaluate_scenarios, outcomes_to_csv, overlay_counterfactual, trajectories_to_csv,
    CalibrationOptions, CalibrationTarget, InterventionScenario, ResponseParams, UtilityWeights,
};
use glucotwin_core::eval::{run_benchmark, BenchmarkConfig, EvalReport};
use glucotwin_core::ingest::fixtures::{generate_corpus, write_corpus, SyntheticCorpusConfig};
use glucotwin_core::ingest::{
    load_tabular, parse_cgm_csv, parse_cgm_xml, summarize, CgmSeries, TabularDataset,
    XML_TIMESTAMP_FORMAT,
};
use glucotwin_core::BENCHMARK_CSV;
use glucotwin_service::{app, bind, overlay_window, serve, AppState, DatasetKind, Workspace};
use serde::de::DeserializeOwned;
use serde_json::json;

use crate::{Cli, Command, Format, GlobalOpts, Kind};

/// An input file that does not exist. Exits with status 2.
#[derive(Debug)]
pub struct MissingInput(pub PathBuf);

impl std::fmt::Display for MissingInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "no such file: {}", self.0.display())
    }
}

impl std::error::Error for MissingInput {}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.chain().any(|c| c.is::<MissingInput>()) {
        2
    } else {
        1
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    match std::fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(MissingInput(path.to_path_buf()).into()),
        Err(e) => Err(e).with_context(|| format!("reading {}", path.display())),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_input(path)?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

struct Ctx<'a> {
    opts: &'a GlobalOpts,
}

impl Ctx<'_> {
    fn note(&self, msg: impl std::fmt::Display) {
        if !self.opts.quiet {
            eprintln!("{msg}");
        }
    }

    fn emit(&self, text: &str) -> Result<()> {
        match &self.opts.out {
            Some(path) => {
                std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
                self.note(format_args!("wrote {}", path.display()));
            }
            None => std::io::stdout().lock().write_all(text.as_bytes())?,
        }
        Ok(())
    }

    fn emit_json(&self, value: &serde_json::Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.emit(&text)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx { opts: &cli.global };
    match cli.command {
        Command::Ingest {
            kind,
            skip_bad,
            no_store,
            paths,
        } => ingest(&ctx, kind, skip_bad, no_store, &paths),
        Command::Benchmark {
            seeds,
            data,
            train_fraction,
            per_seed,
        } => benchmark(&ctx, seeds, data.as_deref(), train_fraction, per_seed),
        Command::Simulate {
            scenarios,
            calibrate_to,
            params,
            weights,
            noise,
            noise_sigma,
            trajectories,
        } => simulate(
            &ctx,
            SimulateArgs {
                scenarios,
                calibrate_to,
                params,
                weights,
                noise: noise.then_some(noise_sigma),
                trajectories,
            },
        ),
        Command::Augment {
            data,
            sequence_length,
            step_minutes,
            noise_sigma,
        } => {
            let cfg = AugmentConfig {
                sequence_length,
                step_minutes,
                noise_sigma,
                seed: ctx.opts.seed.unwrap_or(0),
                ..Default::default()
            };
            augment_cmd(&ctx, data.as_deref(), &cfg)
        }
        Command::Overlay {
            cgm,
            kind,
            dataset,
            patient,
            anchor,
            scenarios,
            params,
            before,
            after,
        } => {
            let series = match (cgm, dataset) {
                (Some(path), _) => parse_cgm_file(&path, kind)?,
                (None, Some(id)) => Workspace::open(&ctx.opts.workspace)?.load_cgm(&id)?,
                (None, None) => bail!("give --cgm or --dataset"),
            };
            let anchor = parse_anchor(&anchor)?;
            let scenarios: Vec<InterventionScenario> = read_json(&scenarios)?;
            let params = match params {
                Some(p) => read_json(&p)?,
                None => ResponseParams::default(),
            };
            let window = overlay_window(&series, patient.as_deref(), anchor, before, after)
                .map_err(|e| anyhow!("{}", e.message))?;
            let out = overlay_counterfactual(&window, anchor, &params, &scenarios)?;
            match ctx.opts.format {
                Format::Csv => ctx.emit(&trajectories_to_csv(&out)),
                Format::Json => ctx.emit_json(&json!({
                    "patient_id": window.patient_id,
                    "anchor": anchor,
                    "trajectories": out,
                })),
            }
        }
        Command::Serve {
            port,
            host,
            static_dir,
        } => serve_cmd(&ctx, host, port, static_dir),
        Command::Fixtures { dir, files, records } => {
            let mut cfg = SyntheticCorpusConfig {
                files,
                total_records: records,
                ..Default::default()
            };
            if let Some(seed) = ctx.opts.seed {
                cfg.seed = seed;
            }
            if files == 0 || records < files {
                bail!("need at least one record per file");
            }
            let paths = write_corpus(&dir, &generate_corpus(&cfg))?;
            let listing: String = paths.iter().map(|p| format!("{}\n", p.display())).collect();
            ctx.emit(&listing)
        }
    }
}

fn parse_anchor(s: &str) -> Result<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .or_else(|_| NaiveDateTime::parse_from_str(s, XML_TIMESTAMP_FORMAT))
        .with_context(|| format!("unrecognised anchor timestamp {s:?}"))
}

fn patient_from_path(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("patient")
        .to_string()
}

fn parse_cgm_file(path: &Path, kind: Kind) -> Result<Vec<CgmSeries>> {
    let bytes = read_input(path)?;
    let parsed = match kind {
        Kind::CgmXml => parse_cgm_xml(&bytes),
        Kind::CgmCsv => parse_cgm_csv(&bytes, &patient_from_path(path)),
        Kind::Tabular => bail!("overlay needs a CGM file"),
    }
    .with_context(|| format!("parsing {}", path.display()))?;
    Ok(parsed.series)
}

fn dataset_kind(kind: Kind) -> DatasetKind {
    match kind {
        Kind::CgmXml => DatasetKind::CgmXml,
        Kind::CgmCsv => DatasetKind::CgmCsv,
        Kind::Tabular => DatasetKind::Tabular,
    }
}

fn ingest(ctx: &Ctx, kind: Kind, skip_bad: bool, no_store: bool, paths: &[PathBuf]) -> Result<()> {
    let ws = if no_store {
        None
    } else {
        Some(Workspace::open(&ctx.opts.workspace)?)
    };
    let mut entries = Vec::new();
    let mut corpus: Vec<CgmSeries> = Vec::new();
    let mut tabular: Vec<(PathBuf, TabularDataset)> = Vec::new();
    let mut rejected = 0usize;
    let mut skipped = 0usize;
    for path in paths {
        let result = (|| -> Result<serde_json::Value> {
            let bytes = read_input(path)?;
            let (n, rej) = match kind {
                Kind::Tabular => {
                    let ds = load_tabular(&bytes).with_context(|| format!("parsing {}", path.display()))?;
                    let n = ds.n_rows();
                    tabular.push((path.clone(), ds));
                    (n, 0)
                }
                Kind::CgmXml | Kind::CgmCsv => {
                    let parsed = if kind == Kind::CgmXml {
                        parse_cgm_xml(&bytes)
                    } else {
                        parse_cgm_csv(&bytes, &patient_from_path(path))
                    }
                    .with_context(|| format!("parsing {}", path.display()))?;
                    let n = parsed.series.iter().map(CgmSeries::len).sum();
                    corpus.extend(parsed.series);
                    (n, parsed.rejected)
                }
            };
            let id = match &ws {
                Some(ws) => {
                    let name = path.file_name().and_then(|s| s.to_str());
                    Some(ws.add_dataset(dataset_kind(kind), &bytes, name)?.dataset_id)
                }
                None => None,
            };
            rejected += rej;
            Ok(json!({
                "dataset_id": id,
                "path": path.display().to_string(),
                "records": n,
                "rejected": rej,
            }))
        })();
        match result {
            Ok(entry) => {
                ctx.note(format_args!(
                    "{} {} ({} records, {} rejected)",
                    entry["dataset_id"].as_str().unwrap_or("-"),
                    path.display(),
                    entry["records"],
                    entry["rejected"]
                ));
                entries.push(entry);
            }
            Err(e) if skip_bad => {
                skipped += 1;
                ctx.note(format_args!("skipped {}: {e:#}", path.display()));
            }
            Err(e) => return Err(e),
        }
    }
    if entries.is_empty() {
        bail!("no file could be ingested");
    }

    if kind == Kind::Tabular {
        return match ctx.opts.format {
            Format::Json => ctx.emit_json(&json!({ "datasets": entries, "skipped": skipped })),
            Format::Csv => {
                let mut w = String::from("dataset_id,path,rows,features\n");
                for (entry, (_, ds)) in entries.iter().zip(&tabular) {
                    w.push_str(&format!(
                        "{},{},{},{}\n",
                        entry["dataset_id"].as_str().unwrap_or(""),
                        csv_field(entry["path"].as_str().unwrap_or("")),
                        ds.n_rows(),
                        ds.n_features()
                    ));
                }
                ctx.emit(&w)
            }
        };
    }

    let summary = summarize(&corpus)?;
    match ctx.opts.format {
        Format::Json => ctx.emit_json(&json!({
            "datasets": entries,
            "skipped": skipped,
            "rejected": rejected,
            "summary": summary,
        })),
        Format::Csv => ctx.emit(&format!(
            "files,records,rejected,mean_mg_dl,std_mg_dl,min_mg_dl,max_mg_dl,modal_interval_min\n{},{},{},{:.4},{:.4},{},{},{}\n",
            summary.file_count,
            summary.record_count,
            rejected,
            summary.mean_glucose,
            summary.std_glucose,
            summary.min_glucose,
            summary.max_glucose,
            summary.modal_interval_min.map(|m| m.to_string()).unwrap_or_default(),
        )),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn load_data(path: Option<&Path>) -> Result<TabularDataset> {
    match path {
        Some(p) => {
            let bytes = read_input(p)?;
            load_tabular(&bytes).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(load_tabular(BENCHMARK_CSV.as_bytes())?),
    }
}

fn report_rows(out: &mut String, task: &str, report: &EvalReport, per_seed: bool) {
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &report.rows {
        if r.seed.is_some() && !per_seed {
            continue;
        }
        out.push_str(&format!(
            "{task},{},{},{},{},{},{},{}\n",
            r.model,
            r.seed.map(|s| s.to_string()).unwrap_or_else(|| "mean".into()),
            cell(r.mae),
            cell(r.rmse),
            cell(r.r2),
            cell(r.accuracy),
            cell(r.auc)
        ));
    }
}

pub const BENCHMARK_CSV_HEADER: &str = "task,model,seed,mae,rmse,r2,accuracy,auc";

fn benchmark(ctx: &Ctx, n: u64, data: Option<&Path>, train_fraction: f64, per_seed: bool) -> Result<()> {
    if n == 0 {
        bail!("--seeds must be at least 1");
    }
    let ds = load_data(data)?;
    let base = ctx.opts.seed.unwrap_or(0);
    let seeds: Vec<u64> = (base..base + n).collect();
    let start = std::time::Instant::now();
    let regression = run_benchmark(
        &ds,
        &BenchmarkConfig {
            train_fraction,
            ..BenchmarkConfig::regression_only()
        },
        &seeds,
    )?;
    let classification = run_benchmark(
        &ds,
        &BenchmarkConfig {
            train_fraction,
            ..BenchmarkConfig::classification_only()
        },
        &seeds,
    )?;
    ctx.note(format_args!(
        "{} rows, {} seeds, {:.2} s",
        ds.n_rows(),
        n,
        start.elapsed().as_secs_f64()
    ));
    match ctx.opts.format {
        Format::Json => ctx.emit_json(&json!({
            "regression": regression,
            "classification": classification,
        })),
        Format::Csv => {
            let mut out = format!("{BENCHMARK_CSV_HEADER}\n");
            report_rows(&mut out, "regression", &regression, per_seed);
            report_rows(&mut out, "classification", &classification, per_seed);
            ctx.emit(&out)
        }
    }
}

struct SimulateArgs {
    scenarios: Option<PathBuf>,
    calibrate_to: Option<PathBuf>,
    params: Option<PathBuf>,
    weights: Option<PathBuf>,
    noise: Option<f64>,
    trajectories: Option<PathBuf>,
}

fn simulate(ctx: &Ctx, args: SimulateArgs) -> Result<()> {
    let mut scenarios: Vec<InterventionScenario> = match &args.scenarios {
        Some(p) => read_json(p)?,
        None => InterventionScenario::reference_set(),
    };
    if let Some(seed) = ctx.opts.seed {
        for s in &mut scenarios {
            s.seed = seed;
        }
    }
    let weights: UtilityWeights = match &args.weights {
        Some(p) => read_json(p)?,
        None => UtilityWeights::default(),
    };
    let (mut params, residual) = match (&args.calibrate_to, &args.params) {
        (Some(p), _) => {
            let targets: Vec<CalibrationTarget> = read_json(p)?;
            let cal = calibrate(&targets, &CalibrationOptions::default())?;
            ctx.note(format_args!(
                "calibrated: G0={:.2} carb_gain={:.4} t_p={:.2} w={:.2} beta={:.4} band=[{}, {}] residual={:.4}",
                cal.params.baseline_glucose,
                cal.params.carb_gain,
                cal.params.time_to_peak,
                cal.params.width,
                cal.params.activity_attenuation,
                cal.params.tir_low,
                cal.params.tir_high,
                cal.residual
            ));
            (cal.params, Some(cal.residual))
        }
        (None, Some(p)) => (read_json::<ResponseParams>(p)?, None),
        (None, None) => (ResponseParams::default(), None),
    };
    params.noise_sigma = args.noise.unwrap_or(0.0);

    let (trajectories, ranked) = evaluate_scenarios(&params, &scenarios, &weights)?;
    if let Some(path) = &args.trajectories {
        let text = match ctx.opts.format {
            Format::Csv => trajectories_to_csv(&trajectories),
            Format::Json => serde_json::to_string_pretty(&trajectories)? + "\n",
        };
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        ctx.note(format_args!("wrote {}", path.display()));
    }
    match ctx.opts.format {
        Format::Csv => ctx.emit(&outcomes_to_csv(&ranked)),
        Format::Json => ctx.emit_json(&json!({
            "params": params,
            "calibration_residual": residual,
            "outcomes": ranked,
            "ranking": ranked.iter().map(|o| o.label.as_str()).collect::<Vec<_>>(),
        })),
    }
}

fn augment_cmd(ctx: &Ctx, data: Option<&Path>, cfg: &AugmentConfig) -> Result<()> {
    let ds = load_data(data)?;
    let seqs = augment(&ds, cfg)?;
    ctx.note(format_args!("{} sequences x {} steps", seqs.len(), cfg.sequence_length));
    match ctx.opts.format {
        Format::Csv => ctx.emit(&export_augmented_csv(&seqs)),
        Format::Json => ctx.emit_json(&serde_json::to_value(&seqs)?),
    }
}

fn serve_cmd(ctx: &Ctx, host: std::net::IpAddr, port: u16, static_dir: Option<PathBuf>) -> Result<()> {
    let ws = Workspace::open(&ctx.opts.workspace)
        .with_context(|| format!("opening workspace {}", ctx.opts.workspace.display()))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = bind((host, port).into()).await?;
        // always printed: callers binding port 0 read the address from here
        eprintln!("listening on http://{}", listener.local_addr()?);
        serve(listener, app(AppState::new(ws), static_dir)).await?;
        Ok(())
    })
}
