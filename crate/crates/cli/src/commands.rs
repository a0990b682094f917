use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use imt_core::baseline::{adjusted_sigma, Denoiser, ExternalBaseline, WaveletShrink};
use imt_core::io::{load_gmap, load_stack, save_stack, write_atomic};
use imt_core::metrics::{CaseMetrics, MetricsReport};
use imt_core::noise::{make_gmap, make_training_pair, relative_snr_db};
use imt_core::phantom::phantom;
use imt_core::stats::{bland_altman, icc_2_1, icc_label, pair_by_case, paired_t_test, parse_rater_csv, RaterScores, CRITERIA};
use imt_core::{ComplexImageStack, GmapModel, ImtError, NoiseSpec, Result};
use imt_net::features::FeatureExtractor;
use imt_net::infer::denoise;
use imt_net::train::{train, FileSink};
use imt_net::ParameterSet;
use serde_json::{json, Map, Value};

use crate::config::RunConfig;
use crate::{BaselineArgs, Command, DenoiseArgs, EvalArgs, PhantomArgs, ReportArgs, SynthArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "run_config.json";

pub fn run(cmd: &Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Phantom(a) => cmd_phantom(a, out),
        Command::Synth(a) => cmd_synth(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Denoise(a) => cmd_denoise(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Report(a) => cmd_report(a, out),
        Command::Baseline(a) => cmd_baseline(a, out),
    }
}

fn say(out: &mut dyn Write, text: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| ImtError::io("<stdout>", e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| ImtError::io(dir, e))
}

pub fn phantom_name(index: usize) -> String {
    format!("phantom_{index:04}.imts")
}

pub fn cmd_phantom(a: &PhantomArgs, out: &mut dyn Write) -> Result<()> {
    if a.n == 0 {
        return Err(ImtError::invalid("--n must be positive"));
    }
    let stacks = (0..a.n)
        .map(|i| phantom(a.slices, a.height, a.width, a.seed, i as u64))
        .collect::<Result<Vec<_>>>()?;
    create_dir(&a.out_dir)?;
    for (i, s) in stacks.iter().enumerate() {
        save_stack(s, a.out_dir.join(phantom_name(i)))?;
    }
    say(out, format_args!("wrote {} phantoms to {}", a.n, a.out_dir.display()))
}

/// Parses `uniform` or `radial:<alpha>`.
pub fn parse_gmap_model(text: &str) -> Result<GmapModel> {
    match text.split_once(':') {
        None if text == "uniform" => Ok(GmapModel::Uniform),
        Some(("radial", alpha)) => alpha
            .parse()
            .map(|alpha| GmapModel::RadialRamp { alpha })
            .map_err(|_| ImtError::invalid(format!("bad radial alpha `{alpha}`"))),
        _ => Err(ImtError::invalid(format!(
            "unknown g-factor model `{text}` (expected uniform or radial:<alpha>)"
        ))),
    }
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let clean = load_stack(&a.clean)?;
    let (_, h, w) = clean.dims();
    let gmap = match (&a.gmap, &a.gmap_model) {
        (Some(path), _) => {
            let g = load_gmap(path)?;
            if (g.height(), g.width()) != (h, w) {
                return Err(ImtError::invalid(format!(
                    "g-factor map is {}x{}, stack is {h}x{w}",
                    g.height(),
                    g.width()
                )));
            }
            g
        }
        (None, Some(model)) => make_gmap(&parse_gmap_model(model)?, h, w)?,
        (None, None) => make_gmap(&GmapModel::Uniform, h, w)?,
    };
    let snr = relative_snr_db(a.sigma)?;
    let (noisy, _) = make_training_pair(&clean, &NoiseSpec::new(a.sigma, a.seed), &gmap)?;
    save_stack(&noisy, &a.out)?;
    say(out, format_args!("relative_snr_db={snr:.2}"))
}

/// Clean `.imts` stacks of a directory in file-name order.
pub fn load_dir(dir: &Path) -> Result<Vec<ComplexImageStack>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| ImtError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "imts"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(ImtError::invalid(format!("no .imts files in {}", dir.display())));
    }
    paths.iter().map(load_stack).collect()
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let dir = a
        .data
        .clone()
        .or_else(|| cfg.data.dir.clone())
        .ok_or_else(|| ImtError::invalid("no data directory: pass --data or set data.dir"))?;
    let stacks = load_dir(&dir)?;
    let features = match &cfg.data.feature_weights {
        Some(path) => FeatureExtractor::load(path)?,
        None => FeatureExtractor::fixed_random(cfg.data.feature_seed),
    };
    let init = ParameterSet::init(&cfg.model, cfg.data.init_seed)?;
    create_dir(&a.out)?;
    let resolved = serde_json::to_vec_pretty(&cfg).map_err(|e| ImtError::invalid(e.to_string()))?;
    write_atomic(&a.out.join(CONFIG_FILE), &resolved)?;
    log::info!(
        "training on {} stacks, {} parameters",
        stacks.len(),
        init.parameter_count()
    );
    let mut sink = FileSink::new(a.out.join(LOG_FILE), a.out.join(CHECKPOINT_FILE));
    let report = train(&stacks, init, &cfg.train, &cfg.loss, &cfg.noise, &features, &mut sink)?;
    say(
        out,
        format_args!(
            "steps={} best_val_loss={:.6} identity_val_loss={:.6}",
            report.steps, report.best_val_loss, report.identity_val_loss
        ),
    )
}

pub fn cmd_denoise(a: &DenoiseArgs, out: &mut dyn Write) -> Result<()> {
    let params = ParameterSet::load(&a.model)?;
    let stack = load_stack(&a.input)?;
    let start = Instant::now();
    let y = denoise(&params, &stack)?;
    let ms = start.elapsed().as_millis();
    save_stack(&y, &a.out)?;
    say(out, format_args!("wall_ms={ms}"))
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let reference = load_stack(&a.reference)?;
    let test = load_stack(&a.test)?;
    if !test.same_shape(&reference) {
        return Err(ImtError::invalid(format!(
            "shape mismatch: test {:?} vs reference {:?}",
            test.dims(),
            reference.dims()
        )));
    }
    let id = a.test.file_stem().map_or_else(|| "test".into(), |s| s.to_string_lossy().into_owned());
    let report = MetricsReport {
        cases: vec![CaseMetrics::compute(id, &test, &reference)?],
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| ImtError::invalid(e.to_string()))?;
    write_atomic(&a.json, text.as_bytes())?;
    say(out, text)
}

fn read_scores(path: &Path) -> Result<Vec<RaterScores>> {
    let file = std::fs::File::open(path).map_err(|e| ImtError::io(path, e))?;
    parse_rater_csv(file).map_err(|e| ImtError::invalid(format!("{}: {e}", path.display())))
}

fn finite(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

/// Paired statistics per criterion. With no statistic flag all are reported.
pub fn report_json(a: &[RaterScores], b: &[RaterScores], ttest: bool, icc: bool, ba: bool) -> Result<Value> {
    let all = !(ttest || icc || ba);
    let mut criteria = Map::new();
    for name in CRITERIA {
        let (_, xs, ys) = pair_by_case(a, b, name)?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let mut entry = Map::new();
        entry.insert("mean_a".into(), json!(mean(&xs)));
        entry.insert("mean_b".into(), json!(mean(&ys)));
        if ttest || all {
            let t = paired_t_test(&xs, &ys)?;
            entry.insert("ttest".into(), json!({"t": finite(t.t), "p": t.p, "dof": t.dof}));
        }
        if icc || all {
            let table: Vec<Vec<f64>> = xs.iter().zip(&ys).map(|(x, y)| vec![*x, *y]).collect();
            let value = match icc_2_1(&table) {
                Ok(v) => json!({"value": v, "label": icc_label(v)}),
                Err(ImtError::Degenerate(_)) => Value::Null,
                Err(e) => return Err(e),
            };
            entry.insert("icc".into(), value);
        }
        if ba || all {
            let r = bland_altman(&xs, &ys)?;
            entry.insert(
                "bland_altman".into(),
                json!({"mean_diff": r.mean_diff, "loa_low": r.loa_low, "loa_high": r.loa_high}),
            );
        }
        criteria.insert(name.into(), Value::Object(entry));
    }
    Ok(json!({"cases": a.len(), "criteria": criteria}))
}

/// `case_id,criterion,mean,difference` rows for external plotting.
pub fn bland_altman_points(a: &[RaterScores], b: &[RaterScores]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| ImtError::invalid(e.to_string());
    w.write_record(["case_id", "criterion", "mean", "difference"]).map_err(csv_err)?;
    for name in CRITERIA {
        let (ids, xs, ys) = pair_by_case(a, b, name)?;
        for (id, (m, d)) in ids.iter().zip(bland_altman(&xs, &ys)?.points) {
            w.write_record([id.as_str(), name, &m.to_string(), &d.to_string()]).map_err(csv_err)?;
        }
    }
    w.into_inner().map_err(|e| ImtError::invalid(e.to_string()))
}

pub fn cmd_report(a: &ReportArgs, out: &mut dyn Write) -> Result<()> {
    let first = read_scores(&a.scores[0])?;
    let second = read_scores(&a.scores[1])?;
    let value = report_json(&first, &second, a.ttest, a.icc, a.bland_altman.is_some())?;
    if let Some(path) = &a.bland_altman {
        write_atomic(path, &bland_altman_points(&first, &second)?)?;
    }
    let text = serde_json::to_string_pretty(&value).map_err(|e| ImtError::invalid(e.to_string()))?;
    match &a.json {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => say(out, text),
    }
}

pub fn cmd_baseline(a: &BaselineArgs, out: &mut dyn Write) -> Result<()> {
    let stack = load_stack(&a.input)?;
    let sigma = match a.sigma {
        Some(s) if s >= 0.0 && s.is_finite() => s,
        Some(s) => return Err(ImtError::invalid(format!("sigma {s} must be >= 0"))),
        None => adjusted_sigma(&stack)?.adjusted,
    };
    let y = match &a.external {
        Some(program) => ExternalBaseline {
            program: program.clone(),
            args: Vec::new(),
            timeout: Duration::from_secs(a.timeout_secs),
        }
        .denoise(&stack, sigma)?,
        None => WaveletShrink.denoise(&stack, sigma)?,
    };
    save_stack(&y, &a.out)?;
    say(out, format_args!("sigma={sigma:.6}"))
}
