use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use meshpyr::mesh::{icosphere, load_obj, save_obj, torus, write_obj};
use meshpyr::network::{
    evaluate, load_checkpoint, metrics_csv, predict_labels, save_checkpoint, train, Mode, NetError, NetInput, Network, NetworkConfig, Sample,
    TrainConfig, IGNORE_LABEL,
};
use meshpyr::ops::input_features;
use meshpyr::pyramid::{
    build_variant, cells_csv, crossings_csv, load_manifest, load_pyramid, mesh_sha256, sha256_hex, triplets_csv, Augmentation, AugmentConfig,
    Check, PyramidConfig, PyramidError,
};
use meshpyr::{Mesh, Pyramid};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::Fail;
use crate::{Artifact, BuildArgs, ExportArgs, FeaturesArgs, GenArgs, PredictArgs, Shape, TrainArgs, ValidateArgs};

type Res<T> = Result<T, Fail>;

pub fn thread_pool() -> Res<rayon::ThreadPool> {
    let threads = match std::env::var("MESHPYR_THREADS") {
        Ok(v) => v.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| Fail::usage(format!("MESHPYR_THREADS={v} is not a positive integer")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| Fail::io(e.to_string()))
}

fn emit(v: Value) {
    println!("{v}");
}

fn existing(p: &Path) -> Res<PathBuf> {
    let abs = std::path::absolute(p)?;
    if !abs.exists() {
        return Err(Fail::io(format!("{} does not exist", abs.display())));
    }
    Ok(abs)
}

fn load(dir: &Path) -> Res<Pyramid> {
    load_pyramid(dir).map_err(|e| Fail::io(format!("cannot load pyramid {}: {e}", dir.display())))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Res<()> {
    match out {
        Some(p) => {
            if let Some(parent) = p.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(p, text)?;
        }
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn file_sha(p: &Path) -> Res<String> {
    Ok(sha256_hex(&fs::read(p)?))
}

pub fn gen(a: GenArgs) -> Res<()> {
    let out = std::path::absolute(&a.out)?;
    let mesh: Mesh = match a.shape {
        Shape::Icosphere => icosphere(a.subdiv),
        Shape::Torus => {
            if a.major < 3 || a.minor < 3 || !(a.minor_radius > 0.0 && a.minor_radius < a.major_radius) {
                return Err(Fail::usage("torus needs at least 3x3 segments and 0 < minor radius < major radius"));
            }
            torus(a.major, a.minor, a.major_radius, a.minor_radius)
        }
    };
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    save_obj(&mesh, &out)?;
    eprintln!("wrote {} faces to {}", mesh.num_faces(), out.display());
    emit(json!({"event": "gen", "out": out, "faces": mesh.num_faces(), "vertices": mesh.num_vertices()}));
    Ok(())
}

fn variant_dirs(out: &Path, augment: bool, n: usize) -> Vec<PathBuf> {
    if augment {
        (0..n).map(|k| out.join(format!("variant_{k}"))).collect()
    } else {
        vec![out.to_path_buf()]
    }
}

fn variant_config(config: &PyramidConfig, k: usize) -> PyramidConfig {
    PyramidConfig { seed: config.seed.wrapping_add(k as u64), ..config.clone() }
}

fn variant_input_sha(mesh: &Mesh, config: &PyramidConfig, k: usize) -> String {
    match &config.augment {
        Some(a) if k > 0 => mesh_sha256(&Augmentation::sample(variant_config(config, k).seed, a).apply(mesh)),
        _ => mesh_sha256(mesh),
    }
}

/// Pyramids already in `dirs` when they were built from the same input and
/// config and still load with valid checksums.
fn cached(dirs: &[PathBuf], mesh: &Mesh, config: &PyramidConfig) -> Option<Vec<Pyramid>> {
    dirs.iter()
        .enumerate()
        .map(|(k, d)| {
            let m = load_manifest(d).ok()?;
            if m.config != variant_config(config, k) || m.input_sha256 != variant_input_sha(mesh, config, k) {
                return None;
            }
            load_pyramid(d).ok()
        })
        .collect()
}

fn checks_json(checks: &[Check]) -> Value {
    Value::Object(checks.iter().map(|c| (c.name.to_string(), Value::Bool(c.passed))).collect())
}

fn variant_summary(dir: &Path, p: &Pyramid, checks: &[Check]) -> Res<Value> {
    let faces: Vec<usize> = p.levels.iter().rev().map(|m| m.num_faces()).collect();
    let digest = sha256_hex(serde_json::to_string(checks).expect("checks serialize").as_bytes());
    Ok(json!({
        "dir": dir,
        "seed": p.config.seed,
        "faces": faces,
        "manifest_sha256": file_sha(&dir.join("manifest.json"))?,
        "sequence_sha256": p.collapse_digest(),
        "invariant_digest": digest,
        "invariants": checks_json(checks),
    }))
}

fn failed_names(checks: &[Vec<Check>]) -> Vec<String> {
    let mut names: Vec<String> = checks.iter().flatten().filter(|c| !c.passed).map(|c| format!("{} ({})", c.name, c.detail)).collect();
    names.dedup();
    names
}

/// Replaces `out` by `tmp`, refusing to delete anything that does not look
/// like an earlier build.
fn replace_dir(tmp: &Path, out: &Path) -> Res<()> {
    if out.exists() {
        let ours = out.is_dir()
            && (out.join("manifest.json").exists() || out.join("variant_0").join("manifest.json").exists() || fs::read_dir(out)?.next().is_none());
        if !ours {
            return Err(Fail::io(format!("refusing to replace {}: not a pyramid directory", out.display())));
        }
        fs::remove_dir_all(out)?;
    }
    fs::rename(tmp, out)?;
    Ok(())
}

pub fn build(a: BuildArgs) -> Res<()> {
    let input = existing(&a.input)?;
    let out = std::path::absolute(&a.out)?;
    if let Some(w) = a.levels.windows(2).find(|w| w[0] <= w[1]) {
        return Err(Fail::usage(format!("--levels must be strictly descending, got {} then {}", w[0], w[1])));
    }
    if a.augment && a.variants == 0 {
        return Err(Fail::usage("--variants must be at least 1"));
    }
    let mut config = PyramidConfig::new(a.levels.clone());
    config.w = a.weight;
    config.seed = a.seed;
    config.variants = if a.augment { a.variants } else { 1 };
    config.augment = a.augment.then(AugmentConfig::default);
    config.validate()?;
    let mesh: Mesh = load_obj(&input)?;
    let dirs = variant_dirs(&out, a.augment, config.variants);

    let start = Instant::now();
    if !a.force {
        if let Some(pyramids) = cached(&dirs, &mesh, &config) {
            eprintln!("{} is up to date", out.display());
            let checks: Vec<Vec<Check>> = pyramids.par_iter().map(|p| p.invariant_checks()).collect();
            let variants = dirs.iter().zip(&pyramids).zip(&checks).map(|((d, p), c)| variant_summary(d, p, c)).collect::<Res<Vec<_>>>()?;
            emit(json!({"event": "build", "out": out, "cached": true, "build_seconds": 0.0, "variants": variants}));
            let failed = failed_names(&checks);
            return if failed.is_empty() { Ok(()) } else { Err(Fail::validation(format!("invariants failed: {}", failed.join(", ")))) };
        }
    }

    eprintln!("building {} pyramid(s) from {}", dirs.len(), input.display());
    let pyramids = (0..dirs.len()).into_par_iter().map(|k| build_variant(&mesh, &config, k)).collect::<Result<Vec<_>, PyramidError>>()?;
    let seconds = start.elapsed().as_secs_f64();
    let checks: Vec<Vec<Check>> = pyramids.par_iter().map(|p| p.invariant_checks()).collect();
    let failed = failed_names(&checks);
    if !failed.is_empty() {
        emit(json!({"event": "build", "out": out, "cached": false, "build_seconds": seconds, "invariants": checks.iter().map(|c| checks_json(c)).collect::<Vec<_>>()}));
        return Err(Fail::validation(format!("invariants failed, nothing written: {}", failed.join(", "))));
    }

    let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "pyramid".into());
    let parent = out.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&parent)?;
    let tmp = parent.join(format!(".{name}.partial-{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    for (d, p) in variant_dirs(&tmp, a.augment, dirs.len()).iter().zip(&pyramids) {
        meshpyr::pyramid::save_pyramid(p, d)?;
    }
    replace_dir(&tmp, &out)?;
    let variants = dirs.iter().zip(&pyramids).zip(&checks).map(|((d, p), c)| variant_summary(d, p, c)).collect::<Res<Vec<_>>>()?;
    eprintln!("wrote {} in {seconds:.2} s", out.display());
    emit(json!({"event": "build", "out": out, "cached": false, "build_seconds": seconds, "variants": variants}));
    Ok(())
}

pub fn validate(a: ValidateArgs) -> Res<()> {
    let dir = existing(&a.pyramid)?;
    let p = load(&dir)?;
    let checks = p.invariant_checks();
    let passed = checks.iter().all(|c| c.passed);
    emit(json!({"event": "validate", "pyramid": dir, "passed": passed, "checks": checks}));
    if passed {
        eprintln!("all {} checks passed", checks.len());
        Ok(())
    } else {
        Err(Fail::validation(format!("failed checks: {}", failed_names(&[checks]).join(", "))))
    }
}

pub fn export(a: ExportArgs) -> Res<()> {
    let dir = existing(&a.pyramid)?;
    let p = load(&dir)?;
    let n = a.level;
    let need_map = !matches!(a.what, Artifact::Mesh);
    let limit = if need_map { p.maps.len() } else { p.depth() };
    if n >= limit {
        return Err(Fail::usage(format!("--level {n} out of range, pyramid has {} levels", p.depth())));
    }
    let text = match a.what {
        Artifact::Mesh => write_obj(&p.levels[n]),
        Artifact::Matrix => p.matrices[n].to_matrix_market(),
        Artifact::Triplets => triplets_csv(&p.maps[n].triplets)?,
        Artifact::Crossings => crossings_csv(&p.maps[n].crossings)?,
        Artifact::Cells => cells_csv(&p.maps[n].cells)?,
    };
    write_or_print(a.out.as_deref(), &text)
}

pub fn features(a: FeaturesArgs) -> Res<()> {
    let dir = existing(&a.pyramid)?;
    let p = load(&dir)?;
    let level = a.level.unwrap_or(p.depth() - 1);
    if level >= p.depth() {
        return Err(Fail::usage(format!("--level {level} out of range, pyramid has {} levels", p.depth())));
    }
    let f = input_features(&p.levels[level], level).map_err(|e| Fail::validation(e.to_string()))?;
    write_or_print(a.out.as_deref(), &f.to_csv())
}

/// Settings of `train-demo`; every field is optional in the JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub c: usize,
    /// Pyramid levels used by the network; all of them when absent.
    pub levels: Option<usize>,
    /// Largest label + 1 when absent.
    pub num_classes: Option<usize>,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub recalibrate: bool,
}

impl Default for DemoConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { c: 8, levels: None, num_classes: None, lr: t.lr, momentum: t.momentum, weight_decay: t.weight_decay, epochs: t.epochs, seed: t.seed, recalibrate: t.recalibrate }
    }
}

fn read_labels(path: &Path, faces: usize) -> Res<Vec<usize>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Fail::io(format!("{}: {e}", path.display())))?;
    let mut labels = vec![None; faces];
    for row in r.deserialize::<(usize, i64)>() {
        let (f, l) = row.map_err(|e| Fail::io(format!("{}: {e}", path.display())))?;
        if f >= faces {
            return Err(Fail::validation(format!("face {f} out of range, finest level has {faces} faces")));
        }
        if labels[f].is_some() {
            return Err(Fail::validation(format!("face {f} labelled twice")));
        }
        labels[f] = Some(match l {
            -1 => IGNORE_LABEL,
            l if l >= 0 => l as usize,
            l => return Err(Fail::validation(format!("face {f} has label {l}"))),
        });
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(f, l)| l.ok_or_else(|| Fail::validation(format!("labels miss face {f} of the finest level"))))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct RunRecord {
    inputs_sha256: String,
    config: DemoConfig,
    checkpoint_sha256: String,
    metrics_sha256: String,
    final_loss: f64,
    final_accuracy: f64,
    eval_accuracy: f64,
}

fn run_summary(out: &Path, r: &RunRecord, cached: bool) -> Value {
    json!({
        "event": "train",
        "out": out,
        "cached": cached,
        "epochs": r.config.epochs,
        "final_loss": r.final_loss,
        "final_accuracy": r.final_accuracy,
        "eval_accuracy": r.eval_accuracy,
        "checkpoint_sha256": r.checkpoint_sha256,
        "metrics_sha256": r.metrics_sha256,
    })
}

fn cached_run(out: &Path, inputs: &str) -> Option<RunRecord> {
    let r: RunRecord = serde_json::from_str(&fs::read_to_string(out.join("run.json")).ok()?).ok()?;
    let same = r.inputs_sha256 == inputs
        && file_sha(&out.join("checkpoint.bin")).ok()? == r.checkpoint_sha256
        && file_sha(&out.join("metrics.csv")).ok()? == r.metrics_sha256;
    same.then_some(r)
}

pub fn train_demo(a: TrainArgs) -> Res<()> {
    let dir = existing(&a.pyramid_dir)?;
    let labels_path = existing(&a.labels)?;
    let config_path = a.config.as_deref().map(existing).transpose()?;
    let out = std::path::absolute(&a.out)?;

    let mut cfg: DemoConfig = match &config_path {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).map_err(|e| Fail::usage(format!("{}: {e}", p.display())))?,
        None => DemoConfig::default(),
    };
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.lr = a.lr.unwrap_or(cfg.lr);
    cfg.seed = a.seed.unwrap_or(cfg.seed);

    let p = load(&dir)?;
    let labels = read_labels(&labels_path, p.finest().num_faces())?;
    let top = labels.iter().filter(|&&l| l != IGNORE_LABEL).max().copied().ok_or_else(|| Fail::validation("no labelled faces"))?;
    let classes = *cfg.num_classes.get_or_insert(top + 1);
    let levels = *cfg.levels.get_or_insert(p.depth());
    if top >= classes {
        return Err(NetError::LabelOutOfRange { label: top, classes }.into());
    }
    if levels > p.depth() {
        return Err(NetError::DepthMismatch { needed: levels, available: p.depth() }.into());
    }
    let tc = TrainConfig {
        lr: cfg.lr,
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
        epochs: cfg.epochs,
        batch_size: 1,
        seed: cfg.seed,
        recalibrate: cfg.recalibrate,
    };
    tc.validate().map_err(|e| Fail::usage(e.to_string()))?;
    let net_cfg = NetworkConfig::new(cfg.c, levels, classes);
    net_cfg.validate().map_err(|e| Fail::usage(e.to_string()))?;

    let inputs = sha256_hex(
        format!(
            "{}\n{}\n{}\n",
            file_sha(&dir.join("manifest.json"))?,
            file_sha(&labels_path)?,
            serde_json::to_string(&cfg).expect("config serializes")
        )
        .as_bytes(),
    );
    if !a.force {
        if let Some(r) = cached_run(&out, &inputs) {
            eprintln!("{} is up to date", out.display());
            emit(run_summary(&out, &r, true));
            return Ok(());
        }
    }

    let input = NetInput::from_pyramid(&p, levels)?;
    let (net, params) = Network::init::<f64>(&net_cfg, cfg.seed)?;
    eprintln!("training {} parameters for {} epochs on {} faces", params.num_parameters(), cfg.epochs, labels.len());
    let samples = [Sample { input, labels }];
    let outcome = train(&net, params, &samples, &[], &tc)?;
    let (_, eval_accuracy) = evaluate(&net, &outcome.params, &samples)?;

    fs::create_dir_all(&out)?;
    save_checkpoint(&outcome.params, out.join("checkpoint.bin"))?;
    fs::write(out.join("metrics.csv"), metrics_csv(&outcome.metrics))?;
    for m in &outcome.metrics {
        emit(json!({"event": "epoch", "epoch": m.epoch, "split": m.split, "loss": m.loss, "accuracy": m.accuracy}));
    }
    let last = outcome.metrics.last();
    let record = RunRecord {
        inputs_sha256: inputs,
        config: cfg,
        checkpoint_sha256: file_sha(&out.join("checkpoint.bin"))?,
        metrics_sha256: file_sha(&out.join("metrics.csv"))?,
        final_loss: last.map_or(f64::NAN, |m| m.loss),
        final_accuracy: last.map_or(f64::NAN, |m| m.accuracy),
        eval_accuracy,
    };
    fs::write(out.join("run.json"), serde_json::to_string_pretty(&record).expect("record serializes") + "\n")?;
    eprintln!("wrote {}", out.display());
    emit(run_summary(&out, &record, false));
    Ok(())
}

pub fn predict(a: PredictArgs) -> Res<()> {
    let dir = existing(&a.pyramid)?;
    let ckpt = existing(&a.checkpoint)?;
    let out = a.out.as_deref().map(std::path::absolute).transpose()?;
    let p = load(&dir)?;
    let params = load_checkpoint::<f64>(&ckpt)?;
    let net = Network::for_params(&params)?;
    let input = NetInput::from_pyramid(&p, params.config.levels)?;
    let scores = net.forward(&params, &input, Mode::Eval)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["face_id", "label"]).map_err(|e| Fail::io(e.to_string()))?;
    for (f, l) in predict_labels(&scores).into_iter().enumerate() {
        w.write_record([f.to_string(), l.to_string()]).map_err(|e| Fail::io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Fail::io(e.to_string()))?;
    write_or_print(out.as_deref(), &String::from_utf8(bytes).expect("ascii csv"))
}
