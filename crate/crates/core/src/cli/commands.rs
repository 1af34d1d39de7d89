use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::FileConfig;
use super::*;
use crate::annotation::{build_dataset, read_records, SampleInfo};
use crate::dataset::{
    assign_subjects, load_er_manifest, parse_fer_csv, split_fer, write_er_manifest, write_fer_csv, LabeledImage,
    Split, SplitFractions, FER_CLASSES,
};
use crate::evaluation::{evaluate_network, evaluate_svm, metrics_table, EvalReport};
use crate::models::{
    build_small_cnn_with, build_vgg_variant_with, transfer_init, Checkpoint, HogParams, HogSvmModel, ModelSpec,
    Network,
};
use crate::preprocess::{
    apply_pixel_stats, detect_largest_face, fit_pixel_stats, load_image, normalize_image, standardize_face,
    ContrastBlobDetector, FaceBox, PixelStats,
};
use crate::service::{read_pool, serve, AppState, ServiceConfig};
use crate::training::{accuracy_on, train, ModelRole, TrainConfig, TrainData};
use crate::{Error, Result};

pub(super) fn dispatch(ctx: &Ctx, cmd: Command) -> Result<()> {
    match cmd {
        Command::PrepareFer(a) => prepare_fer(ctx, a),
        Command::PrepareEr(a) => prepare_er(ctx, a),
        Command::AnnotateServe(a) => annotate_serve(ctx, a),
        Command::AnnotateBuild(a) => annotate_build(ctx, a),
        Command::TrainFer(a) => train_fer(ctx, a),
        Command::TrainEr(a) => train_er(ctx, a),
        Command::TrainSvm(a) => train_svm(ctx, a),
        Command::Evaluate(a) => evaluate(ctx, a),
        Command::Report(a) => report(ctx, a),
    }
}

fn print_config(command: &str, value: &impl Serialize) -> Result<()> {
    println!("effective config ({command}):");
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn dir_of(path: &Path) -> PathBuf {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

fn prepare_fer(ctx: &Ctx, a: PrepareFerArgs) -> Result<()> {
    let csv = ctx.path(&a.csv);
    let out = ctx.path(&a.out);
    print_config("prepare-fer", &json!({ "csv": csv, "out": out, "seed": a.seed }))?;
    let records = parse_fer_csv(open(&csv)?)?;
    let rows = records.len();
    let (splits, rep) = split_fer(records, a.seed);
    for (name, recs) in [
        ("train", &splits.train),
        ("valid", &splits.valid),
        ("public_test", &splits.public_test),
        ("private_test", &splits.private_test),
    ] {
        let path = out.join(format!("{name}.csv"));
        write_fer_csv(recs, create(&path)?)?;
    }
    write_json(
        &out.join("split_report.json"),
        &json!({
            "rows": rows,
            "removed_black": rep.removed_black,
            "training_after_removal": rep.training_after_removal,
            "train": splits.train.len(),
            "valid": splits.valid.len(),
            "public_test": splits.public_test.len(),
            "private_test": splits.private_test.len(),
            "warnings": rep.warnings,
        }),
    )?;
    println!(
        "train {} / valid {} / public_test {} / private_test {} ({} black training images removed)",
        splits.train.len(),
        splits.valid.len(),
        splits.public_test.len(),
        splits.private_test.len(),
        rep.removed_black
    );
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Frame {
    sample_id: String,
    image_path: String,
    subject_id: String,
    /// Precomputed detection; the bundled detector runs when absent.
    #[serde(default)]
    face_box: Option<FaceBox>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
            row: i,
            reason: format!("{}: {e}", path.display()),
        })?);
    }
    Ok(out)
}

fn prepare_er(ctx: &Ctx, a: PrepareErArgs) -> Result<()> {
    let frames_path = ctx.path(&a.frames);
    let out = ctx.path(&a.out);
    let detector = ContrastBlobDetector::default();
    print_config(
        "prepare-er",
        &json!({ "frames": frames_path, "out": out, "detector": format!("{detector:?}") }),
    )?;
    let frames: Vec<Frame> = read_jsonl(&frames_path)?;
    let base = dir_of(&frames_path);
    let faces = out.join("faces");
    std::fs::create_dir_all(&faces).map_err(|e| Error::io(&faces, e))?;

    let mut pool = Vec::with_capacity(frames.len());
    let mut skipped = Vec::new();
    for f in frames {
        if f.sample_id.is_empty() || f.sample_id.contains(['/', '\\']) || f.sample_id.starts_with('.') {
            return Err(Error::Validation(format!("sample id {:?} cannot name a file", f.sample_id)));
        }
        let img = load_image(&base.join(&f.image_path))?;
        let face = match f.face_box {
            Some(b) => Some(b),
            None => detect_largest_face(&detector, &img),
        };
        let Some(face) = face else {
            log::warn!("no face found in {}", f.image_path);
            skipped.push(f.sample_id);
            continue;
        };
        let grid = standardize_face(&img, &face)?;
        let rel = format!("faces/{}.png", f.sample_id);
        let png = out.join(&rel);
        image::GrayImage::from_raw(48, 48, grid.pixels().to_vec())
            .expect("48x48 grid")
            .save(&png)
            .map_err(|e| Error::Dataset(format!("cannot write {}: {e}", png.display())))?;
        pool.push(SampleInfo {
            sample_id: f.sample_id,
            image_path: rel,
            subject_id: f.subject_id,
        });
    }
    let mut w = create(&out.join("pool.jsonl"))?;
    for s in &pool {
        serde_json::to_writer(&mut w, s)?;
        writeln!(w).map_err(|e| Error::io("pool.jsonl", e))?;
    }
    w.flush().map_err(|e| Error::io("pool.jsonl", e))?;
    write_json(
        &out.join("prepare_summary.json"),
        &json!({ "faces": pool.len(), "skipped": skipped }),
    )?;
    println!("{} faces standardized, {} frames without a face", pool.len(), skipped.len());
    Ok(())
}

fn annotate_serve(ctx: &Ctx, a: ServeArgs) -> Result<()> {
    let path = ctx.path(&a.config);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut cfg: ServiceConfig =
        toml::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    if let Some(b) = a.bind {
        cfg.bind = b;
    }
    let shown = json!({
        "session": cfg.session,
        "annotators": cfg.annotators.iter().map(|a| &a.id).collect::<Vec<_>>(),
        "pool": cfg.pool,
        "log": cfg.log,
        "bind": cfg.bind,
    });
    print_config("annotate-serve", &shown)?;
    let state = AppState::from_config(&cfg, &dir_of(&path))?;
    serve(state, &cfg.bind)
}

fn annotate_build(ctx: &Ctx, a: BuildArgs) -> Result<()> {
    let records_path = ctx.path(&a.records);
    let pool_path = ctx.path(&a.pool);
    let out = ctx.path(&a.out);
    print_config(
        "annotate-build",
        &json!({ "records": records_path, "pool": pool_path, "out": out, "seed": a.seed }),
    )?;
    let records = read_records(open(&records_path)?)?;
    let pool: BTreeMap<String, SampleInfo> = read_pool(&pool_path)?
        .into_iter()
        .map(|s| (s.sample_id.clone(), s))
        .collect();
    let (mut entries, stats) = build_dataset(&records, &pool)?;

    let mut per_subject: BTreeMap<String, usize> = BTreeMap::new();
    for e in &entries {
        *per_subject.entry(e.subject_id.clone().unwrap_or_default()).or_default() += 1;
    }
    let assignment: HashMap<String, Split> = assign_subjects(&per_subject, SplitFractions::default(), a.seed)
        .into_iter()
        .collect();

    let pool_dir = absolute(&dir_of(&pool_path))?;
    let same_dir = pool_dir == absolute(&dir_of(&out))?;
    for e in &mut entries {
        e.split = assignment.get(e.subject_id.as_deref().unwrap_or_default()).copied();
        if !same_dir && Path::new(&e.image_path).is_relative() {
            e.image_path = pool_dir.join(&e.image_path).to_string_lossy().into_owned();
        }
    }
    let mut w = create(&out)?;
    write_er_manifest(&entries, &mut w)?;
    write_json(&out.with_extension("stats.json"), &stats)?;

    let mut by_split: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &entries {
        *by_split.entry(e.split.map_or("none", Split::as_str)).or_default() += 1;
    }
    println!(
        "{} samples: {} engaged, {} disengaged, {} excluded {:?}",
        stats.samples,
        stats.engaged,
        stats.disengaged,
        stats.excluded_total(),
        stats.excluded
    );
    println!("splits {by_split:?}");
    if let Some(k) = stats.fleiss_kappa {
        println!("Fleiss' kappa {k:.4} over {} raters per sample", stats.kappa_raters.unwrap_or(0));
    }
    Ok(())
}

/// Images after image-level normalization; constant images are dropped.
struct Normalized {
    inputs: Vec<Array2<f64>>,
    labels: Vec<u8>,
}

fn normalize_set(images: &[LabeledImage], what: &str) -> Result<Normalized> {
    let mut n = Normalized {
        inputs: Vec::with_capacity(images.len()),
        labels: Vec::with_capacity(images.len()),
    };
    let mut dropped = 0;
    for im in images {
        match normalize_image(&im.pixels) {
            Ok(x) => {
                n.inputs.push(x);
                n.labels.push(im.label);
            }
            Err(Error::Normalization(_)) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    if dropped > 0 {
        log::warn!("{what}: dropped {dropped} constant images");
    }
    Ok(n)
}

fn standardized(n: &Normalized, stats: &PixelStats) -> Vec<Array2<f64>> {
    n.inputs.iter().map(|x| apply_pixel_stats(x, stats)).collect()
}

fn train_data(n: &Normalized, stats: &PixelStats) -> Result<TrainData> {
    TrainData::new(
        standardized(n, stats).into_iter().map(|x| x.mapv(|v| v as f32)).collect(),
        n.labels.iter().map(|&y| y as usize).collect(),
    )
}

fn load_fer_split(dir: &Path, name: &str) -> Result<Vec<LabeledImage>> {
    parse_fer_csv(open(&dir.join(format!("{name}.csv")))?)
}

#[derive(Default)]
struct ErData {
    train: Vec<LabeledImage>,
    valid: Vec<LabeledImage>,
    test: Vec<LabeledImage>,
}

fn load_er(path: &Path) -> Result<ErData> {
    let mut d = ErData::default();
    for im in load_er_manifest(path)? {
        match im.split {
            Some(Split::Train) => d.train.push(im),
            Some(Split::Valid) => d.valid.push(im),
            Some(Split::Test) => d.test.push(im),
            _ => {
                return Err(Error::Validation(format!(
                    "{}: every entry needs a train/valid/test split (annotate-build assigns them)",
                    path.display()
                )))
            }
        }
    }
    Ok(d)
}

fn build_spec(arch: Architecture, classes: usize, file: &FileConfig, o: &ModelOverrides) -> Result<ModelSpec> {
    match arch {
        Architecture::Vgg => build_vgg_variant_with(classes, &o.vgg(file.vgg.clone().unwrap_or_default())?),
        Architecture::SmallCnn => build_small_cnn_with(classes, &o.small_cnn(file.small_cnn.clone().unwrap_or_default())?),
    }
}

fn role_for(arch: Architecture) -> ModelRole {
    match arch {
        Architecture::Vgg => ModelRole::Vggnet,
        Architecture::SmallCnn => ModelRole::Cnn,
    }
}

struct TrainJob<'a> {
    command: &'a str,
    net: Network<f32>,
    cfg: TrainConfig,
    train: Normalized,
    valid: Normalized,
    out: PathBuf,
    inputs: serde_json::Value,
}

fn run_training(job: TrainJob<'_>) -> Result<()> {
    let spec = job.net.spec();
    print_config(
        job.command,
        &json!({
            "inputs": job.inputs,
            "out": job.out,
            "train": job.cfg,
            "model": {
                "architecture": spec.architecture,
                "num_classes": spec.num_classes,
                "parameters": spec.param_count(),
                "layers": spec.layers,
            },
            "train_samples": job.train.labels.len(),
            "valid_samples": job.valid.labels.len(),
        }),
    )?;
    let stats = fit_pixel_stats(&job.train.inputs)?;
    let train_set = train_data(&job.train, &stats)?;
    let valid_set = train_data(&job.valid, &stats)?;

    let log_path = job.out.join("train_log.jsonl");
    let mut log = create(&log_path)?;
    let run = train(&job.net, &train_set, Some(&valid_set), &job.cfg, Some(&stats), Some(&mut log))?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;

    let ckpt = job.out.join("model.safetensors");
    run.best.save(&ckpt)?;
    let final_loss = run.log.last().map(|e| e.loss);
    let train_acc = accuracy_on(&run.last, &train_set)?;
    write_json(
        &job.out.join("summary.json"),
        &json!({
            "steps": job.cfg.max_steps,
            "best_step": run.best_step,
            "best_val_acc": run.best_val_acc,
            "final_loss": final_loss,
            "final_train_acc": train_acc,
            "checkpoint": ckpt,
        }),
    )?;
    println!(
        "trained {} steps; best step {} (val acc {}); checkpoint {}",
        job.cfg.max_steps,
        run.best_step,
        run.best_val_acc.map_or("n/a".to_string(), |a| format!("{a:.4}")),
        ckpt.display()
    );
    Ok(())
}

fn train_fer(ctx: &Ctx, a: TrainFerArgs) -> Result<()> {
    let data = ctx.path(&a.data);
    let file = FileConfig::load(a.train.config.as_deref().map(|p| ctx.path(p)).as_deref())?;
    let cfg = a.train.apply(file.train_config(TrainConfig::for_role(role_for(a.arch)))?)?;
    let spec = build_spec(a.arch, FER_CLASSES.len(), &file, &a.model)?;
    let net = Network::init(spec, cfg.seed)?;
    let train = normalize_set(&load_fer_split(&data, "train")?, "train")?;
    let valid = normalize_set(&load_fer_split(&data, "valid")?, "valid")?;
    run_training(TrainJob {
        command: "train-fer",
        net,
        cfg,
        train,
        valid,
        out: ctx.path(&a.out),
        inputs: json!({ "data": data }),
    })
}

fn train_er(ctx: &Ctx, a: TrainErArgs) -> Result<()> {
    let manifest = ctx.path(&a.manifest);
    let file = FileConfig::load(a.train.config.as_deref().map(|p| ctx.path(p)).as_deref())?;
    let role = match (&a.init_from, a.arch) {
        (Some(_), _) => ModelRole::Engagement,
        (None, arch) => role_for(arch.unwrap_or(Architecture::Vgg)),
    };
    let cfg = a.train.apply(file.train_config(TrainConfig::for_role(role))?)?;
    let (net, mode) = match &a.init_from {
        Some(src) => {
            let src = ctx.path(src);
            let source = Checkpoint::load(&src)?;
            if a.model.block_widths.is_some() || a.model.fc_widths.is_some() {
                log::warn!("width overrides are ignored when fine-tuning; widths come from {}", src.display());
            }
            let target = source.spec.with_num_classes(2)?;
            (transfer_init(target, &source, cfg.seed)?, json!({ "init_from": src }))
        }
        None => {
            let arch = a.arch.unwrap_or(Architecture::Vgg);
            let spec = build_spec(arch, 2, &file, &a.model)?;
            (Network::init(spec, cfg.seed)?, json!({ "scratch": arch }))
        }
    };
    let er = load_er(&manifest)?;
    run_training(TrainJob {
        command: "train-er",
        net,
        cfg,
        train: normalize_set(&er.train, "train")?,
        valid: normalize_set(&er.valid, "valid")?,
        out: ctx.path(&a.out),
        inputs: json!({ "manifest": manifest, "mode": mode, "role": role }),
    })
}

fn train_svm(ctx: &Ctx, a: TrainSvmArgs) -> Result<()> {
    let manifest = ctx.path(&a.manifest);
    let out = ctx.path(&a.out);
    let file = FileConfig::load(a.config.as_deref().map(|p| ctx.path(p)).as_deref())?;
    let mut params = file.svm.clone().unwrap_or_default();
    if let Some(c) = a.c {
        params.c = c;
    }
    params.seed = a.seed;
    let hog = HogParams::default();
    print_config("train-svm", &json!({ "manifest": manifest, "out": out, "svm": params, "hog": hog }))?;
    let er = load_er(&manifest)?;
    let train = normalize_set(&er.train, "train")?;
    let stats = fit_pixel_stats(&train.inputs)?;
    let inputs = standardized(&train, &stats);
    let model = HogSvmModel::fit(&inputs, &train.labels, &stats, hog, &params)?;
    let path = out.join("model.json");
    model.save(&path)?;
    let correct = inputs
        .iter()
        .zip(&train.labels)
        .filter(|(x, &y)| (model.decision(x) > 0.0) == (y == crate::dataset::ENGAGED))
        .count();
    println!(
        "SVM trained on {} samples, train accuracy {:.4}; model {}",
        inputs.len(),
        correct as f64 / inputs.len() as f64,
        path.display()
    );
    Ok(())
}

fn evaluate(ctx: &Ctx, a: EvaluateArgs) -> Result<()> {
    let model_path = ctx.path(&a.model);
    let manifest = ctx.path(&a.manifest);
    let out = ctx.path(&a.out);
    let split: Split = a.split.parse()?;
    let model_id = a.model_id.clone().unwrap_or_else(|| {
        model_path
            .parent()
            .and_then(|d| d.file_name())
            .or_else(|| model_path.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into())
    });
    print_config(
        "evaluate",
        &json!({ "model": model_path, "manifest": manifest, "split": split, "model_id": model_id, "out": out }),
    )?;
    let er = load_er(&manifest)?;
    let images = match split {
        Split::Train => &er.train,
        Split::Valid => &er.valid,
        Split::Test => &er.test,
        other => return Err(Error::Validation(format!("manifests have no {other} split"))),
    };
    let set = normalize_set(images, split.as_str())?;
    let is_svm = model_path.extension().is_some_and(|e| e == "json");
    let report = if is_svm {
        let model = HogSvmModel::load(&model_path)?;
        let inputs = standardized(&set, &model.pixel_stats()?);
        evaluate_svm(&model, &inputs, &set.labels, &model_id, split.as_str())?
    } else {
        let ckpt = Checkpoint::load(&model_path)?;
        let stats = ckpt.pixel_stats.clone().ok_or_else(|| {
            Error::Checkpoint(format!("{} carries no preprocessing statistics", model_path.display()))
        })?;
        let net = ckpt.network()?;
        evaluate_network(&net, &train_data(&set, &stats)?, &model_id, split.as_str())?
    };
    report.save(&out)?;
    print!("{}", metrics_table(std::slice::from_ref(&report)));
    print!("{}", report.confusion_table());
    for n in &report.notes {
        println!("note: {n}");
    }
    Ok(())
}

fn report(ctx: &Ctx, a: ReportArgs) -> Result<()> {
    let paths: Vec<PathBuf> = a.reports.iter().map(|p| ctx.path(p)).collect();
    print_config("report", &json!({ "reports": paths, "out": a.out }))?;
    let reports = paths.iter().map(|p| EvalReport::load(p)).collect::<Result<Vec<_>>>()?;
    let mut text = metrics_table(&reports);
    for r in &reports {
        text.push('\n');
        text.push_str(&r.confusion_table());
    }
    print!("{text}");
    if let Some(out) = &a.out {
        let out = ctx.path(out);
        let mut w = create(&out)?;
        w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(&out, e))?;
    }
    Ok(())
}
