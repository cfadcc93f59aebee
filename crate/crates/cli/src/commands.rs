use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Parser;
use rayon::prelude::*;
use serde_json::{json, Value};

use flowsub::basis::{BasisFamily, BasisKind};
use flowsub::fitter::{evaluate_fields, fit, FitConfig};
use flowsub::io::{read_flo, read_label_png, read_pfm, write_flo, write_label_png, write_pfm, write_rgb_png, flow_to_color};
use flowsub::metrics::depth::{depth_metrics, PredictionKind, DEPTH_CSV_HEADER};
use flowsub::metrics::postprocess::{postprocess_masks, Connectivity};
use flowsub::metrics::segmentation::{SegReport, SEG_CSV_HEADER};
use flowsub::synth::{compose_scene, random_scene, MotionMix, RandomSceneParams};
use flowsub::{CameraModel, DisparityField, SceneSpec, SoftMaskStack};

use crate::manifest::{FileRecord, RunManifest, MANIFEST_SCHEMA};
use crate::{
    CameraArgs, Cli, Command, EvalCommand, EvalDepthArgs, EvalSegArgs, FitArgs, MotionMixArg, ProjectArgs, ReplayArgs,
    SynthArgs, VizArgs,
};

#[derive(Debug)]
pub struct CliError {
    pub kind: String,
    pub message: String,
}

impl CliError {
    fn new(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.to_string(),
            message: message.into(),
        }
    }
}

impl From<flowsub::Error> for CliError {
    fn from(e: flowsub::Error) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new("Io", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new("Parse", e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// What a command read and wrote, for the manifest.
struct Record {
    command: &'static str,
    config: Value,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    manifest: PathBuf,
}

pub fn run(command: Command, argv: Vec<String>) -> CliResult<()> {
    if let Command::Replay(args) = command {
        return replay(&args);
    }
    let start = Instant::now();
    let record = match command {
        Command::Synth(a) => synth(&a)?,
        Command::Project(a) => project(&a)?,
        Command::Fit(a) => fit_cmd(&a)?,
        Command::Eval(EvalCommand::Seg(a)) => eval_seg(&a)?,
        Command::Eval(EvalCommand::Depth(a)) => eval_depth(&a)?,
        Command::Viz(a) => viz(&a)?,
        Command::Replay(_) => unreachable!(),
    };
    let hash_all = |paths: &[PathBuf]| -> std::io::Result<Vec<FileRecord>> {
        paths.iter().map(|p| FileRecord::of(p)).collect()
    };
    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: record.command.to_string(),
        args: argv,
        cwd: std::env::current_dir()?,
        config: record.config,
        seed: record.seed,
        inputs: hash_all(&record.inputs)?,
        outputs: hash_all(&record.outputs)?,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    std::fs::write(&record.manifest, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn parse_pair(s: &str, what: &str) -> CliResult<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').collect();
    let num = |x: &str| {
        x.trim()
            .parse::<f64>()
            .map_err(|_| CliError::new("Parse", format!("bad {what} value {x:?}")))
    };
    match parts.as_slice() {
        [a] => {
            let v = num(a)?;
            Ok((v, v))
        }
        [a, b] => Ok((num(a)?, num(b)?)),
        _ => Err(CliError::new("Parse", format!("{what} expects one or two comma-separated numbers"))),
    }
}

fn camera_for(dims: (usize, usize), args: &CameraArgs) -> CliResult<CameraModel> {
    let focal = args.focal.as_deref().map(|f| parse_pair(f, "focal")).transpose()?;
    let mut cam = CameraModel::centered(dims.0, dims.1, focal)?;
    if let Some(pp) = &args.principal_point {
        cam = CameraModel::new(dims.0, dims.1, parse_pair(pp, "principal point")?, focal)?;
    }
    Ok(cam)
}

fn basis_kind(name: &str, family: BasisFamily) -> CliResult<BasisKind> {
    let kind: BasisKind = name.parse()?;
    Ok(match (name, family) {
        ("full", BasisFamily::Intrinsic) => BasisKind::Intrinsic6,
        _ => kind,
    })
}

fn manifest_beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn synth(a: &SynthArgs) -> CliResult<Record> {
    let mut inputs = Vec::new();
    let spec = match &a.spec {
        Some(path) => {
            inputs.push(path.clone());
            SceneSpec::from_json(&std::fs::read_to_string(path)?)?
        }
        None => {
            let mix = match a.motion {
                MotionMixArg::Mixed => MotionMix::Mixed,
                MotionMixArg::Rotation => MotionMix::PureRotation,
                MotionMixArg::Translation => MotionMix::PureTranslation,
            };
            let params = RandomSceneParams::default()
                .with_k(a.k)
                .with_dims(a.width, a.height)
                .with_motion_mix(mix);
            random_scene(a.seed, &params)?
        }
    };
    let scene = compose_scene(&spec)?;
    std::fs::create_dir_all(&a.out)?;
    let outputs = vec![
        a.out.join("flow.flo"),
        a.out.join("gt_disparity.pfm"),
        a.out.join("gt_labels.png"),
        a.out.join("scene.json"),
    ];
    write_flo(&scene.flow, &outputs[0])?;
    write_pfm(scene.gt_disparity.grid(), &outputs[1])?;
    write_label_png(&scene.gt_labels, &outputs[2])?;
    std::fs::write(&outputs[3], spec.to_json())?;
    Ok(Record {
        command: "synth",
        config: serde_json::to_value(&spec)?,
        seed: Some(spec.seed),
        inputs,
        outputs,
        manifest: a.out.join("manifest.json"),
    })
}

fn project(a: &ProjectArgs) -> CliResult<Record> {
    let flow = read_flo(&a.flow)?;
    let disparity = DisparityField::new(read_pfm(&a.disparity)?)?;
    let labels = read_label_png(&a.masks)?;
    let camera = camera_for(flow.dims(), &a.camera)?;
    let kind = basis_kind(&a.basis, BasisFamily::FocalFree)?;
    let masks = SoftMaskStack::from_labels(&labels.labels, a.k)?;
    let family = kind.family_or(BasisFamily::FocalFree);
    let result = evaluate_fields(&flow, &camera, &disparity, &masks, kind, family, a.sv_threshold)?;
    std::fs::create_dir_all(&a.out)?;
    let recon = a.out.join("reconstructed.flo");
    let report = a.out.join("projection.json");
    write_flo(&result.projected, &recon)?;
    let ids = kind.ids(family);
    let columns: Vec<Value> = (0..a.k)
        .flat_map(|i| ids.iter().map(move |id| json!({ "region": i, "field": id.name() })))
        .collect();
    let body = json!({
        "residual": result.residual,
        "relative_residual": result.relative_residual(&flow),
        "rank": result.rank,
        "coefficients": result.coefficients,
        "columns": columns,
    });
    std::fs::write(&report, serde_json::to_string_pretty(&body)?)?;
    Ok(Record {
        command: "project",
        config: json!({ "K": a.k, "basis": kind, "sv_threshold": a.sv_threshold, "camera": camera }),
        seed: None,
        inputs: vec![a.flow.clone(), a.disparity.clone(), a.masks.clone()],
        outputs: vec![recon, report],
        manifest: a.out.join("manifest.json"),
    })
}

fn fit_cmd(a: &FitArgs) -> CliResult<Record> {
    let mut inputs = vec![a.flow.clone()];
    let mut config = match &a.config {
        Some(path) => {
            inputs.push(path.clone());
            serde_json::from_str::<FitConfig>(&std::fs::read_to_string(path)?)?
        }
        None => FitConfig::default(),
    };
    if let Some(k) = a.k {
        config.k = k;
    }
    if let Some(n) = a.iters {
        config.iterations = n;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(b) = &a.basis {
        config.basis_kind = basis_kind(b, config.family)?;
    }
    let flow = read_flo(&a.flow)?;
    let camera = camera_for(flow.dims(), &a.camera)?;
    let result = fit(&flow, &camera, &config)?;

    std::fs::create_dir_all(&a.out)?;
    let mut outputs = vec![a.out.join("disparity.pfm"), a.out.join("labels.png")];
    write_pfm(result.disparity.grid(), &outputs[0])?;
    write_label_png(&result.hard_labels, &outputs[1])?;
    let (w, h) = flow.dims();
    for i in 0..result.masks.k() {
        let path = a.out.join(format!("mask_{i}.pfm"));
        write_pfm(&flowsub::Grid::from_vec(w, h, result.masks.channel(i))?, &path)?;
        outputs.push(path);
    }
    let mut csv = String::from("step,loss,objective\n");
    for (i, (l, o)) in result.loss_history.iter().zip(&result.objective_history).enumerate() {
        csv.push_str(&format!("{i},{l:.16e},{o:.16e}\n"));
    }
    let loss_path = a.out.join("loss.csv");
    std::fs::write(&loss_path, csv)?;
    let summary_path = a.out.join("fit.json");
    let summary = json!({
        "final_loss": result.final_loss,
        "relative_loss": if flow.norm() > 0.0 { result.final_loss / flow.norm() } else { 0.0 },
        "converged": result.converged,
        "best_step": result.best_step,
        "polished": result.polished,
        "steps": result.loss_history.len(),
    });
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    outputs.push(loss_path);
    outputs.push(summary_path);
    Ok(Record {
        command: "fit",
        config: json!({ "fit": config, "camera": camera }),
        seed: Some(config.seed),
        inputs,
        outputs,
        manifest: a.out.join("manifest.json"),
    })
}

fn write_report(out: &Path, header: &str, row: String, json_body: Value) -> CliResult<()> {
    let is_csv = out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        std::fs::write(out, format!("{header}\n{row}\n"))?;
    } else {
        std::fs::write(out, serde_json::to_string_pretty(&json_body)?)?;
    }
    Ok(())
}

fn eval_seg(a: &EvalSegArgs) -> CliResult<Record> {
    if a.pred.len() != a.gt.len() {
        return Err(CliError::new(
            "DimensionMismatch",
            format!("{} predictions but {} ground-truth maps", a.pred.len(), a.gt.len()),
        ));
    }
    let conn = if a.eight_connected { Connectivity::Eight } else { Connectivity::Four };
    let mut frames = Vec::with_capacity(a.pred.len());
    for (p, g) in a.pred.iter().zip(&a.gt) {
        let mut pred = read_label_png(p)?;
        if a.postprocess {
            pred = postprocess_masks(&pred, a.k, a.min_frac, conn)?;
        }
        frames.push((pred, read_label_png(g)?));
    }
    let report = SegReport::from_frames(&frames, a.per_frame)?;
    write_report(&a.out, SEG_CSV_HEADER, report.csv_row(), serde_json::to_value(&report)?)?;
    Ok(Record {
        command: "eval seg",
        config: json!({ "postprocess": a.postprocess, "K": a.k, "min_frac": a.min_frac, "connectivity": conn }),
        seed: None,
        inputs: a.pred.iter().chain(&a.gt).cloned().collect(),
        outputs: vec![a.out.clone()],
        manifest: manifest_beside(&a.out),
    })
}

fn eval_depth(a: &EvalDepthArgs) -> CliResult<Record> {
    let pred = read_pfm(&a.pred)?;
    let mut gt = read_pfm(&a.gt)?;
    if a.gt_is_disparity {
        gt = DisparityField::new(gt)?.to_depth();
    }
    let kind = if a.pred_is_disparity { PredictionKind::Disparity } else { PredictionKind::Depth };
    let report = depth_metrics(&pred, kind, &gt, a.cap, a.median_scale)?;
    write_report(&a.out, DEPTH_CSV_HEADER, report.csv_row(), serde_json::to_value(&report)?)?;
    Ok(Record {
        command: "eval depth",
        config: json!({ "prediction": kind, "gt_is_disparity": a.gt_is_disparity, "cap": a.cap, "median_scale": a.median_scale }),
        seed: None,
        inputs: vec![a.pred.clone(), a.gt.clone()],
        outputs: vec![a.out.clone()],
        manifest: manifest_beside(&a.out),
    })
}

fn worker_count() -> CliResult<usize> {
    match std::env::var("FLOWSUB_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::new("ParamOutOfRange", format!("FLOWSUB_THREADS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn render(flow_path: &Path, out: &Path, max_magnitude: Option<f64>) -> CliResult<()> {
    let flow = read_flo(flow_path)?;
    write_rgb_png(&flow_to_color(&flow, max_magnitude), out)?;
    Ok(())
}

fn viz(a: &VizArgs) -> CliResult<Record> {
    let config = json!({ "max_magnitude": a.max_magnitude, "glob": a.glob });
    if let Some(flow) = &a.flow {
        render(flow, &a.out, a.max_magnitude)?;
        return Ok(Record {
            command: "viz",
            config,
            seed: None,
            inputs: vec![flow.clone()],
            outputs: vec![a.out.clone()],
            manifest: manifest_beside(&a.out),
        });
    }
    let pattern = a.glob.as_deref().expect("clap requires --flow or --glob");
    let mut inputs: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| CliError::new("Parse", e.to_string()))?
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::new("Io", e.to_string()))?;
    inputs.sort();
    std::fs::create_dir_all(&a.out)?;
    let outputs: Vec<PathBuf> = inputs
        .iter()
        .map(|p| a.out.join(p.file_stem().unwrap_or_default()).with_extension("png"))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count()?)
        .build()
        .map_err(|e| CliError::new("Io", e.to_string()))?;
    pool.install(|| {
        inputs
            .par_iter()
            .zip(&outputs)
            .try_for_each(|(i, o)| render(i, o, a.max_magnitude))
    })?;
    Ok(Record {
        command: "viz",
        config,
        seed: None,
        inputs,
        outputs,
        manifest: a.out.join("manifest.json"),
    })
}

fn replay(a: &ReplayArgs) -> CliResult<()> {
    let recorded: RunManifest = serde_json::from_str(&std::fs::read_to_string(&a.manifest)?)?;
    std::env::set_current_dir(&recorded.cwd)?;
    for input in &recorded.inputs {
        let now = FileRecord::of(&input.path)?;
        if now.sha256 != input.sha256 {
            return Err(CliError::new("InputChanged", format!("{} differs from the recorded input", input.path.display())));
        }
    }
    let argv = std::iter::once("flowsub".to_string()).chain(recorded.args.iter().cloned());
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::new("Parse", e.to_string()))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::new("Parse", "a manifest cannot record a replay"));
    }
    run(cli.command, recorded.args.clone())?;
    let mut mismatched = Vec::new();
    for output in &recorded.outputs {
        let now = FileRecord::of(&output.path)?;
        if now.sha256 != output.sha256 {
            mismatched.push(output.path.display().to_string());
        }
    }
    println!(
        "{}",
        json!({ "reproduced": mismatched.is_empty(), "outputs": recorded.outputs.len(), "mismatched": mismatched })
    );
    if mismatched.is_empty() {
        Ok(())
    } else {
        Err(CliError::new("NotReproduced", format!("{} outputs differ", mismatched.len())))
    }
}
