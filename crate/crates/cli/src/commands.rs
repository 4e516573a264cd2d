use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dualtrack::checkpoint::Checkpoint;
use dualtrack::config::{Config, KeyValues};
use dualtrack::dman::data::{
    make_pairs, make_tracklets, random_identities, tracklet_features, IdentityDataset, TrackletSpec,
};
use dualtrack::dman::{
    batch_san_loss_and_grad, batch_tan_loss_and_grad, prepare_input, san_forward, san_from_checkpoint,
    san_to_checkpoint, train_san as fit_san, train_tan as fit_tan, Dman, DmanConfig, DmanMode, ParamBlocks, SanMode,
    SanParams, TanMode, TanParams, TrainConfig,
};
use dualtrack::imaging::{write_pnm, BoundingBox, ImageBuffer};
use dualtrack::metrics::{evaluate as score, format_table, MetricReport};
use dualtrack::motio::{
    builtin_scenario, by_frame, frame_file_name, generate_synthetic, list_frames, load_frame, parse_mot_file,
    parse_scenario, summary, write_results, write_sequence, FrameRecord, SCENARIO_NAMES,
};
use dualtrack::pipeline::{run_sequence, Mode, Pipeline, PipelineConfig};
use dualtrack::sot::{init_tracker, TrackerConfig};
use dualtrack::{Error, Result};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::render::{bar_chart, draw_box, heat_image, id_color};

/// Largest accepted relative gradient error.
const GRAD_TOLERANCE: f64 = 1e-3;
/// Coordinates probed per parameter tensor by the gradient check.
const GRAD_PROBES: usize = 6;
const GRAD_STEP: f64 = 1e-5;

fn rng(cfg: &Config) -> Result<ChaCha8Rng> {
    Ok(ChaCha8Rng::seed_from_u64(cfg.u64("run.seed")?))
}

pub fn generate(cfg: &Config, scenario: Option<&str>, identities: Option<usize>, out: &Path) -> Result<()> {
    let seed = cfg.u64("run.seed")?;
    let samples = cfg.usize("train.samples_per_identity")?;
    if let Some(count) = identities {
        let mut r = rng(cfg)?;
        let specs = random_identities(count, [20.0, 40.0], &mut r);
        let ds = IdentityDataset::render(&specs, samples, [0.45; 3], &mut r)?;
        ds.save_dir(out)?;
        println!("{} identities x {samples} crops -> {}", ds.len(), out.display());
        return Ok(());
    }
    let name = scenario.expect("clap requires a source");
    let scn = if Path::new(name).is_file() {
        parse_scenario(&KeyValues::load(Path::new(name))?)?
    } else {
        builtin_scenario(name).map_err(|_| {
            Error::Config(format!(
                "unknown scenario {name:?}; built-in scenarios are {}, or give a scenario file",
                SCENARIO_NAMES.join(", ")
            ))
        })?
    };
    let seq = generate_synthetic(&scn, seed)?;
    write_sequence(&seq, out)?;
    let ids = IdentityDataset::from_sequence(&seq.frames, &seq.gt, 0.5, samples)?;
    ids.save_dir(&out.join("ids"))?;
    println!(
        "{} frames; gt {}; det {} -> {}",
        seq.frames.len(),
        summary(&seq.gt),
        summary(&seq.detections),
        out.display()
    );
    Ok(())
}

pub struct TrackOptions {
    pub frames: PathBuf,
    pub det: PathBuf,
    pub mode: Option<String>,
    pub ckpt: Option<PathBuf>,
    pub out: PathBuf,
    pub overlay: Option<PathBuf>,
}

fn load_frames(dir: &Path) -> Result<Vec<ImageBuffer>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!(
            "frame directory {} does not exist",
            dir.display()
        )));
    }
    let files = list_frames(dir)?;
    if files.is_empty() {
        return Err(Error::Config(format!("no frames in {}", dir.display())));
    }
    files.iter().map(|f| load_frame(f)).collect()
}

/// MOT rows of a file; a missing file is reported with its path.
fn read_records(path: &Path) -> Result<Vec<FrameRecord>> {
    if !path.is_file() {
        return Err(Error::Config(format!("cannot read {}", path.display())));
    }
    Ok(parse_mot_file(path)?.records)
}

fn load_dman(path: &Path) -> Result<Dman> {
    Dman::from_checkpoint(&Checkpoint::load(path)?)
}

pub fn track(cfg: &Config, opts: &TrackOptions) -> Result<()> {
    let mut cfg = cfg.clone();
    if let Some(m) = &opts.mode {
        cfg.set("pipeline.mode", Mode::parse(m)?.name())?;
    }
    let pc = PipelineConfig::from_config(&cfg)?;
    let tc = TrackerConfig::from_config(&cfg)?;
    let dman = match (&opts.ckpt, pc.mode.needs_networks()) {
        (Some(p), true) => Some(load_dman(p)?),
        (Some(_), false) => {
            log::info!("mode {} ignores the checkpoint", pc.mode.name());
            None
        }
        (None, _) => None,
    };
    let mode = pc.mode;
    let mut pipeline = Pipeline::new(pc, &tc, dman)?;
    let frames = load_frames(&opts.frames)?;
    let dets = read_records(&opts.det)?;
    let results = run_sequence(&mut pipeline, &frames, &dets)?;
    if let Some(dir) = opts.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_results(&results, &opts.out)?;
    if let Some(dir) = &opts.overlay {
        fs::create_dir_all(dir)?;
        let rows = by_frame(&results);
        for (k, frame) in frames.iter().enumerate() {
            let index = k as u32 + 1;
            let mut img = frame.to_rgb();
            for r in rows.get(&index).into_iter().flatten() {
                draw_box(&mut img, &r.bbox, id_color(r.id));
            }
            write_pnm(&img, &dir.join(frame_file_name(index)))?;
        }
    }
    println!("mode {}: {} -> {}", mode.name(), summary(&results), opts.out.display());
    Ok(())
}

pub struct TrainOptions {
    pub data: PathBuf,
    pub steps: Option<usize>,
    pub out: PathBuf,
    pub log: PathBuf,
    pub grad_check: bool,
}

fn train_config(cfg: &Config, opts: &TrainOptions) -> Result<TrainConfig> {
    let mut tc = TrainConfig::from_config(cfg)?;
    if let Some(s) = opts.steps {
        tc.steps = s;
    }
    Ok(tc)
}

fn load_dataset(dir: &Path) -> Result<IdentityDataset> {
    let ds = IdentityDataset::load_dir(dir)?;
    if ds.len() < 2 {
        return Err(Error::Config(format!(
            "{} needs at least two identity folders",
            dir.display()
        )));
    }
    Ok(ds)
}

/// Largest per-tensor relative error `|g - n| / max(|g|, |n|)`, where `n`
/// holds central differences of `loss` on a random subset of coordinates.
fn sampled_gradient_error<P: ParamBlocks>(
    params: &P,
    analytic: &P,
    loss: impl Fn(&P) -> Result<f64>,
    r: &mut ChaCha8Rng,
) -> Result<f64> {
    let grads: Vec<Vec<f64>> = analytic.blocks().into_iter().map(|b| b.data.to_vec()).collect();
    let mut worst: f64 = 0.0;
    for (bi, g) in grads.iter().enumerate() {
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for k in sample(r, g.len(), GRAD_PROBES.min(g.len())) {
            let mut plus = params.clone();
            plus.blocks_mut()[bi][k] += GRAD_STEP;
            let mut minus = params.clone();
            minus.blocks_mut()[bi][k] -= GRAD_STEP;
            let numeric = (loss(&plus)? - loss(&minus)?) / (2.0 * GRAD_STEP);
            diff += (numeric - g[k]).powi(2);
            na += g[k] * g[k];
            nn += numeric * numeric;
        }
        let scale = f64::max(na, nn).sqrt();
        worst = worst.max(if scale < 1e-10 {
            diff.sqrt()
        } else {
            diff.sqrt() / scale
        });
    }
    Ok(worst)
}

fn report_gradient_error(err: f64) -> Result<()> {
    println!("max relative gradient error: {err:.3e}");
    if err > GRAD_TOLERANCE {
        return Err(Error::NumericFailure {
            iteration: 0,
            context: format!("gradient check error {err:.3e} exceeds {GRAD_TOLERANCE:e}"),
        });
    }
    Ok(())
}

fn write_loss_log(path: &Path, losses: &[f64]) -> Result<()> {
    let mut s = String::from("# step loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(s, "{} {l:.6}", i + 1);
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, s)?;
    Ok(())
}

/// Mean of the first and of the last few losses.
fn loss_ends(losses: &[f64]) -> (f64, f64) {
    let k = (losses.len() / 10).clamp(1, 20).min(losses.len());
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&losses[..k]), mean(&losses[losses.len() - k..]))
}

fn finish_training(opts: &TrainOptions, losses: &[f64], ck: &Checkpoint) -> Result<()> {
    write_loss_log(&opts.log, losses)?;
    let manifest = ck.save(&opts.out)?;
    if !losses.is_empty() {
        let (first, last) = loss_ends(losses);
        println!("{} steps: loss {first:.4} -> {last:.4}", losses.len());
    }
    println!(
        "checkpoint {} (manifest {}), loss curve {}",
        opts.out.display(),
        manifest.display(),
        opts.log.display()
    );
    Ok(())
}

pub fn train_san(cfg: &Config, opts: &TrainOptions) -> Result<()> {
    let ds = load_dataset(&opts.data)?;
    let tc = train_config(cfg, opts)?;
    let mut dc = DmanConfig::from_config(cfg)?;
    dc.num_identities = ds.len();
    let mut r = rng(cfg)?;
    let mut san = SanParams::init(&dc, &mut r)?;
    if opts.grad_check {
        let batch = make_pairs(&ds, 2, 0.5, dc.input_size, &mut r)?;
        let mode = SanMode::default();
        let (_, g) = batch_san_loss_and_grad(&san, &batch, mode)?;
        let err = sampled_gradient_error(&san, &g, |p| Ok(batch_san_loss_and_grad(p, &batch, mode)?.0), &mut r)?;
        report_gradient_error(err)?;
    }
    let losses = fit_san(&mut san, &ds, &tc, SanMode::default())?;
    finish_training(opts, &losses, &san_to_checkpoint(&san))
}

pub fn train_tan(cfg: &Config, opts: &TrainOptions, san_path: &Path) -> Result<()> {
    let san = san_from_checkpoint(&Checkpoint::load(san_path)?)?;
    let ds = load_dataset(&opts.data)?;
    let tc = train_config(cfg, opts)?;
    let dc = san.config().clone();
    let mut r = rng(cfg)?;
    let mut tan = TanParams::init(dc.combined_dim, dc.hidden_dim, &mut r);
    let spec = TrackletSpec::default();
    if opts.grad_check {
        let batch = make_tracklets(&ds, 2, &spec, dc.input_size, &mut r)?
            .iter()
            .map(|t| tracklet_features(&san, t, SanMode::default()))
            .collect::<Result<Vec<_>>>()?;
        let mode = TanMode::default();
        let (_, g) = batch_tan_loss_and_grad(&tan, &batch, mode)?;
        let err = sampled_gradient_error(&tan, &g, |p| Ok(batch_tan_loss_and_grad(p, &batch, mode)?.0), &mut r)?;
        report_gradient_error(err)?;
    }
    let losses = fit_tan(
        &mut tan,
        &san,
        &ds,
        &tc,
        &spec,
        (SanMode::default(), TanMode::default()),
    )?;
    let dman = Dman {
        san,
        tan,
        mode: DmanMode::default(),
    };
    finish_training(opts, &losses, &dman.to_checkpoint())
}

pub fn evaluate(gt: &[PathBuf], res: &[PathBuf], names: &[String], iou: f64, out: Option<&Path>) -> Result<()> {
    if gt.len() != res.len() {
        return Err(Error::Config(format!(
            "{} --gt files but {} --res files",
            gt.len(),
            res.len()
        )));
    }
    if !names.is_empty() && names.len() != gt.len() {
        return Err(Error::Config("give one --name per sequence or none".into()));
    }
    if !(iou > 0.0 && iou <= 1.0) {
        return Err(Error::Config(format!("--iou must be in (0, 1], got {iou}")));
    }
    let mut reports = Vec::with_capacity(gt.len());
    for (k, (g, r)) in gt.iter().zip(res).enumerate() {
        let name = names.get(k).cloned().unwrap_or_else(|| default_name(g, k));
        let truth = read_records(g)?;
        let found = read_records(r)?;
        reports.push(score(&name, &truth, &found, iou));
    }
    let mut table = reports.clone();
    if reports.len() > 1 {
        table.push(MetricReport::aggregate("OVERALL", &reports));
    }
    print!("{}", format_table(&table));
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        for rep in &table {
            fs::write(dir.join(format!("{}.metrics.txt", rep.name)), rep.to_key_values())?;
        }
    }
    Ok(())
}

fn default_name(gt: &Path, k: usize) -> String {
    gt.parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .filter(|n| !n.is_empty())
        .unwrap_or_else(|| format!("seq{}", k + 1))
}

fn write_attention(dir: &Path, tag: &str, values: &[f64], grid: usize, zoom: usize) -> Result<f64> {
    let max = values.iter().copied().fold(0.0, f64::max);
    write_pnm(
        &heat_image(values, grid, grid, 0.0, max, zoom)?,
        &dir.join(format!("attention_{tag}.pgm")),
    )?;
    Ok(max)
}

pub fn inspect_attention(ckpt: &Path, a: &Path, b: &Path, out: &Path) -> Result<()> {
    let san = san_from_checkpoint(&Checkpoint::load(ckpt)?)?;
    let size = san.config().input_size;
    let grid = san.config().grid_side();
    let xa = prepare_input(&load_frame(a)?, size)?;
    let xb = prepare_input(&load_frame(b)?, size)?;
    let o = san_forward(&san, &xa, &xb, SanMode::default())?;
    fs::create_dir_all(out)?;
    let zoom = (size / grid).max(1);
    let max_a = write_attention(out, "a", &o.attention_a, grid, zoom)?;
    let max_b = write_attention(out, "b", &o.attention_b, grid, zoom)?;
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:.6e}")).collect::<Vec<_>>().join(" ");
    let mut meta = String::new();
    let _ = writeln!(
        meta,
        "# pixel / 255 * scale is the attention weight; the weights of a map sum to 1"
    );
    let _ = writeln!(meta, "grid = {grid} {grid}");
    let _ = writeln!(meta, "zoom = {zoom}");
    let _ = writeln!(meta, "scale_a = {max_a:.9e}");
    let _ = writeln!(meta, "scale_b = {max_b:.9e}");
    let _ = writeln!(meta, "values_a = {}", join(&o.attention_a));
    let _ = writeln!(meta, "values_b = {}", join(&o.attention_b));
    fs::write(out.join("attention.txt"), meta)?;
    println!(
        "verification probability {:.4}; maps {grid}x{grid} -> {}",
        o.p_verify,
        out.display()
    );
    Ok(())
}

pub fn inspect_temporal(ckpt: &Path, tracklet: &Path, detection: &Path) -> Result<()> {
    let dman = load_dman(ckpt)?;
    let size = dman.san.config().input_size;
    let mut files: Vec<PathBuf> = list_frames(tracklet)?;
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("no images in {}", tracklet.display())));
    }
    let obs = files
        .iter()
        .map(|f| prepare_input(&load_frame(f)?, size))
        .collect::<Result<Vec<_>>>()?;
    let det = prepare_input(&load_frame(detection)?, size)?;
    let out = dman.score(&det, &obs)?;
    print!("{}", bar_chart(&out.weights, 40));
    println!("similarity {:.4}", out.similarity);
    Ok(())
}

fn parse_box(s: &str) -> Result<BoundingBox> {
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
        .collect::<Option<Vec<_>>>()
        .filter(|v| v.len() == 4)
        .ok_or_else(|| Error::Config(format!("--box {s:?} is not x,y,w,h")))?;
    BoundingBox::new(v[0], v[1], v[2], v[3]).map_err(|e| Error::Config(e.to_string()))
}

pub fn inspect_confidence(cfg: &Config, frames: &Path, frame: u32, bbox: &str, out: &Path) -> Result<()> {
    let bbox = parse_box(bbox)?;
    let files = list_frames(frames)?;
    if frame == 0 || frame as usize > files.len() {
        return Err(Error::Config(format!("frame {frame} outside 1..={}", files.len())));
    }
    let first = load_frame(&files[frame as usize - 1])?;
    let next_index = (frame as usize).min(files.len() - 1);
    let next = load_frame(&files[next_index])?;
    let tc = TrackerConfig::from_config(cfg)?;
    let handle = init_tracker(&first, bbox, &tc)?;
    let [cx, cy] = bbox.center();
    let map = handle.confidence_at(&next, [cx - 0.5, cy - 0.5], handle.search_size())?;
    let lo = map.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    fs::create_dir_all(out)?;
    write_pnm(
        &heat_image(&map.values, map.rows, map.cols, lo, hi, 4)?,
        &out.join("confidence.pgm"),
    )?;
    let (r, c, v) = map.peak();
    let meta = format!(
        "rows = {}\ncols = {}\nmin = {lo:.6e}\nmax = {hi:.6e}\npeak = {r} {c}\n",
        map.rows, map.cols
    );
    fs::write(out.join("confidence.txt"), meta)?;
    println!(
        "frame {} response on frame {}: peak {v:.4} at cell ({r}, {c}) of {}x{} -> {}",
        frame,
        next_index + 1,
        map.rows,
        map.cols,
        out.display()
    );
    Ok(())
}
