//! Command-line surface and the frame-parallel driver.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use shapemiss::assembly::{read_bank, write_bank, ObjectInstance, ObjectKey};
use shapemiss::dataio::{
    self, cause_color, encode_mask, encode_points, format_ply, probability_gray, Calibration, FrameBundle, Rgb,
};
use shapemiss::geom::voxelize;
use shapemiss::metrics::{recover_scenario, RecoveryScenario, ReportAccumulator};
use shapemiss::occupancy::{maxpool_pyramid, to_cartesian_probability, OccupancyGrid};
use shapemiss::synth::{generate_default, SceneConfig};
use shapemiss::{PointCloud, VoxelGrid};

use crate::config::PipelineConfig;
use crate::pipeline::Pipeline;

#[derive(Debug, Parser)]
#[command(name = "shapemiss", version, about = "Shape-miss analysis of LiDAR frames")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Pipeline config file (TOML). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set assembly.alpha=1.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Disable extensions beyond the published method.
    #[arg(long)]
    pub strict_paper: bool,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct FrameArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// KITTI-layout input directory (velodyne/, calib/, label_2/).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Frame ids, comma separated, or `@file` with one id per line.
    #[arg(long, value_delimiter = ',')]
    pub frames: Vec<String>,
    /// Record failing frames in the summary and exit zero.
    #[arg(long)]
    pub keep_going: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BankArgs {
    #[command(flatten)]
    pub frames: FrameArgs,
    /// Extra source objects (bank file) added to those of the input frames.
    #[arg(long)]
    pub bank: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bin every frame into the spherical grid.
    Voxelize(FrameArgs),
    /// Occluded and signal-miss regions plus per-voxel causes.
    Regions(FrameArgs),
    /// Approximate complete shapes of all labeled objects.
    Assemble(BankArgs),
    /// Occupancy training targets.
    Targets(BankArgs),
    /// Score predicted occupancy grids against the targets.
    Evaluate {
        #[command(flatten)]
        args: BankArgs,
        /// Directory of predicted grids named `<frame>.smog`.
        #[arg(long)]
        pred: PathBuf,
    },
    /// Add assembled points to shape-miss voxels.
    Recover {
        #[command(flatten)]
        args: BankArgs,
        #[arg(long, value_parser = parse_scenario)]
        scenario: RecoveryScenario,
    },
    /// PLY files for viewing clouds, causes, shapes and predictions.
    Export {
        #[command(flatten)]
        args: BankArgs,
        #[arg(long)]
        pred: Option<PathBuf>,
    },
    /// Write synthetic frames in KITTI layout plus their true shapes.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 8)]
        scenes: usize,
        /// Seed of the first scene; scene n uses seed + n.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scene generator settings (TOML).
        #[arg(long)]
        scene_config: Option<PathBuf>,
    },
}

fn parse_scenario(s: &str) -> Result<RecoveryScenario, String> {
    s.parse()
}

/// What a run did: the summary document and how many frames failed.
#[derive(Debug)]
pub struct RunOutcome {
    pub summary: Value,
    pub failed: usize,
    pub keep_going: bool,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.failed > 0 && !self.keep_going {
            1
        } else {
            0
        }
    }
}

type Counts = BTreeMap<&'static str, u64>;

#[derive(Serialize)]
struct FrameReport {
    id: String,
    ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    counts: Counts,
}

fn load_config(a: &ConfigArgs) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(a.config.as_deref(), &a.set)?;
    if a.strict_paper {
        cfg.strict_paper();
    }
    Ok(cfg)
}

fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            bail!("--workers must be at least 1");
        }
        b = b.num_threads(n);
    }
    Ok(b.build()?)
}

fn frame_ids(args: &FrameArgs) -> Result<Vec<String>> {
    if args.frames.is_empty() {
        return dataio::list_frames(&args.input).context("listing input frames");
    }
    let mut ids = Vec::new();
    for f in &args.frames {
        if let Some(path) = f.strip_prefix('@') {
            let text = fs::read_to_string(path).with_context(|| format!("reading frame list {path}"))?;
            ids.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from));
        } else if !f.trim().is_empty() {
            ids.push(f.trim().to_string());
        }
    }
    Ok(ids)
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), String> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).map_err(|e| format!("{}: {e}", d.display()))?;
    }
    fs::write(path, bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| e.to_string())?;
    s.push('\n');
    write(path, s.as_bytes())
}

pub fn run(cli: &Cli) -> Result<RunOutcome> {
    match &cli.command {
        Command::Simulate { cfg, output, scenes, seed, scene_config } => {
            simulate(cfg, output, *scenes, *seed, scene_config.as_deref())
        }
        Command::Voxelize(a) => run_frames("voxelize", a, None, voxelize_cmd),
        Command::Regions(a) => run_frames("regions", a, None, regions_cmd),
        Command::Assemble(b) => run_frames("assemble", &b.frames, Some(b), assemble_cmd),
        Command::Targets(b) => run_frames("targets", &b.frames, Some(b), targets_cmd),
        Command::Evaluate { args, pred } => evaluate(args, pred),
        Command::Recover { args, scenario } => {
            run_frames("recover", &args.frames, Some(args), |ctx, f| recover_cmd(ctx, f, *scenario))
        }
        Command::Export { args, pred } => {
            run_frames("export", &args.frames, Some(args), |ctx, f| export_cmd(ctx, f, pred.as_deref()))
        }
    }
}

struct Ctx<'a> {
    pipe: &'a Pipeline,
    out: &'a Path,
    input: &'a Path,
    bank: &'a [shapemiss::assembly::IndexedObject],
}

struct Loaded {
    reports: Vec<FrameReport>,
    failed: usize,
}

/// Loads frames, builds the bank when asked, runs `per_frame` on every
/// loaded frame in parallel, and writes `summary.json`.
fn run_frames_with<R: Send>(
    command: &str,
    args: &FrameArgs,
    bank_args: Option<&BankArgs>,
    per_frame: impl Fn(&Ctx, &FrameBundle) -> Result<(Counts, R), String> + Sync,
    finish: impl FnOnce(&Ctx, Vec<(String, R)>) -> Result<Value> + Send,
) -> Result<RunOutcome> {
    let cfg = load_config(&args.cfg)?;
    let pipe = Pipeline::new(cfg)?;
    let pool = thread_pool(args.cfg.workers)?;
    let ids = frame_ids(args)?;
    let extra = match bank_args.and_then(|b| b.bank.as_ref()) {
        Some(p) => read_bank(fs::File::open(p).with_context(|| format!("opening bank {}", p.display()))?)
            .with_context(|| format!("reading bank {}", p.display()))?,
        None => Vec::new(),
    };
    fs::create_dir_all(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
    pool.install(|| {
        let frames: Vec<Result<FrameBundle, String>> =
            ids.par_iter().map(|id| dataio::load_frame(&args.input, id).map_err(|e| e.to_string())).collect();
        let bank = if bank_args.is_some() {
            pipe.build_bank(frames.iter().filter_map(|f| f.as_ref().ok()), &extra)
        } else {
            Vec::new()
        };
        let ctx = Ctx { pipe: &pipe, out: &args.output, input: &args.input, bank: &bank };
        let results: Vec<Result<(Counts, R), String>> =
            frames.par_iter().map(|f| f.as_ref().map_err(Clone::clone).and_then(|f| per_frame(&ctx, f))).collect();
        let mut loaded = Loaded { reports: Vec::new(), failed: 0 };
        let mut done = Vec::new();
        for (id, r) in ids.iter().zip(results) {
            match r {
                Ok((counts, v)) => {
                    loaded.reports.push(FrameReport { id: id.clone(), ok: true, error: None, counts });
                    done.push((id.clone(), v));
                }
                Err(e) => {
                    loaded.failed += 1;
                    loaded.reports.push(FrameReport {
                        id: id.clone(),
                        ok: false,
                        error: Some(e),
                        counts: Counts::new(),
                    });
                }
            }
        }
        let extra_summary = finish(&ctx, done)?;
        let mut totals = Counts::new();
        for r in &loaded.reports {
            for (k, v) in &r.counts {
                *totals.entry(k).or_insert(0) += v;
            }
        }
        let mut summary = json!({
            "command": command,
            "frames": loaded.reports,
            "failed": loaded.failed,
            "totals": totals,
            "bank_objects": bank.len(),
            "config": pipe.cfg,
        });
        if !extra_summary.is_null() {
            summary["result"] = extra_summary;
        }
        write_json(&args.output.join("summary.json"), &summary).map_err(anyhow::Error::msg)?;
        for r in loaded.reports.iter().filter(|r| !r.ok) {
            eprintln!("frame {}: {}", r.id, r.error.as_deref().unwrap_or(""));
        }
        Ok(RunOutcome { summary, failed: loaded.failed, keep_going: args.keep_going })
    })
}

fn run_frames(
    command: &str,
    args: &FrameArgs,
    bank_args: Option<&BankArgs>,
    per_frame: impl Fn(&Ctx, &FrameBundle) -> Result<Counts, String> + Sync,
) -> Result<RunOutcome> {
    run_frames_with(command, args, bank_args, |c, f| per_frame(c, f).map(|k| (k, ())), |_, _| Ok(Value::Null))
}

fn voxelize_cmd(ctx: &Ctx, f: &FrameBundle) -> Result<Counts, String> {
    let vox = voxelize(&ctx.pipe.grid, &f.cloud);
    let voxels: Vec<Value> = vox
        .voxels
        .iter()
        .map(|(i, c)| json!([i.i, i.j, i.k, c.points.len(), c.mean.x, c.mean.y, c.mean.z, c.mean.intensity]))
        .collect();
    let doc = json!({
        "frame": f.id,
        "columns": ["i", "j", "k", "count", "mean_x", "mean_y", "mean_z", "mean_intensity"],
        "voxels": voxels,
        "out_of_range": vox.out_of_range,
    });
    write_json(&ctx.out.join("voxels").join(format!("{}.json", f.id)), &doc)?;
    Ok(Counts::from([
        ("points", f.cloud.len() as u64),
        ("voxels", vox.voxels.len() as u64),
        ("out_of_range", vox.out_of_range.len() as u64),
    ]))
}

fn regions_cmd(ctx: &Ctx, f: &FrameBundle) -> Result<Counts, String> {
    let a = ctx.pipe.analyze(f);
    write(&ctx.out.join("masks").join(format!("{}.smrm", f.id)), &encode_mask(&a.mask))?;
    let mut counts = Counts::from([
        ("occupied", a.mask.occupied.len() as u64),
        ("domain", a.mask.domain_size() as u64),
        ("boxes", f.boxes.len() as u64),
        ("empty_boxes", a.empty_boxes.len() as u64),
    ]);
    for (c, n) in a.mask.count_causes() {
        counts.insert(cause_key(c), n as u64);
    }
    Ok(counts)
}

fn cause_key(c: shapemiss::occlusion::Cause) -> &'static str {
    use shapemiss::occlusion::Cause::*;
    match c {
        Observed => "cause_observed",
        ExternalOcclusion => "cause_external_occlusion",
        SignalMiss => "cause_signal_miss",
        SelfOcclusion => "cause_self_occlusion",
        None => "cause_none",
    }
}

fn assemble_cmd(ctx: &Ctx, f: &FrameBundle) -> Result<Counts, String> {
    let a = ctx.pipe.analyze(f);
    let assembled = ctx.pipe.assemble_frame(f, &a, ctx.bank);
    let shapes: Vec<Value> = assembled
        .iter()
        .map(|(s, picks)| {
            json!({
                "shape": s,
                "scores": picks.iter().map(|m| json!({"source": m.key.to_string(), "score": m.score})).collect::<Vec<_>>(),
            })
        })
        .collect();
    write_json(&ctx.out.join("shapes").join(format!("{}.json", f.id)), &shapes)?;
    Ok(Counts::from([
        ("objects", assembled.len() as u64),
        ("native_points", assembled.iter().map(|(s, _)| s.native.len() as u64).sum()),
        ("borrowed_points", assembled.iter().map(|(s, _)| s.borrowed.len() as u64).sum()),
        ("without_sources", assembled.iter().filter(|(s, _)| s.sources.is_empty()).count() as u64),
    ]))
}

fn targets_cmd(ctx: &Ctx, f: &FrameBundle) -> Result<Counts, String> {
    let a = ctx.pipe.analyze(f);
    let shapes = ctx.pipe.shapes(f, &a, ctx.bank);
    let t = ctx.pipe.targets(&a, &shapes);
    let mut bytes = Vec::new();
    t.write_to(&mut bytes).map_err(|e| e.to_string())?;
    write(&ctx.out.join("targets").join(format!("{}.smog", f.id)), &bytes)?;
    let pos = t.cells.iter().filter(|(_, c)| c.value >= 0.5).count() as u64;
    let low = t.cells.iter().filter(|(_, c)| c.value >= 0.5 && c.weight < 1.0).count() as u64;
    Ok(Counts::from([("domain", t.len() as u64), ("positive", pos), ("positive_borrowed_only", low)]))
}

fn evaluate(args: &BankArgs, pred_dir: &Path) -> Result<RunOutcome> {
    let thresholds = load_config(&args.frames.cfg)?.evaluation.thresholds;
    run_frames_with(
        "evaluate",
        &args.frames,
        Some(args),
        |ctx, f| {
            let a = ctx.pipe.analyze(f);
            let shapes = ctx.pipe.shapes(f, &a, ctx.bank);
            let target = ctx.pipe.targets(&a, &shapes);
            let path = pred_dir.join(format!("{}.smog", f.id));
            let bytes = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            let pred = OccupancyGrid::read_from(&bytes[..]).map_err(|e| format!("{}: {e}", path.display()))?;
            let mut acc = ReportAccumulator::new(&ctx.pipe.cfg.evaluation.thresholds);
            acc.add_frame(&pred, &target, &f.boxes).map_err(|e| e.to_string())?;
            Ok((Counts::from([("domain", target.len() as u64)]), acc))
        },
        |ctx, done| {
            let mut total = ReportAccumulator::new(&thresholds);
            for (_, acc) in &done {
                total.merge(acc);
            }
            let report = total.finish();
            write_json(&ctx.out.join("report.json"), &report).map_err(anyhow::Error::msg)?;
            write(&ctx.out.join("report.txt"), report.to_table().as_bytes()).map_err(anyhow::Error::msg)?;
            Ok(serde_json::to_value(&report)?)
        },
    )
}

fn recover_cmd(ctx: &Ctx, f: &FrameBundle, scenario: RecoveryScenario) -> Result<Counts, String> {
    let a = ctx.pipe.analyze(f);
    let shapes = if scenario == RecoveryScenario::Nr { Vec::new() } else { ctx.pipe.shapes(f, &a, ctx.bank) };
    let rec = recover_scenario(&f.cloud, &shapes, &a.mask, scenario, &ctx.pipe.cfg.recovery_params());
    let added = rec.added.iter().filter(|a| **a).count() as u64;
    let [velo, calib, label] = dataio::frame_paths(ctx.out, &f.id);
    write(&velo, &encode_points(&rec.cloud))?;
    let [_, in_calib, in_label] = dataio::frame_paths(ctx.input, &f.id);
    copy(&in_calib, &calib)?;
    if in_label.exists() {
        copy(&in_label, &label)?;
    }
    write_json(
        &ctx.out.join("added").join(format!("{}.json", f.id)),
        &json!({"scenario": scenario.name(), "original": f.cloud.len(), "added": added}),
    )?;
    Ok(Counts::from([("original_points", f.cloud.len() as u64), ("added_points", added)]))
}

fn copy(from: &Path, to: &Path) -> Result<(), String> {
    let bytes = fs::read(from).map_err(|e| format!("{}: {e}", from.display()))?;
    write(to, &bytes)
}

fn export_cmd(ctx: &Ctx, f: &FrameBundle, pred_dir: Option<&Path>) -> Result<Counts, String> {
    let grid = &ctx.pipe.grid;
    let a = ctx.pipe.analyze(f);
    let shapes = ctx.pipe.shapes(f, &a, ctx.bank);
    let dir = ctx.out.join("ply");
    let ply = |name: &str, cloud: &PointCloud, colors: Option<&[Rgb]>| -> Result<(), String> {
        let s = format_ply(cloud, colors).map_err(|e| e.to_string())?;
        write(&dir.join(format!("{}.{name}.ply", f.id)), s.as_bytes())
    };
    ply("cloud", &f.cloud, None)?;
    let (centers, colors): (Vec<_>, Vec<_>) =
        a.mask.causes.iter().map(|(idx, l)| (grid.center(*idx), cause_color(l.cause))).unzip();
    ply("causes", &PointCloud::new(centers), Some(&colors))?;
    let (pts, colors): (Vec<_>, Vec<Rgb>) = shapes
        .iter()
        .flat_map(|s| s.world_points())
        .map(|(p, borrowed)| (p, if borrowed { [230, 40, 40] } else { [230, 230, 230] }))
        .unzip();
    let mut counts = Counts::from([("causes", a.mask.causes.len() as u64), ("shape_points", pts.len() as u64)]);
    ply("shapes", &PointCloud::new(pts), Some(&colors))?;
    if let Some(pd) = pred_dir {
        let path = pd.join(format!("{}.smog", f.id));
        let bytes = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let pred = OccupancyGrid::read_from(&bytes[..]).map_err(|e| format!("{}: {e}", path.display()))?;
        let cells = |g: &OccupancyGrid| -> (PointCloud, Vec<Rgb>) {
            let (p, c): (Vec<_>, Vec<_>) = g
                .cells
                .iter()
                .filter(|(_, c)| c.value > 0.0)
                .map(|(i, c)| (g.grid.center(*i), probability_gray(c.value)))
                .unzip();
            (PointCloud::new(p), c)
        };
        let (p, c) = cells(&pred);
        ply("pred", &p, Some(&c))?;
        let cgrid = ctx.pipe.cfg.cartesian_grid().map_err(|e| e.to_string())?;
        let cart = to_cartesian_probability(&pred, &cgrid).map_err(|e| e.to_string())?;
        let levels = maxpool_pyramid(&cart, ctx.pipe.cfg.evaluation.pyramid_levels).map_err(|e| e.to_string())?;
        for (n, level) in levels.iter().enumerate() {
            let (p, c) = cells(level);
            ply(&format!("pred_cartesian_l{n}"), &p, Some(&c))?;
        }
        counts.insert("pred_cells", pred.len() as u64);
    }
    Ok(counts)
}

fn simulate(
    a: &ConfigArgs,
    output: &Path,
    scenes: usize,
    seed: u64,
    scene_config: Option<&Path>,
) -> Result<RunOutcome> {
    let cfg = load_config(a)?;
    let grid = cfg.spherical_grid()?;
    let base: SceneConfig = match scene_config {
        Some(p) => toml::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing scene config {}", p.display()))?,
        None => SceneConfig::default(),
    };
    let pool = thread_pool(a.workers)?;
    fs::create_dir_all(output)?;
    let results: Vec<Result<(String, Counts, Vec<ObjectInstance>)>> = pool.install(|| {
        (0..scenes)
            .into_par_iter()
            .map(|n| {
                let id = format!("{n:06}");
                let sc = SceneConfig { seed: seed.wrapping_add(n as u64), ..base.clone() };
                let scene = generate_default(&sc, &grid).with_context(|| format!("scene {id}"))?;
                let boxes = scene.boxes();
                let frame =
                    FrameBundle { id: id.clone(), cloud: scene.cloud.clone(), boxes, calib: Calibration::nominal() };
                dataio::write_frame(output, &frame)?;
                let truth: Vec<ObjectInstance> = scene
                    .objects
                    .iter()
                    .zip(&scene.true_shapes)
                    .enumerate()
                    .map(|(i, (o, pts))| ObjectInstance {
                        key: ObjectKey::new(format!("{id}/truth"), i as u32),
                        class: o.class,
                        box3d: o.label,
                        points: pts.clone(),
                    })
                    .collect();
                let counts = Counts::from([
                    ("points", scene.cloud.len() as u64),
                    ("objects", scene.objects.len() as u64),
                    ("occluders", scene.occluders.len() as u64),
                    ("dropped_beams", scene.log.dropped().len() as u64),
                ]);
                Ok((id, counts, truth))
            })
            .collect()
    });
    let mut frames = Vec::new();
    let mut truth = Vec::new();
    for r in results {
        let (id, counts, t) = r?;
        frames.push(FrameReport { id, ok: true, error: None, counts });
        truth.extend(t);
    }
    let mut bytes = Vec::new();
    write_bank(&mut bytes, &truth)?;
    write(&output.join("truth_bank.sbnk"), &bytes).map_err(anyhow::Error::msg)?;
    let summary = json!({
        "command": "simulate",
        "frames": frames,
        "failed": 0,
        "seed": seed,
        "scene_config": base,
        "config": cfg,
    });
    write_json(&output.join("summary.json"), &summary).map_err(anyhow::Error::msg)?;
    Ok(RunOutcome { summary, failed: 0, keep_going: false })
}
