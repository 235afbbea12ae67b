use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use streamgrid::codec::{delta_stats, FrameDelta, DELTA_HEADER_LEN};
use streamgrid::dataset::{load_dataset, write_dataset, Dataset, FrameSet, SyntheticScene};
use streamgrid::pipeline::{
    count_deltas, delta_path, load_base, read_manifest, replay_dir, write_base, write_manifest, Manifest, BASE_FILE,
    MANIFEST_FILE,
};
use streamgrid::{psnr, render_image, stream_step, train_base, Camera, GridF32, PipelineConfig};

const LOG_FILE: &str = "stream.csv";
const LOG_HEADER: &str = "frame,psnr,delta_bytes,seconds";

#[derive(Parser)]
#[command(name = "streamgrid", version, about = "Streaming sparse-voxel radiance fields")]
struct Cli {
    /// Preset (desk, paper-n3dv, paper-meetroom) or path to a key = value config file
    #[arg(long, global = true, default_value = "desk")]
    config: String,
    /// Overrides the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for rendering (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Check inputs and configuration, write nothing
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the frame-0 model and write base.sgrd plus a manifest
    TrainBase {
        dataset: PathBuf,
        out_dir: PathBuf,
        /// View indices kept out of training and used for the test PSNR
        #[arg(long, value_delimiter = ',')]
        held_out: Vec<usize>,
    },
    /// Tune every later frame and write one delta per frame; resumes after the last delta found
    TrainStream {
        dataset: PathBuf,
        base_dir: PathBuf,
        /// Defaults to the base directory
        out_dir: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        held_out: Vec<usize>,
        /// Stop after this many new frames
        #[arg(long)]
        max_frames: Option<usize>,
    },
    /// Replay a checkpoint directory to `frame` and render one image
    Render {
        checkpoint: PathBuf,
        frame: usize,
        out: PathBuf,
        /// Take the camera from this dataset's poses.txt
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// View index within --dataset
        #[arg(long, default_value_t = 0)]
        view: usize,
        /// Orbit camera around the box center: azimuth and elevation in degrees, distance
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [30.0, 20.0, 3.0])]
        orbit: Vec<f64>,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 50.0)]
        fov: f64,
    },
    /// Print sizes and mask counts of a .sdlt file
    Inspect {
        delta: PathBuf,
        /// Checkpoint directory holding the frames before this delta (adds erase counts)
        #[arg(long)]
        prev: Option<PathBuf>,
    },
    /// Write a synthetic sphere dataset (training views first, then held-out views)
    Synth {
        out_dir: PathBuf,
        #[arg(long, default_value_t = 31)]
        frames: usize,
        #[arg(long, value_enum, default_value_t = SceneKind::Moving)]
        scene: SceneKind,
        /// Ground-truth grid resolution
        #[arg(long, default_value_t = 64)]
        res: usize,
        /// Image width and height
        #[arg(long, default_value_t = 40)]
        size: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneKind {
    Moving,
    Static,
}

struct Failure {
    code: u8,
    msg: String,
}

impl From<streamgrid::Error> for Failure {
    fn from(e: streamgrid::Error) -> Self {
        Failure { code: 1, msg: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 1, msg: e.to_string() }
    }
}

fn fail(msg: impl Into<String>) -> Failure {
    Failure { code: 1, msg: msg.into() }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STREAMGRID_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| fail(format!("thread pool: {e}")))?;
    }
    let mut cfg = PipelineConfig::resolve(&cli.config)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let dry = cli.dry_run;
    match cli.cmd {
        Cmd::TrainBase { dataset, out_dir, held_out } => train_base_cmd(&cfg, &dataset, &out_dir, &held_out, dry),
        Cmd::TrainStream { dataset, base_dir, out_dir, held_out, max_frames } => {
            let out = out_dir.unwrap_or_else(|| base_dir.clone());
            train_stream_cmd(&cfg, &dataset, &base_dir, &out, &held_out, max_frames, dry)
        }
        Cmd::Render { checkpoint, frame, out, dataset, view, orbit, size, fov } => {
            render_cmd(&cfg, &checkpoint, frame, &out, dataset.as_deref(), view, &orbit, size, fov, dry)
        }
        Cmd::Inspect { delta, prev } => inspect_cmd(&delta, prev.as_deref()),
        Cmd::Synth { out_dir, frames, scene, res, size } => synth_cmd(&out_dir, frames, scene, res, size, dry),
    }
}

fn open_dataset(path: &Path) -> CliResult<Dataset> {
    if !path.is_dir() {
        return Err(Failure { code: 2, msg: format!("dataset not found: {}", path.display()) });
    }
    Ok(load_dataset(path)?)
}

fn check_held_out(ds: &Dataset, held_out: &[usize]) -> CliResult {
    if let Some(&v) = held_out.iter().find(|&&v| v >= ds.cameras.len()) {
        return Err(fail(format!("held-out view {v} does not exist ({} views)", ds.cameras.len())));
    }
    if held_out.len() >= ds.cameras.len() && !ds.cameras.is_empty() {
        return Err(fail("every view is held out"));
    }
    Ok(())
}

fn mean_psnr(grid: &GridF32, views: &FrameSet, cfg: &PipelineConfig) -> f64 {
    let opts = cfg.render_options();
    let all: Vec<f64> = views.pairs().map(|(cam, img)| psnr(&render_image(grid, cam, &opts), img)).collect();
    all.iter().sum::<f64>() / all.len().max(1) as f64
}

fn train_base_cmd(cfg: &PipelineConfig, dataset: &Path, out: &Path, held_out: &[usize], dry: bool) -> CliResult {
    let ds = open_dataset(dataset)?;
    check_held_out(&ds, held_out)?;
    if ds.n_frames == 0 {
        return Err(fail(format!("{} has no frames", dataset.display())));
    }
    let f0 = ds.frame(0)?;
    let (train, test) = f0.split(held_out);
    if dry {
        println!(
            "config ok; frame 0 has {} training and {} held-out views; would write {}",
            train.views.len(),
            test.views.len(),
            out.join(BASE_FILE).display()
        );
        return Ok(());
    }
    let t = Instant::now();
    let grid = train_base(&train, cfg)?;
    write_base(out, &grid, cfg)?;
    println!("base: {} voxels in {:.1}s", grid.len(), t.elapsed().as_secs_f64());
    println!("train PSNR {:.2}", mean_psnr(&grid, &train, cfg));
    if !test.views.is_empty() {
        println!("test PSNR {:.2}", mean_psnr(&grid, &test, cfg));
    }
    Ok(())
}

/// Keeps log rows for frames that have a delta on disk, so a resumed run
/// never duplicates a row.
fn trim_log(path: &Path, done: usize) -> CliResult {
    let mut text = format!("{LOG_HEADER}\n");
    if let Ok(old) = fs::read_to_string(path) {
        for line in old.lines().skip(1) {
            let frame: Option<usize> = line.split(',').next().and_then(|f| f.parse().ok());
            if frame.is_some_and(|f| f >= 1 && f <= done) {
                let _ = writeln!(text, "{line}");
            }
        }
    }
    fs::write(path, text)?;
    Ok(())
}

fn train_stream_cmd(
    cfg: &PipelineConfig,
    dataset: &Path,
    base_dir: &Path,
    out: &Path,
    held_out: &[usize],
    max_frames: Option<usize>,
    dry: bool,
) -> CliResult {
    let ds = open_dataset(dataset)?;
    check_held_out(&ds, held_out)?;
    if !base_dir.join(BASE_FILE).is_file() {
        return Err(fail(format!("no {BASE_FILE} in {}", base_dir.display())));
    }
    let done = if out.join(BASE_FILE).is_file() { count_deltas(out) } else { 0 };
    let last = ds.n_frames.saturating_sub(1);
    let end = max_frames.map_or(last, |m| last.min(done + m));
    if dry {
        let todo = end.saturating_sub(done);
        println!("config ok; {done} deltas present, would tune {todo} frames into {}", out.display());
        return Ok(());
    }
    if !out.join(BASE_FILE).is_file() {
        fs::create_dir_all(out)?;
        fs::copy(base_dir.join(BASE_FILE), out.join(BASE_FILE))?;
        let base = load_base(out)?;
        write_manifest(out, &Manifest::new(&base, cfg, 0))?;
    }
    let mut grid = replay_dir(out, done)?;
    if done > 0 {
        info!("resuming after frame {done}");
    }
    let log_path = out.join(LOG_FILE);
    trim_log(&log_path, done)?;
    let mut log = fs::OpenOptions::new().append(true).open(&log_path)?;
    for i in done + 1..=end {
        let t = Instant::now();
        let frame = ds.frame(i)?;
        let (train, test) = frame.split(held_out);
        let step = stream_step(&grid, &train, i as u32, cfg)?;
        let path = delta_path(out, i);
        let tmp = path.with_extension("sdlt.tmp");
        step.delta.save(&tmp)?;
        fs::rename(&tmp, &path)?;
        let bytes = fs::metadata(&path)?.len();
        grid = step.grid;
        let seconds = t.elapsed().as_secs_f64();
        let eval = if test.views.is_empty() { &train } else { &test };
        let row = format!("{i},{:.4},{bytes},{seconds:.3}", mean_psnr(&grid, eval, cfg));
        println!("{row}");
        writeln!(log, "{row}")?;
        write_manifest(out, &Manifest::new(&grid, cfg, i))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn render_cmd(
    cfg: &PipelineConfig,
    checkpoint: &Path,
    frame: usize,
    out: &Path,
    dataset: Option<&Path>,
    view: usize,
    orbit: &[f64],
    size: usize,
    fov: f64,
    dry: bool,
) -> CliResult {
    if !checkpoint.join(MANIFEST_FILE).is_file() {
        return Err(fail(format!("{} is not a checkpoint directory", checkpoint.display())));
    }
    let available = count_deltas(checkpoint);
    if frame > available {
        return Err(fail(format!("frame {frame} is beyond the last delta ({available})")));
    }
    let camera = match dataset {
        Some(d) => {
            let ds = open_dataset(d)?;
            ds.cameras.get(view).cloned().ok_or_else(|| fail(format!("dataset has no view {view}")))?
        }
        None => {
            let m = read_manifest(checkpoint)?;
            let center: [f64; 3] = std::array::from_fn(|a| 0.5 * (m.bbox_min[a] + m.bbox_max[a]));
            let (az, el, r) = (orbit[0].to_radians(), orbit[1].to_radians(), orbit[2]);
            let eye =
                [center[0] + r * az.cos() * el.cos(), center[1] + r * el.sin(), center[2] + r * az.sin() * el.cos()];
            Camera::look_at(eye, center, [0.0, 1.0, 0.0], fov, size, size)
        }
    };
    camera.validate()?;
    let grid = replay_dir(checkpoint, frame)?;
    if dry {
        println!("config ok; frame {frame} has {} voxels, would write {}", grid.len(), out.display());
        return Ok(());
    }
    render_image(&grid, &camera, &cfg.render_options()).save_png(out)?;
    Ok(())
}

fn inspect_cmd(path: &Path, prev: Option<&Path>) -> CliResult {
    let bytes = fs::read(path)?;
    let delta = FrameDelta::from_bytes(&bytes)?;
    let prev_mask = match prev {
        Some(dir) => {
            let t = (delta.frame as usize).checked_sub(1).ok_or_else(|| fail("frame 0 has no predecessor"))?;
            Some(replay_dir(dir, t)?.mask().clone())
        }
        None => None,
    };
    let s = delta_stats(&delta, prev_mask.as_ref());
    let res = delta.dims().res();
    println!("frame          {}", s.frame);
    println!("epsilon        {}", s.epsilon);
    println!("resolution     {}x{}x{}", res[0], res[1], res[2]);
    println!("occupied       {}", s.n_occupied);
    println!("added          {}", s.n_add);
    println!("remain         {}", s.n_remain);
    if let Some(n) = s.n_erase {
        println!("erased         {n}");
    }
    if let Some(n) = s.raw {
        println!("raw bytes      {n}");
    }
    println!("thresholded    {}", s.post_threshold);
    println!("half bytes     {}", s.post_half);
    if let (Some(a), Some(b)) = (s.diff_masks_raw, s.diff_masks_deflated) {
        println!("diff masks     {a} -> {b} deflated");
    }
    println!("header         {DELTA_HEADER_LEN}");
    println!("compressed     {}", s.compressed);
    println!("file           {}", bytes.len());
    if DELTA_HEADER_LEN + s.compressed != bytes.len() || s.file != bytes.len() {
        return Err(fail(format!(
            "size mismatch: header {DELTA_HEADER_LEN} + body {} != file {}",
            s.compressed,
            bytes.len()
        )));
    }
    Ok(())
}

fn synth_cmd(out: &Path, frames: usize, kind: SceneKind, res: usize, size: usize, dry: bool) -> CliResult {
    let scene = match kind {
        SceneKind::Moving => SyntheticScene::moving_sphere(),
        SceneKind::Static => SyntheticScene::static_scene(),
    }
    .resized(res, size)?;
    let n_train = scene.train_cameras.len();
    let n_test = scene.test_cameras.len();
    let held: Vec<String> = (n_train..n_train + n_test).map(|v| v.to_string()).collect();
    if dry {
        println!("would write {frames} frames of {} views to {}", n_train + n_test, out.display());
        return Ok(());
    }
    let sets: Vec<FrameSet> = (0..frames)
        .map(|i| {
            let mut f = scene.frame(i);
            f.train.views.append(&mut f.test.views);
            f.train
        })
        .collect();
    write_dataset(out, &sets)?;
    println!("wrote {frames} frames of {} views; held-out views: {}", n_train + n_test, held.join(","));
    Ok(())
}
