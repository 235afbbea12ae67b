//! Base-frame training and the per-frame streaming loop:
//! band → activate → pilot → guidance + fill-back → guided tune → prune → delta.

use std::path::{Path, PathBuf};

use log::{debug, info};

use crate::band::{activate_band, compute_band};
use crate::codec::{apply_delta, encode_delta, grid_masks, DiffMasks, FrameDelta};
use crate::config::PipelineConfig;
use crate::dataset::FrameSet;
use crate::error::{Error, Result};
use crate::grid::{load_checkpoint, save_checkpoint, OccupancyMask, SparseGrid, Voxel};
use crate::pilot::{fill_back, guidance_mask, make_pilot};
use crate::trainer::{train, RayBatch, TrainReport, TrainableSet};

/// Training rays of a frame for a grid box.
fn ray_pool(frame: &FrameSet, grid: &SparseGrid<f32>) -> Result<RayBatch<f32>> {
    let pool = RayBatch::from_views(frame.pairs(), grid.dims());
    if pool.is_empty() {
        return Err(Error::NoRays);
    }
    Ok(pool)
}

/// Coarse-to-fine base model: dense start, then train, prune and upsample per stage.
pub fn train_base(frame0: &FrameSet, cfg: &PipelineConfig) -> Result<SparseGrid<f32>> {
    cfg.validate()?;
    if frame0.views.len() < 2 {
        return Err(Error::Config(format!("base training needs at least 2 views, got {}", frame0.views.len())));
    }
    let dims = cfg.grid_dims()?;
    let mut grid = SparseGrid::filled(&dims, Voxel::new(cfg.base_init_sigma as f32, [0.0; 27]));
    let pool = ray_pool(frame0, &grid)?;
    if cfg.base_iters == 0 {
        return Ok(grid);
    }
    let stages = cfg.base_upsamples + 1;
    let opts = cfg.render_options();
    let mut rng = cfg.frame_rng(0);
    for stage in 0..stages {
        let iters = cfg.base_iters / stages + usize::from(stage < cfg.base_iters % stages);
        let trainable = TrainableSet::all(&grid);
        let rep = train(&mut grid, &pool, &trainable, &cfg.train(iters), &opts, &mut rng)?;
        let before = grid.len();
        grid = grid.prune(cfg.base_prune as f32);
        info!(
            "base stage {stage}: res {:?}, loss {:.5} -> {:.5}, voxels {before} -> {}",
            grid.dims().res(),
            rep.first_loss,
            rep.last_loss,
            grid.len()
        );
        if stage + 1 < stages {
            grid = grid.upsample();
        }
    }
    Ok(grid)
}

/// Everything one streaming step produced.
#[derive(Clone, Debug)]
pub struct StepOutput {
    /// `apply_delta(grid_prev, delta)`, the model every later frame builds on.
    pub grid: SparseGrid<f32>,
    pub delta: FrameDelta,
    /// Voxels whose parameters were allowed to change: the guidance mask, or
    /// the band when the pilot is off. Everything else is carried over bit-identically.
    pub region: OccupancyMask,
    pub trainable: TrainableSet,
    pub pilot_masks: Option<DiffMasks>,
    pub pilot_report: Option<TrainReport>,
    pub full_report: TrainReport,
}

/// Tunes frame `index` starting from `grid_prev` and encodes the difference.
///
/// Only `grid_prev` and this frame's views are consulted.
pub fn stream_step(
    grid_prev: &SparseGrid<f32>,
    frame: &FrameSet,
    index: u32,
    cfg: &PipelineConfig,
) -> Result<StepOutput> {
    cfg.validate()?;
    let dims = grid_prev.dims();
    let opts = cfg.render_options();
    let params = cfg.delta_params();
    let pool = ray_pool(frame, grid_prev)?;
    let mut rng = cfg.frame_rng(index);
    let band_of = |m: &OccupancyMask, rd: usize, re: usize| {
        if cfg.band {
            compute_band(m, rd, re)
        } else {
            m.clone()
        }
    };
    let band = band_of(grid_prev.mask(), cfg.rho_d, cfg.rho_e);

    let (start, region, pilot_masks, pilot_report) = if cfg.pilot {
        let pilot_prev = make_pilot(grid_prev);
        let pilot_band = band_of(pilot_prev.mask(), cfg.rho_d.div_ceil(2), cfg.rho_e.div_ceil(2));
        let (mut pilot, pt) = activate_band(&pilot_prev, &pilot_band)?;
        let tcfg = cfg.stream_train(cfg.pilot_iters).with_tv_scale(cfg.pilot_tv_scale);
        let rep = train(&mut pilot, &pool, &pt, &tcfg, &opts, &mut rng)?;
        let thr = cfg.stream_prune as f32;
        let pilot = pilot.retain(|i, v| !(pt.mask().get(i) || !pilot_prev.mask().get(i)) || v.density() > thr);
        let masks = grid_masks(&pilot_prev, &pilot, &params)?;
        let g = guidance_mask(&masks, dims)?;
        debug!(
            "frame {index}: pilot add {} erase {} remain {}, guidance {}",
            masks.m_add.count(),
            masks.m_erase.count(),
            masks.m_remain.count(),
            g.count()
        );
        (fill_back(grid_prev, &pilot, &masks)?, g, Some(masks), Some(rep))
    } else {
        (grid_prev.clone(), band.clone(), None, None)
    };

    let (mut grid, _) = activate_band(&start, &band)?;
    let trainable = TrainableSet::restricted(&grid, &region);
    let full_report = train(&mut grid, &pool, &trainable, &cfg.stream_train(cfg.full_iters), &opts, &mut rng)?;
    let thr = cfg.stream_prune as f32;
    let tuned = grid.retain(|i, v| !(trainable.mask().get(i) || !grid_prev.mask().get(i)) || v.density() > thr);

    let delta = encode_delta(grid_prev, &tuned, index, &params)?;
    let grid = apply_delta(grid_prev, &delta)?;
    debug!(
        "frame {index}: trainable {}, voxels {} -> {}, add {} remain {}",
        trainable.len(),
        grid_prev.len(),
        grid.len(),
        delta.payload_add.len(),
        delta.payload_remain.len()
    );
    Ok(StepOutput { grid, delta, region, trainable, pilot_masks, pilot_report, full_report })
}

/// `V^0 + Σ_{j≤t} δ_j`, applying deltas in order. `deltas[j]` must be frame `j + 1`.
pub fn replay(base: &SparseGrid<f32>, deltas: &[FrameDelta], t: usize) -> Result<SparseGrid<f32>> {
    if t > deltas.len() {
        return Err(Error::Config(format!("frame {t} is beyond the last delta ({})", deltas.len())));
    }
    let mut g = base.clone();
    for (j, d) in deltas[..t].iter().enumerate() {
        let expected = j as u32 + 1;
        if d.frame != expected {
            return Err(Error::FrameGap { expected, found: d.frame });
        }
        g = apply_delta(&g, d)?;
    }
    Ok(g)
}

/// Contents of `manifest.txt` in a checkpoint directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub res: [usize; 3],
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
    pub epsilon: f64,
    pub rho_d: usize,
    pub rho_e: usize,
    /// Number of stored deltas.
    pub frames: usize,
}

impl Manifest {
    pub fn new(grid: &SparseGrid<f32>, cfg: &PipelineConfig, frames: usize) -> Self {
        let d = grid.dims();
        Self {
            res: d.res(),
            bbox_min: d.world_min,
            bbox_max: d.world_max,
            epsilon: cfg.epsilon,
            rho_d: cfg.rho_d,
            rho_e: cfg.rho_e,
            frames,
        }
    }

    pub fn to_text(&self) -> String {
        let j = |v: &[f64; 3]| format!("{} {} {}", v[0], v[1], v[2]);
        format!(
            "res = {} {} {}\nbbox_min = {}\nbbox_max = {}\nepsilon = {}\nrho_d = {}\nrho_e = {}\nframes = {}\n",
            self.res[0],
            self.res[1],
            self.res[2],
            j(&self.bbox_min),
            j(&self.bbox_max),
            self.epsilon,
            self.rho_d,
            self.rho_e,
            self.frames
        )
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut m = Manifest {
            res: [0; 3],
            bbox_min: [0.0; 3],
            bbox_max: [0.0; 3],
            epsilon: 0.0,
            rho_d: 0,
            rho_e: 0,
            frames: 0,
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: &str| Error::Parse { path: path.to_path_buf(), line: i + 1, msg: msg.into() };
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key = value"))?;
            let nums: Vec<f64> =
                v.split_whitespace().map(|t| t.parse().map_err(|_| err("not a number"))).collect::<Result<_>>()?;
            let three = || -> Result<[f64; 3]> { nums.clone().try_into().map_err(|_| err("expected 3 values")) };
            let one = || -> Result<f64> { (nums.len() == 1).then(|| nums[0]).ok_or_else(|| err("expected 1 value")) };
            match k.trim() {
                "res" => m.res = three()?.map(|x| x as usize),
                "bbox_min" => m.bbox_min = three()?,
                "bbox_max" => m.bbox_max = three()?,
                "epsilon" => m.epsilon = one()?,
                "rho_d" => m.rho_d = one()? as usize,
                "rho_e" => m.rho_e = one()? as usize,
                "frames" => m.frames = one()? as usize,
                _ => return Err(err("unknown key")),
            }
        }
        Ok(m)
    }
}

pub const BASE_FILE: &str = "base.sgrd";
pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn delta_path(dir: &Path, frame: usize) -> PathBuf {
    dir.join(format!("delta_{frame:04}.sdlt"))
}

pub fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    std::fs::write(dir.join(MANIFEST_FILE), m.to_text())?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let p = dir.join(MANIFEST_FILE);
    Manifest::parse(&std::fs::read_to_string(&p)?, &p)
}

/// Writes `base.sgrd` and a manifest with zero frames.
pub fn write_base(dir: &Path, grid: &SparseGrid<f32>, cfg: &PipelineConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_checkpoint(grid, dir.join(BASE_FILE))?;
    write_manifest(dir, &Manifest::new(grid, cfg, 0))
}

pub fn load_base(dir: &Path) -> Result<SparseGrid<f32>> {
    load_checkpoint(dir.join(BASE_FILE))
}

/// Number of consecutive delta files `delta_0001.sdlt, delta_0002.sdlt, …` in `dir`.
pub fn count_deltas(dir: &Path) -> usize {
    let mut n = 0;
    while delta_path(dir, n + 1).is_file() {
        n += 1;
    }
    n
}

/// Loads deltas `1..=upto`.
pub fn load_deltas(dir: &Path, upto: usize) -> Result<Vec<FrameDelta>> {
    (1..=upto).map(|i| FrameDelta::load(delta_path(dir, i))).collect()
}

/// Model at frame `t` rebuilt from a checkpoint directory.
pub fn replay_dir(dir: &Path, t: usize) -> Result<SparseGrid<f32>> {
    let available = count_deltas(dir);
    if t > available {
        return Err(Error::Config(format!("frame {t} is beyond the last delta ({available})")));
    }
    replay(&load_base(dir)?, &load_deltas(dir, t)?, t)
}
