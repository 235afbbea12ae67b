//! Pipeline configuration as plain `key = value` text.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::DeltaParams;
use crate::error::{Error, Result};
use crate::grid::GridDims;
use crate::render::RenderOptions;
use crate::trainer::TrainConfig;

/// Every knob of base training and per-frame streaming.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
    /// Resolution of the dense starting grid.
    pub base_res: [usize; 3],
    /// Number of ×2 upsampling stages after the first.
    pub base_upsamples: usize,
    /// Total base iterations, split evenly across stages.
    pub base_iters: usize,
    pub base_init_sigma: f64,
    /// Activated-opacity threshold used to sparsify after every base stage.
    pub base_prune: f64,
    pub batch_rays: usize,
    pub lr_sigma: f64,
    pub lr_sh: f64,
    pub rms_decay: f64,
    pub lambda_tv_sigma: f64,
    pub lambda_tv_sh: f64,
    /// Learning rates of per-frame tuning (pilot and full).
    pub stream_lr_sigma: f64,
    pub stream_lr_sh: f64,
    pub rho_d: usize,
    pub rho_e: usize,
    /// Tune the narrow band; when off only the existing voxels are tuned.
    pub band: bool,
    /// Gate full-resolution tuning with the pilot model.
    pub pilot: bool,
    pub pilot_iters: usize,
    pub full_iters: usize,
    pub pilot_tv_scale: f64,
    /// Tuned voxels with activated opacity at or below this are dropped.
    pub stream_prune: f64,
    pub epsilon: f64,
    pub sigma_epsilon: Option<f64>,
    pub background: [f64; 3],
    pub seed: u64,
}

pub const PRESETS: [&str; 3] = ["desk", "paper-n3dv", "paper-meetroom"];

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl PipelineConfig {
    /// Small-grid defaults sized for a laptop CPU.
    pub fn desk() -> Self {
        Self {
            bbox_min: [-1.0; 3],
            bbox_max: [1.0; 3],
            base_res: [32; 3],
            base_upsamples: 1,
            base_iters: 2000,
            base_init_sigma: 0.1,
            base_prune: 0.5,
            batch_rays: 2048,
            lr_sigma: 1.0,
            lr_sh: 5e-2,
            rms_decay: 0.95,
            lambda_tv_sigma: 5e-6,
            lambda_tv_sh: 5e-5,
            stream_lr_sigma: 0.3,
            stream_lr_sh: 1e-2,
            rho_d: 2,
            rho_e: 2,
            band: true,
            pilot: true,
            pilot_iters: 200,
            full_iters: 100,
            pilot_tv_scale: 10.0,
            stream_prune: 0.0,
            epsilon: 4.0,
            sigma_epsilon: Some(2.0),
            background: [0.0; 3],
            seed: 0,
        }
    }

    /// Iteration counts, batch sizes and ε of the N3DV experiments.
    pub fn paper_n3dv() -> Self {
        Self {
            base_res: [256, 256, 128],
            base_upsamples: 0,
            base_iters: 128_000,
            batch_rays: 5000,
            pilot_iters: 750,
            full_iters: 500,
            lr_sigma: 30.0,
            lr_sh: 1e-2,
            lambda_tv_sigma: 5e-4,
            lambda_tv_sh: 5e-3,
            stream_lr_sigma: 30.0,
            stream_lr_sh: 1e-2,
            epsilon: 1.0 / 27.0,
            sigma_epsilon: None,
            ..Self::desk()
        }
    }

    /// Iteration counts, batch sizes and ε of the Meet Room experiments.
    pub fn paper_meetroom() -> Self {
        Self { pilot_iters: 1000, epsilon: 1.5 / 27.0, ..Self::paper_n3dv() }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "paper-n3dv" => Some(Self::paper_n3dv()),
            "paper-meetroom" => Some(Self::paper_meetroom()),
            _ => None,
        }
    }

    /// A preset name or a path to a config file.
    pub fn resolve(spec: &str) -> Result<Self> {
        if let Some(c) = Self::preset(spec) {
            return Ok(c);
        }
        Self::load(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    /// Parses `key = value` lines over the desk defaults; `#` starts a comment.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut c = Self::desk();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: i + 1, msg };
            let (key, val) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            let (key, val) = (key.trim(), val.trim());
            c.set(key, val).map_err(err)?;
        }
        c.validate()?;
        Ok(c)
    }

    fn set(&mut self, key: &str, val: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("invalid value {v:?}"))
        }
        fn vec3<T: std::str::FromStr + Copy + Default>(v: &str) -> std::result::Result<[T; 3], String> {
            let parts: Vec<T> = v.split_whitespace().map(num).collect::<std::result::Result<_, _>>()?;
            match parts.len() {
                1 => Ok([parts[0]; 3]),
                3 => Ok([parts[0], parts[1], parts[2]]),
                n => Err(format!("expected 1 or 3 values, found {n}")),
            }
        }
        fn flag(v: &str) -> std::result::Result<bool, String> {
            match v {
                "true" | "on" | "1" => Ok(true),
                "false" | "off" | "0" => Ok(false),
                _ => Err(format!("invalid boolean {v:?}")),
            }
        }
        match key {
            "bbox_min" => self.bbox_min = vec3(val)?,
            "bbox_max" => self.bbox_max = vec3(val)?,
            "base_res" => self.base_res = vec3(val)?,
            "base_upsamples" => self.base_upsamples = num(val)?,
            "base_iters" => self.base_iters = num(val)?,
            "base_init_sigma" => self.base_init_sigma = num(val)?,
            "base_prune" => self.base_prune = num(val)?,
            "batch_rays" => self.batch_rays = num(val)?,
            "lr_sigma" => self.lr_sigma = num(val)?,
            "lr_sh" => self.lr_sh = num(val)?,
            "rms_decay" => self.rms_decay = num(val)?,
            "lambda_tv_sigma" => self.lambda_tv_sigma = num(val)?,
            "lambda_tv_sh" => self.lambda_tv_sh = num(val)?,
            "stream_lr_sigma" => self.stream_lr_sigma = num(val)?,
            "stream_lr_sh" => self.stream_lr_sh = num(val)?,
            "rho_d" => self.rho_d = num(val)?,
            "rho_e" => self.rho_e = num(val)?,
            "band" => self.band = flag(val)?,
            "pilot" => self.pilot = flag(val)?,
            "pilot_iters" => self.pilot_iters = num(val)?,
            "full_iters" => self.full_iters = num(val)?,
            "pilot_tv_scale" => self.pilot_tv_scale = num(val)?,
            "stream_prune" => self.stream_prune = num(val)?,
            "epsilon" => self.epsilon = num(val)?,
            "sigma_epsilon" => self.sigma_epsilon = if val == "off" { None } else { Some(num(val)?) },
            "background" => self.background = vec3(val)?,
            "seed" => self.seed = num(val)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Serializes every key; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let v3 = |v: &[f64; 3]| format!("{} {} {}", v[0], v[1], v[2]);
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("bbox_min", v3(&self.bbox_min));
        kv("bbox_max", v3(&self.bbox_max));
        kv("base_res", format!("{} {} {}", self.base_res[0], self.base_res[1], self.base_res[2]));
        kv("base_upsamples", self.base_upsamples.to_string());
        kv("base_iters", self.base_iters.to_string());
        kv("base_init_sigma", self.base_init_sigma.to_string());
        kv("base_prune", self.base_prune.to_string());
        kv("batch_rays", self.batch_rays.to_string());
        kv("lr_sigma", self.lr_sigma.to_string());
        kv("lr_sh", self.lr_sh.to_string());
        kv("rms_decay", self.rms_decay.to_string());
        kv("lambda_tv_sigma", self.lambda_tv_sigma.to_string());
        kv("lambda_tv_sh", self.lambda_tv_sh.to_string());
        kv("stream_lr_sigma", self.stream_lr_sigma.to_string());
        kv("stream_lr_sh", self.stream_lr_sh.to_string());
        kv("rho_d", self.rho_d.to_string());
        kv("rho_e", self.rho_e.to_string());
        kv("band", self.band.to_string());
        kv("pilot", self.pilot.to_string());
        kv("pilot_iters", self.pilot_iters.to_string());
        kv("full_iters", self.full_iters.to_string());
        kv("pilot_tv_scale", self.pilot_tv_scale.to_string());
        kv("stream_prune", self.stream_prune.to_string());
        kv("epsilon", self.epsilon.to_string());
        kv("sigma_epsilon", self.sigma_epsilon.map_or("off".into(), |v| v.to_string()));
        kv("background", v3(&self.background));
        kv("seed", self.seed.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.grid_dims()?;
        self.train(0).validate()?;
        self.stream_train(0).validate()?;
        if self.base_init_sigma < 0.0 || self.base_prune < 0.0 || self.stream_prune < 0.0 {
            return Err(Error::Config("opacity thresholds must be non-negative".into()));
        }
        if !(self.epsilon >= 0.0) || self.sigma_epsilon.is_some_and(|s| !(s >= 0.0)) {
            return Err(Error::Config("epsilon must be non-negative".into()));
        }
        if !(self.pilot_tv_scale >= 0.0) {
            return Err(Error::Config("pilot_tv_scale must be non-negative".into()));
        }
        if self.background.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::Config("background must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Dims of the dense starting grid.
    pub fn grid_dims(&self) -> Result<GridDims> {
        GridDims::new(self.base_res, self.bbox_min, self.bbox_max)
    }

    /// Optimizer settings of base training.
    pub fn train(&self, iters: usize) -> TrainConfig {
        TrainConfig {
            lr_sigma: self.lr_sigma,
            lr_sh: self.lr_sh,
            rms_decay: self.rms_decay,
            lambda_tv_sigma: self.lambda_tv_sigma,
            lambda_tv_sh: self.lambda_tv_sh,
            batch_rays: self.batch_rays,
            iters,
        }
    }

    /// Optimizer settings of per-frame tuning.
    pub fn stream_train(&self, iters: usize) -> TrainConfig {
        TrainConfig { lr_sigma: self.stream_lr_sigma, lr_sh: self.stream_lr_sh, ..self.train(iters) }
    }

    pub fn delta_params(&self) -> DeltaParams {
        DeltaParams { epsilon: self.epsilon, sigma_epsilon: self.sigma_epsilon }
    }

    pub fn render_options(&self) -> RenderOptions<f32> {
        RenderOptions { background: self.background.map(|v| v as f32), step: None }
    }

    /// Independent random stream per frame, so any frame can be recomputed alone.
    pub fn frame_rng(&self, frame: u32) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(frame as u64);
        rng
    }
}
