//! Photometric loss, analytic backpropagation through rendering, total
//! variation and RMSProp restricted to a set of trainable voxels.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{is_slot, GridDims, OccupancyMask, SparseGrid, Stencil, Voxel};
use crate::image::Image;
use crate::render::{box_bounds, generate_ray, sample_point, Camera, Ray, RenderOptions};
use crate::scalar::Real;
use crate::sh::{color_vjp_from_rgb, eval_color_with_basis, sh_basis, SH_BASIS, SH_COEFFS};

/// Optimizer and regularizer hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_sigma: f64,
    pub lr_sh: f64,
    pub rms_decay: f64,
    pub lambda_tv_sigma: f64,
    pub lambda_tv_sh: f64,
    /// Rays per step; 0 means the whole pool every step.
    pub batch_rays: usize,
    pub iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_sigma: 30.0,
            lr_sh: 1e-2,
            rms_decay: 0.95,
            lambda_tv_sigma: 5e-4,
            lambda_tv_sh: 5e-3,
            batch_rays: 2048,
            iters: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rms_decay > 0.0 && self.rms_decay < 1.0) {
            return Err(Error::Config(format!("rms_decay must lie in (0, 1), got {}", self.rms_decay)));
        }
        if !(self.lr_sigma > 0.0 && self.lr_sh > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.lambda_tv_sigma >= 0.0 && self.lambda_tv_sh >= 0.0) {
            return Err(Error::Config("TV weights must be non-negative".into()));
        }
        Ok(())
    }

    /// Copy with both TV weights multiplied by `k`.
    pub fn with_tv_scale(&self, k: f64) -> Self {
        Self { lambda_tv_sigma: self.lambda_tv_sigma * k, lambda_tv_sh: self.lambda_tv_sh * k, ..self.clone() }
    }
}

/// Voxels whose parameters may change; always a subset of the grid occupancy.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainableSet {
    mask: OccupancyMask,
}

impl TrainableSet {
    /// Fails unless `mask` is a subset of the grid's occupancy.
    pub fn new<T: Real>(grid: &SparseGrid<T>, mask: OccupancyMask) -> Result<Self> {
        if mask.dims().res() != grid.dims().res() {
            return Err(Error::DimsMismatch("trainable set shape differs from the grid".into()));
        }
        if !mask.is_subset_of(grid.mask()) {
            return Err(Error::Config("trainable set must be a subset of the occupancy".into()));
        }
        Ok(Self { mask })
    }

    /// `mask ∩ occupancy`.
    pub fn restricted<T: Real>(grid: &SparseGrid<T>, mask: &OccupancyMask) -> Self {
        Self { mask: mask.and(grid.mask()) }
    }

    pub fn all<T: Real>(grid: &SparseGrid<T>) -> Self {
        Self { mask: grid.mask().clone() }
    }

    pub fn none(dims: &GridDims) -> Self {
        Self { mask: OccupancyMask::empty(dims) }
    }

    pub fn mask(&self) -> &OccupancyMask {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.mask.count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-slot flags for `grid`.
    fn slot_flags<T: Real>(&self, grid: &SparseGrid<T>) -> Vec<bool> {
        grid.iter().map(|(idx, _)| self.mask.get(idx)).collect()
    }
}

/// Training rays with their target colors.
#[derive(Clone, Debug, Default)]
pub struct RayBatch<T> {
    pub rays: Vec<Ray<T>>,
    pub colors: Vec<[T; 3]>,
}

impl<T: Real> RayBatch<T> {
    /// Every pixel ray of every view that hits the grid box.
    pub fn from_views<'a>(views: impl IntoIterator<Item = (&'a Camera<T>, &'a Image<T>)>, dims: &GridDims) -> Self {
        let mut out = Self { rays: Vec::new(), colors: Vec::new() };
        for (cam, img) in views {
            for py in 0..cam.height.min(img.height) {
                for px in 0..cam.width.min(img.width) {
                    if let Some(r) = generate_ray(cam, px, py, dims) {
                        out.rays.push(r);
                        out.colors.push(img.get(px, py));
                    }
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    pub fn push(&mut self, ray: Ray<T>, color: [T; 3]) {
        self.rays.push(ray);
        self.colors.push(color);
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            rays: idx.iter().map(|&i| self.rays[i]).collect(),
            colors: idx.iter().map(|&i| self.colors[i]).collect(),
        }
    }
}

/// Per-slot gradient of the loss w.r.t. raw `(sigma, sh)`.
pub type Gradients<T> = Vec<Voxel<T>>;

#[derive(Clone, Copy)]
struct Hit<T> {
    st: Stencil<T>,
    rgb: [T; 3],
    t_i: T,
    e: T,
    w: T,
}

/// Forward pass of one ray, keeping what the backward pass needs.
/// Returns the composited color including the background term.
fn forward<T: Real>(
    grid: &SparseGrid<T>,
    ray: &Ray<T>,
    step: T,
    basis: &[T; SH_BASIS],
    bg: &[T; 3],
    bounds: &([T; 3], [T; 3]),
    hits: &mut Vec<Hit<T>>,
) -> [T; 3] {
    hits.clear();
    let mut acc = T::zero();
    let mut c = [T::zero(); 3];
    for j in 0..ray.sample_count(step) {
        let (_, x) = sample_point(ray, step, j, &bounds.0, &bounds.1);
        let st = grid.stencil(x);
        if !st.any_occupied() {
            continue;
        }
        let v = grid.interpolate(&st);
        let sigma = v.density();
        if sigma == T::zero() {
            continue;
        }
        let rgb = eval_color_with_basis(&v.sh, basis);
        let od = sigma * step;
        let t_i = (-acc).exp();
        let e = (-od).exp();
        let w = t_i * (T::one() - e);
        for k in 0..3 {
            c[k] += w * rgb[k];
        }
        acc += od;
        hits.push(Hit { st, rgb, t_i, e, w });
    }
    let tf = (-acc).exp();
    std::array::from_fn(|k| c[k] + tf * bg[k])
}

/// Composited colors for a set of rays.
pub fn render_rays<T: Real>(grid: &SparseGrid<T>, rays: &[Ray<T>], opts: &RenderOptions<T>) -> Vec<[T; 3]> {
    let step = opts.step_for(grid.dims());
    let bounds = box_bounds(grid.dims());
    let mut hits = Vec::new();
    rays.iter().map(|r| forward(grid, r, step, &sh_basis(r.dir), &opts.background, &bounds, &mut hits)).collect()
}

/// Mean over rays and channels of the squared color error.
pub fn photometric_loss<T: Real>(grid: &SparseGrid<T>, batch: &RayBatch<T>, opts: &RenderOptions<T>) -> T {
    if batch.is_empty() {
        return T::zero();
    }
    let pred = render_rays(grid, &batch.rays, opts);
    let mut sum = T::zero();
    for (p, g) in pred.iter().zip(batch.colors.iter()) {
        for k in 0..3 {
            let d = p[k] - g[k];
            sum += d * d;
        }
    }
    sum / T::lit(3.0 * batch.len() as f64)
}

/// Accumulates the photometric-loss gradient into `grads` for trainable slots
/// and returns the loss.
fn accumulate<T: Real>(
    grid: &SparseGrid<T>,
    batch: &RayBatch<T>,
    trainable: &[bool],
    opts: &RenderOptions<T>,
    grads: &mut [Voxel<T>],
    hits: &mut Vec<Hit<T>>,
) -> T {
    if batch.is_empty() {
        return T::zero();
    }
    let step = opts.step_for(grid.dims());
    let bounds = box_bounds(grid.dims());
    let norm = T::lit(3.0 * batch.len() as f64);
    let two = T::lit(2.0);
    let mut loss = T::zero();
    for (ray, gt) in batch.rays.iter().zip(batch.colors.iter()) {
        let basis = sh_basis(ray.dir);
        let pred = forward(grid, ray, step, &basis, &opts.background, &bounds, hits);
        let mut g = [T::zero(); 3];
        for k in 0..3 {
            let d = pred[k] - gt[k];
            loss += d * d;
            g[k] = two * d / norm;
        }
        let mut prefix = [T::zero(); 3];
        for h in hits.iter() {
            for k in 0..3 {
                prefix[k] += h.w * h.rgb[k];
            }
            let slots = h.st.raw_slots();
            if !slots.iter().any(|&s| is_slot(s) && trainable[s as usize]) {
                continue;
            }
            let mut d_sigma = T::zero();
            for k in 0..3 {
                d_sigma += g[k] * (h.t_i * h.e * h.rgb[k] - (pred[k] - prefix[k]));
            }
            d_sigma *= step;
            let d_sh = color_vjp_from_rgb(h.rgb, &basis, g.map(|gk| gk * h.w));
            for (&s, &wt) in slots.iter().zip(h.st.weights().iter()) {
                if !is_slot(s) || !trainable[s as usize] || wt == T::zero() {
                    continue;
                }
                let out = &mut grads[s as usize];
                out.sigma += wt * d_sigma;
                for (o, &d) in out.sh.iter_mut().zip(d_sh.iter()) {
                    *o += wt * d;
                }
            }
        }
    }
    loss / norm
}

/// Loss and its exact gradient w.r.t. the raw parameters of every occupied
/// voxel; slots outside `trainable` are zero.
pub fn backward<T: Real>(
    grid: &SparseGrid<T>,
    batch: &RayBatch<T>,
    trainable: &TrainableSet,
    opts: &RenderOptions<T>,
) -> (T, Gradients<T>) {
    let flags = trainable.slot_flags(grid);
    let mut grads = vec![Voxel::zero(); grid.len()];
    let loss = accumulate(grid, batch, &flags, opts, &mut grads, &mut Vec::new());
    (loss, grads)
}

/// Occupied 6-neighbors (by slot) of every slot, `u32::MAX` where absent.
fn neighbor_slots<T: Real>(grid: &SparseGrid<T>) -> Vec<[u32; 6]> {
    let dims = grid.dims();
    grid.iter()
        .map(|(idx, _)| {
            let mut out = [u32::MAX; 6];
            for (o, n) in out.iter_mut().zip(dims.neighbors6(dims.coord(idx))) {
                if let Some(s) = grid.slot(dims.linear(n)) {
                    *o = s as u32;
                }
            }
            out
        })
        .collect()
}

fn add_tv<T: Real>(
    grid: &SparseGrid<T>,
    nbrs: &[[u32; 6]],
    slots: &[u32],
    lambda_sigma: T,
    lambda_sh: T,
    grads: &mut [Voxel<T>],
) {
    let vox = grid.voxels();
    let two = T::lit(2.0);
    let (ls, lc) = (two * lambda_sigma, two * lambda_sh);
    for &a in slots {
        let va = &vox[a as usize];
        let out = &mut grads[a as usize];
        for &b in nbrs[a as usize].iter().filter(|&&b| b != u32::MAX) {
            let vb = &vox[b as usize];
            out.sigma += ls * (va.sigma - vb.sigma);
            for k in 0..SH_COEFFS {
                out.sh[k] += lc * (va.sh[k] - vb.sh[k]);
            }
        }
    }
}

/// Adds the gradient of `λσ Σ (σa − σb)² + λsh Σ |sha − shb|²` over 6-connected
/// occupied pairs to the trainable slots of `grads`, and returns the penalty of
/// all pairs touching the trainable set.
pub fn tv_loss_grad<T: Real>(
    grid: &SparseGrid<T>,
    trainable: &TrainableSet,
    lambda_sigma: T,
    lambda_sh: T,
    grads: &mut Gradients<T>,
) -> T {
    let flags = trainable.slot_flags(grid);
    let slots: Vec<u32> = (0..grid.len() as u32).filter(|&s| flags[s as usize]).collect();
    let nbrs = neighbor_slots(grid);
    add_tv(grid, &nbrs, &slots, lambda_sigma, lambda_sh, grads);
    let vox = grid.voxels();
    let mut penalty = T::zero();
    for (a, n) in nbrs.iter().enumerate() {
        for &b in n.iter().filter(|&&b| b != u32::MAX && (b as usize) > a) {
            if !(flags[a] || flags[b as usize]) {
                continue;
            }
            let (va, vb) = (&vox[a], &vox[b as usize]);
            let ds = va.sigma - vb.sigma;
            penalty += lambda_sigma * ds * ds;
            for k in 0..SH_COEFFS {
                let d = va.sh[k] - vb.sh[k];
                penalty += lambda_sh * d * d;
            }
        }
    }
    penalty
}

/// One RMSProp update: `s ← d·s + (1−d)·g²`, `θ ← θ − lr·g/(√s + 1e-8)`.
#[inline]
pub fn rmsprop_step<T: Real>(params: &mut [T], grads: &[T], state: &mut [T], lr: T, decay: T) {
    let eps = T::lit(1e-8);
    let one = T::one();
    for ((p, &g), s) in params.iter_mut().zip(grads.iter()).zip(state.iter_mut()) {
        *s = decay * *s + (one - decay) * g * g;
        *p -= lr * g / (s.sqrt() + eps);
    }
}

/// Summary of a training run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainReport {
    pub iters: usize,
    /// Photometric loss of the first step's batch, before any update.
    pub first_loss: f64,
    /// Photometric loss of the last step's batch, before its update.
    pub last_loss: f64,
}

/// Runs `cfg.iters` RMSProp steps on the trainable voxels of `grid`.
///
/// Every step draws `cfg.batch_rays` rays uniformly (with replacement) from
/// `pool`. The TV weights are divided by the occupied voxel count, so a
/// partial tune sees the same objective as a full one. Voxels
/// outside `trainable` are never written.
pub fn train<T: Real, R: Rng + ?Sized>(
    grid: &mut SparseGrid<T>,
    pool: &RayBatch<T>,
    trainable: &TrainableSet,
    cfg: &TrainConfig,
    opts: &RenderOptions<T>,
    rng: &mut R,
) -> Result<TrainReport> {
    cfg.validate()?;
    if trainable.mask().dims().res() != grid.dims().res() {
        return Err(Error::DimsMismatch("trainable set shape differs from the grid".into()));
    }
    if !trainable.mask().is_subset_of(grid.mask()) {
        return Err(Error::Config("trainable set must be a subset of the occupancy".into()));
    }
    let mut report = TrainReport { iters: 0, first_loss: 0.0, last_loss: 0.0 };
    if cfg.iters == 0 || trainable.is_empty() {
        return Ok(report);
    }
    if pool.is_empty() {
        return Err(Error::NoRays);
    }

    let flags = trainable.slot_flags(grid);
    let slots: Vec<u32> = (0..grid.len() as u32).filter(|&s| flags[s as usize]).collect();
    let nbrs = neighbor_slots(grid);
    let n_tv = T::lit(grid.len() as f64);
    let (tv_sigma, tv_sh) = (T::lit(cfg.lambda_tv_sigma) / n_tv, T::lit(cfg.lambda_tv_sh) / n_tv);
    let (lr_sigma, lr_sh, decay) = (T::lit(cfg.lr_sigma), T::lit(cfg.lr_sh), T::lit(cfg.rms_decay));

    let mut grads = vec![Voxel::zero(); grid.len()];
    let mut state = vec![Voxel::zero(); grid.len()];
    let mut hits = Vec::new();
    let full = cfg.batch_rays == 0 || cfg.batch_rays >= pool.len();
    let mut idx = Vec::with_capacity(cfg.batch_rays);

    for it in 0..cfg.iters {
        for &s in &slots {
            grads[s as usize] = Voxel::zero();
        }
        let loss = if full {
            accumulate(grid, pool, &flags, opts, &mut grads, &mut hits)
        } else {
            idx.clear();
            idx.extend((0..cfg.batch_rays).map(|_| rng.random_range(0..pool.len())));
            accumulate(grid, &pool.subset(&idx), &flags, opts, &mut grads, &mut hits)
        };
        add_tv(grid, &nbrs, &slots, tv_sigma, tv_sh, &mut grads);

        let vox = grid.voxels_mut();
        for &s in &slots {
            let (p, g, st) = (&mut vox[s as usize], &grads[s as usize], &mut state[s as usize]);
            rmsprop_step(
                std::slice::from_mut(&mut p.sigma),
                &[g.sigma],
                std::slice::from_mut(&mut st.sigma),
                lr_sigma,
                decay,
            );
            rmsprop_step(&mut p.sh, &g.sh, &mut st.sh, lr_sh, decay);
        }

        let l = loss.to_f64().unwrap_or(f64::NAN);
        if it == 0 {
            report.first_loss = l;
        }
        report.last_loss = l;
        report.iters += 1;
    }
    Ok(report)
}
