//! Pinhole cameras, ray generation and volume-rendering integration.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridDims, SparseGrid};
use crate::image::Image;
use crate::scalar::Real;
use crate::sh::{eval_color_with_basis, normalize, sh_basis, SH_BASIS};

/// Pinhole camera. `pose` maps camera coordinates (x right, y down, z forward)
/// to world coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub pose: [[T; 4]; 4],
    pub width: usize,
    pub height: usize,
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

impl<T: Real> Camera<T> {
    /// Camera at `eye` looking at `target`, with square pixels and the given
    /// vertical field of view; the principal point is the image center.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3], fov_y_deg: f64, width: usize, height: usize) -> Self {
        let fwd = normalize(std::array::from_fn(|i| target[i] - eye[i]));
        let right = normalize(cross(fwd, up));
        let down = cross(fwd, right);
        let f = 0.5 * height as f64 / (0.5 * fov_y_deg.to_radians()).tan();
        let mut pose = [[T::zero(); 4]; 4];
        for r in 0..3 {
            pose[r][0] = T::lit(right[r]);
            pose[r][1] = T::lit(down[r]);
            pose[r][2] = T::lit(fwd[r]);
            pose[r][3] = T::lit(eye[r]);
        }
        pose[3][3] = T::one();
        Self {
            fx: T::lit(f),
            fy: T::lit(f),
            cx: T::lit(width as f64 * 0.5),
            cy: T::lit(height as f64 * 0.5),
            pose,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(Error::Config("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image size must be non-zero".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|r| (self.pose[r][i] * self.pose[r][j]).to_f64().unwrap_or(f64::NAN)).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if !((dot - want).abs() <= 1e-5) {
                    return Err(Error::Config("pose rotation is not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn center(&self) -> [T; 3] {
        [self.pose[0][3], self.pose[1][3], self.pose[2][3]]
    }

    /// Unit world-space direction through the center of pixel `(px, py)`.
    pub fn pixel_dir(&self, px: usize, py: usize) -> [T; 3] {
        let half = T::lit(0.5);
        let d =
            [(T::lit(px as f64) + half - self.cx) / self.fx, (T::lit(py as f64) + half - self.cy) / self.fy, T::one()];
        normalize(std::array::from_fn(|r| self.pose[r][0] * d[0] + self.pose[r][1] * d[1] + self.pose[r][2] * d[2]))
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        let c = |v: T| U::lit(v.to_f64().unwrap_or(0.0));
        Camera {
            fx: c(self.fx),
            fy: c(self.fy),
            cx: c(self.cx),
            cy: c(self.cy),
            pose: self.pose.map(|row| row.map(c)),
            width: self.width,
            height: self.height,
        }
    }
}

/// A ray clipped to the grid box: samples live in `[t_near, t_far]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<T> {
    pub origin: [T; 3],
    pub dir: [T; 3],
    pub t_near: T,
    pub t_far: T,
}

impl<T: Real> Ray<T> {
    /// Clips the ray `origin + t·dir`, `t >= 0`, against the box of `dims`.
    pub fn clipped(origin: [T; 3], dir: [T; 3], dims: &GridDims) -> Option<Self> {
        let mut t0 = T::zero();
        let mut t1 = T::infinity();
        for a in 0..3 {
            let lo = T::lit(dims.world_min[a]);
            let hi = T::lit(dims.world_max[a]);
            if dir[a] == T::zero() {
                if origin[a] < lo || origin[a] > hi {
                    return None;
                }
                continue;
            }
            let inv = T::one() / dir[a];
            let (mut ta, mut tb) = ((lo - origin[a]) * inv, (hi - origin[a]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t0 <= t1).then_some(Self { origin, dir, t_near: t0, t_far: t1 })
    }

    #[inline]
    pub fn at(&self, t: T) -> [T; 3] {
        std::array::from_fn(|a| self.origin[a] + t * self.dir[a])
    }

    /// Number of uniform samples of size `step` that fit in `[t_near, t_far]`.
    #[inline]
    pub fn sample_count(&self, step: T) -> usize {
        ((self.t_far - self.t_near) / step).floor().to_usize().unwrap_or(0)
    }
}

/// Ray through the center of pixel `(px, py)`, or `None` if it misses the box.
pub fn generate_ray<T: Real>(cam: &Camera<T>, px: usize, py: usize, dims: &GridDims) -> Option<Ray<T>> {
    Ray::clipped(cam.center(), cam.pixel_dir(px, py), dims)
}

/// One evaluated point along a ray. `sigma` is the activated opacity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaySample<T> {
    pub t: T,
    pub sigma: T,
    pub rgb: [T; 3],
    pub delta: T,
}

/// Sample position `j` of a ray, clamped into the grid box.
#[inline(always)]
pub(crate) fn sample_point<T: Real>(ray: &Ray<T>, step: T, j: usize, lo: &[T; 3], hi: &[T; 3]) -> (T, [T; 3]) {
    let t = ray.t_near + (T::lit(j as f64) + T::lit(0.5)) * step;
    let x = ray.at(t);
    (t, std::array::from_fn(|a| x[a].max(lo[a]).min(hi[a])))
}

#[inline]
pub(crate) fn box_bounds<T: Real>(dims: &GridDims) -> ([T; 3], [T; 3]) {
    (dims.world_min.map(T::lit), dims.world_max.map(T::lit))
}

/// Uniform samples `t = t_near + (j + 0.5)·step`, each evaluated by trilinear
/// interpolation followed by SH color evaluation along the ray direction.
pub fn march_ray<T: Real>(grid: &SparseGrid<T>, ray: &Ray<T>, step: T) -> Vec<RaySample<T>> {
    let basis = sh_basis(ray.dir);
    let (lo, hi) = box_bounds(grid.dims());
    (0..ray.sample_count(step))
        .map(|j| {
            let (t, x) = sample_point(ray, step, j, &lo, &hi);
            let v = grid.interpolate(&grid.stencil(x));
            RaySample { t, sigma: v.density(), rgb: eval_color_with_basis(&v.sh, &basis), delta: step }
        })
        .collect()
}

/// `Ĉ = Σ T_i (1 − exp(−σ_i δ_i)) c_i` with `T_i = exp(−Σ_{j<i} σ_j δ_j)`.
/// Returns `Ĉ` and the transmittance past the last sample.
pub fn composite<T: Real>(samples: &[RaySample<T>]) -> ([T; 3], T) {
    let mut acc = T::zero();
    let mut c = [T::zero(); 3];
    for s in samples {
        let od = s.sigma * s.delta;
        let t_i = (-acc).exp();
        let alpha = T::one() - (-od).exp();
        let w = t_i * alpha;
        for k in 0..3 {
            c[k] += w * s.rgb[k];
        }
        acc += od;
    }
    (c, (-acc).exp())
}

/// Fused march + composite. Samples with zero activated opacity are skipped,
/// which leaves every accumulator bit-identical to [`composite`].
pub(crate) fn trace<T: Real>(
    grid: &SparseGrid<T>,
    ray: &Ray<T>,
    step: T,
    basis: &[T; SH_BASIS],
    lo: &[T; 3],
    hi: &[T; 3],
) -> ([T; 3], T) {
    let mut acc = T::zero();
    let mut c = [T::zero(); 3];
    for j in 0..ray.sample_count(step) {
        let (_, x) = sample_point(ray, step, j, lo, hi);
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
        let alpha = T::one() - (-od).exp();
        let w = t_i * alpha;
        for k in 0..3 {
            c[k] += w * rgb[k];
        }
        acc += od;
    }
    (c, (-acc).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOptions<T> {
    /// Constant color behind the grid, composited with the final transmittance.
    pub background: [T; 3],
    /// Sample spacing; `None` means half the smallest voxel edge.
    pub step: Option<T>,
}

impl<T: Real> Default for RenderOptions<T> {
    fn default() -> Self {
        Self { background: [T::zero(); 3], step: None }
    }
}

impl<T: Real> RenderOptions<T> {
    pub fn step_for(&self, dims: &GridDims) -> T {
        self.step.unwrap_or_else(|| {
            let h = dims.voxel_size();
            T::lit(0.5 * h[0].min(h[1]).min(h[2]))
        })
    }
}

/// Color of one ray including the background term.
pub fn render_ray<T: Real>(grid: &SparseGrid<T>, ray: &Ray<T>, opts: &RenderOptions<T>) -> [T; 3] {
    let (lo, hi) = box_bounds(grid.dims());
    let basis = sh_basis(ray.dir);
    let (c, tf) = trace(grid, ray, opts.step_for(grid.dims()), &basis, &lo, &hi);
    std::array::from_fn(|k| c[k] + tf * opts.background[k])
}

/// Renders every pixel; rays that miss the box get the background color.
pub fn render_image<T: Real>(grid: &SparseGrid<T>, cam: &Camera<T>, opts: &RenderOptions<T>) -> Image<T> {
    let mut img = Image::new(cam.width, cam.height, opts.background);
    let dims = grid.dims();
    let step = opts.step_for(dims);
    let (lo, hi) = box_bounds(dims);
    img.pixels.par_chunks_mut(cam.width.max(1)).enumerate().for_each(|(py, row)| {
        for (px, out) in row.iter_mut().enumerate() {
            if let Some(ray) = generate_ray(cam, px, py, dims) {
                let basis = sh_basis(ray.dir);
                let (c, tf) = trace(grid, &ray, step, &basis, &lo, &hi);
                *out = std::array::from_fn(|k| c[k] + tf * opts.background[k]);
            }
        }
    });
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Voxel;
    use crate::sh::{sh_from_rgb, SH_COEFFS};

    fn dims() -> GridDims {
        GridDims::cube(8, 1.0).unwrap()
    }

    #[test]
    fn camera_at_center_looking_forward() {
        let cam = Camera::<f64>::look_at([0.0; 3], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0], 60.0, 4, 4);
        cam.validate().unwrap();
        // pixel (1.5, 1.5) would be the principal point; use an odd image instead
        let mut odd = cam.clone();
        odd.cx = 1.5;
        odd.cy = 1.5;
        let r = generate_ray(&odd, 1, 1, &dims()).unwrap();
        assert_eq!(r.dir, [0.0, 0.0, 1.0]);
        assert_eq!(r.t_near, 0.0);
        assert!((r.t_far - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_ray_outside_box_misses() {
        let r = Ray::<f64>::clipped([0.0, 2.0, -5.0], [0.0, 0.0, 1.0], &dims());
        assert!(r.is_none());
        let hit = Ray::<f64>::clipped([0.0, 0.5, -5.0], [0.0, 0.0, 1.0], &dims()).unwrap();
        assert!((hit.t_near - 4.0).abs() < 1e-12 && (hit.t_far - 6.0).abs() < 1e-12);
    }

    #[test]
    fn box_behind_camera_misses() {
        assert!(Ray::<f64>::clipped([0.0, 0.0, 5.0], [0.0, 0.0, 1.0], &dims()).is_none());
    }

    #[test]
    fn look_at_axes_are_orthonormal() {
        let cam = Camera::<f32>::look_at([2.0, 1.0, -3.0], [0.0; 3], [0.0, 1.0, 0.0], 45.0, 16, 12);
        cam.validate().unwrap();
        let mut bad = cam.clone();
        bad.pose[0][0] = 2.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn empty_grid_marches_zero_density() {
        let g = SparseGrid::<f64>::empty(&dims());
        let ray = Ray::clipped([-3.0, 0.1, 0.2], [1.0, 0.0, 0.0], g.dims()).unwrap();
        let s = march_ray(&g, &ray, 0.125);
        assert_eq!(s.len(), 16);
        assert!(s.iter().all(|s| s.sigma == 0.0 && s.delta == 0.125));
    }

    #[test]
    fn short_ray_never_has_negative_count() {
        let ray = Ray { origin: [0.0f64; 3], dir: [1.0, 0.0, 0.0], t_near: 0.3, t_far: 0.35 };
        assert_eq!(ray.sample_count(0.1), 0);
        let ray = Ray { t_far: 0.45, ..ray };
        assert_eq!(ray.sample_count(0.1), 1);
    }

    #[test]
    fn constant_grid_samples_share_sigma() {
        let g = SparseGrid::filled(&dims(), Voxel::new(3.0f64, [0.0; SH_COEFFS]));
        let ray = Ray::clipped([-0.9, -3.0, 0.3], [0.0, 1.0, 0.0], g.dims()).unwrap();
        let s = march_ray(&g, &ray, 0.0625);
        assert!(!s.is_empty());
        assert!(s.iter().all(|s| s.sigma == 3.0 && s.delta == 0.0625));
        for w in s.windows(2) {
            assert!(w[1].t > w[0].t);
        }
    }

    #[test]
    fn composite_examples() {
        let ln2 = 2f64.ln();
        let one = RaySample { t: 0.0, sigma: ln2, rgb: [1.0, 0.0, 0.0], delta: 1.0 };
        let (c, tf) = composite(&[one]);
        assert!((c[0] - 0.5).abs() < 1e-15 && c[1] == 0.0 && (tf - 0.5).abs() < 1e-15);

        let empty = RaySample { t: 0.0, sigma: 0.0, rgb: [0.7, 0.1, 0.2], delta: 1.0 };
        assert_eq!(composite(&[empty, empty]), ([0.0; 3], 1.0));

        let a = RaySample { t: 0.0, sigma: ln2, rgb: [0.2, 0.4, 0.6], delta: 1.0 };
        let b = RaySample { t: 1.0, sigma: ln2 / 2.0, rgb: [1.0, 0.5, 0.0], delta: 2.0 };
        let (c, tf) = composite(&[a, b]);
        for k in 0..3 {
            assert!((c[k] - (0.5 * a.rgb[k] + 0.25 * b.rgb[k])).abs() < 1e-7);
        }
        assert!((tf - 0.25).abs() < 1e-15);
    }

    #[test]
    fn empty_grid_renders_background() {
        let g = SparseGrid::<f32>::empty(&dims());
        let cam = Camera::look_at([0.0, 0.0, -3.0], [0.0; 3], [0.0, 1.0, 0.0], 50.0, 8, 6);
        let opts = RenderOptions { background: [0.1, 0.2, 0.3], step: None };
        let img = render_image(&g, &cam, &opts);
        assert!(img.pixels.iter().all(|p| *p == [0.1, 0.2, 0.3]));
    }

    #[test]
    fn opaque_slab_converges_to_its_color() {
        let color = [0.8, 0.3, 0.6];
        let cam = Camera::<f64>::look_at([0.0, 0.0, -3.0], [0.0; 3], [0.0, 1.0, 0.0], 20.0, 6, 6);
        let opts = RenderOptions { background: [0.0, 1.0, 0.0], step: None };
        let mut last_err = f64::INFINITY;
        for sigma in [1.0, 10.0, 100.0, 1000.0] {
            let g = SparseGrid::filled(&dims(), Voxel::new(sigma, sh_from_rgb(color)));
            let img = render_image(&g, &cam, &opts);
            let err = (0..3).map(|k| (img.get(3, 3)[k] - color[k]).abs()).fold(0.0, f64::max);
            assert!(err < last_err);
            last_err = err;
        }
        assert!(last_err < 1e-9);
    }

    #[test]
    fn halving_the_step_shrinks_quadrature_error() {
        let d = dims();
        let g = SparseGrid::from_fn(&d, |c| {
            let x = d.center(c);
            Some(Voxel::new(
                1.5 + x[2] + 0.5 * x[0] * x[2],
                sh_from_rgb([0.5 + 0.3 * x[2], 0.4, 0.6 - 0.2 * x[2] * x[2]]),
            ))
        });
        // the clipped length (2) is a whole number of every step below, so no tail is dropped
        let ray = Ray::clipped([0.1, -0.2, -3.0], [0.0, 0.0, 1.0], &d).unwrap();
        let color = |step: f64| render_ray(&g, &ray, &RenderOptions { background: [0.2; 3], step: Some(step) });
        let exact = color(2f64.powi(-12));
        let errs: Vec<f64> = [-4, -5, -6]
            .iter()
            .map(|&e| (0..3).map(|k| (color(2f64.powi(e))[k] - exact[k]).abs()).fold(0.0, f64::max))
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        assert!(errs[2] < 0.5 * errs[0], "{errs:?}");
    }

    fn samples_strategy() -> impl proptest::strategy::Strategy<Value = Vec<RaySample<f64>>> {
        proptest::collection::vec(
            (0.0f64..50.0, 1e-3f64..0.2, [0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0])
                .prop_map(|(sigma, delta, rgb)| RaySample { t: 0.0, sigma, rgb, delta }),
            0..64,
        )
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn composited_color_stays_in_unit_range(s in samples_strategy(), bg in [0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0]) {
            let (c, tf) = composite(&s);
            for k in 0..3 {
                let v = c[k] + tf * bg[k];
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v), "{v}");
            }
        }

        #[test]
        fn transmittance_never_increases(s in samples_strategy()) {
            prop_assert_eq!(composite::<f64>(&[]).1, 1.0);
            let mut last = 1.0;
            for n in 0..=s.len() {
                let tf = composite(&s[..n]).1;
                prop_assert!(tf <= last);
                last = tf;
            }
        }
    }
}
