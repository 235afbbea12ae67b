//! Multi-view frame ingestion and a synthetic dynamic scene with exact ground truth.
//!
//! On disk a dataset is `poses.txt` plus `frames/{FFFF}/{view}.png`. Each
//! non-empty, non-`#` line of `poses.txt` describes one view as
//! `fx fy cx cy width height` followed by the 16 row-major entries of the
//! camera-to-world matrix.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{GridDims, SparseGrid, Voxel};
use crate::image::Image;
use crate::render::{render_image, Camera, RenderOptions};
use crate::sh::sh_from_rgb;

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub camera: Camera<f32>,
    pub image: Image<f32>,
}

/// All views captured at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSet {
    pub frame: usize,
    pub views: Vec<View>,
}

impl FrameSet {
    pub fn pairs(&self) -> impl Iterator<Item = (&Camera<f32>, &Image<f32>)> {
        self.views.iter().map(|v| (&v.camera, &v.image))
    }

    /// Splits off the views at `held_out` indices.
    pub fn split(&self, held_out: &[usize]) -> (FrameSet, FrameSet) {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (i, v) in self.views.iter().enumerate() {
            if held_out.contains(&i) {
                b.push(v.clone());
            } else {
                a.push(v.clone());
            }
        }
        (FrameSet { frame: self.frame, views: a }, FrameSet { frame: self.frame, views: b })
    }
}

pub fn parse_poses(text: &str, path: &Path) -> Result<Vec<Camera<f32>>> {
    let mut cams = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: i + 1, msg };
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| err(format!("not a number: {t:?}"))))
            .collect::<Result<_>>()?;
        if vals.len() != 22 {
            return Err(err(format!("expected 22 values, found {}", vals.len())));
        }
        let size = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(err(format!("image size must be a positive integer, got {v}")))
            }
        };
        let cam = Camera {
            fx: vals[0] as f32,
            fy: vals[1] as f32,
            cx: vals[2] as f32,
            cy: vals[3] as f32,
            width: size(vals[4])?,
            height: size(vals[5])?,
            pose: std::array::from_fn(|r| std::array::from_fn(|c| vals[6 + 4 * r + c] as f32)),
        };
        cam.validate().map_err(|e| err(e.to_string()))?;
        cams.push(cam);
    }
    Ok(cams)
}

pub fn format_poses(cams: &[Camera<f32>]) -> String {
    let mut s = String::from("# fx fy cx cy width height pose[4x4 row-major, camera-to-world]\n");
    for c in cams {
        write!(s, "{} {} {} {} {} {}", c.fx, c.fy, c.cx, c.cy, c.width, c.height).unwrap();
        for row in &c.pose {
            for v in row {
                write!(s, " {v}").unwrap();
            }
        }
        s.push('\n');
    }
    s
}

fn frame_dir(root: &Path, frame: usize) -> PathBuf {
    root.join("frames").join(format!("{frame:04}"))
}

fn view_path(root: &Path, frame: usize, view: usize) -> PathBuf {
    frame_dir(root, frame).join(format!("{view}.png"))
}

/// An opened dataset directory; frames are decoded on demand.
#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    pub cameras: Vec<Camera<f32>>,
    pub n_frames: usize,
}

/// Opens `path`. A directory without `poses.txt` and frames has zero frames.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let root = path.as_ref().to_path_buf();
    if !root.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("dataset not found: {}", root.display()),
        )));
    }
    let poses = root.join("poses.txt");
    let cameras = if poses.exists() { parse_poses(&std::fs::read_to_string(&poses)?, &poses)? } else { Vec::new() };
    let mut n_frames = 0;
    while frame_dir(&root, n_frames).is_dir() {
        n_frames += 1;
    }
    if n_frames > 0 && cameras.is_empty() {
        return Err(Error::Parse { path: poses, line: 0, msg: "no camera poses for a non-empty dataset".into() });
    }
    Ok(Dataset { root, cameras, n_frames })
}

impl Dataset {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn frame(&self, frame: usize) -> Result<FrameSet> {
        let views = self
            .cameras
            .iter()
            .enumerate()
            .map(|(v, cam)| {
                let path = view_path(&self.root, frame, v);
                if !path.is_file() {
                    return Err(Error::MissingView { frame, view: v, path });
                }
                let image = Image::load_png(&path)?;
                if (image.width, image.height) != (cam.width, cam.height) {
                    return Err(Error::Image(format!(
                        "{}: {}x{} image for a {}x{} camera",
                        path.display(),
                        image.width,
                        image.height,
                        cam.width,
                        cam.height
                    )));
                }
                Ok(View { camera: cam.clone(), image })
            })
            .collect::<Result<_>>()?;
        Ok(FrameSet { frame, views })
    }

    /// Frames in index order.
    pub fn frames(&self) -> impl Iterator<Item = Result<FrameSet>> + '_ {
        (0..self.n_frames).map(|i| self.frame(i))
    }
}

/// Writes `poses.txt` and one PNG per view per frame; frames are renumbered from 0.
pub fn write_dataset<'a>(path: impl AsRef<Path>, frames: impl IntoIterator<Item = &'a FrameSet>) -> Result<()> {
    let root = path.as_ref();
    std::fs::create_dir_all(root)?;
    let mut cams: Option<Vec<Camera<f32>>> = None;
    for (i, f) in frames.into_iter().enumerate() {
        let these: Vec<_> = f.views.iter().map(|v| v.camera.clone()).collect();
        match &cams {
            None => {
                std::fs::write(root.join("poses.txt"), format_poses(&these))?;
                cams = Some(these);
            }
            Some(c) if *c != these => {
                return Err(Error::Config(format!("frame {} uses different cameras", f.frame)));
            }
            _ => {}
        }
        std::fs::create_dir_all(frame_dir(root, i))?;
        for (v, view) in f.views.iter().enumerate() {
            view.image.save_png(view_path(root, i, v))?;
        }
    }
    Ok(())
}

/// Solid sphere moving linearly: `center + frame·velocity`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sphere {
    pub center: [f64; 3],
    pub velocity: [f64; 3],
    pub radius: f64,
    pub rgb: [f64; 3],
    /// Opacity of a fully covered voxel.
    pub sigma: f64,
}

impl Sphere {
    pub fn center_at(&self, frame: usize) -> [f64; 3] {
        std::array::from_fn(|a| self.center[a] + frame as f64 * self.velocity[a])
    }
}

/// Analytic scene rendered by the reference volume renderer.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub dims: GridDims,
    pub spheres: Vec<Sphere>,
    pub train_cameras: Vec<Camera<f32>>,
    pub test_cameras: Vec<Camera<f32>>,
    pub background: [f64; 3],
    /// Sub-samples per voxel axis used to estimate sphere coverage.
    pub supersample: usize,
}

/// Ground truth and images for one synthetic time step.
#[derive(Clone, Debug)]
pub struct SyntheticFrame {
    pub grid: SparseGrid<f32>,
    pub train: FrameSet,
    pub test: FrameSet,
}

/// `n` cameras on a ring of radius `r` around the y axis, all looking at the
/// origin. Elevations (radians) cycle through `elevations`.
pub fn ring_cameras(n: usize, r: f64, elevations: &[f64], phase: f64, fov_deg: f64, size: usize) -> Vec<Camera<f32>> {
    (0..n)
        .map(|i| {
            let a = phase + i as f64 * std::f64::consts::TAU / n as f64;
            let elevation = elevations[i % elevations.len()];
            let eye = [r * a.cos() * elevation.cos(), r * elevation.sin(), r * a.sin() * elevation.cos()];
            Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], fov_deg, size, size)
        })
        .collect()
}

impl SyntheticScene {
    /// One static sphere and one sphere drifting half a voxel per frame at 64³.
    pub fn moving_sphere() -> Self {
        let dims = GridDims::cube(64, 1.0).unwrap();
        let h = dims.voxel_size()[0];
        Self {
            spheres: vec![
                Sphere {
                    center: [-0.35, -0.1, 0.05],
                    velocity: [0.0; 3],
                    radius: 0.3,
                    rgb: [0.85, 0.3, 0.2],
                    sigma: 60.0,
                },
                Sphere {
                    center: [0.35, 0.15, -0.2],
                    velocity: [0.0, 0.0, 0.5 * h],
                    radius: 0.25,
                    rgb: [0.2, 0.6, 0.9],
                    sigma: 60.0,
                },
            ],
            train_cameras: ring_cameras(8, 3.0, &[0.45, -0.15], 0.0, 50.0, 40),
            test_cameras: ring_cameras(1, 3.0, &[0.15], std::f64::consts::PI / 8.0, 50.0, 40),
            background: [0.0; 3],
            supersample: 4,
            dims,
        }
    }

    /// The same layout with every sphere at rest.
    pub fn static_scene() -> Self {
        let mut s = Self::moving_sphere();
        for sp in &mut s.spheres {
            sp.velocity = [0.0; 3];
        }
        s
    }

    /// Same scene voxelized at `grid_res`³ and seen through `image_size`² cameras.
    /// Velocities are in world units, so motion per frame is unchanged.
    pub fn resized(mut self, grid_res: usize, image_size: usize) -> Result<Self> {
        self.dims = GridDims::new([grid_res; 3], self.dims.world_min, self.dims.world_max)?;
        for cam in self.train_cameras.iter_mut().chain(self.test_cameras.iter_mut()) {
            let k = image_size as f32 / cam.width as f32;
            *cam = Camera {
                fx: cam.fx * k,
                fy: cam.fy * k,
                cx: cam.cx * k,
                cy: cam.cy * k,
                width: image_size,
                height: image_size,
                ..*cam
            };
        }
        Ok(self)
    }

    pub fn render_options(&self) -> RenderOptions<f32> {
        RenderOptions { background: self.background.map(|v| v as f32), step: None }
    }

    /// Voxelized spheres: σ and color weighted by supersampled coverage.
    pub fn ground_truth(&self, frame: usize) -> SparseGrid<f32> {
        let d = &self.dims;
        let h = d.voxel_size();
        let s = self.supersample.max(1);
        let res = d.res();
        let mut cov = vec![0f64; d.len() * self.spheres.len()];
        for (k, sp) in self.spheres.iter().enumerate() {
            let c = sp.center_at(frame);
            let r2 = sp.radius * sp.radius;
            let range = |a: usize| {
                let lo = ((c[a] - sp.radius - d.world_min[a]) / h[a]).floor().max(0.0) as usize;
                let hi = (((c[a] + sp.radius - d.world_min[a]) / h[a]).ceil() as usize).min(res[a]);
                lo..hi
            };
            for x in range(0) {
                for y in range(1) {
                    for z in range(2) {
                        let v = [x, y, z];
                        let mut hit = 0usize;
                        for sx in 0..s {
                            for sy in 0..s {
                                for sz in 0..s {
                                    let sub = [sx, sy, sz];
                                    let mut d2 = 0.0;
                                    for a in 0..3 {
                                        let p =
                                            d.world_min[a] + (v[a] as f64 + (sub[a] as f64 + 0.5) / s as f64) * h[a];
                                        d2 += (p - c[a]) * (p - c[a]);
                                    }
                                    hit += (d2 <= r2) as usize;
                                }
                            }
                        }
                        cov[d.linear(v) * self.spheres.len() + k] = hit as f64 / (s * s * s) as f64;
                    }
                }
            }
        }
        let n = self.spheres.len();
        SparseGrid::from_fn(d, |c| {
            let i = d.linear(c);
            let cs = &cov[i * n..(i + 1) * n];
            let total: f64 = cs.iter().sum();
            (total > 0.0).then(|| {
                let sigma: f64 = cs.iter().zip(&self.spheres).map(|(f, sp)| f * sp.sigma).sum();
                let rgb = std::array::from_fn(|ch| {
                    cs.iter().zip(&self.spheres).map(|(f, sp)| f * sp.rgb[ch]).sum::<f64>() / total
                });
                Voxel::new(sigma as f32, sh_from_rgb(rgb))
            })
        })
    }

    fn views(&self, grid: &SparseGrid<f32>, cams: &[Camera<f32>], frame: usize) -> FrameSet {
        let opts = self.render_options();
        FrameSet {
            frame,
            views: cams.iter().map(|c| View { camera: c.clone(), image: render_image(grid, c, &opts) }).collect(),
        }
    }

    pub fn frame(&self, frame: usize) -> SyntheticFrame {
        let grid = self.ground_truth(frame);
        SyntheticFrame {
            train: self.views(&grid, &self.train_cameras, frame),
            test: self.views(&grid, &self.test_cameras, frame),
            grid,
        }
    }
}

/// Frames `0..n_frames` of `scene`, generated lazily.
pub fn generate_synthetic(scene: &SyntheticScene, n_frames: usize) -> impl Iterator<Item = SyntheticFrame> + '_ {
    (0..n_frames).map(move |i| scene.frame(i))
}
