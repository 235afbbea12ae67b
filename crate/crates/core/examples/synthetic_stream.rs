//! Trains the synthetic moving-sphere scene and streams it, printing per-frame
//! held-out PSNR and delta sizes.
//!
//! Usage: synthetic_stream [frames] [config]

use std::time::Instant;

use streamgrid::dataset::SyntheticScene;
use streamgrid::grid::encode_checkpoint;
use streamgrid::{psnr, render_image, stream_step, train_base, PipelineConfig};

fn main() -> streamgrid::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let frames: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let cfg = match args.get(2) {
        Some(p) => PipelineConfig::resolve(p)?,
        None => PipelineConfig::desk(),
    };
    let scene = match std::env::var("SCENE").as_deref() {
        Ok("static") => SyntheticScene::static_scene(),
        _ => SyntheticScene::moving_sphere(),
    };
    let opts = scene.render_options();
    let f0 = scene.frame(0);

    let t = Instant::now();
    let mut grid = train_base(&f0.train, &cfg)?;
    let test_psnr = |g: &streamgrid::GridF32, f: &streamgrid::dataset::SyntheticFrame| {
        let v = &f.test.views[0];
        psnr(&render_image(g, &v.camera, &opts), &v.image)
    };
    let full = encode_checkpoint(&grid).len();
    let train_psnr: f64 =
        f0.train.views.iter().map(|v| psnr(&render_image(&grid, &v.camera, &opts), &v.image)).sum::<f64>()
            / f0.train.views.len() as f64;
    println!("train PSNR {train_psnr:.2}, ground truth voxels {}", f0.grid.len());
    println!(
        "base: {:.1}s, {} voxels, checkpoint {} B, held-out PSNR {:.2}",
        t.elapsed().as_secs_f64(),
        grid.len(),
        full,
        test_psnr(&grid, &f0)
    );
    let mut total = 0usize;
    for i in 1..frames {
        let f = scene.frame(i);
        let t = Instant::now();
        let out = stream_step(&grid, &f.train, i as u32, &cfg)?;
        let bytes = out.delta.to_bytes().len();
        total += bytes;
        grid = out.grid;
        println!(
            "frame {i:2}: {:.1}s psnr {:.2} delta {bytes} B ({:.1}%) voxels {} trainable {} add {} remain {}",
            t.elapsed().as_secs_f64(),
            test_psnr(&grid, &f),
            100.0 * bytes as f64 / full as f64,
            grid.len(),
            out.trainable.len(),
            out.delta.payload_add.len(),
            out.delta.payload_remain.len()
        );
    }
    if frames > 1 {
        println!("mean delta {:.1}% of checkpoint", 100.0 * total as f64 / (frames - 1) as f64 / full as f64);
    }
    Ok(())
}
