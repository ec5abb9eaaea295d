//! Compare abn (compose-then-warp-once) against crn (re-warp the previous
//! output) on the same synthetic pairs: registration quality is similar,
//! but crn's repeated interpolation costs sharpness.
//!
//! Run with `cargo run --release --example mode_comparison`.

use antiblur::energy::LossConfig;
use antiblur::grid::Dims;
use antiblur::metrics::{interior_crop, smd, ssim, tenengrad};
use antiblur::pipeline::{run_pipeline, Mode, PipelineConfig};
use antiblur::synth::{make_pair, phantom, PhantomKind, SynthConfig};
use antiblur::Result;

fn main() -> Result<()> {
    let dims = Dims::new(&[64, 64])?;
    let (raw, _) = phantom(PhantomKind::Checkerboard { cell: 8 }, &dims)?;

    println!("seed  mode  ssim    smd     tenengrad");
    for seed in 0..3u64 {
        let (source, target, _) = make_pair(&raw, &SynthConfig::desk(&[64, 64], seed))?;
        for mode in [Mode::Abn, Mode::Crn] {
            let cfg = PipelineConfig {
                mode,
                stages: 10,
                inner_iters: 100,
                loss: LossConfig {
                    lambda: 2e-5,
                    ..Default::default()
                },
                ..Default::default()
            };
            let res = run_pipeline(&source, &target, &cfg)?;
            let crop = interior_crop(&res.final_warped, 2)?;
            println!(
                "{:>4}  {:<4}  {:.4}  {:.4}  {:.4}",
                seed,
                mode,
                ssim(&res.final_warped, &target)?,
                smd(&crop)?,
                tenengrad(&crop)?
            );
        }
    }
    Ok(())
}
