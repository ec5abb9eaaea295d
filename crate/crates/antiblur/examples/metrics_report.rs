//! Compute the full evaluation report (SSIM, correlation, sharpness, and
//! label overlap) between a registered image and its target.
//!
//! Run with `cargo run --example metrics_report`.

use antiblur::grid::Dims;
use antiblur::metrics::report;
use antiblur::sampler::{warp_image, warp_labels};
use antiblur::synth::{phantom, random_smooth_field, PhantomKind, SynthConfig};
use antiblur::Result;

fn main() -> Result<()> {
    let dims = Dims::new(&[64, 64])?;
    let (image, labels) = phantom(PhantomKind::LabeledShapes, &dims)?;
    let labels = labels.expect("labeled_shapes always carries labels");

    let field = random_smooth_field(&SynthConfig::desk(&[64, 64], 11))?;
    let warped = warp_image(&image, &field)?;
    let warped_labels = warp_labels(&labels, &field)?;

    // crop a 2-voxel margin so warp border artifacts do not skew the scores
    let rep = report(&warped, &image, Some((&warped_labels, &labels)), 2)?;
    println!("{}", serde_json::to_string_pretty(&rep).expect("report serializes"));
    Ok(())
}
