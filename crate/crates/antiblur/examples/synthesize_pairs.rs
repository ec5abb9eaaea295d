//! Generate a synthetic registration pair: a labeled phantom, a random
//! smooth deformation, and the warped target, then save everything to a
//! temporary directory in the on-disk formats the CLI consumes.
//!
//! Run with `cargo run --example synthesize_pairs`.

use antiblur::grid::{save_field, save_image, save_labels, Dims, ImageFormat};
use antiblur::synth::{make_pair, phantom, PhantomKind, SynthConfig};
use antiblur::Result;

fn main() -> Result<()> {
    let dims = Dims::new(&[64, 64])?;
    let (raw, labels) = phantom(PhantomKind::LabeledShapes, &dims)?;
    let labels = labels.expect("labeled_shapes always carries labels");

    let cfg = SynthConfig::desk(&[64, 64], 7);
    println!(
        "desk preset: sigma {:.1}, alpha {:.1}, seed {}",
        cfg.sigma, cfg.alpha, cfg.seed
    );

    let (source, target, field) = make_pair(&raw, &cfg)?;
    let mean_disp: f64 = (0..dims.count())
        .map(|p| {
            (field.component(p, 0).powi(2) + field.component(p, 1).powi(2)).sqrt()
        })
        .sum::<f64>()
        / dims.count() as f64;
    println!("mean displacement magnitude: {:.2} voxels", mean_disp);

    let out = std::env::temp_dir().join("antiblur_synth_example");
    std::fs::create_dir_all(&out)?;
    save_image(&source, &out.join("source.pgm"), ImageFormat::Pgm)?;
    save_image(&target, &out.join("target.pgm"), ImageFormat::Pgm)?;
    save_field(&field, &out.join("true_field.rawvol"))?;
    save_labels(&labels, &out.join("labels.rawvol"))?;
    println!("wrote source/target/true_field/labels under {}", out.display());
    Ok(())
}
