//! Verify the analytic stage-loss gradient against central finite
//! differences on a random instance — the same oracle the test suite uses.
//!
//! Run with `cargo run --example gradient_check`.

use antiblur::energy::{loss_gradient_wrt_field, stage_loss_with_grad, LossConfig};
use antiblur::grid::{DeformationField, Dims, Image};
use antiblur::Result;
use rand::prelude::*;

fn main() -> Result<()> {
    let dims = Dims::new(&[8, 8])?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    let src = Image::new(dims.clone(), (0..64).map(|_| rng.gen()).collect())?;
    let target = Image::new(dims.clone(), (0..64).map(|_| rng.gen()).collect())?;
    // keep fractional parts away from the tent kink points
    let field = |rng: &mut rand_chacha::ChaCha8Rng| {
        DeformationField::new(
            dims.clone(),
            (0..128).map(|_| 0.1 + 0.8 * rng.gen::<f64>()).collect(),
        )
        .unwrap()
    };
    let prev = DeformationField::zeros(dims.clone());
    let inc = field(&mut rng);
    let cfg = LossConfig::default();

    let grad = loss_gradient_wrt_field(&src, &target, &prev, &inc, &cfg)?;

    let h = 1e-3;
    let mut worst = 0.0f64;
    for i in 0..inc.data().len() {
        let mut plus = inc.data().to_vec();
        plus[i] += h;
        let mut minus = inc.data().to_vec();
        minus[i] -= h;
        let lp = stage_loss_with_grad(
            &src,
            &target,
            &prev,
            &DeformationField::new(dims.clone(), plus)?,
            &cfg,
        )?
        .0
        .total;
        let lm = stage_loss_with_grad(
            &src,
            &target,
            &prev,
            &DeformationField::new(dims.clone(), minus)?,
            &cfg,
        )?
        .0
        .total;
        let fd = (lp - lm) / (2.0 * h);
        let denom = fd.abs().max(grad.data()[i].abs()).max(1e-6);
        worst = worst.max((fd - grad.data()[i]).abs() / denom);
    }
    println!("worst relative error vs finite differences: {:.2e}", worst);
    println!("within 1e-3 tolerance: {}", worst <= 1e-3);
    Ok(())
}
