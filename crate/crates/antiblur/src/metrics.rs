//! Registration-accuracy and sharpness metrics: SSIM, Pearson correlation,
//! Dice/Jaccard overlap, SMD and Tenengrad.
//!
//! Sharpness scores are no-reference: SMD is the mean absolute
//! adjacent-voxel difference over all axes, Tenengrad the mean squared Sobel
//! gradient magnitude over interior voxels. Both are computed per voxel so
//! values are comparable across grid sizes; when a warp has introduced zero
//! borders, evaluate them on an interior crop.

use serde::Serialize;

use crate::grid::{Dims, Image, LabelMap};
use crate::{Error, Result};

const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_L: f64 = 1.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

/// Named metric values for one registration result. Label metrics are
/// absent without label maps.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub ssim: Option<f64>,
    pub cc: Option<f64>,
    pub dice: Option<f64>,
    pub jaccard: Option<f64>,
    pub smd: Option<f64>,
    pub tenengrad: Option<f64>,
}

fn check_dims(a: &Dims, b: &Dims, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!(
            "{}: {:?} vs {:?}",
            what,
            a.extents(),
            b.extents()
        )));
    }
    Ok(())
}

/// Separable zero-padded Gaussian filter plus the matching normalization
/// mask, so border weights renormalize to 1.
fn gaussian_filter_normalized(dims: &Dims, data: &[f64]) -> Vec<f64> {
    let n = dims.naxes();
    let mut values = data.to_vec();
    let mut mask = vec![1.0; data.len()];
    for a in 0..n {
        let size = SSIM_WINDOW.min(if dims.extents()[a] % 2 == 1 {
            dims.extents()[a]
        } else {
            dims.extents()[a] - 1
        });
        let kernel = gaussian_kernel(size, SSIM_SIGMA);
        values = filter_axis(dims, &values, a, &kernel);
        mask = filter_axis(dims, &mask, a, &kernel);
    }
    values.iter().zip(&mask).map(|(v, m)| v / m).collect()
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Convolve along one axis with zero padding.
pub(crate) fn filter_axis(dims: &Dims, data: &[f64], axis: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let strides = dims.strides();
    let extent = dims.extents()[axis] as i64;
    let mut out = vec![0.0; data.len()];
    for (p, pt) in dims.points().enumerate() {
        let c = pt[axis] as i64;
        let mut acc = 0.0;
        let lo = (-r).max(-c);
        let hi = r.min(extent - 1 - c);
        for off in lo..=hi {
            let q = (p as i64 + off * strides[axis] as i64) as usize;
            acc += kernel[(off + r) as usize] * data[q];
        }
        out[p] = acc;
    }
    out
}

/// Mean local structural similarity with a Gaussian window (size 11,
/// sigma 1.5, shrunk per axis on small grids), K1=0.01, K2=0.03, L=1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a.dims(), b.dims(), "ssim dims mismatch")?;
    let dims = a.dims();
    let c1 = (SSIM_K1 * SSIM_L).powi(2);
    let c2 = (SSIM_K2 * SSIM_L).powi(2);

    let mu_a = gaussian_filter_normalized(dims, a.data());
    let mu_b = gaussian_filter_normalized(dims, b.data());
    let sq_a: Vec<f64> = a.data().iter().map(|v| v * v).collect();
    let sq_b: Vec<f64> = b.data().iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    let mu_aa = gaussian_filter_normalized(dims, &sq_a);
    let mu_bb = gaussian_filter_normalized(dims, &sq_b);
    let mu_ab = gaussian_filter_normalized(dims, &ab);

    let mut total = 0.0;
    for p in 0..a.data().len() {
        let va = mu_aa[p] - mu_a[p] * mu_a[p];
        let vb = mu_bb[p] - mu_b[p] * mu_b[p];
        let cov = mu_ab[p] - mu_a[p] * mu_b[p];
        total += ((2.0 * mu_a[p] * mu_b[p] + c1) * (2.0 * cov + c2))
            / ((mu_a[p] * mu_a[p] + mu_b[p] * mu_b[p] + c1) * (va + vb + c2));
    }
    Ok(total / a.data().len() as f64)
}

/// Global Pearson correlation coefficient.
pub fn cc(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a.dims(), b.dims(), "cc dims mismatch")?;
    let n = a.data().len() as f64;
    let ma = a.data().iter().sum::<f64>() / n;
    let mb = b.data().iter().sum::<f64>() / n;
    let mut p = 0.0;
    let mut qa = 0.0;
    let mut qb = 0.0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        p += (x - ma) * (y - mb);
        qa += (x - ma) * (x - ma);
        qb += (y - mb) * (y - mb);
    }
    if qa == 0.0 || qb == 0.0 {
        return Err(Error::Degenerate("constant image in correlation".into()));
    }
    Ok(p / (qa * qb).sqrt())
}

/// Mean Dice and Jaccard over every nonzero label present in either map.
/// A label missing from one map scores zero overlap, not NaN.
pub fn dice_jaccard(a: &LabelMap, b: &LabelMap) -> Result<(f64, f64)> {
    check_dims(a.dims(), b.dims(), "overlap dims mismatch")?;
    let mut labels = a.label_set();
    labels.extend(b.label_set());
    labels.remove(&0);
    if labels.is_empty() {
        return Err(Error::Degenerate("no nonzero labels".into()));
    }
    let mut dice_sum = 0.0;
    let mut jac_sum = 0.0;
    for &l in &labels {
        let mut na = 0usize;
        let mut nb = 0usize;
        let mut inter = 0usize;
        for (&x, &y) in a.labels().iter().zip(b.labels()) {
            let ia = x == l;
            let ib = y == l;
            na += ia as usize;
            nb += ib as usize;
            inter += (ia && ib) as usize;
        }
        let union = na + nb - inter;
        dice_sum += if na + nb > 0 {
            2.0 * inter as f64 / (na + nb) as f64
        } else {
            0.0
        };
        jac_sum += if union > 0 {
            inter as f64 / union as f64
        } else {
            0.0
        };
    }
    let k = labels.len() as f64;
    Ok((dice_sum / k, jac_sum / k))
}

/// Mean absolute forward difference over all axes, normalized per voxel.
pub fn smd(img: &Image) -> Result<f64> {
    let dims = img.dims();
    if dims.extents().iter().any(|&e| e < 2) {
        return Err(Error::Dimension("smd needs every axis >= 2".into()));
    }
    let n = dims.naxes();
    let strides = dims.strides();
    let mut total = 0.0;
    for (p, pt) in dims.points().enumerate() {
        for a in 0..n {
            if pt[a] > 0 {
                total += (img.data()[p] - img.data()[p - strides[a]]).abs();
            }
        }
    }
    Ok(total / dims.count() as f64)
}

/// Mean squared Sobel gradient magnitude over interior voxels: a 3-point
/// derivative along each axis, [1,2,1] smoothing on the others, no
/// threshold.
pub fn tenengrad(img: &Image) -> Result<f64> {
    let dims = img.dims();
    if dims.extents().iter().any(|&e| e < 3) {
        return Err(Error::Dimension("tenengrad needs every axis >= 3".into()));
    }
    let n = dims.naxes();
    let strides = dims.strides();
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, pt) in dims.points().enumerate() {
        if (0..n).any(|a| pt[a] == 0 || pt[a] + 1 >= dims.extents()[a]) {
            continue;
        }
        count += 1;
        let mut mag2 = 0.0;
        for a in 0..n {
            // offsets over the 3^n neighborhood: derivative on axis a,
            // smoothing on the rest
            let mut g = 0.0;
            let mut off = [-1i64; 3];
            loop {
                let mut w = 1.0;
                let mut q = p as i64;
                for ax in 0..n {
                    if ax == a {
                        w *= off[ax] as f64; // -1, 0, +1
                    } else {
                        w *= if off[ax] == 0 { 2.0 } else { 1.0 };
                    }
                    q += off[ax] * strides[ax] as i64;
                }
                if w != 0.0 {
                    g += w * img.data()[q as usize];
                }
                let mut ax = n;
                loop {
                    if ax == 0 {
                        off[0] = 2;
                        break;
                    }
                    ax -= 1;
                    off[ax] += 1;
                    if off[ax] <= 1 {
                        break;
                    }
                    off[ax] = -1;
                }
                if off[0] > 1 {
                    break;
                }
            }
            mag2 += g * g;
        }
        total += mag2;
    }
    Ok(total / count as f64)
}

/// Drop `margin` voxels from every side of every axis; used to evaluate
/// sharpness away from warp-induced zero borders.
pub fn interior_crop(img: &Image, margin: usize) -> Result<Image> {
    let dims = img.dims();
    let n = dims.naxes();
    let new_extents: Vec<usize> = dims
        .extents()
        .iter()
        .map(|&e| {
            e.checked_sub(2 * margin)
                .ok_or_else(|| Error::Dimension(format!("margin {} too large for extent {}", margin, e)))
        })
        .collect::<Result<_>>()?;
    let new_dims = Dims::new(&new_extents)?;
    let mut data = Vec::with_capacity(new_dims.count());
    for pt in new_dims.points() {
        let coords: Vec<usize> = (0..n).map(|a| pt[a] + margin).collect();
        data.push(img.get(&coords));
    }
    Image::new(new_dims, data)
}

/// Full report for a registered image against its target; sharpness is
/// evaluated on the interior crop of the first image.
pub fn report(
    warped: &Image,
    target: &Image,
    labels: Option<(&LabelMap, &LabelMap)>,
    crop_margin: usize,
) -> Result<MetricsReport> {
    let (dice, jaccard) = match labels {
        Some((la, lb)) => {
            let (d, j) = dice_jaccard(la, lb)?;
            (Some(d), Some(j))
        }
        None => (None, None),
    };
    let cropped = interior_crop(warped, crop_margin)?;
    Ok(MetricsReport {
        ssim: Some(ssim(warped, target)?),
        cc: Some(cc(warped, target)?),
        dice,
        jaccard,
        smd: Some(smd(&cropped)?),
        tenengrad: Some(tenengrad(&cropped)?),
    })
}
