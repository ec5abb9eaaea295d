//! Value-semantic grid containers: images, deformation fields, label maps.
//!
//! All containers are plain immutable values over a 2- or 3-axis grid in
//! row-major axis order. Displacements are in voxel units: component `c`
//! displaces along storage axis `c`.

mod io;

pub use io::{
    load_field, load_image, load_labels, save_field, save_image, save_labels, ImageFormat,
};

use crate::{Error, Result};

/// Grid extents, 2 or 3 axes, each at least 2 voxels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dims(Vec<usize>);

impl Dims {
    pub fn new(extents: &[usize]) -> Result<Self> {
        if extents.len() < 2 || extents.len() > 3 {
            return Err(Error::Dimension(format!(
                "expected 2 or 3 axes, got {}",
                extents.len()
            )));
        }
        if extents.iter().any(|&e| e < 2) {
            return Err(Error::Dimension(format!(
                "every axis extent must be >= 2, got {:?}",
                extents
            )));
        }
        Ok(Dims(extents.to_vec()))
    }

    pub fn naxes(&self) -> usize {
        self.0.len()
    }

    pub fn extents(&self) -> &[usize] {
        &self.0
    }

    /// Total number of grid points.
    pub fn count(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major strides, one per axis.
    pub fn strides(&self) -> [usize; 3] {
        let mut s = [0usize; 3];
        let n = self.naxes();
        let mut acc = 1;
        for a in (0..n).rev() {
            s[a] = acc;
            acc *= self.0[a];
        }
        s
    }

    /// Linear index of integer coordinates (caller guarantees in range).
    pub fn index(&self, coords: &[usize]) -> usize {
        let s = self.strides();
        coords
            .iter()
            .zip(s.iter())
            .map(|(&c, &st)| c * st)
            .sum()
    }

    /// Iterate all grid points in row-major order, yielding coordinates.
    /// Unused trailing axes of the yielded array are 0.
    pub fn points(&self) -> PointIter<'_> {
        PointIter {
            dims: self,
            next: Some([0; 3]),
        }
    }

    pub fn in_range(&self, coords: &[i64]) -> bool {
        coords
            .iter()
            .zip(self.0.iter())
            .all(|(&c, &e)| c >= 0 && (c as usize) < e)
    }
}

/// Row-major coordinate iterator over a grid.
pub struct PointIter<'a> {
    dims: &'a Dims,
    next: Option<[usize; 3]>,
}

impl Iterator for PointIter<'_> {
    type Item = [usize; 3];

    fn next(&mut self) -> Option<[usize; 3]> {
        let cur = self.next?;
        let n = self.dims.naxes();
        let mut nxt = cur;
        let mut a = n;
        loop {
            if a == 0 {
                self.next = None;
                break;
            }
            a -= 1;
            nxt[a] += 1;
            if nxt[a] < self.dims.extents()[a] {
                self.next = Some(nxt);
                break;
            }
            nxt[a] = 0;
        }
        Some(cur)
    }
}

/// Scalar intensity grid, nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    dims: Dims,
    data: Vec<f64>,
}

impl Image {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.count() {
            return Err(Error::Dimension(format!(
                "image data length {} does not match dims {:?}",
                data.len(),
                dims.extents()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("image contains non-finite intensities".into()));
        }
        Ok(Image { dims, data })
    }

    pub fn constant(dims: Dims, value: f64) -> Self {
        let n = dims.count();
        Image {
            dims,
            data: vec![value; n],
        }
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, coords: &[usize]) -> f64 {
        self.data[self.dims.index(coords)]
    }
}

/// Per-grid-point displacement vectors in voxel units, one component per
/// axis, stored component-interleaved per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    dims: Dims,
    data: Vec<f64>,
}

impl DeformationField {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.count() * dims.naxes() {
            return Err(Error::Dimension(format!(
                "field data length {} does not match dims {:?} with {} components",
                data.len(),
                dims.extents(),
                dims.naxes()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("field contains non-finite displacements".into()));
        }
        Ok(DeformationField { dims, data })
    }

    /// The identity transform: zero displacement everywhere.
    pub fn zeros(dims: Dims) -> Self {
        let n = dims.count() * dims.naxes();
        DeformationField {
            dims,
            data: vec![0.0; n],
        }
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn naxes(&self) -> usize {
        self.dims.naxes()
    }

    /// Displacement component `c` at linear grid point `p`.
    pub fn component(&self, p: usize, c: usize) -> f64 {
        self.data[p * self.dims.naxes() + c]
    }
}

/// The identity transform for the given extents.
pub fn zero_field(dims: &Dims) -> DeformationField {
    DeformationField::zeros(dims.clone())
}

/// Integer segmentation grid; label 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    dims: Dims,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(dims: Dims, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != dims.count() {
            return Err(Error::Dimension(format!(
                "label data length {} does not match dims {:?}",
                labels.len(),
                dims.extents()
            )));
        }
        Ok(LabelMap { dims, labels })
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Distinct labels present, including background if present.
    pub fn label_set(&self) -> std::collections::BTreeSet<u32> {
        self.labels.iter().copied().collect()
    }
}

/// Per-stage record of a multi-stage registration run.
#[derive(Debug, Clone)]
pub struct StageTrace {
    pub stage_index: usize,
    pub incremental_field: DeformationField,
    pub combined_field: DeformationField,
    pub warped: Image,
    pub loss_similarity: f64,
    pub loss_regularizer: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_rejects_bad_axes() {
        assert!(Dims::new(&[4]).is_err());
        assert!(Dims::new(&[4, 4, 4, 4]).is_err());
        assert!(Dims::new(&[4, 1]).is_err());
        assert!(Dims::new(&[2, 2]).is_ok());
    }

    #[test]
    fn row_major_indexing() {
        let d = Dims::new(&[2, 3, 4]).unwrap();
        assert_eq!(d.index(&[0, 0, 0]), 0);
        assert_eq!(d.index(&[0, 0, 3]), 3);
        assert_eq!(d.index(&[0, 1, 0]), 4);
        assert_eq!(d.index(&[1, 0, 0]), 12);
        assert_eq!(d.count(), 24);
    }

    #[test]
    fn point_iter_matches_linear_order() {
        let d = Dims::new(&[2, 2, 3]).unwrap();
        for (lin, pt) in d.points().enumerate() {
            assert_eq!(d.index(&pt[..3]), lin);
        }
        assert_eq!(d.points().count(), 12);
    }

    #[test]
    fn zero_field_sizes() {
        let f = zero_field(&Dims::new(&[4, 4]).unwrap());
        assert_eq!(f.data().len(), 32);
        assert!(f.data().iter().all(|&v| v == 0.0));
        let f3 = zero_field(&Dims::new(&[2, 2, 2]).unwrap());
        assert_eq!(f3.data().len(), 24);
    }

    #[test]
    fn image_rejects_nan_and_length_mismatch() {
        let d = Dims::new(&[2, 2]).unwrap();
        assert!(Image::new(d.clone(), vec![0.0; 3]).is_err());
        assert!(Image::new(d.clone(), vec![0.0, 1.0, f64::NAN, 0.0]).is_err());
        assert!(Image::new(d, vec![0.0; 4]).is_ok());
    }
}
