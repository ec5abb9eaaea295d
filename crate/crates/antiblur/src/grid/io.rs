//! File formats: binary PGM (P5) for 2D images and `rawvol` for everything
//! else.
//!
//! A `rawvol` file is raw little-endian IEEE-754 32-bit floats in row-major
//! order, component-interleaved per grid point, described by a JSON sidecar
//! `<path>.json` of the form `{"dims":[...],"components":K}`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::{DeformationField, Dims, Image, LabelMap};

/// On-disk image format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    /// Binary P5 PGM, maxval 255, 2D only.
    Pgm,
    /// Raw f32 volume with JSON sidecar.
    RawVol,
}

impl ImageFormat {
    /// Pick a format from a file extension; `.pgm` is PGM, anything else rawvol.
    pub fn from_path(path: &Path) -> ImageFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("pgm") => ImageFormat::Pgm,
            _ => ImageFormat::RawVol,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    dims: Vec<usize>,
    components: usize,
}

pub fn load_image(path: &Path, format: ImageFormat) -> Result<Image> {
    match format {
        ImageFormat::Pgm => load_pgm(path),
        ImageFormat::RawVol => {
            let (dims, components, data) = load_rawvol(path)?;
            if components != 1 {
                return Err(Error::Format(format!(
                    "expected 1 component for an image, sidecar says {}",
                    components
                )));
            }
            Image::new(dims, data)
        }
    }
}

pub fn save_image(img: &Image, path: &Path, format: ImageFormat) -> Result<()> {
    match format {
        ImageFormat::Pgm => save_pgm(img, path),
        ImageFormat::RawVol => save_rawvol(path, img.dims(), 1, img.data()),
    }
}

pub fn load_field(path: &Path) -> Result<DeformationField> {
    let (dims, components, data) = load_rawvol(path)?;
    if components != dims.naxes() {
        return Err(Error::Format(format!(
            "field sidecar has {} components for {} axes",
            components,
            dims.naxes()
        )));
    }
    DeformationField::new(dims, data)
}

pub fn save_field(field: &DeformationField, path: &Path) -> Result<()> {
    save_rawvol(path, field.dims(), field.naxes(), field.data())
}

/// Labels travel as rawvol with integer-valued floats.
pub fn load_labels(path: &Path) -> Result<LabelMap> {
    let (dims, components, data) = load_rawvol(path)?;
    if components != 1 {
        return Err(Error::Format(format!(
            "expected 1 component for labels, sidecar says {}",
            components
        )));
    }
    let labels = data
        .iter()
        .map(|&v| {
            if v < 0.0 || v.fract() != 0.0 {
                Err(Error::Data(format!("non-integer label value {}", v)))
            } else {
                Ok(v as u32)
            }
        })
        .collect::<Result<Vec<u32>>>()?;
    LabelMap::new(dims, labels)
}

pub fn save_labels(labels: &LabelMap, path: &Path) -> Result<()> {
    let data: Vec<f64> = labels.labels().iter().map(|&l| l as f64).collect();
    save_rawvol(path, labels.dims(), 1, &data)
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    s.into()
}

fn load_rawvol(path: &Path) -> Result<(Dims, usize, Vec<f64>)> {
    let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    let dims = Dims::new(&sidecar.dims)?;
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "rawvol byte length {} is not a multiple of 4",
            bytes.len()
        )));
    }
    let nfloats = bytes.len() / 4;
    let expected = dims.count() * sidecar.components;
    if nfloats != expected {
        return Err(Error::Dimension(format!(
            "rawvol holds {} floats, sidecar dims {:?} x {} components require {}",
            nfloats,
            dims.extents(),
            sidecar.components,
            expected
        )));
    }
    let mut data = Vec::with_capacity(nfloats);
    for chunk in bytes.chunks_exact(4) {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if v.is_nan() {
            return Err(Error::Data("rawvol contains NaN".into()));
        }
        data.push(v as f64);
    }
    Ok((dims, sidecar.components, data))
}

fn save_rawvol(path: &Path, dims: &Dims, components: usize, data: &[f64]) -> Result<()> {
    let sidecar = Sidecar {
        dims: dims.extents().to_vec(),
        components,
    };
    fs::write(sidecar_path(path), serde_json::to_string(&sidecar)?)?;
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for &v in data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn load_pgm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;

    // header tokens separated by whitespace; '#' starts a comment to EOL
    let mut next_token = |bytes: &[u8]| -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = next_token(&bytes)?;
    if magic != "P5" {
        return Err(Error::Format(format!("expected P5 magic, got {:?}", magic)));
    }
    let width: usize = next_token(&bytes)?
        .parse()
        .map_err(|_| Error::Format("bad PGM width".into()))?;
    let height: usize = next_token(&bytes)?
        .parse()
        .map_err(|_| Error::Format("bad PGM height".into()))?;
    let maxval: usize = next_token(&bytes)?
        .parse()
        .map_err(|_| Error::Format("bad PGM maxval".into()))?;
    if maxval != 255 {
        return Err(Error::Format(format!("only maxval 255 supported, got {}", maxval)));
    }
    // exactly one whitespace byte after maxval, then the raster
    pos += 1;
    let raster = &bytes[pos.min(bytes.len())..];
    if raster.len() != width * height {
        return Err(Error::Dimension(format!(
            "PGM raster holds {} bytes, header {}x{} requires {}",
            raster.len(),
            width,
            height,
            width * height
        )));
    }
    // axis 0 = rows (height), axis 1 = columns (width)
    let dims = Dims::new(&[height, width])?;
    let data = raster.iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(dims, data)
}

fn save_pgm(img: &Image, path: &Path) -> Result<()> {
    if img.dims().naxes() != 2 {
        return Err(Error::Dimension("PGM is 2D only".into()));
    }
    let height = img.dims().extents()[0];
    let width = img.dims().extents()[1];
    let mut out = Vec::with_capacity(img.data().len() + 32);
    write!(out, "P5\n{} {}\n255\n", width, height)?;
    for &v in img.data() {
        let q = (v * 255.0).round().clamp(0.0, 255.0) as u8;
        out.push(q);
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::zero_field;

    #[test]
    fn pgm_2x2_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.pgm");
        fs::write(&p, b"P5\n2 2\n255\n\x00\xff\x80\x40").unwrap();
        let img = load_image(&p, ImageFormat::Pgm).unwrap();
        assert_eq!(img.dims().extents(), &[2, 2]);
        assert_eq!(img.data(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    }

    #[test]
    fn pgm_reader_tolerates_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.pgm");
        fs::write(&p, b"P5\n# a comment\n2 2\n255\n\x00\xff\x80\x40").unwrap();
        let img = load_image(&p, ImageFormat::Pgm).unwrap();
        assert_eq!(img.data()[1], 1.0);
    }

    #[test]
    fn pgm_round_trip_endpoints_exact_and_half_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.pgm");
        let dims = Dims::new(&[2, 2]).unwrap();
        let img = Image::new(dims, vec![0.0, 1.0, 0.5, 0.25]).unwrap();
        save_image(&img, &p, ImageFormat::Pgm).unwrap();
        let back = load_image(&p, ImageFormat::Pgm).unwrap();
        assert_eq!(back.data()[0], 0.0);
        assert_eq!(back.data()[1], 1.0);
        assert_eq!(back.data()[2], 128.0 / 255.0);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 510.0);
        }
    }

    #[test]
    fn rawvol_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.rawvol");
        let dims = Dims::new(&[4, 4, 4]).unwrap();
        // f32-representable data survives the trip exactly
        let data: Vec<f64> = (0..64).map(|i| (i as f32 * 0.125) as f64).collect();
        let img = Image::new(dims, data).unwrap();
        save_image(&img, &p, ImageFormat::RawVol).unwrap();
        let back = load_image(&p, ImageFormat::RawVol).unwrap();
        assert_eq!(img, back);
        // saving again yields byte-identical files
        let bytes1 = fs::read(&p).unwrap();
        save_image(&back, &p, ImageFormat::RawVol).unwrap();
        assert_eq!(bytes1, fs::read(&p).unwrap());
    }

    #[test]
    fn rawvol_length_mismatch_is_dimension_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.rawvol");
        fs::write(sidecar_path(&p), r#"{"dims":[4,4,4],"components":1}"#).unwrap();
        fs::write(&p, vec![0u8; 63 * 4]).unwrap();
        match load_image(&p, ImageFormat::RawVol) {
            Err(Error::Dimension(_)) => {}
            other => panic!("expected dimension error, got {:?}", other),
        }
    }

    #[test]
    fn rawvol_nan_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.rawvol");
        fs::write(sidecar_path(&p), r#"{"dims":[2,2],"components":1}"#).unwrap();
        let mut bytes = vec![];
        for v in [0.0f32, 1.0, f32::NAN, 0.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&p, bytes).unwrap();
        match load_image(&p, ImageFormat::RawVol) {
            Err(Error::Data(_)) => {}
            other => panic!("expected data error, got {:?}", other),
        }
    }

    #[test]
    fn field_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.rawvol");
        let f = zero_field(&Dims::new(&[3, 3]).unwrap());
        save_field(&f, &p).unwrap();
        let back = load_field(&p).unwrap();
        assert_eq!(f, back);
    }
}
