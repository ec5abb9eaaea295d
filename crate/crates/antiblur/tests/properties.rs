//! Property tests over randomized inputs: serialization round trips and
//! algebraic invariants that must hold for arbitrary data, not just the
//! seeds the unit tests pin.

use antiblur::grid::{
    load_field, load_image, save_field, save_image, zero_field, DeformationField, Dims,
    Image, ImageFormat,
};
use antiblur::metrics::dice_jaccard;
use antiblur::sampler::compose_fields;
use antiblur::LabelMap;
use proptest::collection::vec;
use proptest::prelude::*;

fn dims_2d() -> impl Strategy<Value = Vec<usize>> {
    (2usize..12, 2usize..12).prop_map(|(h, w)| vec![h, w])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rawvol_image_round_trip_is_bit_exact(
        extents in dims_2d(),
        raw in vec(-1.0e6f64..1.0e6, 4..144),
    ) {
        let count: usize = extents.iter().product();
        prop_assume!(raw.len() >= count);
        let dims = Dims::new(&extents).unwrap();
        let img = Image::new(dims, raw[..count].to_vec()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.rawvol");
        save_image(&img, &path, ImageFormat::RawVol).unwrap();
        let back = load_image(&path, ImageFormat::RawVol).unwrap();

        // storage is f32; a second trip must be lossless
        save_image(&back, &path, ImageFormat::RawVol).unwrap();
        let again = load_image(&path, ImageFormat::RawVol).unwrap();
        prop_assert_eq!(back.dims().extents(), img.dims().extents());
        prop_assert_eq!(back.data(), again.data());
    }

    #[test]
    fn rawvol_field_round_trip_is_stable(
        extents in dims_2d(),
        raw in vec(-8.0f64..8.0, 8..288),
    ) {
        let count: usize = extents.iter().product::<usize>() * extents.len();
        prop_assume!(raw.len() >= count);
        let dims = Dims::new(&extents).unwrap();
        let field = DeformationField::new(dims, raw[..count].to_vec()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.rawvol");
        save_field(&field, &path).unwrap();
        let back = load_field(&path).unwrap();
        save_field(&back, &path).unwrap();
        let again = load_field(&path).unwrap();
        prop_assert_eq!(back.data(), again.data());
    }

    #[test]
    fn composing_with_zero_is_identity(
        extents in dims_2d(),
        raw in vec(-3.0f64..3.0, 8..288),
    ) {
        let count: usize = extents.iter().product::<usize>() * extents.len();
        prop_assume!(raw.len() >= count);
        let dims = Dims::new(&extents).unwrap();
        let field = DeformationField::new(dims.clone(), raw[..count].to_vec()).unwrap();
        let zero = zero_field(&dims);
        let left = compose_fields(&zero, &field).unwrap();
        let right = compose_fields(&field, &zero).unwrap();
        prop_assert_eq!(left.data(), field.data());
        prop_assert_eq!(right.data(), field.data());
    }

    #[test]
    fn dice_never_below_jaccard(
        extents in dims_2d(),
        raw in vec(0u32..4, 4..144),
    ) {
        let count: usize = extents.iter().product();
        prop_assume!(raw.len() >= count);
        prop_assume!(raw[..count].iter().any(|&l| l != 0));
        let dims = Dims::new(&extents).unwrap();
        let map = LabelMap::new(dims.clone(), raw[..count].to_vec()).unwrap();
        let shifted: Vec<u32> = {
            let mut v = raw[..count].to_vec();
            v.rotate_right(1);
            v
        };
        let other = LabelMap::new(dims, shifted).unwrap();
        let (d, j) = dice_jaccard(&map, &other).unwrap();
        prop_assert!(d >= j - 1e-15);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!((0.0..=1.0).contains(&j));
    }
}
