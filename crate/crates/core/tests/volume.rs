use jmap_core::data::{generate_phantom, PhantomSpec, Template};
use jmap_core::volume::{
    mask_brain, normalize_intensity, read_nifti, read_nifti_bytes, read_rvol, write_nifti, write_nifti_bytes,
    write_rvol, MaskThreshold, NiftiError,
};
use jmap_core::{Geometry, Volume};
use nalgebra::Matrix4;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn le_i16(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn le_i32(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn le_f32(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

#[test]
fn phantom_file_header_parses_byte_by_byte() {
    let t = Template::mini([32; 3]);
    let p = generate_phantom(&PhantomSpec::default(), &t).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mri.nii");
    write_nifti(&p.mri, &path).unwrap();
    let b = std::fs::read(&path).unwrap();

    assert_eq!(b.len(), 352 + 32 * 32 * 32 * 4);
    assert_eq!(le_i32(&b, 0), 348);
    assert_eq!(&b[344..348], b"n+1\0");
    assert_eq!(le_i16(&b, 40), 3);
    assert_eq!([le_i16(&b, 42), le_i16(&b, 44), le_i16(&b, 46)], [32, 32, 32]);
    assert_eq!(le_i16(&b, 70), 16);
    assert_eq!(le_i16(&b, 72), 32);
    assert_eq!([le_f32(&b, 80), le_f32(&b, 84), le_f32(&b, 88)], [1.0, 1.0, 1.0]);
    assert_eq!(le_f32(&b, 108), 352.0);
    // first voxel, raw
    assert_eq!(le_f32(&b, 352), p.mri.data()[0] as f32);

    let back = read_nifti(&path).unwrap();
    assert_eq!(back.spacing(), [1.0, 1.0, 1.0]);
    assert_eq!(back.dims(), [32, 32, 32]);
}

#[test]
fn single_voxel_file_is_356_bytes() {
    let v = Volume::zeros(Geometry::unit([1, 1, 1]));
    assert_eq!(write_nifti_bytes(&v).unwrap().len(), 356);
}

#[test]
fn constant_volume_round_trips_exactly() {
    let v = Volume::filled(Geometry::unit([4, 4, 4]), 7.0).unwrap();
    let back = read_nifti_bytes(&write_nifti_bytes(&v).unwrap()).unwrap();
    assert_eq!(back, v);
}

#[test]
fn random_volume_round_trip_within_float32_quantization() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // header fields are float32, so bit-exact metadata needs representable values
    let affine = Matrix4::new(
        0.875, 0.0, 0.0, -14.0, //
        0.0, 1.125, 0.0, 3.5, //
        0.0, 0.0, 1.25, 8.0, //
        0.0, 0.0, 0.0, 1.0,
    );
    let g = Geometry::new([8, 8, 8], [0.875, 1.125, 1.25], affine).unwrap();
    let v = Volume::new(g, (0..512).map(|_| rng.random::<f64>()).collect()).unwrap();
    let back = read_nifti_bytes(&write_nifti_bytes(&v).unwrap()).unwrap();
    assert_eq!(back.dims(), v.dims());
    assert_eq!(back.spacing(), v.spacing());
    assert_eq!(back.affine(), v.affine());
    let err = v
        .data()
        .iter()
        .zip(back.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err <= 2f64.powi(-20), "{err}");
}

#[test]
fn header_violations_name_the_field() {
    let v = Volume::filled(Geometry::unit([2, 2, 2]), 1.0).unwrap();
    let good = write_nifti_bytes(&v).unwrap();

    let mut bad = good.clone();
    bad[344..348].copy_from_slice(b"ni1\0");
    let err = read_nifti_bytes(&bad).unwrap_err();
    assert!(matches!(err, NiftiError::BadMagic(_)));
    assert!(err.to_string().contains("bad magic"));

    let mut bad = good.clone();
    bad[70..72].copy_from_slice(&1024i16.to_le_bytes());
    assert!(read_nifti_bytes(&bad).unwrap_err().to_string().starts_with("datatype"));

    let mut bad = good.clone();
    bad[40..42].copy_from_slice(&4i16.to_le_bytes());
    assert!(read_nifti_bytes(&bad).unwrap_err().to_string().starts_with("dim[0]"));

    let err = read_nifti_bytes(&good[..good.len() - 1]).unwrap_err();
    assert!(matches!(err, NiftiError::Truncated { .. }));
}

#[test]
fn nan_is_refused() {
    let v = Volume::zeros(Geometry::unit([2, 2, 2]));
    let mut data = v.data().to_vec();
    data[3] = f64::NAN;
    // the constructor already rejects it; nothing non-finite reaches the writer
    assert!(Volume::new(v.geometry().clone(), data).is_err());
}

#[test]
fn rvol_sidecar_is_lossless() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = Geometry::with_spacing([3, 4, 5], [0.5, 1.5, 2.0]).unwrap();
    let v = Volume::new(g, (0..60).map(|_| rng.random::<f64>() * 100.0).collect()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.rvol");
    write_rvol(&v, &path).unwrap();
    let back = read_rvol(&path).unwrap();
    assert_eq!(back.data(), v.data());
    assert_eq!(back.spacing(), v.spacing());
}

#[test]
fn downsampling_a_ramp_doubles_its_step() {
    let v = Volume::from_fn(Geometry::unit([16, 16, 16]), |x, _, _| x as f64).unwrap();
    let half = v.resample([8, 8, 8], [2.0; 3]).unwrap();
    for x in 1..7 {
        let step = half.get(x + 1, 3, 3) - half.get(x, 3, 3);
        assert!((step - 2.0).abs() < 1e-12);
    }
    let c = Volume::filled(Geometry::unit([9, 7, 5]), 0.25).unwrap();
    let r = c.resample([4, 11, 6], [2.25, 7.0 / 11.0, 5.0 / 6.0]).unwrap();
    assert!(r.data().iter().all(|&x| (x - 0.25).abs() < 1e-15));
}

#[test]
fn normalization_and_sphere_mask() {
    let g = Geometry::unit([101, 1, 1]);
    let ramp = Volume::from_fn(g, |x, _, _| x as f64).unwrap();
    let n = normalize_intensity(&ramp);
    assert!(n.data().iter().all(|&v| (0.0..=1.0).contains(&v)));

    let g = Geometry::unit([20, 20, 20]);
    let inside = |x: usize, y: usize, z: usize| {
        let d = [x, y, z].map(|c| c as f64 - 9.5);
        d.iter().map(|v| v * v).sum::<f64>() <= 36.0
    };
    let sphere = Volume::from_fn(g, |x, y, z| if inside(x, y, z) { 1.0 } else { 0.0 }).unwrap();
    let (masked, mask) = mask_brain(&sphere, MaskThreshold::Otsu);
    for i in 0..sphere.len() {
        let [x, y, z] = sphere.geometry().coords(i);
        assert_eq!(mask.labels()[i] == 1, inside(x, y, z));
    }
    assert_eq!(masked, sphere);

    let flat = Volume::filled(Geometry::unit([4, 4, 4]), 3.0).unwrap();
    let (m, l) = mask_brain(&normalize_intensity(&flat), MaskThreshold::Otsu);
    assert!(m.data().iter().all(|&v| v == 0.0));
    assert_eq!(l.count(1), 0);
}

proptest! {
    #[test]
    fn trilinear_reproduces_trilinear_polynomials(
        x in 0.0f64..7.0, y in 0.0f64..6.0, z in 0.0f64..5.0,
    ) {
        let v = Volume::from_fn(Geometry::unit([8, 7, 6]), |x, y, z| {
            2.0 * x as f64 + 3.0 * y as f64 - z as f64 + 0.5 * (x * y * z) as f64
        })
        .unwrap();
        let expected = 2.0 * x + 3.0 * y - z + 0.5 * x * y * z;
        prop_assert!((v.sample_trilinear([x, y, z]) - expected).abs() < 1e-10);
    }
}
