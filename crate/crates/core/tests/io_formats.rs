use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rslf_core::geometry::MotionParams;
use rslf_core::io::{
    self, names, quantize16, read_dataset, read_lightfield, read_mask, read_png, write_lightfield, write_mask,
    write_png16, SCHEMA_VERSION,
};
use rslf_core::lightfield::{Image, LFIntrinsics, LightField4D, Mask, RSTiming};
use rslf_core::synth::{preset, render_rslf};
use rslf_core::{Error, ErrorKind};

fn random_lf(seed: u64, a: usize, w: usize, h: usize) -> LightField4D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Values on the 16-bit grid survive the round trip exactly.
    let data = (0..a * a * w * h)
        .map(|_| rng.gen_range(0..=65535u32) as f64 / 65535.0)
        .collect();
    LightField4D::from_raw(a, w, h, data).unwrap()
}

#[test]
fn light_field_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let lf = random_lf(1, 3, 9, 7);
    let intr = LFIntrinsics::desk(9, 7);
    let timing = RSTiming::for_height(7, intr.v0);
    let m = MotionParams::new([0.1, -0.2, 0.3], [0.01, 0.0, -0.5]);
    let meta = write_lightfield(&lf, &intr, &timing, Some(m), dir.path()).unwrap();
    assert_eq!(meta.schema_version, SCHEMA_VERSION);
    assert_eq!(meta.hashes.len(), 9);
    let (back, intr2, timing2, meta2) = read_lightfield(dir.path()).unwrap();
    assert_eq!(back, lf);
    assert_eq!(intr2, intr);
    assert_eq!(timing2, timing);
    assert_eq!(meta2.motion_gt, Some(m));
    assert_eq!(meta2, meta);
}

#[test]
fn off_grid_values_are_quantized_once() {
    let dir = tempfile::tempdir().unwrap();
    let lf = LightField4D::constant(3, 4, 4, 0.123456789).unwrap();
    let intr = LFIntrinsics::desk(4, 4);
    write_lightfield(&lf, &intr, &RSTiming::for_height(4, intr.v0), None, dir.path()).unwrap();
    let (back, ..) = read_lightfield(dir.path()).unwrap();
    let q = quantize16(0.123456789) as f64 / 65535.0;
    assert!(back.data().iter().all(|&x| x == q));
    assert!((q - 0.123456789).abs() <= 0.5 / 65535.0);
}

#[test]
fn tampered_view_is_reported_as_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let lf = random_lf(2, 3, 6, 6);
    let intr = LFIntrinsics::desk(6, 6);
    write_lightfield(&lf, &intr, &RSTiming::for_height(6, intr.v0), None, dir.path()).unwrap();
    let victim = dir.path().join(io::sai_file_name(2, 1));
    let other = random_lf(3, 1, 6, 6);
    write_png16(&victim, &other.sai_view(0, 0).unwrap().to_image()).unwrap();
    match read_lightfield(dir.path()) {
        Err(Error::Corruption { path }) => assert_eq!(path, victim),
        other => panic!("expected corruption, got {other:?}"),
    }
}

#[test]
fn missing_metadata_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let err = read_lightfield(dir.path()).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Data);
    assert!(err.to_string().contains("meta.json"), "{err}");
}

#[test]
fn unknown_schema_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let lf = random_lf(4, 1, 4, 4);
    let intr = LFIntrinsics::desk(4, 4);
    write_lightfield(&lf, &intr, &RSTiming::for_height(4, intr.v0), None, dir.path()).unwrap();
    let path = dir.path().join(names::META);
    let text = fs::read_to_string(&path).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 99");
    fs::write(&path, text).unwrap();
    match read_lightfield(dir.path()) {
        Err(Error::Version { found: 99, .. }) => {}
        other => panic!("expected version error, got {other:?}"),
    }
}

#[test]
fn masks_and_pngs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut mask = Mask::new(5, 3, false);
    mask.set(1, 2, true);
    mask.set(4, 0, true);
    let p = dir.path().join("m.png");
    write_mask(&p, &mask).unwrap();
    assert_eq!(read_mask(&p).unwrap(), mask);

    let img = Image::from_vec(3, 2, vec![0.0, 1.0, 0.5, 0.25, 1.0 / 65535.0, 0.75]).unwrap();
    let q = img.map(|x| quantize16(x) as f64 / 65535.0);
    let p = dir.path().join("i.png");
    write_png16(&p, &img).unwrap();
    assert_eq!(read_png(&p).unwrap(), q);
}

#[test]
fn eight_bit_and_color_inputs_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("rgb.png");
    let buf = image::RgbImage::from_raw(2, 1, vec![255, 0, 0, 30, 60, 90]).unwrap();
    buf.save(&p).unwrap();
    let img = read_png(&p).unwrap();
    assert!((img.get(0, 0) - 1.0 / 3.0).abs() < 1e-9);
    assert!((img.get(1, 0) - 60.0 / 255.0).abs() < 1e-9);
}

#[test]
fn synthetic_dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = preset("sphere", 24, 3, 5, MotionParams::new([0.0, 0.0, 0.1], [0.05, 0.0, 0.0])).unwrap();
    let art = render_rslf(&spec).unwrap();
    io::write_dataset(&art, &spec, dir.path()).unwrap();
    let data = read_dataset(dir.path()).unwrap();
    assert_eq!(data.intr, art.intr);
    assert_eq!(data.meta.motion_gt, Some(art.motion_gt));
    let gt = io::read_ground_truth(dir.path()).unwrap();
    assert_eq!(gt.mask, art.mask);
    assert_eq!(gt.intr, art.gt_intr);
    let depth_err = gt
        .depth
        .data()
        .iter()
        .zip(art.gt_depth.data())
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max);
    assert!(depth_err < 1e-6, "{depth_err}");
    let spec_back: rslf_core::synth::SceneSpec = io::read_json(&dir.path().join(names::SCENE)).unwrap();
    assert_eq!(spec_back, spec);
}
