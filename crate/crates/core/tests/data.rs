use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rshaze::data::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_image, load_model, load_pairs, make_dataset,
    save_checkpoint, save_image, synthesize_haze, synthetic_clean, synthetic_pairs, write_pairs, DepthKind, HazeParams,
    HazePreset, Provenance, Source, Split, SyntheticSpec,
};
use rshaze::{Error, Net, NetConfig, Tensor};

fn random_image(seed: u64, h: usize, w: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn([1, 3, h, w], |_| rng.gen_range(0.0..=1.0))
}

#[test]
fn png_and_ppm_round_trip_within_half_a_level() {
    let dir = tempfile::tempdir().unwrap();
    let img = random_image(0, 9, 14);
    for name in ["a.png", "a.ppm"] {
        let path = dir.path().join(name);
        save_image(&img, &path).unwrap();
        let back: Tensor<f32> = load_image(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        let err = back.max_abs_diff(&img).unwrap();
        assert!(err <= 1.0 / 510.0 + 1e-7, "{name}: {err}");
        save_image(&back, &path).unwrap();
        assert_eq!(load_image::<f32>(&path).unwrap(), back);
    }
}

#[test]
fn black_image_loads_as_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("black.png");
    save_image(&Tensor::<f32>::zeros([1, 3, 4, 5]), &path).unwrap();
    assert!(load_image::<f64>(&path).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn hand_written_ppm_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fixture.ppm");
    let mut bytes = b"P6\n# two by two\n2 2\n255\n".to_vec();
    bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0, 0, 0, 255, 51, 102, 204]);
    fs::write(&path, bytes).unwrap();
    let img: Tensor<f64> = load_image(&path).unwrap();
    assert_eq!(img.shape().dims(), [1, 3, 2, 2]);
    assert_eq!(img.plane(0, 0), &[1.0, 0.0, 0.0, 0.2]);
    assert_eq!(img.plane(0, 1), &[0.0, 1.0, 0.0, 0.4]);
    assert_eq!(img.plane(0, 2), &[0.0, 0.0, 1.0, 0.8]);
}

#[test]
fn bad_images_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let gif = dir.path().join("x.gif");
    fs::write(&gif, b"GIF89a").unwrap();
    assert!(matches!(load_image::<f32>(&gif), Err(Error::UnsupportedFormat(_))));
    let png = dir.path().join("x.png");
    fs::write(&png, b"\x89PNG\r\n\x1a\n\0\0").unwrap();
    assert!(matches!(load_image::<f32>(&png), Err(Error::TruncatedImage(_))));
    assert!(load_image::<f32>(&dir.path().join("missing.png")).is_err());
}

fn haze(clean: &Tensor<f64>, beta: f64, airlight: f64, depth: DepthKind) -> rshaze::Result<Tensor<f64>> {
    let params = HazeParams { beta, airlight, depth };
    synthesize_haze(clean, &params, &mut ChaCha8Rng::seed_from_u64(0))
}

#[test]
fn scattering_model_limits_and_midpoint() {
    let clean = random_image(1, 8, 8).cast::<f64>();
    assert_eq!(haze(&clean, 0.0, 0.8, DepthKind::Radial).unwrap(), clean);
    let opaque = haze(&clean, 1e6, 0.8, DepthKind::Constant(1.0)).unwrap();
    assert!(opaque.data().iter().all(|&v| v == 0.8));
    let half = haze(&clean, 1.0, 0.9, DepthKind::Constant(std::f64::consts::LN_2)).unwrap();
    let expected = clean.map(|v| (v + 0.9) / 2.0);
    assert!(half.max_abs_diff(&expected).unwrap() < 1e-12);
}

#[test]
fn haze_stays_in_range_and_thickens_with_beta() {
    let clean = random_image(2, 12, 10).cast::<f64>();
    let mut prev = clean.clone();
    for beta in [0.5, 1.0, 2.0, 4.0] {
        let h = haze(&clean, beta, 1.0, DepthKind::Ramp).unwrap();
        assert!(h.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let dist = |t: &Tensor<f64>| t.data().iter().map(|v| (1.0 - v).abs()).sum::<f64>();
        assert!(dist(&h) <= dist(&prev));
        prev = h;
    }
}

#[test]
fn invalid_haze_parameters_are_rejected() {
    let clean = random_image(3, 4, 4).cast::<f64>();
    assert!(haze(&clean, -0.1, 0.8, DepthKind::Ramp).is_err());
    assert!(haze(&clean, f64::NAN, 0.8, DepthKind::Ramp).is_err());
    assert!(haze(&clean, 1.0, 0.5, DepthKind::Ramp).is_err());
    assert!(haze(&clean, 1.0, 0.8, DepthKind::Constant(1.5)).is_err());
    assert!(haze(&Tensor::zeros([1, 1, 4, 4]), 1.0, 0.8, DepthKind::Ramp).is_err());
}

#[test]
fn presets_sample_inside_their_ranges() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for preset in HazePreset::ALL {
        let (lo, hi) = preset.beta_range();
        for _ in 0..50 {
            let p = HazeParams::sample(preset, &mut rng);
            assert!((lo..=hi).contains(&p.beta));
            assert!((0.7..=1.0).contains(&p.airlight));
        }
        assert_eq!(preset.name().parse::<HazePreset>().unwrap(), preset);
    }
    let clean: Tensor<f32> = synthetic_clean(16, 16, &mut rng);
    assert!(clean.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

fn spec(count: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        count,
        height: 8,
        width: 8,
        preset: None,
        seed,
    }
}

#[test]
fn synthetic_pairs_are_deterministic_and_recorded() {
    let a = synthetic_pairs(&spec(5, 9)).unwrap();
    let b = synthetic_pairs(&spec(5, 9)).unwrap();
    let c = synthetic_pairs(&spec(5, 10)).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((&x.id, &x.hazy, &x.clean), (&y.id, &y.hazy, &y.clean));
    }
    assert_ne!(a[0].clean, c[0].clean);
    assert!(a.iter().all(|p| matches!(p.provenance, Provenance::Synthetic(_))));
    let longer = synthetic_pairs(&spec(7, 9)).unwrap();
    assert_eq!(longer[3].hazy, a[3].hazy);
}

#[test]
fn default_split_of_400_is_320_35_45() {
    let ds = make_dataset(&Source::Synthetic(spec(400, 0)), Split::default()).unwrap();
    assert_eq!((ds.train().len(), ds.val().len(), ds.test().len()), (320, 35, 45));
    assert_eq!(ds.len(), 400);
}

#[test]
fn directory_round_trip_and_unmatched_files() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = synthetic_pairs(&spec(3, 1)).unwrap();
    write_pairs(dir.path(), &pairs).unwrap();
    let loaded = load_pairs(dir.path()).unwrap();
    assert_eq!(loaded.len(), 3);
    for (l, p) in loaded.iter().zip(&pairs) {
        assert_eq!(l.id, p.id);
        assert!(l.clean.max_abs_diff(&p.clean).unwrap() <= 1.0 / 510.0 + 1e-7);
    }
    fs::copy(
        dir.path().join("hazy").join(format!("{}.png", pairs[0].id)),
        dir.path().join("hazy").join("orphan.png"),
    )
    .unwrap();
    let err = load_pairs(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Dataset(_)));
    assert!(err.to_string().contains("orphan.png"), "{err}");
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (mut store, _) = Net::build::<f32>(&NetConfig::tiny(), 5).unwrap();
    store.perturb(&mut ChaCha8Rng::seed_from_u64(5), 0.1);
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    save_checkpoint(&a, &NetConfig::tiny(), &store).unwrap();
    let (cfg, loaded) = load_checkpoint(&a).unwrap();
    assert_eq!(cfg, NetConfig::tiny());
    assert!(loaded.bit_eq(&store));
    save_checkpoint(&b, &cfg, &loaded).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let (net, model) = load_model(&a).unwrap();
    let x = random_image(6, 16, 16);
    let (ref_store, ref_net) = (store, Net::build::<f32>(&NetConfig::tiny(), 5).unwrap().1);
    assert_eq!(net.infer(&model, &x).unwrap(), ref_net.infer(&ref_store, &x).unwrap());
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let (store, _) = Net::build::<f32>(&NetConfig::tiny(), 0).unwrap();
    let bytes = encode_checkpoint(&NetConfig::tiny(), &store);
    assert!(decode_checkpoint(&bytes).is_ok());

    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x01;
    assert!(matches!(
        decode_checkpoint(&flipped),
        Err(Error::ChecksumMismatch { .. })
    ));

    let mut magic = bytes.clone();
    magic[..4].copy_from_slice(b"XXXX");
    assert!(matches!(decode_checkpoint(&magic), Err(Error::BadMagic(m)) if &m == b"XXXX"));

    let mut version = bytes.clone();
    version[4..8].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(
        decode_checkpoint(&version),
        Err(Error::VersionMismatch { found: 7, .. })
    ));

    assert!(decode_checkpoint(&bytes[..bytes.len() - 9]).is_err());
    assert!(decode_checkpoint(&bytes[..3]).is_err());
}

#[test]
fn checkpoint_layout_must_match_its_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let (store, _) = Net::build::<f32>(&NetConfig::tiny(), 0).unwrap();
    let mut other = NetConfig::tiny();
    other.src = false;
    save_checkpoint(&path, &other, &store).unwrap();
    assert!(load_model(&path).is_err());
}
