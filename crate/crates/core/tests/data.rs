use invariant_inr::data::{
    apply_random_pose, decode_dataset, default_recipes, embed_centered, encode_dataset, encode_grid, encode_pnm,
    generate_synthetic, load_dataset, load_idx, parse_idx_images, parse_idx_labels, save_dataset, DataError,
    LabeledDataset, PoseSampler, Primitive, ShapeRecipe, Split,
};
use invariant_inr::geometry::{center_of_mass, inverse_transform_point, DiscreteImage};
use std::f64::consts::TAU;

fn small_set() -> LabeledDataset {
    let mut ds = generate_synthetic(2, &default_recipes(), 12, 5).unwrap();
    ds.assign_test_split(1);
    ds
}

#[test]
fn generation_is_deterministic() {
    let a = generate_synthetic(3, &default_recipes(), 16, 42).unwrap();
    let b = generate_synthetic(3, &default_recipes(), 16, 42).unwrap();
    assert_eq!(a, b);
    let c = generate_synthetic(3, &default_recipes(), 16, 43).unwrap();
    assert_ne!(a.images, c.images);
}

#[test]
fn counts_are_balanced() {
    let ds = generate_synthetic(200, &default_recipes(), 8, 1).unwrap();
    assert_eq!(ds.len(), 1200);
    let mut hist = [0usize; 6];
    for &l in &ds.labels {
        hist[l as usize] += 1;
    }
    assert_eq!(hist, [200; 6]);
    assert!(ds.images.iter().all(|i| i.pixels().iter().all(|v| (0.0..=1.0).contains(v))));
}

#[test]
fn noiseless_disc_has_quarter_turn_symmetry() {
    let recipe = ShapeRecipe {
        class_id: 0,
        primitive: Primitive::Disc,
        size: [0.4, 0.4],
        thickness: [0.0, 0.0],
        intensity: [0.9, 0.9],
        noise_std: 0.0,
    };
    let ds = generate_synthetic(1, &[recipe], 32, 3).unwrap();
    let img = &ds.images[0];
    let s = 32;
    for r in 0..s {
        for c in 0..s {
            // quarter-turn index permutation
            assert_eq!(img.get(0, r * s + c), img.get(0, (s - 1 - c) * s + r));
        }
    }
}

#[test]
fn recipes_that_leave_the_fit_radius_are_rejected() {
    let mut recipe = default_recipes()[3].clone();
    recipe.size = [0.6, 0.9];
    let err = generate_synthetic(1, &[recipe], 16, 0).unwrap_err();
    assert!(matches!(err, DataError::Recipe { class: 3, .. }));
    assert!(default_recipes().iter().all(|r| r.validate().is_ok()));
}

#[test]
fn synthetic_shapes_are_centred() {
    let mut recipes = default_recipes();
    for r in &mut recipes {
        r.noise_std = 0.0;
    }
    let ds = generate_synthetic(5, &recipes, 32, 9).unwrap();
    for img in &ds.images {
        let m = center_of_mass(img);
        assert!(m[0].hypot(m[1]) < 0.03, "{m:?}");
    }
}

#[test]
fn identity_posing_leaves_dataset_unchanged() {
    let ds = small_set();
    let sampler = PoseSampler {
        rotate: false,
        translation_std: 0.0,
        clamp: 0.35,
    };
    let posed = apply_random_pose(&ds, &sampler, 7);
    assert_eq!(posed.images, ds.images);
    assert!(posed.poses.unwrap().iter().all(|p| p.theta() == 0.0 && p.tau == [0.0, 0.0]));
}

#[test]
fn posing_rotations_are_uniform() {
    let ds = generate_synthetic(2000, &default_recipes()[..1], 4, 0).unwrap();
    let posed = apply_random_pose(&ds, &PoseSampler::default(), 11);
    let mut thetas: Vec<f64> = posed.poses.unwrap().iter().map(|p| p.theta()).collect();
    thetas.sort_by(f64::total_cmp);
    let n = thetas.len() as f64;
    let ks = thetas
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let cdf = t / TAU;
            (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.05, "KS statistic {ks}");
}

#[test]
fn posing_moves_the_centre_of_mass_with_the_content() {
    let mut recipes = default_recipes();
    for r in &mut recipes {
        r.noise_std = 0.0;
    }
    let ds = generate_synthetic(10, &recipes, 32, 2).unwrap();
    let posed = apply_random_pose(&ds, &PoseSampler::default(), 3);
    let spacing = 2.0 / 32.0;
    for ((orig, img), pose) in ds.images.iter().zip(&posed.images).zip(posed.poses.as_ref().unwrap()) {
        let expect = inverse_transform_point(pose, center_of_mass(orig));
        let got = center_of_mass(img);
        assert!((expect[0] - got[0]).hypot(expect[1] - got[1]) < 2.0 * spacing);
    }
}

#[test]
fn posing_preserves_pixel_values() {
    let ds = small_set();
    let posed = apply_random_pose(&ds, &PoseSampler::default(), 8);
    for (a, b) in ds.images.iter().zip(&posed.images) {
        for v in b.pixels() {
            assert!(*v == 0.0 || a.pixels().contains(v));
        }
    }
}

#[test]
fn composed_poses_match_two_step_posing() {
    let ds = small_set();
    let once = apply_random_pose(&ds, &PoseSampler::default(), 1);
    let twice = apply_random_pose(&once, &PoseSampler::default(), 2);
    let direct = apply_random_pose(&ds, &PoseSampler::default(), 2);
    let p2 = direct.poses.unwrap();
    let (p1, p12) = (once.poses.unwrap(), twice.poses.unwrap());
    for i in 0..ds.len() {
        let q = [0.3, -0.2];
        let a = invariant_inr::geometry::transform_point(&p12[i], q);
        let b = invariant_inr::geometry::transform_point(&p1[i], invariant_inr::geometry::transform_point(&p2[i], q));
        assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
    }
}

#[test]
fn splits_cover_every_class_and_are_disjoint() {
    let mut ds = generate_synthetic(5, &default_recipes(), 8, 0).unwrap();
    assert!(ds.validate_splits().is_err());
    ds.assign_test_split(2);
    ds.validate_splits().unwrap();
    let (train, test) = (ds.indices(Split::Train), ds.indices(Split::Test));
    assert_eq!(train.len() + test.len(), ds.len());
    assert!(train.iter().all(|i| !test.contains(i)));
    assert_eq!(ds.subset(Split::Test).len(), 12);
}

fn idx_images(images: &[[u8; 9]]) -> Vec<u8> {
    let mut b = vec![0, 0, 8, 3];
    b.extend((images.len() as u32).to_be_bytes());
    b.extend(3u32.to_be_bytes());
    b.extend(3u32.to_be_bytes());
    for img in images {
        b.extend(img);
    }
    b
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = vec![0, 0, 8, 1];
    b.extend((labels.len() as u32).to_be_bytes());
    b.extend(labels);
    b
}

#[test]
fn idx_fixture_parses() {
    let imgs = [[0, 255, 0, 0, 0, 0, 0, 0, 51], [255; 9], [0; 9], [1, 2, 3, 4, 5, 6, 7, 8, 9]];
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
    std::fs::write(&ip, idx_images(&imgs)).unwrap();
    std::fs::write(&lp, idx_labels(&[3, 1, 4, 1])).unwrap();
    let ds = load_idx(&ip, &lp).unwrap();
    assert_eq!(ds.len(), 4);
    assert_eq!(ds.labels, vec![3, 1, 4, 1]);
    assert_eq!(ds.n_classes, 5);
    assert_eq!(ds.images[0].get(0, 1), 1.0);
    assert!((ds.images[0].get(0, 8) - 0.2).abs() < 1e-15);
    assert_eq!(ds.images[1].pixels(), &[1.0; 9]);
}

#[test]
fn idx_errors() {
    let good = idx_images(&[[7; 9], [9; 9]]);
    let truncated = &good[..good.len() - 3];
    assert!(matches!(parse_idx_images(truncated), Err(DataError::Format { .. })));
    let mut bad_magic = good.clone();
    bad_magic[3] = 1;
    let err = parse_idx_images(&bad_magic).unwrap_err();
    assert!(matches!(err, DataError::Format { offset: 0, .. }));
    assert!(parse_idx_labels(&idx_labels(&[1, 2])[..9]).is_err());
    assert!(parse_idx_images(&good[..10]).is_err());

    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
    std::fs::write(&ip, &good).unwrap();
    std::fs::write(&lp, idx_labels(&[0, 1, 2])).unwrap();
    assert!(matches!(load_idx(&ip, &lp), Err(DataError::Consistency(_))));
}

#[test]
fn embedding_centres_the_original() {
    let img = DiscreteImage::new(1, 28, (0..784).map(|i| (i % 7) as f64 / 7.0 + 0.01).collect()).unwrap();
    let ds = LabeledDataset {
        images: vec![img.clone()],
        labels: vec![0],
        n_classes: 1,
        poses: None,
        splits: vec![Split::Train],
    };
    let big = embed_centered(&ds, 50).unwrap();
    let out = &big.images[0];
    assert_eq!(out.side(), 50);
    for r in 0..50 {
        for c in 0..50 {
            let v = out.get(0, r * 50 + c);
            if (11..39).contains(&r) && (11..39).contains(&c) {
                assert_eq!(v, img.get(0, (r - 11) * 28 + c - 11));
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }
}

fn quantized(ds: &LabeledDataset) -> LabeledDataset {
    let mut q = ds.clone();
    for img in &mut q.images {
        for v in img.pixels_mut() {
            *v = *v as f32 as f64;
        }
    }
    q
}

#[test]
fn container_round_trip() {
    let ds = apply_random_pose(&generate_synthetic(2, &default_recipes()[..5], 10, 4).unwrap(), &PoseSampler::default(), 1);
    assert_eq!(ds.len(), 10);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.bin");
    save_dataset(&path, &ds).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), quantized(&ds));

    let mut no_poses = ds.clone();
    no_poses.poses = None;
    let back = decode_dataset(&encode_dataset(&no_poses)).unwrap();
    assert!(back.poses.is_none());
    assert_eq!(back, quantized(&no_poses));
}

#[test]
fn corrupt_containers_name_the_field() {
    let bytes = encode_dataset(&small_set());
    let field = |b: &[u8]| match decode_dataset(b) {
        Err(DataError::Field { field, .. }) => field,
        other => panic!("unexpected {other:?}"),
    };
    let mut m = bytes.clone();
    m[0] = b'X';
    assert_eq!(field(&m), "magic");
    let mut c = bytes.clone();
    c[12] = 2;
    assert_eq!(field(&c), "channels");
    let mut f = bytes.clone();
    f[28] |= 0x80;
    assert_eq!(field(&f), "flags");
    assert_eq!(field(&bytes[..bytes.len() - 1]), "splits");
    let mut v = bytes.clone();
    v[8] = 9;
    assert!(matches!(
        decode_dataset(&v),
        Err(DataError::UnsupportedVersion { found: 9, supported: 1 })
    ));
}

#[test]
fn pnm_encoding() {
    let img = DiscreteImage::new(1, 2, vec![0.0, 0.5, 1.0, 2.0]).unwrap();
    let bytes = encode_pnm(&img);
    assert_eq!(&bytes[..11], b"P5\n2 2\n255\n");
    assert_eq!(&bytes[11..], &[0, 128, 255, 255]);
    let rgb = DiscreteImage::new(3, 1, vec![1.0, 0.0, 0.5]).unwrap();
    let bytes = encode_pnm(&rgb);
    assert_eq!(&bytes[..11], b"P6\n1 1\n255\n");
    assert_eq!(&bytes[11..], &[255, 0, 128]);
    let grid = encode_grid(&[vec![&img, &img], vec![&img]], 1);
    assert_eq!(&grid[..11], b"P5\n5 5\n255\n");
    assert_eq!(grid.len(), 11 + 25);
}
