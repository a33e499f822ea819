use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srm_core::data::{
    load_idx, load_mnist, make_class_incremental, make_rotations, read_idx_images, read_idx_labels,
    rotate_bilinear, synth_blobs, write_idx_images, write_idx_labels, AngleMode, BlobConfig,
    Dataset, RotationConfig,
};
use srm_core::layers::{mlp_specs, Network};
use srm_core::params::ParameterSet;
use srm_core::{autodiff::Graph, Error, Real, Tensor};

fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut v = Vec::new();
    for x in [0x0803u32, n, rows, cols] {
        v.extend_from_slice(&x.to_be_bytes());
    }
    v.extend_from_slice(pixels);
    v
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut v = Vec::new();
    v.extend_from_slice(&0x0801u32.to_be_bytes());
    v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    v.extend_from_slice(labels);
    v
}

#[test]
fn idx_roundtrip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("i"), dir.path().join("l"));
    let pixels: Vec<u8> = (0..2 * 3 * 4).map(|i| (i * 10) as u8).collect();
    std::fs::write(&img, idx_images(2, 3, 4, &pixels)).unwrap();
    std::fs::write(&lab, idx_labels(&[7, 2])).unwrap();
    let d = load_idx(&img, &lab).unwrap();
    assert_eq!(d.len(), 2);
    assert_eq!(d.shape(), [1, 3, 4]);
    assert_eq!(d.image(1)[0], 120.0 / 255.0);
    assert_eq!(d.labels(), &[7, 2]);

    std::fs::write(&img, idx_images(2, 3, 4, &pixels[..20])).unwrap();
    assert!(matches!(load_idx(&img, &lab), Err(Error::Format(_))));

    std::fs::write(&img, idx_images(2, 3, 4, &pixels)).unwrap();
    std::fs::write(&lab, idx_labels(&[1, 2, 3])).unwrap();
    assert!(matches!(load_idx(&img, &lab), Err(Error::Format(_))));

    let mut bad = idx_labels(&[1, 2]);
    bad[3] = 0x03;
    std::fs::write(&lab, bad).unwrap();
    assert!(matches!(load_idx(&img, &lab), Err(Error::Format(_))));
}

#[test]
fn bundled_mnist_loads_when_present() {
    let dir = srm_core::data::data_dir(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist"));
    let Ok((train, test)) = load_mnist(&dir) else {
        eprintln!("MNIST not found under {}; skipping", dir.display());
        return;
    };
    assert_eq!(train.shape(), [1, 28, 28]);
    assert!(train.len() >= 1000 && test.len() >= 100);
    assert!(train.pixels().iter().all(|&p| (0.0..=1.0).contains(&p)));
    assert_eq!(train.classes(), 10);
}

fn random_dataset(n: usize, side: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = (0..n * side * side).map(|_| rng.random::<Real>()).collect();
    let labels = (0..n).map(|i| (i % 10) as u16).collect();
    Dataset::new([1, side, side], pixels, labels, 10).unwrap()
}

#[test]
fn rotation_by_zero_and_half_turn() {
    let d = random_dataset(1, 9, 1);
    let img = d.image(0);
    assert_eq!(rotate_bilinear(img, [1, 9, 9], 0.0), img.to_vec());
    let r = rotate_bilinear(img, [1, 9, 9], 180.0);
    for i in 0..9 {
        for j in 0..9 {
            assert_eq!(r[i * 9 + j], img[(8 - i) * 9 + (8 - j)]);
        }
    }
    let even = random_dataset(1, 8, 2);
    let r = rotate_bilinear(even.image(0), [1, 8, 8], 180.0);
    assert_eq!(r[0], even.image(0)[63]);
}

proptest! {
    #[test]
    fn rotation_preserves_range(seed in any::<u64>(), angle in 0.0f64..360.0) {
        let d = random_dataset(1, 10, seed);
        let r = rotate_bilinear(d.image(0), [1, 10, 10], angle);
        prop_assert!(r.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn rotations_stream_is_seeded_and_disjoint() {
    let train = random_dataset(100, 6, 3);
    let test = random_dataset(20, 6, 4);
    let cfg = RotationConfig {
        tasks: 4,
        per_task: 25,
        test_per_task: 10,
        seed: 9,
        angles: AngleMode::Random,
    };
    let a = make_rotations(&train, &test, &cfg).unwrap();
    let b = make_rotations(&train, &test, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 4);
    assert_eq!(a.total_examples(), 100);
    assert!(a
        .tasks
        .iter()
        .all(|t| (0.0..=180.0).contains(&t.angle.unwrap())));
    let c = make_rotations(
        &train,
        &test,
        &RotationConfig {
            seed: 10,
            ..cfg.clone()
        },
    )
    .unwrap();
    assert_ne!(a.tasks[0].angle, c.tasks[0].angle);

    // With zero rotation, the four tasks partition the base set.
    let flat = make_rotations(
        &train,
        &test,
        &RotationConfig {
            angles: AngleMode::Even,
            tasks: 1,
            per_task: 100,
            ..cfg.clone()
        },
    )
    .unwrap();
    let mut seen: Vec<Vec<u64>> = flat.tasks[0]
        .train
        .images()
        .iter()
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    let mut base: Vec<Vec<u64>> = train
        .images()
        .iter()
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    seen.sort();
    base.sort();
    assert_eq!(seen, base);

    let too_many = RotationConfig {
        per_task: 26,
        ..cfg
    };
    assert!(make_rotations(&train, &test, &too_many).is_err());
}

#[test]
fn even_angles_are_evenly_spaced() {
    let train = random_dataset(10, 6, 5);
    let cfg = RotationConfig {
        tasks: 5,
        per_task: 2,
        test_per_task: 2,
        seed: 0,
        angles: AngleMode::Even,
    };
    let s = make_rotations(&train, &train, &cfg).unwrap();
    let angles: Vec<f64> = s.tasks.iter().map(|t| t.angle.unwrap()).collect();
    assert_eq!(angles, vec![0.0, 36.0, 72.0, 108.0, 144.0]);
}

#[test]
fn class_incremental_split() {
    let d = random_dataset(50, 4, 6);
    let one = make_class_incremental(&d, &d, 1).unwrap();
    assert_eq!(one.tasks[0].train, d);
    let five = make_class_incremental(&d, &d, 5).unwrap();
    for (t, task) in five.tasks.iter().enumerate() {
        assert_eq!(task.classes, vec![2 * t as u16, 2 * t as u16 + 1]);
        assert!(task.train.labels().iter().all(|y| task.classes.contains(y)));
        assert_eq!(task.train.len(), 10);
    }
    let three = make_class_incremental(&d, &d, 3).unwrap();
    assert_eq!(three.tasks[0].classes.len(), 4);
    let order: Vec<u16> = five.iter().map(|it| it.task).collect();
    assert!(order.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn blobs_are_deterministic_and_separable() {
    let cfg = BlobConfig::new(4, 8, 50, 11);
    let d = synth_blobs(&cfg).unwrap();
    assert_eq!(d, synth_blobs(&cfg).unwrap());
    assert_eq!(d.len(), 200);
    assert_eq!(d.shape(), [1, 8, 8]);
    assert!(d.pixels().iter().all(|&p| (0.0..=1.0).contains(&p)));

    // A linear classifier fit by plain SGD separates the classes.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut params = ParameterSet::new();
    let net = Network::build(&[64], &mlp_specs(64, &[], 4), &mut params, "lin", &mut rng).unwrap();
    let x = Tensor::new([200, 64], d.pixels().to_vec()).unwrap();
    let mut y = Tensor::zeros([200, 4]);
    for i in 0..200 {
        y.data_mut()[i * 4 + d.label(i) as usize] = 1.0;
    }
    for _ in 0..300 {
        let mut g = Graph::new();
        let xv = g.input(x.clone()).unwrap();
        let out = net.forward(&mut g, &params, xv).unwrap();
        let loss = g.softmax_cross_entropy(out, &y).unwrap();
        g.backward(loss, &mut params).unwrap();
        params.sgd_step(1.0).unwrap();
    }
    let scores = net.infer(&params, x).unwrap();
    let correct = (0..200)
        .filter(|&i| {
            let row = &scores.data()[i * 4..i * 4 + 4];
            let best = (0..4).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            best == d.label(i) as usize
        })
        .count();
    assert_eq!(correct, 200);
}

#[test]
fn idx_writer_roundtrips_quantized_images() {
    let data = synth_blobs(&BlobConfig::new(3, 6, 4, 1)).unwrap();
    let bytes = write_idx_images(&data).unwrap();
    let (n, rows, cols, pixels) = read_idx_images(&bytes).unwrap();
    assert_eq!((n, rows, cols), (12, 6, 6));
    for (a, b) in pixels.iter().zip(data.pixels()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
    }
    let labels = read_idx_labels(&write_idx_labels(data.labels()).unwrap()).unwrap();
    assert_eq!(labels, data.labels());
    assert!(write_idx_labels(&[300]).is_err());
}
