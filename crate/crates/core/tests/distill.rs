use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srm_core::classifier::{small_convnet, Classifier};
use srm_core::data::{synth_blobs, BlobConfig, Dataset};
use srm_core::distill::{
    distill, fill_buffer, teacher_train, DistillConfig, DistillSource, RecollectionStrategy,
};
use srm_core::params::OptimizerKind;
use srm_core::vae::{train_epochs, Autoencoder, DiscreteVae, VaeConfig};

const SHAPE: [usize; 3] = [1, 8, 8];

fn blobs(per_class: usize, seed: u64) -> Dataset {
    synth_blobs(&BlobConfig::new(4, 8, per_class, seed)).unwrap()
}

fn mlp(seed: u64) -> Classifier {
    Classifier::mlp(SHAPE, 4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn trained_teacher(train: &Dataset) -> Classifier {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut t = Classifier::new(SHAPE, small_convnet(SHAPE, 4, 4), 4, &mut rng).unwrap();
    teacher_train(&mut t, train, 10, 10, 0.1, &mut rng).unwrap();
    t
}

fn cfg(checkpoints: Vec<u64>, seed: u64) -> DistillConfig {
    DistillConfig {
        checkpoints,
        lr: 0.05,
        seed,
        ..DistillConfig::default()
    }
}

#[test]
fn teacher_learns_separable_blobs() {
    let (train, test) = (blobs(100, 1), blobs(50, 2));
    let t = trained_teacher(&train);
    assert!(t.accuracy(&test, 0).unwrap() > 0.99);
}

#[test]
fn teacher_training_is_deterministic() {
    let train = blobs(30, 1);
    let a = trained_teacher(&train);
    let b = trained_teacher(&train);
    assert_eq!(a.params().flatten_values(), b.params().flatten_values());
}

#[test]
fn zero_epochs_leave_an_untrained_teacher() {
    let (train, test) = (blobs(30, 1), blobs(250, 2));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut t = mlp(3);
    let before = t.params().flatten_values();
    let loss = teacher_train(&mut t, &train, 0, 10, 0.1, &mut rng).unwrap();
    assert!(loss.is_nan());
    assert_eq!(t.params().flatten_values(), before);
    let acc = t.accuracy(&test, 0).unwrap();
    assert!(acc < 0.5, "untrained accuracy {acc}");
}

#[test]
fn real_data_source_is_plain_sgd() {
    let (train, test) = (blobs(30, 1), blobs(20, 2));
    let teacher = mlp(9);
    let mut student = mlp(4);
    let c = cfg(vec![5, 50], 7);
    let curve = distill(
        &teacher,
        &mut student,
        DistillSource::RealData,
        &train,
        &test,
        &c,
    )
    .unwrap();

    let mut reference = mlp(4);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut acc = Vec::new();
    for episode in 1..=50u64 {
        let i = rng.random_range(0..train.len());
        reference
            .train_step(&train.batch(&[i]), &[0], &[train.label(i)], c.lr)
            .unwrap();
        if episode == 5 || episode == 50 {
            acc.push((episode, reference.accuracy(&test, 0).unwrap()));
        }
    }
    assert_eq!(curve.points, acc);
    assert_eq!(
        student.params().flatten_values(),
        reference.params().flatten_values()
    );
}

#[test]
fn teacher_labelled_source_follows_the_teacher() {
    let (train, test) = (blobs(60, 1), blobs(50, 2));
    let teacher = trained_teacher(&train);
    let mut student = mlp(5);
    let curve = distill(
        &teacher,
        &mut student,
        DistillSource::RealXTeacherY,
        &train,
        &test,
        &cfg(vec![10, 100, 1000], 1),
    )
    .unwrap();
    assert_eq!(curve.points.len(), 3);
    assert!(curve.final_accuracy() >= curve.points[0].1);
    assert!(curve.final_accuracy() > 0.95, "{curve:?}");
}

#[test]
fn subset_source_is_valid_and_bounded() {
    let (train, test) = (blobs(30, 1), blobs(20, 2));
    let teacher = trained_teacher(&train);
    for fraction in [0.0, 1.5, f64::NAN] {
        let mut s = mlp(0);
        let r = distill(
            &teacher,
            &mut s,
            DistillSource::Subset { fraction },
            &train,
            &test,
            &cfg(vec![5], 0),
        );
        assert!(r.is_err());
    }
    let mut s = mlp(0);
    let curve = distill(
        &teacher,
        &mut s,
        DistillSource::Subset { fraction: 0.1 },
        &train,
        &test,
        &cfg(vec![200], 0),
    )
    .unwrap();
    assert_eq!(curve.source, "subset0.1");
}

#[test]
fn empty_sources_rejected() {
    let test = blobs(5, 2);
    let empty = Dataset::empty(SHAPE, 4);
    let teacher = mlp(0);
    let mut s = mlp(1);
    assert!(distill(
        &teacher,
        &mut s,
        DistillSource::RealData,
        &empty,
        &test,
        &cfg(vec![1], 0)
    )
    .is_err());
    assert!(distill(
        &teacher,
        &mut s,
        DistillSource::RealData,
        &test,
        &empty,
        &cfg(vec![1], 0)
    )
    .is_err());
    let vae = DiscreteVae::new(
        VaeConfig::new(4, 2, SHAPE).with_filters(2),
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    let buffer = fill_buffer(&vae, &empty, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let src = DistillSource::Recollections {
        vae: &vae,
        buffer: &buffer,
        strategy: RecollectionStrategy::Buffer,
    };
    assert!(distill(&teacher, &mut s, src, &test, &test, &cfg(vec![1], 0)).is_err());
}

#[test]
fn every_recollection_strategy_teaches() {
    let (train, test) = (blobs(100, 1), blobs(50, 2));
    let teacher = trained_teacher(&train);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let config = VaeConfig::new(8, 4, SHAPE)
        .with_filters(8)
        .with_optimizer(OptimizerKind::Adam);
    let mut vae = DiscreteVae::new(config, &mut rng).unwrap();
    let images = train.images();
    train_epochs(&mut vae, &images, 30, 20, 3e-3, &mut rng).unwrap();
    assert!(vae.distortion(&images, 50, &mut rng).unwrap() < 0.1);
    let buffer = fill_buffer(&vae, &train, &mut rng).unwrap();
    assert_eq!(buffer.len(), train.len());
    let mut finals = Vec::new();
    for strategy in [
        RecollectionStrategy::Buffer,
        RecollectionStrategy::Code,
        RecollectionStrategy::Active { k: 5 },
        RecollectionStrategy::ActiveDiverse { n: 5 },
    ] {
        let mut mean = 0.0;
        for seed in 0..3 {
            let mut s = mlp(10 + seed);
            let src = DistillSource::Recollections {
                vae: &vae,
                buffer: &buffer,
                strategy,
            };
            let curve = distill(
                &teacher,
                &mut s,
                src,
                &train,
                &test,
                &cfg(vec![100, 1000], seed),
            )
            .unwrap();
            mean += curve.final_accuracy() / 3.0;
        }
        finals.push(mean);
    }
    assert!(finals.iter().all(|&a| a > 0.6), "{finals:?}");
}
