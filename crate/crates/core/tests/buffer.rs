use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srm_core::buffer::{BufferItem, IndexBuffer};
use srm_core::vae::{pack, CodeGeometry, LatentCode};
use srm_core::Error;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn item(geo: CodeGeometry, id: u32, task: u16, rng: &mut impl Rng) -> BufferItem {
    let idx = (0..geo.latents)
        .map(|_| rng.random_range(0..geo.categories as u32))
        .collect();
    BufferItem {
        code: pack(&LatentCode::new(idx, geo).unwrap(), geo).unwrap(),
        label: (id % 65536) as u16,
        task,
    }
}

#[test]
fn everything_retained_below_capacity() {
    let geo = CodeGeometry::new(5, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut b = IndexBuffer::reservoir(geo, 50).unwrap();
    let items: Vec<_> = (0..50).map(|i| item(geo, i, 0, &mut rng)).collect();
    for it in &items {
        b.insert(it.clone(), &mut rng).unwrap();
    }
    let stored: Vec<_> = b.iter().cloned().collect();
    assert_eq!(stored, items);
}

#[test]
fn single_slot_reservoir_is_uniform_over_stream() {
    let geo = CodeGeometry::new(1, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (n, trials) = (10_000u32, 10_000usize);
    let template = item(geo, 0, 0, &mut rng);
    let mut counts = vec![0usize; n as usize];
    for _ in 0..trials {
        let mut b = IndexBuffer::reservoir(geo, 1).unwrap();
        for i in 0..n {
            let mut it = template.clone();
            it.label = (i % 100) as u16;
            it.task = (i / 100) as u16;
            b.insert(it, &mut rng).unwrap();
        }
        let kept = b.get(0).unwrap();
        counts[kept.task as usize * 100 + kept.label as usize] += 1;
    }
    let p = 1.0 / n as f64;
    let mean = trials as f64 * p;
    let band = (3.0 * (mean * (1.0 - p)).sqrt()).ceil();
    for &i in &[0usize, 1, 4_999, 9_999] {
        assert!(
            (counts[i] as f64 - mean).abs() <= band,
            "item {i}: {}",
            counts[i]
        );
    }
    // Bucketed into 100 bins of 100 stream positions, counts are multinomial.
    let bins: Vec<usize> = counts.chunks(100).map(|c| c.iter().sum()).collect();
    let e = trials as f64 / 100.0;
    let stat: f64 = bins.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
    let pval = 1.0 - ChiSquared::new(99.0).unwrap().cdf(stat);
    assert!(pval > 0.01, "chi2 {stat} p {pval}");
}

#[test]
fn reservoir_inclusion_probability() {
    let geo = CodeGeometry::new(1, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (l, n, trials) = (5usize, 50u32, 20_000usize);
    let template = item(geo, 0, 0, &mut rng);
    let mut kept = vec![0usize; n as usize];
    for _ in 0..trials {
        let mut b = IndexBuffer::reservoir(geo, l).unwrap();
        for i in 0..n {
            let mut it = template.clone();
            it.label = i as u16;
            b.insert(it, &mut rng).unwrap();
        }
        for it in b.iter() {
            kept[it.label as usize] += 1;
        }
    }
    let p = l as f64 / n as f64;
    let sigma = (p * (1.0 - p) / trials as f64).sqrt();
    for (i, &k) in kept.iter().enumerate() {
        let f = k as f64 / trials as f64;
        // 50 simultaneous comparisons: widen to 4σ.
        assert!((f - p).abs() < 4.0 * sigma, "item {i}: {f} vs {p}");
    }
}

#[test]
fn per_task_one_newest_each() {
    let geo = CodeGeometry::new(3, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut b = IndexBuffer::per_task(geo, 20, 20).unwrap();
    let mut newest = vec![None; 20];
    for t in 0..20u16 {
        for i in 0..7 {
            let it = item(geo, t as u32 * 100 + i, t, &mut rng);
            newest[t as usize] = Some(it.clone());
            b.insert(it, &mut rng).unwrap();
        }
    }
    assert_eq!(b.len(), 20);
    for t in 0..20u16 {
        let items = b.task_items(t);
        assert_eq!(items.len(), 1);
        assert_eq!(Some(items[0].clone()), newest[t as usize]);
    }
}

#[test]
fn sampling_single_item_and_zero_batch() {
    let geo = CodeGeometry::new(3, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut b = IndexBuffer::reservoir(geo, 4).unwrap();
    let empty = b.sample(3, &mut rng);
    assert!(empty.items.is_empty() && empty.buffer_empty);
    let it = item(geo, 7, 0, &mut rng);
    b.insert(it.clone(), &mut rng).unwrap();
    let s = b.sample(6, &mut rng);
    assert!(!s.buffer_empty);
    assert_eq!(s.items, vec![it; 6]);
    let z = b.sample(0, &mut rng);
    assert!(z.items.is_empty() && !z.buffer_empty);
}

#[test]
fn sampling_is_uniform() {
    let geo = CodeGeometry::new(3, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut b = IndexBuffer::reservoir(geo, 10).unwrap();
    for i in 0..10 {
        b.insert(item(geo, i, 0, &mut rng), &mut rng).unwrap();
    }
    let draws = 100_000;
    let s = b.sample(draws, &mut rng);
    let mut counts = [0usize; 10];
    for it in &s.items {
        counts[it.label as usize] += 1;
    }
    let e = draws as f64 / 10.0;
    let stat: f64 = counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
    let pval = 1.0 - ChiSquared::new(9.0).unwrap().cdf(stat);
    assert!(pval > 0.01, "chi2 {stat} p {pval}");
}

fn filled(geo: CodeGeometry, n: usize, rng: &mut impl Rng) -> IndexBuffer {
    let mut b = IndexBuffer::reservoir(geo, n).unwrap();
    for i in 0..n {
        b.insert(item(geo, i as u32, 0, rng), rng).unwrap();
    }
    b
}

#[test]
fn storage_report_table_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let r = filled(CodeGeometry::new(139, 8).unwrap(), 3000, &mut rng)
        .storage_report(6272)
        .unwrap();
    assert_eq!(r.bits_used, 1_251_000);
    assert_eq!(r.items, 3000);
    assert!((r.effective_examples - 199.457).abs() < 1e-3);
    assert_eq!(r.effective_examples.round(), 199.0);

    let r = filled(CodeGeometry::new(104, 4).unwrap(), 3000, &mut rng)
        .storage_report(6272)
        .unwrap();
    assert_eq!(r.bits_used, 624_000);
    assert!((r.effective_examples - 99.49).abs() < 1e-2);

    let empty = IndexBuffer::reservoir(CodeGeometry::new(2, 2).unwrap(), 5).unwrap();
    assert_eq!(empty.storage_report(6272).unwrap().bits_used, 0);
    assert!(empty.storage_report(0).is_err());
}

#[test]
fn save_load_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let geo = CodeGeometry::new(13, 6).unwrap();
    let mut b = IndexBuffer::reservoir(geo, 40).unwrap();
    for i in 0..300 {
        b.insert(item(geo, i, (i % 3) as u16, &mut rng), &mut rng)
            .unwrap();
    }
    let path = dir.path().join("r.srmb");
    b.save(&path).unwrap();
    assert_eq!(IndexBuffer::load(&path).unwrap(), b);

    let mut p = IndexBuffer::per_task(geo, 10, 3).unwrap();
    for i in 0..40 {
        p.insert(item(geo, i, (i % 3) as u16, &mut rng), &mut rng)
            .unwrap();
    }
    p.save(&path).unwrap();
    assert_eq!(IndexBuffer::load(&path).unwrap(), p);

    let e = IndexBuffer::reservoir(geo, 7).unwrap();
    e.save(&path).unwrap();
    assert_eq!(IndexBuffer::load(&path).unwrap(), e);
}

#[test]
fn corrupted_files_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.srmb");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // 3 latents of 2 bits: 6 used bits, 2 pad bits per record.
    let geo = CodeGeometry::new(3, 4).unwrap();
    let b = filled(geo, 4, &mut rng);
    b.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let header = 4 + 2 + 6 * 4 + 4 + 8;

    let mut pad = bytes.clone();
    pad[header] |= 0x01;
    std::fs::write(&path, &pad).unwrap();
    assert!(matches!(IndexBuffer::load(&path), Err(Error::Corrupt(_))));

    let mut magic = bytes.clone();
    magic[1] = b'X';
    std::fs::write(&path, &magic).unwrap();
    assert!(matches!(IndexBuffer::load(&path), Err(Error::Format(_))));

    let mut version = bytes.clone();
    version[4] = 9;
    std::fs::write(&path, &version).unwrap();
    assert!(matches!(IndexBuffer::load(&path), Err(Error::Format(_))));

    std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
    assert!(matches!(IndexBuffer::load(&path), Err(Error::Format(_))));
}

proptest! {
    #[test]
    fn reservoir_size_is_min_of_seen_and_capacity(cap in 0usize..30, n in 0usize..100, seed in any::<u64>()) {
        let geo = CodeGeometry::new(2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = IndexBuffer::reservoir(geo, cap).unwrap();
        for i in 0..n {
            b.insert(item(geo, i as u32, 0, &mut rng), &mut rng).unwrap();
            prop_assert!(b.len() <= cap);
        }
        prop_assert_eq!(b.len(), n.min(cap));
        prop_assert_eq!(b.seen(), n as u64);
    }

    #[test]
    fn per_task_never_evicts_other_tasks(cap in 1usize..30, tasks in 1usize..6, stream in prop::collection::vec(0u16..6, 0..80)) {
        let geo = CodeGeometry::new(2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = IndexBuffer::per_task(geo, cap, tasks).unwrap();
        for (i, &t) in stream.iter().enumerate() {
            let t = t % tasks as u16;
            let before: Vec<Vec<BufferItem>> = (0..tasks as u16)
                .map(|k| b.task_items(k).into_iter().cloned().collect())
                .collect();
            b.insert(item(geo, i as u32, t, &mut rng), &mut rng).unwrap();
            for k in 0..tasks as u16 {
                if k != t {
                    let after: Vec<BufferItem> = b.task_items(k).into_iter().cloned().collect();
                    prop_assert_eq!(&after, &before[k as usize]);
                }
            }
            prop_assert!(b.task_items(t).len() <= b.task_quota(t as usize));
            prop_assert!(b.len() <= cap);
        }
    }
}
