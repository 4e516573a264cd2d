mod common;

use common::{max_block_error, random_input, toy_dman_config};
use dualtrack::checkpoint::Checkpoint;
use dualtrack::dman::data::{
    make_pairs, make_tracklets, random_identities, sample_identity, IdentityDataset, TrackletSpec,
};
use dualtrack::dman::{
    embed, masked_pool, san_forward, san_from_checkpoint, san_loss, san_loss_and_grad, san_to_checkpoint,
    similarity_matrix, spatial_attention, tan_forward, tan_loss, tan_loss_and_grad, train_tan, Dman, DmanMode,
    EmbeddingTensor, PairExample, SanMode, SanParams, TanMode, TanParams, TrackletExample, TrainConfig,
};
use dualtrack::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn toy_san(seed: u64, ids: usize) -> SanParams {
    let mut p = SanParams::init(&toy_dman_config(ids), &mut rng(seed)).unwrap();
    // non-trivial biases so every gradient path is exercised
    let mut r = rng(seed + 100);
    for l in p.conv.iter_mut() {
        for b in l.bias.iter_mut() {
            *b = r.random_range(-0.1..0.1);
        }
    }
    for b in p.combine_b.iter_mut() {
        *b = r.random_range(0.0..0.3);
    }
    p.theta_s.iter_mut().for_each(|t| *t *= 10.0);
    p
}

fn random_features(r: &mut ChaCha8Rng, t: usize, d: usize) -> Vec<Vec<f64>> {
    (0..t)
        .map(|_| (0..d).map(|_| r.random_range(0.0..1.0)).collect())
        .collect()
}

#[test]
fn san_gradients_match_finite_differences() {
    for (seed, same, mode) in [
        (1, true, SanMode::default()),
        (2, false, SanMode::default()),
        (
            3,
            false,
            SanMode {
                uniform_attention: true,
            },
        ),
    ] {
        let p = toy_san(seed, 3);
        let mut r = rng(seed + 7);
        let ex = PairExample {
            a: random_input(&mut r, 32),
            b: random_input(&mut r, 32),
            id_a: 1,
            id_b: if same { 1 } else { 2 },
        };
        let (_, g) = san_loss_and_grad(&p, &ex, mode).unwrap();
        let (err, block) = max_block_error(&p, &g, |q| san_loss(q, &ex, mode).unwrap(), 1e-5);
        assert!(err <= 1e-4, "block {block}: relative error {err:e}");
    }
}

#[test]
fn tan_gradients_match_finite_differences() {
    for (seed, same, mode) in [
        (4, true, TanMode::default()),
        (5, false, TanMode::default()),
        (6, true, TanMode { average: true }),
    ] {
        let mut r = rng(seed);
        let mut p = TanParams::init(6, 8, &mut r);
        // open the forget gates so the recurrent paths carry gradient
        for l in [&mut p.forward, &mut p.backward] {
            l.b.iter_mut().for_each(|b| *b = r.random_range(-0.5..0.5));
        }
        let ex = TrackletExample {
            features: random_features(&mut r, 4, 6),
            same,
            foreign: vec![],
        };
        let (_, g) = tan_loss_and_grad(&p, &ex, mode).unwrap();
        let (err, block) = max_block_error(&p, &g, |q| tan_loss(q, &ex, mode).unwrap(), 1e-5);
        assert!(err <= 1e-4, "block {block}: relative error {err:e}");
    }
}

#[test]
fn embedding_fibers_are_unit_or_zero() {
    let p = toy_san(8, 0);
    let mut r = rng(9);
    let e = embed(&p, &random_input(&mut r, 32)).unwrap();
    assert_eq!((e.h, e.w, e.c), (4, 4, 8));
    for i in 0..e.n() {
        let n: f64 = e.fiber(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6 || n == 0.0, "fiber {i} norm {n}");
    }
    // a network whose last layer outputs zeros maps every fiber to zero
    let mut z = p.clone();
    z.conv[2].weight.fill(0.0);
    z.conv[2].bias.fill(0.0);
    let e = embed(&z, &random_input(&mut r, 32)).unwrap();
    assert!(e.fibers.iter().all(|&v| v == 0.0));
}

#[test]
fn similarity_transpose_identity_is_exact() {
    let p = toy_san(10, 0);
    let mut r = rng(11);
    let a = embed(&p, &random_input(&mut r, 32)).unwrap();
    let b = embed(&p, &random_input(&mut r, 32)).unwrap();
    let sab = similarity_matrix(&a, &b).unwrap();
    let sba = similarity_matrix(&b, &a).unwrap();
    let n = a.n();
    for i in 0..n {
        for j in 0..n {
            assert_eq!(sab[i * n + j], sba[j * n + i]);
            assert!(sab[i * n + j].abs() <= 1.0 + 1e-12);
        }
    }
}

#[test]
fn similarity_of_special_fiber_sets() {
    let unit = |v: Vec<f64>| EmbeddingTensor {
        h: 2,
        w: 2,
        c: 2,
        fibers: v.repeat(4),
    };
    let ones = similarity_matrix(&unit(vec![1.0, 0.0]), &unit(vec![1.0, 0.0])).unwrap();
    assert!(ones.iter().all(|&s| s == 1.0));
    let zeros = similarity_matrix(&unit(vec![1.0, 0.0]), &unit(vec![0.0, 1.0])).unwrap();
    assert!(zeros.iter().all(|&s| s == 0.0));
    let other = EmbeddingTensor {
        h: 1,
        w: 2,
        c: 2,
        fibers: vec![1.0, 0.0, 0.0, 1.0],
    };
    assert!(matches!(
        similarity_matrix(&unit(vec![1.0, 0.0]), &other),
        Err(Error::DimensionMismatch(_))
    ));
}

#[test]
fn spatial_attention_properties() {
    let mut r = rng(12);
    let n = 9;
    let s: Vec<f64> = (0..n * n).map(|_| r.random_range(-1.0..1.0)).collect();
    let theta: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
    let a = spatial_attention(&s, &theta).unwrap();
    assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert!(a.iter().all(|&v| v >= 0.0));
    let uniform = spatial_attention(&s, &vec![0.0; n]).unwrap();
    assert!(uniform.iter().all(|&v| (v - 1.0 / n as f64).abs() < 1e-15));
    let rows_equal: Vec<f64> = s[..n].repeat(n);
    let same = spatial_attention(&rows_equal, &theta).unwrap();
    assert!(same.iter().all(|&v| (v - 1.0 / n as f64).abs() < 1e-12));
    // adding a constant to every similarity adds sum(theta) * c to every logit
    let shifted: Vec<f64> = s.iter().map(|v| v + 0.25).collect();
    let b = spatial_attention(&shifted, &theta).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn masked_pool_properties() {
    let p = toy_san(13, 0);
    let e = embed(&p, &random_input(&mut rng(14), 32)).unwrap();
    let n = e.n();
    let mut one_hot = vec![0.0; n];
    one_hot[5] = 1.0;
    assert_eq!(masked_pool(&e, &one_hot).unwrap(), e.fiber(5));
    let mean = masked_pool(&e, &vec![1.0 / n as f64; n]).unwrap();
    for (k, got) in mean.iter().enumerate() {
        let m: f64 = (0..n).map(|i| e.fiber(i)[k]).sum::<f64>() / n as f64;
        assert!((got - m).abs() < 1e-12);
    }
    assert!(mean.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1.0 + 1e-12);
}

#[test]
fn san_pair_symmetry() {
    let mut p = toy_san(15, 3);
    p.tie_combine_halves();
    let mut r = rng(16);
    let (a, b) = (random_input(&mut r, 32), random_input(&mut r, 32));
    let ab = san_forward(&p, &a, &b, SanMode::default()).unwrap();
    let ba = san_forward(&p, &b, &a, SanMode::default()).unwrap();
    assert_eq!(ab.attention_a, ba.attention_b);
    assert_eq!(ab.attention_b, ba.attention_a);
    assert!((ab.p_verify - ba.p_verify).abs() < 1e-12);
    assert!(ab.p_verify > 0.0 && ab.p_verify < 1.0);
    let aa = san_forward(&p, &a, &a, SanMode::default()).unwrap();
    assert_eq!(aa.attention_a, aa.attention_b);
    assert_eq!(aa.pooled_a, aa.pooled_b);
    for m in [&ab.attention_a, &ab.attention_b] {
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn uninformed_verification_costs_ln2() {
    let mut p = SanParams::zeros(&toy_dman_config(0)).unwrap();
    p.conv[0].bias.fill(0.1);
    let mut r = rng(17);
    let ex = PairExample {
        a: random_input(&mut r, 32),
        b: random_input(&mut r, 32),
        id_a: 0,
        id_b: 0,
    };
    let l = san_loss(&p, &ex, SanMode::default()).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    // confident, correct prediction
    p.verify_b[0] = 60.0;
    assert!(san_loss(&p, &ex, SanMode::default()).unwrap() < 1e-20);
}

#[test]
fn temporal_attention_properties() {
    let mut r = rng(18);
    let p = TanParams::init(6, 8, &mut r);
    let one = tan_forward(&p, &random_features(&mut r, 1, 6), TanMode::default()).unwrap();
    assert_eq!(one.weights, vec![1.0]);
    let feats = random_features(&mut r, 7, 6);
    let out = tan_forward(&p, &feats, TanMode::default()).unwrap();
    assert!((out.weights.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert!(out.similarity > 0.0 && out.similarity < 1.0);
    // zero attention vector is exactly the average-pooling mode
    let mut flat = p.clone();
    flat.theta_h.fill(0.0);
    let zero = tan_forward(&flat, &feats, TanMode::default()).unwrap();
    let avg = tan_forward(&p, &feats, TanMode { average: true }).unwrap();
    assert_eq!(zero.pooled, avg.pooled);
    assert_eq!(zero.similarity.to_bits(), avg.similarity.to_bits());
    assert!(zero.weights.iter().all(|&a| a == 1.0 / 7.0));
    assert!(tan_forward(&p, &[], TanMode::default()).is_err());
}

#[test]
fn dman_affinity_contract_and_checkpoint_round_trip() {
    let mut r = rng(19);
    let cfg = toy_dman_config(0);
    let dman = Dman {
        san: SanParams::init(&cfg, &mut r).unwrap(),
        tan: TanParams::init(cfg.combined_dim, cfg.hidden_dim, &mut r),
        mode: DmanMode::default(),
    };
    let det = random_input(&mut r, 32);
    let tracklet: Vec<_> = (0..3).map(|_| random_input(&mut r, 32)).collect();
    let a1 = dman.affinity(&det, &tracklet).unwrap();
    assert_eq!(a1, dman.affinity(&det, &tracklet).unwrap());
    assert!(a1 > 0.0 && a1 < 1.0);
    assert!(matches!(dman.affinity(&det, &[]), Err(Error::InvalidArgument(_))));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    dman.to_checkpoint().save(&path).unwrap();
    let back = Dman::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(back, dman);

    let mut wrong = dman.to_checkpoint();
    wrong.tensors.retain(|t| t.name != "tan.theta_h");
    assert!(matches!(Dman::from_checkpoint(&wrong), Err(Error::Checkpoint(_))));

    // the spatial network alone, and read back out of a full checkpoint
    let san_only = san_to_checkpoint(&dman.san);
    assert_eq!(san_from_checkpoint(&san_only).unwrap(), dman.san);
    assert_eq!(san_from_checkpoint(&dman.to_checkpoint()).unwrap(), dman.san);
    assert!(matches!(Dman::from_checkpoint(&san_only), Err(Error::Checkpoint(_))));
}

fn toy_dataset(ids: usize, per: usize, seed: u64) -> IdentityDataset {
    let mut r = rng(seed);
    let specs = random_identities(ids, [12.0, 24.0], &mut r);
    IdentityDataset::render(&specs, per, [0.45; 3], &mut r).unwrap()
}

#[test]
fn identity_sampling_is_uniform() {
    let mut r = rng(20);
    let mut counts = [0usize; 10];
    for _ in 0..10_000 {
        counts[sample_identity(10, &mut r)] += 1;
    }
    // chi-square with 9 degrees of freedom, 0.1% critical value
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0).sum();
    assert!(chi2 < 27.88, "{counts:?}");
    let mean_dev = counts.iter().map(|&c| (c as f64 - 1000.0).abs()).sum::<f64>() / 10.0;
    assert!(mean_dev <= 50.0, "{counts:?}");
}

#[test]
fn pair_and_tracklet_construction() {
    let ds = toy_dataset(4, 3, 21);
    let mut r = rng(22);
    let pairs = make_pairs(&ds, 20, 0.3, 16, &mut r).unwrap();
    assert_eq!(pairs.iter().filter(|p| p.same()).count(), 6);
    let spec = TrackletSpec {
        length: 5,
        positive_ratio: 0.5,
        corrupt_fraction: 1.0,
        corrupt_negatives: true,
    };
    let ts = make_tracklets(&ds, 30, &spec, 16, &mut r).unwrap();
    assert_eq!(ts.iter().filter(|t| t.same).count(), 15);
    for t in &ts {
        assert!((1..=2).contains(&t.foreign.len()));
        assert!(t.foreign.iter().all(|&k| k < 5));
        assert_eq!(t.observations.len(), 5);
    }
    let single = toy_dataset(1, 3, 23);
    assert!(matches!(
        make_pairs(&single, 4, 0.5, 16, &mut r),
        Err(Error::InvalidArgument(_))
    ));
    assert!(matches!(
        make_tracklets(&single, 4, &spec, 16, &mut r),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn dataset_directory_round_trip() {
    let ds = toy_dataset(3, 2, 24);
    let dir = tempfile::tempdir().unwrap();
    ds.save_dir(dir.path()).unwrap();
    let back = IdentityDataset::load_dir(dir.path()).unwrap();
    assert_eq!(back.len(), 3);
    assert_eq!(back.total_images(), 6);
}

#[test]
fn tan_training_reduces_loss_and_leaves_san_untouched() {
    // identical easy positives and negatives
    let ds = toy_dataset(3, 4, 25);
    let cfg = toy_dman_config(0);
    let mut r = rng(26);
    let san = SanParams::init(&cfg, &mut r).unwrap();
    let before = san.clone();
    let mut tan = TanParams::init(cfg.combined_dim, cfg.hidden_dim, &mut r);
    let tc = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 8,
        steps: 200,
        positive_ratio: 0.5,
        seed: 3,
    };
    let spec = TrackletSpec {
        length: 4,
        positive_ratio: 0.5,
        corrupt_fraction: 0.0,
        corrupt_negatives: true,
    };
    let losses = train_tan(
        &mut tan,
        &san,
        &ds,
        &tc,
        &spec,
        (SanMode::default(), TanMode::default()),
    )
    .unwrap();
    assert_eq!(losses.len(), 200);
    let head: f64 = losses[..20].iter().sum::<f64>() / 20.0;
    let tail: f64 = losses[180..].iter().sum::<f64>() / 20.0;
    assert!(tail < head, "{head} -> {tail}");
    assert_eq!(san, before);
}
