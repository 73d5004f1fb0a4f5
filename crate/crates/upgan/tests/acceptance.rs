//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its measured numbers (visible with `--nocapture`).
//!
//! The two long-running criteria (the evaluation grid and the training
//! progress check) serialize on a shared lock so neither is starved of
//! cores by the other.

mod common;

use std::sync::Mutex;
use std::time::Instant;

use ndarray::{Array2, Array3, Array4};
use upgan::baselines::{gaussian_blur, k_same, pixelate, KSameConfig};
use upgan::dataset::{generate_synthetic_corpus, SynthCorpusConfig};
use upgan::eval::{
    fid, identification_accuracy, run_table, EvalConfig, Identifier, LookupIdentifier,
};
use upgan::losses::{
    adv_g_with_grads, bce_with_grads, discriminator_loss, discriminator_loss_and_grads,
    generator_loss, generator_term_values, mask_bce, perceptual_with_grads, recon_l2,
    recon_with_grads, LossWeights, TrainBatch,
};
use upgan::model::{
    generator_forward, DiscriminatorConfig, DiscriminatorParams, GeneratorConfig, GeneratorParams,
    PerceptualConfig, PerceptualNet, PerceptualNetConfig,
};
use upgan::nn::{seeded_rng, uniform};
use upgan::swap::{poisson_blend, SOLVER_TOL};
use upgan::train::{train, TrainConfig};
use upgan::types::{
    AttributeVector, ImageTensor, LandmarkVector, MaskTensor, ObscurationMethod, ObscurationResult,
    INPUT_DIM,
};

static HEAVY: Mutex<()> = Mutex::new(());

fn pass(criterion: usize, name: &str, detail: &str) {
    println!("ACCEPTANCE {criterion} ({name}): PASS — {detail}");
}

// ---------------------------------------------------------------------------
// 1. Shape contract
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_shape_contract() {
    let start = Instant::now();
    let attrs = AttributeVector::new(0.4, 1.0, 0.5).unwrap();
    let lms = LandmarkVector::new([
        [0.37, 0.40],
        [0.63, 0.40],
        [0.50, 0.54],
        [0.40, 0.66],
        [0.50, 0.62],
        [0.60, 0.66],
        [0.50, 0.70],
    ])
    .unwrap();

    for scale in [128usize, 32] {
        let cfg = GeneratorConfig::for_scale(scale).unwrap();
        assert_eq!(cfg.input_dim, INPUT_DIM, "input dimensionality is 3 + 14");
        let gen = GeneratorParams::init(cfg, 40 + scale as u64).unwrap();
        let (image, mask) = generator_forward(&attrs, &lms, &gen).unwrap();
        assert_eq!(image.height(), scale);
        assert_eq!(image.width(), scale);
        match &mask {
            MaskTensor::Probabilities(p) => assert_eq!(p.shape(), &[scale, scale, 2]),
            MaskTensor::Binary(_) => panic!("generator must emit probability masks"),
        }
        assert!(image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    // full-scale schedule is the published one: 4 -> 8 -> 16 -> 32 -> 64 -> 128
    let trace: Vec<usize> = GeneratorConfig::for_scale(128)
        .unwrap()
        .shape_trace()
        .iter()
        .map(|t| t.0)
        .collect();
    assert_eq!(trace, vec![4, 8, 16, 32, 64, 128]);

    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < 5.0,
        "shape contract took {elapsed:.1}s, budget 5s"
    );
    pass(
        1,
        "shape contract",
        &format!("128 and 32 scales in {elapsed:.2}s"),
    );
}

// ---------------------------------------------------------------------------
// 2. Gradient suite
// ---------------------------------------------------------------------------

fn tiny_batch(n: usize, seed: u64, size: usize) -> TrainBatch {
    let mut rng = seeded_rng(seed, &[0xfd]);
    let inputs = Array2::from_shape_fn((n, INPUT_DIM), |_| uniform(&mut rng, 0.05, 0.95));
    let real = Array4::from_shape_fn((n, 3, size, size), |_| uniform(&mut rng, 0.0, 1.0));
    let mask_truth = Array3::from_shape_fn((n, size, size), |(_, i, j)| {
        if i >= size / 4 && i < 3 * size / 4 && j >= size / 4 && j < 3 * size / 4 {
            1.0
        } else {
            0.0
        }
    });
    TrainBatch {
        inputs,
        real,
        mask_truth,
    }
}

#[test]
fn criterion_2_gradient_suite() {
    let start = Instant::now();
    let gen = GeneratorParams::init(GeneratorConfig::new(8, vec![6, 4]).unwrap(), 51).unwrap();
    let disc = DiscriminatorParams::init(DiscriminatorConfig::for_scale(8).unwrap(), 52).unwrap();
    let net = PerceptualNet::init(PerceptualNetConfig::for_scale(8, 2).unwrap(), 53).unwrap();
    let perc = PerceptualConfig::new(net, vec![0]).unwrap();
    let batch = tiny_batch(2, 54, 8);

    // analytic per-term generator gradients
    let (v_adv, g_adv) = adv_g_with_grads(&batch, &gen, &disc).unwrap();
    let (v_rec, g_rec) = recon_with_grads(&batch, &gen, false).unwrap();
    let (v_bce, g_bce) = bce_with_grads(&batch, &gen).unwrap();
    let (v_perc, g_perc) = perceptual_with_grads(&batch, &gen, &perc, false).unwrap();
    let term_names = ["adv_g", "recon_l2", "mask_bce", "perceptual"];
    let analytic = [
        g_adv.blocks(),
        g_rec.blocks(),
        g_bce.blocks(),
        g_perc.blocks(),
    ];

    let h = common::FD_STEP;
    let mut max_rel = [0.0f64; 4];
    let n_blocks = gen.blocks().len();
    let mut checked = 0usize;
    for bi in 0..n_blocks {
        let len = gen.blocks()[bi].len();
        for i in 0..len {
            let mut gp = gen.clone();
            gp.blocks_mut()[bi][i] += h;
            let fp = generator_term_values(&batch, &gp, &disc, Some(&perc), false).unwrap();
            let mut gm = gen.clone();
            gm.blocks_mut()[bi][i] -= h;
            let fm = generator_term_values(&batch, &gm, &disc, Some(&perc), false).unwrap();
            let fds = [
                (fp.0 - fm.0) / (2.0 * h),
                (fp.1 - fm.1) / (2.0 * h),
                (fp.2 - fm.2) / (2.0 * h),
                (fp.3 - fm.3) / (2.0 * h),
            ];
            for t in 0..4 {
                let an = analytic[t][bi][i];
                let rel = common::rel_err(fds[t], an);
                assert!(
                    rel <= 1e-3,
                    "{} gradient mismatch at block {bi} index {i}: fd {} vs analytic {} (rel {rel:.2e})",
                    term_names[t],
                    fds[t],
                    an
                );
                max_rel[t] = max_rel[t].max(rel);
            }
            checked += 1;
        }
    }

    // adv_d over every discriminator parameter
    let (v_d, d_grads) = discriminator_loss_and_grads(&batch, &gen, &disc).unwrap();
    let d_analytic = d_grads.blocks();
    let mut max_rel_d = 0.0f64;
    let d_blocks = disc.blocks().len();
    let mut checked_d = 0usize;
    for bi in 0..d_blocks {
        let len = disc.blocks()[bi].len();
        for i in 0..len {
            let mut dp = disc.clone();
            dp.blocks_mut()[bi][i] += h;
            let fp = discriminator_loss(&batch, &gen, &dp).unwrap();
            let mut dm = disc.clone();
            dm.blocks_mut()[bi][i] -= h;
            let fm = discriminator_loss(&batch, &gen, &dm).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let rel = common::rel_err(fd, d_analytic[bi][i]);
            assert!(
                rel <= 1e-3,
                "adv_d gradient mismatch at block {bi} index {i}: fd {fd} vs analytic {} (rel {rel:.2e})",
                d_analytic[bi][i]
            );
            max_rel_d = max_rel_d.max(rel);
            checked_d += 1;
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < 120.0,
        "gradient suite took {elapsed:.1}s, budget 120s"
    );
    let _ = (v_adv, v_rec, v_bce, v_perc, v_d);
    pass(
        2,
        "gradient suite",
        &format!(
            "{checked} generator + {checked_d} discriminator params; max rel err \
             adv_g {:.1e}, recon {:.1e}, bce {:.1e}, perceptual {:.1e}, adv_d {:.1e} in {elapsed:.1}s",
            max_rel[0], max_rel[1], max_rel[2], max_rel[3], max_rel_d
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. Loss identities
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_loss_identities() {
    let gen = GeneratorParams::init(GeneratorConfig::new(8, vec![6, 4]).unwrap(), 61).unwrap();
    let disc = DiscriminatorParams::init(DiscriminatorConfig::for_scale(8).unwrap(), 62).unwrap();
    let net = PerceptualNet::init(PerceptualNetConfig::for_scale(8, 2).unwrap(), 63).unwrap();
    let perc = PerceptualConfig::new(net, vec![0]).unwrap();
    let batch = tiny_batch(3, 64, 8);

    let weights = LossWeights {
        lambda1: 5.0,
        lambda2: 1.0,
        lambda3: 1.0,
    };
    let b = generator_loss(&batch, &gen, &disc, Some(&perc), &weights, false).unwrap();
    let expect = b.adv_g + 5.0 * b.recon_l2 + b.mask_bce + b.perceptual;
    assert!(
        (expect - b.total_g).abs() <= 1e-6,
        "total identity violated: {} vs {}",
        expect,
        b.total_g
    );

    let probs = Array3::from_elem((8, 8, 2), 0.5);
    let pred = MaskTensor::probabilities(probs).unwrap();
    let truth = MaskTensor::binary(Array2::from_shape_fn(
        (8, 8),
        |(i, _)| if i < 4 { 1.0 } else { 0.0 },
    ))
    .unwrap();
    let bce_half = mask_bce(&pred, &truth).unwrap();
    assert!(
        (bce_half - std::f64::consts::LN_2).abs() <= 1e-9,
        "BCE at p = 0.5 is {bce_half}, expected ln 2"
    );

    let img = ImageTensor::constant(16, 16, 0.37).unwrap();
    assert_eq!(recon_l2(&img, &img).unwrap(), 0.0);

    pass(
        3,
        "loss identities",
        &format!(
            "total identity to 1e-6, BCE(0.5) = ln 2, L2(x, x) = 0 (total_g {:.3})",
            b.total_g
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. k-anonymity oracle
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_k_anonymity_oracle() {
    let start = Instant::now();
    // 100 records, each its own identity (the k-same guarantee is about
    // cluster size, so every cluster of 10 contains 10 distinct identities)
    let records = generate_synthetic_corpus(&SynthCorpusConfig {
        n: 100,
        identities: 100,
        seed: 21,
    })
    .unwrap();
    let k = 10;
    let outcome = k_same(&records, &KSameConfig { k }).unwrap();
    for c in &outcome.clusters {
        assert!(c.len() >= k, "cluster smaller than k");
    }
    let mut identifier = LookupIdentifier::from_ksame(&outcome, &records).unwrap();
    let test_set: Vec<ObscurationResult> = (0..records.len())
        .map(|i| ObscurationResult {
            image: outcome.surrogate_for(i).clone(),
            method: ObscurationMethod::KSame { k },
            source_id: records[i].id.clone(),
            identity: records[i].identity.clone(),
        })
        .collect();
    let acc = identification_accuracy(&mut identifier, &test_set).unwrap();
    let bound = 1.0 / k as f64 + 0.03;
    assert!(
        acc <= bound,
        "Bayes-optimal lookup achieved {acc:.3}, above the 1/k bound {bound:.3}"
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < 60.0,
        "k-anonymity oracle took {elapsed:.1}s, budget 60s"
    );
    pass(
        4,
        "k-anonymity oracle",
        &format!("lookup accuracy {acc:.3} <= {bound:.3} in {elapsed:.1}s"),
    );
}

// ---------------------------------------------------------------------------
// 5. Evaluation grid structure
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_table_structure() {
    let _guard = HEAVY.lock().unwrap();
    let start = Instant::now();
    let records = generate_synthetic_corpus(&SynthCorpusConfig {
        n: 500,
        identities: 10,
        seed: 12,
    })
    .unwrap();
    let cfg = EvalConfig::default();
    let methods: Vec<ObscurationMethod> = cfg.parsed_methods().unwrap();
    let report = run_table(&records, &methods, &cfg, None, "synthetic-500").unwrap();
    println!("{}", report.to_text_table());

    let none = report.row("None").expect("None row");
    assert!(
        none.threat_i >= 0.90,
        "clear-image accuracy {:.3} below 0.90",
        none.threat_i
    );
    for row in &report.rows {
        assert!(
            none.threat_i >= row.threat_i,
            "{} threat-I accuracy {:.3} exceeds None {:.3}",
            row.method,
            row.threat_i,
            none.threat_i
        );
        assert!(
            row.threat_ii >= row.threat_i - 0.05,
            "{}: informed attacker did worse ({:.3} vs {:.3})",
            row.method,
            row.threat_ii,
            row.threat_i
        );
        assert!((0.0..=1.0).contains(&row.threat_i));
        assert!((0.0..=1.0).contains(&row.threat_ii));
        if let Some(f) = row.fid {
            assert!(f >= 0.0);
        }
    }
    let p4 = report.row("Pixelation-4").unwrap().threat_i;
    let p8 = report.row("Pixelation-8").unwrap().threat_i;
    let p16 = report.row("Pixelation-16").unwrap().threat_i;
    assert!(
        p8 <= p4 + 0.02,
        "pixelation not non-increasing: {p4:.3} -> {p8:.3}"
    );
    assert!(
        p16 <= p8 + 0.02,
        "pixelation not non-increasing: {p8:.3} -> {p16:.3}"
    );

    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < 1800.0,
        "evaluation grid took {elapsed:.0}s, budget 1800s"
    );
    pass(
        5,
        "evaluation grid",
        &format!(
            "None {:.3}, pixelation I {:.3}/{:.3}/{:.3}, all II >= I - 0.05, in {elapsed:.0}s",
            none.threat_i, p4, p8, p16
        ),
    );
}

// ---------------------------------------------------------------------------
// 6. FID oracle
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_fid_oracle() {
    use rand_distr::{Distribution, StandardNormal};
    let start = Instant::now();

    let mut rng = seeded_rng(71, &[]);
    let x = Array2::from_shape_fn((200, 4), |_| uniform(&mut rng, -1.0, 1.0));
    let same = fid(&x, &x).unwrap();
    assert!(same <= 1e-6, "fid of identical sets is {same}");

    let sample = |n: usize, mean: [f64; 2], scale: f64, seed: u64| {
        let mut rng = seeded_rng(seed, &[0x42]);
        Array2::from_shape_fn((n, 2), |(_, j)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            mean[j] + scale * z
        })
    };
    let a = sample(10_000, [0.0, 0.0], 1.0, 1);
    let b = sample(10_000, [1.0, 0.0], 1.0, 2);
    let shift = fid(&a, &b).unwrap();
    assert!(
        (shift - 1.0).abs() <= 0.1,
        "mean-shift fid {shift:.3}, closed form 1.0"
    );

    let c = sample(10_000, [0.0, 0.0], 2.0, 3);
    let scale_fid = fid(&a, &c).unwrap();
    assert!(
        (scale_fid - 2.0).abs() <= 0.2,
        "scale fid {scale_fid:.3}, closed form 2.0"
    );

    let ab = fid(&a, &b).unwrap();
    let ba = fid(&b, &a).unwrap();
    assert!((ab - ba).abs() <= 1e-6, "fid asymmetry {ab} vs {ba}");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "fid oracle took {elapsed:.1}s, budget 60s");
    pass(
        6,
        "fid oracle",
        &format!(
            "identical 0, shift {shift:.3}~1, scale {scale_fid:.3}~2, symmetric, in {elapsed:.1}s"
        ),
    );
}

// ---------------------------------------------------------------------------
// 7. Poisson blend vs dense direct solve
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_poisson_blend() {
    let start = Instant::now();
    let mut rng = seeded_rng(81, &[]);
    // mid-range values keep the solution inside [0, 1] so output clipping
    // cannot mask a solver discrepancy
    let source = ImageTensor::new(Array3::from_shape_fn((16, 16, 3), |_| {
        uniform(&mut rng, 0.3, 0.7)
    }))
    .unwrap();
    let target = ImageTensor::new(Array3::from_shape_fn((16, 16, 3), |_| {
        uniform(&mut rng, 0.3, 0.7)
    }))
    .unwrap();
    let labels = Array2::from_shape_fn((16, 16), |(i, j)| {
        let d = (i as f64 - 8.0).powi(2) + (j as f64 - 8.0).powi(2);
        if d <= 20.0 {
            1.0
        } else {
            0.0
        }
    });
    let mask = MaskTensor::Binary(labels.clone());

    let iterative = poisson_blend(&source, &target, &mask).unwrap();
    assert!(iterative.converged, "solver did not converge");
    let direct = common::dense_poisson_solve(&source, &target, &labels);
    let mut max_gap = 0.0f64;
    for i in 0..16 {
        for j in 0..16 {
            for c in 0..3 {
                let gap = (iterative.image.data()[[i, j, c]] - direct[[i, j, c]]).abs();
                max_gap = max_gap.max(gap);
            }
        }
    }
    assert!(
        max_gap <= 1e-4,
        "iterative vs dense direct solve differ by {max_gap:.2e}"
    );

    // Dirichlet: output equals target exactly outside the mask
    for i in 0..16 {
        for j in 0..16 {
            if labels[[i, j]] == 0.0 {
                for c in 0..3 {
                    assert_eq!(iterative.image.data()[[i, j, c]], target.data()[[i, j, c]]);
                }
            }
        }
    }

    // source = target solves immediately
    let identity = poisson_blend(&target, &target, &mask).unwrap();
    for (a, b) in identity.image.data().iter().zip(target.data().iter()) {
        assert!((a - b).abs() <= 1e-4);
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < 30.0,
        "poisson blend took {elapsed:.1}s, budget 30s"
    );
    pass(
        7,
        "poisson blend",
        &format!(
            "dense gap {max_gap:.1e} <= 1e-4 ({} unknowns, {} iterations), in {elapsed:.1}s",
            labels.sum() as usize,
            iterative.iterations
        ),
    );
}

// ---------------------------------------------------------------------------
// 8. Classical operations vs brute force
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_classical_vs_brute_force() {
    let mut rng = seeded_rng(91, &[]);
    let img = ImageTensor::new(Array3::from_shape_fn((8, 8, 3), |_| {
        uniform(&mut rng, 0.0, 1.0)
    }))
    .unwrap();

    // blur vs direct double-loop convolution
    let fast = gaussian_blur(&img, 5).unwrap();
    let brute = common::brute_force_blur(&img, 5);
    let mut max_gap = 0.0f64;
    for (a, b) in fast.data().iter().zip(brute.iter()) {
        max_gap = max_gap.max((a - b).abs());
    }
    assert!(
        max_gap <= 1e-6,
        "blur deviates from brute force by {max_gap:.2e}"
    );

    // pixelation tile means by hand
    let vals = [
        [0.0, 1.0, 0.2, 0.4],
        [0.5, 0.5, 0.6, 0.8],
        [1.0, 0.0, 0.1, 0.3],
        [0.0, 1.0, 0.5, 0.1],
    ];
    let small = ImageTensor::new(Array3::from_shape_fn((4, 4, 3), |(i, j, _)| vals[i][j])).unwrap();
    let pix = pixelate(&small, 2).unwrap();
    let expect = [[0.5, 0.5], [0.5, 0.25]];
    for ti in 0..2 {
        for tj in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let got = pix.data()[[2 * ti + i, 2 * tj + j, 0]];
                    assert!(
                        (got - expect[ti][tj]).abs() <= 1e-12,
                        "tile ({ti},{tj}) mean {got} != {}",
                        expect[ti][tj]
                    );
                }
            }
        }
    }

    // augmentation identities
    let attrs = AttributeVector::new(0.3, 0.0, 0.5).unwrap();
    let lms = LandmarkVector::new([
        [0.37, 0.40],
        [0.63, 0.40],
        [0.50, 0.54],
        [0.40, 0.66],
        [0.50, 0.62],
        [0.60, 0.66],
        [0.50, 0.70],
    ])
    .unwrap();
    let record = upgan::dataset::synth_face(&attrs, &lms, 5);
    let distorted = upgan::augment::elastic_distortion(&record, 0.0, 6.0, 1).unwrap();
    assert_eq!(distorted.image, record.image);
    assert_eq!(distorted.landmarks, record.landmarks);
    let rotated = upgan::augment::random_rotation(&record, (0.0, 0.0), 2).unwrap();
    assert_eq!(rotated.image, record.image);
    assert_eq!(rotated.landmarks, record.landmarks);

    pass(
        8,
        "classical ops vs brute force",
        &format!("blur gap {max_gap:.1e} <= 1e-6, tile means exact, identity augmentations exact"),
    );
}

// ---------------------------------------------------------------------------
// 9. Training smoke + progress
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_training_progress() {
    let _guard = HEAVY.lock().unwrap();
    let start = Instant::now();
    let corpus = generate_synthetic_corpus(&SynthCorpusConfig {
        n: 200,
        identities: 10,
        seed: 7,
    })
    .unwrap();
    let cfg = TrainConfig {
        steps: 2000,
        batch_size: 4,
        scale: 32,
        seed: 7,
        checkpoint_every: 1000,
        sample_every: 1000,
        ..TrainConfig::default()
    };

    let dir1 = tempfile::tempdir().unwrap();
    let run1 = train(&corpus, &cfg, dir1.path()).unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    let run2 = train(&corpus, &cfg, dir2.path()).unwrap();

    // bit-reproducibility: the serialized metrics logs are identical
    let log1 = std::fs::read(&run1.metrics_path).unwrap();
    let log2 = std::fs::read(&run2.metrics_path).unwrap();
    assert_eq!(log1, log2, "metrics logs differ between identical runs");

    // no NaNs anywhere
    for m in &run1.metrics {
        for v in [
            m.losses.adv_g,
            m.losses.recon_l2,
            m.losses.mask_bce,
            m.losses.perceptual,
            m.losses.total_g,
            m.losses.total_d,
        ] {
            assert!(v.is_finite(), "non-finite loss at step {}", m.step);
        }
    }

    // per-pixel reconstruction drops by at least half from the early average
    let elems = (3 * cfg.scale * cfg.scale) as f64;
    let early: f64 = run1.metrics[..10]
        .iter()
        .map(|m| m.losses.recon_l2 / elems)
        .sum::<f64>()
        / 10.0;
    let late: f64 = run1.metrics[run1.metrics.len() - 10..]
        .iter()
        .map(|m| m.losses.recon_l2 / elems)
        .sum::<f64>()
        / 10.0;
    assert!(
        late <= 0.5 * early,
        "per-pixel recon only moved from {early:.5} to {late:.5}"
    );

    // scheduled artifacts exist
    assert!(dir1.path().join("checkpoint_step_1000.ckpt").exists());
    assert!(dir1.path().join("samples_step_1000.png").exists());

    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < 1200.0,
        "training check took {elapsed:.0}s, budget 1200s"
    );
    pass(
        9,
        "training smoke + progress",
        &format!(
            "2 x 2000 steps bit-identical; per-pixel recon {early:.5} -> {late:.5} \
             ({:.0}% drop), in {elapsed:.0}s",
            100.0 * (1.0 - late / early)
        ),
    );
}
