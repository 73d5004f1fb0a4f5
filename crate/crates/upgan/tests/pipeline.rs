//! Library-level integration: corpus round trips through disk formats, a
//! tiny train/generate/swap chain, and a miniature evaluation grid.

mod common;

use upgan::dataset::{
    generate_synthetic_corpus, load_corpus_vec, write_synthetic_corpus, CorpusFormat,
    SynthCorpusConfig,
};
use upgan::eval::{run_table, EvalConfig};
use upgan::swap::swap_face;
use upgan::train::{train, TrainConfig};
use upgan::types::ObscurationMethod;

#[test]
fn corpus_survives_disk_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthCorpusConfig {
        n: 6,
        identities: 3,
        seed: 9,
    };
    let records = generate_synthetic_corpus(&cfg).unwrap();
    write_synthetic_corpus(dir.path(), &cfg, &records, true).unwrap();

    // manifest route: bit-exact regeneration
    let via_manifest = load_corpus_vec(dir.path(), CorpusFormat::SyntheticManifest).unwrap();
    assert_eq!(via_manifest.len(), records.len());
    for (a, b) in via_manifest.iter().zip(records.iter()) {
        assert_eq!(a.image, b.image);
        assert_eq!(a.landmarks, b.landmarks);
    }

    // file route: PNG + sidecar parse, quantized to 8 bits; the reader
    // orders by filename, so match records by id
    let via_files = load_corpus_vec(dir.path(), CorpusFormat::Utkface).unwrap();
    assert_eq!(via_files.len(), records.len());
    for a in via_files.iter() {
        let b = records
            .iter()
            .find(|r| r.id == a.id)
            .expect("loaded record id matches a generated one");
        assert_eq!(a.attributes.gender, b.attributes.gender);
        assert!((a.attributes.skin_tone - b.attributes.skin_tone).abs() < 1e-9);
        // filename age is rounded to an integer year
        assert!((a.attributes.age - b.attributes.age).abs() <= 0.5 / 116.0 + 1e-9);
        let max_gap = a
            .image
            .data()
            .iter()
            .zip(b.image.data().iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(
            max_gap <= 1.0 / 255.0 + 1e-9,
            "png round trip gap {max_gap}"
        );
        for (pa, pb) in a.landmarks.points().iter().zip(b.landmarks.points().iter()) {
            assert!((pa[0] - pb[0]).abs() < 1e-6);
            assert!((pa[1] - pb[1]).abs() < 1e-6);
        }
    }
}

#[test]
fn train_generate_swap_chain() {
    let corpus = generate_synthetic_corpus(&SynthCorpusConfig {
        n: 8,
        identities: 4,
        seed: 2,
    })
    .unwrap();
    let cfg = TrainConfig {
        steps: 3,
        batch_size: 2,
        scale: 8,
        seed: 4,
        lambda3: 0.0,
        checkpoint_every: 0,
        sample_every: 0,
        elastic_alpha: 1.0,
        elastic_sigma: 1.0,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let outcome = train(&corpus, &cfg, dir.path()).unwrap();
    let ck = upgan::checkpoint::Checkpoint::load(&outcome.final_checkpoint).unwrap();

    let record = corpus[0].resized(8).unwrap();
    let (fake, _mask) = upgan::train::generate(&record.attributes, &record.landmarks, &ck).unwrap();
    assert_eq!(fake.height(), 8);

    // an early generator's mask may binarize to nothing; the record's own
    // ground-truth mask exercises the swap path deterministically
    let gt_mask = record.mask.clone().unwrap();
    let eroded = upgan::swap::erode_mask(gt_mask.as_binary().unwrap());
    if eroded.sum() > 0.0 {
        let swapped = swap_face(&record, &fake, &gt_mask);
        match swapped {
            Ok(img) => {
                assert_eq!(img.height(), 8);
                // pixels outside the eroded mask are untouched
                for i in 0..8 {
                    for j in 0..8 {
                        if eroded[[i, j]] == 0.0 {
                            for c in 0..3 {
                                assert_eq!(img.data()[[i, j, c]], record.image.data()[[i, j, c]]);
                            }
                        }
                    }
                }
            }
            Err(upgan::Error::Swap(_)) => {} // empty after erosion at 8x8
            Err(e) => panic!("unexpected swap failure: {e}"),
        }
    }

    // resumable: checkpoint config mismatch is loud
    let wrong = upgan::model::GeneratorConfig::for_scale(32).unwrap();
    let wrong_d = upgan::model::DiscriminatorConfig::for_scale(32).unwrap();
    assert!(ck.ensure_matches(&wrong, &wrong_d).is_err());
}

#[test]
fn miniature_evaluation_grid() {
    let records = generate_synthetic_corpus(&SynthCorpusConfig {
        n: 32,
        identities: 4,
        seed: 13,
    })
    .unwrap();
    let cfg = EvalConfig {
        seed: 3,
        identifier_size: 16,
        train_fraction: 0.75,
        epochs: 8,
        batch_size: 8,
        learning_rate: 1e-3,
        methods: vec!["none".into(), "pixelate:8".into()],
    };
    let methods: Vec<ObscurationMethod> = cfg.parsed_methods().unwrap();
    let report = run_table(&records, &methods, &cfg, None, "mini").unwrap();
    assert_eq!(report.rows.len(), 2);
    for row in &report.rows {
        assert!((0.0..=1.0).contains(&row.threat_i));
        assert!((0.0..=1.0).contains(&row.threat_ii));
    }
    assert!(report.row("None").unwrap().fid.is_none());
    // pixelation FID exists; sample count (32) exceeds the 16-dim features
    assert!(report.row("Pixelation-8").unwrap().fid.unwrap() >= 0.0);
    let table = report.to_text_table();
    assert!(table.contains("None") && table.contains("Pixelation-8"));
}
