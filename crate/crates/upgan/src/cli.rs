//! Command-line entry point: one flat subcommand per pipeline stage. Every
//! command that produces an artifact directory writes a manifest (resolved
//! config, seed, code version) sufficient to re-run it. Relative output
//! paths can be redirected with the `UPGAN_OUT_ROOT` environment variable.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::baselines::{gaussian_sigma, k_same, KSameConfig};
use crate::checkpoint::Checkpoint;
use crate::dataset::{
    generate_synthetic_corpus, load_corpus_vec, load_image, sample_landmarks, save_mask_png,
    save_png, write_synthetic_corpus, CorpusFormat, SynthCorpusConfig,
};
use crate::error::{Error, Result};
use crate::eval::{extract_features, fid, run_table, EvalConfig, MetricsReport, ObscureContext};
use crate::nn::{seeded_rng, uniform};
use crate::swap::swap_face;
use crate::train::{train, train_resume, TrainConfig};
use crate::types::{AttributeVector, ImageTensor, LandmarkVector, ObscurationMethod};

#[derive(Parser)]
#[command(
    name = "upgan",
    version,
    about = "Utility-preserving face obscuration: synthesis, swapping, baselines and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic face corpus.
    SynthCorpus(SynthCorpusArgs),
    /// Validate and summarize an annotated corpus directory.
    Ingest(IngestArgs),
    /// Train the generator/discriminator pair.
    Train(TrainArgs),
    /// Generate one face from attribute and landmark inputs.
    Generate(GenerateArgs),
    /// Apply an obscuration method to a corpus.
    Obscure(ObscureArgs),
    /// Swap generated faces onto the originals via gradient-domain blending.
    Swap(SwapArgs),
    /// Run the identification / FID evaluation grid.
    Eval(EvalArgs),
    /// Fréchet distance between two image directories.
    Fid(FidArgs),
    /// Render a stored evaluation report as a plain-text table.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthCorpusArgs {
    /// Number of records.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Number of distinct identities.
    #[arg(long, default_value_t = 10)]
    identities: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Skip writing PNGs (the manifest alone regenerates the corpus).
    #[arg(long, default_value_t = false)]
    no_images: bool,
}

#[derive(Args)]
struct IngestArgs {
    /// Corpus directory.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "utkface")]
    format: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML training config; flags below override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus path (directory or manifest).
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "synthetic-manifest")]
    format: String,
    #[arg(long)]
    out: PathBuf,
    /// Resume from this checkpoint instead of initializing fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scale: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Age in [0, 1].
    #[arg(long)]
    age: Option<f64>,
    /// Gender, 0 or 1.
    #[arg(long)]
    gender: Option<f64>,
    /// Skin tone in [0, 1].
    #[arg(long)]
    skin_tone: Option<f64>,
    /// 14 comma-separated normalized landmark coordinates.
    #[arg(long)]
    landmarks: Option<String>,
    /// Sample attributes/landmarks from this seed instead.
    #[arg(long)]
    probe_seed: Option<u64>,
}

#[derive(Args)]
struct ObscureArgs {
    /// gaussian | pixelate | ksame | upgan
    #[arg(long)]
    method: String,
    /// Kernel size, block size or k, depending on the method.
    #[arg(long)]
    param: Option<usize>,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "synthetic-manifest")]
    format: String,
    #[arg(long)]
    out: PathBuf,
    /// Required for the upgan method.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct SwapArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "synthetic-manifest")]
    format: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// TOML evaluation config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "synthetic-manifest")]
    format: String,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FidArgs {
    /// First image directory.
    #[arg(long)]
    a: PathBuf,
    /// Second image directory.
    #[arg(long)]
    b: PathBuf,
    /// Use this checkpoint's perceptual network for features; without it,
    /// 4x4 grayscale pixel features are used.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// report.json file or a directory containing one.
    #[arg(long = "in")]
    input: PathBuf,
}

#[derive(Serialize)]
struct RunManifest<C: Serialize> {
    command: String,
    version: String,
    seed: u64,
    config: C,
}

fn out_dir(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os("UPGAN_OUT_ROOT") {
        Some(root) => Path::new(&root).join(path),
        None => path.to_path_buf(),
    }
}

fn write_manifest<C: Serialize>(dir: &Path, command: &str, seed: u64, config: C) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = RunManifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config,
    };
    let path = dir.join("manifest.json");
    // the corpus manifest owns manifest.json in synth-corpus output dirs
    let path = if path.exists() || command == "synth-corpus" {
        dir.join("run_manifest.json")
    } else {
        path
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

fn parse_format(s: &str) -> Result<CorpusFormat> {
    s.parse()
}

/// Parses argv and runs the selected command, returning a process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthCorpus(args) => cmd_synth_corpus(args),
        Command::Ingest(args) => cmd_ingest(args),
        Command::Train(args) => cmd_train(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Obscure(args) => cmd_obscure(args),
        Command::Swap(args) => cmd_swap(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Fid(args) => cmd_fid(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn cmd_synth_corpus(args: SynthCorpusArgs) -> Result<()> {
    let out = out_dir(&args.out);
    let cfg = SynthCorpusConfig {
        n: args.n,
        identities: args.identities,
        seed: args.seed,
    };
    let records = generate_synthetic_corpus(&cfg)?;
    write_synthetic_corpus(&out, &cfg, &records, !args.no_images)?;
    write_manifest(&out, "synth-corpus", args.seed, &cfg)?;
    println!(
        "wrote {} records ({} identities) to {}",
        records.len(),
        args.identities,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct IngestLine {
    id: String,
    age: f64,
    gender: f64,
    skin_tone: f64,
    landmarks: Vec<f64>,
    identity: Option<String>,
    mask_pixels: usize,
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let out = out_dir(&args.out);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let format = parse_format(&args.format)?;
    let records = load_corpus_vec(&args.input, format)?;
    let masks_dir = out.join("masks");
    fs::create_dir_all(&masks_dir).map_err(|e| Error::io(&masks_dir, e))?;
    let records_path = out.join("records.jsonl");
    let mut lines = String::new();
    for r in &records {
        let mask_pixels = r
            .mask
            .as_ref()
            .map(|m| m.face_channel().sum() as usize)
            .unwrap_or(0);
        if let Some(mask) = &r.mask {
            save_mask_png(mask, &masks_dir.join(format!("{}.png", r.id)))?;
        }
        let line = IngestLine {
            id: r.id.clone(),
            age: r.attributes.age,
            gender: r.attributes.gender,
            skin_tone: r.attributes.skin_tone,
            landmarks: r.landmarks.flat().to_vec(),
            identity: r.identity.clone(),
            mask_pixels,
        };
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
    }
    fs::write(&records_path, lines).map_err(|e| Error::io(&records_path, e))?;
    write_manifest(
        &out,
        "ingest",
        0,
        serde_json::json!({
            "in": args.input.display().to_string(),
            "format": args.format,
            "records": records.len(),
        }),
    )?;
    println!("ingested {} records into {}", records.len(), out.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let out = out_dir(&args.out);
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            TrainConfig::from_toml(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(scale) = args.scale {
        cfg.scale = scale;
    }
    cfg.validate()?;
    let format = parse_format(&args.format)?;
    let corpus = load_corpus_vec(&args.corpus, format)?;
    write_manifest(&out, "train", cfg.seed, &cfg)?;
    let outcome = match &args.resume {
        Some(ckpt) => train_resume(ckpt, &corpus, &cfg, &out)?,
        None => train(&corpus, &cfg, &out)?,
    };
    let last = outcome.metrics.last();
    println!(
        "trained {} steps; final checkpoint {}",
        outcome.metrics.last().map(|m| m.step).unwrap_or(0),
        outcome.final_checkpoint.display()
    );
    if let Some(m) = last {
        println!(
            "final losses: total_g {:.4}, total_d {:.4}, recon {:.4}",
            m.losses.total_g, m.losses.total_d, m.losses.recon_l2
        );
    }
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let out = out_dir(&args.out);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let ck = Checkpoint::load(&args.checkpoint)?;
    let seed = args.probe_seed.unwrap_or(0);
    let (attrs, landmarks) = if let Some(probe_seed) = args.probe_seed {
        let mut rng = seeded_rng(probe_seed, &[0x6e]);
        let attrs = AttributeVector::new(
            uniform(&mut rng, 0.1, 0.8),
            if uniform(&mut rng, 0.0, 1.0) < 0.5 {
                0.0
            } else {
                1.0
            },
            (uniform(&mut rng, 0.0, 1.0) * 4.0).floor() / 4.0,
        )?;
        (attrs, sample_landmarks(&mut rng))
    } else {
        let attrs = AttributeVector::new(
            args.age
                .ok_or_else(|| Error::Argument("--age required without --probe-seed".into()))?,
            args.gender
                .ok_or_else(|| Error::Argument("--gender required without --probe-seed".into()))?,
            args.skin_tone.ok_or_else(|| {
                Error::Argument("--skin-tone required without --probe-seed".into())
            })?,
        )?;
        let lm_text = args
            .landmarks
            .as_ref()
            .ok_or_else(|| Error::Argument("--landmarks required without --probe-seed".into()))?;
        let values: Vec<f64> = lm_text
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Argument(format!("bad landmark value '{t}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        (attrs, LandmarkVector::from_flat(&values)?)
    };
    let (image, mask) = crate::train::generate(&attrs, &landmarks, &ck)?;
    save_png(&image, &out.join("image.png"))?;
    save_mask_png(&mask, &out.join("mask.png"))?;
    write_manifest(
        &out,
        "generate",
        seed,
        serde_json::json!({
            "checkpoint": args.checkpoint.display().to_string(),
            "attributes": attrs,
            "landmarks": landmarks.flat().to_vec(),
        }),
    )?;
    println!("wrote image.png and mask.png to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct ObscureSidecar {
    method: String,
    source_id: String,
    identity: Option<String>,
    kernel_size: Option<usize>,
    sigma: Option<f64>,
    block_size: Option<usize>,
    k: Option<usize>,
}

fn cmd_obscure(args: ObscureArgs) -> Result<()> {
    let out = out_dir(&args.out);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let spec = match (&args.method[..], args.param) {
        ("upgan", _) => "upgan".to_string(),
        (m, Some(p)) => format!("{m}:{p}"),
        (m, None) => m.to_string(),
    };
    let method = ObscurationMethod::parse(&spec)?;
    let format = parse_format(&args.format)?;
    let records = load_corpus_vec(&args.input, format)?;

    let ksame_outcome = match method {
        ObscurationMethod::KSame { k } => Some(k_same(&records, &KSameConfig { k })?),
        _ => None,
    };
    let checkpoint = match (&method, &args.checkpoint) {
        (ObscurationMethod::UpGan, Some(path)) => Some(Checkpoint::load(path)?),
        (ObscurationMethod::UpGan, None) => {
            return Err(Error::Argument("upgan method requires --checkpoint".into()))
        }
        _ => None,
    };
    let mut ksame_map = std::collections::HashMap::new();
    if let (ObscurationMethod::KSame { k }, Some(outcome)) = (&method, &ksame_outcome) {
        ksame_map.insert(*k, outcome);
    }
    let ctx = ObscureContext {
        ksame: ksame_map,
        checkpoint: checkpoint.as_ref(),
    };

    for idx in 0..records.len() {
        let result = crate::eval::obscure_record(&records, idx, &method, &ctx)?;
        let stem = &result.source_id;
        save_png(&result.image, &out.join(format!("{stem}.png")))?;
        let sidecar = ObscureSidecar {
            method: method.label(),
            source_id: result.source_id.clone(),
            identity: result.identity.clone(),
            kernel_size: match method {
                ObscurationMethod::Gaussian { kernel_size } => Some(kernel_size),
                _ => None,
            },
            sigma: match method {
                ObscurationMethod::Gaussian { kernel_size } => Some(gaussian_sigma(kernel_size)),
                _ => None,
            },
            block_size: match method {
                ObscurationMethod::Pixelate { block_size } => Some(block_size),
                _ => None,
            },
            k: match method {
                ObscurationMethod::KSame { k } => Some(k),
                _ => None,
            },
        };
        let meta_path = out.join(format!("{stem}.meta.json"));
        fs::write(&meta_path, serde_json::to_string_pretty(&sidecar)?)
            .map_err(|e| Error::io(&meta_path, e))?;
    }
    write_manifest(
        &out,
        "obscure",
        0,
        serde_json::json!({
            "method": method.label(),
            "in": args.input.display().to_string(),
            "records": records.len(),
        }),
    )?;
    println!(
        "obscured {} records with {} into {}",
        records.len(),
        method.label(),
        out.display()
    );
    Ok(())
}

fn cmd_swap(args: SwapArgs) -> Result<()> {
    let out = out_dir(&args.out);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let ck = Checkpoint::load(&args.checkpoint)?;
    let scale = ck.meta.gen_cfg.output_size();
    let format = parse_format(&args.format)?;
    let records = load_corpus_vec(&args.input, format)?;
    let mut swapped = 0usize;
    for record in &records {
        let at_scale = record.resized(scale)?;
        let (fake, mask) = crate::train::generate(&record.attributes, &record.landmarks, &ck)?;
        match swap_face(&at_scale, &fake, &mask) {
            Ok(result) => {
                save_png(&result, &out.join(format!("{}.png", record.id)))?;
                swapped += 1;
            }
            Err(e) => log::warn!("skipping {}: {e}", record.id),
        }
    }
    if swapped == 0 {
        return Err(Error::Swap("no record could be swapped".into()));
    }
    write_manifest(
        &out,
        "swap",
        ck.meta.seed,
        serde_json::json!({
            "checkpoint": args.checkpoint.display().to_string(),
            "in": args.input.display().to_string(),
            "swapped": swapped,
        }),
    )?;
    println!(
        "swapped {swapped}/{} records into {}",
        records.len(),
        out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let out = out_dir(&args.out);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            EvalConfig::from_toml(&text)?
        }
        None => EvalConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let format = parse_format(&args.format)?;
    let records = load_corpus_vec(&args.corpus, format)?;
    let checkpoint = match &args.checkpoint {
        Some(path) => Some(Checkpoint::load(path)?),
        None => None,
    };
    let methods = cfg.parsed_methods()?;
    if methods.contains(&ObscurationMethod::UpGan) && checkpoint.is_none() {
        return Err(Error::Argument(
            "method list includes upgan but no --checkpoint was given".into(),
        ));
    }
    write_manifest(&out, "eval", cfg.seed, &cfg)?;
    let report = run_table(
        &records,
        &methods,
        &cfg,
        checkpoint.as_ref(),
        &args.corpus.display().to_string(),
    )?;
    crate::eval::write_report(&report, &out.join("report.json"), &out.join("report.txt"))?;
    print!("{}", report.to_text_table());
    Ok(())
}

fn load_dir_images(dir: &Path) -> Result<Vec<ImageTensor>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|s| s.to_str()),
                Some("png") | Some("jpg") | Some("jpeg")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Corpus(format!("no images in {}", dir.display())));
    }
    paths.iter().map(|p| load_image(p)).collect()
}

/// 4x4 grayscale block means: a 16-dim fallback feature when no perceptual
/// network is available.
fn pixel_features(images: &[ImageTensor]) -> Result<ndarray::Array2<f64>> {
    let mut out = ndarray::Array2::zeros((images.len(), 16));
    for (n, img) in images.iter().enumerate() {
        let small = img.resized(4)?;
        for i in 0..4 {
            for j in 0..4 {
                let gray =
                    (small.data()[[i, j, 0]] + small.data()[[i, j, 1]] + small.data()[[i, j, 2]])
                        / 3.0;
                out[[n, 4 * i + j]] = gray;
            }
        }
    }
    Ok(out)
}

fn cmd_fid(args: FidArgs) -> Result<()> {
    let images_a = load_dir_images(&args.a)?;
    let images_b = load_dir_images(&args.b)?;
    let (fa, fb) = match &args.checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let perc = ck.perceptual.as_ref().ok_or_else(|| {
                Error::Checkpoint("checkpoint has no perceptual network for features".into())
            })?;
            let ra: Vec<&ImageTensor> = images_a.iter().collect();
            let rb: Vec<&ImageTensor> = images_b.iter().collect();
            (
                extract_features(&ra, &perc.net)?,
                extract_features(&rb, &perc.net)?,
            )
        }
        None => (pixel_features(&images_a)?, pixel_features(&images_b)?),
    };
    let value = fid(&fa, &fb)?;
    println!("{value}");
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let path = if args.input.is_dir() {
        args.input.join("report.json")
    } else {
        args.input.clone()
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let report: MetricsReport = serde_json::from_str(&text)?;
    print!("{}", report.to_text_table());
    Ok(())
}
