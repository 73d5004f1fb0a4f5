//! Versioned binary checkpoint container.
//!
//! Layout: an 8-byte magic, a u32 format version, a JSON metadata document
//! (configs, step counter, seed, probe vectors, optimizer hyperparameters)
//! and a sequence of named f64 parameter blobs. Loading validates every blob
//! length against the configs echoed in the metadata; a mismatch is an
//! explicit checkpoint error, never a silent reshape.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    DiscriminatorConfig, DiscriminatorParams, GeneratorConfig, GeneratorParams, PerceptualConfig,
    PerceptualNet, PerceptualNetConfig,
};
use crate::nn::Adam;

const MAGIC: &[u8; 8] = b"UPGANCK1";
const FORMAT_VERSION: u32 = 1;

/// Optimizer hyperparameters and step count; moment vectors live in blobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamMeta {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub t: u64,
    pub blocks: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub step: u64,
    pub seed: u64,
    pub gen_cfg: GeneratorConfig,
    pub disc_cfg: DiscriminatorConfig,
    pub perceptual_cfg: Option<PerceptualNetConfig>,
    pub perceptual_layer_set: Vec<usize>,
    /// Frozen sample-grid probe inputs, one 17-dim row each.
    pub probes: Vec<Vec<f64>>,
    pub opt_g: Option<AdamMeta>,
    pub opt_d: Option<AdamMeta>,
    /// Resolved training config, echoed verbatim for provenance.
    pub train_echo: Option<serde_json::Value>,
}

/// Everything needed to resume training or run inference.
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub gen: GeneratorParams,
    pub disc: DiscriminatorParams,
    pub perceptual: Option<PerceptualConfig>,
    pub opt_g: Option<Adam>,
    pub opt_d: Option<Adam>,
}

fn write_blob<W: Write>(w: &mut W, name: &str, data: &[f64]) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(name.len() as u64)?;
    w.write_all(name.as_bytes())?;
    w.write_u64::<LittleEndian>(data.len() as u64)?;
    for v in data {
        w.write_f64::<LittleEndian>(*v)?;
    }
    Ok(())
}

fn read_blob<R: Read>(r: &mut R) -> std::io::Result<(String, Vec<f64>)> {
    let name_len = r.read_u64::<LittleEndian>()? as usize;
    let mut name_buf = vec![0u8; name_len];
    r.read_exact(&mut name_buf)?;
    let name = String::from_utf8_lossy(&name_buf).into_owned();
    let len = r.read_u64::<LittleEndian>()? as usize;
    let mut data = vec![0.0f64; len];
    r.read_f64_into::<LittleEndian>(&mut data)?;
    Ok((name, data))
}

fn fill_blocks(
    what: &str,
    mut targets: Vec<&mut [f64]>,
    blobs: &mut std::collections::HashMap<String, Vec<f64>>,
) -> Result<()> {
    for (i, t) in targets.iter_mut().enumerate() {
        let key = format!("{what}.{i}");
        let blob = blobs
            .remove(&key)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter blob {key}")))?;
        if blob.len() != t.len() {
            return Err(Error::Checkpoint(format!(
                "blob {key} has {} values, config expects {}",
                blob.len(),
                t.len()
            )));
        }
        t.copy_from_slice(&blob);
    }
    Ok(())
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e: std::io::Error| Error::io(path, e);

        w.write_all(MAGIC).map_err(io_err)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)
            .map_err(io_err)?;
        let meta_json = serde_json::to_vec(&self.meta)?;
        w.write_u64::<LittleEndian>(meta_json.len() as u64)
            .map_err(io_err)?;
        w.write_all(&meta_json).map_err(io_err)?;

        let mut blobs: Vec<(String, Vec<f64>)> = Vec::new();
        for (i, b) in self.gen.blocks().iter().enumerate() {
            blobs.push((format!("gen.{i}"), b.to_vec()));
        }
        for (i, b) in self.disc.blocks().iter().enumerate() {
            blobs.push((format!("disc.{i}"), b.to_vec()));
        }
        if let Some(perc) = &self.perceptual {
            for (i, b) in perc.net.blocks().iter().enumerate() {
                blobs.push((format!("perc.{i}"), b.to_vec()));
            }
        }
        for (tag, opt) in [("optg", &self.opt_g), ("optd", &self.opt_d)] {
            if let Some(adam) = opt {
                for (i, m) in adam.m.iter().enumerate() {
                    blobs.push((format!("{tag}.m.{i}"), m.clone()));
                }
                for (i, v) in adam.v.iter().enumerate() {
                    blobs.push((format!("{tag}.v.{i}"), v.clone()));
                }
            }
        }
        w.write_u64::<LittleEndian>(blobs.len() as u64)
            .map_err(io_err)?;
        for (name, data) in &blobs {
            write_blob(&mut w, name, data).map_err(io_err)?;
        }
        w.flush().map_err(io_err)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io_err = |e: std::io::Error| Error::io(path, e);

        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{} is not a checkpoint file",
                path.display()
            )));
        }
        let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let meta_len = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
        let mut meta_buf = vec![0u8; meta_len];
        r.read_exact(&mut meta_buf).map_err(io_err)?;
        let meta: CheckpointMeta = serde_json::from_slice(&meta_buf)?;

        let blob_count = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
        let mut blobs = std::collections::HashMap::with_capacity(blob_count);
        for _ in 0..blob_count {
            let (name, data) = read_blob(&mut r).map_err(io_err)?;
            blobs.insert(name, data);
        }

        let mut gen = GeneratorParams::init(meta.gen_cfg.clone(), 0)?;
        fill_blocks("gen", gen.blocks_mut(), &mut blobs)?;
        let mut disc = DiscriminatorParams::init(meta.disc_cfg.clone(), 0)?;
        fill_blocks("disc", disc.blocks_mut(), &mut blobs)?;
        let perceptual = match &meta.perceptual_cfg {
            Some(cfg) => {
                let mut net = PerceptualNet::init(cfg.clone(), 0)?;
                fill_blocks("perc", net.blocks_mut(), &mut blobs)?;
                Some(PerceptualConfig::new(
                    net,
                    meta.perceptual_layer_set.clone(),
                )?)
            }
            None => None,
        };

        let load_opt = |tag: &str,
                        meta_opt: &Option<AdamMeta>,
                        blobs: &mut std::collections::HashMap<String, Vec<f64>>|
         -> Result<Option<Adam>> {
            match meta_opt {
                None => Ok(None),
                Some(am) => {
                    let mut adam = Adam::new(am.lr, am.beta1, am.beta2);
                    adam.t = am.t;
                    for i in 0..am.blocks {
                        let m = blobs.remove(&format!("{tag}.m.{i}")).ok_or_else(|| {
                            Error::Checkpoint(format!("missing optimizer blob {tag}.m.{i}"))
                        })?;
                        let v = blobs.remove(&format!("{tag}.v.{i}")).ok_or_else(|| {
                            Error::Checkpoint(format!("missing optimizer blob {tag}.v.{i}"))
                        })?;
                        adam.m.push(m);
                        adam.v.push(v);
                    }
                    Ok(Some(adam))
                }
            }
        };
        let opt_g = load_opt("optg", &meta.opt_g, &mut blobs)?;
        let opt_d = load_opt("optd", &meta.opt_d, &mut blobs)?;

        Ok(Checkpoint {
            meta,
            gen,
            disc,
            perceptual,
            opt_g,
            opt_d,
        })
    }

    /// Validates that the checkpoint was produced by the given model configs.
    pub fn ensure_matches(
        &self,
        gen_cfg: &GeneratorConfig,
        disc_cfg: &DiscriminatorConfig,
    ) -> Result<()> {
        if &self.meta.gen_cfg != gen_cfg {
            return Err(Error::Checkpoint(format!(
                "generator config mismatch: checkpoint has {:?}, expected {:?}",
                self.meta.gen_cfg, gen_cfg
            )));
        }
        if &self.meta.disc_cfg != disc_cfg {
            return Err(Error::Checkpoint(format!(
                "discriminator config mismatch: checkpoint has {:?}, expected {:?}",
                self.meta.disc_cfg, disc_cfg
            )));
        }
        Ok(())
    }
}
