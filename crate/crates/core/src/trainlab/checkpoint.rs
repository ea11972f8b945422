//! `HPCK1` checkpoints: an 8-byte magic, a little-endian u64 header length,
//! a UTF-8 header of `key=value` lines (generator and discriminator
//! configuration, seeds) followed by one `param` manifest line per tensor,
//! then the raw little-endian tensor data.
//!
//! ```text
//! param <name> <dtype> <d0xd1x...> <byte offset> <trainable 0|1>
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use hpalf_tensor::{DType, ParamStore, Scalar, Tensor};

use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig};

pub const MAGIC: &[u8; 8] = b"HPCK1\0\0\0";

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// Everything needed to rebuild a trained pair.
pub struct Checkpoint<T> {
    pub generator: Generator<T>,
    pub discriminator: Option<Discriminator<T>>,
    /// Seed of the frozen perceptual feature extractor.
    pub phi_seed: u64,
    /// Extra `key=value` metadata (epoch, validation PSNR, ...).
    pub meta: BTreeMap<String, String>,
}

fn generator_lines(c: &GeneratorConfig, seed: u64) -> Vec<String> {
    vec![
        format!("gen.seed={seed}"),
        format!("gen.width_multiplier={}", c.width_multiplier),
        format!("gen.n_slices={}", c.n_slices),
        format!("gen.lstm_channels={}", c.lstm_channels),
        format!("gen.kernel={}", c.kernel),
        format!("gen.image_size={}", c.image_size),
        format!("gen.context={}", c.context),
    ]
}

fn disc_lines(c: &DiscriminatorConfig, seed: u64) -> Vec<String> {
    vec![
        format!("disc.seed={seed}"),
        format!("disc.outcomes={}", c.outcomes),
        format!("disc.width_multiplier={}", c.width_multiplier),
        format!("disc.image_size={}", c.image_size),
    ]
}

fn push_params<T: Scalar>(store: &ParamStore<T>, lines: &mut Vec<String>, blob: &mut Vec<u8>) {
    for (_, p) in store.iter() {
        let shape: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
        lines.push(format!(
            "param {} {} {} {} {}",
            p.name,
            T::DTYPE.name(),
            shape.join("x"),
            blob.len(),
            u8::from(p.requires_grad)
        ));
        for v in p.value.data() {
            match T::DTYPE {
                DType::F32 => blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                DType::F64 => blob.extend_from_slice(&v.as_f64().to_le_bytes()),
            }
        }
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        let mut lines = vec![format!("dtype={}", T::DTYPE.name()), format!("phi.seed={}", self.phi_seed)];
        for (k, v) in &self.meta {
            lines.push(format!("meta.{k}={v}"));
        }
        lines.extend(generator_lines(&self.generator.cfg, self.generator.params.seed()));
        if let Some(d) = &self.discriminator {
            lines.extend(disc_lines(&d.cfg, d.params.seed()));
        }
        let mut blob = Vec::new();
        push_params(&self.generator.params, &mut lines, &mut blob);
        if let Some(d) = &self.discriminator {
            push_params(&d.params, &mut lines, &mut blob);
        }
        let header = lines.join("\n") + "\n";
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(header.as_bytes())?;
        w.write_all(&blob)?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(format_err("not an HPCK1 checkpoint"));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let header = String::from_utf8(header).map_err(|_| format_err("header is not UTF-8"))?;
        let mut blob = Vec::new();
        r.read_to_end(&mut blob)?;

        let mut kv = BTreeMap::new();
        let mut params = Vec::new();
        for line in header.lines() {
            if let Some(rest) = line.strip_prefix("param ") {
                params.push(rest.split_whitespace().collect::<Vec<_>>());
            } else if let Some((k, v)) = line.split_once('=') {
                kv.insert(k.to_string(), v.to_string());
            } else if !line.is_empty() {
                return Err(format_err(format!("bad header line {line:?}")));
            }
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| format_err(format!("missing key {k}")));
        fn parse<V: std::str::FromStr>(k: &str, v: &str) -> Result<V> {
            v.parse().map_err(|_| format_err(format!("bad value for {k}: {v:?}")))
        }
        let gcfg = GeneratorConfig {
            width_multiplier: parse("gen.width_multiplier", get("gen.width_multiplier")?)?,
            n_slices: parse("gen.n_slices", get("gen.n_slices")?)?,
            lstm_channels: parse("gen.lstm_channels", get("gen.lstm_channels")?)?,
            kernel: parse("gen.kernel", get("gen.kernel")?)?,
            image_size: parse("gen.image_size", get("gen.image_size")?)?,
            context: get("gen.context")?.parse()?,
        };
        let mut generator = Generator::new(gcfg, parse("gen.seed", get("gen.seed")?)?)?;
        let mut discriminator = match kv.get("disc.seed") {
            Some(seed) => {
                let dcfg = DiscriminatorConfig {
                    outcomes: parse("disc.outcomes", get("disc.outcomes")?)?,
                    width_multiplier: parse("disc.width_multiplier", get("disc.width_multiplier")?)?,
                    image_size: parse("disc.image_size", get("disc.image_size")?)?,
                };
                Some(Discriminator::new(dcfg, parse("disc.seed", seed)?)?)
            }
            None => None,
        };

        let mut seen = 0;
        for fields in &params {
            let [name, dtype, shape, offset, trainable] = fields[..] else {
                return Err(format_err(format!("bad manifest entry {fields:?}")));
            };
            let dtype = DType::parse(dtype).ok_or_else(|| format_err(format!("unknown dtype {dtype}")))?;
            let shape: Vec<usize> = shape.split('x').map(|d| parse("shape", d)).collect::<Result<_>>()?;
            let offset: usize = parse("offset", offset)?;
            let n: usize = shape.iter().product();
            let bytes = blob
                .get(offset..offset + n * dtype.size_of())
                .ok_or_else(|| format_err(format!("{name}: data past end of file")))?;
            let values: Vec<T> = match dtype {
                DType::F32 => bytes
                    .chunks_exact(4)
                    .map(|c| T::of_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                    .collect(),
                DType::F64 => bytes
                    .chunks_exact(8)
                    .map(|c| T::of_f64(f64::from_le_bytes(c.try_into().unwrap())))
                    .collect(),
            };
            let store = if name.starts_with("disc.") {
                &mut discriminator
                    .as_mut()
                    .ok_or_else(|| format_err(format!("{name} without a discriminator")))?
                    .params
            } else {
                &mut generator.params
            };
            let id = store.id(name)?;
            let p = store.get_mut(id);
            if p.value.shape() != shape.as_slice() {
                return Err(format_err(format!("{name}: shape {shape:?} vs {:?}", p.value.shape())));
            }
            p.value = Tensor::from_vec(&shape, values)?;
            p.requires_grad = trainable == "1";
            seen += 1;
        }
        let expected = generator.params.len() + discriminator.as_ref().map_or(0, |d| d.params.len());
        if seen != expected {
            return Err(format_err(format!("{seen} tensors in manifest, model has {expected}")));
        }
        let meta = kv
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v.clone())))
            .collect();
        Ok(Self {
            generator,
            discriminator,
            phi_seed: parse("phi.seed", get("phi.seed")?)?,
            meta,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read(&mut f)
    }
}
