use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{config, Result};
use crate::mrisim::{degrade, gen_phantom_volume, prepare_sequences, Image, Mask, SliceVolume, Window};

/// Volume indices of each split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// 70/20/10 by volume, shuffled under `seed`.
pub fn split_dataset(n_volumes: usize, seed: u64) -> Result<Split> {
    if n_volumes < 10 {
        return Err(config(format!("need at least 10 volumes to split, got {n_volumes}")));
    }
    let mut idx: Vec<usize> = (0..n_volumes).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = n_volumes / 5;
    let n_test = (n_volumes / 10).max(1);
    let n_train = n_volumes - n_val - n_test;
    Ok(Split {
        train: idx[..n_train].to_vec(),
        val: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    })
}

/// Desk-scale phantom collection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomSet {
    pub volumes: usize,
    pub depth: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for PhantomSet {
    fn default() -> Self {
        Self {
            volumes: 20,
            depth: 16,
            size: 64,
            seed: 0,
        }
    }
}

impl PhantomSet {
    pub fn generate(&self) -> Result<Vec<SliceVolume>> {
        (0..self.volumes)
            .map(|i| {
                // spread complexity over the set so splits see a mix
                let complexity = 0.2 + 0.6 * (i % 4) as f64 / 3.0;
                gen_phantom_volume(self.depth, self.size, self.size, complexity, self.seed.wrapping_add(i as u64))
            })
            .collect()
    }
}

/// A window of one volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRef {
    pub volume: usize,
    pub window: Window,
}

pub fn windows_of(volumes: &[SliceVolume], ids: &[usize], n_slices: usize, void_threshold: f64) -> Result<Vec<WindowRef>> {
    let mut out = Vec::new();
    for &v in ids {
        for window in prepare_sequences(&volumes[v], n_slices, void_threshold)? {
            out.push(WindowRef { volume: v, window });
        }
    }
    Ok(out)
}

/// Reproducible seed mixing.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Ground-truth and zero-filled slices of a set of windows, flattened in
/// window-major order.
pub struct Batch {
    pub truth: Vec<Image>,
    pub zero_filled: Vec<Image>,
}

/// Degrades every slice; slice noise is seeded by `(seed, volume, z)` so
/// the same slice always gets the same noise within a run.
pub fn degrade_windows(
    volumes: &[SliceVolume],
    windows: &[WindowRef],
    mask: &Mask,
    noise: f64,
    seed: u64,
    threads: usize,
) -> Result<Batch> {
    let jobs: Vec<(usize, usize)> = windows
        .iter()
        .flat_map(|w| (w.window.start..w.window.start + w.window.len).map(move |z| (w.volume, z)))
        .collect();
    let run = |&(v, z): &(usize, usize)| -> Result<(Image, Image)> {
        let x = volumes[v].slice(z);
        let (_, zf) = degrade(&x, mask, noise, slice_seed(seed, v, z))?;
        Ok((x, zf))
    };
    let pairs: Vec<(Image, Image)> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| config(e.to_string()))?;
        pool.install(|| jobs.par_iter().map(run).collect::<Result<_>>())?
    } else {
        jobs.iter().map(run).collect::<Result<_>>()?
    };
    let (truth, zero_filled) = pairs.into_iter().unzip();
    Ok(Batch { truth, zero_filled })
}

/// Noise seed of slice `z` of volume `v` under a batch seed.
pub fn slice_seed(seed: u64, v: usize, z: usize) -> u64 {
    mix_seed(seed, (v as u64) << 32 | z as u64)
}

/// `HPALF_THREADS`, default 1.
pub fn thread_budget() -> usize {
    std::env::var("HPALF_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}
