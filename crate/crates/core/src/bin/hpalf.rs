use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hpalf::generator::ContextBlock;
use hpalf::metrics::{evaluate_volumes, write_report_csv};
use hpalf::mrisim::io::{load_volume, mask_image, save_pgm, save_volume};
use hpalf::mrisim::{degrade, make_mask, MaskKind, SliceVolume};
use hpalf::objectives::{Convention, FeatureExtractor};
use hpalf::theory;
use hpalf::trainlab::{
    ablation_grid, mix_seed, reconstruct_tv, reconstruct_volume, run_ablation, train_hpalf, AblationSwitches,
    Checkpoint, PhantomSet, TrainConfig, TvConfig,
};
use hpalf::{Error, Result};

#[derive(Parser)]
#[command(name = "hpalf", version, about = "Adversarial CS-MRI reconstruction lab on synthetic phantoms")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Acq {
    /// Undersampling pattern: g1d, g2d or p2d.
    #[arg(long, default_value = "g1d")]
    mask: MaskKind,
    /// Sampled fraction of k-space.
    #[arg(long, default_value_t = 0.3)]
    fraction: f64,
    /// k-space noise, percent of the peak spectrum magnitude.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct Model {
    /// Slices per window (3..=7).
    #[arg(long, default_value_t = 5)]
    slices: usize,
    /// Perspective outcomes K.
    #[arg(long, default_value_t = 10)]
    outcomes: usize,
    #[arg(long, default_value = "realness")]
    convention: Convention,
    #[arg(long = "width-mult", default_value_t = 0.125)]
    width_mult: f64,
    #[arg(long, default_value_t = 8)]
    lstm_channels: usize,
}

#[derive(Args, Clone)]
struct Schedule {
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 3e-4)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 50)]
    patience: usize,
    #[arg(long, default_value_t = 15.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
}

#[derive(Args, Clone)]
struct Data {
    /// Directory of `.hpvol` volumes; a phantom set is generated if absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    volumes: usize,
    #[arg(long, default_value_t = 16)]
    depth: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Hpalf,
    ZeroFill,
    Tv,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a phantom volume collection.
    Phantom {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        volumes: usize,
        #[arg(long, default_value_t = 16)]
        depth: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write an undersampling mask as PGM.
    Mask {
        #[command(flatten)]
        acq: Acq,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Degrade a volume; writes the zero-filled volume and a PGM of one slice.
    Degrade {
        #[command(flatten)]
        acq: Acq,
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        slice: Option<usize>,
    },
    /// Train the adversarial reconstructor.
    Train {
        #[command(flatten)]
        acq: Acq,
        #[command(flatten)]
        model: Model,
        #[command(flatten)]
        sched: Schedule,
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        no_mpd: bool,
        #[arg(long)]
        no_glc: bool,
        /// Context block: biconvlstm, 2dcnn, 3dcnn or none.
        #[arg(long, default_value = "biconvlstm")]
        cal: ContextBlock,
        #[arg(long)]
        tal: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a volume with a trained model or a baseline.
    Reconstruct {
        #[command(flatten)]
        acq: Acq,
        #[arg(long, value_enum, default_value = "hpalf")]
        method: Method,
        #[arg(long)]
        volume: PathBuf,
        #[arg(long, required_if_eq("method", "hpalf"))]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 20.0)]
        tv_lambda: f64,
        #[arg(long, default_value_t = 300)]
        tv_iterations: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a reconstruction against a reference volume.
    Evaluate {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        recon: PathBuf,
        /// Seed of the frozen feature extractor used by FFD.
        #[arg(long, default_value_t = 0)]
        phi_seed: u64,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an ablation grid: the component study times slice and outcome counts.
    Ablate {
        #[command(flatten)]
        acq: Acq,
        #[command(flatten)]
        model: Model,
        #[command(flatten)]
        sched: Schedule,
        #[command(flatten)]
        data: Data,
        /// Slice counts to sweep; defaults to `--slices`.
        #[arg(long, value_delimiter = ',')]
        slice_grid: Vec<usize>,
        /// Outcome counts to sweep; defaults to `--outcomes`.
        #[arg(long, value_delimiter = ',')]
        outcome_grid: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the optimal-discriminator and generator-criterion results numerically.
    VerifyTheory {
        #[arg(long, default_value_t = 100)]
        worlds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Grid resolution of the generator-criterion sweep.
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn train_config(acq: &Acq, model: &Model, sched: &Schedule, size: usize) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        batch_size: sched.batch,
        lr: sched.lr,
        early_stop_patience: sched.patience,
        weights: hpalf::objectives::LossWeights {
            alpha: sched.alpha,
            beta: sched.beta,
            ..d.weights
        },
        mask: acq.mask,
        fraction: acq.fraction,
        noise: acq.noise / 100.0,
        n_slices: model.slices,
        outcomes: model.outcomes,
        width_multiplier: model.width_mult,
        lstm_channels: model.lstm_channels,
        image_size: size,
        convention: model.convention,
        seed: acq.seed,
        max_epochs: sched.epochs,
        max_steps: sched.steps,
        ..d
    }
}

fn volume_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "hpvol"))
        .collect();
    paths.sort();
    Ok(paths)
}

fn load_data(d: &Data, seed: u64) -> Result<Vec<SliceVolume>> {
    match &d.data {
        Some(dir) => volume_paths(dir)?.iter().map(load_volume).collect(),
        None => PhantomSet {
            volumes: d.volumes,
            depth: d.depth,
            size: d.size,
            seed,
        }
        .generate(),
    }
}

fn image_size(vols: &[SliceVolume]) -> Result<usize> {
    let first = vols.first().ok_or_else(|| Error::Config("no volumes".into()))?;
    Ok(first.height)
}

fn write_out(out: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match out {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            f(&mut w)?;
            w.flush()?;
        }
        None => f(&mut io::stdout().lock())?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Phantom {
            out,
            volumes,
            depth,
            size,
            seed,
        } => {
            std::fs::create_dir_all(&out)?;
            let set = PhantomSet { volumes, depth, size, seed }.generate()?;
            for (i, v) in set.iter().enumerate() {
                save_volume(out.join(format!("vol{i:03}.hpvol")), v)?;
            }
            println!("wrote {} volumes to {}", set.len(), out.display());
        }
        Cmd::Mask { acq, size, out } => {
            let m = make_mask(spec(&acq), size, size)?;
            save_pgm(&out, &mask_image(&m), 0.0, 1.0)?;
            println!("{} of {} bins sampled ({:.4})", m.count(), m.bits.len(), m.fraction());
        }
        Cmd::Degrade {
            acq,
            volume,
            out,
            slice,
        } => {
            let v = load_volume(&volume)?;
            let m = make_mask(spec(&acq), v.height, v.width)?;
            let mut zf = Vec::with_capacity(v.voxels.len());
            for z in 0..v.depth {
                let (_, img) = degrade(&v.slice(z), &m, acq.noise / 100.0, mix_seed(acq.seed, z as u64))?;
                zf.extend(img.data);
            }
            let zf = SliceVolume::from_voxels(v.depth, v.height, v.width, zf)?;
            save_volume(&out, &zf)?;
            let z = slice.unwrap_or(v.depth / 2).min(v.depth - 1);
            save_pgm(out.with_extension("pgm"), &zf.slice(z), -1.0, 1.0)?;
        }
        Cmd::Train {
            acq,
            model,
            sched,
            data,
            no_mpd,
            no_glc,
            cal,
            tal,
            out,
        } => {
            let vols = load_data(&data, acq.seed)?;
            let cfg = train_config(&acq, &model, &sched, image_size(&vols)?);
            let sw = AblationSwitches {
                mpd: !no_mpd,
                glc: !no_glc,
                cal,
                tal,
            };
            let o = train_hpalf(&cfg, sw, &vols, Some(&out))?;
            let r = &o.report;
            println!(
                "best epoch {}: val PSNR {:.3} dB, SSIM {:.4} (zero-fill {:.3} dB, {:.4}); {} steps{}",
                r.best_epoch,
                r.best_val_psnr,
                r.best_val_ssim,
                r.zero_fill_val_psnr,
                r.zero_fill_val_ssim,
                r.steps.len(),
                if r.stopped_early { ", stopped early" } else { "" }
            );
        }
        Cmd::Reconstruct {
            acq,
            method,
            volume,
            checkpoint,
            tv_lambda,
            tv_iterations,
            out,
        } => {
            let v = load_volume(&volume)?;
            let m = make_mask(spec(&acq), v.height, v.width)?;
            let noise = acq.noise / 100.0;
            let rec = match method {
                Method::Hpalf => {
                    let path = checkpoint.ok_or_else(|| Error::Config("--checkpoint is required".into()))?;
                    let mut ck = Checkpoint::<f32>::load(path)?;
                    reconstruct_volume(&mut ck.generator, &v, &m, noise, acq.seed, 4)?.1
                }
                Method::ZeroFill | Method::Tv => {
                    let tv = TvConfig {
                        lambda_fidelity: tv_lambda,
                        iterations: tv_iterations,
                        ..TvConfig::default()
                    };
                    let mut vox = Vec::with_capacity(v.voxels.len());
                    for z in 0..v.depth {
                        let (s, zf) = degrade(&v.slice(z), &m, noise, mix_seed(acq.seed, z as u64))?;
                        let img = match method {
                            Method::Tv => reconstruct_tv(&s, &tv)?.image,
                            _ => zf,
                        };
                        vox.extend(img.data);
                    }
                    SliceVolume::from_voxels(v.depth, v.height, v.width, vox)?
                }
            };
            save_volume(&out, &rec)?;
            save_pgm(out.with_extension("pgm"), &rec.slice(v.depth / 2), -1.0, 1.0)?;
        }
        Cmd::Evaluate {
            reference,
            recon,
            phi_seed,
            out,
        } => {
            let phi = FeatureExtractor::<f64>::new(phi_seed)?;
            let r = evaluate_volumes(&load_volume(reference)?, &load_volume(recon)?, &phi)?;
            write_out(out.as_deref(), |w| write_report_csv(w, &r))?;
        }
        Cmd::Ablate {
            acq,
            model,
            sched,
            data,
            slice_grid,
            outcome_grid,
            out,
        } => {
            let vols = load_data(&data, acq.seed)?;
            let cfg = train_config(&acq, &model, &sched, image_size(&vols)?);
            let slices = if slice_grid.is_empty() { vec![cfg.n_slices] } else { slice_grid };
            let outcomes = if outcome_grid.is_empty() { vec![cfg.outcomes] } else { outcome_grid };
            let grid = ablation_grid(&AblationSwitches::component_grid(), &slices, &outcomes);
            std::fs::create_dir_all(&out)?;
            let rows = run_ablation(&grid, &cfg, &vols, Some(&out))?;
            let failed = rows.iter().filter(|r| r.result.is_err()).count();
            println!("{} cells, {failed} failed; see {}", rows.len(), out.join("ablation.csv").display());
        }
        Cmd::VerifyTheory {
            worlds,
            seed,
            steps,
            out,
        } => {
            let rows = theory::verify_random_worlds(worlds, seed, steps)?;
            write_out(out.as_deref(), |w| theory::write_csv(w, &rows))?;
            let failed = rows.iter().filter(|r| r.pass == Some(false)).count();
            eprintln!("{} rows, {failed} failed", rows.len());
            if failed > 0 {
                return Err(Error::Config(format!("{failed} theory checks failed")));
            }
        }
    }
    Ok(())
}

fn spec(acq: &Acq) -> hpalf::mrisim::MaskSpec {
    hpalf::mrisim::MaskSpec {
        kind: acq.mask,
        fraction: acq.fraction,
        seed: acq.seed,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
