use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use hpalf_tensor::{BnMode, ParamStore, Scalar, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{grads_finite, step_lr, Adam};
use super::checkpoint::Checkpoint;
use super::config::{AblationSwitches, TrainConfig};
use super::data::{degrade_windows, mix_seed, slice_seed, split_dataset, thread_budget, windows_of, Split, WindowRef};
use super::tv::{reconstruct_tv, TvConfig};
use crate::discriminator::Discriminator;
use crate::error::{config, Error, Result};
use crate::generator::Generator;
use crate::metrics::{psnr, ssim, RANGE_NOTE};
use crate::mrisim::{degrade, make_mask, Image, Mask, SliceVolume};
use crate::objectives::{
    discriminator_loss, fmse_loss, generator_adversarial_loss, loss_total, perceptual_loss, AdversarialTerms, Anchors,
    FeatureExtractor, Judgement, DEFAULT_SHAPE,
};

/// One row of the history CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub val_psnr: f64,
    pub val_ssim: f64,
    pub lr: f64,
}

/// Loss components of one step; switched-off terms are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub batch_seed: u64,
    pub d_total: f64,
    pub d_scalar: f64,
    pub d_kl: Option<f64>,
    pub d_pixel: Option<f64>,
    pub g_total: f64,
    pub g_fmse: f64,
    pub g_vgg: f64,
    pub g_adv: f64,
    pub g_kl: Option<f64>,
    pub g_pixel: Option<f64>,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub steps: Vec<StepLog>,
    pub best_epoch: usize,
    pub best_val_psnr: f64,
    pub best_val_ssim: f64,
    pub zero_fill_val_psnr: f64,
    pub zero_fill_val_ssim: f64,
    pub stopped_early: bool,
    pub split: Split,
}

pub struct TrainOutcome {
    /// The pair at the best validation PSNR.
    pub checkpoint: Checkpoint<f32>,
    pub report: TrainReport,
}

/// Reconstructions of the centre slice of every window, in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub truth: Vec<Image>,
    pub zero_filled: Vec<Image>,
    pub recon: Vec<Image>,
    pub psnr: f64,
    pub ssim: f64,
    pub zero_fill_psnr: f64,
    pub zero_fill_ssim: f64,
}

pub(crate) fn stack<T: Scalar>(images: &[Image]) -> Result<Tensor<T>> {
    let (h, w) = (images[0].height, images[0].width);
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        images[0].same_shape(img)?;
        data.extend(img.data.iter().map(|&v| T::of_f64(v)));
    }
    Ok(Tensor::from_vec(&[images.len(), 1, h, w], data)?)
}

pub(crate) fn unstack<T: Scalar>(t: &Tensor<T>) -> Result<Vec<Image>> {
    let s = t.shape();
    let (h, w) = (s[2], s[3]);
    t.data()
        .chunks(h * w)
        .map(|c| Image::new(h, w, c.iter().map(|v| v.as_f64()).collect()))
        .collect()
}

fn mean_metric(a: &[Image], b: &[Image], f: fn(&Image, &Image) -> Result<f64>) -> Result<f64> {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += f(&x.to_unit_range(), &y.to_unit_range())?;
    }
    Ok(s / a.len() as f64)
}

fn psnr1(x: &Image, y: &Image) -> Result<f64> {
    psnr(x, y, 1.0)
}

/// Runs the generator in eval mode over `windows` and scores the centre
/// slices against ground truth.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_generator(
    g: &mut Generator<f32>,
    volumes: &[SliceVolume],
    windows: &[WindowRef],
    mask: &Mask,
    noise: f64,
    seed: u64,
    chunk: usize,
    threads: usize,
) -> Result<Evaluation> {
    if windows.is_empty() {
        return Err(config("no windows to evaluate"));
    }
    let n = g.cfg.n_slices;
    let mut out = Evaluation {
        truth: vec![],
        zero_filled: vec![],
        recon: vec![],
        psnr: 0.0,
        ssim: 0.0,
        zero_fill_psnr: 0.0,
        zero_fill_ssim: 0.0,
    };
    for ws in windows.chunks(chunk.max(1)) {
        let batch = degrade_windows(volumes, ws, mask, noise, seed, threads)?;
        let mut tape = Tape::<f32>::new();
        let p = tape.bind(&g.params)?;
        let x = tape.constant(stack(&batch.zero_filled)?)?;
        let o = g.forward(&mut tape, &p, x, BnMode::Eval)?;
        let rec = unstack(tape.value(o.rec))?;
        for b in 0..ws.len() {
            let c = b * n + n / 2;
            out.truth.push(batch.truth[c].clone());
            out.zero_filled.push(batch.zero_filled[c].clone());
            out.recon.push(rec[c].clone());
        }
    }
    out.psnr = mean_metric(&out.truth, &out.recon, psnr1)?;
    out.ssim = mean_metric(&out.truth, &out.recon, ssim)?;
    out.zero_fill_psnr = mean_metric(&out.truth, &out.zero_filled, psnr1)?;
    out.zero_fill_ssim = mean_metric(&out.truth, &out.zero_filled, ssim)?;
    Ok(out)
}

fn scalar_of(tape: &Tape<f32>, v: hpalf_tensor::Var) -> f64 {
    tape.value(v).data()[0].as_f64()
}

fn non_finite(step: usize, batch_seed: u64, detail: impl Into<String>) -> Error {
    Error::NonFiniteLoss {
        step,
        batch_seed,
        detail: detail.into(),
    }
}

/// Validation noise is fixed per slice so every epoch is scored on the
/// same inputs.
const VAL_STREAM: u64 = 0x5641_4c;

struct Models {
    g: Generator<f32>,
    d: Discriminator<f32>,
    phi: FeatureExtractor<f32>,
    anchors: Anchors,
    terms: AdversarialTerms,
    adam_g: Adam,
    adam_d: Adam,
}

impl Models {
    fn step(&mut self, cfg: &TrainConfig, truth: &[Image], zero_filled: &[Image], step: usize, epoch: usize, batch_seed: u64, lr: f64) -> Result<StepLog> {
        let n = cfg.n_slices;
        let b = truth.len() / n;
        let centers: Vec<usize> = (0..b).map(|i| i * n + n / 2).collect();
        let center_truth: Vec<Image> = centers.iter().map(|&c| truth[c].clone()).collect();

        // generator forward, kept on its tape for the generator update
        let mut tape = Tape::<f32>::new();
        let pg = tape.bind(&self.g.params)?;
        let x = tape.constant(stack(zero_filled)?)?;
        let out = self.g.forward(&mut tape, &pg, x, BnMode::Train)?;
        let fake_c = tape.index_select(out.rec, &centers)?;
        let fake_detached = tape.value(fake_c).clone();
        let real_c = stack::<f32>(&center_truth)?;

        // discriminator update(s) on the detached reconstruction
        let decode = self.terms.glc && !self.terms.tal;
        let mut d_log = (0.0, 0.0, None, None, false);
        for _ in 0..cfg.d_steps {
            let mut td = Tape::<f32>::new();
            let pd = td.bind(&self.d.params)?;
            let real = td.constant(real_c.clone())?;
            let fake = td.constant(fake_detached.clone())?;
            let ro = self.d.forward(&mut td, &pd, real, BnMode::Train, decode)?;
            let fo = self.d.forward(&mut td, &pd, fake, BnMode::Train, decode)?;
            let maps = match (ro.pixel_map, fo.pixel_map) {
                (Some(a), Some(b)) => Some((a, b)),
                _ => None,
            };
            let l = discriminator_loss(
                &mut td,
                Judgement {
                    scalar: ro.scalar,
                    perspective: ro.perspective,
                },
                Judgement {
                    scalar: fo.scalar,
                    perspective: fo.perspective,
                },
                maps,
                &self.anchors,
                self.terms,
            )?;
            let total = scalar_of(&td, l.total);
            if !total.is_finite() {
                return Err(non_finite(step, batch_seed, format!("discriminator loss {total}")));
            }
            let grads = td.backward(l.total)?;
            td.accumulate(&grads, &mut self.d.params)?;
            if !grads_finite(&self.d.params) {
                return Err(non_finite(step, batch_seed, "discriminator gradient"));
            }
            self.adam_d.step(&mut self.d.params, lr);
            self.d.params.zero_grad();
            d_log = (
                total,
                scalar_of(&td, l.scalar),
                l.kl.map(|v| scalar_of(&td, v)),
                l.pixel.map(|v| scalar_of(&td, v)),
                l.clamped,
            );
        }

        // generator update against the freshly updated discriminator, whose
        // weights enter this tape as constants
        let mut frozen: ParamStore<f32> = self.d.params.clone();
        frozen.freeze();
        let pdf = tape.bind(&frozen)?;
        let fo = self.d.forward(&mut tape, &pdf, fake_c, BnMode::Train, decode)?;
        let adv = generator_adversarial_loss(
            &mut tape,
            Judgement {
                scalar: fo.scalar,
                perspective: fo.perspective,
            },
            fo.pixel_map,
            &self.anchors,
            self.terms,
        )?;
        let target = tape.constant(stack(truth)?)?;
        let fm = fmse_loss(&mut tape, target, out.rec)?;
        let vgg = perceptual_loss(&mut tape, &self.phi, target, out.rec)?;
        let total = loss_total(&mut tape, fm, vgg, adv.total, &cfg.weights)?;
        let g_total = scalar_of(&tape, total);
        if !g_total.is_finite() {
            return Err(non_finite(step, batch_seed, format!("generator loss {g_total}")));
        }
        let grads = tape.backward(total)?;
        tape.accumulate(&grads, &mut self.g.params)?;
        if !grads_finite(&self.g.params) {
            return Err(non_finite(step, batch_seed, "generator gradient"));
        }
        self.adam_g.step(&mut self.g.params, lr);
        self.g.params.zero_grad();

        Ok(StepLog {
            step,
            epoch,
            batch_seed,
            d_total: d_log.0,
            d_scalar: d_log.1,
            d_kl: d_log.2,
            d_pixel: d_log.3,
            g_total,
            g_fmse: scalar_of(&tape, fm),
            g_vgg: scalar_of(&tape, vgg),
            g_adv: scalar_of(&tape, adv.total),
            g_kl: adv.kl.map(|v| scalar_of(&tape, v)),
            g_pixel: adv.pixel.map(|v| scalar_of(&tape, v)),
            clamped: d_log.4 || adv.clamped,
        })
    }
}

/// Seeds of the three networks of a run.
pub fn model_seeds(seed: u64) -> (u64, u64, u64) {
    (mix_seed(seed, 1), mix_seed(seed, 2), mix_seed(seed, 3))
}

/// Alternating 1:1 (configurable) discriminator/generator training with
/// per-epoch validation, early stopping on validation PSNR and a best
/// checkpoint. Writes `history.csv`, `steps.csv` and `best.hpck` into
/// `out_dir` when given.
pub fn train_hpalf(
    cfg: &TrainConfig,
    switches: AblationSwitches,
    volumes: &[SliceVolume],
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let switches = switches.normalized();
    let threads = thread_budget();
    let split = split_dataset(volumes.len(), cfg.seed)?;
    let mask = make_mask(cfg.mask_spec(), cfg.image_size, cfg.image_size)?;
    let train_windows = windows_of(volumes, &split.train, cfg.n_slices, cfg.void_threshold)?;
    let val_windows = windows_of(volumes, &split.val, cfg.n_slices, cfg.void_threshold)?;
    if train_windows.len() < cfg.batch_size || val_windows.is_empty() {
        return Err(config(format!(
            "{} training windows for batch size {}, {} validation windows",
            train_windows.len(),
            cfg.batch_size,
            val_windows.len()
        )));
    }
    let (gs, ds, ps) = model_seeds(cfg.seed);
    let mut m = Models {
        g: Generator::new(cfg.generator_config(switches.cal), gs)?,
        d: Discriminator::new(cfg.discriminator_config(), ds)?,
        phi: FeatureExtractor::new(ps)?,
        anchors: Anchors::new(cfg.outcomes, DEFAULT_SHAPE)?,
        terms: switches.terms(cfg.convention),
        adam_g: Adam::default(),
        adam_d: Adam::default(),
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let val_seed = mix_seed(cfg.seed, VAL_STREAM);
    let baseline = evaluate_generator(&mut m.g, volumes, &val_windows, &mask, cfg.noise, val_seed, cfg.eval_chunk, threads)?;

    let mut history = Vec::new();
    let mut steps = Vec::new();
    let mut best: Option<(usize, f64, f64, ParamStore<f32>, ParamStore<f32>)> = None;
    let mut since_best = 0;
    let mut step = 0;
    let mut stopped_early = false;
    let mut order = train_windows.clone();
    'epochs: for epoch in 0..cfg.max_epochs {
        let lr = step_lr(cfg.lr, cfg.lr_halving_period, epoch);
        order.clone_from(&train_windows);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0xE90C_0000 + epoch as u64)));
        let first = steps.len();
        let mut capped = false;
        for ws in order.chunks_exact(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|cap| step >= cap) {
                capped = true;
                break;
            }
            let batch_seed = mix_seed(cfg.seed, 0xBA7C_0000_0000 + step as u64);
            let batch = degrade_windows(volumes, ws, &mask, cfg.noise, batch_seed, threads)?;
            let log = match m.step(cfg, &batch.truth, &batch.zero_filled, step, epoch, batch_seed, lr) {
                Ok(log) => log,
                Err(e) => {
                    if let (Some(dir), Error::NonFiniteLoss { .. }) = (out_dir, &e) {
                        dump_batch(dir, cfg, switches, ws, batch_seed, &e)?;
                    }
                    return Err(e);
                }
            };
            steps.push(log);
            step += 1;
        }
        if steps.len() == first {
            break;
        }
        let epoch_steps = &steps[first..];
        let k = epoch_steps.len() as f64;
        let val = evaluate_generator(&mut m.g, volumes, &val_windows, &mask, cfg.noise, val_seed, cfg.eval_chunk, threads)?;
        history.push(EpochRecord {
            epoch,
            d_loss: epoch_steps.iter().map(|s| s.d_total).sum::<f64>() / k,
            g_loss: epoch_steps.iter().map(|s| s.g_total).sum::<f64>() / k,
            val_psnr: val.psnr,
            val_ssim: val.ssim,
            lr,
        });
        if best.as_ref().is_none_or(|b| val.psnr > b.1) {
            best = Some((epoch, val.psnr, val.ssim, m.g.params.clone(), m.d.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                stopped_early = true;
                break 'epochs;
            }
        }
        if capped || cfg.max_steps.is_some_and(|cap| step >= cap) {
            break;
        }
    }
    let (best_epoch, best_psnr, best_ssim, gp, dp) = best.ok_or_else(|| config("no training step was taken"))?;
    m.g.params.load_values(&gp)?;
    m.d.params.load_values(&dp)?;

    let mut meta = BTreeMap::new();
    meta.insert("best_epoch".into(), best_epoch.to_string());
    meta.insert("val_psnr".into(), format!("{best_psnr:.6}"));
    meta.insert("run_seed".into(), cfg.seed.to_string());
    meta.insert("switches".into(), switches.to_string().replace(' ', ","));
    meta.insert("convention".into(), cfg.convention.to_string());
    let checkpoint = Checkpoint {
        generator: m.g,
        discriminator: Some(m.d),
        phi_seed: ps,
        meta,
    };
    let report = TrainReport {
        history,
        steps,
        best_epoch,
        best_val_psnr: best_psnr,
        best_val_ssim: best_ssim,
        zero_fill_val_psnr: baseline.zero_fill_psnr,
        zero_fill_val_ssim: baseline.zero_fill_ssim,
        stopped_early,
        split,
    };
    if let Some(dir) = out_dir {
        write_history_csv(std::fs::File::create(dir.join("history.csv"))?, &report.history)?;
        write_steps_csv(std::fs::File::create(dir.join("steps.csv"))?, &report.steps)?;
        checkpoint.save(dir.join("best.hpck"))?;
    }
    Ok(TrainOutcome { checkpoint, report })
}

fn dump_batch(dir: &Path, cfg: &TrainConfig, switches: AblationSwitches, ws: &[WindowRef], batch_seed: u64, e: &Error) -> Result<PathBuf> {
    let path = dir.join("nonfinite_batch.txt");
    let mut f = std::fs::File::create(&path)?;
    writeln!(f, "error: {e}")?;
    writeln!(f, "batch_seed={batch_seed}")?;
    writeln!(f, "switches={switches}")?;
    writeln!(f, "config={cfg:?}")?;
    for w in ws {
        writeln!(f, "window volume={} start={} len={}", w.volume, w.window.start, w.window.len)?;
    }
    Ok(path)
}

pub fn write_history_csv(mut w: impl Write, rows: &[EpochRecord]) -> Result<()> {
    writeln!(w, "{RANGE_NOTE}")?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "d_loss", "g_loss", "val_psnr", "val_ssim", "lr"])?;
    for r in rows {
        out.write_record([
            r.epoch.to_string(),
            format!("{:.6}", r.d_loss),
            format!("{:.6}", r.g_loss),
            format!("{:.4}", r.val_psnr),
            format!("{:.6}", r.val_ssim),
            format!("{:e}", r.lr),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_steps_csv(w: impl Write, rows: &[StepLog]) -> Result<()> {
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "step", "epoch", "batch_seed", "d_total", "d_scalar", "d_kl", "d_pixel", "g_total", "g_fmse", "g_vgg", "g_adv",
        "g_kl", "g_pixel", "clamped",
    ])?;
    for r in rows {
        out.write_record([
            r.step.to_string(),
            r.epoch.to_string(),
            r.batch_seed.to_string(),
            format!("{:.6}", r.d_total),
            format!("{:.6}", r.d_scalar),
            opt(r.d_kl),
            opt(r.d_pixel),
            format!("{:.6}", r.g_total),
            format!("{:.6}", r.g_fmse),
            format!("{:.6}", r.g_vgg),
            format!("{:.6}", r.g_adv),
            opt(r.g_kl),
            opt(r.g_pixel),
            r.clamped.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Pearson correlation between the averaged "looks fake" map `1 - D_dec(x_rec)`
/// and the averaged absolute error `|x_rec - x|` over the given windows.
pub fn decision_error_correlation(
    checkpoint: &mut Checkpoint<f32>,
    cfg: &TrainConfig,
    volumes: &[SliceVolume],
    windows: &[WindowRef],
) -> Result<f64> {
    let mask = make_mask(cfg.mask_spec(), cfg.image_size, cfg.image_size)?;
    let seed = mix_seed(cfg.seed, VAL_STREAM);
    let ev = evaluate_generator(&mut checkpoint.generator, volumes, windows, &mask, cfg.noise, seed, cfg.eval_chunk, thread_budget())?;
    let d = checkpoint
        .discriminator
        .as_mut()
        .ok_or_else(|| config("checkpoint has no discriminator"))?;
    let px = cfg.image_size * cfg.image_size;
    let mut fake_map = vec![0.0; px];
    let mut err_map = vec![0.0; px];
    for chunk in ev.recon.chunks(cfg.eval_chunk.max(1)) {
        let mut tape = Tape::<f32>::new();
        let p = tape.bind(&d.params)?;
        let x = tape.constant(stack(chunk)?)?;
        let o = d.forward(&mut tape, &p, x, BnMode::Eval, true)?;
        let map = o.pixel_map.expect("decoded");
        for img in tape.value(map).data().chunks(px) {
            for (a, v) in fake_map.iter_mut().zip(img) {
                *a += 1.0 - v.as_f64();
            }
        }
    }
    for (r, t) in ev.recon.iter().zip(&ev.truth) {
        for (a, (x, y)) in err_map.iter_mut().zip(r.data.iter().zip(&t.data)) {
            *a += (x - y).abs();
        }
    }
    Ok(pearson(&fake_map, &err_map))
}

/// Sample correlation; 0 when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Reconstructs every slice of `volume` from its own degraded window
/// (windows are clamped at the ends of the stack). Returns the zero-filled
/// and reconstructed volumes.
pub fn reconstruct_volume(
    g: &mut Generator<f32>,
    volume: &SliceVolume,
    mask: &Mask,
    noise: f64,
    seed: u64,
    chunk: usize,
) -> Result<(SliceVolume, SliceVolume)> {
    let n = g.cfg.n_slices;
    if volume.depth < n {
        return Err(config(format!("depth {} < window {n}", volume.depth)));
    }
    let vols = std::slice::from_ref(volume);
    let refs: Vec<WindowRef> = (0..volume.depth)
        .map(|z| WindowRef {
            volume: 0,
            window: crate::mrisim::Window {
                start: z.saturating_sub(n / 2).min(volume.depth - n),
                len: n,
            },
        })
        .collect();
    let mut zf = Vec::with_capacity(volume.voxels.len());
    let mut rec = Vec::with_capacity(volume.voxels.len());
    for (ci, ws) in refs.chunks(chunk.max(1)).enumerate() {
        let batch = degrade_windows(vols, ws, mask, noise, seed, thread_budget())?;
        let mut tape = Tape::<f32>::new();
        let p = tape.bind(&g.params)?;
        let x = tape.constant(stack(&batch.zero_filled)?)?;
        let o = g.forward(&mut tape, &p, x, BnMode::Eval)?;
        let out = unstack(tape.value(o.rec))?;
        for (b, w) in ws.iter().enumerate() {
            let z = ci * chunk.max(1) + b;
            let row = b * n + (z - w.window.start);
            zf.extend_from_slice(&batch.zero_filled[row].data);
            rec.extend_from_slice(&out[row].data);
        }
    }
    let (d, h, w) = (volume.depth, volume.height, volume.width);
    Ok((SliceVolume::from_voxels(d, h, w, zf)?, SliceVolume::from_voxels(d, h, w, rec)?))
}

/// TV baseline on the centre slices of `windows`, fed exactly the
/// measurements the generator sees during validation. Returns mean PSNR and
/// SSIM on `[0, 1]`.
pub fn validation_tv(cfg: &TrainConfig, volumes: &[SliceVolume], windows: &[WindowRef], tv: &TvConfig) -> Result<(f64, f64)> {
    if windows.is_empty() {
        return Err(config("no windows to evaluate"));
    }
    let mask = make_mask(cfg.mask_spec(), cfg.image_size, cfg.image_size)?;
    let seed = mix_seed(cfg.seed, VAL_STREAM);
    let (mut truth, mut rec) = (Vec::new(), Vec::new());
    for w in windows {
        let z = w.window.center();
        let x = volumes[w.volume].slice(z);
        let (sample, _) = degrade(&x, &mask, cfg.noise, slice_seed(seed, w.volume, z))?;
        rec.push(reconstruct_tv(&sample, tv)?.image);
        truth.push(x);
    }
    Ok((mean_metric(&truth, &rec, psnr1)?, mean_metric(&truth, &rec, ssim)?))
}
