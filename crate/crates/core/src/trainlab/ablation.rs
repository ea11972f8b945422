use std::io::Write;
use std::path::Path;

use super::config::{AblationSwitches, TrainConfig};
use super::data::{mix_seed, thread_budget, windows_of, Split};
use super::train::{evaluate_generator, train_hpalf, TrainOutcome};
use crate::error::{config, Result};
use crate::metrics::{evaluate_slices, MetricReport, RANGE_NOTE};
use crate::mrisim::{make_mask, SliceVolume};
use crate::objectives::FeatureExtractor;

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub label: String,
    pub switches: AblationSwitches,
    pub n_slices: usize,
    pub outcomes: usize,
}

/// Cartesian product `switches x n_slices x outcomes`.
pub fn ablation_grid(switches: &[(String, AblationSwitches)], n_slices: &[usize], outcomes: &[usize]) -> Vec<AblationCell> {
    let mut cells = Vec::new();
    for (label, s) in switches {
        for &n in n_slices {
            for &k in outcomes {
                cells.push(AblationCell {
                    label: label.clone(),
                    switches: *s,
                    n_slices: n,
                    outcomes: k,
                });
            }
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub cell: AblationCell,
    pub split: Split,
    /// Test-split metrics, or the error that stopped the cell.
    pub result: std::result::Result<CellMetrics, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellMetrics {
    pub steps: usize,
    pub best_epoch: usize,
    pub val_psnr: f64,
    pub test: MetricReport,
}

const TEST_STREAM: u64 = 0x7E57;

/// Scores the best generator of a run on the centre slices of the test split.
pub fn test_metrics(cfg: &TrainConfig, outcome: &mut TrainOutcome, volumes: &[SliceVolume]) -> Result<MetricReport> {
    let g = &mut outcome.checkpoint.generator;
    let windows = windows_of(volumes, &outcome.report.split.test, g.cfg.n_slices, cfg.void_threshold)?;
    let mask = make_mask(cfg.mask_spec(), cfg.image_size, cfg.image_size)?;
    let seed = mix_seed(cfg.seed, TEST_STREAM);
    let ev = evaluate_generator(g, volumes, &windows, &mask, cfg.noise, seed, cfg.eval_chunk, thread_budget())?;
    let phi = FeatureExtractor::<f64>::new(outcome.checkpoint.phi_seed)?;
    evaluate_slices(&ev.truth, &ev.recon, &phi)
}

/// Trains every cell under the same seed (hence the same split and data)
/// and collects test metrics. A failing cell is recorded and the grid
/// carries on.
pub fn run_ablation(cells: &[AblationCell], base: &TrainConfig, volumes: &[SliceVolume], out_dir: Option<&Path>) -> Result<Vec<AblationRow>> {
    if cells.is_empty() {
        return Err(config("empty ablation grid"));
    }
    let mut rows = Vec::with_capacity(cells.len());
    for (i, cell) in cells.iter().enumerate() {
        let cfg = TrainConfig {
            n_slices: cell.n_slices,
            outcomes: cell.outcomes,
            ..base.clone()
        };
        let dir = out_dir.map(|d| d.join(format!("cell{i:02}")));
        let split = super::data::split_dataset(volumes.len(), cfg.seed)?;
        let result = train_hpalf(&cfg, cell.switches, volumes, dir.as_deref()).and_then(|mut o| {
            let test = test_metrics(&cfg, &mut o, volumes)?;
            Ok(CellMetrics {
                steps: o.report.steps.len(),
                best_epoch: o.report.best_epoch,
                val_psnr: o.report.best_val_psnr,
                test,
            })
        });
        rows.push(AblationRow {
            cell: cell.clone(),
            split,
            result: result.map_err(|e| e.to_string()),
        });
    }
    if let Some(dir) = out_dir {
        write_ablation_csv(std::fs::File::create(dir.join("ablation.csv"))?, &rows)?;
    }
    Ok(rows)
}

fn ids(v: &[usize]) -> String {
    v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn write_ablation_csv(mut w: impl Write, rows: &[AblationRow]) -> Result<()> {
    writeln!(w, "{RANGE_NOTE}")?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "cell", "switches", "n_slices", "outcomes", "steps", "best_epoch", "val_psnr", "psnr", "ssim", "ffd", "psim_lite",
        "val_volumes", "test_volumes", "error",
    ])?;
    for r in rows {
        let mut rec = vec![
            r.cell.label.clone(),
            r.cell.switches.to_string(),
            r.cell.n_slices.to_string(),
            r.cell.outcomes.to_string(),
        ];
        match &r.result {
            Ok(m) => rec.extend([
                m.steps.to_string(),
                m.best_epoch.to_string(),
                format!("{:.4}", m.val_psnr),
                format!("{:.4}", m.test.psnr),
                format!("{:.6}", m.test.ssim),
                format!("{:.6}{}", m.test.ffd.value, if m.test.ffd.loaded { " (loaded)" } else { "" }),
                format!("{:.6}", m.test.psim_lite),
            ]),
            Err(_) => rec.extend(std::iter::repeat_n(String::new(), 7)),
        }
        rec.push(ids(&r.split.val));
        rec.push(ids(&r.split.test));
        rec.push(r.result.as_ref().err().cloned().unwrap_or_default());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
