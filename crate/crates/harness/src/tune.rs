//! The four-step clip-norm and learning-rate tuning procedure, and fixed-ε epoch sweeps.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SweepConfig};
use crate::data::{self, Splits};
use crate::error::{Error, Result};
use crate::pool::run_all;
use crate::train::{plan, run_on, write_json, RunRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub clip_norm: Option<f64>,
    pub learning_rate: f64,
    pub test_accuracy: f64,
    pub epsilon: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    /// Step 1: the non-private reference learning rate.
    pub reference_lr: f64,
    /// Non-private, unclipped accuracy at the reference rate.
    pub reference_accuracy: f64,
    pub reference_lr_sweep: Vec<Cell>,
    /// Step 2: accuracy per clip norm at σ = 0 and the reference rate.
    pub clip_sweep: Vec<Cell>,
    pub chosen_clip: f64,
    /// Step 3: the private (C, lr) grid.
    pub heatmap: Vec<Cell>,
    pub sigma: f64,
    pub chosen_lr: f64,
    /// Step 4: cells of the local grid around the step-3 choice, when enabled.
    pub refined: Vec<Cell>,
    pub best: Cell,
}

fn sweep_of(cfg: &ExperimentConfig) -> Result<&SweepConfig> {
    cfg.sweep
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs a `sweep` section".into()))
}

fn nonempty<T>(grid: &[T], what: &str) -> Result<()> {
    if grid.is_empty() {
        Err(Error::Config(format!("sweep.{what} must not be empty")))
    } else {
        Ok(())
    }
}

fn cell_dir(cfg: &ExperimentConfig, label: &str) -> Option<PathBuf> {
    cfg.output_dir.as_ref().map(|d| d.join("cells").join(label))
}

/// Runs each config in parallel (bounded by `workers`), in input order.
fn run_cells(configs: &[ExperimentConfig], splits: &Splits, workers: usize) -> Result<Vec<RunRecord>> {
    run_all(configs, workers, |_, c| run_on(c, splits)).into_iter().collect()
}

fn with_lr_clip(base: &ExperimentConfig, lr: f64, clip: Option<f64>, label: &str) -> ExperimentConfig {
    let mut c = base.clone();
    c.optimizer.schedule.max_lr = lr;
    c.optimizer.clip_norm = clip;
    c.name = format!("{}-{label}", base.name);
    c.output_dir = cell_dir(base, label);
    c
}

fn cell(r: &RunRecord) -> Cell {
    Cell {
        clip_norm: r.config.optimizer.clip_norm,
        learning_rate: r.config.optimizer.schedule.max_lr,
        test_accuracy: r.final_test_accuracy,
        epsilon: r.privacy.as_ref().map(|p| p.epsilon),
    }
}

/// Index of the highest accuracy; the first wins ties.
fn argmax(cells: &[Cell]) -> usize {
    (0..cells.len()).fold(0, |b, i| if cells[i].test_accuracy > cells[b].test_accuracy { i } else { b })
}

pub fn write_cells_csv(path: &std::path::Path, cells: &[Cell]) -> Result<()> {
    let best = if cells.is_empty() { usize::MAX } else { argmax(cells) };
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["clip_norm", "learning_rate", "test_accuracy", "epsilon", "best"])?;
    for (i, c) in cells.iter().enumerate() {
        w.write_record([
            c.clip_norm.map_or(String::new(), |v| v.to_string()),
            c.learning_rate.to_string(),
            c.test_accuracy.to_string(),
            c.epsilon.map_or(String::new(), |v| v.to_string()),
            u8::from(i == best).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_tune(cfg: &ExperimentConfig) -> Result<TuneReport> {
    let splits = data::load(&cfg.data)?;
    tune_on(cfg, &splits)
}

pub fn tune_on(cfg: &ExperimentConfig, splits: &Splits) -> Result<TuneReport> {
    let sweep = sweep_of(cfg)?;
    nonempty(&sweep.clip_norms, "clip_norms")?;
    nonempty(&sweep.learning_rates, "learning_rates")?;
    let workers = sweep.workers;
    let public = cfg.clone().non_private();

    // Step 1: non-private reference rate.
    let (reference_lr, reference_accuracy, reference_lr_sweep) = match sweep.reference_lr {
        Some(lr) => {
            let r = run_on(&with_lr_clip(&public, lr, None, "reference"), splits)?;
            (lr, r.final_test_accuracy, vec![cell(&r)])
        }
        None => {
            let configs: Vec<_> = sweep
                .learning_rates
                .iter()
                .enumerate()
                .map(|(i, &lr)| with_lr_clip(&public, lr, None, &format!("reference-{i}")))
                .collect();
            let cells: Vec<Cell> = run_cells(&configs, splits, workers)?.iter().map(cell).collect();
            let b = argmax(&cells);
            (cells[b].learning_rate, cells[b].test_accuracy, cells)
        }
    };

    // Step 2: smallest clip norm that stays within tolerance of the unclipped run.
    let mut clips = sweep.clip_norms.clone();
    clips.sort_by(f64::total_cmp);
    let configs: Vec<_> = clips
        .iter()
        .enumerate()
        .map(|(i, &c)| with_lr_clip(&public, reference_lr, Some(c), &format!("clip-{i}")))
        .collect();
    let clip_sweep: Vec<Cell> = run_cells(&configs, splits, workers)?.iter().map(cell).collect();
    let floor = reference_accuracy - sweep.tolerance / 100.0;
    let chosen_clip = clip_sweep
        .iter()
        .find(|c| c.test_accuracy >= floor)
        .and_then(|c| c.clip_norm)
        .ok_or_else(|| {
            let table: Vec<String> = clip_sweep
                .iter()
                .map(|c| format!("C={}: {:.4}", c.clip_norm.unwrap_or(f64::NAN), c.test_accuracy))
                .collect();
            Error::Infeasible(format!(
                "no clip norm reaches {floor:.4} (unclipped {reference_accuracy:.4} at lr {reference_lr}, tolerance {} points); {}",
                sweep.tolerance,
                table.join(", ")
            ))
        })?;

    // Step 3: private (C, lr) grid; the chosen rate is the best one at C̃.
    let sigma = plan(cfg, splits.train.len())?.sigma;
    let mut grid = Vec::new();
    for (i, &c) in clips.iter().enumerate() {
        for (j, &lr) in sweep.learning_rates.iter().enumerate() {
            grid.push(with_lr_clip(cfg, lr, Some(c), &format!("private-{i}-{j}")));
        }
    }
    let heatmap: Vec<Cell> = run_cells(&grid, splits, workers)?.iter().map(cell).collect();
    let at_clip: Vec<Cell> = heatmap
        .iter()
        .filter(|c| c.clip_norm == Some(chosen_clip))
        .cloned()
        .collect();
    let chosen_lr = at_clip[argmax(&at_clip)].learning_rate;
    let mut best = at_clip[argmax(&at_clip)].clone();

    // Step 4: local 3×3 refinement at half and double the chosen values.
    let mut refined = Vec::new();
    if sweep.refine {
        let mut local = Vec::new();
        for (i, c) in [chosen_clip / 2.0, chosen_clip, chosen_clip * 2.0].into_iter().enumerate() {
            for (j, lr) in [chosen_lr / 2.0, chosen_lr, chosen_lr * 2.0].into_iter().enumerate() {
                local.push(with_lr_clip(cfg, lr, Some(c), &format!("refine-{i}-{j}")));
            }
        }
        refined = run_cells(&local, splits, workers)?.iter().map(cell).collect();
        let r = &refined[argmax(&refined)];
        if r.test_accuracy > best.test_accuracy {
            best = r.clone();
        }
    }

    let report = TuneReport {
        reference_lr,
        reference_accuracy,
        reference_lr_sweep,
        clip_sweep,
        chosen_clip,
        heatmap,
        sigma,
        chosen_lr,
        refined,
        best,
    };
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("tune.json"), &report)?;
        write_cells_csv(&dir.join("clip_sweep.csv"), &report.clip_sweep)?;
        write_cells_csv(&dir.join("heatmap.csv"), &report.heatmap)?;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epochs: f64,
    pub steps: u64,
    pub sigma: f64,
    pub epsilon: f64,
    pub best_lr: f64,
    pub best_accuracy: f64,
    pub cells: Vec<Cell>,
}

/// For each epoch count, solves σ for the fixed ε target and keeps the best
/// accuracy over the learning-rate grid.
pub fn cmd_fixed_eps_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let splits = data::load(&cfg.data)?;
    fixed_eps_sweep_on(cfg, &splits)
}

pub fn fixed_eps_sweep_on(cfg: &ExperimentConfig, splits: &Splits) -> Result<Vec<SweepRow>> {
    let sweep = sweep_of(cfg)?;
    nonempty(&sweep.epochs, "epochs")?;
    nonempty(&sweep.learning_rates, "learning_rates")?;
    if cfg.privacy.target_epsilon.is_none() {
        return Err(Error::Config("fixed-eps-sweep needs privacy.target_epsilon".into()));
    }
    let mut epochs = sweep.epochs.clone();
    epochs.sort_by(f64::total_cmp);
    epochs.dedup();
    let n = splits.train.len();
    let plans = epochs
        .iter()
        .map(|&e| plan(&cfg.clone().with_epochs(e), n))
        .collect::<Result<Vec<_>>>()?;
    for (w, e) in plans.windows(2).zip(epochs.windows(2)) {
        if w[1].total_steps > w[0].total_steps && w[1].sigma <= w[0].sigma {
            return Err(Error::Infeasible(format!(
                "σ did not increase from {} to {} epochs ({} vs {})",
                e[0], e[1], w[0].sigma, w[1].sigma
            )));
        }
    }
    let mut configs = Vec::new();
    for (i, &e) in epochs.iter().enumerate() {
        for (j, &lr) in sweep.learning_rates.iter().enumerate() {
            let base = cfg.clone().with_epochs(e);
            configs.push(with_lr_clip(&base, lr, cfg.optimizer.clip_norm, &format!("epochs-{i}-lr-{j}")));
        }
    }
    let records = run_cells(&configs, splits, sweep.workers)?;
    let k = sweep.learning_rates.len();
    let rows: Vec<SweepRow> = epochs
        .iter()
        .zip(&plans)
        .zip(records.chunks(k))
        .map(|((&e, p), runs)| {
            let cells: Vec<Cell> = runs.iter().map(cell).collect();
            let b = argmax(&cells);
            SweepRow {
                epochs: e,
                steps: p.total_steps,
                sigma: p.sigma,
                epsilon: runs[b].privacy.as_ref().map_or(f64::NAN, |r| r.epsilon),
                best_lr: cells[b].learning_rate,
                best_accuracy: cells[b].test_accuracy,
                cells,
            }
        })
        .collect();
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("sweep.json"), &rows)?;
        let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
        w.write_record(["epochs", "steps", "sigma", "epsilon", "best_lr", "best_accuracy"])?;
        for r in &rows {
            w.write_record([
                r.epochs.to_string(),
                r.steps.to_string(),
                r.sigma.to_string(),
                r.epsilon.to_string(),
                r.best_lr.to_string(),
                r.best_accuracy.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(rows)
}
