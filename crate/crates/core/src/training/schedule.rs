//! The multistage training descriptor and the multitask batch scheduler.
//!
//! The schedule file is declarative: it records which components train at
//! each stage and on which task datasets. Only stages that train the
//! retrieval head alone are executable in this artifact; the rest describe
//! backbone work that happens elsewhere.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A trainable component named by a schedule stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trainable {
    /// The retrieval projections (w_start, w_end, w_ret).
    Head,
    /// The vision-to-LM connector.
    Connector,
    Lm,
    Ve,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainStage {
    pub name: String,
    pub trainable: BTreeSet<Trainable>,
    /// Task descriptors (dataset names) this stage draws from.
    pub datasets: Vec<String>,
    pub steps: u64,
    /// Per-task batch sizes; retrieval tasks typically run larger batches.
    pub task_batch_sizes: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub stages: Vec<TrainStage>,
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for stage in &self.stages {
            if !names.insert(stage.name.as_str()) {
                return Err(Error::invariant(&stage.name, "duplicate stage name"));
            }
            if stage.steps == 0 {
                return Err(Error::invariant(&stage.name, "steps must be positive"));
            }
        }
        Ok(())
    }

    /// Stages this artifact can actually run: retrieval head only.
    pub fn executable_stages(&self) -> Vec<&TrainStage> {
        self.stages
            .iter()
            .filter(|s| s.trainable.len() == 1 && s.trainable.contains(&Trainable::Head))
            .collect()
    }
}

/// Reads and validates a schedule descriptor from a JSON file.
pub fn load_schedule(path: &Path) -> Result<TrainSchedule> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let schedule: TrainSchedule = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), 1, e.to_string()))?;
    schedule.validate()?;
    Ok(schedule)
}

/// Builds one epoch of the multitask batch order.
///
/// The epoch is capped by the smallest dataloader: with `S_min` the minimum
/// task sample count, each task contributes `floor(S_min / batch_size)`
/// batches, so no task draws more samples than the smallest task holds (the
/// 1:1 sample ratio). Tasks alternate round-robin in a seeded order;
/// exhausted tasks are skipped.
pub fn multitask_schedule(
    task_sizes: &BTreeMap<String, u64>,
    task_batch_sizes: &BTreeMap<String, usize>,
    seed: u64,
) -> Result<Vec<(String, usize)>> {
    if task_sizes.is_empty() {
        return Err(Error::InvalidInput("no tasks to schedule".into()));
    }
    for (task, &size) in task_sizes {
        if size == 0 {
            return Err(Error::invariant(task, "task size must be positive"));
        }
        let Some(&batch) = task_batch_sizes.get(task) else {
            return Err(Error::invariant(task, "missing batch size"));
        };
        if batch == 0 {
            return Err(Error::invariant(task, "batch size must be positive"));
        }
        if batch as u64 > size {
            return Err(Error::invariant(
                task,
                format!("batch size {batch} exceeds task size {size}"),
            ));
        }
    }

    let s_min = *task_sizes.values().min().expect("non-empty");
    let mut order: Vec<&String> = task_sizes.keys().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let quota: BTreeMap<&String, u64> = task_sizes
        .keys()
        .map(|t| (t, s_min / task_batch_sizes[t] as u64))
        .collect();

    let mut emitted: BTreeMap<&String, u64> = task_sizes.keys().map(|t| (t, 0)).collect();
    let mut schedule = Vec::new();
    loop {
        let mut progressed = false;
        for &task in &order {
            let done = emitted[task];
            if done < quota[task] {
                schedule.push((task.clone(), done as usize));
                *emitted.get_mut(task).unwrap() += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    Ok(schedule)
}
