//! The desk-scale head trainer.
//!
//! `train_head` drives AdamW over `w_start`/`w_end` with precomputed region
//! targets; `train_head_live` recomputes targets from `w_ret` each step and
//! trains all three matrices. Both are deterministic given the seed: the
//! seed feeds a single ChaCha stream that the batch source uses for its
//! per-epoch shuffles.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::retrieval::RetrievalHead;

use super::grad::{cvmr_grad, cvmr_grad_live, live_targets, LiveRetrievalBatch, RegionFrames};
use super::loss::{cvmr_loss, RetrievalBatch};
use super::optim::{OptState, ParamSlot};

/// A stream of training batches. The trainer passes its seeded rng in so
/// shuffling stays under the caller's seed.
pub trait BatchSource {
    type Batch;
    fn next_batch(&mut self, rng: &mut ChaCha8Rng) -> Result<Self::Batch>;
}

/// One loss-trace row, mirroring the CSV columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub ret_start: f64,
    pub ret_end: f64,
    pub pgag: f64,
}

/// Writes the loss trace as CSV with columns step, loss, ret_start,
/// ret_end, pgag.
pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut out = String::from("step,loss,ret_start,ret_end,pgag\n");
    for row in trace {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.step, row.loss, row.ret_start, row.ret_end, row.pgag
        ));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// In-memory sample pool emitting seeded-shuffled fixed-size batches.
/// Epochs reshuffle; a trailing remainder smaller than the batch size is
/// dropped so every batch keeps the same negative count.
#[derive(Debug, Clone)]
pub struct ShuffledBatches {
    queries_start: Array2<f64>,
    queries_end: Array2<f64>,
    targets_start: Array2<f64>,
    targets_end: Array2<f64>,
    batch_size: usize,
    order: Vec<usize>,
    cursor: usize,
}

impl ShuffledBatches {
    pub fn new(
        queries_start: Array2<f64>,
        queries_end: Array2<f64>,
        targets_start: Array2<f64>,
        targets_end: Array2<f64>,
        batch_size: usize,
    ) -> Result<Self> {
        let n = queries_start.nrows();
        if batch_size < 2 {
            return Err(Error::InvalidInput(format!(
                "batch size must be >= 2, got {batch_size}"
            )));
        }
        if n < batch_size {
            return Err(Error::InvalidInput(format!(
                "{n} samples cannot fill a batch of {batch_size}"
            )));
        }
        if queries_end.nrows() != n || targets_start.nrows() != n || targets_end.nrows() != n {
            return Err(Error::Shape("sample matrices disagree on row count".into()));
        }
        Ok(ShuffledBatches {
            queries_start,
            queries_end,
            targets_start,
            targets_end,
            batch_size,
            order: Vec::new(),
            cursor: 0,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.queries_start.nrows()
    }

    fn take_rows(m: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((rows.len(), m.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).assign(&m.row(r));
        }
        out
    }
}

impl BatchSource for ShuffledBatches {
    type Batch = RetrievalBatch;

    fn next_batch(&mut self, rng: &mut ChaCha8Rng) -> Result<RetrievalBatch> {
        if self.cursor + self.batch_size > self.order.len() {
            self.order = (0..self.sample_count()).collect();
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let rows = &self.order[self.cursor..self.cursor + self.batch_size];
        let batch = RetrievalBatch {
            queries_start: Self::take_rows(&self.queries_start, rows),
            queries_end: Self::take_rows(&self.queries_end, rows),
            targets_start: Self::take_rows(&self.targets_start, rows),
            targets_end: Self::take_rows(&self.targets_end, rows),
        };
        self.cursor += self.batch_size;
        Ok(batch)
    }
}

/// Live-target counterpart of [`ShuffledBatches`]: samples carry their
/// region frames instead of fixed target vectors.
#[derive(Debug, Clone)]
pub struct ShuffledLiveBatches {
    queries_start: Array2<f64>,
    queries_end: Array2<f64>,
    regions_start: Vec<RegionFrames>,
    regions_end: Vec<RegionFrames>,
    batch_size: usize,
    order: Vec<usize>,
    cursor: usize,
}

impl ShuffledLiveBatches {
    pub fn new(
        queries_start: Array2<f64>,
        queries_end: Array2<f64>,
        regions_start: Vec<RegionFrames>,
        regions_end: Vec<RegionFrames>,
        batch_size: usize,
    ) -> Result<Self> {
        let n = queries_start.nrows();
        if batch_size < 2 || n < batch_size {
            return Err(Error::InvalidInput(format!(
                "need >= {batch_size} samples with batch size >= 2, got {n}"
            )));
        }
        if queries_end.nrows() != n || regions_start.len() != n || regions_end.len() != n {
            return Err(Error::Shape("sample fields disagree on count".into()));
        }
        Ok(ShuffledLiveBatches {
            queries_start,
            queries_end,
            regions_start,
            regions_end,
            batch_size,
            order: Vec::new(),
            cursor: 0,
        })
    }
}

impl BatchSource for ShuffledLiveBatches {
    type Batch = LiveRetrievalBatch;

    fn next_batch(&mut self, rng: &mut ChaCha8Rng) -> Result<LiveRetrievalBatch> {
        if self.cursor + self.batch_size > self.order.len() {
            self.order = (0..self.queries_start.nrows()).collect();
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let rows = &self.order[self.cursor..self.cursor + self.batch_size];
        let batch = LiveRetrievalBatch {
            queries_start: ShuffledBatches::take_rows(&self.queries_start, rows),
            queries_end: ShuffledBatches::take_rows(&self.queries_end, rows),
            regions_start: rows.iter().map(|&r| self.regions_start[r].clone()).collect(),
            regions_end: rows.iter().map(|&r| self.regions_end[r].clone()).collect(),
        };
        self.cursor += self.batch_size;
        Ok(batch)
    }
}

/// Runs `steps` AdamW updates on `w_start`/`w_end` with stop-gradient
/// targets. Returns the loss trace (one row per step). Aborts with the step
/// number if the loss stops being finite.
pub fn train_head<S: BatchSource<Batch = RetrievalBatch>>(
    head: &mut RetrievalHead,
    data: &mut S,
    opt: &mut OptState,
    steps: usize,
    seed: u64,
) -> Result<Vec<TraceRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch = data.next_batch(&mut rng)?;
        let (loss, parts) = cvmr_loss(head, &batch, None)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        let grads = cvmr_grad(head, &batch)?;
        opt.begin_step();
        opt.apply(ParamSlot::WStart, &mut head.w_start, &grads.w_start)?;
        opt.apply(ParamSlot::WEnd, &mut head.w_end, &grads.w_end)?;
        trace.push(TraceRow {
            step,
            loss,
            ret_start: parts.ret_start,
            ret_end: parts.ret_end,
            pgag: parts.pgag,
        });
    }
    head.validate()?;
    Ok(trace)
}

/// Live-target training: targets come from the current `w_ret` each step
/// and all three matrices are updated.
pub fn train_head_live<S: BatchSource<Batch = LiveRetrievalBatch>>(
    head: &mut RetrievalHead,
    data: &mut S,
    opt: &mut OptState,
    steps: usize,
    seed: u64,
) -> Result<Vec<TraceRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch = data.next_batch(&mut rng)?;
        let loss_batch = RetrievalBatch {
            queries_start: batch.queries_start.clone(),
            queries_end: batch.queries_end.clone(),
            targets_start: live_targets(head, &batch.regions_start)?,
            targets_end: live_targets(head, &batch.regions_end)?,
        };
        let (loss, parts) = cvmr_loss(head, &loss_batch, None)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        let grads = cvmr_grad_live(head, &batch)?;
        opt.begin_step();
        opt.apply(ParamSlot::WStart, &mut head.w_start, &grads.w_start)?;
        opt.apply(ParamSlot::WEnd, &mut head.w_end, &grads.w_end)?;
        opt.apply(ParamSlot::WRet, &mut head.w_ret, &grads.w_ret)?;
        trace.push(TraceRow {
            step,
            loss,
            ret_start: parts.ret_start,
            ret_end: parts.ret_end,
            pgag: parts.pgag,
        });
    }
    head.validate()?;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::RetrievalConfig;
    use crate::training::optim::AdamWParams;
    use rand::Rng;

    fn random_pool(seed: u64, n: usize, d_lm: usize, d: usize) -> ShuffledBatches {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mat = |rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
        };
        ShuffledBatches::new(mat(n, d_lm), mat(n, d_lm), mat(n, d), mat(n, d), 4).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_head_and_flattens_trace() {
        let config = RetrievalConfig::new(6, 5, 4).unwrap();
        let mut head = RetrievalHead::init_seeded(config, 1).unwrap();
        let initial = head.clone();
        let mut data = random_pool(2, 12, 5, 6);
        let mut opt = OptState::new(AdamWParams {
            learning_rate: 0.0,
            ..AdamWParams::default()
        })
        .unwrap();
        let trace = train_head(&mut head, &mut data, &mut opt, 6, 3).unwrap();
        assert_eq!(head, initial);
        assert_eq!(trace.len(), 6);
        // same pool order across epochs is not guaranteed, but with frozen
        // weights every batch revisit yields the same loss values per epoch
        assert!(trace.iter().all(|r| r.loss.is_finite() && r.loss >= 0.0));
    }

    #[test]
    fn same_seed_gives_bit_identical_traces() {
        let config = RetrievalConfig::new(6, 5, 4).unwrap();
        let run = || {
            let mut head = RetrievalHead::init_seeded(config, 10).unwrap();
            let mut data = random_pool(11, 16, 5, 6);
            let mut opt = OptState::new(AdamWParams::default()).unwrap();
            train_head(&mut head, &mut data, &mut opt, 25, 12).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seed_changes_batch_order() {
        let config = RetrievalConfig::new(6, 5, 4).unwrap();
        let run = |seed| {
            let mut head = RetrievalHead::init_seeded(config, 10).unwrap();
            let mut data = random_pool(11, 16, 5, 6);
            let mut opt = OptState::new(AdamWParams::default()).unwrap();
            train_head(&mut head, &mut data, &mut opt, 25, seed).unwrap()
        };
        let a = run(12);
        let b = run(13);
        assert_ne!(a, b);
    }

    #[test]
    fn trace_csv_has_expected_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let trace = vec![TraceRow {
            step: 0,
            loss: 1.5,
            ret_start: 2.0,
            ret_end: 1.0,
            pgag: 0.0,
        }];
        write_trace_csv(&path, &trace).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "step,loss,ret_start,ret_end,pgag\n0,1.5,2,1,0\n");
    }
}
