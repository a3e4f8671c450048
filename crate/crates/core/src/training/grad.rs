//! Analytic gradients of the retrieval term `L_RET/2`.
//!
//! Backprop runs through cosine normalization and the row softmax. With
//! `g_i = W q_i`, `shat_ij = cos(g_i, t_j)` and `p` the row softmax of
//! `shat/t`:
//!
//! ```text
//! dL/dshat_ij = (p_ij - delta_ij) / (B t)
//! dshat/dg_i  = (that_j - shat_ij ghat_i) / |g_i|
//! dL/dW       = sum_i (dL/dg_i) q_i^T
//! ```
//!
//! Targets are constants by default (precomputed region averages; the vision
//! side is frozen). The live variant recomputes targets from `w_ret` inside
//! the batch and adds `dL/dshat * dshat/dt_j * dt_j/dW_ret`, where the rotary
//! encoding contributes its transpose rotation.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::retrieval::{rope_rotate, RetrievalHead};

use super::loss::RetrievalBatch;

/// Gradients for the default (stop-gradient targets) path.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalGrads {
    pub w_start: Array2<f64>,
    pub w_end: Array2<f64>,
}

/// Gradients for the live-target path, which also reaches `w_ret`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiveGrads {
    pub w_start: Array2<f64>,
    pub w_end: Array2<f64>,
    pub w_ret: Array2<f64>,
}

/// The kept frames backing one region target: feature rows plus their video
/// positions.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFrames {
    /// n x d_fv
    pub features: Array2<f64>,
    pub positions: Vec<u32>,
}

impl RegionFrames {
    pub fn validate(&self) -> Result<()> {
        if self.features.nrows() == 0 {
            return Err(Error::Degenerate("region with no frames".into()));
        }
        if self.positions.len() != self.features.nrows() {
            return Err(Error::Shape(format!(
                "region has {} positions for {} frames",
                self.positions.len(),
                self.features.nrows()
            )));
        }
        Ok(())
    }
}

/// A batch whose targets are recomputed from `w_ret` on every call: each
/// sample carries the raw frames of its start and end regions.
#[derive(Debug, Clone, PartialEq)]
pub struct LiveRetrievalBatch {
    /// B x d_lm
    pub queries_start: Array2<f64>,
    /// B x d_lm
    pub queries_end: Array2<f64>,
    pub regions_start: Vec<RegionFrames>,
    pub regions_end: Vec<RegionFrames>,
}

impl LiveRetrievalBatch {
    pub fn batch_size(&self) -> usize {
        self.queries_start.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.batch_size();
        if b < 2 {
            return Err(Error::InvalidInput(format!(
                "retrieval batch needs >= 2 samples, got {b}"
            )));
        }
        if self.queries_end.nrows() != b
            || self.regions_start.len() != b
            || self.regions_end.len() != b
        {
            return Err(Error::Shape("live batch fields disagree on batch size".into()));
        }
        for region in self.regions_start.iter().chain(self.regions_end.iter()) {
            region.validate()?;
        }
        Ok(())
    }
}

/// Computes the current region targets of a live batch under `head.w_ret`:
/// row j is the mean rotary-encoded projection of region j's frames.
pub fn live_targets(head: &RetrievalHead, regions: &[RegionFrames]) -> Result<Array2<f64>> {
    let d = head.config.d;
    let mut targets = Array2::zeros((regions.len(), d));
    for (j, region) in regions.iter().enumerate() {
        region.validate()?;
        if region.features.ncols() != head.config.d_fv {
            return Err(Error::Shape(format!(
                "region feature width {} != d_fv {}",
                region.features.ncols(),
                head.config.d_fv
            )));
        }
        let n = region.features.nrows();
        let mut acc = Array1::zeros(d);
        for f in 0..n {
            let projected = head.w_ret.dot(&region.features.row(f));
            acc += &rope_rotate(
                projected.view(),
                f64::from(region.positions[f]),
                head.config.rope_base,
            );
        }
        targets.row_mut(j).assign(&(acc / n as f64));
    }
    Ok(targets)
}

fn row_norms(m: &Array2<f64>, what: &str) -> Result<Array1<f64>> {
    let norms = m.map_axis(Axis(1), |row| row.dot(&row).sqrt());
    if norms.iter().any(|&n| n == 0.0) {
        return Err(Error::Degenerate(format!("{what} contains a zero vector")));
    }
    if norms.iter().any(|n| !n.is_finite()) {
        return Err(Error::NonFinite(format!("{what} norm")));
    }
    Ok(norms)
}

fn normalize_rows(m: &Array2<f64>, norms: &Array1<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for (mut row, &n) in out.rows_mut().into_iter().zip(norms.iter()) {
        row.mapv_inplace(|v| v / n);
    }
    out
}

/// Gradient of one batch-averaged InfoNCE term w.r.t. the projection `w`
/// and (optionally) the targets. No `1/2` scaling here; callers own it.
fn side_gradient(
    w: &Array2<f64>,
    queries: &Array2<f64>,
    targets: &Array2<f64>,
    temperature: f64,
    want_target_grad: bool,
) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
    let b = queries.nrows();
    let projected = queries.dot(&w.t()); // B x d
    let g_norms = row_norms(&projected, "projected queries")?;
    let t_norms = row_norms(targets, "targets")?;
    let g_hat = normalize_rows(&projected, &g_norms);
    let t_hat = normalize_rows(targets, &t_norms);

    let sims = g_hat.dot(&t_hat.t()); // shat: B x B
    // row softmax of shat / temperature, with max subtraction
    let mut probs = Array2::zeros((b, b));
    for i in 0..b {
        let row = sims.row(i);
        let max = row.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
        let mut denom = 0.0;
        for j in 0..b {
            let e = ((sims[[i, j]] - max) / temperature).exp();
            probs[[i, j]] = e;
            denom += e;
        }
        for j in 0..b {
            probs[[i, j]] /= denom;
        }
    }
    // coefficients dL/dshat
    let mut coeff = probs;
    for i in 0..b {
        coeff[[i, i]] -= 1.0;
    }
    coeff.mapv_inplace(|v| v / (b as f64 * temperature));

    // dL/dg_i = (sum_j c_ij that_j - (sum_j c_ij shat_ij) ghat_i) / |g_i|
    let target_mix = coeff.dot(&t_hat); // B x d
    let self_mix = (&coeff * &sims).sum_axis(Axis(1)); // B
    let mut d_g = target_mix;
    for i in 0..b {
        let scale = self_mix[i];
        let g_row = g_hat.row(i).to_owned();
        let mut row = d_g.row_mut(i);
        row.scaled_add(-scale, &g_row);
        row.mapv_inplace(|v| v / g_norms[i]);
    }
    let grad_w = d_g.t().dot(queries); // d x d_lm

    let grad_t = if want_target_grad {
        // dL/dt_j = (sum_i c_ij ghat_i - (sum_i c_ij shat_ij) that_j) / |t_j|
        let query_mix = coeff.t().dot(&g_hat); // B x d
        let col_self = (&coeff * &sims).sum_axis(Axis(0)); // B
        let mut d_t = query_mix;
        for j in 0..b {
            let scale = col_self[j];
            let t_row = t_hat.row(j).to_owned();
            let mut row = d_t.row_mut(j);
            row.scaled_add(-scale, &t_row);
            row.mapv_inplace(|v| v / t_norms[j]);
        }
        Some(d_t)
    } else {
        None
    };

    Ok((grad_w, grad_t))
}

/// Exact gradients of `L_RET/2` w.r.t. `w_start` and `w_end`, with the
/// precomputed region targets treated as constants.
pub fn cvmr_grad(head: &RetrievalHead, batch: &RetrievalBatch) -> Result<RetrievalGrads> {
    batch.validate()?;
    let temperature = head.config.temperature;
    let (mut g_start, _) = side_gradient(
        &head.w_start,
        &batch.queries_start,
        &batch.targets_start,
        temperature,
        false,
    )?;
    let (mut g_end, _) = side_gradient(
        &head.w_end,
        &batch.queries_end,
        &batch.targets_end,
        temperature,
        false,
    )?;
    g_start.mapv_inplace(|v| v * 0.5);
    g_end.mapv_inplace(|v| v * 0.5);
    Ok(RetrievalGrads {
        w_start: g_start,
        w_end: g_end,
    })
}

/// Live-target gradients of `L_RET/2`: targets are recomputed from `w_ret`
/// and the loss also differentiates through them, so `w_ret` gets a
/// gradient accumulated over both sides' regions.
pub fn cvmr_grad_live(head: &RetrievalHead, batch: &LiveRetrievalBatch) -> Result<LiveGrads> {
    batch.validate()?;
    let temperature = head.config.temperature;
    let targets_start = live_targets(head, &batch.regions_start)?;
    let targets_end = live_targets(head, &batch.regions_end)?;

    let (mut g_start, dt_start) = side_gradient(
        &head.w_start,
        &batch.queries_start,
        &targets_start,
        temperature,
        true,
    )?;
    let (mut g_end, dt_end) = side_gradient(
        &head.w_end,
        &batch.queries_end,
        &targets_end,
        temperature,
        true,
    )?;
    g_start.mapv_inplace(|v| v * 0.5);
    g_end.mapv_inplace(|v| v * 0.5);

    let mut g_ret = Array2::zeros(head.w_ret.dim());
    for (regions, d_t) in [
        (&batch.regions_start, dt_start.expect("requested")),
        (&batch.regions_end, dt_end.expect("requested")),
    ] {
        for (j, region) in regions.iter().enumerate() {
            let n = region.features.nrows() as f64;
            // t_j = (1/n) sum_f R_pos w_ret x_f, so each frame contributes
            // R_pos^T (dL/dt_j) x_f^T / n; the transpose rotation is the
            // rotation by -pos.
            let upstream = d_t.row(j);
            for f in 0..region.features.nrows() {
                let rotated = rope_rotate(
                    upstream,
                    -f64::from(region.positions[f]),
                    head.config.rope_base,
                );
                let frame = region.features.row(f);
                for (r, &rv) in rotated.iter().enumerate() {
                    for (c, &fv) in frame.iter().enumerate() {
                        g_ret[[r, c]] += 0.5 * rv * fv / n;
                    }
                }
            }
        }
    }

    Ok(LiveGrads {
        w_start: g_start,
        w_end: g_end,
        w_ret: g_ret,
    })
}
