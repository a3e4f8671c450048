//! Token NLL, InfoNCE, and the combined retrieval loss.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::retrieval::{cosine_sim, RetrievalHead};

/// One generation step: a probability distribution over the vocabulary and
/// the gold token id.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenStep {
    pub distribution: Vec<f64>,
    pub target_id: usize,
}

/// Per-step output distributions for one generated response. The model that
/// produced them is out of scope; only Eq-style NLL is computed here.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TokenProbTable {
    pub steps: Vec<TokenStep>,
}

impl TokenProbTable {
    pub fn new(steps: Vec<TokenStep>) -> Result<Self> {
        let table = TokenProbTable { steps };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, step) in self.steps.iter().enumerate() {
            if step.target_id >= step.distribution.len() {
                return Err(Error::InvalidInput(format!(
                    "step {i}: target id {} outside vocabulary of {}",
                    step.target_id,
                    step.distribution.len()
                )));
            }
            if step.distribution.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "step {i}: distribution has a negative or non-finite entry"
                )));
            }
            let total: f64 = step.distribution.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "step {i}: distribution sums to {total}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// Negative log-likelihood of the target tokens, natural log:
/// `-sum_t ln p_t(target_t)`. A zero-probability target is an explicit
/// error rather than a silent `inf`.
pub fn nll_loss(table: &TokenProbTable) -> Result<f64> {
    table.validate()?;
    let mut total = 0.0;
    for (step, s) in table.steps.iter().enumerate() {
        let p = s.distribution[s.target_id];
        if p == 0.0 {
            return Err(Error::InfiniteLoss { step });
        }
        total -= p.ln();
    }
    Ok(total)
}

/// InfoNCE over a precomputed similarity matrix whose diagonal holds the
/// positives: `mean_i -log( exp(s_ii/t) / sum_j exp(s_ij/t) )`, computed
/// with per-row max subtraction.
pub fn infonce(sim_matrix: &Array2<f64>, temperature: f64) -> Result<f64> {
    let b = sim_matrix.nrows();
    if sim_matrix.ncols() != b {
        return Err(Error::Shape(format!(
            "similarity matrix must be square, got {:?}",
            sim_matrix.dim()
        )));
    }
    if b < 2 {
        return Err(Error::InvalidInput(format!(
            "InfoNCE needs in-batch negatives: batch size {b} < 2"
        )));
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if sim_matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("similarity matrix entry".into()));
    }

    let mut total = 0.0;
    for i in 0..b {
        let row = sim_matrix.row(i);
        let max = row.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v)) / temperature;
        let lse: f64 = row
            .iter()
            .map(|&v| (v / temperature - max).exp())
            .sum::<f64>()
            .ln()
            + max;
        total += lse - row[i] / temperature;
    }
    Ok(total / b as f64)
}

/// One contrastive training batch. Queries are raw token hidden states;
/// targets are precomputed region averages already living in the retrieval
/// space. Row i of each matrix belongs to sample i; the diagonal pairs are
/// the positives.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalBatch {
    /// B x d_lm
    pub queries_start: Array2<f64>,
    /// B x d_lm
    pub queries_end: Array2<f64>,
    /// B x d
    pub targets_start: Array2<f64>,
    /// B x d
    pub targets_end: Array2<f64>,
}

impl RetrievalBatch {
    pub fn batch_size(&self) -> usize {
        self.queries_start.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.batch_size();
        if b < 2 {
            return Err(Error::InvalidInput(format!(
                "retrieval batch needs >= 2 samples for in-batch negatives, got {b}"
            )));
        }
        for (name, m) in [
            ("queries_end", &self.queries_end),
            ("targets_start", &self.targets_start),
            ("targets_end", &self.targets_end),
        ] {
            if m.nrows() != b {
                return Err(Error::Shape(format!(
                    "{name} has {} rows, expected batch size {b}",
                    m.nrows()
                )));
            }
        }
        if self.queries_end.ncols() != self.queries_start.ncols() {
            return Err(Error::Shape("query matrices differ in width".into()));
        }
        if self.targets_end.ncols() != self.targets_start.ncols() {
            return Err(Error::Shape("target matrices differ in width".into()));
        }
        Ok(())
    }
}

/// Pairwise cosine of projected queries against targets: entry (i, j) is
/// `cos(W q_i, t_j)`.
pub(crate) fn projected_sim_matrix(
    w: &Array2<f64>,
    queries: &Array2<f64>,
    targets: &Array2<f64>,
) -> Result<Array2<f64>> {
    if queries.ncols() != w.ncols() {
        return Err(Error::Shape(format!(
            "queries have width {}, projection expects {}",
            queries.ncols(),
            w.ncols()
        )));
    }
    if targets.ncols() != w.nrows() {
        return Err(Error::Shape(format!(
            "targets have width {}, retrieval space is {}",
            targets.ncols(),
            w.nrows()
        )));
    }
    let projected = queries.dot(&w.t()); // B x d
    let b = queries.nrows();
    let mut sims = Array2::zeros((b, b));
    for i in 0..b {
        for j in 0..b {
            sims[[i, j]] = cosine_sim(projected.row(i), targets.row(j))?;
        }
    }
    Ok(sims)
}

/// The pieces of the combined loss, reported alongside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub ret_start: f64,
    pub ret_end: f64,
    pub pgag: f64,
}

/// Combined moment-retrieval loss: `L_RET/2 + L_PGAG`, where `L_RET` is the
/// sum of the start-side and end-side InfoNCE terms and the text term is
/// zero when no probability table is supplied.
pub fn cvmr_loss(
    head: &RetrievalHead,
    batch: &RetrievalBatch,
    pgag: Option<&TokenProbTable>,
) -> Result<(f64, LossParts)> {
    batch.validate()?;
    let temperature = head.config.temperature;
    let sims_start = projected_sim_matrix(&head.w_start, &batch.queries_start, &batch.targets_start)?;
    let sims_end = projected_sim_matrix(&head.w_end, &batch.queries_end, &batch.targets_end)?;
    let ret_start = infonce(&sims_start, temperature)?;
    let ret_end = infonce(&sims_end, temperature)?;
    let pgag_loss = match pgag {
        Some(table) => nll_loss(table)?,
        None => 0.0,
    };
    let parts = LossParts {
        ret_start,
        ret_end,
        pgag: pgag_loss,
    };
    Ok(((ret_start + ret_end) / 2.0 + pgag_loss, parts))
}
