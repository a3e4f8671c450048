//! The shared retrieval space.
//!
//! Token hidden states and frame features are projected into a common
//! d-dimensional space by three linear maps: `w_start` and `w_end` for the
//! dedicated start/end token states, `w_ret` for frame features. Frame
//! projections additionally get a rotary temporal encoding using the frame's
//! position in the video:
//!
//! ```text
//! g_start = W_start · h_start          g_end = W_end · h_end
//! v_frame(f, pos) = RoPE(W_ret · f, pos)
//! ```
//!
//! Retrieval targets are region averages: the mean `v_frame` over the first
//! (or last) `n_region` kept frames of a moment. Similarity is cosine; all
//! reference-path arithmetic is f64.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plan::FrameInterval;
use crate::vecset::{DimKey, VectorSet};

pub const DEFAULT_RETRIEVAL_DIM: usize = 512;
pub const DEFAULT_REGION_WIDTH: usize = 5;
pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;
pub const DEFAULT_TEMPERATURE: f64 = 0.07;

/// Dimensions and scalars of the retrieval space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    /// Retrieval-space dimension; must be even (RoPE rotates pairs).
    pub d: usize,
    /// LM hidden dimension (token-side input).
    pub d_lm: usize,
    /// Frame-feature dimension (vision-side input).
    pub d_fv: usize,
    /// Region width N for start/end targets.
    pub n_region: usize,
    pub rope_base: f64,
    pub temperature: f64,
}

impl RetrievalConfig {
    pub fn new(d: usize, d_lm: usize, d_fv: usize) -> Result<Self> {
        let config = RetrievalConfig {
            d,
            d_lm,
            d_fv,
            n_region: DEFAULT_REGION_WIDTH,
            rope_base: DEFAULT_ROPE_BASE,
            temperature: DEFAULT_TEMPERATURE,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d_lm == 0 || self.d_fv == 0 {
            return Err(Error::Config("all dimensions must be positive".into()));
        }
        if self.d % 2 != 0 {
            return Err(Error::Config(format!(
                "retrieval dimension must be even for RoPE, got {}",
                self.d
            )));
        }
        if self.n_region == 0 {
            return Err(Error::Config("n_region must be positive".into()));
        }
        if !(self.rope_base > 0.0) || !self.rope_base.is_finite() {
            return Err(Error::Config(format!(
                "rope_base must be a positive real, got {}",
                self.rope_base
            )));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!(
                "temperature must be a positive real, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// The learned projections of the retrieval space.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalHead {
    /// d x d_lm
    pub w_start: Array2<f64>,
    /// d x d_lm
    pub w_end: Array2<f64>,
    /// d x d_fv
    pub w_ret: Array2<f64>,
    pub config: RetrievalConfig,
}

impl RetrievalHead {
    pub fn new(
        w_start: Array2<f64>,
        w_end: Array2<f64>,
        w_ret: Array2<f64>,
        config: RetrievalConfig,
    ) -> Result<Self> {
        config.validate()?;
        let head = RetrievalHead {
            w_start,
            w_end,
            w_ret,
            config,
        };
        head.validate()?;
        Ok(head)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        for (name, m, rows, cols) in [
            ("w_start", &self.w_start, c.d, c.d_lm),
            ("w_end", &self.w_end, c.d, c.d_lm),
            ("w_ret", &self.w_ret, c.d, c.d_fv),
        ] {
            if m.dim() != (rows, cols) {
                return Err(Error::Shape(format!(
                    "{name} is {:?}, expected ({rows}, {cols})",
                    m.dim()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{name} has a non-finite entry")));
            }
        }
        Ok(())
    }

    /// Seeded random initialization: Gaussian token projections scaled by
    /// 1/sqrt(d_lm), and a semi-orthogonal `w_ret` (orthonormal rows when
    /// d <= d_fv, orthonormal columns otherwise).
    pub fn init_seeded(config: RetrievalConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let token_scale = 1.0 / (config.d_lm as f64).sqrt();
        let mut gaussian = |rows: usize, cols: usize, scale: f64| {
            Array2::from_shape_fn((rows, cols), |_| scale * sample_standard_normal(&mut rng))
        };
        let w_start = gaussian(config.d, config.d_lm, token_scale);
        let w_end = gaussian(config.d, config.d_lm, token_scale);
        let raw = gaussian(config.d, config.d_fv, 1.0);
        let w_ret = semi_orthogonalize(raw);
        RetrievalHead::new(w_start, w_end, w_ret, config)
    }
}

fn sample_standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; two uniforms per sample keeps the stream layout simple
    // and reproducible.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Gram-Schmidt over the shorter side: rows if rows <= cols, else columns.
fn semi_orthogonalize(mut m: Array2<f64>) -> Array2<f64> {
    let transpose = m.nrows() > m.ncols();
    if transpose {
        m = m.reversed_axes().to_owned();
    }
    let rows = m.nrows();
    for i in 0..rows {
        for j in 0..i {
            let proj = m.row(i).dot(&m.row(j));
            let prev = m.row(j).to_owned();
            let mut row = m.row_mut(i);
            row.scaled_add(-proj, &prev);
        }
        let norm = m.row(i).dot(&m.row(i)).sqrt();
        if norm > 1e-12 {
            m.row_mut(i).mapv_inplace(|v| v / norm);
        }
    }
    if transpose {
        m.reversed_axes().to_owned()
    } else {
        m
    }
}

/// Per-frame feature vectors for one video, in strictly increasing frame
/// order. Frame indices are raw video positions and survive subsampling.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEmbeddingSet {
    pub video_id: String,
    indices: Vec<u32>,
    /// len x d_fv
    features: Array2<f64>,
}

impl FrameEmbeddingSet {
    pub fn new(video_id: impl Into<String>, indices: Vec<u32>, features: Array2<f64>) -> Result<Self> {
        let video_id = video_id.into();
        if indices.len() != features.nrows() {
            return Err(Error::Shape(format!(
                "{video_id}: {} indices but {} feature rows",
                indices.len(),
                features.nrows()
            )));
        }
        if indices.is_empty() {
            return Err(Error::Degenerate(format!("{video_id}: empty frame set")));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invariant(
                &video_id,
                "frame indices must be strictly increasing",
            ));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{video_id}: non-finite feature")));
        }
        Ok(FrameEmbeddingSet {
            video_id,
            indices,
            features,
        })
    }

    pub fn from_vecset(set: VectorSet) -> Result<Self> {
        if set.dim_key != DimKey::FrameFeature {
            return Err(Error::InvalidInput(format!(
                "{}: expected a frame-feature file (d_fv header)",
                set.video_id
            )));
        }
        FrameEmbeddingSet::new(set.video_id, set.indices, set.data)
    }

    pub fn to_vecset(&self) -> VectorSet {
        VectorSet {
            video_id: self.video_id.clone(),
            dim_key: DimKey::FrameFeature,
            indices: self.indices.clone(),
            data: self.features.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn d_fv(&self) -> usize {
        self.features.ncols()
    }

    pub fn frame_indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn feature(&self, row: usize) -> ArrayView1<'_, f64> {
        self.features.row(row)
    }

    /// Row position of a raw frame index, if that frame is kept.
    pub fn position_of(&self, frame: u32) -> Option<usize> {
        self.indices.binary_search(&frame).ok()
    }

    /// Row positions of kept frames inside a moment (inclusive bounds).
    pub fn positions_in(&self, moment: &FrameInterval) -> Vec<usize> {
        let lo = self.indices.partition_point(|&f| f < moment.start_frame);
        let hi = self.indices.partition_point(|&f| f <= moment.end_frame);
        (lo..hi).collect()
    }
}

/// The LM's output states for the two dedicated retrieval tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenHiddenStates {
    pub h_rets: Array1<f64>,
    pub h_rete: Array1<f64>,
}

impl TokenHiddenStates {
    pub fn new(h_rets: Array1<f64>, h_rete: Array1<f64>) -> Result<Self> {
        if h_rets.len() != h_rete.len() {
            return Err(Error::Shape(format!(
                "token states differ in length: {} vs {}",
                h_rets.len(),
                h_rete.len()
            )));
        }
        if h_rets.iter().chain(h_rete.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("token hidden state".into()));
        }
        Ok(TokenHiddenStates { h_rets, h_rete })
    }
}

/// Rotates consecutive pairs `(v[2i], v[2i+1])` by `pos * base^(-2i/d)`.
/// Length-preserving; `pos = 0` is the identity.
pub fn rope_encode(v: ArrayView1<'_, f64>, pos: u32, base: f64) -> Result<Array1<f64>> {
    let d = v.len();
    if d % 2 != 0 {
        return Err(Error::Shape(format!("rope needs even length, got {d}")));
    }
    if !(base > 0.0) || !base.is_finite() {
        return Err(Error::Config(format!("rope base must be positive, got {base}")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("rope input".into()));
    }
    Ok(rope_rotate(v, f64::from(pos), base))
}

/// Unchecked pair rotation with a signed position; negative `pos` applies
/// the transpose (inverse) rotation. Gradient code needs the transpose.
pub(crate) fn rope_rotate(v: ArrayView1<'_, f64>, pos: f64, base: f64) -> Array1<f64> {
    let d = v.len();
    let mut out = Array1::zeros(d);
    for i in 0..d / 2 {
        let theta = base.powf(-2.0 * i as f64 / d as f64);
        let (sin, cos) = (pos * theta).sin_cos();
        let (x, y) = (v[2 * i], v[2 * i + 1]);
        out[2 * i] = x * cos - y * sin;
        out[2 * i + 1] = x * sin + y * cos;
    }
    out
}

/// `v_frame`: projects a frame feature into the retrieval space and applies
/// the rotary encoding at the frame's video position.
pub fn project_frame(
    head: &RetrievalHead,
    feature: ArrayView1<'_, f64>,
    pos: u32,
) -> Result<Array1<f64>> {
    if feature.len() != head.config.d_fv {
        return Err(Error::Shape(format!(
            "frame feature has length {}, expected d_fv = {}",
            feature.len(),
            head.config.d_fv
        )));
    }
    let projected = head.w_ret.dot(&feature);
    rope_encode(projected.view(), pos, head.config.rope_base)
}

/// Projects the retrieval-token states: `g_start = W_start·h_rets`,
/// `g_end = W_end·h_rete`. No rotary encoding on the token side.
pub fn project_tokens(
    head: &RetrievalHead,
    tokens: &TokenHiddenStates,
) -> Result<(Array1<f64>, Array1<f64>)> {
    if tokens.h_rets.len() != head.config.d_lm {
        return Err(Error::Shape(format!(
            "token state has length {}, expected d_lm = {}",
            tokens.h_rets.len(),
            head.config.d_lm
        )));
    }
    Ok((head.w_start.dot(&tokens.h_rets), head.w_end.dot(&tokens.h_rete)))
}

/// Cosine similarity. Zero-norm inputs are a degenerate-input error rather
/// than a silent NaN.
pub fn cosine_sim(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cosine over different lengths: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine of a zero vector".into()));
    }
    Ok(a.dot(&b) / (na * nb))
}

/// Which end of a moment a region target describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionSide {
    Start,
    End,
}

/// The contrastive target for one moment side: the mean `v_frame` over the
/// first (side = start) or last (side = end) `n_region` kept frames of the
/// moment. Moments shorter than `n_region` average all their kept frames.
pub fn region_target(
    frames: &FrameEmbeddingSet,
    head: &RetrievalHead,
    moment: &FrameInterval,
    side: RegionSide,
) -> Result<Array1<f64>> {
    let rows = frames.positions_in(moment);
    if rows.is_empty() {
        return Err(Error::Degenerate(format!(
            "{}: moment {} contains no kept frames",
            frames.video_id, moment
        )));
    }
    let n_eff = head.config.n_region.min(rows.len());
    let picked: &[usize] = match side {
        RegionSide::Start => &rows[..n_eff],
        RegionSide::End => &rows[rows.len() - n_eff..],
    };
    let mut acc = Array1::zeros(head.config.d);
    for &row in picked {
        let v = project_frame(head, frames.feature(row), frames.frame_indices()[row])?;
        acc += &v;
    }
    Ok(acc / n_eff as f64)
}

/// Cosine similarity of every kept frame's `v_frame` against a query
/// embedding, in frame order.
pub fn similarity_profile(
    frames: &FrameEmbeddingSet,
    head: &RetrievalHead,
    g: ArrayView1<'_, f64>,
) -> Result<Vec<(u32, f64)>> {
    let mut profile = Vec::with_capacity(frames.len());
    for row in 0..frames.len() {
        let frame = frames.frame_indices()[row];
        let v = project_frame(head, frames.feature(row), frame)?;
        profile.push((frame, cosine_sim(v.view(), g)?));
    }
    Ok(profile)
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    d: usize,
    d_lm: usize,
    d_fv: usize,
    n_region: usize,
    rope_base: f64,
    temperature: f64,
}

/// Saves a head checkpoint: JSON config header line followed by the three
/// matrices as row-major little-endian f64, in order w_start, w_end, w_ret.
pub fn save_head(path: &Path, head: &RetrievalHead) -> Result<()> {
    head.validate()?;
    let c = &head.config;
    let header = CheckpointHeader {
        d: c.d,
        d_lm: c.d_lm,
        d_fv: c.d_fv,
        n_region: c.n_region,
        rope_base: c.rope_base,
        temperature: c.temperature,
    };
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &header)
        .map_err(|e| Error::InvalidInput(format!("header serialize failed: {e}")))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    for m in [&head.w_start, &head.w_end, &head.w_ret] {
        for value in m.iter() {
            w.write_all(&value.to_le_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Loads a head checkpoint written by [`save_head`].
pub fn load_head(path: &Path) -> Result<RetrievalHead> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header_bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r.read(&mut byte).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::parse(
                path.display().to_string(),
                1,
                "missing newline after checkpoint header",
            ));
        }
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
    }
    let h: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::parse(path.display().to_string(), 1, e.to_string()))?;
    let config = RetrievalConfig {
        d: h.d,
        d_lm: h.d_lm,
        d_fv: h.d_fv,
        n_region: h.n_region,
        rope_base: h.rope_base,
        temperature: h.temperature,
    };
    config.validate()?;

    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    let expected = (2 * h.d * h.d_lm + h.d * h.d_fv) * 8;
    if payload.len() != expected {
        return Err(Error::parse(
            path.display().to_string(),
            1,
            format!("payload is {} bytes, expected {expected}", payload.len()),
        ));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let token = h.d * h.d_lm;
    let take = |range: std::ops::Range<usize>, cols: usize| {
        Array2::from_shape_vec((h.d, cols), values[range].to_vec())
            .map_err(|e| Error::Shape(e.to_string()))
    };
    let w_start = take(0..token, h.d_lm)?;
    let w_end = take(token..2 * token, h.d_lm)?;
    let w_ret = take(2 * token..2 * token + h.d * h.d_fv, h.d_fv)?;
    RetrievalHead::new(w_start, w_end, w_ret, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny_config(d: usize, d_lm: usize, d_fv: usize) -> RetrievalConfig {
        RetrievalConfig::new(d, d_lm, d_fv).unwrap()
    }

    fn identity_padded(rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |(i, j)| if i == j { 1.0 } else { 0.0 })
    }

    #[test]
    fn rope_at_position_zero_is_identity() {
        let v = array![0.3, -1.2, 4.0, 0.0];
        let out = rope_encode(v.view(), 0, DEFAULT_ROPE_BASE).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn rope_unit_rotation_in_two_dims() {
        // d = 2 makes theta_0 = base^0 = 1, so pos 1 rotates by one radian.
        let v = array![1.0, 0.0];
        let out = rope_encode(v.view(), 1, 10_000.0).unwrap();
        assert!((out[0] - 1f64.cos()).abs() < 1e-15);
        assert!((out[1] - 1f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn rope_rejects_odd_dimension() {
        let v = array![1.0, 2.0, 3.0];
        assert!(rope_encode(v.view(), 1, 10_000.0).is_err());
    }

    #[test]
    fn project_frame_identity_at_pos_zero() {
        let config = tiny_config(4, 3, 3);
        let head = RetrievalHead::new(
            Array2::zeros((4, 3)),
            Array2::zeros((4, 3)),
            identity_padded(4, 3),
            config,
        )
        .unwrap();
        let feature = array![2.0, -1.0, 0.5];
        let out = project_frame(&head, feature.view(), 0).unwrap();
        assert_eq!(out, array![2.0, -1.0, 0.5, 0.0]);
    }

    #[test]
    fn project_frame_zero_feature_is_zero() {
        let head = RetrievalHead::init_seeded(tiny_config(6, 4, 5), 11).unwrap();
        let feature = Array1::zeros(5);
        for pos in [0u32, 3, 99] {
            let out = project_frame(&head, feature.view(), pos).unwrap();
            assert!(out.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn project_tokens_extracts_columns() {
        let config = tiny_config(4, 3, 2);
        let w_start = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0], [10.0, 11.0, 12.0]];
        let head = RetrievalHead::new(
            w_start.clone(),
            Array2::zeros((4, 3)),
            Array2::zeros((4, 2)),
            config,
        )
        .unwrap();
        let tokens = TokenHiddenStates::new(array![1.0, 0.0, 0.0], array![0.0, 1.0, 0.0]).unwrap();
        let (g_start, g_end) = project_tokens(&head, &tokens).unwrap();
        assert_eq!(g_start, w_start.column(0).to_owned());
        assert!(g_end.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cosine_basic_values() {
        let a = array![1.0, 1.0, 0.0];
        let b = array![1.0, 0.0, 0.0];
        let c = array![0.0, 1.0, 0.0];
        assert!((cosine_sim(a.view(), a.view()).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_sim(b.view(), c.view()).unwrap()).abs() < 1e-15);
        let expected = 1.0 / 2f64.sqrt();
        assert!((cosine_sim(a.view(), b.view()).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn cosine_rejects_zero_vector() {
        let a = array![0.0, 0.0];
        let b = array![1.0, 0.0];
        assert!(matches!(
            cosine_sim(a.view(), b.view()),
            Err(Error::Degenerate(_))
        ));
    }

    fn planted_frames(indices: &[u32], d_fv: usize) -> FrameEmbeddingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let features = Array2::from_shape_fn((indices.len(), d_fv), |_| rng.gen_range(-1.0..1.0));
        FrameEmbeddingSet::new("vid", indices.to_vec(), features).unwrap()
    }

    #[test]
    fn region_target_single_frame_is_that_frame() {
        let head = RetrievalHead::init_seeded(tiny_config(6, 4, 3), 2).unwrap();
        let frames = planted_frames(&[5, 9, 14], 3);
        let moment = FrameInterval::new(9, 9).unwrap();
        let start = region_target(&frames, &head, &moment, RegionSide::Start).unwrap();
        let end = region_target(&frames, &head, &moment, RegionSide::End).unwrap();
        let expected = project_frame(&head, frames.feature(1), 9).unwrap();
        assert_eq!(start, expected);
        assert_eq!(end, expected);
    }

    #[test]
    fn region_target_means_first_n_kept_frames() {
        let mut config = tiny_config(6, 4, 3);
        config.n_region = 2;
        let head = RetrievalHead::init_seeded(config, 3).unwrap();
        let frames = planted_frames(&[10, 30, 50], 3);
        let moment = FrameInterval::new(10, 50).unwrap();
        let start = region_target(&frames, &head, &moment, RegionSide::Start).unwrap();
        let v10 = project_frame(&head, frames.feature(0), 10).unwrap();
        let v30 = project_frame(&head, frames.feature(1), 30).unwrap();
        let expected = (&v10 + &v30) / 2.0;
        for (a, b) in start.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn region_target_clamps_to_short_moments() {
        // n_region 5 over a 3-frame moment: both sides average the same 3 frames.
        let head = RetrievalHead::init_seeded(tiny_config(6, 4, 3), 4).unwrap();
        let frames = planted_frames(&[0, 20, 40, 60, 80], 3);
        let moment = FrameInterval::new(20, 60).unwrap();
        let start = region_target(&frames, &head, &moment, RegionSide::Start).unwrap();
        let end = region_target(&frames, &head, &moment, RegionSide::End).unwrap();
        assert_eq!(start, end);
    }

    #[test]
    fn region_target_rejects_empty_moment() {
        let head = RetrievalHead::init_seeded(tiny_config(6, 4, 3), 4).unwrap();
        let frames = planted_frames(&[0, 20, 40], 3);
        let moment = FrameInterval::new(25, 35).unwrap();
        assert!(region_target(&frames, &head, &moment, RegionSide::Start).is_err());
    }

    #[test]
    fn profile_is_one_at_matching_frame() {
        let head = RetrievalHead::init_seeded(tiny_config(8, 4, 6), 7).unwrap();
        let frames = planted_frames(&[0, 7, 12, 19], 6);
        let g = project_frame(&head, frames.feature(2), 12).unwrap();
        let profile = similarity_profile(&frames, &head, g.view()).unwrap();
        assert_eq!(profile.len(), 4);
        assert_eq!(profile[2].0, 12);
        assert!((profile[2].1 - 1.0).abs() < 1e-12);
        assert!(profile.iter().all(|&(_, s)| (-1.0..=1.0).contains(&s)));
    }

    #[test]
    fn single_frame_video_gives_length_one_profile() {
        let head = RetrievalHead::init_seeded(tiny_config(8, 4, 6), 8).unwrap();
        let frames = planted_frames(&[3], 6);
        let g = project_frame(&head, frames.feature(0), 3).unwrap();
        let profile = similarity_profile(&frames, &head, g.view()).unwrap();
        assert_eq!(profile.len(), 1);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.ckpt");
        let head = RetrievalHead::init_seeded(tiny_config(8, 6, 4), 99).unwrap();
        save_head(&path, &head).unwrap();
        let back = load_head(&path).unwrap();
        assert_eq!(back, head);
    }

    #[test]
    fn seeded_init_is_deterministic_and_semi_orthogonal() {
        let config = tiny_config(4, 6, 8);
        let a = RetrievalHead::init_seeded(config, 42).unwrap();
        let b = RetrievalHead::init_seeded(config, 42).unwrap();
        assert_eq!(a, b);
        // rows of w_ret orthonormal when d <= d_fv
        let gram = a.w_ret.dot(&a.w_ret.t());
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - expected).abs() < 1e-10);
            }
        }
    }
}
