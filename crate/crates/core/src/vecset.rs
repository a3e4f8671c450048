//! Binary vector-set files: frame features and token hidden states.
//!
//! Layout: one JSON header line, then `count * dim` little-endian 64-bit
//! floats, row-major by frame/record. The header is
//! `{"video_id", "d_fv" | "d_lm", "count", "frame_indices": [...]}` — frame
//! feature files use the `d_fv` dimension key, token hidden-state files use
//! `d_lm` with record ordinals in `frame_indices`.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which dimension key the header carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimKey {
    /// Frame features, header key `d_fv`.
    FrameFeature,
    /// Token hidden states, header key `d_lm`.
    TokenHidden,
}

impl DimKey {
    fn as_str(self) -> &'static str {
        match self {
            DimKey::FrameFeature => "d_fv",
            DimKey::TokenHidden => "d_lm",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    video_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    d_fv: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    d_lm: Option<usize>,
    count: usize,
    frame_indices: Vec<u32>,
}

/// An in-memory vector set: `count` rows of `dim` floats, one per index.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSet {
    pub video_id: String,
    pub dim_key: DimKey,
    pub indices: Vec<u32>,
    /// `indices.len() x dim`, row i belongs to `indices[i]`.
    pub data: Array2<f64>,
}

impl VectorSet {
    pub fn new(
        video_id: impl Into<String>,
        dim_key: DimKey,
        indices: Vec<u32>,
        data: Array2<f64>,
    ) -> Result<Self> {
        if indices.len() != data.nrows() {
            return Err(Error::Shape(format!(
                "{} indices but {} rows",
                indices.len(),
                data.nrows()
            )));
        }
        Ok(VectorSet {
            video_id: video_id.into(),
            dim_key,
            indices,
            data,
        })
    }

    pub fn count(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }
}

/// Writes a vector set: JSON header line + packed little-endian f64 rows.
pub fn write_vector_set(path: &Path, set: &VectorSet) -> Result<()> {
    let header = Header {
        video_id: set.video_id.clone(),
        d_fv: (set.dim_key == DimKey::FrameFeature).then_some(set.dim()),
        d_lm: (set.dim_key == DimKey::TokenHidden).then_some(set.dim()),
        count: set.count(),
        frame_indices: set.indices.clone(),
    };
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &header)
        .map_err(|e| Error::InvalidInput(format!("header serialize failed: {e}")))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    for value in set.data.iter() {
        w.write_all(&value.to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a vector set, validating header consistency and payload length.
pub fn read_vector_set(path: &Path) -> Result<VectorSet> {
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
                "missing newline after header",
            ));
        }
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
    }
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::parse(path.display().to_string(), 1, e.to_string()))?;

    let (dim_key, dim) = match (header.d_fv, header.d_lm) {
        (Some(d), None) => (DimKey::FrameFeature, d),
        (None, Some(d)) => (DimKey::TokenHidden, d),
        _ => {
            return Err(Error::parse(
                path.display().to_string(),
                1,
                "header must carry exactly one of d_fv / d_lm",
            ))
        }
    };
    if header.frame_indices.len() != header.count {
        return Err(Error::parse(
            path.display().to_string(),
            1,
            format!(
                "count {} does not match {} frame_indices",
                header.count,
                header.frame_indices.len()
            ),
        ));
    }

    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    let expected = header.count * dim * 8;
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
    let data = Array2::from_shape_vec((header.count, dim), values)
        .map_err(|e| Error::Shape(e.to_string()))?;

    VectorSet::new(header.video_id, dim_key, header.frame_indices, data)
}
