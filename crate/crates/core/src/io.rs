//! Shared file formats: the GMM JSON document, CSV point clouds, and the
//! raw little-endian binary matrix format (u32 rows, u32 cols header
//! followed by row-major f64 payload).

use crate::error::{CoreError, Result};
use crate::gmm::{Dataset, GmmParams};
use crate::linalg::SpdMatrix;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// JSON document for mixture parameters; covariances are stored row-major.
#[derive(Debug, Serialize, Deserialize)]
pub struct GmmDocument {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<f64>>,
}

impl GmmDocument {
    pub fn from_params(theta: &GmmParams) -> Self {
        let d = theta.dim();
        Self {
            weights: theta.weights().to_vec(),
            means: (0..theta.n_components())
                .map(|k| theta.means().row(k).to_vec())
                .collect(),
            covariances: theta
                .covariances()
                .iter()
                .map(|c| c.entries().iter().copied().collect())
                .collect::<Vec<Vec<f64>>>()
                .into_iter()
                .map(|v| {
                    debug_assert_eq!(v.len(), d * d);
                    v
                })
                .collect(),
        }
    }

    pub fn into_params(self) -> Result<GmmParams> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.covariances.len() != k {
            return Err(CoreError::Argument("inconsistent GMM document".into()));
        }
        let d = self.means[0].len();
        let mut means = Array2::<f64>::zeros((k, d));
        for (i, m) in self.means.iter().enumerate() {
            if m.len() != d {
                return Err(CoreError::Argument("ragged means in GMM document".into()));
            }
            for (a, &v) in m.iter().enumerate() {
                means[[i, a]] = v;
            }
        }
        let mut covs = Vec::with_capacity(k);
        for c in &self.covariances {
            if c.len() != d * d {
                return Err(CoreError::Argument("covariance size mismatch".into()));
            }
            let m = Array2::from_shape_vec((d, d), c.clone())
                .map_err(|e| CoreError::Argument(e.to_string()))?;
            covs.push(SpdMatrix::new(m)?);
        }
        GmmParams::new(Array1::from_vec(self.weights), means, covs)
    }
}

pub fn write_gmm_json(path: &Path, theta: &GmmParams) -> Result<()> {
    let doc = GmmDocument::from_params(theta);
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(file, &doc)?;
    Ok(())
}

pub fn read_gmm_json(path: &Path) -> Result<GmmParams> {
    let file = std::fs::File::open(path)?;
    let doc: GmmDocument = serde_json::from_reader(file)?;
    doc.into_params()
}

/// One point per row, comma-separated, no header.
pub fn write_points_csv(path: &Path, points: &Array2<f64>) -> Result<()> {
    let mut out = String::new();
    for i in 0..points.nrows() {
        for j in 0..points.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{:.17e}", points[[i, j]]));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_points_csv(path: &Path) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| {
            CoreError::Argument(format!("csv parse error on line {}: {e}", lineno + 1))
        })?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(CoreError::Argument(format!(
                    "ragged csv row on line {}",
                    lineno + 1
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CoreError::Argument("empty csv".into()));
    }
    let (n, d) = (rows.len(), rows[0].len());
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, d), flat).map_err(|e| CoreError::Argument(e.to_string()))
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    Ok(Dataset::new_unchecked(read_points_csv(path)?))
}

/// Binary matrix: 8-byte header (rows, cols as little-endian u32) followed
/// by row-major little-endian f64 entries. Datasets use rows = n, cols = d.
pub fn write_matrix_bin(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    let (r, c) = (m.nrows() as u32, m.ncols() as u32);
    file.write_all(&r.to_le_bytes())?;
    file.write_all(&c.to_le_bytes())?;
    let mut buf = Vec::with_capacity(m.len() * 8);
    for v in m.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_matrix_bin(path: &Path) -> Result<Array2<f64>> {
    let mut file = std::fs::File::open(path)?;
    let mut header = [0u8; 8];
    file.read_exact(&mut header)?;
    let r = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
    let c = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    if payload.len() != r * c * 8 {
        return Err(CoreError::Argument(format!(
            "binary matrix payload has {} bytes, expected {}",
            payload.len(),
            r * c * 8
        )));
    }
    let mut flat = Vec::with_capacity(r * c);
    for chunk in payload.chunks_exact(8) {
        flat.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    Array2::from_shape_vec((r, c), flat).map_err(|e| CoreError::Argument(e.to_string()))
}

pub fn write_dataset_bin(path: &Path, x: &Dataset) -> Result<()> {
    write_matrix_bin(path, x.points())
}

pub fn read_dataset_bin(path: &Path) -> Result<Dataset> {
    Ok(Dataset::new_unchecked(read_matrix_bin(path)?))
}
