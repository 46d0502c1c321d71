//! Binary field and kernel files with JSON sidecars.
//!
//! Payloads are raw little-endian complex128 values (real part, then
//! imaginary part), row-major over grid axes. Each `name.bin` is accompanied by
//! a `name.json` describing its shape.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use passim_core::grid::{Field, Grid};
use passim_core::stochastic::CovKernel;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RunError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Sidecar {
    Field { dim: usize, n_per_axis: usize, extent: Vec<f64> },
    Kernel { n_total: usize, hermitian: bool },
}

pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

pub fn encode_complex(values: &[Complex64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 16);
    for v in values {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    out
}

pub fn decode_complex(bytes: &[u8]) -> Option<Vec<Complex64>> {
    if bytes.len() % 16 != 0 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().unwrap());
                let im = f64::from_le_bytes(c[8..].try_into().unwrap());
                Complex64::new(re, im)
            })
            .collect(),
    )
}

fn write_pair(bin: &Path, payload: &[Complex64], sidecar: &Sidecar) -> Result<()> {
    fs::write(bin, encode_complex(payload)).map_err(|e| RunError::io(bin, e))?;
    let json = sidecar_path(bin);
    let mut text = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    text.push('\n');
    fs::write(&json, text).map_err(|e| RunError::io(&json, e))
}

fn read_pair(bin: &Path) -> Result<(Vec<Complex64>, Sidecar)> {
    let json = sidecar_path(bin);
    let text = fs::read_to_string(&json).map_err(|e| RunError::io(&json, e))?;
    let sidecar: Sidecar =
        serde_json::from_str(&text).map_err(|e| RunError::Format { path: json.clone(), msg: e.to_string() })?;
    let bytes = fs::read(bin).map_err(|e| RunError::io(bin, e))?;
    let values = decode_complex(&bytes)
        .ok_or_else(|| RunError::Format { path: bin.into(), msg: "length is not a multiple of 16 bytes".into() })?;
    Ok((values, sidecar))
}

pub fn write_field(bin: &Path, field: &Field) -> Result<()> {
    let g = field.grid();
    let sidecar =
        Sidecar::Field { dim: g.dim(), n_per_axis: g.n_per_axis(), extent: g.extents().to_vec() };
    write_pair(bin, field.values(), &sidecar)
}

pub fn read_field(bin: &Path) -> Result<Field> {
    let (values, sidecar) = read_pair(bin)?;
    let bad = |msg: String| RunError::Format { path: bin.into(), msg };
    match sidecar {
        Sidecar::Field { dim, n_per_axis, extent } => {
            let grid = Grid::new(dim, n_per_axis, &extent).map_err(|e| bad(e.to_string()))?;
            Field::new(grid, values).map_err(|e| bad(e.to_string()))
        }
        Sidecar::Kernel { .. } => Err(bad("sidecar describes a kernel, not a field".into())),
    }
}

pub fn write_kernel(bin: &Path, kernel: &CovKernel) -> Result<()> {
    let sidecar = Sidecar::Kernel { n_total: kernel.grid().n_total(), hermitian: kernel.hermitian_flag() };
    write_pair(bin, &kernel.to_row_major(), &sidecar)
}

/// The sidecar carries no geometry, so the grid is supplied by the caller.
pub fn read_kernel(bin: &Path, grid: Grid) -> Result<CovKernel> {
    let (values, sidecar) = read_pair(bin)?;
    let bad = |msg: String| RunError::Format { path: bin.into(), msg };
    match sidecar {
        Sidecar::Kernel { n_total, hermitian } => {
            if n_total != grid.n_total() {
                return Err(bad(format!("kernel has n_total {n_total}, grid has {}", grid.n_total())));
            }
            CovKernel::from_row_major(grid, &values, hermitian).map_err(|e| bad(e.to_string()))
        }
        Sidecar::Field { .. } => Err(bad("sidecar describes a field, not a kernel".into())),
    }
}
