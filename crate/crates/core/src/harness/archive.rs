//! On-disk ground-state archive: `meta.json` plus little-endian `f64` blobs.
//!
//! Orbitals are stored column-major as `N_b × N_states` (`phi_re.bin`,
//! `phi_im.bin`); densities and the local potential use the cube layout with
//! x fastest (`rho.bin`, `rho_in.bin`, `vloc.bin`).

use std::fs;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{DysonError, Result};
use crate::groundstate::{GroundState, GroundStateParts, ModelSpec};

pub const FORMAT_VERSION: u32 = 1;
pub const ENDIANNESS: &str = "little";

const PHI_RE: &str = "phi_re.bin";
const PHI_IM: &str = "phi_im.bin";
const RHO: &str = "rho.bin";
const RHO_IN: &str = "rho_in.bin";
const VLOC: &str = "vloc.bin";
const META: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMeta {
    pub format_version: u32,
    pub endianness: String,
    pub model: ModelSpec,
    pub e_cut: f64,
    pub cube_dims: [usize; 3],
    pub n_b: usize,
    pub n_g: usize,
    pub n_occ: usize,
    pub n_states: usize,
    pub eps: Vec<f64>,
    pub occ: Vec<f64>,
    pub fermi_level: f64,
    pub scf_residual: f64,
    pub scf_iterations: usize,
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn encode(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(f64::to_le_bytes).collect()
}

fn read_blob(dir: &Path, name: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(dir.join(name)).map_err(|e| DysonError::Archive(format!("cannot read {name}: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(DysonError::Archive(format!(
            "size mismatch in {name}: expected {} bytes, found {}",
            expected * 8,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn write_archive(dir: &Path, gs: &GroundState) -> Result<()> {
    fs::create_dir_all(dir)?;
    let grids = gs.grids();
    let parts = gs.to_parts();
    let meta = ArchiveMeta {
        format_version: FORMAT_VERSION,
        endianness: ENDIANNESS.into(),
        model: parts.model.clone(),
        e_cut: grids.e_cut(),
        cube_dims: grids.cube_dims(),
        n_b: grids.n_b(),
        n_g: grids.n_g(),
        n_occ: gs.n_occ(),
        n_states: parts.orbitals.len(),
        eps: parts.eps.clone(),
        occ: parts.occ.clone(),
        fermi_level: parts.fermi_level,
        scf_residual: parts.scf_residual,
        scf_iterations: parts.scf_iterations,
    };
    let column_major = |f: fn(&Complex64) -> f64| encode(parts.orbitals.iter().flat_map(|o| o.iter().map(f)));
    write_atomic(&dir.join(PHI_RE), &column_major(|c| c.re))?;
    write_atomic(&dir.join(PHI_IM), &column_major(|c| c.im))?;
    write_atomic(&dir.join(RHO), &encode(parts.rho.iter().copied()))?;
    write_atomic(&dir.join(RHO_IN), &encode(parts.rho_input.iter().copied()))?;
    write_atomic(&dir.join(VLOC), &encode(parts.v_local.iter().copied()))?;
    // meta last, so a complete meta.json implies complete blobs
    write_atomic(&dir.join(META), serde_json::to_string_pretty(&meta)?.as_bytes())?;
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<ArchiveMeta> {
    let text =
        fs::read_to_string(dir.join(META)).map_err(|e| DysonError::Archive(format!("cannot read {META}: {e}")))?;
    let meta: ArchiveMeta = serde_json::from_str(&text)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(DysonError::Archive(format!(
            "format version {} not supported (expected {FORMAT_VERSION})",
            meta.format_version
        )));
    }
    if meta.endianness != ENDIANNESS {
        return Err(DysonError::Archive(format!("unsupported endianness tag '{}'", meta.endianness)));
    }
    Ok(meta)
}

pub fn read_archive(dir: &Path) -> Result<GroundState> {
    let meta = read_meta(dir)?;
    let grids = Arc::new(meta.model.build_grids()?);
    if grids.n_b() != meta.n_b || grids.n_g() != meta.n_g || grids.cube_dims() != meta.cube_dims {
        return Err(DysonError::Archive(format!(
            "grid mismatch: meta has n_b = {}, n_g = {}, rebuilt grids give n_b = {}, n_g = {}",
            meta.n_b,
            meta.n_g,
            grids.n_b(),
            grids.n_g()
        )));
    }
    if meta.eps.len() != meta.n_states || meta.occ.len() != meta.n_occ {
        return Err(DysonError::Archive("eigenvalue or occupation count disagrees with meta".into()));
    }
    let n_b = meta.n_b;
    let re = read_blob(dir, PHI_RE, n_b * meta.n_states)?;
    let im = read_blob(dir, PHI_IM, n_b * meta.n_states)?;
    let orbitals = re
        .chunks_exact(n_b)
        .zip(im.chunks_exact(n_b))
        .map(|(r, i)| r.iter().zip(i).map(|(a, b)| Complex64::new(*a, *b)).collect())
        .collect();
    let parts = GroundStateParts {
        v_local: read_blob(dir, VLOC, meta.n_g)?,
        rho: read_blob(dir, RHO, meta.n_g)?,
        rho_input: read_blob(dir, RHO_IN, meta.n_g)?,
        model: meta.model,
        orbitals,
        eps: meta.eps,
        occ: meta.occ,
        fermi_level: meta.fermi_level,
        scf_residual: meta.scf_residual,
        scf_iterations: meta.scf_iterations,
    };
    GroundState::from_parts(grids, parts)
}
