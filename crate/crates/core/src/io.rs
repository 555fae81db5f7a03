//! Binary field dumps: a flat little-endian float64 array plus a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::lattice::Lattice;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub grid: [usize; 3],
    pub components: Vec<String>,
    /// "component-major; each component is a grid array with the last index fastest"
    pub layout: String,
    /// Real fields store one float64 per value, complex fields interleave (re, im).
    pub complex: bool,
    pub dtype: String,
    /// Rows are the lattice basis vectors a₁, a₂, a₃.
    pub lattice_basis: [[f64; 3]; 3],
    #[serde(default)]
    pub metadata: Value,
}

const LAYOUT: &str = "component-major; each component is a grid array with the last index fastest";

pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Writes the real parts of `values` (one Vec per component) and the sidecar next to `path`.
pub fn write_real_dump(
    path: &Path,
    grid: [usize; 3],
    lattice: &Lattice,
    components: &[String],
    values: &[Vec<f64>],
    metadata: Value,
) -> Result<()> {
    let n = grid.iter().product::<usize>();
    if values.len() != components.len() || values.iter().any(|v| v.len() != n) {
        return Err(Error::Invalid("field dump: component count or length mismatch".into()));
    }
    let mut bytes = Vec::with_capacity(8 * n * values.len());
    for v in values {
        for x in v {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    write_with_sidecar(path, bytes, grid, lattice, components, false, metadata)
}

/// Writes complex values as interleaved (re, im) pairs.
pub fn write_complex_dump(
    path: &Path,
    grid: [usize; 3],
    lattice: &Lattice,
    components: &[String],
    values: &[Vec<crate::linalg::C64>],
    metadata: Value,
) -> Result<()> {
    let n = grid.iter().product::<usize>();
    if values.len() != components.len() || values.iter().any(|v| v.len() != n) {
        return Err(Error::Invalid("field dump: component count or length mismatch".into()));
    }
    let mut bytes = Vec::with_capacity(16 * n * values.len());
    for v in values {
        for x in v {
            bytes.extend_from_slice(&x.re.to_le_bytes());
            bytes.extend_from_slice(&x.im.to_le_bytes());
        }
    }
    write_with_sidecar(path, bytes, grid, lattice, components, true, metadata)
}

fn write_with_sidecar(
    path: &Path,
    bytes: Vec<u8>,
    grid: [usize; 3],
    lattice: &Lattice,
    components: &[String],
    complex: bool,
    metadata: Value,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, bytes)?;
    let side = Sidecar {
        grid,
        components: components.to_vec(),
        layout: LAYOUT.into(),
        complex,
        dtype: "float64-le".into(),
        lattice_basis: lattice.basis.map(|a| [a[0], a[1], a[2]]),
        metadata,
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

/// Reads a dump back as raw float64 values per component (interleaved for complex dumps).
pub fn read_dump(path: &Path) -> Result<(Sidecar, Vec<Vec<f64>>)> {
    let side: Sidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    let bytes = fs::read(path)?;
    let per = side.grid.iter().product::<usize>() * if side.complex { 2 } else { 1 };
    if bytes.len() != 8 * per * side.components.len() {
        return Err(Error::Invalid(format!(
            "field dump {} has {} bytes, sidecar implies {}",
            path.display(),
            bytes.len(),
            8 * per * side.components.len()
        )));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let comps = vals.chunks(per.max(1)).map(|c| c.to_vec()).collect();
    Ok((side, comps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::C64;

    #[test]
    fn real_dump_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/field.bin");
        let grid = [2, 3, 4];
        let vals = vec![(0..24).map(|i| i as f64 * 0.5).collect(), (0..24).map(|i| -(i as f64)).collect()];
        let names = vec!["a".to_string(), "b".to_string()];
        let meta = serde_json::json!({"config_hash": "abc"});
        write_real_dump(&p, grid, &Lattice::standard(), &names, &vals, meta.clone()).unwrap();
        let (side, back) = read_dump(&p).unwrap();
        assert_eq!(back, vals);
        assert_eq!(side.grid, grid);
        assert_eq!(side.metadata, meta);
        assert!(!side.complex);
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 2 * 24 * 8);
    }

    #[test]
    fn complex_dump_interleaves_and_rejects_bad_length() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        let vals = vec![vec![C64::new(1.0, 2.0), C64::new(3.0, -4.0)]];
        write_complex_dump(&p, [2, 1, 1], &Lattice::standard(), &["v".into()], &vals, Value::Null).unwrap();
        let (side, back) = read_dump(&p).unwrap();
        assert!(side.complex);
        assert_eq!(back[0], vec![1.0, 2.0, 3.0, -4.0]);
        assert!(write_real_dump(&p, [2, 2, 1], &Lattice::standard(), &["v".into()], &[vec![0.0; 3]], Value::Null).is_err());
    }
}
