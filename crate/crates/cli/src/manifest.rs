//! On-disk dataset format: a TOML manifest next to raw little-endian `f64`
//! arrays (`X` row-major) and a bit-packed mask.
//!
//! ```toml
//! format_version = 1
//! n = 100
//! p = 4096
//! shape = [16, 16, 16]
//! mask_encoding = "bits-lsb"
//! dtype = "f64"
//! byte_order = "little"
//! x = "X.f64"
//! y = "y.f64"
//! mask = "mask.bin"
//!
//! [ground_truth]
//! w_star = "w_star.f64"
//! sigma = 0.71
//! ```
//!
//! The mask covers the whole `shape` volume in `(x, y, z)` row-major order,
//! eight voxels per byte, least significant bit first, padding bits zero.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use ecko::{Dataset, GridGeometry, GroundTruth};

use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.toml";
const MASK_ENCODING: &str = "bits-lsb";
const DTYPE: &str = "f64";
const BYTE_ORDER: &str = "little";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub n: usize,
    pub p: usize,
    pub shape: [usize; 3],
    pub mask_encoding: String,
    pub dtype: String,
    pub byte_order: String,
    pub x: PathBuf,
    pub y: PathBuf,
    pub mask: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruthBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBlock {
    pub w_star: PathBuf,
    pub sigma: f64,
}

/// Parameters a simulated dataset was drawn with; informational only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationBlock {
    pub n_rois: usize,
    pub roi_size: usize,
    pub roi_amplitudes: Vec<f64>,
    pub target_snr: f64,
    pub smoothing_width: f64,
    pub seed: u64,
}

pub fn f64s_to_bytes(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(f64::to_le_bytes).collect()
}

pub fn bytes_to_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

pub fn pack_mask(mask: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; mask.len().div_ceil(8)];
    for (i, &m) in mask.iter().enumerate() {
        if m {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub fn unpack_mask(bytes: &[u8], len: usize) -> Result<Vec<bool>, CliError> {
    if bytes.len() != len.div_ceil(8) {
        return Err(CliError::Data(format!(
            "mask has {} bytes, expected {}",
            bytes.len(),
            len.div_ceil(8)
        )));
    }
    let mask: Vec<bool> = (0..len).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
    let tail = len % 8;
    if tail != 0 && bytes[len / 8] >> tail != 0 {
        return Err(CliError::Data("mask padding bits are not zero".into()));
    }
    Ok(mask)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn read_file(path: &Path, expected: usize, what: &str) -> Result<Vec<u8>, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("cannot read {what} {}: {e}", path.display())))?;
    if bytes.len() != expected {
        return Err(CliError::Data(format!(
            "{what} file {} has {} bytes, manifest implies {expected}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes)
}

/// Writes `dataset` (which must carry a geometry) and optional truth into
/// `dir`, returning the manifest path.
pub fn write_dataset(
    dir: &Path,
    dataset: &Dataset,
    truth: Option<&GroundTruth>,
    simulation: Option<SimulationBlock>,
) -> Result<PathBuf, CliError> {
    let geometry = dataset
        .geometry()
        .ok_or_else(|| CliError::Usage("dataset has no geometry to write".into()))?;
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        n: dataset.n_samples(),
        p: dataset.n_features(),
        shape: geometry.shape(),
        mask_encoding: MASK_ENCODING.into(),
        dtype: DTYPE.into(),
        byte_order: BYTE_ORDER.into(),
        x: "X.f64".into(),
        y: "y.f64".into(),
        mask: "mask.bin".into(),
        ground_truth: truth.map(|t| GroundTruthBlock {
            w_star: "w_star.f64".into(),
            sigma: t.sigma(),
        }),
        simulation,
    };
    // iter() walks the standard-layout array row by row
    write_file(&dir.join(&manifest.x), &f64s_to_bytes(dataset.x().iter().copied()))?;
    write_file(&dir.join(&manifest.y), &f64s_to_bytes(dataset.y().iter().copied()))?;
    write_file(&dir.join(&manifest.mask), &pack_mask(geometry.mask()))?;
    if let (Some(t), Some(block)) = (truth, &manifest.ground_truth) {
        write_file(&dir.join(&block.w_star), &f64s_to_bytes(t.w_star().iter().copied()))?;
    }
    let text = toml::to_string(&manifest).map_err(|e| CliError::Internal(format!("manifest encoding: {e}")))?;
    let path = dir.join(MANIFEST_NAME);
    write_file(&path, text.as_bytes())?;
    Ok(path)
}

/// Loads a manifest and its arrays, checking every declared size.
pub fn read_dataset(manifest_path: &Path) -> Result<(Dataset, Option<GroundTruth>, DatasetManifest), CliError> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|e| CliError::Data(format!("cannot read manifest {}: {e}", manifest_path.display())))?;
    let manifest: DatasetManifest =
        toml::from_str(&text).map_err(|e| CliError::Data(format!("corrupt manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(CliError::Data(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    if manifest.dtype != DTYPE || manifest.byte_order != BYTE_ORDER || manifest.mask_encoding != MASK_ENCODING {
        return Err(CliError::Data(format!(
            "unsupported encoding {}/{}/{}",
            manifest.dtype, manifest.byte_order, manifest.mask_encoding
        )));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let (n, p) = (manifest.n, manifest.p);
    let volume: usize = manifest.shape.iter().product();

    let mask_bytes = read_file(&base.join(&manifest.mask), volume.div_ceil(8), "mask")?;
    let mask = unpack_mask(&mask_bytes, volume)?;
    let geometry = GridGeometry::from_mask(manifest.shape, mask).map_err(|e| CliError::Data(e.to_string()))?;
    if geometry.n_features() != p {
        return Err(CliError::Data(format!(
            "mask has {} active voxels, manifest declares p = {p}",
            geometry.n_features()
        )));
    }
    let x = bytes_to_f64s(&read_file(&base.join(&manifest.x), n * p * 8, "X")?);
    let y = bytes_to_f64s(&read_file(&base.join(&manifest.y), n * 8, "y")?);
    let x = Array2::from_shape_vec((n, p), x).expect("size checked");
    let dataset = Dataset::new(x, Array1::from(y), Some(geometry)).map_err(|e| CliError::Data(e.to_string()))?;

    let truth = match &manifest.ground_truth {
        Some(block) => {
            let w = bytes_to_f64s(&read_file(&base.join(&block.w_star), p * 8, "w_star")?);
            Some(GroundTruth::new(Array1::from(w), block.sigma).map_err(|e| CliError::Data(e.to_string()))?)
        }
        None => None,
    };
    Ok((dataset, truth, manifest))
}
