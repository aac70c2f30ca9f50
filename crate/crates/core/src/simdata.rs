//! Synthetic 3D regression problems: cubic regions of interest in a weight
//! volume, a spatially smooth Gaussian design and a linear response whose
//! realized signal-to-noise ratio is set exactly.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{EckoError, Result};
use crate::geometry::GridGeometry;
use crate::seed::derive_seed;
use crate::types::{Dataset, GroundTruth};

/// Minimum number of empty voxels between two regions along some axis.
const ROI_GAP: usize = 2;
const PLACEMENT_ATTEMPTS: usize = 1_000;
const PLACEMENT_RESTARTS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub shape: [usize; 3],
    pub n_samples: usize,
    pub n_rois: usize,
    /// Edge length of each cubic region.
    pub roi_size: usize,
    /// Weight inside each region; must have `n_rois` entries.
    pub roi_amplitudes: Vec<f64>,
    pub target_snr: f64,
    /// Standard deviation, in voxels, of the Gaussian kernel that correlates
    /// neighbouring design columns. Zero gives independent columns.
    pub smoothing_width: f64,
    pub seed: u64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec::new([50, 50, 50], 100, 5, 6)
    }
}

impl SimulationSpec {
    /// Spec with alternating +1/-1 region amplitudes, SNR 3.6, unit smoothing
    /// and seed 0.
    pub fn new(shape: [usize; 3], n_samples: usize, n_rois: usize, roi_size: usize) -> Self {
        SimulationSpec {
            shape,
            n_samples,
            n_rois,
            roi_size,
            roi_amplitudes: alternating_amplitudes(n_rois),
            target_snr: 3.6,
            smoothing_width: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.contains(&0) {
            return Err(EckoError::arg("grid shape must be positive"));
        }
        if self.n_samples < 2 {
            return Err(EckoError::arg("need at least 2 samples"));
        }
        if self.roi_amplitudes.len() != self.n_rois {
            return Err(EckoError::arg(format!(
                "{} amplitudes given for {} ROIs",
                self.roi_amplitudes.len(),
                self.n_rois
            )));
        }
        if self.n_rois > 0 && (self.roi_size == 0 || self.shape.iter().any(|&s| s < self.roi_size)) {
            return Err(EckoError::arg(format!(
                "ROI does not fit: edge {} in grid {:?}",
                self.roi_size, self.shape
            )));
        }
        if !(self.target_snr > 0.0 && self.target_snr.is_finite()) {
            return Err(EckoError::arg("target SNR must be positive"));
        }
        if !(self.smoothing_width >= 0.0 && self.smoothing_width.is_finite()) {
            return Err(EckoError::arg("smoothing width must be nonnegative"));
        }
        Ok(())
    }
}

pub fn alternating_amplitudes(n_rois: usize) -> Vec<f64> {
    (0..n_rois).map(|r| if r % 2 == 0 { 1.0 } else { -1.0 }).collect()
}

fn separated(a: [usize; 3], b: [usize; 3], size: usize) -> bool {
    (0..3).any(|ax| a[ax] + size + ROI_GAP <= b[ax] || b[ax] + size + ROI_GAP <= a[ax])
}

/// Lower corners of non-overlapping cubic regions, drawn uniformly with
/// rejection.
pub fn place_rois(spec: &SimulationSpec) -> Result<Vec<[usize; 3]>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0]));
    // greedy placement can paint itself into a corner; start over when it does
    for _ in 0..PLACEMENT_RESTARTS {
        let mut corners: Vec<[usize; 3]> = Vec::with_capacity(spec.n_rois);
        while corners.len() < spec.n_rois {
            let found = (0..PLACEMENT_ATTEMPTS).find_map(|_| {
                let corner = [0, 1, 2].map(|ax| rng.random_range(0..=spec.shape[ax] - spec.roi_size));
                corners
                    .iter()
                    .all(|&c| separated(c, corner, spec.roi_size))
                    .then_some(corner)
            });
            match found {
                Some(c) => corners.push(c),
                None => break,
            }
        }
        if corners.len() == spec.n_rois {
            return Ok(corners);
        }
    }
    Err(EckoError::arg(format!(
        "ROI does not fit: could not place {} separated regions of edge {} in {:?}",
        spec.n_rois, spec.roi_size, spec.shape
    )))
}

fn gaussian_kernel(width: f64) -> Vec<f64> {
    if width == 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * width).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|t| (-(t * t) as f64 / (2.0 * width * width)).exp())
        .collect();
    // unit energy keeps interior voxels at unit variance
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    raw.into_iter().map(|v| v / norm).collect()
}

/// Separable convolution of a flat `(x, y, z)` volume, zero outside the grid.
fn smooth_volume(volume: &mut Vec<f64>, shape: [usize; 3], kernel: &[f64]) {
    if kernel.len() == 1 {
        return;
    }
    let radius = (kernel.len() / 2) as i64;
    let strides = [shape[1] * shape[2], shape[2], 1];
    for axis in 0..3 {
        let len = shape[axis] as i64;
        let stride = strides[axis];
        let mut out = vec![0.0; volume.len()];
        for (flat, slot) in out.iter_mut().enumerate() {
            let pos = ((flat / stride) % shape[axis]) as i64;
            let mut acc = 0.0;
            for (ti, &w) in kernel.iter().enumerate() {
                let src = pos + ti as i64 - radius;
                if src >= 0 && src < len {
                    let offset = src - pos;
                    acc += w * volume[(flat as i64 + offset * stride as i64) as usize];
                }
            }
            *slot = acc;
        }
        *volume = out;
    }
}

/// `||X w*||^2 / (sigma^2 ||eps||^2)`.
pub fn compute_snr(x: ArrayView2<f64>, w_star: ArrayView1<f64>, sigma: f64, epsilon: ArrayView1<f64>) -> Result<f64> {
    if x.ncols() != w_star.len() || x.nrows() != epsilon.len() {
        return Err(EckoError::dims("shapes of X, w* and eps disagree"));
    }
    if !(sigma > 0.0) {
        return Err(EckoError::arg("sigma must be positive"));
    }
    let noise = epsilon.dot(&epsilon);
    if noise == 0.0 {
        return Err(EckoError::arg("noise vector is zero"));
    }
    let signal = x.dot(&w_star);
    Ok(signal.dot(&signal) / (sigma * sigma * noise))
}

/// Draws a dataset and its ground truth from `spec`.
///
/// Without regions (`n_rois = 0`) the response is pure noise and `sigma` is 1.
pub fn generate_synthetic(spec: &SimulationSpec) -> Result<(Dataset, GroundTruth)> {
    let corners = place_rois(spec)?;
    let geometry = GridGeometry::full(spec.shape)?;
    let p = geometry.n_features();
    let n = spec.n_samples;

    let mut w_star = Array1::<f64>::zeros(p);
    for (corner, &amp) in corners.iter().zip(&spec.roi_amplitudes) {
        for dx in 0..spec.roi_size {
            for dy in 0..spec.roi_size {
                for dz in 0..spec.roi_size {
                    let k = geometry
                        .feature_at([corner[0] + dx, corner[1] + dy, corner[2] + dz])
                        .expect("ROI inside the full grid");
                    w_star[k] = amp;
                }
            }
        }
    }

    let kernel = gaussian_kernel(spec.smoothing_width);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[1]));
    let mut x = Array2::<f64>::zeros((n, p));
    let mut volume = vec![0.0; p];
    for mut row in x.rows_mut() {
        volume.clear();
        volume.extend((0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
        smooth_volume(&mut volume, spec.shape, &kernel);
        row.assign(&ArrayView1::from(&volume[..]));
    }

    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[2]));
    let epsilon: Array1<f64> = (0..n).map(|_| noise_rng.sample(StandardNormal)).collect();
    let signal = x.dot(&w_star);
    let signal_energy = signal.dot(&signal);
    let sigma = if signal_energy > 0.0 {
        (signal_energy / (spec.target_snr * epsilon.dot(&epsilon))).sqrt()
    } else {
        1.0
    };
    let y = &signal + &epsilon.mapv(|e| sigma * e);

    let truth = GroundTruth::new(w_star, sigma)?;
    let dataset = Dataset::new(x, y, Some(geometry))?;
    Ok((dataset, truth))
}
