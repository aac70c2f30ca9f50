//! Voxel lattice geometry.
//!
//! Features are the active voxels of a boolean mask over a 3D grid, indexed in
//! lexicographic `(x, y, z)` order. Nothing downstream is allowed to reorder
//! them.

use serde::{Deserialize, Serialize};

use crate::error::{EckoError, Result};

pub type Coord = [usize; 3];

/// A masked 3D grid mapping feature indices to integer voxel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeometryRepr", into = "GeometryRepr")]
pub struct GridGeometry {
    shape: [usize; 3],
    mask: Vec<bool>,
    feature_coords: Vec<Coord>,
    // flat voxel index -> feature index, usize::MAX when inactive
    lookup: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct GeometryRepr {
    shape: [usize; 3],
    mask: Vec<bool>,
}

impl TryFrom<GeometryRepr> for GridGeometry {
    type Error = EckoError;

    fn try_from(r: GeometryRepr) -> Result<Self> {
        GridGeometry::from_mask(r.shape, r.mask)
    }
}

impl From<GridGeometry> for GeometryRepr {
    fn from(g: GridGeometry) -> Self {
        GeometryRepr {
            shape: g.shape,
            mask: g.mask,
        }
    }
}

impl GridGeometry {
    /// Builds a geometry from a flat mask in `(x, y, z)` row-major order.
    pub fn from_mask(shape: [usize; 3], mask: Vec<bool>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(EckoError::arg(format!("grid shape {shape:?} has a zero extent")));
        }
        let volume = shape[0] * shape[1] * shape[2];
        if mask.len() != volume {
            return Err(EckoError::dims(format!(
                "mask has {} entries, shape {:?} needs {}",
                mask.len(),
                shape,
                volume
            )));
        }
        let mut feature_coords = Vec::new();
        let mut lookup = vec![usize::MAX; volume];
        for (flat, &active) in mask.iter().enumerate() {
            if active {
                lookup[flat] = feature_coords.len();
                feature_coords.push(unflatten(shape, flat));
            }
        }
        Ok(GridGeometry {
            shape,
            mask,
            feature_coords,
            lookup,
        })
    }

    /// Geometry where every voxel of the box is active.
    pub fn full(shape: [usize; 3]) -> Result<Self> {
        let volume = shape.iter().product();
        Self::from_mask(shape, vec![true; volume])
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Number of active voxels (features).
    pub fn n_features(&self) -> usize {
        self.feature_coords.len()
    }

    pub fn feature_coords(&self) -> &[Coord] {
        &self.feature_coords
    }

    pub fn coord(&self, j: usize) -> Result<Coord> {
        self.feature_coords.get(j).copied().ok_or_else(|| {
            EckoError::arg(format!(
                "feature index {j} out of range for {} features",
                self.n_features()
            ))
        })
    }

    /// Feature index of the voxel at `coord`, if it lies inside the mask.
    pub fn feature_at(&self, coord: Coord) -> Option<usize> {
        if (0..3).any(|a| coord[a] >= self.shape[a]) {
            return None;
        }
        let idx = self.lookup[flatten(self.shape, coord)];
        (idx != usize::MAX).then_some(idx)
    }

    /// Face neighbors (6-connectivity) of feature `j` that are inside the mask.
    pub fn neighbors(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        let c = self.feature_coords[j];
        let mut out = [usize::MAX; 6];
        let mut k = 0;
        for axis in 0..3 {
            if c[axis] > 0 {
                let mut n = c;
                n[axis] -= 1;
                if let Some(f) = self.feature_at(n) {
                    out[k] = f;
                    k += 1;
                }
            }
            let mut n = c;
            n[axis] += 1;
            if let Some(f) = self.feature_at(n) {
                out[k] = f;
                k += 1;
            }
        }
        out.into_iter().take(k)
    }

    /// Labels each feature with its connected component of the 6-neighbor
    /// graph. Returns `(labels, n_components)`.
    pub fn connected_components(&self) -> (Vec<usize>, usize) {
        let p = self.n_features();
        let mut label = vec![usize::MAX; p];
        let mut n_comp = 0;
        let mut stack = Vec::new();
        for start in 0..p {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = n_comp;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for w in self.neighbors(v) {
                    if label[w] == usize::MAX {
                        label[w] = n_comp;
                        stack.push(w);
                    }
                }
            }
            n_comp += 1;
        }
        (label, n_comp)
    }

    /// Length of the grid's main diagonal; no two voxels are farther apart.
    pub fn diagonal(&self) -> f64 {
        self.shape.iter().map(|&s| ((s - 1) as f64).powi(2)).sum::<f64>().sqrt()
    }
}

fn flatten(shape: [usize; 3], c: Coord) -> usize {
    (c[0] * shape[1] + c[1]) * shape[2] + c[2]
}

fn unflatten(shape: [usize; 3], flat: usize) -> Coord {
    let z = flat % shape[2];
    let y = (flat / shape[2]) % shape[1];
    let x = flat / (shape[1] * shape[2]);
    [x, y, z]
}

/// Euclidean distance between two voxel coordinates (unit isotropic spacing).
pub fn coord_distance(a: Coord, b: Coord) -> f64 {
    let sq: usize = (0..3).map(|i| a[i].abs_diff(b[i]).pow(2)).sum();
    (sq as f64).sqrt()
}

/// Distance `d(j, k)` between features `j` and `k`.
pub fn voxel_distance(j: usize, k: usize, geometry: &GridGeometry) -> Result<f64> {
    Ok(coord_distance(geometry.coord(j)?, geometry.coord(k)?))
}
