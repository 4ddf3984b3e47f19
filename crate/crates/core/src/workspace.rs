//! Signed distance fields over axis-aligned grids.
//!
//! Distances are sampled at grid nodes `origin + (i, j, k)·cell_size` and
//! read back with trilinear interpolation. Negative values are inside an
//! obstacle.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Distance reported for empty workspaces and for queries outside the grid.
pub const FAR_FIELD: f64 = 1.0e3;

pub const DEFAULT_CELL_SIZE: f64 = 0.02;

/// Obstacle primitive as it appears in a scenario file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Obstacle {
    Sphere { center: [f64; 3], radius: f64 },
    Box { center: [f64; 3], half_extents: [f64; 3] },
}

impl Obstacle {
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Obstacle::Sphere { center, radius } => (p - Vector3::from(*center)).norm() - radius,
            Obstacle::Box {
                center,
                half_extents,
            } => {
                let q = (p - Vector3::from(*center)).abs() - Vector3::from(*half_extents);
                let outside = q.map(|v| v.max(0.0)).norm();
                let inside = q.max().min(0.0);
                outside + inside
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            Obstacle::Sphere { radius, .. } if !(*radius > 0.0) => Err(format!("sphere radius {radius} must be positive")),
            Obstacle::Box { half_extents, .. } if half_extents.iter().any(|h| !(*h > 0.0)) => {
                Err("box half extents must be positive".into())
            }
            _ => Ok(()),
        }
    }

    /// Axis-aligned bounds of the primitive.
    pub fn aabb(&self) -> Aabb {
        let (c, h) = match self {
            Obstacle::Sphere { center, radius } => (Vector3::from(*center), Vector3::repeat(*radius)),
            Obstacle::Box {
                center,
                half_extents,
            } => (Vector3::from(*center), Vector3::from(*half_extents)),
        };
        Aabb {
            min: (c - h).into(),
            max: (c + h).into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdfGrid {
    origin: Vector3<f64>,
    cell_size: f64,
    dims: [usize; 3],
    data: Vec<f64>,
}

/// Result of a field query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdfSample {
    pub distance: f64,
    /// Unit-normalized gradient (zero when the raw gradient vanishes).
    pub gradient: Vector3<f64>,
    /// Exact derivative of the trilinear interpolant.
    pub raw_gradient: Vector3<f64>,
    pub in_bounds: bool,
}

impl SdfGrid {
    /// Samples the minimum signed distance over `obstacles` on a grid that
    /// covers `bounds`. An empty obstacle list gives a uniform [`FAR_FIELD`].
    pub fn build(obstacles: &[Obstacle], bounds: Aabb, cell_size: f64) -> Result<Self, String> {
        if !(cell_size > 0.0) {
            return Err(format!("cell size {cell_size} must be positive"));
        }
        for o in obstacles {
            o.validate()?;
        }
        let origin = Vector3::from(bounds.min);
        let extent = Vector3::from(bounds.max) - origin;
        if extent.iter().any(|e| !(*e > 0.0)) {
            return Err("bounds must have positive extent".into());
        }
        let dims = [0, 1, 2].map(|a| (extent[a] / cell_size).ceil() as usize + 1);
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let p = origin + Vector3::new(i as f64, j as f64, k as f64) * cell_size;
                    let d = obstacles
                        .iter()
                        .map(|o| o.signed_distance(&p))
                        .fold(FAR_FIELD, f64::min);
                    data.push(d);
                }
            }
        }
        Ok(Self {
            origin,
            cell_size,
            dims,
            data,
        })
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.origin
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[i + self.dims[0] * (j + self.dims[1] * k)]
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin + Vector3::new(i as f64, j as f64, k as f64) * self.cell_size
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| {
            let rel = p[a] - self.origin[a];
            rel >= 0.0 && rel <= (self.dims[a] - 1) as f64 * self.cell_size
        })
    }

    pub fn query(&self, p: &Vector3<f64>) -> SdfSample {
        if !p.iter().all(|v| v.is_finite()) || !self.contains(p) {
            return SdfSample {
                distance: FAR_FIELD,
                gradient: Vector3::zeros(),
                raw_gradient: Vector3::zeros(),
                in_bounds: false,
            };
        }
        let mut idx = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let u = (p[a] - self.origin[a]) / self.cell_size;
            let i = (u.floor() as usize).min(self.dims[a].saturating_sub(2));
            idx[a] = i;
            frac[a] = u - i as f64;
        }
        let c = |di: usize, dj: usize, dk: usize| {
            let i = (idx[0] + di).min(self.dims[0] - 1);
            let j = (idx[1] + dj).min(self.dims[1] - 1);
            let k = (idx[2] + dk).min(self.dims[2] - 1);
            self.node(i, j, k)
        };
        let [tx, ty, tz] = frac;
        let (c000, c100, c010, c110) = (c(0, 0, 0), c(1, 0, 0), c(0, 1, 0), c(1, 1, 0));
        let (c001, c101, c011, c111) = (c(0, 0, 1), c(1, 0, 1), c(0, 1, 1), c(1, 1, 1));
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let c00 = lerp(c000, c100, tx);
        let c10 = lerp(c010, c110, tx);
        let c01 = lerp(c001, c101, tx);
        let c11 = lerp(c011, c111, tx);
        let c0 = lerp(c00, c10, ty);
        let c1 = lerp(c01, c11, ty);
        let distance = lerp(c0, c1, tz);

        let dx = lerp(lerp(c100 - c000, c110 - c010, ty), lerp(c101 - c001, c111 - c011, ty), tz);
        let dy = lerp(c10 - c00, c11 - c01, tz);
        let dz = c1 - c0;
        let raw_gradient = Vector3::new(dx, dy, dz) / self.cell_size;
        let norm = raw_gradient.norm();
        let gradient = if norm > 1e-9 {
            raw_gradient / norm
        } else {
            Vector3::zeros()
        };
        SdfSample {
            distance,
            gradient,
            raw_gradient,
            in_bounds: true,
        }
    }
}
