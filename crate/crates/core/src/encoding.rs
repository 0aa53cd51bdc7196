//! Input encodings for the neural fields.
//!
//! Positions go through a multiresolution hash grid: each level overlays the
//! scene bounds with a grid of growing resolution, stores learnable features
//! at (hashed) vertices and interpolates them trilinearly. Coarse levels are
//! dense-indexed while fine levels whose vertex count exceeds the table share
//! rows through a spatial hash. View directions are encoded with a real
//! spherical-harmonic basis. A coarse-to-fine schedule masks fine levels
//! early in training so noise cannot settle into high-frequency features.

use nalgebra::{Point3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Aabb;

/// Per-axis multipliers of the vertex spatial hash.
const HASH_PRIMES: [u64; 3] = [2_654_435_761, 805_459_861, 3_674_653_429];

/// Hash-table entries are initialized uniformly within this magnitude.
pub const HASH_INIT_SCALE: f64 = 1e-4;

/// Geometry of the multiresolution grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashGridConfig {
    pub n_levels: usize,
    pub features_per_level: usize,
    /// Log2 of the per-level table row budget.
    pub table_size_log2: u32,
    /// Cells per axis at the coarsest level.
    pub base_resolution: u32,
    /// Geometric growth of the per-level resolution; must exceed 1.
    pub per_level_scale: f64,
    pub bounds: Aabb,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        HashGridConfig {
            n_levels: 14,
            features_per_level: 2,
            table_size_log2: 19,
            base_resolution: 16,
            per_level_scale: 1.45,
            bounds: Aabb::new(
                Point3::new(-50.0, -50.0, -50.0),
                Point3::new(50.0, 50.0, 50.0),
            ),
        }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_levels < 1 {
            return Err(Error::InvalidConfig("n_levels must be >= 1".into()));
        }
        if self.features_per_level < 1 {
            return Err(Error::InvalidConfig(
                "features_per_level must be >= 1".into(),
            ));
        }
        if !(self.per_level_scale > 1.0) {
            return Err(Error::InvalidConfig(
                "per_level_scale must be > 1".into(),
            ));
        }
        if self.base_resolution < 1 {
            return Err(Error::InvalidConfig("base_resolution must be >= 1".into()));
        }
        if self.table_size_log2 < 1 || self.table_size_log2 > 31 {
            return Err(Error::InvalidConfig(
                "table_size_log2 must lie in [1, 31]".into(),
            ));
        }
        self.bounds.validate()
    }

    /// Cells per axis at `level`.
    pub fn level_resolution(&self, level: usize) -> u32 {
        (self.base_resolution as f64 * self.per_level_scale.powi(level as i32)).floor() as u32
    }

    /// Feature rows stored for `level`: dense vertex count when it fits the
    /// table, the table size otherwise.
    pub fn level_rows(&self, level: usize) -> usize {
        let n = self.level_resolution(level) as usize + 1;
        let dense = n * n * n;
        dense.min(1usize << self.table_size_log2)
    }

    /// Whether `level` is dense-indexed (no hash collisions).
    pub fn level_is_dense(&self, level: usize) -> bool {
        let n = self.level_resolution(level) as usize + 1;
        n * n * n <= (1usize << self.table_size_log2)
    }

    /// Flat offset of each level's first feature value, plus the total length.
    pub fn level_offsets(&self) -> (Vec<usize>, usize) {
        let mut offsets = Vec::with_capacity(self.n_levels);
        let mut acc = 0usize;
        for level in 0..self.n_levels {
            offsets.push(acc);
            acc += self.level_rows(level) * self.features_per_level;
        }
        (offsets, acc)
    }

    /// Length of one encoded feature vector.
    pub fn output_len(&self) -> usize {
        self.n_levels * self.features_per_level
    }

    /// Row index of an integer vertex at `level`.
    fn vertex_row(&self, level: usize, v: [u32; 3]) -> usize {
        if self.level_is_dense(level) {
            let n = self.level_resolution(level) as usize + 1;
            (v[2] as usize * n + v[1] as usize) * n + v[0] as usize
        } else {
            let h = (v[0] as u64).wrapping_mul(HASH_PRIMES[0])
                ^ (v[1] as u64).wrapping_mul(HASH_PRIMES[1])
                ^ (v[2] as u64).wrapping_mul(HASH_PRIMES[2]);
            (h & ((1u64 << self.table_size_log2) - 1)) as usize
        }
    }
}

/// Learnable feature tables, stored flat in level order.
#[derive(Debug, Clone, PartialEq)]
pub struct HashGridParams {
    pub values: Vec<f64>,
}

impl HashGridParams {
    /// Fresh tables with entries uniform in the init range.
    pub fn init(cfg: &HashGridConfig, rng: &mut impl Rng) -> Self {
        let (_, len) = cfg.level_offsets();
        let values = (0..len)
            .map(|_| rng.gen_range(-HASH_INIT_SCALE..HASH_INIT_SCALE))
            .collect();
        HashGridParams { values }
    }
}

/// The 8 interpolation taps of one point at one level.
struct CellTaps {
    rows: [usize; 8],
    weights: [f64; 8],
}

fn cell_taps(cfg: &HashGridConfig, level: usize, unit: &Vector3<f64>) -> CellTaps {
    let res = cfg.level_resolution(level);
    let mut base = [0u32; 3];
    let mut frac = [0f64; 3];
    for i in 0..3 {
        let p = unit[i] * res as f64;
        let c = (p.floor() as i64).clamp(0, res as i64 - 1) as u32;
        base[i] = c;
        frac[i] = p - c as f64;
    }
    let mut rows = [0usize; 8];
    let mut weights = [0f64; 8];
    for corner in 0..8usize {
        let mut v = [0u32; 3];
        let mut w = 1.0;
        for i in 0..3 {
            if corner >> i & 1 == 1 {
                v[i] = base[i] + 1;
                w *= frac[i];
            } else {
                v[i] = base[i];
                w *= 1.0 - frac[i];
            }
        }
        rows[corner] = cfg.vertex_row(level, v);
        weights[corner] = w;
    }
    CellTaps { rows, weights }
}

fn to_unit(cfg: &HashGridConfig, x: &Point3<f64>) -> Result<Vector3<f64>> {
    if !cfg.bounds.contains(x) {
        return Err(Error::OutOfBounds(x.x, x.y, x.z));
    }
    let ext = cfg.bounds.extent();
    Ok(Vector3::new(
        (x.x - cfg.bounds.min.x) / ext.x,
        (x.y - cfg.bounds.min.y) / ext.y,
        (x.z - cfg.bounds.min.z) / ext.z,
    ))
}

/// Encode a world point into `n_levels * features_per_level` values.
///
/// Levels at or above `active_levels` are masked to zero. `out` must have
/// [`HashGridConfig::output_len`] elements.
pub fn hash_encode(
    x: &Point3<f64>,
    cfg: &HashGridConfig,
    params: &HashGridParams,
    active_levels: usize,
    out: &mut [f64],
) -> Result<()> {
    if out.len() != cfg.output_len() {
        return Err(Error::ShapeMismatch {
            expected: cfg.output_len(),
            got: out.len(),
        });
    }
    let unit = to_unit(cfg, x)?;
    let (offsets, _) = cfg.level_offsets();
    let f_dim = cfg.features_per_level;
    out.fill(0.0);
    for level in 0..cfg.n_levels.min(active_levels) {
        let taps = cell_taps(cfg, level, &unit);
        let base = offsets[level];
        let dst = &mut out[level * f_dim..(level + 1) * f_dim];
        for corner in 0..8 {
            let w = taps.weights[corner];
            if w == 0.0 {
                continue;
            }
            let src = base + taps.rows[corner] * f_dim;
            for f in 0..f_dim {
                dst[f] += w * params.values[src + f];
            }
        }
    }
    Ok(())
}

/// Receives table-gradient contributions from the encoder backward pass.
pub trait HashGradSink {
    fn add(&mut self, index: usize, value: f64);
}

/// Dense accumulation into a buffer shaped like the parameter vector.
impl HashGradSink for Vec<f64> {
    fn add(&mut self, index: usize, value: f64) {
        self[index] += value;
    }
}

/// Sparse (index, value) log of touched table entries; compact enough to
/// collect per work item and merge in a fixed order.
#[derive(Debug, Clone, Default)]
pub struct SparseHashGrad {
    pub entries: Vec<(u32, f64)>,
}

impl SparseHashGrad {
    pub fn merge_into(&self, dense: &mut [f64]) {
        for &(i, v) in &self.entries {
            dense[i as usize] += v;
        }
    }
}

impl HashGradSink for SparseHashGrad {
    fn add(&mut self, index: usize, value: f64) {
        self.entries.push((index as u32, value));
    }
}

/// Accumulate `d loss / d table` for one encoded point: each upstream feature
/// gradient lands on the 8 touched rows of its level, scaled by the
/// interpolation weights. Masked levels receive nothing.
pub fn hash_encode_backward(
    x: &Point3<f64>,
    cfg: &HashGridConfig,
    active_levels: usize,
    upstream: &[f64],
    sink: &mut impl HashGradSink,
) -> Result<()> {
    if upstream.len() != cfg.output_len() {
        return Err(Error::ShapeMismatch {
            expected: cfg.output_len(),
            got: upstream.len(),
        });
    }
    let unit = to_unit(cfg, x)?;
    let (offsets, _) = cfg.level_offsets();
    let f_dim = cfg.features_per_level;
    for level in 0..cfg.n_levels.min(active_levels) {
        let taps = cell_taps(cfg, level, &unit);
        let base = offsets[level];
        let up = &upstream[level * f_dim..(level + 1) * f_dim];
        for corner in 0..8 {
            let w = taps.weights[corner];
            if w == 0.0 {
                continue;
            }
            let dst = base + taps.rows[corner] * f_dim;
            for f in 0..f_dim {
                if up[f] != 0.0 {
                    sink.add(dst + f, w * up[f]);
                }
            }
        }
    }
    Ok(())
}

/// Number of spherical-harmonic coefficients (degree 3).
pub const SH_DIM: usize = 16;

/// Real spherical-harmonic basis up to degree 3 for a unit direction.
pub fn sh_encode(d: &Vector3<f64>) -> Result<[f64; SH_DIM]> {
    let norm = d.norm();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::NotUnitVector(norm));
    }
    let (x, y, z) = (d.x, d.y, d.z);
    let (x2, y2, z2) = (x * x, y * y, z * z);

    const C0: f64 = 0.282_094_791_773_878_14;
    const C1: f64 = 0.488_602_511_902_919_92;
    const C2_0: f64 = 1.092_548_430_592_079_2;
    const C2_1: f64 = 0.315_391_565_252_520_05;
    const C2_2: f64 = 0.546_274_215_296_039_6;
    const C3_0: f64 = 0.590_043_589_926_643_5;
    const C3_1: f64 = 2.890_611_442_640_554;
    const C3_2: f64 = 0.457_045_799_464_465_77;
    const C3_3: f64 = 0.373_176_332_590_115_4;
    const C3_4: f64 = 1.445_305_721_320_277;

    Ok([
        C0,
        C1 * y,
        C1 * z,
        C1 * x,
        C2_0 * x * y,
        C2_0 * y * z,
        C2_1 * (3.0 * z2 - 1.0),
        C2_0 * x * z,
        C2_2 * (x2 - y2),
        C3_0 * y * (3.0 * x2 - y2),
        C3_1 * x * y * z,
        C3_2 * y * (5.0 * z2 - 1.0),
        C3_3 * z * (5.0 * z2 - 3.0),
        C3_2 * x * (5.0 * z2 - 1.0),
        C3_4 * z * (x2 - y2),
        C3_0 * x * (x2 - 3.0 * y2),
    ])
}

/// Progressive level unmasking over training epochs: level `i` of `n` is
/// active once `i / n < floor + span * sin(epoch / max_epoch)` (in radians),
/// so training starts on coarse levels and fine detail arrives late.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoarseToFineSchedule {
    pub floor_fraction: f64,
    pub span_fraction: f64,
    pub max_epoch: usize,
}

impl Default for CoarseToFineSchedule {
    fn default() -> Self {
        CoarseToFineSchedule {
            floor_fraction: 0.4,
            span_fraction: 0.6,
            max_epoch: 0,
        }
    }
}

impl CoarseToFineSchedule {
    pub fn with_max_epoch(self, max_epoch: usize) -> Self {
        CoarseToFineSchedule { max_epoch, ..self }
    }

    /// Count of active levels at `epoch`.
    pub fn active_levels(&self, epoch: usize, n_levels: usize) -> usize {
        let progress = if self.max_epoch == 0 {
            1.0
        } else {
            (epoch as f64 / self.max_epoch as f64).min(1.0)
        };
        let threshold = self.floor_fraction + self.span_fraction * progress.sin();
        (0..n_levels)
            .take_while(|&i| (i as f64 / n_levels as f64) < threshold)
            .count()
    }
}
