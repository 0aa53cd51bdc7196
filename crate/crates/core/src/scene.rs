//! Analytic synthetic scenes and the brute-force frame simulator.
//!
//! Scenes are lists of axis-aligned primitives with a reflectivity and a
//! view-dependence exponent. The simulator casts super-sampled rays through
//! each beam cone, takes the first primitive hit per ray (hard occlusion),
//! scores it `rho * max(0, cos_incidence)^k`, bins it by range, and converts
//! the radiation-weighted per-bin cross-section to power through the radar
//! equation. Everything is deterministic given the seed, so simulated
//! sequences double as reproducible ground truth.

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Aabb, Pose};
use crate::radar::{RadarConfig, RadarFrame, MIN_RANGE};
use crate::rng::{stream, tag};
use crate::sampling::draw_samples;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveShape {
    /// Axis-aligned box; `extent` holds full side lengths.
    Box,
    /// Vertical cylinder; `extent.x` is the diameter, `extent.z` the height.
    Cylinder,
    /// Ground slab with its top surface at `center.z`, `extent.z` thick,
    /// spanning the whole scene horizontally.
    GroundPlane,
}

/// One analytic reflector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenePrimitive {
    pub shape: PrimitiveShape,
    pub center: Point3<f64>,
    pub extent: Vector3<f64>,
    /// Fraction of incident power returned, in (0, 1].
    pub reflectivity: f64,
    /// View-dependence strength: the return is scaled by
    /// `max(0, cos_incidence)^k`; 0 means diffuse.
    pub directivity_exponent: f64,
}

struct Hit {
    t: f64,
    normal: Vector3<f64>,
}

impl ScenePrimitive {
    pub fn validate(&self) -> Result<()> {
        let needs_positive: &[usize] = match self.shape {
            PrimitiveShape::Box => &[0, 1, 2],
            PrimitiveShape::Cylinder => &[0, 2],
            PrimitiveShape::GroundPlane => &[2],
        };
        for &i in needs_positive {
            if !(self.extent[i] > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "primitive extent[{i}] must be > 0"
                )));
            }
        }
        if !(self.reflectivity > 0.0 && self.reflectivity <= 1.0) {
            return Err(Error::InvalidConfig(
                "reflectivity must lie in (0, 1]".into(),
            ));
        }
        if !(self.directivity_exponent >= 0.0) {
            return Err(Error::InvalidConfig(
                "directivity_exponent must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Closed containment test.
    pub fn contains(&self, p: &Point3<f64>, scene_bounds: &Aabb) -> bool {
        match self.shape {
            PrimitiveShape::Box => (0..3).all(|i| {
                let h = self.extent[i] / 2.0;
                (p[i] - self.center[i]).abs() <= h
            }),
            PrimitiveShape::Cylinder => {
                let r = self.extent.x / 2.0;
                let dx = p.x - self.center.x;
                let dy = p.y - self.center.y;
                let h = self.extent.z / 2.0;
                dx * dx + dy * dy <= r * r && (p.z - self.center.z).abs() <= h
            }
            PrimitiveShape::GroundPlane => {
                p.z <= self.center.z
                    && p.z >= self.center.z - self.extent.z
                    && p.x >= scene_bounds.min.x
                    && p.x <= scene_bounds.max.x
                    && p.y >= scene_bounds.min.y
                    && p.y <= scene_bounds.max.y
            }
        }
    }

    /// Conservative world box of the solid (ground planes take the scene
    /// footprint at validation time, so they are checked on z only).
    fn bounding_box(&self, scene_bounds: &Aabb) -> Aabb {
        match self.shape {
            PrimitiveShape::Box => Aabb::new(
                self.center - self.extent / 2.0,
                self.center + self.extent / 2.0,
            ),
            PrimitiveShape::Cylinder => {
                let r = self.extent.x / 2.0;
                let h = self.extent.z / 2.0;
                Aabb::new(
                    Point3::new(self.center.x - r, self.center.y - r, self.center.z - h),
                    Point3::new(self.center.x + r, self.center.y + r, self.center.z + h),
                )
            }
            PrimitiveShape::GroundPlane => Aabb::new(
                Point3::new(
                    scene_bounds.min.x,
                    scene_bounds.min.y,
                    self.center.z - self.extent.z,
                ),
                Point3::new(scene_bounds.max.x, scene_bounds.max.y, self.center.z),
            ),
        }
    }

    /// First intersection of a ray with the primitive surface, for `t > t_min`.
    fn intersect(
        &self,
        origin: &Point3<f64>,
        dir: &Vector3<f64>,
        t_min: f64,
        scene_bounds: &Aabb,
    ) -> Option<Hit> {
        match self.shape {
            PrimitiveShape::Box => {
                let lo = self.center - self.extent / 2.0;
                let hi = self.center + self.extent / 2.0;
                slab_entry(origin, dir, &lo.coords, &hi.coords, t_min)
            }
            PrimitiveShape::GroundPlane => {
                let b = self.bounding_box(scene_bounds);
                slab_entry(origin, dir, &b.min.coords, &b.max.coords, t_min)
            }
            PrimitiveShape::Cylinder => self.intersect_cylinder(origin, dir, t_min),
        }
    }

    fn intersect_cylinder(
        &self,
        origin: &Point3<f64>,
        dir: &Vector3<f64>,
        t_min: f64,
    ) -> Option<Hit> {
        let r = self.extent.x / 2.0;
        let half_h = self.extent.z / 2.0;
        let (z_lo, z_hi) = (self.center.z - half_h, self.center.z + half_h);
        let ox = origin.x - self.center.x;
        let oy = origin.y - self.center.y;

        let mut best: Option<Hit> = None;
        let mut consider = |t: f64, normal: Vector3<f64>| {
            if t > t_min && best.as_ref().map_or(true, |b| t < b.t) {
                best = Some(Hit { t, normal });
            }
        };

        // lateral surface
        let a = dir.x * dir.x + dir.y * dir.y;
        if a > 1e-16 {
            let b = 2.0 * (ox * dir.x + oy * dir.y);
            let c = ox * ox + oy * oy - r * r;
            let disc = b * b - 4.0 * a * c;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                    let z = origin.z + t * dir.z;
                    if z >= z_lo && z <= z_hi {
                        let n = Vector3::new(ox + t * dir.x, oy + t * dir.y, 0.0);
                        let norm = n.norm();
                        if norm > 0.0 {
                            consider(t, n / norm);
                        }
                    }
                }
            }
        }
        // caps
        if dir.z.abs() > 1e-16 {
            for (z_plane, nz) in [(z_lo, -1.0), (z_hi, 1.0)] {
                let t = (z_plane - origin.z) / dir.z;
                let x = ox + t * dir.x;
                let y = oy + t * dir.y;
                if x * x + y * y <= r * r {
                    consider(t, Vector3::new(0.0, 0.0, nz));
                }
            }
        }
        best
    }
}

/// Slab-method entry intersection with an axis-aligned box; returns the entry
/// distance and outward face normal.
fn slab_entry(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    lo: &Vector3<f64>,
    hi: &Vector3<f64>,
    t_min: f64,
) -> Option<Hit> {
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    let mut axis = 0usize;
    for i in 0..3 {
        if dir[i].abs() < 1e-16 {
            if origin[i] < lo[i] || origin[i] > hi[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[i];
        let (mut t0, mut t1) = ((lo[i] - origin[i]) * inv, (hi[i] - origin[i]) * inv);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_enter {
            t_enter = t0;
            axis = i;
        }
        t_exit = t_exit.min(t1);
    }
    if t_enter > t_exit || t_exit < t_min || t_enter <= t_min {
        return None;
    }
    let mut normal = Vector3::zeros();
    normal[axis] = if dir[axis] > 0.0 { -1.0 } else { 1.0 };
    Some(Hit {
        t: t_enter,
        normal,
    })
}

/// An analytic scene: primitives, world bounds and a constant noise floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub bounds: Aabb,
    pub primitives: Vec<ScenePrimitive>,
    /// Additive constant power floor (linear units).
    #[serde(default)]
    pub noise_floor: f64,
    /// Optional multiplicative jitter amplitude: each output cell is scaled
    /// by `1 + U(-j, j)`. Zero keeps the simulator fully analytic.
    #[serde(default)]
    pub noise_jitter: f64,
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if !(self.noise_floor >= 0.0) {
            return Err(Error::InvalidConfig("noise_floor must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.noise_jitter) {
            return Err(Error::InvalidConfig(
                "noise_jitter must lie in [0, 1)".into(),
            ));
        }
        for p in &self.primitives {
            p.validate()?;
            if !self.bounds.contains_box(&p.bounding_box(&self.bounds)) {
                return Err(Error::InvalidConfig(
                    "primitive extends outside scene bounds".into(),
                ));
            }
        }
        Ok(())
    }

    /// Binary occupancy at a world point (closed-set convention: boundary
    /// points count as occupied).
    pub fn query_occupancy(&self, x: &Point3<f64>) -> Result<u8> {
        if !self.bounds.contains(x) {
            return Err(Error::OutOfBounds(x.x, x.y, x.z));
        }
        Ok(self
            .primitives
            .iter()
            .any(|p| p.contains(x, &self.bounds)) as u8)
    }

    /// Nearest primitive intersection along a ray, with the reflectivity and
    /// incidence-scaled directivity of the hit surface folded in.
    fn first_return(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        for p in &self.primitives {
            if let Some(hit) = p.intersect(origin, dir, MIN_RANGE, &self.bounds) {
                if best.as_ref().map_or(true, |b| hit.t < b.0) {
                    let cos_inc = (-dir.dot(&hit.normal)).clamp(0.0, 1.0);
                    let gamma = if p.directivity_exponent == 0.0 {
                        1.0
                    } else {
                        cos_inc.powf(p.directivity_exponent)
                    };
                    best = Some((hit.t, p.reflectivity * gamma));
                }
            }
        }
        best
    }
}

/// A sensor trajectory through the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    pub timestamps: Vec<f64>,
}

impl Trajectory {
    pub fn validate(&self, bounds: &Aabb) -> Result<()> {
        if self.poses.len() < 2 {
            return Err(Error::InvalidConfig(
                "trajectory needs at least 2 poses".into(),
            ));
        }
        if self.timestamps.len() != self.poses.len() {
            return Err(Error::ShapeMismatch {
                expected: self.poses.len(),
                got: self.timestamps.len(),
            });
        }
        if self.timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "timestamps must be strictly increasing".into(),
            ));
        }
        for p in &self.poses {
            if !bounds.contains(&p.position()) {
                let q = p.position();
                return Err(Error::OutOfBounds(q.x, q.y, q.z));
            }
        }
        Ok(())
    }
}

/// Render one raw frame at the given pose.
///
/// Per beam: `supersamples` rays are cast through the cone, each contributes
/// its first-hit return to the bin nearest its hit range, and bins are
/// normalized by the full radiation weight sum so the per-bin cross-section
/// reads as pattern-weighted cone coverage times surface response. Bin 0 is
/// blind (zero range) and carries only the noise floor.
pub fn simulate_frame(
    scene: &SyntheticScene,
    pose: &Pose,
    cfg: &RadarConfig,
    supersamples: usize,
    rng_seed: u64,
) -> Result<RadarFrame> {
    if supersamples < 1 {
        return Err(Error::DegenerateConfig(
            "supersamples must be >= 1".into(),
        ));
    }
    let origin = pose.position();
    if !scene.bounds.contains(&origin) {
        return Err(Error::OutOfBounds(origin.x, origin.y, origin.z));
    }
    let azimuths = cfg.beam_azimuths();
    let dr = cfg.bin_spacing();

    let rows: Vec<Vec<f32>> = azimuths
        .par_iter()
        .enumerate()
        .map(|(k, &az)| {
            let mut rng = stream(rng_seed, tag::SIMULATE, k as u64);
            let set = draw_samples(az, cfg, supersamples, &mut rng)
                .expect("supersamples checked above");
            let weights = set.weights(cfg);
            let weight_sum: f64 = weights.iter().sum();

            let mut sigma = vec![0.0f64; cfg.n_bins];
            for (s, &w) in set.samples.iter().zip(&weights) {
                let dir = s.world_direction(pose);
                if let Some((t, response)) = scene.first_return(&origin, &dir) {
                    let bin = (t / dr).round() as i64;
                    if bin >= 1 && (bin as usize) < cfg.n_bins {
                        sigma[bin as usize] += w * response;
                    }
                }
            }

            let mut row = vec![0.0f32; cfg.n_bins];
            for b in 0..cfg.n_bins {
                let mut p = scene.noise_floor;
                if b >= 1 && sigma[b] > 0.0 {
                    let range = b as f64 * dr;
                    p += cfg
                        .received_power(sigma[b] / weight_sum, range)
                        .expect("range >= one bin spacing");
                }
                if scene.noise_jitter > 0.0 {
                    let j = scene.noise_jitter;
                    p *= 1.0 + rng.gen_range(-j..j);
                }
                row[b] = p as f32;
            }
            row
        })
        .collect();

    let power: Vec<f32> = rows.into_iter().flatten().collect();
    RadarFrame::new(*pose, azimuths, power, cfg.n_bins)
}

/// Simulate every pose of a trajectory with per-frame derived seeds.
pub fn simulate_sequence(
    scene: &SyntheticScene,
    trajectory: &Trajectory,
    cfg: &RadarConfig,
    supersamples: usize,
    rng_seed: u64,
) -> Result<Vec<RadarFrame>> {
    trajectory.validate(&scene.bounds)?;
    trajectory
        .poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            simulate_frame(
                scene,
                pose,
                cfg,
                supersamples,
                crate::rng::derive_seed(rng_seed, tag::SIMULATE, i as u64),
            )
        })
        .collect()
}

/// Centers of BEV grid cells whose column within `height_band` intersects a
/// primitive boundary: the cell touches the solid but is not strictly inside
/// it. This is the geometric ground truth that reconstructed BEV point sets
/// are scored against.
pub fn ground_truth_bev(
    scene: &SyntheticScene,
    grid_resolution: f64,
    height_band: (f64, f64),
) -> Result<Vec<[f64; 2]>> {
    if !(grid_resolution > 0.0) {
        return Err(Error::InvalidConfig("grid_resolution must be > 0".into()));
    }
    let (z_lo, z_hi) = height_band;
    if !(z_hi > z_lo) {
        return Err(Error::InvalidConfig("empty height band".into()));
    }
    let nx = ((scene.bounds.max.x - scene.bounds.min.x) / grid_resolution).ceil() as usize;
    let ny = ((scene.bounds.max.y - scene.bounds.min.y) / grid_resolution).ceil() as usize;

    let mut out = Vec::new();
    for iy in 0..ny {
        for ix in 0..nx {
            let x0 = scene.bounds.min.x + ix as f64 * grid_resolution;
            let y0 = scene.bounds.min.y + iy as f64 * grid_resolution;
            let column = Aabb::new(
                Point3::new(x0, y0, z_lo),
                Point3::new(x0 + grid_resolution, y0 + grid_resolution, z_hi),
            );
            let on_boundary = scene.primitives.iter().any(|p| {
                column_touches(p, &column, &scene.bounds)
                    && !column_strictly_inside(p, &column)
            });
            if on_boundary {
                out.push([
                    x0 + grid_resolution / 2.0,
                    y0 + grid_resolution / 2.0,
                ]);
            }
        }
    }
    Ok(out)
}

/// Does the closed solid of the primitive meet the closed cell column?
fn column_touches(p: &ScenePrimitive, column: &Aabb, scene_bounds: &Aabb) -> bool {
    let b = p.bounding_box(scene_bounds);
    let overlap =
        (0..3).all(|i| column.max[i] >= b.min[i] && column.min[i] <= b.max[i]);
    if !overlap {
        return false;
    }
    match p.shape {
        PrimitiveShape::Box | PrimitiveShape::GroundPlane => true,
        PrimitiveShape::Cylinder => {
            // closest point of the column rectangle to the axis
            let cx = p.center.x.clamp(column.min.x, column.max.x);
            let cy = p.center.y.clamp(column.min.y, column.max.y);
            let r = p.extent.x / 2.0;
            let dx = cx - p.center.x;
            let dy = cy - p.center.y;
            dx * dx + dy * dy <= r * r
        }
    }
}

/// Is the whole column strictly inside the primitive's open interior?
fn column_strictly_inside(p: &ScenePrimitive, column: &Aabb) -> bool {
    match p.shape {
        PrimitiveShape::Box => (0..3).all(|i| {
            let h = p.extent[i] / 2.0;
            column.min[i] > p.center[i] - h && column.max[i] < p.center[i] + h
        }),
        PrimitiveShape::GroundPlane => {
            column.min.z > p.center.z - p.extent.z && column.max.z < p.center.z
        }
        PrimitiveShape::Cylinder => {
            let half_h = p.extent.z / 2.0;
            if !(column.min.z > p.center.z - half_h && column.max.z < p.center.z + half_h) {
                return false;
            }
            let r = p.extent.x / 2.0;
            // farthest column corner from the axis must be strictly inside
            let fx = (column.min.x - p.center.x)
                .abs()
                .max((column.max.x - p.center.x).abs());
            let fy = (column.min.y - p.center.y)
                .abs()
                .max((column.max.y - p.center.y).abs());
            fx * fx + fy * fy < r * r
        }
    }
}
