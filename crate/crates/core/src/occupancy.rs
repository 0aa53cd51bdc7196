//! Occupancy estimation from raw frames and log-odds grid mapping.
//!
//! The per-frame estimator scans each azimuth ray outward: bins before the
//! first above-threshold return are free, the first contiguous above-threshold
//! run is occupied (scaled by its normalized excess power), and everything
//! behind the first occluding run is unknown. Those per-cell probabilities
//! regularize field training and, reprojected into a world grid with the
//! standard additive log-odds update, form the classic grid-mapping baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radar::{RadarConfig, RadarFrame};

/// Inverse sensor model probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyParams {
    /// Probability assigned to cells in front of the first return.
    pub p_free: f64,
    /// Probability assigned to the strongest cell of the first return run.
    pub p_occ: f64,
    /// Output clamp range, strictly inside (0, 1).
    pub p_min: f64,
    pub p_max: f64,
}

impl Default for OccupancyParams {
    fn default() -> Self {
        OccupancyParams {
            p_free: 0.1,
            p_occ: 0.95,
            p_min: 0.02,
            p_max: 0.98,
        }
    }
}

impl OccupancyParams {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.p_min
            && self.p_min < self.p_max
            && self.p_max < 1.0
            && self.p_free > 0.0
            && self.p_free < 0.5
            && self.p_occ > 0.5
            && self.p_occ < 1.0;
        if !ok {
            return Err(Error::InvalidConfig(
                "occupancy probabilities out of order".into(),
            ));
        }
        Ok(())
    }
}

/// Per-cell occupancy probabilities of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyEstimate {
    /// Row-major `[azimuth][bin]`, each value within the clamp range.
    pub probabilities: Vec<f64>,
    pub n_azimuth: usize,
    pub n_bins: usize,
}

impl OccupancyEstimate {
    pub fn at(&self, beam: usize, bin: usize) -> f64 {
        self.probabilities[beam * self.n_bins + bin]
    }

    pub fn row(&self, beam: usize) -> &[f64] {
        &self.probabilities[beam * self.n_bins..(beam + 1) * self.n_bins]
    }
}

/// Detection threshold from the frame itself: mean plus three standard
/// deviations of the top range decile, which at sane scene layouts contains
/// only the noise floor.
pub fn detection_threshold(frame: &RadarFrame) -> f64 {
    let start = (frame.n_bins as f64 * 0.9).ceil() as usize;
    let start = start.min(frame.n_bins.saturating_sub(1));
    let mut n = 0usize;
    let mut mean = 0.0f64;
    for beam in 0..frame.n_azimuth() {
        for &p in &frame.beam_row(beam)[start..] {
            n += 1;
            mean += p as f64;
        }
    }
    if n == 0 {
        return f64::MAX;
    }
    mean /= n as f64;
    let mut var = 0.0f64;
    for beam in 0..frame.n_azimuth() {
        for &p in &frame.beam_row(beam)[start..] {
            let d = p as f64 - mean;
            var += d * d;
        }
    }
    mean + 3.0 * (var / n as f64).sqrt()
}

/// Scan each ray outward and classify bins as free / occupied / unknown.
pub fn estimate_occupancy(
    frame: &RadarFrame,
    threshold: f64,
    params: &OccupancyParams,
) -> OccupancyEstimate {
    let n_bins = frame.n_bins;
    let mut probabilities = vec![0.0f64; frame.n_azimuth() * n_bins];
    for beam in 0..frame.n_azimuth() {
        let row = frame.beam_row(beam);
        let out = &mut probabilities[beam * n_bins..(beam + 1) * n_bins];
        scan_ray(row, threshold, params, out);
    }
    OccupancyEstimate {
        probabilities,
        n_azimuth: frame.n_azimuth(),
        n_bins,
    }
}

fn scan_ray(row: &[f32], threshold: f64, params: &OccupancyParams, out: &mut [f64]) {
    let first_hit = row.iter().position(|&p| p as f64 > threshold);
    match first_hit {
        None => out.fill(params.p_free.clamp(params.p_min, params.p_max)),
        Some(start) => {
            let mut end = start;
            while end < row.len() && row[end] as f64 > threshold {
                end += 1;
            }
            let max_excess = row[start..end]
                .iter()
                .map(|&p| p as f64 - threshold)
                .fold(0.0f64, f64::max);
            for (b, o) in out.iter_mut().enumerate() {
                let p = if b < start {
                    params.p_free
                } else if b < end {
                    // p_occ scaled toward the prior by the run's normalized
                    // excess power
                    let excess = (row[b] as f64 - threshold) / max_excess;
                    0.5 + (params.p_occ - 0.5) * excess
                } else {
                    0.5
                };
                *o = p.clamp(params.p_min, params.p_max);
            }
        }
    }
}

/// World-anchored BEV log-odds grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    pub log_odds: Vec<f64>,
    pub width: usize,
    pub height: usize,
    /// World coordinates of the corner of cell (0, 0).
    pub origin: [f64; 2],
    pub resolution: f64,
}

impl GridMap {
    pub fn cell_index(&self, x: f64, y: f64) -> Option<usize> {
        let cx = ((x - self.origin[0]) / self.resolution).floor();
        let cy = ((y - self.origin[1]) / self.resolution).floor();
        if cx < 0.0 || cy < 0.0 || cx >= self.width as f64 || cy >= self.height as f64 {
            return None;
        }
        Some(cy as usize * self.width + cx as usize)
    }

    pub fn cell_center(&self, index: usize) -> [f64; 2] {
        let cx = index % self.width;
        let cy = index / self.width;
        [
            self.origin[0] + (cx as f64 + 0.5) * self.resolution,
            self.origin[1] + (cy as f64 + 0.5) * self.resolution,
        ]
    }

    pub fn posterior(&self, index: usize) -> f64 {
        1.0 - 1.0 / (1.0 + self.log_odds[index].exp())
    }
}

/// Fusion parameters of the grid-mapping baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridMapParams {
    pub occupancy: OccupancyParams,
    /// Symmetric log-odds clamp.
    pub log_odds_clamp: f64,
}

impl Default for GridMapParams {
    fn default() -> Self {
        GridMapParams {
            occupancy: OccupancyParams::default(),
            log_odds_clamp: 30.0,
        }
    }
}

/// Accumulate per-frame occupancy estimates into a fused world BEV map with
/// additive log-odds updates. Unknown cells (probability 0.5) contribute
/// nothing, so the fold is order-independent up to float rounding.
pub fn grid_map_accumulate(
    frames: &[RadarFrame],
    cfg: &RadarConfig,
    resolution: f64,
    params: &GridMapParams,
) -> Result<GridMap> {
    if frames.is_empty() {
        return Err(Error::EmptySequence);
    }
    if !(resolution > 0.0) {
        return Err(Error::InvalidConfig("resolution must be > 0".into()));
    }
    params.occupancy.validate()?;

    // grid footprint: all sensor positions padded by the bin coverage
    let reach = cfg.max_range();
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for f in frames {
        let p = f.pose.position();
        min[0] = min[0].min(p.x - reach);
        min[1] = min[1].min(p.y - reach);
        max[0] = max[0].max(p.x + reach);
        max[1] = max[1].max(p.y + reach);
    }
    let width = ((max[0] - min[0]) / resolution).ceil() as usize + 1;
    let height = ((max[1] - min[1]) / resolution).ceil() as usize + 1;
    let mut map = GridMap {
        log_odds: vec![0.0; width * height],
        width,
        height,
        origin: [min[0], min[1]],
        resolution,
    };

    let estimates: Vec<OccupancyEstimate> = frames
        .par_iter()
        .map(|f| estimate_occupancy(f, detection_threshold(f), &params.occupancy))
        .collect();

    let dr = cfg.bin_spacing();
    for (frame, est) in frames.iter().zip(&estimates) {
        let origin = frame.pose.position();
        for (beam, &az) in frame.azimuths.iter().enumerate() {
            let dir = frame
                .pose
                .rotate(&nalgebra::Vector3::new(az.cos(), az.sin(), 0.0));
            for bin in 0..frame.n_bins {
                let p = est.at(beam, bin);
                if p == 0.5 {
                    continue;
                }
                let r = bin as f64 * dr;
                let x = origin.x + r * dir.x;
                let y = origin.y + r * dir.y;
                if let Some(i) = map.cell_index(x, y) {
                    let l = (p / (1.0 - p)).ln();
                    map.log_odds[i] = (map.log_odds[i] + l)
                        .clamp(-params.log_odds_clamp, params.log_odds_clamp);
                }
            }
        }
    }
    Ok(map)
}

/// Centers of cells whose posterior exceeds the threshold.
pub fn grid_map_to_points(map: &GridMap, threshold: f64) -> Result<Vec<[f64; 2]>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidConfig(
            "threshold must lie in (0, 1)".into(),
        ));
    }
    Ok((0..map.log_odds.len())
        .filter(|&i| map.posterior(i) > threshold)
        .map(|i| map.cell_center(i))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Pose;
    use crate::radar::RadiationPattern;
    use approx::assert_relative_eq;
    use nalgebra::Point3;

    fn cfg() -> RadarConfig {
        RadarConfig {
            carrier_hz: 77e9,
            freq_deviation_hz: 500e6,
            sweep_period_s: 1e-3,
            n_bins: 32,
            n_azimuth: 8,
            transmit_power: 1.0,
            antenna_gain: 1.0,
            half_fov_azimuth: 0.03,
            half_fov_elevation: 0.03,
            azimuth_pattern: RadiationPattern::Uniform,
            elevation_pattern: RadiationPattern::Uniform,
        }
    }

    fn frame_with(power: Vec<f32>, cfg: &RadarConfig, pose: Pose) -> RadarFrame {
        RadarFrame::new(pose, cfg.beam_azimuths(), power, cfg.n_bins).unwrap()
    }

    fn zero_frame(cfg: &RadarConfig, pose: Pose) -> RadarFrame {
        frame_with(vec![0.0; cfg.n_azimuth * cfg.n_bins], cfg, pose)
    }

    #[test]
    fn all_zero_frame_is_free() {
        let cfg = cfg();
        let frame = zero_frame(&cfg, Pose::identity());
        let est = estimate_occupancy(&frame, 0.1, &OccupancyParams::default());
        assert!(est.probabilities.iter().all(|&p| p == 0.1));
    }

    #[test]
    fn single_return_hand_case() {
        let cfg = cfg();
        let mut frame = zero_frame(&cfg, Pose::identity());
        let beam = 3usize;
        let hit = 12usize;
        frame.power[beam * cfg.n_bins + hit] = 5.0;
        let params = OccupancyParams::default();
        let est = estimate_occupancy(&frame, 1.0, &params);
        let row = est.row(beam);
        for (b, &p) in row.iter().enumerate() {
            if b < hit {
                assert_eq!(p, params.p_free);
            } else if b == hit {
                assert_eq!(p, params.p_occ);
            } else {
                assert_eq!(p, 0.5);
            }
        }
        // other rays are untouched by the detection
        assert!(est.row(0).iter().all(|&p| p == params.p_free));
        // everything stays clamped
        assert!(est
            .probabilities
            .iter()
            .all(|&p| (params.p_min..=params.p_max).contains(&p)));
    }

    #[test]
    fn run_scaling_peaks_at_p_occ() {
        let cfg = cfg();
        let mut frame = zero_frame(&cfg, Pose::identity());
        // contiguous run: excess 1, 4 above threshold 1
        frame.power[10] = 2.0;
        frame.power[11] = 5.0;
        let params = OccupancyParams::default();
        let est = estimate_occupancy(&frame, 1.0, &params);
        let row = est.row(0);
        assert_relative_eq!(row[11], params.p_occ, epsilon = 1e-12);
        assert_relative_eq!(
            row[10],
            0.5 + (params.p_occ - 0.5) * 0.25,
            epsilon = 1e-12
        );
        assert_eq!(row[12], 0.5);
    }

    #[test]
    fn rays_are_independent() {
        let cfg = cfg();
        let mut frame = zero_frame(&cfg, Pose::identity());
        frame.power[2 * cfg.n_bins + 7] = 3.0;
        frame.power[5 * cfg.n_bins + 21] = 9.0;
        let params = OccupancyParams::default();
        let a = estimate_occupancy(&frame, 1.0, &params);

        // permute all other rays; ray 2 must not change
        let mut permuted = frame.clone();
        for (dst, src) in [(0usize, 5usize), (5, 0), (1, 4), (4, 1)] {
            let row: Vec<f32> = frame.beam_row(src).to_vec();
            permuted.power[dst * cfg.n_bins..(dst + 1) * cfg.n_bins].copy_from_slice(&row);
        }
        let b = estimate_occupancy(&permuted, 1.0, &params);
        assert_eq!(a.row(2), b.row(2));
    }

    #[test]
    fn joint_scaling_preserves_binarized_pattern() {
        let cfg = cfg();
        let mut frame = zero_frame(&cfg, Pose::identity());
        frame.power[6] = 2.5;
        frame.power[7] = 1.5;
        frame.power[20 + cfg.n_bins] = 4.0;
        let params = OccupancyParams::default();
        let a = estimate_occupancy(&frame, 1.0, &params);
        let mut scaled = frame.clone();
        for p in &mut scaled.power {
            *p *= 100.0;
        }
        let b = estimate_occupancy(&scaled, 100.0, &params);
        let classify = |p: f64| (p > 0.5) as i8 - (p < 0.5) as i8;
        for (pa, pb) in a.probabilities.iter().zip(&b.probabilities) {
            assert_eq!(classify(*pa), classify(*pb));
        }
    }

    #[test]
    fn detection_threshold_reads_the_noise_tail() {
        let cfg = cfg();
        let mut frame = zero_frame(&cfg, Pose::identity());
        for row in 0..cfg.n_azimuth {
            for bin in 0..cfg.n_bins {
                frame.power[row * cfg.n_bins + bin] = 0.25;
            }
            frame.power[row * cfg.n_bins + 5] = 10.0; // signal outside the tail
        }
        let t = detection_threshold(&frame);
        assert_relative_eq!(t, 0.25, epsilon = 1e-9);
    }

    fn single_target_frames(cfg: &RadarConfig, n: usize) -> Vec<RadarFrame> {
        (0..n)
            .map(|_| {
                let mut f = zero_frame(cfg, Pose::from_position_yaw(Point3::origin(), 0.0));
                f.power[0 * cfg.n_bins + 12] = 5.0;
                f
            })
            .collect()
    }

    #[test]
    fn grid_map_accumulates_repeated_observations() {
        let cfg = cfg();
        let frames = single_target_frames(&cfg, 10);
        let params = GridMapParams::default();
        let map = grid_map_accumulate(&frames, &cfg, 0.5, &params).unwrap();
        let single = grid_map_accumulate(&frames[..1], &cfg, 0.5, &params).unwrap();
        // locate the hit cell in world space
        let az = cfg.beam_azimuth(0);
        let r = 12.0 * cfg.bin_spacing();
        let idx = map.cell_index(r * az.cos(), r * az.sin()).unwrap();
        let sidx = single.cell_index(r * az.cos(), r * az.sin()).unwrap();
        assert_relative_eq!(
            map.log_odds[idx],
            10.0 * single.log_odds[sidx],
            max_relative = 1e-9
        );
    }

    #[test]
    fn grid_map_order_invariant() {
        let cfg = cfg();
        let mut frames = single_target_frames(&cfg, 2);
        frames[1].power[1 * cfg.n_bins + 20] = 7.0;
        let params = GridMapParams::default();
        let a = grid_map_accumulate(&frames, &cfg, 0.5, &params).unwrap();
        frames.reverse();
        let b = grid_map_accumulate(&frames, &cfg, 0.5, &params).unwrap();
        for (x, y) in a.log_odds.iter().zip(&b.log_odds) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_map_points_threshold_monotone() {
        let cfg = cfg();
        let frames = single_target_frames(&cfg, 3);
        let map = grid_map_accumulate(&frames, &cfg, 0.5, &GridMapParams::default()).unwrap();
        let hi = grid_map_to_points(&map, 0.9).unwrap();
        let lo = grid_map_to_points(&map, 0.2).unwrap();
        assert!(hi.len() <= lo.len());
        for p in &hi {
            assert!(lo.contains(p));
        }
        // a threshold above every posterior gives the empty set
        let none = grid_map_to_points(&map, 0.999999999).unwrap();
        assert!(none.is_empty());
        assert!(matches!(
            grid_map_accumulate(&[], &cfg, 0.5, &GridMapParams::default()),
            Err(Error::EmptySequence)
        ));
    }
}
