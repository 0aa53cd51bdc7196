//! Beam-cone super-sampling and radiation-weighted aggregation.
//!
//! A 2D radar beam integrates returns over its whole divergence cone. To
//! model that, each beam is super-sampled with rays drawn uniformly over the
//! elliptical cone spanned by the azimuth/elevation half opening angles; the
//! first sample is always pinned to the beam center so a sample count of 1
//! degrades to plain center-ray prediction. Per-ray values are combined as a
//! radiation-pattern-weighted mean, so off-boresight rays contribute less.

use nalgebra::{Point3, Vector3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::Pose;
use crate::radar::RadarConfig;

/// One ray within a beam cone, identified by its angular offsets from the
/// beam center. The stored direction is in the sensor frame; apply a pose to
/// obtain world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySample {
    /// Azimuth offset from the beam center (rad).
    pub azimuth_offset: f64,
    /// Elevation offset from the beam center (rad).
    pub elevation_offset: f64,
    /// Unit direction in the sensor frame.
    pub direction: Vector3<f64>,
}

impl RaySample {
    fn from_offsets(beam_azimuth: f64, a: f64, e: f64) -> Self {
        let az = beam_azimuth + a;
        let (se, ce) = e.sin_cos();
        let (sa, ca) = az.sin_cos();
        RaySample {
            azimuth_offset: a,
            elevation_offset: e,
            direction: Vector3::new(ce * ca, ce * sa, se),
        }
    }

    pub fn world_direction(&self, pose: &Pose) -> Vector3<f64> {
        pose.rotate(&self.direction)
    }
}

/// The super-sample set of one beam.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamSampleSet {
    /// Beam center azimuth in the sensor frame (rad).
    pub beam_azimuth: f64,
    pub samples: Vec<RaySample>,
}

impl BeamSampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Radiation-pattern weight of every sample.
    pub fn weights(&self, cfg: &RadarConfig) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| {
                cfg.azimuth_pattern.gain_unchecked(s.azimuth_offset)
                    * cfg.elevation_pattern.gain_unchecked(s.elevation_offset)
            })
            .collect()
    }
}

/// Draw the super-sample set for one beam: the exact beam center plus `s - 1`
/// rays with offsets uniform over the cone rectangle.
pub fn draw_samples(
    beam_azimuth: f64,
    cfg: &RadarConfig,
    s: usize,
    rng: &mut impl Rng,
) -> Result<BeamSampleSet> {
    if s < 1 {
        return Err(Error::DegenerateConfig(
            "supersample count must be >= 1".into(),
        ));
    }
    let mut samples = Vec::with_capacity(s);
    samples.push(RaySample::from_offsets(beam_azimuth, 0.0, 0.0));
    let (a_max, e_max) = (cfg.half_fov_azimuth, cfg.half_fov_elevation);
    for _ in 1..s {
        let a = rng.gen_range(-a_max..a_max);
        let e = rng.gen_range(-e_max..e_max);
        samples.push(RaySample::from_offsets(beam_azimuth, a, e));
    }
    Ok(BeamSampleSet {
        beam_azimuth,
        samples,
    })
}

/// Radiation-weighted mean of per-sample cross-section values:
///
/// ```text
/// sigma_hat = sum_i sigma_i * A(a_i) * E(e_i) / sum_i A(a_i) * E(e_i)
/// ```
pub fn aggregate_sigma(values: &[f64], set: &BeamSampleSet, cfg: &RadarConfig) -> Result<f64> {
    if values.len() != set.len() {
        return Err(Error::ShapeMismatch {
            expected: set.len(),
            got: values.len(),
        });
    }
    let weights = set.weights(cfg);
    weighted_mean(values, &weights)
}

/// Weighted mean shared by the aggregation paths; weight sums are positive by
/// construction of the radiation patterns, so a zero sum is an internal error.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.len() != weights.len() {
        return Err(Error::ShapeMismatch {
            expected: weights.len(),
            got: values.len(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (v, w) in values.iter().zip(weights) {
        num += v * w;
        den += w;
    }
    if den <= 0.0 {
        return Err(Error::ZeroWeightSum);
    }
    Ok(num / den)
}

/// World-space query points for every (sample, range) pair, row-major with
/// samples as rows.
pub fn sample_points(pose: &Pose, set: &BeamSampleSet, ranges: &[f64]) -> Vec<Point3<f64>> {
    let origin = pose.position();
    let mut out = Vec::with_capacity(set.len() * ranges.len());
    for s in &set.samples {
        let dir = s.world_direction(pose);
        for &r in ranges {
            out.push(origin + dir * r);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar::RadiationPattern;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> RadarConfig {
        RadarConfig {
            carrier_hz: 77e9,
            freq_deviation_hz: 500e6,
            sweep_period_s: 1e-3,
            n_bins: 64,
            n_azimuth: 36,
            transmit_power: 1.0,
            antenna_gain: 1.0,
            half_fov_azimuth: 0.04,
            half_fov_elevation: 0.03,
            azimuth_pattern: RadiationPattern::Uniform,
            elevation_pattern: RadiationPattern::Uniform,
        }
    }

    #[test]
    fn single_sample_is_the_beam_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set = draw_samples(0.5, &cfg(), 1, &mut rng).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.samples[0].azimuth_offset, 0.0);
        assert_eq!(set.samples[0].elevation_offset, 0.0);
        let d = set.samples[0].direction;
        assert_relative_eq!(d.x, 0.5f64.cos(), epsilon = 1e-12);
        assert_relative_eq!(d.y, 0.5f64.sin(), epsilon = 1e-12);
        assert_eq!(d.z, 0.0);
    }

    #[test]
    fn offsets_stay_inside_the_cone() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let set = draw_samples(-1.0, &c, 512, &mut rng).unwrap();
        for s in &set.samples {
            assert!(s.azimuth_offset.abs() <= c.half_fov_azimuth);
            assert!(s.elevation_offset.abs() <= c.half_fov_elevation);
            assert_relative_eq!(s.direction.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn offset_mean_matches_uniform_distribution() {
        let c = cfg();
        let n = 100_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set = draw_samples(0.0, &c, n, &mut rng).unwrap();
        let mean: f64 =
            set.samples.iter().map(|s| s.azimuth_offset).sum::<f64>() / n as f64;
        // U(-A, A) has sd A/sqrt(3); allow 3 sigma of the sample mean
        let bound = 3.0 * c.half_fov_azimuth / (3.0f64.sqrt() * (n as f64).sqrt());
        assert!(mean.abs() < bound, "mean {mean} exceeds {bound}");
    }

    #[test]
    fn zero_samples_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(matches!(
            draw_samples(0.0, &cfg(), 0, &mut rng),
            Err(Error::DegenerateConfig(_))
        ));
    }

    fn set_with_offsets(offsets: &[(f64, f64)]) -> BeamSampleSet {
        BeamSampleSet {
            beam_azimuth: 0.0,
            samples: offsets
                .iter()
                .map(|&(a, e)| RaySample::from_offsets(0.0, a, e))
                .collect(),
        }
    }

    #[test]
    fn uniform_weights_reduce_to_arithmetic_mean() {
        let set = set_with_offsets(&[(0.0, 0.0), (0.01, -0.01)]);
        let v = aggregate_sigma(&[2.0, 4.0], &set, &cfg()).unwrap();
        assert_eq!(v, 3.0);
        let single = set_with_offsets(&[(0.0, 0.0)]);
        assert_eq!(aggregate_sigma(&[5.0], &single, &cfg()).unwrap(), 5.0);
    }

    #[test]
    fn hand_weighted_case() {
        // gaussian azimuth pattern with gain 1 at center; second sample at
        // an offset where the gain is exactly... instead pin weights directly
        let vals = [0.0, 4.0];
        let weights = [1.0, 3.0];
        assert_eq!(weighted_mean(&vals, &weights).unwrap(), 3.0);
    }

    #[test]
    fn length_mismatch_rejected() {
        let set = set_with_offsets(&[(0.0, 0.0), (0.01, 0.0)]);
        assert!(matches!(
            aggregate_sigma(&[1.0], &set, &cfg()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn sample_points_boresight() {
        let set = set_with_offsets(&[(0.0, 0.0)]);
        let pts = sample_points(&Pose::identity(), &set, &[1.0]);
        assert_relative_eq!(pts[0].x, 1.0, epsilon = 1e-12);
        assert_relative_eq!(pts[0].y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(pts[0].z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sample_points_collinear_and_equivariant() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let set = draw_samples(0.8, &c, 4, &mut rng).unwrap();
        let ranges = [1.0, 2.5, 7.0];
        let pose = Pose::from_position_yaw(Point3::new(3.0, -1.0, 0.5), 0.4);
        let pts = sample_points(&pose, &set, &ranges);
        // per-sample points are collinear with the origin
        for i in 0..set.len() {
            let p1 = pts[i * ranges.len()] - pose.position();
            for (j, &r) in ranges.iter().enumerate() {
                let pj = pts[i * ranges.len() + j] - pose.position();
                assert_relative_eq!(pj.norm(), r, epsilon = 1e-9);
                assert_relative_eq!(
                    p1.cross(&pj).norm(),
                    0.0,
                    epsilon = 1e-9
                );
            }
        }
        // rigid equivariance against identity-pose points
        let base = sample_points(&Pose::identity(), &set, &ranges);
        for (p, b) in pts.iter().zip(&base) {
            let moved = pose.transform_point(b);
            assert_relative_eq!((p - moved).norm(), 0.0, epsilon = 1e-9);
        }
    }

    proptest! {
        #[test]
        fn aggregate_is_a_convex_combination(
            vals in proptest::collection::vec(0.0f64..10.0, 1..20),
            seed in 0u64..1000,
        ) {
            let c = RadarConfig {
                azimuth_pattern: RadiationPattern::Gaussian { half_power_beamwidth: 0.02 },
                elevation_pattern: RadiationPattern::Gaussian { half_power_beamwidth: 0.015 },
                ..cfg()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let set = draw_samples(0.0, &c, vals.len(), &mut rng).unwrap();
            let agg = aggregate_sigma(&vals, &set, &c).unwrap();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(agg >= lo - 1e-12 && agg <= hi + 1e-12);

            // permutation invariance: reverse both together
            let mut rv = vals.clone();
            rv.reverse();
            let mut rset = set.clone();
            rset.samples.reverse();
            let agg_rev = aggregate_sigma(&rv, &rset, &c).unwrap();
            prop_assert!((agg - agg_rev).abs() <= 1e-12 * agg.abs().max(1.0));

            // homogeneity
            let scaled: Vec<f64> = vals.iter().map(|v| 3.0 * v).collect();
            let agg_scaled = aggregate_sigma(&scaled, &set, &c).unwrap();
            prop_assert!((agg_scaled - 3.0 * agg).abs() <= 1e-9 * agg.abs().max(1.0));
        }
    }
}
