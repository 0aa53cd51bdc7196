//! FMCW sensor constants and closed-form signal math.
//!
//! A sawtooth chirp of period `T_s` and half-amplitude `delta_f` sweeps the
//! transmit frequency; the mixer output for a stationary target at range `R`
//! is a tone at
//!
//! ```text
//! f_IF = R * 4*delta_f / (c * T_s)
//! ```
//!
//! so the FFT of one sweep resolves targets into bins spaced
//! `delta_r = c / (4*delta_f)` apart. Returned power follows the two-way
//! radar equation with an `R^4` spreading denominator, and per-beam antenna
//! directivity is modelled by a radiation pattern over angular offsets from
//! boresight.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Pose;

/// Propagation speed (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Targets closer than this are unresolvable (zero-range guard).
pub const MIN_RANGE: f64 = 1e-6;

/// Antenna gain versus angular offset from the beam center.
///
/// Boresight gain is exactly 1 and the pattern is even and non-increasing in
/// the offset magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RadiationPattern {
    /// Constant unit gain across the whole beam.
    Uniform,
    /// Gaussian roll-off; gain is 0.5 at half the half-power beamwidth.
    Gaussian { half_power_beamwidth: f64 },
}

impl RadiationPattern {
    /// Gain at an angular offset from boresight.
    ///
    /// `half_fov` is the supported offset range; offsets beyond it are
    /// outside the beam and rejected.
    pub fn gain(&self, offset: f64, half_fov: f64) -> Result<f64> {
        if offset.abs() > half_fov {
            return Err(Error::OffsetOutOfFov { offset, half_fov });
        }
        Ok(self.gain_unchecked(offset))
    }

    /// Gain without the field-of-view check; used on offsets that are in
    /// range by construction (drawn from the beam cone).
    pub fn gain_unchecked(&self, offset: f64) -> f64 {
        match *self {
            RadiationPattern::Uniform => 1.0,
            RadiationPattern::Gaussian {
                half_power_beamwidth,
            } => {
                let x = offset / half_power_beamwidth;
                (-4.0 * std::f64::consts::LN_2 * x * x).exp()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let RadiationPattern::Gaussian {
            half_power_beamwidth,
        } = self
        {
            if !(*half_power_beamwidth > 0.0) {
                return Err(Error::InvalidConfig(
                    "half_power_beamwidth must be > 0".into(),
                ));
            }
        }
        Ok(())
    }
}

/// All FMCW sensor constants: chirp, binning, gains, beam geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarConfig {
    /// Carrier frequency (Hz).
    pub carrier_hz: f64,
    /// Sweep half-amplitude `delta_f` (Hz); the chirp spans `2*delta_f`.
    pub freq_deviation_hz: f64,
    /// Sweep period `T_s` (s).
    pub sweep_period_s: f64,
    /// Number of range-FFT bins per beam.
    pub n_bins: usize,
    /// Number of azimuth beams per frame, uniformly spaced over the circle.
    pub n_azimuth: usize,
    /// Transmitted power (linear units).
    pub transmit_power: f64,
    /// Antenna gain (linear, dimensionless).
    pub antenna_gain: f64,
    /// Azimuth half opening angle of one beam (rad).
    pub half_fov_azimuth: f64,
    /// Elevation half opening angle of one beam (rad).
    pub half_fov_elevation: f64,
    pub azimuth_pattern: RadiationPattern,
    pub elevation_pattern: RadiationPattern,
}

impl RadarConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.freq_deviation_hz > 0.0) {
            return bad("freq_deviation_hz must be > 0");
        }
        if !(self.sweep_period_s > 0.0) {
            return bad("sweep_period_s must be > 0");
        }
        if self.n_bins < 2 {
            return bad("n_bins must be >= 2");
        }
        if self.n_azimuth < 1 {
            return bad("n_azimuth must be >= 1");
        }
        if !(self.transmit_power > 0.0) {
            return bad("transmit_power must be > 0");
        }
        if !(self.antenna_gain > 0.0) {
            return bad("antenna_gain must be > 0");
        }
        for (fov, name) in [
            (self.half_fov_azimuth, "half_fov_azimuth"),
            (self.half_fov_elevation, "half_fov_elevation"),
        ] {
            if !(fov > 0.0 && fov < std::f64::consts::FRAC_PI_2) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must lie in (0, pi/2)"
                )));
            }
        }
        self.azimuth_pattern.validate()?;
        self.elevation_pattern.validate()
    }

    /// Instantaneous sawtooth frequency offset `theta(t) = 2*delta_f * mod(t/T_s, 1)`.
    pub fn sawtooth_phase(&self, t: f64) -> f64 {
        let frac = (t / self.sweep_period_s).rem_euclid(1.0);
        2.0 * self.freq_deviation_hz * frac
    }

    /// Beat tone of a stationary target at `range`.
    pub fn if_frequency(&self, range: f64) -> Result<f64> {
        let max_range = SPEED_OF_LIGHT * self.sweep_period_s / 2.0;
        if !(0.0..max_range).contains(&range) {
            return Err(Error::RangeOutOfSweep(range));
        }
        Ok(range * 4.0 * self.freq_deviation_hz / (SPEED_OF_LIGHT * self.sweep_period_s))
    }

    /// Range spacing between adjacent FFT bins: `c / (4*delta_f)`.
    pub fn bin_spacing(&self) -> f64 {
        SPEED_OF_LIGHT / (4.0 * self.freq_deviation_hz)
    }

    /// Range of FFT bin `b`.
    ///
    /// One sweep observed over `n_bins` samples puts the discrete tone of
    /// bin `b` at `b / T_s`, which makes the mapping affine with slope
    /// [`Self::bin_spacing`].
    pub fn bin_to_range(&self, bin: usize) -> Result<f64> {
        if bin >= self.n_bins {
            return Err(Error::BinOutOfRange {
                bin,
                n_bins: self.n_bins,
            });
        }
        Ok(bin as f64 * self.bin_spacing())
    }

    /// Maximum range covered by the bin grid.
    pub fn max_range(&self) -> f64 {
        self.n_bins as f64 * self.bin_spacing()
    }

    /// Two-way radar equation: `P_t * G^2 * sigma / ((4*pi)^3 * R^4)`.
    pub fn received_power(&self, sigma: f64, range: f64) -> Result<f64> {
        if range <= MIN_RANGE {
            return Err(Error::ZeroRange(range));
        }
        let four_pi_cubed = (4.0 * std::f64::consts::PI).powi(3);
        Ok(self.transmit_power * self.antenna_gain * self.antenna_gain * sigma
            / (four_pi_cubed * range.powi(4)))
    }

    /// Sensor-frame azimuth of beam `k`: centers of `n_azimuth` equal sectors
    /// covering the full circle.
    pub fn beam_azimuth(&self, beam: usize) -> f64 {
        let step = std::f64::consts::TAU / self.n_azimuth as f64;
        (beam as f64 + 0.5) * step - std::f64::consts::PI
    }

    pub fn beam_azimuths(&self) -> Vec<f64> {
        (0..self.n_azimuth).map(|k| self.beam_azimuth(k)).collect()
    }
}

/// One raw 2D measurement: a pose plus `n_azimuth x n_bins` linear-power
/// range-FFT magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarFrame {
    pub pose: Pose,
    /// Sensor-frame azimuth of each beam (rad).
    pub azimuths: Vec<f64>,
    /// Linear power, row-major `[azimuth][bin]`.
    pub power: Vec<f32>,
    pub n_bins: usize,
}

impl RadarFrame {
    pub fn new(pose: Pose, azimuths: Vec<f64>, power: Vec<f32>, n_bins: usize) -> Result<Self> {
        if power.len() != azimuths.len() * n_bins {
            return Err(Error::ShapeMismatch {
                expected: azimuths.len() * n_bins,
                got: power.len(),
            });
        }
        Ok(Self {
            pose,
            azimuths,
            power,
            n_bins,
        })
    }

    pub fn n_azimuth(&self) -> usize {
        self.azimuths.len()
    }

    pub fn power_at(&self, beam: usize, bin: usize) -> f32 {
        self.power[beam * self.n_bins + bin]
    }

    pub fn beam_row(&self, beam: usize) -> &[f32] {
        &self.power[beam * self.n_bins..(beam + 1) * self.n_bins]
    }

    pub fn max_power(&self) -> f32 {
        self.power.iter().copied().fold(0.0f32, f32::max)
    }
}
