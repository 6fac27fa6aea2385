//! Frequency-hopping controller synthesis with ground truth.
//!
//! A source repeats a fundamental period holding three dwells separated by three
//! strictly increasing guard intervals, so `3 * dwell + sum(guards) == period`.

mod channel;
mod scenario;
mod waveform;

use std::f64::consts::TAU;

use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use channel::{apply_channel, ChannelConfig, InterferenceBurst, MultipathTap};
pub use scenario::{GroundTruth, Scenario, ScenarioSource, Synthesis, DEFAULT_SAMPLE_RATE_HZ};
pub use waveform::Waveform;

use crate::error::{config_err, Result};
use crate::iq_io::IqRecording;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopPlanEntry {
    pub start_time_s: f64,
    pub dwell_time_s: f64,
    /// Carrier relative to the band center.
    pub carrier_offset_hz: f64,
    pub phase_rad: f64,
    pub source_id: u32,
    /// Position of the hop within its source's plan.
    pub hop_index: usize,
    /// Set when the recording ends before the nominal dwell does.
    #[serde(default)]
    pub truncated: bool,
}

impl HopPlanEntry {
    pub fn stop_time_s(&self) -> f64 {
        self.start_time_s + self.dwell_time_s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceProfile {
    #[serde(default)]
    pub source_id: u32,
    pub dwell_time_s: f64,
    /// Guard intervals after the first, second and third dwell of a period.
    pub guard_times_s: [f64; 3],
    pub fundamental_period_s: f64,
    pub frequency_set_hz: Vec<f64>,
    pub hop_sequence: Vec<usize>,
    #[serde(default)]
    pub waveform: Waveform,
    #[serde(default = "default_power_dbfs")]
    pub power_dbfs: f64,
    /// Half-width of a uniform per-hop dwell perturbation. Zero keeps the timing exact.
    #[serde(default)]
    pub dwell_jitter_s: f64,
    /// Drives carrier phases, symbol streams and dwell jitter.
    #[serde(default)]
    pub seed: u64,
}

fn default_power_dbfs() -> f64 {
    -10.0
}

/// Carrier raster slots drawn by the default hop sequence.
const FUTABA_SEQUENCE_SLOTS: [usize; 16] = [3, 11, 7, 15, 0, 9, 17, 5, 13, 2, 10, 18, 6, 14, 1, 12];

impl SourceProfile {
    /// Controller timing: 1.44 ms dwells, guards of 0.5, 0.8 and 1.18 ms, 6.8 ms period.
    ///
    /// Carriers sit on a raster of `sample_rate / 32` spanning -15..=3 raster steps
    /// around the band center (2.4025 to 2.4475 GHz around 2.44 GHz at 80 MS/s). The
    /// raster lands on FFT bin centers for every power-of-two window of 32 or more.
    /// The sequence repeats a carrier on the first two hops of each period.
    pub fn futaba_t8j(sample_rate_hz: f64) -> Self {
        let spacing = sample_rate_hz / 32.0;
        let frequency_set_hz = (-15..=3).map(|k| k as f64 * spacing).collect();
        let hop_sequence = FUTABA_SEQUENCE_SLOTS
            .chunks(2)
            .flat_map(|p| [p[0], p[0], p[1]])
            .collect();
        SourceProfile {
            source_id: 0,
            dwell_time_s: 1.44e-3,
            guard_times_s: [0.5e-3, 0.8e-3, 1.18e-3],
            fundamental_period_s: 6.8e-3,
            frequency_set_hz,
            hop_sequence,
            waveform: Waveform::default(),
            power_dbfs: default_power_dbfs(),
            dwell_jitter_s: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [g1, g2, g3] = self.guard_times_s;
        if !(self.dwell_time_s > 0.0 && self.dwell_time_s.is_finite()) {
            return config_err("dwell time must be positive");
        }
        if !(g1 > 0.0 && g1 < g2 && g2 < g3 && g3.is_finite()) {
            return config_err(format!(
                "guard times must be positive and satisfy dt1 < dt2 < dt3, got ({g1}, {g2}, {g3})"
            ));
        }
        let total = 3.0 * self.dwell_time_s + g1 + g2 + g3;
        let t1 = self.fundamental_period_s;
        if !(t1 > 0.0) || ((total - t1) / t1).abs() > 1e-12 {
            return config_err(format!(
                "3 * dwell + dt1 + dt2 + dt3 = {total} s must equal the fundamental period {t1} s"
            ));
        }
        if self.frequency_set_hz.is_empty() {
            return config_err("frequency set is empty");
        }
        if self.hop_sequence.is_empty() {
            return config_err("hop sequence is empty");
        }
        if let Some(&bad) = self
            .hop_sequence
            .iter()
            .find(|&&i| i >= self.frequency_set_hz.len())
        {
            return config_err(format!(
                "hop sequence index {bad} outside a frequency set of {}",
                self.frequency_set_hz.len()
            ));
        }
        if !(self.dwell_jitter_s >= 0.0 && self.dwell_jitter_s < g1) {
            return config_err("dwell jitter must be non-negative and shorter than the first guard");
        }
        if !self.power_dbfs.is_finite() {
            return config_err("power must be finite");
        }
        Ok(())
    }

    /// Offsets of the three dwells inside one period.
    pub fn in_period_offsets_s(&self) -> [f64; 3] {
        let d = self.dwell_time_s;
        let [g1, g2, _] = self.guard_times_s;
        [0.0, d + g1, 2.0 * d + g1 + g2]
    }
}

/// Seeded generator for one named stream of a profile.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const PHASE_STREAM: u64 = 1 << 62;
const JITTER_STREAM: u64 = 1 << 61;

pub fn build_hop_plan(
    profile: &SourceProfile,
    duration_s: f64,
    start_offset_s: f64,
) -> Result<Vec<HopPlanEntry>> {
    profile.validate()?;
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return config_err("duration must be positive");
    }
    if !(start_offset_s >= 0.0 && start_offset_s.is_finite()) {
        return config_err("start offset must be non-negative");
    }
    let offsets = profile.in_period_offsets_s();
    let sid = u64::from(profile.source_id);
    let mut phase_rng = stream_rng(profile.seed, PHASE_STREAM | sid);
    let mut jitter_rng = stream_rng(profile.seed, JITTER_STREAM | sid);
    let mut plan = Vec::new();
    for k in 0.. {
        let start = start_offset_s + (k / 3) as f64 * profile.fundamental_period_s + offsets[k % 3];
        if start >= duration_s {
            break;
        }
        let nominal = if profile.dwell_jitter_s > 0.0 {
            profile.dwell_time_s + jitter_rng.random_range(-profile.dwell_jitter_s..=profile.dwell_jitter_s)
        } else {
            profile.dwell_time_s
        };
        let dwell = nominal.min(duration_s - start);
        let slot = profile.hop_sequence[k % profile.hop_sequence.len()];
        plan.push(HopPlanEntry {
            start_time_s: start,
            dwell_time_s: dwell,
            carrier_offset_hz: profile.frequency_set_hz[slot],
            phase_rad: phase_rng.random_range(0.0..TAU),
            source_id: profile.source_id,
            hop_index: k,
            truncated: dwell < nominal,
        });
    }
    Ok(plan)
}

/// Renders hops onto a zero background of `num_samples` samples at center frequency 0.
///
/// Each hop carries a fresh unit-power waveform seeded by (profile seed, source, hop
/// index), so rendering a union of plans equals the sum of rendering each part.
pub fn render(
    plan: &[HopPlanEntry],
    profile: &SourceProfile,
    sample_rate_hz: f64,
    num_samples: usize,
) -> Result<IqRecording> {
    let mut acc = vec![Complex64::new(0.0, 0.0); num_samples];
    render_into(&mut acc, plan, profile, sample_rate_hz)?;
    to_recording(&acc, sample_rate_hz)
}

/// Index of the first sample at or after `t`. Times that are an exact multiple of
/// the sample period up to rounding land on that sample.
fn first_sample_at(t: f64, sample_rate_hz: f64) -> usize {
    (t * sample_rate_hz - 1e-6).ceil().max(0.0) as usize
}

pub(crate) fn render_into(
    acc: &mut [Complex64],
    plan: &[HopPlanEntry],
    profile: &SourceProfile,
    sample_rate_hz: f64,
) -> Result<()> {
    profile.waveform.validate(sample_rate_hz)?;
    if let Some(h) = plan
        .iter()
        .find(|h| h.carrier_offset_hz.abs() >= sample_rate_hz / 2.0)
    {
        return config_err(format!(
            "carrier offset {} Hz aliases at a sample rate of {sample_rate_hz} Hz",
            h.carrier_offset_hz
        ));
    }
    let amplitude = 10f64.powf(profile.power_dbfs / 20.0);
    let shaper = profile.waveform.shaper();
    for hop in plan {
        let first = first_sample_at(hop.start_time_s, sample_rate_hz);
        let last = first_sample_at(hop.stop_time_s(), sample_rate_hz).min(acc.len());
        if first >= last {
            continue;
        }
        let stream = (u64::from(hop.source_id) << 32) | hop.hop_index as u64;
        let mut rng = stream_rng(profile.seed, stream);
        let cycles_per_sample = hop.carrier_offset_hz / sample_rate_hz;
        let carrier = |n: usize| TAU * (cycles_per_sample * (first + n) as f64).fract() + hop.phase_rad;
        let span = &mut acc[first..last];
        // Constant-envelope waveforms fold into the carrier phase: one rotation per sample.
        if let Some(phases) = shaper.phase_track(span.len(), sample_rate_hz, &mut rng) {
            for (n, (slot, p)) in span.iter_mut().zip(phases).enumerate() {
                *slot += Complex64::from_polar(amplitude, carrier(n) + p);
            }
        } else {
            let baseband = shaper.generate(span.len(), sample_rate_hz, &mut rng);
            for (n, (slot, s)) in span.iter_mut().zip(baseband).enumerate() {
                *slot += s * Complex64::from_polar(amplitude, carrier(n));
            }
        }
    }
    Ok(())
}

pub(crate) fn to_recording(acc: &[Complex64], sample_rate_hz: f64) -> Result<IqRecording> {
    let samples = acc
        .iter()
        .map(|s| Complex32::new(s.re as f32, s.im as f32))
        .collect();
    IqRecording::new(samples, sample_rate_hz, 0.0, "synthetic")
}
