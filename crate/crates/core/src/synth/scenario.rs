//! Scenario files: one or more sources plus a channel, rendered with ground truth.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{build_hop_plan, render_into, to_recording, ChannelConfig, HopPlanEntry, SourceProfile};
use crate::error::{config_err, Result};
use crate::iq_io::{read_json, write_json, IqRecording};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSource {
    #[serde(flatten)]
    pub profile: SourceProfile,
    #[serde(default)]
    pub start_offset_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "default_capture_id")]
    pub capture_id: String,
    pub sample_rate_hz: f64,
    #[serde(default = "default_center")]
    pub center_frequency_hz: f64,
    pub duration_s: f64,
    pub sources: Vec<ScenarioSource>,
    #[serde(default)]
    pub channel: ChannelConfig,
}

fn default_capture_id() -> String {
    "synthetic".to_string()
}

fn default_center() -> f64 {
    2.44e9
}

/// Sample rate of the default controller scenario.
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 80e6;

/// Ground truth written next to a synthesized capture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub capture_id: String,
    pub sample_rate_hz: f64,
    pub center_frequency_hz: f64,
    pub duration_s: f64,
    pub hops: Vec<HopPlanEntry>,
}

impl GroundTruth {
    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Hops whose full dwell fits in the recording.
    pub fn complete_hops(&self) -> impl Iterator<Item = &HopPlanEntry> {
        self.hops.iter().filter(|h| !h.truncated)
    }
}

#[derive(Clone, Debug)]
pub struct Synthesis {
    pub recording: IqRecording,
    pub truth: GroundTruth,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Scenario {
    /// One controller in AWGN: 50 ms at 80 MS/s, first hop at 0.7 ms so the
    /// capture holds exactly 22 complete hops.
    pub fn futaba(snr_db: f64, seed: u64) -> Self {
        Scenario {
            capture_id: "futaba".into(),
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            center_frequency_hz: default_center(),
            duration_s: 50e-3,
            sources: vec![ScenarioSource {
                profile: SourceProfile::futaba_t8j(DEFAULT_SAMPLE_RATE_HZ),
                start_offset_s: 0.7e-3,
            }],
            channel: ChannelConfig::awgn(snr_db, 0),
        }
        .reseeded(seed)
    }

    /// No emitters, unit-variance noise only.
    pub fn noise_only(seed: u64) -> Self {
        let mut s = Scenario::futaba(0.0, seed);
        s.capture_id = "noise".into();
        s.sources.clear();
        s.channel.snr_db = None;
        s.channel.noise_variance = Some(1.0);
        s
    }

    /// Derives every random stream (channel and per-source) from one seed.
    pub fn reseeded(mut self, seed: u64) -> Self {
        self.channel.rng_seed = seed;
        for (i, s) in self.sources.iter_mut().enumerate() {
            s.profile.seed = splitmix64(seed ^ splitmix64(i as u64 + 1));
        }
        self
    }

    pub fn with_snr(mut self, snr_db: f64) -> Self {
        self.channel.snr_db = Some(snr_db);
        self
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s: Scenario = read_json(path)?;
        s.validate()?;
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return config_err("sample rate must be positive");
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) || self.num_samples() == 0 {
            return config_err("duration must cover at least one sample");
        }
        if !(self.center_frequency_hz >= 0.0 && self.center_frequency_hz.is_finite()) {
            return config_err("center frequency must be non-negative");
        }
        for (i, s) in self.sources.iter().enumerate() {
            s.profile.validate()?;
            s.profile.waveform.validate(self.sample_rate_hz)?;
            if self.sources[..i]
                .iter()
                .any(|o| o.profile.source_id == s.profile.source_id)
            {
                return config_err(format!("duplicate source id {}", s.profile.source_id));
            }
        }
        self.channel.validate(self.sample_rate_hz)
    }

    /// Every source's plan, merged and ordered by start time.
    pub fn hop_plan(&self) -> Result<Vec<HopPlanEntry>> {
        let mut hops = Vec::new();
        for s in &self.sources {
            hops.extend(build_hop_plan(&s.profile, self.duration_s, s.start_offset_s)?);
        }
        hops.sort_by(|a, b| {
            a.start_time_s
                .total_cmp(&b.start_time_s)
                .then(a.source_id.cmp(&b.source_id))
        });
        Ok(hops)
    }

    pub fn synthesize(&self) -> Result<Synthesis> {
        self.validate()?;
        let n = self.num_samples();
        let mut acc = vec![Complex64::new(0.0, 0.0); n];
        for s in &self.sources {
            let plan = build_hop_plan(&s.profile, self.duration_s, s.start_offset_s)?;
            render_into(&mut acc, &plan, &s.profile, self.sample_rate_hz)?;
        }
        let clean = to_recording(&acc, self.sample_rate_hz)?
            .relabel(self.center_frequency_hz, self.capture_id.clone())?;
        drop(acc);
        let recording = super::apply_channel(&clean, &self.channel)?;
        Ok(Synthesis {
            recording,
            truth: GroundTruth {
                capture_id: self.capture_id.clone(),
                sample_rate_hz: self.sample_rate_hz,
                center_frequency_hz: self.center_frequency_hz,
                duration_s: self.duration_s,
                hops: self.hop_plan()?,
            },
        })
    }
}
