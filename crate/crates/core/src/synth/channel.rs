//! Received-signal impairments: multipath, carrier offset, interference bursts and AWGN.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{stream_rng, to_recording};
use crate::error::{config_err, Result};
use crate::iq_io::IqRecording;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultipathTap {
    pub delay_samples: usize,
    pub gain_re: f64,
    pub gain_im: f64,
}

/// Band-limited Gaussian noise switched on for `duty` of every `period_s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterferenceBurst {
    pub center_offset_hz: f64,
    pub bandwidth_hz: f64,
    pub power_dbfs: f64,
    pub duty: f64,
    #[serde(default = "default_burst_period")]
    pub period_s: f64,
}

fn default_burst_period() -> f64 {
    1e-3
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    /// Signal-to-noise ratio over the hop-active samples. `None` or +inf disables noise.
    pub snr_db: Option<f64>,
    /// Absolute per-component noise variance; takes precedence over `snr_db`.
    pub noise_variance: Option<f64>,
    pub cfo_hz: f64,
    /// Empty means an ideal channel.
    pub multipath_taps: Vec<MultipathTap>,
    pub interference: Vec<InterferenceBurst>,
    pub rng_seed: u64,
}

impl ChannelConfig {
    pub fn awgn(snr_db: f64, rng_seed: u64) -> Self {
        ChannelConfig {
            snr_db: Some(snr_db),
            rng_seed,
            ..Default::default()
        }
    }

    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        if let Some(snr) = self.snr_db {
            if snr.is_nan() || snr == f64::NEG_INFINITY {
                return config_err("SNR must be a number above -inf");
            }
        }
        if let Some(v) = self.noise_variance {
            if !(v >= 0.0 && v.is_finite()) {
                return config_err("noise variance must be finite and non-negative");
            }
        }
        if !self.cfo_hz.is_finite() {
            return config_err("carrier offset must be finite");
        }
        if self
            .multipath_taps
            .iter()
            .any(|t| !(t.gain_re.is_finite() && t.gain_im.is_finite()))
        {
            return config_err("multipath tap gains must be finite");
        }
        for b in &self.interference {
            if !(b.bandwidth_hz > 0.0 && b.bandwidth_hz <= sample_rate_hz) {
                return config_err("interference bandwidth must lie in (0, sample rate]");
            }
            if b.center_offset_hz.abs() >= sample_rate_hz / 2.0 {
                return config_err("interference center must lie inside the captured band");
            }
            if !(b.duty > 0.0 && b.duty <= 1.0) || !(b.period_s > 0.0) || !b.power_dbfs.is_finite() {
                return config_err("interference needs duty in (0, 1], a positive period and finite power");
            }
        }
        Ok(())
    }

    fn noise_sigma(&self, signal_power: f64) -> Result<Option<f64>> {
        if let Some(v) = self.noise_variance {
            return Ok(Some(v.sqrt()));
        }
        match self.snr_db {
            Some(snr) if snr.is_finite() => {
                if signal_power <= 0.0 {
                    return config_err(
                        "an SNR target needs a non-silent signal; set noise_variance for noise-only captures",
                    );
                }
                Ok(Some((signal_power / (2.0 * 10f64.powf(snr / 10.0))).sqrt()))
            }
            _ => Ok(None),
        }
    }
}

const NOISE_STREAM: u64 = 0;
const INTERFERENCE_STREAM: u64 = 1 << 40;

/// Applies the channel to a clean rendering.
///
/// Hop-active samples are the non-zero samples of `clean`; the SNR target is met over
/// exactly those samples, after multipath and frequency offset.
pub fn apply_channel(clean: &IqRecording, cfg: &ChannelConfig) -> Result<IqRecording> {
    let fs = clean.sample_rate_hz();
    cfg.validate(fs)?;
    let x: Vec<Complex64> = clean
        .samples()
        .iter()
        .map(|s| Complex64::new(f64::from(s.re), f64::from(s.im)))
        .collect();
    let active: Vec<bool> = x.iter().map(|s| s.re != 0.0 || s.im != 0.0).collect();

    let mut y = if cfg.multipath_taps.is_empty() {
        x
    } else {
        convolve_taps(&x, &cfg.multipath_taps)
    };
    if cfg.cfo_hz != 0.0 {
        let step = cfg.cfo_hz / fs;
        for (n, s) in y.iter_mut().enumerate() {
            *s *= Complex64::from_polar(1.0, TAU * (step * n as f64).fract());
        }
    }

    let (power_sum, active_count) = y
        .iter()
        .zip(&active)
        .filter(|(_, &a)| a)
        .fold((0.0, 0usize), |(p, c), (s, _)| (p + s.norm_sqr(), c + 1));
    let signal_power = if active_count > 0 {
        power_sum / active_count as f64
    } else {
        0.0
    };

    for (i, burst) in cfg.interference.iter().enumerate() {
        add_burst(&mut y, burst, fs, cfg.rng_seed, INTERFERENCE_STREAM + i as u64);
    }

    if let Some(sigma) = cfg.noise_sigma(signal_power)? {
        let mut rng = stream_rng(cfg.rng_seed, NOISE_STREAM);
        for s in y.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *s += Complex64::new(sigma * re, sigma * im);
        }
    }

    to_recording(&y, fs)?.relabel(clean.center_frequency_hz(), clean.capture_id())
}

fn convolve_taps(x: &[Complex64], taps: &[MultipathTap]) -> Vec<Complex64> {
    let mut y = vec![Complex64::new(0.0, 0.0); x.len()];
    for tap in taps {
        let g = Complex64::new(tap.gain_re, tap.gain_im);
        if tap.delay_samples >= x.len() {
            continue;
        }
        for (out, s) in y[tap.delay_samples..].iter_mut().zip(x) {
            *out += g * s;
        }
    }
    y
}

fn add_burst(y: &mut [Complex64], burst: &InterferenceBurst, fs: f64, seed: u64, stream: u64) {
    let n = y.len();
    let mut rng = stream_rng(seed, stream);
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let lo = burst.center_offset_hz - burst.bandwidth_hz / 2.0;
    let hi = burst.center_offset_hz + burst.bandwidth_hz / 2.0;
    for (k, v) in buf.iter_mut().enumerate() {
        let f = if k < n.div_ceil(2) { k as f64 } else { k as f64 - n as f64 } * fs / n as f64;
        if f < lo || f > hi {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let power = buf.iter().map(|s| s.norm_sqr()).sum::<f64>() / n as f64;
    if power <= 0.0 {
        return;
    }
    let gain = (10f64.powf(burst.power_dbfs / 10.0) / power).sqrt();
    let on_s = burst.duty * burst.period_s;
    for (i, (out, s)) in y.iter_mut().zip(buf).enumerate() {
        let t = i as f64 / fs;
        if t.rem_euclid(burst.period_s) < on_s {
            *out += s * gain;
        }
    }
}
