//! Short-time Fourier transform power spectrogram in dB.
//!
//! Rows are frequency bins in ascending absolute frequency, columns are frames.
//! Frame `i` covers samples `i * hop .. i * hop + window_size`.

use std::f64::consts::TAU;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::grid::Grid;
use crate::iq_io::{write_json, IqRecording};
use crate::par::{self, Parallelism};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Rectangular,
    #[default]
    Hann,
    Hamming,
}

impl WindowKind {
    /// Periodic window coefficients of length `m`.
    pub fn coefficients(self, m: usize) -> Vec<f64> {
        (0..m)
            .map(|n| {
                let x = TAU * n as f64 / m as f64;
                match self {
                    WindowKind::Rectangular => 1.0,
                    WindowKind::Hann => 0.5 - 0.5 * x.cos(),
                    WindowKind::Hamming => 0.54 - 0.46 * x.cos(),
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub window_size: usize,
    pub overlap: usize,
    pub window_kind: WindowKind,
    /// Zero-padded transform length; 0 means `window_size`.
    pub fft_size: usize,
    /// Added to every dB value; 0 gives dBFS.
    pub calibration_db: f64,
    /// Linear power clamp applied before the logarithm.
    pub power_floor: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig::with_window(2048)
    }
}

impl StftConfig {
    /// Hann window with half overlap.
    pub fn with_window(window_size: usize) -> Self {
        StftConfig {
            window_size,
            overlap: window_size / 2,
            window_kind: WindowKind::Hann,
            fft_size: 0,
            calibration_db: 0.0,
            power_floor: 1e-12,
        }
    }

    pub fn hop(&self) -> usize {
        self.window_size - self.overlap
    }

    pub fn transform_len(&self) -> usize {
        if self.fft_size == 0 {
            self.window_size
        } else {
            self.fft_size
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 {
            return config_err("window size must be at least 1");
        }
        if self.overlap >= self.window_size {
            return config_err(format!(
                "overlap {} must be smaller than the window size {}",
                self.overlap, self.window_size
            ));
        }
        if self.transform_len() < self.window_size {
            return config_err("FFT size must be at least the window size");
        }
        if !(self.power_floor > 0.0 && self.power_floor.is_finite()) {
            return config_err("power floor must be positive");
        }
        if !self.calibration_db.is_finite() {
            return config_err("calibration offset must be finite");
        }
        Ok(())
    }
}

/// Physical coordinates of a spectrogram or mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axes {
    /// Absolute frequency of each row.
    pub bin_freqs_hz: Vec<f64>,
    /// Center time of each column.
    pub frame_times_s: Vec<f64>,
    pub frame_step_s: f64,
    pub bin_width_hz: f64,
    pub sample_rate_hz: f64,
    pub center_frequency_hz: f64,
}

impl Axes {
    pub fn new(
        rows: usize,
        frames: usize,
        cfg: &StftConfig,
        sample_rate_hz: f64,
        center_frequency_hz: f64,
    ) -> Self {
        let bin_width_hz = sample_rate_hz / rows as f64;
        let half = (rows / 2) as f64;
        let hop = cfg.hop() as f64;
        let centre = (cfg.window_size as f64 - 1.0) / 2.0;
        Axes {
            bin_freqs_hz: (0..rows)
                .map(|r| center_frequency_hz + (r as f64 - half) * bin_width_hz)
                .collect(),
            frame_times_s: (0..frames)
                .map(|i| (i as f64 * hop + centre) / sample_rate_hz)
                .collect(),
            frame_step_s: hop / sample_rate_hz,
            bin_width_hz,
            sample_rate_hz,
            center_frequency_hz,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    power_db: Grid<f64>,
    axes: Axes,
    config: StftConfig,
}

impl Spectrogram {
    pub fn from_parts(power_db: Grid<f64>, axes: Axes, config: StftConfig) -> Result<Self> {
        if power_db.rows() != axes.bin_freqs_hz.len() || power_db.cols() != axes.frame_times_s.len() {
            return Err(Error::Invariant("spectrogram shape disagrees with its axes".into()));
        }
        if power_db.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("spectrogram holds a non-finite entry".into()));
        }
        Ok(Spectrogram {
            power_db,
            axes,
            config,
        })
    }

    pub fn power_db(&self) -> &Grid<f64> {
        &self.power_db
    }

    pub fn axes(&self) -> &Axes {
        &self.axes
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn num_bins(&self) -> usize {
        self.power_db.rows()
    }

    pub fn num_frames(&self) -> usize {
        self.power_db.cols()
    }
}

/// Frame count `floor((n - overlap) / hop)`.
pub fn num_frames(signal_len: usize, cfg: &StftConfig) -> Result<usize> {
    cfg.validate()?;
    if signal_len < cfg.window_size {
        return config_err(format!(
            "signal of {signal_len} samples is shorter than the {}-sample window",
            cfg.window_size
        ));
    }
    Ok((signal_len - cfg.overlap) / cfg.hop())
}

/// Linear power of one frame per transform bin, divided by the window energy,
/// in natural FFT order.
fn frame_power(
    samples: &[num_complex::Complex32],
    window: &[f64],
    buf: &mut [Complex64],
    scratch: &mut [Complex64],
    fft: &dyn rustfft::Fft<f64>,
    out: &mut [f64],
    window_energy: f64,
) {
    for (slot, (s, w)) in buf.iter_mut().zip(samples.iter().zip(window)) {
        *slot = Complex64::new(f64::from(s.re) * w, f64::from(s.im) * w);
    }
    for slot in buf[window.len()..].iter_mut() {
        *slot = Complex64::new(0.0, 0.0);
    }
    fft.process_with_scratch(buf, scratch);
    for (o, x) in out.iter_mut().zip(buf.iter()) {
        *o = x.norm_sqr() / window_energy;
    }
}

pub fn compute(rec: &IqRecording, cfg: &StftConfig, par: Parallelism) -> Result<Spectrogram> {
    let frames = num_frames(rec.len(), cfg)?;
    let n_fft = cfg.transform_len();
    let window = cfg.window_kind.coefficients(cfg.window_size);
    let window_energy: f64 = window.iter().map(|w| w * w).sum();
    if window_energy <= 0.0 {
        return config_err("window has zero energy");
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let hop = cfg.hop();
    let samples = rec.samples();
    let half = n_fft / 2;
    let floor = cfg.power_floor;
    let cal = cfg.calibration_db;

    // Frame-major scratch, transposed to bin-major rows at the end.
    let mut by_frame = vec![0.0f64; frames * n_fft];
    par::chunks_mut_init(
        &mut by_frame,
        n_fft,
        par,
        || {
            (
                vec![Complex64::new(0.0, 0.0); n_fft],
                vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()],
                vec![0.0f64; n_fft],
            )
        },
        |(buf, scratch, natural), i, column| {
            let start = i * hop;
            frame_power(
                &samples[start..start + cfg.window_size],
                &window,
                buf,
                scratch,
                fft.as_ref(),
                natural,
                window_energy,
            );
            for (r, slot) in column.iter_mut().enumerate() {
                let k = (r + n_fft - half) % n_fft;
                *slot = 10.0 * natural[k].max(floor).log10() + cal;
            }
        },
    );
    let power_db = Grid::from_vec(frames, n_fft, by_frame)?.transposed();
    let axes = Axes::new(n_fft, frames, cfg, rec.sample_rate_hz(), rec.center_frequency_hz());
    Spectrogram::from_parts(power_db, axes, cfg.clone())
}

/// Window size picked for a run, with the reason.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowChoice {
    pub window_size: usize,
    pub rationale: String,
}

pub const PREFERRED_WINDOW: usize = 2048;

/// Prefers 2048; otherwise the candidate nearest to it in log2 distance, the smaller
/// one on ties. Candidates longer than the signal are skipped while any other fits.
pub fn auto_window(signal_len: usize, candidates: &[usize]) -> Result<WindowChoice> {
    let usable: Vec<usize> = candidates.iter().copied().filter(|&c| c > 0).collect();
    if usable.is_empty() {
        return config_err("no window candidates");
    }
    let fitting: Vec<usize> = usable.iter().copied().filter(|&c| c <= signal_len).collect();
    let pool = if fitting.is_empty() { &usable } else { &fitting };
    if pool.contains(&PREFERRED_WINDOW) {
        return Ok(WindowChoice {
            window_size: PREFERRED_WINDOW,
            rationale: "2048 is the empirically preferred window and is available".into(),
        });
    }
    let distance = |c: usize| ((c as f64).log2() - (PREFERRED_WINDOW as f64).log2()).abs();
    let best = pool
        .iter()
        .copied()
        .min_by(|&a, &b| distance(a).total_cmp(&distance(b)).then(a.cmp(&b)))
        .expect("pool is non-empty");
    Ok(WindowChoice {
        window_size: best,
        rationale: format!(
            "2048 unavailable; {best} is the nearest candidate in log2 distance ({:.3} octaves), ties go to the smaller window",
            distance(best)
        ),
    })
}

#[derive(Serialize)]
struct DumpHeader<'a> {
    rows: usize,
    cols: usize,
    dtype: &'static str,
    layout: &'static str,
    units: &'static str,
    calibration_db: f64,
    config: &'a StftConfig,
    axes: &'a Axes,
}

/// Writes the power grid as row-major little-endian float32 to `path` and a JSON
/// header with axes to `path` + `.json`.
pub fn write_dump(spec: &Spectrogram, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for v in spec.power_db.as_slice() {
        out.write_all(&(*v as f32).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    let header = DumpHeader {
        rows: spec.num_bins(),
        cols: spec.num_frames(),
        dtype: "f32_le",
        layout: "row-major, rows = ascending frequency, cols = frames",
        units: if spec.config.calibration_db == 0.0 { "dBFS" } else { "dB (calibrated)" },
        calibration_db: spec.config.calibration_db,
        config: &spec.config,
        axes: &spec.axes,
    };
    write_json(&sidecar(path), &header)
}

pub(crate) fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// 8-bit grayscale PGM of the top `dynamic_range_db` below the maximum, highest
/// frequency on the first line.
pub fn write_image(spec: &Spectrogram, path: &Path, dynamic_range_db: f64) -> Result<()> {
    let grid = &spec.power_db;
    let max = grid.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = max - dynamic_range_db.max(1e-9);
    let mut bytes = format!("P5\n{} {}\n255\n", grid.cols(), grid.rows()).into_bytes();
    for r in (0..grid.rows()).rev() {
        bytes.extend(grid.row(r).iter().map(|&v| {
            (((v - min) / (max - min)).clamp(0.0, 1.0) * 255.0).round() as u8
        }));
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
