//! End-to-end detection: spectrogram, threshold, closing, extraction, grouping.

use serde::{Deserialize, Serialize};

use crate::classification::{self, GroupingRule, PeriodEstimate, PeriodSearch, SeriesKind, SourceAssignment};
use crate::detection::{self, BinaryMask, ThresholdReport};
use crate::error::{config_err, Result};
use crate::extraction::{self, HopFilter, HopRecord};
use crate::iq_io::IqRecording;
use crate::par::Parallelism;
use crate::spectrogram::{self, Spectrogram, StftConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    pub top_frac: f64,
    /// Closing kernel height in frequency bins.
    pub kernel_rows: usize,
    /// Closing kernel width in frames.
    pub kernel_cols: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            top_frac: 0.2,
            kernel_rows: 3,
            kernel_cols: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassificationConfig {
    pub series: SeriesKind,
    /// Half-width of the triangular smoothing applied to the series.
    pub smoothing_frames: usize,
    /// Congruence tolerance in frames.
    pub tol_frames: f64,
    pub search: PeriodSearch,
    pub rule: GroupingRule,
}

impl Default for ClassificationConfig {
    fn default() -> Self {
        ClassificationConfig {
            series: SeriesKind::Onset,
            smoothing_frames: 2,
            tol_frames: 2.0,
            search: PeriodSearch::default(),
            rule: GroupingRule::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub stft: StftConfig,
    pub detection: DetectionConfig,
    pub extraction: HopFilter,
    pub classification: ClassificationConfig,
    pub parallelism: Parallelism,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        let d = &self.detection;
        if !(d.top_frac > 0.0 && d.top_frac <= 1.0) {
            return config_err("top fraction must lie in (0, 1]");
        }
        for k in [d.kernel_rows, d.kernel_cols] {
            if k == 0 || k % 2 == 0 {
                return config_err(format!("kernel sizes must be odd and at least 1, got {k}"));
            }
        }
        let c = &self.classification;
        if !(c.tol_frames >= 1.0) {
            return config_err("congruence tolerance must be at least one frame");
        }
        if !(c.search.min_lag_s > 0.0 && c.search.min_lag_s < c.search.max_lag_s) {
            return config_err("lag window must satisfy 0 < min < max");
        }
        if !(0.0..=1.0).contains(&c.search.rho) {
            return config_err("peak admission ratio must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Everything a run produces. The spectrogram is kept only on request.
#[derive(Clone, Debug)]
pub struct Detection {
    pub spectrogram: Option<Spectrogram>,
    pub threshold: Option<ThresholdReport>,
    pub mask: BinaryMask,
    /// Hops that passed the size filter, labelled when grouping succeeded.
    pub hops: Vec<HopRecord>,
    /// Rectangles found before the size filter.
    pub raw_hop_count: usize,
    pub period: Option<PeriodEstimate>,
    pub assignment: Option<SourceAssignment>,
}

pub fn run(rec: &IqRecording, cfg: &PipelineConfig) -> Result<Detection> {
    run_with(rec, cfg, false)
}

pub fn run_with(rec: &IqRecording, cfg: &PipelineConfig, keep_spectrogram: bool) -> Result<Detection> {
    cfg.validate()?;
    let spec = spectrogram::compute(rec, &cfg.stft, cfg.parallelism)?;
    let threshold = detection::estimate_threshold(&spec, cfg.detection.top_frac)?;
    let raw = detection::binarize(&spec, threshold.mu);
    let spectrogram = keep_spectrogram.then_some(spec);
    let mask = detection::morph_close(
        &raw,
        cfg.detection.kernel_rows,
        cfg.detection.kernel_cols,
        cfg.parallelism,
    )?;
    drop(raw);
    let mut out = run_from_mask(mask, cfg)?;
    out.spectrogram = spectrogram;
    out.threshold = Some(threshold);
    Ok(out)
}

/// Extraction and grouping on an already repaired mask.
pub fn run_from_mask(mask: BinaryMask, cfg: &PipelineConfig) -> Result<Detection> {
    cfg.validate()?;
    let raw_hops = extraction::extract_hops(&mask);
    let raw_hop_count = raw_hops.len();
    let mut hops = cfg.extraction.apply(raw_hops);
    let (period, assignment) = classify(&mask, &mut hops, &cfg.classification)?;
    Ok(Detection {
        spectrogram: None,
        threshold: None,
        mask,
        hops,
        raw_hop_count,
        period,
        assignment,
    })
}

/// Period estimate from the mask and source labels for `hops`. The lag window is
/// clipped to what the capture supports; with fewer than two hops or no positive
/// correlation at the period, hops stay unlabelled.
fn classify(
    mask: &BinaryMask,
    hops: &mut [HopRecord],
    cfg: &ClassificationConfig,
) -> Result<(Option<PeriodEstimate>, Option<SourceAssignment>)> {
    let step = mask.axes().frame_step_s;
    let series = classification::smooth(&classification::series(mask, cfg.series), cfg.smoothing_frames);
    let support_s = ((series.len() / 2).saturating_sub(2)) as f64 * step;
    let search = PeriodSearch {
        max_lag_s: cfg.search.max_lag_s.min(support_s),
        ..cfg.search.clone()
    };
    if search.max_lag_s <= search.min_lag_s {
        log::info!("capture too short for the lag window, skipping period estimate");
        return Ok((None, None));
    }
    let period = classification::estimate_period(&series, step, &search)?;
    if hops.len() < 2 || period.acf[period.t1_frames()] <= 0.0 {
        return Ok((Some(period), None));
    }
    let assignment = classification::group_hops(hops, &period, cfg.tol_frames * step, cfg.rule)?;
    for (h, &label) in hops.iter_mut().zip(&assignment.labels) {
        h.source_id = Some(label);
    }
    Ok((Some(period), Some(assignment)))
}
