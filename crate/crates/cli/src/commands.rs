use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use fhss_core::classification::{self, GroupingRule, PeriodEstimate};
use fhss_core::detection::{self, ThresholdReport};
use fhss_core::evaluation::{self, EvalConfig, PathLoss, SweepAxis, SweepConfig};
use fhss_core::extraction::{self, HopRecord};
use fhss_core::iq_io::{self, IqRecording};
use fhss_core::pipeline::{self, PipelineConfig};
use fhss_core::spectrogram::{self, StftConfig, WindowChoice};
use fhss_core::synth::{GroundTruth, Scenario};
use fhss_core::{Error, Parallelism};
use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{AxisArg, Cli, Command, DetectArgs, EvalArgs, RuleArg, SweepArgs, SynthArgs, WindowArg};

/// Candidates tried by `--window auto`.
const WINDOW_CANDIDATES: [usize; 4] = [512, 1024, 2048, 4096];
/// Dynamic range of the spectrogram image.
const IMAGE_RANGE_DB: f64 = 80.0;
const DEFAULT_SNR_DB: f64 = 10.0;

/// Contents of `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    pipeline: PipelineConfig,
    eval: EvalConfig,
    seed: Option<u64>,
    jobs: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunMeta {
    capture_id: String,
    sample_rate_hz: Option<f64>,
    window: Option<WindowChoice>,
    config: PipelineConfig,
    segments: Vec<SegmentSummary>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentSummary {
    offset_s: f64,
    threshold: Option<ThresholdReport>,
    raw_hop_count: usize,
    hop_count: usize,
    period_s: Option<f64>,
    peak_lags_s: Vec<f64>,
    source_count: usize,
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => load_config::<FileConfig>(p)?,
        None => FileConfig::default(),
    };
    match &cli.command {
        Command::Synth(a) => synth(cli, &file, a),
        Command::Detect(a) => detect(&file, a),
        Command::Eval(a) => eval(&file, a),
        Command::Sweep(a) => sweep(cli, file, a),
    }
}

/// Parse failures are configuration errors.
fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    let value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(value)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    Ok(BufWriter::new(f))
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::Invariant(format!("encoding JSON: {e}")))?;
    out.write_all(b"\n")
        .and_then(|_| out.flush())
        .map_err(|e| Error::Io {
            path: path.into(),
            source: e,
        })?;
    Ok(())
}

fn synth(cli: &Cli, file: &FileConfig, a: &SynthArgs) -> Result<()> {
    let mut scenario = match &a.scenario {
        Some(p) => load_config::<Scenario>(p)?,
        None => Scenario::futaba(DEFAULT_SNR_DB, 0),
    };
    if let Some(snr) = a.snr {
        scenario = scenario.with_snr(snr);
    }
    if let Some(seed) = cli.seed.or(file.seed) {
        scenario = scenario.reseeded(seed);
    }
    let out = scenario.synthesize().context("synthesizing scenario")?;
    iq_io::save_recording(&out.recording, &a.out, &a.meta)?;
    if let Some(path) = &a.truth {
        out.truth.write(path)?;
    }
    info!(
        "wrote {} samples, {} complete hops",
        out.recording.len(),
        out.truth.complete_hops().count()
    );
    Ok(())
}

fn pipeline_config(file: &FileConfig, a: &DetectArgs) -> PipelineConfig {
    let mut cfg = file.pipeline.clone();
    if let Some(WindowArg::Size(m)) = a.window {
        cfg.stft = StftConfig {
            window_size: m,
            overlap: m / 2,
            ..cfg.stft
        };
    }
    if let Some(o) = a.overlap {
        cfg.stft.overlap = o;
    }
    if let Some(f) = a.top_frac {
        cfg.detection.top_frac = f;
    }
    if let Some(k) = a.kernel {
        cfg.detection.kernel_rows = k.rows;
        cfg.detection.kernel_cols = k.cols;
    }
    if let Some(n) = a.min_dwell_frames {
        cfg.extraction.min_dwell_frames = n;
    }
    if let Some(n) = a.min_bins {
        cfg.extraction.min_bandwidth_bins = n;
    }
    if let Some(t) = a.tol_frames {
        cfg.classification.tol_frames = t;
    }
    if let Some(r) = a.rho {
        cfg.classification.search.rho = r;
    }
    if let Some(r) = a.rule {
        cfg.classification.rule = match r {
            RuleArg::Consistent => GroupingRule::Consistent,
            RuleArg::Transitive => GroupingRule::Transitive,
        };
    }
    if a.sequential {
        cfg.parallelism = Parallelism::Sequential;
    }
    cfg
}

fn summary(offset_s: f64, det: &pipeline::Detection) -> SegmentSummary {
    SegmentSummary {
        offset_s,
        threshold: det.threshold.clone(),
        raw_hop_count: det.raw_hop_count,
        hop_count: det.hops.len(),
        period_s: det.period.as_ref().map(|p| p.t1_s),
        peak_lags_s: det.period.as_ref().map(|p| p.peak_lags_s.clone()).unwrap_or_default(),
        source_count: det.assignment.as_ref().map_or(0, |s| s.sources.len()),
    }
}

fn write_acf(period: Option<&PeriodEstimate>, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    match period {
        Some(p) => classification::write_acf_csv(p, &mut out)?,
        None => {
            warn!("no period estimate; {} holds only the header", path.display());
            writeln!(out, "lag_ms,correlation").map_err(|e| Error::Io {
                path: path.into(),
                source: e,
            })?;
        }
    }
    out.flush().map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    Ok(())
}

fn detect(file: &FileConfig, a: &DetectArgs) -> Result<()> {
    let mut cfg = pipeline_config(file, a);
    let mut window = None;
    let mut meta = RunMeta {
        capture_id: String::new(),
        sample_rate_hz: None,
        window: None,
        config: cfg.clone(),
        segments: Vec::new(),
    };
    let mut hops: Vec<HopRecord> = Vec::new();

    if let Some(mask_path) = &a.from_mask {
        if a.window.is_some() {
            warn!("--window has no effect on a mask dump");
        }
        let (mask, threshold) = detection::read_mask_dump(mask_path)?;
        meta.capture_id = match &a.meta {
            Some(p) => iq_io::read_meta(p)?.capture_id,
            None => "unknown".into(),
        };
        let mut det = pipeline::run_from_mask(mask, &cfg)?;
        det.threshold = threshold;
        if let Some(path) = &a.dump_mask {
            detection::write_mask_dump(&det.mask, det.threshold.as_ref(), path)?;
        }
        if let Some(path) = &a.dump_acf {
            write_acf(det.period.as_ref(), path)?;
        }
        meta.segments.push(summary(0.0, &det));
        hops = det.hops;
    } else {
        let (input, meta_path) = match (&a.input, &a.meta) {
            (Some(i), Some(m)) => (i, m),
            _ => return Err(Error::Config("--input and --meta are required".into()).into()),
        };
        let rec = iq_io::load_recording(input, meta_path)?;
        meta.capture_id = rec.capture_id().to_string();
        meta.sample_rate_hz = Some(rec.sample_rate_hz());
        let pieces: Vec<IqRecording> = match a.segment {
            Some(len) => {
                if a.dump_mask.is_some() || a.dump_acf.is_some() || a.dump_spectrogram.is_some() || a.dump_image.is_some() {
                    return Err(Error::Config("stage dumps need a single unsegmented run".into()).into());
                }
                let pieces = iq_io::segment(&rec, len)?;
                if pieces.is_empty() {
                    return Err(Error::Config(format!("segment of {len} samples is longer than the capture")).into());
                }
                pieces
            }
            None => vec![rec],
        };
        if a.window == Some(WindowArg::Auto) {
            let choice = spectrogram::auto_window(pieces[0].len(), &WINDOW_CANDIDATES)?;
            info!("window {}: {}", choice.window_size, choice.rationale);
            cfg.stft = StftConfig {
                window_size: choice.window_size,
                overlap: choice.window_size / 2,
                ..cfg.stft
            };
            meta.config = cfg.clone();
            window = Some(choice);
        }
        let keep = a.dump_spectrogram.is_some() || a.dump_image.is_some();
        let mut next_label = 0;
        for (k, piece) in pieces.iter().enumerate() {
            let offset_s = (k * piece.len()) as f64 / piece.sample_rate_hz();
            let det = pipeline::run_with(piece, &cfg, keep)?;
            if let Some(spec) = &det.spectrogram {
                if let Some(path) = &a.dump_spectrogram {
                    spectrogram::write_dump(spec, path)?;
                }
                if let Some(path) = &a.dump_image {
                    spectrogram::write_image(spec, path, IMAGE_RANGE_DB)?;
                }
            }
            if let Some(path) = &a.dump_mask {
                detection::write_mask_dump(&det.mask, det.threshold.as_ref(), path)?;
            }
            if let Some(path) = &a.dump_acf {
                write_acf(det.period.as_ref(), path)?;
            }
            meta.segments.push(summary(offset_s, &det));
            let labels = det.assignment.as_ref().map_or(0, |s| s.sources.len());
            hops.extend(det.hops.into_iter().map(|mut h| {
                h.start_time_s += offset_s;
                h.stop_time_s += offset_s;
                h.source_id = h.source_id.map(|s| s + next_label);
                h
            }));
            next_label += labels;
        }
    }
    meta.window = window;

    let mut out = create(&a.out)?;
    extraction::write_hops_csv(&hops, &mut out)?;
    out.flush().map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    if let Some(path) = &a.run_meta {
        write_json_file(path, &meta)?;
    }
    info!("{} hops written to {}", hops.len(), a.out.display());
    Ok(())
}

fn eval(file: &FileConfig, a: &EvalArgs) -> Result<()> {
    let truth = GroundTruth::read(&a.truth)?;
    let input = File::open(&a.hops).map_err(|e| Error::Io {
        path: a.hops.clone(),
        source: e,
    })?;
    let hops = extraction::read_hops_csv(input, &a.hops)?;
    if let Some(path) = &a.run_meta {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let run: RunMeta = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if run.capture_id != truth.capture_id {
            return Err(Error::Format {
                path: path.clone(),
                message: format!(
                    "capture id `{}` does not match the ground truth's `{}`",
                    run.capture_id, truth.capture_id
                ),
            }
            .into());
        }
    }
    let report = evaluation::evaluate(&truth, &hops, &file.eval)?;
    info!(
        "{} of {} hops detected, {} false alarms, NMSE {:.3e}",
        report.n_detected, report.n_expected, report.n_false_alarms, report.nmse
    );
    match &a.report {
        Some(path) => write_json_file(path, &report)?,
        None => {
            let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Invariant(e.to_string()))?;
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    return Err(Error::Io {
                        path: "<stdout>".into(),
                        source: e,
                    }
                    .into())
                }
                _ => {}
            }
        }
    }
    Ok(())
}

fn sweep_config(cli: &Cli, file: &FileConfig, a: &SweepArgs) -> Result<SweepConfig> {
    let mut cfg = match (&a.sweep, a.axis, &a.values) {
        (Some(p), _, _) => load_config::<SweepConfig>(p)?,
        (None, Some(axis), Some(values)) => {
            let axis = match axis {
                AxisArg::Snr => SweepAxis::Snr {
                    values_db: values.clone(),
                },
                AxisArg::Window => SweepAxis::Window {
                    sizes: values
                        .iter()
                        .map(|&v| {
                            if v.fract() == 0.0 && v >= 1.0 {
                                Ok(v as usize)
                            } else {
                                Err(Error::Config(format!("window size {v} is not a whole number")))
                            }
                        })
                        .collect::<std::result::Result<_, _>>()?,
                },
                AxisArg::Distance => SweepAxis::Distance {
                    distances_m: values.clone(),
                    model: PathLoss {
                        ref_distance_m: a.ref_distance,
                        ref_snr_db: a.ref_snr,
                        exponent: a.path_loss_exponent,
                    },
                },
            };
            SweepConfig {
                axis,
                trials: a.trials,
                base_seed: 0,
                jobs: 0,
                eval: file.eval.clone(),
            }
        }
        _ => return Err(Error::Config("give --sweep or both --axis and --values".into()).into()),
    };
    if let Some(seed) = cli.seed.or(file.seed) {
        cfg.base_seed = seed;
    }
    if let Some(jobs) = cli.jobs.or(file.jobs) {
        cfg.jobs = jobs;
    }
    Ok(cfg)
}

fn sweep(cli: &Cli, file: FileConfig, a: &SweepArgs) -> Result<()> {
    let scenario = match &a.scenario {
        Some(p) => load_config::<Scenario>(p)?,
        None => Scenario::futaba(0.0, 0),
    };
    let cfg = sweep_config(cli, &file, a)?;
    let mut pipeline = file.pipeline;
    if a.sequential {
        pipeline.parallelism = Parallelism::Sequential;
    }
    let rows = evaluation::run_sweep(&scenario, &pipeline, &cfg)?;
    let mut out = create(&a.out)?;
    evaluation::write_sweep_csv(&rows, &mut out)?;
    out.flush().map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    if let Some(path) = &a.report {
        write_json_file(path, &rows)?;
    }
    for r in &rows {
        info!(
            "{} {}: NMSE {:.3e} +- {:.1e}, detect rate {:.3}",
            cfg.axis.name(),
            r.axis,
            r.mean_nmse,
            r.std_nmse,
            r.detect_rate
        );
    }
    Ok(())
}
