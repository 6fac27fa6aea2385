//! Scoring against ground truth and parameter sweeps.
//!
//! The headline metric is the normalized mean squared error of per-hop dwell times,
//! with every missed hop contributing an estimate of zero (a term of exactly 1).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::extraction::{HopRecord, HopRow};
use crate::pipeline::{self, PipelineConfig};
use crate::spectrogram::StftConfig;
use crate::synth::{GroundTruth, HopPlanEntry, Scenario};

/// Read access to the fields scoring needs, shared by records and CSV rows.
pub trait HopEstimate {
    fn start_time_s(&self) -> f64;
    fn dwell_time_s(&self) -> f64;
    fn center_frequency_hz(&self) -> f64;
    fn bandwidth_hz(&self) -> f64;
}

impl HopEstimate for HopRecord {
    fn start_time_s(&self) -> f64 {
        self.start_time_s
    }
    fn dwell_time_s(&self) -> f64 {
        self.dwell_time_s
    }
    fn center_frequency_hz(&self) -> f64 {
        self.center_frequency_hz
    }
    fn bandwidth_hz(&self) -> f64 {
        self.bandwidth_hz
    }
}

impl HopEstimate for HopRow {
    fn start_time_s(&self) -> f64 {
        self.start_time_s
    }
    fn dwell_time_s(&self) -> f64 {
        self.dwell_time_s
    }
    fn center_frequency_hz(&self) -> f64 {
        self.center_frequency_hz
    }
    fn bandwidth_hz(&self) -> f64 {
        self.bandwidth_hz
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Start-time gate as a fraction of the true dwell.
    pub gate_dwell_frac: f64,
    /// Allowed carrier distance beyond half the estimated bandwidth.
    pub freq_slack_hz: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            gate_dwell_frac: 0.5,
            freq_slack_hz: 100e3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// (truth index, estimate index)
    pub pairs: Vec<(usize, usize)>,
    pub missed: Vec<usize>,
    pub false_alarms: Vec<usize>,
}

/// Greedy nearest-start matching. A pair is admissible when the start times differ
/// by at most `gate_dwell_frac` of the true dwell and the true carrier lies within
/// half the estimated bandwidth plus `freq_slack_hz` of the estimate's center.
pub fn match_hops<E: HopEstimate>(
    truth: &[HopPlanEntry],
    center_frequency_hz: f64,
    est: &[E],
    cfg: &EvalConfig,
) -> Result<Matching> {
    if !(cfg.gate_dwell_frac > 0.0) || !(cfg.freq_slack_hz >= 0.0) {
        return config_err("matching gate must be positive");
    }
    let mut candidates = Vec::new();
    for (ti, t) in truth.iter().enumerate() {
        let gate = cfg.gate_dwell_frac * t.dwell_time_s;
        let carrier = center_frequency_hz + t.carrier_offset_hz;
        for (ei, e) in est.iter().enumerate() {
            let dt = (e.start_time_s() - t.start_time_s).abs();
            let df = (e.center_frequency_hz() - carrier).abs();
            if dt <= gate && df <= e.bandwidth_hz() / 2.0 + cfg.freq_slack_hz {
                candidates.push((dt, ti, ei));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut truth_used = vec![false; truth.len()];
    let mut est_used = vec![false; est.len()];
    let mut pairs = Vec::new();
    for (_, ti, ei) in candidates {
        if !truth_used[ti] && !est_used[ei] {
            truth_used[ti] = true;
            est_used[ei] = true;
            pairs.push((ti, ei));
        }
    }
    pairs.sort_unstable();
    Ok(Matching {
        pairs,
        missed: (0..truth.len()).filter(|&i| !truth_used[i]).collect(),
        false_alarms: (0..est.len()).filter(|&i| !est_used[i]).collect(),
    })
}

/// Mean of `((est - truth) / truth)^2`. Missed hops are passed as an estimate of 0.
pub fn nmse(truth: &[f64], est: &[f64]) -> Result<f64> {
    if truth.is_empty() {
        return config_err("NMSE needs at least one true value");
    }
    if truth.len() != est.len() {
        return Err(Error::Invariant(format!(
            "NMSE got {} true values and {} estimates",
            truth.len(),
            est.len()
        )));
    }
    if let Some(i) = truth.iter().position(|&t| t == 0.0 || !t.is_finite()) {
        return config_err(format!("true value {i} is zero or non-finite"));
    }
    let total: f64 = truth
        .iter()
        .zip(est)
        .map(|(t, e)| ((e - t) / t).powi(2))
        .sum();
    Ok(total / truth.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopComparison {
    pub true_start_s: f64,
    pub true_dwell_s: f64,
    pub true_center_hz: f64,
    pub est_start_s: Option<f64>,
    pub est_dwell_s: Option<f64>,
    pub est_center_hz: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub capture_id: String,
    /// Complete hops in the truth (partial hops at the capture edge are not scored).
    pub n_expected: usize,
    pub n_detected: usize,
    pub n_false_alarms: usize,
    /// Dwell-time NMSE with zero fill.
    pub nmse: f64,
    /// Start-time squared error normalized by the true dwell, with misses counted as 1.
    pub start_nmse: f64,
    pub hops: Vec<HopComparison>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub axis: Option<AxisPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisPoint {
    pub name: String,
    pub value: f64,
}

pub fn evaluate<E: HopEstimate>(truth: &GroundTruth, est: &[E], cfg: &EvalConfig) -> Result<EvalReport> {
    let matching = match_hops(&truth.hops, truth.center_frequency_hz, est, cfg)?;
    let mut by_truth = vec![None; truth.hops.len()];
    for &(ti, ei) in &matching.pairs {
        by_truth[ti] = Some(ei);
    }
    let mut true_dwell = Vec::new();
    let mut est_dwell = Vec::new();
    let mut start_terms = Vec::new();
    let mut hops = Vec::new();
    let mut n_detected = 0;
    // Estimates matched to partial edge hops are neither scored nor false alarms.
    for (ti, t) in truth.hops.iter().enumerate() {
        if t.truncated {
            continue;
        }
        let e = by_truth[ti].map(|ei| &est[ei]);
        n_detected += usize::from(e.is_some());
        true_dwell.push(t.dwell_time_s);
        est_dwell.push(e.map_or(0.0, |e| e.dwell_time_s()));
        start_terms.push(e.map_or(1.0, |e| ((e.start_time_s() - t.start_time_s) / t.dwell_time_s).powi(2)));
        hops.push(HopComparison {
            true_start_s: t.start_time_s,
            true_dwell_s: t.dwell_time_s,
            true_center_hz: truth.center_frequency_hz + t.carrier_offset_hz,
            est_start_s: e.map(|e| e.start_time_s()),
            est_dwell_s: e.map(|e| e.dwell_time_s()),
            est_center_hz: e.map(|e| e.center_frequency_hz()),
        });
    }
    if true_dwell.is_empty() {
        return config_err("ground truth holds no complete hop to score");
    }
    Ok(EvalReport {
        capture_id: truth.capture_id.clone(),
        n_expected: true_dwell.len(),
        n_detected,
        n_false_alarms: matching.false_alarms.len(),
        nmse: nmse(&true_dwell, &est_dwell)?,
        start_nmse: start_terms.iter().sum::<f64>() / start_terms.len() as f64,
        hops,
        axis: None,
    })
}

/// Log-distance path loss: `snr = ref_snr_db - 10 * exponent * log10(d / ref_distance_m)`.
/// A synthetic stand-in for range, not a propagation model of any measured site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathLoss {
    pub ref_distance_m: f64,
    pub ref_snr_db: f64,
    pub exponent: f64,
}

impl PathLoss {
    pub fn snr_db(&self, distance_m: f64) -> f64 {
        self.ref_snr_db - 10.0 * self.exponent * (distance_m / self.ref_distance_m).log10()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "snake_case")]
pub enum SweepAxis {
    Snr { values_db: Vec<f64> },
    Window { sizes: Vec<usize> },
    Distance { distances_m: Vec<f64>, model: PathLoss },
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Snr { .. } => "snr_db",
            SweepAxis::Window { .. } => "window",
            SweepAxis::Distance { .. } => "distance_m",
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            SweepAxis::Snr { values_db } => values_db.clone(),
            SweepAxis::Window { sizes } => sizes.iter().map(|&s| s as f64).collect(),
            SweepAxis::Distance { distances_m, .. } => distances_m.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            SweepAxis::Snr { values_db } => !values_db.is_empty() && values_db.iter().all(|v| v.is_finite()),
            SweepAxis::Window { sizes } => !sizes.is_empty() && sizes.iter().all(|&s| s >= 2),
            SweepAxis::Distance { distances_m, model } => {
                !distances_m.is_empty()
                    && distances_m.iter().all(|&d| d > 0.0 && d.is_finite())
                    && model.ref_distance_m > 0.0
                    && model.exponent.is_finite()
                    && model.ref_snr_db.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            config_err(format!("invalid {} sweep axis", self.name()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: f64,
    pub mean_nmse: f64,
    /// Sample standard deviation over trials (0 for a single trial).
    pub std_nmse: f64,
    pub detect_rate: f64,
    /// Mean false alarms per trial.
    pub false_alarms: f64,
    pub trials: Vec<EvalReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub trials: usize,
    /// Trial `t` uses seed `base_seed + t` at every axis point.
    #[serde(default)]
    pub base_seed: u64,
    /// Worker threads for trials; 0 uses the global pool.
    #[serde(default)]
    pub jobs: usize,
    #[serde(default)]
    pub eval: EvalConfig,
}

/// Scenario and pipeline configuration for one axis point.
fn point_setup(scenario: &Scenario, pipeline: &PipelineConfig, axis: &SweepAxis, value: f64) -> (Scenario, PipelineConfig) {
    let mut s = scenario.clone();
    let mut p = pipeline.clone();
    match axis {
        SweepAxis::Snr { .. } => s.channel.snr_db = Some(value),
        SweepAxis::Distance { model, .. } => s.channel.snr_db = Some(model.snr_db(value)),
        SweepAxis::Window { .. } => {
            let m = value as usize;
            p.stft = StftConfig {
                window_size: m,
                overlap: m / 2,
                fft_size: 0,
                ..pipeline.stft.clone()
            };
        }
    }
    (s, p)
}

fn one_trial(scenario: &Scenario, pipeline: &PipelineConfig, eval: &EvalConfig, seed: u64) -> Result<EvalReport> {
    let synth = scenario.clone().reseeded(seed).synthesize()?;
    let det = pipeline::run(&synth.recording, pipeline)?;
    evaluate(&synth.truth, &det.hops, eval)
}

/// Runs every axis point for `trials` seeds. Seeds are shared across axis points so
/// points differ only in the swept parameter.
pub fn run_sweep(scenario: &Scenario, pipeline: &PipelineConfig, sweep: &SweepConfig) -> Result<Vec<SweepRow>> {
    sweep.axis.validate()?;
    if sweep.trials == 0 {
        return config_err("a sweep needs at least one trial");
    }
    let values = sweep.axis.values();
    let jobs: Vec<(usize, usize)> = (0..values.len())
        .flat_map(|p| (0..sweep.trials).map(move |t| (p, t)))
        .collect();
    let work = |&(p, t): &(usize, usize)| -> Result<EvalReport> {
        let (s, pc) = point_setup(scenario, pipeline, &sweep.axis, values[p]);
        let mut r = one_trial(&s, &pc, &sweep.eval, sweep.base_seed.wrapping_add(t as u64))?;
        r.axis = Some(AxisPoint {
            name: sweep.axis.name().into(),
            value: values[p],
        });
        Ok(r)
    };
    let reports = run_jobs(&jobs, sweep.jobs, pipeline.parallelism, work)?;
    let mut rows = Vec::with_capacity(values.len());
    for (p, &value) in values.iter().enumerate() {
        let trials: Vec<EvalReport> = reports[p * sweep.trials..(p + 1) * sweep.trials].to_vec();
        rows.push(summarize(value, trials));
    }
    Ok(rows)
}

fn run_jobs<J, T, F>(jobs: &[J], threads: usize, par: crate::Parallelism, work: F) -> Result<Vec<T>>
where
    J: Sync,
    T: Send,
    F: Fn(&J) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if par.is_parallel() {
        use rayon::prelude::*;
        let go = || jobs.par_iter().map(&work).collect::<Result<Vec<T>>>();
        if threads == 0 {
            return go();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Invariant(format!("building worker pool: {e}")))?;
        return pool.install(go);
    }
    let _ = (threads, par);
    jobs.iter().map(work).collect()
}

pub fn summarize(axis: f64, trials: Vec<EvalReport>) -> SweepRow {
    let n = trials.len() as f64;
    let mean = trials.iter().map(|r| r.nmse).sum::<f64>() / n;
    let var = if trials.len() > 1 {
        trials.iter().map(|r| (r.nmse - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    SweepRow {
        axis,
        mean_nmse: mean,
        std_nmse: var.sqrt(),
        detect_rate: trials
            .iter()
            .map(|r| r.n_detected as f64 / r.n_expected as f64)
            .sum::<f64>()
            / n,
        false_alarms: trials.iter().map(|r| r.n_false_alarms as f64).sum::<f64>() / n,
        trials,
    }
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let fail = |e: csv::Error| Error::Invariant(format!("writing sweep CSV: {e}"));
    w.write_record(["axis", "mean_nmse", "std_nmse", "detect_rate", "false_alarms"])
        .map_err(fail)?;
    for r in rows {
        w.write_record([
            format!("{}", r.axis),
            format!("{:.9e}", r.mean_nmse),
            format!("{:.9e}", r.std_nmse),
            format!("{:.6}", r.detect_rate),
            format!("{:.6}", r.false_alarms),
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(|e| Error::Invariant(format!("writing sweep CSV: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn truth_hop(start: f64, offset: f64) -> HopPlanEntry {
        HopPlanEntry {
            start_time_s: start,
            dwell_time_s: 1.44e-3,
            carrier_offset_hz: offset,
            phase_rad: 0.0,
            source_id: 0,
            hop_index: 0,
            truncated: false,
        }
    }

    fn est_from(t: &HopPlanEntry, center: f64) -> HopRow {
        HopRow {
            start_time_s: t.start_time_s,
            stop_time_s: t.stop_time_s(),
            dwell_time_s: t.dwell_time_s,
            center_frequency_hz: center + t.carrier_offset_hz,
            bandwidth_hz: 80e3,
            source_id: None,
        }
    }

    fn truth22() -> GroundTruth {
        GroundTruth {
            capture_id: "c".into(),
            sample_rate_hz: 80e6,
            center_frequency_hz: 2.44e9,
            duration_s: 50e-3,
            hops: (0..22).map(|i| truth_hop(0.7e-3 + i as f64 * 2.2e-3, (i as f64 - 10.0) * 2.5e6)).collect(),
        }
    }

    #[test]
    fn identical_lists_match_perfectly() {
        let t = truth22();
        let est: Vec<HopRow> = t.hops.iter().map(|h| est_from(h, 2.44e9)).collect();
        let m = match_hops(&t.hops, 2.44e9, &est, &EvalConfig::default()).unwrap();
        assert_eq!(m.pairs.len(), 22);
        assert!(m.missed.is_empty() && m.false_alarms.is_empty());
        let r = evaluate(&t, &est, &EvalConfig::default()).unwrap();
        assert_eq!(r.nmse, 0.0);
        assert_eq!(r.start_nmse, 0.0);
    }

    #[test]
    fn one_dropped_is_one_missed() {
        let t = truth22();
        let mut est: Vec<HopRow> = t.hops.iter().map(|h| est_from(h, 2.44e9)).collect();
        est.remove(7);
        let m = match_hops(&t.hops, 2.44e9, &est, &EvalConfig::default()).unwrap();
        assert_eq!(m.pairs.len(), 21);
        assert_eq!(m.missed, vec![7]);
        let r = evaluate(&t, &est, &EvalConfig::default()).unwrap();
        assert!((r.nmse - 1.0 / 22.0).abs() < 1e-15);
        assert!((r.nmse - 0.04545).abs() < 1e-5);
    }

    #[test]
    fn gate_boundary() {
        let t = vec![truth_hop(1e-3, 0.0)];
        let gate = 0.5 * 1.44e-3;
        let mut inside = est_from(&t[0], 0.0);
        inside.start_time_s += gate * 0.999;
        let mut outside = est_from(&t[0], 0.0);
        outside.start_time_s += gate * 1.001;
        let cfg = EvalConfig::default();
        assert_eq!(match_hops(&t, 0.0, &[inside], &cfg).unwrap().pairs.len(), 1);
        let m = match_hops(&t, 0.0, &[outside], &cfg).unwrap();
        assert_eq!((m.missed.len(), m.false_alarms.len()), (1, 1));
    }

    #[test]
    fn wrong_frequency_is_not_a_match() {
        let t = vec![truth_hop(1e-3, 0.0)];
        let mut e = est_from(&t[0], 0.0);
        e.center_frequency_hz += 2.5e6;
        assert!(match_hops(&t, 0.0, &[e], &EvalConfig::default()).unwrap().pairs.is_empty());
    }

    #[test]
    fn nearest_start_wins() {
        let t = vec![truth_hop(1e-3, 0.0)];
        let mut far = est_from(&t[0], 0.0);
        far.start_time_s += 0.3e-3;
        let mut near = est_from(&t[0], 0.0);
        near.start_time_s -= 0.1e-3;
        let m = match_hops(&t, 0.0, &[far, near], &EvalConfig::default()).unwrap();
        assert_eq!(m.pairs, vec![(0, 1)]);
        assert_eq!(m.false_alarms, vec![0]);
    }

    #[test]
    fn nmse_examples() {
        assert_eq!(nmse(&[1.44e-3; 5], &[1.44e-3; 5]).unwrap(), 0.0);
        let mut est = vec![1.44e-3; 22];
        est[3] = 0.0;
        assert!((nmse(&[1.44e-3; 22], &est).unwrap() - 0.045454545454545456).abs() < 1e-15);
        let off = nmse(&[2.0, 4.0], &[2.02, 4.04]).unwrap();
        assert!((off - 1e-4).abs() < 1e-15);
        assert!(nmse(&[0.0], &[1.0]).is_err());
        assert!(nmse(&[], &[]).is_err());
    }

    #[test]
    fn truncated_truth_is_not_scored() {
        let mut t = truth22();
        t.hops[21].truncated = true;
        let est: Vec<HopRow> = t.hops.iter().map(|h| est_from(h, 2.44e9)).collect();
        let r = evaluate(&t, &est, &EvalConfig::default()).unwrap();
        assert_eq!(r.n_expected, 21);
        assert_eq!(r.n_false_alarms, 0);
    }

    #[test]
    fn sweep_mean_is_unweighted() {
        let mk = |nmse: f64| EvalReport {
            capture_id: "x".into(),
            n_expected: 22,
            n_detected: 22,
            n_false_alarms: 1,
            nmse,
            start_nmse: 0.0,
            hops: vec![],
            axis: None,
        };
        let row = summarize(5.0, vec![mk(0.1), mk(0.3)]);
        assert!((row.mean_nmse - 0.2).abs() < 1e-15);
        assert!((row.std_nmse - 0.1414213562373095).abs() < 1e-12);
        assert_eq!(row.false_alarms, 1.0);
        let mut buf = Vec::new();
        write_sweep_csv(&[row], &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("axis,mean_nmse,std_nmse,detect_rate,false_alarms\n5,"));
    }

    #[test]
    fn path_loss_proxy() {
        let m = PathLoss { ref_distance_m: 25.0, ref_snr_db: 5.0, exponent: 2.0 };
        assert_eq!(m.snr_db(25.0), 5.0);
        assert!((m.snr_db(250.0) - (-15.0)).abs() < 1e-12);
    }

    #[test]
    fn invalid_axes_rejected() {
        let s = Scenario::futaba(0.0, 0);
        let p = PipelineConfig::default();
        let bad = SweepConfig {
            axis: SweepAxis::Snr { values_db: vec![] },
            trials: 1,
            base_seed: 0,
            jobs: 0,
            eval: EvalConfig::default(),
        };
        assert!(run_sweep(&s, &p, &bad).is_err());
        let zero_trials = SweepConfig { axis: SweepAxis::Window { sizes: vec![512] }, trials: 0, ..bad };
        assert!(run_sweep(&s, &p, &zero_trials).is_err());
    }

    proptest! {
        #[test]
        fn nmse_is_scale_free(
            pairs in prop::collection::vec((0.1f64..10.0, 0.0f64..10.0), 1..40),
            c in 0.01f64..100.0,
        ) {
            let t: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let e: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let a = nmse(&t, &e).unwrap();
            let b = nmse(
                &t.iter().map(|x| x * c).collect::<Vec<_>>(),
                &e.iter().map(|x| x * c).collect::<Vec<_>>(),
            ).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn zero_fill_decomposes(
            pairs in prop::collection::vec((0.1f64..10.0, 0.05f64..10.0, any::<bool>()), 1..40),
        ) {
            let t: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let e: Vec<f64> = pairs.iter().map(|p| if p.2 { 0.0 } else { p.1 }).collect();
            let misses = pairs.iter().filter(|p| p.2).count() as f64;
            let matched: f64 = pairs.iter().filter(|p| !p.2).map(|p| ((p.1 - p.0) / p.0).powi(2)).sum();
            let expect = (misses + matched) / t.len() as f64;
            prop_assert!((nmse(&t, &e).unwrap() - expect).abs() < 1e-12);
        }
    }
}
