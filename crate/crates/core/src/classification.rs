//! Period recovery from the mask's autocorrelation and grouping of hops into sources.
//!
//! Two hops belong to one emitter when their start-time difference, taken modulo the
//! fundamental period, lands on one of the recovered in-period lags (or on zero).
//! The pairwise rule is turned into groups either by transitive closure or by
//! requiring it to hold between all members (see [`GroupingRule`]).

use std::f64::consts::TAU;
use std::io::Write;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::detection::BinaryMask;
use crate::error::{config_err, Error, Result};
use crate::extraction::HopRecord;

/// Which per-frame reduction of the mask feeds the autocorrelation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    /// Set bits per column.
    Occupancy,
    /// Rows switching on at each column.
    #[default]
    Onset,
}

/// Set bits per column, mean removed.
pub fn occupancy_series(mask: &BinaryMask) -> Vec<f64> {
    let bits = mask.bits();
    let mut counts = vec![0.0; bits.cols()];
    for r in 0..bits.rows() {
        for (c, &b) in bits.row(r).iter().enumerate() {
            if b {
                counts[c] += 1.0;
            }
        }
    }
    remove_mean(counts)
}

/// Rising edges per column (a set bit whose left neighbour is clear), mean removed.
///
/// Hop starts become impulses, so the autocorrelation peaks sit on start-time
/// differences instead of being smeared over a dwell length.
pub fn onset_series(mask: &BinaryMask) -> Vec<f64> {
    let bits = mask.bits();
    let mut counts = vec![0.0; bits.cols()];
    for r in 0..bits.rows() {
        let mut prev = false;
        for (c, &b) in bits.row(r).iter().enumerate() {
            if b && !prev {
                counts[c] += 1.0;
            }
            prev = b;
        }
    }
    remove_mean(counts)
}

pub fn series(mask: &BinaryMask, kind: SeriesKind) -> Vec<f64> {
    match kind {
        SeriesKind::Occupancy => occupancy_series(mask),
        SeriesKind::Onset => onset_series(mask),
    }
}

fn remove_mean(mut v: Vec<f64>) -> Vec<f64> {
    if !v.is_empty() {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x -= mean);
    }
    v
}

/// Triangular smoothing with weights `half_width + 1 - |d|`, normalized per sample.
pub fn smooth(series: &[f64], half_width: usize) -> Vec<f64> {
    if half_width == 0 {
        return series.to_vec();
    }
    let n = series.len() as i64;
    let h = half_width as i64;
    (0..n)
        .map(|i| {
            let (mut acc, mut norm) = (0.0, 0.0);
            for d in -h..=h {
                let j = i + d;
                if (0..n).contains(&j) {
                    let w = (h + 1 - d.abs()) as f64;
                    acc += w * series[j as usize];
                    norm += w;
                }
            }
            acc / norm
        })
        .collect()
}

/// Biased sample autocorrelation `r[k] = (1/N) sum x[n] x[n+k]` for `k = 0..=max_lag`.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Vec<f64> {
    let n = series.len();
    if n == 0 {
        return vec![0.0; max_lag + 1];
    }
    let len = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex64> = series
        .iter()
        .map(|&x| Complex64::new(x, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(len)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    buf.iter_mut().for_each(|v| *v = Complex64::new(v.norm_sqr(), 0.0));
    planner.plan_fft_inverse(len).process(&mut buf);
    let scale = 1.0 / (len as f64 * n as f64);
    (0..=max_lag)
        .map(|k| if k < n { buf[k].re * scale } else { 0.0 })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodSearch {
    pub min_lag_s: f64,
    pub max_lag_s: f64,
    /// Admission gate for secondary peaks, relative to the peak at the period.
    pub rho: f64,
}

impl Default for PeriodSearch {
    fn default() -> Self {
        PeriodSearch {
            min_lag_s: 1e-3,
            max_lag_s: 10e-3,
            rho: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodEstimate {
    /// Refined between frames around `t1_lag_frames`.
    pub t1_s: f64,
    /// Whole-frame lag of the ACF maximum in the search window.
    pub t1_lag_frames: usize,
    /// Admitted peak lags in ascending order, interpolated between frames; the
    /// last one is `t1_s`.
    pub peak_lags_s: Vec<f64>,
    /// Biased ACF from lag 0 in steps of `frame_step_s`.
    pub acf: Vec<f64>,
    pub frame_step_s: f64,
}

impl PeriodEstimate {
    pub fn t1_frames(&self) -> usize {
        self.t1_lag_frames
    }

    /// ACF at the period relative to lag 0; near zero when nothing repeats.
    pub fn t1_strength(&self) -> f64 {
        let r0 = self.acf.first().copied().unwrap_or(0.0);
        if r0 > 0.0 {
            self.acf[self.t1_frames()] / r0
        } else {
            0.0
        }
    }
}

pub fn estimate_period(series: &[f64], frame_step_s: f64, search: &PeriodSearch) -> Result<PeriodEstimate> {
    if !(frame_step_s > 0.0) {
        return config_err("frame step must be positive");
    }
    if !(search.rho >= 0.0 && search.rho <= 1.0) {
        return config_err("peak admission ratio must lie in [0, 1]");
    }
    let min_k = ((search.min_lag_s / frame_step_s).ceil() as usize).max(1);
    let max_k = (search.max_lag_s / frame_step_s).floor() as usize;
    if !(search.max_lag_s.is_finite() && search.min_lag_s.is_finite()) || min_k > max_k {
        return config_err(format!(
            "lag window [{}, {}] s holds no whole frame lag",
            search.min_lag_s, search.max_lag_s
        ));
    }
    if series.len() <= 2 * (max_k + 1) {
        return config_err(format!(
            "series of {} frames is too short for a maximum lag of {max_k} frames",
            series.len()
        ));
    }
    let acf = autocorrelation(series, max_k + 1);
    let t1_k = (min_k..=max_k)
        .fold(min_k, |best, k| if acf[k] > acf[best] { k } else { best });
    let gate = search.rho * acf[t1_k];
    let mut peaks: Vec<usize> = (1..t1_k)
        .filter(|&k| acf[k] > acf[k - 1] && acf[k] >= acf[k + 1] && acf[k] >= gate)
        .collect();
    peaks.push(t1_k);
    let peak_lags_s: Vec<f64> = peaks
        .iter()
        .map(|&k| (k as f64 + parabolic_offset(acf[k - 1], acf[k], acf[k + 1])) * frame_step_s)
        .collect();
    let mut acf = acf;
    acf.truncate(max_k + 1);
    Ok(PeriodEstimate {
        t1_s: *peak_lags_s.last().expect("period is always admitted"),
        t1_lag_frames: t1_k,
        peak_lags_s,
        acf,
        frame_step_s,
    })
}

/// Sub-sample position of a local maximum from its two neighbours, in [-0.5, 0.5].
/// Start-time congruence is taken modulo the period over many periods, so a
/// whole-frame period error would accumulate across the capture.
fn parabolic_offset(left: f64, centre: f64, right: f64) -> f64 {
    let curvature = left - 2.0 * centre + right;
    if curvature < 0.0 {
        (0.5 * (left - right) / curvature).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// `lag_ms,correlation` with the correlation normalized to 1 at lag 0.
pub fn write_acf_csv<W: Write>(period: &PeriodEstimate, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let fail = |e: csv::Error| Error::Invariant(format!("writing ACF CSV: {e}"));
    w.write_record(["lag_ms", "correlation"]).map_err(fail)?;
    let r0 = period.acf.first().copied().filter(|&v| v > 0.0).unwrap_or(1.0);
    for (k, v) in period.acf.iter().enumerate() {
        w.write_record([
            format!("{:.6}", k as f64 * period.frame_step_s * 1e3),
            format!("{:.9}", v / r0),
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(|e| Error::Invariant(format!("writing ACF CSV: {e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceGroup {
    pub id: usize,
    /// Hop indices ordered by start time.
    pub members: Vec<usize>,
    pub period_s: f64,
    /// Recovered lags that linked at least one pair inside this group.
    pub peak_lags_s: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceAssignment {
    /// Source id per hop, in input order. Every hop gets one.
    pub labels: Vec<usize>,
    pub sources: Vec<SourceGroup>,
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

fn circular_distance(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

/// The lag (0 for congruent starts) that links two start times, if any.
pub fn linking_lag(start_a: f64, start_b: f64, period: &PeriodEstimate, tol_s: f64) -> Option<f64> {
    let t1 = period.t1_s;
    let diff = (start_a - start_b).rem_euclid(t1);
    std::iter::once(0.0)
        .chain(period.peak_lags_s.iter().copied())
        .find(|&lag| {
            let lag = lag.rem_euclid(t1);
            circular_distance(diff, lag, t1) <= tol_s || circular_distance(diff, t1 - lag, t1) <= tol_s
        })
}

/// How the pairwise congruence test is turned into groups.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingRule {
    /// Transitive closure of the pairwise test.
    Transitive,
    /// Hops congruent modulo the period form phase classes; classes join only when
    /// every cross pair passes the test and their dwells do not overlap, using as few
    /// sources as possible. Keeps apart interleaved sources whose relative offset
    /// itself shows up as a lag.
    #[default]
    Consistent,
}

pub fn group_hops(
    hops: &[HopRecord],
    period: &PeriodEstimate,
    tol_s: f64,
    rule: GroupingRule,
) -> Result<SourceAssignment> {
    let starts: Vec<f64> = hops.iter().map(|h| h.start_time_s).collect();
    let dwells: Vec<f64> = hops.iter().map(|h| h.dwell_time_s).collect();
    group_spans(&starts, &dwells, period, tol_s, rule)
}

/// Grouping on bare start times, without the non-overlap constraint.
pub fn group_starts(
    starts: &[f64],
    period: &PeriodEstimate,
    tol_s: f64,
    rule: GroupingRule,
) -> Result<SourceAssignment> {
    group_spans(starts, &vec![0.0; starts.len()], period, tol_s, rule)
}

/// A set of hops congruent modulo the period.
struct PhaseClass {
    members: Vec<usize>,
    phase_s: f64,
    dwell_s: f64,
}

fn group_spans(
    starts: &[f64],
    dwells: &[f64],
    period: &PeriodEstimate,
    tol_s: f64,
    rule: GroupingRule,
) -> Result<SourceAssignment> {
    if period.peak_lags_s.is_empty() {
        return config_err("period estimate has an empty peak set");
    }
    if !(period.t1_s > 0.0) {
        return config_err("fundamental period must be positive");
    }
    if tol_s < period.frame_step_s * (1.0 - 1e-9) {
        return config_err(format!(
            "tolerance {tol_s} s is below one frame ({} s)",
            period.frame_step_s
        ));
    }
    let t1 = period.t1_s;
    // Work in start-time order so results do not depend on input order.
    let mut order: Vec<usize> = (0..starts.len()).collect();
    order.sort_by(|&a, &b| starts[a].total_cmp(&starts[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| starts[i]).collect();
    let links = |a: usize, b: usize| linking_lag(sorted[a], sorted[b], period, tol_s);

    let mut groups = match rule {
        GroupingRule::Transitive => components(sorted.len(), |a, b| links(a, b).is_some()),
        GroupingRule::Consistent => {
            let classes: Vec<PhaseClass> = components(sorted.len(), |a, b| {
                circular_distance(sorted[a], sorted[b], t1) <= tol_s
            })
            .into_iter()
            .map(|members| {
                let (sin, cos) = members.iter().fold((0.0, 0.0), |(s, c), &m| {
                    let angle = TAU * sorted[m] / t1;
                    (s + angle.sin(), c + angle.cos())
                });
                let mut d: Vec<f64> = members.iter().map(|&m| dwells[order[m]]).collect();
                d.sort_by(f64::total_cmp);
                PhaseClass {
                    phase_s: sin.atan2(cos).rem_euclid(TAU) / TAU * t1,
                    dwell_s: d[d.len() / 2],
                    members,
                }
            })
            .collect();
            let compatible: Vec<Vec<bool>> = classes
                .iter()
                .map(|p| classes.iter().map(|q| classes_compatible(p, q, period, tol_s)).collect())
                .collect();
            min_cover(&compatible, &classes, t1)
                .into_iter()
                .map(|clique| {
                    let mut members: Vec<usize> =
                        clique.iter().flat_map(|&c| classes[c].members.iter().copied()).collect();
                    members.sort_unstable();
                    members
                })
                .collect()
        }
    };

    groups.sort_by_key(|g| g[0]);
    let mut labels = vec![0; starts.len()];
    let mut sources = Vec::with_capacity(groups.len());
    for (id, g) in groups.iter().enumerate() {
        let mut lags: Vec<f64> = Vec::new();
        for (i, &a) in g.iter().enumerate() {
            labels[order[a]] = id;
            for &b in &g[i + 1..] {
                if let Some(lag) = links(a, b).filter(|&l| l > 0.0) {
                    if !lags.contains(&lag) {
                        lags.push(lag);
                    }
                }
            }
        }
        lags.sort_by(f64::total_cmp);
        sources.push(SourceGroup {
            id,
            members: g.iter().map(|&a| order[a]).collect(),
            period_s: t1,
            peak_lags_s: lags,
        });
    }
    Ok(SourceAssignment { labels, sources })
}

/// Two phase classes can share an emitter when their phase difference is a
/// recovered lag and their dwells do not overlap: one transmitter holds one carrier
/// at a time.
fn classes_compatible(p: &PhaseClass, q: &PhaseClass, period: &PeriodEstimate, tol_s: f64) -> bool {
    if std::ptr::eq(p, q) {
        return true;
    }
    let t1 = period.t1_s;
    let ahead = (q.phase_s - p.phase_s).rem_euclid(t1);
    if ahead < p.dwell_s - tol_s || t1 - ahead < q.dwell_s - tol_s {
        return false;
    }
    linking_lag(q.phase_s, p.phase_s, period, tol_s).is_some()
}

/// Connected components of `0..n` under `linked`, each sorted, ordered by first member.
fn components(n: usize, linked: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let mut sets = DisjointSet::new(n);
    for a in 0..n {
        for b in a + 1..n {
            if linked(a, b) {
                sets.union(a, b);
            }
        }
    }
    let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let r = sets.find(i);
        by_root[r].push(i);
    }
    by_root.into_iter().filter(|g| !g.is_empty()).collect()
}

/// Expansion budget per clique search; past it the best clique found so far is used.
const CLIQUE_SEARCH_BUDGET: usize = 200_000;

/// Partitions the classes into cliques of `adj`, repeatedly removing a maximum
/// clique. Among equally large cliques the one whose members leave the widest
/// smallest guard between consecutive dwells wins, then the first in class order.
fn clique_cover(adj: &[Vec<bool>], classes: &[PhaseClass], t1: f64) -> Vec<Vec<usize>> {
    let mut alive: Vec<usize> = (0..adj.len()).collect();
    let mut cover = Vec::new();
    while !alive.is_empty() {
        let mut search = CliqueSearch {
            adj,
            classes,
            t1,
            best: Vec::new(),
            best_guard: f64::NEG_INFINITY,
            budget: CLIQUE_SEARCH_BUDGET,
        };
        search.grow(&mut Vec::new(), &alive);
        let best = search.best;
        alive.retain(|v| !best.contains(v));
        cover.push(best);
    }
    cover
}

struct CliqueSearch<'a> {
    adj: &'a [Vec<bool>],
    classes: &'a [PhaseClass],
    t1: f64,
    best: Vec<usize>,
    best_guard: f64,
    budget: usize,
}

impl CliqueSearch<'_> {
    fn grow(&mut self, clique: &mut Vec<usize>, candidates: &[usize]) {
        if clique.len() >= self.best.len() && !clique.is_empty() {
            let guard = smallest_guard(clique, self.classes, self.t1);
            if clique.len() > self.best.len() || guard > self.best_guard {
                self.best = clique.clone();
                self.best_guard = guard;
            }
        }
        for (i, &v) in candidates.iter().enumerate() {
            if self.budget == 0 || clique.len() + candidates.len() - i < self.best.len() {
                return;
            }
            self.budget -= 1;
            let next: Vec<usize> = candidates[i + 1..].iter().copied().filter(|&u| self.adj[v][u]).collect();
            clique.push(v);
            self.grow(clique, &next);
            clique.pop();
        }
    }
}

/// Fewest cliques covering every class, found by branch and bound seeded with the
/// greedy cover. Equal counts are decided by the widest smallest guard.
fn min_cover(adj: &[Vec<bool>], classes: &[PhaseClass], t1: f64) -> Vec<Vec<usize>> {
    let greedy = clique_cover(adj, classes, t1);
    let score = |cover: &[Vec<usize>]| {
        let guard = cover
            .iter()
            .map(|g| smallest_guard(g, classes, t1))
            .fold(f64::INFINITY, f64::min);
        (cover.len(), guard)
    };
    let mut search = CoverSearch {
        adj,
        best_score: score(&greedy),
        best: greedy,
        budget: CLIQUE_SEARCH_BUDGET,
        score: &score,
    };
    search.place(0, &mut Vec::new());
    search.best
}

struct CoverSearch<'a, F> {
    adj: &'a [Vec<bool>],
    best: Vec<Vec<usize>>,
    best_score: (usize, f64),
    budget: usize,
    score: &'a F,
}

impl<F: Fn(&[Vec<usize>]) -> (usize, f64)> CoverSearch<'_, F> {
    fn place(&mut self, v: usize, groups: &mut Vec<Vec<usize>>) {
        if groups.len() > self.best_score.0 || self.budget == 0 {
            return;
        }
        self.budget -= 1;
        if v == self.adj.len() {
            let (n, guard) = (self.score)(groups);
            if n < self.best_score.0 || guard > self.best_score.1 {
                self.best = groups.clone();
                self.best_score = (n, guard);
            }
            return;
        }
        for g in 0..groups.len() {
            if groups[g].iter().all(|&u| self.adj[v][u]) {
                groups[g].push(v);
                self.place(v + 1, groups);
                groups[g].pop();
            }
        }
        groups.push(vec![v]);
        self.place(v + 1, groups);
        groups.pop();
    }
}

/// Smallest silent interval between consecutive dwells of the classes, going round
/// the period once.
fn smallest_guard(clique: &[usize], classes: &[PhaseClass], t1: f64) -> f64 {
    let mut phases: Vec<(f64, f64)> = clique
        .iter()
        .map(|&c| (classes[c].phase_s.rem_euclid(t1), classes[c].dwell_s))
        .collect();
    phases.sort_by(|a, b| a.0.total_cmp(&b.0));
    (0..phases.len())
        .map(|i| {
            let (start, dwell) = phases[i];
            let next = phases[(i + 1) % phases.len()].0;
            let gap = (next - start).rem_euclid(t1);
            let gap = if gap == 0.0 { t1 } else { gap };
            gap - dwell
        })
        .fold(f64::INFINITY, f64::min)
}
