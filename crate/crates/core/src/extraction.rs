//! Rectangle extraction from an occupancy mask.
//!
//! The scan walks rows (frequency) then columns (time). At the first set cell it
//! walks right to find the run length, walks down the run's last column to find the
//! frequency extent, records that rectangle and clears it. Components that are not
//! solid rectangles come out as several rectangles; the closing step upstream is what
//! makes real hops rectangular.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::detection::BinaryMask;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::spectrogram::Axes;

/// Inclusive cell bounds of one rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellRect {
    pub first_row: usize,
    pub last_row: usize,
    pub first_col: usize,
    pub last_col: usize,
}

impl CellRect {
    pub fn frames(&self) -> usize {
        self.last_col - self.first_col + 1
    }

    pub fn bins(&self) -> usize {
        self.last_row - self.first_row + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopRecord {
    pub start_time_s: f64,
    pub stop_time_s: f64,
    pub dwell_time_s: f64,
    pub center_frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub start_frame: usize,
    pub stop_frame: usize,
    pub start_bin: usize,
    pub stop_bin: usize,
    /// Emitter label once classified.
    pub source_id: Option<usize>,
}

impl HopRecord {
    /// Physical parameters of a rectangle. Frame `i` stands for the interval of one
    /// hop step centred on its frame time, so `dwell = frames * step = stop - start`.
    pub fn from_rect(rect: &CellRect, axes: &Axes) -> Self {
        let half_step = axes.frame_step_s / 2.0;
        let start = axes.frame_times_s[rect.first_col] - half_step;
        let stop = axes.frame_times_s[rect.last_col] + half_step;
        HopRecord {
            start_time_s: start,
            stop_time_s: stop,
            dwell_time_s: rect.frames() as f64 * axes.frame_step_s,
            center_frequency_hz: (axes.bin_freqs_hz[rect.first_row] + axes.bin_freqs_hz[rect.last_row]) / 2.0,
            bandwidth_hz: rect.bins() as f64 * axes.bin_width_hz,
            start_frame: rect.first_col,
            stop_frame: rect.last_col,
            start_bin: rect.first_row,
            stop_bin: rect.last_row,
            source_id: None,
        }
    }

    pub fn frames(&self) -> usize {
        self.stop_frame - self.start_frame + 1
    }

    pub fn bins(&self) -> usize {
        self.stop_bin - self.start_bin + 1
    }
}

/// Rectangles in scan order.
pub fn extract_rects(bits: &Grid<bool>) -> Vec<CellRect> {
    let mut work = bits.clone();
    let (rows, cols) = work.shape();
    let mut rects = Vec::new();
    for i in 0..rows {
        let mut j = 0;
        while j < cols {
            if !*work.get(i, j) {
                j += 1;
                continue;
            }
            let first_col = j;
            while j < cols && *work.get(i, j) {
                j += 1;
            }
            let last_col = j - 1;
            let mut last_row = i;
            while last_row + 1 < rows && *work.get(last_row + 1, last_col) {
                last_row += 1;
            }
            for r in i..=last_row {
                work.row_mut(r)[first_col..=last_col].fill(false);
            }
            rects.push(CellRect {
                first_row: i,
                last_row,
                first_col,
                last_col,
            });
        }
    }
    rects
}

fn to_records(mut rects: Vec<CellRect>, axes: &Axes) -> Vec<HopRecord> {
    rects.sort_by_key(|r| (r.first_col, r.first_row, r.last_col, r.last_row));
    rects.iter().map(|r| HopRecord::from_rect(r, axes)).collect()
}

/// Hop records sorted by start frame, then by lowest bin.
pub fn extract_hops(mask: &BinaryMask) -> Vec<HopRecord> {
    to_records(extract_rects(mask.bits()), mask.axes())
}

/// Minimum-size gate against speckle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HopFilter {
    pub min_dwell_frames: usize,
    pub min_bandwidth_bins: usize,
}

impl Default for HopFilter {
    fn default() -> Self {
        HopFilter {
            min_dwell_frames: 8,
            min_bandwidth_bins: 2,
        }
    }
}

impl HopFilter {
    pub fn keeps(&self, hop: &HopRecord) -> bool {
        hop.frames() >= self.min_dwell_frames && hop.bins() >= self.min_bandwidth_bins
    }

    pub fn apply(&self, hops: Vec<HopRecord>) -> Vec<HopRecord> {
        hops.into_iter().filter(|h| self.keeps(h)).collect()
    }
}

/// Reference implementation: bounding boxes of 4-connected components.
pub mod oracle {
    use super::*;

    pub fn component_rects(bits: &Grid<bool>) -> Vec<CellRect> {
        let (rows, cols) = bits.shape();
        let mut seen = Grid::new(rows, cols, false);
        let mut rects = Vec::new();
        let mut stack = Vec::new();
        for r0 in 0..rows {
            for c0 in 0..cols {
                if !*bits.get(r0, c0) || *seen.get(r0, c0) {
                    continue;
                }
                let mut rect = CellRect {
                    first_row: r0,
                    last_row: r0,
                    first_col: c0,
                    last_col: c0,
                };
                seen.set(r0, c0, true);
                stack.push((r0, c0));
                while let Some((r, c)) = stack.pop() {
                    rect.first_row = rect.first_row.min(r);
                    rect.last_row = rect.last_row.max(r);
                    rect.first_col = rect.first_col.min(c);
                    rect.last_col = rect.last_col.max(c);
                    let mut visit = |rr: usize, cc: usize| {
                        if *bits.get(rr, cc) && !*seen.get(rr, cc) {
                            seen.set(rr, cc, true);
                            stack.push((rr, cc));
                        }
                    };
                    if r > 0 {
                        visit(r - 1, c);
                    }
                    if r + 1 < rows {
                        visit(r + 1, c);
                    }
                    if c > 0 {
                        visit(r, c - 1);
                    }
                    if c + 1 < cols {
                        visit(r, c + 1);
                    }
                }
                rects.push(rect);
            }
        }
        rects
    }

    pub fn hops_from_mask_oracle(mask: &BinaryMask) -> Vec<HopRecord> {
        to_records(component_rects(mask.bits()), mask.axes())
    }
}

pub const HOPS_CSV_HEADER: [&str; 6] = [
    "start_ms",
    "stop_ms",
    "dwell_ms",
    "center_ghz",
    "bandwidth_mhz",
    "source_id",
];

/// One line of the hops CSV; the time/frequency subset of a [`HopRecord`].
#[derive(Clone, Debug, PartialEq)]
pub struct HopRow {
    pub start_time_s: f64,
    pub stop_time_s: f64,
    pub dwell_time_s: f64,
    pub center_frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub source_id: Option<usize>,
}

impl From<&HopRecord> for HopRow {
    fn from(h: &HopRecord) -> Self {
        HopRow {
            start_time_s: h.start_time_s,
            stop_time_s: h.stop_time_s,
            dwell_time_s: h.dwell_time_s,
            center_frequency_hz: h.center_frequency_hz,
            bandwidth_hz: h.bandwidth_hz,
            source_id: h.source_id,
        }
    }
}

/// Fixed-precision CSV (ns in time, Hz in frequency); unclassified hops get source -1.
pub fn write_hops_csv<W: Write>(hops: &[HopRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let fail = |e: csv::Error| Error::Invariant(format!("writing hops CSV: {e}"));
    w.write_record(HOPS_CSV_HEADER).map_err(fail)?;
    for h in hops {
        let source = h.source_id.map_or_else(|| "-1".to_string(), |s| s.to_string());
        w.write_record([
            format!("{:.6}", h.start_time_s * 1e3),
            format!("{:.6}", h.stop_time_s * 1e3),
            format!("{:.6}", h.dwell_time_s * 1e3),
            format!("{:.9}", h.center_frequency_hz * 1e-9),
            format!("{:.6}", h.bandwidth_hz * 1e-6),
            source,
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(|e| Error::Invariant(format!("writing hops CSV: {e}")))
}

pub fn read_hops_csv<R: Read>(input: R, origin: &std::path::Path) -> Result<Vec<HopRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers().map_err(|e| Error::format(origin, e))?.clone();
    if header.iter().collect::<Vec<_>>() != HOPS_CSV_HEADER {
        return Err(Error::format(origin, format!("unexpected hops CSV header {header:?}")));
    }
    let mut rows = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(origin, e))?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::format(origin, format!("row {}: bad {}", line + 1, HOPS_CSV_HEADER[i])))
        };
        let source: i64 = rec
            .get(5)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::format(origin, format!("row {}: bad source_id", line + 1)))?;
        rows.push(HopRow {
            start_time_s: num(0)? * 1e-3,
            stop_time_s: num(1)? * 1e-3,
            dwell_time_s: num(2)? * 1e-3,
            center_frequency_hz: num(3)? * 1e9,
            bandwidth_hz: num(4)? * 1e6,
            source_id: usize::try_from(source).ok(),
        });
    }
    Ok(rows)
}
