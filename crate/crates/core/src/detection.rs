//! Global dynamic threshold, binarization and morphological closing.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::grid::Grid;
use crate::iq_io::{read_json, write_json};
use crate::par::{self, Parallelism};
use crate::spectrogram::{sidecar, Axes, Spectrogram};

/// Occupancy bits with the axes of the spectrogram they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    bits: Grid<bool>,
    axes: Axes,
}

impl BinaryMask {
    pub fn new(bits: Grid<bool>, axes: Axes) -> Result<Self> {
        if bits.rows() != axes.bin_freqs_hz.len() || bits.cols() != axes.frame_times_s.len() {
            return Err(Error::Invariant("mask shape disagrees with its axes".into()));
        }
        Ok(BinaryMask { bits, axes })
    }

    pub fn bits(&self) -> &Grid<bool> {
        &self.bits
    }

    pub fn axes(&self) -> &Axes {
        &self.axes
    }

    pub fn count_ones(&self) -> usize {
        self.bits.as_slice().iter().filter(|&&b| b).count()
    }

    pub fn occupancy(&self) -> f64 {
        self.count_ones() as f64 / self.bits.len().max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub s_max: f64,
    /// Mean of the highest `top_frac` share of entries.
    pub sigma_top: f64,
    pub mu: f64,
    pub top_frac: f64,
    /// Share of entries at or above `mu`.
    pub occupancy_fraction: f64,
}

/// `mu = (max + mean of the top ceil(top_frac * K) entries) / 2`.
///
/// The top entries are summed in ascending order, so the result is bit-identical to
/// sorting the whole set and averaging its tail.
pub fn threshold_from_values(values: &[f64], top_frac: f64) -> Result<ThresholdReport> {
    if values.is_empty() {
        return config_err("threshold needs at least one value");
    }
    if !(top_frac > 0.0 && top_frac <= 1.0) {
        return config_err(format!("top fraction must lie in (0, 1], got {top_frac}"));
    }
    let k = ((top_frac * values.len() as f64).ceil() as usize).clamp(1, values.len());
    let mut work = values.to_vec();
    let split = work.len() - k;
    if split > 0 {
        work.select_nth_unstable_by(split, f64::total_cmp);
    }
    let top = &mut work[split..];
    top.sort_unstable_by(f64::total_cmp);
    let s_max = top[top.len() - 1];
    let sigma_top = top.iter().sum::<f64>() / k as f64;
    let mu = (s_max + sigma_top) / 2.0;
    let above = values.iter().filter(|&&v| v >= mu).count();
    Ok(ThresholdReport {
        s_max,
        sigma_top,
        mu,
        top_frac,
        occupancy_fraction: above as f64 / values.len() as f64,
    })
}

pub fn estimate_threshold(spec: &Spectrogram, top_frac: f64) -> Result<ThresholdReport> {
    threshold_from_values(spec.power_db().as_slice(), top_frac)
}

/// Bit set where the entry is at least `mu`.
pub fn binarize(spec: &Spectrogram, mu: f64) -> BinaryMask {
    let p = spec.power_db();
    let bits = p.as_slice().iter().map(|&v| v >= mu).collect();
    BinaryMask {
        bits: Grid::from_vec(p.rows(), p.cols(), bits).expect("same shape as the spectrogram"),
        axes: spec.axes().clone(),
    }
}

/// Closing (dilation then erosion) with a `kernel_rows x kernel_cols` rectangle.
///
/// The mask is treated as embedded in an all-zero plane: cells outside the grid are 0
/// for the dilation, and the erosion sees the dilated plane, not a clipped copy. This
/// keeps the closing extensive and idempotent right up to the border.
pub fn morph_close(
    mask: &BinaryMask,
    kernel_rows: usize,
    kernel_cols: usize,
    par: Parallelism,
) -> Result<BinaryMask> {
    Ok(BinaryMask {
        bits: close_grid(&mask.bits, kernel_rows, kernel_cols, par)?,
        axes: mask.axes.clone(),
    })
}

pub fn close_grid(
    bits: &Grid<bool>,
    kernel_rows: usize,
    kernel_cols: usize,
    par: Parallelism,
) -> Result<Grid<bool>> {
    for (name, k) in [("row", kernel_rows), ("column", kernel_cols)] {
        if k == 0 || k % 2 == 0 {
            return config_err(format!("kernel {name} size must be odd and at least 1, got {k}"));
        }
    }
    let (hr, hc) = (kernel_rows / 2, kernel_cols / 2);
    let (rows, cols) = bits.shape();
    // The dilation is kept on a margin of one half-kernel around the grid.
    let (prow, pcol) = (rows + 2 * hr, cols + 2 * hc);
    let mut padded = Grid::new(prow, pcol, false);
    for r in 0..rows {
        padded.row_mut(r + hr)[hc..hc + cols].copy_from_slice(bits.row(r));
    }
    let dilated = sweep_cols(&sweep_rows(&padded, hc, true, par), hr, true, par);
    let eroded = sweep_cols(&sweep_rows(&dilated, hc, false, par), hr, false, par);
    let mut out = Grid::new(rows, cols, false);
    for r in 0..rows {
        out.row_mut(r).copy_from_slice(&eroded.row(r + hr)[hc..hc + cols]);
    }
    Ok(out)
}

/// Horizontal pass over a `2h + 1` window: OR when `dilate`, AND otherwise.
/// Cells beyond the grid count as 0.
fn sweep_rows(src: &Grid<bool>, h: usize, dilate: bool, par: Parallelism) -> Grid<bool> {
    let cols = src.cols();
    let mut out = Grid::new(src.rows(), cols, false);
    if cols == 0 {
        return out;
    }
    let width = 2 * h + 1;
    par::chunks_mut_init(
        out.as_mut_slice(),
        cols,
        par,
        || vec![0usize; cols + 1],
        |prefix, r, dst| {
            let row = src.row(r);
            for (c, &b) in row.iter().enumerate() {
                prefix[c + 1] = prefix[c] + usize::from(b);
            }
            for (c, slot) in dst.iter_mut().enumerate() {
                let lo = c.saturating_sub(h);
                let hi = (c + h + 1).min(cols);
                let ones = prefix[hi] - prefix[lo];
                *slot = if dilate { ones > 0 } else { ones == width };
            }
        },
    );
    out
}

/// Vertical counterpart of [`sweep_rows`].
fn sweep_cols(src: &Grid<bool>, h: usize, dilate: bool, par: Parallelism) -> Grid<bool> {
    let (rows, cols) = src.shape();
    let mut out = Grid::new(rows, cols, false);
    if cols == 0 {
        return out;
    }
    par::chunks_mut(out.as_mut_slice(), cols, par, |r, dst| {
        let lo = r.saturating_sub(h);
        let hi = (r + h + 1).min(rows);
        let full = hi - lo == 2 * h + 1;
        if !dilate && !full {
            dst.fill(false);
            return;
        }
        dst.copy_from_slice(src.row(lo));
        for rr in lo + 1..hi {
            let other = src.row(rr);
            if dilate {
                dst.iter_mut().zip(other).for_each(|(d, &o)| *d |= o);
            } else {
                dst.iter_mut().zip(other).for_each(|(d, &o)| *d &= o);
            }
        }
    });
    out
}

#[derive(Serialize, Deserialize)]
struct MaskHeader {
    rows: usize,
    cols: usize,
    format: String,
    threshold: Option<ThresholdReport>,
    axes: Axes,
}

/// Writes the mask as a binary PBM (row 0 = lowest frequency on the first line) and a
/// JSON sidecar with the threshold report and axes, enough to resume extraction.
pub fn write_mask_dump(mask: &BinaryMask, threshold: Option<&ThresholdReport>, path: &Path) -> Result<()> {
    let (rows, cols) = mask.bits.shape();
    let mut bytes = format!("P4\n{cols} {rows}\n").into_bytes();
    let stride = cols.div_ceil(8);
    for r in 0..rows {
        let mut packed = vec![0u8; stride];
        for (c, &b) in mask.bits.row(r).iter().enumerate() {
            if b {
                packed[c / 8] |= 0x80 >> (c % 8);
            }
        }
        bytes.extend_from_slice(&packed);
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let header = MaskHeader {
        rows,
        cols,
        format: "P4, 1 = occupied, first line = lowest frequency".into(),
        threshold: threshold.cloned(),
        axes: mask.axes.clone(),
    };
    write_json(&sidecar(path), &header)
}

pub fn read_mask_dump(path: &Path) -> Result<(BinaryMask, Option<ThresholdReport>)> {
    let header: MaskHeader = read_json(&sidecar(path))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::format(path, m);
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 3 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("PBM header ends early"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P4" {
        return Err(bad("expected a binary PBM (P4)"));
    }
    let cols: usize = fields[1].parse().map_err(|_| bad("bad PBM width"))?;
    let rows: usize = fields[2].parse().map_err(|_| bad("bad PBM height"))?;
    if (rows, cols) != (header.rows, header.cols) {
        return Err(bad("PBM size disagrees with the JSON header"));
    }
    let stride = cols.div_ceil(8);
    if bytes.len() < pos + stride * rows {
        return Err(bad("PBM payload is truncated"));
    }
    let mut bits = Grid::new(rows, cols, false);
    for r in 0..rows {
        let line = &bytes[pos + r * stride..pos + (r + 1) * stride];
        for c in 0..cols {
            bits.set(r, c, line[c / 8] & (0x80 >> (c % 8)) != 0);
        }
    }
    Ok((BinaryMask::new(bits, header.axes)?, header.threshold))
}
