//! Per-hop baseband waveforms. Each one is unit power.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{config_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Waveform {
    /// Unmodulated carrier.
    Constant,
    /// Continuous-phase binary FSK with a Gaussian frequency pulse.
    Gfsk {
        symbol_rate_hz: f64,
        bt: f64,
        modulation_index: f64,
    },
    /// Random QPSK symbols through a root-raised-cosine filter.
    RrcQpsk { symbol_rate_hz: f64, rolloff: f64 },
}

impl Default for Waveform {
    fn default() -> Self {
        Waveform::Gfsk {
            symbol_rate_hz: 10e3,
            bt: 0.5,
            modulation_index: 0.5,
        }
    }
}

const TABLE_STEPS_PER_SYMBOL: usize = 256;
const GFSK_SPAN_SYMBOLS: usize = 2;
const RRC_SPAN_SYMBOLS: usize = 6;

impl Waveform {
    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        match *self {
            Waveform::Constant => Ok(()),
            Waveform::Gfsk {
                symbol_rate_hz,
                bt,
                modulation_index,
            } => {
                if !(symbol_rate_hz > 0.0 && symbol_rate_hz < sample_rate_hz) {
                    return config_err("GFSK symbol rate must lie in (0, sample rate)");
                }
                if !(bt > 0.0 && bt.is_finite()) {
                    return config_err("GFSK BT product must be positive");
                }
                if !(modulation_index > 0.0 && modulation_index.is_finite()) {
                    return config_err("GFSK modulation index must be positive");
                }
                Ok(())
            }
            Waveform::RrcQpsk {
                symbol_rate_hz,
                rolloff,
            } => {
                if !(symbol_rate_hz > 0.0 && symbol_rate_hz < sample_rate_hz) {
                    return config_err("RRC symbol rate must lie in (0, sample rate)");
                }
                if !(0.0..=1.0).contains(&rolloff) {
                    return config_err("RRC rolloff must lie in [0, 1]");
                }
                Ok(())
            }
        }
    }

    /// Builds the reusable pulse table for this waveform.
    pub(crate) fn shaper(&self) -> Shaper {
        match *self {
            Waveform::Constant => Shaper::Constant,
            Waveform::Gfsk {
                symbol_rate_hz,
                bt,
                modulation_index,
            } => Shaper::Gfsk {
                symbol_rate_hz,
                modulation_index,
                pulse: PulseTable::new(GFSK_SPAN_SYMBOLS, |t| gaussian_frequency_pulse(t, bt)),
            },
            Waveform::RrcQpsk {
                symbol_rate_hz,
                rolloff,
            } => Shaper::Rrc {
                symbol_rate_hz,
                pulse: PulseTable::new(RRC_SPAN_SYMBOLS, |t| root_raised_cosine(t, rolloff)),
            },
        }
    }
}

/// Pulse sampled on a fine grid over `[-span, span]` symbols, linearly interpolated.
#[derive(Clone, Debug)]
pub(crate) struct PulseTable {
    span: usize,
    values: Vec<f64>,
}

impl PulseTable {
    fn new(span: usize, f: impl Fn(f64) -> f64) -> Self {
        let n = 2 * span * TABLE_STEPS_PER_SYMBOL + 1;
        let values = (0..n)
            .map(|i| f(i as f64 / TABLE_STEPS_PER_SYMBOL as f64 - span as f64))
            .collect();
        PulseTable { span, values }
    }

    fn at(&self, t: f64) -> f64 {
        let x = (t + self.span as f64) * TABLE_STEPS_PER_SYMBOL as f64;
        if x < 0.0 || x >= (self.values.len() - 1) as f64 {
            return 0.0;
        }
        let i = x as usize;
        let frac = x - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }
}

/// Rectangular symbol pulse convolved with a Gaussian of bandwidth-time product `bt`.
/// Integrates to one symbol.
fn gaussian_frequency_pulse(t: f64, bt: f64) -> f64 {
    let sigma = (2.0f64.ln()).sqrt() / (2.0 * PI * bt);
    let scale = 1.0 / (sigma * 2.0f64.sqrt());
    0.5 * (erf((t + 0.5) * scale) - erf((t - 0.5) * scale))
}

fn root_raised_cosine(t: f64, beta: f64) -> f64 {
    if t.abs() < 1e-12 {
        return 1.0 - beta + 4.0 * beta / PI;
    }
    if beta > 0.0 && (t.abs() - 1.0 / (4.0 * beta)).abs() < 1e-9 {
        let a = PI / (4.0 * beta);
        return beta / 2.0f64.sqrt() * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos());
    }
    let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
    let den = PI * t * (1.0 - (4.0 * beta * t).powi(2));
    num / den
}

#[derive(Clone, Debug)]
pub(crate) enum Shaper {
    Constant,
    Gfsk {
        symbol_rate_hz: f64,
        modulation_index: f64,
        pulse: PulseTable,
    },
    Rrc {
        symbol_rate_hz: f64,
        pulse: PulseTable,
    },
}

impl Shaper {
    /// Phase track of a constant-envelope shaper, `None` for shapers that vary in
    /// amplitude. Draws from `rng` exactly as `generate` does.
    pub(crate) fn phase_track<R: Rng>(&self, n: usize, sample_rate_hz: f64, rng: &mut R) -> Option<Vec<f64>> {
        match self {
            Shaper::Constant => Some(vec![0.0; n]),
            Shaper::Gfsk {
                symbol_rate_hz,
                modulation_index,
                pulse,
            } => {
                let (symbols, lead) = draw_symbols(n, *symbol_rate_hz, sample_rate_hz, pulse.span, rng, |r| {
                    if r.random::<bool>() {
                        1.0
                    } else {
                        -1.0
                    }
                });
                let peak_dev_hz = modulation_index * symbol_rate_hz / 2.0;
                let mut phase = 0.0f64;
                Some(
                    (0..n)
                        .map(|i| {
                            let out = phase;
                            let t = i as f64 * symbol_rate_hz / sample_rate_hz;
                            let freq = peak_dev_hz * shaped_sum(&symbols, lead, t, pulse, |b, g| b * g);
                            // The per-sample step is far below a turn, so one wrap suffices.
                            phase += 2.0 * PI * freq / sample_rate_hz;
                            if phase >= PI {
                                phase -= 2.0 * PI;
                            } else if phase < -PI {
                                phase += 2.0 * PI;
                            }
                            out
                        })
                        .collect(),
                )
            }
            Shaper::Rrc { .. } => None,
        }
    }

    /// `n` unit-power baseband samples drawn with `rng`.
    pub(crate) fn generate<R: Rng>(&self, n: usize, sample_rate_hz: f64, rng: &mut R) -> Vec<Complex64> {
        match (self, self.phase_track(n, sample_rate_hz, rng)) {
            (_, Some(phases)) => phases.into_iter().map(|p| Complex64::from_polar(1.0, p)).collect(),
            (Shaper::Rrc { symbol_rate_hz, pulse }, None) => rrc_qpsk(n, *symbol_rate_hz, sample_rate_hz, pulse, rng),
            (_, None) => Vec::new(),
        }
    }
}

fn rrc_qpsk<R: Rng>(n: usize, symbol_rate_hz: f64, sample_rate_hz: f64, pulse: &PulseTable, rng: &mut R) -> Vec<Complex64> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let (symbols, lead) = draw_symbols(n, symbol_rate_hz, sample_rate_hz, pulse.span, rng, |r| {
        Complex64::new(
            if r.random::<bool>() { h } else { -h },
            if r.random::<bool>() { h } else { -h },
        )
    });
    let mut out: Vec<Complex64> = (0..n)
        .map(|i| {
            let t = i as f64 * symbol_rate_hz / sample_rate_hz;
            shaped_sum(&symbols, lead, t, pulse, |a: Complex64, g| a * g)
        })
        .collect();
    let power = out.iter().map(|s| s.norm_sqr()).sum::<f64>() / n.max(1) as f64;
    if power > 0.0 {
        let g = power.sqrt().recip();
        out.iter_mut().for_each(|s| *s *= g);
    }
    out
}

/// Symbols covering `n` samples plus pulse tails on both sides. Symbol `k` of the
/// returned vector is centred at `k - lead + 0.5` symbol periods.
fn draw_symbols<R: Rng, T>(
    n: usize,
    symbol_rate_hz: f64,
    sample_rate_hz: f64,
    span: usize,
    rng: &mut R,
    draw: impl Fn(&mut R) -> T,
) -> (Vec<T>, usize) {
    let body = (n as f64 * symbol_rate_hz / sample_rate_hz).ceil() as usize + 1;
    let count = body + 2 * span;
    ((0..count).map(|_| draw(rng)).collect(), span)
}

fn shaped_sum<T, A>(symbols: &[T], lead: usize, t: f64, pulse: &PulseTable, term: impl Fn(T, f64) -> A) -> A
where
    T: Copy,
    A: std::ops::Add<Output = A> + Default,
{
    // Symbol index m (relative to t = 0) contributes pulse(t - m - 0.5).
    let centre = t.floor() as i64;
    let span = pulse.span as i64;
    let mut acc = A::default();
    for m in (centre - span)..=(centre + span) {
        let k = m + lead as i64;
        if k < 0 || k as usize >= symbols.len() {
            continue;
        }
        acc = acc + term(symbols[k as usize], pulse.at(t - m as f64 - 0.5));
    }
    acc
}
