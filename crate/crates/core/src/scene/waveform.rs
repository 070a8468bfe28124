//! Narrowband waveform synthesis: SRRC single carrier and OFDM.
//!
//! All synthesis is frame-periodic: a frame of `N*L` Nyquist samples is one
//! period of the transmitted signal, so pulse tails wrap around the frame and
//! every carrier sits on an integer DFT bin. Each narrowband output is then
//! projected onto the DFT bins of its sub-band, which makes it strictly
//! confined to `1/(L*T)` of bandwidth.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::grid::SamplingGrid;
use super::modulation::Modulation;
use crate::dsp;
use crate::{Error, Result};

/// Half-span of the truncated SRRC pulse, in symbol intervals.
pub const SRRC_HALF_SPAN: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Waveform {
    SingleCarrier { symbol_rate: f64, rolloff: f64 },
    Ofdm { n_subcarriers: usize, subcarrier_spacing: f64 },
}

/// Coarse waveform grouping used when reporting BER curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WaveformFamily {
    /// Single carrier, roll-off in hundredths (5 or 25 on the standard menu).
    SingleCarrier { rolloff_pct: u32 },
    Ofdm,
}

impl std::fmt::Display for WaveformFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WaveformFamily::SingleCarrier { rolloff_pct } => {
                write!(f, "SC-{:.2}", *rolloff_pct as f64 / 100.0)
            }
            WaveformFamily::Ofdm => f.write_str("OFDM"),
        }
    }
}

impl Waveform {
    pub fn family(&self) -> WaveformFamily {
        match *self {
            Waveform::SingleCarrier { rolloff, .. } => WaveformFamily::SingleCarrier {
                rolloff_pct: (rolloff * 100.0).round() as u32,
            },
            Waveform::Ofdm { .. } => WaveformFamily::Ofdm,
        }
    }

    /// Two-sided occupied bandwidth in Hz.
    pub fn occupied_bandwidth(&self) -> f64 {
        match *self {
            Waveform::SingleCarrier {
                symbol_rate,
                rolloff,
            } => symbol_rate * (1.0 + rolloff),
            Waveform::Ofdm {
                n_subcarriers,
                subcarrier_spacing,
            } => n_subcarriers as f64 * subcarrier_spacing,
        }
    }

    /// Checks the waveform against the grid and returns how many symbols one
    /// frame carries.
    pub fn n_symbols(&self, grid: &SamplingGrid) -> Result<usize> {
        let width = grid.subband_width();
        match *self {
            Waveform::SingleCarrier {
                symbol_rate,
                rolloff,
            } => {
                if !(symbol_rate > 0.0 && (0.0..=1.0).contains(&rolloff)) {
                    return Err(Error::Waveform(format!(
                        "symbol rate {symbol_rate} / roll-off {rolloff} out of range"
                    )));
                }
                if self.occupied_bandwidth() > width * (1.0 + 1e-12) {
                    return Err(Error::Waveform(format!(
                        "symbol rate {symbol_rate} Hz with roll-off {rolloff} exceeds sub-band width {width} Hz"
                    )));
                }
                whole_count(grid.frame_duration() * symbol_rate, "symbols")
            }
            Waveform::Ofdm {
                n_subcarriers,
                subcarrier_spacing,
            } => {
                if n_subcarriers == 0 || subcarrier_spacing <= 0.0 {
                    return Err(Error::Waveform("empty OFDM symbol".into()));
                }
                if self.occupied_bandwidth() > width * (1.0 + 1e-12) {
                    return Err(Error::Waveform(format!(
                        "{n_subcarriers} subcarriers at {subcarrier_spacing} Hz exceed sub-band width {width} Hz"
                    )));
                }
                whole_count(grid.nyquist_rate() / subcarrier_spacing, "samples per OFDM block")?;
                let blocks = whole_count(grid.frame_duration() * subcarrier_spacing, "OFDM blocks")?;
                Ok(blocks * n_subcarriers)
            }
        }
    }
}

fn whole_count(x: f64, what: &str) -> Result<usize> {
    let n = x.round();
    if (x - n).abs() > 1e-6 || n < 1.0 {
        return Err(Error::Waveform(format!(
            "frame must hold a whole number of {what}, got {x}"
        )));
    }
    Ok(n as usize)
}

/// Square-root raised cosine pulse at `t` symbol intervals from its centre,
/// normalized to a unit peak and truncated outside `±SRRC_HALF_SPAN`.
pub fn srrc_pulse(t: f64, rolloff: f64) -> f64 {
    if t.abs() > SRRC_HALF_SPAN {
        return 0.0;
    }
    let b = rolloff;
    let peak = 1.0 - b + 4.0 * b / PI;
    let h = if t.abs() < 1e-12 {
        peak
    } else if b > 0.0 && (t.abs() - 1.0 / (4.0 * b)).abs() < 1e-9 {
        let a = PI / (4.0 * b);
        b / 2f64.sqrt() * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos())
    } else {
        let num = (PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos();
        let den = PI * t * (1.0 - (4.0 * b * t).powi(2));
        num / den
    };
    h / peak
}

/// Circular pulse shaping: symbol `i` is centred on sample `i * sps` and
/// pulse tails wrap around the `frame_len`-sample period.
pub fn shape_circular(
    points: &[Complex64],
    samples_per_symbol: f64,
    rolloff: f64,
    frame_len: usize,
) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); frame_len];
    let reach = SRRC_HALF_SPAN * samples_per_symbol;
    let n = frame_len as i64;
    for (i, &a) in points.iter().enumerate() {
        let centre = i as f64 * samples_per_symbol;
        let lo = (centre - reach).ceil() as i64;
        let hi = (centre + reach).floor() as i64;
        for t in lo..=hi {
            let p = srrc_pulse((t as f64 - centre) / samples_per_symbol, rolloff);
            out[t.rem_euclid(n) as usize] += a * p;
        }
    }
    out
}

/// The periodized SRRC pulse centred on sample `centre`, as used by the
/// matched filter.
pub fn periodic_pulse(centre: f64, samples_per_symbol: f64, rolloff: f64, frame_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; frame_len];
    let reach = SRRC_HALF_SPAN * samples_per_symbol;
    let n = frame_len as i64;
    let lo = (centre - reach).ceil() as i64;
    let hi = (centre + reach).floor() as i64;
    for t in lo..=hi {
        out[t.rem_euclid(n) as usize] += srrc_pulse((t as f64 - centre) / samples_per_symbol, rolloff);
    }
    out
}

/// Multiplies by `e^{i2π bin t / n}`.
pub fn mix(x: &mut [Complex64], bin: f64) {
    let n = x.len() as f64;
    for (t, v) in x.iter_mut().enumerate() {
        *v *= Complex64::from_polar(1.0, 2.0 * PI * bin * t as f64 / n);
    }
}

/// Zeroes every DFT bin outside sub-band `band`.
pub fn confine_to_subband(x: &mut [Complex64], grid: &SamplingGrid, band: usize) {
    dsp::fft(x);
    let lo = band * grid.slots;
    let hi = lo + grid.slots;
    for (q, v) in x.iter_mut().enumerate() {
        if q < lo || q >= hi {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    dsp::ifft(x);
}

/// Fraction of the energy of `x` lying in the DFT bins of sub-band `band`.
pub fn in_band_fraction(x: &[Complex64], grid: &SamplingGrid, band: usize) -> f64 {
    let mut spec = x.to_vec();
    dsp::fft(&mut spec);
    let total = dsp::energy(&spec);
    if total == 0.0 {
        return 1.0;
    }
    let lo = band * grid.slots;
    dsp::energy(&spec[lo..lo + grid.slots]) / total
}

fn check_symbols(symbols: &[usize], capacity: usize, modulation: Modulation) -> Result<Vec<Complex64>> {
    if symbols.len() > capacity {
        return Err(Error::Waveform(format!(
            "{} symbols do not fit in a frame of {capacity}",
            symbols.len()
        )));
    }
    let c = modulation.constellation();
    symbols.iter().map(|&s| c.point(s)).collect()
}

/// Unit-amplitude waveform before sub-band confinement, up-converted to the
/// carrier of `band`. Symbols beyond `symbols.len()` are silent.
pub(crate) fn raw_waveform(
    band: usize,
    waveform: &Waveform,
    modulation: Modulation,
    symbols: &[usize],
    grid: &SamplingGrid,
) -> Result<Vec<Complex64>> {
    grid.check_band(band)?;
    let capacity = waveform.n_symbols(grid)?;
    let points = check_symbols(symbols, capacity, modulation)?;
    let f = grid.frame_len();
    let mut x = match *waveform {
        Waveform::SingleCarrier {
            symbol_rate,
            rolloff,
        } => {
            let sps = grid.nyquist_rate() / symbol_rate;
            shape_circular(&points, sps, rolloff, f)
        }
        Waveform::Ofdm {
            n_subcarriers,
            subcarrier_spacing,
        } => {
            let block = (grid.nyquist_rate() / subcarrier_spacing).round() as usize;
            let scale = 1.0 / (n_subcarriers as f64).sqrt();
            let mut x = vec![Complex64::new(0.0, 0.0); f];
            for (i, a) in points.iter().enumerate() {
                let b = i / n_subcarriers;
                let offset = ofdm_subcarrier_offset(i % n_subcarriers, n_subcarriers);
                for t in b * block..(b + 1) * block {
                    let phase = 2.0 * PI * offset as f64 * (t - b * block) as f64 / block as f64;
                    x[t] += a * scale * Complex64::from_polar(1.0, phase);
                }
            }
            x
        }
    };
    mix(&mut x, grid.carrier_bin(band) as f64);
    Ok(x)
}

/// Subcarrier `s` of an `n`-subcarrier OFDM symbol sits `s - n/2` subcarrier
/// spacings from the carrier.
pub fn ofdm_subcarrier_offset(s: usize, n: usize) -> i64 {
    s as i64 - (n / 2) as i64
}

/// Unit-amplitude, sub-band-confined narrowband waveform.
pub fn unit_waveform(
    band: usize,
    waveform: &Waveform,
    modulation: Modulation,
    symbols: &[usize],
    grid: &SamplingGrid,
) -> Result<Vec<Complex64>> {
    let mut x = raw_waveform(band, waveform, modulation, symbols, grid)?;
    confine_to_subband(&mut x, grid, band);
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn srrc_closed_form_points() {
        // unit peak
        assert!((srrc_pulse(0.0, 0.25) - 1.0).abs() < 1e-15);
        // the t = 1/(4β) limit is continuous
        let b = 0.25;
        let s = 1.0 / (4.0 * b);
        let left = srrc_pulse(s - 1e-6, b);
        let mid = srrc_pulse(s, b);
        let right = srrc_pulse(s + 1e-6, b);
        assert!((left - mid).abs() < 1e-5 && (right - mid).abs() < 1e-5);
        // β = 0 reduces to sinc
        let t = 0.37;
        let sinc = (PI * t).sin() / (PI * t);
        assert!((srrc_pulse(t, 0.0) - sinc).abs() < 1e-12);
        assert_eq!(srrc_pulse(4.01, 0.05), 0.0);
    }

    #[test]
    fn single_symbol_is_the_pulse() {
        // one impulse among silent symbols, 100 samples per symbol, 1000-sample frame
        let mut pts = vec![Complex64::new(0.0, 0.0); 10];
        pts[0] = Complex64::new(1.0, 0.0);
        let x = shape_circular(&pts, 100.0, 0.25, 1000);
        for (t, v) in x.iter().enumerate() {
            let d = if t < 500 { t as f64 } else { t as f64 - 1000.0 };
            assert!((v.re - srrc_pulse(d / 100.0, 0.25)).abs() < 1e-12);
            assert_eq!(v.im, 0.0);
        }
        // matched filter peak normalizes to one
        let p = periodic_pulse(0.0, 100.0, 0.25, 1000);
        let ep: f64 = p.iter().map(|v| v * v).sum();
        let peak: f64 = x.iter().zip(&p).map(|(a, b)| a.re * b).sum::<f64>() / ep;
        assert!((peak - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_symbols_give_silence() {
        let g = SamplingGrid::standard();
        let w = Waveform::SingleCarrier {
            symbol_rate: 20e6,
            rolloff: 0.25,
        };
        let x = unit_waveform(3, &w, Modulation::Qpsk, &[], &g).unwrap();
        assert_eq!(x.len(), g.frame_len());
        assert!(x.iter().all(|v| v.norm() < 1e-15));
    }

    #[test]
    fn symbol_counts_on_standard_grid() {
        let g = SamplingGrid::standard();
        let sc = |r| Waveform::SingleCarrier {
            symbol_rate: r,
            rolloff: 0.05,
        };
        assert_eq!(sc(16e6).n_symbols(&g).unwrap(), 8);
        assert_eq!(sc(20e6).n_symbols(&g).unwrap(), 10);
        let ofdm = |n| Waveform::Ofdm {
            n_subcarriers: n,
            subcarrier_spacing: 2e6,
        };
        assert_eq!(ofdm(8).n_symbols(&g).unwrap(), 8);
        assert_eq!(ofdm(10).n_symbols(&g).unwrap(), 10);
    }

    #[test]
    fn rejects_wide_signals() {
        let g = SamplingGrid::standard();
        let sc = Waveform::SingleCarrier {
            symbol_rate: 50e6,
            rolloff: 0.25,
        };
        assert!(matches!(sc.n_symbols(&g), Err(Error::Waveform(_))));
        let ofdm = Waveform::Ofdm {
            n_subcarriers: 30,
            subcarrier_spacing: 2e6,
        };
        assert!(matches!(ofdm.n_symbols(&g), Err(Error::Waveform(_))));
    }

    #[test]
    fn single_subcarrier_is_a_tone() {
        let g = SamplingGrid::reduced();
        let w = Waveform::Ofdm {
            n_subcarriers: 1,
            subcarrier_spacing: 2e6,
        };
        // QPSK index 0 = e^{iπ/4}
        let x = unit_waveform(1, &w, Modulation::Qpsk, &[0], &g).unwrap();
        let f = g.frame_len() as f64;
        let bin = g.carrier_bin(1) as f64;
        let a = Complex64::from_polar(1.0, PI / 4.0);
        for (t, v) in x.iter().enumerate() {
            let e = a * Complex64::from_polar(1.0, 2.0 * PI * bin * t as f64 / f);
            assert!((v - e).norm() < 1e-9);
        }
    }

    #[test]
    fn ofdm_block_dft_recovers_points() {
        let g = SamplingGrid::standard();
        let w = Waveform::Ofdm {
            n_subcarriers: 10,
            subcarrier_spacing: 2e6,
        };
        let syms: Vec<usize> = (0..10).map(|i| (i * 7) % 16).collect();
        let x = unit_waveform(5, &w, Modulation::Qam16, &syms, &g).unwrap();
        // DFT oracle: subcarrier s lands on bin carrier + s - n/2
        let mut spec = x.clone();
        dsp::fft(&mut spec);
        let c = Modulation::Qam16.constellation();
        let scale = (10f64).sqrt() / g.frame_len() as f64;
        for (s, &sym) in syms.iter().enumerate() {
            let q = (g.carrier_bin(5) as i64 + ofdm_subcarrier_offset(s, 10)) as usize;
            assert!((spec[q] * scale - c.points[sym]).norm() < 1e-9);
        }
    }

    #[test]
    fn menu_waveforms_are_spectrally_confined() {
        let g = SamplingGrid::standard();
        let menu = [
            Waveform::SingleCarrier { symbol_rate: 16e6, rolloff: 0.05 },
            Waveform::SingleCarrier { symbol_rate: 16e6, rolloff: 0.25 },
            Waveform::SingleCarrier { symbol_rate: 20e6, rolloff: 0.05 },
            Waveform::SingleCarrier { symbol_rate: 20e6, rolloff: 0.25 },
            Waveform::Ofdm { n_subcarriers: 8, subcarrier_spacing: 2e6 },
            Waveform::Ofdm { n_subcarriers: 10, subcarrier_spacing: 2e6 },
        ];
        for w in menu {
            for m in Modulation::ALL {
                let n = w.n_symbols(&g).unwrap();
                let syms: Vec<usize> = (0..n).map(|i| (i * 5 + 3) % m.order()).collect();
                for band in [0, 7, 15] {
                    let raw = raw_waveform(band, &w, m, &syms, &g).unwrap();
                    let frac = in_band_fraction(&raw, &g, band);
                    assert!(frac >= 0.99, "{w:?} {m} band {band}: {frac}");
                    let confined = unit_waveform(band, &w, m, &syms, &g).unwrap();
                    assert!((in_band_fraction(&confined, &g, band) - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
