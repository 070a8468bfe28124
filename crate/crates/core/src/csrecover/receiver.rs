//! Classical receivers fed with full side information: known band, waveform,
//! modulation and symbol count.

use std::f64::consts::{PI, SQRT_2};

use super::RecoveredBand;
use crate::dsp;
use crate::scene::{srrc_pulse, NarrowbandSpec, SamplingGrid, Waveform, SRRC_HALF_SPAN};
use crate::scene::ofdm_subcarrier_offset;
use crate::{Complex64, Result};

/// Nyquist-rate complex baseband of sub-band `band`, carrier removed, from
/// its `N` spectrum coefficients.
pub fn nyquist_band(spectrum: &[Complex64], grid: &SamplingGrid, band: usize) -> Vec<Complex64> {
    let n = grid.slots;
    let len = grid.frame_len();
    let c0 = (grid.carrier_bin(band) - band * n) as i64;
    let l = grid.decimation as f64;
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for (m, &z) in spectrum.iter().enumerate() {
        let bin = (m as i64 - c0).rem_euclid(len as i64) as usize;
        buf[bin] = z * l;
    }
    dsp::ifft(&mut buf);
    buf
}

fn sc_pulse_energy(sps: f64, rolloff: f64) -> f64 {
    let reach = (SRRC_HALF_SPAN * sps).floor() as i64;
    (-reach..=reach)
        .map(|t| srrc_pulse(t as f64 / sps, rolloff).powi(2))
        .sum()
}

fn ofdm_block(grid: &SamplingGrid, spacing: f64) -> usize {
    (grid.nyquist_rate() / spacing).round() as usize
}

/// Matched-filter / block-DFT receiver with minimum-distance decisions.
/// Produces exactly `truth.symbols.len()` decisions.
pub fn classical_demod(
    band: &RecoveredBand,
    truth: &NarrowbandSpec,
    grid: &SamplingGrid,
) -> Result<Vec<usize>> {
    let b = nyquist_band(&band.spectrum, grid, band.band_index);
    let c = truth.modulation.constellation();
    let amp = if truth.amplitude > 0.0 { truth.amplitude } else { 1.0 };
    let n_sym = truth.symbols.len();
    let len = b.len() as i64;
    let decisions = match truth.waveform {
        Waveform::SingleCarrier {
            symbol_rate,
            rolloff,
        } => {
            let sps = grid.nyquist_rate() / symbol_rate;
            let reach = SRRC_HALF_SPAN * sps;
            (0..n_sym)
                .map(|i| {
                    let centre = i as f64 * sps;
                    let lo = (centre - reach).ceil() as i64;
                    let hi = (centre + reach).floor() as i64;
                    let mut acc = Complex64::new(0.0, 0.0);
                    let mut ep = 0.0;
                    for t in lo..=hi {
                        let p = srrc_pulse((t as f64 - centre) / sps, rolloff);
                        acc += b[t.rem_euclid(len) as usize] * p;
                        ep += p * p;
                    }
                    c.decide(acc / (amp * ep))
                })
                .collect()
        }
        Waveform::Ofdm {
            n_subcarriers,
            subcarrier_spacing,
        } => {
            let block = ofdm_block(grid, subcarrier_spacing);
            let scale = 1.0 / (n_subcarriers as f64).sqrt();
            (0..n_sym)
                .map(|i| {
                    let blk = i / n_subcarriers;
                    let o = ofdm_subcarrier_offset(i % n_subcarriers, n_subcarriers) as f64;
                    let mut acc = Complex64::new(0.0, 0.0);
                    for t in 0..block {
                        let w = Complex64::from_polar(1.0, -2.0 * PI * o * t as f64 / block as f64);
                        acc += b[blk * block + t] * w;
                    }
                    c.decide(acc / (block as f64 * scale * amp))
                })
                .collect()
        }
    };
    Ok(decisions)
}

/// Per-bit SNR `E_b/N_0` at the output of [`classical_demod`] for a band of
/// `spec` in white noise of power `noise_power`.
pub fn matched_filter_snr(spec: &NarrowbandSpec, grid: &SamplingGrid, noise_power: f64) -> f64 {
    let es_n0 = match spec.waveform {
        Waveform::SingleCarrier {
            symbol_rate,
            rolloff,
        } => {
            let sps = grid.nyquist_rate() / symbol_rate;
            spec.amplitude.powi(2) * sc_pulse_energy(sps, rolloff) / noise_power
        }
        Waveform::Ofdm {
            n_subcarriers,
            subcarrier_spacing,
        } => {
            let block = ofdm_block(grid, subcarrier_spacing) as f64;
            spec.amplitude.powi(2) * block / (n_subcarriers as f64 * noise_power)
        }
    };
    es_n0 / spec.modulation.bits_per_symbol() as f64
}

/// Gaussian tail probability `Q(x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Gray-coded QPSK bit error rate at `E_b/N_0 = gamma`.
pub fn ber_qpsk_theory(gamma: f64) -> f64 {
    q_function((2.0 * gamma).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{multicoset_sample, subband_spectra};
    use crate::scene::{
        bits_from_symbols, synth_scene, Modulation, SceneGenerator, SceneSpec,
    };
    use crate::csrecover::ls_recover_oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn q_function_values() {
        assert!((q_function(0.0) - 0.5).abs() < 1e-15);
        // Q(1) and Q(3) from tables
        assert!((q_function(1.0) - 0.158_655_253_931_457).abs() < 1e-12);
        assert!((q_function(3.0) - 1.349_898_031_630_09e-3).abs() < 1e-12);
    }

    #[test]
    fn nyquist_band_of_a_clean_band_is_the_baseband_signal() {
        let g = SamplingGrid::standard();
        let spec = SceneGenerator::new(g.clone()).noise_free().generate(8).unwrap();
        let f = synth_scene(&spec).unwrap();
        let z = subband_spectra(&f, &g).unwrap();
        let b = &spec.bands[0];
        let row: Vec<Complex64> = z.row(b.band_index).iter().copied().collect();
        let base = nyquist_band(&row, &g, b.band_index);
        let mut expect = crate::scene::synth_narrowband(b, &g).unwrap().samples;
        crate::scene::mix(&mut expect, -(g.carrier_bin(b.band_index) as f64));
        for (u, v) in base.iter().zip(&expect) {
            assert!((u - v).norm() < 1e-9);
        }
    }

    #[test]
    fn noise_free_recovery_demodulates_exactly() {
        let g = SamplingGrid::standard();
        let gen = SceneGenerator::new(g.clone()).noise_free();
        for seed in 0..40 {
            let spec = gen.generate(seed).unwrap();
            let x = multicoset_sample(&synth_scene(&spec).unwrap(), &g).unwrap();
            let support: Vec<usize> = spec.bands.iter().map(|b| b.band_index).collect();
            let rec = ls_recover_oracle(&x, &support).unwrap();
            for (r, b) in rec.iter().zip(&spec.bands) {
                assert_eq!(classical_demod(r, b, &g).unwrap(), b.symbols, "seed {seed}");
            }
        }
    }

    #[test]
    fn qpsk_ber_follows_q_function() {
        let g = SamplingGrid::standard();
        let w = Waveform::SingleCarrier {
            symbol_rate: 20e6,
            rolloff: 0.25,
        };
        let n = w.n_symbols(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &snr in &[-17.0, -14.0] {
            let mut errors = 0usize;
            let mut bits = 0usize;
            let mut theory = 0.0;
            let mut frames = 0;
            while bits < 20_000 {
                let symbols: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
                let band = NarrowbandSpec::calibrated(3, w.clone(), Modulation::Qpsk, symbols, snr, 1.0, &g)
                    .unwrap();
                let spec = SceneSpec {
                    grid: g.clone(),
                    bands: vec![band.clone()],
                    noise_power: 1.0,
                    rng_seed: rng.random(),
                };
                let f = synth_scene(&spec).unwrap();
                let z = subband_spectra(&f, &g).unwrap();
                let r = RecoveredBand::from_spectrum(3, z.row(3).iter().copied().collect());
                let got = classical_demod(&r, &band, &g).unwrap();
                let tb = bits_from_symbols(&band.symbols, Modulation::Qpsk).unwrap();
                let gb = bits_from_symbols(&got, Modulation::Qpsk).unwrap();
                errors += tb.iter().zip(&gb).filter(|(a, b)| a != b).count();
                bits += tb.len();
                theory += ber_qpsk_theory(matched_filter_snr(&band, &g, 1.0));
                frames += 1;
            }
            let ber = errors as f64 / bits as f64;
            let th = theory / frames as f64;
            assert!(ber > th / 2.0 && ber < th * 2.0, "snr {snr}: {ber} vs {th}");
        }
    }
}
