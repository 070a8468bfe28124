//! Simulated multi-coset front end.
//!
//! Branch `j` delays the Nyquist stream by `c_j` samples and decimates by `L`,
//! so `X[n, j] = r[n*L + c_j]`. In the frequency domain the branches see a
//! folded spectrum: with `Y` from [`coset_snapshots`] and `A` from
//! [`folding_matrix`], `Y = A Z` where row `k` of `Z` holds the `N` DFT
//! coefficients of sub-band `k` (see [`subband_spectra`]).

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::dsp;
use crate::scene::{NyquistFrame, SamplingGrid};
use crate::{Complex64, Error, Result};

/// `N x P` sub-Nyquist sample matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CosetMatrix {
    pub x: DMatrix<Complex64>,
    pub grid: SamplingGrid,
}

impl CosetMatrix {
    pub fn new(x: DMatrix<Complex64>, grid: SamplingGrid) -> Result<Self> {
        if x.nrows() != grid.slots || x.ncols() != grid.p() {
            return Err(Error::Shape(format!(
                "coset matrix is {}x{}, grid wants {}x{}",
                x.nrows(),
                x.ncols(),
                grid.slots,
                grid.p()
            )));
        }
        Ok(CosetMatrix { x, grid })
    }

    pub fn slots(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.x.iter().map(|v| v.norm_sqr()).sum()
    }
}

pub fn multicoset_sample(frame: &NyquistFrame, grid: &SamplingGrid) -> Result<CosetMatrix> {
    if frame.len() != grid.frame_len() {
        return Err(Error::Shape(format!(
            "frame has {} samples, grid wants {}",
            frame.len(),
            grid.frame_len()
        )));
    }
    let l = grid.decimation;
    let x = DMatrix::from_fn(grid.slots, grid.p(), |n, j| {
        frame.samples[n * l + grid.cosets[j]]
    });
    Ok(CosetMatrix {
        x,
        grid: grid.clone(),
    })
}

/// Keeps the columns at positions `keep`, in that order.
pub fn drop_channels(x: &CosetMatrix, keep: &[usize]) -> Result<CosetMatrix> {
    let grid = x.grid.with_channels(keep)?;
    let cols = DMatrix::from_fn(x.slots(), keep.len(), |n, j| x.x[(n, keep[j])]);
    Ok(CosetMatrix { x: cols, grid })
}

/// Frequency snapshots `Y[j, m] = e^{-i2π c_j m/(NL)} DFT_N(X[:, j])[m]`, `P x N`.
pub fn coset_snapshots(x: &CosetMatrix) -> DMatrix<Complex64> {
    let n = x.slots();
    let nl = (n * x.grid.decimation) as f64;
    let mut y = DMatrix::zeros(x.p(), n);
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..x.p() {
        for (i, v) in col.iter_mut().enumerate() {
            *v = x.x[(i, j)];
        }
        dsp::fft(&mut col);
        let c = x.grid.cosets[j] as f64;
        for (m, v) in col.iter().enumerate() {
            y[(j, m)] = v * Complex64::from_polar(1.0, -2.0 * PI * c * m as f64 / nl);
        }
    }
    y
}

/// Folding matrix `A[j, k] = e^{i2π c_j k/L}` over all `L` folding bins (`P x L`).
/// The monitored sub-bands are the first `n_band` columns.
pub fn folding_matrix(grid: &SamplingGrid) -> DMatrix<Complex64> {
    let l = grid.decimation as f64;
    DMatrix::from_fn(grid.p(), grid.decimation, |j, k| {
        Complex64::from_polar(1.0, 2.0 * PI * (grid.cosets[j] * k) as f64 / l)
    })
}

/// DFT oracle: `Z[k, m] = F[k*N + m] / L` with `F` the full frame DFT (`L x N`).
pub fn subband_spectra(frame: &NyquistFrame, grid: &SamplingGrid) -> Result<DMatrix<Complex64>> {
    if frame.len() != grid.frame_len() {
        return Err(Error::Shape(format!(
            "frame has {} samples, grid wants {}",
            frame.len(),
            grid.frame_len()
        )));
    }
    let mut f = frame.samples.clone();
    dsp::fft(&mut f);
    let n = grid.slots;
    let l = grid.decimation as f64;
    Ok(DMatrix::from_fn(grid.decimation, n, |k, m| f[k * n + m] / l))
}

/// Slot-rate content of one sub-band from its spectrum row: the band-filtered
/// Nyquist signal sampled at `t = n*L`.
pub fn slot_rate_signal(z_row: &[Complex64]) -> Vec<Complex64> {
    let mut b = z_row.to_vec();
    dsp::ifft(&mut b);
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{random_scene, synth_scene};

    fn ramp(len: usize) -> NyquistFrame {
        NyquistFrame {
            samples: (0..len)
                .map(|t| Complex64::new(t as f64, (t as f64 * 0.7).sin()))
                .collect(),
        }
    }

    #[test]
    fn nyquist_special_case_flattens() {
        let g = SamplingGrid::reduced().nyquist();
        let f = ramp(g.frame_len());
        let x = multicoset_sample(&f, &g).unwrap();
        let flat: Vec<Complex64> = (0..g.slots)
            .flat_map(|n| (0..g.p()).map(move |j| (n, j)))
            .map(|(n, j)| x.x[(n, j)])
            .collect();
        assert_eq!(flat, f.samples);
    }

    #[test]
    fn impulse_hits_one_entry() {
        let g = SamplingGrid::standard();
        let mut f = NyquistFrame::zeros(g.frame_len());
        f.samples[g.cosets[1]] = Complex64::new(1.0, 0.0);
        let x = multicoset_sample(&f, &g).unwrap();
        for n in 0..g.slots {
            for j in 0..g.p() {
                let e = if (n, j) == (0, 1) { 1.0 } else { 0.0 };
                assert_eq!(x.x[(n, j)], Complex64::new(e, 0.0));
            }
        }
    }

    #[test]
    fn adc_rate_is_50_msps() {
        let g = SamplingGrid::standard();
        assert!((g.nyquist_rate() / g.decimation as f64 - 50e6).abs() < 1e-6);
    }

    #[test]
    fn length_mismatch_rejected() {
        let g = SamplingGrid::standard();
        assert!(multicoset_sample(&NyquistFrame::zeros(999), &g).is_err());
    }

    #[test]
    fn drop_then_sample_matches_reduced_grid() {
        let g = SamplingGrid::standard();
        let f = synth_scene(&random_scene(&g, 11).unwrap()).unwrap();
        let x = multicoset_sample(&f, &g).unwrap();
        let all: Vec<usize> = (0..g.p()).collect();
        assert_eq!(drop_channels(&x, &all).unwrap(), x);
        let keep = [0, 1, 2, 3];
        let dropped = drop_channels(&x, &keep).unwrap();
        let direct = multicoset_sample(&f, &g.with_channels(&keep).unwrap()).unwrap();
        assert_eq!(dropped, direct);
        assert_eq!(dropped.p(), 4);
        assert!(matches!(drop_channels(&x, &[]), Err(Error::EmptyKeep)));
    }

    #[test]
    fn zero_input_zero_snapshots() {
        let g = SamplingGrid::standard();
        let x = multicoset_sample(&NyquistFrame::zeros(g.frame_len()), &g).unwrap();
        assert!(coset_snapshots(&x).iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn folding_identity_on_random_frames() {
        let g = SamplingGrid::standard();
        let a = folding_matrix(&g);
        for seed in 0..20 {
            let f = synth_scene(&random_scene(&g, seed).unwrap()).unwrap();
            let x = multicoset_sample(&f, &g).unwrap();
            let y = coset_snapshots(&x);
            let z = subband_spectra(&f, &g).unwrap();
            let err = (&y - &a * &z).norm() / y.norm();
            assert!(err < 1e-9, "seed {seed}: {err}");
        }
    }

    #[test]
    fn full_sampling_inverts_folding() {
        let g = SamplingGrid::new(200e6, 4, vec![0, 1, 2, 3], 25, 4).unwrap();
        let f = synth_scene(&random_scene(&g, 3).unwrap()).unwrap();
        let y = coset_snapshots(&multicoset_sample(&f, &g).unwrap());
        let a = folding_matrix(&g);
        let z = a.lu().solve(&y).unwrap();
        let oracle = subband_spectra(&f, &g).unwrap();
        assert!((&z - &oracle).norm() / oracle.norm() < 1e-9);
    }

    #[test]
    fn slot_rate_signal_is_filtered_frame_at_slots() {
        let g = SamplingGrid::standard();
        let spec = random_scene(&g, 21).unwrap();
        let f = synth_scene(&spec).unwrap();
        let z = subband_spectra(&f, &g).unwrap();
        let k = spec.bands[0].band_index;
        let row: Vec<Complex64> = z.row(k).iter().copied().collect();
        let b = slot_rate_signal(&row);
        let mut filtered = f.samples.clone();
        crate::scene::confine_to_subband(&mut filtered, &g, k);
        for (n, v) in b.iter().enumerate() {
            assert!((v - filtered[n * g.decimation]).norm() < 1e-9);
        }
    }

    #[test]
    fn energy_of_sampled_entries() {
        let g = SamplingGrid::standard();
        let f = synth_scene(&random_scene(&g, 4).unwrap()).unwrap();
        let x = multicoset_sample(&f, &g).unwrap();
        let mut expect = 0.0;
        // column-major, the storage order of the matrix
        for &c in &g.cosets {
            for n in 0..g.slots {
                expect += f.samples[n * g.decimation + c].norm_sqr();
            }
        }
        assert_eq!(x.frobenius_sq(), expect);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sampling_is_linear(
                a in -3.0f64..3.0,
                b in -3.0f64..3.0,
                seed in 0u64..1000,
            ) {
                let g = SamplingGrid::reduced();
                let len = g.frame_len();
                let f: Vec<Complex64> = (0..len)
                    .map(|t| Complex64::new(((t as u64 * 31 + seed) % 17) as f64, (t % 5) as f64))
                    .collect();
                let h: Vec<Complex64> = (0..len)
                    .map(|t| Complex64::new((t % 3) as f64, ((t as u64 + seed) % 7) as f64))
                    .collect();
                let mix = NyquistFrame {
                    samples: f.iter().zip(&h).map(|(u, v)| u * a + v * b).collect(),
                };
                let xf = multicoset_sample(&NyquistFrame { samples: f }, &g).unwrap();
                let xh = multicoset_sample(&NyquistFrame { samples: h }, &g).unwrap();
                let xm = multicoset_sample(&mix, &g).unwrap();
                let combo = xf.x * Complex64::new(a, 0.0) + xh.x * Complex64::new(b, 0.0);
                prop_assert!((xm.x - combo).norm() < 1e-12);
            }
        }
    }
}
