//! Receiver interfaces and the concrete pipelines evaluated by the harness.

use super::dataset::FrameRecord;
use crate::csrecover::{
    classical_demod, ls_recover_oracle, somp_optimum, somp_path, threshold_grid, RecoveredBand,
    SompConfig, somp_sense,
};
use crate::sampling::subband_spectra;
use crate::scene::NarrowbandSpec;
use crate::sigformer::{
    analyze_band, backbone_features, forward_full, sense_spectrum, Guide, ModSelector,
    ModelParams,
};
use crate::{Error, Result};

/// Predicts which sub-bands are occupied.
pub trait SpectrumSensor {
    fn sense(&self, rec: &FrameRecord) -> Result<Vec<bool>>;
}

/// Predicts a modulation class for each listed band.
pub trait ModulationClassifier {
    fn classify(&self, rec: &FrameRecord, bands: &[usize]) -> Result<Vec<usize>>;
}

/// What a demodulator is told about one band.
#[derive(Debug, Clone, Copy)]
pub struct DemodRequest<'a> {
    pub band: usize,
    /// Modulation class to demodulate with.
    pub modulation: usize,
    /// Bands believed occupied in the frame.
    pub occupied: &'a [usize],
    /// Symbol count, when known.
    pub length: Option<usize>,
    /// Full ground truth of the band, when the protocol provides it.
    pub truth: Option<&'a NarrowbandSpec>,
}

pub trait Demodulator {
    fn demodulate(&self, rec: &FrameRecord, req: &DemodRequest<'_>) -> Result<Vec<usize>>;

    /// All requests of one frame; receivers override this to share per-frame work.
    fn demodulate_all(&self, rec: &FrameRecord, reqs: &[DemodRequest<'_>]) -> Result<Vec<Vec<usize>>> {
        reqs.iter().map(|r| self.demodulate(rec, r)).collect()
    }
}

/// SOMP with a fixed residual threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SompSensor {
    pub config: SompConfig,
}

impl SompSensor {
    /// The threshold with the best exact-match accuracy on `records`, and
    /// that accuracy.
    pub fn fit_optimum(records: &[FrameRecord], max_iters: usize) -> Result<(Self, f64)> {
        let first = records.first().ok_or(Error::EmptyDataset)?;
        let paths: Vec<_> = records.iter().map(|r| somp_path(&r.coset, max_iters)).collect();
        let truth: Vec<_> = records.iter().map(|r| r.occupancy()).collect();
        let (thr, acc) = somp_optimum(&paths, &truth, &threshold_grid());
        let config = SompConfig::new(max_iters.min(first.coset.grid.n_band), thr, &first.coset.grid)?;
        Ok((SompSensor { config }, acc))
    }
}

impl SpectrumSensor for SompSensor {
    fn sense(&self, rec: &FrameRecord) -> Result<Vec<bool>> {
        Ok(somp_sense(&rec.coset, &self.config)?.occupancy(rec.coset.grid.n_band))
    }
}

fn side_information<'a>(req: &DemodRequest<'a>) -> Result<&'a NarrowbandSpec> {
    req.truth.ok_or_else(|| {
        Error::Config("classical receivers need waveform, modulation and length".into())
    })
}

/// Least squares on the sub-Nyquist samples over the occupied bands, then the
/// matched-filter receiver.
#[derive(Debug, Clone, Copy, Default)]
pub struct SompReceiver;

fn demod_from(bands: &[RecoveredBand], rec: &FrameRecord, req: &DemodRequest<'_>) -> Result<Vec<usize>> {
    let truth = side_information(req)?;
    let band = bands
        .iter()
        .find(|b| b.band_index == req.band)
        .ok_or_else(|| Error::Config(format!("band {} not in the occupied set", req.band)))?;
    classical_demod(band, truth, &rec.scene.grid)
}

impl Demodulator for SompReceiver {
    fn demodulate(&self, rec: &FrameRecord, req: &DemodRequest<'_>) -> Result<Vec<usize>> {
        side_information(req)?;
        demod_from(&ls_recover_oracle(&rec.coset, req.occupied)?, rec, req)
    }

    fn demodulate_all(&self, rec: &FrameRecord, reqs: &[DemodRequest<'_>]) -> Result<Vec<Vec<usize>>> {
        let Some(first) = reqs.first() else {
            return Ok(Vec::new());
        };
        side_information(first)?;
        let bands = ls_recover_oracle(&rec.coset, first.occupied)?;
        reqs.iter()
            .map(|r| {
                if r.occupied != first.occupied {
                    return self.demodulate(rec, r);
                }
                demod_from(&bands, rec, r)
            })
            .collect()
    }
}

/// Ideal band-pass filtering of the noisy Nyquist-rate frame, then the
/// matched-filter receiver.
#[derive(Debug, Clone, Copy, Default)]
pub struct NyquistReceiver;

impl Demodulator for NyquistReceiver {
    fn demodulate(&self, rec: &FrameRecord, req: &DemodRequest<'_>) -> Result<Vec<usize>> {
        Ok(self.demodulate_all(rec, std::slice::from_ref(req))?.remove(0))
    }

    fn demodulate_all(&self, rec: &FrameRecord, reqs: &[DemodRequest<'_>]) -> Result<Vec<Vec<usize>>> {
        let grid = &rec.scene.grid;
        for r in reqs {
            side_information(r)?;
            grid.check_band(r.band)?;
        }
        if reqs.is_empty() {
            return Ok(Vec::new());
        }
        let z = subband_spectra(&rec.nyquist_frame()?, grid)?;
        reqs.iter()
            .map(|r| {
                let band = RecoveredBand::from_spectrum(r.band, z.row(r.band).iter().copied().collect());
                classical_demod(&band, side_information(r)?, grid)
            })
            .collect()
    }
}

/// The network used for every task.
#[derive(Debug, Clone)]
pub struct ModelPipeline {
    pub params: ModelParams,
}

impl SpectrumSensor for ModelPipeline {
    fn sense(&self, rec: &FrameRecord) -> Result<Vec<bool>> {
        Ok(sense_spectrum(&rec.coset, &self.params)?
            .into_iter()
            .map(|p| p > 0.5)
            .collect())
    }
}

impl ModulationClassifier for ModelPipeline {
    fn classify(&self, rec: &FrameRecord, bands: &[usize]) -> Result<Vec<usize>> {
        let t = forward_full(&rec.coset, &self.params, &Guide::occupancy(bands.to_vec()))?;
        Ok(t.bands.iter().map(|b| b.predicted_modulation()).collect())
    }
}

impl Demodulator for ModelPipeline {
    fn demodulate(&self, rec: &FrameRecord, req: &DemodRequest<'_>) -> Result<Vec<usize>> {
        Ok(self.demodulate_all(rec, std::slice::from_ref(req))?.remove(0))
    }

    fn demodulate_all(&self, rec: &FrameRecord, reqs: &[DemodRequest<'_>]) -> Result<Vec<Vec<usize>>> {
        if reqs.is_empty() {
            return Ok(Vec::new());
        }
        let f = backbone_features(&rec.coset, &self.params)?;
        reqs.iter()
            .map(|r| {
                let out = analyze_band(&f, r.band, &self.params, ModSelector::Given(r.modulation))?;
                Ok(match r.length {
                    Some(n) => out.symbols_with_length(n),
                    None => out.symbols(),
                })
            })
            .collect()
    }
}

/// Answers every question from the ground truth.
#[derive(Debug, Clone, Copy, Default)]
pub struct PerfectPipeline;

impl SpectrumSensor for PerfectPipeline {
    fn sense(&self, rec: &FrameRecord) -> Result<Vec<bool>> {
        Ok(rec.occupancy())
    }
}

impl ModulationClassifier for PerfectPipeline {
    fn classify(&self, rec: &FrameRecord, bands: &[usize]) -> Result<Vec<usize>> {
        Ok(bands
            .iter()
            .map(|&k| rec.scene.band(k).map_or(0, |b| b.modulation.index()))
            .collect())
    }
}

impl Demodulator for PerfectPipeline {
    fn demodulate(&self, rec: &FrameRecord, req: &DemodRequest<'_>) -> Result<Vec<usize>> {
        Ok(rec
            .scene
            .band(req.band)
            .map(|b| b.symbols.clone())
            .unwrap_or_default())
    }
}

/// Always predicts the same class.
#[derive(Debug, Clone, Copy)]
pub struct ConstantClassifier(pub usize);

impl ModulationClassifier for ConstantClassifier {
    fn classify(&self, _rec: &FrameRecord, bands: &[usize]) -> Result<Vec<usize>> {
        Ok(vec![self.0; bands.len()])
    }
}
