//! Datasets, checkpoints, metrics and evaluation protocols.

mod checkpoint;
mod codec;
mod dataset;
mod metrics;
mod pipelines;

use std::time::Instant;

use crate::scene::{bits_from_symbols, Modulation};
use crate::{Error, Result};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION, CONFIG_RECORD,
};
pub use dataset::{
    build_dataset, build_dataset_with, generate_records, Dataset, FrameRecord, DATASET_MAGIC,
    DATASET_VERSION,
};
pub use metrics::{
    snr_bin, snr_bin_edges, BerKey, BerPoint, BerReport, BitCount, ConfusionMatrix,
    MetricsReport, ModulationReport, SensingReport, Tally, N_SNR_BINS, SNR_BIN_START,
    SNR_BIN_WIDTH,
};
pub use pipelines::{
    ConstantClassifier, DemodRequest, Demodulator, ModelPipeline, ModulationClassifier,
    NyquistReceiver, PerfectPipeline, SompReceiver, SompSensor, SpectrumSensor,
};

/// Side information handed to a demodulation pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleLevel {
    /// The pipeline senses, classifies and demodulates on its own.
    None,
    /// True occupancy is given.
    Occupancy,
    /// Occupancy, modulation, waveform and symbol count are given.
    Full,
}

fn occupied_indices(occ: &[bool]) -> Vec<usize> {
    occ.iter()
        .enumerate()
        .filter_map(|(k, &o)| o.then_some(k))
        .collect()
}

fn per_frame(total: f64, frames: usize) -> f64 {
    total / frames as f64
}

/// Exact-match accuracy binned by multiband SNR.
pub fn eval_sensing(sensor: &dyn SpectrumSensor, records: &[FrameRecord]) -> Result<SensingReport> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut report = SensingReport::new();
    let mut busy = 0.0;
    for r in records {
        let t = Instant::now();
        let occ = sensor.sense(r)?;
        busy += t.elapsed().as_secs_f64();
        report.add(r.snr_db(), occ == r.occupancy());
    }
    report.seconds_per_frame = per_frame(busy, records.len());
    Ok(report)
}

/// SOMP at its best threshold for `records`; returns the fitted sensor and
/// its report.
pub fn eval_somp_optimum(
    records: &[FrameRecord],
    max_iters: usize,
) -> Result<(SompSensor, SensingReport)> {
    let (sensor, _) = SompSensor::fit_optimum(records, max_iters)?;
    let report = eval_sensing(&sensor, records)?;
    Ok((sensor, report))
}

/// Confusion of the classifier over true bands. With a sensor, only frames
/// whose occupancy it predicts exactly are scored; without one, true
/// occupancy is given.
pub fn eval_modulation(
    sensor: Option<&dyn SpectrumSensor>,
    classifier: &dyn ModulationClassifier,
    records: &[FrameRecord],
) -> Result<ModulationReport> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut report = ModulationReport::new(Modulation::ALL.len());
    let mut busy = 0.0;
    for r in records {
        let truth = r.occupancy();
        let t = Instant::now();
        if let Some(s) = sensor {
            if s.sense(r)? != truth {
                busy += t.elapsed().as_secs_f64();
                report.skipped_frames += 1;
                continue;
            }
        }
        let bands = occupied_indices(&truth);
        let pred = classifier.classify(r, &bands)?;
        busy += t.elapsed().as_secs_f64();
        for (spec, &p) in r.scene.bands.iter().zip(&pred) {
            if p >= Modulation::ALL.len() {
                return Err(Error::Config(format!("classifier returned class {p}")));
            }
            report.add(spec.snr_db, spec.modulation.index(), p);
        }
    }
    report.seconds_per_frame = per_frame(busy, records.len());
    Ok(report)
}

fn decode_bits(symbols: &[usize], class: usize) -> Vec<u8> {
    let Ok(m) = Modulation::from_index(class) else {
        return Vec::new();
    };
    let clean: Vec<usize> = symbols.iter().map(|&s| if s < m.order() { s } else { 0 }).collect();
    bits_from_symbols(&clean, m).unwrap_or_default()
}

/// Bit errors per modulation, waveform family and per-band SNR bin.
///
/// Every true band contributes all of its bits. Bits of symbols the pipeline
/// did not produce (missed bands, early `[EOS]`) are read as 0; surplus
/// symbols are ignored.
pub fn eval_ber(
    sensor: Option<&dyn SpectrumSensor>,
    classifier: Option<&dyn ModulationClassifier>,
    demod: &dyn Demodulator,
    records: &[FrameRecord],
    level: OracleLevel,
) -> Result<BerReport> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut report = BerReport::default();
    let mut busy = 0.0;
    for r in records {
        let t = Instant::now();
        let occupied = match level {
            OracleLevel::None => {
                let s = sensor.ok_or_else(|| Error::Config("no spectrum sensor given".into()))?;
                occupied_indices(&s.sense(r)?)
            }
            _ => occupied_indices(&r.occupancy()),
        };
        let classes = match level {
            OracleLevel::Full => r.scene.bands.iter().map(|b| b.modulation.index()).collect(),
            _ => {
                let c = classifier.ok_or_else(|| Error::Config("no classifier given".into()))?;
                c.classify(r, &occupied)?
            }
        };
        let full = level == OracleLevel::Full;
        let mut reqs = Vec::new();
        let mut slot = Vec::with_capacity(r.scene.bands.len());
        for spec in &r.scene.bands {
            slot.push(occupied.iter().position(|&k| k == spec.band_index).map(|i| {
                reqs.push(DemodRequest {
                    band: spec.band_index,
                    modulation: classes[i],
                    occupied: &occupied,
                    length: full.then_some(spec.symbols.len()),
                    truth: full.then_some(spec),
                });
                reqs.len() - 1
            }));
        }
        let symbols = demod.demodulate_all(r, &reqs)?;
        let decoded: Vec<Vec<u8>> = slot
            .iter()
            .map(|s| s.map_or_else(Vec::new, |j| decode_bits(&symbols[j], reqs[j].modulation)))
            .collect();
        busy += t.elapsed().as_secs_f64();
        for (spec, got) in r.scene.bands.iter().zip(&decoded) {
            let want = bits_from_symbols(&spec.symbols, spec.modulation)?;
            let errors = want
                .iter()
                .enumerate()
                .filter(|&(i, &b)| got.get(i).copied().unwrap_or(0) != b)
                .count();
            let key = BerKey {
                modulation: spec.modulation.index(),
                family: spec.waveform.family(),
                bin: snr_bin(spec.snr_db),
            };
            report.add(key, errors, want.len());
        }
    }
    report.seconds_per_frame = per_frame(busy, records.len());
    Ok(report)
}

/// Sensing, classification (given true occupancy) and BER at `level` for
/// the network.
pub fn evaluate_model(
    model: &ModelPipeline,
    records: &[FrameRecord],
    level: OracleLevel,
) -> Result<MetricsReport> {
    let s = eval_sensing(model, records)?;
    let m = eval_modulation(None, model, records)?;
    let b = eval_ber(Some(model), Some(model), model, records, level)?;
    Ok(MetricsReport::from_parts(&s, &m, &b))
}
