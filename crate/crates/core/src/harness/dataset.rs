//! Frame records and the `SUMS` dataset container.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "SUMS" u16:version
//! grid:   f64 bandwidth, u32 L, u32 P, P x u32 coset, u32 N, u32 n_band
//! record: u32 byte length, then
//!         u64 rng_seed, f64 noise_power, u32 band count, bands...,
//!         u8 has_nyquist [u32 len, len x (f32 re, f32 im)],
//!         N x P x (f32 re, f32 im)   row-major, slot by slot
//! band:   u32 index, u8 waveform tag (0 SC: f64 rate, f64 roll-off;
//!         1 OFDM: u32 subcarriers, f64 spacing), u8 modulation,
//!         f64 amplitude, f64 snr_db, u32 count, count x u8 symbol
//! ```
//!
//! Records end at end of file; there is no record count.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::codec::{Dec, Enc};
use crate::sampling::{drop_channels, multicoset_sample, CosetMatrix};
use crate::scene::{
    frame_seed, synth_scene, Modulation, NarrowbandSpec, NyquistFrame, SamplingGrid,
    SceneGenerator, SceneSpec, Waveform,
};
use crate::{Complex64, Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"SUMS";
pub const DATASET_VERSION: u16 = 1;

const MAX_LEN: usize = 1 << 28;

fn quantize(z: Complex64) -> Complex64 {
    Complex64::new(z.re as f32 as f64, z.im as f32 as f64)
}

/// One stored frame: ground truth plus its samples.
///
/// Samples are held at `f32` precision so that a record survives a file
/// round trip bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub scene: SceneSpec,
    pub nyquist: Option<NyquistFrame>,
    pub coset: CosetMatrix,
}

impl FrameRecord {
    pub fn from_scene(scene: SceneSpec, keep_nyquist: bool) -> Result<Self> {
        let frame = synth_scene(&scene)?;
        let mut coset = multicoset_sample(&frame, &scene.grid)?;
        coset.x.iter_mut().for_each(|z| *z = quantize(*z));
        let nyquist = keep_nyquist.then(|| NyquistFrame {
            samples: frame.samples.iter().map(|&z| quantize(z)).collect(),
        });
        Ok(FrameRecord {
            scene,
            nyquist,
            coset,
        })
    }

    /// Nyquist samples: the stored copy, or a fresh synthesis from the scene.
    pub fn nyquist_frame(&self) -> Result<NyquistFrame> {
        match &self.nyquist {
            Some(f) => Ok(f.clone()),
            None => synth_scene(&self.scene),
        }
    }

    pub fn occupancy(&self) -> Vec<bool> {
        self.scene.occupancy()
    }

    /// Multiband SNR in dB, `-inf` for empty scenes and `+inf` without noise.
    pub fn snr_db(&self) -> f64 {
        self.scene.multiband_snr_db()
    }

    /// Keeps only the cosets at positions `keep`.
    pub fn with_channels(&self, keep: &[usize]) -> Result<Self> {
        let coset = drop_channels(&self.coset, keep)?;
        let mut scene = self.scene.clone();
        scene.grid = coset.grid.clone();
        Ok(FrameRecord {
            scene,
            nyquist: self.nyquist.clone(),
            coset,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub grid: SamplingGrid,
    pub records: Vec<FrameRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn with_channels(&self, keep: &[usize]) -> Result<Self> {
        Ok(Dataset {
            grid: self.grid.with_channels(keep)?,
            records: self
                .records
                .iter()
                .map(|r| r.with_channels(keep))
                .collect::<Result<_>>()?,
        })
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut e = Enc::new(w);
        e.bytes(DATASET_MAGIC)?;
        e.u16(DATASET_VERSION)?;
        write_grid(&mut e, &self.grid)?;
        for r in &self.records {
            if r.scene.grid != self.grid || r.coset.grid != self.grid {
                return Err(Error::Format("record grid differs from dataset grid".into()));
            }
            let mut buf = Enc::new(Vec::new());
            write_record(&mut buf, r)?;
            let buf = buf.into_inner();
            e.len(buf.len())?;
            e.bytes(&buf)?;
        }
        e.into_inner().flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut d = Dec::new(r);
        if &d.bytes(4)?[..] != DATASET_MAGIC {
            return Err(Error::Format("not a SUMS dataset".into()));
        }
        let version = d.u16()?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let grid = read_grid(&mut d)?;
        let mut records = Vec::new();
        while let Some(n) = d.u32_or_eof()? {
            let n = n as usize;
            if n > MAX_LEN {
                return Err(Error::Format(format!("record length {n}")));
            }
            let body = d.bytes(n)?;
            let mut rd = Dec::new(&body[..]);
            records.push(read_record(&mut rd, &grid)?);
            rd.expect_end()?;
        }
        Ok(Dataset { grid, records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn write_grid<W: Write>(e: &mut Enc<W>, g: &SamplingGrid) -> Result<()> {
    e.f64(g.bandwidth)?;
    e.len(g.decimation)?;
    e.len(g.cosets.len())?;
    for &c in &g.cosets {
        e.len(c)?;
    }
    e.len(g.slots)?;
    e.len(g.n_band)
}

fn read_grid<R: Read>(d: &mut Dec<R>) -> Result<SamplingGrid> {
    let bandwidth = d.f64()?;
    let decimation = d.len()?;
    let p = d.bounded_len(1 << 16, "coset list")?;
    let cosets = (0..p).map(|_| d.len()).collect::<Result<Vec<_>>>()?;
    let slots = d.len()?;
    let n_band = d.len()?;
    SamplingGrid::new(bandwidth, decimation, cosets, slots, n_band)
}

fn write_complex<W: Write>(e: &mut Enc<W>, z: Complex64) -> Result<()> {
    e.f32(z.re as f32)?;
    e.f32(z.im as f32)
}

fn read_complex<R: Read>(d: &mut Dec<R>) -> Result<Complex64> {
    let re = d.f32()? as f64;
    let im = d.f32()? as f64;
    Ok(Complex64::new(re, im))
}

fn write_record<W: Write>(e: &mut Enc<W>, r: &FrameRecord) -> Result<()> {
    let s = &r.scene;
    e.u64(s.rng_seed)?;
    e.f64(s.noise_power)?;
    e.len(s.bands.len())?;
    for b in &s.bands {
        e.len(b.band_index)?;
        match b.waveform {
            Waveform::SingleCarrier {
                symbol_rate,
                rolloff,
            } => {
                e.u8(0)?;
                e.f64(symbol_rate)?;
                e.f64(rolloff)?;
            }
            Waveform::Ofdm {
                n_subcarriers,
                subcarrier_spacing,
            } => {
                e.u8(1)?;
                e.len(n_subcarriers)?;
                e.f64(subcarrier_spacing)?;
            }
        }
        e.u8(b.modulation.index() as u8)?;
        e.f64(b.amplitude)?;
        e.f64(b.snr_db)?;
        e.len(b.symbols.len())?;
        for &sym in &b.symbols {
            let v = u8::try_from(sym).map_err(|_| Error::SymbolOutOfRange {
                index: sym,
                order: b.modulation.order(),
            })?;
            e.u8(v)?;
        }
    }
    match &r.nyquist {
        Some(f) => {
            e.u8(1)?;
            e.len(f.len())?;
            for &z in &f.samples {
                write_complex(e, z)?;
            }
        }
        None => e.u8(0)?,
    }
    for i in 0..r.coset.slots() {
        for j in 0..r.coset.p() {
            write_complex(e, r.coset.x[(i, j)])?;
        }
    }
    Ok(())
}

fn read_record<R: Read>(d: &mut Dec<R>, grid: &SamplingGrid) -> Result<FrameRecord> {
    let rng_seed = d.u64()?;
    let noise_power = d.f64()?;
    let n_bands = d.bounded_len(grid.n_band, "band list")?;
    let mut bands = Vec::with_capacity(n_bands);
    for _ in 0..n_bands {
        let band_index = d.len()?;
        let waveform = match d.u8()? {
            0 => Waveform::SingleCarrier {
                symbol_rate: d.f64()?,
                rolloff: d.f64()?,
            },
            1 => Waveform::Ofdm {
                n_subcarriers: d.len()?,
                subcarrier_spacing: d.f64()?,
            },
            t => return Err(Error::Format(format!("waveform tag {t}"))),
        };
        let modulation = Modulation::from_index(d.u8()? as usize)?;
        let amplitude = d.f64()?;
        let snr_db = d.f64()?;
        let n = d.bounded_len(MAX_LEN, "symbol list")?;
        let symbols = (0..n)
            .map(|_| d.u8().map(usize::from))
            .collect::<Result<Vec<_>>>()?;
        bands.push(NarrowbandSpec {
            band_index,
            waveform,
            modulation,
            symbols,
            amplitude,
            snr_db,
        });
    }
    let scene = SceneSpec {
        grid: grid.clone(),
        bands,
        noise_power,
        rng_seed,
    };
    scene.validate()?;
    let nyquist = match d.u8()? {
        0 => None,
        1 => {
            let n = d.bounded_len(MAX_LEN, "Nyquist frame")?;
            if n != grid.frame_len() {
                return Err(Error::Format(format!(
                    "Nyquist frame of {n} samples, grid needs {}",
                    grid.frame_len()
                )));
            }
            let samples = (0..n).map(|_| read_complex(d)).collect::<Result<_>>()?;
            Some(NyquistFrame { samples })
        }
        t => return Err(Error::Format(format!("Nyquist flag {t}"))),
    };
    let mut x = DMatrix::zeros(grid.slots, grid.p());
    for i in 0..grid.slots {
        for j in 0..grid.p() {
            x[(i, j)] = read_complex(d)?;
        }
    }
    Ok(FrameRecord {
        scene,
        nyquist,
        coset: CosetMatrix::new(x, grid.clone())?,
    })
}

/// Frames `0..count` of `gen`, frame `i` seeded by `frame_seed(seed, i)`.
pub fn generate_records(
    gen: &SceneGenerator,
    count: usize,
    seed: u64,
    keep_nyquist: bool,
) -> Result<Vec<FrameRecord>> {
    (0..count as u64)
        .map(|i| FrameRecord::from_scene(gen.generate(frame_seed(seed, i))?, keep_nyquist))
        .collect()
}

/// Random dataset with per-band SNRs drawn uniformly from `snr_range` dB.
pub fn build_dataset(
    grid: &SamplingGrid,
    count: usize,
    seed: u64,
    snr_range: (f64, f64),
) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    let gen = SceneGenerator::new(grid.clone()).with_snr_range(snr_range.0, snr_range.1);
    build_dataset_with(&gen, count, seed, false)
}

pub fn build_dataset_with(
    gen: &SceneGenerator,
    count: usize,
    seed: u64,
    keep_nyquist: bool,
) -> Result<Dataset> {
    Ok(Dataset {
        grid: gen.grid.clone(),
        records: generate_records(gen, count, seed, keep_nyquist)?,
    })
}
