//! `SUMW` checkpoints.
//!
//! ```text
//! "SUMW" u16:version u32:record count
//! record: u32 name length, UTF-8 name, u32 rank, rank x u32 dim,
//!         prod(dims) x f32
//! ```
//!
//! The first record, `config`, holds the model hyper-parameters as a rank-1
//! tensor: `d_model, heads, d_ff, n_layers_ss, n_layers_demod, n_band,
//! slots, cosets` followed by the constellation size of each class. The
//! remaining records are the parameter tensors under their
//! [`ModelParams::tensors`] names. Values are stored as `f32`, so saving
//! rounds parameters to single precision.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::codec::{Dec, Enc};
use crate::sigformer::{ModelConfig, ModelParams};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SUMW";
pub const CHECKPOINT_VERSION: u16 = 1;
pub const CONFIG_RECORD: &str = "config";

const MAX_ELEMS: usize = 1 << 30;

fn config_values(c: &ModelConfig) -> Vec<f64> {
    let mut v: Vec<f64> = [
        c.d_model,
        c.heads,
        c.d_ff,
        c.n_layers_ss,
        c.n_layers_demod,
        c.n_band,
        c.slots,
        c.cosets,
    ]
    .iter()
    .map(|&x| x as f64)
    .collect();
    v.extend(c.mod_orders.iter().map(|&m| m as f64));
    v
}

fn config_from_values(v: &[f64]) -> Result<ModelConfig> {
    if v.len() < 9 || v.iter().any(|x| x.fract() != 0.0 || *x < 0.0) {
        return Err(Error::Format("malformed config record".into()));
    }
    let u: Vec<usize> = v.iter().map(|&x| x as usize).collect();
    let cfg = ModelConfig {
        d_model: u[0],
        heads: u[1],
        d_ff: u[2],
        n_layers_ss: u[3],
        n_layers_demod: u[4],
        n_band: u[5],
        slots: u[6],
        cosets: u[7],
        mod_orders: u[8..].to_vec(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_record<W: Write>(e: &mut Enc<W>, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
    e.str(name)?;
    e.len(shape.len())?;
    for &d in shape {
        e.len(d)?;
    }
    for &x in data {
        e.f32(x as f32)?;
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(params: &ModelParams, w: W) -> Result<()> {
    let tensors = params.tensors();
    let mut e = Enc::new(w);
    e.bytes(CHECKPOINT_MAGIC)?;
    e.u16(CHECKPOINT_VERSION)?;
    e.len(tensors.len() + 1)?;
    let cfg = config_values(&params.config);
    write_record(&mut e, CONFIG_RECORD, &[cfg.len()], &cfg)?;
    for t in &tensors {
        write_record(&mut e, &t.name, &t.shape, t.data)?;
    }
    e.into_inner().flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<ModelParams> {
    let mut d = Dec::new(r);
    if &d.bytes(4)?[..] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a SUMW checkpoint".into()));
    }
    let version = d.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = d.len()?;
    let mut records = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name = d.str(1 << 16)?;
        let rank = d.bounded_len(8, "rank")?;
        let shape = (0..rank).map(|_| d.len()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &b| a.checked_mul(b))
            .filter(|&n| n <= MAX_ELEMS)
            .ok_or_else(|| Error::Format(format!("tensor {name} too large")))?;
        let data = (0..n)
            .map(|_| d.f32().map(f64::from))
            .collect::<Result<Vec<_>>>()?;
        records.push((name, shape, data));
    }
    d.expect_end()?;
    let cfg_rec = records
        .iter()
        .find(|(n, _, _)| n == CONFIG_RECORD)
        .ok_or_else(|| Error::Format("checkpoint has no config record".into()))?;
    let cfg = config_from_values(&cfg_rec.2)?;
    let mut params = ModelParams::zeros(&cfg);
    params.load_tensors(&records)?;
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(params, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_rounds_to_f32() {
        let p = ModelParams::init(&ModelConfig::tiny(), 4, 0.1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let q = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(q.config, p.config);
        for (a, b) in p.tensors().iter().zip(q.tensors()) {
            assert_eq!(a.name, b.name);
            for (x, y) in a.data.iter().zip(b.data) {
                assert_eq!(*y, *x as f32 as f64);
            }
        }
        let mut again = Vec::new();
        write_checkpoint(&q, &mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn config_record_comes_first() {
        let p = ModelParams::zeros(&ModelConfig::tiny());
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"SUMW");
        let count = u32::from_le_bytes(buf[6..10].try_into().unwrap()) as usize;
        assert_eq!(count, p.tensors().len() + 1);
        let name_len = u32::from_le_bytes(buf[10..14].try_into().unwrap()) as usize;
        assert_eq!(&buf[14..14 + name_len], CONFIG_RECORD.as_bytes());
    }

    #[test]
    fn damaged_files_are_rejected() {
        let p = ModelParams::zeros(&ModelConfig::tiny());
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_checkpoint(&extra[..]).is_err());
        assert!(read_checkpoint(&b"SUMS"[..]).is_err());
    }
}
