//! Constellations and their Gray bit maps.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modulation {
    Qpsk,
    Psk8,
    Qam8,
    Qam16,
}

impl Modulation {
    pub const ALL: [Modulation; 4] = [
        Modulation::Qpsk,
        Modulation::Psk8,
        Modulation::Qam8,
        Modulation::Qam16,
    ];

    /// Number of constellation points `M_mod`.
    pub fn order(self) -> usize {
        match self {
            Modulation::Qpsk => 4,
            Modulation::Psk8 | Modulation::Qam8 => 8,
            Modulation::Qam16 => 16,
        }
    }

    pub fn bits_per_symbol(self) -> usize {
        self.order().trailing_zeros() as usize
    }

    /// Class index used by the classifier heads.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::UnknownScheme(index.to_string()))
    }

    pub fn name(self) -> &'static str {
        match self {
            Modulation::Qpsk => "QPSK",
            Modulation::Psk8 => "8PSK",
            Modulation::Qam8 => "8QAM",
            Modulation::Qam16 => "16QAM",
        }
    }

    pub fn constellation(self) -> Constellation {
        make_constellation(self)
    }
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "QPSK" => Ok(Modulation::Qpsk),
            "8PSK" | "PSK8" => Ok(Modulation::Psk8),
            "8QAM" | "QAM8" => Ok(Modulation::Qam8),
            "16QAM" | "QAM16" => Ok(Modulation::Qam16),
            _ => Err(Error::UnknownScheme(s.to_string())),
        }
    }
}

/// Unit-average-energy constellation; `labels[i]` is the Gray label of point `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    pub scheme: Modulation,
    pub points: Vec<Complex64>,
    pub labels: Vec<u32>,
}

fn gray(i: usize) -> u32 {
    (i ^ (i >> 1)) as u32
}

/// Builds the constellation of `scheme`.
///
/// * QPSK: `(±1 ± i)/√2`, point `i` at angle `π/4 + iπ/2`.
/// * 8PSK: `e^{i2πk/8}`.
/// * 8QAM: rectangular 4×2 grid `{±1, ±3} × {±1}`, scaled by `1/√6`.
/// * 16QAM: square grid `{±1, ±3}²`, scaled by `1/√10`.
///
/// QAM points are indexed row-major (`index = 4*q + i`), labels are the
/// concatenation of the Gray codes of the two axis levels.
pub fn make_constellation(scheme: Modulation) -> Constellation {
    let (points, labels): (Vec<Complex64>, Vec<u32>) = match scheme {
        Modulation::Qpsk => (0..4)
            .map(|k| {
                let p = Complex64::from_polar(1.0, PI / 4.0 + k as f64 * PI / 2.0);
                (p, gray(k))
            })
            .unzip(),
        Modulation::Psk8 => (0..8)
            .map(|k| (Complex64::from_polar(1.0, 2.0 * PI * k as f64 / 8.0), gray(k)))
            .unzip(),
        Modulation::Qam8 => {
            let levels = [-3.0, -1.0, 1.0, 3.0];
            let scale = 1.0 / 6f64.sqrt();
            (0..8)
                .map(|idx| {
                    let (q, i) = (idx / 4, idx % 4);
                    let im = if q == 0 { -1.0 } else { 1.0 };
                    let p = Complex64::new(levels[i], im) * scale;
                    (p, ((q as u32) << 2) | gray(i))
                })
                .unzip()
        }
        Modulation::Qam16 => {
            let levels = [-3.0, -1.0, 1.0, 3.0];
            let scale = 1.0 / 10f64.sqrt();
            (0..16)
                .map(|idx| {
                    let (q, i) = (idx / 4, idx % 4);
                    let p = Complex64::new(levels[i], levels[q]) * scale;
                    (p, (gray(q) << 2) | gray(i))
                })
                .unzip()
        }
    };
    Constellation {
        scheme,
        points,
        labels,
    }
}

impl Constellation {
    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn point(&self, index: usize) -> Result<Complex64> {
        self.points
            .get(index)
            .copied()
            .ok_or(Error::SymbolOutOfRange {
                index,
                order: self.order(),
            })
    }

    /// Minimum-Euclidean-distance decision.
    pub fn decide(&self, z: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (z - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub fn mean_energy(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.order() as f64
    }
}

/// Gray-maps constellation indices to bits, most significant bit first.
pub fn bits_from_symbols(symbols: &[usize], scheme: Modulation) -> Result<Vec<u8>> {
    let c = make_constellation(scheme);
    let k = scheme.bits_per_symbol();
    let mut bits = Vec::with_capacity(symbols.len() * k);
    for &s in symbols {
        let label = *c.labels.get(s).ok_or(Error::SymbolOutOfRange {
            index: s,
            order: c.order(),
        })?;
        for b in (0..k).rev() {
            bits.push(((label >> b) & 1) as u8);
        }
    }
    Ok(bits)
}

/// Inverse of [`bits_from_symbols`]; trailing bits that do not fill a symbol
/// are rejected.
pub fn symbols_from_bits(bits: &[u8], scheme: Modulation) -> Result<Vec<usize>> {
    let c = make_constellation(scheme);
    let k = scheme.bits_per_symbol();
    if bits.len() % k != 0 {
        return Err(Error::Shape(format!(
            "{} bits is not a multiple of {k}",
            bits.len()
        )));
    }
    let mut by_label = vec![0usize; c.order()];
    for (i, &l) in c.labels.iter().enumerate() {
        by_label[l as usize] = i;
    }
    Ok(bits
        .chunks(k)
        .map(|chunk| {
            let label = chunk.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize);
            by_label[label]
        })
        .collect())
}
