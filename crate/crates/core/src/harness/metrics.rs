//! Counters, SNR binning and tab-separated report tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::scene::{Modulation, WaveformFamily};

pub const SNR_BIN_WIDTH: f64 = 2.5;
pub const SNR_BIN_START: f64 = -5.0;
pub const N_SNR_BINS: usize = 6;

/// Bin of an SNR in dB. Bins are 2.5 dB wide starting at -5 dB; the first
/// and last bins are open-ended.
pub fn snr_bin(snr_db: f64) -> usize {
    if snr_db.is_nan() {
        return 0;
    }
    let b = ((snr_db - SNR_BIN_START) / SNR_BIN_WIDTH).floor();
    b.clamp(0.0, (N_SNR_BINS - 1) as f64) as usize
}

/// `[lo, hi)` of a bin, with infinite outer edges.
pub fn snr_bin_edges(bin: usize) -> (f64, f64) {
    let lo = SNR_BIN_START + bin as f64 * SNR_BIN_WIDTH;
    let lo = if bin == 0 { f64::NEG_INFINITY } else { lo };
    let hi = if bin + 1 >= N_SNR_BINS {
        f64::INFINITY
    } else {
        SNR_BIN_START + (bin + 1) as f64 * SNR_BIN_WIDTH
    };
    (lo, hi)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub hits: usize,
    pub total: usize,
}

impl Tally {
    pub fn add(&mut self, hit: bool) {
        self.hits += hit as usize;
        self.total += 1;
    }

    /// `None` when nothing was counted.
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.hits as f64 / self.total as f64)
    }
}

/// Exact-match sensing accuracy, overall and per multiband-SNR bin.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingReport {
    pub overall: Tally,
    pub by_snr: Vec<Tally>,
    pub seconds_per_frame: f64,
}

impl SensingReport {
    pub fn new() -> Self {
        SensingReport {
            overall: Tally::default(),
            by_snr: vec![Tally::default(); N_SNR_BINS],
            seconds_per_frame: 0.0,
        }
    }

    pub fn add(&mut self, snr_db: f64, correct: bool) {
        self.overall.add(correct);
        self.by_snr[snr_bin(snr_db)].add(correct);
    }

    pub fn accuracy(&self) -> f64 {
        self.overall.rate().unwrap_or(0.0)
    }

    /// One row per non-empty bin.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("snr_lo\tsnr_hi\tframes\tcorrect\taccuracy\n");
        for (b, t) in self.by_snr.iter().enumerate() {
            if let Some(r) = t.rate() {
                let (lo, hi) = snr_bin_edges(b);
                let _ = writeln!(s, "{lo}\t{hi}\t{}\t{}\t{r:.4}", t.total, t.hits);
            }
        }
        s
    }
}

impl Default for SensingReport {
    fn default() -> Self {
        Self::new()
    }
}

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn support(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        let diag: usize = (0..self.classes()).map(|i| self.counts[i][i]).sum();
        (total > 0).then(|| diag as f64 / total as f64)
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn to_tsv(&self) -> String {
        let name = |i: usize| {
            Modulation::from_index(i)
                .map(|m| m.name().to_string())
                .unwrap_or_else(|_| i.to_string())
        };
        let mut s = String::from("true");
        for c in 0..self.classes() {
            let _ = write!(s, "\t{}", name(c));
        }
        s.push('\n');
        for (t, row) in self.counts.iter().enumerate() {
            s.push_str(&name(t));
            for v in row {
                let _ = write!(s, "\t{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Modulation classification over bands that reached the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationReport {
    pub confusion: ConfusionMatrix,
    /// Confusion per per-band SNR bin.
    pub by_snr: Vec<ConfusionMatrix>,
    /// Frames left out because sensing was wrong.
    pub skipped_frames: usize,
    pub seconds_per_frame: f64,
}

impl ModulationReport {
    pub fn new(classes: usize) -> Self {
        ModulationReport {
            confusion: ConfusionMatrix::new(classes),
            by_snr: vec![ConfusionMatrix::new(classes); N_SNR_BINS],
            skipped_frames: 0,
            seconds_per_frame: 0.0,
        }
    }

    pub fn add(&mut self, snr_db: f64, truth: usize, predicted: usize) {
        self.confusion.add(truth, predicted);
        self.by_snr[snr_bin(snr_db)].add(truth, predicted);
    }

    pub fn accuracy(&self) -> f64 {
        self.confusion.accuracy().unwrap_or(0.0)
    }

    pub fn accuracy_tsv(&self) -> String {
        let mut s = String::from("snr_lo\tsnr_hi\tbands\taccuracy\n");
        for (b, c) in self.by_snr.iter().enumerate() {
            if let Some(r) = c.accuracy() {
                let (lo, hi) = snr_bin_edges(b);
                let _ = writeln!(s, "{lo}\t{hi}\t{}\t{r:.4}", c.total());
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BerKey {
    pub modulation: usize,
    pub family: WaveformFamily,
    pub bin: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BitCount {
    pub errors: usize,
    pub bits: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerPoint {
    pub key: BerKey,
    pub count: BitCount,
    /// `None` when no error was observed; such points are left out of tables.
    pub ber: Option<f64>,
}

/// Bit error counts per (modulation, waveform family, per-band SNR bin).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BerReport {
    pub cells: BTreeMap<BerKey, BitCount>,
    pub seconds_per_frame: f64,
}

impl BerReport {
    pub fn add(&mut self, key: BerKey, errors: usize, bits: usize) {
        let c = self.cells.entry(key).or_default();
        c.errors += errors;
        c.bits += bits;
    }

    pub fn totals(&self) -> BitCount {
        self.cells.values().fold(BitCount::default(), |a, c| BitCount {
            errors: a.errors + c.errors,
            bits: a.bits + c.bits,
        })
    }

    pub fn points(&self) -> Vec<BerPoint> {
        self.cells
            .iter()
            .map(|(&key, &count)| BerPoint {
                key,
                count,
                ber: (count.errors > 0 && count.bits > 0)
                    .then(|| count.errors as f64 / count.bits as f64),
            })
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("modulation\twaveform\tsnr_lo\tsnr_hi\tbits\terrors\tber\n");
        for p in self.points() {
            let Some(ber) = p.ber else { continue };
            let (lo, hi) = snr_bin_edges(p.key.bin);
            let m = Modulation::from_index(p.key.modulation)
                .map(|m| m.name())
                .unwrap_or("?");
            let _ = writeln!(
                s,
                "{m}\t{}\t{lo}\t{hi}\t{}\t{}\t{ber:.6e}",
                p.key.family, p.count.bits, p.count.errors
            );
        }
        s
    }
}

/// Headline numbers of one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub ss_exact_match: f64,
    pub mod_confusion: Vec<Vec<usize>>,
    pub ber: Vec<BerPoint>,
    /// Mean inference wall time per frame across the three evaluations.
    pub timing: f64,
}

impl MetricsReport {
    pub fn from_parts(s: &SensingReport, m: &ModulationReport, b: &BerReport) -> Self {
        MetricsReport {
            ss_exact_match: s.accuracy(),
            mod_confusion: m.confusion.counts.clone(),
            ber: b.points(),
            timing: (s.seconds_per_frame + m.seconds_per_frame + b.seconds_per_frame) / 3.0,
        }
    }

    pub fn to_tsv(&self) -> String {
        let correct: usize = (0..self.mod_confusion.len()).map(|i| self.mod_confusion[i][i]).sum();
        let total: usize = self.mod_confusion.iter().flatten().sum();
        let (errors, bits) = self
            .ber
            .iter()
            .fold((0, 0), |(e, b), p| (e + p.count.errors, b + p.count.bits));
        let mod_acc = if total > 0 { correct as f64 / total as f64 } else { 0.0 };
        let ber = if bits > 0 { errors as f64 / bits as f64 } else { 0.0 };
        format!(
            "ss_exact_match\tmod_accuracy\tber\tseconds_per_frame\n{:.4}\t{:.4}\t{:.6e}\t{:.3e}\n",
            self.ss_exact_match, mod_acc, ber, self.timing
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_cover_the_line() {
        assert_eq!(snr_bin(-40.0), 0);
        assert_eq!(snr_bin(-5.0), 0);
        assert_eq!(snr_bin(-2.5), 1);
        assert_eq!(snr_bin(0.0), 2);
        assert_eq!(snr_bin(9.99), 5);
        assert_eq!(snr_bin(f64::INFINITY), 5);
        for b in 0..N_SNR_BINS {
            let (lo, hi) = snr_bin_edges(b);
            assert!(lo < hi);
            if lo.is_finite() {
                assert_eq!(snr_bin(lo), b);
            }
        }
    }

    #[test]
    fn confusion_rows_sum_to_support() {
        let mut c = ConfusionMatrix::new(4);
        for (t, p) in [(0, 0), (1, 2), (2, 2), (2, 1), (3, 3)] {
            c.add(t, p);
        }
        assert_eq!(c.support(2), 2);
        assert_eq!(c.total(), 5);
        assert_eq!(c.accuracy(), Some(0.6));
        assert_eq!(c.to_tsv().lines().count(), 5);
    }

    #[test]
    fn zero_error_points_are_omitted() {
        let key = |bin| BerKey {
            modulation: 0,
            family: WaveformFamily::Ofdm,
            bin,
        };
        let mut r = BerReport::default();
        r.add(key(1), 0, 100);
        r.add(key(2), 3, 100);
        assert_eq!(r.points()[0].ber, None);
        assert_eq!(r.points()[1].ber, Some(0.03));
        let tsv = r.to_tsv();
        assert_eq!(tsv.lines().count(), 2);
        assert!(tsv.lines().nth(1).unwrap().starts_with("QPSK\tOFDM\t0\t2.5"));
    }
}
