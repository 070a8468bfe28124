use crate::{Error, Result};

/// Default coset offsets for `L = 40`, `P = 8`.
///
/// Ordered so that every prefix used by the channel ablations (4, 6, 8) keeps
/// the folding dictionary over the 16 monitored sub-bands well conditioned.
pub const DEFAULT_COSETS: [usize; 8] = [0, 13, 15, 32, 4, 6, 11, 30];

/// Rate and size constants tying the multi-coset sampler to the sub-band layout.
///
/// The monitored spectrum is treated as complex baseband: Nyquist sample `t`
/// lives on a grid of `N * L` samples and sub-band `k` coincides with folding
/// bin `k`, i.e. DFT bins `k*N .. (k+1)*N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingGrid {
    /// Total monitored bandwidth `B` in Hz; the Nyquist interval is `1/(2B)`.
    pub bandwidth: f64,
    /// Ratio `L` between the ADC interval and the Nyquist interval.
    pub decimation: usize,
    /// Coset offsets `c_j`, one per simulated ADC.
    pub cosets: Vec<usize>,
    /// Slots per frame `N`.
    pub slots: usize,
    /// Number of monitored sub-bands.
    pub n_band: usize,
}

impl SamplingGrid {
    pub fn new(
        bandwidth: f64,
        decimation: usize,
        cosets: Vec<usize>,
        slots: usize,
        n_band: usize,
    ) -> Result<Self> {
        let grid = SamplingGrid {
            bandwidth,
            decimation,
            cosets,
            slots,
            n_band,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// 1 GHz of spectrum, 16 sub-bands of 50 MHz, eight 50 MSPS ADCs.
    pub fn standard() -> Self {
        Self::new(1e9, 40, DEFAULT_COSETS.to_vec(), 25, 16).expect("standard grid is valid")
    }

    /// Desk-scale grid: four 50 MHz sub-bands, `L = 8`, four cosets.
    pub fn reduced() -> Self {
        Self::new(200e6, 8, vec![0, 1, 3, 6], 25, 4).expect("reduced grid is valid")
    }

    /// Reduced grid cut to `N = 8` slots, matching the tiny model config.
    pub fn toy() -> Self {
        Self::new(200e6, 8, vec![0, 1, 3, 6], 8, 4).expect("toy grid is valid")
    }

    /// The Nyquist special case of this grid: `P = L`, cosets `0..L`.
    pub fn nyquist(&self) -> Self {
        SamplingGrid {
            cosets: (0..self.decimation).collect(),
            ..self.clone()
        }
    }

    /// Same grid restricted to the cosets at positions `keep`.
    pub fn with_channels(&self, keep: &[usize]) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::EmptyKeep);
        }
        let mut cosets = Vec::with_capacity(keep.len());
        for &j in keep {
            let c = *self.cosets.get(j).ok_or_else(|| {
                Error::InvalidGrid(format!("coset position {j} not in grid (P = {})", self.p()))
            })?;
            cosets.push(c);
        }
        Self::new(self.bandwidth, self.decimation, cosets, self.slots, self.n_band)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return Err(Error::InvalidGrid("bandwidth must be positive".into()));
        }
        if self.decimation == 0 || self.slots == 0 || self.n_band == 0 {
            return Err(Error::InvalidGrid("L, N and n_band must be positive".into()));
        }
        if self.cosets.is_empty() || self.cosets.len() > self.decimation {
            return Err(Error::InvalidGrid(format!(
                "need 1 <= P <= L, got P = {} and L = {}",
                self.cosets.len(),
                self.decimation
            )));
        }
        if self.n_band > self.decimation {
            return Err(Error::InvalidGrid(format!(
                "n_band = {} exceeds L = {}",
                self.n_band, self.decimation
            )));
        }
        for (j, &c) in self.cosets.iter().enumerate() {
            if c >= self.decimation {
                return Err(Error::InvalidGrid(format!("coset {c} >= L")));
            }
            if self.cosets[..j].contains(&c) {
                return Err(Error::InvalidGrid(format!("coset {c} repeated")));
            }
        }
        Ok(())
    }

    /// Number of cosets `P`.
    pub fn p(&self) -> usize {
        self.cosets.len()
    }

    /// Nyquist sampling interval `T = 1/(2B)` in seconds.
    pub fn nyquist_interval(&self) -> f64 {
        0.5 / self.bandwidth
    }

    pub fn nyquist_rate(&self) -> f64 {
        2.0 * self.bandwidth
    }

    /// Sub-band width `1/(L*T)` in Hz, which is also the per-ADC rate.
    pub fn subband_width(&self) -> f64 {
        self.nyquist_rate() / self.decimation as f64
    }

    /// Nyquist samples per frame, `N * L`.
    pub fn frame_len(&self) -> usize {
        self.slots * self.decimation
    }

    pub fn frame_duration(&self) -> f64 {
        self.frame_len() as f64 * self.nyquist_interval()
    }

    /// DFT bin spacing of one frame in Hz.
    pub fn bin_spacing(&self) -> f64 {
        1.0 / self.frame_duration()
    }

    /// DFT bin carrying the carrier of sub-band `band`.
    pub fn carrier_bin(&self, band: usize) -> usize {
        band * self.slots + self.slots / 2
    }

    /// Carrier frequency of sub-band `band` in the complex-baseband convention.
    pub fn carrier_frequency(&self, band: usize) -> f64 {
        self.carrier_bin(band) as f64 * self.bin_spacing()
    }

    /// Nominal sub-band centre in the real-passband labelling: the baseband
    /// reference is shifted by half a sub-band so that sub-band `k` is centred
    /// at `(k + 1) * width` (50 MHz .. 800 MHz on the standard grid).
    pub fn nominal_carrier(&self, band: usize) -> f64 {
        (band + 1) as f64 * self.subband_width()
    }

    pub fn check_band(&self, band: usize) -> Result<()> {
        if band >= self.n_band {
            return Err(Error::BandOutOfRange {
                band,
                n_band: self.n_band,
            });
        }
        Ok(())
    }
}
