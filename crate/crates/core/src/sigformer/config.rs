use crate::scene::{Modulation, SamplingGrid};
use crate::{Error, Result};

/// Hyper-parameters of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    /// Encoders before the spectrum sensor.
    pub n_layers_ss: usize,
    /// Encoders shared by the modulation classifier and the demodulators.
    pub n_layers_demod: usize,
    pub n_band: usize,
    /// Constellation size of each modulation class.
    pub mod_orders: Vec<usize>,
    /// Slots `N` (the positional table has `N + 1` rows).
    pub slots: usize,
    /// Cosets `P`; the embedding reads `2P` features per slot.
    pub cosets: usize,
}

fn default_orders() -> Vec<usize> {
    Modulation::ALL.iter().map(|m| m.order()).collect()
}

impl ModelConfig {
    /// `d_model = 256`, 8 heads, `d_ff = 1024`, encoders split evenly
    /// between the two stages, on the 16-band grid with 8 cosets.
    pub fn standard(n_encoders: usize) -> Result<Self> {
        if n_encoders < 2 || n_encoders % 2 != 0 {
            return Err(Error::Config(format!(
                "encoder count {n_encoders} must be even and at least 2"
            )));
        }
        let grid = SamplingGrid::standard();
        Self::for_grid(&grid, 256, 8, 1024, n_encoders / 2, n_encoders / 2)
    }

    pub fn for_grid(
        grid: &SamplingGrid,
        d_model: usize,
        heads: usize,
        d_ff: usize,
        n_layers_ss: usize,
        n_layers_demod: usize,
    ) -> Result<Self> {
        let cfg = ModelConfig {
            d_model,
            heads,
            d_ff,
            n_layers_ss,
            n_layers_demod,
            n_band: grid.n_band,
            mod_orders: default_orders(),
            slots: grid.slots,
            cosets: grid.p(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Gradient-check size: `d_model = 16`, 2 heads, one encoder per stage,
    /// `N = 8`, four sub-bands and four cosets.
    pub fn tiny() -> Self {
        ModelConfig {
            d_model: 16,
            heads: 2,
            d_ff: 32,
            n_layers_ss: 1,
            n_layers_demod: 1,
            n_band: 4,
            mod_orders: default_orders(),
            slots: 8,
            cosets: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.d_model,
            self.heads,
            self.d_ff,
            self.n_layers_ss,
            self.n_layers_demod,
            self.n_band,
            self.slots,
            self.cosets,
        ];
        if positive.contains(&0) || self.mod_orders.is_empty() || self.mod_orders.contains(&0) {
            return Err(Error::Config("all sizes must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    pub fn n_mod(&self) -> usize {
        self.mod_orders.len()
    }

    pub fn m_max(&self) -> usize {
        self.mod_orders.iter().copied().max().unwrap_or(0)
    }

    /// Width of a padded demodulator output: `M_max + 1`.
    pub fn demod_classes(&self) -> usize {
        self.m_max() + 1
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn total_encoders(&self) -> usize {
        self.n_layers_ss + self.n_layers_demod
    }

    /// Residual scale `(2 N_layer)^{1/2}` of an encoder stack.
    pub fn deepnorm_alpha(n_layers: usize) -> f64 {
        (2.0 * n_layers as f64).sqrt()
    }

    pub fn encoder_param_count(&self) -> usize {
        let d = self.d_model;
        4 * (d * d + d) + (d * self.d_ff + self.d_ff) + (self.d_ff * d + d) + 4 * d
    }

    /// Number of learnable scalars.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let embed = 2 * self.cosets * d + d;
        let tokens = (self.slots + 1) * d + 2 * d + self.n_band * d;
        let heads = (d * self.n_band + self.n_band)
            + (d * self.n_mod() + self.n_mod())
            + self.mod_orders.iter().map(|m| d * (m + 1) + m + 1).sum::<usize>();
        embed + tokens + heads + self.total_encoders() * self.encoder_param_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_counts_match_reference() {
        for (enc, table) in [(4, 3.190e6), (6, 4.770e6), (8, 6.350e6), (10, 7.929e6)] {
            let n = ModelConfig::standard(enc).unwrap().param_count() as f64;
            assert!((n - table).abs() / table < 0.05, "{enc}: {n}");
        }
    }

    #[test]
    fn encoder_count_by_hand() {
        // d = 256, d_ff = 1024: four biased projections, two FF layers, two norms
        let c = ModelConfig::standard(8).unwrap();
        assert_eq!(c.encoder_param_count(), 4 * 65_792 + 263_168 + 262_400 + 1024);
    }

    #[test]
    fn rejects_bad_heads() {
        let g = SamplingGrid::reduced();
        assert!(ModelConfig::for_grid(&g, 30, 4, 64, 1, 1).is_err());
        assert!(ModelConfig::standard(7).is_err());
    }
}
