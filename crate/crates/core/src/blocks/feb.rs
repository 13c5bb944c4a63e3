use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::layers::Conv;
use crate::params::{Bound, Builder};

use super::BlockConfig;

/// Separate processing of the amplitude and phase spectra.
///
/// ```text
/// Za, Zp = |FFT(Z)|, arg FFT(Z)
/// Za' = ReLU(Conv1(ReLU(Conv1(Za))))
/// Zp' = ReLU(Conv3(ReLU(Conv3(Zp))))
/// out = Re(IFFT(Za' · e^{i Zp'})) + Z
/// ```
#[derive(Debug, Clone)]
pub struct Feb {
    pub amp: [Conv; 2],
    pub phase: [Conv; 2],
}

impl Feb {
    pub fn new(b: &mut Builder, name: &str, cfg: &BlockConfig) -> Result<Self> {
        let mut s = b.scope(name);
        let c = cfg.channels;
        Ok(Feb {
            amp: [
                Conv::new(&mut s, "amp0", c, c, 1)?,
                Conv::new(&mut s, "amp1", c, c, 1)?,
            ],
            phase: [
                Conv::new(&mut s, "phase0", c, c, 3)?,
                Conv::new(&mut s, "phase1", c, c, 3)?,
            ],
        })
    }

    fn chain(g: &Graph, p: &Bound, convs: &[Conv; 2], x: &Var) -> Result<Var> {
        let h = g.relu(&convs[0].forward(g, p, x)?)?;
        g.relu(&convs[1].forward(g, p, &h)?)
    }

    pub fn forward(&self, g: &Graph, p: &Bound, z: &Var) -> Result<Var> {
        let (amp, phase) = g.fft_polar(z)?;
        let amp = Self::chain(g, p, &self.amp, &amp)?;
        let phase = Self::chain(g, p, &self.phase, &phase)?;
        g.add(&g.ifft_polar_real(&amp, &phase)?, z)
    }
}
