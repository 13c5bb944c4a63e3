//! Feature blocks: mixed-scale scan (MMB), channel enhancement (CEB),
//! frequency enhancement (FEB), their normalized sum (SFMB), stacked groups
//! (SFMG) and the gated three-stream fusion block (DFMB).

mod ceb;
mod dfmb;
mod feb;
mod mmb;
mod sfmb;

pub use ceb::Ceb;
pub use dfmb::{Dfmb, DfmbStream};
pub use feb::Feb;
pub use mmb::Mmb;
pub use sfmb::{Sfmb, Sfmg};

use crate::error::{Error, Result};
use crate::ssm::DEFAULT_NSTATE;

/// Widths and switches shared by every block of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockConfig {
    pub channels: usize,
    /// Channel multiplier of the MMB scan stream.
    pub expansion: usize,
    /// Number of MMB pyramid levels, 1 to 3.
    pub scales: usize,
    pub nstate: usize,
    pub use_ceb: bool,
    pub use_feb: bool,
}

impl Default for BlockConfig {
    fn default() -> Self {
        BlockConfig {
            channels: 32,
            expansion: 2,
            scales: 3,
            nstate: DEFAULT_NSTATE,
            use_ceb: true,
            use_feb: true,
        }
    }
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels < 2 || self.channels % 2 != 0 {
            return Err(Error::Config(format!(
                "channels must be even and at least 2, got {}",
                self.channels
            )));
        }
        if !(1..=3).contains(&self.scales) {
            return Err(Error::Config(format!(
                "scales must be 1, 2 or 3, got {}",
                self.scales
            )));
        }
        if self.expansion == 0 || self.nstate == 0 {
            return Err(Error::Config(
                "expansion and nstate must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn expanded(&self) -> usize {
        self.channels * self.expansion
    }

    /// Spatial extents must be divisible by this.
    pub fn spatial_multiple(&self) -> usize {
        1 << (self.scales - 1)
    }
}

pub(crate) fn check_extent(shape: &[usize], multiple: usize) -> Result<()> {
    let (h, w) = (shape[2], shape[3]);
    if h % multiple != 0 || w % multiple != 0 {
        return Err(Error::dim(format!(
            "spatial extent {h}×{w} is not divisible by {multiple}"
        )));
    }
    Ok(())
}
