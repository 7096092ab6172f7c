use serde::{Deserialize, Serialize};

use crate::cfa::Task;
use crate::error::{Error, Result};

/// Hyper-parameters of the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Pyramid scales S; there are 2S−1 cells.
    pub scales: usize,
    /// SCEMs per cell.
    pub scems: Vec<usize>,
    /// Feature width per cell; the first and last equal the base width.
    pub channels: Vec<usize>,
    /// Attention window side M.
    pub window: usize,
    pub heads: usize,
    /// MLP expansion ratio r.
    pub expansion: usize,
    /// Squeeze-excitation reduction κ.
    pub se_reduction: usize,
    /// Kernel of the grouped deformable input convolution.
    pub deform_kernel: usize,
    /// Kernel of the channel-mixing convolution closing each cell's cascade.
    pub mix_kernel: usize,
    pub task: Task,
    pub use_deformable_input: bool,
    pub use_scem: bool,
    pub use_ltu: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            scales: 3,
            scems: vec![6, 3, 0, 3, 6],
            channels: vec![64, 192, 256, 192, 64],
            window: 8,
            heads: 8,
            expansion: 4,
            se_reduction: 16,
            deform_kernel: 3,
            mix_kernel: 1,
            task: Task::Demosaic,
            use_deformable_input: true,
            use_scem: true,
            use_ltu: true,
        }
    }
}

/// Names accepted by [`ModelConfig::preset`].
pub const PRESETS: [&str; 5] = ["default", "mfdp1", "mfdp2", "mfdp3", "tiny"];

impl ModelConfig {
    /// `default` is the full model; `mfdp1` drops the deformable input,
    /// `mfdp2` also replaces SCEMs by convolutions, `mfdp3` also replaces
    /// attention; `tiny` is a small desk-scale model.
    pub fn preset(name: &str) -> Result<Self> {
        let base = ModelConfig::default();
        Ok(match name {
            "default" => base,
            "mfdp1" => ModelConfig { use_deformable_input: false, ..base },
            "mfdp2" => ModelConfig {
                use_deformable_input: false,
                use_scem: false,
                channels: vec![72, 200, 256, 200, 72],
                ..base
            },
            "mfdp3" => ModelConfig {
                use_deformable_input: false,
                use_scem: false,
                use_ltu: false,
                channels: vec![80, 208, 256, 208, 80],
                ..base
            },
            "tiny" => ModelConfig {
                scems: vec![2, 1, 0, 1, 2],
                channels: vec![16, 32, 64, 32, 16],
                window: 4,
                heads: 4,
                ..base
            },
            other => {
                return Err(Error::config(
                    "preset",
                    format!("unknown preset `{other}` (expected one of {})", PRESETS.join(", ")),
                ))
            }
        })
    }

    pub fn cells(&self) -> usize {
        2 * self.scales - 1
    }

    /// Base feature width C.
    pub fn base_channels(&self) -> usize {
        self.channels[0]
    }

    /// Input channels of the packed stack: 4, or 8 with noise maps.
    pub fn input_channels(&self) -> usize {
        match self.task {
            Task::Demosaic => 4,
            Task::JointDenoise => 8,
        }
    }

    /// Packed-stack extents must be multiples of this; inputs are padded up.
    pub fn spatial_multiple(&self) -> usize {
        let down = 1 << (self.scales - 1);
        if self.use_ltu {
            self.window * down
        } else {
            down
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 {
            return Err(Error::config("scales", "must be at least 1"));
        }
        let cells = self.cells();
        if self.scems.len() != cells {
            return Err(Error::config("scems", format!("needs {cells} entries, has {}", self.scems.len())));
        }
        if self.channels.len() != cells {
            return Err(Error::config("channels", format!("needs {cells} entries, has {}", self.channels.len())));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(Error::config("channels", "widths must be positive"));
        }
        for i in 0..cells / 2 {
            if self.channels[i] != self.channels[cells - 1 - i] {
                return Err(Error::config(
                    "channels",
                    format!("must be symmetric: entry {i} is {} but entry {} is {}", self.channels[i], cells - 1 - i, self.channels[cells - 1 - i]),
                ));
            }
        }
        if self.use_ltu {
            if self.heads == 0 {
                return Err(Error::config("heads", "must be positive"));
            }
            if self.window == 0 {
                return Err(Error::config("window", "must be positive"));
            }
            if let Some(c) = self.channels.iter().find(|&&c| c % self.heads != 0) {
                return Err(Error::config("heads", format!("width {c} is not divisible by {} heads", self.heads)));
            }
        }
        if self.use_scem {
            if self.se_reduction == 0 {
                return Err(Error::config("se_reduction", "must be positive"));
            }
            if let Some(c) = self.channels.iter().find(|&&c| c % self.se_reduction != 0) {
                return Err(Error::config(
                    "se_reduction",
                    format!("width {c} is not divisible by {}", self.se_reduction),
                ));
            }
        }
        if self.expansion == 0 {
            return Err(Error::config("expansion", "must be positive"));
        }
        if self.deform_kernel % 2 == 0 {
            return Err(Error::config("deform_kernel", "must be odd"));
        }
        if self.mix_kernel % 2 == 0 {
            return Err(Error::config("mix_kernel", "must be odd"));
        }
        if self.use_deformable_input && self.base_channels() % 4 != 0 {
            return Err(Error::config("channels", "base width must be divisible by the 4 spectral groups"));
        }
        Ok(())
    }
}
