use std::fmt;

use crate::discriminator::DiscriminatorConfig;
use crate::error::{config, Result};
use crate::generator::{ContextBlock, GeneratorConfig};
use crate::mrisim::{MaskKind, MaskSpec};
use crate::objectives::{AdversarialTerms, Convention, LossWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Windows per step.
    pub batch_size: usize,
    pub lr: f64,
    pub lr_halving_period: usize,
    pub early_stop_patience: usize,
    pub weights: LossWeights,
    pub mask: MaskKind,
    pub fraction: f64,
    /// Noise std as a fraction of the peak spectrum magnitude.
    pub noise: f64,
    pub n_slices: usize,
    pub outcomes: usize,
    pub width_multiplier: f64,
    pub lstm_channels: usize,
    pub image_size: usize,
    pub convention: Convention,
    pub seed: u64,
    pub max_epochs: usize,
    /// Hard cap on optimizer steps, for smoke runs.
    pub max_steps: Option<usize>,
    /// D updates per G update.
    pub d_steps: usize,
    pub void_threshold: f64,
    /// Validation windows per Eval-mode forward.
    pub eval_chunk: usize,
}

impl Default for TrainConfig {
    /// Desk scale.
    fn default() -> Self {
        Self {
            batch_size: 4,
            lr: 3e-4,
            lr_halving_period: 5,
            early_stop_patience: 50,
            weights: LossWeights::default(),
            mask: MaskKind::G1D,
            fraction: 0.3,
            noise: 0.0,
            n_slices: 5,
            outcomes: 10,
            width_multiplier: 0.125,
            lstm_channels: 8,
            image_size: 64,
            convention: Convention::Realness,
            seed: 0,
            max_epochs: 100,
            max_steps: None,
            d_steps: 1,
            void_threshold: 0.9,
            eval_chunk: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.lr_halving_period == 0 || self.d_steps == 0 {
            return Err(config("batch size, epochs, halving period and d_steps must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(3..=7).contains(&self.n_slices) {
            return Err(config(format!("n_slices {} outside 3..=7", self.n_slices)));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(config(format!("sampling fraction {} outside (0, 1]", self.fraction)));
        }
        if !(self.noise >= 0.0) {
            return Err(config(format!("noise {} must be >= 0", self.noise)));
        }
        if self.eval_chunk == 0 {
            return Err(config("eval_chunk must be positive"));
        }
        self.weights.validate()
    }

    pub fn mask_spec(&self) -> MaskSpec {
        MaskSpec {
            kind: self.mask,
            fraction: self.fraction,
            seed: self.seed,
        }
    }

    pub fn generator_config(&self, context: ContextBlock) -> GeneratorConfig {
        GeneratorConfig {
            width_multiplier: self.width_multiplier,
            n_slices: self.n_slices,
            lstm_channels: self.lstm_channels,
            kernel: 3,
            image_size: self.image_size,
            context,
        }
    }

    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            outcomes: self.outcomes,
            width_multiplier: self.width_multiplier,
            image_size: self.image_size,
        }
    }
}

/// Which parts of the method are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationSwitches {
    /// Multilevel perspective discrimination (the KL terms).
    pub mpd: bool,
    /// Global-and-local (per-pixel decoder) discrimination.
    pub glc: bool,
    pub cal: ContextBlock,
    /// Traditional adversarial loss; forces `mpd` and `glc` off.
    pub tal: bool,
}

impl Default for AblationSwitches {
    fn default() -> Self {
        Self {
            mpd: true,
            glc: true,
            cal: ContextBlock::BiConvLstm,
            tal: false,
        }
    }
}

impl AblationSwitches {
    pub fn normalized(self) -> Self {
        if self.tal {
            Self {
                mpd: false,
                glc: false,
                ..self
            }
        } else {
            self
        }
    }

    pub fn terms(self, convention: Convention) -> AdversarialTerms {
        let s = self.normalized();
        AdversarialTerms {
            convention,
            mpd: s.mpd,
            glc: s.glc,
            tal: s.tal,
        }
    }

    /// The five-cell component study.
    pub fn component_grid() -> Vec<(String, AblationSwitches)> {
        let full = AblationSwitches::default();
        vec![
            ("hp-alf".into(), full),
            ("without-mpd".into(), AblationSwitches { mpd: false, ..full }),
            ("without-glc".into(), AblationSwitches { glc: false, ..full }),
            (
                "without-cal".into(),
                AblationSwitches {
                    cal: ContextBlock::None,
                    ..full
                },
            ),
            ("with-tal".into(), AblationSwitches { tal: true, ..full }.normalized()),
        ]
    }
}

impl fmt::Display for AblationSwitches {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let on = |b: bool| if b { "on" } else { "off" };
        write!(
            f,
            "mpd={} glc={} cal={} tal={}",
            on(self.mpd),
            on(self.glc),
            self.cal,
            on(self.tal)
        )
    }
}
