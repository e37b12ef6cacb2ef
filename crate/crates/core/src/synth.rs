//! End-to-end simulation of single frames on a fixed layout.
//!
//! A layout (AP positions and pilot book) is drawn from stream
//! [`LAYOUT_STREAM`] of the configured `rng_seed`, so datasets built from the
//! same configuration share it. Sample `i` of a dataset is drawn from stream
//! `i` of the dataset seed and can be regenerated from the seed and its index
//! alone.

use crate::airlink::{gen_pilots, sample_channels, synthesize_frame, PilotMatrix, ReceivedFrames};
use crate::error::{Error, Result};
use crate::preprocess::{assemble_tensor, estimate_channels, normalize_pilots, InputTensor};
use crate::scenario::{
    sample_activity, sample_ap_positions, sample_large_scale, sample_user_positions, stream, Activity,
    Deployment, LargeScale, Point, SystemConfig,
};

pub const LAYOUT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub config: SystemConfig,
    pub ap_positions: Vec<Point>,
    pub pilots: PilotMatrix,
    pilots_norm: PilotMatrix,
}

/// One simulated frame with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedFrame {
    pub activity: Activity,
    pub large_scale: LargeScale,
    pub frames: ReceivedFrames,
}

impl Layout {
    pub fn draw(config: &SystemConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(config.rng_seed, LAYOUT_STREAM);
        let ap_positions = sample_ap_positions(config, &mut rng);
        let pilots = gen_pilots(config.pilot_len, config.num_users, &mut rng)?;
        Self::from_parts(config.clone(), ap_positions, pilots)
    }

    pub fn from_parts(config: SystemConfig, ap_positions: Vec<Point>, pilots: PilotMatrix) -> Result<Self> {
        config.validate()?;
        if ap_positions.len() != config.num_aps {
            return Err(Error::Structural(format!(
                "{} AP positions for M = {}",
                ap_positions.len(),
                config.num_aps
            )));
        }
        if pilots.pilot_len() != config.pilot_len || pilots.num_users() != config.num_users {
            return Err(Error::Structural(format!(
                "pilot book is {}x{}, config needs {}x{}",
                pilots.pilot_len(),
                pilots.num_users(),
                config.pilot_len,
                config.num_users
            )));
        }
        let pilots_norm = normalize_pilots(&pilots)?;
        Ok(Self {
            config,
            ap_positions,
            pilots,
            pilots_norm,
        })
    }

    /// Fresh users, shadowing, activity, fading and noise for sample `index`.
    pub fn simulate(&self, seed: u64, index: u64) -> Result<SimulatedFrame> {
        let cfg = &self.config;
        let mut rng = stream(seed, index);
        let mut dep = Deployment {
            user_positions: sample_user_positions(&self.ap_positions, cfg, &mut rng),
            ap_positions: self.ap_positions.clone(),
        };
        let large_scale = sample_large_scale(&mut dep, cfg, &mut rng)?;
        let activity = sample_activity(cfg.num_users, cfg.activity_prob, &mut rng)?;
        let channels = sample_channels(&large_scale, cfg, &mut rng)?;
        let frames = synthesize_frame(&self.pilots, &activity, &channels, cfg.effective_snr(), &mut rng)?;
        Ok(SimulatedFrame {
            activity,
            large_scale,
            frames,
        })
    }

    /// CNN input tensor of a received frame.
    pub fn features(&self, frames: &ReceivedFrames) -> Result<InputTensor> {
        let est = estimate_channels(&self.pilots_norm, frames, self.config.effective_snr())?;
        assemble_tensor(&est, self.config.feature_mode)
    }
}
