use crate::data::{normalize_with, ColorJitter, NormStats};
use crate::error::{Error, Result};
use crate::model::{Action, DropoutMasks, NetState, Network};
use crate::sim::{derive_seed, Policy, PolicyInput};

/// A trained network driving the robot.
///
/// With MC dropout one mask set is drawn per episode from the trial seed.
#[derive(Debug, Clone)]
pub struct NetPolicy<'a> {
    net: &'a Network,
    stats: &'a NormStats,
    mc_dropout: bool,
    state: NetState,
    masks: DropoutMasks,
}

impl<'a> NetPolicy<'a> {
    pub fn new(net: &'a Network, stats: &'a NormStats, mc_dropout: bool) -> Self {
        NetPolicy {
            net,
            stats,
            mc_dropout,
            state: net.reset_state(),
            masks: net.no_dropout(),
        }
    }

    pub fn masks(&self) -> &DropoutMasks {
        &self.masks
    }
}

impl Policy for NetPolicy<'_> {
    fn reset(&mut self, seed: u64) -> Result<()> {
        self.state = self.net.reset_state();
        self.masks = if self.mc_dropout {
            self.net.sample_masks(derive_seed(seed, 0x6d61_736b))
        } else {
            self.net.no_dropout()
        };
        Ok(())
    }

    fn act(&mut self, input: &PolicyInput) -> Result<Action> {
        let obs = input
            .obs
            .ok_or_else(|| Error::Data("network policy needs an observation".into()))?;
        let x = normalize_with(obs, self.stats, &ColorJitter::IDENTITY);
        let (a, next) = self.net.forward(&x, input.mode, &self.state, &self.masks)?;
        self.state = next;
        Ok(a)
    }
}
