//! The trained network bundle and its checkpoints.

use std::io::Read;

use gradcore::checkpoint::{checkpoint_bytes, load_into};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::nets::{AffordanceEncoder, GoalAssociator, LocalizationNet, NetDims};
use super::train::TamConfig;
use crate::error::{Result, TamError};

#[derive(Clone, Debug)]
pub struct TamModel {
    pub dims: NetDims,
    pub config: TamConfig,
    pub encoder: AffordanceEncoder,
    pub associator: GoalAssociator,
    pub localizer: LocalizationNet,
}

/// Which network a checkpoint holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TamNet {
    Encoder,
    Associator,
    Localizer,
}

impl TamNet {
    pub const ALL: [TamNet; 3] = [TamNet::Encoder, TamNet::Associator, TamNet::Localizer];

    pub fn name(self) -> &'static str {
        match self {
            TamNet::Encoder => "encoder",
            TamNet::Associator => "goal_associator",
            TamNet::Localizer => "localizer",
        }
    }
}

impl TamModel {
    /// Untrained networks with the given dimensions.
    pub fn untrained(dims: NetDims, config: TamConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TamModel {
            encoder: AffordanceEncoder::new(&dims, config.tau, &mut rng),
            associator: GoalAssociator::new(&dims, &mut rng),
            localizer: LocalizationNet::new(&dims, &mut rng),
            dims,
            config,
        }
    }

    fn store(&self, net: TamNet) -> &gradcore::ParamStore {
        match net {
            TamNet::Encoder => &self.encoder.store,
            TamNet::Associator => &self.associator.store,
            TamNet::Localizer => &self.localizer.store,
        }
    }

    /// Checkpoint of one network; the header records dimensions and config.
    pub fn checkpoint(&self, net: TamNet) -> Result<Vec<u8>> {
        let meta = json!({
            "network": net.name(),
            "dims": self.dims,
            "config": self.config,
        });
        Ok(checkpoint_bytes(self.store(net), meta)?)
    }

    /// Rebuilds the bundle from three checkpoints.
    pub fn from_checkpoints(encoder: impl Read, associator: impl Read, localizer: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        let mut enc = encoder;
        enc.read_to_end(&mut buf).map_err(|e| TamError::io("<encoder checkpoint>", e))?;
        let (_, meta) = gradcore::checkpoint::load_checkpoint(&buf[..])?;
        let dims: NetDims = serde_json::from_value(meta["dims"].clone())
            .map_err(|e| TamError::format("checkpoint header", e))?;
        let config: TamConfig = serde_json::from_value(meta["config"].clone())
            .map_err(|e| TamError::format("checkpoint header", e))?;
        let mut model = TamModel::untrained(dims, config, 0);
        let check = |meta: serde_json::Value, net: TamNet| -> Result<()> {
            if meta["network"] != net.name() {
                return Err(TamError::format(
                    "checkpoint",
                    format!("expected {} network, found {}", net.name(), meta["network"]),
                ));
            }
            Ok(())
        };
        check(load_into(&buf[..], &mut model.encoder.store)?, TamNet::Encoder)?;
        check(load_into(associator, &mut model.associator.store)?, TamNet::Associator)?;
        check(load_into(localizer, &mut model.localizer.store)?, TamNet::Localizer)?;
        Ok(model)
    }
}
