use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::network::Network;

pub const NETWORK_FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct Out<'a> {
    version: u32,
    network: &'a Network<f64>,
}

#[derive(Deserialize)]
struct In {
    version: u32,
    network: Network<f64>,
}

/// Writes a network as versioned JSON. Values are stored as `f64`.
pub fn save_network<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    let wide = net.cast::<f64>();
    let json = serde_json::to_string(&Out {
        version: NETWORK_FORMAT_VERSION,
        network: &wide,
    })
    .map_err(|e| Error::Format {
        what: "network checkpoint",
        msg: e.to_string(),
    })?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_network<T: Scalar>(path: &Path) -> Result<Network<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed: In = serde_json::from_str(&text).map_err(|e| Error::Format {
        what: "network checkpoint",
        msg: e.to_string(),
    })?;
    if parsed.version != NETWORK_FORMAT_VERSION {
        return Err(Error::Format {
            what: "network checkpoint",
            msg: format!(
                "version {} is not supported (expected {NETWORK_FORMAT_VERSION})",
                parsed.version
            ),
        });
    }
    parsed.network.validate()?;
    Ok(parsed.network.cast())
}
