//! Analytic multiply-accumulate counting (one MAC counts as one FLOP, forward pass only).
//!
//! Convolutions use same-padding: each strided layer maps a spatial side `h` to
//! `ceil(h / stride)`. Fully-connected layers pool globally first. Pooling,
//! activations, and normalization cost nothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::model::{ArchSpec, LayerKind, LayerSpec};
use super::units::{flow, Slot};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMacs {
    pub path: String,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub total: u64,
    pub per_layer: Vec<LayerMacs>,
}

/// MACs of one layer given its input channel count and input spatial side.
/// Returns `(macs, output spatial side)`.
pub fn layer_macs(layer: &LayerSpec, in_channels: u64, in_side: u64) -> Option<(u64, u64)> {
    let stride = layer.stride.max(1) as u64;
    match layer.kind {
        LayerKind::FullyConnected => Some((in_channels.checked_mul(layer.base_out_channels)?, 1)),
        LayerKind::Pool => Some((0, in_side.div_ceil(stride))),
        LayerKind::StandardConv | LayerKind::PointwiseConv | LayerKind::DepthwiseConv => {
            let out_side = in_side.div_ceil(stride);
            let k = layer.kernel as u64;
            let groups = layer.groups.max(1);
            let macs = (in_channels / groups)
                .checked_mul(layer.base_out_channels)?
                .checked_mul(k * k)?
                .checked_mul(out_side)?
                .checked_mul(out_side)?;
            Some((macs, out_side))
        }
    }
}

/// Forward-pass MACs of `arch` at a square input of side `resolution`.
pub fn flops(arch: &ArchSpec, resolution: u32) -> Result<FlopsReport> {
    if resolution == 0 {
        return Err(Error::InvalidResolution(resolution));
    }
    let flow = flow(arch);
    let mut side = resolution as u64;
    let mut block_in_side = side;
    let mut current_block: Option<(usize, usize)> = None;
    let mut per_layer = Vec::with_capacity(flow.sites.len());
    let mut total: u64 = 0;

    for site in &flow.sites {
        let input_side = match site.slot {
            Slot::Layer { stage, block, .. } => {
                if current_block != Some((stage, block)) {
                    current_block = Some((stage, block));
                    block_in_side = side;
                }
                side
            }
            Slot::Shortcut { .. } => block_in_side,
            Slot::Stem(_) | Slot::Head(_) => {
                current_block = None;
                side
            }
        };
        if input_side == 0 {
            return Err(Error::InvalidResolution(resolution));
        }
        let (macs, out_side) = layer_macs(site.layer, site.in_channels, input_side)
            .ok_or_else(|| Error::InvalidArgument(format!("{}: MAC count overflows u64", site.path)))?;
        if !matches!(site.slot, Slot::Shortcut { .. }) {
            side = out_side;
        }
        total = total
            .checked_add(macs)
            .ok_or_else(|| Error::InvalidArgument("total MAC count overflows u64".into()))?;
        per_layer.push(LayerMacs {
            path: site.path.clone(),
            macs,
        });
    }

    Ok(FlopsReport { total, per_layer })
}
