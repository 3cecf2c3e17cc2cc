//! Architecture data model, width application, width-unit enumeration, and FLOPs.

mod flops;
mod model;
mod presets;
mod units;
mod validate;
mod width;

pub use flops::{flops, layer_macs, FlopsReport, LayerMacs};
pub use model::{
    ArchSpec, BlockSpec, LayerKind, LayerSpec, StageSpec, UnitRef, WidthVector, IMAGE_CHANNELS,
};
pub use presets::{build_preset, Overrides, PRESETS};
pub use units::{layer_path, local_unit_id, width_units, Slot, UnitDescriptor, UnitOrigin};
pub use validate::validate;
pub use width::{
    apply_counts, apply_width, apply_width_with_divisor, round_channels, unit_base_counts,
    AppliedArch,
};

pub(crate) use units::{flow, site_unit_indices};

/// Out-channel count of every layer, in topological order.
pub fn layer_channels(arch: &ArchSpec) -> Vec<(String, u64)> {
    flow(arch)
        .sites
        .iter()
        .map(|s| (s.path.clone(), s.out_channels))
        .collect()
}
