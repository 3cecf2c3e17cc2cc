use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::model::{ArchSpec, LayerSpec, UnitRef, IMAGE_CHANNELS};

/// Where a layer sits in the architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Stem(usize),
    Layer { stage: usize, block: usize, layer: usize },
    Shortcut { stage: usize, block: usize },
    Head(usize),
}

/// Coupling group a tensor's channels belong to, after resolving `Trunk`/`Local`/`Inherit`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Resolved {
    Image,
    Fixed,
    Unit(String),
    Invalid(String),
}

#[derive(Debug, Clone)]
pub(crate) struct Site<'a> {
    pub path: String,
    pub slot: Slot,
    pub layer: &'a LayerSpec,
    pub in_channels: u64,
    pub input: Resolved,
    pub output: Resolved,
    pub out_channels: u64,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockFlow {
    pub stage: usize,
    pub block: usize,
    pub input: Resolved,
    pub output: Resolved,
}

pub(crate) struct Flow<'a> {
    pub sites: Vec<Site<'a>>,
    pub blocks: Vec<BlockFlow>,
}

pub fn layer_path(slot: Slot) -> String {
    match slot {
        Slot::Stem(i) => format!("stem.{i}"),
        Slot::Layer { stage, block, layer } => format!("stage{stage}.block{block}.layer{layer}"),
        Slot::Shortcut { stage, block } => format!("stage{stage}.block{block}.shortcut"),
        Slot::Head(i) => format!("head.{i}"),
    }
}

pub fn local_unit_id(stage: usize, block: usize, name: &str) -> String {
    format!("stage{stage}.block{block}.{name}")
}

fn resolve(
    unit: &UnitRef,
    input: &Resolved,
    stage: Option<(usize, usize, &str)>,
) -> Resolved {
    match unit {
        UnitRef::Fixed => Resolved::Fixed,
        UnitRef::Shared(id) => Resolved::Unit(id.clone()),
        UnitRef::Trunk => match stage {
            Some((_, _, trunk)) => Resolved::Unit(trunk.to_string()),
            None => Resolved::Invalid("`trunk` unit used outside a stage".into()),
        },
        UnitRef::Local(name) => match stage {
            Some((s, b, _)) => Resolved::Unit(local_unit_id(s, b, name)),
            None => Resolved::Invalid("`local` unit used outside a stage".into()),
        },
        UnitRef::Inherit => match input {
            Resolved::Image => Resolved::Invalid("`inherit` unit reads the input image".into()),
            other => other.clone(),
        },
    }
}

fn outflow(
    layer: &LayerSpec,
    input: &Resolved,
    in_ch: u64,
    stage: Option<(usize, usize, &str)>,
) -> (Resolved, u64) {
    let output = resolve(&layer.width_unit, input, stage);
    let out_channels = if layer.width_unit == UnitRef::Inherit {
        in_ch
    } else {
        layer.base_out_channels
    };
    (output, out_channels)
}

/// Walks every layer in topological order, tracking channel flow.
pub(crate) fn flow(arch: &ArchSpec) -> Flow<'_> {
    let mut sites = Vec::new();
    let mut blocks = Vec::new();
    let mut cur = Resolved::Image;
    let mut cur_ch = IMAGE_CHANNELS;

    for (i, layer) in arch.stem.iter().enumerate() {
        let slot = Slot::Stem(i);
        let (out, out_ch) = outflow(layer, &cur, cur_ch, None);
        sites.push(Site {
            path: layer_path(slot),
            slot,
            layer,
            in_channels: cur_ch,
            input: cur.clone(),
            output: out.clone(),
            out_channels: out_ch,
        });
        cur = out;
        cur_ch = out_ch;
    }

    for (s, stage) in arch.stages.iter().enumerate() {
        for (b, block) in stage.blocks.iter().enumerate() {
            let ctx = Some((s, b, stage.trunk_unit.as_str()));
            let block_in = cur.clone();
            let block_in_ch = cur_ch;
            for (l, layer) in block.layers.iter().enumerate() {
                let slot = Slot::Layer { stage: s, block: b, layer: l };
                let (out, out_ch) = outflow(layer, &cur, cur_ch, ctx);
                sites.push(Site {
                    path: layer_path(slot),
                    slot,
                    layer,
                    in_channels: cur_ch,
                    input: cur.clone(),
                    output: out.clone(),
                    out_channels: out_ch,
                });
                cur = out;
                cur_ch = out_ch;
            }
            if let Some(sc) = &block.shortcut {
                let slot = Slot::Shortcut { stage: s, block: b };
                let (out, out_ch) = outflow(sc, &block_in, block_in_ch, ctx);
                sites.push(Site {
                    path: layer_path(slot),
                    slot,
                    layer: sc,
                    in_channels: block_in_ch,
                    input: block_in.clone(),
                    output: out,
                    out_channels: out_ch,
                });
            }
            blocks.push(BlockFlow {
                stage: s,
                block: b,
                input: block_in,
                output: cur.clone(),
            });
        }
    }

    for (i, layer) in arch.head.iter().enumerate() {
        let slot = Slot::Head(i);
        let (out, out_ch) = outflow(layer, &cur, cur_ch, None);
        sites.push(Site {
            path: layer_path(slot),
            slot,
            layer,
            in_channels: cur_ch,
            input: cur.clone(),
            output: out.clone(),
            out_channels: out_ch,
        });
        cur = out;
        cur_ch = out_ch;
    }

    Flow { sites, blocks }
}

/// How a unit was declared; used to line up units across architectures of different depth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UnitOrigin {
    Shared,
    Trunk { stage: usize },
    Local { stage: usize, block: usize, name: String },
}

/// One coupling group: every member layer gets the same out-channel count.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitDescriptor {
    pub id: String,
    pub members: Vec<String>,
    pub base_channels: u64,
    #[serde(skip)]
    pub origin: Option<UnitOrigin>,
}

pub(crate) fn same_registry(a: &[UnitDescriptor], b: &[UnitDescriptor]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.id == y.id && x.members == y.members && x.base_channels == y.base_channels
        })
}

/// Non-fixed width units in first-occurrence topological order.
pub fn width_units(arch: &ArchSpec) -> Result<Vec<UnitDescriptor>> {
    let flow = flow(arch);
    let mut units: Vec<UnitDescriptor> = Vec::new();
    for site in &flow.sites {
        let id = match &site.output {
            Resolved::Unit(id) => id,
            Resolved::Fixed => continue,
            Resolved::Invalid(msg) => {
                return Err(Error::InvalidArch(vec![format!("{}: {msg}", site.path)]))
            }
            Resolved::Image => unreachable!("layers never output the image"),
        };
        match units.iter_mut().find(|u| &u.id == id) {
            Some(u) => u.members.push(site.path.clone()),
            None => {
                let origin = match (&site.layer.width_unit, site.slot) {
                    (UnitRef::Trunk, Slot::Layer { stage, .. } | Slot::Shortcut { stage, .. }) => {
                        UnitOrigin::Trunk { stage }
                    }
                    (
                        UnitRef::Local(name),
                        Slot::Layer { stage, block, .. } | Slot::Shortcut { stage, block },
                    ) => UnitOrigin::Local {
                        stage,
                        block,
                        name: name.clone(),
                    },
                    _ => UnitOrigin::Shared,
                };
                units.push(UnitDescriptor {
                    id: id.clone(),
                    members: vec![site.path.clone()],
                    base_channels: site.out_channels,
                    origin: Some(origin),
                });
            }
        }
    }
    Ok(units)
}

/// Index of each layer's unit (`None` for fixed layers), aligned with the topological walk.
pub(crate) fn site_unit_indices(flow: &Flow<'_>, units: &[UnitDescriptor]) -> Vec<Option<usize>> {
    flow.sites
        .iter()
        .map(|s| match &s.output {
            Resolved::Unit(id) => units.iter().position(|u| &u.id == id),
            _ => None,
        })
        .collect()
}
