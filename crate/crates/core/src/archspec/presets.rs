//! Built-in architecture presets.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::error::{Error, Result};

use super::model::{ArchSpec, BlockSpec, LayerSpec, StageSpec, UnitRef};

pub const PRESETS: [&str; 4] = ["resnet18", "resnet50", "mobilenetv2", "toy-k-units"];

/// Override knobs keyed by name; values are JSON so the CLI can pass them through.
pub type Overrides = BTreeMap<String, Value>;

struct Knobs<'a> {
    map: &'a Overrides,
}

impl<'a> Knobs<'a> {
    fn new(preset: &'a str, map: &'a Overrides, allowed: &[&str]) -> Result<Self> {
        if let Some(k) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::UnknownKnob {
                preset: preset.to_string(),
                knob: k.clone(),
            });
        }
        Ok(Knobs { map })
    }

    fn bad(&self, knob: &str, reason: impl Into<String>) -> Error {
        Error::InvalidOverride {
            knob: knob.to_string(),
            reason: reason.into(),
        }
    }

    fn uint(&self, knob: &str, default: u64) -> Result<u64> {
        match self.map.get(knob) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .filter(|&n| n >= 1)
                .ok_or_else(|| self.bad(knob, "expected a positive integer")),
        }
    }

    fn uint_list(&self, knob: &str, default: &[u64]) -> Result<Vec<u64>> {
        match self.map.get(knob) {
            None => Ok(default.to_vec()),
            Some(Value::Array(items)) => {
                if items.len() != default.len() {
                    return Err(self.bad(
                        knob,
                        format!("expected {} entries, got {}", default.len(), items.len()),
                    ));
                }
                items
                    .iter()
                    .map(|v| {
                        v.as_u64()
                            .filter(|&n| n >= 1)
                            .ok_or_else(|| self.bad(knob, "entries must be positive integers"))
                    })
                    .collect()
            }
            Some(_) => Err(self.bad(knob, "expected an array")),
        }
    }
}

/// Builds a named preset with optional overrides.
///
/// Knobs: `resnet18`/`resnet50` accept `blocks`, `widths`, `resolution`, `num_classes`;
/// `mobilenetv2` additionally accepts `last_width`; `toy-k-units` accepts `units`,
/// `width`, `resolution`, `num_classes`.
pub fn build_preset(preset_id: &str, overrides: Option<&Overrides>) -> Result<ArchSpec> {
    let empty = Overrides::new();
    let map = overrides.unwrap_or(&empty);
    let arch = match preset_id {
        "resnet18" => resnet18(&Knobs::new(
            preset_id,
            map,
            &["blocks", "widths", "resolution", "num_classes"],
        )?)?,
        "resnet50" => resnet50(&Knobs::new(
            preset_id,
            map,
            &["blocks", "widths", "resolution", "num_classes"],
        )?)?,
        "mobilenetv2" => mobilenetv2(&Knobs::new(
            preset_id,
            map,
            &["blocks", "widths", "last_width", "resolution", "num_classes"],
        )?)?,
        "toy-k-units" => toy(&Knobs::new(
            preset_id,
            map,
            &["units", "width", "resolution", "num_classes"],
        )?)?,
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    arch.ensure_valid()?;
    Ok(arch)
}

fn trunk_id(stage: usize) -> String {
    format!("stage{stage}.trunk")
}

fn resnet18(k: &Knobs<'_>) -> Result<ArchSpec> {
    let blocks = k.uint_list("blocks", &[2, 2, 2, 2])?;
    let widths = k.uint_list("widths", &[64, 128, 256, 512])?;
    let resolution = k.uint("resolution", 224)? as u32;
    let num_classes = k.uint("num_classes", 1000)?;

    // The stem feeds stage 0's identity residual, so it joins that trunk.
    let stem = vec![
        LayerSpec::conv(widths[0], 7, 2, UnitRef::Shared(trunk_id(0))),
        LayerSpec::pool(widths[0], 3, 2),
    ];
    let mut stages = Vec::new();
    for (s, (&n, &c)) in blocks.iter().zip(&widths).enumerate() {
        let downsample = s > 0;
        let stride = if downsample { 2 } else { 1 };
        let blocks = (0..n)
            .map(|b| {
                let first = b == 0;
                let st = if first { stride } else { 1 };
                BlockSpec {
                    layers: vec![
                        LayerSpec::conv(c, 3, st, UnitRef::Local("mid".into())),
                        LayerSpec::conv(c, 3, 1, UnitRef::Trunk),
                    ],
                    residual: true,
                    shortcut: (first && downsample).then(|| LayerSpec::conv(c, 1, 2, UnitRef::Trunk)),
                }
            })
            .collect();
        stages.push(StageSpec {
            blocks,
            depth_projectable: true,
            trunk_unit: trunk_id(s),
        });
    }
    Ok(ArchSpec {
        name: "resnet18".into(),
        default_resolution: resolution,
        num_classes,
        stem,
        stages,
        head: vec![LayerSpec::fully_connected(num_classes, UnitRef::Fixed)],
    })
}

fn resnet50(k: &Knobs<'_>) -> Result<ArchSpec> {
    let blocks = k.uint_list("blocks", &[3, 4, 6, 3])?;
    let widths = k.uint_list("widths", &[64, 128, 256, 512])?;
    let resolution = k.uint("resolution", 224)? as u32;
    let num_classes = k.uint("num_classes", 1000)?;

    let stem = vec![
        LayerSpec::conv(64, 7, 2, UnitRef::Shared("stem".into())),
        LayerSpec::pool(64, 3, 2),
    ];
    let mut stages = Vec::new();
    for (s, (&n, &mid)) in blocks.iter().zip(&widths).enumerate() {
        let out = mid * 4;
        let stride = if s > 0 { 2 } else { 1 };
        let blocks = (0..n)
            .map(|b| {
                let first = b == 0;
                let st = if first { stride } else { 1 };
                BlockSpec {
                    layers: vec![
                        LayerSpec::conv(mid, 1, 1, UnitRef::Local("reduce".into())),
                        LayerSpec::conv(mid, 3, st, UnitRef::Local("mid".into())),
                        LayerSpec::conv(out, 1, 1, UnitRef::Trunk),
                    ],
                    residual: true,
                    shortcut: first.then(|| LayerSpec::conv(out, 1, st, UnitRef::Trunk)),
                }
            })
            .collect();
        stages.push(StageSpec {
            blocks,
            depth_projectable: true,
            trunk_unit: trunk_id(s),
        });
    }
    Ok(ArchSpec {
        name: "resnet50".into(),
        default_resolution: resolution,
        num_classes,
        stem,
        stages,
        head: vec![LayerSpec::fully_connected(num_classes, UnitRef::Fixed)],
    })
}

fn mobilenetv2(k: &Knobs<'_>) -> Result<ArchSpec> {
    // (expansion, out channels, blocks, stride)
    const CFG: [(u64, u64, u64, u32); 7] = [
        (1, 16, 1, 1),
        (6, 24, 2, 2),
        (6, 32, 3, 2),
        (6, 64, 4, 2),
        (6, 96, 3, 1),
        (6, 160, 3, 2),
        (6, 320, 1, 1),
    ];
    let blocks = k.uint_list("blocks", &CFG.map(|c| c.2))?;
    let widths = k.uint_list("widths", &CFG.map(|c| c.1))?;
    let last_width = k.uint("last_width", 1280)?;
    let resolution = k.uint("resolution", 224)? as u32;
    let num_classes = k.uint("num_classes", 1000)?;

    let stem_width = 32;
    let stem = vec![LayerSpec::conv(stem_width, 3, 2, UnitRef::Shared("stem".into()))];
    let mut stages = Vec::new();
    let mut in_ch = stem_width;
    let last = CFG.len() - 1;
    for (s, &(t, _, _, stride)) in CFG.iter().enumerate() {
        let out = widths[s];
        let n = blocks[s];
        let blocks = (0..n)
            .map(|b| {
                let first = b == 0;
                let c_in = if first { in_ch } else { out };
                let st = if first { stride } else { 1 };
                let mut layers = Vec::new();
                let hidden = c_in * t;
                if t != 1 {
                    layers.push(LayerSpec::conv(hidden, 1, 1, UnitRef::Local("expand".into())));
                }
                layers.push(LayerSpec::depthwise(hidden, 3, st));
                layers.push(LayerSpec::conv(out, 1, 1, UnitRef::Trunk));
                BlockSpec {
                    layers,
                    // A stage opens a new trunk unit, so only later blocks carry the identity.
                    residual: !first,
                    shortcut: None,
                }
            })
            .collect();
        stages.push(StageSpec {
            blocks,
            depth_projectable: s != 0 && s != last,
            trunk_unit: trunk_id(s),
        });
        in_ch = out;
    }
    Ok(ArchSpec {
        name: "mobilenetv2".into(),
        default_resolution: resolution,
        num_classes,
        stem,
        stages,
        head: vec![
            LayerSpec::conv(last_width, 1, 1, UnitRef::Shared("head".into())),
            LayerSpec::fully_connected(num_classes, UnitRef::Fixed),
        ],
    })
}

fn toy(k: &Knobs<'_>) -> Result<ArchSpec> {
    let units = k.uint("units", 3)? as usize;
    let width = k.uint("width", 32)?;
    let resolution = k.uint("resolution", 32)? as u32;
    let num_classes = k.uint("num_classes", 10)?;
    let stem = (0..units)
        .map(|i| LayerSpec::conv(width, 3, 1, UnitRef::Shared(format!("u{i}"))))
        .collect();
    Ok(ArchSpec {
        name: format!("toy-{units}-units"),
        default_resolution: resolution,
        num_classes,
        stem,
        stages: Vec::new(),
        head: vec![LayerSpec::fully_connected(num_classes, UnitRef::Fixed)],
    })
}
