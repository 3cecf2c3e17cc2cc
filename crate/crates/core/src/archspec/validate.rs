use std::collections::HashMap;

use super::model::{ArchSpec, LayerKind, UnitRef};
use super::units::{flow, Resolved};

/// Every invariant violation in `arch`; empty iff valid.
pub fn validate(arch: &ArchSpec) -> Vec<String> {
    let mut v = Vec::new();

    if arch.default_resolution == 0 {
        v.push("default_resolution must be >= 1".to_string());
    }
    if arch.num_classes == 0 {
        v.push("num_classes must be >= 1".to_string());
    }
    if arch.stem.is_empty() && arch.stages.is_empty() && arch.head.is_empty() {
        v.push("architecture has no layers".to_string());
    }

    let flow = flow(arch);
    let mut unit_base: HashMap<&str, (u64, &str)> = HashMap::new();

    for site in &flow.sites {
        let l = site.layer;
        let path = site.path.as_str();
        if l.base_out_channels == 0 {
            v.push(format!("{path}: base_out_channels must be >= 1"));
        }
        if l.kernel == 0 {
            v.push(format!("{path}: kernel must be >= 1"));
        }
        if l.stride == 0 {
            v.push(format!("{path}: stride must be >= 1"));
        }
        if l.groups == 0 {
            v.push(format!("{path}: groups must be >= 1"));
        }
        if let Resolved::Invalid(msg) = &site.output {
            v.push(format!("{path}: {msg}"));
            continue;
        }

        match l.kind {
            LayerKind::DepthwiseConv => {
                if l.groups != site.in_channels {
                    v.push(format!(
                        "{path}: depthwise groups {} != input channels {}",
                        l.groups, site.in_channels
                    ));
                }
                if l.base_out_channels != site.in_channels {
                    v.push(format!(
                        "{path}: depthwise out-channels {} != input channels {}",
                        l.base_out_channels, site.in_channels
                    ));
                }
                if site.output != site.input {
                    v.push(format!("{path}: depthwise output must share its input's width unit"));
                }
            }
            LayerKind::Pool => {
                if l.width_unit != UnitRef::Inherit {
                    v.push(format!("{path}: pool layers must use the `inherit` width unit"));
                }
                if l.base_out_channels != site.in_channels {
                    v.push(format!(
                        "{path}: pool out-channels {} != input channels {}",
                        l.base_out_channels, site.in_channels
                    ));
                }
            }
            LayerKind::PointwiseConv | LayerKind::StandardConv | LayerKind::FullyConnected => {
                if l.kind == LayerKind::PointwiseConv && l.kernel != 1 {
                    v.push(format!("{path}: pointwise conv must have kernel 1"));
                }
                if l.kind == LayerKind::FullyConnected && (l.kernel != 1 || l.stride != 1) {
                    v.push(format!("{path}: fully-connected layer must have kernel 1 and stride 1"));
                }
                if l.groups > 0
                    && (site.in_channels % l.groups != 0 || l.base_out_channels % l.groups != 0)
                {
                    v.push(format!(
                        "{path}: groups {} must divide in ({}) and out ({}) channels",
                        l.groups, site.in_channels, l.base_out_channels
                    ));
                }
                if l.width_unit == UnitRef::Inherit && site.in_channels != l.base_out_channels {
                    v.push(format!("{path}: inherit unit requires out-channels == in-channels"));
                }
            }
        }

        if let Resolved::Unit(id) = &site.output {
            match unit_base.get(id.as_str()) {
                Some(&(base, first)) if base != site.out_channels => v.push(format!(
                    "{path}: unit `{id}` has base {} here but {base} at {first}",
                    site.out_channels
                )),
                Some(_) => {}
                None => {
                    unit_base.insert(id, (site.out_channels, path));
                }
            }
        }
    }

    for (s, stage) in arch.stages.iter().enumerate() {
        if stage.blocks.is_empty() {
            v.push(format!("stage{s}: must contain at least one block"));
        }
        if stage.trunk_unit.is_empty() {
            v.push(format!("stage{s}: trunk_unit must be non-empty"));
        }
        for (b, block) in stage.blocks.iter().enumerate() {
            if block.layers.is_empty() {
                v.push(format!("stage{s}.block{b}: block has no layers"));
            }
            let strided = block.layers.iter().chain(block.shortcut.as_ref()).any(|l| l.stride > 1);
            if b > 0 && strided {
                v.push(format!(
                    "stage{s}.block{b}: only the first block of a stage may be strided"
                ));
            }
            if block.shortcut.is_some() && !block.residual {
                v.push(format!("stage{s}.block{b}: shortcut declared on a non-residual block"));
            }
        }
    }

    for bf in &flow.blocks {
        let block = &arch.stages[bf.stage].blocks[bf.block];
        if !block.residual {
            continue;
        }
        let path = format!("stage{}.block{}", bf.stage, bf.block);
        match &block.shortcut {
            None => {
                let coupled = matches!(&bf.output, Resolved::Unit(_)) && bf.input == bf.output;
                if !coupled {
                    v.push(format!(
                        "{path}: residual block output unit differs from its input unit"
                    ));
                }
                if block.layers.iter().any(|l| l.stride > 1) {
                    v.push(format!("{path}: identity residual block cannot be strided"));
                }
            }
            Some(sc) => {
                let sc_site = flow.sites.iter().find(|s| {
                    s.path == format!("{path}.shortcut")
                });
                if let Some(site) = sc_site {
                    if site.output != bf.output {
                        v.push(format!("{path}: shortcut unit differs from block output unit"));
                    }
                }
                let body_stride: u64 = block.layers.iter().map(|l| l.stride.max(1) as u64).product();
                if sc.stride.max(1) as u64 != body_stride {
                    v.push(format!(
                        "{path}: shortcut stride {} != block stride {body_stride}",
                        sc.stride
                    ));
                }
            }
        }
    }

    v
}
