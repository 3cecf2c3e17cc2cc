//! Random architecture generators shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use widthforge_core::archspec::{build_preset, BlockSpec, LayerSpec, Overrides, StageSpec, UnitRef};
use widthforge_core::ArchSpec;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn list(rng: &mut impl Rng, n: usize, lo: u64, hi: u64) -> serde_json::Value {
    json!((0..n).map(|_| rng.gen_range(lo..=hi)).collect::<Vec<_>>())
}

/// A preset with randomized depth and widths.
pub fn random_preset(rng: &mut impl Rng) -> ArchSpec {
    let mut o = Overrides::new();
    let id = match rng.gen_range(0..4) {
        0 => {
            o.insert("blocks".into(), list(rng, 4, 1, 3));
            o.insert("widths".into(), list(rng, 4, 8, 64));
            "resnet18"
        }
        1 => {
            o.insert("blocks".into(), list(rng, 4, 1, 3));
            o.insert("widths".into(), list(rng, 4, 8, 32));
            "resnet50"
        }
        2 => {
            o.insert("blocks".into(), list(rng, 7, 1, 3));
            o.insert("widths".into(), list(rng, 7, 8, 48));
            o.insert("last_width".into(), json!(rng.gen_range(32..=256)));
            "mobilenetv2"
        }
        _ => {
            o.insert("units".into(), json!(rng.gen_range(1..=4)));
            o.insert("width".into(), json!(rng.gen_range(4..=48)));
            "toy-k-units"
        }
    };
    o.insert("num_classes".into(), json!(rng.gen_range(2..=100)));
    build_preset(id, Some(&o)).expect("randomized preset is valid")
}

/// Stride-free residual chain: a stem conv, then stages of two-conv residual blocks.
pub fn chain(stage_blocks: &[usize], width: u64, with_head: bool) -> ArchSpec {
    let stages = stage_blocks
        .iter()
        .map(|&n| StageSpec {
            blocks: vec![
                BlockSpec {
                    layers: vec![
                        LayerSpec::conv(width, 3, 1, UnitRef::Local("mid".into())),
                        LayerSpec::conv(width, 3, 1, UnitRef::Trunk),
                    ],
                    residual: true,
                    shortcut: None,
                };
                n
            ],
            depth_projectable: true,
            trunk_unit: "trunk".into(),
        })
        .collect::<Vec<_>>();
    ArchSpec {
        name: "chain".into(),
        default_resolution: 32,
        num_classes: 10,
        stem: vec![LayerSpec::conv(width, 3, 1, UnitRef::Shared("trunk".into()))],
        stages,
        head: if with_head {
            vec![LayerSpec::fully_connected(10, UnitRef::Fixed)]
        } else {
            Vec::new()
        },
    }
}

/// A ResNet or MobileNetV2 preset at realistic scale: default widths scaled by 0.5 to 2
/// and randomized depth.
pub fn random_full_preset(rng: &mut impl Rng) -> ArchSpec {
    let scaled = |rng: &mut dyn rand::RngCore, base: &[u64]| {
        json!(base.iter().map(|&c| ((c as f64 * rng.gen_range(0.5..2.0)).round() as u64).max(1)).collect::<Vec<_>>())
    };
    let mut o = Overrides::new();
    let id = match rng.gen_range(0..3) {
        0 => {
            o.insert("blocks".into(), list(rng, 4, 1, 4));
            o.insert("widths".into(), scaled(rng, &[64, 128, 256, 512]));
            "resnet18"
        }
        1 => {
            o.insert("blocks".into(), list(rng, 4, 1, 6));
            o.insert("widths".into(), scaled(rng, &[64, 128, 256, 512]));
            "resnet50"
        }
        _ => {
            o.insert("blocks".into(), list(rng, 7, 1, 4));
            o.insert("widths".into(), scaled(rng, &[16, 24, 32, 64, 96, 160, 320]));
            o.insert("last_width".into(), json!(rng.gen_range(640..=2560)));
            "mobilenetv2"
        }
    };
    build_preset(id, Some(&o)).expect("randomized preset is valid")
}
