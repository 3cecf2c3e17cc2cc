use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::model::{ArchSpec, LayerKind, LayerSpec, UnitRef, WidthVector};
use super::units::{flow, site_unit_indices, width_units, Slot};

/// Round-half-up of `base * mult` to the nearest positive multiple of `divisor`.
/// The flag is set when the result had to be clamped up to `divisor`.
pub fn round_channels<T: Scalar>(base: u64, mult: T, divisor: u64) -> (u64, bool) {
    let divisor = divisor.max(1);
    let scaled = T::from_u64(base).unwrap_or_else(T::zero) * mult;
    let q = if divisor == 1 {
        scaled.round_half_up()
    } else {
        (scaled / T::from_u64(divisor).unwrap_or_else(T::one)).round_half_up()
    }
    .unwrap_or(0);
    if q == 0 {
        (divisor, true)
    } else {
        (q.saturating_mul(divisor), false)
    }
}

/// A concrete architecture produced by applying widths.
#[derive(Debug, Clone, PartialEq)]
pub struct AppliedArch {
    pub arch: ArchSpec,
    /// Applied channel count per width unit.
    pub counts: Vec<u64>,
    /// Units whose rounded count fell below one step and were clamped.
    pub warnings: Vec<String>,
}

pub(crate) fn for_each_layer_mut(arch: &mut ArchSpec, mut f: impl FnMut(Slot, &mut LayerSpec)) {
    for (i, l) in arch.stem.iter_mut().enumerate() {
        f(Slot::Stem(i), l);
    }
    for (s, stage) in arch.stages.iter_mut().enumerate() {
        for (b, block) in stage.blocks.iter_mut().enumerate() {
            for (l, layer) in block.layers.iter_mut().enumerate() {
                f(Slot::Layer { stage: s, block: b, layer: l }, layer);
            }
            if let Some(sc) = block.shortcut.as_mut() {
                f(Slot::Shortcut { stage: s, block: b }, sc);
            }
        }
    }
    for (i, l) in arch.head.iter_mut().enumerate() {
        f(Slot::Head(i), l);
    }
}

/// Sets every unit's out-channels to `counts[unit]` and re-derives inherited layers.
pub fn apply_counts(arch: &ArchSpec, counts: &[u64]) -> Result<ArchSpec> {
    let units = width_units(arch)?;
    if counts.len() != units.len() {
        return Err(Error::WidthLength {
            expected: units.len(),
            got: counts.len(),
        });
    }
    if let Some(index) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidArgument(format!("channel count for unit {index} is zero")));
    }
    let site_units = site_unit_indices(&flow(arch), &units);

    let mut out = arch.clone();
    let mut idx = 0;
    for_each_layer_mut(&mut out, |_, layer| {
        if layer.width_unit != UnitRef::Inherit {
            if let Some(u) = site_units[idx] {
                layer.base_out_channels = counts[u];
            }
        }
        idx += 1;
    });

    // Inherited layers follow their (possibly rescaled) input.
    let in_channels: Vec<u64> = flow(&out).sites.iter().map(|s| s.in_channels).collect();
    let mut idx = 0;
    for_each_layer_mut(&mut out, |_, layer| {
        let c_in = in_channels[idx];
        if layer.width_unit == UnitRef::Inherit {
            layer.base_out_channels = c_in;
        }
        if layer.kind == LayerKind::DepthwiseConv {
            layer.groups = c_in;
        }
        idx += 1;
    });
    Ok(out)
}

/// Scales every non-fixed unit by its multiplier (`divisor` 1 rounding).
pub fn apply_width<T: Scalar>(arch: &ArchSpec, w: &WidthVector<T>) -> Result<AppliedArch> {
    apply_width_with_divisor(arch, w, 1)
}

pub fn apply_width_with_divisor<T: Scalar>(
    arch: &ArchSpec,
    w: &WidthVector<T>,
    divisor: u64,
) -> Result<AppliedArch> {
    let units = width_units(arch)?;
    if w.len() != units.len() {
        return Err(Error::WidthLength {
            expected: units.len(),
            got: w.len(),
        });
    }
    let mut warnings = Vec::new();
    let counts: Vec<u64> = units
        .iter()
        .zip(w.entries())
        .map(|(u, &m)| {
            let (c, clamped) = round_channels(u.base_channels, m, divisor);
            if clamped {
                warnings.push(format!(
                    "unit `{}`: {} x {} rounds below one channel step; clamped to {c}",
                    u.id,
                    u.base_channels,
                    m.to_decimal()
                ));
            }
            c
        })
        .collect();
    let arch = apply_counts(arch, &counts)?;
    Ok(AppliedArch {
        arch,
        counts,
        warnings,
    })
}

/// Base channel count of every width unit.
pub fn unit_base_counts(arch: &ArchSpec) -> Result<Vec<u64>> {
    Ok(width_units(arch)?.iter().map(|u| u.base_channels).collect())
}
