use std::fmt;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::units::{width_units, UnitDescriptor};
use super::validate::validate;

/// Input image channels for the first layer of every architecture.
pub const IMAGE_CHANNELS: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    StandardConv,
    DepthwiseConv,
    PointwiseConv,
    FullyConnected,
    /// Spatial pooling. Zero MACs, passes channels through.
    Pool,
}

impl LayerKind {
    pub fn is_conv(self) -> bool {
        matches!(
            self,
            LayerKind::StandardConv | LayerKind::DepthwiseConv | LayerKind::PointwiseConv
        )
    }
}

/// Which coupling group a layer's out-channels belong to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitRef {
    /// Never rescaled (classifier output).
    Fixed,
    /// The enclosing stage's `trunk_unit`.
    Trunk,
    /// Same channels as the layer input (depthwise convs, pooling).
    Inherit,
    /// Block-local unit; every block instance gets its own copy.
    Local(String),
    /// Globally named unit (stem, head, or an explicit trunk id).
    Shared(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub base_out_channels: u64,
    pub kernel: u32,
    pub stride: u32,
    pub groups: u64,
    pub width_unit: UnitRef,
}

impl LayerSpec {
    pub fn conv(out: u64, kernel: u32, stride: u32, unit: UnitRef) -> Self {
        let kind = if kernel == 1 {
            LayerKind::PointwiseConv
        } else {
            LayerKind::StandardConv
        };
        LayerSpec {
            kind,
            base_out_channels: out,
            kernel,
            stride,
            groups: 1,
            width_unit: unit,
        }
    }

    pub fn depthwise(channels: u64, kernel: u32, stride: u32) -> Self {
        LayerSpec {
            kind: LayerKind::DepthwiseConv,
            base_out_channels: channels,
            kernel,
            stride,
            groups: channels,
            width_unit: UnitRef::Inherit,
        }
    }

    pub fn pool(channels: u64, kernel: u32, stride: u32) -> Self {
        LayerSpec {
            kind: LayerKind::Pool,
            base_out_channels: channels,
            kernel,
            stride,
            groups: 1,
            width_unit: UnitRef::Inherit,
        }
    }

    pub fn fully_connected(out: u64, unit: UnitRef) -> Self {
        LayerSpec {
            kind: LayerKind::FullyConnected,
            base_out_channels: out,
            kernel: 1,
            stride: 1,
            groups: 1,
            width_unit: unit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub layers: Vec<LayerSpec>,
    pub residual: bool,
    /// Projection shortcut (1x1 conv on the block input) for residual blocks that
    /// change width or resolution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortcut: Option<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub blocks: Vec<BlockSpec>,
    pub depth_projectable: bool,
    pub trunk_unit: String,
}

/// A CNN as stem, stages of blocks, and head.
///
/// Channel counts are *base* counts; `apply_width` produces a concrete architecture
/// whose base counts are the applied ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub name: String,
    pub default_resolution: u32,
    pub num_classes: u64,
    pub stem: Vec<LayerSpec>,
    pub stages: Vec<StageSpec>,
    pub head: Vec<LayerSpec>,
}

#[derive(Serialize)]
struct ArchDocumentRef<'a> {
    name: &'a str,
    default_resolution: u32,
    num_classes: u64,
    stem: &'a [LayerSpec],
    stages: &'a [StageSpec],
    head: &'a [LayerSpec],
    units: Vec<UnitDescriptor>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchDocument {
    name: String,
    default_resolution: u32,
    num_classes: u64,
    stem: Vec<LayerSpec>,
    stages: Vec<StageSpec>,
    head: Vec<LayerSpec>,
    #[serde(default)]
    units: Option<Vec<UnitDescriptor>>,
}

impl Serialize for ArchSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ArchDocumentRef {
            name: &self.name,
            default_resolution: self.default_resolution,
            num_classes: self.num_classes,
            stem: &self.stem,
            stages: &self.stages,
            head: &self.head,
            units: width_units(self).unwrap_or_default(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ArchSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = ArchDocument::deserialize(deserializer)?;
        let arch = ArchSpec {
            name: doc.name,
            default_resolution: doc.default_resolution,
            num_classes: doc.num_classes,
            stem: doc.stem,
            stages: doc.stages,
            head: doc.head,
        };
        let violations = validate(&arch);
        if !violations.is_empty() {
            return Err(de::Error::custom(format!(
                "invalid architecture: {}",
                violations.join("; ")
            )));
        }
        if let Some(declared) = doc.units {
            let derived = width_units(&arch).map_err(de::Error::custom)?;
            if !super::units::same_registry(&declared, &derived) {
                return Err(de::Error::custom(
                    "unit registry does not match the layers' width units",
                ));
            }
        }
        Ok(arch)
    }
}

impl ArchSpec {
    /// Canonical JSON: fixed field order, two-space indent, trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("ArchSpec serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn total_blocks(&self) -> usize {
        self.stages.iter().map(|s| s.blocks.len()).sum()
    }

    pub fn block_counts(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.blocks.len()).collect()
    }

    /// Returns `Err` with every violation when the architecture is invalid.
    pub fn ensure_valid(&self) -> Result<()> {
        let v = validate(self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArch(v))
        }
    }
}

/// One positive multiplier per non-fixed width unit, in `width_units` order.
#[derive(Debug, Clone, PartialEq)]
pub struct WidthVector<T> {
    entries: Vec<T>,
}

impl<T: Scalar> WidthVector<T> {
    pub fn new(entries: Vec<T>) -> Result<Self> {
        if let Some(index) = entries.iter().position(|v| !v.is_positive() || !v.as_f64().is_finite()) {
            return Err(Error::NonPositiveWidth { index });
        }
        Ok(WidthVector { entries })
    }

    pub fn uniform(len: usize, value: T) -> Self {
        WidthVector {
            entries: vec![value; len],
        }
    }

    pub fn ones(len: usize) -> Self {
        Self::uniform(len, T::one())
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<T> {
        self.entries.get(i).copied()
    }

    pub fn scaled(&self, c: T) -> Self {
        WidthVector {
            entries: self.entries.iter().map(|&v| v * c).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.entries.iter().map(Scalar::as_f64).collect()
    }

    pub fn is_uniform(&self) -> bool {
        self.entries.windows(2).all(|w| w[0] == w[1])
    }

    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("WidthVector serializes");
        s.push('\n');
        s
    }
}

impl<T: Scalar> Serialize for WidthVector<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.entries.len()))?;
        for v in &self.entries {
            seq.serialize_element(&v.to_decimal())?;
        }
        seq.end()
    }
}

impl<'de, T: Scalar> Deserialize<'de> for WidthVector<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct V<T>(std::marker::PhantomData<T>);

        impl<'de, T: Scalar> Visitor<'de> for V<T> {
            type Value = WidthVector<T>;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an array of positive decimal strings")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<Self::Value, A::Error> {
                let mut entries = Vec::new();
                while let Some(text) = seq.next_element::<String>()? {
                    let v = T::parse_decimal(&text)
                        .ok_or_else(|| de::Error::custom(format!("bad decimal `{text}`")))?;
                    entries.push(v);
                }
                WidthVector::new(entries).map_err(de::Error::custom)
            }
        }

        deserializer.deserialize_seq(V(std::marker::PhantomData))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Rational64;

    #[test]
    fn width_vector_json_uses_decimal_strings() {
        let w = WidthVector::new(vec![0.312f64, 1.0, 1.732]).unwrap();
        let json = serde_json::to_string(&w).unwrap();
        assert_eq!(json, r#"["0.312","1","1.732"]"#);
        let back: WidthVector<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, w);

        let exact: WidthVector<Rational64> = serde_json::from_str(&json).unwrap();
        assert_eq!(exact.entries()[0], Rational64::new(39, 125));
    }

    #[test]
    fn width_vector_rejects_non_positive() {
        assert!(matches!(
            WidthVector::new(vec![1.0f64, 0.0]),
            Err(Error::NonPositiveWidth { index: 1 })
        ));
        assert!(serde_json::from_str::<WidthVector<f64>>(r#"["-1"]"#).is_err());
        assert!(serde_json::from_str::<WidthVector<f64>>(r#"["x"]"#).is_err());
    }

    #[test]
    fn unit_ref_json_shape() {
        assert_eq!(serde_json::to_string(&UnitRef::Fixed).unwrap(), r#""fixed""#);
        assert_eq!(
            serde_json::to_string(&UnitRef::Local("mid".into())).unwrap(),
            r#"{"local":"mid"}"#
        );
    }
}
