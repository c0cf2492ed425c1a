//! Backbone topologies. Parameter names follow the torchvision layouts so
//! that imported archives map one to one.

mod densenet;
mod inception;
mod resnet;
mod tiny;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::layers::{BoxLayer, Relu, Seq};
use super::params::{Builder, Segment};
use crate::{Error, Result};

/// One convolutional segment of a backbone.
pub(crate) struct SegmentModule {
    pub segment: Segment,
    pub body: BoxLayer,
    pub out_channels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Architecture {
    /// Four-block reference CNN for CPU-scale experiments.
    Tiny,
    DenseNet201,
    /// Residual network of the given depth (18, 34, 50, 101 or 152).
    ResNet(u32),
    InceptionV3,
}

impl Architecture {
    pub const RESNET_DEPTHS: [u32; 5] = [18, 34, 50, 101, 152];

    pub fn name(self) -> String {
        match self {
            Architecture::Tiny => "tiny".into(),
            Architecture::DenseNet201 => "densenet201".into(),
            Architecture::ResNet(d) => format!("resnet{d}"),
            Architecture::InceptionV3 => "inception_v3".into(),
        }
    }

    /// Name of the final linear layer.
    pub(crate) fn head_name(self) -> &'static str {
        match self {
            Architecture::Tiny => "classifier",
            Architecture::DenseNet201 => "classifier",
            Architecture::ResNet(_) | Architecture::InceptionV3 => "fc",
        }
    }

    /// Composite layers per dense block, for architectures that have them.
    pub fn dense_layers(self) -> Option<[usize; 4]> {
        match self {
            Architecture::DenseNet201 => Some(densenet::DENSENET201_BLOCKS),
            _ => None,
        }
    }

    pub(crate) fn build(self, b: &mut Builder) -> Result<Vec<SegmentModule>> {
        match self {
            Architecture::Tiny => tiny::build(b),
            Architecture::DenseNet201 => densenet::build(b, 32, densenet::DENSENET201_BLOCKS, 64),
            Architecture::ResNet(d) => resnet::build(b, d),
            Architecture::InceptionV3 => inception::build(b),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase().replace('-', "_");
        match lower.as_str() {
            "tiny" => Ok(Architecture::Tiny),
            "densenet201" | "densenet" | "densenet_201" => Ok(Architecture::DenseNet201),
            "resnet" => Ok(Architecture::ResNet(50)),
            "inception" | "inception_v3" | "inceptionv3" => Ok(Architecture::InceptionV3),
            other => {
                if let Some(d) = other.strip_prefix("resnet").and_then(|d| d.trim_start_matches('_').parse().ok()) {
                    if Architecture::RESNET_DEPTHS.contains(&d) {
                        return Ok(Architecture::ResNet(d));
                    }
                }
                Err(Error::Config(format!(
                    "unknown architecture `{s}` (expected tiny, densenet201, resnet{{18,34,50,101,152}} or inception_v3)"
                )))
            }
        }
    }
}

impl TryFrom<String> for Architecture {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Architecture> for String {
    fn from(a: Architecture) -> String {
        a.name()
    }
}

#[allow(clippy::too_many_arguments)]
/// conv -> batch norm -> ReLU, with `{prefix}.conv` / `{prefix}.bn` names.
pub(crate) fn basic_conv(
    b: &mut Builder,
    prefix: &str,
    cin: usize,
    cout: usize,
    kernel: (usize, usize),
    stride: usize,
    padding: (usize, usize),
    eps: f64,
) -> Result<BoxLayer> {
    let conv = b.conv(&format!("{prefix}.conv"), cin, cout, kernel, stride, padding)?;
    let bn = b.batch_norm(&format!("{prefix}.bn"), cout, eps)?;
    Ok(Box::new(Seq(vec![Box::new(conv), Box::new(bn), Box::new(Relu)])))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for a in [
            Architecture::Tiny,
            Architecture::DenseNet201,
            Architecture::ResNet(18),
            Architecture::ResNet(152),
            Architecture::InceptionV3,
        ] {
            assert_eq!(a.name().parse::<Architecture>().unwrap(), a);
        }
        assert_eq!("resnet".parse::<Architecture>().unwrap(), Architecture::ResNet(50));
        assert!("resnet20".parse::<Architecture>().is_err());
    }
}
