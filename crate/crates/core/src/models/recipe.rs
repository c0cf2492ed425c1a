use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{build_backbone, fuse_weights, Architecture, InitMode, Model, Segment, WeightArchive};
use crate::{Error, Result};

/// Serializable part of a [`ModelRecipe`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecipeSpec {
    pub architecture: Architecture,
    pub init_mode: InitMode,
    /// Pretrained through this segment, random after it. Only with
    /// pretrained init; `None` means through block4.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuse_through: Option<Segment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_through: Option<Segment>,
    #[serde(default = "default_last_kept")]
    pub last_kept: Segment,
}

fn default_last_kept() -> Segment {
    Segment::Block4
}

impl RecipeSpec {
    /// No fusion, freezing or truncation.
    pub fn is_plain(&self) -> bool {
        self.fuse_through.is_none() && self.frozen_through.is_none() && self.last_kept == Segment::Block4
    }

    pub fn new(architecture: Architecture, init_mode: InitMode) -> Self {
        Self {
            architecture,
            init_mode,
            fuse_through: None,
            frozen_through: None,
            last_kept: Segment::Block4,
        }
    }
}

/// Everything needed to instantiate fresh models for folds and ensemble
/// members.
#[derive(Clone, Debug)]
pub struct ModelRecipe {
    pub spec: RecipeSpec,
    pub archive: Option<Arc<WeightArchive>>,
}

impl ModelRecipe {
    pub fn random(architecture: Architecture) -> Self {
        Self {
            spec: RecipeSpec::new(architecture, InitMode::Random),
            archive: None,
        }
    }

    pub fn pretrained(archive: Arc<WeightArchive>) -> Self {
        Self {
            spec: RecipeSpec::new(archive.provenance.architecture, InitMode::Pretrained),
            archive: Some(archive),
        }
    }

    pub fn fused_through(mut self, cut: Segment) -> Self {
        self.spec.fuse_through = Some(cut);
        self
    }

    pub fn frozen_through(mut self, seg: Option<Segment>) -> Self {
        self.spec.frozen_through = seg;
        self
    }

    pub fn truncated_after(mut self, seg: Segment) -> Self {
        self.spec.last_kept = seg;
        self
    }

    pub fn instantiate(&self, num_classes: usize, seed: u64) -> Result<Model> {
        let s = &self.spec;
        let mut m = match (s.init_mode, s.fuse_through) {
            (InitMode::Pretrained, Some(cut)) => {
                let a = self.archive.as_deref().ok_or_else(|| {
                    Error::Initialization("weight fusion requested without a pretrained archive".into())
                })?;
                fuse_weights(a, cut, num_classes, seed)?
            }
            (InitMode::Random, Some(_)) => {
                return Err(Error::Config("fuse_through requires pretrained initialisation".into()))
            }
            (init, None) => build_backbone(s.architecture, init, num_classes, seed, self.archive.as_deref())?,
        };
        if s.last_kept != Segment::Block4 {
            m = m.truncate_after(s.last_kept, num_classes, seed)?;
        }
        m.set_trainable(s.frozen_through)?;
        Ok(m)
    }
}
