use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::datasets::{FeatureStore, FoldPlan};
use crate::models::{ModelRecipe, Segment, WeightArchive};
use crate::training::{train_model, TrainConfig, TrainOptions};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationKind {
    /// Pretrained weights up to the cut, random after it.
    Fusion,
    /// Pretrained everywhere, frozen up to the cut.
    Freeze,
    /// Pretrained, with every segment after the cut removed.
    Cutoff,
}

impl AblationKind {
    pub fn name(self) -> &'static str {
        match self {
            AblationKind::Fusion => "fusion",
            AblationKind::Freeze => "freeze",
            AblationKind::Cutoff => "cutoff",
        }
    }

    pub fn cut_points(self) -> Vec<Segment> {
        match self {
            AblationKind::Fusion | AblationKind::Freeze => Segment::FEATURES.to_vec(),
            AblationKind::Cutoff => vec![Segment::Block2, Segment::Block3, Segment::Block4],
        }
    }

    pub fn recipe(self, archive: Arc<WeightArchive>, cut: Segment) -> Result<ModelRecipe> {
        if !self.cut_points().contains(&cut) {
            return Err(Error::Domain(format!("{cut} is not a valid {} cut point", self.name())));
        }
        let base = ModelRecipe::pretrained(archive);
        Ok(match self {
            AblationKind::Fusion => base.fused_through(cut),
            AblationKind::Freeze => base.frozen_through(Some(cut)),
            AblationKind::Cutoff => base.truncated_after(cut),
        })
    }
}

impl std::fmt::Display for AblationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AblationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fusion" => Ok(AblationKind::Fusion),
            "freeze" => Ok(AblationKind::Freeze),
            "cutoff" => Ok(AblationKind::Cutoff),
            _ => Err(Error::Config(format!("unknown ablation `{s}` (expected fusion, freeze or cutoff)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub cut: Segment,
    pub val_accuracy: Option<f64>,
    pub run_id: Option<String>,
    pub error: Option<String>,
    /// Segment checksums of frozen segments before and after training.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frozen_checksums: Vec<(Segment, String, String)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCurve {
    pub kind: AblationKind,
    pub architecture: crate::models::Architecture,
    pub points: Vec<AblationPoint>,
    pub partial: bool,
}

impl AblationCurve {
    pub fn x(&self) -> Vec<Segment> {
        self.points.iter().map(|p| p.cut).collect()
    }

    pub fn y(&self) -> Vec<Option<f64>> {
        self.points.iter().map(|p| p.val_accuracy).collect()
    }

    /// `cut_point,val_accuracy,run_id`
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["cut_point", "val_accuracy", "run_id"])?;
        for p in &self.points {
            w.write_record([
                p.cut.name().to_string(),
                p.val_accuracy.map(|a| a.to_string()).unwrap_or_default(),
                p.run_id.clone().unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Train one model per cut point of `kind` on `plan`, each constructed from
/// `archive` by fusion, freezing or truncation.
pub fn run_ablation_suite(
    kind: AblationKind,
    archive: Arc<WeightArchive>,
    store: &FeatureStore,
    plan: &FoldPlan,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<AblationCurve> {
    cfg.validate()?;
    let architecture = archive.provenance.architecture;
    let cuts = kind.cut_points();
    let points = opts.exec.map(&cuts, |&cut| {
        let outcome = (|| -> Result<AblationPoint> {
            let recipe = kind.recipe(archive.clone(), cut)?;
            let mut model = recipe.instantiate(store.num_classes(), cfg.seed)?;
            let frozen: Vec<Segment> = model.segments().into_iter().filter(|&s| model.is_frozen(s)).collect();
            let before = frozen
                .iter()
                .map(|&s| model.segment_checksum(s))
                .collect::<Result<Vec<_>>>()?;
            let record = train_model(&mut model, store, plan, cfg, opts)?;
            let mut frozen_checksums = Vec::new();
            for (s, b) in frozen.into_iter().zip(before) {
                frozen_checksums.push((s, b, model.segment_checksum(s)?));
            }
            Ok(AblationPoint {
                cut,
                val_accuracy: Some(record.final_accuracy()),
                run_id: Some(record.run_id),
                error: None,
                frozen_checksums,
            })
        })();
        outcome.unwrap_or_else(|e| {
            log::error!("{kind} at {cut}: {e}");
            AblationPoint {
                cut,
                val_accuracy: None,
                run_id: None,
                error: Some(e.to_string()),
                frozen_checksums: Vec::new(),
            }
        })
    });
    let partial = points.iter().any(|p| p.val_accuracy.is_none());
    Ok(AblationCurve {
        kind,
        architecture,
        points,
        partial,
    })
}
