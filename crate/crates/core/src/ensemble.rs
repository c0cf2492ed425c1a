//! Deep ensembles: independently seeded members whose softmax outputs are
//! averaged uniformly.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::datasets::{load_examples, DatasetKind, ExampleSet, FeatureStore, FoldPlan, FoldSelector, Split};
use crate::dsp::MelTensor;
use crate::models::{Model, ModelRecipe, RecipeSpec};
use crate::training::{train_model, Metrics, RunRecord, TrainConfig, TrainOptions};
use crate::{seed, Error, Execution, Result};

const BATCH: usize = 32;

/// Anything that produces per-class logits for a batch.
pub trait Classifier: Sync {
    fn num_classes(&self) -> usize;
    fn logits(&self, items: &[&MelTensor]) -> Result<Vec<Vec<f64>>>;
}

impl Classifier for Model {
    fn num_classes(&self) -> usize {
        Model::num_classes(self)
    }

    fn logits(&self, items: &[&MelTensor]) -> Result<Vec<Vec<f64>>> {
        Model::logits(self, items)
    }
}

/// Numerically stable softmax of one row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    /// `members[m][i]` is member `m`'s softmax row for input `i`.
    pub members: Vec<Vec<Vec<f64>>>,
    pub mean: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

fn check_members(models: &[&dyn Classifier]) -> Result<usize> {
    let first = models
        .first()
        .ok_or_else(|| Error::Domain("ensemble has no members".into()))?
        .num_classes();
    if let Some(m) = models.iter().find(|m| m.num_classes() != first) {
        return Err(Error::Domain(format!(
            "members disagree on class count ({first} vs {})",
            m.num_classes()
        )));
    }
    Ok(first)
}

/// Softmax per member, then the unweighted mean over members.
pub fn ensemble_predict(models: &[&dyn Classifier], inputs: &[&MelTensor]) -> Result<EnsemblePrediction> {
    let c = check_members(models)?;
    let members = models
        .iter()
        .map(|m| {
            let rows = m.logits(inputs)?;
            if rows.len() != inputs.len() || rows.iter().any(|r| r.len() != c) {
                return Err(Error::Domain("member returned a malformed logit matrix".into()));
            }
            Ok(rows.iter().map(|r| softmax(r)).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / members.len() as f64;
    let mean: Vec<Vec<f64>> = (0..inputs.len())
        .map(|i| {
            let mut acc = vec![0.0; c];
            for m in &members {
                for (a, p) in acc.iter_mut().zip(&m[i]) {
                    *a += p;
                }
            }
            acc.iter_mut().for_each(|a| *a *= scale);
            acc
        })
        .collect();
    let labels = mean.iter().map(|r| crate::training::argmax(r)).collect();
    Ok(EnsemblePrediction { members, mean, labels })
}

/// Metrics of the averaged-softmax argmax over every item of `set`.
pub fn ensemble_evaluate_examples(models: &[&dyn Classifier], set: &ExampleSet, exec: Execution) -> Result<Metrics> {
    let c = check_members(models)?;
    if set.is_empty() {
        return Err(Error::Domain("cannot evaluate on an empty set".into()));
    }
    let n_batches = set.len().div_ceil(BATCH);
    let parts = exec.map_range(n_batches, |b| -> Result<(Vec<usize>, Vec<usize>, f64)> {
        let idx: Vec<usize> = (b * BATCH..((b + 1) * BATCH).min(set.len())).collect();
        let tensors = idx.iter().map(|&i| set.load(i)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&MelTensor> = tensors.iter().collect();
        let p = ensemble_predict(models, &refs)?;
        let labels: Vec<usize> = idx.iter().map(|&i| set.label(i)).collect();
        let nll = labels.iter().zip(&p.mean).map(|(&y, r)| -r[y].max(f64::MIN_POSITIVE).ln()).sum();
        Ok((labels, p.labels, nll))
    });
    let (mut y, mut yhat, mut nll) = (Vec::new(), Vec::new(), 0.0);
    for part in parts {
        let (a, b, l) = part?;
        y.extend(a);
        yhat.extend(b);
        nll += l;
    }
    let mut m = Metrics::from_predictions(&y, &yhat, c)?;
    m.loss = Some(nll / y.len() as f64);
    Ok(m)
}

/// Ensemble metrics on the base records of `ids`.
pub fn ensemble_evaluate(models: &[&dyn Classifier], store: &FeatureStore, ids: &[String], exec: Execution) -> Result<Metrics> {
    if ids.is_empty() {
        return Err(Error::Domain("evaluation ids are empty".into()));
    }
    ensemble_evaluate_examples(models, &store.examples(ids, false)?, exec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub members: usize,
    pub root_seed: u64,
    /// Explicit member seeds; derived from `root_seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub member_seeds: Option<Vec<u64>>,
}

impl EnsembleConfig {
    pub fn new(members: usize, root_seed: u64) -> Self {
        Self { members, root_seed, member_seeds: None }
    }

    pub fn seeds(&self) -> Vec<u64> {
        match &self.member_seeds {
            Some(s) => s.clone(),
            None => (0..self.members).map(|i| seed::member_seed(self.root_seed, i)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.members < 2 {
            return Err(Error::Config(format!("an ensemble needs at least 2 members, got {}", self.members)));
        }
        let seeds = self.seeds();
        if seeds.len() != self.members {
            return Err(Error::Config(format!(
                "{} member seeds given for {} members",
                seeds.len(),
                self.members
            )));
        }
        if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
            return Err(Error::Config("ensemble member seeds must be pairwise distinct".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberOutcome {
    pub index: usize,
    pub seed: u64,
    pub run: Option<RunRecord>,
    pub error: Option<String>,
}

impl MemberOutcome {
    pub fn healthy(&self) -> bool {
        self.run.is_some()
    }
}

/// Result of [`run_ensemble`]; serialized as the ensemble descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRun {
    pub id: String,
    pub dataset: DatasetKind,
    pub root_seed: u64,
    pub selector: FoldSelector,
    pub model: RecipeSpec,
    pub members: Vec<MemberOutcome>,
    pub member_run_ids: Vec<String>,
    pub ensemble: Option<Metrics>,
    pub warnings: Vec<String>,
}

impl EnsembleRun {
    pub fn member_accuracies(&self) -> Vec<f64> {
        self.members
            .iter()
            .filter_map(|m| m.run.as_ref().map(|r| r.final_accuracy()))
            .collect()
    }

    pub fn accuracy(&self) -> Option<f64> {
        self.ensemble.as_ref().map(|m| m.accuracy)
    }
}

/// Train `cfg.members` models on one plan, differing only in seed (head
/// initialisation, random segments and batch order), then evaluate the
/// averaged softmax on the validation split. Members that fail are flagged;
/// evaluation needs at least two healthy members.
pub fn run_ensemble(
    cfg: &EnsembleConfig,
    recipe: &ModelRecipe,
    train: &TrainConfig,
    store: &FeatureStore,
    plan: &FoldPlan,
    opts: &TrainOptions,
) -> Result<EnsembleRun> {
    cfg.validate()?;
    train.validate()?;
    let seeds = cfg.seeds();
    let jobs: Vec<(usize, u64)> = seeds.iter().copied().enumerate().collect();
    let trained = opts.exec.map(&jobs, |&(i, s)| -> Result<(Model, RunRecord)> {
        let mut model = recipe.instantiate(store.num_classes(), s)?;
        let tag = format!("{}m{i}", opts.tag.map(|t| format!("{t}-")).unwrap_or_default());
        let member_opts = TrainOptions { tag: Some(&tag), ..*opts };
        let record = train_model(&mut model, store, plan, &train.clone().with_seed(s), &member_opts)?;
        Ok((model, record))
    });
    let mut members = Vec::new();
    let mut models = Vec::new();
    let mut warnings = Vec::new();
    for ((i, s), t) in jobs.iter().zip(trained) {
        match t {
            Ok((m, r)) => {
                members.push(MemberOutcome { index: *i, seed: *s, run: Some(r), error: None });
                models.push(m);
            }
            Err(e) => {
                let w = format!("member {i} (seed {s}) failed: {e}");
                log::warn!("{w}");
                warnings.push(w);
                members.push(MemberOutcome { index: *i, seed: *s, run: None, error: Some(e.to_string()) });
            }
        }
    }
    let member_run_ids = members.iter().filter_map(|m| m.run.as_ref().map(|r| r.run_id.clone())).collect();
    let id = format!(
        "{}-{}-{}-{}-ens{}-r{}",
        store.index().dataset.name(),
        recipe.spec.architecture,
        recipe.spec.init_mode,
        plan.selector,
        cfg.members,
        cfg.root_seed
    );
    let mut run = EnsembleRun {
        id,
        dataset: store.index().dataset,
        root_seed: cfg.root_seed,
        selector: plan.selector,
        model: recipe.spec.clone(),
        members,
        member_run_ids,
        ensemble: None,
        warnings,
    };
    let result = if models.len() >= 2 {
        let val = load_examples(store, plan, Split::Validation, false)?;
        let refs: Vec<&dyn Classifier> = models.iter().map(|m| m as &dyn Classifier).collect();
        run.ensemble = Some(ensemble_evaluate_examples(&refs, &val, opts.exec)?);
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "only {} of {} ensemble members are healthy; at least 2 are required",
            models.len(),
            cfg.members
        )))
    };
    if let Some(reg) = opts.registry {
        write_ensemble(reg.root().join("ensembles"), &run)?;
    }
    result.map(|_| run)
}

/// Write `<dir>/<id>.json` (descriptor) and `<dir>/<id>.csv` (per-member and
/// ensemble accuracy).
pub fn write_ensemble(dir: PathBuf, run: &EnsembleRun) -> Result<()> {
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let json = dir.join(format!("{}.json", run.id));
    std::fs::write(&json, serde_json::to_vec_pretty(run)?).map_err(|e| Error::io(&json, e))?;
    let path = dir.join(format!("{}.csv", run.id));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["member", "run_id", "seed", "accuracy"])?;
    for m in &run.members {
        let (id, acc) = match &m.run {
            Some(r) => (r.run_id.clone(), r.final_accuracy().to_string()),
            None => (String::new(), "failed".into()),
        };
        w.write_record([m.index.to_string(), id, m.seed.to_string(), acc])?;
    }
    let acc = run.accuracy().map(|a| a.to_string()).unwrap_or_else(|| "unavailable".into());
    w.write_record(["ensemble".to_string(), run.id.clone(), run.root_seed.to_string(), acc])?;
    w.flush().map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(&[1000.0, 999.0, -5.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > p[1]);
    }

    #[test]
    fn config_rejects_duplicate_seeds_and_singletons() {
        let mut c = EnsembleConfig::new(2, 0);
        c.member_seeds = Some(vec![4, 4]);
        assert!(c.validate().is_err());
        assert!(EnsembleConfig::new(1, 0).validate().is_err());
        assert!(EnsembleConfig::new(5, 0).validate().is_ok());
    }
}
