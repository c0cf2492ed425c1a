//! Accuracy tables and figures assembled from a run registry.
//!
//! Single-model cells average the folds of one experiment (one seed and tag
//! over every selector), then average experiments. Ensemble cells do the
//! same over ensemble descriptors. Nothing under the registry is modified.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{render_panels, AblationCurve, AblationKind, Series, WeightsChangeCurve};
use crate::datasets::DatasetKind;
use crate::ensemble::EnsembleRun;
use crate::models::{Architecture, InitMode};
use crate::training::{RunRecord, RunRegistry};
use crate::{Error, Result};

/// Leading column order of both tables.
pub const TABLE_DATASETS: [DatasetKind; 3] = [DatasetKind::Gtzan, DatasetKind::Esc50, DatasetKind::UrbanSound8K];

const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [148, 103, 189],
    [255, 127, 14],
    [23, 190, 207],
];

/// Short row label: "DenseNet", "ResNet", "Inception", ...
pub fn family(arch: Architecture) -> String {
    match arch {
        Architecture::DenseNet201 => "DenseNet".into(),
        Architecture::ResNet(50) => "ResNet".into(),
        Architecture::ResNet(d) => format!("ResNet{d}"),
        Architecture::InceptionV3 => "Inception".into(),
        Architecture::Tiny => "Tiny".into(),
    }
}

fn row_order(arch: Architecture) -> (u8, u32) {
    match arch {
        Architecture::DenseNet201 => (0, 0),
        Architecture::ResNet(d) => (1, if d == 50 { 0 } else { d }),
        Architecture::InceptionV3 => (2, 0),
        Architecture::Tiny => (3, 0),
    }
}

/// `0.9116` -> `"91.16%"`.
pub fn format_percent(fraction: f64) -> String {
    format!("{:.2}%", 100.0 * fraction)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub mean: f64,
    /// Population spread over experiments, or over the folds when there is
    /// only one experiment.
    pub std: f64,
    pub experiments: usize,
    pub runs: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn cell_stats(experiments: &BTreeMap<String, Vec<f64>>) -> Option<CellStats> {
    if experiments.is_empty() {
        return None;
    }
    let means: Vec<f64> = experiments.values().map(|v| mean_std(v).0).collect();
    let (mean, mut std) = mean_std(&means);
    if means.len() == 1 {
        std = mean_std(experiments.values().next()?).1;
    }
    Some(CellStats {
        mean,
        std,
        experiments: means.len(),
        runs: experiments.values().map(Vec::len).sum(),
    })
}

type CellKey = (DatasetKind, Architecture, InitMode);

/// An experiment is one run id with its fold selector removed.
fn experiment_key(r: &RunRecord) -> String {
    r.run_id.replacen(&format!("-{}-", r.selector), "-", 1)
}

/// Single-model statistics per (dataset, architecture, init) over plain
/// recipes; ablation runs are ignored.
pub fn single_model_cells(records: &[RunRecord]) -> BTreeMap<String, (CellKey, CellStats)> {
    let mut groups: BTreeMap<String, (CellKey, BTreeMap<String, Vec<f64>>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.model.is_plain()) {
        let key = (r.dataset, r.architecture, r.init_mode);
        groups
            .entry(format!("{}/{}/{}", r.dataset, r.architecture, r.init_mode))
            .or_insert_with(|| (key, BTreeMap::new()))
            .1
            .entry(experiment_key(r))
            .or_default()
            .push(r.final_accuracy());
    }
    groups
        .into_iter()
        .filter_map(|(k, (key, exps))| cell_stats(&exps).map(|c| (k, (key, c))))
        .collect()
}

/// Ensemble accuracy per (dataset, architecture, init): mean over selectors
/// of one root seed and size, then over those groups.
pub fn ensemble_cells(ensembles: &[EnsembleRun]) -> BTreeMap<String, (CellKey, CellStats)> {
    let mut groups: BTreeMap<String, (CellKey, BTreeMap<String, Vec<f64>>)> = BTreeMap::new();
    for e in ensembles.iter().filter(|e| e.model.is_plain()) {
        let Some(acc) = e.accuracy() else { continue };
        let key = (e.dataset, e.model.architecture, e.model.init_mode);
        groups
            .entry(format!("{}/{}/{}", e.dataset, e.model.architecture, e.model.init_mode))
            .or_insert_with(|| (key, BTreeMap::new()))
            .1
            .entry(format!("ens{}-r{}", e.members.len(), e.root_seed))
            .or_default()
            .push(acc);
    }
    groups
        .into_iter()
        .filter_map(|(k, (key, exps))| cell_stats(&exps).map(|c| (k, (key, c))))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    /// Cell by row label and column name.
    pub fn get(&self, row: &str, column: &str) -> Option<&str> {
        let c = self.header.iter().position(|h| h == column)?;
        let r = self.rows.iter().find(|r| r[0] == row)?;
        Some(r[c].as_str()).filter(|s| !s.is_empty())
    }
}

/// The three benchmark datasets, then any other dataset that has data.
fn columns<'a>(keys: impl Iterator<Item = &'a CellKey>) -> Vec<DatasetKind> {
    let mut cols = TABLE_DATASETS.to_vec();
    for (d, _, _) in keys {
        if !cols.contains(d) {
            cols.push(*d);
        }
    }
    cols
}

fn lookup(cells: &BTreeMap<String, (CellKey, CellStats)>, key: CellKey) -> Option<CellStats> {
    cells.values().find(|(k, _)| *k == key).map(|(_, c)| *c)
}

fn architectures<'a>(keys: impl Iterator<Item = &'a CellKey>) -> Vec<Architecture> {
    let mut archs: Vec<Architecture> = Vec::new();
    for (_, a, _) in keys {
        if !archs.contains(a) {
            archs.push(*a);
        }
    }
    archs.sort_by_key(|&a| row_order(a));
    archs
}

/// Pretrained versus random initialisation, one row per architecture.
pub fn table_pretrained_vs_random(records: &[RunRecord]) -> Table {
    let cells = single_model_cells(records);
    let cols = columns(cells.values().map(|(k, _)| k));
    let mut header = vec!["model".to_string()];
    for &d in &cols {
        header.push(format!("{d}_pretrained"));
        header.push(format!("{d}_random"));
    }
    let rows = architectures(cells.values().map(|(k, _)| k))
        .into_iter()
        .map(|arch| {
            let mut row = vec![family(arch)];
            for &d in &cols {
                for init in [InitMode::Pretrained, InitMode::Random] {
                    row.push(lookup(&cells, (d, arch, init)).map(|c| format_percent(c.mean)).unwrap_or_default());
                }
            }
            row
        })
        .collect();
    Table { header, rows }
}

/// Single model (mean ± spread) versus ensemble, one row per
/// (architecture, init) with any data.
pub fn table_single_vs_ensemble(records: &[RunRecord], ensembles: &[EnsembleRun]) -> Table {
    let single = single_model_cells(records);
    let ens = ensemble_cells(ensembles);
    let keys: Vec<&CellKey> = single.values().chain(ens.values()).map(|(k, _)| k).collect();
    let cols = columns(keys.iter().copied());
    let mut header = vec!["model".to_string()];
    for &d in &cols {
        header.push(format!("{d}_single"));
        header.push(format!("{d}_ensemble"));
    }
    let mut rows = Vec::new();
    for arch in architectures(keys.iter().copied()) {
        for init in [InitMode::Pretrained, InitMode::Random] {
            if !keys.iter().any(|(_, a, i)| *a == arch && *i == init) {
                continue;
            }
            let label = match init {
                InitMode::Pretrained => "Pretrained",
                InitMode::Random => "Random",
            };
            let mut row = vec![format!("{} ({label})", family(arch))];
            for &d in &cols {
                row.push(
                    lookup(&single, (d, arch, init))
                        .map(|c| format!("{:.2}±{}", 100.0 * c.mean, format_percent(c.std)))
                        .unwrap_or_default(),
                );
                row.push(lookup(&ens, (d, arch, init)).map(|c| format_percent(c.mean)).unwrap_or_default());
            }
            rows.push(row);
        }
    }
    Table { header, rows }
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&raw).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}

/// Ensemble descriptors under `<root>/ensembles/`.
pub fn load_ensembles(root: &Path) -> Result<Vec<EnsembleRun>> {
    json_files(&root.join("ensembles"))?.iter().map(|p| read_json(p)).collect()
}

/// Analysis curves under `<root>/analysis/`, keyed by file-name prefix
/// (`svcca-`, `fusion-`, `freeze-`, `cutoff-`).
pub fn load_curves(root: &Path) -> Result<(Vec<WeightsChangeCurve>, Vec<AblationCurve>)> {
    let mut change = Vec::new();
    let mut ablation = Vec::new();
    for p in json_files(&root.join("analysis"))? {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if name.starts_with("svcca-") {
            change.push(read_json(&p)?);
        } else if ["fusion-", "freeze-", "cutoff-"].iter().any(|k| name.starts_with(k)) {
            ablation.push(read_json(&p)?);
        }
    }
    Ok((change, ablation))
}

/// Weights change, fusion, freeze and (when present) cutoff panels side by
/// side. `None` when there is no curve at all.
pub fn render_figure(change: &[WeightsChangeCurve], ablation: &[AblationCurve], path: &Path) -> Result<Option<PathBuf>> {
    let color = |i: usize| PALETTE[i % PALETTE.len()];
    let mut panels: Vec<Vec<Series>> = Vec::new();
    if !change.is_empty() {
        panels.push(
            change
                .iter()
                .enumerate()
                .map(|(i, c)| Series { values: c.means(), color: color(i) })
                .collect(),
        );
    }
    for kind in [AblationKind::Fusion, AblationKind::Freeze, AblationKind::Cutoff] {
        let series: Vec<Series> = ablation
            .iter()
            .filter(|c| c.kind == kind)
            .enumerate()
            .map(|(i, c)| Series { values: c.y(), color: color(i) })
            .collect();
        if !series.is_empty() {
            panels.push(series);
        }
    }
    if panels.is_empty() {
        return Ok(None);
    }
    render_panels(&panels, (0.0, 1.0), path)?;
    Ok(Some(path.to_path_buf()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportOutput {
    pub pretrained_vs_random: PathBuf,
    pub single_vs_ensemble: PathBuf,
    pub figure: Option<PathBuf>,
    pub runs: usize,
    pub ensembles: usize,
}

/// Read `registry` and write `table1_pretrained_vs_random.csv`,
/// `table2_single_vs_ensemble.csv` and `fig2_transfer.png` into `out_dir`.
pub fn emit_report(registry: &RunRegistry, out_dir: &Path) -> Result<ReportOutput> {
    let records = registry.records()?;
    let ensembles = load_ensembles(registry.root())?;
    let (change, ablation) = load_curves(registry.root())?;
    if records.is_empty() && ensembles.is_empty() && change.is_empty() && ablation.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no runs, ensembles or analysis curves under {}",
            registry.root().display()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let t1 = out_dir.join("table1_pretrained_vs_random.csv");
    table_pretrained_vs_random(&records).write_csv(&t1)?;
    let t2 = out_dir.join("table2_single_vs_ensemble.csv");
    table_single_vs_ensemble(&records, &ensembles).write_csv(&t2)?;
    let figure = render_figure(&change, &ablation, &out_dir.join("fig2_transfer.png"))?;
    Ok(ReportOutput {
        pretrained_vs_random: t1,
        single_vs_ensemble: t2,
        figure,
        runs: records.len(),
        ensembles: ensembles.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_formatting_keeps_two_decimals() {
        assert_eq!(format_percent(0.9116), "91.16%");
        assert_eq!(format_percent(0.725), "72.50%");
        assert_eq!(format_percent(1.0), "100.00%");
    }

    #[test]
    fn single_experiment_spread_falls_back_to_folds() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), vec![0.5, 0.7]);
        let c = cell_stats(&m).unwrap();
        assert!((c.mean - 0.6).abs() < 1e-12);
        assert!((c.std - 0.1).abs() < 1e-12);
        m.insert("b".to_string(), vec![0.8]);
        let c = cell_stats(&m).unwrap();
        assert!((c.std - 0.1).abs() < 1e-12);
        assert_eq!((c.experiments, c.runs), (2, 3));
    }
}
