//! Acceptance suite: one pass/fail line per criterion.
//!
//! Runs without the libtest harness so every criterion is attempted and
//! reported even when an earlier one fails. The process exits non-zero if
//! any criterion fails.
//!
//! The full-scale reference runs (criterion 8) only execute when
//! `ATL_FULL_SCALE=1` and the datasets and weight archives named by the
//! shipped configs are present; otherwise the configs are validated.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use atl_cli::config::{parse_file, resolve, Overrides};
use atl_core::analysis::{
    default_baseline, integrated_gradients, svcca_similarity, ActivationMatrix, LinearScorer,
};
use atl_core::datasets::synthetic::{ToneSet, ToneSetConfig};
use atl_core::datasets::{
    build_manifest, cache_features, split_folds, DatasetKind, FeatureStore, FoldSelector,
};
use atl_core::dsp::{AugmentationPolicy, DspConfig, MelTensor, Waveform, LOG_FLOOR};
use atl_core::ensemble::{ensemble_evaluate, ensemble_predict, softmax, Classifier};
use atl_core::models::{build_backbone, fuse_weights, Architecture, InitMode, Model, ModelRecipe, RecipeSpec, Segment};
use atl_core::report::emit_report;
use atl_core::training::{
    evaluate_model, scheduled_lr, train_model, Metrics, RunRecord, RunRegistry, TrainConfig, TrainOptions,
};
use atl_core::Execution;
use candle_core::DType;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if let false = $cond {
            return Err(format!($($msg)+));
        }
    };
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn within(limit: Duration, started: Instant) -> Result<String, String> {
    let t = started.elapsed();
    ensure!(t <= limit, "took {:.1}s, limit {:.0}s", t.as_secs_f64(), limit.as_secs_f64());
    Ok(format!("{:.1}s", t.as_secs_f64()))
}

fn tone_store(dir: &Path, n_clips: usize, n_classes: usize, seed: u64) -> Result<(ToneSet, FeatureStore), String> {
    let set = ToneSet::generate(ToneSetConfig::new(n_clips, n_classes, seed)).map_err(e2s)?;
    let dsp = DatasetKind::Synthetic.default_dsp();
    let report = cache_features(&set.manifest, &set, &dsp, &AugmentationPolicy::none(), dir, Execution::default())
        .map_err(e2s)?;
    Ok((set, report.store))
}

fn quiet<'a>() -> TrainOptions<'a> {
    TrainOptions::default()
}

// 1 ------------------------------------------------------------------------

fn corpus_or_synthetic(kind: DatasetKind, dsp: &DspConfig, n: usize) -> Result<(Vec<Waveform>, &'static str), String> {
    let var = match kind {
        DatasetKind::Esc50 => "ATL_ESC50_ROOT",
        DatasetKind::UrbanSound8K => "ATL_US8K_ROOT",
        _ => "ATL_GTZAN_ROOT",
    };
    if let Some(root) = std::env::var_os(var) {
        let m = build_manifest(kind, Path::new(&root)).map_err(e2s)?;
        let clips = m
            .entries
            .iter()
            .take(n)
            .map(|e| atl_core::dsp::load_audio(&e.path, dsp.sample_rate))
            .collect::<Result<Vec<_>, _>>()
            .map_err(e2s)?;
        return Ok((clips, "corpus"));
    }
    let mut cfg = ToneSetConfig::new(n, 5, 1);
    cfg.sample_rate = dsp.sample_rate;
    cfg.seconds = dsp.clip_seconds;
    let set = ToneSet::generate(cfg).map_err(e2s)?;
    let clips = set.manifest.entries.iter().map(|e| set.render(&e.clip_id)).collect::<Result<Vec<_>, _>>().map_err(e2s)?;
    Ok((clips, "synthetic"))
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut sources = Vec::new();
    for (kind, width) in [(DatasetKind::Esc50, 250), (DatasetKind::UrbanSound8K, 250), (DatasetKind::Gtzan, 1500)] {
        let dsp = kind.default_dsp();
        let (clips, source) = corpus_or_synthetic(kind, &dsp, 20)?;
        sources.push(format!("{kind}:{source}"));
        let shapes: BTreeSet<(usize, usize, usize)> = Execution::Parallel
            .map(&clips, |w| dsp.extract(w).map(|t| t.shape()))
            .into_iter()
            .collect::<Result<_, _>>()
            .map_err(e2s)?;
        ensure!(
            shapes == BTreeSet::from([(3, 128, width)]),
            "{kind}: shapes {shapes:?}, expected (3,128,{width})"
        );
    }

    let dsp = DatasetKind::Esc50.default_dsp();
    let silence = dsp.extract(&Waveform::silence(5.0, dsp.sample_rate).map_err(e2s)?).map_err(e2s)?;
    let floor = LOG_FLOOR.ln() as f32;
    ensure!(
        silence.data().iter().all(|&v| (v - floor).abs() <= 1e-5),
        "silence is not the constant log floor {floor}"
    );

    let sine = dsp.extract(&Waveform::sine(440.0, 5.0, dsp.sample_rate, 0.5).map_err(e2s)?).map_err(e2s)?;
    for (c, spec) in dsp.specs.iter().enumerate() {
        let fb = atl_core::dsp::mel_filterbank(spec, dsp.sample_rate).map_err(e2s)?;
        let nearest = fb
            .centers_hz()
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 440.0).abs().total_cmp(&(b.1 - 440.0).abs()))
            .map(|(i, _)| i)
            .unwrap();
        let (_, mels, t) = sine.shape();
        let energy: Vec<f64> = (0..mels)
            .map(|m| (0..t).map(|j| f64::from(sine.get(c, m, j))).sum::<f64>())
            .collect();
        let peak = (0..mels).max_by(|&a, &b| energy[a].total_cmp(&energy[b])).unwrap();
        ensure!(peak == nearest, "channel {c}: peak at mel {peak}, nearest to 440 Hz is {nearest}");
    }
    let t = within(Duration::from_secs(60), started)?;
    Ok(format!("shapes, silence floor and 440 Hz peak ({}; {t})", sources.join(", ")))
}

// 2 ------------------------------------------------------------------------

fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
}

fn inv_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = m.clone().symmetric_eigen();
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| 1.0 / v.sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

/// Canonical correlations from covariance matrices:
/// eigenvalues of `Saa^-1/2 Sab Sbb^-1 Sba Saa^-1/2` are the squared
/// correlations.
fn cca_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let center = |m: &DMatrix<f64>| {
        let mean = m.row_mean();
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] - mean[j])
    };
    let (a, b) = (center(a), center(b));
    let n = (a.nrows() - 1) as f64;
    let saa = a.transpose() * &a / n;
    let sbb = b.transpose() * &b / n;
    let sab = a.transpose() * &b / n;
    let k = inv_sqrt(&saa) * sab * inv_sqrt(&sbb);
    let m = &k * k.transpose();
    let mut rho: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().map(|v| v.max(0.0).sqrt()).collect();
    rho.sort_by(|x, y| y.total_cmp(x));
    rho
}

fn criterion_2() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = ActivationMatrix::new(gaussian(&mut rng, 500, 12), "probe", "a").map_err(e2s)?;
    let selfsim = svcca_similarity(&a, &a, 0.99).map_err(e2s)?;
    ensure!((selfsim.mean - 1.0).abs() <= 1e-6, "self-similarity {}", selfsim.mean);

    let r = gaussian(&mut rng, 12, 12) + DMatrix::identity(12, 12) * 3.0;
    ensure!(r.determinant().abs() > 1e-3, "transform is singular");
    let ar = ActivationMatrix::new(&a.values * r, "probe", "ar").map_err(e2s)?;
    let inv = svcca_similarity(&a, &ar, 1.0).map_err(e2s)?;
    ensure!((inv.mean - 1.0).abs() <= 1e-5, "invariance under invertible map: {}", inv.mean);

    let x = gaussian(&mut rng, 1000, 10);
    let y = gaussian(&mut rng, 1000, 10);
    let rep = svcca_similarity(
        &ActivationMatrix::new(x.clone(), "probe", "x").map_err(e2s)?,
        &ActivationMatrix::new(y.clone(), "probe", "y").map_err(e2s)?,
        1.0,
    )
    .map_err(e2s)?;
    ensure!(rep.mean < 0.2, "independent gaussians: mean correlation {}", rep.mean);
    let oracle = cca_oracle(&x, &y);
    ensure!(oracle.len() == rep.correlations.len(), "{} vs {} correlations", oracle.len(), rep.correlations.len());
    let worst = oracle
        .iter()
        .zip(&rep.correlations)
        .map(|(o, c)| (o - c).abs())
        .fold(0.0, f64::max);
    ensure!(worst <= 1e-6, "covariance oracle disagrees by {worst:e}");
    let t = within(Duration::from_secs(30), started)?;
    Ok(format!(
        "self {:.8}, invariance {:.8}, independent {:.4}, oracle gap {worst:.1e} ({t})",
        selfsim.mean, inv.mean, rep.mean
    ))
}

// 3 ------------------------------------------------------------------------

fn criterion_3() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shape = (3, 8, 6);
    let n = 3 * 8 * 6;
    let w: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let xs: Vec<f32> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let x = MelTensor::from_vec(xs.clone(), shape.0, shape.1, shape.2).map_err(e2s)?;
    let zero = MelTensor::zeros(shape.0, shape.1, shape.2);
    let scorer = LinearScorer { weights: vec![w.clone()], bias: vec![0.25] };
    for steps in [1, 7, 50] {
        let ig = integrated_gradients(&scorer, &x, &zero, "zero", steps, 0).map_err(e2s)?;
        for (i, v) in ig.values.iter().enumerate() {
            let exact = w[i] * f64::from(xs[i]);
            ensure!((v - exact).abs() <= 1e-12 * exact.abs().max(1.0), "linear IG[{i}] = {v}, expected {exact}");
        }
    }

    let dir = tempfile::tempdir().map_err(e2s)?;
    let (_, store) = tone_store(dir.path(), 10, 2, 3)?;
    let model = Model::random(Architecture::Tiny, 2, 3, DType::F64).map_err(e2s)?;
    let ids = vec![store.records()[0].clip_id.clone()];
    let x = store.examples(&ids, false).map_err(e2s)?.load(0).map_err(e2s)?;
    let baseline = default_baseline(&x);
    let mut residuals = Vec::new();
    let mut met_at = None;
    for steps in [25, 50, 100, 200, 400] {
        let ig = integrated_gradients(&model, &x, &baseline, "channel_minimum", steps, 0).map_err(e2s)?;
        let bound = 0.01 * (ig.score_input - ig.score_baseline).abs() + 1e-6;
        if met_at.is_none() && ig.residual <= bound {
            met_at = Some(steps);
        }
        residuals.push((steps, ig.residual));
    }
    let Some(met) = met_at else {
        return Err(format!("completeness residual above 1% at every step count: {residuals:?}"));
    };
    for w in residuals.windows(2) {
        ensure!(
            w[1].1 <= w[0].1 + 1e-7,
            "residual rose from {:.3e} at {} steps to {:.3e} at {}",
            w[0].1,
            w[0].0,
            w[1].1,
            w[1].0
        );
    }
    let t = within(Duration::from_secs(120), started)?;
    Ok(format!("linear exact, residual within 1% at {met} steps, monotone over {} step counts ({t})", residuals.len()))
}

// 4 ------------------------------------------------------------------------

fn criterion_4() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(e2s)?;
    let (set, store) = tone_store(dir.path(), 40, 2, 4)?;
    let source = Model::random(Architecture::Tiny, 7, 99, DType::F32).map_err(e2s)?;
    let archive = Arc::new(source.to_archive("synthetic", false).map_err(e2s)?);

    let fused = fuse_weights(&archive, Segment::Block4, 2, 5).map_err(e2s)?;
    let full = build_backbone(Architecture::Tiny, InitMode::Pretrained, 2, 5, Some(&archive)).map_err(e2s)?;
    for seg in Segment::FEATURES {
        ensure!(
            fused.segment_checksum(seg).map_err(e2s)? == full.segment_checksum(seg).map_err(e2s)?,
            "fuse(block4) differs from pretrained init at {seg}"
        );
        ensure!(
            fused.segment_checksum(seg).map_err(e2s)? == source.segment_checksum(seg).map_err(e2s)?,
            "pretrained init differs from the archive at {seg}"
        );
    }

    let plan = split_folds(&set.manifest, FoldSelector::Fold(1)).map_err(e2s)?;
    let mut cfg = TrainConfig::custom(5, 4);
    cfg.batch_size = 8;
    let recipe = ModelRecipe::pretrained(archive.clone()).frozen_through(Some(Segment::Block2));
    let mut model = recipe.instantiate(2, 4).map_err(e2s)?;
    let before: Vec<String> = Segment::ALL.iter().map(|&s| model.segment_checksum(s).unwrap()).collect();
    train_model(&mut model, &store, &plan, &cfg, &quiet()).map_err(e2s)?;
    for (i, &seg) in Segment::ALL.iter().enumerate() {
        let after = model.segment_checksum(seg).map_err(e2s)?;
        if seg <= Segment::Block2 {
            ensure!(after == before[i], "frozen {seg} changed during training");
        } else {
            ensure!(after != before[i], "trainable {seg} did not change");
        }
    }

    let recipe = ModelRecipe::pretrained(archive).truncated_after(Segment::Block3);
    let mut cut = recipe.instantiate(2, 4).map_err(e2s)?;
    ensure!(
        !cut.segments().contains(&Segment::Block4),
        "truncated model still has block4: {:?}",
        cut.segments()
    );
    let mut short = cfg.clone();
    short.epochs = 2;
    let record = train_model(&mut cut, &store, &plan, &short, &quiet()).map_err(e2s)?;
    let m = evaluate_model(&cut, &store, &plan.val_ids, Execution::default()).map_err(e2s)?;
    ensure!(m.accuracy == record.final_accuracy(), "re-evaluation differs from the run record");
    let t = within(Duration::from_secs(300), started)?;
    Ok(format!(
        "fuse(block4) bitwise equal, frozen checksums stable over 5 epochs, cut@block3 val acc {:.2} ({t})",
        m.accuracy
    ))
}

// 5 ------------------------------------------------------------------------

fn criterion_5() -> Outcome {
    let started = Instant::now();
    let p = TrainConfig::pretrained_70(0);
    for (epoch, lr) in [(0, 1e-4), (29, 1e-4), (30, 1e-5), (59, 1e-5), (60, 1e-6), (69, 1e-6)] {
        ensure!(scheduled_lr(epoch, &p) == lr, "pretrained schedule at epoch {epoch}: {}", scheduled_lr(epoch, &p));
    }
    let s = TrainConfig::scratch_450(0);
    for (epoch, lr) in [(0, 1e-4), (299, 1e-4), (300, 1e-5), (349, 1e-5), (350, 1e-6), (449, 1e-6)] {
        ensure!(scheduled_lr(epoch, &s) == lr, "scratch schedule at epoch {epoch}: {}", scheduled_lr(epoch, &s));
    }

    let dir = tempfile::tempdir().map_err(e2s)?;
    let (set, store) = tone_store(dir.path(), 100, 2, 5)?;
    let plan = split_folds(&set.manifest, FoldSelector::Fold(1)).map_err(e2s)?;
    let mut model = Model::random(Architecture::Tiny, 2, 5, DType::F32).map_err(e2s)?;
    let cfg = TrainConfig::custom(10, 5);
    let record = train_model(&mut model, &store, &plan, &cfg, &quiet()).map_err(e2s)?;
    let train_acc = evaluate_model(&model, &store, &plan.train_ids, Execution::default()).map_err(e2s)?.accuracy;
    let best_epoch = record.epochs.iter().map(|e| e.train_accuracy).fold(0.0, f64::max);
    ensure!(train_acc >= 0.95, "train accuracy {train_acc:.3} after 10 epochs (best running {best_epoch:.3})");
    let t = within(Duration::from_secs(300), started)?;
    Ok(format!("schedules exact, train accuracy {train_acc:.3} after 10 epochs ({t})"))
}

// 6 ------------------------------------------------------------------------

struct Fixed(Vec<Vec<f64>>);

impl Classifier for Fixed {
    fn num_classes(&self) -> usize {
        self.0[0].len()
    }

    fn logits(&self, items: &[&MelTensor]) -> atl_core::Result<Vec<Vec<f64>>> {
        Ok(items.iter().map(|x| self.0[x.get(0, 0, 0) as usize].clone()).collect())
    }
}

fn criterion_6() -> Outcome {
    // One confident member for class 0, two mild ones for class 1: the mean
    // of logits picks 0, the mean of softmax picks 1.
    let x = MelTensor::zeros(1, 1, 1);
    let members = [Fixed(vec![vec![10.0, 0.0]]), Fixed(vec![vec![0.0, 3.0]]), Fixed(vec![vec![0.0, 3.0]])];
    let refs: Vec<&dyn Classifier> = members.iter().map(|m| m as &dyn Classifier).collect();
    let p = ensemble_predict(&refs, &[&x]).map_err(e2s)?;
    let logit_mean = [10.0 / 3.0, 6.0 / 3.0];
    ensure!(logit_mean[0] > logit_mean[1], "fixture does not separate the orderings");
    ensure!(p.labels[0] == 1, "ensemble averaged logits instead of probabilities: {:?}", p.mean[0]);
    let expected: Vec<f64> = (0..2)
        .map(|k| (softmax(&[10.0, 0.0])[k] + 2.0 * softmax(&[0.0, 3.0])[k]) / 3.0)
        .collect();
    ensure!(
        p.mean[0].iter().zip(&expected).all(|(a, b)| (a - b).abs() <= 1e-12),
        "mean {:?}, expected {expected:?}",
        p.mean[0]
    );

    let dir = tempfile::tempdir().map_err(e2s)?;
    let (set, store) = tone_store(dir.path(), 20, 3, 6)?;
    let models: Vec<Model> = (0..3)
        .map(|s| Model::random(Architecture::Tiny, 3, 60 + s, DType::F32))
        .collect::<Result<_, _>>()
        .map_err(e2s)?;
    let ids: Vec<String> = set.manifest.entries.iter().map(|e| e.clip_id.clone()).collect();
    let inputs = store.examples(&ids, false).map_err(e2s)?.preloaded().map_err(e2s)?;
    let xs: Vec<MelTensor> = (0..inputs.len()).map(|i| inputs.load(i)).collect::<Result<_, _>>().map_err(e2s)?;
    let xr: Vec<&MelTensor> = xs.iter().collect();
    let forward: Vec<&dyn Classifier> = models.iter().map(|m| m as &dyn Classifier).collect();
    let backward: Vec<&dyn Classifier> = models.iter().rev().map(|m| m as &dyn Classifier).collect();
    let a = ensemble_predict(&forward, &xr).map_err(e2s)?;
    let b = ensemble_predict(&backward, &xr).map_err(e2s)?;
    let gap = a
        .mean
        .iter()
        .flatten()
        .zip(b.mean.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    ensure!(gap <= 1e-9, "member order changes the mean by {gap:e}");

    let single = evaluate_model(&models[0], &store, &ids, Execution::default()).map_err(e2s)?;
    let one = ensemble_evaluate(&forward[..1], &store, &ids, Execution::default()).map_err(e2s)?;
    ensure!(
        single.accuracy == one.accuracy && single.confusion == one.confusion,
        "one-member ensemble {} vs single model {}",
        one.accuracy,
        single.accuracy
    );
    Ok(format!("softmax before mean, permutation gap {gap:.1e}, one-member ensemble exact"))
}

// 7 ------------------------------------------------------------------------

const US8K_FOLD_SIZES: [usize; 10] = [873, 888, 925, 990, 936, 823, 838, 806, 816, 837];

fn fake_esc50(root: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(root.join("meta"))?;
    let mut csv = String::from("filename,fold,target,category,esc10,src_file,take\n");
    for fold in 1..=5 {
        for i in 0..400 {
            let class = i % 50;
            csv.push_str(&format!("{fold}-{i}-A-{class}.wav,{fold},{class},class{class:02},False,{i},A\n"));
        }
    }
    std::fs::write(root.join("meta/esc50.csv"), csv)
}

fn fake_us8k(root: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(root.join("metadata"))?;
    let mut csv = String::from("slice_file_name,fsID,start,end,salience,fold,classID,class\n");
    let mut k = 0;
    for (f, &n) in US8K_FOLD_SIZES.iter().enumerate() {
        for _ in 0..n {
            let class = k % 10;
            csv.push_str(&format!("{k}-{class}-0-0.wav,{k},0.0,4.0,1,{},{class},class{class}\n", f + 1));
            k += 1;
        }
    }
    std::fs::write(root.join("metadata/UrbanSound8K.csv"), csv)
}

fn fake_gtzan(root: &Path) -> std::io::Result<()> {
    for g in ["blues", "classical", "country", "disco", "hiphop", "jazz", "metal", "pop", "reggae", "rock"] {
        let dir = root.join("genres").join(g);
        std::fs::create_dir_all(&dir)?;
        for i in 0..100 {
            std::fs::write(dir.join(format!("{g}.{i:05}.wav")), b"")?;
        }
    }
    Ok(())
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().map_err(e2s)?;
    let mut notes = Vec::new();
    for (kind, sub, entries, folds) in [
        (DatasetKind::Esc50, "esc50", 2000, Some(5)),
        (DatasetKind::UrbanSound8K, "us8k", 8732, Some(10)),
        (DatasetKind::Gtzan, "gtzan", 1000, None),
    ] {
        let root = dir.path().join(sub);
        match kind {
            DatasetKind::Esc50 => fake_esc50(&root),
            DatasetKind::UrbanSound8K => fake_us8k(&root),
            _ => fake_gtzan(&root),
        }
        .map_err(e2s)?;
        let m = build_manifest(kind, &root).map_err(e2s)?;
        ensure!(m.len() == entries, "{kind}: {} entries, expected {entries}", m.len());
        let plans = m.cross_validation_plans(7).map_err(e2s)?;
        match folds {
            Some(k) => {
                ensure!(m.folds() == (1..=k).collect::<Vec<u32>>(), "{kind}: folds {:?}", m.folds());
                if kind == DatasetKind::UrbanSound8K {
                    for (f, &n) in US8K_FOLD_SIZES.iter().enumerate() {
                        let got = m.entries.iter().filter(|e| e.fold == Some(f as u32 + 1)).count();
                        ensure!(got == n, "us8k fold {} has {got} entries, expected {n}", f + 1);
                    }
                }
                ensure!(plans.len() == k as usize, "{kind}: {} plans", plans.len());
                let mut seen: Vec<&str> = plans.iter().flat_map(|p| p.val_ids.iter().map(String::as_str)).collect();
                seen.sort_unstable();
                let all: Vec<&str> = {
                    let mut v: Vec<&str> = m.entries.iter().map(|e| e.clip_id.as_str()).collect();
                    v.sort_unstable();
                    v
                };
                ensure!(seen == all, "{kind}: validation folds do not cover each clip exactly once");
                for p in &plans {
                    ensure!(p.train_ids.len() + p.val_ids.len() == entries, "{kind}: {} leaks or drops clips", p.selector);
                    let val: BTreeSet<&String> = p.val_ids.iter().collect();
                    ensure!(!p.train_ids.iter().any(|id| val.contains(id)), "{kind}: train and validation overlap");
                }
            }
            None => {
                ensure!(m.folds().is_empty(), "gtzan carries folds");
                let a = split_folds(&m, FoldSelector::Seed(11)).map_err(e2s)?;
                let b = split_folds(&m, FoldSelector::Seed(11)).map_err(e2s)?;
                let c = split_folds(&m, FoldSelector::Seed(12)).map_err(e2s)?;
                ensure!(a == b, "gtzan split is not reproducible from its seed");
                ensure!(a.val_ids != c.val_ids, "gtzan split ignores its seed");
                let mut per_class = vec![0usize; m.num_classes()];
                for id in &a.val_ids {
                    per_class[m.entry(id).unwrap().label] += 1;
                }
                ensure!(per_class.iter().all(|&n| n == 20), "gtzan validation per class: {per_class:?}");
                ensure!(a.train_ids.len() == 800, "gtzan train split has {} clips", a.train_ids.len());
            }
        }
        notes.push(format!("{kind} {entries}"));
    }
    Ok(format!("{}; folds cover each clip once; gtzan 20/class and seed-stable", notes.join(", ")))
}

// 8 ------------------------------------------------------------------------

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn criterion_8() -> Outcome {
    let mut files: Vec<PathBuf> = std::fs::read_dir(configs_dir())
        .map_err(e2s)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    ensure!(files.len() >= 19, "expected the full reference config set, found {}", files.len());
    for f in &files {
        let r = resolve(parse_file(f).map_err(e2s)?, &Overrides::default()).map_err(|e| format!("{}: {e}", f.display()))?;
        let name = f.file_stem().unwrap().to_string_lossy().into_owned();
        if name == "smoke_synthetic" {
            continue;
        }
        ensure!(r.train.base_lr == 1e-4 && r.train.weight_decay == 1e-3 && r.train.batch_size == 32, "{name}: optimiser settings");
        match r.init_mode {
            InitMode::Pretrained => {
                ensure!(r.train.epochs == 70 && r.train.lr_drop_epochs == vec![30, 60], "{name}: fine-tuning schedule");
                ensure!(r.ensemble.members == 5, "{name}: {} ensemble members", r.ensemble.members);
                ensure!(r.weights.is_some(), "{name}: no weight archive");
            }
            InitMode::Random => {
                ensure!(r.train.epochs == 450 && r.train.lr_drop_epochs == vec![300, 350], "{name}: scratch schedule")
            }
        }
    }
    let required = [
        "esc50_densenet201_pretrained",
        "esc50_densenet201_random",
        "urbansound8k_densenet201_pretrained",
    ];
    for r in required {
        ensure!(files.iter().any(|f| f.file_stem().unwrap() == r), "missing config {r}");
    }
    if std::env::var("ATL_FULL_SCALE").as_deref() == Ok("1") {
        return full_scale();
    }
    Ok(format!(
        "{} configs resolve with the reference settings; full-scale runs not executed (set ATL_FULL_SCALE=1)",
        files.len()
    ))
}

fn full_scale() -> Outcome {
    use atl_cli::commands;
    let load = |name: &str| {
        let path = configs_dir().join(format!("{name}.toml"));
        resolve(parse_file(&path).map_err(e2s)?, &Overrides::default()).map_err(e2s)
    };
    let close = |got: f64, want: f64, what: &str| -> Result<(), String> {
        ensure!((100.0 * got - want).abs() <= 1.5, "{what}: {:.2}% vs reference {want:.2}%", 100.0 * got);
        Ok(())
    };
    let dense = load("esc50_densenet201_pretrained")?;
    commands::prep(&dense).map_err(e2s)?;
    let (cv, _) = commands::cross_validation(&dense, None).map_err(e2s)?;
    close(cv.mean_accuracy, 91.16, "ESC-50 DenseNet single")?;
    let ens = commands::ensemble(&dense, None).map_err(e2s)?;
    let mean = ens.iter().filter_map(|e| e.accuracy()).sum::<f64>() / ens.len() as f64;
    close(mean, 92.89, "ESC-50 DenseNet ensemble")?;
    let random = load("esc50_densenet201_random")?;
    let (cv_r, _) = commands::cross_validation(&random, None).map_err(e2s)?;
    ensure!(
        (100.0 * (cv.mean_accuracy - cv_r.mean_accuracy) - 18.66).abs() <= 1.5,
        "pretrained-vs-random gap {:.2} points",
        100.0 * (cv.mean_accuracy - cv_r.mean_accuracy)
    );
    let us = load("urbansound8k_densenet201_pretrained")?;
    commands::prep(&us).map_err(e2s)?;
    let ens = commands::ensemble(&us, None).map_err(e2s)?;
    let mean = ens.iter().filter_map(|e| e.accuracy()).sum::<f64>() / ens.len() as f64;
    close(mean, 87.42, "UrbanSound8K DenseNet ensemble")?;
    Ok("full-scale reference reproduced within 1.5 points".into())
}

// 9 ------------------------------------------------------------------------

const TABLE_ONE: [(Architecture, [f64; 6]); 3] = [
    (Architecture::DenseNet201, [91.39, 88.50, 91.16, 72.50, 85.14, 76.32]),
    (Architecture::ResNet(50), [91.09, 87.90, 90.65, 67.40, 84.76, 73.26]),
    (Architecture::InceptionV3, [90.00, 86.30, 87.34, 64.50, 84.37, 75.24]),
];

fn record(dataset: DatasetKind, arch: Architecture, init: InitMode, selector: FoldSelector, accuracy: f64) -> RunRecord {
    let model = RecipeSpec::new(arch, init);
    let config = TrainConfig::pretrained_70(0);
    RunRecord {
        run_id: atl_core::training::run_id(dataset, &model, selector, 0, None),
        dataset,
        selector,
        architecture: arch,
        init_mode: init,
        model,
        config,
        epochs: Vec::new(),
        final_val: Metrics {
            accuracy,
            per_class_accuracy: Vec::new(),
            confusion: Vec::new(),
            support: Vec::new(),
            total: 0,
            loss: None,
        },
        checkpoint: None,
        wall_clock_s: 0.0,
        num_parameters: 0,
        train_examples: 0,
        val_examples: 0,
    }
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(e2s)?;
    let registry = RunRegistry::new(dir.path());
    let datasets = [DatasetKind::Gtzan, DatasetKind::Esc50, DatasetKind::UrbanSound8K];
    for (arch, values) in TABLE_ONE {
        for (i, v) in values.iter().enumerate() {
            let dataset = datasets[i / 2];
            let init = if i % 2 == 0 { InitMode::Pretrained } else { InitMode::Random };
            let selector = match dataset.official_folds() {
                Some(_) => FoldSelector::Fold(1),
                None => FoldSelector::Seed(0),
            };
            let r = record(dataset, arch, init, selector, v / 100.0);
            let run_dir = registry.run_dir(&r.run_id);
            std::fs::create_dir_all(&run_dir).map_err(e2s)?;
            std::fs::write(run_dir.join("record.json"), serde_json::to_vec(&r).map_err(e2s)?).map_err(e2s)?;
        }
    }
    let out = emit_report(&registry, &dir.path().join("reports")).map_err(e2s)?;
    let csv = std::fs::read_to_string(&out.pretrained_vs_random).map_err(e2s)?;
    let expected = "\
model,gtzan_pretrained,gtzan_random,esc50_pretrained,esc50_random,urbansound8k_pretrained,urbansound8k_random
DenseNet,91.39%,88.50%,91.16%,72.50%,85.14%,76.32%
ResNet,91.09%,87.90%,90.65%,67.40%,84.76%,73.26%
Inception,90.00%,86.30%,87.34%,64.50%,84.37%,75.24%
";
    ensure!(csv == expected, "report CSV differs:\n{csv}");
    Ok("pretrained-vs-random table reproduced verbatim".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("DSP shape suite", criterion_1),
        ("SVCCA oracle suite", criterion_2),
        ("integrated-gradients suite", criterion_3),
        ("weight-surgery suite", criterion_4),
        ("training sanity", criterion_5),
        ("ensemble suite", criterion_6),
        ("dataset integrity", criterion_7),
        ("full-scale reference configs", criterion_8),
        ("report emitter", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(msg) => println!("criterion {}: PASS  {name}: {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {msg}", i + 1)
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
