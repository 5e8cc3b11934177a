//! Stage bodies. Each stage reads its predecessors' files, so any one can be
//! rerun on its own.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use jmap_core::data::{
    corpus, generate_phantom, kfold, smote_balance, standardize, ClassLabel, Fold, Manifest, Modality, Sample, Scan,
    Subject, Template,
};
use jmap_core::morphometry::{jacobian_map_with, InputMode};
use jmap_core::registration::{read_field, register_affine, register_bspline, warp, write_field};
use jmap_core::volume::{mask_brain, normalize_intensity_with, read_nifti, write_nifti};
use jmap_core::{LabelVolume, Volume};
use jmap_explain::{aggregate_reports, grad_cam_3d, region_rank, render_table, three_views, RegionReport};
use jmap_net::train::batch;
use jmap_net::{checkpoint, curves_csv, evaluate, train_fold, ModelConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Arm, PipelineConfig};
use crate::error::{ensure_invariant, ConfigError};
use crate::report::{self, ArmMetrics};
use crate::workspace::{Stage, Workspace};

pub fn execute(ws: &Workspace, stage: Stage, arm: Option<Arm>, dir: &Path) -> Result<()> {
    let arm = || arm.ok_or_else(|| anyhow!("stage {} needs an arm", stage.name()));
    match stage {
        Stage::Phantom => phantom(ws, dir),
        Stage::Preprocess => preprocess(ws, dir),
        Stage::Register => register(ws, dir),
        Stage::Jacobian => jacobian(ws, dir),
        Stage::Balance => balance(ws, arm()?, dir),
        Stage::Train => train(ws, arm()?, dir),
        Stage::Evaluate => evaluate_stage(ws, arm()?, dir),
        Stage::Explain => explain(ws, arm()?, dir),
        Stage::RankRegions => rank(ws, arm()?, dir),
        Stage::Render => render(ws, arm()?, dir),
        Stage::Report => report_stage(ws, dir),
    }
}

fn read(path: &Path) -> Result<Volume> {
    read_nifti(path).with_context(|| format!("read {}", path.display()))
}

fn write(volume: &Volume, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    write_nifti(volume, path).with_context(|| format!("write {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text).with_context(|| format!("write {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn require(ws: &Workspace, stage: Stage, arm: Option<Arm>) -> Result<()> {
    if ws.is_done(stage, arm) {
        return Ok(());
    }
    let cmd = match stage {
        Stage::RankRegions => "rank-regions",
        s => s.name(),
    };
    match arm {
        Some(a) => bail!("stage {cmd} has not completed for arm {a}; run `jmap {cmd} --mode {a}` first"),
        None => bail!("stage {cmd} has not completed; run `jmap {cmd}` first"),
    }
}

/// Run `f` over the subjects in parallel, returning results in manifest order.
fn per_subject<T: Send>(label: &str, subjects: &[Subject], f: impl Fn(&Subject) -> Result<T> + Sync) -> Result<Vec<T>> {
    let done = AtomicUsize::new(0);
    let start = Instant::now();
    subjects
        .par_iter()
        .map(|s| {
            let out = f(s).with_context(|| format!("subject {}", s.id))?;
            let n = done.fetch_add(1, Ordering::Relaxed) + 1;
            if n % 8 == 0 || n == subjects.len() {
                eprintln!(
                    "[{label}] {n}/{} ({:.0} s)",
                    subjects.len(),
                    start.elapsed().as_secs_f64()
                );
            }
            Ok(out)
        })
        .collect()
}

// ---------------------------------------------------------------- paths

fn template_dir(ws: &Workspace) -> PathBuf {
    ws.stage_dir(Stage::Phantom, None).join("template")
}

fn manifest(ws: &Workspace) -> Result<Manifest> {
    require(ws, Stage::Phantom, None)?;
    let path = ws.stage_dir(Stage::Phantom, None).join("manifest.json");
    Manifest::load(&path).with_context(|| format!("load {}", path.display()))
}

/// Scan paths are relative to the data directory unless absolute.
fn resolve(ws: &Workspace, scan: &Scan) -> PathBuf {
    let p = Path::new(&scan.path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        ws.data_dir.join(p)
    }
}

pub fn atlas(ws: &Workspace) -> Result<LabelVolume> {
    let dir = template_dir(ws);
    let names_path = dir.join("atlas.json");
    let names: BTreeMap<u32, String> = serde_json::from_str(
        &fs::read_to_string(&names_path).with_context(|| format!("read {}", names_path.display()))?,
    )?;
    Ok(LabelVolume::from_volume(&read(&dir.join("atlas.nii"))?, names)?)
}

fn stem(m: Modality) -> &'static str {
    m.file_stem()
}

// ---------------------------------------------------------------- data stages

fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.starts_with('.') && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

fn load_names(path: &Path) -> Result<BTreeMap<u32, String>> {
    let text = fs::read_to_string(path).with_context(|| format!("read {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())).into())
}

fn phantom(ws: &Workspace, dir: &Path) -> Result<()> {
    let c = &ws.config;
    let needs_ct = c.modality.modalities().contains(&Modality::Ct);
    let tdir = dir.join("template");
    let (mri, ct, atlas) = match &c.template {
        None => {
            let t = Template::mini(c.dims);
            (t.mri, Some(t.ct), t.atlas)
        }
        Some(path) => {
            let mri = read(path)?;
            let ct = c.template_ct.as_deref().map(read).transpose()?;
            let atlas_path = c.atlas.as_deref().expect("validated with template");
            let names = match &c.atlas_names {
                Some(p) => load_names(p)?,
                None => BTreeMap::new(),
            };
            let raw = read(atlas_path)?;
            let mut names = names;
            for &v in raw.data() {
                let id = v.round().max(0.0) as u32;
                if id != 0 {
                    names.entry(id).or_insert_with(|| format!("Region {id}"));
                }
            }
            let atlas = LabelVolume::from_volume(&raw, names)?;
            if !atlas.geometry().same_grid(mri.geometry()) {
                return Err(ConfigError("atlas and template are on different grids".into()).into());
            }
            (mri, ct, atlas)
        }
    };
    if needs_ct && ct.is_none() {
        return Err(ConfigError(format!("modality {:?} needs template_ct", c.modality)).into());
    }
    write(&mri, &tdir.join("mri.nii"))?;
    if let Some(ct) = &ct {
        write(ct, &tdir.join("ct.nii"))?;
    }
    write(&atlas.to_volume(), &tdir.join("atlas.nii"))?;
    write_json(&tdir.join("atlas.json"), atlas.names())?;

    let manifest = match &c.data_root {
        Some(root) => {
            let path = root.join("manifest.json");
            let m = Manifest::load(&path).with_context(|| format!("load {}", path.display()))?;
            let mut subjects = m.subjects;
            for s in &mut subjects {
                if !valid_id(&s.id) {
                    return Err(ConfigError(format!("subject id `{}` is not a safe file name", s.id)).into());
                }
                for scan in &mut s.scans {
                    let p = root.join(&scan.path);
                    if !p.is_file() {
                        bail!("subject {}: missing scan {}", s.id, p.display());
                    }
                    scan.path = p.to_string_lossy().into_owned();
                }
            }
            Manifest::new(subjects)?
        }
        None => {
            let template = Template {
                mri,
                ct: ct.expect("built-in has CT"),
                atlas,
            };
            let entries = corpus(&c.corpus());
            let subjects = entries
                .par_iter()
                .map(|e| {
                    let p = generate_phantom(&e.spec, &template)?;
                    let sdir = dir.join(&e.id);
                    write(&p.mri, &sdir.join("mri.nii"))?;
                    write(&p.ct, &sdir.join("ct.nii"))?;
                    write(&p.labels.to_volume(), &sdir.join("labels.nii"))?;
                    let rel = |f: &str| format!("{}/{}/{f}", Stage::Phantom.name(), e.id);
                    Ok(Subject {
                        id: e.id.clone(),
                        cdr: e.cdr,
                        scans: vec![
                            Scan {
                                modality: Modality::Mri,
                                path: rel("mri.nii"),
                            },
                            Scan {
                                modality: Modality::Ct,
                                path: rel("ct.nii"),
                            },
                        ],
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Manifest::new(subjects)?
        }
    };
    for s in &manifest.subjects {
        s.class()?;
        for m in c.modality.modalities() {
            if s.scan(m).is_none() {
                bail!("subject {} has no {m:?} scan", s.id);
            }
        }
    }
    manifest.save(dir.join("manifest.json"))?;
    eprintln!("[phantom] {} subjects", manifest.len());
    Ok(())
}

fn preprocess(ws: &Workspace, dir: &Path) -> Result<()> {
    let c = &ws.config;
    let manifest = manifest(ws)?;
    let mods = ws.config.modality.modalities();
    for &m in &mods {
        let t = read(&template_dir(ws).join(format!("{}.nii", stem(m))))?;
        let (masked, mask) = mask_brain(&normalize_intensity_with(&t, c.clip()), c.mask_threshold());
        ensure_invariant(mask.count(1) > 0, || format!("template {} mask is empty", stem(m)))?;
        write(&masked, &dir.join("template").join(format!("{}.nii", stem(m))))?;
    }
    per_subject("preprocess", &manifest.subjects, |s| {
        for &m in &mods {
            let scan = s.scan(m).ok_or_else(|| anyhow!("no {m:?} scan"))?;
            let vol = read(&resolve(ws, scan))?;
            let (masked, mask) = mask_brain(&normalize_intensity_with(&vol, c.clip()), c.mask_threshold());
            ensure_invariant(mask.count(1) > 0, || {
                format!("{} {} brain mask is empty", s.id, stem(m))
            })?;
            write(&masked, &dir.join(&s.id).join(format!("{}.nii", stem(m))))?;
            write(
                &mask.to_volume(),
                &dir.join(&s.id).join(format!("{}_mask.nii", stem(m))),
            )?;
        }
        Ok(())
    })?;
    Ok(())
}

fn register(ws: &Workspace, dir: &Path) -> Result<()> {
    let manifest = manifest(ws)?;
    require(ws, Stage::Preprocess, None)?;
    let pre = ws.stage_dir(Stage::Preprocess, None);
    let cfg = ws.config.registration();
    let mods = ws.config.modality.modalities();
    let fixed = mods
        .iter()
        .map(|&m| read(&pre.join("template").join(format!("{}.nii", stem(m)))))
        .collect::<Result<Vec<_>>>()?;
    let rows = per_subject("register", &manifest.subjects, |s| {
        let mut rows = Vec::new();
        for (&m, fixed) in mods.iter().zip(&fixed) {
            let moving = read(&pre.join(&s.id).join(format!("{}.nii", stem(m))))?;
            let (affine, affine_report) = register_affine(fixed, &moving, &cfg)?;
            let r = register_bspline(fixed, &moving, &affine, &cfg)?;
            ensure_invariant(
                (0..3).all(|a| r.field.component(a).data().iter().all(|v| v.is_finite())),
                || format!("{} {}: non-finite displacement", s.id, stem(m)),
            )?;
            let sdir = dir.join(&s.id);
            fs::create_dir_all(&sdir)?;
            let m = stem(m);
            affine.save(sdir.join(format!("{m}_affine.txt")))?;
            r.transform.save(sdir.join(format!("{m}_bspline.txt")))?;
            write_field(&r.field, sdir.join(format!("{m}_field")))?;
            write(&warp(&moving, &r.field), &sdir.join(format!("{m}_warped.nii")))?;
            write_json(
                &sdir.join(format!("{m}_report.json")),
                &serde_json::json!({ "affine": affine_report, "deformable": r.report }),
            )?;
            rows.push(format!(
                "{},{m},{},{},{:?}",
                s.id,
                affine_report.final_objective().unwrap_or(f64::NAN),
                r.report.final_objective().unwrap_or(f64::NAN),
                r.report.status()
            ));
        }
        Ok(rows)
    })?;
    let mut csv = String::from("subject,modality,affine_objective,deformable_objective,status\n");
    for r in rows.into_iter().flatten() {
        csv.push_str(&r);
        csv.push('\n');
    }
    write_text(&dir.join("summary.csv"), &csv)
}

fn jacobian(ws: &Workspace, dir: &Path) -> Result<()> {
    let manifest = manifest(ws)?;
    require(ws, Stage::Register, None)?;
    let reg = ws.stage_dir(Stage::Register, None);
    let mask = atlas(ws)?.foreground();
    let opts = ws.config.jacobian();
    let mods = ws.config.modality.modalities();
    let rows = per_subject("jacobian", &manifest.subjects, |s| {
        let mut rows = Vec::new();
        for &m in &mods {
            let field = read_field(reg.join(&s.id).join(format!("{}_field", stem(m))))?;
            let jm = jacobian_map_with(&field, opts);
            ensure_invariant(jm.det.data().iter().all(|d| d.is_finite()), || {
                format!("{} {}: non-finite determinant", s.id, stem(m))
            })?;
            fs::create_dir_all(dir.join(&s.id))?;
            jm.save(dir.join(&s.id).join(stem(m)))?;
            let inside: Vec<f64> = jm
                .det
                .data()
                .iter()
                .zip(&mask)
                .filter(|(_, &k)| k)
                .map(|(&d, _)| d)
                .collect();
            let mean = inside.iter().sum::<f64>() / inside.len().max(1) as f64;
            let min = inside.iter().copied().fold(f64::INFINITY, f64::min);
            let folded = inside.iter().filter(|&&d| d <= 0.0).count();
            let [comp, none, exp] = jm.class_histogram();
            rows.push(format!(
                "{},{},{},{mean},{min},{folded},{comp},{none},{exp}",
                s.id,
                stem(m),
                s.cdr
            ));
        }
        Ok(rows)
    })?;
    let mut csv = String::from("subject,modality,cdr,mean_det,min_det,folded,compression,no_change,expansion\n");
    for r in rows.into_iter().flatten() {
        csv.push_str(&r);
        csv.push('\n');
    }
    write_text(&dir.join("summary.csv"), &csv)
}

// ---------------------------------------------------------------- samples

/// Model inputs for every subject, in manifest order. The arms differ only
/// in which volume is read here.
pub fn load_samples(ws: &Workspace, manifest: &Manifest, arm: Arm) -> Result<Vec<Sample>> {
    require(ws, Stage::Jacobian, None)?;
    let mask = atlas(ws)?.foreground();
    let reg = ws.stage_dir(Stage::Register, None);
    let jac = ws.stage_dir(Stage::Jacobian, None);
    let suffix = match ws.config.jacobian_input {
        InputMode::Det => "det",
        InputMode::LogDet => "logdet",
    };
    let mods = ws.config.modality.modalities();
    manifest
        .subjects
        .par_iter()
        .map(|s| {
            let channels = mods
                .iter()
                .map(|&m| {
                    let path = match arm {
                        Arm::Reg => reg.join(&s.id).join(format!("{}_warped.nii", stem(m))),
                        Arm::Jm => jac.join(&s.id).join(format!("{}_{suffix}.nii", stem(m))),
                    };
                    Ok(standardize(&read(&path)?, Some(&mask)))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Sample::from_channels(&channels, s.class()?, &s.id)?)
        })
        .collect()
}

fn folds(ws: &Workspace, manifest: &Manifest) -> Result<Vec<Fold>> {
    Ok(kfold(manifest, ws.config.folds, ws.config.seed)?)
}

fn smote_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(fold as u64 + 1)
}

fn pick(samples: &[Sample], ids: &[String]) -> Vec<Sample> {
    ids.iter()
        .filter_map(|id| samples.iter().find(|s| &s.subject_id == id).cloned())
        .collect()
}

/// Training set (balanced when configured) and validation set of one fold.
fn fold_sets(c: &PipelineConfig, samples: &[Sample], fold: &Fold) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let train = pick(samples, &fold.train);
    let validation = pick(samples, &fold.validation);
    let train = if c.balance {
        smote_balance(&train, c.smote_k, smote_seed(c.seed, fold.index))?
    } else {
        train
    };
    Ok((train, validation))
}

fn class_counts(samples: &[Sample]) -> BTreeMap<&'static str, usize> {
    ClassLabel::ALL
        .iter()
        .map(|c| (c.name(), samples.iter().filter(|s| s.label == *c).count()))
        .collect()
}

fn model_config(ws: &Workspace, samples: &[Sample]) -> Result<ModelConfig> {
    let first = samples.first().ok_or_else(|| anyhow!("no samples"))?;
    Ok(ws.config.model_for(first.channels, first.dims))
}

// ---------------------------------------------------------------- run stages

fn balance(ws: &Workspace, arm: Arm, dir: &Path) -> Result<()> {
    let manifest = manifest(ws)?;
    let samples = load_samples(ws, &manifest, arm)?;
    let folds = folds(ws, &manifest)?;
    write_json(&dir.join("folds.json"), &folds)?;
    for fold in &folds {
        ensure_invariant(fold.train.iter().all(|id| !fold.validation.contains(id)), || {
            format!("fold {} shares subjects between train and validation", fold.index)
        })?;
        let raw = pick(&samples, &fold.train);
        let (train, validation) = fold_sets(&ws.config, &samples, fold)?;
        let after = class_counts(&train);
        if ws.config.balance {
            let present: Vec<usize> = after.values().copied().filter(|&n| n > 0).collect();
            ensure_invariant(present.windows(2).all(|w| w[0] == w[1]), || {
                format!("fold {} is unbalanced after SMOTE: {after:?}", fold.index)
            })?;
        }
        let synthetic: Vec<&str> = train
            .iter()
            .filter(|s| s.synthetic)
            .map(|s| s.subject_id.as_str())
            .collect();
        write_json(
            &dir.join(format!("fold{}.json", fold.index)),
            &serde_json::json!({
                "fold": fold.index,
                "train": fold.train,
                "validation": validation.iter().map(|s| &s.subject_id).collect::<Vec<_>>(),
                "counts_before": class_counts(&raw),
                "counts_after": after,
                "synthetic": synthetic,
            }),
        )?;
    }
    Ok(())
}

fn train(ws: &Workspace, arm: Arm, dir: &Path) -> Result<()> {
    require(ws, Stage::Balance, Some(arm))?;
    let c = &ws.config;
    let manifest = manifest(ws)?;
    let samples = load_samples(ws, &manifest, arm)?;
    let model = model_config(ws, &samples)?;
    let cfg = c.train(c.seed);
    let mut curves = Vec::new();
    for fold in folds(ws, &manifest)? {
        let (tr, va) = fold_sets(c, &samples, &fold)?;
        let start = Instant::now();
        let out = train_fold(&model, &tr, &va, &cfg, fold.index)?;
        ensure_invariant(!out.curve.is_empty(), || {
            format!("fold {} trained no epochs", fold.index)
        })?;
        let fdir = dir.join(format!("fold{}", fold.index));
        fs::create_dir_all(&fdir)?;
        checkpoint::save(&out.best, &fdir.join("best.ckpt"))?;
        write_text(&fdir.join("curve.csv"), &curves_csv(&out.curve))?;
        let val = out.validation.as_ref().map(|e| e.metrics.accuracy);
        write_json(
            &fdir.join("summary.json"),
            &serde_json::json!({
                "fold": fold.index,
                "epochs": out.curve.len(),
                "best_epoch": out.best_epoch,
                "train_samples": tr.len(),
                "validation_samples": va.len(),
                "validation_accuracy": val,
            }),
        )?;
        eprintln!(
            "[train/{arm}] fold {}: {} epochs, best {}, val acc {:.3} ({:.0} s)",
            fold.index,
            out.curve.len(),
            out.best_epoch,
            val.unwrap_or(f64::NAN),
            start.elapsed().as_secs_f64()
        );
        curves.extend(out.curve);
    }
    write_text(&dir.join("curves.csv"), &curves_csv(&curves))
}

fn load_fold_model(ws: &Workspace, arm: Arm, fold: usize, expected: &ModelConfig) -> Result<jmap_net::Model> {
    let path = ws
        .stage_dir(Stage::Train, Some(arm))
        .join(format!("fold{fold}"))
        .join("best.ckpt");
    checkpoint::load_expecting(&path, expected).with_context(|| format!("load {}", path.display()))
}

fn evaluate_stage(ws: &Workspace, arm: Arm, dir: &Path) -> Result<()> {
    require(ws, Stage::Train, Some(arm))?;
    let manifest = manifest(ws)?;
    let samples = load_samples(ws, &manifest, arm)?;
    let model_cfg = model_config(ws, &samples)?;
    let mut per_fold = Vec::new();
    let mut csv = String::from("subject,fold,label,predicted,p_cn,p_mci,p_mld,p_mod\n");
    for fold in folds(ws, &manifest)? {
        let mut model = load_fold_model(ws, arm, fold.index, &model_cfg)?;
        let va = pick(&samples, &fold.validation);
        let e = evaluate(&mut model, &va, ws.config.batch_size)?;
        for ((s, p), probs) in va.iter().zip(&e.predictions).zip(&e.probabilities) {
            let _ = write!(
                csv,
                "{},{},{},{}",
                s.subject_id,
                fold.index,
                s.label.name(),
                ClassLabel::ALL[*p].name()
            );
            for q in probs {
                let _ = write!(csv, ",{q:.6}");
            }
            csv.push('\n');
        }
        write_json(&dir.join(format!("fold{}.json", fold.index)), &e.metrics)?;
        per_fold.push(e.metrics);
    }
    let summary = ArmMetrics::from_folds(arm, &per_fold).ok_or_else(|| anyhow!("no folds evaluated"))?;
    eprintln!("[evaluate/{arm}] mean fold accuracy {:.3}", summary.mean_accuracy);
    write_text(&dir.join("predictions.csv"), &csv)?;
    write_json(&dir.join("metrics.json"), &summary)
}

fn explain(ws: &Workspace, arm: Arm, dir: &Path) -> Result<()> {
    require(ws, Stage::Train, Some(arm))?;
    let manifest = manifest(ws)?;
    let samples = load_samples(ws, &manifest, arm)?;
    let model_cfg = model_config(ws, &samples)?;
    let geometry = atlas(ws)?.geometry().clone();
    for fold in folds(ws, &manifest)? {
        let mut model = load_fold_model(ws, arm, fold.index, &model_cfg)?;
        for s in pick(&samples, &fold.validation) {
            let (x, _) = batch(&[&s])?;
            let class = s.label.index();
            let heat = grad_cam_3d(&mut model, &x, class, ws.config.cam_layer, &geometry)?;
            ensure_invariant(heat.volume.data().iter().all(|v| (0.0..=1.0).contains(v)), || {
                format!("{}: heatmap outside [0, 1]", s.subject_id)
            })?;
            let sdir = dir.join(&s.subject_id);
            write(&heat.volume, &sdir.join("heatmap.nii"))?;
            write_json(
                &sdir.join("heatmap.json"),
                &serde_json::json!({ "fold": fold.index, "class": s.label.name(), "layer": heat.layer }),
            )?;
        }
    }
    Ok(())
}

fn rank(ws: &Workspace, arm: Arm, dir: &Path) -> Result<()> {
    require(ws, Stage::Explain, Some(arm))?;
    let manifest = manifest(ws)?;
    let atlas = atlas(ws)?;
    let heat_dir = ws.stage_dir(Stage::Explain, Some(arm));
    let mut by_class: BTreeMap<ClassLabel, Vec<RegionReport>> = BTreeMap::new();
    for s in &manifest.subjects {
        let heat = read(&heat_dir.join(&s.id).join("heatmap.nii"))?;
        let report = region_rank(&heat, &atlas, ws.config.include_background)?;
        let mut ranks: Vec<usize> = report.rows.iter().map(|r| r.rank).collect();
        ranks.sort_unstable();
        ensure_invariant(ranks.iter().enumerate().all(|(i, &r)| r == i + 1), || {
            format!("{}: region ranks are not 1..{}", s.id, ranks.len())
        })?;
        write_text(&dir.join(format!("{}.csv", s.id)), &report.to_csv())?;
        by_class.entry(s.class()?).or_default().push(report);
    }
    let mut columns = Vec::new();
    for (class, reports) in &by_class {
        let agg = aggregate_reports(reports)?;
        write_text(&dir.join(format!("{}.csv", class.name())), &agg.to_csv())?;
        columns.push((class.name(), agg));
    }
    let refs: Vec<(&str, &RegionReport)> = columns.iter().map(|(n, r)| (*n, r)).collect();
    let table = format!(
        "# Region ranking by mean Grad-CAM ({})\n\n{}",
        arm.label(),
        render_table(&refs)
    );
    write_text(&dir.join("table1.md"), &table)
}

fn render(ws: &Workspace, arm: Arm, dir: &Path) -> Result<()> {
    require(ws, Stage::Explain, Some(arm))?;
    let manifest = manifest(ws)?;
    let reg = ws.stage_dir(Stage::Register, None);
    let heat_dir = ws.stage_dir(Stage::Explain, Some(arm));
    let base_mod = stem(ws.config.modality.modalities()[0]);
    for s in &manifest.subjects {
        let base = read(&reg.join(&s.id).join(format!("{base_mod}_warped.nii")))?;
        let heat = read(&heat_dir.join(&s.id).join("heatmap.nii"))?;
        let sdir = dir.join(&s.id);
        fs::create_dir_all(&sdir)?;
        three_views(&base, &heat, &sdir, &s.id)?;
    }
    Ok(())
}

fn report_stage(ws: &Workspace, dir: &Path) -> Result<()> {
    let mut arms = Vec::new();
    for arm in Arm::ALL {
        if ws.is_done(Stage::Evaluate, Some(arm)) {
            let path = ws.stage_dir(Stage::Evaluate, Some(arm)).join("metrics.json");
            let text = fs::read_to_string(&path).with_context(|| format!("read {}", path.display()))?;
            arms.push(serde_json::from_str::<ArmMetrics>(&text)?);
        }
    }
    if arms.is_empty() {
        bail!("no arm has been evaluated; run `jmap evaluate` first");
    }
    write_text(&dir.join("table2.md"), &report::render(&arms))?;
    write_json(&dir.join("summary.json"), &arms)
}
