use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use cosfire_hash::config::{GridPoint, PipelineConfig};
use cosfire_hash::cosfire::{build_filter_bank, default_orientations, FilterBank, PrototypeCandidate};
use cosfire_hash::descriptors::{describe_images, DescriptorSet};
use cosfire_hash::eval::{
    class_distance_matrix, class_distance_matrix_cross, descriptor_flops, hashing_layers, map_at_r, mlp_flops,
    separability_ratio, ClassDistanceMatrix, FlopsBreakdown, REFERENCE_DESCRIPTOR_FLOPS,
};
use cosfire_hash::hashnet::{
    deserialize_model, load_sidecar, retrieval_map, save_model, train as train_network, Matrix, MlpParams,
    ModelSidecar, TrainHistory, REFERENCE_HIDDEN, REFERENCE_INPUT,
};
use cosfire_hash::imaging::{
    load_image, save_rawf32, sigma_clip, DatasetManifest, Image, ImageFormat, ManifestEntry, Split,
};
use cosfire_hash::retrieval::{
    binarize, binarize_rows, mean_average_precision, threshold_sweep_over, Hit, RetrievalIndex, ThresholdSweep,
};
use cosfire_hash::synthetic::{write_dataset, SyntheticConfig, SYNTHETIC_CLASSES};
use cosfire_hash::Error as CoreError;

use crate::report::{emit, write_csv};
use crate::workspace::{UsageError, Workspace};
use crate::GlobalOpts;

fn thousands(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn image_format(cfg: &PipelineConfig, path: &Path) -> anyhow::Result<ImageFormat> {
    cfg.image_format
        .or_else(|| ImageFormat::from_path(path))
        .ok_or_else(|| anyhow!("cannot tell the image format of {}; set `image_format` in the config", path.display()))
}

fn load_clipped_manifest(ws: &Workspace, cfg: &PipelineConfig) -> anyhow::Result<DatasetManifest> {
    let path = ws.require(ws.clipped_manifest(), "preprocessed image manifest", "preprocess")?;
    Ok(DatasetManifest::load(path, &cfg.classes)?)
}

fn load_bank(ws: &Workspace) -> anyhow::Result<FilterBank> {
    let path = ws.require(ws.bank(), "bank file", "build-bank")?;
    Ok(FilterBank::load(path)?)
}

fn load_descriptors(ws: &Workspace, split: Split) -> anyhow::Result<DescriptorSet> {
    let path = ws.require(ws.descriptors(split), "descriptor file", "describe")?;
    Ok(DescriptorSet::load(path)?)
}

fn load_model(ws: &Workspace) -> anyhow::Result<MlpParams> {
    let path = ws.require(ws.model(), "model file", "train")?;
    Ok(deserialize_model(path)?)
}

fn load_codes(ws: &Workspace, split: Split) -> anyhow::Result<RetrievalIndex> {
    let path = ws.require(ws.codes(split), "codes file", "encode")?;
    Ok(RetrievalIndex::load(path)?.0)
}

#[derive(Serialize)]
struct PreprocessReport {
    images: usize,
    per_split: BTreeMap<String, usize>,
    n_sigma: f64,
    output: PathBuf,
}

pub fn preprocess(g: &GlobalOpts, cfg: &PipelineConfig, manifest: Option<PathBuf>) -> anyhow::Result<()> {
    let manifest_path = manifest
        .or_else(|| cfg.manifest.clone())
        .ok_or_else(|| UsageError("no manifest given: pass --manifest or set `manifest` in the config".into()))?;
    let manifest = DatasetManifest::load(&manifest_path, &cfg.classes)?;
    if manifest.entries.is_empty() {
        return Err(CoreError::Empty(format!("manifest {}", manifest_path.display())).into());
    }
    let ws = Workspace::new(&cfg.work_dir);
    let out_dir = ws.clipped_dir();
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let results: Vec<Result<ManifestEntry, String>> = manifest
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let name = format!("{i:05}.rf32");
            let run = || -> anyhow::Result<()> {
                let img = load_image(&e.path, image_format(cfg, &e.path)?)?;
                let clipped = sigma_clip(&img, cfg.n_sigma, cfg.clip_max_iters)?;
                save_rawf32(&clipped, out_dir.join(&name))?;
                Ok(())
            };
            run().map_err(|err| format!("{}: {err:#}", e.path.display()))?;
            Ok(ManifestEntry {
                path: PathBuf::from(name),
                label: e.label.clone(),
                split: e.split,
            })
        })
        .collect();
    let failures: Vec<&String> = results.iter().filter_map(|r| r.as_ref().err()).collect();
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("unreadable: {f}");
        }
        bail!("{} of {} manifest entries could not be preprocessed", failures.len(), results.len());
    }
    let entries: Vec<ManifestEntry> = results.into_iter().map(|r| r.expect("checked above")).collect();
    let mut per_split = BTreeMap::new();
    for e in &entries {
        *per_split.entry(e.split.to_string()).or_insert(0) += 1;
    }
    DatasetManifest {
        classes: cfg.classes.clone(),
        entries,
    }
    .write(ws.clipped_manifest())?;

    let report = PreprocessReport {
        images: manifest.entries.len(),
        per_split,
        n_sigma: cfg.n_sigma,
        output: out_dir.clone(),
    };
    let text = format!(
        "clipped {} images at {} sigma into {}\n",
        report.images,
        cfg.n_sigma,
        out_dir.display()
    );
    emit(g, &ws.report("preprocess.json"), &report, &text)
}

#[derive(Serialize)]
struct BankReport {
    filters: usize,
    per_class: BTreeMap<String, usize>,
    mean_tuples: f64,
    orientations: usize,
    seed: u64,
}

pub fn build_bank(g: &GlobalOpts, cfg: &PipelineConfig) -> anyhow::Result<()> {
    let ws = Workspace::new(&cfg.work_dir);
    let manifest = load_clipped_manifest(&ws, cfg)?;
    let candidates: Vec<PrototypeCandidate> = manifest
        .split(Split::Train)
        .map(|(i, e)| PrototypeCandidate {
            id: i.to_string(),
            class: manifest.class_index(&e.label).expect("label validated on load"),
        })
        .collect();
    let bank = build_filter_bank(
        &cfg.classes,
        &candidates,
        cfg.filters_per_class,
        &cfg.cosfire,
        default_orientations(cfg.orientations),
        cfg.train.seed,
        |c| {
            let e = &manifest.entries[c.id.parse::<usize>().expect("numeric id")];
            load_image(&e.path, ImageFormat::Rawf32)
        },
    )?;
    bank.save(ws.bank())?;

    let mut per_class = BTreeMap::new();
    for o in bank.origins().iter().flatten() {
        *per_class.entry(o.class.clone()).or_insert(0) += 1;
    }
    let report = BankReport {
        filters: bank.len(),
        per_class,
        mean_tuples: bank.filters().iter().map(|f| f.len()).sum::<usize>() as f64 / bank.len() as f64,
        orientations: bank.orientations().len(),
        seed: cfg.train.seed,
    };
    let text = format!(
        "bank of {} filters ({} per class, {:.1} tuples on average) written to {}\n",
        report.filters,
        cfg.filters_per_class,
        report.mean_tuples,
        ws.bank().display()
    );
    emit(g, &ws.report("build-bank.json"), &report, &text)
}

fn split_images(manifest: &DatasetManifest, split: Split) -> anyhow::Result<(Vec<Image>, Vec<usize>, Vec<u32>)> {
    let picked: Vec<(usize, &ManifestEntry)> = manifest.split(split).collect();
    let images = picked
        .par_iter()
        .map(|(_, e)| load_image(&e.path, ImageFormat::Rawf32))
        .collect::<Result<Vec<_>, _>>()?;
    let labels = picked
        .iter()
        .map(|(_, e)| manifest.class_index(&e.label).expect("label validated on load"))
        .collect();
    let ids = picked.iter().map(|(i, _)| *i as u32).collect();
    Ok((images, labels, ids))
}

#[derive(Serialize)]
struct DescribeReport {
    dimension: usize,
    rows: BTreeMap<String, usize>,
}

pub fn describe(g: &GlobalOpts, cfg: &PipelineConfig) -> anyhow::Result<()> {
    let ws = Workspace::new(&cfg.work_dir);
    let bank = load_bank(&ws)?;
    let manifest = load_clipped_manifest(&ws, cfg)?;
    let mut rows = BTreeMap::new();
    for split in Split::ALL {
        let (images, labels, ids) = split_images(&manifest, split)?;
        let features = if images.is_empty() {
            Matrix::zeros(0, bank.len())
        } else {
            describe_images(&bank, &images)?
        };
        let set = DescriptorSet::new(ids, labels, features)?;
        let path = ws.descriptors(split);
        Workspace::ensure_parent(&path)?;
        set.save(&path)?;
        rows.insert(split.to_string(), set.len());
    }
    let report = DescribeReport {
        dimension: bank.len(),
        rows,
    };
    let mut text = format!("{}-dimensional descriptors:\n", report.dimension);
    for (s, n) in &report.rows {
        let _ = writeln!(text, "  {s:<6} {n}");
    }
    emit(g, &ws.report("describe.json"), &report, &text)
}

#[derive(Serialize)]
struct HistoryRow {
    epoch: usize,
    train_loss: f64,
    valid_map: f64,
}

#[derive(Serialize)]
struct TrainReport<'a> {
    bits: usize,
    sizes: Vec<usize>,
    history: &'a TrainHistory,
}

pub fn train(g: &GlobalOpts, cfg: &PipelineConfig) -> anyhow::Result<()> {
    let ws = Workspace::new(&cfg.work_dir);
    let tr = load_descriptors(&ws, Split::Train)?;
    let va = load_descriptors(&ws, Split::Valid)?;
    let (params, history) = train_network(&tr, &va, cfg.bits, &cfg.train, &cfg.loss)?;
    let sidecar = ModelSidecar {
        bits: cfg.bits,
        sizes: params.sizes(),
        train: cfg.train.clone(),
        loss: cfg.loss,
        best_epoch: Some(history.best_epoch),
        best_valid_map: Some(history.best_valid_map),
    };
    save_model(&params, &sidecar, ws.model())?;
    let rows: Vec<HistoryRow> = history
        .epochs
        .iter()
        .map(|e| HistoryRow {
            epoch: e.epoch,
            train_loss: e.train_loss,
            valid_map: e.valid_map,
        })
        .collect();
    write_csv(&ws.report("history.csv"), &rows)?;
    let report = TrainReport {
        bits: cfg.bits,
        sizes: params.sizes(),
        history: &history,
    };
    let last = history.epochs.last().map_or(history.initial_loss, |e| e.train_loss);
    let text = format!(
        "trained {:?} for {} epochs: loss {:.4} -> {:.4}, best validation mAP@{} {:.4} at epoch {}\nmodel written to {}\n",
        params.sizes(),
        history.epochs.len(),
        history.initial_loss,
        last,
        cfg.train.k_eval,
        history.best_valid_map,
        history.best_epoch,
        ws.model().display()
    );
    emit(g, &ws.report("train.json"), &report, &text)
}

#[derive(Serialize, Clone)]
struct GridRow {
    bits: usize,
    learning_rate: f64,
    batch_size: usize,
    l1_weight: f64,
    l2_weight: f64,
    margin: f64,
    reg_weight: f64,
    status: String,
    best_epoch: Option<usize>,
    valid_map: Option<f64>,
    test_map: Option<f64>,
}

#[derive(Serialize)]
struct BitsRow {
    bits: usize,
    runs: usize,
    best_valid_map: Option<f64>,
    test_map: Option<f64>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    margin: Option<f64>,
    reg_weight: Option<f64>,
}

#[derive(Serialize)]
struct GridReport {
    points: usize,
    failed: usize,
    bits: Vec<BitsRow>,
    model_bits: Option<usize>,
}

fn grid_row(p: &GridPoint, status: &str) -> GridRow {
    GridRow {
        bits: p.bits,
        learning_rate: p.learning_rate,
        batch_size: p.batch_size,
        l1_weight: p.l1_weight,
        l2_weight: p.l2_weight,
        margin: p.margin,
        reg_weight: p.reg_weight,
        status: status.into(),
        best_epoch: None,
        valid_map: None,
        test_map: None,
    }
}

pub fn train_grid(g: &GlobalOpts, cfg: &PipelineConfig, limit: Option<usize>) -> anyhow::Result<()> {
    let ws = Workspace::new(&cfg.work_dir);
    let tr = load_descriptors(&ws, Split::Train)?;
    let va = load_descriptors(&ws, Split::Valid)?;
    let te = load_descriptors(&ws, Split::Test).ok().filter(|t| !t.is_empty());
    let limit = limit.unwrap_or(usize::MAX);
    let points: Vec<GridPoint> = cfg
        .grid
        .bits
        .iter()
        .flat_map(|&b| cfg.grid.points_for(b).into_iter().take(limit))
        .collect();
    if points.is_empty() {
        return Err(UsageError("the hyperparameter grid is empty".into()).into());
    }

    let grid_path = ws.report("grid.csv");
    Workspace::ensure_parent(&grid_path)?;
    let mut writer = csv::Writer::from_path(&grid_path).with_context(|| format!("writing {}", grid_path.display()))?;
    let mut rows = Vec::with_capacity(points.len());
    let mut best_for_config: Option<(f64, MlpParams, GridPoint, TrainHistory)> = None;
    for (n, p) in points.iter().enumerate() {
        let tc = p.train_config(&cfg.train);
        let row = match train_network(&tr, &va, p.bits, &tc, &p.loss_params()) {
            Ok((params, hist)) => {
                let test_map = match &te {
                    Some(t) => Some(retrieval_map(&params, &tr, t, tc.valid_threshold, tc.k_eval)?),
                    None => None,
                };
                let mut row = grid_row(p, "ok");
                row.best_epoch = Some(hist.best_epoch);
                row.valid_map = Some(hist.best_valid_map);
                row.test_map = test_map;
                if p.bits == cfg.bits && best_for_config.as_ref().map_or(true, |b| hist.best_valid_map > b.0) {
                    best_for_config = Some((hist.best_valid_map, params, *p, hist));
                }
                row
            }
            Err(e) if e.is_numerical() => {
                log::warn!("grid point {n} diverged: {e}");
                grid_row(p, "diverged")
            }
            Err(e) => return Err(e.into()),
        };
        writer.serialize(&row)?;
        writer.flush()?;
        rows.push(row);
    }

    let mut bits_rows = Vec::new();
    for &b in &cfg.grid.bits {
        let of_b: Vec<&GridRow> = rows.iter().filter(|r| r.bits == b).collect();
        let best = of_b
            .iter()
            .filter(|r| r.valid_map.is_some())
            .fold(None::<&GridRow>, |acc, r| match acc {
                Some(a) if a.valid_map >= r.valid_map => Some(a),
                _ => Some(r),
            });
        bits_rows.push(BitsRow {
            bits: b,
            runs: of_b.len(),
            best_valid_map: best.and_then(|r| r.valid_map),
            test_map: best.and_then(|r| r.test_map),
            learning_rate: best.map(|r| r.learning_rate),
            batch_size: best.map(|r| r.batch_size),
            margin: best.map(|r| r.margin),
            reg_weight: best.map(|r| r.reg_weight),
        });
    }
    write_csv(&ws.report("bits.csv"), &bits_rows)?;

    let model_bits = if let Some((_, params, p, hist)) = best_for_config {
        let sidecar = ModelSidecar {
            bits: p.bits,
            sizes: params.sizes(),
            train: p.train_config(&cfg.train),
            loss: p.loss_params(),
            best_epoch: Some(hist.best_epoch),
            best_valid_map: Some(hist.best_valid_map),
        };
        save_model(&params, &sidecar, ws.model())?;
        Some(p.bits)
    } else {
        None
    };
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    let report = GridReport {
        points: rows.len(),
        failed,
        bits: bits_rows,
        model_bits,
    };
    let mut text = format!("{} grid points trained ({failed} diverged)\n", report.points);
    let _ = writeln!(text, "{:>5}  {:>6}  {:>10}  {:>10}", "bits", "runs", "valid mAP", "test mAP");
    for r in &report.bits {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.4}", v));
        let _ = writeln!(text, "{:>5}  {:>6}  {:>10}  {:>10}", r.bits, r.runs, f(r.best_valid_map), f(r.test_map));
    }
    if let Some(b) = model_bits {
        let _ = writeln!(text, "best {b}-bit model written to {}", ws.model().display());
    }
    emit(g, &ws.report("grid.json"), &report, &text)
}

#[derive(Serialize)]
struct CurveRow {
    threshold: f64,
    map: f64,
}

pub fn sweep(g: &GlobalOpts, cfg: &PipelineConfig) -> anyhow::Result<()> {
    let ws = Workspace::new(&cfg.work_dir);
    let params = load_model(&ws)?;
    let tr = load_descriptors(&ws, Split::Train)?;
    let va = load_descriptors(&ws, Split::Valid)?;
    let sweep = threshold_sweep_over(
        &params.infer(&va.features)?,
        &va.labels,
        &params.infer(&tr.features)?,
        &tr.labels,
        cfg.k_eval,
        &cfg.thresholds,
    )?;
    let rows: Vec<CurveRow> = sweep.curve.iter().map(|&(threshold, map)| CurveRow { threshold, map }).collect();
    write_csv(&ws.report("threshold_curve.csv"), &rows)?;
    let mut text = format!("validation mAP@{} by threshold:\n", cfg.k_eval);
    for (t, m) in &sweep.curve {
        let _ = writeln!(text, "  {t:+.1}  {m:.4}");
    }
    let _ = writeln!(text, "best threshold {:+.1} (mAP {:.4})", sweep.best_threshold, sweep.best_map);
    emit(g, &ws.threshold(), &sweep, &text)
}

#[derive(Serialize, Deserialize)]
struct EncodeInfo {
    threshold: f64,
    bits: usize,
    counts: BTreeMap<String, usize>,
}

fn encode_info_path(ws: &Workspace) -> PathBuf {
    ws.codes(Split::Train).with_file_name("encoding.json")
}

pub fn encode(g: &GlobalOpts, cfg: &PipelineConfig, threshold: Option<f64>) -> anyhow::Result<()> {
    let ws = Workspace::new(&cfg.work_dir);
    let threshold = match threshold {
        Some(t) => t,
        None => {
            let path = ws.require(ws.threshold(), "threshold file", "sweep-threshold")?;
            let sweep: ThresholdSweep = serde_json::from_str(&fs::read_to_string(&path)?)?;
            sweep.best_threshold
        }
    };
    let params = load_model(&ws)?;
    let mut counts = BTreeMap::new();
    for split in Split::ALL {
        let set = match split {
            Split::Train => load_descriptors(&ws, split)?,
            _ => match load_descriptors(&ws, split) {
                Ok(s) => s,
                Err(_) => continue,
            },
        };
        let codes = if set.is_empty() {
            Vec::new()
        } else {
            binarize_rows(&params.infer(&set.features)?, threshold)?
        };
        let index = RetrievalIndex::from_parts(params.bits(), codes, set.labels.clone(), set.ids.clone())?;
        let path = ws.codes(split);
        Workspace::ensure_parent(&path)?;
        index.save(&path, &cfg.classes)?;
        counts.insert(split.to_string(), index.len());
    }
    let info = EncodeInfo {
        threshold,
        bits: params.bits(),
        counts,
    };
    let mut text = format!("{}-bit codes at threshold {threshold:+.2}:\n", info.bits);
    for (s, n) in &info.counts {
        let _ = writeln!(text, "  {s:<6} {n}");
    }
    emit(g, &encode_info_path(&ws), &info, &text)
}

#[derive(Serialize)]
struct RankedHit {
    rank: usize,
    id: u32,
    label: String,
    distance: u32,
}

#[derive(Serialize)]
struct QueryReport {
    query: String,
    bits: usize,
    hits: Vec<RankedHit>,
}

pub fn query(
    g: &GlobalOpts,
    cfg: &PipelineConfig,
    image: Option<PathBuf>,
    codes: Option<PathBuf>,
    record: Option<u32>,
) -> anyhow::Result<()> {
    let ws = Workspace::new(&cfg.work_dir);
    if g.top_n == 0 {
        return Err(UsageError("--top-n must be >= 1".into()).into());
    }
    let reference = load_codes(&ws, Split::Train)?;
    let (code, label) = match (image, codes) {
        (Some(path), None) => {
            let info_path = ws.require(encode_info_path(&ws), "encoding info", "encode")?;
            let info: EncodeInfo = serde_json::from_str(&fs::read_to_string(info_path)?)?;
            let bank = load_bank(&ws)?;
            let params = load_model(&ws)?;
            let img = load_image(&path, image_format(cfg, &path)?)?;
            let clipped = sigma_clip(&img, cfg.n_sigma, cfg.clip_max_iters)?;
            let d = bank.compute_descriptor(&clipped)?;
            let acts = params.infer(&Matrix::new(1, d.len(), d.into_vec())?)?;
            (binarize(acts.row(0), info.threshold)?, path.display().to_string())
        }
        (None, Some(path)) => {
            let record = record.ok_or_else(|| UsageError("--codes needs --record".into()))?;
            let (index, _) = RetrievalIndex::load(&path)?;
            let pos = index
                .ids()
                .iter()
                .position(|&id| id == record)
                .ok_or_else(|| UsageError(format!("record {record} not in {}", path.display())))?;
            (index.codes()[pos].clone(), format!("{} record {record}", path.display()))
        }
        _ => return Err(UsageError("pass exactly one of --image or --codes".into()).into()),
    };
    let hits: Vec<Hit> = reference.query(&code, g.top_n)?;
    let name = |l: usize| cfg.classes.get(l).cloned().unwrap_or_else(|| l.to_string());
    let report = QueryReport {
        query: label,
        bits: reference.bits(),
        hits: hits
            .iter()
            .enumerate()
            .map(|(i, h)| RankedHit {
                rank: i + 1,
                id: h.id,
                label: name(h.label),
                distance: h.distance,
            })
            .collect(),
    };
    let mut text = format!("query: {}\n{:>4}  {:>6}  {:<14} {:>8}\n", report.query, "rank", "id", "label", "distance");
    for h in &report.hits {
        let _ = writeln!(text, "{:>4}  {:>6}  {:<14} {:>8}", h.rank, h.id, h.label, h.distance);
    }
    emit(g, &ws.report("query.json"), &report, &text)
}

#[derive(Serialize)]
struct MapRow {
    class: String,
    r: usize,
    queries: usize,
    map: f64,
}

#[derive(Serialize)]
struct FlopsCsvRow {
    component: String,
    formula: String,
    flops: u64,
}

#[derive(Serialize)]
struct FlopsReport {
    hashing: FlopsBreakdown,
    reference_descriptor_flops: u64,
    reference_total: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    analytic_descriptor_flops: Option<u64>,
}

fn flops_report(ws: &Workspace, cfg: &PipelineConfig, layers: Option<Vec<usize>>) -> anyhow::Result<FlopsReport> {
    let sizes = match layers {
        Some(l) if l.len() >= 2 && l.iter().all(|&v| v > 0) => l,
        Some(_) => return Err(UsageError("--layers needs at least two positive widths".into()).into()),
        None => match load_sidecar(ws.model()) {
            Ok(sc) => sc.sizes,
            Err(_) => {
                let mut s = vec![REFERENCE_INPUT];
                s.extend_from_slice(&REFERENCE_HIDDEN);
                s.push(cfg.bits);
                s
            }
        },
    };
    let hashing = mlp_flops(&hashing_layers(&sizes));
    let analytic = match (FilterBank::load(ws.bank()), DatasetManifest::load(ws.clipped_manifest(), &cfg.classes)) {
        (Ok(bank), Ok(m)) => match m.entries.first() {
            Some(e) => {
                let img = load_image(&e.path, ImageFormat::Rawf32)?;
                Some(descriptor_flops(&bank, img.width(), img.height()))
            }
            None => None,
        },
        _ => None,
    };
    Ok(FlopsReport {
        reference_total: REFERENCE_DESCRIPTOR_FLOPS + hashing.total,
        hashing,
        reference_descriptor_flops: REFERENCE_DESCRIPTOR_FLOPS,
        analytic_descriptor_flops: analytic,
    })
}

fn flops_text(r: &FlopsReport) -> String {
    let mut text = String::new();
    for row in &r.hashing.rows {
        let _ = writeln!(text, "  {:<42} {:>5}  {:>12}", row.component, row.formula, thousands(row.flops));
    }
    let _ = writeln!(text, "  {:<42} {:>5}  {:>12}", "Total hashing network", "", thousands(r.hashing.total));
    let _ = writeln!(
        text,
        "  {:<42} {:>5}  {:>12}",
        "Descriptor stage (reference, 372 filters)",
        "",
        thousands(r.reference_descriptor_flops)
    );
    let _ = writeln!(text, "  {:<42} {:>5}  {:>12}", "Reference total", "", thousands(r.reference_total));
    if let Some(a) = r.analytic_descriptor_flops {
        let _ = writeln!(text, "  {:<42} {:>5}  {:>12}", "Descriptor stage (analytic, this bank)", "", thousands(a));
    }
    text
}

fn write_flops_csv(ws: &Workspace, r: &FlopsReport) -> anyhow::Result<()> {
    let mut rows: Vec<FlopsCsvRow> = r
        .hashing
        .rows
        .iter()
        .map(|x| FlopsCsvRow {
            component: x.component.clone(),
            formula: x.formula.clone(),
            flops: x.flops,
        })
        .collect();
    rows.push(FlopsCsvRow {
        component: "Total".into(),
        formula: String::new(),
        flops: r.hashing.total,
    });
    write_csv(&ws.report("flops.csv"), &rows)
}

pub fn flops(g: &GlobalOpts, cfg: &PipelineConfig, layers: Option<Vec<usize>>) -> anyhow::Result<()> {
    let ws = Workspace::new(&cfg.work_dir);
    let report = flops_report(&ws, cfg, layers)?;
    write_flops_csv(&ws, &report)?;
    emit(g, &ws.report("flops.json"), &report, &flops_text(&report))
}

#[derive(Serialize)]
struct SplitMetrics {
    queries: usize,
    map_at_k: f64,
}

#[derive(Serialize)]
struct EvaluateReport {
    k_eval: usize,
    bits: usize,
    test: SplitMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    valid: Option<SplitMetrics>,
    map_at_r: Vec<MapRow>,
    map_at_r_average: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    distances_test: Option<ClassDistanceMatrix>,
    distances_test_vs_train: ClassDistanceMatrix,
    #[serde(skip_serializing_if = "Option::is_none")]
    separability_test: Option<f64>,
    separability_test_vs_train: f64,
    flops: FlopsReport,
}

fn matrix_text(m: &ClassDistanceMatrix, classes: &[String]) -> String {
    let mut text = format!("  {:<14}", "");
    for c in classes.iter().take(m.classes) {
        let _ = write!(text, "{c:>12}");
    }
    text.push('\n');
    for r in 0..m.classes {
        let _ = write!(text, "  {:<14}", classes.get(r).map_or("?", String::as_str));
        for c in 0..m.classes {
            let _ = write!(text, "{:>12.3}", m.get(r, c));
        }
        text.push('\n');
    }
    text
}

pub fn evaluate(g: &GlobalOpts, cfg: &PipelineConfig) -> anyhow::Result<()> {
    let ws = Workspace::new(&cfg.work_dir);
    let train = load_codes(&ws, Split::Train)?;
    let test = load_codes(&ws, Split::Test)?;
    if test.is_empty() {
        return Err(CoreError::Empty("test codes".into()).into());
    }
    let valid = load_codes(&ws, Split::Valid).ok().filter(|v| !v.is_empty());
    let k = cfg.k_eval;
    let classes = cfg.classes.len();

    let test_map = mean_average_precision(&train, test.codes(), test.labels(), k)?;
    let valid_metrics = match &valid {
        Some(v) => Some(SplitMetrics {
            queries: v.len(),
            map_at_k: mean_average_precision(&train, v.codes(), v.labels(), k)?,
        }),
        None => None,
    };
    let at_r = map_at_r(&train, test.codes(), test.labels())?;
    let name = |l: usize| cfg.classes.get(l).cloned().unwrap_or_else(|| l.to_string());
    let map_rows: Vec<MapRow> = at_r
        .per_class
        .iter()
        .map(|c| MapRow {
            class: name(c.label),
            r: c.r,
            queries: c.queries,
            map: c.map,
        })
        .collect();
    let within = match class_distance_matrix(test.codes(), test.labels(), classes) {
        Ok(m) => Some(m),
        Err(CoreError::InvalidParameter(msg)) => {
            log::warn!("no within-test distance matrix: {msg}");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let cross = class_distance_matrix_cross(test.codes(), test.labels(), train.codes(), train.labels(), classes)?;
    let flops = flops_report(&ws, cfg, None)?;

    write_csv(&ws.report("map_at_r.csv"), &map_rows)?;
    write_flops_csv(&ws, &flops)?;
    let report = EvaluateReport {
        k_eval: k,
        bits: train.bits(),
        test: SplitMetrics {
            queries: test.len(),
            map_at_k: test_map,
        },
        valid: valid_metrics,
        map_at_r: map_rows,
        map_at_r_average: at_r.average,
        separability_test: within.as_ref().map(separability_ratio).transpose()?,
        separability_test_vs_train: separability_ratio(&cross)?,
        distances_test: within,
        distances_test_vs_train: cross,
        flops,
    };

    let mut text = format!(
        "{}-bit codes, {} reference items\ntest mAP@{k}: {:.4} ({} queries)\n",
        report.bits,
        train.len(),
        report.test.map_at_k,
        report.test.queries
    );
    if let Some(v) = &report.valid {
        let _ = writeln!(text, "validation mAP@{k}: {:.4} ({} queries)", v.map_at_k, v.queries);
    }
    let _ = writeln!(text, "mAP@R per class:");
    for r in &report.map_at_r {
        let _ = writeln!(text, "  {:<14} R = {:<5} {:.4}", r.class, r.r, r.map);
    }
    let _ = writeln!(text, "  {:<14} {:<9} {:.4}", "average", "", report.map_at_r_average);
    if let Some(m) = &report.distances_test {
        let _ = writeln!(text, "mean Hamming distance, test:");
        text.push_str(&matrix_text(m, &cfg.classes));
    }
    let _ = writeln!(text, "mean Hamming distance, test vs train:");
    text.push_str(&matrix_text(&report.distances_test_vs_train, &cfg.classes));
    if let Some(r) = report.separability_test {
        let _ = writeln!(text, "separability ratio, test: {r:.4}");
    }
    let _ = writeln!(text, "separability ratio, test vs train: {:.4}", report.separability_test_vs_train);
    let _ = writeln!(text, "FLOPs:");
    text.push_str(&flops_text(&report.flops));
    emit(g, &ws.report("report.json"), &report, &text)
}

#[derive(Serialize)]
struct SynthReport {
    images: usize,
    classes: Vec<String>,
    manifest: PathBuf,
    config: PathBuf,
}

/// Settings that suit the synthetic blobs: small radii, a compact bank and 16 bits.
fn synthetic_config() -> PipelineConfig {
    let mut cfg = PipelineConfig {
        manifest: Some(PathBuf::from("manifest.csv")),
        work_dir: PathBuf::from("work"),
        classes: SYNTHETIC_CLASSES.map(String::from).to_vec(),
        image_format: Some(ImageFormat::Rawf32),
        filters_per_class: 3,
        bits: 16,
        k_eval: 10,
        ..PipelineConfig::default()
    };
    cfg.cosfire.sigma_bank = vec![2.0, 3.0];
    cfg.cosfire.radii = vec![0.0, 6.0, 12.0, 18.0];
    cfg.train.epochs = 60;
    cfg.train.patience = 0;
    cfg.train.k_eval = 10;
    cfg.grid.bits = vec![16, 24];
    cfg
}

pub fn synth(g: &GlobalOpts, out: &Path, per_class: usize, size: usize) -> anyhow::Result<()> {
    if per_class < 5 {
        return Err(UsageError("--per-class must be >= 5 so every split gets members".into()).into());
    }
    let data = SyntheticConfig {
        per_class,
        size,
        seed: g.seed.unwrap_or(SyntheticConfig::default().seed),
        ..SyntheticConfig::default()
    };
    let manifest = write_dataset(out, &data)?;
    let config_path = out.join("config.json");
    synthetic_config().save(&config_path)?;
    let report = SynthReport {
        images: manifest.entries.len(),
        classes: manifest.classes.clone(),
        manifest: out.join("manifest.csv"),
        config: config_path.clone(),
    };
    let text = format!(
        "wrote {} synthetic images ({} classes) to {}\nconfig: {}\n",
        report.images,
        report.classes.len(),
        out.display(),
        config_path.display()
    );
    emit(g, &out.join("synth.json"), &report, &text)
}
