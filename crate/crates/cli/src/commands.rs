use std::path::{Path, PathBuf};

use anyhow::Context;
use serde_json::{json, Value};
use spun_core::dataset::{
    audit, build_dataset, load_manifest, parallel_map, remeshed_inputs, save_manifest, scaled_family, DatasetConfig,
    DatasetManifest, Scenario, Split,
};
use spun_core::downstream::{
    eval_region, eval_retrieval, export_mask, index_build, interpolate_spectra, query_topk, region_forward,
    train_region, IndexEntry, RegionExample, RegionModel, RegionTrainConfig, RetrievalIndex,
};
use spun_core::geometry::io::load_shape_file;
use spun_core::geometry::{load_family_dir, save_family_dir, synth_family, Shape, ShapeFamily};
use spun_core::spectral::{
    natural_spectrum, predicted_signature, shape_dna, spectrum, BoundaryCondition, Spectrum, DEFAULT_K,
};
use spun_core::union::{
    augmented_examples, eval_union, min_baseline, predict_examples, split_examples, train_union, union_compose,
    union_compose_right, write_history, TrainConfig, UnionExample, UnionModel,
};
use spun_nn::Mode;

use crate::config::{Globals, Paths, RunConfig, SynthConfig};
use crate::error::invalid;
use crate::run::Run;
use crate::{BcArg, Cli, Command, DatasetCommand, IndexCommand, RegionData, ScenarioArg, SourceArg, SplitArg, TrainArgs};

/// Written next to a synthetic family so it can be regenerated bit for bit.
const SYNTH_FILE: &str = "family.json";

struct Ctx {
    cfg: RunConfig,
    g: Globals,
    run: Run,
}

impl Ctx {
    fn k(&self) -> usize {
        self.g.k.or(self.cfg.k).unwrap_or(DEFAULT_K)
    }

    fn seed(&self) -> u64 {
        self.g.seed.or(self.cfg.seed).unwrap_or(0)
    }

    fn path(&self, flag: Option<PathBuf>, pick: fn(&Paths) -> &Option<PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
        self.cfg.path(flag, pick, what)
    }

    fn union_model(&mut self, flag: Option<PathBuf>) -> anyhow::Result<UnionModel> {
        let path = self.path(flag, |p| &p.union_ckpt, "union checkpoint (--ckpt / --union-ckpt)")?;
        let heads = self.cfg.stage::<TrainConfig>("union", &self.g)?.arch.heads;
        self.run.record("union_ckpt", &path);
        UnionModel::load(&path, heads).with_context(|| format!("loading union checkpoint {}", path.display()))
    }

    fn manifest(&mut self, flag: Option<PathBuf>) -> anyhow::Result<DatasetManifest> {
        let path = self.path(flag, |p| &p.manifest, "manifest (--manifest)")?;
        self.run.record("manifest", &path);
        load_manifest(&path).with_context(|| format!("loading manifest {}", path.display()))
    }

    fn family(&mut self, flag: Option<PathBuf>) -> anyhow::Result<(ShapeFamily, Option<u64>)> {
        let path = self.path(flag, |p| &p.family, "family directory (--family)")?;
        self.run.record("family", &path);
        load_family(&path).with_context(|| format!("loading family {}", path.display()))
    }

    /// The family used to build `m`, refusing any other.
    fn family_for(&mut self, flag: Option<PathBuf>, m: &DatasetManifest) -> anyhow::Result<ShapeFamily> {
        let (family, _) = self.family(flag)?;
        if family.fingerprint() != m.family.fingerprint {
            return Err(invalid("family does not match the manifest fingerprint"));
        }
        Ok(family)
    }
}

pub fn load_family(dir: &Path) -> anyhow::Result<(ShapeFamily, Option<u64>)> {
    let synth = dir.join(SYNTH_FILE);
    if synth.exists() {
        let s: SynthConfig = serde_json::from_str(&std::fs::read_to_string(&synth)?)?;
        return Ok((synth_family(s.seed, s.identities, s.poses, s.vertices)?, Some(s.seed)));
    }
    Ok((load_family_dir(dir)?, None))
}

fn read_spectrum(path: &Path) -> anyhow::Result<Spectrum> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Spectrum::from_json(&text).with_context(|| format!("parsing spectrum {}", path.display()))
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::TestA => Split::TestA,
        SplitArg::TestB => Split::TestB,
    }
}

fn nonempty<T>(v: Vec<T>, split: Split) -> anyhow::Result<Vec<T>> {
    if v.is_empty() {
        return Err(invalid(format!("split {split:?} has no samples")));
    }
    Ok(v)
}

fn write_jsonl<T: serde::Serialize>(rows: &[T], path: &Path) -> anyhow::Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn apply_train(epochs: &mut usize, lr: &mut f64, batch: &mut usize, t: &TrainArgs) {
    if let Some(e) = t.epochs {
        *epochs = e;
    }
    if let Some(l) = t.lr {
        *lr = l;
    }
    if let Some(b) = t.batch {
        *batch = b;
    }
}

/// Ground-truth and union-predicted localization examples of one split.
fn region_examples(
    m: &DatasetManifest,
    split: Split,
    model: Option<&UnionModel>,
) -> anyhow::Result<(Vec<RegionExample>, Option<Vec<RegionExample>>)> {
    let samples = m.split_samples(split);
    let truth = samples
        .iter()
        .map(|s| RegionExample { spectrum: s.union_spec.values().to_vec(), mask: s.union_mask.clone() })
        .collect();
    let predicted = match model {
        None => None,
        Some(model) => {
            let ex: Vec<UnionExample> = samples.iter().map(|s| UnionExample::from_sample(s)).collect();
            let preds = predict_examples(model, &ex)?;
            Some(
                samples
                    .iter()
                    .zip(preds)
                    .map(|(s, p)| RegionExample { spectrum: p, mask: s.union_mask.clone() })
                    .collect(),
            )
        }
    };
    Ok((truth, predicted))
}

pub fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let jobs = cli
        .jobs
        .or(cfg.jobs)
        .filter(|&j| j > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let g = Globals { seed: cli.seed, k: cli.k, jobs };
    let out = cli.out.or_else(|| cfg.paths.out.clone());
    let name = command_name(&cli.command);
    let mut ctx = Ctx { cfg, g, run: Run::new(name, out) };
    let result = match cli.command {
        Command::Spectrum { shape, bc } => cmd_spectrum(&mut ctx, &shape, bc)?,
        Command::Synth { identities, poses, vertices } => cmd_synth(&mut ctx, identities, poses, vertices)?,
        Command::Dataset(DatasetCommand::Build { family, pairs, scenario, test_a, test_b }) => {
            cmd_dataset_build(&mut ctx, family, pairs, scenario, test_a, test_b)?
        }
        Command::Dataset(DatasetCommand::Audit { manifest }) => return cmd_dataset_audit(&mut ctx, manifest),
        Command::TrainUnion { manifest, train, augment, family } => {
            cmd_train_union(&mut ctx, manifest, &train, augment, family)?
        }
        Command::EvalUnion { manifest, ckpt, split, remesh, family } => {
            cmd_eval_union(&mut ctx, manifest, ckpt, split_of(split), remesh, family)?
        }
        Command::Union { spectra, ckpt, right } => cmd_union(&mut ctx, &spectra, ckpt, right)?,
        Command::TrainRegion { data, train, patience } => cmd_train_region(&mut ctx, data, &train, patience)?,
        Command::EvalRegion { data, ckpt, split } => cmd_eval_region(&mut ctx, data, ckpt, split_of(split))?,
        Command::Localize { spectrum, ckpt, family } => cmd_localize(&mut ctx, &spectrum, ckpt, family)?,
        Command::Index(IndexCommand::Build { family, target_area }) => cmd_index_build(&mut ctx, family, target_area)?,
        Command::Index(IndexCommand::Query { index, spectrum, top }) => cmd_index_query(&mut ctx, &index, &spectrum, top)?,
        Command::RetrieveEval { index, manifest, union_ckpt, split, source, ks } => {
            cmd_retrieve_eval(&mut ctx, index, manifest, union_ckpt, split_of(split), source, &ks)?
        }
        Command::Interp { a, b, steps, t } => cmd_interp(&mut ctx, &a, &b, steps, t)?,
        Command::Gradcheck => return cmd_gradcheck(&mut ctx),
        Command::ExportSpectrum { manifest, ckpt, split, sample } => {
            cmd_export_spectrum(&mut ctx, manifest, ckpt, split_of(split), sample)?
        }
    };
    ctx.run.finish(&result)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Spectrum { .. } => "spectrum",
        Command::Synth { .. } => "synth",
        Command::Dataset(DatasetCommand::Build { .. }) => "dataset build",
        Command::Dataset(DatasetCommand::Audit { .. }) => "dataset audit",
        Command::TrainUnion { .. } => "train-union",
        Command::EvalUnion { .. } => "eval-union",
        Command::Union { .. } => "union",
        Command::TrainRegion { .. } => "train-region",
        Command::EvalRegion { .. } => "eval-region",
        Command::Localize { .. } => "localize",
        Command::Index(IndexCommand::Build { .. }) => "index build",
        Command::Index(IndexCommand::Query { .. }) => "index query",
        Command::RetrieveEval { .. } => "retrieve-eval",
        Command::Interp { .. } => "interp",
        Command::Gradcheck => "gradcheck",
        Command::ExportSpectrum { .. } => "export-spectrum",
    }
}

fn cmd_spectrum(ctx: &mut Ctx, path: &Path, bc: BcArg) -> anyhow::Result<Value> {
    let shape = load_shape_file(path).with_context(|| format!("loading shape {}", path.display()))?;
    let has_boundary = match &shape {
        Shape::Mesh(m) => m.has_boundary(),
        Shape::Cloud(pc) => pc.boundary_flags.iter().any(|&b| b),
    };
    let bc = match bc {
        BcArg::Dirichlet => BoundaryCondition::Dirichlet,
        BcArg::Closed => BoundaryCondition::Closed,
        BcArg::Natural if has_boundary => BoundaryCondition::Dirichlet,
        BcArg::Natural => BoundaryCondition::Closed,
    };
    let k = ctx.k();
    ctx.run.record("shape", path);
    ctx.run.record("k", k);
    ctx.run.record("bc", bc);
    let s = spectrum(&shape, k, bc)?;
    eprintln!("{k} {bc:?} eigenvalues, largest {:.6}", s.values().last().copied().unwrap_or(0.0));
    Ok(serde_json::to_value(&s)?)
}

fn cmd_synth(
    ctx: &mut Ctx,
    identities: Option<usize>,
    poses: Option<usize>,
    vertices: Option<usize>,
) -> anyhow::Result<Value> {
    let mut s: SynthConfig = ctx.cfg.stage("family", &ctx.g)?;
    s.identities = identities.unwrap_or(s.identities);
    s.poses = poses.unwrap_or(s.poses);
    s.vertices = vertices.unwrap_or(s.vertices);
    ctx.run.record("family", &s);
    let family = synth_family(s.seed, s.identities, s.poses, s.vertices)?;
    let dir = ctx.run.out_dir()?.to_path_buf();
    save_family_dir(&family, &dir)?;
    std::fs::write(dir.join(SYNTH_FILE), serde_json::to_string_pretty(&s)?)?;
    eprintln!("{} identities x {} poses, {} vertices", family.identities, family.poses, family.num_vertices());
    Ok(json!({
        "identities": family.identities,
        "poses": family.poses,
        "vertices": family.num_vertices(),
        "fingerprint": family.fingerprint(),
    }))
}

fn cmd_dataset_build(
    ctx: &mut Ctx,
    family: Option<PathBuf>,
    pairs: Option<usize>,
    scenario: Option<ScenarioArg>,
    test_a: Option<f64>,
    test_b: Option<f64>,
) -> anyhow::Result<Value> {
    let mut cfg: DatasetConfig = ctx.cfg.stage("dataset", &ctx.g)?;
    cfg.pairs = pairs.unwrap_or(cfg.pairs);
    cfg.policy.test_a = test_a.unwrap_or(cfg.policy.test_a);
    cfg.policy.test_b = test_b.unwrap_or(cfg.policy.test_b);
    if let Some(s) = scenario {
        cfg.pair.scenario = match s {
            ScenarioArg::FullCover => Scenario::FullCover,
            ScenarioArg::PartialUnion => Scenario::PartialUnion,
        };
    }
    ctx.run.record("dataset", &cfg);
    let path = ctx.run.artifact("manifest.jsonl")?;
    let (family, seed) = ctx.family(family)?;
    let m = build_dataset(&family, seed, &cfg)?;
    save_manifest(&m, &path)?;
    let report = audit(&m);
    eprintln!("{} samples: {} train, {} testA, {} testB", report.total, report.train, report.test_a, report.test_b);
    Ok(json!({ "manifest": path, "hash": m.hash(), "audit": report, "settings": m.settings }))
}

fn cmd_dataset_audit(ctx: &mut Ctx, manifest: Option<PathBuf>) -> anyhow::Result<()> {
    let m = ctx.manifest(manifest)?;
    let report = audit(&m);
    let passed = report.passed();
    eprintln!(
        "audit {}: {} testB leaks, {} unseen testA unions, {} superset and {} monotonicity violations",
        if passed { "passed" } else { "FAILED" },
        report.test_b_leaks,
        report.test_a_unseen_unions,
        report.superset_violations,
        report.monotonicity_violations
    );
    ctx.run.finish(&json!({ "passed": passed, "report": report }))?;
    if !passed {
        return Err(invalid("manifest failed the audit"));
    }
    Ok(())
}

fn cmd_train_union(
    ctx: &mut Ctx,
    manifest: Option<PathBuf>,
    train: &TrainArgs,
    augment: Option<usize>,
    family: Option<PathBuf>,
) -> anyhow::Result<Value> {
    let mut tc: TrainConfig = ctx.cfg.stage("union", &ctx.g)?;
    apply_train(&mut tc.epochs, &mut tc.lr, &mut tc.batch, train);
    tc.augment_variants = augment.unwrap_or(tc.augment_variants);
    ctx.run.record("union", &tc);
    let ckpt = ctx.run.artifact("union.ckpt")?;
    let m = ctx.manifest(manifest)?;
    if m.k != tc.arch.k {
        return Err(invalid(format!("manifest has k = {} but the model is configured for k = {}", m.k, tc.arch.k)));
    }
    let examples = nonempty(split_examples(&m, Split::Train), Split::Train)?;
    let extra = if tc.augment_variants > 0 {
        let family = ctx.family_for(family, &m)?;
        augmented_examples(&family, &m, tc.augment_variants, tc.seed, ctx.g.jobs)?
    } else {
        Vec::new()
    };
    eprintln!("training on {} examples ({} augmented) for {} epochs", examples.len(), extra.len(), tc.epochs);
    let (model, history) = train_union(&examples, &extra, &tc)?;
    model.save(&ckpt)?;
    write_history(&history, ctx.run.artifact("history.jsonl")?)?;
    let best = history.iter().min_by(|a, b| a.val_loss.total_cmp(&b.val_loss));
    eprintln!("best validation loss {:.5}", best.map_or(f64::NAN, |h| h.val_loss));
    Ok(json!({
        "ckpt": ckpt,
        "examples": examples.len(),
        "augmented": extra.len(),
        "best_epoch": best.map(|h| h.epoch),
        "best_val_loss": best.map(|h| h.val_loss),
        "train": eval_union(&model, &examples)?,
    }))
}

fn cmd_eval_union(
    ctx: &mut Ctx,
    manifest: Option<PathBuf>,
    ckpt: Option<PathBuf>,
    split: Split,
    remesh: Option<f64>,
    family: Option<PathBuf>,
) -> anyhow::Result<Value> {
    let model = ctx.union_model(ckpt)?;
    let m = ctx.manifest(manifest)?;
    ctx.run.record("split", split);
    ctx.run.record("remesh", remesh);
    let examples = match remesh {
        None => split_examples(&m, split),
        Some(drop) => {
            let family = ctx.family_for(family, &m)?;
            let scaled = scaled_family(&family, m.target_area)?;
            let samples = m.split_samples(split);
            parallel_map(samples.len(), ctx.g.jobs, |i| {
                let (a, b) = remeshed_inputs(&scaled, samples[i], drop)?;
                Ok(UnionExample::new(&a, &b, &samples[i].union_spec))
            })?
        }
    };
    let examples = nonempty(examples, split)?;
    let metrics = eval_union(&model, &examples)?;
    let baseline = min_baseline(&examples);
    eprintln!("{split:?}: model mae {:.4} mse {:.4}, min baseline mae {:.4}", metrics.mae, metrics.mse, baseline.mae);
    Ok(json!({ "split": split, "samples": examples.len(), "remesh": remesh, "model": metrics, "baseline": baseline }))
}

fn cmd_union(ctx: &mut Ctx, paths: &[PathBuf], ckpt: Option<PathBuf>, right: bool) -> anyhow::Result<Value> {
    let model = ctx.union_model(ckpt)?;
    let spectra = paths.iter().map(|p| read_spectrum(p)).collect::<anyhow::Result<Vec<_>>>()?;
    ctx.run.record("inputs", paths);
    ctx.run.record("right", right);
    let s = if right { union_compose_right(&spectra, &model)? } else { union_compose(&spectra, &model)? };
    Ok(serde_json::to_value(&s)?)
}

fn cmd_train_region(
    ctx: &mut Ctx,
    data: RegionData,
    train: &TrainArgs,
    patience: Option<usize>,
) -> anyhow::Result<Value> {
    let mut rc: RegionTrainConfig = ctx.cfg.stage("region", &ctx.g)?;
    apply_train(&mut rc.epochs, &mut rc.lr, &mut rc.batch, train);
    rc.patience = patience.unwrap_or(rc.patience);
    ctx.run.record("region", &rc);
    let ckpt = ctx.run.artifact("region.ckpt")?;
    let m = ctx.manifest(data.manifest)?;
    let family = ctx.family_for(data.family, &m)?;
    let union = ctx.union_model(data.union_ckpt)?;
    let (truth, predicted) = region_examples(&m, Split::Train, Some(&union))?;
    let truth = nonempty(truth, Split::Train)?;
    let predicted = predicted.unwrap_or_default();
    eprintln!("training on {} ground-truth and {} predicted spectra", truth.len(), predicted.len());
    let (model, history) = train_region(&truth, &predicted, &family.symmetry_map, &rc)?;
    model.save(&ckpt)?;
    write_jsonl(&history, &ctx.run.artifact("history.jsonl")?)?;
    let best = history.iter().max_by(|a, b| a.val_iou.total_cmp(&b.val_iou));
    eprintln!("{} epochs, best validation IoU {:.4}", history.len(), best.map_or(f64::NAN, |h| h.val_iou));
    Ok(json!({
        "ckpt": ckpt,
        "epochs_run": history.len(),
        "best_epoch": best.map(|h| h.epoch),
        "best_val_iou": best.map(|h| h.val_iou),
    }))
}

fn cmd_eval_region(ctx: &mut Ctx, data: RegionData, ckpt: Option<PathBuf>, split: Split) -> anyhow::Result<Value> {
    let path = ctx.path(ckpt, |p| &p.region_ckpt, "region checkpoint (--ckpt)")?;
    ctx.run.record("region_ckpt", &path);
    ctx.run.record("split", split);
    let model = RegionModel::load(&path)?;
    let m = ctx.manifest(data.manifest)?;
    let family = ctx.family_for(data.family, &m)?;
    let union = match data.union_ckpt.is_some() || ctx.cfg.paths.union_ckpt.is_some() {
        true => Some(ctx.union_model(data.union_ckpt)?),
        false => None,
    };
    let (truth, predicted) = region_examples(&m, split, union.as_ref())?;
    let truth = nonempty(truth, split)?;
    let gt = eval_region(&model, &truth, &family.symmetry_map)?;
    let pred = predicted.map(|p| eval_region(&model, &p, &family.symmetry_map)).transpose()?;
    eprintln!("{split:?}: ground truth IoU {:.4} accuracy {:.4}", gt.iou, gt.accuracy);
    if let Some(p) = &pred {
        eprintln!("{split:?}: predicted IoU {:.4} accuracy {:.4}", p.iou, p.accuracy);
    }
    Ok(json!({ "split": split, "samples": truth.len(), "ground_truth": gt, "predicted": pred }))
}

fn cmd_localize(ctx: &mut Ctx, spectrum: &Path, ckpt: Option<PathBuf>, family: Option<PathBuf>) -> anyhow::Result<Value> {
    let path = ctx.path(ckpt, |p| &p.region_ckpt, "region checkpoint (--ckpt)")?;
    ctx.run.record("region_ckpt", &path);
    ctx.run.record("spectrum", spectrum);
    let model = RegionModel::load(&path)?;
    let s = read_spectrum(spectrum)?;
    let probs = region_forward(&s, &model, Mode::Eval)?;
    let selected = probs.iter().filter(|&&p| p > 0.5).count();
    eprintln!("{selected} of {} vertices above 0.5", probs.len());
    if !ctx.run.has_out() {
        return Ok(json!({ "probabilities": probs }));
    }
    let json_path = ctx.run.artifact("mask.json")?;
    let template = match family.is_some() || ctx.cfg.paths.family.is_some() {
        true => Some(ctx.family(family)?.0.template),
        false => None,
    };
    let off_path = ctx.run.artifact("mask.off")?;
    export_mask(&probs, &json_path, template.as_ref().map(|t| (t, off_path.as_path())))?;
    Ok(json!({ "mask": json_path, "off": template.map(|_| off_path), "selected": selected }))
}

fn cmd_index_build(ctx: &mut Ctx, family: Option<PathBuf>, target_area: Option<f64>) -> anyhow::Result<Value> {
    let k = ctx.k();
    let area = target_area.unwrap_or(ctx.cfg.stage::<DatasetConfig>("dataset", &ctx.g)?.target_area);
    ctx.run.record("k", k);
    ctx.run.record("target_area", area);
    let path = ctx.run.artifact("index.json")?;
    let (family, _) = ctx.family(family)?;
    let scaled = scaled_family(&family, area)?;
    let poses = family.poses;
    let entries = parallel_map(family.identities * poses, ctx.g.jobs, |id| {
        let s = natural_spectrum(&scaled.shape(id / poses, id % poses)?, k)?;
        Ok(IndexEntry { shape_id: id, identity: id / poses, signature: shape_dna(&s) })
    })?;
    let index = index_build(entries)?;
    std::fs::write(&path, serde_json::to_string(&index)?)?;
    eprintln!("indexed {} shapes", index.entries.len());
    Ok(json!({ "index": path, "entries": index.entries.len(), "k": k, "target_area": area }))
}

fn load_index(path: &Path) -> anyhow::Result<RetrievalIndex> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading index {}", path.display()))?;
    let index: RetrievalIndex = serde_json::from_str(&text).with_context(|| format!("parsing index {}", path.display()))?;
    Ok(index_build(index.entries)?)
}

fn cmd_index_query(ctx: &mut Ctx, index: &Path, spectrum: &Path, top: usize) -> anyhow::Result<Value> {
    ctx.run.record("index", index);
    ctx.run.record("spectrum", spectrum);
    ctx.run.record("top", top);
    let index = load_index(index)?;
    let s = read_spectrum(spectrum)?;
    let ranked = query_topk(&index, &shape_dna(&s), top)?;
    if let Some(r) = ranked.first() {
        eprintln!("nearest shape {} at distance {:.4}", r.shape_id, r.distance);
    }
    let query_id = spectrum.file_stem().map(|s| s.to_string_lossy().into_owned());
    Ok(json!({ "query_id": query_id, "ranked": ranked }))
}

fn cmd_retrieve_eval(
    ctx: &mut Ctx,
    index: Option<PathBuf>,
    manifest: Option<PathBuf>,
    union_ckpt: Option<PathBuf>,
    split: Split,
    source: SourceArg,
    ks: &[usize],
) -> anyhow::Result<Value> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(invalid("--ks needs positive values"));
    }
    let index_path = ctx.path(index, |p| &p.index, "index (--index)")?;
    ctx.run.record("index", &index_path);
    ctx.run.record("split", split);
    ctx.run.record("source", format!("{source:?}").to_lowercase());
    ctx.run.record("ks", ks);
    let index = load_index(&index_path)?;
    let m = ctx.manifest(manifest)?;
    let samples = nonempty(m.split_samples(split), split)?;
    let signatures = match source {
        SourceArg::Exact => samples.iter().map(|s| shape_dna(&s.union_spec)).collect::<Vec<_>>(),
        SourceArg::Predicted => {
            let model = ctx.union_model(union_ckpt)?;
            let pairs: Vec<(&Spectrum, &Spectrum)> = samples.iter().map(|s| (&s.spec1, &s.spec2)).collect();
            model.predict_batch(&pairs, Mode::Eval)?.iter().map(predicted_signature).collect()
        }
    };
    let queries: Vec<_> = samples.iter().map(|s| s.meta.identity).zip(signatures).collect();
    let rates = eval_retrieval(&index, &queries, ks)?;
    for r in &rates {
        eprintln!("top-{} identity hit rate {:.3}", r.k, r.rate);
    }
    Ok(json!({ "split": split, "queries": queries.len(), "hit_rates": rates }))
}

fn cmd_interp(ctx: &mut Ctx, a: &Path, b: &Path, steps: usize, t: Option<f64>) -> anyhow::Result<Value> {
    let (sa, sb) = (read_spectrum(a)?, read_spectrum(b)?);
    ctx.run.record("inputs", [a, b]);
    if let Some(t) = t {
        ctx.run.record("t", t);
        return Ok(serde_json::to_value(interpolate_spectra(&sa, &sb, t)?)?);
    }
    if steps < 2 {
        return Err(invalid("--steps must be at least 2"));
    }
    ctx.run.record("steps", steps);
    let path = (0..steps)
        .map(|i| {
            let t = i as f64 / (steps - 1) as f64;
            Ok(json!({ "t": t, "spectrum": interpolate_spectra(&sa, &sb, t)? }))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(Value::Array(path))
}

fn cmd_gradcheck(ctx: &mut Ctx) -> anyhow::Result<()> {
    let seed = ctx.seed();
    ctx.run.record("seed", seed);
    let reports = spun_nn::gradcheck::run_suite(seed)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    for r in &reports {
        eprintln!("{:<4} {:<28} {:.3e} (tol {:.0e})", if r.passed() { "ok" } else { "FAIL" }, r.name, r.max_rel_err, r.tolerance);
    }
    let rows: Vec<Value> = reports
        .iter()
        .map(|r| json!({ "name": r.name, "max_rel_err": r.max_rel_err, "tolerance": r.tolerance, "checked": r.checked, "passed": r.passed() }))
        .collect();
    ctx.run.finish(&json!({ "seed": seed, "passed": failed.is_empty(), "checks": rows }))?;
    if !failed.is_empty() {
        return Err(invalid(format!("gradient check failed: {}", failed.join(", "))));
    }
    Ok(())
}

fn cmd_export_spectrum(
    ctx: &mut Ctx,
    manifest: Option<PathBuf>,
    ckpt: Option<PathBuf>,
    split: Split,
    sample: Option<usize>,
) -> anyhow::Result<Value> {
    let model = ctx.union_model(ckpt)?;
    let m = ctx.manifest(manifest)?;
    if let Some(i) = sample {
        ctx.run.record("sample", i);
        let s = m.samples.get(i).ok_or_else(|| invalid(format!("sample {i} out of range ({})", m.samples.len())))?;
        return Ok(serde_json::to_value(model.predict(&s.spec1, &s.spec2, Mode::Eval)?)?);
    }
    ctx.run.record("split", split);
    let idx = nonempty(m.indices(split), split)?;
    let pairs: Vec<(&Spectrum, &Spectrum)> = idx.iter().map(|&i| (&m.samples[i].spec1, &m.samples[i].spec2)).collect();
    let preds = model.predict_batch(&pairs, Mode::Eval)?;
    eprintln!("exported {} predicted spectra", preds.len());
    Ok(Value::Array(
        idx.iter()
            .zip(preds)
            .map(|(&i, p)| json!({ "sample": i, "meta": m.samples[i].meta, "spectrum": p }))
            .collect(),
    ))
}
