use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::process::{Child, Command};

use anyhow::{bail, Context};
use log::info;
use morphome::corpus::{
    generate_triples, instances_to_tsv, load_paradigms, paradigms_to_tsv, parse_instances, parse_paradigms, synthesize_paradigms,
    CellTag, Lexicon, Paradigm, ReinflectionInstance, SplitSpec, SuffixTable,
};
use morphome::encoding::{build_vocab, ArchVariant, Vocab};
use morphome::eval::{
    compare_expected, human_cell_means, kmeans_cells, load_human_responses, paradigm_shape, parse_records, parse_wug_items,
    predict_records, read_csv, records_to_tsv, sequence_accuracy, stem_accuracy, synthesize_wug_items, wug_evaluate, wug_items_to_tsv,
    write_csv, AccuracyRow, CellRow, CellScores, Cluster, GroupBy, ModelPredictor, StemMode, WugMatcher, WugRow, WUG_TARGETS,
};
use morphome::model::TransformerModel;
use morphome::corpus::subsample_triples;
use morphome::train::{grid_specs, run_grid, subsample_seeds, train_run, Precision, RunData, RunSpec, RunSummary};
use morphome_numcore::Scalar;
use serde::{Deserialize, Serialize};

use crate::config::{condition_dir, hash_bytes, ExperimentConfig};
use crate::store::{read_json, write_atomic, write_json, Layout, ManifestLedger, RunRecord};

/// An upstream artifact is missing; maps to exit code 2.
#[derive(Debug)]
pub struct MissingDependency(pub String);

impl std::fmt::Display for MissingDependency {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for MissingDependency {}

/// A worker process reported a numerical failure; maps to exit code 3.
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

fn missing(what: &Path, command: &str) -> anyhow::Error {
    MissingDependency(format!("{} not found: run cmd_{} first (`morphome {}`)", what.display(), command, command)).into()
}

/// Effective settings for one invocation.
pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub layout: Layout,
    pub conditions: Vec<f64>,
    pub variants: Vec<ArchVariant>,
    pub parallel: usize,
}

impl Ctx {
    /// Hash of everything that determines training results.
    pub fn config_hash(&self) -> String {
        let mut c = self.cfg.clone();
        c.conditions.clear();
        c.variants.clear();
        c.output_dir.clear();
        c.hash()
    }
}

#[derive(Serialize, Deserialize)]
struct PrepareManifest {
    config_hash: String,
    base_seed: u64,
    /// condition directory -> split seeds and subsample seeds.
    conditions: BTreeMap<String, (Vec<u64>, Vec<u64>)>,
    /// Relative path -> SHA-256 of the file contents.
    files: BTreeMap<String, String>,
}

struct Writer<'a> {
    root: &'a Path,
    files: BTreeMap<String, String>,
}

impl Writer<'_> {
    fn put(&mut self, path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
        write_atomic(path, bytes)?;
        let rel = path.strip_prefix(self.root).unwrap_or(path).to_string_lossy().replace('\\', "/");
        self.files.insert(rel, hash_bytes(bytes));
        Ok(())
    }
}

#[derive(Serialize)]
struct ReportMeta<'a> {
    config_hash: String,
    base_seed: u64,
    conditions: Vec<String>,
    variants: Vec<&'a str>,
}

/// Writes `reports/<name>` with a `<name>.meta.json` sidecar naming the config.
fn write_report(ctx: &Ctx, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = ctx.layout.reports();
    write_atomic(&dir.join(name), bytes)?;
    let meta = ReportMeta {
        config_hash: ctx.config_hash(),
        base_seed: ctx.cfg.base_seed,
        conditions: ctx.conditions.iter().map(|c| condition_dir(*c)).collect(),
        variants: ctx.variants.iter().map(|v| v.name()).collect(),
    };
    write_json(&dir.join(format!("{}.meta.json", name)), &meta)
}

fn load_table(cfg: &ExperimentConfig) -> anyhow::Result<SuffixTable> {
    if let Some(p) = &cfg.suffixes {
        return Ok(SuffixTable::load(p)?);
    }
    Ok(cfg.synthetic.as_ref().map(|s| s.spec.suffixes.clone()).unwrap_or_default())
}

pub fn prepare(ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = &ctx.cfg;
    let layout = &ctx.layout;
    let table = load_table(cfg)?;
    let paradigms: Vec<Paradigm> = match &cfg.synthetic {
        Some(s) => synthesize_paradigms(s.n_l, s.n_nl, &s.spec, s.seed)?,
        None => {
            let path = cfg.paradigms.as_ref().expect("validated");
            let loaded = load_paradigms(path)?;
            for r in &loaded.rejected {
                log::warn!("{}: dropped {} (missing {} cells)", path.display(), r.lemma, r.missing.len());
            }
            loaded.paradigms
        }
    };
    let lexicon = Lexicon::classify(paradigms.clone(), &table);
    info!("{} verbs: {} L, {} NL", lexicon.len(), lexicon.count(morphome::corpus::VerbClass::L), lexicon.count(morphome::corpus::VerbClass::NL));

    let mut w = Writer { root: &layout.root, files: BTreeMap::new() };
    w.put(&layout.paradigms(), paradigms_to_tsv(&paradigms).as_bytes())?;
    w.put(&layout.suffixes(), table.to_tsv().as_bytes())?;
    for v in ArchVariant::ALL {
        let vocab = build_vocab(&paradigms, v)?;
        w.put(&layout.data_dir().join(format!("vocab_{}.json", v.name())), &serde_json::to_vec_pretty(&vocab)?)?;
    }
    let wug = match (&cfg.wug_stimuli, &cfg.synthetic) {
        (Some(p), _) => Some(morphome::eval::load_wug_items(p, &table)?),
        (None, Some(s)) if s.wug_verbs > 0 => {
            let avoid: HashSet<String> = paradigms.iter().map(|p| p.lemma.clone()).collect();
            Some(synthesize_wug_items(s.wug_verbs, &s.spec, &avoid, s.seed.wrapping_add(1))?)
        }
        _ => None,
    };
    if let Some(items) = wug {
        w.put(&layout.wug_items(), wug_items_to_tsv(&items).as_bytes())?;
    }

    let previous = read_json::<PrepareManifest>(&layout.manifest()).ok().filter(|m| m.config_hash == ctx.config_hash());
    let (mut conditions, mut old_files) = previous.map(|m| (m.conditions, m.files)).unwrap_or_default();
    for &c in &ctx.conditions {
        let prefix = format!("{}/", condition_dir(c));
        old_files.retain(|k, _| !k.starts_with(&prefix));
        let splits = morphome::train::condition_splits(&lexicon, c, cfg.base_seed, &cfg.grid)?;
        for s in &splits {
            let mut bytes = serde_json::to_vec_pretty(s)?;
            bytes.push(b'\n');
            w.put(&layout.split(c, s.seed), &bytes)?;
        }
        let subs = subsample_seeds(c, cfg.base_seed, cfg.grid.subsample_seeds);
        let triples = |lemmas: &[String]| -> anyhow::Result<Vec<ReinflectionInstance>> {
            Ok(lexicon.paradigms(lemmas)?.into_iter().flat_map(generate_triples).collect())
        };
        for split in &splits {
            let dev = triples(&split.dev)?;
            let test = triples(&split.test)?;
            let all_train = triples(&split.train)?;
            for &u in &subs {
                let spec = RunSpec { split: split.clone(), subsample_seed: u, triple_fraction: cfg.grid.triple_fraction, scope: cfg.grid.scope, variant: ArchVariant::Vanilla };
                let dir = layout.run_data(c, &spec.run_id());
                let train = subsample_triples(&all_train, spec.triple_fraction, u, spec.scope)?;
                w.put(&dir.join("train.tsv"), instances_to_tsv(&train).as_bytes())?;
                w.put(&dir.join("dev.tsv"), instances_to_tsv(&dev).as_bytes())?;
                w.put(&dir.join("test.tsv"), instances_to_tsv(&test).as_bytes())?;
            }
        }
        conditions.insert(condition_dir(c), (splits.iter().map(|s| s.seed).collect(), subs));
        info!("condition {}: {} splits x {} subsamples", condition_dir(c), splits.len(), cfg.grid.subsample_seeds);
    }
    old_files.extend(w.files);
    let manifest = PrepareManifest { config_hash: ctx.config_hash(), base_seed: cfg.base_seed, conditions, files: old_files };
    write_json(&layout.manifest(), &manifest)?;
    println!("prepared {} conditions under {}", ctx.conditions.len(), layout.root.display());
    Ok(())
}

/// Data written by `prepare`, reloaded.
struct Prepared {
    lexicon: Lexicon,
    table: SuffixTable,
}

fn load_prepared(ctx: &Ctx) -> anyhow::Result<Prepared> {
    let layout = &ctx.layout;
    if !layout.manifest().exists() {
        return Err(missing(&layout.manifest(), "prepare"));
    }
    let manifest: PrepareManifest = read_json(&layout.manifest())?;
    if manifest.config_hash != ctx.config_hash() {
        bail!(MissingDependency("prepared data was built with a different config: run cmd_prepare first (`morphome prepare`)".into()));
    }
    let table = SuffixTable::load(&layout.suffixes())?;
    let text = std::fs::read_to_string(layout.paradigms()).with_context(|| format!("reading {}", layout.paradigms().display()))?;
    let paradigms = parse_paradigms(&text, &layout.paradigms().display().to_string())?.paradigms;
    Ok(Prepared { lexicon: Lexicon::classify(paradigms, &table), table })
}

fn load_vocab(layout: &Layout, v: ArchVariant) -> anyhow::Result<Vocab> {
    read_json(&layout.data_dir().join(format!("vocab_{}.json", v.name())))
}

fn load_instances(path: &Path) -> anyhow::Result<Vec<ReinflectionInstance>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_instances(&text, &path.display().to_string())?)
}

/// Every run spec of the selected conditions and variants.
fn specs(ctx: &Ctx) -> anyhow::Result<Vec<RunSpec>> {
    let mut out = Vec::new();
    for &c in &ctx.conditions {
        let dir = ctx.layout.condition(c).join("splits");
        if !dir.exists() {
            return Err(missing(&dir, "prepare"));
        }
        let mut splits: Vec<SplitSpec> = Vec::new();
        for seed in morphome::train::split_seeds(c, ctx.cfg.base_seed, ctx.cfg.grid.split_seeds) {
            let p = ctx.layout.split(c, seed);
            if !p.exists() {
                return Err(missing(&p, "prepare"));
            }
            splits.push(read_json(&p)?);
        }
        out.extend(grid_specs(&splits, c, ctx.cfg.base_seed, &ctx.variants, &ctx.cfg.grid));
    }
    Ok(out)
}

fn train_one<T: Scalar>(ctx: &Ctx, spec: &RunSpec) -> morphome::Result<RunSummary> {
    let layout = &ctx.layout;
    let err = |e: anyhow::Error| morphome::Error::Config(format!("{:#}", e));
    let data_dir = layout.run_data(spec.split.condition, &spec.run_id());
    let vocab = load_vocab(layout, spec.variant).map_err(err)?;
    let data = RunData {
        train: load_instances(&data_dir.join("train.tsv")).map_err(err)?,
        dev: load_instances(&data_dir.join("dev.tsv")).map_err(err)?,
        vocab,
    };
    let mut train_cfg = ctx.cfg.train.clone();
    train_cfg.seed = spec.train_seed(ctx.cfg.base_seed);
    let model_cfg = ctx.cfg.model.config(spec.variant, &data.vocab, train_cfg.dropout);
    info!("training {} {} {}", condition_dir(spec.split.condition), spec.variant, spec.run_id());
    let result = train_run::<T>(spec, &model_cfg, &train_cfg, &data)?;
    let dir = layout.run_dir(spec.split.condition, spec.variant, &spec.run_id());
    let model = result.best_model()?;
    model.save(&dir.join("model"), serde_json::json!({ "config_hash": ctx.config_hash(), "best_step": result.summary.best_step }))?;
    write_atomic(&dir.join("trace.csv"), result.summary.trace_csv().as_bytes()).map_err(err)?;
    Ok(result.summary)
}

fn train_dispatch(ctx: &Ctx, spec: &RunSpec) -> morphome::Result<RunSummary> {
    match ctx.cfg.train.precision {
        Precision::F32 => train_one::<f32>(ctx, spec),
        Precision::F64 => train_one::<f64>(ctx, spec),
    }
}

pub fn worker_key(spec: &RunSpec) -> String {
    format!("{}:{}:{}", spec.split.condition, spec.variant.name(), spec.run_id())
}

pub fn train(ctx: &Ctx, worker: Option<&str>, forward_args: &[String]) -> anyhow::Result<()> {
    load_prepared(ctx)?;
    let all = specs(ctx)?;
    let mut ledger = ManifestLedger { layout: &ctx.layout, config_hash: ctx.config_hash(), base_seed: ctx.cfg.base_seed };
    if let Some(key) = worker {
        let spec = all.iter().find(|s| worker_key(s) == key).with_context(|| format!("no run matches {}", key))?;
        run_grid(std::slice::from_ref(spec), &mut ledger, |s| train_dispatch(ctx, s))?;
        return Ok(());
    }
    if ctx.parallel <= 1 {
        let outcome = run_grid(&all, &mut ledger, |s| train_dispatch(ctx, s))?;
        println!("trained {} runs, {} already complete", outcome.executed, outcome.skipped);
        return Ok(());
    }
    use morphome::train::RunLedger;
    let pending: Vec<&RunSpec> = all.iter().filter(|s| !ledger.is_complete(s)).collect();
    let exe = std::env::current_exe()?;
    let mut running: Vec<(String, Child)> = Vec::new();
    let mut failed = Vec::new();
    let mut queue = pending.iter();
    loop {
        while running.len() < ctx.parallel {
            let Some(spec) = queue.next() else { break };
            let key = worker_key(spec);
            let child = Command::new(&exe).args(forward_args).args(["train", "--worker", &key]).spawn()?;
            running.push((key, child));
        }
        if running.is_empty() {
            break;
        }
        let (key, mut child) = running.remove(0);
        let status = child.wait()?;
        if !status.success() {
            failed.push((key, status.code().unwrap_or(1)));
        }
    }
    if let Some((key, code)) = failed.first() {
        if *code == 3 {
            bail!(NumericalFailure(format!("worker for {} hit a numerical failure", key)));
        }
        bail!("{} of {} workers failed, first: {} (exit {})", failed.len(), pending.len(), key, code);
    }
    println!("trained {} runs, {} already complete", pending.len(), all.len() - pending.len());
    Ok(())
}

fn load_run(ctx: &Ctx, spec: &RunSpec) -> anyhow::Result<RunRecord> {
    let path = ctx.layout.run_dir(spec.split.condition, spec.variant, &spec.run_id()).join("run.json");
    if !path.exists() {
        return Err(missing(&path, "train"));
    }
    let record: RunRecord = read_json(&path)?;
    if record.config_hash != ctx.config_hash() {
        bail!(MissingDependency(format!("{} was trained with a different config: run cmd_train first (`morphome train`)", path.display())));
    }
    Ok(record)
}

fn with_model<R>(ctx: &Ctx, spec: &RunSpec, f: &mut dyn FnMut(&mut dyn morphome::eval::Predictor) -> anyhow::Result<R>) -> anyhow::Result<R> {
    let dir = ctx.layout.run_dir(spec.split.condition, spec.variant, &spec.run_id());
    let vocab = load_vocab(&ctx.layout, spec.variant)?;
    let (beam, max_len) = (ctx.cfg.train.beam, ctx.cfg.train.decode_max_len);
    match ctx.cfg.train.precision {
        Precision::F32 => {
            let (model, _) = TransformerModel::<f32>::load(&dir.join("model"))?;
            f(&mut ModelPredictor { model: &model, vocab: &vocab, beam, max_len })
        }
        Precision::F64 => {
            let (model, _) = TransformerModel::<f64>::load(&dir.join("model"))?;
            f(&mut ModelPredictor { model: &model, vocab: &vocab, beam, max_len })
        }
    }
}

#[derive(Serialize, Deserialize, PartialEq)]
struct PredictionStamp {
    config_hash: String,
    instances: usize,
}

pub fn predict(ctx: &Ctx) -> anyhow::Result<()> {
    let prepared = load_prepared(ctx)?;
    let (mut done, mut skipped) = (0, 0);
    for spec in specs(ctx)? {
        load_run(ctx, &spec)?;
        let dir = ctx.layout.run_dir(spec.split.condition, spec.variant, &spec.run_id());
        let test = load_instances(&ctx.layout.run_data(spec.split.condition, &spec.run_id()).join("test.tsv"))?;
        let stamp = PredictionStamp { config_hash: ctx.config_hash(), instances: test.len() };
        if dir.join("predictions.tsv").exists() && read_json::<PredictionStamp>(&dir.join("predictions.json")).is_ok_and(|s| s == stamp) {
            skipped += 1;
            continue;
        }
        let records = with_model(ctx, &spec, &mut |p| Ok(predict_records(p, &test, &prepared.lexicon)?))?;
        write_atomic(&dir.join("predictions.tsv"), records_to_tsv(&records).as_bytes())?;
        write_json(&dir.join("predictions.json"), &stamp)?;
        done += 1;
    }
    println!("wrote predictions for {} runs, {} up to date", done, skipped);
    Ok(())
}

pub fn eval(ctx: &Ctx, per_run_clusters: bool) -> anyhow::Result<()> {
    let prepared = load_prepared(ctx)?;
    let table = &prepared.table;
    let mut acc_rows = Vec::new();
    let mut cell_rows = Vec::new();
    let mut run_cell_rows = Vec::new();
    let mut shapes: BTreeMap<(String, ArchVariant), Vec<CellScores>> = BTreeMap::new();
    let mut order: Vec<(String, ArchVariant)> = Vec::new();
    for spec in specs(ctx)? {
        let dir = ctx.layout.run_dir(spec.split.condition, spec.variant, &spec.run_id());
        let path = dir.join("predictions.tsv");
        if !path.exists() {
            return Err(missing(&path, "predict"));
        }
        let text = std::fs::read_to_string(&path)?;
        let records = parse_records(&text, &path.display().to_string())?;
        let cond = condition_dir(spec.split.condition);
        let row = |metric: &str, group: &str, value: Option<f64>| AccuracyRow {
            variant: spec.variant.name().to_string(),
            condition: cond.clone(),
            run: spec.run_id(),
            metric: metric.to_string(),
            group: group.to_string(),
            value,
        };
        for by in [GroupBy::Overall, GroupBy::VerbClass] {
            for g in sequence_accuracy(&records, by)? {
                acc_rows.push(row("sequence", &g.group, g.accuracy));
            }
            for (name, mode) in [("stem", StemMode::Strict), ("stem_relaxed", StemMode::Relaxed)] {
                let rep = stem_accuracy(&records, table, by, mode)?;
                for g in rep.groups {
                    acc_rows.push(row(name, &g.group, g.accuracy));
                }
                if by == GroupBy::Overall && rep.unmatched > 0 {
                    acc_rows.push(row(&format!("{}_unmatched_gold", name), "overall", Some(rep.unmatched as f64)));
                }
            }
        }
        let shape = paradigm_shape(&records, table, StemMode::Strict);
        if per_run_clusters {
            run_cell_rows.extend(cell_rows_for(&format!("{}/{}", cond, spec.run_id()), spec.variant, &shape)?);
        }
        let key = (cond, spec.variant);
        if !shapes.contains_key(&key) {
            order.push(key.clone());
        }
        shapes.entry(key).or_default().push(shape);
    }
    let mut clusters = BTreeMap::new();
    for key in &order {
        let mean = CellScores::mean(&shapes[key]);
        cell_rows.extend(cell_rows_for(&key.0, key.1, &mean)?);
        let input = mean.clustering_input();
        if !input.is_empty() {
            let a = kmeans_cells(&input)?;
            clusters.insert(
                format!("{}/{}", key.0, key.1.name()),
                serde_json::json!({
                    "misclassified": compare_expected(&a).iter().map(|c| c.label()).collect::<Vec<_>>(),
                    "degenerate": a.degenerate,
                    "excluded_cells": mean.missing().iter().map(|c| c.label()).collect::<Vec<_>>(),
                    "runs": shapes[key].len(),
                }),
            );
        }
    }
    write_report(ctx, "accuracy.csv", write_csv(&acc_rows)?.as_bytes())?;
    write_report(ctx, "cells.csv", write_csv(&cell_rows)?.as_bytes())?;
    let mut json = serde_json::to_vec_pretty(&clusters)?;
    json.push(b'\n');
    write_report(ctx, "clusters.json", &json)?;
    if per_run_clusters {
        write_report(ctx, "cells_per_run.csv", write_csv(&run_cell_rows)?.as_bytes())?;
    }
    println!("evaluated {} variant/condition groups", order.len());
    Ok(())
}

fn cell_rows_for(condition: &str, variant: ArchVariant, scores: &CellScores) -> anyhow::Result<Vec<CellRow>> {
    let input = scores.clustering_input();
    let assignment = if input.is_empty() { None } else { Some(kmeans_cells(&input)?) };
    Ok(CellTag::ALL
        .iter()
        .map(|&c| CellRow {
            variant: variant.name().to_string(),
            condition: condition.to_string(),
            cell: c.label(),
            raw: scores.raw(c),
            transformed: scores.transformed(c),
            cluster: assignment.as_ref().and_then(|a| a.of(c)).map_or(String::new(), |k: Cluster| k.to_string()),
        })
        .collect())
}

pub fn wug(ctx: &Ctx) -> anyhow::Result<()> {
    let prepared = load_prepared(ctx)?;
    let table = &prepared.table;
    let path = ctx.layout.wug_items();
    if !path.exists() {
        bail!(MissingDependency(format!(
            "{} not found: configure wug_stimuli (or use --synthetic) and run cmd_prepare first (`morphome prepare`)",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(&path)?;
    let items = parse_wug_items(&text, &path.display().to_string(), table)?;
    let human = match &ctx.cfg.human_responses {
        Some(p) => {
            let responses = load_human_responses(p)?;
            let mut by_matcher = BTreeMap::new();
            for m in WugMatcher::ALL {
                by_matcher.insert(m.name(), human_cell_means(&responses, &items, table, m)?);
            }
            Some(by_matcher)
        }
        None => None,
    };
    // (condition, variant, matcher) -> per-cell values over runs, plus overall.
    let mut sums: BTreeMap<(String, ArchVariant, &'static str), Vec<[Option<f64>; 4]>> = BTreeMap::new();
    for spec in specs(ctx)? {
        load_run(ctx, &spec)?;
        let (results, produced) = with_model(ctx, &spec, &mut |p| Ok(wug_evaluate(p, &items, table, &WugMatcher::ALL)?))?;
        let dir = ctx.layout.run_dir(spec.split.condition, spec.variant, &spec.run_id());
        let mut tsv = String::from("lemma\ttgt_tag\tswapped\texpected_stem\tprediction\n");
        for (i, p) in items.iter().zip(&produced) {
            tsv.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", i.lemma, i.tgt_tag, i.swapped, i.expected_stem, p));
        }
        write_atomic(&dir.join("wug_predictions.tsv"), tsv.as_bytes())?;
        for r in results {
            let cells = [r.per_cell[0].1, r.per_cell[1].1, r.per_cell[2].1, Some(r.overall)];
            sums.entry((condition_dir(spec.split.condition), spec.variant, r.matcher.name())).or_default().push(cells);
        }
    }
    let mut rows = Vec::new();
    for ((cond, variant, matcher), runs) in &sums {
        let labels: Vec<String> = WUG_TARGETS.iter().map(|c| c.label()).chain(["ALL".to_string()]).collect();
        for (k, label) in labels.iter().enumerate() {
            let vals: Vec<f64> = runs.iter().filter_map(|r| r[k]).collect();
            let human_acc = human.as_ref().and_then(|h| {
                let per_cell = &h[matcher];
                if k < 3 {
                    per_cell[k].1
                } else {
                    let present: Vec<f64> = per_cell.iter().filter_map(|c| c.1).collect();
                    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
                }
            });
            rows.push(WugRow {
                variant: variant.name().to_string(),
                condition: cond.clone(),
                matcher: matcher.to_string(),
                cell: label.clone(),
                model_acc: (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64),
                human_acc,
            });
        }
    }
    write_report(ctx, "wug.csv", write_csv(&rows)?.as_bytes())?;
    println!("scored {} wug items per run", items.len());
    Ok(())
}

#[derive(Serialize)]
struct SummaryRow {
    variant: String,
    condition: String,
    metric: String,
    group: String,
    mean: f64,
    sd: f64,
    runs: usize,
}

/// Mean and sample standard deviation of accuracy rows across runs.
pub fn report(ctx: &Ctx) -> anyhow::Result<()> {
    let path = ctx.layout.reports().join("accuracy.csv");
    if !path.exists() {
        return Err(missing(&path, "eval"));
    }
    let rows: Vec<AccuracyRow> = read_csv(&path)?;
    let conds: HashSet<String> = ctx.conditions.iter().map(|c| condition_dir(*c)).collect();
    let variants: HashSet<&str> = ctx.variants.iter().map(|v| v.name()).collect();
    let mut groups: BTreeMap<(String, String, String, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        if !conds.contains(&r.condition) || !variants.contains(r.variant.as_str()) || r.metric.ends_with("_unmatched_gold") {
            continue;
        }
        if let Some(v) = r.value {
            groups.entry((r.variant, r.condition, r.metric, r.group)).or_default().push(v);
        }
    }
    let summary: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((variant, condition, metric, group), vals)| {
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let sd = if vals.len() > 1 { (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
            SummaryRow { variant, condition, metric, group, mean, sd, runs: vals.len() }
        })
        .collect();
    let text = write_csv(&summary)?;
    write_report(ctx, "summary.csv", text.as_bytes())?;
    print!("{}", text);
    Ok(())
}
