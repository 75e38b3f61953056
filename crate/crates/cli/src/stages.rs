//! One function per command. Stages hand off through files in the run
//! directory; see the README for the file list.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};

use crushgraph::attribution::attribute;
use crushgraph::dataset::{generate, ParticleSpec, PARTICLES_SCHEMA};
use crushgraph::features::{compute_pmd, pmd_names, PmdVector, PMD_VERSION};
use crushgraph::geometry::ellipsoid_polyhedron;
use crushgraph::graphset::{
    assemble_graph, make_split, mesh_features, FragmentGraph, MeshFeatures, Part, SplitSpec, Task, GRAPH_SCHEMA,
    SPLIT_SCHEMA,
};
use crushgraph::learn::{
    history_csv, metrics, predict_all, train, Ablation, Checkpoint, GraphInput, Metrics, CHECKPOINT_SCHEMA,
};
use crushgraph::simulator::{curve_csv, simulate_crush, CrushRecord, RECORD_SCHEMA};
use crushgraph::tessellation::{tessellate, FragmentMesh, TessellationError};
use crushgraph::weibull::{dataset_summary, filter_batch, fit, mean_rank_survival, WeibullError, WeibullFit};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{stage, CliError};
use crate::manifest::{csv_text, jsonl_text, Recorder};
use crate::svg::{histogram_grid, xy_plot, Histogram, Mark, Series};

pub const PARTICLES_FILE: &str = "particles.jsonl";
pub const CRUSH_FILE: &str = "crush.jsonl";
pub const WEIBULL_FILE: &str = "weibull.csv";
pub const WEIBULL_SCHEMA: &str = "crushgraph.weibull/1";
pub const PMD_FILE: &str = "pmd.csv";
pub const PMD_SCHEMA: &str = "crushgraph.pmd/1";
pub const FEATURES_FILE: &str = "features.jsonl";
pub const FEATURES_SCHEMA: &str = "crushgraph.features/1";
pub const GRAPHS_FILE: &str = "graphs.jsonl";
pub const HISTORY_SCHEMA: &str = "crushgraph.history/1";
pub const EVAL_SCHEMA: &str = "crushgraph.eval/1";
pub const PREDICTIONS_SCHEMA: &str = "crushgraph.predictions/1";
pub const ABLATION_SCHEMA: &str = "crushgraph.ablation/1";
pub const ATTRIBUTION_SCHEMA: &str = "crushgraph.attribution/1";
pub const STATS_SCHEMA: &str = "crushgraph.stats/1";
pub const HISTOGRAM_SCHEMA: &str = "crushgraph.histogram/1";
pub const CURVE_SCHEMA: &str = "crushgraph.curve/1";
pub const SVG_SCHEMA: &str = "crushgraph.svg/1";

/// Feature column the attribution heatmap leaves out.
pub const HEATMAP_EXCLUDED: &str = "centroid_offset";

/// Everything a command needs besides its own flags.
pub struct Context {
    pub config: PipelineConfig,
    pub workers: usize,
    pub limit: Option<usize>,
}

pub fn split_file(task: Task) -> String {
    format!("split_{}.json", task.name())
}

pub fn model_file(task: Task, ablation: Ablation) -> String {
    format!("model_{}_{}.json", task.name(), ablation.name())
}

pub fn eval_file(task: Task, ablation: Ablation) -> String {
    format!("eval_{}_{}.json", task.name(), ablation.name())
}

pub fn ablation_file(task: Task) -> String {
    format!("ablation_{}.csv", task.name())
}

pub fn attribution_file(task: Task, ablation: Ablation, kind: &str, ext: &str) -> String {
    format!("attribution_{}_{}_{kind}.{ext}", task.name(), ablation.name())
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn parse_num(s: &str, what: &str) -> Result<f64, CliError> {
    s.parse::<f64>().map_err(|_| CliError::Stage(format!("cannot parse {what} value {s:?}")))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(stage("worker pool"))
}

fn mesh_for(ctx: &Context, spec: &ParticleSpec, k: usize) -> Result<FragmentMesh, TessellationError> {
    tessellate(&spec.ellipsoid(), spec.test_seed(k), ctx.config.tessellation.lloyd_control())
}

/// Every test of every type, in file order.
fn all_tests(specs: &[ParticleSpec]) -> Vec<(&ParticleSpec, usize)> {
    specs.iter().flat_map(|s| (0..s.tests).map(move |k| (s, k))).collect()
}

fn test_index(specs: &[ParticleSpec]) -> HashMap<String, (&ParticleSpec, usize)> {
    all_tests(specs).into_iter().map(|(s, k)| (s.test_id(k), (s, k))).collect()
}

fn progress(done: &AtomicUsize, total: usize, what: &str) {
    let n = done.fetch_add(1, Ordering::Relaxed) + 1;
    if n == total || n % 25 == 0 {
        eprintln!("{what}: {n}/{total}");
    }
}

pub fn gen(ctx: &Context, rec: &mut Recorder) -> Result<(), CliError> {
    let specs = generate(&ctx.config.dataset, ctx.config.seed).map_err(stage("gen"))?;
    eprintln!("gen: {} particle types", specs.len());
    rec.write(PARTICLES_FILE, PARTICLES_SCHEMA, &jsonl_text(&specs))
}

fn failed_record(particle_id: &str, reason: String) -> CrushRecord {
    CrushRecord {
        schema: RECORD_SCHEMA.to_string(),
        particle_id: particle_id.to_string(),
        curve: Vec::new(),
        peak_force: 0.0,
        gap_at_peak: 0.0,
        strength: 0.0,
        valid: false,
        steps_run: 0,
        failure: Some(reason),
    }
}

pub fn simulate(ctx: &Context, rec: &mut Recorder) -> Result<(), CliError> {
    let specs: Vec<ParticleSpec> = rec.read_jsonl(PARTICLES_FILE, PARTICLES_SCHEMA)?;
    let mut jobs = all_tests(&specs);
    if let Some(n) = ctx.limit {
        jobs.truncate(n);
    }
    let (czm, control) = (ctx.config.czm, ctx.config.control);
    let done = AtomicUsize::new(0);
    let records: Vec<CrushRecord> = pool(ctx.workers)?.install(|| {
        jobs.par_iter()
            .map(|(spec, k)| {
                let id = spec.test_id(*k);
                let record = match mesh_for(ctx, spec, *k) {
                    Ok(mesh) => simulate_crush(&mesh, spec.axis, &czm, &control, &id)
                        .unwrap_or_else(|e| failed_record(&id, e.to_string())),
                    Err(e) => failed_record(&id, e.to_string()),
                };
                progress(&done, jobs.len(), "simulate");
                record
            })
            .collect()
    });
    let valid = records.iter().filter(|r| r.valid).count();
    eprintln!("simulate: {valid}/{} valid", records.len());
    rec.write(CRUSH_FILE, RECORD_SCHEMA, &jsonl_text(&records))
}

pub fn weibull_header() -> Vec<String> {
    ["type_id", "diameter", "shape", "axis", "m", "sigma0", "r2", "n_valid"].map(String::from).to_vec()
}

/// One fitted type as read back from the Weibull table.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedType {
    pub type_id: String,
    pub diameter: f64,
    pub shape: String,
    pub axis: String,
    pub fit: WeibullFit,
}

pub fn read_weibull(rec: &mut Recorder) -> Result<Vec<FittedType>, CliError> {
    rec.read_csv(WEIBULL_FILE, WEIBULL_SCHEMA, &weibull_header())?
        .into_iter()
        .map(|r| {
            Ok(FittedType {
                type_id: r[0].clone(),
                diameter: parse_num(&r[1], "diameter")?,
                shape: r[2].clone(),
                axis: r[3].clone(),
                fit: WeibullFit {
                    m: parse_num(&r[4], "m")?,
                    sigma0: parse_num(&r[5], "sigma0")?,
                    r2: parse_num(&r[6], "r2")?,
                    n_valid: r[7].parse().map_err(|_| CliError::Stage(format!("bad n_valid {:?}", r[7])))?,
                },
            })
        })
        .collect()
}

/// Records grouped by type, in particle-file order; types without any
/// record are left out.
fn records_by_type<'a>(
    specs: &'a [ParticleSpec],
    records: &[CrushRecord],
) -> Result<Vec<(&'a ParticleSpec, Vec<CrushRecord>)>, CliError> {
    let index = test_index(specs);
    let mut groups: BTreeMap<usize, Vec<CrushRecord>> = BTreeMap::new();
    let position: HashMap<&str, usize> = specs.iter().enumerate().map(|(i, s)| (s.type_id.as_str(), i)).collect();
    for r in records {
        let (spec, _) = index
            .get(&r.particle_id)
            .ok_or_else(|| CliError::Stage(format!("record {} matches no particle test", r.particle_id)))?;
        groups.entry(position[spec.type_id.as_str()]).or_default().push(r.clone());
    }
    Ok(groups.into_iter().map(|(i, v)| (&specs[i], v)).collect())
}

pub fn fit_weibull(ctx: &Context, rec: &mut Recorder) -> Result<(), CliError> {
    let specs: Vec<ParticleSpec> = rec.read_jsonl(PARTICLES_FILE, PARTICLES_SCHEMA)?;
    let records: Vec<CrushRecord> = rec.read_jsonl(CRUSH_FILE, RECORD_SCHEMA)?;
    let mut rows = Vec::new();
    let mut dropped = 0;
    for (spec, recs) in records_by_type(&specs, &records)? {
        let fitted = filter_batch(&recs, ctx.config.min_valid).and_then(|s| fit(&s));
        match fitted {
            Ok(f) => rows.push(vec![
                spec.type_id.clone(),
                num(spec.diameter),
                spec.shape.clone(),
                spec.axis.name().to_string(),
                num(f.m),
                num(f.sigma0),
                num(f.r2),
                f.n_valid.to_string(),
            ]),
            Err(e @ (WeibullError::InsufficientData { .. } | WeibullError::DegenerateSample)) => {
                dropped += 1;
                eprintln!("fit-weibull: dropping {}: {e}", spec.type_id);
            }
            Err(e) => return Err(CliError::Stage(format!("{}: {e}", spec.type_id))),
        }
    }
    eprintln!("fit-weibull: {} types fitted, {dropped} dropped", rows.len());
    rec.write(WEIBULL_FILE, WEIBULL_SCHEMA, &csv_text(&weibull_header(), &rows))
}

pub fn pmd_header() -> Vec<String> {
    std::iter::once("type_id".to_string()).chain(pmd_names()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub schema: String,
    pub particle_id: String,
    pub type_id: String,
    #[serde(flatten)]
    pub features: MeshFeatures,
}

/// PMD per type and node/edge features per valid test.
pub fn features(ctx: &Context, rec: &mut Recorder) -> Result<(), CliError> {
    let specs: Vec<ParticleSpec> = rec.read_jsonl(PARTICLES_FILE, PARTICLES_SCHEMA)?;
    let records: Vec<CrushRecord> = rec.read_jsonl(CRUSH_FILE, RECORD_SCHEMA)?;
    let index = test_index(&specs);
    let mut jobs = Vec::new();
    for r in records.iter().filter(|r| r.valid) {
        let job = index
            .get(&r.particle_id)
            .ok_or_else(|| CliError::Stage(format!("record {} matches no particle test", r.particle_id)))?;
        jobs.push(*job);
    }
    if let Some(n) = ctx.limit {
        jobs.truncate(n);
    }
    let mut types: Vec<&ParticleSpec> = Vec::new();
    for (s, _) in &jobs {
        if !types.iter().any(|t| t.type_id == s.type_id) {
            types.push(s);
        }
    }
    let done = AtomicUsize::new(0);
    let total = jobs.len() + types.len();
    let workers = pool(ctx.workers)?;
    let pmd_rows: Vec<Vec<String>> = workers.install(|| {
        types
            .par_iter()
            .map(|spec| {
                let poly = ellipsoid_polyhedron(&spec.ellipsoid()).map_err(stage(&spec.type_id))?;
                let pmd = compute_pmd(&poly).map_err(stage(&spec.type_id))?;
                progress(&done, total, "features");
                Ok(std::iter::once(spec.type_id.clone()).chain(pmd.values.iter().map(|v| num(*v))).collect())
            })
            .collect::<Result<_, CliError>>()
    })?;
    let rows: Vec<FeatureRow> = workers.install(|| {
        jobs.par_iter()
            .map(|(spec, k)| {
                let id = spec.test_id(*k);
                let mesh = mesh_for(ctx, spec, *k).map_err(stage(&id))?;
                let features = mesh_features(&mesh, spec.axis).map_err(stage(&id))?;
                progress(&done, total, "features");
                Ok(FeatureRow {
                    schema: FEATURES_SCHEMA.to_string(),
                    particle_id: id,
                    type_id: spec.type_id.clone(),
                    features,
                })
            })
            .collect::<Result<_, CliError>>()
    })?;
    rec.write(PMD_FILE, PMD_SCHEMA, &csv_text(&pmd_header(), &pmd_rows))?;
    rec.write(FEATURES_FILE, FEATURES_SCHEMA, &jsonl_text(&rows))
}

pub fn read_pmd(rec: &mut Recorder) -> Result<BTreeMap<String, PmdVector>, CliError> {
    rec.read_csv(PMD_FILE, PMD_SCHEMA, &pmd_header())?
        .into_iter()
        .map(|r| {
            let values = r[1..].iter().map(|v| parse_num(v, "pmd")).collect::<Result<Vec<f64>, _>>()?;
            Ok((
                r[0].clone(),
                PmdVector {
                    version: PMD_VERSION.to_string(),
                    values,
                },
            ))
        })
        .collect()
}

/// Labelled graphs: features joined with the PMD and the fitted strength
/// of their type. Types without a fit are skipped.
pub fn graphs(_ctx: &Context, rec: &mut Recorder) -> Result<(), CliError> {
    let specs: Vec<ParticleSpec> = rec.read_jsonl(PARTICLES_FILE, PARTICLES_SCHEMA)?;
    let fits: HashMap<String, f64> = read_weibull(rec)?.into_iter().map(|f| (f.type_id, f.fit.sigma0)).collect();
    let pmd = read_pmd(rec)?;
    let rows: Vec<FeatureRow> = rec.read_jsonl(FEATURES_FILE, FEATURES_SCHEMA)?;
    let by_type: HashMap<&str, &ParticleSpec> = specs.iter().map(|s| (s.type_id.as_str(), s)).collect();
    let mut out = Vec::new();
    for row in rows {
        let Some(&sigma0) = fits.get(&row.type_id) else { continue };
        let spec = by_type
            .get(row.type_id.as_str())
            .ok_or_else(|| CliError::Stage(format!("unknown type {}", row.type_id)))?;
        let p = pmd
            .get(&row.type_id)
            .ok_or_else(|| CliError::Stage(format!("no PMD row for {}", row.type_id)))?;
        out.push(assemble_graph(row.features, spec, &row.particle_id, p, sigma0).map_err(stage(&row.particle_id))?);
    }
    if out.is_empty() {
        return Err(CliError::Stage("no fitted type has features; nothing to write".into()));
    }
    eprintln!("graphs: {} labelled graphs", out.len());
    rec.write(GRAPHS_FILE, GRAPH_SCHEMA, &jsonl_text(&out))
}

pub fn split(ctx: &Context, rec: &mut Recorder, tasks: &[Task]) -> Result<(), CliError> {
    let graphs: Vec<FragmentGraph> = rec.read_jsonl(GRAPHS_FILE, GRAPH_SCHEMA)?;
    for &task in tasks {
        let s = make_split(task, &graphs, &ctx.config.split, ctx.config.seed).map_err(stage(task.name()))?;
        eprintln!(
            "split {}: {} train, {} val, {} test types",
            task.name(),
            s.train.len(),
            s.val.len(),
            s.test.len()
        );
        if s.test.is_empty() {
            eprintln!("split {}: no held-out types, test metrics will be empty", task.name());
        }
        let text = serde_json::to_string_pretty(&s).expect("split serializes") + "\n";
        rec.write(&split_file(task), SPLIT_SCHEMA, &text)?;
    }
    Ok(())
}

fn inputs(graphs: &[FragmentGraph]) -> Result<Vec<GraphInput>, CliError> {
    graphs
        .iter()
        .map(|g| GraphInput::from_graph(g).map_err(stage(&g.particle_id)))
        .collect()
}

/// Loaded graphs and split for one task, shared by train, eval and ablate.
struct TaskData {
    task: Task,
    split: SplitSpec,
    graphs: Vec<FragmentGraph>,
}

impl TaskData {
    fn load(rec: &mut Recorder, graphs: &[FragmentGraph], task: Task) -> Result<Self, CliError> {
        let split: SplitSpec = rec.read_json(&split_file(task), SPLIT_SCHEMA)?;
        Ok(Self {
            task,
            split,
            graphs: graphs.to_vec(),
        })
    }

    fn part(&self, part: Part) -> Vec<FragmentGraph> {
        self.split.select(&self.graphs, part)
    }
}

fn train_one(ctx: &Context, rec: &mut Recorder, data: &TaskData, ablation: Ablation) -> Result<(), CliError> {
    let label = format!("train {} {}", data.task.name(), ablation.name());
    let train_set = inputs(&data.part(Part::Train))?;
    let val_set = inputs(&data.part(Part::Val))?;
    let mut model = ctx.config.model.clone().with_ablation(ablation);
    model.seed = ctx.config.seed;
    let outcome = train(&train_set, &val_set, &model).map_err(stage(&label))?;
    eprintln!(
        "{label}: {} graphs, best epoch {} of {}, val MAE {:.4}",
        train_set.len(),
        outcome.best_epoch,
        outcome.history.len(),
        outcome.best_val_mae
    );
    let ckpt = Checkpoint::new(&model, &outcome.params, outcome.best_epoch, &data.split.standardizer);
    rec.write(&model_file(data.task, ablation), CHECKPOINT_SCHEMA, &(ckpt.to_json() + "\n"))?;
    let history = format!("history_{}_{}.csv", data.task.name(), ablation.name());
    rec.write(&history, HISTORY_SCHEMA, &history_csv(&outcome.history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartMetrics {
    pub n: usize,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub task: Task,
    pub ablation: Ablation,
    pub best_epoch: usize,
    pub train: PartMetrics,
    pub val: PartMetrics,
    pub test: PartMetrics,
}

fn eval_one(rec: &mut Recorder, data: &TaskData, ablation: Ablation) -> Result<EvalReport, CliError> {
    let ckpt_text = rec.read(&model_file(data.task, ablation), CHECKPOINT_SCHEMA)?;
    let ckpt = Checkpoint::from_json(&ckpt_text).map_err(|e| match e {
        crushgraph::learn::LearnError::Schema { expected, found } => CliError::Schema {
            path: rec.path(&model_file(data.task, ablation)),
            expected,
            found,
        },
        e => CliError::Stage(e.to_string()),
    })?;
    let params = ckpt.params();
    let mut rows = Vec::new();
    let mut parts = Vec::new();
    for (part, name) in [(Part::Train, "train"), (Part::Val, "val"), (Part::Test, "test")] {
        let graphs = data.split.select(&data.graphs, part);
        let xs = inputs(&graphs)?;
        let pred = predict_all(&ckpt.config, &params, &xs).map_err(stage("eval"))?;
        let labels: Vec<f64> = xs.iter().map(|x| x.label).collect();
        let m: Option<Metrics> = (!xs.is_empty()).then(|| metrics(&pred, &labels));
        parts.push(PartMetrics {
            n: xs.len(),
            mae: m.map(|m| m.mae),
            rmse: m.map(|m| m.rmse),
        });
        for ((g, p), y) in graphs.iter().zip(&pred).zip(&labels) {
            rows.push(vec![g.particle_id.clone(), g.type_id.clone(), name.to_string(), num(*y), num(*p)]);
        }
    }
    let header = ["particle_id", "type_id", "part", "label", "prediction"].map(String::from).to_vec();
    let predictions = format!("predictions_{}_{}.csv", data.task.name(), ablation.name());
    rec.write(&predictions, PREDICTIONS_SCHEMA, &csv_text(&header, &rows))?;
    let test = parts.pop().expect("three parts");
    let val = parts.pop().expect("three parts");
    let train = parts.pop().expect("three parts");
    let report = EvalReport {
        schema: EVAL_SCHEMA.to_string(),
        task: data.task,
        ablation,
        best_epoch: ckpt.best_epoch,
        train,
        val,
        test,
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    rec.write(&eval_file(data.task, ablation), EVAL_SCHEMA, &text)?;
    let show = |m: Option<f64>| m.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    eprintln!(
        "eval {} {}: test MAE {} RMSE {} ({} graphs)",
        data.task.name(),
        ablation.name(),
        show(report.test.mae),
        show(report.test.rmse),
        report.test.n
    );
    Ok(report)
}

pub fn train_cmd(ctx: &Context, rec: &mut Recorder, tasks: &[Task], ablation: Ablation) -> Result<(), CliError> {
    let graphs: Vec<FragmentGraph> = rec.read_jsonl(GRAPHS_FILE, GRAPH_SCHEMA)?;
    for &task in tasks {
        let data = TaskData::load(rec, &graphs, task)?;
        train_one(ctx, rec, &data, ablation)?;
    }
    Ok(())
}

pub fn eval_cmd(rec: &mut Recorder, tasks: &[Task], ablation: Ablation) -> Result<(), CliError> {
    let graphs: Vec<FragmentGraph> = rec.read_jsonl(GRAPHS_FILE, GRAPH_SCHEMA)?;
    for &task in tasks {
        let data = TaskData::load(rec, &graphs, task)?;
        eval_one(rec, &data, ablation)?;
    }
    Ok(())
}

pub fn ablation_header() -> Vec<String> {
    ["task", "variant", "best_epoch", "val_mae", "test_mae", "test_rmse"].map(String::from).to_vec()
}

/// Baseline, no-PMD and no-NEF trained and evaluated on the same split.
pub fn ablate(ctx: &Context, rec: &mut Recorder, tasks: &[Task]) -> Result<(), CliError> {
    let graphs: Vec<FragmentGraph> = rec.read_jsonl(GRAPHS_FILE, GRAPH_SCHEMA)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), num);
    for &task in tasks {
        let data = TaskData::load(rec, &graphs, task)?;
        let mut rows = Vec::new();
        for ablation in Ablation::ALL {
            train_one(ctx, rec, &data, ablation)?;
            let r = eval_one(rec, &data, ablation)?;
            rows.push(vec![
                task.name().to_string(),
                ablation.name().to_string(),
                r.best_epoch.to_string(),
                opt(r.val.mae),
                opt(r.test.mae),
                opt(r.test.rmse),
            ]);
        }
        rec.write(&ablation_file(task), ABLATION_SCHEMA, &csv_text(&ablation_header(), &rows))?;
    }
    Ok(())
}

/// Gradient attribution of a trained model over every labelled graph.
pub fn attribute_cmd(rec: &mut Recorder, tasks: &[Task], ablation: Ablation) -> Result<(), CliError> {
    let graphs: Vec<FragmentGraph> = rec.read_jsonl(GRAPHS_FILE, GRAPH_SCHEMA)?;
    for &task in tasks {
        let ckpt_text = rec.read(&model_file(task, ablation), CHECKPOINT_SCHEMA)?;
        let ckpt = Checkpoint::from_json(&ckpt_text).map_err(stage("checkpoint"))?;
        let standardised: Vec<FragmentGraph> = graphs.iter().map(|g| ckpt.standardizer.transform(g)).collect();
        let (pmd, nef) = attribute(&ckpt.config, &ckpt.params(), &standardised).map_err(stage("attribute"))?;
        let title = |what: &str| format!("{what} attribution, {} task, {}", task.name(), ablation.name());
        for (kind, matrix, exclude) in [("pmd", &pmd, vec![HEATMAP_EXCLUDED]), ("nef", &nef, vec![])] {
            let csv = matrix.to_csv().map_err(stage("attribute"))?;
            rec.write(&attribution_file(task, ablation, kind, "csv"), ATTRIBUTION_SCHEMA, &csv)?;
            let svg = matrix.heatmap_svg(&title(&kind.to_uppercase()), &exclude);
            rec.write(&attribution_file(task, ablation, kind, "svg"), SVG_SCHEMA, &svg)?;
        }
    }
    Ok(())
}

/// Quantile table of the fitted parameters and feature histograms.
pub fn stats(rec: &mut Recorder) -> Result<(), CliError> {
    let fitted = read_weibull(rec)?;
    let fits: Vec<WeibullFit> = fitted.iter().map(|f| f.fit).collect();
    let summary = dataset_summary(&fits).ok_or_else(|| CliError::Stage("no fitted types".into()))?;
    let header = ["quantity", "min", "q25", "median", "q75", "max", "n_types"].map(String::from).to_vec();
    let row = |name: &str, q: [f64; 5]| {
        std::iter::once(name.to_string())
            .chain(q.iter().map(|v| num(*v)))
            .chain(std::iter::once(summary.n_types.to_string()))
            .collect::<Vec<_>>()
    };
    let rows = vec![row("sigma0_mpa", summary.sigma0.as_array()), row("m", summary.m.as_array())];
    rec.write("stats_summary.csv", STATS_SCHEMA, &csv_text(&header, &rows))?;

    let pmd = read_pmd(rec)?;
    let names = pmd_names();
    let mut hists = vec![
        Histogram::of("sigma0 (MPa)", &fits.iter().map(|f| f.sigma0).collect::<Vec<_>>(), 10),
        Histogram::of("m", &fits.iter().map(|f| f.m).collect::<Vec<_>>(), 10),
    ];
    for (k, name) in names.iter().enumerate() {
        let values: Vec<f64> = pmd.values().map(|p| p.values[k]).collect();
        hists.push(Histogram::of(name, &values, 10));
    }
    let mut hist_rows = Vec::new();
    for h in &hists {
        for (k, c) in h.counts.iter().enumerate() {
            let (lo, hi) = h.edges(k);
            hist_rows.push(vec![h.name.clone(), k.to_string(), num(lo), num(hi), c.to_string()]);
        }
    }
    let header = ["feature", "bin", "lo", "hi", "count"].map(String::from).to_vec();
    rec.write("stats_histograms.csv", HISTOGRAM_SCHEMA, &csv_text(&header, &hist_rows))?;
    rec.write("stats_histograms.svg", SVG_SCHEMA, &histogram_grid("Feature distributions", &hists))
}

fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

/// Load-displacement curves of the first `--limit` (default 1) records and
/// Weibull plots of the first `--limit` fitted types.
pub fn plot(ctx: &Context, rec: &mut Recorder) -> Result<(), CliError> {
    let n = ctx.limit.unwrap_or(1);
    let records: Vec<CrushRecord> = rec.read_jsonl(CRUSH_FILE, RECORD_SCHEMA)?;
    let mut chosen: Vec<&CrushRecord> = records.iter().filter(|r| r.valid).take(n).collect();
    if chosen.is_empty() {
        chosen = records.iter().filter(|r| !r.curve.is_empty()).take(n).collect();
    }
    if chosen.is_empty() {
        return Err(CliError::Stage("no record has a load curve".into()));
    }
    for r in chosen {
        let stem = file_stem(&r.particle_id);
        rec.write(&format!("curve_{stem}.csv"), CURVE_SCHEMA, &curve_csv(r))?;
        let gap0 = r.curve.first().map_or(0.0, |p| p.gap);
        let points = r.curve.iter().map(|p| (gap0 - p.gap, p.force)).collect();
        let title = format!("{}: peak {:.1} N, strength {:.2} MPa", r.particle_id, r.peak_force, r.strength);
        let series = [Series { label: "platen force".into(), points, mark: Mark::Line }];
        rec.write(&format!("curve_{stem}.svg"), SVG_SCHEMA, &xy_plot(&title, "platen displacement (mm)", "force (N)", &series))?;
    }
    if !rec.exists(WEIBULL_FILE) {
        return Ok(());
    }
    let fitted = read_weibull(rec)?;
    let specs: Vec<ParticleSpec> = rec.read_jsonl(PARTICLES_FILE, PARTICLES_SCHEMA)?;
    let groups = records_by_type(&specs, &records)?;
    for f in fitted.iter().take(n) {
        let Some((_, recs)) = groups.iter().find(|(s, _)| s.type_id == f.type_id) else { continue };
        let mut s: Vec<f64> = recs.iter().filter(|r| r.valid).map(|r| r.strength).collect();
        s.sort_by(f64::total_cmp);
        let ps = mean_rank_survival(s.len());
        let pts: Vec<(f64, f64)> = s.iter().zip(&ps).map(|(x, p)| (x.ln(), (-p.ln()).ln())).collect();
        let (lo, hi) = (pts[0].0, pts[pts.len() - 1].0);
        let line = |x: f64| f.fit.m * (x - f.fit.sigma0.ln());
        let series = [
            Series { label: "ranked tests".into(), points: pts, mark: Mark::Dots },
            Series {
                label: format!("m = {:.3}, sigma0 = {:.3} MPa, R2 = {:.4}", f.fit.m, f.fit.sigma0, f.fit.r2),
                points: vec![(lo, line(lo)), (hi, line(hi))],
                mark: Mark::Line,
            },
        ];
        let svg = xy_plot(&format!("Weibull fit {}", f.type_id), "ln strength (MPa)", "ln(-ln Ps)", &series);
        rec.write(&format!("weibull_{}.svg", file_stem(&f.type_id)), SVG_SCHEMA, &svg)?;
    }
    Ok(())
}
