//! Labelled fragment graphs and the Diameter / Shape / Axis splits.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{loading_frame, ParticleSpec, TABLE_TEST_AXES, TABLE_TEST_DIAMETERS, TABLE_TEST_SHAPES};
use crate::features::{
    compute_edge_features, compute_node_features, distance_features, pmd_names, PmdVector, DISTANCE_FEATURES,
    EDGE_FEATURES, EDGE_FEATURE_NAMES, NODE_FEATURES, NODE_FEATURE_NAMES, PMD_LEN,
};
use crate::simulator::Axis;
use crate::tessellation::FragmentMesh;

pub const GRAPH_SCHEMA: &str = "crushgraph.graph/1";
pub const SPLIT_SCHEMA: &str = "crushgraph.split/1";
pub const NODE_DIM: usize = NODE_FEATURES + DISTANCE_FEATURES;
pub const EDGE_DIM: usize = EDGE_FEATURES;
pub const GRAPH_DIM: usize = PMD_LEN + DISTANCE_FEATURES;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("fragment graph is disconnected ({0} components)")]
    DisconnectedGraph(usize),
    #[error("label must be positive, got {0}")]
    BadLabel(f64),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("feature extraction failed: {0}")]
    Features(String),
    #[error("schema mismatch: expected {expected}, found {found}")]
    Schema { expected: String, found: String },
    #[error("cannot parse graph: {0}")]
    Parse(String),
    #[error("split leaves no training types")]
    EmptyTrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentGraph {
    pub schema: String,
    pub particle_id: String,
    pub type_id: String,
    pub diameter: f64,
    pub shape: String,
    pub axis: Axis,
    /// `n x 19`: node features then node distances.
    pub nodes: Vec<Vec<f64>>,
    /// Undirected edges with `i < j`.
    pub edges: Vec<(usize, usize)>,
    /// `m x 9`.
    pub edge_features: Vec<Vec<f64>>,
    /// PMD then particle distances, length 43.
    pub graph: Vec<f64>,
    /// Characteristic strength of the type, MPa.
    pub label: f64,
}

pub fn node_feature_names() -> Vec<String> {
    NODE_FEATURE_NAMES
        .iter()
        .map(|s| s.to_string())
        .chain((0..DISTANCE_FEATURES).map(|k| format!("node_distance_{k}")))
        .collect()
}

pub fn edge_feature_names() -> Vec<String> {
    EDGE_FEATURE_NAMES.iter().map(|s| format!("edge_{s}")).collect()
}

pub fn graph_feature_names() -> Vec<String> {
    pmd_names()
        .into_iter()
        .chain((0..DISTANCE_FEATURES).map(|k| format!("particle_distance_{k}")))
        .collect()
}

/// Label-free part of a graph: node and edge features plus the particle
/// distances, all in the loading frame (compression axis along +Z).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshFeatures {
    pub nodes: Vec<Vec<f64>>,
    pub edges: Vec<(usize, usize)>,
    pub edge_features: Vec<Vec<f64>>,
    pub particle_distances: Vec<f64>,
}

pub fn mesh_features(mesh: &FragmentMesh, axis: Axis) -> Result<MeshFeatures, GraphError> {
    let components = mesh.components();
    if components != 1 {
        return Err(GraphError::DisconnectedGraph(components));
    }
    let framed = mesh.rotated(&loading_frame(axis));
    let err = |e: crate::features::FeatureError| GraphError::Features(e.to_string());
    let (node_dist, particle_dist) = distance_features(&framed).map_err(err)?;
    let nodes = (0..framed.n_cells())
        .map(|c| {
            let f = compute_node_features(&framed, c).map_err(err)?;
            Ok(f.to_array().iter().chain(node_dist[c].iter()).copied().collect())
        })
        .collect::<Result<Vec<Vec<f64>>, GraphError>>()?;
    let edge_features = (0..framed.adjacency.len())
        .map(|e| Ok(compute_edge_features(&framed, e).map_err(err)?.to_array().to_vec()))
        .collect::<Result<Vec<Vec<f64>>, GraphError>>()?;
    Ok(MeshFeatures {
        nodes,
        edges: framed.adjacency.iter().map(|f| (f.i, f.j)).collect(),
        edge_features,
        particle_distances: particle_dist.to_vec(),
    })
}

/// Joins mesh features with the PMD of the particle and the type label.
pub fn assemble_graph(
    features: MeshFeatures,
    spec: &ParticleSpec,
    particle_id: &str,
    pmd: &PmdVector,
    sigma0: f64,
) -> Result<FragmentGraph, GraphError> {
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return Err(GraphError::BadLabel(sigma0));
    }
    if pmd.values.len() != PMD_LEN || features.particle_distances.len() != DISTANCE_FEATURES {
        return Err(GraphError::Features("graph vector has the wrong length".into()));
    }
    Ok(FragmentGraph {
        schema: GRAPH_SCHEMA.to_string(),
        particle_id: particle_id.to_string(),
        type_id: spec.type_id.clone(),
        diameter: spec.diameter,
        shape: spec.shape.clone(),
        axis: spec.axis,
        nodes: features.nodes,
        edges: features.edges,
        edge_features: features.edge_features,
        graph: pmd.values.iter().chain(features.particle_distances.iter()).copied().collect(),
        label: sigma0,
    })
}

/// One graph per simulated particle.
pub fn build_graph(
    mesh: &FragmentMesh,
    spec: &ParticleSpec,
    particle_id: &str,
    pmd: &PmdVector,
    sigma0: f64,
) -> Result<FragmentGraph, GraphError> {
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return Err(GraphError::BadLabel(sigma0));
    }
    assemble_graph(mesh_features(mesh, spec.axis)?, spec, particle_id, pmd, sigma0)
}

impl FragmentGraph {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph serializes")
    }

    pub fn from_json(line: &str) -> Result<Self, GraphError> {
        let g: Self = serde_json::from_str(line).map_err(|e| GraphError::Parse(e.to_string()))?;
        if g.schema != GRAPH_SCHEMA {
            return Err(GraphError::Schema {
                expected: GRAPH_SCHEMA.to_string(),
                found: g.schema,
            });
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Diameter,
    Shape,
    Axis,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Diameter, Task::Shape, Task::Axis];

    pub fn name(self) -> &'static str {
        match self {
            Task::Diameter => "diameter",
            Task::Shape => "shape",
            Task::Axis => "axis",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, GraphError> {
        match s.to_ascii_lowercase().as_str() {
            "diameter" => Ok(Task::Diameter),
            "shape" => Ok(Task::Shape),
            "axis" => Ok(Task::Axis),
            _ => Err(GraphError::UnknownTask(s.to_string())),
        }
    }
}

/// Held-out values of each split dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub test_diameters: Vec<f64>,
    pub test_shapes: Vec<String>,
    pub test_axes: Vec<Axis>,
    pub val_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_diameters: TABLE_TEST_DIAMETERS.to_vec(),
            test_shapes: TABLE_TEST_SHAPES.iter().map(|s| s.to_string()).collect(),
            test_axes: TABLE_TEST_AXES.to_vec(),
            val_fraction: 0.1,
        }
    }
}

/// The split dimensions of one particle type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeKey {
    pub type_id: String,
    pub diameter: f64,
    pub shape: String,
    pub axis: Axis,
}

impl From<&FragmentGraph> for TypeKey {
    fn from(g: &FragmentGraph) -> Self {
        Self {
            type_id: g.type_id.clone(),
            diameter: g.diameter,
            shape: g.shape.clone(),
            axis: g.axis,
        }
    }
}

/// Per-column mean and standard deviation of the training graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub node_mean: Vec<f64>,
    pub node_std: Vec<f64>,
    pub edge_mean: Vec<f64>,
    pub edge_std: Vec<f64>,
    pub graph_mean: Vec<f64>,
    pub graph_std: Vec<f64>,
}

fn column_stats<'a>(rows: impl Iterator<Item = &'a Vec<f64>>, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let rows: Vec<&Vec<f64>> = rows.collect();
    if rows.is_empty() {
        return (vec![0.0; dim], vec![1.0; dim]);
    }
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n).collect();
    let std = (0..dim)
        .map(|c| {
            let var = rows.iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / n;
            // Constant columns pass through centred but unscaled. Round-off
            // spread (scale-free descriptors of rescaled particles) counts
            // as constant.
            if var.sqrt() > 1e-9 * (1.0 + mean[c].abs()) {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

impl Standardizer {
    pub fn fit(graphs: &[&FragmentGraph]) -> Self {
        let (node_mean, node_std) = column_stats(graphs.iter().flat_map(|g| g.nodes.iter()), NODE_DIM);
        let (edge_mean, edge_std) = column_stats(graphs.iter().flat_map(|g| g.edge_features.iter()), EDGE_DIM);
        let (graph_mean, graph_std) = column_stats(graphs.iter().map(|g| &g.graph), GRAPH_DIM);
        Self {
            node_mean,
            node_std,
            edge_mean,
            edge_std,
            graph_mean,
            graph_std,
        }
    }

    pub fn identity() -> Self {
        Self {
            node_mean: vec![0.0; NODE_DIM],
            node_std: vec![1.0; NODE_DIM],
            edge_mean: vec![0.0; EDGE_DIM],
            edge_std: vec![1.0; EDGE_DIM],
            graph_mean: vec![0.0; GRAPH_DIM],
            graph_std: vec![1.0; GRAPH_DIM],
        }
    }

    fn apply(row: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
        row.iter().zip(mean).zip(std).map(|((x, m), s)| (x - m) / s).collect()
    }

    pub fn transform(&self, g: &FragmentGraph) -> FragmentGraph {
        FragmentGraph {
            nodes: g.nodes.iter().map(|r| Self::apply(r, &self.node_mean, &self.node_std)).collect(),
            edge_features: g
                .edge_features
                .iter()
                .map(|r| Self::apply(r, &self.edge_mean, &self.edge_std))
                .collect(),
            graph: Self::apply(&g.graph, &self.graph_mean, &self.graph_std),
            ..g.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub schema: String,
    pub task: Task,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub rng_seed: u64,
    pub standardizer: Standardizer,
}

impl SplitSpec {
    pub fn part_of(&self, type_id: &str) -> Option<Part> {
        if self.train.iter().any(|t| t == type_id) {
            Some(Part::Train)
        } else if self.val.iter().any(|t| t == type_id) {
            Some(Part::Val)
        } else if self.test.iter().any(|t| t == type_id) {
            Some(Part::Test)
        } else {
            None
        }
    }

    /// Standardised graphs of one part, in dataset order.
    pub fn select(&self, dataset: &[FragmentGraph], part: Part) -> Vec<FragmentGraph> {
        dataset
            .iter()
            .filter(|g| self.part_of(&g.type_id) == Some(part))
            .map(|g| self.standardizer.transform(g))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Val,
    Test,
}

fn is_test(task: Task, key: &TypeKey, cfg: &SplitConfig) -> bool {
    match task {
        Task::Diameter => cfg.test_diameters.iter().any(|d| (d - key.diameter).abs() < 1e-9),
        Task::Shape => cfg.test_shapes.iter().any(|s| *s == key.shape),
        Task::Axis => cfg.test_axes.contains(&key.axis),
    }
}

/// Test types by the held-out dimension; validation is `val_fraction` of
/// the training types, allocated across diameters by largest remainder
/// and drawn within each diameter by a seeded shuffle.
pub fn make_split(
    task: Task,
    dataset: &[FragmentGraph],
    cfg: &SplitConfig,
    rng_seed: u64,
) -> Result<SplitSpec, GraphError> {
    let mut keys: BTreeMap<String, TypeKey> = BTreeMap::new();
    for g in dataset {
        keys.entry(g.type_id.clone()).or_insert_with(|| TypeKey::from(g));
    }
    let (test, pool): (Vec<&TypeKey>, Vec<&TypeKey>) = keys.values().partition(|k| is_test(task, k, cfg));
    if pool.is_empty() {
        return Err(GraphError::EmptyTrain);
    }
    // Strata by diameter, in ascending diameter order.
    let mut strata: Vec<(f64, Vec<&TypeKey>)> = Vec::new();
    for k in &pool {
        match strata.iter_mut().find(|(d, _)| (d - k.diameter).abs() < 1e-9) {
            Some((_, v)) => v.push(k),
            None => strata.push((k.diameter, vec![k])),
        }
    }
    strata.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total = ((cfg.val_fraction * pool.len() as f64).round() as usize)
        .max(usize::from(cfg.val_fraction > 0.0))
        .min(pool.len() - 1);
    let quotas: Vec<f64> = strata.iter().map(|(_, v)| cfg.val_fraction * v.len() as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..strata.len()).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    let mut k = 0;
    while alloc.iter().sum::<usize>() < total && !order.is_empty() {
        let s = order[k % order.len()];
        if alloc[s] < strata[s].1.len() {
            alloc[s] += 1;
        }
        k += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut val = BTreeSet::new();
    for ((_, members), n) in strata.iter().zip(&alloc) {
        let mut ids: Vec<&String> = members.iter().map(|m| &m.type_id).collect();
        ids.shuffle(&mut rng);
        val.extend(ids.into_iter().take(*n).cloned());
    }
    let train: Vec<String> = pool.iter().map(|k| k.type_id.clone()).filter(|t| !val.contains(t)).collect();
    let train_set: BTreeSet<&String> = train.iter().collect();
    let train_graphs: Vec<&FragmentGraph> = dataset.iter().filter(|g| train_set.contains(&g.type_id)).collect();
    Ok(SplitSpec {
        schema: SPLIT_SCHEMA.to_string(),
        task,
        standardizer: Standardizer::fit(&train_graphs),
        train,
        val: val.into_iter().collect(),
        test: test.iter().map(|k| k.type_id.clone()).collect(),
        rng_seed,
    })
}
