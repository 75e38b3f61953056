//! Hybrid strength regressor: a GIN-style message-passing network over the
//! fragment graph plus an MLP over the graph vector, summed.
//!
//! Gradients are assembled by hand for the fixed operator set (dense
//! layers, activation, dropout, neighbour sums with edge projection,
//! readout, squared error) and extend to the inputs for attribution.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphset::{FragmentGraph, EDGE_DIM, GRAPH_DIM, NODE_DIM};
use crate::features::{DISTANCE_FEATURES, NODE_FEATURES};

pub const CHECKPOINT_SCHEMA: &str = "crushgraph.checkpoint/1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("graph is disconnected")]
    DisconnectedGraph,
    #[error("loss became non-finite at epoch {epoch}")]
    NonFinite { epoch: usize, history: Vec<EpochRecord> },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("schema mismatch: expected {expected}, found {found}")]
    Schema { expected: String, found: String },
    #[error("cannot parse checkpoint: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    Mean,
    Sum,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    fn slope(self, z: f64) -> f64 {
        match self {
            Activation::Relu => f64::from(u8::from(z > 0.0)),
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Baseline,
    NoPmd,
    NoNef,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Baseline, Ablation::NoPmd, Ablation::NoNef];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline",
            Ablation::NoPmd => "no-pmd",
            Ablation::NoNef => "no-nef",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub n_layers: usize,
    pub dropout: f64,
    pub eps: f64,
    pub readout: Readout,
    pub activation: Activation,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Weight of the squared-parameter penalty.
    pub lambda: f64,
    pub use_pmd: bool,
    pub use_nef: bool,
    /// Include the message-passing branch.
    pub use_gnn: bool,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            n_layers: 2,
            dropout: 0.1,
            eps: 1e-5,
            readout: Readout::Mean,
            activation: Activation::Relu,
            learning_rate: 1e-3,
            batch_size: 128,
            lambda: 0.0,
            use_pmd: true,
            use_nef: true,
            use_gnn: true,
            max_epochs: 1000,
            patience: 50,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn with_ablation(&self, a: Ablation) -> Self {
        let mut c = self.clone();
        match a {
            Ablation::Baseline => {}
            Ablation::NoPmd => c.use_pmd = false,
            Ablation::NoNef => c.use_nef = false,
        }
        c
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::InvalidConfig(m.to_string()));
        if self.hidden == 0 || self.n_layers == 0 {
            return bad("hidden and n_layers must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.lambda >= 0.0) || !(self.learning_rate >= 0.0) {
            return bad("lambda and learning_rate must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !self.use_pmd && !self.use_gnn {
            return bad("at least one branch is needed");
        }
        Ok(())
    }

    fn mlp_branch(&self) -> bool {
        self.use_pmd
    }

    /// Columns of the 19 node columns the GNN reads.
    fn node_columns(&self) -> std::ops::Range<usize> {
        if self.use_nef {
            0..NODE_DIM
        } else {
            NODE_FEATURES..NODE_FEATURES + DISTANCE_FEATURES
        }
    }
}

/// Named dense tensors plus their initialisation seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub tensors: Vec<DMatrix<f64>>,
    pub seed: u64,
}

impl ParamStore {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> &DMatrix<f64> {
        &self.tensors[self.index(name).unwrap_or_else(|| panic!("no parameter {name}"))]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut DMatrix<f64> {
        let k = self.index(name).unwrap_or_else(|| panic!("no parameter {name}"));
        &mut self.tensors[k]
    }

    pub fn zeros_like(&self) -> Vec<DMatrix<f64>> {
        self.tensors.iter().map(|t| DMatrix::zeros(t.nrows(), t.ncols())).collect()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors.iter().map(|t| t.norm_squared()).sum()
    }

    fn push(&mut self, name: String, rows: usize, cols: usize, rng: &mut ChaCha8Rng, bias: bool) {
        let t = if bias {
            DMatrix::zeros(rows, cols)
        } else {
            // Uniform with variance 2/fan_in.
            let a = (6.0 / cols as f64).sqrt();
            DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
        };
        self.names.push(name);
        self.tensors.push(t);
    }

    /// Deterministic initialisation. The output bias of the first branch
    /// starts at `label_mean`.
    pub fn init(config: &ModelConfig, label_mean: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            seed: config.seed,
        };
        let h = config.hidden;
        if config.mlp_branch() {
            let mut width = GRAPH_DIM;
            for k in 0..config.n_layers {
                p.push(format!("mlp.{k}.w"), h, width, &mut rng, false);
                p.push(format!("mlp.{k}.b"), h, 1, &mut rng, true);
                width = h;
            }
            p.push("mlp.head.w".into(), 1, h, &mut rng, false);
            p.push("mlp.head.b".into(), 1, 1, &mut rng, true);
        }
        if config.use_gnn {
            let mut width = config.node_columns().len();
            for k in 0..config.n_layers {
                if config.use_nef {
                    p.push(format!("gnn.{k}.edge.w"), width, EDGE_DIM, &mut rng, false);
                    p.push(format!("gnn.{k}.edge.b"), width, 1, &mut rng, true);
                }
                p.push(format!("gnn.{k}.w1"), h, width, &mut rng, false);
                p.push(format!("gnn.{k}.b1"), h, 1, &mut rng, true);
                p.push(format!("gnn.{k}.w2"), h, h, &mut rng, false);
                p.push(format!("gnn.{k}.b2"), h, 1, &mut rng, true);
                width = h;
            }
            p.push("gnn.head.w".into(), 1, h, &mut rng, false);
            p.push("gnn.head.b".into(), 1, 1, &mut rng, true);
        }
        let head = if config.mlp_branch() { "mlp.head.b" } else { "gnn.head.b" };
        p.get_mut(head)[(0, 0)] = label_mean;
        p
    }
}

/// Dense inputs of one (standardised) graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub graph: DVector<f64>,
    pub nodes: DMatrix<f64>,
    pub edge_features: DMatrix<f64>,
    pub edges: Vec<(usize, usize)>,
    pub label: f64,
}

impl GraphInput {
    pub fn from_graph(g: &FragmentGraph) -> Result<Self, LearnError> {
        let n = g.nodes.len();
        let m = g.edges.len();
        if g.graph.len() != GRAPH_DIM
            || g.nodes.iter().any(|r| r.len() != NODE_DIM)
            || g.edge_features.len() != m
            || g.edge_features.iter().any(|r| r.len() != EDGE_DIM)
            || n == 0
        {
            return Err(LearnError::ShapeMismatch(format!("graph {}", g.particle_id)));
        }
        if g.edges.iter().any(|&(i, j)| i >= n || j >= n || i == j) {
            return Err(LearnError::ShapeMismatch(format!("edge index in graph {}", g.particle_id)));
        }
        Ok(Self {
            graph: DVector::from_column_slice(&g.graph),
            nodes: DMatrix::from_fn(n, NODE_DIM, |i, c| g.nodes[i][c]),
            edge_features: DMatrix::from_fn(m, EDGE_DIM, |e, c| g.edge_features[e][c]),
            edges: g.edges.clone(),
            label: g.label,
        })
    }

    fn connected(&self) -> bool {
        let n = self.nodes.nrows();
        let mut nb = vec![Vec::new(); n];
        for &(i, j) in &self.edges {
            nb[i].push(j);
            nb[j].push(i);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &nb[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Dropout masks for one forward pass; `None` means evaluation mode.
struct Dropout<'a> {
    rate: f64,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl Dropout<'_> {
    fn mask(&mut self, rows: usize, cols: usize) -> Option<DMatrix<f64>> {
        let rng = self.rng.as_deref_mut()?;
        if self.rate <= 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - self.rate);
        let rate = self.rate;
        Some(DMatrix::from_fn(rows, cols, |_, _| if rng.random::<f64>() < rate { 0.0 } else { keep }))
    }
}

/// `X W^T + 1 b^T` for row-stacked `X`.
fn dense(x: &DMatrix<f64>, w: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = x * w.transpose();
    for mut row in z.row_iter_mut() {
        row += b.column(0).transpose();
    }
    z
}

struct Layer {
    input: DMatrix<f64>,
    pre: DMatrix<f64>,
    mask: Option<DMatrix<f64>>,
}

fn activate(z: &DMatrix<f64>, act: Activation, mask: &Option<DMatrix<f64>>) -> DMatrix<f64> {
    let a = z.map(|v| act.apply(v));
    match mask {
        Some(m) => a.component_mul(m),
        None => a,
    }
}

fn activation_grad(da: &DMatrix<f64>, z: &DMatrix<f64>, act: Activation, mask: &Option<DMatrix<f64>>) -> DMatrix<f64> {
    let mut dz = da.zip_map(z, |g, v| g * act.slope(v));
    if let Some(m) = mask {
        dz.component_mul_assign(m);
    }
    dz
}

struct GinCache {
    h_in: DMatrix<f64>,
    msg: DMatrix<f64>,
    l1: Layer,
    l2: Layer,
}

struct Cache {
    mlp: Vec<Layer>,
    mlp_last: Option<DMatrix<f64>>,
    gin: Vec<GinCache>,
    h_out: Option<DMatrix<f64>>,
    pooled: Option<DMatrix<f64>>,
}

/// Gradients of one prediction with respect to the three inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGrad {
    pub graph: DVector<f64>,
    pub nodes: DMatrix<f64>,
    pub edge_features: DMatrix<f64>,
}

pub struct Model<'a> {
    pub config: &'a ModelConfig,
    pub params: &'a ParamStore,
}

impl<'a> Model<'a> {
    pub fn new(config: &'a ModelConfig, params: &'a ParamStore) -> Self {
        Self { config, params }
    }

    fn p(&self, name: &str) -> &DMatrix<f64> {
        self.params.get(name)
    }

    pub fn predict(&self, x: &GraphInput) -> Result<f64, LearnError> {
        Ok(self.forward(x, &mut Dropout { rate: 0.0, rng: None })?.0)
    }

    /// MLP branch alone; 0 when the branch is ablated.
    pub fn mlp_forward(&self, x: &GraphInput) -> f64 {
        if !self.config.mlp_branch() {
            return 0.0;
        }
        let mut cache = Vec::new();
        self.mlp_part(x, &mut Dropout { rate: 0.0, rng: None }, &mut cache).0
    }

    /// Message-passing branch alone; 0 when the branch is absent.
    pub fn gnn_forward(&self, x: &GraphInput) -> Result<f64, LearnError> {
        if !self.config.use_gnn {
            return Ok(0.0);
        }
        if !x.connected() {
            return Err(LearnError::DisconnectedGraph);
        }
        Ok(self.gnn_part(x, &mut Dropout { rate: 0.0, rng: None }).0)
    }

    fn mlp_part(&self, x: &GraphInput, drop: &mut Dropout, cache: &mut Vec<Layer>) -> (f64, DMatrix<f64>) {
        let mut h = DMatrix::from_row_slice(1, GRAPH_DIM, x.graph.as_slice());
        for k in 0..self.config.n_layers {
            let pre = dense(&h, self.p(&format!("mlp.{k}.w")), self.p(&format!("mlp.{k}.b")));
            let mask = drop.mask(1, self.config.hidden);
            let out = activate(&pre, self.config.activation, &mask);
            cache.push(Layer { input: h, pre, mask });
            h = out;
        }
        let y = dense(&h, self.p("mlp.head.w"), self.p("mlp.head.b"))[(0, 0)];
        (y, h)
    }

    fn node_input(&self, x: &GraphInput) -> DMatrix<f64> {
        let cols = self.config.node_columns();
        x.nodes.columns(cols.start, cols.len()).into_owned()
    }

    fn gnn_part(&self, x: &GraphInput, drop: &mut Dropout) -> (f64, Vec<GinCache>, DMatrix<f64>, DMatrix<f64>) {
        let c = self.config;
        let mut h = self.node_input(x);
        let n = h.nrows();
        let mut caches = Vec::new();
        for k in 0..c.n_layers {
            let mut msg = &h * (1.0 + c.eps);
            for &(i, j) in &x.edges {
                let (hi, hj) = (h.row(i).into_owned(), h.row(j).into_owned());
                let mut ri = msg.row_mut(i);
                ri += hj;
                let mut rj = msg.row_mut(j);
                rj += hi;
            }
            if c.use_nef && !x.edges.is_empty() {
                let proj = dense(&x.edge_features, self.p(&format!("gnn.{k}.edge.w")), self.p(&format!("gnn.{k}.edge.b")));
                for (e, &(i, j)) in x.edges.iter().enumerate() {
                    let pe = proj.row(e).into_owned();
                    let mut ri = msg.row_mut(i);
                    ri += &pe;
                    let mut rj = msg.row_mut(j);
                    rj += &pe;
                }
            }
            let pre1 = dense(&msg, self.p(&format!("gnn.{k}.w1")), self.p(&format!("gnn.{k}.b1")));
            let a1 = activate(&pre1, c.activation, &None);
            let pre2 = dense(&a1, self.p(&format!("gnn.{k}.w2")), self.p(&format!("gnn.{k}.b2")));
            let mask = drop.mask(n, c.hidden);
            let out = activate(&pre2, c.activation, &mask);
            caches.push(GinCache {
                h_in: h,
                msg: msg.clone(),
                l1: Layer { input: msg, pre: pre1, mask: None },
                l2: Layer { input: a1, pre: pre2, mask },
            });
            h = out;
        }
        let pooled = match c.readout {
            Readout::Mean => h.row_mean(),
            Readout::Sum => h.row_sum(),
            Readout::Max => DMatrix::from_fn(1, h.ncols(), |_, col| h.column(col).max()).row(0).into_owned(),
        };
        let pooled = DMatrix::from_row_slice(1, pooled.len(), pooled.as_slice());
        let y = dense(&pooled, self.p("gnn.head.w"), self.p("gnn.head.b"))[(0, 0)];
        (y, caches, h, pooled)
    }

    fn forward(&self, x: &GraphInput, drop: &mut Dropout) -> Result<(f64, Cache), LearnError> {
        let mut cache = Cache {
            mlp: Vec::new(),
            mlp_last: None,
            gin: Vec::new(),
            h_out: None,
            pooled: None,
        };
        let mut y = 0.0;
        if self.config.mlp_branch() {
            let (ym, last) = self.mlp_part(x, drop, &mut cache.mlp);
            y += ym;
            cache.mlp_last = Some(last);
        }
        if self.config.use_gnn {
            if !x.connected() {
                return Err(LearnError::DisconnectedGraph);
            }
            let (yg, gin, h, pooled) = self.gnn_part(x, drop);
            y += yg;
            cache.gin = gin;
            cache.h_out = Some(h);
            cache.pooled = Some(pooled);
        }
        Ok((y, cache))
    }

    /// Accumulates `dy * d(prediction)/d(params)` into `grads` and returns the
    /// input gradient scaled by `dy`.
    fn backward(&self, x: &GraphInput, cache: &Cache, dy: f64, grads: &mut [DMatrix<f64>]) -> InputGrad {
        let c = self.config;
        let idx = |name: &str| self.params.index(name).unwrap_or_else(|| panic!("no parameter {name}"));
        let mut out = InputGrad {
            graph: DVector::zeros(GRAPH_DIM),
            nodes: DMatrix::zeros(x.nodes.nrows(), NODE_DIM),
            edge_features: DMatrix::zeros(x.edge_features.nrows(), EDGE_DIM),
        };
        if let Some(last) = &cache.mlp_last {
            grads[idx("mlp.head.w")] += last * dy;
            grads[idx("mlp.head.b")][(0, 0)] += dy;
            let mut dh = self.p("mlp.head.w") * dy;
            for k in (0..c.n_layers).rev() {
                let l = &cache.mlp[k];
                let dz = activation_grad(&dh, &l.pre, c.activation, &l.mask);
                grads[idx(&format!("mlp.{k}.w"))] += dz.transpose() * &l.input;
                grads[idx(&format!("mlp.{k}.b"))] += dz.row_sum().transpose();
                dh = &dz * self.p(&format!("mlp.{k}.w"));
            }
            out.graph = dh.row(0).transpose();
        }
        if let (Some(h), Some(pooled)) = (&cache.h_out, &cache.pooled) {
            grads[idx("gnn.head.w")] += pooled * dy;
            grads[idx("gnn.head.b")][(0, 0)] += dy;
            let dpool = self.p("gnn.head.w") * dy;
            let n = h.nrows();
            let mut dh = match c.readout {
                Readout::Mean => DMatrix::from_fn(n, h.ncols(), |_, col| dpool[(0, col)] / n as f64),
                Readout::Sum => DMatrix::from_fn(n, h.ncols(), |_, col| dpool[(0, col)]),
                Readout::Max => {
                    let mut d = DMatrix::zeros(n, h.ncols());
                    for col in 0..h.ncols() {
                        let arg = h.column(col).iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, v)| {
                            if *v > b.1 {
                                (i, *v)
                            } else {
                                b
                            }
                        });
                        d[(arg.0, col)] = dpool[(0, col)];
                    }
                    d
                }
            };
            for k in (0..c.n_layers).rev() {
                let g = &cache.gin[k];
                let dz2 = activation_grad(&dh, &g.l2.pre, c.activation, &g.l2.mask);
                grads[idx(&format!("gnn.{k}.w2"))] += dz2.transpose() * &g.l2.input;
                grads[idx(&format!("gnn.{k}.b2"))] += dz2.row_sum().transpose();
                let da1 = &dz2 * self.p(&format!("gnn.{k}.w2"));
                let dz1 = activation_grad(&da1, &g.l1.pre, c.activation, &g.l1.mask);
                grads[idx(&format!("gnn.{k}.w1"))] += dz1.transpose() * &g.msg;
                grads[idx(&format!("gnn.{k}.b1"))] += dz1.row_sum().transpose();
                let dmsg = &dz1 * self.p(&format!("gnn.{k}.w1"));
                let mut dprev = &dmsg * (1.0 + c.eps);
                for &(i, j) in &x.edges {
                    let (mi, mj) = (dmsg.row(i).into_owned(), dmsg.row(j).into_owned());
                    let mut ri = dprev.row_mut(i);
                    ri += mj;
                    let mut rj = dprev.row_mut(j);
                    rj += mi;
                }
                if c.use_nef && !x.edges.is_empty() {
                    let dproj = DMatrix::from_fn(x.edges.len(), dmsg.ncols(), |e, col| {
                        let (i, j) = x.edges[e];
                        dmsg[(i, col)] + dmsg[(j, col)]
                    });
                    grads[idx(&format!("gnn.{k}.edge.w"))] += dproj.transpose() * &x.edge_features;
                    grads[idx(&format!("gnn.{k}.edge.b"))] += dproj.row_sum().transpose();
                    out.edge_features += &dproj * self.p(&format!("gnn.{k}.edge.w"));
                }
                debug_assert_eq!(g.h_in.shape(), dprev.shape());
                dh = dprev;
            }
            let cols = c.node_columns();
            out.nodes.columns_mut(cols.start, cols.len()).copy_from(&dh);
        }
        out
    }

    /// Gradient of the prediction with respect to the inputs (evaluation mode).
    pub fn input_gradient(&self, x: &GraphInput) -> Result<InputGrad, LearnError> {
        let (_, cache) = self.forward(x, &mut Dropout { rate: 0.0, rng: None })?;
        let mut scratch = self.params.zeros_like();
        Ok(self.backward(x, &cache, 1.0, &mut scratch))
    }
}

/// Mean squared error plus `lambda` times the squared parameter norm, with
/// its gradient. `rng` enables dropout.
pub fn loss_and_grad(
    config: &ModelConfig,
    params: &ParamStore,
    batch: &[&GraphInput],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Vec<DMatrix<f64>>), LearnError> {
    if batch.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let model = Model::new(config, params);
    let mut grads = params.zeros_like();
    let mut drop = Dropout {
        rate: config.dropout,
        rng,
    };
    let n = batch.len() as f64;
    let mut mse = 0.0;
    for x in batch {
        let (y, cache) = model.forward(x, &mut drop)?;
        let r = y - x.label;
        mse += r * r / n;
        model.backward(x, &cache, 2.0 * r / n, &mut grads);
    }
    let loss = mse + config.lambda * params.squared_norm();
    for (g, t) in grads.iter_mut().zip(&params.tensors) {
        *g += t * (2.0 * config.lambda);
    }
    if !loss.is_finite() {
        return Err(LearnError::NonFinite {
            epoch: 0,
            history: Vec::new(),
        });
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
}

pub fn metrics(pred: &[f64], label: &[f64]) -> Metrics {
    let n = pred.len().max(1) as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (p, y) in pred.iter().zip(label) {
        abs += (p - y).abs();
        sq += (p - y) * (p - y);
    }
    Metrics {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
    }
}

pub fn predict_all(config: &ModelConfig, params: &ParamStore, data: &[GraphInput]) -> Result<Vec<f64>, LearnError> {
    let model = Model::new(config, params);
    data.iter().map(|x| model.predict(x)).collect()
}

pub fn evaluate(config: &ModelConfig, params: &ParamStore, data: &[GraphInput]) -> Result<Metrics, LearnError> {
    let pred = predict_all(config, params, data)?;
    let labels: Vec<f64> = data.iter().map(|x| x.label).collect();
    Ok(metrics(&pred, &labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_mae\n");
    for h in history {
        s.push_str(&format!("{},{:e},{:e}\n", h.epoch, h.train_loss, h.val_mae));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
}

struct Adam {
    m: Vec<DMatrix<f64>>,
    v: Vec<DMatrix<f64>>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, params: &mut ParamStore, grads: &[DMatrix<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for ((p, g), (m, v)) in params.tensors.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for k in 0..p.len() {
                m[k] = Self::B1 * m[k] + (1.0 - Self::B1) * g[k];
                v[k] = Self::B2 * v[k] + (1.0 - Self::B2) * g[k] * g[k];
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Adam on shuffled mini-batches with early stopping on validation MAE
/// (training MAE when `val` is empty). Returns the best-epoch parameters.
pub fn train(train: &[GraphInput], val: &[GraphInput], config: &ModelConfig) -> Result<TrainOutcome, LearnError> {
    config.validate()?;
    if train.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let label_mean = train.iter().map(|x| x.label).sum::<f64>() / train.len() as f64;
    let mut params = ParamStore::init(config, label_mean);
    let mut adam = Adam {
        m: params.zeros_like(),
        v: params.zeros_like(),
        t: 0,
    };
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5348_5546);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x4452_4f50);
    let monitor = if val.is_empty() { train } else { val };
    let mut best = (evaluate(config, &params, monitor)?.mae, 0, params.clone());
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&GraphInput> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = match loss_and_grad(config, &params, &batch, Some(&mut drop_rng)) {
                Ok(v) => v,
                Err(LearnError::NonFinite { .. }) => return Err(LearnError::NonFinite { epoch, history }),
                Err(e) => return Err(e),
            };
            adam.step(&mut params, &grads, config.learning_rate);
            loss_sum += loss;
            batches += 1;
        }
        let val_mae = evaluate(config, &params, monitor)?.mae;
        let train_loss = loss_sum / batches as f64;
        history.push(EpochRecord { epoch, train_loss, val_mae });
        if !(train_loss.is_finite() && val_mae.is_finite()) {
            return Err(LearnError::NonFinite { epoch, history });
        }
        if val_mae < best.0 {
            best = (val_mae, epoch, params.clone());
        } else if epoch - best.1 >= config.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        params: best.2,
        history,
        best_epoch: best.1,
        best_val_mae: best.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    rows: usize,
    cols: usize,
    /// Row-major values.
    data: Vec<f64>,
}

/// Parameters, config and feature standardisation in one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    pub config: ModelConfig,
    pub best_epoch: usize,
    tensors: Vec<TensorRecord>,
    pub seed: u64,
    pub standardizer: crate::graphset::Standardizer,
}

impl Checkpoint {
    pub fn new(config: &ModelConfig, params: &ParamStore, best_epoch: usize, standardizer: &crate::graphset::Standardizer) -> Self {
        Self {
            schema: CHECKPOINT_SCHEMA.to_string(),
            config: config.clone(),
            best_epoch,
            tensors: params
                .names
                .iter()
                .zip(&params.tensors)
                .map(|(name, t)| TensorRecord {
                    name: name.clone(),
                    rows: t.nrows(),
                    cols: t.ncols(),
                    data: t.transpose().as_slice().to_vec(),
                })
                .collect(),
            seed: params.seed,
            standardizer: standardizer.clone(),
        }
    }

    pub fn params(&self) -> ParamStore {
        ParamStore {
            names: self.tensors.iter().map(|t| t.name.clone()).collect(),
            tensors: self.tensors.iter().map(|t| DMatrix::from_row_slice(t.rows, t.cols, &t.data)).collect(),
            seed: self.seed,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LearnError> {
        let c: Self = serde_json::from_str(text).map_err(|e| LearnError::Parse(e.to_string()))?;
        if c.schema != CHECKPOINT_SCHEMA {
            return Err(LearnError::Schema {
                expected: CHECKPOINT_SCHEMA.to_string(),
                found: c.schema,
            });
        }
        Ok(c)
    }
}
