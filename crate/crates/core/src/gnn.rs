//! Anisotropic edge-gated graph network over user/server bipartite graphs.
//!
//! Each layer updates node and edge states:
//!
//! ```text
//! e'    = e + time(t)
//! h_i  <- h_i + silu(norm(U h_i + sum_j m_ij sigmoid(e'_ij) * V h_j))
//! e_ij <- e_ij + silu(norm(A e'_ij + B h_i + C h_j))
//! ```
//!
//! Messages flow in both directions along every edge. With the padding mask
//! enabled, a padding slot (`m = 0`) contributes exactly zero to any node,
//! so real-edge outputs do not depend on how many padding slots a batch has.

use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{GdsgError, Result};
use crate::model::OffloadInstance;

/// Static edge features per slot.
pub const EDGE_FEATURES: usize = 5;
/// Noisy solution channels: one-hot discrete state and the continuous value.
pub const NOISY_CHANNELS: usize = 3;
pub const EDGE_INPUT_DIM: usize = EDGE_FEATURES + NOISY_CHANNELS;
const NODE_INPUT_DIM: usize = 1;

pub const CHECKPOINT_FORMAT: &str = "gdsg-gnn";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnnConfig {
    pub hidden_dim: usize,
    pub layers: usize,
    /// Width of the sinusoidal timestep encoding (even).
    pub time_dim: usize,
    pub padding_mask_enabled: bool,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            layers: 3,
            time_dim: 32,
            padding_mask_enabled: true,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim < 4 {
            return Err(GdsgError::Config(format!(
                "hidden_dim must be >= 4, got {}",
                self.hidden_dim
            )));
        }
        if self.layers < 1 {
            return Err(GdsgError::Config("layers must be >= 1".into()));
        }
        if self.time_dim < 2 || !self.time_dim.is_multiple_of(2) {
            return Err(GdsgError::Config(format!(
                "time_dim must be a positive even number, got {}",
                self.time_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Norm {
    gain: usize,
    bias: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct LayerIdx {
    time: Linear,
    u: Linear,
    v: Linear,
    a: Linear,
    b: Linear,
    c: Linear,
    node_norm: Norm,
    edge_norm: Norm,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    node_embed: Linear,
    edge_embed: Linear,
    time1: Linear,
    time2: Linear,
    layers: Vec<LayerIdx>,
    head_discrete: Linear,
    head_continuous: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    /// Normal with variance `1 / fan_in`.
    Scaled,
    Zeros,
    Ones,
}

struct LayoutBuilder {
    specs: Vec<(String, (usize, usize), Init)>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.specs.push((name, shape, init));
        self.specs.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.push(format!("{name}.weight"), (fan_in, fan_out), Init::Scaled),
            b: self.push(format!("{name}.bias"), (1, fan_out), Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, dim: usize) -> Norm {
        Norm {
            gain: self.push(format!("{name}.gain"), (1, dim), Init::Ones),
            bias: self.push(format!("{name}.bias"), (1, dim), Init::Zeros),
        }
    }
}

type ParamSpec = (String, (usize, usize), Init);

fn build_layout(cfg: &GnnConfig) -> (Layout, Vec<ParamSpec>) {
    let h = cfg.hidden_dim;
    let mut b = LayoutBuilder { specs: Vec::new() };
    let node_embed = b.linear("node_embed", NODE_INPUT_DIM, h);
    let edge_embed = b.linear("edge_embed", EDGE_INPUT_DIM, h);
    let time1 = b.linear("time_mlp.0", cfg.time_dim, h);
    let time2 = b.linear("time_mlp.1", h, h);
    let layers = (0..cfg.layers)
        .map(|l| LayerIdx {
            time: b.linear(&format!("layers.{l}.time"), h, h),
            u: b.linear(&format!("layers.{l}.node_self"), h, h),
            v: b.linear(&format!("layers.{l}.node_neighbor"), h, h),
            a: b.linear(&format!("layers.{l}.edge_self"), h, h),
            b: b.linear(&format!("layers.{l}.edge_src"), h, h),
            c: b.linear(&format!("layers.{l}.edge_dst"), h, h),
            node_norm: b.norm(&format!("layers.{l}.node_norm"), h),
            edge_norm: b.norm(&format!("layers.{l}.edge_norm"), h),
        })
        .collect();
    let head_discrete = b.linear("head_discrete", h, 2);
    let head_continuous = b.linear("head_continuous", h, 1);
    (
        Layout {
            node_embed,
            edge_embed,
            time1,
            time2,
            layers,
            head_discrete,
            head_continuous,
        },
        b.specs,
    )
}

/// Network parameters as named dense blocks in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    config: GnnConfig,
    layout: Layout,
    names: Vec<String>,
    params: Vec<Array2<f64>>,
}

/// Deterministic initialization: weights `N(0, 1/fan_in)`, biases zero,
/// normalization gains one.
pub fn init_params(config: &GnnConfig, seed: u64) -> Result<GnnModel> {
    config.validate()?;
    let (layout, specs) = build_layout(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = Vec::with_capacity(specs.len());
    let mut params = Vec::with_capacity(specs.len());
    for (name, (rows, cols), init) in specs {
        let p = match init {
            Init::Scaled => {
                let normal = Normal::new(0.0, 1.0 / (rows as f64).sqrt()).expect("positive std");
                Array2::from_shape_simple_fn((rows, cols), || normal.sample(&mut rng))
            }
            Init::Zeros => Array2::zeros((rows, cols)),
            Init::Ones => Array2::ones((rows, cols)),
        };
        names.push(name);
        params.push(p);
    }
    Ok(GnnModel {
        config: config.clone(),
        layout,
        names,
        params,
    })
}

impl GnnModel {
    pub fn config(&self) -> &GnnConfig {
        &self.config
    }

    /// Switches the padding mask without touching the weights.
    pub fn set_padding_mask(&mut self, enabled: bool) {
        self.config.padding_mask_enabled = enabled;
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Array2<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.params.iter().map(|p| p.dim()).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Weight blocks followed in gradient-alignment analysis: both
    /// embeddings, every edge convolution, and the final edge normalization.
    pub fn tracked_blocks(&self) -> Vec<usize> {
        let l = &self.layout;
        let mut out = vec![l.node_embed.w, l.edge_embed.w];
        for layer in &l.layers {
            out.extend([layer.a.w, layer.b.w, layer.c.w]);
        }
        let last = l.layers.last().expect("at least one layer");
        out.extend([last.edge_norm.gain, last.edge_norm.bias]);
        out
    }

    /// Runs the network and keeps the tape for a later backward pass.
    pub fn forward(&self, batch: &BatchedGraph, input: &NoisyInput) -> Result<ForwardPass> {
        batch.check_input(input)?;
        let l = &self.layout;
        let p = &self.params;
        let mut tape = Tape::new();
        let lin = |tape: &mut Tape, x: Var, lin: Linear| {
            let w = tape.param(lin.w, &p[lin.w]);
            let b = tape.param(lin.b, &p[lin.b]);
            let y = tape.matmul(x, w);
            tape.add_row(y, b)
        };
        let (n_nodes, n_edges) = (batch.num_nodes(), batch.num_edges());

        let node_in = tape.input(batch.node_types.clone());
        let mut h = lin(&mut tape, node_in, l.node_embed);
        let edge_in = tape.input(batch.edge_input(input));
        let mut e = lin(&mut tape, edge_in, l.edge_embed);

        let t_enc = tape.input(timestep_encoding(&input.t, self.config.time_dim));
        let t1 = lin(&mut tape, t_enc, l.time1);
        let t1 = tape.silu(t1);
        let t_emb = lin(&mut tape, t1, l.time2);
        let t_act = tape.silu(t_emb);

        let mask = self.config.padding_mask_enabled.then(|| batch.mask.clone());
        for layer in &l.layers {
            let t_graph = lin(&mut tape, t_act, layer.time);
            let t_edge = tape.gather(t_graph, batch.edge_graph.clone());
            let e_in = tape.add(e, t_edge);

            let gate = tape.sigmoid(e_in);
            let gate = match &mask {
                Some(m) => tape.scale_rows(gate, m.clone()),
                None => gate,
            };
            let vh = lin(&mut tape, h, layer.v);
            let v_dst = tape.gather(vh, batch.dst.clone());
            let v_src = tape.gather(vh, batch.src.clone());
            let to_src = tape.mul(gate, v_dst);
            let to_dst = tape.mul(gate, v_src);
            let agg_src = tape.scatter_add(to_src, batch.src.clone(), n_nodes);
            let agg_dst = tape.scatter_add(to_dst, batch.dst.clone(), n_nodes);
            let agg = tape.add(agg_src, agg_dst);
            let uh = lin(&mut tape, h, layer.u);
            let pre = tape.add(uh, agg);
            let node_delta = norm_act(&mut tape, pre, layer.node_norm, p);

            let ae = lin(&mut tape, e_in, layer.a);
            let bh = lin(&mut tape, h, layer.b);
            let ch = lin(&mut tape, h, layer.c);
            let bh = tape.gather(bh, batch.src.clone());
            let ch = tape.gather(ch, batch.dst.clone());
            let pre_e = tape.add(ae, bh);
            let pre_e = tape.add(pre_e, ch);
            let edge_delta = norm_act(&mut tape, pre_e, layer.edge_norm, p);

            h = tape.add(h, node_delta);
            e = tape.add(e, edge_delta);
        }
        let logits = lin(&mut tape, e, l.head_discrete);
        let eps = lin(&mut tape, e, l.head_continuous);
        debug_assert_eq!(tape.value(logits).nrows(), n_edges);
        Ok(ForwardPass {
            tape,
            logits,
            eps,
            edge_input: edge_in,
            shapes: self.param_shapes(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params: self
                .names
                .iter()
                .zip(&self.params)
                .map(|(name, p)| NamedArray {
                    name: name.clone(),
                    rows: p.nrows(),
                    cols: p.ncols(),
                    data: p.iter().copied().collect(),
                })
                .collect(),
        };
        let text = serde_json::to_string(&ckpt)?;
        std::fs::write(path, text).map_err(|e| GdsgError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GdsgError::io(path, e))?;
        let schema = |msg: String| GdsgError::Schema {
            path: path.to_path_buf(),
            msg,
        };
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| schema(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(schema(format!(
                "expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        let mut model = init_params(&ckpt.config, 0)?;
        if ckpt.params.len() != model.params.len() {
            return Err(schema(format!(
                "{} parameter blocks, expected {}",
                ckpt.params.len(),
                model.params.len()
            )));
        }
        for ((stored, name), p) in ckpt.params.into_iter().zip(&model.names).zip(&mut model.params) {
            if &stored.name != name || (stored.rows, stored.cols) != p.dim() {
                return Err(schema(format!(
                    "block {} ({}x{}) does not match {} {:?}",
                    stored.name,
                    stored.rows,
                    stored.cols,
                    name,
                    p.dim()
                )));
            }
            *p = Array2::from_shape_vec((stored.rows, stored.cols), stored.data)
                .map_err(|e| schema(e.to_string()))?;
        }
        Ok(model)
    }
}

fn norm_act(tape: &mut Tape, x: Var, norm: Norm, p: &[Array2<f64>]) -> Var {
    let g = tape.param(norm.gain, &p[norm.gain]);
    let b = tape.param(norm.bias, &p[norm.bias]);
    let n = tape.layer_norm(x, g, b);
    tape.silu(n)
}

#[derive(Serialize, Deserialize)]
struct NamedArray {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: GnnConfig,
    params: Vec<NamedArray>,
}

/// Sinusoidal encoding, one row per graph.
pub fn timestep_encoding(t: &[usize], dim: usize) -> Array2<f64> {
    let half = dim / 2;
    let mut out = Array2::zeros((t.len(), dim));
    for (mut row, &ti) in out.outer_iter_mut().zip(t) {
        for k in 0..half {
            let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
            let arg = ti as f64 * freq;
            row[2 * k] = arg.sin();
            row[2 * k + 1] = arg.cos();
        }
    }
    out
}

/// Recorded forward pass.
pub struct ForwardPass {
    tape: Tape,
    logits: Var,
    eps: Var,
    edge_input: Var,
    shapes: Vec<(usize, usize)>,
}

impl ForwardPass {
    /// `E x 2` discrete logits.
    pub fn logits(&self) -> &Array2<f64> {
        self.tape.value(self.logits)
    }

    /// Continuous head output per edge slot.
    pub fn eps(&self) -> Array1<f64> {
        self.tape.value(self.eps).column(0).to_owned()
    }

    /// Softmax of the discrete head, `[p(0), p(1)]` per slot.
    pub fn probabilities(&self) -> Vec<[f64; 2]> {
        self.logits()
            .outer_iter()
            .map(|r| {
                let m = r[0].max(r[1]);
                let (a, b) = ((r[0] - m).exp(), (r[1] - m).exp());
                [a / (a + b), b / (a + b)]
            })
            .collect()
    }

    /// Parameter gradients for upstream adjoints of the two heads.
    pub fn backward(&self, grad_logits: &Array2<f64>, grad_eps: &Array1<f64>) -> Result<Vec<Array2<f64>>> {
        Ok(self.backward_with_input(grad_logits, grad_eps)?.0)
    }

    /// Also returns the adjoint of the `E x 8` edge input matrix.
    pub fn backward_with_input(
        &self,
        grad_logits: &Array2<f64>,
        grad_eps: &Array1<f64>,
    ) -> Result<(Vec<Array2<f64>>, Array2<f64>)> {
        let n = self.logits().nrows();
        if grad_logits.dim() != (n, 2) || grad_eps.len() != n {
            return Err(GdsgError::Shape(format!(
                "upstream gradients {:?} / {} do not match {n} edge slots",
                grad_logits.dim(),
                grad_eps.len()
            )));
        }
        let seeds = [
            (self.logits, grad_logits.clone()),
            (self.eps, grad_eps.clone().insert_axis(Axis(1))),
        ];
        let (params, mut inputs) =
            self.tape
                .backward_with_inputs(&seeds, &self.shapes, &[self.edge_input]);
        Ok((params, inputs.remove(0)))
    }
}

/// Noisy solution state per edge slot plus one timestep per graph.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyInput {
    /// `E x 3`: one-hot discrete state then continuous value.
    pub channels: Array2<f64>,
    pub t: Vec<usize>,
}

impl NoisyInput {
    pub fn new(discrete: &[u8], continuous: &[f64], t: Vec<usize>) -> Self {
        let mut channels = Array2::zeros((discrete.len(), NOISY_CHANNELS));
        for (i, (&d, &c)) in discrete.iter().zip(continuous).enumerate() {
            channels[[i, d as usize]] = 1.0;
            channels[[i, 2]] = c;
        }
        Self { channels, t }
    }

    /// Clean-instance input: every noisy channel zero and `t = 0`.
    pub fn blank(num_edges: usize, num_graphs: usize) -> Self {
        Self {
            channels: Array2::zeros((num_edges, NOISY_CHANNELS)),
            t: vec![0; num_graphs],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotLayout {
    /// Real edges only.
    Sparse,
    /// Every user-server pair gets a slot; missing pairs become padding.
    Dense,
}

/// Several graphs stacked into one disjoint union.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchedGraph {
    pub num_graphs: usize,
    /// `N x 1` node type flags.
    pub node_types: Array2<f64>,
    /// `E x 5` static edge features, zero on padding slots.
    pub edge_features: Array2<f64>,
    /// 1 for real edges, 0 for padding.
    pub mask: Array1<f64>,
    /// Global user node of each slot.
    pub src: Vec<usize>,
    /// Global server node of each slot.
    pub dst: Vec<usize>,
    pub edge_graph: Vec<usize>,
    /// Per graph, the slot holding each instance edge.
    pub slots: Vec<Vec<usize>>,
    /// First global node of each graph.
    pub node_offsets: Vec<usize>,
    pub num_users: Vec<usize>,
}

impl BatchedGraph {
    pub fn from_instances(insts: &[&OffloadInstance], layout: SlotLayout) -> Self {
        let mut node_types = Vec::new();
        let mut feats: Vec<[f64; EDGE_FEATURES]> = Vec::new();
        let mut mask = Vec::new();
        let (mut src, mut dst, mut edge_graph) = (Vec::new(), Vec::new(), Vec::new());
        let mut slots = Vec::with_capacity(insts.len());
        let mut node_offsets = Vec::with_capacity(insts.len());
        for (g, inst) in insts.iter().enumerate() {
            let base = node_types.len();
            node_offsets.push(base);
            node_types.extend(inst.node_types.iter().map(|&t| f64::from(t)));
            let mut present = vec![false; inst.num_users * inst.num_servers];
            let mut own = Vec::with_capacity(inst.num_edges());
            for (e, f) in inst.edges.iter().zip(&inst.edge_features) {
                own.push(src.len());
                present[e.user * inst.num_servers + e.server] = true;
                feats.push(f.as_array());
                mask.push(1.0);
                src.push(base + e.user);
                dst.push(base + inst.server_node(e.server));
                edge_graph.push(g);
            }
            if layout == SlotLayout::Dense {
                for user in 0..inst.num_users {
                    for server in 0..inst.num_servers {
                        if !present[user * inst.num_servers + server] {
                            feats.push([0.0; EDGE_FEATURES]);
                            mask.push(0.0);
                            src.push(base + user);
                            dst.push(base + inst.server_node(server));
                            edge_graph.push(g);
                        }
                    }
                }
            }
            slots.push(own);
        }
        let n_nodes = node_types.len();
        let n_edges = feats.len();
        Self {
            num_graphs: insts.len(),
            node_types: Array2::from_shape_vec((n_nodes, 1), node_types).expect("shape"),
            edge_features: Array2::from_shape_vec((n_edges, EDGE_FEATURES), feats.concat())
                .expect("shape"),
            mask: Array1::from(mask),
            src,
            dst,
            edge_graph,
            slots,
            node_offsets,
            num_users: insts.iter().map(|i| i.num_users).collect(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.node_types.nrows()
    }

    pub fn num_edges(&self) -> usize {
        self.mask.len()
    }

    /// Appends padding slots to graph `g` between local `(user, server)`
    /// pairs. Slots go at the end of the batch.
    pub fn append_padding(&mut self, g: usize, pairs: &[(usize, usize)]) {
        let old = self.num_edges();
        let n = pairs.len();
        let mut feats = Array2::zeros((old + n, EDGE_FEATURES));
        feats.slice_mut(s![..old, ..]).assign(&self.edge_features);
        self.edge_features = feats;
        let mut mask = self.mask.to_vec();
        mask.extend(std::iter::repeat_n(0.0, n));
        self.mask = Array1::from(mask);
        let base = self.node_offsets[g];
        for &(user, server) in pairs {
            self.src.push(base + user);
            self.dst.push(base + self.num_users[g] + server);
            self.edge_graph.push(g);
        }
    }

    /// Spreads per-graph edge values into slot order, `fill` on padding.
    pub fn scatter<T: Copy>(&self, per_graph: &[&[T]], fill: T) -> Vec<T> {
        let mut out = vec![fill; self.num_edges()];
        for (slots, values) in self.slots.iter().zip(per_graph) {
            for (&slot, &v) in slots.iter().zip(values.iter()) {
                out[slot] = v;
            }
        }
        out
    }

    /// Values of graph `g`'s real edges in instance order.
    pub fn gather<T: Copy>(&self, slot_values: &[T], g: usize) -> Vec<T> {
        self.slots[g].iter().map(|&s| slot_values[s]).collect()
    }

    fn check_input(&self, input: &NoisyInput) -> Result<()> {
        if input.channels.dim() != (self.num_edges(), NOISY_CHANNELS) {
            return Err(GdsgError::Shape(format!(
                "noisy channels {:?}, expected ({}, {NOISY_CHANNELS})",
                input.channels.dim(),
                self.num_edges()
            )));
        }
        if input.t.len() != self.num_graphs {
            return Err(GdsgError::Shape(format!(
                "{} timesteps for {} graphs",
                input.t.len(),
                self.num_graphs
            )));
        }
        Ok(())
    }

    /// `E x 8` edge input; padding rows are all zero.
    fn edge_input(&self, input: &NoisyInput) -> Array2<f64> {
        let mut x = Array2::zeros((self.num_edges(), EDGE_INPUT_DIM));
        x.slice_mut(s![.., ..EDGE_FEATURES]).assign(&self.edge_features);
        x.slice_mut(s![.., EDGE_FEATURES..]).assign(&input.channels);
        x * self.mask.view().insert_axis(Axis(1))
    }
}
