//! E(n)-equivariant graph denoiser predicting the clean ligand.
//!
//! Ligand and pocket atoms share one graph. Node features embed the atom
//! type (ligand and pocket vocabularies side by side), an is-pocket bit and
//! a sinusoidal encoding of `t/T`. Each layer computes
//!
//! ```text
//! m_ij = φ_e(h_i, h_j, ‖x_i − x_j‖² / r_c²)
//! x_i' = x_i + C Σ_j (x_i − x_j) / (‖x_i − x_j‖ + 1) · φ_x(m_ij)   (ligand atoms only)
//! h_i' = h_i + φ_h(h_i, C Σ_j m_ij)
//! ```
//!
//! with `r_c` the graph cutoff and `C = 1/(N−1)` for an `N`-node graph.
//!
//! The clean positions are the ligand coordinates after the last layer and
//! the clean types are a softmax head over the final ligand features.

use std::rc::Rc;

use pocketdiff_tensor::{Tape, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffusion::ProteinContext;
use crate::geometry::{distance, Vec3};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserConfig {
    pub hidden: usize,
    pub layers: usize,
    pub ligand_types: usize,
    pub protein_types: usize,
    pub time_dim: usize,
    /// `T`, used to scale the timestep encoding.
    pub num_steps: usize,
    /// Radius-graph cutoff in Å.
    pub cutoff: f64,
    /// Graphs with at most this many nodes are fully connected.
    pub dense_below: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 3,
            ligand_types: 4,
            protein_types: 2,
            time_dim: 16,
            num_steps: 1000,
            cutoff: 6.0,
            dense_below: 24,
        }
    }
}

impl DenoiserConfig {
    fn input_dim(&self) -> usize {
        self.ligand_types + self.protein_types + 1 + self.time_dim
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let h = self.hidden;
        let mut out = vec![
            ("embed.w".to_string(), vec![self.input_dim(), h]),
            ("embed.b".to_string(), vec![1, h]),
        ];
        for l in 0..self.layers {
            for (name, shape) in [
                ("edge.recv", vec![h, h]),
                ("edge.send", vec![h, h]),
                ("edge.dist", vec![1, h]),
                ("edge.b1", vec![1, h]),
                ("edge.w2", vec![h, h]),
                ("edge.b2", vec![1, h]),
                ("coord.w1", vec![h, h]),
                ("coord.b1", vec![1, h]),
                ("coord.w2", vec![h, 1]),
                ("node.wh", vec![h, h]),
                ("node.wm", vec![h, h]),
                ("node.b1", vec![1, h]),
                ("node.w2", vec![h, h]),
                ("node.b2", vec![1, h]),
            ] {
                out.push((format!("layer{l}.{name}"), shape));
            }
        }
        out.push(("head.w".to_string(), vec![h, self.ligand_types]));
        out.push(("head.b".to_string(), vec![1, self.ligand_types]));
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.ligand_types == 0 || self.protein_types == 0 || self.num_steps == 0 {
            return Err(Error::ParamMismatch(format!("degenerate denoiser config {self:?}")));
        }
        if self.time_dim % 2 != 0 {
            return Err(Error::ParamMismatch(format!("time_dim must be even, got {}", self.time_dim)));
        }
        if !(self.cutoff > 0.0) {
            return Err(Error::ParamMismatch(format!("cutoff must be positive, got {}", self.cutoff)));
        }
        Ok(())
    }
}

const PER_LAYER: usize = 14;

/// Weights of the denoiser, stored flat in [`DenoiserConfig::layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub config: DenoiserConfig,
    pub tensors: Vec<Tensor>,
}

impl DenoiserParams {
    /// Gaussian init with variance `1/fan_in`; biases start at zero and the
    /// final coordinate weights are scaled down so the first layers start
    /// close to the identity on positions.
    pub fn init<R: Rng + ?Sized>(config: DenoiserConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let tensors = config
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                if name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2") {
                    return Tensor::zeros(shape);
                }
                let fan_in = shape[0].max(1) as f64;
                let gain = if name.ends_with("coord.w2") { 1e-3 } else { 1.0 };
                let std = gain / fan_in.sqrt();
                let data = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
                Tensor::new(shape, data).expect("layout shape")
            })
            .collect();
        Ok(Self { config, tensors })
    }

    pub fn from_tensors(config: DenoiserConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != tensors.len() {
            return Err(Error::ParamMismatch(format!(
                "expected {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::ParamMismatch(format!(
                    "{name}: expected shape {shape:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every tensor as a leaf on `tape`.
    pub fn attach(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }
}

/// Parameter handles for one equivariant layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub edge_recv: Var,
    pub edge_send: Var,
    pub edge_dist: Var,
    pub edge_b1: Var,
    pub edge_w2: Var,
    pub edge_b2: Var,
    pub coord_w1: Var,
    pub coord_b1: Var,
    pub coord_w2: Var,
    pub node_wh: Var,
    pub node_wm: Var,
    pub node_b1: Var,
    pub node_w2: Var,
    pub node_b2: Var,
}

impl LayerVars {
    fn from_slice(p: &[Var]) -> Self {
        Self {
            edge_recv: p[0],
            edge_send: p[1],
            edge_dist: p[2],
            edge_b1: p[3],
            edge_w2: p[4],
            edge_b2: p[5],
            coord_w1: p[6],
            coord_b1: p[7],
            coord_w2: p[8],
            node_wh: p[9],
            node_wm: p[10],
            node_b1: p[11],
            node_w2: p[12],
            node_b2: p[13],
        }
    }
}

/// Directed edges `send → recv` over `num_nodes` nodes. The first
/// `num_ligand` nodes are ligand atoms; only edges into them move coordinates.
#[derive(Debug, Clone)]
pub struct Graph {
    pub num_nodes: usize,
    pub num_ligand: usize,
    pub recv: Rc<[usize]>,
    pub send: Rc<[usize]>,
    /// Indices (into the edge list) of edges whose receiver is a ligand atom.
    pub ligand_edges: Rc<[usize]>,
    /// Receivers of `ligand_edges`.
    pub ligand_recv: Rc<[usize]>,
    /// Multiplies squared distances before they enter the edge network.
    pub distance_scale: f64,
    /// Multiplies aggregated messages and coordinate updates.
    pub aggregation_scale: f64,
}

impl Graph {
    /// Radius graph over `positions`, fully connected when the node count is
    /// at most `dense_below`.
    pub fn build(positions: &[Vec3], num_ligand: usize, cutoff: f64, dense_below: usize) -> Self {
        let n = positions.len();
        let dense = n <= dense_below;
        let mut recv = Vec::new();
        let mut send = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && (dense || distance(positions[i], positions[j]) < cutoff) {
                    recv.push(i);
                    send.push(j);
                }
            }
        }
        let ligand_edges: Vec<usize> = (0..recv.len()).filter(|&e| recv[e] < num_ligand).collect();
        let ligand_recv: Vec<usize> = ligand_edges.iter().map(|&e| recv[e]).collect();
        Self {
            num_nodes: n,
            num_ligand,
            recv: recv.into(),
            send: send.into(),
            ligand_edges: ligand_edges.into(),
            ligand_recv: ligand_recv.into(),
            distance_scale: 1.0 / (cutoff * cutoff),
            aggregation_scale: 1.0 / n.saturating_sub(1).max(1) as f64,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.recv.len()
    }
}

pub struct LayerOutput {
    pub h: Var,
    pub x: Var,
    /// `m_ij` for every edge, `[edges, hidden]`.
    pub messages: Var,
}

/// One equivariant message-passing layer. `h` is `[nodes, hidden]`, `x` is
/// `[nodes, 3]`.
pub fn egnn_layer(tape: &mut Tape, p: &LayerVars, h: Var, x: Var, graph: &Graph) -> Result<LayerOutput> {
    let hr = tape.matmul(h, p.edge_recv)?;
    let hs = tape.matmul(h, p.edge_send)?;
    let hr = tape.gather_rows(hr, graph.recv.clone())?;
    let hs = tape.gather_rows(hs, graph.send.clone())?;
    let xr = tape.gather_rows(x, graph.recv.clone())?;
    let xs = tape.gather_rows(x, graph.send.clone())?;
    let diff = tape.sub(xr, xs)?;
    let sq = tape.mul(diff, diff)?;
    let d2 = tape.row_sum(sq)?;

    let d2_scaled = tape.scale(d2, graph.distance_scale)?;
    let dist_term = tape.matmul(d2_scaled, p.edge_dist)?;
    let pre = tape.add(hr, hs)?;
    let pre = tape.add(pre, dist_term)?;
    let pre = tape.add_row(pre, p.edge_b1)?;
    let act = tape.silu(pre)?;
    let m = tape.matmul(act, p.edge_w2)?;
    let m = tape.add_row(m, p.edge_b2)?;
    let m = tape.silu(m)?;

    let x_new = if graph.ligand_edges.is_empty() {
        x
    } else {
        let ml = tape.gather_rows(m, graph.ligand_edges.clone())?;
        let c = tape.matmul(ml, p.coord_w1)?;
        let c = tape.add_row(c, p.coord_b1)?;
        let c = tape.silu(c)?;
        let w = tape.matmul(c, p.coord_w2)?;
        let dl = tape.gather_rows(diff, graph.ligand_edges.clone())?;
        let d2l = tape.gather_rows(d2, graph.ligand_edges.clone())?;
        let dist = tape.sqrt(d2l)?;
        let denom = tape.add_scalar(dist, 1.0)?;
        let inv = tape.recip(denom)?;
        let coef = tape.mul(w, inv)?;
        let step = tape.mul_col(dl, coef)?;
        let shift = tape.scatter_add_rows(step, graph.ligand_recv.clone(), graph.num_nodes)?;
        let shift = tape.scale(shift, graph.aggregation_scale)?;
        tape.add(x, shift)?
    };

    let agg = tape.scatter_add_rows(m, graph.recv.clone(), graph.num_nodes)?;
    let agg = tape.scale(agg, graph.aggregation_scale)?;
    let a = tape.matmul(h, p.node_wh)?;
    let b = tape.matmul(agg, p.node_wm)?;
    let u = tape.add(a, b)?;
    let u = tape.add_row(u, p.node_b1)?;
    let u = tape.silu(u)?;
    let u = tape.matmul(u, p.node_w2)?;
    let u = tape.add_row(u, p.node_b2)?;
    let h_new = tape.add(h, u)?;

    Ok(LayerOutput {
        h: h_new,
        x: x_new,
        messages: m,
    })
}

/// Sinusoidal encoding of `t / num_steps`: `dim/2` sines then `dim/2` cosines
/// at frequencies `π·1000^(k/(dim/2))`.
pub fn timestep_embedding(t: usize, num_steps: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let s = t as f64 / num_steps as f64;
    let freqs: Vec<f64> = (0..half)
        .map(|k| std::f64::consts::PI * 1000f64.powf(k as f64 / half as f64))
        .collect();
    let mut out: Vec<f64> = freqs.iter().map(|w| (w * s).sin()).collect();
    out.extend(freqs.iter().map(|w| (w * s).cos()));
    out
}

/// The clean molecule predicted by the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub positions: Vec<Vec3>,
    pub type_probs: Tensor,
}

/// Handles to the prediction on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `[m, 3]`
    pub positions: Var,
    /// `[m, K]`, rows sum to one.
    pub type_probs: Var,
}

fn check_inputs(
    config: &DenoiserConfig,
    y_x: &[Vec3],
    y_v: &Tensor,
    t: usize,
    protein: &ProteinContext,
) -> Result<()> {
    if y_x.is_empty() || y_v.shape() != [y_x.len(), config.ligand_types] {
        return Err(Error::ParamMismatch(format!(
            "ligand inputs: {} positions and type rows {:?}, expected [{}, {}]",
            y_x.len(),
            y_v.shape(),
            y_x.len(),
            config.ligand_types
        )));
    }
    if protein.num_types != config.protein_types {
        return Err(Error::ParamMismatch(format!(
            "pocket has {} atom types, network expects {}",
            protein.num_types, config.protein_types
        )));
    }
    if t > config.num_steps {
        return Err(Error::TimestepOutOfRange {
            t,
            max: config.num_steps,
        });
    }
    Ok(())
}

/// Records the full forward pass. `params` must come from
/// [`DenoiserParams::attach`] (or be laid out identically).
pub fn forward(
    tape: &mut Tape,
    config: &DenoiserConfig,
    params: &[Var],
    y_x: &[Vec3],
    y_v: &Tensor,
    t: usize,
    protein: &ProteinContext,
) -> Result<ForwardVars> {
    check_inputs(config, y_x, y_v, t, protein)?;
    let m = y_x.len();
    let n = m + protein.len();
    let (k, kp) = (config.ligand_types, config.protein_types);
    let fdim = config.input_dim();
    let temb = timestep_embedding(t, config.num_steps, config.time_dim);

    let mut feats = vec![0.0; n * fdim];
    for i in 0..n {
        let row = &mut feats[i * fdim..(i + 1) * fdim];
        if i < m {
            row[..k].copy_from_slice(y_v.row(i));
        } else {
            row[k + protein.types[i - m]] = 1.0;
            row[k + kp] = 1.0;
        }
        row[k + kp + 1..].copy_from_slice(&temb);
    }
    let mut coords: Vec<Vec3> = Vec::with_capacity(n);
    coords.extend_from_slice(y_x);
    coords.extend_from_slice(&protein.positions);

    let graph = Graph::build(&coords, m, config.cutoff, config.dense_below);
    let feats = tape.leaf(Tensor::matrix(n, fdim, feats)?);
    let x = tape.leaf(Tensor::from_rows(&coords)?);

    let h = tape.matmul(feats, params[0])?;
    let mut h = tape.add_row(h, params[1])?;
    let mut x = x;
    for l in 0..config.layers {
        let lv = LayerVars::from_slice(&params[2 + l * PER_LAYER..2 + (l + 1) * PER_LAYER]);
        let out = egnn_layer(tape, &lv, h, x, &graph)?;
        h = out.h;
        x = out.x;
    }
    let head = 2 + config.layers * PER_LAYER;
    let hl = tape.slice(h, 0, 0, m)?;
    let logits = tape.matmul(hl, params[head])?;
    let logits = tape.add_row(logits, params[head + 1])?;
    let type_probs = tape.softmax(logits)?;
    let positions = tape.slice(x, 0, 0, m)?;
    Ok(ForwardVars { positions, type_probs })
}

/// Anything that maps a noisy ligand in a pocket to a clean-molecule estimate.
///
/// The trained network implements it; tests substitute stubs.
pub trait CleanPredictor {
    fn predict_clean(&self, y_x: &[Vec3], y_v: &Tensor, t: usize, protein: &ProteinContext) -> Result<Prediction>;
}

impl DenoiserParams {
    /// Inference-mode prediction (no gradients are kept).
    pub fn predict(&self, y_x: &[Vec3], y_v: &Tensor, t: usize, protein: &ProteinContext) -> Result<Prediction> {
        let mut tape = Tape::new();
        let vars = self.attach(&mut tape);
        let out = forward(&mut tape, &self.config, &vars, y_x, y_v, t, protein)?;
        let pos = tape.value(out.positions);
        Ok(Prediction {
            positions: pos.iter_rows().map(|r| [r[0], r[1], r[2]]).collect(),
            type_probs: tape.value(out.type_probs).clone(),
        })
    }
}

impl CleanPredictor for DenoiserParams {
    fn predict_clean(&self, y_x: &[Vec3], y_v: &Tensor, t: usize, protein: &ProteinContext) -> Result<Prediction> {
        self.predict(y_x, y_v, t, protein)
    }
}
