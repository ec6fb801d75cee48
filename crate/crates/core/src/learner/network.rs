//! Message-passing action-value network with a gated recurrent cell.
//!
//! ```text
//! h_v   = tanh(W_enc f_v + b_enc)                       node encoder (ego and neighbors)
//! z_k   = leaky(a_self·h_e + a_nbr·h_k + a_edge·e_k)      attention score per neighbor
//! α     = softmax(z)                                     (no neighbors: g = 0)
//! g     = Σ_k α_k (W_msg [h_k; e_k] + b_msg)
//! u     = tanh(W_comb [h_e; g] + b_comb)
//! ζ     = σ(W_gate [u; r] + b_gate),  c = tanh(W_cand [u; r] + b_cand)
//! r'    = (1 - ζ) ⊙ r + ζ ⊙ c
//! q     = W_q r' + b_q
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bridging_env::{Observation, Variant};
use crate::error::{Error, Result};

pub const N_ACTIONS: usize = 9;
pub const DEFAULT_HIDDEN: usize = 32;
const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetShape {
    pub node_dim: usize,
    pub edge_dim: usize,
    pub hidden: usize,
}

impl NetShape {
    pub fn for_variant(n_agents: usize, variant: Variant, hidden: usize) -> Self {
        Self {
            node_dim: crate::bridging_env::node_feature_dim(n_agents, variant),
            edge_dim: crate::bridging_env::edge_feature_dim(variant),
            hidden,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    EncW,
    EncB,
    AttSelf,
    AttNbr,
    AttEdge,
    MsgW,
    MsgB,
    CombW,
    CombB,
    GateW,
    GateB,
    CandW,
    CandB,
    QW,
    QB,
}

impl Group {
    pub const ALL: [Group; 15] = [
        Group::EncW,
        Group::EncB,
        Group::AttSelf,
        Group::AttNbr,
        Group::AttEdge,
        Group::MsgW,
        Group::MsgB,
        Group::CombW,
        Group::CombB,
        Group::GateW,
        Group::GateB,
        Group::CandW,
        Group::CandB,
        Group::QW,
        Group::QB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Group::EncW => "enc_w",
            Group::EncB => "enc_b",
            Group::AttSelf => "att_self",
            Group::AttNbr => "att_nbr",
            Group::AttEdge => "att_edge",
            Group::MsgW => "msg_w",
            Group::MsgB => "msg_b",
            Group::CombW => "comb_w",
            Group::CombB => "comb_b",
            Group::GateW => "gate_w",
            Group::GateB => "gate_b",
            Group::CandW => "cand_w",
            Group::CandB => "cand_b",
            Group::QW => "q_w",
            Group::QB => "q_b",
        }
    }

    pub fn from_name(name: &str) -> Option<Group> {
        Group::ALL.into_iter().find(|g| g.name() == name)
    }

    /// `(rows, cols)`; vectors have one column.
    pub fn dims(self, s: NetShape) -> (usize, usize) {
        let h = s.hidden;
        match self {
            Group::EncW => (h, s.node_dim),
            Group::AttEdge => (s.edge_dim, 1),
            Group::MsgW => (h, h + s.edge_dim),
            Group::CombW | Group::GateW | Group::CandW => (h, 2 * h),
            Group::QW => (N_ACTIONS, h),
            Group::QB => (N_ACTIONS, 1),
            _ => (h, 1),
        }
    }

    fn is_bias(self) -> bool {
        matches!(
            self,
            Group::EncB | Group::MsgB | Group::CombB | Group::GateB | Group::CandB | Group::QB
        )
    }

    fn fan_in(self, s: NetShape) -> usize {
        match self {
            Group::AttSelf | Group::AttNbr | Group::AttEdge => 2 * s.hidden + s.edge_dim,
            _ => self.dims(s).1,
        }
    }
}

/// All weights in one flat buffer; each [`Group`] is a row-major block.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetworkParams {
    shape: NetShape,
    offsets: [usize; 16],
    data: Vec<f64>,
}

impl QNetworkParams {
    pub fn zeros(shape: NetShape) -> Self {
        let mut offsets = [0; 16];
        for (k, g) in Group::ALL.into_iter().enumerate() {
            let (r, c) = g.dims(shape);
            offsets[k + 1] = offsets[k] + r * c;
        }
        Self {
            shape,
            offsets,
            data: vec![0.0; offsets[15]],
        }
    }

    /// Uniform `±1/√fan_in` weights, zero biases.
    pub fn init(shape: NetShape, seed: u64) -> Self {
        let mut p = Self::zeros(shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for g in Group::ALL {
            if g.is_bias() {
                continue;
            }
            let bound = 1.0 / (g.fan_in(shape) as f64).sqrt();
            for w in p.group_mut(g) {
                *w = rng.random_range(-bound..bound);
            }
        }
        p
    }

    pub fn from_data(shape: NetShape, data: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(shape);
        if data.len() != p.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                p.data.len(),
                data.len()
            )));
        }
        p.data = data;
        Ok(p)
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn range(&self, g: Group) -> std::ops::Range<usize> {
        let k = g as usize;
        self.offsets[k]..self.offsets[k + 1]
    }

    pub fn group(&self, g: Group) -> &[f64] {
        &self.data[self.range(g)]
    }

    pub fn group_mut(&mut self, g: Group) -> &mut [f64] {
        let r = self.range(g);
        &mut self.data[r]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut out = b.to_vec();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(x.len())) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
    out
}

/// `out += Wᵀ d`.
fn matvec_t_add(w: &[f64], cols: usize, d: &[f64], out: &mut [f64]) {
    for (row, &dv) in w.chunks_exact(cols).zip(d) {
        if dv != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * dv;
            }
        }
    }
}

/// `g += d xᵀ`.
fn outer_add(g: &mut [f64], d: &[f64], x: &[f64]) {
    for (row, &dv) in g.chunks_exact_mut(x.len()).zip(d) {
        if dv != 0.0 {
            for (o, xv) in row.iter_mut().zip(x) {
                *o += dv * xv;
            }
        }
    }
}

fn add(out: &mut [f64], x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += v;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct NeighborTrace {
    f: Vec<f64>,
    h: Vec<f64>,
    /// `[h_k; e_k]`
    he: Vec<f64>,
    e: Vec<f64>,
    z: f64,
    m: Vec<f64>,
}

/// Intermediates of one forward pass, kept for backpropagation.
pub struct Trace {
    f_e: Vec<f64>,
    h_e: Vec<f64>,
    nbrs: Vec<NeighborTrace>,
    alpha: Vec<f64>,
    /// `[h_e; g]`
    hg: Vec<f64>,
    u: Vec<f64>,
    /// `[u; r]`
    ur: Vec<f64>,
    gate: Vec<f64>,
    cand: Vec<f64>,
    r: Vec<f64>,
    pub r_next: Vec<f64>,
    pub q: Vec<f64>,
}

impl Trace {
    /// Attention distribution over neighbors in observation order.
    pub fn attention(&self) -> &[f64] {
        &self.alpha
    }
}

fn check_shapes(shape: NetShape, obs: &Observation, rec: &[f64]) -> Result<()> {
    let bad = |what: &str, want: usize, got: usize| {
        Err(Error::ShapeMismatch(format!("{what}: expected {want}, got {got}")))
    };
    if obs.ego.len() != shape.node_dim {
        return bad("ego features", shape.node_dim, obs.ego.len());
    }
    if rec.len() != shape.hidden {
        return bad("recurrent state", shape.hidden, rec.len());
    }
    for n in &obs.neighbors {
        if n.node.len() != shape.node_dim {
            return bad("neighbor features", shape.node_dim, n.node.len());
        }
        if n.edge.len() != shape.edge_dim {
            return bad("edge features", shape.edge_dim, n.edge.len());
        }
    }
    Ok(())
}

pub fn forward_trace(params: &QNetworkParams, obs: &Observation, rec: &[f64]) -> Result<Trace> {
    let s = params.shape;
    check_shapes(s, obs, rec)?;
    let h = s.hidden;
    let encode = |f: &[f64]| -> Vec<f64> {
        let mut v = affine(params.group(Group::EncW), params.group(Group::EncB), f);
        v.iter_mut().for_each(|x| *x = x.tanh());
        v
    };
    let h_e = encode(&obs.ego);
    let self_score = dot(params.group(Group::AttSelf), &h_e);
    let nbrs: Vec<NeighborTrace> = obs
        .neighbors
        .iter()
        .map(|n| {
            let hk = encode(&n.node);
            let z = self_score + dot(params.group(Group::AttNbr), &hk) + dot(params.group(Group::AttEdge), &n.edge);
            let he = concat(&hk, &n.edge);
            let m = affine(params.group(Group::MsgW), params.group(Group::MsgB), &he);
            NeighborTrace {
                f: n.node.clone(),
                h: hk,
                he,
                e: n.edge.clone(),
                z,
                m,
            }
        })
        .collect();

    let scores: Vec<f64> = nbrs
        .iter()
        .map(|n| if n.z > 0.0 { n.z } else { LEAKY_SLOPE * n.z })
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut alpha: Vec<f64> = scores.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = alpha.iter().sum();
    alpha.iter_mut().for_each(|a| *a /= total);

    let mut g = vec![0.0; h];
    for (a, n) in alpha.iter().zip(&nbrs) {
        for (gv, mv) in g.iter_mut().zip(&n.m) {
            *gv += a * mv;
        }
    }
    let hg = concat(&h_e, &g);
    let mut u = affine(params.group(Group::CombW), params.group(Group::CombB), &hg);
    u.iter_mut().for_each(|x| *x = x.tanh());
    let ur = concat(&u, rec);
    let mut gate = affine(params.group(Group::GateW), params.group(Group::GateB), &ur);
    gate.iter_mut().for_each(|x| *x = sigmoid(*x));
    let mut cand = affine(params.group(Group::CandW), params.group(Group::CandB), &ur);
    cand.iter_mut().for_each(|x| *x = x.tanh());
    let r_next: Vec<f64> = (0..h).map(|i| rec[i] + gate[i] * (cand[i] - rec[i])).collect();
    let q = affine(params.group(Group::QW), params.group(Group::QB), &r_next);

    Ok(Trace {
        f_e: obs.ego.clone(),
        h_e,
        nbrs,
        alpha,
        hg,
        u,
        ur,
        gate,
        cand,
        r: rec.to_vec(),
        r_next,
        q,
    })
}

/// Action values and the next recurrent state for one agent.
pub fn forward_q(params: &QNetworkParams, obs: &Observation, rec: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let t = forward_trace(params, obs, rec)?;
    Ok((t.q, t.r_next))
}

/// Accumulates `∂(dqᵀ q)/∂θ` into `grad`. The input recurrent state is treated
/// as a constant.
pub fn backward(params: &QNetworkParams, trace: &Trace, dq: &[f64], grad: &mut [f64]) {
    let s = params.shape;
    let h = s.hidden;
    let mut gview = GradView { params, grad };

    outer_add(gview.get(Group::QW), dq, &trace.r_next);
    add(gview.get(Group::QB), dq);
    let mut dr = vec![0.0; h];
    matvec_t_add(params.group(Group::QW), h, dq, &mut dr);

    let mut dgate = vec![0.0; h];
    let mut dcand = vec![0.0; h];
    for i in 0..h {
        let z = trace.gate[i];
        let c = trace.cand[i];
        dgate[i] = dr[i] * (c - trace.r[i]) * z * (1.0 - z);
        dcand[i] = dr[i] * z * (1.0 - c * c);
    }
    outer_add(gview.get(Group::GateW), &dgate, &trace.ur);
    add(gview.get(Group::GateB), &dgate);
    outer_add(gview.get(Group::CandW), &dcand, &trace.ur);
    add(gview.get(Group::CandB), &dcand);
    let mut dur = vec![0.0; 2 * h];
    matvec_t_add(params.group(Group::GateW), 2 * h, &dgate, &mut dur);
    matvec_t_add(params.group(Group::CandW), 2 * h, &dcand, &mut dur);

    let dpre_u: Vec<f64> = (0..h).map(|i| dur[i] * (1.0 - trace.u[i] * trace.u[i])).collect();
    outer_add(gview.get(Group::CombW), &dpre_u, &trace.hg);
    add(gview.get(Group::CombB), &dpre_u);
    let mut dhg = vec![0.0; 2 * h];
    matvec_t_add(params.group(Group::CombW), 2 * h, &dpre_u, &mut dhg);
    let (dh_e_part, dg) = dhg.split_at(h);
    let mut dh_e = dh_e_part.to_vec();

    if !trace.nbrs.is_empty() {
        let dalpha: Vec<f64> = trace.nbrs.iter().map(|n| dot(dg, &n.m)).collect();
        let mean = dot(&trace.alpha, &dalpha);
        let mut dz_self = 0.0;
        for (k, n) in trace.nbrs.iter().enumerate() {
            let dm: Vec<f64> = dg.iter().map(|v| trace.alpha[k] * v).collect();
            outer_add(gview.get(Group::MsgW), &dm, &n.he);
            add(gview.get(Group::MsgB), &dm);
            let mut dhe = vec![0.0; h + s.edge_dim];
            matvec_t_add(params.group(Group::MsgW), h + s.edge_dim, &dm, &mut dhe);
            let mut dh_k = dhe[..h].to_vec();

            let ds = trace.alpha[k] * (dalpha[k] - mean);
            let dz = if n.z > 0.0 { ds } else { LEAKY_SLOPE * ds };
            dz_self += dz;
            add_scaled(gview.get(Group::AttNbr), &n.h, dz);
            add_scaled(gview.get(Group::AttEdge), &n.e, dz);
            add_scaled(&mut dh_k, params.group(Group::AttNbr), dz);

            encoder_backward(&mut gview, &n.f, &n.h, &dh_k);
        }
        add_scaled(gview.get(Group::AttSelf), &trace.h_e, dz_self);
        add_scaled(&mut dh_e, params.group(Group::AttSelf), dz_self);
    }
    encoder_backward(&mut gview, &trace.f_e, &trace.h_e, &dh_e);
}

fn add_scaled(out: &mut [f64], x: &[f64], k: f64) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += k * v;
    }
}

struct GradView<'a> {
    params: &'a QNetworkParams,
    grad: &'a mut [f64],
}

impl GradView<'_> {
    fn get(&mut self, g: Group) -> &mut [f64] {
        let r = self.params.range(g);
        &mut self.grad[r]
    }
}

fn encoder_backward(gview: &mut GradView<'_>, f: &[f64], hv: &[f64], dh: &[f64]) {
    let dpre: Vec<f64> = dh.iter().zip(hv).map(|(d, h)| d * (1.0 - h * h)).collect();
    outer_add(gview.get(Group::EncW), &dpre, f);
    add(gview.get(Group::EncB), &dpre);
}
