//! One message-passing layer per encoder family.

use std::rc::Rc;

use rand::Rng;

use crate::graph::{NodeType, Relation};
use crate::ndtensor::{Mode, RunningStats, Tape, Var};

use super::params::{Bound, ParamId, ParamStore};
use super::{EncoderKind, ModelError};

pub(crate) const LEAKY_SLOPE: f64 = 0.2;

const TYPES: [NodeType; 2] = [NodeType::Customer, NodeType::Transaction];

pub(crate) fn type_index(t: NodeType) -> usize {
    match t {
        NodeType::Customer => 0,
        NodeType::Transaction => 1,
    }
}

fn type_name(t: NodeType) -> &'static str {
    match t {
        NodeType::Customer => "customer",
        NodeType::Transaction => "transaction",
    }
}

fn rel_name(r: Relation) -> &'static str {
    match r {
        Relation::OutFwd => "out_fwd",
        Relation::OutRev => "out_rev",
        Relation::InFwd => "in_fwd",
        Relation::InRev => "in_rev",
    }
}

/// Edges of one relation feeding a layer: local destination and source rows.
pub(crate) struct RelEdges {
    pub dst: Rc<Vec<usize>>,
    pub src: Rc<Vec<usize>>,
}

/// Attention coefficients of one GAT relation.
///
/// Row `i < n_dst` is the self term of destination `i`; the remaining rows
/// follow the relation's edge order. `alpha` has one column per head.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub layer: usize,
    pub relation: Relation,
    pub segments: Vec<usize>,
    pub n_dst: usize,
    pub alpha: crate::ndtensor::Tensor,
}

pub(crate) struct Ctx<'a> {
    pub tape: &'a Tape,
    pub bound: &'a Bound,
    pub mode: Mode,
    pub running: &'a [RunningStats],
    pub updates: Vec<(usize, crate::ndtensor::BatchStats)>,
    pub probe: Option<Vec<(usize, Relation, Rc<Vec<usize>>, usize, Var)>>,
}

impl Ctx<'_> {
    fn v(&self, id: ParamId) -> Var {
        self.bound.var(id)
    }
}

#[derive(Clone)]
pub(crate) struct Norm {
    pub(crate) gamma: ParamId,
    pub(crate) beta: ParamId,
    pub(crate) stats: usize,
}

#[derive(Clone)]
pub(crate) struct GatParams {
    pub(crate) w_self: [ParamId; 2],
    pub(crate) w_rel: [ParamId; 4],
    pub(crate) a_dst: [ParamId; 4],
    pub(crate) a_src: [ParamId; 4],
}

#[derive(Clone)]
pub(crate) struct SageParams {
    pub(crate) w_self: [ParamId; 2],
    pub(crate) w_rel: [ParamId; 4],
}

#[derive(Clone)]
pub(crate) struct GinParams {
    pub(crate) p_self: [ParamId; 2],
    pub(crate) p_rel: [ParamId; 4],
    pub(crate) mlp: [[ParamId; 4]; 4],
}

#[derive(Clone)]
pub(crate) enum Kind {
    Gat(GatParams),
    Sage(SageParams),
    Gin(GinParams),
}

#[derive(Clone)]
pub(crate) struct Layer {
    pub index: usize,
    pub kind: Kind,
    pub norm: Option<[Norm; 2]>,
}

impl Layer {
    /// Declares the parameters of layer `index` (1-based) in `store`.
    ///
    /// `d_in` is indexed by node type; `n_stats` counts running-stat slots
    /// already handed out and is advanced for hidden layers.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        kind: EncoderKind,
        index: usize,
        d_in: [usize; 2],
        d_out: usize,
        heads: usize,
        hidden: bool,
        store: &mut ParamStore,
        n_stats: &mut usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let p = |s: &str| format!("layer{index}.{s}");
        let kind = match kind {
            EncoderKind::Gat => {
                if heads == 0 || d_out % heads != 0 {
                    return Err(ModelError::Config(format!(
                        "width {d_out} is not divisible into {heads} heads"
                    )));
                }
                let dh = d_out / heads;
                let w_self = TYPES.map(|t| {
                    let d = d_in[type_index(t)];
                    store.add_uniform(p(&format!("w_self.{}", type_name(t))), d, d_out, d, dh, rng)
                });
                let w_rel = Relation::ALL.map(|r| {
                    let d = d_in[type_index(r.src_type())];
                    store.add_uniform(p(&format!("w.{}", rel_name(r))), d, d_out, d, dh, rng)
                });
                let a_dst = Relation::ALL
                    .map(|r| store.add_uniform(p(&format!("att_dst.{}", rel_name(r))), heads, dh, 2 * dh, 1, rng));
                let a_src = Relation::ALL
                    .map(|r| store.add_uniform(p(&format!("att_src.{}", rel_name(r))), heads, dh, 2 * dh, 1, rng));
                Kind::Gat(GatParams {
                    w_self,
                    w_rel,
                    a_dst,
                    a_src,
                })
            }
            EncoderKind::Sage => {
                let w_self = TYPES.map(|t| {
                    let d = d_in[type_index(t)];
                    store.add_uniform(p(&format!("w_self.{}", type_name(t))), d, d_out, d, d_out, rng)
                });
                let w_rel = Relation::ALL.map(|r| {
                    let d = d_in[type_index(r.src_type())];
                    store.add_uniform(p(&format!("w.{}", rel_name(r))), d, d_out, d, d_out, rng)
                });
                Kind::Sage(SageParams { w_self, w_rel })
            }
            EncoderKind::Gin => {
                let p_self = TYPES.map(|t| {
                    let d = d_in[type_index(t)];
                    store.add_uniform(p(&format!("proj_self.{}", type_name(t))), d, d_out, d, d_out, rng)
                });
                let p_rel = Relation::ALL.map(|r| {
                    let d = d_in[type_index(r.src_type())];
                    store.add_uniform(p(&format!("proj.{}", rel_name(r))), d, d_out, d, d_out, rng)
                });
                let mlp = Relation::ALL.map(|r| {
                    let n = rel_name(r);
                    let w1 = store.add_uniform(p(&format!("mlp.{n}.w1")), d_out, d_out, d_out, d_out, rng);
                    let b1 = store.add(p(&format!("mlp.{n}.b1")), crate::ndtensor::Tensor::zeros(&[1, d_out]));
                    let w2 = store.add_uniform(p(&format!("mlp.{n}.w2")), d_out, d_out, d_out, d_out, rng);
                    let b2 = store.add(p(&format!("mlp.{n}.b2")), crate::ndtensor::Tensor::zeros(&[1, d_out]));
                    [w1, b1, w2, b2]
                });
                Kind::Gin(GinParams { p_self, p_rel, mlp })
            }
        };
        let norm = hidden.then(|| {
            TYPES.map(|t| {
                let gamma = store.add(
                    p(&format!("bn_gamma.{}", type_name(t))),
                    crate::ndtensor::Tensor::full(&[1, d_out], 1.0),
                );
                let beta = store.add(
                    p(&format!("bn_beta.{}", type_name(t))),
                    crate::ndtensor::Tensor::zeros(&[1, d_out]),
                );
                *n_stats += 1;
                Norm {
                    gamma,
                    beta,
                    stats: *n_stats - 1,
                }
            })
        });
        Ok(Self {
            index,
            kind,
            norm,
        })
    }

    /// Applies the layer. `z` holds the input rows per node type; the first
    /// `n_dst[type]` rows of each are the destinations.
    pub fn forward(
        &self,
        ctx: &mut Ctx<'_>,
        z: [Var; 2],
        n_dst: [usize; 2],
        edges: &[RelEdges; 4],
    ) -> Result<[Var; 2], ModelError> {
        let mut out = [z[0]; 2];
        for t in TYPES {
            let ti = type_index(t);
            let z_dst = prefix_rows(ctx.tape, z[ti], n_dst[ti])?;
            let mut h = match &self.kind {
                Kind::Gat(p) => self.gat(ctx, p, t, z_dst, z, n_dst[ti], edges)?,
                Kind::Sage(p) => sage(ctx, p, t, z_dst, z, n_dst[ti], edges)?,
                Kind::Gin(p) => gin(ctx, p, t, z_dst, z, n_dst[ti], edges)?,
            };
            if let Some(norm) = &self.norm {
                h = ctx.tape.relu(h)?;
                let n = &norm[ti];
                let (y, stats) = ctx.tape.batch_norm(
                    h,
                    ctx.v(n.gamma),
                    ctx.v(n.beta),
                    &ctx.running[n.stats],
                    ctx.mode,
                )?;
                if let Some(s) = stats {
                    ctx.updates.push((n.stats, s));
                }
                h = y;
            }
            out[ti] = h;
        }
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn gat(
        &self,
        ctx: &mut Ctx<'_>,
        p: &GatParams,
        t: NodeType,
        z_dst: Var,
        z: [Var; 2],
        n_dst: usize,
        edges: &[RelEdges; 4],
    ) -> Result<Var, ModelError> {
        let tape = ctx.tape;
        let hs = tape.matmul(z_dst, ctx.v(p.w_self[type_index(t)]))?;
        let mut total: Option<Var> = None;
        for rel in Relation::into_type(t) {
            let r = rel.index();
            let e = &edges[r];
            let src = tape.gather_rows(z[type_index(rel.src_type())], e.src.clone())?;
            let hr = tape.matmul(src, ctx.v(p.w_rel[r]))?;
            let s_dst = tape.head_dot(hs, ctx.v(p.a_dst[r]))?;
            let s_self = tape.head_dot(hs, ctx.v(p.a_src[r]))?;
            let self_logit = tape.add(s_dst, s_self)?;
            let edge_logit = tape.add(
                tape.gather_rows(s_dst, e.dst.clone())?,
                tape.head_dot(hr, ctx.v(p.a_src[r]))?,
            )?;
            let logits = tape.leaky_relu(tape.concat(&[self_logit, edge_logit], 0)?, LEAKY_SLOPE)?;
            let segments: Rc<Vec<usize>> = Rc::new((0..n_dst).chain(e.dst.iter().copied()).collect());
            let alpha = tape.segment_softmax(logits, segments.clone(), n_dst)?;
            if let Some(probe) = ctx.probe.as_mut() {
                probe.push((self.index, rel, segments.clone(), n_dst, alpha));
            }
            let values = tape.concat(&[hs, hr], 0)?;
            let agg = tape.scatter_add_rows(tape.head_scale(values, alpha)?, segments, n_dst)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, agg)?,
                None => agg,
            });
        }
        Ok(total.expect("two relations per node type"))
    }
}

fn sage(
    ctx: &mut Ctx<'_>,
    p: &SageParams,
    t: NodeType,
    z_dst: Var,
    z: [Var; 2],
    n_dst: usize,
    edges: &[RelEdges; 4],
) -> Result<Var, ModelError> {
    let tape = ctx.tape;
    let mut out = tape.matmul(z_dst, ctx.v(p.w_self[type_index(t)]))?;
    for rel in Relation::into_type(t) {
        let e = &edges[rel.index()];
        let mut deg = vec![0usize; n_dst];
        for &d in e.dst.iter() {
            deg[d] += 1;
        }
        let inv: Vec<f64> = deg.iter().map(|&k| if k == 0 { 0.0 } else { 1.0 / k as f64 }).collect();
        let src = tape.gather_rows(z[type_index(rel.src_type())], e.src.clone())?;
        let summed = tape.scatter_add_rows(src, e.dst.clone(), n_dst)?;
        let mean = tape.scale_rows(summed, Rc::new(inv))?;
        out = tape.add(out, tape.matmul(mean, ctx.v(p.w_rel[rel.index()]))?)?;
    }
    Ok(out)
}

fn gin(
    ctx: &mut Ctx<'_>,
    p: &GinParams,
    t: NodeType,
    z_dst: Var,
    z: [Var; 2],
    n_dst: usize,
    edges: &[RelEdges; 4],
) -> Result<Var, ModelError> {
    let tape = ctx.tape;
    let own = tape.matmul(z_dst, ctx.v(p.p_self[type_index(t)]))?;
    let mut total: Option<Var> = None;
    for rel in Relation::into_type(t) {
        let r = rel.index();
        let e = &edges[r];
        let src = tape.gather_rows(z[type_index(rel.src_type())], e.src.clone())?;
        let proj = tape.matmul(src, ctx.v(p.p_rel[r]))?;
        let pre = tape.add(own, tape.scatter_add_rows(proj, e.dst.clone(), n_dst)?)?;
        let [w1, b1, w2, b2] = p.mlp[r];
        let hidden = tape.relu(tape.add_row(tape.matmul(pre, ctx.v(w1))?, ctx.v(b1))?)?;
        let y = tape.add_row(tape.matmul(hidden, ctx.v(w2))?, ctx.v(b2))?;
        total = Some(match total {
            Some(acc) => tape.add(acc, y)?,
            None => y,
        });
    }
    Ok(total.expect("two relations per node type"))
}

pub(crate) fn prefix_rows(tape: &Tape, z: Var, n: usize) -> Result<Var, ModelError> {
    if tape.shape(z)[0] == n {
        return Ok(z);
    }
    Ok(tape.gather_rows(z, Rc::new((0..n).collect()))?)
}
