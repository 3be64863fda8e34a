//! Inside-outside N-ary RNN with position-specific child weights.
//!
//! ```text
//! inside:  h = tanh(W_in x + Σ_k U_k^h h_k)      c = tanh(W_in x + Σ_k U_k^c c_k)
//! outside: h = tanh(W_out h_par + Σ_s U'_s^h h_s)  c = tanh(W_out c_par + Σ_s U'_s^c c_s)
//! ```
//!
//! `k` is the child position, `s` ranges over the siblings with their
//! positions below the parent. A sink sums this expression over all of its
//! occurrences, each acting as a parent.

use serde::{Deserialize, Serialize};

use super::graph::TreeGraph;
use super::{CellState, Layer};
use crate::autodiff::{ParamId, Tape, Var};
use crate::error::{Error, Result};

/// Which state of a sibling feeds the outside pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiblingsSource {
    /// Siblings contribute their inside (content) states.
    #[default]
    Inside,
    /// Siblings already visited (those to the left) contribute their outside
    /// states; siblings to the right still contribute inside states.
    Outside,
}

#[derive(Debug, Clone)]
pub struct NaryParams {
    pub embedding: ParamId,
    /// D_m x D_i, shared by the hidden and cell equations.
    pub inside_w: ParamId,
    pub inside_u_h: Vec<ParamId>,
    pub inside_u_c: Vec<ParamId>,
    /// D_m x D_m, applied to the parent's outside state.
    pub outside_w: ParamId,
    pub outside_u_h: Vec<ParamId>,
    pub outside_u_c: Vec<ParamId>,
    pub siblings_source: SiblingsSource,
}

impl NaryParams {
    pub fn max_children(&self) -> usize {
        self.inside_u_h.len()
    }
}

fn params_for(tape: &mut Tape<'_>, ids: &[ParamId]) -> Vec<Var> {
    ids.iter().map(|&id| tape.param(id)).collect()
}

pub fn inside_pass(
    tape: &mut Tape<'_>,
    graph: &TreeGraph,
    params: &NaryParams,
) -> Result<Vec<CellState>> {
    let k_max = params.max_children();
    if let Some(node) = graph.nodes().iter().find(|n| n.children.len() > k_max) {
        return Err(Error::FanOut {
            node_id: node.node_id,
            count: node.children.len(),
            max: k_max,
        });
    }
    let table = tape.param(params.embedding);
    let w = tape.param(params.inside_w);
    let u_h = params_for(tape, &params.inside_u_h);
    let u_c = params_for(tape, &params.inside_u_c);

    let mut states: Vec<Option<CellState>> = vec![None; graph.len()];
    for idx in graph.inside_order() {
        let node = graph.node(idx);
        let x = tape.embed(table, node.embed)?;
        let wx = tape.matvec(w, x)?;
        let mut h_terms = vec![wx];
        let mut c_terms = vec![wx];
        for (pos, &child) in node.children.iter().enumerate() {
            let s = states[child].ok_or_else(|| {
                Error::Ordering(format!("inside state of child {child} missing at node {idx}"))
            })?;
            h_terms.push(tape.matvec(u_h[pos], s.h)?);
            c_terms.push(tape.matvec(u_c[pos], s.c)?);
        }
        let h_pre = tape.sum_list(&h_terms)?;
        let c_pre = tape.sum_list(&c_terms)?;
        states[idx] = Some(CellState {
            h: tape.tanh(h_pre)?,
            c: tape.tanh(c_pre)?,
        });
    }
    Ok(states.into_iter().map(|s| s.expect("every node visited")).collect())
}

pub fn outside_pass(
    tape: &mut Tape<'_>,
    graph: &TreeGraph,
    params: &NaryParams,
    inside: &[CellState],
    zero: Var,
) -> Result<Vec<CellState>> {
    let w = tape.param(params.outside_w);
    let u_h = params_for(tape, &params.outside_u_h);
    let u_c = params_for(tape, &params.outside_u_c);

    let mut states: Vec<Option<CellState>> = vec![None; graph.len()];
    for idx in graph.outside_order() {
        if idx == graph.root() {
            states[idx] = Some(inside[idx]);
            continue;
        }
        let mut h_terms = Vec::new();
        let mut c_terms = Vec::new();
        for ctx in graph.contexts(idx) {
            let parent = states[ctx.parent].ok_or_else(|| {
                Error::Ordering(format!("outside state of parent {} missing at node {idx}", ctx.parent))
            })?;
            h_terms.push(tape.matvec(w, parent.h)?);
            c_terms.push(tape.matvec(w, parent.c)?);
            for &(sib, pos) in &ctx.siblings {
                let state = match params.siblings_source {
                    SiblingsSource::Outside if pos < ctx.position => states[sib].ok_or_else(|| {
                        Error::Ordering(format!("outside state of sibling {sib} missing at node {idx}"))
                    })?,
                    _ => inside[sib],
                };
                h_terms.push(tape.matvec(u_h[pos], state.h)?);
                c_terms.push(tape.matvec(u_c[pos], state.c)?);
            }
        }
        let (h_pre, c_pre) = if h_terms.is_empty() {
            (zero, zero)
        } else {
            (tape.sum_list(&h_terms)?, tape.sum_list(&c_terms)?)
        };
        states[idx] = Some(CellState {
            h: tape.tanh(h_pre)?,
            c: tape.tanh(c_pre)?,
        });
    }
    Ok(states.into_iter().map(|s| s.expect("every node visited")).collect())
}

impl Layer for NaryParams {
    fn inside(&self, tape: &mut Tape<'_>, graph: &TreeGraph, _zero: Var) -> Result<Vec<CellState>> {
        inside_pass(tape, graph, self)
    }

    fn outside(
        &self,
        tape: &mut Tape<'_>,
        graph: &TreeGraph,
        inside: &[CellState],
        zero: Var,
    ) -> Result<Vec<CellState>> {
        outside_pass(tape, graph, self, inside, zero)
    }
}
