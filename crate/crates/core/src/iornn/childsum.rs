//! Inside-outside Child-Sum Tree-LSTM.
//!
//! Inside, per node `p` with children `C(p)` and input `x_p`:
//!
//! ```text
//! h~ = Σ_k h_k
//! i  = σ(W_i x + U_i h~ + b_i)      f_k = σ(W_f x + U_f h_k + b_f)
//! o  = σ(W_o x + U_o h~ + b_o)      u   = tanh(W_u x + U_u h~ + b_u)
//! c  = i ⊙ u + Σ_k f_k ⊙ c_k        h   = o ⊙ tanh(c)
//! ```
//!
//! Outside uses the same cell without the input term and with its own
//! weights, over the sources `S(p)`: the parent's outside state followed by
//! the inside states of the siblings. A sink takes every occurrence as a
//! parent, so its sources are the concatenation over occurrences.

use super::graph::TreeGraph;
use super::{CellState, Layer};
use crate::autodiff::{ParamId, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GateParams {
    pub input: ParamId,
    pub forget: ParamId,
    pub output: ParamId,
    pub update: ParamId,
}

/// Parameter handles of the Child-Sum variant.
#[derive(Debug, Clone)]
pub struct ChildSumParams {
    pub embedding: ParamId,
    /// `W` matrices, D_m x D_i.
    pub inside_w: GateParams,
    /// `U` matrices, D_m x D_m.
    pub inside_u: GateParams,
    pub inside_b: GateParams,
    pub outside_u: GateParams,
    pub outside_b: GateParams,
}

struct GateValues {
    input: Var,
    forget: Var,
    output: Var,
    update: Var,
}

fn params_for(tape: &mut Tape<'_>, g: &GateParams) -> GateValues {
    GateValues {
        input: tape.param(g.input),
        forget: tape.param(g.forget),
        output: tape.param(g.output),
        update: tape.param(g.update),
    }
}

/// `W x + U h + b`, or `U h + b` without an input term.
fn gate(tape: &mut Tape<'_>, u: Var, b: Var, wx: Option<Var>, h: Var) -> Result<Var> {
    let uh = tape.matvec(u, h)?;
    let pre = match wx {
        Some(wx) => tape.add(wx, uh)?,
        None => uh,
    };
    tape.add(pre, b)
}

/// One Child-Sum cell over `sources`. `input_terms` are the precomputed
/// `W x` products (absent for the outside cell).
fn cell(
    tape: &mut Tape<'_>,
    u: &GateValues,
    b: &GateValues,
    input_terms: Option<&GateValues>,
    sources: &[CellState],
    zero: Var,
) -> Result<CellState> {
    let h_sum = if sources.is_empty() {
        zero
    } else {
        let hs: Vec<Var> = sources.iter().map(|s| s.h).collect();
        tape.sum_list(&hs)?
    };

    let pre_i = gate(tape, u.input, b.input, input_terms.map(|w| w.input), h_sum)?;
    let i = tape.sigmoid(pre_i)?;
    let pre_o = gate(tape, u.output, b.output, input_terms.map(|w| w.output), h_sum)?;
    let o = tape.sigmoid(pre_o)?;
    let pre_u = gate(tape, u.update, b.update, input_terms.map(|w| w.update), h_sum)?;
    let upd = tape.tanh(pre_u)?;

    let mut cell_terms = Vec::with_capacity(sources.len() + 1);
    cell_terms.push(tape.hadamard(i, upd)?);
    for s in sources {
        let pre_f = gate(tape, u.forget, b.forget, input_terms.map(|w| w.forget), s.h)?;
        let f = tape.sigmoid(pre_f)?;
        cell_terms.push(tape.hadamard(f, s.c)?);
    }
    let c = if cell_terms.len() == 1 {
        cell_terms[0]
    } else {
        tape.sum_list(&cell_terms)?
    };
    let tc = tape.tanh(c)?;
    let h = tape.hadamard(o, tc)?;
    Ok(CellState { h, c })
}

/// Bottom-up pass. Returns the inside state of every graph node.
pub fn inside_pass(
    tape: &mut Tape<'_>,
    graph: &TreeGraph,
    params: &ChildSumParams,
    zero: Var,
) -> Result<Vec<CellState>> {
    let table = tape.param(params.embedding);
    let w = params_for(tape, &params.inside_w);
    let u = params_for(tape, &params.inside_u);
    let b = params_for(tape, &params.inside_b);

    let mut states: Vec<Option<CellState>> = vec![None; graph.len()];
    for idx in graph.inside_order() {
        let node = graph.node(idx);
        let sources = node
            .children
            .iter()
            .map(|&c| {
                states[c].ok_or_else(|| {
                    Error::Ordering(format!("inside state of child {c} missing at node {idx}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let x = tape.embed(table, node.embed)?;
        let wx = GateValues {
            input: tape.matvec(w.input, x)?,
            forget: tape.matvec(w.forget, x)?,
            output: tape.matvec(w.output, x)?,
            update: tape.matvec(w.update, x)?,
        };
        states[idx] = Some(cell(tape, &u, &b, Some(&wx), &sources, zero)?);
    }
    Ok(states.into_iter().map(|s| s.expect("every node visited")).collect())
}

/// Top-down pass. The root's outside state is its inside state.
pub fn outside_pass(
    tape: &mut Tape<'_>,
    graph: &TreeGraph,
    params: &ChildSumParams,
    inside: &[CellState],
    zero: Var,
) -> Result<Vec<CellState>> {
    let u = params_for(tape, &params.outside_u);
    let b = params_for(tape, &params.outside_b);

    let mut states: Vec<Option<CellState>> = vec![None; graph.len()];
    for idx in graph.outside_order() {
        if idx == graph.root() {
            states[idx] = Some(inside[idx]);
            continue;
        }
        let mut sources = Vec::new();
        for ctx in graph.contexts(idx) {
            let parent = states[ctx.parent].ok_or_else(|| {
                Error::Ordering(format!("outside state of parent {} missing at node {idx}", ctx.parent))
            })?;
            sources.push(parent);
            sources.extend(ctx.siblings.iter().map(|&(s, _)| inside[s]));
        }
        states[idx] = Some(cell(tape, &u, &b, None, &sources, zero)?);
    }
    Ok(states.into_iter().map(|s| s.expect("every node visited")).collect())
}

impl Layer for ChildSumParams {
    fn inside(&self, tape: &mut Tape<'_>, graph: &TreeGraph, zero: Var) -> Result<Vec<CellState>> {
        inside_pass(tape, graph, self, zero)
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
