//! Context extraction `c~_j = a(s_{j-1}, H)`.
//!
//! Two mechanisms share this interface:
//!
//! * **attention**: additive scoring `e_ji = v_a . tanh(W_a s_{j-1} + U_a h_i)`,
//!   softmax weights, and a weighted sum of annotations (width `2*d_h`);
//! * **contexter**: a GRU started from `c_0 = tanh(V s_{j-1} + b_0)` that reads
//!   the annotations in order. Its output is either the mean of `c_1..c_n`
//!   or the last state `c_n` (width `d_h`).
//!
//! Neither mechanism's input-side projection (`U_a h_i`, or `W_* h_t + b_*`)
//! depends on the target step, so it is computed once per sentence
//! ([`SourceProjection`]) and its gradient is accumulated across steps
//! ([`SourceGrad`]) and applied once in [`finish_source_backward`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::encoder::Annotations;
use crate::error::{Error, Result};
use crate::gru::{GatePre, GruParams, GruStep};
use crate::numerics::{dot, softmax, softmax_backward, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    Attention,
    Contexter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMode {
    MeanPooling,
    LastState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextMode {
    pub mechanism: Mechanism,
    /// Ignored by attention.
    pub output: OutputMode,
}

impl ContextMode {
    pub const ATTENTION: ContextMode = ContextMode {
        mechanism: Mechanism::Attention,
        output: OutputMode::LastState,
    };
    pub const MEAN_POOLING: ContextMode = ContextMode {
        mechanism: Mechanism::Contexter,
        output: OutputMode::MeanPooling,
    };
    pub const LAST_STATE: ContextMode = ContextMode {
        mechanism: Mechanism::Contexter,
        output: OutputMode::LastState,
    };

    pub fn context_dim(&self, d_h: usize) -> usize {
        match self.mechanism {
            Mechanism::Attention => 2 * d_h,
            Mechanism::Contexter => d_h,
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::Attention => "attention",
            Mechanism::Contexter => "contexter",
        })
    }
}

impl fmt::Display for OutputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputMode::MeanPooling => "mean-pooling",
            OutputMode::LastState => "last-state",
        })
    }
}

impl FromStr for Mechanism {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(Mechanism::Attention),
            "contexter" => Ok(Mechanism::Contexter),
            other => Err(Error::Input(format!("unknown mechanism '{other}'"))),
        }
    }
}

impl FromStr for OutputMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-pooling" | "mean" => Ok(OutputMode::MeanPooling),
            "last-state" | "last" => Ok(OutputMode::LastState),
            other => Err(Error::Input(format!("unknown output mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// d_a x d_h
    pub w_a: Matrix,
    /// d_a x 2*d_h
    pub u_a: Matrix,
    /// d_a x 1
    pub v_a: Matrix,
}

impl AttentionParams {
    pub fn zeros(d_h: usize, d_a: usize) -> Self {
        Self {
            w_a: Matrix::zeros(d_a, d_h),
            u_a: Matrix::zeros(d_a, 2 * d_h),
            v_a: Matrix::zeros(d_a, 1),
        }
    }

    fn tensors<'a>(&'a self, p: &str) -> Vec<(String, &'a Matrix)> {
        vec![
            (format!("{p}.w_a"), &self.w_a),
            (format!("{p}.u_a"), &self.u_a),
            (format!("{p}.v_a"), &self.v_a),
        ]
    }

    fn tensors_mut<'a>(&'a mut self, p: &str) -> Vec<(String, &'a mut Matrix)> {
        vec![
            (format!("{p}.w_a"), &mut self.w_a),
            (format!("{p}.u_a"), &mut self.u_a),
            (format!("{p}.v_a"), &mut self.v_a),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContexterParams {
    /// GRU with input width 2*d_h and hidden width d_h.
    pub cell: GruParams,
    /// Initial-state map from the previous decoder state, d_h x d_h.
    pub v: Matrix,
    pub b_0: Matrix,
}

impl ContexterParams {
    pub fn zeros(d_h: usize) -> Self {
        Self {
            cell: GruParams::zeros(2 * d_h, d_h),
            v: Matrix::zeros(d_h, d_h),
            b_0: Matrix::zeros(d_h, 1),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.v.rows()
    }

    fn tensors<'a>(&'a self, p: &str) -> Vec<(String, &'a Matrix)> {
        let mut t = self.cell.tensors(&format!("{p}.gru"));
        t.push((format!("{p}.v"), &self.v));
        t.push((format!("{p}.b_0"), &self.b_0));
        t
    }

    fn tensors_mut<'a>(&'a mut self, p: &str) -> Vec<(String, &'a mut Matrix)> {
        let mut t = self.cell.tensors_mut(&format!("{p}.gru"));
        t.push((format!("{p}.v"), &mut self.v));
        t.push((format!("{p}.b_0"), &mut self.b_0));
        t
    }
}

/// Parameters of whichever mechanism a model uses.
#[derive(Debug, Clone, PartialEq)]
pub enum MechanismParams {
    Attention(AttentionParams),
    Contexter(ContexterParams),
}

impl MechanismParams {
    pub fn zeros(mechanism: Mechanism, d_h: usize, d_a: usize) -> Self {
        match mechanism {
            Mechanism::Attention => MechanismParams::Attention(AttentionParams::zeros(d_h, d_a)),
            Mechanism::Contexter => MechanismParams::Contexter(ContexterParams::zeros(d_h)),
        }
    }

    pub fn random<R: Rng>(mechanism: Mechanism, d_h: usize, d_a: usize, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(mechanism, d_h, d_a);
        for (name, t) in p.tensors_mut("ctx") {
            if !crate::model::is_bias(&name) {
                t.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-scale..=scale));
            }
        }
        p
    }

    pub fn mechanism(&self) -> Mechanism {
        match self {
            MechanismParams::Attention(_) => Mechanism::Attention,
            MechanismParams::Contexter(_) => Mechanism::Contexter,
        }
    }

    pub fn tensors<'a>(&'a self, p: &str) -> Vec<(String, &'a Matrix)> {
        match self {
            MechanismParams::Attention(a) => a.tensors(&format!("{p}.attn")),
            MechanismParams::Contexter(c) => c.tensors(&format!("{p}.ctxr")),
        }
    }

    pub fn tensors_mut<'a>(&'a mut self, p: &str) -> Vec<(String, &'a mut Matrix)> {
        match self {
            MechanismParams::Attention(a) => a.tensors_mut(&format!("{p}.attn")),
            MechanismParams::Contexter(c) => c.tensors_mut(&format!("{p}.ctxr")),
        }
    }
}

/// Contexter activations for one target step. Row `t` of each matrix belongs
/// to source position `t` (the step reading annotation `h_t`).
#[derive(Debug, Clone, PartialEq)]
pub struct GateTrace {
    pub update: Matrix,
    pub reset: Matrix,
    pub states: Matrix,
    pub candidates: Matrix,
    /// Initial state `c_0`.
    pub initial: Vector,
}

impl GateTrace {
    fn step(&self, t: usize) -> GruStep {
        GruStep {
            z: self.update.row(t).to_vec(),
            r: self.reset.row(t).to_vec(),
            cand: self.candidates.row(t).to_vec(),
            h: self.states.row(t).to_vec(),
        }
    }

    fn state_before(&self, t: usize) -> &[f64] {
        if t == 0 {
            &self.initial
        } else {
            self.states.row(t - 1)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextOutput {
    pub context: Vector,
    /// Attention weights over source positions (attention only).
    pub weights: Option<Vector>,
    /// Gate activations (contexter only).
    pub trace: Option<GateTrace>,
    /// `tanh(W_a s + U_a h_i)` rows, kept for the attention backward pass.
    pub(crate) hidden: Option<Matrix>,
}

/// Step-independent, per-sentence projections of the annotations.
#[derive(Debug, Clone)]
pub enum SourceProjection {
    /// `U_a h_i`, one row per position.
    Attention(Matrix),
    /// `W_* h_t + b_*`, one entry per position.
    Contexter(Vec<GatePre>),
}

/// Gradient accumulated on a [`SourceProjection`] across target steps.
#[derive(Debug, Clone)]
pub enum SourceGrad {
    Attention(Matrix),
    Contexter(Vec<GatePre>),
}

pub fn project_source(params: &MechanismParams, h: &Annotations) -> SourceProjection {
    match params {
        MechanismParams::Attention(a) => {
            let mut uh = Matrix::zeros(h.len(), a.u_a.rows());
            for i in 0..h.len() {
                a.u_a.matvec_acc(h.row(i), uh.row_mut(i));
            }
            SourceProjection::Attention(uh)
        }
        MechanismParams::Contexter(c) => {
            SourceProjection::Contexter((0..h.len()).map(|t| c.cell.project(h.row(t))).collect())
        }
    }
}

impl SourceGrad {
    pub fn zeros(proj: &SourceProjection) -> Self {
        match proj {
            SourceProjection::Attention(m) => SourceGrad::Attention(Matrix::zeros(m.rows(), m.cols())),
            SourceProjection::Contexter(v) => {
                SourceGrad::Contexter(v.iter().map(|p| GatePre::zeros(p.z.len())).collect())
            }
        }
    }
}

fn check_dims(s_prev: &[f64], h: &Annotations, d_h: usize) -> Result<()> {
    if s_prev.len() != d_h {
        return Err(Error::shape(format!(
            "previous decoder state has dimension {}, expected {d_h}",
            s_prev.len()
        )));
    }
    if h.width() != 2 * d_h {
        return Err(Error::shape(format!(
            "annotations have width {}, expected {}",
            h.width(),
            2 * d_h
        )));
    }
    if h.is_empty() {
        return Err(Error::shape("no annotations"));
    }
    Ok(())
}

/// Additive attention context with the annotation projection precomputed.
pub fn attention_step(params: &AttentionParams, uh: &Matrix, s_prev: &[f64], h: &Annotations) -> ContextOutput {
    let n = h.len();
    let ws = params.w_a.matvec(s_prev);
    let mut hidden = uh.clone();
    let mut scores = vec![0.0; n];
    for i in 0..n {
        let row = hidden.row_mut(i);
        row.iter_mut().zip(&ws).for_each(|(x, w)| *x = (*x + w).tanh());
        scores[i] = dot(row, params.v_a.data());
    }
    let alpha = softmax(&scores).expect("non-empty");
    let mut context = vec![0.0; h.width()];
    for (i, a) in alpha.iter().enumerate() {
        crate::numerics::axpy(*a, h.row(i), &mut context);
    }
    ContextOutput {
        context,
        weights: Some(alpha),
        trace: None,
        hidden: Some(hidden),
    }
}

pub fn attention_context(params: &AttentionParams, s_prev: &[f64], h: &Annotations) -> Result<ContextOutput> {
    check_dims(s_prev, h, params.w_a.cols())?;
    if params.u_a.cols() != h.width() || params.v_a.rows() != params.w_a.rows() {
        return Err(Error::shape("attention parameter shapes are inconsistent"));
    }
    let SourceProjection::Attention(uh) = project_source(&MechanismParams::Attention(params.clone()), h) else {
        unreachable!()
    };
    Ok(attention_step(params, &uh, s_prev, h))
}

/// `c_0 = tanh(V s_prev + b_0)`.
pub fn init_contexter_state(params: &ContexterParams, s_prev: &[f64]) -> Vector {
    let mut c0 = params.b_0.data().to_vec();
    params.v.matvec_acc(s_prev, &mut c0);
    c0.iter_mut().for_each(|x| *x = x.tanh());
    c0
}

/// Contexter context with the annotation projection precomputed.
pub fn contexter_step(params: &ContexterParams, proj: &[GatePre], s_prev: &[f64], output: OutputMode) -> ContextOutput {
    let n = proj.len();
    let d_h = params.hidden_dim();
    let initial = init_contexter_state(params, s_prev);
    let mut trace = GateTrace {
        update: Matrix::zeros(n, d_h),
        reset: Matrix::zeros(n, d_h),
        states: Matrix::zeros(n, d_h),
        candidates: Matrix::zeros(n, d_h),
        initial,
    };
    for t in 0..n {
        let step = params.cell.step(&proj[t], trace.state_before(t));
        trace.update.row_mut(t).copy_from_slice(&step.z);
        trace.reset.row_mut(t).copy_from_slice(&step.r);
        trace.candidates.row_mut(t).copy_from_slice(&step.cand);
        trace.states.row_mut(t).copy_from_slice(&step.h);
    }
    let context = match output {
        OutputMode::LastState => trace.states.row(n - 1).to_vec(),
        OutputMode::MeanPooling => {
            let mut m = vec![0.0; d_h];
            for t in 0..n {
                crate::numerics::axpy(1.0, trace.states.row(t), &mut m);
            }
            m.iter_mut().for_each(|x| *x /= n as f64);
            m
        }
    };
    ContextOutput {
        context,
        weights: None,
        trace: Some(trace),
        hidden: None,
    }
}

pub fn contexter_context(
    params: &ContexterParams,
    s_prev: &[f64],
    h: &Annotations,
    mode: ContextMode,
) -> Result<ContextOutput> {
    if mode.mechanism != Mechanism::Contexter {
        return Err(Error::Precondition("contexter_context called with the attention mechanism".into()));
    }
    check_dims(s_prev, h, params.hidden_dim())?;
    let proj: Vec<GatePre> = (0..h.len()).map(|t| params.cell.project(h.row(t))).collect();
    Ok(contexter_step(params, &proj, s_prev, mode.output))
}

/// Dispatches one context computation over precomputed projections.
pub fn context_step(
    params: &MechanismParams,
    proj: &SourceProjection,
    s_prev: &[f64],
    h: &Annotations,
    output: OutputMode,
) -> ContextOutput {
    match (params, proj) {
        (MechanismParams::Attention(a), SourceProjection::Attention(uh)) => attention_step(a, uh, s_prev, h),
        (MechanismParams::Contexter(c), SourceProjection::Contexter(p)) => contexter_step(c, p, s_prev, output),
        _ => panic!("source projection does not match mechanism"),
    }
}

/// Backward through one context computation. Parameter gradients that do not
/// touch the annotations go to `grads`; the gradient on `s_prev` is added to
/// `d_s_prev`; annotation gradients go to `d_h` (attention's weighted sum) or
/// the source-projection accumulator `d_proj`.
#[allow(clippy::too_many_arguments)]
pub fn context_step_backward(
    params: &MechanismParams,
    out: &ContextOutput,
    s_prev: &[f64],
    h: &Annotations,
    output: OutputMode,
    d_context: &[f64],
    grads: &mut MechanismParams,
    d_s_prev: &mut [f64],
    d_h: &mut Matrix,
    d_proj: &mut SourceGrad,
) -> Result<()> {
    match (params, grads, d_proj) {
        (MechanismParams::Attention(p), MechanismParams::Attention(g), SourceGrad::Attention(duh)) => {
            let (Some(alpha), Some(hidden)) = (&out.weights, &out.hidden) else {
                return Err(Error::State("attention backward needs the forward weights".into()));
            };
            let n = h.len();
            let d_alpha: Vec<f64> = (0..n).map(|i| dot(d_context, h.row(i))).collect();
            for i in 0..n {
                crate::numerics::axpy(alpha[i], d_context, d_h.row_mut(i));
            }
            let d_scores = softmax_backward(alpha, &d_alpha);
            let d_a = p.v_a.rows();
            let mut d_ws = vec![0.0; d_a];
            for i in 0..n {
                let t = hidden.row(i);
                crate::numerics::axpy(d_scores[i], t, g.v_a.data_mut());
                let row = duh.row_mut(i);
                for k in 0..d_a {
                    let d = d_scores[i] * p.v_a.data()[k] * (1.0 - t[k] * t[k]);
                    row[k] += d;
                    d_ws[k] += d;
                }
            }
            g.w_a.add_outer(&d_ws, s_prev);
            p.w_a.matvec_t_acc(&d_ws, d_s_prev);
            Ok(())
        }
        (MechanismParams::Contexter(p), MechanismParams::Contexter(g), SourceGrad::Contexter(dpre)) => {
            let Some(trace) = &out.trace else {
                return Err(Error::State("contexter backward needs the forward gate trace".into()));
            };
            let n = trace.states.rows();
            let d = p.hidden_dim();
            let mut dc = vec![0.0; d];
            if output == OutputMode::LastState {
                dc.copy_from_slice(d_context);
            }
            let share = 1.0 / n as f64;
            for t in (0..n).rev() {
                if output == OutputMode::MeanPooling {
                    crate::numerics::axpy(share, d_context, &mut dc);
                }
                let mut dc_prev = vec![0.0; d];
                let step_pre = p
                    .cell
                    .step_backward(&trace.step(t), trace.state_before(t), &dc, &mut g.cell, &mut dc_prev);
                dpre[t].add(&step_pre);
                dc = dc_prev;
            }
            let da0: Vec<f64> = dc
                .iter()
                .zip(&trace.initial)
                .map(|(d, c)| d * (1.0 - c * c))
                .collect();
            g.v.add_outer(&da0, s_prev);
            crate::numerics::axpy(1.0, &da0, g.b_0.data_mut());
            p.v.matvec_t_acc(&da0, d_s_prev);
            Ok(())
        }
        _ => Err(Error::State("gradient buffers do not match the mechanism".into())),
    }
}

/// Applies the accumulated source-projection gradient to the projection
/// parameters and the annotations.
pub fn finish_source_backward(
    params: &MechanismParams,
    h: &Annotations,
    d_proj: &SourceGrad,
    grads: &mut MechanismParams,
    d_h: &mut Matrix,
) {
    match (params, d_proj, grads) {
        (MechanismParams::Attention(p), SourceGrad::Attention(duh), MechanismParams::Attention(g)) => {
            for i in 0..h.len() {
                g.u_a.add_outer(duh.row(i), h.row(i));
                p.u_a.matvec_t_acc(duh.row(i), d_h.row_mut(i));
            }
        }
        (MechanismParams::Contexter(p), SourceGrad::Contexter(dpre), MechanismParams::Contexter(g)) => {
            for t in 0..h.len() {
                p.cell.project_backward(h.row(t), &dpre[t], &mut g.cell, d_h.row_mut(t));
            }
        }
        _ => panic!("source gradient does not match mechanism"),
    }
}

/// Gradients of one standalone context computation.
#[derive(Debug, Clone)]
pub struct ContextGrads {
    pub params: MechanismParams,
    pub s_prev: Vector,
    pub annotations: Matrix,
}

/// Reverse-mode gradients of a single `a(s_prev, H)` evaluation given the
/// upstream gradient on the context vector.
pub fn context_backward(
    params: &MechanismParams,
    out: &ContextOutput,
    s_prev: &[f64],
    h: &Annotations,
    output: OutputMode,
    d_context: &[f64],
) -> Result<ContextGrads> {
    let proj = project_source(params, h);
    let mut d_proj = SourceGrad::zeros(&proj);
    let mut grads = MechanismParams::zeros(params.mechanism(), s_prev.len(), match params {
        MechanismParams::Attention(a) => a.w_a.rows(),
        MechanismParams::Contexter(_) => 0,
    });
    let mut d_s = vec![0.0; s_prev.len()];
    let mut d_h = Matrix::zeros(h.len(), h.width());
    context_step_backward(
        params, out, s_prev, h, output, d_context, &mut grads, &mut d_s, &mut d_h, &mut d_proj,
    )?;
    finish_source_backward(params, h, &d_proj, &mut grads, &mut d_h);
    Ok(ContextGrads {
        params: grads,
        s_prev: d_s,
        annotations: d_h,
    })
}
