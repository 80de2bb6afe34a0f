//! Target-side GRU, its initial state, and the word-probability readout.
//!
//! The readout is a single tanh layer over the previous word embedding, the
//! current decoder state and the context, followed by a linear projection to
//! the target vocabulary and a log-softmax.

use rand::Rng;

use crate::corpus::TokenId;
use crate::encoder::Annotations;
use crate::error::{Error, Result};
use crate::gru::{GruParams, GruStep};
use crate::numerics::{log_softmax, Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    /// Target embeddings; the BOS row is the embedding of the word before the first.
    pub embed: Matrix,
    /// GRU over `[E_{y_{j-1}} ; c~_j]`.
    pub cell: GruParams,
    pub w_init: Matrix,
    pub b_init: Matrix,
    pub w_ro_s: Matrix,
    pub w_ro_y: Matrix,
    pub w_ro_c: Matrix,
    pub b_ro: Matrix,
    pub w_out: Matrix,
    pub b_out: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub s: Vector,
    pub step: usize,
}

/// Intermediates of one readout evaluation.
#[derive(Debug, Clone)]
pub struct Readout {
    pub hidden: Vector,
    pub log_probs: Vector,
}

impl DecoderParams {
    pub fn zeros(vocab: usize, d_w: usize, d_h: usize, d_r: usize, ctx_dim: usize) -> Self {
        Self {
            embed: Matrix::zeros(vocab, d_w),
            cell: GruParams::zeros(d_w + ctx_dim, d_h),
            w_init: Matrix::zeros(d_h, d_h),
            b_init: Matrix::zeros(d_h, 1),
            w_ro_s: Matrix::zeros(d_r, d_h),
            w_ro_y: Matrix::zeros(d_r, d_w),
            w_ro_c: Matrix::zeros(d_r, ctx_dim),
            b_ro: Matrix::zeros(d_r, 1),
            w_out: Matrix::zeros(vocab, d_r),
            b_out: Matrix::zeros(vocab, 1),
        }
    }

    pub fn random<R: Rng>(
        vocab: usize,
        d_w: usize,
        d_h: usize,
        d_r: usize,
        ctx_dim: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(vocab, d_w, d_h, d_r, ctx_dim);
        for (name, t) in p.tensors_mut("dec") {
            if !crate::model::is_bias(&name) {
                t.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-scale..=scale));
            }
        }
        p
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.embed.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_init.rows()
    }

    pub fn context_dim(&self) -> usize {
        self.w_ro_c.cols()
    }

    pub fn tensors<'a>(&'a self, p: &str) -> Vec<(String, &'a Matrix)> {
        let mut t = vec![(format!("{p}.embed"), &self.embed)];
        t.extend(self.cell.tensors(&format!("{p}.gru")));
        t.extend([
            (format!("{p}.w_init"), &self.w_init),
            (format!("{p}.b_init"), &self.b_init),
            (format!("{p}.w_ro_s"), &self.w_ro_s),
            (format!("{p}.w_ro_y"), &self.w_ro_y),
            (format!("{p}.w_ro_c"), &self.w_ro_c),
            (format!("{p}.b_ro"), &self.b_ro),
            (format!("{p}.w_out"), &self.w_out),
            (format!("{p}.b_out"), &self.b_out),
        ]);
        t
    }

    pub fn tensors_mut<'a>(&'a mut self, p: &str) -> Vec<(String, &'a mut Matrix)> {
        let mut t = vec![(format!("{p}.embed"), &mut self.embed)];
        t.extend(self.cell.tensors_mut(&format!("{p}.gru")));
        t.extend([
            (format!("{p}.w_init"), &mut self.w_init),
            (format!("{p}.b_init"), &mut self.b_init),
            (format!("{p}.w_ro_s"), &mut self.w_ro_s),
            (format!("{p}.w_ro_y"), &mut self.w_ro_y),
            (format!("{p}.w_ro_c"), &mut self.w_ro_c),
            (format!("{p}.b_ro"), &mut self.b_ro),
            (format!("{p}.w_out"), &mut self.w_out),
            (format!("{p}.b_out"), &mut self.b_out),
        ]);
        t
    }

    fn check(&self, y_prev: TokenId, context: &[f64]) -> Result<()> {
        if y_prev >= self.vocab_size() {
            return Err(Error::shape(format!(
                "target id {y_prev} outside vocabulary of size {}",
                self.vocab_size()
            )));
        }
        if context.len() != self.context_dim() {
            return Err(Error::shape(format!(
                "context has dimension {}, decoder expects {}",
                context.len(),
                self.context_dim()
            )));
        }
        Ok(())
    }

    /// Decoder GRU input `[E_{y_prev} ; context]`.
    pub fn step_input(&self, y_prev: TokenId, context: &[f64]) -> Vector {
        let mut x = Vec::with_capacity(self.embed_dim() + context.len());
        x.extend_from_slice(self.embed.row(y_prev));
        x.extend_from_slice(context);
        x
    }

    pub fn step_raw(&self, s_prev: &[f64], x: &[f64]) -> GruStep {
        self.cell.step(&self.cell.project(x), s_prev)
    }

    pub fn readout(&self, y_prev: TokenId, s: &[f64], context: &[f64]) -> Readout {
        let mut hidden = self.b_ro.data().to_vec();
        self.w_ro_s.matvec_acc(s, &mut hidden);
        self.w_ro_y.matvec_acc(self.embed.row(y_prev), &mut hidden);
        self.w_ro_c.matvec_acc(context, &mut hidden);
        hidden.iter_mut().for_each(|x| *x = x.tanh());
        let mut logits = self.b_out.data().to_vec();
        self.w_out.matvec_acc(&hidden, &mut logits);
        let log_probs = log_softmax(&logits).expect("non-empty vocabulary");
        Readout { hidden, log_probs }
    }

    /// Backward through the readout given the gradient on the logits.
    /// Adds into `ds`, `d_context` and the gradient buffers.
    #[allow(clippy::too_many_arguments)]
    pub fn readout_backward(
        &self,
        y_prev: TokenId,
        s: &[f64],
        context: &[f64],
        readout: &Readout,
        d_logits: &[f64],
        grads: &mut DecoderParams,
        ds: &mut [f64],
        d_context: &mut [f64],
    ) {
        grads.w_out.add_outer(d_logits, &readout.hidden);
        crate::numerics::axpy(1.0, d_logits, grads.b_out.data_mut());
        let mut d_hidden = vec![0.0; readout.hidden.len()];
        self.w_out.matvec_t_acc(d_logits, &mut d_hidden);
        for (d, h) in d_hidden.iter_mut().zip(&readout.hidden) {
            *d *= 1.0 - h * h;
        }
        let e = self.embed.row(y_prev);
        grads.w_ro_s.add_outer(&d_hidden, s);
        grads.w_ro_y.add_outer(&d_hidden, e);
        grads.w_ro_c.add_outer(&d_hidden, context);
        crate::numerics::axpy(1.0, &d_hidden, grads.b_ro.data_mut());
        self.w_ro_s.matvec_t_acc(&d_hidden, ds);
        self.w_ro_y.matvec_t_acc(&d_hidden, grads.embed.row_mut(y_prev));
        self.w_ro_c.matvec_t_acc(&d_hidden, d_context);
    }

    /// Backward through one GRU step over `[E_{y_prev} ; context]`.
    #[allow(clippy::too_many_arguments)]
    pub fn step_backward(
        &self,
        y_prev: TokenId,
        x: &[f64],
        step: &GruStep,
        s_prev: &[f64],
        ds: &[f64],
        grads: &mut DecoderParams,
        ds_prev: &mut [f64],
        d_context: &mut [f64],
    ) {
        let dpre = self.cell.step_backward(step, s_prev, ds, &mut grads.cell, ds_prev);
        let mut dx = vec![0.0; x.len()];
        self.cell.project_backward(x, &dpre, &mut grads.cell, &mut dx);
        let d_w = self.embed_dim();
        crate::numerics::axpy(1.0, &dx[..d_w], grads.embed.row_mut(y_prev));
        crate::numerics::axpy(1.0, &dx[d_w..], d_context);
    }

    /// Backward through `s_0 = tanh(W_init h<-_1 + b_init)`; adds into the
    /// backward half of the first annotation gradient row.
    pub fn init_backward(&self, h: &Annotations, s0: &[f64], ds0: &[f64], grads: &mut DecoderParams, d_h: &mut Matrix) {
        let da: Vec<f64> = ds0.iter().zip(s0).map(|(d, s)| d * (1.0 - s * s)).collect();
        grads.w_init.add_outer(&da, h.backward_half(0));
        crate::numerics::axpy(1.0, &da, grads.b_init.data_mut());
        let half = h.width() / 2;
        self.w_init.matvec_t_acc(&da, &mut d_h.row_mut(0)[half..]);
    }
}

/// `s_0 = tanh(W_init h<-_1 + b_init)` from the backward half of the first annotation.
pub fn init_decoder_state(params: &DecoderParams, h: &Annotations) -> Result<DecoderState> {
    if h.is_empty() {
        return Err(Error::shape("no annotations to initialize the decoder from"));
    }
    if h.width() != 2 * params.hidden_dim() {
        return Err(Error::shape(format!(
            "annotation width {} does not match decoder hidden size {}",
            h.width(),
            params.hidden_dim()
        )));
    }
    let mut s = params.b_init.data().to_vec();
    params.w_init.matvec_acc(h.backward_half(0), &mut s);
    s.iter_mut().for_each(|x| *x = x.tanh());
    Ok(DecoderState { s, step: 0 })
}

pub fn decoder_step(
    params: &DecoderParams,
    s_prev: &DecoderState,
    y_prev: TokenId,
    context: &[f64],
) -> Result<DecoderState> {
    params.check(y_prev, context)?;
    if s_prev.s.len() != params.hidden_dim() {
        return Err(Error::shape("decoder state has the wrong dimension"));
    }
    let step = params.step_raw(&s_prev.s, &params.step_input(y_prev, context));
    Ok(DecoderState {
        s: step.h,
        step: s_prev.step + 1,
    })
}

/// Log-probabilities of the next target word.
pub fn output_distribution(
    params: &DecoderParams,
    y_prev: TokenId,
    s_j: &DecoderState,
    context: &[f64],
) -> Result<Vector> {
    params.check(y_prev, context)?;
    Ok(params.readout(y_prev, &s_j.s, context).log_probs)
}
