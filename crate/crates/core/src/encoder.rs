//! Bidirectional GRU encoder producing one annotation per source word.

use rand::Rng;

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::gru::{GruParams, GruStep};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// Source embeddings, one row per vocabulary entry.
    pub embed: Matrix,
    pub fwd: GruParams,
    pub bwd: GruParams,
}

impl EncoderParams {
    pub fn zeros(vocab: usize, d_w: usize, d_h: usize) -> Self {
        Self {
            embed: Matrix::zeros(vocab, d_w),
            fwd: GruParams::zeros(d_w, d_h),
            bwd: GruParams::zeros(d_w, d_h),
        }
    }

    pub fn random<R: Rng>(vocab: usize, d_w: usize, d_h: usize, scale: f64, rng: &mut R) -> Self {
        let mut embed = Matrix::zeros(vocab, d_w);
        embed
            .data_mut()
            .iter_mut()
            .for_each(|x| *x = rng.gen_range(-scale..=scale));
        Self {
            embed,
            fwd: GruParams::random(d_w, d_h, scale, rng),
            bwd: GruParams::random(d_w, d_h, scale, rng),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.fwd.hidden_dim()
    }

    pub fn tensors<'a>(&'a self, prefix: &str) -> Vec<(String, &'a Matrix)> {
        let mut t = vec![(format!("{prefix}.embed"), &self.embed)];
        t.extend(self.fwd.tensors(&format!("{prefix}.fwd")));
        t.extend(self.bwd.tensors(&format!("{prefix}.bwd")));
        t
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str) -> Vec<(String, &'a mut Matrix)> {
        let mut t = vec![(format!("{prefix}.embed"), &mut self.embed)];
        t.extend(self.fwd.tensors_mut(&format!("{prefix}.fwd")));
        t.extend(self.bwd.tensors_mut(&format!("{prefix}.bwd")));
        t
    }
}

/// Source annotations: row `i` is `[forward_i ; backward_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotations {
    pub matrix: Matrix,
}

impl Annotations {
    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }

    /// Width of one annotation (twice the encoder hidden size).
    pub fn width(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }

    pub fn forward_half(&self, i: usize) -> &[f64] {
        &self.row(i)[..self.width() / 2]
    }

    pub fn backward_half(&self, i: usize) -> &[f64] {
        &self.row(i)[self.width() / 2..]
    }
}

/// Per-step GRU intermediates of both directions.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    fwd: Vec<GruStep>,
    bwd: Vec<GruStep>,
}

fn check_ids(params: &EncoderParams, ids: &[TokenId]) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::shape("cannot encode an empty source sentence"));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= params.embed.rows()) {
        return Err(Error::shape(format!(
            "source id {bad} outside vocabulary of size {}",
            params.embed.rows()
        )));
    }
    Ok(())
}

pub fn encode(params: &EncoderParams, source_ids: &[TokenId]) -> Result<Annotations> {
    encode_cached(params, source_ids).map(|(h, _)| h)
}

pub fn encode_cached(params: &EncoderParams, source_ids: &[TokenId]) -> Result<(Annotations, EncoderCache)> {
    check_ids(params, source_ids)?;
    let n = source_ids.len();
    let d_h = params.hidden_dim();

    let mut fwd: Vec<GruStep> = Vec::with_capacity(n);
    let zero = vec![0.0; d_h];
    for &x in source_ids {
        let prev = fwd.last().map_or(&zero[..], |s| &s.h[..]);
        let s = params.fwd.step(&params.fwd.project(params.embed.row(x)), prev);
        fwd.push(s);
    }
    let mut bwd: Vec<Option<GruStep>> = vec![None; n];
    for i in (0..n).rev() {
        let prev = if i + 1 < n {
            &bwd[i + 1].as_ref().expect("later step computed").h[..]
        } else {
            &zero[..]
        };
        let s = params.bwd.step(&params.bwd.project(params.embed.row(source_ids[i])), prev);
        bwd[i] = Some(s);
    }
    let bwd: Vec<GruStep> = bwd.into_iter().map(|s| s.expect("all steps computed")).collect();

    let mut matrix = Matrix::zeros(n, 2 * d_h);
    for i in 0..n {
        let row = matrix.row_mut(i);
        row[..d_h].copy_from_slice(&fwd[i].h);
        row[d_h..].copy_from_slice(&bwd[i].h);
    }
    Ok((Annotations { matrix }, EncoderCache { fwd, bwd }))
}

/// Backpropagates annotation gradients `d_annotations` (n x 2*d_h) into the
/// encoder parameters and embeddings.
pub fn encode_backward(
    params: &EncoderParams,
    source_ids: &[TokenId],
    cache: &EncoderCache,
    d_annotations: &Matrix,
    grads: &mut EncoderParams,
) {
    let n = source_ids.len();
    let d_h = params.hidden_dim();
    let zero = vec![0.0; d_h];

    let mut dh = vec![0.0; d_h];
    for i in (0..n).rev() {
        dh.iter_mut()
            .zip(&d_annotations.row(i)[..d_h])
            .for_each(|(d, g)| *d += g);
        let h_prev = if i > 0 { &cache.fwd[i - 1].h[..] } else { &zero[..] };
        let mut dh_prev = vec![0.0; d_h];
        let dpre = params.fwd.step_backward(&cache.fwd[i], h_prev, &dh, &mut grads.fwd, &mut dh_prev);
        let x = source_ids[i];
        params
            .fwd
            .project_backward(params.embed.row(x), &dpre, &mut grads.fwd, grads.embed.row_mut(x));
        dh = dh_prev;
    }

    let mut dh = vec![0.0; d_h];
    for i in 0..n {
        dh.iter_mut()
            .zip(&d_annotations.row(i)[d_h..])
            .for_each(|(d, g)| *d += g);
        let h_prev = if i + 1 < n { &cache.bwd[i + 1].h[..] } else { &zero[..] };
        let mut dh_prev = vec![0.0; d_h];
        let dpre = params.bwd.step_backward(&cache.bwd[i], h_prev, &dh, &mut grads.bwd, &mut dh_prev);
        let x = source_ids[i];
        params
            .bwd
            .project_backward(params.embed.row(x), &dpre, &mut grads.bwd, grads.embed.row_mut(x));
        dh = dh_prev;
    }
}
