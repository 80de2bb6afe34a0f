//! The full translation model: encoder, context mechanism and decoder wired
//! together, with teacher-forced loss and exact backpropagation through time.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::context::{
    context_step, context_step_backward, finish_source_backward, project_source, ContextMode, ContextOutput,
    MechanismParams, SourceGrad, SourceProjection,
};
use crate::corpus::{SentencePair, TokenId, BOS};
use crate::decoder::{DecoderParams, Readout};
use crate::encoder::{encode_backward, encode_cached, Annotations, EncoderCache, EncoderParams};
use crate::error::{Error, Result};
use crate::gru::GruStep;
use crate::numerics::{grad_check, GradCheckReport, Matrix, ParamSet, Vector};

/// Half-width of the uniform initialization range.
pub const INIT_SCALE: f64 = 0.08;

/// Weight range for gradient checks. At the training scale many gradients
/// fall below the finite-difference noise floor and relative errors become
/// meaningless.
pub const GRADCHECK_SCALE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub d_w: usize,
    pub d_h: usize,
    pub d_a: usize,
    pub d_r: usize,
    pub v_src: usize,
    pub v_tgt: usize,
}

impl Dims {
    /// Desk-scale sizes; attention and readout widths follow `d_h`.
    pub fn desk(v_src: usize, v_tgt: usize) -> Self {
        Self::square(32, 64, v_src, v_tgt)
    }

    pub fn paper(v_src: usize, v_tgt: usize) -> Self {
        Self::square(620, 1000, v_src, v_tgt)
    }

    pub fn square(d_w: usize, d_h: usize, v_src: usize, v_tgt: usize) -> Self {
        Self {
            d_w,
            d_h,
            d_a: d_h,
            d_r: d_h,
            v_src,
            v_tgt,
        }
    }
}

/// Biases are the tensors whose leaf name starts with `b_`.
pub fn is_bias(name: &str) -> bool {
    name.rsplit('.').next().is_some_and(|leaf| leaf.starts_with("b_"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: Dims,
    pub mode: ContextMode,
    pub encoder: EncoderParams,
    pub mechanism: MechanismParams,
    pub decoder: DecoderParams,
}

impl ParamSet for ModelParams {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut t = self.encoder.tensors("enc");
        t.extend(self.mechanism.tensors("ctx"));
        t.extend(self.decoder.tensors("dec"));
        t
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut t = self.encoder.tensors_mut("enc");
        t.extend(self.mechanism.tensors_mut("ctx"));
        t.extend(self.decoder.tensors_mut("dec"));
        t
    }
}

impl ModelParams {
    pub fn zeros(dims: Dims, mode: ContextMode) -> Self {
        Self {
            dims,
            mode,
            encoder: EncoderParams::zeros(dims.v_src, dims.d_w, dims.d_h),
            mechanism: MechanismParams::zeros(mode.mechanism, dims.d_h, dims.d_a),
            decoder: DecoderParams::zeros(dims.v_tgt, dims.d_w, dims.d_h, dims.d_r, mode.context_dim(dims.d_h)),
        }
    }

    /// Weights uniform in `[-scale, scale]`, biases zero.
    pub fn random_with_scale(dims: Dims, mode: ContextMode, scale: f64, seed: u64) -> Self {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(dims, mode);
        for (name, t) in p.tensors_mut() {
            if !is_bias(&name) {
                t.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-scale..=scale));
            }
        }
        p
    }

    /// Seeded initialization used for training.
    pub fn init(dims: Dims, mode: ContextMode, seed: u64) -> Self {
        Self::random_with_scale(dims, mode, INIT_SCALE, seed)
    }

    pub fn context_dim(&self) -> usize {
        self.mode.context_dim(self.dims.d_h)
    }

    /// Rounds every parameter to the nearest `f32`, the checkpoint storage width.
    pub fn quantize_f32(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    fn check_target(&self, target: &[TokenId]) -> Result<()> {
        if target.is_empty() {
            return Err(Error::Input("empty target sentence".into()));
        }
        if let Some(&bad) = target.iter().find(|&&y| y >= self.dims.v_tgt) {
            return Err(Error::Input(format!(
                "target id {bad} outside vocabulary of size {}",
                self.dims.v_tgt
            )));
        }
        Ok(())
    }

    /// Encodes a source sentence once for step-by-step decoding.
    pub fn start(&self, source: &[TokenId]) -> Result<SourceState> {
        let (annotations, cache) = encode_cached(&self.encoder, source)?;
        let proj = project_source(&self.mechanism, &annotations);
        let s0 = crate::decoder::init_decoder_state(&self.decoder, &annotations)?.s;
        Ok(SourceState {
            annotations,
            cache,
            proj,
            s0,
        })
    }

    /// One decoding step: context from `s_prev`, new state, and next-word
    /// log-probabilities.
    pub fn step(&self, src: &SourceState, s_prev: &[f64], y_prev: TokenId) -> DecodeStep {
        let context = context_step(&self.mechanism, &src.proj, s_prev, &src.annotations, self.mode.output);
        let x = self.decoder.step_input(y_prev, &context.context);
        let gru = self.decoder.step_raw(s_prev, &x);
        let readout = self.decoder.readout(y_prev, &gru.h, &context.context);
        DecodeStep {
            y_prev,
            context,
            x,
            gru,
            readout,
        }
    }

    /// Teacher-forced forward pass keeping everything needed for backward.
    pub fn forward(&self, pair: &SentencePair) -> Result<PairTrace> {
        self.check_target(&pair.target)?;
        let src = self.start(&pair.source)?;
        let mut steps: Vec<DecodeStep> = Vec::with_capacity(pair.target.len());
        let mut loss = 0.0;
        for (j, &y) in pair.target.iter().enumerate() {
            let y_prev = if j == 0 { BOS } else { pair.target[j - 1] };
            let s_prev = steps.last().map_or(&src.s0[..], |s| &s.gru.h[..]);
            let step = self.step(&src, s_prev, y_prev);
            loss -= step.readout.log_probs[y];
            steps.push(step);
        }
        Ok(PairTrace { src, steps, loss })
    }

    /// Adds `scale * d loss / d theta` for one pair into `grads`.
    pub fn backward_pair(&self, pair: &SentencePair, trace: &PairTrace, scale: f64, grads: &mut ModelParams) -> Result<()> {
        let d_h = self.dims.d_h;
        let src = &trace.src;
        let n = src.annotations.len();
        let mut d_ann = Matrix::zeros(n, 2 * d_h);
        let mut d_proj = SourceGrad::zeros(&src.proj);
        let mut ds_next = vec![0.0; d_h];

        for j in (0..trace.steps.len()).rev() {
            let st = &trace.steps[j];
            let s_prev = if j == 0 { &src.s0[..] } else { &trace.steps[j - 1].gru.h[..] };
            let mut d_logits: Vector = st.readout.log_probs.iter().map(|lp| scale * lp.exp()).collect();
            d_logits[pair.target[j]] -= scale;

            let mut ds = ds_next;
            let mut d_ctx = vec![0.0; st.context.context.len()];
            self.decoder.readout_backward(
                st.y_prev,
                &st.gru.h,
                &st.context.context,
                &st.readout,
                &d_logits,
                &mut grads.decoder,
                &mut ds,
                &mut d_ctx,
            );
            let mut ds_prev = vec![0.0; d_h];
            self.decoder
                .step_backward(st.y_prev, &st.x, &st.gru, s_prev, &ds, &mut grads.decoder, &mut ds_prev, &mut d_ctx);
            context_step_backward(
                &self.mechanism,
                &st.context,
                s_prev,
                &src.annotations,
                self.mode.output,
                &d_ctx,
                &mut grads.mechanism,
                &mut ds_prev,
                &mut d_ann,
                &mut d_proj,
            )?;
            ds_next = ds_prev;
        }
        self.decoder
            .init_backward(&src.annotations, &src.s0, &ds_next, &mut grads.decoder, &mut d_ann);
        finish_source_backward(&self.mechanism, &src.annotations, &d_proj, &mut grads.mechanism, &mut d_ann);
        encode_backward(&self.encoder, &pair.source, &src.cache, &d_ann, &mut grads.encoder);
        Ok(())
    }

    /// Loss and gradient for a single pair.
    pub fn loss_and_grad(&self, pair: &SentencePair) -> Result<(f64, ModelParams)> {
        let trace = self.forward(pair)?;
        let mut g = self.zeros_like();
        self.backward_pair(pair, &trace, 1.0, &mut g)?;
        Ok((trace.loss, g))
    }
}

/// Encoder output and per-sentence projections for one source sentence.
#[derive(Debug, Clone)]
pub struct SourceState {
    pub annotations: Annotations,
    cache: EncoderCache,
    proj: SourceProjection,
    pub s0: Vector,
}

#[derive(Debug, Clone)]
pub struct DecodeStep {
    pub y_prev: TokenId,
    pub context: ContextOutput,
    x: Vector,
    gru: GruStep,
    pub readout: Readout,
}

impl DecodeStep {
    /// Decoder state `s_j` after this step.
    pub fn state(&self) -> &[f64] {
        &self.gru.h
    }
}

#[derive(Debug, Clone)]
pub struct PairTrace {
    pub src: SourceState,
    pub steps: Vec<DecodeStep>,
    pub loss: f64,
}

/// Negative log-likelihood of the target under teacher forcing, EOS included.
pub fn nll_loss(model: &ModelParams, pair: &SentencePair) -> Result<f64> {
    Ok(model.forward(pair)?.loss)
}

/// Gradient of the mean per-sentence loss over `batch`, plus that mean loss.
pub fn backward(model: &ModelParams, batch: &[SentencePair]) -> Result<(ModelParams, f64)> {
    backward_threaded(model, batch, 1)
}

/// Like [`backward`], splitting the batch over `threads` workers. Each worker
/// sums its contiguous chunk in order and chunk sums are added in chunk
/// order, so the result depends only on the inputs and `threads`.
pub fn backward_threaded(model: &ModelParams, batch: &[SentencePair], threads: usize) -> Result<(ModelParams, f64)> {
    if batch.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let run_chunk = |offset: usize, chunk: &[SentencePair]| -> Result<(ModelParams, f64)> {
        let mut g = model.zeros_like();
        let mut total = 0.0;
        for (k, pair) in chunk.iter().enumerate() {
            let trace = model.forward(pair)?;
            if !trace.loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss on batch pair {}", offset + k)));
            }
            total += trace.loss;
            model.backward_pair(pair, &trace, scale, &mut g)?;
        }
        Ok((g, total))
    };

    let threads = threads.clamp(1, batch.len());
    let (mut grads, total) = if threads == 1 {
        run_chunk(0, batch)?
    } else {
        let size = batch.len().div_ceil(threads);
        let results: Vec<Result<(ModelParams, f64)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .chunks(size)
                .enumerate()
                .map(|(c, chunk)| {
                    let run_chunk = &run_chunk;
                    scope.spawn(move || run_chunk(c * size, chunk))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        let mut iter = results.into_iter();
        let (mut g, mut total) = iter.next().expect("at least one chunk")?;
        for r in iter {
            let (gc, tc) = r?;
            for ((_, a), (_, b)) in g.tensors_mut().into_iter().zip(gc.tensors()) {
                a.add_scaled(1.0, b);
            }
            total += tc;
        }
        (g, total)
    };
    grads.mode = model.mode;
    Ok((grads, total * scale))
}

/// Gradient check of a freshly drawn model on one pair.
pub fn loss_and_grad_check(
    dims: Dims,
    mode: ContextMode,
    scale: f64,
    seed: u64,
    pair: &SentencePair,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let m = ModelParams::random_with_scale(dims, mode, scale, seed);
    let (_, g) = m.loss_and_grad(pair)?;
    let mut failure = None;
    let report = grad_check(
        &m,
        &g,
        |p| match nll_loss(p, pair) {
            Ok(l) => l,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        epsilon,
        tolerance,
    );
    match failure {
        Some(e) => Err(e),
        None => report,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EOS, UNK};

    fn pair() -> SentencePair {
        SentencePair::new(vec![4, 7, 5, 9], vec![6, 8, 4, 11])
    }

    #[test]
    fn bias_names() {
        assert!(is_bias("dec.gru.b_z"));
        assert!(is_bias("ctx.ctxr.b_0"));
        assert!(!is_bias("dec.embed"));
        assert!(!is_bias("ctx.attn.v_a"));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let dims = Dims::square(4, 5, 12, 13);
        let a = ModelParams::init(dims, ContextMode::LAST_STATE, 3);
        assert_eq!(a, ModelParams::init(dims, ContextMode::LAST_STATE, 3));
        assert_ne!(a, ModelParams::init(dims, ContextMode::LAST_STATE, 4));
        for (name, t) in a.tensors() {
            if is_bias(&name) {
                assert!(t.data().iter().all(|&x| x == 0.0), "{name}");
            } else {
                assert!(t.data().iter().all(|x| x.abs() <= INIT_SCALE), "{name}");
                assert!(t.data().iter().any(|&x| x != 0.0), "{name}");
            }
        }
    }

    #[test]
    fn zero_model_loss_is_uniform() {
        let dims = Dims::square(4, 5, 12, 13);
        for mode in [ContextMode::ATTENTION, ContextMode::MEAN_POOLING, ContextMode::LAST_STATE] {
            let m = ModelParams::zeros(dims, mode);
            let loss = nll_loss(&m, &pair()).unwrap();
            assert_eq!(loss, 5.0 * 13f64.ln());
        }
    }

    #[test]
    fn loss_is_sum_of_step_log_probs() {
        let dims = Dims::square(4, 5, 12, 13);
        let m = ModelParams::random_with_scale(dims, ContextMode::MEAN_POOLING, 0.5, 1);
        let p = pair();
        // Compose the loss from the public per-step operations.
        let h = crate::encoder::encode(&m.encoder, &p.source).unwrap();
        let mut s = crate::decoder::init_decoder_state(&m.decoder, &h).unwrap();
        let MechanismParams::Contexter(c) = &m.mechanism else { unreachable!() };
        let mut expect = 0.0;
        let mut y_prev = BOS;
        for &y in &p.target {
            let ctx = crate::context::contexter_context(c, &s.s, &h, m.mode).unwrap().context;
            s = crate::decoder::decoder_step(&m.decoder, &s, y_prev, &ctx).unwrap();
            let lp = crate::decoder::output_distribution(&m.decoder, y_prev, &s, &ctx).unwrap();
            expect -= lp[y];
            y_prev = y;
        }
        let loss = nll_loss(&m, &p).unwrap();
        assert!((loss - expect).abs() < 1e-12);
        assert!(loss >= 0.0);
    }

    #[test]
    fn duplicated_pair_matches_single() {
        let dims = Dims::square(4, 5, 12, 13);
        let m = ModelParams::random_with_scale(dims, ContextMode::ATTENTION, 0.3, 2);
        let (g1, l1) = backward(&m, &[pair()]).unwrap();
        let (g2, l2) = backward(&m, &[pair(), pair()]).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for ((_, a), (_, b)) in g1.tensors().into_iter().zip(g2.tensors()) {
            assert!(a.max_abs_diff(b) < 1e-12);
        }
        assert!(g1.global_norm() > 0.0);
    }

    #[test]
    fn threaded_backward_agrees() {
        let dims = Dims::square(4, 5, 12, 13);
        let m = ModelParams::random_with_scale(dims, ContextMode::LAST_STATE, 0.3, 3);
        let batch = vec![
            pair(),
            SentencePair::new(vec![5, 5], vec![7]),
            SentencePair::new(vec![9, UNK, 4], vec![4, 4, 6]),
        ];
        let (g1, l1) = backward(&m, &batch).unwrap();
        let (g3, l3) = backward_threaded(&m, &batch, 3).unwrap();
        assert!((l1 - l3).abs() < 1e-12);
        for ((_, a), (_, b)) in g1.tensors().into_iter().zip(g3.tensors()) {
            assert!(a.max_abs_diff(b) < 1e-12);
        }
        assert_eq!(backward_threaded(&m, &batch, 3).unwrap().0, g3);
    }

    fn check_full_model(mode: ContextMode, source: Vec<TokenId>) {
        let dims = Dims::square(8, 12, 20, 20);
        let p = SentencePair::new(source, vec![10, 11, 12, 13, 14]);
        let report = loss_and_grad_check(dims, mode, GRADCHECK_SCALE, 0, &p, 1e-5, 1e-4).unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn full_model_gradients_attention() {
        check_full_model(ContextMode::ATTENTION, vec![4, 5, 6, 7, 8]);
    }

    #[test]
    fn full_model_gradients_mean_pooling() {
        check_full_model(ContextMode::MEAN_POOLING, vec![4, 5, 6, 7, 8]);
    }

    #[test]
    fn full_model_gradients_last_state() {
        check_full_model(ContextMode::LAST_STATE, vec![4, 5, 6, 7, 8]);
    }

    #[test]
    fn full_model_gradients_single_token_source() {
        check_full_model(ContextMode::LAST_STATE, vec![9]);
    }

    #[test]
    fn bad_inputs() {
        let dims = Dims::square(4, 5, 12, 13);
        let m = ModelParams::zeros(dims, ContextMode::ATTENTION);
        assert!(backward(&m, &[]).is_err());
        assert!(nll_loss(&m, &SentencePair { source: vec![4], target: vec![] }).is_err());
        assert!(nll_loss(&m, &SentencePair { source: vec![4], target: vec![99, EOS] }).is_err());
        assert!(nll_loss(&m, &SentencePair { source: vec![], target: vec![EOS] }).is_err());
    }
}
