//! The encoder-decoder model: parameter layout, forward passes with caches,
//! and the full hand-written backward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{Checkpoint, CheckpointScalar};
use crate::nncore::{
    add_in_place, axpy, dot, matvec, outer_acc, softmax_in_place, tmatvec_acc, CellKind, Linear,
    Parameter, Real, RecurrentCell, StepCache, Tensor,
};

use super::Seq2seqConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionKind {
    /// score(q, h) = q^T W h
    GeneralDot,
    /// score(q, h) = v^T tanh(W_s q + W_h h + b)
    Additive,
}

/// Attention parameters for either scorer.
#[derive(Debug, Clone)]
enum Attention<F> {
    General {
        w: Parameter<F>,
    },
    Additive {
        w_s: Parameter<F>,
        w_h: Parameter<F>,
        b: Parameter<F>,
        v: Parameter<F>,
    },
}

/// Encoder forward results plus everything backprop needs.
pub struct EncoderStates<F> {
    pub tokens: Vec<usize>,
    /// Top-layer state per timestep (hidden, or fwd|bwd concatenation).
    pub top: Vec<Vec<F>>,
    outs_fwd: Vec<Vec<Vec<F>>>,
    outs_bwd: Vec<Vec<Vec<F>>>,
    caches_fwd: Vec<Vec<StepCache<F>>>,
    caches_bwd: Vec<Vec<StepCache<F>>>,
    finals_c_fwd: Vec<Vec<F>>,
    finals_c_bwd: Vec<Vec<F>>,
}

impl<F: Real> EncoderStates<F> {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn final_h_fwd(&self, layer: usize) -> &[F] {
        self.outs_fwd[layer].last().unwrap()
    }

    fn final_h_bwd(&self, layer: usize) -> &[F] {
        &self.outs_bwd[layer][0]
    }
}

/// One attention application: scores, weights, and the context vector.
#[derive(Debug, Clone)]
pub struct AttentionStep<F> {
    pub scores: Vec<F>,
    pub weights: Vec<F>,
    pub context: Vec<F>,
    /// Additive scorer: W_s q, reused by the backward pass.
    ws_q: Vec<F>,
}

struct DecoderTrace<F> {
    dec_tokens: Vec<usize>,
    /// Per-layer, per-step caches.
    caches: Vec<Vec<StepCache<F>>>,
    /// Top-layer hidden per step (input of the output projection).
    hs_top: Vec<Vec<F>>,
    att: Vec<AttentionStep<F>>,
    queries: Vec<Vec<F>>,
    /// Bridge inputs per layer (bidirectional only).
    init_inputs_h: Vec<Vec<F>>,
    init_inputs_c: Vec<Vec<F>>,
    pub logits: Vec<Vec<F>>,
}

/// Incremental decoding state for step-by-step inference.
pub struct DecoderState<F> {
    h: Vec<Vec<F>>,
    c: Vec<Vec<F>>,
    pre: Vec<Vec<F>>,
}

#[derive(Clone)]
pub struct Seq2seqModel<F> {
    pub cfg: Seq2seqConfig,
    pub vocab_size: usize,
    emb: Parameter<F>,
    enc_fwd: Vec<RecurrentCell<F>>,
    enc_bwd: Vec<RecurrentCell<F>>,
    dec: Vec<RecurrentCell<F>>,
    att: Attention<F>,
    bridge_h: Vec<Linear<F>>,
    bridge_c: Vec<Linear<F>>,
    out: Linear<F>,
}

impl<F: Real> Seq2seqModel<F> {
    pub fn new(cfg: &Seq2seqConfig, vocab_size: usize) -> Result<Self> {
        if cfg.layers == 0 || cfg.hidden == 0 {
            return Err(Error::config("layers and hidden size must be positive"));
        }
        if vocab_size == 0 {
            return Err(Error::data("empty vocabulary"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let k = cfg.hidden;
        let e = k;
        let ed = if cfg.bidirectional { 2 * k } else { k };

        let mut emb = Parameter::zeros(&[vocab_size, e]);
        emb.value.init_uniform(e, &mut rng);

        let enc_in = |l: usize| if l == 0 { e } else { ed };
        let enc_fwd: Vec<_> = (0..cfg.layers)
            .map(|l| RecurrentCell::new(cfg.cell, enc_in(l), k, &mut rng))
            .collect();
        let enc_bwd: Vec<_> = if cfg.bidirectional {
            (0..cfg.layers)
                .map(|l| RecurrentCell::new(cfg.cell, enc_in(l), k, &mut rng))
                .collect()
        } else {
            Vec::new()
        };
        let dec: Vec<_> = (0..cfg.layers)
            .map(|l| {
                let input = if l == 0 { e + ed } else { k };
                RecurrentCell::new(cfg.cell, input, k, &mut rng)
            })
            .collect();

        let att = match cfg.attention {
            AttentionKind::GeneralDot => {
                let mut w = Parameter::zeros(&[k, ed]);
                w.value.init_uniform(ed, &mut rng);
                Attention::General { w }
            }
            AttentionKind::Additive => {
                let a = k;
                let mut w_s = Parameter::zeros(&[a, k]);
                let mut w_h = Parameter::zeros(&[a, ed]);
                let mut v = Parameter::zeros(&[a]);
                w_s.value.init_uniform(k, &mut rng);
                w_h.value.init_uniform(ed, &mut rng);
                v.value.init_uniform(a, &mut rng);
                Attention::Additive {
                    w_s,
                    w_h,
                    b: Parameter::zeros(&[a]),
                    v,
                }
            }
        };

        let (bridge_h, bridge_c) = if cfg.bidirectional {
            let bh = (0..cfg.layers)
                .map(|_| Linear::new(2 * k, k, &mut rng))
                .collect();
            let bc = if cfg.cell == CellKind::Lstm {
                (0..cfg.layers)
                    .map(|_| Linear::new(2 * k, k, &mut rng))
                    .collect()
            } else {
                Vec::new()
            };
            (bh, bc)
        } else {
            (Vec::new(), Vec::new())
        };

        let out = Linear::new(k, vocab_size, &mut rng);
        Ok(Seq2seqModel {
            cfg: cfg.clone(),
            vocab_size,
            emb,
            enc_fwd,
            enc_bwd,
            dec,
            att,
            bridge_h,
            bridge_c,
            out,
        })
    }

    pub fn encoder_dim(&self) -> usize {
        if self.cfg.bidirectional {
            2 * self.cfg.hidden
        } else {
            self.cfg.hidden
        }
    }

    /// Fixed-length embedding dimension (k, or 2k for bidirectional).
    pub fn embedding_dim(&self) -> usize {
        self.encoder_dim()
    }

    /// Named parameters in a stable order.
    pub fn named_params(&self) -> Vec<(String, &Parameter<F>)> {
        let mut out: Vec<(String, &Parameter<F>)> = vec![("emb".into(), &self.emb)];
        for (prefix, cells) in [
            ("enc_fwd", &self.enc_fwd),
            ("enc_bwd", &self.enc_bwd),
            ("dec", &self.dec),
        ] {
            for (l, c) in cells.iter().enumerate() {
                out.push((format!("{}.{}.w_x", prefix, l), &c.w_x));
                out.push((format!("{}.{}.w_h", prefix, l), &c.w_h));
                out.push((format!("{}.{}.bias", prefix, l), &c.bias));
            }
        }
        match &self.att {
            Attention::General { w } => out.push(("att.w".into(), w)),
            Attention::Additive { w_s, w_h, b, v } => {
                out.push(("att.w_s".into(), w_s));
                out.push(("att.w_h".into(), w_h));
                out.push(("att.b".into(), b));
                out.push(("att.v".into(), v));
            }
        }
        for (l, lin) in self.bridge_h.iter().enumerate() {
            out.push((format!("bridge_h.{}.w", l), &lin.w));
            out.push((format!("bridge_h.{}.b", l), &lin.b));
        }
        for (l, lin) in self.bridge_c.iter().enumerate() {
            out.push((format!("bridge_c.{}.w", l), &lin.w));
            out.push((format!("bridge_c.{}.b", l), &lin.b));
        }
        out.push(("out.w".into(), &self.out.w));
        out.push(("out.b".into(), &self.out.b));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut out: Vec<&mut Parameter<F>> = vec![&mut self.emb];
        for c in self
            .enc_fwd
            .iter_mut()
            .chain(self.enc_bwd.iter_mut())
            .chain(self.dec.iter_mut())
        {
            out.push(&mut c.w_x);
            out.push(&mut c.w_h);
            out.push(&mut c.bias);
        }
        match &mut self.att {
            Attention::General { w } => out.push(w),
            Attention::Additive { w_s, w_h, b, v } => {
                out.push(w_s);
                out.push(w_h);
                out.push(b);
                out.push(v);
            }
        }
        for lin in self.bridge_h.iter_mut().chain(self.bridge_c.iter_mut()) {
            out.push(&mut lin.w);
            out.push(&mut lin.b);
        }
        out.push(&mut self.out.w);
        out.push(&mut self.out.b);
        out
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Moves the accumulated gradients out, leaving zeros behind.
    pub fn take_grads(&mut self) -> Vec<Tensor<F>> {
        self.params_mut()
            .into_iter()
            .map(|p| {
                let shape = p.grad.shape().to_vec();
                std::mem::replace(&mut p.grad, Tensor::zeros(&shape))
            })
            .collect()
    }

    pub fn add_grads(&mut self, grads: &[Tensor<F>]) {
        let params = self.params_mut();
        assert_eq!(params.len(), grads.len());
        for (p, g) in params.into_iter().zip(grads) {
            add_in_place(p.grad.data_mut(), g.data());
        }
    }

    // ------------------------------------------------------------------
    // Encoder
    // ------------------------------------------------------------------

    pub fn encode(&self, tokens: &[usize]) -> Result<EncoderStates<F>> {
        if tokens.is_empty() {
            return Err(Error::data("cannot encode an empty playlist"));
        }
        for &t in tokens {
            if t >= self.vocab_size {
                return Err(Error::data(format!("token {} out of vocabulary", t)));
            }
        }
        let t_len = tokens.len();
        let layers = self.cfg.layers;
        let bi = self.cfg.bidirectional;

        let mut layer_in: Vec<Vec<F>> = tokens
            .iter()
            .map(|&t| self.emb.value.row(t).to_vec())
            .collect();

        let mut outs_fwd = Vec::with_capacity(layers);
        let mut outs_bwd = Vec::with_capacity(layers);
        let mut caches_fwd = Vec::with_capacity(layers);
        let mut caches_bwd = Vec::with_capacity(layers);
        let mut finals_c_fwd = Vec::with_capacity(layers);
        let mut finals_c_bwd = Vec::with_capacity(layers);

        for l in 0..layers {
            let cell = &self.enc_fwd[l];
            let (mut h, mut c) = cell.zero_state();
            let mut outs = Vec::with_capacity(t_len);
            let mut caches = Vec::with_capacity(t_len);
            for x in layer_in.iter() {
                let (h2, c2, cache) = cell.step(x, &h, &c);
                outs.push(h2.clone());
                caches.push(cache);
                h = h2;
                c = c2;
            }
            finals_c_fwd.push(c);

            if bi {
                let bcell = &self.enc_bwd[l];
                let (mut h, mut c) = bcell.zero_state();
                let mut bouts = vec![Vec::new(); t_len];
                let mut bcaches: Vec<Option<StepCache<F>>> = (0..t_len).map(|_| None).collect();
                for t in (0..t_len).rev() {
                    let (h2, c2, cache) = bcell.step(&layer_in[t], &h, &c);
                    bouts[t] = h2.clone();
                    bcaches[t] = Some(cache);
                    h = h2;
                    c = c2;
                }
                finals_c_bwd.push(c);
                let bcaches: Vec<StepCache<F>> =
                    bcaches.into_iter().map(|c| c.unwrap()).collect();
                layer_in = (0..t_len)
                    .map(|t| {
                        let mut v = outs[t].clone();
                        v.extend_from_slice(&bouts[t]);
                        v
                    })
                    .collect();
                outs_bwd.push(bouts);
                caches_bwd.push(bcaches);
            } else {
                layer_in = outs.clone();
            }
            outs_fwd.push(outs);
            caches_fwd.push(caches);
        }

        Ok(EncoderStates {
            tokens: tokens.to_vec(),
            top: layer_in,
            outs_fwd,
            outs_bwd,
            caches_fwd,
            caches_bwd,
            finals_c_fwd,
            finals_c_bwd,
        })
    }

    /// The fixed-length playlist vector: top-layer final state, with the
    /// forward and backward finals concatenated for bidirectional encoders.
    pub fn extract_embedding(&self, enc: &EncoderStates<F>) -> Vec<F> {
        let l = self.cfg.layers - 1;
        let mut v = enc.final_h_fwd(l).to_vec();
        if self.cfg.bidirectional {
            v.extend_from_slice(enc.final_h_bwd(l));
        }
        v
    }

    // ------------------------------------------------------------------
    // Attention
    // ------------------------------------------------------------------

    /// Per-sequence precomputation: W h_j (general) or W_h h_j + b (additive).
    fn att_precompute(&self, top: &[Vec<F>]) -> Vec<Vec<F>> {
        match &self.att {
            Attention::General { w } => top
                .iter()
                .map(|h| {
                    let mut out = vec![F::zero(); w.value.rows()];
                    matvec(&w.value, h, &mut out);
                    out
                })
                .collect(),
            Attention::Additive { w_h, b, .. } => top
                .iter()
                .map(|h| {
                    let mut out = b.value.data().to_vec();
                    crate::nncore::matvec_acc(&w_h.value, h, &mut out);
                    out
                })
                .collect(),
        }
    }

    /// Scores the query against every encoder state and returns the softmax
    /// weights and context vector.
    pub fn attend(&self, query: &[F], pre: &[Vec<F>], top: &[Vec<F>]) -> AttentionStep<F> {
        let t_len = top.len();
        let mut scores = vec![F::zero(); t_len];
        let mut ws_q = Vec::new();
        match &self.att {
            Attention::General { .. } => {
                for j in 0..t_len {
                    scores[j] = dot(query, &pre[j]);
                }
            }
            Attention::Additive { w_s, v, .. } => {
                ws_q = vec![F::zero(); w_s.value.rows()];
                matvec(&w_s.value, query, &mut ws_q);
                for j in 0..t_len {
                    let s: F = ws_q
                        .iter()
                        .zip(&pre[j])
                        .zip(v.value.data())
                        .map(|((a, b), vi)| (*a + *b).tanh() * *vi)
                        .sum();
                    scores[j] = s;
                }
            }
        }
        let mut weights = scores.clone();
        softmax_in_place(&mut weights);
        let ed = top[0].len();
        let mut context = vec![F::zero(); ed];
        for j in 0..t_len {
            axpy(weights[j], &top[j], &mut context);
        }
        AttentionStep {
            scores,
            weights,
            context,
            ws_q,
        }
    }

    /// Backward through one attention step. Adds into the per-timestep
    /// encoder-state gradients and returns the query gradient.
    fn attend_backward(
        &mut self,
        query: &[F],
        step: &AttentionStep<F>,
        pre: &[Vec<F>],
        top: &[Vec<F>],
        dctx: &[F],
        denc_top: &mut [Vec<F>],
    ) -> Vec<F> {
        let t_len = top.len();
        let alpha = &step.weights;
        // d(context) -> d(alpha) and direct dh.
        let mut dalpha = vec![F::zero(); t_len];
        for j in 0..t_len {
            dalpha[j] = dot(dctx, &top[j]);
            axpy(alpha[j], dctx, &mut denc_top[j]);
        }
        // Softmax backward.
        let inner: F = (0..t_len).map(|j| alpha[j] * dalpha[j]).sum();
        let de: Vec<F> = (0..t_len).map(|j| alpha[j] * (dalpha[j] - inner)).collect();

        let mut dq = vec![F::zero(); query.len()];
        match &mut self.att {
            Attention::General { w } => {
                // e_j = q^T W h_j
                let mut wtq = vec![F::zero(); w.value.cols()];
                tmatvec_acc(&w.value, query, &mut wtq);
                for j in 0..t_len {
                    axpy(de[j], &pre[j], &mut dq);
                    axpy(de[j], &wtq, &mut denc_top[j]);
                    // dW += de_j * q h_j^T
                    let scaled_q: Vec<F> = query.iter().map(|x| *x * de[j]).collect();
                    outer_acc(&mut w.grad, &scaled_q, &top[j]);
                }
            }
            Attention::Additive { w_s, w_h, b, v } => {
                let a_dim = v.value.len();
                let mut acc_dt = vec![F::zero(); a_dim];
                for j in 0..t_len {
                    // Recompute t_j = tanh(ws_q + pre_j).
                    let mut dt = vec![F::zero(); a_dim];
                    for i in 0..a_dim {
                        let t = (step.ws_q[i] + pre[j][i]).tanh();
                        v.grad.data_mut()[i] = v.grad.data()[i] + de[j] * t;
                        dt[i] = de[j] * v.value.data()[i] * (F::one() - t * t);
                    }
                    add_in_place(&mut acc_dt, &dt);
                    outer_acc(&mut w_h.grad, &dt, &top[j]);
                    tmatvec_acc(&w_h.value, &dt, &mut denc_top[j]);
                }
                outer_acc(&mut w_s.grad, &acc_dt, query);
                add_in_place(b.grad.data_mut(), &acc_dt);
                tmatvec_acc(&w_s.value, &acc_dt, &mut dq);
            }
        }
        dq
    }

    // ------------------------------------------------------------------
    // Decoder
    // ------------------------------------------------------------------

    /// Initial decoder states per layer: encoder finals (unidirectional) or
    /// a learned linear merge of forward/backward finals (bidirectional).
    /// Also returns the bridge inputs for backprop.
    fn decoder_init(
        &self,
        enc: &EncoderStates<F>,
    ) -> (Vec<Vec<F>>, Vec<Vec<F>>, Vec<Vec<F>>, Vec<Vec<F>>) {
        let layers = self.cfg.layers;
        let lstm = self.cfg.cell == CellKind::Lstm;
        let mut h0 = Vec::with_capacity(layers);
        let mut c0 = Vec::with_capacity(layers);
        let mut in_h = Vec::new();
        let mut in_c = Vec::new();
        for l in 0..layers {
            if self.cfg.bidirectional {
                let mut hin = enc.final_h_fwd(l).to_vec();
                hin.extend_from_slice(enc.final_h_bwd(l));
                h0.push(self.bridge_h[l].forward(&hin));
                in_h.push(hin);
                if lstm {
                    let mut cin = enc.finals_c_fwd[l].clone();
                    cin.extend_from_slice(&enc.finals_c_bwd[l]);
                    c0.push(self.bridge_c[l].forward(&cin));
                    in_c.push(cin);
                } else {
                    c0.push(Vec::new());
                }
            } else {
                h0.push(enc.final_h_fwd(l).to_vec());
                c0.push(if lstm {
                    enc.finals_c_fwd[l].clone()
                } else {
                    Vec::new()
                });
            }
        }
        (h0, c0, in_h, in_c)
    }

    /// Starts incremental decoding against an encoded playlist.
    pub fn start_decoder(&self, enc: &EncoderStates<F>) -> DecoderState<F> {
        let (h, c, _, _) = self.decoder_init(enc);
        DecoderState {
            h,
            c,
            pre: self.att_precompute(&enc.top),
        }
    }

    /// One inference step: context from the previous top state, cell stack
    /// update, and the output distribution (softmax over the vocabulary).
    pub fn decode_step(
        &self,
        prev_token: usize,
        state: &mut DecoderState<F>,
        enc: &EncoderStates<F>,
    ) -> Result<(Vec<F>, AttentionStep<F>)> {
        if prev_token >= self.vocab_size {
            return Err(Error::data(format!("token {} out of vocabulary", prev_token)));
        }
        let layers = self.cfg.layers;
        let query = state.h[layers - 1].clone();
        let att = self.attend(&query, &state.pre, &enc.top);
        let mut x: Vec<F> = self.emb.value.row(prev_token).to_vec();
        x.extend_from_slice(&att.context);
        for l in 0..layers {
            let (h2, c2, _) = self.dec[l].step(&x, &state.h[l], &state.c[l]);
            x = h2.clone();
            state.h[l] = h2;
            state.c[l] = c2;
        }
        let mut probs = self.out.forward(&x);
        softmax_in_place(&mut probs);
        Ok((probs, att))
    }

    /// Teacher-forced pass: decoder inputs are BOS + tokens, producing
    /// len(tokens)+1 logit vectors.
    fn decode_teacher_forced(
        &self,
        enc: &EncoderStates<F>,
        dec_tokens: &[usize],
    ) -> DecoderTrace<F> {
        let layers = self.cfg.layers;
        let (mut h, mut c, init_inputs_h, init_inputs_c) = self.decoder_init(enc);
        let pre = self.att_precompute(&enc.top);
        let steps = dec_tokens.len();

        let mut caches: Vec<Vec<StepCache<F>>> = (0..layers).map(|_| Vec::new()).collect();
        let mut hs_top = Vec::with_capacity(steps);
        let mut att_steps = Vec::with_capacity(steps);
        let mut queries = Vec::with_capacity(steps);
        let mut logits = Vec::with_capacity(steps);

        for &tok in dec_tokens {
            let query = h[layers - 1].clone();
            let att = self.attend(&query, &pre, &enc.top);
            let mut x: Vec<F> = self.emb.value.row(tok).to_vec();
            x.extend_from_slice(&att.context);
            for l in 0..layers {
                let (h2, c2, cache) = self.dec[l].step(&x, &h[l], &c[l]);
                caches[l].push(cache);
                x = h2.clone();
                h[l] = h2;
                c[l] = c2;
            }
            hs_top.push(x.clone());
            logits.push(self.out.forward(&x));
            att_steps.push(att);
            queries.push(query);
        }

        DecoderTrace {
            dec_tokens: dec_tokens.to_vec(),
            caches,
            hs_top,
            att: att_steps,
            queries,
            init_inputs_h,
            init_inputs_c,
            logits,
        }
    }

    /// Full backward pass given d(loss)/d(logits) per decoder step.
    /// Accumulates into every parameter's gradient buffer.
    fn backward(
        &mut self,
        enc: &EncoderStates<F>,
        trace: &DecoderTrace<F>,
        dlogits: &[Vec<F>],
    ) {
        let layers = self.cfg.layers;
        let k = self.cfg.hidden;
        let e = k;
        let ed = self.encoder_dim();
        let t_len = enc.len();
        let steps = trace.dec_tokens.len();
        let lstm = self.cfg.cell == CellKind::Lstm;
        let pre = self.att_precompute(&enc.top);

        let mut denc_top: Vec<Vec<F>> = (0..t_len).map(|_| vec![F::zero(); ed]).collect();
        let mut dh_rec: Vec<Vec<F>> = (0..layers).map(|_| vec![F::zero(); k]).collect();
        let mut dc_rec: Vec<Vec<F>> = (0..layers)
            .map(|_| if lstm { vec![F::zero(); k] } else { Vec::new() })
            .collect();
        let mut d_init_h: Vec<Vec<F>> = (0..layers).map(|_| vec![F::zero(); k]).collect();
        let mut pending_dq: Option<Vec<F>> = None;

        for i in (0..steps).rev() {
            // Output projection.
            let mut dtop = vec![F::zero(); k];
            self.out
                .backward(&trace.hs_top[i], &dlogits[i], Some(&mut dtop));
            if let Some(dq) = pending_dq.take() {
                add_in_place(&mut dtop, &dq);
            }

            // Cell stack, top to bottom.
            let mut dx_above: Option<Vec<F>> = None;
            for l in (0..layers).rev() {
                let mut dh = dh_rec[l].clone();
                if l == layers - 1 {
                    add_in_place(&mut dh, &dtop);
                }
                if let Some(dx) = &dx_above {
                    add_in_place(&mut dh, dx);
                }
                let (dx, dh_prev, dc_prev) =
                    self.dec[l].step_backward(&trace.caches[l][i], &dh, &dc_rec[l]);
                dh_rec[l] = dh_prev;
                dc_rec[l] = dc_prev;
                if l > 0 {
                    dx_above = Some(dx);
                } else {
                    // Split the layer-0 input gradient: embedding | context.
                    let tok = trace.dec_tokens[i];
                    let emb_rows = self.emb.grad.row_mut(tok);
                    add_in_place(emb_rows, &dx[..e]);
                    let dctx = &dx[e..];
                    let dq = self.attend_backward(
                        &trace.queries[i],
                        &trace.att[i],
                        &pre,
                        &enc.top,
                        dctx,
                        &mut denc_top,
                    );
                    if i > 0 {
                        pending_dq = Some(dq);
                    } else {
                        add_in_place(&mut d_init_h[layers - 1], &dq);
                    }
                    dx_above = None;
                }
            }
        }

        // Remaining recurrent gradients hit the decoder initial states.
        for l in 0..layers {
            add_in_place(&mut d_init_h[l], &dh_rec[l]);
        }
        let d_init_c = dc_rec;

        // Route initial-state gradients to the encoder finals.
        let mut d_fin_h_fwd: Vec<Vec<F>> = (0..layers).map(|_| vec![F::zero(); k]).collect();
        let mut d_fin_h_bwd: Vec<Vec<F>> = (0..layers).map(|_| vec![F::zero(); k]).collect();
        let mut d_fin_c_fwd: Vec<Vec<F>> = (0..layers)
            .map(|_| if lstm { vec![F::zero(); k] } else { Vec::new() })
            .collect();
        let mut d_fin_c_bwd = d_fin_c_fwd.clone();

        if self.cfg.bidirectional {
            for l in 0..layers {
                let mut din = vec![F::zero(); 2 * k];
                self.bridge_h[l].backward(&trace.init_inputs_h[l], &d_init_h[l], Some(&mut din));
                add_in_place(&mut d_fin_h_fwd[l], &din[..k]);
                add_in_place(&mut d_fin_h_bwd[l], &din[k..]);
                if lstm {
                    let mut din = vec![F::zero(); 2 * k];
                    self.bridge_c[l].backward(
                        &trace.init_inputs_c[l],
                        &d_init_c[l],
                        Some(&mut din),
                    );
                    add_in_place(&mut d_fin_c_fwd[l], &din[..k]);
                    add_in_place(&mut d_fin_c_bwd[l], &din[k..]);
                }
            }
        } else {
            for l in 0..layers {
                add_in_place(&mut d_fin_h_fwd[l], &d_init_h[l]);
                if lstm {
                    add_in_place(&mut d_fin_c_fwd[l], &d_init_c[l]);
                }
            }
        }

        self.encoder_backward(
            enc,
            denc_top,
            d_fin_h_fwd,
            d_fin_c_fwd,
            d_fin_h_bwd,
            d_fin_c_bwd,
        );
    }

    /// Layer-wise BPTT through the encoder stack given gradients on the
    /// top-layer timestep states and on the per-layer final states.
    fn encoder_backward(
        &mut self,
        enc: &EncoderStates<F>,
        denc_top: Vec<Vec<F>>,
        d_fin_h_fwd: Vec<Vec<F>>,
        d_fin_c_fwd: Vec<Vec<F>>,
        d_fin_h_bwd: Vec<Vec<F>>,
        d_fin_c_bwd: Vec<Vec<F>>,
    ) {
        let layers = self.cfg.layers;
        let k = self.cfg.hidden;
        let e = k;
        let t_len = enc.len();
        let bi = self.cfg.bidirectional;
        let lstm = self.cfg.cell == CellKind::Lstm;

        // Current gradient on each direction's output at each timestep.
        let mut d_out_fwd: Vec<Vec<F>>;
        let mut d_out_bwd: Vec<Vec<F>>;
        if bi {
            d_out_fwd = denc_top.iter().map(|d| d[..k].to_vec()).collect();
            d_out_bwd = denc_top.iter().map(|d| d[k..].to_vec()).collect();
        } else {
            d_out_fwd = denc_top;
            d_out_bwd = Vec::new();
        }

        for l in (0..layers).rev() {
            let in_dim = if l == 0 {
                e
            } else if bi {
                2 * k
            } else {
                k
            };
            let mut d_in: Vec<Vec<F>> = (0..t_len).map(|_| vec![F::zero(); in_dim]).collect();

            // Forward-direction BPTT (t descending).
            {
                let mut dh_rec = vec![F::zero(); k];
                let mut dc_rec = if lstm { vec![F::zero(); k] } else { Vec::new() };
                for t in (0..t_len).rev() {
                    let mut dh = d_out_fwd[t].clone();
                    add_in_place(&mut dh, &dh_rec);
                    if t == t_len - 1 {
                        add_in_place(&mut dh, &d_fin_h_fwd[l]);
                        if lstm {
                            add_in_place(&mut dc_rec, &d_fin_c_fwd[l]);
                        }
                    }
                    let (dx, dh_prev, dc_prev) =
                        self.enc_fwd[l].step_backward(&enc.caches_fwd[l][t], &dh, &dc_rec);
                    add_in_place(&mut d_in[t], &dx);
                    dh_rec = dh_prev;
                    dc_rec = dc_prev;
                }
            }

            // Backward-direction BPTT (t ascending: the reverse of its
            // processing order).
            if bi {
                let mut dh_rec = vec![F::zero(); k];
                let mut dc_rec = if lstm { vec![F::zero(); k] } else { Vec::new() };
                for t in 0..t_len {
                    let mut dh = d_out_bwd[t].clone();
                    add_in_place(&mut dh, &dh_rec);
                    if t == 0 {
                        add_in_place(&mut dh, &d_fin_h_bwd[l]);
                        if lstm {
                            add_in_place(&mut dc_rec, &d_fin_c_bwd[l]);
                        }
                    }
                    let (dx, dh_prev, dc_prev) =
                        self.enc_bwd[l].step_backward(&enc.caches_bwd[l][t], &dh, &dc_rec);
                    add_in_place(&mut d_in[t], &dx);
                    dh_rec = dh_prev;
                    dc_rec = dc_prev;
                }
            }

            if l == 0 {
                for (t, d) in d_in.iter().enumerate() {
                    let row = self.emb.grad.row_mut(enc.tokens[t]);
                    add_in_place(row, d);
                }
            } else if bi {
                d_out_fwd = d_in.iter().map(|d| d[..k].to_vec()).collect();
                d_out_bwd = d_in.iter().map(|d| d[k..].to_vec()).collect();
            } else {
                d_out_fwd = d_in;
            }
        }
    }

    /// Teacher-forced forward/backward for one sequence. Returns the summed
    /// token NLL, the number of target tokens, and how many argmax
    /// predictions matched. `loss_scale` multiplies the gradient (use
    /// 1/total_batch_tokens for mean-per-token batches).
    pub fn train_step(
        &mut self,
        tokens: &[usize],
        bos: usize,
        eos: usize,
        loss_scale: F,
    ) -> Result<(f64, usize, usize)> {
        let enc = self.encode(tokens)?;
        let mut dec_tokens = Vec::with_capacity(tokens.len() + 1);
        dec_tokens.push(bos);
        dec_tokens.extend_from_slice(tokens);
        let mut targets = Vec::with_capacity(tokens.len() + 1);
        targets.extend_from_slice(tokens);
        targets.push(eos);

        let trace = self.decode_teacher_forced(&enc, &dec_tokens);
        let mut nll = 0.0f64;
        let mut correct = 0usize;
        let mut dlogits = Vec::with_capacity(targets.len());
        for (logits, &target) in trace.logits.iter().zip(&targets) {
            let (loss, mut grad) = crate::nncore::softmax_cross_entropy(logits, target)?;
            nll += loss.to_f64().unwrap();
            let argmax = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                .map(|(i, _)| i)
                .unwrap();
            if argmax == target {
                correct += 1;
            }
            for g in &mut grad {
                *g = *g * loss_scale;
            }
            dlogits.push(grad);
        }
        self.backward(&enc, &trace, &dlogits);
        Ok((nll, targets.len(), correct))
    }

    /// Teacher-forced NLL without gradients.
    pub fn sequence_nll(&self, tokens: &[usize], bos: usize, eos: usize) -> Result<(f64, usize)> {
        let enc = self.encode(tokens)?;
        let mut dec_tokens = Vec::with_capacity(tokens.len() + 1);
        dec_tokens.push(bos);
        dec_tokens.extend_from_slice(tokens);
        let trace = self.decode_teacher_forced(&enc, &dec_tokens);
        let mut targets = tokens.to_vec();
        targets.push(eos);
        let mut nll = 0.0f64;
        for (logits, &target) in trace.logits.iter().zip(&targets) {
            nll += crate::nncore::softmax_nll(logits, target).to_f64().unwrap();
        }
        Ok((nll, targets.len()))
    }

    // ------------------------------------------------------------------
    // Serialization
    // ------------------------------------------------------------------

    pub fn to_checkpoint(&self, extra_meta: serde_json::Value) -> Checkpoint
    where
        F: CheckpointScalar,
    {
        let meta = serde_json::json!({
            "kind": "seq2seq",
            "config": self.cfg,
            "vocab_size": self.vocab_size,
            "extra": extra_meta,
        });
        let mut ck = Checkpoint::new(meta.to_string());
        for (name, p) in self.named_params() {
            ck.push(name, &p.value);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, serde_json::Value)>
    where
        F: CheckpointScalar,
    {
        let meta: serde_json::Value = serde_json::from_str(&ck.meta)
            .map_err(|e| Error::format(format!("seq2seq meta: {}", e)))?;
        if meta["kind"] != "seq2seq" {
            return Err(Error::format("not a seq2seq checkpoint"));
        }
        let cfg: Seq2seqConfig = serde_json::from_value(meta["config"].clone())
            .map_err(|e| Error::format(format!("seq2seq config: {}", e)))?;
        let vocab_size = meta["vocab_size"]
            .as_u64()
            .ok_or_else(|| Error::format("missing vocab_size"))? as usize;
        let mut model = Seq2seqModel::new(&cfg, vocab_size)?;
        for p in model.params_mut() {
            p.step_count = 0;
        }
        let names: Vec<String> = model.named_params().iter().map(|(n, _)| n.clone()).collect();
        {
            let params = model.params_mut();
            for (p, name) in params.into_iter().zip(&names) {
                let stored: Tensor<F> = ck.get(name)?;
                if stored.shape() != p.value.shape() {
                    return Err(Error::format(format!(
                        "tensor `{}` shape {:?} does not match model {:?}",
                        name,
                        stored.shape(),
                        p.value.shape()
                    )));
                }
                p.value = stored;
            }
        }
        Ok((model, meta["extra"].clone()))
    }
}
