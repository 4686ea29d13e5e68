//! Adam and the two-view pretraining loop.

use rand::seq::SliceRandom;

use crate::augment::{make_views, SeededRng};
use crate::autodiff::{Tape, Var};
use crate::config::TrainConfig;
use crate::encoder::{encode_view, glorot_uniform, init_params, EncoderConfig, EncoderParams};
use crate::error::{GipError, Result};
use crate::graph::{disjoint_union, Graph};
use crate::objectives::{bgrl_loss, ema_update, gbt_loss, grace_loss, mvgrl_loss, ObjectiveKind};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

// rng stream tags
const INIT: u64 = 1;
const DISCRIMINATOR: u64 = 2;
const SHUFFLE: u64 = 3;
const VIEWS: u64 = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<F>>, lr: f64) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.rows(), p.cols()), Tensor::zeros(p.rows(), p.cols())))
            .unzip();
        Self {
            m,
            v,
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<F: Scalar>(params: &mut [&mut Tensor<F>], grads: &[Tensor<F>], state: &mut AdamState<F>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(GipError::shape(
            "adam_step",
            format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(GipError::shape(
                "adam_step",
                format!("param {:?}, grad {:?}, moment {:?}", p.shape(), g.shape(), m.shape()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (F::of(state.beta1), F::of(state.beta2));
    let c1 = F::one() - F::of(state.beta1.powi(t));
    let c2 = F::one() - F::of(state.beta2.powi(t));
    let (lr, eps) = (F::of(state.lr), F::of(state.eps));
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let p = p.as_mut_slice();
        let ms = m.as_mut_slice();
        let vs = v.as_mut_slice();
        for i in 0..p.len() {
            let gi = g.as_slice()[i];
            ms[i] = b1 * ms[i] + (F::one() - b1) * gi;
            vs[i] = b2 * vs[i] + (F::one() - b2) * gi * gi;
            let m_hat = ms[i] / c1;
            let v_hat = vs[i] / c2;
            p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Everything a run learns: the encoder plus objective-owned tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<F> {
    pub encoder: EncoderParams<F>,
    /// Bilinear discriminator of the Jensen–Shannon objective.
    pub discriminator: Option<Tensor<F>>,
    /// Slow-moving target encoder of the bootstrap objective.
    pub target: Option<EncoderParams<F>>,
}

impl<F: Scalar> ModelState<F> {
    pub fn init(config: &TrainConfig, enc: &EncoderConfig) -> Self {
        let root = SeededRng::new(config.seed);
        let encoder = init_params(enc, &root.fork(INIT));
        let kind = config.objective.kind;
        Self {
            discriminator: (kind == ObjectiveKind::Mvgrl)
                .then(|| glorot_uniform(enc.hidden_dim, enc.hidden_dim, &root.fork(DISCRIMINATOR))),
            target: (kind == ObjectiveKind::Bgrl).then(|| encoder.clone()),
            encoder,
        }
    }

    /// Named tensors in checkpoint order.
    pub fn named(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = self.encoder.named("encoder");
        if let Some(w) = &self.discriminator {
            out.push(("objective.w_d".into(), w));
        }
        if let Some(t) = &self.target {
            out.extend(t.named("target"));
        }
        out
    }

    fn trainable(&self) -> Vec<&Tensor<F>> {
        self.encoder.tensors().chain(self.discriminator.iter()).collect()
    }

    fn trainable_mut(&mut self) -> Vec<&mut Tensor<F>> {
        self.encoder.tensors_mut().chain(self.discriminator.iter_mut()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<F> {
    pub state: ModelState<F>,
    pub encoder_config: EncoderConfig,
    pub trace: Vec<LossRecord>,
}

/// Graph-index batches for one epoch; the permutation depends only on
/// `(seed, epoch)`. A trailing singleton batch is dropped.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut SeededRng::new(seed).fork(SHUFFLE).fork(epoch as u64).generator());
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

fn step_loss<F: Scalar>(
    tape: &mut Tape<F>,
    state: &ModelState<F>,
    views: (&crate::graph::GraphBatch, &crate::graph::GraphBatch),
    config: &TrainConfig,
    enc: &EncoderConfig,
) -> Result<(Var, Vec<Var>)> {
    let vars = state.encoder.register(tape)?;
    let mut trainable: Vec<Var> = vars.iter().collect();
    let z1 = encode_view(tape, &vars, views.0, enc)?;
    let obj = &config.objective;
    let loss = match obj.kind {
        ObjectiveKind::Grace => {
            let z2 = encode_view(tape, &vars, views.1, enc)?;
            grace_loss(tape, z1, z2, obj.tau, obj.symmetric)?
        }
        ObjectiveKind::Mvgrl => {
            let z2 = encode_view(tape, &vars, views.1, enc)?;
            let w = tape.param(state.discriminator.clone().expect("initialized for this objective"))?;
            trainable.push(w);
            mvgrl_loss(tape, z1, z2, w)?
        }
        ObjectiveKind::Gbt => {
            let z2 = encode_view(tape, &vars, views.1, enc)?;
            gbt_loss(tape, z1, z2, obj.lambda_for(enc.hidden_dim))?
        }
        ObjectiveKind::Bgrl => {
            let target = state.target.as_ref().expect("initialized for this objective");
            let tvars = target.register_frozen(tape)?;
            let zt = encode_view(tape, &tvars, views.1, enc)?;
            bgrl_loss(tape, z1, zt)?
        }
    };
    Ok((loss, trainable))
}

/// Self-supervised pretraining: per batch, two views, two encodings, one
/// objective, one Adam step (plus the target update when bootstrapping).
pub fn pretrain<F: Scalar>(dataset: &[Graph], config: &TrainConfig) -> Result<TrainOutcome<F>> {
    config.validate()?;
    let first = dataset
        .first()
        .ok_or_else(|| GipError::Config("cannot pretrain on an empty dataset".into()))?;
    let enc = config.encoder_config(first.feature_dim())?;
    let mut state = ModelState::<F>::init(config, &enc);
    let mut adam = AdamState::new(state.trainable(), config.lr);
    let views_rng = SeededRng::new(config.seed).fork(VIEWS);
    let mut trace = Vec::new();
    let mut step = 0;

    for epoch in 0..config.epochs {
        let shuffle_epoch = if config.freeze_views { 0 } else { epoch };
        for (bi, ids) in epoch_batches(dataset.len(), config.batch_size, config.seed, shuffle_epoch)
            .into_iter()
            .enumerate()
        {
            let abort = |msg: String| GipError::Training {
                step,
                batch: ids.clone(),
                msg,
            };
            let graphs: Vec<Graph> = ids.iter().map(|&i| dataset[i].clone()).collect();
            let batch = disjoint_union(&graphs)?;
            let view_seed = if config.freeze_views { bi } else { step };
            let (v1, v2) = make_views(&batch, &config.view1, &config.view2, &views_rng.fork(view_seed as u64));

            let mut tape = Tape::new();
            let (loss, trainable) = match step_loss(&mut tape, &state, (&v1, &v2), config, &enc) {
                Ok(x) => x,
                Err(GipError::NonFinite { op }) => return Err(abort(format!("non-finite value in {op}"))),
                Err(e) => return Err(e),
            };
            let value = tape.value(loss).get(0, 0).as_f64();
            if !value.is_finite() {
                return Err(abort(format!("loss is {value}")));
            }
            let shapes: Vec<(usize, usize)> = trainable.iter().map(|&v| tape.value(v).shape()).collect();
            let grads = tape.backward(loss)?;
            let grads: Vec<Tensor<F>> = trainable
                .iter()
                .zip(shapes)
                .map(|(&v, s)| grads.get_or_zeros(v, s))
                .collect();
            adam_step(&mut state.trainable_mut(), &grads, &mut adam)?;
            if let Some(target) = state.target.as_mut() {
                ema_update(target, &state.encoder, config.objective.ema_decay)?;
            }
            trace.push(LossRecord { step, epoch, loss: value });
            step += 1;
        }
    }
    Ok(TrainOutcome {
        state,
        encoder_config: enc,
        trace,
    })
}
