use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;

use crate::channel::ChannelParams;
use crate::diff::{gradient_check, GradCheck, Graph, Var};
use crate::error::{Error, Result};
use crate::modem::open_uniform;
use crate::rng::RngState;

use super::config::TrainConfig;
use super::model::{
    batch_power, channel_error, embedding_rates, group, is_transmitter, masked_dither, power_guard,
    Bound, Chain, Context, Latents, Stage, ToyModel,
};
use super::source::{make_source_batch, SOURCE_DIM};

/// Settings of one forward pass.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PassSpec {
    pub latents: Latents,
    pub chain: Option<Chain>,
    pub order: u32,
    pub snr_db: f64,
    pub lambda: f64,
}

/// Values and graph handles of one forward pass.
pub(crate) struct Pass {
    pub loss: Var,
    /// Total bits per source dimension.
    pub rate_bits: f64,
    pub mse_md: f64,
    pub mse: Option<f64>,
    /// Average energy per transmitted complex symbol.
    pub power: Option<f64>,
    pub symbols: usize,
    pub encoded: Option<Var>,
    /// Stage-2 mask over the channel reals.
    pub mask: Option<ArrayD<f64>>,
    pub transmitted: Option<ArrayD<f64>>,
}

fn discretize(g: &mut Graph, v: Var, latents: Latents, rng: RngState) -> Var {
    let value = g.value(v).clone();
    match latents {
        Latents::Noisy => {
            let mut r = rng.rng();
            let u = value.mapv(|_| open_uniform(&mut r, 0.5));
            g.uniform_noise(v, &u)
        }
        Latents::Rounded => {
            let shift = value.mapv(|y| y.round() - y);
            g.add_const(v, &shift)
        }
    }
}

/// Rate, reconstruction and loss of the full system on one batch.
pub(crate) fn forward(
    model: &ToyModel,
    g: &mut Graph,
    p: &Bound,
    x: &Array2<f64>,
    spec: &PassSpec,
    rng: RngState,
) -> Result<Pass> {
    let rows = x.nrows();
    let xv = g.input(x.clone().into_dyn());
    let y = p.analysis(g, xv);
    let y_t = discretize(g, y, spec.latents, rng.child("noise_y"));
    let z = p.hyper_analysis(g, y);
    let z_t = discretize(g, z, spec.latents, rng.child("noise_z"));
    let z_bits = p.prior_bits(g, z_t, rows);
    let (mean, scale) = p.hyper_synthesis(g, z_t);
    let y_bits = g.rate_gu(y_t, mean, scale);
    let norm = 1.0 / (rows * SOURCE_DIM) as f64;
    let sy = g.sum(y_bits);
    let rate_y = g.scale(sy, norm);
    let sz = g.sum(z_bits);
    let rate_z = g.scale(sz, norm);
    let x_md = p.synthesis(g, y_t);
    let mse_md = g.mse(x_md, xv);

    let mut out = Pass {
        loss: mse_md,
        rate_bits: g.scalar_value(rate_y) + g.scalar_value(rate_z),
        mse_md: g.scalar_value(mse_md),
        mse: None,
        power: None,
        symbols: 0,
        encoded: None,
        mask: None,
        transmitted: None,
    };
    let x_hat = match spec.chain {
        None => None,
        Some(chain) => {
            model.order_index(spec.order)?;
            let rates = embedding_rates(g.value(y_bits));
            let ctx = Context::new(
                &rates,
                spec.order,
                spec.snr_db,
                (model.eta1, model.eta2),
                model.power,
            )?;
            let params = ChannelParams::awgn(spec.snr_db, model.power)?;
            let s = p.jsc_encode(g, y_t, &ctx);
            let e = channel_error(rows, &params, &ctx.mask2, rng.child("channel"))?;
            let d = ctx.spec.spacing;
            let r = match chain {
                Chain::Relaxed => {
                    out.power = Some(batch_power(g.value(s), ctx.total_symbols()));
                    out.transmitted = Some(g.value(s).clone());
                    let u1 = masked_dither(rows, d, &ctx.mask2, rng.child("noise1"));
                    let u2 = masked_dither(rows, d, &ctx.mask2, rng.child("noise2"));
                    let r = g.uniform_noise(s, &u1);
                    let r = g.add_const(r, &e);
                    g.uniform_noise(r, &u2)
                }
                Chain::Hard => {
                    let q = g.ste_quantize(s, &ctx.spec);
                    let q = g.mul_const(q, &ctx.mask2);
                    let delta = power_guard(g.value(q), &ctx.symbols, &ctx.spec);
                    let q = g.add_const(q, &delta);
                    out.power = Some(batch_power(g.value(q), ctx.total_symbols()));
                    out.transmitted = Some(g.value(q).clone());
                    let r = g.add_const(q, &e);
                    let r = g.ste_quantize(r, &ctx.spec);
                    g.mul_const(r, &ctx.mask2)
                }
            };
            let y_rec = p.jsc_decode(g, r, &ctx);
            let x_hat = p.synthesis(g, y_rec);
            out.symbols = ctx.total_symbols();
            out.encoded = Some(s);
            out.mask = Some(ctx.mask2.clone());
            Some(x_hat)
        }
    };
    if let Some(x_hat) = x_hat {
        let mse = g.mse(x_hat, xv);
        out.mse = Some(g.scalar_value(mse));
    }
    out.loss = loss_rd(g, xv, x_hat, x_md, rate_y, rate_z, spec.lambda)?;
    Ok(out)
}

/// `rate_y + rate_z + lambda * (mse(x, x_md) + mse(x, x_hat))`. Without a
/// channel reconstruction only the source-coder distortion is counted.
pub fn loss_rd(
    g: &mut Graph,
    x: Var,
    x_hat: Option<Var>,
    x_md: Var,
    rate_y: Var,
    rate_z: Var,
    lambda: f64,
) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    for v in x_hat.iter().chain([&x_md]) {
        if g.value(*v).shape() != shape.as_slice() {
            return Err(Error::Shape(format!(
                "reconstruction shape {:?} differs from source shape {shape:?}",
                g.value(*v).shape()
            )));
        }
    }
    for r in [rate_y, rate_z] {
        if g.value(r).len() != 1 {
            return Err(Error::Shape("rates must be scalars".into()));
        }
    }
    let mut distortion = g.mse(x, x_md);
    if let Some(x_hat) = x_hat {
        let d = g.mse(x, x_hat);
        distortion = g.add(distortion, d);
    }
    let rate = g.add(rate_y, rate_z);
    let weighted = g.scale(distortion, lambda);
    Ok(g.add(rate, weighted))
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: BTreeMap<String, ArrayD<f64>>,
    v: BTreeMap<String, ArrayD<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut BTreeMap<String, ArrayD<f64>>, grads: &BTreeMap<String, ArrayD<f64>>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (name, grad) in grads {
            let p = params.get_mut(name).expect("gradient for unknown parameter");
            let m = self.m.entry(name.clone()).or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            let v = self.v.entry(name.clone()).or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            ndarray::Zip::from(p).and(m).and(v).and(grad).for_each(|p, m, v, g| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            });
        }
    }
}

/// One trace line. The chain not used in a phase is left empty.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub phase: u8,
    pub loss: f64,
    pub rate_bits: f64,
    pub mse_hard: Option<f64>,
    pub mse_relaxed: Option<f64>,
    pub power: Option<f64>,
}

pub const TRACE_HEADER: [&str; 6] = ["step", "phase", "loss", "rate_bits", "mse_hard", "mse_relaxed"];

pub fn write_trace<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.phase.to_string(),
            r.loss.to_string(),
            r.rate_bits.to_string(),
            opt(r.mse_hard),
            opt(r.mse_relaxed),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// What a phase trains and through which chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseKind {
    /// Source coder only, latents perturbed by uniform noise.
    SourceCoder,
    /// Everything, through the relaxed chain.
    Relaxed,
    /// Everything, through the hard chain with straight-through gradients.
    EndToEndSte,
    /// Receiver only, through the hard chain.
    ReceiverSte,
}

impl PhaseKind {
    pub fn phase(self) -> u8 {
        match self {
            PhaseKind::SourceCoder => 1,
            PhaseKind::Relaxed | PhaseKind::EndToEndSte => 2,
            PhaseKind::ReceiverSte => 3,
        }
    }

    fn stage(self) -> Stage {
        match self.phase() {
            1 => Stage::Phase1,
            2 => Stage::Phase2,
            _ => Stage::Phase3,
        }
    }

    fn required(self) -> Stage {
        match self.phase() {
            1 => Stage::Init,
            2 => Stage::Phase1,
            _ => Stage::Phase2,
        }
    }

    pub fn trains(self, name: &str) -> bool {
        let g = group(name);
        match self {
            PhaseKind::SourceCoder => matches!(g, "g_a" | "h_a" | "h_s" | "g_s" | "prior"),
            PhaseKind::Relaxed | PhaseKind::EndToEndSte => true,
            PhaseKind::ReceiverSte => !is_transmitter(name) && g != "prior",
        }
    }

    fn chain(self) -> Option<Chain> {
        match self {
            PhaseKind::SourceCoder => None,
            PhaseKind::Relaxed => Some(Chain::Relaxed),
            PhaseKind::EndToEndSte | PhaseKind::ReceiverSte => Some(Chain::Hard),
        }
    }

    fn latents(self) -> Latents {
        match self {
            PhaseKind::ReceiverSte => Latents::Rounded,
            _ => Latents::Noisy,
        }
    }

    fn stream(self) -> &'static str {
        match self.phase() {
            1 => "phase1",
            2 => "phase2",
            _ => "phase3",
        }
    }
}

fn draw_conditions(cfg: &TrainConfig, step_rng: RngState) -> (u32, f64) {
    let order = cfg.orders[step_rng.child("order").rng().random_range(0..cfg.orders.len())];
    let [lo, hi] = cfg.snr_range;
    let snr = if hi > lo {
        step_rng.child("snr").rng().random_range(lo..=hi)
    } else {
        lo
    };
    (order, snr)
}

struct StepOutcome {
    row: TraceRow,
    grads: BTreeMap<String, ArrayD<f64>>,
}

fn train_step(model: &ToyModel, cfg: &TrainConfig, kind: PhaseKind, step: usize) -> Result<StepOutcome> {
    let step_rng = RngState::named(cfg.seed, "train").child(kind.stream()).substream(step as u64);
    let x = make_source_batch(cfg.batch_size, step_rng.child("source"));
    let (order, snr_db) = draw_conditions(cfg, step_rng);
    let mut g = Graph::new();
    let bound = model.bind(&mut g, &|n| kind.trains(n));
    let spec = PassSpec {
        latents: kind.latents(),
        chain: kind.chain(),
        order,
        snr_db,
        lambda: cfg.lambda,
    };
    let pass = forward(model, &mut g, &bound, &x, &spec, step_rng)?;
    let loss = g.scalar_value(pass.loss);
    if !loss.is_finite() {
        return Err(Error::Diverged { phase: kind.phase(), step });
    }
    g.backward(pass.loss);
    let grads = bound
        .vars
        .iter()
        .filter(|(n, _)| kind.trains(n))
        .map(|(n, v)| {
            let d = g
                .grad(*v)
                .cloned()
                .unwrap_or_else(|| ArrayD::zeros(IxDyn(model.params[n].shape())));
            (n.clone(), d)
        })
        .collect::<BTreeMap<_, _>>();
    if grads.values().any(|d| d.iter().any(|v| !v.is_finite())) {
        return Err(Error::Diverged { phase: kind.phase(), step });
    }
    let (mse_hard, mse_relaxed) = match kind.chain() {
        None => (None, Some(pass.mse_md)),
        Some(Chain::Relaxed) => (None, pass.mse),
        Some(Chain::Hard) => (pass.mse, None),
    };
    Ok(StepOutcome {
        row: TraceRow {
            step,
            phase: kind.phase(),
            loss,
            rate_bits: pass.rate_bits,
            mse_hard,
            mse_relaxed,
            power: pass.power,
        },
        grads,
    })
}

/// Gradient norm of every parameter array after one step of `kind`;
/// arrays the phase does not train report zero.
pub fn gradient_norms(model: &ToyModel, cfg: &TrainConfig, kind: PhaseKind) -> Result<BTreeMap<String, f64>> {
    let out = train_step(model, cfg, kind, 0)?;
    Ok(model
        .params
        .keys()
        .map(|n| {
            let norm = out
                .grads
                .get(n)
                .map_or(0.0, |d| d.iter().map(|v| v * v).sum::<f64>().sqrt());
            (n.clone(), norm)
        })
        .collect())
}

/// Central-difference check of the relaxed-chain loss with respect to one
/// parameter array. All noise is drawn once from `seed`, so the loss is a
/// deterministic function of the array.
pub fn loss_gradient_check(
    model: &ToyModel,
    name: &str,
    order: u32,
    snr_db: f64,
    eps: f64,
    seed: u64,
) -> Result<GradCheck> {
    let value = model
        .params
        .get(name)
        .ok_or_else(|| Error::Config(format!("unknown parameter array {name}")))?;
    let rng = RngState::named(seed, "loss-check");
    let x = make_source_batch(4, rng.child("source"));
    let spec = PassSpec {
        latents: Latents::Noisy,
        chain: Some(Chain::Relaxed),
        order,
        snr_db,
        lambda: model.lambda,
    };
    let pass = |g: &mut Graph, v: Var| {
        let mut bound = model.bind(g, &|_| false);
        bound.vars.insert(name.to_string(), v);
        forward(model, g, &bound, &x, &spec, rng.child("draws"))
    };
    // surface configuration errors before the checker needs an infallible closure
    let mut probe = Graph::new();
    let v = probe.input(value.clone());
    pass(&mut probe, v)?;
    gradient_check(|g, v| pass(g, v).expect("validated pass").loss, value, eps)
}

/// Runs `steps` optimizer steps of the given phase and returns the trace.
pub fn run_phase(model: &mut ToyModel, cfg: &TrainConfig, kind: PhaseKind) -> Result<Vec<TraceRow>> {
    cfg.validate()?;
    if model.stage < kind.required() {
        return Err(Error::PhaseOrder(format!(
            "phase {} needs a model trained through {}, this one is at {}",
            kind.phase(),
            kind.required().name(),
            model.stage.name()
        )));
    }
    let phase = kind.phase() as usize - 1;
    let mut adam = Adam::new(cfg.learning_rates[phase]);
    let mut trace = Vec::with_capacity(cfg.phases[phase]);
    for step in 0..cfg.phases[phase] {
        let out = train_step(model, cfg, kind, step)?;
        adam.step(&mut model.params, &out.grads);
        trace.push(out.row);
    }
    model.stage = model.stage.max(kind.stage());
    Ok(trace)
}

pub fn run_phase1(model: &mut ToyModel, cfg: &TrainConfig) -> Result<Vec<TraceRow>> {
    run_phase(model, cfg, PhaseKind::SourceCoder)
}

pub fn run_phase2(model: &mut ToyModel, cfg: &TrainConfig) -> Result<Vec<TraceRow>> {
    run_phase(model, cfg, PhaseKind::Relaxed)
}

pub fn run_phase3(model: &mut ToyModel, cfg: &TrainConfig) -> Result<Vec<TraceRow>> {
    run_phase(model, cfg, PhaseKind::ReceiverSte)
}
