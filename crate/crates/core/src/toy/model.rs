use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayD, Axis, IxDyn};
use rand::Rng;

use crate::channel::{draw_impairment, ChannelParams};
use crate::constellation::{build_spec, ConstellationSpec};
use crate::diff::{Graph, Var};
use crate::error::{Error, Result};
use crate::modem::open_uniform;
use crate::rate::symbol_length;
use crate::rng::RngState;

use super::config::TrainConfig;
use super::source::SOURCE_DIM;

pub const LATENT_DIM: usize = 32;
pub const HYPER_DIM: usize = 8;
pub const HIDDEN: usize = 128;
pub const HYPER_HIDDEN: usize = 64;
pub const GATE_HIDDEN: usize = 16;
/// Complex symbols per embedding.
pub const SYMBOLS_PER_EMBEDDING: usize = 8;
pub const EMBEDDINGS: usize = 4;
/// Latent elements feeding each embedding's rate.
pub const LATENTS_PER_EMBEDDING: usize = LATENT_DIM / EMBEDDINGS;
/// Real channel inputs per source vector.
pub const CHANNEL_REALS: usize = 2 * SYMBOLS_PER_EMBEDDING * EMBEDDINGS;

/// softplus^-1(1)
const UNIT_SOFTPLUS: f64 = 0.541_324_854_612_918_1;

/// Parameter groups. The transmitter owns `g_a`, `h_a` and `f_a`.
pub const TRANSMITTER: [&str; 3] = ["g_a", "h_a", "f_a"];

/// Training progress recorded in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Init,
    Phase1,
    Phase2,
    Phase3,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::Phase1 => "phase1",
            Stage::Phase2 => "phase2",
            Stage::Phase3 => "phase3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Stage::Init, Stage::Phase1, Stage::Phase2, Stage::Phase3]
            .into_iter()
            .find(|st| st.name() == s)
    }
}

/// Which stand-in for modulation the channel path uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chain {
    Hard,
    Relaxed,
}

impl Chain {
    pub fn name(self) -> &'static str {
        match self {
            Chain::Hard => "hard",
            Chain::Relaxed => "relaxed",
        }
    }
}

/// How the latents are discretized in a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Latents {
    Noisy,
    Rounded,
}

/// Named dense parameters of the whole system.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub orders: Vec<u32>,
    pub stage: Stage,
    pub lambda: f64,
    pub power: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub(crate) params: BTreeMap<String, ArrayD<f64>>,
}

fn layer_shapes() -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let mut dense = |name: &str, i: usize, o: usize| {
        out.push((format!("{name}.w"), vec![i, o]));
        out.push((format!("{name}.b"), vec![o]));
    };
    dense("g_a.0", SOURCE_DIM, HIDDEN);
    dense("g_a.1", HIDDEN, HIDDEN);
    dense("g_a.2", HIDDEN, LATENT_DIM);
    dense("g_s.0", LATENT_DIM, HIDDEN);
    dense("g_s.1", HIDDEN, HIDDEN);
    dense("g_s.2", HIDDEN, SOURCE_DIM);
    dense("h_a.0", LATENT_DIM, HYPER_HIDDEN);
    dense("h_a.1", HYPER_HIDDEN, HYPER_DIM);
    dense("h_s.0", HYPER_DIM, HYPER_HIDDEN);
    dense("h_s.mean", HYPER_HIDDEN, LATENT_DIM);
    dense("h_s.scale", HYPER_HIDDEN, LATENT_DIM);
    dense("f_a.0", LATENT_DIM, HIDDEN);
    dense("f_a.gate0", 2, GATE_HIDDEN);
    dense("f_a.gate1", GATE_HIDDEN, HIDDEN);
    dense("f_a.1", HIDDEN, CHANNEL_REALS);
    dense("f_a.2", CHANNEL_REALS, HIDDEN);
    dense("f_a.3", HIDDEN, CHANNEL_REALS);
    dense("f_e.r0", CHANNEL_REALS, HIDDEN);
    dense("f_e.r1", HIDDEN, CHANNEL_REALS);
    dense("f_e.0", CHANNEL_REALS, HIDDEN);
    dense("f_e.gate0", 2, GATE_HIDDEN);
    dense("f_e.gate1", GATE_HIDDEN, HIDDEN);
    dense("f_e.1", HIDDEN, LATENT_DIM);
    out.push(("prior.loc".into(), vec![HYPER_DIM]));
    out.push(("prior.scale".into(), vec![HYPER_DIM]));
    out
}

pub(crate) fn group(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

pub fn is_transmitter(name: &str) -> bool {
    TRANSMITTER.contains(&group(name))
}

impl ToyModel {
    /// Fresh parameters drawn from the config's "init" stream; weights are
    /// uniform with variance 1/fan_in.
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let init = RngState::named(cfg.seed, "init");
        let orders = &cfg.orders;
        let mut params = BTreeMap::new();
        for (name, shape) in layer_shapes() {
            let mut rng = init.child(&name).rng();
            let value = if name.ends_with(".w") {
                let lim = (3.0 / shape[0] as f64).sqrt();
                let lim = if name.contains("gate1") { 0.1 * lim } else { lim };
                ArrayD::from_shape_simple_fn(IxDyn(&shape), || rng.random_range(-lim..lim))
            } else {
                let fill = match name.as_str() {
                    "f_a.gate1.b" | "f_e.gate1.b" | "h_s.scale.b" | "prior.scale" => UNIT_SOFTPLUS,
                    "g_s.2.b" => 0.5,
                    _ => 0.0,
                };
                ArrayD::from_elem(IxDyn(&shape), fill)
            };
            params.insert(name, value);
        }
        for m in orders {
            params.insert(
                format!("f_a.shift.{m}"),
                ArrayD::zeros(IxDyn(&[HIDDEN])),
            );
            params.insert(
                format!("f_e.shift.{m}"),
                ArrayD::zeros(IxDyn(&[HIDDEN])),
            );
        }
        Ok(Self {
            orders: orders.to_vec(),
            stage: Stage::Init,
            lambda: cfg.lambda,
            power: cfg.power,
            eta1: cfg.eta1,
            eta2: cfg.eta2,
            params,
        })
    }

    pub fn param(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.params.get(name)
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn params(&self) -> &BTreeMap<String, ArrayD<f64>> {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(|a| a.len()).sum()
    }

    /// Copies of the transmitter arrays, for freeze checks.
    pub fn transmitter_snapshot(&self) -> BTreeMap<String, ArrayD<f64>> {
        self.params
            .iter()
            .filter(|(n, _)| is_transmitter(n))
            .map(|(n, a)| (n.clone(), a.clone()))
            .collect()
    }

    /// Reassembles a model from stored metadata and arrays, checking that
    /// every array is present with the expected shape.
    pub(crate) fn from_parts(meta: ToyModel, params: BTreeMap<String, ArrayD<f64>>) -> Result<Self> {
        let cfg = TrainConfig {
            orders: meta.orders.clone(),
            lambda: meta.lambda,
            power: meta.power,
            eta1: meta.eta1,
            eta2: meta.eta2,
            ..TrainConfig::default()
        };
        let fresh = Self::new(&cfg).map_err(|e| Error::Checkpoint(e.to_string()))?;
        for (name, a) in &fresh.params {
            match params.get(name) {
                Some(b) if b.shape() == a.shape() => {}
                Some(b) => {
                    return Err(Error::Checkpoint(format!(
                        "{name}: shape {:?}, expected {:?}",
                        b.shape(),
                        a.shape()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing array {name}"))),
            }
        }
        if let Some(extra) = params.keys().find(|k| !fresh.params.contains_key(*k)) {
            return Err(Error::Checkpoint(format!("unexpected array {extra}")));
        }
        if params.values().any(|a| a.iter().any(|v| !v.is_finite())) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(Self { params, ..meta })
    }

    pub(crate) fn order_index(&self, order: u32) -> Result<usize> {
        self.orders.iter().position(|m| *m == order).ok_or_else(|| {
            Error::Unsupported(format!(
                "order {order} is not in the model's order set {:?}",
                self.orders
            ))
        })
    }

    pub(crate) fn bind(&self, g: &mut Graph, trainable: &dyn Fn(&str) -> bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(n, a)| {
                let v = if trainable(n) { g.param(a.clone()) } else { g.input(a.clone()) };
                (n.clone(), v)
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters inserted into one graph.
pub(crate) struct Bound {
    pub vars: BTreeMap<String, Var>,
}

impl Bound {
    fn get(&self, name: &str) -> Var {
        self.vars[name]
    }

    fn dense(&self, g: &mut Graph, name: &str, x: Var) -> Var {
        let h = g.matmul(x, self.get(&format!("{name}.w")));
        g.add_row(h, self.get(&format!("{name}.b")))
    }

    fn dense_relu(&self, g: &mut Graph, name: &str, x: Var) -> Var {
        let h = self.dense(g, name, x);
        g.relu(h)
    }

    /// `feature * softplus(mlp(c)) + shift[order]`.
    fn condition(&self, g: &mut Graph, prefix: &str, feature: Var, ctx: &Context) -> Var {
        let c = g.input(ctx.condition.clone());
        let h = self.dense_relu(g, &format!("{prefix}.gate0"), c);
        let gate = self.dense(g, &format!("{prefix}.gate1"), h);
        let gate = g.softplus(gate);
        let scaled = g.mul(feature, gate);
        let shift = self.get(&format!("{prefix}.shift.{}", ctx.order));
        let shift = g.broadcast_rows(shift, ctx.rows);
        g.add(scaled, shift)
    }

    pub fn analysis(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.dense_relu(g, "g_a.0", x);
        let h = self.dense_relu(g, "g_a.1", h);
        self.dense(g, "g_a.2", h)
    }

    pub fn synthesis(&self, g: &mut Graph, y: Var) -> Var {
        let h = self.dense_relu(g, "g_s.0", y);
        let h = self.dense_relu(g, "g_s.1", h);
        self.dense(g, "g_s.2", h)
    }

    pub fn hyper_analysis(&self, g: &mut Graph, y: Var) -> Var {
        let h = self.dense_relu(g, "h_a.0", y);
        self.dense(g, "h_a.1", h)
    }

    /// Mean and scale of the latent model.
    pub fn hyper_synthesis(&self, g: &mut Graph, z: Var) -> (Var, Var) {
        let h = self.dense_relu(g, "h_s.0", z);
        let mean = self.dense(g, "h_s.mean", h);
        let scale = self.dense(g, "h_s.scale", h);
        (mean, g.softplus(scale))
    }

    /// `-log2` likelihood of each hyper-latent under the factorized prior.
    pub fn prior_bits(&self, g: &mut Graph, z: Var, rows: usize) -> Var {
        let loc = g.broadcast_rows(self.get("prior.loc"), rows);
        let scale = g.softplus(self.get("prior.scale"));
        let scale = g.broadcast_rows(scale, rows);
        g.rate_logistic(z, loc, scale)
    }

    /// Encoder through both masks, the power cap and the clip.
    pub fn jsc_encode(&self, g: &mut Graph, y: Var, ctx: &Context) -> Var {
        let h = self.dense_relu(g, "f_a.0", y);
        let h = self.condition(g, "f_a", h, ctx);
        let e1 = self.dense(g, "f_a.1", h);
        let e1 = g.mul_const(e1, &ctx.mask1);
        let h = self.dense_relu(g, "f_a.2", e1);
        let e2 = self.dense(g, "f_a.3", h);
        let e2 = g.mul_const(e2, &ctx.mask2);
        let s = g.power_norm(e2, &ctx.symbols, ctx.spec.power);
        g.clip(s, ctx.spec.bound)
    }

    pub fn jsc_decode(&self, g: &mut Graph, r: Var, ctx: &Context) -> Var {
        let h = self.dense_relu(g, "f_e.r0", r);
        let refine = self.dense(g, "f_e.r1", h);
        let refine = g.mul_const(refine, &ctx.mask2);
        let r = g.add(r, refine);
        let h = self.dense_relu(g, "f_e.0", r);
        let h = self.condition(g, "f_e", h, ctx);
        self.dense(g, "f_e.1", h)
    }
}

/// Per-batch channel conditions, masks and draws.
pub(crate) struct Context {
    pub rows: usize,
    pub order: u32,
    pub spec: ConstellationSpec,
    pub condition: ArrayD<f64>,
    pub mask1: ArrayD<f64>,
    pub mask2: ArrayD<f64>,
    /// Unmasked complex symbols per row.
    pub symbols: Vec<f64>,
    pub k2: Vec<Vec<usize>>,
}

/// Normalized condition input `[snr / 13, log2(M) / 10]`.
pub fn condition_vector(snr_db: f64, order: u32) -> [f64; 2] {
    [snr_db / 13.0, (order as f64).log2() / 10.0]
}

/// Per-embedding rates in bits from elementwise latent bits.
pub fn embedding_rates(bits: &ArrayD<f64>) -> Array2<f64> {
    let b = bits.view().into_dimensionality::<ndarray::Ix2>().unwrap();
    let mut out = Array2::zeros((b.nrows(), EMBEDDINGS));
    for i in 0..EMBEDDINGS {
        let cols = b.slice(s![.., i * LATENTS_PER_EMBEDDING..(i + 1) * LATENTS_PER_EMBEDDING]);
        out.column_mut(i).assign(&cols.sum_axis(Axis(1)));
    }
    out
}

fn prefix_mask(lengths: &[Vec<usize>]) -> ArrayD<f64> {
    let mut m = Array2::zeros((lengths.len(), CHANNEL_REALS));
    for (r, ks) in lengths.iter().enumerate() {
        for (e, k) in ks.iter().enumerate() {
            let start = e * 2 * SYMBOLS_PER_EMBEDDING;
            m.slice_mut(s![r, start..start + 2 * k]).fill(1.0);
        }
    }
    m.into_dyn()
}

impl Context {
    pub fn new(
        rates: &Array2<f64>,
        order: u32,
        snr_db: f64,
        eta: (f64, f64),
        power: f64,
    ) -> Result<Self> {
        let spec = build_spec(order, power)?;
        let rows = rates.nrows();
        let lengths = |eta: f64| -> Result<Vec<Vec<usize>>> {
            rates
                .rows()
                .into_iter()
                .map(|r| {
                    r.iter()
                        .map(|b| symbol_length(*b, eta, SYMBOLS_PER_EMBEDDING))
                        .collect()
                })
                .collect()
        };
        let k1 = lengths(eta.0)?;
        let k2 = lengths(eta.1)?;
        let c = condition_vector(snr_db, order);
        let condition = Array2::from_shape_fn((rows, 2), |(_, j)| c[j]).into_dyn();
        Ok(Self {
            rows,
            order,
            spec,
            condition,
            mask1: prefix_mask(&k1),
            mask2: prefix_mask(&k2),
            symbols: k2.iter().map(|k| k.iter().sum::<usize>() as f64).collect(),
            k2,
        })
    }

    pub fn total_symbols(&self) -> usize {
        self.k2.iter().flatten().sum()
    }
}

/// Dither on `(-h, h)` with the shape of the channel input, masked.
pub(crate) fn masked_dither(rows: usize, h: f64, mask: &ArrayD<f64>, rng: RngState) -> ArrayD<f64> {
    let mut r = rng.rng();
    let u = ArrayD::from_shape_simple_fn(IxDyn(&[rows, CHANNEL_REALS]), || open_uniform(&mut r, h));
    u * mask
}

/// Channel error with one block per row, interleaved and masked.
pub(crate) fn channel_error(
    rows: usize,
    params: &ChannelParams,
    mask: &ArrayD<f64>,
    rng: RngState,
) -> Result<ArrayD<f64>> {
    let mut e = Array2::zeros((rows, CHANNEL_REALS));
    for (r, mut row) in e.rows_mut().into_iter().enumerate() {
        let imp = draw_impairment(CHANNEL_REALS / 2, params, rng.substream(r as u64))?;
        for (j, z) in imp.error.iter().enumerate() {
            row[2 * j] = z.re;
            row[2 * j + 1] = z.im;
        }
    }
    Ok(e.into_dyn() * mask)
}

/// Moves grid points inward until every row's average symbol energy is at
/// most `power`. Returns the additive correction.
pub(crate) fn power_guard(q: &ArrayD<f64>, symbols: &[f64], spec: &ConstellationSpec) -> ArrayD<f64> {
    let q = q.view().into_dimensionality::<ndarray::Ix2>().unwrap();
    let mut delta = Array2::zeros(q.raw_dim());
    let step = 2.0 * spec.spacing;
    for (r, row) in q.rows().into_iter().enumerate() {
        let k = symbols[r];
        if k == 0.0 {
            continue;
        }
        let mut vals: Array1<f64> = row.to_owned();
        let mut energy: f64 = vals.iter().map(|v| v * v).sum();
        while energy > spec.power * k {
            let (j, v) = vals
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |best, (j, v)| if v.abs() > best.1.abs() { (j, *v) } else { best });
            if v.abs() <= spec.spacing * (1.0 + 1e-12) {
                break;
            }
            let nv = v - step * v.signum();
            energy += nv * nv - v * v;
            vals[j] = nv;
        }
        delta.row_mut(r).assign(&(&vals - &row));
    }
    delta.into_dyn()
}

/// Average transmitted energy per unmasked complex symbol.
pub(crate) fn batch_power(s: &ArrayD<f64>, symbols: usize) -> f64 {
    if symbols == 0 {
        return 0.0;
    }
    s.iter().map(|v| v * v).sum::<f64>() / symbols as f64
}
