use std::io::Write;

use ndarray::{Array, ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::check::{gradient_check_with, GradCheck};
use super::graph::{Graph, NodeKind, Var};
use crate::channel::{noise_sigma2, ChannelParams};
use crate::constellation::build_spec;
use crate::error::Result;
use crate::modem::open_uniform;
use crate::rng::RngState;

/// Relative-error threshold for differentiable nodes.
pub const SUITE_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOptions {
    pub cases: usize,
    pub seed: u64,
    pub eps: f64,
    pub fault: Option<NodeKind>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            cases: 100,
            seed: 0x5eed,
            eps: 1e-6,
            fault: None,
        }
    }
}

/// One report row. `advisory` rows are biased by construction and never fail.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub node: String,
    pub cases: usize,
    pub max_rel_err: f64,
    pub worst_case: usize,
    pub advisory: bool,
}

impl SuiteRow {
    pub fn passed(&self, tol: f64) -> bool {
        self.advisory || self.max_rel_err <= tol
    }

    pub fn status(&self, tol: f64) -> &'static str {
        if self.advisory {
            "advisory"
        } else if self.max_rel_err <= tol {
            "pass"
        } else {
            "fail"
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub rows: Vec<SuiteRow>,
    pub tolerance: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed(self.tolerance))
    }

    /// Largest error among rows that can fail.
    pub fn worst(&self) -> Option<&SuiteRow> {
        self.rows
            .iter()
            .filter(|r| !r.advisory)
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }

    pub fn failures(&self) -> impl Iterator<Item = &SuiteRow> {
        self.rows.iter().filter(|r| !r.passed(self.tolerance))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["node", "cases", "max_rel_err", "worst_case", "status"])?;
        for r in &self.rows {
            w.write_record([
                r.node.clone(),
                r.cases.to_string(),
                format!("{:.3e}", r.max_rel_err),
                r.worst_case.to_string(),
                r.status(self.tolerance).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Row labels in report order.
pub const SUITE_NODES: [&str; 24] = [
    "matmul",
    "add",
    "add_row",
    "sub",
    "mul",
    "scale",
    "affine",
    "relu",
    "tanh",
    "softplus",
    "mse",
    "concat",
    "rate_gu",
    "rate_logistic",
    "broadcast_rows",
    "uniform_noise",
    "add_const",
    "mul_const",
    "clip",
    "sum",
    "mean",
    "power_norm",
    "ste_quantize",
    "relaxed_chain",
];

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> ArrayD<f64> {
    Array::from_shape_simple_fn(IxDyn(shape), || rng.random_range(lo..hi))
}

/// Magnitudes in `[lo, hi]` with random signs.
fn signed(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> ArrayD<f64> {
    Array::from_shape_simple_fn(IxDyn(shape), || {
        let m = rng.random_range(lo..hi);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..7))
}

/// `sum(w * out)` with fixed weights, so every output element matters.
fn weighted_sum(g: &mut Graph, out: Var, w: &ArrayD<f64>) -> Var {
    let p = g.mul_const(out, w);
    g.sum(p)
}

fn run_case(name: &str, rng: &mut ChaCha8Rng, opts: &SuiteOptions) -> Result<GradCheck> {
    let (r, c) = dims(rng);
    let which = rng.random_range(0..3usize);
    let eps = opts.eps;
    let fault = opts.fault;
    let w = uniform(rng, &[r, c], 0.5, 1.5);
    macro_rules! check {
        ($x:expr, |$g:ident, $v:ident| $body:expr) => {
            gradient_check_with(|$g: &mut Graph, $v: Var| $body, &$x, eps, fault)
        };
    }
    match name {
        "matmul" => {
            let k = rng.random_range(1..6);
            let a = uniform(rng, &[r, k], -1.0, 1.0);
            let b = uniform(rng, &[k, c], -1.0, 1.0);
            if which == 0 {
                check!(a, |g, v| {
                    let b = g.input(b.clone());
                    let m = g.matmul(v, b);
                    weighted_sum(g, m, &w)
                })
            } else {
                check!(b, |g, v| {
                    let a = g.input(a.clone());
                    let m = g.matmul(a, v);
                    weighted_sum(g, m, &w)
                })
            }
        }
        "add" | "sub" | "mul" => {
            let x = uniform(rng, &[r, c], -1.5, 1.5);
            let other = uniform(rng, &[r, c], -1.5, 1.5);
            check!(x, |g, v| {
                let o = g.input(other.clone());
                let (a, b) = if which == 0 { (v, o) } else { (o, v) };
                let out = match name {
                    "add" => g.add(a, b),
                    "sub" => g.sub(a, b),
                    _ => g.mul(a, b),
                };
                let t = g.tanh(out);
                weighted_sum(g, t, &w)
            })
        }
        "add_row" => {
            let x = uniform(rng, &[r, c], -2.0, 2.0);
            let b = uniform(rng, &[c], -1.0, 1.0);
            if which == 0 {
                check!(x, |g, v| {
                    let b = g.input(b.clone());
                    let o = g.add_row(v, b);
                    let t = g.tanh(o);
                    weighted_sum(g, t, &w)
                })
            } else {
                check!(b, |g, v| {
                    let x = g.input(x.clone());
                    let o = g.add_row(x, v);
                    let t = g.tanh(o);
                    weighted_sum(g, t, &w)
                })
            }
        }
        "scale" | "affine" => {
            let x = uniform(rng, &[r, c], -1.5, 1.5);
            let k = rng.random_range(-1.5..1.5);
            let s = rng.random_range(-0.5..0.5);
            check!(x, |g, v| {
                let o = if name == "scale" { g.scale(v, k) } else { g.affine(v, k, s) };
                let t = g.tanh(o);
                weighted_sum(g, t, &w)
            })
        }
        "relu" => {
            let x = signed(rng, &[r, c], 0.05, 2.0);
            check!(x, |g, v| {
                let o = g.relu(v);
                weighted_sum(g, o, &w)
            })
        }
        "tanh" => {
            let x = uniform(rng, &[r, c], -3.0, 3.0);
            check!(x, |g, v| {
                let o = g.tanh(v);
                weighted_sum(g, o, &w)
            })
        }
        "softplus" => {
            let x = uniform(rng, &[r, c], -6.0, 6.0);
            check!(x, |g, v| {
                let o = g.softplus(v);
                weighted_sum(g, o, &w)
            })
        }
        "mse" => {
            let x = uniform(rng, &[r, c], -2.0, 2.0);
            let t = uniform(rng, &[r, c], -2.0, 2.0);
            check!(x, |g, v| {
                let t = g.input(t.clone());
                if which == 0 {
                    g.mse(v, t)
                } else {
                    g.mse(t, v)
                }
            })
        }
        "concat" => {
            let c2 = rng.random_range(1..5);
            let a = uniform(rng, &[r, c], -2.0, 2.0);
            let b = uniform(rng, &[r, c2], -2.0, 2.0);
            let w = uniform(rng, &[r, c + c2], 0.5, 1.5);
            let (x, other) = if which == 0 { (a, b) } else { (b, a) };
            check!(x, |g, v| {
                let o = g.input(other.clone());
                let cat = if which == 0 { g.concat(v, o) } else { g.concat(o, v) };
                let t = g.tanh(cat);
                weighted_sum(g, t, &w)
            })
        }
        "rate_gu" | "rate_logistic" => {
            let mean = uniform(rng, &[r, c], -2.0, 2.0);
            let scale = uniform(rng, &[r, c], 0.2, 3.0);
            let t = uniform(rng, &[r, c], -3.0, 3.0);
            let y = &mean + &(&scale * &t);
            let mut args = [y, mean, scale];
            let x = args[which].clone();
            args[which] = ArrayD::zeros(IxDyn(&[0]));
            check!(x, |g, v| {
                let mut vars = [v; 3];
                for (i, a) in args.iter().enumerate() {
                    if i != which {
                        vars[i] = g.input(a.clone());
                    }
                }
                let bits = if name == "rate_gu" {
                    g.rate_gu(vars[0], vars[1], vars[2])
                } else {
                    g.rate_logistic(vars[0], vars[1], vars[2])
                };
                weighted_sum(g, bits, &w)
            })
        }
        "broadcast_rows" => {
            let x = uniform(rng, &[c], -2.0, 2.0);
            check!(x, |g, v| {
                let b = g.broadcast_rows(v, r);
                let t = g.tanh(b);
                weighted_sum(g, t, &w)
            })
        }
        "uniform_noise" | "add_const" => {
            let x = uniform(rng, &[r, c], -2.0, 2.0);
            let u = Array::from_shape_simple_fn(IxDyn(&[r, c]), || open_uniform(rng, 0.7));
            check!(x, |g, v| {
                let o = if name == "add_const" {
                    g.add_const(v, &u)
                } else {
                    g.uniform_noise(v, &u)
                };
                let t = g.tanh(o);
                weighted_sum(g, t, &w)
            })
        }
        "mul_const" => {
            let x = uniform(rng, &[r, c], -2.0, 2.0);
            let k = uniform(rng, &[r, c], -2.0, 2.0);
            check!(x, |g, v| {
                let o = g.mul_const(v, &k);
                let t = g.tanh(o);
                weighted_sum(g, t, &w)
            })
        }
        "clip" => {
            let bound = rng.random_range(0.3..1.0);
            let x = Array::from_shape_simple_fn(IxDyn(&[r, c]), || loop {
                let v: f64 = rng.random_range(-2.0..2.0);
                if (v.abs() - bound).abs() > 1e-4 {
                    break v;
                }
            });
            check!(x, |g, v| {
                let o = g.clip(v, bound);
                weighted_sum(g, o, &w)
            })
        }
        "sum" | "mean" => {
            let x = uniform(rng, &[r, c], -2.0, 2.0);
            check!(x, |g, v| {
                let t = g.tanh(v);
                if name == "sum" {
                    g.sum(t)
                } else {
                    g.mean(t)
                }
            })
        }
        "power_norm" => {
            let n = c;
            let power = rng.random_range(0.3..1.5);
            let mut x = ArrayD::zeros(IxDyn(&[r, 2 * n]));
            for mut row in x.outer_iter_mut() {
                loop {
                    row.assign(&signed(rng, &[2 * n], 0.1, 1.5));
                    let e: f64 = row.iter().map(|v| v * v).sum();
                    if (e / (power * n as f64) - 1.0).abs() > 1e-2 {
                        break;
                    }
                }
            }
            let counts = vec![n as f64; r];
            let w = uniform(rng, &[r, 2 * n], 0.5, 1.5);
            check!(x, |g, v| {
                let o = g.power_norm(v, &counts, power);
                weighted_sum(g, o, &w)
            })
        }
        "ste_quantize" => {
            let order = [4u32, 16, 64][which];
            let spec = build_spec(order, 1.0)?;
            let x = uniform(rng, &[r, c], -1.5, 1.5);
            check!(x, |g, v| {
                let o = g.ste_quantize(v, &spec);
                weighted_sum(g, o, &w)
            })
        }
        "relaxed_chain" => relaxed_chain_case(rng, r, opts),
        other => unreachable!("unknown suite node {other}"),
    }
}

/// clip, dither, frozen AWGN, dither, two-layer decoder, MSE.
fn relaxed_chain_case(rng: &mut ChaCha8Rng, rows: usize, opts: &SuiteOptions) -> Result<GradCheck> {
    const WIDTH: usize = 16;
    const HIDDEN: usize = 24;
    const OUT: usize = 8;
    let order = [4u32, 16, 64, 256, 1024][rng.random_range(0..5)];
    let spec = build_spec(order, 1.0)?;
    let params = ChannelParams::awgn(rng.random_range(0.0..20.0), 1.0)?;
    let a = spec.bound;
    let x = Array::from_shape_simple_fn(IxDyn(&[rows, WIDTH]), || loop {
        let v: f64 = rng.random_range(-1.5 * a..1.5 * a);
        if (v.abs() - a).abs() > 1e-4 {
            break v;
        }
    });
    let d = spec.spacing;
    let u1 = Array::from_shape_simple_fn(IxDyn(&[rows, WIDTH]), || open_uniform(rng, d));
    let u2 = Array::from_shape_simple_fn(IxDyn(&[rows, WIDTH]), || open_uniform(rng, d));
    let sd = (noise_sigma2(&params) / 2.0).sqrt();
    let e = Array::from_shape_simple_fn(IxDyn(&[rows, WIDTH]), || {
        sd * rng.sample::<f64, _>(StandardNormal)
    });
    let w1 = uniform(rng, &[WIDTH, HIDDEN], -0.5, 0.5);
    let b1 = uniform(rng, &[HIDDEN], -0.1, 0.1);
    let w2 = uniform(rng, &[HIDDEN, OUT], -0.5, 0.5);
    let b2 = uniform(rng, &[OUT], -0.1, 0.1);
    let target = uniform(rng, &[rows, OUT], 0.0, 1.0);
    gradient_check_with(
        |g: &mut Graph, v: Var| {
            let s = g.clip(v, a);
            let s = g.uniform_noise(s, &u1);
            let s = g.add_const(s, &e);
            let s = g.uniform_noise(s, &u2);
            let (w1, b1) = (g.input(w1.clone()), g.input(b1.clone()));
            let (w2, b2) = (g.input(w2.clone()), g.input(b2.clone()));
            let h = g.matmul(s, w1);
            let h = g.add_row(h, b1);
            let h = g.relu(h);
            let o = g.matmul(h, w2);
            let o = g.add_row(o, b2);
            let t = g.input(target.clone());
            g.mse(o, t)
        },
        &x,
        opts.eps,
        opts.fault,
    )
}

/// Runs `opts.cases` random cases for every node type and the full relaxed
/// chain.
pub fn run_suite(opts: &SuiteOptions) -> Result<SuiteReport> {
    let base = RngState::new(opts.seed, 0);
    let mut rows = Vec::with_capacity(SUITE_NODES.len());
    for name in SUITE_NODES {
        let stream = base.child(name);
        let (mut max_rel_err, mut worst_case) = (0.0f64, 0);
        for case in 0..opts.cases {
            let mut rng = stream.substream(case as u64).rng();
            let r = run_case(name, &mut rng, opts)?;
            if r.max_rel_err > max_rel_err || r.max_rel_err.is_nan() {
                max_rel_err = r.max_rel_err;
                worst_case = case;
            }
        }
        rows.push(SuiteRow {
            node: name.to_string(),
            cases: opts.cases,
            max_rel_err,
            worst_case,
            advisory: name == "ste_quantize",
        });
    }
    Ok(SuiteReport {
        rows,
        tolerance: SUITE_TOLERANCE,
    })
}
