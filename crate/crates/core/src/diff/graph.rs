use ndarray::{Array2, ArrayD, ArrayView2, Axis, Ix2, IxDyn, Zip};

use crate::constellation::ConstellationSpec;
use crate::entropy::{clamp_scale, logistic, LIKELIHOOD_FLOOR, SCALE_MIN};
use crate::oracle::density::normal_cdf;

/// Handle to a node of a [`Graph`].
type ScalarFn = fn(f64) -> f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation tags, used for reporting and fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Leaf,
    MatMul,
    Add,
    AddRow,
    Sub,
    Mul,
    Scale,
    Affine,
    Relu,
    Tanh,
    Softplus,
    Mse,
    Concat,
    RateGu,
    RateLogistic,
    BroadcastRows,
    UniformNoise,
    AddConst,
    MulConst,
    Clip,
    SteQuantize,
    Sum,
    Mean,
    PowerNorm,
}

impl NodeKind {
    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Leaf => "leaf",
            NodeKind::MatMul => "matmul",
            NodeKind::Add => "add",
            NodeKind::AddRow => "add_row",
            NodeKind::Sub => "sub",
            NodeKind::Mul => "mul",
            NodeKind::Scale => "scale",
            NodeKind::Affine => "affine",
            NodeKind::Relu => "relu",
            NodeKind::Tanh => "tanh",
            NodeKind::Softplus => "softplus",
            NodeKind::Mse => "mse",
            NodeKind::Concat => "concat",
            NodeKind::RateGu => "rate_gu",
            NodeKind::RateLogistic => "rate_logistic",
            NodeKind::BroadcastRows => "broadcast_rows",
            NodeKind::UniformNoise => "uniform_noise",
            NodeKind::AddConst => "add_const",
            NodeKind::MulConst => "mul_const",
            NodeKind::Clip => "clip",
            NodeKind::SteQuantize => "ste_quantize",
            NodeKind::Sum => "sum",
            NodeKind::Mean => "mean",
            NodeKind::PowerNorm => "power_norm",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        ALL_KINDS.iter().copied().find(|k| k.name() == name)
    }
}

pub const ALL_KINDS: [NodeKind; 24] = [
    NodeKind::Leaf,
    NodeKind::MatMul,
    NodeKind::Add,
    NodeKind::AddRow,
    NodeKind::Sub,
    NodeKind::Mul,
    NodeKind::Scale,
    NodeKind::Affine,
    NodeKind::Relu,
    NodeKind::Tanh,
    NodeKind::Softplus,
    NodeKind::Mse,
    NodeKind::Concat,
    NodeKind::RateGu,
    NodeKind::RateLogistic,
    NodeKind::BroadcastRows,
    NodeKind::UniformNoise,
    NodeKind::AddConst,
    NodeKind::MulConst,
    NodeKind::Clip,
    NodeKind::SteQuantize,
    NodeKind::Sum,
    NodeKind::Mean,
    NodeKind::PowerNorm,
];

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Affine(Var, f64),
    Relu(Var),
    Tanh(Var),
    Softplus(Var),
    Mse(Var, Var),
    Concat(Var, Var),
    RateGu(Var, Var, Var),
    RateLogistic(Var, Var, Var),
    BroadcastRows(Var),
    Identity(NodeKind, Var),
    MulConst(Var, ArrayD<f64>),
    Clip(Var, f64),
    Sum(Var),
    Mean(Var),
    PowerNorm(Var, Vec<Option<f64>>),
}

impl Op {
    fn kind(&self) -> NodeKind {
        match self {
            Op::Leaf => NodeKind::Leaf,
            Op::MatMul(..) => NodeKind::MatMul,
            Op::Add(..) => NodeKind::Add,
            Op::AddRow(..) => NodeKind::AddRow,
            Op::Sub(..) => NodeKind::Sub,
            Op::Mul(..) => NodeKind::Mul,
            Op::Scale(..) => NodeKind::Scale,
            Op::Affine(..) => NodeKind::Affine,
            Op::Relu(_) => NodeKind::Relu,
            Op::Tanh(_) => NodeKind::Tanh,
            Op::Softplus(_) => NodeKind::Softplus,
            Op::Mse(..) => NodeKind::Mse,
            Op::Concat(..) => NodeKind::Concat,
            Op::RateGu(..) => NodeKind::RateGu,
            Op::RateLogistic(..) => NodeKind::RateLogistic,
            Op::BroadcastRows(_) => NodeKind::BroadcastRows,
            Op::Identity(k, _) => *k,
            Op::MulConst(..) => NodeKind::MulConst,
            Op::Clip(..) => NodeKind::Clip,
            Op::Sum(_) => NodeKind::Sum,
            Op::Mean(_) => NodeKind::Mean,
            Op::PowerNorm(..) => NodeKind::PowerNorm,
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::AddRow(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Mse(a, b)
            | Op::Concat(a, b) => vec![*a, *b],
            Op::RateGu(a, b, c) | Op::RateLogistic(a, b, c) => vec![*a, *b, *c],
            Op::Scale(a, _)
            | Op::Affine(a, _)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Softplus(a)
            | Op::BroadcastRows(a)
            | Op::Identity(_, a)
            | Op::MulConst(a, _)
            | Op::Clip(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::PowerNorm(a, _) => vec![*a],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: ArrayD<f64>,
    grad: Option<ArrayD<f64>>,
    op: Op,
    requires_grad: bool,
}

/// A tape of array-valued nodes in insertion (topological) order.
///
/// Operations panic on shape mismatch; callers validate shapes at their
/// own boundaries.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<NodeKind>,
}

fn view2(a: &ArrayD<f64>) -> ArrayView2<'_, f64> {
    a.view()
        .into_dimensionality::<Ix2>()
        .unwrap_or_else(|_| panic!("expected a rank-2 array, got shape {:?}", a.shape()))
}

fn scalar(v: f64) -> ArrayD<f64> {
    ArrayD::from_elem(IxDyn(&[]), v)
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn logistic_pdf(t: f64) -> f64 {
    let l = logistic(-t.abs());
    l * (1.0 - l)
}

/// Box-convolved mass and its partial derivatives in `(y, mean, scale)`.
fn box_mass(
    y: f64,
    mean: f64,
    scale: f64,
    cdf: fn(f64) -> f64,
    pdf: fn(f64) -> f64,
) -> (f64, f64, f64, f64) {
    let clamped = scale < SCALE_MIN;
    let s = clamp_scale(scale);
    let c = y - mean;
    let a = c.abs();
    let (lo, hi) = ((a - 0.5) / s, (a + 0.5) / s);
    let p = if lo > 0.0 { cdf(-lo) - cdf(-hi) } else { cdf(hi) - cdf(lo) };
    let (u, l) = ((c + 0.5) / s, (c - 0.5) / s);
    let (fu, fl) = (pdf(u), pdf(l));
    let dy = (fu - fl) / s;
    let ds = if clamped { 0.0 } else { -(fu * u - fl * l) / s };
    (p, dy, -dy, ds)
}

fn rate_terms(
    y: &ArrayD<f64>,
    mean: &ArrayD<f64>,
    scale: &ArrayD<f64>,
    cdf: fn(f64) -> f64,
    pdf: fn(f64) -> f64,
) -> (ArrayD<f64>, [ArrayD<f64>; 3]) {
    assert_eq!(y.shape(), mean.shape(), "rate mean shape");
    assert_eq!(y.shape(), scale.shape(), "rate scale shape");
    let mut bits = ArrayD::zeros(y.raw_dim());
    let mut d = [
        ArrayD::zeros(y.raw_dim()),
        ArrayD::zeros(y.raw_dim()),
        ArrayD::zeros(y.raw_dim()),
    ];
    let ln2 = std::f64::consts::LN_2;
    for (i, ((y, m), s)) in y.iter().zip(mean).zip(scale).enumerate() {
        let (p, dy, dm, ds) = box_mass(*y, *m, *s, cdf, pdf);
        let (b, k) = if p < LIKELIHOOD_FLOOR {
            (-LIKELIHOOD_FLOOR.log2(), 0.0)
        } else {
            (-p.log2(), -1.0 / (p * ln2))
        };
        bits.as_slice_mut().unwrap()[i] = b;
        d[0].as_slice_mut().unwrap()[i] = k * dy;
        d[1].as_slice_mut().unwrap()[i] = k * dm;
        d[2].as_slice_mut().unwrap()[i] = k * ds;
    }
    (bits, d)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose backward pass for `kind` is deliberately wrong.
    pub fn with_fault(kind: NodeKind) -> Self {
        Self {
            nodes: Vec::new(),
            fault: Some(kind),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op) -> Var {
        let requires_grad = op
            .parents()
            .iter()
            .any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: ArrayD<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input.
    pub fn input(&mut self, value: ArrayD<f64>) -> Var {
        self.leaf(value, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: ArrayD<f64>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let a = self.value(v);
        assert_eq!(a.len(), 1, "not a scalar: shape {:?}", a.shape());
        a.iter().next().copied().unwrap()
    }

    pub fn grad(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn kind(&self, v: Var) -> NodeKind {
        self.nodes[v.0].op.kind()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = view2(self.value(a)).dot(&view2(self.value(b)));
        self.push(v.into_dyn(), Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "add");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// Adds a length-n (or 1 x n) bias to every row of a rows x n matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let x = view2(self.value(a));
        let b = self.value(bias);
        assert_eq!(b.len(), x.ncols(), "add_row bias length");
        let b = b.view().into_shape_with_order(x.ncols()).unwrap();
        let v = &x + &b;
        self.push(v.into_dyn(), Op::AddRow(a, bias))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "sub");
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "mul");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    /// `k * a + shift`.
    pub fn affine(&mut self, a: Var, k: f64, shift: f64) -> Var {
        let v = self.value(a).mapv(|x| k * x + shift);
        self.push(v, Op::Affine(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(softplus);
        self.push(v, Op::Softplus(a))
    }

    /// Mean of squared differences, as a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mse");
        let n = x.len().max(1) as f64;
        let v = Zip::from(x).and(y).fold(0.0, |s, a, b| s + (a - b) * (a - b)) / n;
        self.push(scalar(v), Op::Mse(a, b))
    }

    /// Column-wise concatenation of two matrices with equal row counts.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let v = ndarray::concatenate(Axis(1), &[view2(self.value(a)), view2(self.value(b))])
            .expect("concat row counts");
        self.push(v.into_dyn(), Op::Concat(a, b))
    }

    /// Elementwise `-log2` of the box-convolved Gaussian mass.
    pub fn rate_gu(&mut self, y: Var, mean: Var, scale: Var) -> Var {
        let (bits, _) = rate_terms(
            self.value(y),
            self.value(mean),
            self.value(scale),
            normal_cdf,
            normal_pdf,
        );
        self.push(bits, Op::RateGu(y, mean, scale))
    }

    /// Elementwise `-log2` of the box-convolved logistic mass.
    pub fn rate_logistic(&mut self, z: Var, loc: Var, scale: Var) -> Var {
        let (bits, _) = rate_terms(
            self.value(z),
            self.value(loc),
            self.value(scale),
            logistic,
            logistic_pdf,
        );
        self.push(bits, Op::RateLogistic(z, loc, scale))
    }

    /// Repeats a length-n (or 1 x n) array as `rows` identical rows.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let x = self.value(a);
        let n = x.len();
        let row = x.view().into_shape_with_order((1, n)).unwrap();
        let v = row.broadcast((rows, n)).unwrap().to_owned();
        self.push(v.into_dyn(), Op::BroadcastRows(a))
    }

    fn add_constant(&mut self, a: Var, c: &ArrayD<f64>, kind: NodeKind) -> Var {
        assert_eq!(self.value(a).shape(), c.shape(), "{}", kind.name());
        let v = self.value(a) + c;
        self.push(v, Op::Identity(kind, a))
    }

    /// `a + c` for an array `c` that carries no gradient.
    pub fn add_const(&mut self, a: Var, c: &ArrayD<f64>) -> Var {
        self.add_constant(a, c, NodeKind::AddConst)
    }

    /// `a + u` for a pre-drawn dither `u`; the draw is constant in `a`.
    pub fn uniform_noise(&mut self, a: Var, u: &ArrayD<f64>) -> Var {
        self.add_constant(a, u, NodeKind::UniformNoise)
    }

    /// Elementwise product with a constant (masks, weights).
    pub fn mul_const(&mut self, a: Var, c: &ArrayD<f64>) -> Var {
        assert_eq!(self.value(a).shape(), c.shape(), "mul_const");
        let v = self.value(a) * c;
        self.push(v, Op::MulConst(a, c.clone()))
    }

    /// `min(max(a, -bound), bound)`; the gradient is 1 on the closed interval.
    pub fn clip(&mut self, a: Var, bound: f64) -> Var {
        assert!(bound > 0.0, "clip bound must be > 0");
        let v = self.value(a).mapv(|x| x.clamp(-bound, bound));
        self.push(v, Op::Clip(a, bound))
    }

    /// Nearest-level quantization per component with an identity backward pass.
    pub fn ste_quantize(&mut self, a: Var, spec: &ConstellationSpec) -> Var {
        let v = self.value(a).mapv(|x| spec.quantize_component(x));
        self.push(v, Op::Identity(NodeKind::SteQuantize, a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).sum();
        self.push(scalar(v), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = x.sum() / x.len().max(1) as f64;
        self.push(scalar(v), Op::Mean(a))
    }

    /// Per-row power cap. Row `r` holds `counts[r]` complex symbols as
    /// interleaved real pairs (masked entries are zero); rows whose average
    /// symbol energy exceeds `power` are scaled down onto it.
    pub fn power_norm(&mut self, a: Var, counts: &[f64], power: f64) -> Var {
        let x = view2(self.value(a));
        assert_eq!(x.nrows(), counts.len(), "power_norm counts");
        let mut out = x.to_owned();
        let mut factors = Vec::with_capacity(counts.len());
        for (mut row, k) in out.rows_mut().into_iter().zip(counts) {
            let energy: f64 = row.iter().map(|v| v * v).sum();
            if *k > 0.0 && energy > power * k {
                let c = (power * k / energy).sqrt();
                row.mapv_inplace(|v| v * c);
                factors.push(Some(c));
            } else {
                factors.push(None);
            }
        }
        self.push(out.into_dyn(), Op::PowerNorm(a, factors))
    }

    fn accumulate(grads: &mut [Option<ArrayD<f64>>], v: Var, g: ArrayD<f64>) {
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot => *slot = Some(g),
        }
    }

    /// Reverse pass from `out`, seeding its gradient with ones. Gradients of
    /// earlier calls are replaced. A no-op if nothing upstream requires
    /// gradients.
    pub fn backward(&mut self, out: Var) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.nodes[out.0].requires_grad {
            return;
        }
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(ArrayD::ones(self.nodes[out.0].value.raw_dim()));
        for i in (0..=out.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            self.nodes[i].grad = Some(g);
        }
    }

    fn propagate(&self, i: usize, g: &ArrayD<f64>, grads: &mut [Option<ArrayD<f64>>]) {
        let node = &self.nodes[i];
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        let val = |v: &Var| &self.nodes[v.0].value;
        let faulty = self.fault == Some(node.op.kind());
        let mut send = |v: &Var, mut d: ArrayD<f64>| {
            if needs(v) {
                if faulty {
                    d *= 1.01;
                }
                Self::accumulate(grads, *v, d);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let g2 = view2(g);
                if needs(a) {
                    send(a, g2.dot(&view2(val(b)).t()).into_dyn());
                }
                if needs(b) {
                    send(b, view2(val(a)).t().dot(&g2).into_dyn());
                }
            }
            Op::Add(a, b) => {
                send(a, g.clone());
                send(b, g.clone());
            }
            Op::AddRow(a, b) => {
                send(a, g.clone());
                if needs(b) {
                    let s = view2(g).sum_axis(Axis(0));
                    let d = s.into_shape_with_order(val(b).raw_dim()).unwrap();
                    send(b, d);
                }
            }
            Op::Sub(a, b) => {
                send(a, g.clone());
                send(b, -g);
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    send(a, g * val(b));
                }
                if needs(b) {
                    send(b, g * val(a));
                }
            }
            Op::Scale(a, k) | Op::Affine(a, k) => send(a, g * *k),
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(val(a))
                    .for_each(|d, x| *d = if *x > 0.0 { *d } else { 0.0 });
                send(a, d);
            }
            Op::Tanh(_) => {
                let y = &node.value;
                let mut d = g.clone();
                Zip::from(&mut d).and(y).for_each(|d, y| *d *= 1.0 - y * y);
                send(&node.op.parents()[0], d);
            }
            Op::Softplus(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(a)).for_each(|d, x| *d *= logistic(*x));
                send(a, d);
            }
            Op::Mse(a, b) => {
                let gs = g.iter().next().copied().unwrap();
                let n = val(a).len().max(1) as f64;
                let diff = (val(a) - val(b)) * (2.0 * gs / n);
                if needs(b) {
                    send(b, -&diff);
                }
                send(a, diff);
            }
            Op::Concat(a, b) => {
                let g2 = view2(g);
                let na = view2(val(a)).ncols();
                send(a, g2.slice(ndarray::s![.., ..na]).to_owned().into_dyn());
                send(b, g2.slice(ndarray::s![.., na..]).to_owned().into_dyn());
            }
            Op::RateGu(y, m, s) | Op::RateLogistic(y, m, s) => {
                let (cdf, pdf): (ScalarFn, ScalarFn) =
                    if matches!(node.op, Op::RateGu(..)) {
                        (normal_cdf, normal_pdf)
                    } else {
                        (logistic, logistic_pdf)
                    };
                let (_, [dy, dm, ds]) = rate_terms(val(y), val(m), val(s), cdf, pdf);
                send(y, dy * g);
                send(m, dm * g);
                send(s, ds * g);
            }
            Op::BroadcastRows(a) => {
                let s = view2(g).sum_axis(Axis(0));
                send(a, s.into_shape_with_order(val(a).raw_dim()).unwrap());
            }
            Op::Identity(_, a) => send(a, g.clone()),
            Op::MulConst(a, c) => send(a, g * c),
            Op::Clip(a, bound) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(val(a))
                    .for_each(|d, x| *d = if x.abs() <= *bound { *d } else { 0.0 });
                send(a, d);
            }
            Op::Sum(a) => {
                let gs = g.iter().next().copied().unwrap();
                send(a, ArrayD::from_elem(val(a).raw_dim(), gs));
            }
            Op::Mean(a) => {
                let gs = g.iter().next().copied().unwrap();
                let n = val(a).len().max(1) as f64;
                send(a, ArrayD::from_elem(val(a).raw_dim(), gs / n));
            }
            Op::PowerNorm(a, factors) => {
                let x = view2(val(a));
                let g2 = view2(g);
                let mut d = Array2::zeros(x.raw_dim());
                for (r, f) in factors.iter().enumerate() {
                    let (xr, gr) = (x.row(r), g2.row(r));
                    let mut dr = d.row_mut(r);
                    match f {
                        None => dr.assign(&gr),
                        Some(c) => {
                            let energy = xr.dot(&xr);
                            let proj = gr.dot(&xr) / energy;
                            Zip::from(&mut dr)
                                .and(&gr)
                                .and(&xr)
                                .for_each(|d, g, x| *d = c * (g - x * proj));
                        }
                    }
                }
                send(a, d.into_dyn());
            }
        }
    }
}
