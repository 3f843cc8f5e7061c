//! Reverse-mode gradients over a recorded program of vector primitives.
//!
//! A [`Program`] is an immutable list of operations from one D-dimensional
//! input to a scalar output. Values are vectors (scalars are length-1
//! vectors). [`Program::gradient`] runs one forward pass, then pulls the
//! output adjoint back through each primitive's exact local derivative.
//!
//! The vocabulary is the one needed to differentiate the propulsive energy
//! through a look-ahead rollout: linear combinations, matrix-vector
//! products, constant offsets, elementwise `tanh`/`cos`, the exact mixture
//! noise prediction, dot products, norms, cosine similarity, sums and a max
//! that records which branch it selected.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, param, Error, Result};
use crate::mixture::GaussianMixture;
use crate::schedule::NoiseSchedule;
use crate::vecops::{dot, norm};

/// Denominator floor for cosine similarity.
pub const COSINE_FLOOR: f64 = 1e-12;

/// Handle to a value inside a program under construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node(usize);

impl Node {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<'a> {
    Input,
    /// `ca * a + cb * b`
    LinComb { a: Node, ca: f64, b: Node, cb: f64 },
    Scale { x: Node, c: f64 },
    /// Row-major `rows x cols` matrix times `x`.
    MatVec { m: &'a [f64], rows: usize, x: Node },
    AddConst { x: Node, c: &'a [f64] },
    /// DDIM update written exactly as `ddim_step` computes it:
    /// `x0 = (x - sn * eps) / sa`, `out = san * x0 + snn * eps`.
    DdimUpdate { x: Node, eps: Node, sa: f64, sn: f64, san: f64, snn: f64 },
    Tanh(Node),
    Cos(Node),
    MixtureEps { x: Node, t: usize, mixture: &'a GaussianMixture, schedule: &'a NoiseSchedule },
    Dot { a: Node, b: Node },
    DotConst { x: Node, c: &'a [f64] },
    Norm(Node),
    Cosine { a: Node, b: Node },
    CosineConst { x: Node, c: &'a [f64] },
    Sum(Vec<Node>),
    Max(Vec<Node>),
}

impl Op<'_> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::LinComb { .. } => "lincomb",
            Op::Scale { .. } => "scale",
            Op::MatVec { .. } => "matvec",
            Op::AddConst { .. } => "add_const",
            Op::DdimUpdate { .. } => "ddim_update",
            Op::Tanh(_) => "tanh",
            Op::Cos(_) => "cos",
            Op::MixtureEps { .. } => "mixture_eps",
            Op::Dot { .. } => "dot",
            Op::DotConst { .. } => "dot_const",
            Op::Norm(_) => "norm",
            Op::Cosine { .. } => "cosine",
            Op::CosineConst { .. } => "cosine_const",
            Op::Sum(_) => "sum",
            Op::Max(_) => "max",
        }
    }
}

/// Records operations; [`ProgramBuilder::finish`] seals them into a [`Program`].
#[derive(Debug, Clone)]
pub struct ProgramBuilder<'a> {
    input_dim: usize,
    ops: Vec<Op<'a>>,
    dims: Vec<usize>,
}

impl<'a> ProgramBuilder<'a> {
    pub fn new(input_dim: usize) -> Self {
        Self { input_dim, ops: vec![Op::Input], dims: vec![input_dim] }
    }

    pub fn input(&self) -> Node {
        Node(0)
    }

    pub fn dim(&self, n: Node) -> usize {
        self.dims[n.0]
    }

    fn push(&mut self, op: Op<'a>, dim: usize) -> Node {
        self.ops.push(op);
        self.dims.push(dim);
        Node(self.ops.len() - 1)
    }

    fn same_dim(&self, a: Node, b: Node) -> Result<usize> {
        check_dim(self.dims[a.0], self.dims[b.0])?;
        Ok(self.dims[a.0])
    }

    fn scalar(&self, n: Node) -> Result<()> {
        check_dim(1, self.dims[n.0])
    }

    pub fn lincomb(&mut self, a: Node, ca: f64, b: Node, cb: f64) -> Result<Node> {
        let d = self.same_dim(a, b)?;
        Ok(self.push(Op::LinComb { a, ca, b, cb }, d))
    }

    pub fn add(&mut self, a: Node, b: Node) -> Result<Node> {
        self.lincomb(a, 1.0, b, 1.0)
    }

    pub fn scale(&mut self, x: Node, c: f64) -> Node {
        let d = self.dims[x.0];
        self.push(Op::Scale { x, c }, d)
    }

    /// `m` is row-major with `rows` rows and `dim(x)` columns.
    pub fn matvec(&mut self, m: &'a [f64], rows: usize, x: Node) -> Result<Node> {
        let cols = self.dims[x.0];
        if rows == 0 || m.len() != rows * cols {
            return Err(param("matrix shape does not match operand"));
        }
        Ok(self.push(Op::MatVec { m, rows, x }, rows))
    }

    pub fn add_const(&mut self, x: Node, c: &'a [f64]) -> Result<Node> {
        check_dim(self.dims[x.0], c.len())?;
        let d = c.len();
        Ok(self.push(Op::AddConst { x, c }, d))
    }

    /// Deterministic DDIM step from timestep `t` to `t_next` given the state
    /// and its noise prediction.
    pub fn ddim_update(
        &mut self,
        x: Node,
        eps: Node,
        t: usize,
        t_next: usize,
        schedule: &NoiseSchedule,
    ) -> Result<Node> {
        let d = self.same_dim(x, eps)?;
        if t == 0 || t_next >= t || t > schedule.total_steps() {
            return Err(Error::Ordering { from: t, to: t_next });
        }
        let (a, an) = (schedule.alpha_bar(t), schedule.alpha_bar(t_next));
        let op = Op::DdimUpdate {
            x,
            eps,
            sa: libm::sqrt(a),
            sn: libm::sqrt(1.0 - a),
            san: libm::sqrt(an),
            snn: libm::sqrt(1.0 - an),
        };
        Ok(self.push(op, d))
    }

    pub fn tanh(&mut self, x: Node) -> Node {
        let d = self.dims[x.0];
        self.push(Op::Tanh(x), d)
    }

    pub fn cos(&mut self, x: Node) -> Node {
        let d = self.dims[x.0];
        self.push(Op::Cos(x), d)
    }

    /// Exact mixture noise prediction at timestep `t >= 1`.
    pub fn mixture_eps(
        &mut self,
        x: Node,
        t: usize,
        mixture: &'a GaussianMixture,
        schedule: &'a NoiseSchedule,
    ) -> Result<Node> {
        check_dim(mixture.dim(), self.dims[x.0])?;
        if t == 0 || t > schedule.total_steps() {
            return Err(Error::Domain(alloc::format!("mixture noise prediction needs 1 <= t <= T, got {t}")));
        }
        let d = self.dims[x.0];
        Ok(self.push(Op::MixtureEps { x, t, mixture, schedule }, d))
    }

    pub fn dot(&mut self, a: Node, b: Node) -> Result<Node> {
        self.same_dim(a, b)?;
        Ok(self.push(Op::Dot { a, b }, 1))
    }

    pub fn dot_const(&mut self, x: Node, c: &'a [f64]) -> Result<Node> {
        check_dim(self.dims[x.0], c.len())?;
        Ok(self.push(Op::DotConst { x, c }, 1))
    }

    pub fn norm(&mut self, x: Node) -> Node {
        self.push(Op::Norm(x), 1)
    }

    pub fn cosine(&mut self, a: Node, b: Node) -> Result<Node> {
        self.same_dim(a, b)?;
        Ok(self.push(Op::Cosine { a, b }, 1))
    }

    pub fn cosine_const(&mut self, x: Node, c: &'a [f64]) -> Result<Node> {
        check_dim(self.dims[x.0], c.len())?;
        Ok(self.push(Op::CosineConst { x, c }, 1))
    }

    pub fn sum(&mut self, terms: &[Node]) -> Result<Node> {
        if terms.is_empty() {
            return Err(param("sum needs at least one term"));
        }
        for t in terms {
            self.scalar(*t)?;
        }
        Ok(self.push(Op::Sum(terms.to_vec()), 1))
    }

    /// Maximum over scalar nodes. Ties resolve to the lowest position in `terms`.
    pub fn max(&mut self, terms: &[Node]) -> Result<Node> {
        if terms.is_empty() {
            return Err(param("max needs at least one term"));
        }
        for t in terms {
            self.scalar(*t)?;
        }
        Ok(self.push(Op::Max(terms.to_vec()), 1))
    }

    /// Seals the program with `output` as its scalar result.
    pub fn finish(mut self, output: Node) -> Result<Program<'a>> {
        self.scalar(output)?;
        self.ops.truncate(output.0 + 1);
        self.dims.truncate(output.0 + 1);
        Ok(Program { input_dim: self.input_dim, ops: self.ops, dims: self.dims })
    }
}

/// An immutable scalar-valued program of one vector input.
#[derive(Debug, Clone)]
pub struct Program<'a> {
    input_dim: usize,
    ops: Vec<Op<'a>>,
    dims: Vec<usize>,
}

/// Forward-pass record of a program at one input.
#[derive(Debug, Clone)]
pub struct Evaluation {
    values: Vec<Vec<f64>>,
    choices: Vec<Option<usize>>,
    degenerate: bool,
}

impl Evaluation {
    /// The program's scalar output.
    pub fn value(&self) -> f64 {
        self.values[self.values.len() - 1][0]
    }

    pub fn node_value(&self, n: Node) -> &[f64] {
        &self.values[n.0]
    }

    /// Position selected by a max node.
    pub fn choice(&self, n: Node) -> Option<usize> {
        self.choices[n.0]
    }

    /// True when a cosine hit its denominator floor.
    pub fn degenerate(&self) -> bool {
        self.degenerate
    }
}

fn first_max(vals: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in vals.enumerate() {
        if i == 0 || v > best.1 {
            best = (i, v);
        }
    }
    best
}

impl<'a> Program<'a> {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x)?.value())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Evaluation> {
        check_dim(self.input_dim, x.len())?;
        let n = self.ops.len();
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut choices = vec![None; n];
        let mut degenerate = false;
        for (i, op) in self.ops.iter().enumerate() {
            let v = |k: Node| -> &Vec<f64> { &values[k.0] };
            let out: Vec<f64> = match op {
                Op::Input => x.to_vec(),
                Op::LinComb { a, ca, b, cb } => {
                    v(*a).iter().zip(v(*b)).map(|(p, q)| ca * p + cb * q).collect()
                }
                Op::Scale { x, c } => v(*x).iter().map(|p| c * p).collect(),
                Op::MatVec { m, rows, x } => {
                    let xv = v(*x);
                    let cols = xv.len();
                    (0..*rows).map(|r| dot(&m[r * cols..(r + 1) * cols], xv)).collect()
                }
                Op::AddConst { x, c } => v(*x).iter().zip(c.iter()).map(|(p, q)| p + q).collect(),
                Op::DdimUpdate { x, eps, sa, sn, san, snn } => v(*x)
                    .iter()
                    .zip(v(*eps))
                    .map(|(xi, ei)| san * ((xi - sn * ei) / sa) + snn * ei)
                    .collect(),
                Op::Tanh(x) => v(*x).iter().map(|p| libm::tanh(*p)).collect(),
                Op::Cos(x) => v(*x).iter().map(|p| libm::cos(*p)).collect(),
                Op::MixtureEps { x, t, mixture, schedule } => mixture.epsilon(v(*x), *t, schedule)?,
                Op::Dot { a, b } => vec![dot(v(*a), v(*b))],
                Op::DotConst { x, c } => vec![dot(v(*x), c)],
                Op::Norm(x) => vec![norm(v(*x))],
                Op::Cosine { a, b } => {
                    let (c, deg) = floored_cosine(v(*a), v(*b));
                    degenerate |= deg;
                    vec![c]
                }
                Op::CosineConst { x, c } => {
                    let (c, deg) = floored_cosine(v(*x), c);
                    degenerate |= deg;
                    vec![c]
                }
                Op::Sum(ts) => vec![ts.iter().map(|t| values[t.0][0]).sum()],
                Op::Max(ts) => {
                    let (idx, best) = first_max(ts.iter().map(|t| values[t.0][0]));
                    choices[i] = Some(idx);
                    vec![best]
                }
            };
            if !out.iter().all(|o| o.is_finite()) {
                return Err(Error::Evaluation { primitive: op.name(), node: i });
            }
            values.push(out);
        }
        Ok(Evaluation { values, choices, degenerate })
    }

    /// Exact gradient of the output with respect to the input.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_gradient(x)?.1)
    }

    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(Evaluation, Vec<f64>)> {
        let ev = self.forward(x)?;
        let grad = self.backward(&ev)?;
        Ok((ev, grad))
    }

    fn backward(&self, ev: &Evaluation) -> Result<Vec<f64>> {
        let n = self.ops.len();
        let mut adj: Vec<Vec<f64>> = self.dims.iter().map(|d| vec![0.0; *d]).collect();
        adj[n - 1][0] = 1.0;
        let vals = &ev.values;
        for i in (1..n).rev() {
            let g = core::mem::take(&mut adj[i]);
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            match &self.ops[i] {
                Op::Input => {}
                Op::LinComb { a, ca, b, cb } => {
                    axpy(&mut adj[a.0], *ca, &g);
                    axpy(&mut adj[b.0], *cb, &g);
                }
                Op::Scale { x, c } => axpy(&mut adj[x.0], *c, &g),
                Op::MatVec { m, rows, x } => {
                    let cols = self.dims[x.0];
                    let ax = &mut adj[x.0];
                    for r in 0..*rows {
                        let row = &m[r * cols..(r + 1) * cols];
                        for (a, mv) in ax.iter_mut().zip(row) {
                            *a += g[r] * mv;
                        }
                    }
                }
                Op::AddConst { x, .. } => axpy(&mut adj[x.0], 1.0, &g),
                Op::DdimUpdate { x, eps, sa, sn, san, snn } => {
                    axpy(&mut adj[x.0], san / sa, &g);
                    axpy(&mut adj[eps.0], snn - san * sn / sa, &g);
                }
                Op::Tanh(x) => {
                    let out = &vals[i];
                    let ax = &mut adj[x.0];
                    for ((a, gi), y) in ax.iter_mut().zip(&g).zip(out) {
                        *a += gi * (1.0 - y * y);
                    }
                }
                Op::Cos(x) => {
                    let inp = &vals[x.0];
                    let ax = &mut adj[x.0];
                    for ((a, gi), u) in ax.iter_mut().zip(&g).zip(inp) {
                        *a -= gi * libm::sin(*u);
                    }
                }
                Op::MixtureEps { x, t, mixture, schedule } => {
                    let (_, vjp) = mixture.epsilon_with_vjp(&vals[x.0], *t, schedule, &g)?;
                    axpy(&mut adj[x.0], 1.0, &vjp);
                }
                Op::Dot { a, b } => {
                    let (va, vb) = (vals[a.0].clone(), vals[b.0].clone());
                    axpy(&mut adj[a.0], g[0], &vb);
                    axpy(&mut adj[b.0], g[0], &va);
                }
                Op::DotConst { x, c } => axpy(&mut adj[x.0], g[0], c),
                Op::Norm(x) => {
                    let nv = vals[i][0];
                    if nv > 0.0 {
                        let xv = vals[x.0].clone();
                        axpy(&mut adj[x.0], g[0] / nv, &xv);
                    }
                }
                Op::Cosine { a, b } => {
                    let (va, vb) = (vals[a.0].clone(), vals[b.0].clone());
                    let c = vals[i][0];
                    let ga = cosine_grad(&va, &vb, c);
                    let gb = cosine_grad(&vb, &va, c);
                    axpy(&mut adj[a.0], g[0], &ga);
                    axpy(&mut adj[b.0], g[0], &gb);
                }
                Op::CosineConst { x, c } => {
                    let ga = cosine_grad(&vals[x.0], c, vals[i][0]);
                    axpy(&mut adj[x.0], g[0], &ga);
                }
                Op::Sum(ts) => {
                    for t in ts {
                        adj[t.0][0] += g[0];
                    }
                }
                Op::Max(ts) => {
                    let k = ev.choices[i].expect("max node records its choice");
                    adj[ts[k].0][0] += g[0];
                }
            }
        }
        let grad = core::mem::take(&mut adj[0]);
        if !grad.iter().all(|v| v.is_finite()) {
            return Err(Error::Evaluation { primitive: "gradient", node: 0 });
        }
        Ok(grad)
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Cosine similarity with both norms floored at [`COSINE_FLOOR`]; the flag
/// reports whether a floor was hit.
pub(crate) fn floored_cosine(a: &[f64], b: &[f64]) -> (f64, bool) {
    let floor2 = COSINE_FLOOR * COSINE_FLOOR;
    let (aa, bb) = (dot(a, a), dot(b, b));
    let deg = aa < floor2 || bb < floor2;
    // One square root of the product keeps cos(v, v) exactly 1.
    let c = dot(a, b) / libm::sqrt(aa.max(floor2) * bb.max(floor2));
    (c.clamp(-1.0, 1.0), deg)
}

/// d cos(a, b) / da given the forward value `c`.
fn cosine_grad(a: &[f64], b: &[f64], c: f64) -> Vec<f64> {
    let na = norm(a);
    let nb = norm(b).max(COSINE_FLOOR);
    if na < COSINE_FLOOR {
        // Floored denominator is constant in a.
        return b.iter().map(|bi| bi / (COSINE_FLOOR * nb)).collect();
    }
    a.iter().zip(b).map(|(ai, bi)| bi / (na * nb) - c * ai / (na * na)).collect()
}

/// Central-difference gradient estimate, one coordinate at a time.
pub fn finite_diff(program: &Program<'_>, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(param("finite-difference step must be positive"));
    }
    check_dim(program.input_dim(), x.len())?;
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = program.eval(&probe)?;
        probe[i] = x[i] - h;
        let down = program.eval(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}
