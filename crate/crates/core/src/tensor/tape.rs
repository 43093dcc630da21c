use rand::Rng;

use super::gemm::{gemm, MatRef};
use super::{check_shape, ops, Real, Tensor};
use crate::error::{ColoError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
    generation: u64,
}

impl Var {
    pub fn id(self) -> usize {
        self.id
    }
}

/// Key-side visibility rules for attention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttnMask {
    /// `false` entries are never attended to (padding).
    pub keys: Vec<bool>,
    /// Query `i` may only see keys `j <= i`.
    pub causal: bool,
}

impl AttnMask {
    pub fn padding(keys: Vec<bool>) -> Self {
        Self { keys, causal: false }
    }

    pub fn causal(keys: Vec<bool>) -> Self {
        Self { keys, causal: true }
    }

    #[inline]
    pub(crate) fn allowed(&self, i: usize, j: usize) -> bool {
        self.keys[j] && (!self.causal || j <= i)
    }
}

enum Op<F> {
    Leaf,
    MatMul { a: Var, b: Var, av: MatRef, bv: MatRef },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, F),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Gelu(Var),
    Dropout(Var, Vec<F>),
    Embedding { table: Var, ids: Vec<usize> },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<F>, rstd: Vec<F> },
    Attention { q: Var, k: Var, v: Var, heads: usize, scale: F, probs: Vec<F>, keep: Option<Vec<F>> },
    MeanPool { x: Var, mask: Vec<bool>, count: usize },
    Cosine { u: Var, v: Var, nu: F, nv: F, denom: F, sim: F, floored: bool },
    CrossEntropy { logits: Var, targets: Vec<usize>, mask: Vec<bool>, probs: Vec<F>, count: usize },
    Sum(Var),
    Reshape(Var),
}

struct Node<F> {
    value: Vec<F>,
    shape: Vec<usize>,
    op: Op<F>,
    requires_grad: bool,
}

/// Cosine denominators below this are floored.
pub const COSINE_EPS: f64 = 1e-8;
/// Variance epsilon of layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Ordered record of operations; the backward pass replays it in reverse.
///
/// A tape is single threaded. Build a fresh one (or [`Tape::reset`]) per
/// training step.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
    generation: u64,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), generation: 0 }
    }

    /// Drops every recorded node; outstanding `Var`s become invalid.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.generation += 1;
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> &Node<F> {
        assert_eq!(v.generation, self.generation, "stale Var from a previous tape generation");
        &self.nodes[v.id]
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor<F> {
        let n = self.node(v);
        Tensor { shape: n.shape.clone(), data: n.value.clone() }
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> F {
        self.node(v).value[0]
    }

    /// Gradient of the last backward root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        assert_eq!(v.generation, self.generation, "stale Var from a previous tape generation");
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    fn push(&mut self, name: &'static str, value: Vec<F>, shape: Vec<usize>, op: Op<F>, requires_grad: bool) -> Result<Var> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(ColoError::NonFinite { op: name });
        }
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        let id = self.nodes.len();
        self.nodes.push(Node { value, shape, op, requires_grad });
        Ok(Var { id, generation: self.generation })
    }

    fn leaf(&mut self, t: Tensor<F>, requires_grad: bool) -> Result<Var> {
        check_shape(&t.shape)?;
        self.push("leaf", t.data, t.shape, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: &Tensor<F>) -> Result<Var> {
        self.leaf(t.clone(), true)
    }

    pub fn constant(&mut self, t: Tensor<F>) -> Result<Var> {
        self.leaf(t, false)
    }

    /// Copies the value of `x` into a new constant with no gradient path.
    pub fn detach(&mut self, x: Var) -> Result<Var> {
        let t = self.tensor(x);
        self.constant(t)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(ColoError::Dimension { op, detail: format!("expected a matrix, got shape {s:?}") }),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(ColoError::Dimension { op, detail: format!("shapes {:?} and {:?} differ", self.shape(a), self.shape(b)) });
        }
        Ok(())
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.node(v).requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) * op(b)` where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (ar, ac) = self.dims2(a, "matmul")?;
        let (br, bc) = self.dims2(b, "matmul")?;
        let av = if ta { MatRef::dense(ar, ac).t() } else { MatRef::dense(ar, ac) };
        let bv = if tb { MatRef::dense(br, bc).t() } else { MatRef::dense(br, bc) };
        if av.cols != bv.rows {
            return Err(ColoError::Dimension { op: "matmul", detail: format!("inner dimensions {} and {} disagree", av.cols, bv.rows) });
        }
        let (m, n) = (av.rows, bv.cols);
        let mut out = vec![F::zero(); m * n];
        gemm(F::one(), self.value(a), av, self.value(b), bv, F::zero(), &mut out, MatRef::dense(m, n));
        let rg = self.rg(&[a, b]);
        self.push("matmul", out, vec![m, n], Op::MatMul { a, b, av, bv }, rg)
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(F, F) -> F, op: Op<F>) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let out: Vec<F> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        self.push(name, out, shape, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`d` row vector to every row of `x[.., d]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap();
        if self.value(bias).len() != d {
            return Err(ColoError::Dimension { op: "add_row", detail: format!("bias of length {} for rows of width {d}", self.value(bias).len()) });
        }
        let b = self.value(bias);
        let out: Vec<F> = self.value(x).chunks(d).flat_map(|row| row.iter().zip(b).map(|(&r, &c)| r + c)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x, bias]);
        self.push("add_row", out, shape, Op::AddRow(x, bias), rg)
    }

    pub fn scale(&mut self, x: Var, c: F) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        self.push("scale", out, shape, Op::Scale(x, c), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: F) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| v + c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        self.push("add_scalar", out, shape, Op::AddScalar(x), rg)
    }

    fn unary(&mut self, x: Var, name: &'static str, f: impl Fn(F) -> F, op: Op<F>) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        self.push(name, out, shape, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "relu", |v| v.max(F::zero()), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "tanh", |v| v.tanh(), Op::Tanh(x))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "gelu", ops::gelu, Op::Gelu(x))
    }

    /// Inverted dropout; `rate == 0` returns `x` unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(x);
        }
        let keep_scale = F::of(1.0 / (1.0 - rate));
        let mask: Vec<F> = (0..self.value(x).len()).map(|_| if rng.gen::<f64>() < rate { F::zero() } else { keep_scale }).collect();
        let out = self.value(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        self.push("dropout", out, shape, Op::Dropout(x, mask), rg)
    }

    /// Row gather from a `[n, d]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (n, d) = self.dims2(table, "embedding")?;
        if ids.is_empty() {
            return Err(ColoError::Dimension { op: "embedding", detail: "no ids".into() });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(ColoError::Vocabulary { id: bad, size: n });
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let rg = self.rg(&[table]);
        self.push("embedding", out, vec![ids.len(), d], Op::Embedding { table, ids: ids.to_vec() }, rg)
    }

    /// Per-row normalization over the last axis followed by `gain * x + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap();
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(ColoError::Dimension { op: "layer_norm", detail: format!("gain/bias must have length {d}") });
        }
        let (out, xhat, rstd) = ops::layer_norm_forward(self.value(x), self.value(gain), self.value(bias), d);
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x, gain, bias]);
        self.push("layer_norm", out, shape, Op::LayerNorm { x, gain, bias, xhat, rstd }, rg)
    }

    /// Multi-head scaled dot-product attention over pre-projected
    /// `q[T, d]`, `k[S, d]`, `v[S, d]`. Optional dropout on the weights.
    #[allow(clippy::too_many_arguments)]
    pub fn attention<R: Rng + ?Sized>(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: &AttnMask, dropout: Option<(f64, &mut R)>) -> Result<Var> {
        let (t, d) = self.dims2(q, "attention")?;
        let (s, dk) = self.dims2(k, "attention")?;
        let (sv, dv) = self.dims2(v, "attention")?;
        if dk != d || dv != d || sv != s || heads == 0 || d % heads != 0 || mask.keys.len() != s {
            return Err(ColoError::Dimension {
                op: "attention",
                detail: format!("q {t}x{d}, k {s}x{dk}, v {sv}x{dv}, heads {heads}, mask {}", mask.keys.len()),
            });
        }
        let scale = F::of(1.0 / ((d / heads) as f64).sqrt());
        let probs = ops::attention_probs(self.value(q), self.value(k), t, s, d, heads, scale, mask);
        let keep = match dropout {
            Some((rate, rng)) if rate > 0.0 => {
                let ks = F::of(1.0 / (1.0 - rate));
                Some(probs.iter().map(|_| if rng.gen::<f64>() < rate { F::zero() } else { ks }).collect::<Vec<F>>())
            }
            _ => None,
        };
        let out = ops::attention_output(&probs, keep.as_deref(), self.value(v), t, s, d, heads);
        let rg = self.rg(&[q, k, v]);
        self.push("attention", out, vec![t, d], Op::Attention { q, k, v, heads, scale, probs, keep }, rg)
    }

    /// Mean of the rows of `states[T, d]` whose mask entry is true.
    pub fn masked_mean_pool(&mut self, states: Var, mask: &[bool]) -> Result<Var> {
        let (t, d) = self.dims2(states, "masked_mean_pool")?;
        if mask.len() != t {
            return Err(ColoError::Dimension { op: "masked_mean_pool", detail: format!("mask length {} for {t} rows", mask.len()) });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(ColoError::EmptyPool);
        }
        let sv = self.value(states);
        let mut out = vec![F::zero(); d];
        for (row, _) in sv.chunks(d).zip(mask).filter(|(_, &m)| m) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o = *o + x;
            }
        }
        let inv = F::one() / F::of(count as f64);
        out.iter_mut().for_each(|o| *o = *o * inv);
        let rg = self.rg(&[states]);
        self.push("masked_mean_pool", out, vec![d], Op::MeanPool { x: states, mask: mask.to_vec(), count }, rg)
    }

    /// `u . v / (|u| |v|)`, denominator floored at [`COSINE_EPS`].
    pub fn cosine_similarity(&mut self, u: Var, v: Var) -> Result<Var> {
        if self.value(u).len() != self.value(v).len() {
            return Err(ColoError::Dimension { op: "cosine_similarity", detail: format!("lengths {} and {}", self.value(u).len(), self.value(v).len()) });
        }
        let (uv, vv) = (self.value(u), self.value(v));
        let dot: F = uv.iter().zip(vv).map(|(&a, &b)| a * b).sum();
        let nu = uv.iter().map(|&a| a * a).sum::<F>().sqrt();
        let nv = vv.iter().map(|&b| b * b).sum::<F>().sqrt();
        if nu == F::zero() || nv == F::zero() {
            return Err(ColoError::DegenerateVector);
        }
        let raw = nu * nv;
        let eps = F::of(COSINE_EPS);
        let floored = raw < eps;
        let denom = if floored { eps } else { raw };
        let sim = dot / denom;
        let rg = self.rg(&[u, v]);
        self.push("cosine_similarity", vec![sim], vec![1], Op::Cosine { u, v, nu, nv, denom, sim, floored }, rg)
    }

    /// Mean next-token negative log-likelihood over unmasked rows of `logits[T, V]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let (t, vocab) = self.dims2(logits, "softmax_cross_entropy")?;
        if targets.len() != t || mask.len() != t {
            return Err(ColoError::Dimension {
                op: "softmax_cross_entropy",
                detail: format!("{} targets / {} mask entries for {t} rows", targets.len(), mask.len()),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&y| y >= vocab) {
            return Err(ColoError::Vocabulary { id: bad, size: vocab });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(ColoError::EmptyPool);
        }
        let (loss, probs) = ops::cross_entropy_forward(self.value(logits), targets, mask, vocab);
        let rg = self.rg(&[logits]);
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), mask: mask.to_vec(), probs, count };
        self.push("softmax_cross_entropy", vec![loss / F::of(count as f64)], vec![1], op, rg)
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(ColoError::Dimension { op: "reshape", detail: format!("{:?} cannot become {shape:?}", self.shape(x)) });
        }
        let out = self.value(x).to_vec();
        let rg = self.rg(&[x]);
        self.push("reshape", out, shape.to_vec(), Op::Reshape(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push("sum", vec![s], vec![1], Op::Sum(x), rg)
    }

    /// Sum of several scalars, left to right.
    pub fn add_all(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs.split_first().ok_or_else(|| ColoError::Dimension { op: "add_all", detail: "no operands".into() })?;
        rest.iter().try_fold(first, |acc, &x| self.add(acc, x))
    }

    /// Reverse pass from a single-element root. Gradients of every node
    /// that requires them are available through [`Tape::grad`] afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = self.node(loss);
        if root.value.len() != 1 {
            return Err(ColoError::Rank(format!("backward root must be scalar, got shape {:?}", root.shape)));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![F::one()]);
        let nodes = &self.nodes;
        for i in (0..=loss.id).rev() {
            if !nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backward_node(nodes, &mut grads, i, &g);
            if matches!(nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        self.grads = grads;
        Ok(())
    }
}

/// Runs `f` on the (lazily zeroed) gradient buffer of `v` when it needs one.
fn with_grad<F: Real>(nodes: &[Node<F>], grads: &mut [Option<Vec<F>>], v: Var, f: impl FnOnce(&mut [F])) {
    let node = &nodes[v.id];
    if !node.requires_grad {
        return;
    }
    let mut buf = grads[v.id].take().unwrap_or_else(|| vec![F::zero(); node.value.len()]);
    f(&mut buf);
    grads[v.id] = Some(buf);
}

fn backward_node<F: Real>(nodes: &[Node<F>], grads: &mut [Option<Vec<F>>], i: usize, g: &[F]) {
    let node = &nodes[i];
    let val = |v: Var| -> &[F] { &nodes[v.id].value };
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b, av, bv } => {
            let gv = MatRef::dense(av.rows, bv.cols);
            with_grad(nodes, grads, *a, |da| gemm(F::one(), g, gv, val(*b), bv.t(), F::one(), da, *av));
            with_grad(nodes, grads, *b, |db| gemm(F::one(), val(*a), av.t(), g, gv, F::one(), db, *bv));
        }
        Op::Add(a, b) => {
            with_grad(nodes, grads, *a, |da| axpy(da, g, F::one()));
            with_grad(nodes, grads, *b, |db| axpy(db, g, F::one()));
        }
        Op::Sub(a, b) => {
            with_grad(nodes, grads, *a, |da| axpy(da, g, F::one()));
            with_grad(nodes, grads, *b, |db| axpy(db, g, -F::one()));
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            with_grad(nodes, grads, *a, |da| {
                for ((d, &gi), &y) in da.iter_mut().zip(g).zip(vb) {
                    *d = *d + gi * y;
                }
            });
            with_grad(nodes, grads, *b, |db| {
                for ((d, &gi), &x) in db.iter_mut().zip(g).zip(va) {
                    *d = *d + gi * x;
                }
            });
        }
        Op::AddRow(x, bias) => {
            with_grad(nodes, grads, *x, |dx| axpy(dx, g, F::one()));
            with_grad(nodes, grads, *bias, |db| {
                let d = db.len();
                for row in g.chunks(d) {
                    axpy(db, row, F::one());
                }
            });
        }
        Op::Scale(x, c) => with_grad(nodes, grads, *x, |dx| axpy(dx, g, *c)),
        Op::AddScalar(x) => with_grad(nodes, grads, *x, |dx| axpy(dx, g, F::one())),
        Op::Relu(x) => {
            let xv = val(*x);
            with_grad(nodes, grads, *x, |dx| {
                for ((d, &gi), &v) in dx.iter_mut().zip(g).zip(xv) {
                    if v > F::zero() {
                        *d = *d + gi;
                    }
                }
            });
        }
        Op::Tanh(x) => {
            let y = &node.value;
            with_grad(nodes, grads, *x, |dx| {
                for ((d, &gi), &t) in dx.iter_mut().zip(g).zip(y) {
                    *d = *d + gi * (F::one() - t * t);
                }
            });
        }
        Op::Gelu(x) => {
            let xv = val(*x);
            with_grad(nodes, grads, *x, |dx| {
                for ((d, &gi), &v) in dx.iter_mut().zip(g).zip(xv) {
                    *d = *d + gi * ops::gelu_grad(v);
                }
            });
        }
        Op::Dropout(x, mask) => {
            with_grad(nodes, grads, *x, |dx| {
                for ((d, &gi), &m) in dx.iter_mut().zip(g).zip(mask) {
                    *d = *d + gi * m;
                }
            });
        }
        Op::Embedding { table, ids } => {
            let d = node.shape[1];
            with_grad(nodes, grads, *table, |dt| {
                for (row, &id) in g.chunks(d).zip(ids) {
                    axpy(&mut dt[id * d..(id + 1) * d], row, F::one());
                }
            });
        }
        Op::LayerNorm { x, gain, bias, xhat, rstd } => {
            let d = val(*gain).len();
            let gainv = val(*gain);
            with_grad(nodes, grads, *x, |dx| ops::layer_norm_backward_x(g, xhat, rstd, gainv, d, dx));
            with_grad(nodes, grads, *gain, |dg| {
                for (grow, xrow) in g.chunks(d).zip(xhat.chunks(d)) {
                    for ((o, &gi), &xh) in dg.iter_mut().zip(grow).zip(xrow) {
                        *o = *o + gi * xh;
                    }
                }
            });
            with_grad(nodes, grads, *bias, |db| {
                for grow in g.chunks(d) {
                    axpy(db, grow, F::one());
                }
            });
        }
        Op::Attention { q, k, v, heads, scale, probs, keep } => {
            let (t, d) = (nodes[q.id].shape[0], nodes[q.id].shape[1]);
            let s = nodes[k.id].shape[0];
            let dims = ops::AttnDims { t, s, d, heads: *heads };
            let (qv, kv, vv) = (val(*q), val(*k), val(*v));
            with_grad(nodes, grads, *v, |dv| ops::attention_backward_v(g, probs, keep.as_deref(), dims, dv));
            let needs_qk = nodes[q.id].requires_grad || nodes[k.id].requires_grad;
            if needs_qk {
                let ds = ops::attention_score_grad(g, probs, keep.as_deref(), vv, dims);
                with_grad(nodes, grads, *q, |dq| ops::attention_backward_q(&ds, kv, *scale, dims, dq));
                with_grad(nodes, grads, *k, |dk| ops::attention_backward_k(&ds, qv, *scale, dims, dk));
            }
        }
        Op::MeanPool { x, mask, count } => {
            let d = node.value.len();
            let inv = F::one() / F::of(*count as f64);
            with_grad(nodes, grads, *x, |dx| {
                for (row, _) in dx.chunks_mut(d).zip(mask).filter(|(_, &m)| m) {
                    axpy(row, g, inv);
                }
            });
        }
        Op::Cosine { u, v, nu, nv, denom, sim, floored } => {
            let (uv, vv) = (val(*u), val(*v));
            let g0 = g[0];
            // d/du = v / denom - sim * u / |u|^2 (second term absent when floored)
            let fu = if *floored { F::zero() } else { *sim / (*nu * *nu) };
            let fv = if *floored { F::zero() } else { *sim / (*nv * *nv) };
            with_grad(nodes, grads, *u, |du| {
                for ((d, &a), &b) in du.iter_mut().zip(uv).zip(vv) {
                    *d = *d + g0 * (b / *denom - fu * a);
                }
            });
            with_grad(nodes, grads, *v, |dv| {
                for ((d, &b), &a) in dv.iter_mut().zip(vv).zip(uv) {
                    *d = *d + g0 * (a / *denom - fv * b);
                }
            });
        }
        Op::CrossEntropy { logits, targets, mask, probs, count } => {
            let vocab = nodes[logits.id].shape[1];
            let coef = g[0] / F::of(*count as f64);
            with_grad(nodes, grads, *logits, |dl| {
                for ((row, prow), (&y, &m)) in dl.chunks_mut(vocab).zip(probs.chunks(vocab)).zip(targets.iter().zip(mask)) {
                    if !m {
                        continue;
                    }
                    for (o, &p) in row.iter_mut().zip(prow) {
                        *o = *o + coef * p;
                    }
                    row[y] = row[y] - coef;
                }
            });
        }
        Op::Sum(x) => {
            let g0 = g[0];
            with_grad(nodes, grads, *x, |dx| dx.iter_mut().for_each(|d| *d = *d + g0));
        }
        Op::Reshape(x) => with_grad(nodes, grads, *x, |dx| axpy(dx, g, F::one())),
    }
}

#[inline]
fn axpy<F: Real>(y: &mut [F], x: &[F], a: F) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}
