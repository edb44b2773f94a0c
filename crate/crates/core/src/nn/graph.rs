//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] records one forward computation. Parameters are read from
//! borrowed [`ParamStore`]s without copying; [`Graph::backward`] returns the
//! gradients of a scalar output with respect to every parameter that was used.

use ndarray::{s, Array1, Array2, Axis, Zip};

use super::params::{Gradients, ParamKey, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param(ParamKey),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<T>,
        inv_std: Array1<T>,
    },
    GatherRows {
        table: Var,
        rows: Vec<usize>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    SumAll(Var),
    BceWithLogits {
        logits: Var,
        targets: Array2<T>,
        pos_weight: T,
        scale: T,
    },
    CrossEntropyRows {
        logits: Var,
        targets: Vec<usize>,
        scale: T,
        probs: Array2<T>,
    },
}

struct Node<T> {
    op: Op<T>,
    /// `None` for parameter nodes, whose value lives in the store.
    value: Option<Array2<T>>,
}

pub struct Graph<'s, T: Scalar> {
    stores: Vec<&'s ParamStore<T>>,
    nodes: Vec<Node<T>>,
}

const GELU_C: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let k = T::of((2.0 / std::f64::consts::PI).sqrt());
    let half = T::of(0.5);
    half * x * (T::one() + (k * (x + T::of(GELU_C) * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = T::of((2.0 / std::f64::consts::PI).sqrt());
    let half = T::of(0.5);
    let t = (k * (x + T::of(GELU_C) * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::of(3.0 * GELU_C) * x * x)
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (T::one() + (-x.abs()).exp()).ln()
}

pub fn softmax_rows<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: T = row.iter().copied().sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new(stores: &[&'s ParamStore<T>]) -> Self {
        Graph {
            stores: stores.to_vec(),
            nodes: Vec::with_capacity(256),
        }
    }

    fn push(&mut self, op: Op<T>, value: Option<Array2<T>>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn store(&self, key: ParamKey) -> &'s ParamStore<T> {
        self.stores
            .iter()
            .copied()
            .find(|s| s.group() == key.group)
            .unwrap_or_else(|| panic!("parameter group {} not attached to graph", key.group))
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(key), None) => self.store(*key).get(*key),
            (_, Some(value)) => value,
            _ => unreachable!("non-parameter node without value"),
        }
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[[0, 0]]
    }

    pub fn input(&mut self, value: Array2<T>) -> Var {
        self.push(Op::Input, Some(value))
    }

    pub fn param(&mut self, key: ParamKey) -> Var {
        let _ = self.store(key);
        self.push(Op::Param(key), None)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), Some(value))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        self.push(Op::MatMulT(a, b), Some(value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), Some(value))
    }

    /// Adds a `1 × m` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row expects a single row");
        let value = self.value(a) + r;
        self.push(Op::AddRow(a, row), Some(value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), Some(value))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let value = self.value(a).mapv(|x| x * factor);
        self.push(Op::Scale(a, factor), Some(value))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(T::tanh);
        self.push(Op::Tanh(a), Some(value))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push(Op::Sigmoid(a), Some(value))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(gelu);
        self.push(Op::Gelu(a), Some(value))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        self.push(Op::SoftmaxRows(a), Some(value))
    }

    /// Row-wise layer normalization with `1 × m` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let eps = T::of(1e-5);
        let xv = self.value(x);
        let m = T::of(xv.ncols() as f64);
        let mut xhat = xv.clone();
        let mut inv_std = Array1::zeros(xv.nrows());
        for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.iter().copied().sum::<T>() / m;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
            *inv = T::one() / (var + eps).sqrt();
            let scale = *inv;
            row.mapv_inplace(|v| (v - mean) * scale);
        }
        let value = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            Some(value),
        )
    }

    /// Selects rows of `table` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Var {
        let t = self.value(table);
        let mut value = Array2::zeros((rows.len(), t.ncols()));
        for (mut out, &r) in value.rows_mut().into_iter().zip(rows) {
            out.assign(&t.row(r));
        }
        self.push(
            Op::GatherRows {
                table,
                rows: rows.to_vec(),
            },
            Some(value),
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).slice(s![start..start + len, ..]).to_owned();
        self.push(Op::SliceRows { x, start }, Some(value))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).slice(s![.., start..start + len]).to_owned();
        self.push(Op::SliceCols { x, start }, Some(value))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("equal row counts");
        self.push(Op::ConcatCols(parts.to_vec()), Some(value))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("equal column counts");
        self.push(Op::ConcatRows(parts.to_vec()), Some(value))
    }

    /// Mean over rows: `n × m → 1 × m`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let value = self
            .value(x)
            .mean_axis(Axis(0))
            .expect("nonempty")
            .insert_axis(Axis(0));
        self.push(Op::MeanRows(x), Some(value))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let total: T = self.value(x).iter().copied().sum();
        self.push(Op::SumAll(x), Some(Array2::from_elem((1, 1), total)))
    }

    /// `scale · Σ [pw·y·softplus(−x) + (1−y)·softplus(x)]`, a `1 × 1` node.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Array2<T>, pos_weight: T, scale: T) -> Var {
        let x = self.value(logits);
        assert_eq!(x.dim(), targets.dim(), "logit/target shape mismatch");
        let mut total = T::zero();
        Zip::from(x).and(&targets).for_each(|&x, &y| {
            total += pos_weight * y * softplus(-x) + (T::one() - y) * softplus(x);
        });
        self.push(
            Op::BceWithLogits {
                logits,
                targets,
                pos_weight,
                scale,
            },
            Some(Array2::from_elem((1, 1), total * scale)),
        )
    }

    /// `scale · Σ_i −log softmax(logits_i)[targets_i]`, a `1 × 1` node.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: &[usize], scale: T) -> Var {
        let x = self.value(logits);
        assert_eq!(x.nrows(), targets.len(), "one target per row");
        let probs = softmax_rows(x);
        let mut total = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            let row = x.row(i);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            total += lse - row[t];
        }
        self.push(
            Op::CrossEntropyRows {
                logits,
                targets: targets.to_vec(),
                scale,
                probs,
            },
            Some(Array2::from_elem((1, 1), total * scale)),
        )
    }

    /// `x · W + b` for parameters `w` (`in × out`) and `b` (`1 × out`).
    pub fn linear(&mut self, x: Var, w: ParamKey, b: ParamKey) -> Var {
        let w = self.param(w);
        let b = self.param(b);
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    /// Gradients of the `1 × 1` node `output` with respect to all parameters.
    pub fn backward(&self, output: Var) -> Gradients<T> {
        assert_eq!(self.value(output).dim(), (1, 1), "backward from a scalar");
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Array2::from_elem((1, 1), T::one()));
        let mut out = Gradients::default();

        fn acc<T: Scalar>(grads: &mut [Option<Array2<T>>], v: Var, g: Array2<T>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(key) => out.accumulate(*key, &g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, f) => {
                    let f = *f;
                    acc(&mut grads, *a, g.mapv(|x| x * f));
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().expect("value");
                    let ga = Zip::from(&g).and(y).map_collect(|&g, &y| g * (T::one() - y * y));
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().expect("value");
                    let ga = Zip::from(&g).and(y).map_collect(|&g, &y| g * y * (T::one() - y));
                    acc(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let ga = Zip::from(&g)
                        .and(self.value(*a))
                        .map_collect(|&g, &x| g * gelu_grad(x));
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.as_ref().expect("value");
                    let mut ga = &g * y;
                    for (mut row, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot: T = row.iter().copied().sum();
                        Zip::from(&mut row).and(&yrow).for_each(|r, &y| *r -= y * dot);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gam = self.value(*gamma);
                    let gbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ggamma = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * gam;
                    let m = T::of(xhat.ncols() as f64);
                    let mut gx = Array2::zeros(xhat.dim());
                    for (((mut out, dh), xh), &inv) in gx
                        .rows_mut()
                        .into_iter()
                        .zip(dxhat.rows())
                        .zip(xhat.rows())
                        .zip(inv_std.iter())
                    {
                        let sum_dh: T = dh.iter().copied().sum();
                        let sum_dh_xh: T = dh.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum();
                        Zip::from(&mut out).and(&dh).and(&xh).for_each(|o, &d, &h| {
                            *o = inv / m * (m * d - sum_dh - h * sum_dh_xh);
                        });
                    }
                    acc(&mut grads, *beta, gbeta);
                    acc(&mut grads, *gamma, ggamma);
                    acc(&mut grads, *x, gx);
                }
                Op::GatherRows { table, rows } => {
                    let t = self.value(*table);
                    let mut gt = Array2::zeros(t.dim());
                    for (grow, &r) in g.rows().into_iter().zip(rows) {
                        let mut target = gt.row_mut(r);
                        target += &grow;
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::SliceRows { x, start } => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    gx.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *x, gx);
                }
                Op::SliceCols { x, start } => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    gx.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        acc(&mut grads, p, g.slice(s![offset..offset + h, ..]).to_owned());
                        offset += h;
                    }
                }
                Op::MeanRows(x) => {
                    let n = self.value(*x).nrows();
                    let row = g.mapv(|v| v / T::of(n as f64));
                    let gx = row.broadcast((n, row.ncols())).expect("broadcast").to_owned();
                    acc(&mut grads, *x, gx);
                }
                Op::SumAll(x) => {
                    let gv = g[[0, 0]];
                    acc(&mut grads, *x, Array2::from_elem(self.value(*x).dim(), gv));
                }
                Op::BceWithLogits {
                    logits,
                    targets,
                    pos_weight,
                    scale,
                } => {
                    let f = g[[0, 0]] * *scale;
                    let pw = *pos_weight;
                    let gx = Zip::from(self.value(*logits)).and(targets).map_collect(|&x, &y| {
                        let s = sigmoid(x);
                        f * (pw * y * (s - T::one()) + (T::one() - y) * s)
                    });
                    acc(&mut grads, *logits, gx);
                }
                Op::CrossEntropyRows {
                    logits,
                    targets,
                    scale,
                    probs,
                } => {
                    let f = g[[0, 0]] * *scale;
                    let mut gx = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        gx[[i, t]] -= T::one();
                    }
                    gx.mapv_inplace(|v| v * f);
                    acc(&mut grads, *logits, gx);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check::{check_gradients, GradCheckConfig};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store() -> (ParamStore<f64>, Vec<ParamKey>) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new(0);
        let keys = vec![
            s.add_uniform("a", 3, 4, 1.0, &mut rng),
            s.add_uniform("b", 4, 4, 1.0, &mut rng),
            s.add_uniform("gamma", 1, 4, 1.0, &mut rng),
            s.add_uniform("beta", 1, 4, 1.0, &mut rng),
            s.add_uniform("table", 5, 4, 1.0, &mut rng),
        ];
        (s, keys)
    }

    fn every_op(g: &mut Graph<'_, f64>, k: &[ParamKey]) -> Var {
        let a = g.param(k[0]);
        let b = g.param(k[1]);
        let gamma = g.param(k[2]);
        let beta = g.param(k[3]);
        let table = g.param(k[4]);
        let emb = g.gather_rows(table, &[1, 3, 1]);
        let x = g.add(a, emb);
        let h = g.matmul(x, b);
        let h = g.layer_norm(h, gamma, beta);
        let h = g.gelu(h);
        let att = g.matmul_t(h, x);
        let att = g.softmax_rows(att);
        let ctx = g.matmul(att, x);
        let t = g.tanh(ctx);
        let sg = g.sigmoid(h);
        let m = g.mul(t, sg);
        let m = g.add_row(m, beta);
        let left = g.slice_cols(m, 0, 2);
        let right = g.slice_cols(m, 2, 2);
        let cat = g.concat_rows(&[left, right]);
        let top = g.slice_rows(cat, 1, 4);
        let mean = g.mean_rows(top);
        let both = g.concat_cols(&[mean, mean]);
        let bce = g.bce_with_logits(both, array![[1.0, 0.0, 1.0, 0.0]], 2.0, 0.5);
        let ce = g.cross_entropy_rows(cat, &[0, 1, 1, 0, 1, 0], 0.25);
        let sc = g.scale(ce, 3.0);
        let total = g.add(bce, sc);
        let extra = g.sum_all(h);
        let extra = g.scale(extra, 0.1);
        g.add(total, extra)
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let (s, keys) = store();
        let report = check_gradients(
            &s,
            |st| {
                let mut g = Graph::new(&[st]);
                let out = every_op(&mut g, &keys);
                (g.scalar(out), g.backward(out))
            },
            &GradCheckConfig {
                samples_per_tensor: usize::MAX,
                ..GradCheckConfig::default()
            },
        );
        assert!(report.max_rel_error <= 1e-6, "{report:?}");
        assert!(report.checked > 50);
    }

    #[test]
    fn softmax_and_bce_are_stable() {
        let (s, _) = store();
        let mut g = Graph::new(&[&s]);
        let x = g.input(array![[1000.0, -1000.0]]);
        let p = g.softmax_rows(x);
        assert!(g.value(p).iter().all(|v| v.is_finite()));
        let l = g.bce_with_logits(x, array![[1.0, 0.0]], 1.0, 1.0);
        assert!(g.scalar(l).abs() < 1e-9);
    }
}
