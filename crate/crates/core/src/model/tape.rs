//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! read in place from a [`ParamStore`]; [`Tape::backward`] returns gradients
//! shaped like the store. Edge-located tensors are `n² × d` matrices whose
//! row `i * n + j` belongs to the ordered pair `(i, j)`.

use ndarray::{s, Array2, Axis, Zip};

use super::params::ParamStore;

pub type Id = usize;

const LN_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Param(usize),
    MatMul(Id, Id),
    /// `a · bᵀ`
    MatMulT(Id, Id),
    Add(Id, Id),
    AddRow(Id, Id),
    Mul(Id, Id),
    MulRow(Id, Id),
    Scale(Id, f64),
    Relu(Id),
    Sigmoid(Id),
    Concat(Vec<Id>),
    ExpandI(Id, usize),
    ExpandJ(Id, usize),
    Max2(Id, Id),
    MaxAggregate(Id, usize, Vec<u32>),
    MaxRows(Id, Vec<u32>),
    TripletMax { c: Id, e2: Id, e3: Id, n: usize, arg: Vec<u32> },
    LayerNorm(Id, Vec<f64>),
    SoftmaxRows(Id),
    Reshape(Id),
    EdgePtrMeans(Id, usize),
    AddEdgePtrBias(Id, Id, usize),
    RowL2Norm(Id),
    Sum(Id),
    LinComb(Vec<(Id, f64)>),
    XentRows(Id, Vec<usize>),
    BceMean(Id, Array2<f64>),
    MseMean(Id, Array2<f64>),
}

struct Node {
    op: Op,
    value: Option<Array2<f64>>,
    grad: bool,
}

pub struct Tape<'a> {
    params: &'a ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Id>>,
}

fn scalar(x: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), x)
}

fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Index of the first maximum of `vals`.
fn first_max(vals: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, v) in vals.enumerate() {
        if v > best.1 || k == 0 {
            best = (k, v);
        }
    }
    best
}

pub(crate) fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Self { params, nodes: Vec::new(), param_nodes: vec![None; params.len()] }
    }

    pub fn value(&self, id: Id) -> &Array2<f64> {
        match (&self.nodes[id].op, &self.nodes[id].value) {
            (Op::Param(p), _) => self.params.get(*p),
            (_, Some(v)) => v,
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, id: Id) -> (usize, usize) {
        self.value(id).dim()
    }

    pub fn scalar(&self, id: Id) -> f64 {
        self.value(id)[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Array2<f64>, inputs: &[Id]) -> Id {
        let grad = inputs.iter().any(|&i| self.nodes[i].grad);
        self.nodes.push(Node { op, value: Some(standard(value)), grad });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Id {
        self.nodes.push(Node { op: Op::Leaf, value: Some(standard(value)), grad: false });
        self.nodes.len() - 1
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Id {
        self.leaf(Array2::zeros((rows, cols)))
    }

    pub fn param(&mut self, pid: usize) -> Id {
        if let Some(id) = self.param_nodes[pid] {
            return id;
        }
        self.nodes.push(Node { op: Op::Param(pid), value: None, grad: true });
        let id = self.nodes.len() - 1;
        self.param_nodes[pid] = Some(id);
        id
    }

    pub fn matmul(&mut self, a: Id, b: Id) -> Id {
        let v = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), v, &[a, b])
    }

    pub fn matmul_t(&mut self, a: Id, b: Id) -> Id {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(Op::MatMulT(a, b), v, &[a, b])
    }

    pub fn add(&mut self, a: Id, b: Id) -> Id {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v, &[a, b])
    }

    /// `a + b` with the single row `b` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Id, b: Id) -> Id {
        assert_eq!(self.shape(b).0, 1);
        let v = self.value(a) + self.value(b);
        self.push(Op::AddRow(a, b), v, &[a, b])
    }

    pub fn mul(&mut self, a: Id, b: Id) -> Id {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), v, &[a, b])
    }

    pub fn mul_row(&mut self, a: Id, b: Id) -> Id {
        assert_eq!(self.shape(b).0, 1);
        let v = self.value(a) * self.value(b);
        self.push(Op::MulRow(a, b), v, &[a, b])
    }

    pub fn scale(&mut self, a: Id, c: f64) -> Id {
        let v = self.value(a) * c;
        self.push(Op::Scale(a, c), v, &[a])
    }

    pub fn relu(&mut self, a: Id) -> Id {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(Op::Relu(a), v, &[a])
    }

    pub fn sigmoid(&mut self, a: Id) -> Id {
        let v = self.value(a).mapv(sigmoid);
        self.push(Op::Sigmoid(a), v, &[a])
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Id]) -> Id {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat rows differ");
        self.push(Op::Concat(parts.to_vec()), v, parts)
    }

    /// `n × d → n² × d`, row `(i, j)` copies row `i`.
    pub fn expand_i(&mut self, a: Id, n: usize) -> Id {
        let x = self.value(a);
        let d = x.ncols();
        let mut v = Array2::zeros((n * n, d));
        for i in 0..n {
            for j in 0..n {
                v.row_mut(i * n + j).assign(&x.row(i));
            }
        }
        self.push(Op::ExpandI(a, n), v, &[a])
    }

    /// `n × d → n² × d`, row `(i, j)` copies row `j`.
    pub fn expand_j(&mut self, a: Id, n: usize) -> Id {
        let x = self.value(a);
        let d = x.ncols();
        let mut v = Array2::zeros((n * n, d));
        for i in 0..n {
            v.slice_mut(s![i * n..(i + 1) * n, ..]).assign(x);
        }
        self.push(Op::ExpandJ(a, n), v, &[a])
    }

    pub fn max2(&mut self, a: Id, b: Id) -> Id {
        assert_eq!(self.shape(a), self.shape(b));
        let mut v = self.value(a).clone();
        Zip::from(&mut v).and(self.value(b)).for_each(|x, &y| *x = x.max(y));
        self.push(Op::Max2(a, b), v, &[a, b])
    }

    /// `n² × d → n × d`: receiver `i` takes the elementwise max over senders `j`.
    pub fn max_aggregate(&mut self, a: Id, n: usize) -> Id {
        let x = self.value(a);
        let d = x.ncols();
        let xs = x.as_slice().unwrap();
        let mut v = Array2::from_elem((n, d), f64::NEG_INFINITY);
        let mut arg = vec![0u32; n * d];
        {
            let vs = v.as_slice_mut().unwrap();
            for i in 0..n {
                for j in 0..n {
                    let row = &xs[(i * n + j) * d..(i * n + j + 1) * d];
                    for f in 0..d {
                        if row[f] > vs[i * d + f] {
                            vs[i * d + f] = row[f];
                            arg[i * d + f] = j as u32;
                        }
                    }
                }
            }
        }
        self.push(Op::MaxAggregate(a, n, arg), v, &[a])
    }

    /// Columnwise max over all rows, giving a single row.
    pub fn max_rows(&mut self, a: Id) -> Id {
        let x = self.value(a);
        let d = x.ncols();
        let mut v = Array2::zeros((1, d));
        let mut arg = vec![0u32; d];
        for f in 0..d {
            let (k, m) = first_max(x.column(f).iter().cloned());
            v[[0, f]] = m;
            arg[f] = k as u32;
        }
        self.push(Op::MaxRows(a, arg), v, &[a])
    }

    /// Row `(i, j)` of the result is `max_k c[k] + e2[(i, k)] + e3[(k, j)]`.
    pub fn triplet_max(&mut self, c: Id, e2: Id, e3: Id, n: usize) -> Id {
        let d = self.shape(c).1;
        let (cs, e2s, e3s) = (
            self.value(c).as_slice().unwrap(),
            self.value(e2).as_slice().unwrap(),
            self.value(e3).as_slice().unwrap(),
        );
        let mut out = vec![f64::NEG_INFINITY; n * n * d];
        let mut arg = vec![0u32; n * n * d];
        for i in 0..n {
            for k in 0..n {
                let ck = &cs[k * d..(k + 1) * d];
                let eik = &e2s[(i * n + k) * d..(i * n + k + 1) * d];
                for j in 0..n {
                    let ekj = &e3s[(k * n + j) * d..(k * n + j + 1) * d];
                    let base = (i * n + j) * d;
                    for f in 0..d {
                        let val = ck[f] + eik[f] + ekj[f];
                        if val > out[base + f] {
                            out[base + f] = val;
                            arg[base + f] = k as u32;
                        }
                    }
                }
            }
        }
        let v = Array2::from_shape_vec((n * n, d), out).unwrap();
        self.push(Op::TripletMax { c, e2, e3, n, arg }, v, &[c, e2, e3])
    }

    /// Row-wise normalisation to zero mean and unit variance.
    pub fn layer_norm(&mut self, a: Id) -> Id {
        let mut v = self.value(a).clone();
        let mut sigmas = Vec::with_capacity(v.nrows());
        for mut row in v.rows_mut() {
            let mean = row.mean().unwrap();
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / row.len() as f64;
            let sigma = (var + LN_EPS).sqrt();
            row.mapv_inplace(|x| (x - mean) / sigma);
            sigmas.push(sigma);
        }
        self.push(Op::LayerNorm(a, sigmas), v, &[a])
    }

    pub fn softmax_rows(&mut self, a: Id) -> Id {
        let v = softmax_rows(self.value(a));
        self.push(Op::SoftmaxRows(a), v, &[a])
    }

    /// Row-major reinterpretation with a new shape.
    pub fn reshape(&mut self, a: Id, rows: usize, cols: usize) -> Id {
        let v = self.value(a).clone().into_shape_with_order((rows, cols)).expect("reshape size");
        self.push(Op::Reshape(a), v, &[a])
    }

    /// Edge pointer distributions `P[(i, j), k]` to two edge columns: the mean
    /// over `j` placed at `(i, k)` and the mean over `i` placed at `(k, j)`.
    pub fn edge_ptr_means(&mut self, a: Id, n: usize) -> Id {
        let p = self.value(a);
        let mut v = Array2::zeros((n * n, 2));
        let inv = 1.0 / n as f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let x = p[[i * n + j, k]] * inv;
                    v[[i * n + k, 0]] += x;
                    v[[k * n + j, 1]] += x;
                }
            }
        }
        self.push(Op::EdgePtrMeans(a, n), v, &[a])
    }

    /// `logits[(i, j), k] + c[(k, j)]`.
    pub fn add_edge_ptr_bias(&mut self, logits: Id, c: Id, n: usize) -> Id {
        let mut v = self.value(logits).clone();
        let cv = self.value(c);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    v[[i * n + j, k]] += cv[[k * n + j, 0]];
                }
            }
        }
        self.push(Op::AddEdgePtrBias(logits, c, n), v, &[logits, c])
    }

    pub fn row_l2_norm(&mut self, a: Id) -> Id {
        let x = self.value(a);
        let v = Array2::from_shape_fn((x.nrows(), 1), |(r, _)| {
            x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt()
        });
        self.push(Op::RowL2Norm(a), v, &[a])
    }

    pub fn sum(&mut self, a: Id) -> Id {
        let v = scalar(self.value(a).sum());
        self.push(Op::Sum(a), v, &[a])
    }

    /// `Σ cᵢ xᵢ` over same-shaped inputs.
    pub fn lin_comb(&mut self, terms: &[(Id, f64)]) -> Id {
        assert!(!terms.is_empty());
        let mut v = Array2::zeros(self.shape(terms[0].0));
        for &(id, c) in terms {
            v.scaled_add(c, self.value(id));
        }
        let ids: Vec<Id> = terms.iter().map(|t| t.0).collect();
        self.push(Op::LinComb(terms.to_vec()), v, &ids)
    }

    /// Mean over rows of the cross-entropy between softmax(row) and the
    /// target class of that row.
    pub fn xent_rows(&mut self, logits: Id, targets: Vec<usize>) -> Id {
        let x = self.value(logits);
        assert_eq!(x.nrows(), targets.len());
        let total: f64 = x
            .rows()
            .into_iter()
            .zip(&targets)
            .map(|(row, &t)| log_sum_exp(row.as_slice().unwrap()) - row[t])
            .sum();
        let v = scalar(total / targets.len() as f64);
        self.push(Op::XentRows(logits, targets), v, &[logits])
    }

    /// Mean binary cross-entropy of logits against `{0, 1}` targets.
    pub fn bce_mean(&mut self, logits: Id, targets: Array2<f64>) -> Id {
        let x = self.value(logits);
        assert_eq!(x.dim(), targets.dim());
        let total: f64 = x
            .iter()
            .zip(targets.iter())
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let v = scalar(total / x.len() as f64);
        self.push(Op::BceMean(logits, targets), v, &[logits])
    }

    pub fn mse_mean(&mut self, pred: Id, targets: Array2<f64>) -> Id {
        let x = self.value(pred);
        assert_eq!(x.dim(), targets.dim());
        let total: f64 = x.iter().zip(targets.iter()).map(|(a, b)| (a - b).powi(2)).sum();
        let v = scalar(total / x.len() as f64);
        self.push(Op::MseMean(pred, targets), v, &[pred])
    }

    /// Gradients of the scalar node `root` with respect to every parameter,
    /// in store order. Parameters not reached get zeros.
    pub fn backward(&self, root: Id) -> Vec<Array2<f64>> {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar root");
        let mut out: Vec<Array2<f64>> =
            (0..self.params.len()).map(|p| Array2::zeros(self.params.get(p).dim())).collect();
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(scalar(1.0));
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].grad {
                continue;
            }
            self.propagate(id, g, &mut grads, &mut out);
        }
        out
    }

    fn acc(&self, grads: &mut [Option<Array2<f64>>], id: Id, g: Array2<f64>) {
        if !self.nodes[id].grad {
            return;
        }
        match &mut grads[id] {
            Some(existing) => *existing += &g,
            slot => *slot = Some(g),
        }
    }

    fn propagate(
        &self,
        id: Id,
        g: Array2<f64>,
        grads: &mut [Option<Array2<f64>>],
        out: &mut [Array2<f64>],
    ) {
        let need = |x: Id| self.nodes[x].grad;
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Param(p) => out[*p] += &g,
            Op::MatMul(a, b) => {
                if need(*a) {
                    self.acc(grads, *a, g.dot(&self.value(*b).t()));
                }
                if need(*b) {
                    self.acc(grads, *b, self.value(*a).t().dot(&g));
                }
            }
            Op::MatMulT(a, b) => {
                if need(*a) {
                    self.acc(grads, *a, g.dot(self.value(*b)));
                }
                if need(*b) {
                    self.acc(grads, *b, g.t().dot(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                if need(*b) {
                    self.acc(grads, *b, g.clone());
                }
                self.acc(grads, *a, g);
            }
            Op::AddRow(a, b) => {
                if need(*b) {
                    self.acc(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                self.acc(grads, *a, g);
            }
            Op::Mul(a, b) => {
                if need(*a) {
                    self.acc(grads, *a, &g * self.value(*b));
                }
                if need(*b) {
                    self.acc(grads, *b, &g * self.value(*a));
                }
            }
            Op::MulRow(a, b) => {
                if need(*b) {
                    let gb = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.acc(grads, *b, gb);
                }
                if need(*a) {
                    self.acc(grads, *a, &g * self.value(*b));
                }
            }
            Op::Scale(a, c) => self.acc(grads, *a, g * *c),
            Op::Relu(a) => {
                let mut g = g;
                Zip::from(&mut g).and(self.value(id)).for_each(|g, &y| {
                    if y <= 0.0 {
                        *g = 0.0
                    }
                });
                self.acc(grads, *a, g);
            }
            Op::Sigmoid(a) => {
                let mut g = g;
                Zip::from(&mut g).and(self.value(id)).for_each(|g, &y| *g *= y * (1.0 - y));
                self.acc(grads, *a, g);
            }
            Op::Concat(parts) => {
                let mut col = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if need(p) {
                        self.acc(grads, p, g.slice(s![.., col..col + w]).to_owned());
                    }
                    col += w;
                }
            }
            Op::ExpandI(a, n) => {
                let n = *n;
                let mut ga = Array2::zeros(self.shape(*a));
                for i in 0..n {
                    ga.row_mut(i).assign(&g.slice(s![i * n..(i + 1) * n, ..]).sum_axis(Axis(0)));
                }
                self.acc(grads, *a, ga);
            }
            Op::ExpandJ(a, n) => {
                let n = *n;
                let mut ga = Array2::zeros(self.shape(*a));
                for i in 0..n {
                    ga += &g.slice(s![i * n..(i + 1) * n, ..]);
                }
                self.acc(grads, *a, ga);
            }
            Op::Max2(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut ga = g.clone();
                let mut gb = g;
                Zip::from(&mut ga).and(&mut gb).and(va).and(vb).for_each(|ga, gb, &x, &y| {
                    if x >= y {
                        *gb = 0.0;
                    } else {
                        *ga = 0.0;
                    }
                });
                self.acc(grads, *a, ga);
                self.acc(grads, *b, gb);
            }
            Op::MaxAggregate(a, n, arg) => {
                let d = g.ncols();
                let mut ga = Array2::zeros(self.shape(*a));
                for i in 0..*n {
                    for f in 0..d {
                        let j = arg[i * d + f] as usize;
                        ga[[i * n + j, f]] += g[[i, f]];
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::MaxRows(a, arg) => {
                let mut ga = Array2::zeros(self.shape(*a));
                for (f, &r) in arg.iter().enumerate() {
                    ga[[r as usize, f]] += g[[0, f]];
                }
                self.acc(grads, *a, ga);
            }
            Op::TripletMax { c, e2, e3, n, arg } => {
                let n = *n;
                let d = g.ncols();
                let gs = g.as_slice().unwrap();
                let mut gc = Array2::zeros(self.shape(*c));
                let mut g2 = Array2::zeros(self.shape(*e2));
                let mut g3 = Array2::zeros(self.shape(*e3));
                for i in 0..n {
                    for j in 0..n {
                        let base = (i * n + j) * d;
                        for f in 0..d {
                            let k = arg[base + f] as usize;
                            let v = gs[base + f];
                            gc[[k, f]] += v;
                            g2[[i * n + k, f]] += v;
                            g3[[k * n + j, f]] += v;
                        }
                    }
                }
                self.acc(grads, *c, gc);
                self.acc(grads, *e2, g2);
                self.acc(grads, *e3, g3);
            }
            Op::LayerNorm(a, sigmas) => {
                let y = self.value(id);
                let mut ga = g;
                for (r, mut row) in ga.rows_mut().into_iter().enumerate() {
                    let yr = y.row(r);
                    let d = row.len() as f64;
                    let mg = row.sum() / d;
                    let mgy = row.iter().zip(yr.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
                    let sig = sigmas[r];
                    Zip::from(&mut row).and(&yr).for_each(|g, &y| *g = (*g - mg - y * mgy) / sig);
                }
                self.acc(grads, *a, ga);
            }
            Op::SoftmaxRows(a) => {
                let y = self.value(id);
                let mut ga = g;
                for (r, mut row) in ga.rows_mut().into_iter().enumerate() {
                    let yr = y.row(r);
                    let dot: f64 = row.iter().zip(yr.iter()).map(|(a, b)| a * b).sum();
                    Zip::from(&mut row).and(&yr).for_each(|g, &y| *g = y * (*g - dot));
                }
                self.acc(grads, *a, ga);
            }
            Op::Reshape(a) => {
                let ga = g.into_shape_with_order(self.shape(*a)).unwrap();
                self.acc(grads, *a, ga);
            }
            Op::EdgePtrMeans(a, n) => {
                let n = *n;
                let inv = 1.0 / n as f64;
                let mut ga = Array2::zeros(self.shape(*a));
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..n {
                            ga[[i * n + j, k]] = (g[[i * n + k, 0]] + g[[k * n + j, 1]]) * inv;
                        }
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::AddEdgePtrBias(l, c, n) => {
                let n = *n;
                if need(*c) {
                    let mut gc = Array2::zeros(self.shape(*c));
                    for i in 0..n {
                        for j in 0..n {
                            for k in 0..n {
                                gc[[k * n + j, 0]] += g[[i * n + j, k]];
                            }
                        }
                    }
                    self.acc(grads, *c, gc);
                }
                self.acc(grads, *l, g);
            }
            Op::RowL2Norm(a) => {
                let x = self.value(*a);
                let norms = self.value(id);
                let mut ga = x.clone();
                for (r, mut row) in ga.rows_mut().into_iter().enumerate() {
                    let nr = norms[[r, 0]];
                    let f = if nr > 0.0 { g[[r, 0]] / nr } else { 0.0 };
                    row.mapv_inplace(|v| v * f);
                }
                self.acc(grads, *a, ga);
            }
            Op::Sum(a) => {
                let ga = Array2::from_elem(self.shape(*a), g[[0, 0]]);
                self.acc(grads, *a, ga);
            }
            Op::LinComb(terms) => {
                for &(t, c) in terms {
                    if need(t) {
                        self.acc(grads, t, &g * c);
                    }
                }
            }
            Op::XentRows(a, targets) => {
                let x = self.value(*a);
                let m = targets.len() as f64;
                let mut ga = softmax_rows(x);
                for (r, &t) in targets.iter().enumerate() {
                    ga[[r, t]] -= 1.0;
                }
                ga *= g[[0, 0]] / m;
                self.acc(grads, *a, ga);
            }
            Op::BceMean(a, targets) => {
                let x = self.value(*a);
                let c = g[[0, 0]] / x.len() as f64;
                let mut ga = x.mapv(sigmoid);
                Zip::from(&mut ga).and(targets).for_each(|p, &y| *p = (*p - y) * c);
                self.acc(grads, *a, ga);
            }
            Op::MseMean(a, targets) => {
                let x = self.value(*a);
                let c = 2.0 * g[[0, 0]] / x.len() as f64;
                let ga = (x - targets) * c;
                self.acc(grads, *a, ga);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    /// Central-difference check of `f` against the tape gradient, every
    /// parameter entry.
    fn check(store: ParamStore, f: impl Fn(&mut Tape) -> Id) {
        let tape_grad = {
            let mut t = Tape::new(&store);
            let root = f(&mut t);
            t.backward(root)
        };
        let eps = 1e-6;
        for p in 0..store.len() {
            for idx in 0..store.get(p).len() {
                let mut s = store.clone();
                let flat = |s: &mut ParamStore| s.get_mut(p).as_slice_mut().unwrap()[idx];
                let x0 = flat(&mut s);
                s.get_mut(p).as_slice_mut().unwrap()[idx] = x0 + eps;
                let up = {
                    let mut t = Tape::new(&s);
                    let r = f(&mut t);
                    t.scalar(r)
                };
                s.get_mut(p).as_slice_mut().unwrap()[idx] = x0 - eps;
                let down = {
                    let mut t = Tape::new(&s);
                    let r = f(&mut t);
                    t.scalar(r)
                };
                let num = (up - down) / (2.0 * eps);
                let ana = tape_grad[p].as_slice().unwrap()[idx];
                assert!(
                    (num - ana).abs() <= 1e-6 * (1.0 + num.abs()),
                    "param {} entry {idx}: numeric {num} analytic {ana}",
                    store.name(p)
                );
            }
        }
    }

    fn store(shapes: &[(usize, usize)], seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::default();
        for (k, &(r, c)) in shapes.iter().enumerate() {
            s.insert(&format!("p{k}"), random(r, c, &mut rng)).unwrap();
        }
        s
    }

    #[test]
    fn dense_ops() {
        let s = store(&[(3, 4), (4, 2), (1, 2), (3, 2), (1, 2)], 1);
        check(s, |t| {
            let (a, b, r, c, g) = (t.param(0), t.param(1), t.param(2), t.param(3), t.param(4));
            let x = t.matmul(a, b);
            let x = t.add_row(x, r);
            let y = t.mul(x, c);
            let y = t.mul_row(y, g);
            let y = t.sigmoid(y);
            let z = t.relu(x);
            let cat = t.concat(&[y, z, c]);
            let q = t.matmul_t(cat, cat);
            let q = t.scale(q, 0.3);
            let q = t.layer_norm(q);
            let q = t.softmax_rows(q);
            let q = t.row_l2_norm(q);
            t.sum(q)
        });
    }

    #[test]
    fn pair_and_max_ops() {
        let n = 3;
        let s = store(&[(n, 2), (n, 2), (n * n, 2), (n * n, 2), (n * n, 2), (n, 2)], 2);
        check(s, |t| {
            let (a, b, e, e2, e3, c) = (t.param(0), t.param(1), t.param(2), t.param(3), t.param(4), t.param(5));
            let ai = t.expand_i(a, n);
            let bj = t.expand_j(b, n);
            let x = t.add(ai, bj);
            let x = t.max2(x, e);
            let m = t.max_aggregate(x, n);
            let tri = t.triplet_max(c, e2, e3, n);
            let tm = t.max_rows(tri);
            let ms = t.sum(m);
            let ts = t.sum(tm);
            t.lin_comb(&[(ms, 1.0), (ts, -0.5)])
        });
    }

    #[test]
    fn pointer_ops_and_losses() {
        let n = 3;
        let s = store(&[(n * n, n), (n * n, 1), (n, n), (n, 1), (n, 1)], 3);
        check(s, |t| {
            let (l, c, p, m, r) = (t.param(0), t.param(1), t.param(2), t.param(3), t.param(4));
            let l2 = t.add_edge_ptr_bias(l, c, n);
            let probs = t.softmax_rows(l2);
            let means = t.edge_ptr_means(probs, n);
            let a = t.xent_rows(l2, vec![0, 2, 1, 1, 0, 2, 2, 2, 0]);
            let b = t.xent_rows(p, vec![2, 0, 1]);
            let mask = Array2::from_shape_vec((n * n, 2), (0..18).map(|k| (k % 2) as f64).collect()).unwrap();
            let cc = t.bce_mean(means, mask);
            let flat = t.reshape(m, 1, n);
            let d = t.xent_rows(flat, vec![1]);
            let e = t.mse_mean(r, Array2::from_elem((n, 1), 0.25));
            t.lin_comb(&[(a, 1.0), (b, 0.5), (cc, 2.0), (d, 1.0), (e, 1.5)])
        });
    }

    #[test]
    fn uniform_cross_entropy_is_log_n() {
        let s = ParamStore::default();
        let mut t = Tape::new(&s);
        let x = t.leaf(Array2::zeros((1, 4)));
        let l = t.xent_rows(x, vec![2]);
        assert!((t.scalar(l) - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn leaves_get_no_gradient_work() {
        let s = store(&[(2, 2)], 4);
        let mut t = Tape::new(&s);
        let a = t.leaf(Array2::ones((2, 2)));
        let p = t.param(0);
        let x = t.mul(a, p);
        let r = t.sum(x);
        assert_eq!(t.backward(r)[0], Array2::<f64>::ones((2, 2)));
    }
}
