//! Batched reverse-mode gradient tape.
//!
//! Every node holds a row-major `rows x cols` matrix; rows are samples (or
//! rays after compositing). Nodes are evaluated eagerly when pushed, and
//! `backward` walks them in reverse, accumulating parameter gradients into a
//! [`GradBuffer`].

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{GridLayout, LevelMask};
use crate::nn::params::GradBuffer;
use crate::render::quadrature;

pub type NodeId = usize;

/// Parameter location of a hash grid.
#[derive(Clone, Debug)]
pub struct GridBinding {
    pub offset: usize,
    pub layout: Arc<GridLayout>,
}

/// Parameter location of one affine layer: `out x in` weights then `out` biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearLayer {
    pub weight: usize,
    pub bias: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearLayer {
    pub fn param_count(&self) -> usize {
        (self.in_dim + 1) * self.out_dim
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Relu,
    Softplus,
    Sigmoid,
    /// `exp(min(x, cap))`
    ExpClamp(f64),
    /// Identity forward, no gradient backward.
    Detach,
}

/// Per-ray segmentation of the sample rows fed to a composite node.
#[derive(Clone, Debug, Default)]
pub struct RayLayout {
    /// Row offsets; ray `r` owns rows `starts[r]..starts[r + 1]`.
    pub starts: Vec<usize>,
    pub t: Vec<f64>,
    pub t_far: Vec<f64>,
    /// Caller-side ray identifiers used in diagnostics.
    pub ray_ids: Vec<usize>,
}

impl RayLayout {
    pub fn rays(&self) -> usize {
        self.t_far.len()
    }

    pub fn samples(&self) -> usize {
        self.t.len()
    }

    pub fn range(&self, r: usize) -> std::ops::Range<usize> {
        self.starts[r]..self.starts[r + 1]
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param {
        offset: usize,
    },
    Encode {
        points: Arc<Vec<[f64; 3]>>,
        grid: GridBinding,
        mask: Option<LevelMask>,
    },
    Linear {
        input: NodeId,
        layer: LinearLayer,
    },
    Unary {
        input: NodeId,
        kind: Unary,
    },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Concat(NodeId, NodeId),
    Columns {
        input: NodeId,
        start: usize,
    },
    Composite {
        sigma: NodeId,
        attrs: NodeId,
        layout: Arc<RayLayout>,
        background: Vec<f64>,
        residual: Vec<f64>,
    },
    SquaredError {
        pred: NodeId,
        target: Vec<f64>,
        row_weight: Vec<f64>,
    },
    AbsError {
        pred: NodeId,
        target: Vec<f64>,
        row_weight: Vec<f64>,
    },
    BinaryCrossEntropy {
        pred: NodeId,
        target: Vec<f64>,
        row_weight: Vec<f64>,
    },
    AbsDiffSum {
        a: NodeId,
        b: NodeId,
        weight: f64,
    },
    Sum(NodeId),
    Combine(Vec<(NodeId, f64)>),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
}

/// Probability clamp used by the cross-entropy loss.
pub const BCE_EPS: f64 = 1e-6;

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        (self.nodes[id].rows, self.nodes[id].cols)
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id].value[0]
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> NodeId {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            op,
            rows,
            cols,
            value,
        });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> NodeId {
        assert_eq!(value.len(), rows * cols, "leaf shape");
        self.push(Op::Leaf, rows, cols, value)
    }

    /// Exposes `rows * cols` parameters starting at `offset` as a node.
    pub fn param(&mut self, params: &[f64], offset: usize, rows: usize, cols: usize) -> NodeId {
        let value = params[offset..offset + rows * cols].to_vec();
        self.push(Op::Param { offset }, rows, cols, value)
    }

    pub fn encode(
        &mut self,
        params: &[f64],
        grid: &GridBinding,
        points: &Arc<Vec<[f64; 3]>>,
        mask: Option<LevelMask>,
    ) -> NodeId {
        let layout = &grid.layout;
        let cols = layout.config.output_dim();
        let table = &params[grid.offset..grid.offset + layout.config.param_count()];
        let mut value = vec![0.0; points.len() * cols];
        for (row, x) in value.chunks_exact_mut(cols).zip(points.iter()) {
            layout.encode_into(*x, table, mask, row);
        }
        self.push(
            Op::Encode {
                points: Arc::clone(points),
                grid: grid.clone(),
                mask,
            },
            points.len(),
            cols,
            value,
        )
    }

    pub fn linear(&mut self, params: &[f64], input: NodeId, layer: LinearLayer) -> Result<NodeId> {
        let (rows, cols) = self.shape(input);
        if cols != layer.in_dim {
            return Err(Error::Shape(format!(
                "linear layer expects {} inputs, got {cols}",
                layer.in_dim
            )));
        }
        let (k, n) = (layer.in_dim, layer.out_dim);
        let mut value = vec![0.0; rows * n];
        for row in value.chunks_exact_mut(n) {
            row.copy_from_slice(&params[layer.bias..layer.bias + n]);
        }
        let x = &self.nodes[input].value;
        let w = &params[layer.weight..layer.weight + n * k];
        if rows > 0 {
            // value (rows x n) += x (rows x k) * w^T (k x n)
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    k,
                    n,
                    1.0,
                    x.as_ptr(),
                    k as isize,
                    1,
                    w.as_ptr(),
                    1,
                    k as isize,
                    1.0,
                    value.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
        Ok(self.push(Op::Linear { input, layer }, rows, n, value))
    }

    pub fn unary(&mut self, input: NodeId, kind: Unary) -> NodeId {
        let (rows, cols) = self.shape(input);
        let x = &self.nodes[input].value;
        let value = x
            .iter()
            .map(|&v| match kind {
                Unary::Relu => v.max(0.0),
                Unary::Softplus => softplus(v),
                Unary::Sigmoid => sigmoid(v),
                Unary::ExpClamp(cap) => v.min(cap).exp(),
                Unary::Detach => v,
            })
            .collect();
        self.push(Op::Unary { input, kind }, rows, cols, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let value = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x + y)
            .collect();
        let (rows, cols) = self.shape(a);
        Ok(self.push(Op::Add(a, b), rows, cols, value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let value = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x * y)
            .collect();
        let (rows, cols) = self.shape(a);
        Ok(self.push(Op::Mul(a, b), rows, cols, value))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ra != rb {
            return Err(Error::Shape(format!("concat rows {ra} vs {rb}")));
        }
        let mut value = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            value.extend_from_slice(&self.nodes[a].value[r * ca..(r + 1) * ca]);
            value.extend_from_slice(&self.nodes[b].value[r * cb..(r + 1) * cb]);
        }
        Ok(self.push(Op::Concat(a, b), ra, ca + cb, value))
    }

    pub fn columns(&mut self, input: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (rows, cols) = self.shape(input);
        if start + len > cols {
            return Err(Error::Shape(format!(
                "columns {start}..{} of {cols}",
                start + len
            )));
        }
        let x = &self.nodes[input].value;
        let mut value = Vec::with_capacity(rows * len);
        for r in 0..rows {
            value.extend_from_slice(&x[r * cols + start..r * cols + start + len]);
        }
        Ok(self.push(Op::Columns { input, start }, rows, len, value))
    }

    /// Composites per-sample densities (`N x 1`) and attributes (`N x k`)
    /// into one row per ray: `[attrs.., depth, opacity]`.
    pub fn composite(
        &mut self,
        sigma: NodeId,
        attrs: NodeId,
        layout: &Arc<RayLayout>,
        background: &[f64],
    ) -> Result<NodeId> {
        let (ns, cs) = self.shape(sigma);
        let (na, k) = self.shape(attrs);
        if cs != 1 || ns != layout.samples() || na != ns {
            return Err(Error::Shape(format!(
                "composite expects {} samples, got sigma {ns}x{cs}, attrs {na}x{k}",
                layout.samples()
            )));
        }
        let s = &self.nodes[sigma].value;
        let a = &self.nodes[attrs].value;
        let rays = layout.rays();
        let cols = k + 2;
        let mut value = vec![0.0; rays * cols];
        let mut residual = vec![0.0; rays];
        let mut w = Vec::new();
        for r in 0..rays {
            let range = layout.range(r);
            if s[range.clone()].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteDensity {
                    ray: layout.ray_ids.get(r).copied().unwrap_or(r),
                });
            }
            let t = &layout.t[range.clone()];
            w.resize(t.len(), 0.0);
            let res = quadrature::weights_into(t, &s[range.clone()], layout.t_far[r], &mut w);
            residual[r] = res;
            let row = &mut value[r * cols..(r + 1) * cols];
            for (i, wi) in w.iter().enumerate() {
                let sample = range.start + i;
                for j in 0..k {
                    row[j] += wi * a[sample * k + j];
                }
                row[k] += wi * t[i];
                row[k + 1] += wi;
            }
            for j in 0..k {
                row[j] += res * background.get(j).copied().unwrap_or(0.0);
            }
        }
        Ok(self.push(
            Op::Composite {
                sigma,
                attrs,
                layout: Arc::clone(layout),
                background: background.to_vec(),
                residual,
            },
            rays,
            cols,
            value,
        ))
    }

    fn check_loss_shape(&self, pred: NodeId, target: &[f64], row_weight: &[f64]) -> Result<()> {
        let (rows, cols) = self.shape(pred);
        if target.len() != rows * cols || row_weight.len() != rows {
            return Err(Error::Shape(format!(
                "loss on {rows}x{cols} prediction with {} targets and {} weights",
                target.len(),
                row_weight.len()
            )));
        }
        Ok(())
    }

    /// `sum_r w_r sum_c (p - t)^2`
    pub fn squared_error(
        &mut self,
        pred: NodeId,
        target: Vec<f64>,
        row_weight: Vec<f64>,
    ) -> Result<NodeId> {
        self.check_loss_shape(pred, &target, &row_weight)?;
        let cols = self.shape(pred).1;
        let p = &self.nodes[pred].value;
        let v: f64 = p
            .iter()
            .zip(&target)
            .enumerate()
            .map(|(i, (p, t))| row_weight[i / cols] * (p - t) * (p - t))
            .sum();
        Ok(self.push(
            Op::SquaredError {
                pred,
                target,
                row_weight,
            },
            1,
            1,
            vec![v],
        ))
    }

    /// `sum_r w_r sum_c |p - t|`
    pub fn abs_error(
        &mut self,
        pred: NodeId,
        target: Vec<f64>,
        row_weight: Vec<f64>,
    ) -> Result<NodeId> {
        self.check_loss_shape(pred, &target, &row_weight)?;
        let cols = self.shape(pred).1;
        let p = &self.nodes[pred].value;
        let v: f64 = p
            .iter()
            .zip(&target)
            .enumerate()
            .map(|(i, (p, t))| row_weight[i / cols] * (p - t).abs())
            .sum();
        Ok(self.push(
            Op::AbsError {
                pred,
                target,
                row_weight,
            },
            1,
            1,
            vec![v],
        ))
    }

    /// Cross-entropy of probabilities against binary targets, clamped to
    /// `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn binary_cross_entropy(
        &mut self,
        pred: NodeId,
        target: Vec<f64>,
        row_weight: Vec<f64>,
    ) -> Result<NodeId> {
        self.check_loss_shape(pred, &target, &row_weight)?;
        let cols = self.shape(pred).1;
        let p = &self.nodes[pred].value;
        let v: f64 = p
            .iter()
            .zip(&target)
            .enumerate()
            .map(|(i, (p, y))| {
                let q = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -row_weight[i / cols] * (y * q.ln() + (1.0 - y) * (1.0 - q).ln())
            })
            .sum();
        Ok(self.push(
            Op::BinaryCrossEntropy {
                pred,
                target,
                row_weight,
            },
            1,
            1,
            vec![v],
        ))
    }

    /// `weight * sum |a - b|`
    pub fn abs_diff_sum(&mut self, a: NodeId, b: NodeId, weight: f64) -> Result<NodeId> {
        self.same_shape(a, b, "abs_diff_sum")?;
        let v: f64 = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            * weight;
        Ok(self.push(Op::AbsDiffSum { a, b, weight }, 1, 1, vec![v]))
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let v = self.nodes[input].value.iter().sum();
        self.push(Op::Sum(input), 1, 1, vec![v])
    }

    /// Weighted sum of scalar nodes.
    pub fn combine(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let mut v = 0.0;
        for &(id, c) in terms {
            if self.shape(id) != (1, 1) {
                return Err(Error::Shape("combine expects scalar nodes".into()));
            }
            v += c * self.scalar(id);
        }
        Ok(self.push(Op::Combine(terms.to_vec()), 1, 1, vec![v]))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// Propagates `d root / d node` back through the tape; `root` must be a
    /// scalar. Parameter gradients are accumulated into `grad`.
    pub fn backward(&self, root: NodeId, params: &[f64], grad: &mut GradBuffer) {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar root");
        let mut adj: Vec<Vec<f64>> = self.nodes[..=root].iter().map(|_| Vec::new()).collect();
        adj[root] = vec![1.0];
        for id in (0..=root).rev() {
            let g = std::mem::take(&mut adj[id]);
            if g.is_empty() {
                continue;
            }
            self.backward_node(id, &g, &mut adj, params, grad);
        }
    }

    fn backward_node(
        &self,
        id: NodeId,
        g: &[f64],
        adj: &mut [Vec<f64>],
        params: &[f64],
        grad: &mut GradBuffer,
    ) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Param { offset } => {
                let dst = grad.slice_mut(*offset, g.len());
                dst.iter_mut().zip(g).for_each(|(d, v)| *d += v);
            }
            Op::Encode { points, grid, mask } => {
                let cols = node.cols;
                for (x, row) in points.iter().zip(g.chunks_exact(cols)) {
                    grid.layout
                        .encode_backward(*x, *mask, row, |i, v| grad.add(grid.offset + i, v));
                }
            }
            Op::Linear { input, layer } => {
                let rows = node.rows;
                let (k, n) = (layer.in_dim, layer.out_dim);
                let x = &self.nodes[*input].value;
                {
                    let db = grad.slice_mut(layer.bias, n);
                    for row in g.chunks_exact(n) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                }
                if rows > 0 {
                    let dw = grad.slice_mut(layer.weight, n * k);
                    // dw (n x k) += g^T (n x rows) * x (rows x k)
                    unsafe {
                        matrixmultiply::dgemm(
                            n,
                            rows,
                            k,
                            1.0,
                            g.as_ptr(),
                            1,
                            n as isize,
                            x.as_ptr(),
                            k as isize,
                            1,
                            1.0,
                            dw.as_mut_ptr(),
                            k as isize,
                            1,
                        );
                    }
                    let w = &params[layer.weight..layer.weight + n * k];
                    let dx = ensure(adj, *input, rows * k);
                    // dx (rows x k) += g (rows x n) * w (n x k)
                    unsafe {
                        matrixmultiply::dgemm(
                            rows,
                            n,
                            k,
                            1.0,
                            g.as_ptr(),
                            n as isize,
                            1,
                            w.as_ptr(),
                            k as isize,
                            1,
                            1.0,
                            dx.as_mut_ptr(),
                            k as isize,
                            1,
                        );
                    }
                }
            }
            Op::Unary { input, kind } => {
                if *kind == Unary::Detach {
                    return;
                }
                let x = &self.nodes[*input].value;
                let y = &node.value;
                let dx = ensure(adj, *input, g.len());
                for i in 0..g.len() {
                    let d = match kind {
                        Unary::Relu => {
                            if x[i] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Unary::Softplus => sigmoid(x[i]),
                        Unary::Sigmoid => y[i] * (1.0 - y[i]),
                        Unary::ExpClamp(cap) => {
                            if x[i] < *cap {
                                y[i]
                            } else {
                                0.0
                            }
                        }
                        Unary::Detach => 0.0,
                    };
                    dx[i] += g[i] * d;
                }
            }
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    let d = ensure(adj, id, g.len());
                    d.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                {
                    let da = ensure(adj, *a, g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * vb[i];
                    }
                }
                let db = ensure(adj, *b, g.len());
                for i in 0..g.len() {
                    db[i] += g[i] * va[i];
                }
            }
            Op::Concat(a, b) => {
                let ca = self.nodes[*a].cols;
                let cb = self.nodes[*b].cols;
                let rows = node.rows;
                {
                    let da = ensure(adj, *a, rows * ca);
                    for r in 0..rows {
                        for c in 0..ca {
                            da[r * ca + c] += g[r * (ca + cb) + c];
                        }
                    }
                }
                let db = ensure(adj, *b, rows * cb);
                for r in 0..rows {
                    for c in 0..cb {
                        db[r * cb + c] += g[r * (ca + cb) + ca + c];
                    }
                }
            }
            Op::Columns { input, start } => {
                let in_cols = self.nodes[*input].cols;
                let (rows, cols) = (node.rows, node.cols);
                let dx = ensure(adj, *input, rows * in_cols);
                for r in 0..rows {
                    for c in 0..cols {
                        dx[r * in_cols + start + c] += g[r * cols + c];
                    }
                }
            }
            Op::Composite {
                sigma,
                attrs,
                layout,
                background,
                residual,
            } => {
                let k = self.nodes[*attrs].cols;
                let s = &self.nodes[*sigma].value;
                let a = &self.nodes[*attrs].value;
                let n = layout.samples();
                let mut d_sigma = vec![0.0; n];
                let mut d_attrs = vec![0.0; n * k];
                let mut w = Vec::new();
                let mut v = Vec::new();
                for r in 0..layout.rays() {
                    let range = layout.range(r);
                    let t = &layout.t[range.clone()];
                    let gr = &g[r * (k + 2)..(r + 1) * (k + 2)];
                    w.resize(t.len(), 0.0);
                    quadrature::weights_into(t, &s[range.clone()], layout.t_far[r], &mut w);
                    v.clear();
                    for (i, wi) in w.iter().enumerate() {
                        let sample = range.start + i;
                        let mut vi = gr[k] * t[i] + gr[k + 1];
                        for j in 0..k {
                            vi += gr[j] * a[sample * k + j];
                            d_attrs[sample * k + j] += wi * gr[j];
                        }
                        v.push(vi);
                    }
                    let g_res: f64 = (0..k)
                        .map(|j| gr[j] * background.get(j).copied().unwrap_or(0.0))
                        .sum();
                    quadrature::weights_backward(
                        t,
                        &s[range.clone()],
                        layout.t_far[r],
                        &w,
                        residual[r],
                        &v,
                        g_res,
                        &mut d_sigma[range.clone()],
                    );
                }
                let ds = ensure(adj, *sigma, n);
                ds.iter_mut().zip(&d_sigma).for_each(|(d, v)| *d += v);
                let da = ensure(adj, *attrs, n * k);
                da.iter_mut().zip(&d_attrs).for_each(|(d, v)| *d += v);
            }
            Op::SquaredError {
                pred,
                target,
                row_weight,
            } => {
                let cols = self.nodes[*pred].cols;
                let p = &self.nodes[*pred].value;
                let dp = ensure(adj, *pred, p.len());
                for i in 0..p.len() {
                    dp[i] += g[0] * 2.0 * row_weight[i / cols] * (p[i] - target[i]);
                }
            }
            Op::AbsError {
                pred,
                target,
                row_weight,
            } => {
                let cols = self.nodes[*pred].cols;
                let p = &self.nodes[*pred].value;
                let dp = ensure(adj, *pred, p.len());
                for i in 0..p.len() {
                    let diff = p[i] - target[i];
                    let sign = if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    dp[i] += g[0] * row_weight[i / cols] * sign;
                }
            }
            Op::BinaryCrossEntropy {
                pred,
                target,
                row_weight,
            } => {
                let cols = self.nodes[*pred].cols;
                let p = &self.nodes[*pred].value;
                let dp = ensure(adj, *pred, p.len());
                for i in 0..p.len() {
                    if p[i] <= BCE_EPS || p[i] >= 1.0 - BCE_EPS {
                        continue;
                    }
                    let y = target[i];
                    dp[i] += g[0] * row_weight[i / cols] * (-y / p[i] + (1.0 - y) / (1.0 - p[i]));
                }
            }
            Op::AbsDiffSum { a, b, weight } => {
                let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let sign: Vec<f64> = va
                    .iter()
                    .zip(vb)
                    .map(|(x, y)| {
                        if x > y {
                            1.0
                        } else if x < y {
                            -1.0
                        } else {
                            0.0
                        }
                    })
                    .collect();
                {
                    let da = ensure(adj, *a, sign.len());
                    for i in 0..sign.len() {
                        da[i] += g[0] * weight * sign[i];
                    }
                }
                let db = ensure(adj, *b, sign.len());
                for i in 0..sign.len() {
                    db[i] -= g[0] * weight * sign[i];
                }
            }
            Op::Sum(input) => {
                let n = self.nodes[*input].value.len();
                let dx = ensure(adj, *input, n);
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Combine(terms) => {
                for &(id, c) in terms {
                    let d = ensure(adj, id, 1);
                    d[0] += g[0] * c;
                }
            }
        }
    }
}

fn ensure(adj: &mut [Vec<f64>], id: NodeId, len: usize) -> &mut Vec<f64> {
    let slot = &mut adj[id];
    if slot.is_empty() {
        slot.resize(len, 0.0);
    }
    slot
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad_of(tape: &Tape, root: NodeId, params: &[f64]) -> Vec<f64> {
        let mut g = GradBuffer::new(params.len());
        tape.backward(root, params, &mut g);
        g.as_slice().to_vec()
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let params = vec![0.3, -1.2, 4.0];
        let mut tape = Tape::new();
        let _p = tape.param(&params, 0, 1, 3);
        let c = tape.leaf(1, 1, vec![2.5]);
        let g = grad_of(&tape, c, &params);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let params = vec![0.3, -1.2, 4.0, 0.0];
        let mut tape = Tape::new();
        let p = tape.param(&params, 0, 2, 2);
        let sq = tape.mul(p, p).unwrap();
        let loss = tape.sum(sq);
        let g = grad_of(&tape, loss, &params);
        for (gi, pi) in g.iter().zip(&params) {
            assert_eq!(*gi, 2.0 * pi);
        }
    }

    #[test]
    fn detach_blocks_gradient() {
        let params = vec![1.5];
        let mut tape = Tape::new();
        let p = tape.param(&params, 0, 1, 1);
        let d = tape.unary(p, Unary::Detach);
        let loss = tape.sum(d);
        assert_eq!(tape.scalar(loss), 1.5);
        assert_eq!(grad_of(&tape, loss, &params), vec![0.0]);
    }

    #[test]
    fn linear_matches_manual_product() {
        // 2 rows, 3 -> 2
        let layer = LinearLayer {
            weight: 0,
            bias: 6,
            in_dim: 3,
            out_dim: 2,
        };
        let params = vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0, 0.1, -0.2];
        let mut tape = Tape::new();
        let x = tape.leaf(2, 3, vec![1.0, 0.0, 2.0, -1.0, 1.0, 1.0]);
        let y = tape.linear(&params, x, layer).unwrap();
        let v = tape.value(y);
        assert_eq!(v, &[7.1, -1.2, 4.1, 1.3]);
        assert!(tape.linear(&params, y, layer).is_err());
    }

    #[test]
    fn exp_clamp_saturates() {
        let mut tape = Tape::new();
        let x = tape.leaf(1, 2, vec![20.0, 1.0]);
        let y = tape.unary(x, Unary::ExpClamp(15.0));
        assert_eq!(tape.value(y)[0], 15f64.exp());
        assert_eq!(tape.value(y)[1], 1f64.exp());
    }
}
