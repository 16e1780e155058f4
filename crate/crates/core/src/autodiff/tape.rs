use super::{AutodiffError, Shape, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Embed { table: NodeId, ids: Vec<usize> },
    Affine { w: NodeId, b: NodeId, x: NodeId },
    MeanPool { x: NodeId, axis: usize },
    Concat { parts: Vec<NodeId> },
    ConcatCols { left: NodeId, right: NodeId },
    RepeatRows { x: NodeId },
    AddRow { x: NodeId, row: NodeId },
    Scale { x: NodeId, c: f64 },
    AddScalar { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Exp { x: NodeId },
    Log { x: NodeId },
    Sum { x: NodeId },
    Index { x: NodeId, at: usize },
    SoftmaxXent { logits: NodeId, golds: Vec<usize>, probs: Vec<f64> },
}

#[derive(Clone, Debug)]
struct Node {
    shape: Shape,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Define-by-run reverse-mode tape.
///
/// Every operation appends a node after its inputs, so the node vector is
/// always in topological order and `backward` is a single reverse sweep.
/// Leaf gradients persist across `backward` calls and accumulate.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Shape, value: Vec<f64>, requires_grad: bool, op: Op) -> NodeId {
        debug_assert_eq!(shape.numel(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        self.leaf_grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&id| self.node(id).requires_grad)
    }

    /// Copies a tensor onto the tape; it participates in gradients iff the
    /// tensor requires them.
    pub fn leaf(&mut self, tensor: &Tensor) -> NodeId {
        self.push(
            tensor.shape().clone(),
            tensor.data().to_vec(),
            tensor.requires_grad(),
            Op::Leaf,
        )
    }

    /// A leaf that always receives gradients, regardless of the tensor flag.
    pub fn variable(&mut self, tensor: &Tensor) -> NodeId {
        self.push(
            tensor.shape().clone(),
            tensor.data().to_vec(),
            true,
            Op::Leaf,
        )
    }

    pub fn constant(&mut self, shape: Shape, value: Vec<f64>) -> Result<NodeId, AutodiffError> {
        if shape.numel() != value.len() {
            return Err(AutodiffError::LengthMismatch {
                shape,
                len: value.len(),
            });
        }
        Ok(self.push(shape, value, false, Op::Leaf))
    }

    pub fn scalar_constant(&mut self, value: f64) -> NodeId {
        self.push(Shape::scalar(), vec![value], false, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.node(id).value
    }

    pub fn shape(&self, id: NodeId) -> &Shape {
        &self.node(id).shape
    }

    /// Value of a single-element node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.node(id).value[0]
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.node(id).requires_grad
    }

    /// Row lookup: `table` is `[V, d]`, result is `[ids.len(), d]`.
    pub fn embed(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId, AutodiffError> {
        let t = self.node(table);
        let (vocab, dim) = match t.shape.dims() {
            [v, d] => (*v, *d),
            _ => return Err(AutodiffError::rank("embed", &t.shape, 2)),
        };
        if ids.is_empty() {
            return Err(AutodiffError::EmptyInput("embed"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "embed",
                index: bad,
                len: vocab,
            });
        }
        let mut value = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            value.extend_from_slice(&t.value[i * dim..(i + 1) * dim]);
        }
        let rg = t.requires_grad;
        Ok(self.push(
            Shape::matrix(ids.len(), dim),
            value,
            rg,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// `W x + b` with `W: [out, in]`, `b: [out]` and `x` either `[in]` or
    /// `[n, in]` (the bias is added to every row).
    pub fn affine(&mut self, w: NodeId, b: NodeId, x: NodeId) -> Result<NodeId, AutodiffError> {
        let (out, inp) = match self.node(w).shape.dims() {
            [o, i] => (*o, *i),
            _ => return Err(AutodiffError::rank("affine", &self.node(w).shape, 2)),
        };
        if self.node(b).shape.dims() != [out] {
            return Err(AutodiffError::mismatch(
                "affine bias",
                &self.node(w).shape,
                &self.node(b).shape,
            ));
        }
        let xs = self.node(x).shape.clone();
        let (rows, out_shape) = match xs.dims() {
            [i] if *i == inp => (1, Shape::vector(out)),
            [n, i] if *i == inp => (*n, Shape::matrix(*n, out)),
            _ => return Err(AutodiffError::mismatch("affine", &self.node(w).shape, &xs)),
        };
        let wv = &self.node(w).value;
        let bv = &self.node(b).value;
        let xv = &self.node(x).value;
        let mut value = vec![0.0; rows * out];
        for r in 0..rows {
            let xr = &xv[r * inp..(r + 1) * inp];
            for o in 0..out {
                let wr = &wv[o * inp..(o + 1) * inp];
                let dot: f64 = wr.iter().zip(xr).map(|(a, b)| a * b).sum();
                value[r * out + o] = dot + bv[o];
            }
        }
        let rg = self.any_grad(&[w, b, x]);
        Ok(self.push(out_shape, value, rg, Op::Affine { w, b, x }))
    }

    /// Mean over `axis` of a vector or matrix.
    pub fn mean_pool(&mut self, x: NodeId, axis: usize) -> Result<NodeId, AutodiffError> {
        let s = self.node(x).shape.clone();
        let (rows, cols) = s
            .as_matrix()
            .ok_or_else(|| AutodiffError::rank("mean_pool", &s, 2))?;
        let (rows, cols) = if s.rank() == 1 {
            // a vector pools to a scalar along its only axis
            if axis != 0 {
                return Err(AutodiffError::InvalidAxis { axis, rank: 1 });
            }
            (cols, 1)
        } else {
            (rows, cols)
        };
        let v = &self.node(x).value;
        let (value, shape) = match axis {
            0 => {
                let mut out = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        out[c] += v[r * cols + c];
                    }
                }
                let n = rows as f64;
                out.iter_mut().for_each(|o| *o /= n);
                (out, Shape::vector(cols))
            }
            1 if s.rank() == 2 => {
                let n = cols as f64;
                let out = (0..rows)
                    .map(|r| v[r * cols..(r + 1) * cols].iter().sum::<f64>() / n)
                    .collect();
                (out, Shape::vector(rows))
            }
            _ => {
                return Err(AutodiffError::InvalidAxis {
                    axis,
                    rank: s.rank(),
                })
            }
        };
        let rg = self.node(x).requires_grad;
        Ok(self.push(shape, value, rg, Op::MeanPool { x, axis }))
    }

    /// Concatenates vectors (scalars count as length-1 vectors).
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, AutodiffError> {
        if parts.is_empty() {
            return Err(AutodiffError::EmptyInput("concat"));
        }
        let mut value = Vec::new();
        for &p in parts {
            let n = self.node(p);
            if n.shape.rank() != 1 {
                return Err(AutodiffError::rank("concat", &n.shape, 1));
            }
            value.extend_from_slice(&n.value);
        }
        let rg = self.any_grad(parts);
        let len = value.len();
        Ok(self.push(
            Shape::vector(len),
            value,
            rg,
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Joins two matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, left: NodeId, right: NodeId) -> Result<NodeId, AutodiffError> {
        let ls = self.node(left).shape.clone();
        let rs = self.node(right).shape.clone();
        let (n, p, q) = match (ls.dims(), rs.dims()) {
            ([n1, p], [n2, q]) if n1 == n2 => (*n1, *p, *q),
            _ => return Err(AutodiffError::mismatch("concat_cols", &ls, &rs)),
        };
        let lv = &self.node(left).value;
        let rv = &self.node(right).value;
        let mut value = Vec::with_capacity(n * (p + q));
        for r in 0..n {
            value.extend_from_slice(&lv[r * p..(r + 1) * p]);
            value.extend_from_slice(&rv[r * q..(r + 1) * q]);
        }
        let rg = self.any_grad(&[left, right]);
        Ok(self.push(
            Shape::matrix(n, p + q),
            value,
            rg,
            Op::ConcatCols { left, right },
        ))
    }

    /// Stacks `n` copies of a vector into an `[n, d]` matrix.
    pub fn repeat_rows(&mut self, x: NodeId, n: usize) -> Result<NodeId, AutodiffError> {
        let s = self.node(x).shape.clone();
        let d = match s.dims() {
            [d] => *d,
            _ => return Err(AutodiffError::rank("repeat_rows", &s, 1)),
        };
        if n == 0 {
            return Err(AutodiffError::EmptyInput("repeat_rows"));
        }
        let v = self.node(x).value.clone();
        let value = v.iter().copied().cycle().take(n * d).collect();
        let rg = self.node(x).requires_grad;
        Ok(self.push(Shape::matrix(n, d), value, rg, Op::RepeatRows { x }))
    }

    /// Adds a `[d]` row to every row of an `[n, d]` matrix.
    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId, AutodiffError> {
        let xs = self.node(x).shape.clone();
        let rs = self.node(row).shape.clone();
        let (n, d) = match (xs.dims(), rs.dims()) {
            ([n, d], [d2]) if d == d2 => (*n, *d),
            _ => return Err(AutodiffError::mismatch("add_row", &xs, &rs)),
        };
        let rv = &self.node(row).value;
        let value = self
            .node(x)
            .value
            .iter()
            .enumerate()
            .map(|(i, v)| v + rv[i % d])
            .collect();
        let rg = self.any_grad(&[x, row]);
        Ok(self.push(Shape::matrix(n, d), value, rg, Op::AddRow { x, row }))
    }

    /// Multiplies every entry by a constant.
    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let n = self.node(x);
        let value = n.value.iter().map(|v| v * c).collect();
        let (shape, rg) = (n.shape.clone(), n.requires_grad);
        self.push(shape, value, rg, Op::Scale { x, c })
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.scale(x, -1.0)
    }

    /// Adds a constant to every entry.
    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let n = self.node(x);
        let value = n.value.iter().map(|v| v + c).collect();
        let (shape, rg) = (n.shape.clone(), n.requires_grad);
        self.push(shape, value, rg, Op::AddScalar { x })
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Shape, AutodiffError> {
        let (sa, sb) = (&self.node(a).shape, &self.node(b).shape);
        if sa != sb {
            return Err(AutodiffError::mismatch(op, sa, sb));
        }
        Ok(sa.clone())
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId, AutodiffError> {
        let shape = self.same_shape(name, a, b)?;
        let value = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(x, y)| f(*x, *y))
            .collect();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(shape, value, rg, op))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let n = self.node(x);
        let value = n.value.iter().map(|v| v.exp()).collect();
        let (shape, rg) = (n.shape.clone(), n.requires_grad);
        self.push(shape, value, rg, Op::Exp { x })
    }

    /// Natural log; every entry must be strictly positive.
    pub fn log(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let n = self.node(x);
        if let Some(&v) = n.value.iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(AutodiffError::Domain { op: "log", value: v });
        }
        let value = n.value.iter().map(|v| v.ln()).collect();
        let (shape, rg) = (n.shape.clone(), n.requires_grad);
        Ok(self.push(shape, value, rg, Op::Log { x }))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let n = self.node(x);
        let total: f64 = n.value.iter().sum();
        let rg = n.requires_grad;
        self.push(Shape::scalar(), vec![total], rg, Op::Sum { x })
    }

    /// Extracts one entry (flat row-major index) as a scalar.
    pub fn index(&mut self, x: NodeId, at: usize) -> Result<NodeId, AutodiffError> {
        let n = self.node(x);
        if at >= n.value.len() {
            return Err(AutodiffError::IndexOutOfRange {
                op: "index",
                index: at,
                len: n.value.len(),
            });
        }
        let (v, rg) = (n.value[at], n.requires_grad);
        Ok(self.push(Shape::scalar(), vec![v], rg, Op::Index { x, at }))
    }

    /// `-log softmax(logits)[gold]` for a single logit vector.
    pub fn softmax_xent(&mut self, logits: NodeId, gold: usize) -> Result<NodeId, AutodiffError> {
        let s = self.node(logits).shape.clone();
        let k = match s.dims() {
            [k] => *k,
            _ => return Err(AutodiffError::rank("softmax_xent", &s, 1)),
        };
        let (losses, probs) = softmax_rows(&self.node(logits).value, 1, k, &[gold])?;
        let rg = self.node(logits).requires_grad;
        Ok(self.push(
            Shape::scalar(),
            losses,
            rg,
            Op::SoftmaxXent {
                logits,
                golds: vec![gold],
                probs,
            },
        ))
    }

    /// Row-wise cross entropy: `logits` is `[n, k]`, result is the `[n]`
    /// vector of per-row losses.
    pub fn softmax_xent_rows(
        &mut self,
        logits: NodeId,
        golds: &[usize],
    ) -> Result<NodeId, AutodiffError> {
        let s = self.node(logits).shape.clone();
        let (n, k) = match s.dims() {
            [n, k] => (*n, *k),
            _ => return Err(AutodiffError::rank("softmax_xent_rows", &s, 2)),
        };
        if golds.len() != n {
            return Err(AutodiffError::LengthMismatch {
                shape: s,
                len: golds.len(),
            });
        }
        let (losses, probs) = softmax_rows(&self.node(logits).value, n, k, golds)?;
        let rg = self.node(logits).requires_grad;
        Ok(self.push(
            Shape::vector(n),
            losses,
            rg,
            Op::SoftmaxXent {
                logits,
                golds: golds.to_vec(),
                probs,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`. Gradients of trainable leaves are
    /// added to the tape's persistent leaf buffers.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), AutodiffError> {
        if loss.0 >= self.nodes.len() {
            return Err(AutodiffError::UnknownNode(loss.0));
        }
        if !self.node(loss).shape.is_scalar() {
            return Err(AutodiffError::NotScalar(self.node(loss).shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    let slot = self.leaf_grads[id].get_or_insert_with(|| vec![0.0; g.len()]);
                    add_into(slot, &g);
                }
                Op::Embed { table, ids } => {
                    let dim = node.shape.dims()[1];
                    let tv = self.nodes[table.0].value.len();
                    let buf = grad_buf(&mut grads, *table, tv);
                    for (r, &i) in ids.iter().enumerate() {
                        for c in 0..dim {
                            buf[i * dim + c] += g[r * dim + c];
                        }
                    }
                }
                Op::Affine { w, b, x } => {
                    let (out, inp) = {
                        let d = self.nodes[w.0].shape.dims();
                        (d[0], d[1])
                    };
                    let rows = g.len() / out;
                    if self.nodes[w.0].requires_grad {
                        let xv = &self.nodes[x.0].value;
                        let buf = grad_buf(&mut grads, *w, out * inp);
                        for r in 0..rows {
                            for o in 0..out {
                                let go = g[r * out + o];
                                if go == 0.0 {
                                    continue;
                                }
                                let row = &mut buf[o * inp..(o + 1) * inp];
                                for (bw, xi) in row.iter_mut().zip(&xv[r * inp..(r + 1) * inp]) {
                                    *bw += go * xi;
                                }
                            }
                        }
                    }
                    if self.nodes[b.0].requires_grad {
                        let buf = grad_buf(&mut grads, *b, out);
                        for r in 0..rows {
                            add_into(buf, &g[r * out..(r + 1) * out]);
                        }
                    }
                    if self.nodes[x.0].requires_grad {
                        let wv = &self.nodes[w.0].value;
                        let buf = grad_buf(&mut grads, *x, rows * inp);
                        for r in 0..rows {
                            for o in 0..out {
                                let go = g[r * out + o];
                                if go == 0.0 {
                                    continue;
                                }
                                let dst = &mut buf[r * inp..(r + 1) * inp];
                                for (bx, wi) in dst.iter_mut().zip(&wv[o * inp..(o + 1) * inp]) {
                                    *bx += go * wi;
                                }
                            }
                        }
                    }
                }
                Op::MeanPool { x, axis } => {
                    let xs = &self.nodes[x.0].shape;
                    let (rows, cols) = if xs.rank() == 1 {
                        (xs.numel(), 1)
                    } else {
                        let d = xs.dims();
                        (d[0], d[1])
                    };
                    let buf = grad_buf(&mut grads, *x, rows * cols);
                    if *axis == 0 {
                        let n = rows as f64;
                        for r in 0..rows {
                            for c in 0..cols {
                                buf[r * cols + c] += g[c] / n;
                            }
                        }
                    } else {
                        let n = cols as f64;
                        for r in 0..rows {
                            for c in 0..cols {
                                buf[r * cols + c] += g[r] / n;
                            }
                        }
                    }
                }
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        if self.nodes[p.0].requires_grad {
                            let buf = grad_buf(&mut grads, *p, len);
                            add_into(buf, &g[offset..offset + len]);
                        }
                        offset += len;
                    }
                }
                Op::ConcatCols { left, right } => {
                    let n = node.shape.dims()[0];
                    let p = self.nodes[left.0].shape.dims()[1];
                    let q = self.nodes[right.0].shape.dims()[1];
                    if self.nodes[left.0].requires_grad {
                        let buf = grad_buf(&mut grads, *left, n * p);
                        for r in 0..n {
                            add_into(&mut buf[r * p..(r + 1) * p], &g[r * (p + q)..r * (p + q) + p]);
                        }
                    }
                    if self.nodes[right.0].requires_grad {
                        let buf = grad_buf(&mut grads, *right, n * q);
                        for r in 0..n {
                            add_into(
                                &mut buf[r * q..(r + 1) * q],
                                &g[r * (p + q) + p..(r + 1) * (p + q)],
                            );
                        }
                    }
                }
                Op::RepeatRows { x } => {
                    let d = self.nodes[x.0].value.len();
                    let buf = grad_buf(&mut grads, *x, d);
                    for chunk in g.chunks(d) {
                        add_into(buf, chunk);
                    }
                }
                Op::AddRow { x, row } => {
                    let d = self.nodes[row.0].value.len();
                    if self.nodes[x.0].requires_grad {
                        let buf = grad_buf(&mut grads, *x, g.len());
                        add_into(buf, &g);
                    }
                    if self.nodes[row.0].requires_grad {
                        let buf = grad_buf(&mut grads, *row, d);
                        for chunk in g.chunks(d) {
                            add_into(buf, chunk);
                        }
                    }
                }
                Op::Scale { x, c } => {
                    let buf = grad_buf(&mut grads, *x, g.len());
                    for (b, gi) in buf.iter_mut().zip(&g) {
                        *b += gi * c;
                    }
                }
                Op::AddScalar { x } => {
                    let buf = grad_buf(&mut grads, *x, g.len());
                    add_into(buf, &g);
                }
                Op::Add { a, b } | Op::Sub { a, b } => {
                    let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                    if self.nodes[a.0].requires_grad {
                        add_into(grad_buf(&mut grads, *a, g.len()), &g);
                    }
                    if self.nodes[b.0].requires_grad {
                        let buf = grad_buf(&mut grads, *b, g.len());
                        for (bb, gi) in buf.iter_mut().zip(&g) {
                            *bb += sign * gi;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    if self.nodes[a.0].requires_grad {
                        let bv = &self.nodes[b.0].value;
                        let buf = grad_buf(&mut grads, *a, g.len());
                        for ((ba, gi), bi) in buf.iter_mut().zip(&g).zip(bv) {
                            *ba += gi * bi;
                        }
                    }
                    if self.nodes[b.0].requires_grad {
                        let av = &self.nodes[a.0].value;
                        let buf = grad_buf(&mut grads, *b, g.len());
                        for ((bb, gi), ai) in buf.iter_mut().zip(&g).zip(av) {
                            *bb += gi * ai;
                        }
                    }
                }
                Op::Exp { x } => {
                    let buf = grad_buf(&mut grads, *x, g.len());
                    for ((b, gi), y) in buf.iter_mut().zip(&g).zip(&node.value) {
                        *b += gi * y;
                    }
                }
                Op::Log { x } => {
                    let xv = &self.nodes[x.0].value;
                    let buf = grad_buf(&mut grads, *x, g.len());
                    for ((b, gi), xi) in buf.iter_mut().zip(&g).zip(xv) {
                        *b += gi / xi;
                    }
                }
                Op::Sum { x } => {
                    let n = self.nodes[x.0].value.len();
                    let buf = grad_buf(&mut grads, *x, n);
                    buf.iter_mut().for_each(|b| *b += g[0]);
                }
                Op::Index { x, at } => {
                    let n = self.nodes[x.0].value.len();
                    grad_buf(&mut grads, *x, n)[*at] += g[0];
                }
                Op::SoftmaxXent { logits, golds, probs } => {
                    let k = probs.len() / golds.len();
                    let buf = grad_buf(&mut grads, *logits, probs.len());
                    for (r, &gold) in golds.iter().enumerate() {
                        for c in 0..k {
                            let onehot = if c == gold { 1.0 } else { 0.0 };
                            buf[r * k + c] += g[r] * (probs[r * k + c] - onehot);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.leaf_grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Adds a leaf's accumulated gradient into a tensor's gradient buffer.
    pub fn accumulate_grad(&self, id: NodeId, tensor: &mut Tensor) -> Result<(), AutodiffError> {
        if self.shape(id) != tensor.shape() {
            return Err(AutodiffError::mismatch(
                "accumulate_grad",
                self.shape(id),
                tensor.shape(),
            ));
        }
        if let (Some(src), Some(dst)) = (self.grad(id), tensor.grad_mut()) {
            add_into(dst, src);
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }
}

fn grad_buf(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Numerically stable per-row softmax; returns (per-row losses, probabilities).
fn softmax_rows(
    logits: &[f64],
    rows: usize,
    k: usize,
    golds: &[usize],
) -> Result<(Vec<f64>, Vec<f64>), AutodiffError> {
    let mut losses = Vec::with_capacity(rows);
    let mut probs = Vec::with_capacity(rows * k);
    for (r, &gold) in golds.iter().enumerate() {
        if gold >= k {
            return Err(AutodiffError::IndexOutOfRange {
                op: "softmax_xent",
                index: gold,
                len: k,
            });
        }
        let row = &logits[r * k..(r + 1) * k];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        losses.push(log_z - row[gold]);
        probs.extend(row.iter().map(|v| (v - log_z).exp()));
    }
    Ok((losses, probs))
}
