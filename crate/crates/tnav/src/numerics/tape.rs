//! Reverse-mode automatic differentiation on a per-forward-pass tape.
//!
//! The tape is rebuilt for every forward pass because graph-structured inputs
//! change size from sample to sample. Every op checks shapes up front and
//! rejects non-finite results.

use crate::error::{Error, Result};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type BackwardFn = Box<dyn Fn(&Tape, &[f64], &mut [Vec<f64>])>;

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].data.len(), 1);
        self.nodes[v.0].data[0]
    }

    fn push(&mut self, op: &'static str, shape: Vec<usize>, data: Vec<f64>, backward: Option<BackwardFn>) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op });
        }
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node { data, shape, backward });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        self.push("constant", shape, data, None)
    }

    pub fn constant_vec(&mut self, data: Vec<f64>) -> Result<Var> {
        let n = data.len();
        self.constant(vec![n], data)
    }

    pub fn scalar(&mut self, v: f64) -> Result<Var> {
        self.constant(vec![1], vec![v])
    }

    /// Leaf that participates in differentiation (parameters enter here).
    pub fn leaf(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        // A leaf with an identity backward marks it as a gradient sink.
        self.push("leaf", shape, data, Some(Box::new(|_, _, _| {})))
    }

    /// Run reverse accumulation from a scalar loss. Returns one gradient
    /// buffer per tape node; callers pick out the leaves they care about.
    pub fn backward(&self, loss: Var) -> Result<Vec<Vec<f64>>> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.data.len()])
            .collect();
        grads[loss.0][0] = 1.0;
        for i in (0..=loss.0).rev() {
            if let Some(back) = &self.nodes[i].backward {
                let g = std::mem::take(&mut grads[i]);
                back(self, &g, &mut grads);
                grads[i] = g;
            }
        }
        if grads.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "backward" });
        }
        Ok(grads)
    }

    // ---- elementwise binary ----

    fn check_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("add", a, b)?;
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(
            "add",
            shape,
            data,
            Some(Box::new(move |_, g, grads| {
                for (i, gi) in g.iter().enumerate() {
                    grads[a.0][i] += gi;
                    grads[b.0][i] += gi;
                }
            })),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("sub", a, b)?;
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(
            "sub",
            shape,
            data,
            Some(Box::new(move |_, g, grads| {
                for (i, gi) in g.iter().enumerate() {
                    grads[a.0][i] += gi;
                    grads[b.0][i] -= gi;
                }
            })),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("mul", a, b)?;
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(
            "mul",
            shape,
            data,
            Some(Box::new(move |t, g, grads| {
                let (av, bv) = (&t.nodes[a.0].data, &t.nodes[b.0].data);
                for (i, gi) in g.iter().enumerate() {
                    grads[a.0][i] += gi * bv[i];
                    grads[b.0][i] += gi * av[i];
                }
            })),
        )
    }

    /// `x` of shape [n, d] (or [d]) plus a [d] bias, broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.nodes[x.0].shape.clone();
        let bs = self.nodes[b.0].shape.clone();
        let d = *xs.last().unwrap_or(&0);
        if bs.len() != 1 || bs[0] != d {
            return Err(Error::ShapeMismatch { op: "add_bias", lhs: xs, rhs: bs });
        }
        let data = self.nodes[x.0]
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| v + self.nodes[b.0].data[i % d])
            .collect();
        self.push(
            "add_bias",
            xs,
            data,
            Some(Box::new(move |_, g, grads| {
                for (i, gi) in g.iter().enumerate() {
                    grads[x.0][i] += gi;
                    grads[b.0][i % d] += gi;
                }
            })),
        )
    }

    /// Rows of `x` [n, d] scaled elementwise by a [d] vector.
    pub fn row_mul(&mut self, x: Var, v: Var) -> Result<Var> {
        let xs = self.nodes[x.0].shape.clone();
        let vs = self.nodes[v.0].shape.clone();
        let d = *xs.last().unwrap_or(&0);
        if vs.len() != 1 || vs[0] != d {
            return Err(Error::ShapeMismatch { op: "row_mul", lhs: xs, rhs: vs });
        }
        let data = self.nodes[x.0]
            .data
            .iter()
            .enumerate()
            .map(|(i, a)| a * self.nodes[v.0].data[i % d])
            .collect();
        self.push(
            "row_mul",
            xs,
            data,
            Some(Box::new(move |t, g, grads| {
                let (xd, vd) = (&t.nodes[x.0].data, &t.nodes[v.0].data);
                for (i, gi) in g.iter().enumerate() {
                    grads[x.0][i] += gi * vd[i % d];
                    grads[v.0][i % d] += gi * xd[i];
                }
            })),
        )
    }

    // ---- elementwise unary ----

    fn unary(
        &mut self,
        op: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64 + 'static,
    ) -> Result<Var> {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| f(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(
            op,
            shape,
            data,
            Some(Box::new(move |t, g, grads| {
                let xd = &t.nodes[a.0].data;
                for (i, gi) in g.iter().enumerate() {
                    grads[a.0][i] += gi * df(xd[i]);
                }
            })),
        )
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary("neg", a, |x| -x, |_| -1.0)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("scale", a, move |x| x * c, move |_| c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("add_scalar", a, move |x| x + c, |_| 1.0)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), |x| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid_f, |x| {
            let s = sigmoid_f(x);
            s * (1.0 - s)
        })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, |x| 1.0 - x.tanh().powi(2))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, |x| x.exp())
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary("log", a, f64::ln, |x| 1.0 / x)
    }

    /// ln(1 + e^x), evaluated stably.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(
            "softplus",
            a,
            |x| x.max(0.0) + (-x.abs()).exp().ln_1p(),
            |x| sigmoid_f(x),
        )
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        self.unary("powf", a, move |x| x.powf(p), move |x| p * x.powf(p - 1.0))
    }

    /// Clamp with pass-through gradient inside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(
            "clamp",
            a,
            move |x| x.clamp(lo, hi),
            move |x| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }

    // ---- linear algebra ----

    /// [m,k]x[k,n] -> [m,n]; a 1-D lhs of length k is treated as [1,k] and the
    /// result squeezed back to [n].
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ashape = self.nodes[a.0].shape.clone();
        let bshape = self.nodes[b.0].shape.clone();
        let (m, k, squeeze) = match ashape.len() {
            1 => (1, ashape[0], true),
            2 => (ashape[0], ashape[1], false),
            _ => {
                return Err(Error::ShapeMismatch { op: "matmul", lhs: ashape, rhs: bshape });
            }
        };
        if bshape.len() != 2 || bshape[0] != k {
            return Err(Error::ShapeMismatch { op: "matmul", lhs: ashape, rhs: bshape });
        }
        let n = bshape[1];
        let mut out = vec![0.0; m * n];
        {
            let (av, bv) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
            for i in 0..m {
                for p in 0..k {
                    let aip = av[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let brow = &bv[p * n..(p + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] += aip * brow[j];
                    }
                }
            }
        }
        let shape = if squeeze { vec![n] } else { vec![m, n] };
        self.push(
            "matmul",
            shape,
            out,
            Some(Box::new(move |t, g, grads| {
                let (av, bv) = (&t.nodes[a.0].data, &t.nodes[b.0].data);
                // dA = G * B^T
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        let grow = &g[i * n..(i + 1) * n];
                        let brow = &bv[p * n..(p + 1) * n];
                        for j in 0..n {
                            acc += grow[j] * brow[j];
                        }
                        grads[a.0][i * k + p] += acc;
                    }
                }
                // dB = A^T * G
                for p in 0..k {
                    for i in 0..m {
                        let aip = av[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        let grow = &g[i * n..(i + 1) * n];
                        let brow = &mut grads[b.0][p * n..(p + 1) * n];
                        for j in 0..n {
                            brow[j] += aip * grow[j];
                        }
                    }
                }
            })),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].shape.clone();
        if s.len() != 2 {
            return Err(Error::InvalidArgument(format!("transpose needs a matrix, got {s:?}")));
        }
        let (m, n) = (s[0], s[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.nodes[a.0].data[i * n + j];
            }
        }
        self.push(
            "transpose",
            vec![n, m],
            out,
            Some(Box::new(move |_, g, grads| {
                for i in 0..m {
                    for j in 0..n {
                        grads[a.0][i * n + j] += g[j * m + i];
                    }
                }
            })),
        )
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.nodes[a.0].data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: shape,
            });
        }
        let data = self.nodes[a.0].data.clone();
        self.push(
            "reshape",
            shape,
            data,
            Some(Box::new(move |_, g, grads| {
                for (i, gi) in g.iter().enumerate() {
                    grads[a.0][i] += gi;
                }
            })),
        )
    }

    // ---- stitching ----

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        let mut offsets = Vec::with_capacity(parts.len());
        for &p in parts {
            offsets.push((p, data.len(), self.nodes[p.0].data.len()));
            data.extend_from_slice(&self.nodes[p.0].data);
        }
        let n = data.len();
        self.push(
            "concat",
            vec![n],
            data,
            Some(Box::new(move |_, g, grads| {
                for &(p, off, len) in &offsets {
                    for i in 0..len {
                        grads[p.0][i] += g[off + i];
                    }
                }
            })),
        )
    }

    /// Stack same-width row blocks ([n_i, d] or [d]) into one matrix.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mut d = None;
        let mut rows = 0;
        for &p in parts {
            let s = &self.nodes[p.0].shape;
            let (r, w) = match s.len() {
                1 => (1, s[0]),
                2 => (s[0], s[1]),
                _ => return Err(Error::InvalidArgument("concat_rows: rank > 2".into())),
            };
            if *d.get_or_insert(w) != w {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: vec![d.unwrap()],
                    rhs: vec![w],
                });
            }
            rows += r;
        }
        let d = d.ok_or_else(|| Error::InvalidArgument("concat_rows: empty".into()))?;
        let mut data = Vec::with_capacity(rows * d);
        let mut offsets = Vec::with_capacity(parts.len());
        for &p in parts {
            offsets.push((p, data.len(), self.nodes[p.0].data.len()));
            data.extend_from_slice(&self.nodes[p.0].data);
        }
        self.push(
            "concat_rows",
            vec![rows, d],
            data,
            Some(Box::new(move |_, g, grads| {
                for &(p, off, len) in &offsets {
                    for i in 0..len {
                        grads[p.0][i] += g[off + i];
                    }
                }
            })),
        )
    }

    /// Concatenate matrices of equal row count along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mut n = None;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = &self.nodes[p.0].shape;
            if s.len() != 2 {
                return Err(Error::InvalidArgument("concat_cols: rank != 2".into()));
            }
            if *n.get_or_insert(s[0]) != s[0] {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: vec![n.unwrap()],
                    rhs: vec![s[0]],
                });
            }
            widths.push(s[1]);
        }
        let rows = n.ok_or_else(|| Error::InvalidArgument("concat_cols: empty".into()))?;
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        for r in 0..rows {
            let mut col = 0;
            for (pi, &p) in parts.iter().enumerate() {
                let w = widths[pi];
                let src = &self.nodes[p.0].data[r * w..(r + 1) * w];
                data[r * total + col..r * total + col + w].copy_from_slice(src);
                col += w;
            }
        }
        let parts_owned: Vec<Var> = parts.to_vec();
        self.push(
            "concat_cols",
            vec![rows, total],
            data,
            Some(Box::new(move |_, g, grads| {
                for r in 0..rows {
                    let mut col = 0;
                    for (pi, &p) in parts_owned.iter().enumerate() {
                        let w = widths[pi];
                        for j in 0..w {
                            grads[p.0][r * w + j] += g[r * total + col + j];
                        }
                        col += w;
                    }
                }
            })),
        )
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let total = self.nodes[a.0].data.len();
        if start + len > total {
            return Err(Error::IndexOutOfRange { index: start + len, len: total });
        }
        let data = self.nodes[a.0].data[start..start + len].to_vec();
        self.push(
            "slice",
            vec![len],
            data,
            Some(Box::new(move |_, g, grads| {
                for i in 0..len {
                    grads[a.0][start + i] += g[i];
                }
            })),
        )
    }

    /// Column block of a matrix: [n, d] -> [n, len].
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.nodes[a.0].shape.clone();
        if s.len() != 2 {
            return Err(Error::InvalidArgument(format!("slice_cols: rank != 2 ({s:?})")));
        }
        let (n, d) = (s[0], s[1]);
        if start + len > d {
            return Err(Error::IndexOutOfRange { index: start + len, len: d });
        }
        let mut data = Vec::with_capacity(n * len);
        for r in 0..n {
            data.extend_from_slice(&self.nodes[a.0].data[r * d + start..r * d + start + len]);
        }
        self.push(
            "slice_cols",
            vec![n, len],
            data,
            Some(Box::new(move |_, g, grads| {
                for r in 0..n {
                    for j in 0..len {
                        grads[a.0][r * d + start + j] += g[r * len + j];
                    }
                }
            })),
        )
    }

    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let s = self.nodes[a.0].shape.clone();
        if s.len() != 2 {
            return Err(Error::InvalidArgument(format!("row: rank != 2 ({s:?})")));
        }
        if i >= s[0] {
            return Err(Error::IndexOutOfRange { index: i, len: s[0] });
        }
        let d = s[1];
        let data = self.nodes[a.0].data[i * d..(i + 1) * d].to_vec();
        self.push(
            "row",
            vec![d],
            data,
            Some(Box::new(move |_, g, grads| {
                for j in 0..d {
                    grads[a.0][i * d + j] += g[j];
                }
            })),
        )
    }

    /// Scalar element of a vector.
    pub fn select(&mut self, a: Var, i: usize) -> Result<Var> {
        let n = self.nodes[a.0].data.len();
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, len: n });
        }
        let data = vec![self.nodes[a.0].data[i]];
        self.push(
            "select",
            vec![1],
            data,
            Some(Box::new(move |_, g, grads| {
                grads[a.0][i] += g[0];
            })),
        )
    }

    /// Pick rows of a matrix by index (duplicates allowed).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let s = self.nodes[a.0].shape.clone();
        if s.len() != 2 {
            return Err(Error::InvalidArgument(format!("gather_rows: rank != 2 ({s:?})")));
        }
        let (n, d) = (s[0], s[1]);
        for &i in idx {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, len: n });
            }
        }
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&self.nodes[a.0].data[i * d..(i + 1) * d]);
        }
        let idx_owned: Vec<usize> = idx.to_vec();
        self.push(
            "gather_rows",
            vec![idx_owned.len(), d],
            data,
            Some(Box::new(move |_, g, grads| {
                for (r, &i) in idx_owned.iter().enumerate() {
                    for j in 0..d {
                        grads[a.0][i * d + j] += g[r * d + j];
                    }
                }
            })),
        )
    }

    /// Sum rows of `a` into `n_out` buckets given per-row segment ids.
    pub fn segment_sum(&mut self, a: Var, seg: &[usize], n_out: usize) -> Result<Var> {
        let s = self.nodes[a.0].shape.clone();
        if s.len() != 2 || s[0] != seg.len() {
            return Err(Error::InvalidArgument(format!(
                "segment_sum: shape {s:?} vs {} segment ids",
                seg.len()
            )));
        }
        let d = s[1];
        for &i in seg {
            if i >= n_out {
                return Err(Error::IndexOutOfRange { index: i, len: n_out });
            }
        }
        let mut data = vec![0.0; n_out * d];
        for (r, &b) in seg.iter().enumerate() {
            for j in 0..d {
                data[b * d + j] += self.nodes[a.0].data[r * d + j];
            }
        }
        let seg_owned: Vec<usize> = seg.to_vec();
        self.push(
            "segment_sum",
            vec![n_out, d],
            data,
            Some(Box::new(move |_, g, grads| {
                for (r, &b) in seg_owned.iter().enumerate() {
                    for j in 0..d {
                        grads[a.0][r * d + j] += g[b * d + j];
                    }
                }
            })),
        )
    }

    // ---- reductions / normalizers ----

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total: f64 = self.nodes[a.0].data.iter().sum();
        self.push(
            "sum",
            vec![1],
            vec![total],
            Some(Box::new(move |_, g, grads| {
                for v in grads[a.0].iter_mut() {
                    *v += g[0];
                }
            })),
        )
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.nodes[a.0].data.len() as f64;
        let total: f64 = self.nodes[a.0].data.iter().sum();
        self.push(
            "mean",
            vec![1],
            vec![total / n],
            Some(Box::new(move |_, g, grads| {
                for v in grads[a.0].iter_mut() {
                    *v += g[0] / n;
                }
            })),
        )
    }

    /// Sum over axis 0: [n, d] -> [d].
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].shape.clone();
        if s.len() != 2 {
            return Err(Error::InvalidArgument(format!("sum_rows: rank != 2 ({s:?})")));
        }
        let (n, d) = (s[0], s[1]);
        let mut data = vec![0.0; d];
        for r in 0..n {
            for j in 0..d {
                data[j] += self.nodes[a.0].data[r * d + j];
            }
        }
        self.push(
            "sum_rows",
            vec![d],
            data,
            Some(Box::new(move |_, g, grads| {
                for r in 0..n {
                    for j in 0..d {
                        grads[a.0][r * d + j] += g[j];
                    }
                }
            })),
        )
    }

    /// Sum over axis 1: [n, d] -> [n].
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].shape.clone();
        if s.len() != 2 {
            return Err(Error::InvalidArgument(format!("sum_cols: rank != 2 ({s:?})")));
        }
        let (n, d) = (s[0], s[1]);
        let mut data = vec![0.0; n];
        for r in 0..n {
            data[r] = self.nodes[a.0].data[r * d..(r + 1) * d].iter().sum();
        }
        self.push(
            "sum_cols",
            vec![n],
            data,
            Some(Box::new(move |_, g, grads| {
                for r in 0..n {
                    for j in 0..d {
                        grads[a.0][r * d + j] += g[r];
                    }
                }
            })),
        )
    }

    /// Softmax over the last axis of a vector or matrix.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].shape.clone();
        let d = *s.last().ok_or_else(|| Error::InvalidArgument("softmax: empty shape".into()))?;
        let rows = self.nodes[a.0].data.len() / d;
        let mut data = vec![0.0; rows * d];
        for r in 0..rows {
            let x = &self.nodes[a.0].data[r * d..(r + 1) * d];
            let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..d {
                let e = (x[j] - m).exp();
                data[r * d + j] = e;
                z += e;
            }
            for j in 0..d {
                data[r * d + j] /= z;
            }
        }
        self.push(
            "softmax",
            s,
            data.clone(),
            Some(Box::new(move |_, g, grads| {
                // dx = y * (g - <g, y>) per row; the closure keeps its own
                // copy of the outputs y.
                for r in 0..rows {
                    let yr = &data[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        grads[a.0][r * d + j] += yr[j] * (gr[j] - dot);
                    }
                }
            })),
        )
    }
}

pub(crate) fn sigmoid_f(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
