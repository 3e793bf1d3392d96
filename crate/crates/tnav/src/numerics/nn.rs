//! Neural building blocks: linear layers, MLPs, LSTM and GRU cells.
//!
//! Parameters live in a [`ParamSet`] under dotted names; the structs here are
//! lightweight views that know the names and dimensions.

use rand::Rng;

use crate::error::Result;
use crate::numerics::session::Session;
use crate::numerics::tape::Var;
use crate::numerics::tensor::{ParamSet, Tensor};

/// y = x W + b with W stored as [in, out].
#[derive(Debug, Clone)]
pub struct Linear {
    pub prefix: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(prefix: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Linear { prefix: prefix.into(), in_dim, out_dim }
    }

    pub fn init<R: Rng>(&self, params: &mut ParamSet, rng: &mut R) {
        params.insert(
            format!("{}.w", self.prefix),
            Tensor::randn_trainable(vec![self.in_dim, self.out_dim], self.in_dim, rng),
        );
        params.insert(format!("{}.b", self.prefix), {
            let mut t = Tensor::zeros(vec![self.out_dim]);
            t.trainable = true;
            t
        });
    }

    /// Accepts [in] or [n, in].
    pub fn forward(&self, sess: &mut Session, x: Var) -> Result<Var> {
        let w = sess.param(&format!("{}.w", self.prefix))?;
        let b = sess.param(&format!("{}.b", self.prefix))?;
        let y = sess.tape.matmul(x, w)?;
        sess.tape.add_bias(y, b)
    }
}

/// Linear layers with ReLU between them, none after the last.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims` = [in, hidden..., out].
    pub fn new(prefix: &str, dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "MLP needs at least input and output dims");
        let layers = (0..dims.len() - 1)
            .map(|i| Linear::new(format!("{prefix}.layer{i}"), dims[i], dims[i + 1]))
            .collect();
        Mlp { layers }
    }

    pub fn init<R: Rng>(&self, params: &mut ParamSet, rng: &mut R) {
        for l in &self.layers {
            l.init(params, rng);
        }
    }

    pub fn forward(&self, sess: &mut Session, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(sess, h)?;
            if i + 1 < self.layers.len() {
                h = sess.tape.relu(h)?;
            }
        }
        Ok(h)
    }
}

/// Standard LSTM cell with fused gate weights (order: input, forget,
/// candidate, output).
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub prefix: String,
    pub in_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(prefix: impl Into<String>, in_dim: usize, hidden: usize) -> Self {
        LstmCell { prefix: prefix.into(), in_dim, hidden }
    }

    pub fn init<R: Rng>(&self, params: &mut ParamSet, rng: &mut R) {
        let h4 = 4 * self.hidden;
        params.insert(
            format!("{}.wx", self.prefix),
            Tensor::randn_trainable(vec![self.in_dim, h4], self.in_dim, rng),
        );
        params.insert(
            format!("{}.wh", self.prefix),
            Tensor::randn_trainable(vec![self.hidden, h4], self.hidden, rng),
        );
        params.insert(format!("{}.b", self.prefix), {
            let mut t = Tensor::zeros(vec![h4]);
            t.trainable = true;
            t
        });
    }

    /// One step over a batch: x [n, in], h/c [n, hidden] -> (h', c').
    pub fn forward(&self, sess: &mut Session, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let wx = sess.param(&format!("{}.wx", self.prefix))?;
        let wh = sess.param(&format!("{}.wh", self.prefix))?;
        let b = sess.param(&format!("{}.b", self.prefix))?;
        let gx = sess.tape.matmul(x, wx)?;
        let gh = sess.tape.matmul(h, wh)?;
        let pre = sess.tape.add(gx, gh)?;
        let pre = sess.tape.add_bias(pre, b)?;
        let hd = self.hidden;
        let i = sess.tape.slice_cols(pre, 0, hd)?;
        let f = sess.tape.slice_cols(pre, hd, hd)?;
        let g = sess.tape.slice_cols(pre, 2 * hd, hd)?;
        let o = sess.tape.slice_cols(pre, 3 * hd, hd)?;
        let i = sess.tape.sigmoid(i)?;
        let f = sess.tape.sigmoid(f)?;
        let g = sess.tape.tanh(g)?;
        let o = sess.tape.sigmoid(o)?;
        let fc = sess.tape.mul(f, c)?;
        let ig = sess.tape.mul(i, g)?;
        let c_next = sess.tape.add(fc, ig)?;
        let tc = sess.tape.tanh(c_next)?;
        let h_next = sess.tape.mul(o, tc)?;
        Ok((h_next, c_next))
    }
}

/// GRU cell; the candidate gate applies the reset gate to the previous state
/// before its linear map.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub prefix: String,
    pub in_dim: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(prefix: impl Into<String>, in_dim: usize, hidden: usize) -> Self {
        GruCell { prefix: prefix.into(), in_dim, hidden }
    }

    pub fn init<R: Rng>(&self, params: &mut ParamSet, rng: &mut R) {
        let h2 = 2 * self.hidden;
        params.insert(
            format!("{}.wx_zr", self.prefix),
            Tensor::randn_trainable(vec![self.in_dim, h2], self.in_dim, rng),
        );
        params.insert(
            format!("{}.wh_zr", self.prefix),
            Tensor::randn_trainable(vec![self.hidden, h2], self.hidden, rng),
        );
        params.insert(format!("{}.b_zr", self.prefix), {
            let mut t = Tensor::zeros(vec![h2]);
            t.trainable = true;
            t
        });
        params.insert(
            format!("{}.wx_n", self.prefix),
            Tensor::randn_trainable(vec![self.in_dim, self.hidden], self.in_dim, rng),
        );
        params.insert(
            format!("{}.wh_n", self.prefix),
            Tensor::randn_trainable(vec![self.hidden, self.hidden], self.hidden, rng),
        );
        params.insert(format!("{}.b_n", self.prefix), {
            let mut t = Tensor::zeros(vec![self.hidden]);
            t.trainable = true;
            t
        });
    }

    /// One step over a batch: x [n, in], h [n, hidden] -> h'.
    pub fn forward(&self, sess: &mut Session, x: Var, h: Var) -> Result<Var> {
        let wx_zr = sess.param(&format!("{}.wx_zr", self.prefix))?;
        let wh_zr = sess.param(&format!("{}.wh_zr", self.prefix))?;
        let b_zr = sess.param(&format!("{}.b_zr", self.prefix))?;
        let wx_n = sess.param(&format!("{}.wx_n", self.prefix))?;
        let wh_n = sess.param(&format!("{}.wh_n", self.prefix))?;
        let b_n = sess.param(&format!("{}.b_n", self.prefix))?;
        let gx = sess.tape.matmul(x, wx_zr)?;
        let gh = sess.tape.matmul(h, wh_zr)?;
        let pre = sess.tape.add(gx, gh)?;
        let pre = sess.tape.add_bias(pre, b_zr)?;
        let hd = self.hidden;
        let z = sess.tape.slice_cols(pre, 0, hd)?;
        let r = sess.tape.slice_cols(pre, hd, hd)?;
        let z = sess.tape.sigmoid(z)?;
        let r = sess.tape.sigmoid(r)?;
        let rh = sess.tape.mul(r, h)?;
        let nx = sess.tape.matmul(x, wx_n)?;
        let nh = sess.tape.matmul(rh, wh_n)?;
        let n_pre = sess.tape.add(nx, nh)?;
        let n_pre = sess.tape.add_bias(n_pre, b_n)?;
        let n = sess.tape.tanh(n_pre)?;
        // h' = z * h + (1 - z) * n
        let zh = sess.tape.mul(z, h)?;
        let neg_z = sess.tape.neg(z)?;
        let one_minus_z = sess.tape.add_scalar(neg_z, 1.0)?;
        let zn = sess.tape.mul(one_minus_z, n)?;
        sess.tape.add(zh, zn)
    }
}

/// Reshape a vector to a single-row matrix so batch-shaped cells can run on
/// one item.
pub fn as_row(sess: &mut Session, x: Var) -> Result<Var> {
    let n = sess.tape.data(x).len();
    sess.tape.reshape(x, vec![1, n])
}

/// Squeeze a [1, d] matrix back to a vector.
pub fn as_vec(sess: &mut Session, x: Var) -> Result<Var> {
    let d = sess.tape.data(x).len();
    sess.tape.reshape(x, vec![d])
}
