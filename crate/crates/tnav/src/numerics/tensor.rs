use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};

/// Dense row-major float64 tensor with an optional gradient buffer.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub trainable: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "tensor_new" });
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
            trainable: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            grad: None,
            trainable: false,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![1], vec![v]).expect("scalar is finite")
    }

    pub fn vector(v: Vec<f64>) -> Result<Self> {
        let n = v.len();
        Tensor::new(vec![n], v)
    }

    /// Gaussian init scaled by 1/sqrt(fan_in), marked trainable.
    pub fn randn_trainable<R: Rng>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let scale = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..n).map(|_| gaussian(rng) * scale).collect();
        Tensor {
            shape,
            data,
            grad: None,
            trainable: true,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ensure_grad(&mut self) {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
    }
}

/// Box-Muller, so we only depend on the core `Rng` trait.
pub fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        if u1 > 1e-300 {
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

/// Named parameter collection. Iteration order is lexicographic, which the
/// checkpoint format and Adam rely on.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, mut t: Tensor) {
        t.trainable = true;
        self.entries.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in self.entries.values_mut() {
            t.ensure_grad();
            if let Some(g) = &mut t.grad {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Add a gradient map (name -> flat gradient) into the stored buffers.
    pub fn accumulate_grads(&mut self, grads: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        for (name, g) in grads {
            let t = self.get_mut(name)?;
            t.ensure_grad();
            let buf = t.grad.as_mut().expect("just ensured");
            if buf.len() != g.len() {
                return Err(Error::InvalidArgument(format!(
                    "gradient length {} does not match parameter `{}` ({})",
                    g.len(),
                    name,
                    buf.len()
                )));
            }
            for (b, v) in buf.iter_mut().zip(g) {
                *b += v;
            }
        }
        Ok(())
    }
}
