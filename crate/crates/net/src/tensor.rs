//! Dense row-major `f64` arrays with an optional gradient buffer.

use crate::NetError;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, NetError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NetError::Shape(format!(
                "shape {shape:?} holds {n} values, buffer has {}",
                data.len()
            )));
        }
        if shape.len() > 5 {
            return Err(NetError::Shape(format!("at most 5 dimensions, got {shape:?}")));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(NetError::NonFinite(format!("tensor value {i}")));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    /// Internal constructor for kernels whose output length is correct by
    /// construction.
    pub(crate) fn raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// The gradient buffer, allocated as zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.fill(0.0);
        }
    }

    /// `(N, C, D, H, W)` of a 5-D tensor.
    pub fn dims5(&self) -> Option<[usize; 5]> {
        <[usize; 5]>::try_from(self.shape.as_slice()).ok()
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self, NetError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(NetError::Shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        self.grad = None;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite()) && self.grad().is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Row-wise softmax of an `(N, K)` tensor.
pub fn softmax(logits: &Tensor) -> Vec<Vec<f64>> {
    let k = logits.shape().last().copied().unwrap_or(0);
    logits
        .data()
        .chunks(k.max(1))
        .map(|row| {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Mean cross-entropy of `(N, K)` logits against class indices, with the
/// gradient with respect to the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor), NetError> {
    let [n, k] = <[usize; 2]>::try_from(logits.shape())
        .map_err(|_| NetError::Shape(format!("logits must be (N, K), got {:?}", logits.shape())))?;
    if labels.len() != n {
        return Err(NetError::Shape(format!("{n} logit rows but {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(NetError::Label { label: bad, classes: k });
    }
    let probs = softmax(logits);
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * k);
    for (p, &y) in probs.iter().zip(labels) {
        // log-sum-exp form keeps the loss finite for saturated logits
        let row = &logits.data()[grad.len()..grad.len() + k];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        for (c, &pc) in p.iter().enumerate() {
            grad.push((pc - if c == y { 1.0 } else { 0.0 }) / n as f64);
        }
    }
    Ok((loss / n as f64, Tensor::raw(vec![n, k], grad)))
}
