//! Differentiable building blocks with hand-derived gradients: linear
//! layers, ReLU, and the cross-entropy loss.

use super::mat::Mat;
use super::param::Param;
use super::rng::Rng;
use crate::error::{MladError, Result};

/// Fully connected layer `y = x W^T + b` with `W: out x in`, `b: 1 x out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Param,
    pub b: Param,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        Linear {
            w: Param::kaiming_uniform(out_dim, in_dim, in_dim, rng),
            b: Param::zeros(1, out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.value.cols()
    }
    pub fn out_dim(&self) -> usize {
        self.w.value.rows()
    }

    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        let mut y = x.matmul_nt(&self.w.value)?;
        for i in 0..y.rows() {
            for (v, &bias) in y.row_mut(i).iter_mut().zip(self.b.value.row(0)) {
                *v += bias;
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients, returns `dL/dx`.
    pub fn backward(&mut self, x: &Mat, dy: &Mat) -> Result<Mat> {
        // dW += dy^T x ; db += column sums of dy ; dx = dy W
        let dw = dy.matmul_tn(x)?;
        self.w.grad.axpy(1.0, &dw)?;
        let db = dy.col_sums();
        for (g, d) in self.b.grad.row_mut(0).iter_mut().zip(&db) {
            *g += d;
        }
        dy.matmul(&self.w.value)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}

/// ReLU forward; keep the input for the backward mask.
pub fn relu(x: &Mat) -> Mat {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// ReLU backward: `dx = dy .* (x > 0)`.
pub fn relu_backward(x: &Mat, dy: &Mat) -> Result<Mat> {
    if x.rows() != dy.rows() || x.cols() != dy.cols() {
        return Err(MladError::dim("relu_backward shape mismatch"));
    }
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    Ok(dx)
}

/// Two-layer MLP `in -> hidden (ReLU) -> out`, used by the decoders.
#[derive(Debug, Clone)]
pub struct Mlp2 {
    pub l1: Linear,
    pub l2: Linear,
}

pub struct Mlp2Cache {
    x: Mat,
    pre: Mat,
    hidden: Mat,
}

impl Mlp2 {
    pub fn new(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut Rng) -> Self {
        Mlp2 {
            l1: Linear::new(in_dim, hidden, rng),
            l2: Linear::new(hidden, out_dim, rng),
        }
    }

    pub fn forward(&self, x: &Mat) -> Result<(Mat, Mlp2Cache)> {
        let pre = self.l1.forward(x)?;
        let hidden = relu(&pre);
        let y = self.l2.forward(&hidden)?;
        Ok((y, Mlp2Cache { x: x.clone(), pre, hidden }))
    }

    pub fn backward(&mut self, cache: &Mlp2Cache, dy: &Mat) -> Result<Mat> {
        let dhidden = self.l2.backward(&cache.hidden, dy)?;
        let dpre = relu_backward(&cache.pre, &dhidden)?;
        self.l1.backward(&cache.x, &dpre)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = self.l1.params_mut();
        ps.extend(self.l2.params_mut());
        ps
    }
}

/// Mean negative log softmax probability of the true class plus its
/// gradient with respect to the logits: `(softmax - onehot) / N`.
pub fn cross_entropy(logits: &Mat, labels: &[usize]) -> Result<(f64, Mat)> {
    if logits.rows() != labels.len() {
        return Err(MladError::dim(format!(
            "cross_entropy: {} logit rows vs {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    let c = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(MladError::validation(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let n = logits.rows();
    let probs = logits.softmax_rows();
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse: f64 = row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln() + mx;
        loss += lse - row[y];
    }
    loss /= n as f64;
    let mut grad = probs;
    for (i, &y) in labels.iter().enumerate() {
        *grad.at_mut(i, y) -= 1.0;
    }
    let grad = grad.scale(1.0 / n as f64);
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confident_correct_loss_is_tiny() {
        let logits = Mat::from_rows(&[vec![30.0, -30.0], vec![-30.0, 30.0]]).unwrap();
        let (loss, _) = cross_entropy(&logits, &[0, 1]).unwrap();
        assert!(loss < 1e-10, "loss {loss}");
    }

    #[test]
    fn uniform_logits_loss_is_ln_c() {
        let logits = Mat::zeros(3, 4);
        let (loss, _) = cross_entropy(&logits, &[0, 1, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((loss - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn matches_direct_summation_oracle() {
        let mut rng = Rng::seed_from(77);
        let logits = crate::numerics::mat::tests::random_mat(&mut rng, 5, 3);
        let labels = [0usize, 2, 1, 1, 0];
        let (loss, grad) = cross_entropy(&logits, &labels).unwrap();

        // direct-summation oracle
        let mut expected = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = logits.row(i);
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            expected += -(row[y].exp() / z).ln();
        }
        expected /= 5.0;
        assert!((loss - expected).abs() < 1e-12);

        // gradient oracle
        for (i, &y) in labels.iter().enumerate() {
            let row = logits.row(i);
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            for j in 0..3 {
                let p = row[j].exp() / z;
                let g = (p - if j == y { 1.0 } else { 0.0 }) / 5.0;
                assert!((grad.at(i, j) - g).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn label_out_of_range_is_error() {
        let logits = Mat::zeros(1, 2);
        assert!(cross_entropy(&logits, &[2]).is_err());
    }

    #[test]
    fn linear_backward_matches_finite_difference() {
        let mut rng = Rng::seed_from(5);
        let mut layer = Linear::new(3, 2, &mut rng);
        let x = crate::numerics::mat::tests::random_mat(&mut rng, 4, 3);
        // loss = sum of squares of outputs
        let y = layer.forward(&x).unwrap();
        let dy = y.scale(2.0);
        let dx = layer.backward(&x, &dy).unwrap();
        let h = 1e-6;
        // check a weight coordinate and an input coordinate
        let base: f64 = y.frobenius_sq();
        {
            let orig = layer.w.value.at(1, 2);
            *layer.w.value.at_mut(1, 2) = orig + h;
            let lp = layer.forward(&x).unwrap().frobenius_sq();
            *layer.w.value.at_mut(1, 2) = orig - h;
            let lm = layer.forward(&x).unwrap().frobenius_sq();
            *layer.w.value.at_mut(1, 2) = orig;
            let num = (lp - lm) / (2.0 * h);
            assert!((num - layer.w.grad.at(1, 2)).abs() < 1e-5 * num.abs().max(1.0));
        }
        {
            let mut xp = x.clone();
            *xp.at_mut(2, 1) += h;
            let lp = layer.forward(&xp).unwrap().frobenius_sq();
            *xp.at_mut(2, 1) -= 2.0 * h;
            let lm = layer.forward(&xp).unwrap().frobenius_sq();
            let num = (lp - lm) / (2.0 * h);
            assert!((num - dx.at(2, 1)).abs() < 1e-5 * num.abs().max(1.0));
        }
        let _ = base;
    }

    #[test]
    fn relu_masks_gradient() {
        let x = Mat::from_rows(&[vec![-1.0, 2.0, 0.0]]).unwrap();
        let dy = Mat::from_rows(&[vec![5.0, 5.0, 5.0]]).unwrap();
        let dx = relu_backward(&x, &dy).unwrap();
        assert_eq!(dx.data(), &[0.0, 5.0, 0.0]);
    }
}
