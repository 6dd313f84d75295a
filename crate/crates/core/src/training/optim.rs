use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tensor, LOG_CLAMP};

/// `−Σ_d Σ_j [y ln p + (1−y) ln(1−p)]` over a batch of documents.
pub fn nll_loss(probs: &[Vec<f64>], labels: &[Vec<u8>]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::shape("nll_loss", &[probs.len()], &[labels.len()]));
    }
    let mut total = 0.0;
    for (p, y) in probs.iter().zip(labels) {
        if p.len() != y.len() {
            return Err(Error::shape("nll_loss", &[p.len()], &[y.len()]));
        }
        for (&p, &y) in p.iter().zip(y) {
            let y = f64::from(y);
            total -= y * p.max(LOG_CLAMP).ln() + (1.0 - y) * (1.0 - p).max(LOG_CLAMP).ln();
        }
    }
    Ok(total)
}

/// Joint L2 clipping over all gradients. Returns the scale factor applied
/// (1.0 when the norm is within `clip_norm`).
pub fn clip_gradients(store: &mut ParamStore, clip_norm: f64) -> Result<f64> {
    if clip_norm <= 0.0 || !clip_norm.is_finite() {
        return Err(Error::InvalidArgument(format!("clip norm must be positive, got {clip_norm}")));
    }
    let mut total = 0.0;
    for p in store.iter() {
        if !p.grad.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", p.name)));
        }
        total += p.grad.norm_sq();
    }
    let norm = total.sqrt();
    if norm <= clip_norm {
        return Ok(1.0);
    }
    let factor = clip_norm / norm;
    store.iter_mut().for_each(|p| p.grad.scale_in_place(factor));
    Ok(factor)
}

/// Elementwise adadelta update.
pub fn adadelta_step(value: &mut [f64], grad: &[f64], eg2: &mut [f64], edx2: &mut [f64], rho: f64, epsilon: f64) {
    for (((x, &g), a), b) in value.iter_mut().zip(grad).zip(eg2.iter_mut()).zip(edx2.iter_mut()) {
        *a = rho * *a + (1.0 - rho) * g * g;
        let delta = -((*b + epsilon).sqrt() / (*a + epsilon).sqrt()) * g;
        *b = rho * *b + (1.0 - rho) * delta * delta;
        *x += delta;
    }
}

/// Running averages of squared gradients and squared updates, one pair per
/// parameter in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adadelta {
    pub rho: f64,
    pub epsilon: f64,
    pub sq_grad: Vec<Tensor>,
    pub sq_update: Vec<Tensor>,
    frozen: Vec<ParamId>,
}

impl Adadelta {
    pub fn new(store: &ParamStore, rho: f64, epsilon: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) || epsilon <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "adadelta needs 0 < rho < 1 and epsilon > 0, got rho={rho} epsilon={epsilon}"
            )));
        }
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Ok(Adadelta {
            rho,
            epsilon,
            sq_grad: zeros(),
            sq_update: zeros(),
            frozen: Vec::new(),
        })
    }

    /// Parameters that keep their values whatever their gradient.
    pub fn freeze(&mut self, id: ParamId) {
        if !self.frozen.contains(&id) {
            self.frozen.push(id);
        }
    }

    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.sq_grad.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} parameters, store has {}",
                self.sq_grad.len(),
                store.len()
            )));
        }
        for (i, p) in store.iter_mut().enumerate() {
            if self.frozen.iter().any(|f| f.index() == i) {
                continue;
            }
            let grad = p.grad.data().to_vec();
            adadelta_step(
                p.value.data_mut(),
                &grad,
                self.sq_grad[i].data_mut(),
                self.sq_update[i].data_mut(),
                self.rho,
                self.epsilon,
            );
        }
        Ok(())
    }
}
