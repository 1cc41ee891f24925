use super::tape::Tape;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Identity of a parameter within its owning bundle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A trainable tensor with its momentum buffer and learning-rate multiplier.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    id: ParamId,
    name: String,
    value: Tensor,
    grad: Option<Tensor>,
    velocity: Tensor,
    lr_multiplier: f64,
}

impl Parameter {
    pub fn new(id: ParamId, name: impl Into<String>, value: Tensor, lr_multiplier: f64) -> Self {
        assert!(lr_multiplier > 0.0, "learning-rate multiplier must be positive");
        let velocity = Tensor::zeros(value.rows(), value.cols());
        Self {
            id,
            name: name.into(),
            value,
            grad: None,
            velocity,
            lr_multiplier,
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }

    pub fn grad(&self) -> Option<&Tensor> {
        self.grad.as_ref()
    }

    pub fn velocity(&self) -> &Tensor {
        &self.velocity
    }

    pub fn lr_multiplier(&self) -> f64 {
        self.lr_multiplier
    }

    pub fn set_grad(&mut self, grad: Tensor) -> Result<()> {
        if grad.shape() != self.value.shape() {
            return Err(Error::Dimension {
                op: "set_grad",
                lhs: self.value.shape(),
                rhs: grad.shape(),
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn set_velocity(&mut self, velocity: Tensor) -> Result<()> {
        if velocity.shape() != self.value.shape() {
            return Err(Error::Dimension {
                op: "set_velocity",
                lhs: self.value.shape(),
                rhs: velocity.shape(),
            });
        }
        self.velocity = velocity;
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Copies this parameter's gradient off `tape`. A parameter that did
    /// not take part in the pass, or that no gradient reached, gets zeros.
    pub fn pull_grad(&mut self, tape: &Tape) {
        let grad = tape
            .param_var(self.id)
            .and_then(|v| tape.grad(v).cloned())
            .unwrap_or_else(|| Tensor::zeros(self.value.rows(), self.value.cols()));
        self.grad = Some(grad);
    }
}

/// One SGD step with Nesterov momentum:
///
/// ```text
/// v ← μ·v − lr·g
/// θ ← θ + μ·v − lr·g
/// ```
///
/// where `lr = base_lr × multiplier`. Gradients are cleared afterwards.
pub fn sgd_nesterov_step<'a>(
    params: impl IntoIterator<Item = &'a mut Parameter>,
    base_lr: f64,
    momentum: f64,
) -> Result<()> {
    if base_lr <= 0.0 {
        return Err(Error::Config(format!("base learning rate {base_lr} must be positive")));
    }
    let params: Vec<&mut Parameter> = params.into_iter().collect();
    if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
        return Err(Error::State(format!("parameter `{}` has no gradient", p.name)));
    }
    for p in params {
        let lr = base_lr * p.lr_multiplier;
        let g = p.grad.take().expect("checked above");
        for ((theta, v), gv) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(p.velocity.data_mut())
            .zip(g.data())
        {
            *v = momentum * *v - lr * gv;
            *theta += momentum * *v - lr * gv;
        }
    }
    Ok(())
}
