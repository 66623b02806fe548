//! Training objectives as graph expressions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Var};

/// Root mean squared error over every element of the batch.
pub fn rmse<T: Real>(g: &mut Graph<T>, x: Var, x_hat: Var) -> Result<Var> {
    let m = g.mse(x, x_hat)?;
    Ok(g.sqrt(m))
}

/// Mean over samples of the per-sample RMSE.
pub fn rmse_per_sample<T: Real>(g: &mut Graph<T>, x: Var, x_hat: Var) -> Result<Var> {
    let m = g.mse_rows(x, x_hat)?;
    let r = g.sqrt(m);
    Ok(g.mean(r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveParams {
    pub margin: f64,
    /// Average per-sample RMSEs instead of one RMSE per sub-batch.
    #[serde(default)]
    pub per_sample: bool,
}

impl Default for ContrastiveParams {
    fn default() -> Self {
        Self { margin: 5.0, per_sample: false }
    }
}

impl ContrastiveParams {
    pub fn validate(&self) -> Result<()> {
        if self.margin > 0.0 && self.margin.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(alloc::format!("margin {} must be positive", self.margin)))
        }
    }
}

fn rows<T: Real>(g: &Graph<T>, v: Var) -> usize {
    g.value(v).shape().first().copied().unwrap_or(0)
}

/// `rmse(asym) + max(0, m − rmse(sym))`.
pub fn contrastive<T: Real>(
    g: &mut Graph<T>,
    asym: Var,
    asym_hat: Var,
    sym: Var,
    sym_hat: Var,
    params: &ContrastiveParams,
) -> Result<Var> {
    params.validate()?;
    if rows(g, asym) == 0 || rows(g, sym) == 0 {
        return Err(Error::MissingClass);
    }
    let err = |g: &mut Graph<T>, a, b| if params.per_sample { rmse_per_sample(g, a, b) } else { rmse(g, a, b) };
    let pos = err(g, asym, asym_hat)?;
    let neg = err(g, sym, sym_hat)?;
    let gap = g.affine(neg, -T::one(), T::from_f64(params.margin));
    let hinge = g.relu(gap);
    g.add(pos, hinge)
}

/// Which objective a model is trained with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LossKind {
    CrossEntropy,
    Rmse,
    Contrastive(ContrastiveParams),
}
