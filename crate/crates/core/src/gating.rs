//! Two-branch sigmoid gate: `y = g1 * x1 + g2 * x2` with
//! `g = sigmoid([x1, x2] W^T + b)`.
//!
//! `x1` is the previous query and `x2` the cross-attention output. The two
//! gates are scalars broadcast over the feature dimension.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `weight` is `2 x 2D`, row-major; `bias` has one entry per branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub dim: usize,
    pub weight: Vec<f64>,
    pub bias: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateGradients {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub weight: Vec<f64>,
    pub bias: [f64; 2],
}

impl GateParams {
    /// Zero weights and bias: both gates sit at 0.5.
    pub fn neutral(dim: usize) -> Self {
        GateParams { dim, weight: vec![0.0; 4 * dim], bias: [0.0; 2] }
    }

    pub fn new(dim: usize, weight: Vec<f64>, bias: [f64; 2]) -> Result<Self> {
        let p = GateParams { dim, weight, bias };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        if self.weight.len() != 4 * self.dim {
            return Err(Error::shape(
                format!("2x{} gate weights", 2 * self.dim),
                format!("{} weights", self.weight.len()),
            ));
        }
        Ok(())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_inputs(x1: &[f64], x2: &[f64], params: &GateParams) -> Result<()> {
    params.check()?;
    for x in [x1, x2] {
        if x.len() != params.dim {
            return Err(Error::shape(format!("{} features", params.dim), format!("{} features", x.len())));
        }
    }
    Ok(())
}

/// Gate values `(g1, g2)`.
pub fn gates(x1: &[f64], x2: &[f64], params: &GateParams) -> Result<[f64; 2]> {
    check_inputs(x1, x2, params)?;
    let d = params.dim;
    let mut g = [0.0; 2];
    for (i, gi) in g.iter_mut().enumerate() {
        let row = &params.weight[i * 2 * d..(i + 1) * 2 * d];
        let z = row[..d].iter().zip(x1).map(|(w, x)| w * x).sum::<f64>()
            + row[d..].iter().zip(x2).map(|(w, x)| w * x).sum::<f64>()
            + params.bias[i];
        *gi = sigmoid(z);
    }
    Ok(g)
}

pub fn gate_forward(x1: &[f64], x2: &[f64], params: &GateParams) -> Result<Vec<f64>> {
    let [g1, g2] = gates(x1, x2, params)?;
    Ok(x1.iter().zip(x2).map(|(a, b)| g1 * a + g2 * b).collect())
}

pub fn gate_backward(x1: &[f64], x2: &[f64], params: &GateParams, upstream: &[f64]) -> Result<GateGradients> {
    let g = gates(x1, x2, params)?;
    let d = params.dim;
    if upstream.len() != d {
        return Err(Error::shape(format!("{d} upstream entries"), format!("{}", upstream.len())));
    }
    let dg = [
        upstream.iter().zip(x1).map(|(u, x)| u * x).sum::<f64>(),
        upstream.iter().zip(x2).map(|(u, x)| u * x).sum::<f64>(),
    ];
    let dz = [dg[0] * g[0] * (1.0 - g[0]), dg[1] * g[1] * (1.0 - g[1])];

    let mut weight = vec![0.0; 4 * d];
    let mut dx1: Vec<f64> = upstream.iter().map(|u| g[0] * u).collect();
    let mut dx2: Vec<f64> = upstream.iter().map(|u| g[1] * u).collect();
    for i in 0..2 {
        let row = &params.weight[i * 2 * d..(i + 1) * 2 * d];
        let grow = &mut weight[i * 2 * d..(i + 1) * 2 * d];
        for j in 0..d {
            grow[j] = dz[i] * x1[j];
            grow[d + j] = dz[i] * x2[j];
            dx1[j] += dz[i] * row[j];
            dx2[j] += dz[i] * row[d + j];
        }
    }
    Ok(GateGradients { x1: dx1, x2: dx2, weight, bias: dz })
}
