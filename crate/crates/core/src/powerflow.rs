//! Flows, voltages, the operator's cost and the nodal prices derived from it.
//!
//! With `z = [p; q]` the operator cost is
//! `C = (1 - w) λ Σp + zᵀ L(λ) z`, where
//! `L(λ) = λ (1 - w) blockdiag(-R, -R) + w [R X]ᵀ [R X]`
//! (`Hᵀ diag(r) H = -R`). Prices are its closed-form gradient.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{dot, Matrix};
use crate::netmodel::Sensitivities;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSolution {
    /// Per-edge real flow.
    pub p_flow: Vec<f64>,
    /// Per-edge reactive flow.
    pub q_flow: Vec<f64>,
    /// Per-node voltage magnitude.
    pub v: Vec<f64>,
    /// Approximate real losses `Σ r_e (P_e² + Q_e²)`.
    pub losses: f64,
}

impl FlowSolution {
    /// Real power drawn through the substation, loads plus losses.
    pub fn substation_import(&self, p: &[f64]) -> f64 {
        p.iter().sum::<f64>() + self.losses
    }

    /// Losses relative to the magnitude of the substation real flow; under
    /// reverse flow the feeder exports and the denominator is the export.
    pub fn losses_fraction(&self, p: &[f64]) -> f64 {
        self.losses / self.substation_import(p).abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceVector {
    pub mu_p: Vec<f64>,
    pub mu_q: Vec<f64>,
    /// Substation LMP.
    pub lambda: f64,
}

fn check_weight(w: f64) -> Result<()> {
    if (0.0..=1.0).contains(&w) {
        Ok(())
    } else {
        Err(Error::argument(alloc::format!("voltage weight w must lie in [0, 1], got {w}")))
    }
}

pub fn solve(sens: &Sensitivities, p: &[f64], q: &[f64], v0: f64) -> Result<FlowSolution> {
    let n = sens.node_count();
    check_len("p", n, p.len())?;
    check_len("q", n, q.len())?;
    let p_flow = sens.h.mul_vec(p);
    let q_flow = sens.h.mul_vec(q);
    let rp = sens.r_mat.mul_vec(p);
    let xq = sens.x_mat.mul_vec(q);
    let v = rp.iter().zip(&xq).map(|(a, b)| v0 + a + b).collect();
    let losses = sens
        .r
        .iter()
        .zip(p_flow.iter().zip(&q_flow))
        .map(|(r, (pf, qf))| r * (pf * pf + qf * qf))
        .sum();
    Ok(FlowSolution {
        p_flow,
        q_flow,
        v,
        losses,
    })
}

pub fn dso_cost(sol: &FlowSolution, p: &[f64], lambda: f64, w: f64, v0: f64) -> Result<f64> {
    check_weight(w)?;
    check_len("p", sol.v.len(), p.len())?;
    let energy = p.iter().sum::<f64>() + sol.losses;
    let voltage: f64 = sol.v.iter().map(|v| (v - v0) * (v - v0)).sum();
    Ok((1.0 - w) * lambda * energy + w * voltage)
}

/// Nodal prices `∂C/∂p_i`, `∂C/∂q_i` at the given loading.
pub fn nodal_prices(sens: &Sensitivities, p: &[f64], q: &[f64], lambda: f64, w: f64, v0: f64) -> Result<PriceVector> {
    check_weight(w)?;
    let sol = solve(sens, p, q, v0)?;
    Ok(prices_from_solution(sens, &sol, p, q, lambda, w, v0))
}

pub(crate) fn prices_from_solution(
    sens: &Sensitivities,
    sol: &FlowSolution,
    p: &[f64],
    q: &[f64],
    lambda: f64,
    w: f64,
    v0: f64,
) -> PriceVector {
    let energy = (1.0 - w) * lambda;
    let dv: Vec<f64> = sol.v.iter().map(|v| v - v0).collect();
    let rdv = sens.r_mat.mul_vec(&dv);
    let xdv = sens.x_mat.mul_vec(&dv);
    let rp = sens.r_mat.mul_vec(p);
    let rq = sens.r_mat.mul_vec(q);
    let mu_p = (0..p.len())
        .map(|i| energy * (1.0 - 2.0 * rp[i]) + 2.0 * w * rdv[i])
        .collect();
    let mu_q = (0..q.len())
        .map(|i| energy * (-2.0 * rq[i]) + 2.0 * w * xdv[i])
        .collect();
    PriceVector { mu_p, mu_q, lambda }
}

/// The `2|N| × 2|N|` matrix `L(λ)`; symmetric positive semidefinite.
pub fn potential_matrix(sens: &Sensitivities, lambda: f64, w: f64) -> Matrix {
    let n = sens.node_count();
    let mut l = Matrix::zeros(2 * n, 2 * n);
    let loss = lambda * (1.0 - w);
    // Columns of [R X] are R e_i for i < n and X e_{i-n} otherwise.
    let column = |k: usize, i: usize| {
        if k < n {
            sens.r_mat.get(i, k)
        } else {
            sens.x_mat.get(i, k - n)
        }
    };
    for a in 0..2 * n {
        for b in a..2 * n {
            let gram: f64 = (0..n).map(|i| column(a, i) * column(b, i)).sum();
            let mut value = w * gram;
            if a < n && b < n {
                value -= loss * sens.r_mat.get(a, b);
            } else if a >= n && b >= n {
                value -= loss * sens.r_mat.get(a - n, b - n);
            }
            l.set(a, b, value);
            l.set(b, a, value);
        }
    }
    l
}

/// Diagonal 2×2 block `L(λ)_{I_k I_k}` as `(pp, qq, pq)`.
pub(crate) fn self_block(sens: &Sensitivities, k: usize, lambda: f64, w: f64) -> [f64; 3] {
    let [rr, xx, rx] = sens.column_grams[k];
    let loss = -lambda * (1.0 - w) * sens.r_mat.get(k, k);
    [loss + w * rr, loss + w * xx, w * rx]
}

/// `Σ_k [p_k q_k] L_{I_k I_k} [p_k q_k]ᵀ`, the market-power adjustment.
pub(crate) fn self_adjustment(sens: &Sensitivities, p: &[f64], q: &[f64], lambda: f64, w: f64) -> f64 {
    (0..p.len())
        .map(|k| {
            let [a, c, b] = self_block(sens, k, lambda, w);
            a * p[k] * p[k] + 2.0 * b * p[k] * q[k] + c * q[k] * q[k]
        })
        .sum()
}

/// `C̃ = C + Σ_k [p_k q_k] L_{I_k I_k} [p_k q_k]ᵀ`.
pub fn potential_cost(sens: &Sensitivities, p: &[f64], q: &[f64], lambda: f64, w: f64, v0: f64) -> Result<f64> {
    let sol = solve(sens, p, q, v0)?;
    Ok(dso_cost(&sol, p, lambda, w, v0)? + self_adjustment(sens, p, q, lambda, w))
}

/// Quadratic-form evaluation `zᵀ L z`, used to cross-check the cost decomposition.
pub fn quadratic_form(l: &Matrix, z: &[f64]) -> f64 {
    dot(z, &l.mul_vec(z))
}
