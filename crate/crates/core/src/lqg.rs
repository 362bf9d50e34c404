//! Finite-horizon LQG: backward Riccati pass, certainty-equivalence gains and
//! the estimation-error cost terms every delay/allocation program is built on.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lti::PlantModel;

/// Output of the backward pass over a horizon of `T` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    /// `P_0..P_T`, with `P_T = Q2`.
    pub p: Vec<DMatrix<f64>>,
    /// `P̃_t = Q1 + AᵀP_{t+1}A − P_t` for `t < T`. This is the weight the
    /// estimation error carries in the cost-to-go.
    pub p_tilde: Vec<DMatrix<f64>>,
    /// `L_0..L_{T−1}`.
    pub gains: Vec<DMatrix<f64>>,
    /// `Σ_{t=1}^{T} Tr(P_t Σ_w)`, the policy-independent part of the cost.
    pub noise_floor: f64,
}

impl RiccatiSolution {
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

pub fn riccati_backward(model: &PlantModel, horizon: usize) -> Result<RiccatiSolution> {
    if horizon == 0 {
        return Err(Error::config("horizon must be at least one step"));
    }
    model.validate(None)?;
    let a = &model.a;
    let b = &model.b;
    let at = a.transpose();
    let bt = b.transpose();

    let mut p = vec![DMatrix::zeros(0, 0); horizon + 1];
    let mut p_tilde = vec![DMatrix::zeros(0, 0); horizon];
    let mut gains = vec![DMatrix::zeros(0, 0); horizon];
    p[horizon] = model.q2.clone();

    for t in (0..horizon).rev() {
        let next = &p[t + 1];
        let mut s = &model.r + &bt * next * b;
        symmetrize(&mut s);
        let rhs = &bt * next * a;
        let chol = s.clone().cholesky().ok_or_else(|| {
            Error::internal(format!("R + BᵀPB is not positive definite at t = {t}"))
        })?;
        let gain = chol.solve(&rhs);
        let ata = &at * next * a;
        let mut pt = &model.q1 + &ata - &at * next * b * &gain;
        symmetrize(&mut pt);
        let mut tilde = gain.transpose() * &s * &gain;
        symmetrize(&mut tilde);
        p[t] = pt;
        p_tilde[t] = tilde;
        gains[t] = gain;
    }

    let noise_floor = p[1..].iter().map(|pt| (pt * &model.sigma_w).trace()).sum();
    Ok(RiccatiSolution {
        p,
        p_tilde,
        gains,
        noise_floor,
    })
}

/// Certainty-equivalence input `u = −L_k x̂`.
pub fn control_input(gain: &DMatrix<f64>, xhat: &DVector<f64>) -> DVector<f64> {
    -(gain * xhat)
}

/// `A^{l−1} Σ A^{l−1ᵀ}`, where `Σ` is the disturbance covariance, or the
/// initial-state covariance when the term reaches back before time zero.
fn propagated_covariance(model: &PlantModel, t: usize, l: usize) -> DMatrix<f64> {
    let sigma = if t < l { &model.sigma_x0 } else { &model.sigma_w };
    let power = model.a.pow((l - 1) as u32);
    &power * sigma * power.transpose()
}

/// Expected cost contribution at time `t` of the `l`-th oldest disturbance in
/// the estimation error: `Tr(P̃_t A^{l−1} Σ A^{l−1ᵀ})`.
///
/// `l = 0` carries no error and is rejected, as is `l > t + 1`.
pub fn error_cost_term(model: &PlantModel, sol: &RiccatiSolution, t: usize, l: usize) -> Result<f64> {
    if l == 0 {
        return Err(Error::config("error cost terms start at l = 1"));
    }
    if t >= sol.horizon() {
        return Err(Error::config(format!("t = {t} is outside the horizon {}", sol.horizon())));
    }
    if l > t + 1 {
        return Err(Error::config(format!("l = {l} reaches before the initial state at t = {t}")));
    }
    Ok((&sol.p_tilde[t] * propagated_covariance(model, t, l)).trace())
}

/// Cumulative error costs `C_j = Σ_{l=1}^{j} error_cost_term(t, l)` for
/// `j = 0..=max_age`; `C_j` is what the freshest sample being `j` steps old
/// costs at time `t`.
pub fn cumulative_error_costs(
    model: &PlantModel,
    sol: &RiccatiSolution,
    t: usize,
    max_age: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(max_age + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for l in 1..=max_age {
        acc += error_cost_term(model, sol, t, l)?;
        out.push(acc);
    }
    Ok(out)
}

/// Covariance of the estimation error at time `t` when the freshest sample is
/// `age` steps old. `age = t + 1` is the prior-mean case.
pub fn estimation_error_covariance(model: &PlantModel, t: usize, age: usize) -> DMatrix<f64> {
    let n = model.state_dim();
    (1..=age).fold(DMatrix::zeros(n, n), |acc, l| acc + propagated_covariance(model, t, l))
}

/// Expected LQG cost (without communication prices) of a whole episode whose
/// freshest-sample ages are known in advance, `ages[t]` for `t < T`.
///
/// Assembles `E[x_0ᵀP_0x_0] + Σ_t Tr(P_tΣ_w) + Σ_t E[e_tᵀP̃_t e_t]`.
pub fn expected_lqg_cost(model: &PlantModel, sol: &RiccatiSolution, ages: &[usize]) -> Result<f64> {
    if ages.len() != sol.horizon() {
        return Err(Error::Dimension {
            context: "expected_lqg_cost ages",
            expected: sol.horizon().to_string(),
            actual: ages.len().to_string(),
        });
    }
    let p0 = &sol.p[0];
    let mu = &model.mean_x0;
    let mut cost = (mu.transpose() * p0 * mu)[(0, 0)] + (p0 * &model.sigma_x0).trace() + sol.noise_floor;
    for (t, &age) in ages.iter().enumerate() {
        cost += cumulative_error_costs(model, sol, t, age)?[age];
    }
    Ok(cost)
}
