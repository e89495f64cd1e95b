//! Closed-form convergence bounds for the alternating protocol.
//!
//! For strongly convex, smooth client risks the trajectory obeys four
//! inequalities, all computable from a handful of constants:
//!
//! - server deviation: `max_i ||w^i_p - w_bar_p||` is at most
//!   `sigma_A^p delta_0 + sqrt(M) T_C theta gamma sigma_A / (1 - sigma_A)`,
//! - gradient-step contraction: one step with rate `eta <= 1/L` shrinks
//!   distances by `lambda = sqrt(1 - eta mu)`,
//! - client drift within an epoch: at most `gamma T_C theta`,
//! - average optimality: `||w_bar_p - w*||` is at most
//!   `Lambda^p ||w_bar_0 - w*|| + Y_0 / (1 - Lambda)` with
//!   `Lambda = sqrt(1 - gamma mu T_C)`.
//!
//! Combining the first and last yields the limiting tolerance
//! `epsilon = sqrt(M) gamma theta T_C sigma_A/(1-sigma_A) + Y_0/(1-Lambda)`:
//! every server model ends up within `epsilon` of the exact optimum.
//!
//! All of this assumes the step-size gate
//! `gamma < min(1/(L T_C), 1/(mu T_C))` and a gradient bound `theta` that
//! actually covers the trajectory; runs that violate either are not
//! certified and should skip these checks.

use crate::losses::SmoothnessConstants;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("contraction factor must lie in [0,1), got {0}")]
    SigmaOutOfRange(f64),
    #[error("contraction rate eta must lie in [0, 1/L] = [0, {max}], got {eta}")]
    EtaOutOfRange { eta: f64, max: f64 },
    #[error("step size {gamma} must stay below 1/(mu*T_C) = {bound} for the optimality bound")]
    StepSizeTooLarge { gamma: f64, bound: f64 },
    #[error("{name} must be finite and non-negative, got {value}")]
    NonFiniteInput { name: &'static str, value: f64 },
    #[error("{name} must be at least 1, got {got}")]
    InvalidCount { name: &'static str, got: usize },
}

/// Largest admissible step size, `min(1/(L t_c), 1/(mu t_c))`.
pub fn max_step_size(constants: &SmoothnessConstants, t_c: usize) -> f64 {
    let t_c = t_c as f64;
    (1.0 / (constants.l * t_c)).min(1.0 / (constants.mu * t_c))
}

/// One-step contraction factor `sqrt(1 - eta mu)` of a gradient step with
/// rate `eta`, valid for `0 <= eta <= 1/L`.
pub fn lemma2_factor(eta: f64, constants: &SmoothnessConstants) -> Result<f64, TheoryError> {
    let max = 1.0 / constants.l;
    if !eta.is_finite() || !(0.0..=max).contains(&eta) {
        return Err(TheoryError::EtaOutOfRange { eta, max });
    }
    Ok((1.0 - eta * constants.mu).max(0.0).sqrt())
}

/// Upper bound on the drift `||w^{ij}_s - w^i_p||` of any client during
/// one epoch: `gamma * t_c * theta`.
pub fn client_drift_bound(gamma: f64, t_c: usize, theta: f64) -> f64 {
    gamma * t_c as f64 * theta
}

/// Every constant the convergence analysis needs, precomputed once per
/// configuration.
///
/// With `gamma = 0` (pure consensus runs) the geometric-series constants
/// degenerate: `capital_lambda` is 1, `y0` is 0, the average-optimality
/// bound freezes at the initial gap, and `epsilon` is meaningless and
/// stored as NaN.
#[derive(Debug, Clone)]
pub struct TheoryBounds {
    pub sigma_a: f64,
    /// `sqrt(1 - gamma mu)`: per-step contraction at the configured rate.
    pub lambda: f64,
    /// `Lambda = sqrt(1 - gamma mu t_c)`: per-epoch contraction of the
    /// average's distance to the optimum.
    pub capital_lambda: f64,
    pub y0: f64,
    /// Limiting distance of every server from the optimum.
    pub epsilon: f64,
    /// Initial stacked deviation `||W_0 - 1 w_bar_0'||`.
    pub delta0: f64,
    pub constants: SmoothnessConstants,
    pub gamma: f64,
    pub t_c: usize,
    pub t_s: usize,
    pub m: usize,
}

impl TheoryBounds {
    pub fn new(
        constants: SmoothnessConstants,
        sigma_a: f64,
        delta0: f64,
        gamma: f64,
        t_c: usize,
        t_s: usize,
        m: usize,
    ) -> Result<Self, TheoryError> {
        if !sigma_a.is_finite() || !(0.0..1.0).contains(&sigma_a) {
            return Err(TheoryError::SigmaOutOfRange(sigma_a));
        }
        if !delta0.is_finite() || delta0 < 0.0 {
            return Err(TheoryError::NonFiniteInput {
                name: "delta0",
                value: delta0,
            });
        }
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(TheoryError::NonFiniteInput {
                name: "gamma",
                value: gamma,
            });
        }
        if t_c < 1 {
            return Err(TheoryError::InvalidCount { name: "t_c", got: t_c });
        }
        if t_s < 1 {
            return Err(TheoryError::InvalidCount { name: "t_s", got: t_s });
        }
        if m < 1 {
            return Err(TheoryError::InvalidCount { name: "m", got: m });
        }
        let lambda = lemma2_factor(gamma, &constants)?;
        let (capital_lambda, y0, epsilon) = if gamma == 0.0 {
            (1.0, 0.0, f64::NAN)
        } else {
            let bound = 1.0 / (constants.mu * t_c as f64);
            if gamma >= bound {
                return Err(TheoryError::StepSizeTooLarge { gamma, bound });
            }
            let capital_lambda = (1.0 - gamma * constants.mu * t_c as f64).max(0.0).sqrt();
            let a = gamma * t_c as f64;
            let ratio = sigma_a / (1.0 - sigma_a);
            let y0 = a * a * constants.theta * constants.l
                + a * a * constants.theta * constants.l * (m as f64).sqrt() * ratio
                + a * constants.l * delta0;
            let epsilon = (m as f64).sqrt() * gamma * constants.theta * t_c as f64 * ratio
                + y0 / (1.0 - capital_lambda);
            (capital_lambda, y0, epsilon)
        };
        Ok(Self {
            sigma_a,
            lambda,
            capital_lambda,
            y0,
            epsilon,
            delta0,
            constants,
            gamma,
            t_c,
            t_s,
            m,
        })
    }

    /// Bound on `max_i ||w^i_p - w_bar_p||` at epoch `p`:
    /// `sigma_A^p delta_0 + sqrt(M) t_c theta gamma sigma_A/(1-sigma_A)`.
    pub fn server_deviation_bound(&self, p: usize) -> f64 {
        let transient = self.sigma_a.powi(p as i32) * self.delta0;
        let steady = (self.m as f64).sqrt()
            * self.t_c as f64
            * self.constants.theta
            * self.gamma
            * self.sigma_a
            / (1.0 - self.sigma_a);
        transient + steady
    }

    /// Bound on the within-epoch client drift, `gamma t_c theta`.
    pub fn client_drift_bound(&self) -> f64 {
        client_drift_bound(self.gamma, self.t_c, self.constants.theta)
    }

    /// Bound on `||w_bar_p - w*||` at epoch `p` given the measured initial
    /// gap `||w_bar_0 - w*||`: `Lambda^p gap_0 + Y_0/(1 - Lambda)`.
    ///
    /// With `gamma = 0` the average never moves, so the bound is the
    /// initial gap itself.
    pub fn average_optimality_bound(&self, p: usize, initial_gap: f64) -> f64 {
        if self.gamma == 0.0 {
            return initial_gap;
        }
        self.capital_lambda.powi(p as i32) * initial_gap
            + self.y0 / (1.0 - self.capital_lambda)
    }

    /// Limiting tolerance: every server ends within this distance of the
    /// optimum (NaN for `gamma = 0`).
    pub fn epsilon_bound(&self) -> f64 {
        self.epsilon
    }
}
