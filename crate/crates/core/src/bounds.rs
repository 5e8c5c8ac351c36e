//! First-order data of the squared branch current around an operating point
//! and the envelopes `l⁻ <= l <= l⁺` derived from it.
//!
//! Per branch `j` with `x = (P_j, Q_j, v_j)`:
//!
//! ```text
//! l(x)  = (P² + Q²) / v
//! J     = (2P/v, 2Q/v, -(P² + Q²)/v²)
//! l⁻    = l⁰ + J Δx
//! l⁺    = max(l⁰, l⁰ + 2 J Δx)
//! ```
//!
//! Inside the optimiser `Δx` is taken from the frozen-loss linear model
//! (`l ≡ l⁰` in the sensitivity relations) so that both envelopes are affine
//! in the nodal injections.

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::Serialize;

use crate::feeder::{FeederModel, SensitivityMatrices};
use crate::loadflow::{solve_loadflow, InjectionProfile, LoadFlowError, LoadFlowSettings, LoadFlowState};

/// Expansion point: a converged load flow and the injections that produced
/// it, in internal order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub p_flow: Vec<f64>,
    pub q_flow: Vec<f64>,
    pub v: Vec<f64>,
    pub l: Vec<f64>,
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
}

impl OperatingPoint {
    /// Wraps a converged state.
    pub fn from_state(state: &LoadFlowState, inj: &InjectionProfile) -> Result<Self, LoadFlowError> {
        if !state.converged {
            return Err(LoadFlowError::NotConverged {
                iterations: state.iterations,
                change: f64::NAN,
            });
        }
        Ok(Self {
            p_flow: state.p_flow.clone(),
            q_flow: state.q_flow.clone(),
            v: state.v.clone(),
            l: state.l.clone(),
            p_inj: inj.p.clone(),
            q_inj: inj.q.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.v.len()
    }
}

/// Solves the load flow at `inj` and wraps the result as an expansion point.
pub fn operating_point(
    model: &FeederModel,
    inj: &InjectionProfile,
    settings: &LoadFlowSettings,
) -> Result<OperatingPoint, LoadFlowError> {
    let state = solve_loadflow(model, inj, settings)?;
    OperatingPoint::from_state(&state, inj)
}

/// Per-branch Jacobian coefficients of `l` with respect to `(P, Q, v)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JacobianBlocks {
    pub jp: Vec<f64>,
    pub jq: Vec<f64>,
    pub jv: Vec<f64>,
}

impl JacobianBlocks {
    /// `J Δx` per branch.
    pub fn apply(&self, dp: &[f64], dq: &[f64], dv: &[f64]) -> Vec<f64> {
        (0..self.jp.len())
            .map(|j| self.jp[j] * dp[j] + self.jq[j] * dq[j] + self.jv[j] * dv[j])
            .collect()
    }
}

pub fn jacobian(op: &OperatingPoint) -> JacobianBlocks {
    let n = op.n();
    let mut jp = Vec::with_capacity(n);
    let mut jq = Vec::with_capacity(n);
    let mut jv = Vec::with_capacity(n);
    for j in 0..n {
        let (p, q, v) = (op.p_flow[j], op.q_flow[j], op.v[j]);
        jp.push(2.0 * p / v);
        jq.push(2.0 * q / v);
        jv.push(-(p * p + q * q) / (v * v));
    }
    JacobianBlocks { jp, jq, jv }
}

/// Hessian of `l` for branch `branch` (0-based) at the operating point.
pub fn hessian(op: &OperatingPoint, branch: usize) -> Matrix3<f64> {
    let (p, q, v) = (op.p_flow[branch], op.q_flow[branch], op.v[branch]);
    let v2 = v * v;
    Matrix3::new(
        2.0 / v,
        0.0,
        -2.0 * p / v2,
        0.0,
        2.0 / v,
        -2.0 * q / v2,
        -2.0 * p / v2,
        -2.0 * q / v2,
        2.0 * (p * p + q * q) / (v2 * v),
    )
}

/// Closed-form eigenvalues of [`hessian`], ascending.
pub fn hessian_eigs(op: &OperatingPoint, branch: usize) -> [f64; 3] {
    let (p, q, v) = (op.p_flow[branch], op.q_flow[branch], op.v[branch]);
    let a = 2.0 / v;
    let b = 2.0 * (p * p + q * q + v * v) / (v * v * v);
    // b >= a always, since (P² + Q² + v²)/v³ >= 1/v
    [0.0, a, b]
}

/// Envelopes of the squared branch currents as functions of the nodal
/// injections `(p, q)`:
///
/// * `lo(p, q) = lo_const + lo_p p + lo_q q`
/// * `hi(p, q) = max(l0, l0 + 2 (lo(p, q) - l0))`, realised in a program by
///   an epigraph variable `l⁺` with both branches as lower bounds.
#[derive(Debug, Clone)]
pub struct CurrentEnvelope {
    pub l0: DVector<f64>,
    pub lo_const: DVector<f64>,
    pub lo_p: DMatrix<f64>,
    pub lo_q: DMatrix<f64>,
    pub jacobian: JacobianBlocks,
}

impl CurrentEnvelope {
    pub fn lower(&self, p: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
        &self.lo_const + &self.lo_p * p + &self.lo_q * q
    }

    /// The first-order term `J Δx` under the frozen-loss model.
    pub fn linear_term(&self, p: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
        self.lower(p, q) - &self.l0
    }

    pub fn upper(&self, p: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
        let d = self.linear_term(p, q);
        self.l0.zip_map(&d, |l0, d| l0.max(l0 + 2.0 * d))
    }
}

pub fn build_envelope(op: &OperatingPoint, mats: &SensitivityMatrices) -> CurrentEnvelope {
    let n = op.n();
    let jac = jacobian(op);
    let jp = DVector::from_column_slice(&jac.jp);
    let jq = DVector::from_column_slice(&jac.jq);
    let jv = DVector::from_column_slice(&jac.jv);
    let l0 = DVector::from_column_slice(&op.l);
    let p0 = DVector::from_column_slice(&op.p_flow);
    let q0 = DVector::from_column_slice(&op.q_flow);
    let v0 = DVector::from_column_slice(&op.v);

    let lo_p = DMatrix::from_diagonal(&jp) * &mats.c + DMatrix::from_diagonal(&jv) * &mats.m_p;
    let lo_q = DMatrix::from_diagonal(&jq) * &mats.c + DMatrix::from_diagonal(&jv) * &mats.m_q;

    // constant part of P_lin - P0, Q_lin - Q0, V_lin - V0
    let dp = -(&mats.d_r * &l0) - &p0;
    let dq = -(&mats.d_x * &l0) - &q0;
    let dv = DVector::from_element(n, mats.v0) - &mats.h * &l0 - &v0;
    let lo_const = &l0 + jp.component_mul(&dp) + jq.component_mul(&dq) + jv.component_mul(&dv);

    CurrentEnvelope {
        l0,
        lo_const,
        lo_p,
        lo_q,
        jacobian: jac,
    }
}

/// `l⁰ + J Δx` with `Δx` taken from an exact load-flow state rather than the
/// linear model. By convexity of `l` this never exceeds the exact current.
pub fn exact_first_order(op: &OperatingPoint, state: &LoadFlowState) -> Vec<f64> {
    let jac = jacobian(op);
    let n = op.n();
    let dp: Vec<f64> = (0..n).map(|j| state.p_flow[j] - op.p_flow[j]).collect();
    let dq: Vec<f64> = (0..n).map(|j| state.q_flow[j] - op.q_flow[j]).collect();
    let dv: Vec<f64> = (0..n).map(|j| state.v[j] - op.v[j]).collect();
    let lin = jac.apply(&dp, &dq, &dv);
    (0..n).map(|j| op.l[j] + lin[j]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(p: f64, q: f64, v: f64) -> OperatingPoint {
        OperatingPoint {
            p_flow: vec![p],
            q_flow: vec![q],
            v: vec![v],
            l: vec![(p * p + q * q) / v],
            p_inj: vec![p],
            q_inj: vec![q],
        }
    }

    #[test]
    fn jacobian_no_load_is_zero() {
        let j = jacobian(&point(0.0, 0.0, 1.0));
        assert_eq!((j.jp[0], j.jq[0], j.jv[0]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn jacobian_substitution() {
        let j = jacobian(&point(0.3, 0.1, 1.0));
        assert!((j.jp[0] - 0.6).abs() < 1e-15);
        assert!((j.jq[0] - 0.2).abs() < 1e-15);
        assert!((j.jv[0] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn jv_equals_minus_l_over_v() {
        let op = point(0.42, -0.17, 0.93);
        let j = jacobian(&op);
        assert!((j.jv[0] + op.l[0] / op.v[0]).abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_closed_form() {
        assert_eq!(hessian_eigs(&point(0.0, 0.0, 1.0), 0), [0.0, 2.0, 2.0]);
        let e = hessian_eigs(&point(0.3, 0.4, 1.0), 0);
        assert!((e[1] - 2.0).abs() < 1e-15 && (e[2] - 2.5).abs() < 1e-15);
    }
}
