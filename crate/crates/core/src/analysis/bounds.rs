//! Step-size conditions, the error and residual bounds, and the empirical
//! rate fit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::self_power;
use crate::problems::ProblemInstance;

pub const DEFAULT_C_STAR: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub n: usize,
    #[serde(rename = "M")]
    pub m_freq: usize,
    pub c0: f64,
    pub norm_b: f64,
    pub nu: f64,
    pub c_star: f64,
    /// `(1 - c0‖B‖)^{-M}`
    pub c_b: f64,
    /// `Σ_{i=1}^{M-1} (1 - (1 - c0‖B‖)^i)²`
    pub c_bm: f64,
    /// `(1 - c0‖B‖)^{-2(M-1)}`
    pub c_b_prime: f64,
    /// `ν^ν (M c0)^{-ν}`
    pub c_nu: f64,
    /// `(3 + 2(M c0‖B‖)²) n M c_B c0²‖B‖`
    pub c_dstar: f64,
    /// Left side of the rate condition, `(4 + 2(M c0‖B‖)²) n M⁻² c_B c_{B,M}`.
    pub rate_lhs: f64,
    /// Right side of the rate condition, `1 - 1/c*`.
    pub rate_rhs: f64,
    pub cond_rate: bool,
    /// `((M-1)² c0²‖B‖², (M+1)²)` against `((2c'_B)⁻¹, (2c'_B)⁻¹(n-1))`.
    pub compare_lhs: (f64, f64),
    pub compare_rhs: (f64, f64),
    pub cond_compare: (bool, bool),
    /// `c0‖B‖M`, the quantity that must stay O(n^{-1/2}) for the rate condition.
    pub rate_scaling: f64,
    /// `c0‖B‖(M-1)`, the corresponding quantity for the comparison condition.
    pub compare_scaling: f64,
}

/// Condition report from the raw scalars.
pub fn condition_report_raw(
    n: usize,
    norm_b: f64,
    c0: f64,
    m_freq: usize,
    nu: f64,
    c_star: f64,
) -> Result<ConditionReport> {
    if n == 0 || m_freq == 0 {
        return Err(Error::invalid("n and M must be positive"));
    }
    if !(c0 > 0.0) || !(norm_b >= 0.0) {
        return Err(Error::invalid("c0 must be positive and ‖B‖ nonnegative"));
    }
    if !(c_star > 1.0) {
        return Err(Error::invalid(format!("c_* must exceed 1, got {c_star}")));
    }
    if !(nu >= 0.0) {
        return Err(Error::invalid(format!("nu must be nonnegative, got {nu}")));
    }
    let q = c0 * norm_b;
    if q >= 1.0 {
        return Err(Error::Domain(format!("c0‖B‖ = {q} must be below 1")));
    }
    let mf = m_freq as f64;
    let nf = n as f64;
    let base = 1.0 - q;
    let c_b = base.powi(-(m_freq as i32));
    let c_bm: f64 = (1..m_freq).map(|i| (1.0 - base.powi(i as i32)).powi(2)).sum();
    let c_b_prime = base.powi(-2 * (m_freq as i32 - 1));
    let c_nu = self_power(nu) * (mf * c0).powf(-nu);
    let mq = mf * q;
    let c_dstar = (3.0 + 2.0 * mq * mq) * nf * mf * c_b * c0 * c0 * norm_b;
    let rate_lhs = (4.0 + 2.0 * mq * mq) * nf * c_b * c_bm / (mf * mf);
    let rate_rhs = 1.0 - 1.0 / c_star;
    let compare_lhs = ((mf - 1.0).powi(2) * q * q, (mf + 1.0).powi(2));
    let half_inv = 1.0 / (2.0 * c_b_prime);
    let compare_rhs = (half_inv, half_inv * (nf - 1.0));
    Ok(ConditionReport {
        n,
        m_freq,
        c0,
        norm_b,
        nu,
        c_star,
        c_b,
        c_bm,
        c_b_prime,
        c_nu,
        c_dstar,
        rate_lhs,
        rate_rhs,
        cond_rate: rate_lhs <= rate_rhs,
        compare_lhs,
        compare_rhs,
        cond_compare: (compare_lhs.0 <= compare_rhs.0, compare_lhs.1 <= compare_rhs.1),
        rate_scaling: mq,
        compare_scaling: (mf - 1.0) * q,
    })
}

pub fn condition_report(inst: &ProblemInstance, c0: f64, m_freq: usize, nu: f64, c_star: f64) -> Result<ConditionReport> {
    condition_report_raw(inst.n(), inst.gram()?.spectral_norm(), c0, m_freq, nu, c_star)
}

/// Bound on the mean squared error of the SVRG iterate after `K` outer loops:
/// `(2 + 2^{2ν}‖B‖c_** c_*) c_ν² K^{-2ν}‖w‖² + (2Mc0 + c_** c_*) K δ̄²`.
/// Only asserted when `report.cond_rate` holds.
pub fn theorem_bound(report: &ConditionReport, norm_w: f64, delta_bar: f64, k: usize) -> f64 {
    let nu = report.nu;
    let kf = k as f64;
    let cc = report.c_dstar * report.c_star;
    (2.0 + 2f64.powf(2.0 * nu) * report.norm_b * cc) * report.c_nu.powi(2) * kf.powf(-2.0 * nu) * norm_w * norm_w
        + (2.0 * report.m_freq as f64 * report.c0 + cc) * kf * delta_bar * delta_bar
}

/// Bound on the mean squared residual `E‖A x_{KM} - y^δ‖²`:
/// `2^{2ν+2} c²_{ν+1/2} n c_* K^{-2ν-1}‖w‖² + 2 n c_* δ̄²`.
pub fn residual_bound(report: &ConditionReport, norm_w: f64, delta_bar: f64, k: usize) -> f64 {
    let s = report.nu + 0.5;
    let c_s = self_power(s) * (report.m_freq as f64 * report.c0).powf(-s);
    let nf = report.n as f64;
    2f64.powf(2.0 * report.nu + 2.0) * c_s * c_s * nf * report.c_star * (k as f64).powf(-2.0 * s) * norm_w * norm_w
        + 2.0 * nf * report.c_star * delta_bar * delta_bar
}

/// Least-squares slope of `log mse` against `log δ`.
pub fn rate_fit(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(Error::invalid(format!("rate fit needs at least 3 points, got {}", pairs.len())));
    }
    if pairs.iter().any(|&(d, e)| !(d > 0.0 && e > 0.0 && d.is_finite() && e.is_finite())) {
        return Err(Error::invalid("rate fit needs positive finite values"));
    }
    let pts: Vec<(f64, f64)> = pairs.iter().map(|&(d, e)| (d.ln(), e.ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("rate fit needs at least two distinct noise levels"));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_inner_step() {
        let r = condition_report_raw(10, 1.0, 0.1, 1, 0.0, 2.0).unwrap();
        assert_eq!(r.c_bm, 0.0);
        assert!(r.cond_rate);
        assert_eq!(r.c_nu, 1.0);
    }

    #[test]
    fn domain_and_input_errors() {
        assert!(matches!(condition_report_raw(10, 1.0, 1.0, 2, 0.0, 2.0), Err(Error::Domain(_))));
        assert!(condition_report_raw(10, 1.0, 0.1, 2, 0.0, 1.0).is_err());
    }

    #[test]
    fn small_steps_satisfy_rate_condition() {
        let r = condition_report_raw(1000, 1.0, 1e-9, 50, 1.0, 2.0).unwrap();
        assert!(r.cond_rate);
    }

    #[test]
    fn rate_fit_exact_power() {
        let pairs: Vec<(f64, f64)> = [1e-3, 1e-2, 5e-2, 0.1].iter().map(|&d: &f64| (d, d.powf(4.0 / 3.0))).collect();
        assert!((rate_fit(&pairs).unwrap() - 4.0 / 3.0).abs() < 1e-10);
        assert!(rate_fit(&pairs[..1]).is_err());
        assert!(rate_fit(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
    }

    #[test]
    fn bounds_at_zero_noise() {
        let r = condition_report_raw(10, 0.5, 0.1, 2, 0.0, 2.0).unwrap();
        let b1 = residual_bound(&r, 1.0, 0.0, 1);
        let b2 = residual_bound(&r, 1.0, 0.0, 2);
        assert!((b1 / b2 - 2.0).abs() < 1e-12);
        let floor = residual_bound(&r, 1.0, 0.3, 1_000_000_000) ;
        assert!((floor - 2.0 * 10.0 * 2.0 * 0.09).abs() < 1e-6);
    }
}
