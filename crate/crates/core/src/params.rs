//! Model parameters of the scaled system and the nondimensionalization map.

use crate::error::{CoreError, Result};

/// Exact turning-kernel ratio β/λ = (1 - s^n)(n + 2) / (1 - s^{n+2}).
///
/// Inverts the compatibility relation λ = β (1 - s^{n+2}) / ((1 - s^n)(n + 2))
/// that makes the explicit kernel T(v, v') = λ + β v·v' satisfy the
/// momentum solvability condition.
pub fn turning_ratio(n: usize, s: f64) -> f64 {
    let nf = n as f64;
    (1.0 - s.powi(n as i32)) * (nf + 2.0) / (1.0 - s.powi(n as i32 + 2))
}

/// Scaled (dimensionless) rate constants and weights of the coupled system.
///
/// All rates are the hatted constants of the hyperbolic scaling; R0 = 1 and
/// the chemoattractant diffusion is 1 in these units unless overridden for
/// diagnostics.
#[derive(Debug, Clone)]
pub struct ModelParams {
    /// Fiber binding rate k1.
    pub k1: f64,
    /// Fiber unbinding rate k_{-1}.
    pub km1: f64,
    /// Chemoattractant binding rate k2.
    pub k2: f64,
    /// Chemoattractant unbinding rate k_{-2}.
    pub km2: f64,
    /// Fiber degradation rate κ.
    pub kappa: f64,
    /// Chemoattractant decay rate r_L.
    pub r_l: f64,
    /// Chemoattractant diffusion (1 after scaling; kept as a knob for tests).
    pub d_l: f64,
    /// Turning weight α1 (constant).
    pub alpha1: f64,
    /// Chemotaxis weight α2 = 1 - α1.
    pub alpha2: f64,
    /// Turning kernel offset λ (nominal; tied to β by the exact ratio).
    pub lambda: f64,
    /// Turning kernel slope β (nominal).
    pub beta: f64,
    /// Chemotactic sensitivity χ.
    pub chi: f64,
    /// Bound M for the reorientation kernel condition ∫ψ dv' <= M.
    pub psi_m: f64,
    /// Scaling parameter ε > 0.
    pub eps: f64,
    /// Activity-drift exponent a ∈ (0, 1).
    pub a: f64,
    /// Haptotaxis exponent b >= 1.
    pub b: f64,
    /// Chemotaxis exponent d >= 1.
    pub d: f64,
}

impl ModelParams {
    /// Defaults at the desk scale: unit rates, explicit kernel with λ|V|-
    /// normalization deferred to the kernel set, hyperbolic regime (1, 1).
    pub fn default_for(n: usize, s: f64) -> Self {
        let lambda = 1.0;
        ModelParams {
            k1: 1.0,
            km1: 1.0,
            k2: 1.0,
            km2: 1.0,
            kappa: 0.5,
            r_l: 0.1,
            d_l: 1.0,
            alpha1: 0.7,
            alpha2: 0.3,
            lambda,
            beta: lambda * turning_ratio(n, s),
            chi: 0.3,
            psi_m: 2.5,
            eps: 1.0,
            a: 0.5,
            b: 1.0,
            d: 1.0,
        }
    }

    /// Validate all constraints the modules depend on.
    pub fn validate(&self, n: usize, s: f64) -> Result<()> {
        for (name, v) in [
            ("k1", self.k1),
            ("k_m1", self.km1),
            ("k2", self.k2),
            ("k_m2", self.km2),
            ("kappa", self.kappa),
            ("r_l", self.r_l),
            ("d_l", self.d_l),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(CoreError::Config(format!("rate {name} must be >= 0, got {v}")));
            }
        }
        if (self.alpha1 + self.alpha2 - 1.0).abs() > 1e-12 {
            return Err(CoreError::Config(format!(
                "weights must satisfy alpha1 + alpha2 = 1, got {} + {}",
                self.alpha1, self.alpha2
            )));
        }
        if self.alpha1 < 0.0 || self.alpha2 < 0.0 {
            return Err(CoreError::Config("weights alpha1, alpha2 must be nonnegative".into()));
        }
        if self.eps <= 0.0 {
            return Err(CoreError::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.a > 0.0 && self.a < 1.0) {
            return Err(CoreError::Config(format!(
                "exponent a must satisfy 0 < a < 1, got {}",
                self.a
            )));
        }
        if self.b < 1.0 || self.d < 1.0 {
            return Err(CoreError::Config(format!(
                "exponents b, d must be >= 1, got b = {}, d = {}",
                self.b, self.d
            )));
        }
        if self.lambda <= 0.0 || self.beta <= 0.0 {
            return Err(CoreError::Config("turning constants lambda, beta must be positive".into()));
        }
        let ratio = turning_ratio(n, s);
        if (self.beta - self.lambda * ratio).abs() > 1e-10 * self.lambda.max(1.0) {
            return Err(CoreError::Config(format!(
                "turning constants violate the compatibility relation: beta/lambda = {}, required {}",
                self.beta / self.lambda,
                ratio
            )));
        }
        if self.chi < 0.0 {
            return Err(CoreError::Config(format!("chi must be >= 0, got {}", self.chi)));
        }
        Ok(())
    }

    /// Operator weight ε^{b-1} of the haptotaxis term after dividing by ε.
    pub fn hapto_weight(&self) -> f64 {
        self.eps.powf(self.b - 1.0)
    }

    /// Operator weight ε^{d-1} of the chemotaxis term.
    pub fn chemo_weight(&self) -> f64 {
        self.eps.powf(self.d - 1.0)
    }

    /// Operator weight ε^{a-1} of the activity drift.
    pub fn activity_weight(&self) -> f64 {
        self.eps.powf(self.a - 1.0)
    }

    /// Source selector for the limit system: true iff the exponent equals 1.
    pub fn hapto_source_active(&self) -> bool {
        (self.b - 1.0).abs() < 1e-12
    }

    pub fn chemo_source_active(&self) -> bool {
        (self.d - 1.0).abs() < 1e-12
    }
}

/// Dimensional inputs to the nondimensionalization map.
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionalInputs {
    /// Reference time τ.
    pub tau: f64,
    /// Reference length R.
    pub r_len: f64,
    /// Top speed s2.
    pub s2: f64,
    /// Receptor capacity R0.
    pub r0: f64,
    /// Reference distribution magnitude f̄.
    pub f_bar: f64,
    /// Turning frequency p̄_l.
    pub p_l: f64,
    /// Haptotaxis frequency p̄_h.
    pub p_h: f64,
    /// Chemotaxis frequency p̄_c.
    pub p_c: f64,
    /// Mass-action drift magnitude Ḡ.
    pub g_bar: f64,
    pub kappa: f64,
    pub r_l: f64,
    pub d_l: f64,
    pub k1: f64,
    pub km1: f64,
    pub k2: f64,
    pub km2: f64,
}

/// Result of the scaling: ε, the exponents, the hatted constants, and the
/// residuals of the two normalization restrictions.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledParams {
    pub eps: f64,
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub kappa_hat: f64,
    pub r_l_hat: f64,
    pub d_l_hat: f64,
    pub k1_hat: f64,
    pub km1_hat: f64,
    pub k2_hat: f64,
    pub km2_hat: f64,
    /// |s2 τ / R - 1|, zero when the transport normalization holds.
    pub transport_residual: f64,
    /// |τ D_L / R² - 1|, zero when the diffusion normalization holds.
    pub diffusion_residual: f64,
}

/// Nondimensionalize per the hyperbolic scaling: ε = 1/(τ p̄_l) with
/// exponents a, b, d read off from Ḡ/R0, p̄_h, p̄_c relative to p̄_l,
/// and hatted reaction constants κ̂ = τ R0² s2ⁿ f̄ κ, k̂_i = τ R0³ s2ⁿ f̄ k_i,
/// k̂_{-i} = τ R0² s2ⁿ f̄ k_{-i}, r̂_L = τ r_L.
pub fn nondimensionalize(n: usize, din: &DimensionalInputs) -> Result<ScaledParams> {
    for (name, v) in [
        ("tau", din.tau),
        ("r_len", din.r_len),
        ("s2", din.s2),
        ("r0", din.r0),
        ("f_bar", din.f_bar),
        ("p_l", din.p_l),
        ("p_h", din.p_h),
        ("p_c", din.p_c),
        ("g_bar", din.g_bar),
    ] {
        if v <= 0.0 || !v.is_finite() {
            return Err(CoreError::Config(format!(
                "dimensional input {name} must be positive, got {v}"
            )));
        }
    }
    let transport_residual = (din.s2 * din.tau / din.r_len - 1.0).abs();
    let diffusion_residual = (din.tau * din.d_l / (din.r_len * din.r_len) - 1.0).abs();
    if transport_residual > 1e-9 {
        return Err(CoreError::RegimeViolation(format!(
            "normalization s2*tau/R = 1 violated (residual {transport_residual:.3e})"
        )));
    }
    if diffusion_residual > 1e-9 {
        return Err(CoreError::RegimeViolation(format!(
            "normalization tau*D_L/R^2 = 1 violated (residual {diffusion_residual:.3e})"
        )));
    }

    let eps = 1.0 / (din.tau * din.p_l);
    if eps >= 1.0 {
        return Err(CoreError::RegimeViolation(format!(
            "hyperbolic scaling requires tau * p_l > 1, got eps = {eps}"
        )));
    }
    let ln_eps = eps.ln();
    let a = (din.g_bar / (din.r0 * din.p_l)).ln() / ln_eps;
    let b = (din.p_h / din.p_l).ln() / ln_eps;
    let d = (din.p_c / din.p_l).ln() / ln_eps;
    if !(a > 0.0 && a < 1.0) {
        return Err(CoreError::RegimeViolation(format!(
            "computed exponent a = {a} outside (0, 1)"
        )));
    }
    if b < 1.0 - 1e-12 || d < 1.0 - 1e-12 {
        return Err(CoreError::RegimeViolation(format!(
            "computed exponents must be >= 1, got b = {b}, d = {d}"
        )));
    }

    let s2n = din.s2.powi(n as i32);
    let common = din.tau * din.r0 * din.r0 * s2n * din.f_bar;
    Ok(ScaledParams {
        eps,
        a,
        b,
        d,
        kappa_hat: common * din.kappa,
        r_l_hat: din.tau * din.r_l,
        d_l_hat: din.tau * din.d_l / (din.r_len * din.r_len),
        k1_hat: common * din.r0 * din.k1,
        km1_hat: common * din.km1,
        k2_hat: common * din.r0 * din.k2,
        km2_hat: common * din.km2,
        transport_residual,
        diffusion_residual,
    })
}

/// Invert the scaling given the reference quantities; used as the round-trip
/// oracle for `nondimensionalize`.
pub fn dimensionalize(
    n: usize,
    scaled: &ScaledParams,
    tau: f64,
    s2: f64,
    r0: f64,
    f_bar: f64,
) -> DimensionalInputs {
    let r_len = s2 * tau;
    let p_l = 1.0 / (tau * scaled.eps);
    let s2n = s2.powi(n as i32);
    let common = tau * r0 * r0 * s2n * f_bar;
    DimensionalInputs {
        tau,
        r_len,
        s2,
        r0,
        f_bar,
        p_l,
        p_h: p_l * scaled.eps.powf(scaled.b),
        p_c: p_l * scaled.eps.powf(scaled.d),
        g_bar: r0 * p_l * scaled.eps.powf(scaled.a),
        kappa: scaled.kappa_hat / common,
        r_l: scaled.r_l_hat / tau,
        d_l: r_len * r_len / tau,
        k1: scaled.k1_hat / (common * r0),
        km1: scaled.km1_hat / common,
        k2: scaled.k2_hat / (common * r0),
        km2: scaled.km2_hat / common,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_matches_hand_value() {
        // n = 1, s = 0.5: beta/lambda = 3 (1 - s) / (1 - s^3) = 12/7.
        let r = turning_ratio(1, 0.5);
        assert!((r - 12.0 / 7.0).abs() < 1e-14);
        // The compatibility identity holds to machine precision.
        let lambda = 1.0;
        let beta = lambda * r;
        let lhs = lambda;
        let rhs = beta * (1.0 - 0.5f64.powi(3)) / ((1.0 - 0.5) * 3.0);
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn default_params_validate() {
        let p = ModelParams::default_for(1, 0.5);
        p.validate(1, 0.5).unwrap();
        let p2 = ModelParams::default_for(2, 0.3);
        p2.validate(2, 0.3).unwrap();
    }

    #[test]
    fn validation_rejects_bad_exponents() {
        let mut p = ModelParams::default_for(1, 0.5);
        p.a = 1.5;
        assert!(p.validate(1, 0.5).is_err());
        p.a = 0.5;
        p.b = 0.5;
        assert!(p.validate(1, 0.5).is_err());
    }

    #[test]
    fn validation_rejects_weight_mismatch() {
        let mut p = ModelParams::default_for(1, 0.5);
        p.alpha1 = 0.8;
        assert!(p.validate(1, 0.5).is_err());
    }

    #[test]
    fn eps_from_turning_time() {
        // tau * p_l = 10 gives eps = 0.1 by definition.
        let tau = 2.0;
        let p_l = 5.0;
        let s2 = 1.0;
        let din = DimensionalInputs {
            tau,
            r_len: s2 * tau,
            s2,
            r0: 1.0,
            f_bar: 1.0,
            p_l,
            p_h: p_l * 0.1, // b = 1
            p_c: p_l * 0.01, // d = 2
            g_bar: 1.0 * p_l * 0.1f64.sqrt(), // a = 0.5
            kappa: 0.1,
            r_l: 0.05,
            d_l: s2 * s2 * tau,
            k1: 0.2,
            km1: 0.3,
            k2: 0.4,
            km2: 0.5,
        };
        let sp = nondimensionalize(1, &din).unwrap();
        assert!((sp.eps - 0.1).abs() < 1e-12);
        assert!((sp.b - 1.0).abs() < 1e-12);
        assert!((sp.d - 2.0).abs() < 1e-12);
        assert!((sp.a - 0.5).abs() < 1e-12);
    }

    #[test]
    fn scaling_round_trip() {
        let tau = 4.0;
        let s2 = 0.5;
        let p_l = 20.0;
        let din = DimensionalInputs {
            tau,
            r_len: s2 * tau,
            s2,
            r0: 2.0,
            f_bar: 3.0,
            p_l,
            p_h: p_l * (1.0 / (tau * p_l)),
            p_c: p_l * (1.0 / (tau * p_l)).powf(1.5),
            g_bar: 2.0 * p_l * (1.0 / (tau * p_l)).powf(0.3),
            kappa: 0.7,
            r_l: 0.2,
            d_l: s2 * s2 * tau,
            k1: 0.11,
            km1: 0.13,
            k2: 0.17,
            km2: 0.19,
        };
        let sp = nondimensionalize(2, &din).unwrap();
        let back = dimensionalize(2, &sp, tau, s2, 2.0, 3.0);
        let sp2 = nondimensionalize(2, &back).unwrap();
        assert!((sp.eps - sp2.eps).abs() < 1e-12);
        assert!((sp.a - sp2.a).abs() < 1e-12);
        assert!((sp.b - sp2.b).abs() < 1e-12);
        assert!((sp.d - sp2.d).abs() < 1e-12);
        for (x, y) in [
            (sp.kappa_hat, sp2.kappa_hat),
            (sp.k1_hat, sp2.k1_hat),
            (sp.km1_hat, sp2.km1_hat),
            (sp.k2_hat, sp2.k2_hat),
            (sp.km2_hat, sp2.km2_hat),
            (sp.r_l_hat, sp2.r_l_hat),
        ] {
            assert!((x - y).abs() < 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn regime_violation_detected() {
        let tau = 2.0;
        let p_l = 5.0;
        let s2 = 1.0;
        let mut din = DimensionalInputs {
            tau,
            r_len: s2 * tau,
            s2,
            r0: 1.0,
            f_bar: 1.0,
            p_l,
            p_h: p_l * 2.0, // b < 0: haptotaxis faster than turning
            p_c: p_l * 0.1,
            g_bar: p_l * 0.1f64.sqrt(),
            kappa: 0.0,
            r_l: 0.0,
            d_l: s2 * s2 * tau,
            k1: 0.0,
            km1: 0.0,
            k2: 0.0,
            km2: 0.0,
        };
        assert!(nondimensionalize(1, &din).is_err());
        din.p_h = p_l * 0.1;
        din.g_bar = p_l * 2.0; // a < 0
        assert!(nondimensionalize(1, &din).is_err());
    }
}
