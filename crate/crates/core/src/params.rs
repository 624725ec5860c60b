//! Exponent, eigenvalue, and regime algebra for one autonomous side.
//!
//! Everything in here is closed-form. The radial equation
//! `u'' + (n-1)/r u' + eta/r^2 u + K r^delta u|u|^{q-2} = 0` turns into an
//! autonomous planar system once the reduced exponent `l = 2(q+delta)/(2+delta)`
//! and the powers `alpha_l = 2/(l-2)`, `gamma_l = alpha_l + 2 - n` are fixed,
//! and the whole qualitative taxonomy of that system is decided by where `l`
//! sits relative to three critical values. This module computes those values
//! and classifies the regime.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance at which two exponents are treated as equal.
pub const EQ_REL_TOL: f64 = 1e-9;
/// Relative tolerance at which an exponent counts as suspiciously close to a
/// critical value without being detected as equal.
pub const NEAR_REL_TOL: f64 = 1e-6;

/// `|a - b| <= tol * max(1, |a|, |b|)`.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Full problem data: a sign-changing reaction split at the radius `rho`.
///
/// Side 1 (`k1, q1, delta1`) governs `r <= rho`, side 2 governs `r > rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub n: u32,
    pub eta: f64,
    pub k1: f64,
    pub q1: f64,
    pub delta1: f64,
    pub k2: f64,
    pub q2: f64,
    pub delta2: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
}

fn default_rho() -> f64 {
    1.0
}

impl ProblemConfig {
    /// Checks every standing assumption and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut faults = Vec::new();
        if self.n < 3 {
            faults.push(format!("n = {} but the analysis needs n >= 3", self.n));
        }
        let nm2 = self.n as f64 - 2.0;
        let hardy = nm2 * nm2 / 4.0;
        if !self.eta.is_finite() || self.eta >= hardy {
            faults.push(format!(
                "eta = {} violates eta < (n-2)^2/4 = {}",
                self.eta, hardy
            ));
        }
        for (tag, q, delta, k) in [
            ("side 1", self.q1, self.delta1, self.k1),
            ("side 2", self.q2, self.delta2, self.k2),
        ] {
            if !(q > 2.0) || !q.is_finite() {
                faults.push(format!("{tag}: q = {q} must be finite and > 2"));
            }
            if !(delta > -2.0) || !delta.is_finite() {
                faults.push(format!("{tag}: delta = {delta} must be finite and > -2"));
            }
            if !k.is_finite() || k == 0.0 {
                faults.push(format!("{tag}: K = {k} must be finite and nonzero"));
            }
        }
        if self.k1.is_finite() && self.k2.is_finite() && self.k1 * self.k2 >= 0.0 {
            faults.push(format!(
                "the reaction must change sign: K1 * K2 = {} >= 0",
                self.k1 * self.k2
            ));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            faults.push(format!("rho = {} must be finite and > 0", self.rho));
        }
        if faults.is_empty() {
            Ok(())
        } else {
            Err(Error::Domain(faults.join("; ")))
        }
    }

    /// Reaction data `(K, q, delta)` for side 1 or 2.
    pub fn side(&self, side: u8) -> (f64, f64, f64) {
        match side {
            1 => (self.k1, self.q1, self.delta1),
            2 => (self.k2, self.q2, self.delta2),
            _ => panic!("side must be 1 or 2, got {side}"),
        }
    }

    /// Exponent set for the requested side.
    pub fn exponents(&self, side: u8) -> Result<ExponentSet> {
        let (_, q, delta) = self.side(side);
        derive_exponent_set(self.n, self.eta, q, delta)
    }

    /// Equivalent problem with the switch moved to radius 1.
    ///
    /// Substituting `r = rho * s` preserves the equation with amplitudes
    /// `K_i * rho^(2+delta_i)`. Labels measured on the normalized problem map
    /// back through powers of rho; see the shooting module.
    pub fn normalized(&self) -> ProblemConfig {
        ProblemConfig {
            k1: self.k1 * self.rho.powf(2.0 + self.delta1),
            k2: self.k2 * self.rho.powf(2.0 + self.delta2),
            rho: 1.0,
            ..*self
        }
    }
}

/// `I(eta)` may genuinely be infinite (always, for eta <= 0), so it gets a
/// dedicated variant instead of a sentinel float.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpperCritical {
    Finite(f64),
    Unbounded,
}

impl UpperCritical {
    pub fn finite(&self) -> Option<f64> {
        match self {
            UpperCritical::Finite(v) => Some(*v),
            UpperCritical::Unbounded => None,
        }
    }
}

/// Stability type of the origin of the autonomous system, decided by where
/// `l` falls relative to the Serrin-type value and `I(eta)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    NodeUnstable,
    CenterUnstable,
    Saddle,
    CenterStable,
    NodeStable,
}

/// The three critical exponents plus kappa, straight from the closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalExponents {
    pub kappa: f64,
    pub serrin: f64,
    pub sobolev: f64,
    pub i_eta: UpperCritical,
}

/// Everything the rest of the workbench needs to know about one side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentSet {
    pub l: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub kappa: f64,
    /// Smaller eigenvalue of the linearization at the origin, gamma + kappa.
    #[serde(rename = "lambda")]
    pub lambda_lo: f64,
    /// Larger eigenvalue, alpha - kappa.
    #[serde(rename = "Lambda")]
    pub lambda_hi: f64,
    pub serrin: f64,
    pub sobolev: f64,
    pub i_eta: UpperCritical,
    pub regime: Regime,
    /// True exactly when l = 2^*: the system then has a first integral.
    pub hamiltonian: bool,
    /// Within `NEAR_REL_TOL` of some critical value without being caught by
    /// the equality tolerance; portraits may straddle a bifurcation.
    pub critically_close: bool,
    pub n: u32,
    pub eta: f64,
    pub q: f64,
    pub delta: f64,
}

impl ExponentSet {
    /// Eigenvector direction for the larger eigenvalue, (1, -kappa).
    pub fn fast_direction(&self) -> [f64; 2] {
        [1.0, -self.kappa]
    }

    /// Eigenvector direction for the smaller eigenvalue, (1, -(n-2-kappa)).
    pub fn slow_direction(&self) -> [f64; 2] {
        [1.0, -(self.n as f64 - 2.0 - self.kappa)]
    }

    /// The other root of m^2 - (n-2)m + eta, paired with kappa.
    pub fn kappa_conjugate(&self) -> f64 {
        self.n as f64 - 2.0 - self.kappa
    }
}

/// Closed forms for kappa, the Serrin-type exponent, the Sobolev exponent,
/// and the upper critical value `I(eta)`.
pub fn critical_exponents(n: u32, eta: f64) -> Result<CriticalExponents> {
    if n < 3 {
        return Err(Error::Domain(format!("n = {n} but the analysis needs n >= 3")));
    }
    let nm2 = n as f64 - 2.0;
    let disc = nm2 * nm2 - 4.0 * eta;
    if !eta.is_finite() || disc <= 0.0 {
        return Err(Error::Domain(format!(
            "eta = {eta} violates eta < (n-2)^2/4 = {}",
            nm2 * nm2 / 4.0
        )));
    }
    let root = disc.sqrt();
    let nf = n as f64;
    let i_eta = if eta <= 0.0 {
        UpperCritical::Unbounded
    } else {
        UpperCritical::Finite(2.0 * (nf - root) / (nm2 - root))
    };
    Ok(CriticalExponents {
        kappa: (nm2 - root) / 2.0,
        serrin: 2.0 * (nf + root) / (nm2 + root),
        sobolev: 2.0 * nf / nm2,
        i_eta,
    })
}

/// Builds the full exponent set for one side.
pub fn derive_exponent_set(n: u32, eta: f64, q: f64, delta: f64) -> Result<ExponentSet> {
    if !(q > 2.0) || !q.is_finite() {
        return Err(Error::Domain(format!("q = {q} must be finite and > 2")));
    }
    if !(delta > -2.0) || !delta.is_finite() {
        return Err(Error::Domain(format!("delta = {delta} must be finite and > -2")));
    }
    let crit = critical_exponents(n, eta)?;
    let l = 2.0 * (q + delta) / (2.0 + delta);
    if l <= 2.0 {
        return Err(Error::Domain(format!("reduced exponent l = {l} <= 2")));
    }
    let alpha = 2.0 / (l - 2.0);
    let gamma = alpha + 2.0 - n as f64;

    let at_serrin = rel_close(l, crit.serrin, EQ_REL_TOL);
    let at_upper = crit
        .i_eta
        .finite()
        .map(|i| rel_close(l, i, EQ_REL_TOL))
        .unwrap_or(false);
    let regime = if at_serrin {
        Regime::CenterUnstable
    } else if at_upper {
        Regime::CenterStable
    } else if l < crit.serrin {
        Regime::NodeUnstable
    } else if crit.i_eta.finite().map(|i| l > i).unwrap_or(false) {
        Regime::NodeStable
    } else {
        Regime::Saddle
    };

    let hamiltonian = rel_close(l, crit.sobolev, EQ_REL_TOL);
    let mut near = rel_close(l, crit.serrin, NEAR_REL_TOL) && !at_serrin;
    near |= rel_close(l, crit.sobolev, NEAR_REL_TOL) && !hamiltonian;
    if let Some(i) = crit.i_eta.finite() {
        near |= rel_close(l, i, NEAR_REL_TOL) && !at_upper;
    }

    Ok(ExponentSet {
        l,
        alpha,
        gamma,
        kappa: crit.kappa,
        lambda_lo: gamma + crit.kappa,
        lambda_hi: alpha - crit.kappa,
        serrin: crit.serrin,
        sobolev: crit.sobolev,
        i_eta: crit.i_eta,
        regime,
        hamiltonian,
        critically_close: near,
        n,
        eta,
        q,
        delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_rel(a: f64, b: f64, tol: f64) {
        assert!(
            rel_close(a, b, tol),
            "expected {a} ~ {b} within rel {tol}, diff {}",
            (a - b).abs()
        );
    }

    #[test]
    fn eta_zero_gives_classical_exponents() {
        let c = critical_exponents(5, 0.0).unwrap();
        assert_eq!(c.kappa, 0.0);
        assert_rel(c.serrin, 8.0 / 3.0, 1e-15);
        assert_rel(c.sobolev, 10.0 / 3.0, 1e-15);
        assert_eq!(c.i_eta, UpperCritical::Unbounded);
    }

    #[test]
    fn eta_one_matches_high_precision_values() {
        let c = critical_exponents(5, 1.0).unwrap();
        // (3 - sqrt 5)/2, 2(5 + sqrt 5)/(3 + sqrt 5), 5 + sqrt 5
        assert_rel(c.kappa, 0.381_966_011_250_105_1, 1e-14);
        assert_rel(c.serrin, 2.763_932_022_500_21, 1e-14);
        match c.i_eta {
            UpperCritical::Finite(i) => assert_rel(i, 7.236_067_977_499_79, 1e-14),
            UpperCritical::Unbounded => panic!("I(1) should be finite"),
        }
    }

    #[test]
    fn hardy_boundary_is_rejected() {
        assert!(matches!(critical_exponents(4, 1.0), Err(Error::Domain(_))));
        assert!(matches!(critical_exponents(2, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn saddle_example() {
        let e = derive_exponent_set(5, 0.0, 4.0, 0.0).unwrap();
        assert_rel(e.l, 4.0, 1e-15);
        assert_rel(e.alpha, 1.0, 1e-15);
        assert_rel(e.gamma, -2.0, 1e-15);
        assert_rel(e.lambda_lo, -2.0, 1e-15);
        assert_rel(e.lambda_hi, 1.0, 1e-15);
        assert_eq!(e.regime, Regime::Saddle);
        assert!(!e.hamiltonian);
    }

    #[test]
    fn sobolev_exponent_is_hamiltonian() {
        let e = derive_exponent_set(5, 0.0, 10.0 / 3.0, 0.0).unwrap();
        assert_rel(e.alpha, 1.5, 1e-12);
        assert_rel(e.alpha + e.gamma, 0.0, 1e-12);
        assert!(e.hamiltonian);
        assert_eq!(e.regime, Regime::Saddle);
    }

    #[test]
    fn weighted_node_example() {
        let e = derive_exponent_set(5, 0.0, 3.0, 2.0).unwrap();
        assert_rel(e.l, 2.5, 1e-15);
        assert_eq!(e.regime, Regime::NodeUnstable);
    }

    #[test]
    fn near_critical_is_flagged_but_not_snapped() {
        let serrin = 8.0 / 3.0;
        // l = q when delta = 0; park q a hair away from the Serrin value
        let e = derive_exponent_set(5, 0.0, serrin * (1.0 + 3e-8), 0.0).unwrap();
        assert_eq!(e.regime, Regime::Saddle);
        assert!(e.critically_close);
        let exact = derive_exponent_set(5, 0.0, serrin, 0.0).unwrap();
        assert_eq!(exact.regime, Regime::CenterUnstable);
        assert!(!exact.critically_close);
    }

    #[test]
    fn config_validation_collects_faults() {
        let bad = ProblemConfig {
            n: 2,
            eta: 5.0,
            k1: 1.0,
            q1: 1.5,
            delta1: -3.0,
            k2: 2.0,
            q2: 4.0,
            delta2: 0.0,
            rho: -1.0,
        };
        let msg = match bad.validate() {
            Err(Error::Domain(m)) => m,
            other => panic!("expected Domain error, got {other:?}"),
        };
        for needle in ["n = 2", "eta", "q = 1.5", "delta = -3", "change sign", "rho"] {
            assert!(msg.contains(needle), "missing {needle:?} in {msg}");
        }
    }

    #[test]
    fn normalization_rescales_amplitudes() {
        let cfg = ProblemConfig {
            n: 5,
            eta: 0.0,
            k1: 1.0,
            q1: 4.0,
            delta1: 0.0,
            k2: -1.0,
            q2: 3.0,
            delta2: 1.0,
            rho: 2.0,
        };
        let norm = cfg.normalized();
        assert_rel(norm.k1, 4.0, 1e-15);
        assert_rel(norm.k2, -8.0, 1e-15);
        assert_eq!(norm.rho, 1.0);
    }

    #[test]
    fn eigen_identities_on_a_grid() {
        for &n in &[3u32, 4, 5, 7, 10] {
            let cap = (n as f64 - 2.0).powi(2) / 4.0;
            for k in 0..12 {
                let eta = cap * (k as f64 / 12.0) - 1.5;
                if eta >= cap {
                    continue;
                }
                for &q in &[2.2, 3.0, 4.0, 6.5] {
                    for &delta in &[-1.5, 0.0, 2.0] {
                        let e = derive_exponent_set(n, eta, q, delta).unwrap();
                        assert_rel(e.lambda_lo + e.lambda_hi, e.alpha + e.gamma, 1e-12);
                        assert_rel(e.lambda_lo * e.lambda_hi, e.alpha * e.gamma + eta, 1e-12);
                        let m = e.kappa;
                        assert!((m * m - (n as f64 - 2.0) * m + eta).abs() < 1e-12);
                        let m = e.kappa_conjugate();
                        assert!((m * m - (n as f64 - 2.0) * m + eta).abs() < 1e-12);
                        let saddle = e.regime == Regime::Saddle;
                        let det_neg = e.alpha * e.gamma + eta < 0.0;
                        let window = e.l > e.serrin
                            && e.i_eta.finite().map(|i| e.l < i).unwrap_or(true);
                        // on an exact boundary the determinant is a rounding
                        // level quantity with arbitrary sign
                        let boundary = matches!(
                            e.regime,
                            Regime::CenterUnstable | Regime::CenterStable
                        );
                        if !e.critically_close && !boundary {
                            assert_eq!(saddle, det_neg);
                            assert_eq!(saddle, window);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    fn valid_quad() -> impl Strategy<Value = (u32, f64, f64, f64)> {
        (3u32..=12).prop_flat_map(|n| {
            let cap = (n as f64 - 2.0).powi(2) / 4.0;
            (
                Just(n),
                prop_oneof![4 => -8.0..cap - 1e-6, 1 => Just(0.0)],
                2.01f64..12.0,
                -1.9f64..6.0,
            )
        })
    }

    proptest! {
        #[test]
        fn eigenvalue_algebra_holds((n, eta, q, delta) in valid_quad()) {
            let e = derive_exponent_set(n, eta, q, delta).unwrap();
            let nf = n as f64;
            let trace = e.alpha + e.gamma;
            let det = e.alpha * e.gamma + eta;
            prop_assert!((e.lambda_lo + e.lambda_hi - trace).abs() <= 1e-12 * (1.0 + trace.abs()));
            prop_assert!((e.lambda_lo * e.lambda_hi - det).abs() <= 1e-12 * (1.0 + det.abs()));
            // both admissible decay orders are roots of m^2 - (n-2) m + eta
            for m in [e.kappa, e.kappa_conjugate()] {
                prop_assert!((m * m - (nf - 2.0) * m + eta).abs() <= 1e-11 * (1.0 + m * m));
            }
            prop_assert!((e.gamma - (e.alpha + 2.0 - nf)).abs() <= 1e-12 * (1.0 + nf));
            prop_assert!((e.l - 2.0 * (q + delta) / (2.0 + delta)).abs() <= 1e-10 * e.l.abs());
        }

        #[test]
        fn saddle_window_matches_determinant_sign((n, eta, q, delta) in valid_quad()) {
            let e = derive_exponent_set(n, eta, q, delta).unwrap();
            prop_assume!(!e.critically_close);
            let saddle = e.regime == Regime::Saddle;
            prop_assert_eq!(saddle, e.alpha * e.gamma + eta < 0.0);
            let window = e.l > e.serrin && e.i_eta.finite().map(|i| e.l < i).unwrap_or(true);
            prop_assert_eq!(saddle, window);
        }
    }
}
