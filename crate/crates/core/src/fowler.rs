//! The log-radius change of variables and the planar vector fields it
//! produces.
//!
//! With `x = u r^alpha`, `y = u' r^(alpha+1)`, `t = ln r`, the radial
//! equation on one side becomes the autonomous system
//!
//! ```text
//! x' = alpha x + y
//! y' = -eta x + gamma y - K g(x)
//! ```
//!
//! where `g` is the transformed reaction shape (the prototype is
//! `g(x) = x |x|^(q-2)`). The full problem glues two such systems along the
//! switch plane t = 0.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::{derive_exponent_set, ExponentSet, ProblemConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhasePoint {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadialPoint {
    pub u: f64,
    pub du: f64,
    pub r: f64,
}

/// `(u, u', r)` to Fowler coordinates at log-time `t = ln r`.
pub fn to_fowler(p: RadialPoint, alpha: f64) -> Result<PhasePoint> {
    if !(p.r > 0.0) {
        return Err(Error::Domain(format!("radius must be positive, got {}", p.r)));
    }
    Ok(PhasePoint {
        x: p.u * p.r.powf(alpha),
        y: p.du * p.r.powf(alpha + 1.0),
        t: p.r.ln(),
    })
}

/// Exact inverse of [`to_fowler`].
pub fn from_fowler(q: PhasePoint, alpha: f64) -> RadialPoint {
    let r = q.t.exp();
    RadialPoint {
        u: q.x * r.powf(-alpha),
        du: q.y * r.powf(-(alpha + 1.0)),
        r,
    }
}

/// One additive piece of a reaction shape: `coef * x |x|^(exponent-2)`,
/// optionally damped near zero by `ln(1 + |x|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerTerm {
    pub coef: f64,
    pub exponent: f64,
    pub log_weight: bool,
}

/// A reaction shape g(x) satisfying the odd, superlinear assumptions the
/// phase-portrait analysis needs. Finite sums of (optionally log-weighted)
/// power terms cover the prototype and the generalized family; arbitrary
/// closed-form shapes are out of scope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Nonlinearity {
    terms: Vec<PowerTerm>,
}

impl Nonlinearity {
    /// The prototype `g(x) = x |x|^(q-2)`.
    pub fn power(q: f64) -> Self {
        Nonlinearity {
            terms: vec![PowerTerm { coef: 1.0, exponent: q, log_weight: false }],
        }
    }

    /// General sum. Plain terms need exponent > 2; a log-weighted term is
    /// allowed down to exponent 2 because the log factor restores g'(0) = 0.
    pub fn from_terms(terms: Vec<PowerTerm>) -> Result<Self> {
        if terms.is_empty() || terms.iter().all(|t| t.coef == 0.0) {
            return Err(Error::Domain("reaction shape has no nonzero term".into()));
        }
        for t in &terms {
            if !(t.coef >= 0.0) || !t.coef.is_finite() {
                return Err(Error::Domain(format!(
                    "term coefficients must be finite and >= 0, got {}",
                    t.coef
                )));
            }
            let ok = if t.log_weight { t.exponent >= 2.0 } else { t.exponent > 2.0 };
            if !ok {
                return Err(Error::Domain(format!(
                    "term exponent {} too small (needs > 2, or >= 2 with a log weight)",
                    t.exponent
                )));
            }
        }
        Ok(Nonlinearity { terms })
    }

    pub fn terms(&self) -> &[PowerTerm] {
        &self.terms
    }

    /// Smallest exponent among the terms; controls the behavior near 0.
    pub fn leading_exponent(&self) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.coef != 0.0)
            .map(|t| t.exponent)
            .fold(f64::INFINITY, f64::min)
    }

    /// True when the shape is a single plain power `x |x|^(q-2)`.
    pub fn as_pure_power(&self) -> Option<f64> {
        match self.terms.as_slice() {
            [t] if !t.log_weight && t.coef == 1.0 => Some(t.exponent),
            _ => None,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let ax = x.abs();
        let mut g = 0.0;
        for t in &self.terms {
            let mut v = t.coef * x * ax.powf(t.exponent - 2.0);
            if t.log_weight {
                v *= ax.ln_1p();
            }
            g += v;
        }
        g
    }

    /// Analytic derivative g'(x).
    pub fn eval_prime(&self, x: f64) -> f64 {
        let ax = x.abs();
        let mut d = 0.0;
        for t in &self.terms {
            let p = ax.powf(t.exponent - 2.0);
            if t.log_weight {
                d += t.coef * ((t.exponent - 1.0) * p * ax.ln_1p() + p * ax / (1.0 + ax));
            } else {
                d += t.coef * (t.exponent - 1.0) * p;
            }
        }
        d
    }

    /// `g(x)/x`, continuously extended by 0 at x = 0.
    pub fn ratio(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        self.eval(x) / x
    }

    /// `G(x) = \int_0^x g(s) ds`, exact for plain powers, adaptive Simpson
    /// for log-weighted terms.
    pub fn primitive(&self, x: f64) -> f64 {
        let ax = x.abs();
        let mut total = 0.0;
        for t in &self.terms {
            if t.coef == 0.0 {
                continue;
            }
            if t.log_weight {
                total += t.coef * simpson(|s| s.powf(t.exponent - 1.0) * s.ln_1p(), ax);
            } else {
                total += t.coef * ax.powf(t.exponent) / t.exponent;
            }
        }
        total
    }
}

/// Adaptive Simpson on [0, b] for smooth positive integrands, relative
/// tolerance 1e-12.
fn simpson(f: impl Fn(f64) -> f64 + Copy, b: f64) -> f64 {
    if b == 0.0 {
        return 0.0;
    }
    fn recurse(
        f: impl Fn(f64) -> f64 + Copy,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let err = left + right - whole;
        if depth == 0 || err.abs() <= 15.0 * tol {
            left + right + err / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let fa = f(0.0);
    let fm = f(b / 2.0);
    let fb = f(b);
    let whole = b / 6.0 * (fa + 4.0 * fm + fb);
    recurse(f, 0.0, b, fa, fm, fb, whole, 1e-12 * whole.abs().max(1e-300), 48)
}

/// One autonomous side: exponents, amplitude, reaction shape.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SideSystem {
    pub exp: ExponentSet,
    pub k: f64,
    pub g: Nonlinearity,
}

impl SideSystem {
    pub fn new(exp: ExponentSet, k: f64, g: Nonlinearity) -> Self {
        SideSystem { exp, k, g }
    }

    /// The autonomous field (x', y') at (x, y).
    pub fn field(&self, x: f64, y: f64) -> [f64; 2] {
        [
            self.exp.alpha * x + y,
            -self.exp.eta * x + self.exp.gamma * y - self.k * self.g.eval(x),
        ]
    }

    /// Jacobian of the field.
    pub fn jacobian(&self, x: f64) -> [[f64; 2]; 2] {
        [
            [self.exp.alpha, 1.0],
            [-self.exp.eta - self.k * self.g.eval_prime(x), self.exp.gamma],
        ]
    }

    /// The energy (alpha x + y)^2 / 2 + (alpha gamma + eta) x^2 / 2 + K G(x),
    /// with G the primitive of the nonlinearity. Its derivative along
    /// trajectories is (alpha + gamma)(alpha x + y)^2, so it is a Lyapunov
    /// function away from the Hamiltonian case alpha + gamma = 0.
    pub fn energy(&self, x: f64, y: f64) -> f64 {
        let w = self.exp.alpha * x + y;
        0.5 * w * w + 0.5 * (self.exp.alpha * self.exp.gamma + self.exp.eta) * x * x
            + self.k * self.g.primitive(x)
    }
}

/// The glued system: side 1 for t <= 0, side 2 for t >= 0. The state (x, y)
/// is continuous across the switch; only the field jumps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseSystem {
    pub side1: SideSystem,
    pub side2: SideSystem,
    /// Switch radius of the problem as posed by the user; internally the
    /// sides are already normalized so the switch sits at t = 0.
    pub rho: f64,
}

impl PiecewiseSystem {
    /// Builds the glued system from a validated problem, normalizing the
    /// switch radius to 1 (amplitudes absorb rho^(2+delta)).
    pub fn from_config(cfg: &ProblemConfig) -> Result<Self> {
        cfg.validate()?;
        let norm = cfg.normalized();
        let e1 = derive_exponent_set(norm.n, norm.eta, norm.q1, norm.delta1)?;
        let e2 = derive_exponent_set(norm.n, norm.eta, norm.q2, norm.delta2)?;
        Ok(PiecewiseSystem {
            side1: SideSystem::new(e1, norm.k1, Nonlinearity::power(norm.q1)),
            side2: SideSystem::new(e2, norm.k2, Nonlinearity::power(norm.q2)),
            rho: cfg.rho,
        })
    }

    pub fn side(&self, side: u8) -> &SideSystem {
        match side {
            1 => &self.side1,
            2 => &self.side2,
            _ => panic!("side must be 1 or 2, got {side}"),
        }
    }

    /// Field of the glued system. Exactly at t = 0 the caller picks the side
    /// through `toward_positive_t`: an integration moving right continues on
    /// side 1 up to the switch, one moving left continues on side 2.
    pub fn field_at(&self, p: PhasePoint, toward_positive_t: bool) -> [f64; 2] {
        let side = if p.t < 0.0 || (p.t == 0.0 && toward_positive_t) {
            &self.side1
        } else {
            &self.side2
        };
        side.field(p.x, p.y)
    }
}

/// Verdict for a single shape assumption clause.
#[derive(Debug, Clone, Serialize)]
pub struct ClauseReport {
    pub clause: &'static str,
    pub pass: bool,
    /// First grid point violating the clause, with the measured value.
    pub violation: Option<(f64, f64)>,
}

/// Outcome of the numerical shape validation.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub pass: bool,
    pub clauses: Vec<ClauseReport>,
}

/// Default validation grid: 512 log-spaced magnitudes per sign in
/// [1e-6, 1e6].
pub fn default_g0_grid() -> Vec<f64> {
    let (lo, hi, count) = (1e-6f64, 1e6f64, 512usize);
    let lf = lo.ln();
    let span = hi.ln() - lf;
    (0..count)
        .map(|i| (lf + span * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Numerically checks the shape assumptions on a grid of positive
/// magnitudes (each checked at both signs):
/// g(0) = 0, g'(0) = 0, g(x)/x positive and monotone away from zero on each
/// sign, g(x)/x unbounded. The derivative and limit clauses are judged by
/// log-log slopes at the grid ends, which is the scale-free surrogate for
/// the analytic statements.
pub fn validate_g0(g: &Nonlinearity, grid: &[f64]) -> ValidationReport {
    let mut pts: Vec<f64> = grid.iter().copied().filter(|x| *x > 0.0).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    assert!(pts.len() >= 4, "validation grid needs at least 4 positive points");

    let mut clauses = Vec::new();

    let v0 = g.eval(0.0);
    clauses.push(ClauseReport {
        clause: "g(0) = 0",
        pass: v0 == 0.0,
        violation: (v0 != 0.0).then_some((0.0, v0)),
    });

    // g'(0) = 0 surrogate: the ratio g(x)/x must vanish at the small end,
    // i.e. decay like a positive power there. Slope of ln(ratio) in ln(x)
    // between the two smallest magnitudes, on both signs.
    let slope_small = |sgn: f64| {
        let (a, b) = (sgn * pts[0], sgn * pts[1]);
        (g.ratio(b).ln() - g.ratio(a).ln()) / (b.abs().ln() - a.abs().ln())
    };
    let s_pos = slope_small(1.0);
    let s_neg = slope_small(-1.0);
    let prime_ok = s_pos > 1e-6 && s_neg > 1e-6 && g.ratio(pts[0]).is_finite();
    clauses.push(ClauseReport {
        clause: "g'(0) = 0",
        pass: prime_ok,
        violation: (!prime_ok).then_some((pts[0], s_pos.min(s_neg))),
    });

    let mut positive = ClauseReport { clause: "g(x)/x > 0", pass: true, violation: None };
    let mut monotone = ClauseReport {
        clause: "g(x)/x monotone away from 0",
        pass: true,
        violation: None,
    };
    for sgn in [1.0f64, -1.0] {
        let mut prev: Option<(f64, f64)> = None;
        for &m in &pts {
            let x = sgn * m;
            let ratio = g.ratio(x);
            if positive.pass && !(ratio > 0.0) {
                positive.pass = false;
                positive.violation = Some((x, ratio));
            }
            if let Some((_, pr)) = prev {
                // increasing in |x| on both signs (the shape is odd-like)
                if monotone.pass && ratio < pr * (1.0 - 1e-12) {
                    monotone.pass = false;
                    monotone.violation = Some((x, ratio - pr));
                }
            }
            prev = Some((x, ratio));
        }
    }
    clauses.push(positive);
    clauses.push(monotone);

    // Unbounded ratio surrogate: positive log-log slope at the large end.
    let k = pts.len();
    let slope_large = |sgn: f64| {
        let (a, b) = (sgn * pts[k - 2], sgn * pts[k - 1]);
        (g.ratio(b).ln() - g.ratio(a).ln()) / (b.abs().ln() - a.abs().ln())
    };
    let t_pos = slope_large(1.0);
    let t_neg = slope_large(-1.0);
    let grow_ok = t_pos > 1e-6 && t_neg > 1e-6;
    clauses.push(ClauseReport {
        clause: "g(x)/x unbounded",
        pass: grow_ok,
        violation: (!grow_ok).then_some((pts[k - 1], t_pos.min(t_neg))),
    });

    ValidationReport { pass: clauses.iter().all(|c| c.pass), clauses }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::derive_exponent_set;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn transform_at_unit_radius_is_identity_on_xy() {
        let p = RadialPoint { u: 3.25, du: 0.0, r: 1.0 };
        let q = to_fowler(p, 1.7).unwrap();
        assert_eq!((q.x, q.y, q.t), (3.25, 0.0, 0.0));
    }

    #[test]
    fn transform_hand_value() {
        let e = std::f64::consts::E;
        let q = to_fowler(RadialPoint { u: 2.0, du: -1.0, r: e }, 1.0).unwrap();
        assert!(close(q.x, 2.0 * e, 1e-14));
        assert!(close(q.y, -e * e, 1e-14));
        assert!(close(q.t, 1.0, 1e-14));
    }

    #[test]
    fn transform_round_trip() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut rnd = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..200 {
            let p = RadialPoint {
                u: rnd() * 4.0 - 2.0,
                du: rnd() * 4.0 - 2.0,
                r: 1e-3 + rnd() * 10.0,
            };
            let alpha = 0.25 + rnd() * 3.0;
            let back = from_fowler(to_fowler(p, alpha).unwrap(), alpha);
            assert!(close(back.u, p.u, 1e-12));
            assert!(close(back.du, p.du, 1e-12));
            assert!(close(back.r, p.r, 1e-12));
        }
        assert!(to_fowler(RadialPoint { u: 1.0, du: 0.0, r: 0.0 }, 1.0).is_err());
    }

    #[test]
    fn zero_point_maps_to_zero_solution() {
        let r = from_fowler(PhasePoint { x: 0.0, y: 0.0, t: 2.5 }, 0.9);
        assert_eq!((r.u, r.du), (0.0, 0.0));
        assert!(close(r.r, 2.5f64.exp(), 1e-14));
    }

    fn side_n5_q4(k: f64) -> SideSystem {
        let e = derive_exponent_set(5, 0.0, 4.0, 0.0).unwrap();
        SideSystem::new(e, k, Nonlinearity::power(4.0))
    }

    #[test]
    fn field_vanishes_at_origin_and_at_the_nontrivial_equilibrium() {
        let s = side_n5_q4(1.0);
        assert_eq!(s.field(0.0, 0.0), [0.0, 0.0]);
        // P_x = ((-alpha*gamma - eta)/K)^{1/(q-2)} = sqrt(2), P = (P_x, -alpha P_x)
        let px = 2.0f64.sqrt();
        let f = s.field(px, -px);
        assert!(f[0].abs() < 1e-14 && f[1].abs() < 1e-14, "field at P+ = {f:?}");
    }

    #[test]
    fn field_hand_value() {
        let s = side_n5_q4(1.0);
        assert_eq!(s.field(1.0, 0.0), [1.0, -1.0]);
    }

    #[test]
    fn field_is_odd() {
        let s = side_n5_q4(-2.5);
        for (x, y) in [(0.3, -1.2), (2.0, 0.7), (-0.9, 0.4)] {
            let f = s.field(x, y);
            let fm = s.field(-x, -y);
            assert!(close(f[0], -fm[0], 1e-14) && close(f[1], -fm[1], 1e-14));
        }
    }

    #[test]
    fn piecewise_switches_sides_at_zero() {
        let cfg = ProblemConfig {
            n: 5,
            eta: 0.0,
            k1: -1.0,
            q1: 4.0,
            delta1: 0.0,
            k2: 1.0,
            q2: 4.0,
            delta2: 0.0,
            rho: 1.0,
        };
        let sys = PiecewiseSystem::from_config(&cfg).unwrap();
        let at = |t, fwd| sys.field_at(PhasePoint { x: 1.0, y: 0.0, t }, fwd);
        assert_eq!(at(-1.0, true), sys.side1.field(1.0, 0.0));
        assert_eq!(at(1.0, true), sys.side2.field(1.0, 0.0));
        assert_eq!(at(0.0, true), sys.side1.field(1.0, 0.0));
        assert_eq!(at(0.0, false), sys.side2.field(1.0, 0.0));
    }

    #[test]
    fn prototype_passes_shape_validation() {
        let rep = validate_g0(&Nonlinearity::power(4.0), &default_g0_grid());
        assert!(rep.pass, "{:?}", rep.clauses);
        // exponent barely above 2 must still pass (scale-free slope check)
        let rep = validate_g0(&Nonlinearity::power(2.1), &default_g0_grid());
        assert!(rep.pass, "{:?}", rep.clauses);
    }

    #[test]
    fn generalized_family_passes_shape_validation() {
        let g = Nonlinearity::from_terms(vec![
            PowerTerm { coef: 0.5, exponent: 4.0, log_weight: false },
            PowerTerm { coef: 1.5, exponent: 3.0, log_weight: false },
            PowerTerm { coef: 0.25, exponent: 2.0, log_weight: true },
        ])
        .unwrap();
        let rep = validate_g0(&g, &default_g0_grid());
        assert!(rep.pass, "{:?}", rep.clauses);
    }

    #[test]
    fn linear_shape_fails_the_derivative_clause() {
        // g(x) = x, smuggled in as exponent 2 with no log weight via direct
        // construction; from_terms would reject it, which is also checked.
        assert!(Nonlinearity::from_terms(vec![PowerTerm {
            coef: 1.0,
            exponent: 2.0,
            log_weight: false
        }])
        .is_err());
        let g = Nonlinearity { terms: vec![PowerTerm { coef: 1.0, exponent: 2.0, log_weight: false }] };
        let rep = validate_g0(&g, &default_g0_grid());
        assert!(!rep.pass);
        let prime = rep.clauses.iter().find(|c| c.clause == "g'(0) = 0").unwrap();
        assert!(!prime.pass);
        let grow = rep.clauses.iter().find(|c| c.clause == "g(x)/x unbounded").unwrap();
        assert!(!grow.pass);
    }

    #[test]
    fn primitive_matches_closed_form_for_powers() {
        let g = Nonlinearity::power(3.5);
        for x in [-2.0, -0.5, 0.0, 0.7, 3.0] {
            assert!(close(g.primitive(x), x.abs().powf(3.5) / 3.5, 1e-12));
        }
    }

    #[test]
    fn primitive_of_log_term_matches_quadrature_identity() {
        // d/dx primitive = g: central difference spot check
        let g = Nonlinearity::from_terms(vec![PowerTerm {
            coef: 1.0,
            exponent: 3.0,
            log_weight: true,
        }])
        .unwrap();
        for x in [0.3, 1.0, 2.5] {
            let h = 1e-5;
            let numeric = (g.primitive(x + h) - g.primitive(x - h)) / (2.0 * h);
            assert!(close(numeric, g.eval(x), 1e-8), "at {x}");
        }
    }

    #[test]
    fn derivative_is_analytic() {
        let g = Nonlinearity::from_terms(vec![
            PowerTerm { coef: 1.0, exponent: 4.0, log_weight: false },
            PowerTerm { coef: 0.5, exponent: 2.5, log_weight: true },
        ])
        .unwrap();
        for x in [-1.7f64, -0.2, 0.4, 2.0] {
            let h = 1e-6 * x.abs().max(1.0);
            let numeric = (g.eval(x + h) - g.eval(x - h)) / (2.0 * h);
            assert!(close(g.eval_prime(x), numeric, 1e-6), "at {x}");
        }
    }
}

#[cfg(test)]
mod properties {
    use super::*;
    use crate::params::derive_exponent_set;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn fowler_map_round_trips(
            u in -50.0f64..50.0,
            du in -50.0f64..50.0,
            r in 0.05f64..20.0,
            alpha in 0.1f64..6.0,
        ) {
            let p = RadialPoint { u, du, r };
            let q = to_fowler(p, alpha).unwrap();
            let back = from_fowler(q, alpha);
            prop_assert!((back.u - u).abs() <= 1e-12 * (1.0 + u.abs()));
            prop_assert!((back.du - du).abs() <= 1e-12 * (1.0 + du.abs()));
            prop_assert!((back.r - r).abs() <= 1e-12 * r);
        }

        #[test]
        fn pure_power_primitive_obeys_the_euler_identity(
            q in 2.05f64..9.0,
            x in -20.0f64..20.0,
        ) {
            // for g = x|x|^{q-2} the primitive is positively homogeneous:
            // x g(x) = q G(x)
            let g = Nonlinearity::power(q);
            let lhs = x * g.eval(x);
            let rhs = q * g.primitive(x);
            prop_assert!((lhs - rhs).abs() <= 1e-11 * (1.0 + lhs.abs()));
        }

        #[test]
        fn field_is_odd_and_energy_is_even(
            x in -3.0f64..3.0,
            y in -3.0f64..3.0,
            eta in -2.0f64..2.0,
            q in 2.1f64..8.0,
            k in prop_oneof![-3.0f64..-0.2, 0.2f64..3.0],
        ) {
            let e = derive_exponent_set(5, eta, q, 0.0).unwrap();
            let side = SideSystem::new(e, k, Nonlinearity::power(q));
            let [fx, fy] = side.field(x, y);
            let [gx, gy] = side.field(-x, -y);
            prop_assert!((fx + gx).abs() <= 1e-12 * (1.0 + fx.abs()));
            prop_assert!((fy + gy).abs() <= 1e-12 * (1.0 + fy.abs()));
            let ep = side.energy(x, y);
            let em = side.energy(-x, -y);
            prop_assert!((ep - em).abs() <= 1e-12 * (1.0 + ep.abs()));
        }

        #[test]
        fn energy_dissipates_at_the_trace_rate(
            x in -3.0f64..3.0,
            y in -3.0f64..3.0,
            eta in -2.0f64..2.0,
            q in 2.1f64..8.0,
            k in prop_oneof![-3.0f64..-0.2, 0.2f64..3.0],
        ) {
            // dE/dt along the flow collapses to (alpha+gamma)(alpha x + y)^2
            // whatever the reaction shape; a sign slip in the field or an
            // inconsistent g would leave a residual proportional to g
            let e = derive_exponent_set(5, eta, q, 0.0).unwrap();
            let side = SideSystem::new(e, k, Nonlinearity::power(q));
            let [fx, fy] = side.field(x, y);
            let v = e.alpha * x + y;
            let ex = e.alpha * v + (e.alpha * e.gamma + eta) * x + k * side.g.eval(x);
            let lhs = ex * fx + v * fy;
            let rhs = (e.alpha + e.gamma) * v * v;
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs().max(rhs.abs())));
        }
    }
}
