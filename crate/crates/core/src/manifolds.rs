//! Equilibria and invariant manifolds of one autonomous side.
//!
//! The origin always carries a one-dimensional invariant branch tangent to an
//! eigenvector of the linearization whenever the corresponding eigenvalue is
//! nonzero (strongly unstable along (1, -kappa), stable along
//! (1, -(n-2-kappa))). At the two degenerate values of l one eigenvalue
//! vanishes and the branch survives only as a center manifold, and only for
//! K < 0; those traces are flagged and validated against the algebraic decay
//! rate instead of an exponential one.

use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fowler::{Nonlinearity, PhasePoint, SideSystem};
use crate::integrate::{integrate, Direction, EventKind, EventSpec, FieldRef, Sample};
use crate::params::Regime;

pub const DEFAULT_ARCLENGTH_BUDGET: f64 = 1e3;
pub const DEFAULT_MAX_POINTS: usize = 100_000;
pub const DEFAULT_TRACE_HORIZON: f64 = 2e4;
/// Seed label scale for hyperbolic branches. Large enough that the stepper's
/// absolute tolerance cannot pollute the label (the injected relative error
/// is about atol divided by the seed size), small enough that the expansion
/// seeding below stays accurate.
pub const SEED_SCALE: f64 = 1e-3;
/// Smaller seed for center-manifold branches, where there is no spectral gap
/// to forgive a sloppy start.
pub const CENTER_SEED: f64 = 1e-9;
/// Ceiling for the absolute tolerance on center traces.
pub const DEFAULT_CENTER_ATOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquilibriumKind {
    Origin,
    PPlus,
    PMinus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    NodeUnstable,
    FocusUnstable,
    Saddle,
    Center,
    CenterUnstable,
    CenterStable,
    FocusStable,
    NodeStable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Equilibrium {
    pub location: [f64; 2],
    pub kind: EquilibriumKind,
    pub stability: Stability,
    pub energy: f64,
}

/// Solves g(x)/x = target for x > 0. The ratio is continuous, vanishes at 0,
/// is strictly increasing and unbounded, so the root exists and is unique.
fn solve_ratio(g: &Nonlinearity, target: f64) -> f64 {
    let mut hi = 1.0f64;
    while g.ratio(hi) < target && hi < 1e160 {
        hi *= 2.0;
    }
    let mut lo = hi.min(1.0);
    while g.ratio(lo) > target && lo > 1e-160 {
        lo *= 0.5;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g.ratio(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    // a few Newton steps to land on the root to machine precision
    for _ in 0..3 {
        let f = g.ratio(x) - target;
        let fp = (g.eval_prime(x) * x - g.eval(x)) / (x * x);
        if fp.is_finite() && fp != 0.0 {
            let xn = x - f / fp;
            if xn.is_finite() && xn > 0.0 {
                x = xn;
            }
        }
    }
    x
}

fn classify(sys: &SideSystem, x: f64) -> Stability {
    let j = sys.jacobian(x);
    let tr = j[0][0] + j[1][1];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    if det < 0.0 {
        return Stability::Saddle;
    }
    if sys.exp.hamiltonian || det == 0.0 {
        return Stability::Center;
    }
    let focus = tr * tr - 4.0 * det < 0.0;
    match (focus, tr > 0.0) {
        (true, true) => Stability::FocusUnstable,
        (true, false) => Stability::FocusStable,
        (false, true) => Stability::NodeUnstable,
        (false, false) => Stability::NodeStable,
    }
}

/// All equilibria of one side: the origin, plus the symmetric pair when the
/// amplitude sign and the regime allow it.
pub fn equilibria(sys: &SideSystem) -> Vec<Equilibrium> {
    let e = &sys.exp;
    let origin_stability = match e.regime {
        Regime::NodeUnstable => Stability::NodeUnstable,
        Regime::CenterUnstable => Stability::CenterUnstable,
        Regime::Saddle => Stability::Saddle,
        Regime::CenterStable => Stability::CenterStable,
        Regime::NodeStable => Stability::NodeStable,
    };
    let mut out = vec![Equilibrium {
        location: [0.0, 0.0],
        kind: EquilibriumKind::Origin,
        stability: origin_stability,
        energy: 0.0,
    }];

    let exists = if sys.k > 0.0 {
        e.regime == Regime::Saddle
    } else if sys.k < 0.0 {
        matches!(e.regime, Regime::NodeUnstable | Regime::NodeStable)
    } else {
        false
    };
    if !exists {
        return out;
    }

    let target = -(e.alpha * e.gamma + e.eta) / sys.k;
    debug_assert!(target > 0.0);
    let px = solve_ratio(&sys.g, target);
    let py = -e.alpha * px;
    let stability = classify(sys, px);
    out.push(Equilibrium {
        location: [px, py],
        kind: EquilibriumKind::PPlus,
        stability,
        energy: sys.energy(px, py),
    });
    out.push(Equilibrium {
        location: [-px, -py],
        kind: EquilibriumKind::PMinus,
        stability,
        energy: sys.energy(-px, -py),
    });
    out
}

/// Public alias so callers do not have to reach through `SideSystem`.
pub fn energy(sys: &SideSystem, p: [f64; 2]) -> f64 {
    sys.energy(p[0], p[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RayFlow {
    /// The field crosses the ray {y = -m x, x > 0} toward y > -m x everywhere.
    Outward,
    /// Toward y < -m x everywhere.
    Inward,
    /// Inward below the threshold abscissa, tangent at it, outward above.
    Threshold(f64),
}

/// Transverse drift across the ray {y = -m x} at abscissa x, the derivative
/// of y + m x along the flow restricted to the ray.
pub fn transverse_drift(sys: &SideSystem, m: f64, x: f64) -> f64 {
    let e = &sys.exp;
    let a = m * m - (e.n as f64 - 2.0) * m + e.eta;
    -x * a - sys.k * sys.g.eval(x)
}

/// Sign analysis of the flow across the ray {y = -m x, x > 0}.
pub fn ray_flow(sys: &SideSystem, m: f64) -> Result<RayFlow> {
    if !m.is_finite() {
        return Err(Error::Domain(format!("ray slope parameter must be finite, got {m}")));
    }
    if sys.k == 0.0 {
        return Err(Error::Domain("ray analysis needs a nonzero amplitude".into()));
    }
    let e = &sys.exp;
    let a = m * m - (e.n as f64 - 2.0) * m + e.eta;
    if a <= 0.0 {
        return if sys.k < 0.0 {
            Ok(RayFlow::Outward)
        } else if a == 0.0 {
            Ok(RayFlow::Inward)
        } else {
            Err(Error::Domain(format!(
                "slope {m} lies strictly between the two decay rates; with a \
                 positive amplitude both terms of the drift compete and no \
                 single-sign statement holds"
            )))
        };
    }
    if sys.k < 0.0 {
        Ok(RayFlow::Threshold(solve_ratio(&sys.g, a / -sys.k)))
    } else {
        Ok(RayFlow::Inward)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchTag {
    UnstablePlus,
    UnstableMinus,
    StablePlus,
    StableMinus,
}

impl BranchTag {
    pub fn is_unstable(self) -> bool {
        matches!(self, BranchTag::UnstablePlus | BranchTag::UnstableMinus)
    }

    pub fn sign(self) -> f64 {
        match self {
            BranchTag::UnstablePlus | BranchTag::StablePlus => 1.0,
            BranchTag::UnstableMinus | BranchTag::StableMinus => -1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            BranchTag::UnstablePlus => "unstable+",
            BranchTag::UnstableMinus => "unstable-",
            BranchTag::StablePlus => "stable+",
            BranchTag::StableMinus => "stable-",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchPoint {
    /// Arclength from the origin along the branch (the seed sits at the
    /// seed offset, not at zero).
    pub s: f64,
    /// Integration time at which the trace passed this point.
    pub t: f64,
    pub x: f64,
    pub y: f64,
    /// Unwound polar angle.
    pub theta: f64,
    pub energy: f64,
}

/// One crossing of the y-axis along a branch, in trace order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossingMarker {
    pub j: usize,
    pub s: f64,
    pub t: f64,
    pub y: f64,
    pub theta: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifoldBranch {
    pub tag: BranchTag,
    pub points: Vec<BranchPoint>,
    pub crossings: Vec<CrossingMarker>,
    pub termination: EventKind,
    /// Leading expansion coefficient the trace was seeded at (center
    /// branches: phase-plane distance of the seed from the origin).
    pub seed_offset: f64,
    /// Slope of the first trace segment; converges to the eigenvector slope
    /// as the seed offset shrinks.
    pub seed_slope: f64,
    /// Largest phase-plane distance between this trace and a half-seed
    /// retrace, compared at matched positions. None when refinement is off.
    pub seed_deviation: Option<f64>,
    /// Branch lives on a center manifold (no exponential rate).
    pub center: bool,
    /// Measured-to-predicted ratio of the flow speed along a center branch.
    /// The leading-order reduction gives dx/dt = K g(x)/(alpha+gamma) on the
    /// center manifold, the differential form of the algebraic decay law, so
    /// a ratio near 1 validates the decay rate without waiting out the
    /// crawl (the time scale from a seed at offset eps is eps^(2-q)).
    pub center_flow_match: Option<f64>,
    /// Eigenvalue converting trace time into the solution label: label(t) =
    /// seed_label * exp(rate * t). Zero on center branches.
    pub label_rate: f64,
    pub seed_label: f64,
}

impl ManifoldBranch {
    /// Linear interpolation by arclength, clamped to the traced range.
    pub fn point_at(&self, s: f64) -> BranchPoint {
        let pts = &self.points;
        if s <= pts[0].s {
            return pts[0];
        }
        if s >= pts[pts.len() - 1].s {
            return pts[pts.len() - 1];
        }
        let i = pts.partition_point(|p| p.s < s);
        let (a, b) = (&pts[i - 1], &pts[i]);
        let w = (s - a.s) / (b.s - a.s);
        BranchPoint {
            s,
            t: a.t + w * (b.t - a.t),
            x: a.x + w * (b.x - a.x),
            y: a.y + w * (b.y - a.y),
            theta: a.theta + w * (b.theta - a.theta),
            energy: a.energy + w * (b.energy - a.energy),
        }
    }

    /// Label (d for unstable branches, L for stable ones) of the point the
    /// trace passes at time t.
    pub fn label_at(&self, t: f64) -> f64 {
        self.seed_label * (self.label_rate * t).exp()
    }

    pub fn total_arclength(&self) -> f64 {
        self.points.last().map(|p| p.s).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct TraceOptions {
    pub max_arclength: f64,
    pub max_points: usize,
    pub horizon: f64,
    /// Override the automatic seed offset.
    pub seed_offset: Option<f64>,
    /// Retrace with half the seed to measure seed sensitivity.
    pub refine: bool,
    pub blow_up_norm: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions {
            max_arclength: DEFAULT_ARCLENGTH_BUDGET,
            max_points: DEFAULT_MAX_POINTS,
            horizon: DEFAULT_TRACE_HORIZON,
            seed_offset: None,
            refine: true,
            blow_up_norm: crate::integrate::BLOW_UP_NORM,
        }
    }
}

struct BranchPlan {
    center: bool,
    rate: f64,
    direction: Direction,
    eigvec: [f64; 2],
}

fn plan_branch(sys: &SideSystem, tag: BranchTag) -> Result<BranchPlan> {
    let e = &sys.exp;
    let negative = sys.k < 0.0;
    if tag.is_unstable() {
        match e.regime {
            Regime::NodeUnstable | Regime::CenterUnstable | Regime::Saddle => Ok(BranchPlan {
                center: false,
                rate: e.lambda_hi,
                direction: Direction::Forward,
                eigvec: e.fast_direction(),
            }),
            Regime::CenterStable if negative => Ok(BranchPlan {
                center: true,
                rate: 0.0,
                direction: Direction::Forward,
                eigvec: e.fast_direction(),
            }),
            _ => Err(Error::Regime(format!(
                "no unstable branch at l = {} in regime {:?} with K = {}",
                e.l, e.regime, sys.k
            ))),
        }
    } else {
        match e.regime {
            Regime::Saddle | Regime::CenterStable | Regime::NodeStable => Ok(BranchPlan {
                center: false,
                rate: e.lambda_lo,
                direction: Direction::Backward,
                eigvec: e.slow_direction(),
            }),
            Regime::CenterUnstable if negative => Ok(BranchPlan {
                center: true,
                rate: 0.0,
                direction: Direction::Backward,
                eigvec: e.slow_direction(),
            }),
            _ => Err(Error::Regime(format!(
                "no stable branch at l = {} in regime {:?} with K = {}",
                e.l, e.regime, sys.k
            ))),
        }
    }
}

fn linearization_scale(sys: &SideSystem) -> f64 {
    let j = sys.jacobian(0.0);
    (j[0][0] * j[0][0] + j[0][1] * j[0][1] + j[1][0] * j[1][0] + j[1][1] * j[1][1]).sqrt()
}

fn run_trace(
    sys: &SideSystem,
    seed: [f64; 2],
    eps: f64,
    plan: &BranchPlan,
    opts: &TraceOptions,
    record_at: Vec<f64>,
) -> Result<crate::integrate::Trajectory> {
    let targets: Vec<[f64; 2]> = equilibria(sys).iter().map(|e| e.location).collect();
    let mut spec = EventSpec {
        record_y_axis: true,
        record_x_axis: true,
        blow_up_norm: opts.blow_up_norm,
        converge_targets: targets,
        arclength_cap: Some(opts.max_arclength),
        record_at,
        initial_arclength: eps,
        ..EventSpec::default()
    };
    if plan.center {
        // the drift along the center manifold near the seed is of size
        // |K| g(eps) / |alpha+gamma|, far below the default absolute
        // tolerance; tighten it or the stepper is free to wander across the
        // signal being traced
        let e = &sys.exp;
        let drift = (sys.k * sys.g.eval(eps) / (e.alpha + e.gamma)).abs();
        spec.atol = (drift * 1e-4).clamp(1e-300, DEFAULT_CENTER_ATOL);
    }
    integrate(
        FieldRef::Autonomous { system: sys, label: 1 },
        PhasePoint { x: seed[0], y: seed[1], t: 0.0 },
        plan.direction,
        opts.horizon,
        &spec,
    )
}

fn unwound_angles(samples: &[Sample]) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len());
    let mut theta = samples[0].y.atan2(samples[0].x);
    out.push(theta);
    for w in samples.windows(2) {
        let (a, b) = (w[0], w[1]);
        let cross = a.x * b.y - a.y * b.x;
        let dot = a.x * b.x + a.y * b.y;
        theta += cross.atan2(dot);
        out.push(theta);
    }
    out
}

/// Median of measured x-velocity over its center-manifold prediction
/// K g(x)/(alpha+gamma), skipping the transverse settling transient.
fn center_flow_ratio(sys: &SideSystem, samples: &[Sample]) -> Option<f64> {
    let e = &sys.exp;
    let denom = e.alpha + e.gamma;
    let mut ratios: Vec<f64> = samples
        .iter()
        .skip(samples.len() / 10 + 1)
        .filter_map(|p| {
            let measured = e.alpha * p.x + p.y;
            let predicted = sys.k * sys.g.eval(p.x) / denom;
            (predicted.abs() > 1e-300).then(|| measured / predicted)
        })
        .collect();
    if ratios.len() < 4 {
        return None;
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(ratios[ratios.len() / 2])
}

/// Point on a hyperbolic branch whose leading coefficient along the
/// eigendirection of `rate` is exactly `c`.
///
/// Eliminating y through y = x' - alpha x turns the system into
/// x'' - (alpha+gamma) x' + (alpha gamma + eta) x = -K g(x). For a pure
/// power g, substituting x = c e^{rate t} and iterating the variation of
/// constants gives correction terms at the rates (q-1)*rate and
/// (2q-3)*rate with closed-form coefficients. Seeding from this three-term
/// state instead of the tangent line removes the label bias of a finite
/// seed offset: the leftover error is O(c^(3(q-2))) relative, against
/// O(c^(q-2)) for the bare eigenline. Resonant rates (where the
/// characteristic polynomial vanishes at a correction rate) and
/// non-power reactions fall back to however many terms are available.
pub fn expansion_state(sys: &SideSystem, rate: f64, c: f64) -> [f64; 2] {
    let e = &sys.exp;
    let trace = e.alpha + e.gamma;
    let det = e.alpha * e.gamma + e.eta;
    let char_poly = |m: f64| m * m - trace * m + det;
    let scale = 1.0 + trace.abs() + det.abs();
    let mut x = c;
    let mut y = (rate - e.alpha) * c;
    let Some(q) = sys.g.as_pure_power() else {
        return [x, y];
    };
    let m2 = (q - 1.0) * rate;
    if char_poly(m2).abs() <= 1e-9 * scale {
        return [x, y];
    }
    let b = -sys.k * c * c.abs().powf(q - 2.0) / char_poly(m2);
    x += b;
    y += (m2 - e.alpha) * b;
    let m3 = (2.0 * q - 3.0) * rate;
    if char_poly(m3).abs() > 1e-9 * scale {
        let cc = sys.k * sys.k * (q - 1.0) * c.abs().powf(2.0 * (q - 2.0)) * c
            / (char_poly(m2) * char_poly(m3));
        x += cc;
        y += (m3 - e.alpha) * cc;
    }
    [x, y]
}

/// Traces one invariant branch of the origin.
pub fn trace_manifold(sys: &SideSystem, tag: BranchTag, opts: &TraceOptions) -> Result<ManifoldBranch> {
    let plan = plan_branch(sys, tag)?;
    let eps = opts.seed_offset.unwrap_or_else(|| {
        if plan.center {
            CENTER_SEED
        } else {
            SEED_SCALE * linearization_scale(sys).max(1.0)
        }
    });
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Domain(format!("seed offset must be positive, got {eps}")));
    }
    let norm = plan.eigvec[0].hypot(plan.eigvec[1]);
    let unit = [plan.eigvec[0] / norm, plan.eigvec[1] / norm];
    let sgn = tag.sign();
    let (seed, seed_label) = if plan.center {
        let s = [sgn * eps * unit[0], sgn * eps * unit[1]];
        (s, s[0])
    } else {
        let c = sgn * eps;
        (expansion_state(sys, plan.rate, c), c)
    };

    let s0 = seed[0].hypot(seed[1]);
    let exploratory = run_trace(sys, seed, s0, &plan, opts, Vec::new())?;
    let t_span = exploratory.last().t;

    // probe times for the half-seed comparison, shifted by the time the
    // smaller seed needs to flow out to the full one
    let (probes, probes_half) = if opts.refine && t_span.abs() > 1e-6 {
        let shift = if plan.center { 0.0 } else { 2.0f64.ln() / plan.rate };
        let ps: Vec<f64> = (1..=5).map(|i| t_span * (0.15 * i as f64 + 0.1)).collect();
        let ph: Vec<f64> = ps.iter().map(|t| t + shift).collect();
        (ps, ph)
    } else {
        (Vec::new(), Vec::new())
    };

    let traj = if probes.is_empty() {
        exploratory
    } else {
        run_trace(sys, seed, s0, &plan, opts, probes)?
    };

    let seed_deviation = if probes_half.is_empty() {
        None
    } else {
        let half_seed = if plan.center {
            [0.5 * seed[0], 0.5 * seed[1]]
        } else {
            expansion_state(sys, plan.rate, 0.5 * seed_label)
        };
        let half = run_trace(sys, half_seed, half_seed[0].hypot(half_seed[1]), &plan, opts, probes_half)?;
        let mut worst = 0.0f64;
        for (a, b) in traj.recorded.iter().zip(&half.recorded) {
            worst = worst.max((a.x - b.x).hypot(a.y - b.y));
        }
        Some(worst)
    };

    let thetas = unwound_angles(&traj.samples);
    let seed_slope = {
        let p0 = traj.samples[0];
        let p1 = traj.samples.iter().find(|p| p.x != p0.x || p.y != p0.y);
        match p1 {
            Some(p1) => (p1.y - p0.y) / (p1.x - p0.x),
            None => unit[1] / unit[0],
        }
    };

    let mut crossings = Vec::new();
    for ev in &traj.events {
        if let EventKind::YAxisCrossing { degenerate: false } = ev.kind {
            // theta at the crossing by interpolation between samples
            let i = traj.samples.partition_point(|p| (p.s) < ev.s).min(traj.samples.len() - 1);
            let theta = if i == 0 {
                thetas[0]
            } else {
                let (a, b) = (&traj.samples[i - 1], &traj.samples[i]);
                let w = if b.s > a.s { (ev.s - a.s) / (b.s - a.s) } else { 0.0 };
                thetas[i - 1] + w * (thetas[i] - thetas[i - 1])
            };
            crossings.push(CrossingMarker {
                j: crossings.len(),
                s: ev.s,
                t: ev.t,
                y: ev.y,
                theta,
                energy: sys.energy(ev.x, ev.y),
            });
        }
    }

    let n = traj.samples.len();
    let stride = n.div_ceil(opts.max_points).max(1);
    let mut points = Vec::with_capacity(n.min(opts.max_points) + 1);
    let mut push = |i: usize| {
        let p = traj.samples[i];
        points.push(BranchPoint {
            s: p.s,
            t: p.t,
            x: p.x,
            y: p.y,
            theta: thetas[i],
            energy: sys.energy(p.x, p.y),
        });
    };
    let mut i = 0;
    while i < n {
        push(i);
        i += stride;
    }
    if (n - 1) % stride != 0 {
        push(n - 1);
    }

    let center_flow_match =
        if plan.center { center_flow_ratio(sys, &traj.samples) } else { None };

    Ok(ManifoldBranch {
        tag,
        points,
        crossings,
        termination: traj.termination,
        seed_offset: eps,
        seed_slope,
        seed_deviation,
        center: plan.center,
        center_flow_match,
        label_rate: plan.rate,
        seed_label,
    })
}

/// CSV emitter for a branch: points plus crossing-marker rows.
pub fn write_branch_csv<W: Write>(w: &mut W, branch: &ManifoldBranch) -> io::Result<()> {
    writeln!(w, "arclength,x,y,theta,E,marker")?;
    let mut mi = 0;
    for p in &branch.points {
        while mi < branch.crossings.len() && branch.crossings[mi].s <= p.s {
            let m = &branch.crossings[mi];
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},S{}",
                m.s, 0.0, m.y, m.theta, m.energy, m.j
            )?;
            mi += 1;
        }
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},",
            p.s, p.x, p.y, p.theta, p.energy
        )?;
    }
    Ok(())
}
