//! Adaptive integration of the planar fields with dense event detection.
//!
//! The stepper is an embedded Dormand-Prince 5(4) pair with the classical
//! fourth-order dense interpolant and a PI step-size controller. Everything
//! event-related (axis crossings, blow-up, convergence to a point, the
//! side switch, arclength frontiers) is localized by bisection on the dense
//! output, so event times are independent of the step sequence.
//!
//! The integrated state is `[x, y, s]` where `s` is the phase-plane path
//! length accumulated along the integration direction. Carrying `s` as an
//! ODE component gives every trajectory an arclength parametrization for
//! free, which the manifold and shooting layers lean on heavily.

use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fowler::{PhasePoint, PiecewiseSystem, SideSystem};

pub const DEFAULT_RTOL: f64 = 1e-10;
pub const DEFAULT_ATOL: f64 = 1e-12;
/// Norm beyond which a trajectory is declared blown up in finite time.
pub const BLOW_UP_NORM: f64 = 1e8;
/// Radius and dwell for the converged-to-point event.
pub const CONVERGE_RADIUS: f64 = 1e-9;
pub const CONVERGE_DWELL: f64 = 1.0;
/// |y| at an x = 0 crossing below which the zero counts as degenerate.
pub const ZERO_FLOOR: f64 = 1e-8;
/// Target absolute tolerance for event times (honored while representable).
pub const EVENT_TIME_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

/// One accepted state: log-time, phase coordinates, accumulated arclength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventKind {
    /// x = 0 crossing (a zero of the radial solution).
    YAxisCrossing { degenerate: bool },
    /// y = 0 crossing (a critical radius of the radial solution).
    XAxisCrossing,
    /// The trajectory passed the t = 0 plane of a piecewise system.
    Switch,
    /// Norm exceeded the blow-up threshold.
    BlowUp,
    /// Stayed within the convergence radius of the target for a full dwell.
    Converged { target: [f64; 2] },
    /// Reached the requested frontier (time horizon or arclength cap).
    Horizon,
}

impl EventKind {
    pub fn label(&self) -> &'static str {
        match self {
            EventKind::YAxisCrossing { degenerate: false } => "y-axis-crossing",
            EventKind::YAxisCrossing { degenerate: true } => "y-axis-crossing-degenerate",
            EventKind::XAxisCrossing => "x-axis-crossing",
            EventKind::Switch => "switch",
            EventKind::BlowUp => "blow-up",
            EventKind::Converged { .. } => "converged-to-point",
            EventKind::Horizon => "horizon-reached",
        }
    }

    fn terminates(&self) -> bool {
        matches!(
            self,
            EventKind::BlowUp | EventKind::Converged { .. } | EventKind::Horizon
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub s: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    pub termination: EventKind,
    pub direction: Direction,
    /// Dense evaluations at the requested `record_at` times, in order.
    pub recorded: Vec<Sample>,
}

impl Trajectory {
    pub fn first(&self) -> Sample {
        self.samples[0]
    }

    pub fn last(&self) -> Sample {
        *self.samples.last().expect("trajectory has at least the start sample")
    }

    /// Nondegenerate x = 0 crossings, the zero count of the represented
    /// radial solution on the integrated span.
    pub fn sign_changes(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::YAxisCrossing { degenerate: false }))
            .count()
    }
}

/// Options bag for [`integrate`]. Defaults reproduce the documented event
/// thresholds; most callers override only the recording switches.
#[derive(Debug, Clone)]
pub struct EventSpec {
    /// Record x = 0 crossings.
    pub record_y_axis: bool,
    /// Record y = 0 crossings.
    pub record_x_axis: bool,
    pub blow_up_norm: f64,
    pub converge_targets: Vec<[f64; 2]>,
    pub converge_radius: f64,
    pub converge_dwell: f64,
    /// Terminate once the accumulated arclength reaches this value.
    pub arclength_cap: Option<f64>,
    /// Times (monotone in the integration direction) at which to record
    /// dense-output states into `Trajectory::recorded`.
    pub record_at: Vec<f64>,
    /// Starting value of the arclength component (continuations).
    pub initial_arclength: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for EventSpec {
    fn default() -> Self {
        EventSpec {
            record_y_axis: true,
            record_x_axis: true,
            blow_up_norm: BLOW_UP_NORM,
            converge_targets: Vec::new(),
            converge_radius: CONVERGE_RADIUS,
            converge_dwell: CONVERGE_DWELL,
            arclength_cap: None,
            record_at: Vec::new(),
            initial_arclength: 0.0,
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
            max_steps: 5_000_000,
        }
    }
}

/// What to integrate: one autonomous side, or the glued system with its
/// switch plane at t = 0.
#[derive(Debug, Clone, Copy)]
pub enum FieldRef<'a> {
    Autonomous { system: &'a SideSystem, label: u8 },
    Piecewise(&'a PiecewiseSystem),
}

impl<'a> FieldRef<'a> {
    fn system(&self, side: u8) -> &'a SideSystem {
        match self {
            FieldRef::Autonomous { system, .. } => system,
            FieldRef::Piecewise(p) => p.side(side),
        }
    }

    fn has_switch(&self) -> bool {
        matches!(self, FieldRef::Piecewise(_))
    }

    /// Side governing the row at log-time t; at the switch plane the side
    /// the trajectory is arriving from wins.
    pub fn side_at(&self, t: f64, direction: Direction) -> u8 {
        match self {
            FieldRef::Autonomous { label, .. } => *label,
            FieldRef::Piecewise(_) => {
                if t < 0.0 || (t == 0.0 && direction == Direction::Forward) {
                    1
                } else {
                    2
                }
            }
        }
    }
}

// Dormand-Prince 5(4) tableau. The fields here are autonomous in the
// integration variable, so the stage abscissae never appear.
const A2: [f64; 1] = [0.2];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const A7: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
// Difference between the 5th and 4th order weights.
const ER: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
// Dense-output weights.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFE: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;
const FAC_SHRINK_MAX: f64 = 0.1;
const FAC_GROW_MAX: f64 = 5.0;

type V3 = [f64; 3];

fn axpy(y: &V3, h: f64, coeffs: &[f64], ks: &[V3]) -> V3 {
    let mut out = *y;
    for (c, k) in coeffs.iter().zip(ks) {
        if *c != 0.0 {
            for i in 0..3 {
                out[i] += h * c * k[i];
            }
        }
    }
    out
}

/// Dense interpolant of one accepted step, valid for t between t0 and
/// t0 + h.
#[derive(Debug, Clone, Copy)]
struct DenseSeg {
    t0: f64,
    h: f64,
    r: [V3; 5],
}

impl DenseSeg {
    fn build(t0: f64, h: f64, y0: &V3, y1: &V3, ks: &[V3; 7]) -> Self {
        let mut r = [[0.0; 3]; 5];
        for i in 0..3 {
            let ydiff = y1[i] - y0[i];
            let bspl = h * ks[0][i] - ydiff;
            r[0][i] = y0[i];
            r[1][i] = ydiff;
            r[2][i] = bspl;
            r[3][i] = ydiff - h * ks[6][i] - bspl;
            r[4][i] = h
                * (D1 * ks[0][i]
                    + D3 * ks[2][i]
                    + D4 * ks[3][i]
                    + D5 * ks[4][i]
                    + D6 * ks[5][i]
                    + D7 * ks[6][i]);
        }
        DenseSeg { t0, h, r }
    }

    fn eval(&self, t: f64) -> V3 {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.r[0][i]
                + th
                    * (self.r[1][i]
                        + th1 * (self.r[2][i] + th * (self.r[3][i] + th1 * self.r[4][i])));
        }
        out
    }

    fn end_t(&self) -> f64 {
        self.t0 + self.h
    }
}

/// Bisection for the earliest time in step order where `pred` flips from
/// false to true. `a` must be false, `b` true. Returns a time at which the
/// predicate is true.
fn bisect_flip(seg: &DenseSeg, mut a: f64, mut b: f64, pred: impl Fn(&V3) -> bool) -> f64 {
    loop {
        if (b - a).abs() <= EVENT_TIME_TOL {
            return b;
        }
        let m = 0.5 * (a + b);
        // interval no longer representable
        if m == a || m == b {
            return b;
        }
        if pred(&seg.eval(m)) {
            b = m;
        } else {
            a = m;
        }
    }
}

/// Bisection for a sign change of `value` between a and b (value(a) and
/// value(b) have opposite signs). Returns the midpoint estimate.
fn bisect_zero(seg: &DenseSeg, mut a: f64, mut b: f64, value: impl Fn(&V3) -> f64) -> f64 {
    let mut va = value(&seg.eval(a));
    loop {
        if (b - a).abs() <= EVENT_TIME_TOL {
            return 0.5 * (a + b);
        }
        let m = 0.5 * (a + b);
        if m == a || m == b {
            return m;
        }
        let vm = value(&seg.eval(m));
        if vm == 0.0 {
            return m;
        }
        if (va < 0.0) == (vm < 0.0) {
            a = m;
            va = vm;
        } else {
            b = m;
        }
    }
}

struct Run<'a> {
    field: FieldRef<'a>,
    spec: &'a EventSpec,
    dir: f64,
    side: u8,
    samples: Vec<Sample>,
    events: Vec<Event>,
    recorded: Vec<Sample>,
    rec_idx: usize,
    /// entry time into the convergence ball, per target
    entered: Vec<Option<f64>>,
}

impl<'a> Run<'a> {
    fn f(&self, v: &V3) -> V3 {
        let sys = self.field.system(self.side);
        let d = sys.field(v[0], v[1]);
        [d[0], d[1], self.dir * d[0].hypot(d[1])]
    }

    fn sample(t: f64, v: &V3) -> Sample {
        Sample { t, x: v[0], y: v[1], s: v[2] }
    }

    fn push_event(&mut self, t: f64, v: &V3, kind: EventKind) {
        // A crossing sitting exactly on a step boundary can be seen by both
        // adjacent steps; drop the duplicate.
        if let Some(last) = self.events.last() {
            if last.kind.label() == kind.label() && (last.t - t).abs() <= 2.0 * EVENT_TIME_TOL {
                return;
            }
        }
        self.events.push(Event { t, x: v[0], y: v[1], s: v[2], kind });
    }

    fn record_grid(&mut self, seg: &DenseSeg) {
        while self.rec_idx < self.spec.record_at.len() {
            let t = self.spec.record_at[self.rec_idx];
            let th = (t - seg.t0) / seg.h;
            if th < 0.0 {
                // requested time lies before this segment; skip it
                self.rec_idx += 1;
                continue;
            }
            if th > 1.0 {
                break;
            }
            let v = seg.eval(t);
            self.recorded.push(Self::sample(t, &v));
            self.rec_idx += 1;
        }
    }

    /// Scans one accepted step for events. Returns the terminating event if
    /// any; non-terminating events before it are recorded.
    fn scan(&mut self, seg: &DenseSeg) -> Option<Event> {
        const SUBS: usize = 8;
        let mut times = [0.0; SUBS + 1];
        let mut pts = [[0.0; 3]; SUBS + 1];
        for (i, (tt, pp)) in times.iter_mut().zip(pts.iter_mut()).enumerate() {
            let t = seg.t0 + seg.h * (i as f64 / SUBS as f64);
            *tt = t;
            *pp = seg.eval(t);
        }

        // candidates as (fraction through the step, event)
        let mut found: Vec<(f64, Event)> = Vec::new();
        let frac = |t: f64| (t - seg.t0) / seg.h;

        for w in 0..SUBS {
            let (ta, tb) = (times[w], times[w + 1]);
            let (pa, pb) = (&pts[w], &pts[w + 1]);

            if self.spec.record_y_axis {
                let (xa, xb) = (pa[0], pb[0]);
                if xa * xb < 0.0 || (xb == 0.0 && xa != 0.0) {
                    let tc = if xb == 0.0 { tb } else { bisect_zero(seg, ta, tb, |v| v[0]) };
                    let v = seg.eval(tc);
                    let kind =
                        EventKind::YAxisCrossing { degenerate: v[1].abs() <= ZERO_FLOOR };
                    found.push((frac(tc), Event { t: tc, x: v[0], y: v[1], s: v[2], kind }));
                }
            }
            if self.spec.record_x_axis {
                let (ya, yb) = (pa[1], pb[1]);
                if ya * yb < 0.0 || (yb == 0.0 && ya != 0.0) {
                    let tc = if yb == 0.0 { tb } else { bisect_zero(seg, ta, tb, |v| v[1]) };
                    let v = seg.eval(tc);
                    found.push((
                        frac(tc),
                        Event { t: tc, x: v[0], y: v[1], s: v[2], kind: EventKind::XAxisCrossing },
                    ));
                }
            }

            let big = |v: &V3| v[0].hypot(v[1]) > self.spec.blow_up_norm;
            if big(pb) && !big(pa) {
                let tc = bisect_flip(seg, ta, tb, big);
                let v = seg.eval(tc);
                found.push((
                    frac(tc),
                    Event { t: tc, x: v[0], y: v[1], s: v[2], kind: EventKind::BlowUp },
                ));
            }

            if let Some(cap) = self.spec.arclength_cap {
                let past = |v: &V3| v[2] >= cap;
                if past(pb) && !past(pa) {
                    let tc = bisect_flip(seg, ta, tb, past);
                    let v = seg.eval(tc);
                    found.push((
                        frac(tc),
                        Event { t: tc, x: v[0], y: v[1], s: v[2], kind: EventKind::Horizon },
                    ));
                }
            }
        }

        // convergence dwell bookkeeping on the same sub-grid
        for ti in 0..self.spec.converge_targets.len() {
            let target = self.spec.converge_targets[ti];
            let inside =
                |v: &V3| (v[0] - target[0]).hypot(v[1] - target[1]) <= self.spec.converge_radius;
            for w in 0..=SUBS {
                let is_in = inside(&pts[w]);
                if !is_in {
                    self.entered[ti] = None;
                } else if self.entered[ti].is_none() {
                    let entry = if w > 0 && !inside(&pts[w - 1]) {
                        bisect_flip(seg, times[w - 1], times[w], inside)
                    } else {
                        times[w]
                    };
                    self.entered[ti] = Some(entry);
                }
            }
            if let Some(te) = self.entered[ti] {
                if (seg.end_t() - te) * self.dir >= self.spec.converge_dwell {
                    let tc = te + self.dir * self.spec.converge_dwell;
                    let v = seg.eval(tc.clamp(seg.t0.min(seg.end_t()), seg.t0.max(seg.end_t())));
                    found.push((
                        frac(tc),
                        Event {
                            t: tc,
                            x: v[0],
                            y: v[1],
                            s: v[2],
                            kind: EventKind::Converged { target },
                        },
                    ));
                }
            }
        }

        found.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut terminal: Option<Event> = None;
        for (_, ev) in found {
            if ev.kind.terminates() {
                terminal = Some(ev);
                break;
            }
            self.push_event(ev.t, &[ev.x, ev.y, ev.s], ev.kind);
        }
        terminal
    }

    fn finish(mut self, terminal: Event) -> Trajectory {
        let state = [terminal.x, terminal.y, terminal.s];
        self.push_event(terminal.t, &state, terminal.kind);
        let last = self.samples.last().copied();
        if last.map(|s| s.t != terminal.t).unwrap_or(true) {
            self.samples.push(Self::sample(terminal.t, &state));
        }
        Trajectory {
            samples: self.samples,
            events: self.events,
            termination: terminal.kind,
            direction: if self.dir > 0.0 { Direction::Forward } else { Direction::Backward },
            recorded: self.recorded,
        }
    }
}

/// Integrates the field from `start` over a time span of `horizon` in the
/// given direction, or until a terminating event.
pub fn integrate(
    field: FieldRef,
    start: PhasePoint,
    direction: Direction,
    horizon: f64,
    spec: &EventSpec,
) -> Result<Trajectory> {
    if !(start.x.is_finite() && start.y.is_finite() && start.t.is_finite()) {
        return Err(Error::Domain(format!("non-finite start state {start:?}")));
    }
    if !(horizon > 0.0) {
        return Err(Error::Domain(format!("horizon must be > 0, got {horizon}")));
    }
    let dir = direction.sign();
    let t_end = start.t + dir * horizon;

    let initial_side = match field {
        FieldRef::Autonomous { label, .. } => label,
        FieldRef::Piecewise(_) => {
            if start.t < 0.0 || (start.t == 0.0 && direction == Direction::Forward) {
                1
            } else {
                2
            }
        }
    };
    // Starting exactly on the switch plane and moving right belongs to side
    // 2 (side 1 governs t <= 0 arriving from the left, and there is nothing
    // to the left of the start).
    let initial_side = if field.has_switch() && start.t == 0.0 {
        if direction == Direction::Forward {
            2
        } else {
            1
        }
    } else {
        initial_side
    };

    let mut run = Run {
        field,
        spec,
        dir,
        side: initial_side,
        samples: Vec::new(),
        events: Vec::new(),
        recorded: Vec::new(),
        rec_idx: 0,
        entered: vec![None; spec.converge_targets.len()],
    };

    let mut t = start.t;
    let mut y: V3 = [start.x, start.y, spec.initial_arclength];
    run.samples.push(Run::sample(t, &y));

    if y[0].hypot(y[1]) > spec.blow_up_norm {
        return Ok(run.finish(Event {
            t,
            x: y[0],
            y: y[1],
            s: y[2],
            kind: EventKind::BlowUp,
        }));
    }
    for (ti, target) in spec.converge_targets.iter().enumerate() {
        if (y[0] - target[0]).hypot(y[1] - target[1]) <= spec.converge_radius {
            run.entered[ti] = Some(t);
        }
    }

    let mut k1 = run.f(&y);
    let hmax = horizon;
    let mut h = initial_step(&run, t, &y, &k1, t_end, spec);
    let mut facold = 1e-4f64;
    let mut rejected = false;
    let mut steps = 0usize;

    loop {
        steps += 1;
        if steps > spec.max_steps {
            return Err(Error::BudgetExhausted(format!(
                "integration exceeded {} steps at t = {t:.6e}",
                spec.max_steps
            )));
        }
        if h.abs() <= t.abs().max(1.0) * 1e-14 {
            // Step size underflow. Against a finite-time blow-up with a very
            // steep nonlinearity the norm threshold may be unreachable in
            // representable time; a huge, still-growing state is the same
            // outcome under a weaker microscope.
            if y[0].hypot(y[1]) >= 0.01 * spec.blow_up_norm {
                return Ok(run.finish(Event {
                    t,
                    x: y[0],
                    y: y[1],
                    s: y[2],
                    kind: EventKind::BlowUp,
                }));
            }
            return Err(Error::StepFailure {
                t,
                detail: format!(
                    "step underflow with state ({:.6e}, {:.6e}), arclength {:.6e}",
                    y[0], y[1], y[2]
                ),
            });
        }

        // clamp to the nearest frontier: the switch plane, then the horizon
        let mut lands_on_switch = false;
        let mut lands_on_end = false;
        let frontier = if run.field.has_switch() && t * dir < 0.0 && t_end * dir > 0.0 {
            lands_on_switch = true;
            0.0
        } else {
            lands_on_end = true;
            t_end
        };
        if (t + h - frontier) * dir >= 0.0 {
            h = frontier - t;
        } else {
            lands_on_switch = false;
            lands_on_end = false;
        }

        // stages
        let k2 = run.f(&axpy(&y, h, &A2, &[k1]));
        let k3 = run.f(&axpy(&y, h, &A3, &[k1, k2]));
        let k4 = run.f(&axpy(&y, h, &A4, &[k1, k2, k3]));
        let k5 = run.f(&axpy(&y, h, &A5, &[k1, k2, k3, k4]));
        let k6 = run.f(&axpy(&y, h, &A6, &[k1, k2, k3, k4, k5]));
        let y1 = axpy(&y, h, &A7, &[k1, k2, k3, k4, k5, k6]);
        let k7 = run.f(&y1);
        let ks = [k1, k2, k3, k4, k5, k6, k7];

        let mut err_sq = 0.0;
        for i in 0..3 {
            let sc = spec.atol + spec.rtol * y[i].abs().max(y1[i].abs());
            let mut e = 0.0;
            for (er, k) in ER.iter().zip(&ks) {
                e += er * k[i];
            }
            e *= h;
            err_sq += (e / sc) * (e / sc);
        }
        let mut err = (err_sq / 3.0).sqrt();
        if !err.is_finite() {
            err = 1e10;
        }

        let fac11 = err.powf(EXPO1);
        if err <= 1.0 {
            let fac = (fac11 / facold.powf(BETA) / SAFE).clamp(FAC_SHRINK_MAX, FAC_GROW_MAX);
            facold = err.max(1e-4);
            let seg = DenseSeg::build(t, h, &y, &y1, &ks);
            run.record_grid(&seg);
            if let Some(terminal) = run.scan(&seg) {
                return Ok(run.finish(terminal));
            }
            t = seg.end_t();
            y = y1;
            run.samples.push(Run::sample(t, &y));
            k1 = k7;

            if lands_on_end {
                return Ok(run.finish(Event {
                    t,
                    x: y[0],
                    y: y[1],
                    s: y[2],
                    kind: EventKind::Horizon,
                }));
            }
            if lands_on_switch {
                run.push_event(t, &y, EventKind::Switch);
                run.side = if dir > 0.0 { 2 } else { 1 };
                k1 = run.f(&y);
            }

            let mut hnew = h / fac;
            if hnew.abs() > hmax {
                hnew = dir * hmax;
            }
            if rejected {
                hnew = dir * hnew.abs().min(h.abs());
            }
            rejected = false;
            h = hnew;
        } else {
            h /= (fac11 / SAFE).min(FAC_GROW_MAX);
            rejected = true;
        }
    }
}

/// Classical starting-step heuristic for the 5(4) pair.
fn initial_step(run: &Run, t: f64, y: &V3, f0: &V3, t_end: f64, spec: &EventSpec) -> f64 {
    let dir = run.dir;
    let span = (t_end - t).abs();
    let sc: Vec<f64> = y.iter().map(|v| spec.atol + spec.rtol * v.abs()).collect();
    let d0 = (y.iter().zip(&sc).map(|(v, s)| (v / s) * (v / s)).sum::<f64>() / 3.0).sqrt();
    let d1 = (f0.iter().zip(&sc).map(|(v, s)| (v / s) * (v / s)).sum::<f64>() / 3.0).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span.max(1e-300));

    let y1 = [y[0] + dir * h0 * f0[0], y[1] + dir * h0 * f0[1], y[2] + dir * h0 * f0[2]];
    let f1 = run.f(&y1);
    let d2 = (f1
        .iter()
        .zip(f0)
        .zip(&sc)
        .map(|((a, b), s)| ((a - b) / s) * ((a - b) / s))
        .sum::<f64>()
        / 3.0)
        .sqrt()
        / h0;
    let dmax = d1.max(d2);
    let h1 = if dmax <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dmax).powf(0.2)
    };
    dir * (100.0 * h0).min(h1).min(span)
}

/// Writes the trajectory as CSV: one row per accepted step, plus one row per
/// event flagged in the `event` column. Radial quantities are reconstructed
/// with the exponents of the side governing each row.
pub fn write_trajectory_csv<W: Write>(
    w: &mut W,
    field: FieldRef,
    traj: &Trajectory,
) -> io::Result<()> {
    writeln!(w, "t,r,x,y,u,du,E,side,event")?;
    let dir = traj.direction;
    let mut row = |t: f64, x: f64, y: f64, label: &str| -> io::Result<()> {
        let side_no = field.side_at(t, dir);
        let sys = field.system(side_no);
        let alpha = sys.exp.alpha;
        let r = t.exp();
        let u = x * (-alpha * t).exp();
        let du = y * (-(alpha + 1.0) * t).exp();
        let e = sys.energy(x, y);
        writeln!(
            w,
            "{t:.16e},{r:.16e},{x:.16e},{y:.16e},{u:.16e},{du:.16e},{e:.16e},{side_no},{label}"
        )
    };

    // merge samples and events in step order
    let sgn = dir.sign();
    let mut si = 0;
    let mut ei = 0;
    while si < traj.samples.len() || ei < traj.events.len() {
        let take_sample = match (traj.samples.get(si), traj.events.get(ei)) {
            (Some(s), Some(e)) => s.t * sgn <= e.t * sgn,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => break,
        };
        if take_sample {
            let s = traj.samples[si];
            row(s.t, s.x, s.y, "")?;
            si += 1;
        } else {
            let e = traj.events[ei];
            row(e.t, e.x, e.y, e.kind.label())?;
            ei += 1;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fowler::{Nonlinearity, PiecewiseSystem, SideSystem};
    use crate::params::{derive_exponent_set, ProblemConfig};

    fn saddle_side(k: f64) -> SideSystem {
        let e = derive_exponent_set(5, 0.0, 4.0, 0.0).unwrap();
        SideSystem::new(e, k, Nonlinearity::power(4.0))
    }

    fn quiet_spec() -> EventSpec {
        EventSpec { record_x_axis: false, record_y_axis: false, ..EventSpec::default() }
    }

    #[test]
    fn linear_growth_along_the_fast_eigenvector() {
        // kill the nonlinearity to leave the linear saddle
        let mut sys = saddle_side(1.0);
        sys.k = 0.0;
        let e = sys.exp;
        let v = e.fast_direction();
        let start = PhasePoint { x: 1e-3 * v[0], y: 1e-3 * v[1], t: 0.0 };
        let mut spec = quiet_spec();
        spec.record_at = (0..=100).map(|i| i as f64 * 0.1).collect();
        let traj = integrate(
            FieldRef::Autonomous { system: &sys, label: 1 },
            start,
            Direction::Forward,
            10.0,
            &spec,
        )
        .unwrap();
        let n0 = start.x.hypot(start.y);
        for s in &traj.recorded {
            let ratio = s.x.hypot(s.y) / (e.lambda_hi * s.t).exp() / n0;
            assert!((ratio - 1.0).abs() < 1e-6, "t = {}, ratio = {ratio}", s.t);
        }
    }

    #[test]
    fn hamiltonian_orbit_conserves_energy_and_recurs() {
        let e = derive_exponent_set(5, 0.0, 10.0 / 3.0, 0.0).unwrap();
        let sys = SideSystem::new(e, 1.0, Nonlinearity::power(10.0 / 3.0));
        let start = PhasePoint { x: 1.5, y: -2.25, t: 0.0 };
        let e0 = sys.energy(start.x, start.y);
        let mut spec = quiet_spec();
        spec.record_at = (0..=50_000).map(|i| i as f64 * 1e-3).collect();
        let traj = integrate(
            FieldRef::Autonomous { system: &sys, label: 1 },
            start,
            Direction::Forward,
            50.0,
            &spec,
        )
        .unwrap();
        assert_eq!(traj.termination.label(), "horizon-reached");
        let mut worst = 0.0f64;
        for s in &traj.samples {
            worst = worst.max((sys.energy(s.x, s.y) - e0).abs());
        }
        let best_return = traj
            .recorded
            .iter()
            .filter(|s| s.t > 2.0)
            .map(|s| (s.x - start.x).hypot(s.y - start.y))
            .fold(f64::INFINITY, f64::min);
        assert!(worst < 1e-8, "energy drift {worst}");
        assert!(best_return < 1e-3, "orbit does not recur: {best_return}");
    }

    #[test]
    fn negative_amplitude_blows_up_both_ways() {
        let sys = saddle_side(-1.0);
        for dirn in [Direction::Forward, Direction::Backward] {
            let traj = integrate(
                FieldRef::Autonomous { system: &sys, label: 1 },
                PhasePoint { x: 1.0, y: 0.0, t: 0.0 },
                dirn,
                1e4,
                &quiet_spec(),
            )
            .unwrap();
            assert_eq!(traj.termination.label(), "blow-up", "{dirn:?}");
            let last = traj.last();
            assert!(last.x.hypot(last.y) > BLOW_UP_NORM);
            assert!(last.t.abs() < 1e3, "blow-up should be at finite time");
        }
    }

    #[test]
    fn time_reversal_returns_to_start() {
        let sys = saddle_side(1.0);
        let start = PhasePoint { x: 0.8, y: 0.3, t: 0.0 };
        let fwd = integrate(
            FieldRef::Autonomous { system: &sys, label: 1 },
            start,
            Direction::Forward,
            5.0,
            &quiet_spec(),
        )
        .unwrap();
        let end = fwd.last();
        let back = integrate(
            FieldRef::Autonomous { system: &sys, label: 1 },
            PhasePoint { x: end.x, y: end.y, t: end.t },
            Direction::Backward,
            5.0,
            &quiet_spec(),
        )
        .unwrap();
        let home = back.last();
        let err = (home.x - start.x).hypot(home.y - start.y);
        let scale = start.x.hypot(start.y);
        assert!(err / scale < 1e-8, "round trip error {err}");
    }

    #[test]
    fn energy_dissipation_law_along_a_trajectory() {
        // l = 4 > 2^*: alpha + gamma = -1, E must decrease per (d/dt)E =
        // (alpha+gamma)(alpha x + y)^2; verified against a high-order finite
        // difference of E on a uniform dense grid.
        let sys = saddle_side(1.0);
        let dt = 5e-4;
        let mut spec = quiet_spec();
        spec.record_at = (0..=8000).map(|i| i as f64 * dt).collect();
        let traj = integrate(
            FieldRef::Autonomous { system: &sys, label: 1 },
            PhasePoint { x: 0.9, y: 0.1, t: 0.0 },
            Direction::Forward,
            4.0 + 16.0 * dt,
            &spec,
        )
        .unwrap();
        let e: Vec<f64> = traj.recorded.iter().map(|s| sys.energy(s.x, s.y)).collect();
        let ag = sys.exp.alpha + sys.exp.gamma;
        for i in 2..traj.recorded.len() - 2 {
            let de = (e[i - 2] - 8.0 * e[i - 1] + 8.0 * e[i + 1] - e[i + 2]) / (12.0 * dt);
            let s = &traj.recorded[i];
            let w = sys.exp.alpha * s.x + s.y;
            let expected = ag * w * w;
            // the relative comparison only means something away from the
            // zeros of the dissipation rate
            if expected.abs() > 1e-3 {
                assert!(
                    ((de - expected) / expected).abs() < 1e-5,
                    "at t = {}: {de} vs {expected}",
                    s.t
                );
            }
        }
    }

    #[test]
    fn converges_to_the_stable_focus() {
        let sys = saddle_side(1.0);
        let px = 2.0f64.sqrt();
        let mut spec = quiet_spec();
        spec.converge_targets = vec![[px, -px]];
        let traj = integrate(
            FieldRef::Autonomous { system: &sys, label: 1 },
            PhasePoint { x: 1.3, y: -1.5, t: 0.0 },
            Direction::Forward,
            100.0,
            &spec,
        )
        .unwrap();
        match traj.termination {
            EventKind::Converged { target } => assert_eq!(target, [px, -px]),
            other => panic!("expected convergence, got {other:?}"),
        }
        let last = traj.last();
        assert!((last.x - px).hypot(last.y + px) <= 2.0 * CONVERGE_RADIUS);
    }

    #[test]
    fn switch_plane_is_honored_exactly() {
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
        let traj = integrate(
            FieldRef::Piecewise(&sys),
            PhasePoint { x: 0.5, y: 0.1, t: -1.0 },
            Direction::Forward,
            2.0,
            &quiet_spec(),
        )
        .unwrap();
        let switch: Vec<_> = traj
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Switch))
            .collect();
        assert_eq!(switch.len(), 1);
        assert_eq!(switch[0].t, 0.0);
        // a sample lands exactly on the plane
        assert!(traj.samples.iter().any(|s| s.t == 0.0));
    }

    #[test]
    fn axis_crossings_are_sign_changes_in_time_order() {
        // unstable node side: spiral for K > 0 and l < serrin, crosses both
        // axes repeatedly
        let e = derive_exponent_set(5, 0.0, 2.5, 0.0).unwrap();
        let sys = SideSystem::new(e, 1.0, Nonlinearity::power(2.5));
        let traj = integrate(
            FieldRef::Autonomous { system: &sys, label: 1 },
            PhasePoint { x: 1.0, y: 0.5, t: 0.0 },
            Direction::Forward,
            30.0,
            &EventSpec::default(),
        )
        .unwrap();
        let crossings: Vec<_> = traj
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::YAxisCrossing { .. }))
            .collect();
        assert!(crossings.len() >= 4, "expected several crossings, got {}", crossings.len());
        for pair in traj.events.windows(2) {
            assert!(pair[0].t <= pair[1].t, "events out of order");
        }
        for c in &crossings {
            // the event time is localized to EVENT_TIME_TOL, so the residual
            // in x scales with the speed at the crossing
            assert!(
                c.x.abs() <= 1e-8 * (1.0 + c.y.abs()),
                "crossing not on the axis: x = {}, y = {}",
                c.x,
                c.y
            );
            assert!(c.y.abs() > ZERO_FLOOR, "crossing should be nondegenerate here");
        }
    }

    #[test]
    fn arclength_cap_terminates_with_horizon_kind() {
        let sys = saddle_side(1.0);
        let mut spec = quiet_spec();
        spec.arclength_cap = Some(2.0);
        let traj = integrate(
            FieldRef::Autonomous { system: &sys, label: 1 },
            PhasePoint { x: 0.9, y: 0.1, t: 0.0 },
            Direction::Forward,
            100.0,
            &spec,
        )
        .unwrap();
        assert_eq!(traj.termination.label(), "horizon-reached");
        let last = traj.last();
        assert!((last.s - 2.0).abs() < 1e-6, "stopped at arclength {}", last.s);
    }

    #[test]
    fn csv_emitter_produces_the_documented_columns() {
        let sys = saddle_side(1.0);
        let traj = integrate(
            FieldRef::Autonomous { system: &sys, label: 1 },
            PhasePoint { x: 0.5, y: 0.0, t: 0.0 },
            Direction::Forward,
            1.0,
            &EventSpec::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, FieldRef::Autonomous { system: &sys, label: 1 }, &traj)
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,r,x,y,u,du,E,side,event");
        let first = lines.next().unwrap();
        assert_eq!(first.split(',').count(), 9);
        assert!(text.lines().count() >= traj.samples.len());
    }
}

#[cfg(test)]
mod properties {
    use super::*;
    use crate::fowler::{Nonlinearity, SideSystem};
    use crate::params::derive_exponent_set;
    use proptest::prelude::*;

    fn quiet_spec() -> EventSpec {
        EventSpec {
            record_y_axis: false,
            record_x_axis: false,
            converge_targets: Vec::new(),
            ..EventSpec::default()
        }
    }

    fn side(eta: f64, q: f64, k: f64) -> SideSystem {
        let e = derive_exponent_set(5, eta, q, 0.0).unwrap();
        SideSystem::new(e, k, Nonlinearity::power(q))
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

        #[test]
        fn reversing_time_returns_to_the_start(
            x in -0.6f64..0.6,
            y in -0.6f64..0.6,
            eta in -1.5f64..1.5,
            q in 2.5f64..6.0,
            k in prop_oneof![-2.0f64..-0.3, 0.3f64..2.0],
        ) {
            let sys = side(eta, q, k);
            let field = FieldRef::Autonomous { system: &sys, label: 1 };
            let start = PhasePoint { x, y, t: 0.0 };
            let spec = quiet_spec();
            let fwd = integrate(field, start, Direction::Forward, 1.0, &spec).unwrap();
            prop_assume!(fwd.termination == EventKind::Horizon);
            for w in fwd.samples.windows(2) {
                prop_assert!(w[1].t > w[0].t);
                prop_assert!(w[1].s >= w[0].s);
            }
            let end = *fwd.samples.last().unwrap();
            let back = integrate(
                field,
                PhasePoint { x: end.x, y: end.y, t: end.t },
                Direction::Backward,
                end.t - start.t,
                &spec,
            )
            .unwrap();
            prop_assume!(back.termination == EventKind::Horizon);
            let home = *back.samples.last().unwrap();
            let scale = 1.0 + x.abs() + y.abs();
            prop_assert!((home.x - x).abs() <= 1e-6 * scale, "x: {} vs {}", home.x, x);
            prop_assert!((home.y - y).abs() <= 1e-6 * scale, "y: {} vs {}", home.y, y);
        }

        #[test]
        fn sampled_energy_never_climbs_when_the_trace_is_negative(
            x in -0.8f64..0.8,
            y in -0.8f64..0.8,
            q in 3.5f64..6.0,
            k in 0.3f64..2.0,
        ) {
            // q > 10/3 keeps alpha + gamma < 0 here, so energy is a
            // Lyapunov function and accepted samples must descend
            let sys = side(0.0, q, k);
            let field = FieldRef::Autonomous { system: &sys, label: 1 };
            let spec = quiet_spec();
            let traj = integrate(
                field,
                PhasePoint { x, y, t: 0.0 },
                Direction::Forward,
                2.0,
                &spec,
            )
            .unwrap();
            prop_assume!(traj.termination == EventKind::Horizon);
            let mut prev = sys.energy(x, y);
            for s in &traj.samples[1..] {
                let e = sys.energy(s.x, s.y);
                prop_assert!(e <= prev + 1e-8 * (1.0 + prev.abs()), "{e} > {prev}");
                prev = e;
            }
        }
    }
}
