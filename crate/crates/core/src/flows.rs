//! Evolution flows on positive conformal factors.
//!
//! * `Yamabe`: `du/dt = -u^{-4/(n-2)} ((-k/-r) L u - K u^{(n+2)/(n-2)})`, which lowers `J`.
//! * `Exit`: `du/dt = (K - kbar) u` with `kbar = integral K u^{2n/(n-2)} / integral u^{2n/(n-2)}`;
//!   conserves the volume and raises `k`.
//! * `Inverse`: the exit flow run backwards.
//!
//! All flows are integrated with classical RK4. Level crossings are located
//! by bisecting the last step in time.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::conformal::{compute_rk, curvature_integral, energy_from_rk, grad_j, normalize, pow, CurvatureField, Exponents, X_MARGIN};
use crate::error::{LabError, Result};
use crate::grid::ScalarField;

/// Positivity halvings allowed per step.
pub const MAX_HALVINGS: usize = 20;
/// Smallest admissible step.
pub const DT_MIN: f64 = 1e-12;
/// Width of the time bracket when locating a crossing.
pub const CROSSING_TOL: f64 = 1e-8;
/// Steps between gradient-norm checks.
const GRADIENT_EVERY: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    Yamabe,
    Exit,
    Inverse,
}

/// Condition that ends a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum StopRule {
    /// `k >= -gamma`.
    KLevel(f64),
    /// `k >= 0`.
    KZero,
    /// `J <= level` (inside X).
    JLevel(f64),
    /// `||grad J||_{W^{-1,2}} <= tol`.
    Gradient(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TerminalEvent {
    HitKLevel { gamma: f64 },
    HitKZero,
    HitJLevel { level: f64 },
    TimeLimit,
    Converged,
    Failed { reason: String },
}

impl TerminalEvent {
    pub fn tag(&self) -> &'static str {
        match self {
            TerminalEvent::HitKLevel { .. } => "hit_k_level",
            TerminalEvent::HitKZero => "hit_k_zero",
            TerminalEvent::HitJLevel { .. } => "hit_j_level",
            TerminalEvent::TimeLimit => "time_limit",
            TerminalEvent::Converged => "converged",
            TerminalEvent::Failed { .. } => "failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowSample {
    pub t: f64,
    pub r: f64,
    pub k: f64,
    /// `J`, absent outside X.
    pub j: Option<f64>,
    pub min_u: f64,
    pub max_u: f64,
    pub volume: f64,
}

impl FlowSample {
    pub fn of(t: f64, u: &ScalarField, curvature: &CurvatureField) -> Self {
        let (r, k) = compute_rk(u, curvature);
        let dim = u.grid().dim();
        FlowSample {
            t,
            r,
            k,
            j: energy_from_rk(dim, r, k).ok(),
            min_u: u.min(),
            max_u: u.max(),
            volume: u.power_integral(Exponents::of(dim).crit),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowTrace {
    pub samples: Vec<FlowSample>,
    pub terminal: TerminalEvent,
    pub state: ScalarField,
    pub steps: usize,
    pub smallest_dt: f64,
}

impl FlowTrace {
    pub fn terminal_sample(&self) -> &FlowSample {
        self.samples.last().expect("traces hold at least the initial sample")
    }

    /// CSV with columns `t,r,k,J,min_u,volume,event`; the event is set on the last row.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "t,r,k,J,min_u,volume,event")?;
        let last = self.samples.len().saturating_sub(1);
        for (i, s) in self.samples.iter().enumerate() {
            let j = s.j.map(|j| format!("{j:.17e}")).unwrap_or_default();
            let event = if i == last { self.terminal.tag() } else { "" };
            writeln!(w, "{:.17e},{:.17e},{:.17e},{j},{:.17e},{:.17e},{event}", s.t, s.r, s.k, s.min_u, s.volume)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowConfig {
    /// Base step, reduced by stability and positivity.
    pub dt: f64,
    pub t_max: f64,
    /// Rescale to unit critical norm after every yamabe step.
    pub renormalize: bool,
    pub sample_every: usize,
    pub max_steps: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { dt: 1e-3, t_max: 10.0, renormalize: true, sample_every: 1, max_steps: 1_000_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CombinedConfig {
    /// Strip threshold: the yamabe phase stops at `-k = gamma0`.
    pub gamma0: f64,
    /// Energy cap of the region handled by the yamabe phase.
    pub l_cap: f64,
    pub flow: FlowConfig,
    /// Gradient tolerance declaring the yamabe phase converged.
    pub gradient_tol: f64,
}

impl Default for CombinedConfig {
    fn default() -> Self {
        CombinedConfig { gamma0: 0.05, l_cap: f64::INFINITY, flow: FlowConfig::default(), gradient_tol: 1e-8 }
    }
}

fn mean_curvature(u: &ScalarField, curvature: &CurvatureField) -> f64 {
    let crit = Exponents::of(u.grid().dim()).crit;
    let w = u.map(|x| pow(x, crit));
    w.dot(curvature.field()) / w.integrate()
}

fn check_positive(u: &ScalarField) -> Result<()> {
    let m = u.min();
    if m > 0.0 {
        Ok(())
    } else {
        Err(LabError::Positivity { min_u: m })
    }
}

/// Right-hand side of the selected flow.
pub fn flow_rhs(u: &ScalarField, curvature: &CurvatureField, kind: FlowKind) -> Result<ScalarField> {
    check_positive(u)?;
    match kind {
        FlowKind::Yamabe => {
            let e = Exponents::of(u.grid().dim());
            let lu = u.conformal_laplacian();
            let r = u.dot(&lu);
            let k = curvature_integral(u, curvature);
            if !(r < -X_MARGIN && k < -X_MARGIN) {
                return Err(LabError::Domain(format!("r = {r:e}, k = {k:e}")));
            }
            let ratio = k / r;
            let kv = curvature.field().values();
            let values = u
                .values()
                .iter()
                .zip(lu.values())
                .zip(kv)
                .map(|((&x, &l), &c)| -pow(x, -e.weight) * (ratio * l - c * pow(x, e.nonlinear)))
                .collect();
            ScalarField::new(u.grid().clone(), values)
        }
        FlowKind::Exit | FlowKind::Inverse => {
            let kbar = mean_curvature(u, curvature);
            let sign = if kind == FlowKind::Exit { 1.0 } else { -1.0 };
            Ok(u.zip_map(curvature.field(), |x, c| sign * (c - kbar) * x))
        }
    }
}

/// One RK4 step, optionally rescaled to unit critical norm.
pub fn flow_step(
    u: &ScalarField,
    curvature: &CurvatureField,
    kind: FlowKind,
    dt: f64,
    renormalize: bool,
) -> Result<ScalarField> {
    let k1 = flow_rhs(u, curvature, kind)?;
    let k2 = flow_rhs(&u.axpy(0.5 * dt, &k1), curvature, kind)?;
    let k3 = flow_rhs(&u.axpy(0.5 * dt, &k2), curvature, kind)?;
    let k4 = flow_rhs(&u.axpy(dt, &k3), curvature, kind)?;
    let values = u
        .values()
        .iter()
        .zip(k1.values())
        .zip(k2.values())
        .zip(k3.values())
        .zip(k4.values())
        .map(|((((&x, a), b), c), d)| x + dt / 6.0 * (a + 2.0 * b + 2.0 * c + d))
        .collect();
    let next = ScalarField::new(u.grid().clone(), values)
        .map_err(|_| LabError::Positivity { min_u: f64::NAN })?;
    check_positive(&next)?;
    if renormalize {
        normalize(&next)
    } else {
        Ok(next)
    }
}

/// Largest RK4-stable step of the yamabe flow at `u`.
pub fn yamabe_stable_dt(u: &ScalarField, curvature: &CurvatureField) -> f64 {
    let grid = u.grid();
    let e = Exponents::of(grid.dim());
    let (r, k) = compute_rk(u, curvature);
    let ratio = (k / r).abs();
    let k_nyquist = std::f64::consts::PI / grid.spacing();
    let k2_max = grid.dim() as f64 * k_nyquist * k_nyquist;
    let stiffness = grid.conformal_constant() * ratio * pow(u.min(), -e.weight) * k2_max;
    // RK4 is stable on the negative real axis up to about 2.78.
    2.5 / stiffness
}

/// `dk/dt` along the flow in closed form.
pub fn dtk_closed_form(u: &ScalarField, curvature: &CurvatureField, kind: FlowKind) -> Result<f64> {
    check_positive(u)?;
    let e = Exponents::of(u.grid().dim());
    let kv = curvature.field();
    match kind {
        FlowKind::Yamabe => {
            let lu = u.conformal_laplacian();
            let r = u.dot(&lu);
            let k = curvature_integral(u, curvature);
            if !(r < -X_MARGIN && k < -X_MARGIN) {
                return Err(LabError::Domain(format!("r = {r:e}, k = {k:e}")));
            }
            let k2u = u.zip_map(kv, |x, c| c * c * pow(x, e.crit)).integrate();
            let klu = u.zip_map(kv, |x, c| c * x).dot(&lu);
            Ok(e.crit * (k2u - k / r * klu))
        }
        FlowKind::Exit | FlowKind::Inverse => {
            let kbar = mean_curvature(u, curvature);
            let sign = if kind == FlowKind::Exit { 1.0 } else { -1.0 };
            let v = u.zip_map(kv, |x, c| c * (c - kbar) * pow(x, e.crit)).integrate();
            Ok(sign * e.crit * v)
        }
    }
}

fn level_reached(rule: StopRule, s: &FlowSample) -> bool {
    match rule {
        StopRule::KLevel(gamma) => s.k >= -gamma,
        StopRule::KZero => s.k >= 0.0,
        StopRule::JLevel(level) => s.j.is_some_and(|j| j <= level),
        StopRule::Gradient(_) => false,
    }
}

fn event_of(rule: StopRule) -> TerminalEvent {
    match rule {
        StopRule::KLevel(gamma) => TerminalEvent::HitKLevel { gamma },
        StopRule::KZero => TerminalEvent::HitKZero,
        StopRule::JLevel(level) => TerminalEvent::HitJLevel { level },
        StopRule::Gradient(_) => TerminalEvent::Converged,
    }
}

/// Integrate until a stop rule fires or `t_max` is reached.
pub fn run_flow(
    u0: &ScalarField,
    curvature: &CurvatureField,
    kind: FlowKind,
    config: &FlowConfig,
    stops: &[StopRule],
) -> Result<FlowTrace> {
    check_positive(u0)?;
    if !(config.dt > 0.0 && config.t_max >= 0.0) {
        return Err(LabError::Param(format!("dt = {}, t_max = {}", config.dt, config.t_max)));
    }
    let renorm = config.renormalize && kind == FlowKind::Yamabe;
    let mut u = u0.clone();
    let mut t = 0.0;
    let mut sample = FlowSample::of(t, &u, curvature);
    let mut samples = vec![sample];
    let mut steps = 0;
    let mut smallest_dt = f64::INFINITY;
    let gradient_below = |u: &ScalarField, tol: f64| grad_j(u, curvature).map(|g| g.w_neg1() <= tol).unwrap_or(false);
    let finish = |samples: Vec<FlowSample>, terminal, state, steps, smallest_dt| {
        Ok(FlowTrace { samples, terminal, state, steps, smallest_dt })
    };
    for &rule in stops {
        let fired = match rule {
            StopRule::Gradient(tol) => gradient_below(&u, tol),
            _ => level_reached(rule, &sample),
        };
        if fired {
            return finish(samples, event_of(rule), u, 0, smallest_dt);
        }
    }
    loop {
        if t >= config.t_max {
            return finish(samples, TerminalEvent::TimeLimit, u, steps, smallest_dt);
        }
        if steps == config.max_steps {
            let reason = format!("step limit {} reached at t = {t}", config.max_steps);
            return finish(samples, TerminalEvent::Failed { reason }, u, steps, smallest_dt);
        }
        let mut dt = config.dt.min(config.t_max - t);
        if kind == FlowKind::Yamabe {
            dt = dt.min(yamabe_stable_dt(&u, curvature));
        }
        let mut next = None;
        for _ in 0..=MAX_HALVINGS {
            if dt < DT_MIN {
                return Err(LabError::Stall { t, dt_min: DT_MIN });
            }
            match flow_step(&u, curvature, kind, dt, renorm) {
                Ok(v) => {
                    next = Some(v);
                    break;
                }
                Err(LabError::Positivity { .. }) => dt *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some(mut candidate) = next else {
            let reason = format!("positivity lost after {MAX_HALVINGS} halvings at t = {t}");
            return finish(samples, TerminalEvent::Failed { reason }, u, steps, smallest_dt);
        };
        let mut next_sample = FlowSample::of(t + dt, &candidate, curvature);
        let crossed = stops
            .iter()
            .copied()
            .find(|&rule| level_reached(rule, &next_sample) && !level_reached(rule, &sample));
        if let Some(rule) = crossed {
            let (mut lo, mut hi) = (0.0, dt);
            while hi - lo > CROSSING_TOL {
                let mid = 0.5 * (lo + hi);
                let trial = flow_step(&u, curvature, kind, mid, renorm)?;
                if level_reached(rule, &FlowSample::of(t + mid, &trial, curvature)) {
                    hi = mid;
                    candidate = trial;
                } else {
                    lo = mid;
                }
            }
            t += hi;
            smallest_dt = smallest_dt.min(hi);
            samples.push(FlowSample::of(t, &candidate, curvature));
            return finish(samples, event_of(rule), candidate, steps + 1, smallest_dt);
        }
        u = candidate;
        t += dt;
        steps += 1;
        smallest_dt = smallest_dt.min(dt);
        next_sample.t = t;
        sample = next_sample;
        if steps % config.sample_every.max(1) == 0 {
            samples.push(sample);
        }
        for &rule in stops {
            if let StopRule::Gradient(tol) = rule {
                if steps % GRADIENT_EVERY == 0 && gradient_below(&u, tol) {
                    if samples.last().map(|s| s.t) != Some(t) {
                        samples.push(sample);
                    }
                    return finish(samples, TerminalEvent::Converged, u, steps, smallest_dt);
                }
            }
        }
    }
}

/// Region-switching flow: yamabe down to the strip `{-k = gamma0}`, then the
/// exit flow up to `{k = 0}`.
pub fn combined_flow(u0: &ScalarField, curvature: &CurvatureField, config: &CombinedConfig) -> Result<FlowTrace> {
    if !(config.gamma0 > 0.0 && config.flow.dt > 0.0) {
        return Err(LabError::Param(format!("gamma0 = {}, dt = {}", config.gamma0, config.flow.dt)));
    }
    let start = FlowSample::of(0.0, u0, curvature);
    if start.k.abs() <= X_MARGIN && start.r < 0.0 {
        return Ok(FlowTrace {
            samples: vec![start],
            terminal: TerminalEvent::HitKZero,
            state: u0.clone(),
            steps: 0,
            smallest_dt: f64::INFINITY,
        });
    }
    if start.k > X_MARGIN || start.r >= 0.0 {
        return Err(LabError::Domain(format!("r = {:e}, k = {:e}", start.r, start.k)));
    }
    let mut u = u0.clone();
    let mut samples = vec![];
    let mut steps = 0;
    let mut smallest_dt = f64::INFINITY;
    let mut offset = 0.0;
    if -start.k > config.gamma0 {
        if start.j.is_none_or(|j| j > config.l_cap) {
            return Err(LabError::Domain(format!("J = {:?} above the cap {}", start.j, config.l_cap)));
        }
        let phase = run_flow(
            &u,
            curvature,
            FlowKind::Yamabe,
            &config.flow,
            &[StopRule::KLevel(config.gamma0), StopRule::Gradient(config.gradient_tol)],
        )?;
        steps += phase.steps;
        smallest_dt = smallest_dt.min(phase.smallest_dt);
        offset = phase.terminal_sample().t;
        samples.extend(phase.samples);
        if !matches!(phase.terminal, TerminalEvent::HitKLevel { .. }) {
            return Ok(FlowTrace { samples, terminal: phase.terminal, state: phase.state, steps, smallest_dt });
        }
        u = phase.state;
    }
    let exit_config = FlowConfig { t_max: config.flow.t_max - offset, ..config.flow };
    let phase = run_flow(&u, curvature, FlowKind::Exit, &exit_config, &[StopRule::KZero])?;
    let skip = usize::from(!samples.is_empty());
    samples.extend(phase.samples.iter().skip(skip).map(|s| FlowSample { t: s.t + offset, ..*s }));
    Ok(FlowTrace {
        samples,
        terminal: phase.terminal,
        state: phase.state,
        steps: steps + phase.steps,
        smallest_dt: smallest_dt.min(phase.smallest_dt),
    })
}

/// `w_tau = (tau + (1 - tau) u^{2n/(n-2)})^{(n-2)/(2n)}` before normalization.
pub fn homotopy_blend(u: &ScalarField, tau: f64) -> Result<ScalarField> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(LabError::Param(format!("tau = {tau} outside [0, 1]")));
    }
    check_positive(u)?;
    let crit = Exponents::of(u.grid().dim()).crit;
    Ok(u.map(|x| (tau + (1.0 - tau) * pow(x, crit)).powf(1.0 / crit)))
}

/// The normalized null homotopy contracting X onto the constant state.
pub fn null_homotopy(u: &ScalarField, curvature: &CurvatureField, tau: f64) -> Result<ScalarField> {
    let (r, k) = compute_rk(u, curvature);
    energy_from_rk(u.grid().dim(), r, k)?;
    normalize(&homotopy_blend(u, tau)?)
}

/// A state `normalize(base + s direction)` on the level `{-k = gamma}`,
/// found by bracketing `s >= 0` and bisecting to relative precision `1e-14`.
pub fn level_state(
    base: &ScalarField,
    direction: &ScalarField,
    curvature: &CurvatureField,
    gamma: f64,
) -> Result<ScalarField> {
    let excess = |s: f64| -> Result<(f64, ScalarField)> {
        let v = normalize(&base.axpy(s, direction))?;
        let k = curvature_integral(&v, curvature);
        Ok((k + gamma, v))
    };
    let (f0, v0) = excess(0.0)?;
    if f0 == 0.0 {
        return Ok(v0);
    }
    let mut hi = 1e-3;
    let mut f_hi = loop {
        match excess(hi) {
            Ok((f, _)) if f.signum() != f0.signum() => break f,
            Ok(_) if hi < 1e6 => hi *= 2.0,
            _ => {
                return Err(LabError::Convergence(format!(
                    "no level crossing of -k = {gamma} along the direction"
                )))
            }
        }
    };
    let mut lo = 0.0;
    let mut f_lo = f0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (f, _) = excess(mid)?;
        if f.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f;
        } else {
            hi = mid;
            f_hi = f;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    let s = if f_lo.abs() < f_hi.abs() { lo } else { hi };
    Ok(excess(s)?.1)
}

#[derive(Debug, Clone, Serialize)]
pub struct TransversalityReport {
    pub gamma: f64,
    pub j_cap: f64,
    /// `(k, J, dk/dt)` per admitted state.
    pub samples: Vec<(f64, f64, f64)>,
    /// Smallest `dk/dt`, the empirical transversality margin.
    pub delta: f64,
    pub all_positive: bool,
}

/// Yamabe `dk/dt` on states of `{-k = gamma} ∩ {J <= j_cap}`.
pub fn transversality_scan(
    states: &[ScalarField],
    curvature: &CurvatureField,
    gamma: f64,
    j_cap: f64,
) -> Result<TransversalityReport> {
    let mut samples = vec![];
    for u in states {
        let s = FlowSample::of(0.0, u, curvature);
        let Some(j) = s.j.filter(|&j| j <= j_cap) else {
            continue;
        };
        samples.push((s.k, j, dtk_closed_form(u, curvature, FlowKind::Yamabe)?));
    }
    let delta = samples.iter().map(|s| s.2).fold(f64::INFINITY, f64::min);
    Ok(TransversalityReport { gamma, j_cap, all_positive: !samples.is_empty() && delta > 0.0, samples, delta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;

    fn setup() -> (ScalarField, CurvatureField) {
        let grid = TorusGrid::new(3, 16, 2.0 * std::f64::consts::PI).unwrap();
        let k = CurvatureField::new(ScalarField::from_fn(&grid, |x| -1.0 + 0.5 * x[0].cos())).unwrap();
        let u = normalize(&ScalarField::from_fn(&grid, |x| 1.0 + 0.2 * x[1].sin() * x[2].cos())).unwrap();
        (u, k)
    }

    #[test]
    fn exit_flow_constant_curvature_is_stationary() {
        let (u, _) = setup();
        let k = CurvatureField::constant(u.grid(), -2.0).unwrap();
        let next = flow_step(&u, &k, FlowKind::Exit, 1e-2, false).unwrap();
        assert!((&next - &u).max_abs() < 1e-14);
        assert!(dtk_closed_form(&u, &k, FlowKind::Exit).unwrap().abs() < 1e-12);
    }

    #[test]
    fn yamabe_dtk_matches_difference() {
        let (u, k) = setup();
        let rhs = flow_rhs(&u, &k, FlowKind::Yamabe).unwrap();
        let h = 1e-6;
        let k0 = compute_rk(&u, &k).1;
        let k1 = compute_rk(&u.axpy(h, &rhs), &k).1;
        let k_1 = compute_rk(&u.axpy(-h, &rhs), &k).1;
        let fd = (k1 - k_1) / (2.0 * h);
        let exact = dtk_closed_form(&u, &k, FlowKind::Yamabe).unwrap();
        assert!((fd - exact).abs() < 1e-6 * exact.abs(), "{fd} vs {exact}, k = {k0}");
    }

    #[test]
    fn homotopy_endpoints() {
        let (u, k) = setup();
        let start = null_homotopy(&u, &k, 0.0).unwrap();
        assert!((&start - &u).max_abs() < 1e-13);
        let end = null_homotopy(&u, &k, 1.0).unwrap();
        let c = u.grid().volume().powf(-1.0 / 6.0);
        assert!(end.values().iter().all(|x| (x - c).abs() < 1e-13));
    }
}
