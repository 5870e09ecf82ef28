//! One runner per experiment tag.

use std::path::Path;

use anyhow::{bail, Context, Result};
use exitset_core::bubbles::{
    bubble, decompose, verify_bubble_equation, verify_interaction, BubbleParams, Cutoff, InteractionConstants, InteractionEstimate,
    LAMBDA_MIN, SAMPLING_LIMIT,
};
use exitset_core::conformal::{compute_j, prescription_residual, CurvatureField, compute_rk, dense_nu1, dirichlet_nu1, normalize, peak_ratio_report};
use exitset_core::exitset::{
    build_kdp, expansion_ladder, find_exit_point, fit_gammas, gamma0_term, region_scan, ScanConfig,
};
use exitset_core::flows::{
    combined_flow, homotopy_blend, level_state, null_homotopy, run_flow, transversality_scan, CombinedConfig,
    FlowConfig, FlowKind, FlowSample, FlowTrace, StopRule, TerminalEvent,
};
use exitset_core::{Point, ScalarField, TorusGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{CurvatureConfig, ExperimentConfig};
use crate::report::Report;

pub const TAGS: [&str; 11] = [
    "constants",
    "lemma21",
    "lemma22",
    "decompose-check",
    "flow",
    "combined",
    "homotopy",
    "transversality",
    "nu1",
    "expansion",
    "exit-components",
];

/// Run an experiment and write its artifacts; the report's assertions decide the exit status.
pub fn run_experiment(tag: &str, config: &ExperimentConfig, out_dir: &Path) -> Result<Report> {
    let mut report = Report::new(tag, config, out_dir)?;
    match tag {
        "constants" => constants(&mut report)?,
        "lemma21" => bubble_equation(config, &mut report)?,
        "lemma22" => interactions(config, &mut report)?,
        "decompose-check" => decompose_check(config, &mut report)?,
        "flow" => flow(config, &mut report)?,
        "combined" => combined(config, &mut report)?,
        "homotopy" => homotopy(config, &mut report)?,
        "transversality" => transversality(config, &mut report)?,
        "nu1" => nu1(config, &mut report)?,
        "expansion" => expansion(config, &mut report)?,
        "exit-components" => exit_components(config, &mut report)?,
        other => bail!("unknown experiment `{other}`; expected one of {}", TAGS.join(", ")),
    }
    report.write()?;
    Ok(report)
}

/// `normalize(1 + amplitude w)` with `w` a smooth random field of unit sup norm.
pub fn perturbed_constant(grid: &std::sync::Arc<TorusGrid>, amplitude: f64, modes: usize, seed: u64) -> Result<ScalarField> {
    let w = ScalarField::random_smooth(grid, modes, 2, seed);
    Ok(normalize(&w.map(|x| 1.0 + amplitude * x))?)
}

fn default_center(grid: &TorusGrid) -> Point {
    Point::splat(grid.dim(), grid.side() / 4.0)
}

#[derive(Serialize)]
struct ConstantRow {
    n: usize,
    name: &'static str,
    quadrature: f64,
    closed_form: f64,
    relative_deviation: f64,
}

fn constants(report: &mut Report) -> Result<()> {
    let mut rows = Vec::new();
    for n in 3..=5 {
        let quad = InteractionConstants::new(n);
        let closed = InteractionConstants::closed_form(n);
        let dev = quad.max_relative_deviation(&closed);
        report.check(
            &format!("constants_n{n}"),
            "quadrature matches the Beta/Gamma closed forms to 1e-10",
            dev <= 1e-10,
            format!("max relative deviation {dev:.2e}"),
        );
        for ((name, q), (_, c)) in quad.as_array().into_iter().zip(closed.as_array()) {
            rows.push(ConstantRow { n, name, quadrature: q, closed_form: c, relative_deviation: ((q - c) / c).abs() });
        }
    }
    report.table("constants", &rows)
}

fn bubble_equation(config: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let grid = config.grid()?;
    let center = config.lemma21.center.clone().map(Point::new).unwrap_or_else(|| default_center(&grid));
    let result = verify_bubble_equation(&grid, &center, &config.lemma21.ladder, Cutoff::standard(grid.side()))?;
    report.check(
        "residual_decreasing",
        "bubble equation residual decreases along the ladder",
        result.decreasing,
        format!("ratios {:?}", result.ratios),
    );
    report.check(
        "derivative_residual_decreasing",
        "scale-derivative residual decreases along the ladder",
        result.derivative_decreasing,
        format!("ratios {:?}", result.derivative_ratios),
    );
    report.check(
        "decay_rate",
        "ratio per step at most 1.5 (lambda ratio)^{-(n-2)/2}",
        result.within_rate,
        format!("bounds {:?}", result.ratio_bounds),
    );
    report.table("lemma21", &result.rows)?;
    report.record("lemma21", &result)
}

#[derive(Serialize)]
struct InteractionRow {
    estimate: String,
    scale: f64,
    lhs: f64,
    predicted: f64,
    error: f64,
    bound: f64,
    scaled_error: f64,
    interaction: f64,
    pass: bool,
}

fn interactions(config: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let grid = config.grid()?;
    let side = grid.side();
    let cutoff = Cutoff::standard(side);
    let p = &config.lemma22;
    let center = default_center(&grid);
    let mut other = center.coords().to_vec();
    other[0] += p.separation * side;
    let p1 = BubbleParams::new(center.clone(), p.scale)?;
    let p2 = BubbleParams::new(Point::new(other), p.scale)?;
    let mut checks = Vec::new();
    for k in 1..=3 {
        checks.push((p.scale, verify_interaction(&p1, &p1, InteractionEstimate::Gram { k }, cutoff, side)?));
    }
    for k in 1..=2 {
        checks.push((p.scale, verify_interaction(&p1, &p2, InteractionEstimate::Interaction { k }, cutoff, side)?));
    }
    for &scale in &p.self_ladder {
        let q = BubbleParams::new(center.clone(), scale)?;
        checks.push((scale, verify_interaction(&q, &q, InteractionEstimate::SelfInteraction, cutoff, side)?));
    }
    checks.push((p.scale, verify_interaction(&p1, &p2, InteractionEstimate::Mixed { alpha: p.mixed_alpha }, cutoff, side)?));
    checks.push((p.scale, verify_interaction(&p1, &p2, InteractionEstimate::LogCorrected, cutoff, side)?));
    let mut rows = Vec::new();
    for (scale, c) in &checks {
        let name = format!("{:?}", c.estimate);
        report.check(
            &format!("{name} at lambda={scale}"),
            "interaction integral within its error class",
            c.pass,
            format!("lhs {:.6e}, predicted {:.6e}, error {:.3e} <= {:.3e}", c.lhs, c.predicted, c.error, c.bound),
        );
        rows.push(InteractionRow {
            estimate: name,
            scale: *scale,
            lhs: c.lhs,
            predicted: c.predicted,
            error: c.error,
            bound: c.bound,
            scaled_error: c.scaled_error,
            interaction: c.interaction,
            pass: c.pass,
        });
    }
    let constants: Vec<f64> = checks
        .iter()
        .filter(|(_, c)| c.estimate == InteractionEstimate::SelfInteraction)
        .map(|(_, c)| c.scaled_error)
        .collect();
    if constants.len() >= 2 {
        let stable = constants.windows(2).all(|w| w[1] <= 1.5 * w[0]);
        report.check(
            "self_interaction_constant",
            "self-interaction constant C(2 lambda) <= 1.5 C(lambda)",
            stable,
            format!("constants {constants:?}"),
        );
    }
    report.table("lemma22", &rows)
}

#[derive(Serialize)]
struct DecomposeRow {
    scale: f64,
    v_h1: f64,
    stationarity: f64,
    budget: f64,
    constant: f64,
    iterations: usize,
}

fn decompose_check(config: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let grid = config.grid()?;
    let p = &config.decompose;
    let cutoff = Cutoff::standard(grid.side());
    let n = grid.dim() as f64;
    let base = default_center(&grid);
    let shift: Vec<f64> = (0..grid.dim()).map(|i| 0.01 * (i as f64 + 1.0)).collect();
    let center = base.shifted(&shift, grid.side());
    let mut rows = Vec::new();
    for &scale in &p.scales {
        if scale * grid.spacing() > SAMPLING_LIMIT {
            bail!("lambda = {scale} is not sampled on N = {} (lambda h > {SAMPLING_LIMIT})", grid.size());
        }
        let truth = BubbleParams::new(center.clone(), scale)?;
        let phi = bubble(&grid, &truth, cutoff)?;
        let guess = BubbleParams::new(base.clone(), scale * 1.02)?;
        let exact = phi.map(|x| p.alpha + p.alpha1 * x);
        let dec = decompose(&exact, &guess, cutoff)?;
        report.check(
            &format!("exact_recovery_lambda{scale}"),
            "exact representation recovered with ||v||_h1 <= 1e-9",
            dec.v.h1() <= 1e-9,
            format!("||v||_h1 = {:.3e}, lambda = {:.9}", dec.v.h1(), dec.params.scale),
        );
        let w = ScalarField::random_smooth(&grid, 6, 2, config.seed);
        let perturbed = exact.axpy(p.perturbation, &w);
        let dec = decompose(&perturbed, &guess, cutoff)?;
        let stationarity = dec.residual_norms.max_stationarity();
        let budget = scale.powf(2.0 - n) + dec.v.h1().powi(2);
        rows.push(DecomposeRow {
            scale,
            v_h1: dec.v.h1(),
            stationarity,
            budget,
            constant: stationarity / budget,
            iterations: dec.iterations,
        });
    }
    if rows.len() >= 2 {
        let ratio = rows.last().map_or(1.0, |r| r.constant) / rows[0].constant;
        report.check(
            "stationarity_budget",
            "stationarity residuals within C (lambda^{-(n-2)} + ||v||^2) with C stable (ratio in [0.5, 2])",
            (0.5..=2.0).contains(&ratio),
            format!("constants {:?}", rows.iter().map(|r| r.constant).collect::<Vec<_>>()),
        );
    }
    report.table("decompose", &rows)
}

#[derive(Serialize)]
struct TraceRow {
    t: f64,
    r: f64,
    k: f64,
    j: Option<f64>,
    min_u: f64,
    max_u: f64,
    volume: f64,
}

fn trace_rows(trace: &FlowTrace) -> Vec<TraceRow> {
    trace
        .samples
        .iter()
        .map(|s| TraceRow { t: s.t, r: s.r, k: s.k, j: s.j, min_u: s.min_u, max_u: s.max_u, volume: s.volume })
        .collect()
}

fn save_trace(report: &mut Report, name: &str, trace: &FlowTrace) -> Result<()> {
    report.raw(&format!("{name}.csv"), |w| trace.write_csv(w))?;
    report.field(&format!("{name}_final"), &trace.state)?;
    report.record(&format!("{name}_terminal"), &trace.terminal)?;
    report.record(&format!("{name}_steps"), trace.steps)?;
    report.record(&format!("{name}_smallest_dt"), trace.smallest_dt)
}

/// `J` non-increasing between consecutive samples, up to `tol` per step.
pub fn j_monotone(samples: &[FlowSample], tol: f64) -> (bool, f64) {
    let worst = samples
        .windows(2)
        .filter_map(|w| Some(w[1].j? - w[0].j?))
        .fold(f64::NEG_INFINITY, f64::max);
    (worst <= tol, worst)
}

/// Positivity envelope of the exit flow.
pub fn exit_envelope(samples: &[FlowSample], inf_k: f64, sup_k: f64) -> bool {
    let first = samples[0];
    samples.iter().all(|s| {
        let slack = 1e-12;
        s.min_u >= first.min_u * (inf_k * s.t).exp() * (1.0 - slack)
            && s.max_u <= first.max_u * ((sup_k - inf_k) * s.t).exp() * (1.0 + slack)
    })
}

fn flow(config: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let grid = config.grid()?;
    let curvature = config.curvature()?;
    let p = &config.flow;
    let u0 = perturbed_constant(&grid, p.amplitude, p.modes, config.seed)?;
    let flow_config = FlowConfig {
        dt: p.dt,
        t_max: p.t_max,
        renormalize: p.renormalize,
        sample_every: p.sample_every,
        max_steps: p.max_steps,
    };
    let mut stops = Vec::new();
    stops.extend(p.k_level.map(StopRule::KLevel));
    stops.extend(p.gradient_tol.map(StopRule::Gradient));
    stops.extend(p.j_level.map(StopRule::JLevel));
    if p.stop_at_k_zero {
        stops.push(StopRule::KZero);
    }
    report.field("initial", &u0)?;
    let trace = run_flow(&u0, &curvature, p.kind, &flow_config, &stops)?;
    report.check(
        "no_failure",
        "integration finished without a failure event",
        !matches!(trace.terminal, TerminalEvent::Failed { .. }),
        trace.terminal.tag(),
    );
    report.check(
        "positive",
        "u stays positive at every sample",
        trace.samples.iter().all(|s| s.min_u > 0.0),
        format!("min over trace {:.3e}", trace.samples.iter().map(|s| s.min_u).fold(f64::INFINITY, f64::min)),
    );
    match p.kind {
        FlowKind::Yamabe => {
            let (ok, worst) = j_monotone(&trace.samples, 1e-8);
            report.check("j_nonincreasing", "J non-increasing along the yamabe flow (1e-8 per step)", ok, format!("largest increase {worst:.3e}"));
            if p.gradient_tol.is_some() {
                let residual = prescription_residual(&trace.state, &curvature)?;
                report.check(
                    "converged_solution",
                    "rescaled terminal state solves L u = K u^{(n+2)/(n-2)} to 1e-6 in W^{-1,2}",
                    matches!(trace.terminal, TerminalEvent::Converged) && residual <= 1e-6,
                    format!("{} at t = {:.3}, residual {residual:.3e}", trace.terminal.tag(), trace.terminal_sample().t),
                );
            }
        }
        FlowKind::Exit => {
            let first = trace.samples[0];
            let last = trace.terminal_sample();
            let drift = if last.t > 0.0 { (last.volume - first.volume).abs() / last.t } else { 0.0 };
            report.check("volume_conserved", "exit flow volume drift per unit time <= 1e-9", drift <= 1e-9, format!("drift {drift:.3e}"));
            let ok = exit_envelope(&trace.samples, curvature.min(), curvature.max());
            report.check("positivity_envelope", "min u >= min u0 e^{t inf K}, max u <= max u0 e^{t (sup K - inf K)}", ok, "");
            if matches!(trace.terminal, TerminalEvent::TimeLimit) {
                let elapsed = trace.terminal_sample().t;
                let back_config = FlowConfig { t_max: elapsed, ..flow_config };
                let back = run_flow(&trace.state, &curvature, FlowKind::Inverse, &back_config, &[])?;
                let error = back.state.axpy(-1.0, &u0).h1();
                report.check(
                    "inverse_round_trip",
                    "inverse flow for the same time returns the initial state to 1e-6 in h1",
                    error <= 1e-6,
                    format!("h1 error {error:.3e} after t = {elapsed:.3}"),
                );
            }
        }
        FlowKind::Inverse => {}
    }
    report.table("trace_full", &trace_rows(&trace))?;
    save_trace(report, "trace", &trace)
}

fn combined(config: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let grid = config.grid()?;
    let curvature = config.curvature()?;
    let p = &config.flow;
    let u0 = perturbed_constant(&grid, p.amplitude, p.modes, config.seed)?;
    let settings = CombinedConfig {
        gamma0: config.combined.gamma0,
        l_cap: config.combined.l_cap.unwrap_or(f64::INFINITY),
        flow: FlowConfig {
            dt: p.dt,
            t_max: p.t_max,
            renormalize: p.renormalize,
            sample_every: p.sample_every,
            max_steps: p.max_steps,
        },
        gradient_tol: config.combined.gradient_tol,
    };
    let trace = combined_flow(&u0, &curvature, &settings)?;
    let ended = matches!(trace.terminal, TerminalEvent::HitKZero | TerminalEvent::Converged | TerminalEvent::TimeLimit);
    report.check("terminal_event", "combined flow ends at {k = 0}, converges, or reaches t_max", ended, trace.terminal.tag());
    if trace.terminal == TerminalEvent::HitKZero {
        let last = trace.terminal_sample();
        report.check("exit_with_negative_r", "the crossing of {k = 0} has r < 0", last.r < 0.0, format!("r = {:.6e}", last.r));
    }
    report.check(
        "positive",
        "u stays positive at every sample",
        trace.samples.iter().all(|s| s.min_u > 0.0),
        "",
    );
    save_trace(report, "combined", &trace)
}

#[derive(Serialize)]
struct HomotopyRow {
    state: usize,
    tau: f64,
    k_blend: f64,
    k_interpolated: f64,
    r_blend: f64,
    r_bound: f64,
    r_normalized: f64,
    k_normalized: f64,
}

fn homotopy(config: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let grid = config.grid()?;
    let curvature = config.curvature()?;
    let p = &config.homotopy;
    let n = grid.dim() as f64;
    let one = ScalarField::constant(&grid, 1.0);
    let (_, k_one) = compute_rk(&one, &curvature);
    let mut rows = Vec::new();
    let (mut k_ok, mut r_ok, mut x_ok) = (true, true, true);
    for i in 0..p.states {
        let u = perturbed_constant(&grid, p.amplitude, 6, config.seed.wrapping_add(i as u64))?;
        let (r_u, k_u) = compute_rk(&u, &curvature);
        for j in 0..p.taus {
            let tau = j as f64 / (p.taus - 1) as f64;
            let w = homotopy_blend(&u, tau)?;
            let (r_w, k_w) = compute_rk(&w, &curvature);
            let k_interp = tau * k_one + (1.0 - tau) * k_u;
            let r_bound = (1.0 - tau).powf((n - 2.0) / n) * r_u;
            let (r_n, k_n) = compute_rk(&null_homotopy(&u, &curvature, tau)?, &curvature);
            k_ok &= (k_w - k_interp).abs() <= 1e-12 * k_interp.abs().max(1.0);
            r_ok &= r_w <= r_bound + 1e-12 * r_u.abs();
            x_ok &= r_n < 0.0 && k_n < 0.0;
            rows.push(HomotopyRow {
                state: i,
                tau,
                k_blend: k_w,
                k_interpolated: k_interp,
                r_blend: r_w,
                r_bound,
                r_normalized: r_n,
                k_normalized: k_n,
            });
        }
    }
    report.check("k_interpolation", "k of the blend equals tau k_1 + (1 - tau) k_u to 1e-12", k_ok, "");
    report.check("r_bound", "r of the blend at most (1 - tau)^{(n-2)/n} r_u", r_ok, "");
    report.check("stays_in_x", "normalized path keeps r < 0 and k < 0", x_ok, "");
    report.table("homotopy", &rows)
}

fn transversality(config: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let grid = config.grid()?;
    let curvature = config.curvature()?;
    let p = &config.transversality;
    let base = normalize(&ScalarField::constant(&grid, 1.0))?;
    let j_cap = match p.j_cap {
        Some(cap) => cap,
        None => p.j_cap_factor * compute_j(&base, &curvature).context("the constant state must lie in X to set the J cap")?,
    };
    let centers = curvature_peaks(config, &curvature);
    let cutoff = Cutoff::standard(grid.side());
    let top_scale = grid.max_resolvable_scale().max(LAMBDA_MIN);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // Constant plus a bubble near a peak of K, lifted onto the level set.
    let mut states = Vec::new();
    for i in 0..p.states {
        let peak = &centers[i % centers.len()];
        let shift: Vec<f64> = (0..grid.dim()).map(|_| rng.random_range(-p.center_jitter..=p.center_jitter)).collect();
        let scale = rng.random_range(LAMBDA_MIN..=top_scale);
        let params = BubbleParams::new(peak.shifted(&shift, grid.side()), scale)?;
        let noise = ScalarField::random_smooth(&grid, 6, 2, rng.random());
        let direction = bubble(&grid, &params, cutoff)?.axpy(p.noise, &noise);
        states.push(level_state(&base, &direction, &curvature, p.gamma)?);
    }
    let scan = transversality_scan(&states, &curvature, p.gamma, j_cap)?;
    report.check(
        "dk_dt_positive",
        "yamabe dk/dt > 0 on sampled states of {-k = gamma} with J below the cap",
        scan.all_positive && scan.samples.len() == p.states,
        format!("{} of {} states admitted, smallest dk/dt {:.3e}", scan.samples.len(), p.states, scan.delta),
    );
    report.table("transversality", &scan.samples)?;
    report.record("transversality", &scan)?;

    // Diffuse states that put mass wherever K is large; reported, not asserted.
    let lift = curvature.field().map(|k| k - curvature.min());
    let lift = lift.scale(1.0 / lift.max_abs().max(f64::MIN_POSITIVE));
    let diffuse: Vec<ScalarField> = (0..p.states)
        .map(|i| {
            let noise = ScalarField::random_smooth(&grid, 6, 2, config.seed.wrapping_add(i as u64));
            level_state(&base, &lift.axpy(0.3, &noise), &curvature, p.gamma)
        })
        .collect::<exitset_core::Result<_>>()?;
    let probe = transversality_scan(&diffuse, &curvature, p.gamma, j_cap)?;
    report.table("transversality_diffuse", &probe.samples)?;
    report.record("transversality_diffuse", &probe)
}

/// Bubble centers for sampling: the configured peaks, else the maximizer of K.
fn curvature_peaks(config: &ExperimentConfig, curvature: &CurvatureField) -> Vec<Point> {
    if matches!(config.curvature, CurvatureConfig::DoublePeak(_)) {
        return config.double_peak().peaks.to_vec();
    }
    let values = curvature.field().values();
    let top = (0..values.len()).max_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    vec![curvature.grid().point(top)]
}

fn nu1(config: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let curvature = config.curvature()?;
    let p = &config.nu1;
    let positive = curvature.nonnegative_region();
    if positive.is_empty() {
        bail!("{{K >= 0}} is empty; the eigenvalue probe needs a sign-changing curvature");
    }
    let nu = dirichlet_nu1(&positive, p.max_iters, p.tol)?;
    report.check("nu1_positive", "first Dirichlet eigenvalue of L on {K >= 0} is positive", nu > 0.0, format!("nu1 = {nu:.10}"));
    report.record("nu1", nu)?;
    if positive.count() <= p.dense_limit {
        let dense = dense_nu1(&positive);
        let rel = (dense - nu).abs() / dense.abs();
        report.check("dense_cross_check", "iterative and dense eigenvalues agree to 1e-6", rel <= 1e-6, format!("dense {dense:.10}, relative {rel:.2e}"));
        report.record("nu1_dense", dense)?;
    }
    let omega = positive.dilate(p.dilation);
    let d = omega.dilate(p.dilation);
    let c1 = InteractionConstants::closed_form(curvature.grid().dim()).c1;
    let prop = peak_ratio_report(&curvature, &omega, &d, c1)?;
    report.check(
        "peak_ratio_bound",
        "sup K / inf(-K) outside Omega at least (4n(n-1))^{n/(n-2)} (c_1/|M|)^{2/(n-2)}",
        prop.peak_ratio >= prop.ratio_lower_bound,
        format!("ratio {:.6}, bound {:.6}", prop.peak_ratio, prop.ratio_lower_bound),
    );
    report.record("ab_condition", &prop)
}

fn expansion(config: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let mut spec = config.double_peak();
    let p = &config.expansion;
    if let Some(s) = p.sharpness {
        spec.sharpness = [s, s];
    }
    let ladder = expansion_ladder(&spec, p.peak, &p.ladder, p.tau)?;
    for (kind, ok) in &ladder.decreasing {
        report.check(&format!("{kind:?}_decreasing"), "residual / budget strictly decreasing along the ladder", *ok, "");
    }
    for (kind, ok) in &ladder.terminal_small {
        let last = ladder.rows.iter().rev().find(|r| r.kind == *kind).map_or(f64::NAN, |r| r.ratio);
        report.check(&format!("{kind:?}_terminal"), "terminal residual / budget <= 0.1", *ok, format!("ratio {last:.4}"));
    }
    report.table("expansion", &ladder.rows)?;
    report.record("gamma0_term", gamma0_term(&spec, ladder.rows.first().map_or(0.0, |r| r.alpha)))
}

#[derive(Serialize)]
struct ExitRow {
    peak: usize,
    scale_star: f64,
    alpha: f64,
    alpha1: f64,
    r: f64,
    k: f64,
    norm: f64,
    min_u: f64,
}

fn exit_components(config: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let spec = config.double_peak();
    let kdp = build_kdp(&spec)?;
    report.record("spec", &spec)?;
    report.record("nu1", kdp.nu1)?;
    let p = &config.exit;
    let window = p.window.unwrap_or_else(|| spec.default_window());
    let mut points = Vec::new();
    let mut rows = Vec::new();
    for peak in [1, 2] {
        let ep = find_exit_point(&kdp, p.tau, peak, window, p.sweep_points)?;
        let s = ep.solution;
        let ok = ep.k_abs() <= 1e-9
            && (s.r + p.tau).abs() <= 1e-10
            && ep.u.min() > 0.0
            && (ep.u.lcrit() - 1.0).abs() <= 1e-10;
        report.check(
            &format!("exit_point_{peak}"),
            "exit point with |k| <= 1e-9, r = -tau < 0, u > 0, unit norm",
            ok,
            format!("lambda* = {:.10}, k = {:.2e}, r = {:.6e}", ep.scale_star, s.k_value, s.r),
        );
        report.table(&format!("sweep_{peak}"), &ep.table)?;
        report.field(&format!("exit_point_{peak}"), &ep.u)?;
        rows.push(ExitRow {
            peak,
            scale_star: ep.scale_star,
            alpha: s.alpha,
            alpha1: s.alpha1,
            r: s.r,
            k: s.k_value,
            norm: s.norm,
            min_u: ep.u.min(),
        });
        points.push(ep);
    }
    let distance = (&points[0].u - &points[1].u).h1();
    report.check("separated", "the two exit points are at h1 distance >= 0.1", distance >= 0.1, format!("{distance:.6}"));
    report.table("exit_points", &rows)?;
    if p.skip_scans {
        return Ok(());
    }
    let mut scan_config = ScanConfig::standard(&spec);
    scan_config.window = window;
    scan_config.fit_samples = p.fit_samples;
    scan_config.samples = p.samples;
    scan_config.seed = config.seed;
    for peak in [1, 2] {
        let fit = fit_gammas(&kdp, peak, &scan_config)?;
        let (ball, annulus) = fit.shells();
        let ball_scan = region_scan(&kdp, peak, &fit, ball, &scan_config)?;
        let annulus_scan = region_scan(&kdp, peak, &fit, annulus, &scan_config)?;
        report.check(
            &format!("ball_{peak}"),
            "k > 0 on every sampled state of the ball",
            ball_scan.violations == 0 && ball_scan.samples.len() >= p.samples,
            format!("{} samples, min k {:.3e}", ball_scan.samples.len(), ball_scan.min_k),
        );
        report.check(
            &format!("annulus_{peak}"),
            "k < 0 on every sampled state of the annulus",
            annulus_scan.violations == 0 && annulus_scan.samples.len() >= p.samples,
            format!("{} samples, max k {:.3e}", annulus_scan.samples.len(), annulus_scan.max_k),
        );
        report.table(&format!("fit_{peak}"), &fit.samples)?;
        report.table(&format!("ball_{peak}"), &ball_scan.samples)?;
        report.table(&format!("annulus_{peak}"), &annulus_scan.samples)?;
        let mut summary = fit.clone();
        summary.samples.clear();
        report.record(&format!("fit_{peak}"), &summary)?;
    }
    Ok(())
}
