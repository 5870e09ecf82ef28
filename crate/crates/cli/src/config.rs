//! JSON experiment configuration: every key has a default, unknown keys are rejected.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use exitset_core::bubbles::Cutoff;
use exitset_core::conformal::CurvatureField;
use exitset_core::exitset::DoublePeakSpec;
use exitset_core::flows::FlowKind;
use exitset_core::{torus_distance, Point, ScalarField, TorusGrid};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub size: usize,
    pub side: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { dim: 3, size: 64, side: 2.0 * PI }
    }
}

/// Peaks default to `L/4 (1,..,1)` and `3L/4 (1,..,1)`, the offset to the critical constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DoublePeakConfig {
    pub peaks: Option<[Vec<f64>; 2]>,
    pub sharpness: [f64; 2],
    pub offset: Option<f64>,
    /// Subtracted from the critical offset when `offset` is absent.
    pub margin: f64,
    pub cutoff: Option<f64>,
}

impl Default for DoublePeakConfig {
    fn default() -> Self {
        DoublePeakConfig { peaks: None, sharpness: [3.0, 3.0], offset: None, margin: 0.0, cutoff: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurvatureConfig {
    Constant { value: f64 },
    DoublePeak(DoublePeakConfig),
    File { path: PathBuf },
}

impl Default for CurvatureConfig {
    fn default() -> Self {
        CurvatureConfig::Constant { value: -1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BubbleEquationConfig {
    pub center: Option<Vec<f64>>,
    pub ladder: Vec<f64>,
}

impl Default for BubbleEquationConfig {
    fn default() -> Self {
        BubbleEquationConfig { center: None, ladder: vec![10.0, 20.0, 40.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InteractionConfig {
    /// Concentration of the one-center estimates.
    pub scale: f64,
    /// Center separation of the two-center estimates, as a fraction of `L`.
    pub separation: f64,
    pub mixed_alpha: f64,
    /// Concentrations of the self-interaction ladder.
    pub self_ladder: Vec<f64>,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        InteractionConfig { scale: 50.0, separation: 1.0 / 16.0, mixed_alpha: 4.5, self_ladder: vec![10.0, 20.0, 40.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeConfig {
    pub scales: Vec<f64>,
    pub alpha: f64,
    pub alpha1: f64,
    /// Sup norm of the smooth perturbation added in the budget ladder.
    pub perturbation: f64,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        DecomposeConfig { scales: vec![20.0, 40.0], alpha: 0.8, alpha1: 0.3, perturbation: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    pub kind: FlowKind,
    pub dt: f64,
    pub t_max: f64,
    pub renormalize: bool,
    pub sample_every: usize,
    pub max_steps: usize,
    /// Sup norm of the smooth perturbation of the constant initial state.
    pub amplitude: f64,
    pub modes: usize,
    pub k_level: Option<f64>,
    pub gradient_tol: Option<f64>,
    pub j_level: Option<f64>,
    pub stop_at_k_zero: bool,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            kind: FlowKind::Yamabe,
            dt: 1e-3,
            t_max: 1.0,
            renormalize: true,
            sample_every: 1,
            max_steps: 1_000_000,
            amplitude: 0.2,
            modes: 6,
            k_level: None,
            gradient_tol: None,
            j_level: None,
            stop_at_k_zero: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CombinedParams {
    pub gamma0: f64,
    pub l_cap: Option<f64>,
    pub gradient_tol: f64,
}

impl Default for CombinedParams {
    fn default() -> Self {
        CombinedParams { gamma0: 0.05, l_cap: None, gradient_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomotopyConfig {
    pub states: usize,
    pub taus: usize,
    pub amplitude: f64,
}

impl Default for HomotopyConfig {
    fn default() -> Self {
        HomotopyConfig { states: 20, taus: 11, amplitude: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransversalityConfig {
    pub states: usize,
    pub gamma: f64,
    /// Absolute cap on J; when absent, `j_cap_factor` times J of the constant state.
    pub j_cap: Option<f64>,
    pub j_cap_factor: f64,
    /// Per-coordinate range of bubble centers around a peak.
    pub center_jitter: f64,
    /// Amplitude of the smooth random part added to each bubble.
    pub noise: f64,
}

impl Default for TransversalityConfig {
    fn default() -> Self {
        TransversalityConfig { states: 50, gamma: 0.05, j_cap: None, j_cap_factor: 10.0, center_jitter: 0.3, noise: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Nu1Config {
    pub max_iters: usize,
    pub tol: f64,
    /// Cells added around `{K >= 0}` for Omega, and again for D.
    pub dilation: usize,
    /// Assemble the dense matrix when `{K >= 0}` has at most this many cells.
    pub dense_limit: usize,
}

impl Default for Nu1Config {
    fn default() -> Self {
        Nu1Config { max_iters: 500, tol: 1e-12, dilation: 1, dense_limit: 3000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionConfig {
    pub peak: usize,
    pub ladder: Vec<f64>,
    pub tau: f64,
    /// Overrides the peak sharpness of the curvature for the ladder.
    pub sharpness: Option<f64>,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig { peak: 1, ladder: vec![40.0, 80.0, 160.0], tau: 0.01, sharpness: Some(40.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExitConfig {
    pub tau: f64,
    pub sweep_points: usize,
    pub window: Option<(f64, f64)>,
    pub fit_samples: usize,
    pub samples: usize,
    pub skip_scans: bool,
}

impl Default for ExitConfig {
    fn default() -> Self {
        ExitConfig { tau: 0.01, sweep_points: 6, window: None, fit_samples: 60, samples: 200, skip_scans: false }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub curvature: CurvatureConfig,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub lemma21: BubbleEquationConfig,
    pub lemma22: InteractionConfig,
    pub decompose: DecomposeConfig,
    pub flow: FlowParams,
    pub combined: CombinedParams,
    pub homotopy: HomotopyConfig,
    pub transversality: TransversalityConfig,
    pub nu1: Nu1Config,
    pub expansion: ExpansionConfig,
    pub exit: ExitConfig,
}

/// Read, deserialize and validate a configuration file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let config = parse_config_str(&text).with_context(|| format!("in config {}", path.display()))?;
    Ok(config)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
        anyhow::anyhow!("parse error at line {}, column {}: {e}", e.line(), e.column())
    })?;
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    /// Check every invariant and report all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let Err(e) = TorusGrid::new(self.grid.dim, self.grid.size, self.grid.side) {
            problems.push(format!("grid: {e}"));
        }
        match &self.curvature {
            CurvatureConfig::Constant { value } if !(*value < 0.0) => {
                problems.push(format!("curvature.value = {value} must be negative somewhere"))
            }
            CurvatureConfig::File { path } if !path.exists() => {
                problems.push(format!("curvature.path {} does not exist", path.display()))
            }
            CurvatureConfig::DoublePeak(dp) => problems.extend(self.double_peak_problems(dp)),
            _ => {}
        }
        if self.homotopy.taus < 2 {
            problems.push("homotopy.taus must be at least 2".into());
        }
        if !(self.expansion.peak == 1 || self.expansion.peak == 2) {
            problems.push(format!("expansion.peak = {} must be 1 or 2", self.expansion.peak));
        }
        if !(self.transversality.gamma > 0.0) || !(self.transversality.j_cap_factor > 0.0) {
            problems.push("transversality.gamma and transversality.j_cap_factor must be positive".into());
        }
        if !(self.transversality.center_jitter >= 0.0) || !(self.transversality.noise >= 0.0) {
            problems.push("transversality.center_jitter and transversality.noise must be nonnegative".into());
        }
        if self.flow.sample_every == 0 {
            problems.push("flow.sample_every must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            bail!("validation failed:\n  - {}", problems.join("\n  - "))
        }
    }

    fn double_peak_problems(&self, dp: &DoublePeakConfig) -> Vec<String> {
        let mut problems = Vec::new();
        let side = self.grid.side;
        let cutoff = dp.cutoff.unwrap_or(side / 8.0);
        if let Some(peaks) = &dp.peaks {
            if peaks.iter().any(|p| p.len() != self.grid.dim) {
                problems.push(format!("curvature.peaks must have {} coordinates", self.grid.dim));
            } else {
                let sep = torus_distance(&Point::new(peaks[0].clone()), &Point::new(peaks[1].clone()), side);
                if sep <= 4.0 * cutoff {
                    problems.push(format!(
                        "curvature.peaks are {sep:.4} apart; the separation must exceed 4 eps = {:.4}",
                        4.0 * cutoff
                    ));
                }
            }
        }
        if let Some(offset) = dp.offset {
            if !(offset > 0.0 && offset < 1.0) {
                problems.push(format!("curvature.offset = {offset} outside (0, 1)"));
            }
        }
        if dp.sharpness.iter().any(|s| !(*s > 0.0)) {
            problems.push("curvature.sharpness must be positive".into());
        }
        if !(cutoff > 0.0 && cutoff <= side / 8.0) {
            problems.push(format!("curvature.cutoff = {cutoff} outside (0, L/8]"));
        }
        problems
    }

    pub fn grid(&self) -> Result<Arc<TorusGrid>> {
        Ok(TorusGrid::new(self.grid.dim, self.grid.size, self.grid.side)?)
    }

    /// The double-peak spec of the configuration, falling back to defaults
    /// when the curvature is of another kind.
    pub fn double_peak(&self) -> DoublePeakSpec {
        let dp = match &self.curvature {
            CurvatureConfig::DoublePeak(dp) => dp.clone(),
            _ => DoublePeakConfig::default(),
        };
        let mut spec = DoublePeakSpec::standard(self.grid.dim, self.grid.size);
        spec.side = self.grid.side;
        spec.cutoff = Cutoff::new(dp.cutoff.unwrap_or(self.grid.side / 8.0));
        spec.peaks = match dp.peaks {
            Some([a, b]) => [Point::new(a), Point::new(b)],
            None => [Point::splat(spec.dim, spec.side / 4.0), Point::splat(spec.dim, 0.75 * spec.side)],
        };
        spec.sharpness = dp.sharpness;
        let c1 = exitset_core::bubbles::InteractionConstants::closed_form(spec.dim).c1;
        spec.offset =
            dp.offset.unwrap_or_else(|| exitset_core::exitset::alpha_bar(spec.dim, spec.volume(), c1, dp.margin));
        spec
    }

    pub fn curvature(&self) -> Result<CurvatureField> {
        let grid = self.grid()?;
        Ok(match &self.curvature {
            CurvatureConfig::Constant { value } => CurvatureField::constant(&grid, *value)?,
            CurvatureConfig::DoublePeak(_) => exitset_core::exitset::build_kdp(&self.double_peak())?.curvature,
            CurvatureConfig::File { path } => {
                let file = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
                let field = ScalarField::read_from(std::io::BufReader::new(file))?;
                let g = field.grid();
                if (g.dim(), g.size(), g.side()) != (grid.dim(), grid.size(), grid.side()) {
                    bail!("curvature file grid ({}, {}, {}) differs from the configured grid", g.dim(), g.size(), g.side());
                }
                let resampled = ScalarField::new(grid, field.into_values())?;
                CurvatureField::new(resampled)?
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse_config_str(r#"{"grid": {}}"#).unwrap();
        assert_eq!(c.grid, GridConfig { dim: 3, size: 64, side: 2.0 * PI });
        assert_eq!(c.curvature, CurvatureConfig::Constant { value: -1.0 });
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse_config_str(r#"{"grid": {"dims": 3}}"#).unwrap_err().to_string();
        assert!(err.contains("dims") && err.contains("line 1"), "{err}");
    }

    #[test]
    fn every_violation_listed() {
        let err = parse_config_str(r#"{"grid": {"size": 63}, "homotopy": {"taus": 1}}"#).unwrap_err().to_string();
        assert!(err.contains("power of two") && err.contains("homotopy.taus"), "{err}");
    }
}
