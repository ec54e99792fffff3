//! Pipeline configuration file.
//!
//! A single TOML document; every table and key is optional and falls back to
//! the KITTI defaults below. Angles are in degrees. Keys can be overridden on
//! the command line with `--set table.key=value`, where `value` is a TOML
//! literal (bare words are taken as strings).
//!
//! ```toml
//! [spherical_grid]
//! r_range = [2.24, 70.72]          # m
//! phi_range = [-40.69, 40.69]      # deg
//! theta_range = [-16.6, 4.0]       # deg
//! voxel = [0.32, 0.52, 0.42]       # m, deg, deg
//!
//! [cartesian_grid]
//! x_range = [0.0, 70.4]
//! y_range = [-40.0, 40.0]
//! z_range = [-3.0, 1.0]
//! voxel = [0.05, 0.05, 0.1]
//!
//! [signal_miss]
//! max_region_pixels = 200
//! extent = "full"                  # or "bracketed"
//!
//! [shape_loss]
//! gamma = 2.0
//! delta = 0.2
//!
//! [roi]
//! mu = 1.05
//! lambda = 0.25
//! dims = [12, 4, 2]
//!
//! [assembly]
//! alpha = 2.0
//! beta = 1.0
//! match_voxel_size = 0.1
//! strict_fill = false              # borrow only into shape-miss voxels
//!
//! [anchors]
//! fallback = true                  # best anchor per box is always foreground
//!
//! [evaluation]
//! thresholds = [0.3, 0.5, 0.7]
//! pyramid_levels = 3
//!
//! [recovery]
//! intensity = 0.5
//! mode = "points"                  # or "voxel_centers"
//! ```

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use shapemiss::assembly::HeuristicParams;
use shapemiss::boxes::RoiGridParams;
use shapemiss::metrics::{RecoveryMode, RecoveryParams};
use shapemiss::occlusion::{SignalMissExtent, SignalMissParams};
use shapemiss::occupancy::ShapeLossParams;
use shapemiss::{CartesianGrid, SphericalGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// Dotted key path, or `<file>` for errors not tied to one key.
    pub field: String,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config `{}`: {}", self.field, self.msg)
    }
}

impl std::error::Error for ConfigError {}

fn fail<T>(field: &str, msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError { field: field.to_string(), msg: msg.into() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SphericalGridConfig {
    pub r_range: [f64; 2],
    pub phi_range: [f64; 2],
    pub theta_range: [f64; 2],
    pub voxel: [f64; 3],
}

impl Default for SphericalGridConfig {
    fn default() -> Self {
        Self {
            r_range: [2.24, 70.72],
            phi_range: [-40.69, 40.69],
            theta_range: [-16.6, 4.0],
            voxel: [0.32, 0.52, 0.42],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartesianGridConfig {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub z_range: [f64; 2],
    pub voxel: [f64; 3],
}

impl Default for CartesianGridConfig {
    fn default() -> Self {
        Self { x_range: [0.0, 70.4], y_range: [-40.0, 40.0], z_range: [-3.0, 1.0], voxel: [0.05, 0.05, 0.1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalMissConfig {
    pub max_region_pixels: usize,
    pub extent: SignalMissExtent,
}

impl Default for SignalMissConfig {
    fn default() -> Self {
        let d = SignalMissParams::default();
        Self { max_region_pixels: d.max_region_pixels, extent: d.extent }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeLossConfig {
    pub gamma: f64,
    pub delta: f64,
}

impl Default for ShapeLossConfig {
    fn default() -> Self {
        Self { gamma: 2.0, delta: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoiConfig {
    pub mu: f64,
    pub lambda: f64,
    pub dims: [usize; 3],
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self { mu: 1.05, lambda: 0.25, dims: [12, 4, 2] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssemblyConfig {
    pub alpha: f64,
    pub beta: f64,
    pub match_voxel_size: f64,
    pub strict_fill: bool,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        let h = HeuristicParams::default();
        Self { alpha: h.alpha, beta: h.beta, match_voxel_size: h.match_voxel_size, strict_fill: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorConfig {
    pub fallback: bool,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self { fallback: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub thresholds: Vec<f64>,
    pub pyramid_levels: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { thresholds: shapemiss::metrics::DEFAULT_THRESHOLDS.to_vec(), pyramid_levels: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryConfig {
    pub intensity: f64,
    pub mode: RecoveryMode,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        let r = RecoveryParams::default();
        Self { intensity: r.intensity, mode: r.mode }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub spherical_grid: SphericalGridConfig,
    pub cartesian_grid: CartesianGridConfig,
    pub signal_miss: SignalMissConfig,
    pub shape_loss: ShapeLossConfig,
    pub roi: RoiConfig,
    pub assembly: AssemblyConfig,
    pub anchors: AnchorConfig,
    pub evaluation: EvaluationConfig,
    pub recovery: RecoveryConfig,
}

/// Applies one `key.path=value` override to a parsed document.
fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let Some((path, raw)) = spec.split_once('=') else {
        return fail(spec, "override must look like `table.key=value`");
    };
    let path = path.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return fail(path, "empty key in override path");
    }
    let mut table = doc;
    for k in &keys[..keys.len() - 1] {
        let entry = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => return fail(path, format!("`{k}` is not a table")),
        };
    }
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

impl PipelineConfig {
    /// Parses a document, applies overrides, and validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc: toml::Table = match toml::from_str(text) {
            Ok(d) => d,
            Err(e) => return fail("<file>", e.message().to_string()),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = match toml::Value::Table(doc).try_into() {
            Ok(c) => c,
            Err(e) => return fail("<file>", e.to_string().trim().to_string()),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => match std::fs::read_to_string(p) {
                Ok(t) => t,
                Err(e) => return fail("<file>", format!("{}: {e}", p.display())),
            },
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    /// Turns off behaviour that goes beyond the published method.
    pub fn strict_paper(&mut self) {
        self.assembly.strict_fill = true;
        self.anchors.fallback = false;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.spherical_grid()?;
        self.cartesian_grid()?;
        let pos = |f: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                fail(f, format!("must be positive, got {v}"))
            }
        };
        let nonneg = |f: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                fail(f, format!("must be >= 0, got {v}"))
            }
        };
        if self.signal_miss.max_region_pixels == 0 {
            return fail("signal_miss.max_region_pixels", "must be at least 1");
        }
        nonneg("shape_loss.gamma", self.shape_loss.gamma)?;
        let d = self.shape_loss.delta;
        if !(d > 0.0 && d <= 1.0) {
            return fail("shape_loss.delta", format!("must be in (0, 1], got {d}"));
        }
        pos("roi.mu", self.roi.mu)?;
        nonneg("roi.lambda", self.roi.lambda)?;
        if self.roi.dims.contains(&0) {
            return fail("roi.dims", "every dimension must be at least 1");
        }
        nonneg("assembly.alpha", self.assembly.alpha)?;
        nonneg("assembly.beta", self.assembly.beta)?;
        pos("assembly.match_voxel_size", self.assembly.match_voxel_size)?;
        let t = &self.evaluation.thresholds;
        if t.is_empty() {
            return fail("evaluation.thresholds", "needs at least one threshold");
        }
        if let Some(bad) = t.iter().find(|v| !(**v >= 0.0 && **v < 1.0)) {
            return fail("evaluation.thresholds", format!("{bad} is not in [0, 1)"));
        }
        if t.windows(2).any(|w| w[0] >= w[1]) {
            return fail("evaluation.thresholds", "must be strictly increasing");
        }
        if self.evaluation.pyramid_levels == 0 {
            return fail("evaluation.pyramid_levels", "must be at least 1");
        }
        let i = self.recovery.intensity;
        if !(0.0..=1.0).contains(&i) {
            return fail("recovery.intensity", format!("must be in [0, 1], got {i}"));
        }
        Ok(())
    }

    pub fn spherical_grid(&self) -> Result<SphericalGrid, ConfigError> {
        let g = &self.spherical_grid;
        SphericalGrid::from_degrees(g.r_range, g.phi_range, g.theta_range, g.voxel)
            .or_else(|e| fail("spherical_grid", e.to_string()))
    }

    pub fn cartesian_grid(&self) -> Result<CartesianGrid, ConfigError> {
        let g = &self.cartesian_grid;
        CartesianGrid::new(g.x_range, g.y_range, g.z_range, g.voxel).or_else(|e| fail("cartesian_grid", e.to_string()))
    }

    pub fn signal_miss_params(&self) -> SignalMissParams {
        SignalMissParams { max_region_pixels: self.signal_miss.max_region_pixels, extent: self.signal_miss.extent }
    }

    pub fn heuristic(&self) -> HeuristicParams {
        HeuristicParams {
            alpha: self.assembly.alpha,
            beta: self.assembly.beta,
            match_voxel_size: self.assembly.match_voxel_size,
        }
    }

    pub fn shape_loss_params(&self) -> ShapeLossParams {
        ShapeLossParams { gamma: self.shape_loss.gamma, delta: self.shape_loss.delta }
    }

    pub fn roi_params(&self) -> RoiGridParams {
        RoiGridParams { size_factor: self.roi.mu, shift: self.roi.lambda, dims: self.roi.dims, ..Default::default() }
    }

    pub fn recovery_params(&self) -> RecoveryParams {
        RecoveryParams { intensity: self.recovery.intensity, mode: self.recovery.mode }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_kitti_values() {
        let c = PipelineConfig::from_toml("", &[]).unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.spherical_grid().unwrap(), SphericalGrid::kitti());
        assert_eq!(c.cartesian_grid().unwrap(), CartesianGrid::kitti());
        assert_eq!((c.shape_loss.gamma, c.shape_loss.delta, c.roi.mu, c.roi.lambda), (2.0, 0.2, 1.05, 0.25));
        assert_eq!(c.evaluation.thresholds, vec![0.3, 0.5, 0.7]);
        assert_eq!(c.roi_params(), RoiGridParams::default());
    }

    #[test]
    fn errors_name_the_field() {
        let e = PipelineConfig::from_toml("[shape_loss]\ndelta = 0.0\n", &[]).unwrap_err();
        assert_eq!(e.field, "shape_loss.delta");
        let e = PipelineConfig::from_toml("", &["assembly.match_voxel_size=-1".into()]).unwrap_err();
        assert_eq!(e.field, "assembly.match_voxel_size");
        let e = PipelineConfig::from_toml("[spherical_grid]\nvoxel = [0.0, 1.0, 1.0]\n", &[]).unwrap_err();
        assert_eq!(e.field, "spherical_grid");
        let e = PipelineConfig::from_toml("[evaluation]\nthresholds = [0.5, 0.3]\n", &[]).unwrap_err();
        assert_eq!(e.field, "evaluation.thresholds");
        let e = PipelineConfig::from_toml("[assembly]\nalhpa = 1.0\n", &[]).unwrap_err();
        assert!(e.msg.contains("alhpa"), "{e}");
        assert!(PipelineConfig::from_toml("not toml [", &[]).is_err());
    }

    #[test]
    fn overrides_and_strict_mode() {
        let c = PipelineConfig::from_toml(
            "[assembly]\nalpha = 3.0\n",
            &[
                "assembly.beta=0.5".into(),
                "recovery.mode=voxel_centers".into(),
                "signal_miss.extent=\"bracketed\"".into(),
            ],
        )
        .unwrap();
        assert_eq!((c.assembly.alpha, c.assembly.beta), (3.0, 0.5));
        assert_eq!(c.recovery.mode, RecoveryMode::VoxelCenters);
        assert_eq!(c.signal_miss.extent, SignalMissExtent::Bracketed);
        assert!(PipelineConfig::from_toml("", &["nokey".into()]).is_err());
        let mut s = c.clone();
        s.strict_paper();
        assert!(s.assembly.strict_fill && !s.anchors.fallback);
    }
}
