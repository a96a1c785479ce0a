//! Run configuration file (TOML).

use std::path::{Path, PathBuf};

use holotomo::baseline::PaganinConfig;
use holotomo::forward::derive_geometry;
use holotomo::phantom::{NoiseSpec, ProbeSpec};
use holotomo::pipeline::{ConventionalParams, PhantomParams, ProposedParams, ScanParams};
use holotomo::solver::{Mode, SolverConfig};
use serde::Deserialize;

use crate::CliError;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of the measurement noise.
    #[serde(default)]
    pub seed: u64,
    pub geometry: GeometryConfig,
    pub phantom: PhantomConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub conventional: ConventionalSection,
    #[serde(default)]
    pub tomo: TomoSection,
    #[serde(default)]
    pub paths: PathsConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub z_total: f64,
    pub z1: Vec<f64>,
    pub wavelength: f64,
    /// Checked against `voxel_size · m0` when given.
    pub detector_pixel: Option<f64>,
    /// Block-average the measured frames by this factor before
    /// reconstruction.
    #[serde(default = "one")]
    pub binning: usize,
    pub n_angles: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    pub n: usize,
    pub voxel_size: f64,
    pub layer_deltas: Vec<f64>,
    pub layer_thicknesses: Vec<usize>,
}

#[derive(Clone, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeKind {
    Synthetic,
    Flat,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub kind: ProbeKind,
    pub stripe_count: usize,
    pub amplitude_contrast: f64,
    pub phase_amplitude: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            kind: ProbeKind::Synthetic,
            stripe_count: 8,
            amplitude_contrast: 0.3,
            phase_amplitude: 1.0,
            seed: 3,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub enabled: bool,
    pub scale: f64,
    pub photons: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            scale: 20.0,
            photons: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    Amplitude,
    Intensity,
}

impl From<ModeName> for Mode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::Amplitude => Mode::Amplitude,
            ModeName::Intensity => Mode::Intensity,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub mode: ModeName,
    /// `[bin factor, iterations]` per level, coarsest first.
    pub schedule: Vec<(usize, usize)>,
    pub probe_subset: Option<usize>,
    pub probe_interval: usize,
    pub tolerance: f64,
    /// Angles per independently solved chunk; all angles when absent.
    pub chunk_size: Option<usize>,
    pub air_border: usize,
    pub delta_beta: f64,
    pub paganin_alpha: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let p = PaganinConfig::default();
        Self {
            mode: ModeName::Amplitude,
            schedule: vec![(1, 300)],
            probe_subset: None,
            probe_interval: 1,
            tolerance: 0.0,
            chunk_size: None,
            air_border: 4,
            delta_beta: p.delta_beta,
            paganin_alpha: p.alpha,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConventionalSection {
    pub iterations: usize,
}

impl Default for ConventionalSection {
    fn default() -> Self {
        Self { iterations: 100 }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TomoSection {
    pub iterations: usize,
}

impl Default for TomoSection {
    fn default() -> Self {
        Self { iterations: 10 }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Dataset directory read by the reconstruction stages; defaults to the
    /// output of `simulate`.
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

fn one() -> usize {
    1
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::new("invalid-config", msg)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new("missing-input", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| invalid(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every block against the library invariants so that no stage
    /// starts on a bad configuration.
    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.geometry;
        let geometry = derive_geometry(g.z_total, &g.z1, g.wavelength).map_err(|e| invalid(e.to_string()))?;
        if g.n_angles == 0 {
            return Err(invalid("geometry.n_angles must be at least 1"));
        }
        let p = &self.phantom;
        if !(p.voxel_size > 0.0) {
            return Err(invalid("phantom.voxel_size must be positive"));
        }
        if g.binning == 0 || !g.binning.is_power_of_two() || p.n % g.binning != 0 {
            return Err(invalid("geometry.binning must be a power of two dividing phantom.n"));
        }
        if let Some(d) = g.detector_pixel {
            let expect = p.voxel_size * geometry.m0();
            if (d - expect).abs() > 1e-3 * expect {
                return Err(invalid(format!(
                    "geometry.detector_pixel {d:e} does not match voxel_size·m0 = {expect:e}"
                )));
            }
        }
        if p.layer_deltas.len() != p.layer_thicknesses.len() {
            return Err(invalid("phantom.layer_deltas and phantom.layer_thicknesses differ in length"));
        }
        if p.n < 32 || 4 * p.layer_thicknesses.iter().sum::<usize>() > p.n {
            return Err(invalid("phantom layers do not fit inside the cube"));
        }
        if let Some(spec) = self.probe_spec() {
            holotomo::phantom::synth_probe(p.n, p.voxel_size, g.wavelength, &spec).map_err(|e| invalid(e.to_string()))?;
        }
        self.noise_spec().validate().map_err(|e| invalid(e.to_string()))?;
        let solver = self.solver_config();
        solver.validate().map_err(|e| invalid(e.to_string()))?;
        let n = p.n / g.binning;
        let first = solver.schedule[0].0;
        if n % first != 0 || n / first < 2 {
            return Err(invalid(format!("schedule bin factor {first} does not divide the grid {n}")));
        }
        let s = &self.solver;
        if s.probe_subset == Some(0) || s.chunk_size == Some(0) {
            return Err(invalid("solver.probe_subset and solver.chunk_size must be at least 1"));
        }
        if 2 * s.air_border >= n {
            return Err(invalid("solver.air_border is wider than the grid"));
        }
        if !(s.delta_beta > 0.0 && s.paganin_alpha > 0.0) {
            return Err(invalid("solver.delta_beta and solver.paganin_alpha must be positive"));
        }
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.paths.output.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.paths.dataset.clone().unwrap_or_else(|| self.output_dir().join("simulate"))
    }

    pub fn phantom_params(&self) -> PhantomParams {
        let p = &self.phantom;
        PhantomParams {
            n: p.n,
            voxel_size: p.voxel_size,
            layer_deltas: p.layer_deltas.clone(),
            layer_thicknesses: p.layer_thicknesses.clone(),
        }
    }

    pub fn probe_spec(&self) -> Option<ProbeSpec> {
        let p = &self.probe;
        (p.kind == ProbeKind::Synthetic).then_some(ProbeSpec {
            stripe_count: p.stripe_count,
            amplitude_contrast: p.amplitude_contrast,
            phase_amplitude: p.phase_amplitude,
            seed: p.seed,
        })
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec {
            enabled: self.noise.enabled,
            scale: self.noise.scale,
            seed: self.seed,
            photons: self.noise.photons,
        }
    }

    pub fn scan_params(&self) -> ScanParams {
        let g = &self.geometry;
        ScanParams {
            z_total: g.z_total,
            z1: g.z1.clone(),
            wavelength: g.wavelength,
            n_angles: g.n_angles,
            probe: self.probe_spec(),
            noise: self.noise_spec(),
        }
    }

    fn paganin(&self) -> PaganinConfig {
        PaganinConfig {
            delta_beta: self.solver.delta_beta,
            alpha: self.solver.paganin_alpha,
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            mode: s.mode.into(),
            schedule: s.schedule.clone(),
            probe_subset: s.probe_subset,
            tolerance: s.tolerance,
            probe_interval: s.probe_interval,
            ..SolverConfig::default()
        }
    }

    pub fn proposed_params(&self) -> ProposedParams {
        ProposedParams {
            solver: self.solver_config(),
            paganin: self.paganin(),
            chunk_size: self.solver.chunk_size,
            air_border: self.solver.air_border,
        }
    }

    pub fn conventional_params(&self) -> ConventionalParams {
        ConventionalParams {
            paganin: self.paganin(),
            iterations: self.conventional.iterations,
            mode: self.solver.mode.into(),
            air_border: self.solver.air_border,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [geometry]
        z_total = 1.208
        z1 = [4.026e-3, 4.199e-3]
        wavelength = 7.27183e-11
        n_angles = 4

        [phantom]
        n = 32
        voxel_size = 8e-8
        layer_deltas = [1e-6]
        layer_thicknesses = [2]
    "#;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.solver.schedule, vec![(1, 300)]);
        assert_eq!(c.tomo.iterations, 10);
        assert_eq!(c.dataset_dir(), PathBuf::from("out/simulate"));
        assert!(c.probe_spec().is_some());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\nbogus = 1\n");
        let err = RunConfig::parse(&text).unwrap_err();
        assert_eq!(err.category, "invalid-config");
        let text = MINIMAL.replace("n_angles = 4", "n_angles = 4\nangles = 5");
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn invariants_are_checked() {
        for (from, to) in [
            ("n_angles = 4", "n_angles = 0"),
            ("layer_thicknesses = [2]", "layer_thicknesses = [9]"),
            ("layer_deltas = [1e-6]", "layer_deltas = [1e-6, 1e-6]"),
            ("z1 = [4.026e-3, 4.199e-3]", "z1 = [4.199e-3, 4.026e-3]"),
        ] {
            let text = MINIMAL.replace(from, to);
            assert!(RunConfig::parse(&text).is_err(), "{to}");
        }
        let bad_schedule = format!("{MINIMAL}\n[solver]\nschedule = [[1, 5], [2, 5]]\n");
        assert!(RunConfig::parse(&bad_schedule).is_err());
        let pixel = MINIMAL.replace("n_angles = 4", "n_angles = 4\ndetector_pixel = 1e-3");
        assert!(RunConfig::parse(&pixel).is_err());
    }

    #[test]
    fn shipped_profiles_parse() {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for name in ["desk64.toml", "id16a.toml"] {
            RunConfig::load(&root.join(name)).unwrap_or_else(|e| panic!("{name}: {}", e.message));
        }
    }
}
