//! Experiment configuration. Every section is optional in the file and falls
//! back to the defaults below; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use twinfeed::channel::ClusterConfig;
use twinfeed::dataset::PerturbSpec;
use twinfeed::neural::{QuantizerSpec, Topology, TrainConfig};
use twinfeed::precoder::SystemConfig;
use twinfeed::scene::{PatternSpec, PresetName, PresetOptions};
use twinfeed::type2::Type2Config;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Run directory; `--out` takes precedence.
    pub out: Option<PathBuf>,
    pub system: SystemConfig,
    pub scene: SceneSection,
    pub cluster: ClusterConfig,
    pub perturbation: PerturbSpec,
    pub type2: Type2Section,
    pub neural: NeuralSection,
    pub training: TrainConfig,
    pub online: OnlineSection,
    pub antenna: AntennaSection,
    pub eval: EvalSection,
    pub report: ReportSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: None,
            system: SystemConfig::default(),
            scene: SceneSection::default(),
            cluster: ClusterConfig::default(),
            perturbation: PerturbSpec::rw_proxy(),
            type2: Type2Section::default(),
            neural: NeuralSection::default(),
            training: TrainConfig { epochs: 10, ..TrainConfig::default() },
            online: OnlineSection::default(),
            antenna: AntennaSection::default(),
            eval: EvalSection::default(),
            report: ReportSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    /// Indoor twin; its RW-proxy is the evaluation domain.
    pub indoor: String,
    pub outdoor: String,
    pub options: PresetOptions,
    /// Share of indoor positions held out of indoor training for the DT column.
    pub dt_test_fraction: f64,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            indoor: "corridor".into(),
            outdoor: "campus_square".into(),
            options: PresetOptions::default(),
            dt_test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Type2Section {
    pub beams: Vec<usize>,
    pub oversampling: usize,
    pub amplitude_bits: u32,
    pub phase_bits: u32,
    pub wideband: bool,
}

impl Default for Type2Section {
    fn default() -> Self {
        let d = Type2Config::default();
        Self {
            beams: vec![2, 3, 4],
            oversampling: d.oversampling,
            amplitude_bits: d.amplitude_bits,
            phase_bits: d.phase_bits,
            wideband: d.wideband,
        }
    }
}

impl Type2Section {
    pub fn configs(&self, sys: &SystemConfig) -> Vec<Type2Config> {
        self.beams
            .iter()
            .map(|&n_beams| Type2Config {
                n_tx: sys.n_tx,
                n_streams: sys.n_streams,
                n_beams,
                oversampling: self.oversampling,
                amplitude_bits: self.amplitude_bits,
                phase_bits: self.phase_bits,
                wideband: self.wideband,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuralSection {
    pub topology: Topology,
    pub quantizer: QuantizerSpec,
}

/// Decoder-only fine-tuning on a share of the RW-proxy positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineSection {
    pub fraction: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for OnlineSection {
    fn default() -> Self {
        Self { fraction: 0.3, learning_rate: 3e-4, epochs: 2, batch_size: 64 }
    }
}

impl OnlineSection {
    pub fn train_config(&self, base: &TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            validation_fraction: 0.0,
            ..base.clone()
        }
    }
}

/// Antenna-pattern sensitivity study on the indoor twin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AntennaSection {
    pub ue_swap: PatternSpec,
    pub bs_swap: PatternSpec,
    pub ol_fraction: f64,
}

impl Default for AntennaSection {
    fn default() -> Self {
        Self { ue_swap: PatternSpec::patch(2.0), bs_swap: PatternSpec::dipole(), ol_fraction: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Transmit SNR of the rate proxy.
    pub snr_db: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { snr_db: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    /// Subband whose precoders feed the similarity heatmaps.
    pub heatmap_subband: usize,
    /// At most this many positions per heatmap, evenly strided.
    pub heatmap_positions: usize,
    /// Table I probe locations as `(x, y)`; the nearest grid position is used.
    pub probes: Vec<(f64, f64)>,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            heatmap_subband: 0,
            heatmap_positions: 64,
            probes: vec![(3.0, 1.0), (7.0, 2.0), (11.0, 1.0), (15.0, 2.0), (18.5, 1.5)],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::MissingInput(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn indoor_preset(&self) -> Result<PresetName, CliError> {
        self.scene.indoor.parse().map_err(|e: twinfeed::Error| CliError::Config(e.to_string()))
    }

    pub fn outdoor_preset(&self) -> Result<PresetName, CliError> {
        self.scene.outdoor.parse().map_err(|e: twinfeed::Error| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: twinfeed::Error| CliError::Config(e.to_string());
        self.system.validate().map_err(cfg)?;
        self.indoor_preset()?;
        self.outdoor_preset()?;
        self.perturbation.validate().map_err(cfg)?;
        if self.cluster.n_clusters == 0 || self.cluster.rays_per_cluster == 0 {
            return Err(CliError::Config("cluster: n_clusters and rays_per_cluster must be positive".into()));
        }
        let t = &self.neural.topology;
        t.validate().map_err(cfg)?;
        if t.n_tx() != self.system.n_tx || t.n_streams != self.system.n_streams {
            return Err(CliError::Config(format!(
                "neural.topology input {} does not match {} streams of {} antennas",
                t.input, self.system.n_streams, self.system.n_tx
            )));
        }
        if !(1..=8).contains(&self.neural.quantizer.bits_per_element) {
            return Err(CliError::Config("neural.quantizer.bits_per_element must be in 1..=8".into()));
        }
        self.training.validate().map_err(cfg)?;
        self.online.train_config(&self.training, self.seed).validate().map_err(cfg)?;
        if self.type2.beams.is_empty() {
            return Err(CliError::Config("type2.beams is empty".into()));
        }
        for c in self.type2.configs(&self.system) {
            c.validate().map_err(cfg)?;
        }
        for (name, f) in [
            ("scene.dt_test_fraction", self.scene.dt_test_fraction),
            ("online.fraction", self.online.fraction),
            ("antenna.ol_fraction", self.antenna.ol_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(CliError::Config(format!("{name} = {f} outside (0, 1)")));
            }
        }
        if !self.eval.snr_db.is_finite() {
            return Err(CliError::Config("eval.snr_db must be finite".into()));
        }
        if self.report.heatmap_subband >= self.system.grid.n_subbands {
            return Err(CliError::Config(format!(
                "report.heatmap_subband {} outside {} subbands",
                self.report.heatmap_subband, self.system.grid.n_subbands
            )));
        }
        if self.report.heatmap_positions < 2 {
            return Err(CliError::Config("report.heatmap_positions must be at least 2".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = ExperimentConfig::from_toml("[training]\nlearnig_rate = 0.1\n").unwrap_err();
        assert!(matches!(&e, CliError::Config(m) if m.contains("learnig_rate")), "{e}");
    }

    #[test]
    fn bad_values_rejected() {
        for text in [
            "[online]\nfraction = 1.5\n",
            "[type2]\nbeams = [9]\n",
            "[scene]\nindoor = \"moon\"\n",
            "[system]\nn_streams = 3\n",
        ] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(CliError::Config(_))), "{text}");
        }
    }
}
