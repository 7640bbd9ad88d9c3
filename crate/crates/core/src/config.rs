//! Run configuration: one JSON document drives generation, training and
//! every experiment. Unknown keys are rejected.

use crate::heedful::{EncoderPolicy, PoolingTail};
use crate::impair::{PopulationConfig, Scenario};
use crate::waveform::Protocol;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub wired_snr_db: f64,
    pub wireless_snr_db: f64,
    /// Per-day receiver gain offset drawn uniformly in +-this many dB.
    pub rx_gain_spread_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelineSegment {
    pub t_lo_min: f64,
    pub t_hi_min: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_devices: usize,
    pub n_days: usize,
    pub frames_per_device_per_day: usize,
    /// Where frames land on the 0-30 minute power-on timeline.
    pub timeline: Vec<TimelineSegment>,
    pub protocols: Vec<Protocol>,
    pub scenarios: Vec<Scenario>,
    pub dsss_payload_bits: usize,
    pub dsss_oversample: usize,
    pub dsss_rrc_shaping: bool,
    pub ofdm_data_symbols: usize,
    pub ofdm_oversample: usize,
    /// Capture padding around the burst, output samples.
    pub pre_pad_samples: usize,
    pub post_pad_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub conv_filters: Vec<usize>,
    pub dense_units: (usize, usize),
    pub kernel_w: usize,
    /// NN input window, samples (head slice of each record).
    pub window_len: usize,
    pub pooling_tail: PoolingTail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingBlock {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub split_fractions: (f64, f64, f64),
    pub stabilization_min: f64,
    pub encoder_policy: EncoderPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Which exposure experiments `rff exposure` runs.
    pub exposure: Vec<String>,
    /// Run the per-single-impairment sweep in `rff subsets`.
    pub subset_singles: bool,
    /// Warm-up report windows (cumulative), minutes.
    pub report_windows: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub population: PopulationConfig,
    pub channel: ChannelConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub training: TrainingBlock,
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    /// Desk-scale preset: the full pipeline runs on a laptop CPU.
    pub fn desk() -> Self {
        RunConfig {
            master_seed: 1,
            population: PopulationConfig::default(),
            channel: ChannelConfig {
                wired_snr_db: 40.0,
                wireless_snr_db: 25.0,
                rx_gain_spread_db: 0.15,
            },
            dataset: DatasetConfig {
                n_devices: 9,
                n_days: 2,
                frames_per_device_per_day: 400,
                timeline: vec![
                    TimelineSegment { t_lo_min: 0.0, t_hi_min: 2.0, fraction: 0.15 },
                    TimelineSegment { t_lo_min: 2.0, t_hi_min: 6.0, fraction: 0.25 },
                    TimelineSegment { t_lo_min: 6.0, t_hi_min: 12.0, fraction: 0.20 },
                    TimelineSegment { t_lo_min: 12.0, t_hi_min: 30.0, fraction: 0.40 },
                ],
                protocols: vec![Protocol::DsssB],
                scenarios: vec![Scenario::Wired, Scenario::Wireless],
                dsss_payload_bits: 29,
                dsss_oversample: 2,
                dsss_rrc_shaping: true,
                ofdm_data_symbols: 12,
                ofdm_oversample: 1,
                pre_pad_samples: 0,
                post_pad_samples: 0,
            },
            model: ModelConfig {
                conv_filters: vec![32, 16, 8, 8],
                dense_units: (256, 128),
                kernel_w: 7,
                window_len: 1024,
                pooling_tail: PoolingTail::Flatten,
            },
            training: TrainingBlock {
                epochs: 20,
                batch_size: 32,
                lr: 2.5e-4,
                split_fractions: (0.6, 0.2, 0.2),
                stabilization_min: 12.0,
                encoder_policy: EncoderPolicy::FineTune,
            },
            experiment: ExperimentConfig {
                exposure: vec!["EXP1".into(), "EXP2".into(), "EXP3".into()],
                subset_singles: true,
                report_windows: vec![2.0, 4.0, 6.0],
            },
        }
    }

    /// Full-fidelity preset: 15 devices, whole-frame inputs, wide filters.
    /// Orders of magnitude slower than the desk preset.
    pub fn paper() -> Self {
        let mut cfg = Self::desk();
        cfg.dataset.n_devices = 15;
        cfg.dataset.frames_per_device_per_day = 3000;
        cfg.dataset.dsss_payload_bits = 1531; // (64+1531) symbols * 11 = 17545 chips
        cfg.dataset.dsss_oversample = 1;
        cfg.dataset.dsss_rrc_shaping = false;
        cfg.dataset.ofdm_data_symbols = 8;
        cfg.model.conv_filters = vec![256, 128, 64, 32];
        cfg.model.window_len = 16384;
        cfg
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| ConfigError::Parse(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.n_devices < 2 {
            return Err(ConfigError::Invalid("need at least 2 devices".into()));
        }
        if d.n_days == 0 || d.frames_per_device_per_day == 0 {
            return Err(ConfigError::Invalid("empty dataset".into()));
        }
        let frac: f64 = d.timeline.iter().map(|s| s.fraction).sum();
        if (frac - 1.0).abs() > 1e-9 {
            return Err(ConfigError::Invalid(format!(
                "timeline fractions sum to {frac}, expected 1"
            )));
        }
        for s in &d.timeline {
            if s.t_hi_min <= s.t_lo_min || s.t_lo_min < 0.0 {
                return Err(ConfigError::Invalid(format!(
                    "bad timeline segment [{}, {})",
                    s.t_lo_min, s.t_hi_min
                )));
            }
        }
        if d.protocols.is_empty() || d.scenarios.is_empty() {
            return Err(ConfigError::Invalid("no protocols or scenarios".into()));
        }
        if self.model.conv_filters.len() != 4 {
            return Err(ConfigError::Invalid("need exactly 4 conv filters".into()));
        }
        let (a, b, c) = self.training.split_fractions;
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(ConfigError::Invalid("split fractions must sum to 1".into()));
        }
        if d.dsss_rrc_shaping && d.dsss_oversample < 2 {
            return Err(ConfigError::Invalid(
                "RRC shaping needs dsss_oversample >= 2".into(),
            ));
        }
        Ok(())
    }

    /// Frame spec for one protocol, payload filled per content seed.
    pub fn frame_spec(&self, protocol: Protocol, payload_seed: u64) -> crate::waveform::FrameSpec {
        use crate::waveform::{prbs_bits, FrameSpec, OFDM_BITS_PER_SYMBOL};
        match protocol {
            Protocol::DsssB => {
                let mut spec = FrameSpec::dsss(
                    prbs_bits(self.dataset.dsss_payload_bits, payload_seed),
                    self.dataset.dsss_oversample,
                );
                spec.rrc_shaping = self.dataset.dsss_rrc_shaping;
                spec
            }
            Protocol::OfdmN => FrameSpec::ofdm(
                prbs_bits(
                    self.dataset.ofdm_data_symbols * OFDM_BITS_PER_SYMBOL,
                    payload_seed,
                ),
                self.dataset.ofdm_oversample,
            ),
        }
    }
}

/// Hash over the canonicalized config JSON (sorted keys); changes exactly
/// when any generation parameter changes.
pub fn config_hash(cfg: &RunConfig) -> String {
    let value = serde_json::to_value(cfg).expect("config serializes");
    let canonical = serde_json::to_string(&value).expect("value serializes");
    let mut h = Sha256::new();
    h.update(canonical.as_bytes());
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_preset_validates() {
        RunConfig::desk().validate().unwrap();
        RunConfig::paper().validate().unwrap();
    }

    #[test]
    fn hash_changes_iff_a_parameter_changes() {
        let a = RunConfig::desk();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.channel.wired_snr_db = 39.0;
        assert_ne!(config_hash(&a), config_hash(&b));
        let mut c = a.clone();
        c.master_seed += 1;
        assert_ne!(config_hash(&a), config_hash(&c));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut value = serde_json::to_value(RunConfig::desk()).unwrap();
        value["bogus_key"] = serde_json::json!(1);
        let text = serde_json::to_string(&value).unwrap();
        assert!(serde_json::from_str::<RunConfig>(&text).is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = RunConfig::desk();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn bad_timeline_is_rejected() {
        let mut cfg = RunConfig::desk();
        cfg.dataset.timeline[0].fraction = 0.5;
        assert!(cfg.validate().is_err());
    }
}
