//! Dataset generation: synthesize, impair, channel, measure, persist.

use super::{dataset_id, dataset_path, seeds_for, ExperimentError, LockGuard, Result};
use crate::config::{config_hash, RunConfig};
use crate::datastore::{write_dataset, DatasetManifest, FrameRecord};
use crate::impair::{
    apply_channel, apply_impairments, impairment_at, sample_profiles, ChannelState, DeviceProfile,
    Scenario,
};
use crate::metrology::{label_schema, measure};
use crate::waveform::{synth_frame, BasebandFrame, Protocol};
use num_complex::Complex32;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenSummary {
    pub config_hash: String,
    pub datasets: Vec<DatasetSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub id: String,
    pub records: usize,
    pub sync_failures: usize,
    pub sync_failures_per_device: Vec<(u32, usize)>,
}

/// Pad or trim to the nominal record length (resampling may move the count
/// by a sample).
fn fix_length(mut samples: Vec<Complex32>, nominal: usize) -> Vec<Complex32> {
    samples.resize(nominal, Complex32::new(0.0, 0.0));
    samples
}

/// Generate every configured (protocol, scenario, day) dataset. Device
/// profiles are drawn once and shared across days; the channel and the
/// receiver gain are re-drawn per day.
pub fn cmd_gen(cfg: &RunConfig, out_dir: &Path) -> Result<GenSummary> {
    let _lock = LockGuard::acquire(out_dir)?;
    cfg.validate()?;
    let hash = config_hash(cfg);
    std::fs::create_dir_all(out_dir.join("data"))?;

    let profiles = sample_profiles(
        cfg.dataset.n_devices,
        &cfg.population,
        seeds_for(cfg, "profiles", &[]),
    )?;

    let mut summary = GenSummary {
        config_hash: hash.clone(),
        datasets: Vec::new(),
    };

    for &protocol in &cfg.dataset.protocols {
        let p_id = protocol as u64;
        for &scenario in &cfg.dataset.scenarios {
            let s_id = scenario as u64;
            for day in 0..cfg.dataset.n_days as u32 {
                let records = generate_day(cfg, &profiles, protocol, scenario, day)?;
                let failed: usize = records.iter().filter(|r| !r.sync_ok).count();
                let mut per_device: Vec<(u32, usize)> = Vec::new();
                for rec in records.iter().filter(|r| !r.sync_ok) {
                    match per_device.iter_mut().find(|(d, _)| *d == rec.device_id) {
                        Some((_, c)) => *c += 1,
                        None => per_device.push((rec.device_id, 1)),
                    }
                }
                if failed * 100 > records.len() {
                    return Err(ExperimentError::TooManySyncFailures {
                        failed,
                        total: records.len(),
                        per_device,
                    });
                }

                let spec = cfg.frame_spec(protocol, 0);
                let nominal = cfg.dataset.pre_pad_samples
                    + spec.n_samples()
                    + cfg.dataset.post_pad_samples;
                let mut manifest = DatasetManifest::new(
                    protocol,
                    scenario,
                    nominal as u32,
                    label_schema(protocol),
                    spec.sample_rate_hz(),
                    hash.clone(),
                );
                manifest
                    .seeds
                    .insert("master".into(), cfg.master_seed);
                manifest.seeds.insert(
                    "dataset".into(),
                    seeds_for(cfg, "dataset", &[p_id, s_id, u64::from(day)]),
                );
                let path = dataset_path(out_dir, protocol, scenario, day);
                write_dataset(&path, &records, &manifest)?;
                summary.datasets.push(DatasetSummary {
                    id: dataset_id(protocol, scenario, day),
                    records: records.len(),
                    sync_failures: failed,
                    sync_failures_per_device: per_device,
                });
            }
        }
    }

    std::fs::write(
        out_dir.join("gen_summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    super::write_run_manifest(out_dir, cfg, "gen")?;
    Ok(summary)
}

fn generate_day(
    cfg: &RunConfig,
    profiles: &[DeviceProfile],
    protocol: Protocol,
    scenario: Scenario,
    day: u32,
) -> Result<Vec<FrameRecord>> {
    let n = cfg.dataset.frames_per_device_per_day;
    let times = super::timeline_times(cfg, n);
    let p_id = protocol as u64;
    let s_id = scenario as u64;

    // The receiver gain offset is a per-day property shared by all devices.
    let rx_gain_db = {
        let mut rng = ChaCha12Rng::seed_from_u64(seeds_for(
            cfg,
            "rx-gain",
            &[s_id, u64::from(day)],
        ));
        rng.gen_range(-cfg.channel.rx_gain_spread_db..=cfg.channel.rx_gain_spread_db)
    };

    // Identical payload content across devices: one ideal frame per slot.
    let ideals: Vec<(crate::waveform::FrameSpec, BasebandFrame)> = (0..n)
        .map(|i| {
            let content_seed = seeds_for(cfg, "payload", &[p_id, u64::from(day), i as u64]);
            let spec = cfg.frame_spec(protocol, content_seed);
            let frame = synth_frame(&spec)?;
            Ok((spec, frame))
        })
        .collect::<Result<_>>()?;

    let nominal = cfg.dataset.pre_pad_samples
        + ideals[0].1.samples.len()
        + cfg.dataset.post_pad_samples;

    let per_device: Vec<Result<Vec<FrameRecord>>> = profiles
        .par_iter()
        .map(|profile| {
            let d_id = u64::from(profile.device_id);
            let channel = match scenario {
                Scenario::Wired => {
                    ChannelState::wired(cfg.channel.wired_snr_db, rx_gain_db, day, 0)
                }
                Scenario::Wireless => ChannelState::wireless(
                    cfg.channel.wireless_snr_db,
                    rx_gain_db,
                    day,
                    seeds_for(cfg, "channel", &[p_id, s_id, u64::from(day), d_id]),
                ),
            };
            let mut records = Vec::with_capacity(n);
            for (i, (spec, ideal)) in ideals.iter().enumerate() {
                let t = times[i];
                let state = impairment_at(profile, t)?;
                let tx = apply_impairments(ideal, &state)?;
                let padded = if cfg.dataset.pre_pad_samples > 0 || cfg.dataset.post_pad_samples > 0
                {
                    let mut samples =
                        vec![Complex32::new(0.0, 0.0); cfg.dataset.pre_pad_samples];
                    samples.extend_from_slice(&tx.samples);
                    samples
                        .extend(vec![Complex32::new(0.0, 0.0); cfg.dataset.post_pad_samples]);
                    BasebandFrame {
                        samples,
                        ..tx.clone()
                    }
                } else {
                    tx
                };
                let noise_seed =
                    seeds_for(cfg, "noise", &[p_id, s_id, u64::from(day), d_id, i as u64]);
                let rx = apply_channel(&padded, &channel, noise_seed)?;
                let samples = fix_length(rx.samples, nominal);
                let rx = BasebandFrame { samples, ..rx };

                let (labels, sync_ok) = match measure(&rx, spec) {
                    Ok(vector) => {
                        let vals = vector.values();
                        if vals.iter().all(|v| v.is_finite()) {
                            (Some(vals.iter().map(|&v| v as f32).collect()), true)
                        } else {
                            (None, false)
                        }
                    }
                    Err(_) => (None, false),
                };
                records.push(FrameRecord {
                    device_id: profile.device_id,
                    day_id: day,
                    scenario,
                    protocol,
                    t_minutes: t as f32,
                    samples: rx.samples,
                    labels,
                    sync_ok,
                });
            }
            Ok(records)
        })
        .collect();

    let mut records = Vec::with_capacity(profiles.len() * n);
    for r in per_device {
        records.extend(r?);
    }
    Ok(records)
}
