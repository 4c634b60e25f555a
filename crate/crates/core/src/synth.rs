//! Synthetic EHR-like cohorts with known signal placement.
//!
//! Features are laid out as: an optional dense "clock" feature sampled so often
//! that nearly every window is occupied, then the trend features, then the
//! missingness features, then nuisance features. Trend features carry the
//! label through their per-entity slope; missingness features carry it
//! through their per-entity sampling rate while their values are pure noise.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{write_labels_csv, Event, EventStream, FeatureDictionary, LabelRecord};
use crate::rng::SeedTree;
use crate::tensor::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_entities: usize,
    /// Total feature count, clock included.
    pub p: usize,
    pub horizon_hours: f64,
    /// Mean sampling rate of missingness and nuisance features, per hour.
    pub base_rate_per_hour: f64,
    /// Mean sampling rate of trend features, per hour.
    pub trend_rate_per_hour: f64,
    /// Spread of per-entity log-rates around the base rate.
    pub rate_log_sd: f64,
    pub dense_clock: bool,
    pub clock_rate_per_hour: f64,
    pub trend_features: usize,
    pub missingness_features: usize,
    /// Label logit weight of the normalized slope sum.
    pub trend_strength: f64,
    /// Label logit weight of the normalized log-rate sum.
    pub missingness_strength: f64,
    /// Adds `interaction_strength · slope₀ · z₀`, coupling the first trend
    /// feature with the first missingness feature.
    pub interaction: bool,
    pub interaction_strength: f64,
    /// Measurement noise, in units of the between-entity baseline spread.
    pub noise_sd: f64,
    /// Trend change over the horizon per unit slope, same units.
    pub trend_scale: f64,
    pub prevalence: f64,
    /// More than one class draws labels from a softmax over class scores.
    pub classes: usize,
    pub task_name: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_entities: 1000,
            p: 6,
            horizon_hours: 48.0,
            base_rate_per_hour: 0.5,
            trend_rate_per_hour: 0.5,
            rate_log_sd: 0.7,
            dense_clock: true,
            clock_rate_per_hour: 12.0,
            trend_features: 2,
            missingness_features: 2,
            trend_strength: 2.5,
            missingness_strength: 2.5,
            interaction: false,
            interaction_strength: 2.0,
            noise_sd: 0.3,
            trend_scale: 1.0,
            prevalence: 0.5,
            classes: 1,
            task_name: "mortality".into(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn first_trend(&self) -> usize {
        usize::from(self.dense_clock)
    }

    fn first_missingness(&self) -> usize {
        self.first_trend() + self.trend_features
    }

    pub fn validate(&self) -> Result<()> {
        let designated = self.first_missingness() + self.missingness_features;
        if self.n_entities == 0 {
            return Err(Error::config("n_entities", "must be positive"));
        }
        if self.p == 0 || designated > self.p {
            return Err(Error::config(
                "p",
                format!("{} features cannot hold {designated} designated features", self.p),
            ));
        }
        if !(self.horizon_hours > 0.0) {
            return Err(Error::config("horizon_hours", "must be positive"));
        }
        if !(self.base_rate_per_hour > 0.0)
            || !(self.trend_rate_per_hour > 0.0)
            || (self.dense_clock && !(self.clock_rate_per_hour > 0.0))
        {
            return Err(Error::config("base_rate_per_hour", "sampling rates must be positive"));
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return Err(Error::config("prevalence", "must lie strictly between 0 and 1"));
        }
        if self.classes == 0 {
            return Err(Error::config("classes", "must be positive"));
        }
        if self.interaction && (self.trend_features == 0 || self.missingness_features == 0) {
            return Err(Error::config(
                "interaction",
                "needs at least one trend and one missingness feature",
            ));
        }
        for (name, v) in [
            ("rate_log_sd", self.rate_log_sd),
            ("noise_sd", self.noise_sd),
            ("trend_scale", self.trend_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be finite and non-negative"));
            }
        }
        Ok(())
    }

    pub fn feature_names(&self) -> Vec<String> {
        (0..self.p)
            .map(|k| {
                if self.dense_clock && k == 0 {
                    "clock".to_string()
                } else if k < self.first_missingness() {
                    format!("trend_{}", k - self.first_trend())
                } else if k < self.first_missingness() + self.missingness_features {
                    format!("missing_{}", k - self.first_missingness())
                } else {
                    format!("nuisance_{}", k - self.first_missingness() - self.missingness_features)
                }
            })
            .collect()
    }
}

/// Per-entity latent variables; drawn before any event.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub log_rate: Vec<f64>,
    pub slope: Vec<f64>,
    pub baseline: Vec<f64>,
    /// Uniform used to turn a probability into a label.
    pub uniform: f64,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn draw_latent(config: &SynthConfig, entity: usize) -> Latent {
    let mut rng = SeedTree::new(config.seed).child("latent").stream_indexed("entity", entity as u64);
    Latent {
        log_rate: (0..config.p).map(|_| normal(&mut rng)).collect(),
        slope: (0..config.p).map(|_| normal(&mut rng)).collect(),
        baseline: (0..config.p).map(|_| normal(&mut rng)).collect(),
        uniform: rng.random(),
    }
}

/// Label logit without intercept (binary) or per-class scores.
fn signal(config: &SynthConfig, latent: &Latent, class_weights: &[Vec<f64>]) -> Vec<f64> {
    let t0 = config.first_trend();
    let m0 = config.first_missingness();
    let drivers: Vec<f64> = latent.slope[t0..t0 + config.trend_features]
        .iter()
        .chain(&latent.log_rate[m0..m0 + config.missingness_features])
        .copied()
        .collect();
    let norm = |n: usize| if n == 0 { 0.0 } else { 1.0 / (n as f64).sqrt() };
    let (nt, nm) = (config.trend_features, config.missingness_features);
    let interaction = if config.interaction {
        config.interaction_strength * latent.slope[t0] * latent.log_rate[m0]
    } else {
        0.0
    };
    if config.classes == 1 {
        let trend: f64 = drivers[..nt].iter().sum::<f64>() * norm(nt);
        let miss: f64 = drivers[nt..].iter().sum::<f64>() * norm(nm);
        return vec![config.trend_strength * trend + config.missingness_strength * miss + interaction];
    }
    class_weights
        .iter()
        .map(|w| {
            let trend: f64 = drivers[..nt].iter().zip(w).map(|(d, w)| d * w).sum::<f64>() * norm(nt);
            let miss: f64 = drivers[nt..].iter().zip(&w[nt..]).map(|(d, w)| d * w).sum::<f64>() * norm(nm);
            config.trend_strength * trend + config.missingness_strength * miss + interaction
        })
        .collect()
}

fn class_weights(config: &SynthConfig) -> Vec<Vec<f64>> {
    if config.classes == 1 {
        return Vec::new();
    }
    let mut rng = SeedTree::new(config.seed).stream("class-weights");
    let drivers = config.trend_features + config.missingness_features;
    (0..config.classes)
        .map(|_| (0..drivers).map(|_| normal(&mut rng)).collect())
        .collect()
}

fn prevalence_at(logits: &[f64], uniforms: &[f64], intercept: f64) -> f64 {
    let positives = logits
        .iter()
        .zip(uniforms)
        .filter(|(z, u)| **u < sigmoid(**z + intercept))
        .count();
    positives as f64 / logits.len() as f64
}

/// Bisection on the logit intercept until the cohort's empirical prevalence is
/// within 1% of the target. Uses the same uniforms as label generation, so the
/// prevalence is exact for the generated cohort.
pub fn label_prevalence_calibrate(config: &SynthConfig) -> Result<f64> {
    config.validate()?;
    if config.classes > 1 {
        return Ok(0.0);
    }
    let latents: Vec<Latent> = (0..config.n_entities)
        .into_par_iter()
        .map(|e| draw_latent(config, e))
        .collect();
    let logits: Vec<f64> = latents.iter().map(|l| signal(config, l, &[])[0]).collect();
    let uniforms: Vec<f64> = latents.iter().map(|l| l.uniform).collect();
    calibrate(&logits, &uniforms, config.prevalence)
}

fn calibrate(logits: &[f64], uniforms: &[f64], target: f64) -> Result<f64> {
    let (mut lo, mut hi) = (-50.0, 50.0);
    if prevalence_at(logits, uniforms, lo) > target + 0.01 || prevalence_at(logits, uniforms, hi) < target - 0.01 {
        return Err(Error::config("prevalence", format!("target {target} cannot be bracketed")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let p = prevalence_at(logits, uniforms, mid);
        if (p - target).abs() <= 0.005 {
            return Ok(mid);
        }
        if p < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    if (prevalence_at(logits, uniforms, mid) - target).abs() <= 0.01 {
        Ok(mid)
    } else {
        Err(Error::config(
            "prevalence",
            format!("target {target} is not reachable within 1% on this cohort"),
        ))
    }
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub events: EventStream,
    pub labels: Vec<LabelRecord>,
    pub dictionary: FeatureDictionary,
    pub intercept: f64,
    pub latents: Vec<Latent>,
}

impl Cohort {
    pub fn prevalence(&self) -> f64 {
        self.labels.iter().filter(|l| l.label == 1.0).count() as f64 / self.labels.len() as f64
    }

    /// Writes `events.csv`, `labels.csv` and `features.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.events.write_csv(&dir.join("events.csv"))?;
        write_labels_csv(&dir.join("labels.csv"), &self.labels)?;
        self.dictionary.write_csv(&dir.join("features.csv"))
    }
}

fn entity_events(config: &SynthConfig, entity: usize, latent: &Latent) -> Vec<Event> {
    let mut rng = SeedTree::new(config.seed).child("events").stream_indexed("entity", entity as u64);
    let horizon = config.horizon_hours * 3600.0;
    let id = entity_id(entity);
    let t0 = config.first_trend();
    let m0 = config.first_missingness();
    let mut events = Vec::new();
    for k in 0..config.p {
        let is_clock = config.dense_clock && k == 0;
        let is_trend = (t0..m0).contains(&k);
        let rate_per_hour = if is_clock {
            config.clock_rate_per_hour
        } else if is_trend {
            config.trend_rate_per_hour * (config.rate_log_sd * latent.log_rate[k]).exp()
        } else {
            config.base_rate_per_hour * (config.rate_log_sd * latent.log_rate[k]).exp()
        };
        let gap = Exp::new(rate_per_hour / 3600.0).expect("positive rate");
        let is_missingness = (m0..m0 + config.missingness_features).contains(&k);
        let mut t = gap.sample(&mut rng);
        while t < horizon {
            let frac = t / horizon;
            let level = if is_missingness || is_clock {
                normal(&mut rng)
            } else {
                // Trend and nuisance features follow baseline + slope·time; only
                // the trend features' slopes drive the label.
                let slope = if is_trend { latent.slope[k] } else { latent.slope[k] * 0.5 };
                latent.baseline[k] + config.trend_scale * slope * frac + config.noise_sd * normal(&mut rng)
            };
            events.push(Event {
                entity_id: id.clone(),
                time_seconds: t,
                feature: k,
                value: 50.0 + 10.0 * level,
            });
            t += gap.sample(&mut rng);
        }
    }
    events.sort_by(|a, b| a.time_seconds.total_cmp(&b.time_seconds).then(a.feature.cmp(&b.feature)));
    events
}

pub fn entity_id(entity: usize) -> String {
    format!("s{entity:06}")
}

/// Generates the cohort; the result depends only on the config.
pub fn generate_cohort(config: &SynthConfig) -> Result<Cohort> {
    config.validate()?;
    let weights = class_weights(config);
    let latents: Vec<Latent> = (0..config.n_entities)
        .into_par_iter()
        .map(|e| draw_latent(config, e))
        .collect();
    let signals: Vec<Vec<f64>> = latents.iter().map(|l| signal(config, l, &weights)).collect();
    let intercept = if config.classes == 1 {
        let logits: Vec<f64> = signals.iter().map(|s| s[0]).collect();
        let uniforms: Vec<f64> = latents.iter().map(|l| l.uniform).collect();
        calibrate(&logits, &uniforms, config.prevalence)?
    } else {
        0.0
    };
    let labels: Vec<LabelRecord> = latents
        .iter()
        .zip(&signals)
        .enumerate()
        .map(|(e, (latent, s))| {
            let label = if config.classes == 1 {
                f64::from(u8::from(latent.uniform < sigmoid(s[0] + intercept)))
            } else {
                let probs = crate::cells::softmax(s);
                let mut acc = 0.0;
                let mut class = config.classes - 1;
                for (c, p) in probs.iter().enumerate() {
                    acc += p;
                    if latent.uniform < acc {
                        class = c;
                        break;
                    }
                }
                class as f64
            };
            LabelRecord {
                entity_id: entity_id(e),
                task: config.task_name.clone(),
                label,
            }
        })
        .collect();
    let per_entity: Vec<Vec<Event>> = latents
        .par_iter()
        .enumerate()
        .map(|(e, l)| entity_events(config, e, l))
        .collect();
    let events = EventStream::from_events(config.p, per_entity.into_iter().flatten().collect())?;
    Ok(Cohort {
        events,
        labels,
        dictionary: FeatureDictionary::new(config.feature_names())?,
        intercept,
        latents,
    })
}
