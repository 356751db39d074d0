//! Run configuration: the Level-0 model parameters plus the multi-level
//! scheduling knobs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ToroidalWorld;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{field} must lie in [0, 1], got {value}")]
    NotAProbability { field: &'static str, value: f64 },
    #[error("speed range is empty: speed_min {min} > speed_max {max}")]
    SpeedRange { min: f64, max: f64 },
    #[error("negative speed {0}")]
    NegativeSpeed(f64),
    #[error("interaction_range ({range}) must exceed forwarding_threshold ({threshold}) >= 0")]
    Ranges { range: f64, threshold: f64 },
    #[error("{field} must be positive")]
    NotPositive { field: &'static str },
    #[error("spawn trigger {index}: {reason}")]
    Trigger { index: usize, reason: String },
    #[error("cannot parse spawn trigger {input:?}: expected \"timestep:lp:count\"")]
    TriggerSyntax { input: String },
}

/// "At timestep `at_timestep`, LP `lp_id` hands `entity_count` entities
/// to a fresh Level-1 instance."
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpawnTrigger {
    pub at_timestep: u32,
    pub lp_id: usize,
    pub entity_count: usize,
}

impl fmt::Display for SpawnTrigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.at_timestep, self.lp_id, self.entity_count)
    }
}

impl FromStr for SpawnTrigger {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ConfigError::TriggerSyntax { input: s.to_owned() };
        let mut parts = s.trim().split(':');
        let at_timestep = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let lp_id = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let entity_count = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(Self {
            at_timestep,
            lp_id,
            entity_count,
        })
    }
}

impl Serialize for SpawnTrigger {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SpawnTrigger {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub num_ses: usize,
    pub mobile_fraction: f64,
    /// spaceunits per timestep
    pub speed_min: f64,
    pub speed_max: f64,
    pub interaction_range: f64,
    /// Relays only happen when sender and receiver are strictly farther apart than this.
    pub forwarding_threshold: f64,
    /// Entities per spaceunit².
    pub density: f64,
    pub total_timesteps: u32,
    pub ttl: u32,
    pub dissemination_prob: f64,
    /// 0 disables the cache.
    pub cache_capacity: usize,
    /// Per-entity, per-timestep probability of originating a new message.
    pub message_rate: f64,
    /// Suppress every copy after the first one, regardless of cache size.
    /// Used to compare dissemination against a reachability oracle.
    pub deliver_once: bool,
    pub num_lps: usize,
    pub l1_schedule: Vec<SpawnTrigger>,
    pub l1_fine_steps_per_timestep: u32,
    pub l1_grid_side: usize,
    /// Coarse timesteps a Level-1 instance stays alive before it is ended.
    pub l1_session_timesteps: u32,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            num_ses: 1000,
            mobile_fraction: 0.5,
            speed_min: 1.0,
            speed_max: 14.0,
            interaction_range: 250.0,
            forwarding_threshold: 200.0,
            density: 1.0 / 10_000.0,
            total_timesteps: 900,
            ttl: 4,
            dissemination_prob: 0.6,
            cache_capacity: 256,
            message_rate: 0.05,
            deliver_once: false,
            num_lps: 1,
            l1_schedule: Vec::new(),
            l1_fine_steps_per_timestep: 100,
            l1_grid_side: 10,
            l1_session_timesteps: 1,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn world(&self) -> ToroidalWorld {
        ToroidalWorld::for_density(self.num_ses, self.density)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, value) in [
            ("mobile_fraction", self.mobile_fraction),
            ("dissemination_prob", self.dissemination_prob),
            ("message_rate", self.message_rate),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ConfigError::NotAProbability { field, value });
            }
        }
        if self.speed_min < 0.0 {
            return Err(ConfigError::NegativeSpeed(self.speed_min));
        }
        if self.speed_min > self.speed_max {
            return Err(ConfigError::SpeedRange {
                min: self.speed_min,
                max: self.speed_max,
            });
        }
        if !(self.forwarding_threshold >= 0.0 && self.interaction_range > self.forwarding_threshold) {
            return Err(ConfigError::Ranges {
                range: self.interaction_range,
                threshold: self.forwarding_threshold,
            });
        }
        for (field, ok) in [
            ("num_ses", self.num_ses > 0),
            ("density", self.density > 0.0 && self.density.is_finite()),
            ("num_lps", self.num_lps > 0),
            ("l1_fine_steps_per_timestep", self.l1_fine_steps_per_timestep > 0),
            ("l1_grid_side", self.l1_grid_side > 0),
            ("l1_session_timesteps", self.l1_session_timesteps > 0),
        ] {
            if !ok {
                return Err(ConfigError::NotPositive { field });
            }
        }
        for (index, t) in self.l1_schedule.iter().enumerate() {
            let reason = if t.at_timestep >= self.total_timesteps {
                format!("timestep {} is not below total_timesteps {}", t.at_timestep, self.total_timesteps)
            } else if t.lp_id >= self.num_lps {
                format!("lp {} does not exist (num_lps = {})", t.lp_id, self.num_lps)
            } else if t.entity_count == 0 {
                "entity_count must be at least 1".to_owned()
            } else if t.entity_count > self.num_ses {
                format!("entity_count {} exceeds num_ses {}", t.entity_count, self.num_ses)
            } else {
                continue;
            };
            return Err(ConfigError::Trigger { index, reason });
        }
        Ok(())
    }
}

/// Partial configuration as read from a `key = value` file or CLI flags.
/// Key names mirror the `simulate` flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub ses: Option<usize>,
    pub lps: Option<usize>,
    pub timesteps: Option<u32>,
    pub seed: Option<u64>,
    pub ttl: Option<u32>,
    pub prob: Option<f64>,
    pub cache: Option<usize>,
    pub l1_schedule: Option<Vec<SpawnTrigger>>,
    pub fine_steps: Option<u32>,
    pub grid_side: Option<usize>,
    pub session_timesteps: Option<u32>,
    pub mobile_fraction: Option<f64>,
    pub speed_min: Option<f64>,
    pub speed_max: Option<f64>,
    pub range: Option<f64>,
    pub threshold: Option<f64>,
    pub density: Option<f64>,
    pub message_rate: Option<f64>,
    pub deliver_once: Option<bool>,
}

impl ConfigOverrides {
    pub fn apply(&self, c: &mut SimConfig) {
        macro_rules! set {
            ($($src:ident => $dst:ident),* $(,)?) => {
                $( if let Some(v) = &self.$src { c.$dst = v.clone(); } )*
            };
        }
        set! {
            ses => num_ses,
            lps => num_lps,
            timesteps => total_timesteps,
            seed => seed,
            ttl => ttl,
            prob => dissemination_prob,
            cache => cache_capacity,
            l1_schedule => l1_schedule,
            fine_steps => l1_fine_steps_per_timestep,
            grid_side => l1_grid_side,
            session_timesteps => l1_session_timesteps,
            mobile_fraction => mobile_fraction,
            speed_min => speed_min,
            speed_max => speed_max,
            range => interaction_range,
            threshold => forwarding_threshold,
            density => density,
            message_rate => message_rate,
            deliver_once => deliver_once,
        }
    }

    /// Overrides from `other` win over `self`.
    pub fn merged(mut self, other: &ConfigOverrides) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f.clone(); } )* };
        }
        take!(
            ses, lps, timesteps, seed, ttl, prob, cache, l1_schedule, fine_steps, grid_side,
            session_timesteps, mobile_fraction, speed_min, speed_max, range, threshold, density,
            message_rate, deliver_once
        );
        self
    }

    /// Every field set, so that applying to any config reproduces `c`.
    pub fn from_config(c: &SimConfig) -> Self {
        Self {
            ses: Some(c.num_ses),
            lps: Some(c.num_lps),
            timesteps: Some(c.total_timesteps),
            seed: Some(c.seed),
            ttl: Some(c.ttl),
            prob: Some(c.dissemination_prob),
            cache: Some(c.cache_capacity),
            l1_schedule: Some(c.l1_schedule.clone()),
            fine_steps: Some(c.l1_fine_steps_per_timestep),
            grid_side: Some(c.l1_grid_side),
            session_timesteps: Some(c.l1_session_timesteps),
            mobile_fraction: Some(c.mobile_fraction),
            speed_min: Some(c.speed_min),
            speed_max: Some(c.speed_max),
            range: Some(c.interaction_range),
            threshold: Some(c.forwarding_threshold),
            density: Some(c.density),
            message_rate: Some(c.message_rate),
            deliver_once: Some(c.deliver_once),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("overrides always serialize")
    }
}
