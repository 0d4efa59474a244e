use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::receiver::Scheme;
use crate::sender::AdversaryStrategy;
use crate::{secs_to_micros, Micros, MICROS_PER_SEC};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// One evaluated node at the centre of a disc of stationary neighbours.
    Static,
    /// Six-lane highway section with vehicles entering from both ends.
    Highway,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Static => "static",
            Scenario::Highway => "highway",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(Scenario::Static),
            "highway" => Ok(Scenario::Highway),
            _ => Err(format!("unknown scenario `{s}` (expected static or highway)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{field} must be {requirement} (got {value})")]
    OutOfRange {
        field: &'static str,
        requirement: &'static str,
        value: String,
    },
    #[error("pc_lifetime ({lifetime_us} us) must be a whole number of beacon intervals ({slot_us} us)")]
    Lifetime { lifetime_us: Micros, slot_us: Micros },
}

/// Simulation parameters. Times are in seconds, rates in Hz, distances in
/// metres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub scenario: Scenario,
    /// Inner-disc node count (static) or target neighbour density (highway).
    pub n: u32,
    pub gamma: f64,
    pub t_vrfc: f64,
    pub pr_loss: f64,
    pub alpha: usize,
    pub n_adv: u32,
    pub gamma_adv: f64,
    pub range: f64,
    pub duration: f64,
    /// Defaults to 0 s (static) or 60 s (highway).
    pub warmup: Option<f64>,
    pub runs: u32,
    pub seed: u64,
    pub adversary_strategy: AdversaryStrategy,
    pub queue_cap: Option<usize>,
    pub scheme: Scheme,
    pub pc_lifetime: f64,
    pub checkpoint_stride: u32,
    /// How long static adversaries flood before benign nodes start.
    pub adversary_lead: f64,
    /// Distance of static adversaries from the evaluated node.
    pub adversary_radius: f64,
    pub road_length: f64,
    /// Width of the central highway stretch whose nodes are measured.
    pub measure_width: f64,
    /// Highway pseudonym metrics only count pairs that came this close.
    pub pair_filter: f64,
    /// Multiplier on the calibrated highway arrival rate.
    pub arrival_scale: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Static,
            n: 60,
            gamma: 10.0,
            t_vrfc: 0.004,
            pr_loss: 0.2,
            alpha: 4,
            n_adv: 0,
            gamma_adv: 250.0,
            range: 200.0,
            duration: 60.0,
            warmup: None,
            runs: 5,
            seed: 1,
            adversary_strategy: AdversaryStrategy::FreshFakePc,
            queue_cap: None,
            scheme: Scheme::Cooperative,
            pc_lifetime: 300.0,
            checkpoint_stride: 10,
            adversary_lead: 10.0,
            adversary_radius: 100.0,
            road_length: 1500.0,
            measure_width: 300.0,
            pair_filter: 150.0,
            arrival_scale: 1.0,
        }
    }
}

/// Integer-microsecond view of a validated [`SimConfig`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Timing {
    pub slot_us: Micros,
    pub t_vrfc_us: Micros,
    pub adv_period_us: Micros,
    pub pc_lifetime_us: Micros,
    pub warmup_us: Micros,
    /// First benign beacon.
    pub benign_start: Micros,
    /// Start of the measurement window.
    pub measure_start: Micros,
    pub end: Micros,
}

fn check(ok: bool, field: &'static str, requirement: &'static str, value: impl ToString) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange {
            field,
            requirement,
            value: value.to_string(),
        })
    }
}

fn positive(field: &'static str, v: f64) -> Result<(), ConfigError> {
    check(v.is_finite() && v > 0.0, field, "finite and > 0", v)
}

fn non_negative(field: &'static str, v: f64) -> Result<(), ConfigError> {
    check(v.is_finite() && v >= 0.0, field, "finite and >= 0", v)
}

impl SimConfig {
    /// Static disc under attack by four flooding nodes.
    pub fn static_adversarial() -> Self {
        Self {
            n_adv: 4,
            ..Self::default()
        }
    }

    pub fn highway() -> Self {
        Self {
            scenario: Scenario::Highway,
            ..Self::default()
        }
    }

    /// Highway with ten flooding vehicles.
    pub fn highway_adversarial() -> Self {
        Self {
            n_adv: 10,
            ..Self::highway()
        }
    }

    pub fn warmup_secs(&self) -> f64 {
        self.warmup.unwrap_or(match self.scenario {
            Scenario::Static => 0.0,
            Scenario::Highway => 60.0,
        })
    }

    /// Piggyback list length actually used; baselines share nothing.
    pub fn effective_alpha(&self) -> usize {
        if self.scheme.shares_results() {
            self.alpha
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<Timing, ConfigError> {
        positive("gamma", self.gamma)?;
        positive("t_vrfc", self.t_vrfc)?;
        positive("gamma_adv", self.gamma_adv)?;
        positive("range", self.range)?;
        positive("pc_lifetime", self.pc_lifetime)?;
        non_negative("duration", self.duration)?;
        non_negative("warmup", self.warmup_secs())?;
        non_negative("adversary_lead", self.adversary_lead)?;
        non_negative("adversary_radius", self.adversary_radius)?;
        non_negative("pair_filter", self.pair_filter)?;
        check(
            self.pr_loss.is_finite() && (0.0..1.0).contains(&self.pr_loss),
            "pr_loss",
            "in [0, 1)",
            self.pr_loss,
        )?;
        check(self.alpha <= u8::MAX as usize, "alpha", "at most 255", self.alpha)?;
        check(self.runs >= 1, "runs", ">= 1", self.runs)?;
        check(self.checkpoint_stride >= 1, "checkpoint_stride", ">= 1", self.checkpoint_stride)?;
        check(self.queue_cap != Some(0), "queue_cap", ">= 1 when set", 0)?;
        if self.scenario == Scenario::Highway {
            positive("road_length", self.road_length)?;
            positive("arrival_scale", self.arrival_scale)?;
            check(
                self.measure_width.is_finite() && self.measure_width > 0.0 && self.measure_width <= self.road_length,
                "measure_width",
                "in (0, road_length]",
                self.measure_width,
            )?;
            check(self.n >= 1, "n", ">= 1 on the highway", self.n)?;
        }
        let slot_us = secs_to_micros(1.0 / self.gamma);
        check(slot_us >= 2, "gamma", "at most 500000 Hz", self.gamma)?;
        let adv_period_us = secs_to_micros(1.0 / self.gamma_adv);
        check(adv_period_us >= 1, "gamma_adv", "at most 1000000 Hz", self.gamma_adv)?;
        let t_vrfc_us = secs_to_micros(self.t_vrfc);
        check(t_vrfc_us >= 1, "t_vrfc", ">= 1 us", self.t_vrfc)?;
        let pc_lifetime_us = secs_to_micros(self.pc_lifetime);
        if pc_lifetime_us % slot_us != 0 || pc_lifetime_us / slot_us < 2 {
            return Err(ConfigError::Lifetime {
                lifetime_us: pc_lifetime_us,
                slot_us,
            });
        }
        let warmup_us = secs_to_micros(self.warmup_secs());
        let duration_us = secs_to_micros(self.duration);
        let (benign_start, measure_start) = match self.scenario {
            Scenario::Static if self.n_adv > 0 => {
                let lead = secs_to_micros(self.adversary_lead);
                (warmup_us + lead, warmup_us + lead)
            }
            Scenario::Static => (warmup_us, warmup_us),
            Scenario::Highway => (warmup_us, warmup_us),
        };
        check(
            measure_start.checked_add(duration_us).is_some_and(|e| e < 100_000 * MICROS_PER_SEC),
            "duration",
            "shorter than 100000 s in total",
            self.duration,
        )?;
        Ok(Timing {
            slot_us,
            t_vrfc_us,
            adv_period_us,
            pc_lifetime_us,
            warmup_us,
            benign_start,
            measure_start,
            end: measure_start + duration_us,
        })
    }
}
