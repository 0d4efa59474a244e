use crate::crypto::PcId;
use crate::receiver::ValidationKind;
use crate::{micros_to_secs, Micros};

use super::config::SimConfig;

pub const KINDS: [ValidationKind; 3] = [
    ValidationKind::SignatureVerified,
    ValidationKind::CooperativelyValidated,
    ValidationKind::TeslaValidated,
];

/// An accepted beacon at a measured receiver.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WaitRecord {
    pub node: u32,
    pub pc: PcId,
    pub received_at: Micros,
    pub validated_at: Micros,
    pub kind: ValidationKind,
}

impl WaitRecord {
    pub fn waited(&self) -> Micros {
        self.validated_at - self.received_at
    }
}

/// First reception and first validation of a legitimate pseudonym at a
/// measured receiver.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PsnymRecord {
    pub rx_node: u32,
    pub pc: PcId,
    pub first_seen: Micros,
    pub first_validated: Option<Micros>,
}

impl PsnymRecord {
    pub fn delay(&self) -> Option<Micros> {
        self.first_validated.map(|v| v - self.first_seen)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PsnymRatio {
    pub rx_node: u32,
    pub encountered: u32,
    pub validated: u32,
}

impl PsnymRatio {
    pub fn ratio(&self) -> Option<f64> {
        (self.encountered > 0).then(|| f64::from(self.validated) / f64::from(self.encountered))
    }
}

/// Per-(transmission, potential receiver) accounting. `attempts` equals the
/// sum of the other three.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ChannelCounters {
    pub transmissions: u64,
    pub adversary_transmissions: u64,
    pub attempts: u64,
    pub delivered: u64,
    pub lost: u64,
    pub out_of_range: u64,
    /// Benign beacons delivered to the evaluated node (static only).
    pub delivered_to_centre: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub run_id: u32,
    pub seed: u64,
    pub measure_start: Micros,
    pub end: Micros,
    pub waiting: Vec<WaitRecord>,
    pub psnym: Vec<PsnymRecord>,
    pub ratios: Vec<PsnymRatio>,
    pub channel: ChannelCounters,
    /// Mean number of vehicles within range of a measured node.
    pub mean_neighbors: f64,
    /// Accepted beacons that were not sent by a legitimate key holder.
    pub fictitious_accepted: u64,
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl RunReport {
    /// Mean waiting time in seconds over all accepted beacons.
    pub fn avg_waiting(&self) -> Option<f64> {
        mean(self.waiting.iter().map(|w| micros_to_secs(w.waited())))
    }

    pub fn avg_waiting_of(&self, kind: ValidationKind) -> Option<f64> {
        mean(self.waiting.iter().filter(|w| w.kind == kind).map(|w| micros_to_secs(w.waited())))
    }

    /// Shares of signature, cooperative and TESLA validations. All zero when
    /// nothing was accepted.
    pub fn type_ratios(&self) -> [f64; 3] {
        let total = self.waiting.len();
        if total == 0 {
            return [0.0; 3];
        }
        KINDS.map(|k| self.waiting.iter().filter(|w| w.kind == k).count() as f64 / total as f64)
    }

    /// Mean over measured receivers of validated / encountered pseudonyms.
    pub fn psnym_ratio(&self) -> Option<f64> {
        mean(self.ratios.iter().filter_map(PsnymRatio::ratio))
    }

    /// Mean waiting per consecutive `width`-long window of validation time
    /// starting at `start`.
    pub fn window_means(&self, start: Micros, width: Micros, count: usize) -> Vec<Option<f64>> {
        (0..count)
            .map(|i| {
                let lo = start + i as Micros * width;
                let hi = lo + width;
                mean(
                    self.waiting
                        .iter()
                        .filter(|w| (lo..hi).contains(&w.validated_at))
                        .map(|w| micros_to_secs(w.waited())),
                )
            })
            .collect()
    }

    /// Delivered benign beacons per second at the evaluated node.
    pub fn centre_delivery_rate(&self) -> f64 {
        let span = micros_to_secs(self.end - self.measure_start);
        if span > 0.0 {
            self.channel.delivered_to_centre as f64 / span
        } else {
            0.0
        }
    }
}

/// Results of all runs of one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub config: SimConfig,
    pub runs: Vec<RunReport>,
}

impl MetricsReport {
    pub fn avg_waiting(&self) -> Option<f64> {
        mean(self.runs.iter().filter_map(RunReport::avg_waiting))
    }

    pub fn avg_waiting_of(&self, kind: ValidationKind) -> Option<f64> {
        mean(self.runs.iter().filter_map(|r| r.avg_waiting_of(kind)))
    }

    pub fn type_ratios(&self) -> [f64; 3] {
        let n = self.runs.len().max(1) as f64;
        self.runs.iter().fold([0.0; 3], |acc, r| {
            let t = r.type_ratios();
            [acc[0] + t[0] / n, acc[1] + t[1] / n, acc[2] + t[2] / n]
        })
    }

    pub fn psnym_ratio(&self) -> Option<f64> {
        mean(self.runs.iter().filter_map(RunReport::psnym_ratio))
    }

    pub fn mean_neighbors(&self) -> f64 {
        mean(self.runs.iter().map(|r| r.mean_neighbors)).unwrap_or(0.0)
    }
}
