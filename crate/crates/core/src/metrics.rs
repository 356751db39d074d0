//! Per-run measurements and their one-row CSV form.

use std::io;

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::coord::Counters;

/// Level-0 dissemination counters, per timestep or summed over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageTotals {
    pub generated: u64,
    /// Relay emissions; the originator's own broadcast is not counted.
    pub forwarded: u64,
    /// First deliveries of a message to an entity.
    pub delivered: u64,
    /// Repeat deliveries that the cache did not catch.
    pub duplicates: u64,
    /// Copies dropped by a cache hit.
    pub suppressed: u64,
    /// Receptions lost because the receiver was away at Level 1.
    pub frozen_drops: u64,
}

impl std::ops::AddAssign for MessageTotals {
    fn add_assign(&mut self, o: Self) {
        self.generated += o.generated;
        self.forwarded += o.forwarded;
        self.delivered += o.delivered;
        self.duplicates += o.duplicates;
        self.suppressed += o.suppressed;
        self.frozen_drops += o.frozen_drops;
    }
}

/// One Level-1 activation, from bootstrap to shutdown.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMetrics {
    pub instance: crate::model::InstanceId,
    pub lp_id: usize,
    pub opened_at: u32,
    pub closed_at: u32,
    pub entities: usize,
    /// Seconds spent in this session, bootstrap and shutdown included.
    pub wct: f64,
    pub peak_rss: Option<u64>,
    pub counters: Counters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub total_wct: f64,
    /// `total_wct` minus the time Level 0 spent blocked on Level 1.
    pub l0_only_wct: f64,
    pub instances: Vec<InstanceMetrics>,
    pub peak_rss_l0: Option<u64>,
    pub messages: MessageTotals,
    pub config: SimConfig,
}

impl RunMetrics {
    pub fn l1_wct(&self) -> Vec<f64> {
        self.instances.iter().map(|i| i.wct).collect()
    }

    pub fn l1_counters(&self) -> Counters {
        let mut c = Counters::default();
        for i in &self.instances {
            c += i.counters;
        }
        c
    }

    pub fn peak_rss_l1_max(&self) -> Option<u64> {
        self.instances.iter().filter_map(|i| i.peak_rss).max()
    }

    pub fn row(&self) -> MetricsRow {
        let c = &self.config;
        let l1 = self.l1_wct();
        let l1c = self.l1_counters();
        MetricsRow {
            num_ses: c.num_ses,
            num_lps: c.num_lps,
            timesteps: c.total_timesteps,
            seed: c.seed,
            ttl: c.ttl,
            prob: c.dissemination_prob,
            cache: c.cache_capacity,
            l1_activations: self.instances.len(),
            total_wct: self.total_wct,
            l0_only_wct: self.l0_only_wct,
            l1_wct_sum: l1.iter().fold(0.0, |a, b| a + b),
            l1_wct_max: l1.iter().copied().fold(0.0, f64::max),
            peak_rss_l0: self.peak_rss_l0,
            peak_rss_l1: self.peak_rss_l1_max(),
            generated: self.messages.generated,
            forwarded: self.messages.forwarded,
            delivered: self.messages.delivered,
            duplicates: self.messages.duplicates,
            suppressed: self.messages.suppressed,
            frozen_drops: self.messages.frozen_drops,
            l1_rreq: l1c.rreq,
            l1_rrep: l1c.rrep,
            l1_arrivals: l1c.arrivals,
        }
    }
}

/// Flat CSV form of [`RunMetrics`]. Absent memory readings are empty cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub num_ses: usize,
    pub num_lps: usize,
    pub timesteps: u32,
    pub seed: u64,
    pub ttl: u32,
    pub prob: f64,
    pub cache: usize,
    pub l1_activations: usize,
    pub total_wct: f64,
    pub l0_only_wct: f64,
    pub l1_wct_sum: f64,
    pub l1_wct_max: f64,
    pub peak_rss_l0: Option<u64>,
    pub peak_rss_l1: Option<u64>,
    pub generated: u64,
    pub forwarded: u64,
    pub delivered: u64,
    pub duplicates: u64,
    pub suppressed: u64,
    pub frozen_drops: u64,
    pub l1_rreq: u64,
    pub l1_rrep: u64,
    pub l1_arrivals: u64,
}

pub fn write_rows<W: io::Write>(out: W, rows: &[MetricsRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: io::Read>(input: R) -> csv::Result<Vec<MetricsRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InstanceId;

    fn metrics() -> RunMetrics {
        RunMetrics {
            total_wct: 2.5,
            l0_only_wct: 1.5,
            instances: vec![
                InstanceMetrics {
                    instance: InstanceId(0),
                    lp_id: 0,
                    opened_at: 3,
                    closed_at: 4,
                    entities: 1,
                    wct: 0.25,
                    peak_rss: Some(4096),
                    counters: Counters { rreq: 100, rrep: 5, arrivals: 1, events_processed: 300 },
                },
                InstanceMetrics {
                    instance: InstanceId(1),
                    lp_id: 0,
                    opened_at: 5,
                    closed_at: 6,
                    entities: 1,
                    wct: 0.75,
                    peak_rss: None,
                    counters: Counters { rreq: 100, rrep: 3, arrivals: 0, events_processed: 300 },
                },
            ],
            peak_rss_l0: None,
            messages: MessageTotals { generated: 10, forwarded: 20, delivered: 30, ..Default::default() },
            config: SimConfig::default(),
        }
    }

    #[test]
    fn row_aggregates() {
        let r = metrics().row();
        assert_eq!(r.l1_activations, 2);
        assert_eq!(r.l1_wct_sum, 1.0);
        assert_eq!(r.l1_wct_max, 0.75);
        assert_eq!(r.peak_rss_l1, Some(4096));
        assert_eq!((r.l1_rreq, r.l1_rrep, r.l1_arrivals), (200, 8, 1));
    }

    #[test]
    fn csv_round_trip_with_empty_cells() {
        let r = metrics().row();
        let mut buf = Vec::new();
        write_rows(&mut buf, std::slice::from_ref(&r)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("num_ses,num_lps,"));
        assert!(text.lines().nth(1).unwrap().contains(",,4096,"));
        assert_eq!(read_rows(&buf[..]).unwrap(), vec![r]);
    }
}
