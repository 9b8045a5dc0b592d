//! Run accounting: per-path, per-flow, and network-wide counters,
//! periodic snapshots, multi-run aggregation, and time series export.
//!
//! Packet conservation is enforced, not assumed: every data packet id
//! enters a live set when created and leaves it exactly once, on
//! delivery or on a drop. A delivery of an unknown id, or totals that
//! stop matching `sent = received + dropped + live`, abort the run.
//!
//! Delivery ratio is `100 * received / sent` (0 when nothing was sent).
//! Per-path counters attribute a packet when it is *committed* to a
//! path, which can be later than its creation if it sat in a discovery
//! buffer, so path-level sent counts can trail flow-level ones.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::engine::PacketId;
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("packet {0} delivered or dropped but never sent (or finished twice)")]
    UnknownPacket(PacketId),
    #[error("conservation broken: sent {sent} != received {received} + dropped {dropped} + live {live}")]
    ConservationViolated { sent: u64, received: u64, dropped: u64, live: u64 },
    #[error("flow totals ({flows}) disagree with the global ledger ({global}) for {what}")]
    LedgerMismatch { what: &'static str, flows: u64, global: u64 },
    #[error("{got} runs aggregated but at least {need} required")]
    TooFewRuns { got: usize, need: usize },
    #[error("run reports disagree in shape: {0}")]
    MismatchedRuns(String),
    #[error("no metric named {0:?}")]
    UnknownMetric(String),
}

/// Cumulative state of one accounting bucket at one sample instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: SimTime,
    pub sent: u64,
    pub received: u64,
    pub dropped: u64,
    pub pdr_percent: f64,
    pub mean_delay_s: f64,
    pub energy_j: f64,
}

#[derive(Debug, Clone, Default)]
struct Bucket {
    sent: u64,
    received: u64,
    dropped: u64,
    delay_sum_ns: u128,
    energy_j: f64,
    series: Vec<Sample>,
}

impl Bucket {
    fn pdr_percent(&self) -> f64 {
        pdr_percent(self.received, self.sent)
    }

    fn mean_delay_s(&self) -> f64 {
        if self.received == 0 {
            0.0
        } else {
            self.delay_sum_ns as f64 / self.received as f64 / 1e9
        }
    }

    fn snapshot(&mut self, t: SimTime) {
        let sample = Sample {
            t,
            sent: self.sent,
            received: self.received,
            dropped: self.dropped,
            pdr_percent: self.pdr_percent(),
            mean_delay_s: self.mean_delay_s(),
            energy_j: self.energy_j,
        };
        self.series.push(sample);
    }

    fn report(&self) -> BucketReport {
        BucketReport {
            sent: self.sent,
            received: self.received,
            dropped: self.dropped,
            pdr_percent: self.pdr_percent(),
            mean_delay_s: self.mean_delay_s(),
            energy_j: self.energy_j,
            series: self.series.clone(),
        }
    }
}

/// Packets delivered out of packets sent, as a percentage.
pub fn pdr_percent(received: u64, sent: u64) -> f64 {
    if sent == 0 {
        0.0
    } else {
        100.0 * received as f64 / sent as f64
    }
}

/// Gathers counters during a run. Buckets must be declared up front so
/// every sample snapshots the same set and series stay aligned.
#[derive(Debug)]
pub struct Collector {
    flow_names: Vec<String>,
    per_path: BTreeMap<String, Bucket>,
    per_flow: BTreeMap<String, Bucket>,
    global: Bucket,
    control_sent: u64,
    control_dropped: u64,
    control_energy_j: f64,
    live: BTreeSet<PacketId>,
    bandwidth_series: Vec<(SimTime, f64)>,
    flow_path_received: BTreeMap<(String, String), u64>,
    primary_flow: Option<String>,
}

impl Collector {
    pub fn new(flow_names: Vec<String>, primary_flow: Option<String>) -> Collector {
        let per_flow = flow_names.iter().map(|n| (n.clone(), Bucket::default())).collect();
        Collector {
            flow_names,
            per_path: BTreeMap::new(),
            per_flow,
            global: Bucket::default(),
            control_sent: 0,
            control_dropped: 0,
            control_energy_j: 0.0,
            live: BTreeSet::new(),
            bandwidth_series: Vec::new(),
            flow_path_received: BTreeMap::new(),
            primary_flow,
        }
    }

    pub fn declare_path(&mut self, label: &str) {
        self.per_path.entry(label.to_string()).or_default();
    }

    /// A data packet came into existence.
    pub fn record_send(&mut self, id: PacketId, flow: usize) {
        self.live.insert(id);
        self.global.sent += 1;
        self.flow_bucket(flow).sent += 1;
    }

    /// The packet was put onto a concrete path at its source.
    pub fn record_path_commit(&mut self, label: &str) {
        self.per_path.entry(label.to_string()).or_default().sent += 1;
    }

    pub fn record_receive(
        &mut self,
        id: PacketId,
        flow: usize,
        path_label: &str,
        delay: SimDuration,
    ) -> Result<(), MetricsError> {
        if !self.live.remove(&id) {
            return Err(MetricsError::UnknownPacket(id));
        }
        self.global.received += 1;
        self.global.delay_sum_ns += delay.as_nanos() as u128;
        let flow_name = self.flow_names[flow].clone();
        let b = self.flow_bucket(flow);
        b.received += 1;
        b.delay_sum_ns += delay.as_nanos() as u128;
        let p = self.per_path.entry(path_label.to_string()).or_default();
        p.received += 1;
        p.delay_sum_ns += delay.as_nanos() as u128;
        *self
            .flow_path_received
            .entry((flow_name, path_label.to_string()))
            .or_default() += 1;
        Ok(())
    }

    pub fn record_drop(
        &mut self,
        id: PacketId,
        flow: usize,
        path_label: Option<&str>,
    ) -> Result<(), MetricsError> {
        if !self.live.remove(&id) {
            return Err(MetricsError::UnknownPacket(id));
        }
        self.global.dropped += 1;
        self.flow_bucket(flow).dropped += 1;
        if let Some(label) = path_label {
            self.per_path.entry(label.to_string()).or_default().dropped += 1;
        }
        Ok(())
    }

    /// Energy spent moving bytes. Data packets bill their path and flow;
    /// routing traffic (no path) bills the control ledger. Both go into
    /// the global total.
    pub fn add_energy(&mut self, joules: f64, path_label: Option<&str>, flow: Option<usize>) {
        self.global.energy_j += joules;
        match path_label {
            Some(label) => {
                self.per_path.entry(label.to_string()).or_default().energy_j += joules
            }
            None => self.control_energy_j += joules,
        }
        if let Some(flow) = flow {
            self.flow_bucket(flow).energy_j += joules;
        }
    }

    pub fn note_control_sent(&mut self) {
        self.control_sent += 1;
    }

    pub fn note_control_dropped(&mut self) {
        self.control_dropped += 1;
    }

    pub fn push_bandwidth(&mut self, t: SimTime, bps: f64) {
        self.bandwidth_series.push((t, bps));
    }

    pub fn in_flight(&self) -> u64 {
        self.live.len() as u64
    }

    /// Snapshots every bucket and verifies the packet ledger.
    pub fn sample(&mut self, t: SimTime) -> Result<(), MetricsError> {
        self.check_conservation()?;
        self.global.snapshot(t);
        for bucket in self.per_path.values_mut() {
            bucket.snapshot(t);
        }
        for bucket in self.per_flow.values_mut() {
            bucket.snapshot(t);
        }
        Ok(())
    }

    pub fn check_conservation(&self) -> Result<(), MetricsError> {
        let g = &self.global;
        let live = self.live.len() as u64;
        if g.sent != g.received + g.dropped + live {
            return Err(MetricsError::ConservationViolated {
                sent: g.sent,
                received: g.received,
                dropped: g.dropped,
                live,
            });
        }
        for (what, per_flow, global) in [
            ("sent", self.per_flow.values().map(|b| b.sent).sum::<u64>(), g.sent),
            ("received", self.per_flow.values().map(|b| b.received).sum(), g.received),
            ("dropped", self.per_flow.values().map(|b| b.dropped).sum(), g.dropped),
        ] {
            if per_flow != global {
                return Err(MetricsError::LedgerMismatch { what, flows: per_flow, global });
            }
        }
        Ok(())
    }

    pub fn finalize(&self) -> Result<MetricsReport, MetricsError> {
        self.check_conservation()?;
        Ok(MetricsReport {
            in_flight_at_end: self.live.len() as u64,
            per_path: self.per_path.iter().map(|(k, b)| (k.clone(), b.report())).collect(),
            per_flow: self.per_flow.iter().map(|(k, b)| (k.clone(), b.report())).collect(),
            global: self.global.report(),
            control: ControlReport {
                sent: self.control_sent,
                dropped: self.control_dropped,
                energy_j: self.control_energy_j,
            },
            bandwidth_series: self.bandwidth_series.clone(),
            flow_path_received: self.flow_path_received.clone(),
            primary_flow: self.primary_flow.clone(),
        })
    }

    fn flow_bucket(&mut self, flow: usize) -> &mut Bucket {
        let name = &self.flow_names[flow];
        self.per_flow.get_mut(name).expect("flows declared at construction")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketReport {
    pub sent: u64,
    pub received: u64,
    pub dropped: u64,
    pub pdr_percent: f64,
    pub mean_delay_s: f64,
    pub energy_j: f64,
    pub series: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlReport {
    pub sent: u64,
    pub dropped: u64,
    pub energy_j: f64,
}

/// Everything measured in one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_path: BTreeMap<String, BucketReport>,
    pub per_flow: BTreeMap<String, BucketReport>,
    pub global: BucketReport,
    pub control: ControlReport,
    /// Bits/s serialized on the measured path per sample window.
    pub bandwidth_series: Vec<(SimTime, f64)>,
    /// (flow, path) -> packets of that flow delivered over that path.
    pub flow_path_received: BTreeMap<(String, String), u64>,
    pub primary_flow: Option<String>,
    pub in_flight_at_end: u64,
}

/// Point-in-time means across runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSample {
    pub t: SimTime,
    pub sent: f64,
    pub received: f64,
    pub dropped: f64,
    pub pdr_percent: f64,
    pub mean_delay_s: f64,
    pub energy_j: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanBucket {
    pub sent: f64,
    pub received: f64,
    pub dropped: f64,
    /// Mean of the per-run ratios, not the ratio of the means.
    pub pdr_percent: f64,
    pub mean_delay_s: f64,
    pub energy_j: f64,
    pub series: Vec<MeanSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanReport {
    pub runs: usize,
    pub per_path: BTreeMap<String, MeanBucket>,
    pub per_flow: BTreeMap<String, MeanBucket>,
    pub global: MeanBucket,
    pub bandwidth_series: Vec<(SimTime, f64)>,
    pub primary_flow: Option<String>,
}

/// The runs of one scenario plus their element-wise mean.
#[derive(Debug)]
pub struct RunSet {
    pub reports: Vec<MetricsReport>,
    pub mean: MeanReport,
}

impl RunSet {
    /// Aggregates per-run reports. Refuses fewer than `min_runs` runs or
    /// runs whose bucket sets and sample grids disagree.
    pub fn aggregate(reports: Vec<MetricsReport>, min_runs: usize) -> Result<RunSet, MetricsError> {
        if reports.len() < min_runs || reports.is_empty() {
            return Err(MetricsError::TooFewRuns { got: reports.len(), need: min_runs.max(1) });
        }
        let first = &reports[0];
        for r in &reports[1..] {
            let same_paths = r.per_path.keys().eq(first.per_path.keys());
            let same_flows = r.per_flow.keys().eq(first.per_flow.keys());
            if !same_paths || !same_flows {
                return Err(MetricsError::MismatchedRuns("bucket sets differ".into()));
            }
        }
        let mut per_path = BTreeMap::new();
        for k in first.per_path.keys() {
            let buckets: Vec<&BucketReport> = reports.iter().map(|r| &r.per_path[k]).collect();
            per_path.insert(k.clone(), mean_of_buckets(&buckets)?);
        }
        let mut per_flow = BTreeMap::new();
        for k in first.per_flow.keys() {
            let buckets: Vec<&BucketReport> = reports.iter().map(|r| &r.per_flow[k]).collect();
            per_flow.insert(k.clone(), mean_of_buckets(&buckets)?);
        }
        let globals: Vec<&BucketReport> = reports.iter().map(|r| &r.global).collect();
        let global = mean_of_buckets(&globals)?;
        let bandwidth_series = mean_series(
            &reports.iter().map(|r| r.bandwidth_series.as_slice()).collect::<Vec<_>>(),
        )?;
        let mean = MeanReport {
            runs: reports.len(),
            per_path,
            per_flow,
            global,
            bandwidth_series,
            primary_flow: first.primary_flow.clone(),
        };
        Ok(RunSet { reports, mean })
    }
}

fn mean_of_buckets(buckets: &[&BucketReport]) -> Result<MeanBucket, MetricsError> {
    let n = buckets.len() as f64;
    let len = buckets[0].series.len();
    for b in buckets {
        if b.series.len() != len {
            return Err(MetricsError::MismatchedRuns("sample counts differ".into()));
        }
    }
    let mut series = Vec::with_capacity(len);
    for i in 0..len {
        let t = buckets[0].series[i].t;
        for b in buckets {
            if b.series[i].t != t {
                return Err(MetricsError::MismatchedRuns("sample times differ".into()));
            }
        }
        series.push(MeanSample {
            t,
            sent: buckets.iter().map(|b| b.series[i].sent as f64).sum::<f64>() / n,
            received: buckets.iter().map(|b| b.series[i].received as f64).sum::<f64>() / n,
            dropped: buckets.iter().map(|b| b.series[i].dropped as f64).sum::<f64>() / n,
            pdr_percent: buckets.iter().map(|b| b.series[i].pdr_percent).sum::<f64>() / n,
            mean_delay_s: buckets.iter().map(|b| b.series[i].mean_delay_s).sum::<f64>() / n,
            energy_j: buckets.iter().map(|b| b.series[i].energy_j).sum::<f64>() / n,
        });
    }
    Ok(MeanBucket {
        sent: buckets.iter().map(|b| b.sent as f64).sum::<f64>() / n,
        received: buckets.iter().map(|b| b.received as f64).sum::<f64>() / n,
        dropped: buckets.iter().map(|b| b.dropped as f64).sum::<f64>() / n,
        pdr_percent: buckets.iter().map(|b| b.pdr_percent).sum::<f64>() / n,
        mean_delay_s: buckets.iter().map(|b| b.mean_delay_s).sum::<f64>() / n,
        energy_j: buckets.iter().map(|b| b.energy_j).sum::<f64>() / n,
        series,
    })
}

fn mean_series(series: &[&[(SimTime, f64)]]) -> Result<Vec<(SimTime, f64)>, MetricsError> {
    let n = series.len() as f64;
    let len = series[0].len();
    for s in series {
        if s.len() != len {
            return Err(MetricsError::MismatchedRuns("bandwidth sample counts differ".into()));
        }
    }
    (0..len)
        .map(|i| {
            let t = series[0][i].0;
            for s in series {
                if s[i].0 != t {
                    return Err(MetricsError::MismatchedRuns("bandwidth sample times differ".into()));
                }
            }
            Ok((t, series.iter().map(|s| s[i].1).sum::<f64>() / n))
        })
        .collect()
}

/// Names accepted by [`emit_timeseries`].
pub fn metric_names() -> &'static [&'static str] {
    &["bandwidth", "packets_received", "pdr", "energy", "routing_delay", "packet_loss"]
}

/// One exportable curve: (seconds, value) per sample. All curves except
/// `bandwidth` follow the primary flow (falling back to the global
/// ledger when no primary flow is set).
pub fn emit_timeseries(mean: &MeanReport, metric: &str) -> Result<Vec<(f64, f64)>, MetricsError> {
    if metric == "bandwidth" {
        return Ok(mean
            .bandwidth_series
            .iter()
            .map(|&(t, bps)| (t.as_secs_f64(), bps))
            .collect());
    }
    let bucket = mean
        .primary_flow
        .as_ref()
        .and_then(|name| mean.per_flow.get(name))
        .unwrap_or(&mean.global);
    let value: fn(&MeanSample) -> f64 = match metric {
        "packets_received" => |s| s.received,
        "pdr" => |s| s.pdr_percent,
        "energy" => |s| s.energy_j,
        "routing_delay" => |s| s.mean_delay_s,
        "packet_loss" => |s| s.dropped,
        other => return Err(MetricsError::UnknownMetric(other.to_string())),
    };
    Ok(bucket.series.iter().map(|s| (s.t.as_secs_f64(), value(s))).collect())
}
