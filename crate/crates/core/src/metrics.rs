//! Signaling ledger, per-demand records, run summaries and file export.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{Demand, DemandStatus, Layer};

/// Where a message's bytes are booked. Every message lands in exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum LedgerBucket {
    /// Control traffic attributable to one demand.
    Demand(usize),
    /// Pool admit/evict, handover notices, anomaly flags.
    Maintenance,
    ModelUpdate,
    /// Control messages resent after an abort.
    Retransmission,
    /// Payload traffic (raw, semantic, results, forwarded data, migrations).
    DataPlane,
}

/// Control-plane message sizes. Every control message also carries `header`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignalingBudget {
    pub header: u64,
    pub status_summary: u64,
    pub result_report: u64,
    pub demand_packet: u64,
    pub cloud_forward: u64,
    pub cloud_return: u64,
    pub handover_notice: u64,
    pub pool_notice: u64,
    pub anomaly_flag: u64,
    pub centralized_status: u64,
    pub centralized_request: u64,
    pub centralized_feedback: u64,
    pub centralized_sync: u64,
}

impl Default for SignalingBudget {
    fn default() -> Self {
        Self {
            header: 250,
            status_summary: 2000,
            result_report: 1000,
            demand_packet: 750,
            cloud_forward: 750,
            cloud_return: 750,
            handover_notice: 100,
            pool_notice: 100,
            anomaly_flag: 100,
            centralized_status: 5000,
            centralized_request: 2000,
            centralized_feedback: 4000,
            centralized_sync: 3000,
        }
    }
}

impl SignalingBudget {
    /// On-wire size of a control message with the given body.
    pub fn wire(&self, body: u64) -> u64 {
        body + self.header
    }

    /// Planned per-demand control bytes for a multi-layer demand served at `layer`.
    pub fn multilayer_total(&self, layer: Layer) -> u64 {
        let local = self.wire(self.status_summary) + self.wire(self.result_report);
        let edge = local + self.wire(self.demand_packet);
        match layer {
            Layer::Local => local,
            Layer::Edge => edge,
            Layer::Cloud => edge + self.wire(self.cloud_forward) + self.wire(self.cloud_return),
        }
    }

    pub fn centralized_total(&self) -> u64 {
        self.wire(self.centralized_status)
            + self.wire(self.centralized_request)
            + self.wire(self.centralized_feedback)
            + self.wire(self.centralized_sync)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AccountingError {
    #[error("bytes attributed to unknown demand {0}")]
    UnknownDemand(usize),
}

/// Byte totals per ledger bucket.
#[derive(Debug, Clone, Default)]
pub struct Ledger {
    per_demand: Vec<u64>,
    maintenance: u64,
    model_update: u64,
    retransmission: u64,
    data_plane: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub demand: u64,
    pub maintenance: u64,
    pub model_update: u64,
    pub retransmission: u64,
    pub data_plane: u64,
    /// Everything except the data plane.
    pub signaling: u64,
}

impl Ledger {
    /// Opens a per-demand account; ids must be dense and increasing.
    pub fn open_demand(&mut self, id: usize) {
        assert_eq!(id, self.per_demand.len(), "demand ids must be dense");
        self.per_demand.push(0);
    }

    pub fn record(&mut self, bucket: LedgerBucket, bytes: u64) -> Result<(), AccountingError> {
        match bucket {
            LedgerBucket::Demand(id) => {
                *self
                    .per_demand
                    .get_mut(id)
                    .ok_or(AccountingError::UnknownDemand(id))? += bytes;
            }
            LedgerBucket::Maintenance => self.maintenance += bytes,
            LedgerBucket::ModelUpdate => self.model_update += bytes,
            LedgerBucket::Retransmission => self.retransmission += bytes,
            LedgerBucket::DataPlane => self.data_plane += bytes,
        }
        Ok(())
    }

    /// Control-plane bytes attributed to `demand`.
    pub fn account_signaling(&self, demand: usize) -> Result<u64, AccountingError> {
        self.per_demand
            .get(demand)
            .copied()
            .ok_or(AccountingError::UnknownDemand(demand))
    }

    pub fn bucket(&self, bucket: LedgerBucket) -> u64 {
        match bucket {
            LedgerBucket::Demand(id) => self.per_demand.get(id).copied().unwrap_or(0),
            LedgerBucket::Maintenance => self.maintenance,
            LedgerBucket::ModelUpdate => self.model_update,
            LedgerBucket::Retransmission => self.retransmission,
            LedgerBucket::DataPlane => self.data_plane,
        }
    }

    pub fn totals(&self) -> LedgerTotals {
        let demand = self.per_demand.iter().sum();
        LedgerTotals {
            demand,
            maintenance: self.maintenance,
            model_update: self.model_update,
            retransmission: self.retransmission,
            data_plane: self.data_plane,
            signaling: demand + self.maintenance + self.model_update + self.retransmission,
        }
    }
}

/// One exported row per completed demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandRecord {
    pub demand_id: usize,
    pub origin: usize,
    pub class: Layer,
    pub serving_layer: Layer,
    pub t_created: f64,
    pub t_completed: f64,
    pub latency_s: f64,
    pub queue_wait_s: f64,
    pub transmission_s: f64,
    pub compute_s: f64,
    pub buffering_s: f64,
    pub signaling_bytes: u64,
    pub handover_affected: bool,
}

impl DemandRecord {
    pub fn from_demand(d: &Demand) -> Option<Self> {
        if d.status != DemandStatus::Completed {
            return None;
        }
        let t_completed = d.t_completed?.secs();
        let t_created = d.t_created.secs();
        Some(Self {
            demand_id: d.id,
            origin: d.origin,
            class: d.class(),
            serving_layer: d.serving_layer?,
            t_created,
            t_completed,
            latency_s: t_completed - t_created,
            queue_wait_s: d.breakdown.queue_wait,
            transmission_s: d.breakdown.transmission,
            compute_s: d.breakdown.compute,
            buffering_s: d.breakdown.buffering,
            signaling_bytes: d.signaling_bytes,
            handover_affected: d.handover_affected,
        })
    }

    pub fn breakdown_total(&self) -> f64 {
        self.queue_wait_s + self.transmission_s + self.compute_s + self.buffering_s
    }
}

/// Mean latency per one-second bucket of completion time. Seconds without
/// completions are `None`. Completions at exactly `duration` go in the
/// last bucket.
pub fn per_second_series(records: &[DemandRecord], duration_s: f64) -> Vec<Option<f64>> {
    let len = duration_s.ceil().max(0.0) as usize;
    let mut sums = vec![(0.0, 0usize); len];
    if len == 0 {
        return Vec::new();
    }
    for r in records {
        let b = (r.t_completed.floor() as usize).min(len - 1);
        sums[b].0 += r.latency_s;
        sums[b].1 += 1;
    }
    sums.into_iter()
        .map(|(s, n)| (n > 0).then(|| s / n as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Volatility {
    pub sd: Option<f64>,
    pub cv: Option<f64>,
}

/// Population standard deviation and coefficient of variation over the
/// present buckets; undefined for fewer than two.
pub fn volatility(series: &[Option<f64>]) -> Volatility {
    let present: Vec<f64> = series.iter().flatten().copied().collect();
    if present.len() < 2 {
        return Volatility { sd: None, cv: None };
    }
    let n = present.len() as f64;
    let mean = present.iter().sum::<f64>() / n;
    let sd = (present.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    Volatility {
        sd: Some(sd),
        cv: (mean != 0.0).then(|| sd / mean),
    }
}

/// Share of present buckets inside `[lo, hi]`.
pub fn fraction_within(series: &[Option<f64>], lo: f64, hi: f64) -> Option<f64> {
    let present: Vec<f64> = series.iter().flatten().copied().collect();
    if present.is_empty() {
        return None;
    }
    let inside = present.iter().filter(|v| (lo..=hi).contains(*v)).count();
    Some(inside as f64 / present.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean: Option<f64>,
    pub median: Option<f64>,
    /// Nearest-rank 95th percentile.
    pub p95: Option<f64>,
}

pub fn latency_stats(records: &[DemandRecord]) -> LatencyStats {
    let mut v: Vec<f64> = records.iter().map(|r| r.latency_s).collect();
    if v.is_empty() {
        return LatencyStats {
            mean: None,
            median: None,
            p95: None,
        };
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    LatencyStats {
        mean: Some(v.iter().sum::<f64>() / n as f64),
        median: Some(median),
        p95: Some(v[rank - 1]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerLayer<T> {
    pub local: T,
    pub edge: T,
    pub cloud: T,
}

impl<T> PerLayer<T> {
    pub fn get_mut(&mut self, layer: Layer) -> &mut T {
        match layer {
            Layer::Local => &mut self.local,
            Layer::Edge => &mut self.edge,
            Layer::Cloud => &mut self.cloud,
        }
    }

    pub fn get(&self, layer: Layer) -> &T {
        match layer {
            Layer::Local => &self.local,
            Layer::Edge => &self.edge,
            Layer::Cloud => &self.cloud,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HandoverStats {
    /// Mover decisions taken on mobility ticks.
    pub reassociations: u64,
    pub started: u64,
    pub completed: u64,
    pub coalesced: u64,
    pub cancelled: u64,
    pub buffered_messages: u64,
    pub aborted_transfers: u64,
    pub restarts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: String,
    pub seed: u64,
    pub duration_s: f64,
    pub generated: usize,
    pub completed: usize,
    pub failed: usize,
    pub pending_at_end: usize,
    pub latency: LatencyStats,
    pub series: Vec<Option<f64>>,
    pub volatility: Volatility,
    pub served: PerLayer<usize>,
    /// Mean per-demand control bytes by serving layer.
    pub signaling_per_demand: PerLayer<Option<f64>>,
    pub ledger: LedgerTotals,
    pub model_update_bytes: u64,
    pub handovers: HandoverStats,
    pub wasted_bytes: f64,
    pub messages_delivered: usize,
    pub messages_aborted: usize,
    pub anomalies: u64,
    pub events_dispatched: u64,
    pub trace_digest: String,
    /// Set when the run stopped on an invariant violation.
    pub failure: Option<String>,
}

impl RunSummary {
    pub fn signaling_by_layer(records: &[DemandRecord]) -> PerLayer<Option<f64>> {
        let mut acc: PerLayer<(u64, usize)> = PerLayer::default();
        for r in records {
            let a = acc.get_mut(r.serving_layer);
            a.0 += r.signaling_bytes;
            a.1 += 1;
        }
        let mean = |(s, n): (u64, usize)| (n > 0).then(|| s as f64 / n as f64);
        PerLayer {
            local: mean(acc.local),
            edge: mean(acc.edge),
            cloud: mean(acc.cloud),
        }
    }

    pub fn served_by_layer(records: &[DemandRecord]) -> PerLayer<usize> {
        let mut out = PerLayer::default();
        for r in records {
            *out.get_mut(r.serving_layer) += 1;
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("CSV error on {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("JSON error on {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExportError + '_ {
    move |source| ExportError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn records_to_csv(records: &[DemandRecord]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record([
        "demand_id",
        "origin",
        "class",
        "serving_layer",
        "t_created",
        "t_completed",
        "latency_s",
        "queue_wait_s",
        "transmission_s",
        "compute_s",
        "buffering_s",
        "signaling_bytes",
        "handover_affected",
    ])?;
    for r in records {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

pub fn records_from_csv(data: &[u8]) -> Result<Vec<DemandRecord>, csv::Error> {
    csv::Reader::from_reader(data).deserialize().collect()
}

pub fn write_records_csv(path: &Path, records: &[DemandRecord]) -> Result<(), ExportError> {
    let bytes = records_to_csv(records).map_err(|source| ExportError::Csv {
        path: path.display().to_string(),
        source,
    })?;
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_records_csv(path: &Path) -> Result<Vec<DemandRecord>, ExportError> {
    let data = fs::read(path).map_err(io_err(path))?;
    records_from_csv(&data).map_err(|source| ExportError::Csv {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExportError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| ExportError::Json {
        path: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn write_records_json(path: &Path, records: &[DemandRecord]) -> Result<(), ExportError> {
    write_json(path, &records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeDigest {
    pub completed: usize,
    pub mean_latency_s: Option<f64>,
    pub sd: Option<f64>,
    pub cv: Option<f64>,
    pub mean_signaling_bytes: Option<f64>,
}

impl ModeDigest {
    pub fn from_records(records: &[DemandRecord], duration_s: f64) -> Self {
        let series = per_second_series(records, duration_s);
        let vol = volatility(&series);
        let n = records.len();
        let mean = |f: &dyn Fn(&DemandRecord) -> f64| {
            (n > 0).then(|| records.iter().map(f).sum::<f64>() / n as f64)
        };
        Self {
            completed: n,
            mean_latency_s: mean(&|r| r.latency_s),
            sd: vol.sd,
            cv: vol.cv,
            mean_signaling_bytes: mean(&|r| r.signaling_bytes as f64),
        }
    }
}

/// Side-by-side digest of a centralized and a multi-layer run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub duration_s: f64,
    pub centralized: ModeDigest,
    pub multilayer: ModeDigest,
    /// Centralized mean latency minus multi-layer mean latency.
    pub latency_delta_s: Option<f64>,
    /// Centralized cv over multi-layer cv.
    pub volatility_ratio: Option<f64>,
    pub sd_ratio: Option<f64>,
    pub signaling_ratio: Option<f64>,
}

fn ratio(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) if b != 0.0 => Some(a / b),
        _ => None,
    }
}

pub fn compare(
    centralized: &[DemandRecord],
    multilayer: &[DemandRecord],
    duration_s: f64,
) -> Comparison {
    let c = ModeDigest::from_records(centralized, duration_s);
    let m = ModeDigest::from_records(multilayer, duration_s);
    Comparison {
        duration_s,
        latency_delta_s: c.mean_latency_s.zip(m.mean_latency_s).map(|(a, b)| a - b),
        volatility_ratio: ratio(c.cv, m.cv),
        sd_ratio: ratio(c.sd, m.sd),
        signaling_ratio: ratio(c.mean_signaling_bytes, m.mean_signaling_bytes),
        centralized: c,
        multilayer: m,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: usize, t_completed: f64, latency: f64) -> DemandRecord {
        DemandRecord {
            demand_id: id,
            origin: 0,
            class: Layer::Edge,
            serving_layer: Layer::Edge,
            t_created: t_completed - latency,
            t_completed,
            latency_s: latency,
            queue_wait_s: 0.0,
            transmission_s: latency,
            compute_s: 0.0,
            buffering_s: 0.0,
            signaling_bytes: 4500,
            handover_affected: false,
        }
    }

    #[test]
    fn budget_totals() {
        let b = SignalingBudget::default();
        assert_eq!(b.multilayer_total(Layer::Local), 3500);
        assert_eq!(b.multilayer_total(Layer::Edge), 4500);
        assert_eq!(b.multilayer_total(Layer::Cloud), 6500);
        assert_eq!(b.centralized_total(), 15000);
    }

    #[test]
    fn ledger_rejects_unknown_demand() {
        let mut l = Ledger::default();
        l.open_demand(0);
        l.record(LedgerBucket::Demand(0), 10).unwrap();
        assert_eq!(
            l.record(LedgerBucket::Demand(1), 10),
            Err(AccountingError::UnknownDemand(1))
        );
        assert_eq!(l.account_signaling(0), Ok(10));
    }

    #[test]
    fn series_buckets() {
        let s = per_second_series(&[rec(0, 3.2, 0.4)], 5.0);
        assert_eq!(s, vec![None, None, None, Some(0.4), None]);
        let s = per_second_series(&[rec(0, 5.0, 0.4)], 5.0);
        assert_eq!(s[4], Some(0.4));
        assert_eq!(per_second_series(&[], 2.5).len(), 3);
    }

    #[test]
    fn volatility_closed_form() {
        let v = volatility(&[Some(0.3), None, Some(0.5)]);
        assert!((v.sd.unwrap() - 0.1).abs() < 1e-12);
        assert!((v.cv.unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(volatility(&[Some(0.3), None]).sd, None);
        assert_eq!(volatility(&[Some(0.7); 4]).sd, Some(0.0));
    }

    #[test]
    fn stats() {
        let recs: Vec<_> = (1..=20).map(|i| rec(i, i as f64, i as f64 / 10.0)).collect();
        let s = latency_stats(&recs);
        assert!((s.mean.unwrap() - 1.05).abs() < 1e-12);
        assert!((s.median.unwrap() - 1.05).abs() < 1e-12);
        assert_eq!(s.p95, Some(1.9));
        assert_eq!(latency_stats(&[]).mean, None);
    }

    #[test]
    fn csv_header_only_when_empty() {
        let bytes = records_to_csv(&[]).unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "demand_id,origin,class,serving_layer,t_created,t_completed,latency_s,\
             queue_wait_s,transmission_s,compute_s,buffering_s,signaling_bytes,handover_affected\n"
        );
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![rec(0, 1.0 / 3.0, 0.1 + 0.2), rec(1, 7.123456789012345, 1e-9)];
        let back = records_from_csv(&records_to_csv(&recs).unwrap()).unwrap();
        assert_eq!(back, recs);
    }
}
