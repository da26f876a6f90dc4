//! Traceroute ingestion: JSON-lines traces in, daily snapshot table out.
//!
//! The pipeline is `parse → filter completed → hop edges → weekly sampling →
//! top-degree pruning → daily aggregation`. Node ids are assigned in order of
//! first appearance in the filtered stream and compacted again after pruning,
//! so the output is a pure function of the input bytes.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Read, Write};
use std::net::Ipv4Addr;

use chrono::{DateTime, Datelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{HermitError, Result};

pub const CSV_HEADER: &str = "source,target,time,weight,avg_rtt,std_rtt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hop {
    pub addr: String,
    pub rtt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub src: String,
    pub dst: String,
    #[serde(alias = "start")]
    pub start_sec: i64,
    pub stop_reason: String,
    pub hop_count: usize,
    pub hops: Vec<Hop>,
}

impl TraceRecord {
    fn is_well_formed(&self) -> bool {
        let ip_ok = |s: &str| s.parse::<Ipv4Addr>().is_ok();
        ip_ok(&self.src)
            && ip_ok(&self.dst)
            && self.hops.len() == self.hop_count
            && self.hops.iter().all(|h| ip_ok(&h.addr) && h.rtt.is_finite() && h.rtt >= 0.0)
    }

    /// Day index (days since the Unix epoch, UTC).
    pub fn day(&self) -> i64 {
        self.start_sec.div_euclid(86_400)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedTraces {
    pub records: Vec<TraceRecord>,
    pub skipped: usize,
}

/// Parses one trace per line. Blank lines are ignored; malformed lines are
/// counted in `skipped`. More than half malformed is a corrupt-input error.
pub fn parse_traces<R: BufRead>(reader: R) -> Result<ParsedTraces> {
    let mut out = ParsedTraces::default();
    let mut total = 0usize;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        match serde_json::from_str::<TraceRecord>(&line) {
            Ok(rec) if rec.is_well_formed() => out.records.push(rec),
            _ => out.skipped += 1,
        }
    }
    if total > 0 && out.skipped * 2 > total {
        return Err(HermitError::CorruptInput { malformed: out.skipped, total });
    }
    Ok(out)
}

pub fn filter_completed(records: Vec<TraceRecord>) -> Vec<TraceRecord> {
    records
        .into_iter()
        .filter(|r| r.stop_reason.eq_ignore_ascii_case("completed"))
        .collect()
}

/// Maps IPv4 strings to dense ids in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct NodeRegistry {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for NodeRegistry {
    fn from(names: Vec<String>) -> Self {
        Self::from_names(names)
    }
}

impl From<NodeRegistry> for Vec<String> {
    fn from(r: NodeRegistry) -> Self {
        r.names
    }
}

impl NodeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names(names: Vec<String>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, index }
    }

    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeSample {
    pub source: usize,
    pub target: usize,
    pub day: i64,
    pub rtt: f64,
}

/// Emits `src → hops[0]` with the first hop's RTT, then one edge per
/// consecutive hop pair carrying the RTT increase clamped at zero.
/// Self-loops are skipped.
pub fn trace_to_edge_samples(
    record: &TraceRecord,
    day: i64,
    registry: &mut NodeRegistry,
) -> Vec<EdgeSample> {
    let Some(first) = record.hops.first() else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(record.hops.len());
    let src = registry.intern(&record.src);
    let h0 = registry.intern(&first.addr);
    if src != h0 {
        out.push(EdgeSample { source: src, target: h0, day, rtt: first.rtt.max(0.0) });
    }
    for pair in record.hops.windows(2) {
        let a = registry.intern(&pair[0].addr);
        let b = registry.intern(&pair[1].addr);
        if a == b {
            continue;
        }
        out.push(EdgeSample { source: a, target: b, day, rtt: (pair[1].rtt - pair[0].rtt).max(0.0) });
    }
    out
}

/// Keeps the `ceil(fraction·|V|)` nodes of highest degree (distinct in- plus
/// out-neighbours over all samples; ties to the smaller id) and drops every
/// sample with an endpoint outside that set.
pub fn prune_top_degree(samples: Vec<EdgeSample>, fraction: f64) -> Result<Vec<EdgeSample>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(HermitError::InvalidArgument(format!("top fraction must be in (0, 1], got {fraction}")));
    }
    if samples.is_empty() {
        return Ok(samples);
    }
    let distinct: BTreeSet<(usize, usize)> = samples.iter().map(|s| (s.source, s.target)).collect();
    let mut degree: BTreeMap<usize, usize> = BTreeMap::new();
    for &(u, v) in &distinct {
        *degree.entry(u).or_default() += 1;
        *degree.entry(v).or_default() += 1;
    }
    let keep_n = (fraction * degree.len() as f64).ceil() as usize;
    let mut ranked: Vec<(usize, usize)> = degree.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let kept: HashSet<usize> = ranked.iter().take(keep_n).map(|(id, _)| *id).collect();
    Ok(samples
        .into_iter()
        .filter(|s| kept.contains(&s.source) && kept.contains(&s.target))
        .collect())
}

/// Alternating three-day weekly sampling on ISO week parity.
pub fn weekly_sample(weekday: Weekday, iso_week: u32) -> bool {
    use Weekday::*;
    if iso_week % 2 == 1 {
        matches!(weekday, Mon | Wed | Sat)
    } else {
        matches!(weekday, Tue | Fri | Sun)
    }
}

/// Applies [`weekly_sample`] to a day index (days since epoch, UTC).
pub fn keep_day(day: i64) -> bool {
    match DateTime::from_timestamp(day * 86_400, 0) {
        Some(dt) => {
            let d = dt.date_naive();
            weekly_sample(d.weekday(), d.iso_week().week())
        }
        None => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotEdge {
    pub source: usize,
    pub target: usize,
    pub time: usize,
    pub weight: u64,
    pub avg_rtt: f64,
    pub std_rtt: f64,
}

/// One daily directed graph. Edges are sorted by `(source, target)` and unique.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: usize,
    pub edges: Vec<SnapshotEdge>,
}

impl Snapshot {
    /// Sorted distinct endpoints.
    pub fn nodes(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.edges.iter().flat_map(|e| [e.source, e.target]).collect();
        set.into_iter().collect()
    }

    pub fn edge_set(&self) -> HashSet<(usize, usize)> {
        self.edges.iter().map(|e| (e.source, e.target)).collect()
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e.source, e.target)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSequence {
    pub snapshots: Vec<Snapshot>,
    pub registry: NodeRegistry,
    pub num_nodes: usize,
}

impl SnapshotSequence {
    pub fn new(snapshots: Vec<Snapshot>, registry: NodeRegistry) -> Result<Self> {
        let max_id = snapshots
            .iter()
            .flat_map(|s| s.edges.iter().map(|e| e.source.max(e.target)))
            .max();
        if !registry.is_empty() {
            if let Some(m) = max_id {
                if m >= registry.len() {
                    return Err(HermitError::Schema(format!("edge endpoint {m} missing from registry")));
                }
            }
        }
        for w in snapshots.windows(2) {
            if w[1].time <= w[0].time {
                return Err(HermitError::Schema("snapshot times must be strictly increasing".into()));
            }
        }
        let num_nodes = registry.len().max(max_id.map_or(0, |m| m + 1));
        Ok(Self { snapshots, registry, num_nodes })
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Sub-sequence over a range of snapshot positions, keeping the full node vocabulary.
    pub fn slice(&self, range: std::ops::Range<usize>) -> SnapshotSequence {
        SnapshotSequence {
            snapshots: self.snapshots[range].to_vec(),
            registry: self.registry.clone(),
            num_nodes: self.num_nodes,
        }
    }

    pub fn total_edges(&self) -> usize {
        self.snapshots.iter().map(|s| s.edges.len()).sum()
    }
}

fn mean_and_population_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Groups samples by `(day, source, target)`; distinct days become
/// consecutive time indices in chronological order.
pub fn aggregate_daily(samples: &[EdgeSample], registry: NodeRegistry) -> Result<SnapshotSequence> {
    let mut groups: BTreeMap<(i64, usize, usize), Vec<f64>> = BTreeMap::new();
    for s in samples {
        if s.source == s.target {
            continue;
        }
        groups.entry((s.day, s.source, s.target)).or_default().push(s.rtt);
    }
    let days: BTreeSet<i64> = groups.keys().map(|k| k.0).collect();
    let day_index: HashMap<i64, usize> = days.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let mut snapshots: Vec<Snapshot> =
        (0..days.len()).map(|time| Snapshot { time, edges: Vec::new() }).collect();
    for ((day, source, target), rtts) in groups {
        let time = day_index[&day];
        let (avg_rtt, std_rtt) = mean_and_population_std(&rtts);
        let std_rtt = if rtts.len() == 1 { 0.0 } else { std_rtt };
        snapshots[time].edges.push(SnapshotEdge {
            source,
            target,
            time,
            weight: rtts.len() as u64,
            avg_rtt,
            std_rtt,
        });
    }
    SnapshotSequence::new(snapshots, registry)
}

#[derive(Debug, Clone, Copy)]
pub struct IngestOptions {
    pub top_fraction: f64,
    pub weekly_sampling: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { top_fraction: 0.05, weekly_sampling: true }
    }
}

#[derive(Debug, Clone)]
pub struct IngestSummary {
    pub sequence: SnapshotSequence,
    pub skipped_lines: usize,
    pub records_kept: usize,
    pub samples_kept: usize,
}

/// Runs the whole ingestion pipeline over already-parsed records.
pub fn build_sequence(records: Vec<TraceRecord>, opts: IngestOptions) -> Result<(SnapshotSequence, usize, usize)> {
    let completed = filter_completed(records);
    let n_records = completed.len();
    let mut registry = NodeRegistry::new();
    let mut samples = Vec::new();
    for rec in &completed {
        let day = rec.day();
        samples.extend(trace_to_edge_samples(rec, day, &mut registry));
    }
    if opts.weekly_sampling {
        samples.retain(|s| keep_day(s.day));
    }
    let samples = prune_top_degree(samples, opts.top_fraction)?;

    // Compact surviving ids in first-appearance order.
    let mut remap: HashMap<usize, usize> = HashMap::new();
    let mut compact = NodeRegistry::new();
    let samples: Vec<EdgeSample> = samples
        .into_iter()
        .map(|s| {
            let mut map = |id: usize| {
                *remap.entry(id).or_insert_with(|| compact.intern(registry.name(id).unwrap_or_default()))
            };
            let source = map(s.source);
            let target = map(s.target);
            EdgeSample { source, target, ..s }
        })
        .collect();
    let n_samples = samples.len();
    Ok((aggregate_daily(&samples, compact)?, n_records, n_samples))
}

/// Parses every reader in order and runs [`build_sequence`] on the concatenation.
pub fn ingest<R: BufRead>(readers: Vec<R>, opts: IngestOptions) -> Result<IngestSummary> {
    let mut records = Vec::new();
    let mut skipped = 0;
    for r in readers {
        let parsed = parse_traces(r)?;
        skipped += parsed.skipped;
        records.extend(parsed.records);
    }
    let (sequence, records_kept, samples_kept) = build_sequence(records, opts)?;
    Ok(IngestSummary { sequence, skipped_lines: skipped, records_kept, samples_kept })
}

pub fn write_csv<W: Write>(seq: &SnapshotSequence, mut w: W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for snap in &seq.snapshots {
        for e in &snap.edges {
            writeln!(
                w,
                "{},{},{},{},{:.6},{:.6}",
                e.source, e.target, snap.time, e.weight, e.avg_rtt, e.std_rtt
            )?;
        }
    }
    Ok(())
}

/// Reads the six-column snapshot CSV, validating the schema.
pub fn read_csv<R: Read>(r: R) -> Result<SnapshotSequence> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr.headers().map_err(|e| HermitError::Schema(e.to_string()))?.clone();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    let want: Vec<&str> = CSV_HEADER.split(',').collect();
    if got != want {
        return Err(HermitError::Schema(format!("expected header `{CSV_HEADER}`, got `{}`", got.join(","))));
    }
    let mut by_time: BTreeMap<usize, BTreeMap<(usize, usize), SnapshotEdge>> = BTreeMap::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| HermitError::Schema(e.to_string()))?;
        let bad = |what: &str| HermitError::Schema(format!("row {}: bad {what}", line + 2));
        let field = |i: usize| row.get(i).map(str::trim).unwrap_or("");
        let source: usize = field(0).parse().map_err(|_| bad("source"))?;
        let target: usize = field(1).parse().map_err(|_| bad("target"))?;
        let time: usize = field(2).parse().map_err(|_| bad("time"))?;
        let weight: u64 = field(3).parse().map_err(|_| bad("weight"))?;
        let avg_rtt: f64 = field(4).parse().map_err(|_| bad("avg_rtt"))?;
        let std_rtt: f64 = field(5).parse().map_err(|_| bad("std_rtt"))?;
        if source == target {
            return Err(bad("edge (self-loop)"));
        }
        if weight == 0 {
            return Err(bad("weight (must be >= 1)"));
        }
        if !(avg_rtt.is_finite() && avg_rtt >= 0.0 && std_rtt.is_finite() && std_rtt >= 0.0) {
            return Err(bad("rtt (must be finite and non-negative)"));
        }
        let edge = SnapshotEdge { source, target, time, weight, avg_rtt, std_rtt };
        if by_time.entry(time).or_default().insert((source, target), edge).is_some() {
            return Err(bad("edge (duplicate within snapshot)"));
        }
    }
    let snapshots = by_time
        .into_iter()
        .map(|(time, edges)| Snapshot { time, edges: edges.into_values().collect() })
        .collect();
    SnapshotSequence::new(snapshots, NodeRegistry::new())
}
