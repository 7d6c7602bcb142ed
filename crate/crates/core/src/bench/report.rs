use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{median_latency, QueryCounts};
use super::BenchError;
use crate::config::MonitorMode;
use crate::workloads::{InjectedBehavior, WorkloadSpec};

pub const REPORT_VERSION: u32 = 1;
const CSV_COLUMNS: &str = "target_rate,detection_period_ms,beats_every,e_alpha_s,e_beta_s,overhead,achieved_rate,\
alpha_samples_s,beta_samples_s,latency_ms,queries";
const NOT_DETECTED: &str = "nd";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub target_rate: f64,
    pub detection_period_ms: u64,
    /// Iterations per heartbeat after the last correction.
    pub beats_every: u64,
    /// Median instrumented time.
    pub e_alpha_s: f64,
    /// Median uninstrumented time.
    pub e_beta_s: f64,
    pub overhead: f64,
    pub achieved_rate: f64,
    pub alpha_samples_s: Vec<f64>,
    pub beta_samples_s: Vec<f64>,
    /// One sample per injection per repetition; None = not detected.
    pub latency_ms: BTreeMap<InjectedBehavior, Vec<Option<f64>>>,
    pub queries: QueryCounts,
}

impl RateRow {
    pub fn median_latency(&self, behavior: InjectedBehavior) -> Option<f64> {
        self.latency_ms.get(&behavior).and_then(|s| median_latency(s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "hbtm-report")]
    pub version: u32,
    pub workload: WorkloadSpec,
    pub mode: MonitorMode,
    pub seed: u64,
    pub repetitions: u32,
    /// Where latency is measured from.
    pub latency_origin: String,
    pub rows: Vec<RateRow>,
}

fn join_f64(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

fn split_f64(s: &str) -> Result<Vec<f64>, BenchError> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(|x| x.parse().map_err(|_| BenchError::Report(format!("bad number {x:?}")))).collect()
}

fn encode_latency(m: &BTreeMap<InjectedBehavior, Vec<Option<f64>>>) -> String {
    m.iter()
        .map(|(b, samples)| {
            let s: Vec<String> = samples.iter().map(|x| x.map_or(NOT_DETECTED.into(), |v| v.to_string())).collect();
            format!("{b}={}", s.join(";"))
        })
        .collect::<Vec<_>>()
        .join("|")
}

fn decode_latency(s: &str) -> Result<BTreeMap<InjectedBehavior, Vec<Option<f64>>>, BenchError> {
    let mut m = BTreeMap::new();
    if s.is_empty() {
        return Ok(m);
    }
    for part in s.split('|') {
        let (b, samples) = part.split_once('=').ok_or_else(|| BenchError::Report(format!("bad latency {part:?}")))?;
        let behavior: InjectedBehavior = b.parse()?;
        let values = if samples.is_empty() {
            Vec::new()
        } else {
            samples
                .split(';')
                .map(|x| match x {
                    NOT_DETECTED => Ok(None),
                    v => v.parse().map(Some).map_err(|_| BenchError::Report(format!("bad latency {v:?}"))),
                })
                .collect::<Result<_, _>>()?
        };
        m.insert(behavior, values);
    }
    Ok(m)
}

fn encode_queries(q: &QueryCounts) -> String {
    q.per_detector.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

fn decode_queries(s: &str) -> Result<QueryCounts, BenchError> {
    let mut per_detector = BTreeMap::new();
    if !s.is_empty() {
        for part in s.split(';') {
            let (k, v) = part.split_once('=').ok_or_else(|| BenchError::Report(format!("bad query count {part:?}")))?;
            let v: u64 = v.parse().map_err(|_| BenchError::Report(format!("bad query count {part:?}")))?;
            per_detector.insert(k.to_string(), v);
        }
    }
    let total = per_detector.values().sum();
    let max = per_detector.values().copied().max().unwrap_or(0);
    Ok(QueryCounts { per_detector, total, max })
}

/// One row per target rate, preceded by `# key=value` metadata lines.
/// List-valued columns use `;` inside a cell and `|` between behaviors.
pub fn report_csv(report: &MetricsReport) -> String {
    let mut out = String::new();
    let workload = serde_json::to_string(&report.workload).expect("spec serializes");
    let _ = writeln!(out, "# hbtm-report={}", report.version);
    let _ = writeln!(out, "# workload={workload}");
    let _ = writeln!(out, "# mode={}", report.mode);
    let _ = writeln!(out, "# seed={}", report.seed);
    let _ = writeln!(out, "# repetitions={}", report.repetitions);
    let _ = writeln!(out, "# latency_origin={}", report.latency_origin);
    out.push_str(CSV_COLUMNS);
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.target_rate,
            r.detection_period_ms,
            r.beats_every,
            r.e_alpha_s,
            r.e_beta_s,
            r.overhead,
            r.achieved_rate,
            join_f64(&r.alpha_samples_s),
            join_f64(&r.beta_samples_s),
            encode_latency(&r.latency_ms),
            encode_queries(&r.queries),
        );
    }
    out
}

pub fn parse_report_csv(text: &str) -> Result<MetricsReport, BenchError> {
    let bad = |m: String| BenchError::Report(m);
    let mut meta = BTreeMap::new();
    let mut lines = text.lines().peekable();
    while let Some(line) = lines.next_if(|l| l.starts_with('#')) {
        let (k, v) = line[1..].trim().split_once('=').ok_or_else(|| bad(format!("bad metadata {line:?}")))?;
        meta.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| meta.get(k).ok_or_else(|| bad(format!("missing {k}")));
    let version: u32 = get("hbtm-report")?.parse().map_err(|_| bad("bad version".into()))?;
    if version != REPORT_VERSION {
        return Err(bad(format!("unsupported report version {version}")));
    }
    let workload: WorkloadSpec = serde_json::from_str(get("workload")?).map_err(|e| bad(e.to_string()))?;
    let mode: MonitorMode = get("mode")?.parse().map_err(|e: crate::config::ConfigError| bad(e.to_string()))?;
    let seed = get("seed")?.parse().map_err(|_| bad("bad seed".into()))?;
    let repetitions = get("repetitions")?.parse().map_err(|_| bad("bad repetitions".into()))?;
    let latency_origin = get("latency_origin")?.clone();
    if lines.next() != Some(CSV_COLUMNS) {
        return Err(bad("missing column header".into()));
    }
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 11 {
            return Err(bad(format!("expected 11 columns in {line:?}")));
        }
        let num = |i: usize| -> Result<f64, BenchError> { c[i].parse().map_err(|_| bad(format!("bad number {:?}", c[i]))) };
        let int = |i: usize| -> Result<u64, BenchError> { c[i].parse().map_err(|_| bad(format!("bad integer {:?}", c[i]))) };
        rows.push(RateRow {
            target_rate: num(0)?,
            detection_period_ms: int(1)?,
            beats_every: int(2)?,
            e_alpha_s: num(3)?,
            e_beta_s: num(4)?,
            overhead: num(5)?,
            achieved_rate: num(6)?,
            alpha_samples_s: split_f64(c[7])?,
            beta_samples_s: split_f64(c[8])?,
            latency_ms: decode_latency(c[9])?,
            queries: decode_queries(c[10])?,
        });
    }
    Ok(MetricsReport { version, workload, mode, seed, repetitions, latency_origin, rows })
}

pub fn read_report_json(path: &Path) -> Result<MetricsReport, BenchError> {
    let text = std::fs::read_to_string(path)?;
    let report: MetricsReport = serde_json::from_str(&text).map_err(|e| BenchError::Report(e.to_string()))?;
    if report.version != REPORT_VERSION {
        return Err(BenchError::Report(format!("unsupported report version {}", report.version)));
    }
    Ok(report)
}

/// Writes report.json, report.csv and the three plot-ready tables.
pub fn write_report_files(report: &MetricsReport, dir: &Path) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report).map_err(|e| BenchError::Report(e.to_string()))?;
    std::fs::write(dir.join("report.json"), json + "\n")?;
    std::fs::write(dir.join("report.csv"), report_csv(report))?;

    let mut overhead = String::from("target_rate,achieved_rate,beats_every,e_alpha_s,e_beta_s,overhead\n");
    let mut latency = String::from("target_rate,behavior,median_latency_ms,detected,samples\n");
    let mut queries = String::from("target_rate,detector,queries\n");
    for r in &report.rows {
        let _ = writeln!(
            overhead,
            "{},{},{},{},{},{}",
            r.target_rate, r.achieved_rate, r.beats_every, r.e_alpha_s, r.e_beta_s, r.overhead
        );
        for (b, samples) in &r.latency_ms {
            let detected = samples.iter().filter(|s| s.is_some()).count();
            let med = r.median_latency(*b).map_or(NOT_DETECTED.to_string(), |m| m.to_string());
            let _ = writeln!(latency, "{},{b},{med},{detected},{}", r.target_rate, samples.len());
        }
        for (who, n) in &r.queries.per_detector {
            let _ = writeln!(queries, "{},{who},{n}", r.target_rate);
        }
    }
    std::fs::write(dir.join("overhead_vs_rate.csv"), overhead)?;
    std::fs::write(dir.join("latency_vs_rate.csv"), latency)?;
    std::fs::write(dir.join("queries.csv"), queries)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workloads::WorkloadKind;

    pub(crate) fn sample_report() -> MetricsReport {
        let mut latency = BTreeMap::new();
        latency.insert(InjectedBehavior::Exit, vec![Some(1.8), Some(0.123456789012345), None]);
        latency.insert(InjectedBehavior::Failure, vec![Some(3.0)]);
        let mut per_detector = BTreeMap::new();
        per_detector.insert("0".to_string(), 100);
        per_detector.insert("1".to_string(), 131);
        let (e_alpha_s, e_beta_s) = (0.7234567, 0.7011);
        MetricsReport {
            version: REPORT_VERSION,
            workload: WorkloadSpec::new(WorkloadKind::Jacobi { grid: 64, cycles: 300 }, 4),
            mode: MonitorMode::Decentralized,
            seed: 42,
            repetitions: 3,
            latency_origin: "injection_trigger".into(),
            rows: vec![RateRow {
                target_rate: 100.0,
                detection_period_ms: 10,
                beats_every: 37,
                e_alpha_s,
                e_beta_s,
                overhead: (e_alpha_s - e_beta_s) / e_beta_s,
                achieved_rate: 98.76543210987,
                alpha_samples_s: vec![0.7, e_alpha_s, 0.8],
                beta_samples_s: vec![0.69, e_beta_s, 0.71],
                latency_ms: latency,
                queries: QueryCounts { per_detector, total: 231, max: 131 },
            }],
        }
    }

    #[test]
    fn csv_round_trips() {
        let r = sample_report();
        assert_eq!(parse_report_csv(&report_csv(&r)).unwrap(), r);
    }

    #[test]
    fn json_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample_report();
        write_report_files(&r, dir.path()).unwrap();
        let back = read_report_json(&dir.path().join("report.json")).unwrap();
        assert_eq!(back, r);
        let row = &back.rows[0];
        assert_eq!(row.overhead.to_bits(), ((row.e_alpha_s - row.e_beta_s) / row.e_beta_s).to_bits());
        let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
        assert!(text.contains("\"hbtm-report\": 1"));
        for f in ["report.csv", "overhead_vs_rate.csv", "latency_vs_rate.csv", "queries.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }

    #[test]
    fn rejects_other_versions() {
        let text = report_csv(&sample_report()).replace("hbtm-report=1", "hbtm-report=2");
        assert!(parse_report_csv(&text).is_err());
    }
}
