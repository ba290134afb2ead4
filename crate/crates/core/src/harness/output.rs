//! Summary CSV: a `# config_hash=.. base_seed=..` comment line, then one row
//! per protocol, speed class and metric.

use std::collections::BTreeMap;

use super::metrics::MetricsReport;
use super::stats::{summarize, Summary};
use crate::mobility::SpeedClass;
use crate::protocols::ProtocolKind;

pub const HEADER: [&str; 8] = ["protocol", "speed_class", "metric", "mean", "sd", "ci_low", "ci_high", "n"];
pub const METRICS: [&str; 3] = ["reachability", "ete", "traffic"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvMeta {
    pub config_hash: String,
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub protocol: ProtocolKind,
    pub class: SpeedClass,
    pub metric: String,
    pub summary: Summary,
}

/// One row per (protocol, class, metric), in protocol, class, metric order.
pub fn summarize_reports(reports: &[MetricsReport]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(ProtocolKind, SpeedClass), Vec<&MetricsReport>> = BTreeMap::new();
    for r in reports {
        groups.entry((r.protocol, r.class)).or_default().push(r);
    }
    let mut rows = Vec::new();
    for ((protocol, class), rs) in groups {
        let columns: [Vec<f64>; 3] = [
            rs.iter().map(|r| r.reachability).collect(),
            rs.iter().map(|r| r.ete).collect(),
            rs.iter().map(|r| r.traffic as f64).collect(),
        ];
        for (metric, xs) in METRICS.iter().zip(columns) {
            rows.push(SummaryRow { protocol, class, metric: metric.to_string(), summary: summarize(&xs) });
        }
    }
    rows
}

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

pub fn emit_csv(meta: &CsvMeta, rows: &[SummaryRow]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER)?;
    for r in rows {
        let s = &r.summary;
        w.write_record([
            r.protocol.name().to_string(),
            r.class.name().to_string(),
            r.metric.clone(),
            fmt(s.mean),
            fmt(s.sd),
            fmt(s.ci_low),
            fmt(s.ci_high),
            s.n.to_string(),
        ])?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv output is utf-8");
    Ok(format!("# config_hash={} base_seed={}\n{body}", meta.config_hash, meta.base_seed))
}

#[derive(Debug, thiserror::Error)]
pub enum ParseCsvError {
    #[error("missing `# config_hash=.. base_seed=..` line")]
    MissingMeta,
    #[error("unexpected header {0:?}")]
    Header(Vec<String>),
    #[error("bad field {0:?}")]
    Field(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub fn parse_csv(text: &str) -> Result<(CsvMeta, Vec<SummaryRow>), ParseCsvError> {
    let (first, body) = text.split_once('\n').ok_or(ParseCsvError::MissingMeta)?;
    let mut hash = None;
    let mut seed = None;
    for part in first.strip_prefix('#').ok_or(ParseCsvError::MissingMeta)?.split_whitespace() {
        match part.split_once('=') {
            Some(("config_hash", v)) => hash = Some(v.to_string()),
            Some(("base_seed", v)) => seed = Some(v.parse().map_err(|_| ParseCsvError::Field(v.to_string()))?),
            _ => {}
        }
    }
    let meta = CsvMeta { config_hash: hash.ok_or(ParseCsvError::MissingMeta)?, base_seed: seed.ok_or(ParseCsvError::MissingMeta)? };
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != HEADER {
        return Err(ParseCsvError::Header(header));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| ParseCsvError::Field(s.to_string()));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let protocol = ProtocolKind::parse(&rec[0]).ok_or_else(|| ParseCsvError::Field(rec[0].to_string()))?;
        let class = SpeedClass::parse(&rec[1]).ok_or_else(|| ParseCsvError::Field(rec[1].to_string()))?;
        let summary = Summary {
            mean: num(&rec[3])?,
            sd: num(&rec[4])?,
            ci_low: num(&rec[5])?,
            ci_high: num(&rec[6])?,
            n: rec[7].parse().map_err(|_| ParseCsvError::Field(rec[7].to_string()))?,
        };
        rows.push(SummaryRow { protocol, class, metric: rec[2].to_string(), summary });
    }
    Ok((meta, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(protocol: ProtocolKind, class: SpeedClass, reach: f64, traffic: u64) -> MetricsReport {
        MetricsReport {
            protocol,
            class,
            seed: 1,
            reachability: reach,
            ete: 0.01,
            traffic,
            generated: 10,
            attempts: 10,
            successes: 5,
            drop_rule_violations: 0,
            radio_conserved: true,
            trace_digest: String::new(),
        }
    }

    #[test]
    fn round_trip() {
        let reports = vec![
            report(ProtocolKind::Dsdv, SpeedClass::Fast, 0.25, 100),
            report(ProtocolKind::Acr, SpeedClass::Slow, 0.5, 10),
            report(ProtocolKind::Acr, SpeedClass::Slow, 0.75, 20),
        ];
        let rows = summarize_reports(&reports);
        assert_eq!(rows.len(), 6);
        assert_eq!((rows[0].protocol, rows[0].metric.as_str()), (ProtocolKind::Acr, "reachability"));
        assert!((rows[0].summary.mean - 0.625).abs() < 1e-12);
        assert_eq!(rows[2].summary.mean, 15.0);
        let meta = CsvMeta { config_hash: "abc123".into(), base_seed: 7 };
        let text = emit_csv(&meta, &rows).unwrap();
        assert!(text.starts_with("# config_hash=abc123 base_seed=7\nprotocol,speed_class,metric,mean,sd,ci_low,ci_high,n\n"));
        let (m, back) = parse_csv(&text).unwrap();
        assert_eq!(m, meta);
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!((a.protocol, a.class, &a.metric, a.summary.n), (b.protocol, b.class, &b.metric, b.summary.n));
            assert!((a.summary.mean - b.summary.mean).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_missing_meta() {
        assert!(matches!(parse_csv("protocol,speed_class\n"), Err(ParseCsvError::MissingMeta)));
    }
}
