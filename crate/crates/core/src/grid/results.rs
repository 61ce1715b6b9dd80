//! The `results.csv` row format, shared by the grid writer, the resume
//! file, and the analysis reader.

use std::cmp::Ordering;

use crate::error::GridError;
use crate::ingest::format_value;
use crate::model::{MetricKind, ProbeResult, ProbeSource, ProbeSpec, ProbeStatus, SourceKind};

pub const RESULTS_HEADER: &str =
    "source,source_kind,layer_id,target,metric_kind,value,n_train,n_test,lambda,status";

fn kind_rank(kind: SourceKind) -> u8 {
    match kind {
        SourceKind::Embedding => 0,
        SourceKind::Raw => 1,
        SourceKind::Prediction => 2,
        SourceKind::Random => 3,
    }
}

/// Output order: source, then target, then source kind, then layer.
pub fn result_order(a: &ProbeResult, b: &ProbeResult) -> Ordering {
    let key = |r: &ProbeResult| {
        (
            r.spec.source.source_name().to_string(),
            r.spec.target.clone(),
            kind_rank(r.spec.source.kind()),
            r.spec.source.layer_id(),
        )
    };
    key(a).cmp(&key(b))
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn record(r: &ProbeResult) -> [String; 10] {
    [
        r.spec.source.source_name().to_string(),
        r.spec.source.kind().as_str().to_string(),
        r.spec.source.layer_id().map(|l| l.to_string()).unwrap_or_default(),
        r.spec.target.clone(),
        r.metric_kind.as_str().to_string(),
        r.value.map(format_value).unwrap_or_default(),
        r.n_train.to_string(),
        r.n_test.to_string(),
        format_value(r.lambda),
        r.status.as_str().to_string(),
    ]
}

/// CSV rows without a header, one per result, in the given order.
pub fn format_rows(results: &[ProbeResult]) -> String {
    let mut w = csv_writer();
    for r in results {
        w.write_record(record(r)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

/// A complete `results.csv` document, header included.
pub fn write_results(results: &[ProbeResult]) -> String {
    let mut out = String::with_capacity(64 * (results.len() + 1));
    out.push_str(RESULTS_HEADER);
    out.push('\n');
    out.push_str(&format_rows(results));
    out
}

fn field(rec: &csv::StringRecord, i: usize, line: usize) -> Result<&str, GridError> {
    rec.get(i)
        .ok_or_else(|| GridError::Format(format!("line {line}: missing field {i}")))
}

fn parse_record(rec: &csv::StringRecord, line: usize) -> Result<ProbeResult, GridError> {
    if rec.len() != 10 {
        return Err(GridError::Format(format!(
            "line {line}: expected 10 fields, found {}",
            rec.len()
        )));
    }
    let bad = |what: &str, v: &str| GridError::Format(format!("line {line}: bad {what} {v:?}"));
    let source = field(rec, 0, line)?.to_string();
    let kind: SourceKind = field(rec, 1, line)?.parse().map_err(|v: String| bad("source_kind", &v))?;
    let layer = field(rec, 2, line)?;
    let source = match kind {
        SourceKind::Embedding => ProbeSource::Embedding {
            source_task: source,
            layer_id: layer.parse().map_err(|_| bad("layer_id", layer))?,
        },
        SourceKind::Raw => ProbeSource::RawValue { source_task: source },
        SourceKind::Prediction => ProbeSource::Prediction { source_task: source },
        SourceKind::Random => ProbeSource::RandomUniform,
    };
    let metric_kind: MetricKind = field(rec, 4, line)?.parse().map_err(|v: String| bad("metric_kind", &v))?;
    let value = match field(rec, 5, line)? {
        "" => None,
        v => Some(v.parse::<f64>().map_err(|_| bad("value", v))?),
    };
    let n_train = field(rec, 6, line)?;
    let n_test = field(rec, 7, line)?;
    let lambda = field(rec, 8, line)?;
    Ok(ProbeResult {
        spec: ProbeSpec {
            source,
            target: field(rec, 3, line)?.to_string(),
        },
        metric_kind,
        value,
        n_train: n_train.parse().map_err(|_| bad("n_train", n_train))?,
        n_test: n_test.parse().map_err(|_| bad("n_test", n_test))?,
        lambda: lambda.parse().map_err(|_| bad("lambda", lambda))?,
        status: field(rec, 9, line)?
            .parse::<ProbeStatus>()
            .map_err(|v| bad("status", &v))?,
    })
}

/// Parses header-less result rows.
pub fn parse_rows(text: &str) -> Result<Vec<ProbeResult>, GridError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    reader
        .records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| GridError::Format(e.to_string()))?;
            parse_record(&rec, i + 1)
        })
        .collect()
}

/// Parses a full `results.csv` document.
pub fn parse_results(text: &str) -> Result<Vec<ProbeResult>, GridError> {
    let body = text
        .strip_prefix(RESULTS_HEADER)
        .and_then(|rest| rest.strip_prefix('\n').or(Some(rest).filter(|r| r.is_empty())))
        .ok_or_else(|| GridError::Format("missing or unexpected header".into()))?;
    parse_rows(body)
}
