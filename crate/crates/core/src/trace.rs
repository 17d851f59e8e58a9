//! Confidence traces and the line-delimited JSON interchange format.
//!
//! One record per line:
//!
//! ```text
//! {"id":"s0","num_classes":2,"conf":[0.6,0.9],"pred":[1,1],"label":1}
//! ```
//!
//! `pred`, `probs` and `label` are optional; unknown keys are rejected. Every
//! record in a stream must agree on the layer count and the class count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};

/// Tolerance on a probability row summing to one.
pub const PROB_ROW_TOLERANCE: f64 = 1e-6;
/// Tolerance between a stored confidence and the max of its probability row.
pub const CONF_MATCH_TOLERANCE: f64 = 1e-9;
/// Slack below `1/num_classes` absorbing rounding in `1/C` itself.
const LOWER_BOUND_SLACK: f64 = 1e-12;

/// One sample's per-layer exit confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceTrace {
    pub id: String,
    pub num_classes: usize,
    /// `confidences[i]` is the max class probability at layer `i + 1`.
    pub confidences: Vec<f64>,
    pub predictions: Option<Vec<usize>>,
    pub probs: Option<Vec<Vec<f64>>>,
    /// Ground truth, only read by offline accuracy reporting.
    pub label: Option<usize>,
}

impl ConfidenceTrace {
    /// A validated trace carrying confidences only.
    pub fn new(id: impl Into<String>, num_classes: usize, confidences: Vec<f64>) -> Result<Self> {
        let trace = ConfidenceTrace {
            id: id.into(),
            num_classes,
            confidences,
            predictions: None,
            probs: None,
            label: None,
        };
        trace.validate()?;
        Ok(trace)
    }

    /// Builds a trace from full per-layer class probabilities, deriving the
    /// confidences and argmax predictions.
    pub fn from_probs(
        id: impl Into<String>,
        probs: Vec<Vec<f64>>,
        label: Option<usize>,
    ) -> Result<Self> {
        let id = id.into();
        let num_classes = probs.first().map_or(0, Vec::len);
        let (confidences, predictions) = probs.iter().map(|row| max_and_argmax(row)).unzip();
        let trace = ConfidenceTrace {
            id,
            num_classes,
            confidences,
            predictions: Some(predictions),
            probs: Some(probs),
            label,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn with_predictions(mut self, predictions: Vec<usize>) -> Result<Self> {
        self.predictions = Some(predictions);
        self.validate()?;
        Ok(self)
    }

    pub fn with_label(mut self, label: usize) -> Result<Self> {
        self.label = Some(label);
        self.validate()?;
        Ok(self)
    }

    pub fn num_layers(&self) -> usize {
        self.confidences.len()
    }

    /// Checks every per-record invariant.
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| {
            Err(Error::InvalidTrace {
                id: self.id.clone(),
                reason,
            })
        };
        let c = self.num_classes;
        if c < 2 {
            return fail(format!("num_classes must be at least 2, got {c}"));
        }
        let layers = self.confidences.len();
        if layers < 2 {
            return fail(format!("need at least 2 layers, got {layers}"));
        }
        let floor = 1.0 / c as f64;
        for (i, &conf) in self.confidences.iter().enumerate() {
            if !(conf >= floor - LOWER_BOUND_SLACK && conf <= 1.0) {
                return fail(format!(
                    "confidence {conf} at layer {} outside [1/{c}, 1]",
                    i + 1
                ));
            }
        }
        if let Some(preds) = &self.predictions {
            if preds.len() != layers {
                return fail(format!("{} predictions for {layers} layers", preds.len()));
            }
            if let Some((i, p)) = preds.iter().enumerate().find(|(_, &p)| p >= c) {
                return fail(format!("prediction {p} at layer {} not below {c}", i + 1));
            }
        }
        if let Some(label) = self.label {
            if label >= c {
                return fail(format!("label {label} not below {c}"));
            }
        }
        if let Some(probs) = &self.probs {
            if probs.len() != layers {
                return fail(format!(
                    "{} probability rows for {layers} layers",
                    probs.len()
                ));
            }
            for (i, row) in probs.iter().enumerate() {
                let layer = i + 1;
                if row.len() != c {
                    return fail(format!("probability row {layer} has {} entries", row.len()));
                }
                if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return fail(format!(
                        "probability row {layer} has entries outside [0, 1]"
                    ));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > PROB_ROW_TOLERANCE {
                    return fail(format!("probability row {layer} sums to {sum}"));
                }
                let (max, argmax) = max_and_argmax(row);
                if (max - self.confidences[i]).abs() > CONF_MATCH_TOLERANCE {
                    return fail(format!(
                        "confidence {} at layer {layer} differs from row max {max}",
                        self.confidences[i]
                    ));
                }
                if let Some(preds) = &self.predictions {
                    if preds[i] != argmax {
                        return fail(format!(
                            "prediction {} at layer {layer} differs from row argmax {argmax}",
                            preds[i]
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Max and argmax of a row; exact ties go to the lowest index.
fn max_and_argmax(row: &[f64]) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, &p) in row.iter().enumerate() {
        if p > best.0 {
            best = (p, i);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProvenanceKind {
    ReplayedFile,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub kind: ProvenanceKind,
    pub metadata: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(kind: ProvenanceKind) -> Self {
        Provenance {
            kind,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_owned(), value.to_string());
        self
    }
}

/// A non-empty, homogeneous sequence of traces.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStream {
    traces: Vec<ConfidenceTrace>,
    provenance: Provenance,
}

impl TraceStream {
    pub fn new(traces: Vec<ConfidenceTrace>, provenance: Provenance) -> Result<Self> {
        let first = traces.first().ok_or(Error::EmptyStream)?;
        let (layers, classes) = (first.num_layers(), first.num_classes);
        for t in &traces {
            t.validate()?;
            check_homogeneous(t, layers, classes)?;
        }
        Ok(TraceStream { traces, provenance })
    }

    pub fn traces(&self) -> &[ConfidenceTrace] {
        &self.traces
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn num_layers(&self) -> usize {
        self.traces[0].num_layers()
    }

    pub fn num_classes(&self) -> usize {
        self.traces[0].num_classes
    }

    /// True when every trace carries predictions and a label.
    pub fn is_labeled(&self) -> bool {
        self.traces
            .iter()
            .all(|t| t.predictions.is_some() && t.label.is_some())
    }

    pub fn into_traces(self) -> Vec<ConfidenceTrace> {
        self.traces
    }
}

fn check_homogeneous(t: &ConfidenceTrace, layers: usize, classes: usize) -> Result<()> {
    if t.num_layers() != layers {
        return Err(Error::Heterogeneous {
            id: t.id.clone(),
            what: "layers",
            expected: layers,
            found: t.num_layers(),
        });
    }
    if t.num_classes != classes {
        return Err(Error::Heterogeneous {
            id: t.id.clone(),
            what: "classes",
            expected: classes,
            found: t.num_classes,
        });
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    num_classes: usize,
    conf: Vec<f64>,
    #[serde(default)]
    pred: Option<Vec<usize>>,
    #[serde(default)]
    probs: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    label: Option<usize>,
}

/// Reads and validates a JSONL trace stream. Blank lines are skipped; errors
/// carry the 1-based line number.
pub fn parse_traces<R: BufRead>(source: R) -> Result<TraceStream> {
    let mut traces: Vec<ConfidenceTrace> = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let at_line = |e: Error| Error::Record {
            line: line_no,
            message: e.to_string(),
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| at_line(e.into()))?;
        let trace = ConfidenceTrace {
            id: rec.id,
            num_classes: rec.num_classes,
            confidences: rec.conf,
            predictions: rec.pred,
            probs: rec.probs,
            label: rec.label,
        };
        trace.validate().map_err(at_line)?;
        if let Some(first) = traces.first() {
            check_homogeneous(&trace, first.num_layers(), first.num_classes).map_err(at_line)?;
        }
        traces.push(trace);
    }
    TraceStream::new(traces, Provenance::new(ProvenanceKind::ReplayedFile))
}

/// Opens and parses a trace file, recording its path in the provenance.
pub fn read_trace_file(path: &Path) -> Result<TraceStream> {
    let file = File::open(path)?;
    let mut stream = parse_traces(BufReader::new(file))?;
    stream.provenance = stream.provenance.with("path", path.display());
    Ok(stream)
}

/// Writes the stream as JSONL. Reals use 17 significant digits so that
/// `parse_traces` reproduces every binary64 value exactly.
pub fn write_traces<W: Write>(stream: &TraceStream, mut sink: W) -> Result<()> {
    if stream.traces.is_empty() {
        return Err(Error::EmptyStream);
    }
    let mut line = String::new();
    for t in &stream.traces {
        line.clear();
        encode_record(t, &mut line)?;
        line.push('\n');
        sink.write_all(line.as_bytes())?;
    }
    sink.flush()?;
    Ok(())
}

fn encode_record(t: &ConfidenceTrace, out: &mut String) -> Result<()> {
    out.push_str("{\"id\":");
    out.push_str(&serde_json::to_string(&t.id)?);
    let _ = write!(out, ",\"num_classes\":{},\"conf\":", t.num_classes);
    push_reals(out, &t.confidences);
    if let Some(preds) = &t.predictions {
        out.push_str(",\"pred\":[");
        for (i, p) in preds.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{p}");
        }
        out.push(']');
    }
    if let Some(probs) = &t.probs {
        out.push_str(",\"probs\":[");
        for (i, row) in probs.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            push_reals(out, row);
        }
        out.push(']');
    }
    if let Some(label) = t.label {
        let _ = write!(out, ",\"label\":{label}");
    }
    out.push('}');
    Ok(())
}

fn push_reals(out: &mut String, values: &[f64]) {
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v:.16e}");
    }
    out.push(']');
}

/// Deterministic permutation of `0..len` for a seed.
pub fn shuffled_indices(len: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order
}

/// Returns the traces in a seed-determined random order.
pub fn shuffle_stream(stream: &TraceStream, seed: u64) -> TraceStream {
    let traces = shuffled_indices(stream.len(), seed)
        .into_iter()
        .map(|i| stream.traces[i].clone())
        .collect();
    TraceStream {
        traces,
        provenance: stream.provenance.clone().with("shuffle_seed", seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse_str(s: &str) -> Result<TraceStream> {
        parse_traces(s.as_bytes())
    }

    fn roundtrip(stream: &TraceStream) -> TraceStream {
        let mut buf = Vec::new();
        write_traces(stream, &mut buf).unwrap();
        parse_traces(buf.as_slice()).unwrap()
    }

    #[test]
    fn minimal_record() {
        let s = parse_str(r#"{"id":"a","num_classes":2,"conf":[0.6,0.9]}"#).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.num_layers(), 2);
        assert_eq!(s.traces()[0].confidences, vec![0.6, 0.9]);
        assert_eq!(s.provenance().kind, ProvenanceKind::ReplayedFile);
    }

    #[test]
    fn confidence_below_class_floor() {
        let err = parse_str(r#"{"id":"a","num_classes":2,"conf":[0.3,0.9]}"#).unwrap_err();
        assert!(matches!(err, Error::Record { line: 1, .. }), "{err}");
        assert!(err.to_string().contains("0.3"));
    }

    #[test]
    fn heterogeneous_layers() {
        let twelve = vec![0.7; 12];
        let six = vec![0.7; 6];
        let src = format!(
            "{{\"id\":\"a\",\"num_classes\":2,\"conf\":{twelve:?}}}\n{{\"id\":\"b\",\"num_classes\":2,\"conf\":{six:?}}}\n"
        );
        match parse_str(&src).unwrap_err() {
            Error::Record { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("heterogeneous"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn heterogeneous_classes() {
        let src = "{\"id\":\"a\",\"num_classes\":2,\"conf\":[0.6,0.7]}\n{\"id\":\"b\",\"num_classes\":3,\"conf\":[0.6,0.7]}";
        assert!(parse_str(src).is_err());
    }

    #[test]
    fn empty_source_is_error() {
        assert!(matches!(parse_str("\n\n"), Err(Error::EmptyStream)));
        assert!(matches!(
            TraceStream::new(vec![], Provenance::new(ProvenanceKind::Synthetic)),
            Err(Error::EmptyStream)
        ));
    }

    #[test]
    fn optional_fields_omitted_on_write() {
        let t = ConfidenceTrace::new("x", 2, vec![0.6, 0.9]).unwrap();
        let s = TraceStream::new(vec![t], Provenance::new(ProvenanceKind::Synthetic)).unwrap();
        let mut buf = Vec::new();
        write_traces(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(!text.contains("probs"));
        assert!(!text.contains("pred"));
        assert!(!text.contains("label"));
        assert_eq!(text.lines().count(), 1);
        assert_eq!(roundtrip(&s).traces(), s.traces());
    }

    #[test]
    fn probs_drive_confidence_and_argmax() {
        let t = ConfidenceTrace::from_probs(
            "p",
            vec![vec![0.5, 0.5], vec![0.2, 0.8], vec![0.9, 0.1]],
            Some(0),
        )
        .unwrap();
        assert_eq!(t.confidences, vec![0.5, 0.8, 0.9]);
        // exact tie at layer 1 resolves to class 0
        assert_eq!(t.predictions, Some(vec![0, 1, 0]));
        let s = TraceStream::new(vec![t], Provenance::new(ProvenanceKind::Synthetic)).unwrap();
        assert_eq!(roundtrip(&s).traces(), s.traces());
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse_str(r#"{"id":"a","num_classes":2,"conf":[0.6,0.9],"extra":1}"#);
        assert!(err.is_err());
    }

    #[test]
    fn bad_json_reports_line() {
        let src = "{\"id\":\"a\",\"num_classes\":2,\"conf\":[0.6,0.9]}\n{not json";
        match parse_str(src).unwrap_err() {
            Error::Record { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    /// Every single-field corruption of a valid record must be rejected.
    #[test]
    fn single_field_corruptions_rejected() {
        let valid = r#"{"id":"a","num_classes":3,"conf":[0.5,0.7],"pred":[1,2],"probs":[[0.2,0.5,0.3],[0.1,0.2,0.7]],"label":2}"#;
        assert!(parse_str(valid).is_ok());
        let corruptions = [
            r#"{"id":7,"num_classes":3,"conf":[0.5,0.7],"pred":[1,2],"probs":[[0.2,0.5,0.3],[0.1,0.2,0.7]],"label":2}"#,
            r#"{"id":"a","num_classes":1,"conf":[0.5,0.7],"pred":[1,2],"probs":[[0.2,0.5,0.3],[0.1,0.2,0.7]],"label":2}"#,
            r#"{"id":"a","num_classes":-3,"conf":[0.5,0.7],"pred":[1,2],"probs":[[0.2,0.5,0.3],[0.1,0.2,0.7]],"label":2}"#,
            r#"{"id":"a","num_classes":3,"conf":[0.5],"pred":[1,2],"probs":[[0.2,0.5,0.3],[0.1,0.2,0.7]],"label":2}"#,
            r#"{"id":"a","num_classes":3,"conf":[0.5,1.2],"pred":[1,2],"probs":[[0.2,0.5,0.3],[0.1,0.2,0.7]],"label":2}"#,
            r#"{"id":"a","num_classes":3,"conf":[0.2,0.7],"pred":[1,2],"probs":[[0.2,0.5,0.3],[0.1,0.2,0.7]],"label":2}"#,
            r#"{"id":"a","num_classes":3,"conf":[0.5,0.6],"pred":[1,2],"probs":[[0.2,0.5,0.3],[0.1,0.2,0.7]],"label":2}"#,
            r#"{"id":"a","num_classes":3,"conf":[0.5,0.7],"pred":[0,2],"probs":[[0.2,0.5,0.3],[0.1,0.2,0.7]],"label":2}"#,
            r#"{"id":"a","num_classes":3,"conf":[0.5,0.7],"pred":[1,3],"probs":[[0.2,0.5,0.3],[0.1,0.2,0.7]],"label":2}"#,
            r#"{"id":"a","num_classes":3,"conf":[0.5,0.7],"pred":[1],"probs":[[0.2,0.5,0.3],[0.1,0.2,0.7]],"label":2}"#,
            r#"{"id":"a","num_classes":3,"conf":[0.5,0.7],"pred":[1,2],"probs":[[0.2,0.5,0.4],[0.1,0.2,0.7]],"label":2}"#,
            r#"{"id":"a","num_classes":3,"conf":[0.5,0.7],"pred":[1,2],"probs":[[0.2,0.5],[0.1,0.2,0.7]],"label":2}"#,
            r#"{"id":"a","num_classes":3,"conf":[0.5,0.7],"pred":[1,2],"probs":[[0.2,0.5,0.3]],"label":2}"#,
            r#"{"id":"a","num_classes":3,"conf":[0.5,0.7],"pred":[1,2],"probs":[[0.2,0.5,0.3],[0.1,0.2,0.7]],"label":3}"#,
            r#"{"id":"a","num_classes":3,"conf":[0.5,0.7],"pred":[1,2],"probs":[[0.2,0.5,0.3],[0.1,0.2,0.7]],"label":"2"}"#,
            r#"{"id":"a","num_classes":3,"conf":"0.5","pred":[1,2],"probs":[[0.2,0.5,0.3],[0.1,0.2,0.7]],"label":2}"#,
        ];
        for (i, bad) in corruptions.iter().enumerate() {
            assert!(parse_str(bad).is_err(), "corruption {i} accepted: {bad}");
        }
    }

    #[test]
    fn shuffle_single_trace_is_identity() {
        let t = ConfidenceTrace::new("x", 2, vec![0.6, 0.9]).unwrap();
        let s = TraceStream::new(vec![t], Provenance::new(ProvenanceKind::Synthetic)).unwrap();
        assert_eq!(shuffle_stream(&s, 99).traces(), s.traces());
    }

    fn stream_of(n: usize) -> TraceStream {
        let traces = (0..n)
            .map(|i| ConfidenceTrace::new(format!("t{i}"), 2, vec![0.6, 0.9]).unwrap())
            .collect();
        TraceStream::new(traces, Provenance::new(ProvenanceKind::Synthetic)).unwrap()
    }

    #[test]
    fn shuffle_is_deterministic() {
        let s = stream_of(50);
        assert_eq!(
            shuffle_stream(&s, 7).traces(),
            shuffle_stream(&s, 7).traces()
        );
    }

    #[test]
    fn shuffle_seeds_give_permutations() {
        let s = stream_of(50);
        let ids = |s: &TraceStream| {
            let mut v: Vec<String> = s.traces().iter().map(|t| t.id.clone()).collect();
            v.sort();
            v
        };
        let a = shuffle_stream(&s, 1);
        let b = shuffle_stream(&s, 2);
        assert_ne!(a.traces(), b.traces());
        assert_eq!(ids(&a), ids(&b));
        assert_eq!(ids(&a), ids(&s));
    }

    fn arb_trace(layers: usize, classes: usize) -> impl Strategy<Value = ConfidenceTrace> {
        let floor = 1.0 / classes as f64;
        (
            "[a-z0-9\"\\\\ é]{0,8}",
            prop::collection::vec(floor..=1.0f64, layers),
            prop::option::of(prop::collection::vec(0..classes, layers)),
            prop::option::of(0..classes),
        )
            .prop_map(
                move |(id, confidences, predictions, label)| ConfidenceTrace {
                    id,
                    num_classes: classes,
                    confidences,
                    predictions,
                    probs: None,
                    label,
                },
            )
    }

    fn arb_stream() -> impl Strategy<Value = TraceStream> {
        (2usize..8, 2usize..6).prop_flat_map(|(layers, classes)| {
            prop::collection::vec(arb_trace(layers, classes), 1..12).prop_map(|traces| {
                TraceStream::new(traces, Provenance::new(ProvenanceKind::Synthetic)).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn write_then_parse_is_identity(stream in arb_stream()) {
            let back = roundtrip(&stream);
            prop_assert_eq!(back.traces(), stream.traces());
        }

        #[test]
        fn softmax_rows_roundtrip(
            logits in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 2..6),
            label in 0usize..3,
        ) {
            let probs: Vec<Vec<f64>> = logits
                .iter()
                .map(|row| {
                    let z: f64 = row.iter().map(|x| x.exp()).sum();
                    row.iter().map(|x| x.exp() / z).collect()
                })
                .collect();
            let t = ConfidenceTrace::from_probs("sm", probs, Some(label)).unwrap();
            let s = TraceStream::new(vec![t], Provenance::new(ProvenanceKind::Synthetic)).unwrap();
            let back = roundtrip(&s);
            prop_assert_eq!(back.traces(), s.traces());
        }

        #[test]
        fn shuffle_preserves_multiset(n in 1usize..60, seed in any::<u64>()) {
            let s = stream_of(n);
            let mut ids: Vec<_> = shuffle_stream(&s, seed).traces().iter().map(|t| t.id.clone()).collect();
            ids.sort();
            let mut orig: Vec<_> = s.traces().iter().map(|t| t.id.clone()).collect();
            orig.sort();
            prop_assert_eq!(ids, orig);
        }
    }
}
