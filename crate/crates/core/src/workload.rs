//! Request traces, workload classes and the demand matrix.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_INPUT_THRESHOLD: u32 = 512;
pub const DEFAULT_OUTPUT_THRESHOLD: u32 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LengthClass {
    Short,
    Long,
}

/// Input/output length quadrant of a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Quadrant {
    pub input: LengthClass,
    pub output: LengthClass,
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = |c: LengthClass| match c {
            LengthClass::Short => "SHORT",
            LengthClass::Long => "LONG",
        };
        write!(f, "({}_IN, {}_OUT)", tag(self.input), tag(self.output))
    }
}

/// A length is long iff it strictly exceeds its threshold.
pub fn classify(input_len: u32, output_len: u32, in_threshold: u32, out_threshold: u32) -> Quadrant {
    let side = |len: u32, thr: u32| if len > thr { LengthClass::Long } else { LengthClass::Short };
    Quadrant {
        input: side(input_len, in_threshold),
        output: side(output_len, out_threshold),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestRecord {
    pub input_len: u32,
    pub output_len: u32,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrival_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadType {
    pub id: u32,
    pub rep_input_len: u32,
    pub rep_output_len: u32,
}

impl WorkloadType {
    pub fn new(id: u32, rep_input_len: u32, rep_output_len: u32) -> Self {
        WorkloadType {
            id,
            rep_input_len,
            rep_output_len,
        }
    }

    pub fn quadrant(&self) -> Quadrant {
        classify(
            self.rep_input_len,
            self.rep_output_len,
            DEFAULT_INPUT_THRESHOLD,
            DEFAULT_OUTPUT_THRESHOLD,
        )
    }
}

/// The nine benchmark classes, `{2455, 824, 496} x {18, 253, 510}`.
///
/// Ids run input-major from the longest input, shortest output first, so
/// class 1 is the long-input/short-output `(2455, 18)` workload.
pub fn default_classes() -> Vec<WorkloadType> {
    let mut out = Vec::with_capacity(9);
    for input in [2455, 824, 496] {
        for output in [18, 253, 510] {
            out.push(WorkloadType::new(out.len() as u32 + 1, input, output));
        }
    }
    out
}

pub fn validate_classes(classes: &[WorkloadType]) -> Result<()> {
    if classes.is_empty() {
        return Err(Error::Input("at least one workload class is required".into()));
    }
    for (i, c) in classes.iter().enumerate() {
        if c.rep_input_len == 0 {
            return Err(Error::invalid("WorkloadType", c.id.to_string(), "rep_input_len", "must be > 0"));
        }
        if c.rep_output_len == 0 {
            return Err(Error::invalid("WorkloadType", c.id.to_string(), "rep_output_len", "must be > 0"));
        }
        if classes[..i].iter().any(|o| o.id == c.id) {
            return Err(Error::invalid("WorkloadType", c.id.to_string(), "id", "is not unique"));
        }
    }
    Ok(())
}

/// Picks the class for a request: candidates are the classes whose
/// representative sits in the same length quadrant (all classes when none
/// does), and among those the one nearest in `(ln(1+in), ln(1+out))`.
pub fn bucket(input_len: u32, output_len: u32, classes: &[WorkloadType]) -> u32 {
    let q = classify(input_len, output_len, DEFAULT_INPUT_THRESHOLD, DEFAULT_OUTPUT_THRESHOLD);
    let same: Vec<&WorkloadType> = classes.iter().filter(|c| c.quadrant() == q).collect();
    let pool: Vec<&WorkloadType> = if same.is_empty() { classes.iter().collect() } else { same };
    let li = (1.0 + input_len as f64).ln();
    let lo = (1.0 + output_len as f64).ln();
    pool.into_iter()
        .map(|c| {
            let di = (1.0 + c.rep_input_len as f64).ln() - li;
            let dout = (1.0 + c.rep_output_len as f64).ln() - lo;
            (di * di + dout * dout, c.id)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
        .expect("classes are non-empty")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DemandKey {
    pub model: String,
    pub workload: u32,
}

impl DemandKey {
    pub fn new(model: &str, workload: u32) -> Self {
        DemandKey {
            model: model.to_string(),
            workload,
        }
    }
}

/// Request counts per `(model, workload class)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DemandMatrix {
    entries: BTreeMap<DemandKey, f64>,
}

impl DemandMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single_model(model: &str, counts: &[(u32, f64)]) -> Self {
        let mut d = DemandMatrix::new();
        for &(w, f) in counts {
            d.set(model, w, f);
        }
        d
    }

    pub fn set(&mut self, model: &str, workload: u32, count: f64) {
        assert!(count.is_finite() && count >= 0.0, "demand counts are non-negative");
        self.entries.insert(DemandKey::new(model, workload), count);
    }

    pub fn add(&mut self, model: &str, workload: u32, count: f64) {
        *self.entries.entry(DemandKey::new(model, workload)).or_insert(0.0) += count;
    }

    pub fn get(&self, model: &str, workload: u32) -> f64 {
        self.entries.get(&DemandKey::new(model, workload)).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DemandKey, f64)> {
        self.entries.iter().map(|(k, &v)| (k, v))
    }

    /// Entries with strictly positive demand.
    pub fn positive(&self) -> impl Iterator<Item = (&DemandKey, f64)> {
        self.iter().filter(|(_, v)| *v > 0.0)
    }

    pub fn has_demand(&self) -> bool {
        self.positive().next().is_some()
    }

    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }

    pub fn model_total(&self, model: &str) -> f64 {
        self.iter().filter(|(k, _)| k.model == model).map(|(_, v)| v).sum()
    }

    pub fn models(&self) -> Vec<String> {
        let mut out: Vec<String> = self.entries.keys().map(|k| k.model.clone()).collect();
        out.dedup();
        out
    }

    pub fn scaled(&self, factor: f64) -> DemandMatrix {
        DemandMatrix {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), v * factor)).collect(),
        }
    }

    pub fn to_document(&self, classes: &[WorkloadType]) -> DemandDocument {
        DemandDocument {
            classes: Some(classes.to_vec()),
            demand: self
                .iter()
                .map(|(k, count)| DemandRow {
                    model: k.model.clone(),
                    workload_id: k.workload,
                    count,
                })
                .collect(),
        }
    }
}

/// Counts records per class. Every record must name a known model.
pub fn ingest_trace(records: &[RequestRecord], classes: &[WorkloadType], models: &[&str]) -> Result<DemandMatrix> {
    validate_classes(classes)?;
    let mut demand = DemandMatrix::new();
    for m in models {
        for c in classes {
            demand.set(m, c.id, 0.0);
        }
    }
    for r in records {
        if !models.contains(&r.model.as_str()) {
            return Err(Error::unknown("model in trace", &r.model));
        }
        demand.add(&r.model, bucket(r.input_len, r.output_len, classes), 1.0);
    }
    Ok(demand)
}

/// Splits `total` into integer parts proportional to `weights` (largest
/// remainder, ties to the lower index).
pub fn apportion(total: u64, weights: &[f64]) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<u64> = exact.iter().map(|e| e.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned) as usize) {
        counts[i] += 1;
    }
    counts
}

/// Generates `total` requests whose class mix follows `ratios` (percent per class id).
///
/// Lengths are the class representatives, order is a seeded shuffle, and
/// arrival times are left unset (everything arrives at t = 0).
pub fn synth_trace(
    ratios: &BTreeMap<u32, f64>,
    classes: &[WorkloadType],
    total: u64,
    seed: u64,
    model: &str,
) -> Result<Vec<RequestRecord>> {
    let sum: f64 = ratios.values().sum();
    if (sum - 100.0).abs() > 0.5 {
        return Err(Error::Input(format!("workload ratios sum to {sum}, expected 100 +/- 0.5")));
    }
    if total == 0 {
        return Err(Error::Input("trace total must be > 0".into()));
    }
    if ratios.values().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::Input("workload ratios must be non-negative".into()));
    }
    let ids: Vec<u32> = ratios.keys().copied().collect();
    let weights: Vec<f64> = ratios.values().copied().collect();
    let counts = apportion(total, &weights);
    let mut records = Vec::with_capacity(total as usize);
    for (id, n) in ids.iter().zip(counts) {
        let class = classes
            .iter()
            .find(|c| c.id == *id)
            .ok_or_else(|| Error::unknown("workload class", id.to_string()))?;
        for _ in 0..n {
            records.push(RequestRecord {
                input_len: class.rep_input_len,
                output_len: class.rep_output_len,
                model: model.to_string(),
                arrival_time: None,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    records.shuffle(&mut rng);
    Ok(records)
}

/// Reads a trace with one JSON record per line. Blank lines are skipped.
pub fn parse_trace(text: &str) -> Result<Vec<RequestRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: RequestRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            source_name: "trace".into(),
            line: i + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        if let Some(t) = rec.arrival_time {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::invalid("RequestRecord", format!("line {}", i + 1), "arrival_time", "must be >= 0"));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_trace(records: &[RequestRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("record serializes"));
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandRow {
    pub model: String,
    pub workload_id: u32,
    pub count: f64,
}

/// Demand given directly as class counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<WorkloadType>>,
    pub demand: Vec<DemandRow>,
}

impl DemandDocument {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("demand", &e))
    }

    /// Returns the classes (defaults when absent) and the matrix.
    pub fn resolve(&self) -> Result<(Vec<WorkloadType>, DemandMatrix)> {
        let classes = self.classes.clone().unwrap_or_else(default_classes);
        validate_classes(&classes)?;
        let mut demand = DemandMatrix::new();
        for row in &self.demand {
            if !classes.iter().any(|c| c.id == row.workload_id) {
                return Err(Error::unknown("workload class", row.workload_id.to_string()));
            }
            if !(row.count.is_finite() && row.count >= 0.0) {
                return Err(Error::invalid("DemandRow", &row.model, "count", "must be >= 0"));
            }
            demand.add(&row.model, row.workload_id, row.count);
        }
        Ok((classes, demand))
    }
}

/// Input for [`synth_trace`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatioSpec {
    pub model: String,
    pub total: u64,
    #[serde(default)]
    pub seed: u64,
    /// Percent per class id.
    pub ratios: BTreeMap<u32, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<WorkloadType>>,
}

impl RatioSpec {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("ratio spec", &e))
    }
}

/// Class mixes of the three evaluation traces (percent for classes 1..=9).
pub fn trace_ratios(trace: usize) -> Option<BTreeMap<u32, f64>> {
    let rows: [[f64; 9]; 3] = [
        [33.0, 7.0, 8.0, 7.0, 27.0, 6.0, 6.0, 3.0, 3.0],
        [22.0, 5.0, 5.0, 21.0, 5.0, 5.0, 19.0, 6.0, 12.0],
        [4.0, 1.0, 4.0, 3.0, 20.0, 27.0, 1.0, 25.0, 15.0],
    ];
    let row = rows.get(trace.checked_sub(1)?)?;
    Some((1..=9).zip(row.iter().copied()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(input: LengthClass, output: LengthClass) -> Quadrant {
        Quadrant { input, output }
    }

    #[test]
    fn classify_examples() {
        use LengthClass::*;
        assert_eq!(classify(2455, 18, 512, 128), q(Long, Short));
        assert_eq!(classify(496, 510, 512, 128), q(Short, Long));
        assert_eq!(classify(512, 128, 512, 128), q(Short, Short));
        assert_eq!(classify(513, 129, 512, 128), q(Long, Long));
        assert_eq!(classify(2455, 18, 512, 128).to_string(), "(LONG_IN, SHORT_OUT)");
    }

    #[test]
    fn default_class_set() {
        let classes = default_classes();
        assert_eq!(classes.len(), 9);
        assert_eq!(classes[0], WorkloadType::new(1, 2455, 18));
        assert_eq!(classes[8], WorkloadType::new(9, 496, 510));
        for c in &classes {
            assert_eq!(bucket(c.rep_input_len, c.rep_output_len, &classes), c.id);
        }
    }

    #[test]
    fn bucketing_prefers_same_quadrant() {
        let classes = default_classes();
        // 600 input is long, so it must land on an 824/2455 class even
        // though 496 is closer in log space.
        let id = bucket(600, 18, &classes);
        assert_eq!(id, 4);
        assert_eq!(bucket(100, 10, &classes), 7);
    }

    #[test]
    fn ingest_counts_three_type_demand() {
        let classes = vec![WorkloadType::new(1, 2000, 20), WorkloadType::new(2, 200, 400)];
        let mut records = Vec::new();
        for _ in 0..80 {
            records.push(RequestRecord { input_len: 2000, output_len: 20, model: "m".into(), arrival_time: None });
        }
        for _ in 0..20 {
            records.push(RequestRecord { input_len: 200, output_len: 400, model: "m".into(), arrival_time: None });
        }
        let d = ingest_trace(&records, &classes, &["m"]).unwrap();
        assert_eq!(d.get("m", 1), 80.0);
        assert_eq!(d.get("m", 2), 20.0);

        let empty = ingest_trace(&[], &classes, &["m"]).unwrap();
        assert!(!empty.has_demand());
        assert_eq!(empty.total(), 0.0);

        let bad = vec![RequestRecord { input_len: 1, output_len: 1, model: "x".into(), arrival_time: None }];
        assert!(matches!(ingest_trace(&bad, &classes, &["m"]), Err(Error::Unknown { .. })));
    }

    #[test]
    fn two_model_split() {
        let classes = default_classes();
        let ratios = trace_ratios(2).unwrap();
        let mut records = synth_trace(&ratios, &classes, 800, 1, "llama3-8b").unwrap();
        records.extend(synth_trace(&ratios, &classes, 200, 2, "llama3-70b").unwrap());
        let d = ingest_trace(&records, &classes, &["llama3-8b", "llama3-70b"]).unwrap();
        assert_eq!(d.model_total("llama3-8b"), 800.0);
        assert_eq!(d.model_total("llama3-70b"), 200.0);
    }

    #[test]
    fn synth_follows_ratios() {
        let classes = default_classes();
        let r = synth_trace(&trace_ratios(1).unwrap(), &classes, 1000, 7, "m").unwrap();
        let d = ingest_trace(&r, &classes, &["m"]).unwrap();
        assert_eq!(d.get("m", 1), 330.0);
        assert_eq!(d.get("m", 5), 270.0);
        assert_eq!(d.total(), 1000.0);

        let single: BTreeMap<u32, f64> = [(3, 100.0)].into_iter().collect();
        let r = synth_trace(&single, &classes, 5, 0, "m").unwrap();
        assert_eq!(r.len(), 5);
        assert!(r.iter().all(|x| x.input_len == 2455 && x.output_len == 510));

        let a = synth_trace(&trace_ratios(3).unwrap(), &classes, 300, 42, "m").unwrap();
        let b = synth_trace(&trace_ratios(3).unwrap(), &classes, 300, 42, "m").unwrap();
        assert_eq!(a, b);

        let bad: BTreeMap<u32, f64> = [(1, 50.0), (2, 49.0)].into_iter().collect();
        assert!(synth_trace(&bad, &classes, 10, 0, "m").is_err());
    }

    #[test]
    fn trace_file_round_trip() {
        let text = "{\"input_len\": 10, \"output_len\": 5, \"model\": \"m\"}\n\n{\"input_len\": 700, \"output_len\": 300, \"model\": \"m\", \"arrival_time\": 1.5}\n";
        let recs = parse_trace(text).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].arrival_time, Some(1.5));
        assert_eq!(parse_trace(&write_trace(&recs)).unwrap(), recs);
        match parse_trace("{\"input_len\": 1}\n{oops}") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn classification_is_monotone(i in 0u32..5000, o in 0u32..2000, di in 0u32..500, d_o in 0u32..500) {
            let a = classify(i, o, 512, 128);
            let b = classify(i + di, o + d_o, 512, 128);
            prop_assert!(b.input >= a.input);
            prop_assert!(b.output >= a.output);
        }

        #[test]
        fn ingest_conserves_counts(lens in proptest::collection::vec((0u32..4000, 0u32..1000, 0usize..2), 0..200)) {
            let classes = default_classes();
            let models = ["a", "b"];
            let records: Vec<RequestRecord> = lens
                .iter()
                .map(|&(i, o, m)| RequestRecord { input_len: i, output_len: o, model: models[m].into(), arrival_time: None })
                .collect();
            let d = ingest_trace(&records, &classes, &models).unwrap();
            for m in models {
                let n = records.iter().filter(|r| r.model == m).count() as f64;
                prop_assert_eq!(d.model_total(m), n);
            }
        }

        #[test]
        fn apportion_within_one(total in 0u64..10_000, weights in proptest::collection::vec(0.0f64..100.0, 1..12)) {
            let sum: f64 = weights.iter().sum();
            prop_assume!(sum > 0.0);
            let parts = apportion(total, &weights);
            prop_assert_eq!(parts.iter().sum::<u64>(), total);
            for (p, w) in parts.iter().zip(&weights) {
                let exact = total as f64 * w / sum;
                prop_assert!((*p as f64 - exact).abs() < 1.0 + 1e-9);
            }
        }
    }
}
