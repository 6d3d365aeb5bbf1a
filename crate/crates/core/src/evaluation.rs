//! Accuracy metrics, paired t-tests and the key-value report format.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Macro-averaged accuracy over the classes that have instances.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub per_class: BTreeMap<String, Tally>,
    /// Listed classes without any instance; not part of the mean.
    pub excluded: Vec<String>,
}

impl AccuracyReport {
    pub fn mean_class_accuracy(&self) -> f64 {
        if self.per_class.is_empty() {
            return 0.0;
        }
        self.per_class.values().map(Tally::accuracy).sum::<f64>() / self.per_class.len() as f64
    }

    pub fn n_instances(&self) -> usize {
        self.per_class.values().map(|t| t.total).sum()
    }
}

pub fn per_class_accuracy<S: AsRef<str>, T: AsRef<str>>(
    predictions: &[S],
    truths: &[T],
    classes: &BTreeSet<String>,
) -> Result<AccuracyReport> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("accuracy needs at least one prediction"));
    }
    if predictions.len() != truths.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truths.len()
        )));
    }
    let mut per_class: BTreeMap<String, Tally> = BTreeMap::new();
    for (p, t) in predictions.iter().zip(truths) {
        let t = t.as_ref();
        if !classes.contains(t) {
            return Err(Error::UnknownClass(t.to_string()));
        }
        let e = per_class.entry(t.to_string()).or_insert(Tally {
            correct: 0,
            total: 0,
        });
        e.total += 1;
        if p.as_ref() == t {
            e.correct += 1;
        }
    }
    let excluded: Vec<String> = classes
        .iter()
        .filter(|c| !per_class.contains_key(*c))
        .cloned()
        .collect();
    if !excluded.is_empty() {
        log::warn!("classes without test instances excluded from the mean: {excluded:?}");
    }
    Ok(AccuracyReport {
        per_class,
        excluded,
    })
}

/// `2us/(u+s)`, or 0 when both are 0. Works on any nonnegative scale.
pub fn harmonic_mean(u: f64, s: f64) -> Result<f64> {
    if !(u >= 0.0 && s >= 0.0 && u.is_finite() && s.is_finite()) {
        return Err(Error::OutOfRange(format!("accuracies ({u}, {s})")));
    }
    if u + s == 0.0 {
        return Ok(0.0);
    }
    Ok(u * (2.0 * s / (u + s)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GzslReport {
    pub unseen: AccuracyReport,
    pub seen: AccuracyReport,
    pub tau: f64,
}

impl GzslReport {
    pub fn u(&self) -> f64 {
        self.unseen.mean_class_accuracy()
    }

    pub fn s(&self) -> f64 {
        self.seen.mean_class_accuracy()
    }

    pub fn h(&self) -> f64 {
        harmonic_mean(self.u(), self.s()).unwrap_or(0.0)
    }
}

/// Two-tailed Student t critical values at 0.05 for df = 1..=30.
const T_CRITICAL_05: [f64; 30] = [
    12.706205, 4.302653, 3.182446, 2.776445, 2.570582, 2.446912, 2.364624, 2.306004, 2.262157,
    2.228139, 2.200985, 2.178813, 2.160369, 2.144787, 2.131450, 2.119905, 2.109816, 2.100922,
    2.093024, 2.085963, 2.079614, 2.073873, 2.068658, 2.063899, 2.059539, 2.055529, 2.051831,
    2.048407, 2.045230, 2.042272,
];

pub fn t_critical_05(df: usize) -> Result<f64> {
    match df {
        0 => Err(Error::TooFewSamples { needed: 2, got: 1 }),
        1..=30 => Ok(T_CRITICAL_05[df - 1]),
        _ => {
            let dist = StudentsT::new(0.0, 1.0, df as f64)
                .map_err(|e| Error::OutOfRange(format!("t distribution: {e}")))?;
            Ok(dist.inverse_cdf(0.975))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedTTestResult {
    pub mean_diff: f64,
    pub std_diff: f64,
    pub n: usize,
    pub t_value: f64,
    pub p_value: f64,
    pub significant_at_05: bool,
}

/// `t = X̄_D / (s_D/√n)` with the n−1 sample standard deviation.
pub fn paired_ttest(diffs: &[f64]) -> Result<PairedTTestResult> {
    let n = diffs.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFiniteValue("paired difference".into()));
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let std = var.sqrt();
    let t = mean / (std / (n as f64).sqrt());
    let df = n - 1;
    let dist = StudentsT::new(0.0, 1.0, df as f64)
        .map_err(|e| Error::OutOfRange(format!("t distribution: {e}")))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(PairedTTestResult {
        mean_diff: mean,
        std_diff: std,
        n,
        t_value: t,
        p_value: p,
        significant_at_05: t.abs() > t_critical_05(df)?,
    })
}

/// Differences `a − b` over matching split ids.
pub fn paired_differences(
    a: &BTreeMap<String, f64>,
    b: &BTreeMap<String, f64>,
) -> Result<Vec<f64>> {
    let ka: BTreeSet<&String> = a.keys().collect();
    let kb: BTreeSet<&String> = b.keys().collect();
    if ka != kb {
        let odd: Vec<&str> = ka.symmetric_difference(&kb).map(|s| s.as_str()).collect();
        return Err(Error::SplitMismatch(odd.join(",")));
    }
    Ok(a.iter().map(|(k, v)| v - b[k]).collect())
}

/// Parses `split_id<TAB>value` lines.
pub fn parse_split_metrics(text: &str) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, v) = line.split_once('\t').ok_or_else(|| Error::MalformedRecord {
            line: i + 1,
            message: "expected `split_id<TAB>value`".into(),
        })?;
        let v: f64 = v.trim().parse().map_err(|_| Error::MalformedRecord {
            line: i + 1,
            message: format!("bad value `{v}`"),
        })?;
        if out.insert(id.trim().to_string(), v).is_some() {
            return Err(Error::MalformedRecord {
                line: i + 1,
                message: format!("split `{id}` repeated"),
            });
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset("no split metrics".into()));
    }
    Ok(out)
}

/// Everything a run can report. Absent sections are omitted on output.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub config: BTreeMap<String, String>,
    pub zsl: Option<AccuracyReport>,
    pub gzsl: Option<GzslReport>,
    pub purity_before: Option<f64>,
    pub purity_after: Option<f64>,
    /// Purity measured directly on a model's current centroids.
    pub purity_current: Option<f64>,
    pub histogram: Option<BTreeMap<String, Vec<f64>>>,
    pub ttests: BTreeMap<String, PairedTTestResult>,
}

const RAW_HEADER: &str = "[per_class]";

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k} = {v}");
        }
        if let Some(z) = &self.zsl {
            let _ = writeln!(s, "zsl.mean_class_accuracy = {}", f4(z.mean_class_accuracy()));
            let _ = writeln!(s, "zsl.n_instances = {}", z.n_instances());
            let _ = writeln!(s, "zsl.n_classes = {}", z.per_class.len());
        }
        if let Some(g) = &self.gzsl {
            let _ = writeln!(s, "gzsl.u = {}", f4(g.u()));
            let _ = writeln!(s, "gzsl.s = {}", f4(g.s()));
            let _ = writeln!(s, "gzsl.h = {}", f4(g.h()));
            let _ = writeln!(s, "gzsl.tau = {}", f4(g.tau));
        }
        if let Some(p) = self.purity_before {
            let _ = writeln!(s, "purity.before = {}", f4(p));
        }
        if let Some(p) = self.purity_after {
            let _ = writeln!(s, "purity.after = {}", f4(p));
        }
        if let Some(p) = self.purity_current {
            let _ = writeln!(s, "purity.current = {}", f4(p));
        }
        if let Some(h) = &self.histogram {
            for (label, row) in h {
                let cells: Vec<String> = row.iter().map(|v| f4(*v)).collect();
                let _ = writeln!(s, "histogram.{label} = {}", cells.join(","));
            }
        }
        for (name, t) in &self.ttests {
            let _ = writeln!(s, "ttest.{name}.mean_diff = {}", t.mean_diff);
            let _ = writeln!(s, "ttest.{name}.std_diff = {}", t.std_diff);
            let _ = writeln!(s, "ttest.{name}.n = {}", t.n);
            let _ = writeln!(s, "ttest.{name}.t = {}", t.t_value);
            let _ = writeln!(s, "ttest.{name}.p = {}", t.p_value);
            let _ = writeln!(s, "ttest.{name}.significant_05 = {}", t.significant_at_05);
        }
        let mut raw = Vec::new();
        let mut push = |block: &str, rep: &AccuracyReport| {
            for (label, t) in &rep.per_class {
                raw.push(format!("{block}\t{label}\t{}\t{}", t.correct, t.total));
            }
            for label in &rep.excluded {
                raw.push(format!("{block}\t{label}\t0\t0"));
            }
        };
        if let Some(z) = &self.zsl {
            push("zsl", z);
        }
        if let Some(g) = &self.gzsl {
            push("gzsl_unseen", &g.unseen);
            push("gzsl_seen", &g.seen);
        }
        if !raw.is_empty() {
            s.push_str(RAW_HEADER);
            s.push('\n');
            for line in raw {
                s.push_str(&line);
                s.push('\n');
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Report(format!("line {line}: {msg}"));
        let num = |line: usize, v: &str| -> Result<f64> {
            v.parse().map_err(|_| bad(line, format!("bad number `{v}`")))
        };
        let mut rep = EvalReport::default();
        let mut kv: BTreeMap<String, (usize, String)> = BTreeMap::new();
        let mut raw: BTreeMap<String, AccuracyReport> = BTreeMap::new();
        let mut in_raw = false;
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            if line == RAW_HEADER {
                in_raw = true;
                continue;
            }
            if in_raw {
                let cols: Vec<&str> = line.split('\t').collect();
                if cols.len() != 4 {
                    return Err(bad(n, "per-class line needs 4 columns".into()));
                }
                let correct: usize = cols[2].parse().map_err(|_| bad(n, "bad count".into()))?;
                let total: usize = cols[3].parse().map_err(|_| bad(n, "bad count".into()))?;
                let block = raw.entry(cols[0].to_string()).or_insert_with(|| AccuracyReport {
                    per_class: BTreeMap::new(),
                    excluded: Vec::new(),
                });
                if total == 0 {
                    block.excluded.push(cols[1].to_string());
                } else {
                    block.per_class.insert(cols[1].to_string(), Tally { correct, total });
                }
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| bad(n, "expected `key = value`".into()))?;
            kv.insert(k.to_string(), (n, v.to_string()));
        }

        let mut ttests: BTreeMap<String, BTreeMap<String, (usize, String)>> = BTreeMap::new();
        let mut tau = None;
        for (k, (n, v)) in &kv {
            let n = *n;
            if let Some(key) = k.strip_prefix("config.") {
                rep.config.insert(key.to_string(), v.clone());
            } else if let Some(label) = k.strip_prefix("histogram.") {
                let row = v.split(',').map(|c| num(n, c)).collect::<Result<Vec<_>>>()?;
                rep.histogram.get_or_insert_with(BTreeMap::new).insert(label.to_string(), row);
            } else if let Some(rest) = k.strip_prefix("ttest.") {
                let (name, field) = rest
                    .rsplit_once('.')
                    .ok_or_else(|| bad(n, format!("bad t-test key `{k}`")))?;
                ttests
                    .entry(name.to_string())
                    .or_default()
                    .insert(field.to_string(), (n, v.clone()));
            } else {
                match k.as_str() {
                    "purity.before" => rep.purity_before = Some(num(n, v)?),
                    "purity.after" => rep.purity_after = Some(num(n, v)?),
                    "purity.current" => rep.purity_current = Some(num(n, v)?),
                    "gzsl.tau" => tau = Some(num(n, v)?),
                    "zsl.mean_class_accuracy" | "zsl.n_instances" | "zsl.n_classes" | "gzsl.u"
                    | "gzsl.s" | "gzsl.h" => {}
                    _ => return Err(bad(n, format!("unknown key `{k}`"))),
                }
            }
        }
        for (name, fields) in ttests {
            let get = |f: &str| {
                fields
                    .get(f)
                    .ok_or_else(|| Error::Report(format!("t-test `{name}` lacks `{f}`")))
            };
            let (n, v) = get("n")?;
            let count: usize = v.parse().map_err(|_| bad(*n, "bad count".into()))?;
            let (n, v) = get("significant_05")?;
            let sig: bool = v.parse().map_err(|_| bad(*n, "bad flag".into()))?;
            let field = |f: &str| -> Result<f64> {
                let (n, v) = get(f)?;
                num(*n, v)
            };
            rep.ttests.insert(
                name.clone(),
                PairedTTestResult {
                    mean_diff: field("mean_diff")?,
                    std_diff: field("std_diff")?,
                    n: count,
                    t_value: field("t")?,
                    p_value: field("p")?,
                    significant_at_05: sig,
                },
            );
        }
        rep.zsl = raw.remove("zsl");
        match (raw.remove("gzsl_unseen"), raw.remove("gzsl_seen"), tau) {
            (Some(unseen), Some(seen), Some(tau)) => {
                rep.gzsl = Some(GzslReport { unseen, seen, tau })
            }
            (None, None, None) => {}
            _ => return Err(Error::Report("incomplete generalized section".into())),
        }
        if let Some(extra) = raw.keys().next() {
            return Err(Error::Report(format!("unknown per-class block `{extra}`")));
        }
        Ok(rep)
    }

    /// Writes via a temporary file so a failed write leaves nothing behind.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_text())
    }
}

pub(crate) fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
