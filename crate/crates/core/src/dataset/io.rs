//! Line-oriented text formats.
//!
//! ```text
//! instances:   id<TAB>class_label<TAB>v1,v2,...,vd
//! embeddings:  class_label<TAB>v1,...,vd
//! split:       seen:<TAB>A,B,...
//!              unseen:<TAB>C,...
//! ```
//!
//! Blank lines are ignored. Floats are written with Rust's shortest
//! round-trip formatting, so parse(format(x)) == x bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ClassEmbeddingTable, ClassSplit, Instance, LabeledDataset};
use crate::error::{Error, Result};
use crate::vecmath;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_vector(field: &str, line: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for tok in field.split(',') {
        let tok = tok.trim();
        let v: f64 = tok.parse().map_err(|_| Error::MalformedRecord {
            line,
            message: format!("`{tok}` is not a number"),
        })?;
        if !v.is_finite() {
            return Err(Error::NonFiniteValue(format!("line {line}")));
        }
        out.push(v);
    }
    Ok(out)
}

fn non_blank_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub fn parse_instances(text: &str, d_v: usize) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for (line, l) in non_blank_lines(text) {
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::MalformedRecord {
                line,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let features = parse_vector(fields[2], line)?;
        if features.len() != d_v {
            return Err(Error::DimensionMismatch {
                line,
                expected: d_v,
                found: features.len(),
            });
        }
        out.push(Instance {
            id: fields[0].to_string(),
            class_label: fields[1].to_string(),
            features,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset("instances file has no records".into()));
    }
    Ok(out)
}

pub fn load_instances(path: impl AsRef<Path>, d_v: usize) -> Result<Vec<Instance>> {
    parse_instances(&read(path.as_ref())?, d_v)
}

pub fn parse_embeddings(text: &str) -> Result<ClassEmbeddingTable> {
    let mut entries = BTreeMap::new();
    let mut dim = None;
    for (line, l) in non_blank_lines(text) {
        let (label, values) = l.split_once('\t').ok_or_else(|| Error::MalformedRecord {
            line,
            message: "expected `label<TAB>values`".into(),
        })?;
        let v = parse_vector(values, line)?;
        let expected = *dim.get_or_insert(v.len());
        if v.len() != expected {
            return Err(Error::DimensionMismatch {
                line,
                expected,
                found: v.len(),
            });
        }
        if entries.insert(label.to_string(), v).is_some() {
            return Err(Error::DuplicateClass(label.to_string()));
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyDataset("embeddings file has no records".into()));
    }
    ClassEmbeddingTable::new(entries)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<ClassEmbeddingTable> {
    parse_embeddings(&read(path.as_ref())?)
}

pub fn parse_split(text: &str, table: &ClassEmbeddingTable) -> Result<ClassSplit> {
    let mut seen = None;
    let mut unseen = None;
    for (line, l) in non_blank_lines(text) {
        let (key, values) = l.split_once('\t').ok_or_else(|| Error::MalformedRecord {
            line,
            message: "expected `seen:<TAB>labels` or `unseen:<TAB>labels`".into(),
        })?;
        let labels: Vec<String> = values
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        let slot = match key.trim() {
            "seen:" => &mut seen,
            "unseen:" => &mut unseen,
            other => {
                return Err(Error::MalformedRecord {
                    line,
                    message: format!("unknown split key `{other}`"),
                })
            }
        };
        if slot.replace(labels).is_some() {
            return Err(Error::MalformedRecord {
                line,
                message: format!("`{}` given twice", key.trim()),
            });
        }
    }
    let split = ClassSplit::new(seen.unwrap_or_default(), unseen.unwrap_or_default())?;
    split.check_against(table)?;
    Ok(split)
}

pub fn load_split(path: impl AsRef<Path>, table: &ClassEmbeddingTable) -> Result<ClassSplit> {
    parse_split(&read(path.as_ref())?, table)
}

pub fn format_instances(instances: &[Instance]) -> String {
    let mut s = String::new();
    for inst in instances {
        writeln!(
            s,
            "{}\t{}\t{}",
            inst.id,
            inst.class_label,
            vecmath::join(&inst.features)
        )
        .unwrap();
    }
    s
}

pub fn format_embeddings(table: &ClassEmbeddingTable) -> String {
    let mut s = String::new();
    for (label, v) in table.iter() {
        writeln!(s, "{label}\t{}", vecmath::join(v)).unwrap();
    }
    s
}

pub fn format_split(split: &ClassSplit) -> String {
    format!(
        "seen:\t{}\nunseen:\t{}\n",
        split.seen().join(","),
        split.unseen().join(",")
    )
}

/// Reads `instances.tsv`, `embeddings.tsv` and `split.tsv` from `dir`.
///
/// The feature dimension is taken from the first instance record.
pub fn load_dataset(dir: &Path) -> Result<LabeledDataset> {
    let table = load_embeddings(dir.join("embeddings.tsv"))?;
    let split = load_split(dir.join("split.tsv"), &table)?;
    let text = read(&dir.join("instances.tsv"))?;
    let d_v = non_blank_lines(&text)
        .next()
        .and_then(|(_, l)| l.split('\t').nth(2))
        .map(|f| f.split(',').count())
        .ok_or(Error::EmptyDataset("instances file has no records".into()))?;
    super::validate_dataset(parse_instances(&text, d_v)?, table, split)
}

/// Writes `instances.tsv`, `embeddings.tsv` and `split.tsv` into `dir`.
///
/// Files are first written under temporary names and renamed once all three
/// succeeded; on failure the temporaries are removed.
pub fn write_dataset(ds: &LabeledDataset, dir: &Path) -> Result<()> {
    let files = [
        ("instances.tsv", format_instances(&ds.instances)),
        ("embeddings.tsv", format_embeddings(&ds.embeddings)),
        ("split.tsv", format_split(&ds.split)),
    ];
    let mut staged = Vec::new();
    for (name, body) in &files {
        let tmp = dir.join(format!(".{name}.tmp"));
        if let Err(e) = fs::write(&tmp, body) {
            for t in &staged {
                let _ = fs::remove_file(t);
            }
            return Err(Error::io(&tmp, e));
        }
        staged.push(tmp);
    }
    for ((name, _), tmp) in files.iter().zip(&staged) {
        let dest = dir.join(name);
        fs::rename(tmp, &dest).map_err(|e| Error::io(&dest, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::validate_dataset;
    use proptest::prelude::*;

    #[test]
    fn three_records_in_order() {
        let text = "a\tX\t1,2,3,4\nb\tY\t0.5,0,0,0\nc\tX\t-1,-2,-3,-4\n";
        let got = parse_instances(text, 4).unwrap();
        assert_eq!(
            got.iter().map(|i| i.id.as_str()).collect::<Vec<_>>(),
            ["a", "b", "c"]
        );
        assert_eq!(got[2].features, vec![-1.0, -2.0, -3.0, -4.0]);
    }

    #[test]
    fn instance_errors() {
        assert!(matches!(parse_instances("", 4), Err(Error::EmptyDataset(_))));
        assert!(matches!(
            parse_instances("a\tX\t1,2,3,4\nb\tX\t1,2,3\n", 4),
            Err(Error::DimensionMismatch {
                line: 2,
                expected: 4,
                found: 3
            })
        ));
        assert!(matches!(
            parse_instances("a\tX\t1,2,oops,4\n", 4),
            Err(Error::MalformedRecord { line: 1, .. })
        ));
        assert!(matches!(
            parse_instances("a\tX\t1,NaN,3,4\n", 4),
            Err(Error::NonFiniteValue(_))
        ));
        assert!(matches!(
            parse_instances("a X 1,2,3,4\n", 4),
            Err(Error::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn embeddings_parse() {
        let t = parse_embeddings("A\t1,0,0\nB\t0,1,0\n").unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.len(), 2);
        assert!(matches!(
            parse_embeddings("A\t1,0,0\nA\t0,1,0\n"),
            Err(Error::DuplicateClass(l)) if l == "A"
        ));
        assert!(matches!(
            parse_embeddings("A\t1,0,0\nB\t0,1\n"),
            Err(Error::DimensionMismatch { line: 2, .. })
        ));
        assert!(matches!(
            parse_embeddings("A\t0,0\n"),
            Err(Error::ZeroEmbedding(_))
        ));
        assert!(matches!(parse_embeddings("\n\n"), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn split_parse() {
        let t = parse_embeddings("A\t1\nB\t2\nC\t3\n").unwrap();
        let s = parse_split("seen:\tA,B\nunseen:\tC\n", &t).unwrap();
        assert_eq!(s.seen(), vec!["A", "B"]);
        assert!(matches!(
            parse_split("seen:\tA\nunseen:\tA,B\n", &t),
            Err(Error::OverlappingSplit(_))
        ));
        assert!(matches!(
            parse_split("seen:\tA\nunseen:\tD\n", &t),
            Err(Error::UnknownClass(l)) if l == "D"
        ));
        assert!(matches!(
            parse_split("seen:\tA\n", &t),
            Err(Error::EmptySide("unseen"))
        ));
    }

    #[test]
    fn directory_round_trip() {
        let ds = crate::dataset::generate_synthetic(&crate::dataset::SyntheticSpec {
            num_classes: 4,
            per_class: 3,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn missing_directory_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dataset(&dir.path().join("absent")),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn dataset_round_trips(
            rows in prop::collection::vec(
                (0usize..3, prop::collection::vec(-1e6f64..1e6, 3)),
                1..20,
            ),
            emb in prop::collection::vec(prop::collection::vec(0.1f64..10.0, 2), 3),
        ) {
            let labels = ["A", "B", "C"];
            let table = ClassEmbeddingTable::new(
                labels.iter().zip(&emb).map(|(l, v)| (l.to_string(), v.clone())).collect(),
            ).unwrap();
            let split = ClassSplit::new(
                vec!["A".to_string(), "B".to_string()],
                vec!["C".to_string()],
            ).unwrap();
            let mut instances: Vec<Instance> = rows.iter().enumerate().map(|(i, (c, f))| Instance {
                id: format!("id{i}"),
                class_label: labels[*c].to_string(),
                features: f.clone(),
            }).collect();
            instances[0].class_label = "A".into();
            let ds = validate_dataset(instances, table, split).unwrap();

            let inst = parse_instances(&format_instances(&ds.instances), 3).unwrap();
            let table = parse_embeddings(&format_embeddings(&ds.embeddings)).unwrap();
            let split = parse_split(&format_split(&ds.split), &table).unwrap();
            let again = validate_dataset(inst, table, split).unwrap();
            prop_assert_eq!(again, ds);
        }
    }
}
