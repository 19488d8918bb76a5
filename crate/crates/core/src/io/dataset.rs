//! Study-level CSV files.
//!
//! Schema (header matched case-insensitively):
//! `study_id,n_a,n_b,y_a,se_a,y_b,se_b`. Effects are log odds ratios. An
//! absent subgroup has blank `y` and `se` and a count of 0. Lines starting
//! with `#` are comments; `# label_a: <name>` and `# label_b: <name>` set
//! the subgroup labels.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{validate_dataset, MetaDataset, StudyRecord, SubgroupEstimate};

pub const HEADER: [&str; 7] = ["study_id", "n_a", "n_b", "y_a", "se_a", "y_b", "se_b"];

/// A parsed file: the dataset plus its comment lines (without the `#`).
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCsv {
    pub data: MetaDataset<f64>,
    pub comments: Vec<String>,
}

pub fn read_csv_file(path: impl AsRef<Path>) -> Result<ParsedCsv> {
    let path = path.as_ref();
    let mut text = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_csv(&text)
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn field_f64(raw: &str, line: usize, name: &str) -> Result<Option<f64>> {
    let t = raw.trim();
    if t.is_empty() {
        return Ok(None);
    }
    t.parse::<f64>()
        .map(Some)
        .map_err(|_| parse_err(line, format!("{name}: `{t}` is not a number")))
}

fn field_count(raw: &str, line: usize, name: &str) -> Result<u64> {
    let t = raw.trim();
    if t.is_empty() {
        return Ok(0);
    }
    t.parse::<u64>()
        .map_err(|_| parse_err(line, format!("{name}: `{t}` is not a nonnegative integer")))
}

fn arm(
    n: u64,
    y: Option<f64>,
    se: Option<f64>,
    line: usize,
    which: &str,
) -> Result<SubgroupEstimate<f64>> {
    match (y, se) {
        (None, None) if n == 0 => Ok(SubgroupEstimate::Absent),
        (None, None) => Err(parse_err(
            line,
            format!("subgroup {which} has n = {n} but no estimate"),
        )),
        (Some(y), Some(se)) => Ok(SubgroupEstimate::observed(y, se, n)),
        _ => Err(parse_err(
            line,
            format!("subgroup {which}: y and se must both be given or both be blank"),
        )),
    }
}

/// Parses CSV text and validates the resulting dataset.
pub fn parse_csv(text: &str) -> Result<ParsedCsv> {
    let mut comments = Vec::new();
    let mut body = String::with_capacity(text.len());
    // physical line number of each line kept in `body`
    let mut line_of = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let trimmed = raw.trim_start();
        if let Some(c) = trimmed.strip_prefix('#') {
            comments.push(c.trim().to_string());
        } else if !trimmed.is_empty() {
            body.push_str(raw);
            body.push('\n');
            line_of.push(i + 1);
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(body.as_bytes());
    let mut records = reader.records();
    let header = records
        .next()
        .ok_or_else(|| parse_err(1, "missing header row"))?
        .map_err(|e| parse_err(1, e.to_string()))?;
    let header_line = line_of[0];
    let names: Vec<String> = header
        .iter()
        .map(|h| h.trim().to_ascii_lowercase())
        .collect();
    if names != HEADER {
        return Err(parse_err(
            header_line,
            format!(
                "header must be `{}`, found `{}`",
                HEADER.join(","),
                names.join(",")
            ),
        ));
    }
    let mut studies = Vec::new();
    for (idx, rec) in records.enumerate() {
        let line = line_of[idx + 1];
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() != HEADER.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", HEADER.len(), rec.len()),
            ));
        }
        let id = rec[0].trim();
        if id.is_empty() {
            return Err(parse_err(line, "empty study_id"));
        }
        let n_a = field_count(&rec[1], line, "n_a")?;
        let n_b = field_count(&rec[2], line, "n_b")?;
        let a = arm(
            n_a,
            field_f64(&rec[3], line, "y_a")?,
            field_f64(&rec[4], line, "se_a")?,
            line,
            "A",
        )?;
        let b = arm(
            n_b,
            field_f64(&rec[5], line, "y_b")?,
            field_f64(&rec[6], line, "se_b")?,
            line,
            "B",
        )?;
        studies.push((line, StudyRecord::new(id, a, b)));
    }
    let mut data = MetaDataset::new(studies.iter().map(|(_, s)| s.clone()).collect());
    for c in &comments {
        if let Some((key, value)) = c.split_once(':') {
            match key.trim() {
                "label_a" => data.label_a = value.trim().to_string(),
                "label_b" => data.label_b = value.trim().to_string(),
                _ => {}
            }
        }
    }
    let violations = validate_dataset(&data);
    let line_for = |id: &Option<String>| {
        id.as_ref()
            .and_then(|id| studies.iter().find(|(_, s)| &s.study_id == id))
            .map(|(l, _)| *l)
    };
    if let Some(line) = violations.iter().find_map(|v| line_for(&v.study_id)) {
        let detail: Vec<String> = violations
            .iter()
            .map(|v| match line_for(&v.study_id) {
                Some(l) => format!("line {l}: {v}"),
                None => v.to_string(),
            })
            .collect();
        return Err(parse_err(line, detail.join("; ")));
    }
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok(ParsedCsv { data, comments })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:?}"))
}

/// Writes a dataset in the schema above. Numbers use the shortest
/// representation that round-trips exactly.
pub fn write_csv(data: &MetaDataset<f64>, comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for s in &data.studies {
        let part = |e: &SubgroupEstimate<f64>| -> [String; 3] {
            match e {
                SubgroupEstimate::Observed { effect, std_err, n } => [
                    n.to_string(),
                    fmt_opt(Some(*effect)),
                    fmt_opt(Some(*std_err)),
                ],
                SubgroupEstimate::Absent => ["0".into(), String::new(), String::new()],
            }
        };
        let [na, ya, sa] = part(&s.arm_a);
        let [nb, yb, sb] = part(&s.arm_b);
        w.write_record([s.study_id.as_str(), &na, &nb, &ya, &sa, &yb, &sb])
            .expect("in-memory write");
    }
    out.push_str(
        &String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields"),
    );
    out
}
