//! Questionnaire response tables.
//!
//! A CSV file with a header row. Columns `q1`..`q10` hold the standard items
//! (1-5); `q11` onwards, when present, are supplementary items. One more
//! column names each row's group.

use std::path::Path;

use anyhow::{bail, Context, Result};
use wayfarer_core::stats::{summarize_group, SusResponse, SUS_ITEMS};

pub const DEFAULT_GROUP_COLUMN: &str = "system";

/// Responses per group, groups in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseTable {
    pub groups: Vec<(String, Vec<SusResponse>)>,
}

fn item_column(name: &str) -> Option<usize> {
    let n: usize = name.trim().strip_prefix('q').or_else(|| name.trim().strip_prefix('Q'))?.parse().ok()?;
    (n >= 1).then_some(n)
}

pub fn parse_responses<R: std::io::Read>(reader: R, group_by: Option<&str>) -> Result<ResponseTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().context("missing header row")?.clone();
    let mut items: Vec<(usize, usize)> = headers.iter().enumerate().filter_map(|(i, h)| Some((item_column(h)?, i))).collect();
    items.sort();
    for (k, (n, _)) in items.iter().enumerate() {
        if *n != k + 1 {
            bail!("item columns must run q1, q2, ... without gaps; q{} is missing", k + 1);
        }
    }
    if items.len() < SUS_ITEMS {
        bail!("expected columns q1..q{SUS_ITEMS}, found {}", items.len());
    }
    let group_col = match group_by {
        Some(name) => Some(
            headers.iter().position(|h| h == name).with_context(|| format!("--group-by: no column named {name:?}"))?,
        ),
        None => headers.iter().position(|h| h == DEFAULT_GROUP_COLUMN),
    };

    let mut groups: Vec<(String, Vec<SusResponse>)> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.with_context(|| format!("line {line}"))?;
        let raw: Vec<u8> = items
            .iter()
            .map(|&(n, col)| {
                let cell = rec.get(col).unwrap_or("");
                cell.parse::<u8>().with_context(|| format!("line {line}, q{n}: {cell:?} is not a score"))
            })
            .collect::<Result<_>>()?;
        let resp = SusResponse::new(&raw[..SUS_ITEMS], &raw[SUS_ITEMS..]).with_context(|| format!("line {line}"))?;
        let label = group_col.and_then(|c| rec.get(c)).unwrap_or("all").to_string();
        match groups.iter_mut().find(|(g, _)| *g == label) {
            Some((_, v)) => v.push(resp),
            None => groups.push((label, vec![resp])),
        }
    }
    if groups.is_empty() {
        bail!("no responses");
    }
    Ok(ResponseTable { groups })
}

pub fn read_responses(path: &Path, group_by: Option<&str>) -> Result<ResponseTable> {
    let f = std::fs::File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_responses(f, group_by).with_context(|| path.display().to_string())
}

/// Formatted report: a two-group comparison, or a single-group summary.
pub fn report(table: &ResponseTable) -> Result<String> {
    use std::fmt::Write;
    let mut out = String::new();
    match table.groups.as_slice() {
        [(la, a), (lb, b)] => {
            let rep = wayfarer_core::stats::aggregate_study(a, b, (la, lb))?;
            write!(out, "{rep}")?;
        }
        [(label, g)] => {
            let s = summarize_group(label, g).context("empty group")?;
            writeln!(out, "{:<16} n={:<5} mean SUS {:.2}", s.label, s.n, s.mean)?;
            for (i, m) in s.item_means.iter().enumerate() {
                writeln!(out, "  {:>4} {:>10.2}", i + 1, m)?;
            }
        }
        more => bail!("expected one or two groups, found {}", more.len()),
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_groups_with_supplementary_items() {
        let csv = "system,q1,q2,q3,q4,q5,q6,q7,q8,q9,q10,q11\n\
                   A,5,1,5,1,5,1,5,1,5,1,4\n\
                   B,3,3,3,3,3,3,3,3,3,3,2\n\
                   A,4,2,4,2,4,2,4,2,4,2,5\n\
                   B,3,3,3,3,3,3,3,3,3,3,3\n";
        let t = parse_responses(csv.as_bytes(), None).unwrap();
        assert_eq!(t.groups.iter().map(|g| g.0.as_str()).collect::<Vec<_>>(), ["A", "B"]);
        assert_eq!(t.groups[0].1[0].supplementary(), &[4]);
        let text = report(&t).unwrap();
        assert!(text.contains("mean SUS 87.50"), "{text}");
        assert!(text.contains("mean SUS 50.00"), "{text}");
    }

    #[test]
    fn errors_name_the_line() {
        let csv = "q1,q2,q3,q4,q5,q6,q7,q8,q9,q10\n3,3,3,3,3,3,3,3,3,3\n3,3,3,3,9,3,3,3,3,3\n";
        let err = format!("{:#}", parse_responses(csv.as_bytes(), None).unwrap_err());
        assert!(err.contains("line 3"), "{err}");
        let short = "q1,q2\n1,2\n";
        assert!(parse_responses(short.as_bytes(), None).is_err());
        let gap = "q1,q2,q3,q4,q5,q6,q7,q8,q9,q10,q12\n";
        assert!(parse_responses(gap.as_bytes(), None).is_err());
        let ok = "q1,q2,q3,q4,q5,q6,q7,q8,q9,q10\n3,3,3,3,3,3,3,3,3,3\n";
        assert!(parse_responses(ok.as_bytes(), Some("site")).is_err());
        assert_eq!(parse_responses(ok.as_bytes(), None).unwrap().groups[0].0, "all");
    }
}
