//! Rule files: UTF-8 TSV with columns `relation<TAB>rule<TAB>provenance`.

use std::fs;
use std::path::Path;

use super::{parse_rule, ParseError, Rule};

/// Provenance value for rules written by hand rather than generated.
pub const MANUAL: &str = "manual";

#[derive(Debug, Clone, PartialEq)]
pub struct RuleRow {
    pub relation: String,
    pub rule: Rule,
    /// Source instance id, or `manual`.
    pub provenance: String,
}

#[derive(Debug, thiserror::Error)]
pub enum RuleFileError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected 3 tab-separated columns, found {found}")]
    Columns { line: usize, found: usize },
    #[error("line {line}: {source}")]
    Rule {
        line: usize,
        #[source]
        source: ParseError,
    },
}

pub fn parse_rule_file(text: &str) -> Result<Vec<RuleRow>, RuleFileError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(RuleFileError::Columns {
                line: line_no,
                found: cols.len(),
            });
        }
        let rule = parse_rule(cols[1]).map_err(|source| RuleFileError::Rule {
            line: line_no,
            source,
        })?;
        out.push(RuleRow {
            relation: cols[0].to_string(),
            rule,
            provenance: cols[2].to_string(),
        });
    }
    Ok(out)
}

pub fn read_rule_file(path: impl AsRef<Path>) -> Result<Vec<RuleRow>, RuleFileError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| RuleFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_rule_file(&text)
}

pub fn format_rule_file(rows: &[RuleRow]) -> String {
    let mut out = String::new();
    for row in rows {
        out.push_str(&format!("{}\t{}\t{}\n", row.relation, row.rule, row.provenance));
    }
    out
}

pub fn write_rule_file(path: impl AsRef<Path>, rows: &[RuleRow]) -> Result<(), RuleFileError> {
    let path = path.as_ref();
    fs::write(path, format_rule_file(rows)).map_err(|source| RuleFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_and_writes_rows() {
        let text = "org:founded_by\t[ne=org]+ <dobj founded >nsubj [ne=per]+\tdev-3/s0\n\
                    org:parents\t[ne=org]+ >appos subsidiary >nmod_of [ne=org]+\tmanual\n";
        let rows = parse_rule_file(text).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].provenance, MANUAL);
        assert_eq!(format_rule_file(&rows), text);
    }

    #[test]
    fn reports_bad_lines() {
        assert!(matches!(
            parse_rule_file("a\tb\n"),
            Err(RuleFileError::Columns { line: 1, found: 2 })
        ));
        assert!(matches!(
            parse_rule_file("\nrel\t[ne=per]+ <x\tmanual\n"),
            Err(RuleFileError::Rule { line: 2, .. })
        ));
    }
}
