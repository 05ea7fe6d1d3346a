//! Line-delimited annotation records:
//! `id \t s1,..,s5 \t a1,..,a5 \t cat1,cat2 \t [image_path]`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use super::{validate_attributes, validate_scores, AnnotatedImage};
use crate::{Error, Result, NUM_ATTRIBUTES, NUM_SCORES};

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotatedImage>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, &path.display().to_string())
}

/// Parses annotation text; `origin` names the source in error messages.
pub fn parse_annotations(text: &str, origin: &str) -> Result<Vec<AnnotatedImage>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |field: &str, message: String| Error::Record {
            path: origin.to_string(),
            line: lineno,
            field: field.to_string(),
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if !(4..=5).contains(&fields.len()) {
            return Err(err(
                "record",
                format!("expected 4 or 5 tab-separated fields, got {}", fields.len()),
            ));
        }
        let image_id = fields[0].trim();
        if image_id.is_empty() || image_id.contains(char::is_whitespace) {
            return Err(err("image_id", format!("invalid id {image_id:?}")));
        }
        if !seen.insert(image_id.to_string()) {
            return Err(err("image_id", format!("duplicate id {image_id:?}")));
        }

        let scores: Vec<u8> = fields[1]
            .split(',')
            .map(|s| s.trim().parse::<u8>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err("scores", format!("{:?}: {e}", fields[1])))?;
        validate_scores(&scores).map_err(|e| err("scores", strip(e)))?;

        let attrs: Vec<f64> = fields[2]
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err("attributes", format!("{:?}: {e}", fields[2])))?;
        validate_attributes(&attrs).map_err(|e| err("attributes", strip(e)))?;

        let categories: Vec<String> = if fields[3].trim().is_empty() {
            Vec::new()
        } else {
            fields[3].split(',').map(|c| c.trim().to_string()).collect()
        };
        if categories.iter().any(String::is_empty) {
            return Err(err("categories", "empty category name".into()));
        }

        let image_path = fields
            .get(4)
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(str::to_string);

        let mut score_arr = [0u8; NUM_SCORES];
        score_arr.copy_from_slice(&scores);
        let mut attr_arr = [0.0; NUM_ATTRIBUTES];
        attr_arr.copy_from_slice(&attrs);
        out.push(AnnotatedImage {
            image_id: image_id.to_string(),
            scores: score_arr,
            attributes: attr_arr,
            categories,
            image_path,
        });
    }
    Ok(out)
}

fn strip(e: Error) -> String {
    match e {
        Error::Invalid(m) => m,
        other => other.to_string(),
    }
}

pub fn format_annotation(rec: &AnnotatedImage) -> String {
    let mut line = String::new();
    let scores: Vec<String> = rec.scores.iter().map(u8::to_string).collect();
    let attrs: Vec<String> = rec.attributes.iter().map(f64::to_string).collect();
    let _ = write!(
        line,
        "{}\t{}\t{}\t{}",
        rec.image_id,
        scores.join(","),
        attrs.join(","),
        rec.categories.join(",")
    );
    if let Some(p) = &rec.image_path {
        line.push('\t');
        line.push_str(p);
    }
    line
}

pub fn write_annotations(path: impl AsRef<Path>, records: &[AnnotatedImage]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&format_annotation(r));
        text.push('\n');
    }
    super::atomic_write(path.as_ref(), text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "a\t1,2,3,4,5\t0.5,-0.5,0,1,-1\tbird,tree\timages/a.png\n\
                        b\t5,5,5,5,4\t0,0,0,0,0\t\n\
                        c\t3,3,3,3,3\t0.1,0.1,0.1,0.1,0.1\twater\n";

    #[test]
    fn parses_records_in_order() {
        let recs = parse_annotations(GOOD, "mem").unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].image_id, "a");
        assert_eq!(recs[0].categories, vec!["bird", "tree"]);
        assert_eq!(recs[0].image_path.as_deref(), Some("images/a.png"));
        assert!(recs[1].categories.is_empty());
        assert_eq!(recs[2].image_id, "c");
        assert!((recs[1].mean_score() - 4.8).abs() < 1e-12);
    }

    #[test]
    fn score_out_of_range_names_line_and_field() {
        let text = "a\t1,2,3,4,5\t0,0,0,0,0\t\nb\t1,2,6,4,5\t0,0,0,0,0\t\n";
        let err = parse_annotations(text, "ann.tsv").unwrap_err();
        match err {
            Error::Record { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, "scores");
            }
            other => panic!("unexpected {other}"),
        }
        assert!(err_string(text).contains("ann.tsv:2: scores"));
    }

    fn err_string(text: &str) -> String {
        parse_annotations(text, "ann.tsv").unwrap_err().to_string()
    }

    #[test]
    fn empty_file_is_empty_list() {
        assert!(parse_annotations("", "x").unwrap().is_empty());
    }

    #[test]
    fn rejects_duplicates_and_bad_attributes() {
        let dup = "a\t1,2,3,4,5\t0,0,0,0,0\t\na\t1,2,3,4,5\t0,0,0,0,0\t\n";
        assert!(err_string(dup).contains("duplicate"));
        let attr = "a\t1,2,3,4,5\t0,0,1.5,0,0\t\n";
        assert!(err_string(attr).contains("attributes"));
        let short = "a\t1,2,3,4\t0,0,0,0,0\t\n";
        assert!(err_string(short).contains("scores"));
        let cats = "a\t1,2,3,4,5\t0,0,0,0,0\tbird,,tree\n";
        assert!(err_string(cats).contains("categories"));
    }

    #[test]
    fn format_parse_roundtrip() {
        let recs = parse_annotations(GOOD, "mem").unwrap();
        let text: String = recs.iter().map(|r| format_annotation(r) + "\n").collect();
        assert_eq!(parse_annotations(&text, "mem").unwrap(), recs);
    }
}
