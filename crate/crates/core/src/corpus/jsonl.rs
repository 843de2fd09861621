use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;

use super::ParsedPage;
use crate::error::{Error, Result};
use crate::model::Fragment;

const FRAGMENT_FIELDS: [&str; 4] = ["fragment_id", "page_title", "paragraph_index", "paragraph_text"];

/// Streams fragments from JSON Lines. Blank lines are skipped; line numbers
/// in errors are 1-based.
pub struct FragmentReader<R> {
    lines: std::io::Lines<R>,
    line: usize,
    source: std::path::PathBuf,
}

impl<R: BufRead> FragmentReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line: 0,
            source: "<reader>".into(),
        }
    }
}

fn parse_line<T: DeserializeOwned>(text: &str, line: usize, required: &[&str]) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::ParseError {
        line,
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| Error::ParseError {
        line,
        message: "expected a JSON object".into(),
    })?;
    if let Some(field) = required.iter().find(|f| !obj.contains_key(**f)) {
        return Err(Error::MissingField {
            line,
            field: field.to_string(),
        });
    }
    serde_json::from_value(value).map_err(|e| Error::ParseError {
        line,
        message: e.to_string(),
    })
}

impl<R: BufRead> Iterator for FragmentReader<R> {
    type Item = Result<Fragment>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(Error::io(&self.source, e))),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            let line = self.line;
            return Some(
                parse_line::<Fragment>(&text, line, &FRAGMENT_FIELDS).and_then(|f| {
                    f.validate().map_err(|e| Error::ParseError {
                        line,
                        message: e.to_string(),
                    })?;
                    Ok(f)
                }),
            );
        }
    }
}

pub fn read_fragments_jsonl(path: &Path) -> Result<FragmentReader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = FragmentReader::new(BufReader::new(file));
    reader.source = path.to_path_buf();
    Ok(reader)
}

pub fn write_fragments_jsonl<'a, I>(frags: I, path: &Path) -> Result<usize>
where
    I: IntoIterator<Item = &'a Fragment>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut n = 0;
    for f in frags {
        serde_json::to_writer(&mut w, f).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        n += 1;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(n)
}

pub fn read_pages_jsonl(path: &Path) -> Result<Vec<ParsedPage>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pages = Vec::new();
    for (i, text) in BufReader::new(file).lines().enumerate() {
        let text = text.map_err(|e| Error::io(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        pages.push(parse_line(&text, i + 1, &["title", "elements"])?);
    }
    Ok(pages)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FragmentImage, Hyperlink};

    fn sample(i: usize) -> Fragment {
        Fragment {
            fragment_id: format!("Page#{i}"),
            page_title: "Page".into(),
            paragraph_index: i,
            paragraph_text: format!("paragraph {i} with \"quotes\" and ünïcode"),
            hyperlinks: vec![Hyperlink {
                surface_text: "quotes".into(),
                target_title: "Quotation mark".into(),
            }],
            images: (0..i)
                .map(|j| FragmentImage {
                    image_ref: format!("{j}.png"),
                    caption: String::new(),
                })
                .collect(),
        }
    }

    #[test]
    fn write_then_read_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.jsonl");
        let frags: Vec<Fragment> = (0..5).map(sample).collect();
        assert_eq!(write_fragments_jsonl(&frags, &path).unwrap(), 5);
        let back: Vec<Fragment> = read_fragments_jsonl(&path).unwrap().collect::<Result<_>>().unwrap();
        assert_eq!(back, frags);
    }

    #[test]
    fn missing_field_reports_line() {
        let input = format!(
            "{}\n{}\n",
            serde_json::to_string(&sample(0)).unwrap(),
            r#"{"fragment_id":"x","page_title":"P","paragraph_index":0}"#
        );
        let res: Vec<Result<Fragment>> = FragmentReader::new(input.as_bytes()).collect();
        assert!(res[0].is_ok());
        assert!(matches!(&res[1], Err(Error::MissingField { line: 2, field }) if field == "paragraph_text"));
    }

    #[test]
    fn malformed_line_reports_line() {
        let input = "\n{not json}\n";
        let res: Vec<Result<Fragment>> = FragmentReader::new(input.as_bytes()).collect();
        assert!(matches!(res[0], Err(Error::ParseError { line: 2, .. })));
    }

    #[test]
    fn empty_input_is_empty_stream() {
        assert_eq!(FragmentReader::new(&b""[..]).count(), 0);
    }
}
