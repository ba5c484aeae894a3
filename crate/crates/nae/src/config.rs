//! `key = value` option files. Blank lines and `#` comments are ignored;
//! keys name command-line options (`batch-size` or `batch_size`).

use std::path::Path;

use crate::error::{read_file, ParseError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse(text: &str) -> Result<Vec<Entry>, ParseError> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap().trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ParseError::new(
                line,
                format!("expected `key = value`, got `{content}`"),
            ));
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim().to_owned();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
            return Err(ParseError::new(line, format!("invalid key `{key}`")));
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(ParseError::new(
                line,
                format!("`{key}` is already set on line {}", prev.line),
            ));
        }
        out.push(Entry { line, key, value });
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<Vec<Entry>> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| ParseError::new(1, format!("not UTF-8: {e}")).in_file(path))?;
    parse(text).map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_values_and_comments() {
        let e = parse("# training\nepochs = 3\n\nbatch_size=4  # small\nwidths = 8,16\n").unwrap();
        assert_eq!(e.len(), 3);
        assert_eq!(
            (e[0].line, e[0].key.as_str(), e[0].value.as_str()),
            (2, "epochs", "3")
        );
        assert_eq!(e[1].key, "batch-size");
        assert_eq!(e[2].value, "8,16");
    }

    #[test]
    fn reports_bad_lines() {
        assert_eq!(parse("a = 1\nnonsense\n").unwrap_err().line, 2);
        assert_eq!(parse("a = 1\na = 2\n").unwrap_err().line, 2);
        assert!(parse(" = 3").is_err());
    }
}
