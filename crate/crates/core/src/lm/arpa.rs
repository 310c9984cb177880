//! ARPA text format reader.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// One parsed entry, with log10 values as written in the file.
#[derive(Clone, Debug, PartialEq)]
pub struct ArpaEntry {
    pub words: Vec<String>,
    pub log10_prob: f64,
    pub log10_backoff: Option<f64>,
}

/// Entries grouped by order (index 0 holds unigrams).
#[derive(Clone, Debug, Default)]
pub struct ArpaFile {
    pub sections: Vec<Vec<ArpaEntry>>,
}

impl ArpaFile {
    pub fn order(&self) -> usize {
        self.sections.len()
    }
}

/// Parses the `\data\` header and every `\N-grams:` section, checking that
/// section sizes match the declared counts.
pub fn parse_arpa_text(text: &str, source_name: &str) -> Result<ArpaFile> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let err = |line: usize, msg: String| Error::parse(source_name, line, msg);

    // \data\
    let mut last_line = 0;
    loop {
        match lines.next() {
            Some((n, "\\data\\")) => {
                last_line = n;
                break;
            }
            Some((n, _)) => last_line = n,
            None => return Err(err(last_line.max(1), "missing \\data\\ header".into())),
        }
    }

    let mut counts: Vec<usize> = Vec::new();
    let mut pending: Option<(usize, &str)> = None;
    for (n, line) in lines.by_ref() {
        last_line = n;
        if line.is_empty() {
            if counts.is_empty() {
                continue;
            }
            break;
        }
        if line.starts_with('\\') {
            pending = Some((n, line));
            break;
        }
        let rest = line
            .strip_prefix("ngram")
            .ok_or_else(|| err(n, format!("\\data\\: expected 'ngram N=count', found '{line}'")))?;
        let (order, count) = rest
            .trim()
            .split_once('=')
            .ok_or_else(|| err(n, format!("\\data\\: malformed count line '{line}'")))?;
        let order: usize = order
            .trim()
            .parse()
            .map_err(|_| err(n, format!("\\data\\: bad order in '{line}'")))?;
        let count: usize = count
            .trim()
            .parse()
            .map_err(|_| err(n, format!("\\data\\: bad count in '{line}'")))?;
        if order != counts.len() + 1 {
            return Err(err(n, format!("\\data\\: orders must be contiguous from 1, found ngram {order}")));
        }
        counts.push(count);
    }
    if counts.is_empty() {
        return Err(err(last_line, "\\data\\: no ngram counts declared".into()));
    }

    let mut file = ArpaFile::default();
    let mut expected_order = 1;
    let mut header = pending;
    loop {
        let (n, line) = match header.take() {
            Some(h) => h,
            None => match lines.by_ref().find(|(_, l)| !l.is_empty()) {
                Some(h) => h,
                None => return Err(err(last_line, "missing \\end\\ marker".into())),
            },
        };
        last_line = n;
        if line == "\\end\\" {
            break;
        }
        let order: usize = line
            .strip_prefix('\\')
            .and_then(|l| l.strip_suffix("-grams:"))
            .and_then(|o| o.parse().ok())
            .ok_or_else(|| err(n, format!("expected '\\{expected_order}-grams:', found '{line}'")))?;
        if order != expected_order || order > counts.len() {
            return Err(err(n, format!("\\{order}-grams: section out of order (expected {expected_order})")));
        }
        let section_name = format!("\\{order}-grams:");
        let mut entries = Vec::with_capacity(counts[order - 1]);
        for (n, line) in lines.by_ref() {
            last_line = n;
            if line.is_empty() {
                break;
            }
            if line.starts_with('\\') {
                header = Some((n, line));
                break;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != order + 1 && fields.len() != order + 2 {
                return Err(err(n, format!("{section_name} expected {} or {} fields, found {}", order + 1, order + 2, fields.len())));
            }
            let log10_prob: f64 = fields[0]
                .parse()
                .map_err(|_| err(n, format!("{section_name} bad log-probability '{}'", fields[0])))?;
            let log10_backoff = match fields.get(order + 1) {
                Some(b) => Some(b.parse().map_err(|_| err(n, format!("{section_name} bad backoff '{b}'")))?),
                None => None,
            };
            entries.push(ArpaEntry {
                words: fields[1..=order].iter().map(|w| w.to_string()).collect(),
                log10_prob,
                log10_backoff,
            });
        }
        if entries.len() != counts[order - 1] {
            return Err(err(
                last_line,
                format!(
                    "{section_name} declares {} entries in \\data\\ but contains {}",
                    counts[order - 1],
                    entries.len()
                ),
            ));
        }
        file.sections.push(entries);
        expected_order += 1;
    }
    if file.sections.len() != counts.len() {
        return Err(err(
            last_line,
            format!("\\data\\ declares {} orders but {} sections were found", counts.len(), file.sections.len()),
        ));
    }
    Ok(file)
}

/// Renders entries back to ARPA text (log10 values, tab separated).
pub fn write_arpa_text(file: &ArpaFile) -> String {
    let mut out = String::from("\\data\\\n");
    for (i, s) in file.sections.iter().enumerate() {
        out.push_str(&format!("ngram {}={}\n", i + 1, s.len()));
    }
    for (i, s) in file.sections.iter().enumerate() {
        out.push_str(&format!("\n\\{}-grams:\n", i + 1));
        for e in s {
            out.push_str(&format!("{}\t{}", e.log10_prob, e.words.join(" ")));
            if let Some(b) = e.log10_backoff {
                out.push_str(&format!("\t{b}"));
            }
            out.push('\n');
        }
    }
    out.push_str("\n\\end\\\n");
    out
}

/// Word lookup used while building the trie.
pub(crate) fn word_table(tokens: &[String]) -> HashMap<&str, u32> {
    tokens.iter().enumerate().map(|(i, t)| (t.as_str(), i as u32)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "\\data\\\nngram 1=3\nngram 2=1\n\n\\1-grams:\n-0.5\ta\t-0.2\n-0.3\tb\n-1\t</s>\n\n\\2-grams:\n-0.1\ta b\n\n\\end\\\n";

    #[test]
    fn parses_sections() {
        let f = parse_arpa_text(SMALL, "small").unwrap();
        assert_eq!(f.order(), 2);
        assert_eq!(f.sections[0][0].log10_backoff, Some(-0.2));
        assert_eq!(f.sections[0][1].log10_backoff, None);
        assert_eq!(f.sections[1][0].words, vec!["a", "b"]);
        let again = parse_arpa_text(&write_arpa_text(&f), "rt").unwrap();
        assert_eq!(again.sections[1], f.sections[1]);
    }

    #[test]
    fn count_mismatch_names_section() {
        let bad = SMALL.replace("ngram 2=1", "ngram 2=2");
        let e = parse_arpa_text(&bad, "bad").unwrap_err().to_string();
        assert!(e.contains("\\2-grams:"), "{e}");
    }

    #[test]
    fn malformed_inputs() {
        assert!(parse_arpa_text("hello", "x").is_err());
        let no_end = SMALL.replace("\\end\\", "");
        assert!(parse_arpa_text(&no_end, "x").is_err());
        let bad_prob = SMALL.replace("-0.3\tb", "zz\tb");
        let e = parse_arpa_text(&bad_prob, "x").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 7, .. }), "{e:?}");
        let gap = SMALL.replace("ngram 2=1", "ngram 3=1");
        assert!(parse_arpa_text(&gap, "x").is_err());
    }
}
