//! Column-format (CoNLL-style) and delimited classification files.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::{ClassificationExample, TagSet, TaggedCorpus, TaggedExample};
use crate::error::{DalError, Result};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| DalError::io(path, e))
}

/// Parses column-format text: one token per line, whitespace-separated
/// columns, token first and tag last, blank lines between sentences.
pub fn parse_column_format(text: &str, origin: &str) -> Result<TaggedCorpus> {
    let mut sentences: Vec<(Vec<String>, Vec<String>)> = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            if !tokens.is_empty() {
                sentences.push((std::mem::take(&mut tokens), std::mem::take(&mut tags)));
            }
            continue;
        }
        if cols.len() < 2 {
            return Err(DalError::Parse {
                path: origin.to_owned(),
                line: lineno + 1,
                message: format!("expected at least 2 columns, found {}", cols.len()),
            });
        }
        tokens.push(cols[0].to_owned());
        tags.push(cols[cols.len() - 1].to_owned());
    }
    if !tokens.is_empty() {
        sentences.push((tokens, tags));
    }
    let tagset = TagSet::from_tags(sentences.iter().flat_map(|(_, t)| t.iter().map(String::as_str)));
    let examples = sentences
        .into_iter()
        .enumerate()
        .map(|(id, (tokens, tags))| {
            let tags = tags.iter().map(|t| tagset.index(t).expect("tag set built from these tags")).collect();
            TaggedExample { id, tokens, tags }
        })
        .collect();
    Ok(TaggedCorpus { examples, tags: tagset })
}

pub fn load_column_format(path: impl AsRef<Path>) -> Result<TaggedCorpus> {
    let path = path.as_ref();
    parse_column_format(&read(path)?, &path.display().to_string())
}

/// Renders a corpus as two-column `token tag` lines with a blank line after
/// every sentence.
pub fn format_column(corpus: &TaggedCorpus) -> String {
    let mut out = String::new();
    for ex in &corpus.examples {
        for (tok, &tag) in ex.tokens.iter().zip(&ex.tags) {
            out.push_str(tok);
            out.push(' ');
            out.push_str(corpus.tags.name(tag));
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

pub fn write_column_format(path: impl AsRef<Path>, corpus: &TaggedCorpus) -> Result<()> {
    write_file(path.as_ref(), &format_column(corpus))
}

#[derive(Debug, Clone, Copy)]
pub struct DelimitedOptions {
    pub delimiter: char,
    pub lowercase: bool,
}

impl Default for DelimitedOptions {
    fn default() -> Self {
        Self { delimiter: '\t', lowercase: false }
    }
}

/// Parses `label<delimiter>text` lines; text is whitespace-tokenised.
pub fn parse_delimited_classification(text: &str, opts: DelimitedOptions, origin: &str) -> Result<Vec<ClassificationExample>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| DalError::Parse { path: origin.to_owned(), line: lineno + 1, message };
        let (label, body) = line
            .split_once(opts.delimiter)
            .ok_or_else(|| err(format!("missing delimiter {:?}", opts.delimiter)))?;
        let label: usize = label.trim().parse().map_err(|_| err(format!("label `{label}` is not a class index")))?;
        let tokens: Vec<String> = body
            .split_whitespace()
            .map(|t| if opts.lowercase { t.to_lowercase() } else { t.to_owned() })
            .collect();
        if tokens.is_empty() {
            return Err(err("empty text".into()));
        }
        out.push(ClassificationExample { id: out.len(), tokens, label });
    }
    Ok(out)
}

pub fn load_delimited_classification(path: impl AsRef<Path>, opts: DelimitedOptions) -> Result<Vec<ClassificationExample>> {
    let path = path.as_ref();
    parse_delimited_classification(&read(path)?, opts, &path.display().to_string())
}

pub fn format_delimited(examples: &[ClassificationExample], delimiter: char) -> String {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&ex.label.to_string());
        out.push(delimiter);
        out.push_str(&ex.tokens.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_delimited_classification(path: impl AsRef<Path>, examples: &[ClassificationExample], delimiter: char) -> Result<()> {
    write_file(path.as_ref(), &format_delimited(examples, delimiter))
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| DalError::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| DalError::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| DalError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_sentences() {
        let c = parse_column_format("a O\nb B-PER\nc I-PER\n\nd O\ne O\n", "x").unwrap();
        assert_eq!(c.examples.len(), 2);
        assert_eq!(c.examples[0].tokens.len(), 3);
        assert_eq!(c.examples[1].tokens.len(), 2);
        assert_eq!(c.examples[1].id, 1);
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        assert!(parse_column_format("", "x").unwrap().examples.is_empty());
    }

    #[test]
    fn middle_columns_are_ignored_and_trailing_sentence_kept() {
        let c = parse_column_format("EU NNP B-NP B-ORG\nrejects VBZ B-VP O", "x").unwrap();
        assert_eq!(c.examples.len(), 1);
        assert_eq!(c.tags.name(c.examples[0].tags[0]), "B-ORG");
    }

    #[test]
    fn single_column_line_reports_line_number() {
        let err = parse_column_format("a O\nlonely\n", "f.conll").unwrap_err().to_string();
        assert!(err.contains("f.conll:2"), "{err}");
    }

    #[test]
    fn bio_fixture_round_trips_through_writer() {
        let c = parse_column_format("John B-PER\nSmith I-PER\nsaid O\n", "x").unwrap();
        let names: Vec<&str> = c.examples[0].tags.iter().map(|&t| c.tags.name(t)).collect();
        assert_eq!(names, ["B-PER", "I-PER", "O"]);
        let again = parse_column_format(&format_column(&c), "y").unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn delimited_basics() {
        let ex = parse_delimited_classification("1\tgood movie\n", DelimitedOptions::default(), "x").unwrap();
        assert_eq!(ex[0].label, 1);
        assert_eq!(ex[0].tokens, ["good", "movie"]);
        let lower = DelimitedOptions { lowercase: true, ..Default::default() };
        let ex = parse_delimited_classification("0\tGood", lower, "x").unwrap();
        assert_eq!(ex[0].tokens, ["good"]);
    }

    #[test]
    fn delimited_missing_delimiter() {
        let err = parse_delimited_classification("0\tok\nno delimiter here\n", DelimitedOptions::default(), "d.tsv")
            .unwrap_err()
            .to_string();
        assert!(err.contains("d.tsv:2"), "{err}");
    }

    #[test]
    fn delimited_round_trip() {
        let ex = parse_delimited_classification("2\ta b c\n0\td\n", DelimitedOptions::default(), "x").unwrap();
        let again = parse_delimited_classification(&format_delimited(&ex, '\t'), DelimitedOptions::default(), "y").unwrap();
        assert_eq!(ex, again);
    }
}
