//! Line-oriented corpus files.
//!
//! Sentences: `<tag>\t<local ids separated by spaces>`, one per line.
//! Parallel corpora are two sentence files sharing line indices plus an
//! alignment file with `i-j` links (target position `i`, source position `j`).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Link, Sentence, Vocabulary};
use crate::error::{Error, Result};

pub fn format_sentences(sentences: &[Sentence], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&vocab.tags[s.lang]);
        out.push('\t');
        let toks: Vec<String> = s.tokens.iter().map(|t| t.to_string()).collect();
        out.push_str(&toks.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_sentences(text: &str, vocab: &Vocabulary, origin: &str) -> Result<Vec<Sentence>> {
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            let bad = |msg: &str| Error::Data(format!("{origin}:{}: {msg}", n + 1));
            let (tag, body) = line.split_once('\t').ok_or_else(|| bad("missing language tag"))?;
            let lang = vocab
                .lang_index(tag)
                .ok_or_else(|| bad(&format!("unknown language `{tag}`")))?;
            let tokens = body
                .split_whitespace()
                .map(|t| match t.parse::<usize>() {
                    Ok(v) if v < vocab.concepts => Ok(v),
                    _ => Err(bad(&format!("bad token `{t}`"))),
                })
                .collect::<Result<Vec<_>>>()?;
            if tokens.is_empty() {
                return Err(bad("empty sentence"));
            }
            Ok(Sentence { lang, tokens })
        })
        .collect()
}

pub fn format_alignments(alignments: &[Vec<Link>]) -> String {
    let mut out = String::new();
    for links in alignments {
        let parts: Vec<String> = links.iter().map(|(i, j)| format!("{i}-{j}")).collect();
        out.push_str(&parts.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_alignments(text: &str, origin: &str) -> Result<Vec<Vec<Link>>> {
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            line.split_whitespace()
                .map(|l| {
                    let (i, j) = l
                        .split_once('-')
                        .and_then(|(i, j)| Some((i.parse().ok()?, j.parse().ok()?)))
                        .ok_or_else(|| Error::Data(format!("{origin}:{}: bad link `{l}`", n + 1)))?;
                    Ok((i, j))
                })
                .collect()
        })
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Data(format!("missing file {}", path.display()))
        } else {
            Error::io(path, e)
        }
    })
}

pub fn read_sentences(path: &Path, vocab: &Vocabulary) -> Result<Vec<Sentence>> {
    parse_sentences(&read_text(path)?, vocab, &path.display().to_string())
}

pub fn read_alignments(path: &Path) -> Result<Vec<Vec<Link>>> {
    parse_alignments(&read_text(path)?, &path.display().to_string())
}

/// Tab-separated rows with a header line.
pub fn format_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join("\t");
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.join("\t"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab() -> Vocabulary {
        Vocabulary::new(16, vec!["l0".into(), "l1".into()])
    }

    #[test]
    fn sentence_lines() {
        let s = vec![
            Sentence { lang: 1, tokens: vec![3, 0, 15] },
            Sentence { lang: 0, tokens: vec![7] },
        ];
        let text = format_sentences(&s, &vocab());
        assert_eq!(text, "l1\t3 0 15\nl0\t7\n");
        assert_eq!(parse_sentences(&text, &vocab(), "t").unwrap(), s);
    }

    #[test]
    fn malformed_lines_name_the_line() {
        let err = parse_sentences("l0\t1 2\nl9\t3\n", &vocab(), "f.txt").unwrap_err();
        assert!(err.to_string().contains("f.txt:2"), "{err}");
        assert!(parse_sentences("l0\t1 99\n", &vocab(), "f").is_err());
        assert!(parse_alignments("0-1 x\n", "a").is_err());
    }

    proptest! {
        #[test]
        fn alignment_lines_roundtrip(links in proptest::collection::vec(
            proptest::collection::vec((0usize..30, 0usize..30), 0..10), 0..6)) {
            let text = format_alignments(&links);
            prop_assert_eq!(parse_alignments(&text, "p").unwrap(), links);
        }
    }
}
