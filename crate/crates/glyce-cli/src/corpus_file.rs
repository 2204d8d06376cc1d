//! Line-delimited corpus files.
//!
//! Comment headers carry provenance and the split indices; every other
//! line is one item, char ids space-separated and gold tab-separated:
//!
//! ```text
//! # task=tagging
//! # seed=7
//! # families=4
//! # tag=tagging/seed7/n2000
//! # scheme=bmes
//! # train=0 3 4 ...
//! # dev=1 ...
//! # test=2 ...
//! 17 4 4 9<TAB>B E B E
//! ```
//!
//! Tagging gold is one label name per character (`scheme` says which
//! alphabet); classification gold is a class id; pair items hold two
//! char groups and then the label, three tab-separated fields in all.
//! A tagging file written here always names its scheme, so a reader
//! cannot silently decode labels against the wrong alphabet.

use std::fmt::Write as _;
use std::path::Path;

use glyce_core::metrics::Scheme;
use glyce_core::synth::{CorpusItem, LabeledCorpus, TaskKind};

use crate::error::{read_text, write_bytes, CliError, CliResult};
use crate::runconfig::{parse_scheme, scheme_name};

fn ids_to_line(ids: &[u32]) -> String {
    let mut out = String::new();
    for (i, id) in ids.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{id}");
    }
    out
}

/// Renders a corpus to text. Tagging corpora must say which label
/// scheme their names come from.
pub fn encode_corpus(corpus: &LabeledCorpus, scheme: Option<Scheme>) -> CliResult<String> {
    let mut out = String::new();
    let _ = writeln!(out, "# task={}", corpus.task.name());
    let _ = writeln!(out, "# seed={}", corpus.seed);
    let _ = writeln!(out, "# families={}", corpus.n_families);
    let _ = writeln!(out, "# tag={}", corpus.dataset_tag);
    if corpus.task == TaskKind::Tagging {
        let scheme = scheme.ok_or_else(|| {
            CliError::Usage(String::from("a tagging corpus file needs a label scheme"))
        })?;
        let _ = writeln!(out, "# scheme={}", scheme_name(scheme));
    }
    for (name, split) in [
        ("train", &corpus.train),
        ("dev", &corpus.dev),
        ("test", &corpus.test),
    ] {
        let idx: Vec<u32> = split.iter().map(|&i| i as u32).collect();
        let _ = writeln!(out, "# {name}={}", ids_to_line(&idx));
    }
    for (i, item) in corpus.items.iter().enumerate() {
        let gold_err = |what: &str| {
            CliError::Usage(format!("item {i} carries no {what} for a {} corpus", corpus.task.name()))
        };
        let _ = write!(out, "{}", ids_to_line(&item.chars));
        match corpus.task {
            TaskKind::Tagging => {
                let tags = item.tags.as_ref().ok_or_else(|| gold_err("tags"))?;
                let scheme = scheme.expect("checked above");
                out.push('\t');
                for (j, &t) in tags.iter().enumerate() {
                    if j > 0 {
                        out.push(' ');
                    }
                    out.push_str(&scheme.label_name(t)?);
                }
            }
            TaskKind::Classification => {
                let class = item.class.ok_or_else(|| gold_err("class"))?;
                let _ = write!(out, "\t{class}");
            }
            TaskKind::Pair => {
                let s2 = item.chars2.as_ref().ok_or_else(|| gold_err("second sentence"))?;
                let class = item.class.ok_or_else(|| gold_err("label"))?;
                let _ = write!(out, "\t{}\t{class}", ids_to_line(s2));
            }
        }
        out.push('\n');
    }
    Ok(out)
}

struct LineErr {
    line: usize,
    message: String,
}

impl LineErr {
    fn new(line: usize, message: impl Into<String>) -> LineErr {
        LineErr { line, message: message.into() }
    }

    /// Line 0 marks whole-file problems with no line to point at.
    fn text(self) -> String {
        if self.line == 0 {
            self.message
        } else {
            format!("line {}: {}", self.line, self.message)
        }
    }
}

fn parse_ids(field: &str, line: usize, what: &str) -> Result<Vec<u32>, LineErr> {
    if field.trim().is_empty() {
        return Ok(Vec::new());
    }
    field
        .split_whitespace()
        .map(|tok| {
            tok.parse::<u32>()
                .map_err(|_| LineErr::new(line, format!("{what} '{tok}' is not an unsigned integer")))
        })
        .collect()
}

/// Parses corpus text back into a [`LabeledCorpus`] and, for tagging,
/// the label scheme the file declared.
pub fn decode_corpus(text: &str) -> Result<(LabeledCorpus, Option<Scheme>), String> {
    decode_inner(text).map_err(LineErr::text)
}

fn decode_inner(text: &str) -> Result<(LabeledCorpus, Option<Scheme>), LineErr> {
    let mut task = None;
    let mut seed = None;
    let mut families = None;
    let mut tag = None;
    let mut scheme = None;
    let mut splits: [Option<Vec<usize>>; 3] = [None, None, None];
    let mut items = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let (key, value) = rest
                .trim()
                .split_once('=')
                .ok_or_else(|| LineErr::new(n, format!("header '{}' is not key=value", rest.trim())))?;
            let value = value.trim();
            match key.trim() {
                "task" => {
                    task = Some(TaskKind::parse(value).map_err(|e| LineErr::new(n, e.to_string()))?)
                }
                "seed" => {
                    seed = Some(value.parse::<u64>().map_err(|_| {
                        LineErr::new(n, format!("seed '{value}' is not an unsigned integer"))
                    })?)
                }
                "families" => {
                    families = Some(value.parse::<usize>().map_err(|_| {
                        LineErr::new(n, format!("families '{value}' is not an unsigned integer"))
                    })?)
                }
                "tag" => tag = Some(value.to_string()),
                "scheme" => {
                    scheme = Some(parse_scheme(value).map_err(|e| LineErr::new(n, e))?)
                }
                "train" | "dev" | "test" => {
                    let slot = match key.trim() {
                        "train" => 0,
                        "dev" => 1,
                        _ => 2,
                    };
                    let ids = parse_ids(value, n, "split index")?;
                    splits[slot] = Some(ids.into_iter().map(|x| x as usize).collect());
                }
                other => return Err(LineErr::new(n, format!("unknown header key '{other}'"))),
            }
            continue;
        }

        let task = task.ok_or_else(|| LineErr::new(n, "item before the '# task=' header"))?;
        let fields: Vec<&str> = line.split('\t').collect();
        let want = if task == TaskKind::Pair { 3 } else { 2 };
        if fields.len() != want {
            return Err(LineErr::new(
                n,
                format!("expected {want} tab-separated fields, found {}", fields.len()),
            ));
        }
        let chars = parse_ids(fields[0], n, "char id")?;
        if chars.is_empty() {
            return Err(LineErr::new(n, "empty character sequence"));
        }
        let item = match task {
            TaskKind::Tagging => {
                let scheme =
                    scheme.ok_or_else(|| LineErr::new(n, "tagging item before the '# scheme=' header"))?;
                let tags = fields[1]
                    .split_whitespace()
                    .map(|name| scheme.parse_label(name).map_err(|e| LineErr::new(n, e.to_string())))
                    .collect::<Result<Vec<usize>, LineErr>>()?;
                if tags.len() != chars.len() {
                    return Err(LineErr::new(
                        n,
                        format!("{} chars but {} labels", chars.len(), tags.len()),
                    ));
                }
                CorpusItem { chars, chars2: None, tags: Some(tags), class: None }
            }
            TaskKind::Classification => {
                let class = fields[1].trim().parse::<usize>().map_err(|_| {
                    LineErr::new(n, format!("class '{}' is not an unsigned integer", fields[1]))
                })?;
                CorpusItem { chars, chars2: None, tags: None, class: Some(class) }
            }
            TaskKind::Pair => {
                let chars2 = parse_ids(fields[1], n, "char id")?;
                if chars2.is_empty() {
                    return Err(LineErr::new(n, "empty second sentence"));
                }
                let class = fields[2].trim().parse::<usize>().map_err(|_| {
                    LineErr::new(n, format!("label '{}' is not an unsigned integer", fields[2]))
                })?;
                CorpusItem { chars, chars2: Some(chars2), tags: None, class: Some(class) }
            }
        };
        items.push(item);
    }

    let missing = |what: &str| LineErr::new(0, format!("missing '# {what}=' header"));
    let task = task.ok_or_else(|| missing("task"))?;
    let corpus = LabeledCorpus {
        task,
        items,
        train: splits[0].take().ok_or_else(|| missing("train"))?,
        dev: splits[1].take().ok_or_else(|| missing("dev"))?,
        test: splits[2].take().ok_or_else(|| missing("test"))?,
        seed: seed.ok_or_else(|| missing("seed"))?,
        n_families: families.ok_or_else(|| missing("families"))?,
        dataset_tag: tag.ok_or_else(|| missing("tag"))?,
    };

    let mut seen = vec![false; corpus.items.len()];
    for &i in corpus.train.iter().chain(&corpus.dev).chain(&corpus.test) {
        if i >= corpus.items.len() {
            return Err(LineErr::new(0, format!("split index {i} beyond {} items", corpus.items.len())));
        }
        if seen[i] {
            return Err(LineErr::new(0, format!("item {i} appears in two splits")));
        }
        seen[i] = true;
    }
    let out_scheme = if task == TaskKind::Tagging { scheme } else { None };
    Ok((corpus, out_scheme))
}

pub fn save_corpus(corpus: &LabeledCorpus, scheme: Option<Scheme>, path: &Path) -> CliResult<()> {
    write_bytes(path, encode_corpus(corpus, scheme)?.as_bytes())
}

pub fn load_corpus(path: &Path) -> CliResult<(LabeledCorpus, Option<Scheme>)> {
    decode_corpus(&read_text(path)?).map_err(|m| CliError::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use glyce_core::atlas::GlyphAtlas;
    use glyce_core::synth::{gen_classification_corpus, gen_pair_corpus, gen_tagging_corpus};

    fn atlas() -> GlyphAtlas {
        GlyphAtlas::generate(40, 2, 12, 3).unwrap()
    }

    #[test]
    fn tagging_roundtrip_is_exact() {
        let corpus = gen_tagging_corpus(&atlas(), 30, 5).unwrap();
        let text = encode_corpus(&corpus, Some(Scheme::Bmes)).unwrap();
        let (back, scheme) = decode_corpus(&text).unwrap();
        assert_eq!(corpus, back);
        assert_eq!(scheme, Some(Scheme::Bmes));
    }

    #[test]
    fn classification_roundtrip_is_exact() {
        let corpus = gen_classification_corpus(&atlas(), 30, 3, 5).unwrap();
        let text = encode_corpus(&corpus, None).unwrap();
        let (back, scheme) = decode_corpus(&text).unwrap();
        assert_eq!(corpus, back);
        assert_eq!(scheme, None);
    }

    #[test]
    fn pair_roundtrip_is_exact() {
        let corpus = gen_pair_corpus(&atlas(), 30, 5).unwrap();
        let text = encode_corpus(&corpus, None).unwrap();
        let (back, _) = decode_corpus(&text).unwrap();
        assert_eq!(corpus, back);
    }

    #[test]
    fn tagging_line_shape_is_readable() {
        let corpus = gen_tagging_corpus(&atlas(), 12, 5).unwrap();
        let text = encode_corpus(&corpus, Some(Scheme::Bmes)).unwrap();
        let first_item = text.lines().find(|l| !l.starts_with('#')).unwrap();
        let (chars, gold) = first_item.split_once('\t').unwrap();
        assert_eq!(chars.split(' ').count(), gold.split(' ').count());
        assert!(gold.split(' ').all(|g| ["B", "M", "E", "S"].contains(&g)));
    }

    #[test]
    fn label_and_char_count_mismatch_is_rejected_with_line_number() {
        let corpus = gen_tagging_corpus(&atlas(), 12, 5).unwrap();
        let text = encode_corpus(&corpus, Some(Scheme::Bmes)).unwrap();
        let mangled: String = text
            .lines()
            .map(|l| {
                if l.starts_with('#') {
                    l.to_string() + "\n"
                } else {
                    format!("{l} S\n")
                }
            })
            .collect();
        let err = decode_corpus(&mangled).unwrap_err();
        assert!(err.contains("labels"), "{err}");
        assert!(err.starts_with("line "), "{err}");
    }

    #[test]
    fn unknown_label_name_is_rejected() {
        let text = "# task=tagging\n# seed=0\n# families=4\n# tag=x\n# scheme=bmes\n\
                    # train=0\n# dev=\n# test=\n1 2\tB Q\n";
        let err = decode_corpus(text).unwrap_err();
        assert!(err.contains("\"Q\""), "{err}");
    }

    #[test]
    fn overlapping_splits_are_rejected() {
        let text = "# task=classification\n# seed=0\n# families=2\n# tag=x\n\
                    # train=0\n# dev=0\n# test=\n1 2\t0\n";
        let err = decode_corpus(text).unwrap_err();
        assert!(err.contains("two splits"), "{err}");
    }

    #[test]
    fn split_index_beyond_items_is_rejected() {
        let text = "# task=classification\n# seed=0\n# families=2\n# tag=x\n\
                    # train=0\n# dev=5\n# test=\n1 2\t0\n";
        let err = decode_corpus(text).unwrap_err();
        assert!(err.contains("beyond"), "{err}");
    }

    #[test]
    fn missing_header_is_rejected() {
        let text = "# task=pair\n# seed=0\n# families=4\n# train=\n# dev=\n# test=\n";
        let err = decode_corpus(text).unwrap_err();
        assert!(err.contains("missing '# tag='"), "{err}");
    }

    #[test]
    fn pair_needs_three_fields() {
        let text = "# task=pair\n# seed=0\n# families=4\n# tag=x\n# train=0\n# dev=\n# test=\n1 2\t0\n";
        let err = decode_corpus(text).unwrap_err();
        assert!(err.contains("expected 3 tab-separated fields, found 2"), "{err}");
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.corpus");
        let corpus = gen_tagging_corpus(&atlas(), 20, 9).unwrap();
        save_corpus(&corpus, Some(Scheme::Bmes), &path).unwrap();
        let (back, _) = load_corpus(&path).unwrap();
        assert_eq!(corpus, back);
    }
}
