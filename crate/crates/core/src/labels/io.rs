//! JSON-lines score and label files.
//!
//! Both start with a header line `{"vocabulary": [...]}`. Score lines are
//! `{"clip", "modality", "scores"}` where `scores` is either a full array in
//! vocabulary order or an object keyed by label name (missing names score 0).
//! Label lines are `{"clip", "kind", "provenance", "values"}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{LabelKind, LabelVector, Modality, Provenance, ScoreVector, Vocabulary};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreFile {
    pub vocabulary: Vocabulary,
    pub vectors: Vec<ScoreVector>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelFile {
    pub vocabulary: Vocabulary,
    pub labels: Vec<LabelVector>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    vocabulary: Vec<String>,
}

#[derive(Deserialize)]
struct RawScore {
    clip: String,
    modality: Modality,
    scores: Value,
}

#[derive(Serialize, Deserialize)]
struct RawLabel {
    clip: String,
    kind: LabelKind,
    provenance: Provenance,
    values: Vec<f64>,
}

#[derive(Serialize)]
struct OutScore<'a> {
    clip: &'a str,
    modality: Modality,
    scores: &'a [f64],
}

/// Non-empty lines with 1-based line numbers; the first is parsed as the header.
fn split_lines<'a>(text: &'a str, origin: &str) -> Result<Option<(Vocabulary, Vec<(usize, &'a str)>)>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let Some((hline, htext)) = lines.next() else {
        return Ok(None);
    };
    let err = |line, msg: String| Error::Parse { path: origin.to_string(), line, msg };
    let header: Header = serde_json::from_str(htext).map_err(|e| err(hline, format!("bad header: {e}")))?;
    let vocabulary = Vocabulary::new(header.vocabulary).map_err(|e| err(hline, e.to_string()))?;
    Ok(Some((vocabulary, lines.collect())))
}

fn score_values(raw: &Value, vocab: &Vocabulary) -> std::result::Result<Vec<f64>, String> {
    match raw {
        Value::Array(items) => items.iter().map(|v| v.as_f64().ok_or_else(|| format!("score {v} is not a number"))).collect(),
        Value::Object(map) => {
            let mut out = vec![0.0; vocab.len()];
            for (name, v) in map {
                let i = vocab.index_of(name).ok_or_else(|| format!("unknown label name {name:?}"))?;
                out[i] = v.as_f64().ok_or_else(|| format!("score for {name:?} is not a number"))?;
            }
            Ok(out)
        }
        other => Err(format!("scores must be an array or object, got {other}")),
    }
}

pub fn parse_scores(text: &str, origin: &str) -> Result<ScoreFile> {
    let Some((vocabulary, lines)) = split_lines(text, origin)? else {
        return Ok(ScoreFile::default());
    };
    let err = |line, msg: String| Error::Parse { path: origin.to_string(), line, msg };
    let mut vectors = Vec::with_capacity(lines.len());
    for (line, l) in lines {
        let raw: RawScore = serde_json::from_str(l).map_err(|e| err(line, e.to_string()))?;
        let scores = score_values(&raw.scores, &vocabulary).map_err(|m| err(line, m))?;
        let s = ScoreVector { clip: raw.clip, modality: raw.modality, scores };
        s.validate(vocabulary.len()).map_err(|e| err(line, e.to_string()))?;
        vectors.push(s);
    }
    Ok(ScoreFile { vocabulary, vectors })
}

pub fn read_scores(path: &Path) -> Result<ScoreFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores(&text, &path.display().to_string())
}

fn header_line(vocab: &Vocabulary) -> Result<String> {
    Ok(serde_json::to_string(&Header { vocabulary: vocab.names().to_vec() })?)
}

pub fn render_scores(file: &ScoreFile) -> Result<String> {
    let mut out = header_line(&file.vocabulary)? + "\n";
    for s in &file.vectors {
        out += &serde_json::to_string(&OutScore { clip: &s.clip, modality: s.modality, scores: &s.scores })?;
        out.push('\n');
    }
    Ok(out)
}

pub fn write_scores(path: &Path, file: &ScoreFile) -> Result<()> {
    fs::write(path, render_scores(file)?).map_err(|e| Error::io(path, e))
}

pub fn parse_labels(text: &str, origin: &str) -> Result<LabelFile> {
    let Some((vocabulary, lines)) = split_lines(text, origin)? else {
        return Ok(LabelFile::default());
    };
    let err = |line, msg: String| Error::Parse { path: origin.to_string(), line, msg };
    let mut labels = Vec::with_capacity(lines.len());
    for (line, l) in lines {
        let raw: RawLabel = serde_json::from_str(l).map_err(|e| err(line, e.to_string()))?;
        if raw.values.len() != vocabulary.len() {
            return Err(err(line, format!("expected {} values, got {}", vocabulary.len(), raw.values.len())));
        }
        let lv = LabelVector { clip: raw.clip, kind: raw.kind, provenance: raw.provenance, values: raw.values };
        lv.validate().map_err(|e| err(line, e.to_string()))?;
        labels.push(lv);
    }
    Ok(LabelFile { vocabulary, labels })
}

pub fn read_labels(path: &Path) -> Result<LabelFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, &path.display().to_string())
}

pub fn render_labels(file: &LabelFile) -> Result<String> {
    let mut out = header_line(&file.vocabulary)? + "\n";
    for l in &file.labels {
        let raw = RawLabel { clip: l.clip.clone(), kind: l.kind, provenance: l.provenance, values: l.values.clone() };
        out += &serde_json::to_string(&raw)?;
        out.push('\n');
    }
    Ok(out)
}

pub fn write_labels(path: &Path, file: &LabelFile) -> Result<()> {
    fs::write(path, render_labels(file)?).map_err(|e| Error::io(path, e))
}

/// Label counts per name, for summaries.
pub fn label_histogram(file: &LabelFile) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for l in &file.labels {
        for i in l.active() {
            *out.entry(file.vocabulary.names()[i].clone()).or_insert(0) += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = r#"{"vocabulary":["dog","flute","car"]}"#;

    #[test]
    fn empty_file_is_empty() {
        assert!(parse_scores("", "x").unwrap().vectors.is_empty());
        assert!(parse_labels("\n\n", "x").unwrap().labels.is_empty());
    }

    #[test]
    fn array_and_object_forms() {
        let text = format!(
            "{HEADER}\n{}\n{}\n",
            r#"{"clip":"a","modality":"visual","scores":[0.1,0.9,0.0]}"#,
            r#"{"clip":"a","modality":"audio","scores":{"flute":-0.2}}"#
        );
        let f = parse_scores(&text, "s.jsonl").unwrap();
        assert_eq!(f.vectors[1].scores, vec![0.0, -0.2, 0.0]);
        assert_eq!(parse_scores(&render_scores(&f).unwrap(), "again").unwrap(), f);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let unknown = format!("{HEADER}\n\n{}\n", r#"{"clip":"a","modality":"audio","scores":{"cat":0.5}}"#);
        match parse_scores(&unknown, "s.jsonl") {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("cat"));
            }
            other => panic!("{other:?}"),
        }
        let short = format!("{HEADER}\n{}\n", r#"{"clip":"a","modality":"visual","scores":[0.5]}"#);
        assert!(matches!(parse_scores(&short, "s"), Err(Error::Parse { line: 2, .. })));
        let range = format!("{HEADER}\n{}\n", r#"{"clip":"a","modality":"visual","scores":[0.5,1.5,0]}"#);
        assert!(matches!(parse_scores(&range, "s"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_scores("not json", "s"), Err(Error::Parse { line: 1, .. })));
        let bad = format!("{HEADER}\n{}\n", r#"{"clip":"a","kind":"hard","provenance":"or","values":[0.5,0,1]}"#);
        assert!(matches!(parse_labels(&bad, "l"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn label_round_trip_and_histogram() {
        let f = LabelFile {
            vocabulary: Vocabulary::new(vec!["dog".into(), "car".into()]).unwrap(),
            labels: vec![LabelVector { clip: "a".into(), kind: LabelKind::Hard, provenance: Provenance::Or, values: vec![1.0, 0.0] }],
        };
        let back = parse_labels(&render_labels(&f).unwrap(), "l").unwrap();
        assert_eq!(back, f);
        assert_eq!(label_histogram(&back).get("dog"), Some(&1));
    }
}
