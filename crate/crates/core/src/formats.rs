//! JSONL and CoNLL-2012 readers and writers.
//!
//! JSONL is the canonical format: one document per line with
//! `doc_id`, `tokens`, `characters`, and `clusters`, where `clusters` maps a
//! character name to a list of `[start, end]` pairs (0-based, end-inclusive).
//! Keys the reader does not know are carried through untouched.
//!
//! The writer is canonical rather than echoing input bytes: compact JSON,
//! known keys first (`doc_id`, `tokens`, `characters`, `source`, `clusters`),
//! unknown keys after in their original order, clusters in character-list
//! order, mentions sorted. `write(read(write(c))) == write(c)` holds byte for
//! byte.
//!
//! CoNLL output carries no character names; clusters are re-keyed to integer
//! ids in order of their first mention and read back as anonymous keys.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::model::{ClusterKey, ClusterSet, Document, Mention, SourceInfo, Stage};

/// One document with its cluster set and any extra keys from the input line.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub document: Document,
    pub clusters: ClusterSet,
    pub extra: Map<String, Value>,
}

impl Entry {
    pub fn new(document: Document, clusters: ClusterSet) -> Self {
        Self {
            document,
            clusters,
            extra: Map::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusFile {
    pub entries: Vec<Entry>,
}

impl CorpusFile {
    pub fn new(entries: Vec<Entry>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.document.doc_id == doc_id)
    }

    pub fn with_stage(mut self, stage: Stage) -> Self {
        for e in &mut self.entries {
            e.clusters.stage = stage;
        }
        self
    }
}

/// Which on-disk format a path uses, judged by extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Conll,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Ok(Format::Jsonl),
            Some("conll") | Some("gold_conll") | Some("txt") => Ok(Format::Conll),
            _ => Err(Error::Config(format!(
                "cannot infer format of {}; use .jsonl or .conll",
                path.display()
            ))),
        }
    }
}

pub fn read_path(path: &Path, stage: Stage) -> Result<CorpusFile> {
    match Format::from_path(path)? {
        Format::Jsonl => read_jsonl(path, stage),
        Format::Conll => read_conll(path, stage),
    }
}

pub fn write_path(corpus: &CorpusFile, path: &Path) -> Result<()> {
    match Format::from_path(path)? {
        Format::Jsonl => write_jsonl(corpus, path),
        Format::Conll => write_conll(corpus, path),
    }
}

pub fn read_jsonl(path: &Path, stage: Stage) -> Result<CorpusFile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(BufReader::new(file), &path.display().to_string(), stage)
}

/// Parse JSONL from any reader; `label` names the source in errors.
pub fn parse_jsonl<R: BufRead>(reader: R, label: &str, stage: Stage) -> Result<CorpusFile> {
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(label, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: label.to_string(),
            line: lineno,
            message: e.to_string(),
        })?;
        entries.push(entry_from_value(value, stage, label, lineno)?);
    }
    Ok(CorpusFile { entries })
}

fn entry_from_value(value: Value, stage: Stage, label: &str, line: usize) -> Result<Entry> {
    let schema = |message: String| Error::Schema {
        path: label.to_string(),
        line,
        message,
    };
    let Value::Object(mut obj) = value else {
        return Err(schema("line is not a JSON object".into()));
    };

    let doc_id = match obj.shift_remove("doc_id") {
        Some(Value::String(s)) => s,
        Some(_) => return Err(schema("doc_id must be a string".into())),
        None => return Err(schema("missing required key doc_id".into())),
    };
    let tokens = string_array(obj.shift_remove("tokens"), "tokens").map_err(schema)?;
    let characters = string_array(obj.shift_remove("characters"), "characters").map_err(schema)?;
    let source = match obj.shift_remove("source") {
        None | Some(Value::Null) => None,
        Some(v) => Some(serde_json::from_value::<SourceInfo>(v).map_err(|e| schema(format!("source: {e}")))?),
    };
    let clusters = match obj.shift_remove("clusters") {
        Some(Value::Object(m)) => m,
        Some(_) => return Err(schema("clusters must be an object".into())),
        None => return Err(schema("missing required key clusters".into())),
    };

    let mut parsed = Vec::with_capacity(clusters.len());
    for (name, spans) in clusters {
        let Value::Array(spans) = spans else {
            return Err(schema(format!(
                "cluster {name:?} must be an array of [start,end] pairs"
            )));
        };
        let mut ms = Vec::with_capacity(spans.len());
        for span in spans {
            ms.push(
                parse_span(&span)
                    .ok_or_else(|| schema(format!("cluster {name:?}: malformed span {span}, expected [start,end]")))?,
            );
        }
        parsed.push((classify_key(&name, &characters), ms));
    }

    let document = Document {
        doc_id: doc_id.clone(),
        tokens,
        characters,
        source,
    };
    Ok(Entry {
        clusters: ClusterSet::from_raw(doc_id, stage, parsed),
        document,
        extra: obj,
    })
}

fn string_array(v: Option<Value>, key: &str) -> std::result::Result<Vec<String>, String> {
    match v {
        Some(Value::Array(items)) => items
            .into_iter()
            .map(|x| match x {
                Value::String(s) => Ok(s),
                other => Err(format!("{key} must contain only strings, found {other}")),
            })
            .collect(),
        Some(_) => Err(format!("{key} must be an array of strings")),
        None => Err(format!("missing required key {key}")),
    }
}

fn parse_span(v: &Value) -> Option<Mention> {
    let arr = v.as_array()?;
    if arr.len() != 2 {
        return None;
    }
    let s = arr[0].as_u64()? as usize;
    let e = arr[1].as_u64()? as usize;
    Some(Mention::new(s, e))
}

/// Listed names stay names; bare integers that are not listed become anonymous ids.
fn classify_key(name: &str, characters: &[String]) -> ClusterKey {
    if characters.iter().any(|c| c == name) {
        return ClusterKey::Name(name.to_string());
    }
    match name.parse::<u64>() {
        Ok(id) if !name.is_empty() && name.bytes().all(|b| b.is_ascii_digit()) => ClusterKey::Anon(id),
        _ => ClusterKey::Name(name.to_string()),
    }
}

/// Cluster keys in output order: listed characters first, then the rest.
fn ordered_keys<'a>(doc: &Document, cs: &'a ClusterSet) -> Vec<&'a ClusterKey> {
    let mut out: Vec<&ClusterKey> = Vec::with_capacity(cs.len());
    for c in &doc.characters {
        if let Some((k, _)) = cs.iter().find(|(k, _)| k.as_name() == Some(c.as_str())) {
            out.push(k);
        }
    }
    for k in cs.keys() {
        if !matches!(k.as_name(), Some(n) if doc.has_character(n)) {
            out.push(k);
        }
    }
    out
}

pub fn entry_to_value(entry: &Entry) -> Value {
    let doc = &entry.document;
    let mut obj = Map::new();
    obj.insert("doc_id".into(), Value::String(doc.doc_id.clone()));
    obj.insert("tokens".into(), Value::from(doc.tokens.clone()));
    obj.insert("characters".into(), Value::from(doc.characters.clone()));
    if let Some(src) = &doc.source {
        obj.insert("source".into(), serde_json::to_value(src).expect("source serializes"));
    }
    let mut clusters = Map::new();
    for key in ordered_keys(doc, &entry.clusters) {
        let spans: Vec<Value> = entry
            .clusters
            .get(key)
            .unwrap_or_default()
            .iter()
            .map(|m| Value::from(vec![m.start as u64, m.end as u64]))
            .collect();
        clusters.insert(key.to_string(), Value::Array(spans));
    }
    obj.insert("clusters".into(), Value::Object(clusters));
    for (k, v) in &entry.extra {
        obj.insert(k.clone(), v.clone());
    }
    Value::Object(obj)
}

pub fn to_jsonl_string(corpus: &CorpusFile) -> String {
    let mut out = String::new();
    for e in &corpus.entries {
        out.push_str(&entry_to_value(e).to_string());
        out.push('\n');
    }
    out
}

pub fn write_jsonl(corpus: &CorpusFile, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in &corpus.entries {
        serde_json::to_writer(&mut w, &entry_to_value(e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Coreference column values, one per token.
pub fn coref_column(n_tokens: usize, cs: &ClusterSet) -> Vec<String> {
    // Re-key by first mention.
    let mut clusters: Vec<&[Mention]> = cs.iter().map(|(_, ms)| ms).filter(|ms| !ms.is_empty()).collect();
    clusters.sort_by_key(|ms| ms[0]);

    let mut opens: Vec<Vec<(usize, u64)>> = vec![Vec::new(); n_tokens];
    let mut singles: Vec<Vec<u64>> = vec![Vec::new(); n_tokens];
    let mut closes: Vec<Vec<(usize, u64)>> = vec![Vec::new(); n_tokens];
    for (id, ms) in clusters.iter().enumerate() {
        let id = id as u64;
        let mut prev = None;
        for m in ms.iter() {
            if prev == Some(*m) {
                continue;
            }
            prev = Some(*m);
            if m.start == m.end {
                singles[m.start].push(id);
            } else {
                opens[m.start].push((m.end, id));
                closes[m.end].push((m.start, id));
            }
        }
    }

    (0..n_tokens)
        .map(|i| {
            let mut parts = Vec::new();
            // Outer spans open first and close last.
            opens[i].sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            closes[i].sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            singles[i].sort_unstable();
            parts.extend(opens[i].iter().map(|(_, id)| format!("({id}")));
            parts.extend(singles[i].iter().map(|id| format!("({id})")));
            parts.extend(closes[i].iter().map(|(_, id)| format!("{id})")));
            if parts.is_empty() {
                "-".to_string()
            } else {
                parts.join("|")
            }
        })
        .collect()
}

pub fn to_conll_string(corpus: &CorpusFile) -> Result<String> {
    let mut out = String::new();
    for e in &corpus.entries {
        let doc = &e.document;
        if doc.doc_id.chars().any(char::is_whitespace) {
            return Err(Error::Contract(format!(
                "doc_id {:?} contains whitespace and cannot be written as CoNLL",
                doc.doc_id
            )));
        }
        if let Some(t) = doc
            .tokens
            .iter()
            .find(|t| t.is_empty() || t.contains(['\t', '\n', '\r']))
        {
            return Err(Error::Contract(format!(
                "document {} has token {t:?} that cannot be written as a CoNLL column",
                doc.doc_id
            )));
        }
        out.push_str(&format!("#begin document ({}); part 000\n", doc.doc_id));
        for (i, (tok, coref)) in doc.tokens.iter().zip(coref_column(doc.len(), &e.clusters)).enumerate() {
            out.push_str(&format!("{}\t0\t{}\t{}\t{}\n", doc.doc_id, i, tok, coref));
        }
        out.push_str("\n#end document\n");
    }
    Ok(out)
}

pub fn write_conll(corpus: &CorpusFile, path: &Path) -> Result<()> {
    let text = to_conll_string(corpus)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_conll(path: &Path, stage: Stage) -> Result<CorpusFile> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    parse_conll(&text, &path.display().to_string(), stage)
}

struct OpenDoc {
    doc_id: String,
    tokens: Vec<String>,
    clusters: HashMap<u64, Vec<Mention>>,
    stacks: HashMap<u64, Vec<(usize, usize)>>,
}

impl OpenDoc {
    fn finish(self, label: &str, line: usize, stage: Stage) -> Result<Entry> {
        if let Some((id, (_, row))) = self
            .stacks
            .iter()
            .filter_map(|(id, st)| st.last().map(|x| (*id, *x)))
            .min_by_key(|(_, (_, row))| *row)
        {
            return Err(Error::Parse {
                path: label.into(),
                line: row,
                message: format!("unbalanced coreference bracket: cluster {id} opened here is never closed (document ends at line {line})"),
            });
        }
        let document = Document::new(self.doc_id.clone(), self.tokens, Vec::new());
        let clusters = ClusterSet::from_clusters(
            self.doc_id,
            stage,
            self.clusters.into_iter().map(|(id, ms)| (ClusterKey::Anon(id), ms)),
        );
        Ok(Entry::new(document, clusters))
    }
}

/// Parse CoNLL-2012 text. Token text is the fourth column, the coreference
/// annotation the last one; columns split on tabs, or on any whitespace
/// when a row has no tabs.
pub fn parse_conll(text: &str, label: &str, stage: Stage) -> Result<CorpusFile> {
    let perr = |line: usize, message: String| Error::Parse {
        path: label.to_string(),
        line,
        message,
    };
    let mut entries = Vec::new();
    let mut current: Option<OpenDoc> = None;

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if let Some(rest) = line.strip_prefix("#begin document") {
            if current.is_some() {
                return Err(perr(lineno, "#begin document inside an open document".into()));
            }
            current = Some(OpenDoc {
                doc_id: parse_doc_header(rest),
                tokens: Vec::new(),
                clusters: HashMap::new(),
                stacks: HashMap::new(),
            });
            continue;
        }
        if line.starts_with("#end document") {
            let doc = current
                .take()
                .ok_or_else(|| perr(lineno, "#end document without #begin document".into()))?;
            entries.push(doc.finish(label, lineno, stage)?);
            continue;
        }
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let doc = current
            .as_mut()
            .ok_or_else(|| perr(lineno, "token row outside a document".into()))?;
        let cols: Vec<&str> = if line.contains('\t') {
            line.split('\t').collect()
        } else {
            line.split_whitespace().collect()
        };
        if cols.len() < 5 {
            return Err(perr(
                lineno,
                format!("expected at least 5 columns, found {}", cols.len()),
            ));
        }
        let idx = doc.tokens.len();
        doc.tokens.push(cols[3].to_string());
        let coref = cols[cols.len() - 1].trim();
        if coref == "-" || coref == "_" {
            continue;
        }
        for part in coref.split('|') {
            let (open, close) = (part.starts_with('('), part.ends_with(')'));
            let digits = part.trim_start_matches('(').trim_end_matches(')');
            let id: u64 = digits
                .parse()
                .map_err(|_| perr(lineno, format!("bad coreference tag {part:?}")))?;
            match (open, close) {
                (true, true) => doc.clusters.entry(id).or_default().push(Mention::new(idx, idx)),
                (true, false) => doc.stacks.entry(id).or_default().push((idx, lineno)),
                (false, true) => {
                    let (start, _) = doc.stacks.get_mut(&id).and_then(Vec::pop).ok_or_else(|| {
                        perr(
                            lineno,
                            format!("unbalanced coreference bracket: {part:?} closes nothing"),
                        )
                    })?;
                    doc.clusters.entry(id).or_default().push(Mention::new(start, idx));
                }
                (false, false) => return Err(perr(lineno, format!("bad coreference tag {part:?}"))),
            }
        }
    }
    if let Some(doc) = current {
        let end = text.lines().count();
        let _ = doc.finish(label, end, stage)?;
        return Err(perr(end, "document not terminated by #end document".into()));
    }
    Ok(CorpusFile { entries })
}

fn parse_doc_header(rest: &str) -> String {
    let rest = rest.trim();
    let id_part = rest.split(';').next().unwrap_or(rest).trim();
    id_part
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .unwrap_or(id_part)
        .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<CorpusFile> {
        parse_jsonl(s.as_bytes(), "mem", Stage::Gold)
    }

    #[test]
    fn minimal_record() {
        let c = parse(r#"{"doc_id":"x","tokens":["A","b"],"characters":["A"],"clusters":{"A":[[0,0]]}}"#).unwrap();
        assert_eq!(c.len(), 1);
        let e = &c.entries[0];
        assert_eq!(e.clusters.len(), 1);
        assert_eq!(e.clusters.mention_count(), 1);
        assert_eq!(e.clusters.get(&"A".into()).unwrap(), &[Mention::new(0, 0)]);
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse("\n\n").unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"doc_id\":\"x\",\"tokens\":[\"a\"],\"characters\":[],\"clusters\":{}}\n{not json\n";
        match parse(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_span_is_schema_error() {
        let text = r#"{"doc_id":"x","tokens":["a"],"characters":["A"],"clusters":{"A":[[0]]}}"#;
        assert!(matches!(parse(text), Err(Error::Schema { line: 1, .. })));
        let text = r#"{"doc_id":"x","tokens":["a"],"characters":["A"]}"#;
        assert!(matches!(parse(text), Err(Error::Schema { .. })));
    }

    #[test]
    fn unknown_keys_survive_round_trip() {
        let text = r#"{"zeta":1,"doc_id":"x","tokens":["A","b"],"characters":["B","A"],"clusters":{"A":[[1,1],[0,0]],"B":[]},"alpha":{"k":[1,2]}}"#;
        let c = parse(text).unwrap();
        let out = to_jsonl_string(&c);
        assert_eq!(
            out,
            "{\"doc_id\":\"x\",\"tokens\":[\"A\",\"b\"],\"characters\":[\"B\",\"A\"],\"clusters\":{\"B\":[],\"A\":[[0,0],[1,1]]},\"zeta\":1,\"alpha\":{\"k\":[1,2]}}\n"
        );
        assert_eq!(to_jsonl_string(&parse(&out).unwrap()), out);
    }

    #[test]
    fn integer_keys_become_anonymous() {
        let c = parse(r#"{"doc_id":"x","tokens":["a","b"],"characters":[],"clusters":{"0":[[0,0],[1,1]]}}"#).unwrap();
        assert!(c.entries[0].clusters.get(&ClusterKey::Anon(0)).is_some());
    }

    fn corpus_of(tokens: usize, clusters: Vec<(u64, Vec<(usize, usize)>)>) -> CorpusFile {
        let doc = Document::new("d", (0..tokens).map(|i| format!("w{i}")).collect(), vec![]);
        let cs = ClusterSet::from_clusters(
            "d",
            Stage::Gold,
            clusters.into_iter().map(|(k, ms)| {
                (
                    ClusterKey::Anon(k),
                    ms.into_iter().map(|(s, e)| Mention::new(s, e)).collect::<Vec<_>>(),
                )
            }),
        );
        CorpusFile::new(vec![Entry::new(doc, cs)])
    }

    #[test]
    fn bracket_notation() {
        let c = corpus_of(2, vec![(0, vec![(0, 1)])]);
        assert_eq!(coref_column(2, &c.entries[0].clusters), vec!["(0", "0)"]);
    }

    #[test]
    fn nested_mentions_encode_inside_open() {
        let c = corpus_of(4, vec![(7, vec![(0, 3)]), (3, vec![(1, 1)])]);
        assert_eq!(coref_column(4, &c.entries[0].clusters), vec!["(0", "(1)", "-", "0)"]);
    }

    #[test]
    fn same_start_spans_nest_outer_first() {
        let c = corpus_of(4, vec![(0, vec![(0, 3)]), (1, vec![(0, 1)]), (2, vec![(0, 0)])]);
        let col = coref_column(4, &c.entries[0].clusters);
        // ids follow first-mention order: (0,0)=0, (0,1)=1, (0,3)=2
        assert_eq!(col, vec!["(2|(1|(0)", "1)", "-", "2)"]);
        let text = to_conll_string(&c).unwrap();
        let back = parse_conll(&text, "mem", Stage::Gold).unwrap();
        let mut got = back.entries[0].clusters.partition();
        got.sort();
        let mut want = c.entries[0].clusters.partition();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn unbalanced_brackets_report_row() {
        let text = "#begin document (d); part 000\nd\t0\t0\ta\t(0\nd\t0\t1\tb\t1)\n#end document\n";
        match parse_conll(text, "mem", Stage::Gold) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("unbalanced"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = "#begin document (d); part 000\nd\t0\t0\ta\t(0\nd\t0\t1\tb\t-\n#end document\n";
        assert!(matches!(
            parse_conll(text, "mem", Stage::Gold),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn whitespace_separated_rows_are_accepted() {
        let text = "#begin document (d); part 000\nd 0 0 a x y (0\nd 0 1 b x y 0)\n\n#end document\n";
        let c = parse_conll(text, "mem", Stage::Prediction).unwrap();
        assert_eq!(c.entries[0].document.tokens, vec!["a", "b"]);
        assert_eq!(c.entries[0].clusters.partition(), vec![vec![Mention::new(0, 1)]]);
    }
}
