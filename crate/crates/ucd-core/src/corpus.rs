//! JSON Lines corpus files: one record per document, either free text or a
//! question/answer pair. Tokenization is whitespace splitting.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{Context, Vocab};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Document {
    Text { text: String },
    Qa { question: String, answer: String },
}

impl Document {
    pub fn text(s: impl Into<String>) -> Document {
        Document::Text { text: s.into() }
    }

    pub fn qa(question: impl Into<String>, answer: impl Into<String>) -> Document {
        Document::Qa {
            question: question.into(),
            answer: answer.into(),
        }
    }

    /// Whitespace tokens of the document; QA pairs concatenate question then
    /// answer, which is also the order models are conditioned in.
    pub fn tokens(&self) -> Vec<&str> {
        match self {
            Document::Text { text } => text.split_whitespace().collect(),
            Document::Qa { question, answer } => question
                .split_whitespace()
                .chain(answer.split_whitespace())
                .collect(),
        }
    }

    pub fn to_context(&self, vocab: &Vocab) -> Result<Context> {
        let joined = self
            .tokens()
            .iter()
            .copied()
            .collect::<Vec<_>>()
            .join(" ");
        Context::from_content(&vocab.encode(&joined)?)
    }
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in data.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        docs.push(doc);
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(docs)
}

pub fn write_jsonl(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for doc in docs {
        serde_json::to_writer(&mut out, doc).expect("document serializes");
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Tokenized view of every document, for vocabulary construction.
pub fn token_table(docs: &[Document]) -> Vec<Vec<String>> {
    docs.iter()
        .map(|d| d.tokens().into_iter().map(str::to_string).collect())
        .collect()
}

/// Converts documents to training contexts against a fixed vocabulary.
pub fn contexts(docs: &[Document], vocab: &Vocab) -> Result<Vec<Context>> {
    docs.iter().map(|d| d.to_context(vocab)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_text_and_qa_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        fs::write(
            &path,
            "{\"text\":\"a b\"}\n{\"question\":\"q1 q2\",\"answer\":\"a1\"}\n",
        )
        .unwrap();
        let docs = read_jsonl(&path).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].tokens(), vec!["a", "b"]);
        assert_eq!(docs[1].tokens(), vec!["q1", "q2", "a1"]);
    }

    #[test]
    fn round_trips_documents() {
        let docs = vec![Document::text("x y z"), Document::qa("who", "them")];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        write_jsonl(&path, &docs).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), docs);
    }

    #[test]
    fn reports_line_number_of_malformed_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        fs::write(&path, "{\"text\":\"ok\"}\n{nope}\n").unwrap();
        match read_jsonl(&path) {
            Err(Error::MalformedRecord { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected MalformedRecord, got {other:?}"),
        }
    }
}
