//! JSONL comment corpus ingestion.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::extract::Comment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParentKind {
    Submission,
    Comment,
}

/// One line of the corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub user: String,
    pub body: String,
    pub subreddit: String,
    pub created_utc: i64,
    pub parent_kind: ParentKind,
    pub submission_id: String,
}

impl CorpusRecord {
    /// Validates a parsed JSON object. `created_utc` may be an integer or a
    /// string holding one.
    pub fn from_value(v: &Value) -> std::result::Result<CorpusRecord, String> {
        let obj = v.as_object().ok_or("not a JSON object")?;
        let text = |k: &str| -> std::result::Result<String, String> {
            match obj.get(k) {
                Some(Value::String(s)) => Ok(s.clone()),
                Some(_) => Err(format!("field `{k}` is not a string")),
                None => Err(format!("missing field `{k}`")),
            }
        };
        let user = text("user")?;
        if user.trim().is_empty() {
            return Err("empty `user`".into());
        }
        let created_utc = match obj.get("created_utc") {
            Some(Value::Number(n)) => n.as_i64().ok_or("`created_utc` is not an integer")?,
            Some(Value::String(s)) => s.trim().parse().map_err(|_| "`created_utc` is not an integer")?,
            Some(_) => return Err("`created_utc` is not an integer".into()),
            None => return Err("missing field `created_utc`".into()),
        };
        let parent_kind = match text("parent_kind")?.as_str() {
            "submission" => ParentKind::Submission,
            "comment" => ParentKind::Comment,
            other => return Err(format!("unknown parent_kind {other:?}")),
        };
        let id = match obj.get("id") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => return Err("field `id` is not a string".into()),
        };
        Ok(CorpusRecord {
            id,
            user,
            body: text("body")?,
            subreddit: text("subreddit")?,
            created_utc,
            parent_kind,
            submission_id: text("submission_id")?,
        })
    }

    /// Comment view; records without an id are named after their line number.
    pub fn into_comment(self, line: usize) -> Comment {
        Comment {
            id: self.id.unwrap_or_else(|| format!("L{line}")),
            user: self.user,
            body: self.body,
            subreddit: self.subreddit.to_lowercase(),
            created_utc: self.created_utc,
            is_reply: self.parent_kind == ParentKind::Comment,
            submission_id: self.submission_id,
        }
    }

    pub fn from_comment(c: &Comment) -> CorpusRecord {
        CorpusRecord {
            id: Some(c.id.clone()),
            user: c.user.clone(),
            body: c.body.clone(),
            subreddit: c.subreddit.clone(),
            created_utc: c.created_utc,
            parent_kind: if c.is_reply { ParentKind::Comment } else { ParentKind::Submission },
            submission_id: c.submission_id.clone(),
        }
    }
}

/// Malformed lines as (1-based line number, reason).
pub type Skipped = Vec<(usize, String)>;

/// Streaming reader that yields valid comments and records malformed lines.
pub struct CorpusReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    skipped: Skipped,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R) -> Self {
        CorpusReader {
            lines: reader.lines(),
            line_no: 0,
            skipped: Vec::new(),
        }
    }

    pub fn skipped(&self) -> &[(usize, String)] {
        &self.skipped
    }

    pub fn write_sidecar(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for (line, reason) in &self.skipped {
            writeln!(f, "line {line}: {reason}").map_err(|e| Error::io(path, e))?;
        }
        f.flush().map_err(|e| Error::io(path, e))
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<Comment>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<Value>(&line)
                .map_err(|e| e.to_string())
                .and_then(|v| CorpusRecord::from_value(&v));
            match parsed {
                Ok(rec) => return Some(Ok(rec.into_comment(self.line_no))),
                Err(reason) => {
                    log::debug!("corpus line {}: {reason}", self.line_no);
                    self.skipped.push((self.line_no, reason));
                }
            }
        }
    }
}

pub fn open_corpus(path: impl AsRef<Path>) -> Result<CorpusReader<BufReader<File>>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(CorpusReader::new(BufReader::new(f)))
}

/// Reads a whole corpus, writing `<path>.skipped.log` when lines were rejected.
pub fn ingest(path: impl AsRef<Path>) -> Result<(Vec<Comment>, Skipped)> {
    let path = path.as_ref();
    let mut reader = open_corpus(path)?;
    let comments = reader.by_ref().collect::<Result<Vec<_>>>()?;
    if !reader.skipped().is_empty() {
        let mut sidecar = path.as_os_str().to_owned();
        sidecar.push(".skipped.log");
        reader.write_sidecar(&sidecar)?;
        log::warn!("{}: skipped {} malformed lines", path.display(), reader.skipped().len());
    }
    Ok((comments, reader.skipped.clone()))
}

pub fn write_corpus<W: Write>(mut w: W, comments: &[Comment]) -> Result<()> {
    for c in comments {
        serde_json::to_writer(&mut w, &CorpusRecord::from_comment(c))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
