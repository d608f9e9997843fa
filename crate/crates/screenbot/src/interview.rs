//! Interactive sessions: the trained agent interviews a simulator or an
//! external embedder process.
//!
//! Embedder line protocol: for each question the session writes the
//! question text as one line to the process's stdin and reads back one line
//! of `c` space-separated decimal floats.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use screenbot_core::agent::{budgeted_greedy_episode, QNetwork};
use screenbot_core::catalog::QuestionCatalog;
use screenbot_core::classifier::{label_for, ClassifierModel};
use screenbot_core::cohort::{Label, Turn};
use screenbot_core::env::{EnvConfig, Environment, Responder, TraceEvent};
use screenbot_core::Error as CoreError;

/// Talks the line protocol over any reader/writer pair.
pub struct LineEmbedder<W, R> {
    writer: W,
    reader: R,
    texts: Vec<String>,
    dim: usize,
}

impl<W: Write, R: BufRead> LineEmbedder<W, R> {
    pub fn new(writer: W, reader: R, catalog: &QuestionCatalog, dim: usize) -> Self {
        Self {
            writer,
            reader,
            texts: catalog.questions().iter().map(|q| q.text.replace(['\n', '\r'], " ")).collect(),
            dim,
        }
    }
}

pub fn parse_embedding(line: &str, dim: usize) -> std::result::Result<Vec<f64>, String> {
    let values: Vec<f64> = line
        .split_whitespace()
        .map(|tok| tok.parse::<f64>().map_err(|_| format!("not a number: {tok:?}")))
        .collect::<std::result::Result<_, _>>()?;
    if values.len() != dim {
        return Err(format!("expected {dim} values, got {}", values.len()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(format!("non-finite value {v}"));
    }
    Ok(values)
}

impl<W: Write, R: BufRead> Responder for LineEmbedder<W, R> {
    fn respond(&mut self, question: usize) -> screenbot_core::Result<Vec<f64>> {
        let violation = |m: String| CoreError::Usage(format!("embedder protocol violation: {m}"));
        let text = self
            .texts
            .get(question)
            .ok_or_else(|| violation(format!("unknown question {question}")))?;
        writeln!(self.writer, "{text}")
            .and_then(|_| self.writer.flush())
            .map_err(|e| violation(format!("write failed: {e}")))?;
        let mut line = String::new();
        let n = self
            .reader
            .read_line(&mut line)
            .map_err(|e| violation(format!("read failed: {e}")))?;
        if n == 0 {
            return Err(violation("embedder closed its output".into()));
        }
        parse_embedding(line.trim_end_matches(['\n', '\r']), self.dim).map_err(violation)
    }
}

/// A child process speaking the line protocol.
pub struct EmbedderProcess {
    child: Child,
    inner: LineEmbedder<ChildStdin, BufReader<ChildStdout>>,
}

impl EmbedderProcess {
    pub fn spawn(program: &str, args: &[String], catalog: &QuestionCatalog, dim: usize) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .with_context(|| format!("starting embedder {program}"))?;
        let stdin = child.stdin.take().context("embedder stdin")?;
        let stdout = child.stdout.take().context("embedder stdout")?;
        Ok(Self {
            child,
            inner: LineEmbedder::new(stdin, BufReader::new(stdout), catalog, dim),
        })
    }
}

impl Responder for EmbedderProcess {
    fn respond(&mut self, question: usize) -> screenbot_core::Result<Vec<f64>> {
        self.inner.respond(question)
    }
}

impl Drop for EmbedderProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Keeps every answered question.
struct Recorder<R> {
    inner: R,
    turns: Vec<Turn>,
}

impl<R: Responder> Responder for Recorder<R> {
    fn respond(&mut self, question: usize) -> screenbot_core::Result<Vec<f64>> {
        let response = self.inner.respond(question)?;
        self.turns.push(Turn {
            question,
            response: response.clone(),
        });
        Ok(response)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterviewOutcome {
    /// Every answered question, greeting first.
    pub transcript: Vec<Turn>,
    pub trace: Vec<TraceEvent>,
    pub p_mci: f64,
    /// Absent when the session aborted.
    pub prediction: Option<Label>,
    pub aborted: Option<String>,
}

/// Settings for one session.
pub struct Session<'a> {
    pub qnet: &'a QNetwork,
    pub catalog: &'a QuestionCatalog,
    pub classifier: &'a ClassifierModel,
    pub env: &'a EnvConfig,
    /// Questions after the greeting; the session ends there at the latest.
    pub budget: usize,
    pub fingerprint: Vec<f64>,
}

impl Session<'_> {
    /// Runs the greedy policy against `responder`, printing each question
    /// and the running `p_MCI` to `out`. Responder failures end the session
    /// with `aborted` set and the partial transcript kept.
    pub fn run<R: Responder>(&self, responder: R, out: &mut dyn Write) -> Result<InterviewOutcome> {
        let env_cfg = EnvConfig {
            max_turns: self.budget,
            ..self.env.clone()
        };
        let mut rec = Recorder {
            inner: responder,
            turns: Vec::new(),
        };
        let mut trace = Vec::new();
        let mut p_mci = f64::NAN;
        let result = (|| -> screenbot_core::Result<()> {
            let mut env = Environment::reset(
                self.catalog,
                self.classifier,
                &env_cfg,
                &mut rec,
                self.fingerprint.clone(),
                None,
            )?;
            p_mci = env.state().class_probs[1];
            let greeting = self.catalog.get(self.catalog.greeting())?;
            let _ = writeln!(out, "[0] {}  p_MCI={p_mci:.4}", greeting.text);
            budgeted_greedy_episode(self.qnet, &mut env, self.catalog, |ev| {
                p_mci = ev.p_mci;
                let text = self.catalog.get(ev.action_id).map(|q| q.text.as_str()).unwrap_or("?");
                let _ = writeln!(out, "[{}] {text}  p_MCI={p_mci:.4}", ev.turn);
                trace.push(ev.clone());
            })?;
            Ok(())
        })();
        let aborted = result.err().map(|e| e.to_string());
        let prediction = if aborted.is_none() { Some(label_for(p_mci)) } else { None };
        match (&aborted, prediction) {
            (Some(msg), _) => {
                let _ = writeln!(out, "session aborted: {msg}");
            }
            (None, Some(l)) => {
                let _ = writeln!(out, "prediction: {} (p_MCI={p_mci:.4})", if l.is_positive() { "MCI" } else { "NL" });
            }
            _ => {}
        }
        Ok(InterviewOutcome {
            transcript: rec.turns,
            trace,
            p_mci,
            prediction,
            aborted,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn parse_checks_count_and_values() {
        assert_eq!(parse_embedding("1 2.5  -3e-1", 3).unwrap(), vec![1.0, 2.5, -0.3]);
        assert!(parse_embedding("1 2", 3).is_err());
        assert!(parse_embedding("1 x 3", 3).is_err());
        assert!(parse_embedding("1 NaN 3", 3).is_err());
    }

    #[test]
    fn line_embedder_writes_question_text() {
        let cat = QuestionCatalog::synthetic(20).unwrap();
        let mut sent = Vec::new();
        {
            let mut e = LineEmbedder::new(&mut sent, Cursor::new("0.5 1\n"), &cat, 2);
            assert_eq!(e.respond(3).unwrap(), vec![0.5, 1.0]);
            let err = e.respond(3).unwrap_err().to_string();
            assert!(err.contains("closed"), "{err}");
        }
        let text = String::from_utf8(sent).unwrap();
        assert_eq!(text.lines().next().unwrap(), cat.get(3).unwrap().text);
    }
}
