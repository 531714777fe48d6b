//! JSONL session log and replay.
//!
//! Each line is `{"ts", "session_id", "type", "payload"}`. Replaying the
//! records of one session through the same state machine rebuilds it exactly;
//! [`replay_verified`] additionally re-encodes every description and checks
//! that the logged guess is still the argmax for its query.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{
    GameConfig, GameError, GuessEvent, ParticipantSchedule, Rating, RevealKind, Round, RoundStatus, Session, Task,
};
use crate::catalogue::EmbeddingStore;
use crate::providers::Encoder;
use crate::vecmath::ScentId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum Event {
    SessionCreated {
        participant_label: String,
        schedule: ParticipantSchedule,
        config: GameConfig,
        store_hash: String,
        model_id: String,
    },
    RoundStarted {
        round: usize,
        task: Task,
        target_id: ScentId,
        reference_id: Option<ScentId>,
    },
    ScentRevealed {
        round: usize,
        kind: RevealKind,
        scent_id: ScentId,
    },
    DescriptionSubmitted {
        round: usize,
        text: String,
    },
    GuessMade {
        round: usize,
        guess: GuessEvent,
    },
    RatingRecorded {
        round: usize,
        rating: Rating,
    },
    RoundFinished {
        round: usize,
        status: RoundStatus,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub ts: DateTime<Utc>,
    pub session_id: String,
    #[serde(flatten)]
    pub event: Event,
}

/// Append-only writer; every append is flushed and synced before returning.
#[derive(Debug)]
pub struct LogWriter {
    path: PathBuf,
    file: File,
}

impl LogWriter {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, GameError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(LogWriter { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, records: &[LogRecord]) -> Result<(), GameError> {
        if records.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r).map_err(std::io::Error::other)?;
            buf.push(b'\n');
        }
        self.file.write_all(&buf)?;
        self.file.flush()?;
        self.file.sync_data()?;
        Ok(())
    }
}

pub fn parse_log(text: &str) -> Result<Vec<LogRecord>, GameError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| GameError::CorruptLog {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogRecord>, GameError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| GameError::CorruptLog {
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Replays every session found in the `*.jsonl` files of `dir`. Records are
/// grouped by session id, so one file may hold several sessions. Files are
/// read in name order and sessions are returned in order of first appearance.
pub fn load_sessions(dir: impl AsRef<Path>) -> Result<Vec<Session>, GameError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|x| x == "jsonl"));
    files.sort();
    let mut order: Vec<String> = Vec::new();
    let mut grouped: BTreeMap<String, Vec<LogRecord>> = BTreeMap::new();
    for f in files {
        for rec in read_log(&f)? {
            if !grouped.contains_key(&rec.session_id) {
                order.push(rec.session_id.clone());
            }
            grouped.entry(rec.session_id.clone()).or_default().push(rec);
        }
    }
    let mut sessions = Vec::with_capacity(order.len());
    for id in order {
        if let Some(s) = replay_session(&grouped[&id])? {
            sessions.push(s);
        }
    }
    Ok(sessions)
}

struct Verifier<'a> {
    store: &'a EmbeddingStore,
    encoder: &'a dyn Encoder,
}

/// Rebuilds a session from its records, trusting the logged guesses.
/// An empty log yields `None`.
pub fn replay_session(records: &[LogRecord]) -> Result<Option<Session>, GameError> {
    replay(records, None)
}

/// Rebuilds a session and re-derives every guess from the store and encoder.
pub fn replay_verified(
    records: &[LogRecord],
    store: &EmbeddingStore,
    encoder: &dyn Encoder,
) -> Result<Option<Session>, GameError> {
    replay(records, Some(Verifier { store, encoder }))
}

fn diverged(record: usize, reason: impl Into<String>) -> GameError {
    GameError::ReplayDivergence {
        record: record + 1,
        reason: reason.into(),
    }
}

fn replay(records: &[LogRecord], verifier: Option<Verifier<'_>>) -> Result<Option<Session>, GameError> {
    let Some(first) = records.first() else {
        return Ok(None);
    };
    let Event::SessionCreated {
        participant_label,
        schedule,
        config,
        store_hash,
        model_id,
    } = &first.event
    else {
        return Err(diverged(0, "log does not start with session_created"));
    };
    if let Some(v) = &verifier {
        let current = v.store.content_hash();
        if &current != store_hash {
            return Err(GameError::StoreMismatch {
                logged: store_hash.clone(),
                current,
            });
        }
    }
    let mut session = Session {
        session_id: first.session_id.clone(),
        participant_label: participant_label.clone(),
        schedule: schedule.clone(),
        config: config.clone(),
        store_hash: store_hash.clone(),
        model_id: model_id.clone(),
        created_at: first.ts,
        rounds: Vec::new(),
    };
    let mut pending_text: Option<String> = None;

    for (i, rec) in records.iter().enumerate().skip(1) {
        if rec.session_id != session.session_id {
            return Err(diverged(i, format!("record belongs to session {}", rec.session_id)));
        }
        let check_round = |s: &Session, round: usize| -> Result<(), GameError> {
            match s.rounds.last() {
                Some(r) if r.index == round => Ok(()),
                _ => Err(diverged(i, format!("record refers to round {round}, which is not current"))),
            }
        };
        match &rec.event {
            Event::SessionCreated { .. } => return Err(diverged(i, "duplicate session_created")),
            Event::RoundStarted {
                round,
                task,
                target_id,
                reference_id,
            } => {
                let out = session
                    .start_round(*task, *target_id, *reference_id, rec.ts)
                    .map_err(|e| diverged(i, e.to_string()))?;
                if out.value != *round {
                    return Err(diverged(i, format!("round index {round} but replay opened {}", out.value)));
                }
            }
            Event::ScentRevealed { round, kind, scent_id } => {
                check_round(&session, *round)?;
                let out = session.reveal(*kind, rec.ts).map_err(|e| diverged(i, e.to_string()))?;
                if out.value.scent_id != *scent_id {
                    return Err(diverged(i, "revealed scent differs"));
                }
            }
            Event::DescriptionSubmitted { round, text } => {
                check_round(&session, *round)?;
                pending_text = Some(text.clone());
            }
            Event::GuessMade { round, guess } => {
                check_round(&session, *round)?;
                let text = pending_text
                    .take()
                    .ok_or_else(|| diverged(i, "guess without a preceding description"))?;
                if text != guess.description_text {
                    return Err(diverged(i, "guess text differs from submitted description"));
                }
                apply_logged_guess(&mut session, guess, rec.ts, verifier.as_ref(), i)?;
            }
            Event::RatingRecorded { round, rating } => {
                check_round(&session, *round)?;
                session
                    .record_rating(*rating, rec.ts)
                    .map_err(|e| diverged(i, e.to_string()))?;
            }
            Event::RoundFinished { round, status } => {
                let r = session
                    .rounds
                    .get(*round)
                    .ok_or_else(|| diverged(i, format!("unknown round {round}")))?;
                if r.status != *status {
                    return Err(diverged(i, format!("logged status {status}, replayed {}", r.status)));
                }
            }
        }
    }
    Ok(Some(session))
}

fn apply_logged_guess(
    session: &mut Session,
    guess: &GuessEvent,
    at: DateTime<Utc>,
    verifier: Option<&Verifier<'_>>,
    i: usize,
) -> Result<(), GameError> {
    let config = session.config.clone();
    let round: &mut Round = session
        .rounds
        .last_mut()
        .filter(|r| !r.is_terminal())
        .ok_or_else(|| diverged(i, "guess in a finished round"))?;
    round
        .check_accepts_description(&config)
        .map_err(|e| diverged(i, e.to_string()))?;
    let expected_index = round.guesses.len() as u32 + 1;
    if guess.index != expected_index {
        return Err(diverged(i, format!("guess index {} but expected {expected_index}", guess.index)));
    }
    if guess.correct != (guess.guessed_id == round.target_id) {
        return Err(diverged(i, "logged correctness contradicts the target"));
    }
    if let Some(v) = verifier {
        let p = round
            .propose_guess(&guess.description_text, &config, v.encoder, v.store)
            .map_err(|e| diverged(i, e.to_string()))?;
        if p.guessed_id != guess.guessed_id
            || p.score.to_bits() != guess.score.to_bits()
            || p.query_mode != guess.query_mode
            || p.reference_id != guess.reference_id
        {
            return Err(diverged(
                i,
                format!(
                    "recomputed guess {} ({}) differs from logged {} ({})",
                    p.guessed_id, p.score, guess.guessed_id, guess.score
                ),
            ));
        }
    }
    // Participant ratings arrive as their own records; keep only auto-recorded ones.
    let mut g = guess.clone();
    if !g.correct {
        g.validity = None;
        g.similarity_to_target = None;
    }
    round.apply_guess(g, &config, at);
    Ok(())
}
