//! Interactive guessing protocol.
//!
//! A [`Session`] holds one participant's rounds. In a description round
//! (`Task1`) the participant describes a hidden target and the engine guesses
//! from the description alone. In a comparison round (`Task2`) the
//! participant describes how the target differs from a known reference; the
//! engine moves the reference embedding by the description embedding and
//! guesses again, and every wrong guess becomes the next reference.
//!
//! All mutations return the [`LogRecord`]s they produced. Callers persist
//! those before acknowledging the mutation; [`log::replay_session`] rebuilds
//! an identical session from them.

pub mod log;
pub mod schedule;

use std::collections::BTreeSet;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalogue::EmbeddingStore;
use crate::providers::{encode_text, Encoder, ProviderError};
use crate::vecmath::{combine_reference_diff, normalize, EmbeddingVector, ScentId, VecError};

pub use log::{load_sessions, parse_log, read_log, replay_session, replay_verified, Event, LogRecord, LogWriter};
pub use schedule::{generate_schedule, ParticipantSchedule, SchedulePair};

pub const MAX_RATING: u8 = 10;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("no {task} rounds left in this session")]
    RoundBudgetExhausted { task: Task },
    #[error("the current round is still in progress")]
    RoundInProgress,
    #[error("no round is active")]
    NoActiveRound,
    #[error("comparison rounds need a reference scent")]
    MissingReference,
    #[error("description rounds take no reference scent")]
    UnexpectedReference,
    #[error("reference and target must differ (both {0})")]
    ReferenceIsTarget(ScentId),
    #[error("round is {status}, not accepting descriptions")]
    NotAcceptingDescriptions { status: RoundStatus },
    #[error("description is empty")]
    EmptyDescription,
    #[error("description cancels reference")]
    DescriptionCancelsReference,
    #[error("encoding failed: {0}")]
    Encode(#[from] ProviderError),
    #[error("retrieval failed: {0}")]
    Retrieval(VecError),
    #[error("rating {0} outside 0..=10")]
    RatingOutOfRange(u8),
    #[error("no rating is owed")]
    NothingOwed,
    #[error("{got:?} rating was recorded already")]
    DuplicateRating { got: RatingKind },
    #[error("expected a {expected:?} rating of {expected_subject}, got {got:?} of {got_subject}")]
    RatingOutOfOrder {
        expected: RatingKind,
        expected_subject: RatingSubject,
        got: RatingKind,
        got_subject: RatingSubject,
    },
    #[error("nothing to reveal: {0}")]
    NothingToReveal(&'static str),
    #[error("session budget allows no further rounds")]
    SessionComplete,
    #[error("store hash mismatch: log was recorded against {logged}, replaying against {current}")]
    StoreMismatch { logged: String, current: String },
    #[error("replay diverged at record {record}: {reason}")]
    ReplayDivergence { record: usize, reason: String },
    #[error("corrupt log line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error("log i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("schedule: {0}")]
    Schedule(String),
}

impl From<VecError> for GameError {
    fn from(e: VecError) -> Self {
        match e {
            VecError::DegenerateSum => GameError::DescriptionCancelsReference,
            other => GameError::Retrieval(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    Task1,
    Task2,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Task1 => "description",
            Task::Task2 => "comparison",
        })
    }
}

/// How the query vector for a guess was formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// The newest description alone.
    Standalone,
    /// All of the round's descriptions joined with `". "`.
    Concatenated,
    /// Current reference (last wrong guess) moved by the newest description.
    Chained,
    /// Initial reference moved by the normalized sum of all descriptions.
    Cumulative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task2Mode {
    #[default]
    Chained,
    Cumulative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStatus {
    AwaitingDescription,
    AwaitingRating,
    Solved,
    Exhausted,
}

impl RoundStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, RoundStatus::Solved | RoundStatus::Exhausted)
    }
}

impl fmt::Display for RoundStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoundStatus::AwaitingDescription => "awaiting_description",
            RoundStatus::AwaitingRating => "awaiting_rating",
            RoundStatus::Solved => "solved",
            RoundStatus::Exhausted => "exhausted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingKind {
    Familiarity,
    Intensity,
    Similarity,
    Validity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingSubject {
    Scent(ScentId),
    Pair(ScentId, ScentId),
}

impl fmt::Display for RatingSubject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RatingSubject::Scent(a) => write!(f, "scent {a}"),
            RatingSubject::Pair(a, b) => write!(f, "pair ({a}, {b})"),
        }
    }
}

/// A 0–10 participant score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub kind: RatingKind,
    pub value: u8,
    pub subject: RatingSubject,
}

impl Rating {
    pub fn new(kind: RatingKind, value: u8, subject: RatingSubject) -> Result<Self, GameError> {
        if value > MAX_RATING {
            return Err(GameError::RatingOutOfRange(value));
        }
        Ok(Rating { kind, value, subject })
    }
}

/// What an owed rating is about, without naming hidden scents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectRole {
    Target,
    Reference,
    ReferenceVsTarget,
    Guess,
    GuessVsTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwedRating {
    pub kind: RatingKind,
    pub subject: RatingSubject,
    pub role: SubjectRole,
    /// 1-based guess the rating belongs to; `None` for ratings of the initial sniff.
    pub guess_index: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuessEvent {
    pub index: u32,
    pub description_text: String,
    pub query_mode: QueryMode,
    /// Reference the query was built from (comparison rounds only).
    pub reference_id: Option<ScentId>,
    pub guessed_id: ScentId,
    pub score: f64,
    pub correct: bool,
    pub validity: Option<Rating>,
    pub similarity_to_target: Option<Rating>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevealKind {
    Target,
    Reference,
    Guess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reveal {
    pub at: DateTime<Utc>,
    pub kind: RevealKind,
    pub scent_id: ScentId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GameConfig {
    pub task1_guess_limit: u32,
    pub task2_guess_limit: u32,
    pub task1_rounds: u32,
    pub task2_rounds: u32,
    /// Exclude a round's earlier wrong guesses from later retrievals.
    pub dedupe_guesses: bool,
    /// Description rounds encode all descriptions so far instead of the newest one.
    pub concat_descriptions: bool,
    pub task2_mode: Task2Mode,
    /// Ask for familiarity/intensity (and the initial pair similarity) before the first description.
    pub initial_ratings: bool,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            task1_guess_limit: 3,
            task2_guess_limit: 5,
            task1_rounds: 2,
            task2_rounds: 4,
            dedupe_guesses: false,
            concat_descriptions: false,
            task2_mode: Task2Mode::Chained,
            initial_ratings: true,
        }
    }
}

impl GameConfig {
    pub fn guess_limit(&self, task: Task) -> u32 {
        match task {
            Task::Task1 => self.task1_guess_limit,
            Task::Task2 => self.task2_guess_limit,
        }
    }

    pub fn round_budget(&self, task: Task) -> u32 {
        match task {
            Task::Task1 => self.task1_rounds,
            Task::Task2 => self.task2_rounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub index: usize,
    pub task: Task,
    pub target_id: ScentId,
    pub initial_reference_id: Option<ScentId>,
    pub current_reference_id: Option<ScentId>,
    pub guesses: Vec<GuessEvent>,
    pub ratings: Vec<Rating>,
    pub status: RoundStatus,
    pub owed: Vec<OwedRating>,
    pub reveals: Vec<Reveal>,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
}

/// A guess computed against the store but not yet applied to the round.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposedGuess {
    pub text: String,
    pub query_mode: QueryMode,
    pub reference_id: Option<ScentId>,
    pub guessed_id: ScentId,
    pub score: f64,
}

impl Round {
    fn new(
        index: usize,
        task: Task,
        target_id: ScentId,
        reference_id: Option<ScentId>,
        config: &GameConfig,
        at: DateTime<Utc>,
    ) -> Result<Round, GameError> {
        match (task, reference_id) {
            (Task::Task1, Some(_)) => return Err(GameError::UnexpectedReference),
            (Task::Task2, None) => return Err(GameError::MissingReference),
            (Task::Task2, Some(r)) if r == target_id => return Err(GameError::ReferenceIsTarget(r)),
            _ => {}
        }
        let mut owed = Vec::new();
        if config.initial_ratings {
            let mut rate = |kind, subject, role| {
                owed.push(OwedRating {
                    kind,
                    subject,
                    role,
                    guess_index: None,
                })
            };
            if let Some(r) = reference_id {
                rate(RatingKind::Familiarity, RatingSubject::Scent(r), SubjectRole::Reference);
                rate(RatingKind::Intensity, RatingSubject::Scent(r), SubjectRole::Reference);
            }
            rate(RatingKind::Familiarity, RatingSubject::Scent(target_id), SubjectRole::Target);
            rate(RatingKind::Intensity, RatingSubject::Scent(target_id), SubjectRole::Target);
            if let Some(r) = reference_id {
                rate(
                    RatingKind::Similarity,
                    RatingSubject::Pair(r, target_id),
                    SubjectRole::ReferenceVsTarget,
                );
            }
        }
        let status = if owed.is_empty() {
            RoundStatus::AwaitingDescription
        } else {
            RoundStatus::AwaitingRating
        };
        Ok(Round {
            index,
            task,
            target_id,
            initial_reference_id: reference_id,
            current_reference_id: reference_id,
            guesses: Vec::new(),
            ratings: Vec::new(),
            status,
            owed,
            reveals: Vec::new(),
            started_at: at,
            finished_at: None,
        })
    }

    pub fn is_terminal(&self) -> bool {
        self.status.is_terminal()
    }

    pub fn incorrect_guesses(&self) -> impl Iterator<Item = &GuessEvent> {
        self.guesses.iter().filter(|g| !g.correct)
    }

    /// Similarity between the initial reference and the target, if rated.
    pub fn initial_similarity(&self) -> Option<u8> {
        let (r, t) = (self.initial_reference_id?, self.target_id);
        self.ratings
            .iter()
            .find(|x| x.kind == RatingKind::Similarity && x.subject == RatingSubject::Pair(r, t))
            .map(|x| x.value)
    }

    pub fn rating_of(&self, kind: RatingKind, scent: ScentId) -> Option<u8> {
        self.ratings
            .iter()
            .find(|x| x.kind == kind && x.subject == RatingSubject::Scent(scent))
            .map(|x| x.value)
    }

    /// Sequence of references the round's queries were built from.
    pub fn reference_chain(&self) -> Vec<ScentId> {
        let mut chain: Vec<ScentId> = self.initial_reference_id.into_iter().collect();
        chain.extend(self.incorrect_guesses().map(|g| g.guessed_id));
        chain
    }

    fn check_accepts_description(&self, config: &GameConfig) -> Result<(), GameError> {
        if self.status != RoundStatus::AwaitingDescription
            || self.guesses.len() as u32 >= config.guess_limit(self.task)
        {
            return Err(GameError::NotAcceptingDescriptions { status: self.status });
        }
        Ok(())
    }

    fn exclusions(&self, config: &GameConfig) -> BTreeSet<ScentId> {
        if config.dedupe_guesses {
            self.incorrect_guesses().map(|g| g.guessed_id).collect()
        } else {
            BTreeSet::new()
        }
    }

    /// Encodes the description and retrieves the best match without
    /// touching the round.
    pub fn propose_guess(
        &self,
        text: &str,
        config: &GameConfig,
        encoder: &dyn Encoder,
        store: &EmbeddingStore,
    ) -> Result<ProposedGuess, GameError> {
        self.check_accepts_description(config)?;
        let text = text.trim();
        if text.is_empty() {
            return Err(GameError::EmptyDescription);
        }
        let (query, query_mode, reference_id) = match self.task {
            Task::Task1 if config.concat_descriptions && !self.guesses.is_empty() => {
                let mut parts: Vec<&str> = self.guesses.iter().map(|g| g.description_text.as_str()).collect();
                parts.push(text);
                (encode_text(encoder, &parts.join(". "))?, QueryMode::Concatenated, None)
            }
            Task::Task1 => (encode_text(encoder, text)?, QueryMode::Standalone, None),
            Task::Task2 => match config.task2_mode {
                Task2Mode::Chained => {
                    let r = self.current_reference_id.ok_or(GameError::MissingReference)?;
                    let diff = encode_text(encoder, text)?;
                    (combine_reference_diff(store.get(r), &diff)?, QueryMode::Chained, Some(r))
                }
                Task2Mode::Cumulative => {
                    let r = self.initial_reference_id.ok_or(GameError::MissingReference)?;
                    let mut sum = encode_text(encoder, text)?.into_inner();
                    for g in &self.guesses {
                        let d = encode_text(encoder, &g.description_text)?;
                        sum.iter_mut().zip(d.as_slice()).for_each(|(s, x)| *s += x);
                    }
                    let diff = normalize(&EmbeddingVector::new(sum)?)
                        .map_err(|_| GameError::DescriptionCancelsReference)?;
                    (combine_reference_diff(store.get(r), &diff)?, QueryMode::Cumulative, Some(r))
                }
            },
        };
        let best = store.retrieve_best(&query, &self.exclusions(config))?;
        Ok(ProposedGuess {
            text: text.to_string(),
            query_mode,
            reference_id,
            guessed_id: best.scent_id,
            score: best.score,
        })
    }

    fn guess_event(&self, p: &ProposedGuess) -> GuessEvent {
        let correct = p.guessed_id == self.target_id;
        let (validity, similarity_to_target) = if correct {
            (
                Some(Rating {
                    kind: RatingKind::Validity,
                    value: MAX_RATING,
                    subject: RatingSubject::Scent(p.guessed_id),
                }),
                Some(Rating {
                    kind: RatingKind::Similarity,
                    value: MAX_RATING,
                    subject: RatingSubject::Pair(p.guessed_id, self.target_id),
                }),
            )
        } else {
            (None, None)
        };
        GuessEvent {
            index: self.guesses.len() as u32 + 1,
            description_text: p.text.clone(),
            query_mode: p.query_mode,
            reference_id: p.reference_id,
            guessed_id: p.guessed_id,
            score: p.score,
            correct,
            validity,
            similarity_to_target,
        }
    }

    /// Applies a guess. Returns true if the round reached a terminal state.
    fn apply_guess(&mut self, guess: GuessEvent, config: &GameConfig, at: DateTime<Utc>) -> bool {
        let limit = config.guess_limit(self.task);
        if guess.correct {
            self.ratings.extend(guess.validity);
            self.ratings.extend(guess.similarity_to_target);
            self.guesses.push(guess);
            self.status = RoundStatus::Solved;
            self.finished_at = Some(at);
            return true;
        }
        let g = guess.guessed_id;
        let index = guess.index;
        self.guesses.push(guess);
        if self.task == Task::Task2 {
            self.current_reference_id = Some(g);
            self.owed.push(OwedRating {
                kind: RatingKind::Validity,
                subject: RatingSubject::Scent(g),
                role: SubjectRole::Guess,
                guess_index: Some(index),
            });
            self.owed.push(OwedRating {
                kind: RatingKind::Similarity,
                subject: RatingSubject::Pair(g, self.target_id),
                role: SubjectRole::GuessVsTarget,
                guess_index: Some(index),
            });
            self.status = RoundStatus::AwaitingRating;
            return false;
        }
        if self.guesses.len() as u32 >= limit {
            self.status = RoundStatus::Exhausted;
            self.finished_at = Some(at);
            return true;
        }
        false
    }

    /// Validates a rating against the head of the owed queue and stores it.
    /// Returns true if the round reached a terminal state.
    fn apply_rating(&mut self, rating: Rating, config: &GameConfig, at: DateTime<Utc>) -> Result<bool, GameError> {
        if rating.value > MAX_RATING {
            return Err(GameError::RatingOutOfRange(rating.value));
        }
        let Some(head) = self.owed.first().copied() else {
            if self.ratings.iter().any(|r| r.kind == rating.kind && r.subject == rating.subject) {
                return Err(GameError::DuplicateRating { got: rating.kind });
            }
            return Err(GameError::NothingOwed);
        };
        if head.kind != rating.kind || head.subject != rating.subject {
            return Err(GameError::RatingOutOfOrder {
                expected: head.kind,
                expected_subject: head.subject,
                got: rating.kind,
                got_subject: rating.subject,
            });
        }
        self.owed.remove(0);
        self.ratings.push(rating);
        if let Some(i) = head.guess_index {
            let g = &mut self.guesses[i as usize - 1];
            match rating.kind {
                RatingKind::Validity => g.validity = Some(rating),
                RatingKind::Similarity => g.similarity_to_target = Some(rating),
                _ => {}
            }
        }
        if self.owed.is_empty() {
            if self.guesses.len() as u32 >= config.guess_limit(self.task) {
                self.status = RoundStatus::Exhausted;
                self.finished_at = Some(at);
                return Ok(true);
            }
            self.status = RoundStatus::AwaitingDescription;
        }
        Ok(false)
    }
}

/// Result of a session mutation together with the log records it produced.
#[derive(Debug)]
pub struct Outcome<T> {
    pub value: T,
    pub events: Vec<LogRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub participant_label: String,
    pub schedule: ParticipantSchedule,
    pub config: GameConfig,
    pub store_hash: String,
    pub model_id: String,
    pub created_at: DateTime<Utc>,
    pub rounds: Vec<Round>,
}

impl Session {
    pub fn create(
        session_id: impl Into<String>,
        participant_label: impl Into<String>,
        schedule: ParticipantSchedule,
        config: GameConfig,
        store: &EmbeddingStore,
        at: DateTime<Utc>,
    ) -> Outcome<Session> {
        let session = Session {
            session_id: session_id.into(),
            participant_label: participant_label.into(),
            schedule,
            config,
            store_hash: store.content_hash(),
            model_id: store.model_id().to_string(),
            created_at: at,
            rounds: Vec::new(),
        };
        let record = session.record(
            at,
            Event::SessionCreated {
                participant_label: session.participant_label.clone(),
                schedule: session.schedule.clone(),
                config: session.config.clone(),
                store_hash: session.store_hash.clone(),
                model_id: session.model_id.clone(),
            },
        );
        Outcome {
            value: session,
            events: vec![record],
        }
    }

    fn record(&self, ts: DateTime<Utc>, event: Event) -> LogRecord {
        LogRecord {
            ts,
            session_id: self.session_id.clone(),
            event,
        }
    }

    pub fn current_round(&self) -> Option<&Round> {
        self.rounds.last().filter(|r| !r.is_terminal())
    }

    fn current_round_mut(&mut self) -> Result<&mut Round, GameError> {
        self.rounds
            .last_mut()
            .filter(|r| !r.is_terminal())
            .ok_or(GameError::NoActiveRound)
    }

    pub fn rounds_of(&self, task: Task) -> usize {
        self.rounds.iter().filter(|r| r.task == task).count()
    }

    pub fn is_complete(&self) -> bool {
        self.rounds_of(Task::Task1) as u32 >= self.config.task1_rounds
            && self.rounds_of(Task::Task2) as u32 >= self.config.task2_rounds
            && self.rounds.iter().all(Round::is_terminal)
    }

    pub fn start_round(
        &mut self,
        task: Task,
        target_id: ScentId,
        reference_id: Option<ScentId>,
        at: DateTime<Utc>,
    ) -> Result<Outcome<usize>, GameError> {
        if self.current_round().is_some() {
            return Err(GameError::RoundInProgress);
        }
        if self.rounds_of(task) as u32 >= self.config.round_budget(task) {
            return Err(GameError::RoundBudgetExhausted { task });
        }
        let index = self.rounds.len();
        let round = Round::new(index, task, target_id, reference_id, &self.config, at)?;
        self.rounds.push(round);
        let rec = self.record(
            at,
            Event::RoundStarted {
                round: index,
                task,
                target_id,
                reference_id,
            },
        );
        Ok(Outcome {
            value: index,
            events: vec![rec],
        })
    }

    /// Opens the next round from the participant's schedule: description
    /// rounds first, then comparison rounds.
    pub fn start_next_scheduled_round(&mut self, at: DateTime<Utc>) -> Result<Outcome<usize>, GameError> {
        let done1 = self.rounds_of(Task::Task1);
        let done2 = self.rounds_of(Task::Task2);
        if (done1 as u32) < self.config.task1_rounds {
            let target = *self
                .schedule
                .task1_targets
                .get(done1)
                .ok_or_else(|| GameError::Schedule("schedule has too few description targets".into()))?;
            return self.start_round(Task::Task1, target, None, at);
        }
        if (done2 as u32) < self.config.task2_rounds {
            let pair = *self
                .schedule
                .task2_pairs
                .get(done2)
                .ok_or_else(|| GameError::Schedule("schedule has too few comparison pairs".into()))?;
            return self.start_round(Task::Task2, pair.target, Some(pair.reference), at);
        }
        Err(GameError::SessionComplete)
    }

    /// Marks a scent presentation (the timed sniff, or showing a guessed scent).
    pub fn reveal(&mut self, kind: RevealKind, at: DateTime<Utc>) -> Result<Outcome<Reveal>, GameError> {
        let round = self.current_round_mut()?;
        let scent_id = match kind {
            RevealKind::Target => round.target_id,
            RevealKind::Reference => round
                .current_reference_id
                .ok_or(GameError::NothingToReveal("description rounds have no reference"))?,
            RevealKind::Guess => round
                .guesses
                .last()
                .map(|g| g.guessed_id)
                .ok_or(GameError::NothingToReveal("no guess has been made yet"))?,
        };
        let reveal = Reveal { at, kind, scent_id };
        round.reveals.push(reveal.clone());
        let index = round.index;
        let rec = self.record(
            at,
            Event::ScentRevealed {
                round: index,
                kind,
                scent_id,
            },
        );
        Ok(Outcome {
            value: reveal,
            events: vec![rec],
        })
    }

    pub fn propose_guess(
        &self,
        text: &str,
        encoder: &dyn Encoder,
        store: &EmbeddingStore,
    ) -> Result<ProposedGuess, GameError> {
        let round = self.current_round().ok_or(GameError::NoActiveRound)?;
        round.propose_guess(text, &self.config, encoder, store)
    }

    /// Submits a description and lets the engine guess.
    pub fn submit_description(
        &mut self,
        text: &str,
        encoder: &dyn Encoder,
        store: &EmbeddingStore,
        at: DateTime<Utc>,
    ) -> Result<Outcome<GuessEvent>, GameError> {
        let proposed = self.propose_guess(text, encoder, store)?;
        let config = self.config.clone();
        let round = self.current_round_mut()?;
        let guess = round.guess_event(&proposed);
        let index = round.index;
        let finished = round.apply_guess(guess.clone(), &config, at);
        let status = round.status;
        let mut events = vec![
            self.record(
                at,
                Event::DescriptionSubmitted {
                    round: index,
                    text: proposed.text.clone(),
                },
            ),
            self.record(
                at,
                Event::GuessMade {
                    round: index,
                    guess: guess.clone(),
                },
            ),
        ];
        if finished {
            events.push(self.record(at, Event::RoundFinished { round: index, status }));
        }
        Ok(Outcome { value: guess, events })
    }

    /// The rating the current round expects next, if any.
    pub fn next_owed(&self) -> Option<OwedRating> {
        self.current_round().and_then(|r| r.owed.first().copied())
    }

    pub fn record_rating(&mut self, rating: Rating, at: DateTime<Utc>) -> Result<Outcome<RoundStatus>, GameError> {
        let config = self.config.clone();
        let round = match self.current_round_mut() {
            Ok(r) => r,
            Err(_) => {
                if rating.value > MAX_RATING {
                    return Err(GameError::RatingOutOfRange(rating.value));
                }
                return Err(GameError::NothingOwed);
            }
        };
        let finished = round.apply_rating(rating, &config, at)?;
        let (index, status) = (round.index, round.status);
        let mut events = vec![self.record(at, Event::RatingRecorded { round: index, rating })];
        if finished {
            events.push(self.record(at, Event::RoundFinished { round: index, status }));
        }
        Ok(Outcome { value: status, events })
    }

    /// Records `value` for whatever rating is owed next.
    pub fn record_next_rating(
        &mut self,
        kind: RatingKind,
        value: u8,
        at: DateTime<Utc>,
    ) -> Result<Outcome<RoundStatus>, GameError> {
        if value > MAX_RATING {
            return Err(GameError::RatingOutOfRange(value));
        }
        let head = self.next_owed().ok_or(GameError::NothingOwed)?;
        // A mismatched kind falls through to the ordering error.
        self.record_rating(
            Rating {
                kind,
                value,
                subject: head.subject,
            },
            at,
        )
    }
}

#[cfg(test)]
mod tests;
