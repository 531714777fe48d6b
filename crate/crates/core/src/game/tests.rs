use std::collections::{BTreeMap, HashMap};

use chrono::{Duration, TimeZone};
use proptest::prelude::*;

use super::*;
use crate::catalogue::{build_embedding_store, Catalogue};
use crate::providers::MockEncoder;

const DIMS: usize = 24;

/// Encoder with hand-placed vectors for chosen texts; anything else falls
/// through to the deterministic mock.
struct TableEncoder {
    table: HashMap<String, EmbeddingVector>,
    fallback: MockEncoder,
}

impl TableEncoder {
    fn new() -> Self {
        TableEncoder {
            table: HashMap::new(),
            fallback: MockEncoder::new(DIMS, 3).with_model_id("table"),
        }
    }

    fn with(mut self, text: &str, v: Vec<f64>) -> Self {
        self.table.insert(text.to_string(), EmbeddingVector::new(v).unwrap());
        self
    }
}

impl Encoder for TableEncoder {
    fn model_id(&self) -> &str {
        "table"
    }
    fn dims(&self) -> usize {
        DIMS
    }
    fn encode_raw(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        match self.table.get(text) {
            Some(v) => Ok(v.clone()),
            None => self.fallback.encode_raw(text),
        }
    }
}

fn id(i: u32) -> ScentId {
    ScentId::new(i).unwrap()
}

fn e(axis: usize) -> Vec<f64> {
    EmbeddingVector::basis(DIMS, axis).into_inner()
}

/// Scent i sits on axis i-1.
fn basis_store() -> EmbeddingStore {
    let entries: BTreeMap<ScentId, EmbeddingVector> =
        (1..=20).map(|i| (id(i), EmbeddingVector::basis(DIMS, i as usize - 1))).collect();
    EmbeddingStore::new("basis", entries).unwrap()
}

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 3, 1, 9, 0, 0).unwrap()
}

fn schedule() -> ParticipantSchedule {
    ParticipantSchedule {
        participant: 0,
        seed: 0,
        task1_targets: vec![id(4), id(7)],
        task2_pairs: vec![
            SchedulePair { reference: id(16), target: id(10) },
            SchedulePair { reference: id(1), target: id(6) },
            SchedulePair { reference: id(12), target: id(13) },
            SchedulePair { reference: id(20), target: id(3) },
        ],
    }
}

struct Harness {
    session: Session,
    log: Vec<LogRecord>,
    clock: DateTime<Utc>,
}

impl Harness {
    fn new(config: GameConfig, store: &EmbeddingStore) -> Self {
        let out = Session::create("s-1", "p01", schedule(), config, store, t0());
        Harness {
            session: out.value,
            log: out.events,
            clock: t0(),
        }
    }

    fn tick(&mut self) -> DateTime<Utc> {
        self.clock += Duration::seconds(1);
        self.clock
    }

    fn start(&mut self, task: Task, target: u32, reference: Option<u32>) -> Result<usize, GameError> {
        let at = self.tick();
        let out = self.session.start_round(task, id(target), reference.map(id), at)?;
        self.log.extend(out.events);
        Ok(out.value)
    }

    fn describe(&mut self, text: &str, enc: &dyn Encoder, store: &EmbeddingStore) -> Result<GuessEvent, GameError> {
        let at = self.tick();
        let out = self.session.submit_description(text, enc, store, at)?;
        self.log.extend(out.events);
        Ok(out.value)
    }

    fn rate(&mut self, kind: RatingKind, value: u8) -> Result<RoundStatus, GameError> {
        let at = self.tick();
        let out = self.session.record_next_rating(kind, value, at)?;
        self.log.extend(out.events);
        Ok(out.value)
    }

    fn rate_all_owed(&mut self, value: u8) {
        while let Some(o) = self.session.next_owed() {
            self.rate(o.kind, value).unwrap();
        }
    }

    fn round(&self) -> &Round {
        self.session.rounds.last().unwrap()
    }
}

fn no_initial() -> GameConfig {
    GameConfig {
        initial_ratings: false,
        ..GameConfig::default()
    }
}

/// Brute-force argmax with lowest-id tie-break, written independently of vecmath.
fn oracle_argmax(query: &[f64], store: &EmbeddingStore, exclude: &[ScentId]) -> (ScentId, f64) {
    let qn = query.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut best: Option<(ScentId, f64)> = None;
    for i in 1..=20 {
        let sid = id(i);
        if exclude.contains(&sid) {
            continue;
        }
        let v = store.get(sid).as_slice();
        let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let c = query.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (qn * vn);
        if best.is_none_or(|(_, s)| c > s) {
            best = Some((sid, c));
        }
    }
    best.unwrap()
}

#[test]
fn task1_round_has_no_reference() {
    let store = basis_store();
    let mut h = Harness::new(GameConfig::default(), &store);
    h.start(Task::Task1, 4, None).unwrap();
    assert_eq!(h.round().initial_reference_id, None);
    assert_eq!(h.round().current_reference_id, None);
    assert_eq!(h.round().target_id, id(4));
}

#[test]
fn task2_round_starts_on_reference() {
    let store = basis_store();
    let mut h = Harness::new(no_initial(), &store);
    h.start(Task::Task2, 10, Some(16)).unwrap();
    assert_eq!(h.round().current_reference_id, Some(id(16)));
    assert_eq!(h.round().status, RoundStatus::AwaitingDescription);
}

#[test]
fn start_round_preconditions() {
    let store = basis_store();
    let mut h = Harness::new(no_initial(), &store);
    assert!(matches!(h.start(Task::Task2, 5, Some(5)), Err(GameError::ReferenceIsTarget(_))));
    assert!(matches!(h.start(Task::Task2, 5, None), Err(GameError::MissingReference)));
    assert!(matches!(h.start(Task::Task1, 5, Some(6)), Err(GameError::UnexpectedReference)));
    assert!(h.session.rounds.is_empty());

    let enc = TableEncoder::new().with("hit", e(4));
    h.start(Task::Task1, 5, None).unwrap();
    assert!(matches!(h.start(Task::Task1, 6, None), Err(GameError::RoundInProgress)));
    h.describe("hit", &enc, &store).unwrap();
    h.start(Task::Task1, 6, None).unwrap();
    h.describe("hit", &enc, &store).unwrap();
    h.describe("hit", &enc, &store).unwrap();
    h.describe("hit", &enc, &store).unwrap();
    assert!(matches!(
        h.start(Task::Task1, 7, None),
        Err(GameError::RoundBudgetExhausted { task: Task::Task1 })
    ));
}

#[test]
fn task1_mock_store_guess_matches_exhaustive_scan() {
    let cat = Catalogue::bundled();
    let enc = MockEncoder::new(32, 11);
    let store = build_embedding_store(&cat, &enc).unwrap();
    let mut h = Harness::new(no_initial(), &store);
    h.start(Task::Task1, 4, None).unwrap();
    let text = cat.get(id(4)).catalogue_description.clone();
    let q = encode_text(&enc, &text).unwrap();
    let (want, score) = oracle_argmax(q.as_slice(), &store, &[]);
    assert_eq!(want, id(4));
    let g = h.describe(&text, &enc, &store).unwrap();
    assert_eq!(g.guessed_id, want);
    assert!((g.score - score).abs() < 1e-12);
    assert!(g.correct);
    assert_eq!(g.query_mode, QueryMode::Standalone);
    assert_eq!(h.round().status, RoundStatus::Solved);

    // Arbitrary text: engine agrees with the brute-force scan.
    h.start(Task::Task1, 7, None).unwrap();
    let g = h.describe("warm, resinous and faintly sweet", &enc, &store).unwrap();
    let q = encode_text(&enc, "warm, resinous and faintly sweet").unwrap();
    assert_eq!(g.guessed_id, oracle_argmax(q.as_slice(), &store, &[]).0);
}

#[test]
fn three_wrong_guesses_exhaust_task1() {
    let store = basis_store();
    let enc = TableEncoder::new().with("a", e(0)).with("b", e(1)).with("c", e(2));
    let mut h = Harness::new(no_initial(), &store);
    h.start(Task::Task1, 9, None).unwrap();
    for t in ["a", "b"] {
        h.describe(t, &enc, &store).unwrap();
        assert_eq!(h.round().status, RoundStatus::AwaitingDescription);
    }
    h.describe("c", &enc, &store).unwrap();
    assert_eq!(h.round().status, RoundStatus::Exhausted);
    assert_eq!(h.round().guesses.len(), 3);
    assert!(matches!(h.describe("a", &enc, &store), Err(GameError::NoActiveRound)));
    assert_eq!(h.log.last().unwrap().event, Event::RoundFinished { round: 0, status: RoundStatus::Exhausted });
}

#[test]
fn description_is_trimmed_only() {
    let store = basis_store();
    let enc = TableEncoder::new().with("Smells  of Pine, really!", e(9));
    let mut h = Harness::new(no_initial(), &store);
    h.start(Task::Task1, 10, None).unwrap();
    let g = h.describe("  \n Smells  of Pine, really!\t ", &enc, &store).unwrap();
    assert_eq!(g.description_text, "Smells  of Pine, really!");
    assert_eq!(g.guessed_id, id(10));
    assert!(matches!(h.describe("   ", &enc, &store), Err(GameError::NoActiveRound)));
}

#[test]
fn empty_description_rejected_without_state_change() {
    let store = basis_store();
    let enc = TableEncoder::new();
    let mut h = Harness::new(no_initial(), &store);
    h.start(Task::Task1, 10, None).unwrap();
    let before = h.session.clone();
    assert!(matches!(h.describe(" \t", &enc, &store), Err(GameError::EmptyDescription)));
    assert_eq!(h.session, before);
}

#[test]
fn initial_ratings_gate_first_description() {
    let store = basis_store();
    let enc = TableEncoder::new();
    let mut h = Harness::new(GameConfig::default(), &store);
    h.start(Task::Task1, 4, None).unwrap();
    assert_eq!(h.round().status, RoundStatus::AwaitingRating);
    assert!(matches!(
        h.describe("x", &enc, &store),
        Err(GameError::NotAcceptingDescriptions { .. })
    ));
    assert!(matches!(h.rate(RatingKind::Intensity, 5), Err(GameError::RatingOutOfOrder { .. })));
    assert_eq!(h.rate(RatingKind::Familiarity, 6).unwrap(), RoundStatus::AwaitingRating);
    assert_eq!(h.rate(RatingKind::Intensity, 7).unwrap(), RoundStatus::AwaitingDescription);
    assert_eq!(h.round().rating_of(RatingKind::Familiarity, id(4)), Some(6));
    assert!(matches!(h.rate(RatingKind::Familiarity, 6), Err(GameError::NothingOwed)));
}

#[test]
fn task2_initial_ratings_order() {
    let store = basis_store();
    let mut h = Harness::new(GameConfig::default(), &store);
    h.start(Task::Task2, 10, Some(16)).unwrap();
    let owed: Vec<(RatingKind, RatingSubject)> = h.round().owed.iter().map(|o| (o.kind, o.subject)).collect();
    assert_eq!(
        owed,
        vec![
            (RatingKind::Familiarity, RatingSubject::Scent(id(16))),
            (RatingKind::Intensity, RatingSubject::Scent(id(16))),
            (RatingKind::Familiarity, RatingSubject::Scent(id(10))),
            (RatingKind::Intensity, RatingSubject::Scent(id(10))),
            (RatingKind::Similarity, RatingSubject::Pair(id(16), id(10))),
        ]
    );
    h.rate_all_owed(4);
    assert_eq!(h.round().status, RoundStatus::AwaitingDescription);
    assert_eq!(h.round().initial_similarity(), Some(4));
}

#[test]
fn task2_chained_query_matches_bruteforce() {
    let store = basis_store();
    // Reference 1 lies on e0; the description points at e1.
    let enc = TableEncoder::new().with("fresher and greener", e(1));
    let mut h = Harness::new(no_initial(), &store);
    h.start(Task::Task2, 2, Some(1)).unwrap();
    let g = h.describe("fresher and greener", &enc, &store).unwrap();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut q = vec![0.0; DIMS];
    q[0] = s;
    q[1] = s;
    let (want, score) = oracle_argmax(&q, &store, &[]);
    // Exact tie between scents 1 and 2; lowest id wins.
    assert_eq!(want, id(1));
    assert_eq!(g.guessed_id, want);
    assert!((g.score - score).abs() < 1e-12);
    assert_eq!(g.reference_id, Some(id(1)));
    assert_eq!(g.query_mode, QueryMode::Chained);
}

#[test]
fn wrong_task2_guess_becomes_reference_and_owes_ratings() {
    let store = basis_store();
    let mut d = e(15);
    d[8] = 3.0;
    let mut h = Harness::new(no_initial(), &store);
    let enc = TableEncoder::new().with("sharper", d);
    h.start(Task::Task2, 10, Some(16)).unwrap();
    let g = h.describe("sharper", &enc, &store).unwrap();
    assert_eq!(g.guessed_id, id(9));
    assert!(!g.correct);
    assert_eq!(h.round().current_reference_id, Some(id(9)));
    assert_eq!(h.round().status, RoundStatus::AwaitingRating);

    assert!(matches!(h.rate(RatingKind::Validity, 11), Err(GameError::RatingOutOfRange(11))));
    assert!(matches!(h.rate(RatingKind::Similarity, 2), Err(GameError::RatingOutOfOrder { .. })));
    assert_eq!(h.rate(RatingKind::Validity, 8).unwrap(), RoundStatus::AwaitingRating);
    assert_eq!(h.rate(RatingKind::Similarity, 2).unwrap(), RoundStatus::AwaitingDescription);
    let g = &h.round().guesses[0];
    assert_eq!(g.validity.unwrap().value, 8);
    assert_eq!(g.similarity_to_target.unwrap().value, 2);
    assert_eq!(g.similarity_to_target.unwrap().subject, RatingSubject::Pair(id(9), id(10)));
}

#[test]
fn correct_guess_auto_records_tens() {
    let store = basis_store();
    let enc = TableEncoder::new().with("piney", e(9));
    let mut h = Harness::new(no_initial(), &store);
    h.start(Task::Task2, 10, Some(16)).unwrap();
    // (e15 + e9)/√2 ties 10 and 16; 10 is lower.
    let g = h.describe("piney", &enc, &store).unwrap();
    assert!(g.correct);
    assert_eq!(g.validity.unwrap().value, 10);
    assert_eq!(g.similarity_to_target.unwrap().value, 10);
    assert_eq!(h.round().status, RoundStatus::Solved);
    assert!(h.round().owed.is_empty());
    let validity = h.round().ratings.iter().filter(|r| r.kind == RatingKind::Validity).count();
    assert_eq!(validity, 1);
}

#[test]
fn fifth_wrong_guess_exhausts_after_its_ratings() {
    let store = basis_store();
    let enc = TableEncoder::new().with("away", e(21));
    let mut h = Harness::new(no_initial(), &store);
    h.start(Task::Task2, 10, Some(16)).unwrap();
    for k in 1..=5 {
        let g = h.describe("away", &enc, &store).unwrap();
        assert!(!g.correct);
        if k < 5 {
            h.rate_all_owed(3);
            assert_eq!(h.round().status, RoundStatus::AwaitingDescription);
        }
    }
    assert_eq!(h.round().status, RoundStatus::AwaitingRating);
    h.rate(RatingKind::Validity, 1).unwrap();
    assert_eq!(h.rate(RatingKind::Similarity, 1).unwrap(), RoundStatus::Exhausted);
    let r = h.round();
    assert_eq!(r.guesses.len(), 5);
    assert_eq!(
        r.ratings.iter().filter(|x| x.kind == RatingKind::Validity).count(),
        r.incorrect_guesses().count()
    );
}

#[test]
fn reference_chain_follows_wrong_guesses() {
    let store = basis_store();
    // Each description pulls strongly toward a distinct scent.
    let mut enc = TableEncoder::new();
    for (t, axis) in [("to3", 2usize), ("to7", 6), ("to12", 11)] {
        let mut v = vec![0.0; DIMS];
        v[axis] = 5.0;
        enc = enc.with(t, v);
    }
    let mut h = Harness::new(no_initial(), &store);
    h.start(Task::Task2, 10, Some(16)).unwrap();
    let mut refs = Vec::new();
    for t in ["to3", "to7", "to12"] {
        let g = h.describe(t, &enc, &store).unwrap();
        refs.push(g.reference_id.unwrap());
        h.rate_all_owed(5);
    }
    assert_eq!(refs, vec![id(16), id(3), id(7)]);
    assert_eq!(h.round().reference_chain(), vec![id(16), id(3), id(7), id(12)]);
}

#[test]
fn cumulative_mode_uses_initial_reference_and_summed_diffs() {
    let store = basis_store();
    let mut a = vec![0.0; DIMS];
    a[2] = 5.0;
    let mut b = vec![0.0; DIMS];
    b[6] = 5.0;
    let enc = TableEncoder::new().with("a", a.clone()).with("b", b.clone());
    let config = GameConfig {
        task2_mode: Task2Mode::Cumulative,
        ..no_initial()
    };
    let mut h = Harness::new(config, &store);
    h.start(Task::Task2, 10, Some(16)).unwrap();
    let g1 = h.describe("a", &enc, &store).unwrap();
    h.rate_all_owed(5);
    let g2 = h.describe("b", &enc, &store).unwrap();
    assert_eq!(g1.query_mode, QueryMode::Cumulative);
    assert_eq!(g2.reference_id, Some(id(16)));
    // Oracle: e15 + normalize(a/|a| + b/|b|), then argmax.
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut q = e(15);
    q[2] += s;
    q[6] += s;
    let (want, score) = oracle_argmax(&q, &store, &[]);
    assert_eq!(g2.guessed_id, want);
    assert!((g2.score - score).abs() < 1e-12);
    // Current reference still tracks the last wrong guess.
    assert_eq!(h.round().current_reference_id, Some(g2.guessed_id));
}

#[test]
fn cancelling_description_is_an_error() {
    let store = basis_store();
    let mut v = e(15);
    v[15] = -1.0;
    let enc = TableEncoder::new().with("opposite", v);
    let mut h = Harness::new(no_initial(), &store);
    h.start(Task::Task2, 10, Some(16)).unwrap();
    let before = h.session.clone();
    assert!(matches!(
        h.describe("opposite", &enc, &store),
        Err(GameError::DescriptionCancelsReference)
    ));
    assert_eq!(h.session, before);
}

#[test]
fn dedupe_excludes_prior_wrong_guesses() {
    let store = basis_store();
    let mut v = e(0);
    v[1] = 0.5;
    let enc = TableEncoder::new().with("same", v.clone());
    for (dedupe, want) in [(false, [1, 1, 1]), (true, [1, 2, 3])] {
        let mut h = Harness::new(
            GameConfig {
                dedupe_guesses: dedupe,
                ..no_initial()
            },
            &store,
        );
        h.start(Task::Task1, 20, None).unwrap();
        let got: Vec<u32> = (0..3)
            .map(|_| h.describe("same", &enc, &store).unwrap().guessed_id.get())
            .collect();
        assert_eq!(got, want, "dedupe={dedupe}");
    }
}

#[test]
fn concat_mode_joins_descriptions() {
    let store = basis_store();
    let enc = TableEncoder::new()
        .with("first", e(0))
        .with("second", e(1))
        .with("first. second", e(4));
    let config = GameConfig {
        concat_descriptions: true,
        ..no_initial()
    };
    let mut h = Harness::new(config, &store);
    h.start(Task::Task1, 5, None).unwrap();
    let g1 = h.describe("first", &enc, &store).unwrap();
    assert_eq!(g1.query_mode, QueryMode::Standalone);
    let g2 = h.describe("second", &enc, &store).unwrap();
    assert_eq!(g2.query_mode, QueryMode::Concatenated);
    assert_eq!(g2.description_text, "second");
    assert!(g2.correct);
}

#[test]
fn reveals_are_timestamped() {
    let store = basis_store();
    let enc = TableEncoder::new().with("away", e(21));
    let mut h = Harness::new(no_initial(), &store);
    h.start(Task::Task2, 10, Some(16)).unwrap();
    assert!(matches!(h.session.reveal(RevealKind::Guess, t0()), Err(GameError::NothingToReveal(_))));
    let at = h.tick();
    let r = h.session.reveal(RevealKind::Reference, at).unwrap();
    assert_eq!(r.value.scent_id, id(16));
    assert_eq!(r.value.at, at);
    h.log.extend(r.events);
    h.describe("away", &enc, &store).unwrap();
    let at = h.tick();
    let r = h.session.reveal(RevealKind::Guess, at).unwrap();
    assert_eq!(r.value.scent_id, h.round().guesses[0].guessed_id);
    h.log.extend(r.events);
    assert_eq!(h.round().reveals.len(), 2);
    assert_eq!(replay_session(&h.log).unwrap().unwrap(), h.session);
}

#[test]
fn scheduled_rounds_run_in_order() {
    let store = basis_store();
    let enc = TableEncoder::new().with("t4", e(3)).with("t7", e(6));
    let mut h = Harness::new(no_initial(), &store);
    for text in ["t4", "t7"] {
        let at = h.tick();
        h.session.start_next_scheduled_round(at).unwrap();
        assert!(h.describe(text, &enc, &store).unwrap().correct);
    }
    let mut seen = Vec::new();
    for _ in 0..4 {
        let at = h.tick();
        h.session.start_next_scheduled_round(at).unwrap();
        let r = h.round();
        seen.push((r.initial_reference_id.unwrap().get(), r.target_id.get()));
        let target_axis = r.target_id.index();
        let mut v = vec![0.0; DIMS];
        v[target_axis] = 10.0;
        let enc = TableEncoder::new().with("go", v);
        assert!(h.describe("go", &enc, &store).unwrap().correct);
    }
    assert_eq!(seen, vec![(16, 10), (1, 6), (12, 13), (20, 3)]);
    assert!(h.session.is_complete());
    let at = h.tick();
    assert!(matches!(h.session.start_next_scheduled_round(at), Err(GameError::SessionComplete)));
}

#[test]
fn log_round_trip_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("logs").join("s-1.jsonl");
    let store = basis_store();
    let enc = TableEncoder::new().with("a", e(0)).with("pine", e(9));
    let mut h = Harness::new(GameConfig::default(), &store);
    h.start(Task::Task1, 10, None).unwrap();
    h.rate_all_owed(6);
    h.describe("a", &enc, &store).unwrap();
    h.describe("pine", &enc, &store).unwrap();
    h.start(Task::Task2, 3, Some(16)).unwrap();
    h.rate_all_owed(5);
    h.describe("a", &enc, &store).unwrap();
    h.rate(RatingKind::Validity, 8).unwrap();

    let mut w = LogWriter::open(&path).unwrap();
    let (head, tail) = h.log.split_at(3);
    w.append(head).unwrap();
    w.append(tail).unwrap();
    let records = read_log(&path).unwrap();
    assert_eq!(records, h.log);

    let replayed = replay_session(&records).unwrap().unwrap();
    assert_eq!(replayed, h.session);
    let verified = replay_verified(&records, &store, &enc).unwrap().unwrap();
    assert_eq!(verified, h.session);
    assert_eq!(verified.rounds[0].status, RoundStatus::Solved);
}

#[test]
fn log_dir_groups_by_session() {
    let dir = tempfile::tempdir().unwrap();
    let store = basis_store();
    let enc = TableEncoder::new().with("pine", e(9));
    let mut a = Harness::new(GameConfig::default(), &store);
    a.start(Task::Task1, 10, None).unwrap();
    a.rate_all_owed(4);
    a.describe("pine", &enc, &store).unwrap();
    let out = Session::create("s-2", "p02", schedule(), GameConfig::default(), &store, t0());
    let b = out.value;

    // One file holding both sessions interleaved, one stray non-log file.
    let mut w = LogWriter::open(dir.path().join("b.jsonl")).unwrap();
    w.append(&a.log[..1]).unwrap();
    w.append(&out.events).unwrap();
    w.append(&a.log[1..]).unwrap();
    std::fs::write(dir.path().join("notes.txt"), "not a log").unwrap();
    LogWriter::open(dir.path().join("a.jsonl")).unwrap();

    let sessions = load_sessions(dir.path()).unwrap();
    assert_eq!(sessions, vec![a.session.clone(), b]);
    let empty = tempfile::tempdir().unwrap();
    assert!(load_sessions(empty.path()).unwrap().is_empty());
    assert!(load_sessions(empty.path().join("missing")).is_err());
}

#[test]
fn log_lines_have_the_wire_shape() {
    let store = basis_store();
    let h = Harness::new(GameConfig::default(), &store);
    let line = serde_json::to_value(&h.log[0]).unwrap();
    let obj = line.as_object().unwrap();
    let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["payload", "session_id", "ts", "type"]);
    assert_eq!(obj["type"], "session_created");
    assert_eq!(obj["payload"]["store_hash"], store.content_hash());
}

#[test]
fn replay_against_other_store_diverges() {
    let store = basis_store();
    let enc = TableEncoder::new().with("pine", e(9));
    let mut h = Harness::new(no_initial(), &store);
    h.start(Task::Task1, 10, None).unwrap();
    h.describe("pine", &enc, &store).unwrap();
    let cat = Catalogue::bundled();
    let other = build_embedding_store(&cat, &MockEncoder::new(DIMS, 1)).unwrap();
    assert!(matches!(
        replay_verified(&h.log, &other, &enc),
        Err(GameError::StoreMismatch { .. })
    ));
    // Same store, different encoder: the recomputed guess no longer matches.
    let drifted = TableEncoder::new().with("pine", e(3));
    assert!(matches!(
        replay_verified(&h.log, &store, &drifted),
        Err(GameError::ReplayDivergence { .. })
    ));
}

#[test]
fn empty_log_is_empty_session() {
    assert!(replay_session(&[]).unwrap().is_none());
    assert!(parse_log("\n\n").unwrap().is_empty());
}

#[test]
fn corrupt_line_reports_line_number() {
    let store = basis_store();
    let h = Harness::new(GameConfig::default(), &store);
    let good = serde_json::to_string(&h.log[0]).unwrap();
    let text = format!("{good}\n{{\"ts\": oops\n");
    match parse_log(&text) {
        Err(GameError::CorruptLog { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected corrupt log, got {other:?}"),
    }
}

#[test]
fn tampered_guess_is_caught_even_without_store() {
    let store = basis_store();
    let enc = TableEncoder::new().with("a", e(0));
    let mut h = Harness::new(no_initial(), &store);
    h.start(Task::Task1, 10, None).unwrap();
    h.describe("a", &enc, &store).unwrap();
    let mut log = h.log.clone();
    for r in &mut log {
        if let Event::GuessMade { guess, .. } = &mut r.event {
            guess.correct = true;
        }
    }
    assert!(matches!(replay_session(&log), Err(GameError::ReplayDivergence { .. })));
}

#[derive(Debug, Clone)]
enum Action {
    Describe(usize),
    Rate(u8, u8),
    Start(bool),
}

fn action() -> impl Strategy<Value = Action> {
    prop_oneof![
        3 => (0usize..6).prop_map(Action::Describe),
        3 => (0u8..4, 0u8..12).prop_map(|(k, v)| Action::Rate(k, v)),
        1 => any::<bool>().prop_map(Action::Start),
    ]
}

const KINDS: [RatingKind; 4] = [
    RatingKind::Familiarity,
    RatingKind::Intensity,
    RatingKind::Similarity,
    RatingKind::Validity,
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn random_call_sequences_keep_invariants(
        actions in proptest::collection::vec(action(), 1..80),
        initial in any::<bool>(),
        dedupe in any::<bool>(),
        cumulative in any::<bool>(),
    ) {
        let cat = Catalogue::bundled();
        let enc = MockEncoder::new(16, 5);
        let store = build_embedding_store(&cat, &enc).unwrap();
        let config = GameConfig {
            initial_ratings: initial,
            dedupe_guesses: dedupe,
            task2_mode: if cumulative { Task2Mode::Cumulative } else { Task2Mode::Chained },
            ..GameConfig::default()
        };
        let texts: Vec<String> = (0..6)
            .map(|i| cat.get(id(i * 3 + 1)).catalogue_description.clone())
            .collect();
        let mut h = Harness::new(config.clone(), &store);
        for a in actions {
            match a {
                Action::Describe(i) => { let _ = h.describe(&texts[i], &enc, &store); }
                Action::Rate(k, v) => { let _ = h.rate(KINDS[k as usize], v); }
                Action::Start(task2) => {
                    let at = h.tick();
                    let r = if task2 {
                        let n = h.session.rounds_of(Task::Task2);
                        let p = schedule().task2_pairs[n.min(3)];
                        h.session.start_round(Task::Task2, p.target, Some(p.reference), at)
                    } else {
                        h.session.start_next_scheduled_round(at)
                    };
                    if let Ok(out) = r { h.log.extend(out.events); }
                }
            }
        }
        prop_assert!(h.session.rounds_of(Task::Task1) <= 2);
        prop_assert!(h.session.rounds_of(Task::Task2) <= 4);
        for r in &h.session.rounds {
            prop_assert!(r.guesses.len() as u32 <= config.guess_limit(r.task));
            let solved = r.guesses.last().is_some_and(|g| g.guessed_id == r.target_id);
            prop_assert_eq!(r.status == RoundStatus::Solved, solved);
            for g in &r.guesses {
                if g.correct {
                    prop_assert_eq!(g.validity.map(|x| x.value), Some(10));
                    prop_assert_eq!(g.similarity_to_target.map(|x| x.value), Some(10));
                }
            }
            if r.task == Task::Task2 {
                let refs: Vec<ScentId> = r.guesses.iter().map(|g| g.reference_id.unwrap()).collect();
                if config.task2_mode == Task2Mode::Chained {
                    let chain = r.reference_chain();
                    prop_assert_eq!(&chain[..refs.len()], &refs[..]);
                }
                if let Some(last_wrong) = r.incorrect_guesses().last() {
                    prop_assert_eq!(r.current_reference_id, Some(last_wrong.guessed_id));
                }
                let validity = r.ratings.iter().filter(|x| x.kind == RatingKind::Validity).count();
                let rated_wrong = r.incorrect_guesses().filter(|g| g.validity.is_some()).count();
                let correct = r.guesses.iter().filter(|g| g.correct).count();
                prop_assert_eq!(validity, rated_wrong + correct);
                if r.is_terminal() || r.status == RoundStatus::AwaitingDescription {
                    prop_assert_eq!(validity, r.guesses.len());
                }
            }
        }
        let replayed = replay_verified(&h.log, &store, &enc).unwrap().unwrap();
        prop_assert_eq!(replayed, h.session);
    }
}
