//! Counterbalanced per-participant round assignments.
//!
//! Description-round targets are consecutive pairs from a stream of shuffled
//! permutations of the catalogue, so every scent is used once per block of
//! ten participants. Comparison rounds visit each family once as the target
//! family, in an order given by a cyclic 4×4 Latin square; one of the four
//! rounds (rotating) draws its reference from the target's own family, the
//! other three from a different family chosen by a rotating offset. Targets
//! and references are drawn from per-family shuffled decks, which keeps every
//! scent's target count within one of every other's.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GameError;
use crate::catalogue::{Catalogue, Family};
use crate::vecmath::ScentId;

pub const TASK1_ROUNDS: usize = 2;
pub const TASK2_ROUNDS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulePair {
    pub reference: ScentId,
    pub target: ScentId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantSchedule {
    pub participant: usize,
    pub seed: u64,
    pub task1_targets: Vec<ScentId>,
    pub task2_pairs: Vec<SchedulePair>,
}

struct Deck {
    members: Vec<ScentId>,
    queue: VecDeque<ScentId>,
}

impl Deck {
    fn new(members: Vec<ScentId>) -> Self {
        Deck {
            members,
            queue: VecDeque::new(),
        }
    }

    fn refill(&mut self, rng: &mut ChaCha8Rng) {
        let mut block = self.members.clone();
        block.shuffle(rng);
        self.queue.extend(block);
    }

    fn draw(&mut self, rng: &mut ChaCha8Rng) -> ScentId {
        if self.queue.is_empty() {
            self.refill(rng);
        }
        self.queue.pop_front().expect("deck refilled")
    }

    /// Draws the first card different from `avoid`, leaving skipped cards on top.
    fn draw_except(&mut self, avoid: ScentId, rng: &mut ChaCha8Rng) -> ScentId {
        if self.queue.iter().all(|&c| c == avoid) {
            self.refill(rng);
        }
        let pos = self
            .queue
            .iter()
            .position(|&c| c != avoid)
            .expect("a deck of several members holds another card");
        self.queue.remove(pos).expect("position is in range")
    }
}

pub fn generate_schedule(
    n_participants: usize,
    catalogue: &Catalogue,
    seed: u64,
) -> Result<Vec<ParticipantSchedule>, GameError> {
    if n_participants == 0 {
        return Err(GameError::Schedule("at least one participant is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let all: Vec<ScentId> = catalogue.entries().iter().map(|e| e.id).collect();
    let mut task1_deck = Deck::new(all);
    let mut targets: Vec<Deck> = Family::ALL
        .iter()
        .map(|&f| Deck::new(catalogue.family_members(f)))
        .collect();
    let mut references: Vec<Deck> = Family::ALL
        .iter()
        .map(|&f| Deck::new(catalogue.family_members(f)))
        .collect();
    if targets.iter().any(|d| d.members.len() < 2) {
        return Err(GameError::Schedule("every family needs at least two scents".into()));
    }

    let mut out = Vec::with_capacity(n_participants);
    for p in 0..n_participants {
        let task1_targets = (0..TASK1_ROUNDS).map(|_| task1_deck.draw(&mut rng)).collect();

        let row = p % Family::ALL.len();
        let same_slot = (p / Family::ALL.len()) % TASK2_ROUNDS;
        let mut task2_pairs = Vec::with_capacity(TASK2_ROUNDS);
        for k in 0..TASK2_ROUNDS {
            let fam = (row + k) % Family::ALL.len();
            let target = targets[fam].draw(&mut rng);
            let reference = if k == same_slot {
                references[fam].draw_except(target, &mut rng)
            } else {
                let other = (fam + 1 + (p + k) % 3) % Family::ALL.len();
                references[other].draw(&mut rng)
            };
            task2_pairs.push(SchedulePair { reference, target });
        }
        out.push(ParticipantSchedule {
            participant: p,
            seed,
            task1_targets,
            task2_pairs,
        });
    }
    Ok(out)
}
