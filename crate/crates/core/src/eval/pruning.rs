//! Tree walk that deletes every image contradicting an answer.
//!
//! Kept as a regression guard: with a noisy user it loses the target in most
//! searches, which is why the engine itself only reweights.

use serde::{Deserialize, Serialize};

use super::episode::{derive_seed, initial_constraint, EvalContext};
use crate::error::{Error, Result};
use crate::pivots::PivotSet;
use crate::relevance::{satisfies_hard, FeedbackConstraint};
use crate::ImageId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruningOutcome {
    pub target_eliminated: bool,
    pub questions: usize,
    pub survivors: usize,
}

/// Visits the attribute trees round-robin, asking each current pivot until
/// every tree bottoms out or `max_questions` is reached, and keeps only the
/// images that satisfy every answer outright.
pub fn hard_pruning_walk(
    ctx: &EvalContext<'_>,
    target: ImageId,
    seed: u64,
    max_questions: Option<usize>,
) -> Result<PruningOutcome> {
    let index = ctx.index;
    let space = &index.space;
    if target >= index.n() {
        return Err(Error::UnknownImage(target));
    }
    let mut alive = vec![true; index.n()];
    let mut prune = |c: &FeedbackConstraint| {
        for (i, keep) in alive.iter_mut().enumerate() {
            *keep = *keep && satisfies_hard(space, i, c);
        }
    };
    let mut pivots = PivotSet::at_roots(&index.trees);
    let init = initial_constraint(ctx, target, seed)?;
    prune(&init);
    pivots.observe(&index.trees, &init)?;

    let mut user = ctx.user(derive_seed(seed, 0x9a0e))?;
    let limit = max_questions.unwrap_or(usize::MAX);
    let mut questions = 0;
    'walk: while !pivots.is_exhausted() {
        for m in 0..index.m() {
            if questions >= limit {
                break 'walk;
            }
            let Some(p) = pivots.pivot(&index.trees, m) else {
                continue;
            };
            let (response, _) = user.relative_response(space, target, p, m)?;
            let c = FeedbackConstraint::new(p, m, response);
            prune(&c);
            pivots.descend(&index.trees, m, response)?;
            questions += 1;
        }
    }
    Ok(PruningOutcome {
        target_eliminated: !alive[target],
        questions,
        survivors: alive.iter().filter(|&&a| a).count(),
    })
}
