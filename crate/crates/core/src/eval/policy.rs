use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Feedback-gathering strategies compared by the experiment harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Policy {
    /// Expected-entropy choice among the current tree pivots.
    ActivePivots,
    /// Tree pivots, attributes visited in shuffled round-robin order.
    PivotsRoundRobin,
    /// Expected-entropy choice among every unasked (image, attribute) pair.
    ActiveExhaustive,
    /// Most relevant image with a random attribute.
    Top,
    /// Random image with a random attribute.
    Passive,
    /// Binary feedback on the image closest to the SVM decision boundary.
    BinaryActive,
    /// Binary feedback on a random image.
    BinaryPassive,
    /// Eight self-chosen relative statements per round about the top 16.
    WhittleFree,
    /// Binary labels on the closest and farthest quarter of the top 16.
    BinaryFree,
}

impl Policy {
    pub const ALL: [Policy; 9] = [
        Policy::ActivePivots,
        Policy::PivotsRoundRobin,
        Policy::ActiveExhaustive,
        Policy::Top,
        Policy::Passive,
        Policy::BinaryActive,
        Policy::BinaryPassive,
        Policy::WhittleFree,
        Policy::BinaryFree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::ActivePivots => "ACTIVE_PIVOTS",
            Policy::PivotsRoundRobin => "PIVOTS_ROUND_ROBIN",
            Policy::ActiveExhaustive => "ACTIVE_EXHAUSTIVE",
            Policy::Top => "TOP",
            Policy::Passive => "PASSIVE",
            Policy::BinaryActive => "BINARY_ACTIVE",
            Policy::BinaryPassive => "BINARY_PASSIVE",
            Policy::WhittleFree => "WHITTLE_FREE",
            Policy::BinaryFree => "BINARY_FREE",
        }
    }

    /// Whether this policy gathers relative attribute statements.
    pub fn is_relative(self) -> bool {
        matches!(
            self,
            Policy::ActivePivots
                | Policy::PivotsRoundRobin
                | Policy::ActiveExhaustive
                | Policy::Top
                | Policy::Passive
                | Policy::WhittleFree
        )
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid("policy", format!("unknown {s:?}")))
    }
}
