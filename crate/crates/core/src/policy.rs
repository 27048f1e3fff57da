//! Uniform entry point over all allocation policies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constraints::{Allocation, Availability};
use crate::error::{Error, Result};
use crate::model::{Regime, ValidatedSystem};
use crate::policies_central as central;
use crate::policies_greedy::{self as greedy, AlgoVariant, FlexGreedyState, GammaSchedule, PriorityClasses};
use crate::processes::Rng;
use crate::sim::QueueState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicyKind {
    Exact,
    LpIf,
    LpFf,
    FiDecomp,
    PrioritizedGreedy,
    FlexGreedy,
    RestrictedGreedy,
    Algo1,
    Algo2,
    Algo3,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 10] = [
        PolicyKind::Exact,
        PolicyKind::LpIf,
        PolicyKind::LpFf,
        PolicyKind::FiDecomp,
        PolicyKind::PrioritizedGreedy,
        PolicyKind::FlexGreedy,
        PolicyKind::RestrictedGreedy,
        PolicyKind::Algo1,
        PolicyKind::Algo2,
        PolicyKind::Algo3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Exact => "centralized-exact",
            PolicyKind::LpIf => "lp-if",
            PolicyKind::LpFf => "lp-ff",
            PolicyKind::FiDecomp => "fi-decomp",
            PolicyKind::PrioritizedGreedy => "prioritized-greedy",
            PolicyKind::FlexGreedy => "flex-greedy",
            PolicyKind::RestrictedGreedy => "restricted-greedy",
            PolicyKind::Algo1 => "algo1",
            PolicyKind::Algo2 => "algo2",
            PolicyKind::Algo3 => "algo3",
        }
    }

    /// The one regime the policy is defined for; `None` for any regime.
    pub fn regime(self) -> Option<Regime> {
        match self {
            PolicyKind::Exact => None,
            PolicyKind::LpIf | PolicyKind::PrioritizedGreedy => Some(Regime::IF),
            PolicyKind::LpFf | PolicyKind::FlexGreedy | PolicyKind::Algo1 | PolicyKind::Algo2 => {
                Some(Regime::FF)
            }
            PolicyKind::FiDecomp | PolicyKind::RestrictedGreedy | PolicyKind::Algo3 => {
                Some(Regime::FI)
            }
        }
    }

    pub fn supports(self, regime: Regime) -> bool {
        self.regime().is_none_or(|r| r == regime)
    }

    pub fn names() -> String {
        Self::ALL.map(|p| p.name()).join(", ")
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase();
        let alias = match key.as_str() {
            "exact" => "centralized-exact",
            "fi" | "centralized-fi" => "fi-decomp",
            "centralized-lp-if" => "lp-if",
            "centralized-lp-ff" => "lp-ff",
            other => other,
        };
        Self::ALL
            .into_iter()
            .find(|p| p.name() == alias)
            .ok_or_else(|| Error::Invalid(format!("unknown policy `{s}`; available: {}", Self::names())))
    }
}

impl TryFrom<String> for PolicyKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PolicyKind> for String {
    fn from(p: PolicyKind) -> String {
        p.name().to_string()
    }
}

/// Tunables of the flexible-agent greedy policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub epsilon: f64,
    pub gamma: GammaSchedule,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams {
            epsilon: 0.05,
            gamma: GammaSchedule::Harmonic,
        }
    }
}

/// Everything a policy may look at in one epoch.
#[derive(Debug, Clone, Copy)]
pub struct EpochContext<'a> {
    pub t: u64,
    pub queue: &'a QueueState,
    pub avail: &'a Availability,
    /// External task arrivals of this epoch.
    pub arrivals: &'a [u64],
    pub rng: &'a Rng,
}

#[derive(Debug, Clone)]
enum PolicyState {
    None,
    Flex(FlexGreedyState),
    Restricted(PriorityClasses),
}

/// A policy bound to one system, with whatever state it carries between
/// epochs.
#[derive(Debug, Clone)]
pub struct Policy {
    kind: PolicyKind,
    state: PolicyState,
}

impl Policy {
    pub fn new(kind: PolicyKind, sys: &ValidatedSystem, params: PolicyParams) -> Result<Self> {
        if !kind.supports(sys.regime()) {
            return Err(Error::UnsupportedRegime {
                policy: kind.name().into(),
                required: kind.regime().map_or("any".into(), |r| r.to_string()),
                actual: sys.regime(),
            });
        }
        let state = match kind {
            PolicyKind::FlexGreedy => {
                PolicyState::Flex(FlexGreedyState::new(sys, params.epsilon, params.gamma))
            }
            PolicyKind::RestrictedGreedy => {
                PolicyState::Restricted(greedy::build_priority_classes(sys))
            }
            _ => PolicyState::None,
        };
        Ok(Policy { kind, state })
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    /// Running estimates of the flexible greedy policy, if that is the kind.
    pub fn flex_state(&self) -> Option<&FlexGreedyState> {
        match &self.state {
            PolicyState::Flex(s) => Some(s),
            _ => None,
        }
    }

    pub fn allocate(&mut self, ctx: &EpochContext<'_>, sys: &ValidatedSystem) -> Result<Allocation> {
        let q = ctx.queue.counts();
        Ok(match (&mut self.state, self.kind) {
            (_, PolicyKind::Exact) => central::centralized_exact(q, ctx.avail, sys)?,
            (_, PolicyKind::LpIf) => central::centralized_lp_if(q, ctx.avail, sys)?,
            (_, PolicyKind::LpFf) => central::centralized_lp_ff(q, ctx.avail, sys)?,
            (_, PolicyKind::FiDecomp) => central::centralized_fi(q, ctx.avail, sys)?,
            (_, PolicyKind::PrioritizedGreedy) => {
                greedy::prioritized_greedy(ctx.queue, ctx.avail, sys, ctx.rng, ctx.t)
            }
            (PolicyState::Flex(st), PolicyKind::FlexGreedy) => {
                greedy::flex_greedy(st, ctx.queue, ctx.arrivals, ctx.avail, sys, ctx.rng, ctx.t)
            }
            (PolicyState::Restricted(classes), PolicyKind::RestrictedGreedy) => {
                greedy::restricted_greedy(classes, ctx.queue, ctx.avail, sys, ctx.rng, ctx.t)
            }
            (_, PolicyKind::Algo1) => {
                greedy::algo_variants(AlgoVariant::Algo1, ctx.queue, ctx.avail, sys, ctx.rng, ctx.t)
            }
            (_, PolicyKind::Algo2) => {
                greedy::algo_variants(AlgoVariant::Algo2, ctx.queue, ctx.avail, sys, ctx.rng, ctx.t)
            }
            (_, PolicyKind::Algo3) => {
                greedy::algo_variants(AlgoVariant::Algo3, ctx.queue, ctx.avail, sys, ctx.rng, ctx.t)
            }
            (_, kind) => unreachable!("{kind} built without its state"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::t1;

    #[test]
    fn names_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(p.name().parse::<PolicyKind>().unwrap(), p);
        }
        assert_eq!("exact".parse::<PolicyKind>().unwrap(), PolicyKind::Exact);
        let e = "nope".parse::<PolicyKind>().unwrap_err().to_string();
        assert!(e.contains("algo3") && e.contains("lp-ff"), "{e}");
    }

    #[test]
    fn regime_gate() {
        let sys = t1();
        let e = Policy::new(PolicyKind::Algo3, &sys, PolicyParams::default()).unwrap_err();
        assert!(e.to_string().contains("requires regime FI"), "{e}");
        assert!(Policy::new(PolicyKind::Exact, &sys, PolicyParams::default()).is_ok());
        assert!(Policy::new(PolicyKind::LpIf, &sys, PolicyParams::default()).is_ok());
    }
}
