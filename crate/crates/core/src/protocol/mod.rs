//! The concrete peered protocol: configuration, world state, honest-peer and
//! adversary events, invariants and the publication-phase liveness driver.

mod adversary;
mod events;
mod invariants;
mod scripts;
pub mod liveness;
mod state;

pub use adversary::{adversary_synthesizable, saturate, ADVERSARY_EVENTS, SATURATED_EVENTS};
pub use events::bbprot_machine;
pub use invariants::{all_invariants, evaluate_invariant, INVARIANT_NAMES};
pub use scripts::posting_script;
pub use state::{PeerState, WorldState};
pub(crate) use state::{board_body, board_term};

use thiserror::Error;

use crate::message::{ClashRelation, ItemId, MessageError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("need at least one peer")]
    NoPeers,
    #[error("threshold {t} must lie in 1..={n}")]
    ThresholdRange { n: usize, t: usize },
    #[error("threshold {t} is not above 2n/3 for n = {n}; set threshold_override to study weak thresholds")]
    WeakThreshold { n: usize, t: usize },
    #[error("honest peer count {honest} must lie in 1..={n}")]
    HonestRange { n: usize, honest: usize },
    #[error("at most 64 peers are supported, got {0}")]
    TooManyPeers(usize),
    #[error("need at least one period")]
    NoPeriods,
    #[error("clash relation mentions `{0}`, which is not in the item universe")]
    UnknownClashItem(String),
    #[error(transparent)]
    Message(#[from] MessageError),
}

/// Protocol parameters. Peers `1..=honest` run the protocol; the remaining
/// peers' keys start out in the adversary's knowledge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtocolConfig {
    pub n: usize,
    pub t: usize,
    /// Honest peer count; defaults to the threshold.
    pub honest: Option<usize>,
    pub max_periods: u32,
    /// Sorted, deduplicated.
    pub items: Vec<ItemId>,
    pub clash: ClashRelation,
    /// Off: peers skip the signature exchange and acknowledge on receipt.
    pub enable_round2: bool,
    pub enable_clash_guard: bool,
    pub hashed_publication: bool,
    /// Replaces `t` and lifts the `3t > 2n` requirement.
    pub threshold_override: Option<usize>,
}

impl ProtocolConfig {
    /// One item `x`, one period, full non-hashed protocol.
    pub fn new(n: usize, t: usize) -> Self {
        ProtocolConfig {
            n,
            t,
            honest: None,
            max_periods: 1,
            items: vec![ItemId::new("x").expect("valid")],
            clash: ClashRelation::new(),
            enable_round2: true,
            enable_clash_guard: true,
            hashed_publication: false,
            threshold_override: None,
        }
    }

    pub fn with_items(mut self, names: &[&str]) -> Result<Self, ConfigError> {
        let mut items = names.iter().map(|s| ItemId::new(s)).collect::<Result<Vec<_>, _>>()?;
        items.sort();
        items.dedup();
        self.items = items;
        Ok(self)
    }

    pub fn with_clash(mut self, a: &str, b: &str) -> Result<Self, ConfigError> {
        self.clash.insert(ItemId::new(a)?, ItemId::new(b)?)?;
        Ok(self)
    }

    pub fn with_periods(mut self, periods: u32) -> Self {
        self.max_periods = periods;
        self
    }

    pub fn with_hashed_publication(mut self, on: bool) -> Self {
        self.hashed_publication = on;
        self
    }

    pub fn with_round2(mut self, on: bool) -> Self {
        self.enable_round2 = on;
        self
    }

    pub fn with_clash_guard(mut self, on: bool) -> Self {
        self.enable_clash_guard = on;
        self
    }

    pub fn with_threshold_override(mut self, t: usize) -> Self {
        self.threshold_override = Some(t);
        self
    }

    pub fn with_honest(mut self, honest: usize) -> Self {
        self.honest = Some(honest);
        self
    }

    /// The signature threshold in force.
    pub fn threshold(&self) -> usize {
        self.threshold_override.unwrap_or(self.t)
    }

    pub fn honest_count(&self) -> usize {
        self.honest.unwrap_or_else(|| self.threshold())
    }

    pub fn is_honest(&self, peer: usize) -> bool {
        (1..=self.honest_count()).contains(&peer)
    }

    /// Honest signatures needed before an item counts as accepted: the
    /// threshold minus what the corrupt peers can add (`2t - n` when the
    /// honest peers are exactly `1..=t`).
    pub fn acceptance_bound(&self) -> i64 {
        self.threshold() as i64 - (self.n - self.honest_count()) as i64
    }

    /// True when the configuration is weakened in a way that voids some of
    /// the safety claims.
    pub fn is_weakened(&self) -> bool {
        !self.enable_round2 || 3 * self.threshold() <= 2 * self.n
    }

    /// 1..=4 naming the protocol stage this configuration reproduces.
    pub fn stage(&self) -> u8 {
        if self.hashed_publication {
            4
        } else if self.enable_clash_guard && !self.clash.is_empty() {
            3
        } else if self.max_periods > 1 {
            2
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 {
            return Err(ConfigError::NoPeers);
        }
        if self.n > 64 {
            return Err(ConfigError::TooManyPeers(self.n));
        }
        let t = self.threshold();
        if t == 0 || t > self.n {
            return Err(ConfigError::ThresholdRange { n: self.n, t });
        }
        if self.threshold_override.is_none() && 3 * t <= 2 * self.n {
            return Err(ConfigError::WeakThreshold { n: self.n, t });
        }
        let h = self.honest_count();
        if h == 0 || h > self.n {
            return Err(ConfigError::HonestRange { n: self.n, honest: h });
        }
        if self.max_periods == 0 {
            return Err(ConfigError::NoPeriods);
        }
        for (a, b) in self.clash.pairs() {
            for x in [a, b] {
                if !self.items.contains(x) {
                    return Err(ConfigError::UnknownClashItem(x.to_string()));
                }
            }
        }
        Ok(())
    }

    /// Every subset of the item universe, smallest first.
    pub fn boards(&self) -> Vec<std::collections::BTreeSet<ItemId>> {
        let k = self.items.len();
        let mut out: Vec<std::collections::BTreeSet<ItemId>> = (0u32..1 << k)
            .map(|mask| (0..k).filter(|i| mask & (1 << i) != 0).map(|i| self.items[i].clone()).collect())
            .collect();
        out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        out
    }
}
