use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::ProtocolConfig;
use crate::message::{threshold_filter, ItemId, KeyId, Message};

/// One honest peer's local state. Per-period vectors are indexed by period.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PeerState {
    /// Items received per period.
    pub items: Vec<BTreeSet<ItemId>>,
    /// Individually signed items `sig(sk_k, pair(p, item))` held per period.
    pub sigs: Vec<BTreeSet<Message>>,
    /// Individually signed board hashes `sig(sk_k, pair(p, hash(board)))`.
    pub hashes: Vec<BTreeSet<Message>>,
    /// Current posting period; periods below it are in publication.
    pub period: u32,
    /// Periods below this one have a committed board share.
    pub committed: u32,
}

impl PeerState {
    pub fn new(periods: u32) -> Self {
        let p = periods as usize;
        PeerState {
            items: vec![BTreeSet::new(); p],
            sigs: vec![BTreeSet::new(); p],
            hashes: vec![BTreeSet::new(); p],
            period: 0,
            committed: 0,
        }
    }

    /// `t(D_{j,p})`.
    pub fn board(&self, threshold: usize, period: u32) -> BTreeSet<ItemId> {
        threshold_filter(&self.sigs[period as usize], threshold, Some(period)).unwrap_or_default()
    }

    /// Distinct signers of `item` in this peer's database for `period`.
    pub fn signers(&self, period: u32, item: &ItemId) -> usize {
        self.sigs[period as usize]
            .iter()
            .filter(|m| matches!(m.as_signed_item(), Some((KeyId::Sk(_), p, x)) if p == period && x == item))
            .count()
    }

    fn map(&self, peer: &impl Fn(usize) -> usize, item: &impl Fn(&ItemId) -> ItemId) -> PeerState {
        let msgs = |sets: &Vec<BTreeSet<Message>>| {
            sets.iter().map(|s| s.iter().map(|m| m.map_peers(peer).map_items(item)).collect()).collect()
        };
        PeerState {
            items: self.items.iter().map(|s| s.iter().map(item).collect()).collect(),
            sigs: msgs(&self.sigs),
            hashes: msgs(&self.hashes),
            period: self.period,
            committed: self.committed,
        }
    }
}

/// The concrete machine state: honest peers plus the adversary's knowledge,
/// which doubles as the network. Shared structure is copy-on-write.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct WorldState {
    pub peers: Vec<Arc<PeerState>>,
    pub knowledge: Arc<BTreeSet<Message>>,
}

impl WorldState {
    /// Initial state: empty peers, corrupt peers' keys known to the adversary.
    pub fn initial(cfg: &ProtocolConfig) -> Self {
        let peer = Arc::new(PeerState::new(cfg.max_periods));
        let h = cfg.honest_count();
        let keys = (h + 1..=cfg.n).flat_map(|k| {
            [Message::Key(KeyId::Sk(k as u8)), Message::Key(KeyId::SskShare(k as u8))]
        });
        WorldState { peers: vec![peer; h], knowledge: Arc::new(keys.collect()) }
    }

    pub fn knows(&self, m: &Message) -> bool {
        self.knowledge.contains(m)
    }

    /// Peer `j` (1-based).
    pub fn peer(&self, j: usize) -> &PeerState {
        &self.peers[j - 1]
    }

    pub fn learn(&self, m: Message) -> WorldState {
        if self.knows(&m) {
            return self.clone();
        }
        let mut e = (*self.knowledge).clone();
        e.insert(m);
        WorldState { peers: self.peers.clone(), knowledge: Arc::new(e) }
    }

    pub fn learn_all(&self, ms: impl IntoIterator<Item = Message>) -> WorldState {
        let new: Vec<Message> = ms.into_iter().filter(|m| !self.knows(m)).collect();
        if new.is_empty() {
            return self.clone();
        }
        let mut e = (*self.knowledge).clone();
        e.extend(new);
        WorldState { peers: self.peers.clone(), knowledge: Arc::new(e) }
    }

    pub fn update_peer(&self, j: usize, f: impl FnOnce(&mut PeerState)) -> WorldState {
        let mut peers = self.peers.clone();
        f(Arc::make_mut(&mut peers[j - 1]));
        WorldState { peers, knowledge: self.knowledge.clone() }
    }

    /// Distinct honest peers `k` with `sig(sk_k, pair(p, x))` known.
    pub fn honest_item_signers(&self, cfg: &ProtocolConfig, period: u32, item: &ItemId) -> usize {
        (1..=cfg.honest_count())
            .filter(|&k| self.knows(&Message::signed_item(KeyId::Sk(k as u8), period, item)))
            .count()
    }

    /// Peers `k` (any) with `sig(ssk_k, body)` known.
    pub fn share_signers(&self, body: &Message) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for m in self.knowledge.iter() {
            if let Message::Sig(KeyId::SskShare(k), b) = m {
                if b.as_ref() == body {
                    out.insert(*k as usize);
                }
            }
        }
        out
    }

    /// Share signers grouped by signed body, in one pass over the knowledge.
    pub fn shares_by_body(&self) -> BTreeMap<&Message, BTreeSet<usize>> {
        let mut out: BTreeMap<&Message, BTreeSet<usize>> = BTreeMap::new();
        for m in self.knowledge.iter() {
            if let Message::Sig(KeyId::SskShare(k), b) = m {
                out.entry(b.as_ref()).or_default().insert(*k as usize);
            }
        }
        out
    }

    /// Known threshold-signed bodies `sig(SSK, body)`.
    pub fn ssk_bodies(&self) -> impl Iterator<Item = &Message> {
        self.knowledge.iter().filter_map(|m| match m {
            Message::Sig(KeyId::Ssk, b) => Some(b.as_ref()),
            _ => None,
        })
    }

    /// `(period, item)` for every known receipt.
    pub fn receipts(&self) -> Vec<(u32, ItemId)> {
        self.ssk_bodies()
            .filter_map(|b| match b {
                Message::Pair(p, inner) => inner.as_item().map(|x| (*p, x.clone())),
                _ => None,
            })
            .collect()
    }

    /// `(period, board)` for every known threshold-signed board, in the
    /// publication shape of the configuration.
    pub fn published_boards(&self, cfg: &ProtocolConfig) -> Vec<(u32, BTreeSet<ItemId>)> {
        self.ssk_bodies().filter_map(|b| board_body(cfg, b)).collect()
    }

    /// Renames honest peers and items. `peer` must fix corrupt peers.
    pub fn permute(&self, peer: &impl Fn(usize) -> usize, item: &impl Fn(&ItemId) -> ItemId) -> WorldState {
        let mut peers = self.peers.clone();
        for (i, p) in self.peers.iter().enumerate() {
            peers[peer(i + 1) - 1] = Arc::new(p.map(peer, item));
        }
        let knowledge = self.knowledge.iter().map(|m| m.map_peers(peer).map_items(item)).collect();
        WorldState { peers, knowledge: Arc::new(knowledge) }
    }
}

/// Decodes a board body `pair(p, set)` (or `pair(p, hash(set))` under
/// hashed publication).
pub(crate) fn board_body(cfg: &ProtocolConfig, body: &Message) -> Option<(u32, BTreeSet<ItemId>)> {
    let Message::Pair(p, inner) = body else { return None };
    let set = if cfg.hashed_publication {
        match inner.as_ref() {
            Message::Hash(h) => h.as_item_set()?,
            _ => return None,
        }
    } else {
        inner.as_item_set()?
    };
    Some((*p, set))
}

/// The signed body for board `items` in period `p`.
pub(crate) fn board_term(cfg: &ProtocolConfig, period: u32, items: &BTreeSet<ItemId>) -> Message {
    let set = Message::item_set(items);
    if cfg.hashed_publication {
        Message::pair(period, Message::hash(set))
    } else {
        Message::pair(period, set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_world() {
        let cfg = ProtocolConfig::new(4, 3);
        let w = WorldState::initial(&cfg);
        assert_eq!(w.peers.len(), 3);
        assert_eq!(w.knowledge.len(), 2);
        assert!(w.knows(&Message::Key(KeyId::Sk(4))));
        assert!(!w.knows(&Message::Key(KeyId::Sk(3))));
        assert_eq!(w.peer(1).items.len(), 1);
    }

    #[test]
    fn copy_on_write() {
        let cfg = ProtocolConfig::new(4, 3);
        let w = WorldState::initial(&cfg);
        let x = cfg.items[0].clone();
        let w2 = w.update_peer(2, |p| {
            p.items[0].insert(x.clone());
        });
        assert!(Arc::ptr_eq(&w.peers[0], &w2.peers[0]));
        assert!(w.peer(2).items[0].is_empty());
        assert!(w2.peer(2).items[0].contains(&x));
        assert!(Arc::ptr_eq(&w.knowledge, &w2.knowledge));
    }

    #[test]
    fn permutation_swaps_peers_and_keys() {
        let cfg = ProtocolConfig::new(4, 3);
        let x = cfg.items[0].clone();
        let w = WorldState::initial(&cfg)
            .learn(Message::signed_item(KeyId::Sk(1), 0, &x))
            .update_peer(1, |p| {
                p.sigs[0].insert(Message::signed_item(KeyId::Sk(1), 0, &x));
            });
        let swap = |j: usize| match j {
            1 => 2,
            2 => 1,
            j => j,
        };
        let v = w.permute(&swap, &|i: &ItemId| i.clone());
        assert!(v.knows(&Message::signed_item(KeyId::Sk(2), 0, &x)));
        assert!(v.peer(2).sigs[0].contains(&Message::signed_item(KeyId::Sk(2), 0, &x)));
        assert!(v.peer(1).sigs[0].is_empty());
        assert_eq!(v.permute(&swap, &|i: &ItemId| i.clone()), w);
    }
}
