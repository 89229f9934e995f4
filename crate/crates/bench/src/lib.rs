//! Fixtures shared by the benchmarks.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wbb_core::machine::Trace;
use wbb_core::message::{ItemId, KeyId, Message};
use wbb_core::protocol::{posting_script, ProtocolConfig};

/// A database of `size` random individual signatures over `n` peers and
/// `items` items, period 0.
pub fn signature_db(n: usize, items: usize, size: usize, seed: u64) -> BTreeSet<Message> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<ItemId> = (0..items).map(|i| ItemId::new(&format!("i{i}")).expect("valid")).collect();
    (0..size)
        .map(|_| {
            let k = KeyId::Sk(rng.gen_range(1..=n as u8));
            Message::signed_item(k, 0, &names[rng.gen_range(0..items)])
        })
        .collect()
}

/// A nested term of the given depth: sets of signed pairs of sets.
pub fn nested_term(depth: usize) -> Message {
    let mut m = Message::item(&ItemId::new("x").expect("valid"));
    for d in 0..depth {
        let k = KeyId::Sk((d % 4 + 1) as u8);
        m = Message::set([Message::sig(k, Message::pair(d as u32, m.clone())), Message::hash(m)]);
    }
    m
}

/// The full posting run for one item at `n` peers with threshold `t`.
pub fn happy_path(n: usize, t: usize) -> (ProtocolConfig, Trace) {
    let cfg = ProtocolConfig::new(n, t);
    let trace = posting_script(&cfg, &ItemId::new("x").expect("valid"), 0);
    (cfg, trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_deterministic() {
        assert_eq!(signature_db(4, 3, 20, 1), signature_db(4, 3, 20, 1));
        assert_eq!(nested_term(3).depth(), 1 + 3 * 3);
    }
}
