//! Independent reference implementations shared by the integration tests.
//!
//! Terms are generated as plain trees (`Raw`) whose sets are unsorted lists
//! that may contain duplicates; the oracles work on those trees directly and
//! never look at `Message`.

#![allow(dead_code)]

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::Rng;
use wbb_core::message::{ItemId, KeyId, Message};

pub const ITEM_NAMES: [&str; 4] = ["a", "b", "x", "y"];

#[derive(Clone, Debug)]
pub enum Raw {
    Item(usize),
    Key(KeyId),
    Sig(KeyId, Box<Raw>),
    Pair(u32, Box<Raw>),
    Set(Vec<Raw>),
    Hash(Box<Raw>),
}

pub fn item(i: usize) -> ItemId {
    ItemId::new(ITEM_NAMES[i]).unwrap()
}

impl Raw {
    pub fn build(&self) -> Message {
        match self {
            Raw::Item(i) => Message::item(&item(*i)),
            Raw::Key(k) => Message::Key(*k),
            Raw::Sig(k, b) => Message::sig(*k, b.build()),
            Raw::Pair(p, b) => Message::pair(*p, b.build()),
            Raw::Set(v) => Message::set(v.iter().map(Raw::build)),
            Raw::Hash(b) => Message::hash(b.build()),
        }
    }

    /// The same term with every set list reversed and its first element
    /// repeated.
    pub fn scrambled(&self) -> Raw {
        match self {
            Raw::Sig(k, b) => Raw::Sig(*k, Box::new(b.scrambled())),
            Raw::Pair(p, b) => Raw::Pair(*p, Box::new(b.scrambled())),
            Raw::Hash(b) => Raw::Hash(Box::new(b.scrambled())),
            Raw::Set(v) => {
                let mut w: Vec<Raw> = v.iter().rev().map(Raw::scrambled).collect();
                if let Some(first) = w.first().cloned() {
                    w.push(first);
                }
                Raw::Set(w)
            }
            other => other.clone(),
        }
    }
}

/// Items reachable without passing under a hash or through a key.
pub fn oracle_items(r: &Raw) -> BTreeSet<ItemId> {
    let mut out = BTreeSet::new();
    let mut stack = vec![r];
    while let Some(t) = stack.pop() {
        match t {
            Raw::Item(i) => {
                out.insert(item(*i));
            }
            Raw::Sig(_, b) | Raw::Pair(_, b) => stack.push(b),
            Raw::Set(v) => stack.extend(v.iter()),
            Raw::Key(_) | Raw::Hash(_) => {}
        }
    }
    out
}

/// Every signature subterm not under a hash.
pub fn oracle_sigs(r: &Raw) -> BTreeSet<Message> {
    let mut out = BTreeSet::new();
    let mut stack = vec![r];
    while let Some(t) = stack.pop() {
        match t {
            Raw::Sig(_, b) => {
                out.insert(t.build());
                stack.push(b);
            }
            Raw::Pair(_, b) => stack.push(b),
            Raw::Set(v) => stack.extend(v.iter()),
            Raw::Item(_) | Raw::Key(_) | Raw::Hash(_) => {}
        }
    }
    out
}

/// Counts, for every item and period, how many of the `n` peers' signatures
/// are members of `db`.
pub fn oracle_threshold(db: &BTreeSet<Message>, n: usize, t: usize, period: u32) -> BTreeSet<ItemId> {
    (0..ITEM_NAMES.len())
        .map(item)
        .filter(|x| {
            (1..=n)
                .filter(|&k| db.contains(&Message::signed_item(KeyId::Sk(k as u8), period, x)))
                .count()
                >= t
        })
        .collect()
}

pub fn key_strategy() -> impl Strategy<Value = KeyId> {
    prop_oneof![(1u8..=4).prop_map(KeyId::Sk), (1u8..=4).prop_map(KeyId::SskShare), Just(KeyId::Ssk)]
}

/// Terms of depth at most 6.
pub fn raw_strategy() -> impl Strategy<Value = Raw> {
    let leaf = prop_oneof![(0..ITEM_NAMES.len()).prop_map(Raw::Item), key_strategy().prop_map(Raw::Key)];
    leaf.prop_recursive(5, 48, 4, |inner| {
        prop_oneof![
            (key_strategy(), inner.clone()).prop_map(|(k, b)| Raw::Sig(k, Box::new(b))),
            (0u32..3, inner.clone()).prop_map(|(p, b)| Raw::Pair(p, Box::new(b))),
            prop::collection::vec(inner.clone(), 0..4).prop_map(Raw::Set),
            inner.prop_map(|b| Raw::Hash(Box::new(b))),
        ]
    })
}

fn random_key<R: Rng>(rng: &mut R) -> KeyId {
    match rng.gen_range(0..3) {
        0 => KeyId::Sk(rng.gen_range(1..=4)),
        1 => KeyId::SskShare(rng.gen_range(1..=4)),
        _ => KeyId::Ssk,
    }
}

/// A random term of depth at most `depth`.
pub fn random_raw<R: Rng>(rng: &mut R, depth: usize) -> Raw {
    let leaf = depth <= 1 || rng.gen_bool(0.25);
    if leaf {
        return if rng.gen_bool(0.7) { Raw::Item(rng.gen_range(0..ITEM_NAMES.len())) } else { Raw::Key(random_key(rng)) };
    }
    let sub = |rng: &mut R| Box::new(random_raw(rng, depth - 1));
    match rng.gen_range(0..4) {
        0 => Raw::Sig(random_key(rng), sub(rng)),
        1 => Raw::Pair(rng.gen_range(0..3), sub(rng)),
        2 => Raw::Set((0..rng.gen_range(0..4)).map(|_| random_raw(rng, depth - 1)).collect()),
        _ => Raw::Hash(sub(rng)),
    }
}

/// A random database of individual signatures over `n` peers and periods
/// 0..2.
pub fn random_db<R: Rng>(rng: &mut R, n: usize) -> BTreeSet<Message> {
    let size = rng.gen_range(0..=2 * n * ITEM_NAMES.len());
    (0..size)
        .map(|_| {
            let k = KeyId::Sk(rng.gen_range(1..=n as u8));
            Message::signed_item(k, rng.gen_range(0..2), &item(rng.gen_range(0..ITEM_NAMES.len())))
        })
        .collect()
}
