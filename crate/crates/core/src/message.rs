//! Symbolic message terms for the Dolev-Yao model.
//!
//! Terms are immutable and share their children through `Arc`, so cloning a
//! term (or a set of terms) is cheap. Sets are stored as `BTreeSet`s, which
//! keeps every term in canonical form by construction: structurally equal
//! terms compare equal and print identically.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Opaque item identity. Item names are short identifiers (`[A-Za-z0-9_]+`).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemId(Arc<str>);

impl ItemId {
    pub fn new(name: &str) -> Result<Self, MessageError> {
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(MessageError::BadItemName(name.to_string()));
        }
        Ok(ItemId(Arc::from(name)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Signing keys. Peer indices are 1-based.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KeyId {
    /// A peer's individual signing key `sk_j`.
    Sk(u8),
    /// A peer's share `ssk_j` of the threshold key.
    SskShare(u8),
    /// The combined threshold key.
    Ssk,
}

impl KeyId {
    pub fn peer(self) -> Option<usize> {
        match self {
            KeyId::Sk(j) | KeyId::SskShare(j) => Some(j as usize),
            KeyId::Ssk => None,
        }
    }

    /// Applies `f` to the peer index, leaving `Ssk` alone.
    pub fn map_peer(self, f: impl Fn(usize) -> usize) -> KeyId {
        match self {
            KeyId::Sk(j) => KeyId::Sk(f(j as usize) as u8),
            KeyId::SskShare(j) => KeyId::SskShare(f(j as usize) as u8),
            KeyId::Ssk => KeyId::Ssk,
        }
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyId::Sk(j) => write!(f, "sk{j}"),
            KeyId::SskShare(j) => write!(f, "ssk{j}"),
            KeyId::Ssk => f.write_str("SSK"),
        }
    }
}

impl fmt::Debug for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// A symbolic message.
///
/// The derived ordering (variant order, then fields) is the canonical order
/// used for set elements, binding enumeration and state encodings.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Message {
    Item(ItemId),
    Key(KeyId),
    Sig(KeyId, Arc<Message>),
    Pair(u32, Arc<Message>),
    Set(Arc<BTreeSet<Message>>),
    /// Free constructor: `Hash(a) == Hash(b)` iff `a == b`.
    Hash(Arc<Message>),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MessageError {
    #[error("invalid item name `{0}`")]
    BadItemName(String),
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("database entry `{0}` is not an individually signed item")]
    NotSig1(String),
    #[error("clash relation cannot relate `{0}` to itself")]
    ReflexiveClash(String),
}

impl Message {
    pub fn item(id: &ItemId) -> Message {
        Message::Item(id.clone())
    }

    pub fn sig(key: KeyId, body: Message) -> Message {
        Message::Sig(key, Arc::new(body))
    }

    pub fn pair(period: u32, body: Message) -> Message {
        Message::Pair(period, Arc::new(body))
    }

    pub fn hash(body: Message) -> Message {
        Message::Hash(Arc::new(body))
    }

    pub fn set<I: IntoIterator<Item = Message>>(elems: I) -> Message {
        Message::Set(Arc::new(elems.into_iter().collect()))
    }

    /// `set{item(x), ...}` for a board of items.
    pub fn item_set<'a, I: IntoIterator<Item = &'a ItemId>>(items: I) -> Message {
        Message::set(items.into_iter().map(Message::item))
    }

    /// `sig(key, pair(period, item(x)))`
    pub fn signed_item(key: KeyId, period: u32, item: &ItemId) -> Message {
        Message::sig(key, Message::pair(period, Message::item(item)))
    }

    pub fn as_item(&self) -> Option<&ItemId> {
        match self {
            Message::Item(x) => Some(x),
            _ => None,
        }
    }

    pub fn as_set(&self) -> Option<&BTreeSet<Message>> {
        match self {
            Message::Set(s) => Some(s),
            _ => None,
        }
    }

    /// The items of a set whose elements are all items.
    pub fn as_item_set(&self) -> Option<BTreeSet<ItemId>> {
        let set = self.as_set()?;
        set.iter().map(|m| m.as_item().cloned()).collect()
    }

    pub fn is_item_set(&self) -> bool {
        matches!(self, Message::Set(s) if s.iter().all(|m| matches!(m, Message::Item(_))))
    }

    /// `(key, period, item)` for terms of the shape `sig(key, pair(p, item(x)))`.
    pub fn as_signed_item(&self) -> Option<(KeyId, u32, &ItemId)> {
        match self {
            Message::Sig(k, body) => match body.as_ref() {
                Message::Pair(p, inner) => inner.as_item().map(|x| (*k, *p, x)),
                _ => None,
            },
            _ => None,
        }
    }

    /// `(key, period, body)` for terms of the shape `sig(key, pair(p, body))`.
    pub fn as_signed_pair(&self) -> Option<(KeyId, u32, &Message)> {
        match self {
            Message::Sig(k, body) => match body.as_ref() {
                Message::Pair(p, inner) => Some((*k, *p, inner.as_ref())),
                _ => None,
            },
            _ => None,
        }
    }

    /// Member of SIG1 for period `p`: `sig(sk_k, pair(p, item(x)))`.
    pub fn is_sig1(&self, period: u32) -> bool {
        matches!(self.as_signed_item(), Some((KeyId::Sk(_), p, _)) if p == period)
    }

    /// Renames peer indices in every key inside the term.
    pub fn map_peers(&self, f: &impl Fn(usize) -> usize) -> Message {
        match self {
            Message::Item(_) => self.clone(),
            Message::Key(k) => Message::Key(k.map_peer(f)),
            Message::Sig(k, b) => Message::sig(k.map_peer(f), b.map_peers(f)),
            Message::Pair(p, b) => Message::pair(*p, b.map_peers(f)),
            Message::Set(s) => Message::set(s.iter().map(|m| m.map_peers(f))),
            Message::Hash(b) => Message::hash(b.map_peers(f)),
        }
    }

    /// Renames item identities inside the term.
    pub fn map_items(&self, f: &impl Fn(&ItemId) -> ItemId) -> Message {
        match self {
            Message::Item(x) => Message::Item(f(x)),
            Message::Key(_) => self.clone(),
            Message::Sig(k, b) => Message::sig(*k, b.map_items(f)),
            Message::Pair(p, b) => Message::pair(*p, b.map_items(f)),
            Message::Set(s) => Message::set(s.iter().map(|m| m.map_items(f))),
            Message::Hash(b) => Message::hash(b.map_items(f)),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Message::Item(_) | Message::Key(_) => 1,
            Message::Sig(_, b) | Message::Pair(_, b) | Message::Hash(b) => 1 + b.depth(),
            Message::Set(s) => 1 + s.iter().map(Message::depth).max().unwrap_or(0),
        }
    }
}

/// Rebuilds `m` bottom-up. Sets are re-sorted and deduplicated at every
/// level; on terms built through the public constructors this is the identity.
pub fn canonicalize(m: &Message) -> Message {
    match m {
        Message::Item(_) | Message::Key(_) => m.clone(),
        Message::Sig(k, b) => Message::sig(*k, canonicalize(b)),
        Message::Pair(p, b) => Message::pair(*p, canonicalize(b)),
        Message::Set(s) => Message::set(s.iter().map(canonicalize)),
        Message::Hash(b) => Message::hash(canonicalize(b)),
    }
}

/// `items(x) = {x}`, `items(sig_s(m)) = items(m)`, `items(B) = ⋃ items(b)`.
/// Pairs are transparent; hashes and keys contribute nothing.
pub fn items_of(m: &Message) -> BTreeSet<ItemId> {
    let mut out = BTreeSet::new();
    collect_items(m, &mut out);
    out
}

fn collect_items(m: &Message, out: &mut BTreeSet<ItemId>) {
    match m {
        Message::Item(x) => {
            out.insert(x.clone());
        }
        Message::Key(_) | Message::Hash(_) => {}
        Message::Sig(_, b) | Message::Pair(_, b) => collect_items(b, out),
        Message::Set(s) => s.iter().for_each(|e| collect_items(e, out)),
    }
}

/// `sigs(sig_s(m)) = {sig_s(m)} ∪ sigs(m)`, `sigs(B) = ⋃ sigs(b)`, nothing
/// for items, keys and hashes.
pub fn sigs_of(m: &Message) -> BTreeSet<Message> {
    let mut out = BTreeSet::new();
    collect_sigs(m, &mut out);
    out
}

fn collect_sigs(m: &Message, out: &mut BTreeSet<Message>) {
    match m {
        Message::Item(_) | Message::Key(_) | Message::Hash(_) => {}
        Message::Sig(_, b) => {
            out.insert(m.clone());
            collect_sigs(b, out);
        }
        Message::Pair(_, b) => collect_sigs(b, out),
        Message::Set(s) => s.iter().for_each(|e| collect_sigs(e, out)),
    }
}

/// `t(D)`: the items carrying individual signatures from at least
/// `threshold` distinct signers. With `period` set, only signatures on
/// `pair(period, item(x))` count.
pub fn threshold_filter<'a, I>(
    db: I,
    threshold: usize,
    period: Option<u32>,
) -> Result<BTreeSet<ItemId>, MessageError>
where
    I: IntoIterator<Item = &'a Message>,
{
    let mut signers: std::collections::BTreeMap<&ItemId, BTreeSet<u8>> = Default::default();
    for m in db {
        let (k, p, x) = match m {
            Message::Sig(KeyId::Sk(k), body) => match body.as_ref() {
                Message::Item(x) => (*k, None, x),
                Message::Pair(p, inner) => match inner.as_ref() {
                    Message::Item(x) => (*k, Some(*p), x),
                    _ => return Err(MessageError::NotSig1(m.to_string())),
                },
                _ => return Err(MessageError::NotSig1(m.to_string())),
            },
            _ => return Err(MessageError::NotSig1(m.to_string())),
        };
        if period.is_some() && p != period {
            continue;
        }
        signers.entry(x).or_default().insert(k);
    }
    Ok(signers
        .into_iter()
        .filter(|(_, ks)| ks.len() >= threshold)
        .map(|(x, _)| x.clone())
        .collect())
}

/// The least `j <= t` belonging to both `a` and `b`.
///
/// Always succeeds when `#a >= t`, `#b >= t` and `3t > 2n`.
pub fn counting_witness(a: &BTreeSet<usize>, b: &BTreeSet<usize>, t: usize) -> Option<usize> {
    a.intersection(b).copied().find(|&j| j >= 1 && j <= t)
}

/// Outcome of an exhaustive check of the witness guarantee.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CountingReport {
    /// `(n, t)` pairs with `3t > 2n` that were enumerated.
    pub configurations: usize,
    /// Pairs of sets with `#a, #b >= t` over `1..=n`.
    pub threshold_cases: usize,
    /// Pairs of sets with `#a, #b >= 2t - n` over `1..=t`.
    pub honest_cases: usize,
    /// `(n, t, a, b)` with no witness.
    pub missing: Vec<(usize, usize, BTreeSet<usize>, BTreeSet<usize>)>,
}

/// Runs [`counting_witness`] on every qualifying instance with `n <= max_n`:
/// any two threshold-sized sets of peers share an honest peer, and any two
/// sets of honest peers of size `2t - n` intersect.
pub fn verify_counting_lemma(max_n: usize) -> CountingReport {
    let mut r = CountingReport::default();
    let subsets = |universe: usize, min: usize| -> Vec<BTreeSet<usize>> {
        (0u32..1 << universe)
            .filter(|mask| mask.count_ones() as usize >= min)
            .map(|mask| (1..=universe).filter(|j| mask & (1 << (j - 1)) != 0).collect())
            .collect()
    };
    for n in 1..=max_n {
        for t in (1..=n).filter(|t| 3 * t > 2 * n) {
            r.configurations += 1;
            for (universe, min, count) in [(n, t, 0), (t, 2 * t - n, 1)] {
                let sets = subsets(universe, min);
                for a in &sets {
                    for b in &sets {
                        if count == 0 {
                            r.threshold_cases += 1;
                        } else {
                            r.honest_cases += 1;
                        }
                        if counting_witness(a, b, t).is_none() {
                            r.missing.push((n, t, a.clone(), b.clone()));
                        }
                    }
                }
            }
        }
    }
    r
}

/// An irreflexive, symmetric relation over items, stored as ordered pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClashRelation {
    pairs: BTreeSet<(ItemId, ItemId)>,
}

impl ClashRelation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I>(pairs: I) -> Result<Self, MessageError>
    where
        I: IntoIterator<Item = (ItemId, ItemId)>,
    {
        let mut rel = Self::new();
        for (a, b) in pairs {
            rel.insert(a, b)?;
        }
        Ok(rel)
    }

    pub fn insert(&mut self, a: ItemId, b: ItemId) -> Result<(), MessageError> {
        if a == b {
            return Err(MessageError::ReflexiveClash(a.to_string()));
        }
        let pair = if a < b { (a, b) } else { (b, a) };
        self.pairs.insert(pair);
        Ok(())
    }

    pub fn clashes(&self, a: &ItemId, b: &ItemId) -> bool {
        let key = if a < b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
        self.pairs.contains(&key)
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&ItemId, &ItemId)> {
        self.pairs.iter().map(|(a, b)| (a, b))
    }

    /// `clashset(x) = { y | clash(x, y) }`.
    pub fn clashset(&self, x: &ItemId) -> BTreeSet<ItemId> {
        self.pairs
            .iter()
            .filter_map(|(a, b)| {
                if a == x {
                    Some(b.clone())
                } else if b == x {
                    Some(a.clone())
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn map_items(&self, f: &impl Fn(&ItemId) -> ItemId) -> ClashRelation {
        let mut out = ClashRelation::new();
        for (a, b) in &self.pairs {
            out.insert(f(a), f(b)).expect("renaming is injective");
        }
        out
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Message::Item(x) => write!(f, "item({x})"),
            Message::Key(k) => write!(f, "key({k})"),
            Message::Sig(k, b) => write!(f, "sig({k}, {b})"),
            Message::Pair(p, b) => write!(f, "pair({p}, {b})"),
            Message::Hash(b) => write!(f, "hash({b})"),
            Message::Set(s) => {
                f.write_str("set{")?;
                for (i, m) in s.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{m}")?;
                }
                f.write_str("}")
            }
        }
    }
}

impl fmt::Debug for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl std::str::FromStr for Message {
    type Err = MessageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut p = Parser::new(s);
        let m = p.term()?;
        p.skip_ws();
        if !p.at_end() {
            return Err(p.error("trailing input"));
        }
        Ok(m)
    }
}

/// Parses one term from the front of `s`, returning it with the number of
/// bytes consumed. Used by line formats that embed terms.
pub fn parse_prefix(s: &str) -> Result<(Message, usize), MessageError> {
    let mut p = Parser::new(s);
    let m = p.term()?;
    Ok((m, p.pos))
}

/// Parses a key name: `skN`, `sskN` or `SSK`.
pub fn parse_key(s: &str) -> Result<KeyId, MessageError> {
    let mut p = Parser::new(s);
    let k = p.key()?;
    if !p.at_end() {
        return Err(p.error("trailing input after key"));
    }
    Ok(k)
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser { src, pos: 0 }
    }

    fn error(&self, msg: &str) -> MessageError {
        MessageError::Parse { pos: self.pos, msg: msg.to_string() }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn eat(&mut self, tok: &str) -> bool {
        self.skip_ws();
        if self.rest().starts_with(tok) {
            self.pos += tok.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &str) -> Result<(), MessageError> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(self.error(&format!("expected `{tok}`")))
        }
    }

    fn ident(&mut self) -> Result<&'a str, MessageError> {
        self.skip_ws();
        let len = self
            .rest()
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(self.rest().len());
        if len == 0 {
            return Err(self.error("expected identifier"));
        }
        let id = &self.rest()[..len];
        self.pos += len;
        Ok(id)
    }

    fn nat(&mut self) -> Result<u32, MessageError> {
        self.skip_ws();
        let len = self.rest().find(|c: char| !c.is_ascii_digit()).unwrap_or(self.rest().len());
        if len == 0 {
            return Err(self.error("expected natural number"));
        }
        let n = self.rest()[..len].parse().map_err(|_| self.error("number out of range"))?;
        self.pos += len;
        Ok(n)
    }

    fn key(&mut self) -> Result<KeyId, MessageError> {
        let start = self.pos;
        let id = self.ident()?;
        let peer = |digits: &str| -> Option<u8> {
            let j: u8 = digits.parse().ok()?;
            (j >= 1 && digits == j.to_string()).then_some(j)
        };
        let key = if id == "SSK" {
            Some(KeyId::Ssk)
        } else if let Some(d) = id.strip_prefix("ssk") {
            peer(d).map(KeyId::SskShare)
        } else if let Some(d) = id.strip_prefix("sk") {
            peer(d).map(KeyId::Sk)
        } else {
            None
        };
        key.ok_or(MessageError::Parse { pos: start, msg: format!("unknown key `{id}`") })
    }

    fn term(&mut self) -> Result<Message, MessageError> {
        let start = {
            self.skip_ws();
            self.pos
        };
        let head = self.ident()?;
        match head {
            "item" => {
                self.expect("(")?;
                let name = self.ident()?;
                self.expect(")")?;
                Ok(Message::Item(ItemId::new(name)?))
            }
            "key" => {
                self.expect("(")?;
                let k = self.key()?;
                self.expect(")")?;
                Ok(Message::Key(k))
            }
            "sig" => {
                self.expect("(")?;
                let k = self.key()?;
                self.expect(",")?;
                let body = self.term()?;
                self.expect(")")?;
                Ok(Message::sig(k, body))
            }
            "pair" => {
                self.expect("(")?;
                let p = self.nat()?;
                self.expect(",")?;
                let body = self.term()?;
                self.expect(")")?;
                Ok(Message::pair(p, body))
            }
            "hash" => {
                self.expect("(")?;
                let body = self.term()?;
                self.expect(")")?;
                Ok(Message::hash(body))
            }
            "set" => {
                self.expect("{")?;
                let mut elems = BTreeSet::new();
                if !self.eat("}") {
                    loop {
                        elems.insert(self.term()?);
                        if self.eat("}") {
                            break;
                        }
                        self.expect(",")?;
                    }
                }
                Ok(Message::Set(Arc::new(elems)))
            }
            other => Err(MessageError::Parse { pos: start, msg: format!("unknown constructor `{other}`") }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn it(s: &str) -> ItemId {
        ItemId::new(s).unwrap()
    }

    fn m(s: &str) -> Message {
        s.parse().unwrap()
    }

    #[test]
    fn set_dedups_and_orders() {
        let a = Message::item(&it("a"));
        let b = Message::item(&it("b"));
        let s = Message::set(vec![b.clone(), a.clone(), a.clone()]);
        assert_eq!(s.as_set().unwrap().len(), 2);
        assert_eq!(s.to_string(), "set{item(a), item(b)}");
        assert_eq!(canonicalize(&a), a);
    }

    #[test]
    fn nested_sets_are_canonical() {
        let parsed = m("set{set{item(b), item(a)}}");
        assert_eq!(parsed.to_string(), "set{set{item(a), item(b)}}");
        assert_eq!(canonicalize(&parsed), parsed);
    }

    #[test]
    fn items_and_sigs() {
        let x = it("x");
        assert_eq!(items_of(&Message::item(&x)), BTreeSet::from([x.clone()]));
        assert_eq!(items_of(&m("sig(sk1, item(x))")), BTreeSet::from([x.clone()]));
        assert!(items_of(&m("hash(item(x))")).is_empty());
        assert!(items_of(&m("key(sk2)")).is_empty());
        assert!(sigs_of(&m("item(x)")).is_empty());
        assert!(sigs_of(&m("set{}")).is_empty());
        let nested = m("sig(sk1, sig(sk2, item(x)))");
        assert_eq!(
            sigs_of(&nested),
            BTreeSet::from([nested.clone(), m("sig(sk2, item(x))")])
        );
        assert!(sigs_of(&m("hash(sig(sk1, item(x)))")).is_empty());
    }

    #[test]
    fn threshold_counts_distinct_signers() {
        let db: BTreeSet<Message> = [
            "sig(sk1, pair(0, item(x)))",
            "sig(sk2, pair(0, item(x)))",
            "sig(sk3, pair(0, item(x)))",
            "sig(sk1, pair(1, item(y)))",
        ]
        .iter()
        .map(|s| m(s))
        .collect();
        assert_eq!(threshold_filter(&db, 3, Some(0)).unwrap(), BTreeSet::from([it("x")]));
        assert!(threshold_filter(&db, 3, Some(1)).unwrap().is_empty());
        assert!(threshold_filter(&BTreeSet::new(), 1, Some(0)).unwrap().is_empty());
        let dup = Message::set(vec![m("sig(sk1, pair(0, item(x)))"), m("sig(sk1, pair(0, item(x)))")]);
        assert!(threshold_filter(dup.as_set().unwrap(), 2, Some(0)).unwrap().is_empty());
    }

    #[test]
    fn threshold_rejects_non_sig1() {
        let db = [m("sig(ssk1, pair(0, item(x)))")];
        assert!(matches!(threshold_filter(&db, 1, None), Err(MessageError::NotSig1(_))));
        let db = [m("item(x)")];
        assert!(threshold_filter(&db, 1, None).is_err());
    }

    #[test]
    fn witness_examples() {
        let a = BTreeSet::from([1, 2, 4]);
        let b = BTreeSet::from([2, 3, 4]);
        assert_eq!(counting_witness(&a, &b, 3), Some(2));
        let full: BTreeSet<usize> = (1..=3).collect();
        assert_eq!(counting_witness(&full, &full, 3), Some(1));
        assert_eq!(counting_witness(&BTreeSet::from([4]), &BTreeSet::from([4]), 3), None);
    }

    #[test]
    fn counting_lemma_small() {
        let r = verify_counting_lemma(4);
        assert!(r.missing.is_empty());
        // (1,1) (2,2) (3,3) (4,3) (4,4)
        assert_eq!(r.configurations, 5);
        // n=4, t=3 alone contributes 5 * 5 threshold pairs
        assert!(r.threshold_cases > 25);
    }

    #[test]
    fn clashset_examples() {
        let rel = ClashRelation::from_pairs([(it("a"), it("b"))]).unwrap();
        assert_eq!(rel.clashset(&it("a")), BTreeSet::from([it("b")]));
        assert_eq!(rel.clashset(&it("b")), BTreeSet::from([it("a")]));
        assert!(ClashRelation::new().clashset(&it("a")).is_empty());
        let rel = ClashRelation::from_pairs([(it("a"), it("b")), (it("c"), it("a"))]).unwrap();
        assert_eq!(rel.clashset(&it("a")), BTreeSet::from([it("b"), it("c")]));
        assert!(ClashRelation::from_pairs([(it("a"), it("a"))]).is_err());
    }

    #[test]
    fn parse_print_examples() {
        for s in [
            "sig(sk3, pair(1, item(x)))",
            "set{}",
            "hash(set{item(a), item(b)})",
            "key(ssk4)",
            "sig(SSK, pair(0, hash(set{})))",
        ] {
            assert_eq!(m(s).to_string(), s);
        }
        assert_eq!(m(" sig( sk3 ,pair(1,item(x)) ) ").to_string(), "sig(sk3, pair(1, item(x)))");
        assert!("sig(sk0, item(x))".parse::<Message>().is_err());
        assert!("item(x) junk".parse::<Message>().is_err());
        assert!("blob(x)".parse::<Message>().is_err());
        let (msg, used) = parse_prefix("item(a) rest").unwrap();
        assert_eq!(msg, m("item(a)"));
        assert_eq!(used, 7);
    }
}
