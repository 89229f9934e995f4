//! Canned step sequences for common runs.

use crate::machine::{Binding, Step, Trace};
use crate::message::{ItemId, KeyId, Message};

use super::ProtocolConfig;

/// Posts `item` in the current period and drives every honest peer through
/// signing, signature exchange and receipt shares, then combines the
/// receipt and acknowledges it. Assumes round 2 is enabled and nothing else
/// has happened in `period`.
pub fn posting_script(cfg: &ProtocolConfig, item: &ItemId, period: u32) -> Trace {
    let mut t = Trace::new(format!("bbprot{}", cfg.stage()));
    let honest = cfg.honest_count() as u32;
    let jx = |j: u32| Binding::new().nat("j", j).msg("x", Message::item(item));
    t.steps.push(Step::new("post", Binding::new().msg("x", Message::item(item))));
    for ev in ["c_msg1", "c_msg2a"] {
        for j in 1..=honest {
            t.steps.push(Step::new(ev, jx(j)));
        }
    }
    for j in 1..=honest {
        for k in (1..=honest).filter(|&k| k != j) {
            let s = Message::signed_item(KeyId::Sk(k as u8), period, item);
            t.steps.push(Step::new("c_msg2b", Binding::new().nat("j", j).msg("m", s)));
        }
    }
    for j in 1..=honest {
        t.steps.push(Step::new("c_msg3", jx(j)));
    }
    let body = Message::pair(period, Message::item(item));
    t.steps.push(Step::new("c_dy2", Binding::new().msg("m", body.clone())));
    t.steps.push(Step::new("ack", Binding::new().msg("r", Message::sig(KeyId::Ssk, body))));
    t
}
