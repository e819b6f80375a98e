use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::funnel::FunnelEvent;

/// A purchase observed in some scene. Scene 0 is our own scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Purchase {
    pub user_id: u32,
    pub item_id: u32,
    /// Episode window the purchase is attributed to.
    pub timestamp: u32,
    pub scene_id: u32,
}

impl Purchase {
    fn key(&self) -> (u32, u32, u32) {
        (self.user_id, self.item_id, self.timestamp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledEvent {
    pub event: FunnelEvent,
    pub pay_a: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinOutput {
    /// One entry per distinct previous-stage key, sorted by `(user, item, timestamp)`.
    pub events: Vec<LabeledEvent>,
    /// Duplicate previous-stage keys whose flags disagreed and were OR-merged.
    pub anomalies: usize,
}

/// Purchase records contained in a log: own-scene purchases as scene 0 and
/// off-scene purchases as scene 1 (the log does not say which other scene).
pub fn purchases_from_log(events: &[FunnelEvent]) -> Vec<Purchase> {
    let mut out = Vec::new();
    for e in events {
        if e.pay_g {
            out.push(Purchase {
                user_id: e.user_id,
                item_id: e.item_id,
                timestamp: e.timestamp,
                scene_id: 0,
            });
        }
        if e.pay_other {
            out.push(Purchase {
                user_id: e.user_id,
                item_id: e.item_id,
                timestamp: e.timestamp,
                scene_id: 1,
            });
        }
    }
    out
}

/// Labels previous-stage candidates with the all-scene purchase flag.
///
/// `pay_a = 1` iff some purchase carries the same `(user, item, episode)` key.
/// Purchases without a matching candidate are dropped.
pub fn join_purchases(ps_events: &[FunnelEvent], purchases: &[Purchase]) -> JoinOutput {
    let mut sorted: Vec<FunnelEvent> = ps_events.iter().filter(|e| e.ps).copied().collect();
    sorted.sort_by_key(|e| (e.user_id, e.item_id, e.timestamp));

    let mut merged: Vec<FunnelEvent> = Vec::with_capacity(sorted.len());
    let mut anomalies = 0;
    let mut group_conflict = false;
    let mut first_of_group: Option<FunnelEvent> = None;
    for e in sorted {
        match merged.last_mut() {
            Some(last)
                if (last.user_id, last.item_id, last.timestamp)
                    == (e.user_id, e.item_id, e.timestamp) =>
            {
                if !group_conflict && first_of_group != Some(e) {
                    group_conflict = true;
                    anomalies += 1;
                }
                last.pv |= e.pv;
                last.click |= e.click;
                last.pay_g |= e.pay_g;
                last.pay_other |= e.pay_other;
            }
            _ => {
                group_conflict = false;
                first_of_group = Some(e);
                merged.push(e);
            }
        }
    }

    let bought: BTreeSet<(u32, u32, u32)> = purchases.iter().map(Purchase::key).collect();
    let events = merged
        .into_iter()
        .map(|event| LabeledEvent {
            pay_a: bought.contains(&(event.user_id, event.item_id, event.timestamp)),
            event,
        })
        .collect();
    JoinOutput { events, anomalies }
}
