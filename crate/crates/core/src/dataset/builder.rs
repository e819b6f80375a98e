use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use super::join::{join_purchases, purchases_from_log};
use super::{Dataset, FeatureLayout, Labels, Sample, Space, Split};
use crate::error::Result;
use crate::funnel::{FunnelEvent, World};

/// Featurizes an event log against the world that produced it.
///
/// Behaviour sequences are replayed from the world's warm-up histories plus
/// the clicked own-scene items of strictly earlier episodes, so a sample never
/// sees clicks from its own episode or later.
pub struct DatasetBuilder<'w> {
    world: &'w World,
    layout: FeatureLayout,
    events: Vec<FunnelEvent>,
    all_scene_purchases: BTreeSet<(u32, u32, u32)>,
    histories: BTreeMap<(u32, u32), Vec<u32>>,
    test_start: u32,
    join_anomalies: usize,
}

impl<'w> DatasetBuilder<'w> {
    /// Events with `timestamp >= test_start` form the test split.
    pub fn new(world: &'w World, events: &[FunnelEvent], test_start: u32) -> Result<Self> {
        for e in events {
            world.check_ids(e.user_id, e.item_id)?;
        }
        let mut events = events.to_vec();
        events.sort_by_key(FunnelEvent::sort_key);

        let joined = join_purchases(&events, &purchases_from_log(&events));
        let all_scene_purchases = joined
            .events
            .iter()
            .filter(|l| l.pay_a)
            .map(|l| (l.event.user_id, l.event.item_id, l.event.timestamp))
            .collect();

        let cap = world.config.max_seq_len;
        let mut histories = BTreeMap::new();
        let mut i = 0;
        while i < events.len() {
            let user = events[i].user_id;
            let mut history = world.users[user as usize].behavior_history.clone();
            while i < events.len() && events[i].user_id == user {
                let t = events[i].timestamp;
                histories.insert((user, t), history.clone());
                let start = i;
                while i < events.len() && events[i].user_id == user && events[i].timestamp == t {
                    i += 1;
                }
                crate::funnel::extend_history(
                    &mut history,
                    events[start..i]
                        .iter()
                        .filter(|e| e.click)
                        .map(|e| e.item_id),
                    cap,
                );
            }
        }

        Ok(Self {
            world,
            layout: FeatureLayout::for_world(world),
            events,
            all_scene_purchases,
            histories,
            test_start,
            join_anomalies: joined.anomalies,
        })
    }

    pub fn layout(&self) -> FeatureLayout {
        self.layout
    }

    pub fn join_anomalies(&self) -> usize {
        self.join_anomalies
    }

    pub fn split_of(&self, timestamp: u32) -> Split {
        if timestamp >= self.test_start {
            Split::Test
        } else {
            Split::Train
        }
    }

    /// Behaviour sequence seen by samples of `user` in episode `timestamp`.
    pub fn history(&self, user: u32, timestamp: u32) -> &[u32] {
        self.histories
            .get(&(user, timestamp))
            .map_or(&[], Vec::as_slice)
    }

    fn sample(&self, e: &FunnelEvent) -> Sample {
        let sequence = self.history(e.user_id, e.timestamp).to_vec();
        let features =
            self.layout
                .features(self.world, e.user_id, e.item_id, e.scene_id, sequence.len());
        Sample {
            user_id: e.user_id,
            item_id: e.item_id,
            timestamp: e.timestamp,
            pv: e.pv,
            features,
            sequence,
            labels: Labels {
                click: e.click,
                pay_g: e.pay_g,
                pay_a: self
                    .all_scene_purchases
                    .contains(&(e.user_id, e.item_id, e.timestamp)),
            },
            split: self.split_of(e.timestamp),
        }
    }

    fn build(&self, space: Space, split: Split, keep: impl Fn(&FunnelEvent) -> bool) -> Dataset {
        let samples = self
            .events
            .iter()
            .filter(|e| keep(e) && self.split_of(e.timestamp) == split)
            .map(|e| self.sample(e))
            .collect();
        Dataset::new(space, samples)
    }

    /// One sample per exposed candidate.
    pub fn pv(&self, split: Split) -> Dataset {
        self.build(Space::Pv, split, |e| e.pv)
    }

    /// One sample per previous-stage candidate, labelled with the joined
    /// all-scene purchase flag.
    pub fn ps(&self, split: Split) -> Dataset {
        self.build(Space::Ps, split, |e| e.ps)
    }
}

/// The purchase subset `D_p` of a previous-stage dataset: samples bought in
/// any scene. Its training label is `pay_g`.
pub fn build_dp_dataset(ps: &Dataset) -> Dataset {
    Dataset::new(
        ps.space,
        ps.samples
            .iter()
            .filter(|s| s.labels.pay_a)
            .cloned()
            .collect(),
    )
}
