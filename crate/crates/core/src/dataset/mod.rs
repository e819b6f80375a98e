//! Training and evaluation datasets built from a funnel event log.
//!
//! Two spaces exist: the impression space `{Pv=1}` and the previous-stage space
//! `{PS=1}`. The latter carries all-scene purchase labels obtained by joining
//! the candidate log with purchases from every scene.

mod builder;
mod join;
mod sampling;

use alloc::vec::Vec;
use core::fmt;

pub use builder::{build_dp_dataset, DatasetBuilder};
pub use join::{join_purchases, purchases_from_log, JoinOutput, LabeledEvent, Purchase};
pub use sampling::negative_sample;

use crate::funnel::World;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Space {
    /// Impressions.
    Pv,
    /// Previous-stage candidates.
    Ps,
}

impl Space {
    pub fn as_str(self) -> &'static str {
        match self {
            Space::Pv => "pv",
            Space::Ps => "ps",
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Click,
    PayG,
    PayA,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Click => "click",
            Label::PayG => "pay_g",
            Label::PayA => "pay_a",
        }
    }

    pub fn parse(name: &str) -> Option<Label> {
        match name {
            "click" => Some(Label::Click),
            "pay_g" => Some(Label::PayG),
            "pay_a" => Some(Label::PayA),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Labels {
    pub click: bool,
    pub pay_g: bool,
    pub pay_a: bool,
}

impl Labels {
    pub fn get(&self, label: Label) -> bool {
        match label {
            Label::Click => self.click,
            Label::PayG => self.pay_g,
            Label::PayA => self.pay_a,
        }
    }
}

pub const USER_SLOTS: usize = 2;
pub const ITEM_SLOTS: usize = 2;
pub const CONTEXT_SLOTS: usize = 2;
/// Categorical slots embedded next to the attention summary.
pub const FEATURE_SLOTS: usize = USER_SLOTS + ITEM_SLOTS + CONTEXT_SLOTS;

/// Embedding-table rows of one sample's categorical features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SampleFeatures {
    /// `[user id, user segment]`
    pub user: [u32; USER_SLOTS],
    /// `[item id, item category]`; the first entry is the attention query.
    pub item: [u32; ITEM_SLOTS],
    /// `[scene, history-length bucket]`
    pub context: [u32; CONTEXT_SLOTS],
}

impl SampleFeatures {
    pub fn slots(&self) -> [u32; FEATURE_SLOTS] {
        [
            self.user[0],
            self.user[1],
            self.item[0],
            self.item[1],
            self.context[0],
            self.context[1],
        ]
    }

    pub fn target_row(&self) -> u32 {
        self.item[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub user_id: u32,
    pub item_id: u32,
    pub timestamp: u32,
    /// Whether the candidate was exposed; used by the ground-truth oracle only.
    pub pv: bool,
    pub features: SampleFeatures,
    /// Embedding rows of the behaviour sequence, most recent last.
    pub sequence: Vec<u32>,
    pub labels: Labels,
    pub split: Split,
}

impl Sample {
    pub fn key(&self) -> (u32, u32, u32) {
        (self.user_id, self.item_id, self.timestamp)
    }

    pub fn label(&self, label: Label) -> bool {
        self.labels.get(label)
    }
}

/// Samples of one space together with the space they were drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub space: Space,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(space: Space, samples: Vec<Sample>) -> Self {
        Self { space, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positives(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label(label)).count()
    }

    pub fn batch(&self) -> Batch<'_> {
        Batch::new(self.space, &self.samples)
    }
}

/// A borrowed run of samples that remembers its space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Batch<'a> {
    pub space: Space,
    pub samples: &'a [Sample],
}

impl<'a> Batch<'a> {
    pub fn new(space: Space, samples: &'a [Sample]) -> Self {
        Self { space, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self, label: Label) -> Vec<bool> {
        self.samples.iter().map(|s| s.label(label)).collect()
    }
}

/// Assignment of categorical features to rows of the shared embedding table.
///
/// Rows are laid out as `items | categories | users | segments | scenes |
/// history-length buckets`; item rows coincide with item ids so behaviour
/// sequences index the table directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub items: usize,
    pub categories: usize,
    pub users: usize,
    pub segments: usize,
    pub scenes: usize,
    pub length_buckets: usize,
    pub max_seq_len: usize,
}

impl FeatureLayout {
    pub const LENGTH_BUCKETS: usize = 5;

    pub fn for_world(world: &World) -> Self {
        let c = &world.config;
        Self {
            items: c.items,
            categories: c.categories,
            users: c.users,
            segments: c.segments,
            scenes: c.scenes,
            length_buckets: Self::LENGTH_BUCKETS,
            max_seq_len: c.max_seq_len,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.items
            + self.categories
            + self.users
            + self.segments
            + self.scenes
            + self.length_buckets
    }

    fn category_offset(&self) -> usize {
        self.items
    }

    fn user_offset(&self) -> usize {
        self.category_offset() + self.categories
    }

    fn segment_offset(&self) -> usize {
        self.user_offset() + self.users
    }

    fn scene_offset(&self) -> usize {
        self.segment_offset() + self.segments
    }

    fn bucket_offset(&self) -> usize {
        self.scene_offset() + self.scenes
    }

    pub fn length_bucket(&self, len: usize) -> usize {
        (len.min(self.max_seq_len) * self.length_buckets) / (self.max_seq_len + 1)
    }

    /// Feature rows for `(user, item)` served in `scene` with a history of `seq_len`.
    pub fn features(
        &self,
        world: &World,
        user: u32,
        item: u32,
        scene: u32,
        seq_len: usize,
    ) -> SampleFeatures {
        let u = &world.users[user as usize];
        let it = &world.items[item as usize];
        SampleFeatures {
            user: [
                (self.user_offset() + user as usize) as u32,
                (self.segment_offset() + u.segment as usize) as u32,
            ],
            item: [item, (self.category_offset() + it.category as usize) as u32],
            context: [
                (self.scene_offset() + scene as usize) as u32,
                (self.bucket_offset() + self.length_bucket(seq_len)) as u32,
            ],
        }
    }
}
