use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::rng::stream_rng;
use super::world::{ProbKind, World};
use crate::error::{Error, Result};

const DOMAIN_EPISODE: u64 = 0x4550_4953;

/// Sizes and noise levels of one pass through the funnel.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    /// Items the match stage scores per episode (capped at the catalogue size).
    pub pool_size: usize,
    /// Candidates handed from the match stage to the rank stage.
    pub ps_size: usize,
    /// Top ranked candidates that are exposed.
    pub impressions: usize,
    /// Std-dev of the Gaussian noise on the match-stage retrieval score.
    pub match_noise: f64,
    /// Std-dev of the Gaussian noise on the rank-stage heuristic score.
    pub rank_noise: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            pool_size: 500,
            ps_size: 25,
            impressions: 5,
            match_noise: 1.0,
            rank_noise: 0.5,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self, items: usize) -> Result<()> {
        if self.impressions == 0 {
            return Err(Error::config("impressions", "must be at least 1"));
        }
        if self.impressions > self.ps_size {
            return Err(Error::config("impressions", "must not exceed ps_size"));
        }
        if self.ps_size > self.pool_size.min(items) {
            return Err(Error::config(
                "ps_size",
                "must not exceed the candidate pool (pool_size capped at the item count)",
            ));
        }
        if !(self.match_noise >= 0.0) || !(self.rank_noise >= 0.0) {
            return Err(Error::config(
                "rank_noise",
                "noise levels must be nonnegative",
            ));
        }
        Ok(())
    }
}

/// One previous-stage candidate and what happened to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FunnelEvent {
    pub user_id: u32,
    pub item_id: u32,
    pub scene_id: u32,
    pub ps: bool,
    pub pv: bool,
    pub click: bool,
    pub pay_g: bool,
    pub pay_other: bool,
    /// Episode counter.
    pub timestamp: u32,
}

impl FunnelEvent {
    /// Purchased in any scene.
    pub fn pay_a(&self) -> bool {
        self.pay_g || self.pay_other
    }

    /// Own-scene ordering: `pv ⇒ ps`, `click ⇒ pv`, `pay_g ⇒ click`.
    pub fn is_ordered(&self) -> bool {
        (!self.pv || self.ps) && (!self.click || self.pv) && (!self.pay_g || self.click)
    }

    pub fn sort_key(&self) -> (u32, u32, u32) {
        (self.user_id, self.timestamp, self.item_id)
    }
}

/// Runs match → previous stage → rank → impression → click → purchase for one
/// user, plus independent off-scene purchases of every previous-stage candidate.
///
/// The rank stage is model-free: ground-truth click logit plus Gaussian noise.
/// Every candidate consumes the same number of uniforms whatever its outcome,
/// so runs that differ only in probabilities share their random numbers.
pub fn simulate_episode<R: Rng + ?Sized>(
    world: &World,
    user_id: u32,
    config: &EpisodeConfig,
    timestamp: u32,
    rng: &mut R,
) -> Result<Vec<FunnelEvent>> {
    let n_items = world.items.len();
    config.validate(n_items)?;
    if user_id as usize >= world.users.len() {
        return Err(Error::UnknownId {
            kind: "user",
            id: user_id as u64,
        });
    }
    let user = user_id as usize;

    let pool: Vec<usize> = if config.pool_size >= n_items {
        (0..n_items).collect()
    } else {
        rand::seq::index::sample(rng, n_items, config.pool_size).into_vec()
    };

    let mut retrieval: Vec<(f64, usize)> = pool
        .into_iter()
        .map(|i| {
            let noise: f64 = rng.sample(StandardNormal);
            (
                world.logit(user, i, ProbKind::Click, 0) + config.match_noise * noise,
                i,
            )
        })
        .collect();
    retrieval.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    retrieval.truncate(config.ps_size);

    let mut ranked: Vec<(f64, usize)> = retrieval
        .iter()
        .enumerate()
        .map(|(pos, &(_, i))| {
            let noise: f64 = rng.sample(StandardNormal);
            (
                world.logit(user, i, ProbKind::Click, 0) + config.rank_noise * noise,
                pos,
            )
        })
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut exposed = alloc::vec![false; retrieval.len()];
    for &(_, pos) in ranked.iter().take(config.impressions) {
        exposed[pos] = true;
    }

    let scenes = world.scenes();
    let mut events = Vec::with_capacity(retrieval.len());
    for (pos, &(_, item)) in retrieval.iter().enumerate() {
        let u_click: f64 = rng.random();
        let u_pay: f64 = rng.random();
        let pv = exposed[pos];
        let click = pv && u_click < world.prob(user, item, ProbKind::Click, 0);
        let pay_g = click && u_pay < world.own_pay_after_click(user, item);
        let mut pay_other = false;
        for scene in 1..scenes {
            let u: f64 = rng.random();
            pay_other |= u < world.prob(user, item, ProbKind::Pay, scene);
        }
        events.push(FunnelEvent {
            user_id,
            item_id: item as u32,
            scene_id: 0,
            ps: true,
            pv,
            click,
            pay_g,
            pay_other,
            timestamp,
        });
    }
    Ok(events)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    /// Sorted by `(user_id, timestamp, item_id)`.
    pub events: Vec<FunnelEvent>,
    /// Behaviour history of every user after the last episode.
    pub histories: Vec<Vec<u32>>,
}

/// Appends the clicked own-scene items of one episode (ascending item id) to a
/// history, keeping at most `cap` most recent entries.
pub fn extend_history(history: &mut Vec<u32>, clicked: impl Iterator<Item = u32>, cap: usize) {
    history.extend(clicked);
    if history.len() > cap {
        let drop = history.len() - cap;
        history.drain(..drop);
    }
}

/// Runs `episodes` funnel passes for every user.
///
/// Each user owns an RNG stream derived from `(world.seed, user_id)`, so the
/// log does not depend on the order in which users are processed.
pub fn run_simulation(
    world: &World,
    config: &EpisodeConfig,
    episodes: usize,
) -> Result<SimulationOutput> {
    config.validate(world.items.len())?;
    let cap = world.config.max_seq_len;
    let mut events = Vec::with_capacity(world.users.len() * episodes * config.ps_size);
    let mut histories = Vec::with_capacity(world.users.len());
    for user in &world.users {
        let mut rng = stream_rng(world.seed, DOMAIN_EPISODE, user.user_id as u64);
        let mut history = user.behavior_history.clone();
        for t in 0..episodes {
            let mut batch = simulate_episode(world, user.user_id, config, t as u32, &mut rng)?;
            batch.sort_by_key(FunnelEvent::sort_key);
            extend_history(
                &mut history,
                batch.iter().filter(|e| e.click).map(|e| e.item_id),
                cap,
            );
            events.extend(batch);
        }
        histories.push(history);
    }
    events.sort_by_key(FunnelEvent::sort_key);
    Ok(SimulationOutput { events, histories })
}
