use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::rng::stream_rng;
use crate::error::{Error, Result};
use crate::math::{clamp_prob, sigmoid, ORACLE_EPS};

const DOMAIN_WORLD: u64 = 0x5752_4c44;
const DOMAIN_WARMUP: u64 = 0x5741_524d;

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub users: usize,
    pub items: usize,
    /// Number of scenes including our own (scene 0).
    pub scenes: usize,
    pub latent_dim: usize,
    pub categories: usize,
    pub segments: usize,
    /// Cap on the behaviour history kept per user.
    pub max_seq_len: usize,
    /// Items placed in every history before the first episode.
    pub warmup_history: usize,
    /// Multiplier on the own-scene purchase probability after a click.
    pub own_scene_pay_scale: f64,
    pub click_bias: f64,
    pub pay_bias: f64,
    /// Logit offset of every non-own scene's purchase probability.
    pub other_scene_bias: f64,
    /// Standard deviation of the latent affinity logits.
    pub affinity_scale: f64,
    /// Correlation between the click and the purchase weight vectors.
    pub pay_click_correlation: f64,
    pub price_log_mean: f64,
    pub price_log_std: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            users: 2_000,
            items: 5_000,
            scenes: 3,
            latent_dim: 8,
            categories: 50,
            segments: 20,
            max_seq_len: 20,
            warmup_history: 10,
            own_scene_pay_scale: 0.5,
            click_bias: -1.5,
            pay_bias: -1.5,
            other_scene_bias: -2.5,
            affinity_scale: 1.5,
            pay_click_correlation: 0.5,
            price_log_mean: 3.0,
            price_log_std: 0.8,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 {
            return Err(Error::config("users", "must be positive"));
        }
        if self.items == 0 {
            return Err(Error::config("items", "must be positive"));
        }
        if self.scenes < 2 {
            return Err(Error::config("scenes", "must be at least 2"));
        }
        if self.latent_dim == 0 {
            return Err(Error::config("latent_dim", "must be positive"));
        }
        if self.categories == 0 {
            return Err(Error::config("categories", "must be positive"));
        }
        if self.segments == 0 {
            return Err(Error::config("segments", "must be positive"));
        }
        if self.max_seq_len == 0 {
            return Err(Error::config("max_seq_len", "must be positive"));
        }
        if self.warmup_history > self.max_seq_len {
            return Err(Error::config(
                "warmup_history",
                "must not exceed max_seq_len",
            ));
        }
        if !(0.0..=1.0).contains(&self.own_scene_pay_scale) {
            return Err(Error::config("own_scene_pay_scale", "must lie in [0, 1]"));
        }
        if !(-1.0..=1.0).contains(&self.pay_click_correlation) {
            return Err(Error::config(
                "pay_click_correlation",
                "must lie in [-1, 1]",
            ));
        }
        for (field, v) in [
            ("click_bias", self.click_bias),
            ("pay_bias", self.pay_bias),
            ("other_scene_bias", self.other_scene_bias),
            ("affinity_scale", self.affinity_scale),
            ("price_log_mean", self.price_log_mean),
            ("price_log_std", self.price_log_std),
        ] {
            if !v.is_finite() {
                return Err(Error::config(field, "must be finite"));
            }
        }
        if self.affinity_scale < 0.0 || self.price_log_std < 0.0 {
            return Err(Error::config(
                "affinity_scale",
                "scales must be nonnegative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    pub user_id: u32,
    pub segment: u32,
    /// Hidden from the models.
    pub latent: Vec<f64>,
    /// Item ids, most recent last.
    pub behavior_history: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemRecord {
    pub item_id: u32,
    pub category: u32,
    /// Hidden from the models.
    pub latent: Vec<f64>,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthModel {
    pub click_weights: Vec<f64>,
    pub pay_weights: Vec<f64>,
    pub click_bias: f64,
    pub pay_bias: f64,
    /// Logit offset per scene; scene 0 is our own scene.
    pub scene_bias: Vec<f64>,
    pub own_scene_pay_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbKind {
    Click,
    Pay,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub users: Vec<UserProfile>,
    pub items: Vec<ItemRecord>,
    pub ground_truth: GroundTruthModel,
    pub seed: u64,
}

/// Builds the world deterministically from `(config, seed)`.
pub fn generate_world(config: &WorldConfig, seed: u64) -> Result<World> {
    config.validate()?;
    let dim = config.latent_dim;
    let mut rng = stream_rng(seed, DOMAIN_WORLD, 0);

    let weight_scale = config.affinity_scale / libm::sqrt(dim as f64);
    let click_weights: Vec<f64> = (0..dim)
        .map(|_| weight_scale * (1.0 + 0.25 * normal(&mut rng)))
        .collect();
    let rho = config.pay_click_correlation;
    let rest = libm::sqrt(1.0 - rho * rho);
    let pay_weights: Vec<f64> = click_weights
        .iter()
        .map(|&w| rho * w + rest * weight_scale * normal(&mut rng))
        .collect();
    let mut scene_bias = alloc::vec![0.0; config.scenes];
    for b in scene_bias.iter_mut().skip(1) {
        *b = config.other_scene_bias + 0.25 * normal(&mut rng);
    }

    let segment_centroids: Vec<Vec<f64>> = (0..config.segments)
        .map(|_| normal_vec(&mut rng, dim, 1.0))
        .collect();
    let category_centroids: Vec<Vec<f64>> = (0..config.categories)
        .map(|_| normal_vec(&mut rng, dim, 1.0))
        .collect();

    let mut users = Vec::with_capacity(config.users);
    for user_id in 0..config.users {
        let segment = rng.random_range(0..config.segments);
        let latent = jitter(&mut rng, &segment_centroids[segment], 0.5);
        users.push(UserProfile {
            user_id: user_id as u32,
            segment: segment as u32,
            latent,
            behavior_history: Vec::new(),
        });
    }

    let mut items = Vec::with_capacity(config.items);
    for item_id in 0..config.items {
        let category = rng.random_range(0..config.categories);
        let latent = jitter(&mut rng, &category_centroids[category], 0.5);
        let price = libm::exp(config.price_log_mean + config.price_log_std * normal(&mut rng));
        items.push(ItemRecord {
            item_id: item_id as u32,
            category: category as u32,
            latent,
            price,
        });
    }

    let mut world = World {
        config: config.clone(),
        users,
        items,
        ground_truth: GroundTruthModel {
            click_weights,
            pay_weights,
            click_bias: config.click_bias,
            pay_bias: config.pay_bias,
            scene_bias,
            own_scene_pay_scale: config.own_scene_pay_scale,
        },
        seed,
    };
    seed_histories(&mut world);
    Ok(world)
}

/// Warm-up purchases: each user draws a few items by Gumbel-top-k over the
/// own-scene purchase logit from a random pool.
fn seed_histories(world: &mut World) {
    let want = world.config.warmup_history;
    if want == 0 {
        return;
    }
    let n_items = world.items.len();
    let pool = (want * 8).min(n_items);
    for u in 0..world.users.len() {
        let mut rng = stream_rng(world.seed, DOMAIN_WARMUP, u as u64);
        let candidates: Vec<usize> = if pool == n_items {
            (0..n_items).collect()
        } else {
            rand::seq::index::sample(&mut rng, n_items, pool).into_vec()
        };
        let mut keyed: Vec<(f64, usize)> = candidates
            .into_iter()
            .map(|i| {
                let g = -libm::log(-libm::log(open_unit(&mut rng)));
                (world.logit(u, i, ProbKind::Pay, 0) + g, i)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let take = want.min(keyed.len());
        // Highest-scored purchase is the most recent one.
        world.users[u].behavior_history =
            keyed[..take].iter().rev().map(|&(_, i)| i as u32).collect();
    }
}

impl World {
    /// Raw logit before the logistic link; ids are not bounds-checked.
    pub fn logit(&self, user: usize, item: usize, kind: ProbKind, scene: usize) -> f64 {
        let gt = &self.ground_truth;
        let u = &self.users[user].latent;
        let v = &self.items[item].latent;
        let (weights, bias) = match kind {
            ProbKind::Click => (&gt.click_weights, gt.click_bias),
            ProbKind::Pay => (&gt.pay_weights, gt.pay_bias),
        };
        let mut acc = bias + gt.scene_bias[scene];
        for k in 0..weights.len() {
            acc += weights[k] * u[k] * v[k];
        }
        acc
    }

    /// Logistic ground-truth probability, clamped inside `(1e-9, 1 - 1e-9)`.
    pub fn prob(&self, user: usize, item: usize, kind: ProbKind, scene: usize) -> f64 {
        clamp_prob(sigmoid(self.logit(user, item, kind, scene)), ORACLE_EPS)
    }

    /// Probability of an own-scene purchase once the item has been clicked.
    pub fn own_pay_after_click(&self, user: usize, item: usize) -> f64 {
        self.ground_truth.own_scene_pay_scale * self.prob(user, item, ProbKind::Pay, 0)
    }

    /// Post-view own-scene purchase probability, `p(click) · p(pay_g | click)`.
    pub fn post_view_pay_prob(&self, user: usize, item: usize) -> f64 {
        self.prob(user, item, ProbKind::Click, 0) * self.own_pay_after_click(user, item)
    }

    /// Probability of a purchase in at least one non-own scene.
    pub fn other_scene_pay_prob(&self, user: usize, item: usize) -> f64 {
        let none: f64 = (1..self.config.scenes)
            .map(|s| 1.0 - self.prob(user, item, ProbKind::Pay, s))
            .product();
        1.0 - none
    }

    pub fn check_ids(&self, user: u32, item: u32) -> Result<()> {
        if user as usize >= self.users.len() {
            return Err(Error::UnknownId {
                kind: "user",
                id: user as u64,
            });
        }
        if item as usize >= self.items.len() {
            return Err(Error::UnknownId {
                kind: "item",
                id: item as u64,
            });
        }
        Ok(())
    }

    pub fn scenes(&self) -> usize {
        self.config.scenes
    }
}

/// Pure ground-truth lookup with id validation.
pub fn ground_truth_prob(
    world: &World,
    user_id: u32,
    item_id: u32,
    kind: ProbKind,
    scene_id: u32,
) -> Result<f64> {
    world.check_ids(user_id, item_id)?;
    if scene_id as usize >= world.config.scenes {
        return Err(Error::UnknownId {
            kind: "scene",
            id: scene_id as u64,
        });
    }
    Ok(world.prob(user_id as usize, item_id as usize, kind, scene_id as usize))
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn normal_vec<R: Rng + ?Sized>(rng: &mut R, dim: usize, std: f64) -> Vec<f64> {
    (0..dim).map(|_| std * normal(rng)).collect()
}

fn jitter<R: Rng + ?Sized>(rng: &mut R, centre: &[f64], std: f64) -> Vec<f64> {
    centre.iter().map(|c| c + std * normal(rng)).collect()
}

/// Uniform draw in the open interval (0, 1).
pub(crate) fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}
