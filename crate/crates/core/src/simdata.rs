//! Synthetic multi-rater trial data.
//!
//! Each video has a latent severity grade and a difficulty δ. Frames are
//! drawn around a class mean placed on an ordinal axis, with noise inflated
//! by `1 + δ`; a fraction of frames carry no class signal at all. Three
//! reader roles score the video with an ordinal Gaussian-round-clamp model
//! whose noise is also inflated by `1 + δ`, and the trial label is the
//! shared score on agreement or the median with an adjudicator otherwise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::evidential::NUM_CLASSES;

/// Highest ordinal grade.
pub const MAX_GRADE: u8 = (NUM_CLASSES - 1) as u8;

/// Stream reserved for drawing the class geometry shared by all bags.
const WORLD_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    Unseen,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Test, Split::Unseen];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unseen => "unseen",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|sp| sp.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaterRole {
    Local,
    Central,
    Adjudicator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaterProfile {
    /// Systematic shift on the ordinal scale.
    pub bias: f64,
    pub noise_sd: f64,
    pub role: RaterRole,
}

impl RaterProfile {
    pub fn new(role: RaterRole, bias: f64, noise_sd: f64) -> Result<Self> {
        let p = Self {
            bias,
            noise_sd,
            role,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) || !self.bias.is_finite() {
            return Err(Error::Config(format!(
                "rater {:?}: noise_sd must be positive and bias finite",
                self.role
            )));
        }
        Ok(())
    }
}

/// The three readers scoring one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaterPanel {
    pub local: RaterProfile,
    pub central: RaterProfile,
    pub adjudicator: RaterProfile,
}

impl RaterPanel {
    pub fn validate(&self) -> Result<()> {
        for (p, role) in [
            (&self.local, RaterRole::Local),
            (&self.central, RaterRole::Central),
            (&self.adjudicator, RaterRole::Adjudicator),
        ] {
            p.validate()?;
            if p.role != role {
                return Err(Error::Config(format!(
                    "panel slot {role:?} holds a {:?} profile",
                    p.role
                )));
            }
        }
        Ok(())
    }

    /// Readers of the development trials (train/val/test).
    pub fn development() -> Self {
        Self {
            local: RaterProfile {
                bias: 0.15,
                noise_sd: 0.3,
                role: RaterRole::Local,
            },
            central: RaterProfile {
                bias: 0.0,
                noise_sd: 0.22,
                role: RaterRole::Central,
            },
            adjudicator: RaterProfile {
                bias: 0.0,
                noise_sd: 0.2,
                role: RaterRole::Adjudicator,
            },
        }
    }

    /// A different reader pair for the held-out prospective trial.
    pub fn prospective() -> Self {
        Self {
            local: RaterProfile {
                bias: -0.1,
                noise_sd: 0.28,
                role: RaterRole::Local,
            },
            central: RaterProfile {
                bias: 0.1,
                noise_sd: 0.24,
                role: RaterRole::Central,
            },
            adjudicator: RaterProfile {
                bias: 0.0,
                noise_sd: 0.2,
                role: RaterRole::Adjudicator,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub unseen: usize,
}

impl SplitSizes {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
            Split::Unseen => self.unseen,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test + self.unseen
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub class_prior: Vec<f64>,
    pub videos: SplitSizes,
    /// Inclusive `[min, max]` frame count per video.
    pub frames_range: [usize; 2],
    pub feature_dim: usize,
    /// Distance between adjacent class means along the severity axis.
    pub class_separation: f64,
    pub difficulty_sd: f64,
    pub noninformative_frame_rate: f64,
    /// Norm of the feature-mean offset applied to the unseen split.
    pub unseen_shift: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            class_prior: vec![0.15, 0.25, 0.35, 0.25],
            videos: SplitSizes {
                train: 2000,
                val: 500,
                test: 500,
                unseen: 500,
            },
            frames_range: [16, 64],
            feature_dim: 32,
            class_separation: 0.5,
            difficulty_sd: 0.5,
            noninformative_frame_rate: 0.3,
            unseen_shift: 0.3,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.class_prior.len() != NUM_CLASSES {
            return bad("class_prior must have one entry per grade");
        }
        if self.class_prior.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return bad("class_prior entries must be non-negative");
        }
        if (self.class_prior.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("class_prior must sum to 1");
        }
        let [lo, hi] = self.frames_range;
        if lo < 1 || hi < lo {
            return bad("frames_range must satisfy 1 ≤ min ≤ max");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return bad("class_separation must be positive");
        }
        if !(self.difficulty_sd > 0.0 && self.difficulty_sd.is_finite()) {
            return bad("difficulty_sd must be positive");
        }
        if !(0.0..1.0).contains(&self.noninformative_frame_rate) {
            return bad("noninformative_frame_rate must lie in [0, 1)");
        }
        if !(self.unseen_shift >= 0.0 && self.unseen_shift.is_finite()) {
            return bad("unseen_shift must be non-negative");
        }
        Ok(())
    }
}

/// Scores assigned by the readers of one video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterLabels {
    pub local: u8,
    pub central: u8,
    pub adjudicator: Option<u8>,
}

/// One video: `N×D` frame features plus reader scores.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBag {
    pub bag_id: u64,
    pub split: Split,
    pub frames: Tensor,
    pub labels: RaterLabels,
    pub final_label: u8,
    /// Latent grade the readers were scoring (simulation ground truth).
    pub true_class: u8,
    pub difficulty: f64,
}

impl FeatureBag {
    pub fn n_frames(&self) -> usize {
        self.frames.rc().0
    }

    pub fn feature_dim(&self) -> usize {
        self.frames.rc().1
    }

    /// Frame-averaged feature vector.
    pub fn mean_features(&self) -> Vec<f64> {
        let (n, d) = self.frames.rc();
        let mut m = vec![0.0; d];
        for i in 0..n {
            for (acc, v) in m.iter_mut().zip(self.frames.row_slice(i)) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= n as f64);
        m
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.labels;
        let in_range = |g: u8| g <= MAX_GRADE;
        if self.n_frames() == 0 {
            return Err(Error::Shape(format!("bag {} has no frames", self.bag_id)));
        }
        if !(in_range(l.local)
            && in_range(l.central)
            && l.adjudicator.is_none_or(in_range)
            && in_range(self.final_label)
            && in_range(self.true_class))
        {
            return Err(Error::Config(format!("bag {}: grade out of range", self.bag_id)));
        }
        let expected = match l.adjudicator {
            None if l.local == l.central => l.local,
            Some(a) if l.local != l.central => median3(l.local, l.central, a),
            _ => {
                return Err(Error::Config(format!(
                    "bag {}: adjudicator presence disagrees with reader agreement",
                    self.bag_id
                )))
            }
        };
        if expected != self.final_label {
            return Err(Error::Config(format!(
                "bag {}: final label {} but scoring rule gives {expected}",
                self.bag_id, self.final_label
            )));
        }
        Ok(())
    }
}

pub fn median3(a: u8, b: u8, c: u8) -> u8 {
    a.max(b).min(a.min(b).max(c))
}

/// Trial scoring: the shared score when local and central agree, otherwise
/// the median of local, central and a lazily drawn adjudicator score.
pub fn trial_label(local: u8, central: u8, adjudicate: impl FnOnce() -> u8) -> (u8, bool) {
    if local == central {
        (local, false)
    } else {
        (median3(local, central, adjudicate()), true)
    }
}

/// One reader's score: `round(y* + bias + N(0, noise_sd·(1+δ)))` clamped to
/// the grade range.
pub fn rate<R: Rng + ?Sized>(true_class: u8, difficulty: f64, rater: &RaterProfile, rng: &mut R) -> u8 {
    let noise: f64 = rng.sample(StandardNormal);
    let raw = true_class as f64 + rater.bias + noise * rater.noise_sd * (1.0 + difficulty);
    raw.round().clamp(0.0, MAX_GRADE as f64) as u8
}

/// Class geometry shared by every bag generated from one seed.
#[derive(Debug, Clone)]
pub struct FeatureWorld {
    severity_axis: Vec<f64>,
    origin: Vec<f64>,
    background_mean: Vec<f64>,
    unseen_offset: Vec<f64>,
}

fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / norm).collect()
}

impl FeatureWorld {
    pub fn new(cfg: &GeneratorConfig) -> Self {
        let mut rng = bag_rng(cfg.seed, WORLD_STREAM);
        let d = cfg.feature_dim;
        let severity_axis = random_unit(d, &mut rng);
        let origin: Vec<f64> = (0..d).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let background_mean: Vec<f64> = (0..d).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let unseen_offset = random_unit(d, &mut rng)
            .into_iter()
            .map(|x| x * cfg.unseen_shift)
            .collect();
        Self {
            severity_axis,
            origin,
            background_mean,
            unseen_offset,
        }
    }

    pub fn class_mean(&self, class: u8, separation: f64) -> Vec<f64> {
        self.origin
            .iter()
            .zip(&self.severity_axis)
            .map(|(o, a)| o + class as f64 * separation * a)
            .collect()
    }
}

/// Counter-based per-bag generator: the ChaCha stream id is the bag id.
pub fn bag_rng(seed: u64, bag_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(bag_id);
    rng
}

/// Draws the `N×D` frame matrix of one video. Values are rounded to `f32`
/// precision so that the on-disk format round-trips exactly.
pub fn generate_video<R: Rng + ?Sized>(
    true_class: u8,
    difficulty: f64,
    shifted: bool,
    world: &FeatureWorld,
    cfg: &GeneratorConfig,
    rng: &mut R,
) -> Result<Tensor> {
    if true_class > MAX_GRADE {
        return Err(Error::Config(format!("true class {true_class} out of range")));
    }
    if !(difficulty >= 0.0 && difficulty.is_finite()) {
        return Err(Error::Config(format!("difficulty {difficulty} must be ≥ 0")));
    }
    cfg.validate()?;
    let [lo, hi] = cfg.frames_range;
    let n = rng.random_range(lo..=hi);
    let d = cfg.feature_dim;
    let mean = world.class_mean(true_class, cfg.class_separation);
    let sd = 1.0 + difficulty;
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let informative = !(rng.random::<f64>() < cfg.noninformative_frame_rate);
        let (centre, scale) = if informative {
            (&mean, sd)
        } else {
            (&world.background_mean, 1.0)
        };
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            let mut v = centre[j] + scale * z;
            if shifted {
                v += world.unseen_offset[j];
            }
            data.push(v as f32 as f64);
        }
    }
    Tensor::matrix(n, d, data)
}

/// Generated splits.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub train: Vec<FeatureBag>,
    pub val: Vec<FeatureBag>,
    pub test: Vec<FeatureBag>,
    pub unseen: Vec<FeatureBag>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[FeatureBag] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
            Split::Unseen => &self.unseen,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<FeatureBag> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
            Split::Unseen => &mut self.unseen,
        }
    }

    pub fn feature_dim(&self) -> Option<usize> {
        Split::ALL
            .iter()
            .flat_map(|&s| self.split(s).first())
            .map(FeatureBag::feature_dim)
            .next()
    }
}

fn generate_bag(
    bag_id: u64,
    split: Split,
    cfg: &GeneratorConfig,
    world: &FeatureWorld,
    class_dist: &WeightedIndex<f64>,
    panel: &RaterPanel,
) -> Result<FeatureBag> {
    let mut rng = bag_rng(cfg.seed, bag_id);
    let true_class = class_dist.sample(&mut rng) as u8;
    let difficulty = Normal::new(0.0, cfg.difficulty_sd)
        .map_err(|e| Error::Config(e.to_string()))?
        .sample(&mut rng)
        .abs();
    let frames = generate_video(
        true_class,
        difficulty,
        split == Split::Unseen,
        world,
        cfg,
        &mut rng,
    )?;
    let local = rate(true_class, difficulty, &panel.local, &mut rng);
    let central = rate(true_class, difficulty, &panel.central, &mut rng);
    let mut adjudicator = None;
    let (final_label, _) = trial_label(local, central, || {
        let a = rate(true_class, difficulty, &panel.adjudicator, &mut rng);
        adjudicator = Some(a);
        a
    });
    Ok(FeatureBag {
        bag_id,
        split,
        frames,
        labels: RaterLabels {
            local,
            central,
            adjudicator,
        },
        final_label,
        true_class,
        difficulty,
    })
}

/// Generates all four splits. Development splits use `development`
/// readers; the unseen split uses `prospective` readers and a shifted
/// feature mean. Bag ids are unique across splits and each bag depends only
/// on `(cfg.seed, bag_id)`.
pub fn generate_dataset(
    cfg: &GeneratorConfig,
    development: &RaterPanel,
    prospective: &RaterPanel,
) -> Result<Dataset> {
    cfg.validate()?;
    development.validate()?;
    prospective.validate()?;
    let world = FeatureWorld::new(cfg);
    let class_dist =
        WeightedIndex::new(&cfg.class_prior).map_err(|e| Error::Config(e.to_string()))?;
    let mut ds = Dataset::default();
    let mut next_id = 0u64;
    for split in Split::ALL {
        let panel = if split == Split::Unseen {
            prospective
        } else {
            development
        };
        let n = cfg.videos.get(split);
        let bags = (next_id..next_id + n as u64)
            .map(|id| generate_bag(id, split, cfg, &world, &class_dist, panel))
            .collect::<Result<Vec<_>>>()?;
        next_id += n as u64;
        *ds.split_mut(split) = bags;
    }
    Ok(ds)
}
