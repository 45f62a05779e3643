//! Attention-MIL expert classifiers and their baseline inference modes.

mod baselines;
mod model;
mod train;

pub use baselines::{
    ensemble_predict, mc_dropout_predict, normalized_entropy, softmax_predict, ScoredPrediction,
};
pub use model::{
    abmil_on_tape, abmil_pool, AttentionKind, AttentionParams, ExpertForward, ExpertModel,
    ExpertOutput, ExpertSpec, HeadKind, LabelSource, Mode, TapeForward,
};
pub use train::{
    cross_entropy_on_tape, epoch_order, inverse_frequency_weights, train_expert, ExpertLoss,
    TrainConfig, TrainReport,
};

/// Penultimate width shared by every expert wired into one gate.
pub const DEFAULT_FEATURE_DIM: usize = 32;

/// Mixes an experiment seed with a member index into an independent seed.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(salt.wrapping_add(1).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn spec(
    name: &str,
    head: HeadKind,
    source: LabelSource,
    (hidden, attention, dropout): (usize, usize, f64),
    seed: u64,
) -> ExpertSpec {
    ExpertSpec {
        name: name.to_string(),
        head,
        label_source: source,
        hidden,
        attention,
        feature: DEFAULT_FEATURE_DIM,
        dropout,
        attention_kind: AttentionKind::Gated,
        seed,
    }
}

/// Six evidential experts: four on central-reader labels, two on local.
pub fn default_roster(seed: u64) -> Vec<ExpertSpec> {
    use HeadKind::Evidential;
    use LabelSource::{Central, Local};
    let members = [
        ("central-64-a", Central, (64, 32, 0.1)),
        ("central-64-b", Central, (64, 32, 0.25)),
        ("central-96-a", Central, (96, 48, 0.1)),
        ("central-96-b", Central, (96, 48, 0.25)),
        ("local-64", Local, (64, 32, 0.25)),
        ("local-96", Local, (96, 48, 0.1)),
    ];
    members
        .into_iter()
        .enumerate()
        .map(|(k, (name, source, arch))| spec(name, Evidential, source, arch, derive_seed(seed, k as u64)))
        .collect()
}

/// Softmax members for the single-softmax, MC dropout and ensemble
/// baselines. Member 0 doubles as the single network and the MC dropout model.
pub fn baseline_roster(seed: u64, members: usize) -> Vec<ExpertSpec> {
    (0..members)
        .map(|k| {
            spec(
                &format!("softmax-{k}"),
                HeadKind::Softmax,
                LabelSource::Central,
                (64, 32, 0.25),
                derive_seed(seed, 100 + k as u64),
            )
        })
        .collect()
}
