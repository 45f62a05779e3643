use evfuse::simdata::{generate_dataset, GeneratorConfig, RaterPanel, RaterProfile, RaterRole, Split, SplitSizes};

fn quiet_panel() -> RaterPanel {
    RaterPanel {
        local: RaterProfile::new(RaterRole::Local, 0.0, 0.05).unwrap(),
        central: RaterProfile::new(RaterRole::Central, 0.0, 0.05).unwrap(),
        adjudicator: RaterProfile::new(RaterRole::Adjudicator, 0.0, 0.05).unwrap(),
    }
}

fn big(prior: Vec<f64>) -> GeneratorConfig {
    GeneratorConfig {
        class_prior: prior,
        videos: SplitSizes {
            train: 10_000,
            val: 0,
            test: 0,
            unseen: 0,
        },
        frames_range: [2, 3],
        feature_dim: 4,
        difficulty_sd: 0.01,
        ..GeneratorConfig::default()
    }
}

#[test]
fn label_frequencies_follow_prior_at_low_noise() {
    let prior = vec![0.1, 0.4, 0.3, 0.2];
    let ds = generate_dataset(&big(prior.clone()), &quiet_panel(), &quiet_panel()).unwrap();
    let bags = ds.split(Split::Train);
    for (c, &p) in prior.iter().enumerate() {
        let freq = bags.iter().filter(|b| b.final_label as usize == c).count() as f64 / bags.len() as f64;
        assert!((freq - p).abs() < 0.03, "class {c}: {freq} vs {p}");
    }
    let agree = bags.iter().filter(|b| b.labels.local == b.labels.central).count() as f64 / bags.len() as f64;
    assert!(agree > 0.99);
}

#[test]
fn default_readers_agree_most_of_the_time() {
    let cfg = GeneratorConfig::default();
    let ds = generate_dataset(&cfg, &RaterPanel::development(), &RaterPanel::prospective()).unwrap();
    for split in Split::ALL {
        let bags = ds.split(split);
        let agree = bags.iter().filter(|b| b.labels.local == b.labels.central).count() as f64 / bags.len() as f64;
        assert!((0.65..=0.85).contains(&agree), "{split:?}: {agree}");
        for b in bags {
            assert_eq!(b.labels.adjudicator.is_some(), b.labels.local != b.labels.central);
        }
    }
}

#[test]
fn noisier_readers_disagree_more() {
    let mut prev = -1.0;
    for sd in [0.1, 0.3, 0.6, 1.0] {
        let panel = RaterPanel {
            local: RaterProfile::new(RaterRole::Local, 0.0, sd).unwrap(),
            central: RaterProfile::new(RaterRole::Central, 0.0, sd).unwrap(),
            adjudicator: RaterProfile::new(RaterRole::Adjudicator, 0.0, sd).unwrap(),
        };
        let mut cfg = big(vec![0.25; 4]);
        cfg.videos.train = 4000;
        let ds = generate_dataset(&cfg, &panel, &panel).unwrap();
        let bags = ds.split(Split::Train);
        let d = bags.iter().filter(|b| b.labels.local != b.labels.central).count() as f64 / bags.len() as f64;
        assert!(d > prev, "sd {sd}: {d} ≤ {prev}");
        prev = d;
    }
}
