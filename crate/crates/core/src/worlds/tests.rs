use super::*;
use crate::types::PreferenceTriple;

fn world(name: &str, seed: u64) -> AnnotatorWorld {
    make_world(&WorldParams::preset(name).unwrap(), &mut SeededRng::new(seed)).unwrap()
}

fn fixed(user_id: usize, mode: LabelingMode, ra: f64, rb: f64) -> Annotator {
    Annotator::new(user_id, mode, move |f: &[f64]| Ok(if f[0] > 0.5 { ra } else { rb }))
}

#[test]
fn didactic_reward_examples() {
    let (m, s) = (0.2, 0.05);
    let peak = -(s * (2.0 * std::f64::consts::PI).sqrt()).ln();
    assert!((didactic_true_reward(m, m, s) - peak).abs() < 1e-15);
    for d in [0.01, 0.07, 0.3] {
        assert!((didactic_true_reward(m + d, m, s) - didactic_true_reward(m - d, m, s)).abs() < 1e-9);
    }
    let w = world("didactic", 0);
    let gap = w.true_reward(0, &[0.2]).unwrap() - w.true_reward(0, &[0.4]).unwrap();
    // -(x - mu)^2 / (2 sigma^2) evaluated at the two points
    let oracle = 0.0 - (-(0.2f64 * 0.2) / (2.0 * 0.05 * 0.05));
    assert!((gap - oracle).abs() < 1e-9 && (gap - 8.0).abs() < 1e-9);
}

#[test]
fn deterministic_labels_follow_reward() {
    let ann = fixed(0, LabelingMode::Deterministic, 2.0, 1.0);
    let mut rng = SeededRng::new(1);
    assert!(annotate(&ann, &[1.0], &[0.0], &mut rng).unwrap());
    assert!(!annotate(&ann, &[0.0], &[1.0], &mut rng).unwrap());
}

#[test]
fn stochastic_label_frequency() {
    let ann = fixed(0, LabelingMode::StochasticBtl, 3f64.ln(), 0.0);
    let mut rng = SeededRng::new(2);
    let n = 100_000;
    let hits = (0..n).filter(|_| annotate(&ann, &[1.0], &[0.0], &mut rng).unwrap()).count();
    assert!((hits as f64 / n as f64 - 0.75).abs() < 0.005);
}

#[test]
fn ties_are_a_fair_coin() {
    let ann = fixed(0, LabelingMode::Deterministic, 1.0, 1.0);
    let mut rng = SeededRng::new(3);
    let n = 10_000;
    let hits = (0..n).filter(|_| annotate(&ann, &[1.0], &[0.0], &mut rng).unwrap()).count();
    assert!((hits as f64 / n as f64 - 0.5).abs() < 0.01);
}

#[test]
fn unknown_world_is_a_config_error() {
    assert!(matches!(WorldParams::preset("ravens"), Err(Error::Config(_))));
    let bad: std::result::Result<WorldParams, _> = serde_json::from_str(r#"{"kind":"ravens"}"#);
    assert!(bad.is_err());
}

#[test]
fn pets_divergence_is_the_middle_pair() {
    let w = world("pets", 4);
    let states = w.states();
    for a in &states {
        for b in &states {
            let (ca, cb) = (argmax(&a[..4]), argmax(&b[..4]));
            let middle = (ca == 2 && cb == 3) || (ca == 3 && cb == 2);
            assert_eq!(w.is_divergent(a, b).unwrap(), middle);
            if ca != cb {
                let la = w.true_reward(0, a).unwrap() > w.true_reward(0, b).unwrap();
                let lb = w.true_reward(1, a).unwrap() > w.true_reward(1, b).unwrap();
                assert_eq!(la != lb, middle);
            }
        }
    }
}

#[test]
fn maze2_disagreement_matches_bfs_scores() {
    let w = world("maze2", 0);
    let g = w.grid().unwrap();
    let (g0, g1) = (g.goals()[0], g.goals()[1]);
    let (d0, d1) = (g.bfs(g0), g.bfs(g1));
    let cells: Vec<usize> = g.open_cells().collect();
    let mut divergent = 0;
    for &a in &cells {
        for &b in &cells {
            let s0 = d0[b].unwrap() as i64 - d0[a].unwrap() as i64;
            let s1 = d1[b].unwrap() as i64 - d1[a].unwrap() as i64;
            let expect = (s0 > 0 && s1 < 0) || (s0 < 0 && s1 > 0);
            let got = w.is_divergent(&g.features(a), &g.features(b)).unwrap();
            assert_eq!(got, expect);
            divergent += usize::from(got);
        }
    }
    assert!(divergent > 0);
}

#[test]
fn rearrange_rankings_are_distinct() {
    let w = make_world(&WorldParams::Rearrange { n_users: 120 }, &mut SeededRng::new(9)).unwrap();
    let states = w.states();
    let mut tables: Vec<Vec<i64>> = (0..120)
        .map(|u| states.iter().map(|s| w.true_reward(u, s).unwrap() as i64).collect())
        .collect();
    for t in &tables {
        let mut sorted = t.clone();
        sorted.sort();
        assert_eq!(sorted, vec![1, 2, 3, 4, 5]);
    }
    tables.sort();
    tables.dedup();
    assert_eq!(tables.len(), 120);
    assert!(make_world(&WorldParams::Rearrange { n_users: 121 }, &mut SeededRng::new(9)).is_err());
}

#[test]
fn tidy_users_sort_by_one_attribute() {
    let w = world("tidy", 0);
    let mut divergent = Vec::new();
    for (o, (_, function, material)) in TIDY_OBJECTS.iter().enumerate() {
        assert_eq!(w.true_reward(0, &tidy_features(o, *function)).unwrap(), 1.0);
        assert_eq!(w.true_reward(1, &tidy_features(o, *material)).unwrap(), 1.0);
        if w.is_divergent(&tidy_features(o, 0), &tidy_features(o, 1)).unwrap() {
            divergent.push(o);
        }
    }
    assert_eq!(divergent, vec![2, 3]);
}

#[test]
fn single_context_single_copy() {
    let w = world("maze2", 1);
    let ds = build_dataset(&w, 50, 1, 5, 1, None, &SeededRng::new(3)).unwrap();
    assert_eq!(ds.len(), 50);
    assert!(ds.records.iter().all(|r| r.ctx.len() == 1));
}

#[test]
fn augmentation_repeats_each_target() {
    let w = world("didactic", 1);
    let ds = build_dataset(&w, 40, 4, 30, 4, None, &SeededRng::new(3)).unwrap();
    for chunk in ds.records.chunks(4) {
        assert!(chunk.iter().all(|r| r.target == chunk[0].target && r.user_id == chunk[0].user_id));
        assert!(chunk.iter().any(|r| r.ctx != chunk[0].ctx));
    }
}

#[test]
fn deterministic_labels_match_true_rewards() {
    for name in ["maze2", "maze10", "rearrange", "pets", "tidy"] {
        let w = world(name, 2);
        let ds = build_dataset(&w, 200, 4, 10, 2, Some(LabelingMode::Deterministic), &SeededRng::new(5)).unwrap();
        for r in &ds.records {
            for t in r.ctx.iter().chain(std::iter::once(&r.target)) {
                let (ra, rb) = (w.true_reward(r.user_id, &t.sa).unwrap(), w.true_reward(r.user_id, &t.sb).unwrap());
                if ra != rb {
                    assert_eq!(t.label, ra > rb, "{name}");
                }
            }
            assert!(r.ctx.iter().all(|c| !same_pair_any(c, &r.target)));
        }
    }
}

fn same_pair_any(a: &PreferenceTriple, b: &PreferenceTriple) -> bool {
    (a.sa == b.sa && a.sb == b.sb) || (a.sa == b.sb && a.sb == b.sa)
}

#[test]
fn invalid_context_sizes_are_rejected() {
    let w = world("maze2", 0);
    assert!(matches!(build_dataset(&w, 5, 6, 5, 1, None, &SeededRng::new(0)), Err(Error::Config(_))));
    assert!(matches!(build_dataset(&w, 5, 2, 5, 0, None, &SeededRng::new(0)), Err(Error::Config(_))));
}

#[test]
fn generation_is_byte_identical() {
    let w = world("pets", 7);
    let a = build_dataset(&w, 60, 4, 30, 2, None, &SeededRng::new(11)).unwrap().to_jsonl().unwrap();
    let w2 = world("pets", 7);
    let b = build_dataset(&w2, 60, 4, 30, 2, None, &SeededRng::new(11)).unwrap().to_jsonl().unwrap();
    assert_eq!(a, b);
    let back = PreferenceDataset::from_jsonl(&a).unwrap();
    assert_eq!(back.to_jsonl().unwrap(), a);
}

#[test]
fn noise_injection_examples() {
    let w = world("maze2", 0);
    let ds = build_dataset(&w, 500, 4, 10, 1, None, &SeededRng::new(1)).unwrap();
    let same = inject_label_noise(&ds, 0.0, NoiseScope::All, &SeededRng::new(2)).unwrap();
    assert_eq!(same.records, ds.records);

    let flipped = inject_label_noise(&ds, 1.0, NoiseScope::ContextOnly, &SeededRng::new(2)).unwrap();
    for (a, b) in ds.records.iter().zip(&flipped.records) {
        assert_eq!(a.target, b.target);
        assert!(a.ctx.iter().zip(&b.ctx).all(|(x, y)| x.label != y.label));
    }

    let ds = build_dataset(&w, 2500, 4, 10, 1, None, &SeededRng::new(1)).unwrap();
    let half = inject_label_noise(&ds, 0.5, NoiseScope::ContextOnly, &SeededRng::new(3)).unwrap();
    let (mut flips, mut total) = (0, 0);
    for (a, b) in ds.records.iter().zip(&half.records) {
        for (x, y) in a.ctx.iter().zip(&b.ctx) {
            total += 1;
            flips += usize::from(x.label != y.label);
        }
    }
    assert_eq!(total, 10_000);
    assert!((flips as f64 / total as f64 - 0.5).abs() < 0.02);
    assert!(inject_label_noise(&ds, 1.5, NoiseScope::All, &SeededRng::new(3)).is_err());
}

#[test]
fn filter_divergent_examples() {
    let pets = world("pets", 0);
    let mut rng = SeededRng::new(4);
    let pairs: Vec<_> = (0..300).map(|_| pets.sample_pair(&mut rng).unwrap()).collect();
    let kept = filter_divergent(&pets, &pairs).unwrap();
    assert!(!kept.is_empty());
    for (a, b) in &kept {
        let mut c = [argmax(&a[..4]), argmax(&b[..4])];
        c.sort();
        assert_eq!(c, [2, 3]);
    }
    assert_eq!(filter_divergent(&pets, &kept).unwrap(), kept);

    let single = world("maze2_single", 0);
    let pairs: Vec<_> = (0..50).map(|_| single.sample_pair(&mut rng).unwrap()).collect();
    assert!(filter_divergent(&single, &pairs).unwrap().is_empty());

    let maze = world("maze2", 0);
    let g = maze.grid().unwrap();
    let pairs: Vec<_> = (0..200).map(|_| maze.sample_pair(&mut rng).unwrap()).collect();
    let kept = filter_divergent(&maze, &pairs).unwrap();
    let brute: Vec<_> = pairs
        .iter()
        .filter(|(a, b)| {
            let (ca, cb) = (g.cell_from_features(a).unwrap(), g.cell_from_features(b).unwrap());
            let s: Vec<i64> = (0..2)
                .map(|gi| g.goal_distance(gi, cb).unwrap() as i64 - g.goal_distance(gi, ca).unwrap() as i64)
                .collect();
            s[0] * s[1] < 0
        })
        .cloned()
        .collect();
    assert_eq!(kept, brute);
    assert_eq!(filter_divergent(&maze, &kept).unwrap(), kept);
}

#[test]
fn pets_context_pairs_are_divergent() {
    let w = world("pets", 0);
    let mut rng = SeededRng::new(0);
    for _ in 0..100 {
        let (a, b) = w.sample_context_pair(&mut rng).unwrap();
        assert!(w.is_divergent(&a, &b).unwrap());
    }
}

#[test]
fn user_weights_skew_sampling() {
    let params = WorldParams::PetsLike {
        group_a_fraction: 0.8,
        informative_context: true,
        instances_per_category: 4,
        noise_scale: 0.1,
    };
    let w = make_world(&params, &mut SeededRng::new(0)).unwrap();
    let mut rng = SeededRng::new(1);
    let n = 20_000;
    let a = (0..n).filter(|_| w.sample_user(&mut rng) == 0).count();
    assert!((a as f64 / n as f64 - 0.8).abs() < 0.015);
}
