mod common;

use common::{bump, random_series, shifted_bumps, shifted_ramps, uni};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use warpalign::data::{mean_series, ClassGroup, LabeledDataset, LabeledItem, Series};
use warpalign::losses::{mean_pairwise_loss_of, series_loss};
use warpalign::net::{layout, NetConfig, WarperNetwork};
use warpalign::objective::warp_forward;
use warpalign::pipeline::train::infer_with;
use warpalign::pipeline::*;
use warpalign::report::to_csv;
use warpalign::warp::{check_constraints, PiecewiseLinearWarp};
use warpalign::{Error, LossConfig};

fn quick(epochs: usize, seeds: Vec<u64>) -> TrainConfig {
    TrainConfig {
        epochs,
        checkpoint_every: epochs.min(5),
        seeds,
        ..TrainConfig::default()
    }
}

/// A network whose heads emit slopes 1 and equal durations for any input.
fn identity_net(len: usize) -> WarperNetwork {
    let cfg = NetConfig::reduced(len, 1);
    let shapes = cfg.param_shapes();
    let mut net = WarperNetwork::init(cfg, 0).unwrap();
    for tensor in [layout::HEAD_A_WEIGHT, layout::HEAD_T_WEIGHT] {
        let start: usize = shapes[..tensor].iter().sum();
        for idx in start..start + shapes[tensor] {
            *net.params_mut().get_mut(idx) = 0.0;
        }
    }
    net
}

fn identity_warper(label: i64, members: Vec<Series>) -> ClassWarper {
    let network = identity_net(members[0].len());
    ClassWarper {
        label,
        warped_group: members
            .iter()
            .map(|s| infer_with(&network, s).unwrap())
            .collect(),
        network,
        history: Vec::new(),
        seed: 0,
        epoch: 0,
        validation_loss: 0.0,
    }
}

fn dataset(items: Vec<(i64, Series)>) -> LabeledDataset {
    LabeledDataset::new(
        "toy",
        items
            .into_iter()
            .map(|(label, series)| LabeledItem { label, series })
            .collect(),
    )
    .unwrap()
}

fn bump_ramp_split(n: usize, len: usize, seed: u64) -> LabeledDataset {
    let mut items: Vec<(i64, Series)> = shifted_bumps(n, len, seed)
        .series
        .into_iter()
        .map(|s| (1, s))
        .collect();
    items.extend(
        shifted_ramps(n, len, seed + 1)
            .series
            .into_iter()
            .map(|s| (2, s)),
    );
    dataset(items)
}

fn train_all(train: &LabeledDataset, len: usize, cfg: &TrainConfig) -> Vec<ClassWarper> {
    warpalign::data::group_by_label(train)
        .unwrap()
        .iter()
        .map(|g| {
            train_class_warper(g, &NetConfig::reduced(len, 1), cfg, &LossConfig::default()).unwrap()
        })
        .collect()
}

#[test]
fn identical_pair_warps_to_identical_members() {
    let s = bump(32, 14.0, 3.0);
    let group = ClassGroup::new(1, vec![s.clone(), s]).unwrap();
    let w = train_class_warper(
        &group,
        &NetConfig::reduced(32, 1),
        &quick(3, vec![0]),
        &LossConfig::default(),
    )
    .unwrap();
    assert_eq!(w.history.len(), 3);
    assert_eq!(w.warped_group[0], w.warped_group[1]);
    assert!(mean_pairwise_loss_of(&w.warped_group, 1e-8).unwrap() < 1e-12);
}

#[test]
fn training_keeps_shapes_and_constraints() {
    let group = shifted_bumps(6, 48, 11);
    let before = group.clone();
    let w = train_class_warper(
        &group,
        &NetConfig::reduced(48, 1),
        &quick(4, vec![3]),
        &LossConfig::default(),
    )
    .unwrap();
    assert_eq!(group, before);
    assert_eq!(w.history.len(), 4);
    assert_eq!(w.warped_group.len(), 6);
    assert!(w.history.iter().all(|v| v.is_finite()));
    for (s, warped) in group.series.iter().zip(&w.warped_group) {
        assert_eq!(warped.len(), 48);
        let eval = warp_forward(&w.network, s).unwrap();
        assert!(check_constraints(&eval.warp).all());
        assert_eq!(&eval.warped, warped);
    }
}

#[test]
fn strong_penalty_keeps_warps_near_identity() {
    let group = shifted_bumps(6, 48, 5);
    let loss = LossConfig {
        lambda2: 100.0,
        ..LossConfig::default()
    };
    let w = train_class_warper(
        &group,
        &NetConfig::reduced(48, 1),
        &quick(5, vec![0]),
        &loss,
    )
    .unwrap();
    for s in &group.series {
        let slopes = warp_forward(&w.network, s).unwrap().slopes;
        let dev = slopes.iter().map(|a| (a - 1.0).abs()).sum::<f64>() / slopes.len() as f64;
        assert!(dev < 0.1, "mean |a - 1| = {dev}");
    }
}

#[test]
fn first_epoch_is_reproducible_without_substitution() {
    let group = shifted_bumps(5, 32, 9);
    let cfg = TrainConfig {
        substitution_start_epoch: None,
        ..quick(1, vec![4])
    };
    let run = || {
        train_class_warper(
            &group,
            &NetConfig::reduced(32, 1),
            &cfg,
            &LossConfig::default(),
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.history[0].to_bits(), b.history[0].to_bits());
    assert_eq!(a.network, b.network);
}

#[test]
fn restarts_pick_the_lowest_validation_loss() {
    let group = shifted_bumps(8, 32, 2);
    let w = train_class_warper(
        &group,
        &NetConfig::reduced(32, 1),
        &quick(2, vec![0, 1]),
        &LossConfig::default(),
    )
    .unwrap();
    for seed in [0, 1] {
        let single = train_class_warper(
            &group,
            &NetConfig::reduced(32, 1),
            &quick(2, vec![seed]),
            &LossConfig::default(),
        )
        .unwrap();
        assert!(w.validation_loss <= single.validation_loss);
    }
}

#[test]
fn undersized_group_is_a_contract_violation() {
    let group = ClassGroup::new(1, vec![bump(32, 10.0, 2.0)]).unwrap();
    let err = train_class_warper(
        &group,
        &NetConfig::reduced(32, 1),
        &quick(1, vec![0]),
        &LossConfig::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "{err}");
}

#[test]
fn invalid_train_config_is_rejected() {
    let group = shifted_bumps(3, 32, 0);
    let net = NetConfig::reduced(32, 1);
    for cfg in [
        TrainConfig {
            epochs: 0,
            ..quick(1, vec![0])
        },
        TrainConfig {
            checkpoint_every: 3,
            ..quick(2, vec![0])
        },
        TrainConfig {
            substitution_start_epoch: Some(0),
            ..quick(1, vec![0])
        },
        TrainConfig {
            validation_fraction: 1.0,
            ..quick(1, vec![0])
        },
        quick(1, vec![]),
    ] {
        assert!(matches!(
            train_class_warper(&group, &net, &cfg, &LossConfig::default()),
            Err(Error::Config(_))
        ));
    }
}

#[test]
fn periodic_checkpoints_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        checkpoint_every: 1,
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..quick(2, vec![7])
    };
    train_class_warper(
        &shifted_bumps(4, 32, 1),
        &NetConfig::reduced(32, 1),
        &cfg,
        &LossConfig::default(),
    )
    .unwrap();
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        vec!["class1.seed7.epoch1.wrpn", "class1.seed7.epoch2.wrpn"]
    );
}

#[test]
fn identity_warper_returns_its_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let members: Vec<Series> = (0..3).map(|_| random_series(&mut rng, 1, 40)).collect();
    let w = identity_warper(1, members.clone());
    for s in &members {
        assert_eq!(&infer_warp(&w, s).unwrap(), s);
    }
    assert_eq!(warped_average(&w).unwrap(), mean_series(&members).unwrap());
}

#[test]
fn inference_rejects_other_lengths() {
    let w = identity_warper(1, vec![bump(40, 20.0, 3.0), bump(40, 18.0, 3.0)]);
    let err = infer_warp(&w, &bump(41, 20.0, 3.0)).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn warped_average_of_identical_signals_is_that_signal() {
    let s = bump(40, 20.0, 4.0);
    let w = identity_warper(1, vec![s.clone(), s.clone(), s.clone()]);
    let avg = warped_average(&w).unwrap();
    for (a, b) in avg.values().iter().zip(s.values()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn warped_average_of_two_constants_is_their_midpoint() {
    let group = ClassGroup::new(1, vec![uni(&[1.5; 32]), uni(&[4.0; 32])]).unwrap();
    let w = train_class_warper(
        &group,
        &NetConfig::reduced(32, 1),
        &quick(2, vec![0]),
        &LossConfig::default(),
    )
    .unwrap();
    for v in warped_average(&w).unwrap().values() {
        assert!((v - 2.75).abs() < 1e-12, "{v}");
    }
}

#[test]
fn warped_average_beats_simple_average_on_bumps() {
    let group = shifted_bumps(12, 64, 21);
    let w = train_class_warper(
        &group,
        &NetConfig::reduced(64, 1),
        &quick(10, vec![0]),
        &LossConfig::default(),
    )
    .unwrap();
    let simple = mean_series(&group.series).unwrap();
    let ours = warped_average(&w).unwrap();
    let mean_loss = |members: &[Series], avg: &Series| {
        members
            .iter()
            .map(|s| series_loss(s, avg, 1e-8).unwrap())
            .sum::<f64>()
            / members.len() as f64
    };
    let simple_loss = mean_loss(&group.series, &simple);
    let ours_loss = mean_loss(&w.warped_group, &ours);
    assert!(
        ours_loss < simple_loss,
        "warped {ours_loss} vs simple {simple_loss}"
    );
}

#[test]
fn classifiers_are_perfect_on_their_training_set() {
    let train = bump_ramp_split(5, 32, 4);
    assert_eq!(classify_nn(&train, &train).unwrap(), 1.0);
    assert_eq!(classify_dtw_nn(&train, &train).unwrap(), 1.0);
}

#[test]
fn separable_two_point_set() {
    let train = dataset(vec![(1, uni(&[0.0, 0.0, 0.0])), (2, uni(&[5.0, 5.0, 5.0]))]);
    let test = dataset(vec![
        (1, uni(&[0.5, -0.2, 0.1])),
        (2, uni(&[4.0, 5.5, 5.0])),
    ]);
    assert_eq!(classify_nn(&train, &test).unwrap(), 1.0);
    assert_eq!(classify_dtw_nn(&train, &test).unwrap(), 1.0);
    assert_eq!(classify_dba_nn(&train, &test).unwrap(), 1.0);
}

#[test]
fn dtw_recovers_a_shifted_copy_where_euclid_fails() {
    let spike = |at: usize| {
        let mut v = vec![0.0; 10];
        v[at] = 1.0;
        uni(&v)
    };
    let train = dataset(vec![(1, spike(2)), (2, uni(&[0.0; 10]))]);
    let test = dataset(vec![(1, spike(6))]);
    assert_eq!(predict_nn(&train, &test).unwrap(), vec![2]);
    assert_eq!(classify_nn(&train, &test).unwrap(), 0.0);
    assert_eq!(classify_dtw_nn(&train, &test).unwrap(), 1.0);
}

#[test]
fn nearest_neighbour_ties_go_to_the_lowest_index() {
    let train = dataset(vec![(2, uni(&[1.0, 0.0])), (1, uni(&[-1.0, 0.0]))]);
    let test = dataset(vec![(1, uni(&[0.0, 0.0]))]);
    assert_eq!(predict_nn(&train, &test).unwrap(), vec![2]);
}

#[test]
fn dba_classifier_on_constant_levels() {
    let train = dataset(vec![
        (1, uni(&[1.0; 8])),
        (1, uni(&[1.0; 8])),
        (2, uni(&[3.0; 8])),
        (2, uni(&[3.0; 8])),
    ]);
    let test = dataset(vec![
        (1, uni(&[1.2; 8])),
        (2, uni(&[2.9; 8])),
        (1, uni(&[0.1; 8])),
    ]);
    assert_eq!(classify_dba_nn(&train, &test).unwrap(), 1.0);
    let single = dataset(vec![(4, uni(&[1.0, 2.0, 3.0])), (4, uni(&[2.0, 2.0, 1.0]))]);
    assert_eq!(classify_dba_nn(&single, &single).unwrap(), 1.0);
}

#[test]
fn classifiers_reject_empty_or_missing_inputs() {
    let train = dataset(vec![(1, uni(&[0.0, 1.0]))]);
    let empty = LabeledDataset {
        name: "empty".into(),
        items: Vec::new(),
    };
    assert!(matches!(
        classify_nn(&train, &empty),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        classify_dtw_nn(&empty, &train),
        Err(Error::Contract(_))
    ));
    let w = identity_warper(1, vec![bump(32, 10.0, 2.0), bump(32, 12.0, 2.0)]);
    let test = dataset(vec![(2, bump(32, 11.0, 2.0))]);
    assert!(matches!(
        classify_ours(std::slice::from_ref(&w), &test, &LossConfig::default()),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        classify_ours(&[w.clone(), w], &test, &LossConfig::default()),
        Err(Error::Contract(_))
    ));
}

#[test]
fn warped_average_match_wins_with_zero_loss() {
    let a = identity_warper(1, vec![bump(32, 10.0, 2.0), bump(32, 12.0, 2.0)]);
    let b = identity_warper(2, vec![bump(32, 22.0, 2.0), bump(32, 24.0, 2.0)]);
    let target = warped_average(&b).unwrap();
    let test = dataset(vec![(2, target.clone())]);
    assert_eq!(
        predict_ours(&[a.clone(), b.clone()], &test, &LossConfig::default()).unwrap(),
        vec![2]
    );
    let averages = [warped_average(&a).unwrap(), target.clone()];
    let scores = warpalign::pipeline::classify::ours_scores(
        &[a, b],
        &averages,
        &target,
        &LossConfig::default(),
    )
    .unwrap();
    assert!(scores[1].abs() < 1e-12);
    assert!(scores[0] > scores[1]);
}

#[test]
fn ours_separates_bumps_from_ramps_and_ignores_scale() {
    let train = bump_ramp_split(8, 48, 30);
    let test = bump_ramp_split(15, 48, 60);
    let scaled = LabeledDataset {
        name: "scaled".into(),
        items: test
            .items
            .iter()
            .map(|it| LabeledItem {
                label: it.label,
                series: it.series.scaled(3.7),
            })
            .collect(),
    };
    for seed in 0..3 {
        let warpers = train_all(&train, 48, &quick(3, vec![seed]));
        let cfg = LossConfig::default();
        let acc = classify_ours(&warpers, &test, &cfg).unwrap();
        assert!(acc >= 0.95, "seed {seed}: accuracy {acc}");
        assert_eq!(
            predict_ours(&warpers, &test, &cfg).unwrap(),
            predict_ours(&warpers, &scaled, &cfg).unwrap()
        );
    }
}

#[test]
fn mpce_examples() {
    assert_eq!(mpce(&[(1.0, 3)]).unwrap(), 0.0);
    assert!((mpce(&[(0.9, 2)]).unwrap() - 0.05).abs() < 1e-15);
    assert!(matches!(mpce(&[]), Err(Error::Contract(_))));
    assert!(matches!(mpce(&[(1.2, 2)]), Err(Error::Contract(_))));
    assert!(matches!(mpce(&[(0.5, 0)]), Err(Error::Contract(_))));
}

#[test]
fn mtsa_objective_examples() {
    let id = PiecewiseLinearWarp::identity(4, 16);
    let x = bump(16, 7.0, 2.0);
    let same = vec![
        (x.clone(), id.clone()),
        (x.clone(), id.clone()),
        (x.clone(), id.clone()),
    ];
    assert_eq!(mtsa_objective(&same, ObjectiveForm::Matrix).unwrap(), 0.0);

    let c = 0.75;
    let shifted = Series::univariate(x.values().iter().map(|v| v + c).collect()).unwrap();
    let pair = vec![(x.clone(), id.clone()), (shifted, id)];
    for form in [ObjectiveForm::Matrix, ObjectiveForm::Functional] {
        let v = mtsa_objective(&pair, form).unwrap();
        assert!((v - 2.0 * 16.0 * c * c).abs() < 1e-12, "{form:?}: {v}");
    }
}

#[test]
fn timing_row_follows_the_table_schema() {
    let group = shifted_bumps(4, 32, 8);
    let test = dataset(
        shifted_bumps(3, 32, 9)
            .series
            .into_iter()
            .map(|s| (1, s))
            .collect(),
    );
    let row = timing_bench(
        "Bumps",
        &group,
        &test,
        &NetConfig::reduced(32, 1),
        &quick(1, vec![0]),
        &LossConfig::default(),
    )
    .unwrap();
    assert_eq!(row.n_train, 4);
    assert_eq!(row.our_whole_s, row.our_train_s + row.our_test_s);
    assert!(row.our_train_s > 0.0 && row.dba_whole_s > 0.0);
    let text = String::from_utf8(to_csv(&[row]).unwrap()).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "name,label,n_train,our_train_s,our_test_s,our_whole_s,dba_whole_s"
    );
}

fn warp_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, usize)> {
    (1usize..6, 4usize..40).prop_flat_map(|(k, t)| {
        (
            proptest::collection::vec(0.0f64..2.5, k),
            proptest::collection::vec(0.0f64..1.0, k),
            Just(t),
        )
    })
}

proptest! {
    #[test]
    fn matrix_and_functional_objectives_agree(
        (slopes, raw, t) in warp_strategy(),
        (slopes2, raw2, _) in warp_strategy(),
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w1 = PiecewiseLinearWarp::from_raw(slopes, &raw, t).unwrap();
        let w2 = PiecewiseLinearWarp::from_raw(slopes2, &raw2, t).unwrap();
        let items = vec![(random_series(&mut rng, 2, t), w1), (random_series(&mut rng, 2, t), w2)];
        let m = mtsa_objective(&items, ObjectiveForm::Matrix).unwrap();
        let f = mtsa_objective(&items, ObjectiveForm::Functional).unwrap();
        prop_assert!((m - f).abs() <= 1e-9 * m.abs().max(1.0), "matrix {} functional {}", m, f);
    }

    #[test]
    fn validation_split_partitions_the_group(n in 2usize..60, fraction in 0.0f64..0.99, seed in 0u64..50) {
        let (train, held) = validation_split(n, fraction, seed);
        prop_assert!(train.len() >= 2);
        prop_assert_eq!(held.len(), ((fraction * n as f64).round() as usize).min(n - 2));
        let mut all: Vec<usize> = train.iter().chain(&held).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(train.windows(2).all(|p| p[0] < p[1]));
        prop_assert!(held.windows(2).all(|p| p[0] < p[1]));
        prop_assert_eq!(validation_split(n, fraction, seed), (train, held));
    }
}
