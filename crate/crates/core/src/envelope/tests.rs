use approx::assert_abs_diff_eq;
use rand::Rng;

use super::*;
use crate::pattern::{
    build_scenario, permute_marks, sample_poisson, MarkedPattern, Point, ScenarioId, ScenarioSpec,
    Window,
};
use crate::summary::{estimate_local, Bandwidth, KernelFamily};

fn test_pattern(seed: u64, intensity: f64, alpha: &[f64]) -> MarkedPattern {
    let key = StreamKey::root(seed);
    let spec = ScenarioSpec {
        intensity,
        window: Window::unit(),
        background_alpha: alpha.to_vec(),
        regions: Vec::new(),
        scenario_id: ScenarioId::Custom,
    };
    let locations = sample_poisson(intensity, &spec.window, &mut key.child(0).rng()).unwrap();
    build_scenario(&spec, locations, key.child(1)).unwrap().pattern
}

/// Straightforward re-implementation of the ERL ordering: pointwise
/// two-sided mid-ranks by direct counting, vectors sorted ascending,
/// compared lexicographically with index tie-breaks.
fn reference_erl_order(values: &[Vec<f64>], mask: &[bool]) -> Vec<usize> {
    let m = values.len();
    let retained: Vec<usize> = (0..mask.len()).filter(|&t| !mask[t]).collect();
    let mut vectors: Vec<Vec<f64>> = vec![Vec::new(); m];
    for &t in &retained {
        for c in 0..m {
            let v = values[c][t];
            let less = values.iter().filter(|w| w[t] < v).count() as f64;
            let greater = values.iter().filter(|w| w[t] > v).count() as f64;
            let equal = m as f64 - less - greater;
            let up = less + (equal + 1.0) / 2.0;
            let down = greater + (equal + 1.0) / 2.0;
            vectors[c].push(up.min(down));
        }
    }
    for v in vectors.iter_mut() {
        v.sort_by(f64::total_cmp);
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        for (x, y) in vectors[a].iter().zip(&vectors[b]) {
            match x.total_cmp(y) {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        a.cmp(&b)
    });
    order
}

#[test]
fn erl_matches_reference_implementation() {
    for seed in 0..20u64 {
        let mut rng = StreamKey::root(1000 + seed).rng();
        let m = 12;
        let t_len = 15;
        let mut values: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                (0..t_len)
                    .map(|_| {
                        // coarse values so pointwise ties actually occur
                        (rng.random::<f64>() * 5.0).round()
                    })
                    .collect()
            })
            .collect();
        // exact duplicate curves force whole-vector ties
        values[4] = values[1].clone();
        let mut mask = vec![false; t_len];
        mask[0] = true;
        mask[7] = true;

        let refs: Vec<&[f64]> = values.iter().map(|v| v.as_slice()).collect();
        let ranking = erl_rank_values(&refs, &mask).unwrap();
        assert_eq!(ranking.order, reference_erl_order(&values, &mask));

        // duplicated curves share a mid-rank
        assert_eq!(ranking.ranks[1], ranking.ranks[4]);
    }
}

#[test]
fn dominant_observed_has_rank_one_and_smallest_p() {
    let mut rng = StreamKey::root(7).rng();
    let t_len = 10;
    let s = 499;
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(s + 1);
    values.push(vec![10.0; t_len]);
    for _ in 0..s {
        values.push((0..t_len).map(|_| rng.random::<f64>()).collect());
    }
    let refs: Vec<&[f64]> = values.iter().map(|v| v.as_slice()).collect();
    let mask = vec![false; t_len];
    let grid = RGrid::uniform(0.25, t_len).unwrap();

    let ranking = erl_rank_values(&refs, &mask).unwrap();
    assert_eq!(ranking.ranks[0], 1.0);
    assert_eq!(ranking.order[0], 0);

    let result = envelope_test_values(&refs, &mask, &grid, 0.05).unwrap();
    assert_eq!(result.p_value, 1.0 / 500.0);
    assert!(result.significant);
    assert!(!result.underpowered);
    // observed exits the envelope of the kept curves everywhere
    assert!(result.pointwise_significant.iter().all(|&f| f));
}

#[test]
fn masked_points_are_excluded_for_all_curves() {
    // observed is extreme only at a masked grid point
    let values = vec![
        vec![100.0, 0.5, 0.5],
        vec![0.0, 0.4, 0.6],
        vec![1.0, 0.6, 0.4],
        vec![0.5, 0.55, 0.45],
    ];
    let refs: Vec<&[f64]> = values.iter().map(|v| v.as_slice()).collect();
    let mask = vec![true, false, false];
    let ranking = erl_rank_values(&refs, &mask).unwrap();
    // without the masked column the observed curve is central, not extreme
    assert_ne!(ranking.order[0], 0);
    assert!(matches!(
        erl_rank_values(&refs, &[true, true, true]),
        Err(Error::AllMasked)
    ));
}

#[test]
fn adding_a_less_extreme_curve_never_improves_on_the_observed() {
    for seed in 0..30u64 {
        let mut rng = StreamKey::root(3000 + seed).rng();
        let m = 10;
        let t_len = 12;
        let values: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..t_len).map(|_| rng.random::<f64>()).collect())
            .collect();
        let mask = vec![false; t_len];
        let refs: Vec<&[f64]> = values.iter().map(|v| v.as_slice()).collect();
        let before = erl_rank_values(&refs, &mask).unwrap();
        let pos_before = before.order.iter().position(|&c| c == 0).unwrap();

        // pointwise mean of the nulls lies strictly inside their range
        let central: Vec<f64> = (0..t_len)
            .map(|t| values[1..].iter().map(|v| v[t]).sum::<f64>() / (m - 1) as f64)
            .collect();
        let mut extended = values.clone();
        extended.push(central);
        let refs: Vec<&[f64]> = extended.iter().map(|v| v.as_slice()).collect();
        let after = erl_rank_values(&refs, &mask).unwrap();
        let pos_after = after.order.iter().position(|&c| c == 0).unwrap();
        assert!(
            pos_after <= pos_before,
            "seed {seed}: position went from {pos_before} to {pos_after}"
        );
    }
}

#[test]
fn underpowered_flag_when_alpha_cannot_reject() {
    let values = vec![
        vec![5.0, 5.0],
        vec![0.1, 0.2],
        vec![0.2, 0.1],
        vec![0.3, 0.3],
        vec![0.15, 0.25],
        vec![0.25, 0.15],
    ];
    let refs: Vec<&[f64]> = values.iter().map(|v| v.as_slice()).collect();
    let grid = RGrid::uniform(0.2, 2).unwrap();
    let result = envelope_test_values(&refs, &[false, false], &grid, 0.05).unwrap();
    // s+1 = 6 curves: floor(0.05 * 6) = 0 dropped, p_min = 1/6 > alpha
    assert!(result.underpowered);
    assert!(!result.significant);
    assert_eq!(result.p_value, 1.0 / 6.0);
    // nothing dropped: the envelope covers the observed curve
    assert!(!result.pointwise_significant.iter().any(|&f| f));
}

#[test]
fn envelope_is_ordered_and_consistent_with_p() {
    let mut rng = StreamKey::root(11).rng();
    for trial in 0..40 {
        let t_len = 8;
        let s = 39;
        let mut values: Vec<Vec<f64>> = Vec::new();
        for _ in 0..=s {
            values.push((0..t_len).map(|_| rng.random::<f64>()).collect());
        }
        let refs: Vec<&[f64]> = values.iter().map(|v| v.as_slice()).collect();
        let mask = vec![false; t_len];
        let grid = RGrid::uniform(0.25, t_len).unwrap();
        let result = envelope_test_values(&refs, &mask, &grid, 0.1).unwrap();
        for t in 0..t_len {
            assert!(result.lower[t] <= result.upper[t], "trial {trial}");
        }
        assert_eq!(result.significant, result.p_value <= 0.1);
        if !result.significant {
            // a kept observed curve cannot exit its own envelope
            assert!(!result.pointwise_significant.iter().any(|&f| f));
        }
    }
}

#[test]
fn exchangeable_p_values_are_uniform() {
    let base = test_pattern(21, 40.0, &[5.0, 5.0, 5.0]);
    let grid = RGrid::uniform(0.25, 16).unwrap();
    let kernel = KernelSpec::default();
    let spec = StatisticSpec {
        kind: StatKind::MarkCorrelation,
        transform: Transform::Clr,
        j: 0,
        l: 0,
        scope: Scope::Global,
    };
    let s = 19;
    let trials = 200;
    let key = StreamKey::root(4242);
    let mut p_values = Vec::with_capacity(trials);
    for trial in 0..trials {
        let observed = permute_marks(&base, &mut key.child(trial as u64).rng()).unwrap();
        let ensemble = build_ensemble(
            &observed,
            &spec,
            &grid,
            &kernel,
            s,
            key.child(10_000 + trial as u64),
            &EnvelopeOptions::default(),
        )
        .unwrap();
        p_values.push(envelope_test(&ensemble, 0.05).unwrap().p_value);
    }
    // KS distance to the discrete uniform on {1/20, ..., 1}
    let mut d: f64 = 0.0;
    for k in 1..=(s + 1) {
        let x = k as f64 / (s + 1) as f64;
        let emp = p_values.iter().filter(|&&p| p <= x + 1e-12).count() as f64 / trials as f64;
        d = d.max((emp - x).abs());
    }
    // 1% asymptotic critical value, conservative for discrete support
    let crit = 1.628 / (trials as f64).sqrt();
    assert!(d < crit, "KS distance {d} exceeds {crit}");
}

#[test]
fn ensemble_shapes_and_determinism() {
    let pattern = test_pattern(23, 50.0, &[5.0, 5.0, 5.0]);
    let grid = RGrid::uniform(0.25, 12).unwrap();
    let kernel = KernelSpec::default();
    let spec = StatisticSpec {
        kind: StatKind::Variogram,
        transform: Transform::Clr,
        j: 0,
        l: 0,
        scope: Scope::Global,
    };
    let key = StreamKey::root(77).child(3);
    let e1 = build_ensemble(&pattern, &spec, &grid, &kernel, 1, key, &EnvelopeOptions::default())
        .unwrap();
    assert_eq!(e1.nulls.len(), 1);

    let e2 = build_ensemble(&pattern, &spec, &grid, &kernel, 7, key, &EnvelopeOptions::default())
        .unwrap();
    let e3 = build_ensemble(&pattern, &spec, &grid, &kernel, 7, key, &EnvelopeOptions::default())
        .unwrap();
    for (a, b) in e2.nulls.iter().zip(&e3.nulls) {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.unnormalized), bits(&b.unnormalized));
    }
    // the first null of a shorter run matches the longer run (same child streams)
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&e1.nulls[0].unnormalized), bits(&e2.nulls[0].unnormalized));
}

#[test]
fn constant_marks_give_identical_curves_and_p_one() {
    let key = StreamKey::root(31);
    let mut rng = key.rng();
    let n = 25;
    let locations: Vec<Point> = (0..n)
        .map(|_| Point::new(rng.random::<f64>(), rng.random::<f64>()))
        .collect();
    let marks =
        vec![crate::coda::Composition::close(&[0.5, 0.25, 0.25], 1.0).unwrap(); n];
    let pattern = MarkedPattern::new(locations, marks, Window::unit()).unwrap();
    let grid = RGrid::uniform(0.3, 10).unwrap();
    let kernel = KernelSpec::default();
    let spec = StatisticSpec {
        kind: StatKind::MarkCorrelation,
        transform: Transform::Clr,
        j: 0,
        l: 0,
        scope: Scope::Global,
    };
    let ensemble = build_ensemble(
        &pattern,
        &spec,
        &grid,
        &kernel,
        9,
        key.child(1),
        &EnvelopeOptions::default(),
    )
    .unwrap();
    for null in &ensemble.nulls {
        assert_eq!(null.unnormalized, ensemble.observed.unnormalized);
    }
    let ranking = erl_rank(&ensemble).unwrap();
    let mid = (1 + 10) as f64 / 2.0;
    assert!(ranking.ranks.iter().all(|&r| r == mid));
    let result = envelope_test(&ensemble, 0.05).unwrap();
    assert_eq!(result.p_value, 1.0);
}

#[test]
fn run_pattern_tests_matches_single_ensemble_paths() {
    let pattern = test_pattern(29, 60.0, &[8.0, 4.0, 4.0]);
    let grid = RGrid::uniform(0.25, 16).unwrap();
    let kernel = KernelSpec::default();
    let stats = [StatisticConfig {
        kind: StatKind::MarkCorrelation,
        transform: Transform::Clr,
        j: 0,
        l: 0,
    }];
    let opts = TestRunOptions {
        permutations: 9,
        ..TestRunOptions::default()
    };
    let stream = StreamKey::root(909).child(5);
    let outputs = run_pattern_tests(&pattern, &stats, &grid, &kernel, &opts, stream).unwrap();
    assert_eq!(outputs.len(), 1);
    let out = &outputs[0];
    let global = out.global.as_ref().unwrap();
    let locals = out.local.as_ref().unwrap();
    assert_eq!(locals.len(), pattern.len());

    // the single-spec ensemble path reproduces the batch p-values exactly
    let spec = stats[0].spec(Scope::Global);
    let ensemble = build_ensemble(
        &pattern,
        &spec,
        &grid,
        &kernel,
        9,
        stream,
        &EnvelopeOptions::default(),
    )
    .unwrap();
    let single = envelope_test(&ensemble, opts.alpha).unwrap();
    assert_eq!(single.p_value, global.result.p_value);
    assert_eq!(single.lower, global.result.lower);

    let anchor = pattern.len() / 2;
    let spec = stats[0].spec(Scope::Local(anchor));
    let ensemble = build_ensemble(
        &pattern,
        &spec,
        &grid,
        &kernel,
        9,
        stream,
        &EnvelopeOptions::default(),
    )
    .unwrap();
    let single = envelope_test(&ensemble, opts.alpha).unwrap();
    let batch = locals[anchor].result.as_ref().unwrap();
    assert_eq!(single.p_value, batch.p_value);

    // batch observed curve equals the standalone estimator
    let est = estimate_local(&pattern, &spec, &grid, &kernel).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(
        bits(&est.unnormalized),
        bits(&locals[anchor].observed.unnormalized)
    );
}

#[test]
fn hold_focal_keeps_anchor_mark_and_centers_local_shimatani() {
    // anchor mark constructed so its clr coordinates equal the mean of the
    // others; the local Shimatani curve then averages to zero under
    // random labeling of the other marks
    let key = StreamKey::root(303);
    let mut rng = key.rng();
    let n = 40;
    let mut marks = Vec::with_capacity(n);
    for _ in 0..n - 1 {
        marks.push(
            crate::pattern::sample_dirichlet(&[6.0, 3.0, 3.0], &mut rng).unwrap(),
        );
    }
    let d = 3;
    let mut mean_clr = vec![0.0; d];
    for m in &marks {
        for (s, c) in mean_clr.iter_mut().zip(m.clr().coords()) {
            *s += c / (n - 1) as f64;
        }
    }
    let anchor_mark = crate::coda::clr_inv(
        &crate::coda::LogRatioVector::new(
            {
                let sum: f64 = mean_clr.iter().sum();
                mean_clr.iter().map(|v| v - sum / d as f64).collect()
            },
            crate::coda::TransformTag::Clr,
        )
        .unwrap(),
        1.0,
    )
    .unwrap();
    marks.push(anchor_mark);
    let locations: Vec<Point> = (0..n)
        .map(|_| Point::new(rng.random::<f64>(), rng.random::<f64>()))
        .collect();
    let pattern = MarkedPattern::new(locations, marks, Window::unit()).unwrap();

    let anchor = n - 1;
    let spec = StatisticSpec {
        kind: StatKind::ShimataniI,
        transform: Transform::Clr,
        j: 0,
        l: 0,
        scope: Scope::Local(anchor),
    };
    let grid = RGrid::uniform(0.4, 10).unwrap();
    let kernel = KernelSpec {
        family: KernelFamily::Epanechnikov,
        bandwidth: Bandwidth::Fixed(0.08),
    };
    let opts = EnvelopeOptions {
        hold_focal_mark: true,
        track: Track::Unnormalized,
    };
    let s = 200;
    let ensemble =
        build_ensemble(&pattern, &spec, &grid, &kernel, s, key.child(9), &opts).unwrap();

    for t in 0..grid.len() {
        if ensemble.mask[t] {
            continue;
        }
        let vals: Vec<f64> = ensemble.nulls.iter().map(|c| c.unnormalized[t]).collect();
        let mean = vals.iter().sum::<f64>() / s as f64;
        let sd = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / s as f64).sqrt();
        let se = sd / (s as f64).sqrt();
        assert!(
            mean.abs() <= 3.0 * se + 1e-12,
            "grid {t}: mean {mean}, se {se}"
        );
    }
}

#[test]
fn significant_ranges_and_direction() {
    let grid = RGrid::uniform(0.5, 5).unwrap();
    let result = EnvelopeTestResult {
        p_value: 0.01,
        alpha: 0.05,
        grid,
        lower: vec![0.0; 5],
        upper: vec![1.0; 5],
        pointwise_significant: vec![true, true, false, false, true],
        observed_rank: 1.0,
        significant: true,
        underpowered: false,
    };
    let ranges = result.significant_ranges();
    assert_eq!(ranges.len(), 2);
    assert_abs_diff_eq!(ranges[0].0, 0.1, epsilon = 1e-12);
    assert_abs_diff_eq!(ranges[0].1, 0.2, epsilon = 1e-12);
    assert_abs_diff_eq!(ranges[1].0, 0.5, epsilon = 1e-12);

    let observed = vec![2.0, 1.5, 0.5, 0.5, -0.2];
    assert_eq!(result.dominant_direction(&observed), Some(Direction::High));
    let observed = vec![-3.0, 1.5, 0.5, 0.5, 1.1];
    assert_eq!(result.dominant_direction(&observed), Some(Direction::Low));
}

#[test]
fn normalized_track_of_local_shimatani_is_rejected() {
    let pattern = test_pattern(37, 40.0, &[5.0, 5.0, 5.0]);
    let grid = RGrid::uniform(0.25, 8).unwrap();
    let kernel = KernelSpec::default();
    let spec = StatisticSpec {
        kind: StatKind::ShimataniI,
        transform: Transform::Clr,
        j: 0,
        l: 0,
        scope: Scope::Local(0),
    };
    let opts = EnvelopeOptions {
        hold_focal_mark: false,
        track: Track::Normalized,
    };
    assert!(matches!(
        build_ensemble(&pattern, &spec, &grid, &kernel, 3, StreamKey::root(1), &opts),
        Err(Error::InvalidParameter(_))
    ));
}
