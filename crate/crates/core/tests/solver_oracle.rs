//! Desk-scale solver tests against independent enumeration and grid oracles.

use confopt_bruteforce::{
    constrained_grid_optimum, enumerate_lmo, grid_bayes_discrete, DiscreteDistribution,
    EnumerateLmo, ExactPluginLmo, GridSpec, SupportPoint,
};
use confopt_core::data::{sample_synthetic, Dataset, SyntheticSpec};
use confopt_core::metrics::{
    expand_constraints, ConfusionLayout, ConstraintKind, Metric, MetricKind,
};
use confopt_core::oracle::{plugin_lmo, DeterministicClassifier, empirical_confusion, Lmo};
use confopt_core::solvers::{
    bisection, con_bisection, con_ellipsoid, con_gda, ellipsoid, frank_wolfe, gda, split_fw,
    BisectionConfig, ConBisectionConfig, ConEllipsoidConfig, ConGdaConfig, EllipsoidConfig,
    FwConfig, GdaConfig, SplitFwConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn three_point_dist(seed: u64) -> DiscreteDistribution {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut support = Vec::new();
    let masses = [0.5, 0.3, 0.2];
    for (k, &mass) in masses.iter().enumerate() {
        let mut eta: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = eta.iter().sum();
        eta.iter_mut().for_each(|v| *v /= s);
        support.push(SupportPoint {
            x: vec![k as f64],
            mass,
            eta,
            group: 0,
        });
    }
    DiscreteDistribution::new(support, 3)
}

fn random_point_dist(rng: &mut ChaCha8Rng, points: usize, n: usize) -> DiscreteDistribution {
    let mut masses: Vec<f64> = (0..points).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = masses.iter().sum();
    masses.iter_mut().for_each(|v| *v /= total);
    let support = masses
        .iter()
        .enumerate()
        .map(|(k, &mass)| {
            let mut eta: Vec<f64> = (0..n).map(|_| rng.random_range(0.02..1.0)).collect();
            let s: f64 = eta.iter().sum();
            eta.iter_mut().for_each(|v| *v /= s);
            SupportPoint {
                x: vec![k as f64],
                mass,
                eta,
                group: 0,
            }
        })
        .collect();
    DiscreteDistribution::new(support, n)
}

// ---------------------------------------------------------------------------
// plug-in LMO against enumeration

#[test]
fn plugin_with_exact_eta_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for trial in 0..50 {
        let dist = random_point_dist(&mut rng, 4, 3);
        let layout = ConfusionLayout::full(3);
        let mut loss: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mx = loss.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-9);
        loss.iter_mut().for_each(|v| *v /= mx);
        let oracle = enumerate_lmo(&loss, &dist).unwrap();
        let plug = plugin_lmo(&loss, &dist.eta_model(), &dist.support_dataset(), &layout).unwrap();
        let plug_raw = dist.classifier_confusion_raw(&plug.classifier).unwrap();
        let plug_value: f64 = plug_raw.iter().zip(&loss).map(|(c, l)| c * l).sum();
        assert!(
            (plug_value - oracle.value).abs() <= 1e-12,
            "trial {trial}: plug-in {plug_value} vs enumerated {}",
            oracle.value
        );
    }
}

#[test]
fn group_layout_with_one_group_matches_single_group() {
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    for _ in 0..100 {
        let dist = random_point_dist(&mut rng, 4, 2);
        let loss: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let full = plugin_lmo(
            &loss,
            &dist.eta_model(),
            &dist.support_dataset(),
            &ConfusionLayout::full(2),
        )
        .unwrap();
        let grouped = plugin_lmo(
            &loss,
            &dist.eta_model(),
            &dist.support_dataset(),
            &ConfusionLayout::group_stacked(2, 1),
        )
        .unwrap();
        assert_eq!(
            full.confusion_estimate.entries(),
            grouped.confusion_estimate.entries()
        );
        for p in &dist.support {
            assert_eq!(
                full.classifier.predict(&p.x, 0).unwrap(),
                grouped.classifier.predict(&p.x, 0).unwrap()
            );
        }
    }
}

#[test]
fn empirical_confusion_concentrates_on_resamples() {
    // fixed classifier on Unif: predict 0 iff x <= 1; population confusion is
    // [[2/3, 0], [1/6, 1/6]] by direct integration of the class densities
    let spec = SyntheticSpec::Unif;
    let classifier = DeterministicClassifier::plug_in(
        vec![0.0, 1.0, 1.0, 0.0],
        confopt_core::oracle::EtaModel::synthetic(spec.clone()),
        2,
        1,
    );
    let target = [2.0 / 3.0, 0.0, 1.0 / 6.0, 1.0 / 6.0];
    let layout = ConfusionLayout::full(2);
    for seed in 0..50u64 {
        let sample = sample_synthetic(&spec, 10_000, 1000 + seed);
        let c = empirical_confusion(&classifier, &sample, &layout).unwrap();
        let gap = c
            .entries()
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(gap <= 0.05, "seed {seed}: gap {gap}");
    }
}

// ---------------------------------------------------------------------------
// Frank-Wolfe

#[test]
fn fw_first_iterate_equals_lmo_output() {
    let dist = three_point_dist(5);
    let layout = ConfusionLayout::full(3);
    let lmo = ExactPluginLmo {
        dist: dist.clone(),
        layout,
    };
    let metric = Metric::new(MetricKind::QMean);
    let out = frank_wolfe(
        &metric,
        &dist.priors(),
        &lmo,
        &FwConfig {
            iterations: 1,
            allow_mismatch: false,
        },
    )
    .unwrap();
    // gamma_1 = 1, so the mixture is exactly the first LMO classifier
    assert_eq!(out.classifier.members.len(), 1);
    assert!((out.classifier.weights[0] - 1.0).abs() < 1e-12);
    let expect = dist
        .classifier_confusion_raw(&out.classifier.members[0])
        .unwrap();
    assert_eq!(out.final_confusion.entries(), &expect[..]);
}

#[test]
fn fw_linear_metric_converges_in_one_step() {
    let dist = three_point_dist(6);
    let layout = ConfusionLayout::full(3);
    let lmo = ExactPluginLmo {
        dist: dist.clone(),
        layout,
    };
    let coeffs: Vec<f64> = (0..9).map(|k| ((k * 7) % 5) as f64 / 5.0 - 0.4).collect();
    let metric = Metric::new(MetricKind::LinearCustom {
        coeffs: coeffs.clone(),
    });
    let out = frank_wolfe(
        &metric,
        &dist.priors(),
        &lmo,
        &FwConfig {
            iterations: 1,
            allow_mismatch: false,
        },
    )
    .unwrap();
    let oracle = enumerate_lmo(&coeffs, &dist).unwrap();
    let got: f64 = out
        .final_confusion
        .entries()
        .iter()
        .zip(&coeffs)
        .map(|(c, l)| c * l)
        .sum();
    assert!((got - oracle.value).abs() <= 1e-12, "{got} vs {}", oracle.value);
}

#[test]
fn fw_weights_match_closed_form() {
    let dist = three_point_dist(7);
    let layout = ConfusionLayout::full(3);
    let lmo = ExactPluginLmo {
        dist: dist.clone(),
        layout,
    };
    let metric = Metric::new(MetricKind::QMean);
    let t_total = 40;
    let out = frank_wolfe(
        &metric,
        &dist.priors(),
        &lmo,
        &FwConfig {
            iterations: t_total,
            allow_mismatch: false,
        },
    )
    .unwrap();
    let weights = &out.classifier.weights;
    assert_eq!(weights.len(), t_total);
    let sum: f64 = weights.iter().sum();
    assert!((sum - 1.0).abs() <= 1e-9, "weights sum to {sum}");
    for (idx, &w) in weights.iter().enumerate() {
        let t = idx + 1;
        let mut expect = 2.0 / (t as f64 + 1.0);
        for s in (t + 1)..=t_total {
            expect *= 1.0 - 2.0 / (s as f64 + 1.0);
        }
        assert!((w - expect).abs() <= 1e-12, "w_{t} = {w}, closed form {expect}");
    }
}

#[test]
fn fw_hmean_reaches_grid_optimum_on_discretized_normimbal() {
    let dist = DiscreteDistribution::discretized_norm(0.2, 201, -4.0, 4.5);
    let priors = dist.priors();
    let layout = ConfusionLayout::diagonal_normalized(2, &priors);
    let metric = Metric::new(MetricKind::HMean);
    let grid = grid_bayes_discrete(
        &metric,
        &dist,
        &layout,
        &GridSpec {
            w_max: 10.0,
            step: 0.01,
        },
    )
    .unwrap();
    let lmo = ExactPluginLmo {
        dist: dist.clone(),
        layout,
    };
    let out = frank_wolfe(
        &metric,
        &priors,
        &lmo,
        &FwConfig {
            iterations: 200,
            allow_mismatch: false,
        },
    )
    .unwrap();
    let psi = out.trace.rows.last().unwrap().objective;
    assert!(
        (psi - grid.value).abs() <= 1e-2,
        "fw h-mean {psi} vs grid {}",
        grid.value
    );
}

// ---------------------------------------------------------------------------
// GDA

#[test]
fn gda_linear_metric_approaches_enumerated_minimum() {
    let dist = three_point_dist(8);
    let layout = ConfusionLayout::full(3);
    let lmo = ExactPluginLmo {
        dist: dist.clone(),
        layout,
    };
    let mut coeffs: Vec<f64> = (0..9).map(|k| ((k * 3) % 7) as f64 / 7.0).collect();
    coeffs[4] = -0.3;
    let metric = Metric::new(MetricKind::LinearCustom {
        coeffs: coeffs.clone(),
    });
    let oracle = enumerate_lmo(&coeffs, &dist).unwrap();
    let out = gda(
        &metric,
        &dist.priors(),
        &lmo,
        &GdaConfig {
            iterations: 5000,
            ..GdaConfig::default()
        },
    )
    .unwrap();
    let got: f64 = out
        .final_confusion
        .entries()
        .iter()
        .zip(&coeffs)
        .map(|(c, l)| c * l)
        .sum();
    assert!(
        (got - oracle.value).abs() <= 2e-2,
        "gda {got} vs enumerated {}",
        oracle.value
    );
}

#[test]
fn gda_iterates_respect_projection_sets() {
    let dist = DiscreteDistribution::discretized_norm(0.5, 51, -3.5, 3.5);
    let priors = dist.priors();
    let layout = ConfusionLayout::full(2);
    let lmo = ExactPluginLmo {
        dist: dist.clone(),
        layout,
    };
    let metric = Metric::new(MetricKind::MinMax);
    let lipschitz = 2.0;
    let out = gda(
        &metric,
        &priors,
        &lmo,
        &GdaConfig {
            iterations: 300,
            lipschitz: Some(lipschitz),
            ..GdaConfig::default()
        },
    )
    .unwrap();
    for row in &out.trace.rows {
        let dual = row.dual_norm.unwrap();
        assert!(dual <= 2.0 * lipschitz + 1e-9, "dual norm {dual}");
    }
}

#[test]
fn gda_and_fw_agree_on_qmean_normbal() {
    let dist = DiscreteDistribution::discretized_norm(0.5, 101, -3.5, 3.5);
    let priors = dist.priors();
    let layout = ConfusionLayout::diagonal_normalized(2, &priors);
    let metric = Metric::new(MetricKind::QMean);
    let lmo = ExactPluginLmo {
        dist: dist.clone(),
        layout,
    };
    let fw_out = frank_wolfe(
        &metric,
        &priors,
        &lmo,
        &FwConfig {
            iterations: 500,
            allow_mismatch: false,
        },
    )
    .unwrap();
    let gda_out = gda(
        &metric,
        &priors,
        &lmo,
        &GdaConfig {
            iterations: 20000,
            ..GdaConfig::default()
        },
    )
    .unwrap();
    let f = fw_out.trace.rows.last().unwrap().objective;
    let g = gda_out.trace.rows.last().unwrap().objective;
    assert!((f - g).abs() <= 5e-3, "fw {f} vs gda {g}");
}

// ---------------------------------------------------------------------------
// Ellipsoid

#[test]
fn ellipsoid_linear_metric_matches_enumeration() {
    let dist = three_point_dist(9);
    let layout = ConfusionLayout::full(3);
    let d = 9.0f64;
    let lmo = ExactPluginLmo {
        dist: dist.clone(),
        layout,
    };
    let coeffs: Vec<f64> = (0..9).map(|k| ((k * 5) % 11) as f64 / 11.0 - 0.2).collect();
    let metric = Metric::new(MetricKind::LinearCustom {
        coeffs: coeffs.clone(),
    });
    let oracle = enumerate_lmo(&coeffs, &dist).unwrap();
    let t_total = (2.0 * d * d * (d / 1e-3).ln()).ceil() as usize;
    let out = ellipsoid(
        &metric,
        &dist.priors(),
        &lmo,
        &EllipsoidConfig {
            iterations: t_total,
            radius: 2.0,
            ..EllipsoidConfig::default()
        },
    )
    .unwrap();
    let got: f64 = out
        .final_confusion
        .entries()
        .iter()
        .zip(&coeffs)
        .map(|(c, l)| c * l)
        .sum();
    assert!(
        (got - oracle.value).abs() <= 1e-3,
        "ellipsoid {got} vs enumerated {}",
        oracle.value
    );
}

#[test]
fn ellipsoid_skips_lmo_when_center_leaves_ball() {
    let dist = three_point_dist(10);
    let layout = ConfusionLayout::full(3);
    let lmo = ExactPluginLmo {
        dist: dist.clone(),
        layout,
    };
    let metric = Metric::new(MetricKind::QMean);
    // tiny radius forces out-of-ball centers
    let out = ellipsoid(
        &metric,
        &dist.priors(),
        &lmo,
        &EllipsoidConfig {
            iterations: 200,
            radius: 0.02,
            ..EllipsoidConfig::default()
        },
    )
    .unwrap();
    let mut skips = 0;
    let mut prev = 0;
    for row in &out.trace.rows {
        if row.lmo_calls == prev {
            skips += 1;
        }
        prev = row.lmo_calls;
    }
    assert!(skips > 0, "expected at least one out-of-ball iteration");
}

#[test]
fn ellipsoid_log_volume_decreases_per_iteration() {
    let dist = three_point_dist(11);
    let layout = ConfusionLayout::full(3);
    let lmo = ExactPluginLmo {
        dist: dist.clone(),
        layout,
    };
    let metric = Metric::new(MetricKind::QMean);
    let out = ellipsoid(
        &metric,
        &dist.priors(),
        &lmo,
        &EllipsoidConfig {
            iterations: 100,
            radius: 10.0,
            ..EllipsoidConfig::default()
        },
    )
    .unwrap();
    let d = 9.0f64;
    let mut prev = None;
    for row in &out.trace.rows {
        let lv = row.log_volume.unwrap();
        if let Some(p) = prev {
            assert!(
                lv <= p - 1.0 / (2.0 * d) + 1e-9,
                "log-volume step {p} -> {lv}"
            );
        }
        prev = Some(lv);
    }
}

// ---------------------------------------------------------------------------
// Bisection

#[test]
fn bisection_brackets_halve_exactly() {
    let dist = three_point_dist(12);
    let layout = ConfusionLayout::full(3);
    let lmo = EnumerateLmo {
        dist: dist.clone(),
        layout,
    };
    let metric = Metric::new(MetricKind::MicroF1 { default_class: 0 });
    let out = bisection(
        &metric,
        &dist.priors(),
        &lmo,
        &BisectionConfig {
            iterations: 20,
            allow_mismatch: false,
        },
    )
    .unwrap();
    let mut width = 1.0f64;
    for row in &out.trace.rows {
        let (a, b) = row.bracket.unwrap();
        width /= 2.0;
        assert_eq!(b - a, width, "bracket width at iter {}", row.iter);
    }
    assert_eq!(out.trace.rows.first().unwrap().bracket.unwrap().1, 0.5);
}

#[test]
fn bisection_bracket_contains_bruteforce_optimum() {
    let metric = Metric::new(MetricKind::MicroF1 { default_class: 0 });
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..5 {
        let dist = random_point_dist(&mut rng, 3, 3);
        let layout = ConfusionLayout::full(3);
        // brute-force fractional optimum over all assignments
        let mut best = f64::INFINITY;
        let (num, den) = metric.ratio_coeffs(&layout).unwrap();
        for a0 in 0..3 {
            for a1 in 0..3 {
                for a2 in 0..3 {
                    let raw = dist.assignment_confusion_raw(&[a0, a1, a2]);
                    let n: f64 = raw.iter().zip(&num).map(|(c, l)| c * l).sum();
                    let d: f64 = raw.iter().zip(&den).map(|(c, l)| c * l).sum();
                    if d > 0.0 {
                        best = best.min(n / d);
                    }
                }
            }
        }
        let lmo = EnumerateLmo {
            dist: dist.clone(),
            layout,
        };
        let out = bisection(
            &metric,
            &dist.priors(),
            &lmo,
            &BisectionConfig {
                iterations: 20,
                allow_mismatch: false,
            },
        )
        .unwrap();
        for row in &out.trace.rows {
            let (a, b) = row.bracket.unwrap();
            assert!(
                best >= a - 1e-9 && best <= b + 1e-9,
                "optimum {best} outside [{a}, {b}]"
            );
        }
        let final_psi = out.trace.rows.last().unwrap().objective;
        assert!(final_psi <= best + 2f64.powi(-20) + 1e-9);
    }
}

// ---------------------------------------------------------------------------
// SplitFW

#[test]
fn split_fw_without_constraints_matches_fw_first_direction() {
    let dist = three_point_dist(13);
    let layout = ConfusionLayout::full(3);
    let lmo = ExactPluginLmo {
        dist: dist.clone(),
        layout,
    };
    let metric = Metric::new(MetricKind::QMean);
    let fw_out = frank_wolfe(
        &metric,
        &dist.priors(),
        &lmo,
        &FwConfig {
            iterations: 1,
            allow_mismatch: false,
        },
    )
    .unwrap();
    let sfw_out = split_fw(
        &metric,
        &dist.priors(),
        &[],
        &lmo,
        &SplitFwConfig {
            iterations: 2,
            zeta: 0.0,
            ..SplitFwConfig::default()
        },
    )
    .unwrap();
    // with zeta = 0 and lambda = 0, the first C-direction is the metric
    // gradient; l2 vs l-inf normalization leaves the plug-in unchanged
    let fw_first = dist
        .classifier_confusion_raw(&fw_out.classifier.members[0])
        .unwrap();
    let sfw_first = dist
        .classifier_confusion_raw(&sfw_out.classifier.members[1])
        .unwrap();
    assert_eq!(fw_first, sfw_first);
}

#[test]
fn split_fw_hmean_with_linear_constraint_on_discretized_normbal() {
    let dist = DiscreteDistribution::discretized_norm(0.5, 101, -3.5, 3.5);
    let priors = dist.priors();
    let layout = ConfusionLayout::full(2);
    let metric = Metric::new(MetricKind::HMean);
    // C_00 - C_11 >= 0.2 written as <(-1,0,0,1), C> <= -0.2
    let kinds = [ConstraintKind::LinearCustom {
        coeffs: vec![-1.0, 0.0, 0.0, 1.0],
        bound: -0.2,
    }];
    let constraints = expand_constraints(&kinds, &layout, &priors, None).unwrap();
    let lmo = ExactPluginLmo {
        dist: dist.clone(),
        layout: layout.clone(),
    };
    // the appendix dual-step schedule decays too fast to reach feasibility at
    // this scale; a flat schedule keeps the 1/t dual ascent alive
    let out = split_fw(
        &metric,
        &priors,
        &constraints,
        &lmo,
        &SplitFwConfig {
            iterations: 10000,
            eta_schedule: (2.0, 2.0, 2.0),
            ..SplitFwConfig::default()
        },
    )
    .unwrap();
    // constrained grid oracle over mixtures of weighted-argmax classifiers
    let grid: Vec<Vec<f64>> = (0..=400).map(|k| vec![1.0, k as f64 * 0.01]).collect();
    let cache: Vec<Vec<f64>> = grid
        .iter()
        .map(|w| {
            let assignment: Vec<usize> = dist
                .support
                .iter()
                .map(|p| usize::from(w[1] * p.eta[1] >= p.eta[0]))
                .collect();
            dist.assignment_confusion_raw(&assignment)
        })
        .collect();
    let oracle = constrained_grid_optimum(
        &metric,
        &constraints,
        &cache,
        &grid,
        &layout,
        &priors,
        100,
        1e-6,
    )
    .unwrap();
    let test_conf = dist.mixture_confusion(&out.classifier, &layout).unwrap();
    let viol = constraints
        .iter()
        .map(|s| s.eval(&test_conf))
        .fold(f64::NEG_INFINITY, f64::max);
    let psi = metric.eval(&test_conf, &priors).unwrap();
    assert!(viol <= 0.02, "violation {viol}");
    assert!(
        (psi - oracle.value).abs() <= 2e-2,
        "split_fw {psi} vs oracle {}",
        oracle.value
    );
}

// ---------------------------------------------------------------------------
// ConGDA

#[test]
fn con_gda_inactive_constraint_keeps_mu_zero() {
    let dist = three_point_dist(14);
    let layout = ConfusionLayout::full(3);
    let kinds = [ConstraintKind::LinearCustom {
        coeffs: vec![0.0; 9],
        bound: 0.05,
    }];
    let priors = dist.priors();
    let constraints = expand_constraints(&kinds, &layout, &priors, None).unwrap();
    let lmo = ExactPluginLmo {
        dist: dist.clone(),
        layout,
    };
    let metric = Metric::new(MetricKind::QMean);
    let out = con_gda(
        &metric,
        &priors,
        &constraints,
        &lmo,
        &ConGdaConfig {
            iterations: 200,
            ..ConGdaConfig::default()
        },
    )
    .unwrap();
    for row in &out.trace.rows {
        assert_eq!(row.mu_norm.unwrap(), 0.0);
    }
}

#[test]
fn con_gda_duals_stay_in_projection_sets() {
    let dist = three_point_dist(15);
    let layout = ConfusionLayout::full(3);
    let priors = dist.priors();
    let kinds = [ConstraintKind::CoverageBand {
        target: priors.clone(),
        slack: 0.05,
    }];
    let constraints = expand_constraints(&kinds, &layout, &priors, None).unwrap();
    let lmo = ExactPluginLmo {
        dist: dist.clone(),
        layout,
    };
    let metric = Metric::new(MetricKind::QMean);
    let lipschitz = 1.0;
    let r = 0.05;
    let out = con_gda(
        &metric,
        &priors,
        &constraints,
        &lmo,
        &ConGdaConfig {
            iterations: 500,
            lipschitz: Some(lipschitz),
            r,
            ..ConGdaConfig::default()
        },
    )
    .unwrap();
    for row in &out.trace.rows {
        assert!(row.dual_norm.unwrap() <= 2.0 * lipschitz * (1.0 + 1.0 / r) + 1e-9);
        assert!(row.mu_norm.unwrap() <= 2.0 / r + 1e-9);
    }
}

fn two_group_binary_dist() -> DiscreteDistribution {
    DiscreteDistribution::new(
        vec![
            SupportPoint {
                x: vec![0.0],
                mass: 0.3,
                eta: vec![0.8, 0.2],
                group: 0,
            },
            SupportPoint {
                x: vec![1.0],
                mass: 0.3,
                eta: vec![0.3, 0.7],
                group: 0,
            },
            SupportPoint {
                x: vec![2.0],
                mass: 0.2,
                eta: vec![0.6, 0.4],
                group: 1,
            },
            SupportPoint {
                x: vec![3.0],
                mass: 0.2,
                eta: vec![0.1, 0.9],
                group: 1,
            },
        ],
        2,
    )
}

#[test]
fn con_gda_equal_opportunity_on_two_groups() {
    let dist = two_group_binary_dist();
    let layout = ConfusionLayout::group_stacked(2, 2);
    let priors = dist.priors();
    let masses = dist.group_masses();
    let kinds = [ConstraintKind::EqualOpportunity { slack: 0.05 }];
    let constraints = expand_constraints(&kinds, &layout, &priors, Some(&masses)).unwrap();
    let metric = Metric::new(MetricKind::GMean);
    let lmo = ExactPluginLmo {
        dist: dist.clone(),
        layout: layout.clone(),
    };
    let out = con_gda(
        &metric,
        &priors,
        &constraints,
        &lmo,
        &ConGdaConfig {
            iterations: 10000,
            ..ConGdaConfig::default()
        },
    )
    .unwrap();
    // oracle: enumerate the 16 group-wise deterministic assignments and mix
    // pairs on a fine grid
    let mut cache = Vec::new();
    let mut labels = Vec::new();
    for mask in 0..16usize {
        let assignment: Vec<usize> = (0..4).map(|i| (mask >> i) & 1).collect();
        cache.push(dist.assignment_confusion_raw(&assignment));
        labels.push(vec![mask as f64]);
    }
    let oracle = constrained_grid_optimum(
        &metric,
        &constraints,
        &cache,
        &labels,
        &layout,
        &priors,
        200,
        1e-6,
    )
    .unwrap();
    let conf = dist.mixture_confusion(&out.classifier, &layout).unwrap();
    let viol = constraints
        .iter()
        .map(|s| s.eval(&conf))
        .fold(f64::NEG_INFINITY, f64::max);
    let psi = metric.eval(&conf, &priors).unwrap();
    assert!(viol <= 0.01, "violation {viol}");
    assert!(
        psi <= oracle.value + 0.02,
        "con_gda g-mean {psi} vs oracle {}",
        oracle.value
    );
}

// ---------------------------------------------------------------------------
// ConEllipsoid

#[test]
fn con_ellipsoid_without_constraints_matches_ellipsoid() {
    let dist = three_point_dist(16);
    let layout = ConfusionLayout::full(3);
    let coeffs: Vec<f64> = (0..9).map(|k| ((k * 2) % 5) as f64 / 5.0 - 0.3).collect();
    let metric = Metric::new(MetricKind::LinearCustom {
        coeffs: coeffs.clone(),
    });
    let priors = dist.priors();
    let lmo = ExactPluginLmo {
        dist: dist.clone(),
        layout: layout.clone(),
    };
    let unc = ellipsoid(
        &metric,
        &priors,
        &lmo,
        &EllipsoidConfig {
            iterations: 150,
            radius: 5.0,
            ..EllipsoidConfig::default()
        },
    )
    .unwrap();
    let init = lmo.minimize(&confopt_core::oracle::default_loss_direction(&layout)).unwrap();
    let con = con_ellipsoid(
        &metric,
        &priors,
        &[],
        &lmo,
        Some((init.classifier, init.confusion_estimate)),
        &ConEllipsoidConfig {
            iterations: 150,
            radius: 5.0,
            ..ConEllipsoidConfig::default()
        },
    )
    .unwrap();
    // identical dual iterates: compare the traced objectives bitwise
    for (a, b) in unc.trace.rows.iter().zip(&con.trace.rows) {
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        assert_eq!(a.lmo_calls, b.lmo_calls);
    }
    assert_eq!(
        unc.final_confusion.entries(),
        con.final_confusion.entries()
    );
}

#[test]
fn con_ellipsoid_hmean_coverage_on_three_points() {
    let dist = three_point_dist(17);
    let layout = ConfusionLayout::full(3);
    let priors = dist.priors();
    let kinds = [ConstraintKind::CoverageBand {
        target: priors.clone(),
        slack: 0.01,
    }];
    let constraints = expand_constraints(&kinds, &layout, &priors, None).unwrap();
    let metric = Metric::new(MetricKind::HMean);
    let lmo = ExactPluginLmo {
        dist: dist.clone(),
        layout: layout.clone(),
    };
    let dbar = (9 + constraints.len()) as f64;
    let t_total = (2.0 * dbar * dbar * (dbar / 1e-2).ln()).ceil() as usize;
    let out = con_ellipsoid(
        &metric,
        &priors,
        &constraints,
        &lmo,
        None,
        &ConEllipsoidConfig {
            iterations: t_total,
            radius: 5.0,
            xi_solve: confopt_core::inner::DescentConfig {
                budget: 3000,
                step: 0.5,
            },
            hull_solve: confopt_core::inner::DescentConfig {
                budget: 5000,
                step: 0.5,
            },
            ..ConEllipsoidConfig::default()
        },
    )
    .unwrap();
    // oracle over all 27 assignments mixed pairwise
    let mut cache = Vec::new();
    let mut labels = Vec::new();
    for a0 in 0..3usize {
        for a1 in 0..3usize {
            for a2 in 0..3usize {
                cache.push(dist.assignment_confusion_raw(&[a0, a1, a2]));
                labels.push(vec![(a0 * 9 + a1 * 3 + a2) as f64]);
            }
        }
    }
    let oracle = constrained_grid_optimum(
        &metric,
        &constraints,
        &cache,
        &labels,
        &layout,
        &priors,
        200,
        1e-6,
    )
    .unwrap();
    let conf = dist.mixture_confusion(&out.classifier, &layout).unwrap();
    let viol = constraints
        .iter()
        .map(|s| s.eval(&conf))
        .fold(f64::NEG_INFINITY, f64::max);
    let psi = metric.eval(&conf, &priors).unwrap();
    assert!(viol <= 1e-2, "violation {viol}");
    assert!(
        psi <= oracle.value + 1e-2,
        "con_ellipsoid h-mean {psi} vs oracle {}",
        oracle.value
    );
}

// ---------------------------------------------------------------------------
// ConBisection

#[test]
fn con_bisection_first_midpoint_is_half() {
    let dist = three_point_dist(18);
    let layout = ConfusionLayout::full(3);
    let metric = Metric::new(MetricKind::MicroF1 { default_class: 0 });
    let lmo = ExactPluginLmo {
        dist: dist.clone(),
        layout,
    };
    let out = con_bisection(
        &metric,
        &dist.priors(),
        &[],
        &lmo,
        None,
        &ConBisectionConfig {
            outer_iterations: 1,
            inner: ConGdaConfig {
                iterations: 5,
                ..ConGdaConfig::default()
            },
            allow_mismatch: false,
        },
    )
    .unwrap();
    let (a, b) = out.trace.rows[0].bracket.unwrap();
    assert!(a == 0.5 || b == 0.5, "first midpoint must be 0.5: [{a}, {b}]");
}

#[test]
fn con_bisection_reduces_to_bisection_without_constraints() {
    let dist = three_point_dist(19);
    let layout = ConfusionLayout::full(3);
    let metric = Metric::new(MetricKind::MicroF1 { default_class: 0 });
    let lmo = EnumerateLmo {
        dist: dist.clone(),
        layout,
    };
    let plain = bisection(
        &metric,
        &dist.priors(),
        &lmo,
        &BisectionConfig {
            iterations: 12,
            allow_mismatch: false,
        },
    )
    .unwrap();
    let con = con_bisection(
        &metric,
        &dist.priors(),
        &[],
        &lmo,
        None,
        &ConBisectionConfig {
            outer_iterations: 12,
            inner: ConGdaConfig {
                iterations: 1,
                ..ConGdaConfig::default()
            },
            allow_mismatch: false,
        },
    )
    .unwrap();
    let a = plain.trace.rows.last().unwrap().bracket.unwrap();
    let b = con.trace.rows.last().unwrap().bracket.unwrap();
    assert_eq!(a, b, "brackets diverged: {a:?} vs {b:?}");
}

#[test]
fn con_bisection_micro_f1_with_coverage() {
    let dist = three_point_dist(20);
    let layout = ConfusionLayout::full(3);
    let priors = dist.priors();
    let kinds = [ConstraintKind::CoverageBand {
        target: priors.clone(),
        slack: 0.05,
    }];
    let constraints = expand_constraints(&kinds, &layout, &priors, None).unwrap();
    let metric = Metric::new(MetricKind::MicroF1 { default_class: 0 });
    let lmo = ExactPluginLmo {
        dist: dist.clone(),
        layout: layout.clone(),
    };
    let out = con_bisection(
        &metric,
        &priors,
        &constraints,
        &lmo,
        None,
        &ConBisectionConfig {
            outer_iterations: 10,
            inner: ConGdaConfig {
                iterations: 4000,
                ..ConGdaConfig::default()
            },
            allow_mismatch: false,
        },
    )
    .unwrap();
    let mut cache = Vec::new();
    let mut labels = Vec::new();
    for a0 in 0..3usize {
        for a1 in 0..3usize {
            for a2 in 0..3usize {
                cache.push(dist.assignment_confusion_raw(&[a0, a1, a2]));
                labels.push(vec![(a0 * 9 + a1 * 3 + a2) as f64]);
            }
        }
    }
    let oracle = constrained_grid_optimum(
        &metric,
        &constraints,
        &cache,
        &labels,
        &layout,
        &priors,
        200,
        1e-6,
    )
    .unwrap();
    let conf = dist.mixture_confusion(&out.classifier, &layout).unwrap();
    let viol = constraints
        .iter()
        .map(|s| s.eval(&conf))
        .fold(f64::NEG_INFINITY, f64::max);
    let psi = metric.eval(&conf, &priors).unwrap();
    assert!(viol <= 2e-2, "violation {viol}");
    assert!(
        psi <= oracle.value + 2f64.powi(-10) + 5e-2,
        "con_bisection {psi} vs oracle {}",
        oracle.value
    );
}

// ---------------------------------------------------------------------------
// determinism

#[test]
fn solvers_are_bit_reproducible() {
    let dist = three_point_dist(21);
    let layout = ConfusionLayout::full(3);
    let priors = dist.priors();
    let lmo = ExactPluginLmo {
        dist: dist.clone(),
        layout: layout.clone(),
    };
    let qmean = Metric::new(MetricKind::QMean);
    let micro = Metric::new(MetricKind::MicroF1 { default_class: 0 });
    let kinds = [ConstraintKind::CoverageBand {
        target: priors.clone(),
        slack: 0.05,
    }];
    let constraints = expand_constraints(&kinds, &layout, &priors, None).unwrap();

    let bits = |entries: &[f64]| -> Vec<u64> { entries.iter().map(|v| v.to_bits()).collect() };
    macro_rules! check_twice {
        ($run:expr) => {{
            let a = $run;
            let b = $run;
            assert_eq!(bits(a.final_confusion.entries()), bits(b.final_confusion.entries()));
            assert_eq!(
                a.trace.rows.iter().map(|r| r.objective.to_bits()).collect::<Vec<_>>(),
                b.trace.rows.iter().map(|r| r.objective.to_bits()).collect::<Vec<_>>()
            );
        }};
    }

    check_twice!(frank_wolfe(
        &qmean,
        &priors,
        &lmo,
        &FwConfig { iterations: 50, allow_mismatch: false }
    )
    .unwrap());
    check_twice!(gda(&qmean, &priors, &lmo, &GdaConfig { iterations: 50, ..GdaConfig::default() }).unwrap());
    check_twice!(ellipsoid(
        &qmean,
        &priors,
        &lmo,
        &EllipsoidConfig { iterations: 50, radius: 5.0, ..EllipsoidConfig::default() }
    )
    .unwrap());
    check_twice!(bisection(
        &micro,
        &priors,
        &lmo,
        &BisectionConfig { iterations: 15, allow_mismatch: false }
    )
    .unwrap());
    check_twice!(split_fw(
        &qmean,
        &priors,
        &constraints,
        &lmo,
        &SplitFwConfig { iterations: 50, ..SplitFwConfig::default() }
    )
    .unwrap());
    check_twice!(con_gda(
        &qmean,
        &priors,
        &constraints,
        &lmo,
        &ConGdaConfig { iterations: 50, ..ConGdaConfig::default() }
    )
    .unwrap());
    check_twice!(con_ellipsoid(
        &qmean,
        &priors,
        &constraints,
        &lmo,
        None,
        &ConEllipsoidConfig { iterations: 50, radius: 5.0, ..ConEllipsoidConfig::default() }
    )
    .unwrap());
    check_twice!(con_bisection(
        &micro,
        &priors,
        &constraints,
        &lmo,
        None,
        &ConBisectionConfig {
            outer_iterations: 4,
            inner: ConGdaConfig { iterations: 50, ..ConGdaConfig::default() },
            allow_mismatch: false
        }
    )
    .unwrap());
}

// ---------------------------------------------------------------------------
// split consistency: same sample vs split LMO sample mode is exercised at the
// CLI level; here we check the LMO on a true dataset end to end

#[test]
fn plugin_lmo_on_sampled_data_tracks_population() {
    let spec = SyntheticSpec::NormBal;
    let sample = sample_synthetic(&spec, 20_000, 4242);
    let layout = ConfusionLayout::full(2);
    let model = confopt_core::oracle::EtaModel::synthetic(spec);
    let lmo = confopt_core::oracle::PluginLmo::new(model, sample, layout).unwrap();
    let loss = vec![0.0, 1.0, 1.0, 0.0];
    let res = lmo.minimize(&loss).unwrap();
    // the 0-1 plug-in on NormBal thresholds at 0; population confusion has
    // C_00 = C_11 = Phi(0.5) / 2 with Phi the standard normal cdf
    let entries = res.confusion_estimate.entries();
    let phi_half = 0.6914624612740131; // Phi(0.5)
    assert!((entries[0] - phi_half / 2.0).abs() < 0.02);
    assert!((entries[3] - phi_half / 2.0).abs() < 0.02);
}

#[test]
fn trace_lmo_calls_are_nondecreasing() {
    let dist = three_point_dist(22);
    let layout = ConfusionLayout::full(3);
    let lmo = ExactPluginLmo {
        dist: dist.clone(),
        layout,
    };
    let metric = Metric::new(MetricKind::QMean);
    let out = gda(
        &metric,
        &dist.priors(),
        &lmo,
        &GdaConfig {
            iterations: 100,
            ..GdaConfig::default()
        },
    )
    .unwrap();
    let mut prev = 0;
    for row in &out.trace.rows {
        assert!(row.lmo_calls >= prev);
        prev = row.lmo_calls;
    }
}

// keep the dataset type in scope for the helper above
#[allow(dead_code)]
fn _unused(_: &Dataset) {}
