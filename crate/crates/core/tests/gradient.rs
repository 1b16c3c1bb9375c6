//! Analytic gradient of the combined loss against central differences.

use selex::bssk::BsskConfig;
use selex::hssk::build_hierarchy;
use selex::loss::{evaluate, ExpertiseTargets, LossConfig, TargetSource};
use selex::targets::{Normalization, SmoothingConfig};
use selex::{EmbeddingMatrix, LabelInfo, RandomSource};

fn instance(rng: &mut RandomSource) -> (EmbeddingMatrix, LabelInfo, usize) {
    let k = 2 + rng.below(3);
    let n = 2 * k + rng.below(17 - 2 * k);
    let d = 1 + rng.below(8);
    let data = (0..n * d).map(|_| rng.standard_normal()).collect();
    let e = EmbeddingMatrix::new(n, d, data).unwrap();
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let known = k / 2;
    let mask: Vec<bool> = (0..n).map(|i| labels[i] < known && i < k).collect();
    let l = LabelInfo::new(labels, mask, (0..known).collect(), k).unwrap();
    (e, l, k)
}

fn max_relative_error(e: &EmbeddingMatrix, t: &ExpertiseTargets, cfg: &LossConfig) -> f64 {
    let h = 1e-5;
    let analytic = evaluate(e, t, cfg, true).unwrap().gradient.unwrap();
    let mut worst = 0.0f64;
    for idx in 0..e.as_slice().len() {
        let shifted = |delta: f64| {
            let mut data = e.as_slice().to_vec();
            data[idx] += delta;
            let x = EmbeddingMatrix::new(e.n(), e.d(), data).unwrap();
            evaluate(&x, t, cfg, false).unwrap().l_se
        };
        let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
        let g = analytic.as_slice()[idx];
        worst = worst.max((g - fd).abs() / g.abs().max(1.0));
    }
    worst
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = RandomSource::new(2024);
    for trial in 0..30 {
        let (e, l, k) = instance(&mut rng);
        let h = build_hierarchy(&e, &l, &BsskConfig::new(k).with_seed(trial)).unwrap();
        let cfg = LossConfig::default();
        let t = ExpertiseTargets::build(&e, &h, &l, &cfg).unwrap();
        let err = max_relative_error(&e, &t, &cfg);
        assert!(err <= 1e-5, "trial {trial}: relative error {err:e}");
    }
}

#[test]
fn gradient_matches_for_other_settings() {
    let mut rng = RandomSource::new(77);
    let variants = [
        LossConfig { lambda: 0.0, ..Default::default() },
        LossConfig { lambda: 1.0, ..Default::default() },
        LossConfig { use_raw_target: true, ..Default::default() },
        LossConfig {
            smoothing: SmoothingConfig { alpha: 0.1, normalization: Normalization::Row },
            ..Default::default()
        },
        LossConfig { target: TargetSource::Radii, symmetrize: true, ..Default::default() },
        LossConfig { tau_unsup: 1.0, tau_sup: 0.5, ..Default::default() },
    ];
    for (v, cfg) in variants.iter().enumerate() {
        let (e, l, k) = instance(&mut rng);
        let h = build_hierarchy(&e, &l, &BsskConfig::new(k)).unwrap();
        let t = ExpertiseTargets::build(&e, &h, &l, cfg).unwrap();
        let err = max_relative_error(&e, &t, cfg);
        assert!(err <= 1e-5, "variant {v}: relative error {err:e}");
    }
}

#[test]
fn loss_is_invariant_to_row_scaling() {
    let mut rng = RandomSource::new(5);
    let (e, l, k) = instance(&mut rng);
    let h = build_hierarchy(&e, &l, &BsskConfig::new(k)).unwrap();
    let cfg = LossConfig::default();
    let t = ExpertiseTargets::build(&e, &h, &l, &cfg).unwrap();
    let a = evaluate(&e, &t, &cfg, true).unwrap();
    let b = evaluate(&e.scaled(3.0).unwrap(), &t, &cfg, true).unwrap();
    assert!((a.l_se - b.l_se).abs() < 1e-12);
    // cosine losses: gradient shrinks inversely with scale
    let ga = a.gradient.unwrap();
    let gb = b.gradient.unwrap();
    for (x, y) in ga.as_slice().iter().zip(gb.as_slice()) {
        assert!((x - 3.0 * y).abs() < 1e-12);
    }
}

#[test]
fn zero_rows_get_zero_gradient() {
    let e = EmbeddingMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.2], vec![-0.3, 1.0], vec![0.9, -0.1]]).unwrap();
    let l = LabelInfo::new(vec![0, 0, 1, 1], vec![false, true, false, false], [0].into(), 2).unwrap();
    let h = build_hierarchy(&e, &l, &BsskConfig::new(2)).unwrap();
    let cfg = LossConfig::default();
    let t = ExpertiseTargets::build(&e, &h, &l, &cfg).unwrap();
    let g = evaluate(&e, &t, &cfg, true).unwrap().gradient.unwrap();
    assert_eq!(g.row(0), &[0.0, 0.0]);
}
