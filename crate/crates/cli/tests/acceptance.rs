//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::time::{Duration, Instant};

use selex::bssk::{assign_nearest, balance_clusters, is_stable_matching, BsskConfig, ClusterModel};
use selex::eval::{hungarian_int, k2_residual, u_bounds, BoundsInput};
use selex::hssk::{build_hierarchy, level_counts, Hierarchy, HierarchyLevel};
use selex::loss::{evaluate, ExpertiseTargets, LossConfig};
use selex::targets::{smooth_target, unsup_target_from_hierarchy, Normalization, SmoothingConfig};
use selex::train::{generate_synthetic, make_split, run_selex, SyntheticSpec, TrainConfig, TrainOutcome};
use selex::{EmbeddingMatrix, LabelInfo, Matrix, RandomSource};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

fn random_points(rng: &mut RandomSource, n: usize, d: usize) -> EmbeddingMatrix {
    EmbeddingMatrix::new(n, d, (0..n * d).map(|_| rng.standard_normal()).collect()).unwrap()
}

/// Criteria 1 and 2 share one sweep.
fn balance_sweep() -> (Outcome, Outcome) {
    let start = Instant::now();
    let mut rng = RandomSource::new(1);
    let (mut unstable, mut unbalanced, trials) = (0, 0, 1200);
    for _ in 0..trials {
        let k = 2 + rng.below(7);
        let c = 1 + rng.below(6);
        let d = 1 + rng.below(4);
        let e = random_points(&mut rng, k * c, d);
        let centers = random_points(&mut rng, k, d).into_matrix();
        let m = assign_nearest(&e, &ClusterModel::from_centers(centers, 0));
        let out = balance_clusters(&e, &m, c);
        if !is_stable_matching(&e, &out.model, c).stable {
            unstable += 1;
        }
        let mut sizes = vec![0; k];
        out.model.assignment.iter().for_each(|&a| sizes[a] += 1);
        if !out.unplaced.is_empty() || sizes.iter().any(|&s| s != c) {
            unbalanced += 1;
        }
    }
    let t = start.elapsed();
    (
        check(unstable == 0 && within(t, 30), format!("{trials} instances, {unstable} unstable, {:.2?}", t)),
        check(unbalanced == 0, format!("{trials} instances, {unbalanced} with a cluster size != C")),
    )
}

fn hierarchy_counts() -> Outcome {
    let (k, per, d) = (200, 5, 16);
    let mut rng = RandomSource::new(3);
    let centers: Vec<f64> = (0..k * d).map(|_| 10.0 * rng.standard_normal()).collect();
    let mut data = Vec::with_capacity(k * per * d);
    let mut labels = Vec::with_capacity(k * per);
    for c in 0..k {
        for _ in 0..per {
            data.extend(centers[c * d..(c + 1) * d].iter().map(|x| x + rng.standard_normal()));
            labels.push(c);
        }
    }
    let e = EmbeddingMatrix::new(k * per, d, data).unwrap();
    let l = make_split(&LabelInfo::fully_known(labels, k).unwrap(), 0.5, 0.5, 3).unwrap();
    let start = Instant::now();
    let h = build_hierarchy(&e, &l, &BsskConfig::new(k).with_seed(3)).unwrap();
    let t = start.elapsed();
    let counts = level_counts(&h);
    let expected = vec![200, 100, 50, 24, 12, 6, 2];
    check(
        counts == expected && l.known_count() == 100 && within(t, 60),
        format!("known {}, counts {:?}, {:.2?}", l.known_count(), counts, t),
    )
}

fn level(assignment: Vec<usize>, count: usize) -> HierarchyLevel {
    HierarchyLevel {
        label_count: count,
        known_label_count: 0,
        cluster_size: 1,
        assignment,
        centers: Matrix::zeros(count, 1),
        radii: vec![0.0; count],
        hyperlabels: Vec::new(),
    }
}

fn target_values() -> Outcome {
    let h = Hierarchy { levels: vec![level(vec![0, 0, 1, 2], 3), level(vec![0, 0, 0, 1], 2)], base_k: 3 };
    let y = unsup_target_from_hierarchy(&h, Normalization::None);
    let same = y.get(0, 1);
    let first_only = y.get(0, 2);
    let both = y.get(0, 3);
    let s = smooth_target(&y, &SmoothingConfig { alpha: 0.0, ..Default::default() }).unwrap();
    let identity_err =
        s.values.as_slice().iter().zip(Matrix::identity(4).as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let tol = 1e-12;
    check(
        same.abs() <= tol && (first_only - 0.5).abs() <= tol && (both - 0.75).abs() <= tol && identity_err <= tol,
        format!("same {same}, level-1 only {first_only}, both {both}, alpha=0 max |Y - I| {identity_err:e}"),
    )
}

fn gcd_instance(rng: &mut RandomSource, max_n: usize, max_d: usize) -> (EmbeddingMatrix, LabelInfo, Hierarchy) {
    let k = 2 + rng.below(3);
    let n = 2 * k + rng.below(max_n + 1 - 2 * k);
    let d = 1 + rng.below(max_d);
    let e = random_points(rng, n, d);
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let known = (k / 2).max(1);
    let mask: Vec<bool> = (0..n).map(|i| labels[i] < known && i < k).collect();
    let l = LabelInfo::new(labels, mask, (0..known).collect(), k).unwrap();
    let h = build_hierarchy(&e, &l, &BsskConfig::new(k).with_seed(rng.next_u64())).unwrap();
    (e, l, h)
}

fn loss_identity() -> Outcome {
    let mut rng = RandomSource::new(5);
    let cfg = LossConfig { lambda: 0.35, ..Default::default() };
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (e, l, h) = gcd_instance(&mut rng, 24, 8);
        let t = ExpertiseTargets::build(&e, &h, &l, &cfg).unwrap();
        let r = evaluate(&e, &t, &cfg, false).unwrap();
        worst = worst.max((r.l_se - ((1.0 - 0.35) * r.l_use + 0.35 * r.l_sse)).abs());
    }
    check(worst <= 1e-12, format!("100 instances, max deviation {worst:e}"))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = RandomSource::new(6);
    let cfg = LossConfig::default();
    let step = 1e-5;
    let mut worst = 0.0f64;
    let trials = 25;
    for _ in 0..trials {
        let (e, l, h) = gcd_instance(&mut rng, 16, 8);
        let t = ExpertiseTargets::build(&e, &h, &l, &cfg).unwrap();
        let g = evaluate(&e, &t, &cfg, true).unwrap().gradient.unwrap();
        for idx in 0..e.as_slice().len() {
            let at = |delta: f64| {
                let mut data = e.as_slice().to_vec();
                data[idx] += delta;
                evaluate(&EmbeddingMatrix::new(e.n(), e.d(), data).unwrap(), &t, &cfg, false).unwrap().l_se
            };
            let fd = (at(step) - at(-step)) / (2.0 * step);
            let a = g.as_slice()[idx];
            worst = worst.max((a - fd).abs() / a.abs().max(1.0));
        }
    }
    let t = start.elapsed();
    check(worst <= 1e-5 && within(t, 60), format!("{trials} instances, max relative error {worst:e}, {t:.2?}"))
}

/// `u` is the double nearest to the exact product `c·s`.
fn is_rounded_product(c: f64, s: f64, u: f64) -> bool {
    let half_ulp = (u.abs().next_up() - u.abs()) / 2.0;
    c.mul_add(s, -u).abs() <= half_ulp
}

fn bound_identity() -> Outcome {
    let mut ns: Vec<u64> = vec![16, 17, 31, 64, 100, 257, 512, 1000, 4096, 6000, 9999, 10_000];
    let mut rng = RandomSource::new(7);
    ns.extend((0..20).map(|_| 16 + rng.below(10_000 - 16 + 1) as u64));
    let (mut worst, mut ratio_worst, mut pairs, mut ratio_misses) = (0.0f64, 0.0f64, 0, 0);
    for &n in &ns {
        for k in (2..=512u64.min(n)).step_by(2) {
            let b = BoundsInput::new(n, k).unwrap();
            worst = worst.max(k2_residual(b).unwrap().abs());
            let (full, restricted) = u_bounds(b);
            let c = (k as f64 + 1.0) / 2.0;
            if !is_rounded_product(c, restricted, full) {
                ratio_misses += 1;
            }
            if restricted != 0.0 {
                ratio_worst = ratio_worst.max((full / restricted - c).abs() / c);
            }
            pairs += 1;
        }
    }
    check(
        worst <= 1e-9 && ratio_misses == 0,
        format!(
            "{pairs} (N, K) pairs, max |residual| {worst:e}; u_full = (K+1)/2 * u_restricted correctly rounded \
             in all but {ratio_misses}, max relative quotient error {ratio_worst:e}"
        ),
    )
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn hungarian_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = RandomSource::new(8);
    let perms: Vec<Vec<Vec<usize>>> = (0..=7).map(permutations).collect();
    let (trials, mut mismatches) = (600, 0);
    for _ in 0..trials {
        let n = 1 + rng.below(7);
        let cost: Vec<i64> = (0..n * n).map(|_| rng.below(41) as i64 - 20).collect();
        let brute = perms[n].iter().map(|p| (0..n).map(|r| cost[r * n + p[r]]).sum::<i64>()).min().unwrap();
        if hungarian_int(n, n, &cost).unwrap().total_cost != brute {
            mismatches += 1;
        }
    }
    let t = start.elapsed();
    check(mismatches == 0 && within(t, 30), format!("{trials} matrices up to 7x7, {mismatches} mismatches, {t:.2?}"))
}

fn synthetic_run(alpha: f64, seed: u64) -> (LabelInfo, TrainOutcome) {
    let spec = SyntheticSpec { depth: 3, samples_per_leaf: 40, dims: 8, separation: 8.0, noise_sigma: 1.0, seed };
    let (e, all) = generate_synthetic(&spec).unwrap();
    let l = make_split(&all, 0.5, 0.5, seed).unwrap();
    let mut tc = TrainConfig::new(8);
    tc.epochs = 5;
    tc.seed = seed;
    tc.loss.smoothing.alpha = alpha;
    let out = run_selex(&e, &l, &tc).unwrap();
    (l, out)
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let seed = 9;
    let (l, selex) = synthetic_run(0.5, seed);
    let (_, baseline) = synthetic_run(0.0, seed);
    let (_, again) = synthetic_run(0.5, seed);
    let t = start.elapsed();
    let last = &selex.epochs.last().unwrap().accuracy;
    let base = &baseline.epochs.last().unwrap().accuracy;
    let acc_novel = last.acc_novel.unwrap_or(0.0);
    let deterministic = selex.epochs == again.epochs && selex.embeddings == again.embeddings;
    // loss never rises within an epoch at lr 1e-3
    let mut monotone = true;
    for epoch in 1..selex.epochs.len() {
        let steps: Vec<f64> = selex.steps.iter().filter(|s| s.epoch == epoch).map(|s| s.l_se).collect();
        monotone &= steps.windows(2).all(|w| w[1] <= w[0]);
    }
    let pinned = (0..l.len())
        .filter(|&i| l.is_labeled(i))
        .all(|i| Some(selex.hierarchy.levels[0].assignment[i]) == l.known_cluster_of(l.labels()[i]));
    check(
        last.acc_all >= 0.95
            && acc_novel >= 0.90
            && last.acc_all >= base.acc_all
            && deterministic
            && monotone
            && pinned
            && within(t, 300),
        format!(
            "acc_all {:.4}, acc_known {:.4}, acc_novel {:.4}; alpha=0 acc_all {:.4}; deterministic {deterministic}; \
             monotone steps {monotone}; labeled rows pinned {pinned}; {t:.2?}",
            last.acc_all,
            last.acc_known.unwrap_or(f64::NAN),
            acc_novel,
            base.acc_all
        ),
    )
}

fn cli(args: &[&str]) -> i32 {
    let argv = std::iter::once("selex").chain(args.iter().copied());
    selex_cli::run(argv, &mut std::io::sink(), &mut std::io::stderr())
}

fn repeatable_metrics() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let data = s(d);
    let emb = s(&d.join("embeddings.selx"));
    let labels = s(&d.join("labels.csv"));
    let (m1, m2) = (s(&d.join("m1.csv")), s(&d.join("m2.csv")));
    let mut codes =
        vec![cli(&["synth", "--depth", "2", "--per-leaf", "10", "--dims", "3", "--seed", "10", "--out", &data])];
    for m in [&m1, &m2] {
        codes.push(cli(&["train", "--embeddings", &emb, "--labels", &labels, "--metrics", m, "--seed", "10"]));
    }
    let a = std::fs::read(&m1).unwrap_or_default();
    let b = std::fs::read(&m2).unwrap_or_default();
    check(
        codes.iter().all(|&c| c == 0) && !a.is_empty() && a == b,
        format!("exit codes {codes:?}, metrics {} bytes, identical {}", a.len(), a == b),
    )
}

fn main() {
    let (stable, balanced) = balance_sweep();
    let results = vec![
        ("1 stable matching", stable),
        ("2 exact balance", balanced),
        ("3 hierarchy count law", hierarchy_counts()),
        ("4 target-matrix values", target_values()),
        ("5 loss identity", loss_identity()),
        ("6 gradient check", gradient_check()),
        ("7 bound identity", bound_identity()),
        ("8 hungarian oracle", hungarian_oracle()),
        ("9 end-to-end synthetic GCD", end_to_end()),
        ("10 determinism", repeatable_metrics()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += (!o.pass) as usize;
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
