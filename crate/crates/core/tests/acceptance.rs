//! Release gate. Each test covers one numbered criterion and prints one
//! `ACCEPTANCE <n> <name>: PASS/FAIL` line (visible with `--nocapture`).
//!
//! Criteria 5-8 share a single benchmark run on an accounting-style table;
//! the first of them to execute builds it. Criterion 10 (byte-identical
//! pipeline reruns) lives with the command-line crate, which owns the
//! run-directory layout it checks.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reshape_core::aenn::{
    batch_mean_loss, loss_gradients, reconstruct_report, LayerSpec, NetworkParams, TrainConfig,
};
use reshape_core::eval::{
    error_reduction_curve, first_hit_rank, hits_at_n, hits_auc, mrr, run_benchmark,
    stability_index, BenchmarkConfig, DatasetBundle, ExplainSettings, MetricReport, ModelRecipe,
    NamedSet, RelevanceSpec, ReplacementPolicy, ReplacementTable,
};
use reshape_core::explainers::{explain, ranked_attributes, ExplanationRequest, Method};
use reshape_core::shap::{exact_shapley, sampled_shapley, BackgroundSet, PayoffFn, PlayerGrouping};
use reshape_core::synthesis::{
    add_noise_attribute, generate_boolean, inject_type_a, BooleanSpec, InjectionPlan,
};
use reshape_core::tabular::{encode, AttrKind, EncodingMap, RecordTable};

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !($cond) {
            return Err(format!($($msg)+));
        }
    };
}

fn finish(n: u32, name: &str, started: Instant, result: Result<(), String>) {
    let elapsed = started.elapsed();
    match result {
        Ok(()) => println!("ACCEPTANCE {n} {name}: PASS ({elapsed:.1?})"),
        Err(e) => {
            println!("ACCEPTANCE {n} {name}: FAIL ({elapsed:.1?}) - {e}");
            panic!("acceptance criterion {n} ({name}) failed: {e}");
        }
    }
}

fn oops<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- criterion 1

/// Frozen characteristic function: a seeded integer scramble of the player
/// mask, mapped into [0, 10). Shared by the oracles and the engine payoff.
fn coalition_value(game_seed: u64, mask: u64) -> f64 {
    let mut z = game_seed ^ mask.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64 * 10.0
}

/// Oracle 1: the subset form with factorial weights,
/// `phi_j = sum_S |S|! (M-1-|S|)! / M! * (v(S+j) - v(S))`.
fn oracle_subset_form(m: usize, v: &[f64]) -> Vec<f64> {
    let mut fact = vec![1.0f64; m + 1];
    for i in 1..=m {
        fact[i] = fact[i - 1] * i as f64;
    }
    let mut phi = vec![0.0; m];
    for (j, p) in phi.iter_mut().enumerate() {
        for mask in 0..(1usize << m) {
            if mask & (1 << j) != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let w = fact[s] * fact[m - 1 - s] / fact[m];
            *p += w * (v[mask | (1 << j)] - v[mask]);
        }
    }
    phi
}

/// Oracle 2: the permutation form, averaging marginal contributions over
/// every ordering (only viable for small M).
fn oracle_permutation_form(m: usize, v: &[f64]) -> Vec<f64> {
    fn heaps(k: usize, arr: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
        if k == 1 {
            visit(arr);
            return;
        }
        for i in 0..k {
            heaps(k - 1, arr, visit);
            if k % 2 == 0 {
                arr.swap(i, k - 1);
            } else {
                arr.swap(0, k - 1);
            }
        }
    }

    let mut phi = vec![0.0; m];
    let mut perm: Vec<usize> = (0..m).collect();
    let mut count = 0usize;
    heaps(m, &mut perm, &mut |p| {
        let mut mask = 0usize;
        for &j in p {
            let before = v[mask];
            mask |= 1 << j;
            phi[j] += v[mask] - before;
        }
        count += 1;
    });
    for p in phi.iter_mut() {
        *p /= count as f64;
    }
    phi
}

/// Engine payoff reading the coalition back out of the composite row: the
/// instance is all ones, the lone background row all zeros, so the
/// composite is exactly the coalition's indicator vector.
struct MaskHashPayoff {
    m: usize,
    game_seed: u64,
}

impl PayoffFn for MaskHashPayoff {
    fn evaluate_batch(&self, rows: ndarray::ArrayView2<'_, f64>) -> Vec<f64> {
        rows.outer_iter()
            .map(|r| {
                let mut mask = 0u64;
                for j in 0..self.m {
                    if r[j] > 0.5 {
                        mask |= 1 << j;
                    }
                }
                coalition_value(self.game_seed, mask)
            })
            .collect()
    }
}

#[test]
fn criterion_1_shapley_oracle_equivalence() {
    let started = Instant::now();
    let result = (|| -> Result<(), String> {
        let mut games = 0usize;
        for g in 0..100u64 {
            let m = 2 + (g % 9) as usize; // cycles 2..=10
            let game_seed = g.wrapping_mul(31).wrapping_add(7);
            let v: Vec<f64> =
                (0..(1usize << m)).map(|mask| coalition_value(game_seed, mask as u64)).collect();

            let oracle = oracle_subset_form(m, &v);
            if m <= 6 {
                let perm = oracle_permutation_form(m, &v);
                for j in 0..m {
                    ensure!(
                        (oracle[j] - perm[j]).abs() < 1e-10,
                        "game {g}: the two oracles disagree on player {j}: {} vs {}",
                        oracle[j],
                        perm[j]
                    );
                }
            }

            let instance = Array1::ones(m);
            let grouping =
                PlayerGrouping::new((0..m).map(|j| vec![j]).collect()).map_err(oops)?;
            let background =
                BackgroundSet::from_rows(Array2::zeros((1, m)), None).map_err(oops)?;
            let payoff = MaskHashPayoff { m, game_seed };

            let exact =
                exact_shapley(instance.view(), &grouping, &payoff, &background).map_err(oops)?;
            let sampled = sampled_shapley(

                instance.view(),
                &grouping,
                &payoff,
                &background,
                (1 << m) - 2,
                1000 + g,
            )
            .map_err(oops)?;

            for j in 0..m {
                ensure!(
                    (exact.phi[j] - oracle[j]).abs() <= 1e-6,
                    "game {g} (m={m}): exact vs oracle, player {j}: {} vs {}",
                    exact.phi[j],
                    oracle[j]
                );
                ensure!(
                    (sampled.phi[j] - exact.phi[j]).abs() <= 1e-6,
                    "game {g} (m={m}): enumeration vs exact, player {j}: {} vs {}",
                    sampled.phi[j],
                    exact.phi[j]
                );
            }
            ensure!(
                exact.efficiency_residual.abs() <= 1e-6,
                "game {g}: exact residual {}",
                exact.efficiency_residual
            );
            ensure!(
                sampled.efficiency_residual.abs() <= 1e-6,
                "game {g}: sampled residual {}",
                sampled.efficiency_residual
            );
            games += 1;
        }
        ensure!(games >= 100, "only {games} games checked");
        ensure!(
            started.elapsed() <= Duration::from_secs(60),
            "took {:?}, budget 60 s",
            started.elapsed()
        );
        Ok(())
    })();
    finish(1, "shapley-oracle-equivalence", started, result);
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn criterion_2_gradient_check() {
    let started = Instant::now();
    let result = (|| -> Result<(), String> {
        let spec = LayerSpec::new(vec![6, 4, 2, 4, 6], 0.4).map_err(oops)?;
        let params = NetworkParams::init(&spec, 3).map_err(oops)?;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // keep targets off the clamp boundary, where the loss has a kink
        let batch =
            Array2::from_shape_fn((8, 6), |_| 0.05 + 0.9 * rng.random::<f64>());

        let (_, grads) = loss_gradients(&params, batch.view()).map_err(oops)?;
        let h = 1e-5;
        let mut checked = 0usize;
        for l in 0..params.layers.len() {
            let (rows, cols) = params.layers[l].weight.dim();
            for r in 0..rows {
                for c in 0..cols {
                    let mut plus = params.clone();
                    plus.layers[l].weight[[r, c]] += h;
                    let mut minus = params.clone();
                    minus.layers[l].weight[[r, c]] -= h;
                    let fd = (batch_mean_loss(&plus, batch.view()).map_err(oops)?
                        - batch_mean_loss(&minus, batch.view()).map_err(oops)?)
                        / (2.0 * h);
                    let a = grads[l].weight[[r, c]];
                    let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                    ensure!(
                        rel <= 1e-4,
                        "layer {l} weight ({r},{c}): analytic {a} vs fd {fd} (rel {rel:.2e})"
                    );
                    checked += 1;
                }
            }
            for b in 0..params.layers[l].bias.len() {
                let mut plus = params.clone();
                plus.layers[l].bias[b] += h;
                let mut minus = params.clone();
                minus.layers[l].bias[b] -= h;
                let fd = (batch_mean_loss(&plus, batch.view()).map_err(oops)?
                    - batch_mean_loss(&minus, batch.view()).map_err(oops)?)
                    / (2.0 * h);
                let a = grads[l].bias[b];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                ensure!(
                    rel <= 1e-4,
                    "layer {l} bias {b}: analytic {a} vs fd {fd} (rel {rel:.2e})"
                );
                checked += 1;
            }
        }
        ensure!(checked == 80, "expected 80 parameters on 6-4-2-4-6, checked {checked}");
        ensure!(
            started.elapsed() <= Duration::from_secs(10),
            "took {:?}, budget 10 s",
            started.elapsed()
        );
        Ok(())
    })();
    finish(2, "gradient-check", started, result);
}

// ---------------------------------------------------------------- criterion 3

fn mixed_map() -> Result<EncodingMap, String> {
    let names: Vec<String> =
        ["color", "shape", "weight", "flag", "score"].iter().map(|s| s.to_string()).collect();
    let raw: Vec<Vec<String>> = [
        ["red", "square", "1.0", "yes", "0.25"],
        ["green", "circle", "2.0", "no", "0.5"],
        ["blue", "hexagon", "3.5", "yes", "0.75"],
        ["red", "triangle", "4.0", "no", "1.0"],
    ]
    .iter()
    .map(|r| r.iter().map(|s| s.to_string()).collect())
    .collect();
    let hints = [
        AttrKind::Categorical,
        AttrKind::Categorical,
        AttrKind::Numerical,
        AttrKind::Categorical,
        AttrKind::Numerical,
    ];
    let table = RecordTable::from_raw(&names, &raw, &hints).map_err(oops)?;
    let (_, map) = encode(&table, false).map_err(oops)?;
    Ok(map)
}

#[test]
fn criterion_3_attribute_loss_partition() {
    let started = Instant::now();
    let result = (|| -> Result<(), String> {
        let map = mixed_map()?;
        let d = map.total_dims();
        ensure!(d == 11, "fixture should encode to 11 dims, got {d}");
        let spec = LayerSpec::new(vec![d, 7, 5, 7, d], 0.4).map_err(oops)?;
        let params = NetworkParams::init(&spec, 21).map_err(oops)?;

        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for i in 0..1000 {
            let row = Array1::from_shape_fn(d, |_| rng.random::<f64>());
            let report = reconstruct_report(&params, row.view(), &map).map_err(oops)?;
            let attr_sum: f64 = report.per_attribute_loss.iter().sum();
            ensure!(
                (attr_sum - report.total_loss).abs() <= 1e-9,
                "row {i}: attribute losses sum to {attr_sum}, total is {}",
                report.total_loss
            );
            let dim_sum: f64 = report.per_dim_loss.iter().sum();
            ensure!(
                (dim_sum - report.total_loss).abs() <= 1e-9,
                "row {i}: dimension losses sum to {dim_sum}, total is {}",
                report.total_loss
            );
        }
        ensure!(
            started.elapsed() <= Duration::from_secs(5),
            "took {:?}, budget 5 s",
            started.elapsed()
        );
        Ok(())
    })();
    finish(3, "attribute-loss-partition", started, result);
}

// ---------------------------------------------------------------- criterion 4

/// Pools the samples of one metric across several named relevance sets.
fn merged_mean(report: &MetricReport, method: &str, metrics: &[&str]) -> Result<f64, String> {
    let mut samples = Vec::new();
    for metric in metrics {
        let row = report
            .find(method, metric)
            .ok_or_else(|| format!("missing row {method}/{metric}"))?;
        samples.extend_from_slice(&row.samples);
    }
    if samples.is_empty() {
        return Err(format!("no samples for {method} over {metrics:?}"));
    }
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}

#[test]
fn criterion_4_boolean_fidelity_ordering() {
    let started = Instant::now();
    let result = (|| -> Result<(), String> {
        // 20 attributes; a17 = a2 AND a3, a18 = a4 OR a5 (indices 16, 1, 2
        // and 17, 3, 4). One hundred anomalies flip each derived output.
        let table = generate_boolean(&BooleanSpec::standard(20_000, 424)).map_err(oops)?;
        let mut plan = InjectionPlan::type_a(1, 100, 8031);
        plan.targets = Some(vec![16]);
        let table = inject_type_a(&table, &plan).map_err(oops)?;
        let mut plan = InjectionPlan::type_a(1, 100, 8032);
        plan.targets = Some(vec![17]);
        let table = inject_type_a(&table, &plan).map_err(oops)?;
        let bundle = DatasetBundle { name: "boolean".into(), table, reserve_unseen: false };

        let recipe = ModelRecipe {
            layer: LayerSpec::new(vec![20, 18, 16, 15, 16, 18, 20], 0.4).map_err(oops)?,
            train: TrainConfig {
                batch_size: 128,
                learning_rate: 1e-3,
                max_epochs: 60,
                patience: 8,
                min_delta: 1e-5,
                ..TrainConfig::default()
            },
        };
        let settings = ExplainSettings {
            eta: 32,
            n_coalitions: Some(256),
            top_attributes: Some(6),
            top_encodings: 10,
            ..ExplainSettings::default()
        };
        let set = |name: &str, attributes: Vec<usize>, anchor: usize| NamedSet {
            name: name.into(),
            attributes,
            applies_to: Some(anchor),
        };
        let relevance = RelevanceSpec {
            sets: vec![
                set("and-all", vec![1, 2, 16], 16),
                set("or-all", vec![3, 4, 17], 17),
                set("and-ind", vec![1, 2], 16),
                set("or-ind", vec![3, 4], 17),
                set("and-dep", vec![16], 16),
                set("or-dep", vec![17], 17),
            ],
            perturbed_as_relevant: true,
            uninformative: Vec::new(),
        };
        let cfg = BenchmarkConfig {
            model_seeds: vec![40],
            anomalies_per_run: 200,
            explanation_repeats: 1,
            n_grid: vec![1, 3, 10],
            delta_quantile: 0.98,
            methods: vec![Method::Reshape, Method::AShap],
            master_seed: 90,
            error_curves: false,
            replacement_policy: ReplacementPolicy::ModeMedian,
        };
        let report =
            run_benchmark(&bundle, &recipe, &settings, &relevance, &cfg).map_err(oops)?;

        let r_and = merged_mean(&report, "RESHAPE", &["mrr:and-all"])?;
        let r_or = merged_mean(&report, "RESHAPE", &["mrr:or-all"])?;
        ensure!(r_and >= 0.95, "combined AND set: RESHAPE MRR {r_and:.3} < 0.95");
        ensure!(r_or >= 0.95, "combined OR set: RESHAPE MRR {r_or:.3} < 0.95");

        let a_ind = merged_mean(&report, "A-SHAP", &["mrr:and-ind", "mrr:or-ind"])?;
        let r_ind = merged_mean(&report, "RESHAPE", &["mrr:and-ind", "mrr:or-ind"])?;
        ensure!(
            a_ind >= r_ind,
            "independent attributes: A-SHAP {a_ind:.3} should be >= RESHAPE {r_ind:.3}"
        );

        let r_dep = merged_mean(&report, "RESHAPE", &["mrr:and-dep", "mrr:or-dep"])?;
        let a_dep = merged_mean(&report, "A-SHAP", &["mrr:and-dep", "mrr:or-dep"])?;
        ensure!(
            r_dep >= 4.0 * a_dep,
            "dependent attribute: RESHAPE {r_dep:.3} should be >= 4x A-SHAP {a_dep:.3}"
        );

        ensure!(
            started.elapsed() <= Duration::from_secs(15 * 60),
            "took {:?}, budget 15 min",
            started.elapsed()
        );
        Ok(())
    })();
    finish(4, "boolean-fidelity-ordering", started, result);
}

// ------------------------------------------------- criteria 5-8 (shared run)

struct SharedRun {
    report: MetricReport,
    n_attributes: usize,
    elapsed: Duration,
}

/// Ledger-like table: seven categorical attributes plus two amounts, all
/// correlated through a latent class so there is structure to learn.
fn ledger_table(seed: u64) -> Result<RecordTable, String> {
    let names: Vec<String> =
        ["account", "costcenter", "vendor", "doctype", "period", "user", "currency", "amount",
         "quantity"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    let prefixes = ["ac", "cc", "vn", "dt", "pe", "us", "cu"];
    let sizes = [12usize, 10, 16, 10, 14, 8, 18];
    let n_classes = 6usize;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw = Vec::with_capacity(6000);
    for _ in 0..6000 {
        let class = rng.random_range(0..n_classes);
        let mut row = Vec::with_capacity(names.len());
        for j in 0..7 {
            // a preferred token per latent class plus a uniform churn band,
            // so every vocabulary entry stays legitimately in use
            let roll = rng.random::<f64>();
            let token = if roll < 0.60 {
                format!("{}{}", prefixes[j], (class * 5 + j * 3) % sizes[j])
            } else {
                format!("{}{}", prefixes[j], rng.random_range(0..sizes[j]))
            };
            row.push(token);
        }
        let amount = (class + 1) as f64 * 100.0 + rng.random::<f64>() * 120.0;
        let quantity = class as f64 * 2.0 + 1.0 + rng.random::<f64>() * 4.0;
        row.push(format!("{amount}"));
        row.push(format!("{quantity}"));
        raw.push(row);
    }
    let hints = [
        AttrKind::Categorical,
        AttrKind::Categorical,
        AttrKind::Categorical,
        AttrKind::Categorical,
        AttrKind::Categorical,
        AttrKind::Categorical,
        AttrKind::Categorical,
        AttrKind::Numerical,
        AttrKind::Numerical,
    ];
    RecordTable::from_raw(&names, &raw, &hints).map_err(oops)
}

fn ledger_run() -> &'static Result<SharedRun, String> {
    static RUN: OnceLock<Result<SharedRun, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let started = Instant::now();
        let table = ledger_table(501)?;
        // twenty single-attribute anomalies on the categorical attributes,
        // then an uninformative noise attribute over the whole table
        let mut plan = InjectionPlan::type_a(1, 20, 502);
        plan.targets = Some((0..7).collect());
        let table = inject_type_a(&table, &plan).map_err(oops)?;
        let table = add_noise_attribute(&table, 6, 503).map_err(oops)?;
        let t = table.n_attributes();

        let bundle = DatasetBundle { name: "ledger".into(), table, reserve_unseen: true };
        let (matrix, _) = encode(&bundle.table, true).map_err(oops)?;
        let d = matrix.ncols();

        let recipe = ModelRecipe {
            layer: LayerSpec::new(vec![d, 48, 24, 13, 24, 48, d], 0.4).map_err(oops)?,
            train: TrainConfig {
                batch_size: 128,
                learning_rate: 1e-3,
                max_epochs: 10,
                patience: 8,
                min_delta: 1e-5,
                ..TrainConfig::default()
            },
        };
        let settings = ExplainSettings {
            eta: 4,
            n_coalitions: Some(24),
            ..ExplainSettings::default()
        };
        let relevance = RelevanceSpec {
            sets: Vec::new(),
            perturbed_as_relevant: true,
            uninformative: vec![t - 1],
        };
        let cfg = BenchmarkConfig {
            model_seeds: vec![50, 51],
            anomalies_per_run: 20,
            explanation_repeats: 3,
            n_grid: vec![1, 2, 3, 5, 8, 10],
            delta_quantile: 0.99,
            methods: Method::ALL.to_vec(),
            master_seed: 77,
            error_curves: true,
            replacement_policy: ReplacementPolicy::ModeMedian,
        };
        let report =
            run_benchmark(&bundle, &recipe, &settings, &relevance, &cfg).map_err(oops)?;
        Ok(SharedRun { report, n_attributes: t, elapsed: started.elapsed() })
    })
}

#[test]
#[ignore = "diagnostic: dumps the shared-run metric table"]
fn ledger_probe() {
    let run = ledger_run().as_ref().expect("shared run");
    for r in &run.report.rows {
        println!("{:10} {:22} mean {:8.4} std {:8.4} n {}", r.method, r.metric, r.mean, r.std, r.n);
    }
    for c in &run.report.curves {
        let pts: Vec<String> =
            c.points.iter().map(|p| format!("{}:{:.3}", p.n, p.mean)).collect();
        println!("{:10} {:12} {}", c.method, c.metric, pts.join(" "));
    }
    for w in &run.report.warnings {
        println!("warning: {w}");
    }
}

#[test]
fn criterion_5_hits_auc_ordering() {
    let started = Instant::now();
    let result = (|| -> Result<(), String> {
        let run = ledger_run().as_ref().map_err(Clone::clone)?;
        let auc = |method: &str| -> Result<f64, String> {
            Ok(run
                .report
                .find(method, "hits_auc")
                .ok_or_else(|| format!("missing hits_auc for {method}"))?
                .mean)
        };
        let reshape = auc("RESHAPE")?;
        let loss_shap = auc("LossSHAP")?;
        let random = auc("Random")?;
        let a_shap = auc("A-SHAP")?;
        ensure!(
            reshape > loss_shap && loss_shap > random && random > a_shap,
            "AUC ordering violated: RESHAPE {reshape:.2}, LossSHAP {loss_shap:.2}, \
             Random {random:.2}, A-SHAP {a_shap:.2}"
        );
        ensure!(
            run.elapsed <= Duration::from_secs(20 * 60),
            "shared run took {:?}, budget 20 min",
            run.elapsed
        );
        Ok(())
    })();
    finish(5, "hits-auc-ordering", started, result);
}

#[test]
fn criterion_6_robustness_ordering() {
    let started = Instant::now();
    let result = (|| -> Result<(), String> {
        let run = ledger_run().as_ref().map_err(Clone::clone)?;
        let mrr_u = |method: &str| -> Result<f64, String> {
            Ok(run
                .report
                .find(method, "mrr_u")
                .ok_or_else(|| format!("missing mrr_u for {method}"))?
                .mean)
        };
        let random = mrr_u("Random")?;
        let loss_shap = mrr_u("LossSHAP")?;
        let reshape = mrr_u("RESHAPE")?;
        let a_shap = mrr_u("A-SHAP")?;
        ensure!(
            random > loss_shap && random > reshape && random > a_shap,
            "the noise attribute should rank lowest under every attribution method: \
             Random {random:.3}, LossSHAP {loss_shap:.3}, RESHAPE {reshape:.3}, \
             A-SHAP {a_shap:.3}"
        );
        ensure!(
            loss_shap <= reshape && reshape <= a_shap,
            "expected LossSHAP <= RESHAPE <= A-SHAP on the noise attribute, got \
             {loss_shap:.3} / {reshape:.3} / {a_shap:.3}"
        );
        Ok(())
    })();
    finish(6, "robustness-ordering", started, result);
}

#[test]
fn criterion_7_stability() {
    let started = Instant::now();
    let result = (|| -> Result<(), String> {
        let run = ledger_run().as_ref().map_err(Clone::clone)?;
        let s1 = |method: &str| -> Result<f64, String> {
            Ok(run
                .report
                .find(method, "stability_s1")
                .ok_or_else(|| format!("missing stability_s1 for {method}"))?
                .mean)
        };
        let reshape = s1("RESHAPE")?;
        let a_shap = s1("A-SHAP")?;
        ensure!(
            reshape <= a_shap,
            "RESHAPE S_1 {reshape:.3} should not exceed A-SHAP S_1 {a_shap:.3}"
        );

        // repeats sharing one seed agree exactly, so every S_n is zero
        let table = generate_boolean(&BooleanSpec::standard(300, 61)).map_err(oops)?;
        let (matrix, map) = encode(&table, false).map_err(oops)?;
        let spec = LayerSpec::new(vec![20, 14, 9, 14, 20], 0.4).map_err(oops)?;
        let params = NetworkParams::init(&spec, 62).map_err(oops)?;
        let background = BackgroundSet::sample(
            matrix.view(),
            &(0..matrix.nrows()).collect::<Vec<_>>(),
            8,
            63,
        )
        .map_err(oops)?;
        for method in [Method::Reshape, Method::AShap, Method::Random] {
            let mut rankings = Vec::new();
            for _ in 0..3 {
                let req = ExplanationRequest::new(
                    method,
                    matrix.row(5),
                    &params,
                    &map,
                    &background,
                    909,
                );
                rankings.push(ranked_attributes(&explain(&req).map_err(oops)?));
            }
            ensure!(
                rankings[0] == rankings[1] && rankings[1] == rankings[2],
                "{method} repeats with one seed must agree"
            );
            for n in 1..=map.n_attributes() {
                let s = stability_index(&rankings, n).map_err(oops)?;
                ensure!(s == 0.0, "{method}: S_{n} = {s}, expected exactly 0");
            }
        }
        Ok(())
    })();
    finish(7, "stability", started, result);
}

#[test]
fn criterion_8_error_reduction_dominance() {
    let started = Instant::now();
    let result = (|| -> Result<(), String> {
        let run = ledger_run().as_ref().map_err(Clone::clone)?;
        let curve = |method: &str| -> Result<Vec<(usize, f64)>, String> {
            Ok(run
                .report
                .find_curve(method, "error_pct")
                .ok_or_else(|| format!("missing error_pct curve for {method}"))?
                .points
                .iter()
                .map(|p| (p.n, p.mean))
                .collect())
        };
        let reshape = curve("RESHAPE")?;
        let random = curve("Random")?;
        ensure!(
            reshape.len() == run.n_attributes + 1 && random.len() == reshape.len(),
            "curves should span n = 0..=T"
        );
        ensure!(reshape[0] == (0, 1.0), "error%_0 must be exactly 1, got {:?}", reshape[0]);
        ensure!(random[0] == (0, 1.0), "error%_0 must be exactly 1, got {:?}", random[0]);
        for (&(n, r), &(_, rnd)) in reshape.iter().zip(random.iter()) {
            ensure!(
                r <= rnd + 1e-12,
                "at n={n} the RESHAPE curve ({r:.4}) sits above Random ({rnd:.4})"
            );
        }
        Ok(())
    })();
    finish(8, "error-reduction-dominance", started, result);
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn criterion_9_metric_arithmetic() {
    let started = Instant::now();
    let result = (|| -> Result<(), String> {
        // reciprocal-rank mean over hit ranks {1, 2, 4}
        let rankings = vec![vec![0, 1, 2, 3], vec![1, 0, 2, 3], vec![1, 2, 3, 0]];
        let m = mrr(&rankings, &[0]).map_err(oops)?;
        ensure!(m == (1.0 + 0.5 + 0.25) / 3.0, "mrr over ranks 1,2,4: {m}");
        let always_first = vec![vec![2, 0, 1]; 5];
        ensure!(mrr(&always_first, &[2]).map_err(oops)? == 1.0, "mrr of constant rank 1");

        // hit-within-n indicator around a first hit at rank 3
        let rank3 = vec![vec![1, 2, 0, 3]];
        ensure!(hits_at_n(&rank3, &[0], 2).map_err(oops)? == 0.0, "hit at 3, n=2");
        ensure!(hits_at_n(&rank3, &[0], 3).map_err(oops)? == 1.0, "hit at 3, n=3");
        ensure!(hits_at_n(&rank3, &[0], 4).map_err(oops)? == 1.0, "n=T always hits");

        // area under the hit curve at the extremes, T = 9
        let first9 = vec![vec![8, 0, 1, 2, 3, 4, 5, 6, 7]; 4];
        ensure!(hits_auc(&first9, &[8]).map_err(oops)? == 9.0, "perfect AUC");
        let last9 = vec![vec![0, 1, 2, 3, 4, 5, 6, 7, 8]; 4];
        ensure!(hits_auc(&last9, &[8]).map_err(oops)? == 1.0, "worst AUC");

        // rank-variance index: agreement is exactly zero; ranks {1,2,3}
        // for the leader give sqrt(2/3)
        let same = vec![vec![3, 1, 0, 2]; 3];
        for n in 1..=4 {
            ensure!(stability_index(&same, n).map_err(oops)? == 0.0, "S_{n} of agreement");
        }
        let drift = vec![vec![0, 1, 2], vec![1, 0, 2], vec![1, 2, 0]];
        let s1 = stability_index(&drift, 1).map_err(oops)?;
        ensure!(s1 == (2.0f64 / 3.0).sqrt(), "S_1 of ranks 1,2,3: {s1}");

        // replacement curve: entry 0 is exactly 1, and replacing a row with
        // its own modal/median values leaves every entry at exactly 1
        let names: Vec<String> = vec!["kind".into(), "value".into()];
        let raw: Vec<Vec<String>> = [
            ["m", "3"],
            ["m", "1"],
            ["m", "2"],
            ["x", "4"],
            ["y", "100"],
        ]
        .iter()
        .map(|r| r.iter().map(|s| s.to_string()).collect())
        .collect();
        let table =
            RecordTable::from_raw(&names, &raw, &[AttrKind::Categorical, AttrKind::Numerical])
                .map_err(oops)?;
        let (matrix, map) = encode(&table, false).map_err(oops)?;
        let spec = LayerSpec::new(vec![map.total_dims(), 3, 1, 3, map.total_dims()], 0.4)
            .map_err(oops)?;
        let params = NetworkParams::init(&spec, 91).map_err(oops)?;
        let repl = ReplacementTable::build(&table, &map, 1).map_err(oops)?;
        // row 0 holds the modal token and the median value already
        let curve = error_reduction_curve(
            &params,
            matrix.row(0),
            &map,
            &[0, 1],
            &repl,
            &ReplacementPolicy::ModeMedian,
            2,
        )
        .map_err(oops)?;
        ensure!(curve == vec![1.0, 1.0, 1.0], "no-op replacement curve: {curve:?}");
        // a row that does not match them reduces only from n >= 1
        let moved = error_reduction_curve(
            &params,
            matrix.row(4),
            &map,
            &[1, 0],
            &repl,
            &ReplacementPolicy::ModeMedian,
            2,
        )
        .map_err(oops)?;
        ensure!(moved[0] == 1.0, "error%_0 must be exactly 1, got {}", moved[0]);

        // first-hit positions backing the reciprocal ranks above
        ensure!(first_hit_rank(&[1, 2, 3, 0], &[0]).map_err(oops)? == 4, "rank lookup");
        Ok(())
    })();
    finish(9, "metric-arithmetic", started, result);
}
