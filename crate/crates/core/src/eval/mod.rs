//! Explanation quality metrics and the benchmark harness.

mod bench;

pub use bench::{
    run_benchmark, BenchmarkConfig, CurvePoint, CurveSeries, DatasetBundle, ExplainSettings,
    MetricReport, MetricRow, ModelRecipe, NamedSet, RelevanceSpec,
};

use ndarray::{ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::aenn::{score_rows, NetworkParams};
use crate::error::{Error, Result};
use crate::tabular::{encode_value, AttrDomain, EncodingMap, RecordTable, Value};

fn check_ranking(ranking: &[usize], t: usize) -> Result<()> {
    if ranking.len() != t {
        return Err(Error::Eval(format!(
            "ranking lists {} attributes, expected {t}",
            ranking.len()
        )));
    }
    let mut seen = vec![false; t];
    for &a in ranking {
        if a >= t {
            return Err(Error::Eval(format!("ranked attribute {a} out of range")));
        }
        if seen[a] {
            return Err(Error::Eval(format!("attribute {a} ranked twice")));
        }
        seen[a] = true;
    }
    Ok(())
}

fn check_relevant(relevant: &[usize], t: usize) -> Result<()> {
    if relevant.is_empty() {
        return Err(Error::Eval("empty relevant set".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for &a in relevant {
        if a >= t {
            return Err(Error::Eval(format!("relevant attribute {a} out of range")));
        }
        if !seen.insert(a) {
            return Err(Error::Eval(format!("relevant attribute {a} repeated")));
        }
    }
    Ok(())
}

/// One-based position of the first relevant attribute in the ranking.
pub fn first_hit_rank(ranking: &[usize], relevant: &[usize]) -> Result<usize> {
    check_ranking(ranking, ranking.len())?;
    check_relevant(relevant, ranking.len())?;
    Ok(ranking.iter().position(|a| relevant.contains(a)).expect("full permutation") + 1)
}

/// Mean reciprocal rank of the first relevant hit.
pub fn mrr(rankings: &[Vec<usize>], relevant: &[usize]) -> Result<f64> {
    if rankings.is_empty() {
        return Err(Error::Eval("no rankings".into()));
    }
    let mut total = 0.0;
    for r in rankings {
        total += 1.0 / first_hit_rank(r, relevant)? as f64;
    }
    Ok(total / rankings.len() as f64)
}

/// Fraction of rankings whose first relevant hit lands within the top `n`.
pub fn hits_at_n(rankings: &[Vec<usize>], relevant: &[usize], n: usize) -> Result<f64> {
    if rankings.is_empty() {
        return Err(Error::Eval("no rankings".into()));
    }
    let t = rankings[0].len();
    if n == 0 || n > t {
        return Err(Error::Eval(format!("n={n} outside [1, {t}]")));
    }
    let mut hits = 0usize;
    for r in rankings {
        if first_hit_rank(r, relevant)? <= n {
            hits += 1;
        }
    }
    Ok(hits as f64 / rankings.len() as f64)
}

/// Area under the Hits@n curve summed over `n = 1..=T`; equivalently the
/// mean of `T - rank + 1`. Ranges from 1 (always last) to `T` (always
/// first).
pub fn hits_auc(rankings: &[Vec<usize>], relevant: &[usize]) -> Result<f64> {
    if rankings.is_empty() {
        return Err(Error::Eval("no rankings".into()));
    }
    let t = rankings[0].len();
    let mut total = 0.0;
    for r in rankings {
        total += (t - first_hit_rank(r, relevant)? + 1) as f64;
    }
    Ok(total / rankings.len() as f64)
}

/// Spread of the leading ranks across repeated runs.
///
/// For each position `i <= n`, take the attribute the first run put at rank
/// `i`, collect the rank every run gives it, and compute the population
/// variance `V_i`. The index is `sqrt(mean(V_1..V_n))`; zero means all runs
/// agree on the top `n`.
pub fn stability_index(rankings: &[Vec<usize>], n: usize) -> Result<f64> {
    if rankings.len() < 2 {
        return Err(Error::Eval("stability needs at least 2 runs".into()));
    }
    let t = rankings[0].len();
    if n == 0 || n > t {
        return Err(Error::Eval(format!("n={n} outside [1, {t}]")));
    }
    let mut positions = Vec::with_capacity(rankings.len());
    for r in rankings {
        check_ranking(r, t)?;
        let mut pos = vec![0usize; t];
        for (i, &a) in r.iter().enumerate() {
            pos[a] = i + 1;
        }
        positions.push(pos);
    }
    let k = rankings.len() as f64;
    let mut variance_sum = 0.0;
    for i in 0..n {
        let attr = rankings[0][i];
        let mean: f64 = positions.iter().map(|p| p[attr] as f64).sum::<f64>() / k;
        let var: f64 =
            positions.iter().map(|p| (p[attr] as f64 - mean).powi(2)).sum::<f64>() / k;
        variance_sum += var;
    }
    Ok((variance_sum / n as f64).sqrt())
}

/// How replacement values are chosen when neutralizing ranked attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ReplacementPolicy {
    /// Categorical mode / numerical median of the unperturbed rows.
    ModeMedian,
    /// Try the `v` most frequent values and keep the one minimizing the
    /// resulting score.
    GreedyTopV { v: usize },
}

/// Pre-encoded replacement candidates per attribute, most preferred first.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplacementTable {
    candidates: Vec<Vec<Vec<f64>>>,
}

impl ReplacementTable {
    /// Collects up to `max_candidates` replacement encodings per attribute
    /// from the unperturbed rows: frequent-first for categoricals (ties
    /// lexicographic), median-first for numericals.
    pub fn build(table: &RecordTable, map: &EncodingMap, max_candidates: usize) -> Result<Self> {
        if max_candidates == 0 {
            return Err(Error::Eval("max_candidates must be positive".into()));
        }
        let none_rows = table.none_indices();
        if none_rows.is_empty() {
            return Err(Error::Eval("no unperturbed rows to derive replacements from".into()));
        }
        let mut candidates = Vec::with_capacity(table.n_attributes());
        for (j, attr) in table.schema.iter().enumerate() {
            let slice_len = map.slice(j).len;
            let values: Vec<Vec<f64>> = match &attr.domain {
                AttrDomain::Categorical { .. } => {
                    let mut counts: std::collections::BTreeMap<&str, usize> = Default::default();
                    for &i in &none_rows {
                        let tok = table.rows[i][j].as_token().ok_or_else(|| {
                            Error::Eval(format!("row {i}, attribute '{}': not a token", attr.name))
                        })?;
                        *counts.entry(tok).or_insert(0) += 1;
                    }
                    let mut order: Vec<(&str, usize)> = counts.into_iter().collect();
                    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
                    order
                        .into_iter()
                        .take(max_candidates)
                        .map(|(tok, _)| {
                            encode_value(attr, &Value::Token(tok.to_string()), slice_len)
                        })
                        .collect::<Result<_>>()?
                }
                AttrDomain::Numerical { .. } => {
                    let mut nums = Vec::with_capacity(none_rows.len());
                    for &i in &none_rows {
                        nums.push(table.rows[i][j].as_number().ok_or_else(|| {
                            Error::Eval(format!("row {i}, attribute '{}': not a number", attr.name))
                        })?);
                    }
                    nums.sort_by(f64::total_cmp);
                    let median = if nums.len() % 2 == 1 {
                        nums[nums.len() / 2]
                    } else {
                        0.5 * (nums[nums.len() / 2 - 1] + nums[nums.len() / 2])
                    };
                    let mut out =
                        vec![encode_value(attr, &Value::Number(median), slice_len)?];
                    // frequent distinct values, skipping anything encoding
                    // identically to the median
                    let mut counts: std::collections::BTreeMap<u64, (f64, usize)> =
                        Default::default();
                    for &x in &nums {
                        counts.entry(x.to_bits()).or_insert((x, 0)).1 += 1;
                    }
                    let mut order: Vec<(f64, usize)> = counts.into_values().collect();
                    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.total_cmp(&b.0)));
                    for (x, _) in order {
                        if out.len() >= max_candidates {
                            break;
                        }
                        let enc = encode_value(attr, &Value::Number(x), slice_len)?;
                        if !out.contains(&enc) {
                            out.push(enc);
                        }
                    }
                    out
                }
            };
            candidates.push(values);
        }
        Ok(Self { candidates })
    }

    pub fn candidates(&self, attribute: usize) -> &[Vec<f64>] {
        &self.candidates[attribute]
    }
}

/// Relative reconstruction error after progressively replacing the `n`
/// top-ranked attributes with in-distribution values.
///
/// Entry 0 is exactly 1.0 (nothing replaced); entry `n` is the score after
/// `n` replacements divided by the original score.
pub fn error_reduction_curve(
    params: &NetworkParams,
    row: ArrayView1<'_, f64>,
    map: &EncodingMap,
    ranking: &[usize],
    replacements: &ReplacementTable,
    policy: &ReplacementPolicy,
    n_max: usize,
) -> Result<Vec<f64>> {
    let t = map.n_attributes();
    check_ranking(ranking, t)?;
    if n_max == 0 || n_max > t {
        return Err(Error::Eval(format!("n_max {n_max} outside [1, {t}]")));
    }
    if row.len() != map.total_dims() {
        return Err(Error::Eval(format!(
            "row has {} dims, encoding expects {}",
            row.len(),
            map.total_dims()
        )));
    }
    if let ReplacementPolicy::GreedyTopV { v } = policy {
        if *v == 0 {
            return Err(Error::Eval("greedy candidate budget must be positive".into()));
        }
    }

    let base = score_rows(params, row.insert_axis(Axis(0)))?[0];
    if base <= 0.0 {
        return Err(Error::Eval(format!("baseline score {base} is not positive")));
    }

    let mut current = row.to_owned();
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(1.0);
    for step in 0..n_max {
        let attribute = ranking[step];
        let range = map.slice(attribute).range();
        let pool = replacements.candidates(attribute);
        if pool.is_empty() {
            return Err(Error::Eval(format!("attribute {attribute} has no replacement values")));
        }
        let chosen = match policy {
            ReplacementPolicy::ModeMedian => &pool[0],
            ReplacementPolicy::GreedyTopV { v } => {
                let tried = &pool[..(*v).min(pool.len())];
                let mut batch = ndarray::Array2::zeros((tried.len(), current.len()));
                for (ci, cand) in tried.iter().enumerate() {
                    let mut r = batch.row_mut(ci);
                    r.assign(&current);
                    for (offset, dim) in range.clone().enumerate() {
                        r[dim] = cand[offset];
                    }
                }
                let scores = score_rows(params, batch.view())?;
                let best = scores
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
                    .map(|(i, _)| i)
                    .unwrap();
                &tried[best]
            }
        };
        for (offset, dim) in range.enumerate() {
            current[dim] = chosen[offset];
        }
        let score = score_rows(params, current.view().insert_axis(Axis(0)))?[0];
        out.push(score / base);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aenn::LayerSpec;
    use crate::tabular::{encode, AttrKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_hit_rank_examples() {
        assert_eq!(first_hit_rank(&[3, 1, 2, 0], &[2]).unwrap(), 3);
        assert_eq!(first_hit_rank(&[3, 1, 2, 0], &[3]).unwrap(), 1);
        assert_eq!(first_hit_rank(&[3, 1, 2, 0], &[0, 1]).unwrap(), 2);
    }

    #[test]
    fn ranking_validation() {
        assert!(first_hit_rank(&[0, 0, 1], &[1]).is_err(), "duplicate");
        assert!(first_hit_rank(&[0, 1, 5], &[1]).is_err(), "out of range");
        assert!(first_hit_rank(&[0, 1, 2], &[]).is_err(), "empty relevant");
        assert!(first_hit_rank(&[0, 1, 2], &[3]).is_err(), "relevant out of range");
        assert!(first_hit_rank(&[0, 1, 2], &[1, 1]).is_err(), "relevant repeated");
    }

    #[test]
    fn mrr_small_example() {
        let rankings = vec![vec![2, 0, 1], vec![0, 1, 2]];
        let m = mrr(&rankings, &[2]).unwrap();
        assert!((m - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!(mrr(&[], &[0]).is_err());
    }

    #[test]
    fn hits_and_auc_examples() {
        let rankings = vec![vec![2, 0, 1], vec![0, 1, 2], vec![1, 2, 0]];
        // hit ranks for {2}: 1, 3, 2
        assert!((hits_at_n(&rankings, &[2], 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((hits_at_n(&rankings, &[2], 2).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((hits_at_n(&rankings, &[2], 3).unwrap() - 1.0).abs() < 1e-15);
        assert!(hits_at_n(&rankings, &[2], 0).is_err());
        assert!(hits_at_n(&rankings, &[2], 4).is_err());
        // auc = mean(T - r + 1) = mean(3, 1, 2) = 2
        assert!((hits_auc(&rankings, &[2]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn hits_auc_equals_summed_hits_curve() {
        // independent cross-check: sum Hits@n over n = 1..=T
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let t = 9;
        for _ in 0..50 {
            let mut rankings = Vec::new();
            for _ in 0..rng.random_range(1..6) {
                let mut r: Vec<usize> = (0..t).collect();
                use rand::seq::SliceRandom;
                r.shuffle(&mut rng);
                rankings.push(r);
            }
            let relevant: Vec<usize> = {
                let k = rng.random_range(1..4);
                rand::seq::index::sample(&mut rng, t, k).iter().collect()
            };
            let naive: f64 =
                (1..=t).map(|n| hits_at_n(&rankings, &relevant, n).unwrap()).sum();
            let direct = hits_auc(&rankings, &relevant).unwrap();
            assert!((naive - direct).abs() < 1e-9, "{naive} vs {direct}");
        }
    }

    #[test]
    fn hits_auc_bounds() {
        let t = 5;
        let always_first = vec![vec![4, 0, 1, 2, 3]; 3];
        assert_eq!(hits_auc(&always_first, &[4]).unwrap(), t as f64);
        let always_last = vec![vec![0, 1, 2, 3, 4]; 3];
        assert_eq!(hits_auc(&always_last, &[4]).unwrap(), 1.0);
    }

    #[test]
    fn stability_zero_for_identical_runs() {
        let rankings = vec![vec![2, 0, 1, 3]; 4];
        for n in 1..=4 {
            assert_eq!(stability_index(&rankings, n).unwrap(), 0.0);
        }
    }

    #[test]
    fn stability_worked_example() {
        // the run-1 leader sits at ranks 1, 2, 3 across runs
        let rankings = vec![vec![0, 1, 2], vec![1, 0, 2], vec![1, 2, 0]];
        let s1 = stability_index(&rankings, 1).unwrap();
        assert!((s1 - (2.0f64 / 3.0).sqrt()).abs() < 1e-12, "{s1}");
    }

    #[test]
    fn stability_two_run_example() {
        // attr 0: ranks 1 and 2 -> V = 0.25; attr 1: ranks 2 and 1 -> V = 0.25
        let rankings = vec![vec![0, 1, 2], vec![1, 0, 2]];
        assert!((stability_index(&rankings, 1).unwrap() - 0.5).abs() < 1e-12);
        assert!((stability_index(&rankings, 2).unwrap() - 0.5).abs() < 1e-12);
        // attr 2 agrees, diluting the mean variance
        let s3 = stability_index(&rankings, 3).unwrap();
        assert!((s3 - (0.5f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn stability_validation() {
        let rankings = vec![vec![0, 1, 2]];
        assert!(stability_index(&rankings, 1).is_err(), "one run");
        let rankings = vec![vec![0, 1, 2], vec![0, 1, 2]];
        assert!(stability_index(&rankings, 0).is_err());
        assert!(stability_index(&rankings, 4).is_err());
    }

    fn replacement_fixture() -> (RecordTable, EncodingMap, ndarray::Array2<f64>) {
        let names: Vec<String> = vec!["cat".into(), "num".into()];
        let raw: Vec<Vec<String>> = [
            ["b", "1"],
            ["a", "2"],
            ["b", "3"],
            ["c", "4"],
            ["a", "100"],
        ]
        .iter()
        .map(|r| r.iter().map(|s| s.to_string()).collect())
        .collect();
        let t = RecordTable::from_raw(&names, &raw, &[AttrKind::Categorical, AttrKind::Numerical])
            .unwrap();
        let (m, map) = encode(&t, false).unwrap();
        (t, map, m)
    }

    #[test]
    fn replacement_table_mode_and_median() {
        let (t, map, _) = replacement_fixture();
        let repl = ReplacementTable::build(&t, &map, 3).unwrap();
        // mode of {b:2, a:2, c:1} -> tie between a and b -> lexicographic a
        let mode = &repl.candidates(0)[0];
        let a_enc = encode_value(&t.schema[0], &Value::Token("a".into()), map.slice(0).len).unwrap();
        assert_eq!(mode, &a_enc);
        // median of {1,2,3,4,100} = 3 -> scaled (3-1)/99
        let median = &repl.candidates(1)[0];
        assert!((median[0] - 2.0 / 99.0).abs() < 1e-15);
        assert!(repl.candidates(0).len() <= 3);
    }

    #[test]
    fn replacement_table_even_median() {
        let names: Vec<String> = vec!["x".into()];
        let raw: Vec<Vec<String>> =
            [["1"], ["2"], ["4"], ["8"]].iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect();
        let t = RecordTable::from_raw(&names, &raw, &[AttrKind::Numerical]).unwrap();
        let (_, map) = encode(&t, false).unwrap();
        let repl = ReplacementTable::build(&t, &map, 1).unwrap();
        // median = (2 + 4) / 2 = 3 -> (3 - 1) / 7
        assert!((repl.candidates(0)[0][0] - 2.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn error_curve_starts_at_one_and_greedy_v1_matches_mode() {
        let (t, map, m) = replacement_fixture();
        let d = map.total_dims();
        let spec = LayerSpec::new(vec![d, 3, 2, 3, d], 0.4).unwrap();
        let params = crate::aenn::NetworkParams::init(&spec, 4).unwrap();
        let repl = ReplacementTable::build(&t, &map, 3).unwrap();
        let ranking = vec![1, 0];
        let mode = error_reduction_curve(
            &params,
            m.row(4),
            &map,
            &ranking,
            &repl,
            &ReplacementPolicy::ModeMedian,
            2,
        )
        .unwrap();
        assert_eq!(mode.len(), 3);
        assert_eq!(mode[0], 1.0);
        let greedy1 = error_reduction_curve(
            &params,
            m.row(4),
            &map,
            &ranking,
            &repl,
            &ReplacementPolicy::GreedyTopV { v: 1 },
            2,
        )
        .unwrap();
        assert_eq!(mode, greedy1);
        // a wider greedy budget can only do at least as well on the first step
        let greedy3 = error_reduction_curve(
            &params,
            m.row(4),
            &map,
            &ranking,
            &repl,
            &ReplacementPolicy::GreedyTopV { v: 3 },
            2,
        )
        .unwrap();
        assert!(greedy3[1] <= mode[1] + 1e-12);
    }

    #[test]
    fn error_curve_validation() {
        let (t, map, m) = replacement_fixture();
        let d = map.total_dims();
        let spec = LayerSpec::new(vec![d, 3, 2, 3, d], 0.4).unwrap();
        let params = crate::aenn::NetworkParams::init(&spec, 4).unwrap();
        let repl = ReplacementTable::build(&t, &map, 2).unwrap();
        let bad = error_reduction_curve(
            &params,
            m.row(0),
            &map,
            &[0, 0],
            &repl,
            &ReplacementPolicy::ModeMedian,
            2,
        );
        assert!(bad.is_err());
        let bad = error_reduction_curve(
            &params,
            m.row(0),
            &map,
            &[1, 0],
            &repl,
            &ReplacementPolicy::ModeMedian,
            3,
        );
        assert!(bad.is_err(), "n_max beyond T");
        let bad = error_reduction_curve(
            &params,
            m.row(0),
            &map,
            &[1, 0],
            &repl,
            &ReplacementPolicy::GreedyTopV { v: 0 },
            1,
        );
        assert!(bad.is_err());
    }
}
