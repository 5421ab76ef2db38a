use super::*;
use crate::geo::{BoundingBox, GridCellId, GridSpec};
use proptest::prelude::*;
use rand::Rng;

fn dataset(p: usize, x: Vec<f64>, targets: Vec<u32>) -> Dataset {
    let n = targets.len();
    Dataset {
        feature_names: (0..p).map(|i| format!("f{i}")).collect(),
        x,
        targets,
        cells: vec![GridCellId { row: 0, col: 0 }; n],
        grid: GridSpec::new(BoundingBox::federal_district(), 1, 1).unwrap(),
    }
}

fn stump(task: Task, p: usize) -> ForestParams {
    ForestParams { n_trees: 1, max_depth: Some(1), mtry: Some(p), task, bootstrap: false, ..Default::default() }
}

/// Exhaustive depth-1 search computed straight from the definitions:
/// population variance or Gini of each side, every feature, every midpoint.
fn brute_force_split(p: usize, x: &[f64], y: &[u32], task: Task) -> Option<(usize, f64, f64)> {
    let n = y.len();
    let impurity = |ids: &[usize]| -> f64 {
        let m = ids.len() as f64;
        match task {
            Task::Regression => {
                let mean = ids.iter().map(|&i| f64::from(y[i])).sum::<f64>() / m;
                ids.iter().map(|&i| (f64::from(y[i]) - mean).powi(2)).sum::<f64>() / m
            }
            Task::Classification => {
                let mut labels: Vec<u32> = ids.iter().map(|&i| y[i]).collect();
                labels.sort_unstable();
                let mut g = 1.0;
                for chunk in labels.chunk_by(|a, b| a == b) {
                    g -= (chunk.len() as f64 / m).powi(2);
                }
                g
            }
        }
    };
    let all: Vec<usize> = (0..n).collect();
    let parent = impurity(&all);
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..p {
        let mut vals: Vec<f64> = (0..n).map(|i| x[i * p + f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let thr = (w[0] + w[1]) / 2.0;
            let (l, r): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| x[i * p + f] <= thr);
            let dec = parent - (l.len() as f64 * impurity(&l) + r.len() as f64 * impurity(&r)) / n as f64;
            if dec > 1e-12 && best.is_none_or(|b| dec > b.2 + 1e-12) {
                best = Some((f, thr, dec));
            }
        }
    }
    best
}

fn root_split(t: &Tree) -> Option<(usize, f64, f64)> {
    match t.root() {
        TreeNode::Split { feature, threshold, impurity_decrease, .. } => Some((*feature, *threshold, *impurity_decrease)),
        TreeNode::Leaf { .. } => None,
    }
}

#[test]
fn identical_targets_make_one_leaf() {
    let d = dataset(2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0], vec![7, 7, 7]);
    for task in [Task::Regression, Task::Classification] {
        let t = train_tree(Samples::new(&d.x, 2, &d.targets), &ForestParams::for_task(task), &mut tree_rng(1, 0)).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.leaf(&[0.0, 0.0]).majority().unwrap_or(7), 7);
        if task == Task::Regression {
            assert_eq!(t.leaf(&[0.0, 0.0]), &LeafValue::Mean(7.0));
        }
    }
}

#[test]
fn four_point_stump_splits_at_one_and_a_half() {
    let d = dataset(1, vec![0.0, 1.0, 2.0, 3.0], vec![0, 0, 10, 10]);
    let t = train_tree(Samples::new(&d.x, 1, &d.targets), &stump(Task::Regression, 1), &mut tree_rng(0, 0)).unwrap();
    let (f, thr, dec) = root_split(&t).unwrap();
    assert_eq!((f, thr), (0, 1.5));
    // Variance 25 falls to 0.
    assert_eq!(dec, 25.0);
    assert_eq!(t.leaf(&[0.5]), &LeafValue::Mean(0.0));
    assert_eq!(t.leaf(&[2.5]), &LeafValue::Mean(10.0));
}

#[test]
fn empty_dataset_is_an_error() {
    let d = dataset(2, vec![], vec![]);
    assert!(matches!(train_forest(&d, &ForestParams::default()), Err(Error::EmptyDataset)));
    assert!(matches!(
        train_tree(Samples::new(&d.x, 2, &d.targets), &ForestParams::default(), &mut tree_rng(0, 0)),
        Err(Error::EmptyDataset)
    ));
}

#[test]
fn invalid_params_are_rejected() {
    let d = dataset(2, vec![0.0, 1.0, 1.0, 0.0], vec![1, 2]);
    for p in [
        ForestParams { n_trees: 0, ..Default::default() },
        ForestParams { min_samples_split: 1, ..Default::default() },
        ForestParams { mtry: Some(3), ..Default::default() },
        ForestParams { max_depth: Some(0), ..Default::default() },
    ] {
        assert!(matches!(train_forest(&d, &p), Err(Error::InvalidParams(_))), "{p:?}");
    }
}

#[test]
fn mtry_defaults() {
    assert_eq!(ForestParams::for_task(Task::Regression).resolved_mtry(13), 13);
    assert_eq!(ForestParams::for_task(Task::Classification).resolved_mtry(13), 4);
    assert_eq!(ForestParams::for_task(Task::Classification).resolved_mtry(1), 1);
}

#[test]
fn depth_one_matches_brute_force() {
    let mut rng = tree_rng(2024, 0);
    for task in [Task::Regression, Task::Classification] {
        for case in 0..50 {
            let n = rng.random_range(2..=50);
            // Coarse feature grids produce repeated values; continuous-ish
            // regression targets avoid exact decrease ties.
            let x: Vec<f64> = (0..n * 2).map(|_| f64::from(rng.random_range(0..12)) * 0.25).collect();
            let y: Vec<u32> = match task {
                Task::Regression => (0..n).map(|_| rng.random_range(0..10_000)).collect(),
                Task::Classification => (0..n).map(|_| rng.random_range(0..4)).collect(),
            };
            let d = dataset(2, x.clone(), y.clone());
            let t = train_tree(Samples::new(&d.x, 2, &d.targets), &stump(task, 2), &mut tree_rng(0, case)).unwrap();
            let want = brute_force_split(2, &x, &y, task);
            match (root_split(&t), want) {
                (None, None) => {}
                (Some((f, thr, dec)), Some((wf, wthr, wdec))) => {
                    assert!((dec - wdec).abs() <= 1e-9 * wdec.max(1.0), "{task:?} case {case}: {dec} vs {wdec}");
                    assert_eq!((f, thr), (wf, wthr), "{task:?} case {case}");
                }
                (got, want) => panic!("{task:?} case {case}: {got:?} vs {want:?}"),
            }
        }
    }
}

#[test]
fn single_unbootstrapped_tree_equals_train_tree() {
    let mut rng = tree_rng(5, 5);
    let x: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
    let y: Vec<u32> = (0..50).map(|i| (x[i * 4] * 10.0) as u32).collect();
    let d = dataset(4, x, y);
    let params = ForestParams { n_trees: 1, bootstrap: false, seed: 99, ..Default::default() };
    let f = train_forest(&d, &params).unwrap();
    let t = train_tree(Samples::new(&d.x, 4, &d.targets), &params, &mut tree_rng(99, 0)).unwrap();
    assert_eq!(f.trees[0], t);
}

fn noisy_dataset(seed: u64, n: usize) -> Dataset {
    let mut rng = tree_rng(seed, 1);
    let mut x = Vec::with_capacity(n * 3);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = rng.random_range(0.0..1.0);
        let b: f64 = rng.random_range(0.0..1.0);
        let noise: f64 = rng.random_range(0.0..1.0);
        x.extend([a, b, noise]);
        y.push(if a < 0.3 { 4 } else if b < 0.5 { 9 } else { 1 });
    }
    dataset(3, x, y)
}

#[test]
fn same_seed_same_bytes_and_exec_independent() {
    let d = noisy_dataset(1, 300);
    for task in [Task::Regression, Task::Classification] {
        let params = ForestParams { n_trees: 20, task, seed: 7, ..Default::default() };
        let a = train_forest_with(&d, &params, Exec::Sequential).unwrap();
        let b = train_forest_with(&d, &params, Exec::Parallel).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        let other = train_forest(&d, &ForestParams { seed: 8, ..params }).unwrap();
        assert_ne!(a.digest().unwrap(), other.digest().unwrap());
    }
}

#[test]
fn json_round_trip_and_schema_check() {
    let d = noisy_dataset(2, 100);
    let f = train_forest(&d, &ForestParams { n_trees: 3, ..Default::default() }).unwrap();
    let bytes = f.to_json().unwrap();
    assert_eq!(Forest::from_json(&bytes).unwrap(), f);
    let mut g = f.clone();
    g.schema = "other".into();
    assert!(Forest::from_json(&g.to_json().unwrap()).is_err());
}

// Independent recursive walker over the serialized JSON form.
fn walk_json(nodes: &[serde_json::Value], at: usize, row: &[f64]) -> serde_json::Value {
    let node = &nodes[at];
    if node["node"] == "leaf" {
        return node["value"].clone();
    }
    let f = node["feature"].as_u64().unwrap() as usize;
    let thr = node["threshold"].as_f64().unwrap();
    let next = if row[f] <= thr { &node["left"] } else { &node["right"] };
    walk_json(nodes, next.as_u64().unwrap() as usize, row)
}

#[test]
fn predictions_match_independent_traversal() {
    let d = noisy_dataset(3, 400);
    let mut rng = tree_rng(3, 3);
    let rows: Vec<Vec<f64>> = (0..100).map(|_| (0..3).map(|_| rng.random_range(-0.1..1.1)).collect()).collect();
    for task in [Task::Regression, Task::Classification] {
        let f = train_forest(&d, &ForestParams { n_trees: 15, task, ..Default::default() }).unwrap();
        let json: serde_json::Value = serde_json::from_slice(&f.to_json().unwrap()).unwrap();
        for row in &rows {
            let leaves: Vec<serde_json::Value> = json["trees"]
                .as_array()
                .unwrap()
                .iter()
                .map(|t| walk_json(t["nodes"].as_array().unwrap(), 0, row))
                .collect();
            match (task, f.predict(row)) {
                (Task::Regression, Prediction::Value(v)) => {
                    let mean = leaves.iter().map(|l| l["mean"].as_f64().unwrap()).sum::<f64>() / leaves.len() as f64;
                    assert!((v - mean).abs() < 1e-12);
                }
                (Task::Classification, Prediction::Label(l)) => {
                    let mut tally = std::collections::BTreeMap::<u64, usize>::new();
                    for leaf in &leaves {
                        let h = leaf["histogram"].as_array().unwrap();
                        let top = h.iter().map(|e| e[1].as_u64().unwrap()).max().unwrap();
                        let label = h.iter().find(|e| e[1].as_u64().unwrap() == top).unwrap()[0].as_u64().unwrap();
                        *tally.entry(label).or_default() += 1;
                    }
                    let top = tally.values().max().unwrap();
                    let want = tally.iter().find(|(_, c)| *c == top).unwrap().0;
                    assert_eq!(u64::from(l), *want);
                }
                other => panic!("{other:?}"),
            }
        }
    }
}

fn leaf_forest(task: Task, leaves: Vec<LeafValue>) -> Forest {
    Forest {
        schema: FOREST_SCHEMA.into(),
        params: ForestParams { n_trees: leaves.len(), task, ..Default::default() },
        feature_names: vec!["f0".into()],
        classes: vec![],
        n_train: 1,
        trees: leaves.into_iter().map(|v| Tree { nodes: vec![TreeNode::Leaf { n_samples: 1, value: v }] }).collect(),
    }
}

#[test]
fn constant_trees_and_vote_ties() {
    let f = leaf_forest(Task::Regression, vec![LeafValue::Mean(3.5); 4]);
    assert_eq!(f.predict(&[0.0]), Prediction::Value(3.5));
    let votes = |ls: &[u32]| ls.iter().map(|&l| LeafValue::Histogram(vec![(l, 1)])).collect::<Vec<_>>();
    assert_eq!(leaf_forest(Task::Classification, votes(&[2, 2, 5])).predict(&[0.0]), Prediction::Label(2));
    assert_eq!(leaf_forest(Task::Classification, votes(&[5, 2, 5, 2])).predict(&[0.0]), Prediction::Label(2));
    assert!(matches!(mdi_importance(&f), Err(Error::NoSplits)));
}

#[test]
fn regression_leaves_hold_training_means() {
    let d = noisy_dataset(4, 120);
    let params = ForestParams { n_trees: 1, bootstrap: false, max_depth: Some(3), ..Default::default() };
    let f = train_forest(&d, &params).unwrap();
    let t = &f.trees[0];
    // Group training rows by the leaf they reach and compare with its mean.
    let mut groups = std::collections::HashMap::<usize, Vec<u32>>::new();
    for i in 0..d.len() {
        let leaf_ptr = t.leaf(d.row(i)) as *const LeafValue as usize;
        groups.entry(leaf_ptr).or_default().push(d.targets[i]);
    }
    for node in &t.nodes {
        if let TreeNode::Leaf { value: value @ LeafValue::Mean(m), n_samples } = node {
            let ys = &groups[&(value as *const LeafValue as usize)];
            assert_eq!(ys.len(), *n_samples);
            let mean = ys.iter().map(|&y| f64::from(y)).sum::<f64>() / ys.len() as f64;
            assert!((mean - m).abs() < 1e-12);
        }
    }
    assert!(t.depth() <= 3);
}

#[test]
fn classification_leaves_keep_histograms() {
    let d = noisy_dataset(6, 200);
    let params = ForestParams { n_trees: 1, bootstrap: false, max_depth: Some(1), task: Task::Classification, ..Default::default() };
    let f = train_forest(&d, &params).unwrap();
    let total: u32 = f.trees[0]
        .nodes
        .iter()
        .filter_map(|n| match n {
            TreeNode::Leaf { value: LeafValue::Histogram(h), .. } => Some(h.iter().map(|e| e.1).sum::<u32>()),
            _ => None,
        })
        .sum();
    assert_eq!(total as usize, d.len());
    assert_eq!(f.classes, vec![1, 4, 9]);
}

#[test]
fn single_informative_feature_takes_all_importance() {
    let mut rng = tree_rng(10, 0);
    let n = 400;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for _ in 0..n {
        let signal: f64 = rng.random_range(0.0..1.0);
        x.push(signal);
        x.extend((0..3).map(|_| rng.random_range(0.0..1.0f64)));
        y.push((signal * 5.0).floor() as u32 * 10);
    }
    let d = dataset(4, x, y);
    // With all features considered at each split, the noise columns can
    // never beat a split on the signal.
    let f = train_forest(&d, &ForestParams { n_trees: 10, mtry: Some(4), ..Default::default() }).unwrap();
    let imp = mdi_importance(&f).unwrap();
    assert!(imp.importances[0] > 0.999, "{:?}", imp.importances);
    assert_eq!(imp.ranking[0], "f0");
    assert!((imp.importances.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn importances_sum_to_one_default_mtry() {
    let d = noisy_dataset(7, 300);
    for task in [Task::Regression, Task::Classification] {
        let f = train_forest(&d, &ForestParams { n_trees: 25, task, ..Default::default() }).unwrap();
        let imp = mdi_importance(&f).unwrap();
        assert!((imp.importances.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(imp.importances.iter().all(|&v| v >= 0.0));
        assert_eq!(imp.ranking.len(), 3);
        assert_eq!(imp.ranking[2], "f2", "noise column should rank last: {:?}", imp.importances);
    }
}

fn leaf_partition(t: &Tree, d: &Dataset) -> Vec<Vec<usize>> {
    let mut groups = std::collections::BTreeMap::<usize, Vec<usize>>::new();
    for i in 0..d.len() {
        let ptr = t.leaf(d.row(i)) as *const LeafValue as usize;
        let leaf_id = t.nodes.iter().position(|n| matches!(n, TreeNode::Leaf { value, .. } if std::ptr::eq(value, ptr as *const LeafValue))).unwrap();
        groups.entry(leaf_id).or_default().push(i);
    }
    groups.into_values().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn monotone_transform_keeps_partition(seed in 0u64..1000, feature in 0usize..3, task_bit: bool) {
        let task = if task_bit { Task::Classification } else { Task::Regression };
        let d = noisy_dataset(seed, 80);
        let mut t = d.clone();
        for r in 0..t.len() {
            let v = &mut t.x[r * 3 + feature];
            *v = (*v * 3.0).exp() - 7.0;
        }
        // Without resampling every row is a training row, so each one sits
        // on a definite side of every midpoint in both spaces.
        let params = ForestParams { n_trees: 4, task, seed, bootstrap: false, ..Default::default() };
        let fa = train_forest(&d, &params).unwrap();
        let fb = train_forest(&t, &params).unwrap();
        for (ta, tb) in fa.trees.iter().zip(&fb.trees) {
            prop_assert_eq!(ta.nodes.len(), tb.nodes.len());
            prop_assert_eq!(leaf_partition(ta, &d), leaf_partition(tb, &t));
        }
        for r in 0..d.len() {
            prop_assert_eq!(fa.predict(d.row(r)), fb.predict(t.row(r)));
        }
    }

    #[test]
    fn deterministic_for_any_seed(seed: u64) {
        let d = noisy_dataset(seed % 17, 60);
        let params = ForestParams { n_trees: 3, seed, ..Default::default() };
        prop_assert_eq!(train_forest(&d, &params).unwrap(), train_forest(&d, &params).unwrap());
    }
}
