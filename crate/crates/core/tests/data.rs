//! Dataset storage, graph construction, splits and batching.

use std::fs;
use std::path::{Path, PathBuf};

use nodeformer::data::{
    knn_graph, load_dataset, minibatch_partition, random_split, save_dataset, two_cluster, Labels,
    Metric, SplitTag, TwoClusterConfig,
};
use nodeformer::Tensor;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn copy_dir(from: &Path, to: &Path) {
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), to.join(entry.file_name())).unwrap();
    }
}

fn count(tags: &[SplitTag], tag: SplitTag) -> usize {
    tags.iter().filter(|&&t| t == tag).count()
}

#[test]
fn tiny_fixture_loads() {
    let g = load_dataset(fixture("tiny")).unwrap();
    assert_eq!(g.nodes(), 3);
    assert_eq!(g.feature_dim(), 2);
    assert_eq!(g.edges.len(), 4);
    assert_eq!(g.labels, Labels::Single(vec![0, 1, 1]));
    assert_eq!(
        g.split,
        vec![SplitTag::Train, SplitTag::Valid, SplitTag::Test]
    );
}

#[test]
fn save_then_load_round_trips() {
    let g = load_dataset(fixture("toy")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&g, dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), g);
}

#[test]
fn out_of_range_edge_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&fixture("tiny"), dir.path());
    fs::write(dir.path().join("edges.csv"), "src,dst\n0,1\n1,3\n").unwrap();
    let msg = load_dataset(dir.path()).unwrap_err().to_string();
    assert!(msg.contains("edges.csv:3"), "{msg}");
}

#[test]
fn ragged_feature_row_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&fixture("tiny"), dir.path());
    fs::write(
        dir.path().join("features.csv"),
        "node,f0,f1\n0,1,2\n1,3\n2,4,5\n",
    )
    .unwrap();
    let msg = load_dataset(dir.path()).unwrap_err().to_string();
    assert!(msg.contains("features.csv:3"), "{msg}");
}

#[test]
fn missing_splits_tag_every_node_none() {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&fixture("tiny"), dir.path());
    fs::remove_file(dir.path().join("splits.csv")).unwrap();
    let g = load_dataset(dir.path()).unwrap();
    assert_eq!(g.split, vec![SplitTag::None; 3]);
}

#[test]
fn knn_examples() {
    let line = Tensor::column(vec![0.0, 1.0, 10.0]);
    let edges = knn_graph(&line, 1, Metric::Euclidean).unwrap();
    assert!(edges.contains(&(0, 1)) && edges.contains(&(2, 1)));
    assert!(!edges.contains(&(0, 2)) && !edges.contains(&(2, 0)));

    let dupes = Tensor::column(vec![5.0, 0.0, 0.0, 0.0]);
    let edges = knn_graph(&dupes, 1, Metric::Euclidean).unwrap();
    assert!(edges.contains(&(0, 1)), "tie at the lowest index");
    assert!(edges.contains(&(2, 1)) && edges.contains(&(3, 1)));

    let x = Tensor::from_rows(&[
        vec![0.0, 1.0],
        vec![3.0, 2.0],
        vec![-1.0, 4.0],
        vec![2.0, 2.0],
    ])
    .unwrap();
    let mut edges = knn_graph(&x, 3, Metric::Euclidean).unwrap();
    edges.sort();
    let complete: Vec<(usize, usize)> = (0..4)
        .flat_map(|u| (0..4).filter(move |&v| v != u).map(move |v| (u, v)))
        .collect();
    assert_eq!(edges, complete);
    assert!(knn_graph(&x, 4, Metric::Euclidean).is_err());
}

#[test]
fn split_sizes_and_determinism() {
    let tags = random_split(100, (0.5, 0.25, 0.25), 3).unwrap();
    assert_eq!(
        (
            count(&tags, SplitTag::Train),
            count(&tags, SplitTag::Valid),
            count(&tags, SplitTag::Test)
        ),
        (50, 25, 25)
    );
    assert_eq!(tags, random_split(100, (0.5, 0.25, 0.25), 3).unwrap());
    let tags = random_split(4, (0.5, 0.25, 0.25), 0).unwrap();
    assert_eq!(
        (
            count(&tags, SplitTag::Train),
            count(&tags, SplitTag::Valid),
            count(&tags, SplitTag::Test)
        ),
        (2, 1, 1)
    );
}

#[test]
fn batches_partition_the_nodes() {
    let plan = minibatch_partition(10, 4, 1).unwrap();
    let sizes: Vec<usize> = plan.batches.iter().map(Vec::len).collect();
    assert_eq!(sizes, vec![4, 4, 2]);
    let mut all: Vec<usize> = plan.batches.concat();
    all.sort();
    assert_eq!(all, (0..10).collect::<Vec<_>>());
    assert_eq!(plan, minibatch_partition(10, 4, 1).unwrap());
    assert_eq!(minibatch_partition(10, 10, 1).unwrap().batches.len(), 1);
    assert_eq!(minibatch_partition(10, 64, 1).unwrap().batches.len(), 1);
}

/// Full-batch gradient descent on the logistic loss over the train nodes.
fn logistic_regression_accuracy(x: &Tensor, y: &[usize], train: &[usize], test: &[usize]) -> f64 {
    let d = x.cols();
    let mut w = vec![0.0; d + 1];
    for _ in 0..500 {
        let mut grad = vec![0.0; d + 1];
        for &i in train {
            let z = w[d] + x.row(i).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let err = 1.0 / (1.0 + (-z).exp()) - y[i] as f64;
            for j in 0..d {
                grad[j] += err * x.get(i, j);
            }
            grad[d] += err;
        }
        for (wj, gj) in w.iter_mut().zip(&grad) {
            *wj -= 0.5 * gj / train.len() as f64;
        }
    }
    let hits = test
        .iter()
        .filter(|&&i| {
            let z = w[d] + x.row(i).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            usize::from(z > 0.0) == y[i]
        })
        .count();
    hits as f64 / test.len() as f64
}

#[test]
fn two_cluster_is_linearly_separable() {
    for seed in 0..5 {
        let g = two_cluster(&TwoClusterConfig::default(), seed).unwrap();
        let Labels::Single(y) = &g.labels else {
            panic!("two-cluster labels are single-class")
        };
        let acc = logistic_regression_accuracy(
            &g.features,
            y,
            &g.indices(SplitTag::Train),
            &g.indices(SplitTag::Test),
        );
        assert!(
            acc >= 0.98,
            "seed {seed}: logistic regression accuracy {acc}"
        );
        for &(u, v) in &g.edges {
            assert_eq!(y[u], y[v], "inter-cluster edge");
        }
    }
}
