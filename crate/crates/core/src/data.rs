//! Attributed graphs: CSV storage, k-NN construction, splits, mini-batches
//! and synthetic generators.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    /// One class id per node.
    Single(Vec<usize>),
    /// `N x T` matrix of 0/1 targets.
    Multi(Tensor),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Single(v) => v.len(),
            Labels::Multi(t) => t.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, nodes: &[usize]) -> Result<Labels> {
        Ok(match self {
            Labels::Single(v) => Labels::Single(nodes.iter().map(|&i| v[i]).collect()),
            Labels::Multi(t) => Labels::Multi(t.gather_rows(nodes)?),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Train,
    Valid,
    Test,
    None,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Valid => "valid",
            SplitTag::Test => "test",
            SplitTag::None => "none",
        }
    }
}

impl std::str::FromStr for SplitTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "valid" => Ok(SplitTag::Valid),
            "test" => Ok(SplitTag::Test),
            "none" => Ok(SplitTag::None),
            _ => Err(Error::invalid(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub features: Tensor,
    /// Directed arcs `(src, dst)`; an undirected graph stores both directions.
    pub edges: Vec<(usize, usize)>,
    pub labels: Labels,
    /// Class count, or task count for multi-label graphs.
    pub num_classes: usize,
    pub split: Vec<SplitTag>,
    pub undirected: bool,
}

impl Graph {
    /// Validates the invariants and, for undirected graphs, symmetrizes and
    /// deduplicates the edges.
    pub fn new(
        features: Tensor,
        edges: Vec<(usize, usize)>,
        labels: Labels,
        num_classes: usize,
        split: Vec<SplitTag>,
        undirected: bool,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || split.len() != n {
            return Err(Error::invalid(format!(
                "{n} feature rows, {} labels, {} split tags",
                labels.len(),
                split.len()
            )));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("node features".into()));
        }
        for &(u, v) in &edges {
            if u >= n || v >= n {
                return Err(Error::NodeOutOfRange { index: u.max(v), n });
            }
        }
        match &labels {
            Labels::Single(v) => {
                if let Some(&bad) = v.iter().find(|&&c| c >= num_classes) {
                    return Err(Error::invalid(format!(
                        "label {bad} out of range for {num_classes} classes"
                    )));
                }
            }
            Labels::Multi(t) => {
                if t.cols() != num_classes {
                    return Err(Error::invalid(format!(
                        "{} label columns but num_classes = {num_classes}",
                        t.cols()
                    )));
                }
            }
        }
        let edges = if undirected {
            symmetrize(&edges)
        } else {
            edges
        };
        Ok(Graph {
            features,
            edges,
            labels,
            num_classes,
            split,
            undirected,
        })
    }

    pub fn nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn indices(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.nodes())
            .filter(|&i| self.split[i] == tag)
            .collect()
    }

    /// Fraction of edges joining same-label nodes (single-label graphs).
    pub fn edge_homophily(&self) -> Option<f64> {
        let Labels::Single(y) = &self.labels else {
            return None;
        };
        if self.edges.is_empty() {
            return None;
        }
        let same = self.edges.iter().filter(|&&(u, v)| y[u] == y[v]).count();
        Some(same as f64 / self.edges.len() as f64)
    }
}

/// Both directions of every edge, sorted and deduplicated.
pub fn symmetrize(edges: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = edges.iter().flat_map(|&(u, v)| [(u, v), (v, u)]).collect();
    out.sort_unstable();
    out.dedup();
    out
}

struct Csv {
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

fn read_csv(path: &Path) -> Result<Csv> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = rdr.records();
    let header = match records.next() {
        Some(Ok(r)) => r.iter().map(str::to_string).collect(),
        Some(Err(e)) => return Err(parse_err(1, e.to_string())),
        None => return Err(parse_err(1, "missing header row".into())),
    };
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(Csv { header, rows })
}

fn expect_header(path: &Path, header: &[String], expected: &[String]) -> Result<()> {
    if header != expected {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!(
                "expected header `{}`, got `{}`",
                expected.join(","),
                header.join(",")
            ),
        });
    }
    Ok(())
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, raw: &str, what: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("cannot parse {what} from `{raw}`"),
    })
}

fn check_width(path: &Path, line: usize, row: &[String], width: usize) -> Result<()> {
    if row.len() != width {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("expected {width} fields, got {}", row.len()),
        });
    }
    Ok(())
}

fn check_node(path: &Path, line: usize, node: usize, expected: usize) -> Result<()> {
    if node != expected {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("expected node {expected}, got {node} (rows must be in index order)"),
        });
    }
    Ok(())
}

/// Reads `features.csv`, `edges.csv`, `labels.csv` and the optional
/// `splits.csv` and `meta.csv` from `dir`.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Graph> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::invalid(format!(
            "dataset directory {} not found",
            dir.display()
        )));
    }

    let mut undirected = true;
    let mut num_classes: Option<usize> = None;
    let meta_path = dir.join("meta.csv");
    if meta_path.exists() {
        let meta = read_csv(&meta_path)?;
        expect_header(&meta_path, &meta.header, &["key".into(), "value".into()])?;
        for (line, row) in &meta.rows {
            check_width(&meta_path, *line, row, 2)?;
            match row[0].as_str() {
                "undirected" => {
                    undirected = match row[1].as_str() {
                        "1" => true,
                        "0" => false,
                        other => {
                            return Err(Error::Parse {
                                path: meta_path.clone(),
                                line: *line,
                                msg: format!("undirected must be 0 or 1, got `{other}`"),
                            })
                        }
                    }
                }
                "num_classes" => {
                    num_classes = Some(field(&meta_path, *line, &row[1], "num_classes")?)
                }
                other => {
                    return Err(Error::Parse {
                        path: meta_path.clone(),
                        line: *line,
                        msg: format!("unknown meta key `{other}`"),
                    })
                }
            }
        }
    }

    let fpath = dir.join("features.csv");
    let fcsv = read_csv(&fpath)?;
    let d = fcsv.header.len().saturating_sub(1);
    let expected: Vec<String> = std::iter::once("node".to_string())
        .chain((0..d).map(|i| format!("f{i}")))
        .collect();
    expect_header(&fpath, &fcsv.header, &expected)?;
    let n = fcsv.rows.len();
    let mut data = Vec::with_capacity(n * d);
    for (i, (line, row)) in fcsv.rows.iter().enumerate() {
        check_width(&fpath, *line, row, d + 1)?;
        check_node(
            &fpath,
            *line,
            field(&fpath, *line, &row[0], "node index")?,
            i,
        )?;
        for raw in &row[1..] {
            let v: f64 = field(&fpath, *line, raw, "feature")?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: fpath.clone(),
                    line: *line,
                    msg: format!("non-finite feature `{raw}`"),
                });
            }
            data.push(v);
        }
    }
    let features = Tensor::from_vec(n, d, data)?;

    let epath = dir.join("edges.csv");
    let ecsv = read_csv(&epath)?;
    expect_header(&epath, &ecsv.header, &["src".into(), "dst".into()])?;
    let mut edges = Vec::with_capacity(ecsv.rows.len());
    for (line, row) in &ecsv.rows {
        check_width(&epath, *line, row, 2)?;
        let u: usize = field(&epath, *line, &row[0], "src")?;
        let v: usize = field(&epath, *line, &row[1], "dst")?;
        if u >= n || v >= n {
            return Err(Error::Parse {
                path: epath.clone(),
                line: *line,
                msg: format!("edge ({u}, {v}) references a node outside 0..{n}"),
            });
        }
        edges.push((u, v));
    }

    let lpath = dir.join("labels.csv");
    let lcsv = read_csv(&lpath)?;
    if lcsv.rows.len() != n {
        return Err(Error::Parse {
            path: lpath.clone(),
            line: lcsv.rows.last().map_or(1, |r| r.0),
            msg: format!("{} label rows for {n} nodes", lcsv.rows.len()),
        });
    }
    let labels = if lcsv.header == ["node", "label"] {
        let mut y = Vec::with_capacity(n);
        for (i, (line, row)) in lcsv.rows.iter().enumerate() {
            check_width(&lpath, *line, row, 2)?;
            check_node(
                &lpath,
                *line,
                field(&lpath, *line, &row[0], "node index")?,
                i,
            )?;
            y.push(field(&lpath, *line, &row[1], "label")?);
        }
        Labels::Single(y)
    } else {
        let t = lcsv.header.len().saturating_sub(1);
        let expected: Vec<String> = std::iter::once("node".to_string())
            .chain((0..t).map(|i| format!("l{i}")))
            .collect();
        if t == 0 || lcsv.header != expected {
            return Err(Error::Parse {
                path: lpath.clone(),
                line: 1,
                msg: format!(
                    "expected header `node,label` or `node,l0,...`, got `{}`",
                    lcsv.header.join(",")
                ),
            });
        }
        let mut data = Vec::with_capacity(n * t);
        for (i, (line, row)) in lcsv.rows.iter().enumerate() {
            check_width(&lpath, *line, row, t + 1)?;
            check_node(
                &lpath,
                *line,
                field(&lpath, *line, &row[0], "node index")?,
                i,
            )?;
            for raw in &row[1..] {
                let b: u8 = field(&lpath, *line, raw, "0/1 label")?;
                if b > 1 {
                    return Err(Error::Parse {
                        path: lpath.clone(),
                        line: *line,
                        msg: format!("multi-label entries must be 0 or 1, got {b}"),
                    });
                }
                data.push(b as f64);
            }
        }
        Labels::Multi(Tensor::from_vec(n, t, data)?)
    };
    let num_classes = match (&labels, num_classes) {
        (_, Some(c)) => c,
        (Labels::Single(y), None) => y.iter().max().map_or(0, |m| m + 1),
        (Labels::Multi(t), None) => t.cols(),
    };

    let spath = dir.join("splits.csv");
    let mut split = vec![SplitTag::None; n];
    if spath.exists() {
        let scsv = read_csv(&spath)?;
        expect_header(&spath, &scsv.header, &["node".into(), "split".into()])?;
        for (line, row) in &scsv.rows {
            check_width(&spath, *line, row, 2)?;
            let node: usize = field(&spath, *line, &row[0], "node index")?;
            if node >= n {
                return Err(Error::Parse {
                    path: spath.clone(),
                    line: *line,
                    msg: format!("node {node} outside 0..{n}"),
                });
            }
            split[node] = field(&spath, *line, &row[1], "split tag")?;
        }
    }

    Graph::new(features, edges, labels, num_classes, split, undirected).map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::Parse {
            path: lpath,
            line: 0,
            msg,
        },
        other => other,
    })
}

/// Writes `graph` in the format read by [`load_dataset`]. Floats use the
/// shortest representation that parses back to the same value.
pub fn save_dataset(graph: &Graph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(p, e))
    };

    let d = graph.feature_dim();
    let mut s = String::from("node");
    for i in 0..d {
        s.push_str(&format!(",f{i}"));
    }
    s.push('\n');
    for i in 0..graph.nodes() {
        s.push_str(&i.to_string());
        for v in graph.features.row(i) {
            s.push(',');
            s.push_str(&v.to_string());
        }
        s.push('\n');
    }
    write("features.csv", s)?;

    let mut s = String::from("src,dst\n");
    for (u, v) in &graph.edges {
        s.push_str(&format!("{u},{v}\n"));
    }
    write("edges.csv", s)?;

    let s = match &graph.labels {
        Labels::Single(y) => {
            let mut s = String::from("node,label\n");
            for (i, c) in y.iter().enumerate() {
                s.push_str(&format!("{i},{c}\n"));
            }
            s
        }
        Labels::Multi(t) => {
            let mut s = String::from("node");
            for j in 0..t.cols() {
                s.push_str(&format!(",l{j}"));
            }
            s.push('\n');
            for i in 0..t.rows() {
                s.push_str(&i.to_string());
                for v in t.row(i) {
                    s.push_str(if *v > 0.5 { ",1" } else { ",0" });
                }
                s.push('\n');
            }
            s
        }
    };
    write("labels.csv", s)?;

    if graph.split.iter().any(|&t| t != SplitTag::None) {
        let mut s = String::from("node,split\n");
        for (i, t) in graph.split.iter().enumerate() {
            if *t != SplitTag::None {
                s.push_str(&format!("{i},{}\n", t.as_str()));
            }
        }
        write("splits.csv", s)?;
    }

    write(
        "meta.csv",
        format!(
            "key,value\nundirected,{}\nnum_classes,{}\n",
            u8::from(graph.undirected),
            graph.num_classes
        ),
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

/// Symmetrized k-nearest-neighbor graph, excluding self. Ties are broken by
/// the lower node index.
pub fn knn_graph(x: &Tensor, k: usize, metric: Metric) -> Result<Vec<(usize, usize)>> {
    let n = x.rows();
    if k >= n {
        return Err(Error::invalid(format!(
            "k = {k} must be smaller than N = {n}"
        )));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let norms: Vec<f64> = (0..n)
        .map(|i| x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut edges = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for u in 0..n {
        cand.clear();
        for v in (0..n).filter(|&v| v != u) {
            let dist = match metric {
                Metric::Euclidean => x
                    .row(u)
                    .iter()
                    .zip(x.row(v))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>(),
                Metric::Cosine => {
                    let denom = norms[u] * norms[v];
                    let sim = if denom > 0.0 {
                        crate::tensor::dot(x.row(u), x.row(v)) / denom
                    } else {
                        0.0
                    };
                    1.0 - sim
                }
            };
            cand.push((dist, v));
        }
        cand.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        edges.extend(cand[..k].iter().map(|&(_, v)| (u, v)));
    }
    Ok(symmetrize(&edges))
}

/// Seeded permutation cut into valid/test blocks of `floor(N·ratio)` nodes;
/// the remainder is train.
pub fn random_split(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<Vec<SplitTag>> {
    if n < 3 {
        return Err(Error::invalid(format!(
            "random_split needs N >= 3, got {n}"
        )));
    }
    let (tr, va, te) = ratios;
    if !(tr > 0.0 && va > 0.0 && te > 0.0) || (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split ratios must be positive and sum to 1, got ({tr}, {va}, {te})"
        )));
    }
    let n_valid = (n as f64 * va + 1e-9).floor() as usize;
    let n_test = (n as f64 * te + 1e-9).floor() as usize;
    let n_train = n - n_valid - n_test;
    let perm = rng::permutation(n, &mut rng::rng(rng::derive_seed(seed, &[stream::SPLIT])));
    let mut tags = vec![SplitTag::None; n];
    for (pos, &node) in perm.iter().enumerate() {
        tags[node] = if pos < n_train {
            SplitTag::Train
        } else if pos < n_train + n_valid {
            SplitTag::Valid
        } else {
            SplitTag::Test
        };
    }
    Ok(tags)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub seed: u64,
    pub batches: Vec<Vec<usize>>,
}

/// Seeded shuffle of `0..n` chunked into batches of `batch_size`.
pub fn minibatch_partition(n: usize, batch_size: usize, seed: u64) -> Result<BatchPlan> {
    if batch_size < 2 {
        return Err(Error::invalid(format!(
            "batch_size must be >= 2, got {batch_size}"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("cannot partition zero nodes"));
    }
    let perm = rng::permutation(n, &mut rng::rng(rng::derive_seed(seed, &[stream::BATCH])));
    Ok(BatchPlan {
        seed,
        batches: perm.chunks(batch_size).map(<[usize]>::to_vec).collect(),
    })
}

/// Two Gaussian clusters with means `±1` in every coordinate, unit variance,
/// and only intra-cluster edges.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoClusterConfig {
    pub nodes: usize,
    pub dim: usize,
    pub separation: f64,
    /// Random same-cluster partners per node before symmetrization.
    pub neighbors: usize,
}

impl Default for TwoClusterConfig {
    fn default() -> Self {
        TwoClusterConfig {
            nodes: 400,
            dim: 8,
            separation: 1.0,
            neighbors: 3,
        }
    }
}

pub fn two_cluster(cfg: &TwoClusterConfig, seed: u64) -> Result<Graph> {
    if cfg.nodes < 4 || cfg.dim == 0 {
        return Err(Error::invalid(
            "two_cluster needs at least 4 nodes and 1 dimension",
        ));
    }
    let mut r = rng::rng(rng::derive_seed(seed, &[stream::DATA]));
    let n = cfg.nodes;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let mut data = Vec::with_capacity(n * cfg.dim);
    for &y in &labels {
        let mean = if y == 0 {
            -cfg.separation
        } else {
            cfg.separation
        };
        for _ in 0..cfg.dim {
            data.push(mean + rng::standard_normal(&mut r));
        }
    }
    let mut edges = Vec::new();
    let half = n / 2;
    for u in 0..n {
        for _ in 0..cfg.neighbors {
            // nodes of class y are y, y+2, y+4, ...
            let v = loop {
                let j = (rng::uniform(&mut r) * half as f64) as usize;
                let v = 2 * j + labels[u];
                if v != u && v < n {
                    break v;
                }
            };
            edges.push((u, v));
        }
    }
    let split = random_split(n, (0.5, 0.25, 0.25), seed)?;
    Graph::new(
        Tensor::from_vec(n, cfg.dim, data)?,
        edges,
        Labels::Single(labels),
        2,
        split,
        true,
    )
}

/// A citation-style surrogate: sparse binary bag-of-words features, skewed
/// class sizes, heavy-tailed degrees and a tunable edge homophily.
#[derive(Clone, Debug, PartialEq)]
pub struct CoraLikeConfig {
    pub class_sizes: Vec<usize>,
    pub vocabulary: usize,
    /// Words per class topic.
    pub topic_words: usize,
    /// Words drawn per node.
    pub words_per_node: usize,
    /// Probability that a drawn word comes from the node's topic.
    pub topic_rate: f64,
    /// Probability that a node's topic is its own class.
    pub topic_fidelity: f64,
    /// Undirected edges.
    pub edges: usize,
    /// Probability that an edge joins two nodes of the same class.
    pub homophily: f64,
    /// Pareto shape of the degree propensities.
    pub degree_shape: f64,
}

impl Default for CoraLikeConfig {
    fn default() -> Self {
        CoraLikeConfig {
            class_sizes: vec![351, 217, 418, 818, 426, 298, 180],
            vocabulary: 1433,
            topic_words: 120,
            words_per_node: 18,
            topic_rate: 0.35,
            topic_fidelity: 0.8,
            edges: 5278,
            homophily: 0.81,
            degree_shape: 2.5,
        }
    }
}

pub fn cora_like(cfg: &CoraLikeConfig, seed: u64) -> Result<Graph> {
    let c = cfg.class_sizes.len();
    let n: usize = cfg.class_sizes.iter().sum();
    if c < 2 || cfg.class_sizes.contains(&0) {
        return Err(Error::invalid("need at least two nonempty classes"));
    }
    if cfg.topic_words == 0 || cfg.topic_words > cfg.vocabulary || cfg.words_per_node == 0 {
        return Err(Error::invalid(
            "topic_words must be in 1..=vocabulary and words_per_node >= 1",
        ));
    }
    if cfg.edges < n || cfg.edges > n * (n - 1) / 4 {
        return Err(Error::invalid(format!(
            "edge count {} must lie in [{n}, {}]",
            cfg.edges,
            n * (n - 1) / 4
        )));
    }
    let mut r = rng::rng(rng::derive_seed(seed, &[stream::DATA]));
    let mut labels: Vec<usize> = cfg
        .class_sizes
        .iter()
        .enumerate()
        .flat_map(|(k, &s)| std::iter::repeat(k).take(s))
        .collect();
    let perm = rng::permutation(n, &mut r);
    labels = perm.iter().map(|&i| labels[i]).collect();

    let topics: Vec<Vec<usize>> = (0..c)
        .map(|_| rng::permutation(cfg.vocabulary, &mut r)[..cfg.topic_words].to_vec())
        .collect();
    let mut features = Tensor::zeros(n, cfg.vocabulary);
    for u in 0..n {
        let topic = if rng::uniform(&mut r) < cfg.topic_fidelity {
            labels[u]
        } else {
            (rng::uniform(&mut r) * c as f64) as usize
        };
        let mut placed = 0;
        while placed < cfg.words_per_node {
            let w = if rng::uniform(&mut r) < cfg.topic_rate {
                topics[topic][(rng::uniform(&mut r) * cfg.topic_words as f64) as usize]
            } else {
                (rng::uniform(&mut r) * cfg.vocabulary as f64) as usize
            };
            if features.get(u, w) == 0.0 {
                features.set(u, w, 1.0);
                placed += 1;
            }
        }
    }

    let weight: Vec<f64> = (0..n)
        .map(|_| (1.0 - rng::uniform(&mut r)).powf(-1.0 / cfg.degree_shape))
        .collect();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (u, &y) in labels.iter().enumerate() {
        by_class[y].push(u);
    }
    let cumulative = |nodes: &[usize]| -> Vec<f64> {
        let mut acc = 0.0;
        nodes
            .iter()
            .map(|&u| {
                acc += weight[u];
                acc
            })
            .collect()
    };
    let class_cdf: Vec<Vec<f64>> = by_class.iter().map(|b| cumulative(b)).collect();
    let all: Vec<usize> = (0..n).collect();
    let all_cdf = cumulative(&all);
    let pick = |nodes: &[usize], cdf: &[f64], x: f64| -> usize {
        let target = x * cdf[cdf.len() - 1];
        nodes[cdf.partition_point(|&v| v < target).min(nodes.len() - 1)]
    };

    let mut seen = std::collections::HashSet::new();
    let mut edges = Vec::with_capacity(cfg.edges);
    let mut add = |u: usize, v: usize, edges: &mut Vec<(usize, usize)>| {
        if u != v && seen.insert((u.min(v), u.max(v))) {
            edges.push((u.min(v), u.max(v)));
            true
        } else {
            false
        }
    };
    let partner = |u: usize, r: &mut rand_chacha::ChaCha8Rng| -> usize {
        if rng::uniform(r) < cfg.homophily {
            let y = labels[u];
            pick(&by_class[y], &class_cdf[y], rng::uniform(r))
        } else {
            loop {
                let v = pick(&all, &all_cdf, rng::uniform(r));
                if labels[v] != labels[u] {
                    break v;
                }
            }
        }
    };
    // every node gets at least one edge, then propensity-weighted sources
    for u in 0..n {
        loop {
            let v = partner(u, &mut r);
            if add(u, v, &mut edges) || edges.len() >= cfg.edges {
                break;
            }
        }
    }
    while edges.len() < cfg.edges {
        let u = pick(&all, &all_cdf, rng::uniform(&mut r));
        let v = partner(u, &mut r);
        add(u, v, &mut edges);
    }
    let split = random_split(n, (0.5, 0.25, 0.25), seed)?;
    Graph::new(features, edges, Labels::Single(labels), c, split, true)
}
