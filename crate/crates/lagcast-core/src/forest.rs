//! Random-forest regression: a bootstrapped ensemble of variance-splitting
//! regression trees over the shared named design matrix.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gamlss::DesignMatrix;
use crate::rng::derive_seed;
use crate::textfmt::sig17;

/// Forest hyperparameters. `mtry = None` resolves to ⌈p/3⌉ at fit time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub mtry: Option<usize>,
    pub min_node_size: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 500,
            mtry: None,
            min_node_size: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf {
        value: f64,
    },
    Split {
        /// Canonical (name-sorted) feature index.
        col: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// One regression tree; nodes stored in depth-first pre-order, root first.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Predict one row, reading feature `col` as `row[map[col]]`.
    fn predict_mapped(&self, map: &[usize], row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    col,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[map[*col]] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
}

/// A fitted forest. Splits reference features in canonical (sorted-name)
/// order so that permuting design columns together with their names
/// changes nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub config: ForestConfig,
    /// Resolved number of candidate features per split.
    pub mtry: usize,
    /// Feature names in the training design's column order.
    pub names: Vec<String>,
    pub trees: Vec<Tree>,
    /// Training-row indices left out of each tree's bootstrap sample.
    pub oob_indices: Vec<Vec<usize>>,
    /// True when the training response was constant (all trees are
    /// single leaves).
    pub degenerate_response: bool,
    n_train_rows: usize,
    /// canon[j] = index into `names` of the j-th name in sorted order.
    canon: Vec<usize>,
}

fn canonical_order(names: &[String]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..names.len()).collect();
    idx.sort_by(|&a, &b| names[a].cmp(&names[b]));
    idx
}

struct TreeBuilder<'a> {
    /// Columns already permuted to canonical order.
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    mtry: usize,
    min_node: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    /// Sample `mtry` column indices without replacement, ascending.
    fn sample_columns(&mut self, scratch: &mut Vec<usize>) -> Vec<usize> {
        let p = self.x.ncols();
        scratch.clear();
        scratch.extend(0..p);
        for i in 0..self.mtry {
            let j = self.rng.random_range(i..p);
            scratch.swap(i, j);
        }
        let mut cols = scratch[..self.mtry].to_vec();
        cols.sort_unstable();
        cols
    }

    fn build(&mut self, rows: &[usize], scratch: &mut Vec<usize>) -> usize {
        let n = rows.len();
        let sum: f64 = rows.iter().map(|&i| self.y[i]).sum();
        let mean = sum / n as f64;

        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf { value: mean });

        let y_min = rows
            .iter()
            .map(|&i| self.y[i])
            .fold(f64::INFINITY, f64::min);
        let y_max = rows
            .iter()
            .map(|&i| self.y[i])
            .fold(f64::NEG_INFINITY, f64::max);
        if n < 2 * self.min_node || y_min == y_max {
            return idx;
        }

        let sumsq: f64 = rows.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let parent_cost = sumsq - sum * sum / n as f64;
        let cols = self.sample_columns(scratch);

        // Exact split search: every midpoint of consecutive distinct
        // sorted values, both children at least min_node rows. Strict
        // improvement plus ascending (column, threshold) iteration break
        // ties toward the lowest column then the smallest threshold.
        let mut best: Option<(f64, usize, f64)> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
        for &col in &cols {
            pairs.clear();
            pairs.extend(rows.iter().map(|&i| (self.x[(i, col)], self.y[i])));
            pairs.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            let mut sum_l = 0.0;
            let mut sumsq_l = 0.0;
            for i in 1..n {
                let (xv, yv) = pairs[i - 1];
                sum_l += yv;
                sumsq_l += yv * yv;
                if pairs[i].0 <= xv || i < self.min_node || n - i < self.min_node {
                    continue;
                }
                let cost_l = sumsq_l - sum_l * sum_l / i as f64;
                let sum_r = sum - sum_l;
                let cost_r = (sumsq - sumsq_l) - sum_r * sum_r / (n - i) as f64;
                let total = cost_l + cost_r;
                if best.map_or(total < parent_cost, |(b, _, _)| total < b) {
                    let mut thr = 0.5 * (xv + pairs[i].0);
                    if thr >= pairs[i].0 {
                        thr = xv;
                    }
                    best = Some((total, col, thr));
                }
            }
        }

        let Some((total, col, threshold)) = best else {
            return idx;
        };
        debug_assert!(
            total <= parent_cost + 1e-9 * (1.0 + parent_cost.abs()),
            "split increased weighted child variance: {total} > {parent_cost}"
        );

        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| self.x[(i, col)] <= threshold);
        let left = self.build(&left_rows, scratch);
        let right = self.build(&right_rows, scratch);
        self.nodes[idx] = Node::Split {
            col,
            threshold,
            left,
            right,
        };
        idx
    }
}

/// Fit a random forest on the named design.
///
/// Each tree sees an n-with-replacement bootstrap sample and samples
/// `mtry` candidate columns per split. Per-tree generators are derived
/// from the seed by a fixed split function, so parallel and serial
/// builds agree bit for bit.
pub fn fit_forest(
    design: &DesignMatrix,
    y: &DVector<f64>,
    config: &ForestConfig,
) -> Result<ForestModel> {
    let n = design.n_rows();
    let p = design.n_cols();
    if n < 2 || p == 0 {
        return Err(Error::EmptyDesign(n, p));
    }
    if y.len() != n {
        return Err(Error::MisalignedInputs(format!(
            "{n} design rows for {} responses",
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::MisalignedInputs("non-finite response".into()));
    }
    {
        let mut sorted = design.names.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::MisalignedInputs("duplicate column names".into()));
        }
    }
    let mtry = config.mtry.unwrap_or(p.div_ceil(3));
    if mtry == 0 || mtry > p {
        return Err(Error::InvalidSpec(format!(
            "mtry {mtry} outside 1..={p} predictors"
        )));
    }
    if config.n_trees == 0 || config.min_node_size == 0 {
        return Err(Error::InvalidSpec(
            "n_trees and min_node_size must be >= 1".into(),
        ));
    }

    let canon = canonical_order(&design.names);
    let mut xc = DMatrix::zeros(n, p);
    for (j, &orig) in canon.iter().enumerate() {
        xc.set_column(j, &design.x.column(orig));
    }
    let degenerate = {
        let y_min = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let y_max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        y_min == y_max
    };

    let results: Vec<(Tree, Vec<usize>)> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, t as u64));
            let mut in_bag = vec![false; n];
            let rows: Vec<usize> = (0..n)
                .map(|_| {
                    let i = rng.random_range(0..n);
                    in_bag[i] = true;
                    i
                })
                .collect();
            let oob: Vec<usize> = (0..n).filter(|&i| !in_bag[i]).collect();
            let mut builder = TreeBuilder {
                x: &xc,
                y,
                mtry,
                min_node: config.min_node_size,
                rng,
                nodes: Vec::new(),
            };
            let mut scratch = Vec::new();
            builder.build(&rows, &mut scratch);
            (
                Tree {
                    nodes: builder.nodes,
                },
                oob,
            )
        })
        .collect();

    let (trees, oob_indices) = results.into_iter().unzip();
    Ok(ForestModel {
        config: config.clone(),
        mtry,
        names: design.names.clone(),
        trees,
        oob_indices,
        degenerate_response: degenerate,
        n_train_rows: n,
        canon,
    })
}

impl ForestModel {
    /// Map from canonical feature index to a column of `names`.
    fn mapping_for(&self, names: &[String]) -> Result<Vec<usize>> {
        if names.len() != self.names.len() {
            return Err(Error::WidthMismatch {
                got: names.len(),
                expected: self.names.len(),
            });
        }
        if names == self.names {
            return Ok(self.canon.clone());
        }
        let mut map = Vec::with_capacity(self.canon.len());
        for &orig in &self.canon {
            let wanted = &self.names[orig];
            let pos = names
                .iter()
                .position(|n| n == wanted)
                .ok_or_else(|| Error::ColumnMismatch(format!("missing column '{wanted}'")))?;
            map.push(pos);
        }
        Ok(map)
    }

    /// Predict one row given in the training design's column order.
    pub fn predict_row(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.names.len() {
            return Err(Error::WidthMismatch {
                got: row.len(),
                expected: self.names.len(),
            });
        }
        let sum: f64 = self
            .trees
            .iter()
            .map(|t| t.predict_mapped(&self.canon, row))
            .sum();
        Ok(sum / self.trees.len() as f64)
    }

    /// Per-tree predictions for one row (training column order).
    pub fn per_tree_predictions(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.names.len() {
            return Err(Error::WidthMismatch {
                got: row.len(),
                expected: self.names.len(),
            });
        }
        Ok(self
            .trees
            .iter()
            .map(|t| t.predict_mapped(&self.canon, row))
            .collect())
    }
}

/// Ensemble predictions: the mean of per-tree leaf values. Columns are
/// matched by name, so a permuted design predicts identically. No
/// non-negativity clamp is applied here; that is the pipeline's job.
pub fn predict_forest(model: &ForestModel, design: &DesignMatrix) -> Result<Vec<f64>> {
    let map = model.mapping_for(&design.names)?;
    let mut row = vec![0.0; design.n_cols()];
    let mut out = Vec::with_capacity(design.n_rows());
    for i in 0..design.n_rows() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = design.x[(i, j)];
        }
        let sum: f64 = model
            .trees
            .iter()
            .map(|t| t.predict_mapped(&map, &row))
            .sum();
        out.push(sum / model.trees.len() as f64);
    }
    Ok(out)
}

/// Root-mean-squared error of out-of-bag predictions over the training
/// design: each row is predicted only by trees whose bootstrap sample
/// excluded it.
pub fn oob_rmse(model: &ForestModel, design: &DesignMatrix, y: &DVector<f64>) -> Result<f64> {
    let map = model.mapping_for(&design.names)?;
    let n = design.n_rows();
    if n != model.n_train_rows || y.len() != n {
        return Err(Error::MisalignedInputs(format!(
            "out-of-bag evaluation needs the training rows ({}), got {n}",
            model.n_train_rows
        )));
    }
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    let mut row = vec![0.0; design.n_cols()];
    for (tree, oob) in model.trees.iter().zip(&model.oob_indices) {
        for &i in oob {
            for (j, v) in row.iter_mut().enumerate() {
                *v = design.x[(i, j)];
            }
            sums[i] += tree.predict_mapped(&map, &row);
            counts[i] += 1;
        }
    }
    let mut sq = 0.0;
    let mut m = 0usize;
    for i in 0..n {
        if counts[i] > 0 {
            let pred = sums[i] / counts[i] as f64;
            sq += (pred - y[i]) * (pred - y[i]);
            m += 1;
        }
    }
    if m == 0 {
        return Err(Error::NoOobRows);
    }
    Ok((sq / m as f64).sqrt())
}

impl ForestModel {
    fn write_node(&self, tree: &Tree, idx: usize, out: &mut String) {
        match &tree.nodes[idx] {
            Node::Leaf { value } => {
                out.push_str("leaf ");
                out.push_str(&sig17(*value));
                out.push('\n');
            }
            Node::Split {
                col,
                threshold,
                left,
                right,
            } => {
                out.push_str(&format!("split {col} {}\n", sig17(*threshold)));
                self.write_node(tree, *left, out);
                self.write_node(tree, *right, out);
            }
        }
    }

    /// Depth-first text encoding of every tree at 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("forest v1\n");
        out.push_str(&format!("seed {}\n", self.config.seed));
        out.push_str(&format!("n_trees {}\n", self.config.n_trees));
        out.push_str(&format!("mtry {}\n", self.mtry));
        out.push_str(&format!("min_node_size {}\n", self.config.min_node_size));
        out.push_str(&format!("n_rows {}\n", self.n_train_rows));
        out.push_str(&format!(
            "degenerate_response {}\n",
            u8::from(self.degenerate_response)
        ));
        for name in &self.names {
            out.push_str(&format!("name {name}\n"));
        }
        for (t, tree) in self.trees.iter().enumerate() {
            out.push_str(&format!("tree {t} nodes {}\n", tree.nodes.len()));
            self.write_node(tree, 0, &mut out);
            out.push_str("oob");
            for &i in &self.oob_indices[t] {
                out.push_str(&format!(" {i}"));
            }
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<ForestModel> {
        let bad = |msg: &str| Error::MalformedRecord(msg.to_string());
        let mut lines = text.lines().peekable();
        if lines.next() != Some("forest v1") {
            return Err(bad("missing 'forest v1' header"));
        }
        fn header<T: std::str::FromStr>(line: Option<&str>, key: &str) -> Result<T> {
            let line = line.ok_or_else(|| Error::MalformedRecord(format!("missing {key}")))?;
            let rest = line
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| Error::MalformedRecord(format!("expected '{key}', got '{line}'")))?;
            rest.parse()
                .map_err(|_| Error::MalformedRecord(format!("bad value in '{line}'")))
        }
        let seed: u64 = header(lines.next(), "seed")?;
        let n_trees: usize = header(lines.next(), "n_trees")?;
        let mtry: usize = header(lines.next(), "mtry")?;
        let min_node_size: usize = header(lines.next(), "min_node_size")?;
        let n_rows: usize = header(lines.next(), "n_rows")?;
        let degenerate: u8 = header(lines.next(), "degenerate_response")?;

        let mut names = Vec::new();
        while let Some(line) = lines.peek() {
            if let Some(name) = line.strip_prefix("name ") {
                names.push(name.to_string());
                lines.next();
            } else {
                break;
            }
        }
        if names.is_empty() {
            return Err(bad("no feature names"));
        }

        fn read_node<'a, I: Iterator<Item = &'a str>>(
            lines: &mut I,
            nodes: &mut Vec<Node>,
        ) -> Result<usize> {
            let line = lines
                .next()
                .ok_or_else(|| Error::MalformedRecord("truncated tree".into()))?;
            let idx = nodes.len();
            if let Some(rest) = line.strip_prefix("leaf ") {
                let value: f64 = rest
                    .parse()
                    .map_err(|_| Error::MalformedRecord(format!("bad leaf '{line}'")))?;
                nodes.push(Node::Leaf { value });
                Ok(idx)
            } else if let Some(rest) = line.strip_prefix("split ") {
                let mut parts = rest.split(' ');
                let col: usize = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::MalformedRecord(format!("bad split '{line}'")))?;
                let threshold: f64 = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::MalformedRecord(format!("bad split '{line}'")))?;
                nodes.push(Node::Split {
                    col,
                    threshold,
                    left: 0,
                    right: 0,
                });
                let left = read_node(lines, nodes)?;
                let right = read_node(lines, nodes)?;
                if let Node::Split {
                    left: l, right: r, ..
                } = &mut nodes[idx]
                {
                    *l = left;
                    *r = right;
                }
                Ok(idx)
            } else {
                Err(Error::MalformedRecord(format!("unexpected line '{line}'")))
            }
        }

        let mut trees = Vec::with_capacity(n_trees);
        let mut oob_indices = Vec::with_capacity(n_trees);
        for t in 0..n_trees {
            let head = lines
                .next()
                .ok_or_else(|| bad(&format!("missing tree {t}")))?;
            let expected_nodes: usize = head
                .strip_prefix(&format!("tree {t} nodes "))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(&format!("bad tree header '{head}'")))?;
            let mut nodes = Vec::with_capacity(expected_nodes);
            read_node(&mut lines, &mut nodes)?;
            if nodes.len() != expected_nodes {
                return Err(bad(&format!(
                    "tree {t}: {} nodes, header said {expected_nodes}",
                    nodes.len()
                )));
            }
            let oob_line = lines.next().ok_or_else(|| bad("missing oob line"))?;
            let rest = oob_line
                .strip_prefix("oob")
                .ok_or_else(|| bad(&format!("expected oob line, got '{oob_line}'")))?;
            let oob: Vec<usize> = rest
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| bad("bad oob index")))
                .collect::<Result<_>>()?;
            trees.push(Tree { nodes });
            oob_indices.push(oob);
        }
        if lines.next() != Some("end") {
            return Err(bad("missing 'end' terminator"));
        }

        let canon = canonical_order(&names);
        Ok(ForestModel {
            config: ForestConfig {
                n_trees,
                mtry: Some(mtry),
                min_node_size,
                seed,
            },
            mtry,
            names,
            trees,
            oob_indices,
            degenerate_response: degenerate != 0,
            n_train_rows: n_rows,
            canon,
        })
    }
}
