use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CsrGraph;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const TRAIN_FRACTION: f64 = 0.48;
pub const VAL_FRACTION: f64 = 0.32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Train,
    Val,
    Test,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Val => "val",
            Role::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        match s {
            "train" => Some(Role::Train),
            "val" => Some(Role::Val),
            "test" => Some(Role::Test),
            _ => None,
        }
    }
}

/// One seed's partition of the nodes into train/val/test.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub seed: u64,
    pub roles: Vec<Role>,
}

impl Split {
    pub fn indices(&self, role: Role) -> Vec<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, &r)| r == role)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn train(&self) -> Vec<usize> {
        self.indices(Role::Train)
    }

    pub fn val(&self) -> Vec<usize> {
        self.indices(Role::Val)
    }

    pub fn test(&self) -> Vec<usize> {
        self.indices(Role::Test)
    }
}

/// Graph, node features, labels and per-seed splits.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphBundle {
    pub graph: CsrGraph,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub splits: Vec<Split>,
}

impl GraphBundle {
    pub fn new(graph: CsrGraph, features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let bundle = GraphBundle {
            graph,
            features,
            labels,
            num_classes,
            splits: Vec::new(),
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.n()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.graph.n();
        self.graph.validate()?;
        if self.features.rows() != n {
            return Err(Error::Validation(format!(
                "{} feature rows for {n} nodes",
                self.features.rows()
            )));
        }
        if !self.features.is_finite() {
            return Err(Error::Validation("non-finite feature value".into()));
        }
        if self.labels.len() != n {
            return Err(Error::Validation(format!("{} labels for {n} nodes", self.labels.len())));
        }
        if let Some((i, &y)) = self.labels.iter().enumerate().find(|(_, &y)| y >= self.num_classes) {
            return Err(Error::Validation(format!(
                "label {y} of node {i} outside [0, {})",
                self.num_classes
            )));
        }
        for split in &self.splits {
            if split.roles.len() != n {
                return Err(Error::Validation(format!(
                    "split for seed {} covers {} of {n} nodes",
                    split.seed,
                    split.roles.len()
                )));
            }
        }
        Ok(())
    }

    pub fn split(&self, seed: u64) -> Option<&Split> {
        self.splits.iter().find(|s| s.seed == seed)
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.splits.iter().map(|s| s.seed).collect()
    }

    /// Replaces the splits with one 48/32/20 partition per seed.
    pub fn make_splits(mut self, seeds: &[u64]) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::Config("make_splits needs at least one seed".into()));
        }
        self.splits = seeds
            .iter()
            .map(|&seed| Split {
                seed,
                roles: split_roles(&self.labels, self.num_classes, seed),
            })
            .collect();
        Ok(self)
    }

    /// Adds splits for any of `seeds` the bundle does not already carry.
    pub fn ensure_splits(mut self, seeds: &[u64]) -> Self {
        for &seed in seeds {
            if self.split(seed).is_none() {
                self.splits.push(Split {
                    seed,
                    roles: split_roles(&self.labels, self.num_classes, seed),
                });
            }
        }
        self
    }
}

/// Target (train, val, test) sizes for `n` nodes.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (TRAIN_FRACTION * n as f64).round() as usize;
    let train_val = ((TRAIN_FRACTION + VAL_FRACTION) * n as f64).round() as usize;
    (train, train_val - train, n - train_val)
}

/// Stratified random partition. Each node receives the key
/// `(rank_within_class + u) / class_size` with its rank drawn by a shuffle
/// and `u` uniform in `[0, 1)`; cutting the key-sorted order at the target
/// sizes keeps every class within one node of its share while hitting the
/// global sizes exactly. Falls back to a plain shuffle when some class has
/// fewer than three nodes.
fn split_roles(labels: &[usize], num_classes: usize, seed: u64) -> Vec<Role> {
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        members[y].push(i);
    }
    let stratify = members.iter().all(|m| m.is_empty() || m.len() >= 3);
    let order: Vec<usize> = if stratify {
        let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(n);
        for class in &mut members {
            class.shuffle(&mut rng);
            let size = class.len() as f64;
            for (rank, &node) in class.iter().enumerate() {
                let u: f64 = rng.gen();
                keyed.push(((rank as f64 + u) / size, node));
            }
        }
        keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
        keyed.into_iter().map(|(_, i)| i).collect()
    } else {
        log::warn!("a class has fewer than 3 nodes; using an unstratified split for seed {seed}");
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    };
    let (train, val, _) = split_sizes(n);
    let mut roles = vec![Role::Test; n];
    for (pos, &node) in order.iter().enumerate() {
        roles[node] = if pos < train {
            Role::Train
        } else if pos < train + val {
            Role::Val
        } else {
            Role::Test
        };
    }
    roles
}

/// Fraction of undirected edges whose endpoints share a label.
pub fn edge_homophily(bundle: &GraphBundle) -> Result<f64> {
    let mut total = 0usize;
    let mut same = 0usize;
    for (i, j) in bundle.graph.edges() {
        total += 1;
        if bundle.labels[i] == bundle.labels[j] {
            same += 1;
        }
    }
    if total == 0 {
        return Err(Error::DegenerateInput("edge homophily of an edgeless graph".into()));
    }
    Ok(same as f64 / total as f64)
}
