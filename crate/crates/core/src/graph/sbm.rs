use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{CsrGraph, GraphBundle};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Stochastic block model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SbmConfig {
    pub n: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feat_dim: usize,
    pub feat_noise: f64,
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {p} is not a probability")))
            }
        };
        prob("p_in", self.p_in)?;
        prob("p_out", self.p_out)?;
        if self.classes == 0 || self.n / self.classes < 2 {
            return Err(Error::Config(format!(
                "{} nodes cannot hold {} classes of at least 2 nodes",
                self.n, self.classes
            )));
        }
        if self.feat_dim < self.classes {
            return Err(Error::Config(format!(
                "feat_dim {} is smaller than the {} class centroids",
                self.feat_dim, self.classes
            )));
        }
        if !(self.feat_noise >= 0.0 && self.feat_noise.is_finite()) {
            return Err(Error::Config(format!("feat_noise {} must be >= 0", self.feat_noise)));
        }
        Ok(())
    }

    /// Expected edge homophily `E[intra] / E[all]` for these parameters.
    pub fn expected_homophily(&self) -> f64 {
        let mut intra = 0.0;
        let mut inter = 0.0;
        let sizes = self.class_sizes();
        for (a, &sa) in sizes.iter().enumerate() {
            intra += self.p_in * (sa * (sa - 1)) as f64 / 2.0;
            for &sb in &sizes[a + 1..] {
                inter += self.p_out * (sa * sb) as f64;
            }
        }
        intra / (intra + inter)
    }

    fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.classes];
        for i in 0..self.n {
            sizes[label_of(i, self.n, self.classes)] += 1;
        }
        sizes
    }
}

#[inline]
fn label_of(i: usize, n: usize, classes: usize) -> usize {
    i * classes / n
}

/// Samples a bundle: balanced contiguous class blocks, each unordered pair
/// linked with probability `p_in` (same class) or `p_out`, and features
/// equal to the one-hot class centroid plus Gaussian noise.
///
/// The returned bundle has no splits.
pub fn sbm_generate<R: Rng + ?Sized>(config: &SbmConfig, rng: &mut R) -> Result<GraphBundle> {
    config.validate()?;
    let n = config.n;
    let labels: Vec<usize> = (0..n).map(|i| label_of(i, n, config.classes)).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] {
                config.p_in
            } else {
                config.p_out
            };
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let graph = CsrGraph::from_edge_list(n, &edges)?;
    let mut features = Matrix::zeros(n, config.feat_dim);
    for (i, &y) in labels.iter().enumerate() {
        features.set(i, y, 1.0);
    }
    if config.feat_noise > 0.0 {
        let normal = Normal::new(0.0, config.feat_noise).map_err(|e| Error::Config(e.to_string()))?;
        for v in features.as_mut_slice() {
            *v += normal.sample(rng);
        }
    }
    GraphBundle::new(graph, features, labels, config.classes)
}
