use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::FeatureVector;

pub const DEFAULT_NUM_TREES: usize = 100;

/// Minimum Gini decrease that counts as an improvement.
const MIN_GAIN: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForestParams {
    pub num_trees: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            num_trees: DEFAULT_NUM_TREES,
            seed: 0,
        }
    }
}

/// Binary split on feature presence, or a leaf with class frequencies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Node {
    Leaf(Vec<f64>),
    Split {
        feature: u32,
        present: Box<Node>,
        absent: Box<Node>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub root: Node,
}

impl Tree {
    pub fn leaf_distribution(&self, v: &FeatureVector) -> &[f64] {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf(dist) => return dist,
                Node::Split {
                    feature,
                    present,
                    absent,
                } => {
                    node = if v.contains(*feature) {
                        present
                    } else {
                        absent
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(n: &Node) -> usize {
            match n {
                Node::Leaf(_) => 0,
                Node::Split {
                    present, absent, ..
                } => 1 + go(present).max(go(absent)),
            }
        }
        go(&self.root)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Forest {
    pub n_classes: usize,
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn from_trees(n_classes: usize, n_features: usize, trees: Vec<Tree>) -> Self {
        Forest {
            n_classes,
            n_features,
            trees,
        }
    }

    /// Mean of the trees' leaf class distributions.
    pub fn scores(&self, v: &FeatureVector) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_classes];
        for tree in &self.trees {
            for (a, p) in acc.iter_mut().zip(tree.leaf_distribution(v)) {
                *a += p;
            }
        }
        let n = self.trees.len().max(1) as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

/// Dense presence bitset; vocabularies are small enough for this to be cheap.
struct Bits(Vec<u64>);

impl Bits {
    fn from_vector(v: &FeatureVector, n_features: usize) -> Self {
        let mut words = vec![0u64; n_features.div_ceil(64)];
        for &i in &v.present {
            words[i as usize / 64] |= 1 << (i % 64);
        }
        Bits(words)
    }

    #[inline]
    fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }
}

struct Grower<'a> {
    rows: &'a [Bits],
    labels: &'a [usize],
    n_classes: usize,
    n_features: usize,
    mtry: usize,
}

/// Grows `params.num_trees` trees, each on a seeded bootstrap sample of
/// `samples` (same size, with replacement). Each split considers
/// `ceil(sqrt(n_features))` features drawn without replacement and takes
/// the largest Gini decrease. Nodes stop splitting when pure, when fewer
/// than two samples remain, or when no candidate improves Gini.
pub fn train_forest(
    samples: &[(FeatureVector, usize)],
    n_classes: usize,
    n_features: usize,
    params: &ForestParams,
) -> Result<Forest> {
    if samples.is_empty() {
        return Err(Error::CannotTrain("empty training set".into()));
    }
    let version = samples[0].0.vocabulary_version;
    if let Some((v, _)) = samples
        .iter()
        .find(|(v, _)| v.vocabulary_version != version)
    {
        return Err(Error::StaleVector {
            vector: v.vocabulary_version,
            model: version,
        });
    }
    if let Some((_, c)) = samples.iter().find(|(_, c)| *c >= n_classes) {
        return Err(Error::Validation(format!("class index {c} out of range")));
    }
    if let Some(i) = samples
        .iter()
        .flat_map(|(v, _)| v.present.iter())
        .find(|&&i| i as usize >= n_features)
    {
        return Err(Error::Validation(format!("feature index {i} out of range")));
    }
    let first = samples[0].1;
    if samples.iter().all(|(_, c)| *c == first) {
        return Err(Error::CannotTrain(
            "training set has a single category".into(),
        ));
    }

    let rows: Vec<Bits> = samples
        .iter()
        .map(|(v, _)| Bits::from_vector(v, n_features))
        .collect();
    let labels: Vec<usize> = samples.iter().map(|(_, c)| *c).collect();
    let grower = Grower {
        rows: &rows,
        labels: &labels,
        n_classes,
        n_features,
        mtry: (n_features as f64).sqrt().ceil() as usize,
    };

    let mut master = ChaCha8Rng::seed_from_u64(params.seed);
    let tree_seeds: Vec<u64> = (0..params.num_trees).map(|_| master.random()).collect();
    let trees = tree_seeds
        .into_iter()
        .map(|s| grower.grow(&mut ChaCha8Rng::seed_from_u64(s)))
        .collect();
    Ok(Forest {
        n_classes,
        n_features,
        trees,
    })
}

/// Bootstrap row indices a tree seeded with `rng` trains on.
pub(crate) fn bootstrap(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

fn gini(counts: &[u64], n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / nf;
            p * p
        })
        .sum::<f64>()
}

impl Grower<'_> {
    fn grow(&self, rng: &mut ChaCha8Rng) -> Tree {
        let mut idx = bootstrap(self.rows.len(), rng);
        Tree {
            root: self.node(&mut idx, rng),
        }
    }

    fn counts(&self, idx: &[usize]) -> Vec<u64> {
        let mut c = vec![0u64; self.n_classes];
        for &i in idx {
            c[self.labels[i]] += 1;
        }
        c
    }

    fn leaf(&self, counts: &[u64], n: usize) -> Node {
        Node::Leaf(counts.iter().map(|&c| c as f64 / n as f64).collect())
    }

    fn node(&self, idx: &mut [usize], rng: &mut ChaCha8Rng) -> Node {
        let n = idx.len();
        let counts = self.counts(idx);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || n < 2 || self.mtry == 0 {
            return self.leaf(&counts, n);
        }
        let parent = gini(&counts, n as u64);
        let mut best: Option<(usize, f64)> = None;
        let mut left = vec![0u64; self.n_classes];
        for f in sample(rng, self.n_features, self.mtry.min(self.n_features)).iter() {
            left.iter_mut().for_each(|c| *c = 0);
            let mut n_left = 0u64;
            for &i in idx.iter() {
                if self.rows[i].get(f) {
                    left[self.labels[i]] += 1;
                    n_left += 1;
                }
            }
            let n_right = n as u64 - n_left;
            if n_left == 0 || n_right == 0 {
                continue;
            }
            let right: Vec<u64> = counts.iter().zip(&left).map(|(t, l)| t - l).collect();
            let nf = n as f64;
            let child = (n_left as f64 / nf) * gini(&left, n_left)
                + (n_right as f64 / nf) * gini(&right, n_right);
            let gain = parent - child;
            if gain > MIN_GAIN && best.is_none_or(|(_, g)| gain > g) {
                best = Some((f, gain));
            }
        }
        let Some((feature, _)) = best else {
            return self.leaf(&counts, n);
        };
        // Partition in place: rows with the feature first.
        let mut split = 0;
        for j in 0..n {
            if self.rows[idx[j]].get(feature) {
                idx.swap(split, j);
                split += 1;
            }
        }
        let (present, absent) = idx.split_at_mut(split);
        Node::Split {
            feature: feature as u32,
            present: Box::new(self.node(present, rng)),
            absent: Box::new(self.node(absent, rng)),
        }
    }
}
