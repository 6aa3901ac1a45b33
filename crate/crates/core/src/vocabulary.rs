//! Hierarchical vocabulary of binary words, TF-IDF bag-of-words vectors and a
//! flat image database scored with the normalized L1 similarity.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{Descriptor, FeatureSet};
use crate::geometry::Timestamp;
// shadowed by inherent methods whenever std is linked
#[allow(unused_imports)]
use num_traits::Float;

const MAGIC: &[u8; 8] = b"VLMAVOC1";
const MAX_KMAJORITY_ROUNDS: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct VocabNode {
    pub center: Descriptor,
    pub children: Vec<u32>,
    /// Inverse document frequency; zero for internal nodes.
    pub idf: f32,
}

/// Vocabulary tree with branching factor `k` and depth at most `depth`.
/// Leaves are the words, numbered in node order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    k: u32,
    depth: u32,
    nodes: Vec<VocabNode>,
    word_of_node: Vec<Option<u32>>,
    leaf_nodes: Vec<u32>,
}

/// Sparse word histogram, sorted by word id, weights summing to one.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BowVector(pub Vec<(u32, f64)>);

impl BowVector {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().map(|e| e.1).sum()
    }

    /// `1 - 0.5 |a - b|_1` for normalized vectors, computed over the shared
    /// support. Zero when either side is empty.
    pub fn similarity(&self, other: &BowVector) -> f64 {
        let (a, b) = (&self.0, &other.0);
        let (mut i, mut j) = (0, 0);
        let mut s = 0.0;
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                core::cmp::Ordering::Less => i += 1,
                core::cmp::Ordering::Greater => j += 1,
                core::cmp::Ordering::Equal => {
                    let (x, y) = (a[i].1, b[j].1);
                    s += x.abs() + y.abs() - (x - y).abs();
                    i += 1;
                    j += 1;
                }
            }
        }
        (0.5 * s).clamp(0.0, 1.0)
    }
}

struct Trainer<'a> {
    descriptors: &'a [Descriptor],
    k: usize,
    depth: usize,
    rng: ChaCha8Rng,
    nodes: Vec<VocabNode>,
}

impl Trainer<'_> {
    fn split(&mut self, node: usize, members: Vec<u32>, level: usize) {
        if level >= self.depth || all_equal(self.descriptors, &members) {
            return;
        }
        let clusters = self.k_majority(&members);
        let first_child = self.nodes.len() as u32;
        for (center, _) in &clusters {
            self.nodes.push(VocabNode {
                center: *center,
                children: Vec::new(),
                idf: 0.0,
            });
        }
        self.nodes[node].children = (first_child..first_child + clusters.len() as u32).collect();
        for (i, (_, group)) in clusters.into_iter().enumerate() {
            self.split(first_child as usize + i, group, level + 1);
        }
    }

    fn k_majority(&mut self, members: &[u32]) -> Vec<(Descriptor, Vec<u32>)> {
        let desc = |i: u32| self.descriptors[i as usize];
        if members.len() <= self.k {
            // every distinct descriptor becomes its own cluster
            let mut groups: Vec<(Descriptor, Vec<u32>)> = Vec::new();
            for &m in members {
                match groups.iter_mut().find(|g| g.0 == desc(m)) {
                    Some(g) => g.1.push(m),
                    None => groups.push((desc(m), vec![m])),
                }
            }
            return groups;
        }
        // k-means++ seeding on squared Hamming distance
        let mut centers = vec![desc(members[self.rng.random_range(0..members.len())])];
        let mut nearest: Vec<u64> = members
            .iter()
            .map(|&m| (desc(m).hamming(&centers[0]) as u64).pow(2))
            .collect();
        while centers.len() < self.k {
            let total: u64 = nearest.iter().sum();
            if total == 0 {
                break;
            }
            let mut pick = self.rng.random_range(0..total);
            let mut chosen = members.len() - 1;
            for (i, w) in nearest.iter().enumerate() {
                if pick < *w {
                    chosen = i;
                    break;
                }
                pick -= w;
            }
            let c = desc(members[chosen]);
            centers.push(c);
            for (i, &m) in members.iter().enumerate() {
                nearest[i] = nearest[i].min((desc(m).hamming(&c) as u64).pow(2));
            }
        }

        let mut assignment = vec![usize::MAX; members.len()];
        for _ in 0..MAX_KMAJORITY_ROUNDS {
            let mut changed = false;
            for (i, &m) in members.iter().enumerate() {
                let d = desc(m);
                let best = (0..centers.len())
                    .min_by_key(|&c| (d.hamming(&centers[c]), c))
                    .unwrap_or(0);
                if assignment[i] != best {
                    assignment[i] = best;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            for (c, center) in centers.iter_mut().enumerate() {
                let mut counts = [0u32; 256];
                let mut n = 0u32;
                for (i, &m) in members.iter().enumerate() {
                    if assignment[i] == c {
                        n += 1;
                        let d = desc(m);
                        for (b, count) in counts.iter_mut().enumerate() {
                            *count += d.bit(b) as u32;
                        }
                    }
                }
                if n == 0 {
                    continue;
                }
                let mut majority = Descriptor::default();
                for (b, count) in counts.iter().enumerate() {
                    if 2 * count > n {
                        majority.set_bit(b);
                    }
                }
                *center = majority;
            }
        }
        let mut groups: Vec<(Descriptor, Vec<u32>)> =
            centers.iter().map(|c| (*c, Vec::new())).collect();
        for (i, &m) in members.iter().enumerate() {
            groups[assignment[i]].1.push(m);
        }
        groups.retain(|g| !g.1.is_empty());
        groups
    }
}

fn all_equal(descriptors: &[Descriptor], members: &[u32]) -> bool {
    members
        .iter()
        .all(|&m| descriptors[m as usize] == descriptors[members[0] as usize])
}

impl Vocabulary {
    /// Clusters all descriptors hierarchically (k-majority) and weights each
    /// word by `ln(N / n_word)` where `N` counts the feature sets.
    pub fn train(feature_sets: &[FeatureSet], k: usize, depth: usize, seed: u64) -> Result<Self> {
        if k < 2 || depth < 1 {
            return Err(Error::Config(alloc::format!(
                "vocabulary needs k >= 2 and depth >= 1, got k={k} depth={depth}"
            )));
        }
        let descriptors: Vec<Descriptor> = feature_sets
            .iter()
            .flat_map(|f| f.descriptors.iter().copied())
            .collect();
        if descriptors.len() < k {
            return Err(Error::InsufficientDescriptors {
                needed: k,
                got: descriptors.len(),
            });
        }
        let mut trainer = Trainer {
            descriptors: &descriptors,
            k,
            depth,
            rng: ChaCha8Rng::seed_from_u64(seed),
            nodes: vec![VocabNode {
                center: Descriptor::default(),
                children: Vec::new(),
                idf: 0.0,
            }],
        };
        let members: Vec<u32> = (0..descriptors.len() as u32).collect();
        if all_equal(&descriptors, &members) {
            // the root is never a word
            trainer.nodes.push(VocabNode {
                center: descriptors[0],
                children: Vec::new(),
                idf: 0.0,
            });
            trainer.nodes[0].children = vec![1];
        } else {
            trainer.split(0, members, 0);
        }
        let mut vocab = Self::from_nodes(k as u32, depth as u32, trainer.nodes)?;

        let n_images = feature_sets.len() as f64;
        let mut doc_freq = vec![0u32; vocab.word_count()];
        let mut seen = vec![usize::MAX; vocab.word_count()];
        for (img, fs) in feature_sets.iter().enumerate() {
            for d in &fs.descriptors {
                let w = vocab.quantize(d) as usize;
                if seen[w] != img {
                    seen[w] = img;
                    doc_freq[w] += 1;
                }
            }
        }
        for (w, &node) in vocab.leaf_nodes.iter().enumerate() {
            let idf = if doc_freq[w] == 0 {
                0.0
            } else {
                (n_images / doc_freq[w] as f64).ln().max(0.0)
            };
            vocab.nodes[node as usize].idf = idf as f32;
        }
        Ok(vocab)
    }

    fn from_nodes(k: u32, depth: u32, nodes: Vec<VocabNode>) -> Result<Self> {
        if nodes.is_empty() || nodes[0].children.is_empty() {
            return Err(Error::InvalidVocabulary("root has no children".into()));
        }
        let mut node_depth = vec![u32::MAX; nodes.len()];
        node_depth[0] = 0;
        for (i, n) in nodes.iter().enumerate() {
            if n.children.len() > k as usize {
                return Err(Error::InvalidVocabulary(alloc::format!(
                    "node {i} has more than {k} children"
                )));
            }
            if !(n.idf >= 0.0) {
                return Err(Error::InvalidVocabulary(alloc::format!("node {i} has negative weight")));
            }
            for &c in &n.children {
                let c = c as usize;
                if c <= i || c >= nodes.len() || node_depth[c] != u32::MAX || node_depth[i] == u32::MAX {
                    return Err(Error::InvalidVocabulary(alloc::format!(
                        "bad child index {c} under node {i}"
                    )));
                }
                node_depth[c] = node_depth[i] + 1;
                if node_depth[c] > depth {
                    return Err(Error::InvalidVocabulary("tree deeper than declared".into()));
                }
            }
        }
        if node_depth.contains(&u32::MAX) {
            return Err(Error::InvalidVocabulary("unreachable node".into()));
        }
        let mut word_of_node = vec![None; nodes.len()];
        let mut leaf_nodes = Vec::new();
        for (i, n) in nodes.iter().enumerate().skip(1) {
            if n.children.is_empty() {
                word_of_node[i] = Some(leaf_nodes.len() as u32);
                leaf_nodes.push(i as u32);
            }
        }
        Ok(Self {
            k,
            depth,
            nodes,
            word_of_node,
            leaf_nodes,
        })
    }

    pub fn branching(&self) -> u32 {
        self.k
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn nodes(&self) -> &[VocabNode] {
        &self.nodes
    }

    pub fn word_count(&self) -> usize {
        self.leaf_nodes.len()
    }

    pub fn idf(&self, word: u32) -> f32 {
        self.nodes[self.leaf_nodes[word as usize] as usize].idf
    }

    /// Descends to the closest leaf, breaking ties toward the lower child.
    pub fn quantize(&self, d: &Descriptor) -> u32 {
        let mut node = 0usize;
        loop {
            let children = &self.nodes[node].children;
            if children.is_empty() {
                return self.word_of_node[node].expect("leaf is a word");
            }
            node = children
                .iter()
                .map(|&c| (d.hamming(&self.nodes[c as usize].center), c))
                .min()
                .map(|x| x.1 as usize)
                .expect("non-empty children");
        }
    }

    /// TF-IDF histogram, L1 normalized. Empty when every weight is zero.
    pub fn transform(&self, features: &FeatureSet) -> BowVector {
        if features.descriptors.is_empty() {
            return BowVector::default();
        }
        let mut counts = vec![0u32; self.word_count()];
        for d in &features.descriptors {
            counts[self.quantize(d) as usize] += 1;
        }
        let n = features.descriptors.len() as f64;
        let mut v: Vec<(u32, f64)> = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(w, &c)| (w as u32, c as f64 / n * self.idf(w as u32) as f64))
            .filter(|e| e.1 > 0.0)
            .collect();
        let total: f64 = v.iter().map(|e| e.1).sum();
        if total <= 0.0 {
            return BowVector::default();
        }
        for e in &mut v {
            e.1 /= total;
        }
        BowVector(v)
    }

    /// Binary layout, all integers little endian:
    /// `VLMAVOC1`, k u32, depth u32, node count u32, then per node the
    /// 32-byte center, child count u32, child indices u32, idf f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.k.to_le_bytes());
        out.extend_from_slice(&self.depth.to_le_bytes());
        out.extend_from_slice(&(self.nodes.len() as u32).to_le_bytes());
        for n in &self.nodes {
            out.extend_from_slice(&n.center.to_bytes());
            out.extend_from_slice(&(n.children.len() as u32).to_le_bytes());
            for c in &n.children {
                out.extend_from_slice(&c.to_le_bytes());
            }
            out.extend_from_slice(&n.idf.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader(bytes);
        if r.take(8)? != MAGIC {
            return Err(Error::InvalidVocabulary("bad magic".into()));
        }
        let k = r.u32()?;
        let depth = r.u32()?;
        let count = r.u32()? as usize;
        let mut nodes = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let mut center = [0u8; 32];
            center.copy_from_slice(r.take(32)?);
            let n_children = r.u32()? as usize;
            if n_children > k as usize {
                return Err(Error::InvalidVocabulary("too many children".into()));
            }
            let children = (0..n_children).map(|_| r.u32()).collect::<Result<Vec<u32>>>()?;
            let idf = f32::from_bits(r.u32()?);
            nodes.push(VocabNode {
                center: Descriptor::from_bytes(&center),
                children,
                idf,
            });
        }
        if !r.0.is_empty() {
            return Err(Error::InvalidVocabulary("trailing bytes".into()));
        }
        Self::from_nodes(k, depth, nodes)
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.0.len() < n {
            return Err(Error::InvalidVocabulary("truncated".into()));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Bag-of-words vectors of reference keyframes.
#[derive(Debug, Clone, Default)]
pub struct ImageDatabase {
    entries: Vec<(Timestamp, BowVector)>,
}

impl ImageDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, t: Timestamp, v: BowVector) {
        self.entries.push((t, v));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Best `top_n` entries by similarity, descending, ties by ascending timestamp.
    pub fn query(&self, q: &BowVector, top_n: usize) -> Result<Vec<(Timestamp, f64)>> {
        if self.entries.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        let mut scored: Vec<(Timestamp, f64)> = self
            .entries
            .iter()
            .map(|(t, v)| (*t, q.similarity(v)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
        scored.truncate(top_n);
        Ok(scored)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::KeyPoint;

    fn fs(descriptors: Vec<Descriptor>) -> FeatureSet {
        let keypoints = descriptors
            .iter()
            .map(|_| KeyPoint {
                x: 0.0,
                y: 0.0,
                angle: 0.0,
                level: 0,
                response: 0.0,
            })
            .collect();
        FeatureSet {
            keypoints,
            descriptors,
        }
    }

    fn random_desc(rng: &mut ChaCha8Rng) -> Descriptor {
        Descriptor([rng.random(), rng.random(), rng.random(), rng.random()])
    }

    fn perturb(d: &Descriptor, bits: usize, rng: &mut ChaCha8Rng) -> Descriptor {
        let mut out = *d;
        let mut flipped = Vec::new();
        while flipped.len() < bits {
            let b = rng.random_range(0..256);
            if !flipped.contains(&b) {
                flipped.push(b);
                out.flip_bit(b);
            }
        }
        out
    }

    /// Two centers exactly 128 bits apart, members within Hamming radius 8.
    fn planted(rng: &mut ChaCha8Rng) -> (Descriptor, Descriptor, Vec<FeatureSet>) {
        let a = random_desc(rng);
        let mut b = a;
        for i in 0..128 {
            b.flip_bit(2 * i);
        }
        assert_eq!(a.hamming(&b), 128);
        let sets = (0..6)
            .map(|i| {
                let center = if i % 2 == 0 { a } else { b };
                fs((0..20).map(|_| perturb(&center, rng.random_range(0..=4), rng)).collect())
            })
            .collect();
        (a, b, sets)
    }

    #[test]
    fn planted_clusters_become_words() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, b, sets) = planted(&mut rng);
        let v = Vocabulary::train(&sets, 2, 1, 9).unwrap();
        assert_eq!(v.word_count(), 2);
        let (wa, wb) = (v.quantize(&a), v.quantize(&b));
        assert_ne!(wa, wb);
        for (i, s) in sets.iter().enumerate() {
            let expected = if i % 2 == 0 { wa } else { wb };
            assert!(s.descriptors.iter().all(|d| v.quantize(d) == expected));
        }
        // each word appears in half the images
        assert!((v.idf(wa) as f64 - 2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn identical_descriptors_collapse_to_one_word() {
        let d = Descriptor([7, 8, 9, 10]);
        let sets: Vec<FeatureSet> = (0..3).map(|_| fs(vec![d; 30])).collect();
        let v = Vocabulary::train(&sets, 10, 4, 1).unwrap();
        assert_eq!(v.word_count(), 1);
        let bows: Vec<BowVector> = sets.iter().map(|s| v.transform(s)).collect();
        assert!(bows.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn training_is_deterministic_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let sets: Vec<FeatureSet> = (0..8)
            .map(|_| fs((0..150).map(|_| random_desc(&mut rng)).collect()))
            .collect();
        let a = Vocabulary::train(&sets, 5, 3, 77).unwrap();
        let b = Vocabulary::train(&sets, 5, 3, 77).unwrap();
        assert_eq!(a, b);
        assert!(a.word_count() <= 125);
        assert!(a.nodes().iter().all(|n| n.idf >= 0.0));
        let roundtrip = Vocabulary::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(roundtrip, a);
    }

    #[test]
    fn rejects_too_few_descriptors_and_bad_bytes() {
        let sets = vec![fs(vec![Descriptor::default(); 3])];
        assert!(matches!(
            Vocabulary::train(&sets, 10, 2, 0),
            Err(Error::InsufficientDescriptors { needed: 10, got: 3 })
        ));
        assert!(Vocabulary::from_bytes(b"VLMAVOC0").is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sets: Vec<FeatureSet> = (0..2)
            .map(|_| fs((0..40).map(|_| random_desc(&mut rng)).collect()))
            .collect();
        let mut bytes = Vocabulary::train(&sets, 3, 2, 0).unwrap().to_bytes();
        bytes.push(0);
        assert!(Vocabulary::from_bytes(&bytes).is_err());
        bytes.truncate(bytes.len() - 3);
        assert!(Vocabulary::from_bytes(&bytes).is_err());
    }

    fn vocab_and_bows(n: usize, seed: u64) -> (Vocabulary, Vec<FeatureSet>, Vec<BowVector>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sets: Vec<FeatureSet> = (0..n)
            .map(|_| fs((0..200).map(|_| random_desc(&mut rng)).collect()))
            .collect();
        let v = Vocabulary::train(&sets, 6, 3, 5).unwrap();
        let bows = sets.iter().map(|s| v.transform(s)).collect();
        (v, sets, bows)
    }

    #[test]
    fn bow_vectors_are_normalized_and_self_similar() {
        let (_, _, bows) = vocab_and_bows(6, 3);
        for b in &bows {
            assert!((b.total() - 1.0).abs() < 1e-6);
            assert!((b.similarity(b) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn disjoint_support_scores_zero() {
        let a = BowVector(vec![(0, 0.5), (2, 0.5)]);
        let b = BowVector(vec![(1, 0.25), (3, 0.75)]);
        let mut db = ImageDatabase::new();
        db.insert(1.0, b.clone());
        db.insert(2.0, b);
        let res = db.query(&a, 5).unwrap();
        assert!(res.iter().all(|r| r.1 == 0.0));
        assert_eq!(res[0].0, 1.0);
    }

    #[test]
    fn perturbed_query_ranks_source_first() {
        let (v, sets, bows) = vocab_and_bows(10, 8);
        let mut db = ImageDatabase::new();
        for (i, b) in bows.iter().enumerate() {
            db.insert(i as f64, b.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut q = sets[7].clone();
        for d in q.descriptors.iter_mut().take(60) {
            *d = random_desc(&mut rng);
        }
        let qb = v.transform(&q);
        // brute-force L1 oracle on dense vectors
        let dense = |b: &BowVector| {
            let mut out = vec![0.0; v.word_count()];
            for (w, x) in &b.0 {
                out[*w as usize] = *x;
            }
            out
        };
        let dq = dense(&qb);
        let oracle: Vec<f64> = bows
            .iter()
            .map(|b| {
                let db_ = dense(b);
                1.0 - 0.5 * dq.iter().zip(&db_).map(|(x, y)| (x - y).abs()).sum::<f64>()
            })
            .collect();
        let res = db.query(&qb, 10).unwrap();
        assert_eq!(res[0].0, 7.0);
        for (t, s) in &res {
            assert!((oracle[*t as usize] - s).abs() < 1e-9);
        }
        let exact = db.query(&bows[7], 1).unwrap();
        assert_eq!(exact[0].0, 7.0);
        assert!((exact[0].1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn insertion_order_does_not_change_ranking() {
        let (_, _, bows) = vocab_and_bows(6, 21);
        let mut fwd = ImageDatabase::new();
        let mut rev = ImageDatabase::new();
        for (i, b) in bows.iter().enumerate() {
            fwd.insert(i as f64, b.clone());
        }
        for (i, b) in bows.iter().enumerate().rev() {
            rev.insert(i as f64, b.clone());
        }
        // duplicate score ties resolved by timestamp
        fwd.insert(10.0, bows[2].clone());
        rev.insert(10.0, bows[2].clone());
        assert_eq!(fwd.query(&bows[2], 7).unwrap(), rev.query(&bows[2], 7).unwrap());
        assert!(ImageDatabase::new().query(&bows[0], 1).is_err());
    }
}
