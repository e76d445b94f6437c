//! Translation-based embedding pre-training, K-means clustering of entity
//! vectors, and the cluster-level graph lifted from entity edges.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::nn::tensor::{cosine, l2_norm};
use crate::nn::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClusterId(pub u32);

/// Frozen entity and relation vectors, d components each, row-major.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub d: usize,
    n_entities: usize,
    n_relations: usize,
    entity_data: Vec<f64>,
    relation_data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(d: usize, n_entities: usize, n_relations: usize) -> Self {
        Self {
            d,
            n_entities,
            n_relations,
            entity_data: vec![0.0; n_entities * d],
            relation_data: vec![0.0; n_relations * d],
        }
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn n_relations(&self) -> usize {
        self.n_relations
    }

    pub fn entity(&self, e: EntityId) -> &[f64] {
        let i = e.0 as usize;
        &self.entity_data[i * self.d..(i + 1) * self.d]
    }

    pub fn relation(&self, r: RelationId) -> &[f64] {
        let i = r.0 as usize;
        &self.relation_data[i * self.d..(i + 1) * self.d]
    }

    fn entity_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.entity_data[i * self.d..(i + 1) * self.d]
    }

    fn relation_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.relation_data[i * self.d..(i + 1) * self.d]
    }

    pub fn entity_rows(&self) -> &[f64] {
        &self.entity_data
    }

    pub fn relation_rows(&self) -> &[f64] {
        &self.relation_data
    }

    pub fn from_rows(
        d: usize,
        n_entities: usize,
        n_relations: usize,
        entity_data: Vec<f64>,
        relation_data: Vec<f64>,
    ) -> Self {
        assert_eq!(entity_data.len(), n_entities * d);
        assert_eq!(relation_data.len(), n_relations * d);
        Self {
            d,
            n_entities,
            n_relations,
            entity_data,
            relation_data,
        }
    }

    /// Bit-pattern hash over both tables; entity vectors are frozen during
    /// policy training and this is how tests assert it.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for v in self.entity_data.iter().chain(&self.relation_data) {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    fn normalize_entities(&mut self) {
        for i in 0..self.n_entities {
            let row = self.entity_mut(i);
            let norm = l2_norm(row);
            if norm > 0.0 {
                for v in row {
                    *v /= norm;
                }
            }
        }
    }
}

/// Translation score -||h + r - t||_2; closer to zero means more plausible.
pub fn transe_score(h: EntityId, r: RelationId, t: EntityId, table: &EmbeddingTable) -> f64 {
    let hv = table.entity(h);
    let rv = table.relation(r);
    let tv = table.entity(t);
    let mut sq = 0.0;
    for i in 0..table.d {
        let diff = hv[i] + rv[i] - tv[i];
        sq += diff * diff;
    }
    -sq.sqrt()
}

#[derive(Debug, Clone)]
pub struct TranseConfig {
    pub d: usize,
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
    pub neg_samples: usize,
    pub seed: u64,
}

impl Default for TranseConfig {
    fn default() -> Self {
        Self {
            d: 50,
            margin: 1.0,
            lr: 0.01,
            epochs: 1000,
            neg_samples: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TranseReport {
    /// mean score(true) - mean score(freshly corrupted) on a tenth of the
    /// facts set aside for evaluation (all facts when fewer than ten exist).
    pub holdout_gap: f64,
    pub holdout_size: usize,
}

/// Corrupt head or tail (coin flip) with a uniform entity different from the
/// one it replaces.
fn corrupt(pos: Triple, n_entities: usize, rng: &mut impl Rng) -> Triple {
    let corrupt_head = rng.gen_bool(0.5);
    let original = if corrupt_head { pos.head } else { pos.tail };
    let mut replacement = EntityId(rng.gen_range(0..n_entities as u32));
    if n_entities > 1 {
        while replacement == original {
            replacement = EntityId(rng.gen_range(0..n_entities as u32));
        }
    }
    if corrupt_head {
        Triple {
            head: replacement,
            ..pos
        }
    } else {
        Triple {
            tail: replacement,
            ..pos
        }
    }
}

/// Margin-ranking training with uniform head-or-tail corruption. Entity
/// vectors are L2-normalized after every epoch. The returned report measures
/// score separation against fresh corruptions on a tenth of the facts.
pub fn transe_train(
    facts: &[Triple],
    n_entities: usize,
    n_relations: usize,
    cfg: &TranseConfig,
) -> Result<(EmbeddingTable, TranseReport)> {
    if facts.is_empty() {
        return Err(Error::Invalid("transe_train requires at least one fact".into()));
    }
    if cfg.d == 0 {
        return Err(Error::Config("embedding size must be positive".into()));
    }
    if cfg.epochs == 0 {
        return Err(Error::Config("pre-training epochs must be positive".into()));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, "transe"));
    let mut table = EmbeddingTable::new(cfg.d, n_entities, n_relations);
    let bound = 6.0 / (cfg.d as f64).sqrt();
    for i in 0..n_entities {
        for v in table.entity_mut(i) {
            *v = rng.gen_range(-bound..bound);
        }
    }
    for i in 0..n_relations {
        for v in table.relation_mut(i) {
            *v = rng.gen_range(-bound..bound);
        }
    }
    table.normalize_entities();

    // A tenth of the facts is set aside for the separation check.
    let mut order: Vec<usize> = (0..facts.len()).collect();
    shuffle(&mut order, &mut rng);
    let holdout_size = facts.len() / 10;
    let holdout: Vec<Triple> = order[..holdout_size].iter().map(|&i| facts[i]).collect();

    let mut epoch_order: Vec<usize> = (0..facts.len()).collect();
    for _epoch in 0..cfg.epochs {
        shuffle(&mut epoch_order, &mut rng);
        for &ti in &epoch_order {
            let pos = facts[ti];
            for _ in 0..cfg.neg_samples.max(1) {
                let neg = corrupt(pos, n_entities, &mut rng);
                let (pos_dist, pos_dir) = translation_residual(&table, pos);
                let (neg_dist, neg_dir) = translation_residual(&table, neg);
                let loss = cfg.margin + pos_dist - neg_dist;
                if loss <= 0.0 {
                    continue;
                }
                // Pull the true triple together, push the corrupted one
                // apart. The relation vector appears in both residuals.
                apply_translation_grad(&mut table, pos, &pos_dir, -cfg.lr);
                apply_translation_grad(&mut table, neg, &neg_dir, cfg.lr);
            }
        }
        table.normalize_entities();
    }

    let eval_set: &[Triple] = if holdout.is_empty() { facts } else { &holdout };
    let mut true_mean = 0.0;
    let mut corrupt_mean = 0.0;
    for &t in eval_set {
        true_mean += transe_score(t.head, t.relation, t.tail, &table);
        let neg = corrupt(t, n_entities, &mut rng);
        corrupt_mean += transe_score(neg.head, neg.relation, neg.tail, &table);
    }
    let n = eval_set.len() as f64;
    Ok((
        table,
        TranseReport {
            holdout_gap: (true_mean - corrupt_mean) / n,
            holdout_size: eval_set.len(),
        },
    ))
}

/// (||h + r - t||, unit residual direction); the direction is zero when the
/// residual vanishes.
fn translation_residual(table: &EmbeddingTable, t: Triple) -> (f64, Vec<f64>) {
    let hv = table.entity(t.head);
    let rv = table.relation(t.relation);
    let tv = table.entity(t.tail);
    let mut dir: Vec<f64> = (0..table.d).map(|i| hv[i] + rv[i] - tv[i]).collect();
    let norm = l2_norm(&dir);
    if norm > 0.0 {
        for v in &mut dir {
            *v /= norm;
        }
    } else {
        for v in &mut dir {
            *v = 0.0;
        }
    }
    (norm, dir)
}

/// Move (head, relation, tail) along the residual direction by `step`.
fn apply_translation_grad(table: &mut EmbeddingTable, t: Triple, dir: &[f64], step: f64) {
    let d = table.d;
    let h = t.head.0 as usize;
    let r = t.relation.0 as usize;
    let tl = t.tail.0 as usize;
    for i in 0..d {
        table.entity_data[h * d + i] += step * dir[i];
        table.relation_data[r * d + i] += step * dir[i];
        table.entity_data[tl * d + i] -= step * dir[i];
    }
}

fn shuffle(xs: &mut [usize], rng: &mut impl Rng) {
    for i in (1..xs.len()).rev() {
        let j = rng.gen_range(0..=i);
        xs.swap(i, j);
    }
}

#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub assignment: Vec<u32>,
    pub centroids: Vec<f64>,
    /// Inertia measured after every assignment pass; non-increasing.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

/// Lloyd's algorithm over row-major points. Empty clusters are reseeded to
/// the point farthest from its assigned centroid. Terminates on an
/// assignment fixpoint or after `max_iters` passes.
pub fn kmeans(
    points: &[f64],
    n_points: usize,
    d: usize,
    n_clusters: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KmeansResult> {
    if n_clusters == 0 {
        return Err(Error::Config("cluster number must be positive".into()));
    }
    if n_clusters > n_points {
        return Err(Error::Invalid(format!(
            "cluster number {n_clusters} exceeds point count {n_points}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, "kmeans"));
    // Seed centroids with a random sample of distinct points.
    let mut indices: Vec<usize> = (0..n_points).collect();
    shuffle(&mut indices, &mut rng);
    let mut centroids: Vec<f64> = Vec::with_capacity(n_clusters * d);
    for &i in indices.iter().take(n_clusters) {
        centroids.extend_from_slice(&points[i * d..(i + 1) * d]);
    }

    let mut assignment = vec![0u32; n_points];
    let mut inertia_trace = Vec::new();
    let mut iterations = 0;
    for _iter in 0..max_iters {
        iterations += 1;
        // Assignment pass (ties go to the lower cluster index).
        let mut changed = false;
        let mut inertia = 0.0;
        for p in 0..n_points {
            let pv = &points[p * d..(p + 1) * d];
            let mut best = 0usize;
            let mut best_dist = f64::INFINITY;
            for c in 0..n_clusters {
                let cv = &centroids[c * d..(c + 1) * d];
                let dist = sq_dist(pv, cv);
                if dist < best_dist {
                    best_dist = dist;
                    best = c;
                }
            }
            inertia += best_dist;
            if assignment[p] != best as u32 {
                assignment[p] = best as u32;
                changed = true;
            }
        }

        // Reseed empty clusters to the farthest point from its centroid.
        let mut counts = vec![0usize; n_clusters];
        for &a in &assignment {
            counts[a as usize] += 1;
        }
        for c in 0..n_clusters {
            if counts[c] > 0 {
                continue;
            }
            let mut far_point = 0usize;
            let mut far_dist = -1.0;
            for p in 0..n_points {
                let a = assignment[p] as usize;
                if counts[a] <= 1 {
                    continue; // do not empty another cluster
                }
                let dist = sq_dist(
                    &points[p * d..(p + 1) * d],
                    &centroids[a * d..(a + 1) * d],
                );
                if dist > far_dist {
                    far_dist = dist;
                    far_point = p;
                }
            }
            log::info!("reseeding empty cluster {c} to point {far_point}");
            counts[assignment[far_point] as usize] -= 1;
            assignment[far_point] = c as u32;
            counts[c] = 1;
            centroids[c * d..(c + 1) * d]
                .copy_from_slice(&points[far_point * d..(far_point + 1) * d]);
            changed = true;
        }
        inertia_trace.push(inertia);

        // Update pass: centroid = mean of members.
        let mut sums = vec![0.0; n_clusters * d];
        for p in 0..n_points {
            let a = assignment[p] as usize;
            for i in 0..d {
                sums[a * d + i] += points[p * d + i];
            }
        }
        for c in 0..n_clusters {
            if counts[c] > 0 {
                for i in 0..d {
                    centroids[c * d + i] = sums[c * d + i] / counts[c] as f64;
                }
            }
        }

        if !changed && iterations > 1 {
            break;
        }
    }

    Ok(KmeansResult {
        assignment,
        centroids,
        inertia_trace,
        iterations,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Entity-to-cluster assignment, centroids, trainable cluster parts and the
/// lifted cluster adjacency.
#[derive(Debug, Clone)]
pub struct ClusterModel {
    pub n_clusters: usize,
    pub d: usize,
    pub assignment: Vec<ClusterId>,
    /// n_clusters x d, mean of member entity vectors.
    pub centroids: Vec<f64>,
    /// n_clusters x d, learned half of each cluster embedding.
    pub learned_parts: Vec<f64>,
    /// Per-cluster sorted successor list; always contains the self-edge.
    pub adjacency: Vec<Vec<ClusterId>>,
}

impl ClusterModel {
    pub fn cluster_of(&self, e: EntityId) -> ClusterId {
        self.assignment[e.0 as usize]
    }

    pub fn centroid(&self, c: ClusterId) -> &[f64] {
        let i = c.0 as usize;
        &self.centroids[i * self.d..(i + 1) * self.d]
    }

    pub fn learned_part(&self, c: ClusterId) -> &[f64] {
        let i = c.0 as usize;
        &self.learned_parts[i * self.d..(i + 1) * self.d]
    }

    pub fn candidates(&self, c: ClusterId) -> &[ClusterId] {
        &self.adjacency[c.0 as usize]
    }

    /// Cosine similarity between two cluster centroids; exactly 1 for the
    /// same cluster.
    pub fn centroid_cosine(&self, a: ClusterId, b: ClusterId) -> Result<f64> {
        if a == b {
            return Ok(1.0);
        }
        cosine(self.centroid(a), self.centroid(b))
    }
}

/// Lift entity edges to cluster edges: (A,B) is present iff at least one
/// entity edge crosses A -> B. Every cluster also gets a self-edge.
pub fn build_cluster_graph(
    graph: &KnowledgeGraph,
    assignment: &[ClusterId],
    n_clusters: usize,
) -> Vec<Vec<ClusterId>> {
    let mut sets: Vec<std::collections::BTreeSet<ClusterId>> =
        vec![std::collections::BTreeSet::new(); n_clusters];
    for (c, set) in sets.iter_mut().enumerate() {
        set.insert(ClusterId(c as u32));
    }
    for (e, _r, t) in graph.edges() {
        let a = assignment[e.0 as usize];
        let b = assignment[t.0 as usize];
        sets[a.0 as usize].insert(b);
    }
    sets.into_iter().map(|s| s.into_iter().collect()).collect()
}

/// Recompute centroids from an assignment; members average to the stored
/// centroid within 1e-9 by construction.
pub fn centroids_from_assignment(
    points: &[f64],
    d: usize,
    assignment: &[ClusterId],
    n_clusters: usize,
) -> Vec<f64> {
    let mut sums = vec![0.0; n_clusters * d];
    let mut counts = vec![0usize; n_clusters];
    for (p, &a) in assignment.iter().enumerate() {
        counts[a.0 as usize] += 1;
        for i in 0..d {
            sums[a.0 as usize * d + i] += points[p * d + i];
        }
    }
    for c in 0..n_clusters {
        if counts[c] > 0 {
            for i in 0..d {
                sums[c * d + i] /= counts[c] as f64;
            }
        }
    }
    sums
}

/// Assemble the full cluster model from a clustering result.
pub fn build_cluster_model(
    graph: &KnowledgeGraph,
    result: &KmeansResult,
    d: usize,
    n_clusters: usize,
    seed: u64,
) -> ClusterModel {
    let assignment: Vec<ClusterId> = result.assignment.iter().map(|&a| ClusterId(a)).collect();
    let adjacency = build_cluster_graph(graph, &assignment, n_clusters);
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, "cluster_parts"));
    let bound = 1.0 / (d as f64).sqrt();
    let learned_parts: Vec<f64> = (0..n_clusters * d)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    ClusterModel {
        n_clusters,
        d,
        assignment,
        centroids: result.centroids.clone(),
        learned_parts,
        adjacency,
    }
}
