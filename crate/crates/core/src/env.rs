//! Synchronized entity-level and cluster-level decision processes: states,
//! deterministic transitions, terminal rewards, the cross-level similarity
//! signal, guidance labels and potential-based shaping deltas.

use crate::embed::{ClusterId, ClusterModel, EmbeddingTable};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, QuerySample, RelationId, RelationVocab};
use crate::nn::tensor::cosine;

/// Entity-level walker state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntityState {
    pub current: EntityId,
    pub source: EntityId,
    pub query: RelationId,
    pub step: usize,
}

/// Cluster-level walker state. Target clusters exist only in training mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterState {
    pub current: ClusterId,
    pub targets: Vec<ClusterId>,
    pub step: usize,
}

/// Distinct clusters of a query's answer entities, sorted.
pub fn answer_clusters(query: &QuerySample, clusters: &ClusterModel) -> Vec<ClusterId> {
    let mut targets: Vec<ClusterId> = query
        .answers
        .iter()
        .map(|&e| clusters.cluster_of(e))
        .collect();
    targets.sort_unstable();
    targets.dedup();
    targets
}

/// Place both walkers at the query source; in training mode the cluster state
/// carries the clusters of all answer entities as targets.
pub fn reset(
    query: &QuerySample,
    clusters: &ClusterModel,
    training: bool,
) -> (EntityState, ClusterState) {
    let entity = EntityState {
        current: query.source,
        source: query.source,
        query: query.relation,
        step: 0,
    };
    let cluster = ClusterState {
        current: clusters.cluster_of(query.source),
        targets: if training {
            answer_clusters(query, clusters)
        } else {
            Vec::new()
        },
        step: 0,
    };
    (entity, cluster)
}

/// Deterministic entity transition; the action must be an outgoing edge of
/// the current entity.
pub fn step_entity(
    graph: &KnowledgeGraph,
    state: &EntityState,
    action: (RelationId, EntityId),
) -> Result<EntityState> {
    if !graph.action_space(state.current).contains(&action) {
        return Err(Error::Invalid(format!(
            "illegal action ({}, {}) at entity {}",
            action.0, action.1, state.current
        )));
    }
    Ok(EntityState {
        current: action.1,
        step: state.step + 1,
        ..*state
    })
}

/// Deterministic cluster transition; the destination must be adjacent.
pub fn step_cluster(
    clusters: &ClusterModel,
    state: &ClusterState,
    destination: ClusterId,
) -> Result<ClusterState> {
    if !clusters.candidates(state.current).contains(&destination) {
        return Err(Error::Invalid(format!(
            "illegal cluster action {} at cluster {}",
            destination.0, state.current.0
        )));
    }
    Ok(ClusterState {
        current: destination,
        targets: state.targets.clone(),
        step: state.step + 1,
    })
}

/// Terminal reward: 1 iff the final entity is one of the answers.
pub fn default_entity_reward(final_entity: EntityId, answers: &[EntityId]) -> f64 {
    if answers.contains(&final_entity) {
        1.0
    } else {
        0.0
    }
}

/// Terminal reward: 1 iff the final cluster is one of the answer clusters.
pub fn default_cluster_reward(final_cluster: ClusterId, targets: &[ClusterId]) -> f64 {
    if targets.contains(&final_cluster) {
        1.0
    } else {
        0.0
    }
}

/// Cross-level state similarity: cosine between the current cluster's
/// centroid and the current entity's embedding.
pub fn state_distance(
    clusters: &ClusterModel,
    table: &EmbeddingTable,
    cluster: ClusterId,
    entity: EntityId,
) -> Result<f64> {
    cosine(clusters.centroid(cluster), table.entity(entity))
}

/// Guidance label: 0 when the similarity already clears delta/(r_c + eps),
/// 1 otherwise (more guidance wanted). The boundary case counts as cleared.
pub fn guidance_label(distance: f64, r_c: f64, delta: f64, epsilon: f64) -> f64 {
    debug_assert!(epsilon > 0.0);
    if distance >= delta / (r_c + epsilon) {
        0.0
    } else {
        1.0
    }
}

/// Potential of a cluster state: best centroid cosine against any target
/// cluster; exactly 1 on a target.
pub fn cluster_potential(
    clusters: &ClusterModel,
    cluster: ClusterId,
    targets: &[ClusterId],
) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for &t in targets {
        let c = clusters.centroid_cosine(cluster, t)?;
        if c > best {
            best = c;
        }
    }
    if best == f64::NEG_INFINITY {
        return Err(Error::Invalid(
            "cluster potential requires at least one target".into(),
        ));
    }
    Ok(best)
}

/// Shaping delta between consecutive cluster states: potential(before) -
/// potential(after).
pub fn shaping_delta(
    clusters: &ClusterModel,
    before: ClusterId,
    after: ClusterId,
    targets: &[ClusterId],
) -> Result<f64> {
    Ok(cluster_potential(clusters, before, targets)? - cluster_potential(clusters, after, targets)?)
}

/// One synchronized step of a rollout; states are the pre-action states.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub entity: EntityId,
    pub cluster: ClusterId,
    /// Index into the entity action space at `entity`.
    pub entity_action: usize,
    /// Index into the cluster candidate list at `cluster`.
    pub cluster_action: usize,
    pub entity_log_prob: f64,
    pub cluster_log_prob: f64,
    /// Terminal-convention per-step rewards: zero except on the last record,
    /// which carries the reward for arriving at the final state.
    pub entity_reward: f64,
    pub cluster_reward: f64,
    /// Cross-level similarity at the pre-action states.
    pub distance: f64,
    pub lambda: f64,
    /// Guidance label fed to the multiplier network.
    pub label: f64,
    /// Potential(state) - potential(next state); zero at evaluation time.
    pub delta: f64,
}

/// A full synchronized trajectory of both walkers.
#[derive(Debug, Clone)]
pub struct DualRollout {
    pub query: QuerySample,
    pub targets: Vec<ClusterId>,
    pub records: Vec<StepRecord>,
    pub final_entity: EntityId,
    pub final_cluster: ClusterId,
}

impl DualRollout {
    pub fn horizon(&self) -> usize {
        self.records.len()
    }
}

/// Export a rollout as CSV: step, entity, cluster, action, logprob_e,
/// logprob_c, D, lambda, y, delta.
pub fn rollout_to_csv(rollout: &DualRollout) -> String {
    let mut out =
        String::from("step,entity,cluster,action,logprob_e,logprob_c,distance,lambda,y,delta\n");
    for (t, r) in rollout.records.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            t,
            r.entity,
            r.cluster.0,
            r.entity_action,
            r.entity_log_prob,
            r.cluster_log_prob,
            r.distance,
            r.lambda,
            r.label,
            r.delta
        ));
    }
    out
}

/// Shared read-only bundle every walker needs.
#[derive(Clone, Copy)]
pub struct World<'a> {
    pub graph: &'a KnowledgeGraph,
    pub relations: &'a RelationVocab,
    pub table: &'a EmbeddingTable,
    pub clusters: &'a ClusterModel,
}
