//! Policy networks for the two walkers and the state-dependent trade-off
//! multiplier.
//!
//! The cluster-level agent (giant) and the entity-level agent (dwarf) each
//! run a three-layer LSTM whose layer-1 hidden state is overridden by a
//! projection mixing the other agent's previous hidden state; scoring heads
//! rank candidate actions against a two-layer feedforward summary of the
//! current state. The dwarf additionally aggregates its neighborhood with a
//! single-head graph attention over the frozen entity embeddings.

use rand::Rng;

use crate::embed::ClusterId;
use crate::env::World;
use crate::error::{Error, Result};
use crate::kg::{EntityId, RelationId};
use crate::nn::lstm::{lstm_stack_step, LstmStackParams, LstmStackState, LstmStackVars};
use crate::nn::store::{ParamId, ParamStore};
use crate::nn::tape::{Tape, VarId};
use crate::nn::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Cluster-level agent parameters. With embedding size d the LSTM hidden is
/// 2d, the mixing projection is 2d x 4d and both scoring matrices are 4d x 4d.
#[derive(Debug, Clone)]
pub struct GiantParams {
    pub lstm: LstmStackParams,
    pub mix: ParamId,
    pub score1: ParamId,
    pub score2: ParamId,
    ///

    /// Trainable half of every cluster embedding, n_clusters x d.
    pub cluster_parts: ParamId,
}

/// Entity-level agent parameters: mixing projection 2d x 5d, attention
/// transform d x d with a 2d attention vector, scoring matrices 6d x 6d, and
/// the fine-tuned relation embeddings.
#[derive(Debug, Clone)]
pub struct DwarfParams {
    pub lstm: LstmStackParams,
    pub mix: ParamId,
    pub attn_w: ParamId,
    pub attn_a: ParamId,
    pub score1: ParamId,
    pub score2: ParamId,
    /// n_relations x d, initialized from pre-training and fine-tuned.
    pub relation_embeddings: ParamId,
}

/// Two-layer multiplier network 4d -> 2d -> 1 with ReLU then sigmoid, so the
/// output is strictly inside (0, 1).
#[derive(Debug, Clone)]
pub struct LambdaParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct PolicyParams {
    pub d: usize,
    pub giant: GiantParams,
    pub dwarf: DwarfParams,
    pub lambda: LambdaParams,
}

impl PolicyParams {
    /// Register all parameters with fresh initialization. Relation embeddings
    /// start from `relation_init` (row-major n_relations x d) and the cluster
    /// parts from `cluster_parts_init` (n_clusters x d).
    pub fn register(
        store: &mut ParamStore,
        d: usize,
        relation_init: Tensor,
        cluster_parts_init: Tensor,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let h = 2 * d;
        let giant = GiantParams {
            lstm: LstmStackParams::register(store, "giant", h, h, rng)?,
            mix: store.add_uniform("giant.mix", &[h, 4 * d], 4 * d, rng)?,
            score1: store.add_uniform("giant.score1", &[4 * d, 4 * d], 4 * d, rng)?,
            score2: store.add_uniform("giant.score2", &[4 * d, 4 * d], 4 * d, rng)?,
            cluster_parts: store.add("giant.cluster_parts", cluster_parts_init)?,
        };
        let dwarf = DwarfParams {
            lstm: LstmStackParams::register(store, "dwarf", h, h, rng)?,
            mix: store.add_uniform("dwarf.mix", &[h, 5 * d], 5 * d, rng)?,
            attn_w: store.add_uniform("dwarf.attn_w", &[d, d], d, rng)?,
            attn_a: store.add_uniform("dwarf.attn_a", &[2 * d], 2 * d, rng)?,
            score1: store.add_uniform("dwarf.score1", &[6 * d, 6 * d], 6 * d, rng)?,
            score2: store.add_uniform("dwarf.score2", &[6 * d, 6 * d], 6 * d, rng)?,
            relation_embeddings: store.add("dwarf.relation_embeddings", relation_init)?,
        };
        let lambda = LambdaParams {
            w1: store.add_uniform("lambda.w1", &[h, 4 * d], 4 * d, rng)?,
            b1: store.add("lambda.b1", Tensor::zeros(&[h]))?,
            w2: store.add_uniform("lambda.w2", &[1, h], h, rng)?,
            b2: store.add("lambda.b2", Tensor::zeros(&[1]))?,
        };
        Ok(Self {
            d,
            giant,
            dwarf,
            lambda,
        })
    }

    /// Resolve handles against an already-populated store (checkpoint load).
    pub fn resolve(store: &ParamStore, d: usize) -> Result<Self> {
        let find = |name: &str| {
            store
                .find(name)
                .ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))
        };
        let h = 2 * d;
        Ok(Self {
            d,
            giant: GiantParams {
                lstm: LstmStackParams::resolve(store, "giant", h)?,
                mix: find("giant.mix")?,
                score1: find("giant.score1")?,
                score2: find("giant.score2")?,
                cluster_parts: find("giant.cluster_parts")?,
            },
            dwarf: DwarfParams {
                lstm: LstmStackParams::resolve(store, "dwarf", h)?,
                mix: find("dwarf.mix")?,
                attn_w: find("dwarf.attn_w")?,
                attn_a: find("dwarf.attn_a")?,
                score1: find("dwarf.score1")?,
                score2: find("dwarf.score2")?,
                relation_embeddings: find("dwarf.relation_embeddings")?,
            },
            lambda: LambdaParams {
                w1: find("lambda.w1")?,
                b1: find("lambda.b1")?,
                w2: find("lambda.w2")?,
                b2: find("lambda.b2")?,
            },
        })
    }
}

/// Assert the declared parameter shapes for embedding size d, `n_relations`
/// relations and `n_clusters` clusters. Called whenever a checkpoint is
/// loaded.
pub fn validate_param_shapes(
    store: &ParamStore,
    d: usize,
    n_relations: usize,
    n_clusters: usize,
) -> Result<()> {
    let expect = |name: &str, shape: &[usize]| -> Result<()> {
        let id = store
            .find(name)
            .ok_or_else(|| Error::Shape(format!("missing parameter {name}")))?;
        let got = store.value(id).shape();
        if got != shape {
            return Err(Error::Shape(format!(
                "{name} has shape {got:?}, expected {shape:?}"
            )));
        }
        Ok(())
    };
    let h = 2 * d;
    expect("giant.mix", &[h, 4 * d])?;
    expect("giant.score1", &[4 * d, 4 * d])?;
    expect("giant.score2", &[4 * d, 4 * d])?;
    expect("giant.cluster_parts", &[n_clusters, d])?;
    expect("dwarf.mix", &[h, 5 * d])?;
    expect("dwarf.score1", &[6 * d, 6 * d])?;
    expect("dwarf.score2", &[6 * d, 6 * d])?;
    expect("dwarf.attn_w", &[d, d])?;
    expect("dwarf.attn_a", &[2 * d])?;
    expect("dwarf.relation_embeddings", &[n_relations, d])?;
    expect("lambda.w1", &[h, 4 * d])?;
    expect("lambda.b1", &[h])?;
    expect("lambda.w2", &[1, h])?;
    expect("lambda.b2", &[1])?;
    for agent in ["giant", "dwarf"] {
        for layer in 1..=crate::nn::lstm::STACK_LAYERS {
            for gate in ["wxi", "wxf", "wxg", "wxo", "whi", "whf", "whg", "who"] {
                expect(&format!("{agent}.lstm{layer}.{gate}"), &[h, h])?;
            }
            for bias in ["bi", "bf", "bg", "bo"] {
                expect(&format!("{agent}.lstm{layer}.{bias}"), &[h])?;
            }
        }
    }
    Ok(())
}

/// Cluster embedding [centroid; learned part] as a tape variable.
pub fn cluster_embedding(
    tape: &mut Tape,
    gp: &GiantParams,
    world: &World,
    cluster: ClusterId,
) -> VarId {
    let centroid = tape.constant_vec(world.clusters.centroid(cluster));
    let part = tape.gather_row(gp.cluster_parts, cluster.0 as usize);
    tape.concat(&[centroid, part])
}

pub struct GiantStepOut {
    pub logits: VarId,
    pub probs: VarId,
    pub new_stack: LstmStackVars,
    pub hidden: VarId,
}

/// One cluster-agent step: layer-1 override mixes [own prev hidden; other
/// agent's prev hidden], the head scores each candidate cluster embedding
/// tiled to 4d against the state summary.
pub fn giant_step(
    tape: &mut Tape,
    gp: &GiantParams,
    prev_stack: &LstmStackVars,
    prev_action_emb: VarId,
    prev_dwarf_hidden: VarId,
    current_cluster_emb: VarId,
    candidate_embs: &[VarId],
) -> Result<GiantStepOut> {
    if candidate_embs.is_empty() {
        return Err(Error::Invalid("giant_step with no candidate clusters".into()));
    }
    let prev_hidden = prev_stack.top_hidden();
    let mix_in = tape.concat(&[prev_hidden, prev_dwarf_hidden]);
    let override_h = tape.matvec(gp.mix, mix_in);
    let (new_stack, hidden) = lstm_stack_step(tape, &gp.lstm, prev_stack, prev_action_emb, override_h);

    let head_in = tape.concat(&[current_cluster_emb, hidden]);
    let pre = tape.matvec(gp.score1, head_in);
    let act = tape.relu(pre);
    let summary = tape.matvec(gp.score2, act);

    let mut logit_vars = Vec::with_capacity(candidate_embs.len());
    for &cand in candidate_embs {
        let row = tape.concat(&[cand, cand]);
        logit_vars.push(tape.dot(row, summary));
    }
    let logits = tape.concat(&logit_vars);
    let probs = tape.softmax(logits);
    Ok(GiantStepOut {
        logits,
        probs,
        new_stack,
        hidden,
    })
}

/// Graph-attention aggregation over the current entity's neighborhood
/// (distinct neighbor entities, self included). Attention weights come from
/// a leaky-ReLU scored pair of transformed embeddings, softmax-normalized.
pub fn dwarf_attention(tape: &mut Tape, dp: &DwarfParams, world: &World, entity: EntityId) -> VarId {
    let neighbors = world.graph.neighbors(entity);
    let self_emb = tape.constant_vec(world.table.entity(entity));
    let w_self = tape.matvec(dp.attn_w, self_emb);
    let attn_vec = tape.param(dp.attn_a);

    let mut transformed = Vec::with_capacity(neighbors.len());
    let mut scores = Vec::with_capacity(neighbors.len());
    for &n in &neighbors {
        let emb = tape.constant_vec(world.table.entity(n));
        let w_n = tape.matvec(dp.attn_w, emb);
        let pair = tape.concat(&[w_self, w_n]);
        let raw = tape.dot(attn_vec, pair);
        scores.push(tape.leaky_relu(raw, LEAKY_SLOPE));
        transformed.push(w_n);
    }
    let score_vec = tape.concat(&scores);
    let weights = tape.softmax(score_vec);

    let mut acc: Option<VarId> = None;
    for (j, &w_n) in transformed.iter().enumerate() {
        let wj = tape.pick(weights, j);
        let term = tape.scale_var(w_n, wj);
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term),
        });
    }
    acc.expect("neighbor set always contains the entity itself")
}

pub struct DwarfInputs {
    pub entity_emb: VarId,
    pub last_relation_emb: VarId,
    pub query_emb: VarId,
    pub attention: VarId,
}

pub struct DwarfStepOut {
    pub logits: VarId,
    pub probs: VarId,
    pub new_stack: LstmStackVars,
    pub hidden: VarId,
}

/// One entity-agent step: layer-1 override mixes [own prev hidden; prev
/// attention; other agent's prev hidden]; the head scores each candidate
/// (relation, entity) embedding pair tiled to 6d.
#[allow(clippy::too_many_arguments)]
pub fn dwarf_step(
    tape: &mut Tape,
    dp: &DwarfParams,
    prev_stack: &LstmStackVars,
    prev_action_emb: VarId,
    prev_attention: VarId,
    prev_giant_hidden: VarId,
    inputs: &DwarfInputs,
    candidate_embs: &[(VarId, VarId)],
) -> Result<DwarfStepOut> {
    if candidate_embs.is_empty() {
        return Err(Error::Invalid("dwarf_step with no candidate actions".into()));
    }
    let prev_hidden = prev_stack.top_hidden();
    let mix_in = tape.concat(&[prev_hidden, prev_attention, prev_giant_hidden]);
    let override_h = tape.matvec(dp.mix, mix_in);
    let (new_stack, hidden) = lstm_stack_step(tape, &dp.lstm, prev_stack, prev_action_emb, override_h);

    let head_in = tape.concat(&[
        inputs.entity_emb,
        inputs.last_relation_emb,
        inputs.query_emb,
        inputs.attention,
        hidden,
    ]);
    let pre = tape.matvec(dp.score1, head_in);
    let act = tape.relu(pre);
    let summary = tape.matvec(dp.score2, act);

    let mut logit_vars = Vec::with_capacity(candidate_embs.len());
    for &(rel, ent) in candidate_embs {
        let row = tape.concat(&[rel, ent, rel, ent, rel, ent]);
        logit_vars.push(tape.dot(row, summary));
    }
    let logits = tape.concat(&logit_vars);
    let probs = tape.softmax(logits);
    Ok(DwarfStepOut {
        logits,
        probs,
        new_stack,
        hidden,
    })
}

/// Trade-off multiplier in (0,1) from the 4d feature vector
/// [entity; query relation; dwarf hidden].
pub fn lambda_value(tape: &mut Tape, lp: &LambdaParams, features: VarId) -> VarId {
    let pre = tape.linear(lp.w1, features, Some(lp.b1));
    let act = tape.relu(pre);
    let out = tape.linear(lp.w2, act, Some(lp.b2));
    tape.sigmoid(out)
}

/// Value-level snapshot of everything a synchronized step needs; cheap to
/// clone, so beam hypotheses can fork it.
#[derive(Debug, Clone)]
pub struct StepState {
    pub dwarf_stack: LstmStackState,
    pub giant_stack: LstmStackState,
    /// Attention aggregated at the previous entity; zeros at the start.
    pub prev_attention: Tensor,
    /// Relation that led to the current entity; NO_OP at the start.
    pub last_relation: RelationId,
    pub entity: EntityId,
    pub cluster: ClusterId,
}

impl StepState {
    pub fn initial(world: &World, source: EntityId, d: usize) -> Self {
        Self {
            dwarf_stack: LstmStackState::zeros(2 * d),
            giant_stack: LstmStackState::zeros(2 * d),
            prev_attention: Tensor::zeros(&[d]),
            last_relation: world.relations.no_op(),
            entity: source,
            cluster: world.clusters.cluster_of(source),
        }
    }
}

/// Outputs of a synchronized step of both agents plus the multiplier.
pub struct DualStepEval {
    pub dwarf_candidates: Vec<(RelationId, EntityId)>,
    pub giant_candidates: Vec<ClusterId>,
    pub dwarf_logits: VarId,
    pub dwarf_probs: VarId,
    pub giant_logits: VarId,
    pub giant_probs: VarId,
    pub lambda: VarId,
    pub attention: VarId,
    pub new_dwarf_stack: LstmStackVars,
    pub new_giant_stack: LstmStackVars,
    pub dwarf_hidden: VarId,
    pub giant_hidden: VarId,
}

/// Run both agents for one step from a value-level state. The previous
/// action embeddings are reconstructed from the state: the dwarf arrived via
/// (last_relation, entity) and the giant chose its current cluster.
pub fn dual_step(
    tape: &mut Tape,
    params: &PolicyParams,
    world: &World,
    query_relation: RelationId,
    state: &StepState,
) -> Result<DualStepEval> {
    let dwarf_stack = state.dwarf_stack.to_vars(tape);
    let giant_stack = state.giant_stack.to_vars(tape);
    let prev_attention = tape.constant(state.prev_attention.clone());
    let prev_dwarf_hidden = dwarf_stack.top_hidden();
    let prev_giant_hidden = giant_stack.top_hidden();

    // Previous action embeddings.
    let entity_emb = tape.constant_vec(world.table.entity(state.entity));
    let last_rel_emb = tape.gather_row(
        params.dwarf.relation_embeddings,
        state.last_relation.0 as usize,
    );
    let dwarf_prev_action = tape.concat(&[last_rel_emb, entity_emb]);
    let current_cluster_emb = cluster_embedding(tape, &params.giant, world, state.cluster);

    // Giant step over adjacent clusters.
    let giant_candidates: Vec<ClusterId> = world.clusters.candidates(state.cluster).to_vec();
    let candidate_embs: Vec<VarId> = giant_candidates
        .iter()
        .map(|&c| cluster_embedding(tape, &params.giant, world, c))
        .collect();
    let giant_out = giant_step(
        tape,
        &params.giant,
        &giant_stack,
        current_cluster_emb,
        prev_dwarf_hidden,
        current_cluster_emb,
        &candidate_embs,
    )?;

    // Dwarf attention at the current entity, then the dwarf step over the
    // entity action space.
    let attention = dwarf_attention(tape, &params.dwarf, world, state.entity);
    let dwarf_candidates: Vec<(RelationId, EntityId)> =
        world.graph.action_space(state.entity).to_vec();
    let candidate_pairs: Vec<(VarId, VarId)> = dwarf_candidates
        .iter()
        .map(|&(r, e)| {
            let rel = tape.gather_row(params.dwarf.relation_embeddings, r.0 as usize);
            let ent = tape.constant_vec(world.table.entity(e));
            (rel, ent)
        })
        .collect();
    let query_emb = tape.gather_row(params.dwarf.relation_embeddings, query_relation.0 as usize);
    let inputs = DwarfInputs {
        entity_emb,
        last_relation_emb: last_rel_emb,
        query_emb,
        attention,
    };
    let dwarf_out = dwarf_step(
        tape,
        &params.dwarf,
        &dwarf_stack,
        dwarf_prev_action,
        prev_attention,
        prev_giant_hidden,
        &inputs,
        &candidate_pairs,
    )?;

    // Multiplier from [entity; query relation; fresh dwarf hidden].
    let features = tape.concat(&[entity_emb, query_emb, dwarf_out.hidden]);
    let lambda = lambda_value(tape, &params.lambda, features);

    Ok(DualStepEval {
        dwarf_candidates,
        giant_candidates,
        dwarf_logits: dwarf_out.logits,
        dwarf_probs: dwarf_out.probs,
        giant_logits: giant_out.logits,
        giant_probs: giant_out.probs,
        lambda,
        attention,
        new_dwarf_stack: dwarf_out.new_stack,
        new_giant_stack: giant_out.new_stack,
        dwarf_hidden: dwarf_out.hidden,
        giant_hidden: giant_out.hidden,
    })
}

impl DualStepEval {
    /// Value-level successor state after both agents committed to actions.
    pub fn advance(
        &self,
        tape: &Tape,
        dwarf_choice: usize,
        giant_choice: usize,
    ) -> StepState {
        let (rel, ent) = self.dwarf_candidates[dwarf_choice];
        StepState {
            dwarf_stack: self.new_dwarf_stack.materialize(tape),
            giant_stack: self.new_giant_stack.materialize(tape),
            prev_attention: tape.value(self.attention).clone(),
            last_relation: rel,
            entity: ent,
            cluster: self.giant_candidates[giant_choice],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{build_cluster_graph, ClusterModel, EmbeddingTable};
    use crate::kg::{KnowledgeGraph, RelationVocab, Triple, Vocab};
    use crate::nn::check::{grad_check, DEFAULT_EPS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn zero_params(store: &mut ParamStore, d: usize, n_rel: usize, n_clusters: usize) -> PolicyParams {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let params = PolicyParams::register(
            store,
            d,
            Tensor::zeros(&[n_rel, d]),
            Tensor::zeros(&[n_clusters, d]),
            &mut rng,
        )
        .unwrap();
        for id in 0..store.len() {
            for v in store.value_mut(id).data_mut() {
                *v = 0.0;
            }
        }
        params
    }

    fn random_params(
        store: &mut ParamStore,
        d: usize,
        n_rel: usize,
        n_clusters: usize,
        seed: u64,
    ) -> PolicyParams {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let rel_init = {
            use rand::Rng;
            let data: Vec<f64> = (0..n_rel * d).map(|_| rng.gen_range(-0.5..0.5)).collect();
            Tensor::matrix(n_rel, d, data)
        };
        let parts_init = {
            use rand::Rng;
            let data: Vec<f64> = (0..n_clusters * d)
                .map(|_| rng.gen_range(-0.5..0.5))
                .collect();
            Tensor::matrix(n_clusters, d, data)
        };
        PolicyParams::register(store, d, rel_init, parts_init, &mut rng).unwrap()
    }

    struct Fixture {
        graph: KnowledgeGraph,
        relations: RelationVocab,
        table: EmbeddingTable,
        clusters: ClusterModel,
    }

    impl Fixture {
        fn world(&self) -> World<'_> {
            World {
                graph: &self.graph,
                relations: &self.relations,
                table: &self.table,
                clusters: &self.clusters,
            }
        }
    }

    fn fixture(d: usize, seed: u64) -> Fixture {
        use rand::Rng;
        let mut base = Vocab::new();
        base.intern("r0");
        base.intern("r1");
        let relations = RelationVocab::from_base(base);
        let triples = vec![
            Triple {
                head: EntityId(0),
                relation: RelationId(0),
                tail: EntityId(1),
            },
            Triple {
                head: EntityId(1),
                relation: RelationId(1),
                tail: EntityId(2),
            },
            Triple {
                head: EntityId(0),
                relation: RelationId(1),
                tail: EntityId(3),
            },
        ];
        let graph = KnowledgeGraph::build(4, &relations, &triples, true, true);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut entity_data = vec![0.0; 4 * d];
        for v in &mut entity_data {
            *v = rng.gen_range(-1.0..1.0);
        }
        let table = EmbeddingTable::from_rows(
            d,
            4,
            relations.len(),
            entity_data,
            vec![0.0; relations.len() * d],
        );
        let assignment = vec![
            crate::embed::ClusterId(0),
            crate::embed::ClusterId(0),
            crate::embed::ClusterId(1),
            crate::embed::ClusterId(1),
        ];
        let adjacency = build_cluster_graph(&graph, &assignment, 2);
        let mut centroids = vec![0.0; 2 * d];
        for v in &mut centroids {
            *v = rng.gen_range(-1.0..1.0);
        }
        let clusters = ClusterModel {
            n_clusters: 2,
            d,
            assignment,
            centroids,
            learned_parts: vec![0.0; 2 * d],
            adjacency,
        };
        Fixture {
            graph,
            relations,
            table,
            clusters,
        }
    }

    #[test]
    fn giant_single_candidate_gets_probability_one() {
        let mut store = ParamStore::new();
        let d = 2;
        let params = random_params(&mut store, d, 5, 2, 3);
        let fx = fixture(d, 3);
        let world = fx.world();
        let mut tape = Tape::new(store.values());
        let stack = LstmStackState::zeros(2 * d).to_vars(&mut tape);
        let prev_dwarf = tape.constant_vec(&vec![0.0; 2 * d]);
        let cur = cluster_embedding(&mut tape, &params.giant, &world, ClusterId(0));
        let cand = cluster_embedding(&mut tape, &params.giant, &world, ClusterId(1));
        let out = giant_step(&mut tape, &params.giant, &stack, cur, prev_dwarf, cur, &[cand]).unwrap();
        assert_eq!(tape.value(out.probs).data(), &[1.0]);
    }

    #[test]
    fn giant_identical_candidates_split_evenly() {
        let mut store = ParamStore::new();
        let d = 2;
        let params = random_params(&mut store, d, 5, 2, 4);
        let fx = fixture(d, 4);
        let world = fx.world();
        let mut tape = Tape::new(store.values());
        let stack = LstmStackState::zeros(2 * d).to_vars(&mut tape);
        let prev_dwarf = tape.constant_vec(&vec![0.0; 2 * d]);
        let cur = cluster_embedding(&mut tape, &params.giant, &world, ClusterId(0));
        let cand = cluster_embedding(&mut tape, &params.giant, &world, ClusterId(1));
        let out =
            giant_step(&mut tape, &params.giant, &stack, cur, prev_dwarf, cur, &[cand, cand])
                .unwrap();
        let p = tape.value(out.probs).data();
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert!((p[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn giant_probabilities_match_hand_computation_at_d1() {
        // d = 1: zero LSTM weights give a zero hidden state, identity scoring
        // matrices reduce the head to relu of its input.
        let d = 1;
        let mut store = ParamStore::new();
        let params = zero_params(&mut store, d, 5, 2);
        // score1 = score2 = identity (4x4).
        for (mat, _) in [(params.giant.score1, 0), (params.giant.score2, 1)] {
            let m = store.value_mut(mat);
            for i in 0..4 {
                m.data_mut()[i * 4 + i] = 1.0;
            }
        }
        // Cluster parts: cluster 0 -> 0.5, cluster 1 -> -0.25.
        store.value_mut(params.giant.cluster_parts).data_mut()[0] = 0.5;
        store.value_mut(params.giant.cluster_parts).data_mut()[1] = -0.25;

        let mut fx = fixture(d, 5);
        // Centroids: cluster 0 -> 0.8, cluster 1 -> -0.3.
        fx.clusters.centroids = vec![0.8, -0.3];
        fx.clusters.learned_parts = vec![0.5, -0.25];
        let world = fx.world();

        let mut tape = Tape::new(store.values());
        let stack = LstmStackState::zeros(2 * d).to_vars(&mut tape);
        let prev_dwarf = tape.constant_vec(&vec![0.0; 2 * d]);
        let cur = cluster_embedding(&mut tape, &params.giant, &world, ClusterId(0));
        let c0 = cluster_embedding(&mut tape, &params.giant, &world, ClusterId(0));
        let c1 = cluster_embedding(&mut tape, &params.giant, &world, ClusterId(1));
        let out = giant_step(
            &mut tape,
            &params.giant,
            &stack,
            cur,
            prev_dwarf,
            cur,
            &[c0, c1],
        )
        .unwrap();

        // Hand computation with plain arithmetic: hidden = 0 (zero LSTM), so
        // head input is [0.8, 0.5, 0, 0]; relu then identity keeps it.
        // Summaries dot the tiled candidate embeddings:
        //   logit(c) = cand[0]*0.8 + cand[1]*0.5 + cand[0]*0 + cand[1]*0.
        let s = [0.8f64, 0.5, 0.0, 0.0];
        let logit0 = 0.8 * s[0] + 0.5 * s[1] + 0.8 * s[2] + 0.5 * s[3];
        let logit1 = -0.3 * s[0] + -0.25 * s[1] + -0.3 * s[2] + -0.25 * s[3];
        let e0 = (logit0 - logit0.max(logit1)).exp();
        let e1 = (logit1 - logit0.max(logit1)).exp();
        let expect = [e0 / (e0 + e1), e1 / (e0 + e1)];
        let p = tape.value(out.probs).data();
        assert!((p[0] - expect[0]).abs() < 1e-12, "{p:?} vs {expect:?}");
        assert!((p[1] - expect[1]).abs() < 1e-12);
    }

    #[test]
    fn attention_over_singleton_neighborhood_is_transformed_self() {
        let d = 3;
        let mut store = ParamStore::new();
        let params = random_params(&mut store, d, 5, 2, 6);
        // Entity 3 has only its self-loop and one inverse edge from entity 0;
        // build an isolated variant instead.
        let mut base = Vocab::new();
        base.intern("r0");
        let relations = RelationVocab::from_base(base);
        let graph = KnowledgeGraph::build(1, &relations, &[], true, true);
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        use rand::Rng;
        let entity_data: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let table = EmbeddingTable::from_rows(d, 1, relations.len(), entity_data.clone(), vec![0.0; relations.len() * d]);
        let assignment = vec![crate::embed::ClusterId(0)];
        let adjacency = build_cluster_graph(&graph, &assignment, 1);
        let clusters = ClusterModel {
            n_clusters: 1,
            d,
            assignment,
            centroids: vec![0.0; d],
            learned_parts: vec![0.0; d],
            adjacency,
        };
        let world = World {
            graph: &graph,
            relations: &relations,
            table: &table,
            clusters: &clusters,
        };
        let mut tape = Tape::new(store.values());
        let atn = dwarf_attention(&mut tape, &params.dwarf, &world, EntityId(0));
        let self_emb = tape.constant_vec(&entity_data);
        let expected = tape.matvec(params.dwarf.attn_w, self_emb);
        let got = tape.value(atn).data();
        let want = tape.value(expected).data();
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_with_identical_neighbors_is_convex_fixed_point() {
        // All neighbors share one embedding v, so the aggregate is W v no
        // matter what the attention weights are.
        let d = 2;
        let mut store = ParamStore::new();
        let params = random_params(&mut store, d, 5, 2, 7);
        let mut base = Vocab::new();
        base.intern("r0");
        let relations = RelationVocab::from_base(base);
        let triples = vec![
            Triple {
                head: EntityId(0),
                relation: RelationId(0),
                tail: EntityId(1),
            },
            Triple {
                head: EntityId(0),
                relation: RelationId(0),
                tail: EntityId(2),
            },
        ];
        let graph = KnowledgeGraph::build(3, &relations, &triples, false, true);
        let v = vec![0.4, -0.9];
        let entity_data = vec![v.clone(), v.clone(), v.clone()].concat();
        let table =
            EmbeddingTable::from_rows(d, 3, relations.len(), entity_data, vec![0.0; relations.len() * d]);
        let assignment = vec![crate::embed::ClusterId(0); 3];
        let adjacency = build_cluster_graph(&graph, &assignment, 1);
        let clusters = ClusterModel {
            n_clusters: 1,
            d,
            assignment,
            centroids: vec![0.0; d],
            learned_parts: vec![0.0; d],
            adjacency,
        };
        let world = World {
            graph: &graph,
            relations: &relations,
            table: &table,
            clusters: &clusters,
        };
        let mut tape = Tape::new(store.values());
        let atn = dwarf_attention(&mut tape, &params.dwarf, &world, EntityId(0));
        let vv = tape.constant_vec(&v);
        let expected = tape.matvec(params.dwarf.attn_w, vv);
        for (g, w) in tape.value(atn).data().iter().zip(tape.value(expected).data()) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_matches_scalar_hand_computation() {
        // d = 1, two neighbors: weights and aggregate evaluated by hand.
        let d = 1;
        let mut store = ParamStore::new();
        let params = zero_params(&mut store, d, 3, 1);
        store.value_mut(params.dwarf.attn_w).data_mut()[0] = 2.0; // W = [2]
        store.value_mut(params.dwarf.attn_a).data_mut()[0] = 1.0; // a = [1, -1]
        store.value_mut(params.dwarf.attn_a).data_mut()[1] = -1.0;

        let mut base = Vocab::new();
        base.intern("r0");
        let relations = RelationVocab::from_base(base);
        let triples = vec![Triple {
            head: EntityId(0),
            relation: RelationId(0),
            tail: EntityId(1),
        }];
        let graph = KnowledgeGraph::build(2, &relations, &triples, false, true);
        let e0 = 0.5;
        let e1 = -0.7;
        let table = EmbeddingTable::from_rows(
            d,
            2,
            relations.len(),
            vec![e0, e1],
            vec![0.0; relations.len()],
        );
        let assignment = vec![crate::embed::ClusterId(0); 2];
        let adjacency = build_cluster_graph(&graph, &assignment, 1);
        let clusters = ClusterModel {
            n_clusters: 1,
            d,
            assignment,
            centroids: vec![0.0],
            learned_parts: vec![0.0],
            adjacency,
        };
        let world = World {
            graph: &graph,
            relations: &relations,
            table: &table,
            clusters: &clusters,
        };
        let mut tape = Tape::new(store.values());
        let atn = dwarf_attention(&mut tape, &params.dwarf, &world, EntityId(0));

        // Neighbors sorted: [e0 (self), e1]. Scores: leaky(a . [W e0; W e_j]).
        let leaky = |x: f64| if x > 0.0 { x } else { 0.2 * x };
        let s0 = leaky(1.0 * (2.0 * e0) + -1.0 * (2.0 * e0));
        let s1 = leaky(1.0 * (2.0 * e0) + -1.0 * (2.0 * e1));
        let m = s0.max(s1);
        let (x0, x1) = ((s0 - m).exp(), (s1 - m).exp());
        let (a0, a1) = (x0 / (x0 + x1), x1 / (x0 + x1));
        let expected = a0 * (2.0 * e0) + a1 * (2.0 * e1);
        assert!((tape.value(atn).at(0) - expected).abs() < 1e-12);
    }

    #[test]
    fn dwarf_single_and_duplicate_candidates() {
        let d = 2;
        let mut store = ParamStore::new();
        let params = random_params(&mut store, d, 5, 2, 9);
        let fx = fixture(d, 9);
        let world = fx.world();
        let state = StepState::initial(&world, EntityId(0), d);
        let mut tape = Tape::new(store.values());
        let eval = dual_step(&mut tape, &params, &world, RelationId(0), &state).unwrap();
        let p = tape.value(eval.dwarf_probs).data();
        assert_eq!(p.len(), eval.dwarf_candidates.len());
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        // Duplicate candidate rows get equal probabilities.
        let mut tape2 = Tape::new(store.values());
        let stack = LstmStackState::zeros(2 * d).to_vars(&mut tape2);
        let zero2d = tape2.constant_vec(&vec![0.0; 2 * d]);
        let zd = tape2.constant_vec(&vec![0.0; d]);
        let rel = tape2.gather_row(params.dwarf.relation_embeddings, 0);
        let ent = tape2.constant_vec(world.table.entity(EntityId(1)));
        let inputs = DwarfInputs {
            entity_emb: ent,
            last_relation_emb: rel,
            query_emb: rel,
            attention: zd,
        };
        let out = dwarf_step(
            &mut tape2,
            &params.dwarf,
            &stack,
            zero2d,
            zd,
            zero2d,
            &inputs,
            &[(rel, ent), (rel, ent)],
        )
        .unwrap();
        let p = tape2.value(out.probs).data();
        assert!((p[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dwarf_probabilities_match_hand_computation_at_d1() {
        let d = 1;
        let mut store = ParamStore::new();
        let params = zero_params(&mut store, d, 3, 1);
        // Identity 6x6 scoring matrices.
        for mat in [params.dwarf.score1, params.dwarf.score2] {
            let m = store.value_mut(mat);
            for i in 0..6 {
                m.data_mut()[i * 6 + i] = 1.0;
            }
        }
        let mut tape = Tape::new(store.values());
        let stack = LstmStackState::zeros(2 * d).to_vars(&mut tape);
        let zero2d = tape.constant_vec(&vec![0.0; 2 * d]);
        let e = tape.constant_vec(&[0.6]);
        let r_last = tape.constant_vec(&[0.2]);
        let r_q = tape.constant_vec(&[-0.4]);
        let atn = tape.constant_vec(&[0.3]);
        let zd = tape.constant_vec(&[0.0]);
        let inputs = DwarfInputs {
            entity_emb: e,
            last_relation_emb: r_last,
            query_emb: r_q,
            attention: atn,
        };
        let r1 = tape.constant_vec(&[1.0]);
        let e1 = tape.constant_vec(&[-1.0]);
        let r2 = tape.constant_vec(&[0.5]);
        let e2 = tape.constant_vec(&[0.25]);
        let out = dwarf_step(
            &mut tape,
            &params.dwarf,
            &stack,
            zero2d,
            zd,
            zero2d,
            &inputs,
            &[(r1, e1), (r2, e2)],
        )
        .unwrap();

        // Head input [e, r_last, r_q, atn, h(2)] = [0.6, 0.2, -0.4, 0.3, 0, 0];
        // relu zeroes the negative component; identity matrices keep the rest.
        let s = [0.6, 0.2, 0.0, 0.3, 0.0, 0.0];
        let logit = |r: f64, e: f64| r * s[0] + e * s[1] + r * s[2] + e * s[3] + r * s[4] + e * s[5];
        let l1 = logit(1.0, -1.0);
        let l2 = logit(0.5, 0.25);
        let m = l1.max(l2);
        let (x1, x2) = ((l1 - m).exp(), (l2 - m).exp());
        let expect = [x1 / (x1 + x2), x2 / (x1 + x2)];
        let p = tape.value(out.probs).data();
        assert!((p[0] - expect[0]).abs() < 1e-12, "{p:?} vs {expect:?}");
    }

    #[test]
    fn lambda_zero_weights_is_half_and_stays_inside_unit_interval() {
        let d = 2;
        let mut store = ParamStore::new();
        let params = zero_params(&mut store, d, 3, 1);
        let mut tape = Tape::new(store.values());
        let f = tape.constant_vec(&vec![0.3; 4 * d]);
        let l = lambda_value(&mut tape, &params.lambda, f);
        assert_eq!(tape.scalar_value(l), 0.5);

        // A huge positive output bias saturates toward 1 without reaching it.
        store.value_mut(params.lambda.b2).data_mut()[0] = 30.0;
        let mut tape = Tape::new(store.values());
        let f = tape.constant_vec(&vec![0.3; 4 * d]);
        let l = lambda_value(&mut tape, &params.lambda, f);
        let v = tape.scalar_value(l);
        assert!(v < 1.0 && v > 0.999999);
    }

    #[test]
    fn lambda_gradient_passes_finite_difference_check() {
        let d = 2;
        let mut store = ParamStore::new();
        let _ = random_params(&mut store, d, 3, 2, 11);
        let params = PolicyParams::resolve(&store, d).unwrap();
        let err = grad_check(
            &mut store,
            |tape| {
                let f = tape.constant_vec(&[0.31, -0.42, 0.17, 0.88, -0.23, 0.05, 0.61, -0.74]);
                lambda_value(tape, &params.lambda, f)
            },
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn full_dual_step_log_probs_pass_gradient_check() {
        // Points are drawn with healthy magnitudes (random stack states,
        // parameters beyond the cold init) so true gradients stay clear of
        // finite-difference roundoff; eps = 1e-4 balances truncation against
        // roundoff for this depth of composition.
        use rand::Rng;
        for seed in 0..10u64 {
            let d = 2;
            let mut store = ParamStore::new();
            let mut rng = ChaCha12Rng::seed_from_u64(900 + seed);
            let params = random_params(&mut store, d, 5, 2, 900 + seed);
            for id in 0..store.len() {
                for v in store.value_mut(id).data_mut() {
                    *v = rng.gen_range(-0.8..0.8);
                }
            }
            let fx = fixture(d, 800 + seed);
            let world = fx.world();
            let mut state = StepState::initial(&world, EntityId(0), d);
            for (h, c) in state
                .dwarf_stack
                .layers
                .iter_mut()
                .chain(state.giant_stack.layers.iter_mut())
            {
                for v in h.data_mut() {
                    *v = rng.gen_range(-0.9..0.9);
                }
                for v in c.data_mut() {
                    *v = rng.gen_range(-0.9..0.9);
                }
            }
            for v in state.prev_attention.data_mut() {
                *v = rng.gen_range(-0.9..0.9);
            }
            let err = grad_check(
                &mut store,
                |tape| {
                    let eval = dual_step(tape, &params, &world, RelationId(0), &state).unwrap();
                    let lp_d = tape.log_prob(eval.dwarf_logits, 0);
                    let lp_g = tape.log_prob(eval.giant_logits, 0);
                    let ce = tape.cross_entropy_bernoulli(eval.lambda, 1.0);
                    tape.weighted_sum(&[(lp_d, 1.0), (lp_g, 0.7), (ce, 0.5)])
                },
                1e-4,
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: max relative error {err}");
        }
    }

    #[test]
    fn candidate_permutation_permutes_probabilities() {
        let d = 2;
        let mut store = ParamStore::new();
        let params = random_params(&mut store, d, 5, 2, 17);
        let fx = fixture(d, 17);
        let world = fx.world();
        let mut tape = Tape::new(store.values());
        let stack = LstmStackState::zeros(2 * d).to_vars(&mut tape);
        let prev_dwarf = tape.constant_vec(&vec![0.0; 2 * d]);
        let cur = cluster_embedding(&mut tape, &params.giant, &world, ClusterId(0));
        let c0 = cluster_embedding(&mut tape, &params.giant, &world, ClusterId(0));
        let c1 = cluster_embedding(&mut tape, &params.giant, &world, ClusterId(1));
        let fwd = giant_step(&mut tape, &params.giant, &stack, cur, prev_dwarf, cur, &[c0, c1]).unwrap();
        let stack2 = LstmStackState::zeros(2 * d).to_vars(&mut tape);
        let rev = giant_step(&mut tape, &params.giant, &stack2, cur, prev_dwarf, cur, &[c1, c0]).unwrap();
        let pf = tape.value(fwd.probs).data().to_vec();
        let pr = tape.value(rev.probs).data().to_vec();
        assert!((pf[0] - pr[1]).abs() < 1e-12);
        assert!((pf[1] - pr[0]).abs() < 1e-12);
    }

    #[test]
    fn dual_step_is_deterministic() {
        let d = 2;
        let mut store = ParamStore::new();
        let params = random_params(&mut store, d, 5, 2, 19);
        let fx = fixture(d, 19);
        let world = fx.world();
        let state = StepState::initial(&world, EntityId(0), d);
        let run = || {
            let mut tape = Tape::new(store.values());
            let eval = dual_step(&mut tape, &params, &world, RelationId(0), &state).unwrap();
            (
                tape.value(eval.dwarf_probs).data().to_vec(),
                tape.value(eval.giant_probs).data().to_vec(),
                tape.scalar_value(eval.lambda),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_validation_accepts_and_rejects() {
        let d = 50;
        let mut store = ParamStore::new();
        let _ = random_params(&mut store, d, 7, 3, 23);
        validate_param_shapes(&store, d, 7, 3).unwrap();
        // Wrong d must fail.
        assert!(validate_param_shapes(&store, 25, 7, 3).is_err());
    }
}

