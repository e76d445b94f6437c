//! Beam-search inference over the dual policy and the evaluation metrics
//! (reciprocal rank, hits, average precision, terminal state similarity).

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;

use crate::agents::{dual_step, PolicyParams, StepState};
use crate::env::{answer_clusters, cluster_potential, DualRollout, World};
use crate::error::{Error, Result};
use crate::kg::{EntityId, QuerySample, RelationId};
use crate::nn::store::ParamStore;
use crate::nn::tape::Tape;
use crate::nn::tensor::cosine;

/// One surviving beam path with its paired agent states.
#[derive(Debug, Clone)]
pub struct BeamHypothesis {
    pub entities: Vec<EntityId>,
    pub relations: Vec<RelationId>,
    pub log_prob: f64,
    pub state: StepState,
}

/// Greedy argmax with ties broken toward the smaller index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Expand the entity agent breadth-first keeping the `width` best partial
/// paths per step by cumulative log probability (ties toward the smaller
/// entity, then relation index). The cluster agent advances greedily inside
/// each hypothesis. Returns the surviving hypotheses after `horizon` steps.
pub fn beam_search(
    store: &ParamStore,
    params: &PolicyParams,
    world: &World,
    query: &QuerySample,
    width: usize,
    horizon: usize,
) -> Result<Vec<BeamHypothesis>> {
    if width == 0 {
        return Err(Error::Invalid("beam width must be at least 1".into()));
    }
    let mut beam = vec![BeamHypothesis {
        entities: vec![query.source],
        relations: Vec::new(),
        log_prob: 0.0,
        state: StepState::initial(world, query.source, params.d),
    }];

    for _t in 0..horizon {
        struct Child {
            parent: usize,
            action: usize,
            relation: RelationId,
            entity: EntityId,
            log_prob: f64,
        }
        let mut children: Vec<Child> = Vec::new();
        let mut advanced: Vec<(StepState, Vec<(RelationId, EntityId)>)> =
            Vec::with_capacity(beam.len());
        for (parent, hyp) in beam.iter().enumerate() {
            let mut tape = Tape::new(store.values());
            let eval = dual_step(&mut tape, params, world, query.relation, &hyp.state)?;
            tape.check_healthy()?;
            let logits = tape.value(eval.dwarf_logits).data().to_vec();
            let lse_var = tape.log_sum_exp(eval.dwarf_logits);
            let lse = tape.scalar_value(lse_var);
            let giant_choice = argmax(tape.value(eval.giant_probs).data());
            let next_shared = eval.advance(&tape, 0, giant_choice);
            for (action, &(rel, ent)) in eval.dwarf_candidates.iter().enumerate() {
                children.push(Child {
                    parent,
                    action,
                    relation: rel,
                    entity: ent,
                    log_prob: hyp.log_prob + (logits[action] - lse),
                });
            }
            advanced.push((next_shared, eval.dwarf_candidates));
        }

        children.sort_by(|a, b| {
            b.log_prob
                .partial_cmp(&a.log_prob)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.entity.cmp(&b.entity))
                .then(a.relation.cmp(&b.relation))
                .then(a.parent.cmp(&b.parent))
        });
        children.truncate(width);

        let mut next_beam = Vec::with_capacity(children.len());
        for child in children {
            let parent_hyp = &beam[child.parent];
            let (shared_state, candidates) = &advanced[child.parent];
            let (rel, ent) = candidates[child.action];
            let mut state = shared_state.clone();
            state.last_relation = rel;
            state.entity = ent;
            let mut entities = parent_hyp.entities.clone();
            entities.push(child.entity);
            let mut relations = parent_hyp.relations.clone();
            relations.push(child.relation);
            next_beam.push(BeamHypothesis {
                entities,
                relations,
                log_prob: child.log_prob,
                state,
            });
        }
        beam = next_beam;
    }
    Ok(beam)
}

/// Pool surviving paths into a ranking: each final entity scores its best
/// path log probability; order by score descending, entity index ascending.
pub fn rank_entities(finals: &[(EntityId, f64)]) -> Vec<(EntityId, f64)> {
    let mut best: HashMap<EntityId, f64> = HashMap::new();
    for &(e, lp) in finals {
        best.entry(e)
            .and_modify(|b| {
                if lp > *b {
                    *b = lp;
                }
            })
            .or_insert(lp);
    }
    let mut ranked: Vec<(EntityId, f64)> = best.into_iter().collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    ranked
}

/// Ranks of a query's gold answers under the raw and filtered protocols.
#[derive(Debug, Clone)]
pub struct RankResult {
    pub query: QuerySample,
    pub ranked: Vec<(EntityId, f64)>,
    /// Per gold answer, aligned with `query.answers`.
    pub raw_ranks: Vec<usize>,
    pub filtered_ranks: Vec<usize>,
    /// Rank assigned to golds missing from the ranking.
    pub missing_rank: usize,
}

/// Rank every gold answer within a pooled ranking. The filtered protocol
/// removes other known-true tails before ranking each gold; a missing gold
/// gets rank `width + 1`.
pub fn rank_query(
    query: &QuerySample,
    ranked: Vec<(EntityId, f64)>,
    width: usize,
    known: Option<&BTreeSet<EntityId>>,
) -> RankResult {
    let missing_rank = width + 1;
    let mut raw_ranks = Vec::with_capacity(query.answers.len());
    let mut filtered_ranks = Vec::with_capacity(query.answers.len());
    for &gold in &query.answers {
        let position = ranked.iter().position(|&(e, _)| e == gold);
        match position {
            None => {
                raw_ranks.push(missing_rank);
                filtered_ranks.push(missing_rank);
            }
            Some(pos) => {
                raw_ranks.push(pos + 1);
                let filtered_ahead = ranked[..pos]
                    .iter()
                    .filter(|(e, _)| known.map_or(false, |k| k.contains(e)) && *e != gold)
                    .count();
                filtered_ranks.push(pos + 1 - filtered_ahead);
            }
        }
    }
    RankResult {
        query: query.clone(),
        ranked,
        raw_ranks,
        filtered_ranks,
        missing_rank,
    }
}

impl RankResult {
    pub fn best_raw(&self) -> usize {
        self.raw_ranks.iter().copied().min().unwrap_or(self.missing_rank)
    }

    pub fn best_filtered(&self) -> usize {
        self.filtered_ranks
            .iter()
            .copied()
            .min()
            .unwrap_or(self.missing_rank)
    }
}

/// Mean reciprocal rank and hits@K over the best-ranked gold per query.
pub fn mrr_hits(ranks: &[usize], ks: &[usize]) -> Result<(f64, Vec<f64>)> {
    if ranks.is_empty() {
        return Err(Error::Invalid("mrr_hits over an empty result set".into()));
    }
    let n = ranks.len() as f64;
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    let hits = ks
        .iter()
        .map(|&k| ranks.iter().filter(|&&r| r <= k).count() as f64 / n)
        .collect();
    Ok((mrr, hits))
}

/// Average precision of one ranked list against a positive set: mean over
/// retrieved positives of precision-at-hit, divided by the total number of
/// positives (missing positives contribute zero).
pub fn average_precision(ranked: &[EntityId], positives: &BTreeSet<EntityId>) -> Option<f64> {
    if positives.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, e) in ranked.iter().enumerate() {
        if positives.contains(e) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / positives.len() as f64)
}

/// Mean average precision per relation task; queries without positives are
/// skipped with a warning.
pub fn map_score(results: &[RankResult]) -> HashMap<RelationId, f64> {
    let mut per_task: HashMap<RelationId, (f64, usize)> = HashMap::new();
    for r in results {
        let positives: BTreeSet<EntityId> = r.query.answers.iter().copied().collect();
        let ranked: Vec<EntityId> = r.ranked.iter().map(|&(e, _)| e).collect();
        match average_precision(&ranked, &positives) {
            Some(ap) => {
                let slot = per_task.entry(r.query.relation).or_insert((0.0, 0));
                slot.0 += ap;
                slot.1 += 1;
            }
            None => log::warn!(
                "skipping query with no positives (source {})",
                r.query.source
            ),
        }
    }
    per_task
        .into_iter()
        .map(|(rel, (sum, n))| (rel, sum / n as f64))
        .collect()
}

/// Terminal state similarities over a batch of rollouts: the cluster-level
/// value compares the final cluster against the answer clusters, the
/// entity-level value compares the final entity embedding against the
/// answer entities.
pub fn css_ess(rollouts: &[DualRollout], world: &World) -> Result<(f64, f64)> {
    if rollouts.is_empty() {
        return Err(Error::Invalid("css_ess over an empty rollout set".into()));
    }
    let mut css = 0.0;
    let mut ess = 0.0;
    for r in rollouts {
        let targets = if r.targets.is_empty() {
            answer_clusters(&r.query, world.clusters)
        } else {
            r.targets.clone()
        };
        css += cluster_potential(world.clusters, r.final_cluster, &targets)?;
        let final_emb = world.table.entity(r.final_entity);
        let mut best = f64::NEG_INFINITY;
        for &a in &r.query.answers {
            let c = if a == r.final_entity {
                1.0
            } else {
                cosine(final_emb, world.table.entity(a))?
            };
            if c > best {
                best = c;
            }
        }
        ess += best;
    }
    let n = rollouts.len() as f64;
    Ok((css / n, ess / n))
}

/// Full evaluation report over a query set.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub results: Vec<RankResult>,
    pub mrr_raw: f64,
    pub mrr_filtered: f64,
    pub hits_raw: Vec<f64>,
    pub hits_filtered: Vec<f64>,
    pub ks: Vec<usize>,
}

/// Beam-search every query (parallel, order-stable) and aggregate ranking
/// metrics under both protocols.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    store: &ParamStore,
    params: &PolicyParams,
    world: &World,
    queries: &[QuerySample],
    width: usize,
    horizon: usize,
    ks: &[usize],
    known_tails: &HashMap<(EntityId, RelationId), BTreeSet<EntityId>>,
) -> Result<EvalReport> {
    if queries.is_empty() {
        return Err(Error::Invalid("evaluate over an empty query set".into()));
    }
    let results: Vec<RankResult> = queries
        .par_iter()
        .map(|query| {
            let beam = beam_search(store, params, world, query, width, horizon)?;
            let finals: Vec<(EntityId, f64)> = beam
                .iter()
                .map(|h| (*h.entities.last().unwrap(), h.log_prob))
                .collect();
            let ranked = rank_entities(&finals);
            let known = known_tails.get(&(query.source, query.relation));
            Ok(rank_query(query, ranked, width, known))
        })
        .collect::<Result<Vec<_>>>()?;

    let raw: Vec<usize> = results.iter().map(|r| r.best_raw()).collect();
    let filtered: Vec<usize> = results.iter().map(|r| r.best_filtered()).collect();
    let (mrr_raw, hits_raw) = mrr_hits(&raw, ks)?;
    let (mrr_filtered, hits_filtered) = mrr_hits(&filtered, ks)?;
    Ok(EvalReport {
        results,
        mrr_raw,
        mrr_filtered,
        hits_raw,
        hits_filtered,
        ks: ks.to_vec(),
    })
}

/// Results CSV: one row per (query, gold) pair, then a summary block.
pub fn results_csv(report: &EvalReport) -> String {
    let mut out = String::from("query_id,gold,rank_raw,rank_filtered,score\n");
    for (qi, r) in report.results.iter().enumerate() {
        for (ai, &gold) in r.query.answers.iter().enumerate() {
            let score = r
                .ranked
                .iter()
                .find(|&&(e, _)| e == gold)
                .map(|&(_, s)| s)
                .unwrap_or(f64::NEG_INFINITY);
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                qi, gold, r.raw_ranks[ai], r.filtered_ranks[ai], score
            ));
        }
    }
    out.push_str(&format!("# mrr_raw,{}\n", report.mrr_raw));
    out.push_str(&format!("# mrr_filtered,{}\n", report.mrr_filtered));
    for (i, k) in report.ks.iter().enumerate() {
        out.push_str(&format!("# hits{}_raw,{}\n", k, report.hits_raw[i]));
        out.push_str(&format!("# hits{}_filtered,{}\n", k, report.hits_filtered[i]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mrr_hits_examples() {
        let (mrr, hits) = mrr_hits(&[1, 1, 1], &[1]).unwrap();
        assert_eq!(mrr, 1.0);
        assert_eq!(hits, vec![1.0]);

        let (mrr, hits) = mrr_hits(&[1, 2, 4], &[1, 3]).unwrap();
        assert!((mrr - (1.0 + 0.5 + 0.25) / 3.0).abs() < 1e-9);
        assert!((hits[0] - 1.0 / 3.0).abs() < 1e-9);
        assert!((hits[1] - 2.0 / 3.0).abs() < 1e-9);

        assert!(mrr_hits(&[], &[1]).is_err());
    }

    #[test]
    fn missing_gold_contributes_beam_plus_one() {
        let query = QuerySample {
            source: EntityId(0),
            relation: RelationId(0),
            answers: vec![EntityId(9)],
        };
        let ranked = vec![(EntityId(1), -0.1), (EntityId(2), -0.5)];
        let r = rank_query(&query, ranked, 50, None);
        assert_eq!(r.best_raw(), 51);
        let (mrr, _) = mrr_hits(&[r.best_raw()], &[1]).unwrap();
        assert!((mrr - 1.0 / 51.0).abs() < 1e-12);
    }

    #[test]
    fn filtered_rank_improves_only() {
        let query = QuerySample {
            source: EntityId(0),
            relation: RelationId(0),
            answers: vec![EntityId(3)],
        };
        let ranked = vec![
            (EntityId(1), -0.1),
            (EntityId(2), -0.2),
            (EntityId(3), -0.3),
        ];
        let known: BTreeSet<EntityId> = [EntityId(1), EntityId(3)].into_iter().collect();
        let r = rank_query(&query, ranked, 10, Some(&known));
        assert_eq!(r.raw_ranks, vec![3]);
        assert_eq!(r.filtered_ranks, vec![2]);
    }

    #[test]
    fn average_precision_examples() {
        let single: BTreeSet<EntityId> = [EntityId(0)].into_iter().collect();
        let ap = average_precision(&[EntityId(0), EntityId(1)], &single).unwrap();
        assert_eq!(ap, 1.0);

        let pos: BTreeSet<EntityId> = [EntityId(0), EntityId(2)].into_iter().collect();
        let ap = average_precision(&[EntityId(0), EntityId(1), EntityId(2)], &pos).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-9);

        // All positives below all negatives: n=2 positives among m=4 total.
        let pos: BTreeSet<EntityId> = [EntityId(2), EntityId(3)].into_iter().collect();
        let ranked = [EntityId(0), EntityId(1), EntityId(2), EntityId(3)];
        let ap = average_precision(&ranked, &pos).unwrap();
        let expected = (1.0 / 3.0 + 2.0 / 4.0) / 2.0;
        assert!((ap - expected).abs() < 1e-9);

        let empty = BTreeSet::new();
        assert!(average_precision(&ranked, &empty).is_none());
    }

    #[test]
    fn rank_entities_pools_by_max() {
        let finals = vec![
            (EntityId(1), -2.0),
            (EntityId(1), -0.5),
            (EntityId(0), -1.0),
        ];
        let ranked = rank_entities(&finals);
        assert_eq!(ranked[0].0, EntityId(1));
        assert_eq!(ranked[0].1, -0.5);
        assert_eq!(ranked[1].0, EntityId(0));
    }

    #[test]
    fn rank_entities_breaks_ties_by_index() {
        let finals = vec![(EntityId(5), -1.0), (EntityId(2), -1.0)];
        let ranked = rank_entities(&finals);
        assert_eq!(ranked[0].0, EntityId(2));
    }

    #[test]
    fn mrr_is_permutation_invariant() {
        let ranks = [3usize, 1, 7, 2];
        let (a, _) = mrr_hits(&ranks, &[1]).unwrap();
        let mut shuffled = ranks;
        shuffled.reverse();
        let (b, _) = mrr_hits(&shuffled, &[1]).unwrap();
        assert_eq!(a, b);
    }
}
