//! Policy-gradient training of both agents and the multiplier network:
//! rollout collection, the three objectives, gradient assembly and the epoch
//! loop with Adam updates.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::agents::{dual_step, PolicyParams, StepState};
use crate::embed::ClusterId;
use crate::env::{
    answer_clusters, cluster_potential, default_cluster_reward, default_entity_reward,
    guidance_label, state_distance, DualRollout, StepRecord, World,
};
use crate::error::{Error, Result};
use crate::kg::QuerySample;
use crate::nn::sample::categorical_sample;
use crate::nn::store::ParamStore;
use crate::nn::tape::{Tape, VarId};
use crate::nn::tensor::Tensor;
use crate::nn::{splitmix64, Adam};

/// Hyperparameters of one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub d: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub n_clusters: usize,
    /// Fixed walk horizon T.
    pub path_length: usize,
    pub rollouts_train: usize,
    pub rollouts_test: usize,
    /// Path-feedback strength for the cluster agent.
    pub alpha: f64,
    /// Guidance threshold numerator.
    pub delta: f64,
    /// Guidance threshold regularizer; must stay positive.
    pub epsilon: f64,
    pub baseline: bool,
    pub entropy_beta: f64,
    pub seed: u64,
    pub epochs: usize,
    /// Ablation switch: record the trade-off multiplier as zero so the
    /// entity agent optimizes its own return only (with alpha = 0 this
    /// degenerates to two independent learners).
    pub force_lambda_zero: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 {
            return Err(Error::Config("alpha must be nonnegative".into()));
        }
        if self.delta < 0.0 {
            return Err(Error::Config("delta must be nonnegative".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.path_length == 0 {
            return Err(Error::Config("path_length must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-rollout RNG stream keyed by (seed, epoch, query, rollout) so worker
/// scheduling cannot change the sampled trajectories.
pub fn rollout_seed(master: u64, epoch: u64, query_index: u64, rollout_index: u64) -> u64 {
    let mut s = splitmix64(master ^ 0xA076_1D64_78BD_642F);
    s = splitmix64(s ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    s = splitmix64(s ^ query_index.wrapping_mul(0xC2B2_AE3D_27D4_EB4F));
    splitmix64(s ^ rollout_index.wrapping_mul(0x1656_67B1_9E37_79F9))
}

/// How actions are chosen while driving a rollout.
enum DriveMode<'a> {
    Sample(&'a mut ChaCha12Rng),
    Replay(&'a [(usize, usize)]),
}

/// Tape variables produced along one rollout, kept for gradient replay.
pub struct TapedRollout {
    pub dwarf_log_probs: Vec<VarId>,
    pub giant_log_probs: Vec<VarId>,
    pub dwarf_entropies: Vec<VarId>,
    pub giant_entropies: Vec<VarId>,
    pub lambdas: Vec<VarId>,
}

fn drive_rollout(
    tape: &mut Tape,
    params: &PolicyParams,
    world: &World,
    query: &QuerySample,
    horizon: usize,
    cfg: &TrainConfig,
    training: bool,
    mode: &mut DriveMode,
) -> Result<(DualRollout, TapedRollout)> {
    let targets: Vec<ClusterId> = if training {
        answer_clusters(query, world.clusters)
    } else {
        Vec::new()
    };
    let mut state = StepState::initial(world, query.source, params.d);
    let mut records: Vec<StepRecord> = Vec::with_capacity(horizon);
    let mut taped = TapedRollout {
        dwarf_log_probs: Vec::with_capacity(horizon),
        giant_log_probs: Vec::with_capacity(horizon),
        dwarf_entropies: Vec::with_capacity(horizon),
        giant_entropies: Vec::with_capacity(horizon),
        lambdas: Vec::with_capacity(horizon),
    };

    for t in 0..horizon {
        let eval = dual_step(tape, params, world, query.relation, &state)?;
        tape.check_healthy()?;

        let (dwarf_choice, giant_choice) = match mode {
            DriveMode::Sample(rng) => {
                let dp = tape.value(eval.dwarf_probs).data().to_vec();
                let gp = tape.value(eval.giant_probs).data().to_vec();
                (
                    categorical_sample(&dp, *rng)?,
                    categorical_sample(&gp, *rng)?,
                )
            }
            DriveMode::Replay(actions) => actions[t],
        };

        let dwarf_lp = tape.log_prob(eval.dwarf_logits, dwarf_choice);
        let giant_lp = tape.log_prob(eval.giant_logits, giant_choice);
        let dwarf_h = tape.entropy(eval.dwarf_logits, eval.dwarf_probs);
        let giant_h = tape.entropy(eval.giant_logits, eval.giant_probs);

        let distance = state_distance(world.clusters, world.table, state.cluster, state.entity)?;
        // The guidance threshold uses the per-step cluster hit (is the
        // cluster walker currently on a target cluster), while the return
        // objectives keep the terminal-only convention.
        let step_cluster_hit = if training {
            default_cluster_reward(state.cluster, &targets)
        } else {
            0.0
        };
        let next = eval.advance(tape, dwarf_choice, giant_choice);
        let delta = if training {
            cluster_potential(world.clusters, state.cluster, &targets)?
                - cluster_potential(world.clusters, next.cluster, &targets)?
        } else {
            0.0
        };
        let terminal = t + 1 == horizon;
        let entity_reward = if terminal {
            default_entity_reward(next.entity, &query.answers)
        } else {
            0.0
        };
        let cluster_reward = if terminal && training {
            default_cluster_reward(next.cluster, &targets)
        } else {
            0.0
        };
        let lambda = if cfg.force_lambda_zero {
            0.0
        } else {
            tape.scalar_value(eval.lambda)
        };
        records.push(StepRecord {
            entity: state.entity,
            cluster: state.cluster,
            entity_action: dwarf_choice,
            cluster_action: giant_choice,
            entity_log_prob: tape.scalar_value(dwarf_lp),
            cluster_log_prob: tape.scalar_value(giant_lp),
            entity_reward,
            cluster_reward,
            distance,
            lambda,
            label: guidance_label(distance, step_cluster_hit, cfg.delta, cfg.epsilon),
            delta,
        });
        taped.dwarf_log_probs.push(dwarf_lp);
        taped.giant_log_probs.push(giant_lp);
        taped.dwarf_entropies.push(dwarf_h);
        taped.giant_entropies.push(giant_h);
        taped.lambdas.push(eval.lambda);
        state = next;
    }

    Ok((
        DualRollout {
            query: query.clone(),
            targets,
            records,
            final_entity: state.entity,
            final_cluster: state.cluster,
        },
        taped,
    ))
}

/// Sample `k` rollouts per query with per-rollout RNG streams. Collection is
/// parallel over (query, rollout) pairs; results come back in deterministic
/// order.
pub fn collect_rollouts(
    store: &ParamStore,
    params: &PolicyParams,
    world: &World,
    queries: &[(usize, QuerySample)],
    k: usize,
    cfg: &TrainConfig,
    epoch: usize,
    training: bool,
) -> Result<Vec<DualRollout>> {
    let jobs: Vec<(usize, &QuerySample, usize)> = queries
        .iter()
        .flat_map(|(qi, q)| (0..k).map(move |ki| (*qi, q, ki)))
        .collect();
    jobs.par_iter()
        .map(|&(qi, query, ki)| {
            let mut rng = ChaCha12Rng::seed_from_u64(rollout_seed(
                cfg.seed,
                epoch as u64,
                qi as u64,
                ki as u64,
            ));
            let mut tape = Tape::new(store.values());
            let mut mode = DriveMode::Sample(&mut rng);
            let (rollout, _) = drive_rollout(
                &mut tape,
                params,
                world,
                query,
                cfg.path_length,
                cfg,
                training,
                &mut mode,
            )?;
            Ok(rollout)
        })
        .collect()
}

/// Path-feedback objective of the cluster agent:
/// sum_t [r_c,t - alpha * delta_t].
pub fn giant_objective(rollout: &DualRollout, alpha: f64) -> f64 {
    rollout
        .records
        .iter()
        .map(|r| r.cluster_reward - alpha * r.delta)
        .sum()
}

/// Guidance-exploration objective of the entity agent:
/// sum_t [(1 - lambda_t) * r_e,t + lambda_t * D_t].
pub fn dwarf_objective(rollout: &DualRollout) -> f64 {
    rollout
        .records
        .iter()
        .map(|r| (1.0 - r.lambda) * r.entity_reward + r.lambda * r.distance)
        .sum()
}

/// Cross-entropy loss of the multiplier network against the guidance labels.
pub fn lambda_objective(rollout: &DualRollout) -> f64 {
    rollout
        .records
        .iter()
        .map(|r| -(1.0 - r.label) * (1.0 - r.lambda).ln() - r.label * r.lambda.ln())
        .sum()
}

/// Per-step combined rewards and their suffix sums (returns-to-go).
fn returns_to_go(rollout: &DualRollout, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let t = rollout.records.len();
    let mut dwarf = vec![0.0; t];
    let mut giant = vec![0.0; t];
    let mut acc_d = 0.0;
    let mut acc_g = 0.0;
    for i in (0..t).rev() {
        let r = &rollout.records[i];
        acc_d += (1.0 - r.lambda) * r.entity_reward + r.lambda * r.distance;
        acc_g += r.cluster_reward - alpha * r.delta;
        dwarf[i] = acc_d;
        giant[i] = acc_g;
    }
    (dwarf, giant)
}

/// Batch-mean baselines per step, one per agent.
pub fn step_baselines(rollouts: &[DualRollout], alpha: f64) -> (Vec<f64>, Vec<f64>) {
    if rollouts.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let t = rollouts[0].records.len();
    let mut dwarf = vec![0.0; t];
    let mut giant = vec![0.0; t];
    for rollout in rollouts {
        let (d, g) = returns_to_go(rollout, alpha);
        for i in 0..t {
            dwarf[i] += d[i];
            giant[i] += g[i];
        }
    }
    let n = rollouts.len() as f64;
    for i in 0..t {
        dwarf[i] /= n;
        giant[i] /= n;
    }
    (dwarf, giant)
}

/// Gradient contribution of one rollout, computed by replaying its actions
/// on a fresh tape. The surrogate for each agent is
/// sum_t log pi(a_t) * (G_t - b_t) плюс the entropy bonus; ascent on the
/// agents' objectives and descent on the multiplier loss are combined by
/// seeding backward with -scale and +scale respectively. Each parameter
/// group receives only its own objective's gradient.
#[allow(clippy::too_many_arguments)]
fn rollout_gradients(
    store: &ParamStore,
    params: &PolicyParams,
    world: &World,
    rollout: &DualRollout,
    cfg: &TrainConfig,
    baselines: &(Vec<f64>, Vec<f64>),
    masks: &GroupMasks,
    scale: f64,
) -> Result<Vec<Tensor>> {
    let mut grads: Vec<Tensor> = (0..store.len())
        .map(|id| Tensor::zeros(store.value(id).shape()))
        .collect();
    let mut tape = Tape::new(store.values());
    let actions: Vec<(usize, usize)> = rollout
        .records
        .iter()
        .map(|r| (r.entity_action, r.cluster_action))
        .collect();
    let mut mode = DriveMode::Replay(&actions);
    let (replayed, taped) = drive_rollout(
        &mut tape,
        params,
        world,
        &rollout.query,
        rollout.horizon(),
        cfg,
        !rollout.targets.is_empty(),
        &mut mode,
    )?;
    debug_assert_eq!(replayed.final_entity, rollout.final_entity);

    let (ret_d, ret_g) = returns_to_go(rollout, cfg.alpha);
    let t = rollout.records.len();

    // Entity-agent surrogate.
    let mut terms: Vec<(VarId, f64)> = Vec::with_capacity(2 * t);
    for i in 0..t {
        let adv = ret_d[i] - baselines.0.get(i).copied().unwrap_or(0.0);
        terms.push((taped.dwarf_log_probs[i], adv));
        if cfg.entropy_beta != 0.0 {
            terms.push((taped.dwarf_entropies[i], cfg.entropy_beta));
        }
    }
    let dwarf_surrogate = tape.weighted_sum(&terms);
    tape.backward(dwarf_surrogate, -scale, Some(&masks.dwarf), &mut grads)?;

    // Cluster-agent surrogate.
    let mut terms: Vec<(VarId, f64)> = Vec::with_capacity(2 * t);
    for i in 0..t {
        let adv = ret_g[i] - baselines.1.get(i).copied().unwrap_or(0.0);
        terms.push((taped.giant_log_probs[i], adv));
        if cfg.entropy_beta != 0.0 {
            terms.push((taped.giant_entropies[i], cfg.entropy_beta));
        }
    }
    let giant_surrogate = tape.weighted_sum(&terms);
    tape.backward(giant_surrogate, -scale, Some(&masks.giant), &mut grads)?;

    // Multiplier cross-entropy (descended, so positive seed).
    let mut ce_terms: Vec<(VarId, f64)> = Vec::with_capacity(t);
    for i in 0..t {
        let ce = tape.cross_entropy_bernoulli(taped.lambdas[i], rollout.records[i].label);
        ce_terms.push((ce, 1.0));
    }
    let lambda_loss = tape.weighted_sum(&ce_terms);
    tape.backward(lambda_loss, scale, Some(&masks.lambda), &mut grads)?;

    Ok(grads)
}

pub struct GroupMasks {
    pub dwarf: Vec<bool>,
    pub giant: Vec<bool>,
    pub lambda: Vec<bool>,
}

impl GroupMasks {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            dwarf: store.mask_by_prefix("dwarf."),
            giant: store.mask_by_prefix("giant."),
            lambda: store.mask_by_prefix("lambda."),
        }
    }
}

/// Accumulate policy gradients for a batch of rollouts into the store
/// (mean over rollouts). Parallel over rollouts with an order-fixed
/// reduction, so results are bitwise identical for any worker count.
pub fn accumulate_policy_gradients(
    store: &mut ParamStore,
    params: &PolicyParams,
    world: &World,
    rollouts: &[DualRollout],
    cfg: &TrainConfig,
    masks: &GroupMasks,
) -> Result<()> {
    if rollouts.is_empty() {
        return Ok(());
    }
    let baselines = if cfg.baseline {
        step_baselines(rollouts, cfg.alpha)
    } else {
        (Vec::new(), Vec::new())
    };
    let scale = 1.0 / rollouts.len() as f64;
    let per_rollout: Vec<Vec<Tensor>> = {
        let store_ref: &ParamStore = store;
        rollouts
            .par_iter()
            .map(|rollout| {
                rollout_gradients(
                    store_ref, params, world, rollout, cfg, &baselines, masks, scale,
                )
            })
            .collect::<Result<Vec<_>>>()?
    };
    for grads in per_rollout {
        for (id, g) in grads.into_iter().enumerate() {
            let dst = store.grad_mut(id);
            for (d, s) in dst.data_mut().iter_mut().zip(g.data()) {
                *d += s;
            }
        }
    }
    if (0..store.len()).any(|id| !store.grad(id).is_finite()) {
        return Err(Error::Numeric(
            "non-finite policy gradient; aborting epoch".into(),
        ));
    }
    Ok(())
}

/// Per-epoch scalar metrics, one CSV row each.
#[derive(Debug, Clone)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub j_giant: f64,
    pub j_dwarf: f64,
    pub j_lambda: f64,
    pub css: f64,
    pub ess: f64,
    pub mean_lambda: f64,
    pub mean_label: f64,
    pub hits1_valid: f64,
}

pub const METRICS_HEADER: &str = "epoch,j_giant,j_dwarf,j_lambda,css,ess,mean_lambda,hits1_valid";

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            m.epoch, m.j_giant, m.j_dwarf, m.j_lambda, m.css, m.ess, m.mean_lambda, m.hits1_valid
        ));
    }
    out
}

fn deterministic_shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    use rand::Rng;
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Run the training loop: per epoch, collect rollouts for shuffled query
/// batches, accumulate the three gradients, and apply one Adam update per
/// batch. Returns per-epoch metrics.
pub fn train(
    store: &mut ParamStore,
    params: &PolicyParams,
    world: &World,
    train_queries: &[QuerySample],
    valid_queries: &[QuerySample],
    cfg: &TrainConfig,
    beam_width: usize,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if train_queries.is_empty() {
        return Err(Error::Invalid("no training queries".into()));
    }
    let entity_table_hash = world.table.content_hash();
    let masks = GroupMasks::new(store);
    let mut adam = Adam::new(store, cfg.learning_rate);
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_queries.len()).collect();
        deterministic_shuffle(&mut order, splitmix64(cfg.seed ^ (epoch as u64) << 1));

        let mut epoch_rollouts: Vec<DualRollout> = Vec::new();
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let queries: Vec<(usize, QuerySample)> = batch
                .iter()
                .map(|&qi| (qi, train_queries[qi].clone()))
                .collect();
            let rollouts = collect_rollouts(
                store,
                params,
                world,
                &queries,
                cfg.rollouts_train,
                cfg,
                epoch,
                true,
            )?;
            store.zero_grad();
            accumulate_policy_gradients(store, params, world, &rollouts, cfg, &masks)?;
            adam.step(store);
            epoch_rollouts.extend(rollouts);
        }

        debug_assert_eq!(
            world.table.content_hash(),
            entity_table_hash,
            "frozen entity embeddings changed during training"
        );

        let hits1_valid = if valid_queries.is_empty() {
            f64::NAN
        } else {
            let report = crate::infer::evaluate(
                store,
                params,
                world,
                valid_queries,
                beam_width,
                cfg.path_length,
                &[1],
                &std::collections::HashMap::new(),
            )?;
            report.hits_raw[0]
        };

        let m = epoch_summary(epoch, &epoch_rollouts, world, cfg, hits1_valid);
        log::info!(
            "epoch {}: J_c={:.4} J_e={:.4} J_l={:.4} css={:.4} ess={:.4} mean_lambda={:.4} mean_y={:.4} hits1_valid={:.4}",
            m.epoch, m.j_giant, m.j_dwarf, m.j_lambda, m.css, m.ess, m.mean_lambda, m.mean_label, m.hits1_valid
        );
        metrics.push(m);
    }
    Ok(metrics)
}

/// Aggregate rollouts into one metrics row.
pub fn epoch_summary(
    epoch: usize,
    rollouts: &[DualRollout],
    world: &World,
    cfg: &TrainConfig,
    hits1_valid: f64,
) -> EpochMetrics {
    let n = rollouts.len().max(1) as f64;
    let mut j_giant = 0.0;
    let mut j_dwarf = 0.0;
    let mut j_lambda = 0.0;
    let mut lambda_sum = 0.0;
    let mut label_sum = 0.0;
    let mut steps = 0usize;
    for r in rollouts {
        j_giant += giant_objective(r, cfg.alpha);
        j_dwarf += dwarf_objective(r);
        j_lambda += lambda_objective(r);
        for rec in &r.records {
            lambda_sum += rec.lambda;
            label_sum += rec.label;
            steps += 1;
        }
    }
    let (css, ess) = crate::infer::css_ess(rollouts, world).unwrap_or((f64::NAN, f64::NAN));
    EpochMetrics {
        epoch,
        j_giant: j_giant / n,
        j_dwarf: j_dwarf / n,
        j_lambda: j_lambda / n,
        css,
        ess,
        mean_lambda: lambda_sum / steps.max(1) as f64,
        mean_label: label_sum / steps.max(1) as f64,
        hits1_valid,
    }
}
