//! Synthetic benchmark generator: branch-structured layered graphs with a
//! planted compositional rule. The query relation holds exactly when a fixed
//! chain of base relations connects source to answer; every chain stays
//! inside its branch, while cross-branch noise edges let an unguided walker
//! leak into the rest of the graph. Chain edges are functional (one outgoing
//! chain edge per node), so each source has a unique rule answer.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Number of chain hops (the planted rule composes this many relations).
    pub hops: usize,
    /// Independent branches; sources and their answers share a branch.
    pub branches: usize,
    /// Entities per (branch, layer) group; layer 0 holds the sources.
    pub group_size: usize,
    /// Noise relations, split between intra-branch and cross-branch use.
    pub noise_relations: usize,
    /// Intra-branch noise edges per entity.
    pub intra_noise_per_entity: usize,
    /// Cross-branch noise edges per entity.
    pub cross_noise_per_entity: usize,
    /// Fraction of query triples put in the training split.
    pub train_fraction: f64,
    /// Fraction of the training split carved off for validation.
    pub valid_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            hops: 3,
            branches: 10,
            group_size: 7,
            noise_relations: 6,
            intra_noise_per_entity: 2,
            cross_noise_per_entity: 2,
            train_fraction: 0.8,
            valid_fraction: 0.1,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub facts: Vec<(String, String, String)>,
    pub train: Vec<(String, String, String)>,
    pub valid: Vec<(String, String, String)>,
    pub test: Vec<(String, String, String)>,
    pub n_entities: usize,
    pub n_relations: usize,
    /// branch index per entity id (entities are named e<id>).
    pub branch_of: Vec<usize>,
}

/// Generate the branch-structured dataset. Queries (source, rq, answer) are
/// never graph facts, so answering one takes the full chain walk.
pub fn planted_rule_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    if cfg.hops == 0 || cfg.branches == 0 || cfg.group_size < 2 {
        return Err(Error::Invalid(
            "need at least one hop, one branch and two entities per group".into(),
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let layers = cfg.hops + 1;
    let n_entities = cfg.branches * layers * cfg.group_size;
    // Entities are laid out branch-major: branch b, layer l, slot i.
    let id = |b: usize, l: usize, i: usize| (b * layers + l) * cfg.group_size + i;
    let name = |e: usize| format!("e{e}");
    let mut branch_of = vec![0usize; n_entities];
    for b in 0..cfg.branches {
        for l in 0..layers {
            for i in 0..cfg.group_size {
                branch_of[id(b, l, i)] = b;
            }
        }
    }

    // Functional chain maps (branch, layer l) -> (branch, layer l+1) via
    // relation r{l+1}.
    let mut facts = Vec::new();
    let mut chain_next = vec![usize::MAX; n_entities];
    for b in 0..cfg.branches {
        for l in 0..cfg.hops {
            for i in 0..cfg.group_size {
                let succ = id(b, l + 1, rng.gen_range(0..cfg.group_size));
                let e = id(b, l, i);
                chain_next[e] = succ;
                facts.push((name(e), format!("r{}", l + 1), name(succ)));
            }
        }
    }

    // Noise edges. Intra-branch noise uses the first half of the noise
    // relations, cross-branch noise the second half.
    let n_noise = cfg.noise_relations.max(2);
    let intra_rels = n_noise / 2;
    for e in 0..n_entities {
        let b = branch_of[e];
        for _ in 0..cfg.intra_noise_per_entity {
            let rel = format!("n{}", rng.gen_range(0..intra_rels.max(1)));
            let l = rng.gen_range(0..layers);
            let mut slot = rng.gen_range(0..cfg.group_size);
            if id(b, l, slot) == e {
                slot = (slot + 1) % cfg.group_size;
            }
            let t = id(b, l, slot);
            if t != e {
                facts.push((name(e), rel, name(t)));
            }
        }
        for _ in 0..cfg.cross_noise_per_entity {
            let rel = format!("n{}", rng.gen_range(intra_rels..n_noise));
            let mut ob = rng.gen_range(0..cfg.branches);
            if cfg.branches > 1 {
                while ob == b {
                    ob = rng.gen_range(0..cfg.branches);
                }
            }
            let t = id(ob, rng.gen_range(0..layers), rng.gen_range(0..cfg.group_size));
            facts.push((name(e), rel, name(t)));
        }
    }

    // Query triples follow the composed chain.
    let mut queries = Vec::new();
    for b in 0..cfg.branches {
        for i in 0..cfg.group_size {
            let s = id(b, 0, i);
            let mut node = s;
            for _ in 0..cfg.hops {
                node = chain_next[node];
            }
            queries.push((name(s), "rq".to_string(), name(node)));
        }
    }
    // Deterministic shuffle, then split.
    for i in (1..queries.len()).rev() {
        let j = rng.gen_range(0..=i);
        queries.swap(i, j);
    }
    let n_train_total = ((queries.len() as f64) * cfg.train_fraction).round() as usize;
    let n_valid = ((n_train_total as f64) * cfg.valid_fraction).round() as usize;
    let test = queries.split_off(n_train_total);
    let valid = queries.split_off(n_train_total.saturating_sub(n_valid));
    let train = queries;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Invalid(
            "splits came out empty; increase branches or group_size".into(),
        ));
    }

    Ok(SynthDataset {
        facts,
        train,
        valid,
        test,
        n_entities,
        n_relations: cfg.hops + 1 + n_noise,
        branch_of,
    })
}

fn write_split(path: &Path, triples: &[(String, String, String)]) -> Result<()> {
    let mut out = String::new();
    for (h, r, t) in triples {
        let _ = writeln!(out, "{h}\t{r}\t{t}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Materialize the dataset as TSV splits under a directory.
pub fn write_dataset(dir: &Path, data: &SynthDataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_split(&dir.join("facts.txt"), &data.facts)?;
    write_split(&dir.join("train.txt"), &data.train)?;
    write_split(&dir.join("valid.txt"), &data.valid)?;
    write_split(&dir.join("test.txt"), &data.test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashMap, HashSet};

    #[test]
    fn chain_edges_are_functional_and_rule_holds() {
        let cfg = SynthConfig {
            hops: 3,
            branches: 5,
            group_size: 4,
            seed: 5,
            ..SynthConfig::default()
        };
        let data = planted_rule_dataset(&cfg).unwrap();

        // One outgoing chain edge per (node, chain relation).
        let mut seen: HashSet<(String, String)> = HashSet::new();
        let mut chain: HashMap<(String, String), String> = HashMap::new();
        for (h, r, t) in &data.facts {
            if r.starts_with('r') {
                assert!(seen.insert((h.clone(), r.clone())), "duplicate chain edge");
                chain.insert((h.clone(), r.clone()), t.clone());
            }
        }

        // Every query answer equals the composed chain.
        for split in [&data.train, &data.valid, &data.test] {
            for (s, rq, o) in split {
                assert_eq!(rq, "rq");
                let mut node = s.clone();
                for hop in 1..=cfg.hops {
                    node = chain[&(node, format!("r{hop}"))].clone();
                }
                assert_eq!(&node, o);
            }
        }

        // Queries never leak into the facts.
        assert!(data.facts.iter().all(|(_, r, _)| r != "rq"));
    }

    #[test]
    fn chains_stay_inside_their_branch() {
        let cfg = SynthConfig::default();
        let data = planted_rule_dataset(&cfg).unwrap();
        let branch = |name: &str| data.branch_of[name[1..].parse::<usize>().unwrap()];
        for (h, r, t) in &data.facts {
            if r.starts_with('r') {
                assert_eq!(branch(h), branch(t), "chain edge crossed branches");
            }
        }
        for (s, _, o) in data.train.iter().chain(&data.test) {
            assert_eq!(branch(s), branch(o), "query crossed branches");
        }
    }

    #[test]
    fn split_sizes_follow_fractions() {
        let cfg = SynthConfig {
            hops: 3,
            branches: 10,
            group_size: 5,
            seed: 9,
            ..SynthConfig::default()
        };
        let data = planted_rule_dataset(&cfg).unwrap();
        assert_eq!(data.train.len() + data.valid.len() + data.test.len(), 50);
        assert_eq!(data.test.len(), 10);
        assert_eq!(data.valid.len(), 4);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig::default();
        let a = planted_rule_dataset(&cfg).unwrap();
        let b = planted_rule_dataset(&cfg).unwrap();
        assert_eq!(a.facts, b.facts);
        assert_eq!(a.test, b.test);
    }
}
