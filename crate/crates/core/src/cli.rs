//! Pipeline commands: prepare (embeddings + clusters), train, eval, analyze
//! (time-series diagnostics over the metrics log) and oracle (shaping
//! consistency report).

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::agents::{validate_param_shapes, PolicyParams};
use crate::analysis::{adf_test, difference, granger_f, summarize, TimeSeries, MIN_TEST_LENGTH};
use crate::checkpoint;
use crate::config::Config;
use crate::embed::{
    build_cluster_graph, build_cluster_model, kmeans, transe_train, ClusterModel, EmbeddingTable,
    TranseConfig,
};
use crate::env::World;
use crate::error::{Error, Result};
use crate::infer::{evaluate, results_csv};
use crate::kg::{degree_stats, group_queries, known_tails, load_dataset, Dataset, KnowledgeGraph};
use crate::nn::store::ParamStore;
use crate::nn::tensor::Tensor;
use crate::nn::derive_seed;
use crate::oracle::{shaping_consistency_check, ShapingCheckConfig};
use crate::train::{metrics_csv, train, TrainConfig};

pub const EMBED_CHECKPOINT: &str = "embed.ckpt";
pub const POLICY_CHECKPOINT: &str = "policy.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const ANALYSIS_FILE: &str = "analysis.csv";

pub fn default_out_dir(cfg: &Config) -> PathBuf {
    cfg.dataset_dir.join("artifacts")
}

fn load_graph(dataset: &Dataset) -> KnowledgeGraph {
    KnowledgeGraph::build(
        dataset.entities.len(),
        &dataset.relations,
        &dataset.facts,
        true,
        true,
    )
}

/// Build embeddings and the cluster model, write the artifact files, echo
/// the resolved configuration and the degree statistics.
pub fn cmd_prepare(cfg: &Config, out_dir: &Path) -> Result<()> {
    print!("{}", cfg.echo());
    let dataset = load_dataset(&cfg.dataset_dir)?;
    let graph = load_graph(&dataset);

    let base_graph = KnowledgeGraph::build(
        dataset.entities.len(),
        &dataset.relations,
        &dataset.facts,
        false,
        false,
    );
    let (mean, median) = degree_stats(&base_graph, &dataset.relations)?;
    println!("degree_mean={mean}");
    println!("degree_median={median}");

    let transe_cfg = TranseConfig {
        d: cfg.embedding_size,
        seed: cfg.seed,
        ..TranseConfig::default()
    };
    let (table, report) = transe_train(
        &dataset.facts,
        dataset.entities.len(),
        dataset.relations.len(),
        &transe_cfg,
    )?;
    println!(
        "pretrain_gap={} over {} held-out facts",
        report.holdout_gap, report.holdout_size
    );

    let km = kmeans(
        table.entity_rows(),
        dataset.entities.len(),
        cfg.embedding_size,
        cfg.cluster_number,
        cfg.seed,
        100,
    )?;
    let clusters = build_cluster_model(&graph, &km, cfg.embedding_size, cfg.cluster_number, cfg.seed);

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    dataset
        .entities
        .write_tsv(&out_dir.join("entity_vocab.tsv"))?;
    dataset
        .relations
        .write_tsv(&out_dir.join("relation_vocab.tsv"))?;
    checkpoint::save_embeddings(&out_dir.join(EMBED_CHECKPOINT), &table, &clusters, cfg.seed)?;
    println!("prepared artifacts in {}", out_dir.display());
    Ok(())
}

/// Load the prepared artifacts and rebuild the cluster adjacency.
fn load_world_parts(
    cfg: &Config,
    out_dir: &Path,
) -> Result<(Dataset, KnowledgeGraph, EmbeddingTable, ClusterModel)> {
    let dataset = load_dataset(&cfg.dataset_dir)?;
    let graph = load_graph(&dataset);
    let path = out_dir.join(EMBED_CHECKPOINT);
    if !path.is_file() {
        return Err(Error::Config(format!(
            "missing artifact {}; run prepare first",
            path.display()
        )));
    }
    let (table, mut clusters, _seed) = checkpoint::load_embeddings(&path)?;
    if table.n_entities() != dataset.entities.len() || table.n_relations() != dataset.relations.len()
    {
        return Err(Error::Shape(format!(
            "embedding checkpoint covers {}x{} vocabularies, dataset has {}x{}",
            table.n_entities(),
            table.n_relations(),
            dataset.entities.len(),
            dataset.relations.len()
        )));
    }
    if table.d != cfg.embedding_size {
        return Err(Error::Shape(format!(
            "embedding checkpoint has size {}, config asks for {}",
            table.d, cfg.embedding_size
        )));
    }
    if clusters.n_clusters != cfg.cluster_number {
        return Err(Error::Shape(format!(
            "cluster checkpoint has {} clusters, config asks for {}",
            clusters.n_clusters, cfg.cluster_number
        )));
    }
    clusters.adjacency = build_cluster_graph(&graph, &clusters.assignment, clusters.n_clusters);
    Ok((dataset, graph, table, clusters))
}

fn train_config(cfg: &Config) -> TrainConfig {
    TrainConfig {
        d: cfg.embedding_size,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        n_clusters: cfg.cluster_number,
        path_length: cfg.path_length,
        rollouts_train: cfg.rollouts_train,
        rollouts_test: cfg.rollouts_test,
        alpha: cfg.alpha,
        delta: cfg.delta,
        epsilon: cfg.epsilon,
        baseline: cfg.baseline,
        entropy_beta: cfg.entropy_beta,
        seed: cfg.seed,
        epochs: cfg.epochs,
        force_lambda_zero: false,
    }
}

/// Train the policies; writes the parameter checkpoint and the metrics CSV.
pub fn cmd_train(cfg: &Config, out_dir: &Path) -> Result<()> {
    let (dataset, graph, table, clusters) = load_world_parts(cfg, out_dir)?;
    let world = World {
        graph: &graph,
        relations: &dataset.relations,
        table: &table,
        clusters: &clusters,
    };

    let mut store = ParamStore::new();
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, "policy_init"));
    let rel_init = Tensor::matrix(
        dataset.relations.len(),
        cfg.embedding_size,
        table.relation_rows().to_vec(),
    );
    let parts_init = Tensor::matrix(
        cfg.cluster_number,
        cfg.embedding_size,
        clusters.learned_parts.clone(),
    );
    let params = PolicyParams::register(&mut store, cfg.embedding_size, rel_init, parts_init, &mut rng)?;

    let train_queries = group_queries(&dataset.train);
    let valid_queries = group_queries(&dataset.valid);
    let tc = train_config(cfg);
    let metrics = train(
        &mut store,
        &params,
        &world,
        &train_queries,
        &valid_queries,
        &tc,
        cfg.beam_size,
    )?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    checkpoint::save_params(&out_dir.join(POLICY_CHECKPOINT), &store, cfg.embedding_size)?;
    let metrics_path = out_dir.join(METRICS_FILE);
    fs::write(&metrics_path, metrics_csv(&metrics)).map_err(|e| Error::io(&metrics_path, e))?;
    println!(
        "trained {} epochs; checkpoint and metrics in {}",
        cfg.epochs,
        out_dir.display()
    );
    Ok(())
}

/// Rank the test queries with beam search; prints the summary and writes the
/// per-query results CSV.
pub fn cmd_eval(cfg: &Config, out_dir: &Path) -> Result<()> {
    let (dataset, graph, table, clusters) = load_world_parts(cfg, out_dir)?;
    let world = World {
        graph: &graph,
        relations: &dataset.relations,
        table: &table,
        clusters: &clusters,
    };
    let path = out_dir.join(POLICY_CHECKPOINT);
    if !path.is_file() {
        return Err(Error::Config(format!(
            "missing checkpoint {}; run train first",
            path.display()
        )));
    }
    let (store, d) = checkpoint::load_params(&path)?;
    if d != cfg.embedding_size {
        return Err(Error::Shape(format!(
            "policy checkpoint has embedding size {d}, config asks for {}",
            cfg.embedding_size
        )));
    }
    validate_param_shapes(&store, d, dataset.relations.len(), cfg.cluster_number)?;
    let params = PolicyParams::resolve(&store, d)?;

    let queries = group_queries(&dataset.test);
    if queries.is_empty() {
        return Err(Error::Invalid("test split has no queries".into()));
    }
    let known = known_tails(&[
        &dataset.facts,
        &dataset.train,
        &dataset.valid,
        &dataset.test,
    ]);
    let ks = [1, 3, 10];
    let report = evaluate(
        &store,
        &params,
        &world,
        &queries,
        cfg.beam_size,
        cfg.path_length,
        &ks,
        &known,
    )?;

    println!("mrr_raw={}", report.mrr_raw);
    println!("mrr_filtered={}", report.mrr_filtered);
    for (i, k) in ks.iter().enumerate() {
        println!("hits{}_raw={}", k, report.hits_raw[i]);
        println!("hits{}_filtered={}", k, report.hits_filtered[i]);
    }
    let out_path = out_dir.join(RESULTS_FILE);
    fs::write(&out_path, results_csv(&report)).map_err(|e| Error::io(&out_path, e))?;
    println!("results in {}", out_path.display());
    Ok(())
}

/// Parse named columns from the trainer's metrics CSV.
fn read_metrics_columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty metrics file"))?;
    let columns: Vec<&str> = header.split(',').collect();
    let mut indices = Vec::with_capacity(names.len());
    for name in names {
        let idx = columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::parse(path, 1, format!("missing column {name}")))?;
        indices.push(idx);
    }
    let mut out = vec![Vec::new(); names.len()];
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        for (slot, &idx) in indices.iter().enumerate() {
            let field = fields.get(idx).ok_or_else(|| {
                Error::parse(path, lineno + 2, format!("missing field {idx}"))
            })?;
            let value: f64 = field
                .parse()
                .map_err(|_| Error::parse(path, lineno + 2, format!("bad number {field:?}")))?;
            out[slot].push(value);
        }
    }
    Ok(out)
}

/// Stationarity diagnostics and causality F-tests over the logged entity and
/// cluster similarity curves.
pub fn cmd_analyze(metrics_path: &Path, lag: usize, out_path: Option<&Path>) -> Result<()> {
    let columns = read_metrics_columns(metrics_path, &["ess", "css"])?;
    let ess = TimeSeries::new("ess", columns[0].clone())?;
    let css = TimeSeries::new("css", columns[1].clone())?;
    if ess.len() < MIN_TEST_LENGTH {
        return Err(Error::Invalid(format!(
            "series length >= {MIN_TEST_LENGTH} required, got {}",
            ess.len()
        )));
    }

    let mut report = String::new();
    let mut csv = String::from("section,key,value\n");

    for series in [&ess, &css] {
        let s = summarize(&series.values)?;
        report.push_str(&format!(
            "{}: mean={:.6} variance={:.6} mean/variance={:.6}\n",
            series.label, s.mean, s.variance, s.mean_variance_ratio
        ));
        csv.push_str(&format!("summary,{}_mean,{}\n", series.label, s.mean));
        csv.push_str(&format!("summary,{}_variance,{}\n", series.label, s.variance));
        csv.push_str(&format!(
            "summary,{}_ratio,{}\n",
            series.label, s.mean_variance_ratio
        ));
    }

    let adf_ess = adf_test(&ess.values, lag)?;
    let adf_css = adf_test(&css.values, lag)?;
    for (label, adf) in [("ess", &adf_ess), ("css", &adf_css)] {
        report.push_str(&format!(
            "adf {}: t={:.4} decision={}\n",
            label,
            adf.t_stat,
            adf.decision.as_str()
        ));
        csv.push_str(&format!("adf,{}_t,{}\n", label, adf.t_stat));
        csv.push_str(&format!("adf,{}_decision,{}\n", label, adf.decision.as_str()));
    }

    // Difference both series once when either looks non-stationary, keeping
    // them aligned for the causality regressions.
    let needs_difference =
        !adf_ess.decision.rejects_at_5() || !adf_css.decision.rejects_at_5();
    let (ess_vals, css_vals) = if needs_difference {
        let de = difference(&ess.values, 1)?;
        let dc = difference(&css.values, 1)?;
        for (label, series) in [("ess", &de), ("css", &dc)] {
            match adf_test(series, lag) {
                Ok(adf) => {
                    report.push_str(&format!(
                        "adf d{}: t={:.4} decision={}\n",
                        label,
                        adf.t_stat,
                        adf.decision.as_str()
                    ));
                    csv.push_str(&format!("adf,d{}_t,{}\n", label, adf.t_stat));
                    csv.push_str(&format!(
                        "adf,d{}_decision,{}\n",
                        label,
                        adf.decision.as_str()
                    ));
                }
                Err(e) => report.push_str(&format!("adf d{label}: {e}\n")),
            }
        }
        report.push_str("differenced both series once before the causality test\n");
        (de, dc)
    } else {
        (ess.values.clone(), css.values.clone())
    };

    let ess_to_css = granger_f(&ess_vals, &css_vals, lag)?;
    let css_to_ess = granger_f(&css_vals, &ess_vals, lag)?;
    report.push_str(&format!(
        "granger ess->css: F={:.4} (rss_r={:.6e}, rss_u={:.6e})\n",
        ess_to_css.f_stat, ess_to_css.rss_restricted, ess_to_css.rss_unrestricted
    ));
    report.push_str(&format!(
        "granger css->ess: F={:.4} (rss_r={:.6e}, rss_u={:.6e})\n",
        css_to_ess.f_stat, css_to_ess.rss_restricted, css_to_ess.rss_unrestricted
    ));
    csv.push_str(&format!("granger,ess_to_css_f,{}\n", ess_to_css.f_stat));
    csv.push_str(&format!("granger,css_to_ess_f,{}\n", css_to_ess.f_stat));

    print!("{report}");
    let out_path = out_path
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| metrics_path.with_file_name(ANALYSIS_FILE));
    fs::write(&out_path, csv).map_err(|e| Error::io(&out_path, e))?;
    println!("analysis in {}", out_path.display());
    Ok(())
}

/// Print the shaping-consistency report.
pub fn cmd_oracle(trials: usize, alpha: f64, seed: u64, states: usize, horizon: usize) -> Result<()> {
    let assert_identity = states <= 4 && horizon <= 3;
    let cfg = ShapingCheckConfig {
        trials,
        alpha,
        seed,
        max_states: states,
        max_horizon: horizon,
        assert_policy_identity: assert_identity,
        absorbing_target: true,
    };
    let report = shaping_consistency_check(&cfg)?;
    print!("{}", report.to_text());
    Ok(())
}

/// Entry point shared by the binary: dispatch one parsed command inside a
/// worker pool of the requested size.
pub enum Command {
    Prepare {
        config: PathBuf,
        overrides: Vec<String>,
        out: Option<PathBuf>,
    },
    Train {
        config: PathBuf,
        overrides: Vec<String>,
        out: Option<PathBuf>,
    },
    Eval {
        config: PathBuf,
        overrides: Vec<String>,
        out: Option<PathBuf>,
    },
    Analyze {
        metrics: PathBuf,
        lag: usize,
        out: Option<PathBuf>,
    },
    Oracle {
        trials: usize,
        alpha: f64,
        seed: u64,
        states: usize,
        horizon: usize,
    },
}

pub fn run(command: Command, workers: usize) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("cannot build worker pool: {e}")))?;
    pool.install(|| match command {
        Command::Prepare {
            config,
            overrides,
            out,
        } => {
            let cfg = Config::load(&config, &overrides)?;
            let out = out.unwrap_or_else(|| default_out_dir(&cfg));
            cmd_prepare(&cfg, &out)
        }
        Command::Train {
            config,
            overrides,
            out,
        } => {
            let cfg = Config::load(&config, &overrides)?;
            let out = out.unwrap_or_else(|| default_out_dir(&cfg));
            cmd_train(&cfg, &out)
        }
        Command::Eval {
            config,
            overrides,
            out,
        } => {
            let cfg = Config::load(&config, &overrides)?;
            let out = out.unwrap_or_else(|| default_out_dir(&cfg));
            cmd_eval(&cfg, &out)
        }
        Command::Analyze { metrics, lag, out } => cmd_analyze(&metrics, lag, out.as_deref()),
        Command::Oracle {
            trials,
            alpha,
            seed,
            states,
            horizon,
        } => cmd_oracle(trials, alpha, seed, states, horizon),
    })
}
