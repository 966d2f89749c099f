//! Implementations of the CLI subcommands.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::manifest::RunManifest;
use super::{
    resolve_seed, ComparePatternsArgs, DispersionArgs, EvalArgs, GenCorpusArgs, GradcheckArgs,
    IndexArgs, MineNegativesArgs, SearchArgs, TrainArgs,
};
use crate::encoder::{
    bind_tower, encode_document, encode_query, encode_segments, query_batch, segment_dispersion,
    split_document, BiEncoder, Corpus, EncoderConfig, EncoderRole, InteractionPattern,
    ModelParameters, Record, FIRST_REGULAR_ID,
};
use crate::error::{Result, SedrError};
use crate::eval::{
    compute_metrics, generate, length_strata, load_metadata, ordinal_strata, parse_qrels,
    parse_run, stratified_report, write_run, Metrics, Qrels, Run, RunEntry, StratumReport,
    SyntheticCorpusConfig,
};
use crate::numerics::{grad_check, GradCheckReport, Param, Tape, TensorId};
use crate::retrieval::{build_index, load_index, save_index, search, RetrievalHit, SegmentIndex};
use crate::training::{
    bind_cache, batch_loss, load_checkpoint, load_triples, mine_hard_negatives, save_checkpoint,
    save_triples, BoundInstance, CacheEntry, LateCacheQueue, TrainConfig, Trainer,
    TrainingInstance,
};

/// Resolve an encoder configuration from a profile name plus overrides.
fn encoder_config(
    profile: &str,
    pattern: Option<InteractionPattern>,
    tied: bool,
    max_segments: Option<usize>,
) -> Result<EncoderConfig> {
    let mut cfg = EncoderConfig::by_name(profile)?;
    if let Some(p) = pattern {
        cfg.interaction_pattern = p;
    }
    cfg.tied_encoders = tied;
    if let Some(k) = max_segments {
        cfg.max_segments = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Training hyper-parameter defaults for a profile name.
fn base_train_config(profile: &str) -> TrainConfig {
    if profile == "paper" {
        TrainConfig::paper()
    } else {
        TrainConfig::desk()
    }
}

fn write_manifest(
    man: &RunManifest,
    primary: &Path,
    override_path: Option<&Path>,
) -> Result<()> {
    let at = man.write(primary, override_path)?;
    log::info!("manifest written to {}", at.display());
    Ok(())
}

// ---------------------------------------------------------------- gen-corpus

pub(super) fn gen_corpus(args: &GenCorpusArgs, manifest_override: Option<&Path>) -> Result<()> {
    let seed = resolve_seed(args.seed)?;
    let mut cfg = SyntheticCorpusConfig::desk(seed);
    if let Some(n) = args.num_docs {
        cfg.num_docs = n;
    }
    if let Some(k) = args.max_segments {
        cfg.segment_count_weights = vec![1.0; k];
        cfg.relevant_position_weights = vec![1.0; k];
    }
    if let Some(w) = &args.segment_weights {
        cfg.segment_count_weights = w.clone();
    }
    if let Some(w) = &args.position_weights {
        cfg.relevant_position_weights = w.clone();
    }
    if let Some(n) = args.segment_body_len {
        cfg.segment_body_len = n;
    }
    if let Some(n) = args.vocab_size {
        cfg.vocab_size = n;
    }
    if let Some(n) = args.topic_len {
        cfg.topic_len = n;
    }
    if let Some(n) = args.train_queries {
        cfg.num_train_queries = n;
    }
    if let Some(n) = args.test_queries {
        cfg.num_test_queries = n;
    }
    if let Some(n) = args.query_len {
        cfg.query_len = n;
    }
    if let Some(r) = args.noise_ratio {
        cfg.noise_ratio = r;
    }

    let mut man = RunManifest::new("gen-corpus");
    man.set_seed(seed);
    man.set_config(&cfg)?;
    let data = man.time("generate", || generate(&cfg))?;
    let files = data.write_all(&args.out_dir)?;
    for f in &files {
        man.add_output(f);
    }
    println!(
        "generated {} documents, {} train / {} test queries into {}",
        data.documents.len(),
        data.train_queries.len(),
        data.test_queries.len(),
        args.out_dir.display()
    );
    write_manifest(&man, &files[0], manifest_override)
}

// --------------------------------------------------------------------- train

pub(super) fn train(args: &TrainArgs, manifest_override: Option<&Path>) -> Result<()> {
    let seed = resolve_seed(args.seed)?;
    let warm_start = args.init_from.as_deref().map(load_checkpoint).transpose()?;
    let cfg = match &warm_start {
        Some(model) => model.config.clone(),
        None => encoder_config(&args.profile, args.pattern, args.tied, args.max_segments)?,
    };
    let mut tc = base_train_config(&args.profile);
    tc.seed = seed;
    if let Some(n) = args.cache_size {
        tc.cache_size = n;
    }
    if args.no_cache_negative {
        tc.cache_size = 0;
    }
    if let Some(n) = args.hardness {
        tc.hardness = n;
    }
    if let Some(n) = args.batch_size {
        tc.batch_size = n;
    }
    if let Some(n) = args.epochs {
        tc.epochs = n;
    }
    if let Some(lr) = args.learning_rate {
        tc.learning_rate = lr;
    }

    let docs = Corpus::load_tsv(&args.corpus)?;
    let queries = Corpus::load_tsv(&args.queries)?;
    let instances = load_triples(&args.triples, &queries, &docs)?;

    let mut man = RunManifest::new("train");
    man.set_seed(seed);
    man.set_config(&serde_json::json!({ "encoder": cfg, "train": tc }))?;
    man.add_input(&args.corpus);
    man.add_input(&args.queries);
    man.add_input(&args.triples);

    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut name = args.out.file_name().unwrap_or_default().to_os_string();
        name.push(".log.tsv");
        args.out.with_file_name(name)
    });
    let mut model = match warm_start {
        Some(model) => model,
        None => BiEncoder::new(&cfg, seed)?,
    };
    let mut log_file = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    let records = {
        let mut trainer = Trainer::new(&mut model, &docs, tc.clone())?;
        man.time("train", || trainer.run(&instances, Some(&mut log_file)))?
    };
    log_file.flush()?;
    save_checkpoint(&args.out, &model)?;
    man.add_output(&args.out);
    man.add_output(&log_path);

    let final_loss = records.last().map_or(f64::NAN, |r| r.loss);
    println!(
        "trained {} steps over {} instances; final loss {:.6}; checkpoint {}",
        records.len(),
        instances.len(),
        final_loss,
        args.out.display()
    );
    write_manifest(&man, &args.out, manifest_override)
}

// ----------------------------------------------------------- mine-negatives

/// Parse qrels ids into the numeric id space used by corpora.
fn numeric_positives(qrels: &Qrels) -> Result<BTreeMap<u64, BTreeSet<u64>>> {
    let parse = |s: &str, what: &str| -> Result<u64> {
        s.parse().map_err(|_| {
            SedrError::Contract(format!("qrels {what} `{s}` is not a numeric id"))
        })
    };
    let mut out = BTreeMap::new();
    for q in qrels.queries() {
        let qid = parse(q, "query id")?;
        let mut set = BTreeSet::new();
        for d in qrels.relevant_docs(q) {
            set.insert(parse(d, "doc id")?);
        }
        if !set.is_empty() {
            out.insert(qid, set);
        }
    }
    Ok(out)
}

pub(super) fn mine_negatives(
    args: &MineNegativesArgs,
    manifest_override: Option<&Path>,
) -> Result<()> {
    let seed = resolve_seed(args.seed)?;
    let model = load_checkpoint(&args.checkpoint)?;
    let docs = Corpus::load_tsv(&args.corpus)?;
    let queries = Corpus::load_tsv(&args.queries)?;
    let qrels = parse_qrels(&args.qrels)?;
    let positives = numeric_positives(&qrels)?;

    let minable: Vec<Record> = queries
        .records()
        .iter()
        .filter(|q| positives.contains_key(&q.id))
        .cloned()
        .collect();
    let skipped = queries.len() - minable.len();
    if skipped > 0 {
        log::warn!("{skipped} queries have no judged positive and were skipped");
    }
    if minable.is_empty() {
        return Err(SedrError::Contract(
            "no query has a judged positive; nothing to mine".into(),
        ));
    }

    let mut man = RunManifest::new("mine-negatives");
    man.set_seed(seed);
    man.set_config(&serde_json::json!({
        "encoder": model.config,
        "hardness": args.hardness,
        "queries_mined": minable.len(),
    }))?;
    for p in [&args.checkpoint, &args.corpus, &args.queries, &args.qrels] {
        man.add_input(p);
    }

    let mined = man.time("mine", || {
        mine_hard_negatives(&model, &docs, &minable, &positives, args.hardness, seed)
    })?;
    let mut triples = Vec::with_capacity(minable.len());
    for q in &minable {
        // smallest judged positive: deterministic and independent of qrels order
        let pos = *positives[&q.id].iter().next().expect("non-empty by construction");
        triples.push(TrainingInstance::new(q.clone(), pos, mined[&q.id])?);
    }
    save_triples(&args.out, &triples)?;
    man.add_output(&args.out);
    println!("mined hard negatives for {} queries into {}", triples.len(), args.out.display());
    write_manifest(&man, &args.out, manifest_override)
}

// --------------------------------------------------------------------- index

pub(super) fn index(args: &IndexArgs, manifest_override: Option<&Path>) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let docs = Corpus::load_tsv(&args.corpus)?;
    let mut man = RunManifest::new("index");
    man.set_config(&model.config)?;
    man.add_input(&args.checkpoint);
    man.add_input(&args.corpus);
    let (idx, report) = man.time("encode", || build_index(&model, &docs))?;
    save_index(&idx, &args.out)?;
    man.add_output(&args.out);
    println!(
        "indexed {} documents ({} segment vectors) into {}",
        report.indexed_docs,
        idx.records().len(),
        args.out.display()
    );
    write_manifest(&man, &args.out, manifest_override)?;
    if !report.skipped.is_empty() {
        return Err(SedrError::Contract(format!(
            "{} documents failed to encode and were skipped",
            report.skipped.len()
        )));
    }
    Ok(())
}

// -------------------------------------------------------------------- search

fn encode_queries(model: &BiEncoder, queries: &[Record]) -> Result<Vec<Vec<f64>>> {
    queries.par_iter().map(|q| encode_query(model, q)).collect()
}

fn run_from_hits(queries: &[Record], hits: &[Vec<RetrievalHit>]) -> Run {
    let mut run = Run::new();
    for (q, hs) in queries.iter().zip(hits) {
        run.set_ranking(
            q.id.to_string(),
            hs.iter()
                .map(|h| RunEntry { doc_id: h.doc_id.to_string(), score: h.score })
                .collect(),
        );
    }
    run
}

fn search_corpus(
    model: &BiEncoder,
    index: &SegmentIndex,
    queries: &Corpus,
    top_n: usize,
    man: &mut RunManifest,
) -> Result<Run> {
    let vectors = man.time("encode_queries", || encode_queries(model, queries.records()))?;
    let hits: Vec<Vec<RetrievalHit>> = man.time("search", || {
        vectors.par_iter().map(|v| search(index, v, top_n)).collect()
    })?;
    Ok(run_from_hits(queries.records(), &hits))
}

pub(super) fn search_cmd(args: &SearchArgs, manifest_override: Option<&Path>) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let index = load_index(&args.index)?;
    let queries = Corpus::load_tsv(&args.queries)?;
    if queries.is_empty() {
        return Err(SedrError::Contract("query file is empty".into()));
    }
    let mut man = RunManifest::new("search");
    man.set_config(&serde_json::json!({
        "encoder": model.config,
        "top_n": args.top_n,
        "tag": args.tag,
    }))?;
    for p in [&args.checkpoint, &args.index, &args.queries] {
        man.add_input(p);
    }
    let run = search_corpus(&model, &index, &queries, args.top_n, &mut man)?;
    write_run(&args.out, &run, &args.tag)?;
    man.add_output(&args.out);
    println!(
        "searched {} queries over {} segment vectors into {}",
        queries.len(),
        index.records().len(),
        args.out.display()
    );
    write_manifest(&man, &args.out, manifest_override)
}

// ---------------------------------------------------------------------- eval

/// Length-band bounds derived from the metadata: one band per distinct
/// positive-document length.
fn derived_length_bounds(metadata: &crate::eval::Metadata) -> Vec<usize> {
    let mut lens: Vec<usize> = metadata.values().map(|m| m.doc_len).collect();
    lens.sort_unstable();
    lens.dedup();
    lens.pop();
    lens
}

fn print_metrics_table(metrics: &Metrics) {
    println!("queries evaluated: {}", metrics.num_queries);
    println!("{:<12} {:.6}", "MRR@100", metrics.mrr_at_100);
    println!("{:<12} {:.6}", "NDCG@10", metrics.ndcg_at_10);
    println!("{:<12} {:.6}", "Recall@100", metrics.recall_at_100);
}

fn print_strata_table(reports: &[StratumReport]) {
    println!(
        "{:<16} {:>8} {:>10} {:>10} {:>12}",
        "stratum", "queries", "MRR@100", "NDCG@10", "Recall@100"
    );
    for r in reports {
        match &r.metrics {
            Some(m) => println!(
                "{:<16} {:>8} {:>10.6} {:>10.6} {:>12.6}",
                r.name, r.num_queries, m.mrr_at_100, m.ndcg_at_10, m.recall_at_100
            ),
            None => println!("{:<16} {:>8} {:>10} {:>10} {:>12}", r.name, 0, "-", "-", "-"),
        }
    }
}

pub(super) fn eval(args: &EvalArgs, manifest_override: Option<&Path>) -> Result<()> {
    let run = parse_run(&args.run)?;
    let qrels = parse_qrels(&args.qrels)?;
    let overall = compute_metrics(&run, &qrels);
    print_metrics_table(&overall);

    let mut strata_reports = Vec::new();
    if let Some(kind) = &args.strata {
        let metadata_path = args.metadata.as_ref().expect("clap enforces --metadata");
        let metadata = load_metadata(metadata_path)?;
        let strata = match kind.as_str() {
            "ordinal" => ordinal_strata(&metadata),
            "length" => {
                let bounds = args
                    .length_bounds
                    .clone()
                    .unwrap_or_else(|| derived_length_bounds(&metadata));
                length_strata(&bounds)
            }
            other => return Err(SedrError::Config(format!("unknown strata kind `{other}`"))),
        };
        strata_reports = stratified_report(&run, &qrels, &metadata, &strata)?;
        print_strata_table(&strata_reports);
    }

    // machine-readable record, always the last stdout line
    println!(
        "mrr_at_100={} ndcg_at_10={} recall_at_100={} num_queries={}",
        overall.mrr_at_100, overall.ndcg_at_10, overall.recall_at_100, overall.num_queries
    );

    if let Some(out) = &args.out {
        let report = serde_json::json!({
            "overall": overall,
            "strata": strata_reports
                .iter()
                .map(|r| serde_json::json!({
                    "name": r.name,
                    "num_queries": r.num_queries,
                    "metrics": r.metrics,
                }))
                .collect::<Vec<_>>(),
        });
        let text = serde_json::to_string_pretty(&report)
            .map_err(|e| SedrError::Format(format!("metrics report: {e}")))?;
        std::fs::write(out, text + "\n")?;
        let mut man = RunManifest::new("eval");
        man.set_config(&serde_json::json!({
            "strata": args.strata,
            "length_bounds": args.length_bounds,
        }))?;
        man.add_input(&args.run);
        man.add_input(&args.qrels);
        if let Some(m) = &args.metadata {
            man.add_input(m);
        }
        man.add_output(out);
        write_manifest(&man, out, manifest_override)?;
    }
    Ok(())
}

// ----------------------------------------------------------------- gradcheck

/// What the gradient check runs over: a synthetic batch (queries, positive
/// and hard-negative documents of a fixed segment count) plus detached cache
/// entries, all derived deterministically from one seed.
#[derive(Debug, Clone)]
pub struct GradcheckSpec {
    pub config: EncoderConfig,
    pub batch_size: usize,
    /// Segments per synthetic document.
    pub segments: usize,
    pub cache_entries: usize,
    /// Lower bound on sampled coordinates (stratified: every parameter
    /// tensor contributes at least one).
    pub samples: usize,
    pub eps: f64,
    pub seed: u64,
}

impl GradcheckSpec {
    /// The default diagnostic: tiny profile, segment interaction, 3-segment
    /// documents, batch of 2, two cache entries, 200 coordinates.
    pub fn tiny(seed: u64) -> GradcheckSpec {
        let mut config = EncoderConfig::tiny();
        config.interaction_pattern = InteractionPattern::SegmentInteraction;
        GradcheckSpec {
            config,
            batch_size: 2,
            segments: 3,
            cache_entries: 2,
            samples: 200,
            eps: 1e-5,
            seed,
        }
    }
}

/// Check the full batch-loss gradient (encoder towers through InfoNCE with
/// cached negatives) against central finite differences.
pub fn run_gradcheck(spec: &GradcheckSpec) -> Result<GradCheckReport> {
    spec.config.validate()?;
    if spec.batch_size == 0 {
        return Err(SedrError::Config("gradcheck batch_size must be positive".into()));
    }
    if spec.segments == 0 || spec.segments > spec.config.max_segments {
        return Err(SedrError::Config(format!(
            "gradcheck segments {} must be in 1..={}",
            spec.segments, spec.config.max_segments
        )));
    }

    let cfg = spec.config.clone();
    let body = cfg.segment_body_len;
    let d = cfg.hidden_dim;
    let vocab = cfg.vocab_size as u32;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rand_tokens = |rng: &mut ChaCha8Rng, n: usize| -> Vec<u32> {
        (0..n).map(|_| rng.gen_range(FIRST_REGULAR_ID..vocab)).collect()
    };
    // token count landing mid-way into the last segment
    let doc_len = (spec.segments - 1) * body + body.div_ceil(2);
    let mut instances = Vec::with_capacity(spec.batch_size);
    for i in 0..spec.batch_size {
        let query = Record { id: 900_000 + i as u64, token_ids: rand_tokens(&mut rng, 5) };
        let positive = Record { id: 2 * i as u64, token_ids: rand_tokens(&mut rng, doc_len) };
        let negative = Record { id: 2 * i as u64 + 1, token_ids: rand_tokens(&mut rng, doc_len) };
        instances.push((query, positive, negative));
    }
    let mut cache = LateCacheQueue::new(spec.cache_entries);
    let rand_vec = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()
    };
    for _ in 0..spec.cache_entries {
        let entry = CacheEntry {
            query: rand_vec(&mut rng, d),
            positive_segments: (0..2).map(|_| rand_vec(&mut rng, d)).collect(),
            negative_segments: vec![rand_vec(&mut rng, d)],
        };
        cache.push(entry);
    }

    let model = BiEncoder::new(&cfg, spec.seed)?;
    let mut params: Vec<Param> = model.all_params().into_iter().cloned().collect();
    let n_doc = ModelParameters::layout_len(&cfg, EncoderRole::Document);
    let tied = cfg.tied_encoders;

    let build = move |params: &[Param], tape: &mut Tape<f64>| -> Result<(TensorId, Vec<TensorId>)> {
        let doc_tower =
            ModelParameters::from_entries(&cfg, EncoderRole::Document, params[..n_doc].to_vec())?;
        let query_tower = if tied {
            None
        } else {
            Some(ModelParameters::from_entries(
                &cfg,
                EncoderRole::Query,
                params[n_doc..].to_vec(),
            )?)
        };
        let doc_enc = bind_tower(tape, &doc_tower, true)?;
        let query_enc = match &query_tower {
            Some(q) => bind_tower(tape, q, true)?,
            None => doc_enc.clone(),
        };
        let mut bound = Vec::with_capacity(instances.len());
        for (q, pos, neg) in &instances {
            let qb = query_batch(q, &cfg)?;
            let query = encode_segments(tape, &query_enc, &cfg, &qb)?;
            let pb = split_document(pos, &cfg)?;
            let positive = encode_segments(tape, &doc_enc, &cfg, &pb)?;
            let nb = split_document(neg, &cfg)?;
            let hard_negative = encode_segments(tape, &doc_enc, &cfg, &nb)?;
            bound.push(BoundInstance { query, positive, hard_negative });
        }
        let cache_bound = bind_cache(tape, &cache)?;
        let loss = batch_loss(tape, &bound, &cache_bound)?;
        let mut leaves = doc_enc.leaves.clone();
        if query_tower.is_some() {
            leaves.extend_from_slice(&query_enc.leaves);
        }
        Ok((loss, leaves))
    };
    grad_check(&mut params, build, spec.eps, spec.samples, spec.seed ^ 0x5EED)
}

pub(super) fn gradcheck(args: &GradcheckArgs, manifest_override: Option<&Path>) -> Result<()> {
    let seed = resolve_seed(args.seed)?;
    let mut config = EncoderConfig::by_name(&args.profile)?;
    config.interaction_pattern = args.pattern;
    let spec = GradcheckSpec {
        config,
        batch_size: args.batch_size,
        segments: args.segments,
        cache_entries: args.cache_entries,
        samples: args.samples,
        eps: args.eps,
        seed,
    };
    let start = Instant::now();
    let report = run_gradcheck(&spec)?;
    println!(
        "checked {} coordinates in {:.1}s; worst {}[{}]: analytic {:.6e} vs numeric {:.6e}",
        report.coords_checked,
        start.elapsed().as_secs_f64(),
        report.worst_param,
        report.worst_index,
        report.worst_analytic,
        report.worst_numeric
    );
    println!("max relative error: {:.3e}", report.max_rel_error);
    if let Some(p) = manifest_override {
        let mut man = RunManifest::new("gradcheck");
        man.set_seed(seed);
        man.set_config(&serde_json::json!({
            "encoder": spec.config,
            "batch_size": spec.batch_size,
            "segments": spec.segments,
            "cache_entries": spec.cache_entries,
            "samples": spec.samples,
            "eps": spec.eps,
            "max_rel_error": report.max_rel_error,
        }))?;
        man.write(p, Some(p))?;
    }
    if report.max_rel_error < 1e-4 {
        println!("gradcheck: PASS");
        Ok(())
    } else {
        Err(SedrError::Numeric(format!(
            "gradient check failed: max relative error {:.3e} >= 1e-4 at {}[{}]",
            report.max_rel_error, report.worst_param, report.worst_index
        )))
    }
}

// ---------------------------------------------------------- compare-patterns

struct PatternRow {
    pattern: InteractionPattern,
    parameters: usize,
    train_seconds: f64,
    seconds_per_epoch: f64,
    metrics: Metrics,
}

pub(super) fn compare_patterns(
    args: &ComparePatternsArgs,
    manifest_override: Option<&Path>,
) -> Result<()> {
    let seed = resolve_seed(args.seed)?;
    let base_cfg = encoder_config(&args.profile, None, args.tied, args.max_segments)?;
    let mut tc = base_train_config(&args.profile);
    tc.seed = seed;
    if let Some(n) = args.cache_size {
        tc.cache_size = n;
    }
    if let Some(n) = args.batch_size {
        tc.batch_size = n;
    }
    if let Some(n) = args.epochs {
        tc.epochs = n;
    }
    if let Some(lr) = args.learning_rate {
        tc.learning_rate = lr;
    }

    let docs = Corpus::load_tsv(&args.corpus)?;
    let train_queries = Corpus::load_tsv(&args.train_queries)?;
    let instances = load_triples(&args.triples, &train_queries, &docs)?;
    let test_queries = Corpus::load_tsv(&args.test_queries)?;
    let qrels = parse_qrels(&args.qrels)?;
    std::fs::create_dir_all(&args.out_dir)?;

    let mut man = RunManifest::new("compare-patterns");
    man.set_seed(seed);
    man.set_config(&serde_json::json!({
        "encoder_base": base_cfg,
        "train": tc,
        "top_n": args.top_n,
    }))?;
    for p in [&args.corpus, &args.train_queries, &args.triples, &args.test_queries, &args.qrels] {
        man.add_input(p);
    }

    let mut rows = Vec::new();
    for pattern in InteractionPattern::ALL {
        let mut cfg = base_cfg.clone();
        cfg.interaction_pattern = pattern;
        let mut model = BiEncoder::new(&cfg, seed)?;
        let parameters = model.numel();

        log::info!("training pattern {pattern} ({parameters} parameters)");
        let log_path = args.out_dir.join(format!("train.{pattern}.log.tsv"));
        let mut log_file = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
        let t0 = Instant::now();
        {
            let mut trainer = Trainer::new(&mut model, &docs, tc.clone())?;
            trainer.run(&instances, Some(&mut log_file))?;
        }
        let train_seconds = t0.elapsed().as_secs_f64();
        log_file.flush()?;
        man.timings_seconds.insert(format!("train.{pattern}"), train_seconds);

        let ckpt_path = args.out_dir.join(format!("model.{pattern}.ckpt"));
        save_checkpoint(&ckpt_path, &model)?;
        let (index, report) = build_index(&model, &docs)?;
        if !report.skipped.is_empty() {
            return Err(SedrError::Contract(format!(
                "{} documents failed to encode under pattern {pattern}",
                report.skipped.len()
            )));
        }
        let run = search_corpus(&model, &index, &test_queries, args.top_n, &mut man)?;
        let run_path = args.out_dir.join(format!("run.{pattern}.trec"));
        write_run(&run_path, &run, &format!("sedr-{pattern}"))?;
        for p in [&log_path, &ckpt_path, &run_path] {
            man.add_output(p);
        }
        let metrics = compute_metrics(&run, &qrels);
        rows.push(PatternRow {
            pattern,
            parameters,
            train_seconds,
            seconds_per_epoch: train_seconds / tc.epochs.max(1) as f64,
            metrics,
        });
    }

    println!(
        "{:<8} {:>11} {:>9} {:>9} {:>9} {:>9} {:>11}",
        "pattern", "parameters", "train_s", "s/epoch", "MRR@100", "NDCG@10", "Recall@100"
    );
    for r in &rows {
        println!(
            "{:<8} {:>11} {:>9.1} {:>9.1} {:>9.6} {:>9.6} {:>11.6}",
            r.pattern.as_str(),
            r.parameters,
            r.train_seconds,
            r.seconds_per_epoch,
            r.metrics.mrr_at_100,
            r.metrics.ndcg_at_10,
            r.metrics.recall_at_100
        );
    }

    // deterministic columns only: wall-clock stays in stdout and the manifest
    let table_path = args.out_dir.join("comparison.tsv");
    let mut table = String::from("pattern\tparameters\tmrr_at_100\tndcg_at_10\trecall_at_100\n");
    for r in &rows {
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.pattern.as_str(),
            r.parameters,
            r.metrics.mrr_at_100,
            r.metrics.ndcg_at_10,
            r.metrics.recall_at_100
        ));
    }
    std::fs::write(&table_path, table)?;
    man.add_output(&table_path);
    write_manifest(&man, &table_path, manifest_override)
}

// ---------------------------------------------------------------- dispersion

pub(super) fn dispersion(args: &DispersionArgs, manifest_override: Option<&Path>) -> Result<()> {
    let seed = resolve_seed(args.seed)?;
    let corpus = Corpus::load_tsv(&args.corpus)?;
    let docs: Vec<&Record> = match args.sample {
        Some(n) if n < corpus.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idxs = rand::seq::index::sample(&mut rng, corpus.len(), n).into_vec();
            idxs.sort_unstable();
            idxs.into_iter().map(|i| &corpus.records()[i]).collect()
        }
        _ => corpus.records().iter().collect(),
    };

    let mut rows = Vec::new();
    for ckpt in &args.checkpoints {
        let model = load_checkpoint(ckpt)?;
        let values: Vec<Option<f64>> = docs
            .par_iter()
            .map(|doc| {
                let segs = encode_document(&model, doc)?;
                if segs.len() < 2 {
                    Ok(None)
                } else {
                    segment_dispersion(&segs).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let used: Vec<f64> = values.into_iter().flatten().collect();
        if used.is_empty() {
            return Err(SedrError::Contract(format!(
                "no multi-segment documents to measure for {}",
                ckpt.display()
            )));
        }
        let mean = used.iter().sum::<f64>() / used.len() as f64;
        println!(
            "checkpoint={} pattern={} multi_segment_docs={} mean_dispersion={}",
            ckpt.display(),
            model.config.interaction_pattern,
            used.len(),
            mean
        );
        rows.push((ckpt.clone(), model.config.interaction_pattern, used.len(), mean));
    }

    if let Some(out) = &args.out {
        let mut table = String::from("checkpoint\tpattern\tmulti_segment_docs\tmean_dispersion\n");
        for (ckpt, pattern, n, mean) in &rows {
            table.push_str(&format!("{}\t{}\t{}\t{}\n", ckpt.display(), pattern, n, mean));
        }
        std::fs::write(out, table)?;
        let mut man = RunManifest::new("dispersion");
        man.set_seed(seed);
        man.set_config(&serde_json::json!({ "sample": args.sample }))?;
        man.add_input(&args.corpus);
        for c in &args.checkpoints {
            man.add_input(c);
        }
        man.add_output(out);
        write_manifest(&man, out, manifest_override)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tied_gradcheck_spans_one_tower() {
        let mut spec = GradcheckSpec::tiny(3);
        spec.config.hidden_dim = 8;
        spec.config.ffn_dim = 16;
        spec.config.num_layers = 1;
        spec.config.segment_body_len = 6;
        spec.config.tied_encoders = true;
        spec.samples = 10;
        let report = run_gradcheck(&spec).unwrap();
        assert!(report.max_rel_error < 1e-4, "rel error {}", report.max_rel_error);
    }

    #[test]
    fn gradcheck_rejects_more_segments_than_the_profile_allows() {
        let mut spec = GradcheckSpec::tiny(3);
        spec.segments = spec.config.max_segments + 1;
        assert!(matches!(run_gradcheck(&spec), Err(SedrError::Config(_))));
    }

    #[test]
    fn derived_length_bounds_band_each_distinct_length() {
        use crate::eval::QueryMeta;
        let mut meta = crate::eval::Metadata::new();
        for (q, len) in [("a", 32), ("b", 64), ("c", 64), ("d", 128)] {
            meta.insert(q.into(), QueryMeta { doc_len: len, rel_ordinal: 0 });
        }
        assert_eq!(derived_length_bounds(&meta), vec![32, 64]);
    }

    #[test]
    fn numeric_positives_requires_numeric_ids() {
        let mut qrels = Qrels::new();
        qrels.insert("12", "34", 1);
        let ok = numeric_positives(&qrels).unwrap();
        assert_eq!(ok[&12], BTreeSet::from([34]));
        qrels.insert("x", "34", 1);
        assert!(matches!(numeric_positives(&qrels), Err(SedrError::Contract(_))));
    }
}
