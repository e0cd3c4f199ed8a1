//! The pipeline commands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use topictree::corpus::{mine_terms, TermSet};
use topictree::evaluation::{intrusion_packet, relation_packet, write_jsonl, DbReport};
use topictree::taxonomy::{build_taxonomy_with_global, train_global};
use topictree::{BuildConfig, Corpus, EmbeddingTable, Mode, Taxonomy};

use crate::cache::{content_key, write_atomic, StageCache};
use crate::config::RunConfig;

/// Stage results shared by `build` and `ablate`.
pub struct Prepared {
    pub corpus: Corpus,
    pub global: EmbeddingTable,
    pub global_key: String,
    /// Stages served from the cache.
    pub cache_hits: Vec<&'static str>,
}

#[derive(Debug, Clone)]
pub struct BuildSummary {
    pub taxonomy: PathBuf,
    pub cache_hits: Vec<&'static str>,
    pub nodes: usize,
    pub depth: usize,
}

fn cache_for(config: &RunConfig) -> Result<StageCache> {
    if config.use_cache {
        StageCache::new(&config.cache_dir())
    } else {
        Ok(StageCache::disabled())
    }
}

fn pool(config: &RunConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads())
        .build()
        .context("starting worker pool")
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    bytes
}

/// Term list and global embeddings, each cached by content hash.
pub fn prepare(config: &RunConfig, cache: &StageCache) -> Result<Prepared> {
    let corpus_path = config.corpus_path()?;
    let text = fs::read_to_string(corpus_path)
        .with_context(|| format!("stage corpus: reading {}", corpus_path.display()))?;
    let lines: Vec<&str> = text.lines().collect();
    let mut cache_hits = Vec::new();

    let source_bytes = match &config.paths.terms {
        Some(p) => fs::read(p).with_context(|| format!("stage terms: reading {}", p.display()))?,
        None => serde_json::to_vec(&config.mining)?,
    };
    let source_tag: &[u8] = if config.paths.terms.is_some() { b"list" } else { b"mine" };
    let terms_key = content_key(&[b"terms-v1", text.as_bytes(), source_tag, &source_bytes]);
    let terms = match cache.lookup("terms", &terms_key, "txt") {
        Some(path) => {
            cache_hits.push("terms");
            TermSet::load(&path).context("stage terms: cached term list")?
        }
        None => {
            let terms = match &config.paths.terms {
                Some(p) => TermSet::load(p).context("stage terms")?,
                None => mine_terms(&lines, &config.mining).context("stage terms: mining")?,
            };
            cache.store("terms", &terms_key, "txt", terms.to_lines().as_bytes())?;
            terms
        }
    };
    log::info!("{} terms", terms.len());
    let corpus = Corpus::from_lines(&lines, terms).context("stage corpus")?;
    if corpus.dropped() > 0 {
        log::warn!("{} documents contain no terms and were dropped", corpus.dropped());
    }

    let train = config.build.global_train_config();
    let global_key = content_key(&[
        b"global-v1",
        terms_key.as_bytes(),
        &serde_json::to_vec(&train)?,
    ]);
    let global = match cache.lookup("global", &global_key, "bin") {
        Some(path) => {
            cache_hits.push("global");
            EmbeddingTable::load_binary(&corpus.terms, &path)
                .context("stage global embedding: cached table")?
        }
        None => {
            log::info!("training global embeddings on {} documents", corpus.num_docs());
            let table = train_global(&corpus, &config.build).context("stage global embedding")?;
            let mut bytes = Vec::new();
            table.write_binary(&corpus.terms, &mut bytes)?;
            cache.store("global", &global_key, "bin", &bytes)?;
            table
        }
    };
    Ok(Prepared {
        corpus,
        global,
        global_key,
        cache_hits,
    })
}

fn build_with(prepared: &Prepared, build: &BuildConfig, config: &RunConfig) -> Result<Taxonomy> {
    pool(config)?
        .install(|| build_taxonomy_with_global(&prepared.corpus, build, &prepared.global))
        .context("stage taxonomy")
}

/// Mine or load terms, train global embeddings, build and export the taxonomy.
///
/// Outputs in the output directory: `taxonomy.json`, `db_report.json`,
/// `terms.txt`, `embeddings.txt`, `config.toml`, and the optional dumps.
pub fn cmd_build(config: &RunConfig) -> Result<BuildSummary> {
    config.validate(true)?;
    let cache = cache_for(config)?;
    let mut prepared = prepare(config, &cache)?;
    let out = &config.paths.output;

    let mut build = config.build.clone();
    build.keep_split_trace = config.dump_splits;
    let tax_key = content_key(&[
        b"taxonomy-v1",
        prepared.global_key.as_bytes(),
        &serde_json::to_vec(&build)?,
        &config.top_n.to_le_bytes(),
    ]);
    let dumps = config.dump_splits || config.dump_docs;
    let cached = if dumps {
        None
    } else {
        cache
            .lookup("taxonomy", &tax_key, "json")
            .zip(cache.lookup("db", &tax_key, "json"))
    };

    let (taxonomy_json, db_json) = match cached {
        Some((tax_path, db_path)) => {
            prepared.cache_hits.push("taxonomy");
            (fs::read(tax_path)?, fs::read(db_path)?)
        }
        None => {
            let tax = build_with(&prepared, &build, config)?;
            if let Err(e) = tax.validate(Some(build.l_max)) {
                bail!("stage taxonomy: invariant violated: {e}");
            }
            let taxonomy_json = tax.to_json(config.top_n).into_bytes();
            let db_json = to_json(&DbReport::from_build(&tax));
            cache.store("taxonomy", &tax_key, "json", &taxonomy_json)?;
            cache.store("db", &tax_key, "json", &db_json)?;
            if config.dump_splits {
                write_atomic(&out.join("splits.jsonl"), tax.split_trace_json_lines().as_bytes())?;
            }
            if config.dump_docs {
                write_atomic(&out.join("doc_ids.jsonl"), tax.doc_ids_json_lines().as_bytes())?;
            }
            (taxonomy_json, db_json)
        }
    };

    let tax_path = out.join("taxonomy.json");
    write_atomic(&tax_path, &taxonomy_json).context("stage export")?;
    write_atomic(&out.join("db_report.json"), &db_json)?;
    write_atomic(&out.join("terms.txt"), prepared.corpus.terms.to_lines().as_bytes())?;
    let mut emb = Vec::new();
    prepared.global.write_text(&prepared.corpus.terms, &mut emb)?;
    write_atomic(&out.join("embeddings.txt"), &emb)?;
    write_atomic(&out.join("config.toml"), config.to_toml().as_bytes())?;

    let written = Taxonomy::import(&tax_path).context("stage export: re-reading taxonomy")?;
    Ok(BuildSummary {
        taxonomy: tax_path,
        cache_hits: prepared.cache_hits,
        nodes: written.nodes().len(),
        depth: written.root.depth(),
    })
}

#[derive(Debug, Serialize)]
struct ModeReport {
    mode: Mode,
    build_space: DbReport,
    global_space: DbReport,
}

#[derive(Debug, Serialize)]
pub struct AblationSummary {
    /// Mean build-space DB per mode, in the order full, no_ac, no_le.
    pub means: Vec<(Mode, Option<f64>)>,
}

/// Build the taxonomy in every mode from one global table and compare DB indices.
pub fn cmd_ablate(config: &RunConfig) -> Result<AblationSummary> {
    config.validate(true)?;
    let cache = cache_for(config)?;
    let prepared = prepare(config, &cache)?;
    let out = &config.paths.output;
    let mut reports = Vec::new();
    for mode in [Mode::Full, Mode::NoAc, Mode::NoLe] {
        let build = BuildConfig {
            mode,
            ..config.build.clone()
        };
        log::info!("building mode {mode}");
        let tax = build_with(&prepared, &build, config)?;
        write_atomic(
            &out.join(format!("taxonomy_{mode}.json")),
            tax.to_json(config.top_n).as_bytes(),
        )?;
        reports.push(ModeReport {
            mode,
            build_space: DbReport::from_build(&tax),
            global_space: DbReport::in_space(&tax, &prepared.global, "global"),
        });
    }
    write_atomic(&out.join("ablation_report.json"), &to_json(&reports))?;
    Ok(AblationSummary {
        means: reports.iter().map(|r| (r.mode, r.build_space.mean)).collect(),
    })
}

/// DB index in a shared embedding space, plus both annotation packets.
///
/// The space is `embeddings` when given, otherwise global embeddings are
/// trained on the configured corpus.
pub fn cmd_eval(config: &RunConfig, taxonomy: &Path, embeddings: Option<&Path>) -> Result<DbReport> {
    config.validate(embeddings.is_none())?;
    let tax = Taxonomy::import(taxonomy).context("stage import")?;
    let table = match embeddings {
        Some(path) => {
            let (terms, table) = EmbeddingTable::load_standalone(path)
                .with_context(|| format!("stage embeddings: {}", path.display()))?;
            table.reindex(&terms, &tax.terms)
        }
        None => {
            let text = fs::read_to_string(config.corpus_path()?)?;
            let lines: Vec<&str> = text.lines().collect();
            let corpus = Corpus::from_lines(&lines, tax.terms.clone()).context("stage corpus")?;
            pool(config)?
                .install(|| train_global(&corpus, &config.build))
                .context("stage embeddings")?
        }
    };
    let missing = tax
        .nodes()
        .iter()
        .flat_map(|n| n.terms.iter())
        .filter(|(t, _)| !table.contains(*t))
        .count();
    if missing > 0 {
        log::warn!("{missing} taxonomy terms have no vector and are ignored");
    }

    let out = &config.paths.output;
    let report = DbReport::in_space(&tax, &table, "shared");
    write_atomic(&out.join("db_report.json"), &to_json(&report))?;

    let relations = relation_packet(&tax, config.packet_top_n, config.packet_seed);
    let mut bytes = Vec::new();
    write_jsonl(&mut bytes, &relations)?;
    write_atomic(&out.join("relation_packet.jsonl"), &bytes)?;

    let (quiz, key) = intrusion_packet(&tax, config.packet_seed);
    let mut bytes = Vec::new();
    write_jsonl(&mut bytes, &quiz)?;
    write_atomic(&out.join("intrusion_quiz.jsonl"), &bytes)?;
    let mut bytes = Vec::new();
    write_jsonl(&mut bytes, &key)?;
    write_atomic(&out.join("intrusion_key.jsonl"), &bytes)?;
    Ok(report)
}

/// Nearest neighbours of `term` by cosine, as a printable table.
pub fn cmd_query(embeddings: &Path, term: &str, k: usize) -> Result<String> {
    let (terms, table) = EmbeddingTable::load_standalone(embeddings)
        .with_context(|| format!("loading {}", embeddings.display()))?;
    let normalized = TermSet::from_terms([term]);
    let key = normalized
        .terms()
        .first()
        .ok_or_else(|| anyhow!("empty query term"))?;
    let id = terms
        .id(key)
        .ok_or_else(|| anyhow!("term {key:?} is not in the embedding file"))?;
    let hits = table.nearest_terms(id, k)?;
    let width = hits
        .iter()
        .map(|&(t, _)| terms.term(t).len())
        .max()
        .unwrap_or(4)
        .max(4);
    let mut out = String::new();
    writeln!(out, "query: {key}").unwrap();
    writeln!(out, "{:>4}  {:<width$}  {:>8}", "rank", "term", "cosine").unwrap();
    for (rank, (t, sim)) in hits.iter().enumerate() {
        writeln!(out, "{:>4}  {:<width$}  {:>8.4}", rank + 1, terms.term(*t), sim).unwrap();
    }
    Ok(out)
}
