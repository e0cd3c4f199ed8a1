//! Run configuration: one TOML file, overridable from the command line.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use topictree::{BuildConfig, MiningConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// One document per line.
    pub corpus: Option<PathBuf>,
    /// One term per line; terms are mined from the corpus when absent.
    pub terms: Option<PathBuf>,
    pub output: PathBuf,
    /// Stage cache. Defaults to `<output>/.cache`.
    pub cache: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: None,
            terms: None,
            output: PathBuf::from("out"),
            cache: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Worker threads; 0 means one per physical core.
    pub threads: usize,
    pub log_level: String,
    /// Terms per node in the exported taxonomy.
    pub top_n: usize,
    /// Terms per topic in the relation packet.
    pub packet_top_n: usize,
    pub packet_seed: u64,
    pub use_cache: bool,
    /// Write per-round split audits to `splits.jsonl`.
    pub dump_splits: bool,
    /// Write per-node document ids to `doc_ids.jsonl`.
    pub dump_docs: bool,
    pub paths: Paths,
    pub mining: MiningConfig,
    pub build: BuildConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            threads: 0,
            log_level: "info".into(),
            top_n: 8,
            packet_top_n: 5,
            packet_seed: 7,
            use_cache: true,
            dump_splits: false,
            dump_docs: false,
            paths: Paths::default(),
            mining: MiningConfig::default(),
            build: BuildConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse a config file. Relative paths inside it resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let anchor = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        config.paths.corpus.as_mut().map(anchor);
        config.paths.terms.as_mut().map(anchor);
        config.paths.cache.as_mut().map(anchor);
        anchor(&mut config.paths.output);
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        let mut out = toml::to_string_pretty(self).expect("config serializes");
        if self.build.min_terms_to_split.is_none() {
            out.push_str(&format!(
                "# build.min_terms_to_split defaults to 4 * k = {}\n",
                self.build.min_terms()
            ));
        }
        out
    }

    /// Apply `section.key=value` overrides. Values are TOML literals; bare words are strings.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        if overrides.is_empty() {
            return Ok(());
        }
        let mut root = toml::Value::try_from(&*self)?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .with_context(|| format!("override {item:?} is not key=value"))?;
            let value = parse_literal(raw.trim());
            let mut parts = key.trim().split('.').peekable();
            let mut cursor = &mut root;
            while let Some(part) = parts.next() {
                let table = cursor
                    .as_table_mut()
                    .with_context(|| format!("override {key:?}: {part:?} is not inside a table"))?;
                if parts.peek().is_none() {
                    table.insert(part.to_string(), value.clone());
                    break;
                }
                cursor = table
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()));
            }
        }
        *self = root
            .try_into()
            .context("applying overrides")?;
        Ok(())
    }

    pub fn threads(&self) -> usize {
        if self.threads == 0 {
            num_cpus::get_physical().max(1)
        } else {
            self.threads
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.paths
            .cache
            .clone()
            .unwrap_or_else(|| self.paths.output.join(".cache"))
    }

    pub fn corpus_path(&self) -> Result<&Path> {
        match &self.paths.corpus {
            Some(p) => Ok(p),
            None => bail!("no corpus given (paths.corpus or --corpus)"),
        }
    }

    /// Check inputs exist and the output directory can be created.
    pub fn validate(&self, needs_corpus: bool) -> Result<()> {
        if needs_corpus {
            let corpus = self.corpus_path()?;
            if !corpus.is_file() {
                bail!("corpus file {} does not exist", corpus.display());
            }
        }
        if let Some(terms) = &self.paths.terms {
            if !terms.is_file() {
                bail!("term list {} does not exist", terms.display());
            }
        }
        if self.top_n == 0 {
            bail!("top_n must be positive");
        }
        self.build.validate()?;
        fs::create_dir_all(&self.paths.output)
            .with_context(|| format!("creating {}", self.paths.output.display()))?;
        Ok(())
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
