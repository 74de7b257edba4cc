//! Run configuration loading: a TOML file mirroring [`RunConfig`] with
//! relative paths anchored at the file's directory, then command-line
//! overrides on top.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;

use sevade_core::adjudicator::AdjudicatorConfig;
use sevade_core::pipeline::{Ablation, RunConfig};
use sevade_core::{BackendKind, SearchProviderConfig};

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Dataset file (JSON Lines, or CSV by extension).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub dataset_name: Option<String>,
    #[arg(short, long)]
    pub output_dir: Option<PathBuf>,
    /// `mock` or `remote`.
    #[arg(long, value_parser = parse_backend_kind)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    /// Base URL of an OpenAI-compatible chat endpoint.
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Response cache directory; reruns replay cached exchanges.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Baseline adjudicator model file.
    #[arg(long, conflicts_with = "remote_url")]
    pub adjudicator_model: Option<PathBuf>,
    /// Remote adjudicator service.
    #[arg(long)]
    pub remote_url: Option<String>,
    #[arg(long)]
    pub max_concurrency: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ablation to apply; repeat or comma-separate (no-evolving, no-ra,
    /// no-websearch, no-sia, no-pca, no-rda, no-epia, no-csva, no-peca).
    #[arg(long = "ablation", value_delimiter = ',')]
    pub ablations: Vec<Ablation>,
    #[arg(long)]
    pub prompts_dir: Option<PathBuf>,
    /// Directory of canned search results keyed by keyword.
    #[arg(long, conflicts_with = "search_url")]
    pub search_fixtures: Option<PathBuf>,
    /// HTTP search endpoint.
    #[arg(long)]
    pub search_url: Option<String>,
}

fn parse_backend_kind(s: &str) -> Result<BackendKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "mock" => Ok(BackendKind::Mock),
        "remote" => Ok(BackendKind::Remote),
        other => Err(format!("unknown backend `{other}` (expected mock or remote)")),
    }
}

fn anchor(base: &Path, path: &mut PathBuf) {
    if path.is_relative() && !path.as_os_str().is_empty() {
        *path = base.join(&*path);
    }
}

/// Rewrites every relative path in `config` as relative to `base`.
pub fn resolve_paths(config: &mut RunConfig, base: &Path) {
    anchor(base, &mut config.dataset);
    anchor(base, &mut config.output_dir);
    for p in [&mut config.prompts_dir, &mut config.backend.mock_script, &mut config.backend.cache_dir].into_iter().flatten() {
        anchor(base, p);
    }
    if let SearchProviderConfig::Stub { fixtures_dir: Some(dir) } = &mut config.search {
        anchor(base, dir);
    }
    if let Some(AdjudicatorConfig::Baseline { model_path }) = &mut config.adjudicator {
        anchor(base, model_path);
    }
}

pub fn load_file(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut config: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    resolve_paths(&mut config, base);
    Ok(config)
}

impl RunArgs {
    /// The file configuration (or defaults) with flags applied.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => load_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.dataset {
            c.dataset = v.clone();
        }
        if let Some(v) = &self.dataset_name {
            c.dataset_name = Some(v.clone());
        }
        if let Some(v) = &self.output_dir {
            c.output_dir = v.clone();
        }
        if let Some(v) = self.backend {
            c.backend.kind = v;
        }
        if let Some(v) = &self.mock_script {
            c.backend.mock_script = Some(v.clone());
        }
        if let Some(v) = &self.base_url {
            c.backend.base_url = Some(v.clone());
        }
        if let Some(v) = &self.model {
            c.backend.model_name = v.clone();
        }
        if let Some(v) = &self.cache_dir {
            c.backend.cache_dir = Some(v.clone());
        }
        if let Some(v) = &self.adjudicator_model {
            c.adjudicator = Some(AdjudicatorConfig::Baseline { model_path: v.clone() });
        }
        if let Some(v) = &self.remote_url {
            c.adjudicator = Some(AdjudicatorConfig::Remote {
                remote_url: v.clone(),
                timeout_secs: 30,
            });
        }
        if let Some(v) = self.max_concurrency {
            c.max_concurrency = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        c.ablations.extend(self.ablations.iter().cloned());
        if let Some(v) = &self.prompts_dir {
            c.prompts_dir = Some(v.clone());
        }
        if let Some(v) = &self.search_fixtures {
            c.search = SearchProviderConfig::Stub { fixtures_dir: Some(v.clone()) };
        }
        if let Some(v) = &self.search_url {
            c.search = SearchProviderConfig::Http {
                base_url: v.clone(),
                timeout_secs: 10,
            };
        }
        Ok(c)
    }
}
