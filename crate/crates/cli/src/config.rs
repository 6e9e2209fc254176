//! `run.toml`: everything a run depends on, in one file. Relative paths are
//! resolved against the directory holding the config. API keys never live
//! here; each model names the environment variable that holds its key.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use flowshot::harness::DetectorKind;
use flowshot::llm::{ModelConfig, RefusalPatterns};
use flowshot::mlp::TrainConfig;
use flowshot::select::OrderingStrategy;
use flowshot::FeatureSelection;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default)]
    pub models: ModelsConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub mlp: TrainConfig,
    #[serde(default)]
    pub ordering: OrderingConfig,
    #[serde(default)]
    pub reason: ReasonConfig,
    #[serde(default)]
    pub refusal_patterns: Option<RefusalPatterns>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub paths: Vec<PathBuf>,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    pub features: FeatureSelection,
    #[serde(default = "default_train_size")]
    pub train_size: usize,
    #[serde(default = "default_eval_size")]
    pub eval_size: usize,
    #[serde(default = "default_dataset_seed")]
    pub seed: u64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptConfig {
    /// Layout file with `{preamble}`, `{examples}`, `{separator}`, `{test}`
    /// and `{instruction}` placeholders.
    pub template: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelsConfig {
    pub chat: ModelConfig,
    pub embed: ModelConfig,
    /// Training-set size to fine-tuned model id, e.g. `70 = "ft:gpt-3.5-turbo:acme:flows70"`.
    pub finetuned: BTreeMap<String, String>,
    /// Seed of the offline hash embedder used under `--mock`.
    pub mock_embed_seed: u64,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        Self {
            chat: ModelConfig::default(),
            embed: ModelConfig::named("text-embedding-ada-002"),
            finetuned: BTreeMap::new(),
            mock_embed_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub n_values: Vec<usize>,
    pub detectors: Vec<String>,
    pub sampling_seed: u64,
    pub redraw_per_case: bool,
    pub topk_ordering: OrderingStrategy,
    pub parallelism: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_values: vec![0, 1, 2, 5, 10, 20, 30, 50, 70],
            detectors: DetectorKind::ALL.iter().map(|d| d.name().to_string()).collect(),
            sampling_seed: 13,
            redraw_per_case: true,
            topk_ordering: OrderingStrategy::DescendingRelevance,
            parallelism: 4,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrderingConfig {
    pub k: usize,
    pub strategies: Vec<OrderingStrategy>,
}

impl Default for OrderingConfig {
    fn default() -> Self {
        Self {
            k: 10,
            strategies: vec![
                OrderingStrategy::DescendingRelevance,
                OrderingStrategy::MostRelevantMiddle,
                OrderingStrategy::MostRelevantEnds,
            ],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReasonConfig {
    /// How many evaluation cases to send, taken from the front of the set.
    pub cases: usize,
}

impl Default for ReasonConfig {
    fn default() -> Self {
        Self { cases: 10 }
    }
}

fn default_label_column() -> String {
    flowshot::flow::DEFAULT_LABEL_COLUMN.to_string()
}

fn default_train_size() -> usize {
    flowshot::flow::TRAIN_POOL_CAP
}

fn default_eval_size() -> usize {
    50
}

fn default_dataset_seed() -> u64 {
    7
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        self.dataset.paths.iter_mut().for_each(fix);
        if let Some(t) = self.prompt.template.as_mut() {
            fix(t);
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dataset.paths.is_empty() {
            bail!("dataset.paths is empty");
        }
        if self.sweep.parallelism == 0 {
            bail!("sweep.parallelism must be at least 1");
        }
        self.models.chat.validate().context("models.chat")?;
        self.models.embed.validate().context("models.embed")?;
        self.mlp.validate().context("mlp")?;
        self.finetuned_models()?;
        Ok(())
    }

    /// Fine-tuned model configs keyed by training-set size. Each inherits
    /// everything but the model name from the chat model.
    pub fn finetuned_models(&self) -> Result<BTreeMap<usize, ModelConfig>> {
        self.models
            .finetuned
            .iter()
            .map(|(n, name)| {
                let n: usize = n.parse().with_context(|| format!("models.finetuned key {n:?} is not a size"))?;
                Ok((n, ModelConfig { model_name: name.clone(), ..self.models.chat.clone() }))
            })
            .collect()
    }

    pub fn dir(&self, sub: &str) -> Result<PathBuf> {
        let d = self.output_dir.join(sub);
        fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
output_dir = "out"
[dataset]
paths = ["flows.csv"]
features = ["a", "b", "c", "d"]
"#;

    #[test]
    fn defaults_fill_in() {
        let mut cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        cfg.resolve_paths(Path::new("/tmp/run"));
        assert_eq!(cfg.output_dir, Path::new("/tmp/run/out"));
        assert_eq!(cfg.dataset.paths[0], Path::new("/tmp/run/flows.csv"));
        assert_eq!(cfg.dataset.train_size, 70);
        assert_eq!(cfg.sweep.parallelism, 4);
        assert_eq!(cfg.sweep.detectors.len(), 5);
        assert_eq!(cfg.models.chat.model_name, "gpt-3.5-turbo");
        assert_eq!(cfg.ordering.strategies.len(), 3);
        cfg.validate().unwrap();
    }

    #[test]
    fn finetuned_inherit_chat_settings() {
        let text = format!("{MINIMAL}\n[models.chat]\ntemperature = 0.5\n[models.finetuned]\n70 = \"ft:abc\"\n");
        let cfg: RunConfig = toml::from_str(&text).unwrap();
        let ft = cfg.finetuned_models().unwrap();
        assert_eq!(ft[&70].model_name, "ft:abc");
        assert_eq!(ft[&70].temperature, 0.5);

        let bad = format!("{MINIMAL}\n[models.finetuned]\nseventy = \"ft:abc\"\n");
        let cfg: RunConfig = toml::from_str(&bad).unwrap();
        assert!(cfg.finetuned_models().is_err());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_features() {
        assert!(toml::from_str::<RunConfig>(&format!("{MINIMAL}\n[sweep]\nparalelism = 2\n")).is_err());
        let three = MINIMAL.replace(", \"d\"", "");
        assert!(toml::from_str::<RunConfig>(&three).is_err());
    }
}
