use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::beams::VanillaOptions;
use crate::error::{Error, Result};
use crate::metrics::CollapseThresholds;
use crate::sampling::SamplingParams;
use crate::scorer::{
    ngram_train, read_corpus, replay_load, NGramModel, PeakedLoopScorer, Scorer, SeededContextScorer, TableScorer,
    ReplayTrace,
};
use crate::types::{Frame, PenaltyConfig, TokenId, Vocabulary};

pub const CONFIG_SCHEMA: &str = "tradbs.experiment/v1";

/// Experiment description, read from JSON. Relative paths resolve against
/// the directory holding the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub scorer: ScorerSpec,
    #[serde(default)]
    pub prompt: PromptSpec,
    pub strategies: Vec<StrategySpec>,
    /// Runs per sampling strategy, seeds `seed, seed + 1, ...`. Beam
    /// decoders are seed-free and run once.
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub thresholds: CollapseThresholds,
    /// Adds wall-clock fields to the records. Off by default because it
    /// makes result files differ between runs.
    #[serde(default)]
    pub record_timing: bool,
}

fn one() -> usize {
    1
}

fn default_spread() -> f64 {
    3.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScorerSpec {
    /// Inline position-indexed logits, `[step][codebook][token]`.
    Table {
        logits: Vec<Vec<Vec<f64>>>,
        #[serde(default)]
        eos: Vec<Option<u32>>,
    },
    Replay {
        path: PathBuf,
        #[serde(default)]
        eos: Vec<Option<u32>>,
    },
    /// A model file written by `train-ngram`.
    Ngram { model: PathBuf },
    /// Train an n-gram model from a corpus at load time.
    NgramCorpus {
        corpus: PathBuf,
        order: usize,
        add_k: f64,
        vocab: Vocabulary,
    },
    PeakedLoop {
        stay_logit: f64,
        move_logit: f64,
        vocab: Vocabulary,
    },
    SeededContext {
        seed: u64,
        #[serde(default = "default_spread")]
        spread: f64,
        vocab: Vocabulary,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PromptSpec {
    /// Frames as token lists, e.g. `[[3], [7]]`.
    Inline(Vec<Vec<u32>>),
    /// First sequence of a corpus-format file.
    File { file: PathBuf },
}

impl Default for PromptSpec {
    fn default() -> Self {
        PromptSpec::Inline(Vec::new())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategySpec {
    pub name: String,
    #[serde(flatten)]
    pub decoder: DecoderSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "decoder", rename_all = "snake_case")]
pub enum DecoderSpec {
    /// Greedy / top-k / top-p. Only `window` and `max_steps` of `penalty`
    /// apply.
    Sample {
        sampling: SamplingParams,
        #[serde(default)]
        penalty: PenaltyConfig,
    },
    TradBs {
        #[serde(default)]
        penalty: PenaltyConfig,
    },
    VanillaBs {
        #[serde(default)]
        penalty: PenaltyConfig,
        #[serde(default)]
        options: VanillaOptions,
    },
}

impl DecoderSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            DecoderSpec::Sample { .. } => "sample",
            DecoderSpec::TradBs { .. } => "trad_bs",
            DecoderSpec::VanillaBs { .. } => "vanilla_bs",
        }
    }

    pub fn penalty(&self) -> &PenaltyConfig {
        match self {
            DecoderSpec::Sample { penalty, .. }
            | DecoderSpec::TradBs { penalty }
            | DecoderSpec::VanillaBs { penalty, .. } => penalty,
        }
    }

    pub fn penalty_mut(&mut self) -> &mut PenaltyConfig {
        match self {
            DecoderSpec::Sample { penalty, .. }
            | DecoderSpec::TradBs { penalty }
            | DecoderSpec::VanillaBs { penalty, .. } => penalty,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DecoderSpec::Sample { sampling, penalty } => {
                sampling.validate()?;
                if penalty.max_steps == 0 {
                    return Err(Error::InvalidConfig("max_steps must be >= 1".into()));
                }
                Ok(())
            }
            DecoderSpec::TradBs { penalty } => penalty.validate(),
            DecoderSpec::VanillaBs { penalty, options } => {
                if options.max_candidates == 0 {
                    return Err(Error::InvalidConfig("max_candidates must be >= 1".into()));
                }
                penalty.validate()
            }
        }
    }
}

fn field_error(field: &str, err: Error) -> Error {
    match err {
        Error::InvalidConfig(msg) => Error::InvalidConfig(format!("{field}: {msg}")),
        other => Error::InvalidConfig(format!("{field}: {other}")),
    }
}

/// A validated config plus the directory its relative paths resolve from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub path: PathBuf,
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path, e.line(), format!("invalid experiment config: {e}")))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let loaded = LoadedConfig { config, base_dir, path: path.to_path_buf() };
    loaded.validate()?;
    Ok(loaded)
}

impl LoadedConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        if cfg.schema != CONFIG_SCHEMA {
            return Err(Error::InvalidConfig(format!("schema: expected {CONFIG_SCHEMA:?}, found {:?}", cfg.schema)));
        }
        if cfg.strategies.is_empty() {
            return Err(Error::InvalidConfig("strategies: at least one strategy is required".into()));
        }
        if cfg.repeats == 0 {
            return Err(Error::InvalidConfig("repeats: must be >= 1".into()));
        }
        let mut names = HashSet::new();
        for (i, s) in cfg.strategies.iter().enumerate() {
            if !names.insert(s.name.as_str()) {
                return Err(Error::InvalidConfig(format!("strategies[{i}].name: duplicate name {:?}", s.name)));
            }
            s.decoder.validate().map_err(|e| field_error(&format!("strategies[{i}]"), e))?;
        }
        for p in self.referenced_files() {
            if !p.is_file() {
                return Err(Error::InvalidConfig(format!("file not found: {}", p.display())));
            }
        }
        let needs_prompt = matches!(
            cfg.scorer,
            ScorerSpec::Ngram { .. } | ScorerSpec::NgramCorpus { .. } | ScorerSpec::Replay { .. }
        );
        if needs_prompt && matches!(&cfg.prompt, PromptSpec::Inline(v) if v.is_empty()) {
            return Err(Error::InvalidConfig("prompt: n-gram and replay scorers need a non-empty prompt".into()));
        }
        Ok(())
    }

    fn referenced_files(&self) -> Vec<PathBuf> {
        let mut out = Vec::new();
        match &self.config.scorer {
            ScorerSpec::Replay { path, .. } => out.push(self.resolve(path)),
            ScorerSpec::Ngram { model } => out.push(self.resolve(model)),
            ScorerSpec::NgramCorpus { corpus, .. } => out.push(self.resolve(corpus)),
            _ => {}
        }
        if let PromptSpec::File { file } = &self.config.prompt {
            out.push(self.resolve(file));
        }
        out
    }

    pub fn build_scorer(&self) -> Result<Box<dyn Scorer>> {
        build_scorer(&self.config.scorer, &|p| self.resolve(p))
    }

    /// Prompt frames, checked against the scorer's vocabulary.
    pub fn prompt(&self, vocab: &Vocabulary) -> Result<Vec<Frame>> {
        let frames = match &self.config.prompt {
            PromptSpec::Inline(frames) => {
                frames.iter().map(|f| Frame(f.iter().map(|&t| TokenId(t)).collect())).collect()
            }
            PromptSpec::File { file } => {
                read_corpus(&self.resolve(file))?.into_iter().next().unwrap_or_default()
            }
        };
        frames
            .iter()
            .try_for_each(|f| vocab.check_frame(f))
            .map_err(|e| field_error("prompt", e))?;
        Ok(frames)
    }
}

pub fn build_scorer(spec: &ScorerSpec, resolve: &dyn Fn(&Path) -> PathBuf) -> Result<Box<dyn Scorer>> {
    let scorer: Box<dyn Scorer> = match spec {
        ScorerSpec::Table { logits, eos } => {
            let trace = ReplayTrace { steps: logits.clone() };
            Box::new(TableScorer::new(&trace, eos).map_err(|e| field_error("scorer.logits", e))?)
        }
        ScorerSpec::Replay { path, eos } => {
            let trace = replay_load(&resolve(path))?;
            Box::new(TableScorer::new(&trace, eos).map_err(|e| field_error("scorer.path", e))?)
        }
        ScorerSpec::Ngram { model } => Box::new(NGramModel::load(&resolve(model))?),
        ScorerSpec::NgramCorpus { corpus, order, add_k, vocab } => {
            let corpus = read_corpus(&resolve(corpus))?;
            Box::new(ngram_train(&corpus, *order, *add_k, vocab.clone()).map_err(|e| field_error("scorer", e))?)
        }
        ScorerSpec::PeakedLoop { stay_logit, move_logit, vocab } => Box::new(
            PeakedLoopScorer::new(*stay_logit, *move_logit, vocab.clone()).map_err(|e| field_error("scorer", e))?,
        ),
        ScorerSpec::SeededContext { seed, spread, vocab } => {
            if !(*spread > 0.0 && spread.is_finite()) {
                return Err(Error::InvalidConfig("scorer.spread: must be > 0".into()));
            }
            vocab.validate().map_err(|e| field_error("scorer.vocab", e))?;
            Box::new(SeededContextScorer::new(*seed, *spread, vocab.clone()))
        }
    };
    Ok(scorer)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("exp.json");
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn parses_full_config() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("c.txt"), "0 1 0 1\n").unwrap();
        let p = write_config(
            dir.path(),
            r#"{
              "schema": "tradbs.experiment/v1",
              "scorer": {"kind": "ngram_corpus", "corpus": "c.txt", "order": 2, "add_k": 1.0,
                         "vocab": [{"size": 2}]},
              "prompt": [[0]],
              "strategies": [
                {"name": "greedy", "decoder": "sample", "sampling": {"strategy": "greedy"}},
                {"name": "trad", "decoder": "trad_bs", "penalty": {"alpha": 10, "beta": 3}},
                {"name": "bs", "decoder": "vanilla_bs", "options": {"top_m": 4}}
              ],
              "repeats": 2
            }"#,
        );
        let cfg = load_config(&p).unwrap();
        assert_eq!(cfg.config.strategies.len(), 3);
        assert_eq!(cfg.config.strategies[1].decoder.penalty().window, 50);
        let scorer = cfg.build_scorer().unwrap();
        assert_eq!(cfg.prompt(scorer.vocab()).unwrap(), vec![Frame::single(0)]);
    }

    #[test]
    fn rejects_empty_strategies() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_config(
            dir.path(),
            r#"{"schema": "tradbs.experiment/v1",
                "scorer": {"kind": "peaked_loop", "stay_logit": 1, "move_logit": 0, "vocab": [{"size": 4}]},
                "strategies": []}"#,
        );
        let err = load_config(&p).unwrap_err();
        assert!(err.is_config_error());
        assert!(err.to_string().contains("strategies"));
    }

    #[test]
    fn field_level_messages() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_config(
            dir.path(),
            r#"{"schema": "tradbs.experiment/v1",
                "scorer": {"kind": "peaked_loop", "stay_logit": 1, "move_logit": 0, "vocab": [{"size": 4}]},
                "strategies": [{"name": "t", "decoder": "trad_bs", "penalty": {"alpha": 0.5}}]}"#,
        );
        let msg = load_config(&p).unwrap_err().to_string();
        assert!(msg.contains("strategies[0]") && msg.contains("alpha"), "{msg}");
    }

    #[test]
    fn missing_files_and_prompt() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_config(
            dir.path(),
            r#"{"schema": "tradbs.experiment/v1", "prompt": [[0]],
                "scorer": {"kind": "ngram", "model": "nope.json"},
                "strategies": [{"name": "g", "decoder": "sample", "sampling": {"strategy": "greedy"}}]}"#,
        );
        assert!(load_config(&p).unwrap_err().to_string().contains("file not found"));

        fs::write(dir.path().join("c.txt"), "0 1\n").unwrap();
        let p = write_config(
            dir.path(),
            r#"{"schema": "tradbs.experiment/v1",
                "scorer": {"kind": "ngram_corpus", "corpus": "c.txt", "order": 2, "add_k": 1, "vocab": [{"size": 2}]},
                "strategies": [{"name": "g", "decoder": "sample", "sampling": {"strategy": "greedy"}}]}"#,
        );
        assert!(load_config(&p).unwrap_err().to_string().contains("prompt"));
    }

    #[test]
    fn wrong_schema() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_config(
            dir.path(),
            r#"{"schema": "v0",
                "scorer": {"kind": "peaked_loop", "stay_logit": 1, "move_logit": 0, "vocab": [{"size": 4}]},
                "strategies": [{"name": "g", "decoder": "sample", "sampling": {"strategy": "greedy"}}]}"#,
        );
        assert!(load_config(&p).is_err());
    }
}
