//! Flat `key = value` run configuration.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use kgrec::ingest::{SplitSpec, TokenizerConfig};
use kgrec::kg::RelationSet;
use kgrec::model::Hyperparams;

use crate::CliError;

/// Every setting a command may need. Unset paths are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub interactions: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub test_pairs: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub loss_csv: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub record: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub split: SplitSpec,
    pub tokenizer: TokenizerConfig,
    pub hyperparams: Hyperparams,
    pub relations: RelationSet,
    pub ablation: Vec<RelationSet>,
    pub top_n: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            interactions: None,
            metadata: None,
            graph: None,
            test_pairs: None,
            model: None,
            loss_csv: None,
            report: None,
            record: None,
            output: None,
            split: SplitSpec::default(),
            tokenizer: TokenizerConfig::default(),
            hyperparams: Hyperparams::default(),
            relations: RelationSet::ALL,
            ablation: RelationSet::ablation_defaults(),
            top_n: 10,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(CliError::Config(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

fn path_value(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let hp = &mut self.hyperparams;
        match key {
            "interactions" => self.interactions = path_value(value),
            "metadata" => self.metadata = path_value(value),
            "graph" => self.graph = path_value(value),
            "test_pairs" => self.test_pairs = path_value(value),
            "model" => self.model = path_value(value),
            "loss_csv" => self.loss_csv = path_value(value),
            "report" => self.report = path_value(value),
            "record" => self.record = path_value(value),
            "output" => self.output = path_value(value),
            "train_fraction" => self.split.train_fraction = parse(key, value)?,
            "split_seed" => self.split.seed = parse(key, value)?,
            "min_train_items" => self.split.min_train_items = parse(key, value)?,
            "min_token_length" => self.tokenizer.min_token_length = parse(key, value)?,
            "min_word_frequency" => self.tokenizer.min_corpus_frequency = parse(key, value)?,
            "max_vocab" => self.tokenizer.max_vocab = parse(key, value)?,
            "stopwords" => {
                self.tokenizer.stopwords = value
                    .split(',')
                    .map(|w| w.trim().to_lowercase())
                    .filter(|w| !w.is_empty())
                    .collect()
            }
            "dim" => hp.dim = parse(key, value)?,
            "learning_rate" => hp.learning_rate = parse(key, value)?,
            "margin" => hp.margin = parse(key, value)?,
            "negatives" => hp.negatives = parse(key, value)?,
            "epochs" => hp.epochs = parse(key, value)?,
            "seed" => hp.seed = parse(key, value)?,
            "normalize_entities" => hp.normalize_entities = parse_bool(key, value)?,
            "type_constrained_sampling" => hp.type_constrained_sampling = parse_bool(key, value)?,
            "filtered_sampling" => hp.filtered_sampling = parse_bool(key, value)?,
            "threads" => hp.threads = parse(key, value)?,
            "relations" => self.relations = parse(key, value)?,
            "ablation" => {
                self.ablation = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_, _>>()?
            }
            "top_n" => self.top_n = parse(key, value)?,
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment
    /// line; blank lines are skipped.
    pub fn parse_str(text: &str) -> Result<Self, CliError> {
        let mut config = Self::default();
        config.apply_str(text)?;
        Ok(config)
    }

    pub fn apply_str(&mut self, text: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| CliError::Config(format!("line {}: {}", n + 1, e.message())))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse_str(&text)
    }

    /// Every key in a fixed order. Parsing the result yields an identical
    /// config.
    pub fn to_config_string(&self) -> String {
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let hp = &self.hyperparams;
        let stopwords: BTreeSet<&str> = self
            .tokenizer
            .stopwords
            .iter()
            .map(String::as_str)
            .collect();
        let ablation: Vec<String> = self.ablation.iter().map(|s| s.label()).collect();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("interactions", path(&self.interactions));
        kv("metadata", path(&self.metadata));
        kv("graph", path(&self.graph));
        kv("test_pairs", path(&self.test_pairs));
        kv("model", path(&self.model));
        kv("loss_csv", path(&self.loss_csv));
        kv("report", path(&self.report));
        kv("record", path(&self.record));
        kv("output", path(&self.output));
        kv("train_fraction", self.split.train_fraction.to_string());
        kv("split_seed", self.split.seed.to_string());
        kv("min_train_items", self.split.min_train_items.to_string());
        kv(
            "min_token_length",
            self.tokenizer.min_token_length.to_string(),
        );
        kv(
            "min_word_frequency",
            self.tokenizer.min_corpus_frequency.to_string(),
        );
        kv("max_vocab", self.tokenizer.max_vocab.to_string());
        kv(
            "stopwords",
            stopwords.into_iter().collect::<Vec<_>>().join(","),
        );
        kv("dim", hp.dim.to_string());
        kv("learning_rate", hp.learning_rate.to_string());
        kv("margin", hp.margin.to_string());
        kv("negatives", hp.negatives.to_string());
        kv("epochs", hp.epochs.to_string());
        kv("seed", hp.seed.to_string());
        kv("normalize_entities", hp.normalize_entities.to_string());
        kv(
            "type_constrained_sampling",
            hp.type_constrained_sampling.to_string(),
        );
        kv("filtered_sampling", hp.filtered_sampling.to_string());
        kv("threads", hp.threads.to_string());
        kv("relations", self.relations.label());
        kv("ablation", ablation.join(","));
        kv("top_n", self.top_n.to_string());
        out
    }

    /// Checks every numeric setting before any file is touched.
    pub fn validate(&self) -> Result<(), CliError> {
        self.split
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.tokenizer
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.hyperparams
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.top_n == 0 {
            return Err(CliError::Config("top_n must be positive".into()));
        }
        Ok(())
    }

    /// Path for `key`, which must be set and exist.
    pub fn input<'a>(&self, key: &str, path: &'a Option<PathBuf>) -> Result<&'a Path, CliError> {
        let path = path
            .as_deref()
            .ok_or_else(|| CliError::Config(format!("`{key}` is required")))?;
        if !path.is_file() {
            return Err(CliError::Config(format!(
                "{key} file {} does not exist",
                path.display()
            )));
        }
        Ok(path)
    }

    /// Path for `key`, which must be set and whose directory must exist.
    pub fn output_path<'a>(
        &self,
        key: &str,
        path: &'a Option<PathBuf>,
    ) -> Result<&'a Path, CliError> {
        let path = path
            .as_deref()
            .ok_or_else(|| CliError::Config(format!("`{key}` is required")))?;
        check_output_dir(key, path)?;
        Ok(path)
    }
}

pub(crate) fn check_output_dir(key: &str, path: &Path) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let writable = std::fs::metadata(dir)
        .map(|m| m.is_dir() && !m.permissions().readonly())
        .unwrap_or(false);
    if writable {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "{key}: directory {} is not writable",
            dir.display()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use kgrec::kg::RelationKind;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse_str(&c.to_config_string()).unwrap(), c);
    }

    #[test]
    fn edited_config_round_trips() {
        let text = "\
# sample
interactions = data/reviews.tsv
epochs = 25
dim=64
learning_rate = 0.005
relations = buy+category
ablation = buy, buy+brand, all
stopwords = the, A ,of
normalize_entities = false
";
        let c = RunConfig::parse_str(text).unwrap();
        assert_eq!(c.hyperparams.epochs, 25);
        assert_eq!(c.hyperparams.dim, 64);
        assert!(!c.hyperparams.normalize_entities);
        assert_eq!(
            c.relations,
            RelationSet::of(&[RelationKind::Buy, RelationKind::BelongToCategory])
        );
        assert_eq!(c.ablation.len(), 3);
        assert!(c.tokenizer.stopwords.contains("a"));
        assert_eq!(
            c.interactions.as_deref(),
            Some(Path::new("data/reviews.tsv"))
        );
        assert_eq!(RunConfig::parse_str(&c.to_config_string()).unwrap(), c);
    }

    #[test]
    fn float_settings_survive_echo() {
        let mut c = RunConfig::default();
        c.hyperparams.learning_rate = 0.1 + 0.2;
        c.split.train_fraction = 2.0 / 3.0;
        assert_eq!(RunConfig::parse_str(&c.to_config_string()).unwrap(), c);
    }

    #[test]
    fn bad_lines_name_the_line() {
        let e = RunConfig::parse_str("dim = 4\nbogus = 1\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        assert!(RunConfig::parse_str("dim = four").is_err());
        assert!(RunConfig::parse_str("just words").is_err());
        assert!(RunConfig::parse_str("normalize_entities = maybe").is_err());
        assert!(RunConfig::parse_str("relations = buy+nothing").is_err());
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::default();
        c.validate().unwrap();
        c.hyperparams.margin = -1.0;
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
        let mut c = RunConfig::default();
        c.split.train_fraction = 1.0;
        assert!(c.validate().is_err());
        let c = RunConfig {
            top_n: 0,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn missing_inputs() {
        let c = RunConfig {
            graph: Some(PathBuf::from("/nonexistent/graph.tsv")),
            ..RunConfig::default()
        };
        assert!(c.input("graph", &c.graph).is_err());
        assert!(c.input("model", &c.model).is_err());
        assert!(c
            .output_path("model", &Some(PathBuf::from("/nonexistent/dir/m.kge")))
            .is_err());
    }
}
