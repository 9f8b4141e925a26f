//! Run configuration: built-in defaults, overridden by a `key = value` file,
//! overridden by command-line flags.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use vaecil::eval::Variant;
use vaecil::losses::HyperParams;
use vaecil::numcore::Activation;
use vaecil::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Directory holding the four MNIST IDX files.
    pub dataset: PathBuf,
    /// Training feature file; replaces `dataset` when set.
    pub features: Option<PathBuf>,
    /// Test feature file, required together with `features`.
    pub test_features: Option<PathBuf>,
    pub classes_per_task: usize,
    pub validation_fraction: f64,
    /// Seed of the validation carve-out.
    pub split_seed: u64,
    pub hp: HyperParams,
    /// Seed of single-run commands.
    pub seed: u64,
    /// Seeds of multi-run commands.
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub variant: Option<Variant>,
    pub checkpoint: Option<PathBuf>,
    /// Keys set by a file or flag rather than left at their default.
    pub explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data/mnist"),
            features: None,
            test_features: None,
            classes_per_task: 2,
            validation_fraction: 0.1,
            split_seed: 0,
            hp: HyperParams::default(),
            seed: 0,
            seeds: vec![0, 1, 2, 3, 4],
            out: PathBuf::from("runs"),
            variant: None,
            checkpoint: None,
            explicit: BTreeSet::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, Error>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("invalid value {value:?} for {key}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, Error>
where
    T::Err: Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_activation(key: &str, value: &str) -> Result<Activation, Error> {
    match value.to_ascii_lowercase().as_str() {
        "sigmoid" => Ok(Activation::Sigmoid),
        "identity" | "linear" => Ok(Activation::Identity),
        _ => Err(Error::Config(format!(
            "invalid value {value:?} for {key}: expected sigmoid or identity"
        ))),
    }
}

impl RunConfig {
    /// Keys accepted in a config file; `-` and `_` are interchangeable.
    pub const KEYS: &'static [&'static str] = &[
        "dataset",
        "features",
        "test_features",
        "classes_per_task",
        "validation_fraction",
        "split_seed",
        "epochs",
        "r_intra",
        "r_inter",
        "lambda1",
        "lambda2",
        "batch_size",
        "learning_rate",
        "weight_decay",
        "latent_dim",
        "hidden",
        "pseudo_per_old_class",
        "decoder_output",
        "seed",
        "seeds",
        "out",
        "variant",
        "checkpoint",
    ];

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Error> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        match key.as_str() {
            "dataset" => self.dataset = PathBuf::from(value),
            "features" => self.features = Some(PathBuf::from(value)),
            "test_features" => self.test_features = Some(PathBuf::from(value)),
            "classes_per_task" => self.classes_per_task = parse(&key, value)?,
            "validation_fraction" => self.validation_fraction = parse(&key, value)?,
            "split_seed" => self.split_seed = parse(&key, value)?,
            "epochs" => self.hp.epochs = parse(&key, value)?,
            "r_intra" => self.hp.r_intra = parse(&key, value)?,
            "r_inter" => self.hp.r_inter = parse(&key, value)?,
            "lambda1" => self.hp.lambda1 = parse(&key, value)?,
            "lambda2" => self.hp.lambda2 = parse(&key, value)?,
            "batch_size" => self.hp.batch_size = parse(&key, value)?,
            "learning_rate" => self.hp.learning_rate = parse(&key, value)?,
            "weight_decay" => self.hp.weight_decay = parse(&key, value)?,
            "latent_dim" => self.hp.latent_dim = parse(&key, value)?,
            "hidden" => self.hp.hidden_widths = parse_list(&key, value)?,
            "pseudo_per_old_class" => self.hp.pseudo_per_old_class = parse(&key, value)?,
            "decoder_output" => self.hp.decoder_output = parse_activation(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "seeds" => self.seeds = parse_list(&key, value)?,
            "out" => self.out = PathBuf::from(value),
            "variant" => {
                self.variant = match value.to_ascii_lowercase().as_str() {
                    "all" => None,
                    v => Some(v.parse()?),
                }
            }
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            _ => {
                return Err(Error::Config(format!(
                    "unknown configuration key {key:?}; known keys: {}",
                    Self::KEYS.join(", ")
                )))
            }
        }
        self.explicit.insert(key);
        Ok(())
    }

    /// Applies every `key = value` line of `text`. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), Error> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{origin}:{}: expected key = value, got {line:?}",
                    n + 1
                ))
            })?;
            self.set(key, value)
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), Error> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.hp.validate()?;
        if self.classes_per_task == 0 {
            return Err(Error::Config("classes_per_task must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        if self.features.is_some() != self.test_features.is_some() {
            return Err(Error::Config(
                "features and test_features must be given together".into(),
            ));
        }
        Ok(())
    }

    /// Text form accepted by [`RunConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let hp = &self.hp;
        let list = |v: &[String]| v.join(",");
        let mut lines = vec![
            format!("dataset = {}", self.dataset.display()),
            format!("classes_per_task = {}", self.classes_per_task),
            format!("validation_fraction = {}", self.validation_fraction),
            format!("split_seed = {}", self.split_seed),
            format!("epochs = {}", hp.epochs),
            format!("r_intra = {}", hp.r_intra),
            format!("r_inter = {}", hp.r_inter),
            format!("lambda1 = {}", hp.lambda1),
            format!("lambda2 = {}", hp.lambda2),
            format!("batch_size = {}", hp.batch_size),
            format!("learning_rate = {}", hp.learning_rate),
            format!("weight_decay = {}", hp.weight_decay),
            format!("latent_dim = {}", hp.latent_dim),
            format!(
                "hidden = {}",
                list(
                    &hp.hidden_widths
                        .iter()
                        .map(ToString::to_string)
                        .collect::<Vec<_>>()
                )
            ),
            format!("pseudo_per_old_class = {}", hp.pseudo_per_old_class),
            format!(
                "decoder_output = {}",
                if hp.decoder_output == Activation::Sigmoid {
                    "sigmoid"
                } else {
                    "identity"
                }
            ),
            format!("seed = {}", self.seed),
            format!(
                "seeds = {}",
                list(
                    &self
                        .seeds
                        .iter()
                        .map(ToString::to_string)
                        .collect::<Vec<_>>()
                )
            ),
            format!("out = {}", self.out.display()),
            format!(
                "variant = {}",
                self.variant.map_or("all".to_string(), |v| v.to_string())
            ),
        ];
        if let Some(p) = &self.features {
            lines.push(format!("features = {}", p.display()));
        }
        if let Some(p) = &self.test_features {
            lines.push(format!("test_features = {}", p.display()));
        }
        if let Some(p) = &self.checkpoint {
            lines.push(format!("checkpoint = {}", p.display()));
        }
        lines.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "epochs = 3\nr_intra = 2.5 # file\nseeds = 7, 8\n",
            "test.cfg",
        )
        .unwrap();
        // Flags are applied last.
        cfg.set("r-intra", "4").unwrap();
        assert_eq!(cfg.hp.epochs, 3);
        assert_eq!(cfg.hp.r_intra, 4.0);
        assert_eq!(cfg.seeds, vec![7, 8]);
        assert_eq!(cfg.hp.r_inter, 50.0);
        assert!(cfg.is_explicit("r_intra") && !cfg.is_explicit("r_inter"));
    }

    #[test]
    fn bad_lines_name_their_location() {
        let mut cfg = RunConfig::default();
        let e = cfg
            .apply_text("\n# ok\nepochs three\n", "a.cfg")
            .unwrap_err();
        assert!(e.to_string().contains("a.cfg:3"), "{e}");
        let e = cfg.apply_text("colour = blue\n", "a.cfg").unwrap_err();
        assert!(e.to_string().contains("colour"), "{e}");
        let e = cfg.apply_text("epochs = -1\n", "a.cfg").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn text_form_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("variant", "var3").unwrap();
        cfg.set("hidden", "32,16").unwrap();
        cfg.set("decoder_output", "identity").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text(), "roundtrip").unwrap();
        assert_eq!(back.hp, cfg.hp);
        assert_eq!(back.variant, cfg.variant);
        assert_eq!(back.seeds, cfg.seeds);
    }

    #[test]
    fn every_listed_key_is_accepted() {
        for key in RunConfig::KEYS {
            let value = match *key {
                "hidden" | "seeds" => "1,2",
                "decoder_output" => "sigmoid",
                "variant" => "full",
                "validation_fraction"
                | "r_intra"
                | "r_inter"
                | "lambda1"
                | "lambda2"
                | "learning_rate"
                | "weight_decay" => "0.5",
                _ => "1",
            };
            RunConfig::default().set(key, value).unwrap();
        }
    }
}
