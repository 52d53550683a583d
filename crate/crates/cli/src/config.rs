//! Run configuration: `[section]` headers over flat `key = value` lines,
//! with every key overridable from the command line.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mcfa_core::data::SyntheticConfig;
use mcfa_core::encoder::EncoderConfig;
use mcfa_core::model::{Mode, TrainConfig};

use crate::error::CliError;

/// Every accepted `(section, key)`. Bare key names are unique, so either
/// `--key` or `--section.key` selects one.
pub const KEYS: &[(&str, &str)] = &[
    ("data", "views"),
    ("data", "files"),
    ("data", "test_files"),
    ("data", "cv_folds"),
    ("data", "embeddings"),
    ("synthetic", "n_classes"),
    ("synthetic", "n_examples"),
    ("synthetic", "n_test"),
    ("synthetic", "informative"),
    ("synthetic", "noise_rate"),
    ("synthetic", "data_seed"),
    ("synthetic", "signal_tokens"),
    ("synthetic", "filler_tokens"),
    ("synthetic", "signals_per_sentence"),
    ("synthetic", "min_len"),
    ("synthetic", "max_len"),
    ("model", "mode"),
    ("model", "d_word"),
    ("model", "n_maps"),
    ("model", "windows"),
    ("train", "batch_size"),
    ("train", "dropout_rate"),
    ("train", "max_norm"),
    ("train", "rho"),
    ("train", "epsilon"),
    ("train", "l2_lambda"),
    ("train", "max_epochs"),
    ("train", "patience"),
    ("train", "dev_fraction"),
    ("train", "static_embeddings"),
    ("run", "seed"),
    ("run", "out_dir"),
    ("run", "jobs"),
];

pub const SEED_ENV: &str = "MCFA_SEED";

/// Canonical `section.key` for a bare or qualified name; dashes count as
/// underscores.
pub fn canonical_key(name: &str) -> Option<String> {
    let name = name.replace('-', "_");
    KEYS.iter()
        .find(|(s, k)| *k == name || format!("{s}.{k}") == name)
        .map(|(s, k)| format!("{s}.{k}"))
}

#[derive(Clone, Debug)]
struct Value {
    text: String,
    /// Relative paths in this value resolve against `base`.
    base: PathBuf,
}

/// Raw key/value settings before interpretation.
#[derive(Clone, Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, Value>,
}

impl Settings {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let base = origin.parent().map(Path::to_path_buf).unwrap_or_default();
        let at = |line: usize, msg: String| CliError::config(format!("{}:{line}: {msg}", origin.display()));
        let mut values = BTreeMap::new();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !KEYS.iter().any(|(s, _)| *s == name) {
                    return Err(at(i + 1, format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(i + 1, format!("expected `key = value`, got {line:?}")))?;
            let key = key.trim();
            let Some(sec) = &section else {
                return Err(at(i + 1, format!("key `{key}` appears before any [section]")));
            };
            let full = format!("{sec}.{key}");
            if !KEYS.iter().any(|(s, k)| s == sec && *k == key) {
                return Err(at(i + 1, format!("unknown key `{full}`")));
            }
            let v = Value {
                text: value.trim().to_string(),
                base: base.clone(),
            };
            if values.insert(full.clone(), v).is_some() {
                return Err(at(i + 1, format!("key `{full}` set twice")));
            }
        }
        Ok(Settings { values })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    /// Applies `--key value` pairs; relative paths in them resolve against the
    /// working directory.
    pub fn apply_overrides(&mut self, overrides: &[(String, String)]) -> Result<(), CliError> {
        for (name, value) in overrides {
            let key = canonical_key(name).ok_or_else(|| CliError::config(format!("unknown key `{name}`")))?;
            self.values.insert(
                key,
                Value {
                    text: value.clone(),
                    base: PathBuf::new(),
                },
            );
        }
        Ok(())
    }

    fn raw(&self, key: &str) -> Option<&Value> {
        debug_assert!(KEYS.iter().any(|(s, k)| format!("{s}.{k}") == key), "{key}");
        self.values.get(key)
    }

    fn is_set(&self, key: &str) -> bool {
        self.raw(key).is_some()
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.text
                    .parse()
                    .map_err(|e| CliError::config(format!("`{key}`: cannot parse {:?}: {e}", v.text)))
            })
            .transpose()
    }

    fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&self, key: &str, sep: char) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.text
                    .split(sep)
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse()
                            .map_err(|e| CliError::config(format!("`{key}`: cannot parse {s:?}: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }

    fn paths(&self, key: &str) -> Option<Vec<Option<PathBuf>>> {
        self.raw(key).map(|v| {
            v.text
                .split(',')
                .map(str::trim)
                .map(|s| (s != "-" && !s.is_empty()).then(|| v.base.join(s)))
                .collect()
        })
    }

    fn existing_paths(&self, key: &str) -> Result<Option<Vec<PathBuf>>, CliError> {
        let Some(paths) = self.paths(key) else {
            return Ok(None);
        };
        paths
            .into_iter()
            .map(|p| {
                let p = p.ok_or_else(|| CliError::config(format!("`{key}`: empty path entry")))?;
                check_exists(key, &p)?;
                Ok(p)
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }
}

fn check_exists(key: &str, path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::config(format!("`{key}`: {} does not exist", path.display())))
    }
}

#[derive(Clone, Debug)]
pub enum Source {
    /// `k`-fold cross validation over one corpus.
    CrossValidation { files: Vec<PathBuf>, k: usize },
    /// Train on one corpus, test on another with the same views.
    FixedTest { files: Vec<PathBuf>, test_files: Vec<PathBuf> },
    /// Generated data; the last `n_test` examples are the test split.
    Synthetic { config: SyntheticConfig, n_test: usize },
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub view_names: Vec<String>,
    pub source: Source,
    /// Pretrained vector file per view, if any.
    pub embeddings: Vec<Option<PathBuf>>,
    pub mode: Mode,
    pub encoder: EncoderConfig,
    /// `train.seed` is the run seed.
    pub train: TrainConfig,
    pub out_dir: PathBuf,
    pub jobs: usize,
}

fn synthetic_keys_set(s: &Settings) -> bool {
    KEYS.iter().any(|(sec, k)| *sec == "synthetic" && s.is_set(&format!("{sec}.{k}")))
}

impl RunConfig {
    /// Interprets and validates `settings`. `env_seed` is used only when no
    /// seed is configured.
    pub fn from_settings(s: &Settings, env_seed: Option<&str>) -> Result<Self, CliError> {
        let seed = match s.get::<u64>("run.seed")? {
            Some(seed) => seed,
            None => match env_seed {
                Some(v) => v
                    .trim()
                    .parse()
                    .map_err(|e| CliError::config(format!("{SEED_ENV}: cannot parse {v:?}: {e}")))?,
                None => 0,
            },
        };

        let active: Vec<&str> = [
            (s.is_set("data.cv_folds"), "data.cv_folds"),
            (s.is_set("data.test_files"), "data.test_files"),
            (synthetic_keys_set(s), "[synthetic]"),
        ]
        .into_iter()
        .filter_map(|(on, name)| on.then_some(name))
        .collect();
        if active.len() != 1 {
            return Err(CliError::config(format!(
                "exactly one data source is needed (data.cv_folds, data.test_files or a [synthetic] block), found {}",
                if active.is_empty() { "none".to_string() } else { active.join(", ") }
            )));
        }

        let (view_names, source) = if active[0] == "[synthetic]" {
            for key in ["data.files", "data.views"] {
                if s.is_set(key) {
                    return Err(CliError::config(format!("`{key}` cannot be combined with a [synthetic] block")));
                }
            }
            let informative: Vec<Vec<usize>> = match s.raw("synthetic.informative") {
                None => return Err(CliError::config("`synthetic.informative` is required".into())),
                Some(v) => v
                    .text
                    .split(';')
                    .map(|view| {
                        view.split(',')
                            .map(str::trim)
                            .filter(|c| !c.is_empty())
                            .map(|c| {
                                c.parse()
                                    .map_err(|e| CliError::config(format!("`synthetic.informative`: {c:?}: {e}")))
                            })
                            .collect()
                    })
                    .collect::<Result<_, _>>()?,
            };
            let n_views = informative.len();
            let n_classes = s
                .get("synthetic.n_classes")?
                .ok_or_else(|| CliError::config("`synthetic.n_classes` is required".into()))?;
            let n_examples: usize = s
                .get("synthetic.n_examples")?
                .ok_or_else(|| CliError::config("`synthetic.n_examples` is required".into()))?;
            let n_test = s.get_or("synthetic.n_test", n_examples / 5)?;
            let noise_rate = s.list("synthetic.noise_rate", ',')?.unwrap_or_else(|| vec![0.0; n_views]);
            let mut config = SyntheticConfig::new(
                n_classes,
                n_examples + n_test,
                informative,
                noise_rate,
                s.get_or("synthetic.data_seed", seed)?,
            );
            config.signal_tokens = s.get_or("synthetic.signal_tokens", config.signal_tokens)?;
            config.filler_tokens = s.get_or("synthetic.filler_tokens", config.filler_tokens)?;
            config.signals_per_sentence = s.get_or("synthetic.signals_per_sentence", config.signals_per_sentence)?;
            config.min_len = s.get_or("synthetic.min_len", config.min_len)?;
            config.max_len = s.get_or("synthetic.max_len", config.max_len)?;
            config.validate().map_err(CliError::from_config)?;
            if n_test == 0 || n_examples < 2 {
                return Err(CliError::config(
                    "`synthetic.n_examples` must be >= 2 and `synthetic.n_test` >= 1".into(),
                ));
            }
            let names = (0..n_views).map(SyntheticConfig::view_name).collect();
            (names, Source::Synthetic { config, n_test })
        } else {
            let files = s
                .existing_paths("data.files")?
                .ok_or_else(|| CliError::config("`data.files` is required".into()))?;
            let views: Vec<String> = s
                .list("data.views", ',')?
                .ok_or_else(|| CliError::config("`data.views` is required".into()))?;
            if views.len() != files.len() {
                return Err(CliError::config(format!(
                    "`data.views` names {} views but `data.files` lists {} files",
                    views.len(),
                    files.len()
                )));
            }
            if let Some(dup) = views.iter().enumerate().find(|(i, v)| views[..*i].contains(v)) {
                return Err(CliError::config(format!("`data.views`: view {:?} listed twice", dup.1)));
            }
            let source = if active[0] == "data.cv_folds" {
                let k: usize = s.get("data.cv_folds")?.expect("active");
                if k < 2 {
                    return Err(CliError::config(format!("`data.cv_folds` must be >= 2, got {k}")));
                }
                Source::CrossValidation { files, k }
            } else {
                let test_files = s.existing_paths("data.test_files")?.expect("active");
                if test_files.len() != files.len() {
                    return Err(CliError::config(format!(
                        "`data.test_files` lists {} files for {} views",
                        test_files.len(),
                        files.len()
                    )));
                }
                Source::FixedTest { files, test_files }
            };
            (views, source)
        };

        let embeddings = match s.paths("data.embeddings") {
            None => vec![None; view_names.len()],
            Some(p) if p.len() == view_names.len() => {
                for path in p.iter().flatten() {
                    check_exists("data.embeddings", path)?;
                }
                p
            }
            Some(p) => {
                return Err(CliError::config(format!(
                    "`data.embeddings` lists {} entries for {} views (use - for none)",
                    p.len(),
                    view_names.len()
                )))
            }
        };

        let mode = match s.raw("model.mode") {
            None => Mode::Mcfa,
            Some(v) => v
                .text
                .parse()
                .map_err(|e: mcfa_core::Error| CliError::config(format!("`model.mode`: {e}")))?,
        };
        let mut encoder = EncoderConfig::default();
        encoder.d_word = s.get_or("model.d_word", encoder.d_word)?;
        encoder.n_maps = s.get_or("model.n_maps", encoder.n_maps)?;
        if let Some(w) = s.list("model.windows", ',')? {
            encoder.windows = w;
        }
        encoder.validate().map_err(CliError::from_config)?;

        let d = TrainConfig::default();
        let mut train = TrainConfig {
            batch_size: s.get_or("train.batch_size", d.batch_size)?,
            dropout_rate: s.get_or("train.dropout_rate", d.dropout_rate)?,
            max_norm: s.get_or("train.max_norm", d.max_norm)?,
            adadelta: d.adadelta,
            l2_lambda: s.get_or("train.l2_lambda", d.l2_lambda)?,
            max_epochs: s.get_or("train.max_epochs", d.max_epochs)?,
            patience: s.get_or("train.patience", d.patience)?,
            seed,
            dev_fraction: s.get_or("train.dev_fraction", d.dev_fraction)?,
            static_embeddings: s.get_or("train.static_embeddings", d.static_embeddings)?,
        };
        train.adadelta.rho = s.get_or("train.rho", train.adadelta.rho)?;
        train.adadelta.epsilon = s.get_or("train.epsilon", train.adadelta.epsilon)?;
        train.validate().map_err(CliError::from_config)?;

        let out_dir = s
            .paths("run.out_dir")
            .and_then(|p| p.into_iter().next().flatten())
            .unwrap_or_else(|| PathBuf::from("out"));
        let jobs = s.get_or("run.jobs", 1usize)?;
        if jobs == 0 {
            return Err(CliError::config("`run.jobs` must be >= 1".into()));
        }

        Ok(RunConfig {
            view_names,
            source,
            embeddings,
            mode,
            encoder,
            train,
            out_dir,
            jobs,
        })
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(text: &str) -> Result<Settings, CliError> {
        Settings::parse(text, Path::new("run.cfg"))
    }

    const SYNTH: &str = "[synthetic]\nn_classes = 2\nn_examples = 40\ninformative = 0;1\n";

    #[test]
    fn unknown_keys_are_named() {
        let err = settings("[train]\nbach_size = 3\n").unwrap_err();
        assert_eq!(err.code, 1);
        assert!(err.message.contains("train.bach_size"), "{}", err.message);
        let mut s = settings(SYNTH).unwrap();
        let err = s.apply_overrides(&[("bach-size".into(), "3".into())]).unwrap_err();
        assert!(err.message.contains("bach-size"), "{}", err.message);
    }

    #[test]
    fn structural_errors() {
        assert!(settings("mode = b1\n").unwrap_err().message.contains("before any [section]"));
        assert!(settings("[nope]\n").unwrap_err().message.contains("[nope]"));
        assert!(settings("[model]\nmode = b1\nmode = b2\n").unwrap_err().message.contains("twice"));
        assert!(settings("[model]\nmode\n").is_err());
    }

    #[test]
    fn canonical_names() {
        assert_eq!(canonical_key("l2-lambda").as_deref(), Some("train.l2_lambda"));
        assert_eq!(canonical_key("train.l2_lambda").as_deref(), Some("train.l2_lambda"));
        assert_eq!(canonical_key("model.l2_lambda"), None);
        // bare names must not collide across sections
        let mut names: Vec<_> = KEYS.iter().map(|(_, k)| *k).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), KEYS.len());
    }

    #[test]
    fn seed_precedence() {
        let s = settings(SYNTH).unwrap();
        assert_eq!(RunConfig::from_settings(&s, None).unwrap().seed(), 0);
        assert_eq!(RunConfig::from_settings(&s, Some("9")).unwrap().seed(), 9);
        let mut s = settings(&format!("{SYNTH}[run]\nseed = 4\n")).unwrap();
        assert_eq!(RunConfig::from_settings(&s, Some("9")).unwrap().seed(), 4);
        s.apply_overrides(&[("seed".into(), "7".into())]).unwrap();
        assert_eq!(RunConfig::from_settings(&s, Some("9")).unwrap().seed(), 7);
        assert!(RunConfig::from_settings(&settings(SYNTH).unwrap(), Some("x")).is_err());
    }

    #[test]
    fn exactly_one_source() {
        let none = RunConfig::from_settings(&settings("[model]\nmode = b1\n").unwrap(), None).unwrap_err();
        assert!(none.message.contains("none"), "{}", none.message);
        let both = settings(&format!("{SYNTH}[data]\ncv_folds = 3\n")).unwrap();
        let err = RunConfig::from_settings(&both, None).unwrap_err();
        assert!(err.message.contains("data.cv_folds, [synthetic]"), "{}", err.message);
    }

    #[test]
    fn missing_paths_are_rejected() {
        let s = settings("[data]\nviews = a\nfiles = /definitely/not/here.txt\ncv_folds = 3\n").unwrap();
        let err = RunConfig::from_settings(&s, None).unwrap_err();
        assert!(err.message.contains("data.files") && err.message.contains("does not exist"));
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), "0\tx\n").unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "[data]\nviews = a\nfiles = a.txt\ncv_folds = 2\n[run]\nout_dir = results\n").unwrap();
        let run = RunConfig::from_settings(&Settings::load(&cfg).unwrap(), None).unwrap();
        assert_eq!(run.out_dir, dir.path().join("results"));
        match run.source {
            Source::CrossValidation { files, k } => {
                assert_eq!(files, vec![dir.path().join("a.txt")]);
                assert_eq!(k, 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn synthetic_block_sets_the_generator() {
        let s = settings(&format!("{SYNTH}noise_rate = 0, 0.5\nn_test = 10\n[model]\nmode = b2\nwindows = 2,3\n")).unwrap();
        let run = RunConfig::from_settings(&s, None).unwrap();
        assert_eq!(run.mode, Mode::B2);
        assert_eq!(run.encoder.windows, vec![2, 3]);
        assert_eq!(run.view_names, vec!["src".to_string(), "t1".to_string()]);
        match run.source {
            Source::Synthetic { config, n_test } => {
                assert_eq!(n_test, 10);
                assert_eq!(config.n_examples, 50);
                assert_eq!(config.noise_rate, vec![0.0, 0.5]);
                assert_eq!(config.informative, vec![vec![0], vec![1]]);
            }
            other => panic!("{other:?}"),
        }
        let bad = settings(&format!("{SYNTH}[train]\ndropout_rate = 2\n")).unwrap();
        assert_eq!(RunConfig::from_settings(&bad, None).unwrap_err().code, 1);
    }
}
