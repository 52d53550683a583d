use std::fs;
use std::path::{Path, PathBuf};

use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// One labeled sentence in every view, as strings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawExample {
    pub label: usize,
    pub views: Vec<Vec<String>>,
}

/// Aligned multi-view corpus before vocabulary indexing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawCorpus {
    pub view_names: Vec<String>,
    pub examples: Vec<RawExample>,
}

/// One labeled instance with token ids per view. View lengths may differ.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiViewExample {
    pub label: usize,
    pub tokens: Vec<Vec<usize>>,
}

/// Indexed examples plus the vocabularies they were indexed with.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub view_names: Vec<String>,
    pub n_classes: usize,
    pub vocabs: Vec<Vocabulary>,
    pub examples: Vec<MultiViewExample>,
}

impl Dataset {
    pub fn n_views(&self) -> usize {
        self.view_names.len()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// Keeps only the listed views, in the given order.
    pub fn select_views(&self, views: &[usize]) -> Dataset {
        Dataset {
            view_names: views.iter().map(|&v| self.view_names[v].clone()).collect(),
            n_classes: self.n_classes,
            vocabs: views.iter().map(|&v| self.vocabs[v].clone()).collect(),
            examples: self
                .examples
                .iter()
                .map(|e| MultiViewExample {
                    label: e.label,
                    tokens: views.iter().map(|&v| e.tokens[v].clone()).collect(),
                })
                .collect(),
        }
    }
}

fn parse_line(path: &Path, lineno: usize, line: &str) -> Result<(usize, Vec<String>)> {
    let (label, rest) = line.split_once('\t').unwrap_or((line, ""));
    let label = label.trim().parse::<usize>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: lineno,
        msg: format!("label {label:?} is not a nonnegative integer"),
    })?;
    Ok((label, rest.split_whitespace().map(str::to_string).collect()))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Reads one `LABEL<TAB>tokens` file per view; line `i` of every file is
/// example `i`.
pub fn load_parallel_corpus(paths: &[PathBuf], view_names: &[String]) -> Result<RawCorpus> {
    if paths.is_empty() || paths.len() != view_names.len() {
        return Err(Error::Config(format!(
            "{} corpus files for {} view names",
            paths.len(),
            view_names.len()
        )));
    }
    let files: Vec<Vec<String>> = paths.iter().map(|p| read_lines(p)).collect::<Result<_>>()?;
    let n = files[0].len();
    for (p, f) in paths.iter().zip(&files).skip(1) {
        if f.len() != n {
            return Err(Error::Alignment(format!(
                "{} has {} lines but {} has {}",
                paths[0].display(),
                n,
                p.display(),
                f.len()
            )));
        }
    }
    let mut examples = Vec::with_capacity(n);
    for i in 0..n {
        let lineno = i + 1;
        let mut views = Vec::with_capacity(paths.len());
        let mut label = None;
        for (v, (path, lines)) in paths.iter().zip(&files).enumerate() {
            let (l, toks) = parse_line(path, lineno, &lines[i])?;
            match label {
                None => label = Some(l),
                Some(l0) if l0 != l => {
                    return Err(Error::LabelDisagreement {
                        line: lineno,
                        detail: format!(
                            "view {} ({}) says {l0}, view {v} ({}) says {l}",
                            0,
                            view_names[0],
                            view_names[v]
                        ),
                    })
                }
                _ => {}
            }
            views.push(toks);
        }
        examples.push(RawExample {
            label: label.expect("at least one view"),
            views,
        });
    }
    Ok(RawCorpus {
        view_names: view_names.to_vec(),
        examples,
    })
}

/// Writes one corpus file per view into `dir` as `<view>.txt`; returns the paths.
pub fn write_corpus(corpus: &RawCorpus, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for (v, name) in corpus.view_names.iter().enumerate() {
        let path = dir.join(format!("{name}.txt"));
        let mut out = String::new();
        for ex in &corpus.examples {
            out.push_str(&ex.label.to_string());
            out.push('\t');
            out.push_str(&ex.views[v].join(" "));
            out.push('\n');
        }
        fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

impl RawCorpus {
    pub fn n_views(&self) -> usize {
        self.view_names.len()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.examples.iter().map(|e| e.label + 1).max().unwrap_or(0)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// One vocabulary per view from the listed (training) examples only.
    pub fn build_vocabularies(&self, indices: &[usize]) -> Vec<Vocabulary> {
        (0..self.n_views())
            .map(|v| {
                Vocabulary::build(
                    indices
                        .iter()
                        .flat_map(|&i| self.examples[i].views[v].iter().map(String::as_str)),
                )
            })
            .collect()
    }

    pub fn index(&self, vocabs: &[Vocabulary], n_classes: usize) -> Dataset {
        let examples = self
            .examples
            .iter()
            .map(|e| MultiViewExample {
                label: e.label,
                tokens: e
                    .views
                    .iter()
                    .zip(vocabs)
                    .map(|(toks, voc)| toks.iter().map(|t| voc.id(t)).collect())
                    .collect(),
            })
            .collect();
        Dataset {
            view_names: self.view_names.clone(),
            n_classes,
            vocabs: vocabs.to_vec(),
            examples,
        }
    }

    /// Builds vocabularies from `train_indices` and indexes every example.
    pub fn into_dataset(&self, train_indices: &[usize]) -> Dataset {
        let vocabs = self.build_vocabularies(train_indices);
        self.index(&vocabs, self.n_classes())
    }
}
