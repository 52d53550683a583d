use std::fs;
use std::path::Path;

use rand::Rng;

use super::vocab::{Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;

/// Half-width of the uniform range for vectors not found in a pre-trained file.
pub const UNKNOWN_RANGE: f64 = 0.25;

/// Word vectors for one view; row `i` belongs to vocabulary id `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub view: usize,
    pub matrix: Tensor,
}

impl EmbeddingTable {
    pub fn d_word(&self) -> usize {
        self.matrix.cols()
    }

    /// Every row drawn from U(-0.25, 0.25) except the zero PAD row.
    pub fn random(view: usize, vocab_size: usize, d_word: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, &[rng::TAG_EMBED, view as u64]);
        let data = (0..vocab_size * d_word)
            .map(|_| r.gen_range(-UNKNOWN_RANGE..UNKNOWN_RANGE))
            .collect();
        let mut matrix = Tensor::matrix(vocab_size, d_word, data).expect("sized");
        matrix.row_mut(PAD).fill(0.0);
        EmbeddingTable { view, matrix }
    }
}

/// Parses `token v1 .. vD` lines, with an optional `COUNT DIM` header line.
pub fn parse_embedding_file(path: &Path) -> Result<(usize, Vec<(String, Vec<f64>)>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut width: Option<usize> = None;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            width = Some(fields[1].parse().expect("checked"));
            continue;
        }
        let values: Vec<f64> = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("bad number: {e}"),
            })?;
        match width {
            Some(w) if w != values.len() => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: format!("expected {w} values, found {}", values.len()),
                })
            }
            None => width = Some(values.len()),
            _ => {}
        }
        entries.push((fields[0].to_string(), values));
    }
    let width = width.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: "no vectors in file".into(),
    })?;
    Ok((width, entries))
}

/// Builds a table for `vocab`: file vectors where present, seeded
/// U(-0.25, 0.25) otherwise, PAD row zero.
pub fn load_embeddings(
    path: &Path,
    vocab: &Vocabulary,
    d_word: usize,
    view: usize,
    seed: u64,
) -> Result<EmbeddingTable> {
    let (width, entries) = parse_embedding_file(path)?;
    if width != d_word {
        return Err(Error::Config(format!(
            "{}: vectors have {width} dimensions but d_word is {d_word}",
            path.display()
        )));
    }
    let mut table = EmbeddingTable::random(view, vocab.len(), d_word, seed);
    for (token, values) in entries {
        if let Some(id) = vocab.get(&token) {
            if id != PAD {
                table.matrix.row_mut(id).copy_from_slice(&values);
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn file_vectors_are_read_through() {
        let f = write_tmp("good 0.1 0.2\n");
        let vocab = Vocabulary::build(["good"]);
        let t = load_embeddings(f.path(), &vocab, 2, 0, 1).unwrap();
        assert_eq!(t.matrix.row(2), &[0.1, 0.2]);
    }

    #[test]
    fn header_is_optional_and_pad_stays_zero() {
        let f = write_tmp("2 3\n<pad> 9 9 9\nx 1 2 3\n");
        let vocab = Vocabulary::build(["x", "y"]);
        let t = load_embeddings(f.path(), &vocab, 3, 0, 5).unwrap();
        assert_eq!(t.matrix.row(PAD), &[0.0; 3]);
        assert_eq!(t.matrix.row(2), &[1.0, 2.0, 3.0]);
        for &x in t.matrix.row(3) {
            assert!((-UNKNOWN_RANGE..UNKNOWN_RANGE).contains(&x));
        }
    }

    #[test]
    fn missing_tokens_reproducible_under_seed() {
        let f = write_tmp("a 0.5 0.5\n");
        let vocab = Vocabulary::build(["a", "b", "c"]);
        let t1 = load_embeddings(f.path(), &vocab, 2, 1, 42).unwrap();
        let t2 = load_embeddings(f.path(), &vocab, 2, 1, 42).unwrap();
        let bits = |t: &EmbeddingTable| t.matrix.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&t1), bits(&t2));
        let t3 = load_embeddings(f.path(), &vocab, 2, 1, 43).unwrap();
        assert_ne!(t1.matrix.row(3), t3.matrix.row(3));
    }

    #[test]
    fn ragged_width_reports_line() {
        let f = write_tmp("a 1 2\nb 1 2 3\n");
        match parse_embedding_file(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn width_mismatch_against_config() {
        let f = write_tmp("a 1 2\n");
        let vocab = Vocabulary::build(["a"]);
        assert!(matches!(load_embeddings(f.path(), &vocab, 3, 0, 0), Err(Error::Config(_))));
    }
}
