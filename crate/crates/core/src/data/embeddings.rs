use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::data::vocab::{Vocabulary, PAD_INDEX};
use crate::error::{DalError, Result};
use crate::seed::rng_from;
use crate::tensor::Tensor;

/// Half-width of the uniform initialisation for rows without a pretrained vector.
pub const OOV_INIT: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    /// `[vocab.len(), dim]`
    pub matrix: Tensor,
    pub dim: usize,
    /// Fraction of regular vocabulary entries found in the pretrained file.
    pub coverage: f64,
}

/// Random `[vocab, dim]` embeddings, uniform in ±[`OOV_INIT`]; the padding row is zero.
pub fn random_embeddings(vocab_size: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = rng_from(seed);
    let mut data: Vec<f64> = (0..vocab_size * dim).map(|_| rng.random_range(-OOV_INIT..OOV_INIT)).collect();
    data[PAD_INDEX * dim..(PAD_INDEX + 1) * dim].iter_mut().for_each(|v| *v = 0.0);
    EmbeddingMatrix { matrix: Tensor::matrix(vocab_size, dim, data).expect("sized"), dim, coverage: 0.0 }
}

/// Parses `token v1 ... vd` lines.
pub fn parse_embedding_file(text: &str, origin: &str) -> Result<(usize, HashMap<String, Vec<f64>>)> {
    let mut dim = None;
    let mut vectors = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let err = |message: String| DalError::Parse { path: origin.to_owned(), line: lineno + 1, message };
        let values: Vec<f64> = parts
            .map(|v| v.parse::<f64>().map_err(|_| err(format!("`{v}` is not a number"))))
            .collect::<Result<_>>()?;
        match dim {
            None if values.is_empty() => return Err(err("vector has no components".into())),
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(err(format!("dimension {} differs from earlier lines ({d})", values.len())))
            }
            Some(_) => {}
        }
        vectors.insert(token.to_owned(), values);
    }
    Ok((dim.unwrap_or(0), vectors))
}

/// Builds an embedding matrix for `vocab`: tokens present in the file get
/// their vector verbatim; every other row is seeded-random.
pub fn load_embeddings(path: impl AsRef<Path>, vocab: &Vocabulary, seed: u64) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DalError::io(path, e))?;
    embeddings_from_text(&text, vocab, seed, &path.display().to_string())
}

pub fn embeddings_from_text(text: &str, vocab: &Vocabulary, seed: u64, origin: &str) -> Result<EmbeddingMatrix> {
    let (dim, vectors) = parse_embedding_file(text, origin)?;
    if dim == 0 {
        return Err(DalError::invalid(format!("{origin}: no embedding vectors")));
    }
    let mut emb = random_embeddings(vocab.len(), dim, seed);
    let mut found = 0;
    for (i, tok) in vocab.regular_tokens().iter().enumerate() {
        if let Some(v) = vectors.get(tok) {
            let row = i + 2;
            emb.matrix.data_mut()[row * dim..(row + 1) * dim].copy_from_slice(v);
            found += 1;
        }
    }
    let regular = vocab.regular_tokens().len();
    emb.coverage = if regular == 0 { 0.0 } else { found as f64 / regular as f64 };
    Ok(emb)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "cat 0.1 0.2 0.3 0.4\ndog 1 2 3 4\nemu -1 -2 -3 -4\n";

    #[test]
    fn present_tokens_get_file_vectors() {
        let vocab = Vocabulary::build(["cat", "dog", "yak"], 1);
        let emb = embeddings_from_text(FIXTURE, &vocab, 7, "f").unwrap();
        let row = vocab.index("dog");
        assert_eq!(emb.matrix.row_slice(row), &[1.0, 2.0, 3.0, 4.0]);
        assert!((emb.coverage - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_intersection_is_seed_reproducible() {
        let vocab = Vocabulary::build(["x", "y"], 1);
        let a = embeddings_from_text(FIXTURE, &vocab, 3, "f").unwrap();
        let b = embeddings_from_text(FIXTURE, &vocab, 3, "f").unwrap();
        assert_eq!(a.coverage, 0.0);
        assert_eq!(a, b);
        assert!(a.matrix.data().iter().all(|v| v.abs() <= OOV_INIT));
    }

    #[test]
    fn inconsistent_dimensions_rejected() {
        let vocab = Vocabulary::build(["x"], 1);
        assert!(embeddings_from_text("a 1 2\nb 1 2 3\n", &vocab, 0, "f").is_err());
    }
}
