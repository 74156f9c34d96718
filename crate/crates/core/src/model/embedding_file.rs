use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{ModelError, NluModel};

/// What happened when pretrained vectors were applied to a model.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PretrainedStats {
    /// Vocabulary rows overwritten from the file.
    pub matched: usize,
    /// File entries whose token is not in the vocabulary.
    pub skipped: usize,
    /// Vocabulary tokens absent from the file (left randomly initialised).
    pub missing: Vec<String>,
}

/// Parses `"<count> <dim>"` then `"<token> <dim decimals>"` per line.
pub fn read_embedding_file(path: impl AsRef<Path>) -> Result<(usize, Vec<(String, Vec<f64>)>), ModelError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l?,
        None => return Err(ModelError::EmbeddingFile { line: 1, message: "empty file".into() }),
    };
    let nums: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| ModelError::EmbeddingFile {
            line: 1,
            message: format!("bad header {header:?}"),
        })?;
    let [count, dim] = nums[..] else {
        return Err(ModelError::EmbeddingFile {
            line: 1,
            message: "header must be \"<count> <dim>\"".into(),
        });
    };
    let mut entries = Vec::with_capacity(count);
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-empty line").to_string();
        let values: Vec<f64> = parts
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| ModelError::EmbeddingFile {
                line: i + 1,
                message: format!("{e}"),
            })?;
        if values.len() != dim {
            return Err(ModelError::EmbeddingFile {
                line: i + 1,
                message: format!("expected {dim} values, found {}", values.len()),
            });
        }
        entries.push((token, values));
    }
    Ok((dim, entries))
}

impl NluModel {
    /// Overwrites word-embedding rows with vectors from an embedding file.
    pub fn apply_pretrained(&mut self, path: impl AsRef<Path>) -> Result<PretrainedStats, ModelError> {
        let (dim, entries) = read_embedding_file(path)?;
        if dim != self.config.embedding_dim {
            return Err(ModelError::Config(format!(
                "embedding file has dimension {dim}, model expects {}",
                self.config.embedding_dim
            )));
        }
        let mut stats = PretrainedStats::default();
        let mut seen = vec![false; self.vocab.len()];
        for (token, values) in entries {
            match self.vocab.index(&token) {
                Some(i) => {
                    let row = &mut self.params.word_embeddings.data_mut()[i * dim..(i + 1) * dim];
                    row.copy_from_slice(&values);
                    seen[i] = true;
                    stats.matched += 1;
                }
                None => stats.skipped += 1,
            }
        }
        stats.missing = seen
            .iter()
            .enumerate()
            .filter(|(_, s)| !**s)
            .map(|(i, _)| self.vocab.token(i).to_string())
            .collect();
        if !stats.missing.is_empty() {
            log::info!(
                "{} vocabulary tokens not in embedding file, kept random init",
                stats.missing.len()
            );
        }
        Ok(stats)
    }
}
