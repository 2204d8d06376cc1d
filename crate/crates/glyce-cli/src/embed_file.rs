//! Per-character embedding table export.
//!
//! First line is `char_id` followed by the embedding width; every other
//! line is a character id and its values, space-separated, printed with
//! Rust's default f64 formatting (shortest text that parses back to the
//! same double). Plain text so two exports diff cleanly.

use std::fmt::Write as _;
use std::path::Path;

use glyce_core::Tensor;

use crate::error::{write_bytes, CliError, CliResult};

pub fn encode_embeddings(ids: &[u32], table: &Tensor) -> CliResult<String> {
    let shape = table.shape();
    if shape.len() != 2 || shape[0] != ids.len() {
        return Err(CliError::Compute(format!(
            "embedding table shape {shape:?} does not hold {} rows",
            ids.len()
        )));
    }
    let dim = shape[1];
    let mut out = format!("char_id {dim}\n");
    for (row, &id) in ids.iter().enumerate() {
        let _ = write!(out, "{id}");
        for &v in &table.values()[row * dim..(row + 1) * dim] {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn save_embeddings(ids: &[u32], table: &Tensor, path: &Path) -> CliResult<()> {
    write_bytes(path, encode_embeddings(ids, table)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_then_one_line_per_char() {
        let table = Tensor::from_values(&[2, 3], vec![0.5, -1.0, 0.125, 3.0, 0.1, 2e-17]).unwrap();
        let text = encode_embeddings(&[7, 9], &table).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines, vec!["char_id 3", "7 0.5 -1 0.125", "9 3 0.1 0.00000000000000002"]);
    }

    #[test]
    fn values_reparse_to_the_same_doubles() {
        let vals = vec![1.0 / 3.0, -0.0, 1e-300, 123456.789012345];
        let table = Tensor::from_values(&[1, 4], vals.clone()).unwrap();
        let text = encode_embeddings(&[0], &table).unwrap();
        let row = text.lines().nth(1).unwrap();
        let back: Vec<f64> = row
            .split(' ')
            .skip(1)
            .map(|t| t.parse().unwrap())
            .collect();
        assert_eq!(back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   vals.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn row_count_mismatch_is_rejected() {
        let table = Tensor::from_values(&[2, 2], vec![0.0; 4]).unwrap();
        assert!(encode_embeddings(&[1], &table).is_err());
    }
}
