//! word2vec-style text embeddings.
//!
//! The first line holds `node_count dim`; each following line holds a node
//! id and its `dim` components, separated by single spaces. Components are
//! printed with 17 significant digits so that reading them back reproduces
//! the exact values.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbeddings {
    pub ids: Vec<String>,
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
}

impl TextEmbeddings {
    pub fn from_matrix(ids: &[String], matrix: &Matrix) -> Self {
        assert_eq!(ids.len(), matrix.rows(), "one id per row");
        TextEmbeddings {
            ids: ids.to_vec(),
            dim: matrix.cols(),
            vectors: (0..matrix.rows())
                .map(|r| matrix.row(r).iter().map(|&x| x as f64).collect())
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{} {}", self.ids.len(), self.dim)?;
        let mut line = String::new();
        for (id, v) in self.ids.iter().zip(&self.vectors) {
            line.clear();
            line.push_str(id);
            for x in v {
                line.push(' ');
                line.push_str(&format!("{x:.16e}"));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing `node_count dim` header"))?;
        let header = header?;
        let shape: Vec<usize> = header
            .split_whitespace()
            .map(|f| f.parse::<usize>().map_err(|e| Error::parse(1, format!("bad header: {e}"))))
            .collect::<Result<_>>()?;
        let [count, dim] = shape[..] else {
            return Err(Error::parse(1, "header must be `node_count dim`"));
        };
        let mut ids = Vec::with_capacity(count);
        let mut vectors = Vec::with_capacity(count);
        for (n, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let id = fields.next().expect("non-empty line").to_owned();
            let v = fields
                .map(|f| f.parse::<f64>().map_err(|e| Error::parse(n + 1, format!("bad component {f:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if v.len() != dim {
                return Err(Error::parse(n + 1, format!("expected {dim} components, found {}", v.len())));
            }
            ids.push(id);
            vectors.push(v);
        }
        if ids.len() != count {
            return Err(Error::Validation(format!(
                "header announces {count} embeddings, file has {}",
                ids.len()
            )));
        }
        Ok(TextEmbeddings { ids, dim, vectors })
    }
}
