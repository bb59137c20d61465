//! `EMB1` embedding files: the 4-byte magic `EMB1`, row count and dimension as
//! little-endian `u32`, then row-major little-endian `f32` values. Row order is
//! given by a companion manifest with one msg_id per line.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::thread_graph::MessageGraph;

pub const MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != ids.len() * dim {
            return Err(Error::Shape(format!(
                "{} values for {} rows of dimension {dim}",
                data.len(),
                ids.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "embedding row {} column {}",
                pos / dim.max(1),
                pos % dim.max(1)
            )));
        }
        Ok(Self { ids, dim, data })
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Rows reordered to match the graph's node order, looked up by msg_id.
    pub fn aligned_to(&self, graph: &MessageGraph) -> Result<Self> {
        if self.ids.as_slice() == graph.node_ids() {
            return Ok(self.clone());
        }
        let index: HashMap<&str, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut data = Vec::with_capacity(graph.node_count() * self.dim);
        for id in graph.node_ids() {
            let &r = index
                .get(id.as_str())
                .ok_or_else(|| Error::Shape(format!("no embedding row for msg_id {id:?}")))?;
            data.extend_from_slice(self.row(r));
        }
        Ok(Self {
            ids: graph.node_ids().to_vec(),
            dim: self.dim,
            data,
        })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.rows() as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn write_manifest<W: Write>(&self, mut w: W) -> Result<()> {
        for id in &self.ids {
            writeln!(w, "{id}")?;
        }
        Ok(())
    }

    pub fn read<R: Read, M: BufRead>(mut data: R, manifest: M) -> Result<Self> {
        let bad = |m: &str| Error::Invalid(format!("EMB1: {m}"));
        let mut head = [0u8; 12];
        data.read_exact(&mut head)
            .map_err(|_| bad("truncated header"))?;
        if &head[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let rows = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        let mut bytes = Vec::new();
        data.read_to_end(&mut bytes)?;
        if bytes.len() != rows * dim * 4 {
            return Err(bad(&format!(
                "payload is {} bytes, header declares {rows}x{dim}",
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let ids: Vec<String> = manifest
            .lines()
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .filter(|l| !l.is_empty())
            .collect();
        if ids.len() != rows {
            return Err(bad(&format!(
                "manifest lists {} ids for {rows} rows",
                ids.len()
            )));
        }
        Self::new(ids, dim, values)
    }
}

/// Sidecar written by the embedding exporter next to each EMB1 file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub model: String,
    pub messages: usize,
    pub dim: usize,
    pub max_tokens: usize,
    pub batch: usize,
    /// Messages cut at `max_tokens`.
    #[serde(default)]
    pub truncated: usize,
    pub input_sha256: String,
}

impl ExportManifest {
    pub fn read<R: Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }

    /// Header fields of `m` must agree with the manifest.
    pub fn check(&self, m: &EmbeddingMatrix) -> Result<()> {
        if self.messages != m.rows() || self.dim != m.dim() {
            return Err(Error::Shape(format!(
                "exporter manifest declares {}x{}, EMB1 file holds {}x{}",
                self.messages,
                self.dim,
                m.rows(),
                m.dim()
            )));
        }
        Ok(())
    }
}
