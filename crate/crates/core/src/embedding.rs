use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mxc;

/// How an embedding matrix was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Spectral,
    QwemSgd,
    SgnsSgd,
    Imported,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Spectral => "spectral",
            Provenance::QwemSgd => "qwem_sgd",
            Provenance::SgnsSgd => "sgns_sgd",
            Provenance::Imported => "imported",
        }
    }

    fn parse(s: &str) -> Self {
        match s {
            "spectral" => Provenance::Spectral,
            "qwem_sgd" => Provenance::QwemSgd,
            "sgns_sgd" => Provenance::SgnsSgd,
            _ => Provenance::Imported,
        }
    }
}

/// `V x d` word embeddings; row `i` is the vector of word id `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    w: DMatrix<f64>,
    provenance: Provenance,
    checksum: String,
}

impl EmbeddingMatrix {
    pub fn new(w: DMatrix<f64>, provenance: Provenance, checksum: impl Into<String>) -> Result<Self> {
        if let Some(pos) = w.iter().position(|x| !x.is_finite()) {
            return Err(Error::Degenerate(format!(
                "embedding entry ({}, {}) is not finite",
                pos % w.nrows(),
                pos / w.nrows()
            )));
        }
        Ok(Self { w, provenance, checksum: checksum.into() })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.w
    }

    pub fn vocab_size(&self) -> usize {
        self.w.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    /// Keeps the first `d` columns.
    pub fn truncate(&self, d: usize) -> Result<Self> {
        if d == 0 || d > self.dim() {
            return Err(Error::invalid(format!("cannot truncate a {}-dimensional embedding to {d}", self.dim())));
        }
        Ok(Self { w: self.w.columns(0, d).into_owned(), provenance: self.provenance, checksum: self.checksum.clone() })
    }

    pub fn row(&self, i: u32) -> nalgebra::DVector<f64> {
        self.w.row(i as usize).transpose()
    }

    pub fn save(&self, path: &Path, name: &str) -> Result<()> {
        let prov = format!("{}:{}", self.provenance.as_str(), self.checksum);
        mxc::save_mxc(path, &self.w, name, &prov)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (w, header) = mxc::load_mxc(path)?;
        let (kind, checksum) = header.provenance.split_once(':').unwrap_or((header.provenance.as_str(), ""));
        Self::new(w, Provenance::parse(kind), checksum)
    }
}
