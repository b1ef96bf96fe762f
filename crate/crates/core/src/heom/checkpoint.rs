//! Hierarchy checkpoints: a JSON header `{dim, L, M, bath_meta, t}` followed by
//! every ADO entry in lexicographic multi-index order, each ADO row-major.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{HeomTerm, HierarchyState, IndexSet};
use crate::error::{Error, Result};
use crate::io::{read_container, write_container};

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dim: usize,
    #[serde(rename = "L")]
    depth: usize,
    #[serde(rename = "M")]
    n_terms: usize,
    bath_meta: Vec<HeomTerm>,
    t: f64,
}

pub fn write_checkpoint(path: &Path, state: &HierarchyState) -> Result<()> {
    let header = Header {
        dim: state.dim,
        depth: state.depth(),
        n_terms: state.terms.len(),
        bath_meta: state.terms.clone(),
        t: state.t,
    };
    write_container(path, &header, &state.ados)
}

pub fn read_checkpoint(path: &Path) -> Result<HierarchyState> {
    let (header, ados): (Header, _) = read_container(path)?;
    if header.bath_meta.len() != header.n_terms {
        return Err(Error::InvalidState("checkpoint term count disagrees with its metadata".into()));
    }
    let index = IndexSet::new(header.n_terms, header.depth);
    let expected = index.len() * header.dim * header.dim;
    if ados.len() != expected {
        return Err(Error::InvalidState(format!("checkpoint holds {} entries, expected {expected}", ados.len())));
    }
    Ok(HierarchyState { dim: header.dim, terms: header.bath_meta, index: Arc::new(index), ados, t: header.t })
}
