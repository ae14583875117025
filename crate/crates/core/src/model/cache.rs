use serde::{Deserialize, Serialize};

use super::forward::{LayerKv, Row};
use super::ModelConfig;
use crate::error::{invalid, Result};
use crate::kernels::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Verified,
    Draft,
}

#[derive(Debug, Clone, PartialEq)]
struct DraftEntry {
    /// Row index within the pass that wrote it (tree node index for tree
    /// passes).
    slot: usize,
    position: usize,
    key: Vec<Real>,
    value: Vec<Real>,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct LayerCache {
    keys: Vec<Vec<Real>>,
    values: Vec<Vec<Real>>,
    drafts: Vec<DraftEntry>,
}

/// Per-layer key/value history (keys stored after rotary encoding).
///
/// Positions `0..committed` hold verified entries at every layer. Draft
/// entries live apart from them, tagged with the pass slot that wrote them,
/// and are removed by [`KvCache::rollback`] or promoted by
/// [`KvCache::commit_path`].
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    layers: Vec<LayerCache>,
    committed: usize,
    /// Parent links of the last tree pass; only tree entries are committable.
    tree: Option<Vec<Option<usize>>>,
}

impl KvCache {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            layers: vec![LayerCache::default(); config.n_layers],
            committed: 0,
            tree: None,
        }
    }

    pub fn committed(&self) -> usize {
        self.committed
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn has_draft(&self) -> bool {
        self.layers.iter().any(|l| !l.drafts.is_empty())
    }

    /// `(position, provenance)` of every entry at `layer`, verified first.
    pub fn entries(&self, layer: usize) -> Vec<(usize, Provenance)> {
        let l = &self.layers[layer];
        (0..l.keys.len())
            .map(|p| (p, Provenance::Verified))
            .chain(l.drafts.iter().map(|d| (d.position, Provenance::Draft)))
            .collect()
    }

    pub(crate) fn verified_keys(&self, layer: usize) -> &[Vec<Real>] {
        &self.layers[layer].keys
    }

    pub(crate) fn verified_values(&self, layer: usize) -> &[Vec<Real>] {
        &self.layers[layer].values
    }

    pub(crate) fn append_verified(&mut self, kv: &[LayerKv]) {
        let mut added = None;
        for (layer, rows) in self.layers.iter_mut().zip(kv) {
            for (k, v) in rows.iter().flatten() {
                layer.keys.push(k.clone());
                layer.values.push(v.clone());
            }
            added = Some(layer.keys.len());
        }
        if let Some(n) = added {
            self.committed = n;
        }
    }

    pub(crate) fn append_draft(
        &mut self,
        kv: &[LayerKv],
        rows: &[Row],
        tree: Option<Vec<Option<usize>>>,
    ) {
        for (layer, per_row) in self.layers.iter_mut().zip(kv) {
            for (slot, entry) in per_row.iter().enumerate() {
                if let Some((k, v)) = entry {
                    layer.drafts.push(DraftEntry {
                        slot,
                        position: rows[slot].pos,
                        key: k.clone(),
                        value: v.clone(),
                    });
                }
            }
        }
        self.tree = tree;
    }

    /// Drops every draft entry at every layer.
    pub fn rollback(&mut self) {
        for l in &mut self.layers {
            l.drafts.clear();
        }
        self.tree = None;
    }

    /// Promotes the tree nodes along `path` (root first) to verified
    /// entries at every layer, discards all other draft entries, and
    /// advances the committed length by `path.len()`.
    pub fn commit_path(&mut self, path: &[usize]) -> Result<()> {
        if path.is_empty() {
            self.rollback();
            return Ok(());
        }
        let Some(parents) = &self.tree else {
            return invalid("no tree pass to commit from");
        };
        for (i, &node) in path.iter().enumerate() {
            let expected = if i == 0 { None } else { Some(path[i - 1]) };
            match parents.get(node) {
                Some(&p) if p == expected => {}
                Some(_) => return invalid(format!("node {node} does not continue the path")),
                None => return invalid(format!("node {node} is not in the tree")),
            }
        }
        // Check before mutating so a failure leaves the cache untouched.
        for layer in &self.layers {
            for &node in path {
                if !layer.drafts.iter().any(|d| d.slot == node) {
                    return invalid(format!("node {node} has no entry at some layer"));
                }
            }
        }
        for layer in &mut self.layers {
            let drafts = std::mem::take(&mut layer.drafts);
            for &node in path {
                let d = drafts
                    .iter()
                    .find(|d| d.slot == node)
                    .expect("checked above");
                debug_assert_eq!(d.position, layer.keys.len());
                layer.keys.push(d.key.clone());
                layer.values.push(d.value.clone());
            }
        }
        self.committed += path.len();
        self.tree = None;
        Ok(())
    }

    /// Drops verified entries beyond `len`. Used to rewind sessions.
    pub fn truncate(&mut self, len: usize) {
        self.rollback();
        for l in &mut self.layers {
            l.keys.truncate(len);
            l.values.truncate(len);
        }
        self.committed = self.committed.min(len);
    }

    /// Bytes held by keys and values.
    pub fn memory_bytes(&self) -> usize {
        let per = std::mem::size_of::<Real>();
        self.layers
            .iter()
            .map(|l| {
                let v: usize = l.keys.iter().chain(&l.values).map(Vec::len).sum();
                let d: usize = l.drafts.iter().map(|d| d.key.len() + d.value.len()).sum();
                (v + d) * per
            })
            .sum()
    }

}
