use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{fuse_descriptions, DescriptorError, Result};
use crate::corpus::{IdMap, InteractionMatrix};

pub const DEFAULT_BEHAVIOR_CAP: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemEntry {
    pub item_key: String,
    #[serde(default)]
    pub text_meta: String,
    #[serde(default)]
    pub image_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_desc: Option<String>,
}

impl ItemEntry {
    /// Metadata text fused with the generated description, once one exists.
    pub fn multimodal_desc(&self) -> Option<String> {
        self.semantic_desc
            .as_deref()
            .map(|s| fuse_descriptions(&self.text_meta, s))
    }

    pub fn image(&self) -> Option<&str> {
        self.image_ref.as_deref().filter(|r| !r.trim().is_empty())
    }
}

/// Per-item metadata and descriptions, indexed like the interaction matrix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ItemCatalog {
    pub entries: Vec<ItemEntry>,
}

impl ItemCatalog {
    /// Reads a JSONL metadata file and aligns it to `items`. Records for
    /// unknown keys are ignored; a known item without a record is an error.
    pub fn from_metadata(path: &Path, items: &IdMap) -> Result<Self> {
        let file = File::open(path).map_err(|e| DescriptorError::io(path, e))?;
        let mut slots: Vec<Option<ItemEntry>> = vec![None; items.len()];
        for (k, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| DescriptorError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ItemEntry = serde_json::from_str(&line).map_err(|e| DescriptorError::BadRecord {
                path: path.to_path_buf(),
                line: k + 1,
                reason: e.to_string(),
            })?;
            if let Some(i) = items.index_of(&entry.item_key) {
                if slots[i].is_none() {
                    slots[i] = Some(entry);
                }
            }
        }
        let entries = slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| DescriptorError::MissingMetadata(items.key(i).to_string())))
            .collect::<Result<_>>()?;
        Ok(ItemCatalog { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn multimodal_desc(&self, item: usize) -> Option<String> {
        self.entries.get(item).and_then(ItemEntry::multimodal_desc)
    }
}

/// Multimodal descriptions of the user's training items, oldest first, keeping
/// the most recent `cap`. Without complete timestamps, item index order is used.
pub fn build_behavior_list(
    user: usize,
    train: &InteractionMatrix,
    catalog: &ItemCatalog,
    cap: usize,
) -> Result<Vec<String>> {
    let items = train.items_of(user);
    let stamps = train.timestamps_of(user);
    let mut order: Vec<(i64, usize)> = if stamps.iter().all(Option::is_some) {
        items.iter().zip(stamps).map(|(&i, t)| (t.unwrap(), i)).collect()
    } else {
        items.iter().map(|&i| (0, i)).collect()
    };
    order.sort_unstable();
    let skip = order.len().saturating_sub(cap);
    order[skip..]
        .iter()
        .map(|&(_, i)| catalog.multimodal_desc(i).ok_or(DescriptorError::MissingDescription(i)))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UserCatalog {
    pub behavior_lists: Vec<Vec<String>>,
    pub preferences: Vec<Option<String>>,
}

impl UserCatalog {
    pub fn build(train: &InteractionMatrix, items: &ItemCatalog, cap: usize) -> Result<Self> {
        let behavior_lists = (0..train.n_users())
            .map(|u| build_behavior_list(u, train, items, cap))
            .collect::<Result<Vec<_>>>()?;
        let preferences = vec![None; behavior_lists.len()];
        Ok(UserCatalog {
            behavior_lists,
            preferences,
        })
    }
}
