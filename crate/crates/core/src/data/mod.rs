//! Labeled datasets, forget/retain splits and dataset provenance.

pub mod idx;
pub mod synth;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub use idx::{load_idx, save_idx};
pub use synth::{synth_dataset, SynthConfig};

#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub images: Tensor,
    pub labels: Vec<u8>,
    pub source_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source_id: String,
    pub n: usize,
    pub dim: usize,
    pub classes: Vec<u8>,
    pub sha256: String,
}

impl LabeledDataset {
    pub fn new(images: Tensor, labels: Vec<u8>, source_id: &str) -> Result<Self> {
        if images.n_rows() != labels.len() {
            return Err(Error::CountMismatch {
                images: images.n_rows(),
                labels: labels.len(),
            });
        }
        if labels.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        Ok(Self {
            images,
            labels,
            source_id: source_id.to_string(),
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.images.row_dim()
    }

    pub fn class_set(&self) -> Vec<u8> {
        let set: BTreeSet<u8> = self.labels.iter().copied().collect();
        set.into_iter().collect()
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Empty("selection"));
        }
        let images = self.images.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok(Self {
            images,
            labels,
            source_id: self.source_id.clone(),
        })
    }

    pub fn indices_of_class(&self, class: u8) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn class_fraction(&self, class: u8) -> f64 {
        self.indices_of_class(class).len() as f64 / self.n() as f64
    }

    /// Content digest over image bytes and labels.
    pub fn sha256(&self) -> String {
        let mut hasher = Sha256::new();
        for v in self.images.as_slice() {
            hasher.update(v.to_le_bytes());
        }
        hasher.update(&self.labels);
        hex(&hasher.finalize())
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            source_id: self.source_id.clone(),
            n: self.n(),
            dim: self.dim(),
            classes: self.class_set(),
            sha256: self.sha256(),
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Keep only samples whose label is in `classes`.
pub fn subset_classes(ds: &LabeledDataset, classes: &[u8]) -> Result<LabeledDataset> {
    if classes.is_empty() {
        return Err(Error::Empty("class filter"));
    }
    let keep: Vec<usize> = ds
        .labels
        .iter()
        .enumerate()
        .filter(|(_, l)| classes.contains(l))
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::Empty("class subset"));
    }
    let mut out = ds.select(&keep)?;
    out.source_id = format!("{}[classes={:?}]", ds.source_id, classes);
    Ok(out)
}

/// What to forget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgetSpec {
    Class(u8),
    Indices(Vec<usize>),
}

/// A dataset with disjoint, exhaustive forget/retain index sets.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub all: LabeledDataset,
    pub forget: Vec<usize>,
    pub retain: Vec<usize>,
}

impl DatasetSplit {
    pub fn new(all: LabeledDataset, forget: Vec<usize>, retain: Vec<usize>) -> Result<Self> {
        let n = all.n();
        let mut seen = vec![false; n];
        for &i in forget.iter().chain(&retain) {
            if i >= n {
                return Err(Error::InvalidSplit(format!("index {i} out of range {n}")));
            }
            if seen[i] {
                return Err(Error::InvalidSplit(format!("index {i} appears twice")));
            }
            seen[i] = true;
        }
        if forget.len() + retain.len() != n {
            return Err(Error::InvalidSplit(format!(
                "split covers {} of {} samples",
                forget.len() + retain.len(),
                n
            )));
        }
        if forget.is_empty() {
            return Err(Error::InvalidSplit("empty forget set".into()));
        }
        if retain.is_empty() {
            return Err(Error::InvalidSplit("empty retain set".into()));
        }
        Ok(Self { all, forget, retain })
    }

    pub fn forget_fraction(&self) -> f64 {
        self.forget.len() as f64 / self.all.n() as f64
    }

    pub fn forget_images(&self) -> Result<Tensor> {
        self.all.images.select_rows(&self.forget)
    }

    pub fn retain_images(&self) -> Result<Tensor> {
        self.all.images.select_rows(&self.retain)
    }

    pub fn forget_dataset(&self) -> Result<LabeledDataset> {
        self.all.select(&self.forget)
    }

    pub fn retain_dataset(&self) -> Result<LabeledDataset> {
        self.all.select(&self.retain)
    }
}

/// Split by an explicit spec.
pub fn make_split(ds: &LabeledDataset, spec: &ForgetSpec) -> Result<DatasetSplit> {
    match spec {
        ForgetSpec::Class(c) => make_split_with(ds, |label| label == *c),
        ForgetSpec::Indices(idx) => {
            let mark: std::collections::BTreeSet<usize> = idx.iter().copied().collect();
            let forget: Vec<usize> = (0..ds.n()).filter(|i| mark.contains(i)).collect();
            if forget.len() != idx.len() {
                return Err(Error::InvalidSplit(
                    "forget indices out of range or duplicated".into(),
                ));
            }
            let retain: Vec<usize> = (0..ds.n()).filter(|i| !mark.contains(i)).collect();
            DatasetSplit::new(ds.clone(), forget, retain)
        }
    }
}

/// Split by a predicate over labels.
pub fn make_split_with<F>(ds: &LabeledDataset, forget_if: F) -> Result<DatasetSplit>
where
    F: Fn(u8) -> bool,
{
    let forget: Vec<usize> = (0..ds.n()).filter(|&i| forget_if(ds.labels[i])).collect();
    let retain: Vec<usize> = (0..ds.n()).filter(|&i| !forget_if(ds.labels[i])).collect();
    DatasetSplit::new(ds.clone(), forget, retain)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset() -> LabeledDataset {
        let images = Tensor::from_rows(&[
            vec![0.1, 0.2],
            vec![0.3, 0.4],
            vec![0.5, 0.6],
            vec![0.7, 0.8],
            vec![0.9, 1.0],
        ])
        .unwrap();
        LabeledDataset::new(images, vec![1, 3, 1, 8, 3], "unit").unwrap()
    }

    #[test]
    fn count_mismatch_rejected() {
        let images = Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(LabeledDataset::new(images, vec![1], "x").is_err());
    }

    #[test]
    fn class_subset_filters_and_relabels_source() {
        let ds = dataset();
        let sub = subset_classes(&ds, &[1, 8]).unwrap();
        assert_eq!(sub.n(), 3);
        assert_eq!(sub.labels, vec![1, 1, 8]);
        assert!(sub.source_id.contains("classes"));
        assert!(subset_classes(&ds, &[9]).is_err());
    }

    #[test]
    fn split_by_class_is_disjoint_exhaustive() {
        let ds = dataset();
        let split = make_split(&ds, &ForgetSpec::Class(1)).unwrap();
        assert_eq!(split.forget, vec![0, 2]);
        assert_eq!(split.retain, vec![1, 3, 4]);
        assert!((split.forget_fraction() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn split_by_indices() {
        let ds = dataset();
        let split = make_split(&ds, &ForgetSpec::Indices(vec![4, 0])).unwrap();
        assert_eq!(split.forget, vec![0, 4]);
        assert_eq!(split.retain.len(), 3);
        assert!(make_split(&ds, &ForgetSpec::Indices(vec![0, 99])).is_err());
    }

    #[test]
    fn overlapping_split_rejected() {
        let ds = dataset();
        assert!(DatasetSplit::new(ds.clone(), vec![0, 1], vec![1, 2, 3, 4]).is_err());
        assert!(DatasetSplit::new(ds.clone(), vec![0], vec![1, 2]).is_err());
        assert!(DatasetSplit::new(ds, vec![0, 1, 2, 3, 4], vec![]).is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let ds = dataset();
        let other = {
            let mut labels = ds.labels.clone();
            labels[0] = 3;
            LabeledDataset::new(ds.images.clone(), labels, "unit").unwrap()
        };
        assert_ne!(ds.sha256(), other.sha256());
        assert_eq!(ds.sha256(), dataset().sha256());
    }

    #[test]
    fn manifest_reports_classes() {
        let m = dataset().manifest();
        assert_eq!(m.classes, vec![1, 3, 8]);
        assert_eq!(m.n, 5);
        assert_eq!(m.dim, 2);
    }
}
