//! Class-labelled sample manifests, label encoding and stratified splits.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

/// Bijective class-name / integer-id mapping. Ids follow the order of the
/// names given at construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelMap {
    names: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl TryFrom<Vec<String>> for LabelMap {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        Self::new(names)
    }
}

impl From<LabelMap> for Vec<String> {
    fn from(m: LabelMap) -> Self {
        m.names
    }
}

impl LabelMap {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Config("class names must be non-empty".into()));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate class name {name:?}")));
            }
        }
        Ok(Self { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Label(format!("unknown class {name:?}")))
    }

    pub fn name(&self, id: usize) -> Result<&str> {
        self.names
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::Label(format!("class id {id} outside 0..{}", self.names.len())))
    }

    pub fn one_hot(&self, id: usize) -> Result<Vec<f64>> {
        one_hot(id, self.len())
    }
}

/// Builds the label map for a class list.
pub fn encode_labels(class_names: &[String]) -> Result<LabelMap> {
    LabelMap::new(class_names.to_vec())
}

/// Length-`num_classes` indicator vector with a single 1 at `id`.
pub fn one_hot(id: usize, num_classes: usize) -> Result<Vec<f64>> {
    if id >= num_classes {
        return Err(Error::Label(format!("class id {id} outside 0..{num_classes}")));
    }
    let mut v = vec![0.0; num_classes];
    v[id] = 1.0;
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
    Unassigned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSample {
    /// Path relative to the manifest root, `/`-separated.
    pub relative_path: String,
    pub class_id: usize,
    pub class_name: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root_path: String,
    pub class_names: Vec<String>,
    pub samples: Vec<ImageSample>,
    pub created_seed: u64,
}

impl DatasetManifest {
    /// Builds a manifest from a directory listing: one `(class, files)` entry
    /// per class directory. Classes are sorted, files sorted within a class.
    pub fn from_listing(root_path: impl Into<String>, listing: Vec<(String, Vec<String>)>) -> Result<Self> {
        if listing.is_empty() {
            return Err(Error::Structural("dataset root contains no class directories".into()));
        }
        let mut listing = listing;
        listing.sort_by(|a, b| a.0.cmp(&b.0));
        for (class, files) in &listing {
            if files.is_empty() {
                return Err(Error::Structural(format!("class directory {class:?} contains no images")));
            }
        }
        let class_names: Vec<String> = listing.iter().map(|(c, _)| c.clone()).collect();
        LabelMap::new(class_names.clone())?;
        let mut samples = Vec::new();
        for (class_id, (class, mut files)) in listing.into_iter().enumerate() {
            files.sort();
            samples.extend(files.into_iter().map(|f| ImageSample {
                relative_path: format!("{class}/{f}"),
                class_id,
                class_name: class.clone(),
                split: Split::Unassigned,
            }));
        }
        Ok(Self {
            root_path: root_path.into(),
            class_names,
            samples,
            created_seed: 0,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn label_map(&self) -> Result<LabelMap> {
        LabelMap::new(self.class_names.clone())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for s in &self.samples {
            counts[s.class_id] += 1;
        }
        counts
    }

    /// Checks the structural invariants (sorted unique classes, consistent ids).
    pub fn validate(&self) -> Result<()> {
        LabelMap::new(self.class_names.clone())?;
        if self.class_names.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Structural("class names are not sorted".into()));
        }
        for s in &self.samples {
            match self.class_names.get(s.class_id) {
                Some(name) if *name == s.class_name => {}
                _ => {
                    return Err(Error::Structural(format!(
                        "sample {:?} has inconsistent class id {}",
                        s.relative_path, s.class_id
                    )))
                }
            }
        }
        Ok(())
    }

    /// Writes the split labels of `split` into the samples.
    pub fn apply_split(&mut self, split: &SplitAssignment) -> Result<()> {
        split.check_cover(self.samples.len())?;
        for s in &mut self.samples {
            s.split = Split::Unassigned;
        }
        for (ids, tag) in [
            (&split.train_ids, Split::Train),
            (&split.validation_ids, Split::Validation),
            (&split.test_ids, Split::Test),
        ] {
            for &i in ids {
                self.samples[i].split = tag;
            }
        }
        self.created_seed = split.seed;
        Ok(())
    }

    pub fn ids_in(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.samples[i].split == split)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub ratio: f64,
    #[serde(default)]
    pub validation_ratio: f64,
    pub seed: u64,
    pub train_ids: Vec<usize>,
    #[serde(default)]
    pub validation_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

impl SplitAssignment {
    fn check_cover(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self
            .train_ids
            .iter()
            .chain(&self.validation_ids)
            .chain(&self.test_ids)
        {
            if i >= n || core::mem::replace(&mut seen[i], true) {
                return Err(Error::State(format!("split id {i} is out of range or duplicated")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::State("split does not cover every sample".into()));
        }
        Ok(())
    }
}

/// Two-way stratified split: per class, `floor(ratio * count)` samples go to
/// train and the remainder to test.
pub fn stratified_split(manifest: &DatasetManifest, ratio: f64, seed: u64) -> Result<SplitAssignment> {
    stratified_split3(manifest, ratio, 0.0, seed)
}

/// Three-way variant: `floor(validation_ratio * count)` samples per class are
/// additionally carved out for validation. `validation_ratio = 0` gives the
/// two-way split.
pub fn stratified_split3(
    manifest: &DatasetManifest,
    ratio: f64,
    validation_ratio: f64,
    seed: u64,
) -> Result<SplitAssignment> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    if !(0.0..1.0).contains(&validation_ratio) || ratio + validation_ratio >= 1.0 {
        return Err(Error::Config(format!(
            "validation ratio {validation_ratio} must be >= 0 and leave room for test"
        )));
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); manifest.num_classes()];
    for (i, s) in manifest.samples.iter().enumerate() {
        per_class
            .get_mut(s.class_id)
            .ok_or_else(|| Error::Structural(format!("sample {i} has class id {}", s.class_id)))?
            .push(i);
    }
    let mut out = SplitAssignment {
        ratio,
        validation_ratio,
        seed,
        train_ids: Vec::new(),
        validation_ids: Vec::new(),
        test_ids: Vec::new(),
    };
    for (class_id, ids) in per_class.iter_mut().enumerate() {
        if ids.is_empty() {
            return Err(Error::Structural(format!(
                "class {:?} has no samples",
                manifest.class_names[class_id]
            )));
        }
        ids.shuffle(&mut rng::stream(seed, &[class_id as u64]));
        let n = ids.len();
        let n_train = libm::floor(ratio * n as f64) as usize;
        let n_val = libm::floor(validation_ratio * n as f64) as usize;
        out.train_ids.extend_from_slice(&ids[..n_train]);
        out.validation_ids.extend_from_slice(&ids[n_train..n_train + n_val]);
        out.test_ids.extend_from_slice(&ids[n_train + n_val..]);
    }
    Ok(out)
}
