//! Labeled sample records, binary relabeling and stratified splitting.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Normal,
    Cracked,
    Dusty,
    Shadowed,
    /// Any of cracked, dusty or shadowed, in the binary taxonomy.
    Faulty,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Cracked => "cracked",
            Label::Dusty => "dusty",
            Label::Shadowed => "shadowed",
            Label::Faulty => "faulty",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown label `{0}`")]
pub struct ParseLabelError(pub String);

impl FromStr for Label {
    type Err = ParseLabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(Label::Normal),
            "cracked" => Ok(Label::Cracked),
            "dusty" => Ok(Label::Dusty),
            "shadowed" => Ok(Label::Shadowed),
            "faulty" => Ok(Label::Faulty),
            other => Err(ParseLabelError(other.into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Taxonomy {
    /// normal = 0, faulty = 1
    Binary,
    /// normal = 0, cracked = 1, dusty = 2, shadowed = 3
    Multiclass,
}

impl Taxonomy {
    pub fn labels(self) -> &'static [Label] {
        match self {
            Taxonomy::Binary => &[Label::Normal, Label::Faulty],
            Taxonomy::Multiclass => &[Label::Normal, Label::Cracked, Label::Dusty, Label::Shadowed],
        }
    }

    pub fn num_classes(self) -> usize {
        self.labels().len()
    }

    pub fn class_index(self, label: Label) -> Option<usize> {
        self.labels().iter().position(|&l| l == label)
    }

    pub fn for_classes(num_classes: usize) -> Option<Self> {
        match num_classes {
            2 => Some(Taxonomy::Binary),
            4 => Some(Taxonomy::Multiclass),
            _ => None,
        }
    }
}

impl fmt::Display for Taxonomy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Taxonomy::Binary => "binary",
            Taxonomy::Multiclass => "multiclass",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitTag {
    Train,
    Test,
    #[default]
    Unassigned,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub image_path: String,
    pub label: Label,
    pub split: SplitTag,
}

impl Sample {
    pub fn new(image_path: impl Into<String>, label: Label) -> Self {
        Self {
            image_path: image_path.into(),
            label,
            split: SplitTag::Unassigned,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("row {row}: unknown label `{label}`")]
    UnknownLabel { row: usize, label: String },
    #[error("row {row}: duplicate image path `{path}`")]
    DuplicatePath { row: usize, path: String },
    #[error("row {row}: label `{label}` is not part of the {taxonomy} taxonomy")]
    TaxonomyViolation {
        row: usize,
        label: Label,
        taxonomy: Taxonomy,
    },
    #[error("dataset is already binary")]
    AlreadyBinary,
    #[error("dataset is empty")]
    Empty,
    #[error("class `{label}` has {count} sample(s); at least 2 are needed to split")]
    ClassTooSmall { label: Label, count: usize },
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
}

/// Ordered, validated sample list. Row numbers in errors are 1-based
/// positions in the sample list.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    taxonomy: Taxonomy,
    manifest_path: Option<String>,
}

impl Dataset {
    pub fn new(
        samples: Vec<Sample>,
        taxonomy: Taxonomy,
        manifest_path: Option<String>,
    ) -> Result<Self, DataError> {
        let mut seen = BTreeSet::new();
        for (i, s) in samples.iter().enumerate() {
            if taxonomy.class_index(s.label).is_none() {
                return Err(DataError::TaxonomyViolation {
                    row: i + 1,
                    label: s.label,
                    taxonomy,
                });
            }
            if !seen.insert(s.image_path.as_str()) {
                return Err(DataError::DuplicatePath {
                    row: i + 1,
                    path: s.image_path.clone(),
                });
            }
        }
        Ok(Self {
            samples,
            taxonomy,
            manifest_path,
        })
    }

    /// Builds a dataset from `(path, label)` string rows, inferring the
    /// taxonomy: rows using `faulty` make it binary, anything else is
    /// multiclass.
    pub fn from_rows<'a>(
        rows: impl IntoIterator<Item = (&'a str, &'a str)>,
        manifest_path: Option<String>,
    ) -> Result<Self, DataError> {
        let mut samples = Vec::new();
        for (i, (path, label)) in rows.into_iter().enumerate() {
            let label = label.trim().parse::<Label>().map_err(|e| DataError::UnknownLabel {
                row: i + 1,
                label: e.0,
            })?;
            samples.push(Sample::new(path, label));
        }
        let taxonomy = if samples.iter().any(|s| s.label == Label::Faulty) {
            Taxonomy::Binary
        } else {
            Taxonomy::Multiclass
        };
        Self::new(samples, taxonomy, manifest_path)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn taxonomy(&self) -> Taxonomy {
        self.taxonomy
    }

    pub fn manifest_path(&self) -> Option<&str> {
        self.manifest_path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Class index of every sample under the dataset's taxonomy.
    pub fn class_indices(&self) -> Vec<usize> {
        self.samples
            .iter()
            .map(|s| self.taxonomy.class_index(s.label).expect("validated"))
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.taxonomy.num_classes()];
        for c in self.class_indices() {
            counts[c] += 1;
        }
        counts
    }

    /// Maps cracked, dusty and shadowed to faulty.
    pub fn relabel_binary(&self) -> Result<Dataset, DataError> {
        if self.taxonomy == Taxonomy::Binary {
            return Err(DataError::AlreadyBinary);
        }
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                label: if s.label == Label::Normal {
                    Label::Normal
                } else {
                    Label::Faulty
                },
                ..s.clone()
            })
            .collect();
        Dataset::new(samples, Taxonomy::Binary, self.manifest_path.clone())
    }

    /// Stratified train/test partition.
    ///
    /// Classes are visited in class-index order with one SplitMix64 stream
    /// seeded by `seed`. Each class's sample positions (in dataset order) are
    /// shuffled; the first `floor(fraction * count + 0.5)` go to train and the
    /// rest to test. Both halves keep the original dataset order.
    pub fn stratified_split(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(DataError::InvalidFraction(fraction));
        }
        if self.samples.is_empty() {
            return Err(DataError::Empty);
        }
        let classes = self.class_indices();
        let mut rng = SplitMix64::new(seed);
        let mut is_train = alloc::vec![false; self.samples.len()];
        for (class, &label) in self.taxonomy.labels().iter().enumerate() {
            let mut members: Vec<usize> = (0..classes.len()).filter(|&i| classes[i] == class).collect();
            if members.is_empty() {
                continue;
            }
            if members.len() < 2 {
                return Err(DataError::ClassTooSmall {
                    label,
                    count: members.len(),
                });
            }
            rng.shuffle(&mut members);
            let take = train_count(fraction, members.len());
            for &i in &members[..take] {
                is_train[i] = true;
            }
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (sample, &t) in self.samples.iter().zip(&is_train) {
            let mut s = sample.clone();
            if t {
                s.split = SplitTag::Train;
                train.push(s);
            } else {
                s.split = SplitTag::Test;
                test.push(s);
            }
        }
        Ok((
            Dataset::new(train, self.taxonomy, None)?,
            Dataset::new(test, self.taxonomy, None)?,
        ))
    }
}

/// Round-half-up of `fraction * count`. The small bias absorbs products
/// such as `0.7 * 5` that land a rounding error below an exact half.
pub fn train_count(fraction: f64, count: usize) -> usize {
    (libm::floor(fraction * count as f64 + 0.5 + 1e-9) as usize).min(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn multiclass(counts: [usize; 4]) -> Dataset {
        let labels = [Label::Normal, Label::Cracked, Label::Dusty, Label::Shadowed];
        let mut samples = Vec::new();
        for (l, &n) in labels.iter().zip(&counts) {
            for i in 0..n {
                samples.push(Sample::new(format!("{l}/{i}.png"), *l));
            }
        }
        Dataset::new(samples, Taxonomy::Multiclass, None).unwrap()
    }

    #[test]
    fn rows_with_one_per_class() {
        let ds = Dataset::from_rows(
            [("a.png", "normal"), ("b.png", "cracked"), ("c.png", "dusty"), ("d.png", "shadowed")],
            None,
        )
        .unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.taxonomy(), Taxonomy::Multiclass);
        assert_eq!(ds.samples()[1].label, Label::Cracked);
    }

    #[test]
    fn unknown_label_names_row() {
        let err = Dataset::from_rows([("a.png", "normal"), ("b.png", "burnt")], None).unwrap_err();
        assert_eq!(
            err,
            DataError::UnknownLabel {
                row: 2,
                label: "burnt".into()
            }
        );
        assert!(format!("{err}").contains("row 2"));
    }

    #[test]
    fn duplicate_paths_rejected() {
        let err = Dataset::from_rows([("a.png", "normal"), ("a.png", "dusty")], None).unwrap_err();
        assert!(matches!(err, DataError::DuplicatePath { row: 2, .. }));
    }

    #[test]
    fn empty_rows_are_valid_but_do_not_split() {
        let ds = Dataset::from_rows(core::iter::empty(), None).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.stratified_split(0.7, 1).unwrap_err(), DataError::Empty);
    }

    #[test]
    fn relabel_binary_conserves_counts() {
        let ds = multiclass([3, 2, 4, 1]);
        let b = ds.relabel_binary().unwrap();
        assert_eq!(b.taxonomy(), Taxonomy::Binary);
        assert_eq!(b.len(), ds.len());
        assert_eq!(b.class_counts(), vec![3, 7]);
        assert!(b.samples()[3].label == Label::Faulty);
        assert_eq!(b.relabel_binary().unwrap_err(), DataError::AlreadyBinary);

        let normals = multiclass([5, 0, 0, 0]);
        let nb = normals.relabel_binary().unwrap();
        assert!(nb.samples().iter().all(|s| s.label == Label::Normal));
    }

    #[test]
    fn split_counts_follow_rounding_rule() {
        let ds = multiclass([25, 25, 25, 25]);
        let (train, test) = ds.stratified_split(0.7, 42).unwrap();
        // round(17.5) = 18 per class
        assert_eq!(train.class_counts(), vec![18; 4]);
        assert_eq!(test.class_counts(), vec![7; 4]);

        let ds = multiclass([10, 10, 10, 70]);
        let (train, test) = ds.stratified_split(0.7, 42).unwrap();
        assert_eq!((train.len(), test.len()), (70, 30));
        assert_eq!(train.class_counts(), vec![7, 7, 7, 49]);
        assert!(train.samples().iter().all(|s| s.split == SplitTag::Train));
        assert!(test.samples().iter().all(|s| s.split == SplitTag::Test));
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let ds = multiclass([20, 20, 20, 20]);
        let a = ds.stratified_split(0.7, 7).unwrap();
        let b = ds.stratified_split(0.7, 7).unwrap();
        let c = ds.stratified_split(0.7, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn split_preconditions() {
        let ds = multiclass([5, 1, 5, 5]);
        assert!(matches!(
            ds.stratified_split(0.7, 1),
            Err(DataError::ClassTooSmall { label: Label::Cracked, count: 1 })
        ));
        let ds = multiclass([5, 5, 5, 5]);
        for bad in [0.0, 1.0, -0.5, f64::NAN] {
            assert!(matches!(ds.stratified_split(bad, 1), Err(DataError::InvalidFraction(_))));
        }
    }

    #[test]
    fn half_rounds_up() {
        assert_eq!(train_count(0.7, 5), 4);
        assert_eq!(train_count(0.7, 10), 7);
        assert_eq!(train_count(0.5, 3), 2);
        assert_eq!(train_count(0.7, 2), 1);
    }
}
