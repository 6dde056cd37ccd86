use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub image_features: Vec<f64>,
    pub prompt: String,
    pub group_id: String,
    pub group_title: String,
    pub target: f64,
    pub target2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetHeader {
    pub version: u32,
    pub d_input: usize,
    pub score_min: f64,
    pub score_max: f64,
    pub has_target2: bool,
}

/// Which regression target a run reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSelect {
    #[default]
    Primary,
    Secondary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    pub fn new(header: DatasetHeader, records: Vec<SampleRecord>) -> Result<Self, DataError> {
        let ds = Self { header, records };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Line numbers in errors count the header as line 1.
    pub fn validate(&self) -> Result<(), DataError> {
        let h = &self.header;
        if !(h.score_min < h.score_max) {
            return Err(DataError::Header(format!(
                "score range [{}, {}]",
                h.score_min, h.score_max
            )));
        }
        let mut titles: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            let line = i + 2;
            if r.image_features.len() != h.d_input {
                return Err(DataError::FeatureLength {
                    line,
                    expected: h.d_input,
                    got: r.image_features.len(),
                });
            }
            if r.target2.is_some() != h.has_target2 {
                return Err(DataError::MalformedLine {
                    line,
                    msg: "second target presence disagrees with header".into(),
                });
            }
            for v in std::iter::once(r.target).chain(r.target2) {
                if !(h.score_min..=h.score_max).contains(&v) {
                    return Err(DataError::TargetOutOfRange {
                        line,
                        value: v,
                        min: h.score_min,
                        max: h.score_max,
                    });
                }
            }
            if let Some(prev) = titles.insert(&r.group_id, &r.group_title) {
                if prev != r.group_title {
                    return Err(DataError::InconsistentGroupTitle(r.group_id.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn targets(&self, select: TargetSelect) -> Result<Vec<f64>, DataError> {
        self.records
            .iter()
            .map(|r| match select {
                TargetSelect::Primary => Ok(r.target),
                TargetSelect::Secondary => r.target2.ok_or(DataError::NoSecondTarget),
            })
            .collect()
    }

    pub fn groups(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.group_id.as_str()).collect()
    }

    pub fn prompts(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.prompt.as_str())
    }

    /// Distinct group ids in first-seen order.
    pub fn group_order(&self) -> Vec<&str> {
        let mut seen = std::collections::HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.group_id.as_str()))
            .map(|r| r.group_id.as_str())
            .collect()
    }

    /// Concatenates two datasets that share a header.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset, DataError> {
        if self.header != other.header {
            return Err(DataError::Header(
                "cannot concatenate datasets with different headers".into(),
            ));
        }
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        Ok(Dataset {
            header: self.header,
            records,
        })
    }

    /// Splits at `at`, the inverse of [`Dataset::concat`].
    pub fn split_at(&self, at: usize) -> (Dataset, Dataset) {
        let (a, b) = self.records.split_at(at);
        (
            Dataset {
                header: self.header,
                records: a.to_vec(),
            },
            Dataset {
                header: self.header,
                records: b.to_vec(),
            },
        )
    }
}
