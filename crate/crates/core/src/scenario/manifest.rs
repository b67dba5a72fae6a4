//! Domain-labelled dataset manifests.
//!
//! One record per line, comma separated, with a required header:
//!
//! ```text
//! path,label,domain
//! clipart/aircraft/001.jpg,0,clipart
//! ```
//!
//! An optional fourth `split` column (`train` / `test`) pins the split of each
//! record. Without it every fifth record of each `(label, domain)` group, in
//! file order, is assigned to the test split.

use std::collections::{BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use super::dataset::{SampleSource, Split};
use super::ClassId;
use crate::error::{DiscoError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub path: String,
    pub label: ClassId,
    pub domain: String,
    pub split: Split,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

const TEST_EVERY: usize = 5;

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| DiscoError::io(path, e))?;
        Self::parse(file)
    }

    pub fn parse(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| DiscoError::Manifest {
                line: 1,
                message: e.to_string(),
            })?
            .iter()
            .map(str::to_string)
            .collect();
        let has_split = match header.as_slice() {
            [a, b, c] if a == "path" && b == "label" && c == "domain" => false,
            [a, b, c, d] if a == "path" && b == "label" && c == "domain" && d == "split" => true,
            _ => {
                return Err(DiscoError::Manifest {
                    line: 1,
                    message: format!(
                        "expected header `path,label,domain[,split]`, found `{}`",
                        header.join(",")
                    ),
                })
            }
        };

        let mut records = Vec::new();
        let mut group_counts: HashMap<(ClassId, String), usize> = HashMap::new();
        for (i, row) in rdr.records().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| DiscoError::Manifest {
                line,
                message: e.to_string(),
            })?;
            let field = |k: usize| row.get(k).unwrap_or("");
            let path = field(0).to_string();
            let label_text = field(1);
            if label_text.is_empty() {
                return Err(DiscoError::Manifest {
                    line,
                    message: "record has no label".into(),
                });
            }
            let label: ClassId = label_text.parse().map_err(|_| DiscoError::Manifest {
                line,
                message: format!("label `{label_text}` is not a class id"),
            })?;
            let domain = field(2).to_string();
            if domain.is_empty() {
                return Err(DiscoError::Manifest {
                    line,
                    message: "record has no domain".into(),
                });
            }
            let split = if has_split {
                match field(3) {
                    "train" => Split::Train,
                    "test" => Split::Test,
                    other => {
                        return Err(DiscoError::Manifest {
                            line,
                            message: format!("split must be train or test, found `{other}`"),
                        })
                    }
                }
            } else {
                let n = group_counts.entry((label, domain.clone())).or_insert(0);
                *n += 1;
                if (*n).is_multiple_of(TEST_EVERY) {
                    Split::Test
                } else {
                    Split::Train
                }
            };
            records.push(ManifestRecord {
                path,
                label,
                domain,
                split,
            });
        }
        Ok(DatasetManifest { records })
    }

    pub fn domains(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.domain.as_str()).collect()
    }

    pub fn labels(&self) -> BTreeSet<ClassId> {
        self.records.iter().map(|r| r.label).collect()
    }
}

impl SampleSource for DatasetManifest {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn label(&self, index: usize) -> ClassId {
        self.records[index].label
    }

    fn domain(&self, index: usize) -> &str {
        &self.records[index].domain
    }

    fn split(&self, index: usize) -> Split {
        self.records[index].split
    }
}
