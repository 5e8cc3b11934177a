//! Subjects, class labels and the JSON dataset manifest.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "MRI")]
    Mri,
    #[serde(rename = "CT")]
    Ct,
}

impl Modality {
    pub fn file_stem(self) -> &'static str {
        match self {
            Modality::Mri => "mri",
            Modality::Ct => "ct",
        }
    }
}

/// Diagnostic class: CN, MCI, mild (MLD) and moderate-or-severe (MOD) dementia.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    #[serde(rename = "CN")]
    Cn = 0,
    #[serde(rename = "MCI")]
    Mci = 1,
    #[serde(rename = "MLD")]
    Mld = 2,
    #[serde(rename = "MOD")]
    Mod = 3,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [ClassLabel::Cn, ClassLabel::Mci, ClassLabel::Mld, ClassLabel::Mod];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Cn => "CN",
            ClassLabel::Mci => "MCI",
            ClassLabel::Mld => "MLD",
            ClassLabel::Mod => "MOD",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Clinical Dementia Rating → class. 2 and 3 merge into MOD.
pub fn cdr_to_class(cdr: f64) -> Result<ClassLabel, DataError> {
    match cdr {
        c if c == 0.0 => Ok(ClassLabel::Cn),
        c if c == 0.5 => Ok(ClassLabel::Mci),
        c if c == 1.0 => Ok(ClassLabel::Mld),
        c if c == 2.0 || c == 3.0 => Ok(ClassLabel::Mod),
        other => Err(DataError::UnknownCdr(other)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scan {
    pub modality: Modality,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub cdr: f64,
    pub scans: Vec<Scan>,
}

impl Subject {
    pub fn class(&self) -> Result<ClassLabel, DataError> {
        cdr_to_class(self.cdr)
    }

    pub fn scan(&self, modality: Modality) -> Option<&Scan> {
        self.scans.iter().find(|s| s.modality == modality)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub subjects: Vec<Subject>,
}

impl Manifest {
    pub fn new(subjects: Vec<Subject>) -> Result<Self, DataError> {
        let m = Self { subjects };
        m.validate()?;
        Ok(m)
    }

    /// Unique ids, at least one scan each, known CDR values.
    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = BTreeSet::new();
        for s in &self.subjects {
            if !seen.insert(s.id.as_str()) {
                return Err(DataError::DuplicateSubject(s.id.clone()));
            }
            if s.scans.is_empty() {
                return Err(DataError::NoScans(s.id.clone()));
            }
            s.class()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn subject(&self, id: &str) -> Option<&Subject> {
        self.subjects.iter().find(|s| s.id == id)
    }

    /// Subset in the order of `ids` (unknown ids are skipped).
    pub fn select(&self, ids: &[String]) -> Manifest {
        Manifest {
            subjects: ids.iter().filter_map(|id| self.subject(id).cloned()).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let m: Manifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        fs::write(path, self.to_json() + "\n").map_err(|e| DataError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::from_json(&text)
    }
}
