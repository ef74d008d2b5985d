//! Per-subject multivariate functional observations on individual domains `[0, T_i]`.

use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};

/// One variable's observations for one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Self {
        Self { times, values }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub domain_length: f64,
    /// One series per dataset variable, in the dataset's variable order.
    pub series: Vec<Series>,
}

/// Validated collection of subjects sharing the same set of variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalDataset {
    variables: Vec<String>,
    subjects: Vec<SubjectRecord>,
}

impl FunctionalDataset {
    pub fn new(variables: Vec<String>, subjects: Vec<SubjectRecord>) -> Result<Self> {
        if variables.is_empty() {
            return Err(argument("dataset has no variables"));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &subjects {
            if !seen.insert(s.subject_id.as_str()) {
                return Err(argument(format!("duplicate subject id {}", s.subject_id)));
            }
            validate_subject(s, variables.len())?;
        }
        Ok(Self {
            variables,
            subjects,
        })
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn domain_lengths(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| s.domain_length).collect()
    }

    pub fn variable_index(&self, name: &str) -> Result<usize> {
        self.variables
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| Error::Lookup(format!("unknown variable {name}")))
    }

    pub fn subject_index(&self, id: &str) -> Result<usize> {
        self.subjects
            .iter()
            .position(|s| s.subject_id == id)
            .ok_or_else(|| Error::Lookup(format!("unknown subject {id}")))
    }

    /// All series of one variable, in subject order.
    pub fn variable_series(&self, variable: usize) -> impl Iterator<Item = &Series> + '_ {
        self.subjects.iter().map(move |s| &s.series[variable])
    }

    /// Subset of subjects by index, preserving the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let subjects = indices
            .iter()
            .map(|&i| {
                self.subjects
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Lookup(format!("subject index {i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            variables: self.variables.clone(),
            subjects,
        })
    }
}

fn validate_subject(s: &SubjectRecord, n_variables: usize) -> Result<()> {
    let id = &s.subject_id;
    if !(s.domain_length > 0.0) || !s.domain_length.is_finite() {
        return Err(argument(format!(
            "subject {id}: invalid domain length {}",
            s.domain_length
        )));
    }
    if s.series.len() != n_variables {
        return Err(argument(format!(
            "subject {id}: {} series for {n_variables} variables",
            s.series.len()
        )));
    }
    let tol = 1e-9 * s.domain_length.max(1.0);
    for (v, series) in s.series.iter().enumerate() {
        if series.times.len() != series.values.len() {
            return Err(argument(format!(
                "subject {id} variable {v}: length mismatch"
            )));
        }
        if series.len() < 2 {
            return Err(argument(format!(
                "subject {id} variable {v}: at least 2 observations required"
            )));
        }
        if series.values.iter().any(|x| !x.is_finite()) {
            return Err(argument(format!(
                "subject {id} variable {v}: non-finite value"
            )));
        }
        if series.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(argument(format!(
                "subject {id} variable {v}: times must be strictly increasing"
            )));
        }
        let (first, last) = (series.times[0], series.times[series.len() - 1]);
        if !(first >= -tol) || !(last <= s.domain_length + tol) {
            return Err(argument(format!(
                "subject {id} variable {v}: times must lie in [0, {}]",
                s.domain_length
            )));
        }
    }
    Ok(())
}
