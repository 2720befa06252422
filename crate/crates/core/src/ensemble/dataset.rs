use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    feature_count: usize,
    class_count: usize,
    class_weights: Vec<f64>,
    feature_names: Vec<String>,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let feature_count = rows.first().map(Vec::len).ok_or(Error::EmptyDataset)?;
        let mut features = Vec::with_capacity(rows.len() * feature_count);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != feature_count {
                return Err(Error::InvalidDataset(format!(
                    "row {i} has {} values, expected {feature_count}",
                    row.len()
                )));
            }
            features.extend_from_slice(row);
        }
        Self::from_flat(features, labels, feature_count, class_count)
    }

    pub fn from_flat(features: Vec<f64>, labels: Vec<usize>, feature_count: usize, class_count: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if feature_count == 0 {
            return Err(Error::InvalidDataset("zero features".into()));
        }
        if features.len() != labels.len() * feature_count {
            return Err(Error::InvalidDataset(format!(
                "{} values for {} rows of {feature_count} features",
                features.len(),
                labels.len()
            )));
        }
        if class_count == 0 {
            return Err(Error::InvalidDataset("zero classes".into()));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(Error::InvalidDataset(format!(
                "label {l} of row {i} is not below class count {class_count}"
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                feature: pos % feature_count,
            });
        }
        Ok(Self {
            features,
            labels,
            feature_count,
            class_count,
            class_weights: vec![1.0; class_count],
            feature_names: (0..feature_count).map(|f| format!("f{f}")).collect(),
            class_names: (0..class_count).map(|c| c.to_string()).collect(),
        })
    }

    pub fn with_class_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.class_count {
            return Err(Error::InvalidDataset(format!(
                "{} class weights for {} classes",
                weights.len(),
                self.class_count
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidDataset("class weights must be positive".into()));
        }
        self.class_weights = weights;
        Ok(self)
    }

    /// Weights inversely proportional to class frequency, normalised to mean 1 over present classes.
    pub fn balanced_class_weights(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        let present = counts.iter().filter(|&&c| c > 0).count() as f64;
        let n = self.len() as f64;
        counts
            .iter()
            .map(|&c| if c == 0 { 1.0 } else { n / (present * c as f64) })
            .collect()
    }

    pub fn with_names(mut self, feature_names: Vec<String>, class_names: Vec<String>) -> Self {
        if feature_names.len() == self.feature_count {
            self.feature_names = feature_names;
        }
        if class_names.len() == self.class_count {
            self.class_names = class_names;
        }
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_count..(i + 1) * self.feature_count]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.feature_count)
    }

    pub fn value(&self, i: usize, feature: usize) -> f64 {
        self.features[i * self.feature_count + feature]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_weights(&self) -> &[f64] {
        &self.class_weights
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Copies the given rows into a new dataset sharing class metadata.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut features = Vec::with_capacity(indices.len() * self.feature_count);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Ok(Self {
            features,
            labels,
            feature_count: self.feature_count,
            class_count: self.class_count,
            class_weights: self.class_weights.clone(),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
        })
    }

    /// Seeded shuffle split; the first `train_fraction` of the permutation becomes the training set.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::InvalidParams(format!(
                "train fraction {train_fraction} outside (0, 1)"
            )));
        }
        if self.len() < 2 {
            return Err(Error::InvalidDataset("need at least two rows to split".into()));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = ((self.len() as f64 * train_fraction).round() as usize).clamp(1, self.len() - 1);
        let (train, test) = order.split_at(cut);
        Ok((self.subset(train)?, self.subset(test)?))
    }

    /// Reads a CSV with a header row; the last column is the label.
    ///
    /// String labels are mapped to class ids in first-appearance order.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file, &path.display().to_string())
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R, source: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 2 {
            return Err(Error::format(
                format!("{source}:1"),
                "need at least one feature column and a label column",
            ));
        }
        let feature_count = header.len() - 1;
        let feature_names: Vec<String> = header.iter().take(feature_count).map(str::to_string).collect();

        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut class_ids: HashMap<String, usize> = HashMap::new();
        let mut class_names = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let line = i + 2;
            let record = record?;
            if record.len() != header.len() {
                return Err(Error::format(
                    format!("{source}:{line}"),
                    format!("{} fields, expected {}", record.len(), header.len()),
                ));
            }
            for (f, field) in record.iter().take(feature_count).enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::format(
                        format!("{source}:{line}, column {}", feature_names[f]),
                        format!("cannot parse {field:?} as a number"),
                    )
                })?;
                if !v.is_finite() {
                    return Err(Error::format(
                        format!("{source}:{line}, column {}", feature_names[f]),
                        "non-finite feature value",
                    ));
                }
                features.push(v);
            }
            let label = &record[feature_count];
            let next = class_ids.len();
            let id = *class_ids.entry(label.to_string()).or_insert_with(|| {
                class_names.push(label.to_string());
                next
            });
            labels.push(id);
        }
        let class_count = class_names.len();
        Ok(
            Self::from_flat(features, labels, feature_count, class_count.max(1))?
                .with_names(feature_names, class_names),
        )
    }

    pub fn write_csv(&self, writer: impl std::io::Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push("label");
        wtr.write_record(&header)?;
        for (i, row) in self.rows().enumerate() {
            let mut fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            fields.push(self.class_names[self.labels[i]].clone());
            wtr.write_record(&fields)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_labels_follow_first_appearance() {
        let text = "a,b,class\n1,2,yes\n3,4,no\n5,6,yes\n";
        let ds = Dataset::from_csv_reader(text.as_bytes(), "t").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.feature_count(), 2);
        assert_eq!(ds.labels(), &[0, 1, 0]);
        assert_eq!(ds.class_names(), &["yes".to_string(), "no".to_string()]);
        assert_eq!(ds.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn csv_errors_carry_line_context() {
        let text = "a,b,class\n1,2,yes\n3,oops,no\n";
        let err = Dataset::from_csv_reader(text.as_bytes(), "t.csv").unwrap_err();
        assert!(err.to_string().contains("t.csv:3"), "{err}");

        let text = "a,b,class\n1,NaN,yes\n";
        let err = Dataset::from_csv_reader(text.as_bytes(), "t.csv").unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(Dataset::new(vec![], vec![], 2), Err(Error::EmptyDataset)));
        assert!(Dataset::new(vec![vec![1.0], vec![1.0, 2.0]], vec![0, 1], 2).is_err());
        assert!(Dataset::new(vec![vec![1.0]], vec![3], 2).is_err());
        assert!(matches!(
            Dataset::new(vec![vec![f64::INFINITY]], vec![0], 1),
            Err(Error::NonFinite { feature: 0 })
        ));
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let ds = Dataset::new(rows, vec![0; 10], 1).unwrap();
        let (a, b) = ds.split(0.7, 9).unwrap();
        let (c, _) = ds.split(0.7, 9).unwrap();
        assert_eq!(a, c);
        assert_eq!(a.len(), 7);
        assert_eq!(b.len(), 3);
        let mut all: Vec<f64> = a.rows().chain(b.rows()).map(|r| r[0]).collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..10).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn csv_round_trip() {
        let ds = Dataset::new(vec![vec![0.1, 2.5], vec![-3.0, 1e-7]], vec![1, 0], 2).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = Dataset::from_csv_reader(buf.as_slice(), "buf").unwrap();
        assert_eq!(back.row(0), ds.row(0));
        assert_eq!(back.row(1), ds.row(1));
        // class ids are remapped by first appearance: "1" then "0"
        assert_eq!(back.class_names()[back.label(0)], "1");
    }
}
