//! Datasets, synthetic Gaussian mixtures, CSV ingestion, and group sampling.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::aggregate::{AggregateLabel, Task, TaskKind};
use crate::error::{Error, Result};
use crate::rng::{self, streams};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    /// 0-based class index.
    pub label: usize,
}

/// Fully labeled examples with a fixed feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<LabeledExample>,
    d: usize,
    /// `class_names[j]` is the external name of class `j`.
    class_names: Vec<String>,
    feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(examples: Vec<LabeledExample>, class_names: Vec<String>) -> Result<Self> {
        let d = examples.first().ok_or(Error::EmptyDataset)?.features.len();
        let k = class_names.len();
        for ex in &examples {
            if ex.features.len() != d {
                return Err(Error::Dimension { expected: d, got: ex.features.len() });
            }
            if ex.label >= k {
                return Err(Error::LabelOutOfRange { label: ex.label, k });
            }
        }
        let feature_names = (0..d).map(|i| format!("x{i}")).collect();
        Ok(Dataset { examples, d, class_names, feature_names })
    }

    /// Dataset whose classes are named `"1"..="k"`.
    pub fn with_numbered_classes(examples: Vec<LabeledExample>, k: usize) -> Result<Self> {
        Dataset::new(examples, (1..=k).map(|j| j.to_string()).collect())
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// Relabels as a binary problem: `1` for `positive`, `0` otherwise.
    pub fn binarize(&self, positive: usize) -> Result<Dataset> {
        if positive >= self.num_classes() {
            return Err(Error::LabelOutOfRange { label: positive, k: self.num_classes() });
        }
        let examples = self
            .examples
            .iter()
            .map(|e| LabeledExample { features: e.features.clone(), label: usize::from(e.label == positive) })
            .collect();
        let names = vec![format!("not-{}", self.class_names[positive]), self.class_names[positive].clone()];
        let mut out = Dataset::new(examples, names)?;
        out.feature_names = self.feature_names.clone();
        Ok(out)
    }

    /// Random, unstratified split into consecutive parts with the given
    /// fractions. The last part takes the remainder.
    pub fn split(&self, fractions: &[f64], seed: u64) -> Result<Vec<Dataset>> {
        let total: f64 = fractions.iter().sum();
        if fractions.is_empty() || fractions.iter().any(|&f| f < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("split fractions {fractions:?} must be nonnegative and sum to 1")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng::seeded(seed, streams::SPLIT));
        let mut parts = Vec::with_capacity(fractions.len());
        let mut start = 0;
        for (p, &f) in fractions.iter().enumerate() {
            let end = if p + 1 == fractions.len() {
                self.len()
            } else {
                (start + (f * self.len() as f64).round() as usize).min(self.len())
            };
            let examples: Vec<_> = idx[start..end].iter().map(|&i| self.examples[i].clone()).collect();
            if examples.is_empty() {
                return Err(Error::EmptyDataset);
            }
            let mut part = Dataset::new(examples, self.class_names.clone())?;
            part.feature_names = self.feature_names.clone();
            parts.push(part);
            start = end;
        }
        Ok(parts)
    }

    /// Writes a CSV with a header row: feature columns, then `label_column`
    /// holding class names.
    pub fn save_csv(&self, path: impl AsRef<Path>, label_column: &str) -> Result<()> {
        let path = path.as_ref();
        let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(label_column);
        w.write_record(&header).map_err(csv_err)?;
        for ex in &self.examples {
            // `{}` on f64 prints the shortest string that parses back exactly.
            let mut row: Vec<String> = ex.features.iter().map(|v| format!("{v}")).collect();
            row.push(self.class_names[ex.label].clone());
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }
}

/// Loads a CSV with a header row. Every column except `label_column` must be
/// a finite number. Labels are re-indexed by first appearance; the original
/// names are kept in [`Dataset::class_names`].
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    load_csv_with_classes(path, label_column, &[])
}

/// Like [`load_csv`], but classes listed in `known_classes` keep their given
/// indices; unseen names are appended in first-appearance order. Use this to
/// load a test split with the class mapping of the training split.
pub fn load_csv_with_classes(path: impl AsRef<Path>, label_column: &str, known_classes: &[String]) -> Result<Dataset> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    if !path.exists() {
        return Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        });
    }
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingLabelColumn(label_column.to_string()))?;

    let mut class_names: Vec<String> = known_classes.to_vec();
    let mut class_index: HashMap<String, usize> =
        class_names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
    let mut examples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let mut features = Vec::with_capacity(record.len().saturating_sub(1));
        let mut label = None;
        for (col, field) in record.iter().enumerate() {
            if col == label_idx {
                let name = field.trim().to_string();
                let next = class_names.len();
                let j = *class_index.entry(name.clone()).or_insert_with(|| {
                    class_names.push(name);
                    next
                });
                label = Some(j);
                continue;
            }
            let value = field.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                Error::NonNumericFeature { column: headers[col].to_string(), row: row + 1, value: field.to_string() }
            })?;
            features.push(value);
        }
        let label = label.ok_or_else(|| Error::MissingLabelColumn(label_column.to_string()))?;
        examples.push(LabeledExample { features, label });
    }
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut ds = Dataset::new(examples, class_names)?;
    ds.feature_names =
        headers.iter().enumerate().filter(|&(i, _)| i != label_idx).map(|(_, h)| h.to_string()).collect();
    Ok(ds)
}

/// Isotropic Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub means: Vec<Vec<f64>>,
    /// Per-class standard deviation.
    pub spreads: Vec<f64>,
    pub prior: Vec<f64>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Equal priors, shared spread.
    pub fn balanced(means: Vec<Vec<f64>>, spread: f64, seed: u64) -> Self {
        let k = means.len();
        SyntheticSpec { spreads: vec![spread; k], prior: vec![1.0 / k as f64; k], means, seed }
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn d(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 || self.d() == 0 {
            return Err(Error::InvalidSpec("need at least one class and one dimension".into()));
        }
        if self.means.iter().any(|m| m.len() != self.d() || m.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidSpec("means must be finite with a common dimension".into()));
        }
        if self.spreads.len() != k || self.spreads.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidSpec("spreads must be positive, one per class".into()));
        }
        let total: f64 = self.prior.iter().sum();
        if self.prior.len() != k || self.prior.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSpec(format!("prior {:?} is not on the simplex", self.prior)));
        }
        Ok(())
    }
}

/// Draws `n` i.i.d. examples from the mixture. Deterministic in `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec, n: usize) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = rng::seeded(spec.seed, streams::SYNTHETIC);
    let classes = WeightedIndex::new(&spec.prior).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let examples = (0..n)
        .map(|_| {
            let label = classes.sample(&mut rng);
            let noise = Normal::new(0.0, spec.spreads[label]).expect("spread validated");
            let features = spec.means[label].iter().map(|&mu| mu + noise.sample(&mut rng)).collect();
            LabeledExample { features, label }
        })
        .collect();
    Dataset::with_numbered_classes(examples, spec.k())
}

/// A group of instances and its aggregate label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateObservation {
    pub xs: Vec<Vec<f64>>,
    pub z: AggregateLabel,
    /// Indices of the members in the source dataset, when sampled from one.
    #[serde(skip)]
    pub members: Option<Vec<usize>>,
}

impl AggregateObservation {
    pub fn new(xs: Vec<Vec<f64>>, z: AggregateLabel) -> Self {
        AggregateObservation { xs, z, members: None }
    }

    pub fn m(&self) -> usize {
        self.xs.len()
    }
}

/// Samples `n_groups` groups, each of `task.m()` members drawn uniformly with
/// replacement, labeled by the task's aggregate function applied to the true
/// labels. Deterministic in `seed`.
pub fn sample_groups(dataset: &Dataset, task: &Task, n_groups: usize, seed: u64) -> Result<Vec<AggregateObservation>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.num_classes() > task.k() {
        return Err(Error::InvalidTask(format!(
            "dataset has {} classes but the task has k = {}",
            dataset.num_classes(),
            task.k()
        )));
    }
    let mut rng = rng::seeded(seed, streams::GROUPS);
    let n = dataset.len();
    let mut labels = vec![0; task.m()];
    let groups = (0..n_groups)
        .map(|_| {
            let members: Vec<usize> = (0..task.m()).map(|_| rng.random_range(0..n)).collect();
            for (slot, &i) in labels.iter_mut().zip(&members) {
                *slot = dataset.examples[i].label;
            }
            let z = task.aggregate_unchecked(&labels);
            let xs = members.iter().map(|&i| dataset.examples[i].features.clone()).collect();
            AggregateObservation { xs, z, members: Some(members) }
        })
        .collect();
    Ok(groups)
}

#[derive(Serialize, Deserialize)]
struct ObservationLine<'a> {
    xs: std::borrow::Cow<'a, [Vec<f64>]>,
    z: std::borrow::Cow<'a, AggregateLabel>,
    task: TaskKind,
}

/// Writes observations as JSON lines: `{"xs": [[..],..], "z": .., "task": ".."}`.
pub fn write_observations(path: impl AsRef<Path>, task: &Task, observations: &[AggregateObservation]) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for obs in observations {
        let line = ObservationLine { xs: (&obs.xs[..]).into(), z: std::borrow::Cow::Borrowed(&obs.z), task: task.kind() };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Reads JSON-lines observations, checking each line against `task`.
pub fn read_observations(path: impl AsRef<Path>, task: &Task) -> Result<Vec<AggregateObservation>> {
    let path = path.as_ref();
    let io_err = |source| Error::Io { path: path.to_path_buf(), source };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    let mut d = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), line: lineno + 1, message };
        let rec: ObservationLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if rec.task != task.kind() {
            return Err(parse_err(format!("observation is for task {}, expected {}", rec.task, task.kind())));
        }
        if rec.xs.len() != task.m() {
            return Err(parse_err(format!("group has {} instances, expected m = {}", rec.xs.len(), task.m())));
        }
        task.check_label(&rec.z).map_err(|e| parse_err(e.to_string()))?;
        for x in rec.xs.iter() {
            let expected = *d.get_or_insert(x.len());
            if x.len() != expected {
                return Err(parse_err(format!("feature dimension {} differs from {expected}", x.len())));
            }
        }
        out.push(AggregateObservation::new(rec.xs.into_owned(), rec.z.into_owned()));
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_class() -> SyntheticSpec {
        SyntheticSpec::balanced(vec![vec![0.0, 2.0], vec![-2.0, -1.0], vec![2.0, -1.0]], 1.0, 7)
    }

    #[test]
    fn single_class_mixture() {
        let spec = SyntheticSpec::balanced(vec![vec![4.0, -1.0]], 0.3, 1);
        let ds = generate_synthetic(&spec, 5).unwrap();
        assert_eq!(ds.len(), 5);
        assert!(ds.examples().iter().all(|e| e.label == 0));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(&three_class(), 100).unwrap();
        let b = generate_synthetic(&three_class(), 100).unwrap();
        assert_eq!(a, b);
        for (x, y) in a.examples().iter().zip(b.examples()) {
            for (u, v) in x.features.iter().zip(&y.features) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = three_class();
        s.prior = vec![0.5, 0.5, 0.5];
        assert!(matches!(generate_synthetic(&s, 3), Err(Error::InvalidSpec(_))));
        let mut s = three_class();
        s.spreads[1] = 0.0;
        assert!(matches!(generate_synthetic(&s, 3), Err(Error::InvalidSpec(_))));
        assert!(matches!(generate_synthetic(&three_class(), 0), Err(Error::EmptyDataset)));
    }

    #[test]
    fn separated_mixture_is_linearly_classifiable() {
        let spec = SyntheticSpec::balanced(vec![vec![-3.0, 0.0], vec![3.0, 0.0]], 0.5, 11);
        // Independent Monte-Carlo estimate of the Bayes rule sign(x0) on 1e5 draws.
        let big = generate_synthetic(&SyntheticSpec { seed: 12, ..spec.clone() }, 100_000).unwrap();
        let bayes = |ds: &Dataset| {
            ds.examples().iter().filter(|e| usize::from(e.features[0] > 0.0) == e.label).count() as f64
                / ds.len() as f64
        };
        assert!(bayes(&big) > 0.999);
        let ds = generate_synthetic(&spec, 1000).unwrap();
        assert!(bayes(&ds) > 0.99);
    }

    #[test]
    fn csv_reindexes_by_first_appearance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        std::fs::write(&path, "f1,f2,cls\n1.0,2.0,a\n3,4,b\n5,6e-1,a\n").unwrap();
        let ds = load_csv(&path, "cls").unwrap();
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.labels(), vec![0, 1, 0]);
        assert_eq!(ds.class_names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(ds.examples()[2].features, vec![5.0, 0.6]);
    }

    #[test]
    fn csv_rejects_nan_and_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        std::fs::write(&path, "f1,cls\nNaN,a\n").unwrap();
        let err = load_csv(&path, "cls").unwrap_err();
        assert!(err.to_string().contains("non-numeric feature"), "{err}");
        std::fs::write(&path, "f1,cls\nabc,a\n").unwrap();
        assert!(matches!(load_csv(&path, "cls"), Err(Error::NonNumericFeature { .. })));
        std::fs::write(&path, "f1,cls\n").unwrap();
        assert!(matches!(load_csv(&path, "cls"), Err(Error::EmptyDataset)));
        assert!(matches!(load_csv(dir.path().join("missing.csv"), "cls"), Err(Error::Io { .. })));
        std::fs::write(&path, "f1,cls\n1,a\n").unwrap();
        assert!(matches!(load_csv(&path, "label"), Err(Error::MissingLabelColumn(_))));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.csv");
        let ds = generate_synthetic(&three_class(), 200).unwrap();
        ds.save_csv(&path, "label").unwrap();
        let back = load_csv_with_classes(&path, "label", ds.class_names()).unwrap();
        assert_eq!(back.labels(), ds.labels());
        for (a, b) in ds.examples().iter().zip(back.examples()) {
            assert!(a.features.iter().zip(&b.features).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }

    #[test]
    fn single_class_groups_are_uniform() {
        let spec = SyntheticSpec::balanced(vec![vec![0.0]], 1.0, 3);
        let ds = generate_synthetic(&spec, 20).unwrap();
        let pair = Task::new(TaskKind::Pairwise, 2, 3).unwrap();
        assert!(sample_groups(&ds, &pair, 50, 1).unwrap().iter().all(|g| g.z == true.into()));
        let mil = Task::new(TaskKind::Mil, 4, 2).unwrap();
        let positive = ds.binarize(0).unwrap();
        assert!(sample_groups(&positive, &mil, 50, 1).unwrap().iter().all(|g| g.z == true.into()));
    }

    #[test]
    fn llp_balanced_pair_frequency() {
        let ds = Dataset::with_numbered_classes(
            vec![
                LabeledExample { features: vec![0.0], label: 0 },
                LabeledExample { features: vec![1.0], label: 1 },
            ],
            2,
        )
        .unwrap();
        let task = Task::new(TaskKind::Llp, 2, 2).unwrap();
        let groups = sample_groups(&ds, &task, 10_000, 5).unwrap();
        assert!(groups.iter().all(|g| g.z.as_counts().unwrap().iter().sum::<usize>() == 2));
        let mixed = groups.iter().filter(|g| g.z == vec![1, 1].into()).count() as f64 / 1e4;
        // exact probability 2 * 1/2 * 1/2
        assert!((mixed - 0.5).abs() < 0.02, "{mixed}");
    }

    #[test]
    fn sampled_labels_match_members() {
        let ds = generate_synthetic(&three_class(), 60).unwrap();
        for kind in [TaskKind::Pairwise, TaskKind::Triplet, TaskKind::Llp, TaskKind::Rank, TaskKind::OrdinalTriplet] {
            let task = Task::with_default_m(kind, 4, 3).unwrap();
            let a = sample_groups(&ds, &task, 100, 9).unwrap();
            assert_eq!(a, sample_groups(&ds, &task, 100, 9).unwrap());
            for g in &a {
                let members = g.members.as_ref().unwrap();
                let labels: Vec<usize> = members.iter().map(|&i| ds.examples()[i].label).collect();
                assert_eq!(task.aggregate_label(&labels).unwrap(), g.z);
            }
        }
    }

    #[test]
    fn observations_round_trip_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.jsonl");
        let ds = generate_synthetic(&three_class(), 30).unwrap();
        let task = Task::new(TaskKind::Llp, 3, 3).unwrap();
        let groups = sample_groups(&ds, &task, 10, 2).unwrap();
        write_observations(&path, &task, &groups).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().next().unwrap().contains("\"task\":\"llp\""));
        let back = read_observations(&path, &task).unwrap();
        assert_eq!(back.len(), 10);
        for (a, b) in groups.iter().zip(&back) {
            assert_eq!(a.xs, b.xs);
            assert_eq!(a.z, b.z);
        }
        let wrong = Task::new(TaskKind::Pairwise, 2, 3).unwrap();
        assert!(matches!(read_observations(&path, &wrong), Err(Error::Parse { .. })));
    }
}
