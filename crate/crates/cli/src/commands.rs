use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use aggclass::aggregate::{Task, TaskKind};
use aggclass::data::{
    generate_synthetic, load_csv_with_classes, read_observations, sample_groups, write_observations, AggregateObservation,
    Dataset,
};
use aggclass::eval::{self, group_accuracy_mil, EvalReport};
use aggclass::model::{Checkpoint, Model};
use aggclass::posterior::{brute_force_posterior, posterior};
use aggclass::train::{self, Validation};
use aggclass::verify::{self, Suite, SuiteReport};
use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{DataSource, ExperimentConfig, FitOn};
use crate::UsageError;

pub const LABEL_COLUMN: &str = "label";

/// Sidecar written next to dataset and observation files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    pub config_hash: String,
    pub class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    /// Index of the positive class in the original labels, for bags.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive: Option<usize>,
    #[serde(default)]
    pub counts: serde_json::Value,
}

impl Meta {
    fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn synth(cfg: &ExperimentConfig) -> Result<()> {
    let DataSource::Synthetic { n, split, .. } = &cfg.data else {
        return Err(UsageError("synth needs a synthetic data source".into()).into());
    };
    let spec = cfg.synthetic_spec();
    let data = generate_synthetic(&spec, *n)?;
    let parts = data.split(split, cfg.seed)?;
    let dir = cfg.output_dir();
    ensure_dir(&dir)?;
    for (part, name) in parts.iter().zip(["train", "val", "test"]) {
        part.save_csv(dir.join(format!("{name}.csv")), LABEL_COLUMN)?;
    }
    let meta = Meta {
        config_hash: cfg.hash(),
        class_names: data.class_names().to_vec(),
        task: None,
        positive: None,
        counts: json!({"train": parts[0].len(), "val": parts[1].len(), "test": parts[2].len()}),
    };
    meta.save(&dir.join("data.meta.json"))?;
    eprintln!("wrote {} points to {}", n, dir.display());
    Ok(())
}

/// Labeled splits and their shared class names.
struct Splits {
    train: Option<Dataset>,
    val: Option<Dataset>,
    test: Option<Dataset>,
    class_names: Vec<String>,
}

fn split_paths(cfg: &ExperimentConfig, dir: &Path) -> (PathBuf, Option<PathBuf>, Option<PathBuf>, String) {
    match &cfg.data {
        DataSource::Csv { train, val, test, label_column } => (train.clone(), val.clone(), test.clone(), label_column.clone()),
        DataSource::Synthetic { .. } => {
            (dir.join("train.csv"), Some(dir.join("val.csv")), Some(dir.join("test.csv")), LABEL_COLUMN.to_string())
        }
    }
}

fn load_splits(cfg: &ExperimentConfig, dir: &Path, known: &[String]) -> Result<Splits> {
    let (train_path, val_path, test_path, label) = split_paths(cfg, dir);
    let mut classes = known.to_vec();
    if classes.is_empty() {
        let meta_path = dir.join("data.meta.json");
        if meta_path.exists() {
            classes = Meta::load(&meta_path)?.class_names;
        }
    }
    let mut load = |path: &Path| -> Result<Dataset> {
        let ds = load_csv_with_classes(path, &label, &classes)?;
        classes = ds.class_names().to_vec();
        Ok(ds)
    };
    let train = if train_path.exists() || known.is_empty() { Some(load(&train_path)?) } else { None };
    let val = match val_path {
        Some(p) if p.exists() => Some(load(&p)?),
        _ => None,
    };
    let test = match test_path {
        Some(p) if p.exists() => Some(load(&p)?),
        _ => None,
    };
    let class_names = classes.clone();
    let pad = |d: Option<Dataset>| -> Result<Option<Dataset>> {
        d.map(|d| Dataset::new(d.examples().to_vec(), class_names.clone())).transpose().map_err(Into::into)
    };
    Ok(Splits { train: pad(train)?, val: pad(val)?, test: pad(test)?, class_names: classes })
}

fn positive_index(cfg: &ExperimentConfig, class_names: &[String]) -> Result<usize> {
    match &cfg.positive_class {
        Some(name) => class_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| UsageError(format!("positive class {name:?} not among {class_names:?}")).into()),
        None if class_names.len() == 2 => Ok(1),
        None => Err(UsageError(format!(
            "bags need positive_class with {} classes {class_names:?}",
            class_names.len()
        ))
        .into()),
    }
}

fn prepare(data: Dataset, positive: Option<usize>) -> Result<Dataset> {
    match positive {
        Some(p) => Ok(data.binarize(p)?),
        None => Ok(data),
    }
}

pub fn aggregate(cfg: &ExperimentConfig, input: Option<&Path>, output: Option<&Path>) -> Result<()> {
    let dir = cfg.output_dir();
    ensure_dir(&dir)?;
    let splits = match input {
        Some(path) => {
            let label = match &cfg.data {
                DataSource::Csv { label_column, .. } => label_column.clone(),
                DataSource::Synthetic { .. } => LABEL_COLUMN.to_string(),
            };
            let ds = load_csv_with_classes(path, &label, &[])?;
            let class_names = ds.class_names().to_vec();
            Splits { train: Some(ds), val: None, test: None, class_names }
        }
        None => load_splits(cfg, &dir, &[])?,
    };
    let positive = (cfg.task == TaskKind::Mil).then(|| positive_index(cfg, &splits.class_names)).transpose()?;
    let k = if positive.is_some() { 2 } else { splits.class_names.len() };
    let task = cfg.task_for(k)?;

    let mut counts = serde_json::Map::new();
    let jobs = [
        ("train", splits.train, cfg.n_groups, 1u64),
        ("val", splits.val, cfg.val_groups, 2),
        ("test", splits.test, cfg.test_groups, 3),
    ];
    let mut out_dir = dir.clone();
    for (name, data, n, offset) in jobs {
        let Some(data) = data else { continue };
        if n == 0 {
            continue;
        }
        let data = prepare(data, positive)?;
        let groups = sample_groups(&data, &task, n, cfg.seed.wrapping_add(offset))?;
        let path = match (name, output) {
            ("train", Some(p)) => p.to_path_buf(),
            _ => dir.join(format!("{name}.groups.jsonl")),
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            ensure_dir(parent)?;
            if name == "train" {
                out_dir = parent.to_path_buf();
            }
        }
        write_observations(&path, &task, &groups)?;
        counts.insert(name.into(), json!(groups.len()));
        eprintln!("wrote {} {} groups to {}", groups.len(), task.kind(), path.display());
    }
    let meta = Meta {
        config_hash: cfg.hash(),
        class_names: splits.class_names,
        task: Some(task),
        positive,
        counts: serde_json::Value::Object(counts),
    };
    meta.save(&out_dir.join("groups.meta.json"))
}

fn groups_meta(observations: &Path) -> Result<Option<Meta>> {
    let path = observations.parent().unwrap_or(Path::new(".")).join("groups.meta.json");
    if path.exists() {
        Ok(Some(Meta::load(&path)?))
    } else {
        Ok(None)
    }
}

fn resolve_task(cfg: &ExperimentConfig, meta: Option<&Meta>) -> Result<Task> {
    match (meta.and_then(|m| m.task), cfg.k) {
        (Some(t), None) if t.kind() == cfg.task => Ok(t),
        (Some(t), None) => Err(UsageError(format!("observations are for task {}, config says {}", t.kind(), cfg.task)).into()),
        (_, Some(k)) => cfg.task_for(k),
        (None, None) => Err(UsageError("no groups.meta.json next to the observations; set k in the config".into()).into()),
    }
}

pub fn train(cfg: &ExperimentConfig, observations: Option<&Path>, validation: Option<&Path>) -> Result<()> {
    let dir = cfg.output_dir();
    let obs_path = observations.map(Path::to_path_buf).unwrap_or_else(|| dir.join("train.groups.jsonl"));
    if !obs_path.exists() {
        bail!("observation file not found: {}", obs_path.display());
    }
    let meta = groups_meta(&obs_path)?;
    let task = resolve_task(cfg, meta.as_ref())?;
    let train_config = cfg.train_config().map_err(|e| UsageError(e.to_string()))?;
    let groups = read_observations(&obs_path, &task)?;

    let val_path = validation.map(Path::to_path_buf).or_else(|| {
        let p = obs_path.parent().unwrap_or(Path::new(".")).join("val.groups.jsonl");
        p.exists().then_some(p)
    });
    let validation = match &val_path {
        Some(p) => Validation::Groups(read_observations(p, &task)?),
        None => Validation::FromConfig,
    };

    let d = groups[0].xs[0].len();
    let arch = cfg.architecture(d, task.k())?;
    let model = Model::new(arch, cfg.head()?, cfg.seed);
    let start = Instant::now();
    let outcome = train::train_with_validation(&groups, task, model, &train_config, validation)?;
    let hash = cfg.hash();

    ensure_dir(&dir)?;
    let metrics_path = dir.join("metrics.jsonl");
    let mut metrics = fs::File::create(&metrics_path).with_context(|| format!("writing {}", metrics_path.display()))?;
    for record in &outcome.log {
        let mut line = serde_json::to_value(record)?;
        line["config_hash"] = json!(hash);
        writeln!(metrics, "{}", serde_json::to_string(&line)?)?;
    }

    let mut ck = outcome.model.to_checkpoint();
    ck.metadata = json!({
        "config_hash": hash,
        "task": task,
        "class_names": meta.as_ref().map(|m| m.class_names.clone()),
        "positive": meta.as_ref().and_then(|m| m.positive),
        "best_epoch": outcome.best_epoch,
        "train": train_config,
    });
    let model_path = dir.join("model.json");
    ck.save(&model_path)?;
    eprintln!(
        "trained {} epochs in {:.1}s, best epoch {}; wrote {} and {}",
        train_config.epochs,
        start.elapsed().as_secs_f64(),
        outcome.best_epoch,
        model_path.display(),
        metrics_path.display()
    );
    Ok(())
}

pub struct EvalArgs<'a> {
    pub checkpoint: Option<&'a Path>,
    pub test: Option<&'a Path>,
    pub fit: Option<&'a Path>,
    pub groups: Option<&'a Path>,
}

pub fn eval(cfg: &ExperimentConfig, args: EvalArgs<'_>) -> Result<EvalReport> {
    let dir = cfg.output_dir();
    let ck_path = args.checkpoint.map(Path::to_path_buf).unwrap_or_else(|| dir.join("model.json"));
    let ck = Checkpoint::load(&ck_path)?;
    let model = Model::from_checkpoint(&ck)?;
    let task: Task = serde_json::from_value(ck.metadata["task"].clone())
        .map_err(|_| anyhow!("checkpoint {} has no task metadata", ck_path.display()))?;
    let class_names: Vec<String> = serde_json::from_value(ck.metadata["class_names"].clone()).unwrap_or_default();
    let positive: Option<usize> = serde_json::from_value(ck.metadata["positive"].clone()).unwrap_or(None);

    let label = match &cfg.data {
        DataSource::Csv { label_column, .. } => label_column.clone(),
        DataSource::Synthetic { .. } => LABEL_COLUMN.to_string(),
    };
    let load = |path: &Path| -> Result<Dataset> { prepare(load_csv_with_classes(path, &label, &class_names)?, positive) };
    let (test, fit) = match args.test {
        Some(p) => (load(p)?, args.fit.map(load).transpose()?),
        None => {
            let splits = load_splits(cfg, &dir, &class_names)?;
            let test = splits.test.ok_or_else(|| anyhow!("no test split found under {}", dir.display()))?;
            let fit = match args.fit {
                Some(p) => Some(load(p)?),
                None => splits.val.map(|v| prepare(v, positive)).transpose()?,
            };
            (prepare(test, positive)?, fit)
        }
    };
    let fit = match (cfg.fit_permutation_on, fit) {
        (FitOn::Validation, Some(f)) => f,
        (FitOn::Validation, None) => {
            eprintln!("no validation split; fitting the class permutation on test");
            test.clone()
        }
        (FitOn::Test, _) => test.clone(),
    };
    let mut report = eval::evaluate(&model, &test, &fit)?;
    if task.kind() == TaskKind::Mil {
        let groups_path = args.groups.map(Path::to_path_buf).unwrap_or_else(|| dir.join("test.groups.jsonl"));
        let bags: Vec<AggregateObservation> = read_observations(&groups_path, &task)?;
        report.group_accuracy = Some(group_accuracy_mil(&model, &bags, cfg.bag_rule)?);
    }
    report.config_hash = ck.metadata["config_hash"].as_str().map(String::from);
    ensure_dir(&dir)?;
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

pub fn verify(suite: Suite, seed: u64) -> Result<Vec<SuiteReport>> {
    Ok(verify::run(suite, seed)?)
}

#[derive(Debug, Serialize)]
pub struct BenchRecord {
    pub name: String,
    pub iterations: usize,
    pub seconds: f64,
    pub micros_per_iteration: f64,
}

fn time(name: String, iterations: usize, mut f: impl FnMut() -> Result<()>) -> Result<BenchRecord> {
    let start = Instant::now();
    for _ in 0..iterations {
        f()?;
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok(BenchRecord { name, iterations, seconds, micros_per_iteration: seconds * 1e6 / iterations as f64 })
}

/// Timings of the closed forms against enumeration, and of one training
/// epoch on a small synthetic problem.
pub fn bench(cfg: &ExperimentConfig, iterations: usize) -> Result<Vec<BenchRecord>> {
    use aggclass::verify::random_eta;
    let mut rng = aggclass::rng::seeded(cfg.seed, 0xbe);
    let mut out = Vec::new();
    for kind in TaskKind::ALL {
        let (m, k) = match kind {
            TaskKind::Mil => (8, 2),
            TaskKind::Llp => (6, 5),
            _ => (kind.fixed_group_size().unwrap_or(3), 5),
        };
        let task = Task::new(kind, m, k)?;
        let etas: Vec<_> = (0..m).map(|_| random_eta(&mut rng, k, 1.0)).collect();
        let zs = task.enumerate_z()?;
        let z = zs[zs.len() / 2].clone();
        out.push(time(format!("posterior/{kind}/m={m},k={k}"), iterations, || {
            posterior(&task, &etas, &z)?;
            Ok(())
        })?);
        out.push(time(format!("enumeration/{kind}/m={m},k={k}"), iterations.div_ceil(10).max(1), || {
            brute_force_posterior(&task, &etas, &z)?;
            Ok(())
        })?);
    }

    let spec = cfg.synthetic_spec();
    let data = generate_synthetic(&spec, 600)?;
    let task = cfg.task_for(if cfg.task == TaskKind::Mil { 2 } else { spec.k() })?;
    let groups = sample_groups(&data, &task, 300, cfg.seed)?;
    let mut train_config = cfg.train_config()?;
    train_config.epochs = 1;
    train_config.warmup_epochs = 0;
    let model = Model::new(cfg.architecture(spec.d(), task.k())?, cfg.head()?, cfg.seed);
    out.push(time(format!("train-epoch/{}/300 groups", task.kind()), 1, || {
        train::train_with_validation(&groups, task, model.clone(), &train_config, Validation::None)?;
        Ok(())
    })?);
    Ok(out)
}
