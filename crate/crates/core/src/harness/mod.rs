//! Experiment configuration and the commands behind the CLI.
//!
//! An experiment is one JSON document ([`ExperimentConfig`]). Every command
//! reads and writes artifacts under the configured output directory; the
//! `REXZERO_OUT` environment variable overrides that directory when a config
//! is loaded from disk.
//!
//! Output layout:
//!
//! ```text
//! data/schema.json                 relation schema
//! data/{partition}.{nz,wz}.jsonl   materialized settings
//! data/stats.json                  observed counts (+ expected, if given)
//! checkpoints/classifier-{mode}/   classifier checkpoint
//! checkpoints/{extractor}-{nz,wz}/ extractor checkpoint
//! decisions/{key}.json             cached classifier decisions per test set
//! predictions/{record}.jsonl       prediction maps
//! evaluations/{record}.json        score records
//! report/                          rendered tables
//! ```

pub mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_settings, generate_synthetic, load_jsonl, nyt_reference_stats, validate_statistics, write_jsonl,
    DatasetSetting, ExpectedStats, Partition, PartitionCounts, RelationSchema, Setting, StatsReport, SynthConfig,
};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::extractors::{BuildContext, Extractor, ExtractorConfig, ExtractorRegistry};
use crate::metrics::MatchMode;
use crate::pipeline::{run_end_to_end, run_two_step, CachedDecisions};
use crate::seed::{derive_seed, hash_strings};
use crate::train::TrainConfig;
use crate::zerocard::{train_classifier, ClassifierMode};
use crate::Classifier;

pub use report::{RecordKind, ReportTable, ScoreRecord, StatsEntry, TableKind};

pub const OUTPUT_ENV: &str = "REXZERO_OUT";

/// Raw JSONL files of one partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionFiles {
    pub positive: PathBuf,
    #[serde(default)]
    pub zeros: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileSource {
    /// Dataset name used in reports and statistics, e.g. `NYT24*`.
    pub name: String,
    pub schema: PathBuf,
    pub partitions: BTreeMap<Partition, PartitionFiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SynthConfig),
    Files(FileSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierSection {
    pub mode: ClassifierMode,
    pub train: TrainConfig,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        ClassifierSection {
            mode: ClassifierMode::Binary,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorSection {
    pub name: String,
    pub train: TrainConfig,
    pub max_steps: usize,
    pub relation_dim: usize,
}

impl Default for ExtractorSection {
    fn default() -> Self {
        let d = ExtractorConfig::default();
        ExtractorSection {
            name: "cascade".into(),
            train: d.train,
            max_steps: d.max_steps,
            relation_dim: d.relation_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub data: DataSource,
    pub encoder: EncoderConfig,
    pub classifier: ClassifierSection,
    pub extractor: ExtractorSection,
    pub train_setting: Setting,
    pub test_setting: Setting,
    pub match_mode: MatchMode,
    /// Master seed. When set it replaces the corpus, encoder and training
    /// seeds with streams derived from it.
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    /// Expected counts checked by `prepare` and `validate-stats`.
    pub expected_stats: Option<ExpectedStats>,
    /// Check against the published NYT24*/NYT29* counts.
    pub reference_stats: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            data: DataSource::Synthetic(SynthConfig::default()),
            encoder: EncoderConfig::default(),
            classifier: ClassifierSection::default(),
            extractor: ExtractorSection::default(),
            train_setting: Setting::NZ,
            test_setting: Setting::WZ,
            match_mode: MatchMode::default(),
            seed: None,
            output_dir: PathBuf::from("out"),
            expected_stats: None,
            reference_stats: false,
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file. Relative paths are taken relative to the file's
    /// directory, and `REXZERO_OUT` replaces the output directory.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.rebase_paths(base);
        config.override_output(std::env::var_os(OUTPUT_ENV).map(PathBuf::from));
        Ok(config)
    }

    pub fn rebase_paths(&mut self, base: &Path) {
        rebase(base, &mut self.output_dir);
        if let DataSource::Files(f) = &mut self.data {
            rebase(base, &mut f.schema);
            for files in f.partitions.values_mut() {
                rebase(base, &mut files.positive);
                if let Some(z) = &mut files.zeros {
                    rebase(base, z);
                }
            }
        }
        if let Some(dir) = &mut self.encoder.pretrained_dir {
            rebase(base, dir);
        }
    }

    pub fn override_output(&mut self, dir: Option<PathBuf>) {
        if let Some(dir) = dir {
            self.output_dir = dir;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.classifier.train.validate()?;
        self.extractor.train.validate()?;
        if self.extractor.max_steps == 0 {
            return Err(Error::Config("extractor max_steps must be positive".into()));
        }
        if let DataSource::Files(f) = &self.data {
            for p in Partition::ALL {
                if !f.partitions.contains_key(&p) {
                    return Err(Error::Config(format!("no input files for the {p} partition")));
                }
            }
        }
        Ok(())
    }

    pub fn dataset_name(&self) -> &str {
        match &self.data {
            DataSource::Synthetic(_) => "synthetic",
            DataSource::Files(f) => &f.name,
        }
    }

    /// The config with the master seed fanned out to every component.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        if let Some(seed) = c.seed {
            if let DataSource::Synthetic(s) = &mut c.data {
                s.seed = derive_seed(seed, "corpus");
            }
            c.encoder.seed = derive_seed(seed, "encoder");
            c.classifier.train.seed = derive_seed(seed, "classifier/train");
            c.extractor.train.seed = derive_seed(seed, "extractor/train");
        }
        c
    }

    pub fn extractor_config(&self) -> ExtractorConfig {
        ExtractorConfig {
            encoder: self.encoder.clone(),
            train: self.extractor.train.clone(),
            max_steps: self.extractor.max_steps,
            relation_dim: self.extractor.relation_dim,
        }
    }

    fn expected(&self) -> Option<ExpectedStats> {
        let mut expected = self.expected_stats.clone().unwrap_or_default();
        if self.reference_stats {
            expected.extend(nyt_reference_stats());
        }
        expected.retain(|name, _| name == self.dataset_name());
        (!expected.is_empty()).then_some(expected)
    }
}

/// Paths of every artifact under one output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

fn setting_suffix(s: Setting) -> &'static str {
    match s {
        Setting::NZ => "nz",
        Setting::WZ => "wz",
    }
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn schema(&self) -> PathBuf {
        self.data_dir().join("schema.json")
    }

    pub fn setting(&self, partition: Partition, setting: Setting) -> PathBuf {
        self.data_dir().join(format!("{partition}.{}.jsonl", setting_suffix(setting)))
    }

    pub fn stats(&self) -> PathBuf {
        self.data_dir().join("stats.json")
    }

    pub fn stats_validation(&self) -> PathBuf {
        self.data_dir().join("stats_validation.csv")
    }

    pub fn synth_dir(&self) -> PathBuf {
        self.root.join("synth")
    }

    pub fn classifier(&self, mode: ClassifierMode) -> PathBuf {
        let mode = match mode {
            ClassifierMode::Binary => "binary",
            ClassifierMode::Mcml => "mcml",
        };
        self.root.join("checkpoints").join(format!("classifier-{mode}"))
    }

    pub fn extractor(&self, name: &str, setting: Setting) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}-{}", setting_suffix(setting)))
    }

    pub fn decisions_dir(&self) -> PathBuf {
        self.root.join("decisions")
    }

    pub fn predictions(&self, key: &str) -> PathBuf {
        self.root.join("predictions").join(format!("{key}.jsonl"))
    }

    pub fn evaluations_dir(&self) -> PathBuf {
        self.root.join("evaluations")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub data_dir: PathBuf,
    pub stats: Vec<StatsEntry>,
    /// Present when expected counts were configured.
    pub validation: Option<StatsReport>,
}

/// What `evaluate` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTarget {
    EndToEnd,
    TwoStep,
    Classifier,
}

/// Checkpoint directories; `None` selects the default path in the layout.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Checkpoints {
    pub extractor: Option<PathBuf>,
    pub classifier: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvaluateOptions {
    /// Evaluate a checkpoint even if its training setting differs from the
    /// config's.
    pub allow_setting_override: bool,
}

/// Runs the commands of one experiment.
pub struct Harness {
    config: ExperimentConfig,
    registry: ExtractorRegistry,
    layout: Layout,
}

impl Harness {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        Self::with_registry(config, ExtractorRegistry::new())
    }

    pub fn with_registry(config: &ExperimentConfig, registry: ExtractorRegistry) -> Result<Self> {
        config.validate()?;
        let config = config.resolved();
        let layout = Layout::new(&config.output_dir);
        Ok(Harness {
            config,
            registry,
            layout,
        })
    }

    /// The config with seeds resolved.
    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    fn cased(&self) -> bool {
        self.config.encoder.cased
    }

    pub fn schema(&self) -> Result<RelationSchema> {
        let path = self.layout.schema();
        require(&path)?;
        RelationSchema::load(&path)
    }

    /// A prepared setting file.
    pub fn load_setting(&self, partition: Partition, setting: Setting) -> Result<DatasetSetting> {
        let path = self.layout.setting(partition, setting);
        require(&path)?;
        DatasetSetting::load(&path, setting, partition, &self.schema()?, self.cased())
    }

    fn wz_required(&self) -> bool {
        self.config.train_setting == Setting::WZ || self.config.test_setting == Setting::WZ
    }

    /// Writes the synthetic corpus as raw positive/zero JSONL files plus a
    /// schema, in the shape a file-based config consumes.
    pub fn synth(&self) -> Result<FileSource> {
        let DataSource::Synthetic(synth) = &self.config.data else {
            return Err(Error::Config("`synth` needs a synthetic data source".into()));
        };
        let corpus = generate_synthetic(synth)?;
        let dir = self.layout.synth_dir();
        create_dir(&dir)?;
        let schema = dir.join("schema.json");
        corpus.schema.save(&schema)?;
        let mut partitions = BTreeMap::new();
        for p in Partition::ALL {
            let part = corpus.partition(p);
            let files = PartitionFiles {
                positive: dir.join(format!("{p}.positive.jsonl")),
                zeros: Some(dir.join(format!("{p}.zeros.jsonl"))),
            };
            write_jsonl(&files.positive, &part.positive)?;
            write_jsonl(files.zeros.as_ref().expect("set above"), &part.zeros)?;
            partitions.insert(p, files);
        }
        Ok(FileSource {
            name: "synthetic".into(),
            schema,
            partitions,
        })
    }

    /// Materializes the NZ and WZ settings of every partition and records
    /// their statistics.
    pub fn prepare(&self) -> Result<PrepareSummary> {
        let data_dir = self.layout.data_dir();
        let (schema, parts) = match &self.config.data {
            DataSource::Synthetic(synth) => {
                let corpus = generate_synthetic(synth)?;
                let parts = Partition::ALL
                    .map(|p| {
                        let part = corpus.partition(p);
                        (p, part.positive.clone(), Some(part.zeros.clone()))
                    })
                    .to_vec();
                (corpus.schema, parts)
            }
            DataSource::Files(files) => {
                require(&files.schema)?;
                let schema = RelationSchema::load(&files.schema)?;
                let mut parts = Vec::new();
                for p in Partition::ALL {
                    let f = &files.partitions[&p];
                    require(&f.positive)?;
                    let positive = load_jsonl(&f.positive, &schema, self.cased())?;
                    let zeros = match &f.zeros {
                        Some(z) => {
                            require(z)?;
                            Some(load_jsonl(z, &schema, self.cased())?)
                        }
                        None if self.wz_required() => {
                            return Err(Error::Config(format!(
                                "the WZ setting is requested but no zeros file is given for the {p} partition"
                            )))
                        }
                        None => None,
                    };
                    parts.push((p, positive, zeros));
                }
                (schema, parts)
            }
        };
        create_dir(&data_dir)?;
        schema.save(&self.layout.schema())?;
        let mut stats = Vec::new();
        let mut wz_settings = Vec::new();
        for (p, positive, zeros) in parts {
            let has_zeros = zeros.is_some();
            let (nz, wz) = build_settings(positive, zeros.unwrap_or_default(), p)?;
            write_jsonl(&self.layout.setting(p, Setting::NZ), &nz.sentences)?;
            if has_zeros {
                write_jsonl(&self.layout.setting(p, Setting::WZ), &wz.sentences)?;
            }
            stats.push(StatsEntry {
                dataset: self.config.dataset_name().to_owned(),
                partition: p,
                counts: PartitionCounts::of(&wz),
                expected: None,
            });
            wz_settings.push((self.config.dataset_name().to_owned(), wz));
        }
        let validation = self.config.expected().map(|expected| {
            for e in &mut stats {
                e.expected = expected.get(&e.dataset).and_then(|m| m.get(&e.partition)).copied();
            }
            validate_statistics(&wz_settings, &expected)
        });
        write_json(&self.layout.stats(), &stats)?;
        if let Some(report) = &validation {
            write_file(&self.layout.stats_validation(), &report.to_csv())?;
        }
        Ok(PrepareSummary {
            data_dir,
            stats,
            validation,
        })
    }

    /// Recomputes statistics of the prepared data and checks them against
    /// the configured expectations.
    pub fn validate_stats(&self) -> Result<StatsReport> {
        let expected = self
            .config
            .expected()
            .ok_or_else(|| Error::Config("no expected statistics configured".into()))?;
        let mut settings = Vec::new();
        for p in Partition::ALL {
            let setting = if self.layout.setting(p, Setting::WZ).exists() {
                Setting::WZ
            } else {
                Setting::NZ
            };
            settings.push((self.config.dataset_name().to_owned(), self.load_setting(p, setting)?));
        }
        let report = validate_statistics(&settings, &expected);
        write_file(&self.layout.stats_validation(), &report.to_csv())?;
        Ok(report)
    }

    /// Trains the zero-cardinality classifier on the WZ training setting and
    /// returns its checkpoint directory.
    pub fn train_classifier(&self) -> Result<PathBuf> {
        let train = self.load_setting(Partition::Train, Setting::WZ)?;
        let validation = self.load_setting(Partition::Validation, Setting::WZ)?;
        let clf: Classifier = train_classifier(
            &train,
            &validation,
            self.config.classifier.mode,
            &self.schema()?,
            self.config.encoder.clone(),
            self.config.classifier.train.clone(),
        )?;
        let dir = self.layout.classifier(self.config.classifier.mode);
        create_dir(&dir)?;
        clf.save(&dir)?;
        Ok(dir)
    }

    /// Trains the configured extractor on `train_setting` and returns its
    /// checkpoint directory.
    pub fn train_extractor(&self) -> Result<PathBuf> {
        let setting = self.config.train_setting;
        let train = self.load_setting(Partition::Train, setting)?;
        let validation = self.load_setting(Partition::Validation, setting)?;
        let ctx = BuildContext {
            schema: self.schema()?,
            config: self.config.extractor_config(),
        };
        let mut extractor = self.registry.create(&self.config.extractor.name, &ctx)?;
        extractor.train(&train, &validation)?;
        let dir = self.layout.extractor(&self.config.extractor.name, setting);
        create_dir(&dir)?;
        extractor.save(&dir)?;
        Ok(dir)
    }

    fn load_extractor(&self, checkpoints: &Checkpoints, opts: EvaluateOptions) -> Result<Box<dyn Extractor>> {
        let dir = checkpoints
            .extractor
            .clone()
            .unwrap_or_else(|| self.layout.extractor(&self.config.extractor.name, self.config.train_setting));
        let extractor = self.registry.load(&dir)?;
        let trained = extractor
            .trained_setting()
            .ok_or_else(|| Error::Untrained(format!("extractor at {}", dir.display())))?;
        if trained != self.config.train_setting && !opts.allow_setting_override {
            return Err(Error::SettingMismatch {
                checkpoint: trained.to_string(),
                requested: self.config.train_setting.to_string(),
            });
        }
        Ok(extractor)
    }

    fn load_classifier(&self, checkpoints: &Checkpoints) -> Result<(Classifier, PathBuf)> {
        let dir = checkpoints
            .classifier
            .clone()
            .unwrap_or_else(|| self.layout.classifier(self.config.classifier.mode));
        let clf = Classifier::load(&dir)?;
        if clf.trained_setting() != Some(Setting::WZ) {
            return Err(Error::SettingMismatch {
                checkpoint: clf.trained_setting().map_or("none".into(), |s| s.to_string()),
                requested: "WZ".into(),
            });
        }
        Ok((clf, dir))
    }

    /// Classifier decisions for `testset`, computed once and reused by every
    /// later two-step run with the same classifier checkpoint.
    fn decisions(&self, clf: &Classifier, clf_dir: &Path, testset: &DatasetSetting) -> Result<CachedDecisions> {
        let manifest_path = clf_dir.join("manifest.json");
        let manifest = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let setting = testset.setting.to_string();
        let key = hash_strings(
            [manifest.as_str(), setting.as_str()]
                .into_iter()
                .chain(testset.sentences.iter().map(|s| s.id())),
        );
        let path = self.layout.decisions_dir().join(format!("{}.json", &key[..16]));
        if path.exists() {
            return CachedDecisions::load(&path);
        }
        let decisions = CachedDecisions::compute(clf, testset)?;
        create_dir(&self.layout.decisions_dir())?;
        decisions.save(&path)?;
        Ok(decisions)
    }

    /// Runs one evaluation on the test partition in `test_setting`, stores
    /// its prediction map and score record, and returns the record.
    pub fn evaluate(&self, target: EvalTarget, checkpoints: &Checkpoints, opts: EvaluateOptions) -> Result<ScoreRecord> {
        let testset = self.load_setting(Partition::Test, self.config.test_setting)?;
        if testset.is_empty() {
            return Err(Error::Contract("empty test set".into()));
        }
        let dataset = self.config.dataset_name();
        let mode = self.config.match_mode;
        let (record, predictions) = match target {
            EvalTarget::EndToEnd => {
                let extractor = self.load_extractor(checkpoints, opts)?;
                let map = run_end_to_end(extractor.as_ref(), &testset)?;
                let record = ScoreRecord::from_report(
                    report::RecordKind::EndToEnd,
                    dataset,
                    extractor.name(),
                    self.config.train_setting,
                    testset.setting,
                    &map.score(&testset.sentences, mode)?,
                );
                (record, Some(map))
            }
            EvalTarget::TwoStep => {
                if self.config.train_setting != Setting::NZ {
                    return Err(Error::Config("two-step runs use an NZ-trained extractor".into()));
                }
                let (clf, clf_dir) = self.load_classifier(checkpoints)?;
                let extractor = self.load_extractor(checkpoints, opts)?;
                let decisions = self.decisions(&clf, &clf_dir, &testset)?;
                let map = run_two_step(&decisions, extractor.as_ref(), &testset)?;
                let record = ScoreRecord::from_report(
                    report::RecordKind::TwoStep,
                    dataset,
                    extractor.name(),
                    Setting::NZ,
                    testset.setting,
                    &map.score(&testset.sentences, mode)?,
                )
                .with_classifier(mode_name(clf.mode()));
                (record, Some(map))
            }
            EvalTarget::Classifier => {
                let (clf, _) = self.load_classifier(checkpoints)?;
                let record = ScoreRecord::from_report(
                    report::RecordKind::Classifier,
                    dataset,
                    mode_name(clf.mode()),
                    Setting::WZ,
                    testset.setting,
                    &clf.evaluate(&testset),
                );
                (record, None)
            }
        };
        let key = record.key();
        if let Some(map) = predictions {
            let path = self.layout.predictions(&key);
            write_file(&path, &map.to_jsonl()?)?;
        }
        write_json(&self.layout.evaluations_dir().join(format!("{key}.json")), &record)?;
        Ok(record)
    }
}

fn mode_name(mode: ClassifierMode) -> &'static str {
    match mode {
        ClassifierMode::Binary => "binary",
        ClassifierMode::Mcml => "mcml",
    }
}

/// Rendered report of one output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedReport {
    pub tables: Vec<ReportTable>,
    pub text: String,
}

/// Score records stored in a run directory, in file-name order.
pub fn load_records(run_dir: &Path) -> Result<Vec<ScoreRecord>> {
    let dir = Layout::new(run_dir).evaluations_dir();
    require(&dir)?;
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::MissingArtifact(dir.join("*.json")));
    }
    paths.iter().map(|p| read_json(p)).collect()
}

/// Renders every table of a run directory into `report/`: one CSV per table,
/// `report.txt` and `tables.json`.
pub fn render_report(run_dir: &Path) -> Result<RenderedReport> {
    require(run_dir)?;
    let layout = Layout::new(run_dir);
    let records = load_records(run_dir)?;
    let stats: Vec<StatsEntry> = if layout.stats().exists() {
        read_json(&layout.stats())?
    } else {
        Vec::new()
    };
    let tables = report::build_tables(&stats, &records);
    let text = report::render_text(&tables);
    let dir = layout.report_dir();
    create_dir(&dir)?;
    for t in &tables {
        write_file(&dir.join(format!("{}.csv", t.kind.as_str())), &t.to_csv())?;
    }
    write_file(&dir.join("report.txt"), &text)?;
    write_json(&dir.join("tables.json"), &tables)?;
    Ok(RenderedReport { tables, text })
}

pub fn cmd_synth(config: &ExperimentConfig) -> Result<FileSource> {
    Harness::new(config)?.synth()
}

pub fn cmd_prepare(config: &ExperimentConfig) -> Result<PrepareSummary> {
    Harness::new(config)?.prepare()
}

pub fn cmd_validate_stats(config: &ExperimentConfig) -> Result<StatsReport> {
    Harness::new(config)?.validate_stats()
}

pub fn cmd_train_classifier(config: &ExperimentConfig) -> Result<PathBuf> {
    Harness::new(config)?.train_classifier()
}

pub fn cmd_train_extractor(config: &ExperimentConfig) -> Result<PathBuf> {
    Harness::new(config)?.train_extractor()
}

pub fn cmd_evaluate(
    config: &ExperimentConfig,
    target: EvalTarget,
    checkpoints: &Checkpoints,
    opts: EvaluateOptions,
) -> Result<ScoreRecord> {
    Harness::new(config)?.evaluate(target, checkpoints, opts)
}

pub fn cmd_report(run_dir: &Path) -> Result<RenderedReport> {
    render_report(run_dir)
}
