//! Staged, resumable audit runs.
//!
//! A run directory holds one JSON artifact per individual (and emotion) and
//! stage. Every artifact records the hash of the inputs it was computed
//! from; a stage recomputes only artifacts whose inputs changed, so a rerun
//! with an unchanged config makes no classifier calls.
//!
//! ```text
//! config.json  manifest.json  run_log.json
//! individuals/0000.json
//! expressions/<emotion>/0000.json     optimize
//! grids/<emotion>/0000.json           grid
//! scores/<emotion>/0000.json          score
//! tests/<emotion>/0000.json           sigtest (permutation test)
//! reports/<emotion>.json              sigtest (Holm over the population)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use facesym_core::classify::{Classifier, CountingClassifier};
use facesym_core::evolution::{optimize_expression, ExpressionFit};
use facesym_core::face::{sample_individual, FaceModel, IndividualParams};
use facesym_core::probe::{build_grid, local_score, ImpactScore, InterventionGrid};
use facesym_core::stats::{permutation_test, PermutationConfig, PermutationOutcome, SignificanceReport};
use facesym_core::{exec, seed, EmotionLabel};
use serde::{Deserialize, Serialize};

use crate::artifacts::{file_hash, hash_json, load_current, read_json, sha256_hex, store, write_json};
use crate::config::{ClassifierSpec, ModelSource, RunConfig};
use crate::error::{CliError, CliResult};

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Sample,
    Optimize,
    Grid,
    Score,
    Sigtest,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Sample, Stage::Optimize, Stage::Grid, Stage::Score, Stage::Sigtest];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Sample => "sample",
            Stage::Optimize => "optimize",
            Stage::Grid => "grid",
            Stage::Score => "score",
            Stage::Sigtest => "sigtest",
        }
    }

    fn needs_classifier(self) -> bool {
        matches!(self, Stage::Optimize | Stage::Grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Pending,
    Complete,
    /// Started but failed; whatever finished is kept.
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub status: StageStatus,
    /// Run-relative paths of the stage's artifacts once complete.
    #[serde(default)]
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: String,
    /// SHA-256 of `config.json`.
    pub config_hash: String,
    pub stages: BTreeMap<Stage, StageEntry>,
}

impl Manifest {
    pub fn missing_stages(&self) -> Vec<String> {
        Stage::ALL
            .iter()
            .filter(|s| self.stages.get(s).is_none_or(|e| e.status != StageStatus::Complete))
            .map(|s| s.as_str().to_string())
            .collect()
    }
}

/// What one stage did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub computed: usize,
    pub reused: usize,
    pub classifier_calls: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LogEntry {
    stage: Stage,
    started_unix: f64,
    finished_unix: f64,
    ok: bool,
    computed: usize,
    reused: usize,
    classifier_calls: u64,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// An opened run directory with its validated config and face model.
pub struct Run {
    config: RunConfig,
    dir: PathBuf,
    model: FaceModel,
    master_seed: u64,
    model_key: String,
}

impl Run {
    /// Validate `config`, load the model and create the run directory.
    ///
    /// Nothing is written unless validation and model loading succeed.
    pub fn open(config: RunConfig) -> CliResult<Self> {
        config.validate()?;
        let master_seed = config.master_seed()?;
        let model = config.load_model()?;
        let model_key = match &config.model {
            ModelSource::Builtin => format!("builtin/{}", env!("CARGO_PKG_VERSION")),
            ModelSource::Path(p) => file_hash(p)?,
        };
        let dir = config.output.clone();
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let run = Self { config, dir, model, master_seed, model_key };
        run.write_config()?;
        Ok(run)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn model(&self) -> &FaceModel {
        &self.model
    }

    /// The config as stored in the run: where it was written to and how many
    /// workers ran it do not change any artifact, so both are cleared.
    pub fn stored_config(&self) -> RunConfig {
        RunConfig { output: PathBuf::from("."), workers: None, ..self.config.clone() }
    }

    fn write_config(&self) -> CliResult<()> {
        let path = self.dir.join("config.json");
        write_json(&path, &self.stored_config())?;
        let config_hash = file_hash(&path)?;
        let manifest_path = self.dir.join("manifest.json");
        let mut manifest = read_json::<Manifest>(&manifest_path).unwrap_or_else(|_| Manifest {
            schema_version: MANIFEST_SCHEMA,
            tool_version: String::new(),
            config_hash: String::new(),
            stages: Stage::ALL.iter().map(|s| (*s, StageEntry { status: StageStatus::Pending, artifacts: vec![] })).collect(),
        });
        if manifest.config_hash != config_hash {
            // artifacts are rechecked against their input hashes on the next
            // pass, so a changed config only resets the bookkeeping
            for entry in manifest.stages.values_mut() {
                entry.status = StageStatus::Pending;
                entry.artifacts.clear();
            }
        }
        manifest.tool_version = env!("CARGO_PKG_VERSION").to_string();
        manifest.config_hash = config_hash;
        write_json(&manifest_path, &manifest)
    }

    pub fn manifest(&self) -> CliResult<Manifest> {
        read_json(&self.dir.join("manifest.json"))
    }

    fn set_stage(&self, stage: Stage, status: StageStatus, artifacts: Vec<String>) -> CliResult<()> {
        let mut manifest = self.manifest()?;
        manifest.stages.insert(stage, StageEntry { status, artifacts });
        write_json(&self.dir.join("manifest.json"), &manifest)
    }

    fn log(&self, entry: LogEntry) -> CliResult<()> {
        let path = self.dir.join("run_log.json");
        let mut log: Vec<LogEntry> = read_json(&path).unwrap_or_default();
        log.push(entry);
        write_json(&path, &log)
    }

    /// Build the configured classifier. For a bridge this connects, so call
    /// it before any stage that needs the classifier.
    pub fn classifier(&self) -> CliResult<Box<dyn Classifier>> {
        self.config.classifier.build()
    }

    fn emotions(&self) -> &[EmotionLabel] {
        &self.config.emotions
    }

    fn individuals(&self) -> usize {
        self.config.individuals
    }

    fn rel_individual(i: usize) -> String {
        format!("individuals/{i:04}.json")
    }

    fn rel(stage_dir: &str, emotion: EmotionLabel, i: usize) -> String {
        format!("{stage_dir}/{emotion}/{i:04}.json")
    }

    fn rel_report(emotion: EmotionLabel) -> String {
        format!("reports/{emotion}.json")
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// The classifier part of artifact keys. A bridge is identified by the
    /// model it serves, not by where it currently listens.
    fn classifier_key(&self) -> String {
        let spec = match &self.config.classifier {
            ClassifierSpec::Bridge { model_id, .. } => {
                ClassifierSpec::Bridge { endpoint: String::new(), model_id: model_id.clone() }
            }
            other => other.clone(),
        };
        hash_json(&spec)
    }

    fn stage_seed(&self, stage: Stage, emotion: Option<EmotionLabel>, i: usize) -> u64 {
        let label = match emotion {
            Some(e) => format!("{}/{e}", stage.as_str()),
            None => stage.as_str().to_string(),
        };
        seed::derive(seed::derive_str(self.master_seed, &label), i as u64)
    }

    fn key(parts: &[&str]) -> String {
        sha256_hex(parts.join("\n").as_bytes())
    }

    /// Hash of an upstream artifact that must exist.
    fn upstream(&self, rel: &str, stage: Stage) -> CliResult<String> {
        file_hash(&self.path(rel)).map_err(|_| self.incomplete(stage))
    }

    fn incomplete(&self, stage: Stage) -> CliError {
        CliError::Incomplete { dir: self.dir.clone(), missing: vec![stage.as_str().to_string()] }
    }

    fn individual_key(&self, i: usize) -> String {
        Self::key(&["sample", &self.model_key, &self.stage_seed(Stage::Sample, None, i).to_string()])
    }

    fn de_config(&self, emotion: EmotionLabel, i: usize) -> facesym_core::evolution::DeConfig {
        let mut de = self.config.de.clone();
        de.seed = self.stage_seed(Stage::Optimize, Some(emotion), i);
        de
    }

    fn expression_key(&self, emotion: EmotionLabel, i: usize) -> CliResult<String> {
        let ind = self.upstream(&Self::rel_individual(i), Stage::Sample)?;
        Ok(Self::key(&[
            "optimize",
            &ind,
            emotion.as_str(),
            &self.classifier_key(),
            &hash_json(&self.de_config(emotion, i)),
            &hash_json(&self.config.render),
        ]))
    }

    fn grid_key(&self, emotion: EmotionLabel, i: usize) -> CliResult<String> {
        let ind = self.upstream(&Self::rel_individual(i), Stage::Sample)?;
        let expr = self.upstream(&Self::rel("expressions", emotion, i), Stage::Optimize)?;
        Ok(Self::key(&[
            "grid",
            &ind,
            &expr,
            &self.classifier_key(),
            &hash_json(&self.config.grid),
            &hash_json(&self.config.render),
        ]))
    }

    fn score_key(&self, emotion: EmotionLabel, i: usize) -> CliResult<String> {
        let grid = self.upstream(&Self::rel("grids", emotion, i), Stage::Grid)?;
        Ok(Self::key(&["score", &grid]))
    }

    fn permutation_config(&self, emotion: EmotionLabel, i: usize) -> PermutationConfig {
        PermutationConfig { seed: self.stage_seed(Stage::Sigtest, Some(emotion), i), ..self.config.permutation.clone() }
    }

    fn test_key(&self, emotion: EmotionLabel, i: usize) -> CliResult<String> {
        let grid = self.upstream(&Self::rel("grids", emotion, i), Stage::Grid)?;
        Ok(Self::key(&["test", &grid, &hash_json(&self.permutation_config(emotion, i))]))
    }

    fn load<T: serde::de::DeserializeOwned>(&self, rel: &str, key: &str, stage: Stage) -> CliResult<T> {
        load_current(&self.path(rel), key).ok_or_else(|| self.incomplete(stage))
    }

    pub fn load_individual(&self, i: usize) -> CliResult<IndividualParams> {
        self.load(&Self::rel_individual(i), &self.individual_key(i), Stage::Sample)
    }

    pub fn load_fit(&self, emotion: EmotionLabel, i: usize) -> CliResult<ExpressionFit> {
        self.load(&Self::rel("expressions", emotion, i), &self.expression_key(emotion, i)?, Stage::Optimize)
    }

    pub fn load_grid(&self, emotion: EmotionLabel, i: usize) -> CliResult<InterventionGrid> {
        self.load(&Self::rel("grids", emotion, i), &self.grid_key(emotion, i)?, Stage::Grid)
    }

    pub fn load_report(&self, emotion: EmotionLabel) -> CliResult<SignificanceReport> {
        read_json(&self.path(&Self::rel_report(emotion))).map_err(|_| self.incomplete(Stage::Sigtest))
    }

    /// Individual `i` with its fitted expression for `emotion` attached.
    pub fn fitted_individual(&self, emotion: EmotionLabel, i: usize) -> CliResult<IndividualParams> {
        let mut ind = self.load_individual(i)?;
        let fit = self.load_fit(emotion, i)?;
        ind.set_expression(&self.model, emotion, fit.expression)?;
        Ok(ind)
    }

    fn fan_out<T: Send>(&self, n: usize, f: impl Fn(usize) -> CliResult<T> + Sync + Send) -> CliResult<Vec<T>> {
        let run = || exec::map_indexed(n, &f).into_iter().collect::<CliResult<Vec<T>>>();
        match self.config.workers {
            Some(w) => exec::with_threads(w, run),
            None => run(),
        }
    }

    /// Compute or reuse one artifact; returns whether it was computed.
    fn ensure<T>(&self, rel: &str, key: &str, compute: impl FnOnce() -> CliResult<T>) -> CliResult<bool>
    where
        T: Serialize + serde::de::DeserializeOwned,
    {
        let path = self.path(rel);
        if load_current::<T>(&path, key).is_some() {
            return Ok(false);
        }
        store(&path, key, &compute()?)?;
        Ok(true)
    }

    /// Drop files under `subdir` that the current config does not produce,
    /// so a smaller rerun leaves no stale artifacts behind.
    fn prune(&self, subdir: &str, keep: &BTreeSet<String>) -> CliResult<()> {
        let root = self.path(subdir);
        if !root.exists() {
            return Ok(());
        }
        let mut stack = vec![root];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))? {
                let path = entry.map_err(|e| CliError::io(&dir, e))?.path();
                if path.is_dir() {
                    stack.push(path);
                    continue;
                }
                let rel = path.strip_prefix(&self.dir).expect("inside run").to_string_lossy().replace('\\', "/");
                if !keep.contains(&rel) {
                    fs::remove_file(&path).map_err(|e| CliError::io(&path, e))?;
                }
            }
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(EmotionLabel, usize)> {
        self.emotions().iter().flat_map(|&e| (0..self.individuals()).map(move |i| (e, i))).collect()
    }

    /// Run one stage. `classifier` is required for optimize and grid.
    pub fn stage(&self, stage: Stage, classifier: Option<&dyn Classifier>) -> CliResult<StageOutcome> {
        let counting = match (stage.needs_classifier(), classifier) {
            (true, None) => return Err(crate::error::config_error(format!("stage {} needs a classifier", stage.as_str()))),
            (true, Some(c)) => Some(CountingClassifier::new(c)),
            (false, _) => None,
        };
        let started = now();
        self.set_stage(stage, StageStatus::Incomplete, vec![])?;
        let result = match stage {
            Stage::Sample => self.sample(),
            Stage::Optimize => self.optimize(counting.as_ref().expect("checked")),
            Stage::Grid => self.grid(counting.as_ref().expect("checked")),
            Stage::Score => self.score(),
            Stage::Sigtest => self.sigtest(),
        };
        let calls = counting.as_ref().map_or(0, |c| c.calls());
        let (ok, computed, reused) = match &result {
            Ok((c, r, _)) => (true, *c, *r),
            Err(_) => (false, 0, 0),
        };
        self.log(LogEntry { stage, started_unix: started, finished_unix: now(), ok, computed, reused, classifier_calls: calls })?;
        let (_, _, artifacts) = result?;
        self.set_stage(stage, StageStatus::Complete, artifacts)?;
        Ok(StageOutcome { stage, computed, reused, classifier_calls: calls })
    }

    fn tally(flags: &[bool]) -> (usize, usize) {
        let computed = flags.iter().filter(|&&c| c).count();
        (computed, flags.len() - computed)
    }

    fn sample(&self) -> CliResult<(usize, usize, Vec<String>)> {
        let flags = self.fan_out(self.individuals(), |i| {
            self.ensure(&Self::rel_individual(i), &self.individual_key(i), || {
                Ok(sample_individual(&self.model, self.stage_seed(Stage::Sample, None, i)))
            })
        })?;
        let rels: Vec<String> = (0..self.individuals()).map(Self::rel_individual).collect();
        self.prune("individuals", &rels.iter().cloned().collect())?;
        let (c, r) = Self::tally(&flags);
        Ok((c, r, rels))
    }

    fn optimize(&self, classifier: &dyn Classifier) -> CliResult<(usize, usize, Vec<String>)> {
        let pairs = self.pairs();
        let flags = self.fan_out(pairs.len(), |k| {
            let (emotion, i) = pairs[k];
            let key = self.expression_key(emotion, i)?;
            self.ensure(&Self::rel("expressions", emotion, i), &key, || {
                let mut ind = self.load_individual(i)?;
                let de = self.de_config(emotion, i);
                Ok(optimize_expression(&self.model, &mut ind, i as u64, emotion, classifier, &self.config.render, &de)?)
            })
        })?;
        self.finish_per_pair("expressions", flags)
    }

    fn finish_per_pair(&self, dir: &str, flags: Vec<bool>) -> CliResult<(usize, usize, Vec<String>)> {
        let rels: Vec<String> = self.pairs().into_iter().map(|(e, i)| Self::rel(dir, e, i)).collect();
        self.prune(dir, &rels.iter().cloned().collect())?;
        let (c, r) = Self::tally(&flags);
        Ok((c, r, rels))
    }

    fn grid(&self, classifier: &dyn Classifier) -> CliResult<(usize, usize, Vec<String>)> {
        let pairs = self.pairs();
        let flags = self.fan_out(pairs.len(), |k| {
            let (emotion, i) = pairs[k];
            let key = self.grid_key(emotion, i)?;
            self.ensure(&Self::rel("grids", emotion, i), &key, || {
                let ind = self.fitted_individual(emotion, i)?;
                Ok(build_grid(&self.model, &ind, i as u64, emotion, classifier, self.config.grid, &self.config.render)?)
            })
        })?;
        self.finish_per_pair("grids", flags)
    }

    fn score(&self) -> CliResult<(usize, usize, Vec<String>)> {
        let pairs = self.pairs();
        let flags = self.fan_out(pairs.len(), |k| {
            let (emotion, i) = pairs[k];
            let key = self.score_key(emotion, i)?;
            self.ensure(&Self::rel("scores", emotion, i), &key, || Ok(local_score(&self.load_grid(emotion, i)?)?))
        })?;
        self.finish_per_pair("scores", flags)
    }

    fn sigtest(&self) -> CliResult<(usize, usize, Vec<String>)> {
        let pairs = self.pairs();
        let flags = self.fan_out(pairs.len(), |k| {
            let (emotion, i) = pairs[k];
            let key = self.test_key(emotion, i)?;
            self.ensure(&Self::rel("tests", emotion, i), &key, || {
                Ok(permutation_test(&self.load_grid(emotion, i)?, &self.permutation_config(emotion, i))?)
            })
        })?;
        let (mut computed, mut reused, mut rels) = self.finish_per_pair("tests", flags)?;
        for &emotion in self.emotions() {
            let mut parts = vec!["report".to_string(), hash_json(&self.config.permutation)];
            for i in 0..self.individuals() {
                parts.push(self.upstream(&Self::rel("scores", emotion, i), Stage::Score)?);
                parts.push(self.upstream(&Self::rel("tests", emotion, i), Stage::Sigtest)?);
            }
            let key = sha256_hex(parts.join("\n").as_bytes());
            let rel = Self::rel_report(emotion);
            let stored: Option<SignificanceReport> = read_json::<ReportFile>(&self.path(&rel))
                .ok()
                .filter(|f| f.input_hash == key)
                .map(|f| f.report);
            if stored.is_some() {
                reused += 1;
            } else {
                let report = self.build_report(emotion)?;
                write_json(&self.path(&rel), &ReportFile { input_hash: key, report })?;
                computed += 1;
            }
            rels.push(rel);
        }
        let keep: BTreeSet<String> = self.emotions().iter().map(|&e| Self::rel_report(e)).collect();
        self.prune("reports", &keep)?;
        Ok((computed, reused, rels))
    }

    fn build_report(&self, emotion: EmotionLabel) -> CliResult<SignificanceReport> {
        let n = self.individuals();
        let (mut scores, mut p_values) = (Vec::with_capacity(n), Vec::with_capacity(n));
        let mut classifier = None;
        for i in 0..n {
            let score: ImpactScore =
                self.load(&Self::rel("scores", emotion, i), &self.score_key(emotion, i)?, Stage::Score)?;
            let test: PermutationOutcome =
                self.load(&Self::rel("tests", emotion, i), &self.test_key(emotion, i)?, Stage::Sigtest)?;
            if classifier.is_none() {
                classifier = self.load_grid(emotion, i)?.classifier;
            }
            scores.push(score.local_score);
            p_values.push(test.p_value);
        }
        let ids = (0..n as u64).collect();
        Ok(SignificanceReport::new(emotion, ids, scores, p_values, self.config.permutation.clone(), classifier)?)
    }

    /// Run every stage in order.
    pub fn run_all(&self, classifier: &dyn Classifier) -> CliResult<RunSummary> {
        let mut stages = Vec::new();
        for stage in Stage::ALL {
            stages.push(self.stage(stage, Some(classifier))?);
        }
        let reports = self.emotions().iter().map(|&e| self.load_report(e)).collect::<CliResult<Vec<_>>>()?;
        Ok(RunSummary { dir: self.dir.clone(), stages, reports })
    }
}

/// `reports/<emotion>.json`: the report itself is the value, stamped like
/// every other artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReportFile {
    input_hash: String,
    #[serde(flatten)]
    report: SignificanceReport,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub stages: Vec<StageOutcome>,
    pub reports: Vec<SignificanceReport>,
}

impl RunSummary {
    pub fn classifier_calls(&self) -> u64 {
        self.stages.iter().map(|s| s.classifier_calls).sum()
    }
}

/// Open the run described by `config` and execute every stage.
pub fn run_pipeline(config: RunConfig) -> CliResult<RunSummary> {
    // connect before the output directory is touched
    config.validate()?;
    let classifier = config.classifier.build()?;
    Run::open(config)?.run_all(classifier.as_ref())
}

/// Check a finished run: the manifest matches the stored config, every stage
/// is complete and every listed artifact exists.
pub fn verify_run(dir: &Path) -> CliResult<Manifest> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))
        .map_err(|_| CliError::Incomplete { dir: dir.to_path_buf(), missing: vec!["manifest".into()] })?;
    if manifest.config_hash != file_hash(&dir.join("config.json"))? {
        return Err(crate::error::config_error(format!("{}: manifest does not match config.json", dir.display())));
    }
    let missing = manifest.missing_stages();
    if !missing.is_empty() {
        return Err(CliError::Incomplete { dir: dir.to_path_buf(), missing });
    }
    for (stage, entry) in &manifest.stages {
        if let Some(rel) = entry.artifacts.iter().find(|r| !dir.join(r).is_file()) {
            return Err(CliError::Incomplete {
                dir: dir.to_path_buf(),
                missing: vec![format!("{} ({rel})", stage.as_str())],
            });
        }
    }
    Ok(manifest)
}
