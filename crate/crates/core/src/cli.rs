//! Experiment configuration and the `generate`, `train`, `evaluate`, `sweep`
//! and `validate` commands.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::classifier::{train_linear_classifier, ClipClassifier, ScriptedClassifier};
use crate::datamodel::{validate_dataset, Dataset, load_manifest};
use crate::error::{Error, ErrorKind, Result};
use crate::evalharness::{
    evaluate_strategy, sweep, write_report_jsonl, write_summary_csv, CostModel, EvalOptions, EvalReport, Sampler,
    Strategy, SweepSpec,
};
use crate::fusion::{train_joint, FusionConfig};
use crate::saliency::{train_ac, train_sal_rank, SaliencyScorer, ScorerKind, ScorerSpec, DEFAULT_HIDDEN_WIDTH};
use crate::selection::{build_empirical_histogram, DEFAULT_BINS};
use crate::synthgen::{generate_dataset, SynthConfig};
use crate::training::{EpochRecord, TrainingConfig};

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_N: usize = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    /// Where `generate` writes `train/` and `test/`.
    pub dir: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Linear,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub kind: ClassifierKind,
    pub modality: String,
    /// Defaults to `<output_dir>/checkpoints/classifier.sclm`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        ClassifierSection {
            kind: ClassifierKind::Linear,
            modality: crate::datamodel::VISUAL_RGBR.into(),
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Ac,
    SalRank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub loss: LossKind,
    pub kind: ScorerKind,
    pub hidden_width: usize,
    pub visual: Vec<String>,
    pub audio: Option<String>,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            loss: LossKind::SalRank,
            kind: ScorerKind::LinearSigmoid,
            hidden_width: DEFAULT_HIDDEN_WIDTH,
            visual: vec![crate::datamodel::VISUAL_MD.into()],
            audio: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub strategies: Vec<String>,
    pub k: usize,
    pub n: usize,
    pub bins: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            strategies: ["dense", "random", "uniform", "empirical", "scsampler", "oracle"]
                .map(String::from)
                .to_vec(),
            k: DEFAULT_K,
            n: DEFAULT_N,
            bins: DEFAULT_BINS,
        }
    }
}

/// The single experiment file shared by every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed for evaluation-time randomness (Random and Empirical baselines).
    pub seed: u64,
    pub workers: usize,
    pub output_dir: PathBuf,
    pub data: DataPaths,
    pub synth: SynthConfig,
    pub classifier: ClassifierSection,
    pub training: TrainingConfig,
    pub sampler: SamplerSection,
    pub fusion: Option<FusionConfig>,
    pub evaluate: EvaluateSection,
    pub sweep: Option<SweepSpec>,
    pub cost: CostModel,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            workers: 0,
            output_dir: PathBuf::from("out"),
            data: DataPaths::default(),
            synth: SynthConfig::default(),
            classifier: ClassifierSection::default(),
            training: TrainingConfig::default(),
            sampler: SamplerSection::default(),
            fusion: None,
            evaluate: EvaluateSection::default(),
            sweep: None,
            cost: CostModel::default(),
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub k: Option<usize>,
    pub n: Option<usize>,
    pub epochs: Option<usize>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config {
            field: "config".into(),
            message: format!("{}: {e}", path.display()),
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        resolve(base, &mut cfg.output_dir);
        for p in [&mut cfg.data.dir, &mut cfg.data.train, &mut cfg.data.test, &mut cfg.classifier.checkpoint]
            .into_iter()
            .flatten()
        {
            resolve(base, p);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        if let Some(k) = o.k {
            self.evaluate.k = k;
        }
        if let Some(n) = o.n {
            self.evaluate.n = n;
        }
        if let Some(e) = o.epochs {
            self.training.epochs = e;
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.evaluate.k == 0 {
            return Err(Error::config("evaluate.k", "must be >= 1"));
        }
        if self.evaluate.n == 0 {
            return Err(Error::config("evaluate.n", "must be >= 1"));
        }
        if self.evaluate.bins == 0 {
            return Err(Error::config("evaluate.bins", "must be >= 1"));
        }
        if self.sampler.visual.is_empty() {
            return Err(Error::config("sampler.visual", "at least one visual modality required"));
        }
        if self.sampler.kind == ScorerKind::Mlp1Hidden && self.sampler.hidden_width == 0 {
            return Err(Error::config("sampler.hidden_width", "must be >= 1"));
        }
        self.training.check()?;
        self.cost.check()
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.output_dir.join("checkpoints")
    }

    pub fn classifier_checkpoint(&self) -> PathBuf {
        self.classifier
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.checkpoint_dir().join("classifier.sclm"))
    }

    pub fn scorer_checkpoint(&self, prefix: &str, modality: &str) -> PathBuf {
        self.checkpoint_dir().join(format!("{prefix}.{modality}.sclm"))
    }

    fn train_path(&self) -> Result<&Path> {
        self.data
            .train
            .as_deref()
            .ok_or_else(|| Error::config("data.train", "path to the training manifest required"))
    }

    fn test_path(&self) -> Result<&Path> {
        self.data
            .test
            .as_deref()
            .ok_or_else(|| Error::config("data.test", "path to the test manifest required"))
    }

    fn generate_dir(&self) -> Result<&Path> {
        self.data
            .dir
            .as_deref()
            .ok_or_else(|| Error::config("data.dir", "output directory for generated data required"))
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Config => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numeric => 3,
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(d) = path.parent() {
        create_dir(d)?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn files_under(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            files_under(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// `sha256  relative/path` for every file under `dir`, sorted by path.
pub fn checksums(dir: &Path) -> Result<Vec<(String, String)>> {
    let mut files = Vec::new();
    files_under(dir, &mut files)?;
    files
        .iter()
        .map(|p| {
            let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
            let rel = p.strip_prefix(dir).unwrap_or(p).to_string_lossy().replace('\\', "/");
            Ok((hex::encode(Sha256::digest(&bytes)), rel))
        })
        .collect()
}

/// Writes the synthetic dataset and returns the printed summary.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<String> {
    cfg.synth.check()?;
    let dir = cfg.generate_dir()?;
    let out = generate_dataset(&cfg.synth, dir)?;
    let clips: usize = out.train.videos.iter().chain(&out.test.videos).map(|v| v.num_clips).sum();
    let mods: Vec<String> = out
        .train
        .modalities
        .iter()
        .map(|m| format!("{}(d={},window={})", m.name, m.dim, m.window_clips))
        .collect();
    let mut s = format!(
        "dataset {}: train={} test={} videos, {} clips, {} classes\nmodalities: {}\n",
        cfg.synth.name,
        out.train.videos.len(),
        out.test.videos.len(),
        clips,
        cfg.synth.num_classes,
        mods.join(" ")
    );
    for (hash, rel) in checksums(dir)? {
        s.push_str(&format!("{hash}  {rel}\n"));
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainTarget {
    Classifier,
    Sampler,
    Joint,
}

fn write_log(cfg: &ExperimentConfig, name: &str, history: &[EpochRecord]) -> Result<PathBuf> {
    let path = cfg.output_dir.join("logs").join(format!("{name}.log"));
    let text: String = history.iter().map(|r| format!("{r}\n")).collect();
    write_file(&path, text.as_bytes())?;
    Ok(path)
}

fn save(path: &Path, c: &Checkpoint) -> Result<()> {
    if let Some(d) = path.parent() {
        create_dir(d)?;
    }
    c.save(path)
}

/// The reference classifier needed for pseudo-labels, Oracle and evaluation.
pub fn load_classifier(cfg: &ExperimentConfig, scripted_from: &Dataset) -> Result<Box<dyn ClipClassifier>> {
    match cfg.classifier.kind {
        ClassifierKind::Scripted => Ok(Box::new(ScriptedClassifier::from_dataset(scripted_from)?)),
        ClassifierKind::Linear => {
            let path = cfg.classifier_checkpoint();
            if !path.exists() {
                return Err(Error::config(
                    "classifier.checkpoint",
                    format!("{} does not exist; run `train classifier` first", path.display()),
                ));
            }
            match Checkpoint::load(&path)? {
                Checkpoint::Classifier(c) => Ok(Box::new(c)),
                Checkpoint::Scorer(_) => Err(Error::config(
                    "classifier.checkpoint",
                    format!("{} holds a saliency scorer, not a classifier", path.display()),
                )),
            }
        }
    }
}

fn load_scorer(path: &Path) -> Result<SaliencyScorer> {
    if !path.exists() {
        return Err(Error::config(
            "sampler",
            format!("{} does not exist; run `train sampler` or `train joint` first", path.display()),
        ));
    }
    match Checkpoint::load(path)? {
        Checkpoint::Scorer(s) => Ok(s),
        Checkpoint::Classifier(_) => Err(Error::config(
            "sampler",
            format!("{} holds a classifier, not a saliency scorer", path.display()),
        )),
    }
}

fn sal_rank_classifier(cfg: &ExperimentConfig, train: &Dataset) -> Result<Box<dyn ClipClassifier>> {
    if cfg.classifier.kind == ClassifierKind::Linear && !cfg.classifier_checkpoint().exists() {
        return Err(Error::config(
            "classifier.checkpoint",
            format!(
                "SAL-RANK pseudo-labels are computed from the clip classifier's true-class scores, \
                 so a trained classifier is required; {} does not exist (run `train classifier` \
                 or use classifier.kind = \"scripted\")",
                cfg.classifier_checkpoint().display()
            ),
        ));
    }
    load_classifier(cfg, train)
}

/// Trains and saves checkpoints; returns the written paths.
pub fn cmd_train(cfg: &ExperimentConfig, target: TrainTarget) -> Result<Vec<PathBuf>> {
    cfg.check()?;
    let train = Dataset::load(cfg.train_path()?)?;
    let mut written = Vec::new();
    match target {
        TrainTarget::Classifier => {
            if cfg.classifier.kind == ClassifierKind::Scripted {
                return Err(Error::config("classifier.kind", "scripted classifiers are not trained"));
            }
            let t = train_linear_classifier(&train, &cfg.classifier.modality, &cfg.training)?;
            let path = cfg.classifier_checkpoint();
            save(&path, &Checkpoint::Classifier(t.model))?;
            written.push(path);
            written.push(write_log(cfg, "train-classifier", &t.history)?);
        }
        TrainTarget::Sampler => {
            let modalities: Vec<&String> = cfg.sampler.visual.iter().chain(&cfg.sampler.audio).collect();
            let f = match cfg.sampler.loss {
                LossKind::SalRank => Some(sal_rank_classifier(cfg, &train)?),
                LossKind::Ac => None,
            };
            for m in modalities {
                let t = match &f {
                    Some(f) => {
                        let spec = ScorerSpec {
                            kind: cfg.sampler.kind,
                            hidden_width: cfg.sampler.hidden_width,
                        };
                        train_sal_rank(&train, f.as_ref(), m, spec, &cfg.training)?
                    }
                    None => train_ac(&train, m, &cfg.training)?,
                };
                let path = cfg.scorer_checkpoint("sampler", m);
                save(&path, &Checkpoint::Scorer(t.model))?;
                written.push(path);
                written.push(write_log(cfg, &format!("train-sampler-{m}"), &t.history)?);
            }
        }
        TrainTarget::Joint => {
            let audio = cfg
                .sampler
                .audio
                .as_ref()
                .ok_or_else(|| Error::config("sampler.audio", "joint training needs an audio modality"))?;
            if cfg.sampler.loss != LossKind::SalRank {
                return Err(Error::config("sampler.loss", "joint training uses the sal-rank loss"));
            }
            let f = sal_rank_classifier(cfg, &train)?;
            let init = |m: &str, stream: u64| -> Result<SaliencyScorer> {
                let d = train
                    .manifest
                    .modality(m)
                    .ok_or_else(|| Error::MissingModality {
                        video: "<header>".into(),
                        modality: m.to_string(),
                    })?
                    .dim;
                Ok(SaliencyScorer::init(
                    m,
                    cfg.sampler.kind,
                    d,
                    cfg.sampler.hidden_width,
                    train.num_classes(),
                    crate::seed::derive_seed(cfg.training.seed, stream),
                ))
            };
            let visual = cfg
                .sampler
                .visual
                .iter()
                .enumerate()
                .map(|(i, m)| init(m, i as u64))
                .collect::<Result<Vec<_>>>()?;
            let audio_s = init(audio, cfg.sampler.visual.len() as u64)?;
            let t = train_joint(&train, f.as_ref(), visual, audio_s, &cfg.training)?;
            for s in t.model.visual.iter().chain(std::iter::once(&t.model.audio)) {
                let path = cfg.scorer_checkpoint("joint", &s.modality);
                save(&path, &Checkpoint::Scorer(s.clone()))?;
                written.push(path);
            }
            written.push(write_log(cfg, "train-joint", &t.history)?);
        }
    }
    Ok(written)
}

fn build_sampler(cfg: &ExperimentConfig) -> Result<Sampler> {
    let prefix = match cfg.fusion {
        Some(FusionConfig::JointTraining) => "joint",
        _ => "sampler",
    };
    let visual = cfg
        .sampler
        .visual
        .iter()
        .map(|m| load_scorer(&cfg.scorer_checkpoint(prefix, m)))
        .collect::<Result<Vec<_>>>()?;
    let audio = match (&cfg.fusion, &cfg.sampler.audio) {
        (Some(_), Some(a)) => Some(load_scorer(&cfg.scorer_checkpoint(prefix, a))?),
        (Some(_), None) => return Err(Error::config("sampler.audio", "fusion needs an audio modality")),
        (None, _) => None,
    };
    Ok(Sampler {
        visual,
        audio,
        fusion: cfg.fusion,
    })
}

fn build_strategies(cfg: &ExperimentConfig) -> Result<Vec<Strategy>> {
    let mut out = Vec::new();
    for name in &cfg.evaluate.strategies {
        out.push(match name.as_str() {
            "dense" => Strategy::Dense,
            "random" => Strategy::Random,
            "uniform" => Strategy::Uniform,
            "oracle" => Strategy::Oracle,
            "empirical" => {
                let train = Dataset::load(cfg.train_path()?)?;
                // Oracle locations come from the training split, so a scripted
                // classifier must be rebuilt from the training scores.
                let f_train = load_classifier(cfg, &train)?;
                Strategy::Empirical(build_empirical_histogram(
                    &train,
                    f_train.as_ref(),
                    cfg.evaluate.k,
                    cfg.evaluate.bins,
                )?)
            }
            "scsampler" => Strategy::SCSampler(build_sampler(cfg)?),
            other => {
                return Err(Error::config(
                    "evaluate.strategies",
                    format!("unknown strategy `{other}`"),
                ))
            }
        });
    }
    Ok(out)
}

fn eval_options(cfg: &ExperimentConfig) -> EvalOptions {
    EvalOptions {
        bins: cfg.evaluate.bins,
        cost: cfg.cost.clone(),
        workers: cfg.workers,
    }
}

fn write_reports(dir: &Path, reports: &[EvalReport], with_selections: bool) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut jsonl = Vec::new();
    for r in reports {
        write_report_jsonl(&mut jsonl, r).map_err(|e| Error::io(dir, e))?;
    }
    let mut csv = Vec::new();
    write_summary_csv(&mut csv, reports).map_err(|e| Error::io(dir, e))?;
    let mut paths = vec![dir.join("reports.jsonl"), dir.join("report.csv")];
    write_file(&paths[0], &jsonl)?;
    write_file(&paths[1], &csv)?;
    if with_selections {
        let mut sel = Vec::new();
        for r in reports {
            for v in &r.videos {
                let line = serde_json::json!({
                    "video_id": v.id,
                    "strategy": r.label(),
                    "K": r.k,
                    "N": r.n,
                    "indices": v.indices,
                });
                serde_json::to_writer(&mut sel, &line).map_err(|e| Error::io(dir, e.into()))?;
                sel.write_all(b"\n").map_err(|e| Error::io(dir, e))?;
            }
        }
        paths.push(dir.join("selections.jsonl"));
        write_file(&paths[2], &sel)?;
    }
    Ok(paths)
}

/// One report per configured strategy at the configured K and N.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<Vec<EvalReport>> {
    cfg.check()?;
    let test = Dataset::load(cfg.test_path()?)?;
    let f = load_classifier(cfg, &test)?;
    let strategies = build_strategies(cfg)?;
    let opts = eval_options(cfg);
    let reports = strategies
        .iter()
        .map(|s| evaluate_strategy(&test, f.as_ref(), s, cfg.evaluate.k, cfg.evaluate.n, cfg.seed, &opts))
        .collect::<Result<Vec<_>>>()?;
    write_reports(&cfg.output_dir.join("evaluate"), &reports, true)?;
    Ok(reports)
}

/// One report per (strategy, swept value). Fusion parameters are swept for
/// fused samplers only; other strategies are skipped for those sweeps.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Vec<EvalReport>> {
    cfg.check()?;
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::config("sweep", "a [sweep] section with parameter and values is required"))?;
    if spec.is_empty() {
        return Err(Error::config("sweep.values", "at least one value required"));
    }
    let test = Dataset::load(cfg.test_path()?)?;
    let f = load_classifier(cfg, &test)?;
    let strategies = build_strategies(cfg)?;
    let opts = eval_options(cfg);
    let fusion_only = matches!(spec, SweepSpec::Alpha(_) | SweepSpec::KPrime(_));
    let mut reports = Vec::new();
    for s in &strategies {
        if fusion_only && !matches!(s, Strategy::SCSampler(Sampler { fusion: Some(_), .. })) {
            log::warn!("skipping {} for a fusion-parameter sweep", s.name());
            continue;
        }
        reports.extend(sweep(
            &test,
            f.as_ref(),
            s,
            cfg.evaluate.k,
            cfg.evaluate.n,
            cfg.seed,
            spec,
            &opts,
        )?);
    }
    write_reports(&cfg.output_dir.join("sweep"), &reports, false)?;
    Ok(reports)
}

/// Validation findings per manifest; an empty map means everything is valid.
pub fn cmd_validate(manifests: &[PathBuf]) -> Result<BTreeMap<PathBuf, Vec<String>>> {
    if manifests.is_empty() {
        return Err(Error::config("validate", "no manifests given"));
    }
    let mut out = BTreeMap::new();
    for p in manifests {
        let m = load_manifest(p)?;
        let v = validate_dataset(&m)?;
        if !v.is_empty() {
            out.insert(p.clone(), v.iter().map(ToString::to_string).collect());
        }
    }
    Ok(out)
}

/// Manifests named by the config's `data` section.
pub fn config_manifests(cfg: &ExperimentConfig) -> Vec<PathBuf> {
    cfg.data.train.iter().chain(&cfg.data.test).cloned().collect()
}

/// Summary table printed by `evaluate` and `sweep`.
pub fn format_reports(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    for r in reports {
        s.push_str(&format!(
            "{:<40} K={:<3} N={:<3} accuracy={:.4} gflops/video={:.3}\n",
            r.label(),
            r.k,
            r.n,
            r.accuracy,
            r.gflops_per_video
        ));
    }
    s
}
