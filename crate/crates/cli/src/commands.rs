use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use amtl::corpus::{corpus_stats, generate_corpus, Corpus, LabeledUtterance, Split};
use amtl::eval::{compare_modes, probe_dataset, train_probe, ModeComparison, ModeResult, ProbeReport, ProbeTarget};
use amtl::formats::{corpus_from_entries, read_archive, write_archive, write_atomic, Checkpoint, TrainPosition};
use amtl::frontend::{mfcc, read_wav};
use amtl::model::{AmtlModel, Mode};
use amtl::trainer::{run_training_from, RepeatReport};
use serde::{Deserialize, Serialize};

use crate::config::{differing_keys, RunConfig};
use crate::error::{CliError, Result};
use crate::lock::OutputLock;
use crate::metrics::{append_jsonl, csv_text, flat_rows, read_jsonl, write_jsonl, MetricRow};

/// Creates and locks `out`, then refuses to touch earlier results unless
/// `force` (which deletes exactly the `known` entries) or `resume` is set.
fn prepare_out(out: &Path, known: &[String], force: bool, resume: bool) -> Result<OutputLock> {
    let lock = OutputLock::acquire(out)?;
    let existing: Vec<&String> = known.iter().filter(|k| out.join(k).exists()).collect();
    if existing.is_empty() || resume {
        return Ok(lock);
    }
    if !force {
        return Err(CliError::Usage(format!(
            "{} already holds results ({}); pass --force to replace them or --resume to continue",
            out.display(),
            existing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        )));
    }
    for name in existing {
        let p = out.join(name);
        if p.is_dir() {
            std::fs::remove_dir_all(&p)?;
        } else {
            std::fs::remove_file(&p)?;
        }
    }
    Ok(lock)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &'static str) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Core(amtl::Error::format(what, format!("{}: {e}", path.display()))))
}

// ---------------------------------------------------------------- synth

pub const SYNTH_OUTPUTS: [&str; 8] = [
    "train.json",
    "train.f32",
    "dev.json",
    "dev.f32",
    "test.json",
    "test.f32",
    "stats.json",
    "config.json",
];

/// Generates the synthetic corpus into `out` as one archive per split.
pub fn synth(cfg: &RunConfig, out: &Path, force: bool) -> Result<amtl::corpus::CorpusStats> {
    cfg.corpus.validate()?;
    let known: Vec<String> = SYNTH_OUTPUTS.iter().map(|s| s.to_string()).collect();
    let _lock = prepare_out(out, &known, force, false)?;
    let corpus = generate_corpus(&cfg.corpus)?;
    for split in Split::ALL {
        let utts: Vec<(Split, &LabeledUtterance)> = corpus.split(split).iter().map(|u| (split, u)).collect();
        write_archive(out, split.as_str(), &utts)?;
    }
    let stats = corpus_stats(&corpus, cfg.corpus.n_senones, cfg.corpus.n_age_groups);
    write_json(&out.join("stats.json"), &stats)?;
    write_atomic(&out.join("config.json"), cfg.to_json().as_bytes())?;
    Ok(stats)
}

// ---------------------------------------------------------------- mfcc

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelFile {
    pub utterances: Vec<LabelEntry>,
}

/// Labels of one recording. Senones come either as a list or as a
/// whitespace-separated string, one per MFCC frame.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelEntry {
    pub id: String,
    pub wav: PathBuf,
    pub split: Split,
    pub speaker: usize,
    pub age_group: usize,
    #[serde(default)]
    pub senones: Option<Vec<usize>>,
    #[serde(default)]
    pub senone_string: Option<String>,
}

impl LabelEntry {
    fn senones(&self) -> std::result::Result<Vec<usize>, String> {
        match (&self.senones, &self.senone_string) {
            (Some(v), None) => Ok(v.clone()),
            (None, Some(s)) => s
                .split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| format!("bad senone label `{t}`")))
                .collect(),
            (Some(_), Some(_)) => Err("give either `senones` or `senone_string`, not both".into()),
            (None, None) => Err("missing `senones` or `senone_string`".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfccSummary {
    pub written: usize,
    /// `(utterance id, reason)` for every recording that was skipped.
    pub failures: Vec<(String, String)>,
}

pub const MFCC_OUTPUTS: [&str; 3] = ["features.json", "features.f32", "config.json"];

fn extract_one(entry: &LabelEntry, wav_dir: &Path, cfg: &RunConfig) -> std::result::Result<LabeledUtterance, String> {
    let audio = read_wav(&wav_dir.join(&entry.wav)).map_err(|e| e.to_string())?;
    if audio.sample_rate != cfg.mfcc.sample_rate {
        return Err(format!(
            "sample rate {} Hz, configuration expects {} Hz",
            audio.sample_rate, cfg.mfcc.sample_rate
        ));
    }
    let features = mfcc(&audio, &cfg.mfcc).map_err(|e| e.to_string())?;
    let senones = entry.senones()?;
    if senones.len() != features.rows() {
        return Err(format!(
            "{} senone labels for {} frames",
            senones.len(),
            features.rows()
        ));
    }
    Ok(LabeledUtterance {
        id: entry.id.clone(),
        features,
        senones,
        speaker: entry.speaker,
        age_group: entry.age_group,
    })
}

/// Extracts MFCCs for every labelled recording into `out/features.*`.
/// A bad recording is reported and skipped; the rest are still written.
pub fn extract_mfcc(cfg: &RunConfig, wav_dir: &Path, labels: &Path, out: &Path, force: bool) -> Result<MfccSummary> {
    cfg.mfcc.validate()?;
    let labels: LabelFile = read_json(labels, "label file")?;
    let known: Vec<String> = MFCC_OUTPUTS.iter().map(|s| s.to_string()).collect();
    let _lock = prepare_out(out, &known, force, false)?;
    let mut utts = Vec::new();
    let mut failures = Vec::new();
    for entry in &labels.utterances {
        match extract_one(entry, wav_dir, cfg) {
            Ok(u) => utts.push((entry.split, u)),
            Err(reason) => failures.push((entry.id.clone(), reason)),
        }
    }
    if !utts.is_empty() {
        let refs: Vec<(Split, &LabeledUtterance)> = utts.iter().map(|(s, u)| (*s, u)).collect();
        write_archive(out, "features", &refs)?;
        write_atomic(&out.join("config.json"), cfg.to_json().as_bytes())?;
    }
    Ok(MfccSummary {
        written: utts.len(),
        failures,
    })
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub out: PathBuf,
    pub force: bool,
    pub resume: bool,
}

/// One training run: a mode and the `alpha_max` it uses.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub name: String,
    pub mode: Mode,
    pub alpha_max: f64,
}

/// BASELINE, AGE and SPK run once; AGE_SPK runs once per swept α, or once
/// at the schedule's α when there is no sweep.
pub fn plan_runs(cfg: &RunConfig) -> Vec<RunPlan> {
    let mut plans = Vec::new();
    for mode in Mode::ALL.into_iter().filter(|m| cfg.modes.contains(m)) {
        if mode == Mode::AgeSpk && !cfg.alpha_sweep.is_empty() {
            for &a in &cfg.alpha_sweep {
                plans.push(RunPlan {
                    name: format!("AGE_SPK_alpha{a}"),
                    mode,
                    alpha_max: a,
                });
            }
        } else {
            plans.push(RunPlan {
                name: mode.as_str().to_string(),
                mode,
                alpha_max: cfg.schedule.alpha_max,
            });
        }
    }
    plans
}

/// Loads the archives named in the config, or generates the synthetic corpus.
pub fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    if cfg.archives.is_empty() {
        return Ok(generate_corpus(&cfg.corpus)?);
    }
    let mut entries = Vec::new();
    for a in &cfg.archives {
        entries.extend(read_archive(a)?);
    }
    Ok(corpus_from_entries(entries))
}

/// Archive manifests under `data`: the file itself, or the split archives
/// written by `synth` and the `features` archive written by `mfcc`.
pub fn data_archives(data: &Path) -> Result<Vec<PathBuf>> {
    if data.is_file() {
        return Ok(vec![data.to_path_buf()]);
    }
    let found: Vec<PathBuf> = ["train.json", "dev.json", "test.json", "features.json"]
        .iter()
        .map(|n| data.join(n))
        .filter(|p| p.is_file())
        .collect();
    if found.is_empty() {
        return Err(CliError::Usage(format!("no feature archives found in {}", data.display())));
    }
    Ok(found)
}

/// Sets the model's input and output sizes from the data it will see.
pub fn fit_model_to_data(cfg: &mut RunConfig, corpus: &Corpus) -> Result<()> {
    let all = || Split::ALL.iter().flat_map(|&s| corpus.split(s));
    let first = corpus
        .train
        .first()
        .ok_or_else(|| CliError::Core(amtl::Error::Data("training split is empty".into())))?;
    cfg.model.input_dim = first.features.cols();
    cfg.model.n_senones = all().flat_map(|u| u.senones.iter()).max().map_or(0, |m| m + 1);
    cfg.model.n_speakers = corpus.train.iter().map(|u| u.speaker).max().map_or(0, |m| m + 1);
    cfg.model.n_age_groups = all().map(|u| u.age_group).max().map_or(0, |m| m + 1);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeFile {
    pub run: String,
    pub mode: Mode,
    pub alpha_max: f64,
    /// Repeat whose parameters were probed: the one with the lowest dev FER.
    pub best_repeat: usize,
    pub probes: Vec<ProbeReport>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub plan: RunPlan,
    pub dir: PathBuf,
    pub reports: Vec<RepeatReport>,
    pub probes: Option<ProbeFile>,
    /// Set when training stopped early; `reports` then holds the repeats
    /// that completed.
    pub failure: Option<amtl::Error>,
}

impl RunOutcome {
    pub fn best(&self) -> Option<&RepeatReport> {
        self.reports.iter().filter(|r| r.best_dev).last()
    }
}

#[derive(Debug)]
pub struct TrainSummary {
    pub runs: Vec<RunOutcome>,
    pub comparison: Option<ModeComparison>,
    pub sweep_table: Option<String>,
}

const RUN_OUTPUTS: [&str; 6] = ["config.json", "metrics.jsonl", "metrics.csv", "checkpoints", "probes.json", "timing.log"];
const TOP_OUTPUTS: [&str; 5] = ["config.json", "comparison.txt", "comparison.json", "sweep.txt", "metrics.csv"];

fn run_probes(model: &AmtlModel, corpus: &Corpus, cfg: &RunConfig) -> Result<Vec<ProbeReport>> {
    let mut out = Vec::new();
    for target in [ProbeTarget::Speaker, ProbeTarget::Age] {
        let data = probe_dataset(Some(model), &corpus.train, target)?;
        out.push(train_probe(&data, &cfg.probe)?);
    }
    Ok(out)
}

fn log_timing(dir: &Path, rep: &RepeatReport) -> Result<()> {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(dir.join("timing.log"))?;
    writeln!(f, "unix={now} repeat={} wall_time_secs={:.3}", rep.repeat, rep.wall_time_secs)?;
    Ok(())
}

fn train_one(plan: &RunPlan, base: &RunConfig, corpus: &Corpus, resume: bool, dir: &Path) -> Result<RunOutcome> {
    let cfg = base.for_run(plan.mode, plan.alpha_max);
    let ck_dir = dir.join("checkpoints");
    let last = ck_dir.join("last.json");
    let jsonl = dir.join("metrics.jsonl");

    let (mut model, prior) = if resume && last.is_file() {
        let existing: RunConfig = read_json(&dir.join("config.json"), "run config")?;
        let mut diff = differing_keys(&existing, &cfg);
        if existing.schedule.alpha_max != cfg.schedule.alpha_max || existing.model.mode != cfg.model.mode {
            diff.push("mode/alpha_max".into());
        }
        if !diff.is_empty() {
            return Err(CliError::Usage(format!(
                "cannot resume {}: configuration differs in {}",
                dir.display(),
                diff.join(", ")
            )));
        }
        let ck = Checkpoint::load(&last)?;
        let done = ck.position.completed_repeats;
        let mut prior = read_jsonl(&jsonl)?;
        if prior.len() < done {
            return Err(CliError::Core(amtl::Error::Data(format!(
                "{} has {} repeats but the checkpoint records {done}",
                jsonl.display(),
                prior.len()
            ))));
        }
        prior.truncate(done);
        write_jsonl(&jsonl, &prior)?;
        (ck.restore()?, prior)
    } else {
        for name in RUN_OUTPUTS {
            let p = dir.join(name);
            if p.is_dir() {
                std::fs::remove_dir_all(&p)?;
            } else if p.exists() {
                std::fs::remove_file(&p)?;
            }
        }
        (AmtlModel::new(cfg.model.clone(), cfg.schedule.seed)?, vec![])
    };
    std::fs::create_dir_all(&ck_dir)?;
    write_atomic(&dir.join("config.json"), cfg.to_json().as_bytes())?;

    let mut all = prior.clone();
    let epochs = cfg.schedule.epochs_per_phase;
    let result = run_training_from(&mut model, corpus, &cfg.schedule, &prior, |m, rep| {
        append_jsonl(&jsonl, rep).map_err(into_core)?;
        all.push(rep.clone());
        let rows = flat_rows(&plan.name, plan.alpha_max, &all);
        write_atomic(&dir.join("metrics.csv"), csv_text(&rows).as_bytes())?;
        let ck = Checkpoint::capture(
            m,
            TrainPosition {
                completed_repeats: rep.repeat + 1,
                epoch: epochs,
            },
        );
        if rep.best_dev {
            save_checkpoint(&ck, &ck_dir, "best", rep.repeat)?;
        }
        save_checkpoint(&ck, &ck_dir, "last", rep.repeat)?;
        log_timing(dir, rep).map_err(into_core)?;
        Ok(())
    });
    let failure = match result {
        Ok(_) => None,
        Err(e @ amtl::Error::NonFinite(_)) => Some(e),
        Err(e) => return Err(e.into()),
    };
    // A run that ended before training anything still gets an empty table.
    if !dir.join("metrics.csv").exists() {
        write_atomic(&dir.join("metrics.csv"), csv_text(&[]).as_bytes())?;
    }

    let mut outcome = RunOutcome {
        plan: plan.clone(),
        dir: dir.to_path_buf(),
        reports: all,
        probes: None,
        failure,
    };
    if let Some(best) = outcome.best() {
        let best_repeat = best.repeat;
        let model = Checkpoint::load(&ck_dir.join("best.json"))?.restore()?;
        outcome.probes = Some(ProbeFile {
            run: plan.name.clone(),
            mode: plan.mode,
            alpha_max: plan.alpha_max,
            best_repeat,
            probes: run_probes(&model, corpus, &cfg)?,
        });
    }
    Ok(outcome)
}

/// Writes `<stem>.json` with a payload named after the repeat, then removes
/// older payloads of the same stem. The manifest is replaced atomically and
/// only ever names a payload that is already complete, so a crash at any
/// point leaves a loadable checkpoint.
fn save_checkpoint(ck: &Checkpoint, dir: &Path, stem: &str, repeat: usize) -> amtl::Result<()> {
    let payload_name = format!("{stem}-r{repeat:04}.f32");
    let (manifest, payload) = ck.encode(&payload_name)?;
    write_atomic(&dir.join(&payload_name), &payload)?;
    write_atomic(&dir.join(format!("{stem}.json")), manifest.as_bytes())?;
    let prefix = format!("{stem}-r");
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if name.starts_with(&prefix) && name.ends_with(".f32") && name != payload_name {
            std::fs::remove_file(dir.join(name))?;
        }
    }
    Ok(())
}

fn into_core(e: CliError) -> amtl::Error {
    match e {
        CliError::Core(e) => e,
        other => amtl::Error::Data(other.to_string()),
    }
}

/// Attaches BASELINE probe accuracies as the reference of every run.
fn attach_references(runs: &mut [RunOutcome], baseline: &[ProbeReport]) {
    for run in runs {
        if let Some(pf) = &mut run.probes {
            for p in &mut pf.probes {
                if let Some(b) = baseline.iter().find(|b| b.target == p.target) {
                    *p = p.clone().with_reference(b.probe_accuracy);
                }
            }
        }
    }
}

pub fn sweep_table(runs: &[RunOutcome]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>6} {:>9} {:>9} {:>9} {:>9}  note",
        "alpha_max", "best", "dev FER", "test FER", "last dev", "last test"
    );
    for run in runs.iter().filter(|r| r.plan.mode == Mode::AgeSpk) {
        let (Some(best), Some(last)) = (run.best(), run.reports.last()) else {
            let _ = writeln!(out, "{:<10} no completed repeats", run.plan.alpha_max);
            continue;
        };
        let note = match &run.failure {
            Some(_) => format!("diverged in repeat {}", last.repeat + 1),
            None => String::new(),
        };
        let _ = writeln!(
            out,
            "{:<10} {:>6} {:>8.2}% {:>8.2}% {:>8.2}% {:>8.2}%  {note}",
            run.plan.alpha_max,
            best.repeat,
            100.0 * best.dev.overall_fer,
            100.0 * best.test.overall_fer,
            100.0 * last.dev.overall_fer,
            100.0 * last.test.overall_fer,
        );
    }
    out
}

/// Trains every planned run into `opts.out/<run name>` and writes the
/// cross-run tables. Runs that diverge keep their completed repeats and do
/// not stop the others; see `RunOutcome::failure`.
pub fn train(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainSummary> {
    let plans = plan_runs(cfg);
    if plans.is_empty() {
        return Err(CliError::Usage("no modes selected".into()));
    }
    let mut known: Vec<String> = TOP_OUTPUTS.iter().map(|s| s.to_string()).collect();
    known.extend(plans.iter().map(|p| p.name.clone()));
    let _lock = prepare_out(&opts.out, &known, opts.force, opts.resume)?;

    let corpus = load_corpus(cfg)?;
    let mut cfg = cfg.clone();
    fit_model_to_data(&mut cfg, &corpus)?;
    cfg.schedule.validate()?;
    cfg.model.validate()?;
    write_atomic(&opts.out.join("config.json"), cfg.to_json().as_bytes())?;

    let mut runs = Vec::new();
    for plan in &plans {
        let dir = opts.out.join(&plan.name);
        std::fs::create_dir_all(&dir)?;
        runs.push(train_one(plan, &cfg, &corpus, opts.resume, &dir)?);
    }

    let baseline = runs
        .iter()
        .find(|r| r.plan.mode == Mode::Baseline)
        .and_then(|r| r.probes.as_ref())
        .map(|p| p.probes.clone());
    if let Some(b) = baseline {
        attach_references(&mut runs, &b);
    }
    for run in &runs {
        if let Some(p) = &run.probes {
            write_json(&run.dir.join("probes.json"), p)?;
        }
    }

    let mut rows: Vec<MetricRow> = Vec::new();
    for run in &runs {
        rows.extend(flat_rows(&run.plan.name, run.plan.alpha_max, &run.reports));
    }
    write_atomic(&opts.out.join("metrics.csv"), csv_text(&rows).as_bytes())?;

    let results: Vec<ModeResult> = runs
        .iter()
        // Under a sweep only the AGE_SPK run at the configured α joins the
        // mode comparison.
        .filter(|r| r.plan.mode != Mode::AgeSpk || cfg.alpha_sweep.is_empty() || r.plan.alpha_max == cfg.schedule.alpha_max)
        .filter_map(|r| {
            r.best().map(|b| ModeResult {
                mode: r.plan.mode,
                dev: b.dev.clone(),
                test: b.test.clone(),
            })
        })
        .collect();
    let comparison = compare_modes(&results).ok();
    if let Some(c) = &comparison {
        write_atomic(&opts.out.join("comparison.txt"), c.to_table().as_bytes())?;
        write_json(&opts.out.join("comparison.json"), c)?;
    }
    let sweep = (!cfg.alpha_sweep.is_empty()).then(|| sweep_table(&runs));
    if let Some(s) = &sweep {
        write_atomic(&opts.out.join("sweep.txt"), s.as_bytes())?;
    }
    Ok(TrainSummary {
        runs,
        comparison,
        sweep_table: sweep,
    })
}

// ---------------------------------------------------------------- report

#[derive(Debug)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub reports: Vec<RepeatReport>,
    pub probes: Option<ProbeFile>,
}

impl LoadedRun {
    pub fn load(dir: &Path) -> Result<Self> {
        let config: RunConfig = read_json(&dir.join("config.json"), "run config")?;
        let reports = read_jsonl(&dir.join("metrics.jsonl"))?;
        let probes_path = dir.join("probes.json");
        let probes = if probes_path.is_file() {
            Some(read_json(&probes_path, "probe report")?)
        } else {
            None
        };
        Ok(LoadedRun {
            dir: dir.to_path_buf(),
            config,
            reports,
            probes,
        })
    }

    pub fn name(&self) -> String {
        self.dir
            .file_name()
            .map_or_else(|| self.dir.display().to_string(), |n| n.to_string_lossy().into_owned())
    }

    fn best(&self) -> Option<&RepeatReport> {
        self.reports.iter().filter(|r| r.best_dev).last()
    }
}

/// Summarizes finished runs side by side. All runs must come from the same
/// experiment: their configurations may differ only in mode and `alpha_max`.
/// With `out`, also writes the combined flat metrics table there.
pub fn report(run_dirs: &[PathBuf], out: Option<&Path>) -> Result<String> {
    if run_dirs.is_empty() {
        return Err(CliError::Usage("report needs at least one run directory".into()));
    }
    let runs: Vec<LoadedRun> = run_dirs.iter().map(|d| LoadedRun::load(d)).collect::<Result<_>>()?;
    for r in &runs[1..] {
        let diff = differing_keys(&runs[0].config, &r.config);
        if !diff.is_empty() {
            return Err(CliError::Usage(format!(
                "{} and {} are not comparable; configurations differ in: {}",
                runs[0].dir.display(),
                r.dir.display(),
                diff.join(", ")
            )));
        }
    }

    let mut text = String::new();
    for r in &runs {
        let _ = writeln!(
            text,
            "== {} ({}, alpha_max {})",
            r.name(),
            r.config.schedule.mode,
            r.config.schedule.alpha_max
        );
        let _ = writeln!(text, "{:>6} {:>9} {:>9} {:>9}", "repeat", "alpha", "dev FER", "test FER");
        for rep in &r.reports {
            let _ = writeln!(
                text,
                "{:>6} {:>9.5} {:>8.2}% {:>8.2}%{}",
                rep.repeat,
                rep.alpha_effective,
                100.0 * rep.dev.overall_fer,
                100.0 * rep.test.overall_fer,
                if rep.best_dev { " *" } else { "" }
            );
        }
        text.push('\n');
    }

    let results: Vec<ModeResult> = runs
        .iter()
        .filter_map(|r| {
            r.best().map(|b| ModeResult {
                mode: r.config.schedule.mode,
                dev: b.dev.clone(),
                test: b.test.clone(),
            })
        })
        .collect();
    if let Ok(c) = compare_modes(&results) {
        let _ = writeln!(text, "== best-dev comparison\n{}", c.to_table());
    }

    let mut ages: BTreeMap<usize, ()> = BTreeMap::new();
    for r in &runs {
        if let Some(b) = r.best() {
            for a in &b.test.per_age_fer {
                ages.insert(a.age_group, ());
            }
        }
    }
    if !ages.is_empty() {
        let _ = write!(text, "== test FER by age group (best dev)\n{:<22}", "run");
        for g in ages.keys() {
            let _ = write!(text, " {:>8}", format!("age{g}"));
        }
        text.push('\n');
        for r in &runs {
            let Some(b) = r.best() else { continue };
            let _ = write!(text, "{:<22}", r.name());
            for g in ages.keys() {
                match b.test.per_age_fer.iter().find(|a| a.age_group == *g) {
                    Some(a) => {
                        let _ = write!(text, " {:>7.2}%", 100.0 * a.fer);
                    }
                    None => {
                        let _ = write!(text, " {:>8}", "-");
                    }
                }
            }
            text.push('\n');
        }
        text.push('\n');
    }

    if runs.iter().any(|r| r.probes.is_some()) {
        let _ = writeln!(
            text,
            "== probes on G features\n{:<22} {:<8} {:>8} {:>8} {:>10}",
            "run", "target", "accuracy", "chance", "invariance"
        );
        for r in &runs {
            let Some(pf) = &r.probes else { continue };
            for p in &pf.probes {
                let inv = p.invariance_score.map_or("-".to_string(), |v| format!("{v:.3}"));
                let _ = writeln!(
                    text,
                    "{:<22} {:<8} {:>8.3} {:>8.3} {:>10}",
                    r.name(),
                    p.target.as_str(),
                    p.probe_accuracy,
                    p.chance_level,
                    inv
                );
            }
        }
    }

    if let Some(out) = out {
        let mut rows = Vec::new();
        for r in &runs {
            rows.extend(flat_rows(&r.name(), r.config.schedule.alpha_max, &r.reports));
        }
        std::fs::create_dir_all(out)?;
        write_atomic(&out.join("report.csv"), csv_text(&rows).as_bytes())?;
        write_atomic(&out.join("report.txt"), text.as_bytes())?;
    }
    Ok(text)
}
