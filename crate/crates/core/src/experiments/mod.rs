//! Four-fold partitions, the 21 train→test conditions and the matrix runner.

mod summary;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use summary::{kiviat_svg, summarize, ConditionSummary, MetricSummary, RegionSummary, Summary};

use crate::architectures::{build_model, fnv1a, save_checkpoint, ModelSpec, ModelState, Variant};
use crate::dataset::{center_crop, generate_phantoms, load_dataset_with_manifest, mask_to_wg, preprocess_patient, to_canvas, Dataset, PatientCase, PhantomConfig};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_patient, read_metrics_csv, write_metrics_csv, MetricsRecord, MetricsRow, Region};
use crate::postprocess::{derive_pz, postprocess_prediction};
use crate::training::{predict, train, TrainConfig};

pub const FOLDS: usize = 4;

/// Contiguous 0-based patient indices per fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn patient_count(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    /// Patients outside fold `round`.
    pub fn train_indices(&self, round: usize) -> Vec<usize> {
        self.folds.iter().enumerate().filter(|&(f, _)| f != round).flat_map(|(_, v)| v.iter().copied()).collect()
    }

    pub fn test_indices(&self, round: usize) -> &[usize] {
        &self.folds[round]
    }
}

/// Four contiguous folds of `⌊n/4⌋` patients with the remainder in the last
/// fold; 19 patients split 5/5/5/4.
pub fn make_folds(n: usize) -> Result<FoldPlan> {
    if n < FOLDS {
        return Err(Error::InvalidArgument(format!("{n} patients cannot fill {FOLDS} folds")));
    }
    let sizes = if n == 19 {
        vec![5, 5, 5, 4]
    } else {
        let base = n / FOLDS;
        vec![base, base, base, n - 3 * base]
    };
    let mut start = 0;
    let folds = sizes
        .into_iter()
        .map(|s| {
            let fold = (start..start + s).collect();
            start += s;
            fold
        })
        .collect();
    Ok(FoldPlan { folds })
}

/// Dataset index subsets in spoke order: #1, #2, #3, #1/#2, #1/#3, #2/#3,
/// #1/#2/#3.
pub const TRAINING_SETS: [&[usize]; 7] = [&[0], &[1], &[2], &[0, 1], &[0, 2], &[1, 2], &[0, 1, 2]];

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Condition {
    /// Position on the Kiviat chart, 1..=21.
    pub spoke: usize,
    pub training: Vec<String>,
    pub test: String,
}

impl Condition {
    /// Roman numeral of the spoke.
    pub fn id(&self) -> String {
        roman(self.spoke)
    }

    pub fn label(&self) -> String {
        format!("{} -> {}", self.training.join("/"), self.test)
    }

    pub fn tests_in_training(&self) -> bool {
        self.training.contains(&self.test)
    }
}

pub fn roman(mut n: usize) -> String {
    const TABLE: [(usize, &str); 9] = [(100, "C"), (90, "XC"), (50, "L"), (40, "XL"), (10, "X"), (9, "IX"), (5, "V"), (4, "IV"), (1, "I")];
    let mut s = String::new();
    for &(v, sym) in &TABLE {
        while n >= v {
            s.push_str(sym);
            n -= v;
        }
    }
    s
}

/// The 21 conditions for three dataset tags: every training set in order,
/// each tested on all three datasets.
pub fn enumerate_conditions(tags: &[String]) -> Result<Vec<Condition>> {
    if tags.len() != 3 {
        return Err(Error::InvalidArgument(format!("expected 3 dataset tags, got {}", tags.len())));
    }
    if tags.iter().collect::<BTreeSet<_>>().len() != 3 {
        return Err(Error::InvalidArgument(format!("dataset tags must be distinct: {tags:?}")));
    }
    let mut out = Vec::with_capacity(21);
    for set in TRAINING_SETS {
        for test in tags {
            out.push(Condition {
                spoke: out.len() + 1,
                training: set.iter().map(|&i| tags[i].clone()).collect(),
                test: test.clone(),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Phantom(PhantomConfig),
    /// Three dataset roots in the PNG layout.
    Directories(Vec<PathBuf>),
}

/// Contents of `matrix.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixPlan {
    pub data: DataSource,
    #[serde(default = "all_variants")]
    pub methods: Vec<Variant>,
    /// Architecture hyper-parameters; `variant` is replaced per method.
    pub model: ModelSpec,
    pub train: TrainConfig,
    /// Common canvas every slice is cropped or padded to.
    pub canvas: (usize, usize),
    #[serde(default = "half")]
    pub threshold: f64,
    pub seed: u64,
}

fn all_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}

fn half() -> f64 {
    0.5
}

impl MatrixPlan {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods".into()));
        }
        if self.methods.iter().map(|m| m.name()).collect::<BTreeSet<_>>().len() != self.methods.len() {
            return Err(Error::InvalidConfig("duplicate methods".into()));
        }
        self.train.validate()?;
        if self.train.crop.0 > self.canvas.0 || self.train.crop.1 > self.canvas.1 {
            return Err(Error::InvalidConfig(format!("crop {:?} larger than canvas {:?}", self.train.crop, self.canvas)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidConfig("threshold must lie in [0, 1]".into()));
        }
        for &m in &self.methods {
            self.model.with_variant(m).validate()?;
        }
        let step = 1 << self.model.depth;
        if !self.train.crop.0.is_multiple_of(step) || !self.train.crop.1.is_multiple_of(step) {
            return Err(Error::InvalidConfig(format!("crop {:?} not divisible by 2^{}", self.train.crop, self.model.depth)));
        }
        Ok(())
    }

    pub fn load_datasets(&self) -> Result<Vec<Dataset>> {
        let sets = match &self.data {
            DataSource::Phantom(cfg) => generate_phantoms(cfg)?,
            DataSource::Directories(dirs) => dirs.iter().map(|d| load_dataset_with_manifest(d)).collect::<Result<_>>()?,
        };
        if sets.len() != 3 {
            return Err(Error::InvalidConfig(format!("the matrix needs 3 datasets, got {}", sets.len())));
        }
        Ok(sets)
    }
}

/// CG and PZ patient-level records, or `None` if the patient has no slice
/// with a gland.
pub fn evaluate_patient(model: &ModelState, patient: &PatientCase, canvas: (usize, usize), crop: (usize, usize), threshold: f64) -> Result<Option<[MetricsRecord; 2]>> {
    let mut cg = Vec::new();
    let mut pz = Vec::new();
    for slice in &patient.slices {
        let Some(s) = mask_to_wg(&to_canvas(slice, canvas)).into_masked() else {
            continue;
        };
        let s = center_crop(&s, crop);
        let prob = predict(model, &s.image)?;
        let pred = postprocess_prediction(&prob, &s.wg, threshold);
        cg.push(MetricsRecord::slice(Region::Cg, &pred.cg, &s.cg));
        pz.push(MetricsRecord::slice(Region::Pz, &pred.pz, &derive_pz(&s.wg, &s.cg)));
    }
    Ok(aggregate_patient(&cg).zip(aggregate_patient(&pz)).map(|(a, b)| [a, b]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub method: Variant,
    pub condition: Condition,
    /// Patient-level rows of all rounds.
    pub rows: Vec<MetricsRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub method: Variant,
    pub condition: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobTiming {
    pub method: Variant,
    pub training: String,
    pub seconds: f64,
    pub resumed: bool,
}

#[derive(Clone, Debug)]
pub struct MatrixOutcome {
    pub results: Vec<ConditionResult>,
    pub failures: Vec<Failure>,
    pub summary: Summary,
    pub timings: Vec<JobTiming>,
}

fn derived_seed(seed: u64, key: &str) -> u64 {
    seed ^ fnv1a(key.as_bytes())
}

fn csv_path(out: &Path, method: Variant, cond: &Condition) -> PathBuf {
    out.join("results").join(method.name()).join(format!("{}.csv", cond.id()))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Job {
    method: Variant,
    set: usize,
}

/// Trains every (method, training set) pair for four rounds, tests it on all
/// three datasets, and writes per-condition CSVs, `summary.json`,
/// `timings.json` and SVG charts under `out`. Conditions whose CSV already
/// exists are read back instead of recomputed.
pub fn run_matrix(plan: &MatrixPlan, out: &Path, workers: usize) -> Result<MatrixOutcome> {
    plan.validate()?;
    let datasets = plan.load_datasets()?;
    let tags: Vec<String> = datasets.iter().map(|d| d.tag().to_string()).collect();
    let conditions = enumerate_conditions(&tags)?;
    let folds: Vec<FoldPlan> = datasets.iter().map(|d| make_folds(d.patients.len())).collect::<Result<_>>()?;

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_atomic(&out.join("matrix.json"), &serde_json::to_vec_pretty(plan)?)?;
    for m in &plan.methods {
        let dir = out.join("results").join(m.name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let jobs: Vec<Job> = plan
        .methods
        .iter()
        .flat_map(|&method| (0..TRAINING_SETS.len()).map(move |set| Job { method, set }))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let ctx = JobContext {
        plan,
        datasets: &datasets,
        folds: &folds,
        conditions: &conditions,
        out,
    };
    let outcomes: Vec<(Vec<std::result::Result<ConditionResult, Failure>>, JobTiming)> =
        pool.install(|| jobs.par_iter().map(|job| ctx.run_job(job)).collect());

    let mut results = Vec::new();
    let mut failures = Vec::new();
    let mut timings = Vec::new();
    for (conds, timing) in outcomes {
        for c in conds {
            match c {
                Ok(r) => results.push(r),
                Err(f) => failures.push(f),
            }
        }
        timings.push(timing);
    }
    results.sort_by_key(|r| (plan.methods.iter().position(|&m| m == r.method), r.condition.spoke));

    let summary = summarize(&plan.methods, &conditions, &results, &failures)?;
    write_atomic(&out.join("summary.json"), &serde_json::to_vec_pretty(&summary)?)?;
    write_atomic(&out.join("timings.json"), &serde_json::to_vec_pretty(&timings)?)?;
    write_atomic(&out.join("kiviat.svg"), kiviat_svg(&summary, Region::Cg).as_bytes())?;
    write_atomic(&out.join("kiviat_pz.svg"), kiviat_svg(&summary, Region::Pz).as_bytes())?;
    for report in &summary.stats {
        if report.label == "cg/three-dataset" {
            write_atomic(&out.join("cd.svg"), crate::stats::cd_svg(report).as_bytes())?;
        }
        if report.label == "pz/three-dataset" {
            write_atomic(&out.join("cd_pz.svg"), crate::stats::cd_svg(report).as_bytes())?;
        }
    }
    Ok(MatrixOutcome {
        results,
        failures,
        summary,
        timings,
    })
}

struct JobContext<'a> {
    plan: &'a MatrixPlan,
    datasets: &'a [Dataset],
    folds: &'a [FoldPlan],
    conditions: &'a [Condition],
    out: &'a Path,
}

impl JobContext<'_> {
    fn job_conditions(&self, job: &Job) -> Vec<Condition> {
        self.conditions[job.set * 3..job.set * 3 + 3].to_vec()
    }

    fn run_job(&self, job: &Job) -> (Vec<std::result::Result<ConditionResult, Failure>>, JobTiming) {
        let conds = self.job_conditions(job);
        let start = Instant::now();
        let training = conds[0].training.join("/");
        let existing: Option<Vec<ConditionResult>> = conds
            .iter()
            .map(|c| {
                let path = csv_path(self.out, job.method, c);
                let rows = read_metrics_csv(fs::File::open(&path).ok()?).ok()?;
                Some(ConditionResult {
                    method: job.method,
                    condition: c.clone(),
                    rows,
                })
            })
            .collect();
        let resumed = existing.is_some();
        let results = match existing {
            Some(done) => done.into_iter().map(Ok).collect(),
            None => match self.compute_job(job, &conds) {
                Ok(done) => done.into_iter().map(Ok).collect(),
                Err(e) => {
                    log::error!("{} {}: {e}", job.method, training);
                    conds
                        .iter()
                        .map(|c| {
                            Err(Failure {
                                method: job.method,
                                condition: c.id(),
                                error: e.to_string(),
                            })
                        })
                        .collect()
                }
            },
        };
        let timing = JobTiming {
            method: job.method,
            training,
            seconds: start.elapsed().as_secs_f64(),
            resumed,
        };
        (results, timing)
    }

    fn compute_job(&self, job: &Job, conds: &[Condition]) -> Result<Vec<ConditionResult>> {
        let set = TRAINING_SETS[job.set];
        let key = conds[0].training.join("/");
        let spec = self.plan.model.with_variant(job.method);
        let ckpt_dir = self.out.join("results").join(job.method.name()).join(format!("train_{}", job.set + 1));
        fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
        let mut rows: Vec<Vec<MetricsRow>> = vec![Vec::new(); 3];

        for round in 0..FOLDS {
            let mut slices = Vec::new();
            let mut train_ids: BTreeSet<(usize, &str)> = BTreeSet::new();
            for &d in set {
                for idx in self.folds[d].train_indices(round) {
                    let p = &self.datasets[d].patients[idx];
                    train_ids.insert((d, &p.id));
                    slices.extend(preprocess_patient(p, self.plan.canvas));
                }
            }
            let model_seed = derived_seed(self.plan.seed, &format!("model/{key}/{round}"));
            let mut cfg = self.plan.train.clone();
            cfg.seed = derived_seed(self.plan.seed, &format!("train/{key}/{round}"));
            let model = train(build_model(&spec, model_seed)?, &slices, &cfg)?.model;
            save_checkpoint(&model, &ckpt_dir.join(format!("round_{}.ckpt", round + 1)))?;

            for (t, cond) in conds.iter().enumerate() {
                let test = &self.datasets[t];
                let patients: Vec<&PatientCase> = if set.contains(&t) {
                    self.folds[t].test_indices(round).iter().map(|&i| &test.patients[i]).collect()
                } else {
                    test.patients.iter().collect()
                };
                if let Some(p) = patients.iter().find(|p| train_ids.contains(&(t, p.id.as_str()))) {
                    return Err(Error::Leakage {
                        dataset: test.tag().to_string(),
                        patient: p.id.clone(),
                        round: round + 1,
                    });
                }
                let evaluated: Vec<Option<[MetricsRecord; 2]>> = patients
                    .par_iter()
                    .map(|p| evaluate_patient(&model, p, self.plan.canvas, cfg.crop, self.plan.threshold))
                    .collect::<Result<_>>()?;
                for (p, rec) in patients.iter().zip(evaluated) {
                    let Some(rec) = rec else {
                        log::warn!("{}: patient {} has no gland slices", test.tag(), p.id);
                        continue;
                    };
                    for r in &rec {
                        rows[t].push(MetricsRow::new(test.tag(), &cond.id(), round + 1, &p.id, r));
                    }
                }
            }
        }

        conds
            .iter()
            .zip(rows)
            .map(|(c, rows)| {
                let mut buf = Vec::new();
                write_metrics_csv(&mut buf, &rows)?;
                write_atomic(&csv_path(self.out, job.method, c), &buf)?;
                Ok(ConditionResult {
                    method: job.method,
                    condition: c.clone(),
                    rows,
                })
            })
            .collect()
    }
}

/// Default worker count: `ZONALSEG_WORKERS` or 1.
pub fn default_workers() -> usize {
    std::env::var("ZONALSEG_WORKERS").ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0).unwrap_or(1)
}
