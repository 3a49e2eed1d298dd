//! One replication of each task, and the artifacts it leaves on disk.

use std::fmt::Write as _;
use std::path::Path;

use bmicl::cl::{
    adaptation_depth_sweep, metrics, pretrain, run_cl_workflow_model, split_session, DepthSweepReport, Metrics,
    StrategyKind, WorkflowConfig, WorkflowReport,
};
use bmicl::data::SessionSequence;
use bmicl::dsp::TrialTensor;
use bmicl::nn::train::{evaluate, five_fold_cv, CvConfig, CvResult, TrainConfig};
use bmicl::nn::{checkpoint, init_model, train, AdaptationDepth, CrossEntropy};
use bmicl::odl::{mac_report, memory_report, FrozenBackbone, MacReport, MemoryBudget, OdlEngine, OdlPhaseReport, TrainableHead};
use bmicl::quant::{integerize, qat_train, QatConfig, QatReport};
use bmicl::Result;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Task};

pub const RUN_SCHEMA_VERSION: u32 = 1;

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("BMICL_GIT_DESCRIBE"), ")");

pub fn tool_version() -> String {
    format!("bmicl {VERSION}")
}

/// Everything one replication wrote, wrapped with the resolved experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport<T> {
    pub schema_version: u32,
    pub tool_version: String,
    pub task: Task,
    pub seed: u64,
    pub experiment: ExperimentConfig,
    pub result: T,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvSession {
    pub session: usize,
    pub n_trials: usize,
    pub cv: CvResult,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QatRun {
    pub report: QatReport,
    pub fp32_test_accuracy: Option<f64>,
    pub fake_quant_test_accuracy: Option<f64>,
    pub int8_test_accuracy: Option<f64>,
    pub backbone_sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OdlPhase {
    pub phase: String,
    pub n_s: usize,
    pub average: Metrics,
    pub newest: Metrics,
    pub per_session: Vec<Metrics>,
    /// Absent for the deployed session-1 model.
    pub training: Option<OdlPhaseReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OdlRun {
    pub backbone_sha256: String,
    pub memory: MemoryBudget,
    pub macs: MacReport,
    pub phases: Vec<OdlPhase>,
}

/// Per-replication outcome, kept for the cross-seed summary.
#[derive(Debug, Clone)]
pub enum Outcome {
    Cv(Vec<CvSession>),
    Workflow(Box<WorkflowReport>),
    Qat(Box<QatRun>),
    Odl(Box<OdlRun>),
    Depth(DepthSweepReport),
}

/// Workflow settings of one replication, with the model shaped to the data.
pub fn resolve(cfg: &ExperimentConfig, seq: &SessionSequence, seed: u64) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    c.seeds = vec![seed];
    c.workflow.seed = seed;
    c.odl.seed = seed;
    c.qat.train.seed = seed;
    let first = seq
        .sessions
        .iter()
        .flatten()
        .next()
        .ok_or_else(|| bmicl::Error::Data("no trials".into()))?;
    c.workflow.model.n_classes = seq.n_classes();
    c.workflow.model.n_channels = first.n_channels;
    c.workflow.model.n_samples = first.n_samples;
    if c.task == Task::TlWorkflow {
        c.workflow.strategy.kind = StrategyKind::NaiveTl;
    }
    Ok(c)
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), bytes)?;
    Ok(())
}

fn write_report<T: Serialize>(dir: &Path, cfg: &ExperimentConfig, seed: u64, result: T) -> Result<()> {
    let r = RunReport {
        schema_version: RUN_SCHEMA_VERSION,
        tool_version: tool_version(),
        task: cfg.task,
        seed,
        experiment: cfg.clone(),
        result,
    };
    write(dir, "report.json", serde_json::to_string_pretty(&r)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Run `cfg.task` for one seed, writing its artifacts under `dir`.
pub fn run_seed(cfg: &ExperimentConfig, seq: &SessionSequence, seed: u64, dir: &Path) -> Result<Outcome> {
    let cfg = resolve(cfg, seq, seed)?;
    match cfg.task {
        Task::WithinSessionCv => {
            let out = within_session_cv(&cfg, seq)?;
            let mut csv = String::from("seed,session,n_trials,fold,accuracy\n");
            for s in &out {
                for (k, a) in s.cv.fold_accuracies.iter().enumerate() {
                    writeln!(csv, "{seed},{},{},{},{a}", s.session, s.n_trials, k + 1).unwrap();
                }
            }
            write(dir, "report.csv", csv)?;
            write_report(dir, &cfg, seed, &out)?;
            Ok(Outcome::Cv(out))
        }
        Task::TlWorkflow | Task::ClWorkflow => {
            let pre = pretrain(seq, &cfg.workflow)?;
            let (report, model) = run_cl_workflow_model(seq, &cfg.workflow, &pre)?;
            write(dir, "report.csv", report.to_csv()?)?;
            write(dir, "model.bin", checkpoint::to_bytes(&model))?;
            write_report(dir, &cfg, seed, &report)?;
            Ok(Outcome::Workflow(Box::new(report)))
        }
        Task::Qat => {
            let (out, blob, float) = qat(&cfg, seq)?;
            let csv = format!(
                "seed,fp32_acc,fake_quant_acc,int8_acc\n{seed},{},{},{}\n",
                opt(out.fp32_test_accuracy),
                opt(out.fake_quant_test_accuracy),
                opt(out.int8_test_accuracy)
            );
            write(dir, "report.csv", csv)?;
            write(dir, "quantized.bin", blob)?;
            write(dir, "model.bin", float)?;
            write_report(dir, &cfg, seed, &out)?;
            Ok(Outcome::Qat(Box::new(out)))
        }
        Task::OdlSim => {
            let (out, blob, head) = odl(&cfg, seq)?;
            let mut csv = String::from("seed,strategy,phase,n_s,acc,pre,rec,spe,newest_acc\n");
            for p in &out.phases {
                writeln!(
                    csv,
                    "{seed},{:?},{},{},{},{},{},{},{}",
                    cfg.odl.strategy,
                    p.phase,
                    p.n_s,
                    opt(p.average.accuracy),
                    opt(p.average.precision),
                    opt(p.average.recall),
                    opt(p.average.specificity),
                    opt(p.newest.accuracy)
                )
                .unwrap();
            }
            write(dir, "report.csv", csv)?;
            write(dir, "quantized.bin", blob)?;
            write(dir, "head.bin", head)?;
            write(dir, "memory.json", out.memory.to_json()?)?;
            write_report(dir, &cfg, seed, &out)?;
            Ok(Outcome::Odl(Box::new(out)))
        }
        Task::DepthSweep => {
            let depths = cfg
                .depths
                .iter()
                .map(|d| AdaptationDepth::new(*d))
                .collect::<Result<Vec<_>>>()?;
            let out = adaptation_depth_sweep(seq, &depths, &cfg.workflow, &[seed])?;
            let mut csv = String::from("seed,depth,phase,acc\n");
            for r in &out.results {
                for (i, a) in r.per_seed[0].iter().enumerate() {
                    writeln!(csv, "{seed},{},M{},{}", r.depth.get(), i + 1, opt(*a)).unwrap();
                }
            }
            write(dir, "report.csv", csv)?;
            write_report(dir, &cfg, seed, &out)?;
            Ok(Outcome::Depth(out))
        }
    }
}

fn within_session_cv(cfg: &ExperimentConfig, seq: &SessionSequence) -> Result<Vec<CvSession>> {
    let w = &cfg.workflow;
    let cv = CvConfig {
        model: w.model.clone(),
        train: TrainConfig {
            epochs: cfg.cv.epochs,
            batch_size: w.strategy.batch_size,
            adam: w.adam,
            depth: AdaptationDepth::FULL,
            seed: w.seed,
        },
        folds: cfg.cv.folds,
    };
    (0..seq.n_sessions())
        .map(|s| {
            let set = seq.session(s);
            Ok(CvSession {
                session: s + 1,
                n_trials: set.len(),
                cv: five_fold_cv(&set, &cv)?,
            })
        })
        .collect()
}

fn accuracy(model: &bmicl::nn::Model<f32>, set: &[&TrialTensor]) -> Result<Option<f64>> {
    Ok(evaluate(model, set)?.confusion.accuracy())
}

/// Float training then QAT on session 1's train split, integerization, and
/// accuracy of all three models on its test split.
fn qat(cfg: &ExperimentConfig, seq: &SessionSequence) -> Result<(QatRun, Vec<u8>, Vec<u8>)> {
    let s1 = seq.session(0);
    let (tr, te) = split_session(&s1, &cfg.workflow.split)?;
    let mut model = init_model(&cfg.workflow.model, cfg.workflow.seed)?;
    let mut fp32_acc = None;
    if cfg.qat.fp32_epochs > 0 {
        let tc = TrainConfig {
            epochs: cfg.qat.fp32_epochs,
            ..cfg.qat.train.clone()
        };
        train(&mut model, &tr, &tc, &CrossEntropy)?;
        fp32_acc = accuracy(&model, &te)?;
    }
    let qc = QatConfig {
        fp32_epochs: 0,
        ..cfg.qat.clone()
    };
    let mut report = qat_train(&mut model, &tr, &qc, &CrossEntropy)?;
    report.fp32 = None;
    let fq_acc = accuracy(&model, &te)?;
    let qm = integerize(&model, &tr)?;
    let int8_acc = qm.confusion(&te)?.accuracy();
    let blob = qm.to_bytes();
    let hash = FrozenBackbone::from_blob(&blob)?.hash_hex();
    Ok((
        QatRun {
            report,
            fp32_test_accuracy: fp32_acc,
            fake_quant_test_accuracy: fq_acc,
            int8_test_accuracy: int8_acc,
            backbone_sha256: hash,
        },
        blob,
        checkpoint::to_bytes(&model),
    ))
}

/// Session-1 pretraining and integerization, then head-only on-device
/// adaptation through the remaining sessions.
fn odl(cfg: &ExperimentConfig, seq: &SessionSequence) -> Result<(OdlRun, Vec<u8>, Vec<u8>)> {
    let w: &WorkflowConfig = &cfg.workflow;
    let splits = (0..seq.n_sessions())
        .map(|s| split_session(&seq.session(s), &w.split))
        .collect::<Result<Vec<_>>>()?;
    let pre = pretrain(seq, w)?;
    let qm = integerize(&pre.model, &splits[0].0)?;
    let blob = qm.to_bytes();
    let backbone = FrozenBackbone::from_blob(&blob)?;
    let head = TrainableHead::from_head(&qm.head, cfg.odl.adam)?;
    let mut engine = OdlEngine::new(backbone, head, cfg.odl.clone())?;
    engine.remember(&splits[0].0)?;
    let assess = |engine: &OdlEngine, n: usize, training: Option<OdlPhaseReport>| -> Result<OdlPhase> {
        let confusions = splits[..=n]
            .iter()
            .map(|(_, te)| engine.evaluate(te))
            .collect::<Result<Vec<_>>>()?;
        let (average, newest) = metrics(&confusions, n + 1, w.positive_class);
        let per_session = confusions
            .iter()
            .map(|c| bmicl::cl::session_metrics(c, w.positive_class))
            .collect();
        Ok(OdlPhase {
            phase: format!("M{}", n + 1),
            n_s: n + 1,
            average,
            newest,
            per_session,
            training,
        })
    };
    let mut phases = vec![assess(&engine, 0, None)?];
    for n in 1..splits.len() {
        let r = engine.run_phase(&splits[n].0)?;
        phases.push(assess(&engine, n, Some(r))?);
    }
    let run = OdlRun {
        backbone_sha256: engine.backbone().hash_hex(),
        memory: memory_report(&w.model, &cfg.odl)?,
        macs: mac_report(&w.model),
        phases,
    };
    Ok((run, blob, engine.head().to_bytes()))
}
