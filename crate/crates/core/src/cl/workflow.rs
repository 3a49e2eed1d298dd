//! Session-chain workflows: pretraining on session 1, then one fine-tuning
//! phase per later session under a forgetting-mitigation strategy.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ewc::{fisher_diag, Ewc, EwcMode};
use super::lwf::{Distillation, Lwf};
use super::metrics::{average_metrics, session_metrics, Metrics};
use super::replay::ReplayBuffer;
use crate::data::SessionSequence;
use crate::dsp::TrialTensor;
use crate::error::{Error, Result};
use crate::nn::train::{mean_std, predict_logits};
use crate::nn::{
    evaluate, init_model, train, AdamConfig, AdaptationDepth, ConfusionMatrix, CrossEntropy, Model, ModelConfig,
    Objective, TrainConfig, TrainReport,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    /// Split in recording order; otherwise a seeded shuffle precedes the cut.
    pub chronological: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.6,
            chronological: true,
            seed: 0,
        }
    }
}

pub const MIN_SESSION_TRIALS: usize = 5;

/// Train/test split at `floor(fraction·n)`.
pub fn split_session<'a>(session: &[&'a TrialTensor], spec: &SplitSpec) -> Result<(Vec<&'a TrialTensor>, Vec<&'a TrialTensor>)> {
    if session.len() < MIN_SESSION_TRIALS {
        return Err(Error::Data(format!(
            "a session needs at least {MIN_SESSION_TRIALS} trials to split, got {}",
            session.len()
        )));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {} outside (0, 1)", spec.train_fraction)));
    }
    let mut order: Vec<&TrialTensor> = session.to_vec();
    if !spec.chronological {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    }
    let cut = (spec.train_fraction * session.len() as f64).floor() as usize;
    let test = order.split_off(cut);
    Ok((order, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    NaiveTl,
    Er,
    Lwf,
    Ewc,
    /// Retrain on every train split seen so far (upper reference).
    Joint,
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "naive_tl" | "tl" | "naivetl" => Ok(Self::NaiveTl),
            "er" => Ok(Self::Er),
            "lwf" => Ok(Self::Lwf),
            "ewc" => Ok(Self::Ewc),
            "joint" => Ok(Self::Joint),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?} (expected naive_tl, er, lwf, ewc or joint)"
            ))),
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::NaiveTl => "naive_tl",
            Self::Er => "er",
            Self::Lwf => "lwf",
            Self::Ewc => "ewc",
            Self::Joint => "joint",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub er_capacity: usize,
    pub lwf_lambda: f32,
    pub lwf_temperature: f32,
    pub distillation: Distillation,
    pub ewc_lambda: f32,
    pub ewc_mode: EwcMode,
    /// Epochs of every fine-tuning phase.
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            kind: StrategyKind::NaiveTl,
            er_capacity: 200,
            lwf_lambda: 1.0,
            lwf_temperature: 2.0,
            distillation: Distillation::SoftCrossEntropy,
            ewc_lambda: 1e4,
            ewc_mode: EwcMode::Accumulate,
            epochs: 50,
            batch_size: 10,
        }
    }
}

impl StrategyConfig {
    pub fn of(kind: StrategyKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    /// Zero regularization weights are allowed (they reduce LwF and EWC to
    /// naive fine-tuning); everything else must be positive.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if self.kind == StrategyKind::Er && self.er_capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        if !(self.lwf_lambda >= 0.0 && self.ewc_lambda >= 0.0) || !self.lwf_lambda.is_finite() || !self.ewc_lambda.is_finite() {
            return Err(Error::Config("regularization weights must be finite and nonnegative".into()));
        }
        if !(self.lwf_temperature > 0.0 && self.lwf_temperature.is_finite()) {
            return Err(Error::Config(format!("temperature {} must be positive", self.lwf_temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkflowConfig {
    pub model: ModelConfig,
    pub strategy: StrategyConfig,
    pub pretrain_epochs: usize,
    pub split: SplitSpec,
    pub adam: AdamConfig,
    /// Trainable groups during the fine-tuning phases (pretraining is full).
    pub depth: AdaptationDepth,
    /// Positive class of the binary metrics.
    pub positive_class: usize,
    pub seed: u64,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::standard(2),
            strategy: StrategyConfig::default(),
            pretrain_epochs: 40,
            split: SplitSpec::default(),
            adam: AdamConfig::default(),
            depth: AdaptationDepth::FULL,
            positive_class: 0,
            seed: 0,
        }
    }
}

/// Independent seed for one use (`stream`) of an experiment seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r.next_u64()
}

const STREAM_INIT: u64 = 0;
const STREAM_PRETRAIN: u64 = 1;
const STREAM_BUFFER: u64 = 2;
const STREAM_PHASE: u64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    /// `M1` for pretraining, `M{n}` after fine-tuning on session `n`.
    pub phase: String,
    pub n_s: usize,
    pub train_size: usize,
    /// Averages over sessions `1..=n_s`.
    pub average: Metrics,
    pub newest: Metrics,
    pub per_session: Vec<Metrics>,
    pub confusions: Vec<ConfusionMatrix>,
    /// Trials per session held by the replay buffer after the phase.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub buffer_composition: Vec<usize>,
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowReport {
    pub schema_version: u32,
    pub config: WorkflowConfig,
    pub pretrain: PhaseReport,
    /// One entry per session after the first.
    pub phases: Vec<PhaseReport>,
}

impl WorkflowReport {
    /// Pretraining followed by every fine-tuning phase.
    pub fn all_phases(&self) -> impl Iterator<Item = &PhaseReport> {
        std::iter::once(&self.pretrain).chain(&self.phases)
    }

    /// `Acc(1:n_s)` for `n_s = 1..=N_s`.
    pub fn accuracy_curve(&self) -> Vec<Option<f64>> {
        self.all_phases().map(|p| p.average.accuracy).collect()
    }

    pub fn final_phase(&self) -> &PhaseReport {
        self.phases.last().unwrap_or(&self.pretrain)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(s)?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "report schema {} (expected {REPORT_SCHEMA_VERSION})",
                r.schema_version
            )));
        }
        Ok(r)
    }

    /// One CSV row per phase.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for p in self.all_phases() {
            w.serialize(CsvRow {
                seed: self.config.seed,
                strategy: self.config.strategy.kind.to_string(),
                phase: &p.phase,
                n_s: p.n_s,
                train_size: p.train_size,
                acc: p.average.accuracy,
                pre: p.average.precision,
                rec: p.average.recall,
                spe: p.average.specificity,
                newest_acc: p.newest.accuracy,
                newest_pre: p.newest.precision,
                newest_rec: p.newest.recall,
                newest_spe: p.newest.specificity,
            })
            .map_err(|e| Error::Format(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    seed: u64,
    strategy: String,
    phase: &'a str,
    n_s: usize,
    train_size: usize,
    acc: Option<f64>,
    pre: Option<f64>,
    rec: Option<f64>,
    spe: Option<f64>,
    newest_acc: Option<f64>,
    newest_pre: Option<f64>,
    newest_rec: Option<f64>,
    newest_spe: Option<f64>,
}

type Split<'a> = (Vec<&'a TrialTensor>, Vec<&'a TrialTensor>);

fn splits<'a>(seq: &'a SessionSequence, cfg: &WorkflowConfig) -> Result<Vec<Split<'a>>> {
    if seq.n_sessions() < 2 {
        return Err(Error::Data(format!("need at least 2 sessions, got {}", seq.n_sessions())));
    }
    if seq.n_classes() != cfg.model.n_classes {
        return Err(Error::Config(format!(
            "data has {} classes, model {}",
            seq.n_classes(),
            cfg.model.n_classes
        )));
    }
    (0..seq.n_sessions()).map(|s| split_session(&seq.session(s), &cfg.split)).collect()
}

fn phase_report(
    model: &Model<f32>,
    tests: &[Split<'_>],
    n: usize,
    positive: usize,
    train_size: usize,
    fit: TrainReport,
) -> Result<PhaseReport> {
    let confusions = tests[..=n]
        .iter()
        .map(|(_, test)| Ok(evaluate(model, test)?.confusion))
        .collect::<Result<Vec<_>>>()?;
    let per_session: Vec<Metrics> = confusions.iter().map(|c| session_metrics(c, positive)).collect();
    Ok(PhaseReport {
        phase: format!("M{}", n + 1),
        n_s: n + 1,
        train_size,
        average: average_metrics(&per_session),
        newest: per_session[n],
        per_session,
        confusions,
        buffer_composition: Vec::new(),
        loss_curve: fit.loss_curve,
    })
}

/// The session-1 model every strategy starts from.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub model: Model<f32>,
    pub report: PhaseReport,
}

/// Fresh model trained with plain cross-entropy on session 1's train split.
pub fn pretrain(seq: &SessionSequence, cfg: &WorkflowConfig) -> Result<Pretrained> {
    cfg.model.validate()?;
    let sp = splits(seq, cfg)?;
    let mut model = init_model(&cfg.model, derive_seed(cfg.seed, STREAM_INIT))?;
    let tc = TrainConfig {
        epochs: cfg.pretrain_epochs,
        batch_size: cfg.strategy.batch_size,
        adam: cfg.adam,
        depth: AdaptationDepth::FULL,
        seed: derive_seed(cfg.seed, STREAM_PRETRAIN),
    };
    let fit = train(&mut model, &sp[0].0, &tc, &CrossEntropy)?;
    let report = phase_report(&model, &sp, 0, cfg.positive_class, sp[0].0.len(), fit)?;
    Ok(Pretrained { model, report })
}

/// Chain fine-tuning without any mitigation.
pub fn run_tl_workflow(seq: &SessionSequence, cfg: &WorkflowConfig) -> Result<WorkflowReport> {
    let mut cfg = cfg.clone();
    cfg.strategy.kind = StrategyKind::NaiveTl;
    run_cl_workflow(seq, &cfg)
}

/// Chain fine-tuning under `cfg.strategy`.
pub fn run_cl_workflow(seq: &SessionSequence, cfg: &WorkflowConfig) -> Result<WorkflowReport> {
    cfg.strategy.validate()?;
    let pre = pretrain(seq, cfg)?;
    run_cl_workflow_from(seq, cfg, &pre)
}

/// As [`run_cl_workflow`], continuing from an existing session-1 model (one
/// pretraining can serve several strategies with the same seed).
pub fn run_cl_workflow_from(seq: &SessionSequence, cfg: &WorkflowConfig, pre: &Pretrained) -> Result<WorkflowReport> {
    Ok(run_cl_workflow_model(seq, cfg, pre)?.0)
}

/// As [`run_cl_workflow_from`], also returning the final model.
pub fn run_cl_workflow_model(
    seq: &SessionSequence,
    cfg: &WorkflowConfig,
    pre: &Pretrained,
) -> Result<(WorkflowReport, Model<f32>)> {
    let st = &cfg.strategy;
    st.validate()?;
    let sp = splits(seq, cfg)?;
    let mut model = pre.model.clone();
    let mut buffer: ReplayBuffer<(usize, &TrialTensor)> = ReplayBuffer::new(st.er_capacity, derive_seed(cfg.seed, STREAM_BUFFER));
    let mut ewc = Ewc::new(st.ewc_lambda);
    match st.kind {
        StrategyKind::Er => {
            for t in &sp[0].0 {
                buffer.offer((0, *t));
            }
        }
        StrategyKind::Ewc => ewc.add(fisher_diag(&model, &sp[0].0)?, st.ewc_mode),
        _ => {}
    }
    let mut phases = Vec::with_capacity(sp.len() - 1);
    for n in 1..sp.len() {
        let new = &sp[n].0;
        let set: Vec<&TrialTensor> = match st.kind {
            StrategyKind::Er => buffer.items().iter().map(|(_, t)| *t).chain(new.iter().copied()).collect(),
            StrategyKind::Joint => sp[..=n].iter().flat_map(|(train, _)| train.iter().copied()).collect(),
            _ => new.clone(),
        };
        let tc = TrainConfig {
            epochs: st.epochs,
            batch_size: st.batch_size,
            adam: cfg.adam,
            depth: cfg.depth,
            seed: derive_seed(cfg.seed, STREAM_PHASE + n as u64),
        };
        let lwf;
        let objective: &dyn Objective<f32> = match st.kind {
            StrategyKind::Lwf => {
                lwf = Lwf {
                    old_logits: predict_logits(&model, &set)?,
                    lambda: st.lwf_lambda,
                    temperature: st.lwf_temperature,
                    form: st.distillation,
                };
                &lwf
            }
            StrategyKind::Ewc => &ewc,
            _ => &CrossEntropy,
        };
        let fit = train(&mut model, &set, &tc, objective)?;
        let mut report = phase_report(&model, &sp, n, cfg.positive_class, set.len(), fit)?;
        match st.kind {
            StrategyKind::Er => {
                for t in new {
                    buffer.offer((n, *t));
                }
                let mut comp = vec![0; sp.len()];
                for (s, _) in buffer.items() {
                    comp[*s] += 1;
                }
                report.buffer_composition = comp;
            }
            StrategyKind::Ewc => ewc.add(fisher_diag(&model, new)?, st.ewc_mode),
            _ => {}
        }
        phases.push(report);
    }
    let report = WorkflowReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        pretrain: pre.report.clone(),
        phases,
    };
    Ok((report, model))
}

/// Mean and population standard deviation of one metric across seeds;
/// `None` if no seed defines it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn mean_std_defined(v: impl Iterator<Item = Option<f64>>) -> Option<MeanStd> {
    let d: Vec<f64> = v.flatten().collect();
    (!d.is_empty()).then(|| {
        let (mean, std) = mean_std(&d);
        MeanStd { mean, std, n: d.len() }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatePhase {
    pub phase: String,
    pub n_s: usize,
    pub accuracy: Option<MeanStd>,
    pub precision: Option<MeanStd>,
    pub recall: Option<MeanStd>,
    pub specificity: Option<MeanStd>,
    pub newest_accuracy: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub schema_version: u32,
    pub strategy: StrategyKind,
    pub seeds: Vec<u64>,
    pub phases: Vec<AggregatePhase>,
}

/// Per-phase mean ± std over replications of the same workflow.
pub fn aggregate_reports(reports: &[WorkflowReport]) -> Result<AggregateReport> {
    let first = reports.first().ok_or_else(|| Error::Data("no reports to aggregate".into()))?;
    let n = first.phases.len();
    if reports.iter().any(|r| r.phases.len() != n) {
        return Err(Error::Data("reports cover different session counts".into()));
    }
    let phases = (0..=n)
        .map(|i| {
            let at = |r: &WorkflowReport| if i == 0 { r.pretrain.clone() } else { r.phases[i - 1].clone() };
            let ps: Vec<PhaseReport> = reports.iter().map(at).collect();
            AggregatePhase {
                phase: ps[0].phase.clone(),
                n_s: ps[0].n_s,
                accuracy: mean_std_defined(ps.iter().map(|p| p.average.accuracy)),
                precision: mean_std_defined(ps.iter().map(|p| p.average.precision)),
                recall: mean_std_defined(ps.iter().map(|p| p.average.recall)),
                specificity: mean_std_defined(ps.iter().map(|p| p.average.specificity)),
                newest_accuracy: mean_std_defined(ps.iter().map(|p| p.newest.accuracy)),
            }
        })
        .collect();
    Ok(AggregateReport {
        schema_version: REPORT_SCHEMA_VERSION,
        strategy: first.config.strategy.kind,
        seeds: reports.iter().map(|r| r.config.seed).collect(),
        phases,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDelta {
    pub phase: String,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub newest_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDiff {
    pub phases: Vec<PhaseDelta>,
    /// Largest |Δ accuracy| and the phase where it occurs.
    pub max_abs_accuracy_delta: f64,
    pub max_at: Option<String>,
}

fn delta(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

/// Per-phase metric differences `a − b`.
pub fn report_diff(a: &WorkflowReport, b: &WorkflowReport) -> Result<ReportDiff> {
    if a.phases.len() != b.phases.len() {
        return Err(Error::Data(format!(
            "reports cover {} and {} sessions",
            a.phases.len() + 1,
            b.phases.len() + 1
        )));
    }
    let mut out = ReportDiff {
        phases: Vec::new(),
        max_abs_accuracy_delta: 0.0,
        max_at: None,
    };
    for (pa, pb) in a.all_phases().zip(b.all_phases()) {
        let d = PhaseDelta {
            phase: pa.phase.clone(),
            accuracy: delta(pa.average.accuracy, pb.average.accuracy),
            precision: delta(pa.average.precision, pb.average.precision),
            recall: delta(pa.average.recall, pb.average.recall),
            specificity: delta(pa.average.specificity, pb.average.specificity),
            newest_accuracy: delta(pa.newest.accuracy, pb.newest.accuracy),
        };
        if let Some(x) = d.accuracy {
            if x.abs() > out.max_abs_accuracy_delta {
                out.max_abs_accuracy_delta = x.abs();
                out.max_at = Some(d.phase.clone());
            }
        }
        out.phases.push(d);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthResult {
    pub depth: AdaptationDepth,
    /// `[seed][phase]` accuracy `Acc(1:n_s)`, phases from `n_s = 1`.
    pub per_seed: Vec<Vec<Option<f64>>>,
    pub per_phase: Vec<Option<MeanStd>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSweepReport {
    pub schema_version: u32,
    pub seeds: Vec<u64>,
    pub results: Vec<DepthResult>,
}

/// Chain fine-tuning with only the first `depth` parameter groups trainable,
/// for every depth in `depths`. Each seed's pretraining is shared by all
/// depths.
pub fn adaptation_depth_sweep(
    seq: &SessionSequence,
    depths: &[AdaptationDepth],
    cfg: &WorkflowConfig,
    seeds: &[u64],
) -> Result<DepthSweepReport> {
    use rayon::prelude::*;
    let runs: Vec<Vec<Vec<Option<f64>>>> = seeds
        .par_iter()
        .map(|seed| {
            let base = WorkflowConfig {
                seed: *seed,
                strategy: StrategyConfig {
                    kind: StrategyKind::NaiveTl,
                    ..cfg.strategy.clone()
                },
                ..cfg.clone()
            };
            let pre = pretrain(seq, &base)?;
            depths
                .iter()
                .map(|d| {
                    let c = WorkflowConfig { depth: *d, ..base.clone() };
                    Ok(run_cl_workflow_from(seq, &c, &pre)?.accuracy_curve())
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let results = depths
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let per_seed: Vec<Vec<Option<f64>>> = runs.iter().map(|r| r[i].clone()).collect();
            let n = per_seed.first().map_or(0, Vec::len);
            let per_phase = (0..n).map(|p| mean_std_defined(per_seed.iter().map(|s| s[p]))).collect();
            DepthResult {
                depth: *d,
                per_seed,
                per_phase,
            }
        })
        .collect();
    Ok(DepthSweepReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seeds: seeds.to_vec(),
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trials(n: usize) -> Vec<TrialTensor> {
        (0..n)
            .map(|i| TrialTensor::new(vec![i as f32; 4], 1, 4, i % 2).unwrap())
            .collect()
    }

    #[test]
    fn split_is_a_chronological_cut() {
        let t = trials(100);
        let refs: Vec<&TrialTensor> = t.iter().collect();
        let (a, b) = split_session(&refs, &SplitSpec::default()).unwrap();
        assert_eq!((a.len(), b.len()), (60, 40));
        let last_train = a.last().unwrap().samples[0];
        assert!(b.iter().all(|x| x.samples[0] > last_train));
        let (a, b) = split_session(&refs[..5], &SplitSpec::default()).unwrap();
        assert_eq!((a.len(), b.len()), (3, 2));
        assert!(matches!(split_session(&refs[..4], &SplitSpec::default()), Err(Error::Data(_))));
    }

    #[test]
    fn shuffled_split_keeps_every_trial_once() {
        let t = trials(20);
        let refs: Vec<&TrialTensor> = t.iter().collect();
        let spec = SplitSpec {
            chronological: false,
            ..SplitSpec::default()
        };
        let (a, b) = split_session(&refs, &spec).unwrap();
        let mut all: Vec<f32> = a.iter().chain(&b).map(|x| x.samples[0]).collect();
        all.sort_by(f32::total_cmp);
        assert_eq!(all, (0..20).map(|i| i as f32).collect::<Vec<_>>());
    }

    #[test]
    fn strategy_names_parse() {
        assert_eq!("ER".parse::<StrategyKind>().unwrap(), StrategyKind::Er);
        assert_eq!("naive-tl".parse::<StrategyKind>().unwrap(), StrategyKind::NaiveTl);
        assert!("sgd".parse::<StrategyKind>().is_err());
        let bad = StrategyConfig {
            lwf_temperature: 0.0,
            ..StrategyConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(StrategyConfig::default().ewc_lambda, 1e4);
    }

    #[test]
    fn derived_seeds_differ_by_stream() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}
