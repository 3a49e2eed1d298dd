//! Inter-session transfer and continual learning: replay, distillation and
//! Fisher-weighted penalties, multi-session workflows and their metrics.

pub mod ewc;
pub mod lwf;
pub mod metrics;
pub mod replay;
pub mod workflow;

pub use ewc::{ewc_quadratic, fisher_diag, Ewc, EwcMode, FisherDiag};
pub use lwf::{lwf_loss, Distillation, Lwf};
pub use metrics::{average_metrics, metrics, session_metrics, Metrics};
pub use replay::{reservoir_offer, ReplayBuffer};
pub use workflow::{
    adaptation_depth_sweep, aggregate_reports, derive_seed, mean_std_defined, pretrain, report_diff, run_cl_workflow,
    run_cl_workflow_from, run_cl_workflow_model, run_tl_workflow, split_session, AggregatePhase, AggregateReport, DepthResult,
    DepthSweepReport, MeanStd, PhaseDelta, PhaseReport, Pretrained, ReportDiff, SplitSpec, StrategyConfig, StrategyKind,
    WorkflowConfig, WorkflowReport, REPORT_SCHEMA_VERSION,
};
