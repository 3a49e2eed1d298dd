//! Cross-seed aggregates and the tables printed after a run.

use std::fmt::Write as _;
use std::path::Path;

use bmicl::cl::{aggregate_reports, mean_std_defined, DepthResult, DepthSweepReport, MeanStd, ReportDiff, WorkflowReport, REPORT_SCHEMA_VERSION};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::tasks::{tool_version, Outcome};
use crate::Failure;

fn ms(v: Option<MeanStd>) -> String {
    match v {
        Some(m) if m.n > 1 => format!("{:6.2} ± {:5.2}", m.mean, m.std),
        Some(m) => format!("{:6.2}", m.mean),
        None => "     -".into(),
    }
}

fn signed(v: Option<f64>) -> String {
    v.map_or("      -".into(), |x| format!("{x:+7.2}"))
}

#[derive(Serialize)]
struct Aggregate<'a, T> {
    schema_version: u32,
    tool_version: String,
    experiment: &'a ExperimentConfig,
    seeds: Vec<u64>,
    aggregate: T,
}

#[derive(Serialize)]
struct CvRow {
    session: usize,
    /// Mean over seeds of each seed's fold mean.
    accuracy: Option<MeanStd>,
}

#[derive(Serialize)]
struct QatRow {
    fp32: Option<MeanStd>,
    fake_quant: Option<MeanStd>,
    int8: Option<MeanStd>,
}

#[derive(Serialize)]
struct OdlRow {
    phase: String,
    accuracy: Option<MeanStd>,
    newest_accuracy: Option<MeanStd>,
}

fn save<T: Serialize>(root: &Path, cfg: &ExperimentConfig, seeds: Vec<u64>, aggregate: T) -> Result<(), Failure> {
    let a = Aggregate {
        schema_version: REPORT_SCHEMA_VERSION,
        tool_version: tool_version(),
        experiment: cfg,
        seeds,
        aggregate,
    };
    let json = serde_json::to_string_pretty(&a).map_err(|e| Failure::Run(e.to_string()))?;
    std::fs::write(root.join("aggregate.json"), json)?;
    Ok(())
}

/// Write `aggregate.json` under `root` and print a per-phase table.
pub fn summarize(cfg: &ExperimentConfig, outcomes: &[(u64, Outcome)], root: &Path) -> Result<(), Failure> {
    let seeds: Vec<u64> = outcomes.iter().map(|(s, _)| *s).collect();
    let mut out = String::new();
    match &outcomes[0].1 {
        Outcome::Cv(first) => {
            let rows: Vec<CvRow> = (0..first.len())
                .map(|i| CvRow {
                    session: first[i].session,
                    accuracy: mean_std_defined(outcomes.iter().map(|(_, o)| match o {
                        Outcome::Cv(v) => v.get(i).map(|s| s.cv.mean),
                        _ => None,
                    })),
                })
                .collect();
            writeln!(out, "{}-fold within-session accuracy (%), mean ± std over seeds", cfg.cv.folds).unwrap();
            for r in &rows {
                writeln!(out, "  session {}: {}", r.session, ms(r.accuracy)).unwrap();
            }
            if let [(_, Outcome::Cv(only))] = outcomes {
                writeln!(out, "fold spread of the single seed:").unwrap();
                for s in only {
                    writeln!(out, "  session {}: {:6.2} ± {:5.2}", s.session, s.cv.mean, s.cv.std).unwrap();
                }
            }
            save(root, cfg, seeds, rows)?;
        }
        Outcome::Workflow(_) => {
            let reports: Vec<WorkflowReport> = outcomes
                .iter()
                .filter_map(|(_, o)| match o {
                    Outcome::Workflow(r) => Some((**r).clone()),
                    _ => None,
                })
                .collect();
            let agg = aggregate_reports(&reports)?;
            writeln!(out, "strategy {} over {} seed(s); Acc/Pre/Rec/Spe averaged over sessions 1..n_s", agg.strategy, seeds.len()).unwrap();
            writeln!(
                out,
                "{:>5} {:>15} {:>15} {:>15} {:>15} {:>15}",
                "phase", "acc", "pre", "rec", "spe", "newest acc"
            )
            .unwrap();
            for p in &agg.phases {
                writeln!(
                    out,
                    "{:>5} {:>15} {:>15} {:>15} {:>15} {:>15}",
                    p.phase,
                    ms(p.accuracy),
                    ms(p.precision),
                    ms(p.recall),
                    ms(p.specificity),
                    ms(p.newest_accuracy)
                )
                .unwrap();
            }
            save(root, cfg, seeds, agg)?;
        }
        Outcome::Qat(_) => {
            let col = |f: &dyn Fn(&crate::tasks::QatRun) -> Option<f64>| {
                mean_std_defined(outcomes.iter().map(|(_, o)| match o {
                    Outcome::Qat(q) => f(q),
                    _ => None,
                }))
            };
            let row = QatRow {
                fp32: col(&|q| q.fp32_test_accuracy),
                fake_quant: col(&|q| q.fake_quant_test_accuracy),
                int8: col(&|q| q.int8_test_accuracy),
            };
            writeln!(out, "session-1 test accuracy (%) over {} seed(s)", seeds.len()).unwrap();
            writeln!(out, "  fp32        {}", ms(row.fp32)).unwrap();
            writeln!(out, "  fake-quant  {}", ms(row.fake_quant)).unwrap();
            writeln!(out, "  int8        {}", ms(row.int8)).unwrap();
            save(root, cfg, seeds, row)?;
        }
        Outcome::Odl(first) => {
            let rows: Vec<OdlRow> = (0..first.phases.len())
                .map(|i| {
                    let pick = |f: &dyn Fn(&crate::tasks::OdlPhase) -> Option<f64>| {
                        mean_std_defined(outcomes.iter().map(|(_, o)| match o {
                            Outcome::Odl(r) => r.phases.get(i).and_then(f),
                            _ => None,
                        }))
                    };
                    OdlRow {
                        phase: first.phases[i].phase.clone(),
                        accuracy: pick(&|p| p.average.accuracy),
                        newest_accuracy: pick(&|p| p.newest.accuracy),
                    }
                })
                .collect();
            writeln!(out, "on-device {:?} over {} seed(s)", cfg.odl.strategy, seeds.len()).unwrap();
            writeln!(out, "{:>5} {:>15} {:>15}", "phase", "acc", "newest acc").unwrap();
            for r in &rows {
                writeln!(out, "{:>5} {:>15} {:>15}", r.phase, ms(r.accuracy), ms(r.newest_accuracy)).unwrap();
            }
            let m = &first.memory;
            writeln!(
                out,
                "memory: {} B working, {} B storage, {} B total",
                m.working_bytes, m.storage_bytes, m.total_bytes
            )
            .unwrap();
            save(root, cfg, seeds, rows)?;
        }
        Outcome::Depth(first) => {
            let results: Vec<DepthResult> = first
                .results
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let per_seed: Vec<Vec<Option<f64>>> = outcomes
                        .iter()
                        .filter_map(|(_, o)| match o {
                            Outcome::Depth(d) => d.results.get(i).map(|x| x.per_seed[0].clone()),
                            _ => None,
                        })
                        .collect();
                    let n = per_seed[0].len();
                    let per_phase = (0..n).map(|k| mean_std_defined(per_seed.iter().map(|s| s[k]))).collect();
                    DepthResult {
                        depth: r.depth,
                        per_seed,
                        per_phase,
                    }
                })
                .collect();
            writeln!(out, "Acc(1:n_s) by adaptation depth over {} seed(s)", seeds.len()).unwrap();
            for r in &results {
                let cells: Vec<String> = r.per_phase.iter().map(|m| ms(*m)).collect();
                writeln!(out, "  depth {}: {}", r.depth.get(), cells.join(" ")).unwrap();
            }
            let report = DepthSweepReport {
                schema_version: REPORT_SCHEMA_VERSION,
                seeds: seeds.clone(),
                results,
            };
            save(root, cfg, seeds, report)?;
        }
    }
    print!("{out}");
    Ok(())
}

pub fn diff_table(d: &ReportDiff) -> String {
    let mut out = String::new();
    writeln!(out, "{:>5} {:>7} {:>7} {:>7} {:>7} {:>10}", "phase", "Δacc", "Δpre", "Δrec", "Δspe", "Δnewest").unwrap();
    for p in &d.phases {
        let mark = if d.max_at.as_deref() == Some(p.phase.as_str()) { "  <- max" } else { "" };
        writeln!(
            out,
            "{:>5} {} {} {} {} {:>10}{mark}",
            p.phase,
            signed(p.accuracy),
            signed(p.precision),
            signed(p.recall),
            signed(p.specificity),
            signed(p.newest_accuracy)
        )
        .unwrap();
    }
    match &d.max_at {
        Some(at) => {
            let v = d.phases.iter().find(|p| &p.phase == at).and_then(|p| p.accuracy).unwrap_or(0.0);
            writeln!(out, "largest accuracy difference: {v:+.2} points at {at}").unwrap();
        }
        None => writeln!(out, "no accuracy difference").unwrap(),
    }
    out
}
