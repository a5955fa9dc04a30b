use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::config::{Agent, ExperimentConfig};
use super::plan::{plan_with, Models, Scoring};
use super::suite::Suite;
use crate::error::{Error, Result};
use crate::features::encode_scene_dim;
use crate::metrics::{ExtendedSubScores, ScenarioScorer};
use crate::sim::Corruption;
use crate::types::Trajectory;

pub const REPORT_FILE: &str = "report.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const CHART_FILE: &str = "report.svg";
pub const AGGREGATE_ID: &str = "mean";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scenario_id: String,
    pub agent: Agent,
    pub corruption: Corruption,
    pub subscores: ExtendedSubScores,
    pub pdms: f64,
    pub epdms: f64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub config_hash: String,
    pub rows: Vec<ReportRow>,
    /// One mean row per rostered agent, in roster order.
    pub aggregates: Vec<ReportRow>,
    pub csv_path: Option<PathBuf>,
}

impl EvalReport {
    pub fn rows_for(&self, agent: Agent) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(move |r| r.agent == agent)
    }

    pub fn mean_pdms(&self, agent: Agent) -> Option<f64> {
        self.aggregates.iter().find(|r| r.agent == agent).map(|r| r.pdms)
    }
}

/// Trajectory of `agent` on scenario `i`.
fn agent_trajectory(
    cfg: &ExperimentConfig,
    suite: &Suite,
    i: usize,
    agent: Agent,
    models: Option<Models<'_>>,
    oracle: &ScenarioScorer<'_>,
) -> Result<Trajectory> {
    let scn = &suite.scenarios[i];
    if agent == Agent::Human {
        return Ok(scn.expert.clone());
    }
    let models = models.ok_or_else(|| Error::Config(format!("agent '{agent}' needs trained checkpoints")))?;
    if agent == Agent::IlOnly {
        return models.il.forward(&encode_scene_dim(scn, models.il.feature_dim())?);
    }
    let scoring = match models.rwm {
        Some(m) => Scoring::Rwm(m),
        None => Scoring::Oracle(oracle),
    };
    let (passes, final_scoring) = match agent {
        Agent::PairDrive => (1, scoring),
        _ => (cfg.plan.n_bestof, Scoring::Oracle(oracle)),
    };
    Ok(plan_with(scn, models, &cfg.plan, scoring, final_scoring, passes, cfg.seed)?.trajectory)
}

fn mean_row(agent: Agent, rows: &[&ReportRow]) -> ReportRow {
    let n = rows.len().max(1) as f64;
    let avg = |f: &dyn Fn(&ReportRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    let b = |f: fn(&ExtendedSubScores) -> f64| avg(&|r: &ReportRow| f(&r.subscores));
    let mut s = ExtendedSubScores::ALL_ONES;
    s.base.nc = b(|s| s.base.nc);
    s.base.dac = b(|s| s.base.dac);
    s.base.ep = b(|s| s.base.ep);
    s.base.ttc = b(|s| s.base.ttc);
    s.base.comfort = b(|s| s.base.comfort);
    s.ddc = b(|s| s.ddc);
    s.tlc = b(|s| s.tlc);
    s.lk = b(|s| s.lk);
    s.hc = b(|s| s.hc);
    s.ec = b(|s| s.ec);
    ReportRow {
        scenario_id: AGGREGATE_ID.into(),
        agent,
        corruption: Corruption::None,
        subscores: s,
        pdms: avg(&|r| r.pdms),
        epdms: avg(&|r| r.epdms),
        wall_time_ms: avg(&|r| r.wall_time_ms),
    }
}

/// Scores every rostered agent on every scenario. Scenarios are evaluated in
/// parallel and collected in suite order.
pub fn evaluate(
    cfg: &ExperimentConfig,
    suite: &Suite,
    models: Option<Models<'_>>,
) -> Result<EvalReport> {
    let roster = &cfg.eval.roster;
    if roster.is_empty() {
        return Err(Error::Config("evaluation roster is empty".into()));
    }
    let per: Vec<Vec<ReportRow>> = (0..suite.len())
        .into_par_iter()
        .map(|i| {
            let scn = &suite.scenarios[i];
            let oracle = ScenarioScorer::new(scn, &cfg.sim, &cfg.metrics)?;
            roster
                .iter()
                .map(|&agent| {
                    let start = Instant::now();
                    let traj = agent_trajectory(cfg, suite, i, agent, models, &oracle)?;
                    let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
                    let (subscores, pdms, epdms) = oracle.score(&traj)?;
                    Ok(ReportRow {
                        scenario_id: scn.id.clone(),
                        agent,
                        corruption: suite.entries.get(i).map_or(Corruption::None, |e| e.corruption),
                        subscores,
                        pdms,
                        epdms,
                        wall_time_ms,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<ReportRow> = per.into_iter().flatten().collect();
    let aggregates = roster
        .iter()
        .map(|&a| mean_row(a, &rows.iter().filter(|r| r.agent == a).collect::<Vec<_>>()))
        .collect();
    Ok(EvalReport {
        config_hash: cfg.hash(),
        rows,
        aggregates,
        csv_path: None,
    })
}

fn header() -> String {
    let names: Vec<&str> = ExtendedSubScores::ALL_ONES.columns().iter().map(|(n, _)| *n).collect();
    format!("scenario_id,agent,corruption,{},pdms,epdms\n", names.join(","))
}

fn csv_line(out: &mut String, r: &ReportRow) {
    let _ = write!(out, "{},{},{}", r.scenario_id, r.agent, r.corruption.name());
    for (_, v) in r.subscores.columns() {
        let _ = write!(out, ",{v:.4}");
    }
    let _ = writeln!(out, ",{:.4},{:.4}", r.pdms, r.epdms);
}

/// The report block: provenance line, header, scenario rows, then means.
pub fn render_csv(report: &EvalReport, seed: u64) -> String {
    let mut out = format!("# config_hash={} seed={seed}\n", report.config_hash);
    out.push_str(&header());
    for r in report.rows.iter().chain(&report.aggregates) {
        csv_line(&mut out, r);
    }
    out
}

fn append(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn render_timing(report: &EvalReport) -> String {
    let mut out = String::from("scenario_id,agent,wall_time_ms\n");
    for r in &report.rows {
        let _ = writeln!(out, "{},{},{:.3}", r.scenario_id, r.agent, r.wall_time_ms);
    }
    out
}

/// Grouped bars of mean PDMS and EPDMS per agent.
pub fn render_svg(report: &EvalReport) -> String {
    let (w, h, pad) = (120.0 * report.aggregates.len() as f64 + 80.0, 300.0, 40.0);
    let plot_h = h - 2.0 * pad;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = writeln!(
        s,
        "<line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        h - pad,
        w - 10.0,
        h - pad
    );
    for (i, r) in report.aggregates.iter().enumerate() {
        let x0 = pad + 20.0 + 120.0 * i as f64;
        for (j, (v, color)) in [(r.pdms, "#4472c4"), (r.epdms, "#ed7d31")].into_iter().enumerate() {
            let bh = v.clamp(0.0, 1.0) * plot_h;
            let x = x0 + 40.0 * j as f64;
            let _ = writeln!(
                s,
                "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"36\" height=\"{bh:.1}\" fill=\"{color}\"/>",
                h - pad - bh
            );
            let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{v:.3}</text>", x + 18.0, h - pad - bh - 4.0);
        }
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>", x0 + 38.0, h - pad + 16.0, r.agent);
    }
    let _ = writeln!(s, "<text x=\"{pad}\" y=\"20\">mean PDMS (blue) and EPDMS (orange)</text>");
    s.push_str("</svg>\n");
    s
}

/// Appends the report to `out_dir/report.csv` and writes timing and chart files.
pub fn write_report(report: &mut EvalReport, cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv = out_dir.join(REPORT_FILE);
    append(&csv, &render_csv(report, cfg.seed))?;
    let timing = out_dir.join(TIMING_FILE);
    std::fs::write(&timing, render_timing(report)).map_err(|e| Error::io(&timing, e))?;
    if cfg.eval.svg {
        let chart = out_dir.join(CHART_FILE);
        std::fs::write(&chart, render_svg(report)).map_err(|e| Error::io(&chart, e))?;
    }
    report.csv_path = Some(csv);
    Ok(())
}
