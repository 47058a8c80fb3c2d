//! Charts and tables from the artifacts of a run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use qwem_core::dynamics::{sigmoidal_variance, DynamicsTrace, SilentAlignmentReport};
use serde_json::json;

use crate::commands::{
    read_json, EvalSummary, TaskvecSummary, TrainSummary, DYNAMICS_FILE, EVAL_FILE, TASKVEC_FILE, TRACE_FILE,
    TRAIN_FILE,
};
use crate::error::{CliError, PathContext, Result};
use crate::manifest::ManifestBuilder;
use crate::svg::{Chart, Series, Style};
use crate::ReportArgs;

fn read_trace_csv(path: &Path) -> Result<DynamicsTrace> {
    let text = fs::read_to_string(path).at(path)?;
    let bad = || CliError::data(format!("{}: malformed trace", path.display()));
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(bad)?.split(',').collect();
    let d = header.iter().filter(|h| h.ends_with("sq")).count();
    let mut trace = DynamicsTrace {
        times: Vec::new(),
        mode_variance: Vec::new(),
        loss: Vec::new(),
        alignment: Vec::new(),
        seed: None,
        sigma2: None,
    };
    for line in lines.filter(|l| !l.is_empty()) {
        let v: Vec<f64> = line.split(',').map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
        if v.len() != 2 + 2 * d {
            return Err(bad());
        }
        trace.times.push(v[0]);
        trace.loss.push(v[1]);
        trace.mode_variance.push(v[2..2 + d].to_vec());
        trace.alignment.push(v[2 + d..].to_vec());
    }
    Ok(trace)
}

fn loss_chart(trace: &DynamicsTrace, train: Option<&TrainSummary>) -> Chart {
    let mut chart = Chart {
        title: "Training loss".into(),
        x_label: "flow time t".into(),
        y_label: "loss".into(),
        series: vec![Series {
            name: "loss".into(),
            points: trace.times.iter().copied().zip(trace.loss.iter().copied()).collect(),
            style: Style::Line,
            color: 0,
        }],
        ..Chart::default()
    };
    if let Some(train) = train {
        let t_max = trace.times.last().copied().unwrap_or(0.0);
        for (k, &tau) in train.tau.iter().enumerate() {
            if tau <= t_max {
                chart.markers.push((tau, format!("τ{}", k + 1)));
            }
        }
    }
    chart
}

fn dynamics_chart(report: &SilentAlignmentReport, run: usize) -> Chart {
    let r = &report.runs[run];
    let mut chart = Chart {
        title: format!("Singular-value dynamics, σ² = {:e}", r.sigma2),
        x_label: "flow time t".into(),
        y_label: "s_k²".into(),
        ..Chart::default()
    };
    let d = r.trace.dim().min(r.realized_s0.len());
    for k in 0..d {
        let lambda = report.eigenvalues[k];
        let s0sq = r.realized_s0[k] * r.realized_s0[k];
        chart.series.push(Series {
            name: format!("mode {} measured", k + 1),
            points: r.trace.times.iter().copied().zip(r.trace.mode(k)).collect(),
            style: Style::Line,
            color: k,
        });
        chart.series.push(Series {
            name: format!("mode {} theory", k + 1),
            points: r.trace.times.iter().map(|&t| (t, sigmoidal_variance(lambda, s0sq, t))).collect(),
            style: Style::Dashed,
            color: k,
        });
    }
    chart
}

fn spectrum_chart(plot: &qwem_core::taskvec::SpectrumPlot) -> Chart {
    let h = &plot.histogram;
    let n: usize = h.counts.iter().sum();
    let mut bars = Vec::with_capacity(h.counts.len());
    for (i, &c) in h.counts.iter().enumerate() {
        let width = h.edges[i + 1] - h.edges[i];
        bars.push((h.edges[i], h.edges[i + 1], c as f64 / (n.max(1) as f64 * width)));
    }
    Chart {
        title: format!("{}: task-vector spectrum, d = {}", plot.category, plot.d),
        x_label: "eigenvalue / d_eff".into(),
        y_label: "density".into(),
        series: vec![Series { name: "MP fit".into(), points: plot.density.clone(), style: Style::Line, color: 3 }],
        markers: vec![(plot.spike, "spike".into())],
        bars,
        ..Chart::default()
    }
}

fn sweep_chart(summary: &TaskvecSummary, accuracy: bool) -> Chart {
    let mut names: Vec<&str> = Vec::new();
    for row in &summary.sweep {
        if !names.contains(&row.category.as_str()) {
            names.push(&row.category);
        }
    }
    let mut series = Vec::new();
    for (c, name) in names.iter().enumerate() {
        let points: Vec<(f64, f64)> = summary
            .sweep
            .iter()
            .filter(|r| r.category == *name)
            .map(|r| (r.d as f64, if accuracy { r.accuracy } else { r.snr }))
            .collect();
        series.push(Series { name: name.to_string(), points: points.clone(), style: Style::Line, color: c });
        series.push(Series { name: name.to_string(), points, style: Style::Points, color: c });
    }
    Chart {
        title: if accuracy { "Analogy accuracy vs d".into() } else { "Spike SNR vs d".into() },
        x_label: "d".into(),
        y_label: if accuracy { "accuracy".into() } else { "SNR".into() },
        log_y: !accuracy,
        series,
        ..Chart::default()
    }
}

/// Category rows with one accuracy column per normalization.
fn eval_table(summary: &EvalSummary) -> String {
    let mut out = String::new();
    let heads: Vec<String> = summary
        .analogy
        .iter()
        .map(|r| match r.normalization {
            qwem_core::Normalization::Full => "full norm.".to_string(),
            qwem_core::Normalization::CandidateOnly => "candidate norm.".to_string(),
        })
        .collect();
    writeln!(out, "| category | questions | {} |", heads.join(" | ")).unwrap();
    writeln!(out, "|---|---:|{}", "---:|".repeat(heads.len())).unwrap();
    if let Some(first) = summary.analogy.first() {
        for (i, cat) in first.categories.iter().enumerate() {
            let cells: Vec<String> =
                summary.analogy.iter().map(|r| format!("{:.1}%", 100.0 * r.categories[i].accuracy)).collect();
            writeln!(out, "| {} | {} | {} |", cat.name, cat.total, cells.join(" | ")).unwrap();
        }
        let cells: Vec<String> = summary.analogy.iter().map(|r| format!("**{:.1}%**", 100.0 * r.accuracy)).collect();
        writeln!(out, "| **all** | {} | {} |", first.total, cells.join(" | ")).unwrap();
    }
    out
}

pub fn report(a: &ReportArgs, args: &[String]) -> Result<()> {
    let run = &a.run;
    let entries: Vec<_> = fs::read_dir(run).at(run)?.collect::<std::io::Result<_>>().at(run)?;
    if entries.is_empty() {
        return Err(CliError::data(format!("{}: run directory is empty", run.display())));
    }
    let out = a.out.clone().unwrap_or_else(|| run.clone());
    fs::create_dir_all(&out).at(&out)?;
    let mut m = ManifestBuilder::start("report", args);
    m.config(&json!({ "run": run, "out": out }))?;
    let mut md = format!("# Report for `{}`\n\n", run.display());
    let mut found = false;
    let emit = |name: &str, chart: &Chart, m: &mut ManifestBuilder| -> Result<String> {
        let path = out.join(name);
        fs::write(&path, chart.render()).at(&path)?;
        m.output(&path);
        Ok(format!("![{}]({name})\n\n", chart.title))
    };

    let trace_path = run.join(TRACE_FILE);
    if trace_path.exists() {
        found = true;
        m.input(&trace_path)?;
        let trace = read_trace_csv(&trace_path)?;
        let train_path = run.join(TRAIN_FILE);
        let train: Option<TrainSummary> = if train_path.exists() {
            m.input(&train_path)?;
            Some(read_json(&train_path)?)
        } else {
            None
        };
        md.push_str("## Training\n\n");
        if let Some(t) = &train {
            writeln!(
                md,
                "Loss `{:?}`, d = {}, {} steps, base rate {:e}.\n",
                t.config.loss, t.config.d, t.config.steps, t.config.lr
            )
            .unwrap();
        }
        md.push_str(&emit("loss.svg", &loss_chart(&trace, train.as_ref()), &mut m)?);
    }

    let dyn_path = run.join(DYNAMICS_FILE);
    if dyn_path.exists() {
        found = true;
        m.input(&dyn_path)?;
        let report: SilentAlignmentReport = read_json(&dyn_path)?;
        md.push_str("## Gradient-flow dynamics\n\n| σ² | sup distance | final relative distance |\n|---:|---:|---:|\n");
        for r in &report.runs {
            writeln!(md, "| {:e} | {:.4e} | {:.4e} |", r.sigma2, r.sup_distance, r.final_relative_distance).unwrap();
        }
        md.push('\n');
        for k in 0..report.runs.len() {
            md.push_str(&emit(&format!("dynamics_{k}.svg"), &dynamics_chart(&report, k), &mut m)?);
        }
    }

    let eval_path = run.join(EVAL_FILE);
    if eval_path.exists() {
        found = true;
        m.input(&eval_path)?;
        let summary: EvalSummary = read_json(&eval_path)?;
        md.push_str("## Benchmarks\n\n");
        let table = eval_table(&summary);
        let path = out.join("eval_table.md");
        fs::write(&path, &table).at(&path)?;
        m.output(&path);
        md.push_str(&table);
        md.push('\n');
        if let Some(s) = &summary.similarity {
            writeln!(md, "Similarity ({}): Spearman ρ = {:.4} over {} pairs.\n", s.score, s.spearman, s.pairs).unwrap();
        }
        for c in &summary.components {
            let words: Vec<&str> = c.neighbors.iter().map(|(w, _)| w.as_str()).collect();
            writeln!(md, "- component {}: {}", c.component + 1, words.join(", ")).unwrap();
        }
        if !summary.components.is_empty() {
            md.push('\n');
        }
    }

    let tv_path = run.join(TASKVEC_FILE);
    if tv_path.exists() {
        found = true;
        m.input(&tv_path)?;
        let summary: TaskvecSummary = read_json(&tv_path)?;
        md.push_str("## Task vectors\n\n| category | σ² | d_eff | KS |\n|---|---:|---:|---:|\n");
        for p in &summary.spectra {
            writeln!(md, "| {} | {:.4e} | {} | {:.4} |", p.category, p.fit.sigma2, p.fit.d_eff, p.fit.ks).unwrap();
        }
        md.push('\n');
        for (k, plot) in summary.spectra.iter().enumerate() {
            md.push_str(&emit(&format!("spectrum_{k}.svg"), &spectrum_chart(plot), &mut m)?);
        }
        md.push_str(&emit("sweep_snr.svg", &sweep_chart(&summary, false), &mut m)?);
        md.push_str(&emit("sweep_accuracy.svg", &sweep_chart(&summary, true), &mut m)?);
    }

    if !found {
        return Err(CliError::data(format!("{}: no traces or results to report", run.display())));
    }
    let path = out.join("report.md");
    fs::write(&path, &md).at(&path)?;
    m.output(&path);
    println!("wrote {}", path.display());
    m.finish(&out)?;
    Ok(())
}
