//! Markdown summary of a run directory.

use std::fmt::Write;

use crate::error::Result;
use crate::pipeline::{read_benchmark, BenchmarkSummary, Run};

fn csv_table(text: &str) -> String {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let Some(head) = lines.next() else { return String::new() };
    let cols = head.split(',').count();
    let mut s = format!("| {} |\n|{}\n", head.replace(',', " | "), "---|".repeat(cols));
    for l in lines {
        s += &format!("| {} |\n", l.replace(',', " | "));
    }
    s
}

/// Stage timings, input and output metrics, retrieval and verification.
pub fn render(run: &Run) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "# Run report\n\nconfig hash `{}`\n", run.config.hash());
    let _ = writeln!(s, "## Stages\n\n| stage | seconds | artifacts |\n|---|---|---|");
    for r in &run.manifest.records {
        let _ = writeln!(s, "| {} | {:.1} | {} |", r.stage, r.seconds, r.artifacts.len());
    }
    let _ = writeln!(s, "\ntotal {:.1} s\n", run.manifest.total_seconds());

    if let Some(r) = run.manifest.completed("train") {
        let _ = writeln!(
            s,
            "## Training\n\n{} iterations, {} parameters, final loss {}, validation loss {}\n",
            r.summary["iterations"], r.summary["parameters"], r.summary["final_loss"], r.summary["val_loss"]
        );
    }
    if let Ok(text) = std::fs::read_to_string(run.path("alignment/retrieval.csv")) {
        let _ = writeln!(s, "## Retrieval\n\n{}", csv_table(&text));
    }
    for (title, file) in [("Input metrics", "eval/input_metrics.csv"), ("Output metrics", "eval/metrics.csv")] {
        if let Ok(text) = std::fs::read_to_string(run.path(file)) {
            let _ = writeln!(s, "## {title}\n\n{}", csv_table(&text));
        }
    }
    if let Ok(rows) = read_benchmark(&run.dir) {
        let b = BenchmarkSummary::from_rows(&rows);
        let _ = writeln!(
            s,
            "## Benchmark\n\n| quantity | value |\n|---|---|\n| mean PSNR gain (dB) | {:.3} |\n| mean SSIM gain | {:.4} |\n\
             | ISNR > 0 | {:.0}% |\n| mean abs bone shift | {:.5} |\n| mean noise floor | {:.5} |\n\
             | mean structure MAE | {:.5} |\n",
            b.mean_psnr_gain,
            b.mean_ssim_gain,
            100.0 * b.isnr_positive_fraction,
            b.mean_abs_bone_shift,
            b.mean_noise_floor,
            b.mean_structure_mae
        );
    }
    if let Ok(text) = std::fs::read_to_string(run.path("verify/report.txt")) {
        let _ = writeln!(s, "## Verification\n\n```text\n{}```", text);
    }
    Ok(s)
}
