//! Human-readable reports printed on standard output.

use std::fmt::Write;
use std::path::Path;

use aeromine_core::{ArrayConfiguration, DesignSpace, RunConfig, RunMode, RunResult};

pub fn design(space: &DesignSpace, config: &ArrayConfiguration) -> String {
    let mut out = format!("  spacing      {}\n", config.spacing);
    for (i, g) in config.genomes.iter().enumerate() {
        let values: Vec<String> = space
            .parameters
            .iter()
            .zip(&g.values)
            .map(|(p, v)| format!("{}={v}", p.name))
            .collect();
        let _ = writeln!(out, "  position {}   {}", i + 1, values.join(" "));
    }
    out
}

pub fn run(journal: &Path, config: &RunConfig, mode: RunMode, result: &RunResult) -> String {
    let status = serde_json::to_value(result.status)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    let mut out = String::new();
    let _ = writeln!(out, "journal        {}", journal.display());
    let _ = writeln!(out, "mode           {}", mode.as_str());
    let _ = writeln!(out, "seed           {}", config.seed);
    let _ = writeln!(out, "status         {status}");
    let _ = writeln!(out, "oracle calls   {} of {}", result.calls, config.budget);
    let _ = writeln!(out, "mining rounds  {}", result.rounds);
    match (&result.best_fitness, &result.best_configuration) {
        (Some(f), Some(c)) => {
            let _ = writeln!(out, "best fitness   {f}");
            out.push_str(&design(&config.space, c));
        }
        _ => out.push_str("best fitness   none\n"),
    }
    out
}
