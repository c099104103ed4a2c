//! Markdown summaries of a ledger.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::render::{curves_csv, curves_from_records, render_curves_svg};
use super::runner::{latest_records, read_ledger, RunRecord, RunStatus, LEDGER_FILE};
use crate::metrics::mean_pairwise_disagreement;
use crate::probe::DecisionMap;
use crate::{Error, Result};

/// Per-backend aggregates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BackendSummary {
    pub backend: String,
    pub runs: usize,
    pub failed: usize,
    pub mean_accuracy: Option<f64>,
    pub mean_fragmentation: Option<f64>,
    pub mean_regions: Option<f64>,
    /// Mean pairwise disagreement between context orderings, averaged over
    /// every group that has at least two orderings.
    pub order_disagreement: Option<f64>,
    /// Same, between label sets that are permutations of each other.
    pub label_swap_disagreement: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into())
}

/// Groups map-bearing records by `key` and averages the mean pairwise
/// disagreement over groups of two or more.
fn grouped_disagreement<K: Ord>(
    records: &[&RunRecord],
    outputs: &Path,
    key: impl Fn(&RunRecord) -> K,
) -> Result<Option<f64>> {
    let mut groups: BTreeMap<K, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(key(r)).or_default().push(r);
    }
    let mut values = Vec::new();
    for members in groups.values().filter(|m| m.len() >= 2) {
        let maps = members
            .iter()
            .map(|r| r.load_map(outputs))
            .collect::<Result<Vec<DecisionMap>>>()?;
        values.push(mean_pairwise_disagreement(&maps)?.0);
    }
    Ok(mean(values.into_iter()))
}

fn sorted_labels(r: &RunRecord) -> Vec<String> {
    let mut l = r.prompt.labels.clone();
    l.sort();
    l
}

pub fn summarize(records: &[RunRecord], outputs: &Path) -> Result<Vec<BackendSummary>> {
    let mut by_backend: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        by_backend.entry(r.backend_name()).or_default().push(r);
    }
    let mut out = Vec::new();
    for (name, rs) in by_backend {
        let usable: Vec<&RunRecord> = rs.iter().copied().filter(|r| r.has_map()).collect();
        // Same everything except the ordering seed.
        let order = grouped_disagreement(&usable, outputs, |r| {
            let mut p = r.prompt.clone();
            p.ordering_seed = None;
            (
                r.task_fingerprint.clone(),
                r.backend_fingerprint.clone(),
                r.n_context,
                serde_json::to_string(&p).unwrap_or_default(),
            )
        })?;
        // Same label multiset and ordering, different label order.
        let swap = grouped_disagreement(&usable, outputs, |r| {
            let mut p = r.prompt.clone();
            p.labels = sorted_labels(r);
            (
                r.task_fingerprint.clone(),
                r.backend_fingerprint.clone(),
                r.n_context,
                serde_json::to_string(&p).unwrap_or_default(),
            )
        })?;
        out.push(BackendSummary {
            backend: name.to_string(),
            runs: rs.len(),
            failed: rs.iter().filter(|r| r.status == RunStatus::Failed).count(),
            mean_accuracy: mean(usable.iter().filter_map(|r| r.accuracy)),
            mean_fragmentation: mean(usable.iter().filter_map(|r| r.metrics.as_ref().map(|m| m.fragmentation))),
            mean_regions: mean(usable.iter().filter_map(|r| r.metrics.as_ref().map(|m| m.region_count as f64))),
            order_disagreement: order,
            label_swap_disagreement: swap,
        });
    }
    Ok(out)
}

/// Renders the report. `figures` are (caption, relative path) links.
pub fn report_markdown(records: &[RunRecord], outputs: &Path, figures: &[(String, String)]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::EmptyLedger);
    }
    let records = latest_records(records);
    let summaries = summarize(&records, outputs)?;
    let mut s = String::from("# Decision-map report\n\n## Backends\n\n");
    s.push_str("| backend | runs | failed | accuracy | fragmentation | regions | order disagreement | label-swap disagreement |\n");
    s.push_str("|---|---|---|---|---|---|---|---|\n");
    for b in &summaries {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            b.backend,
            b.runs,
            b.failed,
            fmt(b.mean_accuracy),
            fmt(b.mean_fragmentation),
            fmt(b.mean_regions),
            fmt(b.order_disagreement),
            fmt(b.label_swap_disagreement)
        );
    }

    if !figures.is_empty() {
        s.push_str("\n## Figures\n\n");
        for (caption, path) in figures {
            let _ = writeln!(s, "- [{caption}]({path})");
        }
    }

    s.push_str("\n## Runs\n\n| backend | task | seed | prompt | n | status | accuracy | fragmentation | regions | abstains | map |\n");
    s.push_str("|---|---|---|---|---|---|---|---|---|---|---|\n");
    for r in &records {
        let status = match r.status {
            RunStatus::Ok => "ok",
            RunStatus::Degraded => "degraded",
            RunStatus::Failed => "failed",
        };
        let link = r
            .svg_file
            .as_ref()
            .map(|p| format!("[svg]({p})"))
            .unwrap_or_else(|| r.error.clone().unwrap_or_default().replace('|', "/"));
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.backend.name,
            r.task.kind.name(),
            r.task.seed,
            r.prompt_name,
            r.n_context,
            status,
            fmt(r.accuracy),
            fmt(r.metrics.as_ref().map(|m| m.fragmentation)),
            r.metrics.as_ref().map(|m| m.region_count.to_string()).unwrap_or_else(|| "n/a".into()),
            r.abstain_count.map(|a| a.to_string()).unwrap_or_else(|| "n/a".into()),
            link
        );
    }
    Ok(s)
}

/// Reads `<outputs>/ledger.jsonl`, writes accuracy curves per task kind
/// under `figures/` and the report to `report.md`. Returns the report path.
pub fn write_report(outputs: &Path) -> Result<PathBuf> {
    let records = latest_records(&read_ledger(outputs.join(LEDGER_FILE))?);
    if records.is_empty() {
        return Err(Error::EmptyLedger);
    }
    std::fs::create_dir_all(outputs.join("figures"))?;
    let mut by_kind: BTreeMap<&str, Vec<RunRecord>> = BTreeMap::new();
    for r in &records {
        by_kind.entry(r.task.kind.name()).or_default().push(r.clone());
    }
    let mut figures = Vec::new();
    for (kind, rs) in by_kind {
        let series = curves_from_records(&rs);
        if series.is_empty() {
            continue;
        }
        let svg = format!("figures/curves_{kind}.svg");
        let csv = format!("figures/curves_{kind}.csv");
        std::fs::write(outputs.join(&svg), render_curves_svg(&series, &format!("{kind} tasks")))?;
        std::fs::write(outputs.join(&csv), curves_csv(&series))?;
        figures.push((format!("accuracy vs context size, {kind}"), svg));
        figures.push((format!("curve data, {kind}"), csv));
    }
    let md = report_markdown(&records, outputs, &figures)?;
    let path = outputs.join("report.md");
    std::fs::write(&path, md)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::MockScript;
    use crate::backend::{BackendDescriptor, BackendKind};
    use crate::experiment::config::{ExperimentConfig, PromptVariant, ScaleSpec, TaskTemplate};
    use crate::experiment::runner::run;
    use crate::promptfmt::PromptConfig;
    use crate::taskgen::TaskKind;

    fn config(dir: &Path, variants: Vec<PromptVariant>, n: Vec<usize>) -> ExperimentConfig {
        let mut d = BackendDescriptor::new("mock", BackendKind::Mock);
        d.params = serde_json::to_value(MockScript::NearestCentroid { temperature: 100.0 }).unwrap();
        ExperimentConfig {
            name: "r".into(),
            tasks: vec![TaskTemplate::new(TaskKind::Moon, [0])],
            backends: vec![d],
            prompt_variants: variants,
            n_context: n,
            n_test: 10,
            grid_g: 8,
            scale: ScaleSpec::default(),
            outputs: dir.to_path_buf(),
            cache_dir: None,
            oracle_metrics: false,
            active: None,
        }
    }

    #[test]
    fn one_record_gives_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), vec![PromptVariant::new(PromptConfig::default())], vec![8]);
        let summary = run(&cfg).unwrap();
        let md = report_markdown(&summary.records, dir.path(), &[]).unwrap();
        let backend_rows = md
            .split("## Runs")
            .next()
            .unwrap()
            .lines()
            .filter(|l| l.starts_with("| mock"))
            .count();
        assert_eq!(backend_rows, 1);
        assert!(md.contains("| mock | 1 | 0 |"));
    }

    #[test]
    fn order_study_reports_pairwise_disagreement() {
        let dir = tempfile::tempdir().unwrap();
        let variants: Vec<PromptVariant> = (0..5)
            .map(|s| PromptVariant::new(PromptConfig::default().with_ordering_seed(Some(s))))
            .collect();
        let cfg = config(dir.path(), variants, vec![8]);
        let summary = run(&cfg).unwrap();
        let maps: Vec<DecisionMap> = summary.records.iter().map(|r| r.load_map(dir.path()).unwrap()).collect();
        let (expected, pairs) = mean_pairwise_disagreement(&maps).unwrap();
        assert_eq!(pairs, 10);
        let s = summarize(&summary.records, dir.path()).unwrap();
        assert_eq!(s[0].order_disagreement, Some(expected));
        assert_eq!(s[0].label_swap_disagreement, None);
    }

    #[test]
    fn label_swaps_are_grouped() {
        let dir = tempfile::tempdir().unwrap();
        let variants = vec![
            PromptVariant::new(PromptConfig::new(["Foo", "Bar"])),
            PromptVariant::new(PromptConfig::new(["Bar", "Foo"])),
        ];
        let cfg = config(dir.path(), variants, vec![8, 16]);
        let summary = run(&cfg).unwrap();
        let s = summarize(&summary.records, dir.path()).unwrap();
        // The centroid mock ignores label names.
        assert_eq!(s[0].label_swap_disagreement, Some(0.0));
    }

    #[test]
    fn empty_ledger() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(report_markdown(&[], dir.path(), &[]), Err(Error::EmptyLedger)));
        assert!(matches!(write_report(dir.path()), Err(Error::EmptyLedger)));
    }

    #[test]
    fn written_report_links_curves() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), vec![PromptVariant::new(PromptConfig::default())], vec![8, 16]);
        run(&cfg).unwrap();
        let path = write_report(dir.path()).unwrap();
        let md = std::fs::read_to_string(path).unwrap();
        assert!(md.contains("figures/curves_moon.svg"));
        assert!(dir.path().join("figures/curves_moon.csv").exists());
    }
}
