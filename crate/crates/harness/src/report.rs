//! Combined report emission: one flat CSV, a JSON summary, and static SVG
//! grouped-bar charts (one per evaluation setting).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use coldrec_core::eval::{EvalReport, EvalSetting, PartitionSummary};

#[derive(Serialize)]
struct SummaryProtocol<'a> {
    setting: EvalSetting,
    warm_test: &'a PartitionSummary,
    cold_test: &'a PartitionSummary,
}

#[derive(Serialize)]
struct SummaryEntry<'a> {
    scheme: &'a str,
    model: &'a str,
    k: usize,
    config_digest: &'a str,
    protocols: Vec<SummaryProtocol<'a>>,
}

/// Write `combined.csv`, `summary.json`, and one grouped-bar SVG per
/// setting into `out_dir`; returns the written paths.
pub fn emit_report(reports: &[EvalReport], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        bail!("no reports to emit");
    }
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating report directory {}", out_dir.display()))?;
    let mut written = Vec::new();

    let mut csv = String::from(EvalReport::CSV_HEADER);
    csv.push('\n');
    for report in reports {
        csv.push_str(&report.csv_rows());
    }
    let csv_path = out_dir.join("combined.csv");
    std::fs::write(&csv_path, &csv)?;
    written.push(csv_path);

    let summary: Vec<SummaryEntry> = reports
        .iter()
        .map(|r| SummaryEntry {
            scheme: &r.scheme,
            model: &r.model,
            k: r.k,
            config_digest: &r.config_digest,
            protocols: r
                .protocols
                .iter()
                .map(|p| SummaryProtocol {
                    setting: p.setting,
                    warm_test: &p.warm_test,
                    cold_test: &p.cold_test,
                })
                .collect(),
        })
        .collect();
    let summary_path = out_dir.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    written.push(summary_path);

    for setting in [EvalSetting::ItemColdProtocol, EvalSetting::UserColdProtocol] {
        let mut groups: Vec<(String, Vec<(String, f64)>)> = Vec::new();
        for report in reports {
            if let Some(proto) = report.protocol(setting) {
                let label = format!("{}/{}", report.scheme, report.model);
                let bars = vec![
                    ("warm".to_string(), proto.warm_test.recall_mean.unwrap_or(0.0)),
                    ("cold".to_string(), proto.cold_test.recall_mean.unwrap_or(0.0)),
                ];
                groups.push((label, bars));
            }
        }
        if groups.is_empty() {
            continue;
        }
        let title = format!("Recall@{} — {}", reports[0].k, setting);
        let svg = grouped_bar_svg(&title, &groups);
        let path = out_dir.join(format!("recall_{setting}.svg"));
        std::fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Static grouped-bar chart. Each group gets one bar per (name, value) pair;
/// the first group's bar names feed the legend.
pub fn grouped_bar_svg(title: &str, groups: &[(String, Vec<(String, f64)>)]) -> String {
    const WIDTH: f64 = 760.0;
    const HEIGHT: f64 = 420.0;
    const MARGIN_LEFT: f64 = 60.0;
    const MARGIN_BOTTOM: f64 = 80.0;
    const MARGIN_TOP: f64 = 50.0;
    const PALETTE: [&str; 4] = ["#4878a8", "#d08159", "#72a86e", "#9a6fb0"];

    let plot_w = WIDTH - MARGIN_LEFT - 20.0;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let max_val = groups
        .iter()
        .flat_map(|(_, bars)| bars.iter().map(|(_, v)| *v))
        .fold(0.0f64, f64::max)
        .max(1e-6);
    let y_top = max_val * 1.15;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        xml_escape(title)
    ));

    // Gridlines + y labels.
    for tick in 0..=4 {
        let frac = tick as f64 / 4.0;
        let y = MARGIN_TOP + plot_h * (1.0 - frac);
        let value = y_top * frac;
        svg.push_str(&format!(
            "  <line x1=\"{MARGIN_LEFT}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#dddddd\"/>\n",
            MARGIN_LEFT + plot_w
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{value:.3}</text>\n",
            MARGIN_LEFT - 6.0,
            y + 4.0
        ));
    }

    let n_groups = groups.len().max(1) as f64;
    let group_w = plot_w / n_groups;
    for (g, (label, bars)) in groups.iter().enumerate() {
        let n_bars = bars.len().max(1) as f64;
        let bar_w = (group_w * 0.8) / n_bars;
        let group_x = MARGIN_LEFT + group_w * g as f64 + group_w * 0.1;
        for (b, (_, value)) in bars.iter().enumerate() {
            let h = (value / y_top) * plot_h;
            let x = group_x + bar_w * b as f64;
            let y = MARGIN_TOP + plot_h - h;
            svg.push_str(&format!(
                "  <rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"{}\"/>\n",
                bar_w * 0.92,
                PALETTE[b % PALETTE.len()]
            ));
        }
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\" transform=\"rotate(-35 {:.1} {:.1})\">{}</text>\n",
            group_x + group_w * 0.4,
            MARGIN_TOP + plot_h + 14.0,
            group_x + group_w * 0.4,
            MARGIN_TOP + plot_h + 14.0,
            xml_escape(label)
        ));
    }

    // Legend from the first group's bar names.
    if let Some((_, bars)) = groups.first() {
        for (b, (name, _)) in bars.iter().enumerate() {
            let x = MARGIN_LEFT + 110.0 * b as f64;
            let y = HEIGHT - 18.0;
            svg.push_str(&format!(
                "  <rect x=\"{x:.1}\" y=\"{:.1}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n",
                y - 10.0,
                PALETTE[b % PALETTE.len()]
            ));
            svg.push_str(&format!(
                "  <text x=\"{:.1}\" y=\"{y:.1}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
                x + 16.0,
                xml_escape(name)
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use coldrec_core::eval::ProtocolReport;

    fn toy_report(scheme: &str, warm: f64, cold: f64) -> EvalReport {
        EvalReport {
            scheme: scheme.into(),
            model: "markov-o2".into(),
            k: 10,
            config_digest: "abc123".into(),
            protocols: vec![ProtocolReport {
                setting: EvalSetting::ItemColdProtocol,
                warm_test: PartitionSummary {
                    partition: "warm_test".into(),
                    n: 100,
                    excluded: 0,
                    recall_mean: Some(warm),
                    ndcg_mean: Some(warm / 2.0),
                },
                cold_test: PartitionSummary {
                    partition: "cold_test".into(),
                    n: 40,
                    excluded: 0,
                    recall_mean: Some(cold),
                    ndcg_mean: Some(cold / 2.0),
                },
                case_scores: vec![],
            }],
        }
    }

    /// Minimal well-formedness check: tags balance and one root element.
    fn assert_well_formed_xml(text: &str) {
        let mut stack: Vec<String> = Vec::new();
        let mut roots = 0;
        let mut rest = text;
        while let Some(open) = rest.find('<') {
            let close = rest[open..].find('>').expect("unclosed tag") + open;
            let tag = &rest[open + 1..close];
            rest = &rest[close + 1..];
            if tag.starts_with('?') || tag.starts_with('!') {
                continue;
            }
            if let Some(name) = tag.strip_prefix('/') {
                let top = stack.pop().unwrap_or_else(|| panic!("stray closer {name}"));
                assert_eq!(top, name, "mismatched closing tag");
                if stack.is_empty() {
                    roots += 1;
                }
            } else if tag.ends_with('/') {
                if stack.is_empty() {
                    roots += 1;
                }
            } else {
                let name = tag.split_whitespace().next().unwrap().to_string();
                stack.push(name);
            }
        }
        assert!(stack.is_empty(), "unclosed tags: {stack:?}");
        assert_eq!(roots, 1, "expected exactly one root element");
    }

    #[test]
    fn emits_csv_summary_and_svg() {
        let dir = tempfile::tempdir().unwrap();
        let reports = vec![toy_report("rq", 0.21, 0.01), toy_report("opq", 0.2, 0.03)];
        let written = emit_report(&reports, dir.path()).unwrap();
        assert!(written.iter().any(|p| p.ends_with("combined.csv")));
        assert!(written.iter().any(|p| p.ends_with("summary.json")));
        assert!(written.iter().any(|p| p.ends_with("recall_item_cold.svg")));
    }

    #[test]
    fn csv_roundtrips_exact_values() {
        let dir = tempfile::tempdir().unwrap();
        let reports = vec![toy_report("rq", 0.2137, 0.0123456789)];
        emit_report(&reports, dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("combined.csv")).unwrap();
        let mut found = 0;
        for line in csv.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            let value: f64 = cols[6].parse().unwrap();
            match (cols[3], cols[4]) {
                ("warm_test", "recall") => {
                    assert_eq!(value, 0.2137);
                    found += 1;
                }
                ("cold_test", "recall") => {
                    assert_eq!(value, 0.0123456789);
                    found += 1;
                }
                _ => {}
            }
        }
        assert_eq!(found, 2);
    }

    #[test]
    fn svg_is_well_formed() {
        let groups = vec![
            (
                "rq/recurrent <h64>".to_string(),
                vec![("warm".to_string(), 0.2), ("cold".to_string(), 0.01)],
            ),
            (
                "opq & co".to_string(),
                vec![("warm".to_string(), 0.19), ("cold".to_string(), 0.05)],
            ),
        ];
        let svg = grouped_bar_svg("Recall@10 \"demo\"", &groups);
        assert_well_formed_xml(&svg);
        assert!(svg.contains("&quot;demo&quot;"));
        assert!(svg.contains("&lt;h64&gt;"));
    }

    #[test]
    fn empty_reports_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(&[], dir.path()).is_err());
    }
}
