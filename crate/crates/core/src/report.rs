//! Accuracy and transfer-gap curves as CSV tables and standalone SVG charts.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probing::{accuracy_curve, ema_smooth, transfer_gap, CurveSeries, EvalRun, Setting, TransferGap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub lang: String,
    pub ema_weight: f64,
    pub bridge: CurveSeries,
    pub no_bridge: CurveSeries,
    pub gap: TransferGap,
    pub config_hash: Option<String>,
}

/// Refuses runs produced under different configurations unless `force`.
pub fn check_config_hashes(runs: &[EvalRun], force: bool) -> Result<Option<String>> {
    let hashes: BTreeSet<Option<&str>> = runs.iter().map(|r| r.config.config_hash.as_deref()).collect();
    match hashes.len() {
        0 => Ok(None),
        1 => Ok(hashes.into_iter().next().flatten().map(str::to_owned)),
        _ if force => {
            log::warn!("combining runs from {} configurations", hashes.len());
            Ok(None)
        }
        _ => Err(Error::config(format!(
            "runs come from different configurations ({}); pass --force to combine them",
            hashes
                .iter()
                .map(|h| h.unwrap_or("none"))
                .collect::<Vec<_>>()
                .join(", ")
        ))),
    }
}

/// Splits runs of one language by setting and computes both accuracy curves
/// and their gap.
pub fn curve_report(runs: &[EvalRun], ema_weight: f64, force: bool) -> Result<CurveReport> {
    let langs: BTreeSet<&str> = runs.iter().map(|r| r.lang()).collect();
    if langs.len() != 1 {
        return Err(Error::data(format!(
            "a curve report covers one language, runs have {langs:?}"
        )));
    }
    let config_hash = check_config_hashes(runs, force)?;
    let of = |s: Setting| runs.iter().filter(move |r| r.setting() == s);
    let bridge = accuracy_curve(of(Setting::Bridge))?;
    let no_bridge = accuracy_curve(of(Setting::NoBridge))?;
    if bridge.is_empty() || no_bridge.is_empty() {
        return Err(Error::data("a curve report needs runs from both settings"));
    }
    let gap = transfer_gap(&bridge, &no_bridge)?;
    // validates the weight before anything is written
    ema_smooth(&bridge, ema_weight)?;
    Ok(CurveReport {
        lang: langs.into_iter().next().unwrap_or_default().to_owned(),
        ema_weight,
        bridge,
        no_bridge,
        gap,
        config_hash,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `step,acc_bridge,acc_no_bridge,gap`, one row per evaluated step.
pub fn curves_csv(report: &CurveReport) -> Result<Vec<u8>> {
    let steps: BTreeSet<u64> = report.bridge.steps().into_iter().chain(report.no_bridge.steps()).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::data(format!("csv: {e}"));
    w.write_record(["step", "acc_bridge", "acc_no_bridge", "gap"]).map_err(err)?;
    for step in steps {
        w.write_record([
            step.to_string(),
            cell(report.bridge.get(step)),
            cell(report.no_bridge.get(step)),
            cell(report.gap.gap.get(step)),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::data(format!("csv: {e}")))
}

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 300.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 44.0;

struct Line<'a> {
    label: String,
    color: &'a str,
    smoothed: bool,
    series: CurveSeries,
}

struct Panel<'a> {
    title: String,
    y_label: &'a str,
    y_range: (f64, f64),
    y_ticks: Vec<f64>,
    lines: Vec<Line<'a>>,
}

fn tick_label(v: f64) -> String {
    let mut s = format!("{v:.3}");
    if s.ends_with('0') {
        s.pop();
    }
    if s == "-0.00" {
        "0.00".to_owned()
    } else {
        s
    }
}

fn step_ticks(max_step: u64) -> Vec<u64> {
    if max_step == 0 {
        return vec![0];
    }
    let raw = max_step as f64 / 5.0;
    let magnitude = 10f64.powf(raw.log10().floor());
    let nice = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * magnitude)
        .find(|&s| s >= raw)
        .unwrap_or(10.0 * magnitude)
        .max(1.0)
        .round() as u64;
    (0..=max_step / nice).map(|i| i * nice).collect()
}

fn draw_panel(svg: &mut String, panel: &Panel<'_>, top: f64, max_step: u64) {
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = PANEL_HEIGHT - TOP - BOTTOM;
    let y0 = top + TOP;
    let (lo, hi) = panel.y_range;
    let x = |step: u64| LEFT + plot_w * step as f64 / max_step.max(1) as f64;
    let y = |v: f64| y0 + plot_h * (hi - v) / (hi - lo);

    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="14" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        top + 22.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{LEFT:.1}" y="{y0:.1}" width="{plot_w:.1}" height="{plot_h:.1}" fill="none" stroke="#444"/>"##
    );
    for &t in &panel.y_ticks {
        let ty = y(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.1}" y1="{ty:.2}" x2="{:.1}" y2="{ty:.2}" stroke="#ddd"/><text x="{:.1}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"##,
            LEFT,
            LEFT + plot_w,
            LEFT - 6.0,
            ty + 4.0,
            tick_label(t)
        );
    }
    for t in step_ticks(max_step) {
        let tx = x(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{tx:.2}" y1="{:.1}" x2="{tx:.2}" y2="{:.1}" stroke="#444"/><text x="{tx:.2}" y="{:.1}" font-size="11" text-anchor="middle">{t}</text>"##,
            y0 + plot_h,
            y0 + plot_h + 5.0,
            y0 + plot_h + 18.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">step</text>"#,
        LEFT + plot_w / 2.0,
        y0 + plot_h + 36.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        y0 + plot_h / 2.0,
        y0 + plot_h / 2.0,
        panel.y_label
    );
    if lo < 0.0 && hi > 0.0 {
        let zy = y(0.0);
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT:.1}" y1="{zy:.2}" x2="{:.1}" y2="{zy:.2}" stroke="#888" stroke-dasharray="4 3"/>"##,
            LEFT + plot_w
        );
    }
    for (i, line) in panel.lines.iter().enumerate() {
        let mut d = String::new();
        for (j, &(step, v)) in line.series.points().iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2}", if j == 0 { "M" } else { " L" }, x(step), y(v));
        }
        let (width, opacity) = if line.smoothed { (2.2, 1.0) } else { (1.0, 0.45) };
        let _ = writeln!(
            svg,
            r#"<path d="{d}" fill="none" stroke="{}" stroke-width="{width}" stroke-opacity="{opacity}"/>"#,
            line.color
        );
        let ly = y0 + 14.0 + 18.0 * i as f64;
        let lx = LEFT + plot_w + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{}" stroke-width="{width}" stroke-opacity="{opacity}"/><text x="{:.1}" y="{:.1}" font-size="11">{}</text>"#,
            lx + 20.0,
            line.color,
            lx + 26.0,
            ly + 4.0,
            escape(&line.label)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn gap_range(gap: &CurveSeries) -> (f64, f64) {
    let m = gap.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let m = ((m / 0.05).ceil() * 0.05).max(0.05);
    (-m, m)
}

/// Two stacked panels: accuracy per setting and the bridge minus no-bridge
/// gap, each with raw and EMA-smoothed lines.
pub fn curves_svg(report: &CurveReport) -> Result<String> {
    let w = report.ema_weight;
    let smooth = |s: &CurveSeries| ema_smooth(s, w);
    let max_step = report
        .bridge
        .steps()
        .into_iter()
        .chain(report.no_bridge.steps())
        .max()
        .unwrap_or(0);
    let accuracy = Panel {
        title: format!("Accuracy ({})", report.lang),
        y_label: "accuracy",
        y_range: (0.0, 1.0),
        y_ticks: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        lines: vec![
            Line { label: "bridge".into(), color: "#1f77b4", smoothed: false, series: report.bridge.clone() },
            Line { label: format!("bridge EMA {w}"), color: "#1f77b4", smoothed: true, series: smooth(&report.bridge)? },
            Line { label: "no bridge".into(), color: "#d62728", smoothed: false, series: report.no_bridge.clone() },
            Line { label: format!("no bridge EMA {w}"), color: "#d62728", smoothed: true, series: smooth(&report.no_bridge)? },
        ],
    };
    let (lo, hi) = gap_range(&report.gap.gap);
    let mut gap_lines = Vec::new();
    if !report.gap.gap.is_empty() {
        gap_lines.push(Line { label: "gap".into(), color: "#2ca02c", smoothed: false, series: report.gap.gap.clone() });
        gap_lines.push(Line { label: format!("gap EMA {w}"), color: "#2ca02c", smoothed: true, series: smooth(&report.gap.gap)? });
    }
    let gap = Panel {
        title: format!("Transfer gap ({})", report.lang),
        y_label: "bridge - no bridge",
        y_range: (lo, hi),
        y_ticks: vec![lo, lo / 2.0, 0.0, hi / 2.0, hi],
        lines: gap_lines,
    };

    let height = 2.0 * PANEL_HEIGHT;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    draw_panel(&mut svg, &accuracy, 0.0, max_step);
    draw_panel(&mut svg, &gap, PANEL_HEIGHT, max_step);
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probing::RunConfig;

    fn run(setting: Setting, step: u64, correct: usize, hash: Option<&str>) -> EvalRun {
        EvalRun {
            config: RunConfig {
                scorer: "s".into(),
                setting,
                step,
                lang: "ko".into(),
                seed: Some(1),
                config_hash: hash.map(str::to_owned),
            },
            total: 4,
            evaluated: 4,
            correct,
            accuracy: correct as f64 / 4.0,
            questions: vec![],
            unevaluable: vec![],
        }
    }

    fn runs() -> Vec<EvalRun> {
        vec![
            run(Setting::Bridge, 0, 1, Some("h")),
            run(Setting::Bridge, 100, 3, Some("h")),
            run(Setting::NoBridge, 0, 1, Some("h")),
            run(Setting::NoBridge, 100, 2, Some("h")),
            run(Setting::NoBridge, 200, 2, Some("h")),
        ]
    }

    #[test]
    fn csv_rows_cover_all_steps() {
        let r = curve_report(&runs(), 0.8, false).unwrap();
        let csv = String::from_utf8(curves_csv(&r).unwrap()).unwrap();
        assert_eq!(
            csv,
            "step,acc_bridge,acc_no_bridge,gap\n0,0.25,0.25,0\n100,0.75,0.5,0.25\n200,,0.5,\n"
        );
        assert_eq!(r.config_hash.as_deref(), Some("h"));
    }

    #[test]
    fn mixed_hashes_need_force() {
        let mut rs = runs();
        rs.push(run(Setting::Bridge, 200, 4, Some("other")));
        assert!(matches!(curve_report(&rs, 0.8, false), Err(Error::Config(_))));
        assert_eq!(curve_report(&rs, 0.8, true).unwrap().config_hash, None);
    }

    #[test]
    fn svg_has_raw_and_smoothed_paths() {
        let r = curve_report(&runs(), 0.8, false).unwrap();
        let svg = curves_svg(&r).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<path").count(), 6);
        assert!(svg.contains("bridge EMA 0.8"));
        assert_eq!(svg, curves_svg(&r).unwrap());
    }

    #[test]
    fn tick_spacing() {
        assert_eq!(step_ticks(1500), vec![0, 500, 1000, 1500]);
        assert_eq!(step_ticks(200), vec![0, 50, 100, 150, 200]);
        assert_eq!(step_ticks(3), vec![0, 1, 2, 3]);
    }
}
