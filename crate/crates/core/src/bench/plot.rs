use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::report::{CellReport, Summary, SuiteReport};
use super::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Fraction,
    Collisions,
    Distance,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Self::Fraction, Self::Collisions, Self::Distance];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fraction => "fraction",
            Self::Collisions => "collisions",
            Self::Distance => "distance",
        }
    }

    fn of(self, cell: &CellReport) -> &Summary {
        match self {
            Self::Fraction => &cell.fraction,
            Self::Collisions => &cell.collisions,
            Self::Distance => &cell.distance,
        }
    }

    fn axis_label(self) -> &'static str {
        match self {
            Self::Fraction => "fraction of route reached",
            Self::Collisions => "collisions per episode",
            Self::Distance => "distance traveled [m]",
        }
    }
}

const W_BOX: f64 = 90.0;
const LEFT: f64 = 70.0;
const TOP: f64 = 40.0;
const PLOT_H: f64 = 300.0;
const BOTTOM: f64 = 90.0;

fn nice_max(v: f64) -> f64 {
    if v <= 0.0 {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&c| c >= v - 1e-12)
        .unwrap_or(10.0 * mag)
}

/// One box per cell: whiskers at min and max, box at the quartiles, a bar at
/// the median and a dot at the mean.
pub fn box_plot_svg(report: &SuiteReport, metric: Metric) -> Result<String, BenchError> {
    if report.cells.is_empty() {
        return Err(BenchError::Empty);
    }
    let top = match metric {
        Metric::Fraction => 1.0,
        _ => nice_max(report.cells.iter().map(|c| metric.of(c).max).fold(0.0, f64::max)),
    };
    let width = LEFT + W_BOX * report.cells.len() as f64 + 20.0;
    let height = TOP + PLOT_H + BOTTOM;
    let y = |v: f64| TOP + PLOT_H * (1.0 - v / top);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="13">{} / {}</text>"#,
        width / 2.0,
        report.suite,
        metric.as_str()
    );
    for i in 0..=5 {
        let v = top * i as f64 / 5.0;
        let yy = y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{yy:.1}" x2="{:.1}" y2="{yy:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
            width - 20.0,
            LEFT - 6.0,
            yy + 4.0,
            format_tick(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        TOP + PLOT_H / 2.0,
        metric.axis_label()
    );
    for (i, cell) in report.cells.iter().enumerate() {
        let st = metric.of(cell);
        let cx = LEFT + W_BOX * (i as f64 + 0.5);
        let half = W_BOX * 0.3;
        let _ = writeln!(
            s,
            r#"<g><line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/><line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
            y(st.max),
            y(st.q3),
            y(st.q1),
            y(st.min)
        );
        let _ = writeln!(
            s,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#9ecae1" stroke="black"/>"##,
            cx - half,
            y(st.q3),
            2.0 * half,
            (y(st.q1) - y(st.q3)).max(0.5)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black" stroke-width="2"/><circle cx="{cx:.1}" cy="{:.1}" r="3" fill="white" stroke="black"/>"#,
            cx - half,
            y(st.median),
            cx + half,
            y(st.median),
            y(st.mean)
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate({cx:.1} {:.1}) rotate(30)">{}</text></g>"#,
            TOP + PLOT_H + 14.0,
            cell.key.label()
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn format_tick(v: f64) -> String {
    let t = format!("{v:.2}");
    t.trim_end_matches('0').trim_end_matches('.').to_string()
}
