//! Static SVG line charts for sweep facets and the useless-regressor curve.

use std::fmt::Write as _;

use super::{Fig2Point, SweepResult, Variant};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 4] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Tick positions and labels; empty means five evenly spaced numeric ticks.
    pub x_ticks: Vec<(f64, String)>,
    /// Values below this are drawn at the floor.
    pub y_floor: Option<f64>,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

impl Chart {
    pub fn to_svg(&self) -> String {
        let floor = self.y_floor.unwrap_or(f64::NEG_INFINITY);
        let pts = || self.series.iter().flat_map(|s| s.points.iter());
        let (x0, x1) = bounds(pts().map(|p| p.0));
        let (y0, y1) = bounds(pts().map(|p| p.1.max(floor)));
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (1.0 - (y.max(floor) - y0) / (y1 - y0)) * ph;

        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(
            out,
            r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            out,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );

        let x_ticks: Vec<(f64, String)> = if self.x_ticks.is_empty() {
            (0..5)
                .map(|i| x0 + (x1 - x0) * i as f64 / 4.0)
                .map(|v| (v, format!("{v:.3}")))
                .collect()
        } else {
            self.x_ticks.clone()
        };
        for (v, label) in &x_ticks {
            let x = sx(*v);
            let _ = writeln!(
                out,
                r#"<line x1="{x:.1}" y1="{}" x2="{x:.1}" y2="{}" stroke="black"/><text x="{x:.1}" y="{}" text-anchor="middle">{}</text>"#,
                TOP + ph,
                TOP + ph + 5.0,
                TOP + ph + 18.0,
                escape(label)
            );
        }
        for i in 0..5 {
            let v = y0 + (y1 - y0) * i as f64 / 4.0;
            let y = sy(v);
            let _ = writeln!(
                out,
                r##"<line x1="{LEFT}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#dddddd"/><text x="{}" y="{:.1}" text-anchor="end">{v:.3}</text>"##,
                LEFT + pw,
                LEFT - 6.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 15.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );

        for (i, s) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let path: Vec<String> = s
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                path.join(" ")
            );
            let ly = TOP + 10.0 + 20.0 * i as f64;
            let lx = LEFT + pw + 15.0;
            let _ = writeln!(
                out,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                lx + 25.0,
                lx + 30.0,
                ly + 4.0,
                escape(&s.name)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Median r2_true_test per variant against the grid index, legend in
/// plain, bp, population, bp_da order.
pub fn sweep_svg(result: &SweepResult) -> String {
    let spec = &result.spec;
    let series = Variant::ALL
        .iter()
        .filter(|v| spec.variants.contains(v))
        .map(|&v| Series {
            name: v.name().to_string(),
            points: result
                .median_curve(v)
                .into_iter()
                .map(|(d, r)| {
                    (
                        spec.depth_grid.iter().position(|&g| g == d).unwrap_or(0) as f64,
                        r,
                    )
                })
                .collect(),
        })
        .collect();
    Chart {
        title: format!("{} / {}", spec.dgp.kind.name(), spec.family.name()),
        x_label: spec.family.depth_key().to_string(),
        y_label: "median R² vs true mean (test)".into(),
        x_ticks: spec
            .depth_grid
            .iter()
            .enumerate()
            .map(|(i, d)| (i as f64, d.to_string()))
            .collect(),
        y_floor: Some(-0.5),
        series,
    }
    .to_svg()
}

pub fn fig2_svg(points: &[Fig2Point]) -> String {
    let curve =
        |f: fn(&Fig2Point) -> f64| points.iter().map(|p| (p.useless as f64, f(p))).collect();
    Chart {
        title: "Averaged Greedy LS and OLS".into(),
        x_label: "useless regressors".into(),
        y_label: "ln(MSE / MSE oracle)".into(),
        x_ticks: points
            .iter()
            .map(|p| (p.useless as f64, p.useless.to_string()))
            .collect(),
        y_floor: None,
        series: vec![
            Series {
                name: "greedy_ls".into(),
                points: curve(Fig2Point::greedy_log_ratio),
            },
            Series {
                name: "ols".into(),
                points: curve(Fig2Point::ols_log_ratio),
            },
        ],
    }
    .to_svg()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_well_formed() {
        let svg = Chart {
            title: "a < b".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            x_ticks: Vec::new(),
            y_floor: Some(0.0),
            series: vec![Series {
                name: "s".into(),
                points: vec![(0.0, 1.0), (1.0, -3.0), (2.0, f64::NAN)],
            }],
        }
        .to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("viewBox=\"0 0 800 500\""));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(!svg.contains("NaN"));
    }
}
