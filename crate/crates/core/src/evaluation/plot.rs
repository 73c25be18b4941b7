//! SVG figures: real-vs-synthetic feature histograms and a heat map of
//! feature and feature-pair JS distances.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::histogram::{Axis, Histogram};
use super::report::JsReport;
use crate::error::{Error, Result};

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 300.0;
const MARGIN: f64 = 40.0;
const REAL_COLOR: &str = "#1f77b4";
const SYNTH_COLOR: &str = "#ff7f0e";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Overlaid step outlines of two 1D histograms, each normalized to a pmf.
pub fn histogram_svg(title: &str, real: &Histogram, synth: &Histogram) -> Result<String> {
    let axis = match real.axes() {
        [a] => *a,
        _ => return Err(Error::Argument("histogram plot needs a 1D histogram".into())),
    };
    let (p, q) = (real.pmf()?, synth.pmf()?);
    let peak = p.iter().chain(&q).fold(0.0_f64, |m, &v| m.max(v)).max(1e-12);
    let bins = p.len();
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let bw = plot_w / bins as f64;
    let y = |v: f64| HEIGHT - MARGIN - v / peak * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    for (pmf, color) in [(&p, REAL_COLOR), (&q, SYNTH_COLOR)] {
        let mut path = format!("M{MARGIN:.2},{:.2}", y(0.0));
        for (k, &v) in pmf.iter().enumerate() {
            let x0 = MARGIN + k as f64 * bw;
            let _ = write!(path, " L{x0:.2},{:.2} L{:.2},{:.2}", y(v), x0 + bw, y(v));
        }
        let _ = write!(path, " L{:.2},{:.2}", MARGIN + plot_w, y(0.0));
        let _ = writeln!(
            svg,
            r#"<path d="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>"#
        );
    }
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        HEIGHT - MARGIN,
        WIDTH - MARGIN
    );
    let (lo, hi) = match axis {
        Axis::Uniform { lo, hi, .. } => (format!("{lo:.3}"), format!("{hi:.3}")),
        Axis::Categorical { cardinality } => ("0".to_string(), format!("{}", cardinality - 1)),
    };
    let _ = writeln!(svg, r#"<text x="{MARGIN}" y="{}">{lo}</text>"#, HEIGHT - MARGIN + 15.0);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end">{hi}</text>"#,
        WIDTH - MARGIN,
        HEIGHT - MARGIN + 15.0
    );
    for (i, (label, color)) in [("real", REAL_COLOR), ("synthetic", SYNTH_COLOR)].iter().enumerate() {
        let ly = 36.0 + 14.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{label}</text>"#,
            WIDTH - MARGIN - 80.0,
            ly - 9.0,
            WIDTH - MARGIN - 65.0,
            ly
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Grid with single-feature distances on the diagonal and pair distances
/// off it; darker cells are further apart.
pub fn js_heatmap_svg(report: &JsReport) -> String {
    let names: Vec<&str> = report.features.iter().map(|f| f.feature.as_str()).collect();
    let n = names.len();
    let cell = 48.0;
    let left = 90.0;
    let top = 40.0;
    let size = left + cell * n as f64 + 20.0;
    let mut value = vec![vec![None; n]; n];
    for (i, f) in report.features.iter().enumerate() {
        value[i][i] = Some(f.js);
    }
    let index = |name: &str| names.iter().position(|&n| n == name);
    for p in &report.pairs {
        if let (Some(i), Some(j)) = (index(&p.first), index(&p.second)) {
            value[i][j] = Some(p.js);
            value[j][i] = Some(p.js);
        }
    }
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{}" font-family="sans-serif" font-size="11">"#,
        top + cell * n as f64 + 20.0
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{left}" y="20" font-size="13">Jensen-Shannon distance</text>"#
    );
    for (i, row) in value.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            left - 6.0,
            top + cell * (i as f64 + 0.55),
            escape(names[i])
        );
        for (j, v) in row.iter().enumerate() {
            let (x, yy) = (left + cell * j as f64, top + cell * i as f64);
            let (fill, label) = match v {
                Some(v) => {
                    let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
                    (format!("rgb(255,{shade},{shade})"), format!("{v:.3}"))
                }
                None => ("#eeeeee".to_string(), String::new()),
            };
            let _ = writeln!(
                svg,
                r#"<rect x="{x}" y="{yy}" width="{cell}" height="{cell}" fill="{fill}" stroke="white"/><text x="{}" y="{}" text-anchor="middle">{label}</text>"#,
                x + cell / 2.0,
                yy + cell / 2.0 + 4.0
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Write one histogram figure per feature plus the heat map into `dir`.
pub fn write_plots(
    dir: &Path,
    names: &[String],
    real: &[Histogram],
    synth: &[Histogram],
    js: &JsReport,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let mut written = Vec::new();
    for ((name, a), b) in names.iter().zip(real).zip(synth) {
        let safe: String = name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
            .collect();
        let path = dir.join(format!("hist_{safe}.svg"));
        fs::write(&path, histogram_svg(name, a, b)?).map_err(|e| Error::file(&path, e))?;
        written.push(path);
    }
    let path = dir.join("js_heatmap.svg");
    fs::write(&path, js_heatmap_svg(js)).map_err(|e| Error::file(&path, e))?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{FeatureJs, PairJs};

    #[test]
    fn figures_are_svg() {
        let mut a = Histogram::new(vec![Axis::Uniform {
            lo: 0.0,
            hi: 1.0,
            bins: 4,
        }])
        .unwrap();
        let mut b = a.clone();
        for v in [0.1, 0.2, 0.9] {
            a.add(&[v]);
        }
        b.add(&[0.6]);
        let svg = histogram_svg("size <m>", &a, &b).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("size &lt;m&gt;"));

        let js = JsReport {
            features: vec![
                FeatureJs {
                    feature: "a".into(),
                    js: 0.1,
                },
                FeatureJs {
                    feature: "b".into(),
                    js: 0.2,
                },
            ],
            pairs: vec![PairJs {
                first: "a".into(),
                second: "b".into(),
                js: 0.3,
            }],
            feature_mean: Some(0.15),
            feature_std: Some(0.05),
            pair_mean: Some(0.3),
            pair_std: Some(0.0),
        };
        let heat = js_heatmap_svg(&js);
        assert_eq!(heat.matches("0.300").count(), 2);

        let dir = tempfile::tempdir().unwrap();
        let files = write_plots(dir.path(), &["a".into()], &[a], &[b], &js).unwrap();
        assert_eq!(files.len(), 2);
        assert!(files.iter().all(|f| f.exists()));
    }
}
