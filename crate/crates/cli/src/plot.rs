//! Static SVG plots of `results.csv`: error probability vs. SNR on a log scale.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::CliError;
use crate::experiment::ResultRow;

const HEADER: [&str; 5] = ["snr_db", "decoder", "p_hat", "std_err", "n_test"];
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 52.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Parses a results CSV. Errors carry the 1-based line number.
pub fn parse_results<R: std::io::Read>(input: R) -> Result<Vec<ResultRow>, CliError> {
    let mut rd = csv::Reader::from_reader(input);
    let headers = rd.headers().map_err(|e| parse_err(&e, 1))?.clone();
    if headers.iter().ne(HEADER) {
        return Err(CliError::Parse {
            line: 1,
            reason: format!("expected header `{}`", HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    let mut last_line = 1;
    for rec in rd.records() {
        let rec = rec.map_err(|e| parse_err(&e, last_line + 1))?;
        let line = rec.position().map_or(last_line + 1, |p| p.line());
        last_line = line;
        let row: ResultRow = rec
            .deserialize(Some(&headers))
            .map_err(|e| CliError::Parse {
                line,
                reason: e.to_string(),
            })?;
        let bad = |reason: &str| CliError::Parse {
            line,
            reason: reason.to_string(),
        };
        if !row.snr_db.is_finite() {
            return Err(bad("snr_db is not finite"));
        }
        if !(0.0..=1.0).contains(&row.p_hat) {
            return Err(bad("p_hat outside [0, 1]"));
        }
        if !(row.std_err >= 0.0 && row.std_err.is_finite()) {
            return Err(bad("std_err must be a non-negative number"));
        }
        if row.n_test == 0 {
            return Err(bad("n_test must be positive"));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Parse {
            line: last_line + 1,
            reason: "no data rows".into(),
        });
    }
    Ok(rows)
}

fn parse_err(e: &csv::Error, fallback: u64) -> CliError {
    CliError::Parse {
        line: e.position().map_or(fallback, |p| p.line()),
        reason: e.to_string(),
    }
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_results(file)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// One polyline per decoder (in order of first appearance), one marker per
/// row. Zero error rates are drawn at `0.5 / n_test`, the resolution floor.
pub fn render_svg(rows: &[ResultRow], title: &str) -> Result<String, CliError> {
    if rows.is_empty() {
        return Err(CliError::Parse {
            line: 2,
            reason: "no data rows".into(),
        });
    }
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.decoder.as_str()) {
            names.push(&r.decoder);
        }
    }
    let plotted = |r: &ResultRow| r.p_hat.max(0.5 / r.n_test as f64).log10();

    let (mut x_lo, mut x_hi) = rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.snr_db), hi.max(r.snr_db)));
    if x_hi - x_lo < 1e-9 {
        x_lo -= 1.0;
        x_hi += 1.0;
    }
    let (y_min, y_max) = rows
        .iter()
        .map(plotted)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let y_lo = y_min.floor();
    let y_hi = y_max.ceil().max(y_lo + 1.0);

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| TOP + (y_hi - y) / (y_hi - y_lo) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{plot_w:.2}" height="{plot_h:.2}" fill="none" stroke="black"/>"#
    );

    // decade grid on y
    let mut e = y_lo as i64;
    while e as f64 <= y_hi {
        let y = sy(e as f64);
        let _ = writeln!(
            s,
            "<line x1=\"{LEFT:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>",
            LEFT + plot_w
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{e}</text>"#,
            LEFT - 6.0,
            y + 4.0
        );
        e += 1;
    }
    // x ticks at each distinct SNR
    let mut xs: Vec<f64> = rows.iter().map(|r| r.snr_db).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    for x in &xs {
        let px = sx(*x);
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#,
            TOP + plot_h,
            TOP + plot_h + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + plot_h + 18.0,
            x
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">SNR [dB]</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">error probability</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    for (i, name) in names.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts: Vec<&ResultRow> = rows.iter().filter(|r| r.decoder == *name).collect();
        pts.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
        let coords: Vec<String> = pts
            .iter()
            .map(|r| format!("{:.2},{:.2}", sx(r.snr_db), sy(plotted(r))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            coords.join(" ")
        );
        for r in &pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sx(r.snr_db),
                sy(plotted(r))
            );
        }
        let ly = TOP + 12.0 + 18.0 * i as f64;
        let lx = LEFT + plot_w + 14.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.2}" y="{:.2}" width="18" height="3" fill="{color}"/>"#,
            ly - 4.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, lx + 24.0, escape(name));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BY_THREE: &str = "snr_db,decoder,p_hat,std_err,n_test\n\
        0,learned,0.1,0.01,1000\n2,learned,0.05,0.007,1000\n4,learned,0.0,0.0,1000\n\
        0,identity,0.2,0.01,1000\n2,identity,0.1,0.01,1000\n4,identity,0.01,0.003,1000\n";

    #[test]
    fn structure_counts() {
        let rows = parse_results(TWO_BY_THREE.as_bytes()).unwrap();
        let svg = render_svg(&rows, "t").unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 6);
        assert!(svg.contains(">learned<") && svg.contains(">identity<"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let rows = parse_results(TWO_BY_THREE.as_bytes()).unwrap();
        assert_eq!(render_svg(&rows, "t").unwrap(), render_svg(&rows, "t").unwrap());
    }

    #[test]
    fn empty_data_is_rejected() {
        let err = parse_results("snr_db,decoder,p_hat,std_err,n_test\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let text = "snr_db,decoder,p_hat,std_err,n_test\n0,a,0.1,0.01,10\n1,a,oops,0.01,10\n";
        let err = parse_results(text.as_bytes()).unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 3, .. }), "{err}");
        let text = "snr_db,decoder,p_hat,std_err,n_test\n0,a,1.5,0.01,10\n";
        assert!(matches!(parse_results(text.as_bytes()).unwrap_err(), CliError::Parse { line: 2, .. }));
    }

    #[test]
    fn wrong_header_is_line_one() {
        let err = parse_results("snr,decoder,p_hat,std_err,n_test\n0,a,0.1,0.01,10\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 1, .. }));
    }
}
