//! Result tables (CSV) and accuracy curves (SVG).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::classifiers::ModelKind;
use crate::error::{Error, Result};

use super::experiment::ResultRow;

pub const CSV_HEADER: &str =
    "task,n_classes,n_train,repeat,seed,classifier,accuracy,val_accuracy_svm,val_accuracy_knn,val_accuracy_tree,wall_s";

pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        (a.task.as_str(), a.n_train, a.repeat).cmp(&(b.task.as_str(), b.n_train, b.repeat))
    });
}

/// Six fractional digits; exact binary ties round to even.
pub fn fmt_decimal(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.6}")
    }
}

pub fn results_csv(rows: &[ResultRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Domain("no result rows to write".into()));
    }
    let mut rows = rows.to_vec();
    sort_rows(&mut rows);
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.task,
            r.n_classes,
            r.n_train,
            r.repeat,
            r.seed,
            r.classifier,
            fmt_decimal(r.accuracy),
            fmt_decimal(r.val_accuracy_svm),
            fmt_decimal(r.val_accuracy_knn),
            fmt_decimal(r.val_accuracy_tree),
            fmt_decimal(r.wall_s)
        )
        .unwrap();
    }
    Ok(out)
}

pub fn write_results_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let text = results_csv(rows)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err(Error::Format("results CSV: unexpected header".into()));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let bad = |what: &str| Error::Format(format!("results CSV line {}: bad {what}", n + 2));
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 11 {
                return Err(bad("field count"));
            }
            let num = |i: usize, what: &str| f[i].parse::<f64>().map_err(|_| bad(what));
            Ok(ResultRow {
                task: f[0].to_string(),
                n_classes: f[1].parse().map_err(|_| bad("n_classes"))?,
                n_train: f[2].parse().map_err(|_| bad("n_train"))?,
                repeat: f[3].parse().map_err(|_| bad("repeat"))?,
                seed: f[4].parse().map_err(|_| bad("seed"))?,
                classifier: f[5].parse::<ModelKind>().map_err(|_| bad("classifier"))?,
                accuracy: num(6, "accuracy")?,
                val_accuracy_svm: num(7, "val_accuracy_svm")?,
                val_accuracy_knn: num(8, "val_accuracy_knn")?,
                val_accuracy_tree: num(9, "val_accuracy_tree")?,
                wall_s: num(10, "wall_s")?,
            })
        })
        .collect()
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results_csv(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Repeat-averaged accuracy per task: `task → [(n_train, mean)]`, tasks in
/// sorted order and sizes ascending.
pub fn mean_curves(rows: &[ResultRow]) -> BTreeMap<String, Vec<(usize, f64)>> {
    let mut acc: BTreeMap<String, BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(r.task.clone()).or_default().entry(r.n_train).or_insert((0.0, 0));
        e.0 += r.accuracy;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(t, m)| (t, m.into_iter().map(|(n, (s, c))| (n, s / c as f64)).collect()))
        .collect()
}

/// Soft checks on the repeat-averaged curves: accuracy should not drop by
/// more than two points as `n_train` grows, and tasks with more classes
/// should not beat tasks with fewer at the same size. Returns one note per
/// violation.
pub fn trend_notes(rows: &[ResultRow]) -> Vec<String> {
    let curves = mean_curves(rows);
    let mut notes = Vec::new();
    for (task, pts) in &curves {
        for w in pts.windows(2) {
            if w[1].1 < w[0].1 - 0.02 {
                notes.push(format!(
                    "task {task}: mean accuracy falls from {:.4} at n_train {} to {:.4} at {}",
                    w[0].1, w[0].0, w[1].1, w[1].0
                ));
            }
        }
    }
    let mut classes: BTreeMap<String, usize> = BTreeMap::new();
    for r in rows {
        classes.insert(r.task.clone(), r.n_classes);
    }
    let mut by_size: Vec<(&String, usize)> = classes.iter().map(|(t, &c)| (t, c)).collect();
    by_size.sort_by_key(|&(t, c)| (c, t.clone()));
    for pair in by_size.windows(2) {
        let ((ta, ca), (tb, cb)) = (pair[0], pair[1]);
        if ca == cb {
            continue;
        }
        for &(n, acc_a) in &curves[ta] {
            if let Some(&(_, acc_b)) = curves[tb].iter().find(|p| p.0 == n) {
                if acc_b > acc_a {
                    notes.push(format!(
                        "n_train {n}: {cb}-class task {tb} ({acc_b:.4}) beats {ca}-class task {ta} ({acc_a:.4})"
                    ));
                }
            }
        }
    }
    notes
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Mean accuracy against training-set size, one polyline per task.
pub fn plot_svg(rows: &[ResultRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Domain("no result rows to plot".into()));
    }
    let curves = mean_curves(rows);
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 150.0, 30.0, 60.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let x_max = rows.iter().map(|r| r.n_train).max().unwrap_or(1).max(1) as f64;
    let y_lo = rows.iter().map(|r| r.accuracy).fold(1.0, f64::min);
    let y_min = ((y_lo - 0.05) * 10.0).floor().clamp(0.0, 9.0) / 10.0;
    let sx = |n: f64| left + pw * n / x_max;
    let sy = |a: f64| top + ph * (1.0 - (a - y_min) / (1.0 - y_min));

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<path d="M{left} {top} V{} H{}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    )
    .unwrap();
    for i in 0..=5 {
        let n = x_max * i as f64 / 5.0;
        let x = sx(n);
        writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{y0:.1}" x2="{x:.1}" y2="{y1:.1}" stroke="black"/><text x="{x:.1}" y="{ty:.1}" text-anchor="middle">{n:.0}</text>"#,
            y0 = top + ph,
            y1 = top + ph + 5.0,
            ty = top + ph + 20.0
        )
        .unwrap();
    }
    let steps = ((1.0 - y_min) * 10.0).round() as usize;
    for i in 0..=steps {
        let a = y_min + i as f64 / 10.0;
        let y = sy(a);
        writeln!(
            s,
            r##"<line x1="{x0:.1}" y1="{y:.1}" x2="{left}" y2="{y:.1}" stroke="black"/><line x1="{left}" y1="{y:.1}" x2="{x1:.1}" y2="{y:.1}" stroke="#dddddd"/><text x="{tx:.1}" y="{ty:.1}" text-anchor="end">{a:.1}</text>"##,
            x0 = left - 5.0,
            x1 = left + pw,
            tx = left - 8.0,
            ty = y + 4.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">number of training images</text>"#,
        left + pw / 2.0,
        h - 15.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text transform="translate(18 {:.1}) rotate(-90)" text-anchor="middle">best classification accuracy</text>"#,
        top + ph / 2.0
    )
    .unwrap();
    for (i, (task, pts)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(n, a)| format!("{:.1},{:.1}", sx(n as f64), sy(a))).collect();
        writeln!(
            s,
            r#"<polyline class="curve" data-task="{t}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            coords.join(" "),
            t = esc(task)
        )
        .unwrap();
        for &(n, a) in pts {
            writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                sx(n as f64),
                sy(a)
            )
            .unwrap();
        }
        let ly = top + 10.0 + 20.0 * i as f64;
        let lx = left + pw + 15.0;
        writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">digits {}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            esc(task)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn plot_results(rows: &[ResultRow], path: &Path) -> Result<()> {
    let svg = plot_svg(rows)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(task: &str, n: usize, rep: usize, acc: f64) -> ResultRow {
        ResultRow {
            task: task.into(),
            n_classes: 2,
            n_train: n,
            repeat: rep,
            seed: 7,
            classifier: ModelKind::SvmOvo,
            accuracy: acc,
            val_accuracy_svm: acc,
            val_accuracy_knn: 0.5,
            val_accuracy_tree: f64::NAN,
            wall_s: 0.0,
        }
    }

    #[test]
    fn decimal_formatting() {
        assert_eq!(fmt_decimal(0.9512349), "0.951235");
        // 1/128 = 0.0078125 exactly: the tie goes to the even digit
        assert_eq!(fmt_decimal(1.0 / 128.0), "0.007812");
        assert_eq!(fmt_decimal(3.0 / 128.0), "0.023438");
        assert_eq!(fmt_decimal(1.0), "1.000000");
    }

    #[test]
    fn csv_sorted_and_round_trips() {
        let rows = vec![row("0-4", 100, 0, 0.8), row("0-1", 500, 0, 0.9), row("0-1", 100, 1, 0.85), row("0-1", 100, 0, 0.7)];
        let text = results_csv(&rows).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert!(lines[1].starts_with("0-1,2,100,0,"));
        assert!(lines[2].starts_with("0-1,2,100,1,"));
        assert!(lines[3].starts_with("0-1,2,500,0,"));
        assert!(lines[4].starts_with("0-4,2,100,0,"));
        let back = parse_results_csv(&text).unwrap();
        assert_eq!(back.len(), 4);
        assert_eq!(back[0].accuracy, 0.7);
        assert!(back[0].val_accuracy_tree.is_nan());
        assert!(matches!(results_csv(&[]), Err(Error::Domain(_))));
    }

    #[test]
    fn trend_notes_flag_drops_and_inversions() {
        let mut rows = vec![row("0-1", 100, 0, 0.9), row("0-1", 200, 0, 0.95), row("0-4", 100, 0, 0.8), row("0-4", 200, 0, 0.7)];
        for r in &mut rows[2..] {
            r.n_classes = 5;
        }
        assert_eq!(trend_notes(&rows).len(), 1);
        rows[3].accuracy = 0.97;
        let notes = trend_notes(&rows);
        assert_eq!(notes.len(), 1);
        assert!(notes[0].contains("beats"), "{notes:?}");
    }

    #[test]
    fn curves_average_repeats() {
        let rows = vec![row("0-1", 100, 0, 0.6), row("0-1", 100, 1, 0.8), row("0-1", 200, 0, 0.9)];
        let c = mean_curves(&rows);
        let pts = &c["0-1"];
        assert_eq!(pts.len(), 2);
        assert!((pts[0].1 - 0.7).abs() < 1e-12);
    }
}
