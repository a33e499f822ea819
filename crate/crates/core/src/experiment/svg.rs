use std::fmt::Write as _;

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 40.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

/// Accuracy on each task (one line per task) against the number of tasks
/// trained so far, plus the running mean in black.
pub fn learning_curve_svg(after_task: &[Vec<f64>]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (PAD, W - PAD / 2.0, H - PAD, PAD / 2.0);
    let _ = writeln!(
        s,
        r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" stroke="black" fill="none"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">tasks trained</text>"#,
        (x0 + x1) / 2.0,
        H - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" font-size="12" transform="rotate(-90 12 {})" text-anchor="middle">accuracy</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    let n = after_task.len();
    if n == 0 {
        s.push_str("</svg>\n");
        return s;
    }
    let px = |i: usize| {
        if n == 1 {
            (x0 + x1) / 2.0
        } else {
            x0 + (x1 - x0) * i as f64 / (n - 1) as f64
        }
    };
    let py = |a: f64| y0 - (y0 - y1) * a.clamp(0.0, 1.0);
    let line = |points: Vec<(f64, f64)>, color: &str, width: f64| {
        let d: Vec<String> = points
            .iter()
            .enumerate()
            .map(|(k, (x, y))| format!("{}{x:.1},{y:.1}", if k == 0 { "M" } else { "L" }))
            .collect();
        format!(
            r#"<path d="{}" stroke="{color}" stroke-width="{width}" fill="none"/>"#,
            d.join(" ")
        )
    };
    let tasks = after_task.iter().map(Vec::len).max().unwrap_or(0);
    for t in 0..tasks {
        let pts = (t..n)
            .filter_map(|i| after_task[i].get(t).map(|&a| (px(i), py(a))))
            .collect();
        let _ = writeln!(s, "{}", line(pts, COLORS[t % COLORS.len()], 1.0));
    }
    let mean = (0..n)
        .map(|i| {
            let seen = &after_task[i][..(i + 1).min(after_task[i].len())];
            (
                px(i),
                py(seen.iter().sum::<f64>() / seen.len().max(1) as f64),
            )
        })
        .collect();
    let _ = writeln!(s, "{}", line(mean, "black", 2.0));
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_path_per_task_plus_mean() {
        let svg = learning_curve_svg(&[vec![0.9, 0.1], vec![0.5, 0.8]]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<path").count(), 1 + 2 + 1);
    }
}
