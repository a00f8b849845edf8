//! Plain-text tables for terminal output.

/// Renders a table with padded columns: the first column left-aligned,
/// the rest right-aligned, a dashed rule under the header.
pub fn render(headers: &[&str], rows: &[Vec<String>]) -> String {
    let cols = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (c, cell) in row.iter().enumerate() {
            widths[c] = widths[c].max(cell.len());
        }
    }
    let mut out = String::new();
    let mut push_row = |cells: &[String]| {
        for (c, cell) in cells.iter().enumerate() {
            if c > 0 {
                out.push_str("  ");
            }
            if c == 0 {
                out.push_str(&format!("{:<width$}", cell, width = widths[c]));
            } else {
                out.push_str(&format!("{:>width$}", cell, width = widths[c]));
            }
        }
        while out.ends_with(' ') {
            out.pop();
        }
        out.push('\n');
    };
    push_row(&headers.iter().map(|h| h.to_string()).collect::<Vec<_>>());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    push_row(&rule);
    for row in rows {
        assert_eq!(row.len(), cols, "table row width");
        push_row(row);
    }
    out
}

/// Fixed-precision float for table cells.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "-".to_string()
    } else if v != 0.0 && v.abs() < 1e-4 {
        format!("{:.3e}", v)
    } else {
        format!("{:.4}", v)
    }
}

/// Optional float, dash when absent.
pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "-".to_string())
}

/// Group-count tuple like `(2,3)`.
pub fn tuple(counts: &[usize]) -> String {
    let inner: Vec<String> = counts.iter().map(|g| g.to_string()).collect();
    format!("({})", inner.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_line_up() {
        let table = render(
            &["name", "value"],
            &[
                vec!["a".into(), "1".into()],
                vec!["longer".into(), "22".into()],
            ],
        );
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "name    value");
        assert_eq!(lines[1], "------  -----");
        assert_eq!(lines[2], "a           1");
        assert_eq!(lines[3], "longer     22");
    }

    #[test]
    fn small_numbers_switch_to_scientific() {
        assert_eq!(num(0.25), "0.2500");
        assert_eq!(num(0.0), "0.0000");
        assert_eq!(num(2.5e-7), "2.500e-7");
        assert_eq!(opt(None), "-");
        assert_eq!(tuple(&[2, 3]), "(2,3)");
    }
}
