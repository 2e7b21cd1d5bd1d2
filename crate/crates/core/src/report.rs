//! Plain-text table helpers and number formatting for reports.

/// Left-aligns the first column and right-aligns the rest, two spaces apart.
pub fn align(rows: &[Vec<String>]) -> String {
    let ncols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0; ncols];
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            let pad = widths[i] - cell.chars().count();
            if i == 0 {
                line.push_str(cell);
                line.push_str(&" ".repeat(pad));
            } else {
                line.push_str(&" ".repeat(pad));
                line.push_str(cell);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// Rounds half away from zero to `places` decimals. The scaled value is first
/// snapped to 6 decimals so binary noise like 100.49999999999999 does not
/// decide the rounding.
pub fn round_half_up(x: f64, places: u32) -> f64 {
    let scale = 10f64.powi(places as i32);
    let scaled = ((x * scale) * 1e6).round() / 1e6;
    scaled.round() / scale
}

/// A fraction in [0,1] as a percentage string with two decimals.
pub fn pct(x: f64) -> String {
    format!("{:.2}", round_half_up(x * 100.0, 2))
}

pub fn opt_count(v: Option<usize>) -> String {
    v.map_or_else(|| "-".to_string(), |n| n.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_up() {
        assert_eq!(round_half_up(0.125, 2), 0.13);
        assert_eq!(round_half_up(14.945, 2), 14.95);
        assert_eq!(round_half_up(1.005, 2), 1.01);
        assert_eq!(round_half_up(2.0, 2), 2.0);
        assert_eq!(pct(218.0 / 1459.0), "14.94");
        assert_eq!(pct(1.0 / 3.0), "33.33");
    }

    #[test]
    fn aligned_columns() {
        let rows = vec![
            vec!["a".to_string(), "1".to_string()],
            vec!["long".to_string(), "100".to_string()],
        ];
        assert_eq!(align(&rows), "a       1\nlong  100\n");
    }
}
