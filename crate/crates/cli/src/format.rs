//! Human-readable numbers at four significant figures.

use std::fmt::Write;

use riccati_core::Matrix;

pub const SIG_FIGS: usize = 4;

pub fn sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        let decimals = (SIG_FIGS as i32 - 1 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        // rounding can carry into a new digit, e.g. 9.9996 -> 10.000
        if s.trim_start_matches('-')
            .replace('.', "")
            .trim_start_matches('0')
            .len()
            > SIG_FIGS
            && decimals > 0
        {
            return format!("{x:.prec$}", prec = decimals - 1);
        }
        s
    } else {
        format!("{x:.prec$e}", prec = SIG_FIGS - 1)
    }
}

/// Right-aligned rows, each line prefixed by `indent`.
pub fn matrix(m: &Matrix, indent: &str) -> String {
    let cells: Vec<Vec<String>> = (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| sig(m[(i, j)])).collect())
        .collect();
    let width = cells.iter().flatten().map(String::len).max().unwrap_or(1);
    let mut out = String::new();
    for row in &cells {
        out.push_str(indent);
        out.push('[');
        for (j, c) in row.iter().enumerate() {
            if j > 0 {
                out.push_str("  ");
            }
            let _ = write!(out, "{c:>width$}");
        }
        out.push_str("]\n");
    }
    out
}
