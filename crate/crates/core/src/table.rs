//! Fixed-precision CSV tables.

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Numeric table with a header row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Columns are built from parallel slices.
    pub fn from_columns(header: &[&str], cols: &[&[f64]]) -> Self {
        let mut t = Self::new(header);
        let n = cols.iter().map(|c| c.len()).min().unwrap_or(0);
        for i in 0..n {
            t.push(cols.iter().map(|c| c[i]).collect());
        }
        t
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|&x| fmt_f64(x)).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for x in [0.1, -1.0 / 3.0, 1e-300, f64::MAX, 2.0f64.sqrt()] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        let t = Table::from_columns(&["t", "v"], &[&[0.0, 1.0], &[2.0, 3.0]]);
        assert_eq!(t.to_csv().lines().count(), 3);
    }
}
