//! Compressed sparse column matrices and their coordinate/Matrix Market I/O.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Real sparse matrix in compressed sparse column layout.
///
/// Row indices inside each column are strictly increasing, so two matrices
/// built from the same entries are structurally identical.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseMatrix {
            nrows,
            ncols,
            col_ptr: vec![0; ncols + 1],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            nrows: n,
            ncols: n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a matrix from per-column entry lists. Duplicate rows inside a
    /// column are summed.
    pub fn from_columns(nrows: usize, columns: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let ncols = columns.len();
        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for mut col in columns {
            col.sort_by_key(|&(r, _)| r);
            let mut last: Option<usize> = None;
            for (r, v) in col {
                if r >= nrows {
                    return Err(Error::Usage(format!("row {r} out of range ({nrows} rows)")));
                }
                if last == Some(r) {
                    *values.last_mut().unwrap() += v;
                } else {
                    row_idx.push(r);
                    values.push(v);
                    last = Some(r);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Ok(SparseMatrix { nrows, ncols, col_ptr, row_idx, values })
    }

    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut columns = vec![Vec::new(); ncols];
        for &(r, c, v) in triplets {
            if c >= ncols {
                return Err(Error::Usage(format!("column {c} out of range ({ncols} columns)")));
            }
            columns[c].push((r, v));
        }
        Self::from_columns(nrows, columns)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of column `j` as `(row, value)` pairs in increasing row order.
    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.col_ptr[j]..self.col_ptr[j + 1];
        self.row_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.col_ptr[j]..self.col_ptr[j + 1];
        match self.row_idx[range.clone()].binary_search(&i) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    /// All stored entries as `(row, col, value)`, column-major.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for j in 0..self.ncols {
            out.extend(self.column(j).map(|(i, v)| (i, j, v)));
        }
        out
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.ncols).map(|j| self.column(j).map(|(_, v)| v).sum()).collect()
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols, "matrix-vector dimension mismatch");
        assert_eq!(y.len(), self.nrows, "matrix-vector dimension mismatch");
        y.iter_mut().for_each(|v| *v = 0.0);
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                y[self.row_idx[k]] += self.values[k] * xj;
            }
        }
    }

    /// `alpha * self + beta * other`.
    pub fn linear_combination(&self, alpha: f64, other: &SparseMatrix, beta: f64) -> Result<Self> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::Usage(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let columns = (0..self.ncols)
            .map(|j| {
                self.column(j)
                    .map(|(i, v)| (i, alpha * v))
                    .chain(other.column(j).map(|(i, v)| (i, beta * v)))
                    .collect()
            })
            .collect();
        Self::from_columns(self.nrows, columns)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// Maximum absolute column sum (the induced L1 operator norm).
    pub fn norm_l1(&self) -> f64 {
        (0..self.ncols)
            .map(|j| self.column(j).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    /// Drops stored entries whose magnitude is below `threshold`.
    pub fn pruned(&self, threshold: f64) -> Self {
        let columns = (0..self.ncols)
            .map(|j| self.column(j).filter(|(_, v)| v.abs() >= threshold).collect())
            .collect();
        Self::from_columns(self.nrows, columns).expect("pruning keeps indices valid")
    }

    /// Coordinate CSV with a `row,col,value` header and 0-based indices.
    pub fn to_coordinate_csv(&self) -> String {
        let mut s = String::from("row,col,value\n");
        for (i, j, v) in self.triplets() {
            let _ = writeln!(s, "{i},{j},{v:e}");
        }
        s
    }

    /// Parses [`to_coordinate_csv`](Self::to_coordinate_csv) output. The shape
    /// is not part of the CSV, so it is passed in.
    pub fn from_coordinate_csv(text: &str, nrows: usize, ncols: usize) -> Result<Self> {
        let parse_err = |line: usize, msg: &str| Error::Parse {
            path: "<csv>".into(),
            message: format!("line {}: {msg}", line + 1),
        };
        let mut triplets = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with("row")) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(parse_err(n, "expected three fields"));
            }
            let r = fields[0].parse().map_err(|_| parse_err(n, "bad row index"))?;
            let c = fields[1].parse().map_err(|_| parse_err(n, "bad column index"))?;
            let v = fields[2].parse().map_err(|_| parse_err(n, "bad value"))?;
            triplets.push((r, c, v));
        }
        Self::from_triplets(nrows, ncols, &triplets)
    }

    /// Matrix Market `coordinate real general` text with 1-based indices.
    pub fn to_matrix_market(&self) -> String {
        let mut s = String::from("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(s, "{} {} {}", self.nrows, self.ncols, self.nnz());
        for (i, j, v) in self.triplets() {
            let _ = writeln!(s, "{} {} {v:e}", i + 1, j + 1);
        }
        s
    }

    pub fn from_matrix_market(text: &str) -> Result<Self> {
        let err = |msg: String| Error::Parse { path: "<matrix market>".into(), message: msg };
        let mut lines = text.lines().enumerate();
        let header = lines.next().map(|(_, l)| l.to_ascii_lowercase()).unwrap_or_default();
        let tokens: Vec<&str> = header.split_whitespace().collect();
        if tokens.len() < 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" || tokens[2] != "coordinate" {
            return Err(err("expected a coordinate Matrix Market header".into()));
        }
        if tokens[3] != "real" && tokens[3] != "double" && tokens[3] != "integer" {
            return Err(err(format!("unsupported field type '{}'", tokens[3])));
        }
        let symmetric = match tokens[4] {
            "general" => false,
            "symmetric" => true,
            other => return Err(err(format!("unsupported symmetry '{other}'"))),
        };
        let mut size: Option<(usize, usize, usize)> = None;
        let mut triplets = Vec::new();
        for (n, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('%') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = |what: &str| err(format!("line {}: bad {what}", n + 1));
            match size {
                None => {
                    if f.len() != 3 {
                        return Err(bad("size line"));
                    }
                    size = Some((
                        f[0].parse().map_err(|_| bad("row count"))?,
                        f[1].parse().map_err(|_| bad("column count"))?,
                        f[2].parse().map_err(|_| bad("entry count"))?,
                    ));
                }
                Some(_) => {
                    if f.len() != 3 {
                        return Err(bad("entry"));
                    }
                    let i: usize = f[0].parse().map_err(|_| bad("row index"))?;
                    let j: usize = f[1].parse().map_err(|_| bad("column index"))?;
                    let v: f64 = f[2].parse().map_err(|_| bad("value"))?;
                    if i == 0 || j == 0 {
                        return Err(bad("index (Matrix Market is 1-based)"));
                    }
                    triplets.push((i - 1, j - 1, v));
                    if symmetric && i != j {
                        triplets.push((j - 1, i - 1, v));
                    }
                }
            }
        }
        let (nrows, ncols, nnz) = size.ok_or_else(|| err("missing size line".into()))?;
        let stored = if symmetric {
            triplets.iter().filter(|(i, j, _)| i >= j).count()
        } else {
            triplets.len()
        };
        if stored != nnz {
            return Err(err(format!("expected {nnz} entries, found {stored}")));
        }
        Self::from_triplets(nrows, ncols, &triplets)
    }

    pub fn write_matrix_market(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_matrix_market())?;
        Ok(())
    }

    pub fn read_matrix_market(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_matrix_market(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse { path: path.to_path_buf(), message },
            other => other,
        })
    }

    pub fn write_coordinate_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_coordinate_csv())?;
        Ok(())
    }

    pub fn read_coordinate_csv(path: &Path, nrows: usize, ncols: usize) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_coordinate_csv(&text, nrows, ncols)
    }
}
