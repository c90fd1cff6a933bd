//! Balanced panel data: construction, CSV ingestion, and the model
//! transformations (within demeaning, time-dummy augmentation, group dummies).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::numerical_rank;

/// A balanced N x T panel with K regressors per observation.
///
/// Data are stored per unit: `y[i]` is the length-T outcome series of unit
/// `i` and `x[i]` the T x K regressor matrix, rows ordered by time.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    n: usize,
    t: usize,
    k: usize,
    y: Vec<DVector<f64>>,
    x: Vec<DMatrix<f64>>,
    unit_ids: Vec<String>,
    time_ids: Vec<String>,
}

impl PanelDataset {
    pub fn new(
        y: Vec<DVector<f64>>,
        x: Vec<DMatrix<f64>>,
        unit_ids: Vec<String>,
        time_ids: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::EmptyPanel);
        }
        if n < 2 {
            return Err(Error::InvalidInput("panel needs N >= 2 units".into()));
        }
        let t = y[0].len();
        if t == 0 {
            return Err(Error::EmptyPanel);
        }
        if x.len() != n || unit_ids.len() != n || time_ids.len() != t {
            return Err(Error::InvalidInput("panel component lengths disagree".into()));
        }
        let k = x[0].ncols();
        if k == 0 {
            return Err(Error::InvalidInput("panel needs K >= 1 regressors".into()));
        }
        for i in 0..n {
            if y[i].len() != t || x[i].nrows() != t || x[i].ncols() != k {
                return Err(Error::InvalidInput(format!(
                    "unit {} has inconsistent dimensions",
                    unit_ids[i]
                )));
            }
            if y[i].iter().any(|v| !v.is_finite()) || x[i].iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "unit {} contains non-finite values",
                    unit_ids[i]
                )));
            }
        }
        Ok(Self { n, t, k, y, x, unit_ids, time_ids })
    }

    /// Build a panel from dense arrays with synthetic labels.
    /// `y` is N x T row-major, `x` is N x T x K with unit-major layout.
    pub fn from_arrays(n: usize, t: usize, k: usize, y: &[f64], x: &[f64]) -> Result<Self> {
        if y.len() != n * t || x.len() != n * t * k {
            return Err(Error::InvalidInput("array lengths do not match (N, T, K)".into()));
        }
        let ys = (0..n)
            .map(|i| DVector::from_row_slice(&y[i * t..(i + 1) * t]))
            .collect();
        let xs = (0..n)
            .map(|i| DMatrix::from_row_slice(t, k, &x[i * t * k..(i + 1) * t * k]))
            .collect();
        let unit_ids = (1..=n).map(|i| format!("u{i}")).collect();
        let time_ids = (1..=t).map(|s| s.to_string()).collect();
        Self::new(ys, xs, unit_ids, time_ids)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn time_ids(&self) -> &[String] {
        &self.time_ids
    }

    /// Outcome series of unit `i`.
    pub fn y(&self, i: usize) -> &DVector<f64> {
        &self.y[i]
    }

    /// T x K regressor matrix of unit `i`.
    pub fn x(&self, i: usize) -> &DMatrix<f64> {
        &self.x[i]
    }

    /// Regressor vector of unit `i` at period `t` as a K-vector.
    pub fn x_it(&self, i: usize, t: usize) -> DVector<f64> {
        self.x[i].row(t).transpose()
    }

    /// All outcomes stacked unit-major into an NT-vector.
    pub fn stacked_y(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.n * self.t);
        for i in 0..self.n {
            out.rows_mut(i * self.t, self.t).copy_from(&self.y[i]);
        }
        out
    }

    /// Replace all outcomes from an NT-vector (unit-major). Regressors and
    /// labels are shared with `self`.
    pub fn with_stacked_y(&self, y: &DVector<f64>) -> Result<Self> {
        if y.len() != self.n * self.t {
            return Err(Error::InvalidInput("stacked outcome length mismatch".into()));
        }
        let mut out = self.clone();
        for i in 0..self.n {
            out.y[i] = y.rows(i * self.t, self.t).into_owned();
        }
        Ok(out)
    }

    /// Per-unit Gram matrix `sum_t X_it X_it'`.
    pub fn unit_gram(&self, i: usize) -> DMatrix<f64> {
        self.x[i].transpose() * &self.x[i]
    }

    /// One-way within transformation: removes the unit-specific time mean of
    /// the outcome and of every regressor. Requires T >= 2.
    pub fn within_transform(&self) -> Result<Self> {
        if self.t < 2 {
            return Err(Error::InvalidInput(
                "within transformation requires T >= 2 (T = 1 annihilates all data)".into(),
            ));
        }
        let mut out = self.clone();
        let t_inv = 1.0 / self.t as f64;
        for i in 0..self.n {
            let ybar = out.y[i].sum() * t_inv;
            out.y[i].add_scalar_mut(-ybar);
            for kcol in 0..self.k {
                let xbar = out.x[i].column(kcol).sum() * t_inv;
                out.x[i].column_mut(kcol).add_scalar_mut(-xbar);
            }
        }
        Ok(out)
    }

    /// Append T-1 time dummies to the regressors, first period as base:
    /// dummy column tau is 1 exactly when t = tau + 1. Requires T >= 2.
    pub fn augment_time_dummies(&self) -> Result<Self> {
        if self.t < 2 {
            return Err(Error::InvalidInput("time dummies require T >= 2".into()));
        }
        let k_new = self.k + self.t - 1;
        let mut out = self.clone();
        out.k = k_new;
        for i in 0..self.n {
            let mut xa = DMatrix::zeros(self.t, k_new);
            xa.view_mut((0, 0), (self.t, self.k)).copy_from(&self.x[i]);
            for tau in 0..self.t - 1 {
                xa[(tau + 1, self.k + tau)] = 1.0;
            }
            out.x[i] = xa;
        }
        Ok(out)
    }

    /// Long-format CSV with header `unit,time,y,x1,...,xK`.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        let mut header = vec!["unit".to_string(), "time".to_string(), "y".to_string()];
        header.extend((1..=self.k).map(|k| format!("x{k}")));
        wtr.write_record(&header)?;
        for i in 0..self.n {
            for t in 0..self.t {
                let mut rec = vec![
                    self.unit_ids[i].clone(),
                    self.time_ids[t].clone(),
                    format!("{:.17e}", self.y[i][t]),
                ];
                rec.extend((0..self.k).map(|k| format!("{:.17e}", self.x[i][(t, k)])));
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Column mapping for CSV ingestion. `x_columns = None` takes every column
/// named `x1..xK` in numeric order.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub unit: String,
    pub time: String,
    pub y: String,
    pub x_columns: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            unit: "unit".into(),
            time: "time".into(),
            y: "y".into(),
            x_columns: None,
        }
    }
}

/// Keys sorted numerically when every label parses as a number (so time
/// "10" follows "9"), lexicographically otherwise.
fn sort_labels(labels: &mut Vec<String>) {
    let numeric: Option<Vec<f64>> = labels.iter().map(|s| s.parse::<f64>().ok()).collect();
    match numeric {
        Some(nums) => {
            let mut idx: Vec<usize> = (0..labels.len()).collect();
            idx.sort_by(|&a, &b| nums[a].partial_cmp(&nums[b]).unwrap());
            let sorted = idx.iter().map(|&i| labels[i].clone()).collect();
            *labels = sorted;
        }
        None => labels.sort(),
    }
}

/// Load a balanced panel from a long-format CSV file.
///
/// Every `(unit, time)` pair must appear exactly once; missing cells are
/// reported explicitly, duplicated cells are rejected.
pub fn load_panel<P: AsRef<Path>>(path: P, schema: &CsvSchema) -> Result<PanelDataset> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();

    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidInput(format!("column '{name}' not found in header")))
    };
    let unit_col = col(&schema.unit)?;
    let time_col = col(&schema.time)?;
    let y_col = col(&schema.y)?;

    let x_names: Vec<String> = match &schema.x_columns {
        Some(names) => names.clone(),
        None => {
            let mut xs: Vec<(usize, String)> = headers
                .iter()
                .filter_map(|h| {
                    h.strip_prefix('x')
                        .and_then(|rest| rest.parse::<usize>().ok())
                        .map(|idx| (idx, h.clone()))
                })
                .collect();
            xs.sort();
            xs.into_iter().map(|(_, name)| name).collect()
        }
    };
    if x_names.is_empty() {
        return Err(Error::InvalidInput("no regressor columns (x1..xK) found".into()));
    }
    let x_cols: Vec<usize> = x_names.iter().map(|n| col(n)).collect::<Result<_>>()?;
    let k = x_cols.len();

    // (unit, time) -> (y, x row)
    let mut cells: BTreeMap<(String, String), (f64, Vec<f64>)> = BTreeMap::new();
    let mut units: Vec<String> = Vec::new();
    let mut times: Vec<String> = Vec::new();

    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line + 2; // header is line 1
        let unit = rec
            .get(unit_col)
            .ok_or_else(|| Error::InvalidInput(format!("short record at row {row}")))?
            .trim()
            .to_string();
        let time = rec
            .get(time_col)
            .ok_or_else(|| Error::InvalidInput(format!("short record at row {row}")))?
            .trim()
            .to_string();
        let parse = |col_idx: usize, name: &str| -> Result<f64> {
            let raw = rec
                .get(col_idx)
                .ok_or_else(|| Error::InvalidInput(format!("short record at row {row}")))?
                .trim();
            raw.parse::<f64>().map_err(|_| Error::NonNumeric {
                row,
                column: name.to_string(),
                value: raw.to_string(),
            })
        };
        let yv = parse(y_col, &schema.y)?;
        let xv: Vec<f64> = x_cols
            .iter()
            .zip(&x_names)
            .map(|(&c, name)| parse(c, name))
            .collect::<Result<_>>()?;
        if !units.contains(&unit) {
            units.push(unit.clone());
        }
        if !times.contains(&time) {
            times.push(time.clone());
        }
        if cells.insert((unit.clone(), time.clone()), (yv, xv)).is_some() {
            return Err(Error::DuplicateCell { unit, time });
        }
    }

    if cells.is_empty() {
        return Err(Error::EmptyPanel);
    }
    sort_labels(&mut units);
    sort_labels(&mut times);

    let mut missing = Vec::new();
    for u in &units {
        for tm in &times {
            if !cells.contains_key(&(u.clone(), tm.clone())) {
                missing.push((u.clone(), tm.clone()));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Unbalanced { missing });
    }

    let t = times.len();
    let mut y = Vec::with_capacity(units.len());
    let mut x = Vec::with_capacity(units.len());
    for u in &units {
        let mut yu = DVector::zeros(t);
        let mut xu = DMatrix::zeros(t, k);
        for (ti, tm) in times.iter().enumerate() {
            let (yv, xv) = &cells[&(u.clone(), tm.clone())];
            yu[ti] = *yv;
            for (kk, &v) in xv.iter().enumerate() {
                xu[(ti, kk)] = v;
            }
        }
        y.push(yu);
        x.push(xu);
    }
    PanelDataset::new(y, x, units, times)
}

/// Estimated group membership: one label per unit, labels in `0..G`.
///
/// Labels are zero-based in memory; serialized forms (JSON `gamma`) are
/// one-based to match the usual statistical convention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAssignment {
    labels: Vec<usize>,
    group_count: usize,
}

impl GroupAssignment {
    pub fn new(labels: Vec<usize>, group_count: usize) -> Result<Self> {
        if group_count == 0 {
            return Err(Error::InvalidInput("group count must be >= 1".into()));
        }
        if labels.is_empty() {
            return Err(Error::InvalidInput("assignment needs at least one unit".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&g| g >= group_count) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for G = {group_count}"
            )));
        }
        Ok(Self { labels, group_count })
    }

    /// Parse one-based labels (the serialized convention).
    pub fn from_one_based(labels: &[usize], group_count: usize) -> Result<Self> {
        if labels.contains(&0) {
            return Err(Error::InvalidInput("one-based labels must be >= 1".into()));
        }
        Self::new(labels.iter().map(|&g| g - 1).collect(), group_count)
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    /// Zero-based group of unit `i`.
    pub fn group_of(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.labels.iter().map(|&g| g + 1).collect()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.group_count];
        for &g in &self.labels {
            sizes[g] += 1;
        }
        sizes
    }

    pub fn members(&self, g: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == g).collect()
    }

    /// Zero-based index of the first empty group, if any.
    pub fn first_empty_group(&self) -> Option<usize> {
        self.group_sizes().iter().position(|&s| s == 0)
    }

    /// The permutation renaming groups by first occurrence, and the relabeled
    /// assignment. `perm[old] = new`.
    pub fn canonicalize(&self) -> (Vec<usize>, GroupAssignment) {
        let mut perm = vec![usize::MAX; self.group_count];
        let mut next = 0usize;
        for &g in &self.labels {
            if perm[g] == usize::MAX {
                perm[g] = next;
                next += 1;
            }
        }
        // Groups absent from the assignment keep a stable order after the rest.
        for p in perm.iter_mut() {
            if *p == usize::MAX {
                *p = next;
                next += 1;
            }
        }
        let relabeled = GroupAssignment {
            labels: self.labels.iter().map(|&g| perm[g]).collect(),
            group_count: self.group_count,
        };
        (perm, relabeled)
    }

    /// Apply a group permutation `perm[old] = new`.
    pub fn permuted(&self, perm: &[usize]) -> GroupAssignment {
        GroupAssignment {
            labels: self.labels.iter().map(|&g| perm[g]).collect(),
            group_count: self.group_count,
        }
    }
}

impl fmt::Display for GroupAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}]",
            self.one_based()
                .iter()
                .map(|g| g.to_string())
                .collect::<Vec<_>>()
                .join(",")
        )
    }
}

/// Group dummy matrix D (N x G): `D[i, g] = 1` exactly when unit i is in
/// group g.
pub fn group_dummy_matrix(gamma: &GroupAssignment) -> DMatrix<f64> {
    let n = gamma.n();
    let g = gamma.group_count();
    let mut d = DMatrix::zeros(n, g);
    for i in 0..n {
        d[(i, gamma.group_of(i))] = 1.0;
    }
    d
}

/// Expanded dummy matrix `D kron I_k` (NK x GK).
pub fn group_dummy_kron(gamma: &GroupAssignment, k: usize) -> DMatrix<f64> {
    group_dummy_matrix(gamma).kronecker(&DMatrix::identity(k, k))
}

/// A linear restriction `R alpha = r` on the stacked group coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHypothesis {
    r_matrix: DMatrix<f64>,
    r_vec: DVector<f64>,
}

impl LinearHypothesis {
    /// Validates shape and full row rank (smallest singular value relative to
    /// the largest must exceed 1e-10).
    pub fn new(r_matrix: DMatrix<f64>, r_vec: DVector<f64>) -> Result<Self> {
        let rows = r_matrix.nrows();
        if rows == 0 {
            return Err(Error::InvalidInput("hypothesis needs r >= 1 restrictions".into()));
        }
        if rows > r_matrix.ncols() {
            return Err(Error::InvalidInput(format!(
                "more restrictions ({rows}) than coefficients ({})",
                r_matrix.ncols()
            )));
        }
        if r_vec.len() != rows {
            return Err(Error::InvalidInput("R and r dimensions disagree".into()));
        }
        if r_matrix.iter().any(|v| !v.is_finite()) || r_vec.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("hypothesis contains non-finite entries".into()));
        }
        let rank = numerical_rank(&r_matrix, 1e-10);
        if rank < rows {
            return Err(Error::RankDeficient { rank, rows });
        }
        Ok(Self { r_matrix, r_vec })
    }

    pub fn r_matrix(&self) -> &DMatrix<f64> {
        &self.r_matrix
    }

    pub fn r_vec(&self) -> &DVector<f64> {
        &self.r_vec
    }

    /// Number of restrictions.
    pub fn restrictions(&self) -> usize {
        self.r_matrix.nrows()
    }

    /// Number of stacked coefficients the hypothesis applies to.
    pub fn coef_len(&self) -> usize {
        self.r_matrix.ncols()
    }

    /// Deviation `R alpha - r`.
    pub fn deviation(&self, alpha: &DVector<f64>) -> Result<DVector<f64>> {
        if alpha.len() != self.coef_len() {
            return Err(Error::InvalidInput(format!(
                "hypothesis expects {} coefficients, got {}",
                self.coef_len(),
                alpha.len()
            )));
        }
        Ok(&self.r_matrix * alpha - &self.r_vec)
    }

    /// Re-express a hypothesis on G blocks of `k_old` coefficients for
    /// blocks of `k_new >= k_old` coefficients, zero-filling the appended
    /// positions (used to lift slope hypotheses onto dummy-augmented fits).
    pub fn expand_blocks(&self, groups: usize, k_old: usize, k_new: usize) -> Result<Self> {
        if self.coef_len() != groups * k_old {
            return Err(Error::InvalidInput(
                "hypothesis width is not G * K for the requested expansion".into(),
            ));
        }
        if k_new < k_old {
            return Err(Error::InvalidInput("cannot shrink coefficient blocks".into()));
        }
        let rows = self.restrictions();
        let mut r_new = DMatrix::zeros(rows, groups * k_new);
        for g in 0..groups {
            for k in 0..k_old {
                for row in 0..rows {
                    r_new[(row, g * k_new + k)] = self.r_matrix[(row, g * k_old + k)];
                }
            }
        }
        LinearHypothesis::new(r_new, self.r_vec.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy_panel() -> PanelDataset {
        // 2 units x 3 periods x 1 regressor
        PanelDataset::from_arrays(
            2,
            3,
            1,
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0],
        )
        .unwrap()
    }

    #[test]
    fn within_removes_unit_means() {
        let d = toy_panel().within_transform().unwrap();
        assert_relative_eq!(d.y(0)[0], -1.0, epsilon = 1e-15);
        assert_relative_eq!(d.y(0)[1], 0.0, epsilon = 1e-15);
        assert_relative_eq!(d.y(0)[2], 1.0, epsilon = 1e-15);
        // constant regressor becomes the zero column
        assert!(d.x(0).iter().all(|&v| v.abs() < 1e-15));
        // per-unit means of every transformed variable vanish
        for i in 0..d.n() {
            assert_relative_eq!(d.y(i).sum(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn within_is_idempotent() {
        let once = toy_panel().within_transform().unwrap();
        let twice = once.within_transform().unwrap();
        for i in 0..once.n() {
            assert_relative_eq!((once.y(i) - twice.y(i)).norm(), 0.0, epsilon = 1e-12);
            assert_relative_eq!((once.x(i) - twice.x(i)).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn within_rejects_t1() {
        let d = PanelDataset::from_arrays(2, 1, 1, &[1.0, 2.0], &[1.0, 1.0]).unwrap();
        assert!(d.within_transform().is_err());
    }

    #[test]
    fn time_dummies_shape_and_values() {
        let d = PanelDataset::from_arrays(
            2,
            4,
            2,
            &[0.0; 8],
            &(0..16).map(|v| v as f64).collect::<Vec<_>>(),
        )
        .unwrap();
        let a = d.augment_time_dummies().unwrap();
        assert_eq!(a.k(), 5);
        // originals preserved in the first K columns
        for i in 0..2 {
            for t in 0..4 {
                for k in 0..2 {
                    assert_eq!(a.x(i)[(t, k)], d.x(i)[(t, k)]);
                }
            }
        }
        // each dummy column is the one-hot for its period, first period base
        for tau in 0..3 {
            for t in 0..4 {
                let expect = if t == tau + 1 { 1.0 } else { 0.0 };
                assert_eq!(a.x(0)[(t, 2 + tau)], expect);
            }
            assert_relative_eq!(a.x(0).column(2 + tau).sum(), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn dummy_matrix_definition() {
        let gamma = GroupAssignment::from_one_based(&[1, 2, 1], 2).unwrap();
        let d = group_dummy_matrix(&gamma);
        assert_eq!(
            d,
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0])
        );
        // column sums are the group sizes
        assert_eq!(d.column(0).sum(), 2.0);
        assert_eq!(d.column(1).sum(), 1.0);
        // kron structure: D'D = diag sizes kron I_K
        let big = group_dummy_kron(&gamma, 2);
        let dtd = big.transpose() * &big;
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0, 1.0, 1.0]));
        assert_relative_eq!(dtd, expect, epsilon = 1e-14);
    }

    #[test]
    fn csv_round_trip() {
        let d = toy_panel();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        d.write_csv(&path).unwrap();
        let back = load_panel(&path, &CsvSchema::default()).unwrap();
        assert_eq!(back.n(), 2);
        assert_eq!(back.t(), 3);
        assert_eq!(back.k(), 1);
        for i in 0..2 {
            assert_relative_eq!((back.y(i) - d.y(i)).norm(), 0.0, epsilon = 1e-14);
            assert_relative_eq!((back.x(i) - d.x(i)).norm(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn csv_missing_cell_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        std::fs::write(
            &path,
            "unit,time,y,x1\nu1,t1,1,1\nu1,t2,2,1\nu1,t3,3,1\nu2,t1,4,2\nu2,t2,5,2\n",
        )
        .unwrap();
        let err = load_panel(&path, &CsvSchema::default()).unwrap_err();
        assert_eq!(err.to_string(), "unbalanced: missing (u2,t3)");
    }

    #[test]
    fn csv_header_only_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        std::fs::write(&path, "unit,time,y,x1\n").unwrap();
        let err = load_panel(&path, &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyPanel));
    }

    #[test]
    fn csv_non_numeric_located() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        std::fs::write(&path, "unit,time,y,x1\nu1,t1,oops,1\nu2,t1,2,1\n").unwrap();
        let err = load_panel(&path, &CsvSchema::default()).unwrap_err();
        match err {
            Error::NonNumeric { row, column, value } => {
                assert_eq!(row, 2);
                assert_eq!(column, "y");
                assert_eq!(value, "oops");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn numeric_time_labels_sort_numerically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        let mut body = String::from("unit,time,y,x1\n");
        for u in ["1", "2"] {
            for t in ["9", "10", "11"] {
                body.push_str(&format!("{u},{t},{t},1\n"));
            }
        }
        std::fs::write(&path, body).unwrap();
        let d = load_panel(&path, &CsvSchema::default()).unwrap();
        assert_eq!(d.time_ids(), &["9", "10", "11"]);
        assert_eq!(d.y(0)[0], 9.0);
        assert_eq!(d.y(0)[2], 11.0);
    }

    #[test]
    fn hypothesis_rank_check() {
        let r = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, -1.0, 0.0, 2.0, 0.0, -2.0, 0.0]);
        let err = LinearHypothesis::new(r, DVector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { rank: 1, rows: 2 }));
    }

    #[test]
    fn hypothesis_block_expansion() {
        let h = LinearHypothesis::new(
            DMatrix::from_row_slice(1, 4, &[0.0, 1.0, 0.0, -1.0]),
            DVector::zeros(1),
        )
        .unwrap();
        let wide = h.expand_blocks(2, 2, 5).unwrap();
        assert_eq!(wide.coef_len(), 10);
        assert_eq!(wide.r_matrix()[(0, 1)], 1.0);
        assert_eq!(wide.r_matrix()[(0, 6)], -1.0);
        assert_eq!(wide.r_matrix().row(0).iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn canonical_relabels_by_first_occurrence() {
        let gamma = GroupAssignment::new(vec![2, 0, 2, 1], 3).unwrap();
        let (perm, canon) = gamma.canonicalize();
        assert_eq!(canon.labels(), &[0, 1, 0, 2]);
        assert_eq!(perm[2], 0);
        assert_eq!(perm[0], 1);
        assert_eq!(perm[1], 2);
    }
}
