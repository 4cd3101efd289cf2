//! LIBSVM-format datasets, seeded synthetic generators and summary
//! statistics.
//!
//! Rows are stored with 0-based feature indices; the text format is 1-based.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::linalg::SparseVec;
use crate::problems::{sigmoid, BinaryLogistic, LeastSquares, MultinomialLogistic};
use crate::rng::keyed_rng;
use crate::Scalar;

/// Interpretation of the label column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelKind {
    /// `+1`/`-1` (also `1`); anything else is rejected.
    #[default]
    Binary,
    /// Class indices `0..C`.
    Multiclass,
    /// Any finite real (regression targets).
    Real,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<SparseVec<f64>>,
    pub labels: Vec<f64>,
    pub n: usize,
    pub kind: LabelKind,
    pub note: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Class indices of a multiclass dataset.
    pub fn class_labels(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .map(|&l| {
                if l >= 0.0 && l.fract() == 0.0 {
                    Ok(l as usize)
                } else {
                    Err(invalid(format!("label {l} is not a class index")))
                }
            })
            .collect()
    }

    /// Number of classes: one more than the largest class index.
    pub fn num_classes(&self) -> Result<usize> {
        Ok(self.class_labels()?.into_iter().max().map_or(0, |c| c + 1))
    }

    /// Multiplies feature column `j` by `scales[j]`; labels are untouched.
    pub fn scale_columns(&mut self, scales: &[f64]) -> Result<()> {
        if scales.len() != self.n {
            return Err(invalid("one scale per feature column required"));
        }
        if scales.iter().any(|s| !s.is_finite()) {
            return Err(invalid("column scales must be finite"));
        }
        for row in &mut self.rows {
            for (&j, v) in row.indices.iter().zip(row.values.iter_mut()) {
                *v *= scales[j];
            }
        }
        Ok(())
    }

    fn rows_as<T: Scalar>(&self) -> Vec<SparseVec<T>> {
        self.rows.iter().map(|r| r.cast()).collect()
    }

    pub fn binary_logistic<T: Scalar>(&self, lambda: T) -> Result<BinaryLogistic<T>> {
        if self.labels.iter().any(|&l| l != 1.0 && l != -1.0) {
            return Err(invalid("binary logistic model needs labels ±1"));
        }
        BinaryLogistic::new(
            self.rows_as(),
            self.labels.iter().map(|&l| T::of(l)).collect(),
            self.n,
            lambda,
        )
    }

    /// Multinomial model with `classes` classes (at least the number present).
    pub fn multinomial_logistic<T: Scalar>(
        &self,
        classes: usize,
        lambda: T,
    ) -> Result<MultinomialLogistic<T>> {
        MultinomialLogistic::new(
            self.rows_as(),
            self.class_labels()?,
            classes,
            self.n,
            lambda,
        )
    }

    pub fn least_squares<T: Scalar>(&self, lambda: T) -> Result<LeastSquares<T>> {
        LeastSquares::new(
            self.rows_as(),
            self.labels.iter().map(|&l| T::of(l)).collect(),
            self.n,
            lambda,
        )
    }
}

/// Parser settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParseOptions {
    /// Feature count; overrides a `# n_features=N` header and the maximum
    /// index seen.
    pub n_features: Option<usize>,
    pub labels: LabelKind,
}

fn parse_error(line: usize, token: &str, reason: impl Into<String>) -> Error {
    Error::Parse {
        line,
        token: token.to_string(),
        reason: reason.into(),
    }
}

fn parse_label(line: usize, token: &str, kind: LabelKind) -> Result<f64> {
    let bad = |reason: &str| parse_error(line, token, reason);
    match kind {
        LabelKind::Binary => match token {
            "+1" | "1" | "1.0" | "+1.0" => Ok(1.0),
            "-1" | "-1.0" => Ok(-1.0),
            _ => Err(bad("binary label must be +1 or -1")),
        },
        LabelKind::Multiclass => token
            .parse::<usize>()
            .map(|c| c as f64)
            .map_err(|_| bad("class label must be a nonnegative integer")),
        LabelKind::Real => match token.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(bad("label must be a finite number")),
        },
    }
}

/// Parses `<label> <idx>:<val> ...` lines with 1-based strictly increasing
/// indices. Text after `#` is ignored; a comment of the form
/// `n_features=N` declares the feature count.
pub fn parse_libsvm<R: BufRead>(reader: R, opts: ParseOptions) -> Result<Dataset> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut header_n: Option<usize> = None;
    let mut max_index = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let (data, comment) = match line.split_once('#') {
            Some((d, c)) => (d, Some(c.trim())),
            None => (line.as_str(), None),
        };
        if let Some(value) = comment.and_then(|c| c.strip_prefix("n_features=")) {
            let n = value.trim().parse::<usize>().map_err(|_| {
                parse_error(lineno, value, "n_features must be a nonnegative integer")
            })?;
            if header_n.is_some_and(|h| h != n) {
                return Err(parse_error(lineno, value, "conflicting n_features headers"));
            }
            header_n = Some(n);
        }
        let mut tokens = data.split_whitespace();
        let Some(label_token) = tokens.next() else {
            continue;
        };
        let label = parse_label(lineno, label_token, opts.labels)?;
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for token in tokens {
            let (idx, val) = token
                .split_once(':')
                .ok_or_else(|| parse_error(lineno, token, "expected <index>:<value>"))?;
            let idx: i64 = idx
                .parse()
                .map_err(|_| parse_error(lineno, token, "index is not an integer"))?;
            let val: f64 = val
                .parse()
                .map_err(|_| parse_error(lineno, token, "value is not a number"))?;
            if idx <= 0 {
                return Err(parse_error(lineno, token, "indices are 1-based"));
            }
            if !val.is_finite() {
                return Err(parse_error(lineno, token, "value must be finite"));
            }
            let idx = (idx - 1) as usize;
            if indices.last().is_some_and(|&last| idx <= last) {
                return Err(parse_error(
                    lineno,
                    token,
                    "indices must be strictly increasing",
                ));
            }
            indices.push(idx);
            values.push(val);
        }
        if let Some(&last) = indices.last() {
            max_index = max_index.max(last + 1);
        }
        rows.push(SparseVec::new(indices, values));
        labels.push(label);
    }

    let n = opts.n_features.or(header_n).unwrap_or(max_index);
    if max_index > n {
        return Err(invalid(format!(
            "feature index {max_index} exceeds the declared {n} features"
        )));
    }
    Ok(Dataset {
        rows,
        labels,
        n,
        kind: opts.labels,
        note: String::new(),
    })
}

/// Writes the dataset in LIBSVM format with a `# n_features=N` header;
/// numbers use the shortest representation that parses back exactly.
pub fn write_libsvm<W: Write>(d: &Dataset, mut w: W) -> Result<()> {
    writeln!(w, "# n_features={}", d.n)?;
    for (row, &label) in d.rows.iter().zip(&d.labels) {
        match d.kind {
            LabelKind::Binary if label > 0.0 => write!(w, "+1")?,
            LabelKind::Binary => write!(w, "-1")?,
            LabelKind::Multiclass => write!(w, "{}", label as usize)?,
            LabelKind::Real => write!(w, "{label:?}")?,
        }
        for (&i, &v) in row.indices.iter().zip(&row.values) {
            write!(w, " {}:{v:?}", i + 1)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Parameters of the synthetic generators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub m: usize,
    pub n: usize,
    /// Probability that a feature is nonzero.
    pub sparsity: f64,
    pub seed: u64,
    /// Scale of the planted margins; `∞` gives noise-free labels.
    pub separation: f64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(invalid("synthetic data needs M, n ≥ 1"));
        }
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return Err(invalid("sparsity must lie in (0, 1]"));
        }
        if !(self.separation >= 0.0) {
            return Err(invalid("separation must be nonnegative"));
        }
        Ok(())
    }
}

fn sparse_gaussian_row(rng: &mut impl Rng, n: usize, sparsity: f64) -> SparseVec<f64> {
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for j in 0..n {
        if sparsity >= 1.0 || rng.random::<f64>() < sparsity {
            indices.push(j);
            values.push(rng.sample(StandardNormal));
        }
    }
    SparseVec::new(indices, values)
}

/// Planted vector with unit expected margin scale: `w ~ N(0, I)/√(n·sparsity)`.
fn planted(rng: &mut impl Rng, n: usize, sparsity: f64) -> Vec<f64> {
    let s = 1.0 / (n as f64 * sparsity).sqrt();
    (0..n)
        .map(|_| s * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Seeded sparse Gaussian features with labels `+1` drawn with probability
/// `σ(separation·wᵀa)` for a planted `w`. Returns the data and `w`.
pub fn generate_synthetic_logistic(spec: &SyntheticSpec) -> Result<(Dataset, Vec<f64>)> {
    spec.validate()?;
    let mut rng = keyed_rng(spec.seed, 0);
    let w = planted(&mut rng, spec.n, spec.sparsity);
    let mut rows = Vec::with_capacity(spec.m);
    let mut labels = Vec::with_capacity(spec.m);
    for _ in 0..spec.m {
        let row = sparse_gaussian_row(&mut rng, spec.n, spec.sparsity);
        let margin = row.dot_dense(&w);
        let u: f64 = rng.random();
        let positive = if spec.separation.is_infinite() {
            margin >= 0.0
        } else {
            u < sigmoid(spec.separation * margin)
        };
        labels.push(if positive { 1.0 } else { -1.0 });
        rows.push(row);
    }
    let note = format!(
        "synthetic logistic M={} n={} sparsity={} seed={} separation={}",
        spec.m, spec.n, spec.sparsity, spec.seed, spec.separation
    );
    Ok((
        Dataset {
            rows,
            labels,
            n: spec.n,
            kind: LabelKind::Binary,
            note,
        },
        w,
    ))
}

/// Multiclass analogue: class `c` drawn with probability
/// `softmax(separation·W a)_c` for planted rows `W_c`. Returns the data and
/// `W` (row-major, `classes × n`).
pub fn generate_synthetic_multinomial(
    spec: &SyntheticSpec,
    classes: usize,
) -> Result<(Dataset, Vec<f64>)> {
    spec.validate()?;
    if classes < 2 {
        return Err(invalid("need at least two classes"));
    }
    let mut rng = keyed_rng(spec.seed, 0);
    let w: Vec<f64> = (0..classes)
        .flat_map(|_| planted(&mut rng, spec.n, spec.sparsity))
        .collect();
    let mut rows = Vec::with_capacity(spec.m);
    let mut labels = Vec::with_capacity(spec.m);
    for _ in 0..spec.m {
        let row = sparse_gaussian_row(&mut rng, spec.n, spec.sparsity);
        let scores: Vec<f64> = (0..classes)
            .map(|c| row.dot_dense(&w[c * spec.n..(c + 1) * spec.n]))
            .collect();
        let u: f64 = rng.random();
        let class = if spec.separation.is_infinite() {
            scores
                .iter()
                .enumerate()
                .fold(0, |best, (c, &s)| if s > scores[best] { c } else { best })
        } else {
            let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = scores
                .iter()
                .map(|s| (spec.separation * (s - top)).exp())
                .collect();
            let total: f64 = weights.iter().sum();
            let mut acc = 0.0;
            let target = u * total;
            weights
                .iter()
                .position(|&wc| {
                    acc += wc;
                    target < acc
                })
                .unwrap_or(classes - 1)
        };
        labels.push(class as f64);
        rows.push(row);
    }
    let note = format!(
        "synthetic multinomial M={} n={} classes={classes} sparsity={} seed={} separation={}",
        spec.m, spec.n, spec.sparsity, spec.seed, spec.separation
    );
    Ok((
        Dataset {
            rows,
            labels,
            n: spec.n,
            kind: LabelKind::Multiclass,
            note,
        },
        w,
    ))
}

/// Summary of a dataset. `label_counts` is sorted by label.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub m: usize,
    pub n: usize,
    pub nnz: usize,
    pub label_counts: Vec<(f64, usize)>,
    pub max_abs: f64,
    pub empty: bool,
}

pub fn dataset_stats(d: &Dataset) -> DatasetStats {
    let mut sorted = d.labels.clone();
    sorted.sort_by(f64::total_cmp);
    let mut label_counts: Vec<(f64, usize)> = Vec::new();
    for l in sorted {
        match label_counts.last_mut() {
            Some((last, count)) if *last == l => *count += 1,
            _ => label_counts.push((l, 1)),
        }
    }
    DatasetStats {
        m: d.rows.len(),
        n: d.n,
        nnz: d.rows.iter().map(|r| r.nnz()).sum(),
        label_counts,
        max_abs: d
            .rows
            .iter()
            .flat_map(|r| r.values.iter())
            .fold(0.0, |a: f64, v| a.max(v.abs())),
        empty: d.rows.is_empty(),
    }
}
