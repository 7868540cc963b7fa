//! Minimal dense building blocks shared by the classifier head and the
//! recommender: a row-major matrix, an affine layer with hand-written
//! backward passes, and the named-tensor text format used for model files.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Invalid(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::Invalid(format!(
                "ragged rows: expected width {cols}, found {}",
                bad.len()
            )));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Uniform entries in `[-bound, bound)`.
    pub fn uniform<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self -= scale * other`
    pub fn sub_scaled(&mut self, other: &Matrix, scale: f64) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a -= scale * b;
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inverted dropout in place: each entry is zeroed with probability `rate`
/// and survivors are scaled by `1 / (1 - rate)`. Returns the applied mask.
pub fn dropout<R: Rng>(x: &mut [f64], rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 - rate;
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { 1.0 / keep })
        .collect();
    for (v, m) in x.iter_mut().zip(&mask) {
        *v *= m;
    }
    mask
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Affine layer `y = W x + b` with `W` stored as out × in.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LinearGrad {
    pub fn zeros_like(layer: &Linear) -> Self {
        LinearGrad {
            weight: Matrix::zeros(layer.weight.rows(), layer.weight.cols()),
            bias: vec![0.0; layer.bias.len()],
        }
    }
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        Linear {
            weight: Matrix::uniform(output, input, bound, rng),
            bias: vec![0.0; output],
        }
    }

    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(Error::Invalid(format!(
                "bias length {} does not match {} output rows",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Linear { weight, bias })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.output_dim())
            .map(|o| dot(self.weight.row(o), x) + self.bias[o])
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns dL/dx.
    pub fn backward(&self, x: &[f64], grad_out: &[f64], grad: &mut LinearGrad) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.input_dim()];
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let w = self.weight.row(o);
            let gw = grad.weight.row_mut(o);
            for i in 0..x.len() {
                gw[i] += g * x[i];
                grad_in[i] += g * w[i];
            }
        }
        grad_in
    }

    /// Batch forward: `x` is batch × in, result batch × out.
    pub fn forward_batch(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), self.output_dim());
        for r in 0..x.rows() {
            let y = self.forward(x.row(r));
            out.row_mut(r).copy_from_slice(&y);
        }
        out
    }

    pub fn backward_batch(&self, x: &Matrix, grad_out: &Matrix, grad: &mut LinearGrad) -> Matrix {
        let mut grad_in = Matrix::zeros(x.rows(), self.input_dim());
        for r in 0..x.rows() {
            let g = self.backward(x.row(r), grad_out.row(r), grad);
            grad_in.row_mut(r).copy_from_slice(&g);
        }
        grad_in
    }

    pub fn step(&mut self, grad: &LinearGrad, lr: f64) {
        self.weight.sub_scaled(&grad.weight, lr);
        for (b, g) in self.bias.iter_mut().zip(&grad.bias) {
            *b -= lr * g;
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.data().len() + self.bias.len()
    }

    pub fn push_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.weight.data());
        out.extend_from_slice(&self.bias);
    }

    /// Reads this layer's parameters from the front of `src`, returning the rest.
    pub fn pull_params<'a>(&mut self, src: &'a [f64]) -> &'a [f64] {
        let (w, rest) = src.split_at(self.weight.data().len());
        self.weight.data_mut().copy_from_slice(w);
        let (b, rest) = rest.split_at(self.bias.len());
        self.bias.copy_from_slice(b);
        rest
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|b| b.is_finite())
    }
}

impl LinearGrad {
    pub fn push_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.weight.data());
        out.extend_from_slice(&self.bias);
    }
}

/// Writer for the sectioned text format:
///
/// ```text
/// <header line>
/// [name] rows=R cols=C
/// v,v,...        (R lines of C values)
/// [name] ids=N
/// id             (N lines)
/// [end]
/// ```
///
/// The `[end]` trailer makes truncated files detectable.
///
/// Values use Rust's shortest round-trip decimal formatting.
#[derive(Debug, Default)]
pub struct TensorWriter {
    out: String,
}

impl TensorWriter {
    pub fn new(header: &str) -> Self {
        TensorWriter {
            out: format!("{header}\n"),
        }
    }

    pub fn matrix(&mut self, name: &str, m: &Matrix) -> &mut Self {
        writeln!(self.out, "[{name}] rows={} cols={}", m.rows(), m.cols()).unwrap();
        for r in 0..m.rows() {
            let vals: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
            self.out.push_str(&vals.join(","));
            self.out.push('\n');
        }
        self
    }

    pub fn vector(&mut self, name: &str, v: &[f64]) -> &mut Self {
        self.matrix(name, &Matrix::from_vec(1, v.len(), v.to_vec()).unwrap())
    }

    pub fn linear(&mut self, name: &str, layer: &Linear) -> &mut Self {
        self.matrix(&format!("{name}.weight"), &layer.weight)
            .vector(&format!("{name}.bias"), &layer.bias)
    }

    pub fn ids(&mut self, name: &str, ids: &[String]) -> Result<&mut Self> {
        if let Some(bad) = ids.iter().find(|id| id.contains(['\n', '\r'])) {
            return Err(Error::Invalid(format!("id {bad:?} contains a newline")));
        }
        writeln!(self.out, "[{name}] ids={}", ids.len()).unwrap();
        for id in ids {
            self.out.push_str(id);
            self.out.push('\n');
        }
        Ok(self)
    }

    pub fn finish(mut self) -> String {
        self.out.push_str(END_MARKER);
        self.out.push('\n');
        self.out
    }
}

const END_MARKER: &str = "[end]";

#[derive(Debug, Clone, PartialEq)]
enum Section {
    Matrix(Matrix),
    Ids(Vec<String>),
}

/// Parsed sections of a tensor file, consumed by name.
#[derive(Debug)]
pub struct TensorFile {
    pub header: String,
    sections: BTreeMap<String, Section>,
}

impl TensorFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().peekable();
        let (_, header) = lines.next().ok_or_else(|| Error::Format("empty file".into()))?;
        let mut sections = BTreeMap::new();
        let mut ended = false;
        while let Some((i, line)) = lines.next() {
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            if ended {
                return Err(Error::Format(format!("line {lineno}: content after {END_MARKER}")));
            }
            if line == END_MARKER {
                ended = true;
                continue;
            }
            let (name, rest) = line
                .strip_prefix('[')
                .and_then(|l| l.split_once("] "))
                .ok_or_else(|| Error::Format(format!("line {lineno}: expected section header")))?;
            let section = if let Some(n) = rest.strip_prefix("ids=") {
                let n: usize = n
                    .parse()
                    .map_err(|_| Error::Format(format!("line {lineno}: bad id count")))?;
                let mut ids = Vec::with_capacity(n);
                for _ in 0..n {
                    let (_, id) = lines
                        .next()
                        .ok_or_else(|| Error::Format(format!("section [{name}] truncated")))?;
                    ids.push(id.to_owned());
                }
                Section::Ids(ids)
            } else {
                let (rows, cols) =
                    parse_shape(rest).ok_or_else(|| Error::Format(format!("line {lineno}: bad shape '{rest}'")))?;
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    let (j, row) = lines
                        .next()
                        .ok_or_else(|| Error::Format(format!("section [{name}] truncated at row {r}")))?;
                    let before = data.len();
                    if cols > 0 {
                        for v in row.split(',') {
                            let v: f64 = v
                                .parse()
                                .map_err(|_| Error::Format(format!("line {}: bad value '{v}'", j + 1)))?;
                            data.push(v);
                        }
                    } else if !row.is_empty() {
                        return Err(Error::Format(format!("line {}: expected empty row", j + 1)));
                    }
                    if data.len() - before != cols {
                        return Err(Error::Format(format!(
                            "shape mismatch in [{name}] row {r}: expected {cols} values, found {}",
                            data.len() - before
                        )));
                    }
                }
                Section::Matrix(Matrix::from_vec(rows, cols, data)?)
            };
            if sections.insert(name.to_owned(), section).is_some() {
                return Err(Error::Format(format!("duplicate section [{name}]")));
            }
        }
        if !ended {
            return Err(Error::Format("file is truncated (no end marker)".into()));
        }
        Ok(TensorFile {
            header: header.to_owned(),
            sections,
        })
    }

    /// Header `key=value` pairs (tokens without `=` are ignored).
    pub fn header_fields(&self) -> BTreeMap<&str, &str> {
        self.header
            .split_whitespace()
            .filter_map(|tok| tok.split_once('='))
            .collect()
    }

    pub fn take_matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
        match self.sections.remove(name) {
            Some(Section::Matrix(m)) if m.rows() == rows && m.cols() == cols => Ok(m),
            Some(Section::Matrix(m)) => Err(Error::Format(format!(
                "shape mismatch in [{name}]: expected {rows}x{cols}, found {}x{}",
                m.rows(),
                m.cols()
            ))),
            Some(Section::Ids(_)) => Err(Error::Format(format!("[{name}] is not a tensor"))),
            None => Err(Error::Format(format!("missing section [{name}]"))),
        }
    }

    pub fn take_vector(&mut self, name: &str, len: usize) -> Result<Vec<f64>> {
        Ok(self.take_matrix(name, 1, len)?.data().to_vec())
    }

    pub fn take_linear(&mut self, name: &str, input: usize, output: usize) -> Result<Linear> {
        let weight = self.take_matrix(&format!("{name}.weight"), output, input)?;
        let bias = self.take_vector(&format!("{name}.bias"), output)?;
        Linear::new(weight, bias)
    }

    /// Shape of a tensor section without consuming it.
    pub fn shape(&self, name: &str) -> Option<(usize, usize)> {
        match self.sections.get(name) {
            Some(Section::Matrix(m)) => Some((m.rows(), m.cols())),
            _ => None,
        }
    }

    pub fn take_ids(&mut self, name: &str, len: usize) -> Result<Vec<String>> {
        match self.sections.remove(name) {
            Some(Section::Ids(ids)) if ids.len() == len => Ok(ids),
            Some(Section::Ids(ids)) => Err(Error::Format(format!("[{name}] has {} ids, expected {len}", ids.len()))),
            Some(Section::Matrix(_)) => Err(Error::Format(format!("[{name}] is not an id list"))),
            None => Err(Error::Format(format!("missing section [{name}]"))),
        }
    }

    /// Errors if any section was left unconsumed.
    pub fn finish(self) -> Result<()> {
        match self.sections.keys().next() {
            Some(name) => Err(Error::Format(format!("unexpected section [{name}]"))),
            None => Ok(()),
        }
    }
}

fn parse_shape(s: &str) -> Option<(usize, usize)> {
    let mut parts = s.split_whitespace();
    let rows = parts.next()?.strip_prefix("rows=")?.parse().ok()?;
    let cols = parts.next()?.strip_prefix("cols=")?.parse().ok()?;
    parts.next().is_none().then_some((rows, cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
        assert!((sigmoid(1.0) + sigmoid(-1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = Linear::glorot(4, 3, &mut rng);
        let x = [0.3, -1.2, 0.8, 2.0];
        let upstream = [0.5, -0.25, 1.5];
        let loss = |l: &Linear, x: &[f64]| dot(&l.forward(x), &upstream);
        let mut grad = LinearGrad::zeros_like(&layer);
        let gx = layer.backward(&x, &upstream, &mut grad);
        let h = 1e-6;
        for i in 0..4 {
            let mut xp = x;
            xp[i] += h;
            let mut xm = x;
            xm[i] -= h;
            let fd = (loss(&layer, &xp) - loss(&layer, &xm)) / (2.0 * h);
            assert!((fd - gx[i]).abs() < 1e-8);
        }
        let mut params = Vec::new();
        layer.push_params(&mut params);
        let mut analytic = Vec::new();
        grad.push_params(&mut analytic);
        for i in 0..params.len() {
            let mut l = layer.clone();
            let mut p = params.clone();
            p[i] += h;
            l.pull_params(&p);
            let up = loss(&l, &x);
            p[i] -= 2.0 * h;
            l.pull_params(&p);
            let down = loss(&l, &x);
            assert!(((up - down) / (2.0 * h) - analytic[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn tensor_file_round_trip() {
        let m = Matrix::from_rows(&[vec![0.1, -2.5e-12], vec![3.0, f64::MIN_POSITIVE]]).unwrap();
        let mut w = TensorWriter::new("kind=test version=1");
        w.matrix("m", &m).vector("v", &[1.0, 2.0, 3.0]);
        w.ids("names", &["a b".into(), "c".into()]).unwrap();
        let text = w.finish();
        let mut f = TensorFile::parse(&text).unwrap();
        assert_eq!(f.header_fields()["kind"], "test");
        assert_eq!(f.take_matrix("m", 2, 2).unwrap(), m);
        assert_eq!(f.take_vector("v", 3).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(f.take_ids("names", 2).unwrap(), vec!["a b", "c"]);
        f.finish().unwrap();
    }

    #[test]
    fn tensor_file_errors() {
        assert!(TensorFile::parse("h\n[m] rows=2 cols=2\n1,2\n[end]\n").is_err());
        assert!(TensorFile::parse("h\n[m] rows=1 cols=2\n1,2,3\n[end]\n").is_err());
        assert!(TensorFile::parse("h\n[m] rows=1 cols=2\n1,2\n").is_err());
        let mut f = TensorFile::parse("h\n[m] rows=1 cols=2\n1,2\n[end]\n").unwrap();
        assert!(f.take_matrix("m", 1, 3).is_err());
    }
}
