//! Named dense tensors and the checkpoint format shared by the policy and
//! the ranker.
//!
//! ```text
//! CNIR-TENSORS 1
//! tensor <name> <rows> <cols>
//! <cols values>            (rows lines)
//! ```
//! Values use Rust's shortest round-trip float formatting, so a save/load
//! cycle is exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "CNIR-TENSORS";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Tensor {
            name: name.into(),
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// An ordered collection of tensors, addressed by position or name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorSet {
    pub tensors: Vec<Tensor>,
}

impl TensorSet {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        TensorSet { tensors }
    }

    /// A zero-filled set with the same shapes.
    pub fn zeros_like(&self) -> Self {
        TensorSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.rows, t.cols))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fill(&mut self, v: f64) {
        for t in &mut self.tensors {
            t.data.fill(v);
        }
    }

    /// `self += scale * other`; shapes must match.
    pub fn add_scaled(&mut self, other: &TensorSet, scale: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            debug_assert_eq!(a.data.len(), b.data.len());
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            for x in &mut t.data {
                *x *= s;
            }
        }
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors
            .iter()
            .find(|t| t.data.iter().any(|v| !v.is_finite()))
            .map(|t| t.name.as_str())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite() {
            Some(name) => Err(Error::NonFinite(name.to_string())),
            None => Ok(()),
        }
    }

    /// Flat coordinate view: `(tensor index, offset)` for every scalar.
    pub fn coordinates(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.tensors
            .iter()
            .enumerate()
            .flat_map(|(i, t)| (0..t.data.len()).map(move |j| (i, j)))
    }

    /// FNV-1a over the raw bit patterns; used for freeze/determinism checks.
    pub fn fingerprint(&self) -> u64 {
        let mut h = crate::rng::Fnv::new();
        for t in &self.tensors {
            h.write(t.name.as_bytes());
            for v in &t.data {
                h.write(&v.to_bits().to_le_bytes());
            }
        }
        h.finish()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "{MAGIC} {CHECKPOINT_FORMAT_VERSION}").map_err(io)?;
        for t in &self.tensors {
            writeln!(w, "tensor {} {} {}", t.name, t.rows, t.cols).map_err(io)?;
            for r in 0..t.rows {
                let line: Vec<String> = t.row(r).iter().map(|v| v.to_string()).collect();
                writeln!(w, "{}", line.join(" ")).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let header = lines
            .next()
            .map(|(_, l)| l.map_err(|e| Error::io(path, e)))
            .transpose()?
            .unwrap_or_default();
        if header != format!("{MAGIC} {CHECKPOINT_FORMAT_VERSION}") {
            return Err(Error::parse(path, 1, format!("unsupported checkpoint header `{header}`")));
        }
        let mut tensors = Vec::new();
        while let Some((i, line)) = lines.next() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let (name, rows, cols) = match f.as_slice() {
                ["tensor", name, r, c] => match (r.parse::<usize>(), c.parse::<usize>()) {
                    (Ok(r), Ok(c)) => (name.to_string(), r, c),
                    _ => return Err(Error::parse(path, i + 1, "bad tensor shape")),
                },
                _ => return Err(Error::parse(path, i + 1, "expected `tensor <name> <rows> <cols>`")),
            };
            let mut t = Tensor::zeros(name, rows, cols);
            for r in 0..rows {
                let Some((j, row)) = lines.next() else {
                    return Err(Error::parse(path, i + 1, format!("tensor {} truncated", t.name)));
                };
                let row = row.map_err(|e| Error::io(path, e))?;
                let values = row
                    .split_whitespace()
                    .map(str::parse::<f64>)
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::parse(path, j + 1, e.to_string()))?;
                if values.len() != cols {
                    return Err(Error::parse(
                        path,
                        j + 1,
                        format!("tensor {} row {r}: {} values, expected {cols}", t.name, values.len()),
                    ));
                }
                t.row_mut(r).copy_from_slice(&values);
            }
            tensors.push(t);
        }
        Ok(TensorSet { tensors })
    }

    /// Overwrites values from `other`, requiring identical names and shapes.
    pub fn assign(&mut self, other: TensorSet) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Dimension(format!(
                "checkpoint has {} tensors, model expects {}",
                other.tensors.len(),
                self.tensors.len()
            )));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.name != b.name || a.rows != b.rows || a.cols != b.cols {
                return Err(Error::Dimension(format!(
                    "checkpoint tensor {} {}x{} does not match {} {}x{}",
                    b.name, b.rows, b.cols, a.name, a.rows, a.cols
                )));
            }
        }
        *self = other;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn save_load_is_exact(
            a in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::ZERO, 6),
            b in proptest::collection::vec(-1e-300f64..1e300, 3),
        ) {
            let set = TensorSet::new(vec![
                Tensor { name: "w".into(), rows: 2, cols: 3, data: a },
                Tensor { name: "b".into(), rows: 1, cols: 3, data: b },
            ]);
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("x.ckpt");
            set.save(&p).unwrap();
            let back = TensorSet::load(&p).unwrap();
            prop_assert_eq!(back.fingerprint(), set.fingerprint());
        }
    }

    #[test]
    fn assign_checks_shapes() {
        let mut a = TensorSet::new(vec![Tensor::zeros("w", 2, 2)]);
        assert!(a.assign(TensorSet::new(vec![Tensor::zeros("w", 1, 2)])).is_err());
        assert!(a.assign(TensorSet::new(vec![Tensor::zeros("v", 2, 2)])).is_err());
        let mut ok = Tensor::zeros("w", 2, 2);
        ok.data[3] = 1.5;
        a.assign(TensorSet::new(vec![ok])).unwrap();
        assert_eq!(a.tensors[0].data[3], 1.5);
    }

    #[test]
    fn non_finite_is_named() {
        let mut s = TensorSet::new(vec![Tensor::zeros("a", 1, 1), Tensor::zeros("b", 1, 2)]);
        s.tensors[1].data[1] = f64::NAN;
        assert!(matches!(s.check_finite(), Err(Error::NonFinite(n)) if n == "b"));
    }
}
