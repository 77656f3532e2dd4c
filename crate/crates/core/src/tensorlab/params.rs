use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use super::matrix::Matrix;
use super::rng::SeededRng;
use crate::error::{Error, Result};

/// Named weight tensors plus the set of names that training may update.
///
/// Tensors iterate in name order, which fixes the layout of flattened views
/// and checkpoint payloads.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    tensors: BTreeMap<String, Matrix>,
    trainable: BTreeSet<String>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix, trainable: bool) {
        let name = name.into();
        if trainable {
            self.trainable.insert(name.clone());
        } else {
            self.trainable.remove(&name);
        }
        self.tensors.insert(name, value);
    }

    pub fn with(mut self, name: impl Into<String>, value: Matrix, trainable: bool) -> Self {
        self.insert(name, value, trainable);
        self
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.trainable.contains(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.trainable.iter().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Matrix::len).sum()
    }

    pub fn num_trainable_values(&self) -> usize {
        self.trainable
            .iter()
            .filter_map(|n| self.tensors.get(n))
            .map(Matrix::len)
            .sum()
    }

    /// Subset holding only the trainable tensors.
    pub fn trainable_subset(&self) -> ParamSet {
        let mut out = ParamSet::new();
        for name in &self.trainable {
            if let Some(t) = self.tensors.get(name) {
                out.insert(name.clone(), t.clone(), true);
            }
        }
        out
    }

    /// Replaces every tensor of `self` that `update` also carries.
    pub fn overwrite_from(&mut self, update: &ParamSet) -> Result<()> {
        for (name, t) in &update.tensors {
            let slot = self
                .tensors
                .get_mut(name)
                .ok_or_else(|| Error::ShapeMismatch(format!("unknown tensor `{name}`")))?;
            if slot.shape() != t.shape() {
                return Err(Error::ShapeMismatch(format!("tensor `{name}`")));
            }
            *slot = t.clone();
        }
        Ok(())
    }

    pub fn ensure_compatible(&self, other: &ParamSet) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} tensors vs {}",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for ((na, a), (nb, b)) in self.tensors.iter().zip(&other.tensors) {
            if na != nb {
                return Err(Error::ShapeMismatch(format!("tensor `{na}` vs `{nb}`")));
            }
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor `{na}`: {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> ParamSet {
        self.map(|t| Matrix::zeros(t.rows(), t.cols()))
    }

    pub fn scaled(&self, s: f64) -> ParamSet {
        self.map(|t| t.scaled(s))
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.self_inner())
    }

    fn self_inner(&self) -> f64 {
        self.tensors
            .values()
            .map(|t| t.as_slice().iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// Concatenation of all tensors in name order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for t in self.tensors.values() {
            out.extend_from_slice(t.as_slice());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Matrix::is_finite)
    }

    fn map(&self, mut f: impl FnMut(&Matrix) -> Matrix) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), f(v)))
                .collect(),
            trainable: self.trainable.clone(),
        }
    }

    fn zip_map(&self, other: &ParamSet, mut f: impl FnMut(f64, f64) -> f64) -> Result<ParamSet> {
        self.ensure_compatible(other)?;
        let mut tensors = BTreeMap::new();
        for ((name, a), b) in self.tensors.iter().zip(other.tensors.values()) {
            let data = a
                .as_slice()
                .iter()
                .zip(b.as_slice())
                .map(|(x, y)| f(*x, *y))
                .collect();
            tensors.insert(name.clone(), Matrix::new(a.rows(), a.cols(), data)?);
        }
        Ok(ParamSet {
            tensors,
            trainable: self.trainable.clone(),
        })
    }

    pub fn sub(&self, other: &ParamSet) -> Result<ParamSet> {
        self.zip_map(other, |a, b| a - b)
    }
}

/// Frobenius inner product over all corresponding entries.
pub fn frob_inner(a: &ParamSet, b: &ParamSet) -> Result<f64> {
    a.ensure_compatible(b)?;
    let mut acc = 0.0;
    for (x, y) in a.tensors.values().zip(b.tensors.values()) {
        acc += x.frob_inner(y)?;
    }
    Ok(acc)
}

/// `a + coeff · b`, elementwise. `coeff == 0` returns `a` unchanged.
pub fn axpy(a: &ParamSet, coeff: f64, b: &ParamSet) -> Result<ParamSet> {
    if coeff == 0.0 {
        a.ensure_compatible(b)?;
        return Ok(a.clone());
    }
    a.zip_map(b, |x, y| x + coeff * y)
}

/// Projection of `target` onto the line spanned by `base`, treating each
/// set as one flattened vector: `(⟨base, target⟩ / ⟨base, base⟩) · base`.
///
/// A zero-norm base yields the zero set.
pub fn project(base: &ParamSet, target: &ParamSet) -> Result<ParamSet> {
    let bb = frob_inner(base, base)?;
    let bt = frob_inner(base, target)?;
    if bb == 0.0 {
        log::warn!("projection onto a zero-norm base; returning zero");
        return Ok(base.zeros_like());
    }
    Ok(base.scaled(bt / bb))
}

/// Per-tensor variant of [`project`]: every tensor gets its own coefficient.
pub fn project_per_tensor(base: &ParamSet, target: &ParamSet) -> Result<ParamSet> {
    base.ensure_compatible(target)?;
    let mut out = ParamSet {
        tensors: BTreeMap::new(),
        trainable: base.trainable.clone(),
    };
    for ((name, b), t) in base.tensors.iter().zip(target.tensors.values()) {
        let bb = b.frob_inner(b)?;
        let projected = if bb == 0.0 {
            log::warn!("projection onto zero-norm tensor `{name}`; returning zero");
            Matrix::zeros(b.rows(), b.cols())
        } else {
            b.scaled(b.frob_inner(t)? / bb)
        };
        out.tensors.insert(name.clone(), projected);
    }
    Ok(out)
}

/// I.i.d. standard-normal entries shaped like `shape_of`.
pub fn gaussian_like(shape_of: &ParamSet, rng: &mut SeededRng) -> ParamSet {
    shape_of.map(|t| {
        Matrix::from_fn(t.rows(), t.cols(), |_, _| StandardNormal.sample(&mut *rng))
    })
}

/// Rescales `noise` to Frobenius norm `target_norm`, preserving direction.
pub fn scale_to_norm(noise: &ParamSet, target_norm: f64) -> Result<ParamSet> {
    if !(target_norm >= 0.0) || !target_norm.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "target norm must be finite and nonnegative, got {target_norm}"
        )));
    }
    if target_norm == 0.0 {
        return Ok(noise.zeros_like());
    }
    let n = noise.norm();
    if n == 0.0 {
        return Err(Error::ZeroNorm(target_norm));
    }
    Ok(noise.scaled(target_norm / n))
}

impl core::fmt::Display for ParamSet {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let parts: Vec<String> = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let mark = if self.trainable.contains(k) { "*" } else { "" };
                format!("{k}{mark}[{}x{}]", v.rows(), v.cols())
            })
            .collect();
        f.write_str(&parts.join(" "))
    }
}

impl FromIterator<(String, Matrix)> for ParamSet {
    /// Collected tensors are all marked trainable.
    fn from_iter<I: IntoIterator<Item = (String, Matrix)>>(iter: I) -> Self {
        let mut out = ParamSet::new();
        for (k, v) in iter {
            out.insert(k.to_string(), v, true);
        }
        out
    }
}
