//! Concept embeddings and the column-wise fusion transition.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Placeholder substituted by the concept label in a prompt template.
pub const LABEL_PLACEHOLDER: &str = "<label>";
pub const DEFAULT_PROMPT_TEMPLATE: &str = "A photo of <label>";

/// Dense row-major `rows × cols` matrix of finite values.
///
/// Serialises as `{"rows": h, "cols": w, "data": [...]}`; deserialisation
/// re-checks the invariants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEmbedding<S>", bound = "S: Scalar")]
pub struct Embedding<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
struct RawEmbedding<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> TryFrom<RawEmbedding<S>> for Embedding<S> {
    type Error = Error;

    fn try_from(raw: RawEmbedding<S>) -> Result<Self> {
        Embedding::new(raw.rows, raw.cols, raw.data)
    }
}

impl<S: Scalar> Embedding<S> {
    pub fn new(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(format!(
                "embedding dims must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "embedding {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericDomain(format!(
                "non-finite embedding entry at flat index {pos}"
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![S::zero(); rows * cols])
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> S {
        self.data[row * self.cols + col]
    }

    /// Row-major flattening, i.e. `vec(e)`.
    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn column_means(&self) -> Vec<S> {
        let n = S::from_usize(self.rows).unwrap();
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j)).sum::<S>() / n)
            .collect()
    }

    /// Converts to another scalar type, re-validating finiteness.
    pub fn cast<T: Scalar>(&self) -> Result<Embedding<T>> {
        Embedding::new(
            self.rows,
            self.cols,
            self.data.iter().map(|v| T::of(v.as_f64())).collect(),
        )
    }

    /// Short content hash used to reference embeddings in logs.
    pub fn content_ref(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.rows as u64).to_le_bytes());
        hasher.update((self.cols as u64).to_le_bytes());
        for v in &self.data {
            hasher.update(v.as_f64().to_le_bytes());
        }
        hex::encode(&hasher.finalize()[..8])
    }
}

/// Which of the two concepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Concept {
    First,
    Second,
}

/// Two labelled concepts with embeddings of identical shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ConceptPair<S> {
    label_1: String,
    label_2: String,
    prompt_template: String,
    embedding_1: Embedding<S>,
    embedding_2: Embedding<S>,
}

impl<S: Scalar> ConceptPair<S> {
    pub fn new(
        label_1: impl Into<String>,
        label_2: impl Into<String>,
        prompt_template: impl Into<String>,
        embedding_1: Embedding<S>,
        embedding_2: Embedding<S>,
    ) -> Result<Self> {
        let (label_1, label_2, prompt_template) =
            (label_1.into(), label_2.into(), prompt_template.into());
        validate_labels(&label_1, &label_2)?;
        validate_template(&prompt_template)?;
        if embedding_1.shape() != embedding_2.shape() {
            return Err(Error::InvalidPair(format!(
                "embedding shapes differ: {:?} vs {:?}",
                embedding_1.shape(),
                embedding_2.shape()
            )));
        }
        Ok(Self {
            label_1,
            label_2,
            prompt_template,
            embedding_1,
            embedding_2,
        })
    }

    pub fn label(&self, which: Concept) -> &str {
        match which {
            Concept::First => &self.label_1,
            Concept::Second => &self.label_2,
        }
    }

    pub fn prompt_template(&self) -> &str {
        &self.prompt_template
    }

    pub fn prompt(&self, which: Concept) -> String {
        fill_template(&self.prompt_template, self.label(which))
    }

    pub fn embedding(&self, which: Concept) -> &Embedding<S> {
        match which {
            Concept::First => &self.embedding_1,
            Concept::Second => &self.embedding_2,
        }
    }

    pub fn first(&self) -> &Embedding<S> {
        &self.embedding_1
    }

    pub fn second(&self) -> &Embedding<S> {
        &self.embedding_2
    }

    pub fn shape(&self) -> (usize, usize) {
        self.embedding_1.shape()
    }

    pub fn cols(&self) -> usize {
        self.embedding_1.cols
    }

    /// `"<label_1>+<label_2>"`, used as the pair id in sample files.
    pub fn pair_id(&self) -> String {
        format!("{}+{}", self.label_1, self.label_2)
    }

    /// The same pair with the concepts exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            label_1: self.label_2.clone(),
            label_2: self.label_1.clone(),
            prompt_template: self.prompt_template.clone(),
            embedding_1: self.embedding_2.clone(),
            embedding_2: self.embedding_1.clone(),
        }
    }
}

pub(crate) fn validate_labels(label_1: &str, label_2: &str) -> Result<()> {
    if label_1.trim().is_empty() || label_2.trim().is_empty() {
        return Err(Error::InvalidPair("labels must be non-empty".into()));
    }
    if label_1 == label_2 {
        return Err(Error::InvalidPair(format!("labels must differ, both are {label_1:?}")));
    }
    Ok(())
}

pub(crate) fn validate_template(template: &str) -> Result<()> {
    match template.matches(LABEL_PLACEHOLDER).count() {
        1 => Ok(()),
        n => Err(Error::InvalidInput(format!(
            "prompt template must contain exactly one {LABEL_PLACEHOLDER}, found {n}"
        ))),
    }
}

pub fn fill_template(template: &str, label: &str) -> String {
    template.replacen(LABEL_PLACEHOLDER, label, 1)
}

/// Per-column interpolation weights, each strictly inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<S>", into = "Vec<S>", bound = "S: Scalar")]
pub struct ActionVector<S> {
    coeffs: Vec<S>,
}

impl<S: Scalar> ActionVector<S> {
    pub fn new(coeffs: Vec<S>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidAction("action vector is empty".into()));
        }
        for (j, &a) in coeffs.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::NumericDomain(format!("action entry {j} is not finite")));
            }
            if a <= S::zero() || a >= S::one() {
                return Err(Error::InvalidAction(format!(
                    "action entry {j} = {a} is outside (0, 1)"
                )));
            }
        }
        Ok(Self { coeffs })
    }

    /// Every column gets weight `value`.
    pub fn uniform(cols: usize, value: S) -> Result<Self> {
        Self::new(vec![value; cols])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.coeffs
    }

    /// `1 - a`, entry-wise.
    pub fn complement(&self) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|&a| S::one() - a).collect(),
        }
    }
}

impl<S: Scalar> TryFrom<Vec<S>> for ActionVector<S> {
    type Error = Error;

    fn try_from(v: Vec<S>) -> Result<Self> {
        Self::new(v)
    }
}

impl<S> From<ActionVector<S>> for Vec<S> {
    fn from(a: ActionVector<S>) -> Vec<S> {
        a.coeffs
    }
}

/// Initial MDP state: the element-wise mean of the two concept embeddings.
pub fn initial_state<S: Scalar>(pair: &ConceptPair<S>) -> Result<Embedding<S>> {
    let (e1, e2) = (pair.first(), pair.second());
    if e1.shape() != e2.shape() {
        return Err(Error::InvalidPair("embedding shapes differ".into()));
    }
    let data = e1
        .data
        .iter()
        .zip(&e2.data)
        .map(|(&x, &y)| (x + y) / S::two())
        .collect();
    Embedding::new(e1.rows, e1.cols, data)
}

/// Column `j` of the result is `a_j * e1[:, j] + (1 - a_j) * e2[:, j]`.
///
/// Each entry is clamped to the closed interval spanned by its two sources,
/// which absorbs the final rounding step and keeps the result convex.
pub fn fuse<S: Scalar>(action: &ActionVector<S>, pair: &ConceptPair<S>) -> Result<Embedding<S>> {
    let (e1, e2) = (pair.first(), pair.second());
    if action.len() != e1.cols {
        return Err(Error::InvalidAction(format!(
            "action has {} entries, embeddings have {} columns",
            action.len(),
            e1.cols
        )));
    }
    if let Some(j) = action.coeffs.iter().position(|a| !a.is_finite()) {
        return Err(Error::NumericDomain(format!("action entry {j} is not finite")));
    }
    let w = e1.cols;
    let data = e1
        .data
        .iter()
        .zip(&e2.data)
        .enumerate()
        .map(|(idx, (&x, &y))| {
            let a = action.coeffs[idx % w];
            let v = a * x + (S::one() - a) * y;
            v.max(x.min(y)).min(x.max(y))
        })
        .collect();
    Embedding::new(e1.rows, w, data)
}
