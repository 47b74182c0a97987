use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// At most `n` nonzeros in every contiguous block of `m` weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SparsityPattern {
    n: usize,
    m: usize,
}

impl SparsityPattern {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if n == 0 || n > m {
            return Err(Error::Config(format!(
                "invalid N:M pattern {n}:{m}; need 1 <= N <= M"
            )));
        }
        Ok(Self { n, m })
    }

    /// The all-dense `m:m` pattern.
    pub fn dense(m: usize) -> Result<Self> {
        Self::new(m, m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Fraction of weights kept, `n / m`.
    pub fn density(&self) -> f64 {
        self.n as f64 / self.m as f64
    }

    /// Fraction of weights pruned, `1 − n / m`.
    pub fn sparsity(&self) -> f64 {
        1.0 - self.density()
    }

    pub fn is_dense(&self) -> bool {
        self.n == self.m
    }

    /// Compare densities exactly (cross-multiplied).
    pub fn same_ratio(&self, other: &Self) -> bool {
        self.n * other.m == other.n * self.m
    }
}

impl fmt::Display for SparsityPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.n, self.m)
    }
}

impl FromStr for SparsityPattern {
    type Err = Error;

    /// Strict `N:M`: ASCII digits on both sides of one colon, nothing else.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("pattern must look like `N:M`, got `{s}`"));
        let (n, m) = s.split_once(':').ok_or_else(bad)?;
        let digits = |x: &str| !x.is_empty() && x.bytes().all(|b| b.is_ascii_digit());
        if !digits(n) || !digits(m) {
            return Err(bad());
        }
        Self::new(n.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?)
    }
}

impl TryFrom<String> for SparsityPattern {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SparsityPattern> for String {
    fn from(p: SparsityPattern) -> String {
        p.to_string()
    }
}
