//! Layer-size search space: each of `L` hidden layers picks a width from a
//! candidate set `H`, giving `|H|^L` architectures.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rng;

/// Upper bound on `|H|^L` for exhaustive enumeration.
pub const ENUMERATION_LIMIT: u128 = 100_000;

/// Hidden-layer widths of one architecture. Ordered lexicographically;
/// the text form is dash-joined, e.g. `8-16-32`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArchEncoding(Vec<usize>);

impl ArchEncoding {
    pub fn new(sizes: Vec<usize>) -> Self {
        Self(sizes)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn key(&self) -> String {
        self.to_string()
    }

    pub fn hamming(&self, other: &Self) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
            + self.0.len().abs_diff(other.0.len())
    }
}

impl fmt::Display for ArchEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

impl FromStr for ArchEncoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let sizes = s
            .trim()
            .split('-')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidParameter(format!("bad architecture key {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if sizes.contains(&0) {
            return Err(Error::InvalidParameter(format!("zero width in {s:?}")));
        }
        Ok(Self(sizes))
    }
}

impl Serialize for ArchEncoding {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ArchEncoding {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How [`SearchSpaceSpec::mutate`] picks the replacement width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MutationKind {
    /// Uniform over `H` minus the current value.
    #[default]
    Uniform,
    /// A neighbouring index in `H` (±1), uniform over the legal ones.
    Adjacent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpaceSpec {
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(rename = "H")]
    pub candidates: Vec<usize>,
}

impl SearchSpaceSpec {
    pub fn new(layers: usize, candidates: Vec<usize>) -> Result<Self> {
        let s = Self { layers, candidates };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::InvalidParameter("search space needs L ≥ 1".into()));
        }
        if self.candidates.is_empty() {
            return Err(Error::InvalidParameter("empty candidate set".into()));
        }
        if self.candidates[0] == 0 {
            return Err(Error::InvalidParameter("candidate sizes must be ≥ 1".into()));
        }
        if self.candidates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "candidate sizes must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// `|H|^L`.
    pub fn size(&self) -> u128 {
        (self.candidates.len() as u128).saturating_pow(self.layers as u32)
    }

    pub fn contains(&self, enc: &ArchEncoding) -> bool {
        enc.len() == self.layers && enc.sizes().iter().all(|s| self.candidates.contains(s))
    }

    pub fn check(&self, enc: &ArchEncoding) -> Result<()> {
        if self.contains(enc) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "architecture {enc} is not in the search space {self}"
            )))
        }
    }

    /// Uniform independent draw per layer.
    pub fn sample(&self, seed: u64) -> ArchEncoding {
        self.sample_with(&mut rng::seeded(seed))
    }

    pub fn sample_with(&self, r: &mut rng::Rng) -> ArchEncoding {
        let h = &self.candidates;
        ArchEncoding((0..self.layers).map(|_| h[r.random_range(0..h.len())]).collect())
    }

    /// Changes exactly one position.
    pub fn mutate(&self, enc: &ArchEncoding, seed: u64) -> Result<ArchEncoding> {
        self.mutate_with(enc, MutationKind::Uniform, &mut rng::seeded(seed))
    }

    pub fn mutate_with(
        &self,
        enc: &ArchEncoding,
        kind: MutationKind,
        r: &mut rng::Rng,
    ) -> Result<ArchEncoding> {
        self.check(enc)?;
        let h = &self.candidates;
        if h.len() < 2 {
            return Err(Error::NoLegalMutation);
        }
        let pos = r.random_range(0..self.layers);
        let cur = h.iter().position(|&v| v == enc.0[pos]).expect("checked membership");
        let next = match kind {
            MutationKind::Uniform => {
                // uniform over the |H| − 1 other indices
                let k = r.random_range(0..h.len() - 1);
                if k >= cur {
                    k + 1
                } else {
                    k
                }
            }
            MutationKind::Adjacent => {
                if cur == 0 {
                    1
                } else if cur == h.len() - 1 || r.random_bool(0.5) {
                    cur - 1
                } else {
                    cur + 1
                }
            }
        };
        let mut out = enc.0.clone();
        out[pos] = h[next];
        Ok(ArchEncoding(out))
    }

    /// The architecture at mixed-radix index `i` (most significant layer
    /// first), matching lexicographic order.
    pub fn nth(&self, mut i: u128) -> ArchEncoding {
        let base = self.candidates.len() as u128;
        let mut sizes = vec![0; self.layers];
        for slot in sizes.iter_mut().rev() {
            *slot = self.candidates[(i % base) as usize];
            i /= base;
        }
        ArchEncoding(sizes)
    }

    /// All architectures in lexicographic order.
    pub fn enumerate(&self) -> Result<Vec<ArchEncoding>> {
        let size = self.size();
        if size > ENUMERATION_LIMIT {
            return Err(Error::SpaceTooLarge {
                size,
                limit: ENUMERATION_LIMIT,
            });
        }
        Ok((0..size).map(|i| self.nth(i)).collect())
    }
}

impl fmt::Display for SearchSpaceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h: Vec<String> = self.candidates.iter().map(ToString::to_string).collect();
        write!(f, "{} x{}", h.join(","), self.layers)
    }
}

impl FromStr for SearchSpaceSpec {
    type Err = Error;

    /// Parses `"4,8,16,32 x3"` (also `"4,8,16,32x3"`).
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("bad search space {s:?}; expected e.g. \"4,8,16,32 x3\""));
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let (h, l) = compact.rsplit_once(['x', 'X']).ok_or_else(bad)?;
        let layers = l.parse().map_err(|_| bad())?;
        let mut candidates = h
            .split(',')
            .map(|p| p.parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        candidates.sort_unstable();
        candidates.dedup();
        Self::new(layers, candidates)
    }
}
