//! Many-body configuration bases over the chain sites.
//!
//! A configuration is a bitmask: bit `i` set means site `i` is excited
//! (`|up>`). Bases are stored in ascending bitmask order so the index lookup
//! is a binary search and the vacuum is always index 0.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::ChainGeometry;

/// Largest basis dimension built unless the caller raises the cap.
pub const DEFAULT_MAX_DIM: usize = 20_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("basis dimension exceeds the cap of {cap} states")]
    TooLarge { cap: usize },
    #[error("n_max = {n_max} exceeds the number of sites {n_sites}")]
    NMaxTooLarge { n_max: usize, n_sites: usize },
    #[error("chains longer than 63 sites are not representable")]
    TooManySites(usize),
    #[error("r_cut must be non-negative, got {0}")]
    NegativeCut(f64),
}

/// Occupation bitmask of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SpinConfig(pub u64);

impl SpinConfig {
    pub const VACUUM: SpinConfig = SpinConfig(0);

    pub fn is_up(self, site: usize) -> bool {
        self.0 >> site & 1 == 1
    }

    pub fn excitations(self) -> u32 {
        self.0.count_ones()
    }

    pub fn flip(self, site: usize) -> SpinConfig {
        SpinConfig(self.0 ^ (1 << site))
    }

    /// Indices of excited sites in ascending order.
    pub fn up_sites(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let i = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(i)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum TruncationPolicy {
    Full,
    /// At most `n_max` excitations, no two closer than `r_cut`.
    Truncated {
        n_max: usize,
        r_cut: f64,
    },
}

impl TruncationPolicy {
    /// Default truncation for crystal spacing `a_r`: `n_max = ceil(L / a_R) + 2`
    /// (capped at N) and `r_cut = a_R / 2`.
    pub fn physical(geometry: &ChainGeometry, a_r: f64) -> Self {
        let n_max = ((geometry.span_l() / a_r).ceil() as usize + 2).min(geometry.n_sites());
        TruncationPolicy::Truncated {
            n_max,
            r_cut: 0.5 * a_r,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BasisSet {
    configs: Vec<SpinConfig>,
    policy: TruncationPolicy,
    positions: Vec<f64>,
}

impl BasisSet {
    pub fn dim(&self) -> usize {
        self.configs.len()
    }

    pub fn n_sites(&self) -> usize {
        self.positions.len()
    }

    pub fn configs(&self) -> &[SpinConfig] {
        &self.configs
    }

    pub fn config(&self, index: usize) -> SpinConfig {
        self.configs[index]
    }

    pub fn policy(&self) -> TruncationPolicy {
        self.policy
    }

    /// Site positions the basis was built on.
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn index_of(&self, config: SpinConfig) -> Option<usize> {
        if matches!(self.policy, TruncationPolicy::Full) {
            let idx = config.0 as usize;
            return (idx < self.configs.len()).then_some(idx);
        }
        self.configs.binary_search(&config).ok()
    }

    pub fn contains(&self, config: SpinConfig) -> bool {
        self.index_of(config).is_some()
    }

    /// Whether the basis was built on exactly these site positions.
    pub fn matches(&self, geometry: &ChainGeometry) -> bool {
        self.positions == geometry.positions()
    }
}

/// Index of the all-down configuration (always 0 under ascending order).
pub fn vacuum_index(basis: &BasisSet) -> usize {
    basis
        .index_of(SpinConfig::VACUUM)
        .expect("every truncation policy admits the vacuum")
}

pub fn build_basis(
    geometry: &ChainGeometry,
    policy: TruncationPolicy,
) -> Result<BasisSet, BasisError> {
    build_basis_capped(geometry, policy, DEFAULT_MAX_DIM)
}

pub fn build_basis_capped(
    geometry: &ChainGeometry,
    policy: TruncationPolicy,
    max_dim: usize,
) -> Result<BasisSet, BasisError> {
    let n = geometry.n_sites();
    if n > 63 {
        return Err(BasisError::TooManySites(n));
    }
    let configs = match policy {
        TruncationPolicy::Full => {
            let dim = 1u64 << n;
            if dim > max_dim as u64 {
                return Err(BasisError::TooLarge { cap: max_dim });
            }
            (0..dim).map(SpinConfig).collect()
        }
        TruncationPolicy::Truncated { n_max, r_cut } => {
            if n_max > n {
                return Err(BasisError::NMaxTooLarge { n_max, n_sites: n });
            }
            if !(r_cut >= 0.0) {
                return Err(BasisError::NegativeCut(r_cut));
            }
            let mut out = Vec::new();
            let mut search = Enumerator {
                positions: geometry.positions(),
                n_max,
                r_cut,
                max_dim,
                out: &mut out,
            };
            search.extend(0, 0, None, 0)?;
            out.sort_unstable();
            out
        }
    };
    Ok(BasisSet {
        configs,
        policy,
        positions: geometry.positions().to_vec(),
    })
}

struct Enumerator<'a> {
    positions: &'a [f64],
    n_max: usize,
    r_cut: f64,
    max_dim: usize,
    out: &'a mut Vec<SpinConfig>,
}

impl Enumerator<'_> {
    // Sites are sorted, so checking the most recent excitation suffices.
    fn extend(
        &mut self,
        mask: u64,
        count: usize,
        last: Option<usize>,
        from: usize,
    ) -> Result<(), BasisError> {
        if self.out.len() >= self.max_dim {
            return Err(BasisError::TooLarge { cap: self.max_dim });
        }
        self.out.push(SpinConfig(mask));
        if count == self.n_max {
            return Ok(());
        }
        for site in from..self.positions.len() {
            if let Some(prev) = last {
                if self.positions[site] - self.positions[prev] < self.r_cut {
                    continue;
                }
            }
            self.extend(mask | 1 << site, count + 1, Some(site), site + 1)?;
        }
        Ok(())
    }
}
