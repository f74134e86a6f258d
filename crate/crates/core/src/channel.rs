//! I.i.d. block-fading channels quantized into a finite number of levels.
//!
//! Levels are indexed `1..=levels` so that the packet drop probability is
//! non-decreasing in the level: level 1 is the best channel state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Drop probabilities per level, best level first.
pub const CANONICAL_DROP_PROBS: [f64; 5] = [0.01, 0.05, 0.1, 0.15, 0.2];
/// Range of the per-link Rayleigh scale parameter.
pub const RAYLEIGH_SCALE_RANGE: (f64, f64) = (0.5, 2.0);

const NORMALIZATION_TOL: f64 = 1e-12;

/// How a Rayleigh gain distribution is cut into levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Quantization {
    /// Cut at the gain quantiles `k / levels`; every level has mass `1 / levels`.
    EqualQuantile,
    /// Cut at explicit ascending gain thresholds; yields `thresholds.len() + 1` levels.
    FixedThresholds { thresholds: Vec<f64> },
}

fn rayleigh_cdf(x: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        1.0 - (-x * x / (2.0 * scale * scale)).exp()
    }
}

/// Level probabilities of a Rayleigh(`scale`) gain quantized into `levels` bins,
/// ordered by ascending gain interval.
pub fn quantize_rayleigh(scale: f64, levels: usize, mode: &Quantization) -> Result<Vec<f64>> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid("Rayleigh scale must be positive"));
    }
    match mode {
        Quantization::EqualQuantile => {
            if levels < 2 {
                return Err(Error::invalid("need at least two levels"));
            }
            Ok(vec![1.0 / levels as f64; levels])
        }
        Quantization::FixedThresholds { thresholds } => {
            if thresholds.len() + 1 != levels {
                return Err(Error::invalid(format!(
                    "{} thresholds cannot produce {levels} levels",
                    thresholds.len()
                )));
            }
            if levels < 2 {
                return Err(Error::invalid("need at least two levels"));
            }
            if thresholds.windows(2).any(|w| w[1] <= w[0]) || thresholds[0] <= 0.0 {
                return Err(Error::invalid("thresholds must be positive and ascending"));
            }
            let mut cuts = Vec::with_capacity(levels + 1);
            cuts.push(0.0);
            cuts.extend(thresholds.iter().map(|&t| rayleigh_cdf(t, scale)));
            cuts.push(1.0);
            Ok(cuts.windows(2).map(|w| w[1] - w[0]).collect())
        }
    }
}

/// Drop probability tables: one list shared by every link, or one per link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropTable {
    Shared(Vec<f64>),
    /// Row-major `[n][m][level]`.
    PerLink(Vec<f64>),
}

/// Channel state matrix `H` (N x M), entries in `1..=levels`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChannelMatrix {
    num_devices: usize,
    num_channels: usize,
    levels: u8,
    entries: Vec<u8>,
}

impl ChannelMatrix {
    pub fn new(num_devices: usize, num_channels: usize, levels: usize, entries: Vec<u8>) -> Result<Self> {
        if entries.len() != num_devices * num_channels {
            return Err(Error::invalid("channel matrix has wrong number of entries"));
        }
        if levels == 0 || levels > u8::MAX as usize {
            return Err(Error::invalid("levels must be in 1..=255"));
        }
        if entries.iter().any(|&h| h == 0 || h as usize > levels) {
            return Err(Error::invalid(format!("channel levels must lie in 1..={levels}")));
        }
        Ok(Self {
            num_devices,
            num_channels,
            levels: levels as u8,
            entries,
        })
    }

    /// Matrix with every entry at level `h`.
    pub fn filled(num_devices: usize, num_channels: usize, levels: usize, h: u8) -> Result<Self> {
        Self::new(num_devices, num_channels, levels, vec![h; num_devices * num_channels])
    }

    pub fn num_devices(&self) -> usize {
        self.num_devices
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn levels(&self) -> usize {
        self.levels as usize
    }

    /// Level of the link between device `n` and channel `m` (both zero-based).
    pub fn get(&self, n: usize, m: usize) -> u8 {
        self.entries[n * self.num_channels + m]
    }

    pub fn set(&mut self, n: usize, m: usize, h: u8) -> Result<()> {
        if h == 0 || h > self.levels {
            return Err(Error::invalid(format!("level {h} out of range")));
        }
        self.entries[n * self.num_channels + m] = h;
        Ok(())
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[u8] {
        &self.entries
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    num_devices: usize,
    num_channels: usize,
    levels: usize,
    /// Row-major `[n][m][level]`.
    level_probs: Vec<f64>,
    drop: DropTable,
}

impl ChannelModel {
    pub fn new(
        num_devices: usize,
        num_channels: usize,
        levels: usize,
        level_probs: Vec<f64>,
        drop: DropTable,
    ) -> Result<Self> {
        if num_devices == 0 || num_channels == 0 {
            return Err(Error::invalid("need at least one device and one channel"));
        }
        if !(1..=u8::MAX as usize).contains(&levels) {
            return Err(Error::invalid("levels must be in 1..=255"));
        }
        let links = num_devices * num_channels;
        if level_probs.len() != links * levels {
            return Err(Error::invalid(format!(
                "level_probs has {} entries, expected {}",
                level_probs.len(),
                links * levels
            )));
        }
        for (link, q) in level_probs.chunks(levels).enumerate() {
            if q.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::invalid(format!("link {link}: probabilities outside [0, 1]")));
            }
            let total: f64 = q.iter().sum();
            if (total - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::invalid(format!("link {link}: probabilities sum to {total}")));
            }
        }
        let tables: Vec<&[f64]> = match &drop {
            DropTable::Shared(p) => {
                if p.len() != levels {
                    return Err(Error::invalid("shared drop table must have one entry per level"));
                }
                vec![p.as_slice()]
            }
            DropTable::PerLink(p) => {
                if p.len() != links * levels {
                    return Err(Error::invalid("per-link drop table has wrong size"));
                }
                p.chunks(levels).collect()
            }
        };
        for p in tables {
            if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::invalid("drop probabilities must lie in [0, 1]"));
            }
            if p.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::invalid(
                    "drop probabilities must be non-decreasing in the level index",
                ));
            }
        }
        Ok(Self {
            num_devices,
            num_channels,
            levels,
            level_probs,
            drop,
        })
    }

    /// Same level distribution on every link, shared drop table.
    pub fn uniform_links(
        num_devices: usize,
        num_channels: usize,
        level_probs: &[f64],
        drop_probs: Vec<f64>,
    ) -> Result<Self> {
        let levels = level_probs.len();
        let q = level_probs.repeat(num_devices * num_channels);
        Self::new(num_devices, num_channels, levels, q, DropTable::Shared(drop_probs))
    }

    /// Model with no monotonicity check on the drop table. Only meant for
    /// negative-control experiments on the monotonicity checkers.
    pub fn new_unchecked_drop(
        num_devices: usize,
        num_channels: usize,
        level_probs: &[f64],
        drop_probs: Vec<f64>,
    ) -> Result<Self> {
        let mut ascending = drop_probs.clone();
        ascending.sort_by(f64::total_cmp);
        let mut model = Self::uniform_links(num_devices, num_channels, level_probs, ascending)?;
        model.drop = DropTable::Shared(drop_probs);
        Ok(model)
    }

    /// Copy of this model with its drop table reversed
    /// along the level axis, skipping the monotonicity check. Only meant for
    /// negative controls.
    pub fn with_reversed_drop(&self) -> Self {
        let drop = match &self.drop {
            DropTable::Shared(p) => DropTable::Shared(p.iter().rev().copied().collect()),
            DropTable::PerLink(p) => {
                DropTable::PerLink(p.chunks(self.levels).flat_map(|c| c.iter().rev().copied()).collect())
            }
        };
        Self {
            drop,
            ..self.clone()
        }
    }

    pub fn num_devices(&self) -> usize {
        self.num_devices
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn drop_table(&self) -> &DropTable {
        &self.drop
    }

    /// `q^{(n,m)}`, the level distribution of one link.
    pub fn level_probs(&self, n: usize, m: usize) -> &[f64] {
        let start = (n * self.num_channels + m) * self.levels;
        &self.level_probs[start..start + self.levels]
    }

    /// Drop probability on link `(n, m)` (zero-based) at level `h` (one-based).
    pub fn drop_probability(&self, n: usize, m: usize, h: u8) -> Result<f64> {
        if n >= self.num_devices || m >= self.num_channels {
            return Err(Error::invalid(format!("link ({n}, {m}) out of range")));
        }
        if h == 0 || h as usize > self.levels {
            return Err(Error::invalid(format!(
                "level {h} out of range 1..={}",
                self.levels
            )));
        }
        let level = h as usize - 1;
        Ok(match &self.drop {
            DropTable::Shared(p) => p[level],
            DropTable::PerLink(p) => p[(n * self.num_channels + m) * self.levels + level],
        })
    }

    /// Draws every entry of `H` independently from its link distribution.
    pub fn sample_channel_matrix<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelMatrix {
        let entries = self
            .level_probs
            .chunks(self.levels)
            .map(|q| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (j, &p) in q.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return (j + 1) as u8;
                    }
                }
                // u landed in the round-off gap above the cumulative sum
                q.iter().rposition(|&p| p > 0.0).map_or(1, |j| j + 1) as u8
            })
            .collect();
        ChannelMatrix {
            num_devices: self.num_devices,
            num_channels: self.num_channels,
            levels: self.levels as u8,
            entries,
        }
    }

    /// `Pr(H)` under the i.i.d. product distribution.
    pub fn matrix_probability(&self, h: &ChannelMatrix) -> f64 {
        h.entries
            .iter()
            .zip(self.level_probs.chunks(self.levels))
            .map(|(&lvl, q)| q[lvl as usize - 1])
            .product()
    }
}
