use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo_model::CityIndex;
use crate::seed::rng_for;

// Guards floor/ceil of products such as 0.7 * 10 against representation error.
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignment: BTreeMap<String, Split>,
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl SplitAssignment {
    pub fn get(&self, location_id: &str) -> Option<Split> {
        self.assignment.get(location_id).copied()
    }

    pub fn ids(&self, split: Split) -> impl Iterator<Item = &str> {
        self.assignment
            .iter()
            .filter(move |(_, s)| **s == split)
            .map(|(id, _)| id.as_str())
    }

    pub fn count(&self, split: Split) -> usize {
        self.assignment.values().filter(|s| **s == split).count()
    }
}

/// Location-level split: seeded shuffle, then the first `⌊f_train·n⌋` go to
/// train, the next `⌊f_val·n⌋` to val and the remainder to test.
pub fn split_locations(index: &CityIndex, fractions: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    if fractions.iter().any(|f| !(*f > 0.0)) {
        return Err(Error::invalid(format!("split fractions must be positive: {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("split fractions sum to {total}, not 1")));
    }
    let n = index.locations.len();
    if n < 3 {
        return Err(Error::invalid(format!("need at least 3 locations to split, have {n}")));
    }
    let mut ids: Vec<&str> = index.locations.iter().map(|l| l.id.as_str()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (fractions[0] * n as f64 + EPS).floor() as usize;
    let n_val = (fractions[1] * n as f64 + EPS).floor() as usize;
    let assignment = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (id.to_string(), split)
        })
        .collect();
    Ok(SplitAssignment {
        assignment,
        fractions,
        seed,
    })
}

fn check_fraction(name: &str, f: f64) -> Result<()> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::OutOfRange(format!("{name} {f} not in (0, 1]")));
    }
    Ok(())
}

/// Thins the training split: keeps `⌈location_fraction · n_train⌉` train
/// locations and, within each, `⌈view_fraction · v⌉` headings drawn without
/// replacement. Val and test locations are untouched; order is preserved.
pub fn downsample(
    index: &CityIndex,
    split: &SplitAssignment,
    view_fraction: f64,
    location_fraction: f64,
    seed: u64,
) -> Result<(CityIndex, SplitAssignment)> {
    check_fraction("view fraction", view_fraction)?;
    check_fraction("location fraction", location_fraction)?;

    let train: Vec<&str> = index
        .locations
        .iter()
        .filter(|l| split.get(&l.id) == Some(Split::Train))
        .map(|l| l.id.as_str())
        .collect();
    let keep_n = ((location_fraction * train.len() as f64) - EPS).ceil().max(0.0) as usize;
    let mut rng = rng_for(seed, &["downsample-locations"]);
    let kept: HashSet<&str> = index::sample(&mut rng, train.len(), keep_n.min(train.len()))
        .into_iter()
        .map(|i| train[i])
        .collect();

    let mut out = index.clone();
    out.locations.clear();
    let mut out_split = split.clone();
    for loc in &index.locations {
        match split.get(&loc.id) {
            Some(Split::Train) if !kept.contains(loc.id.as_str()) => {
                out_split.assignment.remove(&loc.id);
            }
            Some(Split::Train) => {
                let mut loc = loc.clone();
                let v = loc.views.len();
                let keep_v = ((view_fraction * v as f64) - EPS).ceil().max(1.0) as usize;
                let mut vr = rng_for(seed, &["downsample-views", &loc.id]);
                let mut picks = index::sample(&mut vr, v, keep_v.min(v)).into_vec();
                picks.sort_unstable();
                loc.views = picks.into_iter().map(|i| loc.views[i].clone()).collect();
                out.locations.push(loc);
            }
            _ => out.locations.push(loc.clone()),
        }
    }
    Ok((out, out_split))
}
