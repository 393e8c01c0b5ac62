use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::conversation::{build_conversation, ImageRef, Pools, Profile};
use super::split::{Split, SplitAssignment};
use super::templates::QuestionTemplateBank;
use super::{sample_id, SampleRecord};
use crate::error::{Error, Result};
use crate::geo_model::CityIndex;
use crate::jsonl;
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub locations: usize,
    pub images: usize,
    pub questions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub city_ids: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub profiles: BTreeMap<Split, Profile>,
    pub counts: BTreeMap<Split, SplitCounts>,
    pub generated_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub splits: BTreeMap<Split, Vec<SampleRecord>>,
}

impl Dataset {
    pub fn total_questions(&self) -> usize {
        self.splits
            .values()
            .flatten()
            .map(SampleRecord::question_count)
            .sum()
    }

    /// Recomputes the manifest counts from the samples.
    pub fn refresh_counts(&mut self) {
        self.manifest.counts = self
            .splits
            .iter()
            .map(|(s, samples)| (*s, recount(samples)))
            .collect();
    }
}

pub fn recount(samples: &[SampleRecord]) -> SplitCounts {
    let locations: HashSet<(&str, &str)> = samples
        .iter()
        .filter_map(|s| s.meta.as_ref())
        .map(|m| (m.city.as_str(), m.location_id.as_str()))
        .collect();
    let images: HashSet<&str> = samples.iter().flat_map(|s| s.image_refs()).collect();
    SplitCounts {
        locations: locations.len(),
        images: images.len(),
        questions: samples.iter().map(SampleRecord::question_count).sum(),
    }
}

#[derive(Debug, Clone)]
pub struct ForgeOptions {
    pub seed: u64,
    pub train_profile: Profile,
    /// Profile for val and test.
    pub eval_profile: Profile,
    pub bank: QuestionTemplateBank,
}

impl Default for ForgeOptions {
    fn default() -> Self {
        ForgeOptions {
            seed: 0,
            train_profile: Profile::Train,
            eval_profile: Profile::Test,
            bank: QuestionTemplateBank::default(),
        }
    }
}

/// Builds one conversation per street-view image of every assigned location.
/// Each image draws from its own generator seeded by
/// `(seed, city, location id, heading)`, so emission order does not matter;
/// output is sorted by id.
pub fn forge_dataset(index: &CityIndex, split: &SplitAssignment, opts: &ForgeOptions) -> Result<Dataset> {
    let pools = Pools::from_index(index);
    let mut splits: BTreeMap<Split, Vec<SampleRecord>> = BTreeMap::new();
    for s in Split::ALL {
        let profile = if s == Split::Train {
            opts.train_profile
        } else {
            opts.eval_profile
        };
        let jobs: Vec<_> = index
            .locations
            .iter()
            .filter(|l| split.get(&l.id) == Some(s))
            .flat_map(|l| l.views.iter().map(move |v| (l, v)))
            .collect();
        let mut samples = jobs
            .par_iter()
            .map(|(loc, view)| {
                let tag = view.heading_tag();
                let mut rng = rng_for(opts.seed, &[&index.city_id, &loc.id, &tag]);
                let image = ImageRef {
                    id: sample_id(&index.city_id, &loc.id, &tag),
                    city: index.city_id.clone(),
                    location_id: loc.id.clone(),
                    heading: view.heading,
                    images: vec![view.path.clone()],
                };
                build_conversation(&opts.bank, image, profile, &loc.address, &pools, &mut rng)
                    .map(|c| c.to_record())
            })
            .collect::<Result<Vec<_>>>()?;
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        splits.insert(s, samples);
    }
    let mut ds = Dataset {
        manifest: DatasetManifest {
            city_ids: vec![index.city_id.clone()],
            seeds: BTreeMap::from([(index.city_id.clone(), opts.seed)]),
            profiles: BTreeMap::from([
                (Split::Train, opts.train_profile),
                (Split::Val, opts.eval_profile),
                (Split::Test, opts.eval_profile),
            ]),
            counts: BTreeMap::new(),
            generated_at: chrono::Utc::now().to_rfc3339(),
            config_hash: None,
            config: serde_json::Value::Null,
        },
        splits,
    };
    ds.refresh_counts();
    Ok(ds)
}

/// Writes `{split}.jsonl` for each split plus `manifest.json`.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (split, samples) in &ds.splits {
        jsonl::write(&dir.join(format!("{split}.jsonl")), samples)?;
    }
    jsonl::write_json(&dir.join("manifest.json"), &ds.manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = jsonl::read_json(&dir.join("manifest.json"))?;
    let mut splits = BTreeMap::new();
    for s in Split::ALL {
        let path = dir.join(format!("{s}.jsonl"));
        if path.exists() {
            splits.insert(s, jsonl::read(&path)?);
        }
    }
    Ok(Dataset { manifest, splits })
}

/// Concatenates datasets of distinct cities. Sample ids already carry the
/// city prefix; any collision is an error.
pub fn merge_cities(datasets: Vec<Dataset>) -> Result<Dataset> {
    let mut iter = datasets.into_iter();
    let mut merged = iter
        .next()
        .ok_or_else(|| Error::invalid("merge needs at least one dataset"))?;
    let mut cities: BTreeSet<String> = merged.manifest.city_ids.iter().cloned().collect();
    let mut ids: HashSet<String> = merged
        .splits
        .values()
        .flatten()
        .map(|s| s.id.clone())
        .collect();
    for ds in iter {
        for c in &ds.manifest.city_ids {
            if !cities.insert(c.clone()) {
                return Err(Error::invalid(format!("city {c:?} appears in more than one dataset")));
            }
        }
        merged.manifest.city_ids.extend(ds.manifest.city_ids);
        merged.manifest.seeds.extend(ds.manifest.seeds);
        for (split, samples) in ds.splits {
            for s in &samples {
                if !ids.insert(s.id.clone()) {
                    return Err(Error::invalid(format!("sample id collision: {}", s.id)));
                }
            }
            merged.splits.entry(split).or_default().extend(samples);
        }
    }
    merged.refresh_counts();
    merged.manifest.generated_at = chrono::Utc::now().to_rfc3339();
    Ok(merged)
}

/// Parses `"a:b"`.
pub fn parse_ratio(text: &str) -> Result<(usize, usize)> {
    let err = || Error::invalid(format!("ratio {text:?} is not of the form a:b"));
    let (a, b) = text.split_once(':').ok_or_else(err)?;
    let a: usize = a.trim().parse().map_err(|_| err())?;
    let b: usize = b.trim().parse().map_err(|_| err())?;
    if a == 0 || b == 0 {
        return Err(Error::invalid(format!("ratio {text:?} needs positive parts")));
    }
    Ok((a, b))
}

/// Interleaves task and external samples at `task:external = a:b`.
///
/// `⌊n_task · b / a⌋` external samples (or all of them, if fewer) are drawn
/// by seed. A seeded slot pattern of length `a + b` is repeated, so every
/// run of `a + b` consecutive samples within the full windows holds exactly
/// `a` task samples; leftovers follow the last full window.
pub fn mix_external(
    task: Vec<SampleRecord>,
    mut external: Vec<SampleRecord>,
    ratio: (usize, usize),
    seed: u64,
) -> Result<Vec<SampleRecord>> {
    let (a, b) = ratio;
    if a == 0 || b == 0 {
        return Err(Error::invalid("mix ratio parts must be positive"));
    }
    for (i, s) in external.iter().enumerate() {
        s.validate().map_err(|e| {
            let id = if s.id.is_empty() {
                format!("#{}", i + 1)
            } else {
                s.id.clone()
            };
            Error::invalid(format!("external sample {id}: {e}"))
        })?;
    }
    let task_ids: HashSet<&str> = task.iter().map(|s| s.id.as_str()).collect();
    if let Some(dup) = external.iter().find(|s| task_ids.contains(s.id.as_str())) {
        return Err(Error::invalid(format!("external sample id {} collides with a task sample", dup.id)));
    }

    let mut rng = rng_for(seed, &["mix-external"]);
    let want = (task.len() * b / a).min(external.len());
    external.shuffle(&mut rng);
    external.truncate(want);

    let mut pattern: Vec<bool> = std::iter::repeat_n(true, a)
        .chain(std::iter::repeat_n(false, b))
        .collect();
    pattern.shuffle(&mut rng);

    let mut out = Vec::with_capacity(task.len() + external.len());
    let mut t = task.into_iter().peekable();
    let mut e = external.into_iter().peekable();
    let full = (t.len() / a).min(e.len() / b);
    for _ in 0..full {
        for &is_task in &pattern {
            out.push(if is_task { t.next() } else { e.next() }.expect("window counts checked"));
        }
    }
    // partial tail: keep the pattern order while both sides last
    'tail: loop {
        for &is_task in &pattern {
            let next = if is_task { t.next() } else { e.next() };
            match next {
                Some(s) => out.push(s),
                None => break 'tail,
            }
        }
    }
    out.extend(t);
    out.extend(e);
    Ok(out)
}

/// Fine-tuning hyper-parameters of the reference setup, emitted as a
/// documentation artifact next to the data.
pub fn training_config() -> serde_json::Value {
    serde_json::json!({
        "batch_size": "4x8",
        "gradient_accumulation": 16,
        "learning_rate": 1e-5,
        "weight_decay": 0.0,
        "betas": [0.9, 0.999],
        "warmup_ratio": 0.03,
        "lora_rank": 128,
        "lora_dropout": 0.05,
        "image_size": 336,
        "patch_size": 14,
        "model_max_length": 2048 - (336 / 14) * (336 / 14),
        "stages": ["alignment", "localization"],
    })
}
