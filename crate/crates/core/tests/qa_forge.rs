use std::collections::{BTreeMap, HashSet};

use addrforge::eval::{self, AsdMode, Gazetteers};
use addrforge::geo_model::{AddressLabel, Level};
use addrforge::mock::{self, AnswerPools, ErrorModel};
use addrforge::qa_forge::{
    downsample, forge_dataset, merge_cities, mix_external, recount, render_question, split_locations,
    ForgeOptions, QType, QaLevel, QuestionKind, QuestionTemplateBank, SampleRecord, Split,
    SplitAssignment, OPTION_LETTERS,
};
use addrforge::synth::synthetic_index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn all_in(index: &addrforge::geo_model::CityIndex, split: Split) -> SplitAssignment {
    SplitAssignment {
        assignment: index.locations.iter().map(|l| (l.id.clone(), split)).collect(),
        fractions: [1.0, 0.0, 0.0],
        seed: 0,
    }
}

#[test]
fn choice_letters_are_uniform() {
    let bank = QuestionTemplateBank::default();
    let truth = AddressLabel { street: "Grant Street".into(), district: "Downtown".into() };
    let distractors = ["Fifth Avenue", "Penn Avenue", "Liberty Avenue", "Wood Street", "Ross Street"];
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut counts = BTreeMap::new();
    for _ in 0..10_000 {
        let t = render_question(&bank, QuestionKind::MultipleChoice(Level::Street), &truth, &distractors, &mut rng)
            .unwrap();
        let opts = t.meta.options.as_ref().unwrap();
        assert_eq!(opts.len(), 4);
        assert_eq!(opts.iter().collect::<HashSet<_>>().len(), 4);
        assert_eq!(opts.iter().filter(|o| *o == "Grant Street").count(), 1);
        let letter = t.meta.correct_option.unwrap();
        assert_eq!(opts[OPTION_LETTERS.iter().position(|l| *l == letter).unwrap()], "Grant Street");
        *counts.entry(letter).or_insert(0i64) += 1;
    }
    // 3σ of a binomial(10000, 1/4) is 130
    for l in OPTION_LETTERS {
        assert!((counts[&l] - 2500).abs() <= 130, "{l}: {}", counts[&l]);
    }
}

#[test]
fn distractors_exclude_the_truth() {
    let bank = QuestionTemplateBank::default();
    let truth = AddressLabel { street: "Grant Street".into(), district: "Downtown".into() };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bad = ["Grant St", "Penn Avenue", "Fifth Avenue", "Wood Street"];
    assert!(render_question(&bank, QuestionKind::MultipleChoice(Level::Street), &truth, &bad, &mut rng).is_err());
    let few = ["Penn Avenue", "Fifth Avenue"];
    assert!(render_question(&bank, QuestionKind::MultipleChoice(Level::Street), &truth, &few, &mut rng).is_err());
}

#[test]
fn train_profile_balances_types_and_levels() {
    let index = synthetic_index("c", 500, 4, 16, 8);
    let ds = forge_dataset(&index, &all_in(&index, Split::Train), &ForgeOptions::default()).unwrap();
    let mut qtypes = BTreeMap::new();
    let mut street = 0i64;
    let mut n = 0i64;
    for s in &ds.splits[&Split::Train] {
        let turns = &s.meta.as_ref().unwrap().turns;
        assert_eq!(turns.len(), 3);
        for t in turns {
            *qtypes.entry(t.qtype.to_string()).or_insert(0) += 1;
            street += (t.level == QaLevel::Street) as i64;
            n += 1;
        }
    }
    assert_eq!(qtypes.values().collect::<Vec<_>>(), [&2000, &2000, &2000]);
    // 3σ of binomial(6000, 1/2) ≈ 116
    assert!((street - n / 2).abs() <= 116, "{street} street of {n}");
}

#[test]
fn test_profile_layout() {
    let index = synthetic_index("c", 16, 2, 4, 4);
    let ds = forge_dataset(&index, &all_in(&index, Split::Test), &ForgeOptions::default()).unwrap();
    for s in &ds.splits[&Split::Test] {
        let turns = &s.meta.as_ref().unwrap().turns;
        let mut cells: BTreeMap<(String, String), usize> = BTreeMap::new();
        for t in turns {
            *cells.entry((t.level.to_string(), t.qtype.to_string())).or_default() += 1;
        }
        assert_eq!(turns.len(), 9);
        for level in ["district", "street"] {
            assert_eq!(cells[&(level.into(), "generation".into())], 1);
            assert_eq!(cells[&(level.into(), "judgment".into())], 2);
            assert_eq!(cells[&(level.into(), "multiple_choice".into())], 1);
        }
        assert_eq!(cells[&("combined".into(), "generation".into())], 1);
        // one yes and one no judgment per level
        for level in [QaLevel::District, QaLevel::Street] {
            let answers: HashSet<_> = turns
                .iter()
                .filter(|t| t.level == level && t.qtype == QType::Judgment)
                .map(|t| t.judgment_truth)
                .collect();
            assert_eq!(answers.len(), 2);
        }
    }
}

#[test]
fn samples_are_schema_valid_and_counts_match() {
    let index = synthetic_index("c", 60, 3, 16, 8);
    let split = split_locations(&index, [0.7, 0.2, 0.1], 5).unwrap();
    let ds = forge_dataset(&index, &split, &ForgeOptions::default()).unwrap();
    for (s, samples) in &ds.splits {
        for r in samples {
            r.validate().unwrap();
            let first = &r.conversations[0].value;
            assert!(first.starts_with("<image>\n"));
            assert_eq!(r.conversations.iter().map(|m| m.value.matches("<image>").count()).sum::<usize>(), 1);
        }
        assert_eq!(recount(samples), ds.manifest.counts[s]);
        let text = serde_json::to_string(samples).unwrap();
        let back: Vec<SampleRecord> = serde_json::from_str(&text).unwrap();
        assert_eq!(&back, samples);
    }
}

#[test]
fn split_seed_behaviour() {
    let index = synthetic_index("c", 200, 1, 16, 8);
    let mut seen = HashSet::new();
    for seed in 0..20 {
        let a = split_locations(&index, [0.7, 0.2, 0.1], seed).unwrap();
        let b = split_locations(&index, [0.7, 0.2, 0.1], seed).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.count(Split::Train), a.count(Split::Val), a.count(Split::Test)), (140, 40, 20));
        let train: Vec<&str> = a.ids(Split::Train).collect();
        assert!(seen.insert(train.join(",")), "seed {seed} repeats an earlier split");
    }
    assert!(split_locations(&index, [0.7, 0.2, 0.2], 0).is_err());
    assert!(split_locations(&index, [1.0, 0.0, 0.0], 0).is_err());
}

#[test]
fn downsampling_touches_train_only() {
    let index = synthetic_index("c", 10_586, 4, 16, 8);
    let split = split_locations(&index, [0.7, 0.2, 0.1], 2).unwrap();
    let (small, small_split) = downsample(&index, &split, 0.5, 0.5, 3).unwrap();
    assert_eq!(small_split.count(Split::Train), 3_705);
    assert_eq!(small_split.count(Split::Val), split.count(Split::Val));
    assert_eq!(small_split.count(Split::Test), split.count(Split::Test));
    for loc in &small.locations {
        let views = loc.views.len();
        match small_split.get(&loc.id) {
            Some(Split::Train) => assert_eq!(views, 2),
            _ => assert_eq!(views, 4),
        }
    }
    assert!(downsample(&index, &split, 0.0, 1.0, 3).is_err());
    assert!(downsample(&index, &split, 1.0, 1.5, 3).is_err());
}

#[test]
fn merged_cities_evaluate_like_separate_runs() {
    let opts = ForgeOptions { seed: 4, ..Default::default() };
    let cities: Vec<_> = ["pitts", "sf"]
        .iter()
        .map(|c| {
            let index = synthetic_index(c, 30, 2, 4, 4);
            forge_dataset(&index, &all_in(&index, Split::Test), &opts).unwrap()
        })
        .collect();
    let model = ErrorModel::uniform(0.3, 8);
    let mut separate = BTreeMap::new();
    for ds in &cities {
        let gt = &ds.splits[&Split::Test];
        let gaz = Gazetteers::from_samples(gt);
        let preds = mock::predict(gt, &AnswerPools::from_gazetteers(&gaz), &model).unwrap();
        let ev = eval::evaluate(gt, &preds, &gaz, AsdMode::CombinedTurn).unwrap();
        separate.insert(ds.manifest.city_ids[0].clone(), (ev.overall, preds, gaz));
    }
    let merged = merge_cities(cities).unwrap();
    let gt = &merged.splits[&Split::Test];
    let preds: Vec<_> = separate.values().flat_map(|(_, p, _)| p.clone()).collect();
    // both cities draw from the same name tables, so the union gazetteer
    // resolves answers exactly as the per-city ones did
    let gaz = Gazetteers::from_samples(gt);
    let ev = eval::evaluate(gt, &preds, &gaz, AsdMode::CombinedTurn).unwrap();
    assert_eq!(ev.per_city.len(), 2);
    for (city, (report, _, _)) in &separate {
        assert_eq!(&ev.per_city[city], report);
    }
}

#[test]
fn merge_rejects_duplicate_cities() {
    let index = synthetic_index("pitts", 16, 1, 4, 4);
    let a = forge_dataset(&index, &all_in(&index, Split::Test), &ForgeOptions::default()).unwrap();
    assert!(merge_cities(vec![a.clone(), a]).is_err());
}

#[test]
fn five_to_one_mix() {
    let index = synthetic_index("c", 100, 1, 16, 8);
    let task = forge_dataset(&index, &all_in(&index, Split::Train), &ForgeOptions::default()).unwrap();
    let task = task.splits[&Split::Train].clone();
    let ext_index = synthetic_index("ext", 40, 1, 4, 4);
    let external = forge_dataset(&ext_index, &all_in(&ext_index, Split::Train), &ForgeOptions::default()).unwrap();
    let external = external.splits[&Split::Train].clone();
    let mixed = mix_external(task.clone(), external, (5, 1), 7).unwrap();
    assert_eq!(mixed.len(), 100 + 20);
    let is_task: Vec<bool> = mixed.iter().map(|s| s.id.starts_with("c/")).collect();
    for w in is_task.chunks(6) {
        assert_eq!(w.iter().filter(|t| **t).count(), 5);
    }
    // task order is kept
    let order: Vec<&str> = mixed.iter().filter(|s| s.id.starts_with("c/")).map(|s| s.id.as_str()).collect();
    assert_eq!(order, task.iter().map(|s| s.id.as_str()).collect::<Vec<_>>());

    let mut broken = task[0].clone();
    broken.id = "ext/x".into();
    broken.conversations.pop();
    assert!(mix_external(task, vec![broken], (5, 1), 7).is_err());
}

#[test]
fn generation_is_deterministic_per_image() {
    let index = synthetic_index("c", 40, 3, 4, 4);
    let split = split_locations(&index, [0.7, 0.2, 0.1], 1).unwrap();
    let opts = ForgeOptions { seed: 9, ..Default::default() };
    let a = forge_dataset(&index, &split, &opts).unwrap();
    let b = forge_dataset(&index, &split, &opts).unwrap();
    assert_eq!(a.splits, b.splits);
    let other = forge_dataset(&index, &split, &ForgeOptions { seed: 10, ..Default::default() }).unwrap();
    assert_ne!(a.splits, other.splits);
}
