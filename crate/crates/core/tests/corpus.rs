use std::collections::BTreeMap;

use sun::corpus::{generate_corpus, load_corpus, make_batches, save_corpus, BatchItem, Corpus, CorpusError, Profile, Split};

fn profile(groups: usize, min: usize, max: usize, singletons: f64) -> Profile {
    Profile {
        num_schemas: 1,
        groups_per_schema: groups,
        paraphrases_min: min,
        paraphrases_max: max,
        singleton_fraction: singletons,
        ..Profile::default()
    }
}

fn group_sizes(corpus: &Corpus) -> BTreeMap<String, usize> {
    let mut sizes = BTreeMap::new();
    for e in &corpus.examples {
        *sizes.entry(e.group_id.clone()).or_insert(0) += 1;
    }
    sizes
}

#[test]
fn zero_singleton_fraction_gives_multi_member_groups() {
    let c = generate_corpus(3, &profile(40, 2, 3, 0.0)).unwrap();
    assert!(group_sizes(&c).values().all(|&n| (2..=3).contains(&n)));
}

#[test]
fn generation_is_byte_deterministic() {
    let p = Profile { num_schemas: 4, ..profile(30, 2, 4, 0.3) };
    let a = generate_corpus(7, &p).unwrap().to_json().unwrap();
    let b = generate_corpus(7, &p).unwrap().to_json().unwrap();
    assert_eq!(a, b);
    assert_ne!(a, generate_corpus(8, &p).unwrap().to_json().unwrap());
}

#[test]
fn group_histogram_matches_profile_by_recount() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    save_corpus(&generate_corpus(1, &profile(50, 2, 4, 0.3)).unwrap(), &path).unwrap();

    // Recount from the raw file, without the library's loader.
    let raw: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let mut sizes: BTreeMap<String, usize> = BTreeMap::new();
    for e in raw["examples"].as_array().unwrap() {
        *sizes.entry(e["group_id"].as_str().unwrap().to_owned()).or_insert(0) += 1;
    }
    assert_eq!(sizes.len(), 50);
    let singles = sizes.values().filter(|&&n| n == 1).count();
    assert_eq!(singles, 15);
    assert!(sizes.values().all(|&n| (1..=4).contains(&n)));
    let hist: BTreeMap<usize, usize> = sizes.values().fold(BTreeMap::new(), |mut h, &n| {
        *h.entry(n).or_insert(0) += 1;
        h
    });
    assert!(hist.keys().filter(|&&k| k >= 2).count() >= 2, "{hist:?}");
    let keys: Vec<&str> = raw.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["databases", "examples", "schemas", "version"]);
}

#[test]
fn save_load_round_trip_and_soundness() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    let p = Profile { num_schemas: 4, ..profile(25, 2, 4, 0.3) };
    let c = generate_corpus(5, &p).unwrap();
    save_corpus(&c, &path).unwrap();
    let back = load_corpus(&path).unwrap();
    assert_eq!(back, c);
    let mut canon = BTreeMap::new();
    for e in &c.examples {
        let prev = canon.entry(e.group_id.clone()).or_insert_with(|| e.gold_ast.canonicalize());
        assert_eq!(*prev, e.gold_ast.canonicalize());
    }
}

#[test]
fn load_errors_name_the_offender() {
    let c = generate_corpus(2, &profile(10, 2, 3, 0.0)).unwrap();
    let json = c.to_json().unwrap();

    let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
    v["examples"][0]["schema_id"] = "nowhere".into();
    let err = Corpus::from_json(&v.to_string()).unwrap_err();
    assert!(err.to_string().contains("nowhere"), "{err}");

    // Give one member a different query from its siblings.
    let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let group = v["examples"][1]["group_id"].as_str().unwrap().to_owned();
    let other = c.examples.iter().find(|e| e.group_id != group).unwrap().sql_text.clone();
    v["examples"][1]["sql"] = other.into();
    let err = Corpus::from_json(&v.to_string()).unwrap_err();
    assert!(matches!(err, CorpusError::Invalid { ref id, .. } if *id == group), "{err}");

    assert!(matches!(Corpus::from_json("{\"version\": 1"), Err(CorpusError::Json(_))));
    let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
    v["extra"] = 1.into();
    assert!(Corpus::from_json(&v.to_string()).is_err());
}

#[test]
fn invalid_profiles_are_rejected() {
    for p in [profile(0, 2, 3, 0.0), profile(5, 1, 3, 0.0), profile(5, 3, 2, 0.0), profile(5, 2, 3, 1.0)] {
        assert!(matches!(generate_corpus(0, &p), Err(CorpusError::Config(_))), "{p:?}");
    }
}

#[test]
fn held_out_paraphrases_keep_a_train_sibling() {
    let c = generate_corpus(4, &profile(60, 2, 4, 0.3)).unwrap();
    let mut train_members: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, e) in c.split(Split::Train) {
        *train_members.entry(&e.group_id).or_insert(0) += 1;
    }
    let held: Vec<_> = c.examples.iter().filter(|e| e.split != Split::Train).collect();
    assert!(held.iter().any(|e| e.split == Split::Dev) && held.iter().any(|e| e.split == Split::Test));
    for e in held {
        assert!(train_members.get(e.group_id.as_str()).copied().unwrap_or(0) >= 1, "{}", e.id);
    }
}

#[test]
fn batching_routes_pairs_and_singletons() {
    let all_single = generate_corpus(6, &Profile { singleton_fraction: 0.99, ..profile(20, 2, 2, 0.0) }).unwrap();
    for b in make_batches(&all_single, 4, 1).unwrap() {
        assert!(b.len() <= 4);
        assert!(b.items.iter().all(|i| matches!(i, BatchItem::Singleton { .. })));
    }

    let c = generate_corpus(6, &Profile { dev_fraction: 0.0, test_fraction: 0.0, ..profile(20, 2, 2, 0.5) }).unwrap();
    let batches = make_batches(&c, 3, 9).unwrap();
    assert_eq!(batches, make_batches(&c, 3, 9).unwrap());
    let mut seen = 0;
    for item in batches.iter().flat_map(|b| &b.items) {
        seen += 1;
        match *item {
            BatchItem::Paired { record, partner } => {
                assert_ne!(record, partner);
                assert_eq!(c.examples[record].group_id, c.examples[partner].group_id);
            }
            BatchItem::Singleton { record } => {
                let g = &c.examples[record].group_id;
                assert_eq!(c.examples.iter().filter(|e| &e.group_id == g).count(), 1);
            }
        }
    }
    assert_eq!(seen, c.examples.len());
    assert!(make_batches(&c, 0, 0).is_err());
}

#[test]
fn partners_are_uniform_within_a_group() {
    let c = generate_corpus(
        0,
        &Profile { dev_fraction: 0.0, test_fraction: 0.0, ..profile(1, 4, 4, 0.0) },
    )
    .unwrap();
    assert_eq!(c.examples.len(), 4);
    let epochs = 10_000;
    let mut counts = [[0usize; 4]; 4];
    for seed in 0..epochs {
        for item in make_batches(&c, 8, seed).unwrap().iter().flat_map(|b| &b.items) {
            let BatchItem::Paired { record, partner } = *item else { panic!("group of four") };
            counts[record][partner] += 1;
        }
    }
    let n = epochs as f64;
    let (p, sigma) = (1.0 / 3.0, (n / 3.0 * 2.0 / 3.0).sqrt());
    for (r, row) in counts.iter().enumerate() {
        assert_eq!(row[r], 0);
        for (q, &k) in row.iter().enumerate().filter(|(q, _)| *q != r) {
            assert!((k as f64 - n * p).abs() <= 3.0 * sigma, "member {r} picked {q} {k} times");
        }
    }
}
