//! Tokenization, encoders, pooling, alignment, projection, and attribution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tripletgen::data::{make_toy_dataset, ToyWorldConfig};
use tripletgen::textlang::*;

fn words(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn tokenize_basic_rules() {
    let vocab = TokenVocab::from_words(words(&[
        "hook", "dissect", "liver", "clipper", "clip", "cystic", "duct",
    ]));
    let (ids, mask) = tokenize("hook dissect liver", &vocab, 8).unwrap();
    assert_eq!(mask, vec![true, true, true, false, false, false, false, false]);
    assert!(ids[..3].iter().all(|&i| i != UNK_ID));
    assert!(ids[3..].iter().all(|&i| i == UNK_ID));

    // multi-word target splits into separate word tokens
    let (ids, mask) = tokenize("clipper clip cystic duct", &vocab, 8).unwrap();
    assert_eq!(mask.iter().filter(|&&m| m).count(), 4);
    assert!(ids[..4].iter().all(|&i| i != UNK_ID));

    // out-of-vocabulary maps to UNK at its position
    let (ids, _) = tokenize("hook zzz liver", &vocab, 8).unwrap();
    assert_ne!(ids[0], UNK_ID);
    assert_eq!(ids[1], UNK_ID);
    assert_ne!(ids[2], UNK_ID);

    assert!(tokenize("   ", &vocab, 8).is_err());

    // the ". "-joined two-triplet caption stays within L_max = 8
    let (_, mask) =
        tokenize("grasper retract gallbladder. hook dissect liver", &vocab, 8).unwrap();
    assert_eq!(mask.iter().filter(|&&m| m).count(), 6);
}

#[test]
fn hash_encoder_is_deterministic_and_row_local() {
    let vocab = TokenVocab::from_words(words(&["hook", "dissect", "liver", "plate"]));
    let enc = HashEncoder::new(vocab, 16, 8, 7);
    let a = enc.embed("hook dissect liver").unwrap();
    let b = enc.embed("hook dissect liver").unwrap();
    assert_eq!(a.tokens, b.tokens);
    a.validate().unwrap();

    // a one-word change affects only that token row
    let c = enc.embed("hook dissect plate").unwrap();
    assert_eq!(a.tokens[..2 * 16], c.tokens[..2 * 16]);
    assert_ne!(a.tokens[2 * 16..3 * 16], c.tokens[2 * 16..3 * 16]);
}

#[test]
fn table_encoder_broadcasts_to_row_zero() {
    let mut table = EmbeddingTable::new(3, "export");
    table.insert("hook dissect liver", vec![0.5, -1.0, 2.0]).unwrap();
    let enc = TableEncoder { table: &table, l_max: 4 };
    let e = enc.embed("hook dissect liver").unwrap();
    assert_eq!(e.mask, vec![true, false, false, false]);
    assert_eq!(&e.tokens[..3], &[0.5f32, -1.0, 2.0]);
    assert!(e.tokens[3..].iter().all(|&v| v == 0.0));
    let err = enc.embed("unknown caption").unwrap_err();
    assert!(err.to_string().contains("unknown caption"));
}

#[test]
fn pool_rules() {
    let single = TextEmbedding {
        tokens: vec![1.0, 2.0, 0.0, 0.0],
        mask: vec![true, false],
        d: 2,
        source: "t".into(),
    };
    assert_eq!(pool(&single).unwrap(), vec![1.0, 2.0]);

    let sym = TextEmbedding {
        tokens: vec![1.0, -2.0, -1.0, 2.0],
        mask: vec![true, true],
        d: 2,
        source: "t".into(),
    };
    assert_eq!(pool(&sym).unwrap(), vec![0.0, 0.0]);

    let basis = TextEmbedding {
        tokens: vec![1.0, 0.0, 0.0, 1.0],
        mask: vec![true, true],
        d: 2,
        source: "t".into(),
    };
    assert_eq!(pool(&basis).unwrap(), vec![0.5, 0.5]);

    let empty = TextEmbedding {
        tokens: vec![0.0, 0.0],
        mask: vec![false],
        d: 2,
        source: "t".into(),
    };
    assert!(pool(&empty).is_err());
}

#[test]
fn pool_is_permutation_invariant() {
    let a = TextEmbedding {
        tokens: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        mask: vec![true, true, true],
        d: 2,
        source: "t".into(),
    };
    let b = TextEmbedding {
        tokens: vec![5.0, 6.0, 1.0, 2.0, 3.0, 4.0],
        mask: vec![true, true, true],
        d: 2,
        source: "t".into(),
    };
    assert_eq!(pool(&a).unwrap(), pool(&b).unwrap());
}

#[test]
fn alignment_self_and_orthogonal_cases() {
    let mut table = EmbeddingTable::new(3, "constructed");
    table.insert("short", vec![1.0, 0.0, 0.0]).unwrap();
    table.insert("long a", vec![1.0, 0.0, 0.0]).unwrap();
    table.insert("long b", vec![1.0, 0.0, 0.0]).unwrap();
    let enc = TableEncoder { table: &table, l_max: 2 };
    let mut probe = AlignmentProbe::new("short", vec!["long a".into(), "long b".into()]);
    let (mean, std) = compute_alignment(&mut probe, &enc).unwrap();
    assert!((mean - 1.0).abs() < 1e-12);
    assert!(std.abs() < 1e-12);
    assert_eq!(probe.per_pair_cosines.len(), 2);

    let mut table = EmbeddingTable::new(3, "constructed");
    table.insert("short", vec![1.0, 0.0, 0.0]).unwrap();
    table.insert("long a", vec![0.0, 1.0, 0.0]).unwrap();
    table.insert("long b", vec![0.0, 0.0, 1.0]).unwrap();
    let enc = TableEncoder { table: &table, l_max: 2 };
    let mut probe = AlignmentProbe::new("short", vec!["long a".into(), "long b".into()]);
    let (mean, _) = compute_alignment(&mut probe, &enc).unwrap();
    assert!(mean.abs() < 1e-12);
}

#[test]
fn alignment_invariant_to_positive_rescaling() {
    let vocab = TokenVocab::from_words(words(&["a", "b", "c", "d", "e"]));
    let enc = HashEncoder::new(vocab.clone(), 8, 8, 3);
    let mut probe = AlignmentProbe::new("a b", vec!["c d e".into(), "b c".into()]);
    let (mean1, std1) = compute_alignment(&mut probe, &enc).unwrap();

    // same encoder with every vector scaled by 37
    struct Scaled(HashEncoder);
    impl TextEncoder for Scaled {
        fn name(&self) -> &str {
            "scaled"
        }
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn embed(&self, caption: &str) -> tripletgen::error::Result<TextEmbedding> {
            let mut e = self.0.embed(caption)?;
            e.tokens.iter_mut().for_each(|v| *v *= 37.0);
            Ok(e)
        }
    }
    let mut probe2 = AlignmentProbe::new("a b", vec!["c d e".into(), "b c".into()]);
    let (mean2, std2) = compute_alignment(&mut probe2, &Scaled(enc)).unwrap();
    assert!((mean1 - mean2).abs() < 1e-6);
    assert!((std1 - std2).abs() < 1e-6);
}

#[test]
fn projection_collinear_and_centered() {
    // collinear points: all variance on axis 1
    let mut table = EmbeddingTable::new(4, "c");
    for i in 0..5 {
        let s = i as f64;
        table.insert(format!("p{i}"), vec![s, 2.0 * s, -s, 0.5 * s]).unwrap();
    }
    let proj = project_2d(&table).unwrap();
    assert!(proj.degenerate);
    for (_, xy) in &proj.points {
        assert!(xy[1].abs() < 1e-9);
    }

    // symmetric cloud: projected centroid at the origin
    let mut table = EmbeddingTable::new(3, "c");
    table.insert("a", vec![1.0, 2.0, 3.0]).unwrap();
    table.insert("b", vec![-1.0, -2.0, -3.0]).unwrap();
    table.insert("c", vec![2.0, -1.0, 0.5]).unwrap();
    table.insert("d", vec![-2.0, 1.0, -0.5]).unwrap();
    let proj = project_2d(&table).unwrap();
    let (mut cx, mut cy) = (0.0, 0.0);
    for (_, xy) in &proj.points {
        cx += xy[0];
        cy += xy[1];
    }
    assert!(cx.abs() < 1e-9 && cy.abs() < 1e-9);
}

#[test]
fn projection_recovers_planar_rectangle_distances() {
    // axis-aligned rectangle embedded in 5-d
    let mut table = EmbeddingTable::new(5, "c");
    let corners = [
        ("a", 2.0, 1.0),
        ("b", 2.0, -1.0),
        ("c", -2.0, 1.0),
        ("d", -2.0, -1.0),
    ];
    for (name, x, y) in corners {
        table.insert(name, vec![x, y, 0.0, 0.0, 0.0]).unwrap();
    }
    let proj = project_2d(&table).unwrap();
    assert!(!proj.degenerate);
    let find = |n: &str| proj.points.iter().find(|(c, _)| c == n).unwrap().1;
    for (n1, x1, y1) in corners {
        for (n2, x2, y2) in corners {
            let want = ((x1 - x2).powi(2) + (y1 - y2).powi(2)).sqrt();
            let (p, q) = (find(n1), find(n2));
            let got = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            assert!((want - got).abs() < 1e-9, "{n1}-{n2}: {want} vs {got}");
        }
    }
}

#[test]
fn projection_reconstruction_error_non_increasing() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut table = EmbeddingTable::new(6, "c");
    for i in 0..20 {
        let row: Vec<f64> = (0..6).map(|_| StandardNormal.sample(&mut rng)).collect();
        table.insert(format!("r{i:02}"), row).unwrap();
    }
    let proj = project_2d(&table).unwrap();
    // residual after 2 components = total variance - explained[0] - explained[1]
    let rows: Vec<&Vec<f64>> = table.rows.values().collect();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; 6];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v / n;
        }
    }
    let total: f64 = rows
        .iter()
        .map(|r| -> f64 {
            r.iter().zip(mean.iter()).map(|(v, m)| (v - m) * (v - m)).sum::<f64>()
        })
        .sum::<f64>()
        / n;
    let res1 = total - proj.explained[0];
    let res2 = res1 - proj.explained[1];
    assert!(res2 <= res1 + 1e-12);
    assert!(res2 >= -1e-9);
}

#[test]
fn attribution_constructed_dominance_and_priors() {
    let cfg = ToyWorldConfig { image_size: 16, ..Default::default() };
    let ds = make_toy_dataset(&cfg, 200).unwrap();
    let vocab = ds.vocab.clone();
    let list = cfg.triplet_list(&vocab);
    let captions: Vec<(String, tripletgen::data::Triplet)> = list
        .iter()
        .map(|t| (tripletgen::data::triplet_caption(t, &vocab).unwrap(), *t))
        .collect();
    let components: Vec<CaptionComponents> = captions
        .iter()
        .map(|(c, _)| parse_triplet_caption(c).unwrap())
        .collect();

    // one-hot on instrument id: instrument purity is exactly 1
    let mut table = EmbeddingTable::new(4, "onehot");
    for (caption, t) in &captions {
        let mut row = vec![0.0; 4];
        row[t.instrument as usize] = 1.0;
        table.insert(caption.clone(), row).unwrap();
    }
    let p = cluster_attribution(&table, &components, 5).unwrap();
    assert!((p.instrument - 1.0).abs() < 1e-12);
    assert!(p.verb <= p.instrument && p.target <= p.instrument);

    // i.i.d. random embeddings: each purity near its prior
    // (11/47 instrument, 15/47 verb, 11/47 target on the 4x3x4 grid)
    let mut sums = [0.0f64; 3];
    let seeds = 6;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let mut table = EmbeddingTable::new(16, "rand");
        for (caption, _) in &captions {
            let row: Vec<f64> = (0..16).map(|_| StandardNormal.sample(&mut rng)).collect();
            table.insert(caption.clone(), row).unwrap();
        }
        let p = cluster_attribution(&table, &components, 5).unwrap();
        sums[0] += p.instrument;
        sums[1] += p.verb;
        sums[2] += p.target;
    }
    let means = [sums[0] / seeds as f64, sums[1] / seeds as f64, sums[2] / seeds as f64];
    assert!((means[0] - 11.0 / 47.0).abs() < 0.05, "instrument {:.3}", means[0]);
    assert!((means[1] - 15.0 / 47.0).abs() < 0.05, "verb {:.3}", means[1]);
    assert!((means[2] - 11.0 / 47.0).abs() < 0.05, "target {:.3}", means[2]);

    // 10:1 instrument:verb signal: purity strictly ordered
    let mut table = EmbeddingTable::new(7, "mix");
    for (caption, t) in &captions {
        let mut row = vec![0.0; 7];
        row[t.instrument as usize] = 10.0;
        row[4 + t.verb as usize] = 1.0;
        table.insert(caption.clone(), row).unwrap();
    }
    let p = cluster_attribution(&table, &components, 5).unwrap();
    assert!(
        p.instrument > p.verb && p.verb > p.target,
        "ordering violated: {p:?}"
    );
}

#[test]
fn purities_lie_in_unit_interval() {
    let cfg = ToyWorldConfig { image_size: 16, ..Default::default() };
    let vocab = cfg.vocab();
    let list = cfg.triplet_list(&vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut table = EmbeddingTable::new(8, "rand");
    let mut components = Vec::new();
    for t in &list {
        let caption = tripletgen::data::triplet_caption(t, &vocab).unwrap();
        let row: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut rng)).collect();
        table.insert(caption.clone(), row).unwrap();
        components.push(parse_triplet_caption(&caption).unwrap());
    }
    for k in [1usize, 5, 20] {
        let p = cluster_attribution(&table, &components, k).unwrap();
        for v in [p.instrument, p.verb, p.target] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn separation_ranks_spread() {
    // tight cluster vs spread-out cloud after unit normalization
    let mut tight = EmbeddingTable::new(3, "tight");
    tight.insert("a", vec![1.0, 0.001, 0.0]).unwrap();
    tight.insert("b", vec![1.0, -0.001, 0.0]).unwrap();
    tight.insert("c", vec![1.0, 0.0, 0.001]).unwrap();
    let mut spread = EmbeddingTable::new(3, "spread");
    spread.insert("a", vec![1.0, 0.0, 0.0]).unwrap();
    spread.insert("b", vec![0.0, 1.0, 0.0]).unwrap();
    spread.insert("c", vec![0.0, 0.0, 1.0]).unwrap();
    assert!(separation(&spread) > separation(&tight));
}

#[test]
fn embedding_table_file_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.tsv");
    let mut table = EmbeddingTable::new(3, "t5-export");
    table.insert("hook dissect liver", vec![0.25, -1.5, 3.0]).unwrap();
    table.insert("grasper retract gallbladder", vec![1.0, 2.0, -0.125]).unwrap();
    table.save(&path).unwrap();
    let back = EmbeddingTable::load(&path).unwrap();
    assert_eq!(back, table);

    // parse error names the line
    std::fs::write(&path, "d=3\tencoder=x\nhook\t1.0 2.0\n").unwrap();
    let err = EmbeddingTable::load(&path).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");

    std::fs::write(&path, "d=3\tencoder=x\nhook\t1.0 nope 2.0\n").unwrap();
    let err = EmbeddingTable::load(&path).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
}

#[test]
fn probe_fixture_file_parses() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("probe.txt");
    std::fs::write(
        &path,
        "# probe\nhook dissect liver\nthe hook dissects the liver tissue\nliver dissection with the hook\n",
    )
    .unwrap();
    let probe = load_probe(&path).unwrap();
    assert_eq!(probe.short_caption, "hook dissect liver");
    assert_eq!(probe.long_captions.len(), 2);
}
