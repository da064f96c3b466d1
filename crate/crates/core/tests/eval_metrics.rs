//! Fréchet distance, FID over the toy extractor, alignment scoring, oracle
//! alignment, and feature proximity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tripletgen::data::*;
use tripletgen::eval::*;

fn noise_image(size: usize, rng: &mut ChaCha8Rng) -> Image {
    let mut img = Image::new(size, size);
    img.data.iter_mut().for_each(|v| *v = rng.random::<f32>());
    img
}

fn render_set(cfg: &ToyWorldConfig, n: usize, seed_base: u64) -> (Vec<Image>, Vec<String>) {
    let vocab = cfg.vocab();
    let list = cfg.triplet_list(&vocab);
    let mut images = Vec::with_capacity(n);
    let mut prompts = Vec::with_capacity(n);
    for i in 0..n {
        let t = list[i % list.len()];
        images.push(render_toy(&t, seed_base + i as u64, cfg).unwrap());
        prompts.push(triplet_caption(&t, &vocab).unwrap());
    }
    (images, prompts)
}

#[test]
fn gaussian_stats_hand_cases() {
    let stats = gaussian_stats(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
    assert_eq!(stats.mu, vec![1.0, 0.0]);
    assert_eq!(stats.sigma, vec![2.0, 0.0, 0.0, 0.0]);
    assert_eq!(stats.count, 2);

    let same = gaussian_stats(&vec![vec![3.0, -1.0]; 5]).unwrap();
    assert!(same.sigma.iter().all(|&v| v == 0.0));

    assert!(gaussian_stats(&[vec![1.0]]).is_err());
}

#[test]
fn gaussian_stats_standard_normal_monte_carlo() {
    let n = 100_000;
    let d = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let stats = gaussian_stats(&rows).unwrap();
    for i in 0..d {
        assert!(stats.mu[i].abs() < 0.02, "mu[{i}] = {}", stats.mu[i]);
        assert!((stats.sigma[i * d + i] - 1.0).abs() < 0.05);
    }
}

#[test]
fn frechet_closed_forms() {
    // identical gaussians
    let a = GaussianStats { mu: vec![0.3, -0.7], sigma: vec![1.0, 0.2, 0.2, 2.0], count: 10 };
    assert!(frechet_distance(&a, &a).unwrap() <= 1e-6);

    // 1-d: means 0 vs 2, unit variances → (0-2)² = 4
    let p = GaussianStats { mu: vec![0.0], sigma: vec![1.0], count: 10 };
    let q = GaussianStats { mu: vec![2.0], sigma: vec![1.0], count: 10 };
    assert!((frechet_distance(&p, &q).unwrap() - 4.0).abs() < 1e-9);

    // 1-d: variances 1 vs 4 → (1-2)² = 1
    let r = GaussianStats { mu: vec![0.0], sigma: vec![4.0], count: 10 };
    assert!((frechet_distance(&p, &r).unwrap() - 1.0).abs() < 1e-9);

    // symmetry
    let d1 = frechet_distance(&q, &r).unwrap();
    let d2 = frechet_distance(&r, &q).unwrap();
    assert!((d1 - d2).abs() < 1e-9);
}

/// Random orthogonal rotation applied to both feature sets leaves the
/// distance unchanged.
#[test]
fn frechet_rotation_invariance() {
    let d = 6;
    let n = 300;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut make_rows = |shift: f64| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                (0..d)
                    .map(|j| {
                        let v: f64 = StandardNormal.sample(&mut rng);
                        v * (1.0 + j as f64 * 0.3) + shift
                    })
                    .collect()
            })
            .collect()
    };
    let rows_a = make_rows(0.0);
    let rows_b = make_rows(0.5);

    // random orthogonal matrix by Gram-Schmidt on a Gaussian matrix
    let mut q = vec![vec![0.0f64; d]; d];
    for row in q.iter_mut() {
        for v in row.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
    }
    for i in 0..d {
        for j in 0..i {
            let dot: f64 = (0..d).map(|k| q[i][k] * q[j][k]).sum();
            for k in 0..d {
                q[i][k] -= dot * q[j][k];
            }
        }
        let norm: f64 = q[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        q[i].iter_mut().for_each(|v| *v /= norm);
    }
    let rotate = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| (0..d).map(|i| (0..d).map(|k| q[i][k] * r[k]).sum()).collect())
            .collect()
    };

    let base = frechet_distance(
        &gaussian_stats(&rows_a).unwrap(),
        &gaussian_stats(&rows_b).unwrap(),
    )
    .unwrap();
    let rotated = frechet_distance(
        &gaussian_stats(&rotate(&rows_a)).unwrap(),
        &gaussian_stats(&rotate(&rows_b)).unwrap(),
    )
    .unwrap();
    assert!((base - rotated).abs() < 1e-6, "{base} vs {rotated}");
}

#[test]
fn fid_identity_symmetry_and_ordering() {
    let cfg = ToyWorldConfig { image_size: 16, noise_level: 0.02, ..Default::default() };
    let extractor = ToyFeatureExtractor::new(&cfg, 16).unwrap();
    let (set_a, _) = render_set(&cfg, 200, 1_000);
    let (set_b, _) = render_set(&cfg, 200, 900_000);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise: Vec<Image> = (0..200).map(|_| noise_image(16, &mut rng)).collect();

    // identical sets
    let same = fid(&set_a, &set_a, &extractor).unwrap();
    assert!(same <= 1e-6, "fid(A,A) = {same}");

    // real-vs-real with disjoint seeds is near zero; real-vs-noise is far
    let close = fid(&set_a, &set_b, &extractor).unwrap();
    let far = fid(&set_a, &noise, &extractor).unwrap();
    assert!(close < far, "close {close} vs far {far}");
    assert!(far > 10.0 * close.max(1e-6), "gap too small: {close} vs {far}");

    // symmetry
    let ab = fid(&set_a, &set_b, &extractor).unwrap();
    let ba = fid(&set_b, &set_a, &extractor).unwrap();
    assert!((ab - ba).abs() < 1e-9);
}

/// Split-half FID of one population stays small and stable across seeds.
/// The bound is calibrated for 200+200 toy renders with the default
/// extractor; it documents the self-distance noise floor.
#[test]
fn fid_split_half_stability() {
    let cfg = ToyWorldConfig { image_size: 16, noise_level: 0.02, ..Default::default() };
    let extractor = ToyFeatureExtractor::new(&cfg, 16).unwrap();
    let mut values = Vec::new();
    for seed in [10_000u64, 20_000, 30_000] {
        let (images, _) = render_set(&cfg, 400, seed);
        let (half_a, half_b) = images.split_at(200);
        values.push(fid(half_a, half_b, &extractor).unwrap());
    }
    for v in &values {
        assert!(*v < SELF_FID_BOUND, "split-half fid {v} above bound");
    }
    let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - values.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread < SELF_FID_BOUND, "spread {spread}");
}

/// Calibrated on the default toy world (see fid_split_half_stability).
const SELF_FID_BOUND: f64 = 5.0;

#[test]
fn alignment_score_trivial_and_discriminative() {
    // identical embeddings → 100
    struct Fixed(Vec<f64>);
    impl ImageEncoder for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn encode(&self, _image: &Image) -> tripletgen::error::Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }
    struct FixedText(Vec<f64>);
    impl tripletgen::textlang::TextEncoder for FixedText {
        fn name(&self) -> &str {
            "fixed"
        }
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn embed(
            &self,
            _caption: &str,
        ) -> tripletgen::error::Result<tripletgen::textlang::TextEmbedding> {
            Ok(tripletgen::textlang::TextEmbedding {
                tokens: self.0.iter().map(|&v| v as f32).collect(),
                mask: vec![true],
                d: self.0.len(),
                source: "fixed".into(),
            })
        }
    }
    let images = vec![Image::new(8, 8); 3];
    let captions = vec!["x".to_string(); 3];
    let v = vec![0.5, -1.0, 2.0];
    let score = alignment_score(&images, &captions, &Fixed(v.clone()), &FixedText(v)).unwrap();
    assert!((score - 100.0).abs() < 1e-9);

    let score = alignment_score(
        &images,
        &captions,
        &Fixed(vec![1.0, 0.0]),
        &FixedText(vec![0.0, 1.0]),
    )
    .unwrap();
    assert!(score.abs() < 1e-9);

    // correct caption assignment beats a shuffled one on decodable renders
    let cfg = ToyWorldConfig { image_size: 16, noise_level: 0.02, ..Default::default() };
    let (images, prompts) = render_set(&cfg, 200, 40_000);
    let image_enc = OracleProbImageEncoder::new(&cfg, 16).unwrap();
    let text_enc = TripletOneHotTextEncoder::new(&cfg);
    let correct = alignment_score(&images, &prompts, &image_enc, &text_enc).unwrap();
    let mut shuffled = prompts.clone();
    shuffled.rotate_left(7);
    let wrong = alignment_score(&images, &shuffled, &image_enc, &text_enc).unwrap();
    assert!(
        correct > wrong + 5.0,
        "correct {correct:.2} vs shuffled {wrong:.2}"
    );
}

#[test]
fn alignment_score_invariant_to_rescaling_either_family() {
    struct Scaled(f64, Vec<f64>);
    impl ImageEncoder for Scaled {
        fn name(&self) -> &str {
            "scaled"
        }
        fn dim(&self) -> usize {
            self.1.len()
        }
        fn encode(&self, _image: &Image) -> tripletgen::error::Result<Vec<f64>> {
            Ok(self.1.iter().map(|v| v * self.0).collect())
        }
    }
    struct ScaledText(f64, Vec<f64>);
    impl tripletgen::textlang::TextEncoder for ScaledText {
        fn name(&self) -> &str {
            "scaled"
        }
        fn dim(&self) -> usize {
            self.1.len()
        }
        fn embed(
            &self,
            _caption: &str,
        ) -> tripletgen::error::Result<tripletgen::textlang::TextEmbedding> {
            Ok(tripletgen::textlang::TextEmbedding {
                tokens: self.1.iter().map(|&v| (v * self.0) as f32).collect(),
                mask: vec![true],
                d: self.1.len(),
                source: "scaled".into(),
            })
        }
    }
    let images = vec![Image::new(8, 8); 2];
    let captions = vec!["x".to_string(); 2];
    let iv = vec![0.4, -0.8, 1.0];
    let tv = vec![0.2, 0.3, -0.5];
    let base = alignment_score(
        &images,
        &captions,
        &Scaled(1.0, iv.clone()),
        &ScaledText(1.0, tv.clone()),
    )
    .unwrap();
    let scaled = alignment_score(
        &images,
        &captions,
        &Scaled(13.0, iv),
        &ScaledText(0.05, tv),
    )
    .unwrap();
    assert!((base - scaled).abs() < 1e-6, "{base} vs {scaled}");
}

#[test]
fn oracle_alignment_cases() {
    let cfg = ToyWorldConfig { image_size: 16, noise_level: 0.02, ..Default::default() };
    let vocab = cfg.vocab();
    let (images, prompts) = render_set(&cfg, 96, 70_000);
    let a = oracle_alignment(&images, &prompts, &cfg).unwrap();
    assert_eq!(a.triplet_acc, 1.0);
    assert_eq!(a.instrument_acc, 1.0);
    assert_eq!(a.verb_acc, 1.0);
    assert_eq!(a.target_acc, 1.0);

    // a fixed wrong render scores zero on the full triplet
    let wrong = Triplet::new(0, 0, 0, &vocab).unwrap();
    let images: Vec<Image> =
        (0..20).map(|i| render_toy(&wrong, 80_000 + i, &cfg).unwrap()).collect();
    let prompts = vec!["bipolar clip omentum".to_string(); 20];
    let a = oracle_alignment(&images, &prompts, &cfg).unwrap();
    assert_eq!(a.triplet_acc, 0.0);

    // full-triplet accuracy can never exceed any per-component accuracy
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noisy: Vec<Image> = (0..100).map(|_| noise_image(16, &mut rng)).collect();
    let list = cfg.triplet_list(&vocab);
    let prompts: Vec<String> = (0..100)
        .map(|_| {
            let t = list[rng.random_range(0..list.len())];
            triplet_caption(&t, &vocab).unwrap()
        })
        .collect();
    let a = oracle_alignment(&noisy, &prompts, &cfg).unwrap();
    assert!(a.triplet_acc <= a.instrument_acc + 1e-12);
    assert!(a.triplet_acc <= a.verb_acc + 1e-12);
    assert!(a.triplet_acc <= a.target_acc + 1e-12);

    // non-toy prompt is an input error
    let err = oracle_alignment(&noisy[..2], &vec!["retractor floss moon".to_string(); 2], &cfg)
        .unwrap_err();
    assert!(err.to_string().contains("outside toy vocabulary") || err.to_string().contains("unknown"));
}

#[test]
fn proximity_map_counts_and_separation() {
    let cfg = ToyWorldConfig { image_size: 16, noise_level: 0.02, ..Default::default() };
    let extractor = ToyFeatureExtractor::new(&cfg, 16).unwrap();
    let (real, _) = render_set(&cfg, 60, 100_000);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise: Vec<Image> = (0..60).map(|_| noise_image(16, &mut rng)).collect();

    let (points, _) = feature_proximity_map(&real, &noise, &extractor).unwrap();
    assert_eq!(points.len(), 120);

    // centroids of the two clouds are farther apart than their spreads
    let centroid = |label: &str| -> [f64; 2] {
        let pts: Vec<&ProximityPoint> = points.iter().filter(|p| p.label == label).collect();
        let n = pts.len() as f64;
        [
            pts.iter().map(|p| p.xy[0]).sum::<f64>() / n,
            pts.iter().map(|p| p.xy[1]).sum::<f64>() / n,
        ]
    };
    let spread = |label: &str, c: [f64; 2]| -> f64 {
        let pts: Vec<&ProximityPoint> = points.iter().filter(|p| p.label == label).collect();
        pts.iter()
            .map(|p| ((p.xy[0] - c[0]).powi(2) + (p.xy[1] - c[1]).powi(2)).sqrt())
            .sum::<f64>()
            / pts.len() as f64
    };
    let cr = centroid("real");
    let cg = centroid("generated");
    let dist = ((cr[0] - cg[0]).powi(2) + (cr[1] - cg[1]).powi(2)).sqrt();
    assert!(dist > spread("real", cr), "dist {dist}");

    // identical sets coincide pointwise
    let (points, _) = feature_proximity_map(&real, &real, &extractor).unwrap();
    let n = real.len();
    for i in 0..n {
        let a = points.iter().find(|p| p.label == "real" && p.index == i).unwrap();
        let b = points.iter().find(|p| p.label == "generated" && p.index == i).unwrap();
        assert!((a.xy[0] - b.xy[0]).abs() < 1e-9);
        assert!((a.xy[1] - b.xy[1]).abs() < 1e-9);
    }
}
