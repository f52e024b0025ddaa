mod common;

use std::f64::consts::{PI, TAU};

use invariant_inr::evaluation::*;
use invariant_inr::geometry::{rotate_image, DiscreteImage, GridSpec, Pose};
use invariant_inr::losses::AugmentationSpec;
use invariant_inr::models::{LatentCode, Model};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

fn sse_of_groups(points: &[Vec<f64>], groups: &[Vec<usize>]) -> f64 {
    groups
        .iter()
        .map(|g| {
            let dim = points[0].len();
            let mut c = vec![0.0; dim];
            for &i in g {
                for (a, b) in c.iter_mut().zip(&points[i]) {
                    *a += b / g.len() as f64;
                }
            }
            g.iter()
                .map(|&i| points[i].iter().zip(&c).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
                .sum::<f64>()
        })
        .sum()
}

/// Canonical form of a partition: groups sorted by smallest member.
fn partition(assign: &[usize]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut ids: Vec<usize> = Vec::new();
    for (i, &a) in assign.iter().enumerate() {
        match ids.iter().position(|&x| x == a) {
            Some(g) => groups[g].push(i),
            None => {
                ids.push(a);
                groups.push(vec![i]);
            }
        }
    }
    groups
}

#[test]
fn kmeans_two_way_split_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..5 {
        let mut points = random_points(&mut rng, 12, 2);
        // Two loose groups so the optimum is well separated from local minima.
        for p in points.iter_mut().take(6) {
            p[0] += 3.0;
        }
        let n = points.len();
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << (n - 1)) {
            let a: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
            let b: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 0).collect();
            best = best.min(sse_of_groups(&points, &[a, b]));
        }
        let assign = kmeans(&points, 2, trial).unwrap();
        let got = within_sse(&points, &assign, 2);
        assert!((got - best).abs() < 1e-9 * best.max(1.0), "trial {trial}: {got} vs {best}");
    }
}

#[test]
fn kmeans_never_beats_the_exhaustive_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let points = random_points(&mut rng, 10, 3);
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << 9) {
        let a: Vec<usize> = (0..10).filter(|&i| mask >> i & 1 == 1).collect();
        let b: Vec<usize> = (0..10).filter(|&i| mask >> i & 1 == 0).collect();
        best = best.min(sse_of_groups(&points, &[a, b]));
    }
    let assign = kmeans(&points, 2, 0).unwrap();
    assert!(within_sse(&points, &assign, 2) >= best - 1e-12);
}

/// Greedy Ward linkage that re-evaluates the SSE increase of every merge
/// from scratch.
fn naive_ward(points: &[Vec<f64>], k: usize) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    while groups.len() > k {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..groups.len() {
            for b in a + 1..groups.len() {
                let mut u = groups[a].clone();
                u.extend(&groups[b]);
                let cost = sse_of_groups(points, &[u])
                    - sse_of_groups(points, &[groups[a].clone()])
                    - sse_of_groups(points, &[groups[b].clone()]);
                if cost < best.0 {
                    best = (cost, a, b);
                }
            }
        }
        let merged = groups.remove(best.2);
        groups[best.1].extend(merged);
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.sort();
    groups
}

#[test]
fn ward_matches_naive_linkage() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for k in 1..=4 {
        let points = random_points(&mut rng, 9, 3);
        let got = agglomerative(&points, k).unwrap();
        let mut got = partition(&got);
        got.sort();
        assert_eq!(got, naive_ward(&points, k), "k = {k}");
    }
}

#[test]
fn cluster_ids_are_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let points = random_points(&mut rng, 20, 2);
    for assign in [agglomerative(&points, 4).unwrap(), kmeans(&points, 4, 1).unwrap()] {
        let mut ids = assign.clone();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids, vec![0, 1, 2, 3]);
    }
}

#[test]
fn too_many_clusters_is_an_error() {
    let points = vec![vec![0.0], vec![1.0]];
    assert!(matches!(agglomerative(&points, 3), Err(EvalError::ClusterCount { k: 3, n: 2 })));
    assert!(kmeans(&points, 0, 0).is_err());
}

fn permutations3() -> Vec<[usize; 3]> {
    vec![[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]]
}

#[test]
fn hungarian_matches_best_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..20 {
        let labels: Vec<u32> = (0..30).map(|_| rng.gen_range(0..3)).collect();
        let assign: Vec<usize> = (0..30).map(|_| rng.gen_range(0..3)).collect();
        let best = permutations3()
            .iter()
            .map(|perm| assign.iter().zip(&labels).filter(|(&a, &l)| perm[a] == l as usize).count())
            .max()
            .unwrap();
        let res = hungarian_accuracy(&assign, &labels).unwrap();
        assert!((res.accuracy - best as f64 / 30.0).abs() < 1e-12);
        let total: usize = res.confusion.iter().flatten().sum();
        assert_eq!(total, 30);
    }
}

#[test]
fn hungarian_perfect_clustering_scores_one() {
    let labels = vec![2, 2, 0, 1, 1, 0];
    let assign = vec![0, 0, 1, 2, 2, 1];
    assert_eq!(hungarian_accuracy(&assign, &labels).unwrap().accuracy, 1.0);
    assert!(hungarian_accuracy(&assign[..3], &labels).is_err());
}

#[test]
fn pearson_degenerate_and_exact_cases() {
    let x = [1.0, 2.0, 3.0, 4.0];
    assert!((pearson(&x, &[2.0, 4.0, 6.0, 8.0]).r - 1.0).abs() < 1e-12);
    assert!((pearson(&x, &[-1.0, -2.0, -3.0, -4.0]).r + 1.0).abs() < 1e-12);
    let c = pearson(&x, &[5.0; 4]);
    assert!(c.degenerate);
    assert_eq!(c.r, 0.0);
}

#[test]
fn align_branch_picks_nearest_representative() {
    assert!((align_branch(-0.1, 6.2) - (TAU - 0.1)).abs() < 1e-12);
    assert!((align_branch(0.1, 0.05) - 0.1).abs() < 1e-12);
}

/// An off-centre bright dot on a dark field.
fn dot_image(side: usize, angle: f64) -> DiscreteImage {
    let grid = GridSpec::new(side);
    let (cx, cy) = (0.45 * angle.cos(), 0.45 * angle.sin());
    let px = (0..grid.len())
        .map(|p| {
            let [x, y] = grid.point(p);
            (-((x - cx).powi(2) + (y - cy).powi(2)) / 0.02).exp()
        })
        .collect();
    DiscreteImage::new(1, side, px).unwrap()
}

/// Reads the orientation of the dot from its centre of mass.
struct ComPredictor;

impl PosePredictor for ComPredictor {
    fn predict(&self, images: &[&DiscreteImage]) -> Result<Vec<LatentCode>, EvalError> {
        Ok(images
            .iter()
            .map(|img| {
                let grid = GridSpec::new(img.side());
                let (mut mx, mut my, mut m) = (0.0, 0.0, 0.0);
                for (p, &v) in img.pixels().iter().enumerate() {
                    let [x, y] = grid.point(p);
                    mx += v * x;
                    my += v * y;
                    m += v;
                }
                LatentCode {
                    z: vec![0.0],
                    theta_hat: -(my / m).atan2(mx / m),
                    tau_hat: [mx / m, my / m],
                }
            })
            .collect())
    }
}

struct ConstantPredictor;

impl PosePredictor for ConstantPredictor {
    fn predict(&self, images: &[&DiscreteImage]) -> Result<Vec<LatentCode>, EvalError> {
        Ok(images
            .iter()
            .map(|_| LatentCode {
                z: vec![1.0],
                theta_hat: 0.3,
                tau_hat: [0.1, 0.1],
            })
            .collect())
    }
}

#[test]
fn perfect_predictor_gives_unit_correlation() {
    let imgs: Vec<DiscreteImage> = (0..4).map(|i| dot_image(32, i as f64)).collect();
    let refs: Vec<&DiscreteImage> = imgs.iter().collect();
    let rep = rotation_probe(&ComPredictor, &refs, None, 200, 1).unwrap();
    assert!(rep.rotation.r > 0.999, "{:?}", rep.rotation);
    let worst = rep.residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    // Nearest-neighbour resampling of a narrow dot shifts its centre of mass slightly.
    assert!(worst < 0.1, "{worst}");
    assert_eq!(rep.histogram.counts.iter().sum::<usize>(), 200);
    assert!(rep.translation.is_none());
}

#[test]
fn constant_predictor_has_degenerate_translation() {
    let imgs: Vec<DiscreteImage> = (0..4).map(|i| dot_image(16, i as f64)).collect();
    let refs: Vec<&DiscreteImage> = imgs.iter().collect();
    let poses: Vec<Pose> = (0..4).map(|i| Pose::new(0.0, [0.1 * i as f64, -0.1 * i as f64])).collect();
    let rep = rotation_probe(&ConstantPredictor, &refs, Some(&poses), 50, 2).unwrap();
    let [tx, ty] = rep.translation.unwrap();
    assert!(tx.degenerate && ty.degenerate);
    assert!(rotation_probe(&ConstantPredictor, &refs, Some(&poses[..2]), 5, 2).is_err());
}

#[test]
fn untrained_invariance_stats_are_bounded() {
    let model = Model::new(common::tiny_config(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let imgs: Vec<DiscreteImage> = (0..3).map(|_| common::blob_image(&mut rng, 8)).collect();
    let refs: Vec<&DiscreteImage> = imgs.iter().collect();
    let rep = invariance_probe(&model, &refs, 4, &AugmentationSpec::default(), 9).unwrap();
    assert_eq!(rep.per_image.len(), 3);
    for s in &rep.per_image {
        assert!((-1.0..=1.0 + 1e-12).contains(&s.median_cos));
        assert!(s.min_cos <= s.median_cos);
        assert!(s.canonical_mse >= 0.0);
    }
    assert!(rep.min_cos <= rep.median_cos);
    assert!(invariance_probe(&model, &refs, 1, &AugmentationSpec::default(), 9).is_err());
}

#[test]
fn uniform_image_codes_agree_under_quarter_turns() {
    let model = Model::new(common::tiny_config(), 5).unwrap();
    let img = DiscreteImage::new(1, 8, vec![0.5; 64]).unwrap();
    let rotated: Vec<DiscreteImage> = (0..4).map(|k| rotate_image(PI / 2.0 * k as f64, &img)).collect();
    let refs: Vec<&DiscreteImage> = rotated.iter().collect();
    let codes = model.encode_batch(&refs).unwrap();
    for c in &codes[1..] {
        for (a, b) in c.z.iter().zip(&codes[0].z) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn pairwise_mse_of_identical_renders_is_zero() {
    let img = DiscreteImage::new(1, 4, vec![0.25; 16]).unwrap();
    assert_eq!(pairwise_mse(&[img.clone(), img.clone(), img]), (0.0, 0.0));
}

#[test]
fn report_tables_have_headers() {
    let res = hungarian_accuracy(&[0, 1, 1], &[0, 1, 1]).unwrap();
    let csv = confusion_csv(&res);
    assert!(csv.starts_with("class,cluster_0,cluster_1\n"));
    assert_eq!(csv.lines().count(), 3);
    let rows = vec![SweepRow {
        latent_dim: 8,
        accuracy: 0.5,
        std: 0.1,
        runs: vec![0.4, 0.6],
    }];
    assert_eq!(sweep_csv(&rows), "latent_dim,accuracy,std\n8,0.5,0.1\n");
    let codes = vec![LatentCode {
        z: vec![1.0, 2.0],
        theta_hat: 0.0,
        tau_hat: [0.0, 0.0],
    }];
    assert!(embeddings_csv(&[3], &[1], &codes).starts_with("index,label,z_0,z_1,theta_hat,tau_x,tau_y\n3,1,"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn accuracy_ignores_cluster_relabeling(
        seed in 0u64..1000,
        perm in Just(permutations3()).prop_shuffle(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<u32> = (0..25).map(|_| rng.gen_range(0..3)).collect();
        let assign: Vec<usize> = (0..25).map(|_| rng.gen_range(0..3)).collect();
        let p = perm[0];
        let relabeled: Vec<usize> = assign.iter().map(|&a| p[a]).collect();
        let a = hungarian_accuracy(&assign, &labels).unwrap().accuracy;
        let b = hungarian_accuracy(&relabeled, &labels).unwrap().accuracy;
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((1.0 / 3.0 - 1e-12..=1.0).contains(&a));
    }

    #[test]
    fn lloyd_sse_never_increases(seed in 0u64..1000, k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = random_points(&mut rng, 30, 2);
        let (assign, trace) = lloyd(&points, k, &mut rng).unwrap();
        for w in trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
        }
        prop_assert!((trace.last().unwrap() - within_sse(&points, &assign, k)).abs() < 1e-9);
    }

    #[test]
    fn pearson_of_affine_map_is_signed_one(
        xs in prop::collection::vec(-10.0f64..10.0, 3..20),
        a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
        b in -3.0f64..3.0,
    ) {
        let spread = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - xs.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3);
        let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let c = pearson(&xs, &ys);
        prop_assert!(!c.degenerate);
        prop_assert!((c.r - a.signum()).abs() < 1e-9);
    }

    #[test]
    fn aligned_residuals_stay_within_half_turn(seed in 0u64..200) {
        let model = Model::new(common::tiny_config(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let imgs: Vec<DiscreteImage> = (0..3).map(|_| common::blob_image(&mut rng, 8)).collect();
        let refs: Vec<&DiscreteImage> = imgs.iter().collect();
        let rep = rotation_probe(&model, &refs, None, 20, seed).unwrap();
        for r in &rep.residuals {
            prop_assert!(r.abs() <= PI + 1e-12);
        }
    }
}
