use convey_core::stats::*;
use convey_core::store::ResponseMatrix;
use convey_core::testkit::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-9;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * (1.0 + b.abs())
}

fn to_f64(m: &ResponseMatrix) -> Vec<Vec<f64>> {
    m.cells
        .iter()
        .map(|r| r.iter().map(|c| c.unwrap() as f64).collect())
        .collect()
}

fn map_cells(m: &ResponseMatrix, f: impl Fn(i64) -> i64) -> ResponseMatrix {
    let mut out = m.clone();
    for c in out.cells.iter_mut().flatten().flatten() {
        *c = f(*c);
    }
    out
}

fn transpose(m: &ResponseMatrix) -> ResponseMatrix {
    let cells = (0..m.cols()).map(|j| m.column(j)).collect();
    ResponseMatrix::new(cells, m.coding_range)
}

/// Matrix with a few cells knocked out.
fn sparse_matrix(r: &mut impl Rng, rows: usize, cols: usize) -> ResponseMatrix {
    let mut m = uniform_matrix(r, rows, cols);
    for c in m.cells.iter_mut().flatten() {
        if r.random_bool(0.15) {
            *c = None;
        }
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rank_sum_matches_enumeration(seed in any::<u64>(), na in 1usize..7, nb in 1usize..7) {
        let mut r = rng(seed);
        let (a, b) = (likert_sample(&mut r, na), likert_sample(&mut r, nb));
        let (w, p) = rank_sum_oracle(&a, &b);
        match wilcoxon_rank_sum(&a, &b) {
            Ok(t) => {
                prop_assert!(close(t.statistic, w));
                prop_assert!(close(t.p(), p), "{} vs {p}", t.p());
            }
            Err(e) => prop_assert!(a.iter().chain(&b).all(|&x| x == a[0]), "{e}"),
        }
    }

    #[test]
    fn rank_sum_is_symmetric(seed in any::<u64>(), na in 1usize..15, nb in 1usize..15) {
        let mut r = rng(seed);
        let (a, b) = (likert_sample(&mut r, na), likert_sample(&mut r, nb));
        if let (Ok(ab), Ok(ba)) = (wilcoxon_rank_sum(&a, &b), wilcoxon_rank_sum(&b, &a)) {
            prop_assert_eq!(ab.p(), ba.p());
        }
    }

    #[test]
    fn signed_rank_matches_enumeration(seed in any::<u64>(), n in 1usize..13) {
        let mut r = rng(seed);
        let (a, b) = (likert_sample(&mut r, n), likert_sample(&mut r, n));
        match wilcoxon_signed_rank(&a, &b) {
            Ok(t) => {
                let (w, p) = signed_rank_oracle(&a, &b);
                prop_assert!(close(t.statistic, w));
                prop_assert!(close(t.p(), p), "{} vs {p}", t.p());
            }
            Err(e) => prop_assert_eq!(e, StatsError::AllZeroDifferences),
        }
    }

    #[test]
    fn kendall_matches_pair_counting(seed in any::<u64>(), n in 2usize..13, ties in any::<bool>()) {
        let mut r = rng(seed);
        let (x, y) = if ties {
            (likert_sample(&mut r, n), likert_sample(&mut r, n))
        } else {
            (distinct_sample(&mut r, n), distinct_sample(&mut r, n))
        };
        let tau = kendall_tau_oracle(&x, &y);
        match kendall_tau_b(&x, &y) {
            Ok(t) => {
                prop_assert!(close(t.statistic, tau));
                if !ties && n <= KENDALL_EXACT_MAX {
                    prop_assert!(close(t.p(), kendall_exact_p_oracle(&x, &y)));
                }
            }
            Err(_) => prop_assert!(tau.is_nan()),
        }
    }

    #[test]
    fn chi_square_matches_hand_formula(seed in any::<u64>(), rows in 2usize..4, cols in 2usize..4) {
        let mut r = rng(seed);
        let table: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| r.random_range(1..12) as f64).collect()).collect();
        let t = chi_square_independence(&table).unwrap();
        prop_assert!(close(t.statistic, chi_square_oracle(&table)));
    }

    #[test]
    fn chi_square_ignores_row_and_column_order(seed in any::<u64>(), rows in 2usize..5, cols in 2usize..5) {
        let mut r = rng(seed);
        let table: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| r.random_range(1..20) as f64).collect()).collect();
        let mut shuffled = table.clone();
        shuffled.shuffle(&mut r);
        let mut order: Vec<usize> = (0..cols).collect();
        order.shuffle(&mut r);
        let shuffled: Vec<Vec<f64>> = shuffled.iter().map(|row| order.iter().map(|&j| row[j]).collect()).collect();
        let (a, b) = (chi_square_independence(&table).unwrap(), chi_square_independence(&shuffled).unwrap());
        prop_assert!(close(a.statistic, b.statistic));
        prop_assert!(close(a.p(), b.p()));
    }

    #[test]
    fn anova_matches_hand_formula(seed in any::<u64>(), k in 2usize..4) {
        let mut r = rng(seed);
        let groups: Vec<Vec<f64>> = (0..k).map(|_| { let n = r.random_range(2..5); likert_sample(&mut r, n) }).collect();
        let f = anova_f_oracle(&groups);
        let t = one_way_anova(&groups).unwrap();
        if f.is_finite() {
            prop_assert!(close(t.statistic, f));
        } else {
            prop_assert!(t.statistic.is_infinite() || t.statistic == 0.0);
        }
    }

    #[test]
    fn cronbach_matches_covariance_formula(seed in any::<u64>(), rows in 2usize..13, cols in 2usize..6) {
        let m = uniform_matrix(&mut rng(seed), rows, cols);
        let oracle = cronbach_oracle(&to_f64(&m));
        match cronbach_alpha(&m) {
            Ok(a) => prop_assert!(close(a, oracle)),
            Err(e) => prop_assert_eq!(e, StatsError::ZeroTotalVariance),
        }
    }

    #[test]
    fn cronbach_is_affine_invariant(seed in any::<u64>(), shift in -10i64..10, scale in 1i64..5) {
        let m = uniform_matrix(&mut rng(seed), 10, 4);
        if let Ok(a) = cronbach_alpha(&m) {
            let b = cronbach_alpha(&map_cells(&m, |v| v * scale + shift)).unwrap();
            prop_assert!(close(a, b));
        }
    }

    #[test]
    fn krippendorff_matches_pair_counting(seed in any::<u64>(), rows in 2usize..9, cols in 2usize..6) {
        let mut r = rng(seed);
        let m = sparse_matrix(&mut r, rows, cols);
        for metric in [Metric::Nominal, Metric::Ordinal, Metric::Interval] {
            let oracle = krippendorff_oracle(&m, metric);
            match krippendorff_alpha(&m, metric, Orientation::RespondentsAsRaters) {
                Ok(a) => prop_assert!(close(a, oracle), "{metric:?}: {a} vs {oracle}"),
                Err(_) => prop_assert!(!oracle.is_finite()),
            }
            let items = krippendorff_alpha(&transpose(&m), metric, Orientation::RespondentsAsRaters);
            prop_assert_eq!(krippendorff_alpha(&m, metric, Orientation::ItemsAsRaters).ok(), items.ok());
        }
    }

    #[test]
    fn krippendorff_interval_is_affine_invariant(seed in any::<u64>(), shift in -10i64..10, scale in 1i64..5) {
        let m = sparse_matrix(&mut rng(seed), 8, 5);
        for o in [Orientation::RespondentsAsRaters, Orientation::ItemsAsRaters] {
            if let Ok(a) = krippendorff_alpha(&m, Metric::Interval, o) {
                let b = krippendorff_alpha(&map_cells(&m, |v| v * scale + shift), Metric::Interval, o).unwrap();
                prop_assert!(close(a, b));
            }
        }
    }

    #[test]
    fn differentiation_matches_pair_counting(seed in any::<u64>(), n in 2usize..13) {
        let mut r = rng(seed);
        let row: Vec<i64> = (0..n).map(|_| r.random_range(1..=5)).collect();
        let d = differentiation_index(&row.iter().copied().map(Some).collect::<Vec<_>>()).unwrap();
        prop_assert!(close(d, differentiation_oracle(&row)));
        let mut labels: Vec<i64> = (1..=5).collect();
        labels.shuffle(&mut r);
        let relabeled: Vec<Option<i64>> = row.iter().map(|&v| Some(labels[(v - 1) as usize] * 7)).collect();
        prop_assert_eq!(differentiation_index(&relabeled).unwrap(), d);
    }

    #[test]
    fn p_values_are_probabilities(seed in any::<u64>(), n in 2usize..40) {
        let mut r = rng(seed);
        let (a, b) = (likert_sample(&mut r, n), likert_sample(&mut r, n));
        let results = [
            wilcoxon_rank_sum(&a, &b),
            wilcoxon_signed_rank(&a, &b),
            kendall_tau_b(&a, &b),
            one_way_anova(&[a.clone(), b.clone()]),
            feldt_alpha_difference(r.random_range(-1.0..0.99), n, r.random_range(-1.0..0.99), n + 1),
        ];
        for t in results.into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&t.p()), "{}: {}", t.name, t.p());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn exact_and_normal_agree_at_the_boundary(seed in any::<u64>(), split in 4usize..9) {
        let mut r = rng(seed);
        let a = distinct_sample(&mut r, RANK_SUM_EXACT_MAX);
        let (x, y) = a.split_at(split);
        let exact = wilcoxon_rank_sum_with(x, y, Method::Exact).unwrap().p();
        let normal = wilcoxon_rank_sum_with(x, y, Method::Normal).unwrap().p();
        prop_assert!((exact - normal).abs() < 0.02, "rank-sum {exact} vs {normal}");

        let a = distinct_sample(&mut r, SIGNED_RANK_EXACT_MAX);
        let b = distinct_sample(&mut r, SIGNED_RANK_EXACT_MAX);
        let exact = wilcoxon_signed_rank_with(&a, &b, Method::Exact).unwrap().p();
        let normal = wilcoxon_signed_rank_with(&a, &b, Method::Normal).unwrap().p();
        prop_assert!((exact - normal).abs() < 0.02, "signed-rank {exact} vs {normal}");

        let x = distinct_sample(&mut r, KENDALL_EXACT_MAX);
        let y = distinct_sample(&mut r, KENDALL_EXACT_MAX);
        let exact = kendall_tau_b_with(&x, &y, Method::Exact).unwrap().p();
        let normal = kendall_tau_b_with(&x, &y, Method::Normal).unwrap().p();
        prop_assert!((exact - normal).abs() < 0.02, "kendall {exact} vs {normal}");
    }
}

#[test]
fn bootstrap_is_reproducible() {
    let m1 = uniform_matrix(&mut rng(1), 30, 5);
    let m2 = uniform_matrix(&mut rng(2), 30, 5);
    let boot = Bootstrap {
        replicates: 400,
        seed: 9,
    };
    let a =
        krippendorff_alpha_difference(&m1, &m2, Metric::Interval, Orientation::ItemsAsRaters, boot)
            .unwrap();
    let b =
        krippendorff_alpha_difference(&m1, &m2, Metric::Interval, Orientation::ItemsAsRaters, boot)
            .unwrap();
    assert_eq!(a, b);
    assert!((0.0..=1.0).contains(&a.p()));
    let p =
        krippendorff_bootstrap_p(&m1, Metric::Interval, Orientation::ItemsAsRaters, boot).unwrap();
    assert!((0.0..=1.0).contains(&p.p()));
}
