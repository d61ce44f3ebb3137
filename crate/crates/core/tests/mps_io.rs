use std::path::Path;

use gridpdlp::generators::{generate, GeneratorSpec};
use gridpdlp::{parse_mps, read_mps_file, write_mps, LpProblem, SparseMatrix};
use proptest::prelude::*;

const INF: f64 = f64::INFINITY;

fn data(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

fn tiny_literal() -> LpProblem {
    let mut p = LpProblem::new(
        SparseMatrix::from_dense(&[
            vec![1.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, -1.0, 1.0],
        ]),
        vec![1.0, 2.0, -1.0],
        vec![0.0, -1.0, 0.0],
        vec![4.0, 1.0, INF],
        vec![-INF, 1.0, 7.0],
        vec![4.0, INF, 7.0],
    )
    .unwrap();
    p.name = "TINY".into();
    p.row_names = vec!["LIM1".into(), "LIM2".into(), "MYEQN".into()];
    p.col_names = vec!["X1".into(), "X2".into(), "X3".into()];
    p
}

#[test]
fn toy_file_matches_hand_written_problem() {
    let p = read_mps_file(data("tiny.mps")).unwrap();
    assert_eq!(p, tiny_literal());
}

#[test]
fn gzip_input_is_transparent() {
    let plain = read_mps_file(data("tiny.mps")).unwrap();
    let gz = read_mps_file(data("tiny.mps.gz")).unwrap();
    assert_eq!(plain, gz);
}

#[test]
fn maximize_and_ranges() {
    let text = "\
NAME RNG
OBJSENSE
    MAX
ROWS
 N obj
 E e1
 L l1
 G g1
COLUMNS
 x obj 3 e1 1
 x l1 1 g1 1
 y obj 1 e1 1
RHS
 rhs e1 2 l1 5
 rhs g1 1
RANGES
 rng e1 -3 l1 2
 rng g1 4
BOUNDS
 FR bnd y
ENDATA
";
    let p = parse_mps(text.as_bytes()).unwrap();
    assert!(p.maximize);
    assert_eq!(p.objective, vec![-3.0, -1.0]);
    // E with R < 0: [rhs + R, rhs]; L: [rhs - |R|, rhs]; G: [rhs, rhs + |R|].
    assert_eq!(p.con_lower, vec![-1.0, 3.0, 1.0]);
    assert_eq!(p.con_upper, vec![2.0, 5.0, 5.0]);
    assert_eq!(p.var_lower, vec![0.0, -INF]);
    assert_eq!(p.reported_objective(-7.0), 7.0);
}

#[test]
fn syntax_errors_carry_line_numbers() {
    let err = parse_mps(b"NAME X\nROWS\n N obj\nCOLUMNS\n x nope 1\nENDATA\n").unwrap_err();
    assert!(err.to_string().contains("line 5"), "{err}");
}

#[test]
fn toy_round_trips() {
    let p = tiny_literal();
    assert_eq!(parse_mps(write_mps(&p).as_bytes()).unwrap(), p);
}

/// Ranged rows go through `rhs ± |R|`, which can move the larger bound by an ulp.
fn same_bound(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 4.0 * f64::EPSILON * a.abs().max(b.abs())
}

#[test]
fn ranged_row_straddling_zero_round_trips() {
    let p = LpProblem::new(
        SparseMatrix::from_triplets(1, 1, &[(0, 0, 1.0)]).unwrap(),
        vec![1.0],
        vec![0.0],
        vec![1.0],
        vec![-0.7736504787346608],
        vec![0.0025064975844547033],
    )
    .unwrap();
    let back = parse_mps(write_mps(&p).as_bytes()).unwrap();
    assert!(same_bound(back.con_lower[0], p.con_lower[0]));
    assert!(same_bound(back.con_upper[0], p.con_upper[0]));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn generated_problems_round_trip(seed in 0u64..1_000, m in 1usize..15, n in 1usize..15, frac in 0.0f64..1.0) {
        let p = generate(&GeneratorSpec::UniformRandom { m, n, nnz: (m * n / 2).max(1), seed, equality_fraction: frac }).unwrap();
        let back = parse_mps(write_mps(&p).as_bytes()).unwrap();
        prop_assert_eq!(back.matrix.to_dense(), p.matrix.to_dense());
        prop_assert_eq!(&back.objective, &p.objective);
        prop_assert_eq!(&back.var_lower, &p.var_lower);
        prop_assert_eq!(&back.var_upper, &p.var_upper);
        for i in 0..m {
            let (l, u) = (p.con_lower[i], p.con_upper[i]);
            let ranged = l.is_finite() && u.is_finite() && l != u;
            if ranged {
                prop_assert!(same_bound(back.con_lower[i], l) && same_bound(back.con_upper[i], u), "row {}", i);
            } else {
                prop_assert_eq!((back.con_lower[i], back.con_upper[i]), (l, u));
            }
        }
    }
}
