use proptest::prelude::*;
use tetamr::amr::{marked_tets, SizingField};
use tetamr::delaunay::delaunay_from_points;
use tetamr::geom::{insphere_positive, p3, rotation, Point3, Sign};
use tetamr::indicators::{face_weight, ranking_ratio, C};
use tetamr::io::{read_mesh, write_mesh};
use tetamr::mesh::{validate, TetMesh};
use tetamr::sliver::{detect_slivers, remove_slivers, RemovalParams, THETA_HIGH, THETA_LOW};
use tetamr::smooth::{potential_w, M3};

fn cloud(max: usize) -> impl Strategy<Value = Vec<Point3>> {
    // A fixed non-degenerate tet plus random points, so the hull is 3D.
    proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64), 1..max).prop_map(|v| {
        let mut pts = vec![p3(0.0, 0.0, 0.0), p3(1.0, 0.0, 0.0), p3(0.0, 1.0, 0.0), p3(0.0, 0.0, 1.0)];
        pts.extend(v.into_iter().map(|(x, y, z)| p3(x, y, z)));
        pts
    })
}

fn total_volume(m: &TetMesh) -> f64 {
    m.tet_ids().iter().map(|&t| m.volume(t)).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn delaunay_is_valid_and_empty(pts in cloud(60)) {
        let m = delaunay_from_points(&pts).unwrap();
        prop_assert!(validate(&m).is_valid());
        for t in m.tet_ids() {
            let [a, b, c, d] = m.tet_points(t);
            for (i, &p) in pts.iter().enumerate() {
                if m.tet(t).v.contains(&(i as u32)) {
                    continue;
                }
                prop_assert!(insphere_positive(a, b, c, d, p) != Sign::Positive);
            }
        }
    }

    #[test]
    fn delaunay_ignores_insertion_order(pts in cloud(40), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = pts.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = delaunay_from_points(&pts).unwrap();
        let b = delaunay_from_points(&shuffled).unwrap();
        // Random points are in general position, so the triangulation is unique.
        prop_assert_eq!(a.num_tets(), b.num_tets());
        prop_assert!((total_volume(&a) - total_volume(&b)).abs() < 1e-12);
    }

    #[test]
    fn mesh_files_round_trip(pts in cloud(30)) {
        let m = delaunay_from_points(&pts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("m");
        write_mesh(&m, &base).unwrap();
        let r = read_mesh(&base).unwrap();
        prop_assert_eq!(r.vertices(), m.vertices());
        prop_assert_eq!(r.num_tets(), m.num_tets());
        prop_assert_eq!(r.facets().count(), m.facets().count());
        prop_assert!(validate(&r).is_valid());
    }

    #[test]
    fn sliver_removal_keeps_the_domain(pts in cloud(50)) {
        let mut m = delaunay_from_points(&pts).unwrap();
        let before = total_volume(&m);
        let g = detect_slivers(&m, THETA_LOW, THETA_HIGH);
        remove_slivers(&mut m, &g, &RemovalParams::default());
        prop_assert!(validate(&m).is_valid());
        prop_assert!((total_volume(&m) - before).abs() < 1e-12 * before.max(1.0));
    }

    #[test]
    fn potential_is_rotation_invariant(axis in (-1.0..1.0f64, -1.0..1.0f64, 0.1..1.0f64), angle in -3.0..3.0f64, s in 0.2..3.0f64, theta in 0.0..1.0f64) {
        let r = rotation(p3(axis.0, axis.1, axis.2), angle);
        let rs: M3 = r.map(|row| row.map(|x| x * s));
        let sc: M3 = [[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, s]];
        let (a, b) = (potential_w(&rs, theta, None), potential_w(&sc, theta, None));
        prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        prop_assert!(b >= 1.0 - 1e-12);
    }

    #[test]
    fn ranking_ratio_bounds(v in proptest::collection::vec(-1e3..1e3f64, 1..200), q in 0.0..1.0f64) {
        let w: Vec<f64> = v.iter().rev().copied().collect();
        let r = ranking_ratio(&v, &w, &[q]).unwrap()[0];
        prop_assert!((0.0..=100.0).contains(&r));
        prop_assert_eq!(ranking_ratio(&v, &v, &[q]).unwrap()[0], 100.0);
    }

    #[test]
    fn face_weights_partition(ar in -5.0..5.0f64, ai in -5.0..5.0f64, br in -5.0..5.0f64, bi in -5.0..5.0f64) {
        let (a, b) = (C::new(ar, ai), C::new(br, bi));
        let (wa, wb) = (face_weight(a, b), face_weight(b, a));
        prop_assert!((0.0..=1.0).contains(&wa));
        let raw = (a / (a + b)).re;
        if (0.0..=1.0).contains(&raw) && (a + b).norm() > 1e-9 {
            prop_assert!((wa + wb - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn marking_takes_the_top_fraction(pts in cloud(40), gamma in 0.0..1.0f64, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let m = delaunay_from_points(&pts).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let ind: Vec<f64> = (0..m.num_tets()).map(|_| rng.gen()).collect();
        let marked = marked_tets(&m, &ind, gamma).unwrap();
        prop_assert_eq!(marked.len(), (gamma * m.num_tets() as f64).ceil() as usize);
        let ids = m.tet_ids();
        let lowest_marked = marked
            .iter()
            .map(|t| ind[ids.iter().position(|x| x == t).unwrap()])
            .fold(f64::INFINITY, f64::min);
        let unmarked_max = ids
            .iter()
            .zip(&ind)
            .filter(|(t, _)| !marked.contains(t))
            .map(|(_, &x)| x)
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lowest_marked >= unmarked_max);
    }

    #[test]
    fn grading_meets_the_lipschitz_bound(pts in cloud(40), g in 0.2..3.0f64, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let m = delaunay_from_points(&pts).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut sf = SizingField { values: (0..m.num_vertices()).map(|_| rng.gen_range(0.01..1.0)).collect() };
        let before = sf.values.clone();
        sf.grade(&m, g);
        prop_assert!(sf.gradation_excess(&m, g) <= 1e-12);
        // Grading only lowers values.
        prop_assert!(sf.values.iter().zip(&before).all(|(a, b)| a <= b));
    }
}
